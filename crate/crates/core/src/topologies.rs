//! Netlists for the isolator and the half-bridge variant.
//!
//! Isolator nodes: the logic input `dx` drives the oscillator supply rail
//! `txs` through a 10 Ω output stage. `d1`/`d2` are the cross-coupled drains
//! across the primary. On the receive side the secondary's dotted end `x`
//! feeds the divider midpoint `p`, and `dy` is the open-collector output
//! pulled up to `vrx`.

use serde::{Deserialize, Serialize};

use crate::devices::{BjtParams, MosfetParams};
use crate::engine::{Circuit, NodeId, Stimulus};
use crate::error::{require_positive, Error, Result};
use crate::magnetics::{extract_transformer, BoardStack, CoilGeometry, TransformerModel};

pub mod nodes {
    pub const DX: &str = "dx";
    pub const TX_SUPPLY: &str = "txs";
    pub const D1: &str = "d1";
    pub const D2: &str = "d2";
    pub const RX_WINDING: &str = "x";
    pub const RX_BASE: &str = "p";
    pub const DY: &str = "dy";
    pub const RX_SUPPLY: &str = "vrx";

    pub const A: &str = "a";
    pub const B: &str = "b";
    pub const X1: &str = "x1";
    pub const Y1: &str = "y1";
    pub const X2: &str = "x2";
    pub const Y2: &str = "y2";
    pub const DLS: &str = "dls";
    pub const DHS: &str = "dhs";
    pub const VTX: &str = "v(VTX)";
}

/// Channel names of the supply currents.
pub mod supplies {
    pub const TX: &str = "i(VDX)";
    pub const RX: &str = "i(VRX)";
    pub const A: &str = "i(VA)";
    pub const B: &str = "i(VB)";
}

/// Output impedance of the logic stage driving the oscillator rail.
pub const DRIVER_OHMS: f64 = 10.0;

/// Imbalance injected into one drain on the first step.
pub const STARTUP_KICK_AMPS: f64 = 1e-6;

/// Transformer of the reference coil pair on 1.6 mm FR-4, extracted at 1 MHz.
pub fn reference_transformer() -> TransformerModel {
    extract_transformer(&CoilGeometry::prototype(), &BoardStack::fr4_1mm6(), 1e6)
        .expect("reference geometry is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReceiverConfig {
    /// Winding to divider midpoint (R18).
    pub r_base: f64,
    /// Divider midpoint to ground (R17).
    pub r_divider: f64,
    /// Output pull-up (R16).
    pub r_pullup: f64,
    pub supply: f64,
}

impl Default for ReceiverConfig {
    fn default() -> Self {
        Self {
            r_base: 1e3,
            r_divider: 1e3,
            r_pullup: 10e3,
            supply: 5.0,
        }
    }
}

impl ReceiverConfig {
    pub fn validate(&self) -> Result<()> {
        require_positive("r_base", self.r_base)?;
        require_positive("r_divider", self.r_divider)?;
        require_positive("r_pullup", self.r_pullup)?;
        require_positive("supply", self.supply)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsolatorConfig {
    pub transformer: TransformerModel,
    /// Drain resistor to `d2` (R12); absent by default.
    pub r_drain_a: Option<f64>,
    /// Drain resistor to `d1` (R9).
    pub r_drain_b: f64,
    pub receiver: ReceiverConfig,
    pub supply: f64,
    pub mosfet: MosfetParams,
    pub bjt: BjtParams,
}

impl Default for IsolatorConfig {
    fn default() -> Self {
        Self {
            transformer: reference_transformer(),
            r_drain_a: None,
            r_drain_b: 1e3,
            receiver: ReceiverConfig::default(),
            supply: 5.0,
            mosfet: MosfetParams::default(),
            bjt: BjtParams::default(),
        }
    }
}

impl IsolatorConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.r_drain_a {
            require_positive("r_drain_a", r)?;
        }
        require_positive("r_drain_b", self.r_drain_b)?;
        require_positive("supply", self.supply)?;
        self.receiver.validate()?;
        self.mosfet.validate()?;
        self.bjt.validate()?;
        check_transformer(&self.transformer)
    }
}

fn check_transformer(t: &TransformerModel) -> Result<()> {
    if !(t.coupling_k.abs() < 1.0) {
        return Err(Error::invalid(
            "transformer.coupling_k",
            format!("must be below 1, got {}", t.coupling_k),
        ));
    }
    t.validate()
}

/// Logic levels of `input` scaled to the supply: 0 → 0 V, 1 → `supply`.
pub fn logic_level(bit: bool, supply: f64) -> Stimulus {
    Stimulus::constant(if bit { supply } else { 0.0 })
}

/// Adds a cross-coupled pair with drains `d1`, `d2` and sources at `common`,
/// fed from `rail` through the optional drain resistors.
#[allow(clippy::too_many_arguments)]
fn add_oscillator(
    c: &mut Circuit,
    names: [&str; 2],
    rail: NodeId,
    common: NodeId,
    (d1, d2): (NodeId, NodeId),
    r_d1: Option<f64>,
    r_d2: Option<f64>,
    mosfet: &MosfetParams,
) {
    if let Some(r) = r_d1 {
        c.resistor("R9", rail, d1, r);
    }
    if let Some(r) = r_d2 {
        c.resistor("R12", rail, d2, r);
    }
    c.mosfet(names[0], d1, d2, common, *mosfet);
    c.mosfet(names[1], d2, d1, common, *mosfet);
}

/// Adds a full-wave receiver on `winding` producing `out`; both receive
/// transistors are NPN, one for each polarity.
fn add_receiver(c: &mut Circuit, tag: &str, winding: NodeId, out: NodeId, cfg: &ReceiverConfig, bjt: &BjtParams) -> NodeId {
    let gnd = NodeId::GROUND;
    let p = c.node(&format!("{}{tag}", nodes::RX_BASE));
    let rail = c.node(&format!("{}{tag}", nodes::RX_SUPPLY));
    c.resistor(&format!("Rb{tag}"), winding, p, cfg.r_base);
    c.resistor(&format!("Rd{tag}"), p, gnd, cfg.r_divider);
    c.bjt(&format!("Qp{tag}"), out, p, gnd, *bjt);
    c.bjt(&format!("Qn{tag}"), out, gnd, p, *bjt);
    c.resistor(&format!("Rp{tag}"), rail, out, cfg.r_pullup);
    rail
}

/// Transmitter, transformer and receiver with `input` driving `dx`.
pub fn build_isolator(cfg: &IsolatorConfig, input: Stimulus) -> Result<Circuit> {
    cfg.validate()?;
    let mut c = Circuit::new();
    let gnd = NodeId::GROUND;
    let dx = c.node(nodes::DX);
    let txs = c.node(nodes::TX_SUPPLY);
    let d1 = c.node(nodes::D1);
    let d2 = c.node(nodes::D2);
    let x = c.node(nodes::RX_WINDING);
    let dy = c.node(nodes::DY);

    c.voltage_source("VDX", dx, gnd, input, 0.0);
    c.resistor("Rdrv", dx, txs, DRIVER_OHMS);
    add_oscillator(&mut c, ["Q5", "Q6"], txs, gnd, (d1, d2), Some(cfg.r_drain_b), cfg.r_drain_a, &cfg.mosfet);
    c.coupled_pair("T1", (d1, d2), (x, gnd), cfg.transformer);

    let rail = add_receiver(&mut c, "", x, dy, &cfg.receiver, &cfg.bjt);
    c.voltage_source("VRX", rail, gnd, Stimulus::constant(cfg.receiver.supply), 0.0);
    c.set_kick(d1, STARTUP_KICK_AMPS);
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfBridgeConfig {
    /// Low-side channel coils (oscillator winding first).
    pub transformer_low: TransformerModel,
    /// High-side channel coils.
    pub transformer_high: TransformerModel,
    /// Feed resistor between the two oscillators (R21).
    pub r_shared: f64,
    /// V_TX with only B high.
    pub supply_pos: f64,
    /// V_TX with only A high.
    pub supply_neg: f64,
    pub receiver: ReceiverConfig,
    pub mosfet: MosfetParams,
    pub bjt: BjtParams,
}

impl Default for HalfBridgeConfig {
    fn default() -> Self {
        let t = reference_transformer();
        Self {
            transformer_low: t,
            transformer_high: t,
            r_shared: 680.0,
            supply_pos: 5.0,
            supply_neg: -5.0,
            receiver: ReceiverConfig::default(),
            mosfet: MosfetParams::default(),
            bjt: BjtParams::default(),
        }
    }
}

impl HalfBridgeConfig {
    pub fn validate(&self) -> Result<()> {
        require_positive("r_shared", self.r_shared)?;
        require_positive("supply_pos", self.supply_pos)?;
        if !(self.supply_neg < 0.0) {
            return Err(Error::invalid("supply_neg", "must be negative"));
        }
        self.receiver.validate()?;
        self.mosfet.validate()?;
        self.bjt.validate()?;
        check_transformer(&self.transformer_low)?;
        check_transformer(&self.transformer_high)
    }
}

/// Two stacked oscillators between inputs `a` and `b`.
///
/// Pair 1 has its sources on `a` and is supplied from `b` through the body
/// diodes of pair 2 and R21, so it runs when `b` is high; it drives the
/// low-side receiver (`dls`). Pair 2 mirrors this for `a` high and drives
/// `dhs`.
pub fn build_halfbridge(cfg: &HalfBridgeConfig, a: Stimulus, b: Stimulus) -> Result<Circuit> {
    cfg.validate()?;
    let mut c = Circuit::new();
    let gnd = NodeId::GROUND;
    let na = c.node(nodes::A);
    let nb = c.node(nodes::B);
    let x1 = c.node(nodes::X1);
    let y1 = c.node(nodes::Y1);
    let x2 = c.node(nodes::X2);
    let y2 = c.node(nodes::Y2);
    c.voltage_source("VA", na, gnd, a, DRIVER_OHMS);
    c.voltage_source("VB", nb, gnd, b, DRIVER_OHMS);

    add_oscillator(&mut c, ["Q14", "Q15"], na, na, (x1, y1), None, None, &cfg.mosfet);
    add_oscillator(&mut c, ["Q12", "Q13"], nb, nb, (x2, y2), None, None, &cfg.mosfet);
    c.resistor("R21", x1, x2, cfg.r_shared);

    let wl = c.node("xl");
    let wh = c.node("xh");
    c.coupled_pair("T1", (x1, y1), (wl, gnd), cfg.transformer_low);
    c.coupled_pair("T2", (x2, y2), (wh, gnd), cfg.transformer_high);

    let dls = c.node(nodes::DLS);
    let dhs = c.node(nodes::DHS);
    let rail_l = add_receiver(&mut c, "ls", wl, dls, &cfg.receiver, &cfg.bjt);
    let rail_h = add_receiver(&mut c, "hs", wh, dhs, &cfg.receiver, &cfg.bjt);
    c.voltage_source("VLS", rail_l, gnd, Stimulus::constant(cfg.receiver.supply), 0.0);
    c.voltage_source("VHS", rail_h, gnd, Stimulus::constant(cfg.receiver.supply), 0.0);
    c.set_kick(x1, STARTUP_KICK_AMPS);
    Ok(c)
}
