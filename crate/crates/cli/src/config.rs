//! Run configuration: TOML sections with units in every key name.

use std::path::Path;

use isolator_core::devices::{BjtParams, DiodeParams, MosfetParams};
use isolator_core::halfbridge::BridgeStimulus;
use isolator_core::link::{prbs7, BitPattern};
use isolator_core::magnetics::{extract_transformer, BoardStack, CoilGeometry, CoilShape, TransformerModel};
use isolator_core::par::Execution;
use isolator_core::topologies::{HalfBridgeConfig, IsolatorConfig, ReceiverConfig};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub coil: CoilSection,
    pub board: BoardSection,
    pub mosfet: MosfetSection,
    pub bjt: BjtSection,
    pub diode: DiodeSection,
    pub isolator: IsolatorSection,
    pub halfbridge: HalfBridgeSection,
    pub sim: SimSection,
    pub link: LinkSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoilSection {
    pub turns: u32,
    pub trace_width_um: f64,
    pub trace_spacing_um: f64,
    pub inner_side_mm: f64,
    pub copper_thickness_um: f64,
    pub extraction_frequency_mhz: f64,
}

impl Default for CoilSection {
    fn default() -> Self {
        Self {
            turns: 8,
            trace_width_um: 200.0,
            trace_spacing_um: 200.0,
            inner_side_mm: 9.7,
            copper_thickness_um: 35.0,
            extraction_frequency_mhz: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoardSection {
    pub thickness_mm: f64,
    pub dielectric_strength_kv_per_mm: f64,
    pub copper_resistivity_ohm_m: f64,
}

impl Default for BoardSection {
    fn default() -> Self {
        Self {
            thickness_mm: 1.6,
            dielectric_strength_kv_per_mm: 20.0,
            copper_resistivity_ohm_m: 1.68e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MosfetSection {
    pub vth_v: f64,
    pub kn_a_per_v2: f64,
    pub lambda_per_v: f64,
    pub cgs_pf: f64,
    pub cgd_pf: f64,
    pub cds_pf: f64,
}

impl Default for MosfetSection {
    fn default() -> Self {
        Self {
            vth_v: 2.1,
            kn_a_per_v2: 0.08,
            lambda_per_v: 0.01,
            cgs_pf: 50.0,
            cgd_pf: 15.0,
            cds_pf: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BjtSection {
    pub is_a: f64,
    pub beta_f: f64,
    pub vt_mv: f64,
    pub storage_tau_ns: f64,
    pub c_junction_pf: f64,
    pub vce_sat_v: f64,
}

impl Default for BjtSection {
    fn default() -> Self {
        Self {
            is_a: 6.7e-15,
            beta_f: 200.0,
            vt_mv: 25.85,
            storage_tau_ns: 34.5,
            c_junction_pf: 4.0,
            vce_sat_v: 0.1,
        }
    }
}

/// MOSFET body diode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiodeSection {
    pub is_a: f64,
    pub n_ideality: f64,
    pub c_junction_pf: f64,
}

impl Default for DiodeSection {
    fn default() -> Self {
        Self {
            is_a: 1e-12,
            n_ideality: 1.5,
            c_junction_pf: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IsolatorSection {
    pub supply_v: f64,
    pub r_drain_b_ohm: f64,
    /// Absent means R12 is omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_drain_a_ohm: Option<f64>,
    pub r_base_ohm: f64,
    pub r_divider_ohm: f64,
    pub r_pullup_ohm: f64,
    pub rx_supply_v: f64,
}

impl Default for IsolatorSection {
    fn default() -> Self {
        Self {
            supply_v: 5.0,
            r_drain_b_ohm: 1000.0,
            r_drain_a_ohm: None,
            r_base_ohm: 1000.0,
            r_divider_ohm: 1000.0,
            r_pullup_ohm: 10000.0,
            rx_supply_v: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HalfBridgeSection {
    pub r_shared_ohm: f64,
    pub supply_pos_v: f64,
    pub supply_neg_v: f64,
    pub square_frequency_khz: f64,
    pub cycles: usize,
    pub edge_ns: f64,
    /// Hold time per input combination for the truth table.
    pub hold_us: f64,
}

impl Default for HalfBridgeSection {
    fn default() -> Self {
        Self {
            r_shared_ohm: 680.0,
            supply_pos_v: 5.0,
            supply_neg_v: -5.0,
            square_frequency_khz: 50.0,
            cycles: 10,
            edge_ns: 10.0,
            hold_us: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub dt_ns: f64,
    /// Length of the steady-input runs.
    pub t_stop_us: f64,
    /// Start of the measurement window in steady-input runs.
    pub settle_us: f64,
    pub parallel: bool,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            dt_ns: 0.5,
            t_stop_us: 3.0,
            settle_us: 1.0,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkSection {
    pub bit_rate_mbps: f64,
    pub bits: usize,
    pub seed: u8,
    pub rise_fall_ns: f64,
    /// Rates tried by `report` for the maximum verified bit rate.
    pub verify_rates_mbps: Vec<f64>,
    pub verify_bits: usize,
}

impl Default for LinkSection {
    fn default() -> Self {
        Self {
            bit_rate_mbps: 1.0,
            bits: 8 * 127,
            seed: 0x5a,
            rise_fall_ns: 10.0,
            verify_rates_mbps: vec![1.0, 2.0, 4.0],
            verify_bits: 127,
        }
    }
}

fn check(ok: bool, key: &str, reason: &str) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(format!("`{key}` {reason}")))
    }
}

/// Re-labels a core parameter error with the config section it came from.
fn in_section(section: &str) -> impl Fn(isolator_core::Error) -> CliError + '_ {
    move |e| match e {
        isolator_core::Error::InvalidParameter { field, reason } => {
            CliError::Config(format!("invalid parameter `{section}.{field}`: {reason}"))
        }
        other => CliError::from(other),
    }
}

impl RunConfig {
    pub fn execution(&self) -> Execution {
        if self.sim.parallel {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }

    pub fn geometry(&self) -> Result<CoilGeometry, CliError> {
        let c = &self.coil;
        let g = CoilGeometry {
            turns: c.turns,
            trace_width: c.trace_width_um * 1e-6,
            trace_spacing: c.trace_spacing_um * 1e-6,
            inner_side: c.inner_side_mm * 1e-3,
            copper_thickness: c.copper_thickness_um * 1e-6,
            shape: CoilShape::Square,
        };
        g.validate().map_err(in_section("coil"))?;
        Ok(g)
    }

    pub fn board(&self) -> Result<BoardStack, CliError> {
        let b = BoardStack {
            board_thickness: self.board.thickness_mm * 1e-3,
            dielectric_strength: self.board.dielectric_strength_kv_per_mm * 1e6,
            copper_resistivity: self.board.copper_resistivity_ohm_m,
        };
        b.validate().map_err(in_section("board"))?;
        Ok(b)
    }

    pub fn transformer(&self) -> Result<TransformerModel, CliError> {
        let f = self.coil.extraction_frequency_mhz;
        check(f.is_finite() && f > 0.0, "coil.extraction_frequency_mhz", "must be > 0")?;
        extract_transformer(&self.geometry()?, &self.board()?, f * 1e6).map_err(in_section("coil"))
    }

    fn mosfet(&self) -> Result<MosfetParams, CliError> {
        let m = &self.mosfet;
        let d = &self.diode;
        let body = DiodeParams {
            i_s: d.is_a,
            n_ideality: d.n_ideality,
            c_junction: d.c_junction_pf * 1e-12,
        };
        body.validate().map_err(in_section("diode"))?;
        let p = MosfetParams {
            vth: m.vth_v,
            kn: m.kn_a_per_v2,
            lambda: m.lambda_per_v,
            cgs: m.cgs_pf * 1e-12,
            cgd: m.cgd_pf * 1e-12,
            cds: m.cds_pf * 1e-12,
            body_diode: body,
        };
        p.validate().map_err(|e| match e {
            isolator_core::Error::InvalidParameter { field, reason } => {
                CliError::Config(format!("invalid parameter `{field}`: {reason}"))
            }
            other => other.into(),
        })?;
        Ok(p)
    }

    fn bjt(&self) -> Result<BjtParams, CliError> {
        let b = &self.bjt;
        let p = BjtParams {
            i_s: b.is_a,
            beta_f: b.beta_f,
            v_t: b.vt_mv * 1e-3,
            storage_tau: b.storage_tau_ns * 1e-9,
            c_junction: b.c_junction_pf * 1e-12,
            vce_sat: b.vce_sat_v,
        };
        p.validate().map_err(|e| match e {
            isolator_core::Error::InvalidParameter { field, reason } => {
                CliError::Config(format!("invalid parameter `{field}`: {reason}"))
            }
            other => other.into(),
        })?;
        Ok(p)
    }

    fn receiver(&self) -> ReceiverConfig {
        let i = &self.isolator;
        ReceiverConfig {
            r_base: i.r_base_ohm,
            r_divider: i.r_divider_ohm,
            r_pullup: i.r_pullup_ohm,
            supply: i.rx_supply_v,
        }
    }

    pub fn isolator(&self) -> Result<IsolatorConfig, CliError> {
        let i = &self.isolator;
        let cfg = IsolatorConfig {
            transformer: self.transformer()?,
            r_drain_a: i.r_drain_a_ohm,
            r_drain_b: i.r_drain_b_ohm,
            receiver: self.receiver(),
            supply: i.supply_v,
            mosfet: self.mosfet()?,
            bjt: self.bjt()?,
        };
        cfg.validate().map_err(in_section("isolator"))?;
        Ok(cfg)
    }

    pub fn halfbridge(&self) -> Result<HalfBridgeConfig, CliError> {
        let t = self.transformer()?;
        let h = &self.halfbridge;
        let cfg = HalfBridgeConfig {
            transformer_low: t,
            transformer_high: t,
            r_shared: h.r_shared_ohm,
            supply_pos: h.supply_pos_v,
            supply_neg: h.supply_neg_v,
            receiver: self.receiver(),
            mosfet: self.mosfet()?,
            bjt: self.bjt()?,
        };
        cfg.validate().map_err(in_section("halfbridge"))?;
        Ok(cfg)
    }

    pub fn square_wave(&self) -> Result<BridgeStimulus, CliError> {
        let h = &self.halfbridge;
        check(h.cycles >= 1, "halfbridge.cycles", "must be >= 1")?;
        BridgeStimulus::complementary(h.square_frequency_khz * 1e3, h.cycles, h.edge_ns * 1e-9)
            .map_err(in_section("halfbridge"))
    }

    pub fn dt(&self) -> Result<f64, CliError> {
        let dt = self.sim.dt_ns;
        check(dt.is_finite() && dt > 0.0, "sim.dt_ns", "must be > 0")?;
        Ok(dt * 1e-9)
    }

    /// Steady-run length and measurement window start, seconds.
    pub fn steady_window(&self) -> Result<(f64, f64), CliError> {
        let (settle, stop) = (self.sim.settle_us, self.sim.t_stop_us);
        check(settle.is_finite() && settle >= 0.0, "sim.settle_us", "must be >= 0")?;
        check(stop.is_finite() && stop > settle, "sim.t_stop_us", "must exceed sim.settle_us")?;
        Ok((settle * 1e-6, stop * 1e-6))
    }

    pub fn hold(&self) -> Result<f64, CliError> {
        let h = self.halfbridge.hold_us;
        check(h.is_finite() && h > 0.0, "halfbridge.hold_us", "must be > 0")?;
        Ok(h * 1e-6)
    }

    /// PRBS7 pattern at `bit_rate_mbps` with `bits` bits.
    pub fn pattern(&self, bit_rate_mbps: f64, bits: usize) -> Result<BitPattern, CliError> {
        check(bit_rate_mbps.is_finite() && bit_rate_mbps > 0.0, "link.bit_rate_mbps", "must be > 0")?;
        check(bits >= 2, "link.bits", "must be >= 2")?;
        check(self.link.seed & 0x7f != 0, "link.seed", "must have a non-zero low 7 bits")?;
        let mut p = BitPattern::new(prbs7(self.link.seed, bits).map_err(in_section("link"))?, bit_rate_mbps * 1e6);
        p.rise_fall = self.link.rise_fall_ns * 1e-9;
        p.validate().map_err(in_section("link"))?;
        Ok(p)
    }
}

/// Reads `path` into a TOML table, or an empty table when absent.
pub fn load_table(path: Option<&Path>) -> Result<Table, CliError> {
    match path {
        None => Ok(Table::new()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            text.parse::<Table>().map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
        }
    }
}

/// Parses a flag value as a TOML literal; bare words become strings.
fn parse_value(raw: &str) -> Value {
    let raw = raw.trim();
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.to_string())),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// Splits `section.key=value`.
pub fn split_assignment(arg: &str) -> Result<(String, String, String), CliError> {
    let (path, value) = arg
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("expected section.key=value, got `{arg}`")))?;
    let (section, key) = path
        .trim()
        .split_once('.')
        .ok_or_else(|| CliError::Usage(format!("expected section.key, got `{path}`")))?;
    if section.is_empty() || key.is_empty() || key.contains('.') {
        return Err(CliError::Usage(format!("expected section.key, got `{path}`")));
    }
    Ok((section.to_string(), key.to_string(), value.to_string()))
}

/// Sets `section.key` in `table`. The value `none` removes the key.
pub fn apply_override(table: &mut Table, section: &str, key: &str, raw: &str) -> Result<(), CliError> {
    let entry = table
        .entry(section.to_string())
        .or_insert_with(|| Value::Table(Table::new()));
    let Value::Table(sec) = entry else {
        return Err(CliError::Config(format!("`{section}` is not a section")));
    };
    if raw.trim() == "none" {
        sec.remove(key);
    } else {
        sec.insert(key.to_string(), parse_value(raw));
    }
    Ok(())
}

pub fn from_table(table: Table) -> Result<RunConfig, CliError> {
    RunConfig::deserialize(Value::Table(table)).map_err(|e| CliError::Config(e.to_string()))
}
