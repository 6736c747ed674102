//! Behavioral large-signal device models: a level-1 N-channel MOSFET with body
//! diode, an NPN BJT with a single-pole saturation-storage state, and a
//! Shockley junction diode.
//!
//! Public functions return terminal currents; the `*_eval` variants used by
//! the simulator also return analytic derivatives.

use serde::{Deserialize, Serialize};

use crate::error::{require_non_negative, require_positive, Error, Result};

/// Thermal voltage at 300 K.
pub const THERMAL_VOLTAGE: f64 = 0.02585;

/// Diode exponentials continue linearly above this forward voltage.
pub const DIODE_EXP_LIMIT: f64 = 1.0;

/// Collector drive per unit of stored-charge current relative to base
/// current. The collector stays held while `beta_f·(ib + RELEASE_GAIN·Q/tau)`
/// exceeds the current the circuit asks for.
pub const RELEASE_GAIN: f64 = 10.0;

const BJT_EXP_LIMIT: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiodeParams {
    pub i_s: f64,
    pub n_ideality: f64,
    pub c_junction: f64,
}

impl Default for DiodeParams {
    fn default() -> Self {
        Self {
            i_s: 1e-12,
            n_ideality: 1.5,
            c_junction: 10e-12,
        }
    }
}

impl DiodeParams {
    pub fn validate(&self) -> Result<()> {
        require_positive("diode.i_s", self.i_s)?;
        if !(self.n_ideality >= 1.0) {
            return Err(Error::invalid("diode.n_ideality", "must be >= 1"));
        }
        require_non_negative("diode.c_junction", self.c_junction)
    }
}

/// Small-signal N-MOSFET. Capacitances are large-signal averages over the
/// low drain-source bias an oscillator swings through, which is well above the
/// datasheet figures quoted at 25 V.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MosfetParams {
    pub vth: f64,
    pub kn: f64,
    pub lambda: f64,
    pub cgs: f64,
    pub cgd: f64,
    pub cds: f64,
    pub body_diode: DiodeParams,
}

impl Default for MosfetParams {
    fn default() -> Self {
        Self {
            vth: 2.1,
            kn: 0.08,
            lambda: 0.01,
            cgs: 50e-12,
            cgd: 15e-12,
            cds: 30e-12,
            body_diode: DiodeParams::default(),
        }
    }
}

impl MosfetParams {
    pub fn validate(&self) -> Result<()> {
        require_positive("mosfet.vth", self.vth)?;
        require_positive("mosfet.kn", self.kn)?;
        require_non_negative("mosfet.lambda", self.lambda)?;
        require_non_negative("mosfet.cgs", self.cgs)?;
        require_non_negative("mosfet.cgd", self.cgd)?;
        require_non_negative("mosfet.cds", self.cds)?;
        self.body_diode.validate()
    }
}

/// General-purpose NPN.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BjtParams {
    pub i_s: f64,
    pub beta_f: f64,
    pub v_t: f64,
    /// Excess-charge time constant. The default gives about 100 ns of
    /// collector hold after a 1 mA saturated device (forced gain 10) loses its
    /// base drive.
    pub storage_tau: f64,
    /// Applied to both the base-emitter and base-collector junctions.
    pub c_junction: f64,
    pub vce_sat: f64,
}

impl Default for BjtParams {
    fn default() -> Self {
        Self {
            i_s: 6.7e-15,
            beta_f: 200.0,
            v_t: THERMAL_VOLTAGE,
            storage_tau: 34.5e-9,
            c_junction: 4e-12,
            vce_sat: 0.1,
        }
    }
}

impl BjtParams {
    pub fn validate(&self) -> Result<()> {
        require_positive("bjt.i_s", self.i_s)?;
        if !(self.beta_f > 1.0) {
            return Err(Error::invalid("bjt.beta_f", "must be > 1"));
        }
        require_positive("bjt.v_t", self.v_t)?;
        require_positive("bjt.storage_tau", self.storage_tau)?;
        require_non_negative("bjt.c_junction", self.c_junction)?;
        require_positive("bjt.vce_sat", self.vce_sat)
    }
}

/// `exp(v / nvt)` continued linearly above `limit`; returns value and slope.
fn limited_exp(v: f64, nvt: f64, limit: f64) -> (f64, f64) {
    if v <= limit {
        let e = (v / nvt).exp();
        (e, e / nvt)
    } else {
        let e = (limit / nvt).exp();
        (e * (1.0 + (v - limit) / nvt), e / nvt)
    }
}

/// Diode current and conductance.
pub fn diode_eval(p: &DiodeParams, v: f64) -> (f64, f64) {
    let (e, de) = limited_exp(v, p.n_ideality * THERMAL_VOLTAGE, DIODE_EXP_LIMIT);
    (p.i_s * (e - 1.0), p.i_s * de)
}

/// Shockley diode current, anode to cathode.
pub fn diode_i(p: &DiodeParams, v: f64) -> f64 {
    diode_eval(p, v).0
}

/// MOSFET drain current with partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MosfetEval {
    pub ids: f64,
    /// ∂ids/∂vgs
    pub gm: f64,
    /// ∂ids/∂vds
    pub gds: f64,
}

/// Forward channel current for vds >= 0.
fn channel(p: &MosfetParams, vgs: f64, vds: f64) -> (f64, f64, f64) {
    let vov = vgs - p.vth;
    if vov <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let clm = 1.0 + p.lambda * vds;
    if vds < vov {
        let core = vov * vds - 0.5 * vds * vds;
        let i = p.kn * core * clm;
        let gm = p.kn * vds * clm;
        let gds = p.kn * (vov - vds) * clm + p.kn * core * p.lambda;
        (i, gm, gds)
    } else {
        let core = 0.5 * vov * vov;
        (p.kn * core * clm, p.kn * vov * clm, p.kn * core * p.lambda)
    }
}

/// Square-law drain current plus body diode. For vds < 0 the channel runs
/// with source and drain exchanged and the body diode conducts from source to
/// drain.
pub fn mosfet_eval(p: &MosfetParams, vgs: f64, vds: f64) -> MosfetEval {
    if vds >= 0.0 {
        let (ids, gm, gds) = channel(p, vgs, vds);
        return MosfetEval { ids, gm, gds };
    }
    let (ir, gmr, gdsr) = channel(p, vgs - vds, -vds);
    let (id, gd) = diode_eval(&p.body_diode, -vds);
    MosfetEval {
        ids: -ir - id,
        gm: -gmr,
        gds: gmr + gdsr + gd,
    }
}

/// Drain-to-source current.
pub fn mosfet_ids(p: &MosfetParams, vgs: f64, vds: f64) -> f64 {
    mosfet_eval(p, vgs, vds).ids
}

/// Static BJT operating point with no stored charge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BjtOperatingPoint {
    pub ic: f64,
    pub ib: f64,
    /// vce is below the saturation floor.
    pub saturated: bool,
}

/// BJT currents with partial derivatives. `z` is stored charge over
/// `storage_tau` (an equivalent current).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BjtEval {
    pub ib: f64,
    pub dib_dvbe: f64,
    pub ic: f64,
    pub dic_dvbe: f64,
    pub dic_dvce: f64,
    pub dic_dz: f64,
}

/// Collector-emitter shaping: tanh knee at half the saturation voltage, with
/// reverse operation scaled down by the forward gain.
fn vce_shape(p: &BjtParams, vce: f64) -> (f64, f64) {
    let knee = 0.5 * p.vce_sat;
    let t = (vce / knee).tanh();
    let dt = (1.0 - t * t) / knee;
    if vce >= 0.0 {
        (t, dt)
    } else {
        (t / p.beta_f, dt / p.beta_f)
    }
}

pub fn bjt_eval(p: &BjtParams, vbe: f64, vce: f64, z: f64) -> BjtEval {
    let (e, de) = limited_exp(vbe, p.v_t, BJT_EXP_LIMIT);
    let ib = p.i_s / p.beta_f * (e - 1.0);
    let dib = p.i_s / p.beta_f * de;
    let drive = p.beta_f * (ib + RELEASE_GAIN * z);
    let (s, ds) = vce_shape(p, vce);
    BjtEval {
        ib,
        dib_dvbe: dib,
        ic: drive * s,
        dic_dvbe: p.beta_f * dib * s,
        dic_dvce: drive * ds,
        dic_dz: p.beta_f * RELEASE_GAIN * s,
    }
}

/// Ebers–Moll forward collector current `i_s·exp(vbe/v_t)` with the collector
/// knee below `vce_sat`.
pub fn bjt_ic(p: &BjtParams, vbe: f64, vce: f64) -> BjtOperatingPoint {
    let ev = bjt_eval(p, vbe, vce, 0.0);
    BjtOperatingPoint {
        ic: ev.ic,
        ib: ev.ib,
        saturated: vce < p.vce_sat,
    }
}

/// Excess base charge in coulombs.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
pub struct StorageCharge(pub f64);

impl StorageCharge {
    /// The same state expressed as an equivalent current, Q / tau.
    pub fn as_current(self, p: &BjtParams) -> f64 {
        self.0 / p.storage_tau
    }
}

/// One explicit step of the excess-charge balance
/// `dQ/dt = ib - ic/beta_f - Q/tau`, floored at zero.
///
/// Charge accumulates only while the base supplies more than the collector
/// current needs, and drains through both recombination and the collector
/// current it keeps flowing once base drive is gone.
pub fn bjt_storage_step(p: &BjtParams, q: StorageCharge, ib: f64, ic: f64, dt: f64) -> StorageCharge {
    let dq = ib - ic / p.beta_f - q.0 / p.storage_tau;
    StorageCharge((q.0 + dt * dq).max(0.0))
}

/// Whether the device can still sink `ic` given base current and stored
/// charge.
pub fn collector_held(p: &BjtParams, q: StorageCharge, ib: f64, ic: f64) -> bool {
    p.beta_f * (ib + RELEASE_GAIN * q.as_current(p)) >= ic
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TankTopology {
    CrossCoupledPair,
}

/// Capacitance the inductor sees when it spans the two drains of a
/// cross-coupled pair.
///
/// Each drain carries `cds` of its own device and `cgs` of the other device to
/// ground; in differential mode those appear in series, giving half. The two
/// `cgd` capacitors sit directly between the antiphase drains and count in
/// full. Result: `(cds + cgs) / 2 + 2·cgd`.
pub fn effective_tank_capacitance(p: &MosfetParams, topology: TankTopology) -> f64 {
    match topology {
        TankTopology::CrossCoupledPair => 0.5 * (p.cds + p.cgs) + 2.0 * p.cgd,
    }
}

/// 1 / (2π·sqrt(L·C)).
pub fn resonant_frequency(inductance: f64, capacitance: f64) -> f64 {
    1.0 / (2.0 * std::f64::consts::PI * (inductance * capacitance).sqrt())
}
