//! Modified nodal analysis.
//!
//! The circuit is written as `f(x, t) + d/dt q(x) = 0`, where `x` holds the
//! node voltages, winding currents, source currents and one stored-charge
//! state per BJT. Every charge and flux term here is linear, so `dq/dx` is a
//! constant matrix built once at assembly; devices only contribute to `f`.

use nalgebra::DMatrix;

use super::circuit::{Circuit, ElementKind, NodeId, Stimulus};
use crate::devices::{self, BjtParams, DiodeParams, MosfetParams};
use crate::error::{require_non_negative, require_positive, Error, Result};

/// Capacitance added to ground at nodes with no capacitor attached.
pub const FLOATING_NODE_CAP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnknownKind {
    NodeVoltage,
    WindingCurrent,
    SourceCurrent,
    /// BJT stored charge expressed as Q / storage_tau, in amps.
    StoredCharge,
}

impl UnknownKind {
    /// Rows whose equation has a time derivative and is integrated with the
    /// trapezoidal rule. The rest are solved with backward Euler (algebraic
    /// rows reduce to `f = 0`).
    pub(crate) fn trapezoidal(self) -> bool {
        matches!(self, UnknownKind::NodeVoltage | UnknownKind::WindingCurrent)
    }
}

type Slot = Option<usize>;

#[derive(Debug, Clone)]
enum Stamp {
    Conductance {
        a: Slot,
        b: Slot,
        g: f64,
    },
    Winding {
        a: Slot,
        b: Slot,
        row: usize,
        r: f64,
    },
    Source {
        pos: Slot,
        neg: Slot,
        row: usize,
        wave: Stimulus,
        r: f64,
    },
    Mosfet {
        d: Slot,
        g: Slot,
        s: Slot,
        params: MosfetParams,
    },
    Bjt {
        c: Slot,
        b: Slot,
        e: Slot,
        row: usize,
        params: BjtParams,
    },
    Diode {
        a: Slot,
        k: Slot,
        params: DiodeParams,
    },
}

/// A probe reported alongside the unknowns.
#[derive(Debug, Clone)]
pub(crate) enum Probe {
    Unknown(usize),
    /// Body-diode current (source → drain) of a MOSFET.
    BodyDiode { d: Slot, s: Slot, params: DiodeParams },
    /// Stored charge in coulombs.
    Charge { row: usize, tau: f64 },
}

/// Assembled equations for one circuit.
#[derive(Debug, Clone)]
pub struct System {
    names: Vec<String>,
    kinds: Vec<UnknownKind>,
    trapezoidal: Vec<bool>,
    c_matrix: DMatrix<f64>,
    stamps: Vec<Stamp>,
    kick: Option<(usize, f64)>,
    breakpoints: Vec<f64>,
    probes: Vec<(String, Probe)>,
}

fn slot(n: NodeId) -> Slot {
    if n.is_ground() {
        None
    } else {
        Some(n.index() - 1)
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, i: usize) -> usize {
        let mut r = i;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut i = i;
        while self.0[i] != r {
            let next = self.0[i];
            self.0[i] = r;
            i = next;
        }
        r
    }
    fn join(&mut self, a: NodeId, b: NodeId) {
        let (ra, rb) = (self.find(a.index()), self.find(b.index()));
        self.0[ra] = rb;
    }
}

fn add_cap(c: &mut DMatrix<f64>, a: Slot, b: Slot, farads: f64) {
    if let Some(i) = a {
        c[(i, i)] += farads;
    }
    if let Some(j) = b {
        c[(j, j)] += farads;
    }
    if let (Some(i), Some(j)) = (a, b) {
        c[(i, j)] -= farads;
        c[(j, i)] -= farads;
    }
}

/// Validates the circuit and builds its equations.
pub fn assemble(circuit: &Circuit) -> Result<System> {
    let n_nodes = circuit.node_count() - 1;
    let mut names: Vec<String> = (1..=n_nodes)
        .map(|i| format!("v({})", circuit.node_name(NodeId(i))))
        .collect();
    let mut kinds = vec![UnknownKind::NodeVoltage; n_nodes];
    let mut dc = UnionFind((0..circuit.node_count()).collect());
    let mut has_cap = vec![false; circuit.node_count()];
    let mut caps: Vec<(Slot, Slot, f64)> = Vec::new();
    let mut fluxes: Vec<(usize, usize, f64)> = Vec::new();
    let mut stamps = Vec::new();
    let mut probes: Vec<(String, Probe)> = Vec::new();
    let mut breakpoints = Vec::new();

    let new_unknown = |names: &mut Vec<String>, kinds: &mut Vec<UnknownKind>, name: String, kind| {
        names.push(name);
        kinds.push(kind);
        names.len() - 1
    };
    let mark_cap = |has_cap: &mut Vec<bool>, nodes: &[NodeId], farads: f64| {
        if farads > 0.0 {
            for n in nodes {
                has_cap[n.index()] = true;
            }
        }
    };

    for el in circuit.elements() {
        let name = &el.name;
        match &el.kind {
            ElementKind::Resistor { a, b, ohms } => {
                require_positive("resistor.ohms", *ohms)?;
                dc.join(*a, *b);
                stamps.push(Stamp::Conductance {
                    a: slot(*a),
                    b: slot(*b),
                    g: 1.0 / ohms,
                });
            }
            ElementKind::Capacitor { a, b, farads } => {
                require_non_negative("capacitor.farads", *farads)?;
                mark_cap(&mut has_cap, &[*a, *b], *farads);
                caps.push((slot(*a), slot(*b), *farads));
            }
            ElementKind::Inductor {
                a,
                b,
                henries,
                series_ohms,
            } => {
                require_positive("inductor.henries", *henries)?;
                require_non_negative("inductor.series_ohms", *series_ohms)?;
                dc.join(*a, *b);
                let row = new_unknown(&mut names, &mut kinds, format!("i({name})"), UnknownKind::WindingCurrent);
                fluxes.push((row, row, *henries));
                stamps.push(Stamp::Winding {
                    a: slot(*a),
                    b: slot(*b),
                    row,
                    r: *series_ohms,
                });
            }
            ElementKind::CoupledPair {
                primary,
                secondary,
                model,
            } => {
                require_positive("l_primary", model.l_primary)?;
                require_positive("l_secondary", model.l_secondary)?;
                require_non_negative("r_series_primary", model.r_series_primary)?;
                require_non_negative("r_series_secondary", model.r_series_secondary)?;
                let limit = (model.l_primary * model.l_secondary).sqrt();
                if !(model.mutual.abs() < limit) {
                    return Err(Error::NonPassiveCoupling {
                        element: name.clone(),
                        mutual: model.mutual,
                        limit,
                    });
                }
                dc.join(primary.0, primary.1);
                dc.join(secondary.0, secondary.1);
                let rp = new_unknown(&mut names, &mut kinds, format!("i({name}.p)"), UnknownKind::WindingCurrent);
                let rs = new_unknown(&mut names, &mut kinds, format!("i({name}.s)"), UnknownKind::WindingCurrent);
                fluxes.push((rp, rp, model.l_primary));
                fluxes.push((rs, rs, model.l_secondary));
                fluxes.push((rp, rs, model.mutual));
                fluxes.push((rs, rp, model.mutual));
                stamps.push(Stamp::Winding {
                    a: slot(primary.0),
                    b: slot(primary.1),
                    row: rp,
                    r: model.r_series_primary,
                });
                stamps.push(Stamp::Winding {
                    a: slot(secondary.0),
                    b: slot(secondary.1),
                    row: rs,
                    r: model.r_series_secondary,
                });
            }
            ElementKind::VoltageSource {
                pos,
                neg,
                wave,
                series_ohms,
            } => {
                require_non_negative("source.series_ohms", *series_ohms)?;
                dc.join(*pos, *neg);
                let row = new_unknown(&mut names, &mut kinds, format!("i({name})"), UnknownKind::SourceCurrent);
                breakpoints.extend(wave.breakpoints());
                stamps.push(Stamp::Source {
                    pos: slot(*pos),
                    neg: slot(*neg),
                    row,
                    wave: wave.clone(),
                    r: *series_ohms,
                });
            }
            ElementKind::Mosfet {
                drain,
                gate,
                source,
                params,
            } => {
                params.validate()?;
                dc.join(*drain, *source);
                mark_cap(&mut has_cap, &[*gate, *source], params.cgs);
                mark_cap(&mut has_cap, &[*gate, *drain], params.cgd);
                mark_cap(&mut has_cap, &[*drain, *source], params.cds);
                caps.push((slot(*gate), slot(*source), params.cgs));
                caps.push((slot(*gate), slot(*drain), params.cgd));
                caps.push((slot(*drain), slot(*source), params.cds));
                stamps.push(Stamp::Mosfet {
                    d: slot(*drain),
                    g: slot(*gate),
                    s: slot(*source),
                    params: *params,
                });
                probes.push((
                    format!("ibd({name})"),
                    Probe::BodyDiode {
                        d: slot(*drain),
                        s: slot(*source),
                        params: params.body_diode,
                    },
                ));
            }
            ElementKind::Bjt {
                collector,
                base,
                emitter,
                params,
            } => {
                params.validate()?;
                dc.join(*base, *emitter);
                dc.join(*collector, *emitter);
                mark_cap(&mut has_cap, &[*base, *emitter, *collector], params.c_junction);
                caps.push((slot(*base), slot(*emitter), params.c_junction));
                caps.push((slot(*base), slot(*collector), params.c_junction));
                let row = new_unknown(&mut names, &mut kinds, format!("z({name})"), UnknownKind::StoredCharge);
                fluxes.push((row, row, params.storage_tau));
                stamps.push(Stamp::Bjt {
                    c: slot(*collector),
                    b: slot(*base),
                    e: slot(*emitter),
                    row,
                    params: *params,
                });
                probes.push((
                    format!("q({name})"),
                    Probe::Charge {
                        row,
                        tau: params.storage_tau,
                    },
                ));
            }
            ElementKind::Diode {
                anode,
                cathode,
                params,
            } => {
                params.validate()?;
                dc.join(*anode, *cathode);
                mark_cap(&mut has_cap, &[*anode, *cathode], params.c_junction);
                caps.push((slot(*anode), slot(*cathode), params.c_junction));
                stamps.push(Stamp::Diode {
                    a: slot(*anode),
                    k: slot(*cathode),
                    params: *params,
                });
            }
        }
    }

    let ground = dc.find(0);
    for i in 1..circuit.node_count() {
        if dc.find(i) != ground {
            return Err(Error::FloatingNode {
                node: circuit.node_name(NodeId(i)).to_string(),
            });
        }
    }

    let size = names.len();
    let mut c_matrix = DMatrix::zeros(size, size);
    for (a, b, farads) in caps {
        add_cap(&mut c_matrix, a, b, farads);
    }
    let mut trapezoidal: Vec<bool> = kinds.iter().map(|k| k.trapezoidal()).collect();
    for i in 1..circuit.node_count() {
        if !has_cap[i] {
            add_cap(&mut c_matrix, Some(i - 1), None, FLOATING_NODE_CAP);
            // the regularizing capacitor is stiff next to small resistances and
            // would ring under the trapezoidal rule
            trapezoidal[i - 1] = false;
        }
    }
    for (r, c, l) in fluxes {
        c_matrix[(r, c)] += l;
    }

    let mut all_probes: Vec<(String, Probe)> =
        (0..size).filter(|&i| kinds[i] != UnknownKind::StoredCharge).map(|i| (names[i].clone(), Probe::Unknown(i))).collect();
    all_probes.extend(probes);

    breakpoints.retain(|t| *t > 0.0);
    breakpoints.sort_by(f64::total_cmp);
    breakpoints.dedup();

    Ok(System {
        names,
        kinds,
        trapezoidal,
        c_matrix,
        stamps,
        kick: circuit.kick().and_then(|k| slot(k.node).map(|s| (s, k.amps))),
        breakpoints,
        probes: all_probes,
    })
}

#[inline]
fn volt(x: &[f64], s: Slot) -> f64 {
    s.map_or(0.0, |i| x[i])
}

/// Adds `i` leaving node `a` and entering node `b`.
#[inline]
fn kcl(f: &mut [f64], a: Slot, b: Slot, i: f64) {
    if let Some(a) = a {
        f[a] += i;
    }
    if let Some(b) = b {
        f[b] -= i;
    }
}

#[inline]
fn jac(g: &mut DMatrix<f64>, row: Slot, col: Slot, v: f64) {
    if let (Some(r), Some(c)) = (row, col) {
        g[(r, c)] += v;
    }
}

/// Jacobian entries for a current `i(va, vb, ...)` flowing from `a` to `b`
/// with partial derivative `d` with respect to the voltage at `wrt`.
#[inline]
fn jac_branch(g: &mut DMatrix<f64>, a: Slot, b: Slot, wrt: Slot, d: f64) {
    jac(g, a, wrt, d);
    jac(g, b, wrt, -d);
}

impl System {
    pub fn unknown_count(&self) -> usize {
        self.names.len()
    }

    pub fn unknown_names(&self) -> &[String] {
        &self.names
    }

    pub fn unknown_kinds(&self) -> &[UnknownKind] {
        &self.kinds
    }

    /// Rows integrated with the trapezoidal rule; the rest use backward Euler.
    pub fn trapezoidal_rows(&self) -> &[bool] {
        &self.trapezoidal
    }

    pub fn count(&self, kind: UnknownKind) -> usize {
        self.kinds.iter().filter(|&&k| k == kind).count()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// `dq/dx`: capacitances, inductance matrix entries and storage time
    /// constants.
    pub fn charge_matrix(&self) -> &DMatrix<f64> {
        &self.c_matrix
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn has_sources(&self) -> bool {
        self.stamps.iter().any(|s| matches!(s, Stamp::Source { .. })) || self.kick.is_some()
    }

    pub(crate) fn probes(&self) -> &[(String, Probe)] {
        &self.probes
    }

    pub(crate) fn kick(&self) -> Option<(usize, f64)> {
        self.kick
    }

    /// Static part of the residual, `f(x, t)`, and optionally its Jacobian.
    /// `g` must be zeroed by the caller.
    pub fn evaluate(&self, x: &[f64], t: f64, f: &mut [f64], mut g: Option<&mut DMatrix<f64>>) {
        f.iter_mut().for_each(|v| *v = 0.0);
        for stamp in &self.stamps {
            match stamp {
                Stamp::Conductance { a, b, g: cond } => {
                    let i = cond * (volt(x, *a) - volt(x, *b));
                    kcl(f, *a, *b, i);
                    if let Some(g) = g.as_deref_mut() {
                        jac_branch(g, *a, *b, *a, *cond);
                        jac_branch(g, *a, *b, *b, -*cond);
                    }
                }
                Stamp::Winding { a, b, row, r } => {
                    let i = x[*row];
                    kcl(f, *a, *b, i);
                    f[*row] = r * i - (volt(x, *a) - volt(x, *b));
                    if let Some(g) = g.as_deref_mut() {
                        jac_branch(g, *a, *b, Some(*row), 1.0);
                        jac(g, Some(*row), Some(*row), *r);
                        jac(g, Some(*row), *a, -1.0);
                        jac(g, Some(*row), *b, 1.0);
                    }
                }
                Stamp::Source { pos, neg, row, wave, r } => {
                    let i = x[*row];
                    kcl(f, *pos, *neg, -i);
                    f[*row] = volt(x, *pos) - volt(x, *neg) - wave.value(t) + r * i;
                    if let Some(g) = g.as_deref_mut() {
                        jac_branch(g, *pos, *neg, Some(*row), -1.0);
                        jac(g, Some(*row), Some(*row), *r);
                        jac(g, Some(*row), *pos, 1.0);
                        jac(g, Some(*row), *neg, -1.0);
                    }
                }
                Stamp::Mosfet { d, g: gate, s, params } => {
                    let vs = volt(x, *s);
                    let ev = devices::mosfet_eval(params, volt(x, *gate) - vs, volt(x, *d) - vs);
                    kcl(f, *d, *s, ev.ids);
                    if let Some(g) = g.as_deref_mut() {
                        jac_branch(g, *d, *s, *gate, ev.gm);
                        jac_branch(g, *d, *s, *d, ev.gds);
                        jac_branch(g, *d, *s, *s, -ev.gm - ev.gds);
                    }
                }
                Stamp::Bjt { c, b, e, row, params } => {
                    let ve = volt(x, *e);
                    let z = x[*row];
                    let ev = devices::bjt_eval(params, volt(x, *b) - ve, volt(x, *c) - ve, z);
                    kcl(f, *b, *e, ev.ib);
                    kcl(f, *c, *e, ev.ic);
                    // z - (ib - ic/beta) = 0 with tau·dz/dt carried by the charge matrix
                    let beta = params.beta_f;
                    f[*row] = z - ev.ib + ev.ic / beta;
                    if let Some(g) = g.as_deref_mut() {
                        jac_branch(g, *b, *e, *b, ev.dib_dvbe);
                        jac_branch(g, *b, *e, *e, -ev.dib_dvbe);
                        jac_branch(g, *c, *e, *b, ev.dic_dvbe);
                        jac_branch(g, *c, *e, *c, ev.dic_dvce);
                        jac_branch(g, *c, *e, *e, -ev.dic_dvbe - ev.dic_dvce);
                        jac_branch(g, *c, *e, Some(*row), ev.dic_dz);
                        let r = Some(*row);
                        jac(g, r, r, 1.0 + ev.dic_dz / beta);
                        jac(g, r, *b, -ev.dib_dvbe + ev.dic_dvbe / beta);
                        jac(g, r, *c, ev.dic_dvce / beta);
                        jac(g, r, *e, ev.dib_dvbe - (ev.dic_dvbe + ev.dic_dvce) / beta);
                    }
                }
                Stamp::Diode { a, k, params } => {
                    let (i, gd) = devices::diode_eval(params, volt(x, *a) - volt(x, *k));
                    kcl(f, *a, *k, i);
                    if let Some(g) = g.as_deref_mut() {
                        jac_branch(g, *a, *k, *a, gd);
                        jac_branch(g, *a, *k, *k, -gd);
                    }
                }
            }
        }
    }

    pub(crate) fn probe_value(&self, probe: &Probe, x: &[f64]) -> f64 {
        match probe {
            Probe::Unknown(i) => x[*i],
            Probe::BodyDiode { d, s, params } => devices::diode_i(params, volt(x, *s) - volt(x, *d)).max(0.0),
            Probe::Charge { row, tau } => x[*row] * tau,
        }
    }
}
