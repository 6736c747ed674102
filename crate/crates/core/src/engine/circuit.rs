use serde::{Deserialize, Serialize};

use crate::devices::{BjtParams, DiodeParams, MosfetParams};
use crate::error::{Error, Result};
use crate::magnetics::TransformerModel;

/// Index into a circuit's node table. Node 0 is ground.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub const GROUND: NodeId = NodeId(0);

    pub fn is_ground(self) -> bool {
        self.0 == 0
    }

    pub fn index(self) -> usize {
        self.0
    }
}

/// Piecewise-linear waveform. Holds the first value before the first point
/// and the last value after the last point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stimulus {
    points: Vec<(f64, f64)>,
}

impl Stimulus {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("stimulus", "needs at least one point"));
        }
        for w in points.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::invalid(
                    "stimulus",
                    format!("times must be strictly increasing ({} then {})", w[0].0, w[1].0),
                ));
            }
        }
        if points.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err(Error::invalid("stimulus", "values must be finite"));
        }
        Ok(Self { points })
    }

    pub fn constant(value: f64) -> Self {
        Self {
            points: vec![(0.0, value)],
        }
    }

    /// 0 → `value` step with a linear edge of `rise` starting at `at`.
    pub fn step(at: f64, rise: f64, value: f64) -> Self {
        Self {
            points: vec![(at, 0.0), (at + rise, value)],
        }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn value(&self, t: f64) -> f64 {
        let pts = &self.points;
        if t <= pts[0].0 {
            return pts[0].1;
        }
        let last = pts[pts.len() - 1];
        if t >= last.0 {
            return last.1;
        }
        // first point with time > t
        let i = pts.partition_point(|&(pt, _)| pt <= t);
        let (t0, v0) = pts[i - 1];
        let (t1, v1) = pts[i];
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }

    /// Times where the slope changes; the integrator lands on these exactly.
    pub fn breakpoints(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|&(t, _)| t)
    }

    pub fn duration(&self) -> f64 {
        self.points[self.points.len() - 1].0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ElementKind {
    Resistor {
        a: NodeId,
        b: NodeId,
        ohms: f64,
    },
    Capacitor {
        a: NodeId,
        b: NodeId,
        farads: f64,
    },
    /// Current flows a → b through the winding.
    Inductor {
        a: NodeId,
        b: NodeId,
        henries: f64,
        series_ohms: f64,
    },
    /// Two windings with dotted ends `primary.0` and `secondary.0`.
    CoupledPair {
        primary: (NodeId, NodeId),
        secondary: (NodeId, NodeId),
        model: TransformerModel,
    },
    /// Ideal source `pos - neg = wave(t) - series_ohms·i`, where `i` is the
    /// current delivered out of `pos`.
    VoltageSource {
        pos: NodeId,
        neg: NodeId,
        wave: Stimulus,
        series_ohms: f64,
    },
    Mosfet {
        drain: NodeId,
        gate: NodeId,
        source: NodeId,
        params: MosfetParams,
    },
    Bjt {
        collector: NodeId,
        base: NodeId,
        emitter: NodeId,
        params: BjtParams,
    },
    Diode {
        anode: NodeId,
        cathode: NodeId,
        params: DiodeParams,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub name: String,
    pub kind: ElementKind,
}

/// Current injected into a node during the first integration step only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kick {
    pub node: NodeId,
    pub amps: f64,
}

/// A fixed netlist.
#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    nodes: Vec<String>,
    elements: Vec<Element>,
    kick: Option<Kick>,
}

impl Default for Circuit {
    fn default() -> Self {
        Self::new()
    }
}

impl Circuit {
    pub fn new() -> Self {
        Self {
            nodes: vec!["0".to_string()],
            elements: Vec::new(),
            kick: None,
        }
    }

    pub fn ground(&self) -> NodeId {
        NodeId::GROUND
    }

    /// Returns the node with this name, creating it if needed. "0" and "gnd"
    /// are ground.
    pub fn node(&mut self, name: &str) -> NodeId {
        if let Some(id) = self.find_node(name) {
            return id;
        }
        self.nodes.push(name.to_string());
        NodeId(self.nodes.len() - 1)
    }

    pub fn find_node(&self, name: &str) -> Option<NodeId> {
        if name == "0" || name.eq_ignore_ascii_case("gnd") {
            return Some(NodeId::GROUND);
        }
        self.nodes.iter().position(|n| n == name).map(NodeId)
    }

    pub fn node_name(&self, id: NodeId) -> &str {
        &self.nodes[id.0]
    }

    /// Node count including ground.
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn element(&self, name: &str) -> Option<&Element> {
        self.elements.iter().find(|e| e.name == name)
    }

    pub fn kick(&self) -> Option<Kick> {
        self.kick
    }

    pub fn set_kick(&mut self, node: NodeId, amps: f64) {
        self.kick = Some(Kick { node, amps });
    }

    pub fn add(&mut self, name: impl Into<String>, kind: ElementKind) -> &mut Self {
        self.elements.push(Element {
            name: name.into(),
            kind,
        });
        self
    }

    pub fn resistor(&mut self, name: &str, a: NodeId, b: NodeId, ohms: f64) -> &mut Self {
        self.add(name, ElementKind::Resistor { a, b, ohms })
    }

    pub fn capacitor(&mut self, name: &str, a: NodeId, b: NodeId, farads: f64) -> &mut Self {
        self.add(name, ElementKind::Capacitor { a, b, farads })
    }

    pub fn inductor(&mut self, name: &str, a: NodeId, b: NodeId, henries: f64, series_ohms: f64) -> &mut Self {
        self.add(
            name,
            ElementKind::Inductor {
                a,
                b,
                henries,
                series_ohms,
            },
        )
    }

    pub fn coupled_pair(
        &mut self,
        name: &str,
        primary: (NodeId, NodeId),
        secondary: (NodeId, NodeId),
        model: TransformerModel,
    ) -> &mut Self {
        self.add(
            name,
            ElementKind::CoupledPair {
                primary,
                secondary,
                model,
            },
        )
    }

    pub fn voltage_source(
        &mut self,
        name: &str,
        pos: NodeId,
        neg: NodeId,
        wave: Stimulus,
        series_ohms: f64,
    ) -> &mut Self {
        self.add(
            name,
            ElementKind::VoltageSource {
                pos,
                neg,
                wave,
                series_ohms,
            },
        )
    }

    pub fn mosfet(&mut self, name: &str, drain: NodeId, gate: NodeId, source: NodeId, params: MosfetParams) -> &mut Self {
        self.add(
            name,
            ElementKind::Mosfet {
                drain,
                gate,
                source,
                params,
            },
        )
    }

    pub fn bjt(&mut self, name: &str, collector: NodeId, base: NodeId, emitter: NodeId, params: BjtParams) -> &mut Self {
        self.add(
            name,
            ElementKind::Bjt {
                collector,
                base,
                emitter,
                params,
            },
        )
    }

    pub fn diode(&mut self, name: &str, anode: NodeId, cathode: NodeId, params: DiodeParams) -> &mut Self {
        self.add(
            name,
            ElementKind::Diode {
                anode,
                cathode,
                params,
            },
        )
    }
}
