//! Nonlinear transient circuit simulation.

pub mod circuit;
pub mod measure;
pub mod mna;
pub mod trace;
pub mod transient;

pub use circuit::{Circuit, Element, ElementKind, Kick, NodeId, Stimulus};
pub use measure::{measure_frequency, measure_power, measure_startup, FrequencyEstimate, SupplyProbe};
pub use mna::{assemble, System, UnknownKind};
pub use trace::Trace;
pub use transient::{transient, transient_system, InitialState, SimOptions};
