//! Planar spiral coil extraction.
//!
//! Converts the geometry of two identical square spirals printed on opposite
//! faces of a board into a lumped coupled-inductor model: self inductance from
//! the current-sheet approximation, coupling from filament summation, series
//! resistance with a first-order skin-effect correction, and the dielectric
//! breakdown voltage of the board between the windings.

use serde::{Deserialize, Serialize};

use crate::error::{require_non_negative, require_positive, Error, Result};

/// Vacuum permeability in H/m.
pub const MU_0: f64 = 4.0e-7 * std::f64::consts::PI;

/// Annealed copper at 20 °C, Ω·m.
pub const COPPER_RESISTIVITY: f64 = 1.68e-8;

// Current-sheet coefficients for square spirals.
const SHEET_C1: f64 = 1.27;
const SHEET_C2: f64 = 2.07;
const SHEET_C3: f64 = 0.18;
const SHEET_C4: f64 = 0.13;

// Geometric mean distance of a rectangular conductor to itself is
// 0.2235 * (width + thickness).
const GMD_RECT: f64 = 0.2235;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CoilShape {
    #[default]
    Square,
}

/// A planar square spiral. All lengths in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoilGeometry {
    pub turns: u32,
    pub trace_width: f64,
    pub trace_spacing: f64,
    /// Side length of the innermost turn's inner edge.
    pub inner_side: f64,
    pub copper_thickness: f64,
    pub shape: CoilShape,
}

impl CoilGeometry {
    /// The prototype coil: 8 turns, 200 µm track and gap, 9.7 mm inner side,
    /// 35 µm copper.
    pub fn prototype() -> Self {
        Self {
            turns: 8,
            trace_width: 200e-6,
            trace_spacing: 200e-6,
            inner_side: 9.7e-3,
            copper_thickness: 35e-6,
            shape: CoilShape::Square,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.turns < 1 {
            return Err(Error::invalid("turns", "must be >= 1"));
        }
        require_positive("trace_width", self.trace_width)?;
        require_non_negative("trace_spacing", self.trace_spacing)?;
        require_positive("inner_side", self.inner_side)?;
        require_positive("copper_thickness", self.copper_thickness)?;
        Ok(())
    }

    /// Mean of outer and inner side lengths.
    pub fn mean_side(&self) -> f64 {
        0.5 * (outer_side(self) + self.inner_side)
    }

    /// (d_out - d_in) / (d_out + d_in).
    pub fn fill_ratio(&self) -> f64 {
        let d_out = outer_side(self);
        (d_out - self.inner_side) / (d_out + self.inner_side)
    }

    /// Side lengths of the one-filament-per-turn discretization, taken at each
    /// turn's centerline.
    pub fn filament_sides(&self) -> Vec<f64> {
        let pitch = self.trace_width + self.trace_spacing;
        (0..self.turns)
            .map(|i| self.inner_side + 2.0 * f64::from(i) * pitch + self.trace_width)
            .collect()
    }

    /// Total centerline length used for the DC resistance.
    pub fn trace_length(&self) -> f64 {
        4.0 * f64::from(self.turns) * self.mean_side()
    }
}

/// Dielectric and conductor properties of the board.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoardStack {
    /// Meters; also the vertical separation between the two windings.
    pub board_thickness: f64,
    /// V/m.
    pub dielectric_strength: f64,
    /// Ω·m.
    pub copper_resistivity: f64,
}

impl BoardStack {
    /// 1.6 mm FR4 at 20 kV/mm.
    pub fn fr4_1mm6() -> Self {
        Self {
            board_thickness: 1.6e-3,
            dielectric_strength: 20e6,
            copper_resistivity: COPPER_RESISTIVITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        require_positive("board_thickness", self.board_thickness)?;
        require_positive("dielectric_strength", self.dielectric_strength)?;
        require_positive("copper_resistivity", self.copper_resistivity)?;
        Ok(())
    }
}

/// Lumped electrical image of the two-winding board transformer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformerModel {
    pub l_primary: f64,
    pub l_secondary: f64,
    pub mutual: f64,
    pub coupling_k: f64,
    pub r_series_primary: f64,
    pub r_series_secondary: f64,
    pub extraction_frequency: f64,
}

impl TransformerModel {
    /// Builds a model from inductances; `coupling_k` is derived.
    ///
    /// Passivity (|M| < sqrt(L1·L2)) is not checked here so that callers can
    /// describe a bad pair and have it rejected at circuit assembly; use
    /// [`TransformerModel::validate`] for an early check.
    pub fn new(
        l_primary: f64,
        l_secondary: f64,
        mutual: f64,
        r_series_primary: f64,
        r_series_secondary: f64,
        extraction_frequency: f64,
    ) -> Self {
        Self {
            l_primary,
            l_secondary,
            mutual,
            coupling_k: mutual / (l_primary * l_secondary).sqrt(),
            r_series_primary,
            r_series_secondary,
            extraction_frequency,
        }
    }

    /// Symmetric pair with the given self inductance and coupling.
    pub fn symmetric(l: f64, k: f64, r_series: f64) -> Self {
        Self::new(l, l, k * l, r_series, r_series, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        require_positive("l_primary", self.l_primary)?;
        require_positive("l_secondary", self.l_secondary)?;
        require_non_negative("r_series_primary", self.r_series_primary)?;
        require_non_negative("r_series_secondary", self.r_series_secondary)?;
        let k = self.mutual / (self.l_primary * self.l_secondary).sqrt();
        if !(0.0..1.0).contains(&k.abs()) {
            return Err(Error::invalid(
                "coupling_k",
                format!("must satisfy 0 <= k < 1, got {k}"),
            ));
        }
        Ok(())
    }
}

/// Outer side length of the spiral.
pub fn outer_side(geom: &CoilGeometry) -> f64 {
    let n = f64::from(geom.turns);
    geom.inner_side + 2.0 * (n * geom.trace_width + (n - 1.0) * geom.trace_spacing)
}

/// Self inductance by the current-sheet approximation for square spirals.
pub fn self_inductance(geom: &CoilGeometry) -> Result<f64> {
    geom.validate()?;
    let rho = geom.fill_ratio();
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::invalid(
            "fill_ratio",
            format!("must lie in (0, 1), got {rho}"),
        ));
    }
    let n = f64::from(geom.turns);
    let d_avg = geom.mean_side();
    let shape = (SHEET_C2 / rho).ln() + SHEET_C3 * rho + SHEET_C4 * rho * rho;
    Ok(SHEET_C1 * MU_0 * n * n * d_avg * 0.5 * shape)
}

/// Mutual inductance and coupling coefficient between two identical coaxial
/// spirals separated vertically by `separation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub mutual: f64,
    pub coupling_k: f64,
}

/// Coupling of two identical spirals stacked `separation` apart.
///
/// Each turn is one square filament at its centerline. The coupling
/// coefficient is the filament-pair sum at `separation` divided by the same
/// sum at zero separation (self terms regularized by the conductor's
/// geometric mean distance), so it is strictly below one for any positive
/// separation. The mutual inductance is then `k · L` with `L` from
/// [`self_inductance`].
pub fn mutual_inductance(geom: &CoilGeometry, separation: f64) -> Result<Coupling> {
    require_positive("separation", separation)?;
    let l = self_inductance(geom)?;
    let sides = geom.filament_sides();
    let gmd = GMD_RECT * (geom.trace_width + geom.copper_thickness);
    let coupled = filament_sum(&sides, &sides, separation, gmd);
    let selfsum = filament_sum(&sides, &sides, 0.0, gmd);
    let k = coupled / selfsum;
    Ok(Coupling {
        mutual: k * l,
        coupling_k: k,
    })
}

/// Sum of mutual inductances between every pair of coaxial square filaments
/// from `a` and `b` at vertical distance `height`.
///
/// Pairs with equal sides are treated as the same conductor and have `gmd`
/// added to their separation.
pub fn filament_sum(a: &[f64], b: &[f64], height: f64, gmd: f64) -> f64 {
    let mut total = 0.0;
    for &sa in a {
        for &sb in b {
            let reg = if (sa - sb).abs() < 1e-15 { gmd } else { 0.0 };
            total += square_loops_mutual(sa, sb, height, reg);
        }
    }
    total
}

/// Mutual inductance of two coaxial, parallel square loops with sides `a` and
/// `b` a vertical distance `height` apart. Perpendicular sides do not couple;
/// each side sees the parallel side of the other loop (same current direction)
/// and the opposite side (reversed direction).
pub fn square_loops_mutual(a: f64, b: f64, height: f64, regularization: f64) -> f64 {
    let lateral_near = 0.5 * (a - b);
    let lateral_far = 0.5 * (a + b);
    let near = (lateral_near * lateral_near + height * height + regularization * regularization)
        .sqrt();
    let far = (lateral_far * lateral_far + height * height).sqrt();
    4.0 * (parallel_filaments(a, b, near) - parallel_filaments(a, b, far))
}

/// Neumann integral for two centered, parallel straight filaments of lengths
/// `la` and `lb` at perpendicular distance `d`.
fn parallel_filaments(la: f64, lb: f64, d: f64) -> f64 {
    let g = |u: f64| u * (u / d).asinh() - (u * u + d * d).sqrt();
    let (a0, a1) = (-0.5 * la, 0.5 * la);
    let (b0, b1) = (-0.5 * lb, 0.5 * lb);
    MU_0 / (4.0 * std::f64::consts::PI) * (g(a1 - b0) - g(a0 - b0) - g(a1 - b1) + g(a0 - b1))
}

/// Skin depth in copper of the given resistivity.
pub fn skin_depth(resistivity: f64, frequency: f64) -> f64 {
    (resistivity / (std::f64::consts::PI * frequency * MU_0)).sqrt()
}

/// Winding series resistance; skin effect clamps the conduction thickness to
/// one skin depth. Proximity effect is not modeled.
pub fn series_resistance(geom: &CoilGeometry, stack: &BoardStack, frequency: f64) -> Result<f64> {
    geom.validate()?;
    require_positive("copper_resistivity", stack.copper_resistivity)?;
    require_non_negative("frequency", frequency)?;
    let length = geom.trace_length();
    let r_dc = stack.copper_resistivity * length / (geom.trace_width * geom.copper_thickness);
    if frequency == 0.0 {
        return Ok(r_dc);
    }
    let delta = skin_depth(stack.copper_resistivity, frequency);
    let t_eff = geom.copper_thickness.min(delta);
    Ok(r_dc * (geom.copper_thickness / t_eff))
}

/// Breakdown voltage through the board between the two windings.
pub fn breakdown_voltage(stack: &BoardStack) -> f64 {
    stack.board_thickness * stack.dielectric_strength
}

/// Full extraction for two identical coils on opposite faces of `stack`.
pub fn extract_transformer(
    geom: &CoilGeometry,
    stack: &BoardStack,
    extraction_frequency: f64,
) -> Result<TransformerModel> {
    stack.validate()?;
    let l = self_inductance(geom)?;
    let coupling = mutual_inductance(geom, stack.board_thickness)?;
    let r = series_resistance(geom, stack, extraction_frequency)?;
    Ok(TransformerModel {
        l_primary: l,
        l_secondary: l,
        mutual: coupling.mutual,
        coupling_k: coupling.coupling_k,
        r_series_primary: r,
        r_series_secondary: r,
        extraction_frequency,
    })
}

/// JSON-facing extraction summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractionReport {
    pub l_primary: f64,
    pub l_secondary: f64,
    pub mutual: f64,
    pub coupling_k: f64,
    pub r_series_primary: f64,
    pub r_series_secondary: f64,
    pub breakdown_voltage: f64,
}

impl ExtractionReport {
    pub fn new(model: &TransformerModel, stack: &BoardStack) -> Self {
        Self {
            l_primary: model.l_primary,
            l_secondary: model.l_secondary,
            mutual: model.mutual,
            coupling_k: model.coupling_k,
            r_series_primary: model.r_series_primary,
            r_series_secondary: model.r_series_secondary,
            breakdown_voltage: breakdown_voltage(stack),
        }
    }
}
