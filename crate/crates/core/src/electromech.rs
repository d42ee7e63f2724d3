//! Lumped-parameter model of the electrostatically actuated cantilever
//! micro-mirror.
//!
//! The mirror pad hangs from two arms that act as fixed-guided beams in
//! parallel; the pad itself is treated as rigid. Electrostatic attraction
//! towards the handle layer follows the parallel-plate law with the gap
//! narrowing as the pad deflects, which reproduces the classic pull-in
//! instability at one third of the initial gap. This is a deliberate
//! trade-off against finite-element fidelity: every quantity here has a
//! closed form or a guaranteed-bracket root, and the mechanical resonance
//! estimate is only trusted to a factor of two.

use serde::{Deserialize, Serialize};

use crate::consts::VACUUM_PERMITTIVITY;
use crate::real::Real;
use crate::roots;

/// Fraction of the arm mass that loads the fundamental mode of a
/// fixed-guided beam (standard distributed-mass correction).
pub const GUIDED_BEAM_MASS_COEFF: f64 = 0.4;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Bias at or beyond the pull-in instability; no stable deflection exists.
    PullInExceeded { voltage: f64, pull_in_voltage: f64 },
    /// dV/d(deflection) diverges as the bias approaches zero.
    DivergentGradient,
    /// A parameter failed a constructor invariant.
    InvalidParameter(String),
}

impl std::fmt::Display for Error {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Error::PullInExceeded {
                voltage,
                pull_in_voltage,
            } => write!(
                f,
                "bias {voltage} V is at or beyond the pull-in voltage {pull_in_voltage} V"
            ),
            Error::DivergentGradient => {
                write!(f, "actuation gradient diverges as the bias approaches zero")
            }
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

/// Cantilever dimensions (SI metres). The buried-oxide thickness doubles as
/// the electrostatic actuation gap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CantileverGeometry<F> {
    /// Side length of the square mirror pad.
    pub pad_side: F,
    /// Thickness of the mirror pad (full device layer by default).
    pub pad_thickness: F,
    /// Length of each supporting arm.
    pub arm_length: F,
    /// Width of each supporting arm.
    pub arm_width: F,
    /// Thickness (height) of the arms.
    pub arm_thickness: F,
    /// Length of the under-etched anchor region.
    pub underetch_length: F,
    /// Width of the under-etched anchor region.
    pub underetch_width: F,
    /// Buried-oxide thickness = unactuated electrode gap.
    pub oxide_gap: F,
}

impl<F: Real> Default for CantileverGeometry<F> {
    fn default() -> Self {
        Self {
            pad_side: F::of(50e-6),
            pad_thickness: F::of(50e-6),
            arm_length: F::of(250e-6),
            arm_width: F::of(10e-6),
            arm_thickness: F::of(22e-6),
            underetch_length: F::of(32e-6),
            underetch_width: F::of(130e-6),
            oxide_gap: F::of(2e-6),
        }
    }
}

impl<F: Real> CantileverGeometry<F> {
    pub fn validate(&self) -> Result<(), Error> {
        let fields = [
            ("pad_side", self.pad_side),
            ("pad_thickness", self.pad_thickness),
            ("arm_length", self.arm_length),
            ("arm_width", self.arm_width),
            ("arm_thickness", self.arm_thickness),
            ("underetch_length", self.underetch_length),
            ("underetch_width", self.underetch_width),
            ("oxide_gap", self.oxide_gap),
        ];
        for (name, value) in fields {
            if !(value > F::zero()) || !value.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be strictly positive, got {value}"
                )));
            }
        }
        // Plausibility guard: the released gap cannot exceed the structural
        // arm thickness.
        if self.oxide_gap >= self.arm_thickness {
            return Err(Error::InvalidParameter(format!(
                "oxide_gap ({}) must be smaller than arm_thickness ({})",
                self.oxide_gap, self.arm_thickness
            )));
        }
        Ok(())
    }

    /// Total electrode area: mirror pad + both arms + under-etched anchor.
    pub fn electrode_area(&self) -> F {
        self.pad_side * self.pad_side
            + F::of(2.0) * self.arm_length * self.arm_width
            + self.underetch_length * self.underetch_width
    }
}

/// Elastic constants of the structural material.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialProps<F> {
    /// Young's modulus (Pa).
    pub youngs_modulus: F,
    /// Mass density (kg/m^3).
    pub density: F,
}

impl<F: Real> Default for MaterialProps<F> {
    /// Single-crystal silicon, <110> in-plane.
    fn default() -> Self {
        Self {
            youngs_modulus: F::of(169e9),
            density: F::of(2329.0),
        }
    }
}

impl<F: Real> MaterialProps<F> {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.youngs_modulus > F::zero()) || !(self.density > F::zero()) {
            return Err(Error::InvalidParameter(
                "youngs_modulus and density must be strictly positive".into(),
            ));
        }
        Ok(())
    }
}

/// Suspension stiffness: two fixed-guided beams in parallel, rigid pad.
/// k = 2 E w t^3 / L^3.
pub fn spring_constant<F: Real>(geom: &CantileverGeometry<F>, mat: &MaterialProps<F>) -> F {
    F::of(2.0) * mat.youngs_modulus * geom.arm_width * geom.arm_thickness.powi(3)
        / geom.arm_length.powi(3)
}

/// Modal mass: rigid pad plus `GUIDED_BEAM_MASS_COEFF` of the two arms.
pub fn effective_mass<F: Real>(geom: &CantileverGeometry<F>, mat: &MaterialProps<F>) -> F {
    effective_mass_with(geom, mat, F::of(GUIDED_BEAM_MASS_COEFF))
}

/// Modal mass with an explicit arm-mass participation coefficient.
pub fn effective_mass_with<F: Real>(
    geom: &CantileverGeometry<F>,
    mat: &MaterialProps<F>,
    arm_coeff: F,
) -> F {
    let pad = geom.pad_side * geom.pad_side * geom.pad_thickness * mat.density;
    let arms = F::of(2.0) * geom.arm_length * geom.arm_width * geom.arm_thickness * mat.density;
    pad + arm_coeff * arms
}

/// Fundamental mechanical resonance f = sqrt(k/m_eff) / 2π (Hz).
///
/// Lumped estimate; trust to a factor of two against measured devices.
pub fn resonance_frequency<F: Real>(geom: &CantileverGeometry<F>, mat: &MaterialProps<F>) -> F {
    (spring_constant(geom, mat) / effective_mass(geom, mat)).sqrt() / (F::of(2.0) * F::PI())
}

/// Parallel-plate force at a fixed gap: F = eps0 A V^2 / (2 gap^2).
///
/// Even in the sign of the bias. This is the fixed-gap expression; the
/// deflection solvers below use the gap-narrowing balance instead.
pub fn electrostatic_force<F: Real>(voltage: F, gap: F, area: F) -> F {
    F::of(VACUUM_PERMITTIVITY) * area * voltage * voltage / (F::of(2.0) * gap * gap)
}

/// Pull-in point of a parallel-plate actuator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PullIn<F> {
    /// Bias at which the stable branch disappears (V).
    pub voltage: F,
    /// Deflection at pull-in; exactly one third of the gap.
    pub deflection: F,
}

/// Lumped electrostatic actuator: linear spring against a parallel-plate
/// force with gap narrowing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatorModel<F> {
    /// Suspension stiffness (N/m).
    pub spring_constant: F,
    /// Modal mass (kg).
    pub effective_mass: F,
    /// Total electrode area (m^2).
    pub electrode_area: F,
    /// Unactuated electrode gap (m).
    pub gap: F,
}

impl<F: Real> ActuatorModel<F> {
    pub fn new(spring_constant: F, effective_mass: F, electrode_area: F, gap: F) -> Result<Self, Error> {
        let model = Self {
            spring_constant,
            effective_mass,
            electrode_area,
            gap,
        };
        model.validate()?;
        Ok(model)
    }

    /// Derive the actuator from cantilever geometry and material.
    pub fn from_geometry(geom: &CantileverGeometry<F>, mat: &MaterialProps<F>) -> Result<Self, Error> {
        geom.validate()?;
        mat.validate()?;
        Self::new(
            spring_constant(geom, mat),
            effective_mass(geom, mat),
            geom.electrode_area(),
            geom.oxide_gap,
        )
    }

    pub fn validate(&self) -> Result<(), Error> {
        let fields = [
            ("spring_constant", self.spring_constant),
            ("effective_mass", self.effective_mass),
            ("electrode_area", self.electrode_area),
            ("gap", self.gap),
        ];
        for (name, value) in fields {
            if !(value > F::zero()) || !value.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be strictly positive, got {value}"
                )));
            }
        }
        Ok(())
    }

    /// Pull-in bias and deflection: V_PI = sqrt(8 k g^3 / (27 eps0 A)),
    /// delta_PI = g/3.
    pub fn pull_in(&self) -> PullIn<F> {
        let eps0 = F::of(VACUUM_PERMITTIVITY);
        let num = F::of(8.0) * self.spring_constant * self.gap.powi(3);
        let den = F::of(27.0) * eps0 * self.electrode_area;
        PullIn {
            voltage: (num / den).sqrt(),
            deflection: self.gap / F::of(3.0),
        }
    }

    /// Residual of the force balance k δ − eps0 A V^2 / (2 (g − δ)^2) (N).
    pub fn force_balance_residual(&self, voltage: F, deflection: F) -> F {
        self.spring_constant * deflection
            - electrostatic_force(voltage, self.gap - deflection, self.electrode_area)
    }

    /// Static deflection on the stable branch, 0 ≤ δ < g/3.
    ///
    /// Solved by bisection on [0, g/3]; the stable root is unique there and
    /// the bracket is guaranteed for any bias below pull-in. The solver runs
    /// to the floating-point fixpoint, well inside the 1e-15 m contract.
    pub fn static_deflection(&self, voltage: F) -> Result<F, Error> {
        let pull_in = self.pull_in();
        if voltage.abs() >= pull_in.voltage {
            return Err(Error::PullInExceeded {
                voltage: voltage.widen(),
                pull_in_voltage: pull_in.voltage.widen(),
            });
        }
        if voltage == F::zero() {
            return Ok(F::zero());
        }
        let f = |d: F| self.force_balance_residual(voltage, d);
        match roots::bisect(F::zero(), pull_in.deflection, F::zero(), 256, f) {
            Ok(root) => Ok(root),
            // Only reachable when rounding pushes the marginal bracket over
            // the fold right at pull-in.
            Err(roots::NoBracket) => Err(Error::PullInExceeded {
                voltage: voltage.widen(),
                pull_in_voltage: pull_in.voltage.widen(),
            }),
        }
    }

    /// Bias that produces a given stable-branch deflection (exact inverse of
    /// the balance): V(δ) = sqrt(2 k δ / (eps0 A)) (g − δ).
    pub fn voltage_for_deflection(&self, deflection: F) -> Result<F, Error> {
        let limit = self.gap / F::of(3.0);
        if deflection < F::zero() || deflection >= limit {
            return Err(Error::InvalidParameter(format!(
                "deflection {deflection} outside the stable branch [0, {limit})"
            )));
        }
        let eps0 = F::of(VACUUM_PERMITTIVITY);
        let v = (F::of(2.0) * self.spring_constant * deflection / (eps0 * self.electrode_area))
            .sqrt()
            * (self.gap - deflection);
        Ok(v)
    }

    /// Actuation gradient dV/dδ on the stable branch (V/m).
    ///
    /// From implicit differentiation of the balance:
    /// dV/dδ = sqrt(2k/(eps0 A)) (g − 3δ) / (2 sqrt(δ)).
    /// Positive and finite on (0, V_PI); diverges as the bias approaches 0.
    pub fn actuation_gradient(&self, voltage: F) -> Result<F, Error> {
        if voltage <= F::zero() {
            return Err(Error::DivergentGradient);
        }
        let deflection = self.static_deflection(voltage)?;
        if deflection <= F::zero() {
            return Err(Error::DivergentGradient);
        }
        Ok(self.gradient_at_deflection(deflection))
    }

    /// dV/dδ evaluated at a known stable-branch deflection (V/m).
    pub fn gradient_at_deflection(&self, deflection: F) -> F {
        let eps0 = F::of(VACUUM_PERMITTIVITY);
        let scale = (F::of(2.0) * self.spring_constant / (eps0 * self.electrode_area)).sqrt();
        scale * (self.gap - F::of(3.0) * deflection) / (F::of(2.0) * deflection.sqrt())
    }
}

/// V/m expressed in µV/pm, the unit used for tuning-precision statements.
pub fn gradient_as_uv_per_pm<F: Real>(gradient_v_per_m: F) -> F {
    gradient_v_per_m / F::of(1e6)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    fn default_model() -> ActuatorModel<f64> {
        ActuatorModel::from_geometry(&CantileverGeometry::default(), &MaterialProps::default())
            .unwrap()
    }

    #[test]
    fn electrode_area_default() {
        // 2500 + 5000 + 4160 µm^2, summed by hand.
        let area = CantileverGeometry::<f64>::default().electrode_area();
        assert_relative_eq!(area, 1.166e-8, max_relative = 1e-12);
    }

    #[test]
    fn electrode_area_degenerate_arm_width() {
        let geom = CantileverGeometry::<f64> {
            arm_width: 1e-15,
            ..CantileverGeometry::default()
        };
        let pad_plus_underetch = 50e-6_f64.powi(2) + 32e-6 * 130e-6;
        assert_relative_eq!(geom.electrode_area(), pad_plus_underetch, max_relative = 1e-6);
        assert!(CantileverGeometry::<f64> {
            arm_width: 0.0,
            ..CantileverGeometry::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn electrode_area_pad_scaling() {
        let geom = CantileverGeometry::<f64>::default();
        let mut doubled = geom;
        doubled.pad_side = 2.0 * geom.pad_side;
        let extra = doubled.electrode_area() - geom.electrode_area();
        assert_relative_eq!(extra, 3.0 * geom.pad_side * geom.pad_side, max_relative = 1e-12);
    }

    #[test]
    fn spring_constant_default() {
        let k = spring_constant(&CantileverGeometry::<f64>::default(), &MaterialProps::default());
        // Independent route: one fixed-guided beam k1 = 12 E I / L^3 with
        // I = w t^3 / 12, two beams in parallel.
        let e = 169e9;
        let i = 10e-6 * 22e-6_f64.powi(3) / 12.0;
        let k1 = 12.0 * e * i / 250e-6_f64.powi(3);
        assert_relative_eq!(k, 2.0 * k1, max_relative = 1e-12);
        assert_relative_eq!(k, 2.30e3, max_relative = 2e-3);
    }

    #[test]
    fn spring_constant_scaling() {
        let geom = CantileverGeometry::<f64>::default();
        let mat = MaterialProps::default();
        let k = spring_constant(&geom, &mat);

        let mut thick = geom;
        thick.arm_thickness = 2.0 * geom.arm_thickness;
        assert_relative_eq!(spring_constant(&thick, &mat), 8.0 * k, max_relative = 1e-12);

        let mut long = geom;
        long.arm_length = 2.0 * geom.arm_length;
        assert_relative_eq!(spring_constant(&long, &mat), k / 8.0, max_relative = 1e-12);
    }

    #[test]
    fn force_examples() {
        assert_eq!(electrostatic_force(0.0_f64, 2e-6, 1.166e-8), 0.0);
        let f = electrostatic_force(10.0_f64, 2e-6, 1.166e-8);
        assert_relative_eq!(f, 1.2905e-6, max_relative = 1e-4);
        assert_eq!(f, electrostatic_force(-10.0_f64, 2e-6, 1.166e-8));
    }

    #[test]
    fn deflection_zero_bias() {
        assert_eq!(default_model().static_deflection(0.0).unwrap(), 0.0);
    }

    #[test]
    fn deflection_approaches_pull_in() {
        let model = default_model();
        let pi = model.pull_in();
        let d = model.static_deflection(pi.voltage * (1.0 - 1e-6)).unwrap();
        // Fold scaling: the gap to g/3 shrinks like sqrt(1 - V/V_PI).
        assert!(pi.deflection - d < 2e-9, "d = {d}");
        assert!(d < pi.deflection);
    }

    #[test]
    fn deflection_rejects_pull_in_regime() {
        let model = default_model();
        let pi = model.pull_in();
        assert!(matches!(
            model.static_deflection(pi.voltage),
            Err(Error::PullInExceeded { .. })
        ));
        assert!(matches!(
            model.static_deflection(pi.voltage * 1.5),
            Err(Error::PullInExceeded { .. })
        ));
    }

    #[test]
    fn force_balance_residual_tight() {
        let model = default_model();
        let pi = model.pull_in();
        for i in 1..100 {
            let v = pi.voltage * (i as f64) / 100.0;
            let d = model.static_deflection(v).unwrap();
            assert!(
                model.force_balance_residual(v, d).abs() < 1e-12,
                "residual {} at V = {v}",
                model.force_balance_residual(v, d)
            );
        }
    }

    #[test]
    fn pull_in_values() {
        let model = default_model();
        let pi = model.pull_in();
        // Model identity: deflection is exactly gap/3.
        assert_eq!(pi.deflection, model.gap / 3.0);
        assert_relative_eq!(pi.deflection, 666.7e-9, max_relative = 1e-3);
        assert_relative_eq!(pi.voltage, 229.97, max_relative = 1e-4);
    }

    #[test]
    fn pull_in_gap_scaling() {
        let model = default_model();
        let mut wide = model;
        wide.gap = 2.0 * model.gap;
        assert_relative_eq!(
            wide.pull_in().voltage,
            model.pull_in().voltage * 8.0_f64.sqrt(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn pull_in_deflection_independent_of_stiffness() {
        let model = default_model();
        let mut stiff = model;
        stiff.spring_constant *= 7.3;
        stiff.electrode_area *= 0.4;
        assert_eq!(stiff.pull_in().deflection, model.pull_in().deflection);
    }

    #[test]
    fn gradient_bound_over_half_wavelength() {
        // > 100 µV/pm for every deflection up to λ/2 = 390 nm at 780 nm.
        let model = default_model();
        for i in 1..=390 {
            let d = i as f64 * 1e-9;
            let g = gradient_as_uv_per_pm(model.gradient_at_deflection(d));
            assert!(g > 100.0, "gradient {g} µV/pm at {d} m");
        }
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let model = default_model();
        let v = model.voltage_for_deflection(200e-9).unwrap();
        let grad = model.actuation_gradient(v).unwrap();
        let h = v * 1e-6;
        let d_plus = model.static_deflection(v + h).unwrap();
        let d_minus = model.static_deflection(v - h).unwrap();
        let fd = 2.0 * h / (d_plus - d_minus);
        assert_relative_eq!(grad, fd, max_relative = 1e-2);
    }

    #[test]
    fn gradient_random_bias_finite_difference() {
        // Implicit-differentiation gradient vs centred differences at 100
        // deterministic pseudo-random bias points.
        let model = default_model();
        let pi = model.pull_in();
        let mut state = 0x9e3779b97f4a7c15_u64;
        for _ in 0..100 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let u = (state >> 11) as f64 / (1u64 << 53) as f64;
            let v = pi.voltage * (0.02 + 0.96 * u);
            let grad = model.actuation_gradient(v).unwrap();
            let h = v * 1e-6;
            let fd = 2.0 * h
                / (model.static_deflection(v + h).unwrap() - model.static_deflection(v - h).unwrap());
            assert_relative_eq!(grad, fd, max_relative = 1e-2);
        }
    }

    #[test]
    fn gradient_divergent_near_zero_bias() {
        let model = default_model();
        assert!(matches!(model.actuation_gradient(0.0), Err(Error::DivergentGradient)));
        // The gradient grows without bound as the bias shrinks.
        let g1 = model.actuation_gradient(1.0).unwrap();
        let g2 = model.actuation_gradient(0.1).unwrap();
        assert!(g2 > 5.0 * g1);
    }

    #[test]
    fn resonance_default_and_scaling() {
        let geom = CantileverGeometry::<f64>::default();
        let mat = MaterialProps::default();
        let f = resonance_frequency(&geom, &mat);
        assert_relative_eq!(f, 3.85e5, max_relative = 1e-3);
        // Within a factor of two of the measured 239 kHz.
        assert!(f / 239e3 < 2.0 && 239e3 / f < 2.0);

        let mut dense = mat;
        dense.density = 4.0 * mat.density;
        assert_relative_eq!(resonance_frequency(&geom, &dense), f / 2.0, max_relative = 1e-12);

        let mut stiff = mat;
        stiff.youngs_modulus = 4.0 * mat.youngs_modulus;
        assert_relative_eq!(resonance_frequency(&geom, &stiff), 2.0 * f, max_relative = 1e-12);
    }

    #[test]
    fn voltage_for_deflection_round_trip() {
        let model = default_model();
        for d in [5e-9, 60e-9, 200e-9, 420e-9, 650e-9] {
            let v = model.voltage_for_deflection(d).unwrap();
            assert_abs_diff_eq!(model.static_deflection(v).unwrap(), d, epsilon = 1e-15);
        }
    }

    #[test]
    fn geometry_validation() {
        assert!(CantileverGeometry::<f64>::default().validate().is_ok());
        let mut geom = CantileverGeometry::<f64>::default();
        geom.oxide_gap = geom.arm_thickness;
        assert!(geom.validate().is_err());
    }

    #[test]
    fn json_keys_match_field_names() {
        let value = serde_json::to_value(CantileverGeometry::<f64>::default()).unwrap();
        for key in [
            "pad_side",
            "pad_thickness",
            "arm_length",
            "arm_width",
            "arm_thickness",
            "underetch_length",
            "underetch_width",
            "oxide_gap",
        ] {
            assert!(value.get(key).is_some(), "missing key {key}");
        }
        let mat = serde_json::to_value(MaterialProps::<f64>::default()).unwrap();
        assert!(mat.get("youngs_modulus").is_some() && mat.get("density").is_some());
    }

    #[test]
    fn works_in_f32() {
        let geom = CantileverGeometry::<f32>::default();
        let mat = MaterialProps::<f32>::default();
        let model = ActuatorModel::from_geometry(&geom, &mat).unwrap();
        let pi = model.pull_in();
        assert_relative_eq!(pi.deflection, 666.7e-9_f32, max_relative = 1e-3);
        let d = model.static_deflection(100.0).unwrap();
        assert!(d > 0.0 && d < pi.deflection);
    }

    proptest! {
        #[test]
        fn deflection_strictly_monotone(a in 1e-3_f64..1.0, b in 1e-3_f64..1.0) {
            let model = default_model();
            let v_pi = model.pull_in().voltage;
            let (v1, v2) = (a.min(b) * 0.999 * v_pi, a.max(b) * 0.999 * v_pi);
            prop_assume!(v2 > v1 * (1.0 + 1e-9));
            let d1 = model.static_deflection(v1).unwrap();
            let d2 = model.static_deflection(v2).unwrap();
            prop_assert!(d1 < d2, "d({v1}) = {d1} !< d({v2}) = {d2}");
        }
    }
}
