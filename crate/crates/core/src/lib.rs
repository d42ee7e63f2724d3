//! Simulation and characterisation toolkit for arrays of electrostatically
//! tunable, fibre-coupled Fabry-Perot microcavities.
//!
//! The crate models the full measurement chain of such a device at desk
//! scale:
//!
//! * [`electromech`] — lumped-parameter statics and dynamics of the
//!   cantilever micro-mirror actuator (deflection, pull-in, actuation
//!   gradient, mechanical resonance);
//! * [`optics`] — mode-matched fibre-cavity optics (waists, overlaps,
//!   reflection lineshapes, finesse/linewidth, cavity-QED figures of merit);
//! * [`fit`] — synthesis and nonlinear least-squares fitting of reflection
//!   traces (Lorentzian dips, cavity length and mirror-curvature recovery);
//! * [`lock`] — discrete-time closed-loop simulation of PID length
//!   stabilisation with realistic noise sources;
//! * [`array`] — array-level assembly: fabrication jitter, tilt alignment,
//!   per-site resonance tuning and scan synthesis.
//!
//! All model mathematics is generic over the scalar type through the
//! [`real::Real`] trait (`f32` or `f64`); the aliases below pin the common
//! `f64` instantiations.

// Validators use `!(x > 0)` so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod array;
pub mod consts;
pub mod electromech;
pub mod fit;
pub mod lock;
pub mod optics;
pub mod presets;
pub mod real;
pub mod roots;

pub use real::Real;

/// `f64` instantiations of the core model types.
pub type CantileverGeometry64 = electromech::CantileverGeometry<f64>;
pub type MaterialProps64 = electromech::MaterialProps<f64>;
pub type ActuatorModel64 = electromech::ActuatorModel<f64>;
pub type MirrorSpec64 = optics::MirrorSpec<f64>;
pub type FibreSpec64 = optics::FibreSpec<f64>;
pub type CavityGeometry64 = optics::CavityGeometry<f64>;
pub type CavityOptics64 = optics::CavityOptics<f64>;
pub type ReflectionTrace64 = fit::ReflectionTrace<f64>;
pub type LorentzianModel64 = fit::LorentzianModel<f64>;
pub type FitResult64 = fit::FitResult<f64>;
pub type PlantModel64 = lock::PlantModel<f64>;
pub type PidConfig64 = lock::PidConfig<f64>;
pub type NoiseSpec64 = lock::NoiseSpec<f64>;
pub type LockTrace64 = lock::LockTrace<f64>;
