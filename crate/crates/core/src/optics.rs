//! Mode-matched fibre-cavity optics.
//!
//! A plano-concave cavity is formed between a coated single-mode fibre tip
//! (planar mirror, carrying the guided mode) and a concave metal-coated
//! micro-mirror. The module derives the transverse mode geometry, the
//! fibre-cavity overlap, the reflection lineshape seen back through the
//! fibre, spectral quantities (FSR, finesse, linewidth, transverse mode
//! spacing) and cavity-QED figures of merit.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::consts::SPEED_OF_LIGHT;
use crate::real::Real;

/// Tolerance on the power partition r^2 + t^2 + l^2 = 1 of a mirror.
pub const MIRROR_PARTITION_TOL: f64 = 1e-12;

/// Transverse orders above this are never rendered in synthetic spectra.
const MAX_RENDER_ORDER: usize = 4;

/// Higher-order modes with relative coupled power below this fraction of
/// the fundamental are omitted from synthetic spectra; they sit below the
/// detection threshold of the curvature workflow.
pub const MODE_RENDER_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Geometric stability 0 < L < R violated.
    UnstableCavity { length: f64, radius: f64 },
    /// An inverse relation was fed a value outside its feasible range.
    OutOfRange(String),
    /// A parameter failed a constructor invariant.
    InvalidParameter(String),
}

impl std::fmt::Display for Error {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Error::UnstableCavity { length, radius } => write!(
                f,
                "plano-concave cavity unstable: length {length} m not below radius {radius} m"
            ),
            Error::OutOfRange(msg) => write!(f, "out of range: {msg}"),
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

/// Power coefficients of one mirror. Amplitudes are their square roots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MirrorSpec<F> {
    pub power_reflectivity: F,
    pub power_transmission: F,
    pub power_loss: F,
}

impl<F: Real> MirrorSpec<F> {
    /// A mirror with the given power partition; must sum to one.
    pub fn new(power_reflectivity: F, power_transmission: F, power_loss: F) -> Result<Self, Error> {
        let spec = Self {
            power_reflectivity,
            power_transmission,
            power_loss,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// An opaque metal coating: zero transmission, loss = 1 − reflectivity.
    pub fn opaque_metal(power_reflectivity: F) -> Result<Self, Error> {
        Self::new(power_reflectivity, F::zero(), F::one() - power_reflectivity)
    }

    pub fn validate(&self) -> Result<(), Error> {
        if !(self.power_reflectivity > F::zero() && self.power_reflectivity < F::one()) {
            return Err(Error::InvalidParameter(format!(
                "power_reflectivity must lie in (0, 1), got {}",
                self.power_reflectivity
            )));
        }
        for (name, v) in [
            ("power_transmission", self.power_transmission),
            ("power_loss", self.power_loss),
        ] {
            if !(v >= F::zero() && v < F::one()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must lie in [0, 1), got {v}"
                )));
            }
        }
        let sum = self.power_reflectivity + self.power_transmission + self.power_loss;
        if (sum - F::one()).abs() > F::of(MIRROR_PARTITION_TOL) {
            return Err(Error::InvalidParameter(format!(
                "power coefficients must sum to 1 within {MIRROR_PARTITION_TOL}, got {sum}"
            )));
        }
        Ok(())
    }

    pub fn amplitude_reflection(&self) -> F {
        self.power_reflectivity.sqrt()
    }

    pub fn amplitude_transmission(&self) -> F {
        self.power_transmission.sqrt()
    }
}

/// The coated single-mode fibre forming the planar cavity mirror.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FibreSpec<F> {
    /// 1/e^2 intensity radius of the guided mode (m).
    pub mode_waist: F,
    /// Transverse displacement of the fibre core from the cavity axis (m).
    pub core_offset: [F; 2],
    /// Coating of the fibre tip.
    pub mirror: MirrorSpec<F>,
}

impl<F: Real> Default for FibreSpec<F> {
    fn default() -> Self {
        Self {
            mode_waist: F::of(2.7e-6),
            core_offset: [F::zero(); 2],
            mirror: MirrorSpec {
                power_reflectivity: F::of(0.987),
                power_transmission: F::of(0.012),
                power_loss: F::of(0.001),
            },
        }
    }
}

impl<F: Real> FibreSpec<F> {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.mode_waist > F::zero()) {
            return Err(Error::InvalidParameter(format!(
                "mode_waist must be strictly positive, got {}",
                self.mode_waist
            )));
        }
        self.mirror.validate()
    }

    /// Radial core offset |core_offset| (m).
    pub fn offset_radius(&self) -> F {
        self.core_offset[0].hypot(self.core_offset[1])
    }
}

/// Plano-concave cavity geometry at a working wavelength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavityGeometry<F> {
    /// Mirror separation (m).
    pub length: F,
    /// Radius of curvature of the concave micro-mirror (m).
    pub radius_of_curvature: F,
    /// Vacuum wavelength of the interrogation light (m).
    pub wavelength: F,
}

impl<F: Real> CavityGeometry<F> {
    pub fn new(length: F, radius_of_curvature: F, wavelength: F) -> Result<Self, Error> {
        let geom = Self {
            length,
            radius_of_curvature,
            wavelength,
        };
        geom.validate()?;
        Ok(geom)
    }

    pub fn validate(&self) -> Result<(), Error> {
        if !(self.wavelength > F::zero()) {
            return Err(Error::InvalidParameter(format!(
                "wavelength must be strictly positive, got {}",
                self.wavelength
            )));
        }
        if !(self.length > F::zero()) || self.length >= self.radius_of_curvature {
            return Err(Error::UnstableCavity {
                length: self.length.widen(),
                radius: self.radius_of_curvature.widen(),
            });
        }
        Ok(())
    }

    /// 1/e^2 intensity radius of the fundamental mode at the planar (fibre)
    /// mirror: w_C = sqrt((λ/π) sqrt(L R − L^2)).
    pub fn mode_waist(&self) -> Result<F, Error> {
        self.validate()?;
        let l = self.length;
        let r = self.radius_of_curvature;
        Ok(((self.wavelength / F::PI()) * (l * r - l * l).sqrt()).sqrt())
    }

    /// One-way Gouy angle arctan(sqrt(R/L − 1)) entering the transverse
    /// mode spacing.
    pub fn gouy_angle(&self) -> Result<F, Error> {
        self.validate()?;
        Ok((self.radius_of_curvature / self.length - F::one()).sqrt().atan())
    }

    /// Frequency spacing between the fundamental and the Hermite-Gauss mode
    /// of indices (l, m): δν = c (l+m) arctan(sqrt(R/L − 1)) / (2π L).
    pub fn transverse_mode_spacing(&self, l: u32, m: u32) -> Result<F, Error> {
        let angle = self.gouy_angle()?;
        let order = F::of(f64::from(l + m));
        Ok(F::of(SPEED_OF_LIGHT) * order * angle / (F::of(2.0) * F::PI() * self.length))
    }
}

/// Free spectral range Δν = c / 2L (Hz).
pub fn free_spectral_range<F: Real>(length: F) -> F {
    F::of(SPEED_OF_LIGHT) / (F::of(2.0) * length)
}

/// Radius of curvature from a measured transverse mode spacing; exact
/// inverse of [`CavityGeometry::transverse_mode_spacing`].
pub fn curvature_from_mode_spacing<F: Real>(
    spacing: F,
    length: F,
    order: u32,
) -> Result<F, Error> {
    if order == 0 {
        return Err(Error::OutOfRange("mode order must be at least 1".into()));
    }
    let angle =
        spacing * F::of(2.0) * F::PI() * length / (F::of(SPEED_OF_LIGHT) * F::of(f64::from(order)));
    if !(angle > F::zero() && angle < F::FRAC_PI_2()) {
        return Err(Error::OutOfRange(format!(
            "implied Gouy angle {angle} rad outside (0, pi/2)"
        )));
    }
    Ok(length * (F::one() + angle.tan().powi(2)))
}

/// Amplitude overlap of two displaced fundamental Gaussian modes:
/// η = (2 w_C w_F / (w_C^2 + w_F^2)) exp(−r^2 / (w_C^2 + w_F^2)).
pub fn mode_overlap<F: Real>(cavity_waist: F, fibre_waist: F, offset: F) -> F {
    let sum_sq = cavity_waist * cavity_waist + fibre_waist * fibre_waist;
    (F::of(2.0) * cavity_waist * fibre_waist / sum_sq) * (-offset * offset / sum_sq).exp()
}

/// The same overlap evaluated as a 2-D Simpson quadrature of the normalised
/// mode product over a ±6·max(w_C, w_F) window; absolute error well below
/// 1e-6. Serves as the independent oracle for [`mode_overlap`].
pub fn overlap_numeric<F: Real>(cavity_waist: F, fibre_waist: F, offset: F) -> F {
    let half = F::of(6.0) * cavity_waist.max(fibre_waist);
    let n = 512; // even; ~20 Simpson points per waist at the default window
    let h = F::of(2.0) * half / F::of(n as f64);
    let norm = F::of(2.0) / (F::PI() * cavity_waist * fibre_waist);
    let integrand = |x: F, y: F| {
        let dx = x - offset;
        let fib = -(dx * dx + y * y) / (fibre_waist * fibre_waist);
        let cav = -(x * x + y * y) / (cavity_waist * cavity_waist);
        (fib + cav).exp()
    };
    let weight = |i: usize| -> F {
        if i == 0 || i == n {
            F::one()
        } else if i % 2 == 1 {
            F::of(4.0)
        } else {
            F::of(2.0)
        }
    };
    let mut sum = F::zero();
    for i in 0..=n {
        let x = -half + F::of(i as f64) * h;
        let wx = weight(i);
        let mut row = F::zero();
        for j in 0..=n {
            let y = -half + F::of(j as f64) * h;
            row = row + weight(j) * integrand(x, y);
        }
        sum = sum + wx * row;
    }
    norm * sum * h * h / F::of(9.0)
}

/// 1-D amplitude overlap of a displaced fundamental Gaussian (waist
/// `fibre_waist`, centre offset `offset`) with the Hermite-Gauss mode of
/// order `n` and waist `cavity_waist`.
///
/// Closed form from the Hermite generating function; order 0 reduces to the
/// 1-D factor of [`mode_overlap`].
pub fn hg_overlap_1d<F: Real>(cavity_waist: F, fibre_waist: F, offset: F, n: usize) -> F {
    let sum_sq = cavity_waist * cavity_waist + fibre_waist * fibre_waist;
    let c0 = (F::of(2.0) * cavity_waist * fibre_waist / sum_sq).sqrt()
        * (-offset * offset / sum_sq).exp();
    c0 * hg_overlap_ratio(cavity_waist, fibre_waist, offset, n)
}

/// c_n / c_0 of the expansion above.
fn hg_overlap_ratio<F: Real>(cavity_waist: F, fibre_waist: F, offset: F, n: usize) -> F {
    let a = (fibre_waist * fibre_waist).recip();
    let b = (cavity_waist * cavity_waist).recip();
    let p = F::of(2.0) * F::SQRT_2() * a * offset / (cavity_waist * (a + b));
    let q = (b - a) / (a + b);
    // h_k = k! [t^k] exp(p t + q t^2), via h_{k+1} = p h_k + 2 q k h_{k-1}.
    let mut h_prev = F::one();
    let mut h = p;
    if n == 0 {
        return F::one();
    }
    for k in 1..n {
        let next = p * h + F::of(2.0) * q * F::of(k as f64) * h_prev;
        h_prev = h;
        h = next;
    }
    let mut norm = F::one(); // 2^n n!
    for k in 1..=n {
        norm = norm * F::of(2.0) * F::of(k as f64);
    }
    h / norm.sqrt()
}

/// Power coupled into all Hermite-Gauss modes of total order `order`,
/// relative to the fundamental, for a fibre mode displaced by
/// `(offset_x, offset_y)`.
pub fn hg_relative_power<F: Real>(
    cavity_waist: F,
    fibre_waist: F,
    offset: [F; 2],
    order: usize,
) -> F {
    let mut total = F::zero();
    for l in 0..=order {
        let m = order - l;
        let rx = hg_overlap_ratio(cavity_waist, fibre_waist, offset[0], l);
        let ry = hg_overlap_ratio(cavity_waist, fibre_waist, offset[1], m);
        total = total + (rx * ry).powi(2);
    }
    total
}

/// Effective fibre-mirror reflectivity seen by the guided mode:
/// r1a = sqrt(r1^2 + t1^2 (1 − η^2)); mode-mismatched light is reflected
/// straight back into the fibre.
pub fn effective_fibre_reflectivity<F: Real>(fibre: &FibreSpec<F>, overlap: F) -> F {
    let r1_sq = fibre.mirror.power_reflectivity;
    let t1_sq = fibre.mirror.power_transmission;
    (r1_sq + t1_sq * (F::one() - overlap * overlap)).sqrt()
}

/// Finesse and half-linewidth from the amplitude reflectivities and length:
/// finesse = π sqrt(r1 r2) / (1 − r1 r2), κ = π · (FSR / finesse) in rad/s.
pub fn linewidth_and_finesse<F: Real>(r1: F, r2: F, length: F) -> Result<(F, F), Error> {
    let rr = r1 * r2;
    if !(rr > F::zero() && rr < F::one()) {
        return Err(Error::InvalidParameter(format!(
            "amplitude product r1 r2 must lie in (0, 1), got {rr}"
        )));
    }
    let finesse = F::PI() * rr.sqrt() / (F::one() - rr);
    let fwhm = free_spectral_range(length) / finesse;
    Ok((finesse, F::PI() * fwhm))
}

/// Vacuum coupling rate g = sqrt(3 c λ^2 γ / (π^2 w_C^2 L)) (rad/s), with
/// γ the amplitude decay rate of the emitter (rad/s).
pub fn cqed_coupling<F: Real>(cavity_waist: F, length: F, wavelength: F, gamma: F) -> F {
    let num = F::of(3.0) * F::of(SPEED_OF_LIGHT) * wavelength * wavelength * gamma;
    let den = F::PI() * F::PI() * cavity_waist * cavity_waist * length;
    (num / den).sqrt()
}

/// Single-emitter cooperativity C = branching · g^2 / (2 κ γ).
///
/// With `g` from [`cqed_coupling`], γ cancels and C depends only on the
/// cavity geometry, κ and the branching ratio.
pub fn cooperativity<F: Real>(g: F, kappa: F, gamma: F, branching: F) -> F {
    branching * g * g / (F::of(2.0) * kappa * gamma)
}

/// Quantities derived once from the cavity configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedOptics<F> {
    /// Fundamental mode waist at the fibre mirror (m).
    pub cavity_waist: F,
    /// Amplitude overlap of fibre and cavity modes.
    pub overlap: F,
    /// Effective fibre amplitude reflectivity for the guided mode.
    pub effective_fibre_reflectivity: F,
    pub finesse: F,
    /// Half-linewidth κ (rad/s).
    pub half_linewidth: F,
    /// Free spectral range (Hz).
    pub fsr: F,
}

/// A fully configured fibre-coupled microcavity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavityOptics<F> {
    pub geometry: CavityGeometry<F>,
    pub fibre: FibreSpec<F>,
    pub micro_mirror: MirrorSpec<F>,
    pub derived: DerivedOptics<F>,
}

impl<F: Real> CavityOptics<F> {
    pub fn new(
        geometry: CavityGeometry<F>,
        fibre: FibreSpec<F>,
        micro_mirror: MirrorSpec<F>,
    ) -> Result<Self, Error> {
        fibre.validate()?;
        micro_mirror.validate()?;
        let cavity_waist = geometry.mode_waist()?;
        let overlap = mode_overlap(cavity_waist, fibre.mode_waist, fibre.offset_radius());
        let r1a = effective_fibre_reflectivity(&fibre, overlap);
        let (finesse, half_linewidth) = linewidth_and_finesse(
            fibre.mirror.amplitude_reflection(),
            micro_mirror.amplitude_reflection(),
            geometry.length,
        )?;
        let derived = DerivedOptics {
            cavity_waist,
            overlap,
            effective_fibre_reflectivity: r1a,
            finesse,
            half_linewidth,
            fsr: free_spectral_range(geometry.length),
        };

        let tol = F::of(1e-9);
        if overlap < -tol || overlap > F::one() + tol {
            return Err(Error::InvalidParameter(format!(
                "mode overlap {overlap} outside [0, 1]"
            )));
        }
        let r1 = fibre.mirror.amplitude_reflection();
        let r_max = (F::one() - fibre.mirror.power_loss).sqrt();
        if r1a < r1 - tol || r1a > r_max + tol {
            return Err(Error::InvalidParameter(format!(
                "effective reflectivity {r1a} outside [{r1}, {r_max}]"
            )));
        }

        Ok(Self {
            geometry,
            fibre,
            micro_mirror,
            derived,
        })
    }

    /// Complex reflected amplitude at round-trip phase φ:
    /// r(φ) = r1a − r2 t1^2 η^2 e^{iφ} / (1 − r1 r2 e^{iφ}).
    fn reflection_amplitude(&self, phi: F) -> Complex<F> {
        let r1 = self.fibre.mirror.amplitude_reflection();
        let r2 = self.micro_mirror.amplitude_reflection();
        let coupled =
            r2 * self.fibre.mirror.power_transmission * self.derived.overlap * self.derived.overlap;
        let phase = Complex::from_polar(F::one(), phi);
        Complex::new(self.derived.effective_fibre_reflectivity, F::zero())
            - phase * coupled / (Complex::new(F::one(), F::zero()) - phase * (r1 * r2))
    }

    /// Normalised reflected power of the fundamental mode at round-trip
    /// phase φ = 4πL/λ. Minima sit exactly at φ ≡ 0 (mod 2π) with depth
    /// equal to the visibility.
    pub fn reflection_spectrum(&self, phi: F) -> F {
        self.reflection_amplitude(phi).norm_sqr()
    }

    /// Fringe visibility 1 − P_min/P_max with P_max taken as the unit
    /// off-resonant level; clamped to [0, 1].
    pub fn visibility(&self) -> F {
        (F::one() - self.reflection_spectrum(F::zero()))
            .max(F::zero())
            .min(F::one())
    }

    /// Reflected power including the higher-order transverse modes excited
    /// by the displaced fibre core. Each rendered mode adds a Lorentzian dip
    /// of the fundamental's phase width at its Gouy offset, with depth
    /// scaled by the relative coupled power; modes below
    /// [`MODE_RENDER_THRESHOLD`] are omitted.
    pub fn reflection_with_modes(&self, phi: F) -> F {
        let mut power = self.reflection_spectrum(phi);
        let depth0 = self.visibility();
        let rr = self.fibre.mirror.amplitude_reflection() * self.micro_mirror.amplitude_reflection();
        let half_width = (F::one() - rr) / rr.sqrt();
        let gouy = (self.geometry.radius_of_curvature / self.geometry.length - F::one())
            .sqrt()
            .atan();
        let offset = self.fibre.core_offset;
        for order in 1..=MAX_RENDER_ORDER {
            let rho = hg_relative_power(
                self.derived.cavity_waist,
                self.fibre.mode_waist,
                offset,
                order,
            );
            if rho < F::of(MODE_RENDER_THRESHOLD) {
                continue;
            }
            let detuning = wrap_phase(phi - F::of(2.0 * order as f64) * gouy);
            let lorentz = (F::one() + (detuning / half_width).powi(2)).recip();
            power = power - depth0 * rho * lorentz;
        }
        power.max(F::zero())
    }

    /// Reflected power at an absolute cavity length and laser frequency,
    /// higher-order modes included.
    pub fn reflected_power_at(&self, length: F, frequency: F) -> F {
        let phi = F::of(4.0) * F::PI() * length * frequency / F::of(SPEED_OF_LIGHT);
        self.reflection_with_modes(phi)
    }

    /// Derived-quantity report with fixed keys, for export.
    pub fn report(&self) -> serde_json::Value {
        serde_json::json!({
            "w_C": self.derived.cavity_waist.widen(),
            "eta": self.derived.overlap.widen(),
            "r1a": self.derived.effective_fibre_reflectivity.widen(),
            "finesse": self.derived.finesse.widen(),
            "kappa_Hz": (self.derived.half_linewidth / (F::of(2.0) * F::PI())).widen(),
            "fsr_Hz": self.derived.fsr.widen(),
            "visibility": self.visibility().widen(),
        })
    }
}

/// Wrap a phase to (−π, π].
pub fn wrap_phase<F: Real>(phi: F) -> F {
    let two_pi = F::of(2.0) * F::PI();
    let wrapped = phi - two_pi * (phi / two_pi).round();
    if wrapped <= -F::PI() {
        wrapped + two_pi
    } else {
        wrapped
    }
}
