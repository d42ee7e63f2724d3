//! Array-level assembly, alignment and tuning.
//!
//! An array realization draws per-site fabrication jitter (fibre core
//! offsets, cavity-length disorder, functional yield) from dedicated RNG
//! streams derived from (master seed, site index), so results are
//! deterministic and independent of evaluation order. A row is aligned by
//! a global gap shift plus a tilt of the fibre block, then each site is
//! tuned onto a common laser by cantilever deflection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::consts::SPEED_OF_LIGHT;
use crate::electromech::{self, ActuatorModel};
use crate::fit::{AbscissaKind, ReflectionTrace};
use crate::optics::{self, CavityGeometry, CavityOptics, FibreSpec, MirrorSpec};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Tilt alignment needs both end sites of the row functional.
    EndSiteNotFunctional { index: usize },
    /// Required tilt exceeds the physical plausibility bound.
    TiltInfeasible { tilt: f64 },
    /// An aligned length left the stable cavity range.
    UnalignableSite { index: usize, length: f64 },
    /// Scan ramp reaches the pull-in regime.
    PullInExceeded { voltage: f64 },
    InvalidParameter(String),
    Electromech(electromech::Error),
    Optics(optics::Error),
    Trace(String),
}

impl std::fmt::Display for Error {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Error::EndSiteNotFunctional { index } => {
                write!(f, "end site {index} is not functional; cannot tilt-align")
            }
            Error::TiltInfeasible { tilt } => {
                write!(f, "required tilt {tilt} rad exceeds the 1e-2 rad bound")
            }
            Error::UnalignableSite { index, length } => {
                write!(f, "aligned length {length} m at site {index} is not a stable cavity")
            }
            Error::PullInExceeded { voltage } => {
                write!(f, "ramp voltage {voltage} V reaches the pull-in regime")
            }
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::Electromech(e) => write!(f, "{e}"),
            Error::Optics(e) => write!(f, "{e}"),
            Error::Trace(msg) => write!(f, "trace: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<electromech::Error> for Error {
    fn from(e: electromech::Error) -> Self {
        Error::Electromech(e)
    }
}

impl From<optics::Error> for Error {
    fn from(e: optics::Error) -> Self {
        Error::Optics(e)
    }
}

/// Grid of cantilever sites on the chip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayLayout {
    pub sites_per_row: usize,
    pub rows: usize,
    /// Lateral pitch within a row (m).
    pub pitch: f64,
    /// Spacing between rows (m).
    pub row_spacing: f64,
}

impl Default for ArrayLayout {
    fn default() -> Self {
        Self {
            sites_per_row: 12,
            rows: 4,
            pitch: 250e-6,
            row_spacing: 1.75e-3,
        }
    }
}

impl ArrayLayout {
    pub fn validate(&self) -> Result<(), Error> {
        if self.sites_per_row < 1 || self.rows < 1 {
            return Err(Error::InvalidParameter("site counts must be at least 1".into()));
        }
        if !(self.pitch > 0.0) {
            return Err(Error::InvalidParameter("pitch must be positive".into()));
        }
        Ok(())
    }

    pub fn total_sites(&self) -> usize {
        self.sites_per_row * self.rows
    }
}

/// Interpretation of the core-position jitter amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JitterKind {
    /// `jitter_rms` is the Gaussian rms of each transverse axis.
    PerAxis,
    /// `jitter_rms` is the rms radial distance (each axis gets rms/sqrt(2)).
    Radial,
}

/// Shared fabrication parameters for sampling site realizations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteContext<F> {
    pub actuator: ActuatorModel<F>,
    /// Fibre template; per-site core offsets are drawn on top of it.
    pub fibre: FibreSpec<F>,
    pub micro_mirror: MirrorSpec<F>,
    pub radius_of_curvature: F,
    pub wavelength: F,
    /// Unactuated cavity length before disorder (m).
    pub base_length: F,
    /// Per-site cavity-length disorder rms (m); makes tilt alignment
    /// nontrivial. Not a measured number.
    pub length_disorder_rms: F,
}

/// One cantilever site of the sampled array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteRealization<F> {
    pub index: usize,
    /// Fibre core offset from the cavity axis (m).
    pub core_offset: [F; 2],
    /// Unactuated cavity length including disorder (m).
    pub nominal_length: F,
    pub functional: bool,
    pub actuator: ActuatorModel<F>,
    pub optics: CavityOptics<F>,
}

impl<F: Real> SiteRealization<F> {
    /// Column position within its row.
    pub fn column(&self, layout: &ArrayLayout) -> usize {
        self.index % layout.sites_per_row
    }

    /// Lateral coordinate within the row (m).
    pub fn lateral(&self, layout: &ArrayLayout) -> F {
        F::of(self.column(layout) as f64) * F::of(layout.pitch)
    }
}

/// Draw an array realization: per-site Gaussian core offsets, Gaussian
/// length disorder and Bernoulli functional flags. Deterministic for a
/// fixed seed; each site uses its own RNG stream so site order and
/// parallel evaluation cannot change the result.
pub fn sample_array<F>(
    layout: &ArrayLayout,
    ctx: &SiteContext<F>,
    jitter_rms: F,
    jitter_kind: JitterKind,
    yield_prob: F,
    seed: u64,
) -> Result<Vec<SiteRealization<F>>, Error>
where
    F: Real,
    StandardNormal: Distribution<F>,
{
    layout.validate()?;
    if jitter_rms < F::zero() {
        return Err(Error::InvalidParameter("jitter_rms must be non-negative".into()));
    }
    if !(yield_prob > F::zero() && yield_prob <= F::one()) {
        return Err(Error::InvalidParameter("yield_prob must lie in (0, 1]".into()));
    }
    let axis_rms = match jitter_kind {
        JitterKind::PerAxis => jitter_rms,
        JitterKind::Radial => jitter_rms / F::of(2.0).sqrt(),
    };

    let mut sites = Vec::with_capacity(layout.total_sites());
    for index in 0..layout.total_sites() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64);
        let dx: F = axis_rms * StandardNormal.sample(&mut rng);
        let dy: F = axis_rms * StandardNormal.sample(&mut rng);
        let disorder: F = ctx.length_disorder_rms * StandardNormal.sample(&mut rng);
        let functional = rng.gen::<f64>() < yield_prob.widen();

        let offset = if jitter_rms == F::zero() {
            [F::zero(); 2]
        } else {
            [dx, dy]
        };
        let nominal_length = ctx.base_length + disorder;
        let fibre = FibreSpec {
            core_offset: [ctx.fibre.core_offset[0] + offset[0], ctx.fibre.core_offset[1] + offset[1]],
            ..ctx.fibre
        };
        let geometry =
            CavityGeometry::new(nominal_length, ctx.radius_of_curvature, ctx.wavelength)?;
        let optics = CavityOptics::new(geometry, fibre, ctx.micro_mirror)?;
        sites.push(SiteRealization {
            index,
            core_offset: offset,
            nominal_length,
            functional,
            actuator: ctx.actuator,
            optics,
        });
    }
    Ok(sites)
}

/// Alignment of the fibre block against a row: a gap shift plus a tilt
/// about the axis perpendicular to the row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentState<F> {
    /// Gap adjustment applied uniformly to the row (m, signed).
    pub global_gap: F,
    /// Tilt of the fibre block (rad); lengths grow linearly along the row.
    pub tilt: F,
}

impl<F: Real> AlignmentState<F> {
    pub fn identity() -> Self {
        Self {
            global_gap: F::zero(),
            tilt: F::zero(),
        }
    }

    /// Unactuated cavity length of a site under this alignment.
    pub fn length_of(&self, site: &SiteRealization<F>, layout: &ArrayLayout) -> F {
        site.nominal_length + self.global_gap + self.tilt * site.lateral(layout)
    }
}

/// Physical plausibility bound on the fibre-block tilt (rad).
pub const MAX_TILT: f64 = 1e-2;

/// Choose gap and tilt so the first and last site of the row sit at
/// `target_length` within `tolerance`; intermediate sites follow the
/// linear interpolation plus their own height disorder.
pub fn tilt_align<F: Real>(
    row: &[SiteRealization<F>],
    layout: &ArrayLayout,
    target_length: F,
    tolerance: F,
) -> Result<AlignmentState<F>, Error> {
    if row.len() < 2 {
        return Err(Error::InvalidParameter("row needs at least two sites".into()));
    }
    let first = &row[0];
    let last = &row[row.len() - 1];
    for site in [first, last] {
        if !site.functional {
            return Err(Error::EndSiteNotFunctional { index: site.index });
        }
    }
    let span = last.lateral(layout) - first.lateral(layout);
    if !(span > F::zero()) {
        return Err(Error::InvalidParameter("end sites have no lateral separation".into()));
    }
    let tilt = (first.nominal_length - last.nominal_length) / span;
    if tilt.abs() > F::of(MAX_TILT) {
        return Err(Error::TiltInfeasible { tilt: tilt.widen() });
    }
    let global_gap = target_length - first.nominal_length - tilt * first.lateral(layout);
    let alignment = AlignmentState { global_gap, tilt };

    for site in row {
        let length = alignment.length_of(site, layout);
        if !(length > F::zero()) || length >= site.optics.geometry.radius_of_curvature {
            return Err(Error::UnalignableSite {
                index: site.index,
                length: length.widen(),
            });
        }
    }
    for site in [first, last] {
        let err = (alignment.length_of(site, layout) - target_length).abs();
        if err > tolerance {
            return Err(Error::InvalidParameter(format!(
                "end site {} misses the target by {err} m",
                site.index
            )));
        }
    }
    Ok(alignment)
}

/// Outcome of tuning one site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuneStatus {
    Tuned,
    Dead,
    PullInLimited,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiteTune<F> {
    pub index: usize,
    /// Bias that brings the site onto the laser (V); zero for dead or
    /// pull-in-limited sites.
    pub voltage: F,
    /// Laser detuning from the tuned resonance, replayed through the
    /// forward model (Hz).
    pub residual_detuning: F,
    /// Site visibility at the tuned point.
    pub visibility: F,
    pub status: TuneStatus,
}

/// Aggregate of a row-tuning run. Dead sites are excluded from the
/// summary statistics and reported by count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult<F> {
    pub sites: Vec<SiteTune<F>>,
    pub tuned: usize,
    pub dead: usize,
    pub pull_in_limited: usize,
    pub min_visibility: F,
    pub mean_visibility: F,
}

/// Tune one site onto the laser: pick the resonance reachable with the
/// smallest deflection (2L = qλ with the largest q at or below the
/// unactuated length) and solve the bias from the closed-form stable-branch
/// inverse of the force balance. The residual detuning is evaluated by
/// replaying the bias through the bisection deflection solver and the
/// resonance condition.
pub fn tune_site<F: Real>(
    site: &SiteRealization<F>,
    unactuated_length: F,
    laser_frequency: F,
) -> SiteTune<F> {
    let visibility = site.optics.visibility();
    if !site.functional {
        return SiteTune {
            index: site.index,
            voltage: F::zero(),
            residual_detuning: F::zero(),
            visibility,
            status: TuneStatus::Dead,
        };
    }
    let half_wavelength = F::of(SPEED_OF_LIGHT) / (F::of(2.0) * laser_frequency);
    let mut order = (unactuated_length / half_wavelength).floor();
    let mut deflection = unactuated_length - order * half_wavelength;
    // A length within a picometre of the next resonance is that resonance;
    // rounding in the length bookkeeping must not demand a full-FSR pull.
    if half_wavelength - deflection < F::of(1e-12) {
        order = order + F::one();
        deflection = (unactuated_length - order * half_wavelength).max(F::zero());
    }
    let pull_in = site.actuator.pull_in();
    if deflection >= pull_in.deflection {
        return SiteTune {
            index: site.index,
            voltage: F::zero(),
            residual_detuning: F::zero(),
            visibility,
            status: TuneStatus::PullInLimited,
        };
    }
    let voltage = site
        .actuator
        .voltage_for_deflection(deflection)
        .expect("deflection below pull-in");
    let replayed = site
        .actuator
        .static_deflection(voltage)
        .expect("bias below pull-in");
    let tuned_length = unactuated_length - replayed;
    let resonance = order * F::of(SPEED_OF_LIGHT) / (F::of(2.0) * tuned_length);
    SiteTune {
        index: site.index,
        voltage,
        residual_detuning: laser_frequency - resonance,
        visibility,
        status: TuneStatus::Tuned,
    }
}

/// Tune every site of an aligned row; per-site failures are recorded,
/// never fatal.
pub fn tune_all<F: Real>(
    row: &[SiteRealization<F>],
    layout: &ArrayLayout,
    alignment: &AlignmentState<F>,
    laser_frequency: F,
) -> TuneResult<F> {
    let sites: Vec<SiteTune<F>> = row
        .iter()
        .map(|site| tune_site(site, alignment.length_of(site, layout), laser_frequency))
        .collect();
    let mut tuned = 0;
    let mut dead = 0;
    let mut pull_in_limited = 0;
    let mut min_visibility = F::infinity();
    let mut sum_visibility = F::zero();
    let mut live = 0;
    for s in &sites {
        match s.status {
            TuneStatus::Tuned => tuned += 1,
            TuneStatus::Dead => dead += 1,
            TuneStatus::PullInLimited => pull_in_limited += 1,
        }
        if s.status != TuneStatus::Dead {
            min_visibility = min_visibility.min(s.visibility);
            sum_visibility = sum_visibility + s.visibility;
            live += 1;
        }
    }
    let mean_visibility = if live > 0 {
        sum_visibility / F::of(live as f64)
    } else {
        F::zero()
    };
    if live == 0 {
        min_visibility = F::zero();
    }
    TuneResult {
        sites,
        tuned,
        dead,
        pull_in_limited,
        min_visibility,
        mean_visibility,
    }
}

/// Linear voltage ramp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoltageRamp<F> {
    pub start: F,
    pub end: F,
    pub points: usize,
}

/// Reflected power versus bias for one site: deflection narrows the cavity
/// through successive resonances of the interrogation laser (taken at the
/// site's design wavelength), higher-order-mode dips included for offset
/// cores.
pub fn scan_site<F: Real>(
    site: &SiteRealization<F>,
    unactuated_length: F,
    ramp: VoltageRamp<F>,
) -> Result<ReflectionTrace<F>, Error> {
    if ramp.points < 2 || !(ramp.end > ramp.start) {
        return Err(Error::InvalidParameter("ramp needs end > start and at least 2 points".into()));
    }
    let pull_in = site.actuator.pull_in();
    if ramp.end >= pull_in.voltage {
        return Err(Error::PullInExceeded {
            voltage: ramp.end.widen(),
        });
    }
    let laser_frequency = F::of(SPEED_OF_LIGHT) / site.optics.geometry.wavelength;
    let step = (ramp.end - ramp.start) / F::of((ramp.points - 1) as f64);
    let mut samples = Vec::with_capacity(ramp.points);
    for i in 0..ramp.points {
        let v = ramp.start + step * F::of(i as f64);
        let deflection = site.actuator.static_deflection(v)?;
        let power = site
            .optics
            .reflected_power_at(unactuated_length - deflection, laser_frequency);
        samples.push((v, power));
    }
    ReflectionTrace::new(AbscissaKind::Voltage, samples, F::zero())
        .map_err(|e| Error::Trace(format!("{e}")))
}

/// Stack equally-gridded traces into one CSV with 0.1 vertical offsets per
/// site, the usual presentation for row overview plots.
pub fn write_stacked_csv<F: Real>(
    traces: &[(usize, ReflectionTrace<F>)],
    path: &std::path::Path,
) -> Result<(), Error> {
    if traces.is_empty() {
        return Err(Error::InvalidParameter("no traces to stack".into()));
    }
    let n = traces[0].1.len();
    for (_, t) in traces {
        if t.len() != n {
            return Err(Error::InvalidParameter("traces must share one grid".into()));
        }
    }
    let mut body = String::from("x");
    for (index, _) in traces {
        body.push_str(&format!(",site_{index}"));
    }
    body.push('\n');
    for row in 0..n {
        body.push_str(&format!("{}", traces[0].1.samples[row].0.widen()));
        for (i, (_, t)) in traces.iter().enumerate() {
            body.push_str(&format!(",{}", t.samples[row].1.widen() + 0.1 * i as f64));
        }
        body.push('\n');
    }
    crate::fit::write_atomic(path, body.as_bytes()).map_err(|e| Error::Trace(format!("{e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::electromech::{CantileverGeometry, MaterialProps};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn context() -> SiteContext<f64> {
        SiteContext {
            actuator: ActuatorModel::from_geometry(
                &CantileverGeometry::default(),
                &MaterialProps::default(),
            )
            .unwrap(),
            fibre: FibreSpec::default(),
            micro_mirror: MirrorSpec::opaque_metal(0.98).unwrap(),
            radius_of_curvature: 51e-6,
            wavelength: 780e-9,
            base_length: 42.9e-6,
            length_disorder_rms: 50e-9,
        }
    }

    fn laser() -> f64 {
        crate::consts::SPEED_OF_LIGHT / 780e-9
    }

    #[test]
    fn sampling_is_deterministic_and_zero_jitter_is_exact() {
        let layout = ArrayLayout::default();
        let ctx = context();
        let a = sample_array(&layout, &ctx, 500e-9, JitterKind::PerAxis, 0.9, 7).unwrap();
        let b = sample_array(&layout, &ctx, 500e-9, JitterKind::PerAxis, 0.9, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 48);

        let clean = sample_array(&layout, &ctx, 0.0, JitterKind::PerAxis, 1.0, 7).unwrap();
        assert!(clean.iter().all(|s| s.core_offset == [0.0, 0.0] && s.functional));
    }

    #[test]
    fn jitter_rms_matches_specification() {
        let layout = ArrayLayout {
            sites_per_row: 10_000,
            rows: 1,
            ..ArrayLayout::default()
        };
        let mut ctx = context();
        ctx.length_disorder_rms = 0.0;
        let sites = sample_array(&layout, &ctx, 500e-9, JitterKind::PerAxis, 1.0, 123).unwrap();
        let rms_x = (sites.iter().map(|s| s.core_offset[0].powi(2)).sum::<f64>()
            / sites.len() as f64)
            .sqrt();
        let rms_y = (sites.iter().map(|s| s.core_offset[1].powi(2)).sum::<f64>()
            / sites.len() as f64)
            .sqrt();
        assert_relative_eq!(rms_x, 500e-9, max_relative = 0.02);
        assert_relative_eq!(rms_y, 500e-9, max_relative = 0.02);

        let radial = sample_array(&layout, &ctx, 500e-9, JitterKind::Radial, 1.0, 123).unwrap();
        let rms_r = (radial
            .iter()
            .map(|s| s.core_offset[0].powi(2) + s.core_offset[1].powi(2))
            .sum::<f64>()
            / radial.len() as f64)
            .sqrt();
        assert_relative_eq!(rms_r, 500e-9, max_relative = 0.02);
    }

    #[test]
    fn yield_statistics_are_binomial() {
        let layout = ArrayLayout::default();
        let ctx = context();
        let mut total = 0usize;
        let seeds = 1000;
        for seed in 0..seeds {
            let sites = sample_array(&layout, &ctx, 0.0, JitterKind::PerAxis, 0.9, seed).unwrap();
            total += sites.iter().filter(|s| s.functional).count();
        }
        let mean = total as f64 / seeds as f64;
        assert!((mean - 43.2).abs() < 0.5, "mean functional count {mean}");
    }

    #[test]
    fn tilt_align_geometry() {
        let layout = ArrayLayout::default();
        let ctx = context();
        // Zero disorder: ends already equal, tilt exactly zero.
        let mut clean_ctx = ctx.clone();
        clean_ctx.length_disorder_rms = 0.0;
        let clean = sample_array(&layout, &clean_ctx, 0.0, JitterKind::PerAxis, 1.0, 1).unwrap();
        let row = &clean[..12];
        let alignment = tilt_align(row, &layout, 42.9e-6, 3.7e-9).unwrap();
        assert_eq!(alignment.tilt, 0.0);
        assert_abs_diff_eq!(alignment.length_of(&row[0], &layout), 42.9e-6, epsilon = 1e-18);

        // A 100 nm end mismatch over 11 pitches.
        let mut sites = row.to_vec();
        sites[11].nominal_length += 100e-9;
        let alignment = tilt_align(&sites, &layout, 42.9e-6, 3.7e-9).unwrap();
        assert_relative_eq!(alignment.tilt.abs(), 3.6e-5, max_relative = 0.02);
    }

    #[test]
    fn tilt_align_hits_target_over_seeds() {
        let layout = ArrayLayout::default();
        let ctx = context();
        for seed in 0..100 {
            let sites = sample_array(&layout, &ctx, 500e-9, JitterKind::PerAxis, 1.0, seed).unwrap();
            let row = &sites[..12];
            let alignment = tilt_align(row, &layout, 42.9e-6, 3.7e-9).unwrap();
            for site in [&row[0], &row[11]] {
                let err = (alignment.length_of(site, &layout) - 42.9e-6).abs();
                assert!(err <= 3.7e-9, "seed {seed}: end error {err}");
            }
        }
    }

    #[test]
    fn tilt_align_rejects_dead_ends_and_huge_tilt() {
        let layout = ArrayLayout::default();
        let ctx = context();
        let mut sites = sample_array(&layout, &ctx, 0.0, JitterKind::PerAxis, 1.0, 1).unwrap()
            [..12]
            .to_vec();
        sites[0].functional = false;
        assert!(matches!(
            tilt_align(&sites, &layout, 42.9e-6, 3.7e-9),
            Err(Error::EndSiteNotFunctional { index: 0 })
        ));
        sites[0].functional = true;
        sites[11].nominal_length += 50e-6; // would need ~1.8e-2 rad
        assert!(matches!(
            tilt_align(&sites, &layout, 42.9e-6, 3.7e-9),
            Err(Error::TiltInfeasible { .. })
        ));
    }

    #[test]
    fn tune_site_already_resonant() {
        let ctx = context();
        let layout = ArrayLayout::default();
        let sites = sample_array(&layout, &ctx, 0.0, JitterKind::PerAxis, 1.0, 1).unwrap();
        // 42.9 µm is an exact multiple of λ/2 = 390 nm.
        let tune = tune_site(&sites[0], 42.9e-6, laser());
        assert_eq!(tune.status, TuneStatus::Tuned);
        assert!(tune.voltage.abs() < 1e-3, "voltage {}", tune.voltage);
        assert!(tune.residual_detuning.abs() < 1e6, "residual {}", tune.residual_detuning);
    }

    #[test]
    fn tune_site_deflection_always_sufficient() {
        // One free spectral range of tuning needs at most λ/2 = 390 nm,
        // always below the 667 nm pull-in deflection.
        let ctx = context();
        let layout = ArrayLayout::default();
        let sites = sample_array(&layout, &ctx, 0.0, JitterKind::PerAxis, 1.0, 3).unwrap();
        for shift in [0.0, 97e-9, 195e-9, 389e-9] {
            let tune = tune_site(&sites[0], 42.9e-6 + shift, laser());
            assert_eq!(tune.status, TuneStatus::Tuned);
            let deflection = sites[0].actuator.static_deflection(tune.voltage).unwrap();
            assert!(deflection <= 390e-9 + 1e-12, "deflection {deflection}");
        }
    }

    #[test]
    fn tune_site_replay_residual_within_contract() {
        let ctx = context();
        let layout = ArrayLayout::default();
        let kappa_hz = 2.0 * std::f64::consts::PI * 14.97e9 / (2.0 * std::f64::consts::PI);
        for seed in 0..20 {
            let sites = sample_array(&layout, &ctx, 500e-9, JitterKind::PerAxis, 1.0, seed).unwrap();
            let row = &sites[..12];
            let alignment = tilt_align(row, &layout, 42.9e-6, 3.7e-9).unwrap();
            let result = tune_all(row, &layout, &alignment, laser());
            assert_eq!(result.tuned, 12);
            for s in &result.sites {
                assert!(
                    s.residual_detuning.abs() < kappa_hz / 100.0,
                    "site {}: residual {}",
                    s.index,
                    s.residual_detuning
                );
            }
        }
    }

    #[test]
    fn tune_site_pull_in_limited_with_small_gap() {
        let mut ctx = context();
        // Narrow the gap so pull-in happens at 100 nm, below the worst-case
        // λ/2 tuning deflection.
        ctx.actuator.gap = 300e-9;
        let layout = ArrayLayout::default();
        let sites = sample_array(&layout, &ctx, 0.0, JitterKind::PerAxis, 1.0, 1).unwrap();
        let tune = tune_site(&sites[0], 42.9e-6 + 200e-9, laser());
        assert_eq!(tune.status, TuneStatus::PullInLimited);
    }

    #[test]
    fn tune_all_nominal_row_high_contrast() {
        let layout = ArrayLayout::default();
        let mut ctx = context();
        ctx.length_disorder_rms = 0.0;
        let sites = sample_array(&layout, &ctx, 0.0, JitterKind::PerAxis, 1.0, 5).unwrap();
        let row = &sites[..12];
        let alignment = tilt_align(row, &layout, 42.9e-6, 3.7e-9).unwrap();
        let result = tune_all(row, &layout, &alignment, laser());
        assert_eq!(result.tuned, 12);
        assert!(result.min_visibility > 0.85, "min visibility {}", result.min_visibility);
        // Zero jitter and zero disorder: every site identical.
        for s in &result.sites[1..] {
            assert_eq!(s.voltage, result.sites[0].voltage);
            assert_eq!(s.visibility, result.sites[0].visibility);
        }
    }

    #[test]
    fn visibility_spread_under_radial_jitter() {
        let layout = ArrayLayout::default();
        let ctx = context();
        let mut minima = Vec::new();
        for seed in 0..100 {
            let sites = sample_array(&layout, &ctx, 500e-9, JitterKind::Radial, 1.0, seed).unwrap();
            let row = &sites[..12];
            let min = row
                .iter()
                .map(|s| s.optics.visibility())
                .fold(f64::INFINITY, f64::min);
            minima.push(min);
        }
        let mean = minima.iter().sum::<f64>() / minima.len() as f64;
        assert!((0.8..1.0).contains(&mean), "mean of per-seed min visibility {mean}");
        let var = minima.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / minima.len() as f64;
        assert!(var > 0.0, "jitter must spread the visibility");
    }

    #[test]
    fn scan_shows_two_narrowing_dips() {
        let layout = ArrayLayout::default();
        let mut ctx = context();
        ctx.length_disorder_rms = 0.0;
        let sites = sample_array(&layout, &ctx, 0.0, JitterKind::PerAxis, 1.0, 1).unwrap();
        let site = &sites[0];
        let l0 = 42.9e-6 + 100e-9;
        let ramp = VoltageRamp {
            start: site.actuator.voltage_for_deflection(20e-9).unwrap(),
            end: site.actuator.voltage_for_deflection(600e-9).unwrap(),
            points: 6000,
        };
        let trace = scan_site(site, l0, ramp).unwrap();
        let dips = crate::fit::detect_dips(&trace);
        assert_eq!(dips.len(), 2, "expected exactly two fundamental dips");
        let mut by_voltage = dips.clone();
        by_voltage.sort_by(|a, b| a.center.partial_cmp(&b.center).unwrap());
        assert!(
            by_voltage[0].half_width > 2.0 * by_voltage[1].half_width,
            "later dip must be much narrower in voltage: {} vs {}",
            by_voltage[0].half_width,
            by_voltage[1].half_width
        );

        // The model value at exact resonance equals 1 − visibility.
        let resonant_deflection = 100e-9;
        let power = site.optics.reflected_power_at(
            l0 - resonant_deflection,
            crate::consts::SPEED_OF_LIGHT / 780e-9,
        );
        assert_abs_diff_eq!(power, 1.0 - site.optics.visibility(), epsilon = 1e-6);
    }

    #[test]
    fn scan_rejects_pull_in_ramp() {
        let layout = ArrayLayout::default();
        let ctx = context();
        let sites = sample_array(&layout, &ctx, 0.0, JitterKind::PerAxis, 1.0, 1).unwrap();
        let v_pi = sites[0].actuator.pull_in().voltage;
        let ramp = VoltageRamp {
            start: 0.0,
            end: v_pi + 1.0,
            points: 100,
        };
        assert!(matches!(
            scan_site(&sites[0], 42.9e-6, ramp),
            Err(Error::PullInExceeded { .. })
        ));
    }

    #[test]
    fn runs_in_f32() {
        let ctx = SiteContext::<f32> {
            actuator: ActuatorModel::from_geometry(
                &CantileverGeometry::default(),
                &MaterialProps::default(),
            )
            .unwrap(),
            fibre: FibreSpec::default(),
            micro_mirror: MirrorSpec::opaque_metal(0.98).unwrap(),
            radius_of_curvature: 51e-6,
            wavelength: 780e-9,
            base_length: 42.9e-6,
            length_disorder_rms: 50e-9,
        };
        let layout = ArrayLayout::default();
        let sites = sample_array(&layout, &ctx, 500e-9, JitterKind::PerAxis, 1.0, 2).unwrap();
        assert_eq!(sites.len(), 48);
        let alignment = tilt_align(&sites[..12], &layout, 42.9e-6, 3.7e-9).unwrap();
        let result = tune_all(
            &sites[..12],
            &layout,
            &alignment,
            crate::consts::SPEED_OF_LIGHT as f32 / 780e-9,
        );
        // f32 length bookkeeping is metre-scale with micron ulps, so only
        // the structure is checked, not detunings.
        assert_eq!(result.sites.len(), 12);
        assert!(result.min_visibility > 0.5);
    }

    #[test]
    fn full_pipeline_deterministic() {
        let layout = ArrayLayout::default();
        let ctx = context();
        let run = |seed| {
            let sites = sample_array(&layout, &ctx, 500e-9, JitterKind::PerAxis, 0.9, seed).unwrap();
            let row = sites[..12].to_vec();
            let alignment = tilt_align(&row, &layout, 42.9e-6, 3.7e-9).ok()?;
            Some(tune_all(&row, &layout, &alignment, laser()))
        };
        assert_eq!(run(42), run(42));
    }
}
