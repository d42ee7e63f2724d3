//! Reflection-trace synthesis and inverse problems.
//!
//! Traces are fitted with sums of Lorentzian dips by damped least squares
//! (Levenberg-Marquardt with a numerically differenced Jacobian); on top of
//! the raw fitter sit the measurement workflows: linewidth from a fitted
//! dip, cavity length from the free spectral range, mirror curvature from
//! the spacing between the fundamental and first higher-order dip, and
//! relinearisation of voltage scans into the length domain.

use serde::{Deserialize, Serialize};

use crate::consts::SPEED_OF_LIGHT;
use crate::electromech::{self, ActuatorModel};
use crate::optics;
use crate::real::Real;

/// Initial Marquardt damping, scaled ×10 on cost increase, ÷10 on decrease.
const LM_INITIAL_DAMPING: f64 = 1e-3;
/// Relative cost change below which the fit is declared converged.
const LM_COST_TOL: f64 = 1e-10;
/// Iteration cap; past this the best-so-far result is returned unconverged.
const LM_MAX_ITER: usize = 200;

/// Dips shallower than this fraction of the deepest dip are treated as
/// undetectable by the curvature workflow. Matches
/// [`optics::MODE_RENDER_THRESHOLD`].
pub const DIP_DETECTION_THRESHOLD: f64 = optics::MODE_RENDER_THRESHOLD;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Fewer resolvable local minima than requested peaks.
    DegenerateTrace { found: usize, needed: usize },
    /// Only the fundamental dip is resolvable; no higher-order mode present.
    MissingHigherOrder,
    /// Trace violates an invariant (ordering, range, length).
    InvalidTrace(String),
    /// CSV parse failure with its 1-based line number.
    Parse { line: usize, message: String },
    Io(String),
    Electromech(electromech::Error),
    Optics(optics::Error),
}

impl std::fmt::Display for Error {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Error::DegenerateTrace { found, needed } => {
                write!(f, "trace has {found} resolvable dips, {needed} requested")
            }
            Error::MissingHigherOrder => {
                write!(f, "no higher-order mode dip above the detection threshold")
            }
            Error::InvalidTrace(msg) => write!(f, "invalid trace: {msg}"),
            Error::Parse { line, message } => write!(f, "parse error at line {line}: {message}"),
            Error::Io(msg) => write!(f, "io error: {msg}"),
            Error::Electromech(e) => write!(f, "{e}"),
            Error::Optics(e) => write!(f, "{e}"),
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

/// What the abscissa of a trace measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AbscissaKind {
    Voltage,
    Length,
    Frequency,
}

impl AbscissaKind {
    pub fn unit(self) -> &'static str {
        match self {
            AbscissaKind::Voltage => "V",
            AbscissaKind::Length => "m",
            AbscissaKind::Frequency => "Hz",
        }
    }
}

/// A sampled reflection scan: strictly increasing abscissa, normalised
/// reflected power on the ordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionTrace<F> {
    pub abscissa_kind: AbscissaKind,
    pub samples: Vec<(F, F)>,
}

impl<F: Real> ReflectionTrace<F> {
    /// Build a trace, enforcing strictly increasing abscissa and power in
    /// [0, 1 + 3·noise_sigma].
    pub fn new(
        abscissa_kind: AbscissaKind,
        samples: Vec<(F, F)>,
        noise_sigma: F,
    ) -> Result<Self, Error> {
        if samples.len() < 2 {
            return Err(Error::InvalidTrace("need at least two samples".into()));
        }
        let upper = F::one() + F::of(3.0) * noise_sigma;
        for (i, &(x, p)) in samples.iter().enumerate() {
            if !x.is_finite() || !p.is_finite() {
                return Err(Error::InvalidTrace(format!("non-finite sample at index {i}")));
            }
            if p < F::zero() || p > upper {
                return Err(Error::InvalidTrace(format!(
                    "power {p} at index {i} outside [0, {upper}]"
                )));
            }
            if i > 0 && samples[i - 1].0 >= x {
                return Err(Error::InvalidTrace(format!(
                    "abscissa not strictly increasing at index {i}"
                )));
            }
        }
        Ok(Self {
            abscissa_kind,
            samples,
        })
    }

    /// Sample a model function over a uniform abscissa grid.
    pub fn from_fn(
        abscissa_kind: AbscissaKind,
        start: F,
        end: F,
        n: usize,
        mut f: impl FnMut(F) -> F,
    ) -> Result<Self, Error> {
        let step = (end - start) / F::of((n - 1) as f64);
        let samples = (0..n)
            .map(|i| {
                let x = start + step * F::of(i as f64);
                (x, f(x))
            })
            .collect();
        Self::new(abscissa_kind, samples, F::zero())
    }

    /// Add seeded Gaussian noise, clamped to the valid power range.
    pub fn with_noise(&self, sigma: F, seed: u64) -> Self
    where
        rand_distr::StandardNormal: rand_distr::Distribution<F>,
    {
        use rand::SeedableRng;
        use rand_distr::Distribution;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let normal = rand_distr::StandardNormal;
        let upper = F::one() + F::of(3.0) * sigma;
        let samples = self
            .samples
            .iter()
            .map(|&(x, p)| {
                let noisy: F = p + sigma * normal.sample(&mut rng);
                (x, noisy.max(F::zero()).min(upper))
            })
            .collect();
        Self {
            abscissa_kind: self.abscissa_kind,
            samples,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Write as CSV (`x,power`) next to a JSON sidecar recording the
    /// abscissa kind and unit.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<(), Error> {
        let mut body = String::from("x,power\n");
        for &(x, p) in &self.samples {
            body.push_str(&format!("{},{}\n", x.widen(), p.widen()));
        }
        write_atomic(path, body.as_bytes())?;
        let sidecar = serde_json::json!({
            "abscissa_kind": self.abscissa_kind,
            "abscissa_unit": self.abscissa_kind.unit(),
            "power_unit": "normalised",
        });
        write_atomic(
            &sidecar_path(path),
            serde_json::to_string_pretty(&sidecar)
                .expect("sidecar serialises")
                .as_bytes(),
        )
    }

    /// Read a CSV trace written by [`Self::write_csv`]; the sidecar is
    /// consulted for the abscissa kind when present.
    pub fn read_csv(path: &std::path::Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{path:?}: {e}")))?;
        let mut samples = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if idx == 0 {
                if line != "x,power" {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("expected header 'x,power', got '{line}'"),
                    });
                }
                continue;
            }
            let mut fields = line.split(',');
            let parse = |s: Option<&str>, what: &str| -> Result<F, Error> {
                let s = s.ok_or(Error::Parse {
                    line: lineno,
                    message: format!("missing {what} column"),
                })?;
                s.trim()
                    .parse::<f64>()
                    .map(F::of)
                    .map_err(|e| Error::Parse {
                        line: lineno,
                        message: format!("bad {what} '{s}': {e}"),
                    })
            };
            let x = parse(fields.next(), "x")?;
            let p = parse(fields.next(), "power")?;
            if fields.next().is_some() {
                return Err(Error::Parse {
                    line: lineno,
                    message: "too many columns".into(),
                });
            }
            samples.push((x, p));
        }
        let kind = std::fs::read_to_string(sidecar_path(path))
            .ok()
            .and_then(|s| serde_json::from_str::<serde_json::Value>(&s).ok())
            .and_then(|v| {
                serde_json::from_value::<AbscissaKind>(v.get("abscissa_kind")?.clone()).ok()
            })
            .unwrap_or(AbscissaKind::Frequency);
        // Generous bound: noisy instrument traces may exceed unity slightly.
        Self::new(kind, samples, F::of(0.2))
    }
}

fn sidecar_path(path: &std::path::Path) -> std::path::PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    std::path::PathBuf::from(p)
}

/// Write-then-rename so partial runs never leave corrupt files.
pub fn write_atomic(path: &std::path::Path, bytes: &[u8]) -> Result<(), Error> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::Io(format!("{tmp:?}: {e}")))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::Io(format!("{path:?}: {e}")))
}

/// One Lorentzian dip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak<F> {
    pub center: F,
    pub half_width: F,
    pub depth: F,
}

/// Baseline minus a sum of Lorentzian dips:
/// P(x) = baseline − Σ depth_i / (1 + ((x − c_i)/w_i)^2).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LorentzianModel<F> {
    pub baseline: F,
    pub peaks: Vec<Peak<F>>,
}

impl<F: Real> LorentzianModel<F> {
    pub fn validate(&self) -> Result<(), Error> {
        for (i, p) in self.peaks.iter().enumerate() {
            if !(p.half_width > F::zero()) {
                return Err(Error::InvalidTrace(format!(
                    "peak {i}: half_width must be positive, got {}",
                    p.half_width
                )));
            }
            if !(p.depth > F::zero() && p.depth <= self.baseline) {
                return Err(Error::InvalidTrace(format!(
                    "peak {i}: depth must lie in (0, baseline], got {}",
                    p.depth
                )));
            }
        }
        Ok(())
    }

    pub fn evaluate(&self, x: F) -> F {
        let mut p = self.baseline;
        for peak in &self.peaks {
            let t = (x - peak.center) / peak.half_width;
            p = p - peak.depth / (F::one() + t * t);
        }
        p
    }

    fn to_params(&self) -> Vec<F> {
        let mut v = vec![self.baseline];
        for p in &self.peaks {
            v.extend_from_slice(&[p.center, p.half_width, p.depth]);
        }
        v
    }

    fn from_params(params: &[F]) -> Self {
        let peaks = params[1..]
            .chunks_exact(3)
            .map(|c| Peak {
                center: c[0],
                half_width: c[1].abs(),
                depth: c[2],
            })
            .collect();
        Self {
            baseline: params[0],
            peaks,
        }
    }
}

/// Outcome of a Lorentzian fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult<F> {
    pub model: LorentzianModel<F>,
    pub residual_rms: F,
    /// Asymptotic standard errors, ordered like the parameter vector:
    /// baseline, then (center, half_width, depth) per peak.
    pub parameter_uncertainties: Vec<F>,
    pub converged: bool,
    pub iterations: usize,
}

/// A dip candidate from the threshold detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DipCandidate<F> {
    pub center: F,
    pub half_width: F,
    pub depth: F,
}

/// Locate dips as local minima below baseline − 3·MAD (the MAD-based noise
/// estimate taken over the whole trace). Minima are processed deepest-first
/// and suppressed inside twice the half-width of an already-accepted dip,
/// so a noisy dip floor yields one candidate. Returns candidates
/// deepest-first.
pub fn detect_dips<F: Real>(trace: &ReflectionTrace<F>) -> Vec<DipCandidate<F>> {
    let mut powers: Vec<F> = trace.samples.iter().map(|&(_, p)| p).collect();
    let baseline = median(&mut powers);
    let mut deviations: Vec<F> = trace
        .samples
        .iter()
        .map(|&(_, p)| (p - baseline).abs())
        .collect();
    let sigma = median(&mut deviations) * F::of(1.4826);
    let threshold = baseline - F::of(3.0) * sigma;

    let samples = &trace.samples;
    let n = samples.len();
    let mut minima: Vec<usize> = (1..n - 1)
        .filter(|&i| {
            samples[i].1 < threshold
                && samples[i].1 <= samples[i - 1].1
                && samples[i].1 <= samples[i + 1].1
        })
        .collect();
    minima.sort_by(|&a, &b| samples[a].1.partial_cmp(&samples[b].1).expect("finite"));

    let min_width = (samples[1].0 - samples[0].0).abs();
    let mut candidates: Vec<DipCandidate<F>> = Vec::new();
    for i in minima {
        let (x_min, p_min) = samples[i];
        let depth = baseline - p_min;
        // Width from the half-depth crossings around the minimum.
        let half_level = baseline - depth / F::of(2.0);
        let mut l = i;
        while l > 0 && samples[l - 1].1 < half_level {
            l -= 1;
        }
        let mut r = i;
        while r < n - 1 && samples[r + 1].1 < half_level {
            r += 1;
        }
        let half_width = ((samples[r].0 - samples[l].0) / F::of(2.0)).max(min_width);
        let shadowed = candidates.iter().any(|c| {
            (x_min - c.center).abs() < F::of(2.0) * c.half_width.max(half_width)
        });
        if !shadowed {
            candidates.push(DipCandidate {
                center: x_min,
                half_width,
                depth,
            });
        }
    }
    candidates
}

fn median<F: Real>(values: &mut [F]) -> F {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / F::of(2.0)
    }
}

/// Fit `n_peaks` Lorentzian dips to a trace.
///
/// Damped Gauss-Newton (Levenberg-Marquardt, multiplicative diagonal
/// damping) with central-difference Jacobians; converged when the relative
/// cost change drops below 1e-10, capped at 200 iterations (the best-so-far
/// model is returned with `converged = false` when the cap bites). Without
/// an explicit `initial_guess` the starting point comes from the `n_peaks`
/// deepest detected dips.
pub fn fit_lorentzians<F: Real>(
    trace: &ReflectionTrace<F>,
    n_peaks: usize,
    initial_guess: Option<LorentzianModel<F>>,
) -> Result<FitResult<F>, Error> {
    if n_peaks == 0 {
        return Err(Error::InvalidTrace("n_peaks must be at least 1".into()));
    }
    let needed = 5 * (3 * n_peaks + 1);
    if trace.len() < needed {
        return Err(Error::InvalidTrace(format!(
            "need at least {needed} samples to fit {n_peaks} peaks, trace has {}",
            trace.len()
        )));
    }

    let initial = match initial_guess {
        Some(model) => model,
        None => {
            let candidates = detect_dips(trace);
            if candidates.len() < n_peaks {
                return Err(Error::DegenerateTrace {
                    found: candidates.len(),
                    needed: n_peaks,
                });
            }
            let mut powers: Vec<F> = trace.samples.iter().map(|&(_, p)| p).collect();
            let baseline = median(&mut powers);
            LorentzianModel {
                baseline,
                peaks: candidates[..n_peaks]
                    .iter()
                    .map(|c| Peak {
                        center: c.center,
                        half_width: c.half_width,
                        depth: c.depth,
                    })
                    .collect(),
            }
        }
    };

    let mut result = levenberg_marquardt(trace, initial);
    // Report peaks in abscissa order, uncertainties permuted alongside.
    let mut order: Vec<usize> = (0..result.model.peaks.len()).collect();
    order.sort_by(|&a, &b| {
        result.model.peaks[a]
            .center
            .partial_cmp(&result.model.peaks[b].center)
            .expect("finite centers")
    });
    let peaks = order.iter().map(|&i| result.model.peaks[i]).collect();
    let mut uncertainties = vec![result.parameter_uncertainties[0]];
    for &i in &order {
        uncertainties.extend_from_slice(&result.parameter_uncertainties[1 + 3 * i..4 + 3 * i]);
    }
    result.model.peaks = peaks;
    result.parameter_uncertainties = uncertainties;
    Ok(result)
}

fn levenberg_marquardt<F: Real>(
    trace: &ReflectionTrace<F>,
    initial: LorentzianModel<F>,
) -> FitResult<F> {
    let m = trace.len();
    let mut params = initial.to_params();
    let p = params.len();

    let x_span = (trace.samples[m - 1].0 - trace.samples[0].0).abs();
    let (mut y_min, mut y_max) = (trace.samples[0].1, trace.samples[0].1);
    for &(_, y) in &trace.samples {
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    let y_span = (y_max - y_min).max(F::of(1e-30));
    // Finite-difference scales: abscissa-like for centers/widths,
    // ordinate-like for baseline/depths. Keeps the fit covariant under
    // affine rescaling of the abscissa.
    let scale = |j: usize| -> F {
        if j == 0 || (j - 1) % 3 == 2 {
            y_span
        } else {
            x_span
        }
    };

    let residuals = |params: &[F]| -> Vec<F> {
        let model = LorentzianModel::from_params(params);
        trace
            .samples
            .iter()
            .map(|&(x, y)| model.evaluate(x) - y)
            .collect()
    };
    let cost_of = |r: &[F]| -> F { r.iter().map(|&v| v * v).sum() };

    let mut res = residuals(&params);
    let mut cost = cost_of(&res);
    let mut damping = F::of(LM_INITIAL_DAMPING);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < LM_MAX_ITER {
        iterations += 1;

        // Central-difference Jacobian at the current point.
        let mut jac = vec![F::zero(); m * p];
        for j in 0..p {
            let h = F::of(1e-6) * params[j].abs().max(scale(j));
            let mut plus = params.clone();
            plus[j] = plus[j] + h;
            let mut minus = params.clone();
            minus[j] = minus[j] - h;
            let rp = residuals(&plus);
            let rm = residuals(&minus);
            for i in 0..m {
                jac[i * p + j] = (rp[i] - rm[i]) / (F::of(2.0) * h);
            }
        }

        // Normal matrix and gradient.
        let mut jtj = vec![F::zero(); p * p];
        let mut jtr = vec![F::zero(); p];
        for i in 0..m {
            for a in 0..p {
                let ja = jac[i * p + a];
                jtr[a] = jtr[a] + ja * res[i];
                for b in a..p {
                    jtj[a * p + b] = jtj[a * p + b] + ja * jac[i * p + b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                jtj[a * p + b] = jtj[b * p + a];
            }
        }

        // Retry with increasing damping until the step reduces the cost.
        let mut stalled = true;
        loop {
            let mut lhs = jtj.clone();
            for a in 0..p {
                let d = jtj[a * p + a].max(F::of(1e-30));
                lhs[a * p + a] = jtj[a * p + a] + damping * d;
            }
            let rhs: Vec<F> = jtr.iter().map(|&g| -g).collect();
            let step = match solve_linear(&mut lhs, rhs) {
                Some(step) => step,
                None => break, // singular even with damping; give up
            };
            let trial: Vec<F> = params.iter().zip(&step).map(|(&a, &d)| a + d).collect();
            let trial_res = residuals(&trial);
            let trial_cost = cost_of(&trial_res);
            if trial_cost.is_finite() && trial_cost < cost {
                let rel_change = (cost - trial_cost) / cost.max(F::of(1e-300));
                params = trial;
                res = trial_res;
                cost = trial_cost;
                damping = damping / F::of(10.0);
                stalled = false;
                if rel_change < F::of(LM_COST_TOL) {
                    converged = true;
                }
                break;
            }
            damping = damping * F::of(10.0);
            if damping > F::of(1e14) {
                break;
            }
        }
        if converged || stalled {
            converged = converged || stalled && cost <= F::of(1e-28) * F::of(m as f64);
            break;
        }
    }

    // Asymptotic standard errors from the inverse Gauss-Newton normal
    // matrix scaled by the residual variance.
    let mut jac = vec![F::zero(); m * p];
    for j in 0..p {
        let h = F::of(1e-6) * params[j].abs().max(scale(j));
        let mut plus = params.clone();
        plus[j] = plus[j] + h;
        let mut minus = params.clone();
        minus[j] = minus[j] - h;
        let rp = residuals(&plus);
        let rm = residuals(&minus);
        for i in 0..m {
            jac[i * p + j] = (rp[i] - rm[i]) / (F::of(2.0) * h);
        }
    }
    let mut jtj = vec![F::zero(); p * p];
    for i in 0..m {
        for a in 0..p {
            for b in a..p {
                jtj[a * p + b] = jtj[a * p + b] + jac[i * p + a] * jac[i * p + b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            jtj[a * p + b] = jtj[b * p + a];
        }
    }
    let dof = F::of((m.saturating_sub(p)).max(1) as f64);
    let variance = cost / dof;
    let uncertainties = match invert(&jtj, p) {
        Some(inv) => (0..p)
            .map(|j| (inv[j * p + j].max(F::zero()) * variance).sqrt())
            .collect(),
        None => vec![F::nan(); p],
    };

    FitResult {
        model: LorentzianModel::from_params(&params),
        residual_rms: (cost / F::of(m as f64)).sqrt(),
        parameter_uncertainties: uncertainties,
        converged,
        iterations,
    }
}

/// Gaussian elimination with partial pivoting; `a` is row-major n×n.
fn solve_linear<F: Real>(a: &mut [F], mut b: Vec<F>) -> Option<Vec<F>> {
    let n = b.len();
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if a[row * n + col].abs() > a[pivot * n + col].abs() {
                pivot = row;
            }
        }
        if a[pivot * n + col] == F::zero() {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        let d = a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / d;
            if factor == F::zero() {
                continue;
            }
            for k in col..n {
                a[row * n + k] = a[row * n + k] - factor * a[col * n + k];
            }
            b[row] = b[row] - factor * b[col];
        }
    }
    let mut x = vec![F::zero(); n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc = acc - a[row * n + k] * x[k];
        }
        x[row] = acc / a[row * n + row];
    }
    Some(x)
}

fn invert<F: Real>(matrix: &[F], n: usize) -> Option<Vec<F>> {
    let mut inv = vec![F::zero(); n * n];
    for col in 0..n {
        let mut a = matrix.to_vec();
        let mut e = vec![F::zero(); n];
        e[col] = F::one();
        let x = solve_linear(&mut a, e)?;
        for row in 0..n {
            inv[row * n + col] = x[row];
        }
    }
    Some(inv)
}

/// Cavity length from a measured free spectral range: L = c / 2Δν.
pub fn length_from_fsr<F: Real>(fsr: F) -> Result<F, Error> {
    if !(fsr > F::zero()) {
        return Err(Error::InvalidTrace(format!(
            "free spectral range must be positive, got {fsr}"
        )));
    }
    Ok(F::of(SPEED_OF_LIGHT) / (F::of(2.0) * fsr))
}

/// Mirror radius of curvature from a frequency trace containing the
/// fundamental dip and at least one higher-order-mode dip.
///
/// The deepest dip is the fundamental; dips between
/// [`DIP_DETECTION_THRESHOLD`] and half its depth are higher-order
/// candidates, and the one nearest the fundamental is taken as the first
/// Hermite-Gauss order. All resolved dips are refined in a joint fit before
/// the spacing is inverted.
pub fn curvature_workflow<F: Real>(trace: &ReflectionTrace<F>, length: F) -> Result<F, Error> {
    if trace.abscissa_kind != AbscissaKind::Frequency {
        return Err(Error::InvalidTrace(
            "curvature workflow needs a frequency-domain trace".into(),
        ));
    }
    let candidates = detect_dips(trace);
    if candidates.is_empty() {
        return Err(Error::DegenerateTrace {
            found: 0,
            needed: 2,
        });
    }
    let fundamental = candidates[0];
    let secondaries: Vec<_> = candidates[1..]
        .iter()
        .filter(|c| {
            c.depth >= F::of(DIP_DETECTION_THRESHOLD) * fundamental.depth
                && c.depth < fundamental.depth / F::of(2.0)
        })
        .copied()
        .collect();
    if secondaries.is_empty() {
        return Err(Error::MissingHigherOrder);
    }
    let nearest = secondaries
        .iter()
        .min_by(|a, b| {
            (a.center - fundamental.center)
                .abs()
                .partial_cmp(&(b.center - fundamental.center).abs())
                .expect("finite centers")
        })
        .copied()
        .expect("non-empty");

    // Joint refinement of every resolved dip so overlapping tails do not
    // bias the two centers of interest.
    let mut fit_peaks = vec![fundamental, nearest];
    for c in &secondaries {
        if c.center != nearest.center {
            fit_peaks.push(*c);
        }
    }
    let mut powers: Vec<F> = trace.samples.iter().map(|&(_, p)| p).collect();
    let baseline = median(&mut powers);
    let initial = LorentzianModel {
        baseline,
        peaks: fit_peaks
            .iter()
            .map(|c| Peak {
                center: c.center,
                half_width: c.half_width,
                depth: c.depth,
            })
            .collect(),
    };
    let n = initial.peaks.len();
    let result = fit_lorentzians(trace, n, Some(initial))?;

    // Recover the two dips of interest from the sorted fit output.
    let fitted_fundamental = result
        .model
        .peaks
        .iter()
        .max_by(|a, b| a.depth.partial_cmp(&b.depth).expect("finite"))
        .copied()
        .expect("at least one peak");
    let fitted_secondary = result
        .model
        .peaks
        .iter()
        .filter(|p| p.depth < fitted_fundamental.depth / F::of(2.0))
        .min_by(|a, b| {
            (a.center - fitted_fundamental.center)
                .abs()
                .partial_cmp(&(b.center - fitted_fundamental.center).abs())
                .expect("finite")
        })
        .copied()
        .ok_or(Error::MissingHigherOrder)?;

    let spacing = (fitted_secondary.center - fitted_fundamental.center).abs();
    Ok(optics::curvature_from_mode_spacing(spacing, length, 1)?)
}

/// Relinearise a voltage scan into the length domain via the actuator
/// model: x ↦ L0 − deflection(x). The mapping reverses the axis (longer
/// cavity at lower bias), so the output samples are re-sorted to keep the
/// abscissa increasing.
pub fn voltage_to_length_axis<F: Real>(
    trace: &ReflectionTrace<F>,
    model: &ActuatorModel<F>,
    unactuated_length: F,
) -> Result<ReflectionTrace<F>, Error> {
    if trace.abscissa_kind != AbscissaKind::Voltage {
        return Err(Error::InvalidTrace("expected a voltage-domain trace".into()));
    }
    let mut samples = Vec::with_capacity(trace.len());
    for &(v, p) in &trace.samples {
        let deflection = model.static_deflection(v)?;
        samples.push((unactuated_length - deflection, p));
    }
    samples.reverse();
    ReflectionTrace::new(AbscissaKind::Length, samples, F::of(0.2))
}
