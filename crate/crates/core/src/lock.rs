//! Discrete-time closed-loop simulation of PID cavity-length stabilisation.
//!
//! The plant is a single second-order mechanical mode driven by the
//! controller output through a linearised DC gain, discretised exactly
//! (zero-order hold) at the sampling rate. The detector sits on the flank
//! of a Lorentzian reflection fringe at the point of maximum gradient.
//! Detector volts are anchored by the calibration that a 20 mV setpoint
//! step displaces the locked length by 15 pm; together with the effective
//! fringe contrast this fixes the DC light level and thereby the
//! length-equivalent weight of laser power noise.
//!
//! The loop cascades the PID (velocity form, filtered derivative) with a
//! notch matched to the plant resonance. Without it no PI(D) controller can
//! cross unity gain near 100 kHz on a Q = 50 resonance at 223 kHz: the
//! resonant peak lifts the loop gain far above one at a phase beyond −180°.

use serde::{Deserialize, Serialize};

use crate::real::Real;

/// Setpoint step of the calibration anchor (V).
pub const CALIBRATION_STEP_VOLTS: f64 = 0.020;
/// Length displacement produced by the calibration step (m).
pub const CALIBRATION_STEP_LENGTH: f64 = 15e-12;
/// Detector slope at the operating point, fixed by the anchor (V/m).
pub const DETECTOR_SLOPE: f64 = CALIBRATION_STEP_VOLTS / CALIBRATION_STEP_LENGTH;

/// Effective contrast of the locked fringe. Sets the detector level at the
/// operating point relative to the fringe and thereby calibrates the
/// apparent position noise from relative laser-power fluctuations.
pub const LOCK_FRINGE_CONTRAST: f64 = 0.79;

/// One-pole corner of the setpoint and power noise sources (Hz). Both are
/// slow in practice: setpoint electronics drift and beam pointing.
pub const NOISE_CORNER_HZ: f64 = 1e3;

/// Internal phase target of the loop-shaping rule at the nominal
/// crossover. The broad gain shelf left of the notch moves the actual
/// unity-gain crossing slightly below the target frequency, where the
/// achieved margin comes out near 60 degrees.
const PHASE_MARGIN_DEG: f64 = 45.0;
/// Quality factor of the resonance-compensating notch. Wide (sub-unity) so
/// the loop gain is well below one over the whole band where the plant
/// resonance drives the phase past -180 degrees.
const NOTCH_Q: f64 = 0.4;

/// Maximum slope of a unit-depth Lorentzian of unit FWHM: 3·sqrt(3)/4.
const LORENTZIAN_MAX_SLOPE: f64 = 1.299038105676658;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// The loop failed the small-signal stability check.
    UnstableLoop { detail: String },
    /// The length error left the discriminator validity window.
    LockLost { time: f64, length_error: f64 },
    /// Trace too short for spectral analysis.
    TooShort { have: usize, need: usize },
    /// No stable controller exists for the requested bandwidth.
    Infeasible(String),
    InvalidParameter(String),
}

impl std::fmt::Display for Error {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Error::UnstableLoop { detail } => write!(f, "unstable loop: {detail}"),
            Error::LockLost { time, length_error } => write!(
                f,
                "lock lost at t = {time} s, length error {length_error} m outside the fringe window"
            ),
            Error::TooShort { have, need } => {
                write!(f, "trace has {have} samples, spectral analysis needs {need}")
            }
            Error::Infeasible(msg) => write!(f, "infeasible: {msg}"),
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

/// Second-order plant: one mechanical mode plus the static actuation gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantModel<F> {
    /// Mechanical resonance (Hz).
    pub natural_frequency: F,
    /// Resonance quality factor (unmeasured in practice; configurable).
    pub quality_factor: F,
    /// Linearised actuation gain at the operating bias (m/V), the inverse
    /// of the actuation gradient.
    pub dc_gain: F,
    /// Absolute cavity length at the operating point (m).
    pub operating_length: F,
    /// FWHM of the reflection fringe in the length domain (m).
    pub fringe_fwhm_length: F,
}

impl<F: Real> Default for PlantModel<F> {
    fn default() -> Self {
        Self {
            natural_frequency: F::of(223e3),
            quality_factor: F::of(50.0),
            // Inverse actuation gradient near a 200 nm operating deflection.
            dc_gain: F::of(3.0e-9),
            operating_length: F::of(42.9e-6),
            fringe_fwhm_length: F::of(3.7e-9),
        }
    }
}

impl<F: Real> PlantModel<F> {
    pub fn validate(&self) -> Result<(), Error> {
        for (name, v) in [
            ("natural_frequency", self.natural_frequency),
            ("quality_factor", self.quality_factor),
            ("fringe_fwhm_length", self.fringe_fwhm_length),
            ("operating_length", self.operating_length),
        ] {
            if !(v > F::zero()) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be strictly positive, got {v}"
                )));
            }
        }
        if self.dc_gain == F::zero() || !self.dc_gain.is_finite() {
            return Err(Error::InvalidParameter("dc_gain must be nonzero".into()));
        }
        Ok(())
    }
}

/// Controller gains and loop configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidConfig<F> {
    /// Proportional gain (V per detector V).
    pub kp: F,
    /// Integral gain (V per detector V per second).
    pub ki: F,
    /// Derivative gain (V per detector V · s).
    pub kd: F,
    /// Design bandwidth; also the derivative low-pass corner (Hz).
    pub loop_bandwidth: F,
    /// Base setpoint (detector V).
    pub setpoint: F,
    /// Loop sampling rate (Hz).
    pub sample_rate: F,
}

impl<F: Real> PidConfig<F> {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.sample_rate > F::zero()) || !(self.loop_bandwidth > F::zero()) {
            return Err(Error::InvalidParameter(
                "sample_rate and loop_bandwidth must be positive".into(),
            ));
        }
        if self.sample_rate < F::of(10.0) * self.loop_bandwidth {
            return Err(Error::InvalidParameter(format!(
                "sample_rate {} must be at least 10x loop_bandwidth {}",
                self.sample_rate, self.loop_bandwidth
            )));
        }
        Ok(())
    }
}

/// Stochastic disturbance description. All amplitudes are RMS values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec<F> {
    /// Noise on the setpoint input (detector V, RMS), low-passed at
    /// [`NOISE_CORNER_HZ`].
    pub setpoint_noise_rms: F,
    /// Relative laser power fluctuation (RMS), low-passed at
    /// [`NOISE_CORNER_HZ`].
    pub power_fluctuation_rel: F,
    /// Thermal drift as a Wiener-process step (m per sqrt(s)), injected as
    /// a displacement disturbance through the plant dynamics.
    pub thermal_drift: F,
    pub seed: u64,
}

impl<F: Real> Default for NoiseSpec<F> {
    fn default() -> Self {
        Self {
            // ±1.1 pm of apparent position noise through the anchor slope.
            setpoint_noise_rms: F::of(1.1e-12 * DETECTOR_SLOPE),
            power_fluctuation_rel: F::of(0.005),
            // 1 nm of drift over a minute.
            thermal_drift: F::of(1.29e-10),
            seed: 1,
        }
    }
}

impl<F: Real> NoiseSpec<F> {
    pub fn quiet(seed: u64) -> Self {
        Self {
            setpoint_noise_rms: F::zero(),
            power_fluctuation_rel: F::zero(),
            thermal_drift: F::zero(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        for (name, v) in [
            ("setpoint_noise_rms", self.setpoint_noise_rms),
            ("power_fluctuation_rel", self.power_fluctuation_rel),
            ("thermal_drift", self.thermal_drift),
        ] {
            if v < F::zero() || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// One recorded loop sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LockSample<F> {
    /// Time (s).
    pub t: F,
    /// Setpoint including its noise (V).
    pub setpoint: F,
    /// Detector voltage (V).
    pub detector: F,
    /// Controller output (V).
    pub control: F,
    /// True cavity-length deviation from the schedule target (m).
    pub length_error: F,
}

/// Uniformly sampled closed-loop record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LockTrace<F> {
    pub sample_rate: F,
    pub samples: Vec<LockSample<F>>,
}

impl<F: Real> LockTrace<F> {
    /// Export as CSV (`t,setpoint,detector,control,length_error`) with a
    /// JSON sidecar echoing the run parameters.
    pub fn write_csv(&self, path: &std::path::Path, params: &serde_json::Value) -> Result<(), crate::fit::Error> {
        let mut body = String::from("t,setpoint,detector,control,length_error\n");
        for s in &self.samples {
            body.push_str(&format!(
                "{},{},{},{},{}\n",
                s.t.widen(),
                s.setpoint.widen(),
                s.detector.widen(),
                s.control.widen(),
                s.length_error.widen()
            ));
        }
        crate::fit::write_atomic(path, body.as_bytes())?;
        let mut sidecar = path.as_os_str().to_owned();
        sidecar.push(".json");
        crate::fit::write_atomic(
            std::path::Path::new(&sidecar),
            serde_json::to_string_pretty(params)
                .expect("params serialise")
                .as_bytes(),
        )
    }
}

/// Setpoint schedule: piecewise-constant offsets added to the base
/// setpoint, as `(time, cumulative offset in V)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule<F> {
    pub duration: F,
    pub steps: Vec<(F, F)>,
}

impl<F: Real> StepSchedule<F> {
    /// Constant setpoint for the full duration.
    pub fn hold(duration: F) -> Self {
        Self {
            duration,
            steps: Vec::new(),
        }
    }

    /// `n` equal steps of `step_volts`, the first at `start`, spaced by
    /// `period`; the run ends one period after the last step.
    pub fn staircase(start: F, period: F, step_volts: F, n: usize) -> Self {
        let steps = (0..n)
            .map(|i| {
                (
                    start + period * F::of(i as f64),
                    step_volts * F::of((i + 1) as f64),
                )
            })
            .collect();
        Self {
            duration: start + period * F::of(n as f64),
            steps,
        }
    }

    fn offset_at(&self, t: F) -> F {
        let mut offset = F::zero();
        for &(time, value) in &self.steps {
            if t >= time {
                offset = value;
            } else {
                break;
            }
        }
        offset
    }
}

/// Lorentzian reflection fringe sampled at the point of maximum gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discriminator<F> {
    /// Fringe FWHM in the length domain (m).
    pub fwhm: F,
    /// Fringe contrast (dip depth as a fraction of the off-resonant level).
    pub contrast: F,
}

impl<F: Real> Discriminator<F> {
    pub fn new(fwhm: F, contrast: F) -> Self {
        Self { fwhm, contrast }
    }

    pub fn for_plant(plant: &PlantModel<F>) -> Self {
        Self::new(plant.fringe_fwhm_length, F::of(LOCK_FRINGE_CONTRAST))
    }

    /// Offset of the operating point from the dip centre: FWHM/(2·sqrt(3)),
    /// the inflection of the Lorentzian where |dP/dL| is maximal.
    pub fn operating_offset(&self) -> F {
        self.fwhm / (F::of(2.0) * F::of(3.0).sqrt())
    }

    /// Normalised reflected power at a length deviation from the operating
    /// point (off-resonant level = 1).
    pub fn power(&self, length_error: F) -> F {
        let x = self.operating_offset() + length_error;
        let t = F::of(2.0) * x / self.fwhm;
        F::one() - self.contrast / (F::one() + t * t)
    }

    /// dP/dL at the operating point: contrast · (3·sqrt(3)/4) / FWHM, the
    /// maximum of the fringe slope. Positive on this flank.
    pub fn slope(&self) -> F {
        self.contrast * F::of(LORENTZIAN_MAX_SLOPE) / self.fwhm
    }

    /// Half-width of the validity window around the operating point.
    pub fn window(&self) -> F {
        F::of(5.0) * self.fwhm
    }
}

/// Normalised reflected power at a length deviation from the operating
/// point, for the plant's fringe.
pub fn discriminator<F: Real>(length_error: F, plant: &PlantModel<F>) -> F {
    Discriminator::for_plant(plant).power(length_error)
}

/// Detector volts per unit normalised power, fixed by the calibration
/// anchor and the fringe contrast.
pub fn detector_gain<F: Real>(plant: &PlantModel<F>) -> F {
    let disc = Discriminator::for_plant(plant);
    F::of(DETECTOR_SLOPE) / disc.slope()
}

/// Detector voltage at the operating point; the natural base setpoint.
pub fn operating_setpoint<F: Real>(plant: &PlantModel<F>) -> F {
    let disc = Discriminator::for_plant(plant);
    detector_gain(plant) * disc.power(F::zero())
}

/// Exact zero-order-hold discretisation of the second-order plant.
#[derive(Debug, Clone, Copy)]
struct PlantZoh<F> {
    a11: F,
    a12: F,
    a21: F,
    a22: F,
    b1: F,
    b2: F,
}

impl<F: Real> PlantZoh<F> {
    fn new(plant: &PlantModel<F>, dt: F) -> Self {
        let w0 = F::of(2.0) * F::PI() * plant.natural_frequency;
        let zeta = (F::of(2.0) * plant.quality_factor).recip();
        let wd = w0 * (F::one() - zeta * zeta).sqrt();
        let decay = (-zeta * w0 * dt).exp();
        let (s, c) = (wd * dt).sin_cos();
        let a11 = decay * (c + zeta * w0 * s / wd);
        let a12 = decay * s / wd;
        let a21 = -decay * w0 * w0 * s / wd;
        let a22 = decay * (c - zeta * w0 * s / wd);
        // B_d = A^{-1} (A_d - I) B with B = [0, w0^2 G]^T and
        // A^{-1} = [[-1/(Q w0) · ... ]] expanded directly:
        let g = plant.dc_gain;
        let b1 = -g * (a12 * w0 * F::of(2.0) * zeta + (a22 - F::one()));
        let b2 = a12 * w0 * w0 * g;
        Self {
            a11,
            a12,
            a21,
            a22,
            b1,
            b2,
        }
    }

    fn step(&self, state: &mut [F; 2], input: F) {
        let (x, v) = (state[0], state[1]);
        state[0] = self.a11 * x + self.a12 * v + self.b1 * input;
        state[1] = self.a21 * x + self.a22 * v + self.b2 * input;
    }

    /// Frequency response position/input at z = e^{jωT}.
    fn response(&self, omega: F, dt: F) -> num_complex::Complex<F> {
        use num_complex::Complex;
        let z = Complex::from_polar(F::one(), omega * dt);
        let one = Complex::new(F::one(), F::zero());
        let det = (z - one * self.a11) * (z - one * self.a22)
            - Complex::new(self.a12 * self.a21, F::zero());
        ((z - one * self.a22) * self.b1 + one * (self.a12 * self.b2)) / det
    }
}

/// Notch biquad matched to the plant resonance (bilinear transform,
/// prewarped at the notch frequency).
#[derive(Debug, Clone, Copy)]
struct Notch<F> {
    b0: F,
    b1: F,
    b2: F,
    a1: F,
    a2: F,
    z1: F,
    z2: F,
}

impl<F: Real> Notch<F> {
    fn new(frequency: F, q: F, sample_rate: F) -> Self {
        let w = F::of(2.0) * F::PI() * frequency / sample_rate;
        let alpha = w.sin() / (F::of(2.0) * q);
        let a0 = F::one() + alpha;
        Self {
            b0: F::one() / a0,
            b1: -F::of(2.0) * w.cos() / a0,
            b2: F::one() / a0,
            a1: -F::of(2.0) * w.cos() / a0,
            a2: (F::one() - alpha) / a0,
            z1: F::zero(),
            z2: F::zero(),
        }
    }

    fn process(&mut self, x: F) -> F {
        // Direct form II transposed.
        let y = self.b0 * x + self.z1;
        self.z1 = self.b1 * x - self.a1 * y + self.z2;
        self.z2 = self.b2 * x - self.a2 * y;
        y
    }

    fn response(&self, omega: F, dt: F) -> num_complex::Complex<F> {
        use num_complex::Complex;
        let zi = Complex::from_polar(F::one(), -omega * dt);
        let num = Complex::new(self.b0, F::zero()) + zi * self.b1 + zi * zi * self.b2;
        let den = Complex::new(F::one(), F::zero()) + zi * self.a1 + zi * zi * self.a2;
        num / den
    }
}

/// One-pole low-passed Gaussian noise stream with stationary RMS `sigma`.
struct FilteredNoise<F> {
    value: F,
    coeff: F,
    scale: F,
    sigma: F,
}

impl<F: Real> FilteredNoise<F>
where
    rand_distr::StandardNormal: rand_distr::Distribution<F>,
{
    fn new<R: rand::Rng>(sigma: F, corner_hz: F, dt: F, rng: &mut R) -> Self {
        use rand_distr::Distribution;
        let coeff = (-F::of(2.0) * F::PI() * corner_hz * dt).exp();
        let scale = (F::one() - coeff * coeff).sqrt();
        let xi: F = rand_distr::StandardNormal.sample(rng);
        Self {
            value: sigma * xi, // start in the stationary distribution
            coeff,
            scale,
            sigma,
        }
    }

    fn advance<R: rand::Rng>(&mut self, rng: &mut R) -> F {
        use rand_distr::Distribution;
        let xi: F = rand_distr::StandardNormal.sample(rng);
        self.value = self.coeff * self.value + self.scale * self.sigma * xi;
        self.value
    }
}

struct LoopState<F> {
    plant: PlantZoh<F>,
    notch: Notch<F>,
    disc: Discriminator<F>,
    gain: F,
    dt: F,
    kp: F,
    ki: F,
    kd: F,
    derivative_coeff: F,
    control: F,
    prev_error: F,
    prev_derivative: F,
    state: [F; 2],
}

impl<F: Real> LoopState<F> {
    fn new(plant: &PlantModel<F>, pid: &PidConfig<F>) -> Self {
        let dt = pid.sample_rate.recip();
        Self {
            plant: PlantZoh::new(plant, dt),
            notch: Notch::new(plant.natural_frequency, F::of(NOTCH_Q), pid.sample_rate),
            disc: Discriminator::for_plant(plant),
            gain: detector_gain(plant),
            dt,
            kp: pid.kp,
            ki: pid.ki,
            kd: pid.kd,
            derivative_coeff: (-F::of(2.0) * F::PI() * pid.loop_bandwidth * dt).exp(),
            control: F::zero(),
            prev_error: F::zero(),
            prev_derivative: F::zero(),
            state: [F::zero(); 2],
        }
    }

    /// Velocity-form PID with low-passed derivative.
    fn pid_update(&mut self, error: F) -> F {
        let derivative = self.derivative_coeff * self.prev_derivative
            + (F::one() - self.derivative_coeff) * (error - self.prev_error) / self.dt;
        self.control = self.control
            + self.kp * (error - self.prev_error)
            + self.ki * self.dt * error
            + self.kd * (derivative - self.prev_derivative);
        self.prev_error = error;
        self.prev_derivative = derivative;
        self.control
    }
}

fn run_loop<F>(
    plant: &PlantModel<F>,
    pid: &PidConfig<F>,
    noise: &NoiseSpec<F>,
    schedule: &StepSchedule<F>,
    static_length_offset: F,
    record: bool,
) -> Result<LockTrace<F>, Error>
where
    F: Real,
    rand_distr::StandardNormal: rand_distr::Distribution<F>,
{
    use rand::SeedableRng;
    use rand_distr::Distribution;

    plant.validate()?;
    pid.validate()?;
    noise.validate()?;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(noise.seed);
    let dt = pid.sample_rate.recip();
    let n = (schedule.duration / dt).round().to_usize().ok_or_else(|| {
        Error::InvalidParameter("schedule duration does not fit in sample count".into())
    })?;

    let mut state = LoopState::new(plant, pid);
    let mut setpoint_noise =
        FilteredNoise::new(noise.setpoint_noise_rms, F::of(NOISE_CORNER_HZ), dt, &mut rng);
    let mut power_noise =
        FilteredNoise::new(noise.power_fluctuation_rel, F::of(NOISE_CORNER_HZ), dt, &mut rng);
    let drift_step = noise.thermal_drift * dt.sqrt();
    let mut drift = F::zero();
    let slope = F::of(DETECTOR_SLOPE);

    let mut samples = Vec::with_capacity(if record { n } else { 0 });
    for k in 0..n {
        let t = dt * F::of(k as f64);
        let x = state.state[0] + static_length_offset;
        if x.abs() > state.disc.window() {
            return Err(Error::LockLost {
                time: t.widen(),
                length_error: x.widen(),
            });
        }

        let ns = setpoint_noise.advance(&mut rng);
        let pw = power_noise.advance(&mut rng);
        let xi: F = rand_distr::StandardNormal.sample(&mut rng);
        drift = drift + drift_step * xi;

        let detector = state.gain * state.disc.power(x) * (F::one() + pw);
        let offset = schedule.offset_at(t);
        let setpoint = pid.setpoint + offset + ns;
        let error = setpoint - detector;
        let control = state.pid_update(error);
        let filtered = state.notch.process(control);
        // The drift displaces the resonator; injecting it as an equivalent
        // drive routes it through the mode dynamics (unit DC gain).
        let input = filtered + drift / plant.dc_gain;
        state.plant.step(&mut state.state, input);

        if record {
            samples.push(LockSample {
                t,
                setpoint,
                detector,
                control,
                length_error: x - offset / slope,
            });
        }
    }

    Ok(LockTrace {
        sample_rate: pid.sample_rate,
        samples,
    })
}

/// Small-signal stability gate: a 5 mV step must settle with less than 50%
/// overshoot and actually reach its target.
fn check_stability<F>(plant: &PlantModel<F>, pid: &PidConfig<F>) -> Result<(), Error>
where
    F: Real,
    rand_distr::StandardNormal: rand_distr::Distribution<F>,
{
    let step_volts = F::of(5e-3);
    let start = F::of(200e-6);
    let schedule = StepSchedule {
        duration: F::of(2e-3),
        steps: vec![(start, step_volts)],
    };
    let trace = run_loop(plant, pid, &NoiseSpec::quiet(0), &schedule, F::zero(), true).map_err(
        |e| match e {
            Error::LockLost { .. } => Error::UnstableLoop {
                detail: "left the fringe window during the stability check".into(),
            },
            other => other,
        },
    )?;

    let target = step_volts / F::of(DETECTOR_SLOPE);
    let after: Vec<F> = trace
        .samples
        .iter()
        .filter(|s| s.t >= start)
        .map(|s| s.length_error + target) // undo the schedule-relative error
        .collect();
    let peak = after.iter().copied().fold(F::zero(), F::max);
    let tail = &after[after.len() * 3 / 4..];
    let settled = tail.iter().copied().sum::<F>() / F::of(tail.len() as f64);
    if !settled.is_finite() || (settled - target).abs() > target / F::of(2.0) {
        return Err(Error::UnstableLoop {
            detail: format!("step settles to {settled} instead of {target}"),
        });
    }
    let overshoot = (peak - settled) / settled;
    if overshoot > F::of(0.5) {
        return Err(Error::UnstableLoop {
            detail: format!("step overshoot {overshoot} exceeds 50%"),
        });
    }
    Ok(())
}

/// Closed-loop step-response experiment.
pub fn simulate_step_response<F>(
    plant: &PlantModel<F>,
    pid: &PidConfig<F>,
    noise: &NoiseSpec<F>,
    schedule: &StepSchedule<F>,
) -> Result<LockTrace<F>, Error>
where
    F: Real,
    rand_distr::StandardNormal: rand_distr::Distribution<F>,
{
    check_stability(plant, pid)?;
    run_loop(plant, pid, noise, schedule, F::zero(), true)
}

/// Closed-loop run at constant setpoint with all noise sources active.
pub fn simulate_noise_run<F>(
    plant: &PlantModel<F>,
    pid: &PidConfig<F>,
    noise: &NoiseSpec<F>,
    duration: F,
) -> Result<LockTrace<F>, Error>
where
    F: Real,
    rand_distr::StandardNormal: rand_distr::Distribution<F>,
{
    check_stability(plant, pid)?;
    run_loop(plant, pid, noise, &StepSchedule::hold(duration), F::zero(), true)
}

/// Regulation from a static in-window length offset (mount misalignment).
pub fn simulate_regulation<F>(
    plant: &PlantModel<F>,
    pid: &PidConfig<F>,
    noise: &NoiseSpec<F>,
    duration: F,
    initial_length_offset: F,
) -> Result<LockTrace<F>, Error>
where
    F: Real,
    rand_distr::StandardNormal: rand_distr::Distribution<F>,
{
    check_stability(plant, pid)?;
    run_loop(plant, pid, noise, &StepSchedule::hold(duration), initial_length_offset, true)
}

/// Mean length and RMS fluctuation of each settled plateau.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauStat<F> {
    /// Mean absolute length deviation from the base operating point (m).
    pub mean_length: F,
    /// RMS fluctuation about the plateau mean (m).
    pub rms: F,
}

/// Per-plateau statistics of a step-response trace; the first
/// `settle_fraction` of each plateau is discarded.
pub fn plateau_stats<F: Real>(
    trace: &LockTrace<F>,
    schedule: &StepSchedule<F>,
    settle_fraction: F,
) -> Vec<PlateauStat<F>> {
    let slope = F::of(DETECTOR_SLOPE);
    let mut boundaries: Vec<(F, F)> = vec![(F::zero(), F::zero())];
    boundaries.extend(schedule.steps.iter().copied());
    let mut stats = Vec::new();
    for (i, &(start, offset)) in boundaries.iter().enumerate() {
        let end = boundaries
            .get(i + 1)
            .map(|&(t, _)| t)
            .unwrap_or(schedule.duration);
        let from = start + (end - start) * settle_fraction;
        let xs: Vec<F> = trace
            .samples
            .iter()
            .filter(|s| s.t >= from && s.t < end)
            .map(|s| s.length_error + offset / slope)
            .collect();
        if xs.is_empty() {
            continue;
        }
        let n = F::of(xs.len() as f64);
        let mean = xs.iter().copied().sum::<F>() / n;
        let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<F>() / n;
        stats.push(PlateauStat {
            mean_length: mean,
            rms: var.sqrt(),
        });
    }
    stats
}

/// RMS of the true length error about its mean, after discarding an
/// initial settling interval.
pub fn position_noise_rms<F: Real>(trace: &LockTrace<F>, discard_seconds: F) -> F {
    let xs: Vec<F> = trace
        .samples
        .iter()
        .filter(|s| s.t >= discard_seconds)
        .map(|s| s.length_error)
        .collect();
    let n = F::of(xs.len() as f64);
    let mean = xs.iter().copied().sum::<F>() / n;
    (xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<F>() / n).sqrt()
}

/// One-sided periodogram of the detector channel.
///
/// The trace is truncated (never padded) to the largest power of two;
/// the mean is removed, so the PSD integrates to the signal variance
/// (Parseval). `smoothing_sigma > 0` applies a Gaussian running average
/// over frequency, approximated by a three-pass box filter.
pub fn power_spectrum<F>(trace: &LockTrace<F>, smoothing_sigma: F) -> Result<Vec<(F, F)>, Error>
where
    F: Real + rustfft::FftNum,
{
    let have = trace.samples.len();
    if have < 1024 {
        return Err(Error::TooShort { have, need: 1024 });
    }
    let n = 1usize << (usize::BITS - 1 - have.leading_zeros());
    let fs = trace.sample_rate;
    let mean = trace.samples[..n]
        .iter()
        .map(|s| s.detector)
        .sum::<F>()
        / F::of(n as f64);

    let mut buf: Vec<num_complex::Complex<F>> = trace.samples[..n]
        .iter()
        .map(|s| num_complex::Complex::new(s.detector - mean, F::zero()))
        .collect();
    rustfft::FftPlanner::new().plan_fft_forward(n).process(&mut buf);

    let df = fs / F::of(n as f64);
    let norm = (F::of(n as f64) * F::of(n as f64) * df).recip();
    let half = n / 2;
    let mut psd: Vec<(F, F)> = (0..=half)
        .map(|k| {
            let scale = if k == 0 || k == half {
                F::one()
            } else {
                F::of(2.0)
            };
            (F::of(k as f64) * df, scale * buf[k].norm_sqr() * norm)
        })
        .collect();

    if smoothing_sigma > F::zero() {
        // Three box passes of full width 2σ approximate a Gaussian of
        // standard deviation σ.
        let half_width = (smoothing_sigma / df).round().to_usize().unwrap_or(0);
        if half_width >= 1 {
            for _ in 0..3 {
                box_filter(&mut psd, half_width);
            }
        }
    }
    Ok(psd)
}

/// In-place centred running average of half-width `w` bins (shrinking at
/// the edges).
fn box_filter<F: Real>(psd: &mut [(F, F)], w: usize) {
    let n = psd.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(F::zero());
    for &(_, p) in psd.iter() {
        let last = *prefix.last().expect("non-empty");
        prefix.push(last + p);
    }
    for (i, bin) in psd.iter_mut().enumerate() {
        let lo = i.saturating_sub(w);
        let hi = (i + w).min(n - 1);
        let count = F::of((hi - lo + 1) as f64);
        bin.1 = (prefix[hi + 1] - prefix[lo]) / count;
    }
}

/// Write a PSD as CSV (`f_Hz,psd`).
pub fn psd_to_csv<F: Real>(psd: &[(F, F)], path: &std::path::Path) -> Result<(), crate::fit::Error> {
    let mut body = String::from("f_Hz,psd\n");
    for &(f, p) in psd {
        body.push_str(&format!("{},{}\n", f.widen(), p.widen()));
    }
    crate::fit::write_atomic(path, body.as_bytes())
}

#[doc(hidden)]
pub fn debug_loop_response<F: Real>(
    plant: &PlantModel<F>,
    pid: &PidConfig<F>,
    omega: F,
) -> num_complex::Complex<F> {
    let dt = pid.sample_rate.recip();
    let zoh = PlantZoh::new(plant, dt);
    let notch = Notch::new(plant.natural_frequency, F::of(NOTCH_Q), pid.sample_rate);
    zoh.response(omega, dt) * notch.response(omega, dt)
}

/// Loop-shaping rule: the integral gain places the open-loop unity-gain
/// crossover at `target_bandwidth` through the DC loop gain (so ki scales
/// linearly with the target), and the proportional gain adds the phase
/// lead required for a 60° margin at the crossover, evaluated on the
/// discrete plant + notch + detector response. kd stays zero.
pub fn tune_pid<F>(plant: &PlantModel<F>, target_bandwidth: F) -> Result<PidConfig<F>, Error>
where
    F: Real,
    rand_distr::StandardNormal: rand_distr::Distribution<F>,
{
    plant.validate()?;
    if !(target_bandwidth > F::zero()) {
        return Err(Error::Infeasible("bandwidth must be positive".into()));
    }
    if target_bandwidth >= plant.natural_frequency / F::of(2.0) {
        return Err(Error::Infeasible(format!(
            "target bandwidth {} too close to the {} Hz resonance",
            target_bandwidth, plant.natural_frequency
        )));
    }

    let sample_rate = F::of(1e6).max(F::of(10.0) * target_bandwidth);
    let dt = sample_rate.recip();
    let omega_c = F::of(2.0) * F::PI() * target_bandwidth;

    // Signed DC loop gain: detector slope is positive on this flank, so the
    // sign comes from the actuation gain.
    let k_dc = F::of(DETECTOR_SLOPE) * plant.dc_gain;
    let ki = omega_c / k_dc;

    // Phase budget at the crossover on the discrete loop.
    let zoh = PlantZoh::new(plant, dt);
    let notch = Notch::new(plant.natural_frequency, F::of(NOTCH_Q), sample_rate);
    let response = zoh.response(omega_c, dt) * notch.response(omega_c, dt);
    let phase_deg = response.arg() * F::of(180.0) / F::PI()
        - if k_dc < F::zero() { F::of(180.0) } else { F::zero() };
    let lead_deg = (F::of(PHASE_MARGIN_DEG - 180.0 + 90.0) - phase_deg)
        .max(F::zero())
        .min(F::of(80.0));
    let kp = ki * (lead_deg * F::PI() / F::of(180.0)).tan() / omega_c;

    let config = PidConfig {
        kp,
        ki,
        kd: F::zero(),
        loop_bandwidth: target_bandwidth,
        setpoint: operating_setpoint(plant),
        sample_rate,
    };
    check_stability(plant, &config).map_err(|e| Error::Infeasible(format!("{e}")))?;
    Ok(config)
}
