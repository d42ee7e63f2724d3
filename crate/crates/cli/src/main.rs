//! Command-line workflows: figure-reproduction datasets and
//! machine-readable reports for the microcavity-array simulator.
//!
//! Every command is deterministic given (preset, overrides, seed);
//! outputs are CSV/JSON written atomically. Exit codes: 0 success,
//! 2 configuration or parse error, 3 non-convergence, 4 loop instability.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use cavsim::array::{
    sample_array, scan_site, tilt_align, tune_all, AlignmentState, SiteRealization, TuneStatus,
    VoltageRamp,
};
use cavsim::consts::SPEED_OF_LIGHT;
use cavsim::fit::{self, write_atomic, AbscissaKind, ReflectionTrace};
use cavsim::lock::{
    plateau_stats, position_noise_rms, power_spectrum, psd_to_csv, simulate_noise_run,
    simulate_step_response, tune_pid, NoiseSpec, StepSchedule,
};
use cavsim::optics::{self, CavityGeometry};
use cavsim::presets::{self, Preset};

const EXIT_CONFIG: i32 = 2;
const EXIT_NO_CONVERGENCE: i32 = 3;
const EXIT_UNSTABLE: i32 = 4;

#[derive(Parser)]
#[command(
    name = "cavsim",
    version,
    about = "Simulator for electrostatically tunable fibre-coupled microcavity arrays"
)]
struct Cli {
    /// Parameter preset (visibility-matched, linewidth-matched, default).
    #[arg(long, global = true, default_value = "default")]
    preset: String,
    /// Override a preset key, e.g. --set geometry.arm_length=300e-6.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Master seed for array sampling and noise generation.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true, env = "CAVSIM_OUT", default_value = "cavsim-out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cantilever deflection and actuation-gradient curve with pull-in summary.
    Deflection,
    /// Row of scan traces, tuning report and linewidth-measurement trace.
    Scan,
    /// Fit Lorentzian dips to a CSV reflection trace.
    Fit {
        /// CSV trace (`x,power`) with optional `.json` sidecar.
        trace: PathBuf,
        /// Number of dips to fit.
        #[arg(long, default_value_t = 1)]
        peaks: usize,
    },
    /// Closed-loop lock simulations: step response, noise runs, PSD.
    Lock,
    /// All figure datasets plus the cavity-QED report.
    Figures,
}

struct CliError {
    code: i32,
    message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl From<presets::Error> for CliError {
    fn from(e: presets::Error) -> Self {
        CliError::config(e.to_string())
    }
}

impl From<fit::Error> for CliError {
    fn from(e: fit::Error) -> Self {
        let code = match &e {
            fit::Error::DegenerateTrace { .. } | fit::Error::MissingHigherOrder => {
                EXIT_NO_CONVERGENCE
            }
            _ => EXIT_CONFIG,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<cavsim::lock::Error> for CliError {
    fn from(e: cavsim::lock::Error) -> Self {
        let code = match &e {
            cavsim::lock::Error::UnstableLoop { .. }
            | cavsim::lock::Error::Infeasible(_)
            | cavsim::lock::Error::LockLost { .. } => EXIT_UNSTABLE,
            _ => EXIT_CONFIG,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<cavsim::array::Error> for CliError {
    fn from(e: cavsim::array::Error) -> Self {
        CliError::config(e.to_string())
    }
}

impl From<cavsim::electromech::Error> for CliError {
    fn from(e: cavsim::electromech::Error) -> Self {
        CliError::config(e.to_string())
    }
}

impl From<optics::Error> for CliError {
    fn from(e: optics::Error) -> Self {
        CliError::config(e.to_string())
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("cavsim: {}", e.message);
            std::process::exit(e.code);
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let overrides: Vec<(String, String)> = cli
        .set
        .iter()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| CliError::config(format!("--set expects KEY=VALUE, got '{kv}'")))
        })
        .collect::<Result<_, _>>()?;
    let mut preset = presets::resolve(&cli.preset, &overrides)?;
    // The master seed drives the noise generator unless overridden
    // explicitly.
    if !overrides.iter().any(|(k, _)| k == "noise.seed") {
        preset.noise.seed = cli.seed;
    }

    std::fs::create_dir_all(&cli.out)
        .map_err(|e| CliError::config(format!("cannot create {:?}: {e}", cli.out)))?;

    match &cli.command {
        Command::Deflection => cmd_deflection(&preset, &cli.out),
        Command::Scan => cmd_scan(&preset, cli.seed, &cli.out),
        Command::Fit { trace, peaks } => cmd_fit(trace, *peaks, &cli.out),
        Command::Lock => cmd_lock(&preset, &cli.out),
        Command::Figures => cmd_figures(&preset, cli.seed, &cli.out),
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("report serialises");
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn cmd_deflection(preset: &Preset, out: &Path) -> Result<(), CliError> {
    let actuator = preset.actuator()?;
    let pull_in = actuator.pull_in();
    let n = 600;
    let mut body = String::from("v,deflection_m,gradient_v_per_m\n");
    for i in 1..n {
        let v = pull_in.voltage * i as f64 / n as f64;
        let deflection = actuator.static_deflection(v)?;
        let gradient = actuator.actuation_gradient(v)?;
        body.push_str(&format!("{v},{deflection},{gradient}\n"));
    }
    write_atomic(&out.join("deflection.csv"), body.as_bytes())?;

    let summary = serde_json::json!({
        "preset": preset.name,
        "v_pi": pull_in.voltage,
        "delta_pi": pull_in.deflection,
        "spring_constant": actuator.spring_constant,
        "effective_mass": actuator.effective_mass,
        "electrode_area": actuator.electrode_area,
        "resonance_frequency_hz":
            cavsim::electromech::resonance_frequency(&preset.geometry, &preset.material),
    });
    write_json(&out.join("deflection_summary.json"), &summary)
}

fn scan_row(
    preset: &Preset,
    seed: u64,
) -> Result<(Vec<SiteRealization<f64>>, AlignmentState<f64>), CliError> {
    let ctx = preset.site_context()?;
    let sites = sample_array(
        &preset.array,
        &ctx,
        preset.jitter_rms,
        preset.jitter_kind,
        preset.yield_prob,
        seed,
    )?;
    let row = sites[..preset.array.sites_per_row].to_vec();
    let alignment = tilt_align(&row, &preset.array, preset.cavity_length, 3.7e-9)?;
    Ok((row, alignment))
}

fn cmd_scan(preset: &Preset, seed: u64, out: &Path) -> Result<(), CliError> {
    let (row, alignment) = scan_row(preset, seed)?;
    let laser = SPEED_OF_LIGHT / preset.wavelength;
    let result = tune_all(&row, &preset.array, &alignment, laser);

    let actuator = preset.actuator()?;
    let ramp = VoltageRamp {
        start: actuator.voltage_for_deflection(20e-9)?,
        end: actuator.voltage_for_deflection(600e-9)?,
        points: 2400,
    };
    let mut stacked = Vec::new();
    for site in &row {
        let length = alignment.length_of(site, &preset.array);
        let trace = if site.functional {
            scan_site(site, length, ramp)?
        } else {
            // A dead cantilever does not actuate; its reflection is flat.
            let power = site.optics.reflected_power_at(length, laser);
            let step = (ramp.end - ramp.start) / (ramp.points - 1) as f64;
            ReflectionTrace::new(
                AbscissaKind::Voltage,
                (0..ramp.points)
                    .map(|i| (ramp.start + step * i as f64, power))
                    .collect(),
                0.0,
            )?
        };
        trace.write_csv(&out.join(format!("scan_site_{:02}.csv", site.index)))?;
        stacked.push((site.index, trace));
    }
    cavsim::array::write_stacked_csv(&stacked, &out.join("scan_stacked.csv"))?;

    // Linewidth-measurement scan: laser frequency swept across one
    // resonance of the first functional site at fixed length.
    let reference = row
        .iter()
        .find(|s| s.functional)
        .ok_or_else(|| CliError::config("no functional site in the row"))?;
    let length = alignment.length_of(reference, &preset.array);
    let fwhm = reference.optics.derived.half_linewidth / std::f64::consts::PI;
    let order = (2.0 * length * laser / SPEED_OF_LIGHT).round();
    let resonance = order * SPEED_OF_LIGHT / (2.0 * length);
    let window = 4.0 * fwhm;
    let freq_trace = ReflectionTrace::from_fn(
        AbscissaKind::Frequency,
        resonance - window,
        resonance + window,
        2000,
        |nu| reference.optics.reflected_power_at(length, nu),
    )?;
    freq_trace.write_csv(&out.join("scan_frequency.csv"))?;

    let sites_json: Vec<serde_json::Value> = result
        .sites
        .iter()
        .map(|s| {
            serde_json::json!({
                "index": s.index,
                "voltage": s.voltage,
                "residual_detuning_hz": s.residual_detuning,
                "visibility": s.visibility,
                "status": match s.status {
                    TuneStatus::Tuned => "tuned",
                    TuneStatus::Dead => "dead",
                    TuneStatus::PullInLimited => "pull_in_limited",
                },
            })
        })
        .collect();
    let report = serde_json::json!({
        "preset": preset.name,
        "seed": seed,
        "laser_frequency_hz": laser,
        "alignment": { "global_gap_m": alignment.global_gap, "tilt_rad": alignment.tilt },
        "tuned": result.tuned,
        "dead": result.dead,
        "pull_in_limited": result.pull_in_limited,
        "min_visibility": result.min_visibility,
        "mean_visibility": result.mean_visibility,
        "sites": sites_json,
    });
    write_json(&out.join("scan_report.json"), &report)
}

fn cmd_fit(trace_path: &Path, peaks: usize, out: &Path) -> Result<(), CliError> {
    let trace = ReflectionTrace::<f64>::read_csv(trace_path)?;
    let fit = fit::fit_lorentzians(&trace, peaks, None)?;
    let peaks_json: Vec<serde_json::Value> = fit
        .model
        .peaks
        .iter()
        .enumerate()
        .map(|(i, p)| {
            serde_json::json!({
                "center": p.center,
                "half_width": p.half_width,
                "depth": p.depth,
                "center_stderr": fit.parameter_uncertainties[1 + 3 * i],
                "half_width_stderr": fit.parameter_uncertainties[2 + 3 * i],
                "depth_stderr": fit.parameter_uncertainties[3 + 3 * i],
            })
        })
        .collect();
    let report = serde_json::json!({
        "trace": trace_path.display().to_string(),
        "converged": fit.converged,
        "iterations": fit.iterations,
        "residual_rms": fit.residual_rms,
        "baseline": fit.model.baseline,
        "baseline_stderr": fit.parameter_uncertainties[0],
        "peaks": peaks_json,
    });
    write_json(&out.join("fit_report.json"), &report)?;
    if !fit.converged {
        return Err(CliError {
            code: EXIT_NO_CONVERGENCE,
            message: format!("fit did not converge in {} iterations", fit.iterations),
        });
    }
    Ok(())
}

fn cmd_lock(preset: &Preset, out: &Path) -> Result<(), CliError> {
    let plant = preset.plant;
    let noise = preset.noise;
    let pid = tune_pid(&plant, preset.loop_bandwidth)?;
    let pid_json = serde_json::json!({
        "kp": pid.kp, "ki": pid.ki, "kd": pid.kd,
        "loop_bandwidth_hz": pid.loop_bandwidth,
        "setpoint_v": pid.setpoint,
        "sample_rate_hz": pid.sample_rate,
    });

    // Step-response experiment: four 20 mV setpoint steps. Plateaus ride
    // only on the setpoint noise; the power-fluctuation wander is far
    // slower than a plateau and belongs to the long noise runs below.
    let schedule = StepSchedule::staircase(5e-3, 5e-3, 0.020, 4);
    let step_noise = NoiseSpec {
        power_fluctuation_rel: 0.0,
        thermal_drift: 0.0,
        ..noise
    };
    let step_trace = simulate_step_response(&plant, &pid, &step_noise, &schedule)?;
    let params = serde_json::json!({
        "preset": preset.name,
        "pid": pid_json,
        "noise": serde_json::to_value(noise).expect("noise serialises"),
        "schedule": serde_json::to_value(&schedule).expect("schedule serialises"),
    });
    step_trace.write_csv(&out.join("lock_step.csv"), &params)?;
    let plateaus = plateau_stats(&step_trace, &schedule, 0.3);
    let spacings: Vec<f64> = plateaus
        .windows(2)
        .map(|w| w[1].mean_length - w[0].mean_length)
        .collect();
    let mean_spacing = spacings.iter().sum::<f64>() / spacings.len().max(1) as f64;

    // Noise statistics: setpoint noise alone, then everything.
    let setpoint_only = NoiseSpec {
        power_fluctuation_rel: 0.0,
        thermal_drift: 0.0,
        ..noise
    };
    let sp_trace = simulate_noise_run(&plant, &pid, &setpoint_only, 1.0)?;
    let rms_setpoint_only = position_noise_rms(&sp_trace, 0.05);

    let full_trace = simulate_noise_run(&plant, &pid, &noise, 1.0)?;
    let rms_full = position_noise_rms(&full_trace, 0.05);
    full_trace.write_csv(&out.join("lock_noise.csv"), &params)?;

    let psd = power_spectrum(&full_trace, 5e3)?;
    psd_to_csv(&psd, &out.join("lock_psd.csv"))?;
    let psd_peak = psd
        .iter()
        .filter(|&&(f, _)| (150e3..300e3).contains(&f))
        .max_by(|a, b| a.1.partial_cmp(&b.1).expect("finite PSD"))
        .map(|&(f, _)| f)
        .unwrap_or(0.0);

    let summary = serde_json::json!({
        "preset": preset.name,
        "seed": noise.seed,
        "pid": pid_json,
        "plateau_spacing_m": mean_spacing,
        "plateau_spacings_m": spacings,
        "plateau_rms_m": plateaus.iter().map(|p| p.rms).collect::<Vec<_>>(),
        "rms_setpoint_only_m": rms_setpoint_only,
        "rms_full_m": rms_full,
        "psd_peak_hz": psd_peak,
    });
    write_json(&out.join("lock_summary.json"), &summary)
}

fn cqed_report(preset: &Preset) -> Result<serde_json::Value, CliError> {
    let length = preset.cavity_length;
    let radius = preset.radius_of_curvature;
    let gamma = 2.0 * std::f64::consts::PI * 3e6; // Rb D2 amplitude decay

    let geom_rb = CavityGeometry::new(length, radius, 780e-9)?;
    let waist_rb = geom_rb.mode_waist()?;
    let eta = optics::mode_overlap(waist_rb, preset.fibre.mode_waist, 0.0);
    let g_rb = optics::cqed_coupling(waist_rb, length, 780e-9, gamma);

    // The linewidth-matched calibration reproduces the measured
    // half-linewidth; the active preset supplies the visibility.
    let kappa = Preset::linewidth_matched()
        .cavity_optics()
        .map_err(|e| CliError::config(e.to_string()))?
        .derived
        .half_linewidth;
    let visibility = preset.cavity_optics()?.visibility();
    let c1 = optics::cooperativity(g_rb, kappa, gamma, 1.0);
    let c_upgraded = optics::cooperativity(g_rb, 2.0 * std::f64::consts::PI * 26e6, gamma, 1.0);

    let geom_nv = CavityGeometry::new(length, radius, 637e-9)?;
    let waist_nv = geom_nv.mode_waist()?;
    let fsr = optics::free_spectral_range(length);
    let kappa_6e4 = std::f64::consts::PI * fsr / 6e4;
    let g_nv = optics::cqed_coupling(waist_nv, length, 637e-9, gamma);
    let c_nv = optics::cooperativity(g_nv, kappa_6e4, gamma, 0.04);

    Ok(serde_json::json!({
        "preset": preset.name,
        "rb": {
            "wavelength_m": 780e-9,
            "cavity_waist_m": waist_rb,
            "eta_sq": eta * eta,
            "visibility": visibility,
            "g_rad_per_s": g_rb,
            "g_over_2pi_hz": g_rb / (2.0 * std::f64::consts::PI),
            "kappa_over_2pi_hz": kappa / (2.0 * std::f64::consts::PI),
            "cooperativity": c1,
            "cooperativity_finesse_6e4_kappa_2pi_26mhz": c_upgraded,
        },
        "nv": {
            "wavelength_m": 637e-9,
            "cavity_waist_m": waist_nv,
            "zpl_branching": 0.04,
            "finesse": 6e4,
            "kappa_over_2pi_hz": kappa_6e4 / (2.0 * std::f64::consts::PI),
            "cooperativity": c_nv,
        },
    }))
}

fn cmd_figures(preset: &Preset, seed: u64, out: &Path) -> Result<(), CliError> {
    cmd_deflection(preset, out)?;
    cmd_scan(preset, seed, out)?;
    cmd_lock(preset, out)?;
    write_json(&out.join("cqed_report.json"), &cqed_report(preset)?)?;
    write_json(
        &out.join("optics_report.json"),
        &preset.cavity_optics()?.report(),
    )
}
