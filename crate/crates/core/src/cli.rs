//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical error.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::alignability::{align_test, AlignmentReport};
use crate::analysis::{analyze_dataset, AnalysisOptions, DatasetAnalysis};
use crate::error::{Error, Result};
use crate::io::{load_gram, load_matrix, write_matrix};
use crate::kernel::{kernel_spectrum, linear_gram, rbf_gram, GramMatrix, KernelSpectrum};
use crate::linalg::DataMatrix;
use crate::noise::{estimate_noise_corrected, NoiseModel, ResidualCorrection, DEFAULT_PENALTY_C};
use crate::report::{cell, ReportEnvelope, Table};
use crate::sim::{
    generate_dataset, parse_config, run_null_calibration, run_power_sweep, stretched_axes,
    trial_seed, SimConfig, DEFAULT_C_VALUES,
};
use crate::spikes::nmsd;
use crate::uncertainty::{confidence_intervals, profile_intervals, IntervalSet, SignalPlugin};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "nmsd",
    version,
    about = "Noise-aware spectral profiles and alignability tests"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate the block-constant noise variance map.
    Noise(NoiseArgs),
    /// Debiased spikes and spectral profile of one dataset.
    Profile(ProfileArgs),
    /// nMSD between two datasets.
    Distance(PairArgs),
    /// Two-sample alignability test.
    Test(PairArgs),
    /// Kernel nMSD from raw data or precomputed Gram matrices.
    Kernel(KernelArgs),
    /// Monte Carlo null calibration or power sweep on the simulation design.
    Simulate(SimulateArgs),
}

#[derive(Args, Debug, Clone)]
struct InputArgs {
    /// Input files are CSV with one header row.
    #[arg(long)]
    header: bool,
    /// Input files store samples as rows.
    #[arg(long)]
    transpose: bool,
}

#[derive(Args, Debug, Clone)]
struct OutputArgs {
    /// Output path (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// Working rank r.
    #[arg(long)]
    rank: usize,
    /// Jump penalty multiplier c in β = c·ln(p)/N.
    #[arg(long, default_value_t = DEFAULT_PENALTY_C)]
    penalty_c: f64,
    /// Subtract feature means before analysis.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    center: bool,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_enum, default_value_t = PluginArg::DebiasedSpikes)]
    plugin: PluginArg,
    #[arg(long, value_enum, default_value_t = CorrectionArg::ProjectionLoss)]
    residual_correction: CorrectionArg,
}

#[derive(Args, Debug)]
struct NoiseArgs {
    /// Number of leading components removed before segmentation.
    #[arg(long)]
    rank: usize,
    #[arg(long, default_value_t = DEFAULT_PENALTY_C)]
    penalty_c: f64,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    center: bool,
    #[arg(long, value_enum, default_value_t = CorrectionArg::ProjectionLoss)]
    residual_correction: CorrectionArg,
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    output: OutputArgs,
    file: PathBuf,
}

#[derive(Args, Debug)]
struct ProfileArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Report confidence intervals.
    #[arg(long)]
    ci: bool,
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    output: OutputArgs,
    file: PathBuf,
}

#[derive(Args, Debug)]
struct PairArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Report confidence intervals (always on for `test`).
    #[arg(long)]
    ci: bool,
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    output: OutputArgs,
    first: PathBuf,
    second: PathBuf,
}

#[derive(Args, Debug)]
struct KernelArgs {
    #[arg(long)]
    rank: usize,
    #[arg(long, value_enum, default_value_t = KernelKind::Linear)]
    kernel: KernelKind,
    /// RBF bandwidth h in exp(−‖x − y‖²/(2h²)).
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Inputs are precomputed Gram matrices.
    #[arg(long)]
    gram: bool,
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    output: OutputArgs,
    first: PathBuf,
    second: PathBuf,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    experiment: Experiment,
    /// key = value configuration file, applied before the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    /// Sample size of both datasets.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    penalty_c: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Comma separated c values for the power sweep.
    #[arg(long, value_delimiter = ',')]
    c_values: Option<Vec<f64>>,
    #[arg(long)]
    pilot_reps: Option<usize>,
    /// Write the first trial's datasets as CSV into this directory.
    #[arg(long)]
    emit_data: Option<PathBuf>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
enum Format {
    Json,
    Csv,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
enum KernelKind {
    Linear,
    Rbf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
enum Experiment {
    Null,
    Power,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum PluginArg {
    DebiasedSpikes,
    SampleRankFit,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum CorrectionArg {
    ProjectionLoss,
    None,
}

impl From<CorrectionArg> for ResidualCorrection {
    fn from(c: CorrectionArg) -> Self {
        match c {
            CorrectionArg::ProjectionLoss => ResidualCorrection::ProjectionLoss,
            CorrectionArg::None => ResidualCorrection::None,
        }
    }
}

impl From<PluginArg> for SignalPlugin {
    fn from(p: PluginArg) -> Self {
        match p {
            PluginArg::DebiasedSpikes => SignalPlugin::DebiasedSpikes,
            PluginArg::SampleRankFit => SignalPlugin::SampleRankFit,
        }
    }
}

impl ModelArgs {
    fn options(&self, with_covariance: bool) -> AnalysisOptions {
        AnalysisOptions {
            rank: self.rank,
            penalty_c: self.penalty_c,
            center: self.center,
            alpha: self.alpha,
            plugin: self.plugin.into(),
            residual_correction: self.residual_correction.into(),
            with_covariance,
        }
    }
}

/// What a command produced: a JSON payload, its CSV flattening, warnings.
struct Outcome {
    config: Map<String, Value>,
    results: Value,
    table: Table,
    warnings: Vec<String>,
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn echo(pairs: Value) -> Map<String, Value> {
    match pairs {
        Value::Object(m) => m,
        _ => Map::new(),
    }
}

fn input_echo(input: &InputArgs, files: &[&PathBuf]) -> Value {
    json!({
        "inputs": files.iter().map(|f| f.display().to_string()).collect::<Vec<_>>(),
        "header": input.header,
        "transpose": input.transpose,
    })
}

fn merge(mut a: Map<String, Value>, b: Value) -> Map<String, Value> {
    if let Value::Object(b) = b {
        a.extend(b);
    }
    a
}

fn load(path: &PathBuf, input: &InputArgs) -> Result<DataMatrix> {
    load_matrix(path, input.header, input.transpose)
}

fn noise_json(n: &NoiseModel) -> Value {
    json!({
        "sigma": n.sigma,
        "boundaries": n.boundaries,
        "segments": n.segments().iter().map(|&(s, e, v)| json!({"start": s, "end": e, "variance": v})).collect::<Vec<_>>(),
        "kappa3": n.kappa3,
        "kappa4": n.kappa4,
        "penalty_beta": n.penalty_beta,
    })
}

fn run_noise(a: &NoiseArgs) -> Result<Outcome> {
    let y = load(&a.file, &a.input)?;
    let y = if a.center { y.centered() } else { y };
    let noise = estimate_noise_corrected(&y, a.rank, a.penalty_c, a.residual_correction.into())?;
    let mut table = Table::new(&["start", "end", "variance"]);
    for (s, e, v) in noise.segments() {
        table.push([s.to_string(), e.to_string(), v.to_string()]);
    }
    let mut results = noise_json(&noise);
    results["p"] = y.p().into();
    results["n"] = y.n().into();
    Ok(Outcome {
        config: merge(
            echo(json!({
                "rank": a.rank,
                "penalty_c": a.penalty_c,
                "center": a.center,
                "residual_correction": ResidualCorrection::from(a.residual_correction),
            })),
            input_echo(&a.input, &[&a.file]),
        ),
        results,
        table,
        warnings: Vec::new(),
    })
}

fn analysis_json(a: &DatasetAnalysis) -> Value {
    json!({
        "p": a.p,
        "n": a.n,
        "rank": a.spikes.rank,
        "lambda": a.spikes.lambda,
        "xi_hat": a.spikes.xi_hat,
        "theta_prime": a.spikes.theta_prime,
        "d2_hat": a.spikes.d2_hat,
        "pi": a.profile.pi,
        "noise": noise_json(&a.noise),
    })
}

fn model_echo(m: &ModelArgs, ci: bool) -> Value {
    json!({
        "rank": m.rank,
        "penalty_c": m.penalty_c,
        "center": m.center,
        "alpha": m.alpha,
        "plugin": SignalPlugin::from(m.plugin),
        "residual_correction": ResidualCorrection::from(m.residual_correction),
        "ci": ci,
    })
}

fn interval_cells(iv: Option<&crate::uncertainty::Interval>) -> [String; 2] {
    [cell(iv.map(|i| i.lo)), cell(iv.map(|i| i.hi))]
}

fn run_profile(a: &ProfileArgs) -> Result<Outcome> {
    let y = load(&a.file, &a.input)?;
    let analysis = analyze_dataset(&y, &a.model.options(a.ci))?;
    let mut results = analysis_json(&analysis);
    let intervals = if a.ci {
        let set = profile_intervals(&analysis.profile, analysis.v_pi()?, a.model.alpha)?;
        let cov = analysis.covariance.as_ref().expect("covariance requested");
        results["lambda_sd"] = to_value(
            &cov.lambda_covariance()
                .diagonal()
                .iter()
                .map(|v| v.max(0.0).sqrt())
                .collect::<Vec<_>>(),
        );
        results["intervals"] = to_value(&set);
        Some(set)
    } else {
        None
    };
    let mut table = Table::new(&[
        "component",
        "lambda",
        "xi_hat",
        "d2_hat",
        "pi",
        "pi_lo",
        "pi_hi",
    ]);
    for k in 0..analysis.spikes.rank {
        let iv = intervals.as_ref().map(|s| &s.components[k]);
        let [lo, hi] = interval_cells(iv);
        table.push([
            (k + 1).to_string(),
            analysis.spikes.lambda[k].to_string(),
            analysis.spikes.xi_hat[k].to_string(),
            analysis.spikes.d2_hat[k].to_string(),
            analysis.profile.pi[k].to_string(),
            lo,
            hi,
        ]);
    }
    Ok(Outcome {
        config: merge(
            echo(model_echo(&a.model, a.ci)),
            input_echo(&a.input, &[&a.file]),
        ),
        results,
        table,
        warnings: Vec::new(),
    })
}

fn analyze_pair(a: &PairArgs, with_covariance: bool) -> Result<(DatasetAnalysis, DatasetAnalysis)> {
    let y1 = load(&a.first, &a.input).map_err(|e| e.in_dataset(1))?;
    let y2 = load(&a.second, &a.input).map_err(|e| e.in_dataset(2))?;
    if y1.p() != y2.p() {
        return Err(Error::invalid(format!(
            "feature counts differ: {} vs {}",
            y1.p(),
            y2.p()
        )));
    }
    let opts = a.model.options(with_covariance);
    let a1 = analyze_dataset(&y1, &opts).map_err(|e| e.in_dataset(1))?;
    let a2 = analyze_dataset(&y2, &opts).map_err(|e| e.in_dataset(2))?;
    Ok((a1, a2))
}

fn run_distance(a: &PairArgs) -> Result<Outcome> {
    let (a1, a2) = analyze_pair(a, a.ci)?;
    let distance = nmsd(&a1.profile, &a2.profile)?;
    let mut warnings = Vec::new();
    let intervals: Option<IntervalSet> = if a.ci {
        let set = confidence_intervals(
            &a1.profile,
            &a2.profile,
            a1.v_pi()?,
            a2.v_pi()?,
            a.model.alpha,
        )?;
        if set.nmsd_degenerate {
            warnings.push("estimated distance is near zero; no nMSD interval reported".into());
        }
        Some(set)
    } else {
        None
    };
    let mut table = Table::new(&["nmsd", "nmsd_lo", "nmsd_hi"]);
    let [lo, hi] = interval_cells(intervals.as_ref().and_then(|s| s.nmsd.as_ref()));
    table.push([distance.to_string(), lo, hi]);
    let delta: Vec<f64> = a1
        .profile
        .pi
        .iter()
        .zip(&a2.profile.pi)
        .map(|(x, y)| x - y)
        .collect();
    Ok(Outcome {
        config: merge(
            echo(model_echo(&a.model, a.ci)),
            input_echo(&a.input, &[&a.first, &a.second]),
        ),
        results: json!({
            "nmsd": distance,
            "pi1": a1.profile.pi,
            "pi2": a2.profile.pi,
            "delta_pi": delta,
            "intervals": intervals,
        }),
        table,
        warnings,
    })
}

fn run_test(a: &PairArgs) -> Result<Outcome> {
    let y1 = load(&a.first, &a.input).map_err(|e| e.in_dataset(1))?;
    let y2 = load(&a.second, &a.input).map_err(|e| e.in_dataset(2))?;
    let report: AlignmentReport = align_test(&y1, &y2, &a.model.options(true))?;
    let mut table = Table::new(&[
        "t_stat", "df", "p_value", "nmsd_hat", "nmsd_lo", "nmsd_hi", "n_eff",
    ]);
    let [lo, hi] = interval_cells(report.intervals.nmsd.as_ref());
    table.push([
        report.t_stat.to_string(),
        report.df.to_string(),
        report.p_value.to_string(),
        report.nmsd_hat.to_string(),
        lo,
        hi,
        report.n_eff.to_string(),
    ]);
    Ok(Outcome {
        config: merge(
            echo(model_echo(&a.model, true)),
            input_echo(&a.input, &[&a.first, &a.second]),
        ),
        warnings: report.warnings.clone(),
        results: to_value(&report),
        table,
    })
}

fn run_kernel(a: &KernelArgs) -> Result<Outcome> {
    let build = |path: &PathBuf| -> Result<GramMatrix> {
        if a.gram {
            return load_gram(path, a.input.header);
        }
        let x = load(path, &a.input)?;
        match a.kernel {
            KernelKind::Linear => Ok(linear_gram(&x)),
            KernelKind::Rbf => {
                let h = a
                    .bandwidth
                    .ok_or_else(|| Error::invalid("--bandwidth is required for the rbf kernel"))?;
                rbf_gram(&x, h)
            }
        }
    };
    let spectrum = |i: usize, path: &PathBuf| -> Result<KernelSpectrum> {
        build(path)
            .and_then(|k| kernel_spectrum(&k, a.rank))
            .map_err(|e| e.in_dataset(i))
    };
    let s1 = spectrum(1, &a.first)?;
    let s2 = spectrum(2, &a.second)?;
    let distance = nmsd(&s1.profile, &s2.profile)?;
    let mut warnings = Vec::new();
    for (i, s) in [(1, &s1), (2, &s2)] {
        warnings.extend(s.warnings.iter().map(|w| format!("dataset {i}: {w}")));
    }
    let mut table = Table::new(&["nmsd"]);
    table.push([distance]);
    Ok(Outcome {
        config: merge(
            echo(json!({
                "rank": a.rank,
                "kernel": if a.gram { Value::from("precomputed") } else { to_value(&a.kernel) },
                "bandwidth": a.bandwidth,
                "gram": a.gram,
            })),
            input_echo(&a.input, &[&a.first, &a.second]),
        ),
        results: json!({
            "nmsd": distance,
            "spectrum1": s1,
            "spectrum2": s2,
        }),
        table,
        warnings,
    })
}

fn run_simulate(a: &SimulateArgs) -> Result<Outcome> {
    let mut cfg = match a.experiment {
        Experiment::Null => SimConfig::default(),
        Experiment::Power => SimConfig::power_design(),
    };
    let mut c_values = DEFAULT_C_VALUES.to_vec();
    if let Some(path) = &a.config {
        let text =
            fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        for (k, v) in parse_config(&text, &mut cfg)? {
            match k.as_str() {
                "c_values" => {
                    c_values = v
                        .split(',')
                        .map(|x| {
                            x.trim()
                                .parse()
                                .map_err(|_| Error::invalid(format!("bad c value {x:?}")))
                        })
                        .collect::<Result<_>>()?
                }
                other => return Err(Error::invalid(format!("unknown config key {other:?}"))),
            }
        }
    }
    if let Some(s) = a.seed {
        cfg.master_seed = s;
    }
    if let Some(r) = a.reps {
        cfg.n_rep = r;
    }
    if let Some(n) = a.n {
        cfg.n1 = n;
        cfg.n2 = n;
    }
    if let Some(p) = a.p {
        cfg.p = p;
    }
    if let Some(c) = a.penalty_c {
        cfg.penalty_c = c;
    }
    if let Some(al) = a.alpha {
        cfg.alpha = al;
    }
    if let Some(cv) = &a.c_values {
        c_values = cv.clone();
    }
    if let Some(pr) = a.pilot_reps {
        cfg.pilot_reps = pr;
    }
    cfg.validate()?;

    if let Some(dir) = &a.emit_data {
        fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
        let seed = trial_seed(cfg.master_seed, 0);
        let designs: Vec<(String, SimConfig)> = match a.experiment {
            Experiment::Null => vec![("null".into(), cfg.clone())],
            Experiment::Power => c_values
                .iter()
                .map(|&c| {
                    let mut alt = cfg.clone();
                    alt.d2 = stretched_axes(&cfg.d1, c);
                    (format!("c{c}"), alt)
                })
                .collect(),
        };
        for (tag, design) in designs {
            for which in 1..=2 {
                let y = generate_dataset(&design, which, seed)?;
                write_matrix(dir.join(format!("{tag}_y{which}.csv")), y.values())?;
            }
        }
    }

    let mut config = echo(to_value(&cfg));
    config.insert("experiment".into(), to_value(&a.experiment));
    match a.experiment {
        Experiment::Null => {
            let rep = run_null_calibration(&cfg)?;
            let mut table = Table::new(&["q", "empirical", "theoretical"]);
            for row in &rep.quantiles {
                table.push([row.q, row.empirical, row.theoretical]);
            }
            let warnings = failure_warning(rep.n_failed, rep.n_rep);
            Ok(Outcome {
                config,
                results: to_value(&rep),
                table,
                warnings,
            })
        }
        Experiment::Power => {
            config.insert("c_values".into(), to_value(&c_values));
            let rep = run_power_sweep(&cfg, &c_values)?;
            let mut table = Table::new(&[
                "c",
                "population_distance",
                "lambda_nc",
                "theoretical_power",
                "empirical_power",
                "nmsd_coverage",
            ]);
            let failed: usize = rep.rows.iter().map(|r| r.n_failed).sum();
            for r in &rep.rows {
                table.push([
                    r.c.to_string(),
                    r.population_distance.to_string(),
                    r.lambda_nc.to_string(),
                    r.theoretical_power.to_string(),
                    cell(r.empirical_power),
                    cell(r.nmsd_coverage),
                ]);
            }
            Ok(Outcome {
                config,
                results: to_value(&rep),
                table,
                warnings: failure_warning(failed, rep.n_rep * rep.rows.len()),
            })
        }
    }
}

fn failure_warning(failed: usize, total: usize) -> Vec<String> {
    if failed == 0 {
        Vec::new()
    } else {
        vec![format!(
            "{failed} of {total} trials failed numerically and were skipped"
        )]
    }
}

fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_DATA
    }
}

fn emit(
    name: &str,
    outcome: Outcome,
    output: &OutputArgs,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<()> {
    let mut buf = Vec::new();
    match output.format {
        Format::Json => {
            ReportEnvelope::new(name, outcome.config, outcome.results, outcome.warnings)
                .write_json(&mut buf)?
        }
        Format::Csv => {
            outcome.table.write_csv(&mut buf)?;
            for w in &outcome.warnings {
                writeln!(err, "warning: {w}")?;
            }
        }
    }
    match &output.out {
        Some(path) => {
            fs::write(path, buf).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?
        }
        None => out.write_all(&buf)?,
    }
    Ok(())
}

/// Parses `argv` (including the program name), runs the command and returns the exit code.
pub fn dispatch<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                EXIT_USAGE
            } else {
                let _ = write!(out, "{text}");
                EXIT_OK
            };
        }
    };
    let (name, result, output) = match &cli.command {
        Command::Noise(a) => ("noise", run_noise(a), &a.output),
        Command::Profile(a) => ("profile", run_profile(a), &a.output),
        Command::Distance(a) => ("distance", run_distance(a), &a.output),
        Command::Test(a) => ("test", run_test(a), &a.output),
        Command::Kernel(a) => ("kernel", run_kernel(a), &a.output),
        Command::Simulate(a) => ("simulate", run_simulate(a), &a.output),
    };
    match result.and_then(|o| emit(name, o, output, out, err)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}
