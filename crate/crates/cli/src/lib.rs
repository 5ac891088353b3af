//! `whiten`: simulate systems, train sequence models with or without the
//! whitening loss, evaluate residuals and check gradients.
//!
//! [`run`] takes a full argument list, so the commands can also be driven
//! in-process. Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use whiten_core::datasets::{build_from_csv, regime_trajectories, DatasetManifest, RegimeSpec, WindowedDataset};
use whiten_core::evaluation::{
    acf_csv, aggregate, aggregate_acf_csv, emit_aggregate, emit_report, emit_table, evaluate, EvalOptions,
    EvalReport, Format, ReportIds, TableRow,
};
use whiten_core::experiment::{
    default_hold, load_run, run_experiment, ExperimentConfig, ModelConfig, Variant, EXTRAPOLATION,
    INTERPOLATION,
};
use whiten_core::gradcheck::{run_suites, Component, GradcheckOptions};
use whiten_core::nn::Architecture;
use whiten_core::par::Exec;
use whiten_core::simulators::{csv_export, ChannelSchema, System};
use whiten_core::training::{LossKind, RunStatus};
use whiten_core::Error;

const OUT_ENV: &str = "WHITEN_OUT";

static QUIET: AtomicBool = AtomicBool::new(false);

/// `println!` unless `--quiet` was given.
macro_rules! say {
    ($($arg:tt)*) => {
        if !QUIET.load(Ordering::Relaxed) {
            println!($($arg)*);
        }
    };
}

#[derive(Parser, Debug)]
#[command(name = "whiten", version, about = "Residual-whitening system identification toolkit")]
struct Cli {
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    /// Only report errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate trajectories and write them as CSV.
    Simulate(SimulateArgs),
    /// Train models (one run per model × loss × seed) and evaluate them.
    Train(TrainArgs),
    /// Evaluate trained runs and aggregate across seeds.
    Eval(EvalArgs),
    /// Finite-difference gradient checks for every layer and loss.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    system: System,
    /// Actuation magnitude bound.
    #[arg(long, default_value_t = 0.5)]
    amplitude: f64,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    /// Steps each random actuation level is held; defaults per system.
    #[arg(long)]
    hold: Option<usize>,
    /// Std of Gaussian measurement noise on the recorded states.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    trajectories: usize,
    /// Output directory [default: $WHITEN_OUT/simulate or ./whiten-out/simulate].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Experiment configuration (JSON). Flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    system: Option<System>,
    /// Architectures, comma separated: dense, rnn, lstm.
    #[arg(long, value_delimiter = ',')]
    model: Vec<Architecture>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    /// Losses, comma separated: mse, mse+ljb.
    #[arg(long, value_delimiter = ',')]
    loss: Vec<LossKind>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    lags: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    plateau_patience: Option<usize>,
    #[arg(long)]
    lr_factor: Option<f64>,
    #[arg(long)]
    early_stop_patience: Option<usize>,
    #[arg(long)]
    plateau_threshold: Option<f64>,
    #[arg(long)]
    grad_clip: Option<f64>,
    /// Single training seed (shorthand for --seeds N).
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Concurrent runs; 0 uses every worker thread.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long)]
    lookback: Option<usize>,
    #[arg(long)]
    lookforward: Option<usize>,
    /// Actuation bound of the training and interpolation sets.
    #[arg(long)]
    amplitude: Option<f64>,
    #[arg(long)]
    extrap_amplitude: Option<f64>,
    #[arg(long)]
    hold: Option<usize>,
    #[arg(long)]
    extrap_hold: Option<usize>,
    /// Measurement noise std for every simulated set.
    #[arg(long)]
    noise: Option<f64>,
    /// Trajectories per simulated set.
    #[arg(long)]
    trajectories: Option<usize>,
    /// Multiplies every sample budget.
    #[arg(long)]
    scale: Option<f64>,
    /// Base seed of the simulated sets (training pool, interpolation, extrapolation use N, N+1, N+2).
    #[arg(long)]
    data_seed: Option<u64>,
    /// Trajectory CSVs for the training/validation pool instead of simulating.
    #[arg(long)]
    train_data: Vec<PathBuf>,
    #[arg(long)]
    interp_data: Vec<PathBuf>,
    #[arg(long)]
    extrap_data: Vec<PathBuf>,
    /// Output directory [default: $WHITEN_OUT/train or ./whiten-out/train].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Run directories written by `train` (each holds checkpoint.json and run.json).
    #[arg(long = "run-dir", required = true)]
    run_dirs: Vec<PathBuf>,
    /// Trajectory CSVs to evaluate on instead of the run's recorded test sets.
    #[arg(long)]
    data: Vec<PathBuf>,
    /// Name of the set given by --data.
    #[arg(long, default_value = "data")]
    name: String,
    #[arg(long, default_value_t = 5)]
    lags: usize,
    /// Subtract each window's mean before the ACF.
    #[arg(long)]
    centered: bool,
    /// Also write per-lag ACF plot data.
    #[arg(long)]
    acf_csv: bool,
    /// Aggregate reports across the run directories.
    #[arg(long)]
    aggregate: bool,
    /// Output directory [default: each run directory; aggregates go to $WHITEN_OUT/eval].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Component name, `dense`, or `all`.
    #[arg(long, default_value = "all")]
    component: String,
    #[arg(long, default_value_t = 100)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Corrupt the analytic gradients; every suite must then fail.
    #[arg(long, hide = true)]
    inject_fault: bool,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn output_dir(flag: Option<PathBuf>, command: &str) -> PathBuf {
    flag.unwrap_or_else(|| {
        let root = std::env::var_os(OUT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("whiten-out"));
        root.join(command)
    })
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

/// The exact argument list, saved beside outputs so the command can be re-run.
#[derive(Serialize)]
struct CommandRecord {
    tool_version: &'static str,
    argv: Vec<String>,
}

fn record_command(dir: &Path, argv: &[String]) -> CmdResult {
    let argv = argv.to_vec();
    write_json(
        &dir.join("command.json"),
        &CommandRecord {
            tool_version: env!("CARGO_PKG_VERSION"),
            argv,
        },
    )
}

#[derive(Serialize)]
struct SimulationManifest {
    system: System,
    params: whiten_core::simulators::SystemParams,
    regime: RegimeSpec,
    files: Vec<String>,
}

fn cmd_simulate(args: SimulateArgs, exec: Exec, argv: &[String]) -> CmdResult {
    let params = args.system.default_params();
    let regime = RegimeSpec {
        amplitude: args.amplitude,
        hold: args.hold.unwrap_or_else(|| default_hold(args.system)),
        trajectories: args.trajectories,
        steps: args.steps,
        noise_sigma: args.noise,
        seed: args.seed,
    };
    regime.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let out = output_dir(args.out, "simulate");
    create_dir(&out)?;
    let trajectories = regime_trajectories(&params, &regime, exec)?;
    let mut files = Vec::new();
    for (i, traj) in trajectories.iter().enumerate() {
        let name = if trajectories.len() == 1 {
            format!("{}-s{}.csv", args.system, args.seed)
        } else {
            format!("{}-s{}-{i}.csv", args.system, args.seed)
        };
        csv_export(traj, &out.join(&name))?;
        say!("wrote {}", out.join(&name).display());
        files.push(name);
    }
    write_json(
        &out.join("simulate.json"),
        &SimulationManifest {
            system: args.system,
            params,
            regime,
            files,
        },
    )?;
    record_command(&out, argv)
}

/// Defaults, then the config file, then flags.
fn resolve_experiment(args: &TrainArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match (&args.config, args.system) {
        (Some(path), system) => {
            let mut cfg = ExperimentConfig::load(path)?;
            if let Some(system) = system.filter(|s| *s != cfg.system) {
                cfg.system = system;
                cfg.params = system.default_params();
            }
            cfg
        }
        (None, system) => {
            let mut cfg = ExperimentConfig::desk(system.unwrap_or(System::Pendulum));
            cfg.variants = vec![Variant::mse()];
            cfg
        }
    };
    if args.lookback.is_some() || args.lookforward.is_some() {
        cfg.set_window(
            args.lookback.unwrap_or(cfg.lookback),
            args.lookforward.unwrap_or(cfg.lookforward),
        );
    }
    if let Some(f) = args.scale {
        if !(f > 0.0) {
            return Err(Failure::Usage(format!("--scale must be positive, got {f}")));
        }
        cfg = cfg.scaled(f);
    }
    let regimes = [&mut cfg.train_regime, &mut cfg.interpolation, &mut cfg.extrapolation];
    for (i, r) in regimes.into_iter().enumerate() {
        if let Some(a) = args.amplitude.filter(|_| i < 2) {
            r.amplitude = a;
        }
        if let Some(a) = args.extrap_amplitude.filter(|_| i == 2) {
            r.amplitude = a;
        }
        if let Some(h) = args.hold.filter(|_| i < 2) {
            r.hold = h;
        }
        if let Some(h) = args.extrap_hold.filter(|_| i == 2) {
            r.hold = h;
        }
        if let Some(n) = args.noise {
            r.noise_sigma = n;
        }
        if let Some(k) = args.trajectories {
            let windows = r.steps + 1 - cfg.lookback - cfg.lookforward;
            let total = windows * r.trajectories;
            r.trajectories = k;
            r.steps = RegimeSpec::steps_for(total, k, cfg.lookback, cfg.lookforward);
        }
        if let Some(s) = args.data_seed {
            r.seed = s + i as u64;
        }
    }
    if !args.model.is_empty() {
        cfg.models = args.model.iter().map(|&a| ModelConfig::new(a)).collect();
    }
    for m in &mut cfg.models {
        if let Some(d) = args.depth {
            m.depth = d;
        }
        if let Some(w) = args.width {
            m.width = w;
        }
    }
    let template = cfg.variants.first().cloned().unwrap_or_else(Variant::mse);
    let losses: Vec<LossKind> = if args.loss.is_empty() {
        cfg.variants.iter().map(|v| v.loss).collect()
    } else {
        args.loss.clone()
    };
    let overridden = !args.loss.is_empty() || args.lambda.is_some() || args.l2.is_some() || args.dropout.is_some();
    if overridden {
        let previous = cfg.variants.clone();
        cfg.variants = losses
            .iter()
            .map(|&loss| {
                let base = previous.iter().find(|v| v.loss == loss).unwrap_or(&template);
                let lambda = args.lambda.unwrap_or(match (base.loss, loss) {
                    (LossKind::MseLjb, _) => base.lambda,
                    _ => cfg.train.lambda,
                });
                Variant::named(
                    loss,
                    lambda,
                    args.l2.unwrap_or(base.l2),
                    args.dropout.unwrap_or(base.dropout),
                )
            })
            .collect();
    }
    let t = &mut cfg.train;
    macro_rules! set {
        ($field:ident, $flag:expr) => {
            if let Some(v) = $flag {
                t.$field = v;
            }
        };
    }
    set!(lags, args.lags);
    set!(epsilon, args.epsilon);
    set!(lr0, args.lr);
    set!(batch, args.batch);
    set!(max_epochs, args.max_epochs);
    set!(plateau_patience, args.plateau_patience);
    set!(lr_factor, args.lr_factor);
    set!(early_stop_patience, args.early_stop_patience);
    set!(plateau_threshold, args.plateau_threshold);
    set!(grad_clip, args.grad_clip);
    if let Some(s) = args.seed {
        cfg.seeds = vec![s];
    } else if !args.seeds.is_empty() {
        cfg.seeds = args.seeds.clone();
    }
    if !args.train_data.is_empty() {
        cfg.data.train = args.train_data.clone();
    }
    if !args.interp_data.is_empty() {
        cfg.data.interpolation = args.interp_data.clone();
    }
    if !args.extrap_data.is_empty() {
        cfg.data.extrapolation = args.extrap_data.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(args: TrainArgs, exec: Exec, argv: &[String]) -> CmdResult {
    let cfg = resolve_experiment(&args)?;
    let out = output_dir(args.out.clone(), "train");
    create_dir(&out)?;
    record_command(&out, argv)?;
    let result = run_experiment(&cfg, exec, args.jobs, Some(&out))?;
    for run in &result.runs {
        let r = &run.record;
        match &r.status {
            RunStatus::Completed => say!(
                "{}: best epoch {} val loss {:.6e} ({:.1}s)",
                r.id,
                r.best_epoch,
                r.best_val_loss.unwrap_or(f64::NAN),
                r.wall_time_s
            ),
            RunStatus::Diverged { epoch, loss } => say!("{}: diverged at epoch {epoch} (loss {loss})", r.id),
            RunStatus::Failed { message } => say!("{}: failed: {message}", r.id),
        }
    }
    for set in [INTERPOLATION, EXTRAPOLATION] {
        say!("\n{set}\n{}", result.table(set));
    }
    say!("outputs in {}", out.display());
    let failed = result.failures().count();
    if failed > 0 {
        return Err(Failure::Runtime(format!("{failed} run(s) did not complete")));
    }
    Ok(())
}

fn write_eval(dir: &Path, set: &str, report: &EvalReport, with_acf: bool) -> CmdResult {
    for f in Format::ALL {
        emit_report(report, f, &dir.join(format!("eval-{set}.{}", f.extension())))?;
    }
    if with_acf {
        let path = dir.join(format!("acf-{set}.csv"));
        std::fs::write(&path, acf_csv(report)).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn rebuild(manifest: &DatasetManifest, exec: Exec) -> Result<WindowedDataset, Failure> {
    let (lb, lf) = (manifest.lookback, manifest.lookforward);
    if let (Some(params), Some(regime)) = (&manifest.params, &manifest.regime) {
        Ok(whiten_core::datasets::build_regime(params, regime, lb, lf, exec)?)
    } else if !manifest.sources.is_empty() {
        let paths: Vec<PathBuf> = manifest.sources.iter().map(PathBuf::from).collect();
        let schema = ChannelSchema {
            states: manifest.state_names.clone(),
            actions: manifest.action_names.clone(),
        };
        Ok(build_from_csv(&paths, Some(&schema), lb, lf)?)
    } else {
        Err(Failure::Runtime(format!("dataset '{}' records no way to rebuild it", manifest.name)))
    }
}

fn cmd_eval(args: EvalArgs, exec: Exec, argv: &[String]) -> CmdResult {
    let opts = EvalOptions {
        lags: args.lags,
        epsilon: EvalOptions::default().epsilon,
        centered: args.centered,
    };
    let mut by_set: Vec<(String, Vec<EvalReport>)> = Vec::new();
    for run_dir in &args.run_dirs {
        let (manifest, model, stats) = load_run(run_dir)?;
        let dir = args.out.clone().unwrap_or_else(|| run_dir.clone());
        create_dir(&dir)?;
        let first = manifest
            .datasets
            .first()
            .ok_or_else(|| Failure::Runtime(format!("{}: run manifest lists no datasets", run_dir.display())))?;
        let lb = model.spec().lookback;
        let lf = model.spec().output_width() / first.state_names.len().max(1);
        let sets: Vec<(String, WindowedDataset)> = if args.data.is_empty() {
            manifest
                .datasets
                .iter()
                .filter(|d| d.name == INTERPOLATION || d.name == EXTRAPOLATION)
                .map(|d| Ok((d.name.clone(), rebuild(d, exec)?)))
                .collect::<Result<_, Failure>>()?
        } else {
            let schema = ChannelSchema {
                states: first.state_names.clone(),
                actions: first.action_names.clone(),
            };
            vec![(args.name.clone(), build_from_csv(&args.data, Some(&schema), lb, lf)?)]
        };
        let config = manifest.id.rsplit_once("-s").map_or(manifest.id.as_str(), |(c, _)| c);
        for (set, raw) in sets {
            let ds = match &stats {
                Some(s) => s.apply(&raw)?,
                None => raw,
            };
            let ids = ReportIds {
                run_id: manifest.id.clone(),
                dataset: set.clone(),
                config_id: config.to_string(),
            };
            let report = evaluate(&model, &ds, &opts, &ids, exec)?;
            write_eval(&dir, &set, &report, args.acf_csv)?;
            say!("{}", whiten_core::evaluation::markdown_table(&[TableRow::from_report(&format!("{} {set}", manifest.id), &report)]));
            match by_set.iter_mut().find(|(s, _)| *s == set) {
                Some((_, v)) => v.push(report),
                None => by_set.push((set, vec![report])),
            }
        }
    }
    if args.aggregate {
        let dir = output_dir(args.out.clone(), "eval");
        create_dir(&dir)?;
        for (set, reports) in &by_set {
            let agg = aggregate(reports)?;
            for f in Format::ALL {
                emit_aggregate(&agg, f, &dir.join(format!("aggregate-{set}.{}", f.extension())))?;
            }
            if args.acf_csv {
                let path = dir.join(format!("acf-aggregate-{set}.csv"));
                std::fs::write(&path, aggregate_acf_csv(&agg))
                    .map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
            }
            let rows = [TableRow::from_aggregate(&agg.config_id, &agg)];
            emit_table(&rows, &dir.join(format!("table-{set}.md")))?;
            say!("{set} across {} runs\n{}", reports.len(), whiten_core::evaluation::markdown_table(&rows));
        }
        record_command(&dir, argv)?;
    }
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs, exec: Exec) -> CmdResult {
    let components = Component::select(&args.component)?;
    let opts = GradcheckOptions {
        instances: args.instances,
        seed: args.seed,
        rel_tol: args.tolerance,
        inject_fault: args.inject_fault,
        ..GradcheckOptions::default()
    };
    let results = run_suites(&components, &opts, exec)?;
    say!("{:<14} {:>9} {:>9} {:>13} {:>13}  result", "component", "entries", "failures", "worst rel", "worst abs");
    let mut failed = 0;
    for r in &results {
        say!(
            "{:<14} {:>9} {:>9} {:>13.3e} {:>13.3e}  {}",
            r.component.name(),
            r.entries,
            r.failures,
            r.worst_rel_err,
            r.worst_abs_err,
            if r.passed() { "pass" } else { "FAIL" }
        );
        if !r.passed() {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(Failure::Runtime(format!("{failed} component(s) failed the gradient check")));
    }
    Ok(())
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let argv: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    QUIET.store(cli.quiet, Ordering::Relaxed);
    let outcome = match cli.command {
        Command::Simulate(a) => cmd_simulate(a, exec, &argv),
        Command::Train(a) => cmd_train(a, exec, &argv),
        Command::Eval(a) => cmd_eval(a, exec, &argv),
        Command::Gradcheck(a) => cmd_gradcheck(a, exec),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_train(args: &[&str]) -> TrainArgs {
        let mut argv = vec!["whiten", "train"];
        argv.extend_from_slice(args);
        match Cli::try_parse_from(argv).unwrap().command {
            Command::Train(t) => t,
            other => panic!("parsed {other:?}"),
        }
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.json");
        let mut file_cfg = ExperimentConfig::desk(System::BacklashMotor);
        file_cfg.train.lr0 = 0.003;
        file_cfg.train.batch = 64;
        file_cfg.save(&path).unwrap();
        let cfg = resolve_experiment(&parse_train(&["--config", path.to_str().unwrap(), "--batch", "32"])).unwrap();
        assert_eq!(cfg.system, System::BacklashMotor);
        assert_eq!(cfg.train.lr0, 0.003);
        assert_eq!(cfg.train.batch, 32);
        assert_eq!(cfg.variants, file_cfg.variants);
    }

    #[test]
    fn loss_flags_build_variants() {
        let cfg = resolve_experiment(&parse_train(&["--loss", "mse,mse+ljb", "--lambda", "2", "--seeds", "1,2,3"]))
            .unwrap();
        let names: Vec<&str> = cfg.variants.iter().map(|v| v.name.as_str()).collect();
        assert_eq!(names, ["mse", "mse+ljb"]);
        assert_eq!(cfg.variants[1].lambda, 2.0);
        assert_eq!(cfg.seeds, [1, 2, 3]);
        let cfg = resolve_experiment(&parse_train(&["--loss", "mse+ljb", "--dropout", "0.2"])).unwrap();
        assert_eq!(cfg.variants[0].name, "mse+ljb+dropout");
    }

    #[test]
    fn window_flags_keep_budgets() {
        let cfg = resolve_experiment(&parse_train(&["--lookforward", "30"])).unwrap();
        let windows = cfg.train_regime.steps + 1 - cfg.lookback - cfg.lookforward;
        assert_eq!(windows * cfg.train_regime.trajectories, 6000);
        let cfg = resolve_experiment(&parse_train(&["--trajectories", "10"])).unwrap();
        let windows = cfg.extrapolation.steps + 1 - cfg.lookback - cfg.lookforward;
        assert_eq!(windows * 10, 5000);
    }

    #[test]
    fn invalid_values_are_usage_errors() {
        assert!(matches!(resolve_experiment(&parse_train(&["--lr=-1"])), Err(Failure::Usage(_))));
        assert!(Cli::try_parse_from(["whiten", "train", "--model", "transformer"]).is_err());
        assert!(Cli::try_parse_from(["whiten", "train", "--seed", "1", "--seeds", "2"]).is_err());
    }

    #[test]
    fn config_ids_match_eval_grouping() {
        let id = whiten_core::experiment::run_id(&ModelConfig::new(Architecture::Lstm), &Variant::ljb(1.0), 12);
        let config = id.rsplit_once("-s").unwrap().0;
        assert_eq!(config, whiten_core::experiment::config_id(&ModelConfig::new(Architecture::Lstm), &Variant::ljb(1.0)));
    }
}
