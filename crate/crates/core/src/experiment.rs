//! End-to-end experiments: build the regimes of one system, train every
//! (model, variant, seed) combination, evaluate on the interpolation and
//! extrapolation test sets, aggregate across seeds and write reports.
//!
//! Output layout under the experiment directory:
//!
//! ```text
//! experiment.json                      configuration
//! datasets/<name>.json                 dataset manifests
//! runs/<run-id>/checkpoint.json        best-validation parameters
//! runs/<run-id>/run.json               run manifest and loss traces
//! runs/<run-id>/eval-<set>.{json,csv,md}
//! aggregate/<config-id>-<set>.{json,csv,md}
//! table-<set>.md                       one row per model × variant
//! timing.json                          wall-clock times (not reproducible)
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datasets::{build_from_csv, build_regime, normalize_fit_apply, split, DatasetManifest, RegimeSpec, WindowedDataset};
use crate::error::{Error, Result};
use crate::evaluation::{
    aggregate, emit_aggregate, emit_report, emit_table, evaluate, AggregateReport, EvalOptions, EvalReport,
    Format, ReportIds, TableRow,
};
use crate::nn::{build_spec, Architecture, Model};
use crate::numerics::RngState;
use crate::par::Exec;
use crate::simulators::{System, SystemParams};
use crate::training::{run_matrix, LossKind, RunRecord, RunSpec, RunStatus, TrainConfig};

pub const EXPERIMENT_FORMAT_VERSION: u32 = 1;
pub const INTERPOLATION: &str = "interpolation";
pub const EXTRAPOLATION: &str = "extrapolation";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Architecture,
    pub depth: usize,
    /// Units per hidden layer; 0 picks the architecture's default.
    #[serde(default)]
    pub width: usize,
}

impl ModelConfig {
    pub fn new(arch: Architecture) -> Self {
        ModelConfig {
            arch,
            depth: 2,
            width: 0,
        }
    }

    pub fn width(&self) -> usize {
        if self.width == 0 {
            self.arch.default_width()
        } else {
            self.width
        }
    }
}

/// A training objective plus regularizers, shared by every seed of a
/// configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub loss: LossKind,
    pub lambda: f64,
    #[serde(default)]
    pub l2: f64,
    #[serde(default)]
    pub dropout: f64,
}

impl Variant {
    pub fn mse() -> Self {
        Variant {
            name: "mse".into(),
            loss: LossKind::Mse,
            lambda: 0.0,
            l2: 0.0,
            dropout: 0.0,
        }
    }

    pub fn ljb(lambda: f64) -> Self {
        Variant {
            name: "mse+ljb".into(),
            loss: LossKind::MseLjb,
            lambda,
            l2: 0.0,
            dropout: 0.0,
        }
    }

    /// Name derived from the settings, e.g. `mse+ljb+dropout`.
    pub fn named(loss: LossKind, lambda: f64, l2: f64, dropout: f64) -> Self {
        let mut name = loss.name().to_string();
        if l2 > 0.0 {
            name.push_str("+l2");
        }
        if dropout > 0.0 {
            name.push_str("+dropout");
        }
        Variant {
            name,
            loss,
            lambda,
            l2,
            dropout,
        }
    }
}

/// Trajectory CSV files that replace the simulated regimes. An empty list
/// keeps the corresponding regime.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DataFiles {
    #[serde(default)]
    pub train: Vec<PathBuf>,
    #[serde(default)]
    pub interpolation: Vec<PathBuf>,
    #[serde(default)]
    pub extrapolation: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub system: System,
    pub params: SystemParams,
    pub lookback: usize,
    pub lookforward: usize,
    /// Pool split into training and validation sets.
    pub train_regime: RegimeSpec,
    pub val_fraction: f64,
    pub interpolation: RegimeSpec,
    pub extrapolation: RegimeSpec,
    pub models: Vec<ModelConfig>,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    /// Template; loss, λ, l2, dropout and seed come from variant and seed.
    pub train: TrainConfig,
    pub eval: EvalOptions,
    #[serde(default)]
    pub data: DataFiles,
}

/// Default actuation hold per system, in steps.
pub fn default_hold(system: System) -> usize {
    match system {
        System::Pendulum => 10,
        System::DoublePendulum => 1,
        System::BacklashMotor => 20,
    }
}

impl ExperimentConfig {
    /// Desk-scale defaults: 5000 training, 1000 validation and 5000 samples
    /// in each test set, windows of 10 steps, 20 trajectories per set.
    ///
    /// * pendulum: actuation in ±0.5 for training, ±2 for extrapolation;
    /// * backlash motor: the extrapolation set holds each command 10× shorter;
    /// * double pendulum: unactuated, so both test sets use fresh initial states.
    pub fn desk(system: System) -> Self {
        let (lb, lf) = (10, 10);
        let trajectories = 20;
        let noise_sigma = 0.01;
        let hold = default_hold(system);
        let base = RegimeSpec {
            amplitude: 0.5,
            hold,
            trajectories,
            steps: RegimeSpec::steps_for(6000, trajectories, lb, lf),
            noise_sigma,
            seed: 1,
        };
        let test = RegimeSpec {
            steps: RegimeSpec::steps_for(5000, trajectories, lb, lf),
            ..base
        };
        let extrapolation = match system {
            System::Pendulum => RegimeSpec {
                amplitude: 2.0,
                seed: 3,
                ..test
            },
            System::BacklashMotor => RegimeSpec {
                hold: (hold / 10).max(1),
                seed: 3,
                ..test
            },
            System::DoublePendulum => RegimeSpec { seed: 3, ..test },
        };
        ExperimentConfig {
            system,
            params: system.default_params(),
            lookback: lb,
            lookforward: lf,
            train_regime: base,
            val_fraction: 1.0 / 6.0,
            interpolation: RegimeSpec { seed: 2, ..test },
            extrapolation,
            models: vec![ModelConfig::new(Architecture::Dense)],
            variants: vec![Variant::mse(), Variant::ljb(1.0)],
            seeds: vec![1],
            train: TrainConfig::default(),
            eval: EvalOptions::default(),
            data: DataFiles::default(),
        }
    }

    /// Changes the window lengths, keeping the number of samples per trajectory.
    pub fn set_window(&mut self, lookback: usize, lookforward: usize) {
        for r in [&mut self.train_regime, &mut self.interpolation, &mut self.extrapolation] {
            let windows = (r.steps + 1).saturating_sub(self.lookback + self.lookforward).max(1);
            r.steps = windows + lookback + lookforward - 1;
        }
        self.lookback = lookback;
        self.lookforward = lookforward;
    }

    /// Scales every sample budget by `factor` (at least one window per trajectory).
    pub fn scaled(mut self, factor: f64) -> Self {
        let (lb, lf) = (self.lookback, self.lookforward);
        for r in [&mut self.train_regime, &mut self.interpolation, &mut self.extrapolation] {
            let windows = r.steps + 1 - lb - lf;
            let scaled = ((windows as f64 * factor).round() as usize).max(1);
            r.steps = scaled + lb + lf - 1;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.params.system() != self.system {
            return Err(Error::Config(format!(
                "parameters are for {}, experiment is for {}",
                self.params.system(),
                self.system
            )));
        }
        if self.models.is_empty() || self.variants.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("need at least one model, variant and seed".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!(
                "val_fraction must be in [0, 1), got {}",
                self.val_fraction
            )));
        }
        for r in [&self.train_regime, &self.interpolation, &self.extrapolation] {
            r.validate()?;
        }
        for v in &self.variants {
            self.run_config(v, 0).validate()?;
        }
        let mut names: Vec<&str> = self.variants.iter().map(|v| v.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.variants.len() {
            return Err(Error::Config("variant names must be unique".into()));
        }
        Ok(())
    }

    pub fn run_config(&self, v: &Variant, seed: u64) -> TrainConfig {
        TrainConfig {
            loss: v.loss,
            lambda: v.lambda,
            l2: v.l2,
            dropout: v.dropout,
            seed,
            ..self.train.clone()
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn config_id(model: &ModelConfig, variant: &Variant) -> String {
    format!("{}-{}", model.arch, variant.name)
}

pub fn run_id(model: &ModelConfig, variant: &Variant, seed: u64) -> String {
    format!("{}-s{seed}", config_id(model, variant))
}

/// The normalized datasets of an experiment.
#[derive(Clone, Debug)]
pub struct ExperimentData {
    pub train: WindowedDataset,
    pub val: WindowedDataset,
    pub interpolation: WindowedDataset,
    pub extrapolation: WindowedDataset,
    pub manifests: Vec<DatasetManifest>,
}

impl ExperimentData {
    pub fn build(cfg: &ExperimentConfig, exec: Exec) -> Result<Self> {
        let (lb, lf) = (cfg.lookback, cfg.lookforward);
        let schema = cfg.system.schema();
        let source = |files: &[PathBuf], regime: &RegimeSpec| -> Result<WindowedDataset> {
            if files.is_empty() {
                build_regime(&cfg.params, regime, lb, lf, exec)
            } else {
                build_from_csv(files, Some(&schema), lb, lf)
            }
        };
        let describe = |name: &str, ds: &WindowedDataset, files: &[PathBuf], regime: &RegimeSpec| {
            let m = DatasetManifest::describe(name, ds);
            if files.is_empty() {
                m.with_regime(&cfg.params, regime)
            } else {
                m.with_sources(files)
            }
        };
        let files = &cfg.data;
        let pool = source(&files.train, &cfg.train_regime)?;
        let mut split_rng = RngState::new(cfg.train_regime.seed).fork(u64::MAX);
        let (train, val) = split(&pool, (1.0 - cfg.val_fraction, cfg.val_fraction), &mut split_rng)?;
        let interp = source(&files.interpolation, &cfg.interpolation)?;
        let extrap = source(&files.extrapolation, &cfg.extrapolation)?;
        let (train, mut others, _) = normalize_fit_apply(&train, &[&val, &interp, &extrap])?;
        let extrapolation = others.pop().expect("three");
        let interpolation = others.pop().expect("two");
        let val = others.pop().expect("one");
        let manifests = vec![
            describe("train", &train, &files.train, &cfg.train_regime),
            describe("validation", &val, &files.train, &cfg.train_regime),
            describe(INTERPOLATION, &interpolation, &files.interpolation, &cfg.interpolation),
            describe(EXTRAPOLATION, &extrapolation, &files.extrapolation, &cfg.extrapolation),
        ];
        Ok(ExperimentData {
            train,
            val,
            interpolation,
            extrapolation,
            manifests,
        })
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub model: ModelConfig,
    pub variant: Variant,
    pub seed: u64,
    pub record: RunRecord,
    pub interpolation: Option<EvalReport>,
    pub extrapolation: Option<EvalReport>,
}

#[derive(Clone, Debug)]
pub struct ConfigSummary {
    pub model: ModelConfig,
    pub variant: Variant,
    pub interpolation: Option<AggregateReport>,
    pub extrapolation: Option<AggregateReport>,
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub runs: Vec<RunOutcome>,
    pub summaries: Vec<ConfigSummary>,
}

impl ExperimentResult {
    pub fn summary(&self, arch: Architecture, variant: &str) -> Option<&ConfigSummary> {
        self.summaries
            .iter()
            .find(|s| s.model.arch == arch && s.variant.name == variant)
    }

    pub fn failures(&self) -> impl Iterator<Item = &RunOutcome> {
        self.runs.iter().filter(|r| r.record.status != RunStatus::Completed)
    }

    /// Markdown table for one test set, one row per model × variant.
    pub fn table(&self, set: &str) -> String {
        crate::evaluation::markdown_table(&self.table_rows(set))
    }

    fn table_rows(&self, set: &str) -> Vec<TableRow> {
        self.summaries
            .iter()
            .filter_map(|s| {
                let agg = if set == INTERPOLATION {
                    s.interpolation.as_ref()
                } else {
                    s.extrapolation.as_ref()
                }?;
                Some(TableRow::from_aggregate(&config_id(&s.model, &s.variant), agg))
            })
            .collect()
    }
}

fn emit_all_formats(dir: &Path, stem: &str, report: &EvalReport) -> Result<()> {
    for f in Format::ALL {
        emit_report(report, f, &dir.join(format!("{stem}.{}", f.extension())))?;
    }
    Ok(())
}

/// Runs the whole experiment. With `out_dir` every artifact is written;
/// without it nothing touches the filesystem.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    exec: Exec,
    jobs: usize,
    out_dir: Option<&Path>,
) -> Result<ExperimentResult> {
    cfg.validate()?;
    let data = ExperimentData::build(cfg, exec)?;
    let runs_dir: Option<PathBuf> = out_dir.map(|d| d.join("runs"));
    if let Some(dir) = out_dir {
        let ds_dir = dir.join("datasets");
        std::fs::create_dir_all(&ds_dir).map_err(|e| Error::io(&ds_dir, e))?;
        cfg.save(&dir.join("experiment.json"))?;
        for m in &data.manifests {
            m.save(&ds_dir.join(format!("{}.json", m.name)))?;
        }
    }

    let (input_dim, output_dim) = (data.train.input_dim(), data.train.output_dim());
    let mut cells = Vec::new();
    for model in &cfg.models {
        for variant in &cfg.variants {
            for &seed in &cfg.seeds {
                cells.push((*model, variant.clone(), seed));
            }
        }
    }
    let specs: Vec<RunSpec<'_>> = cells
        .iter()
        .map(|(model, variant, seed)| RunSpec {
            id: run_id(model, variant, *seed),
            model: build_spec(
                model.arch,
                cfg.lookback,
                input_dim,
                cfg.lookforward * output_dim,
                model.depth,
                model.width(),
                variant.dropout,
            ),
            config: cfg.run_config(variant, *seed),
            train: &data.train,
            val: &data.val,
            datasets: data.manifests.clone(),
        })
        .collect();
    let trained = run_matrix(&specs, exec, jobs, runs_dir.as_deref());

    let evaluate_run = |i: usize| -> Result<RunOutcome> {
        let (model_cfg, variant, seed) = &cells[i];
        let (record, model) = &trained[i];
        let config = config_id(model_cfg, variant);
        let mut reports = [None, None];
        if let Some(model) = model {
            for (slot, (name, ds)) in reports
                .iter_mut()
                .zip([(INTERPOLATION, &data.interpolation), (EXTRAPOLATION, &data.extrapolation)])
            {
                let ids = ReportIds {
                    run_id: record.id.clone(),
                    dataset: name.to_string(),
                    config_id: config.clone(),
                };
                // Runs are already spread across workers; evaluate each serially.
                let report = evaluate(model, ds, &cfg.eval, &ids, Exec::Sequential)?;
                if let Some(dir) = &runs_dir {
                    emit_all_formats(&dir.join(&record.id), &format!("eval-{name}"), &report)?;
                }
                *slot = Some(report);
            }
        }
        let [interpolation, extrapolation] = reports;
        Ok(RunOutcome {
            model: *model_cfg,
            variant: variant.clone(),
            seed: *seed,
            record: record.clone(),
            interpolation,
            extrapolation,
        })
    };
    let runs = exec
        .map_indexed(cells.len(), evaluate_run)
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let mut summaries = Vec::new();
    for model in &cfg.models {
        for variant in &cfg.variants {
            let mine: Vec<&RunOutcome> = runs
                .iter()
                .filter(|r| r.model == *model && r.variant == *variant)
                .collect();
            let agg = |pick: fn(&RunOutcome) -> Option<&EvalReport>| -> Result<Option<AggregateReport>> {
                let reports: Vec<EvalReport> = mine.iter().filter_map(|r| pick(r).cloned()).collect();
                if reports.is_empty() {
                    Ok(None)
                } else {
                    aggregate(&reports).map(Some)
                }
            };
            summaries.push(ConfigSummary {
                model: *model,
                variant: variant.clone(),
                interpolation: agg(|r| r.interpolation.as_ref())?,
                extrapolation: agg(|r| r.extrapolation.as_ref())?,
            });
        }
    }
    let result = ExperimentResult { runs, summaries };

    if let Some(dir) = out_dir {
        let agg_dir = dir.join("aggregate");
        for s in &result.summaries {
            for (name, agg) in [(INTERPOLATION, &s.interpolation), (EXTRAPOLATION, &s.extrapolation)] {
                if let Some(agg) = agg {
                    for f in Format::ALL {
                        let path = agg_dir.join(format!(
                            "{}-{name}.{}",
                            config_id(&s.model, &s.variant),
                            f.extension()
                        ));
                        emit_aggregate(agg, f, &path)?;
                    }
                }
            }
        }
        for name in [INTERPOLATION, EXTRAPOLATION] {
            emit_table(&result.table_rows(name), &dir.join(format!("table-{name}.md")))?;
        }
        let timing: Vec<(String, f64)> = result
            .runs
            .iter()
            .map(|r| (r.record.id.clone(), r.record.wall_time_s))
            .collect();
        let path = dir.join("timing.json");
        std::fs::write(&path, serde_json::to_string_pretty(&timing)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(result)
}

/// Loads a trained run and re-creates the test sets recorded in its
/// manifest, normalized with the checkpoint's statistics.
pub fn load_run(run_dir: &Path) -> Result<(crate::training::RunManifest, Model, Option<crate::datasets::NormalizationStats>)> {
    let manifest = crate::training::RunManifest::load(&run_dir.join(crate::training::RUN_MANIFEST_FILE))?;
    let ck_path = run_dir.join(crate::training::CHECKPOINT_FILE);
    if !ck_path.exists() {
        return Err(Error::io(
            &ck_path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "checkpoint not found"),
        ));
    }
    let ck = crate::nn::Checkpoint::load(&ck_path)?;
    let model = ck.to_model()?;
    Ok((manifest, model, ck.normalization))
}
