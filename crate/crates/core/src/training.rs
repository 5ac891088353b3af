//! Mini-batch training: Adam, learning-rate halving on plateaus, early
//! stopping and best-checkpoint selection, plus multi-run orchestration.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::datasets::{DatasetManifest, WindowedDataset};
use crate::error::{Error, Result};
use crate::losses::{composite_loss, LossConfig};
use crate::nn::{Checkpoint, Mode, Model, ModelSpec, Parameter};
use crate::numerics::{Matrix, RngState};
use crate::par::Exec;

pub const RUN_FORMAT_VERSION: u32 = 1;

/// Which objective a run minimizes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    #[default]
    #[serde(rename = "mse")]
    Mse,
    #[serde(rename = "mse+ljb")]
    MseLjb,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::MseLjb => "mse+ljb",
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "mse+ljb" | "ljb" => Ok(LossKind::MseLjb),
            other => Err(format!("unknown loss '{other}' (expected mse or mse+ljb)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub batch: usize,
    pub max_epochs: usize,
    /// Non-improving epochs before the learning rate is multiplied by `lr_factor`.
    pub plateau_patience: usize,
    pub lr_factor: f64,
    /// Non-improving epochs before training stops.
    pub early_stop_patience: usize,
    /// Improvements smaller than this do not reset the patience counters.
    pub plateau_threshold: f64,
    pub loss: LossKind,
    pub lambda: f64,
    pub lags: usize,
    pub epsilon: f64,
    /// Weight-decay coefficient added to every parameter gradient.
    pub l2: f64,
    /// Input dropout rate, applied when the model is built.
    pub dropout: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.01,
            batch: 128,
            max_epochs: 200,
            plateau_patience: 10,
            lr_factor: 0.5,
            early_stop_patience: 30,
            plateau_threshold: 1e-6,
            loss: LossKind::Mse,
            lambda: 1.0,
            lags: 5,
            epsilon: 1e-8,
            l2: 0.0,
            dropout: 0.0,
            grad_clip: 5.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// The loss actually minimized: `λ` is forced to zero for `mse` runs.
    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            lambda: match self.loss {
                LossKind::Mse => 0.0,
                LossKind::MseLjb => self.lambda,
            },
            lags: self.lags,
            epsilon: self.epsilon,
            ..LossConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lr0 > 0.0) || !self.lr0.is_finite() {
            return bad(format!("lr0 must be > 0, got {}", self.lr0));
        }
        if self.batch == 0 || self.max_epochs == 0 {
            return bad("batch and max_epochs must be positive".into());
        }
        if self.plateau_patience == 0 || self.early_stop_patience == 0 {
            return bad("patiences must be positive".into());
        }
        if self.early_stop_patience < self.plateau_patience {
            return bad(format!(
                "early_stop_patience ({}) must not be shorter than plateau_patience ({})",
                self.early_stop_patience, self.plateau_patience
            ));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor <= 1.0) {
            return bad(format!("lr_factor must be in (0, 1], got {}", self.lr_factor));
        }
        if !(self.l2 >= 0.0) || !(self.grad_clip >= 0.0) || !(self.plateau_threshold >= 0.0) {
            return bad("l2, grad_clip and plateau_threshold must be >= 0".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        self.loss_config().validate()
    }
}

/// Adam moments for every parameter of one model, in parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new<'a>(params: impl Iterator<Item = &'a Parameter>) -> Self {
        let (m, v): (Vec<_>, Vec<_>) = params
            .map(|p| {
                let z = Matrix::zeros(p.value.rows(), p.value.cols());
                (z.clone(), z)
            })
            .unzip();
        AdamState {
            m,
            v,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update. With `l2 > 0` the term `l2 · w` is added
/// to each gradient before the moments are updated.
pub fn adam_step<'a>(
    params: impl Iterator<Item = &'a mut Parameter>,
    adam: &mut AdamState,
    lr: f64,
    l2: f64,
) {
    adam.step += 1;
    let t = adam.step as i32;
    let c1 = 1.0 - adam.beta1.powi(t);
    let c2 = 1.0 - adam.beta2.powi(t);
    let (b1, b2, eps) = (adam.beta1, adam.beta2, adam.eps);
    for ((p, m), v) in params.zip(adam.m.iter_mut()).zip(adam.v.iter_mut()) {
        let w = p.value.data_mut();
        let g = p.grad.data();
        for i in 0..w.len() {
            let gi = g[i] + l2 * w[i];
            let mi = b1 * m.data()[i] + (1.0 - b1) * gi;
            let vi = b2 * v.data()[i] + (1.0 - b2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            w[i] -= lr * (mi / c1) / ((vi / c2).sqrt() + eps);
        }
    }
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(model: &mut Model, max_norm: f64) -> f64 {
    let norm = model.parameters().map(|p| p.grad.squared_norm()).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for p in model.parameters_mut() {
            p.grad.scale_in_place(s);
        }
    }
    norm
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    #[default]
    Completed,
    Diverged {
        epoch: usize,
        loss: f64,
    },
    Failed {
        message: String,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub id: String,
    pub seed: u64,
    pub status: RunStatus,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Learning rate used during each epoch.
    pub lr: Vec<f64>,
    /// 1-based epoch of the selected parameters (0 if none was selected).
    pub best_epoch: usize,
    pub best_val_loss: Option<f64>,
    pub checkpoint: Option<PathBuf>,
    /// Excluded from persisted manifests so reruns produce identical files.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl RunRecord {
    pub fn epochs_run(&self) -> usize {
        self.train_loss.len()
    }
}

fn batch_plan(n: usize, batch: usize) -> (usize, usize) {
    // Trailing partial batches are dropped, unless there is no full batch.
    if n >= batch {
        (n / batch, batch)
    } else {
        (1, n)
    }
}

fn non_finite(v: f64) -> bool {
    !v.is_finite()
}

/// Loss of `model` on a whole dataset in eval mode.
pub fn dataset_loss(model: &Model, ds: &WindowedDataset, loss: &LossConfig) -> Result<f64> {
    let pred = model.predict(&ds.inputs)?;
    Ok(composite_loss(&pred, &ds.targets, ds.output_dim(), loss)?.0)
}

fn check_widths(model: &Model, ds: &WindowedDataset, which: &str) -> Result<()> {
    let spec = model.spec();
    if ds.inputs.cols() != spec.input_width() || ds.targets.cols() != spec.output_width() {
        return Err(Error::shape(format!(
            "{which} set has widths {}/{} but the model maps {} -> {}",
            ds.inputs.cols(),
            ds.targets.cols(),
            spec.input_width(),
            spec.output_width()
        )));
    }
    Ok(())
}

/// Trains `model` in place and leaves it holding the best-validation
/// parameters. Without validation rows the training loss is used instead.
///
/// On divergence the error names the epoch; use [`fit_record`] to get a
/// record of the partial run instead.
pub fn fit(
    model: &mut Model,
    train: &WindowedDataset,
    val: &WindowedDataset,
    cfg: &TrainConfig,
) -> Result<RunRecord> {
    let mut record = RunRecord {
        seed: cfg.seed,
        ..RunRecord::default()
    };
    fit_into(model, train, val, cfg, &mut record)?;
    Ok(record)
}

/// Like [`fit`] but a divergence is reported in the returned record's status.
pub fn fit_record(
    model: &mut Model,
    train: &WindowedDataset,
    val: &WindowedDataset,
    cfg: &TrainConfig,
) -> Result<RunRecord> {
    let mut record = RunRecord {
        seed: cfg.seed,
        ..RunRecord::default()
    };
    match fit_into(model, train, val, cfg, &mut record) {
        Ok(()) => Ok(record),
        Err(Error::Divergence { epoch, loss }) => {
            record.status = RunStatus::Diverged { epoch, loss };
            Ok(record)
        }
        Err(e) => Err(e),
    }
}

fn fit_into(
    model: &mut Model,
    train: &WindowedDataset,
    val: &WindowedDataset,
    cfg: &TrainConfig,
    record: &mut RunRecord,
) -> Result<()> {
    let start = Instant::now();
    cfg.validate()?;
    check_widths(model, train, "training")?;
    if !val.is_empty() {
        check_widths(model, val, "validation")?;
    }
    if train.is_empty() {
        return Err(Error::domain("training set is empty"));
    }
    let loss_cfg = cfg.loss_config();
    let channels = train.output_dim();
    let mut rng = RngState::new(cfg.seed).fork(1);
    let mut adam = AdamState::new(model.parameters());
    let mut lr = cfg.lr0;
    let mut best = f64::INFINITY;
    let mut best_params = model.snapshot();
    let mut reference = f64::INFINITY;
    let (mut since_improve, mut since_drop) = (0usize, 0usize);
    let (n_batches, batch) = batch_plan(train.len(), cfg.batch);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        model.set_mode(Mode::Train);
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for b in 0..n_batches {
            let idx = &order[b * batch..(b + 1) * batch];
            let x = train.inputs.select_rows(idx);
            let y = train.targets.select_rows(idx);
            let (pred, cache) = model.forward(&x, &mut rng)?;
            let (loss, grad) = composite_loss(&pred, &y, channels, &loss_cfg)?;
            if non_finite(loss) {
                record.lr.push(lr);
                return Err(Error::Divergence { epoch, loss });
            }
            total += loss;
            model.zero_grad();
            model.backward(cache, &grad)?;
            clip_global_norm(model, cfg.grad_clip);
            adam_step(model.parameters_mut(), &mut adam, lr, cfg.l2);
        }
        let train_loss = total / n_batches as f64;
        model.set_mode(Mode::Eval);
        let val_loss = if val.is_empty() {
            dataset_loss(model, train, &loss_cfg)?
        } else {
            dataset_loss(model, val, &loss_cfg)?
        };
        record.train_loss.push(train_loss);
        record.val_loss.push(val_loss);
        record.lr.push(lr);
        if non_finite(val_loss) || model.parameters().any(|p| !p.value.is_finite()) {
            return Err(Error::Divergence {
                epoch,
                loss: val_loss,
            });
        }

        if val_loss < best {
            best = val_loss;
            best_params = model.snapshot();
            record.best_epoch = epoch;
            record.best_val_loss = Some(val_loss);
        }
        if val_loss < reference - cfg.plateau_threshold {
            reference = val_loss;
            since_improve = 0;
            since_drop = 0;
        } else {
            since_improve += 1;
            since_drop += 1;
            if since_improve >= cfg.early_stop_patience {
                break;
            }
            if since_drop >= cfg.plateau_patience {
                lr *= cfg.lr_factor;
                since_drop = 0;
            }
        }
    }
    model.restore(&best_params);
    model.set_mode(Mode::Eval);
    record.wall_time_s = start.elapsed().as_secs_f64();
    Ok(())
}

/// One cell of a run matrix. Datasets are borrowed read-only and may be
/// shared between runs.
#[derive(Clone, Debug)]
pub struct RunSpec<'a> {
    pub id: String,
    pub model: ModelSpec,
    pub config: TrainConfig,
    pub train: &'a WindowedDataset,
    pub val: &'a WindowedDataset,
    /// Copied into the run manifest.
    pub datasets: Vec<DatasetManifest>,
}

/// Everything needed to understand and repeat one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub id: String,
    pub model: ModelSpec,
    pub config: TrainConfig,
    pub datasets: Vec<DatasetManifest>,
    pub record: RunRecord,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const RUN_MANIFEST_FILE: &str = "run.json";

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Builds, trains and (optionally) persists one run. Failures of any kind
/// are captured in the record's status.
pub fn execute_run(spec: &RunSpec<'_>, out_dir: Option<&Path>) -> (RunRecord, Option<Model>) {
    let attempt = || -> Result<(RunRecord, Model)> {
        let mut model = Model::new(spec.model.clone(), &mut RngState::new(spec.config.seed))?;
        let mut record = fit_record(&mut model, spec.train, spec.val, &spec.config)?;
        record.id = spec.id.clone();
        if let Some(dir) = out_dir {
            let run_dir = dir.join(&spec.id);
            std::fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
            if record.status == RunStatus::Completed {
                let mut ck = Checkpoint::from_model(
                    &model,
                    spec.config.seed,
                    record.best_epoch,
                    record.best_val_loss,
                );
                if let Some(stats) = &spec.train.normalization {
                    ck = ck.with_normalization(stats.clone());
                }
                ck.save(&run_dir.join(CHECKPOINT_FILE))?;
                record.checkpoint = Some(PathBuf::from(CHECKPOINT_FILE));
            }
            let manifest = RunManifest {
                format_version: RUN_FORMAT_VERSION,
                id: spec.id.clone(),
                model: spec.model.clone(),
                config: spec.config.clone(),
                datasets: spec.datasets.clone(),
                record: record.clone(),
            };
            manifest.save(&run_dir.join(RUN_MANIFEST_FILE))?;
        }
        Ok((record, model))
    };
    match attempt() {
        Ok((record, model)) => {
            let keep = record.status == RunStatus::Completed;
            (record, keep.then_some(model))
        }
        Err(e) => (
            RunRecord {
                id: spec.id.clone(),
                seed: spec.config.seed,
                status: RunStatus::Failed {
                    message: e.to_string(),
                },
                ..RunRecord::default()
            },
            None,
        ),
    }
}

/// Runs every spec, up to `jobs` at a time (`0` = all cores). Records come
/// back in input order; a failing run is recorded and the rest continue.
pub fn run_matrix(
    specs: &[RunSpec<'_>],
    exec: Exec,
    jobs: usize,
    out_dir: Option<&Path>,
) -> Vec<(RunRecord, Option<Model>)> {
    exec.map_limited(specs, jobs, |spec| execute_run(spec, out_dir))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{window, TargetConvention};
    use crate::nn::{build_spec, Activation, Architecture, LayerSpec};
    use crate::simulators::{ChannelSchema, Trajectory};

    /// Noiseless linear system `x_{t+1} = 0.9 x_t + 0.1 u_t`.
    fn linear_data(steps: usize, seed: u64) -> WindowedDataset {
        let mut rng = RngState::new(seed);
        let mut x = 0.0;
        let mut states = Vec::new();
        let mut actions = Vec::new();
        for _ in 0..steps {
            let u = rng.uniform_range(-1.0, 1.0);
            states.push(x);
            actions.push(u);
            x = 0.9 * x + 0.1 * u;
        }
        let tr = Trajectory::new(
            Matrix::from_vec(steps, 1, states).unwrap(),
            Matrix::from_vec(steps, 1, actions).unwrap(),
            1.0,
            ChannelSchema {
                states: vec!["x".into()],
                actions: vec!["u".into()],
            },
        )
        .unwrap();
        window(&tr, 2, 1).unwrap()
    }

    fn linear_model(seed: u64) -> Model {
        let spec = ModelSpec {
            lookback: 2,
            input_dim: 2,
            layers: vec![],
            head: LayerSpec::dense(4, 1, Activation::Linear),
        };
        Model::new(spec, &mut RngState::new(seed)).unwrap()
    }

    #[test]
    fn adam_first_step_by_hand() {
        let mut p = Parameter::with_value("w".into(), Matrix::filled(1, 1, 0.5));
        p.grad = Matrix::filled(1, 1, 1.0);
        let mut adam = AdamState::new(std::iter::once(&p));
        adam_step(std::iter::once(&mut p), &mut adam, 0.001, 0.0);
        assert!((p.value.get(0, 0) - (0.5 - 0.001)).abs() < 1e-9);
    }

    #[test]
    fn adam_with_zero_gradient_is_noop() {
        let mut p = Parameter::with_value("w".into(), Matrix::filled(2, 2, 0.3));
        let mut adam = AdamState::new(std::iter::once(&p));
        for _ in 0..5 {
            adam_step(std::iter::once(&mut p), &mut adam, 0.01, 0.0);
        }
        assert_eq!(p.value, Matrix::filled(2, 2, 0.3));
    }

    #[test]
    fn weight_decay_alone_shrinks_norms() {
        let mut model = Model::new(build_spec(Architecture::Dense, 2, 2, 1, 1, 4, 0.0), &mut RngState::new(5))
            .unwrap();
        let mut adam = AdamState::new(model.parameters());
        // Biases start at zero; give every entry a nonzero value.
        for p in model.parameters_mut() {
            for (i, v) in p.value.data_mut().iter_mut().enumerate() {
                if *v == 0.0 {
                    *v = 0.1 + 0.01 * i as f64;
                }
            }
        }
        let norm = |m: &Model| m.parameters().map(|p| p.value.squared_norm()).sum::<f64>();
        let mut last = norm(&model);
        for _ in 0..50 {
            model.zero_grad();
            adam_step(model.parameters_mut(), &mut adam, 1e-3, 1e-3);
            let now = norm(&model);
            assert!(now < last);
            last = now;
        }
    }

    #[test]
    fn linear_model_fits_linear_data() {
        let train = linear_data(600, 1);
        let val = linear_data(200, 2);
        let mut model = linear_model(3);
        let cfg = TrainConfig {
            batch: 32,
            seed: 3,
            ..TrainConfig::default()
        };
        let rec = fit(&mut model, &train, &val, &cfg).unwrap();
        assert!(rec.epochs_run() <= 200);
        let (mse, _) = crate::losses::mse(&model.predict(&val.inputs).unwrap(), &val.targets).unwrap();
        assert!(mse < 1e-6, "val mse {mse}");
        let min = rec.val_loss.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(rec.best_val_loss, Some(min));
    }

    #[test]
    fn lr_schedule_halves_and_never_rises() {
        let train = linear_data(300, 4);
        let val = linear_data(100, 5);
        let mut model = linear_model(6);
        let cfg = TrainConfig {
            batch: 64,
            max_epochs: 120,
            plateau_patience: 3,
            early_stop_patience: 200,
            plateau_threshold: 1e-3,
            seed: 6,
            ..TrainConfig::default()
        };
        let rec = fit(&mut model, &train, &val, &cfg).unwrap();
        assert_eq!(rec.lr[0], cfg.lr0);
        let mut drops = 0;
        for w in rec.lr.windows(2) {
            assert!(w[1] == w[0] || w[1] == 0.5 * w[0]);
            drops += (w[1] < w[0]) as usize;
        }
        assert!(drops > 0);
    }

    #[test]
    fn lambda_zero_equals_mse_run() {
        let train = linear_data(300, 7);
        let val = linear_data(100, 8);
        let base = TrainConfig {
            max_epochs: 15,
            batch: 32,
            seed: 11,
            ..TrainConfig::default()
        };
        let ljb0 = TrainConfig {
            loss: LossKind::MseLjb,
            lambda: 0.0,
            lags: 0,
            ..base.clone()
        };
        // lags is irrelevant when lambda is zero, but must still validate.
        assert!(ljb0.validate().is_err());
        let ljb0 = TrainConfig { lags: 5, ..ljb0 };
        let mut a = linear_model(1);
        let mut b = linear_model(1);
        let ra = fit(&mut a, &train, &val, &base).unwrap();
        let rb = fit(&mut b, &train, &val, &ljb0).unwrap();
        assert_eq!(ra.train_loss, rb.train_loss);
        assert_eq!(ra.val_loss, rb.val_loss);
        for (p, q) in a.parameters().zip(b.parameters()) {
            assert_eq!(p.value, q.value);
        }
    }

    #[test]
    fn divergence_names_the_epoch() {
        let mut train = linear_data(100, 9);
        train.targets.data_mut()[3] = 1e200;
        let mut model = linear_model(1);
        let cfg = TrainConfig {
            batch: 100,
            max_epochs: 5,
            ..TrainConfig::default()
        };
        match fit(&mut model, &train, &train.select(&[]), &cfg).unwrap_err() {
            Error::Divergence { epoch, .. } => assert_eq!(epoch, 1),
            other => panic!("unexpected {other:?}"),
        }
        let mut model = linear_model(1);
        let rec = fit_record(&mut model, &train, &train.select(&[]), &cfg).unwrap();
        assert!(matches!(rec.status, RunStatus::Diverged { epoch: 1, .. }));
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let train = linear_data(100, 1);
        let mut model = Model::new(build_spec(Architecture::Dense, 3, 2, 1, 1, 4, 0.0), &mut RngState::new(1))
            .unwrap();
        let err = fit(&mut model, &train, &train, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn early_stop_waits_for_plateau_patience() {
        let bad = TrainConfig {
            plateau_patience: 10,
            early_stop_patience: 5,
            ..TrainConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn matrix_counts_records_and_is_reproducible() {
        let train = linear_data(200, 1);
        let val = linear_data(80, 2);
        let mut specs = Vec::new();
        for arch in [Architecture::Dense, Architecture::Rnn] {
            for loss in [LossKind::Mse, LossKind::MseLjb] {
                for seed in 1..=3 {
                    specs.push(RunSpec {
                        id: format!("{arch}-{loss}-{seed}"),
                        model: build_spec(arch, 2, 2, 1, 1, 3, 0.0),
                        config: TrainConfig {
                            loss,
                            max_epochs: 3,
                            batch: 16,
                            seed,
                            ..TrainConfig::default()
                        },
                        train: &train,
                        val: &val,
                        datasets: vec![],
                    });
                }
            }
        }
        // A lookforward of 1 cannot carry 5 lags, so every ljb run fails;
        // the matrix must still complete the others.
        let out = run_matrix(&specs, Exec::Parallel, 0, None);
        assert_eq!(out.len(), 12);
        for (rec, model) in &out {
            let ljb = rec.id.contains("ljb");
            assert_eq!(matches!(rec.status, RunStatus::Failed { .. }), ljb, "{}", rec.id);
            assert_eq!(model.is_some(), !ljb);
        }

        for s in &mut specs {
            s.config.loss = LossKind::Mse;
        }
        let dir = tempfile::tempdir().unwrap();
        let a = run_matrix(&specs, Exec::Parallel, 2, Some(&dir.path().join("a")));
        let b = run_matrix(&specs, Exec::Sequential, 1, Some(&dir.path().join("b")));
        assert!(a.iter().all(|(r, _)| r.status == RunStatus::Completed));
        for s in &specs {
            for file in [CHECKPOINT_FILE, RUN_MANIFEST_FILE] {
                let x = std::fs::read(dir.path().join("a").join(&s.id).join(file)).unwrap();
                let y = std::fs::read(dir.path().join("b").join(&s.id).join(file)).unwrap();
                assert_eq!(x, y, "{}/{file}", s.id);
            }
        }
        let timeless = |runs: &[(RunRecord, Option<Model>)]| {
            runs.iter()
                .map(|(r, _)| RunRecord { wall_time_s: 0.0, ..r.clone() })
                .collect::<Vec<_>>()
        };
        assert_eq!(timeless(&a), timeless(&b));
        assert_eq!(train.target_convention, TargetConvention::FutureStates);
    }
}
