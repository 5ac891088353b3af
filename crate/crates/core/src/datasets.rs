//! Windowed supervised samples built from trajectories.
//!
//! Sample `i` of a trajectory takes steps `[i, i+lb)` of `states ++ actions`
//! as input and steps `[i+lb, i+lb+lf)` of the states as target, both
//! flattened step-major. Targets are future states (not future residuals)
//! and are never normalized, so errors stay in physical units.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngState};
use crate::par::Exec;
use crate::simulators::{generate_actuation, simulate_from, System, SystemParams, Trajectory};

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// What the targets of a dataset are. Recorded in every manifest.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetConvention {
    #[default]
    FutureStates,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub channels: Vec<String>,
    pub mean: Vec<f64>,
    /// Floored at [`STD_FLOOR`].
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-8;

impl NormalizationStats {
    /// Per-channel statistics over every timestep of every input window.
    pub fn fit(ds: &WindowedDataset) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::domain("cannot fit normalization on an empty dataset"));
        }
        let d = ds.input_dim();
        let mut sum = vec![0.0; d];
        let mut count = 0usize;
        for row in ds.inputs.iter_rows() {
            for step in row.chunks(d) {
                for (s, v) in sum.iter_mut().zip(step) {
                    *s += v;
                }
                count += 1;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0; d];
        for row in ds.inputs.iter_rows() {
            for step in row.chunks(d) {
                for ((s, v), m) in sq.iter_mut().zip(step).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
        }
        let std = sq
            .iter()
            .map(|s| (s / count as f64).sqrt().max(STD_FLOOR))
            .collect();
        Ok(NormalizationStats {
            channels: ds.input_names(),
            mean,
            std,
        })
    }

    /// Normalizes a `[batch, steps · channels]` input matrix.
    pub fn apply_inputs(&self, inputs: &Matrix) -> Result<Matrix> {
        let d = self.mean.len();
        if d == 0 || inputs.cols() % d != 0 {
            return Err(Error::shape(format!(
                "input width {} is not a multiple of {d} normalized channels",
                inputs.cols()
            )));
        }
        let mut out = inputs.clone();
        for row in out.data_mut().chunks_mut(d) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }

    pub fn apply(&self, ds: &WindowedDataset) -> Result<WindowedDataset> {
        if ds.input_dim() != self.mean.len() {
            return Err(Error::shape(format!(
                "dataset has {} input channels, statistics have {}",
                ds.input_dim(),
                self.mean.len()
            )));
        }
        Ok(WindowedDataset {
            inputs: self.apply_inputs(&ds.inputs)?,
            normalization: Some(self.clone()),
            ..ds.clone()
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowedDataset {
    /// `[N, lookback · (states + actions)]`
    pub inputs: Matrix,
    /// `[N, lookforward · states]`
    pub targets: Matrix,
    pub lookback: usize,
    pub lookforward: usize,
    pub state_names: Vec<String>,
    pub action_names: Vec<String>,
    pub target_convention: TargetConvention,
    /// Set once inputs have been normalized.
    pub normalization: Option<NormalizationStats>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.state_names.len() + self.action_names.len()
    }

    pub fn output_dim(&self) -> usize {
        self.state_names.len()
    }

    pub fn input_names(&self) -> Vec<String> {
        self.state_names.iter().chain(&self.action_names).cloned().collect()
    }

    pub fn select(&self, indices: &[usize]) -> WindowedDataset {
        WindowedDataset {
            inputs: self.inputs.select_rows(indices),
            targets: self.targets.select_rows(indices),
            ..self.clone()
        }
    }

    /// Stacks datasets with identical layouts.
    pub fn concat(parts: &[WindowedDataset]) -> Result<WindowedDataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::domain("nothing to concatenate"))?;
        for p in parts {
            if p.lookback != first.lookback
                || p.lookforward != first.lookforward
                || p.state_names != first.state_names
                || p.action_names != first.action_names
                || p.normalization != first.normalization
            {
                return Err(Error::shape("datasets with different layouts cannot be stacked"));
            }
        }
        let inputs: Vec<&Matrix> = parts.iter().map(|p| &p.inputs).collect();
        let targets: Vec<&Matrix> = parts.iter().map(|p| &p.targets).collect();
        Ok(WindowedDataset {
            inputs: Matrix::vstack(&inputs)?,
            targets: Matrix::vstack(&targets)?,
            ..first.clone()
        })
    }
}

/// Slides a `(lb, lf)` window over one trajectory: `T − lb − lf + 1` samples.
pub fn window(traj: &Trajectory, lb: usize, lf: usize) -> Result<WindowedDataset> {
    if lb == 0 || lf == 0 {
        return Err(Error::domain("lookback and lookforward must be positive"));
    }
    let t = traj.len();
    if t < lb + lf {
        return Err(Error::domain(format!(
            "trajectory of {t} steps is shorter than lookback {lb} + lookforward {lf}"
        )));
    }
    let n = t - lb - lf + 1;
    let (ds, du) = (traj.states.cols(), traj.actions.cols());
    let d_in = ds + du;
    let mut inputs = Matrix::zeros(n, lb * d_in);
    let mut targets = Matrix::zeros(n, lf * ds);
    for i in 0..n {
        let row = inputs.row_mut(i);
        for j in 0..lb {
            let step = &mut row[j * d_in..(j + 1) * d_in];
            step[..ds].copy_from_slice(traj.states.row(i + j));
            step[ds..].copy_from_slice(traj.actions.row(i + j));
        }
        let row = targets.row_mut(i);
        for j in 0..lf {
            row[j * ds..(j + 1) * ds].copy_from_slice(traj.states.row(i + lb + j));
        }
    }
    Ok(WindowedDataset {
        inputs,
        targets,
        lookback: lb,
        lookforward: lf,
        state_names: traj.state_names.clone(),
        action_names: traj.action_names.clone(),
        target_convention: TargetConvention::FutureStates,
        normalization: None,
    })
}

/// How to generate one data regime.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeSpec {
    /// Actuation range `[−amplitude, amplitude]`.
    pub amplitude: f64,
    /// Steps each actuation value is held.
    pub hold: usize,
    pub trajectories: usize,
    pub steps: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl RegimeSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude > 0.0) {
            return Err(Error::Config(format!("amplitude must be > 0, got {}", self.amplitude)));
        }
        if self.hold == 0 || self.trajectories == 0 || self.steps == 0 {
            return Err(Error::Config(
                "hold, trajectory count and steps must be positive".into(),
            ));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config(format!(
                "noise sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }

    /// Steps per trajectory needed for `samples` windows in total.
    pub fn steps_for(samples: usize, trajectories: usize, lb: usize, lf: usize) -> usize {
        samples.div_ceil(trajectories.max(1)) + lb + lf - 1
    }
}

/// Starting state of trajectory `i` of a regime, drawn from `rng`.
///
/// * pendulum: hanging, `θ = π + U(−0.3, 0.3)`, at rest;
/// * double pendulum: `θ1 ~ U(π/4, π/2)`, `θ2 = π/2`, at rest;
/// * backlash motor: at rest.
pub fn regime_initial_state(system: System, rng: &mut RngState) -> Vec<f64> {
    match system {
        System::Pendulum => vec![PI + rng.uniform_range(-0.3, 0.3), 0.0],
        System::DoublePendulum => vec![rng.uniform_range(FRAC_PI_4, FRAC_PI_2), 0.0, FRAC_PI_2, 0.0],
        System::BacklashMotor => vec![0.0; 3],
    }
}

/// Simulates the trajectories of a regime. Trajectory `i` uses the random
/// stream `fork(i)` of the regime seed, so the output does not depend on
/// how work is scheduled.
pub fn regime_trajectories(params: &SystemParams, spec: &RegimeSpec, exec: Exec) -> Result<Vec<Trajectory>> {
    spec.validate()?;
    let system = params.system();
    let base = RngState::new(spec.seed);
    exec.map_indexed(spec.trajectories, |i| {
        let mut rng = base.fork(i as u64);
        let initial = regime_initial_state(system, &mut rng);
        let actions = if system.action_names().is_empty() {
            Matrix::zeros(spec.steps, 0)
        } else {
            generate_actuation(&mut rng, spec.steps, spec.amplitude, spec.hold)?
        };
        simulate_from(params, &initial, &actions, spec.noise_sigma, &mut rng)
    })
    .into_iter()
    .collect()
}

/// Generates, windows and stacks every trajectory of a regime.
pub fn build_regime(
    params: &SystemParams,
    spec: &RegimeSpec,
    lb: usize,
    lf: usize,
    exec: Exec,
) -> Result<WindowedDataset> {
    let trajectories = regime_trajectories(params, spec, exec)?;
    let parts = trajectories
        .iter()
        .map(|t| window(t, lb, lf))
        .collect::<Result<Vec<_>>>()?;
    WindowedDataset::concat(&parts)
}

/// Ingests, windows and stacks trajectory CSV files.
pub fn build_from_csv(
    paths: &[std::path::PathBuf],
    schema: Option<&crate::simulators::ChannelSchema>,
    lb: usize,
    lf: usize,
) -> Result<WindowedDataset> {
    let parts = paths
        .iter()
        .map(|p| window(&crate::simulators::csv_ingest(p, schema)?, lb, lf))
        .collect::<Result<Vec<_>>>()?;
    WindowedDataset::concat(&parts)
}

/// Shuffles rows and splits them into `(train, val)` by `fractions`.
pub fn split(
    ds: &WindowedDataset,
    fractions: (f64, f64),
    rng: &mut RngState,
) -> Result<(WindowedDataset, WindowedDataset)> {
    let (a, b) = fractions;
    if !(a >= 0.0 && b >= 0.0) || ((a + b) - 1.0).abs() > 1e-9 {
        return Err(Error::domain(format!(
            "split fractions must be non-negative and sum to 1, got ({a}, {b})"
        )));
    }
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    rng.shuffle(&mut idx);
    let n_train = ((ds.len() as f64) * a).round() as usize;
    let (train, val) = idx.split_at(n_train.min(ds.len()));
    Ok((ds.select(train), ds.select(val)))
}

/// Fits statistics on `train` inputs and applies them to `train` and every
/// dataset in `others`.
pub fn normalize_fit_apply(
    train: &WindowedDataset,
    others: &[&WindowedDataset],
) -> Result<(WindowedDataset, Vec<WindowedDataset>, NormalizationStats)> {
    let stats = NormalizationStats::fit(train)?;
    let train = stats.apply(train)?;
    let others = others
        .iter()
        .map(|ds| stats.apply(ds))
        .collect::<Result<Vec<_>>>()?;
    Ok((train, others, stats))
}

/// Provenance of a dataset, written next to run outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub name: String,
    pub system: Option<System>,
    pub params: Option<SystemParams>,
    pub regime: Option<RegimeSpec>,
    /// CSV files the samples came from, for ingested data.
    #[serde(default)]
    pub sources: Vec<String>,
    pub lookback: usize,
    pub lookforward: usize,
    pub samples: usize,
    pub state_names: Vec<String>,
    pub action_names: Vec<String>,
    pub target_convention: TargetConvention,
    pub normalization: Option<NormalizationStats>,
}

impl DatasetManifest {
    pub fn describe(name: &str, ds: &WindowedDataset) -> Self {
        DatasetManifest {
            format_version: DATASET_FORMAT_VERSION,
            name: name.to_string(),
            system: None,
            params: None,
            regime: None,
            sources: Vec::new(),
            lookback: ds.lookback,
            lookforward: ds.lookforward,
            samples: ds.len(),
            state_names: ds.state_names.clone(),
            action_names: ds.action_names.clone(),
            target_convention: ds.target_convention,
            normalization: ds.normalization.clone(),
        }
    }

    pub fn with_regime(mut self, params: &SystemParams, regime: &RegimeSpec) -> Self {
        self.system = Some(params.system());
        self.params = Some(*params);
        self.regime = Some(*regime);
        self
    }

    pub fn with_sources(mut self, paths: &[std::path::PathBuf]) -> Self {
        self.sources = paths.iter().map(|p| p.display().to_string()).collect();
        self
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulators::ChannelSchema;
    use proptest::prelude::*;

    /// States `[t, 10t]`, action `−t`, so every entry names its own step.
    fn ramp(steps: usize) -> Trajectory {
        let states: Vec<f64> = (0..steps).flat_map(|t| [t as f64, 10.0 * t as f64]).collect();
        let actions: Vec<f64> = (0..steps).map(|t| -(t as f64)).collect();
        Trajectory::new(
            Matrix::from_vec(steps, 2, states).unwrap(),
            Matrix::from_vec(steps, 1, actions).unwrap(),
            0.1,
            ChannelSchema {
                states: vec!["a".into(), "b".into()],
                actions: vec!["u".into()],
            },
        )
        .unwrap()
    }

    #[test]
    fn window_counts() {
        assert_eq!(window(&ramp(30), 10, 10).unwrap().len(), 11);
        assert_eq!(window(&ramp(20), 10, 10).unwrap().len(), 1);
        assert!(matches!(window(&ramp(19), 10, 10), Err(Error::Domain(_))));
    }

    #[test]
    fn target_follows_input_by_one_step() {
        let ds = window(&ramp(40), 7, 5).unwrap();
        assert_eq!(ds.inputs.cols(), 7 * 3);
        assert_eq!(ds.targets.cols(), 5 * 2);
        for i in 0..ds.len() {
            let inp = ds.inputs.row(i);
            let tgt = ds.targets.row(i);
            let last_input_step = inp[6 * 3];
            assert_eq!(inp[0], i as f64);
            assert_eq!(inp[2], -(i as f64));
            assert_eq!(tgt[0], last_input_step + 1.0);
            assert_eq!(tgt[1], 10.0 * tgt[0]);
            assert_eq!(tgt[4 * 2], i as f64 + 11.0);
        }
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = window(&ramp(29), 10, 10).unwrap();
        assert_eq!(ds.len(), 10);
        let (tr, va) = split(&ds, (0.8, 0.2), &mut RngState::new(3)).unwrap();
        assert_eq!((tr.len(), va.len()), (8, 2));
        let (tr2, _) = split(&ds, (0.8, 0.2), &mut RngState::new(3)).unwrap();
        assert_eq!(tr, tr2);
        let (all, none) = split(&ds, (1.0, 0.0), &mut RngState::new(3)).unwrap();
        assert_eq!((all.len(), none.len()), (10, 0));
        assert!(split(&ds, (0.7, 0.2), &mut RngState::new(3)).is_err());
    }

    #[test]
    fn normalization_properties() {
        let params = System::Pendulum.default_params();
        let mk = |amplitude, seed| RegimeSpec {
            amplitude,
            hold: 10,
            trajectories: 3,
            steps: 200,
            noise_sigma: 0.01,
            seed,
        };
        let interp = build_regime(&params, &mk(0.5, 1), 10, 10, Exec::Sequential).unwrap();
        let extrap = build_regime(&params, &mk(2.0, 2), 10, 10, Exec::Sequential).unwrap();
        let (train, others, stats) = normalize_fit_apply(&interp, &[&extrap]).unwrap();
        assert_eq!(train.targets, interp.targets);
        let d = train.input_dim();
        for c in 0..d {
            let column: Vec<f64> = train
                .inputs
                .iter_rows()
                .flat_map(|r| r.chunks(d).map(move |s| s[c]))
                .collect();
            let (m, v) = crate::numerics::mean_var(&column).unwrap();
            assert!(m.abs() < 1e-9, "channel {c} mean {m}");
            assert!((v.sqrt() - 1.0).abs() < 1e-6);
        }
        // The wider actuation range leaves the training range after scaling.
        let u = d - 1;
        let train_max = train.inputs.iter_rows().flat_map(|r| r.chunks(d).map(|s| s[u].abs())).fold(0.0, f64::max);
        let extrap_max = others[0].inputs.iter_rows().flat_map(|r| r.chunks(d).map(|s| s[u].abs())).fold(0.0, f64::max);
        assert!(extrap_max > 1.0);
        assert!(extrap_max > 2.0 * train_max);
        assert_eq!(stats.channels, ["cos_theta", "sin_theta", "omega", "u"]);
    }

    #[test]
    fn constant_channel_maps_to_zero() {
        let steps = 30;
        let states: Vec<f64> = (0..steps).flat_map(|t| [t as f64, 4.0]).collect();
        let traj = Trajectory::new(
            Matrix::from_vec(steps, 2, states).unwrap(),
            Matrix::zeros(steps, 0),
            1.0,
            ChannelSchema {
                states: vec!["x".into(), "c".into()],
                actions: vec![],
            },
        )
        .unwrap();
        let ds = window(&traj, 3, 2).unwrap();
        let (train, _, stats) = normalize_fit_apply(&ds, &[]).unwrap();
        assert_eq!(stats.std[1], STD_FLOOR);
        assert!(train.inputs.iter_rows().all(|r| r.chunks(2).all(|s| s[1] == 0.0)));
    }

    #[test]
    fn empty_train_is_rejected() {
        let ds = window(&ramp(30), 10, 10).unwrap().select(&[]);
        assert!(matches!(normalize_fit_apply(&ds, &[]), Err(Error::Domain(_))));
    }

    #[test]
    fn regimes_are_reproducible_across_exec_modes() {
        let params = System::BacklashMotor.default_params();
        let spec = RegimeSpec {
            amplitude: 1.0,
            hold: 20,
            trajectories: 4,
            steps: 120,
            noise_sigma: 0.01,
            seed: 9,
        };
        let a = build_regime(&params, &spec, 10, 10, Exec::Sequential).unwrap();
        let b = build_regime(&params, &spec, 10, 10, Exec::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4 * (120 - 19));
        let c = build_regime(&params, &RegimeSpec { seed: 10, ..spec }, 10, 10, Exec::Sequential).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn ingested_motor_csv_windows_into_three_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("motor.csv");
        let mut text = String::from("t,theta,omega,u\n");
        for t in 0..40 {
            text.push_str(&format!("{},{},{},{}\n", t as f64 * 0.01, t as f64 * 0.1, 1.0, 0.5));
        }
        std::fs::write(&path, text).unwrap();
        let traj = crate::simulators::csv_ingest(&path, None).unwrap();
        let ds = window(&traj, 10, 10).unwrap();
        assert_eq!(ds.input_dim(), 3);
        assert_eq!(ds.len(), 21);
    }

    #[test]
    fn manifest_round_trip() {
        let params = System::Pendulum.default_params();
        let spec = RegimeSpec {
            amplitude: 0.5,
            hold: 10,
            trajectories: 2,
            steps: 60,
            noise_sigma: 0.0,
            seed: 1,
        };
        let ds = build_regime(&params, &spec, 10, 10, Exec::Sequential).unwrap();
        let (train, _, _) = normalize_fit_apply(&ds, &[]).unwrap();
        let m = DatasetManifest::describe("train", &train).with_regime(&params, &spec);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        m.save(&path).unwrap();
        assert_eq!(DatasetManifest::load(&path).unwrap(), m);
        let json = std::fs::read_to_string(&path).unwrap();
        assert!(json.contains("future_states"));
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 1usize..60, frac in 0.0f64..1.0, seed in any::<u64>()) {
            let ds = window(&ramp(n + 4), 2, 3).unwrap();
            let (tr, va) = split(&ds, (frac, 1.0 - frac), &mut RngState::new(seed)).unwrap();
            prop_assert_eq!(tr.len() + va.len(), ds.len());
            let mut firsts: Vec<i64> = tr.inputs.iter_rows().chain(va.inputs.iter_rows()).map(|r| r[0] as i64).collect();
            firsts.sort();
            prop_assert_eq!(firsts, (0..ds.len() as i64).collect::<Vec<_>>());
        }
    }
}
