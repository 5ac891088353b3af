//! Central finite-difference checks of every analytic gradient.
//!
//! Each suite draws random small instances, computes the analytic gradient
//! and compares every entry with `(f(θ+h) − f(θ−h)) / 2h`. An entry passes
//! when its relative error `|a − n| / max(|a|, |n|)` is below the tolerance,
//! or, when `|a|` is below `small`, when `|a − n|` is below `abs_tol`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{composite_loss, ljb_loss, ljb_loss_2d, mse, LossConfig};
use crate::nn::{Activation, LayerSpec, Model, ModelSpec};
use crate::numerics::{Matrix, RngState};
use crate::par::Exec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Component {
    DenseTanh,
    DenseRelu,
    DenseLinear,
    Rnn,
    Lstm,
    Dropout,
    Stack,
    Mse,
    Ljb,
    Composite,
    Ljb2d,
}

impl Component {
    pub const ALL: [Component; 11] = [
        Component::DenseTanh,
        Component::DenseRelu,
        Component::DenseLinear,
        Component::Rnn,
        Component::Lstm,
        Component::Dropout,
        Component::Stack,
        Component::Mse,
        Component::Ljb,
        Component::Composite,
        Component::Ljb2d,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::DenseTanh => "dense-tanh",
            Component::DenseRelu => "dense-relu",
            Component::DenseLinear => "dense-linear",
            Component::Rnn => "rnn",
            Component::Lstm => "lstm",
            Component::Dropout => "dropout",
            Component::Stack => "stack",
            Component::Mse => "mse",
            Component::Ljb => "ljb",
            Component::Composite => "composite",
            Component::Ljb2d => "ljb2d",
        }
    }

    /// Suites selected by a `--component` value: an exact name, or `dense`
    /// for all three dense variants.
    pub fn select(name: &str) -> Result<Vec<Component>> {
        if name == "all" {
            return Ok(Component::ALL.to_vec());
        }
        if name == "dense" {
            return Ok(vec![Component::DenseTanh, Component::DenseRelu, Component::DenseLinear]);
        }
        Component::ALL
            .into_iter()
            .find(|c| c.name() == name)
            .map(|c| vec![c])
            .ok_or_else(|| {
                let known: Vec<&str> = Component::ALL.iter().map(|c| c.name()).collect();
                Error::Config(format!(
                    "unknown component '{name}' (expected all, dense, {})",
                    known.join(", ")
                ))
            })
    }
}

impl std::fmt::Display for Component {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckOptions {
    pub instances: usize,
    pub seed: u64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Below this analytic magnitude the absolute tolerance applies.
    pub small: f64,
    /// Deliberately corrupt the analytic gradient (negative control).
    pub inject_fault: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            instances: 100,
            seed: 0,
            rel_tol: 1e-4,
            abs_tol: 1e-7,
            small: 1e-6,
            inject_fault: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentResult {
    pub component: Component,
    pub instances: usize,
    /// Gradient entries compared.
    pub entries: usize,
    pub failures: usize,
    /// Largest relative error among entries checked relatively.
    pub worst_rel_err: f64,
    /// Largest absolute error among entries under the absolute fallback.
    pub worst_abs_err: f64,
}

impl ComponentResult {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.entries > 0
    }
}

struct Tally {
    entries: usize,
    failures: usize,
    worst_rel: f64,
    worst_abs: f64,
}

impl Tally {
    fn check(&mut self, analytic: f64, numeric: f64, opts: &GradcheckOptions) {
        self.entries += 1;
        let diff = (analytic - numeric).abs();
        let ok = if analytic.abs() < opts.small {
            self.worst_abs = self.worst_abs.max(diff);
            diff < opts.abs_tol
        } else {
            let rel = diff / analytic.abs().max(numeric.abs());
            self.worst_rel = self.worst_rel.max(rel);
            rel < opts.rel_tol
        };
        if !ok || !numeric.is_finite() {
            self.failures += 1;
        }
    }
}

fn corrupt(grad: &mut [f64], opts: &GradcheckOptions) {
    if opts.inject_fault {
        for g in grad.iter_mut() {
            *g *= 1.01;
        }
        if let Some(g) = grad.first_mut() {
            *g += 1e-3;
        }
    }
}

fn random_matrix(rng: &mut RngState, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| scale * rng.uniform_range(-1.0, 1.0)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

fn between(rng: &mut RngState, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

/// Random model for a layer suite.
fn layer_instance(c: Component, rng: &mut RngState) -> ModelSpec {
    let lookback = between(rng, 1, 6);
    let input_dim = between(rng, 1, 3);
    let out = between(rng, 1, 4);
    let h = between(rng, 1, 8);
    let flat = lookback * input_dim;
    let head = |input| LayerSpec::dense(input, out, Activation::Linear);
    let (layers, head_in) = match c {
        Component::DenseTanh => (vec![LayerSpec::dense(flat, h, Activation::Tanh)], h),
        Component::DenseRelu => (vec![LayerSpec::dense(flat, h, Activation::Relu)], h),
        Component::DenseLinear => (vec![LayerSpec::dense(flat, h, Activation::Linear)], h),
        Component::Rnn => (vec![LayerSpec::Rnn { input: input_dim, hidden: h }], h),
        Component::Lstm => (vec![LayerSpec::Lstm { input: input_dim, hidden: h }], h),
        Component::Dropout => {
            let rate = rng.uniform_range(0.1, 0.6);
            (
                vec![LayerSpec::Dropout { rate }, LayerSpec::dense(flat, h, Activation::Tanh)],
                h,
            )
        }
        Component::Stack => {
            let h2 = between(rng, 1, 8);
            let stacks = [
                vec![
                    LayerSpec::dense(flat, h, Activation::Tanh),
                    LayerSpec::dense(h, h2, Activation::Tanh),
                    LayerSpec::dense(h2, h, Activation::Linear),
                ],
                vec![
                    LayerSpec::Rnn { input: input_dim, hidden: h },
                    LayerSpec::Lstm { input: h, hidden: h2 },
                    LayerSpec::dense(h2, h, Activation::Tanh),
                ],
                vec![
                    LayerSpec::Dropout { rate: 0.3 },
                    LayerSpec::Lstm { input: input_dim, hidden: h },
                    LayerSpec::Rnn { input: h, hidden: h },
                ],
                vec![
                    LayerSpec::Lstm { input: input_dim, hidden: h2 },
                    LayerSpec::Dropout { rate: 0.2 },
                    LayerSpec::Lstm { input: h2, hidden: h },
                ],
            ];
            (stacks[rng.below(stacks.len())].clone(), h)
        }
        _ => unreachable!("not a layer suite"),
    };
    ModelSpec {
        lookback,
        input_dim,
        layers,
        head: head(head_in),
    }
}

/// Minimum `|pre-activation|` of the first dense layer over the batch.
fn first_layer_margin(model: &Model, x: &Matrix) -> f64 {
    let w = &model.parameter("layers.0.w").expect("dense").value;
    let b = &model.parameter("layers.0.b").expect("dense").value;
    let mut z = x.matmul(w).expect("conforming");
    z.add_row_broadcast(b);
    z.data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

fn check_layer_instance(c: Component, rng: &mut RngState, opts: &GradcheckOptions, tally: &mut Tally) -> Result<()> {
    const H: f64 = 1e-5;
    let (mut model, x) = loop {
        let spec = layer_instance(c, rng);
        let mut model = Model::new(spec, rng)?;
        // Nonzero biases exercise every term.
        for p in model.parameters_mut() {
            if p.name.ends_with(".b") {
                for v in p.value.data_mut() {
                    *v = rng.uniform_range(-0.5, 0.5);
                }
            }
        }
        let batch = between(rng, 1, 4);
        let x = random_matrix(rng, batch, model.spec().input_width(), 1.0);
        // Keep clear of the ReLU kink so differences are meaningful.
        if c == Component::DenseRelu && first_layer_margin(&model, &x) < 1e-3 {
            continue;
        }
        break (model, x);
    };
    let g_out = random_matrix(rng, x.rows(), model.spec().output_width(), 1.0);
    // Dropout masks are a function of the generator state only, so cloning
    // it replays the same mask for every evaluation.
    let mask_rng = rng.fork(7);
    let objective = |m: &mut Model| -> Result<f64> {
        let (out, _) = m.forward(&x, &mut mask_rng.clone())?;
        Ok(out.data().iter().zip(g_out.data()).map(|(a, b)| a * b).sum())
    };

    model.zero_grad();
    let (_, cache) = model.forward(&x, &mut mask_rng.clone())?;
    model.backward(cache, &g_out)?;
    let mut analytic: Vec<Vec<f64>> = model.parameters().map(|p| p.grad.data().to_vec()).collect();
    if let Some(first) = analytic.first_mut() {
        corrupt(first, opts);
    }

    let count = analytic.len();
    for (pi, grads) in analytic.iter().enumerate().take(count) {
        for (ei, &a) in grads.iter().enumerate() {
            let orig = model.parameters().nth(pi).expect("param").value.data()[ei];
            let set = |m: &mut Model, v: f64| {
                m.parameters_mut().nth(pi).expect("param").value.data_mut()[ei] = v;
            };
            set(&mut model, orig + H);
            let up = objective(&mut model)?;
            set(&mut model, orig - H);
            let down = objective(&mut model)?;
            set(&mut model, orig);
            tally.check(a, (up - down) / (2.0 * H), opts);
        }
    }
    Ok(())
}

/// Checks `grad` of `f` at `x` entry by entry.
fn check_function(
    x: &Matrix,
    grad: &Matrix,
    h: f64,
    opts: &GradcheckOptions,
    tally: &mut Tally,
    f: impl Fn(&Matrix) -> Result<f64>,
) -> Result<()> {
    let mut analytic = grad.data().to_vec();
    corrupt(&mut analytic, opts);
    let mut probe = x.clone();
    for (i, &a) in analytic.iter().enumerate() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        tally.check(a, (up - down) / (2.0 * h), opts);
    }
    Ok(())
}

fn check_loss_instance(c: Component, rng: &mut RngState, opts: &GradcheckOptions, tally: &mut Tally) -> Result<()> {
    match c {
        Component::Mse => {
            let (b, w) = (between(rng, 1, 4), between(rng, 1, 8));
            let pred = random_matrix(rng, b, w, 1.0);
            let target = random_matrix(rng, b, w, 1.0);
            let (_, g) = mse(&pred, &target)?;
            check_function(&pred, &g, 1e-5, opts, tally, |p| Ok(mse(p, &target)?.0))
        }
        Component::Ljb => {
            let n = between(rng, 6, 12);
            let cfg = LossConfig {
                lags: between(rng, 1, 5),
                ..LossConfig::default()
            };
            let b = between(rng, 1, 4);
            let r = random_matrix(rng, b, n, 1.0);
            let (_, g) = ljb_loss(&r, &cfg)?;
            check_function(&r, &g, 1e-6, opts, tally, |r| Ok(ljb_loss(r, &cfg)?.0))
        }
        Component::Composite => {
            let channels = between(rng, 1, 3);
            let lf = between(rng, 6, 10);
            let cfg = LossConfig {
                lambda: rng.uniform_range(0.1, 2.0),
                lags: between(rng, 1, 5),
                ..LossConfig::default()
            };
            let b = between(rng, 1, 4);
            let pred = random_matrix(rng, b, lf * channels, 1.0);
            let target = random_matrix(rng, b, lf * channels, 1.0);
            let (_, g) = composite_loss(&pred, &target, channels, &cfg)?;
            check_function(&pred, &g, 1e-6, opts, tally, |p| {
                Ok(composite_loss(p, &target, channels, &cfg)?.0)
            })
        }
        Component::Ljb2d => {
            let cfg = LossConfig {
                two_d_lags: 2,
                ..LossConfig::default()
            };
            let (h, w) = (between(rng, 4, 7), between(rng, 4, 7));
            let img = random_matrix(rng, h, w, 1.0);
            let (_, g) = ljb_loss_2d(&img, &cfg)?;
            check_function(&img, &g, 1e-6, opts, tally, |m| Ok(ljb_loss_2d(m, &cfg)?.0))
        }
        _ => unreachable!("not a loss suite"),
    }
}

/// Runs one suite of `opts.instances` random instances.
pub fn run_component(c: Component, opts: &GradcheckOptions) -> Result<ComponentResult> {
    let mut rng = RngState::new(opts.seed).fork(c as u64);
    let mut tally = Tally {
        entries: 0,
        failures: 0,
        worst_rel: 0.0,
        worst_abs: 0.0,
    };
    for _ in 0..opts.instances {
        match c {
            Component::Mse | Component::Ljb | Component::Composite | Component::Ljb2d => {
                check_loss_instance(c, &mut rng, opts, &mut tally)?
            }
            _ => check_layer_instance(c, &mut rng, opts, &mut tally)?,
        }
    }
    Ok(ComponentResult {
        component: c,
        instances: opts.instances,
        entries: tally.entries,
        failures: tally.failures,
        worst_rel_err: tally.worst_rel,
        worst_abs_err: tally.worst_abs,
    })
}

/// Runs the selected suites, in order.
pub fn run_suites(components: &[Component], opts: &GradcheckOptions, exec: Exec) -> Result<Vec<ComponentResult>> {
    exec.map(components, |&c| run_component(c, opts))
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_suite_passes() {
        let opts = GradcheckOptions {
            instances: 20,
            ..Default::default()
        };
        for r in run_suites(&Component::ALL, &opts, Exec::Parallel).unwrap() {
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn injected_fault_is_caught() {
        let opts = GradcheckOptions {
            instances: 3,
            inject_fault: true,
            ..Default::default()
        };
        for c in [Component::Lstm, Component::Ljb, Component::Mse] {
            assert!(!run_component(c, &opts).unwrap().passed(), "{c}");
        }
    }

    #[test]
    fn component_selection() {
        assert_eq!(Component::select("ljb").unwrap(), vec![Component::Ljb]);
        assert_eq!(Component::select("dense").unwrap().len(), 3);
        assert_eq!(Component::select("all").unwrap().len(), Component::ALL.len());
        assert!(Component::select("conv").is_err());
    }
}
