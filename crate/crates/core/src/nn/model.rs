use serde::{Deserialize, Serialize};

use super::layers::{Layer, LayerCache, LayerSpec, Parameter, Signal};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngState};

/// Architecture of a model: the per-step input layout, a hidden stack and
/// the dense head that emits every lookforward output at once.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Timesteps in the input window.
    pub lookback: usize,
    /// Features per input timestep.
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
    /// Must be `LayerSpec::Dense`.
    pub head: LayerSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Shape {
    /// The raw `[batch, lookback · input_dim]` window.
    Window,
    Flat(usize),
    Seq(usize),
}

impl ModelSpec {
    pub fn input_width(&self) -> usize {
        self.lookback * self.input_dim
    }

    pub fn output_width(&self) -> usize {
        match self.head {
            LayerSpec::Dense { output, .. } => output,
            _ => 0,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum::<usize>() + self.head.param_count()
    }

    /// Checks that adjacent layers conform.
    pub fn validate(&self) -> Result<()> {
        if self.lookback == 0 || self.input_dim == 0 {
            return Err(Error::Config("lookback and input_dim must be positive".into()));
        }
        if !matches!(self.head, LayerSpec::Dense { .. }) {
            return Err(Error::Config("model head must be a dense layer".into()));
        }
        let mut shape = Shape::Window;
        for (i, layer) in self.layers.iter().chain(std::iter::once(&self.head)).enumerate() {
            layer.validate()?;
            let mismatch = |expected: usize, got: usize| {
                Error::shape(format!(
                    "layer {i} ({layer:?}) expects input width {expected}, previous layer provides {got}"
                ))
            };
            shape = match (*layer, shape) {
                (LayerSpec::Dropout { .. }, s) => s,
                (LayerSpec::Dense { input, output, .. }, s) => {
                    let width = match s {
                        Shape::Window => self.input_width(),
                        Shape::Flat(w) | Shape::Seq(w) => w,
                    };
                    if width != input {
                        return Err(mismatch(input, width));
                    }
                    Shape::Flat(output)
                }
                (
                    LayerSpec::Rnn { input, hidden } | LayerSpec::Lstm { input, hidden },
                    s,
                ) => {
                    let width = match s {
                        Shape::Window => self.input_dim,
                        Shape::Seq(w) => w,
                        Shape::Flat(_) => {
                            return Err(Error::shape(format!(
                                "layer {i} is recurrent but receives a non-sequence input"
                            )))
                        }
                    };
                    if width != input {
                        return Err(mismatch(input, width));
                    }
                    Shape::Seq(hidden)
                }
            };
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Train,
    Eval,
}

/// Everything a backward pass needs from the matching forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    generation: u64,
    layers: Vec<LayerCache>,
}

impl ForwardCache {
    #[cfg(test)]
    pub(crate) fn layers_for_test(&self) -> &[LayerCache] {
        &self.layers
    }
}

/// A layer stack with instantiated parameters.
#[derive(Clone, Debug)]
pub struct Model {
    spec: ModelSpec,
    layers: Vec<Layer>,
    mode: Mode,
    /// Bumped on every forward pass and parameter mutation; caches from an
    /// older generation are rejected by `backward`.
    generation: u64,
}

impl Model {
    /// Weights `~ U(−1/√fan_in, 1/√fan_in)` with `fan_in` the row count of
    /// each weight matrix; biases zero.
    pub fn new(spec: ModelSpec, rng: &mut RngState) -> Result<Model> {
        spec.validate()?;
        let mut layers: Vec<Layer> = spec
            .layers
            .iter()
            .enumerate()
            .map(|(i, s)| Layer::init(s, format!("layers.{i}"), rng))
            .collect();
        layers.push(Layer::init(&spec.head, "head".to_string(), rng));
        Ok(Model {
            spec,
            layers,
            mode: Mode::Train,
            generation: 0,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn param_count(&self) -> usize {
        self.parameters().map(|p| p.value.len()).sum()
    }

    pub fn parameters(&self) -> impl Iterator<Item = &Parameter> + '_ {
        self.layers.iter().flat_map(Layer::params)
    }

    /// Mutable parameter access; invalidates outstanding forward caches.
    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut Parameter> + '_ {
        self.generation += 1;
        self.layers.iter_mut().flat_map(Layer::params_mut)
    }

    pub fn parameter(&self, name: &str) -> Option<&Parameter> {
        self.parameters().find(|p| p.name == name)
    }

    pub fn zero_grad(&mut self) {
        for layer in &mut self.layers {
            for p in layer.params_mut() {
                p.grad.fill(0.0);
            }
        }
    }

    fn check_input(&self, inputs: &Matrix) -> Result<()> {
        let width = self.spec.input_width();
        if inputs.cols() != width {
            return Err(Error::shape(format!(
                "model expects input width {width} (lookback {} x {} features), got {}",
                self.spec.lookback,
                self.spec.input_dim,
                inputs.cols()
            )));
        }
        Ok(())
    }

    fn run(&self, inputs: &Matrix, train: bool, rng: &mut RngState) -> Result<(Matrix, Vec<LayerCache>)> {
        self.check_input(inputs)?;
        let mut signal = Signal::Flat(inputs.clone());
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, cache) = layer.forward(signal, self.spec.lookback, train, rng)?;
            signal = next;
            caches.push(cache);
        }
        match signal {
            Signal::Flat(out) => Ok((out, caches)),
            Signal::Seq(_) => Err(Error::State("model ended on a sequence".into())),
        }
    }

    /// Forward pass recording a cache for [`Model::backward`]. In train mode
    /// dropout masks are drawn from `rng`.
    pub fn forward(&mut self, inputs: &Matrix, rng: &mut RngState) -> Result<(Matrix, ForwardCache)> {
        let train = self.mode == Mode::Train;
        let (out, layers) = self.run(inputs, train, rng)?;
        self.generation += 1;
        Ok((
            out,
            ForwardCache {
                generation: self.generation,
                layers,
            },
        ))
    }

    /// Eval-mode forward pass without a cache, regardless of the current mode.
    pub fn predict(&self, inputs: &Matrix) -> Result<Matrix> {
        // Eval mode never draws from the generator.
        let mut unused = RngState::new(0);
        self.run(inputs, false, &mut unused).map(|(out, _)| out)
    }

    /// Accumulates `∂(Σ outputs ⊙ grad_out)/∂θ` into every parameter's grad.
    pub fn backward(&mut self, cache: ForwardCache, grad_out: &Matrix) -> Result<()> {
        if cache.generation != self.generation {
            return Err(Error::State(
                "forward cache is stale: the model changed since it was produced".into(),
            ));
        }
        if cache.layers.len() != self.layers.len() {
            return Err(Error::State("forward cache has the wrong layer count".into()));
        }
        let mut grad = Signal::Flat(grad_out.clone());
        for (i, (layer, lc)) in self
            .layers
            .iter_mut()
            .zip(cache.layers)
            .enumerate()
            .rev()
        {
            match layer.backward(lc, grad, i > 0)? {
                Some(g) => grad = g,
                None => break,
            }
        }
        // A cache may be consumed once.
        self.generation += 1;
        Ok(())
    }

    /// Replaces parameter values by name; every parameter must be present with
    /// its current shape.
    pub fn load_values(&mut self, values: &std::collections::BTreeMap<String, Matrix>) -> Result<()> {
        for p in self.parameters_mut() {
            let v = values
                .get(&p.name)
                .ok_or_else(|| Error::State(format!("missing parameter {}", p.name)))?;
            if v.shape() != p.value.shape() {
                return Err(Error::shape(format!(
                    "parameter {} has shape {:?}, checkpoint has {:?}",
                    p.name,
                    p.value.shape(),
                    v.shape()
                )));
            }
            p.value = v.clone();
        }
        Ok(())
    }

    pub(crate) fn snapshot(&self) -> Vec<Matrix> {
        self.parameters().map(|p| p.value.clone()).collect()
    }

    pub(crate) fn restore(&mut self, snapshot: &[Matrix]) {
        for (p, v) in self.parameters_mut().zip(snapshot) {
            p.value.clone_from(v);
        }
    }
}
