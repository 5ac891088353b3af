//! Small sequence models (dense, vanilla RNN, LSTM) with exact reverse-mode
//! gradients.
//!
//! A model consumes a flat window `[batch, lookback · input_dim]`. Dense layers
//! read it as one vector; recurrent layers unroll it over `lookback` steps and
//! emit the hidden state at every step. A dense layer placed after a recurrent
//! layer (including the head) reads only the final hidden state. Dropout uses
//! the inverted convention: survivors are scaled by `1/(1 − rate)` at train
//! time and eval mode is the identity.

mod checkpoint;
mod layers;
mod model;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use layers::{Activation, LayerSpec, Parameter};
pub use model::{ForwardCache, Mode, Model, ModelSpec};

use serde::{Deserialize, Serialize};

/// Model families compared in the experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Dense,
    Rnn,
    Lstm,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::Dense => "dense",
            Architecture::Rnn => "rnn",
            Architecture::Lstm => "lstm",
        }
    }

    /// Desk-scale width: 32 units per dense layer, 24 per recurrent layer.
    pub fn default_width(self) -> usize {
        match self {
            Architecture::Dense => 32,
            Architecture::Rnn | Architecture::Lstm => 24,
        }
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Architecture {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dense" => Ok(Architecture::Dense),
            "rnn" => Ok(Architecture::Rnn),
            "lstm" => Ok(Architecture::Lstm),
            other => Err(format!("unknown model '{other}' (expected dense, rnn or lstm)")),
        }
    }
}

/// Builds a stack of `depth` hidden layers of `width` units followed by a
/// linear head of `output` units, with optional input dropout.
pub fn build_spec(
    arch: Architecture,
    lookback: usize,
    input_dim: usize,
    output: usize,
    depth: usize,
    width: usize,
    input_dropout: f64,
) -> ModelSpec {
    let mut layers = Vec::with_capacity(depth + 1);
    if input_dropout > 0.0 {
        layers.push(LayerSpec::Dropout {
            rate: input_dropout,
        });
    }
    let mut fan_in = match arch {
        Architecture::Dense => lookback * input_dim,
        _ => input_dim,
    };
    for _ in 0..depth {
        layers.push(match arch {
            Architecture::Dense => LayerSpec::dense(fan_in, width, Activation::Tanh),
            Architecture::Rnn => LayerSpec::Rnn {
                input: fan_in,
                hidden: width,
            },
            Architecture::Lstm => LayerSpec::Lstm {
                input: fan_in,
                hidden: width,
            },
        });
        fan_in = width;
    }
    ModelSpec {
        lookback,
        input_dim,
        layers,
        head: LayerSpec::dense(fan_in, output, Activation::Linear),
    }
}
