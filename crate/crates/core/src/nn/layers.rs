use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gemm_nn, gemm_nt, gemm_tn, Matrix, RngState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

/// One layer of a model stack.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        input: usize,
        output: usize,
        activation: Activation,
    },
    Rnn {
        input: usize,
        hidden: usize,
    },
    Lstm {
        input: usize,
        hidden: usize,
    },
    Dropout {
        rate: f64,
    },
}

impl LayerSpec {
    pub fn dense(input: usize, output: usize, activation: Activation) -> Self {
        LayerSpec::Dense {
            input,
            output,
            activation,
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Dense { input, output, .. } => input * output + output,
            LayerSpec::Rnn { input, hidden } => input * hidden + hidden * hidden + hidden,
            LayerSpec::Lstm { input, hidden } => 4 * (input * hidden + hidden * hidden + hidden),
            LayerSpec::Dropout { .. } => 0,
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let ok = match *self {
            LayerSpec::Dense { input, output, .. } => input > 0 && output > 0,
            LayerSpec::Rnn { input, hidden } | LayerSpec::Lstm { input, hidden } => {
                input > 0 && hidden > 0
            }
            LayerSpec::Dropout { rate } => (0.0..1.0).contains(&rate),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid layer {self:?}")))
        }
    }
}

/// A trainable tensor and its gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
}

impl Parameter {
    fn uniform(name: String, rows: usize, cols: usize, rng: &mut RngState) -> Self {
        let bound = 1.0 / (rows as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.uniform_range(-bound, bound))
            .collect();
        Self::with_value(name, Matrix::from_vec(rows, cols, data).expect("sized"))
    }

    fn zeros(name: String, rows: usize, cols: usize) -> Self {
        Self::with_value(name, Matrix::zeros(rows, cols))
    }

    pub(crate) fn with_value(name: String, value: Matrix) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        Parameter { name, value, grad }
    }
}

/// Activation flowing between layers.
#[derive(Clone, Debug)]
pub(crate) enum Signal {
    Flat(Matrix),
    Seq(Vec<Matrix>),
}

#[derive(Clone, Debug)]
pub(crate) enum LayerCache {
    Dense {
        input: Matrix,
        output: Matrix,
        /// Sequence length when the layer read the last step of a sequence.
        seq_len: Option<usize>,
    },
    Rnn {
        inputs: Vec<Matrix>,
        hidden: Vec<Matrix>,
        from_flat: bool,
    },
    Lstm {
        inputs: Vec<Matrix>,
        steps: Vec<LstmStep>,
        from_flat: bool,
    },
    Dropout {
        masks: Option<Vec<Matrix>>,
        seq: bool,
    },
}

#[derive(Clone, Debug)]
pub(crate) struct LstmStep {
    gates: Matrix,
    cell: Matrix,
    cell_tanh: Matrix,
    hidden: Matrix,
}

#[derive(Clone, Debug)]
pub(crate) enum Layer {
    Dense {
        activation: Activation,
        params: Vec<Parameter>,
    },
    Rnn {
        hidden: usize,
        params: Vec<Parameter>,
    },
    Lstm {
        hidden: usize,
        params: Vec<Parameter>,
    },
    Dropout {
        rate: f64,
    },
}

/// Splits a flat `[batch, steps·width]` input into per-step blocks.
fn unroll(flat: &Matrix, steps: usize) -> Result<Vec<Matrix>> {
    if steps == 0 || flat.cols() % steps != 0 {
        return Err(Error::shape(format!(
            "cannot unroll width {} over {steps} timesteps",
            flat.cols()
        )));
    }
    let width = flat.cols() / steps;
    Ok((0..steps).map(|t| flat.column_block(t * width, width)).collect())
}

fn roll(steps: &[Matrix]) -> Matrix {
    let rows = steps[0].rows();
    let width = steps[0].cols();
    let mut out = Matrix::zeros(rows, width * steps.len());
    for (t, s) in steps.iter().enumerate() {
        out.add_column_block(t * width, s);
    }
    out
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Layer {
    pub(crate) fn init(spec: &LayerSpec, index: String, rng: &mut RngState) -> Layer {
        match *spec {
            LayerSpec::Dense {
                input,
                output,
                activation,
            } => Layer::Dense {
                activation,
                params: vec![
                    Parameter::uniform(format!("{index}.w"), input, output, rng),
                    Parameter::zeros(format!("{index}.b"), 1, output),
                ],
            },
            LayerSpec::Rnn { input, hidden } => Layer::Rnn {
                hidden,
                params: vec![
                    Parameter::uniform(format!("{index}.wx"), input, hidden, rng),
                    Parameter::uniform(format!("{index}.wh"), hidden, hidden, rng),
                    Parameter::zeros(format!("{index}.b"), 1, hidden),
                ],
            },
            LayerSpec::Lstm { input, hidden } => Layer::Lstm {
                hidden,
                params: vec![
                    Parameter::uniform(format!("{index}.wx"), input, 4 * hidden, rng),
                    Parameter::uniform(format!("{index}.wh"), hidden, 4 * hidden, rng),
                    Parameter::zeros(format!("{index}.b"), 1, 4 * hidden),
                ],
            },
            LayerSpec::Dropout { rate } => Layer::Dropout { rate },
        }
    }

    pub(crate) fn params(&self) -> &[Parameter] {
        match self {
            Layer::Dense { params, .. } | Layer::Rnn { params, .. } | Layer::Lstm { params, .. } => {
                params
            }
            Layer::Dropout { .. } => &[],
        }
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Parameter] {
        match self {
            Layer::Dense { params, .. } | Layer::Rnn { params, .. } | Layer::Lstm { params, .. } => {
                params
            }
            Layer::Dropout { .. } => &mut [],
        }
    }

    /// `lookback` is used only when a recurrent layer receives the flat model input.
    pub(crate) fn forward(
        &self,
        input: Signal,
        lookback: usize,
        train: bool,
        rng: &mut RngState,
    ) -> Result<(Signal, LayerCache)> {
        match self {
            Layer::Dense { activation, params } => {
                let (x, seq_len) = match input {
                    Signal::Flat(m) => (m, None),
                    Signal::Seq(mut steps) => {
                        let n = steps.len();
                        (steps.pop().expect("non-empty sequence"), Some(n))
                    }
                };
                let (w, b) = (&params[0].value, &params[1].value);
                if x.cols() != w.rows() {
                    return Err(Error::shape(format!(
                        "dense layer expects width {}, got {}",
                        w.rows(),
                        x.cols()
                    )));
                }
                let mut z = Matrix::zeros(x.rows(), w.cols());
                gemm_nn(&x, w, &mut z);
                z.add_row_broadcast(b);
                let act = *activation;
                if act != Activation::Linear {
                    z.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
                }
                let cache = LayerCache::Dense {
                    input: x,
                    output: z.clone(),
                    seq_len,
                };
                Ok((Signal::Flat(z), cache))
            }
            Layer::Rnn { hidden, params } => {
                let (xs, from_flat) = sequence_input(input, lookback)?;
                let (wx, wh, b) = (&params[0].value, &params[1].value, &params[2].value);
                check_step_width(&xs, wx.rows())?;
                let batch = xs[0].rows();
                let mut hs: Vec<Matrix> = Vec::with_capacity(xs.len());
                for x in &xs {
                    let mut a = Matrix::zeros(batch, *hidden);
                    gemm_nn(x, wx, &mut a);
                    if let Some(prev) = hs.last() {
                        gemm_nn(prev, wh, &mut a);
                    }
                    a.add_row_broadcast(b);
                    a.data_mut().iter_mut().for_each(|v| *v = v.tanh());
                    hs.push(a);
                }
                let out = Signal::Seq(hs.clone());
                Ok((
                    out,
                    LayerCache::Rnn {
                        inputs: xs,
                        hidden: hs,
                        from_flat,
                    },
                ))
            }
            Layer::Lstm { hidden, params } => {
                let (xs, from_flat) = sequence_input(input, lookback)?;
                let (wx, wh, b) = (&params[0].value, &params[1].value, &params[2].value);
                check_step_width(&xs, wx.rows())?;
                let h = *hidden;
                let batch = xs[0].rows();
                let mut steps: Vec<LstmStep> = Vec::with_capacity(xs.len());
                for x in &xs {
                    let mut gates = Matrix::zeros(batch, 4 * h);
                    gemm_nn(x, wx, &mut gates);
                    if let Some(prev) = steps.last() {
                        gemm_nn(&prev.hidden, wh, &mut gates);
                    }
                    gates.add_row_broadcast(b);
                    let mut cell = Matrix::zeros(batch, h);
                    let mut cell_tanh = Matrix::zeros(batch, h);
                    let mut hid = Matrix::zeros(batch, h);
                    for r in 0..batch {
                        let g = gates.row_mut(r);
                        for j in 0..h {
                            g[j] = sigmoid(g[j]);
                            g[h + j] = sigmoid(g[h + j]);
                            g[2 * h + j] = g[2 * h + j].tanh();
                            g[3 * h + j] = sigmoid(g[3 * h + j]);
                        }
                        let g = gates.row(r);
                        let c_prev = steps.last().map(|s| s.cell.row(r));
                        for j in 0..h {
                            let carry = c_prev.map_or(0.0, |c| g[h + j] * c[j]);
                            let c = carry + g[j] * g[2 * h + j];
                            let tc = c.tanh();
                            cell.set(r, j, c);
                            cell_tanh.set(r, j, tc);
                            hid.set(r, j, g[3 * h + j] * tc);
                        }
                    }
                    steps.push(LstmStep {
                        gates,
                        cell,
                        cell_tanh,
                        hidden: hid,
                    });
                }
                let out = Signal::Seq(steps.iter().map(|s| s.hidden.clone()).collect());
                Ok((
                    out,
                    LayerCache::Lstm {
                        inputs: xs,
                        steps,
                        from_flat,
                    },
                ))
            }
            Layer::Dropout { rate } => {
                let rate = *rate;
                if !train || rate == 0.0 {
                    let seq = matches!(input, Signal::Seq(_));
                    return Ok((input, LayerCache::Dropout { masks: None, seq }));
                }
                let keep_scale = 1.0 / (1.0 - rate);
                let mut draw = |m: &Matrix| {
                    let data = (0..m.len())
                        .map(|_| if rng.uniform() < rate { 0.0 } else { keep_scale })
                        .collect();
                    Matrix::from_vec(m.rows(), m.cols(), data).expect("sized")
                };
                let apply = |m: &mut Matrix, mask: &Matrix| {
                    for (v, k) in m.data_mut().iter_mut().zip(mask.data()) {
                        *v *= k;
                    }
                };
                match input {
                    Signal::Flat(mut m) => {
                        let mask = draw(&m);
                        apply(&mut m, &mask);
                        Ok((
                            Signal::Flat(m),
                            LayerCache::Dropout {
                                masks: Some(vec![mask]),
                                seq: false,
                            },
                        ))
                    }
                    Signal::Seq(mut steps) => {
                        let masks: Vec<Matrix> = steps.iter().map(&mut draw).collect();
                        for (s, mask) in steps.iter_mut().zip(&masks) {
                            apply(s, mask);
                        }
                        Ok((
                            Signal::Seq(steps),
                            LayerCache::Dropout {
                                masks: Some(masks),
                                seq: true,
                            },
                        ))
                    }
                }
            }
        }
    }

    /// Accumulates parameter gradients and returns the gradient w.r.t. the
    /// layer input (skipped when `need_input_grad` is false).
    pub(crate) fn backward(
        &mut self,
        cache: LayerCache,
        grad: Signal,
        need_input_grad: bool,
    ) -> Result<Option<Signal>> {
        match (self, cache) {
            (
                Layer::Dense { activation, params },
                LayerCache::Dense {
                    input,
                    output,
                    seq_len,
                },
            ) => {
                let mut dz = expect_flat(grad)?;
                let act = *activation;
                if act != Activation::Linear {
                    for (d, y) in dz.data_mut().iter_mut().zip(output.data()) {
                        *d *= act.derivative_from_output(*y);
                    }
                }
                gemm_tn(&input, &dz, &mut params[0].grad);
                params[1].grad.accumulate_column_sums(&dz);
                if !need_input_grad {
                    return Ok(None);
                }
                let mut dx = Matrix::zeros(input.rows(), input.cols());
                gemm_nt(&dz, &params[0].value, &mut dx);
                Ok(Some(match seq_len {
                    None => Signal::Flat(dx),
                    Some(n) => {
                        let mut steps = vec![Matrix::zeros(dx.rows(), dx.cols()); n - 1];
                        steps.push(dx);
                        Signal::Seq(steps)
                    }
                }))
            }
            (
                Layer::Rnn { hidden, params },
                LayerCache::Rnn {
                    inputs,
                    hidden: hs,
                    from_flat,
                },
            ) => {
                let dh_above = expect_seq(grad, hs.len())?;
                let batch = inputs[0].rows();
                let mut dxs = Vec::new();
                if need_input_grad {
                    dxs = vec![Matrix::zeros(batch, inputs[0].cols()); inputs.len()];
                }
                let mut dh_next = Matrix::zeros(batch, *hidden);
                for t in (0..inputs.len()).rev() {
                    let mut da = dh_above[t].clone();
                    da.add_assign(&dh_next);
                    for (d, h) in da.data_mut().iter_mut().zip(hs[t].data()) {
                        *d *= 1.0 - h * h;
                    }
                    gemm_tn(&inputs[t], &da, &mut params[0].grad);
                    if t > 0 {
                        gemm_tn(&hs[t - 1], &da, &mut params[1].grad);
                    }
                    params[2].grad.accumulate_column_sums(&da);
                    if need_input_grad {
                        gemm_nt(&da, &params[0].value, &mut dxs[t]);
                    }
                    dh_next = Matrix::zeros(batch, *hidden);
                    if t > 0 {
                        gemm_nt(&da, &params[1].value, &mut dh_next);
                    }
                }
                Ok(need_input_grad.then(|| seq_grad(dxs, from_flat)))
            }
            (
                Layer::Lstm { hidden, params },
                LayerCache::Lstm {
                    inputs,
                    steps,
                    from_flat,
                },
            ) => {
                let h = *hidden;
                let dh_above = expect_seq(grad, steps.len())?;
                let batch = inputs[0].rows();
                let mut dxs = Vec::new();
                if need_input_grad {
                    dxs = vec![Matrix::zeros(batch, inputs[0].cols()); inputs.len()];
                }
                let mut dh_next = Matrix::zeros(batch, h);
                let mut dc_next = Matrix::zeros(batch, h);
                let mut dz = Matrix::zeros(batch, 4 * h);
                for t in (0..inputs.len()).rev() {
                    let step = &steps[t];
                    let c_prev = (t > 0).then(|| &steps[t - 1].cell);
                    for r in 0..batch {
                        let g = step.gates.row(r);
                        let dzr = &mut dz.data_mut()[r * 4 * h..(r + 1) * 4 * h];
                        for j in 0..h {
                            let (i, f, gg, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                            let tc = step.cell_tanh.get(r, j);
                            let dh = dh_above[t].get(r, j) + dh_next.get(r, j);
                            let d_o = dh * tc;
                            let dc = dh * o * (1.0 - tc * tc) + dc_next.get(r, j);
                            let cp = c_prev.map_or(0.0, |c| c.get(r, j));
                            dzr[j] = dc * gg * i * (1.0 - i);
                            dzr[h + j] = dc * cp * f * (1.0 - f);
                            dzr[2 * h + j] = dc * i * (1.0 - gg * gg);
                            dzr[3 * h + j] = d_o * o * (1.0 - o);
                            dc_next.set(r, j, dc * f);
                        }
                    }
                    gemm_tn(&inputs[t], &dz, &mut params[0].grad);
                    if t > 0 {
                        gemm_tn(&steps[t - 1].hidden, &dz, &mut params[1].grad);
                    }
                    params[2].grad.accumulate_column_sums(&dz);
                    if need_input_grad {
                        gemm_nt(&dz, &params[0].value, &mut dxs[t]);
                    }
                    dh_next.fill(0.0);
                    if t > 0 {
                        gemm_nt(&dz, &params[1].value, &mut dh_next);
                    }
                }
                Ok(need_input_grad.then(|| seq_grad(dxs, from_flat)))
            }
            (Layer::Dropout { .. }, LayerCache::Dropout { masks, seq }) => {
                if !need_input_grad {
                    return Ok(None);
                }
                let Some(masks) = masks else {
                    return Ok(Some(grad));
                };
                let scale = |mut g: Matrix, mask: &Matrix| {
                    for (v, k) in g.data_mut().iter_mut().zip(mask.data()) {
                        *v *= k;
                    }
                    g
                };
                Ok(Some(if seq {
                    let steps = expect_seq(grad, masks.len())?;
                    Signal::Seq(
                        steps
                            .into_iter()
                            .zip(&masks)
                            .map(|(g, m)| scale(g, m))
                            .collect(),
                    )
                } else {
                    Signal::Flat(scale(expect_flat(grad)?, &masks[0]))
                }))
            }
            _ => Err(Error::State(
                "forward cache does not match the model's layers".into(),
            )),
        }
    }
}

fn sequence_input(input: Signal, lookback: usize) -> Result<(Vec<Matrix>, bool)> {
    match input {
        Signal::Seq(steps) => Ok((steps, false)),
        Signal::Flat(m) => Ok((unroll(&m, lookback)?, true)),
    }
}

fn check_step_width(xs: &[Matrix], expected: usize) -> Result<()> {
    match xs.first() {
        Some(x) if x.cols() == expected => Ok(()),
        Some(x) => Err(Error::shape(format!(
            "recurrent layer expects per-step width {expected}, got {}",
            x.cols()
        ))),
        None => Err(Error::shape("recurrent layer received an empty sequence")),
    }
}

fn seq_grad(dxs: Vec<Matrix>, from_flat: bool) -> Signal {
    if from_flat {
        Signal::Flat(roll(&dxs))
    } else {
        Signal::Seq(dxs)
    }
}

fn expect_flat(grad: Signal) -> Result<Matrix> {
    match grad {
        Signal::Flat(m) => Ok(m),
        Signal::Seq(_) => Err(Error::State("expected a flat gradient".into())),
    }
}

fn expect_seq(grad: Signal, len: usize) -> Result<Vec<Matrix>> {
    match grad {
        Signal::Seq(steps) if steps.len() == len => Ok(steps),
        _ => Err(Error::State(format!(
            "expected a sequence gradient of length {len}"
        ))),
    }
}
