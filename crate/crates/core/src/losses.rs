//! MSE, residual autocorrelations, the Ljung-Box statistic and the composite
//! whitening loss, each with an exact analytic gradient.
//!
//! Autocorrelations are normalized by the zero-lag energy plus a floor,
//! `ρ̂_k = Σ_{t≥k} r_t r_{t−k} / (Σ r_t² + ε)`, without mean subtraction. The
//! statistic of a residual row of length `n` is
//! `Q = n(n+2) Σ_{k=1..L} ρ̂_k² / (n − k)`; matrix inputs are treated as a
//! batch of rows and the per-row values are averaged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the Ljung-Box term.
    pub lambda: f64,
    /// Number of lags `L` in the statistic.
    pub lags: usize,
    /// Floor added to the normalizing energy.
    pub epsilon: f64,
    /// Lags per axis for the image variant.
    pub two_d_lags: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 1.0,
            lags: 5,
            epsilon: 1e-8,
            two_d_lags: 2,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.lags == 0 {
            return Err(Error::Config("lags must be at least 1".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Mean squared error over all entries and its gradient w.r.t. `pred`.
pub fn mse(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    check_same_shape(pred, target)?;
    let count = pred.len().max(1) as f64;
    let mut grad = Matrix::zeros(pred.rows(), pred.cols());
    let mut sum = 0.0;
    for ((g, p), t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p - t;
        sum += d * d;
        *g = 2.0 * d / count;
    }
    Ok((sum / count, grad))
}

fn check_same_shape(a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "prediction is {:?} but target is {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

#[inline]
fn energy(r: &[f64], epsilon: f64) -> f64 {
    r.iter().map(|x| x * x).sum::<f64>() + epsilon
}

#[inline]
fn lagged_product(r: &[f64], k: usize) -> f64 {
    r[k..].iter().zip(r).map(|(a, b)| a * b).sum()
}

/// Normalized lag-`k` autocorrelation of a single residual sequence.
pub fn autocorr_row(r: &[f64], k: usize, epsilon: f64) -> f64 {
    lagged_product(r, k) / energy(r, epsilon)
}

/// Mean-subtracted variant used by diagnostics.
pub fn autocorr_row_centered(r: &[f64], k: usize, epsilon: f64) -> f64 {
    let mean = r.iter().sum::<f64>() / r.len().max(1) as f64;
    let centered: Vec<f64> = r.iter().map(|x| x - mean).collect();
    autocorr_row(&centered, k, epsilon)
}

/// Batch-averaged lag-`k` autocorrelation of the rows of `residuals`.
pub fn autocorr_1d(residuals: &Matrix, k: usize, epsilon: f64) -> Result<f64> {
    let n = residuals.cols();
    if k >= n {
        return Err(Error::domain(format!("lag {k} must be below the row length {n}")));
    }
    if residuals.rows() == 0 {
        return Err(Error::domain("no residual rows"));
    }
    let total: f64 = residuals.iter_rows().map(|r| autocorr_row(r, k, epsilon)).sum();
    Ok(total / residuals.rows() as f64)
}

fn check_lags(n: usize, lags: usize) -> Result<()> {
    if lags == 0 || lags >= n {
        return Err(Error::domain(format!(
            "Ljung-Box needs 1 <= lags < n, got lags = {lags}, n = {n}"
        )));
    }
    Ok(())
}

/// Ljung-Box statistic of one row.
pub fn ljb_row(r: &[f64], lags: usize, epsilon: f64) -> f64 {
    let n = r.len();
    let s = energy(r, epsilon);
    let scale = (n * (n + 2)) as f64;
    (1..=lags)
        .map(|k| {
            let rho = lagged_product(r, k) / s;
            rho * rho / (n - k) as f64
        })
        .sum::<f64>()
        * scale
}

/// Adds `weight · ∂Q/∂r` for one row into `out`; returns `Q`.
fn ljb_row_grad(r: &[f64], lags: usize, epsilon: f64, weight: f64, out: &mut [f64]) -> f64 {
    let n = r.len();
    let s = energy(r, epsilon);
    let scale = (n * (n + 2)) as f64;
    let mut q = 0.0;
    let mut coeff = Vec::with_capacity(lags);
    for k in 1..=lags {
        let rho = lagged_product(r, k) / s;
        q += rho * rho / (n - k) as f64;
        coeff.push(2.0 * scale * rho / ((n - k) as f64 * s));
    }
    q *= scale;
    // ∂Q/∂r_j = Σ_k w_k (r_{j−k} + r_{j+k}) − 4 Q r_j / S
    let shrink = 4.0 * q / s;
    for j in 0..n {
        let mut g = -shrink * r[j];
        for (idx, w) in coeff.iter().enumerate() {
            let k = idx + 1;
            if j >= k {
                g += w * r[j - k];
            }
            if j + k < n {
                g += w * r[j + k];
            }
        }
        out[j] += weight * g;
    }
    q
}

/// Batch-averaged Ljung-Box statistic of the rows of `residuals`.
pub fn ljb_statistic(residuals: &Matrix, cfg: &LossConfig) -> Result<f64> {
    check_lags(residuals.cols(), cfg.lags)?;
    if residuals.rows() == 0 {
        return Err(Error::domain("no residual rows"));
    }
    let total: f64 = residuals
        .iter_rows()
        .map(|r| ljb_row(r, cfg.lags, cfg.epsilon))
        .sum();
    Ok(total / residuals.rows() as f64)
}

/// [`ljb_statistic`] and its exact gradient w.r.t. every residual.
pub fn ljb_loss(residuals: &Matrix, cfg: &LossConfig) -> Result<(f64, Matrix)> {
    check_lags(residuals.cols(), cfg.lags)?;
    let rows = residuals.rows();
    if rows == 0 {
        return Err(Error::domain("no residual rows"));
    }
    let weight = 1.0 / rows as f64;
    let mut grad = Matrix::zeros(rows, residuals.cols());
    let mut total = 0.0;
    for i in 0..rows {
        total += ljb_row_grad(residuals.row(i), cfg.lags, cfg.epsilon, weight, grad.row_mut(i));
    }
    Ok((total * weight, grad))
}

/// Per-channel residual windows: column `j·channels + m` of the flat
/// `[batch, steps · channels]` layout becomes column `j` of channel `m`.
pub fn channel_residuals(pred: &Matrix, target: &Matrix, channels: usize) -> Result<Vec<Matrix>> {
    check_same_shape(pred, target)?;
    if channels == 0 || pred.cols() % channels != 0 {
        return Err(Error::shape(format!(
            "output width {} is not a multiple of {channels} channels",
            pred.cols()
        )));
    }
    let steps = pred.cols() / channels;
    let mut out = vec![Matrix::zeros(pred.rows(), steps); channels];
    for b in 0..pred.rows() {
        let (p, t) = (pred.row(b), target.row(b));
        for j in 0..steps {
            for (m, ch) in out.iter_mut().enumerate() {
                let idx = j * channels + m;
                ch.set(b, j, t[idx] - p[idx]);
            }
        }
    }
    Ok(out)
}

/// `mse + λ · mean_m LJB(residuals of channel m)` and its gradient w.r.t. `pred`.
///
/// Outputs are laid out step-major: `[batch, lookforward · channels]`.
pub fn composite_loss(
    pred: &Matrix,
    target: &Matrix,
    channels: usize,
    cfg: &LossConfig,
) -> Result<(f64, Matrix)> {
    let (mse_value, mut grad) = mse(pred, target)?;
    if cfg.lambda == 0.0 {
        return Ok((mse_value, grad));
    }
    let per_channel = channel_residuals(pred, target, channels)?;
    let steps = pred.cols() / channels;
    if steps < cfg.lags + 1 {
        return Err(Error::domain(format!(
            "lookforward {steps} is too short for {} lags",
            cfg.lags
        )));
    }
    let weight = cfg.lambda / channels as f64;
    let mut ljb_total = 0.0;
    for (m, residuals) in per_channel.iter().enumerate() {
        let (q, g_r) = ljb_loss(residuals, cfg)?;
        ljb_total += q;
        // r = target − pred, so ∂/∂pred = −∂/∂r.
        for b in 0..pred.rows() {
            let g_row = grad.row_mut(b);
            for (j, gr) in g_r.row(b).iter().enumerate() {
                g_row[j * channels + m] -= weight * gr;
            }
        }
    }
    Ok((mse_value + weight * ljb_total, grad))
}

fn check_lags_2d(img: &Matrix, p: usize, q: usize) -> Result<()> {
    if p >= img.rows() || q >= img.cols() {
        return Err(Error::domain(format!(
            "lag ({p}, {q}) out of range for a {}x{} image",
            img.rows(),
            img.cols()
        )));
    }
    Ok(())
}

fn lagged_product_2d(img: &Matrix, p: usize, q: usize) -> f64 {
    let mut sum = 0.0;
    for i in p..img.rows() {
        let (row, lagged) = (img.row(i), img.row(i - p));
        sum += row[q..].iter().zip(lagged).map(|(a, b)| a * b).sum::<f64>();
    }
    sum
}

/// Normalized spatial autocorrelation at offset `(p, q)`.
pub fn autocorr_2d(img: &Matrix, p: usize, q: usize, epsilon: f64) -> Result<f64> {
    check_lags_2d(img, p, q)?;
    Ok(lagged_product_2d(img, p, q) / energy(img.data(), epsilon))
}

/// Spatial Ljung-Box loss over offsets `(p, q) ∈ [0, L]² \ {(0, 0)}`:
/// `N(N+2) Σ ρ̂²_{p,q} / ((H − p)(W − q))` with `N = H·W`, and its gradient.
pub fn ljb_loss_2d(img: &Matrix, cfg: &LossConfig) -> Result<(f64, Matrix)> {
    let l = cfg.two_d_lags;
    let (h, w) = img.shape();
    if l >= h.min(w) {
        return Err(Error::domain(format!(
            "two_d_lags {l} must be below min(H, W) = {}",
            h.min(w)
        )));
    }
    let n = (h * w) as f64;
    let scale = n * (n + 2.0);
    let s = energy(img.data(), cfg.epsilon);
    let mut q_total = 0.0;
    let mut terms = Vec::new();
    for p in 0..=l {
        for q in 0..=l {
            if p == 0 && q == 0 {
                continue;
            }
            let rho = lagged_product_2d(img, p, q) / s;
            let valid = ((h - p) * (w - q)) as f64;
            q_total += rho * rho / valid;
            terms.push((p, q, 2.0 * scale * rho / (valid * s)));
        }
    }
    q_total *= scale;
    let shrink = 4.0 * q_total / s;
    let mut grad = img.map(|r| -shrink * r);
    for &(p, q, coeff) in &terms {
        for a in 0..h {
            for b in 0..w {
                let mut g = 0.0;
                if a >= p && b >= q {
                    g += img.get(a - p, b - q);
                }
                if a + p < h && b + q < w {
                    g += img.get(a + p, b + q);
                }
                let cur = grad.get(a, b);
                grad.set(a, b, cur + coeff * g);
            }
        }
    }
    Ok((q_total, grad))
}
