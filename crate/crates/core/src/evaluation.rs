//! Residual diagnostics: per-channel RMSE and error spread, the residual
//! ACF with its white-noise band, ΣAutoCorr, and the Ljung-Box statistic
//! with its χ² p-value. Reports aggregate across seeds and render as
//! markdown, CSV plot data or JSON.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datasets::WindowedDataset;
use crate::error::{Error, Result};
use crate::losses::{autocorr_row, autocorr_row_centered, channel_residuals, ljb_row};
use crate::nn::Model;
use crate::numerics::{mean_var, Matrix};
use crate::par::Exec;

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Rows per prediction chunk when evaluating in parallel.
const CHUNK_ROWS: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub lags: usize,
    pub epsilon: f64,
    /// Subtract each window's mean before computing its ACF.
    pub centered: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            lags: 5,
            epsilon: 1e-8,
            centered: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelReport {
    pub name: String,
    pub rmse: f64,
    /// Population std of every residual of the channel.
    pub std: f64,
    /// `Σ_{k=1..L} |ρ̂_k|`
    pub sum_ac: f64,
    /// `Σ_{k=1..L} ρ̂_k²`
    pub sum_ac_sq: f64,
    /// Sample-averaged `ρ̂_k` for `k = 1..L`.
    pub acf: Vec<f64>,
    pub ljb: f64,
    pub ljb_p_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    pub run_id: String,
    pub dataset: String,
    /// Runs that differ only by seed share this identifier.
    pub config_id: String,
    pub samples: usize,
    pub lags: usize,
    /// Window length the ACF is computed over.
    pub n_eff: usize,
    /// Half-width `1.96/√n_eff` of the white-noise band.
    pub band: f64,
    pub centered: bool,
    pub channels: Vec<ChannelReport>,
}

/// Identifiers attached to a report.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReportIds {
    pub run_id: String,
    pub dataset: String,
    pub config_id: String,
}

pub fn confidence_band(n_eff: usize) -> f64 {
    1.96 / (n_eff as f64).sqrt()
}

/// Eval-mode predictions, computed in row chunks.
pub fn predict_chunked(model: &Model, inputs: &Matrix, exec: Exec) -> Result<Matrix> {
    let chunks = inputs.rows().div_ceil(CHUNK_ROWS).max(1);
    let parts = exec.map_indexed(chunks, |c| {
        let lo = c * CHUNK_ROWS;
        let hi = ((c + 1) * CHUNK_ROWS).min(inputs.rows());
        let idx: Vec<usize> = (lo..hi).collect();
        model.predict(&inputs.select_rows(&idx))
    });
    let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
    Matrix::vstack(&parts.iter().collect::<Vec<_>>())
}

/// Diagnostics of `pred` against `targets` laid out `[N, steps · channels]`.
pub fn residual_report(
    pred: &Matrix,
    targets: &Matrix,
    names: &[String],
    opts: &EvalOptions,
    ids: &ReportIds,
) -> Result<EvalReport> {
    let channels = names.len();
    let per_channel = channel_residuals(pred, targets, channels)?;
    let n = pred.cols() / channels.max(1);
    if opts.lags == 0 || opts.lags >= n {
        return Err(Error::domain(format!(
            "{} lags do not fit a window of {n} steps",
            opts.lags
        )));
    }
    let rows = pred.rows();
    let mut reports = Vec::with_capacity(channels);
    for (name, r) in names.iter().zip(&per_channel) {
        let (rmse, std) = if r.is_empty() {
            (0.0, 0.0)
        } else {
            let (_, var) = mean_var(r.data())?;
            ((r.squared_norm() / r.len() as f64).sqrt(), var.sqrt())
        };
        let acf: Vec<f64> = (1..=opts.lags)
            .map(|k| {
                let sum: f64 = r
                    .iter_rows()
                    .map(|row| {
                        if opts.centered {
                            autocorr_row_centered(row, k, opts.epsilon)
                        } else {
                            autocorr_row(row, k, opts.epsilon)
                        }
                    })
                    .sum();
                sum / rows.max(1) as f64
            })
            .collect();
        let ljb = r
            .iter_rows()
            .map(|row| ljb_row(row, opts.lags, opts.epsilon))
            .sum::<f64>()
            / rows.max(1) as f64;
        reports.push(ChannelReport {
            name: name.clone(),
            rmse,
            std,
            sum_ac: acf.iter().map(|v| v.abs()).sum(),
            sum_ac_sq: acf.iter().map(|v| v * v).sum(),
            acf,
            ljb,
            ljb_p_value: chi2_upper_tail(ljb, opts.lags)?,
        });
    }
    Ok(EvalReport {
        format_version: REPORT_FORMAT_VERSION,
        run_id: ids.run_id.clone(),
        dataset: ids.dataset.clone(),
        config_id: ids.config_id.clone(),
        samples: rows,
        lags: opts.lags,
        n_eff: n,
        band: confidence_band(n),
        centered: opts.centered,
        channels: reports,
    })
}

/// Evaluates `model` on `ds` (whose inputs must already be normalized the
/// way the model was trained).
pub fn evaluate(
    model: &Model,
    ds: &WindowedDataset,
    opts: &EvalOptions,
    ids: &ReportIds,
    exec: Exec,
) -> Result<EvalReport> {
    let spec = model.spec();
    if ds.inputs.cols() != spec.input_width() || ds.targets.cols() != spec.output_width() {
        return Err(Error::shape(format!(
            "dataset widths {}/{} do not match model {} -> {}",
            ds.inputs.cols(),
            ds.targets.cols(),
            spec.input_width(),
            spec.output_width()
        )));
    }
    let pred = predict_chunked(model, &ds.inputs, exec)?;
    residual_report(&pred, &ds.targets, &ds.state_names, opts, ids)
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos approximation, g = 7, nine coefficients.
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized upper incomplete gamma `Q(a, x)`: power series for
/// `x < a + 1`, modified-Lentz continued fraction otherwise.
fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let log_prefactor = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..1000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-16 {
                break;
            }
        }
        (1.0 - sum * log_prefactor.exp()).clamp(0.0, 1.0)
    } else {
        const TINY: f64 = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..1000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        (log_prefactor.exp() * h).clamp(0.0, 1.0)
    }
}

/// `P(χ²_dof > x)`.
pub fn chi2_upper_tail(x: f64, dof: usize) -> Result<f64> {
    if dof == 0 || !(x >= 0.0) {
        return Err(Error::domain(format!(
            "chi-square tail needs x >= 0 and dof >= 1, got x={x}, dof={dof}"
        )));
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    Ok(gamma_q(dof as f64 / 2.0, x / 2.0))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Population std across seeds.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Result<Stat> {
        let (mean, var) = mean_var(values)?;
        Ok(Stat {
            mean,
            std: var.sqrt(),
            min: values.iter().cloned().fold(f64::INFINITY, f64::min),
            max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelAggregate {
    pub name: String,
    pub rmse: Stat,
    pub std: Stat,
    pub sum_ac: Stat,
    pub sum_ac_sq: Stat,
    pub ljb: Stat,
    pub ljb_p_value: Stat,
    pub acf: Vec<Stat>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub format_version: u32,
    pub config_id: String,
    pub dataset: String,
    pub seeds: usize,
    pub run_ids: Vec<String>,
    pub lags: usize,
    pub band: f64,
    pub channels: Vec<ChannelAggregate>,
}

/// Mean and std of every metric across reports of one configuration.
pub fn aggregate(reports: &[EvalReport]) -> Result<AggregateReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::domain("nothing to aggregate"))?;
    for r in reports {
        if r.config_id != first.config_id || r.dataset != first.dataset {
            return Err(Error::domain(format!(
                "cannot aggregate '{}' on '{}' with '{}' on '{}'",
                first.config_id, first.dataset, r.config_id, r.dataset
            )));
        }
        let names = |x: &EvalReport| x.channels.iter().map(|c| c.name.clone()).collect::<Vec<_>>();
        if names(r) != names(first) || r.lags != first.lags {
            return Err(Error::domain("reports have different channel layouts"));
        }
    }
    let channels = (0..first.channels.len())
        .map(|m| {
            let col = |f: &dyn Fn(&ChannelReport) -> f64| {
                Stat::of(&reports.iter().map(|r| f(&r.channels[m])).collect::<Vec<_>>())
            };
            Ok(ChannelAggregate {
                name: first.channels[m].name.clone(),
                rmse: col(&|c| c.rmse)?,
                std: col(&|c| c.std)?,
                sum_ac: col(&|c| c.sum_ac)?,
                sum_ac_sq: col(&|c| c.sum_ac_sq)?,
                ljb: col(&|c| c.ljb)?,
                ljb_p_value: col(&|c| c.ljb_p_value)?,
                acf: (0..first.lags)
                    .map(|k| col(&|c| c.acf[k]))
                    .collect::<Result<Vec<_>>>()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AggregateReport {
        format_version: REPORT_FORMAT_VERSION,
        config_id: first.config_id.clone(),
        dataset: first.dataset.clone(),
        seeds: reports.len(),
        run_ids: reports.iter().map(|r| r.run_id.clone()).collect(),
        lags: first.lags,
        band: first.band,
        channels,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Markdown,
    Csv,
    Json,
}

impl Format {
    pub const ALL: [Format; 3] = [Format::Markdown, Format::Csv, Format::Json];

    pub fn extension(self) -> &'static str {
        match self {
            Format::Markdown => "md",
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

/// One row of a results table: a label and, per channel, RMSE, Std and
/// ΣAutoCorr with an optional across-seed spread for each.
#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub label: String,
    pub cells: Vec<TableCell>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableCell {
    pub channel: String,
    pub rmse: (f64, Option<f64>),
    pub std: (f64, Option<f64>),
    pub sum_ac: (f64, Option<f64>),
}

impl TableRow {
    pub fn from_report(label: &str, r: &EvalReport) -> Self {
        TableRow {
            label: label.to_string(),
            cells: r
                .channels
                .iter()
                .map(|c| TableCell {
                    channel: c.name.clone(),
                    rmse: (c.rmse, None),
                    std: (c.std, None),
                    sum_ac: (c.sum_ac, None),
                })
                .collect(),
        }
    }

    pub fn from_aggregate(label: &str, a: &AggregateReport) -> Self {
        TableRow {
            label: label.to_string(),
            cells: a
                .channels
                .iter()
                .map(|c| TableCell {
                    channel: c.name.clone(),
                    rmse: (c.rmse.mean, Some(c.rmse.std)),
                    std: (c.std.mean, Some(c.std.std)),
                    sum_ac: (c.sum_ac.mean, Some(c.sum_ac.std)),
                })
                .collect(),
        }
    }
}

fn fmt_cell((v, sd): (f64, Option<f64>)) -> String {
    match sd {
        Some(sd) => format!("{v:.4} ± {sd:.4}"),
        None => format!("{v:.4}"),
    }
}

/// `Model | <ch> RMSE | <ch> Std | <ch> ΣAutoCorr | ...`, one line per row.
pub fn markdown_table(rows: &[TableRow]) -> String {
    let mut out = String::new();
    let Some(first) = rows.first() else {
        return out;
    };
    out.push_str("| Model |");
    for c in &first.cells {
        let _ = write!(out, " {0} RMSE | {0} Std | {0} ΣAutoCorr |", c.channel);
    }
    out.push_str("\n|---|");
    for _ in &first.cells {
        out.push_str("---|---|---|");
    }
    out.push('\n');
    for row in rows {
        let _ = write!(out, "| {} |", row.label);
        for c in &row.cells {
            let _ = write!(out, " {} | {} | {} |", fmt_cell(c.rmse), fmt_cell(c.std), fmt_cell(c.sum_ac));
        }
        out.push('\n');
    }
    out
}

/// ACF plot data: `channel,lag,value,band`, `lags` rows per channel.
pub fn acf_csv(report: &EvalReport) -> String {
    let mut out = String::from("channel,lag,value,band\n");
    for c in &report.channels {
        for (k, v) in c.acf.iter().enumerate() {
            let _ = writeln!(out, "{},{},{:e},{:e}", c.name, k + 1, v, report.band);
        }
    }
    out
}

/// Aggregate ACF plot data: `channel,lag,mean,std,band`.
pub fn aggregate_acf_csv(report: &AggregateReport) -> String {
    let mut out = String::from("channel,lag,mean,std,band\n");
    for c in &report.channels {
        for (k, s) in c.acf.iter().enumerate() {
            let _ = writeln!(out, "{},{},{:e},{:e},{:e}", c.name, k + 1, s.mean, s.std, report.band);
        }
    }
    out
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn emit_report(report: &EvalReport, format: Format, path: &Path) -> Result<()> {
    let text = match format {
        Format::Markdown => markdown_table(&[TableRow::from_report(&report.run_id, report)]),
        Format::Csv => acf_csv(report),
        Format::Json => serde_json::to_string_pretty(report)?,
    };
    write_text(path, &text)
}

pub fn emit_aggregate(report: &AggregateReport, format: Format, path: &Path) -> Result<()> {
    let text = match format {
        Format::Markdown => markdown_table(&[TableRow::from_aggregate(&report.config_id, report)]),
        Format::Csv => aggregate_acf_csv(report),
        Format::Json => serde_json::to_string_pretty(report)?,
    };
    write_text(path, &text)
}

pub fn emit_table(rows: &[TableRow], path: &Path) -> Result<()> {
    write_text(path, &markdown_table(rows))
}

pub fn load_report(path: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn load_aggregate(path: &Path) -> Result<AggregateReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
