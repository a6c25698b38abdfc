//! Evaluation metrics on clamped images at the 0–255 scale.

use std::fmt::Write as _;

use crate::data::Direction;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::loss::{self, LossConfig};
use crate::tensor::{Element, Tensor};

/// Reported for identical images instead of +∞.
pub const PSNR_CAP: f64 = 100.0;
pub const METRIC_RANGE: f64 = 255.0;

fn scaled<E: Element>(t: &Tensor<E>, range: f64) -> Vec<f64> {
    t.data().iter().map(|v| v.to_f64().unwrap_or(f64::NAN).clamp(0.0, 1.0) * range).collect()
}

fn scaled_pair<E: Element>(pred: &Tensor<E>, target: &Tensor<E>, range: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(
            "metric",
            format!("prediction {:?} and target {:?} differ", pred.shape(), target.shape()),
        ));
    }
    Ok((scaled(pred, range), scaled(target, range)))
}

/// `10·log10(L² / MSE)` on inputs clamped to [0,1] and scaled by `range`.
pub fn psnr<E: Element>(pred: &Tensor<E>, target: &Tensor<E>, range: f64) -> Result<f64> {
    let (p, t) = scaled_pair(pred, target, range)?;
    let mse = p.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (range * range / mse).log10()).min(PSNR_CAP))
}

/// Mean absolute error on inputs clamped to [0,1] and scaled by `range`.
pub fn mae_metric<E: Element>(pred: &Tensor<E>, target: &Tensor<E>, range: f64) -> Result<f64> {
    let (p, t) = scaled_pair(pred, target, range)?;
    Ok(p.iter().zip(&t).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.len() as f64)
}

/// SSIM on clamped, scaled inputs, evaluated without recording gradients.
pub fn ssim_metric<E: Element>(pred: &Tensor<E>, target: &Tensor<E>, cfg: &LossConfig) -> Result<f64> {
    let range = METRIC_RANGE;
    let (p, t) = scaled_pair(pred, target, range)?;
    let g = Graph::<f64>::inference();
    let p = g.constant(Tensor::new(pred.shape().to_vec(), p)?);
    let t = g.constant(Tensor::new(target.shape().to_vec(), t)?);
    let s = loss::ssim(&g, p, t, &LossConfig { data_range: range, ..*cfg })?;
    Ok(g.value(s).item())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub mae: f64,
}

pub fn image_metrics<E: Element>(pred: &Tensor<E>, target: &Tensor<E>, cfg: &LossConfig) -> Result<ImageMetrics> {
    Ok(ImageMetrics {
        psnr: psnr(pred, target, METRIC_RANGE)?,
        ssim: ssim_metric(pred, target, cfg)?,
        mae: mae_metric(pred, target, METRIC_RANGE)?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    /// A direction name, or `all` for the aggregate.
    pub label: String,
    pub psnr_db: f64,
    pub ssim: f64,
    pub mae: f64,
    pub n: usize,
}

impl MetricRow {
    fn mean_of<'a>(label: &str, items: impl Iterator<Item = &'a ImageMetrics>) -> Option<Self> {
        let mut row = MetricRow { label: label.to_string(), psnr_db: 0.0, ssim: 0.0, mae: 0.0, n: 0 };
        for m in items {
            row.psnr_db += m.psnr;
            row.ssim += m.ssim;
            row.mae += m.mae;
            row.n += 1;
        }
        if row.n == 0 {
            return None;
        }
        let n = row.n as f64;
        row.psnr_db /= n;
        row.ssim /= n;
        row.mae /= n;
        Some(row)
    }
}

pub const AGGREGATE_LABEL: &str = "all";
const CSV_HEADER: &str = "direction,psnr_db,ssim,mae,n";

/// Per-direction means followed by the mean over all samples.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<MetricRow>,
}

impl EvalReport {
    pub fn from_samples(samples: &[(Direction, ImageMetrics)]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("cannot evaluate an empty split".into()));
        }
        let mut rows: Vec<MetricRow> = Direction::ALL
            .iter()
            .filter_map(|&d| {
                MetricRow::mean_of(d.as_str(), samples.iter().filter(|(sd, _)| *sd == d).map(|(_, m)| m))
            })
            .collect();
        rows.extend(MetricRow::mean_of(AGGREGATE_LABEL, samples.iter().map(|(_, m)| m)));
        Ok(Self { rows })
    }

    pub fn direction(&self, d: Direction) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.label == d.as_str())
    }

    pub fn aggregate(&self) -> &MetricRow {
        self.rows.iter().find(|r| r.label == AGGREGATE_LABEL).expect("report has an aggregate row")
    }

    pub fn count(&self) -> usize {
        self.aggregate().n
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{:<10}{:>10}{:>10}{:>10}{:>6}\n", "direction", "PSNR(dB)", "SSIM", "MAE", "n");
        for r in &self.rows {
            let _ = writeln!(out, "{:<10}{:>10.3}{:>10.4}{:>10.3}{:>6}", r.label, r.psnr_db, r.ssim, r.mae, r.n);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{}", r.label, r.psnr_db, r.ssim, r.mae, r.n);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Malformed { kind: "report", msg };
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some(CSV_HEADER) {
            return Err(bad(format!("expected header `{CSV_HEADER}`")));
        }
        let rows = lines
            .map(|line| {
                let f: Vec<&str> = line.split(',').collect();
                let [label, psnr, ssim, mae, n] = f[..] else {
                    return Err(bad(format!("expected 5 fields in `{line}`")));
                };
                let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("`{s}`: {e}")));
                Ok(MetricRow {
                    label: label.to_string(),
                    psnr_db: num(psnr)?,
                    ssim: num(ssim)?,
                    mae: num(mae)?,
                    n: n.parse().map_err(|e| bad(format!("`{n}`: {e}")))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if !rows.iter().any(|r| r.label == AGGREGATE_LABEL) {
            return Err(bad("missing aggregate row".into()));
        }
        Ok(Self { rows })
    }
}
