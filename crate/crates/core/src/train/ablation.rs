use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use crate::data::Direction;
use crate::error::{Error, Result};
use crate::metrics::{EvalReport, MetricRow};
use crate::nn::AblationFlags;
use crate::tensor::{DType, Element};

use super::config::TrainConfig;
use super::eval::input_copy_baseline;
use super::trainer::Trainer;

pub const LOG_FILE: &str = "train.log";
pub const CHECKPOINT_FILE: &str = "checkpoint.mpck";

/// Outcome of one complete training run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub seed: u64,
    pub baseline: EvalReport,
    pub initial: EvalReport,
    pub final_eval: EvalReport,
    pub seconds: f64,
    pub log_lines: Vec<String>,
}

impl RunSummary {
    /// Final PSNR gain over copying the input, for one direction.
    pub fn psnr_gain(&self, d: Direction) -> Option<f64> {
        Some(self.final_eval.direction(d)?.psnr_db - self.baseline.direction(d)?.psnr_db)
    }
}

fn run_typed<E: Element>(cfg: &TrainConfig, dir: Option<&Path>) -> Result<RunSummary> {
    let start = Instant::now();
    let mut t = Trainer::<E>::new(cfg.clone())?;
    if let Some(d) = dir {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        t.log_to(&d.join(LOG_FILE))?;
    }
    let ckpt = dir.map(|d| d.join(CHECKPOINT_FILE));
    let outcome = t.run(ckpt.as_deref())?;
    let missing = || Error::InvalidArgument("run produced no evaluation".into());
    Ok(RunSummary {
        seed: cfg.seed,
        baseline: input_copy_baseline(&t.data.test, &cfg.loss)?,
        initial: outcome.initial_eval.clone().ok_or_else(missing)?,
        final_eval: outcome.final_eval().cloned().ok_or_else(missing)?,
        seconds: start.elapsed().as_secs_f64(),
        log_lines: std::mem::take(&mut t.log_lines),
    })
}

/// Trains from scratch in the configured precision. With `dir`, the log and
/// per-epoch checkpoints are written there.
pub fn train_run(cfg: &TrainConfig, dir: Option<&Path>) -> Result<RunSummary> {
    match cfg.dtype {
        DType::F32 => run_typed::<f32>(cfg, dir),
        DType::F64 => run_typed::<f64>(cfg, dir),
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariantResult {
    pub name: String,
    pub flags: AblationFlags,
    pub runs: Vec<RunSummary>,
}

impl VariantResult {
    /// Metric-wise median over seeds of the final test metrics.
    pub fn median(&self, d: Direction) -> MetricRow {
        let rows: Vec<&MetricRow> = self.runs.iter().filter_map(|r| r.final_eval.direction(d)).collect();
        let pick = |f: fn(&MetricRow) -> f64| median(&mut rows.iter().map(|r| f(r)).collect::<Vec<_>>());
        MetricRow {
            label: d.as_str().to_string(),
            psnr_db: pick(|r| r.psnr_db),
            ssim: pick(|r| r.ssim),
            mae: pick(|r| r.mae),
            n: rows.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub variants: Vec<VariantResult>,
}

impl AblationReport {
    pub fn variant(&self, name: &str) -> Option<&VariantResult> {
        self.variants.iter().find(|v| v.name == name)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{:<16}", "variant");
        for d in Direction::ALL {
            let _ = write!(out, "{:>11}{:>9}{:>9}", format!("{d} PSNR"), "SSIM", "MAE");
        }
        out.push('\n');
        for v in &self.variants {
            let _ = write!(out, "{:<16}", v.name);
            for d in Direction::ALL {
                let m = v.median(d);
                let _ = write!(out, "{:>11.3}{:>9.4}{:>9.3}", m.psnr_db, m.ssim, m.mae);
            }
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,direction,psnr_db,ssim,mae,seeds\n");
        for v in &self.variants {
            for d in Direction::ALL {
                let m = v.median(d);
                let _ = writeln!(out, "{},{},{},{},{},{}", v.name, d, m.psnr_db, m.ssim, m.mae, v.runs.len());
            }
        }
        out
    }
}

/// Trains every ablation variant once per seed and reports medians.
/// `on_run` sees each finished run as it completes.
pub fn run_ablation<F>(base: &TrainConfig, seeds: &[u64], dir: Option<&Path>, mut on_run: F) -> Result<AblationReport>
where
    F: FnMut(&str, &RunSummary),
{
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("ablation needs at least one seed".into()));
    }
    let mut variants = Vec::new();
    for (name, flags) in AblationFlags::variants() {
        let mut runs = Vec::new();
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.model.ablation = flags;
            cfg.seed = seed;
            let run_dir = dir.map(|d| d.join(format!("{}-seed{seed}", name.replace(['/', ' '], "_"))));
            let run = train_run(&cfg, run_dir.as_deref())?;
            on_run(name, &run);
            runs.push(run);
        }
        variants.push(VariantResult { name: name.to_string(), flags, runs });
    }
    Ok(AblationReport { variants })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0]), 2.5);
        assert!(median(&mut []).is_nan());
    }
}
