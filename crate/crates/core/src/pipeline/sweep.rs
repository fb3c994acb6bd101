//! Multi-run studies: the (n, m) difficulty sweep and scratch-vs-pretrained
//! transfer comparisons.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::eval::{compare_runs, Comparison};
use super::report::{emit, MetricsReport};
use super::train::{finetune_model, pretrain_model};
use crate::error::{Error, Result};

pub const SWEEP_COLUMNS: [&str; 5] = ["n", "m", "final_mse", "identity_mse", "mean_dice"];

/// Pretrain then fine-tune once per `(n, m)` cell with cubic subcubes of
/// side `n`. Rows follow `n` outer, `m` inner, in the order given.
pub fn difficulty_sweep(cfg: &ExperimentConfig, ns: &[usize], ms: &[usize]) -> Result<MetricsReport> {
    if ns.is_empty() || ms.is_empty() {
        return Err(Error::BadConfig("sweep needs at least one n and one m".into()));
    }
    for list in [ns, ms] {
        let mut sorted = list.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != list.len() {
            return Err(Error::BadConfig(format!("duplicate sweep values {list:?}")));
        }
    }
    let start = Instant::now();
    let cells: Vec<(usize, usize)> = ns.iter().flat_map(|&n| ms.iter().map(move |&m| (n, m))).collect();
    let rows = cells
        .par_iter()
        .map(|&(n, m)| {
            let mut cell = cfg.clone();
            cell.pretext.side = [n, n, n];
            cell.pretext.m = m;
            let out = pretrain_model(&cell)?;
            if let Some(step) = out.diverged_at {
                return Err(Error::Diverged { step });
            }
            let (_, ft) = finetune_model(&cell, Some(&out.checkpoint))?;
            log::info!("sweep cell n={n} m={m}: mse {:?}", out.report.final_mse);
            Ok(vec![
                n as f64,
                m as f64,
                out.report.final_mse.unwrap_or(f64::NAN),
                out.report.identity_mse.unwrap_or(f64::NAN),
                ft.mean_dice.unwrap_or(f64::NAN),
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = MetricsReport::new("sweep", cfg, &SWEEP_COLUMNS);
    report.rows = rows;
    report.wall_clock_s = start.elapsed().as_secs_f64();
    Ok(report)
}

/// [`difficulty_sweep`] plus report files under `cfg.output_dir`.
pub fn run_sweep(cfg: &ExperimentConfig, ns: &[usize], ms: &[usize]) -> Result<(MetricsReport, std::path::PathBuf)> {
    let report = difficulty_sweep(cfg, ns, ms)?;
    let path = emit(&report, cfg, &cfg.output_dir, &[])?;
    Ok((report, path))
}

/// Spearman rank correlation; ties share their mean rank.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Shape(format!("{} vs {} values", a.len(), b.len())));
    }
    let ranks = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for &k in &idx[i..=j] {
                r[k] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        r
    };
    let (ra, rb) = (ranks(a), ranks(b));
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ma, mb) = (mean(&ra), mean(&rb));
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return Err(Error::DegenerateTest("constant ranks".into()));
    }
    Ok(cov / (va * vb).sqrt())
}

/// Mean dice of scratch and pretrained fine-tuning, one entry per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub seeds: Vec<u64>,
    pub label_fraction: f64,
    pub scratch: Vec<f64>,
    pub pretrained: Vec<f64>,
    /// Pretrained (`b`) against scratch (`a`).
    pub comparison: Comparison,
}

/// For every seed: pretrain, then fine-tune both from the checkpoint and
/// from scratch on identical splits.
pub fn transfer_study(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<TransferReport> {
    let runs = seeds
        .par_iter()
        .map(|&s| {
            let mut run = cfg.clone();
            run.seed = s;
            let out = pretrain_model(&run)?;
            if let Some(step) = out.diverged_at {
                return Err(Error::Diverged { step });
            }
            let (_, pre) = finetune_model(&run, Some(&out.checkpoint))?;
            let (_, scratch) = finetune_model(&run, None)?;
            Ok((scratch.mean_dice.unwrap_or(0.0), pre.mean_dice.unwrap_or(0.0)))
        })
        .collect::<Result<Vec<_>>>()?;
    let (scratch, pretrained): (Vec<f64>, Vec<f64>) = runs.into_iter().unzip();
    let comparison = compare_runs(&scratch, &pretrained)?;
    Ok(TransferReport {
        seeds: seeds.to_vec(),
        label_fraction: cfg.finetune.label_fraction,
        scratch,
        pretrained,
        comparison,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_values() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[0.1, 0.5, 0.9]).unwrap(), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert!((spearman(&[1.0, 2.0, 3.0], &[0.2, 0.1, 0.3]).unwrap() - 0.5).abs() < 1e-12);
        assert!(spearman(&[1.0, 2.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn sweep_rejects_bad_lists() {
        let cfg = ExperimentConfig::default();
        assert!(matches!(difficulty_sweep(&cfg, &[], &[2]), Err(Error::BadConfig(_))));
        assert!(matches!(difficulty_sweep(&cfg, &[2, 2], &[2]), Err(Error::BadConfig(_))));
    }
}
