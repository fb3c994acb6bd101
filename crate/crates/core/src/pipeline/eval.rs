//! Restoration scoring and run comparison.

use serde::{Deserialize, Serialize};

use super::data::PretextPair;
use crate::error::{Error, Result};
use crate::loss;
use crate::net::{Generator, Tensor};
use crate::rubik;

/// What maps a disarranged volume back to a restoration.
#[derive(Debug, Clone, Copy)]
pub enum Restorer<'a> {
    Model(&'a Generator<f32>),
    /// Exact inverse from the pair's record.
    Oracle,
    /// Return `x` unchanged.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Mean of the per-sample MSEs.
    pub mse: f64,
    pub per_sample: Vec<(String, f64)>,
}

impl Evaluation {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,mse\n");
        for (id, v) in &self.per_sample {
            s.push_str(&format!("{id},{v}\n"));
        }
        s
    }
}

/// Mean `l2_loss(y, restorer(x))` over `pairs`.
pub fn evaluate_restoration(restorer: &Restorer, pairs: &[PretextPair]) -> Result<Evaluation> {
    if pairs.is_empty() {
        return Err(Error::Shape("no pairs to evaluate".into()));
    }
    let per_sample = pairs
        .iter()
        .map(|p| {
            let mse = match restorer {
                Restorer::Model(g) => {
                    let out = g.forward(&Tensor::from_volume(&p.x))?.to_volume(0)?;
                    loss::l2_loss(&p.y, &out)?
                }
                Restorer::Oracle => loss::l2_loss(&p.y, &rubik::restore(&p.x, &p.record)?)?,
                Restorer::Identity => loss::l2_loss(&p.y, &p.x)?,
            };
            Ok((p.id.clone(), mse))
        })
        .collect::<Result<Vec<_>>>()?;
    let mse = per_sample.iter().map(|(_, v)| v).sum::<f64>() / per_sample.len() as f64;
    Ok(Evaluation { mse, per_sample })
}

/// Paired comparison of per-seed (or per-fold) scores of two runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub n: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    /// `mean_b - mean_a`.
    pub mean_delta: f64,
    pub t: Option<f64>,
    pub df: Option<usize>,
    pub p: Option<f64>,
    pub verdict: String,
}

pub const ALPHA: f64 = 0.05;

pub fn compare_runs(a: &[f64], b: &[f64]) -> Result<Comparison> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!("{} vs {} scores", a.len(), b.len())));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mean_a, mean_b) = (mean(a), mean(b));
    let base = Comparison {
        n: a.len(),
        mean_a,
        mean_b,
        mean_delta: mean_b - mean_a,
        t: None,
        df: None,
        p: None,
        verdict: String::new(),
    };
    match loss::paired_t_test(b, a) {
        Ok(t) => Ok(Comparison {
            t: Some(t.t),
            df: Some(t.df),
            p: Some(t.p),
            verdict: if t.p < ALPHA {
                format!("significant (p = {:.4})", t.p)
            } else {
                format!("not significant (p = {:.4})", t.p)
            },
            ..base
        }),
        Err(Error::DegenerateTest(_)) => Ok(Comparison {
            verdict: "not significant (zero variance)".into(),
            ..base
        }),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::config::ExperimentConfig;
    use crate::pipeline::data::pretext_pairs;

    fn pairs(m: usize) -> Vec<PretextPair> {
        let mut cfg = ExperimentConfig::default();
        cfg.data.synthetic.count = 3;
        cfg.pretext.m = m;
        pretext_pairs(&cfg).unwrap()
    }

    #[test]
    fn oracle_and_identity() {
        let p = pairs(2);
        assert_eq!(evaluate_restoration(&Restorer::Oracle, &p).unwrap().mse, 0.0);
        assert_eq!(evaluate_restoration(&Restorer::Identity, &pairs(0)).unwrap().mse, 0.0);

        let mut want = 0.0;
        for q in &p {
            let mut s = 0.0;
            for (a, b) in q.y.data().iter().zip(q.x.data()) {
                s += (*a as f64 - *b as f64).powi(2);
            }
            want += s / q.y.data().len() as f64;
        }
        want /= p.len() as f64;
        let got = evaluate_restoration(&Restorer::Identity, &p).unwrap();
        assert!((got.mse - want).abs() <= 1e-12 * want);
        assert!(got.mse > 0.0);
        assert_eq!(got.to_csv().lines().count(), 4);
    }

    #[test]
    fn comparisons() {
        let a = [0.5, 0.6, 0.7];
        let c = compare_runs(&a, &a).unwrap();
        assert_eq!(c.verdict, "not significant (zero variance)");
        assert_eq!(c.p, None);

        let c = compare_runs(&[0.0; 4], &[5.0, 5.0, 5.0, 9.0]).unwrap();
        assert!((c.t.unwrap() - 6.0).abs() < 1e-12);
        assert!((c.p.unwrap() - 0.009272715).abs() < 1e-6);
        assert!(c.verdict.starts_with("significant"));
        assert!(compare_runs(&a, &a[..2]).is_err());
    }
}
