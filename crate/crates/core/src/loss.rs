//! Objectives and evaluation metrics.
//!
//! Expectations are realized as arithmetic means over every element (voxels,
//! channels, patches and batch), accumulated in `f64` in index order, so the
//! value does not depend on how the caller chunks work.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::Scalar;
use crate::volume::Volume;

/// Clamp applied to discriminator probabilities before taking logs.
pub const LOG_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Weight of the reconstruction term in the generator objective.
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda: 10.0 }
    }
}

impl LossWeights {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::BadConfig(format!("lambda {lambda} must be >= 0")));
        }
        Ok(LossWeights { lambda })
    }
}

/// Every loss term of one training step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub l1: f64,
    pub l2: f64,
    /// `mean log D(x, y) + mean log(1 - D(x, G(x)))`, which D ascends.
    pub adv_d: f64,
    /// The generator's adversarial term under the active mode.
    pub adv_g: f64,
    /// Generator objective actually minimized.
    pub joint: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.l1, self.l2, self.adv_d, self.adv_g, self.joint]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// How the generator's adversarial term is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdvMode {
    /// `mean log(1 - D(x, G(x)))`, minimized.
    Minimax,
    /// `mean -log D(x, G(x))`, minimized.
    #[default]
    Nonsaturating,
}

impl std::str::FromStr for AdvMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minimax" => Ok(AdvMode::Minimax),
            "nonsaturating" => Ok(AdvMode::Nonsaturating),
            other => Err(Error::BadMode(other.to_string())),
        }
    }
}

fn same_len<A, B>(a: &[A], b: &[B]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{} vs {} elements", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Shape("empty operands".into()));
    }
    Ok(())
}

fn f<T: Scalar>(v: T) -> f64 {
    v.to_f64().unwrap()
}

fn mean_by<T: Scalar>(y: &[T], g: &[T], op: impl Fn(f64) -> f64) -> Result<f64> {
    same_len(y, g)?;
    let sum: f64 = y.iter().zip(g).map(|(&a, &b)| op(f(a) - f(b))).sum();
    Ok(sum / y.len() as f64)
}

/// Mean absolute error.
pub fn l1<T: Scalar>(y: &[T], g: &[T]) -> Result<f64> {
    mean_by(y, g, f64::abs)
}

/// Mean squared error.
pub fn l2<T: Scalar>(y: &[T], g: &[T]) -> Result<f64> {
    mean_by(y, g, |d| d * d)
}

fn check_volumes(y: &Volume, g: &Volume) -> Result<()> {
    if !y.same_shape(g) {
        return Err(Error::Shape(format!(
            "{:?}x{} vs {:?}x{}",
            y.dims(),
            y.channels(),
            g.dims(),
            g.channels()
        )));
    }
    Ok(())
}

pub fn l1_loss(y: &Volume, g: &Volume) -> Result<f64> {
    check_volumes(y, g)?;
    l1(y.data(), g.data())
}

pub fn l2_loss(y: &Volume, g: &Volume) -> Result<f64> {
    check_volumes(y, g)?;
    l2(y.data(), g.data())
}

/// Alias of [`l2_loss`].
pub fn mse(y: &Volume, g: &Volume) -> Result<f64> {
    l2_loss(y, g)
}

/// d l1 / d g. The subgradient at `g == y` is taken as 0.
pub fn l1_grad<T: Scalar>(y: &[T], g: &[T]) -> Result<Vec<T>> {
    same_len(y, g)?;
    let inv = T::of(1.0 / y.len() as f64);
    Ok(y.iter()
        .zip(g)
        .map(|(&a, &b)| {
            if b > a {
                inv
            } else if b < a {
                -inv
            } else {
                T::zero()
            }
        })
        .collect())
}

/// d l2 / d g.
pub fn l2_grad<T: Scalar>(y: &[T], g: &[T]) -> Result<Vec<T>> {
    same_len(y, g)?;
    let s = T::of(2.0 / y.len() as f64);
    Ok(y.iter().zip(g).map(|(&a, &b)| s * (b - a)).collect())
}

fn clamp_p(p: f64) -> f64 {
    p.clamp(LOG_EPS, 1.0 - LOG_EPS)
}

fn inside(p: f64) -> bool {
    p > LOG_EPS && p < 1.0 - LOG_EPS
}

fn mean_of<T: Scalar>(xs: &[T], op: impl Fn(f64) -> f64) -> f64 {
    xs.iter().map(|&v| op(f(v))).sum::<f64>() / xs.len() as f64
}

/// `mean log d_real + mean log(1 - d_fake)`. The discriminator maximizes it.
pub fn adv_loss_d<T: Scalar>(d_real: &[T], d_fake: &[T]) -> Result<f64> {
    same_len(d_real, d_fake)?;
    Ok(mean_of(d_real, |p| clamp_p(p).ln()) + mean_of(d_fake, |p| (1.0 - clamp_p(p)).ln()))
}

/// Gradients of `-adv_loss_d` (the quantity the discriminator minimizes)
/// with respect to `d_real` and `d_fake`. Zero where the clamp is active.
pub fn adv_loss_d_grad<T: Scalar>(d_real: &[T], d_fake: &[T]) -> Result<(Vec<T>, Vec<T>)> {
    same_len(d_real, d_fake)?;
    let n = d_real.len() as f64;
    let real = d_real
        .iter()
        .map(|&p| {
            let p = f(p);
            T::of(if inside(p) { -1.0 / (p * n) } else { 0.0 })
        })
        .collect();
    let fake = d_fake
        .iter()
        .map(|&p| {
            let p = f(p);
            T::of(if inside(p) { 1.0 / ((1.0 - p) * n) } else { 0.0 })
        })
        .collect();
    Ok((real, fake))
}

/// The generator's adversarial term.
pub fn adv_loss_g<T: Scalar>(d_fake: &[T], mode: AdvMode) -> Result<f64> {
    if d_fake.is_empty() {
        return Err(Error::Shape("empty patch map".into()));
    }
    Ok(match mode {
        AdvMode::Minimax => mean_of(d_fake, |p| (1.0 - clamp_p(p)).ln()),
        AdvMode::Nonsaturating => mean_of(d_fake, |p| -clamp_p(p).ln()),
    })
}

/// d adv_loss_g / d d_fake.
pub fn adv_loss_g_grad<T: Scalar>(d_fake: &[T], mode: AdvMode) -> Result<Vec<T>> {
    if d_fake.is_empty() {
        return Err(Error::Shape("empty patch map".into()));
    }
    let n = d_fake.len() as f64;
    Ok(d_fake
        .iter()
        .map(|&p| {
            let p = f(p);
            T::of(if !inside(p) {
                0.0
            } else {
                match mode {
                    AdvMode::Minimax => -1.0 / ((1.0 - p) * n),
                    AdvMode::Nonsaturating => -1.0 / (p * n),
                }
            })
        })
        .collect())
}

/// `adv_g + λ · l1`.
pub fn joint_generator_objective(l1: f64, adv_g: f64, weights: LossWeights) -> f64 {
    adv_g + weights.lambda * l1
}

/// Dice overlap `2|P ∩ G| / (|P| + |G|)`; two empty masks score 1.
pub fn dice(pred: &[bool], gt: &[bool]) -> Result<f64> {
    same_len(pred, gt)?;
    let (mut inter, mut p, mut g) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.iter().zip(gt) {
        p += a as usize;
        g += b as usize;
        inter += (a && b) as usize;
    }
    if p + g == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (p + g) as f64)
}

/// Dice of every foreground class `1..num_classes`.
pub fn per_class_dice(pred: &[u8], gt: &[u8], num_classes: usize) -> Result<Vec<f64>> {
    same_len(pred, gt)?;
    if num_classes < 2 {
        return Err(Error::BadLabel(format!(
            "{num_classes} classes leaves no foreground"
        )));
    }
    if let Some(&bad) = pred.iter().chain(gt).find(|&&l| l as usize >= num_classes) {
        return Err(Error::BadLabel(format!(
            "label {bad} with {num_classes} classes"
        )));
    }
    let mut inter = vec![0usize; num_classes];
    let mut p = vec![0usize; num_classes];
    let mut g = vec![0usize; num_classes];
    for (&a, &b) in pred.iter().zip(gt) {
        p[a as usize] += 1;
        g[b as usize] += 1;
        if a == b {
            inter[a as usize] += 1;
        }
    }
    Ok((1..num_classes)
        .map(|k| {
            if p[k] + g[k] == 0 {
                1.0
            } else {
                2.0 * inter[k] as f64 / (p[k] + g[k]) as f64
            }
        })
        .collect())
}

/// Unweighted mean of the foreground per-class dice scores.
pub fn mean_dice(pred: &[u8], gt: &[u8], num_classes: usize) -> Result<f64> {
    let d = per_class_dice(pred, gt, num_classes)?;
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: usize,
    /// Two-sided.
    pub p: f64,
    pub mean_diff: f64,
}

/// Two-sided paired t-test of `a` against `b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    same_len(a, b)?;
    let k = a.len();
    if k < 2 {
        return Err(Error::DegenerateTest(format!("{k} pairs")));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / k as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    if !(var > 0.0) {
        return Err(Error::DegenerateTest("zero variance of differences".into()));
    }
    let t = mean / (var.sqrt() / (k as f64).sqrt());
    let df = k - 1;
    Ok(TTest {
        t,
        df,
        p: student_t_two_sided(t, df as f64),
        mean_diff: mean,
    })
}

/// `P(|T| > |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    incomplete_beta(0.5 * df, 0.5, x).clamp(0.0, 1.0)
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos approximation, g = 7, n = 9.
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
    let mut acc = COEF[0];
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b
    }
}

// Modified Lentz evaluation of the continued fraction for I_x(a, b).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=300 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Voxel-wise softmax cross-entropy of `(N, K, S)` logits against labels in
/// `(N, S)` layout, averaged over the `N * S` voxels. Returns the value and
/// its gradient with respect to the logits.
pub fn cross_entropy<T: Scalar>(logits: &[T], labels: &[u8], num_classes: usize) -> Result<(f64, Vec<T>)> {
    cross_entropy_with(logits, labels, num_classes, labels.len())
}

/// [`cross_entropy`] for a batch whose items each hold `spatial` voxels.
pub fn cross_entropy_with<T: Scalar>(
    logits: &[T],
    labels: &[u8],
    num_classes: usize,
    spatial: usize,
) -> Result<(f64, Vec<T>)> {
    if num_classes == 0
        || labels.is_empty()
        || spatial == 0
        || labels.len() % spatial != 0
        || logits.len() != labels.len() * num_classes
    {
        return Err(Error::Shape(format!(
            "{} logits for {} labels x {num_classes} classes",
            logits.len(),
            labels.len()
        )));
    }
    let inv = 1.0 / labels.len() as f64;
    let mut grad = vec![T::zero(); logits.len()];
    let mut loss = 0.0;
    let mut scores = vec![0.0f64; num_classes];
    for (b, item) in labels.chunks(spatial).enumerate() {
        let base = b * num_classes * spatial;
        for (i, &label) in item.iter().enumerate() {
            let label = label as usize;
            if label >= num_classes {
                return Err(Error::BadLabel(format!("label {label} with {num_classes} classes")));
            }
            let mut hi = f64::NEG_INFINITY;
            for (k, s) in scores.iter_mut().enumerate() {
                *s = f(logits[base + k * spatial + i]);
                hi = hi.max(*s);
            }
            let log_z = hi + scores.iter().map(|s| (s - hi).exp()).sum::<f64>().ln();
            loss += log_z - scores[label];
            for (k, s) in scores.iter().enumerate() {
                let t = if k == label { 1.0 } else { 0.0 };
                grad[base + k * spatial + i] = T::of(((s - log_z).exp() - t) * inv);
            }
        }
    }
    Ok((loss * inv, grad))
}

/// Per-voxel argmax over the class axis of `(N, K, S)` logits.
pub fn argmax_labels<T: Scalar>(logits: &[T], num_classes: usize, spatial: usize) -> Vec<u8> {
    let n = logits.len() / (num_classes * spatial).max(1);
    let mut out = Vec::with_capacity(n * spatial);
    for b in 0..n {
        let base = b * num_classes * spatial;
        for i in 0..spatial {
            let mut best = 0;
            for k in 1..num_classes {
                if logits[base + k * spatial + i] > logits[base + best * spatial + i] {
                    best = k;
                }
            }
            out.push(best as u8);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-12)
    }

    #[test]
    fn reconstruction_fixtures() {
        let y = [0.0f32, 0.0];
        let g = [1.0f32, 3.0];
        assert_eq!(l1(&y, &g).unwrap(), 2.0);
        assert_eq!(l2(&y, &g).unwrap(), 5.0);
        assert_eq!(l1(&g, &g).unwrap(), 0.0);
        assert_eq!(l2(&g, &g).unwrap(), 0.0);
        assert!(matches!(l1(&y, &g[..1]), Err(Error::Shape(_))));
    }

    #[test]
    fn volume_shape_mismatch() {
        let a = Volume::zeros([2, 2, 2], 1);
        let b = Volume::zeros([2, 2, 2], 2);
        assert!(matches!(l1_loss(&a, &b), Err(Error::Shape(_))));
        assert!(matches!(mse(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn shift_raises_l1_by_constant() {
        let mut rng = crate::seed::stream(1, &[]);
        let y: Vec<f64> = (0..50).map(|_| rng.random()).collect();
        let g: Vec<f64> = y.iter().map(|v| v + 0.25).collect();
        assert!(close(l1(&y, &g).unwrap(), 0.25, 1e-12));
        assert!(close(l2(&y, &g).unwrap(), 0.0625, 1e-12));
    }

    #[test]
    fn adversarial_fixtures() {
        let half = [0.5f64; 8];
        assert!((adv_loss_d(&half, &half).unwrap() + 1.386_294).abs() < 1e-5);
        let hi = [1.0 - LOG_EPS; 4];
        let lo = [LOG_EPS; 4];
        assert!(adv_loss_d(&hi, &lo).unwrap().abs() < 1e-6);
        assert!((adv_loss_g(&half, AdvMode::Minimax).unwrap() + 0.693_147).abs() < 1e-5);
        assert!((adv_loss_g(&half, AdvMode::Nonsaturating).unwrap() - 0.693_147).abs() < 1e-5);
        assert!(matches!("hinge".parse::<AdvMode>(), Err(Error::BadMode(_))));
    }

    #[test]
    fn discriminator_objective_peaks_at_perfect_separation() {
        let grid: Vec<f64> = (1..20).map(|i| i as f64 / 20.0).collect();
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        for &r in &grid {
            for &fk in &grid {
                let v = adv_loss_d(&[r; 3], &[fk; 3]).unwrap();
                if v > best.0 {
                    best = (v, r, fk);
                }
            }
        }
        assert_eq!((best.1, best.2), (0.95, 0.05));
    }

    #[test]
    fn adversarial_gradients_match_finite_differences() {
        let mut rng = crate::seed::stream(2, &[]);
        let p: Vec<f64> = (0..6).map(|_| rng.random_range(0.05..0.95)).collect();
        let h = 1e-6;
        for mode in [AdvMode::Minimax, AdvMode::Nonsaturating] {
            let g = adv_loss_g_grad(&p, mode).unwrap();
            for i in 0..p.len() {
                let (mut a, mut b) = (p.clone(), p.clone());
                a[i] += h;
                b[i] -= h;
                let fd = (adv_loss_g(&a, mode).unwrap() - adv_loss_g(&b, mode).unwrap()) / (2.0 * h);
                assert!(close(g[i], fd, 1e-6), "{mode:?} {i}: {} vs {fd}", g[i]);
            }
        }
        let q: Vec<f64> = (0..6).map(|_| rng.random_range(0.05..0.95)).collect();
        let (gr, gf) = adv_loss_d_grad(&p, &q).unwrap();
        for i in 0..p.len() {
            let (mut a, mut b) = (p.clone(), p.clone());
            a[i] += h;
            b[i] -= h;
            let fd = -(adv_loss_d(&a, &q).unwrap() - adv_loss_d(&b, &q).unwrap()) / (2.0 * h);
            assert!(close(gr[i], fd, 1e-6));
            let (mut a, mut b) = (q.clone(), q.clone());
            a[i] += h;
            b[i] -= h;
            let fd = -(adv_loss_d(&p, &a).unwrap() - adv_loss_d(&p, &b).unwrap()) / (2.0 * h);
            assert!(close(gf[i], fd, 1e-6));
        }
    }

    #[test]
    fn reconstruction_gradients() {
        let y = [0.0f64, 1.0, 2.0, 3.0];
        let g = [1.0f64, 1.0, 0.0, 5.0];
        assert_eq!(l1_grad(&y, &g).unwrap(), vec![0.25, 0.0, -0.25, 0.25]);
        assert_eq!(l2_grad(&y, &g).unwrap(), vec![0.5, 0.0, -1.0, 1.0]);
    }

    #[test]
    fn joint_objective() {
        let w = LossWeights::default();
        assert_eq!(w.lambda, 10.0);
        assert_eq!(joint_generator_objective(0.0, 0.0, w), 0.0);
        assert!((joint_generator_objective(0.2, -0.5, w) - 1.5).abs() < 1e-12);
        assert_eq!(joint_generator_objective(0.7, -0.5, LossWeights::new(0.0).unwrap()), -0.5);
        assert!(LossWeights::new(-1.0).is_err());
    }

    #[test]
    fn dice_fixtures() {
        let a = [true, true, false, false];
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &[false, false, true, true]).unwrap(), 0.0);
        let p = [true, true, false, false, false];
        let g = [true, true, true, true, false];
        assert!((dice(&p, &g).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(dice(&[false; 3], &[false; 3]).unwrap(), 1.0);
    }

    #[test]
    fn mean_dice_fixtures() {
        let gt = [0u8, 1, 1, 2, 2, 0];
        assert_eq!(mean_dice(&gt, &gt, 3).unwrap(), 1.0);

        // class 1: P = 5, G = 5, overlap 4 → 0.8; class 2: P = 5, G = 5, overlap 3 → 0.6
        let gt = [1u8, 1, 1, 1, 1, 2, 2, 2, 2, 2, 0, 0];
        let pr = [1u8, 1, 1, 1, 0, 2, 2, 2, 1, 0, 2, 2];
        let per = per_class_dice(&pr, &gt, 3).unwrap();
        assert!((per[0] - 0.8).abs() < 1e-12 && (per[1] - 0.6).abs() < 1e-12);
        assert!((mean_dice(&pr, &gt, 3).unwrap() - 0.7).abs() < 1e-12);

        // class 2 absent on both sides → 1.0
        let gt = [0u8, 1, 1, 0];
        let pr = [0u8, 1, 0, 0];
        let per = per_class_dice(&pr, &gt, 3).unwrap();
        assert_eq!(per[1], 1.0);
        assert!(matches!(mean_dice(&[3u8], &[0u8], 3), Err(Error::BadLabel(_))));
    }

    #[test]
    fn t_test_fixtures() {
        // d = [1,1,1,2]: mean 1.25, sd 0.5, t = 5, df = 3
        let r = paired_t_test(&[2.0, 2.0, 2.0, 3.0], &[1.0; 4]).unwrap();
        assert!((r.t - 5.0).abs() < 1e-12);
        assert_eq!(r.df, 3);
        assert!((r.p - 0.015_392_438).abs() < 1e-8, "{}", r.p);
        // d = [5,5,5,9]: t = 6, df = 3
        let r = paired_t_test(&[5.0, 5.0, 5.0, 9.0], &[0.0; 4]).unwrap();
        assert!((r.t - 6.0).abs() < 1e-12);
        assert!((r.p - 0.009_272_715).abs() < 1e-8, "{}", r.p);
        let swapped = paired_t_test(&[0.0; 4], &[5.0, 5.0, 5.0, 9.0]).unwrap();
        assert_eq!(swapped.p, r.p);
        assert!(matches!(
            paired_t_test(&[1.0, 2.0], &[1.0, 2.0]),
            Err(Error::DegenerateTest(_))
        ));
        assert!(matches!(paired_t_test(&[1.0], &[0.0]), Err(Error::DegenerateTest(_))));
    }

    #[test]
    fn t_statistic_is_scale_invariant() {
        let a = [0.3, 0.9, 0.4, 0.8, 0.55];
        let b = [0.1, 0.2, 0.3, 0.2, 0.5];
        let r1 = paired_t_test(&a, &b).unwrap();
        let a3: Vec<f64> = a.iter().map(|v| v * 3.0).collect();
        let b3: Vec<f64> = b.iter().map(|v| v * 3.0).collect();
        let r3 = paired_t_test(&a3, &b3).unwrap();
        assert!(close(r1.t, r3.t, 1e-12) && close(r1.p, r3.p, 1e-10));
        assert!(r1.p > 0.0 && r1.p <= 1.0);
    }

    #[test]
    fn student_t_matches_statrs() {
        use statrs::distribution::{ContinuousCDF, StudentsT};
        for &df in &[1.0, 2.0, 3.0, 7.0, 30.0] {
            let dist = StudentsT::new(0.0, 1.0, df).unwrap();
            for &t in &[0.0, 0.1, 0.7, 1.5, 2.8, 6.0, 15.0] {
                let want = 2.0 * (1.0 - dist.cdf(t));
                let got = student_t_two_sided(t, df);
                assert!((got - want).abs() < 1e-10, "df {df} t {t}: {got} vs {want}");
            }
        }
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn dice_symmetric_and_bounded(bits in proptest::collection::vec(any::<(bool, bool)>(), 1..64)) {
                let (p, g): (Vec<bool>, Vec<bool>) = bits.into_iter().unzip();
                let a = dice(&p, &g).unwrap();
                prop_assert!((0.0..=1.0).contains(&a));
                prop_assert_eq!(a, dice(&g, &p).unwrap());
                let mut pr: Vec<_> = p.iter().copied().rev().collect();
                let mut gr: Vec<_> = g.iter().copied().rev().collect();
                pr.rotate_left(1);
                gr.rotate_left(1);
                prop_assert_eq!(a, dice(&pr, &gr).unwrap());
            }

            #[test]
            fn reconstruction_losses_symmetric(
                pairs in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..64)
            ) {
                let (y, g): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
                prop_assert_eq!(l1(&y, &g).unwrap(), l1(&g, &y).unwrap());
                prop_assert_eq!(l2(&y, &g).unwrap(), l2(&g, &y).unwrap());
                prop_assert!(l1(&y, &g).unwrap() >= 0.0);
                prop_assert_eq!(l2(&y, &y).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let logits = vec![0.0f64; 3 * 4];
        let labels = [0u8, 1, 2, 1];
        let (v, _) = cross_entropy(&logits, &labels, 3).unwrap();
        assert!(close(v, 3f64.ln(), 1e-12));
        assert!(matches!(cross_entropy(&logits, &[0, 1, 3, 0], 3), Err(Error::BadLabel(_))));
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = crate::seed::stream(41, &[]);
        let (k, sp) = (3, 5);
        let logits: Vec<f64> = (0..2 * k * sp).map(|_| rng.random_range(-2.0..2.0)).collect();
        let labels: Vec<u8> = (0..2 * sp).map(|_| rng.random_range(0..k as u8)).collect();
        let (_, g) = cross_entropy_with(&logits, &labels, k, sp).unwrap();
        let h = 1e-6;
        for i in 0..logits.len() {
            let (mut lp, mut lm) = (logits.clone(), logits.clone());
            lp[i] += h;
            lm[i] -= h;
            let fd = (cross_entropy_with(&lp, &labels, k, sp).unwrap().0
                - cross_entropy_with(&lm, &labels, k, sp).unwrap().0)
                / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7);
        }
        let pred = argmax_labels(&logits, k, sp);
        assert_eq!(pred.len(), labels.len());
    }
}
