//! Task losses and the quantities that blend them.
//!
//! Two task losses (score regression, five-way classification) are combined
//! by three cooperating mechanisms:
//!
//! - [`balance_coeffs`]: coefficients from the two tasks' gradient norms;
//!   each task is weighted by the *other* task's norm share, so the larger
//!   gradient is damped,
//! - [`imbalance_loss`]: classification loss reweighted per batch by class
//!   frequency (`v_k = p_k^(-beta)`) plus a rarity regularizer
//!   (`-alpha * log p_k`), with learnable `alpha` and `beta` updated through
//!   their analytic gradients ([`alpha_grad`], [`beta_grad`]),
//! - a total loss `lambda_r*w_r*L_r + lambda_c*w_c*L_imb` where the `w` pair
//!   comes from the small softmax network in [`crate::dao`].

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Tape, Var};
use crate::math;
use crate::tensor::Tensor;

/// Number of sentiment classes produced by the score partition.
pub const NUM_CLASSES: usize = 5;

/// Map a score in `[-1, 1]` to its sentiment class:
/// strong-negative `0` below `-0.5`, negative `1` up to (excluding) `-0.049`,
/// neutral `2` through `0.049`, positive `3` through `0.5`, strong-positive
/// `4` above.
pub fn score_to_class(y: f64) -> Result<usize> {
    if y.is_nan() {
        return Err(Error::Domain("score is NaN".into()));
    }
    Ok(if y > 0.5 {
        4
    } else if y > 0.049 {
        3
    } else if y >= -0.049 {
        2
    } else if y >= -0.5 {
        1
    } else {
        0
    })
}

/// Mean squared error between a 1-D prediction vector and targets.
pub fn mse_loss(tape: &Tape, pred: &Var, target: &[f64]) -> Result<Var> {
    let pv = pred.value();
    if pv.ndim() != 1 || pv.len() != target.len() {
        return Err(Error::Shape {
            op: "mse_loss",
            lhs: pv.shape().to_vec(),
            rhs: alloc::vec![target.len()],
        });
    }
    if !pv.is_finite() || target.iter().any(|t| !t.is_finite()) {
        return Err(Error::Numeric("mse over non-finite values".into()));
    }
    let t = tape.leaf(Tensor::from_vec(target.to_vec())?);
    let diff = pred.sub(&t)?;
    Ok(diff.mul(&diff)?.mean())
}

/// Batch label census: per-class counts and shares.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassStats {
    counts: [usize; NUM_CLASSES],
    total: usize,
}

impl ClassStats {
    pub fn count(&self, k: usize) -> usize {
        self.counts[k]
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// `p_k`, the fraction of the batch in class `k`.
    pub fn share(&self, k: usize) -> f64 {
        self.counts[k] as f64 / self.total as f64
    }

    /// Classes with at least one sample, ascending.
    pub fn present(&self) -> impl Iterator<Item = usize> + '_ {
        (0..NUM_CLASSES).filter(|&k| self.counts[k] > 0)
    }
}

/// Count labels of a non-empty batch.
pub fn class_stats(labels: &[usize]) -> Result<ClassStats> {
    if labels.is_empty() {
        return Err(Error::Contract("class stats of an empty batch".into()));
    }
    let mut counts = [0usize; NUM_CLASSES];
    for &z in labels {
        if z >= NUM_CLASSES {
            return Err(Error::Contract(format!(
                "label {z} out of range for {NUM_CLASSES} classes"
            )));
        }
        counts[z] += 1;
    }
    Ok(ClassStats {
        counts,
        total: labels.len(),
    })
}

/// Inverse-frequency class weights `v_k = p_k^(-beta)` for present classes
/// (absent classes get 0). `beta = 0` disables reweighting.
pub fn class_weights(stats: &ClassStats, beta: f64) -> [f64; NUM_CLASSES] {
    let mut v = [0.0; NUM_CLASSES];
    for k in stats.present() {
        v[k] = math::powf(stats.share(k), -beta);
    }
    v
}

/// Per-sample cross entropy reduced two ways: the batch mean and the mean
/// within each present class.
pub struct PerClassLoss {
    /// Mean cross entropy over the whole batch.
    pub mean: Var,
    /// Mean cross entropy over each class's samples; `None` for absent
    /// classes.
    pub per_class: [Option<Var>; NUM_CLASSES],
}

/// Cross entropy of `(n, 5)` logits against labels, with per-class means.
pub fn cross_entropy_per_class(logits: &Var, labels: &[usize]) -> Result<PerClassLoss> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[1] != NUM_CLASSES {
        return Err(Error::Shape {
            op: "cross_entropy_per_class",
            lhs: shape,
            rhs: alloc::vec![labels.len(), NUM_CLASSES],
        });
    }
    let rows = logits.cross_entropy_rows(labels)?;
    let mean = rows.mean();
    let mut per_class: [Option<Var>; NUM_CLASSES] = [None, None, None, None, None];
    for (k, slot) in per_class.iter_mut().enumerate() {
        let idx: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &z)| z == k)
            .map(|(i, _)| i)
            .collect();
        if !idx.is_empty() {
            *slot = Some(rows.gather(&idx)?.mean());
        }
    }
    Ok(PerClassLoss { mean, per_class })
}

/// Imbalance-aware classification loss over present classes:
/// `sum_k v_k * (p_k * L_ck - alpha * log p_k)`.
///
/// Differentiable through the per-class losses; `alpha` and `beta` enter as
/// values here and are trained through their analytic gradients instead.
pub fn imbalance_loss(
    l_ck: &[Option<Var>; NUM_CLASSES],
    stats: &ClassStats,
    alpha: f64,
    beta: f64,
) -> Result<Var> {
    if !(alpha >= 0.0) || !(beta >= 0.0) {
        return Err(Error::Config(format!(
            "imbalance loss needs alpha >= 0 and beta >= 0, got {alpha}, {beta}"
        )));
    }
    let weights = class_weights(stats, beta);
    let mut acc: Option<Var> = None;
    for k in stats.present() {
        let l = l_ck[k].as_ref().ok_or_else(|| {
            Error::Contract(format!("missing per-class loss for present class {k}"))
        })?;
        let p = stats.share(k);
        let term = l
            .scale(weights[k] * p)
            .add_scalar(-(weights[k] * alpha * math::ln(p)));
        acc = Some(match acc {
            Some(a) => a.add(&term)?,
            None => term,
        });
    }
    acc.ok_or_else(|| Error::Contract("no present classes".into()))
}

/// Value-level twin of [`imbalance_loss`] for oracles and the analytic
/// gradient checks; `l_ck` entries for absent classes are ignored.
pub fn imbalance_loss_value(
    l_ck: &[f64; NUM_CLASSES],
    stats: &ClassStats,
    alpha: f64,
    beta: f64,
) -> f64 {
    let weights = class_weights(stats, beta);
    let mut total = 0.0;
    for k in stats.present() {
        let p = stats.share(k);
        total += weights[k] * (p * l_ck[k] - alpha * math::ln(p));
    }
    total
}

/// Gradient-norm balancing coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalanceCoeffs {
    pub lambda_r: f64,
    pub lambda_c: f64,
    /// Both norms were (numerically) zero, so the coefficients fell back to
    /// an even split.
    pub degenerate: bool,
}

/// `lambda_r = |g_c| / (|g_r| + |g_c|)` and symmetrically for `lambda_c`:
/// each task is scaled by the other's share so the louder gradient is damped.
/// The coefficients are treated as constants by differentiation.
pub fn balance_coeffs(norm_r: f64, norm_c: f64) -> Result<BalanceCoeffs> {
    if !norm_r.is_finite() || !norm_c.is_finite() {
        return Err(Error::Numeric(format!(
            "gradient norms must be finite, got {norm_r}, {norm_c}"
        )));
    }
    if norm_r < 0.0 || norm_c < 0.0 {
        return Err(Error::Contract(format!(
            "gradient norms must be non-negative, got {norm_r}, {norm_c}"
        )));
    }
    let total = norm_r + norm_c;
    if total < 1e-12 {
        return Ok(BalanceCoeffs {
            lambda_r: 0.5,
            lambda_c: 0.5,
            degenerate: true,
        });
    }
    Ok(BalanceCoeffs {
        lambda_r: norm_c / total,
        lambda_c: norm_r / total,
        degenerate: false,
    })
}

/// Total training loss given both balance levels.
pub fn total_loss(
    lambda_r: f64,
    lambda_c: f64,
    w_r: f64,
    w_c: f64,
    l_r: f64,
    l_imb: f64,
) -> f64 {
    lambda_r * w_r * l_r + lambda_c * w_c * l_imb
}

/// Graph twin of [`total_loss`] with the task weights as graph scalars, so
/// the weight network trains through it.
pub fn combine_weighted(
    l_r: &Var,
    l_imb: &Var,
    lambda_r: f64,
    lambda_c: f64,
    w_r: &Var,
    w_c: &Var,
) -> Result<Var> {
    let reg = w_r.mul(l_r)?.scale(lambda_r);
    let cls = w_c.mul(l_imb)?.scale(lambda_c);
    reg.add(&cls)
}

/// Analytic `d(total)/d(alpha) = -lambda_c * w_c * sum_k v_k * log p_k`.
pub fn alpha_grad(
    lambda_c: f64,
    w_c: f64,
    weights: &[f64; NUM_CLASSES],
    stats: &ClassStats,
) -> f64 {
    let mut sum = 0.0;
    for k in stats.present() {
        sum += weights[k] * math::ln(stats.share(k));
    }
    -lambda_c * w_c * sum
}

/// Analytic `d(total)/d(beta)`. Only `v_k = p_k^(-beta)` depends on `beta`,
/// with `dv_k/dbeta = -log(p_k) * p_k^(-beta)`, so
/// `d(total)/d(beta) = lambda_c * w_c * sum_k (-log p_k) * p_k^(-beta) *
/// (p_k * L_ck - alpha * log p_k)`.
pub fn beta_grad(
    lambda_c: f64,
    w_c: f64,
    stats: &ClassStats,
    l_ck: &[f64; NUM_CLASSES],
    alpha: f64,
    beta: f64,
) -> f64 {
    let mut sum = 0.0;
    for k in stats.present() {
        let p = stats.share(k);
        let lp = math::ln(p);
        sum += -lp * math::powf(p, -beta) * (p * l_ck[k] - alpha * lp);
    }
    lambda_c * w_c * sum
}
