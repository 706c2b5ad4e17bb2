//! Training losses and their gradients with respect to logits.
//!
//! * closed-set cross-entropy over the closed head,
//! * one-vs-all loss on the positive head plus the hardest negative head,
//! * open-set entropy: mean binary entropy of all one-vs-all heads,
//!
//! and the combined objective `mean_src[cls + ova] + λ · mean_tgt[ent]`.
//!
//! One-vs-all gradients are taken through each head's two-way softmax:
//! for a head with known-probability `p`, `∂p/∂z_known = p(1-p)` and
//! `∂p/∂z_unknown = -p(1-p)`. Probabilities arrive clamped, and a clamped
//! probability contributes no gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{backward, ForwardResult, ModelParams};
use crate::numerics::{is_unclamped, Matrix};

/// A loss value with its gradient with respect to the logits that
/// produced it.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub value: f64,
    pub grad: Matrix,
    /// Hard negative chosen for each sample (one-vs-all loss only).
    pub hard_negatives: Option<Vec<usize>>,
}

impl LossValue {
    /// Hard negative of the first (for per-sample losses, the only) row.
    pub fn hard_negative_index(&self) -> Option<usize> {
        self.hard_negatives.as_ref().and_then(|v| v.first().copied())
    }
}

/// Which negative heads a labelled sample trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeSampling {
    /// The single negative head with the highest known-probability.
    #[default]
    Hardest,
    /// Every negative head, averaged. Only used for ablations.
    All,
}

/// How the per-head entropies of one target sample are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyReduction {
    #[default]
    Mean,
    Sum,
}

/// `(∂/∂z_known, ∂/∂z_unknown)` of a loss term `g(p)` given `g'(p)`.
#[inline]
fn through_two_way(p: f64, dg_dp: f64) -> (f64, f64) {
    if !is_unclamped(p) {
        return (0.0, 0.0);
    }
    let s = dg_dp * p * (1.0 - p);
    (s, -s)
}

#[inline]
pub fn binary_entropy(p: f64) -> f64 {
    -p * p.ln() - (1.0 - p) * (1.0 - p).ln()
}

pub fn closed_loss(closed_logits: &Matrix, labels: &[usize]) -> Result<LossValue> {
    let (batch, k) = closed_logits.shape();
    if batch == 0 {
        return Err(Error::invalid("closed loss on an empty batch"));
    }
    if labels.len() != batch {
        return Err(Error::invalid("label count does not match batch size"));
    }
    let inv = 1.0 / batch as f64;
    let mut grad = Matrix::zeros(batch, k);
    let mut total = 0.0;
    for (i, (row, &y)) in closed_logits.row_iter().zip(labels).enumerate() {
        if y >= k {
            return Err(Error::invalid(format!("label {y} out of range for {k} classes")));
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - row[y];
        let g = grad.row_mut(i);
        for (j, v) in row.iter().enumerate() {
            g[j] = (v - lse).exp() * inv;
        }
        g[y] -= inv;
    }
    Ok(LossValue {
        value: total * inv,
        grad,
        hard_negatives: None,
    })
}

/// Index of the negative head with the largest known-probability; ties go
/// to the lowest index.
pub fn hardest_negative(probs: &[f64], label: usize) -> usize {
    let mut best: Option<usize> = None;
    for (j, &p) in probs.iter().enumerate() {
        if j == label {
            continue;
        }
        match best {
            Some(b) if probs[b] >= p => {}
            _ => best = Some(j),
        }
    }
    best.expect("at least two heads")
}

/// One-vs-all loss of a single sample. The returned gradient is `1 × 2|L_s|`.
pub fn ova_loss(probs: &[f64], label: usize, negatives: NegativeSampling) -> Result<LossValue> {
    let k = probs.len();
    if k < 2 {
        return Err(Error::UnsupportedConfiguration(
            "one-vs-all loss needs at least two known classes".into(),
        ));
    }
    if label >= k {
        return Err(Error::invalid(format!("label {label} out of range for {k} classes")));
    }
    let mut grad = Matrix::zeros(1, 2 * k);
    let g = grad.row_mut(0);

    let pos = probs[label];
    let mut value = -pos.ln();
    let (a, b) = through_two_way(pos, -1.0 / pos);
    g[2 * label] = a;
    g[2 * label + 1] = b;

    let mut push_negative = |j: usize, weight: f64| -> f64 {
        let p = probs[j];
        let (a, b) = through_two_way(p, weight / (1.0 - p));
        g[2 * j] += a;
        g[2 * j + 1] += b;
        -weight * (1.0 - p).ln()
    };

    let hard = match negatives {
        NegativeSampling::Hardest => {
            let j = hardest_negative(probs, label);
            value += push_negative(j, 1.0);
            Some(vec![j])
        }
        NegativeSampling::All => {
            let w = 1.0 / (k - 1) as f64;
            for j in (0..k).filter(|&j| j != label) {
                value += push_negative(j, w);
            }
            None
        }
    };
    Ok(LossValue {
        value,
        grad,
        hard_negatives: hard,
    })
}

/// Positive head plus the hardest negative head.
pub fn ova_loss_hncs(probs: &[f64], label: usize) -> Result<LossValue> {
    ova_loss(probs, label, NegativeSampling::Hardest)
}

/// Open-set entropy of a single target sample; gradient is `1 × 2|L_s|`.
pub fn oem_loss(probs: &[f64]) -> Result<LossValue> {
    oem_loss_with(probs, EntropyReduction::Mean)
}

pub fn oem_loss_with(probs: &[f64], reduction: EntropyReduction) -> Result<LossValue> {
    let k = probs.len();
    if k == 0 {
        return Err(Error::invalid("entropy of an empty probability vector"));
    }
    let w = match reduction {
        EntropyReduction::Mean => 1.0 / k as f64,
        EntropyReduction::Sum => 1.0,
    };
    let mut grad = Matrix::zeros(1, 2 * k);
    let g = grad.row_mut(0);
    let mut value = 0.0;
    for (j, &p) in probs.iter().enumerate() {
        value += w * binary_entropy(p);
        let (a, b) = through_two_way(p, w * ((1.0 - p).ln() - p.ln()));
        g[2 * j] = a;
        g[2 * j + 1] = b;
    }
    Ok(LossValue {
        value,
        grad,
        hard_negatives: None,
    })
}

fn stack_rows(batch: usize, width: usize, rows: impl Iterator<Item = Result<LossValue>>, scale: f64) -> Result<(f64, Matrix, Vec<Option<usize>>)> {
    let mut grad = Matrix::zeros(batch, width);
    let mut value = 0.0;
    let mut hard = Vec::with_capacity(batch);
    for (i, r) in rows.enumerate() {
        let r = r?;
        value += r.value;
        for (d, s) in grad.row_mut(i).iter_mut().zip(r.grad.row(0)) {
            *d = s * scale;
        }
        hard.push(r.hard_negative_index());
    }
    Ok((value * scale, grad, hard))
}

/// Batch-mean one-vs-all loss over the rows of `ova_known_prob`.
pub fn ova_loss_batch(ova_known_prob: &Matrix, labels: &[usize], negatives: NegativeSampling) -> Result<LossValue> {
    let (batch, k) = ova_known_prob.shape();
    if batch == 0 || labels.len() != batch {
        return Err(Error::invalid("one-vs-all loss needs a non-empty batch with one label per row"));
    }
    let rows = ova_known_prob
        .row_iter()
        .zip(labels)
        .map(|(p, &y)| ova_loss(p, y, negatives));
    let (value, grad, hard) = stack_rows(batch, 2 * k, rows, 1.0 / batch as f64)?;
    let hard_negatives = match negatives {
        NegativeSampling::Hardest => Some(hard.into_iter().map(|h| h.expect("hard negative")).collect()),
        NegativeSampling::All => None,
    };
    Ok(LossValue {
        value,
        grad,
        hard_negatives,
    })
}

/// Batch-mean open-set entropy.
pub fn oem_loss_batch(ova_known_prob: &Matrix, reduction: EntropyReduction) -> Result<LossValue> {
    let (batch, k) = ova_known_prob.shape();
    if batch == 0 {
        return Err(Error::invalid("entropy loss on an empty batch"));
    }
    let rows = ova_known_prob.row_iter().map(|p| oem_loss_with(p, reduction));
    let (value, grad, _) = stack_rows(batch, 2 * k, rows, 1.0 / batch as f64)?;
    Ok(LossValue {
        value,
        grad,
        hard_negatives: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub lambda: f64,
    pub negatives: NegativeSampling,
    pub oem_enabled: bool,
    pub entropy_reduction: EntropyReduction,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            negatives: NegativeSampling::Hardest,
            oem_enabled: true,
            entropy_reduction: EntropyReduction::Mean,
        }
    }
}

impl ObjectiveConfig {
    /// Weight actually applied to the entropy term.
    pub fn entropy_weight(&self) -> f64 {
        if self.oem_enabled {
            self.lambda
        } else {
            0.0
        }
    }
}

/// The combined objective. `ent` is always evaluated (for logging) but only
/// weighted into `total` and the gradient when OEM is enabled.
#[derive(Debug, Clone)]
pub struct Objective {
    pub total: f64,
    pub cls: LossValue,
    pub ova: LossValue,
    pub ent: LossValue,
    pub entropy_weight: f64,
}

pub fn total_objective(
    src: &ForwardResult,
    src_labels: &[usize],
    tgt: &ForwardResult,
    cfg: &ObjectiveConfig,
) -> Result<Objective> {
    if !(cfg.lambda >= 0.0) || !cfg.lambda.is_finite() {
        return Err(Error::invalid("lambda must be finite and non-negative"));
    }
    if src.batch_size() == 0 || tgt.batch_size() == 0 {
        return Err(Error::invalid("objective needs non-empty source and target batches"));
    }
    let cls = closed_loss(&src.closed_logits, src_labels)?;
    let ova = ova_loss_batch(&src.ova_known_prob, src_labels, cfg.negatives)?;
    let ent = oem_loss_batch(&tgt.ova_known_prob, cfg.entropy_reduction)?;
    let entropy_weight = cfg.entropy_weight();
    Ok(Objective {
        total: cls.value + ova.value + entropy_weight * ent.value,
        cls,
        ova,
        ent,
        entropy_weight,
    })
}

impl Objective {
    /// Parameter gradient of `total`, accumulated from the source pass
    /// (closed + one-vs-all) and the weighted target entropy pass.
    pub fn param_grad(&self, params: &ModelParams, src: &ForwardResult, tgt: &ForwardResult) -> Result<ModelParams> {
        let mut grad = backward(params, src, &self.cls.grad, &self.ova.grad)?;
        if self.entropy_weight != 0.0 {
            let mut d_ova = self.ent.grad.clone();
            d_ova.scale(self.entropy_weight);
            let d_closed = Matrix::zeros(tgt.batch_size(), params.num_known_classes());
            let tgt_grad = backward(params, tgt, &d_closed, &d_ova)?;
            grad.zip_apply(&tgt_grad, |_, g, t| *g += t);
        }
        Ok(grad)
    }
}
