//! Inference, open-set metrics and anomaly-score utilities.
//!
//! A sample is assigned the closed head's argmax class, then kept as known
//! if that class's one-vs-all head gives a known-probability of at least the
//! threshold (0.5 by default, where the head's two outputs are equal), and
//! labelled unknown otherwise.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward, ForwardResult, ModelParams};
use crate::numerics::{softmax, Matrix};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionOutcome {
    pub closed_argmax: usize,
    /// Known-probability of the argmax class's one-vs-all head.
    pub known_prob: f64,
    /// `closed_argmax`, or the unknown sentinel `|L_s|`.
    pub final_label: usize,
    pub anomaly_score: f64,
}

/// First index of the maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!("threshold {threshold} not in (0, 1)")));
    }
    Ok(())
}

pub fn predict(params: &ModelParams, x: &Matrix, threshold: f64) -> Result<Vec<PredictionOutcome>> {
    let fwd = forward(params, x)?;
    predict_from_forward(&fwd, threshold)
}

pub fn predict_from_forward(fwd: &ForwardResult, threshold: f64) -> Result<Vec<PredictionOutcome>> {
    check_threshold(threshold)?;
    let unknown = fwd.ova_known_prob.cols();
    Ok(fwd
        .closed_logits
        .row_iter()
        .zip(fwd.ova_known_prob.row_iter())
        .map(|(logits, probs)| {
            let c = argmax(logits);
            let known_prob = probs[c];
            PredictionOutcome {
                closed_argmax: c,
                known_prob,
                final_label: if known_prob >= threshold { c } else { unknown },
                anomaly_score: 1.0 - known_prob,
            }
        })
        .collect())
}

/// Harmonic mean of known accuracy and unknown accuracy; zero when both are.
pub fn h_score(acc_c: f64, acc_t: f64) -> f64 {
    let s = acc_c + acc_t;
    // the general formula can be off by an ulp when both arguments agree
    if acc_c == acc_t {
        acc_c
    } else if s == 0.0 {
        0.0
    } else {
        2.0 * acc_c * acc_t / s
    }
}

/// Area under the ROC curve with unknown as the positive class.
///
/// Computed as the Mann–Whitney statistic from mid-ranks: the fraction of
/// (unknown, known) pairs in which the unknown sample scores strictly
/// higher, with ties counted as one half.
pub fn auroc(scores: &[f64], is_unknown: &[bool]) -> Result<f64> {
    if scores.len() != is_unknown.len() {
        return Err(Error::invalid("scores and flags differ in length"));
    }
    let n_pos = is_unknown.iter().filter(|&&u| u).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUROC needs at least one known and one unknown sample".into(),
        ));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("NaN score"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum of (1-based) mid-ranks of the positives
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_group = order[i..=j].iter().filter(|&&k| is_unknown[k]).count();
        pos_rank_sum += mid * pos_in_group as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    let u = pos_rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// `1 − max softmax`.
    Softmax,
    /// Closed-head entropy divided by `ln |L_s|`.
    Entropy,
}

/// Anomaly scores derived from the closed head alone.
pub fn baseline_scores(closed_logits: &Matrix, kind: BaselineKind) -> Result<Vec<f64>> {
    let k = closed_logits.cols();
    closed_logits
        .row_iter()
        .map(|row| {
            let p = softmax(row)?;
            Ok(match kind {
                BaselineKind::Softmax => 1.0 - p.iter().copied().fold(0.0, f64::max),
                BaselineKind::Entropy => {
                    if k < 2 {
                        0.0
                    } else {
                        let h: f64 = p.iter().filter(|&&q| q > 0.0).map(|&q| -q * q.ln()).sum();
                        h / (k as f64).ln()
                    }
                }
            })
        })
        .collect()
}

/// Reference rejector that ignores the learned boundary: the `quantile`
/// fraction of samples with the highest anomaly scores is labelled unknown
/// (ties broken by sample order), everything else keeps its closed label.
pub fn fixed_ratio_rejection(preds: &[PredictionOutcome], quantile: f64, unknown_label: usize) -> Result<Vec<PredictionOutcome>> {
    if !(0.0..=1.0).contains(&quantile) {
        return Err(Error::invalid("rejection quantile must lie in [0, 1]"));
    }
    let n_reject = (quantile * preds.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].anomaly_score.total_cmp(&preds[a].anomaly_score));
    let mut out: Vec<PredictionOutcome> = preds
        .iter()
        .map(|p| PredictionOutcome {
            final_label: p.closed_argmax,
            ..*p
        })
        .collect();
    for &i in &order[..n_reject] {
        out[i].final_label = unknown_label;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassStat {
    /// Evaluation label; `num_known` is the unknown row.
    pub label: usize,
    pub total: usize,
    pub correct: usize,
}

/// Metrics over a labelled target set. Metrics that have no samples to be
/// computed on are `None` and serialize as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub h_score: Option<f64>,
    pub acc_c: Option<f64>,
    pub unk_accuracy: Option<f64>,
    pub acc_close: Option<f64>,
    pub overall_acc: f64,
    pub auroc: Option<f64>,
    pub n_known: usize,
    pub n_unknown: usize,
    #[serde(skip)]
    pub per_class: Vec<ClassStat>,
}

const METRIC_COLUMNS: [&str; 8] = [
    "h_score",
    "acc_c",
    "unk_accuracy",
    "acc_close",
    "overall_acc",
    "auroc",
    "n_known",
    "n_unknown",
];

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsReport {
    pub fn csv_header() -> &'static [&'static str] {
        &METRIC_COLUMNS
    }

    /// Cells in [`csv_header`](Self::csv_header) order; undefined metrics
    /// are empty cells.
    pub fn csv_cells(&self) -> Vec<String> {
        vec![
            opt_cell(self.h_score),
            opt_cell(self.acc_c),
            opt_cell(self.unk_accuracy),
            opt_cell(self.acc_close),
            self.overall_acc.to_string(),
            opt_cell(self.auroc),
            self.n_known.to_string(),
            self.n_unknown.to_string(),
        ]
    }

    /// Flat JSON object of the scalar metrics.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct serializes")
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(Self::csv_header()).map_err(io_err)?;
        wr.write_record(self.csv_cells()).map_err(io_err)?;
        wr.flush()?;
        Ok(())
    }

    pub fn write_per_class_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["label", "total", "correct", "accuracy"]).map_err(io_err)?;
        for c in &self.per_class {
            let acc = if c.total == 0 {
                String::new()
            } else {
                (c.correct as f64 / c.total as f64).to_string()
            };
            wr.write_record([c.label.to_string(), c.total.to_string(), c.correct.to_string(), acc])
                .map_err(io_err)?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn io_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// `labels` are evaluation labels: a known index or `num_known` for
/// unknown.
pub fn compute_metrics(preds: &[PredictionOutcome], labels: &[usize], num_known: usize) -> Result<MetricsReport> {
    if preds.len() != labels.len() {
        return Err(Error::invalid("predictions and labels differ in length"));
    }
    if preds.is_empty() {
        return Err(Error::invalid("no predictions to evaluate"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > num_known) {
        return Err(Error::invalid(format!("evaluation label {bad} exceeds the unknown sentinel {num_known}")));
    }
    let mut per_class: Vec<ClassStat> = (0..=num_known)
        .map(|label| ClassStat {
            label,
            total: 0,
            correct: 0,
        })
        .collect();
    let (mut known_correct, mut close_correct, mut unk_correct, mut all_correct) = (0, 0, 0, 0);
    for (p, &y) in preds.iter().zip(labels) {
        let hit = p.final_label == y;
        per_class[y].total += 1;
        per_class[y].correct += hit as usize;
        all_correct += hit as usize;
        if y == num_known {
            unk_correct += hit as usize;
        } else {
            known_correct += hit as usize;
            close_correct += (p.closed_argmax == y) as usize;
        }
    }
    let n_unknown = per_class[num_known].total;
    let n_known = preds.len() - n_unknown;

    let acc_c = ratio(known_correct, n_known);
    let unk_accuracy = ratio(unk_correct, n_unknown);
    let h = match (acc_c, unk_accuracy) {
        (Some(a), Some(b)) => Some(h_score(a, b)),
        _ => None,
    };
    let auroc = if n_known > 0 && n_unknown > 0 {
        let scores: Vec<f64> = preds.iter().map(|p| p.anomaly_score).collect();
        let flags: Vec<bool> = labels.iter().map(|&l| l == num_known).collect();
        Some(auroc(&scores, &flags)?)
    } else {
        None
    };
    Ok(MetricsReport {
        h_score: h,
        acc_c,
        unk_accuracy,
        acc_close: ratio(close_correct, n_known),
        overall_acc: all_correct as f64 / preds.len() as f64,
        auroc,
        n_known,
        n_unknown,
        per_class,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_low: f64,
    pub bin_high: f64,
    pub known: usize,
    pub unknown: usize,
}

/// Histogram of anomaly scores over `[0, 1]`, split by ground truth.
///
/// `[0, 0.5]` and `[0.5, 1]` are each cut into equal-width bins
/// (`n_bins / 2` below, the rest above), so 0.5 is always an edge; for
/// even `n_bins` all bins share one width. Bins are closed on the right and
/// the first bin also includes 0, so an anomaly of exactly 0.5 (which the
/// default threshold keeps as known) lands below the line.
pub fn anomaly_histogram(scores: &[f64], is_unknown: &[bool], n_bins: usize) -> Result<Vec<HistogramBin>> {
    if n_bins < 2 {
        return Err(Error::invalid("histogram needs at least two bins"));
    }
    if scores.len() != is_unknown.len() {
        return Err(Error::invalid("scores and flags differ in length"));
    }
    let lower = n_bins / 2;
    let upper = n_bins - lower;
    let mut edges: Vec<f64> = (0..=lower).map(|i| 0.5 * i as f64 / lower as f64).collect();
    edges.extend((1..=upper).map(|i| 0.5 + 0.5 * i as f64 / upper as f64));
    let mut bins: Vec<HistogramBin> = edges
        .windows(2)
        .map(|w| HistogramBin {
            bin_low: w[0],
            bin_high: w[1],
            known: 0,
            unknown: 0,
        })
        .collect();
    for (&s, &u) in scores.iter().zip(is_unknown) {
        let s = s.clamp(0.0, 1.0);
        let idx = bins.iter().position(|b| s <= b.bin_high).unwrap_or(n_bins - 1);
        if u {
            bins[idx].unknown += 1;
        } else {
            bins[idx].known += 1;
        }
    }
    Ok(bins)
}

pub fn emit_histogram(preds: &[PredictionOutcome], labels: &[usize], num_known: usize, n_bins: usize) -> Result<Vec<HistogramBin>> {
    if preds.len() != labels.len() {
        return Err(Error::invalid("predictions and labels differ in length"));
    }
    let scores: Vec<f64> = preds.iter().map(|p| p.anomaly_score).collect();
    let flags: Vec<bool> = labels.iter().map(|&l| l == num_known).collect();
    anomaly_histogram(&scores, &flags, n_bins)
}

/// CSV with columns `bin_low,bin_high,known,unknown`.
pub fn write_histogram_csv<W: Write>(bins: &[HistogramBin], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["bin_low", "bin_high", "known", "unknown"]).map_err(io_err)?;
    for b in bins {
        wr.write_record([b.bin_low.to_string(), b.bin_high.to_string(), b.known.to_string(), b.unknown.to_string()])
            .map_err(io_err)?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ModelSpec};
    use crate::numerics::Rng;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn outcome(c: usize, known_prob: f64, unknown: usize) -> PredictionOutcome {
        PredictionOutcome {
            closed_argmax: c,
            known_prob,
            final_label: if known_prob >= 0.5 { c } else { unknown },
            anomaly_score: 1.0 - known_prob,
        }
    }

    fn brute_auroc(scores: &[f64], unk: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if unk[i] && !unk[j] {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn zero_head_keeps_argmax() {
        let spec = ModelSpec {
            input_dim: 3,
            hidden_dims: vec![],
            feature_dim: 3,
            num_known_classes: 3,
            init_scale: 1.0,
        };
        let p = init_model(&spec, &mut Rng::new(0)).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 0.0, -2.0]]).unwrap();
        let out = predict(&p, &x, DEFAULT_THRESHOLD).unwrap();
        assert_eq!(out[0].known_prob, 0.5);
        assert_eq!(out[0].final_label, out[0].closed_argmax);
        assert_eq!(out[0].anomaly_score, 0.5);
    }

    #[test]
    fn confident_known() {
        let o = outcome(1, 0.9, 3);
        assert_eq!(o.final_label, 1);
        assert_abs_diff_eq!(o.anomaly_score, 0.1, epsilon = 1e-15);
    }

    #[test]
    fn predict_matches_raw_logit_rederivation() {
        let spec = ModelSpec {
            input_dim: 4,
            hidden_dims: vec![5],
            feature_dim: 3,
            num_known_classes: 4,
            init_scale: 1.0,
        };
        let mut rng = Rng::new(12);
        let mut p = init_model(&spec, &mut rng).unwrap();
        for (_, s) in p.slices_mut() {
            for v in s {
                *v = rng.uniform(-2.0, 2.0);
            }
        }
        let x = Matrix::from_vec(30, 4, (0..120).map(|_| rng.normal()).collect()).unwrap();
        let fwd = forward(&p, &x).unwrap();
        let out = predict(&p, &x, 0.5).unwrap();
        for (i, o) in out.iter().enumerate() {
            let logits = fwd.closed_logits.row(i);
            let c = (0..4).fold(0, |b, j| if logits[j] > logits[b] { j } else { b });
            let z = [fwd.ova_logits[(i, 2 * c)], fwd.ova_logits[(i, 2 * c + 1)]];
            let keep = z[0] >= z[1];
            assert_eq!(o.final_label, if keep { c } else { 4 });
        }
    }

    #[test]
    fn raising_threshold_never_accepts_more() {
        let spec = ModelSpec {
            input_dim: 3,
            hidden_dims: vec![4],
            feature_dim: 3,
            num_known_classes: 3,
            init_scale: 1.0,
        };
        let mut rng = Rng::new(77);
        let mut p = init_model(&spec, &mut rng).unwrap();
        for (_, s) in p.slices_mut() {
            for v in s {
                *v = rng.uniform(-2.0, 2.0);
            }
        }
        let x = Matrix::from_vec(200, 3, (0..600).map(|_| rng.normal()).collect()).unwrap();
        let fwd = forward(&p, &x).unwrap();
        let thresholds = [0.05, 0.2, 0.35, 0.5, 0.65, 0.8, 0.95];
        let runs: Vec<_> = thresholds.iter().map(|&t| predict_from_forward(&fwd, t).unwrap()).collect();
        for w in runs.windows(2) {
            for (lo, hi) in w[0].iter().zip(&w[1]) {
                if lo.final_label == 3 {
                    assert_eq!(hi.final_label, 3);
                }
            }
        }
        // at 0.5, rejected iff the unknown logit wins
        for (i, o) in runs[3].iter().enumerate() {
            let c = o.closed_argmax;
            let rejected = fwd.ova_logits[(i, 2 * c + 1)] > fwd.ova_logits[(i, 2 * c)];
            assert_eq!(o.final_label == 3, rejected);
        }
    }

    #[test]
    fn rejects_bad_threshold() {
        let spec = ModelSpec {
            input_dim: 2,
            hidden_dims: vec![],
            feature_dim: 2,
            num_known_classes: 2,
            init_scale: 1.0,
        };
        let p = init_model(&spec, &mut Rng::new(0)).unwrap();
        assert!(predict(&p, &Matrix::zeros(1, 2), 1.0).is_err());
    }

    #[test]
    fn h_score_values() {
        for x in [0.0, 0.3, 1.0] {
            assert_eq!(h_score(x, x), x);
        }
        assert_eq!(h_score(0.8, 0.0), 0.0);
        assert_abs_diff_eq!(h_score(0.8, 0.6), 0.96 / 1.4, epsilon = 1e-15);
        assert_abs_diff_eq!(h_score(0.8, 0.6), 0.685_714_285_714_285_7, epsilon = 1e-15);
    }

    #[test]
    fn perfect_predictions() {
        let preds = vec![outcome(0, 0.9, 2), outcome(1, 0.8, 2), outcome(0, 0.1, 2)];
        let m = compute_metrics(&preds, &[0, 1, 2], 2).unwrap();
        for v in [m.h_score, m.acc_c, m.unk_accuracy, m.acc_close, m.auroc] {
            assert_eq!(v, Some(1.0));
        }
        assert_eq!(m.overall_acc, 1.0);
        assert_eq!((m.n_known, m.n_unknown), (2, 1));
    }

    #[test]
    fn reject_everything() {
        let preds = vec![outcome(0, 0.1, 2), outcome(1, 0.2, 2), outcome(0, 0.3, 2)];
        let m = compute_metrics(&preds, &[0, 1, 2], 2).unwrap();
        assert_eq!(m.unk_accuracy, Some(1.0));
        assert_eq!(m.acc_c, Some(0.0));
        assert_eq!(m.h_score, Some(0.0));
        assert_eq!(m.acc_close, Some(1.0));
    }

    #[test]
    fn missing_unknowns_are_null() {
        let preds = vec![outcome(0, 0.9, 2), outcome(1, 0.8, 2)];
        let m = compute_metrics(&preds, &[0, 1], 2).unwrap();
        assert_eq!(m.unk_accuracy, None);
        assert_eq!(m.h_score, None);
        assert_eq!(m.auroc, None);
        assert!(m.to_json().contains("\"h_score\": null"));
    }

    #[test]
    fn auroc_examples() {
        let scores = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8];
        let unk = [false, false, false, false, true, true, true, true];
        assert_eq!(auroc(&scores, &unk).unwrap(), 1.0);
        let inverted: Vec<bool> = unk.iter().map(|u| !u).collect();
        assert_eq!(auroc(&scores, &inverted).unwrap(), 0.0);
        assert_eq!(auroc(&[0.3; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        assert!(matches!(auroc(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn auroc_matches_brute_force() {
        let mut rng = Rng::new(50);
        for _ in 0..20 {
            // coarse scores force ties
            let scores: Vec<f64> = (0..50).map(|_| (rng.uniform(0.0, 1.0) * 10.0).floor() / 10.0).collect();
            let mut unk: Vec<bool> = (0..50).map(|_| rng.uniform(0.0, 1.0) < 0.4).collect();
            unk[0] = true;
            unk[1] = false;
            assert_abs_diff_eq!(auroc(&scores, &unk).unwrap(), brute_auroc(&scores, &unk), epsilon = 1e-12);
        }
    }

    #[test]
    fn baseline_scores_extremes() {
        let uniform = Matrix::zeros(1, 10);
        assert_abs_diff_eq!(baseline_scores(&uniform, BaselineKind::Softmax).unwrap()[0], 0.9, epsilon = 1e-12);
        assert_abs_diff_eq!(baseline_scores(&uniform, BaselineKind::Entropy).unwrap()[0], 1.0, epsilon = 1e-12);
        let mut sharp = Matrix::zeros(1, 10);
        sharp[(0, 3)] = 1000.0;
        assert!(baseline_scores(&sharp, BaselineKind::Softmax).unwrap()[0] < 1e-12);
        assert!(baseline_scores(&sharp, BaselineKind::Entropy).unwrap()[0] < 1e-12);
    }

    #[test]
    fn entropy_baseline_matches_recomputation() {
        let mut rng = Rng::new(4);
        let logits = Matrix::from_vec(10, 5, (0..50).map(|_| 3.0 * rng.normal()).collect()).unwrap();
        let got = baseline_scores(&logits, BaselineKind::Entropy).unwrap();
        for (row, g) in logits.row_iter().zip(got) {
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            let h: f64 = row.iter().map(|v| {
                let q = v.exp() / z;
                -q * q.ln()
            }).sum();
            assert_abs_diff_eq!(g, h / 5f64.ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn histogram_two_bins_split_at_threshold() {
        let preds = vec![outcome(0, 0.9, 2), outcome(0, 0.5, 2), outcome(1, 0.2, 2), outcome(1, 0.4, 2)];
        let bins = emit_histogram(&preds, &[0, 2, 2, 1], 2, 2).unwrap();
        assert_eq!(bins[0].bin_high, 0.5);
        // anomaly 0.1 (known) and 0.5 (unknown) on the known side
        assert_eq!((bins[0].known, bins[0].unknown), (1, 1));
        assert_eq!((bins[1].known, bins[1].unknown), (1, 1));
    }

    #[test]
    fn histogram_conserves_counts() {
        let mut rng = Rng::new(2);
        let preds: Vec<_> = (0..97).map(|_| outcome(0, rng.uniform(0.0, 1.0), 3)).collect();
        let labels: Vec<usize> = (0..97).map(|i| if i % 4 == 0 { 3 } else { 0 }).collect();
        for n in [2, 5, 10, 21] {
            let bins = emit_histogram(&preds, &labels, 3, n).unwrap();
            assert_eq!(bins.len(), n);
            assert!(bins.iter().any(|b| b.bin_high == 0.5));
            assert_eq!(bins.iter().map(|b| b.known + b.unknown).sum::<usize>(), 97);
            assert_eq!(bins.iter().map(|b| b.unknown).sum::<usize>(), 25);
        }
        let none = emit_histogram(&preds, &vec![0; 97], 3, 4).unwrap();
        assert!(none.iter().all(|b| b.unknown == 0));
        assert!(emit_histogram(&preds, &labels, 3, 1).is_err());
    }

    #[test]
    fn fixed_ratio_rejects_top_quantile() {
        let preds: Vec<_> = [0.9, 0.2, 0.6, 0.4].iter().map(|&k| outcome(1, k, 5)).collect();
        let out = fixed_ratio_rejection(&preds, 0.5, 5).unwrap();
        let labels: Vec<usize> = out.iter().map(|o| o.final_label).collect();
        assert_eq!(labels, vec![1, 5, 1, 5]);
    }

    proptest! {
        #[test]
        fn h_score_properties(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            prop_assert_eq!(h_score(a, b), h_score(b, a));
            prop_assert_eq!(h_score(a, a), a);
            prop_assert!(h_score(a, b) <= (a + b) / 2.0 + 1e-15);
            if a > 0.0 && b > 0.0 {
                prop_assert!(h_score(a, b) >= a.min(b) - 1e-15);
            }
        }

        #[test]
        fn auroc_invariant_under_monotone_transform(
            raw in proptest::collection::vec((0.0f64..1.0, any::<bool>()), 4..40)
        ) {
            let scores: Vec<f64> = raw.iter().map(|r| r.0).collect();
            let mut flags: Vec<bool> = raw.iter().map(|r| r.1).collect();
            flags[0] = true;
            flags[1] = false;
            let a = auroc(&scores, &flags).unwrap();
            let t: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() + 7.0).collect();
            prop_assert!((a - auroc(&t, &flags).unwrap()).abs() < 1e-12);
            prop_assert!((a - brute_auroc(&scores, &flags)).abs() < 1e-12);
        }
    }
}
