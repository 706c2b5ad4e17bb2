//! Grids of runs and their long-format CSV.
//!
//! Every cell is an independent run whose seed is the listed seed value, so
//! the same (value, seed) cell gives the same numbers whether it runs alone,
//! serially or on the thread pool.

use std::io::{Read, Write};

use ovanet_core::MetricsReport;
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::experiment::execute;

/// Prefix of the baseline columns in the sweep CSV.
pub const BASELINE_PREFIX: &str = "fixed_ratio_";

#[derive(Debug, Clone, PartialEq)]
pub struct CellMetrics {
    pub ovanet: MetricsReport,
    /// Fixed-ratio rejection on the same model, when the sweep asks for it.
    pub baseline: Option<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub seed: u64,
    /// Metrics, or the error message of a failed cell.
    pub outcome: std::result::Result<CellMetrics, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// Name of the swept quantity, e.g. `unknown_classes` or `lambda`.
    pub parameter: String,
    pub rows: Vec<SweepRow>,
}

struct Cell {
    value: String,
    seed: u64,
    config: ExperimentConfig,
}

fn run_cells(parameter: &str, cells: Vec<Cell>, parallel: bool, with_baseline: bool) -> SweepResult {
    let run = |cell: &Cell| -> SweepRow {
        log::info!("{parameter}={} seed={}", cell.value, cell.seed);
        let outcome = match execute(&cell.config) {
            Ok(out) => Ok(CellMetrics {
                ovanet: out.metrics,
                baseline: with_baseline.then_some(out.baseline),
            }),
            Err(e) => {
                log::warn!("{parameter}={} seed={} failed: {e}", cell.value, cell.seed);
                Err(e.to_string())
            }
        };
        SweepRow {
            value: cell.value.clone(),
            seed: cell.seed,
            outcome,
        }
    };
    let rows = if parallel {
        cells.par_iter().map(run).collect()
    } else {
        cells.iter().map(run).collect()
    };
    SweepResult {
        parameter: parameter.into(),
        rows,
    }
}

fn cell_config(base: &ExperimentConfig, label: &str, seed: u64) -> ExperimentConfig {
    let mut cfg = base.clone();
    cfg.seed = Some(seed);
    cfg.name = format!("{}-{label}-s{seed}", base.name);
    cfg
}

/// Gives a cell room for `needed` classes, the largest split of its sweep.
/// The budget depends only on the seed, so cells sharing a seed share their
/// class centers.
fn fit_budget(cfg: &mut ExperimentConfig, needed: usize) -> Result<()> {
    let seed = cfg.seed;
    if let Some(s) = cfg.data.synthetic.as_mut() {
        if let Some(seed) = seed {
            s.seed = seed;
        }
        *s = s.with_classes(needed)?;
    }
    Ok(())
}

/// One run per (unknown class count, seed). Each run also reports the
/// fixed-ratio baseline evaluated on the same model.
pub fn openness_sweep(base: &ExperimentConfig, unknown_counts: &[usize], seeds: &[u64]) -> Result<SweepResult> {
    if unknown_counts.is_empty() || seeds.is_empty() {
        return Err(CliError::Config("openness sweep needs counts and seeds".into()));
    }
    let needed = base.data.shared + base.data.source_private + unknown_counts.iter().max().unwrap();
    let mut cells = Vec::new();
    for &count in unknown_counts {
        for &seed in seeds {
            let mut cfg = cell_config(base, &format!("unk{count}"), seed);
            cfg.data.target_private = count;
            fit_budget(&mut cfg, needed)?;
            cells.push(Cell {
                value: count.to_string(),
                seed,
                config: cfg,
            });
        }
    }
    Ok(run_cells("unknown_classes", cells, base.sweep.parallel, true))
}

/// Ablation label for a (HNCS, OEM) pair.
pub fn ablation_label(hncs: bool, oem: bool) -> String {
    let on = |b: bool| if b { "on" } else { "off" };
    format!("hncs_{}_oem_{}", on(hncs), on(oem))
}

/// Four runs per seed: HNCS on/off crossed with OEM on/off. HNCS off trains
/// every sub-classifier on every source sample.
pub fn ablation_grid(base: &ExperimentConfig, seeds: &[u64]) -> Result<SweepResult> {
    if seeds.is_empty() {
        return Err(CliError::Config("ablation needs at least one seed".into()));
    }
    let mut cells = Vec::new();
    for (hncs, oem) in [(true, true), (true, false), (false, true), (false, false)] {
        for &seed in seeds {
            let label = ablation_label(hncs, oem);
            let mut cfg = cell_config(base, &label, seed);
            cfg.train.hncs_enabled = hncs;
            cfg.train.oem_enabled = oem;
            cells.push(Cell {
                value: label,
                seed,
                config: cfg,
            });
        }
    }
    Ok(run_cells("ablation", cells, base.sweep.parallel, false))
}

pub fn lambda_sweep(base: &ExperimentConfig, lambdas: &[f64], seeds: &[u64]) -> Result<SweepResult> {
    if lambdas.is_empty() || seeds.is_empty() {
        return Err(CliError::Config("lambda sweep needs lambdas and seeds".into()));
    }
    if let Some(bad) = lambdas.iter().find(|l| !l.is_finite() || **l < 0.0) {
        return Err(CliError::Config(format!("lambda {bad} must be finite and non-negative")));
    }
    let mut cells = Vec::new();
    for &lambda in lambdas {
        for &seed in seeds {
            let mut cfg = cell_config(base, &format!("lambda{lambda}"), seed);
            cfg.train.lambda = lambda;
            cells.push(Cell {
                value: lambda.to_string(),
                seed,
                config: cfg,
            });
        }
    }
    Ok(run_cells("lambda", cells, base.sweep.parallel, false))
}

/// Varies the number of known classes with the unknown classes held at
/// `target_private`. Cells are open-set: every known class is shared.
pub fn known_class_sweep(base: &ExperimentConfig, known_counts: &[usize], seeds: &[u64]) -> Result<SweepResult> {
    if known_counts.is_empty() || seeds.is_empty() {
        return Err(CliError::Config("known-class sweep needs counts and seeds".into()));
    }
    let needed = known_counts.iter().max().unwrap() + base.data.target_private;
    let mut cells = Vec::new();
    for &k in known_counts {
        for &seed in seeds {
            let mut cfg = cell_config(base, &format!("known{k}"), seed);
            cfg.data.shared = k;
            cfg.data.source_private = 0;
            fit_budget(&mut cfg, needed)?;
            cells.push(Cell {
                value: k.to_string(),
                seed,
                config: cfg,
            });
        }
    }
    Ok(run_cells("known_classes", cells, base.sweep.parallel, false))
}

const LEAD_COLUMNS: [&str; 4] = ["parameter", "value", "seed", "status"];

fn header() -> Vec<String> {
    let metrics = MetricsReport::csv_header();
    LEAD_COLUMNS
        .iter()
        .map(|c| c.to_string())
        .chain(metrics.iter().map(|c| c.to_string()))
        .chain(metrics.iter().map(|c| format!("{BASELINE_PREFIX}{c}")))
        .chain(["error".to_string()])
        .collect()
}

fn parse_report(cells: &[&str], line: u64) -> Result<Option<MetricsReport>> {
    if cells.iter().all(|c| c.is_empty()) {
        return Ok(None);
    }
    let names = MetricsReport::csv_header();
    let bad = |i: usize| CliError::Config(format!("sweep CSV line {line}: bad {}", names[i]));
    let opt = |i: usize| -> Result<Option<f64>> {
        if cells[i].is_empty() {
            Ok(None)
        } else {
            cells[i].parse().map(Some).map_err(|_| bad(i))
        }
    };
    Ok(Some(MetricsReport {
        h_score: opt(0)?,
        acc_c: opt(1)?,
        unk_accuracy: opt(2)?,
        acc_close: opt(3)?,
        overall_acc: opt(4)?.ok_or_else(|| bad(4))?,
        auroc: opt(5)?,
        n_known: cells[6].parse().map_err(|_| bad(6))?,
        n_unknown: cells[7].parse().map_err(|_| bad(7))?,
        per_class: Vec::new(),
    }))
}

impl SweepResult {
    pub fn ok_rows(&self) -> impl Iterator<Item = (&SweepRow, &CellMetrics)> {
        self.rows.iter().filter_map(|r| r.outcome.as_ref().ok().map(|m| (r, m)))
    }

    pub fn failures(&self) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(|r| r.outcome.is_err())
    }

    /// Distinct swept values in first-appearance order.
    pub fn values(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.value) {
                out.push(r.value.clone());
            }
        }
        out
    }

    /// Defined values of one learned-boundary metric over the seeds of `value`.
    pub fn metric(&self, value: &str, f: impl Fn(&MetricsReport) -> Option<f64>) -> Vec<f64> {
        self.ok_rows()
            .filter(|(r, _)| r.value == value)
            .filter_map(|(_, m)| f(&m.ovanet))
            .collect()
    }

    /// Same as [`metric`](Self::metric) for the fixed-ratio baseline.
    pub fn baseline_metric(&self, value: &str, f: impl Fn(&MetricsReport) -> Option<f64>) -> Vec<f64> {
        self.ok_rows()
            .filter(|(r, _)| r.value == value)
            .filter_map(|(_, m)| m.baseline.as_ref().and_then(&f))
            .collect()
    }

    /// Long format: one line per (value, seed). Learned-boundary metrics come first,
    /// baseline metrics follow under the `fixed_ratio_` prefix (empty when
    /// the sweep has no baseline), `error` is last.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(header())?;
        let blank = MetricsReport::csv_header().len();
        let empty = || std::iter::repeat(String::new()).take(blank);
        for r in &self.rows {
            let mut rec = vec![self.parameter.clone(), r.value.clone(), r.seed.to_string()];
            match &r.outcome {
                Ok(m) => {
                    rec.push("ok".into());
                    rec.extend(m.ovanet.csv_cells());
                    match &m.baseline {
                        Some(b) => rec.extend(b.csv_cells()),
                        None => rec.extend(empty()),
                    }
                    rec.push(String::new());
                }
                Err(e) => {
                    rec.push("error".into());
                    rec.extend(empty().chain(empty()));
                    rec.push(e.clone());
                }
            }
            wr.write_record(&rec)?;
        }
        wr.flush().map_err(|e| CliError::io("sweep csv", e))?;
        Ok(())
    }

    /// Reads back what [`write_csv`](Self::write_csv) wrote. Per-class
    /// tables are not part of the sweep file and come back empty.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        if rd.headers()?.iter().collect::<Vec<_>>() != header() {
            return Err(CliError::Config("not a sweep CSV: unexpected header".into()));
        }
        let n = MetricsReport::csv_header().len();
        let mut parameter = String::new();
        let mut rows = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let cells: Vec<&str> = rec.iter().collect();
            parameter = cells[0].to_string();
            let seed: u64 = cells[2]
                .parse()
                .map_err(|_| CliError::Config(format!("sweep CSV line {line}: bad seed")))?;
            let outcome = match cells[3] {
                "ok" => Ok(CellMetrics {
                    ovanet: parse_report(&cells[4..4 + n], line)?
                        .ok_or_else(|| CliError::Config(format!("sweep CSV line {line}: missing metrics")))?,
                    baseline: parse_report(&cells[4 + n..4 + 2 * n], line)?,
                }),
                "error" => Err(cells[4 + 2 * n].to_string()),
                other => return Err(CliError::Config(format!("sweep CSV line {line}: bad status {other:?}"))),
            };
            rows.push(SweepRow {
                value: cells[1].to_string(),
                seed,
                outcome,
            });
        }
        Ok(SweepResult { parameter, rows })
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Population standard deviation.
pub fn std_dev(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    Some((values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_and_std() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
        assert_eq!(std_dev(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]), Some(2.0));
        assert_eq!(std_dev(&[1.0]), Some(0.0));
    }

    #[test]
    fn csv_round_trip_keeps_failures() {
        let m = MetricsReport {
            h_score: Some(0.8),
            acc_c: Some(0.9),
            unk_accuracy: Some(0.72),
            acc_close: Some(0.95),
            overall_acc: 0.85,
            auroc: None,
            n_known: 10,
            n_unknown: 5,
            per_class: Vec::new(),
        };
        let b = MetricsReport {
            h_score: Some(0.1 + 0.2),
            ..m.clone()
        };
        let res = SweepResult {
            parameter: "unknown_classes".into(),
            rows: vec![
                SweepRow {
                    value: "2".into(),
                    seed: 3,
                    outcome: Ok(CellMetrics {
                        ovanet: m.clone(),
                        baseline: Some(b),
                    }),
                },
                SweepRow {
                    value: "5".into(),
                    seed: 3,
                    outcome: Ok(CellMetrics {
                        ovanet: m,
                        baseline: None,
                    }),
                },
                SweepRow {
                    value: "10".into(),
                    seed: 3,
                    outcome: Err("non-finite l_ova, at step 4".into()),
                },
            ],
        };
        let mut buf = Vec::new();
        res.write_csv(&mut buf).unwrap();
        let back = SweepResult::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, res);
        assert_eq!(back.values(), vec!["2", "5", "10"]);
        assert_eq!(back.failures().count(), 1);
        assert_eq!(back.baseline_metric("2", |r| r.h_score), vec![0.1 + 0.2]);
    }

    #[test]
    fn foreign_csv_is_rejected() {
        assert!(SweepResult::read_csv("a,b\n1,2\n".as_bytes()).is_err());
    }
}
