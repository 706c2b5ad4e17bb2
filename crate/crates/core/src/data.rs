//! Category-shift splits, synthetic source/target generation, feature CSV
//! files and shuffled mini-batching.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

/// Partition of class ids into shared, source-private and target-private.
///
/// Known classes (the source label space) are `shared` followed by
/// `source_private`; a known class's position in that list is its known
/// index. Everything else the target contains is unknown.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryShiftSpec {
    pub shared: Vec<usize>,
    pub source_private: Vec<usize>,
    pub target_private: Vec<usize>,
}

/// Assigns classes in ascending index order: shared first, then
/// source-private, then target-private.
pub fn make_category_shift(
    total: usize,
    n_shared: usize,
    n_src_private: usize,
    n_tgt_private: usize,
) -> Result<CategoryShiftSpec> {
    if n_shared == 0 {
        return Err(Error::invalid("at least one shared class is required"));
    }
    let used = n_shared + n_src_private + n_tgt_private;
    if used > total {
        return Err(Error::invalid(format!(
            "split needs {used} classes but only {total} exist"
        )));
    }
    let a = n_shared;
    let b = a + n_src_private;
    Ok(CategoryShiftSpec {
        shared: (0..a).collect(),
        source_private: (a..b).collect(),
        target_private: (b..used).collect(),
    })
}

impl CategoryShiftSpec {
    pub fn validate(&self) -> Result<()> {
        if self.shared.is_empty() {
            return Err(Error::invalid("shared class list is empty"));
        }
        let mut all: Vec<usize> = self
            .shared
            .iter()
            .chain(&self.source_private)
            .chain(&self.target_private)
            .copied()
            .collect();
        let n = all.len();
        all.sort_unstable();
        all.dedup();
        if all.len() != n {
            return Err(Error::invalid("class lists overlap"));
        }
        Ok(())
    }

    pub fn known_classes(&self) -> Vec<usize> {
        self.shared.iter().chain(&self.source_private).copied().collect()
    }

    pub fn target_classes(&self) -> Vec<usize> {
        self.shared.iter().chain(&self.target_private).copied().collect()
    }

    /// `|L_s|`
    pub fn num_known(&self) -> usize {
        self.shared.len() + self.source_private.len()
    }

    /// Sentinel used for "unknown" in evaluation labels: `|L_s|`.
    pub fn unknown_label(&self) -> usize {
        self.num_known()
    }

    pub fn known_index(&self, class_id: usize) -> Option<usize> {
        self.shared
            .iter()
            .chain(&self.source_private)
            .position(|&c| c == class_id)
    }

    /// Known index, or the unknown sentinel for anything outside `L_s`.
    pub fn eval_label(&self, class_id: usize) -> usize {
        self.known_index(class_id).unwrap_or_else(|| self.unknown_label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

/// Feature rows with optional class ids. Target labels exist only for
/// evaluation; training code receives target features alone.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<Option<usize>>,
    pub domain: Domain,
    pub class_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<Option<usize>>, domain: Domain) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::invalid("dataset has no samples"));
        }
        if labels.len() != features.rows() {
            return Err(Error::invalid("label count does not match sample count"));
        }
        Ok(Self {
            features,
            labels,
            domain,
            class_names: None,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Source labels as known indices. Fails on unlabeled rows and on
    /// classes outside `L_s`.
    pub fn known_labels(&self, split: &CategoryShiftSpec) -> Result<Vec<usize>> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let c = l.ok_or_else(|| Error::invalid(format!("sample {i} is unlabeled")))?;
                split
                    .known_index(c)
                    .ok_or_else(|| Error::invalid(format!("sample {i} has class {c}, which is not a known class")))
            })
            .collect()
    }

    /// Evaluation labels: known index or the unknown sentinel. Fails when
    /// any row is unlabeled.
    pub fn eval_labels(&self, split: &CategoryShiftSpec) -> Result<Vec<usize>> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, l)| {
                l.map(|c| split.eval_label(c))
                    .ok_or_else(|| Error::UndefinedMetric(format!("target sample {i} has no ground-truth label")))
            })
            .collect()
    }
}

/// Distribution of class centers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterLayout {
    /// `class_center_scale · N(0, I)`.
    Gaussian,
    /// Uniform on the sphere of radius `class_center_scale`.
    #[default]
    Sphere,
}

impl CenterLayout {
    fn draw(self, dim: usize, scale: f64, rng: &mut Rng) -> Vec<f64> {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let factor = match self {
            CenterLayout::Gaussian => scale,
            CenterLayout::Sphere => {
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 0.0 {
                    scale / norm
                } else {
                    0.0
                }
            }
        };
        v.iter_mut().for_each(|x| *x *= factor);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub total_classes: usize,
    pub dim: usize,
    /// Samples drawn per class in each domain.
    pub samples_per_class: usize,
    pub center_layout: CenterLayout,
    /// Radius of the sphere, or standard deviation of the Gaussian, that
    /// class centers are drawn from.
    pub class_center_scale: f64,
    pub noise_sigma: f64,
    /// Angle (radians) applied to every consecutive coordinate pair of
    /// target samples.
    pub shift_rotation_angle: f64,
    /// Target samples are translated by a fixed `N(0, σ²I)` draw.
    pub shift_translation_sigma: f64,
    /// Centers are redrawn until every pair is at least this far apart.
    pub min_center_separation: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            total_classes: 25,
            dim: 8,
            samples_per_class: 100,
            center_layout: CenterLayout::Sphere,
            class_center_scale: 14.0,
            noise_sigma: 1.0,
            shift_rotation_angle: 0.0,
            shift_translation_sigma: 0.0,
            min_center_separation: 15.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self, split: &CategoryShiftSpec) -> Result<()> {
        split.validate()?;
        let max_id = split
            .shared
            .iter()
            .chain(&split.source_private)
            .chain(&split.target_private)
            .max()
            .copied()
            .unwrap_or(0);
        if max_id >= self.total_classes {
            return Err(Error::invalid(format!(
                "split uses class {max_id} but total_classes is {}",
                self.total_classes
            )));
        }
        if self.dim == 0 || self.samples_per_class == 0 {
            return Err(Error::invalid("dim and samples_per_class must be positive"));
        }
        if !(self.noise_sigma > 0.0) {
            return Err(Error::invalid("noise_sigma must be positive"));
        }
        if self.dim < 2 && self.shift_rotation_angle != 0.0 {
            return Err(Error::invalid("rotation shift needs at least two dimensions"));
        }
        Ok(())
    }

    /// Copy with room for at least `n` classes. When the centers no longer
    /// fit at the configured separation the center scale grows in 5% steps
    /// until they do. Classes keep their draw order, so a budget that
    /// already fits leaves every center where it was.
    pub fn with_classes(&self, n: usize) -> Result<SynthConfig> {
        let mut cfg = self.clone();
        cfg.total_classes = cfg.total_classes.max(n);
        for _ in 0..GROWTH_STEPS {
            match draw_centers(&cfg, &mut Rng::new(cfg.seed).split(1)) {
                Ok(_) => return Ok(cfg),
                Err(_) => cfg.class_center_scale *= 1.05,
            }
        }
        Err(Error::invalid(format!(
            "could not fit {} classes at separation {}",
            cfg.total_classes, cfg.min_center_separation
        )))
    }
}

const GROWTH_STEPS: usize = 40;
const CENTER_ATTEMPTS: usize = 100_000;

fn draw_centers(cfg: &SynthConfig, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(cfg.total_classes);
    let min_sq = cfg.min_center_separation.max(0.0).powi(2);
    for c in 0..cfg.total_classes {
        let mut attempts = 0;
        loop {
            let cand = cfg.center_layout.draw(cfg.dim, cfg.class_center_scale, rng);
            let ok = centers.iter().all(|o| {
                o.iter().zip(&cand).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() >= min_sq
            });
            if ok {
                centers.push(cand);
                break;
            }
            attempts += 1;
            if attempts >= CENTER_ATTEMPTS {
                return Err(Error::invalid(format!(
                    "could not place class {c} at separation {} with center scale {}",
                    cfg.min_center_separation, cfg.class_center_scale
                )));
            }
        }
    }
    Ok(centers)
}

fn rotate_pairs(x: &mut [f64], angle: f64) {
    if angle == 0.0 {
        return;
    }
    let (s, c) = angle.sin_cos();
    for pair in x.chunks_exact_mut(2) {
        let (a, b) = (pair[0], pair[1]);
        pair[0] = c * a - s * b;
        pair[1] = s * a + c * b;
    }
}

/// Draws a source and a target dataset.
///
/// Every class owns one isotropic Gaussian whose center is shared by both
/// domains. Target samples additionally go through a fixed rotation and
/// translation. The source holds shared and source-private classes, the
/// target holds shared and target-private classes; labels are class ids.
/// Centers for all `total_classes` are drawn regardless of the split, so
/// splits of the same seed see the same geometry.
pub fn generate_synthetic(split: &CategoryShiftSpec, cfg: &SynthConfig) -> Result<(Dataset, Dataset)> {
    cfg.validate(split)?;
    let root = Rng::new(cfg.seed);
    let centers = draw_centers(cfg, &mut root.split(1))?;
    let mut shift_rng = root.split(2);
    let translation: Vec<f64> = (0..cfg.dim)
        .map(|_| cfg.shift_translation_sigma * shift_rng.normal())
        .collect();

    let sample = |classes: &[usize], rng: &mut Rng, shifted: bool, domain: Domain| -> Result<Dataset> {
        let n = classes.len() * cfg.samples_per_class;
        let mut data = Vec::with_capacity(n * cfg.dim);
        let mut labels = Vec::with_capacity(n);
        let mut classes = classes.to_vec();
        classes.sort_unstable();
        for &c in &classes {
            for _ in 0..cfg.samples_per_class {
                let mut x: Vec<f64> = centers[c].iter().map(|m| m + cfg.noise_sigma * rng.normal()).collect();
                if shifted {
                    rotate_pairs(&mut x, cfg.shift_rotation_angle);
                    for (v, t) in x.iter_mut().zip(&translation) {
                        *v += t;
                    }
                }
                data.extend(x);
                labels.push(Some(c));
            }
        }
        Dataset::new(Matrix::from_vec(n, cfg.dim, data)?, labels, domain)
    };

    let source = sample(&split.known_classes(), &mut root.split(3), false, Domain::Source)?;
    let target = sample(&split.target_classes(), &mut root.split(4), true, Domain::Target)?;
    Ok((source, target))
}

/// Reads a feature CSV: header `label,f0,f1,...`, one sample per row. A
/// label of `-1` marks an unlabeled row.
pub fn load_feature_file(path: impl AsRef<Path>, domain: Domain) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_features(file, domain)
}

pub fn read_features<R: std::io::Read>(reader: R, domain: Domain) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| csv_err(e, 1))?,
        None => return Err(Error::Parse { line: 1, message: "missing header".into() }),
    };
    if header.get(0) != Some("label") || header.len() < 2 {
        return Err(Error::Parse {
            line: 1,
            message: "header must start with `label` followed by feature columns".into(),
        });
    }
    for (j, name) in header.iter().skip(1).enumerate() {
        if name != format!("f{j}") {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected column `f{j}`, found `{name}`"),
            });
        }
    }
    let dim = header.len() - 1;

    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in records.enumerate() {
        let fallback_line = i as u64 + 2;
        let rec = rec.map_err(|e| csv_err(e, fallback_line))?;
        let line = rec.position().map_or(fallback_line, |p| p.line());
        if rec.len() != dim + 1 {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", dim + 1, rec.len()),
            });
        }
        let label: i64 = rec[0].parse().map_err(|_| Error::Parse {
            line,
            message: format!("label `{}` is not an integer", &rec[0]),
        })?;
        labels.push(match label {
            -1 => None,
            l if l >= 0 => Some(l as usize),
            l => {
                return Err(Error::Parse {
                    line,
                    message: format!("label {l} is negative (only -1 marks unlabeled)"),
                })
            }
        });
        for (j, field) in rec.iter().skip(1).enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                message: format!("feature f{j} value `{field}` is not numeric"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("feature f{j} is not finite"),
                });
            }
            data.push(v);
        }
    }
    if labels.is_empty() {
        return Err(Error::Parse { line: 2, message: "file has no samples".into() });
    }
    Dataset::new(Matrix::from_vec(labels.len(), dim, data)?, labels, domain)
}

fn csv_err(e: csv::Error, fallback_line: u64) -> Error {
    let line = e.position().map_or(fallback_line, |p| p.line());
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

/// Writes `dataset` in the schema read by [`load_feature_file`]. Values use
/// the shortest representation that parses back to the same `f64`.
pub fn write_feature_file(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_features(std::io::BufWriter::new(file), dataset)
}

pub fn write_features<W: std::io::Write>(writer: W, dataset: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["label".to_string()];
    header.extend((0..dataset.dim()).map(|j| format!("f{j}")));
    w.write_record(&header).map_err(|e| csv_err(e, 1))?;
    for (row, label) in dataset.features.row_iter().zip(&dataset.labels) {
        let mut rec = Vec::with_capacity(row.len() + 1);
        rec.push(label.map_or_else(|| "-1".to_string(), |l| l.to_string()));
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| csv_err(e, 0))?;
    }
    w.flush()?;
    Ok(())
}

/// Endless stream of index batches: every epoch is a fresh shuffle of
/// `0..n`, cut into chunks of `batch_size` with the short tail kept.
#[derive(Debug, Clone)]
pub struct BatchIter {
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    epoch: usize,
    rng: Rng,
}

pub fn batch_iter(n: usize, batch_size: usize, rng: Rng) -> BatchIter {
    BatchIter {
        order: (0..n).collect(),
        // forces a shuffle on the first call
        pos: n,
        batch_size: batch_size.max(1),
        epoch: 0,
        rng,
    }
}

impl BatchIter {
    /// Number of epochs started so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }
}

impl Iterator for BatchIter {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.order.is_empty() {
            return None;
        }
        if self.pos >= self.order.len() {
            self.rng.shuffle(&mut self.order);
            self.pos = 0;
            self.epoch += 1;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(batch)
    }
}
