//! Mini-batch SGD over paired source/target batches.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{total_objective, EntropyReduction, NegativeSampling, Objective, ObjectiveConfig};
use crate::model::{forward, init_model, ForwardResult, ModelParams, ModelSpec, ParamBlock};
use crate::numerics::{finite_diff_grad, Matrix, Rng};

/// Substream tags under the training seed.
const STREAM_INIT: u64 = 10;
const STREAM_SOURCE_BATCHES: u64 = 11;
const STREAM_TARGET_BATCHES: u64 = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lambda: f64,
    /// Per domain.
    pub batch_size: usize,
    pub steps: usize,
    /// Extractor learning rate at step 0.
    pub lr0: f64,
    /// Closed and one-vs-all heads train at `lr × head_lr_multiplier`.
    pub head_lr_multiplier: f64,
    pub decay_gamma: f64,
    pub decay_power: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub hncs_enabled: bool,
    pub oem_enabled: bool,
    pub entropy_reduction: EntropyReduction,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            batch_size: 36,
            steps: 2000,
            lr0: 0.01,
            head_lr_multiplier: 10.0,
            decay_gamma: 1e-4,
            decay_power: 0.75,
            momentum: 0.0,
            weight_decay: 0.0,
            seed: 0,
            hncs_enabled: true,
            oem_enabled: true,
            entropy_reduction: EntropyReduction::Mean,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if !(self.lr0 > 0.0) {
            return Err(Error::invalid("lr0 must be positive"));
        }
        if !(self.decay_power >= 0.0) || !(self.decay_gamma >= 0.0) {
            return Err(Error::invalid("decay_gamma and decay_power must be non-negative"));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid("lambda must be finite and non-negative"));
        }
        if !(self.head_lr_multiplier >= 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("head_lr_multiplier, momentum or weight_decay out of range"));
        }
        Ok(())
    }

    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            lambda: self.lambda,
            negatives: if self.hncs_enabled {
                NegativeSampling::Hardest
            } else {
                NegativeSampling::All
            },
            oem_enabled: self.oem_enabled,
            entropy_reduction: self.entropy_reduction,
        }
    }
}

/// Inverse decay: `lr0 · (1 + γ·step)^(−power)`.
pub fn lr_schedule(step: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 * (1.0 + cfg.decay_gamma * step as f64).powf(-cfg.decay_power)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub l_cls: f64,
    pub l_ova: f64,
    pub l_ent: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<StepRecord>,
}

impl TrainHistory {
    /// CSV with columns `step,lr,l_cls,l_ova,l_ent,total`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.records {
            wr.serialize(r).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
        if self.records.is_empty() {
            wr.write_record(["step", "lr", "l_cls", "l_ova", "l_ent", "total"])
                .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn last(&self) -> Option<&StepRecord> {
        self.records.last()
    }
}

/// Plain SGD with optional heavy-ball momentum and L2 weight decay.
#[derive(Debug, Clone)]
pub struct Sgd {
    momentum: f64,
    weight_decay: f64,
    velocity: Option<ModelParams>,
}

impl Sgd {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
            velocity: None,
        }
    }

    /// `lr` applies to the extractor; heads use `lr × head_mult`.
    pub fn apply(&mut self, params: &mut ModelParams, grad: &ModelParams, lr: f64, head_mult: f64) {
        let wd = self.weight_decay;
        let rate = |b: ParamBlock| if b.is_head() { lr * head_mult } else { lr };
        if self.momentum == 0.0 {
            params.zip_apply(grad, |b, p, g| *p -= rate(b) * (g + wd * *p));
            return;
        }
        let m = self.momentum;
        let vel = self
            .velocity
            .get_or_insert_with(|| ModelParams::zeros_like(&params.spec));
        // v ← m·v + g + wd·p, then p ← p − rate·v
        let mut step = grad.clone();
        step.zip_apply(params, |_, g, p| *g += wd * p);
        vel.zip_apply(&step, |_, v, g| *v = m * *v + g);
        params.zip_apply(vel, |b, p, v| *p -= rate(b) * v);
    }
}

fn check_finite(value: f64, grad: &Matrix, component: &str, step: usize) -> Result<()> {
    if !value.is_finite() || !grad.is_finite() {
        return Err(Error::NonFinite {
            component: component.to_string(),
            step,
        });
    }
    Ok(())
}

fn check_objective(obj: &Objective, step: usize) -> Result<()> {
    check_finite(obj.cls.value, &obj.cls.grad, "l_cls", step)?;
    check_finite(obj.ova.value, &obj.ova.grad, "l_ova", step)?;
    check_finite(obj.ent.value, &obj.ent.grad, "l_ent", step)
}

/// One SGD step on the combined objective at `lr_schedule(step)`.
pub fn train_step(
    params: &mut ModelParams,
    opt: &mut Sgd,
    src: &Matrix,
    src_labels: &[usize],
    tgt: &Matrix,
    cfg: &TrainConfig,
    step: usize,
) -> Result<StepRecord> {
    let src_fwd = forward(params, src)?;
    let tgt_fwd = forward(params, tgt)?;
    let obj = total_objective(&src_fwd, src_labels, &tgt_fwd, &cfg.objective())?;
    check_objective(&obj, step)?;
    let grad = obj.param_grad(params, &src_fwd, &tgt_fwd)?;
    if !grad.is_finite() {
        return Err(Error::NonFinite {
            component: "parameter gradient".into(),
            step,
        });
    }
    let lr = lr_schedule(step, cfg);
    opt.apply(params, &grad, lr, cfg.head_lr_multiplier);
    Ok(StepRecord {
        step,
        lr,
        l_cls: obj.cls.value,
        l_ova: obj.ova.value,
        l_ent: obj.ent.value,
        total: obj.total,
    })
}

/// Trains from a fresh initialisation for `cfg.steps` steps.
///
/// Only target *features* are accepted; target labels never reach training.
/// Source and target batches come from independent substreams of
/// `cfg.seed`, each reshuffled whenever its own epoch ends.
pub fn train(
    cfg: &TrainConfig,
    src: &Matrix,
    src_labels: &[usize],
    tgt: &Matrix,
    spec: &ModelSpec,
) -> Result<(ModelParams, TrainHistory)> {
    cfg.validate()?;
    spec.validate()?;
    if src.rows() == 0 || tgt.rows() == 0 {
        return Err(Error::invalid("source and target sets must be non-empty"));
    }
    if src_labels.len() != src.rows() {
        return Err(Error::invalid("one source label per source row is required"));
    }
    if let Some(&bad) = src_labels.iter().find(|&&y| y >= spec.num_known_classes) {
        return Err(Error::invalid(format!(
            "source label {bad} outside [0, {})",
            spec.num_known_classes
        )));
    }
    let root = Rng::new(cfg.seed);
    let mut params = init_model(spec, &mut root.split(STREAM_INIT))?;
    let mut opt = Sgd::new(cfg);
    let mut src_batches = crate::data::batch_iter(src.rows(), cfg.batch_size, root.split(STREAM_SOURCE_BATCHES));
    let mut tgt_batches = crate::data::batch_iter(tgt.rows(), cfg.batch_size, root.split(STREAM_TARGET_BATCHES));
    let mut history = TrainHistory {
        records: Vec::with_capacity(cfg.steps),
    };
    for step in 0..cfg.steps {
        let sb = src_batches.next().expect("non-empty source");
        let tb = tgt_batches.next().expect("non-empty target");
        let labels: Vec<usize> = sb.iter().map(|&i| src_labels[i]).collect();
        let rec = train_step(
            &mut params,
            &mut opt,
            &src.select_rows(&sb),
            &labels,
            &tgt.select_rows(&tb),
            cfg,
            step,
        )?;
        if step % 500 == 0 {
            log::debug!(
                "step {step}: lr {:.2e} cls {:.4} ova {:.4} ent {:.4}",
                rec.lr,
                rec.l_cls,
                rec.l_ova,
                rec.l_ent
            );
        }
        history.records.push(rec);
    }
    Ok((params, history))
}

/// Loss term isolated by a gradient check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossComponent {
    Cls,
    Ova,
    /// Entropy scaled by its objective weight.
    Ent,
    Total,
}

impl LossComponent {
    pub const ALL: [LossComponent; 4] = [LossComponent::Cls, LossComponent::Ova, LossComponent::Ent, LossComponent::Total];

    pub fn name(self) -> &'static str {
        match self {
            LossComponent::Cls => "l_cls",
            LossComponent::Ova => "l_ova",
            LossComponent::Ent => "l_ent",
            LossComponent::Total => "total",
        }
    }
}

/// Value of one component of the objective.
pub fn component_value(obj: &Objective, component: LossComponent) -> f64 {
    match component {
        LossComponent::Cls => obj.cls.value,
        LossComponent::Ova => obj.ova.value,
        LossComponent::Ent => obj.entropy_weight * obj.ent.value,
        LossComponent::Total => obj.total,
    }
}

/// Analytic parameter gradient of one component.
pub fn component_grad(
    params: &ModelParams,
    src: &ForwardResult,
    tgt: &ForwardResult,
    obj: &Objective,
    component: LossComponent,
) -> Result<ModelParams> {
    let k = params.num_known_classes();
    let zero = |fwd: &ForwardResult, w: usize| Matrix::zeros(fwd.batch_size(), w);
    match component {
        LossComponent::Total => obj.param_grad(params, src, tgt),
        LossComponent::Cls => crate::model::backward(params, src, &obj.cls.grad, &zero(src, 2 * k)),
        LossComponent::Ova => crate::model::backward(params, src, &zero(src, k), &obj.ova.grad),
        LossComponent::Ent => {
            let mut d = obj.ent.grad.clone();
            d.scale(obj.entropy_weight);
            crate::model::backward(params, tgt, &zero(tgt, k), &d)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradTolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Default for GradTolerance {
    fn default() -> Self {
        Self { abs: 1e-5, rel: 1e-4 }
    }
}

impl GradTolerance {
    pub fn accepts(&self, analytic: f64, numeric: f64) -> bool {
        let scale = analytic.abs().max(numeric.abs());
        (analytic - numeric).abs() <= self.abs.max(self.rel * scale)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckOptions {
    pub objective: ObjectiveConfig,
    pub eps: f64,
    pub tolerance: GradTolerance,
    pub batch_size: usize,
    /// Parameters are redrawn uniformly in `±param_scale`.
    pub param_scale: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            objective: ObjectiveConfig::default(),
            eps: 1e-5,
            tolerance: GradTolerance::default(),
            batch_size: 4,
            param_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckEntry {
    pub component: LossComponent,
    pub block: ParamBlock,
    pub max_abs_error: f64,
    /// Relative error over coordinates whose gradient magnitude exceeds the
    /// absolute tolerance (zero if there are none).
    pub max_rel_error: f64,
    /// Largest analytic or numeric magnitude seen in the block.
    pub max_magnitude: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub num_params: usize,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradCheckEntry> {
        self.entries.iter().filter(|e| !e.passed)
    }

    pub fn entry(&self, component: LossComponent, block: ParamBlock) -> Option<&GradCheckEntry> {
        self.entries.iter().find(|e| e.component == component && e.block == block)
    }
}

/// Compares analytic gradients of every loss component against central
/// differences on a random model and random source/target batches.
pub fn gradient_check(spec: &ModelSpec, rng: &mut Rng, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    gradient_check_with(spec, rng, opts, component_grad)
}

/// [`gradient_check`] with a caller-supplied analytic gradient, so that a
/// deliberately broken gradient can be shown to fail.
pub fn gradient_check_with<G>(
    spec: &ModelSpec,
    rng: &mut Rng,
    opts: &GradCheckOptions,
    analytic: G,
) -> Result<GradCheckReport>
where
    G: Fn(&ModelParams, &ForwardResult, &ForwardResult, &Objective, LossComponent) -> Result<ModelParams>,
{
    spec.validate()?;
    let mut params = init_model(spec, rng)?;
    for (_, s) in params.slices_mut() {
        for v in s {
            *v = rng.uniform(-opts.param_scale, opts.param_scale);
        }
    }
    let b = opts.batch_size.max(1);
    let mut draw = |rows: usize| Matrix::from_vec(rows, spec.input_dim, (0..rows * spec.input_dim).map(|_| rng.normal()).collect());
    let src = draw(b)?;
    let tgt = draw(b)?;
    let labels: Vec<usize> = (0..b).map(|_| rng.index(spec.num_known_classes)).collect();

    let src_fwd = forward(&params, &src)?;
    let tgt_fwd = forward(&params, &tgt)?;
    let obj = total_objective(&src_fwd, &labels, &tgt_fwd, &opts.objective)?;
    let blocks = params.flat_blocks();
    let flat = params.flatten();

    let mut entries = Vec::new();
    for component in LossComponent::ALL {
        let ana = analytic(&params, &src_fwd, &tgt_fwd, &obj, component)?.flatten();
        let mut scratch = params.clone();
        let numeric = finite_diff_grad(
            |p| {
                scratch.assign_flat(p).expect("same spec");
                let s = forward(&scratch, &src).expect("forward");
                let t = forward(&scratch, &tgt).expect("forward");
                total_objective(&s, &labels, &t, &opts.objective)
                    .map(|o| component_value(&o, component))
                    .unwrap_or(f64::NAN)
            },
            &flat,
            opts.eps,
        )?;
        for block in ParamBlock::ALL {
            let mut e = GradCheckEntry {
                component,
                block,
                max_abs_error: 0.0,
                max_rel_error: 0.0,
                max_magnitude: 0.0,
                passed: true,
            };
            for ((&a, &n), _) in ana.iter().zip(&numeric).zip(&blocks).filter(|(_, &bb)| bb == block) {
                let err = (a - n).abs();
                let mag = a.abs().max(n.abs());
                e.max_abs_error = e.max_abs_error.max(err);
                e.max_magnitude = e.max_magnitude.max(mag);
                if mag > opts.tolerance.abs {
                    e.max_rel_error = e.max_rel_error.max(err / mag);
                }
                e.passed &= opts.tolerance.accepts(a, n);
            }
            entries.push(e);
        }
    }
    Ok(GradCheckReport {
        num_params: flat.len(),
        entries,
    })
}
