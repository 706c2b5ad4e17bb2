//! Feature extractor, closed-set head and one-vs-all open-set heads.
//!
//! The extractor is a ReLU multilayer perceptron. With no hidden layers and
//! `input_dim == feature_dim` it degenerates to the identity, which is how
//! heads are trained directly on precomputed features.
//!
//! Each one-vs-all head `k` maps a feature vector to a two-dim logit
//! `[known, unknown]`; its known-probability is the first softmax output.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{clamp_prob, two_way_known_prob, Matrix, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub feature_dim: usize,
    pub num_known_classes: usize,
    pub init_scale: f64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_known_classes < 2 {
            return Err(Error::invalid("num_known_classes must be at least 2"));
        }
        if self.input_dim == 0 || self.feature_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::invalid("all layer widths must be at least 1"));
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return Err(Error::invalid("init_scale must be finite and non-negative"));
        }
        Ok(())
    }

    /// Zero-layer extractor: features are the inputs verbatim.
    pub fn is_passthrough(&self) -> bool {
        self.hidden_dims.is_empty() && self.input_dim == self.feature_dim
    }

    /// `(fan_in, fan_out)` of each extractor layer.
    pub fn extractor_shapes(&self) -> Vec<(usize, usize)> {
        if self.is_passthrough() {
            return Vec::new();
        }
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.feature_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn num_params(&self) -> usize {
        let ext: usize = self.extractor_shapes().iter().map(|(i, o)| (i + 1) * o).sum();
        let k = self.num_known_classes;
        ext + k * (self.feature_dim + 1) + k * 2 * (self.feature_dim + 1)
    }
}

/// Affine map `y = x Wᵀ + b`, with `weight` stored as `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Matrix::zeros(fan_out, fan_in),
            bias: vec![0.0; fan_out],
        }
    }

    fn uniform(fan_in: usize, fan_out: usize, scale: f64, rng: &mut Rng) -> Self {
        let bound = scale / (fan_in as f64).sqrt();
        let mut layer = Self::zeros(fan_in, fan_out);
        for w in layer.weight.data_mut() {
            *w = rng.uniform(-bound, bound);
        }
        layer
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let mut y = x.matmul_nt(&self.weight)?;
        for r in 0..y.rows() {
            for (v, b) in y.row_mut(r).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(y)
    }

    pub fn fan_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.rows()
    }
}

/// Coarse parameter groups, used for per-group learning rates and for
/// reporting gradient-check errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamBlock {
    Extractor,
    ClosedHead,
    OvaHeads,
}

impl ParamBlock {
    pub const ALL: [ParamBlock; 3] = [ParamBlock::Extractor, ParamBlock::ClosedHead, ParamBlock::OvaHeads];

    pub fn name(self) -> &'static str {
        match self {
            ParamBlock::Extractor => "extractor",
            ParamBlock::ClosedHead => "closed_head",
            ParamBlock::OvaHeads => "ova_heads",
        }
    }

    pub fn is_head(self) -> bool {
        !matches!(self, ParamBlock::Extractor)
    }
}

impl std::fmt::Display for ParamBlock {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Network weights. The same type doubles as a gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub spec: ModelSpec,
    pub extractor: Vec<Linear>,
    pub closed_head: Linear,
    pub ova_heads: Vec<Linear>,
}

/// Uniform `±init_scale/√fan_in` weights and zero biases for the extractor
/// and the closed head. One-vs-all heads start at exactly zero so that every
/// head initially reports a known-probability of 0.5.
pub fn init_model(spec: &ModelSpec, rng: &mut Rng) -> Result<ModelParams> {
    spec.validate()?;
    let extractor = spec
        .extractor_shapes()
        .into_iter()
        .map(|(i, o)| Linear::uniform(i, o, spec.init_scale, rng))
        .collect();
    let closed_head = Linear::uniform(spec.feature_dim, spec.num_known_classes, spec.init_scale, rng);
    let ova_heads = (0..spec.num_known_classes)
        .map(|_| Linear::zeros(spec.feature_dim, 2))
        .collect();
    Ok(ModelParams {
        spec: spec.clone(),
        extractor,
        closed_head,
        ova_heads,
    })
}

impl ModelParams {
    pub fn zeros_like(spec: &ModelSpec) -> Self {
        Self {
            spec: spec.clone(),
            extractor: spec
                .extractor_shapes()
                .into_iter()
                .map(|(i, o)| Linear::zeros(i, o))
                .collect(),
            closed_head: Linear::zeros(spec.feature_dim, spec.num_known_classes),
            ova_heads: (0..spec.num_known_classes)
                .map(|_| Linear::zeros(spec.feature_dim, 2))
                .collect(),
        }
    }

    pub fn num_known_classes(&self) -> usize {
        self.spec.num_known_classes
    }

    /// Every parameter slice tagged with its block, in canonical order:
    /// extractor layers, closed head, then one-vs-all heads by class. Within
    /// a layer the weight (row-major) precedes the bias.
    pub fn slices(&self) -> Vec<(ParamBlock, &[f64])> {
        let mut out = Vec::new();
        for l in &self.extractor {
            out.push((ParamBlock::Extractor, l.weight.data()));
            out.push((ParamBlock::Extractor, l.bias.as_slice()));
        }
        out.push((ParamBlock::ClosedHead, self.closed_head.weight.data()));
        out.push((ParamBlock::ClosedHead, self.closed_head.bias.as_slice()));
        for h in &self.ova_heads {
            out.push((ParamBlock::OvaHeads, h.weight.data()));
            out.push((ParamBlock::OvaHeads, h.bias.as_slice()));
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<(ParamBlock, &mut [f64])> {
        let mut out = Vec::new();
        for l in &mut self.extractor {
            out.push((ParamBlock::Extractor, l.weight.data_mut()));
            out.push((ParamBlock::Extractor, l.bias.as_mut_slice()));
        }
        out.push((ParamBlock::ClosedHead, self.closed_head.weight.data_mut()));
        out.push((ParamBlock::ClosedHead, self.closed_head.bias.as_mut_slice()));
        for h in &mut self.ova_heads {
            out.push((ParamBlock::OvaHeads, h.weight.data_mut()));
            out.push((ParamBlock::OvaHeads, h.bias.as_mut_slice()));
        }
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().into_iter().flat_map(|(_, s)| s.iter().copied()).collect()
    }

    /// Block tag of every entry of [`flatten`](Self::flatten).
    pub fn flat_blocks(&self) -> Vec<ParamBlock> {
        self.slices()
            .into_iter()
            .flat_map(|(b, s)| std::iter::repeat(b).take(s.len()))
            .collect()
    }

    pub fn unflatten(spec: &ModelSpec, values: &[f64]) -> Result<Self> {
        let mut p = Self::zeros_like(spec);
        p.assign_flat(values)?;
        Ok(p)
    }

    pub fn assign_flat(&mut self, values: &[f64]) -> Result<()> {
        let expected = self.spec.num_params();
        if values.len() != expected {
            return Err(Error::invalid(format!(
                "expected {expected} parameters, got {}",
                values.len()
            )));
        }
        let mut offset = 0;
        for (_, s) in self.slices_mut() {
            let n = s.len();
            s.copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|(_, s)| s.iter().all(|v| v.is_finite()))
    }

    /// Applies `f(block, param, other)` elementwise against a same-shaped
    /// parameter set.
    pub fn zip_apply(&mut self, other: &ModelParams, mut f: impl FnMut(ParamBlock, &mut f64, f64)) {
        for ((block, dst), (_, src)) in self.slices_mut().into_iter().zip(other.slices()) {
            for (d, &s) in dst.iter_mut().zip(src) {
                f(block, d, s);
            }
        }
    }

    /// Largest absolute entry per block.
    pub fn max_abs_by_block(&self) -> Vec<(ParamBlock, f64)> {
        ParamBlock::ALL
            .iter()
            .map(|&b| {
                let m = self
                    .slices()
                    .into_iter()
                    .filter(|(bb, _)| *bb == b)
                    .flat_map(|(_, s)| s.iter().map(|v| v.abs()))
                    .fold(0.0, f64::max);
                (b, m)
            })
            .collect()
    }
}

/// Outputs of a forward pass plus what backprop needs.
#[derive(Debug, Clone)]
pub struct ForwardResult {
    pub features: Matrix,
    pub closed_logits: Matrix,
    /// `batch × 2|L_s|`; columns `2k` and `2k+1` are head `k`'s known and
    /// unknown logits.
    pub ova_logits: Matrix,
    /// `batch × |L_s|`, clamped into `[PROB_EPS, 1 - PROB_EPS]`.
    pub ova_known_prob: Matrix,
    /// Input of each extractor layer; entry 0 is the batch itself.
    layer_inputs: Vec<Matrix>,
}

impl ForwardResult {
    pub fn batch_size(&self) -> usize {
        self.features.rows()
    }
}

pub fn forward(params: &ModelParams, x: &Matrix) -> Result<ForwardResult> {
    let spec = &params.spec;
    if x.cols() != spec.input_dim {
        return Err(Error::invalid(format!(
            "input has {} columns, model expects {}",
            x.cols(),
            spec.input_dim
        )));
    }
    let n_layers = params.extractor.len();
    let mut layer_inputs = Vec::with_capacity(n_layers);
    let mut h = x.clone();
    for (i, layer) in params.extractor.iter().enumerate() {
        let mut out = layer.apply(&h)?;
        if i + 1 < n_layers {
            out.map_inplace(|v| if v < 0.0 { 0.0 } else { v });
        }
        layer_inputs.push(std::mem::replace(&mut h, out));
    }
    let features = h;

    let closed_logits = params.closed_head.apply(&features)?;

    let k = spec.num_known_classes;
    let batch = features.rows();
    let mut ova_logits = Matrix::zeros(batch, 2 * k);
    let mut ova_known_prob = Matrix::zeros(batch, k);
    for (c, head) in params.ova_heads.iter().enumerate() {
        let z = head.apply(&features)?;
        for i in 0..batch {
            let (known, unknown) = (z[(i, 0)], z[(i, 1)]);
            ova_logits[(i, 2 * c)] = known;
            ova_logits[(i, 2 * c + 1)] = unknown;
            ova_known_prob[(i, c)] = clamp_prob(two_way_known_prob(known, unknown));
        }
    }

    Ok(ForwardResult {
        features,
        closed_logits,
        ova_logits,
        ova_known_prob,
        layer_inputs,
    })
}

/// Backpropagates logit gradients into a parameter gradient.
///
/// `d_closed` is `batch × |L_s|` and `d_ova` is `batch × 2|L_s|`, laid out
/// like [`ForwardResult::ova_logits`]. Both heads feed the shared extractor.
pub fn backward(
    params: &ModelParams,
    fwd: &ForwardResult,
    d_closed: &Matrix,
    d_ova: &Matrix,
) -> Result<ModelParams> {
    let spec = &params.spec;
    let batch = fwd.batch_size();
    let k = spec.num_known_classes;
    if d_closed.shape() != (batch, k) || d_ova.shape() != (batch, 2 * k) {
        return Err(Error::invalid("logit gradient shapes do not match the forward pass"));
    }
    let mut grad = ModelParams::zeros_like(spec);

    grad.closed_head.weight = d_closed.matmul_tn(&fwd.features)?;
    grad.closed_head.bias = d_closed.col_sums();
    let mut d_features = d_closed.matmul(&params.closed_head.weight)?;

    for (c, head) in params.ova_heads.iter().enumerate() {
        let mut dz = Matrix::zeros(batch, 2);
        let mut touched = false;
        for i in 0..batch {
            let (a, b) = (d_ova[(i, 2 * c)], d_ova[(i, 2 * c + 1)]);
            dz[(i, 0)] = a;
            dz[(i, 1)] = b;
            touched |= a != 0.0 || b != 0.0;
        }
        if !touched {
            continue;
        }
        grad.ova_heads[c].weight = dz.matmul_tn(&fwd.features)?;
        grad.ova_heads[c].bias = dz.col_sums();
        d_features.axpy(1.0, &dz.matmul(&head.weight)?)?;
    }

    let mut delta = d_features;
    for (i, layer) in params.extractor.iter().enumerate().rev() {
        let input = &fwd.layer_inputs[i];
        grad.extractor[i].weight = delta.matmul_tn(input)?;
        grad.extractor[i].bias = delta.col_sums();
        if i > 0 {
            let mut d_in = delta.matmul(&layer.weight)?;
            // input to layer i is the ReLU output of layer i-1
            for (d, &a) in d_in.data_mut().iter_mut().zip(input.data()) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
            delta = d_in;
        }
    }
    Ok(grad)
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"OVANCKP1";
const CHECKPOINT_VERSION: u32 = 1;

/// Writes a checkpoint.
///
/// Layout (all little-endian): the 8-byte magic `OVANCKP1`, a `u32`
/// version, then the spec as `u64 input_dim`, `u64 n_hidden`, `n_hidden`
/// × `u64` widths, `u64 feature_dim`, `u64 num_known_classes`,
/// `f64 init_scale`, and finally `u64 n_params` followed by every parameter
/// as `f64` in [`ModelParams::flatten`] order.
pub fn write_checkpoint<W: Write>(params: &ModelParams, mut w: W) -> Result<()> {
    let spec = &params.spec;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let mut header = vec![spec.input_dim as u64, spec.hidden_dims.len() as u64];
    header.extend(spec.hidden_dims.iter().map(|&d| d as u64));
    header.push(spec.feature_dim as u64);
    header.push(spec.num_known_classes as u64);
    for v in header {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&spec.init_scale.to_le_bytes())?;
    let flat = params.flatten();
    w.write_all(&(flat.len() as u64).to_le_bytes())?;
    for v in flat {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ModelParams> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let read_u64 = |r: &mut R| -> Result<u64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    };
    let input_dim = read_u64(&mut r)? as usize;
    let n_hidden = read_u64(&mut r)? as usize;
    if n_hidden > 1024 {
        return Err(Error::Checkpoint(format!("implausible hidden layer count {n_hidden}")));
    }
    let hidden_dims = (0..n_hidden)
        .map(|_| read_u64(&mut r).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let feature_dim = read_u64(&mut r)? as usize;
    let num_known_classes = read_u64(&mut r)? as usize;
    let init_scale = f64::from_bits(read_u64(&mut r)?);
    let spec = ModelSpec {
        input_dim,
        hidden_dims,
        feature_dim,
        num_known_classes,
        init_scale,
    };
    spec.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
    let n = read_u64(&mut r)? as usize;
    if n != spec.num_params() {
        return Err(Error::Checkpoint(format!(
            "parameter count {n} does not match spec ({})",
            spec.num_params()
        )));
    }
    let values = (0..n)
        .map(|_| read_u64(&mut r).map(f64::from_bits))
        .collect::<Result<Vec<_>>>()?;
    ModelParams::unflatten(&spec, &values)
}
