//! One-vs-all open-set classification for universal domain adaptation.
//!
//! A shared feature extractor feeds a closed-set head over the known
//! (source) classes and one two-way "known vs. not this class" head per
//! known class. Source samples train the closed head with cross-entropy
//! and the one-vs-all heads on the positive class plus the hardest
//! negative; unlabeled target samples are pushed towards confident
//! one-vs-all outputs by entropy minimisation. At test time the closed head
//! picks a class and that class's one-vs-all head decides known/unknown at
//! its natural 0.5 boundary.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod trainer;

pub use data::{
    batch_iter, generate_synthetic, load_feature_file, make_category_shift, write_feature_file, CategoryShiftSpec,
    CenterLayout, Dataset, Domain, SynthConfig,
};
pub use error::{Error, Result};
pub use eval::{auroc, compute_metrics, h_score, predict, MetricsReport, PredictionOutcome};
pub use losses::{total_objective, EntropyReduction, NegativeSampling, ObjectiveConfig};
pub use model::{forward, init_model, ForwardResult, ModelParams, ModelSpec, ParamBlock};
pub use numerics::{Matrix, Rng};
pub use trainer::{gradient_check, lr_schedule, train, GradCheckOptions, GradCheckReport, TrainConfig, TrainHistory};
