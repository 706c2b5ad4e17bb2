//! Single runs: data, training, evaluation and the output directory.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use ovanet_core::eval::{emit_histogram, fixed_ratio_rejection, write_histogram_csv};
use ovanet_core::model::write_checkpoint;
use ovanet_core::{
    compute_metrics, generate_synthetic, load_feature_file, predict, train, CategoryShiftSpec, Dataset, Domain,
    MetricsReport, ModelParams, PredictionOutcome, TrainHistory,
};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const PER_CLASS_CSV: &str = "per_class.csv";
pub const HISTORY_CSV: &str = "history.csv";
pub const HISTOGRAM_CSV: &str = "histogram.csv";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const CONFIG_RESOLVED: &str = "config.resolved";

/// Every file a run directory holds.
pub const RUN_FILES: [&str; 7] = [
    METRICS_JSON,
    METRICS_CSV,
    PER_CLASS_CSV,
    HISTORY_CSV,
    HISTOGRAM_CSV,
    CHECKPOINT,
    CONFIG_RESOLVED,
];

pub struct ExperimentData {
    pub split: CategoryShiftSpec,
    pub source: Dataset,
    pub target: Dataset,
}

/// Generates or loads the source and target sets of a resolved config.
pub fn load_data(cfg: &ExperimentConfig) -> Result<ExperimentData> {
    let split = cfg.data.split()?;
    let (source, target) = match (&cfg.data.synthetic, &cfg.data.files) {
        (Some(s), None) => generate_synthetic(&split, s)?,
        (None, Some(f)) => (
            load_feature_file(&f.source, Domain::Source)?,
            load_feature_file(&f.target, Domain::Target)?,
        ),
        _ => return Err(CliError::Config("data: specify exactly one data source".into())),
    };
    if source.dim() != target.dim() {
        return Err(CliError::Config(format!(
            "source has {} features but target has {}",
            source.dim(),
            target.dim()
        )));
    }
    Ok(ExperimentData { split, source, target })
}

/// Everything a run produces, before anything is written.
pub struct RunOutput {
    pub config: ExperimentConfig,
    pub metrics: MetricsReport,
    /// Same model, fixed-ratio rejection instead of the learned boundary.
    pub baseline: MetricsReport,
    pub history: TrainHistory,
    pub params: ModelParams,
    pub predictions: Vec<PredictionOutcome>,
    pub eval_labels: Vec<usize>,
}

/// Trains on the source labels and target features, then evaluates on the
/// full target set. Target labels are read only after training returns.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let cfg = cfg.resolve()?;
    let data = load_data(&cfg)?;
    let src_labels = data.source.known_labels(&data.split)?;
    let spec = cfg.model_spec(data.source.dim());
    let (params, history) = train(&cfg.train, &data.source.features, &src_labels, &data.target.features, &spec)?;

    let predictions = predict(&params, &data.target.features, cfg.eval.threshold)?;
    let eval_labels = data.target.eval_labels(&data.split)?;
    let num_known = data.split.num_known();
    let metrics = compute_metrics(&predictions, &eval_labels, num_known)?;
    let rejected = fixed_ratio_rejection(&predictions, cfg.eval.reject_quantile, num_known)?;
    let baseline = compute_metrics(&rejected, &eval_labels, num_known)?;
    Ok(RunOutput {
        config: cfg,
        metrics,
        baseline,
        history,
        params,
        predictions,
        eval_labels,
    })
}

pub struct RunSummary {
    pub dir: PathBuf,
    pub metrics: MetricsReport,
}

/// Runs one experiment and writes `<out_dir>/<name>/`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let out = execute(cfg)?;
    let dir = out.config.out_dir.join(&out.config.name);
    write_run(&out, &dir)?;
    Ok(RunSummary {
        dir,
        metrics: out.metrics,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

pub fn write_run(out: &RunOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let num_known = out.params.num_known_classes();

    let path = dir.join(METRICS_JSON);
    std::fs::write(&path, out.metrics.to_json() + "\n").map_err(|e| CliError::io(&path, e))?;
    out.metrics.write_csv(create(&dir.join(METRICS_CSV))?)?;
    out.metrics.write_per_class_csv(create(&dir.join(PER_CLASS_CSV))?)?;
    out.history.write_csv(create(&dir.join(HISTORY_CSV))?)?;
    let bins = emit_histogram(&out.predictions, &out.eval_labels, num_known, out.config.eval.n_bins)?;
    write_histogram_csv(&bins, create(&dir.join(HISTOGRAM_CSV))?)?;
    write_checkpoint(&out.params, create(&dir.join(CHECKPOINT))?)?;
    let path = dir.join(CONFIG_RESOLVED);
    std::fs::write(&path, out.config.to_toml()?).map_err(|e| CliError::io(&path, e))?;
    Ok(())
}
