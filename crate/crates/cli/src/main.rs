use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ovanet_core::trainer::GradCheckOptions;
use ovanet_core::{gradient_check, write_feature_file, ModelSpec, Rng};
use ovanet_cli::config::ExperimentConfig;
use ovanet_cli::error::{CliError, Result};
use ovanet_cli::experiment::{load_data, run_experiment};
use ovanet_cli::sweep::{self, SweepResult};

#[derive(Parser)]
#[command(name = "ovanet", version, about = "One-vs-all open-set domain adaptation experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed. For sweeps this replaces the seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate once, writing `<out>/<name>/`.
    Run,
    /// Vary the number of unknown target classes.
    SweepOpenness {
        #[arg(long, value_delimiter = ',')]
        counts: Option<Vec<usize>>,
    },
    /// Vary the entropy weight.
    SweepLambda {
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
    },
    /// Vary the number of known classes with the unknown ones fixed.
    SweepKnown {
        #[arg(long, value_delimiter = ',')]
        counts: Option<Vec<usize>>,
    },
    /// HNCS on/off × OEM on/off.
    Ablate,
    /// Compare analytic and finite-difference gradients on random small
    /// models, or on the configured architecture.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        models: usize,
        /// Check the configured model instead of random small ones. Slow for
        /// wide models: every parameter costs two objective evaluations.
        #[arg(long)]
        configured: bool,
    },
    /// Write the configured synthetic source and target sets as CSV.
    GenData,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.common.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = Some(seed);
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    cfg.resolve()
}

fn dispatch(cli: &Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    let quiet = cli.common.quiet;
    let seeds = match cli.common.seed {
        Some(s) => vec![s],
        None => cfg.sweep.seeds.clone(),
    };
    match &cli.command {
        Command::Run => {
            let summary = run_experiment(&cfg)?;
            if !quiet {
                println!("{}", summary.metrics.to_json());
                println!("wrote {}", summary.dir.display());
            }
        }
        Command::SweepOpenness { counts } => {
            let counts = counts.clone().unwrap_or_else(|| cfg.sweep.unknown_counts.clone());
            let res = sweep::openness_sweep(&cfg, &counts, &seeds)?;
            finish_sweep(&cfg, "sweep_openness.csv", &res, quiet)?;
        }
        Command::SweepLambda { lambdas } => {
            let lambdas = lambdas.clone().unwrap_or_else(|| cfg.sweep.lambdas.clone());
            let res = sweep::lambda_sweep(&cfg, &lambdas, &seeds)?;
            finish_sweep(&cfg, "sweep_lambda.csv", &res, quiet)?;
        }
        Command::SweepKnown { counts } => {
            let counts = counts.clone().unwrap_or_else(|| cfg.sweep.known_counts.clone());
            let res = sweep::known_class_sweep(&cfg, &counts, &seeds)?;
            finish_sweep(&cfg, "sweep_known.csv", &res, quiet)?;
        }
        Command::Ablate => {
            let res = sweep::ablation_grid(&cfg, &seeds)?;
            finish_sweep(&cfg, "ablation.csv", &res, quiet)?;
        }
        Command::Gradcheck { models, configured } => gradcheck(&cfg, *models, *configured, quiet)?,
        Command::GenData => gen_data(&cfg, quiet)?,
    }
    Ok(())
}

fn finish_sweep(cfg: &ExperimentConfig, file: &str, res: &SweepResult, quiet: bool) -> Result<()> {
    let dir = cfg.out_dir.join(&cfg.name);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let path = dir.join(file);
    let f = std::fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
    res.write_csv(f)?;
    if !quiet {
        print_summary(res, &path);
    }
    let failed = res.failures().count();
    if failed > 0 {
        return Err(CliError::Runtime(format!(
            "{failed} of {} sweep rows failed; see the error column of {}",
            res.rows.len(),
            path.display()
        )));
    }
    Ok(())
}

fn print_summary(res: &SweepResult, path: &Path) {
    let has_baseline = res.ok_rows().any(|(_, m)| m.baseline.is_some());
    print!("{:>16} {:>9} {:>9} {:>9}", res.parameter, "H-score", "acc_c", "UNK");
    if has_baseline {
        print!(" {:>12}", "fixed-ratio H");
    }
    println!();
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
    for value in res.values() {
        print!(
            "{:>16} {:>9} {:>9} {:>9}",
            value,
            fmt(sweep::median(&res.metric(&value, |r| r.h_score))),
            fmt(sweep::median(&res.metric(&value, |r| r.acc_c))),
            fmt(sweep::median(&res.metric(&value, |r| r.unk_accuracy))),
        );
        if has_baseline {
            print!(" {:>12}", fmt(sweep::median(&res.baseline_metric(&value, |r| r.h_score))));
        }
        println!();
    }
    println!("medians over seeds; rows in {}", path.display());
}

/// Random model with at most a few hundred parameters.
fn small_spec(rng: &mut Rng) -> ModelSpec {
    ModelSpec {
        input_dim: 2 + rng.index(6),
        hidden_dims: (0..rng.index(3)).map(|_| 2 + rng.index(10)).collect(),
        feature_dim: 2 + rng.index(8),
        num_known_classes: 2 + rng.index(7),
        init_scale: 1.0,
    }
}

fn gradcheck(cfg: &ExperimentConfig, models: usize, configured: bool, quiet: bool) -> Result<()> {
    let configured_spec = if configured {
        let dim = match &cfg.data.synthetic {
            Some(s) => s.dim,
            None => load_data(cfg)?.source.dim(),
        };
        Some(cfg.model_spec(dim))
    } else {
        None
    };
    let opts = GradCheckOptions {
        objective: cfg.train.objective(),
        ..Default::default()
    };
    let root = Rng::new(cfg.train.seed);
    let mut failed = 0;
    for i in 0..models {
        let mut rng = root.split(i as u64);
        let spec = configured_spec.clone().unwrap_or_else(|| small_spec(&mut rng));
        let report = gradient_check(&spec, &mut rng, &opts)?;
        if !quiet {
            println!(
                "model {i:>3}: {} params, max rel error {:.2e} {}",
                report.num_params,
                report.max_rel_error(),
                if report.passed() { "ok" } else { "FAILED" }
            );
        }
        for e in report.failures() {
            failed += 1;
            eprintln!(
                "model {i}: {} gradient wrong in {} (abs {:.2e}, rel {:.2e})",
                e.component.name(),
                e.block,
                e.max_abs_error,
                e.max_rel_error
            );
        }
    }
    if failed > 0 {
        return Err(CliError::Runtime(format!(
            "{failed} gradient blocks disagree with finite differences"
        )));
    }
    Ok(())
}

fn gen_data(cfg: &ExperimentConfig, quiet: bool) -> Result<()> {
    if cfg.data.synthetic.is_none() {
        return Err(CliError::Config("gen-data needs a [data.synthetic] section".into()));
    }
    let data = load_data(cfg)?;
    let dir = cfg.out_dir.join(&cfg.name);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    write_feature_file(dir.join("source.csv"), &data.source)?;
    write_feature_file(dir.join("target.csv"), &data.target)?;
    if !quiet {
        println!(
            "wrote {} source and {} target rows to {}",
            data.source.len(),
            data.target.len(),
            dir.display()
        );
    }
    Ok(())
}
