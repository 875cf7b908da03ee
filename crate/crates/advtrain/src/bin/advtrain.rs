//! Experiment harness CLI.
//!
//! Subcommands:
//!   preset <name> [--seed N] [--out DIR] [--set key=value ...]
//!   custom <config.toml> [--out DIR] [--set key=value ...]
//!   plotdata <dir>
//!   risk --theta <v,..> --model <model.toml> --epsilon <e> [--xi x] [--norm l2|linf]
//!   optimum --model <model.toml> --epsilon <e>
//!
//! Environment: ADVTRAIN_OUT sets the output root for presets without an
//! explicit --out; ADVTRAIN_THREADS caps the worker pool.

use advtrain::attack::Norm;
use advtrain::config::ModelSpec;
use advtrain::datagen::GenModel;
use advtrain::error::{Error, Result};
use advtrain::experiment::{emit_plotdata, run_config, RunOutput};
use advtrain::presets::{preset_config, risk_csv_row, run_preset};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "advtrain",
    version,
    about = "Adversarial training experiments for linear models and two-layer networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a named preset experiment.
    Preset(PresetArgs),
    /// Run a custom experiment from a config file.
    Custom(CustomArgs),
    /// Emit tidy plot data (mean and one-sd band per series) from a run directory.
    Plotdata { dir: PathBuf },
    /// One-shot closed-form adversarial risk of a given theta.
    Risk(RiskArgs),
    /// Robust optimum (theta*, R*) of a model under the L2 attack.
    Optimum(OptimumArgs),
}

#[derive(Args)]
struct PresetArgs {
    /// One of the named presets; an unknown name lists the valid ones.
    name: String,
    /// Root seed (replication k uses seed + k).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: $ADVTRAIN_OUT/<preset> or results/<preset>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dotted-path config overrides, e.g. --set dataset.replications=5
    #[arg(long = "set", value_parser = parse_kv)]
    set: Vec<(String, String)>,
}

#[derive(Args)]
struct CustomArgs {
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "set", value_parser = parse_kv)]
    set: Vec<(String, String)>,
}

#[derive(Args)]
struct RiskArgs {
    /// Comma-separated coefficients.
    #[arg(long)]
    theta: String,
    /// TOML file with theta0/sigma/noise_var.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.0)]
    xi: f64,
    #[arg(long, default_value = "l2")]
    norm: String,
}

#[derive(Args)]
struct OptimumArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    epsilon: f64,
}

fn parse_kv(s: &str) -> std::result::Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .ok_or_else(|| format!("expected key=value, got `{s}`"))
}

fn parse_vec(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|e| format!("bad number `{p}`: {e}"))
        })
        .collect()
}

fn load_model(path: &Path) -> Result<GenModel> {
    let text = std::fs::read_to_string(path)?;
    let spec: ModelSpec = toml::from_str(&text).map_err(|e| Error::Config {
        path: path.display().to_string(),
        message: e.message().to_string(),
    })?;
    // Reuse the experiment-config plumbing for matrix loading.
    let carrier = advtrain::config::ExperimentConfig {
        experiment: "model".into(),
        out_dir: None,
        model: spec,
        dataset: advtrain::config::DatasetSpec {
            n: 1,
            seed: 0,
            replications: 1,
        },
        attack: advtrain::config::AttackSection {
            norm: Norm::L2,
            epsilon: advtrain::config::Sweep::Single(0.0),
            xi: advtrain::config::Sweep::Single(0.0),
            method: advtrain::attack::Method::Exact,
        },
        train: advtrain::config::TrainSection {
            eta: advtrain::config::EtaSpec::Fixed(0.1),
            max_iters: 1,
            lambda_l1: advtrain::config::Sweep::Single(0.0),
            init: advtrain::config::InitSpec::Name(advtrain::config::InitName::Zero),
            stop: advtrain::config::StopSpec::Name(advtrain::config::StopName::Fixed),
            snapshot_every: 0,
            schedule_l: None,
        },
        network: None,
    };
    carrier.build_model(path.parent().unwrap_or(Path::new(".")))
}

fn parse_norm(s: &str) -> Result<Norm> {
    match s {
        "l2" => Ok(Norm::L2),
        "linf" => Ok(Norm::Linf),
        other => Err(Error::InvalidArgument(format!(
            "unknown norm `{other}` (expected l2 or linf)"
        ))),
    }
}

fn report_run(out: &RunOutput) -> i32 {
    println!("wrote {}", out.out_dir.display());
    for s in &out.table.summaries {
        println!(
            "  {} [{}]: mean {} sd {} (n = {})",
            s.metric, s.group, s.mean, s.sd, s.count
        );
    }
    if out.failed_replications > 0 {
        eprintln!(
            "{} replication(s) failed; see rows.csv",
            out.failed_replications
        );
        2
    } else {
        0
    }
}

fn run() -> Result<i32> {
    if let Ok(threads) = std::env::var("ADVTRAIN_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
    }
    let cli = Cli::parse();
    match cli.command {
        Command::Preset(args) => {
            // Surface the name check before doing any work.
            preset_config(&args.name)?;
            let out = run_preset(&args.name, args.seed, args.out.as_deref(), &args.set)?;
            Ok(report_run(&out))
        }
        Command::Custom(args) => {
            let mut text = std::fs::read_to_string(&args.config)?;
            if !args.set.is_empty() {
                text = advtrain::config::apply_overrides(&text, &args.set)?;
            }
            let cfg = advtrain::config::parse_config(&text)?;
            cfg.validate()?;
            let out_dir = args.out.or_else(|| cfg.out_dir.clone()).unwrap_or_else(|| {
                let root = std::env::var("ADVTRAIN_OUT").unwrap_or_else(|_| "results".into());
                Path::new(&root).join(&cfg.experiment)
            });
            let base = args.config.parent().unwrap_or(Path::new(".")).to_path_buf();
            let out = run_config(&cfg, &out_dir, &base)?;
            Ok(report_run(&out))
        }
        Command::Plotdata { dir } => {
            let written = emit_plotdata(&dir)?;
            for p in written {
                println!("wrote {}", p.display());
            }
            Ok(0)
        }
        Command::Risk(args) => {
            let model = load_model(&args.model)?;
            let theta = ndarray::Array1::from_vec(
                parse_vec(&args.theta).map_err(Error::InvalidArgument)?,
            );
            if theta.len() != model.dim() {
                return Err(Error::DimensionMismatch(format!(
                    "theta has {} entries, model dimension is {}",
                    theta.len(),
                    model.dim()
                )));
            }
            let norm = parse_norm(&args.norm)?;
            print!(
                "{}",
                risk_csv_row(&theta, &model, args.epsilon, args.xi, norm)
            );
            Ok(0)
        }
        Command::Optimum(args) => {
            let model = load_model(&args.model)?;
            let opt = advtrain::risk::optimal_theta(&model, args.epsilon, Norm::L2)?;
            let coords: Vec<String> = opt.theta_star.iter().map(|v| v.to_string()).collect();
            println!("r_star,{}", opt.r_star);
            println!(
                "kappa,{}",
                opt.kappa.map(|k| k.to_string()).unwrap_or_default()
            );
            println!("theta_star,{}", coords.join(","));
            Ok(0)
        }
    }
}

fn main() {
    match run() {
        Ok(code) => std::process::exit(code),
        Err(Error::UnknownPreset(name, list)) => {
            eprintln!("unknown preset `{name}`");
            eprintln!("valid presets: {list}");
            std::process::exit(1);
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
