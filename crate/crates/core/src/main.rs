//! Command-line entry point: generation, training, evaluation, ablation,
//! session replay, and chart emission.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use emer::domain::ObjectiveId;
use emer::evalsuite::{self, EvalConfig};
use emer::plot;
use emer::ranknet::ModelParams;
use emer::synthlog::{self, GeneratorConfig};
use emer::trainer::{self, TrainConfig, Variant};

#[derive(Parser)]
#[command(name = "emer", version, about = "Multi-objective ensemble ranking toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic request log (and optional ground-truth sidecar).
    Gen {
        #[arg(long)]
        users: usize,
        #[arg(long)]
        requests: usize,
        #[arg(long, default_value_t = 500)]
        candidates: usize,
        #[arg(long = "exposure-k", default_value_t = 6)]
        exposure_k: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "noise-sigma", default_value_t = 0.15)]
        noise_sigma: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "truth-out")]
        truth_out: Option<PathBuf>,
    },
    /// Train a model on a log and write the checkpoint and trace.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint: GAUC consistency table plus session replay.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "budget-s", default_value_t = 60.0)]
        budget_s: f64,
        /// Zero the comparative rank features (for nocomp checkpoints).
        #[arg(long = "zero-ranks", default_value_t = false)]
        zero_ranks: bool,
    },
    /// Train and evaluate several variants; emit a combined comparison table.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        variants: String,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Session-budget replay of a checkpoint's ranking over exposed items.
    Replay {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "budget-s", default_value_t = 60.0)]
        budget_s: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render an SVG chart from a CSV report (eval, ablation, or trace).
    Plot {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// `EMER_SEED` stands in for `--seed` when the flag is absent.
fn resolve_seed(flag: Option<u64>) -> Result<Option<u64>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("EMER_SEED") {
        Ok(text) => {
            let seed = text
                .parse::<u64>()
                .with_context(|| format!("EMER_SEED `{text}` is not a valid seed"))?;
            Ok(Some(seed))
        }
        Err(_) => Ok(None),
    }
}

fn read_data(path: &Path) -> Result<Vec<emer::domain::Request>> {
    let log = synthlog::read_log(path)
        .with_context(|| format!("cannot read log {}", path.display()))?;
    if log.is_empty() {
        bail!("log {} contains no requests", path.display());
    }
    Ok(log)
}

fn load_model(path: &Path) -> Result<ModelParams> {
    ModelParams::load(path).with_context(|| format!("cannot load checkpoint {}", path.display()))
}

fn build_train_config(
    config: Option<&Path>,
    steps: Option<usize>,
    variant: Option<&str>,
    seed: Option<u64>,
    log_len: usize,
) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = config {
        cfg.apply_file(path)
            .with_context(|| format!("malformed config {}", path.display()))?;
    }
    if let Some(s) = steps {
        cfg.steps = s;
    }
    if let Some(v) = variant {
        cfg.variant = Variant::from_name(v)?;
    }
    if let Some(s) = resolve_seed(seed)? {
        cfg.seed = s;
    }
    // Single online pass by default when nothing requested a step count.
    if cfg.steps == 0 {
        cfg.steps = log_len;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_gen(
    users: usize,
    requests: usize,
    candidates: usize,
    exposure_k: usize,
    seed: Option<u64>,
    noise_sigma: f64,
    out: &Path,
    truth_out: Option<&Path>,
) -> Result<()> {
    let cfg = GeneratorConfig {
        n_users: users,
        requests_per_user: requests,
        candidates_per_request: candidates,
        exposure_k,
        seed: resolve_seed(seed)?.unwrap_or(0),
        noise_sigma,
    };
    let log = synthlog::generate(&cfg)?;
    synthlog::write_log(out, &log.requests)
        .with_context(|| format!("cannot write log {}", out.display()))?;
    if let Some(tpath) = truth_out {
        synthlog::write_truth(tpath, &log.truths)
            .with_context(|| format!("cannot write truth sidecar {}", tpath.display()))?;
    }
    Ok(())
}

fn cmd_train(
    data: &Path,
    config: Option<&Path>,
    out: &Path,
    trace: Option<&Path>,
    steps: Option<usize>,
    variant: Option<&str>,
    seed: Option<u64>,
) -> Result<()> {
    let log = read_data(data)?;
    let cfg = build_train_config(config, steps, variant, seed, log.len())?;
    let trained = trainer::train(&cfg, &log)?;
    trained
        .params
        .save(out)
        .with_context(|| format!("cannot write checkpoint {}", out.display()))?;
    if let Some(tpath) = trace {
        trainer::write_trace(tpath, &trained.trace)
            .with_context(|| format!("cannot write trace {}", tpath.display()))?;
    }
    Ok(())
}

fn cmd_eval(model: &Path, data: &Path, out: &Path, budget_s: f64, zero_ranks: bool) -> Result<()> {
    let params = load_model(model)?;
    let log = read_data(data)?;
    let cfg = EvalConfig {
        budget_s,
        zero_ranks,
        ..EvalConfig::default()
    };
    let report = evalsuite::evaluate(&params, &log, &cfg)?;
    report
        .write_csv(out)
        .with_context(|| format!("cannot write report {}", out.display()))?;
    Ok(())
}

fn cmd_ablate(
    data: &Path,
    variants: &str,
    out_dir: &Path,
    config: Option<&Path>,
    steps: Option<usize>,
    seed: Option<u64>,
) -> Result<()> {
    let names: Vec<&str> = variants.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if names.is_empty() {
        bail!("--variants list is empty");
    }
    let parsed: Vec<Variant> =
        names.iter().map(|n| Variant::from_name(n)).collect::<Result<_, _>>()?;
    fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))?;
    let log = read_data(data)?;

    let mut tables = Vec::new();
    for variant in &parsed {
        let cfg = build_train_config(config, steps, Some(variant.name()), seed, log.len())?;
        let cfg = TrainConfig { variant: *variant, ..cfg };
        let trained = trainer::train(&cfg, &log)
            .with_context(|| format!("training variant {variant} failed"))?;
        let ckpt = out_dir.join(format!("{variant}.ckpt"));
        trained.params.save(&ckpt)?;
        trainer::write_trace(&out_dir.join(format!("{variant}_trace.csv")), &trained.trace)?;
        let switches = trainer::apply_variant(*variant);
        let eval_cfg = EvalConfig {
            zero_ranks: switches.zero_ranks,
            seed: cfg.seed,
            ..EvalConfig::default()
        };
        let report = evalsuite::evaluate(&trained.params, &log, &eval_cfg)
            .with_context(|| format!("evaluating variant {variant} failed"))?;
        report.write_csv(&out_dir.join(format!("{variant}_report.csv")))?;
        tables.push(report.table);
    }

    let mut combined = String::from("metric");
    for name in &names {
        combined.push_str(&format!(",{name}"));
    }
    combined.push('\n');
    for obj in ObjectiveId::ALL {
        combined.push_str(obj.name());
        for table in &tables {
            combined.push_str(&format!(",{}", table.raw[obj.index()]));
        }
        combined.push('\n');
    }
    for (slot, obj) in ObjectiveId::INTERACTION.iter().enumerate() {
        combined.push_str(&format!("{}_iput", obj.name()));
        for table in &tables {
            combined.push_str(&format!(",{}", table.iput[slot]));
        }
        combined.push('\n');
    }
    combined.push_str("mean");
    for table in &tables {
        combined.push_str(&format!(",{}", table.mean_gauc()));
    }
    combined.push('\n');
    fs::write(out_dir.join("ablation.csv"), combined)
        .with_context(|| format!("cannot write {}", out_dir.join("ablation.csv").display()))?;
    Ok(())
}

fn cmd_replay(model: &Path, data: &Path, budget_s: f64, out: &Path) -> Result<()> {
    let params = load_model(model)?;
    let log = read_data(data)?;
    let scores: Vec<Vec<f64>> = log
        .iter()
        .map(|r| evalsuite::model_scores(&params, r, false))
        .collect::<Result<_, _>>()?;
    let value = evalsuite::replay_log(&log, &scores, budget_s);
    fs::write(out, format!("metric,value\nreplay_expected_interactions,{value}\n"))
        .with_context(|| format!("cannot write {}", out.display()))?;
    Ok(())
}

fn cmd_plot(report: &Path, out: &Path) -> Result<()> {
    let text = fs::read_to_string(report)
        .with_context(|| format!("cannot read report {}", report.display()))?;
    let svg = plot::render(&text)?;
    fs::write(out, svg).with_context(|| format!("cannot write {}", out.display()))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { users, requests, candidates, exposure_k, seed, noise_sigma, out, truth_out } => {
            cmd_gen(users, requests, candidates, exposure_k, seed, noise_sigma, &out, truth_out.as_deref())
                .context("stage gen failed")
        }
        Command::Train { data, config, out, trace, steps, variant, seed } => cmd_train(
            &data,
            config.as_deref(),
            &out,
            trace.as_deref(),
            steps,
            variant.as_deref(),
            seed,
        )
        .context("stage train failed"),
        Command::Eval { model, data, out, budget_s, zero_ranks } => {
            cmd_eval(&model, &data, &out, budget_s, zero_ranks).context("stage eval failed")
        }
        Command::Ablate { data, variants, out_dir, config, steps, seed } => {
            cmd_ablate(&data, &variants, &out_dir, config.as_deref(), steps, seed)
                .context("stage ablate failed")
        }
        Command::Replay { model, data, budget_s, out } => {
            cmd_replay(&model, &data, budget_s, &out).context("stage replay failed")
        }
        Command::Plot { report, out } => cmd_plot(&report, &out).context("stage plot failed"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
