use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use causalrank::datagen::{base_from_log, generate_synthetic_base, ingest_weekly_logs};
use causalrank::exp::{
    emit_estimates, emit_report, emit_sweep, estimator_reliability, hash_json, mean_std,
    metric_per_replicate, run_comparison, sweep_capping, sweep_misspecification, sweep_unevenness,
    train_logged, write_run_meta, ExperimentPlan, ReportFormat, Sweep, WORKERS_ENV,
};
use causalrank::io::{fmt_sig, write_json, REPORT_PRECISION};
use causalrank::metrics::{metric_estimate, Estimator};
use causalrank::{CappingParams, DataBundle, MFModel, Method, MetricKind, RunConfig};

#[derive(Parser)]
#[command(
    name = "causalrank",
    version,
    about = "Causal-effect ranking metrics, IPS estimators and debiased pairwise learning",
    after_help = format!("Worker threads default to the number of cores; set {WORKERS_ENV} to override.")
)]
struct Cli {
    /// Sectioned TOML config ([gen], [synthetic], [train], [plan]).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset bundle from a weekly log or the synthetic base.
    Gen(GenArgs),
    /// Train one model and write its checkpoint and training log.
    Train(TrainArgs),
    /// Score a checkpoint on the test replicates.
    Eval(EvalArgs),
    /// Tuned comparison of the plan's methods.
    Compare(PlanArgs),
    /// DLCE across capping thresholds.
    SweepCapping(SweepArgs),
    /// Regenerate and compare across propensity unevenness.
    SweepBeta(SweepArgs),
    /// Regenerate and compare across propensity misspecification.
    SweepXi(SweepArgs),
    /// Estimator MAE study.
    Estimate(PlanArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Bundle directory to create.
    #[arg(long)]
    out: PathBuf,
    /// Weekly log CSV (`user,item,week,y,z`); overrides `input` in the config.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    xi: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Bundle directory.
    #[arg(long)]
    data: PathBuf,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Symmetric capping threshold.
    #[arg(long)]
    chi: Option<f64>,
    /// Validation metric written to the training log.
    #[arg(long, default_value = "CDCG")]
    metric: MetricKind,
    /// Use the surrogate exponents as printed in the pseudo-code listing.
    #[arg(long)]
    algorithm1_literal: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint directory (or a `train` run directory).
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "CP@10,CDCG,CAR")]
    metrics: Vec<MetricKind>,
    /// Symmetric capping threshold for the IPS estimate.
    #[arg(long, default_value_t = 0.0)]
    chi: f64,
}

#[derive(Args)]
struct PlanArgs {
    /// Bundle directory; overrides `plan.dataset`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Run directory; overrides `plan.output`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    plan: PlanArgs,
    /// Sweep values; override `plan.sweep`.
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn plan_from(cfg: &RunConfig, args: &PlanArgs) -> ExperimentPlan {
    let mut plan = cfg.plan.clone();
    if let Some(d) = &args.data {
        plan.dataset = d.clone();
    }
    if let Some(o) = &args.out {
        plan.output = o.clone();
    }
    plan
}

fn gen(cfg: RunConfig, args: GenArgs) -> Result<()> {
    let mut gen = cfg.gen.clone();
    if let Some(s) = args.seed {
        gen.seed = s;
    }
    if let Some(b) = args.beta {
        gen.beta = b;
    }
    if let Some(x) = args.xi {
        gen.xi = x;
    }
    let input = args.input.or(cfg.input.clone());
    let bundle = match &input {
        Some(path) => {
            let log = ingest_weekly_logs(path, gen.min_weeks)
                .with_context(|| format!("ingesting {}", path.display()))?;
            let base = base_from_log(&log, &gen.prior_weight_grid)?;
            let mut b = DataBundle::generate(&base, &gen, &format!("log:{}", path.display()))?;
            b.user_ids = log.user_ids.clone();
            b.item_ids = log.item_ids.clone();
            b
        }
        None => {
            let base = generate_synthetic_base(&cfg.synthetic)?;
            let source = format!("synthetic:{}", serde_json::to_string(&cfg.synthetic)?);
            DataBundle::generate(&base, &gen, &source)?
        }
    };
    bundle.write(&args.out)?;
    eprintln!(
        "wrote bundle {} ({} users, {} items, {} replicates)",
        args.out.display(),
        bundle.n_users(),
        bundle.n_items(),
        bundle.split().total()
    );
    Ok(())
}

fn train(cfg: RunConfig, args: TrainArgs) -> Result<()> {
    let mut tc = cfg.train.clone();
    if let Some(m) = args.method {
        tc.method = m;
    }
    if let Some(s) = args.seed {
        tc.seed = s;
    }
    if let Some(e) = args.epochs {
        tc.epochs = e;
    }
    if let Some(c) = args.chi {
        tc.capping = CappingParams::symmetric(c)?;
    }
    tc.algorithm1_literal |= args.algorithm1_literal;
    let bundle = DataBundle::read(&args.data)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let model = train_logged(&bundle, &tc, args.metric, &args.out.join("train_log.csv"))?;
    let config = serde_json::to_value(&tc)?;
    model.save_checkpoint(&args.out.join("model"), &serde_json::json!({ "train": config }))?;
    write_run_meta(&args.out, "train", &config, &hash_json(&tc)?, tc.seed)?;
    eprintln!("trained {} for {} epochs into {}", tc.method, tc.epochs, args.out.display());
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let bundle = DataBundle::read(&args.data)?;
    let dir = if args.model.join("model").join("user_factors.csv").exists() {
        args.model.join("model")
    } else {
        args.model.clone()
    };
    let model = MFModel::load_checkpoint(&dir)?;
    let rl = model.rank_all()?;
    let capping = CappingParams::symmetric(args.chi)?;
    std::fs::create_dir_all(&args.out)?;
    let mut w = csv::Writer::from_path(args.out.join("eval.csv"))?;
    w.write_record(["metric", "mean", "std", "ips_mean", "ips_std", "chi"])?;
    let mut rows = Vec::new();
    for &kind in &args.metrics {
        kind.validate(bundle.n_items())?;
        let truth = metric_per_replicate(&rl, bundle.test_truth(), kind)?;
        let est = bundle
            .test_observed()
            .iter()
            .map(|o| metric_estimate(&rl, o, kind, Estimator::Ips(capping)))
            .collect::<causalrank::Result<Vec<_>>>()?;
        let (m, s) = mean_std(&truth);
        let (em, es) = mean_std(&est);
        let f = |x| fmt_sig(x, REPORT_PRECISION);
        w.write_record([kind.to_string(), f(m), f(s), f(em), f(es), f(args.chi)])?;
        rows.push(serde_json::json!({
            "metric": kind, "values": truth, "ips_values": est, "mean": m, "std": s,
            "ips_mean": em, "ips_std": es, "chi": args.chi,
        }));
    }
    w.flush()?;
    write_json(&args.out.join("eval.json"), &rows)?;
    let config = serde_json::json!({
        "data": args.data, "model": args.model, "metrics": args.metrics, "chi": args.chi,
    });
    write_run_meta(&args.out, "eval", &config, &hash_json(&config)?, bundle.meta.seed)?;
    Ok(())
}

fn compare(cfg: RunConfig, args: PlanArgs) -> Result<()> {
    let plan = plan_from(&cfg, &args);
    let report = run_comparison(&plan)?;
    emit_report(&report, &plan.output.join("report.csv"), ReportFormat::Csv)?;
    emit_report(&report, &plan.output.join("report.json"), ReportFormat::Json)?;
    write_run_meta(&plan.output, "compare", &serde_json::to_value(&plan)?, &report.config_hash, report.seed)?;
    eprintln!("wrote {}", plan.output.join("report.csv").display());
    Ok(())
}

fn sweep(cfg: RunConfig, args: SweepArgs, command: &str) -> Result<()> {
    let mut plan = plan_from(&cfg, &args.plan);
    if let Some(values) = args.values {
        plan.sweep = match command {
            "sweep-capping" => Sweep::Capping(values),
            "sweep-beta" => Sweep::Beta(values),
            _ => Sweep::Xi(values),
        };
    }
    let report = match (command, &plan.sweep) {
        ("sweep-capping", Sweep::Capping(_)) => sweep_capping(&plan)?,
        ("sweep-beta", Sweep::Beta(_)) => sweep_unevenness(&plan)?,
        ("sweep-xi", Sweep::Xi(_)) => sweep_misspecification(&plan)?,
        _ => bail!("{command} needs matching sweep values (--values or plan.sweep)"),
    };
    emit_sweep(&report, &plan.output)?;
    write_run_meta(&plan.output, command, &serde_json::to_value(&plan)?, &report.config_hash, report.seed)?;
    eprintln!("wrote {}", plan.output.join("sweep.csv").display());
    Ok(())
}

fn estimate(cfg: RunConfig, args: PlanArgs) -> Result<()> {
    let plan = plan_from(&cfg, &args);
    let report = estimator_reliability(&plan)?;
    emit_estimates(&report, &plan.output)?;
    write_run_meta(&plan.output, "estimate", &serde_json::to_value(&plan)?, &report.config_hash, report.seed)?;
    eprintln!("wrote {}", plan.output.join("estimates.csv").display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Gen(a) => gen(cfg, a),
        Command::Train(a) => train(cfg, a),
        Command::Eval(a) => eval(a),
        Command::Compare(a) => compare(cfg, a),
        Command::SweepCapping(a) => sweep(cfg, a, "sweep-capping"),
        Command::SweepBeta(a) => sweep(cfg, a, "sweep-beta"),
        Command::SweepXi(a) => sweep(cfg, a, "sweep-xi"),
        Command::Estimate(a) => estimate(cfg, a),
    }
}
