use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use memaudit::datastore::{write_json, write_tensor, DType, Tensor};
use memaudit::eval::{AblationGrid, DEFAULT_LOSS_DECREASE, DEFAULT_TPR_TARGET};
use memaudit::layout::{
    hyperparameters, read_dataset, train_suite_to_disk, write_dataset, DatasetInfo, RunDirectory, MANIFEST_FILE,
};
use memaudit::lira::{
    asr_significance_threshold, global_lira_asr, ground_truth_from_quantile, local_lira_score, LiraConfig,
    VarianceMode, DEFAULT_QUANTILE, DEFAULT_SHADOWS,
};
use memaudit::pipeline::{ablation_grid, memorization_agreement, predict_pipeline, ArtifactSource, PipelineConfig};
use memaudit::predictors::MahalanobisOptions;
use memaudit::psmi::{FitScope, DEFAULT_DIRECTIONS};
use memaudit::synthetic::{sample_mixture, OutlierLawRegistry, ShadowConfig, MixtureConfig, TrainConfig};
use memaudit::{Error, Result};

mod schema;

const SEED_ENV: &str = "MEMAUDIT_SEED";

#[derive(Parser, Debug)]
#[command(name = "memaudit", version, about = "Predict and verify training-sample memorization")]
struct Cli {
    /// Master seed; the MEMAUDIT_SEED environment variable takes precedence.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Run directory; every input and output path is relative to it.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads (0 = all cores). Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a synthetic dataset with label-noise outliers.
    Gen(GenArgs),
    /// Train the shadow suite (resumes an interrupted run).
    Shadow(ShadowArgs),
    /// Predict memorized samples from an early checkpoint.
    Predict(PredictArgs),
    /// Evaluate predictors over a checkpoint x layer grid.
    Eval(EvalArgs),
    /// Score memorization with the likelihood-ratio attack.
    Lira(LiraArgs),
    /// Write the artifact schema and check tensor files against it.
    ExportSchema(SchemaArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, default_value_t = 16)]
    d: usize,
    /// Outlier rate in [0, 1].
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    /// Class means sit at +/- separation along the first axis.
    #[arg(long, default_value_t = 2.0)]
    separation: f64,
    #[arg(long, default_value = "class-mixture")]
    law: String,
    #[arg(long, default_value = "mixture")]
    name: String,
}

#[derive(Args, Debug)]
struct ShadowArgs {
    /// Models in the suite, target included.
    #[arg(long, default_value_t = DEFAULT_SHADOWS)]
    shadows: usize,
    #[arg(long, default_value_t = 0)]
    target_split: u32,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    checkpoint_stride: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Hidden widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
}

#[derive(Args, Debug, Clone)]
struct ScoringArgs {
    /// Fraction by which the median training loss must fall.
    #[arg(long, default_value_t = DEFAULT_LOSS_DECREASE)]
    loss_decrease: f64,
    #[arg(long, default_value_t = DEFAULT_DIRECTIONS)]
    directions: usize,
    /// Fit the class Gaussians without the scored sample.
    #[arg(long)]
    leave_one_out: bool,
    /// Fraction of members labelled memorized by the ground truth.
    #[arg(long, default_value_t = DEFAULT_QUANTILE)]
    quantile: f64,
    #[arg(long, default_value_t = DEFAULT_TPR_TARGET)]
    tpr_target: f64,
    /// Ground-truth epoch; defaults to the end of training.
    #[arg(long)]
    ground_truth_epoch: Option<f64>,
    #[arg(long, default_value = "per-sample-with-fallback", value_parser = parse_variance)]
    lira_variance: VarianceMode,
    #[arg(long, default_value_t = MahalanobisOptions::default().pca_dim)]
    pca_dim: usize,
    #[arg(long)]
    mahalanobis_exclude_self: bool,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[command(flatten)]
    scoring: ScoringArgs,
    /// Representation layer; defaults to the last hidden layer.
    #[arg(long)]
    layer: Option<usize>,
    /// PSMI below this value predicts memorization.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    threshold: f64,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    scoring: ScoringArgs,
    /// Checkpoint epochs, comma separated, or "all".
    #[arg(long, default_value = "all")]
    checkpoints: String,
    /// Layers, comma separated, or "all".
    #[arg(long, default_value = "all")]
    layers: String,
    /// Predictor names, comma separated, or "all".
    #[arg(long, default_value = "all")]
    predictors: String,
    /// Also report Spearman R between counterfactual memorization and global log-LiRA.
    #[arg(long)]
    compare_memorization: bool,
}

#[derive(Args, Debug)]
struct LiraArgs {
    /// Epoch to attack; defaults to the end of training.
    #[arg(long)]
    epoch: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_QUANTILE)]
    quantile: f64,
    /// Significance level of the per-sample attack success rate.
    #[arg(long, default_value_t = 1e-9)]
    alpha: f64,
    #[arg(long, default_value = "per-sample-with-fallback", value_parser = parse_variance)]
    lira_variance: VarianceMode,
}

#[derive(Args, Debug)]
struct SchemaArgs {
    /// Directory of exported tensors to validate, relative to --out.
    #[arg(long)]
    validate: Option<PathBuf>,
}

fn parse_variance(s: &str) -> std::result::Result<VarianceMode, String> {
    serde_json::from_value(json!(s)).map_err(|_| format!("unknown variance mode '{s}'"))
}

fn effective_seed(flag: u64) -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("{SEED_ENV}='{v}' is not an unsigned integer"))),
        Err(_) => Ok(flag),
    }
}

fn pipeline_config(s: &ScoringArgs, seed: u64) -> PipelineConfig {
    PipelineConfig {
        loss_decrease_fraction: s.loss_decrease,
        directions: s.directions,
        direction_seed: seed,
        fit_scope: if s.leave_one_out {
            FitScope::LeaveOneOut
        } else {
            FitScope::InSample
        },
        quantile: s.quantile,
        tpr_target: s.tpr_target,
        ground_truth_epoch: s.ground_truth_epoch,
        lira: LiraConfig {
            variance: s.lira_variance,
            ..LiraConfig::default()
        },
        mahalanobis: MahalanobisOptions {
            pca_dim: s.pca_dim,
            exclude_self: s.mahalanobis_exclude_self,
        },
        ..PipelineConfig::default()
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn print(value: serde_json::Value) {
    println!("{value}");
}

fn cmd_gen(out: &Path, seed: u64, a: &GenArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.eps) {
        return Err(Error::InvalidArgument(format!("--eps must lie in [0, 1], got {}", a.eps)));
    }
    if a.d == 0 || a.n < 2 {
        return Err(Error::InvalidArgument("--d must be at least 1 and --n at least 2".into()));
    }
    let mut config = MixtureConfig::symmetric(a.d, a.separation, a.eps, a.n, seed);
    config.outlier_law = OutlierLawRegistry::default().create(&a.law)?;
    let sample = sample_mixture(&config)?;
    let info = DatasetInfo {
        name: a.name.clone(),
        d: a.d,
        n: a.n,
        epsilon: a.eps,
        separation: a.separation,
        law: a.law.clone(),
        seed,
    };
    let files = write_dataset(out, &info, &sample)?;
    print(json!({
        "command": "gen",
        "files": files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "outliers": sample.outlier.iter().filter(|&&o| o).count(),
    }));
    Ok(())
}

fn cmd_shadow(out: &Path, seed: u64, a: &ShadowArgs) -> Result<()> {
    if a.shadows < 2 {
        return Err(Error::InvalidArgument(format!("--shadows must be at least 2, got {}", a.shadows)));
    }
    let dataset = read_dataset(out)?;
    let defaults = TrainConfig::default();
    let config = ShadowConfig {
        shadows: a.shadows,
        base_seed: seed,
        target_split: a.target_split,
        train: TrainConfig {
            hidden: a.hidden.clone().unwrap_or(defaults.hidden.clone()),
            epochs: a.epochs.unwrap_or(defaults.epochs),
            batch_size: a.batch_size.unwrap_or(defaults.batch_size),
            learning_rate: a.learning_rate.unwrap_or(defaults.learning_rate),
            checkpoint_stride: a.checkpoint_stride.unwrap_or(defaults.checkpoint_stride),
            ..defaults
        },
    };
    let hp = hyperparameters(&config, DEFAULT_LOSS_DECREASE, DEFAULT_DIRECTIONS, DEFAULT_QUANTILE, DEFAULT_TPR_TARGET);
    let progress = train_suite_to_disk(out, &dataset, &config, hp)?;
    print(json!({
        "command": "shadow",
        "manifest": out.join(MANIFEST_FILE).display().to_string(),
        "trained": progress.trained,
        "skipped": progress.skipped,
    }));
    Ok(())
}

fn cmd_predict(out: &Path, seed: u64, a: &PredictArgs) -> Result<()> {
    let run = RunDirectory::open(out)?;
    let config = PipelineConfig {
        layer: a.layer,
        threshold: a.threshold,
        ..pipeline_config(&a.scoring, seed)
    };
    let result = predict_pipeline(&run, &config)?;
    let dir = out.join("predict");
    let scores_dir = dir.join("scores");
    create_dir(&scores_dir)?;
    for s in &result.scores {
        s.write(&scores_dir, s.name())?;
    }
    write_tensor(dir.join("predictions.mema"), &Tensor::from_bools(&result.predictions)?)?;
    write_tensor(dir.join("ground_truth.mema"), &Tensor::from_bools(&result.ground_truth.memorized)?)?;
    let lira = &result.lira.scores;
    write_tensor(dir.join("local_lira.mema"), &Tensor::from_f64(vec![lira.len()], lira, DType::F64)?)?;
    write_json(dir.join("report.json"), &result.report)?;
    print(json!({"command": "predict", "report": result.report}));
    Ok(())
}

fn parse_list<T: std::str::FromStr>(flag: &str, text: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("--{flag}: cannot parse '{t}'")))
        })
        .collect()
}

fn cmd_eval(out: &Path, seed: u64, a: &EvalArgs) -> Result<()> {
    let run = RunDirectory::open(out)?;
    let config = pipeline_config(&a.scoring, seed);
    let checkpoints = if a.checkpoints == "all" {
        run.checkpoint_epochs().to_vec()
    } else {
        parse_list("checkpoints", &a.checkpoints)?
    };
    let layers = if a.layers == "all" {
        (1..=run.layer_count()).collect()
    } else {
        parse_list("layers", &a.layers)?
    };
    let predictors = if a.predictors == "all" {
        config.registry().names().into_iter().map(String::from).collect()
    } else {
        let registry = config.registry();
        let names: Vec<String> = parse_list("predictors", &a.predictors)?;
        for n in &names {
            registry.get(n)?;
        }
        names
    };
    let grid = AblationGrid {
        checkpoints,
        layers,
        predictors,
    };
    let report = ablation_grid(&run, &grid, &config)?;
    let dir = out.join("eval");
    create_dir(&dir)?;
    report.write(&dir, "ablation")?;

    let mut summary = json!({
        "command": "eval",
        "rows": report.rows.len(),
        "missing": report.missing.len(),
        "csv": dir.join("ablation.csv").display().to_string(),
    });
    if a.compare_memorization {
        let checkpoint = match a.scoring.ground_truth_epoch {
            Some(e) => run.suite().checkpoint_index(e)?,
            None => run.checkpoint_epochs().len() - 1,
        };
        let agreement = memorization_agreement(run.suite(), checkpoint, &config.lira)?;
        write_json(dir.join("memorization.json"), &agreement)?;
        summary["memorization"] = serde_json::to_value(&agreement)?;
    }
    print(summary);
    if !report.is_complete() {
        let gaps: Vec<String> = report
            .missing
            .iter()
            .map(|m| {
                format!(
                    "epoch {} layer {} {}: {}",
                    m.cell.checkpoint_epoch, m.cell.layer, m.cell.predictor, m.reason
                )
            })
            .collect();
        return Err(Error::MissingArtifact(gaps.join("; ")));
    }
    Ok(())
}

fn cmd_lira(out: &Path, a: &LiraArgs) -> Result<()> {
    let run = RunDirectory::open(out)?;
    let suite = run.suite();
    let checkpoint = match a.epoch {
        Some(e) => suite.checkpoint_index(e)?,
        None => suite.checkpoint_epochs().len() - 1,
    };
    let config = LiraConfig {
        variance: a.lira_variance,
        ..LiraConfig::default()
    };
    let local = local_lira_score(suite, suite.target_split(), checkpoint, &config)?;
    let truth = ground_truth_from_quantile(&local.scores, a.quantile)?;
    let global = global_lira_asr(suite, checkpoint, &config)?;
    let models = suite.entries().len() as u64;
    let threshold = asr_significance_threshold(models, a.alpha);
    let significant = global.successes.iter().filter(|&&s| s as u64 >= threshold).count();

    let dir = out.join("lira");
    create_dir(&dir)?;
    let scores = &local.scores;
    write_tensor(dir.join("local_lira.mema"), &Tensor::from_f64(vec![scores.len()], scores, DType::F64)?)?;
    write_tensor(dir.join("ground_truth.mema"), &Tensor::from_bools(&truth.memorized)?)?;
    write_json(dir.join("global.json"), &global)?;
    let summary = json!({
        "epoch": suite.checkpoint_epochs()[checkpoint],
        "models": models,
        "members": scores.len(),
        "quantile": a.quantile,
        "ground_truth_threshold": truth.threshold,
        "alpha": a.alpha,
        "asr_success_threshold": threshold,
        "significant_samples": significant,
    });
    write_json(dir.join("summary.json"), &summary)?;
    print(json!({"command": "lira", "summary": summary}));
    Ok(())
}

fn cmd_export_schema(out: &Path, a: &SchemaArgs) -> Result<()> {
    let dir = out.join("schema");
    create_dir(&dir)?;
    write_json(dir.join("schema.json"), &schema::document())?;
    let selftest = schema::self_test(&dir.join("selftest"))?;
    let mut summary = json!({"command": "export-schema", "self_test": selftest});
    if let Some(target) = &a.validate {
        let report = schema::validate_dir(&out.join(target))?;
        let failed = report.failures.len();
        summary["validation"] = serde_json::to_value(&report)?;
        print(summary);
        if failed > 0 {
            return Err(Error::InvalidArgument(format!("{failed} exported artifacts failed validation")));
        }
        return Ok(());
    }
    print(summary);
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let seed = effective_seed(cli.seed)?;
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("--threads: {e}")))?;
    }
    let out = cli.out.as_path();
    create_dir(out)?;
    match &cli.command {
        Command::Gen(a) => cmd_gen(out, seed, a),
        Command::Shadow(a) => cmd_shadow(out, seed, a),
        Command::Predict(a) => cmd_predict(out, seed, a),
        Command::Eval(a) => cmd_eval(out, seed, a),
        Command::Lira(a) => cmd_lira(out, a),
        Command::ExportSchema(a) => cmd_export_schema(out, a),
    }
}

fn report_error(kind: &str, message: &str) {
    eprintln!("{}", json!({"error": kind, "message": message}));
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report_error("usage", e.to_string().trim());
            return ExitCode::from(2);
        }
    };
    env_logger::Builder::new().filter_level(cli.log_level).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(e.kind(), &e.to_string());
            ExitCode::FAILURE
        }
    }
}
