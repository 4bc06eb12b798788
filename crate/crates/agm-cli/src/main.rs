//! Command line harness: synthesize chain datasets, train the adversarial
//! model or a baseline, predict, evaluate, cross-validate the ridge weight,
//! and emit the comparison report.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 non-convergence.

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use agm::baselines::{crf_bayes_decode, train_crf, train_ssvm, CrfModel};
use agm::data::DatasetFile;
use agm::error::AgmError;
use agm::experiment::{cross_validate, run_experiment, ExperimentConfig};
use agm::learner::train_agm;
use agm::loss::{evaluate_loss, LossFamily, LossKind};
use agm::model_io::{load_model, save_model, ModelKind, SavedModel};
use agm::predict::{predict_map, predict_probabilistic, PredictConfig, Prediction};
use agm::synth::{bayes_risk, generate_synthetic, GeneratorSpec};

#[derive(Parser)]
#[command(name = "agm", about = "Adversarial graphical models on trees", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic chain dataset from a known distribution.
    Synth(SynthArgs),
    /// Train a model and write a model file.
    Train(TrainArgs),
    /// Decode a dataset with a trained model.
    Predict(PredictArgs),
    /// Evaluate a trained model against gold labels.
    Eval(EvalArgs),
    /// Cross-validate the ridge weight on a training set.
    Xval(XvalArgs),
    /// Run the full split/train/eval comparison and write the report.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset path.
    #[arg(long)]
    out: PathBuf,
    /// Generator TOML; omitted fields fall back to the flags below.
    #[arg(long)]
    generator: Option<PathBuf>,
    /// Write the effective generator spec next to the data.
    #[arg(long)]
    save_generator: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 4)]
    chain_len: usize,
    #[arg(long, default_value_t = 60)]
    num_instances: usize,
    #[arg(long, default_value_t = 0.2)]
    noise: f64,
    #[arg(long, default_value_t = 0.6)]
    stay_prob: f64,
    /// Overrides the generator seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Also print the exact Bayes risk of this metric under the generator.
    #[arg(long)]
    bayes_metric: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// agm, crf, or ssvm.
    #[arg(long)]
    model: String,
    #[arg(long)]
    out: PathBuf,
    /// Experiment TOML supplying training settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Loss metric (zero_one, absolute, squared, cost_sensitive).
    #[arg(long, default_value = "zero_one")]
    metric: String,
    /// Weight nodes by position.
    #[arg(long)]
    weighted: bool,
    /// Seed for the generated cost-sensitive table.
    #[arg(long)]
    cost_seed: Option<u64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Emit per-node distributions from the saddle-point predictor instead
    /// of MAP labels.
    #[arg(long)]
    probabilistic: bool,
    /// Metric for the probabilistic predictor (defaults to the model's).
    #[arg(long)]
    metric: Option<String>,
    #[arg(long)]
    weighted: bool,
    #[arg(long)]
    cost_seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "zero_one")]
    metric: String,
    #[arg(long)]
    weighted: bool,
    #[arg(long)]
    cost_seed: Option<u64>,
}

#[derive(Args)]
struct XvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: String,
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "zero_one")]
    metric: String,
    #[arg(long)]
    weighted: bool,
    #[arg(long)]
    cost_seed: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: PathBuf,
    /// Text table output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-instance CSV output path.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Overrides the split seed and the training seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &AgmError) -> u8 {
    match err {
        AgmError::Config(_) | AgmError::InvalidLoss(_) => 2,
        AgmError::Parse { .. }
        | AgmError::Io(_)
        | AgmError::InvalidTree(_)
        | AgmError::DimensionMismatch(_)
        | AgmError::EmptyDataset
        | AgmError::NonFinite(_)
        | AgmError::InstanceTooLarge { .. }
        | AgmError::MarginalMismatch(_) => 3,
        AgmError::Training(_) | AgmError::Lp(_) => 4,
    }
}

fn metric_from_flags(
    name: &str,
    weighted: bool,
    cost_seed: Option<u64>,
    k: usize,
) -> Result<LossFamily, AgmError> {
    let kind = LossKind::from_str(name)?;
    let mut family = LossFamily::plain(kind, k);
    family.weighted_by_position = weighted;
    if kind == LossKind::CostSensitive {
        family.cost_seed = Some(cost_seed.unwrap_or(0));
    }
    Ok(family)
}

fn load_config(path: Option<&PathBuf>) -> Result<Option<ExperimentConfig>, AgmError> {
    match path {
        None => Ok(None),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            Ok(Some(ExperimentConfig::parse_toml(&text)?))
        }
    }
}

fn run(cli: Cli) -> Result<(), AgmError> {
    match cli.command {
        Command::Synth(args) => synth(args),
        Command::Train(args) => train(args),
        Command::Predict(args) => predict(args),
        Command::Eval(args) => eval(args),
        Command::Xval(args) => xval(args),
        Command::Report(args) => report(args),
    }
}

fn synth(args: SynthArgs) -> Result<(), AgmError> {
    let mut spec = match &args.generator {
        Some(path) => GeneratorSpec::parse_toml(&std::fs::read_to_string(path)?)?,
        None => GeneratorSpec {
            k: args.k,
            chain_len: args.chain_len,
            num_instances: args.num_instances,
            noise: args.noise,
            stay_prob: args.stay_prob,
            seed: GeneratorSpec::default().seed,
        },
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let data = generate_synthetic(&spec)?;
    data.save(&args.out)?;
    println!(
        "wrote {} instances (k={}, chain_len={}) to {}",
        data.instances.len(),
        spec.k,
        spec.chain_len,
        args.out.display()
    );
    if let Some(path) = &args.save_generator {
        std::fs::write(path, spec.to_toml())?;
    }
    if let Some(metric) = &args.bayes_metric {
        let family = metric_from_flags(metric, false, None, spec.k)?;
        let risk = bayes_risk(&spec, &family)?;
        println!("bayes risk ({}): {risk:.6}", family.describe());
    }
    Ok(())
}

fn train(args: TrainArgs) -> Result<(), AgmError> {
    let data = DatasetFile::load(&args.data)?;
    let template = data.template()?;
    let labeled = data.labeled();
    if labeled.is_empty() {
        return Err(AgmError::EmptyDataset);
    }
    let kind: ModelKind = args.model.parse()?;
    let config = load_config(args.config.as_ref())?;
    let mut train_cfg = config.as_ref().map(|c| c.train).unwrap_or_default();
    let mut crf_cfg = config.as_ref().map(|c| c.crf).unwrap_or_default();
    if let Some(lambda) = args.lambda {
        train_cfg.lambda = lambda;
        crf_cfg.lambda = lambda;
    }
    if let Some(epochs) = args.epochs {
        train_cfg.epochs = epochs;
    }
    if let Some(seed) = args.seed {
        train_cfg.seed = seed;
    }
    let metric = metric_from_flags(&args.metric, args.weighted, args.cost_seed, data.k)?;

    match kind {
        ModelKind::Agm => {
            let (params, report) = train_agm(&template, &labeled, &metric, &train_cfg)?;
            save_model(
                &args.out,
                ModelKind::Agm,
                &params,
                Some((&metric.describe(), &metric.digest())),
            )?;
            eprintln!(
                "trained agm: {} epochs, inner converged {:.1}%, {:.3} ms/update",
                train_cfg.epochs,
                100.0 * report.inner_converged_fraction,
                1e3 * report.seconds_per_update
            );
        }
        ModelKind::Ssvm => {
            let model = train_ssvm(&template, &labeled, &metric, &train_cfg)?;
            save_model(
                &args.out,
                ModelKind::Ssvm,
                &model.params,
                Some((&metric.describe(), &metric.digest())),
            )?;
            eprintln!("trained ssvm: final hinge {:.6}", model.final_hinge);
        }
        ModelKind::Crf => {
            let model = train_crf(&template, &labeled, &crf_cfg)?;
            save_model(&args.out, ModelKind::Crf, &model.params, None)?;
            eprintln!(
                "trained crf: gradient norm {:.2e}, converged {}",
                model.gradient_norm, model.converged
            );
        }
        ModelKind::Oracle => {
            return Err(AgmError::Config("the oracle decoder is not trainable".into()));
        }
    }
    println!("model written to {}", args.out.display());
    Ok(())
}

fn predict(args: PredictArgs) -> Result<(), AgmError> {
    let data = DatasetFile::load(&args.data)?;
    let model = load_model(&args.model)?;
    check_dims(&model, &data)?;

    let mut lines = Vec::with_capacity(data.instances.len());
    if args.probabilistic {
        let metric_name = args
            .metric
            .clone()
            .or(model.loss_name.clone().map(|n| n.replace(" (weighted)", "")))
            .unwrap_or_else(|| "zero_one".to_string());
        let weighted = args.weighted
            || model
                .loss_name
                .as_deref()
                .is_some_and(|n| n.ends_with("(weighted)"));
        let family = metric_from_flags(&metric_name, weighted, args.cost_seed, data.k)?;
        for instance in &data.instances {
            let spec = family.spec_for_len(instance.n())?;
            let pred =
                predict_probabilistic(&model.params, instance, &spec, &PredictConfig::default())?;
            let Prediction::Probabilistic { dists, .. } = &pred else {
                unreachable!()
            };
            let line = dists
                .iter()
                .map(|p| {
                    p.iter()
                        .map(|v| format!("{v:.6}"))
                        .collect::<Vec<_>>()
                        .join(",")
                })
                .collect::<Vec<_>>()
                .join(";");
            lines.push(line);
        }
    } else {
        for instance in &data.instances {
            let labels = predict_map(&model.params, instance)?.labels();
            lines.push(
                labels
                    .iter()
                    .map(|l| l.to_string())
                    .collect::<Vec<_>>()
                    .join(" "),
            );
        }
    }
    let text = lines.join("\n") + "\n";
    match &args.out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), AgmError> {
    let data = DatasetFile::load(&args.data)?;
    let model = load_model(&args.model)?;
    check_dims(&model, &data)?;
    let metric = metric_from_flags(&args.metric, args.weighted, args.cost_seed, data.k)?;

    let labeled = data.labeled();
    if labeled.is_empty() {
        return Err(AgmError::EmptyDataset);
    }
    let crf_model = (model.kind == ModelKind::Crf).then(|| CrfModel {
        params: model.params.clone(),
        train_log_likelihood: 0.0,
        gradient_norm: 0.0,
        converged: true,
    });
    let mut total = 0.0;
    for instance in &labeled {
        let spec = metric.spec_for_len(instance.n())?;
        let labels = match &crf_model {
            Some(crf) => crf_bayes_decode(crf, instance, &spec)?.labels(),
            None => predict_map(&model.params, instance)?.labels(),
        };
        total += evaluate_loss(&spec, &labels, instance.labels.as_ref().unwrap())?;
    }
    println!(
        "{} {:.6}",
        metric.describe(),
        total / labeled.len() as f64
    );
    Ok(())
}

fn xval(args: XvalArgs) -> Result<(), AgmError> {
    let data = DatasetFile::load(&args.data)?;
    let mut config = load_config(Some(&args.config))?.expect("config path given");
    if let Some(seed) = args.seed {
        config.split.seed = seed;
        config.train.seed = seed;
    }
    let kind: ModelKind = args.model.parse()?;
    let metric = metric_from_flags(&args.metric, args.weighted, args.cost_seed, data.k)?;
    let labeled = data.labeled();
    let (best, table) = cross_validate(&config, kind, &metric, &labeled)?;
    println!("lambda  mean_{}", metric.describe().replace(' ', "_"));
    for (lambda, loss) in &table {
        let marker = if *lambda == best { " <- selected" } else { "" };
        println!("{lambda:<7} {loss:.6}{marker}");
    }
    Ok(())
}

fn report(args: ReportArgs) -> Result<(), AgmError> {
    let data = DatasetFile::load(&args.data)?;
    let mut config = load_config(Some(&args.config))?.expect("config path given");
    if let Some(seed) = args.seed {
        config.split.seed = seed;
        config.train.seed = seed;
    }
    let report = run_experiment(&config, &data)?;
    let text = report.render_text();
    match &args.out {
        Some(path) => std::fs::write(path, &text)?,
        None => print!("{text}"),
    }
    if let Some(path) = &args.csv {
        std::fs::write(path, report.to_csv())?;
    }
    Ok(())
}

fn check_dims(model: &SavedModel, data: &DatasetFile) -> Result<(), AgmError> {
    let t = &model.params.template;
    if t.k != data.k || t.d != data.d || t.d_e != data.d_e {
        return Err(AgmError::Config(format!(
            "model template (k={}, d={}, de={}) does not match dataset (k={}, d={}, de={})",
            t.k, t.d, t.d_e, data.k, data.d, data.d_e
        )));
    }
    Ok(())
}
