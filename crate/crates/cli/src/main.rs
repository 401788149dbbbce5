use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Parser, Subcommand};

use rtp_core::augment::{over_sample, Change};
use rtp_core::compose::{compose, write_predictions_file};
use rtp_core::evaluate::{
    confusion, write_error_csv_file, ClassMetrics, ErrorRow, RegressionReport,
};
use rtp_core::ingest::{
    filter_observations, read_log_file, synthesize_corpus, write_log_file,
};
use rtp_core::nn::{argmax, load_model, save_model, train};
use rtp_core::pipeline::{run_pipeline, PipelineConfig};
use rtp_core::preprocess::{encode, undersample, EncodedSet, Task};
use rtp_core::zoo::{build_variant_with, VariantSpec};
use rtp_core::{
    domain, CoreConfiguration, Error, TrainingConfig, TransientObservation, TwoStageModel, VariantId,
};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;

#[derive(Parser)]
#[command(name = "rtp", version, about = "Two-stage reactor transient power predictor")]
struct Cli {
    /// Root seed for every random stream.
    #[arg(long, global = true, env = "RTP_SEED")]
    seed: Option<u64>,

    /// Pipeline configuration (JSON). Missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic transient log.
    Synthesize {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Oversample a transient log by perturbing rod heights.
    Augment {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: usize,
        /// up, down or none
        #[arg(long, default_value = "none")]
        change: Change,
        /// Write the input rows ahead of the new ones.
        #[arg(long)]
        append: bool,
    },
    /// Filter and encode a log for one variant.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        /// Variant whose feature layout to encode for.
        #[arg(long)]
        layout: VariantId,
        #[arg(long)]
        out: PathBuf,
        /// Undersample to equal class counts.
        #[arg(long)]
        balance: bool,
    },
    /// Train one variant on an encoded set.
    Train {
        /// Defaults to the variant the data was encoded for.
        #[arg(long)]
        variant: Option<VariantId>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Trained stage-1 model supplying class probabilities (regressors only).
        #[arg(long)]
        classifier: Option<PathBuf>,
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Join a classifier and a regressor into one model file.
    Compose {
        #[arg(long)]
        stage1: PathBuf,
        #[arg(long)]
        stage2: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a composed model on a transient log.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Report path; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        errors: Option<PathBuf>,
    },
    /// Predict final power for every transient in a log.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the whole experiment and write every artifact under `out`.
    Pipeline {
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Divergence { .. }) => EXIT_DIVERGENCE,
        Some(Error::Config(_) | Error::Unknown { .. }) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

/// `--config` for `train` may hold either a pipeline config or a bare
/// training config.
fn training_config(cli: &Cli, config: &PipelineConfig) -> anyhow::Result<TrainingConfig> {
    let Some(path) = &cli.config else {
        return Ok(config.training.clone());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if value.get("training").is_some() {
        return Ok(config.training.clone());
    }
    let training: TrainingConfig = serde_json::from_value(value)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    training.validate()?;
    Ok(training)
}

fn read_observations(path: &Path, verbose: bool) -> anyhow::Result<Vec<TransientObservation>> {
    let outcome = filter_observations(&read_log_file(path)?);
    if verbose {
        let x = outcome.excluded;
        eprintln!(
            "{}: {} kept; excluded {} too long, {} shutdown, {} no change, {} invalid",
            path.display(),
            outcome.observations.len(),
            x.too_long,
            x.shutdown,
            x.no_change,
            x.invalid
        );
    }
    Ok(outcome.observations)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = load_config(&cli)?;
    let configs = CoreConfiguration::standard();
    let bins = &config.bins;
    let verbose = cli.verbose;
    match &cli.command {
        Command::Synthesize { out, n } => {
            let spec = rtp_core::ingest::CorpusSpec {
                seed: config.seed,
                n_observations: n.unwrap_or(config.corpus.n_observations),
                ..config.corpus.clone()
            };
            let corpus = synthesize_corpus(&spec, &configs)?;
            write_log_file(out, &corpus)?;
            if verbose {
                eprintln!("wrote {} transients to {}", corpus.len(), out.display());
            }
        }
        Command::Augment {
            input,
            out,
            n,
            change,
            append,
        } => {
            let source = read_observations(input, verbose)?;
            let extra = over_sample(
                &source,
                &configs,
                *n,
                *change,
                &config.augment.policy,
                config.seed,
            )?;
            let rows = if *append {
                source.into_iter().chain(extra).collect()
            } else {
                extra
            };
            write_log_file(out, &rows)?;
        }
        Command::Preprocess {
            input,
            layout,
            out,
            balance,
        } => {
            let layout = VariantSpec::of(*layout).layout;
            let samples = read_observations(input, verbose)?
                .iter()
                .map(|o| encode(o, &layout, domain::config_for_date(o.date, &configs), bins))
                .collect::<rtp_core::Result<Vec<_>>>()?;
            let samples = if *balance {
                undersample(&samples, config.seed)?
            } else {
                samples
            };
            EncodedSet { layout, samples }.save(out)?;
        }
        Command::Train {
            variant,
            data,
            out,
            classifier,
            history,
        } => {
            let set = EncodedSet::load(data)?;
            let spec = VariantSpec::of(variant.unwrap_or(set.layout.variant_id));
            if !spec.layout.shares_features_with(&set.layout) {
                return Err(Error::Config(format!(
                    "{} cannot train on data encoded for {}",
                    spec.variant_id, set.layout.variant_id
                ))
                .into());
            }
            let probs = match (spec.task, classifier) {
                (Task::Classifier, _) => None,
                (Task::Regressor, None) => {
                    return Err(Error::Config(format!(
                        "{} is a regressor; pass --classifier",
                        spec.variant_id
                    ))
                    .into())
                }
                (Task::Regressor, Some(path)) => {
                    let clf = load_model(path)?;
                    let clf_spec = VariantSpec::of(clf.variant_id.ok_or_else(|| {
                        Error::Composition("classifier file has no variant id".into())
                    })?);
                    if clf_spec.task != Task::Classifier
                        || !clf_spec.layout.shares_features_with(&spec.layout)
                    {
                        return Err(Error::Composition(format!(
                            "{} cannot feed {}",
                            clf_spec.variant_id, spec.variant_id
                        ))
                        .into());
                    }
                    let out = clf.forward(&clf_spec.dataset(&set.samples, None)?.views())?;
                    Some(out.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>())
                }
            };
            let mut training = training_config(&cli, &config)?;
            training.seed = config.seed;
            if training.monitored_metric.is_none() {
                training.monitored_metric = Some(spec.default_monitor());
            }
            let model = build_variant_with(spec.variant_id, &config.architecture, config.seed);
            let started = Instant::now();
            let (model, hist) = train(model, &spec.dataset(&set.samples, probs.as_deref())?, &training)?;
            save_model(&model, out)?;
            if let Some(path) = history {
                std::fs::write(path, serde_json::to_string_pretty(&hist)? + "\n")
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            if verbose {
                let best = hist.best();
                eprintln!(
                    "{}: {} epochs in {:.1}s, best epoch {} (val loss {:.5}, val metric {:.5})",
                    spec.variant_id,
                    hist.epochs.len(),
                    started.elapsed().as_secs_f64(),
                    hist.best_epoch + 1,
                    best.val_loss,
                    best.val_metric
                );
            }
        }
        Command::Compose {
            stage1,
            stage2,
            out,
        } => {
            compose(stage1, stage2)?.save(out)?;
        }
        Command::Evaluate {
            model,
            data,
            out,
            errors,
        } => {
            let model = TwoStageModel::load(model)?;
            let obs = read_observations(data, verbose)?;
            let mut truth_class = Vec::with_capacity(obs.len());
            let mut truth_norm = Vec::with_capacity(obs.len());
            let mut preds = Vec::with_capacity(obs.len());
            for o in &obs {
                let layout = &model.stage1_spec().layout;
                let s = encode(o, layout, domain::config_for_date(o.date, &configs), bins)?;
                truth_class.push(s.class_index());
                truth_norm.push(s.regression_target);
                preds.push(model.predict(&s)?);
            }
            let pred_class: Vec<usize> = preds.iter().map(|p| p.predicted_class).collect();
            let pred_norm: Vec<f64> = preds.iter().map(|p| p.power_norm).collect();
            let correct: Vec<bool> = pred_class.iter().zip(&truth_class).map(|(p, t)| p == t).collect();
            let cm = confusion(&truth_class, &pred_class, bins.len())?;
            let summary = serde_json::json!({
                "stage1": model.stage1_spec().variant_id,
                "stage2": model.stage2_spec().variant_id,
                "classification": ClassMetrics::from_confusion(&cm),
                "confusion": cm,
                "regression": RegressionReport::new(&truth_norm, &pred_norm, Some(&correct))?,
            });
            let text = serde_json::to_string_pretty(&summary)? + "\n";
            match out {
                Some(path) => std::fs::write(path, text)
                    .with_context(|| format!("writing {}", path.display()))?,
                None => print!("{text}"),
            }
            if let Some(path) = errors {
                let rows: Vec<ErrorRow> = (0..obs.len())
                    .map(|i| ErrorRow {
                        row: i,
                        true_class: truth_class[i],
                        predicted_class: pred_class[i],
                        true_norm: truth_norm[i],
                        predicted_norm: pred_norm[i],
                        abs_error: (truth_norm[i] - pred_norm[i]).abs(),
                    })
                    .collect();
                write_error_csv_file(path, &rows)?;
            }
        }
        Command::Predict { model, input, out } => {
            let model = TwoStageModel::load(model)?;
            let preds = read_observations(input, verbose)?
                .iter()
                .map(|o| model.predict_observation(o, &configs, bins))
                .collect::<rtp_core::Result<Vec<_>>>()?;
            write_predictions_file(out, &preds)?;
            if verbose {
                let classes: Vec<usize> = preds.iter().map(|p| argmax(p.class_probs.iter())).collect();
                eprintln!("{} predictions, classes {:?}", preds.len(), histogram(&classes, bins.len()));
            }
        }
        Command::Pipeline { out } => {
            let started = Instant::now();
            let mut log = |line: &str| {
                if verbose {
                    eprintln!("[{:6.1}s] {line}", started.elapsed().as_secs_f64());
                }
            };
            let report = run_pipeline(&config, out, &mut log)?;
            println!("variant  accuracy  macro_f1  epochs");
            for c in &report.classifiers {
                println!(
                    "{:<8} {:>8.4}  {:>8.4}  {:>6}",
                    c.variant_id.as_str(),
                    c.test.accuracy,
                    c.test.macro_f1,
                    c.training.epochs_run
                );
            }
            println!("variant  mae       within_0.10  epochs");
            for r in &report.regressors {
                println!(
                    "{:<8} {:>8.4}  {:>11.4}  {:>6}",
                    r.variant_id.as_str(),
                    r.test.mae,
                    r.test.within_tolerance,
                    r.training.epochs_run
                );
            }
            println!(
                "composite {}+{}: accuracy {:.4}, within 0.10 {:.4}; {:.1}s",
                report.composite.stage1,
                report.composite.stage2,
                report.composite.classification.accuracy,
                report.composite.regression.within_tolerance,
                started.elapsed().as_secs_f64()
            );
        }
    }
    Ok(())
}

fn histogram(labels: &[usize], n: usize) -> Vec<usize> {
    let mut h = vec![0; n];
    for &l in labels {
        h[l] += 1;
    }
    h
}
