//! Command-line entry points: corpus generation, training, evaluation,
//! prediction and corpus statistics. Every command is deterministic given
//! `--seed`; wall-clock timings go to stderr so output artifacts stay
//! byte-reproducible.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiment::{
    cross_validate_kind, evaluate_saved, run_conv, run_ngram, ConvSettings, ModelKind,
};
use crate::model::{load_model, save_bicnn, save_ngram_linear};
use crate::synth::{corpus_stats, crrd_like, generate, mrd_like, scale_counts, CorpusSpec};
use crate::tensor::{LossMode, PenaltyMode};
use crate::text::{read_corpus, write_corpus, Report};
use crate::train::{CrossValidation, Evaluation, TrainConfig};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "BICNN_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "bicnn",
    about = "Radiology-report text classification: synthetic data, training, evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labelled corpus (JSON-lines plus a labels file)
    GenData(GenDataArgs),
    /// Train a model with repeated cross-validation and write artifacts
    Train(TrainArgs),
    /// Evaluate a saved model on a corpus
    Eval(EvalArgs),
    /// Classify a single report text with a saved model
    Predict(PredictArgs),
    /// Print corpus statistics (NR, VS, ANS, ANW, ASL)
    Stats(StatsArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Built-in preset: mrd-like or crrd-like
    #[arg(long, conflicts_with = "spec_file")]
    preset: Option<String>,
    /// JSON CorpusSpec file instead of a preset
    #[arg(long)]
    spec_file: Option<PathBuf>,
    /// Scale the preset to this many reports
    #[arg(long)]
    scale: Option<usize>,
    /// Descriptor noise rate in [0, 1)
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output corpus path (JSON-lines)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Training corpus (JSON-lines with id, text, label)
    #[arg(long)]
    corpus: PathBuf,
    /// Key-value config file; command-line flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model kind: bicnn, cnn or ngram
    #[arg(long)]
    model: Option<String>,
    /// Comma-separated convolution window sizes
    #[arg(long, value_delimiter = ',')]
    kernels: Option<Vec<usize>>,
    #[arg(long)]
    feature_maps: Option<usize>,
    #[arg(long)]
    embedding_dim: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    ngram_order: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_decay_rate: Option<f64>,
    #[arg(long)]
    lr_decay_interval: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// categorical or literal-binary
    #[arg(long)]
    loss: Option<String>,
    /// squared or norm
    #[arg(long)]
    penalty: Option<String>,
    /// Run cross-validation serially instead of in parallel
    #[arg(long)]
    serial: bool,
    /// Output directory (default: $BICNN_OUT_DIR or .)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Output directory for confusion.csv (default: $BICNN_OUT_DIR or .)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Report text to classify
    #[arg(long)]
    text: String,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    corpus: PathBuf,
}

/// Parse arguments and execute; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return 1;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(args) => cmd_gen_data(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Stats(args) => cmd_stats(args),
    }
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

/// `corpus.jsonl` -> `corpus.labels.json`
pub fn labels_path_for(corpus: &Path) -> PathBuf {
    corpus.with_extension("labels.json")
}

fn print_stats_table(stats: &crate::synth::CorpusStats) {
    println!("metric  mean     median   std");
    println!("NR      {}", stats.num_reports);
    println!("VS      {}", stats.vocab_size);
    let row = |name: &str, s: &crate::train::MeanMedianStd| {
        println!("{name}     {:<8.2} {:<8.2} {:<8.2}", s.mean, s.median, s.std);
    };
    row("ANS", &stats.sentences_per_report);
    row("ANW", &stats.words_per_report);
    row("ASL", &stats.sentence_length);
}

fn cmd_gen_data(args: GenDataArgs) -> Result<()> {
    let mut spec: CorpusSpec = match (&args.preset, &args.spec_file) {
        (Some(name), None) => match name.as_str() {
            "mrd-like" => mrd_like(args.seed),
            "crrd-like" => crrd_like(args.seed),
            other => {
                return Err(Error::Usage(format!(
                    "unknown preset {other:?}; expected mrd-like or crrd-like"
                )))
            }
        },
        (None, Some(path)) => {
            let json = std::fs::read_to_string(path)
                .map_err(|e| Error::io(format!("reading spec {}", path.display()), e))?;
            let spec: CorpusSpec = serde_json::from_str(&json)?;
            spec.with_seed(args.seed)
        }
        _ => {
            return Err(Error::Usage(
                "exactly one of --preset or --spec-file is required".into(),
            ))
        }
    };
    if let Some(total) = args.scale {
        spec.reports_per_class = scale_counts(&spec.reports_per_class, total);
    }
    if let Some(noise) = args.noise {
        spec = spec.with_noise(noise);
    }
    let reports = generate(&spec)?;
    write_corpus(&args.out, &reports)?;
    let labels_path = labels_path_for(&args.out);
    std::fs::write(&labels_path, serde_json::to_string_pretty(&spec.class_names)?)
        .map_err(|e| Error::io(format!("writing labels {}", labels_path.display()), e))?;
    println!(
        "wrote {} reports to {} (labels: {})",
        reports.len(),
        args.out.display(),
        labels_path.display()
    );
    print_stats_table(&corpus_stats(&reports)?);
    Ok(())
}

/// Everything one training invocation needs, assembled from defaults, then
/// the config file, then command-line flags.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub conv: ConvSettings,
    pub ngram_order: usize,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> ExperimentConfig {
        ExperimentConfig {
            model: ModelKind::BiCnn,
            conv: ConvSettings::default(),
            ngram_order: 3,
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Apply one `key = value` setting (the config-file grammar).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str, v: &str| Error::Usage(format!("invalid {what} value {v:?}"));
        match key {
            "model" => self.model = ModelKind::from_str(value)?,
            "kernel_sizes" => {
                let sizes: std::result::Result<Vec<usize>, _> =
                    value.split(',').map(|s| s.trim().parse()).collect();
                self.conv.kernel_sizes = sizes.map_err(|_| bad(key, value))?;
            }
            "feature_maps" => self.conv.feature_maps = value.parse().map_err(|_| bad(key, value))?,
            "embedding_dim" => {
                self.conv.embedding_dim = value.parse().map_err(|_| bad(key, value))?
            }
            "embedding_range" => {
                self.conv.embedding_range = value.parse().map_err(|_| bad(key, value))?
            }
            "dropout" => self.conv.dropout_p = value.parse().map_err(|_| bad(key, value))?,
            "ngram_order" => self.ngram_order = value.parse().map_err(|_| bad(key, value))?,
            "batch_size" => self.train.batch_size = value.parse().map_err(|_| bad(key, value))?,
            "learning_rate" => {
                self.train.learning_rate = value.parse().map_err(|_| bad(key, value))?
            }
            "lr_decay_rate" => {
                self.train.lr_decay_rate = value.parse().map_err(|_| bad(key, value))?
            }
            "lr_decay_interval" => {
                self.train.lr_decay_interval = value.parse().map_err(|_| bad(key, value))?
            }
            "epochs" => self.train.epochs = value.parse().map_err(|_| bad(key, value))?,
            "l2_eta" => self.train.l2_eta = value.parse().map_err(|_| bad(key, value))?,
            "adam_beta1" => self.train.adam_beta1 = value.parse().map_err(|_| bad(key, value))?,
            "adam_beta2" => self.train.adam_beta2 = value.parse().map_err(|_| bad(key, value))?,
            "adam_epsilon" => {
                self.train.adam_epsilon = value.parse().map_err(|_| bad(key, value))?
            }
            "patience" => self.train.patience = value.parse().map_err(|_| bad(key, value))?,
            "train_fraction" => {
                self.train.train_fraction = value.parse().map_err(|_| bad(key, value))?
            }
            "valid_fraction" => {
                self.train.valid_fraction = value.parse().map_err(|_| bad(key, value))?
            }
            "test_fraction" => {
                self.train.test_fraction = value.parse().map_err(|_| bad(key, value))?
            }
            "num_runs" => self.train.num_runs = value.parse().map_err(|_| bad(key, value))?,
            "seed" => self.train.seed = value.parse().map_err(|_| bad(key, value))?,
            "loss_mode" => {
                self.train.loss_mode = match value {
                    "categorical" => LossMode::Categorical,
                    "literal-binary" => LossMode::LiteralBinary,
                    _ => return Err(bad(key, value)),
                }
            }
            "penalty_mode" => {
                self.train.penalty_mode = match value {
                    "squared" => PenaltyMode::Squared,
                    "norm" => PenaltyMode::Norm,
                    _ => return Err(bad(key, value)),
                }
            }
            other => return Err(Error::Usage(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Read a config file: one `key = value` per line, `#` comments.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let content = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        for (lineno, raw) in content.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Usage(format!(
                    "{}:{}: expected key = value",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }
}

fn assemble_config(args: &TrainArgs) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::default();
    if let Some(path) = &args.config {
        config.apply_file(path)?;
    }
    if let Some(model) = &args.model {
        config.model = ModelKind::from_str(model)?;
    }
    if let Some(kernels) = &args.kernels {
        config.conv.kernel_sizes = kernels.clone();
    }
    if let Some(v) = args.feature_maps {
        config.conv.feature_maps = v;
    }
    if let Some(v) = args.embedding_dim {
        config.conv.embedding_dim = v;
    }
    if let Some(v) = args.dropout {
        config.conv.dropout_p = v;
    }
    if let Some(v) = args.ngram_order {
        config.ngram_order = v;
    }
    if let Some(v) = args.batch_size {
        config.train.batch_size = v;
    }
    if let Some(v) = args.lr {
        config.train.learning_rate = v;
    }
    if let Some(v) = args.lr_decay_rate {
        config.train.lr_decay_rate = v;
    }
    if let Some(v) = args.lr_decay_interval {
        config.train.lr_decay_interval = v;
    }
    if let Some(v) = args.epochs {
        config.train.epochs = v;
    }
    if let Some(v) = args.l2 {
        config.train.l2_eta = v;
    }
    if let Some(v) = args.patience {
        config.train.patience = v;
    }
    if let Some(v) = args.runs {
        config.train.num_runs = v;
    }
    if let Some(v) = args.seed {
        config.train.seed = v;
    }
    if let Some(loss) = &args.loss {
        config.set("loss_mode", loss)?;
    }
    if let Some(penalty) = &args.penalty {
        config.set("penalty_mode", penalty)?;
    }
    if config.model == ModelKind::Cnn {
        config.conv.num_channels = 1;
    }
    config.train.validate()?;
    Ok(config)
}

fn load_labels(corpus: &Path, reports: &[Report]) -> Result<Vec<String>> {
    let path = labels_path_for(corpus);
    let num_classes = crate::experiment::infer_num_classes(reports);
    if path.exists() {
        let json = std::fs::read_to_string(&path)
            .map_err(|e| Error::io(format!("reading labels {}", path.display()), e))?;
        let labels: Vec<String> = serde_json::from_str(&json)?;
        if labels.len() < num_classes {
            return Err(Error::Data(format!(
                "labels file {} lists {} classes but the corpus uses {}",
                path.display(),
                labels.len(),
                num_classes
            )));
        }
        Ok(labels)
    } else {
        Ok((0..num_classes).map(|i| format!("class {i}")).collect())
    }
}

#[derive(Serialize)]
struct RunSummary {
    run: usize,
    seed: u64,
    test_accuracy: f64,
    convergence_epoch: usize,
    best_epoch: usize,
    epochs_ran: usize,
    steps: u64,
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    config: &'a ExperimentConfig,
    corpus: String,
    labels: &'a [String],
    runs: Vec<RunSummary>,
    aggregate: Aggregate,
    saved_run: usize,
    saved_run_test_accuracy: f64,
}

#[derive(Serialize)]
struct Aggregate {
    test_accuracy: crate::train::MeanMedianStd,
    convergence_epoch: crate::train::MeanMedianStd,
}

#[derive(Serialize)]
struct MetricsRecord<'a> {
    run: usize,
    seed: u64,
    #[serde(flatten)]
    epoch: &'a crate::train::EpochRecord,
}

fn write_metrics(path: &Path, cv: &CrossValidation) -> Result<()> {
    let mut file = std::fs::File::create(path)
        .map_err(|e| Error::io(format!("creating metrics {}", path.display()), e))?;
    for (run, result) in cv.runs.iter().enumerate() {
        for epoch in &result.epochs {
            let record = MetricsRecord {
                run,
                seed: cv.seeds[run],
                epoch,
            };
            writeln!(file, "{}", serde_json::to_string(&record)?)
                .map_err(|e| Error::io(format!("writing metrics {}", path.display()), e))?;
        }
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let config = assemble_config(&args)?;
    let reports = read_corpus(&args.corpus)?;
    if reports.is_empty() {
        return Err(Error::Data(format!(
            "corpus {} is empty",
            args.corpus.display()
        )));
    }
    let labels = load_labels(&args.corpus, &reports)?;
    let num_classes = labels.len();
    let dir = out_dir(args.out);
    std::fs::create_dir_all(&dir)
        .map_err(|e| Error::io(format!("creating output dir {}", dir.display()), e))?;

    let started = std::time::Instant::now();
    let cv = cross_validate_kind(
        config.model,
        &reports,
        &config.conv,
        config.ngram_order,
        num_classes,
        &config.train,
        !args.serial,
    )?;

    // best run by test accuracy, ties toward the lowest index
    let saved_run = cv
        .runs
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            a.test_accuracy
                .partial_cmp(&b.test_accuracy)
                .expect("finite accuracy")
                .then(ib.cmp(ia))
        })
        .map(|(i, _)| i)
        .expect("at least two runs");
    let best_config = TrainConfig {
        seed: cv.seeds[saved_run],
        ..config.train.clone()
    };

    let model_path = dir.join("model.bin");
    let test_split_path = dir.join("test_split.jsonl");
    match config.model {
        ModelKind::BiCnn | ModelKind::Cnn => {
            let best = run_conv(&reports, &config.conv, num_classes, &best_config)?;
            debug_assert_eq!(best.result.test_accuracy, cv.runs[saved_run].test_accuracy);
            save_bicnn(&model_path, &best.model, &best.vocab, &labels)?;
            best.vocab.save(&dir.join("vocab.json"))?;
            write_corpus(&test_split_path, &best.test_reports)?;
        }
        ModelKind::Ngram => {
            let best = run_ngram(&reports, config.ngram_order, num_classes, &best_config)?;
            save_ngram_linear(
                &model_path,
                &best.featurizer,
                &best.model,
                &labels,
                best_config.seed,
            )?;
            best.featurizer.save(&dir.join("featurizer.json"))?;
            write_corpus(&test_split_path, &best.test_reports)?;
        }
    }

    write_metrics(&dir.join("metrics.jsonl"), &cv)?;
    let summary = TrainSummary {
        config: &config,
        corpus: args.corpus.display().to_string(),
        labels: &labels,
        runs: cv
            .runs
            .iter()
            .enumerate()
            .map(|(run, r)| RunSummary {
                run,
                seed: cv.seeds[run],
                test_accuracy: r.test_accuracy,
                convergence_epoch: r.convergence_epoch,
                best_epoch: r.best_epoch,
                epochs_ran: r.epochs.len(),
                steps: r.steps,
            })
            .collect(),
        aggregate: Aggregate {
            test_accuracy: cv.test_accuracy,
            convergence_epoch: cv.convergence_epoch,
        },
        saved_run,
        saved_run_test_accuracy: cv.runs[saved_run].test_accuracy,
    };
    let summary_path = dir.join("summary.json");
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)
        .map_err(|e| Error::io(format!("writing summary {}", summary_path.display()), e))?;

    println!(
        "{} on {}: {} runs, test accuracy mean {:.4} median {:.4} std {:.4}",
        config.model,
        args.corpus.display(),
        cv.runs.len(),
        cv.test_accuracy.mean,
        cv.test_accuracy.median,
        cv.test_accuracy.std
    );
    println!(
        "convergence epoch mean {:.2}; saved run {} (test accuracy {:.4}) to {}",
        cv.convergence_epoch.mean,
        saved_run,
        cv.runs[saved_run].test_accuracy,
        model_path.display()
    );
    eprintln!("training wall time: {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}

fn write_confusion_csv(path: &Path, labels: &[String], evaluation: &Evaluation) -> Result<()> {
    let mut out = String::new();
    out.push_str("true\\predicted");
    for label in labels {
        out.push(',');
        out.push_str(label);
    }
    out.push('\n');
    for (row_label, row) in labels.iter().zip(evaluation.confusion.iter()) {
        out.push_str(row_label);
        for count in row {
            out.push(',');
            out.push_str(&count.to_string());
        }
        out.push('\n');
    }
    std::fs::write(path, out)
        .map_err(|e| Error::io(format!("writing confusion {}", path.display()), e))
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let saved = load_model(&args.model)?;
    let reports = read_corpus(&args.corpus)?;
    let evaluation = evaluate_saved(&saved, &reports)?;
    let labels = saved.labels();
    println!("accuracy {:.6} over {} reports", evaluation.accuracy, reports.len());
    println!("class                             precision recall");
    for (i, label) in labels.iter().enumerate().take(evaluation.precision.len()) {
        println!(
            "{label:<33} {:<9.4} {:<9.4}",
            evaluation.precision[i], evaluation.recall[i]
        );
    }
    let dir = out_dir(args.out);
    std::fs::create_dir_all(&dir)
        .map_err(|e| Error::io(format!("creating output dir {}", dir.display()), e))?;
    let confusion_path = dir.join("confusion.csv");
    write_confusion_csv(&confusion_path, &labels[..evaluation.precision.len()], &evaluation)?;
    println!("confusion matrix written to {}", confusion_path.display());
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let saved = load_model(&args.model)?;
    let probs = saved.predict_text(&args.text)?;
    let predicted = crate::train::argmax(&probs);
    let labels = saved.labels();
    let name = labels
        .get(predicted)
        .map(String::as_str)
        .unwrap_or("(unnamed)");
    println!("predicted: {name} (label {predicted})");
    for (i, p) in probs.iter().enumerate() {
        let label = labels.get(i).map(String::as_str).unwrap_or("(unnamed)");
        println!("  {label:<33} {p:.6}");
    }
    Ok(())
}

fn cmd_stats(args: StatsArgs) -> Result<()> {
    let reports = read_corpus(&args.corpus)?;
    let stats = corpus_stats(&reports)?;
    print_stats_table(&stats);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_and_overrides_compose() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.cfg");
        std::fs::write(
            &path,
            "# experiment\nmodel = cnn\nlearning_rate = 0.01\nkernel_sizes = 2,3\nepochs = 7\n",
        )
        .unwrap();
        let mut config = ExperimentConfig::default();
        config.apply_file(&path).unwrap();
        assert_eq!(config.model, ModelKind::Cnn);
        assert_eq!(config.train.learning_rate, 0.01);
        assert_eq!(config.conv.kernel_sizes, vec![2, 3]);
        assert_eq!(config.train.epochs, 7);
        // a later flag-style set wins
        config.set("learning_rate", "0.1").unwrap();
        assert_eq!(config.train.learning_rate, 0.1);
    }

    #[test]
    fn config_rejects_unknown_keys_and_values() {
        let mut config = ExperimentConfig::default();
        assert!(matches!(
            config.set("no_such_key", "1"),
            Err(Error::Usage(_))
        ));
        assert!(matches!(config.set("epochs", "x"), Err(Error::Usage(_))));
        assert!(matches!(config.set("model", "svm"), Err(Error::Usage(_))));
    }

    #[test]
    fn default_config_matches_reported_setup() {
        let config = ExperimentConfig::default();
        assert_eq!(config.conv.kernel_sizes, vec![3, 4, 5]);
        assert_eq!(config.conv.feature_maps, 120);
        assert_eq!(config.train.batch_size, 64);
        assert_eq!(config.train.learning_rate, 0.001);
        assert_eq!(config.train.l2_eta, 1e-4);
        assert_eq!(config.train.num_runs, 30);
        assert_eq!(config.conv.dropout_p, 0.5);
        assert_eq!(config.train.epochs, 50);
        assert_eq!(
            (
                config.train.train_fraction,
                config.train.valid_fraction,
                config.train.test_fraction
            ),
            (0.70, 0.15, 0.15)
        );
    }

    #[test]
    fn labels_path_swaps_extension() {
        assert_eq!(
            labels_path_for(Path::new("/tmp/corpus.jsonl")),
            PathBuf::from("/tmp/corpus.labels.json")
        );
    }
}
