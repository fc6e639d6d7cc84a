//! Wiring for whole experiments: split the corpus, build the vocabulary and
//! featurizers from the training split only, initialize a model, train, and
//! evaluate. Every run is a pure function of (corpus, settings, seed).

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baseline::{fit_featurizer, LinearModel, NgramFeaturizer};
use crate::error::{Error, Result};
use crate::model::{BiCnnModel, ModelConfig, SavedModel};
use crate::text::{build_vocabulary, index_corpus, max_token_count, Report, Vocabulary};
use crate::train::{
    cross_validate, evaluate, split_data, train, CrossValidation, DataSplits, Evaluation,
    RunResult, TrainConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Two channels, forward plus reversed input.
    BiCnn,
    /// Single forward channel.
    Cnn,
    /// n-gram counts into softmax regression.
    Ngram,
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<ModelKind> {
        match s {
            "bicnn" => Ok(ModelKind::BiCnn),
            "cnn" => Ok(ModelKind::Cnn),
            "ngram" => Ok(ModelKind::Ngram),
            other => Err(Error::Usage(format!(
                "unknown model {other:?}; expected bicnn, cnn or ngram"
            ))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::BiCnn => "bicnn",
            ModelKind::Cnn => "cnn",
            ModelKind::Ngram => "ngram",
        })
    }
}

/// Data-independent convolutional-model settings; class count and padded
/// length come from the corpus at run time.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ConvSettings {
    pub kernel_sizes: Vec<usize>,
    pub feature_maps: usize,
    pub embedding_dim: usize,
    pub num_channels: usize,
    pub dropout_p: f64,
    pub embedding_range: f64,
}

impl Default for ConvSettings {
    fn default() -> ConvSettings {
        ConvSettings {
            kernel_sizes: vec![3, 4, 5],
            feature_maps: 120,
            embedding_dim: 128,
            num_channels: 2,
            dropout_p: 0.5,
            embedding_range: 0.25,
        }
    }
}

impl ConvSettings {
    pub fn single_channel(mut self) -> ConvSettings {
        self.num_channels = 1;
        self
    }

    fn model_config(&self, num_classes: usize, padded_len: usize) -> ModelConfig {
        let max_kernel = self.kernel_sizes.iter().copied().max().unwrap_or(1);
        ModelConfig {
            kernel_sizes: self.kernel_sizes.clone(),
            feature_maps: self.feature_maps,
            embedding_dim: self.embedding_dim,
            num_classes,
            num_channels: self.num_channels,
            dropout_p: self.dropout_p,
            padded_len: padded_len.max(max_kernel),
            embedding_range: self.embedding_range,
        }
    }
}

/// Smallest class count covering every label in the corpus.
pub fn infer_num_classes(reports: &[Report]) -> usize {
    reports.iter().map(|r| r.label + 1).max().unwrap_or(0)
}

pub struct ConvRun {
    pub result: RunResult,
    pub model: BiCnnModel,
    pub vocab: Vocabulary,
    pub test_reports: Vec<Report>,
    pub test_evaluation: Evaluation,
}

/// One seeded convolutional run. The vocabulary comes from the training
/// split alone; the padded length covers the longest report in the whole
/// corpus, so only reports outside this corpus can ever be truncated.
pub fn run_conv(
    reports: &[Report],
    settings: &ConvSettings,
    num_classes: usize,
    config: &TrainConfig,
) -> Result<ConvRun> {
    let (train_reports, valid_reports, test_reports) = split_data(
        reports,
        (
            config.train_fraction,
            config.valid_fraction,
            config.test_fraction,
        ),
        config.seed,
    )?;
    let train_tokens: Vec<Vec<String>> = train_reports.iter().map(Report::tokens).collect();
    let vocab = build_vocabulary(&train_tokens);
    let model_config = settings.model_config(num_classes, max_token_count(reports));
    let padded_len = model_config.padded_len;
    let model = BiCnnModel::init(model_config, vocab.size(), config.seed)?;
    let splits = DataSplits {
        train: index_corpus(&train_reports, &vocab, padded_len),
        valid: index_corpus(&valid_reports, &vocab, padded_len),
        test: index_corpus(&test_reports, &vocab, padded_len),
    };
    let result = train(&model, &splits, config)?;
    let test_evaluation = evaluate(&model, &splits.test, config.loss_mode)?;
    Ok(ConvRun {
        result,
        model,
        vocab,
        test_reports,
        test_evaluation,
    })
}

pub struct NgramRun {
    pub result: RunResult,
    pub featurizer: NgramFeaturizer,
    pub model: LinearModel,
    pub test_reports: Vec<Report>,
    pub test_evaluation: Evaluation,
}

/// One seeded n-gram baseline run with the shared trainer.
pub fn run_ngram(
    reports: &[Report],
    order: usize,
    num_classes: usize,
    config: &TrainConfig,
) -> Result<NgramRun> {
    let (train_reports, valid_reports, test_reports) = split_data(
        reports,
        (
            config.train_fraction,
            config.valid_fraction,
            config.test_fraction,
        ),
        config.seed,
    )?;
    let train_tokens: Vec<Vec<String>> = train_reports.iter().map(Report::tokens).collect();
    let featurizer = fit_featurizer(&train_tokens, order)?;
    let featurize_all = |reports: &[Report]| -> Vec<(Vec<f64>, usize)> {
        reports
            .iter()
            .map(|r| (featurizer.featurize(&r.tokens()), r.label))
            .collect()
    };
    let splits = DataSplits {
        train: featurize_all(&train_reports),
        valid: featurize_all(&valid_reports),
        test: featurize_all(&test_reports),
    };
    let model = LinearModel::init(featurizer.dimension(), num_classes, config.seed)?;
    let result = train(&model, &splits, config)?;
    let test_evaluation = evaluate(&model, &splits.test, config.loss_mode)?;
    Ok(NgramRun {
        result,
        featurizer,
        model,
        test_reports,
        test_evaluation,
    })
}

/// Repeated independent runs of one model kind; per-run seeds derive from
/// `config.seed`.
pub fn cross_validate_kind(
    kind: ModelKind,
    reports: &[Report],
    settings: &ConvSettings,
    ngram_order: usize,
    num_classes: usize,
    config: &TrainConfig,
    parallel: bool,
) -> Result<CrossValidation> {
    let runner = |_run: usize, seed: u64| -> Result<RunResult> {
        let run_config = TrainConfig {
            seed,
            ..config.clone()
        };
        match kind {
            ModelKind::BiCnn | ModelKind::Cnn => {
                run_conv(reports, settings, num_classes, &run_config).map(|r| r.result)
            }
            ModelKind::Ngram => {
                run_ngram(reports, ngram_order, num_classes, &run_config).map(|r| r.result)
            }
        }
    };
    cross_validate(config.num_runs, config.seed, parallel, runner)
}

/// Evaluate a persisted model on a corpus.
pub fn evaluate_saved(saved: &SavedModel, reports: &[Report]) -> Result<Evaluation> {
    if reports.is_empty() {
        return Err(Error::Data("empty corpus".into()));
    }
    let classes = saved.num_classes();
    if let Some(report) = reports.iter().find(|r| r.label >= classes) {
        return Err(Error::VocabularyMismatch(format!(
            "report {} has label {} but the model knows {} classes",
            report.id, report.label, classes
        )));
    }
    match saved {
        SavedModel::BiCnn { model, vocab, .. } => {
            let data = index_corpus(reports, vocab, model.config.padded_len);
            evaluate(model, &data, crate::tensor::LossMode::Categorical)
        }
        SavedModel::NgramLinear {
            featurizer, model, ..
        } => {
            let data: Vec<(Vec<f64>, usize)> = reports
                .iter()
                .map(|r| (featurizer.featurize(&r.tokens()), r.label))
                .collect();
            evaluate(model, &data, crate::tensor::LossMode::Categorical)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, mrd_like_scaled};

    fn small_settings() -> ConvSettings {
        ConvSettings {
            kernel_sizes: vec![2, 3],
            feature_maps: 4,
            embedding_dim: 8,
            num_channels: 2,
            dropout_p: 0.2,
            embedding_range: 0.25,
        }
    }

    fn quick_config(seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: 4,
            batch_size: 16,
            num_runs: 2,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn conv_run_is_seed_deterministic() {
        let reports = generate(&mrd_like_scaled(80, 3)).unwrap();
        let config = quick_config(11);
        let a = run_conv(&reports, &small_settings(), 5, &config).unwrap();
        let b = run_conv(&reports, &small_settings(), 5, &config).unwrap();
        assert_eq!(a.result, b.result);
        assert_eq!(a.test_reports, b.test_reports);
    }

    #[test]
    fn ngram_run_is_seed_deterministic() {
        let reports = generate(&mrd_like_scaled(80, 3)).unwrap();
        let config = quick_config(11);
        let a = run_ngram(&reports, 2, 5, &config).unwrap();
        let b = run_ngram(&reports, 2, 5, &config).unwrap();
        assert_eq!(a.result, b.result);
    }

    #[test]
    fn infer_num_classes_covers_labels() {
        let reports = generate(&mrd_like_scaled(60, 1)).unwrap();
        assert_eq!(infer_num_classes(&reports), 5);
    }

    #[test]
    fn model_kind_parses() {
        assert_eq!(ModelKind::from_str("bicnn").unwrap(), ModelKind::BiCnn);
        assert_eq!(ModelKind::from_str("cnn").unwrap(), ModelKind::Cnn);
        assert_eq!(ModelKind::from_str("ngram").unwrap(), ModelKind::Ngram);
        assert!(ModelKind::from_str("svm").is_err());
    }
}
