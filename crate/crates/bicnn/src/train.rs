//! Mini-batch Adam training with exponential learning-rate decay, early
//! stopping, seeded data splitting, repeated cross-validation, and metric
//! reporting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Phase;
use crate::tensor::{Graph, LossMode, PenaltyMode, Tensor};

/// Anything the shared trainer can fit: the convolutional models and the
/// n-gram linear baseline.
pub trait Classifier {
    type Input;

    fn forward(
        &self,
        graph: &mut Graph,
        input: &Self::Input,
        phase: Phase,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor>;

    /// Trainable tensors in a stable order.
    fn parameters(&self) -> Vec<Tensor>;

    /// The weight matrix the L2 penalty applies to (output-layer weights).
    fn penalized_weights(&self) -> Tensor;

    fn num_classes(&self) -> usize;

    /// Hook after each backward pass, before the optimizer step.
    fn post_backward(&self) {}
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay_rate: f64,
    /// Staircase interval in epochs for the exponential decay.
    pub lr_decay_interval: usize,
    pub epochs: usize,
    pub l2_eta: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Early stopping: epochs without validation-loss improvement.
    pub patience: usize,
    pub train_fraction: f64,
    pub valid_fraction: f64,
    pub test_fraction: f64,
    pub num_runs: usize,
    pub seed: u64,
    pub loss_mode: LossMode,
    pub penalty_mode: PenaltyMode,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            batch_size: 64,
            learning_rate: 0.001,
            lr_decay_rate: 0.96,
            lr_decay_interval: 1,
            epochs: 50,
            l2_eta: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            patience: 10,
            train_fraction: 0.70,
            valid_fraction: 0.15,
            test_fraction: 0.15,
            num_runs: 30,
            seed: 1,
            loss_mode: LossMode::Categorical,
            penalty_mode: PenaltyMode::Squared,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let sum = self.train_fraction + self.valid_fraction + self.test_fraction;
        if (sum - 1.0).abs() > 1e-9
            || self.train_fraction <= 0.0
            || self.valid_fraction < 0.0
            || self.test_fraction < 0.0
        {
            return Err(Error::InvalidConfig(format!(
                "split fractions {}/{}/{} do not sum to 1",
                self.train_fraction, self.valid_fraction, self.test_fraction
            )));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig("learning rate must be > 0".into()));
        }
        if self.lr_decay_rate <= 0.0 || self.lr_decay_interval == 0 {
            return Err(Error::InvalidConfig("invalid learning-rate decay".into()));
        }
        if self.patience == 0 {
            return Err(Error::InvalidConfig("patience must be >= 1".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidConfig(
                "batch_size and epochs must be >= 1".into(),
            ));
        }
        if self.l2_eta < 0.0 {
            return Err(Error::InvalidConfig("l2_eta must be >= 0".into()));
        }
        Ok(())
    }
}

/// Staircase exponential decay: `lr0 * rate^(epoch / interval)`.
pub fn decayed_lr(lr0: f64, epoch: usize, decay_rate: f64, interval: usize) -> f64 {
    lr0 * decay_rate.powi((epoch / interval) as i32)
}

/// Shuffle and split into train/valid/test. Valid and test sizes round
/// down; every leftover item lands in train.
pub fn split_data<T: Clone>(
    items: &[T],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let n = items.len();
    if n < 10 {
        return Err(Error::TooFewReports { got: n, min: 10 });
    }
    let (f_train, f_valid, f_test) = fractions;
    let sum = f_train + f_valid + f_test;
    if (sum - 1.0).abs() > 1e-9 || f_train <= 0.0 || f_valid < 0.0 || f_test < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "split fractions {fractions:?} do not sum to 1"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let n_valid = (f_valid * n as f64).floor() as usize;
    let n_test = (f_test * n as f64).floor() as usize;
    let n_train = n - n_valid - n_test;

    let pick = |range: std::ops::Range<usize>| -> Vec<T> {
        order[range].iter().map(|&i| items[i].clone()).collect()
    };
    Ok((
        pick(0..n_train),
        pick(n_train..n_train + n_valid),
        pick(n_train + n_valid..n),
    ))
}

/// First/second-moment state for Adam, aligned with a parameter list.
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> AdamState {
        AdamState {
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update with bias correction, at the decayed rate `lr_t`.
pub fn adam_step(
    params: &[Tensor],
    state: &mut AdamState,
    config: &TrainConfig,
    lr_t: f64,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (config.adam_beta1, config.adam_beta2, config.adam_epsilon);
    let m_correction = 1.0 - b1.powi(t);
    let v_correction = 1.0 - b2.powi(t);
    for (idx, param) in params.iter().enumerate() {
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        let finite = param.with_data(|data| {
            for i in 0..data.values.len() {
                let g = data.grad[i];
                if !g.is_finite() {
                    return false;
                }
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let m_hat = m[i] / m_correction;
                let v_hat = v[i] / v_correction;
                data.values[i] -= lr_t * m_hat / (v_hat.sqrt() + eps);
            }
            true
        });
        if !finite {
            return Err(Error::NonFiniteGradient { param: idx });
        }
    }
    Ok(())
}

/// One-hot target rows for a label batch.
pub fn one_hot_rows(labels: &[usize], num_classes: usize) -> Result<Tensor> {
    let mut values = vec![0.0; labels.len() * num_classes];
    for (i, &label) in labels.iter().enumerate() {
        if label >= num_classes {
            return Err(Error::Data(format!(
                "label {label} out of range for {num_classes} classes"
            )));
        }
        values[i * num_classes + label] = 1.0;
    }
    Tensor::from_values(&[labels.len(), num_classes], values)
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub valid_loss: f64,
    pub valid_accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub epochs: Vec<EpochRecord>,
    pub test_accuracy: f64,
    /// Epoch at which validation accuracy first attained its run-best value.
    pub convergence_epoch: usize,
    /// Epoch whose validation loss selected the returned model.
    pub best_epoch: usize,
    /// Total optimizer steps taken.
    pub steps: u64,
    /// Not serialized: wall time is not reproducible across machines.
    #[serde(skip)]
    pub wall_secs: f64,
}

// Wall time is measurement noise; two runs of the same seed are equal.
impl PartialEq for RunResult {
    fn eq(&self, other: &Self) -> bool {
        self.epochs == other.epochs
            && self.test_accuracy == other.test_accuracy
            && self.convergence_epoch == other.convergence_epoch
            && self.best_epoch == other.best_epoch
            && self.steps == other.steps
    }
}

#[derive(Debug, Clone)]
pub struct DataSplits<I> {
    pub train: Vec<(I, usize)>,
    pub valid: Vec<(I, usize)>,
    pub test: Vec<(I, usize)>,
}

/// Metrics of a frozen model over a labelled set.
#[derive(Debug, Clone, Serialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub mean_loss: f64,
    /// Per-class precision; 0 when the class was never predicted.
    pub precision: Vec<f64>,
    /// Per-class recall; 0 when the class never occurs.
    pub recall: Vec<f64>,
    /// confusion[true_class][predicted_class]
    pub confusion: Vec<Vec<usize>>,
}

/// Argmax predictions over a dataset; confusion row sums equal per-class
/// counts.
pub fn evaluate<M: Classifier>(
    model: &M,
    data: &[(M::Input, usize)],
    loss_mode: LossMode,
) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty set".into()));
    }
    let classes = model.num_classes();
    let mut confusion = vec![vec![0usize; classes]; classes];
    let mut correct = 0usize;
    let mut loss_sum = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (input, label) in data {
        if *label >= classes {
            return Err(Error::VocabularyMismatch(format!(
                "label {label} out of range for {classes}-class model"
            )));
        }
        let mut graph = Graph::new();
        let probs = model.forward(&mut graph, input, Phase::Infer, &mut rng)?;
        let y = graph.stack_rows(&[probs])?;
        let targets = one_hot_rows(&[*label], classes)?;
        loss_sum += graph
            .cross_entropy_loss(&y, &targets, loss_mode)?
            .scalar_value();
        let predicted = argmax(&y.values());
        confusion[*label][predicted] += 1;
        if predicted == *label {
            correct += 1;
        }
    }
    let n = data.len();
    let mut precision = vec![0.0; classes];
    let mut recall = vec![0.0; classes];
    for class in 0..classes {
        let true_positives = confusion[class][class];
        let predicted: usize = (0..classes).map(|t| confusion[t][class]).sum();
        let actual: usize = confusion[class].iter().sum();
        if predicted > 0 {
            precision[class] = true_positives as f64 / predicted as f64;
        }
        if actual > 0 {
            recall[class] = true_positives as f64 / actual as f64;
        }
    }
    Ok(Evaluation {
        accuracy: correct as f64 / n as f64,
        mean_loss: loss_sum / n as f64,
        precision,
        recall,
        confusion,
    })
}

/// Fit a model on the train split: shuffled mini-batches, loss =
/// cross-entropy + L2 penalty on the output weights, Adam updates at the
/// decayed rate, validation after every epoch, early stopping on validation
/// loss. Restores and returns the metrics of the best-validation-loss model.
pub fn train<M: Classifier>(
    model: &M,
    data: &DataSplits<M::Input>,
    config: &TrainConfig,
) -> Result<RunResult> {
    config.validate()?;
    if data.train.is_empty() || data.valid.is_empty() || data.test.is_empty() {
        return Err(Error::Data("train/valid/test splits must be non-empty".into()));
    }
    let started = std::time::Instant::now();
    let params = model.parameters();
    let mut adam = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let classes = model.num_classes();

    let snapshot = |params: &[Tensor]| -> Vec<Vec<f64>> {
        params.iter().map(Tensor::values).collect()
    };

    let mut records = Vec::new();
    let mut best_val_loss = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params = snapshot(&params);
    let mut best_val_accuracy = f64::NEG_INFINITY;
    let mut convergence_epoch = 0usize;
    let mut epochs_without_improvement = 0usize;

    for epoch in 0..config.epochs {
        let lr_t = decayed_lr(
            config.learning_rate,
            epoch,
            config.lr_decay_rate,
            config.lr_decay_interval,
        );
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            for param in &params {
                param.zero_grad();
            }
            let mut graph = Graph::new();
            let mut rows = Vec::with_capacity(batch.len());
            let mut labels = Vec::with_capacity(batch.len());
            for &i in batch {
                let (input, label) = &data.train[i];
                let probs = model.forward(&mut graph, input, Phase::Train, &mut rng)?;
                if argmax(&probs.values()) == *label {
                    correct += 1;
                }
                rows.push(probs);
                labels.push(*label);
            }
            let stacked = graph.stack_rows(&rows)?;
            let targets = one_hot_rows(&labels, classes)?;
            let ce = graph.cross_entropy_loss(&stacked, &targets, config.loss_mode)?;
            let penalty = graph.l2_penalty(
                &model.penalized_weights(),
                config.l2_eta,
                config.penalty_mode,
            )?;
            let loss = graph.add_scalars(&ce, &penalty)?;
            let loss_value = loss.scalar_value();
            if !loss_value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    context: format!(
                        "epoch {epoch}, step {}, batch of {}",
                        adam.step_count(),
                        batch.len()
                    ),
                });
            }
            graph.backward(&loss)?;
            model.post_backward();
            adam_step(&params, &mut adam, config, lr_t)?;
            loss_sum += loss_value * batch.len() as f64;
        }

        let valid = evaluate(model, &data.valid, config.loss_mode)?;
        records.push(EpochRecord {
            epoch,
            learning_rate: lr_t,
            train_loss: loss_sum / data.train.len() as f64,
            train_accuracy: correct as f64 / data.train.len() as f64,
            valid_loss: valid.mean_loss,
            valid_accuracy: valid.accuracy,
        });

        if valid.accuracy > best_val_accuracy {
            best_val_accuracy = valid.accuracy;
            convergence_epoch = epoch;
        }
        if valid.mean_loss < best_val_loss {
            best_val_loss = valid.mean_loss;
            best_epoch = epoch;
            best_params = snapshot(&params);
            epochs_without_improvement = 0;
        } else {
            epochs_without_improvement += 1;
            if epochs_without_improvement >= config.patience {
                break;
            }
        }
    }

    for (param, best) in params.iter().zip(best_params.iter()) {
        param.set_values(best);
    }
    let test = evaluate(model, &data.test, config.loss_mode)?;
    Ok(RunResult {
        epochs: records,
        test_accuracy: test.accuracy,
        convergence_epoch,
        best_epoch,
        steps: adam.step_count(),
        wall_secs: started.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct MeanMedianStd {
    pub mean: f64,
    pub median: f64,
    pub std: f64,
}

impl MeanMedianStd {
    pub fn from_samples(samples: &[f64]) -> MeanMedianStd {
        let n = samples.len();
        assert!(n > 0, "no samples");
        let mean = samples.iter().sum::<f64>() / n as f64;
        let mut sorted = samples.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        let std = if n > 1 {
            let ss: f64 = samples.iter().map(|&x| (x - mean) * (x - mean)).sum();
            (ss / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        MeanMedianStd { mean, median, std }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossValidation {
    pub runs: Vec<RunResult>,
    pub seeds: Vec<u64>,
    pub test_accuracy: MeanMedianStd,
    pub convergence_epoch: MeanMedianStd,
}

/// Seed for run `run` derived from a base seed (splitmix64).
pub fn derive_run_seed(base: u64, run: usize) -> u64 {
    let mut z = base
        .wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(run as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Run `runner` once per derived seed and aggregate. Runs execute in
/// parallel when `parallel` is set; per-run results are identical either
/// way because every run owns its seed, model, and RNG stream.
pub fn cross_validate_with_seeds<F>(
    seeds: &[u64],
    parallel: bool,
    runner: F,
) -> Result<CrossValidation>
where
    F: Fn(usize, u64) -> Result<RunResult> + Sync,
{
    if seeds.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "cross-validation needs at least 2 runs, got {}",
            seeds.len()
        )));
    }
    let run_one = |(run, seed): (usize, u64)| -> Result<RunResult> {
        runner(run, seed).map_err(|e| Error::RunFailed {
            run,
            source: Box::new(e),
        })
    };
    let runs: Vec<RunResult> = if parallel {
        seeds
            .par_iter()
            .copied()
            .enumerate()
            .map(run_one)
            .collect::<Result<Vec<_>>>()?
    } else {
        seeds
            .iter()
            .copied()
            .enumerate()
            .map(run_one)
            .collect::<Result<Vec<_>>>()?
    };
    let accuracies: Vec<f64> = runs.iter().map(|r| r.test_accuracy).collect();
    let convergence: Vec<f64> = runs.iter().map(|r| r.convergence_epoch as f64).collect();
    Ok(CrossValidation {
        test_accuracy: MeanMedianStd::from_samples(&accuracies),
        convergence_epoch: MeanMedianStd::from_samples(&convergence),
        seeds: seeds.to_vec(),
        runs,
    })
}

/// `num_runs` independent experiments with distinct derived seeds.
pub fn cross_validate<F>(
    num_runs: usize,
    base_seed: u64,
    parallel: bool,
    runner: F,
) -> Result<CrossValidation>
where
    F: Fn(usize, u64) -> Result<RunResult> + Sync,
{
    let seeds: Vec<u64> = (0..num_runs).map(|i| derive_run_seed(base_seed, i)).collect();
    cross_validate_with_seeds(&seeds, parallel, runner)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SignTest {
    pub greater: usize,
    pub less: usize,
    pub ties: usize,
    pub p_value: f64,
}

/// Two-sided exact sign test over paired samples.
pub fn sign_test(a: &[f64], b: &[f64]) -> SignTest {
    assert_eq!(a.len(), b.len(), "paired samples");
    let mut greater = 0usize;
    let mut less = 0usize;
    let mut ties = 0usize;
    for (&x, &y) in a.iter().zip(b.iter()) {
        if x > y {
            greater += 1;
        } else if x < y {
            less += 1;
        } else {
            ties += 1;
        }
    }
    let n = greater + less;
    let p_value = if n == 0 {
        1.0
    } else {
        let k = greater.min(less);
        // exact binomial tail at p = 1/2
        let mut tail = 0.0f64;
        for i in 0..=k {
            tail += binomial_coefficient(n, i);
        }
        (2.0 * tail / 2f64.powi(n as i32)).min(1.0)
    };
    SignTest {
        greater,
        less,
        ties,
        p_value,
    }
}

fn binomial_coefficient(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut c = 1.0f64;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decayed_lr_staircase() {
        assert_eq!(decayed_lr(0.01, 0, 0.5, 10), 0.01);
        assert!((decayed_lr(1.0, 20, 0.5, 10) - 0.25).abs() < 1e-15);
        assert_eq!(decayed_lr(0.003, 7, 1.0, 1), 0.003);
        // staircase: epochs 0..interval share the initial rate
        assert_eq!(decayed_lr(1.0, 9, 0.5, 10), 1.0);
    }

    #[test]
    fn split_sizes_follow_fractions() {
        let items: Vec<usize> = (0..100).collect();
        let (train, valid, test) = split_data(&items, (0.70, 0.15, 0.15), 3).unwrap();
        assert_eq!((train.len(), valid.len(), test.len()), (70, 15, 15));

        let small: Vec<usize> = (0..10).collect();
        let (train, valid, test) = split_data(&small, (0.70, 0.15, 0.15), 3).unwrap();
        assert_eq!((train.len(), valid.len(), test.len()), (8, 1, 1));
    }

    #[test]
    fn split_is_seed_deterministic_and_disjoint() {
        let items: Vec<usize> = (0..50).collect();
        let a = split_data(&items, (0.70, 0.15, 0.15), 9).unwrap();
        let b = split_data(&items, (0.70, 0.15, 0.15), 9).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<usize> = a.0.iter().chain(&a.1).chain(&a.2).copied().collect();
        all.sort_unstable();
        assert_eq!(all, items);
    }

    #[test]
    fn split_rejects_tiny_inputs() {
        let items: Vec<usize> = (0..9).collect();
        assert!(matches!(
            split_data(&items, (0.70, 0.15, 0.15), 1),
            Err(Error::TooFewReports { got: 9, min: 10 })
        ));
    }

    #[test]
    fn adam_zero_gradient_leaves_params_unchanged() {
        let param = Tensor::from_values(&[2], vec![1.0, -2.0]).unwrap();
        let params = vec![param.clone()];
        let mut state = AdamState::new(&params);
        adam_step(&params, &mut state, &TrainConfig::default(), 0.001).unwrap();
        assert_eq!(param.values(), vec![1.0, -2.0]);
    }

    #[test]
    fn adam_first_step_magnitude_is_learning_rate() {
        // with zero state and constant gradient g, the bias-corrected first
        // step is lr * g / (|g| + eps) = lr * sign(g), up to eps
        let param = Tensor::from_values(&[1], vec![0.5]).unwrap();
        param.with_data(|d| d.grad[0] = 0.3);
        let params = vec![param.clone()];
        let mut state = AdamState::new(&params);
        adam_step(&params, &mut state, &TrainConfig::default(), 0.001).unwrap();
        let moved = 0.5 - param.value_at(0);
        assert!((moved - 0.001).abs() < 1e-9, "moved {moved}");
    }

    #[test]
    fn adam_descends_against_constant_gradient() {
        let param = Tensor::from_values(&[1], vec![0.0]).unwrap();
        let params = vec![param.clone()];
        let mut state = AdamState::new(&params);
        let config = TrainConfig::default();
        for _ in 0..50 {
            param.with_data(|d| d.grad[0] = 2.0);
            adam_step(&params, &mut state, &config, 0.01).unwrap();
        }
        assert!(param.value_at(0) < -0.2);
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let param = Tensor::from_values(&[1], vec![0.0]).unwrap();
        param.with_data(|d| d.grad[0] = f64::NAN);
        let params = vec![param.clone()];
        let mut state = AdamState::new(&params);
        assert!(matches!(
            adam_step(&params, &mut state, &TrainConfig::default(), 0.001),
            Err(Error::NonFiniteGradient { param: 0 })
        ));
    }

    #[test]
    fn mean_median_std_agree_with_hand_counts() {
        let stats = MeanMedianStd::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(stats.mean, 2.5);
        assert_eq!(stats.median, 2.5);
        // sample variance of 1..4 is 5/3
        assert!((stats.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        let single = MeanMedianStd::from_samples(&[7.0]);
        assert_eq!(single.std, 0.0);
        assert_eq!(single.median, 7.0);
    }

    #[test]
    fn cross_validate_rejects_single_run() {
        let result = cross_validate(1, 0, false, |_, _| unreachable!());
        assert!(matches!(result, Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn cross_validate_aggregates_and_propagates_run_index() {
        let runner = |_run: usize, seed: u64| -> Result<RunResult> {
            Ok(RunResult {
                epochs: Vec::new(),
                test_accuracy: if seed % 2 == 0 { 0.8 } else { 0.6 },
                convergence_epoch: 3,
                best_epoch: 3,
                steps: 10,
                wall_secs: 0.0,
            })
        };
        let cv = cross_validate_with_seeds(&[2, 3], false, runner).unwrap();
        assert!((cv.test_accuracy.mean - 0.7).abs() < 1e-12);

        let failing = |run: usize, _seed: u64| -> Result<RunResult> {
            if run == 1 {
                Err(Error::Data("boom".into()))
            } else {
                runner(run, 0)
            }
        };
        match cross_validate_with_seeds(&[2, 3, 4], false, failing) {
            Err(Error::RunFailed { run: 1, .. }) => {}
            other => panic!("expected RunFailed, got {other:?}"),
        }
    }

    #[test]
    fn parallel_and_serial_cross_validation_agree() {
        let runner = |run: usize, seed: u64| -> Result<RunResult> {
            Ok(RunResult {
                epochs: Vec::new(),
                test_accuracy: (seed % 7) as f64 / 10.0 + run as f64,
                convergence_epoch: run,
                best_epoch: run,
                steps: run as u64,
                wall_secs: 0.0,
            })
        };
        let serial = cross_validate(4, 5, false, runner).unwrap();
        let parallel = cross_validate(4, 5, true, runner).unwrap();
        assert_eq!(serial.runs, parallel.runs);
        assert_eq!(serial.seeds, parallel.seeds);
    }

    #[test]
    fn derived_seeds_are_distinct() {
        let seeds: Vec<u64> = (0..30).map(|i| derive_run_seed(1, i)).collect();
        let mut dedup = seeds.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), seeds.len());
    }

    #[test]
    fn sign_test_extremes() {
        let all_greater = sign_test(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[0.0; 6]);
        assert_eq!(all_greater.greater, 6);
        // 2 * (1/2)^6 = 0.03125
        assert!((all_greater.p_value - 0.03125).abs() < 1e-12);

        let even = sign_test(&[1.0, 0.0], &[0.0, 1.0]);
        assert_eq!(even.p_value, 1.0);

        let ties = sign_test(&[1.0, 1.0], &[1.0, 1.0]);
        assert_eq!(ties.ties, 2);
        assert_eq!(ties.p_value, 1.0);
    }
}
