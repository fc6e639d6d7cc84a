//! Scratch probe for sizing acceptance experiments. Not part of the API.

use std::time::Instant;

use bicnn::experiment::{run_conv, run_ngram, ConvSettings};
use bicnn::synth::{generate, mrd_like_scaled};
use bicnn::train::{derive_run_seed, TrainConfig};

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "sep".to_string());
    match which.as_str() {
        "sep" => separable(),
        "trend" => trend(),
        "lr" => lr_sweep(),
        _ => eprintln!("unknown probe"),
    }
}

fn separable() {
    let reports = generate(&mrd_like_scaled(500, 42)).unwrap();
    let settings = ConvSettings {
        kernel_sizes: vec![3, 4, 5],
        feature_maps: 16,
        embedding_dim: 32,
        num_channels: 2,
        dropout_p: 0.5,
        embedding_range: 0.25,
    };
    let config = TrainConfig {
        epochs: 20,
        batch_size: 16,
        learning_rate: 0.003,
        lr_decay_rate: 0.98,
        num_runs: 1,
        seed: 1,
        patience: 20,
        ..TrainConfig::default()
    };
    let started = Instant::now();
    let run = run_conv(&reports, &settings, 5, &config).unwrap();
    println!(
        "separable: test_acc={:.4} convergence={} best={} epochs_ran={} wall={:.1}s",
        run.result.test_accuracy,
        run.result.convergence_epoch,
        run.result.best_epoch,
        run.result.epochs.len(),
        started.elapsed().as_secs_f64()
    );
    for e in &run.result.epochs {
        println!(
            "  epoch {:2} lr={:.5} train_loss={:.4} train_acc={:.3} val_loss={:.4} val_acc={:.3}",
            e.epoch, e.learning_rate, e.train_loss, e.train_accuracy, e.valid_loss, e.valid_accuracy
        );
    }
}

fn trend() {
    let n: usize = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(400);
    let runs: usize = std::env::args()
        .nth(3)
        .and_then(|s| s.parse().ok())
        .unwrap_or(10);
    let reports = generate(&mrd_like_scaled(n, 42).with_noise(0.15)).unwrap();
    let settings = ConvSettings {
        kernel_sizes: vec![3, 4, 5],
        feature_maps: 12,
        embedding_dim: 24,
        num_channels: 2,
        dropout_p: 0.5,
        embedding_range: 0.25,
    };
    let config = TrainConfig {
        epochs: 12,
        batch_size: 16,
        learning_rate: 0.003,
        lr_decay_rate: 0.98,
        num_runs: runs,
        seed: 7,
        patience: 12,
        ..TrainConfig::default()
    };
    let started = Instant::now();
    let mut bicnn_accs = Vec::new();
    let mut cnn_accs = Vec::new();
    let mut ngram_accs = Vec::new();
    for run in 0..runs {
        let seed = derive_run_seed(config.seed, run);
        let rc = TrainConfig { seed, ..config.clone() };
        let b = run_conv(&reports, &settings, 5, &rc).unwrap().result;
        let c = run_conv(&reports, &settings.clone().single_channel(), 5, &rc)
            .unwrap()
            .result;
        let g = run_ngram(&reports, 3, 5, &rc).unwrap().result;
        println!(
            "  run {run}: bicnn={:.3} cnn={:.3} ngram={:.3} (convergence {} / {} / {})",
            b.test_accuracy,
            c.test_accuracy,
            g.test_accuracy,
            b.convergence_epoch,
            c.convergence_epoch,
            g.convergence_epoch
        );
        bicnn_accs.push(b.test_accuracy);
        cnn_accs.push(c.test_accuracy);
        ngram_accs.push(g.test_accuracy);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!(
        "trend means: bicnn={:.4} cnn={:.4} ngram={:.4} wall={:.1}s",
        mean(&bicnn_accs),
        mean(&cnn_accs),
        mean(&ngram_accs),
        started.elapsed().as_secs_f64()
    );
}

fn lr_sweep() {
    let n: usize = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(350);
    let runs: usize = std::env::args()
        .nth(3)
        .and_then(|s| s.parse().ok())
        .unwrap_or(10);
    let reports = generate(&mrd_like_scaled(n, 42).with_noise(0.15)).unwrap();
    let settings = ConvSettings {
        kernel_sizes: vec![3, 4, 5],
        feature_maps: 16,
        embedding_dim: 32,
        num_channels: 2,
        dropout_p: 0.5,
        embedding_range: 0.25,
    };
    let started = Instant::now();
    for lr in [0.1, 0.001] {
        let mut accs = Vec::new();
        let mut convs = Vec::new();
        for run in 0..runs {
            let seed = derive_run_seed(97, run);
            let rc = TrainConfig {
                learning_rate: lr,
                epochs: 40,
                batch_size: 16,
                lr_decay_rate: 0.98,
                patience: 40,
                seed,
                ..TrainConfig::default()
            };
            let b = run_conv(&reports, &settings, 5, &rc).unwrap().result;
            accs.push(b.test_accuracy);
            convs.push(b.convergence_epoch as f64);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        println!(
            "lr={lr}: mean_acc={:.4} mean_convergence_epoch={:.2} wall={:.1}s",
            mean(&accs),
            mean(&convs),
            started.elapsed().as_secs_f64()
        );
    }
}
