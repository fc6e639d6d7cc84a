//! The convolutional classifier: per-channel filter banks over embedded
//! token sequences, max-over-time pooling, dropout, and a softmax output
//! layer. Two channels make the bi-directional variant; one channel is the
//! plain CNN.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor};
use crate::text::{IndexedSequence, Vocabulary};

/// Whether a forward pass samples dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Infer,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    /// Filter window sizes, e.g. {3, 4, 5}.
    pub kernel_sizes: Vec<usize>,
    /// Feature maps per filter size (F).
    pub feature_maps: usize,
    /// Embedding dimensionality (D).
    pub embedding_dim: usize,
    /// Output classes (C).
    pub num_classes: usize,
    /// 2 for the bi-directional model, 1 for the plain CNN.
    pub num_channels: usize,
    /// Dropout probability on the pooled feature vector.
    pub dropout_p: f64,
    /// Padded sequence length N_max; fixes the per-position bias shapes.
    pub padded_len: usize,
    /// Embedding rows are drawn uniformly from [-range, range].
    pub embedding_range: f64,
}

impl ModelConfig {
    pub fn new(num_classes: usize, padded_len: usize) -> ModelConfig {
        ModelConfig {
            kernel_sizes: vec![3, 4, 5],
            feature_maps: 120,
            embedding_dim: 128,
            num_classes,
            num_channels: 2,
            dropout_p: 0.5,
            padded_len,
            embedding_range: 0.25,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_sizes.is_empty() {
            return Err(Error::InvalidConfig("no kernel sizes".into()));
        }
        if self.kernel_sizes.iter().any(|&k| k == 0) {
            return Err(Error::InvalidConfig("kernel size must be >= 1".into()));
        }
        if let Some(&k) = self.kernel_sizes.iter().find(|&&k| k > self.padded_len) {
            return Err(Error::InvalidConfig(format!(
                "kernel size {k} exceeds padded length {}",
                self.padded_len
            )));
        }
        if self.feature_maps == 0 || self.embedding_dim == 0 || self.padded_len == 0 {
            return Err(Error::InvalidConfig(
                "feature_maps, embedding_dim and padded_len must be >= 1".into(),
            ));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidConfig("need at least 2 classes".into()));
        }
        if !(self.num_channels == 1 || self.num_channels == 2) {
            return Err(Error::InvalidConfig("num_channels must be 1 or 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::InvalidConfig(format!(
                "dropout_p {} outside [0, 1)",
                self.dropout_p
            )));
        }
        if self.embedding_range <= 0.0 {
            return Err(Error::InvalidConfig("embedding_range must be > 0".into()));
        }
        Ok(())
    }

    /// Length of the concatenated pooled feature vector.
    pub fn pooled_len(&self) -> usize {
        self.num_channels * self.kernel_sizes.len() * self.feature_maps
    }
}

/// One convolution filter: shared weights [K, D] and a per-position bias
/// [N_max - K + 1].
pub struct Filter {
    pub weights: Tensor,
    pub bias: Tensor,
}

/// All filters of one window size within one channel.
pub struct FilterBank {
    pub kernel_size: usize,
    pub filters: Vec<Filter>,
}

pub struct Channel {
    pub banks: Vec<FilterBank>,
}

pub struct BiCnnModel {
    pub config: ModelConfig,
    pub vocab_size: usize,
    pub seed: u64,
    /// Embedding table [V + 2, D]: row 0 padding, rows 1..=V words, row V+1 UNK.
    pub embedding: Tensor,
    pub channels: Vec<Channel>,
    /// Output weights [L_total, C].
    pub output_weights: Tensor,
    /// Output bias [C].
    pub output_bias: Tensor,
}

/// Uniform Xavier bound for a fan_in x fan_out dense layer.
fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl BiCnnModel {
    /// Build a model with freshly initialized parameters. Deterministic for
    /// a given seed: embedding rows uniform, convolution weights normal with
    /// standard deviation 0.1, all biases 0.1, output weights Xavier.
    pub fn init(config: ModelConfig, vocab_size: usize, seed: u64) -> Result<BiCnnModel> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = config.embedding_dim;

        let rows = vocab_size + 2;
        let mut embedding = vec![0.0; rows * dim];
        let range = config.embedding_range;
        // row 0 stays zero: padding contributes nothing
        for value in embedding.iter_mut().skip(dim) {
            *value = rng.gen_range(-range..range);
        }
        let embedding = Tensor::from_values(&[rows, dim], embedding)?;

        let conv_dist = Normal::new(0.0, 0.1).expect("valid normal");
        let mut channels = Vec::with_capacity(config.num_channels);
        for _ in 0..config.num_channels {
            let mut banks = Vec::with_capacity(config.kernel_sizes.len());
            for &k in &config.kernel_sizes {
                let out_len = config.padded_len - k + 1;
                let mut filters = Vec::with_capacity(config.feature_maps);
                for _ in 0..config.feature_maps {
                    let weights: Vec<f64> =
                        (0..k * dim).map(|_| conv_dist.sample(&mut rng)).collect();
                    filters.push(Filter {
                        weights: Tensor::from_values(&[k, dim], weights)?,
                        bias: Tensor::from_values(&[out_len], vec![0.1; out_len])?,
                    });
                }
                banks.push(FilterBank {
                    kernel_size: k,
                    filters,
                });
            }
            channels.push(Channel { banks });
        }

        let pooled = config.pooled_len();
        let classes = config.num_classes;
        let bound = xavier_bound(pooled, classes);
        let output_values: Vec<f64> = (0..pooled * classes)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        let output_weights = Tensor::from_values(&[pooled, classes], output_values)?;
        let output_bias = Tensor::from_values(&[classes], vec![0.1; classes])?;

        Ok(BiCnnModel {
            config,
            vocab_size,
            seed,
            embedding,
            channels,
            output_weights,
            output_bias,
        })
    }

    /// Run one padded sequence through the network, recording onto `graph`.
    /// Channel 1 reads `seq.forward`, channel 2 `seq.reverse`. In the train
    /// phase an inverted-dropout mask (Bernoulli keep, scaled by 1/(1-p)) is
    /// applied to the pooled features; inference applies no mask and ignores
    /// the RNG.
    pub fn forward(
        &self,
        graph: &mut Graph,
        seq: &IndexedSequence,
        phase: Phase,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor> {
        if seq.padded_len() != self.config.padded_len {
            return Err(Error::ShapeMismatch {
                op: "forward",
                detail: format!(
                    "sequence padded to {}, model expects {}",
                    seq.padded_len(),
                    self.config.padded_len
                ),
            });
        }
        let mut pooled = Vec::with_capacity(self.config.pooled_len());
        for (channel_idx, channel) in self.channels.iter().enumerate() {
            let indices = if channel_idx == 0 {
                &seq.forward
            } else {
                &seq.reverse
            };
            let embedded = graph.embed_lookup(&self.embedding, indices)?;
            for bank in &channel.banks {
                for filter in &bank.filters {
                    let conv = graph.conv_window(&embedded, &filter.weights, &filter.bias)?;
                    let activated = graph.relu(&conv);
                    pooled.push(graph.max_over_time(&activated)?);
                }
            }
        }
        let features = graph.concat(&pooled);

        let mask = match phase {
            Phase::Infer => Tensor::from_values(&[features.len()], vec![1.0; features.len()])?,
            Phase::Train => {
                let keep = 1.0 - self.config.dropout_p;
                let scale = 1.0 / keep;
                let mask: Vec<f64> = (0..features.len())
                    .map(|_| if rng.gen::<f64>() < keep { scale } else { 0.0 })
                    .collect();
                Tensor::from_values(&[features.len()], mask)?
            }
        };
        graph.dense_softmax(&features, &mask, &self.output_weights, &self.output_bias)
    }

    /// Class probabilities for one sequence with dropout disabled.
    pub fn infer(&self, seq: &IndexedSequence) -> Result<Vec<f64>> {
        let mut graph = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let probs = self.forward(&mut graph, seq, Phase::Infer, &mut rng)?;
        Ok(probs.values())
    }

    /// Every trainable tensor, in a stable order.
    pub fn parameters(&self) -> Vec<Tensor> {
        let mut params = vec![self.embedding.clone()];
        for channel in &self.channels {
            for bank in &channel.banks {
                for filter in &bank.filters {
                    params.push(filter.weights.clone());
                    params.push(filter.bias.clone());
                }
            }
        }
        params.push(self.output_weights.clone());
        params.push(self.output_bias.clone());
        params
    }

    /// Exact number of scalar parameters.
    pub fn count_params(&self) -> usize {
        self.parameters().iter().map(Tensor::len).sum()
    }

    /// The padding row of the embedding table never trains; clearing its
    /// gradient after backward keeps it exactly zero.
    pub fn clear_pad_row_grad(&self) {
        let dim = self.config.embedding_dim;
        self.embedding.with_data(|data| {
            for g in &mut data.grad[..dim] {
                *g = 0.0;
            }
        });
    }

    fn tensor_manifest(&self) -> Vec<(String, Tensor)> {
        let mut entries = vec![("embedding".to_string(), self.embedding.clone())];
        for (c, channel) in self.channels.iter().enumerate() {
            for bank in &channel.banks {
                for (f, filter) in bank.filters.iter().enumerate() {
                    let stem = format!("channel{c}.k{}.f{f}", bank.kernel_size);
                    entries.push((format!("{stem}.weights"), filter.weights.clone()));
                    entries.push((format!("{stem}.bias"), filter.bias.clone()));
                }
            }
        }
        entries.push(("output.weights".to_string(), self.output_weights.clone()));
        entries.push(("output.bias".to_string(), self.output_bias.clone()));
        entries
    }
}

impl crate::train::Classifier for BiCnnModel {
    type Input = IndexedSequence;

    fn forward(
        &self,
        graph: &mut Graph,
        input: &IndexedSequence,
        phase: Phase,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor> {
        BiCnnModel::forward(self, graph, input, phase, rng)
    }

    fn parameters(&self) -> Vec<Tensor> {
        BiCnnModel::parameters(self)
    }

    fn penalized_weights(&self) -> Tensor {
        self.output_weights.clone()
    }

    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn post_backward(&self) {
        self.clear_pad_row_grad();
    }
}

// ---------------------------------------------------------------------------
// Persistence: a versioned JSON header followed by a little-endian f64 blob.
// ---------------------------------------------------------------------------

const MODEL_MAGIC: &[u8; 8] = b"BICNNMDL";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    kind: String,
    seed: u64,
    labels: Vec<String>,
    #[serde(default)]
    config: Option<ModelConfig>,
    #[serde(default)]
    vocab: Option<BTreeMap<String, u32>>,
    #[serde(default)]
    ngram_order: Option<usize>,
    #[serde(default)]
    grams: Option<BTreeMap<String, usize>>,
    tensors: Vec<TensorEntry>,
}

/// A model file: either the convolutional classifier with its vocabulary or
/// the n-gram linear baseline with its featurizer map.
pub enum SavedModel {
    BiCnn {
        model: BiCnnModel,
        vocab: Vocabulary,
        labels: Vec<String>,
    },
    NgramLinear {
        featurizer: crate::baseline::NgramFeaturizer,
        model: crate::baseline::LinearModel,
        labels: Vec<String>,
        seed: u64,
    },
}

impl SavedModel {
    pub fn labels(&self) -> &[String] {
        match self {
            SavedModel::BiCnn { labels, .. } => labels,
            SavedModel::NgramLinear { labels, .. } => labels,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            SavedModel::BiCnn { model, .. } => model.config.num_classes,
            SavedModel::NgramLinear { model, .. } => model.num_classes,
        }
    }

    /// Class probabilities for raw report text.
    pub fn predict_text(&self, text: &str) -> Result<Vec<f64>> {
        match self {
            SavedModel::BiCnn {
                model,
                vocab,
                ..
            } => {
                let mut tokens = crate::text::tokenize(text);
                if tokens.len() > model.config.padded_len {
                    tokens.truncate(model.config.padded_len);
                }
                let seq = crate::text::index_and_pad(&tokens, vocab, model.config.padded_len)?;
                model.infer(&seq)
            }
            SavedModel::NgramLinear {
                featurizer, model, ..
            } => {
                let tokens = crate::text::tokenize(text);
                let features = featurizer.featurize(&tokens);
                model.infer(&features)
            }
        }
    }
}

fn write_container(path: &Path, header: &Header, tensors: &[(String, Tensor)]) -> Result<()> {
    let header_json = serde_json::to_vec(header)?;
    let mut file = std::fs::File::create(path)
        .map_err(|e| Error::io(format!("creating model file {}", path.display()), e))?;
    let io_err = |e| Error::io(format!("writing model file {}", path.display()), e);
    file.write_all(MODEL_MAGIC).map_err(io_err)?;
    file.write_all(&(header_json.len() as u32).to_le_bytes())
        .map_err(io_err)?;
    file.write_all(&header_json).map_err(io_err)?;
    for (_, tensor) in tensors {
        let values = tensor.values();
        let mut bytes = Vec::with_capacity(values.len() * 8);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        file.write_all(&bytes).map_err(io_err)?;
    }
    Ok(())
}

fn read_container(path: &Path) -> Result<(Header, Vec<f64>)> {
    let mut file = std::fs::File::open(path)
        .map_err(|e| Error::io(format!("opening model file {}", path.display()), e))?;
    let io_err = |e| Error::io(format!("reading model file {}", path.display()), e);
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MODEL_MAGIC {
        return Err(Error::Data(format!(
            "{} is not a model file (bad magic)",
            path.display()
        )));
    }
    let mut len_bytes = [0u8; 4];
    file.read_exact(&mut len_bytes).map_err(io_err)?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    file.read_exact(&mut header_bytes).map_err(io_err)?;
    let header: Header = serde_json::from_slice(&header_bytes)?;
    if header.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::Data(format!(
            "unsupported model format version {}",
            header.format_version
        )));
    }
    let mut blob = Vec::new();
    file.read_to_end(&mut blob).map_err(io_err)?;
    if blob.len() % 8 != 0 {
        return Err(Error::Data("model blob is not a whole number of f64s".into()));
    }
    let values: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, values))
}

fn manifest_entries(tensors: &[(String, Tensor)]) -> Vec<TensorEntry> {
    let mut offset = 0;
    tensors
        .iter()
        .map(|(name, tensor)| {
            let entry = TensorEntry {
                name: name.clone(),
                shape: tensor.shape(),
                offset,
                len: tensor.len(),
            };
            offset += tensor.len();
            entry
        })
        .collect()
}

/// Save the convolutional model together with its vocabulary and class names.
pub fn save_bicnn(
    path: &Path,
    model: &BiCnnModel,
    vocab: &Vocabulary,
    labels: &[String],
) -> Result<()> {
    let tensors = model.tensor_manifest();
    let vocab_map: BTreeMap<String, u32> =
        serde_json::from_str(&vocab.to_json()).expect("vocabulary json is a map");
    let header = Header {
        format_version: MODEL_FORMAT_VERSION,
        kind: "bicnn".to_string(),
        seed: model.seed,
        labels: labels.to_vec(),
        config: Some(model.config.clone()),
        vocab: Some(vocab_map),
        ngram_order: None,
        grams: None,
        tensors: manifest_entries(&tensors),
    };
    write_container(path, &header, &tensors)
}

pub fn save_ngram_linear(
    path: &Path,
    featurizer: &crate::baseline::NgramFeaturizer,
    model: &crate::baseline::LinearModel,
    labels: &[String],
    seed: u64,
) -> Result<()> {
    let tensors = vec![
        ("weights".to_string(), model.weights.clone()),
        ("bias".to_string(), model.bias.clone()),
    ];
    let header = Header {
        format_version: MODEL_FORMAT_VERSION,
        kind: "ngram-linear".to_string(),
        seed,
        labels: labels.to_vec(),
        config: None,
        vocab: None,
        ngram_order: Some(featurizer.n_max),
        grams: Some(featurizer.gram_map()),
        tensors: manifest_entries(&tensors),
    };
    write_container(path, &header, &tensors)
}

/// Load any model file written by this crate.
pub fn load_model(path: &Path) -> Result<SavedModel> {
    let (header, values) = read_container(path)?;
    let slice = |entry: &TensorEntry| -> Result<Tensor> {
        let end = entry.offset + entry.len;
        if end > values.len() {
            return Err(Error::Data(format!(
                "tensor {} overruns the parameter blob",
                entry.name
            )));
        }
        Tensor::from_values(&entry.shape, values[entry.offset..end].to_vec())
    };
    match header.kind.as_str() {
        "bicnn" => {
            let config = header
                .config
                .ok_or_else(|| Error::Data("bicnn model header missing config".into()))?;
            config.validate()?;
            let vocab_map = header
                .vocab
                .ok_or_else(|| Error::Data("bicnn model header missing vocab".into()))?;
            let vocab = Vocabulary::from_json(&serde_json::to_string(&vocab_map)?)?;
            let mut by_name: BTreeMap<&str, &TensorEntry> = header
                .tensors
                .iter()
                .map(|e| (e.name.as_str(), e))
                .collect();
            let mut take = |name: &str| -> Result<Tensor> {
                let entry = by_name
                    .remove(name)
                    .ok_or_else(|| Error::Data(format!("model file missing tensor {name}")))?;
                slice(entry)
            };
            let embedding = take("embedding")?;
            if embedding.shape() != vec![vocab.table_rows(), config.embedding_dim] {
                return Err(Error::Data("embedding shape disagrees with vocab".into()));
            }
            let mut channels = Vec::new();
            for c in 0..config.num_channels {
                let mut banks = Vec::new();
                for &k in &config.kernel_sizes {
                    let mut filters = Vec::new();
                    for f in 0..config.feature_maps {
                        let stem = format!("channel{c}.k{k}.f{f}");
                        filters.push(Filter {
                            weights: take(&format!("{stem}.weights"))?,
                            bias: take(&format!("{stem}.bias"))?,
                        });
                    }
                    banks.push(FilterBank {
                        kernel_size: k,
                        filters,
                    });
                }
                channels.push(Channel { banks });
            }
            let model = BiCnnModel {
                vocab_size: vocab.size(),
                seed: header.seed,
                embedding,
                channels,
                output_weights: take("output.weights")?,
                output_bias: take("output.bias")?,
                config,
            };
            Ok(SavedModel::BiCnn {
                model,
                vocab,
                labels: header.labels,
            })
        }
        "ngram-linear" => {
            let grams = header
                .grams
                .ok_or_else(|| Error::Data("ngram model header missing gram map".into()))?;
            let order = header
                .ngram_order
                .ok_or_else(|| Error::Data("ngram model header missing order".into()))?;
            let featurizer = crate::baseline::NgramFeaturizer::from_gram_map(order, grams)?;
            let by_name: BTreeMap<&str, &TensorEntry> = header
                .tensors
                .iter()
                .map(|e| (e.name.as_str(), e))
                .collect();
            let weights = slice(
                by_name
                    .get("weights")
                    .ok_or_else(|| Error::Data("model file missing tensor weights".into()))?,
            )?;
            let bias = slice(
                by_name
                    .get("bias")
                    .ok_or_else(|| Error::Data("model file missing tensor bias".into()))?,
            )?;
            let num_classes = bias.len();
            Ok(SavedModel::NgramLinear {
                featurizer,
                model: crate::baseline::LinearModel {
                    weights,
                    bias,
                    num_classes,
                },
                labels: header.labels,
                seed: header.seed,
            })
        }
        other => Err(Error::Data(format!("unknown model kind {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{build_vocabulary, index_and_pad};

    fn small_config() -> ModelConfig {
        ModelConfig {
            kernel_sizes: vec![2, 3],
            feature_maps: 2,
            embedding_dim: 4,
            num_classes: 3,
            num_channels: 2,
            dropout_p: 0.5,
            padded_len: 6,
            embedding_range: 0.25,
        }
    }

    fn sample_sequence(n_words: usize) -> IndexedSequence {
        let words: Vec<String> = (0..10).map(|i| format!("w{i}")).collect();
        let vocab = build_vocabulary(&[words.clone()]);
        let tokens: Vec<String> = words[..n_words].to_vec();
        index_and_pad(&tokens, &vocab, 6).unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let a = BiCnnModel::init(small_config(), 10, 42).unwrap();
        let b = BiCnnModel::init(small_config(), 10, 42).unwrap();
        for (pa, pb) in a.parameters().iter().zip(b.parameters().iter()) {
            assert_eq!(pa.values(), pb.values());
        }
        let c = BiCnnModel::init(small_config(), 10, 43).unwrap();
        assert_ne!(a.embedding.values(), c.embedding.values());
    }

    #[test]
    fn init_sets_biases_to_point_one() {
        let model = BiCnnModel::init(small_config(), 10, 1).unwrap();
        for channel in &model.channels {
            for bank in &channel.banks {
                for filter in &bank.filters {
                    assert!(filter.bias.values().iter().all(|&b| b == 0.1));
                }
            }
        }
        assert!(model.output_bias.values().iter().all(|&b| b == 0.1));
    }

    #[test]
    fn init_pad_row_is_zero() {
        let model = BiCnnModel::init(small_config(), 10, 7).unwrap();
        let dim = model.config.embedding_dim;
        assert!(model.embedding.values()[..dim].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_weight_sample_std_near_point_one() {
        let mut config = small_config();
        config.feature_maps = 40;
        config.embedding_dim = 32;
        let model = BiCnnModel::init(config, 10, 3).unwrap();
        let mut samples = Vec::new();
        for channel in &model.channels {
            for bank in &channel.banks {
                for filter in &bank.filters {
                    samples.extend(filter.weights.values());
                }
            }
        }
        assert!(samples.len() >= 10_000);
        let mean: f64 = samples.iter().sum::<f64>() / samples.len() as f64;
        let var: f64 =
            samples.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / samples.len() as f64;
        let std = var.sqrt();
        assert!(
            (std - 0.1).abs() < 0.01,
            "sample std {std} not within 10% of 0.1"
        );
    }

    #[test]
    fn forward_probs_sum_to_one() {
        let model = BiCnnModel::init(small_config(), 10, 5).unwrap();
        let seq = sample_sequence(5);
        let probs = model.infer(&seq).unwrap();
        let sum: f64 = probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(probs.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn inference_is_deterministic() {
        let model = BiCnnModel::init(small_config(), 10, 5).unwrap();
        let seq = sample_sequence(4);
        assert_eq!(model.infer(&seq).unwrap(), model.infer(&seq).unwrap());
    }

    #[test]
    fn tied_channels_agree_on_palindromes() {
        let model = BiCnnModel::init(small_config(), 10, 9).unwrap();
        // tie channel 2's filters to channel 1's
        for (bank1, bank2) in model.channels[0].banks.iter().zip(&model.channels[1].banks) {
            for (f1, f2) in bank1.filters.iter().zip(&bank2.filters) {
                f2.weights.set_values(&f1.weights.values());
                f2.bias.set_values(&f1.bias.values());
            }
        }
        // palindromic token sequence: w0 w1 w0
        let words: Vec<String> = (0..10).map(|i| format!("w{i}")).collect();
        let vocab = build_vocabulary(&[words]);
        let tokens: Vec<String> = ["w0", "w1", "w0"].iter().map(|s| s.to_string()).collect();
        let seq = index_and_pad(&tokens, &vocab, 6).unwrap();
        assert_eq!(seq.forward, seq.reverse);

        let mut graph = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let _ = model
            .forward(&mut graph, &seq, Phase::Infer, &mut rng)
            .unwrap();
        // pooled features: recompute per channel by hand through the graph API
        let per_channel = model.config.kernel_sizes.len() * model.config.feature_maps;
        let mut g2 = Graph::new();
        let mut pooled = Vec::new();
        for (idx, channel) in model.channels.iter().enumerate() {
            let indices = if idx == 0 { &seq.forward } else { &seq.reverse };
            let embedded = g2.embed_lookup(&model.embedding, indices).unwrap();
            for bank in &channel.banks {
                for filter in &bank.filters {
                    let conv = g2.conv_window(&embedded, &filter.weights, &filter.bias).unwrap();
                    let act = g2.relu(&conv);
                    pooled.push(g2.max_over_time(&act).unwrap().scalar_value());
                }
            }
        }
        assert_eq!(pooled[..per_channel], pooled[per_channel..]);
    }

    #[test]
    fn single_channel_skips_reverse() {
        let mut config = small_config();
        config.num_channels = 1;
        let model = BiCnnModel::init(config, 10, 5).unwrap();
        let seq = sample_sequence(5);
        let probs = model.infer(&seq).unwrap();
        assert_eq!(probs.len(), 3);
        assert_eq!(model.config.pooled_len(), 2 * 2);
    }

    #[test]
    fn pooled_length_and_output_weight_count() {
        let config = ModelConfig::new(5, 40);
        assert_eq!(config.pooled_len(), 2 * 3 * 120);
        let single = ModelConfig {
            num_channels: 1,
            ..config.clone()
        };
        assert_eq!(single.pooled_len(), 360);
        let tiny = ModelConfig {
            num_channels: 1,
            kernel_sizes: vec![3],
            feature_maps: 1,
            ..config.clone()
        };
        assert_eq!(tiny.pooled_len(), 1);
        // 720 pooled features into 5 classes
        assert_eq!(config.pooled_len() * config.num_classes, 3600);
    }

    #[test]
    fn count_params_matches_declared_shapes() {
        let model = BiCnnModel::init(small_config(), 10, 5).unwrap();
        let config = &model.config;
        let mut expected = (10 + 2) * config.embedding_dim;
        for &k in &config.kernel_sizes {
            expected += config.num_channels
                * config.feature_maps
                * (k * config.embedding_dim + (config.padded_len - k + 1));
        }
        expected += config.pooled_len() * config.num_classes + config.num_classes;
        assert_eq!(model.count_params(), expected);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut config = small_config();
        config.num_classes = 1;
        assert!(matches!(
            BiCnnModel::init(config, 10, 1),
            Err(Error::InvalidConfig(_))
        ));
        let mut config = small_config();
        config.dropout_p = 1.0;
        assert!(config.validate().is_err());
        let mut config = small_config();
        config.kernel_sizes = vec![9];
        assert!(config.validate().is_err());
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let model = BiCnnModel::init(small_config(), 10, 11).unwrap();
        let words: Vec<String> = (0..10).map(|i| format!("w{i}")).collect();
        let vocab = build_vocabulary(&[words]);
        let labels: Vec<String> = (0..3).map(|i| format!("class {i}")).collect();
        save_bicnn(&path, &model, &vocab, &labels).unwrap();

        let loaded = load_model(&path).unwrap();
        let SavedModel::BiCnn {
            model: restored,
            vocab: vocab2,
            labels: labels2,
        } = loaded
        else {
            panic!("expected bicnn model");
        };
        assert_eq!(labels2, labels);
        assert_eq!(vocab2, vocab);
        assert_eq!(restored.config, model.config);
        let original = model.parameters();
        let reloaded = restored.parameters();
        assert_eq!(original.len(), reloaded.len());
        for (a, b) in original.iter().zip(reloaded.iter()) {
            assert_eq!(a.shape(), b.shape());
            let av = a.values();
            let bv = b.values();
            assert_eq!(av.len(), bv.len());
            for (x, y) in av.iter().zip(bv.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }

        // saving the reloaded model reproduces the file byte for byte
        let path2 = dir.path().join("model2.bin");
        save_bicnn(&path2, &restored, &vocab2, &labels2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }
}
