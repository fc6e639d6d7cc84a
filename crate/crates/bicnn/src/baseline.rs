//! n-gram count features and a linear softmax classifier, trained with the
//! same Adam machinery as the convolutional models.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::Phase;
use crate::tensor::{Graph, Tensor};
use crate::train::Classifier;

/// Intra-report token n-grams of lengths 1..=n_max, keyed by their
/// underscore-joined form ("left_breast").
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NgramFeaturizer {
    pub n_max: usize,
    gram_to_index: HashMap<String, usize>,
    grams: Vec<String>,
}

fn gram_key(tokens: &[String]) -> String {
    tokens.join("_")
}

/// Collect every gram of lengths 1..=n_max from the training corpus, in
/// first-occurrence order (all lengths of a report before the next report
/// would reorder nothing: lengths ascend within each report).
pub fn fit_featurizer(corpus: &[Vec<String>], n_max: usize) -> Result<NgramFeaturizer> {
    if !(1..=3).contains(&n_max) {
        return Err(Error::InvalidConfig(format!(
            "n-gram upper boundary must be 1, 2 or 3, got {n_max}"
        )));
    }
    let mut gram_to_index = HashMap::new();
    let mut grams = Vec::new();
    for report in corpus {
        for n in 1..=n_max {
            if report.len() < n {
                continue;
            }
            for window in report.windows(n) {
                let key = gram_key(window);
                if !gram_to_index.contains_key(&key) {
                    gram_to_index.insert(key.clone(), grams.len());
                    grams.push(key);
                }
            }
        }
    }
    Ok(NgramFeaturizer {
        n_max,
        gram_to_index,
        grams,
    })
}

impl NgramFeaturizer {
    /// Feature dimension G.
    pub fn dimension(&self) -> usize {
        self.grams.len()
    }

    /// Count every known gram in a token list; unseen grams are ignored.
    pub fn featurize(&self, tokens: &[String]) -> Vec<f64> {
        let mut counts = vec![0.0; self.grams.len()];
        for n in 1..=self.n_max {
            if tokens.len() < n {
                continue;
            }
            for window in tokens.windows(n) {
                if let Some(&index) = self.gram_to_index.get(&gram_key(window)) {
                    counts[index] += 1.0;
                }
            }
        }
        counts
    }

    pub fn gram_map(&self) -> BTreeMap<String, usize> {
        self.gram_to_index
            .iter()
            .map(|(g, &i)| (g.clone(), i))
            .collect()
    }

    pub fn from_gram_map(n_max: usize, map: BTreeMap<String, usize>) -> Result<NgramFeaturizer> {
        let mut grams = vec![String::new(); map.len()];
        for (gram, &index) in &map {
            if index >= grams.len() || !grams[index].is_empty() {
                return Err(Error::Data(format!(
                    "gram index {index} invalid or duplicated"
                )));
            }
            grams[index] = gram.clone();
        }
        Ok(NgramFeaturizer {
            n_max,
            gram_to_index: map.into_iter().collect(),
            grams,
        })
    }

    /// Persist as a JSON gram -> index map.
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(&self.gram_map())?;
        std::fs::write(path, json)
            .map_err(|e| Error::io(format!("writing featurizer {}", path.display()), e))
    }

    pub fn load(path: &Path, n_max: usize) -> Result<NgramFeaturizer> {
        let json = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading featurizer {}", path.display()), e))?;
        NgramFeaturizer::from_gram_map(n_max, serde_json::from_str(&json)?)
    }
}

/// Softmax regression over count vectors.
pub struct LinearModel {
    /// [G, C]
    pub weights: Tensor,
    /// [C]
    pub bias: Tensor,
    pub num_classes: usize,
}

impl LinearModel {
    pub fn init(dimension: usize, num_classes: usize, seed: u64) -> Result<LinearModel> {
        if dimension == 0 || num_classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "linear model needs dimension >= 1 and >= 2 classes, got {dimension}x{num_classes}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = (6.0 / (dimension + num_classes) as f64).sqrt();
        let weights: Vec<f64> = (0..dimension * num_classes)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Ok(LinearModel {
            weights: Tensor::from_values(&[dimension, num_classes], weights)?,
            bias: Tensor::from_values(&[num_classes], vec![0.1; num_classes])?,
            num_classes,
        })
    }

    pub fn infer(&self, features: &[f64]) -> Result<Vec<f64>> {
        let mut graph = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let probs = Classifier::forward(self, &mut graph, &features.to_vec(), Phase::Infer, &mut rng)?;
        Ok(probs.values())
    }
}

impl Classifier for LinearModel {
    type Input = Vec<f64>;

    // No dropout on count features; train and infer phases coincide.
    fn forward(
        &self,
        graph: &mut Graph,
        input: &Vec<f64>,
        _phase: Phase,
        _rng: &mut ChaCha8Rng,
    ) -> Result<Tensor> {
        let features = Tensor::from_values(&[input.len()], input.clone())?;
        let mask = Tensor::from_values(&[input.len()], vec![1.0; input.len()])?;
        graph.dense_softmax(&features, &mask, &self.weights, &self.bias)
    }

    fn parameters(&self) -> Vec<Tensor> {
        vec![self.weights.clone(), self.bias.clone()]
    }

    fn penalized_weights(&self) -> Tensor {
        self.weights.clone()
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn fit_enumerates_grams_in_order() {
        let corpus = vec![toks(&["a", "b", "c"])];
        let featurizer = fit_featurizer(&corpus, 2).unwrap();
        assert_eq!(featurizer.dimension(), 5);
        let map = featurizer.gram_map();
        assert_eq!(map["a"], 0);
        assert_eq!(map["b"], 1);
        assert_eq!(map["c"], 2);
        assert_eq!(map["a_b"], 3);
        assert_eq!(map["b_c"], 4);
    }

    #[test]
    fn fit_unigrams_only() {
        let corpus = vec![toks(&["x", "y", "x"])];
        let featurizer = fit_featurizer(&corpus, 1).unwrap();
        assert_eq!(featurizer.dimension(), 2);
    }

    #[test]
    fn empty_report_contributes_nothing() {
        let corpus = vec![Vec::new(), toks(&["a"])];
        let featurizer = fit_featurizer(&corpus, 3).unwrap();
        assert_eq!(featurizer.dimension(), 1);
    }

    #[test]
    fn featurize_counts_known_grams() {
        let featurizer = fit_featurizer(&[toks(&["a", "b"])], 1).unwrap();
        assert_eq!(featurizer.featurize(&toks(&["a", "b", "a"])), vec![2.0, 1.0]);
    }

    #[test]
    fn featurize_unseen_grams_give_zero_vector() {
        let featurizer = fit_featurizer(&[toks(&["a", "b", "c"])], 2).unwrap();
        assert_eq!(featurizer.featurize(&toks(&["q", "r"])), vec![0.0; 5]);
        assert_eq!(
            featurizer.featurize(&toks(&["a", "b", "c"])),
            vec![1.0; 5]
        );
    }

    #[test]
    fn gram_sets_nest_as_order_grows(){
        let corpus = vec![toks(&["a", "b", "c", "a"]), toks(&["b", "b"])];
        let smaller = fit_featurizer(&corpus, 1).unwrap();
        let larger = fit_featurizer(&corpus, 3).unwrap();
        let larger_map = larger.gram_map();
        for gram in smaller.gram_map().keys() {
            assert!(larger_map.contains_key(gram), "{gram} missing");
        }
    }

    #[test]
    fn featurize_total_matches_window_count() {
        let corpus = vec![toks(&["a", "b", "c", "d"])];
        let featurizer = fit_featurizer(&corpus, 3).unwrap();
        let counts = featurizer.featurize(&toks(&["a", "b", "c", "d"]));
        let total: f64 = counts.iter().sum();
        // 4 unigrams + 3 bigrams + 2 trigrams
        assert_eq!(total, 9.0);
    }

    #[test]
    fn featurizer_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grams.json");
        let featurizer = fit_featurizer(&[toks(&["a", "b", "c"])], 2).unwrap();
        featurizer.save(&path).unwrap();
        let restored = NgramFeaturizer::load(&path, 2).unwrap();
        assert_eq!(featurizer, restored);
    }

    #[test]
    fn linear_model_outputs_distribution() {
        let model = LinearModel::init(4, 3, 7).unwrap();
        let probs = model.infer(&[1.0, 0.0, 2.0, 0.5]).unwrap();
        assert_eq!(probs.len(), 3);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
