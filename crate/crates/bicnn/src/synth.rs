//! Deterministic generator of labelled radiology-style corpora. Each report
//! embeds one of its class's descriptor phrases among neutral filler
//! sentences, with report counts and sentence/word statistics drawn to match
//! configurable targets. Stands in for private hospital data.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{tokenize, Report};
use crate::train::MeanMedianStd;

const MRD_FILLERS: &str = include_str!("../data/mrd_fillers.txt");
const CRRD_FILLERS: &str = include_str!("../data/crrd_fillers.txt");

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusSpec {
    /// Short tag used in report ids.
    pub name: String,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    /// Per class: the descriptor phrases that signal the class.
    pub descriptors: Vec<Vec<String>>,
    /// Sentence templates with a `{}` slot for the descriptor phrase.
    pub templates: Vec<String>,
    pub reports_per_class: Vec<usize>,
    pub sentences_mean: f64,
    pub sentences_std: f64,
    pub words_mean: f64,
    pub words_std: f64,
    pub filler_pool: Vec<String>,
    /// Clinical-indication snippets; prepended (and excluded by section
    /// extraction) on a fraction of reports.
    pub indications: Vec<String>,
    /// Probability that a report omits its descriptor or swaps it for
    /// another class's phrase.
    pub noise_rate: f64,
    pub seed: u64,
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let c = self.num_classes;
        if c < 2 {
            return Err(Error::InvalidSpec("need at least 2 classes".into()));
        }
        if self.class_names.len() != c
            || self.descriptors.len() != c
            || self.reports_per_class.len() != c
        {
            return Err(Error::InvalidSpec(format!(
                "class_names/descriptors/reports_per_class must all have {c} entries"
            )));
        }
        if self.descriptors.iter().any(|d| d.is_empty()) {
            return Err(Error::InvalidSpec(
                "every class needs at least one descriptor phrase".into(),
            ));
        }
        if self.reports_per_class.iter().any(|&n| n == 0) {
            return Err(Error::InvalidSpec("every class needs at least one report".into()));
        }
        if self.templates.is_empty() || self.templates.iter().any(|t| !t.contains("{}")) {
            return Err(Error::InvalidSpec(
                "templates must be non-empty and contain a {} slot".into(),
            ));
        }
        if self.filler_pool.is_empty() {
            return Err(Error::InvalidSpec("filler pool is empty".into()));
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return Err(Error::InvalidSpec(format!(
                "noise rate {} outside [0, 1)",
                self.noise_rate
            )));
        }
        if self.sentences_mean <= 0.0
            || self.words_mean <= 0.0
            || self.sentences_std < 0.0
            || self.words_std < 0.0
        {
            return Err(Error::InvalidSpec("invalid sentence/word distribution".into()));
        }
        Ok(())
    }

    pub fn total_reports(&self) -> usize {
        self.reports_per_class.iter().sum()
    }

    pub fn with_noise(mut self, rate: f64) -> CorpusSpec {
        self.noise_rate = rate;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> CorpusSpec {
        self.seed = seed;
        self
    }
}

fn pool_from(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// Mammogram-report-like preset: 5 breast-density classes, 4080 reports,
/// roughly 3.2 sentences and 31 words per report.
pub fn mrd_like(seed: u64) -> CorpusSpec {
    CorpusSpec {
        name: "mrd".to_string(),
        num_classes: 5,
        class_names: strings(&[
            "almost entirely fatty",
            "scattered fibroglandular density",
            "heterogeneously dense",
            "extremely dense",
            "ambiguous",
        ]),
        descriptors: vec![
            strings(&[
                "almost entirely fatty",
                "predominantly fatty",
                "predominantly fat",
                "mainly fatty",
            ]),
            strings(&[
                "scattered fibroglandular densities",
                "scattered areas of fibroglandular density",
                "scattered fibroglandular tissue",
            ]),
            strings(&["heterogeneously dense", "heterogenous"]),
            strings(&["extremely dense", "very dense", "dense"]),
            strings(&["mildly dense", "mild dense"]),
        ],
        templates: strings(&[
            "the breast parenchyma is {}",
            "the breasts are {} bilaterally",
            "the breast tissue is {}",
            "breast composition is {}",
            "both breasts show {} tissue throughout",
            "the breast parenchyma is {} as seen on both standard views",
            "when compared with the prior examination the breasts remain {} in appearance",
            "the overall parenchymal pattern of both breasts is {} on the current study",
            "the breast parenchyma is {} and there is no dominant mass suspicious calcification or architectural distortion",
            "both breasts demonstrate {} tissue without dominant mass suspicious calcification or significant interval change from prior",
        ]),
        reports_per_class: vec![342, 1546, 1510, 436, 246],
        sentences_mean: 3.21,
        sentences_std: 1.27,
        words_mean: 30.87,
        words_std: 10.44,
        filler_pool: pool_from(MRD_FILLERS),
        indications: strings(&[
            "screening mammogram",
            "diagnostic mammogram",
            "routine screening",
            "callback from screening",
        ]),
        noise_rate: 0.0,
        seed,
    }
}

/// Chest-radiograph-report-like preset: 11 pathology classes, 1030 reports,
/// roughly 2 sentences and 21 words per report.
pub fn crrd_like(seed: u64) -> CorpusSpec {
    CorpusSpec {
        name: "crrd".to_string(),
        num_classes: 11,
        class_names: strings(&[
            "normal",
            "cardiomegaly",
            "consolidation",
            "pulmonary edema",
            "lung nodules",
            "lung mass",
            "pleural effusion",
            "widened mediastinum",
            "vertebral fractures",
            "clavicular fracture",
            "pneumothorax",
        ]),
        descriptors: vec![
            strings(&["no acute findings", "unremarkable study", "within normal limits"]),
            strings(&[
                "cardiomegaly",
                "enlarged cardiac silhouette",
                "cardiopericardial silhouette is enlarged",
            ]),
            strings(&["airspace consolidation", "consolidation"]),
            strings(&["pulmonary edema", "airspace edema"]),
            strings(&["pulmonary nodules", "faint nodules", "calcified granulomas"]),
            strings(&["pulmonary mass", "perihilar mass", "mediastinal mass"]),
            strings(&["pleural effusions", "pleural effusion", "loculated effusion"]),
            strings(&["widened mediastinum", "mediastinal widening"]),
            strings(&["vertebral fracture", "vertebral compression injuries"]),
            strings(&["clavicle fracture", "clavicular fracture"]),
            strings(&["pneumothorax", "lobe collapse"]),
        ],
        templates: strings(&[
            "there is {}",
            "{} is present",
            "{} is again demonstrated",
            "the radiograph demonstrates {}",
            "there is {} on the current examination",
            "the frontal and lateral views demonstrate {} as described above",
            "when compared with the prior examination there is {} which is new",
            "the current study again demonstrates {} without other significant interval change",
            "there is {} without other significant abnormality of the lungs mediastinum pleura or visualized osseous structures",
            "the frontal radiograph demonstrates {} with stable cardiac contours clear costophrenic angles and intact osseous structures",
            "there is {} and the remainder of the lungs pleural spaces mediastinal contours and visualized osseous structures are stable",
        ]),
        reports_per_class: vec![116, 106, 81, 104, 118, 89, 144, 50, 67, 73, 82],
        sentences_mean: 2.01,
        sentences_std: 1.07,
        words_mean: 21.46,
        words_std: 9.21,
        filler_pool: pool_from(CRRD_FILLERS),
        indications: strings(&[
            "chest pain",
            "shortness of breath",
            "cough",
            "follow up",
            "preoperative assessment",
        ]),
        noise_rate: 0.0,
        seed,
    }
}

/// Scale per-class report counts to a new total with the largest-remainder
/// method; class proportions are preserved as closely as possible.
pub fn scale_counts(counts: &[usize], total: usize) -> Vec<usize> {
    let original: usize = counts.iter().sum();
    let mut scaled: Vec<usize> = Vec::with_capacity(counts.len());
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(counts.len());
    for (i, &count) in counts.iter().enumerate() {
        let exact = count as f64 * total as f64 / original as f64;
        scaled.push(exact.floor() as usize);
        remainders.push((i, exact - exact.floor()));
    }
    let mut assigned: usize = scaled.iter().sum();
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut cursor = 0;
    while assigned < total {
        scaled[remainders[cursor % remainders.len()].0] += 1;
        assigned += 1;
        cursor += 1;
    }
    scaled
}

pub fn mrd_like_scaled(total_reports: usize, seed: u64) -> CorpusSpec {
    let mut spec = mrd_like(seed);
    spec.reports_per_class = scale_counts(&spec.reports_per_class, total_reports);
    spec
}

pub fn crrd_like_scaled(total_reports: usize, seed: u64) -> CorpusSpec {
    let mut spec = crrd_like(seed);
    spec.reports_per_class = scale_counts(&spec.reports_per_class, total_reports);
    spec
}

struct PoolEntry {
    sentence: String,
    tokens: usize,
}

/// Index of the entry whose token count best matches `ideal`, drawn among
/// near-matches so repeated picks vary.
fn pick_by_length(lengths: &[usize], ideal: f64, rng: &mut ChaCha8Rng) -> usize {
    for tolerance in [2.0, 4.0, 8.0] {
        let candidates: Vec<usize> = (0..lengths.len())
            .filter(|&i| (lengths[i] as f64 - ideal).abs() <= tolerance)
            .collect();
        if !candidates.is_empty() {
            return candidates[rng.gen_range(0..candidates.len())];
        }
    }
    rng.gen_range(0..lengths.len())
}

/// Generate the corpus described by `spec`; byte-identical for equal specs.
pub fn generate(spec: &CorpusSpec) -> Result<Vec<Report>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sentence_dist = Normal::new(spec.sentences_mean, spec.sentences_std)
        .map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let words_dist = Normal::new(spec.words_mean, spec.words_std)
        .map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let pool: Vec<PoolEntry> = spec
        .filler_pool
        .iter()
        .map(|s| PoolEntry {
            sentence: s.clone(),
            tokens: tokenize(s).len(),
        })
        .collect();
    let pool_lengths: Vec<usize> = pool.iter().map(|e| e.tokens).collect();
    // template slot costs without the phrase
    let template_lengths: Vec<usize> = spec
        .templates
        .iter()
        .map(|t| tokenize(&t.replace("{}", "")).len())
        .collect();

    let mut drafts: Vec<(String, usize)> = Vec::with_capacity(spec.total_reports());
    for class in 0..spec.num_classes {
        for _ in 0..spec.reports_per_class[class] {
            let num_sentences = sentence_dist.sample(&mut rng).round().max(1.0) as usize;
            let target_words = words_dist.sample(&mut rng).max(num_sentences as f64);

            // Descriptor placement; under noise the phrase is dropped or
            // swapped for another class's phrase.
            let noise_draw: f64 = rng.gen();
            let mut descriptor_class = Some(class);
            if noise_draw < spec.noise_rate {
                if rng.gen::<bool>() {
                    descriptor_class = None;
                } else {
                    let mut other = rng.gen_range(0..spec.num_classes - 1);
                    if other >= class {
                        other += 1;
                    }
                    descriptor_class = Some(other);
                }
            }
            let descriptor_sentence = descriptor_class.map(|dc| {
                let phrases = &spec.descriptors[dc];
                let phrase = &phrases[rng.gen_range(0..phrases.len())];
                let phrase_len = tokenize(phrase).len();
                let share = target_words / num_sentences as f64;
                let slot_costs: Vec<usize> =
                    template_lengths.iter().map(|&t| t + phrase_len).collect();
                let template = &spec.templates[pick_by_length(&slot_costs, share, &mut rng)];
                template.replace("{}", phrase)
            });

            let mut sentences: Vec<String> = Vec::with_capacity(num_sentences);
            let descriptor_pos = rng.gen_range(0..num_sentences);
            let mut budget = target_words;
            if let Some(ds) = &descriptor_sentence {
                budget -= tokenize(ds).len() as f64;
            }
            let filler_slots = if descriptor_sentence.is_some() {
                num_sentences - 1
            } else {
                num_sentences
            };
            let mut remaining_slots = filler_slots;
            for slot in 0..num_sentences {
                if slot == descriptor_pos {
                    if let Some(ds) = &descriptor_sentence {
                        sentences.push(ds.clone());
                        continue;
                    }
                }
                let ideal = if remaining_slots > 0 {
                    (budget / remaining_slots as f64).max(1.0)
                } else {
                    1.0
                };
                let entry = &pool[pick_by_length(&pool_lengths, ideal, &mut rng)];
                sentences.push(entry.sentence.clone());
                budget -= entry.tokens as f64;
                remaining_slots -= 1;
            }

            let body = |list: &[String]| -> String { format!("{}.", list.join(". ")) };
            let format_draw: f64 = rng.gen();
            let text = if format_draw < 0.70 {
                let indication = if !spec.indications.is_empty() && rng.gen::<f64>() < 0.25 {
                    let snippet = &spec.indications[rng.gen_range(0..spec.indications.len())];
                    format!("INDICATION: {snippet}\n")
                } else {
                    String::new()
                };
                let (findings, impression) = sentences.split_at(num_sentences - 1);
                if findings.is_empty() {
                    format!("{indication}FINDINGS:\nIMPRESSION: {}", body(impression))
                } else {
                    format!(
                        "{indication}FINDINGS: {}\nIMPRESSION: {}",
                        body(findings),
                        body(impression)
                    )
                }
            } else if format_draw < 0.85 {
                format!("FINDINGS: {}", body(&sentences))
            } else {
                body(&sentences)
            };
            drafts.push((text, class));
        }
    }

    drafts.shuffle(&mut rng);
    Ok(drafts
        .into_iter()
        .enumerate()
        .map(|(i, (text, label))| Report::new(format!("{}-{i:05}", spec.name), text, label))
        .collect())
}

/// Corpus summary in the usual dataset-table form.
#[derive(Debug, Clone, Serialize)]
pub struct CorpusStats {
    /// NR
    pub num_reports: usize,
    /// VS: distinct tokens over all findings/impression sections.
    pub vocab_size: usize,
    /// ANS: sentences per report.
    pub sentences_per_report: MeanMedianStd,
    /// ANW: words per report.
    pub words_per_report: MeanMedianStd,
    /// ASL: mean sentence length within each report.
    pub sentence_length: MeanMedianStd,
}

/// Compute NR, VS, ANS, ANW and ASL over the extracted sections, using the
/// pipeline tokenizer and a period-based sentence splitter.
pub fn corpus_stats(reports: &[Report]) -> Result<CorpusStats> {
    if reports.is_empty() {
        return Err(Error::Data("cannot compute stats of an empty corpus".into()));
    }
    let mut vocabulary = std::collections::HashSet::new();
    let mut sentence_counts = Vec::with_capacity(reports.len());
    let mut word_counts = Vec::with_capacity(reports.len());
    let mut sentence_lengths = Vec::with_capacity(reports.len());
    for report in reports {
        let combined = report.combined_sections();
        let lengths: Vec<usize> = combined
            .split('.')
            .map(|s| tokenize(s).len())
            .filter(|&n| n > 0)
            .collect();
        let words: usize = lengths.iter().sum();
        for token in tokenize(&combined) {
            vocabulary.insert(token);
        }
        sentence_counts.push(lengths.len() as f64);
        word_counts.push(words as f64);
        sentence_lengths.push(if lengths.is_empty() {
            0.0
        } else {
            words as f64 / lengths.len() as f64
        });
    }
    Ok(CorpusStats {
        num_reports: reports.len(),
        vocab_size: vocabulary.len(),
        sentences_per_report: MeanMedianStd::from_samples(&sentence_counts),
        words_per_report: MeanMedianStd::from_samples(&word_counts),
        sentence_length: MeanMedianStd::from_samples(&sentence_lengths),
    })
}

fn contains_contiguous(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty()
        && haystack
            .windows(needle.len())
            .any(|window| window == needle)
}

/// Rule-based classifier: the class of the longest descriptor phrase found
/// in the tokens. At noise 0 this classifies generated corpora perfectly.
pub fn descriptor_match(tokens: &[String], descriptors: &[Vec<String>]) -> Option<usize> {
    let mut best: Option<(usize, usize)> = None; // (phrase_len, class)
    for (class, phrases) in descriptors.iter().enumerate() {
        for phrase in phrases {
            let needle = tokenize(phrase);
            if contains_contiguous(tokens, &needle) {
                let candidate = (needle.len(), class);
                if best.map_or(true, |(len, _)| candidate.0 > len) {
                    best = Some(candidate);
                }
            }
        }
    }
    best.map(|(_, class)| class)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let spec = mrd_like_scaled(80, 7);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
        let c = generate(&mrd_like_scaled(80, 8)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn class_counts_match_spec_exactly() {
        let spec = crrd_like_scaled(110, 3);
        let reports = generate(&spec).unwrap();
        let mut counts = vec![0usize; spec.num_classes];
        for report in &reports {
            counts[report.label] += 1;
        }
        assert_eq!(counts, spec.reports_per_class);
    }

    #[test]
    fn scale_counts_preserves_total_and_proportions() {
        // exact shares 41.91 / 189.46 / 185.05 / 53.43 / 30.15: the two
        // leftover reports go to the largest remainders (classes 0 and 1)
        let scaled = scale_counts(&[342, 1546, 1510, 436, 246], 500);
        assert_eq!(scaled.iter().sum::<usize>(), 500);
        assert_eq!(scaled, vec![42, 190, 185, 53, 30]);
    }

    #[test]
    fn full_presets_have_paper_sized_counts() {
        assert_eq!(mrd_like(0).total_reports(), 4080);
        assert_eq!(crrd_like(0).total_reports(), 1030);
        assert_eq!(crrd_like(0).num_classes, 11);
    }

    #[test]
    fn noise_zero_corpus_is_descriptor_separable() {
        for spec in [mrd_like_scaled(150, 11), crrd_like_scaled(150, 12)] {
            let reports = generate(&spec).unwrap();
            for report in &reports {
                let predicted = descriptor_match(&report.tokens(), &spec.descriptors);
                assert_eq!(
                    predicted,
                    Some(report.label),
                    "report {} ({:?}) misclassified by the descriptor rule",
                    report.id,
                    report.combined_sections()
                );
            }
        }
    }

    #[test]
    fn fillers_contain_no_descriptor_phrase() {
        for spec in [mrd_like(0), crrd_like(0)] {
            for filler in &spec.filler_pool {
                let tokens = tokenize(filler);
                assert_eq!(
                    descriptor_match(&tokens, &spec.descriptors),
                    None,
                    "filler {filler:?} matches a descriptor"
                );
            }
        }
    }

    #[test]
    fn noisy_corpus_keeps_counts_but_breaks_separability() {
        let spec = mrd_like_scaled(300, 5).with_noise(0.3);
        let reports = generate(&spec).unwrap();
        assert_eq!(reports.len(), 300);
        let wrong = reports
            .iter()
            .filter(|r| descriptor_match(&r.tokens(), &spec.descriptors) != Some(r.label))
            .count();
        assert!(wrong > 0, "noise should corrupt some reports");
    }

    #[test]
    fn stats_hand_count() {
        let report = Report::new("r0", "a b. c.", 0);
        let stats = corpus_stats(&[report]).unwrap();
        assert_eq!(stats.num_reports, 1);
        assert_eq!(stats.sentences_per_report.mean, 2.0);
        assert_eq!(stats.words_per_report.mean, 3.0);
        assert_eq!(stats.vocab_size, 3);
        assert_eq!(stats.sentence_length.mean, 1.5);
    }

    #[test]
    fn duplicated_corpus_has_identical_stats() {
        let reports = generate(&mrd_like_scaled(60, 2)).unwrap();
        let doubled: Vec<Report> = reports.iter().chain(reports.iter()).cloned().collect();
        let a = corpus_stats(&reports).unwrap();
        let b = corpus_stats(&doubled).unwrap();
        assert_eq!(a.vocab_size, b.vocab_size);
        assert_eq!(a.sentences_per_report.mean, b.sentences_per_report.mean);
        assert_eq!(a.words_per_report.median, b.words_per_report.median);
    }

    #[test]
    fn scaled_mrd_stats_near_targets() {
        let spec = mrd_like_scaled(400, 21);
        let reports = generate(&spec).unwrap();
        let stats = corpus_stats(&reports).unwrap();
        let ans = stats.sentences_per_report.mean;
        let anw = stats.words_per_report.mean;
        assert!(
            (ans - 3.21).abs() / 3.21 < 0.15,
            "sentences per report {ans} not within 15% of 3.21"
        );
        assert!(
            (anw - 30.87).abs() / 30.87 < 0.15,
            "words per report {anw} not within 15% of 30.87"
        );
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = crrd_like_scaled(120, 9).with_noise(0.15);
        let json = serde_json::to_string(&spec).unwrap();
        let restored: CorpusSpec = serde_json::from_str(&json).unwrap();
        let a = generate(&spec).unwrap();
        let b = generate(&restored).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = mrd_like(0);
        spec.noise_rate = 1.0;
        assert!(matches!(generate(&spec), Err(Error::InvalidSpec(_))));

        let mut spec = mrd_like(0);
        spec.descriptors[2].clear();
        assert!(matches!(generate(&spec), Err(Error::InvalidSpec(_))));

        let mut spec = mrd_like(0);
        spec.templates = vec!["no slot".to_string()];
        assert!(matches!(generate(&spec), Err(Error::InvalidSpec(_))));
    }
}
