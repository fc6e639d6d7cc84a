//! Report preprocessing: section extraction, tokenization, vocabulary
//! construction, and padded/reversed index sequences.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token index reserved for padding.
pub const PAD_INDEX: u32 = 0;

/// A single radiology report with its extracted sections and class label.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Report {
    pub id: String,
    #[serde(rename = "text")]
    pub raw_text: String,
    pub label: usize,
    #[serde(skip)]
    pub findings: String,
    #[serde(skip)]
    pub impression: String,
}

impl Report {
    pub fn new(id: impl Into<String>, raw_text: impl Into<String>, label: usize) -> Self {
        let raw_text = raw_text.into();
        let (findings, impression) = extract_sections(&raw_text);
        Report {
            id: id.into(),
            raw_text,
            label,
            findings,
            impression,
        }
    }

    /// Findings and impression joined with a sentence boundary; the text the
    /// model actually sees.
    pub fn combined_sections(&self) -> String {
        if self.impression.is_empty() {
            self.findings.clone()
        } else if self.findings.is_empty() {
            self.impression.clone()
        } else {
            format!("{}. {}", self.findings.trim_end_matches('.'), self.impression)
        }
    }

    pub fn tokens(&self) -> Vec<String> {
        tokenize(&self.combined_sections())
    }
}

/// Section headers and radiologist signature lines that terminate a section.
const SECTION_HEADERS: &[&str] = &[
    "findings",
    "impression",
    "indication",
    "comparison",
    "technique",
    "history",
    "clinical information",
    "clinical history",
    "exam",
    "examination",
    "procedure",
    "conclusion",
];

fn header_name(line: &str) -> Option<&'static str> {
    let lower = line.trim_start().to_lowercase();
    // Signature lines ("Dr. X") close whatever section is open.
    if lower.starts_with("dr.") || lower.starts_with("dr ") {
        return Some("signature");
    }
    for &header in SECTION_HEADERS {
        if let Some(rest) = lower.strip_prefix(header) {
            match rest.chars().next() {
                None => return Some(header),
                Some(c) if c == ':' || c.is_whitespace() => return Some(header),
                _ => {}
            }
        }
    }
    None
}

/// Text after the header keyword (and optional colon) on the header line itself.
fn header_remainder(line: &str, header: &str) -> String {
    let trimmed = line.trim_start();
    trimmed
        .get(header.len()..)
        .unwrap_or("")
        .trim_start()
        .trim_start_matches(':')
        .trim()
        .to_string()
}

/// Pull the findings and impression sections out of a raw report.
///
/// A section runs from its header line to the next header (or signature
/// line, or end of text). When neither header is present the whole text is
/// treated as findings.
pub fn extract_sections(raw_text: &str) -> (String, String) {
    // slot 0 = findings, slot 1 = impression
    let mut sections: [Option<Vec<String>>; 2] = [None, None];
    let mut current: Option<usize> = None;

    for line in raw_text.lines() {
        if let Some(header) = header_name(line) {
            current = match header {
                "findings" => Some(0),
                "impression" => Some(1),
                _ => None,
            };
            if let Some(slot) = current {
                let mut section = Vec::new();
                let remainder = header_remainder(line, header);
                if !remainder.is_empty() {
                    section.push(remainder);
                }
                sections[slot] = Some(section);
            }
        } else if let Some(slot) = current {
            let line = line.trim();
            if !line.is_empty() {
                sections[slot].as_mut().expect("section opened").push(line.to_string());
            }
        }
    }

    let [findings, impression] = sections;
    match (findings, impression) {
        (None, None) => (raw_text.trim().to_string(), String::new()),
        (f, i) => (
            f.map(|s| s.join(" ")).unwrap_or_default(),
            i.map(|s| s.join(" ")).unwrap_or_default(),
        ),
    }
}

/// Lower-case and split on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Vocabulary dictionary. Indices run 1..=V in first-occurrence order;
/// index 0 is reserved for padding and index V+1 for unknown tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    word_to_index: HashMap<String, u32>,
    words: Vec<String>,
}

impl Vocabulary {
    /// Number of distinct words V.
    pub fn size(&self) -> usize {
        self.words.len()
    }

    /// Index used for out-of-vocabulary tokens.
    pub fn unk_index(&self) -> u32 {
        self.size() as u32 + 1
    }

    /// Rows an embedding table needs: pad + V words + unk.
    pub fn table_rows(&self) -> usize {
        self.size() + 2
    }

    pub fn lookup(&self, token: &str) -> Option<u32> {
        self.word_to_index.get(token).copied()
    }

    /// Token index, mapping unknown tokens to the UNK slot.
    pub fn index_or_unk(&self, token: &str) -> u32 {
        self.lookup(token).unwrap_or_else(|| self.unk_index())
    }

    pub fn word(&self, index: u32) -> Option<&str> {
        if index == 0 {
            return None;
        }
        self.words.get(index as usize - 1).map(String::as_str)
    }

    pub fn to_json(&self) -> String {
        let map: BTreeMap<&str, u32> = self
            .word_to_index
            .iter()
            .map(|(w, i)| (w.as_str(), *i))
            .collect();
        serde_json::to_string(&map).expect("vocabulary serializes")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let map: BTreeMap<String, u32> = serde_json::from_str(json)?;
        let mut words = vec![String::new(); map.len()];
        for (word, index) in &map {
            let i = *index as usize;
            if i == 0 || i > words.len() {
                return Err(Error::Data(format!(
                    "vocabulary index {index} out of range 1..={}",
                    words.len()
                )));
            }
            if !words[i - 1].is_empty() {
                return Err(Error::Data(format!("duplicate vocabulary index {index}")));
            }
            words[i - 1] = word.clone();
        }
        let word_to_index = map.into_iter().collect();
        Ok(Vocabulary {
            word_to_index,
            words,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())
            .map_err(|e| Error::io(format!("writing vocabulary {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let json = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading vocabulary {}", path.display()), e))?;
        Self::from_json(&json)
    }
}

/// Assign every distinct token a unique index >= 1 in first-occurrence order.
pub fn build_vocabulary<S: AsRef<str>, T: AsRef<[S]>>(corpus: &[T]) -> Vocabulary {
    let mut word_to_index = HashMap::new();
    let mut words = Vec::new();
    for report in corpus {
        for token in report.as_ref() {
            let token = token.as_ref();
            if !word_to_index.contains_key(token) {
                words.push(token.to_string());
                word_to_index.insert(token.to_string(), words.len() as u32);
            }
        }
    }
    Vocabulary {
        word_to_index,
        words,
    }
}

/// Padded token indices plus the reversed-non-padded twin fed to channel 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexedSequence {
    pub forward: Vec<u32>,
    pub reverse: Vec<u32>,
    pub n_words: usize,
}

impl IndexedSequence {
    pub fn padded_len(&self) -> usize {
        self.forward.len()
    }
}

/// Index tokens through the vocabulary and pad both channels to `n_max`.
pub fn index_and_pad(
    tokens: &[String],
    vocab: &Vocabulary,
    n_max: usize,
) -> Result<IndexedSequence> {
    if tokens.len() > n_max {
        return Err(Error::SequenceTooLong {
            len: tokens.len(),
            max: n_max,
        });
    }
    let mut forward = Vec::with_capacity(n_max);
    for token in tokens {
        forward.push(vocab.index_or_unk(token));
    }
    let mut reverse: Vec<u32> = forward.iter().rev().copied().collect();
    forward.resize(n_max, PAD_INDEX);
    reverse.resize(n_max, PAD_INDEX);
    Ok(IndexedSequence {
        forward,
        reverse,
        n_words: tokens.len(),
    })
}

/// Index a whole corpus, truncating reports longer than `n_max` tail-first.
pub fn index_corpus(
    reports: &[Report],
    vocab: &Vocabulary,
    n_max: usize,
) -> Vec<(IndexedSequence, usize)> {
    reports
        .iter()
        .map(|report| {
            let mut tokens = report.tokens();
            if tokens.len() > n_max {
                log::warn!(
                    "report {} has {} tokens, truncating to {}",
                    report.id,
                    tokens.len(),
                    n_max
                );
                tokens.truncate(n_max);
            }
            let seq = index_and_pad(&tokens, vocab, n_max)
                .expect("truncated sequence fits the padded length");
            (seq, report.label)
        })
        .collect()
}

/// Longest report, in tokens, over a training split.
pub fn max_token_count(reports: &[Report]) -> usize {
    reports.iter().map(|r| r.tokens().len()).max().unwrap_or(0)
}

/// Read a JSON-lines corpus: one object per line with fields id, text, label.
pub fn read_corpus(path: &Path) -> Result<Vec<Report>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::io(format!("opening corpus {}", path.display()), e))?;
    let reader = std::io::BufReader::new(file);
    let mut reports = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("reading corpus {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut report: Report = serde_json::from_str(&line).map_err(|e| {
            Error::Data(format!(
                "{}:{}: invalid report record: {e}",
                path.display(),
                lineno + 1
            ))
        })?;
        let (findings, impression) = extract_sections(&report.raw_text);
        report.findings = findings;
        report.impression = impression;
        reports.push(report);
    }
    Ok(reports)
}

/// Write a corpus as JSON-lines.
pub fn write_corpus(path: &Path, reports: &[Report]) -> Result<()> {
    let mut file = std::fs::File::create(path)
        .map_err(|e| Error::io(format!("creating corpus {}", path.display()), e))?;
    for report in reports {
        let line = serde_json::to_string(report)?;
        writeln!(file, "{line}")
            .map_err(|e| Error::io(format!("writing corpus {}", path.display()), e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extracts_findings_and_impression() {
        let (f, i) =
            extract_sections("INDICATION: pain\nFINDINGS: clear lungs\nIMPRESSION: normal\nDr. X");
        assert_eq!(f, "clear lungs");
        assert_eq!(i, "normal");
    }

    #[test]
    fn falls_back_to_whole_text() {
        let (f, i) = extract_sections("no headers at all");
        assert_eq!(f, "no headers at all");
        assert_eq!(i, "");
    }

    #[test]
    fn empty_section_stays_empty() {
        let (f, i) = extract_sections("Findings:\nImpression: stable");
        assert_eq!(f, "");
        assert_eq!(i, "stable");
    }

    #[test]
    fn multiline_sections_join() {
        let (f, i) = extract_sections(
            "FINDINGS: the lungs are clear.\nno pleural effusion.\nIMPRESSION: normal study.",
        );
        assert_eq!(f, "the lungs are clear. no pleural effusion.");
        assert_eq!(i, "normal study.");
    }

    #[test]
    fn tokenize_example_sentence() {
        let tokens = tokenize("The breasts show scattered fibroglandular tissue.");
        assert_eq!(
            tokens,
            ["the", "breasts", "show", "scattered", "fibroglandular", "tissue"]
        );
        assert_eq!(tokens.len(), 6);
    }

    #[test]
    fn tokenize_empty_and_hyphens() {
        assert!(tokenize("").is_empty());
        assert_eq!(
            tokenize("Mild-to-moderate edema, right."),
            ["mild", "to", "moderate", "edema", "right"]
        );
    }

    #[test]
    fn tokenize_idempotent() {
        let text = "Stable, post-surgical change; no NEW opacity (2 views).";
        let once = tokenize(text);
        let again = tokenize(&once.join(" "));
        assert_eq!(once, again);
    }

    #[test]
    fn vocabulary_first_occurrence_order() {
        let vocab = build_vocabulary(&[vec!["a", "b"], vec!["b", "c"]]);
        assert_eq!(vocab.lookup("a"), Some(1));
        assert_eq!(vocab.lookup("b"), Some(2));
        assert_eq!(vocab.lookup("c"), Some(3));
        assert_eq!(vocab.size(), 3);
        assert_eq!(vocab.unk_index(), 4);
    }

    #[test]
    fn vocabulary_dedups() {
        let vocab = build_vocabulary(&[vec!["x"], vec!["x"], vec!["x"]]);
        assert_eq!(vocab.size(), 1);
        assert_eq!(vocab.lookup("x"), Some(1));
    }

    #[test]
    fn vocabulary_of_example_sentence_has_six_words() {
        let tokens = tokenize("The breasts show scattered fibroglandular tissue.");
        let vocab = build_vocabulary(&[tokens]);
        assert_eq!(vocab.size(), 6);
    }

    #[test]
    fn vocabulary_json_round_trip() {
        let vocab = build_vocabulary(&[vec!["left", "breast", "is", "clear"]]);
        let restored = Vocabulary::from_json(&vocab.to_json()).unwrap();
        assert_eq!(vocab, restored);
    }

    #[test]
    fn index_and_pad_reverses_non_padded_prefix() {
        let vocab = build_vocabulary(&[vec!["w0", "w1", "w2", "w3", "w4", "w5"]]);
        let tokens: Vec<String> = (0..6).map(|i| format!("w{i}")).collect();
        let seq = index_and_pad(&tokens, &vocab, 8).unwrap();
        assert_eq!(seq.forward, [1, 2, 3, 4, 5, 6, 0, 0]);
        assert_eq!(seq.reverse, [6, 5, 4, 3, 2, 1, 0, 0]);
        assert_eq!(seq.n_words, 6);
    }

    #[test]
    fn index_and_pad_empty_and_singleton() {
        let vocab = build_vocabulary(&[vec!["a"]]);
        let empty = index_and_pad(&[], &vocab, 4).unwrap();
        assert_eq!(empty.forward, [0, 0, 0, 0]);
        assert_eq!(empty.reverse, [0, 0, 0, 0]);

        let one = index_and_pad(&["a".to_string()], &vocab, 3).unwrap();
        assert_eq!(one.forward, [1, 0, 0]);
        assert_eq!(one.reverse, [1, 0, 0]);
    }

    #[test]
    fn index_and_pad_rejects_long_sequences() {
        let vocab = build_vocabulary(&[vec!["a"]]);
        let tokens: Vec<String> = vec!["a".into(), "a".into(), "a".into()];
        match index_and_pad(&tokens, &vocab, 2) {
            Err(Error::SequenceTooLong { len: 3, max: 2 }) => {}
            other => panic!("expected SequenceTooLong, got {other:?}"),
        }
    }

    #[test]
    fn unknown_tokens_map_to_unk() {
        let vocab = build_vocabulary(&[vec!["a", "b"]]);
        let tokens = vec!["a".to_string(), "zzz".to_string()];
        let seq = index_and_pad(&tokens, &vocab, 3).unwrap();
        assert_eq!(seq.forward, [1, vocab.unk_index(), 0]);
    }

    #[test]
    fn report_combines_sections_with_boundary() {
        let report = Report::new("r1", "FINDINGS: lungs clear.\nIMPRESSION: normal.", 0);
        assert_eq!(report.combined_sections(), "lungs clear. normal.");
    }
}
