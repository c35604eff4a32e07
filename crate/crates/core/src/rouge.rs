//! ROUGE-1, ROUGE-2, ROUGE-L and ROUGE-Lsum.
//!
//! Scores are generic over [`Score`], so the same code yields `f64` for
//! reports and exact `Ratio<u64>` values for checking against oracles.

use std::collections::HashMap;
use std::fmt::Debug;

use num_traits::{FromPrimitive, Num, ToPrimitive};
use serde::{Deserialize, Serialize};

/// Numeric type a ROUGE score can be computed in.
pub trait Score: Num + FromPrimitive + ToPrimitive + Clone + PartialOrd + Debug {
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count fits the score type")
    }

    fn ratio(num: usize, den: usize) -> Self {
        if den == 0 {
            Self::zero()
        } else {
            Self::from_count(num) / Self::from_count(den)
        }
    }

    fn as_f64(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Score for T where T: Num + FromPrimitive + ToPrimitive + Clone + PartialOrd + Debug {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenMode {
    /// Alphanumeric runs.
    #[default]
    Text,
    /// Like `Text`, but `<...>` IRIs, bare URLs and `prefix:local` names
    /// are single tokens.
    Ontology,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizeConfig {
    pub lowercase: bool,
    pub mode: TokenMode,
}

impl Default for TokenizeConfig {
    fn default() -> Self {
        Self {
            lowercase: true,
            mode: TokenMode::Text,
        }
    }
}

impl TokenizeConfig {
    pub fn ontology() -> Self {
        Self {
            mode: TokenMode::Ontology,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RougeScore<T> {
    pub precision: T,
    pub recall: T,
    pub f1: T,
}

impl<T: Score> RougeScore<T> {
    pub fn zero() -> Self {
        Self {
            precision: T::zero(),
            recall: T::zero(),
            f1: T::zero(),
        }
    }

    /// Harmonic mean of precision and recall; 0 when both are 0.
    pub fn from_parts(precision: T, recall: T) -> Self {
        let sum = precision.clone() + recall.clone();
        let f1 = if sum == T::zero() {
            T::zero()
        } else {
            (T::one() + T::one()) * precision.clone() * recall.clone() / sum
        };
        Self { precision, recall, f1 }
    }

    fn from_hits(hits: usize, candidate: usize, reference: usize) -> Self {
        Self::from_parts(T::ratio(hits, candidate), T::ratio(hits, reference))
    }

    pub fn to_f64(&self) -> RougeScore<f64> {
        RougeScore {
            precision: self.precision.as_f64(),
            recall: self.recall.as_f64(),
            f1: self.f1.as_f64(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RougeReport<T> {
    pub rouge1: RougeScore<T>,
    pub rouge2: RougeScore<T>,
    #[serde(rename = "rougeL")]
    pub rouge_l: RougeScore<T>,
    #[serde(rename = "rougeLsum")]
    pub rouge_lsum: RougeScore<T>,
}

impl<T: Score> RougeReport<T> {
    pub fn metrics(&self) -> [&RougeScore<T>; 4] {
        [&self.rouge1, &self.rouge2, &self.rouge_l, &self.rouge_lsum]
    }

    pub fn zero() -> Self {
        Self {
            rouge1: RougeScore::zero(),
            rouge2: RougeScore::zero(),
            rouge_l: RougeScore::zero(),
            rouge_lsum: RougeScore::zero(),
        }
    }

    pub fn to_f64(&self) -> RougeReport<f64> {
        RougeReport {
            rouge1: self.rouge1.to_f64(),
            rouge2: self.rouge2.to_f64(),
            rouge_l: self.rouge_l.to_f64(),
            rouge_lsum: self.rouge_lsum.to_f64(),
        }
    }
}

/// Percentage with one decimal, e.g. `0.796` → `"79.6"`.
pub fn render_percent(value: f64) -> String {
    format!("{:.1}", value * 100.0)
}

fn push_token(out: &mut Vec<String>, token: &str, lowercase: bool) {
    if token.is_empty() {
        return;
    }
    out.push(if lowercase {
        token.to_lowercase()
    } else {
        token.to_string()
    });
}

fn is_name_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '_' | '-' | '.' | '%')
}

pub fn tokenize(text: &str, config: &TokenizeConfig) -> Vec<String> {
    let mut out = Vec::new();
    match config.mode {
        TokenMode::Text => {
            for run in text.split(|c: char| !c.is_alphanumeric()) {
                push_token(&mut out, run, config.lowercase);
            }
        }
        TokenMode::Ontology => {
            for chunk in text.split_whitespace() {
                tokenize_ontology_chunk(chunk, config.lowercase, &mut out);
            }
        }
    }
    out
}

fn tokenize_ontology_chunk(chunk: &str, lowercase: bool, out: &mut Vec<String>) {
    let mut rest = chunk;
    while !rest.is_empty() {
        if let Some(inner) = rest.strip_prefix('<') {
            if let Some(end) = inner.find('>') {
                push_token(out, &inner[..end], lowercase);
                rest = &inner[end + 1..];
                continue;
            }
        }
        if rest.starts_with("http://") || rest.starts_with("https://") {
            let end = rest.find(['>', '"', ',', ';']).unwrap_or(rest.len());
            push_token(out, rest[..end].trim_end_matches('.'), lowercase);
            rest = &rest[end..];
            continue;
        }
        // prefix:local, where the prefix starts with a letter
        let prefix_len = rest
            .char_indices()
            .find(|(_, c)| !(c.is_alphanumeric() || matches!(c, '_' | '-')))
            .map_or(rest.len(), |(i, _)| i);
        if prefix_len > 0 && rest.starts_with(|c: char| c.is_alphabetic()) && rest[prefix_len..].starts_with(':') {
            let after = &rest[prefix_len + 1..];
            let local_len = after
                .char_indices()
                .find(|(_, c)| !is_name_char(*c))
                .map_or(after.len(), |(i, _)| i);
            let name = rest[..prefix_len + 1 + local_len].trim_end_matches('.');
            push_token(out, name, lowercase);
            rest = &rest[name.len()..];
            continue;
        }
        let mut chars = rest.char_indices();
        let (_, c) = chars.next().expect("non-empty");
        if c.is_alphanumeric() {
            let end = rest
                .char_indices()
                .find(|(_, c)| !c.is_alphanumeric())
                .map_or(rest.len(), |(i, _)| i);
            push_token(out, &rest[..end], lowercase);
            rest = &rest[end..];
        } else {
            rest = chars.as_str();
        }
    }
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            let key: Vec<&str> = window.iter().map(AsRef::as_ref).collect();
            *counts.entry(key).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram overlap.
pub fn rouge_n<T: Score, S: AsRef<str>>(candidate: &[S], reference: &[S], n: usize) -> RougeScore<T> {
    assert!(n >= 1, "n-gram order must be positive");
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let overlap: usize = cand
        .iter()
        .map(|(gram, c)| refs.get(gram).map_or(0, |r| (*c).min(*r)))
        .sum();
    let cand_total = candidate.len().saturating_sub(n - 1);
    let ref_total = reference.len().saturating_sub(n - 1);
    RougeScore::from_hits(overlap, cand_total, ref_total)
}

/// Length of the longest common subsequence.
pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<T: Score, S: AsRef<str>>(candidate: &[S], reference: &[S]) -> RougeScore<T> {
    RougeScore::from_hits(lcs_len(candidate, reference), candidate.len(), reference.len())
}

/// Positions in `reference` that take part in one LCS with `candidate`.
fn lcs_reference_positions<S: AsRef<str>>(reference: &[S], candidate: &[S]) -> Vec<usize> {
    let (m, n) = (reference.len(), candidate.len());
    let mut table = vec![vec![0usize; n + 1]; m + 1];
    for i in 0..m {
        for j in 0..n {
            table[i + 1][j + 1] = if reference[i].as_ref() == candidate[j].as_ref() {
                table[i][j] + 1
            } else {
                table[i][j + 1].max(table[i + 1][j])
            };
        }
    }
    let (mut i, mut j) = (m, n);
    let mut positions = Vec::new();
    while i > 0 && j > 0 {
        if reference[i - 1].as_ref() == candidate[j - 1].as_ref() {
            positions.push(i - 1);
            i -= 1;
            j -= 1;
        } else if table[i - 1][j] >= table[i][j - 1] {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    positions.reverse();
    positions
}

/// Summary-level LCS over newline-separated sentences. Each reference
/// sentence contributes the union of its LCS positions against every
/// candidate sentence; hits are clipped by token counts on both sides.
pub fn rouge_lsum<T: Score>(candidate: &str, reference: &str, config: &TokenizeConfig) -> RougeScore<T> {
    let sentences = |text: &str| -> Vec<Vec<String>> {
        text.lines()
            .map(|line| tokenize(line, config))
            .filter(|tokens| !tokens.is_empty())
            .collect()
    };
    let cand = sentences(candidate);
    let refs = sentences(reference);
    let cand_total: usize = cand.iter().map(Vec::len).sum();
    let ref_total: usize = refs.iter().map(Vec::len).sum();
    if cand_total == 0 || ref_total == 0 {
        return RougeScore::zero();
    }

    let mut cand_counts: HashMap<&str, usize> = HashMap::new();
    for token in cand.iter().flatten() {
        *cand_counts.entry(token).or_insert(0) += 1;
    }
    let mut ref_counts: HashMap<&str, usize> = HashMap::new();
    for token in refs.iter().flatten() {
        *ref_counts.entry(token).or_insert(0) += 1;
    }

    let mut hits = 0;
    for sentence in &refs {
        let mut union: Vec<usize> = cand.iter().flat_map(|c| lcs_reference_positions(sentence, c)).collect();
        union.sort_unstable();
        union.dedup();
        for pos in union {
            let token = sentence[pos].as_str();
            let (Some(r), Some(c)) = (ref_counts.get_mut(token), cand_counts.get_mut(token)) else {
                continue;
            };
            if *r > 0 && *c > 0 {
                hits += 1;
                *r -= 1;
                *c -= 1;
            }
        }
    }
    RougeScore::from_hits(hits, cand_total, ref_total)
}

pub fn score_all<T: Score>(candidate: &str, reference: &str, config: &TokenizeConfig) -> RougeReport<T> {
    let cand = tokenize(candidate, config);
    let refs = tokenize(reference, config);
    RougeReport {
        rouge1: rouge_n(&cand, &refs, 1),
        rouge2: rouge_n(&cand, &refs, 2),
        rouge_l: rouge_l(&cand, &refs),
        rouge_lsum: rouge_lsum(candidate, reference, config),
    }
}
