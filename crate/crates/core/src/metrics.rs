//! Scoring of external prediction files: SQuAD-style normalization, exact
//! match, token F1, inclusion match with unanswerability phrase detection,
//! and relative performance change.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{MrcDataset, QaItem};

const DEFAULT_PHRASES: &str = include_str!("../data/unanswerable_phrases.json");

/// Normalized form of a prediction that abstains.
pub const NO_ANSWER_MARKER: &str = "unanswerable";

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no prediction for question {0}")]
    MissingPrediction(String),
    #[error("prediction for unknown question {0}")]
    UnknownQuestion(String),
    #[error("relative change undefined for an original score of 0")]
    DivisionByZero,
    #[error("phrase set is empty")]
    EmptyPhraseSet,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
}

fn articles_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b(a|an|the)\b").unwrap())
}

/// Lowercase, drop punctuation, drop the articles a/an/the, collapse whitespace.
pub fn normalize_text(s: &str) -> String {
    let lowered = s.to_lowercase();
    let no_punct: String = lowered.chars().filter(|&c| !is_punctuation(c)).collect();
    let no_articles = articles_re().replace_all(&no_punct, " ");
    no_articles.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// True when a prediction abstains: empty after normalization, or the
/// literal marker.
pub fn is_no_answer(prediction: &str) -> bool {
    let n = normalize_text(prediction);
    n.is_empty() || n == NO_ANSWER_MARKER
}

fn f1_single(pred_tokens: &[&str], gold: &str) -> f64 {
    let gold_norm = normalize_text(gold);
    let gold_tokens: Vec<&str> = gold_norm.split_whitespace().collect();
    if pred_tokens.is_empty() || gold_tokens.is_empty() {
        return if pred_tokens == gold_tokens.as_slice() {
            1.0
        } else {
            0.0
        };
    }
    let mut counts: std::collections::HashMap<&str, i64> = std::collections::HashMap::new();
    for t in &gold_tokens {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in pred_tokens {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pred_tokens.len() as f64;
    let recall = overlap as f64 / gold_tokens.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Token F1, maximized over gold answers. With no golds the item is
/// unanswerable and F1 is 1 exactly when the prediction abstains.
pub fn token_f1(prediction: &str, golds: &[&str]) -> f64 {
    if golds.is_empty() {
        return if is_no_answer(prediction) { 1.0 } else { 0.0 };
    }
    let pred_norm = normalize_text(prediction);
    let pred_tokens: Vec<&str> = pred_norm.split_whitespace().collect();
    golds
        .iter()
        .map(|g| f1_single(&pred_tokens, g))
        .fold(0.0, f64::max)
}

pub fn exact_match(prediction: &str, golds: &[&str]) -> u8 {
    if golds.is_empty() {
        return is_no_answer(prediction) as u8;
    }
    let p = normalize_text(prediction);
    golds.iter().any(|g| normalize_text(g) == p) as u8
}

/// Phrases whose presence in a free-form response signals that the model
/// considers the question unanswerable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnanswerablePhraseSet {
    phrases: Vec<String>,
}

fn collapse_lower(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Expands slash alternatives. The word before the first slash and the word
/// after the last slash are alternatives; any whole segments between
/// slashes are alternatives too, so "this/the question" yields "this
/// question" and "the question", and "text/article provided/passage does
/// not" yields three phrases ending in "does not".
pub fn expand_template(template: &str) -> Vec<String> {
    let parts: Vec<&str> = template.split('/').collect();
    if parts.len() < 2 {
        return vec![template.to_string()];
    }
    let first = parts[0];
    let last = parts[parts.len() - 1];
    let (prefix, first_alt) = match first.rfind(' ') {
        Some(i) => (&first[..=i], &first[i + 1..]),
        None => ("", first),
    };
    let (last_alt, suffix) = match last.find(' ') {
        Some(i) => (&last[..i], &last[i..]),
        None => (last, ""),
    };
    std::iter::once(first_alt)
        .chain(parts[1..parts.len() - 1].iter().copied())
        .chain(std::iter::once(last_alt))
        .map(|alt| format!("{prefix}{alt}{suffix}"))
        .collect()
}

impl UnanswerablePhraseSet {
    pub fn from_templates<S: AsRef<str>>(templates: &[S]) -> Result<Self, MetricsError> {
        let mut phrases: Vec<String> = Vec::new();
        for t in templates {
            for p in expand_template(t.as_ref()) {
                let p = collapse_lower(&p);
                if !p.is_empty() && !phrases.contains(&p) {
                    phrases.push(p);
                }
            }
        }
        if phrases.is_empty() {
            return Err(MetricsError::EmptyPhraseSet);
        }
        Ok(Self { phrases })
    }

    /// A JSON list of phrase templates.
    pub fn load(path: &Path) -> Result<Self, MetricsError> {
        let templates: Vec<String> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_templates(&templates)
    }

    pub fn phrases(&self) -> &[String] {
        &self.phrases
    }
}

impl Default for UnanswerablePhraseSet {
    fn default() -> Self {
        let templates: Vec<String> =
            serde_json::from_str(DEFAULT_PHRASES).expect("bundled phrase list");
        Self::from_templates(&templates).expect("bundled phrase list is non-empty")
    }
}

pub fn detect_unanswerable(response: &str, phrases: &UnanswerablePhraseSet) -> bool {
    let r = collapse_lower(response);
    phrases.phrases.iter().any(|p| r.contains(p.as_str()))
}

pub fn inclusion_match(
    response: &str,
    golds: &[&str],
    is_impossible: bool,
    phrases: &UnanswerablePhraseSet,
) -> u8 {
    let abstains = detect_unanswerable(response, phrases);
    if is_impossible {
        return abstains as u8;
    }
    if abstains {
        return 0;
    }
    let r = normalize_text(response);
    golds
        .iter()
        .map(|g| normalize_text(g))
        .any(|g| !g.is_empty() && r.contains(&g)) as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    F1,
    Im,
}

impl std::str::FromStr for MetricKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "f1" => Ok(Self::F1),
            "im" => Ok(Self::Im),
            other => Err(format!("unknown metric {other:?} (expected f1 or im)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub model_name: String,
    pub predictions: BTreeMap<String, String>,
}

impl PredictionSet {
    /// A JSON object mapping qid to answer string.
    pub fn load(path: &Path, model_name: &str) -> Result<Self, MetricsError> {
        let predictions = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Ok(Self {
            model_name: model_name.to_string(),
            predictions,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionScore {
    pub em: u8,
    pub f1: f64,
    pub im: u8,
    pub answerable: bool,
    /// Raw response, kept for auditing inclusion-match decisions.
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub em: f64,
    pub f1: f64,
    pub im: f64,
    pub answerable_f1: Option<f64>,
    pub unanswerable_f1: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub total: usize,
    pub answerable: usize,
    pub unanswerable: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub model_name: String,
    pub metric: MetricKind,
    /// The aggregate selected by `metric`.
    pub headline: f64,
    pub aggregates: Aggregates,
    pub counts: Counts,
    pub per_question: BTreeMap<String, QuestionScore>,
}

pub fn score_question(
    response: &str,
    qa: &QaItem,
    phrases: &UnanswerablePhraseSet,
) -> QuestionScore {
    let golds = qa.gold_texts();
    QuestionScore {
        em: exact_match(response, &golds),
        f1: token_f1(response, &golds),
        im: inclusion_match(response, &golds, qa.is_impossible, phrases),
        answerable: !qa.is_impossible,
        response: response.to_string(),
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn score(
    dataset: &MrcDataset,
    predictions: &PredictionSet,
    metric: MetricKind,
    phrases: &UnanswerablePhraseSet,
) -> Result<ScoreReport, MetricsError> {
    let items: Vec<&QaItem> = dataset.qas().map(|(_, q)| q).collect();
    let known: std::collections::HashSet<&str> = items.iter().map(|q| q.qid.as_str()).collect();
    if let Some(extra) = predictions
        .predictions
        .keys()
        .find(|k| !known.contains(k.as_str()))
    {
        return Err(MetricsError::UnknownQuestion(extra.clone()));
    }
    let scores: Vec<(String, QuestionScore)> = items
        .par_iter()
        .map(|q| {
            let response = predictions
                .predictions
                .get(&q.qid)
                .ok_or_else(|| MetricsError::MissingPrediction(q.qid.clone()))?;
            Ok((q.qid.clone(), score_question(response, q, phrases)))
        })
        .collect::<Result<_, MetricsError>>()?;

    let all = || scores.iter().map(|(_, s)| s);
    let aggregates = Aggregates {
        em: mean(all().map(|s| s.em as f64)).unwrap_or(0.0),
        f1: mean(all().map(|s| s.f1)).unwrap_or(0.0),
        im: mean(all().map(|s| s.im as f64)).unwrap_or(0.0),
        answerable_f1: mean(all().filter(|s| s.answerable).map(|s| s.f1)),
        unanswerable_f1: mean(all().filter(|s| !s.answerable).map(|s| s.f1)),
    };
    let answerable = all().filter(|s| s.answerable).count();
    let counts = Counts {
        total: scores.len(),
        answerable,
        unanswerable: scores.len() - answerable,
    };
    let headline = match metric {
        MetricKind::F1 => aggregates.f1,
        MetricKind::Im => aggregates.im,
    };
    Ok(ScoreReport {
        model_name: predictions.model_name.clone(),
        metric,
        headline,
        aggregates,
        counts,
        per_question: scores.into_iter().collect(),
    })
}

/// Percentage change from `original_score` to `perturbed_score`, rounded
/// to two decimals.
pub fn relative_change(original_score: f64, perturbed_score: f64) -> Result<f64, MetricsError> {
    if original_score == 0.0 {
        return Err(MetricsError::DivisionByZero);
    }
    let pct = 100.0 * (perturbed_score - original_score) / original_score;
    Ok((pct * 100.0).round() / 100.0 + 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Answer, Article, Paragraph, Schema};

    #[test]
    fn normalization() {
        assert_eq!(normalize_text("The Cat!"), "cat");
        assert_eq!(normalize_text("an   apple"), "apple");
        assert_eq!(normalize_text("1948"), "1948");
        assert_eq!(normalize_text("Theatre, a play"), "theatre play");
    }

    #[test]
    fn f1_examples() {
        assert_eq!(token_f1("Nikola Tesla", &["Nikola Tesla"]), 1.0);
        assert!((token_f1("the cat sat", &["cat sat down"]) - 0.8).abs() < 1e-12);
        assert_eq!(token_f1("dog", &["cat"]), 0.0);
        assert_eq!(token_f1("cat", &["dog", "cat"]), 1.0);
        assert_eq!(token_f1("", &[]), 1.0);
        assert_eq!(token_f1("Tesla", &[]), 0.0);
    }

    #[test]
    fn em_examples() {
        assert_eq!(exact_match("The Cat", &["cat"]), 1);
        assert_eq!(exact_match("cats", &["cat"]), 0);
        assert_eq!(exact_match("unanswerable", &[]), 1);
        assert_eq!(exact_match("", &[]), 1);
    }

    #[test]
    fn template_expansion() {
        assert_eq!(
            expand_template("I cannot answer this/the question"),
            vec![
                "I cannot answer this question",
                "I cannot answer the question"
            ]
        );
        assert_eq!(
            expand_template("context/question/article/text/article provided/passage does not"),
            vec![
                "context does not",
                "question does not",
                "article does not",
                "text does not",
                "article provided does not",
                "passage does not"
            ]
        );
        assert_eq!(expand_template("unanswerable"), vec!["unanswerable"]);
    }

    #[test]
    fn detection() {
        let p = UnanswerablePhraseSet::default();
        assert!(detect_unanswerable("Unanswerable.", &p));
        assert!(detect_unanswerable("The passage does not mention this", &p));
        assert!(detect_unanswerable("I  CANNOT answer\nthe question.", &p));
        assert!(!detect_unanswerable("Paris", &p));
    }

    #[test]
    fn inclusion() {
        let p = UnanswerablePhraseSet::default();
        assert_eq!(
            inclusion_match("It was Tesla who built it", &["Tesla"], false, &p),
            1
        );
        assert_eq!(
            inclusion_match("I cannot answer the question", &[], true, &p),
            1
        );
        assert_eq!(inclusion_match("unanswerable", &["Tesla"], false, &p), 0);
        assert_eq!(
            inclusion_match(
                "I cannot answer the question, maybe Tesla",
                &["Tesla"],
                false,
                &p
            ),
            0
        );
        assert_eq!(
            inclusion_match("  IT WAS TESLA  ", &["Tesla"], false, &p),
            1
        );
    }

    #[test]
    fn relative_change_values() {
        assert_eq!(relative_change(64.76, 55.52).unwrap(), -14.27);
        assert_eq!(relative_change(80.09, 75.11).unwrap(), -6.22);
        assert_eq!(relative_change(42.0, 42.0).unwrap(), 0.0);
        assert!(relative_change(42.0, 42.0).unwrap().is_sign_positive());
        assert!(matches!(
            relative_change(0.0, 1.0),
            Err(MetricsError::DivisionByZero)
        ));
    }

    fn fixture() -> MrcDataset {
        let qa = |id: &str, ans: &str| QaItem::answerable(id, "?", vec![Answer::new(ans, None)]);
        MrcDataset {
            name: "d".into(),
            schema: Schema::SquadV2,
            version: "v2.0".into(),
            articles: vec![Article {
                title: "T".into(),
                extra: Default::default(),
                paragraphs: vec![Paragraph {
                    context: "ctx".into(),
                    extra: Default::default(),
                    qas: vec![
                        qa("a", "Nikola Tesla"),
                        qa("b", "cat sat down"),
                        qa("c", "1948"),
                        QaItem::unanswerable("d", "?", vec![]),
                    ],
                }],
            }],
        }
    }

    fn preds(pairs: &[(&str, &str)]) -> PredictionSet {
        PredictionSet {
            model_name: "m".into(),
            predictions: pairs
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }

    #[test]
    fn score_fixture_hand_averaged() {
        let p = UnanswerablePhraseSet::default();
        let ds = fixture();
        let r = score(
            &ds,
            &preds(&[
                ("a", "Tesla"),
                ("b", "the cat sat"),
                ("c", "1948"),
                ("d", ""),
            ]),
            MetricKind::F1,
            &p,
        )
        .unwrap();
        // f1: a = 2/3 (P=1, R=1/2), b = 0.8, c = 1, d = 1
        let expected_f1 = (2.0 / 3.0 + 0.8 + 1.0 + 1.0) / 4.0;
        assert!((r.aggregates.f1 - expected_f1).abs() < 1e-12);
        assert_eq!(r.aggregates.em, 0.5);
        assert!(
            (r.aggregates.answerable_f1.unwrap() - (2.0 / 3.0 + 0.8 + 1.0) / 3.0).abs() < 1e-12
        );
        assert_eq!(r.aggregates.unanswerable_f1, Some(1.0));
        // im: only c contains its gold; an empty response carries no abstention phrase
        assert_eq!(r.aggregates.im, 0.25);
        assert_eq!(
            r.counts,
            Counts {
                total: 4,
                answerable: 3,
                unanswerable: 1
            }
        );
    }

    #[test]
    fn perfect_and_missing() {
        let p = UnanswerablePhraseSet::default();
        let ds = fixture();
        let perfect = preds(&[
            ("a", "Nikola Tesla"),
            ("b", "cat sat down"),
            ("c", "1948"),
            ("d", "unanswerable"),
        ]);
        let r = score(&ds, &perfect, MetricKind::Im, &p).unwrap();
        assert_eq!(
            (r.aggregates.em, r.aggregates.f1, r.headline),
            (1.0, 1.0, 1.0)
        );
        let missing = preds(&[("a", "x"), ("b", "x"), ("c", "x")]);
        assert!(
            matches!(score(&ds, &missing, MetricKind::F1, &p), Err(MetricsError::MissingPrediction(q)) if q == "d")
        );
    }
}
