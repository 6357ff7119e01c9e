//! SQuAD-schema datasets and the generic multi-passage JSON-Lines records.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    /// Character offset into the owning context.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_start: Option<usize>,
}

impl Answer {
    pub fn new(text: impl Into<String>, answer_start: Option<usize>) -> Self {
        Self {
            text: text.into(),
            answer_start,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QaItem {
    pub qid: String,
    pub question: String,
    pub answers: Vec<Answer>,
    pub is_impossible: bool,
    pub plausible_answers: Vec<Answer>,
    /// Fields outside the schema, carried through unchanged.
    pub extra: Map<String, Value>,
}

impl QaItem {
    pub fn answerable(qid: &str, question: &str, answers: Vec<Answer>) -> Self {
        Self {
            qid: qid.into(),
            question: question.into(),
            answers,
            is_impossible: false,
            plausible_answers: Vec::new(),
            extra: Map::new(),
        }
    }

    pub fn unanswerable(qid: &str, question: &str, plausible: Vec<Answer>) -> Self {
        Self {
            qid: qid.into(),
            question: question.into(),
            answers: Vec::new(),
            is_impossible: true,
            plausible_answers: plausible,
            extra: Map::new(),
        }
    }

    /// Gold answers, or plausible answers for unanswerable items.
    pub fn reference_answers(&self) -> &[Answer] {
        if self.is_impossible {
            &self.plausible_answers
        } else {
            &self.answers
        }
    }

    pub fn gold_texts(&self) -> Vec<&str> {
        self.answers.iter().map(|a| a.text.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Paragraph {
    pub context: String,
    pub qas: Vec<QaItem>,
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Article {
    pub title: String,
    pub paragraphs: Vec<Paragraph>,
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Schema {
    SquadV1,
    SquadV2,
    GenericJsonl,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MrcDataset {
    pub name: String,
    pub schema: Schema,
    pub version: String,
    pub articles: Vec<Article>,
}

// On-disk SQuAD layout. Field order follows the official files.
#[derive(Serialize, Deserialize)]
struct RawQa {
    question: String,
    id: String,
    answers: Vec<Answer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    is_impossible: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    plausible_answers: Option<Vec<Answer>>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

#[derive(Serialize, Deserialize)]
struct RawParagraph {
    qas: Vec<RawQa>,
    context: String,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

#[derive(Serialize, Deserialize)]
struct RawArticle {
    title: String,
    paragraphs: Vec<RawParagraph>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

#[derive(Serialize, Deserialize)]
struct RawSquad {
    version: String,
    data: Vec<RawArticle>,
}

/// Character offset of the first occurrence of `needle` in `haystack`.
pub fn char_find(haystack: &str, needle: &str) -> Option<usize> {
    haystack.find(needle).map(|b| haystack[..b].chars().count())
}

/// True when `context[start..start + len(text)]` (in characters) is `text`.
pub fn offset_matches(context: &str, answer: &Answer) -> bool {
    match answer.answer_start {
        None => true,
        Some(start) => {
            let n = answer.text.chars().count();
            context.chars().skip(start).take(n).eq(answer.text.chars())
        }
    }
}

/// Collapses whitespace runs to single spaces and trims.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl MrcDataset {
    pub fn from_squad_str(name: &str, json: &str) -> Result<Self, DatasetError> {
        let raw: RawSquad = serde_json::from_str(json)?;
        let v2 = raw.version.starts_with("v2")
            || raw
                .data
                .iter()
                .flat_map(|a| &a.paragraphs)
                .flat_map(|p| &p.qas)
                .any(|q| q.is_impossible.is_some());
        let articles = raw
            .data
            .into_iter()
            .map(|a| Article {
                title: a.title,
                extra: a.extra,
                paragraphs: a
                    .paragraphs
                    .into_iter()
                    .map(|p| Paragraph {
                        context: p.context,
                        extra: p.extra,
                        qas: p
                            .qas
                            .into_iter()
                            .map(|q| QaItem {
                                qid: q.id,
                                question: q.question,
                                answers: q.answers,
                                is_impossible: q.is_impossible.unwrap_or(false),
                                plausible_answers: q.plausible_answers.unwrap_or_default(),
                                extra: q.extra,
                            })
                            .collect(),
                    })
                    .collect(),
            })
            .collect();
        let dataset = Self {
            name: name.to_string(),
            schema: if v2 { Schema::SquadV2 } else { Schema::SquadV1 },
            version: raw.version,
            articles,
        };
        dataset.check_unique_qids()?;
        Ok(dataset)
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::from_squad_str(&name, &std::fs::read_to_string(path)?)
    }

    /// Serializes in the official compact SQuAD layout. Version 1 output
    /// omits the unanswerability fields.
    pub fn to_squad_string(&self) -> String {
        let v2 = self.schema == Schema::SquadV2;
        let raw = RawSquad {
            version: self.version.clone(),
            data: self
                .articles
                .iter()
                .map(|a| RawArticle {
                    title: a.title.clone(),
                    extra: a.extra.clone(),
                    paragraphs: a
                        .paragraphs
                        .iter()
                        .map(|p| RawParagraph {
                            context: p.context.clone(),
                            extra: p.extra.clone(),
                            qas: p
                                .qas
                                .iter()
                                .map(|q| RawQa {
                                    question: q.question.clone(),
                                    id: q.qid.clone(),
                                    answers: q.answers.clone(),
                                    is_impossible: v2.then_some(q.is_impossible),
                                    plausible_answers: (v2 && q.is_impossible)
                                        .then(|| q.plausible_answers.clone()),
                                    extra: q.extra.clone(),
                                })
                                .collect(),
                        })
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_string(&raw).expect("dataset serialization cannot fail")
    }

    pub fn write(&self, path: &Path) -> Result<(), DatasetError> {
        std::fs::write(path, self.to_squad_string())?;
        Ok(())
    }

    pub fn qas(&self) -> impl Iterator<Item = (&Paragraph, &QaItem)> {
        self.articles
            .iter()
            .flat_map(|a| &a.paragraphs)
            .flat_map(|p| p.qas.iter().map(move |q| (p, q)))
    }

    pub fn question_count(&self) -> usize {
        self.qas().count()
    }

    pub fn context_count(&self) -> usize {
        self.articles.iter().map(|a| a.paragraphs.len()).sum()
    }

    pub fn qids(&self) -> Vec<&str> {
        self.qas().map(|(_, q)| q.qid.as_str()).collect()
    }

    fn check_unique_qids(&self) -> Result<(), DatasetError> {
        let mut seen = HashSet::new();
        for (_, q) in self.qas() {
            if !seen.insert(q.qid.as_str()) {
                return Err(DatasetError::Invalid(format!("duplicate qid {}", q.qid)));
            }
        }
        Ok(())
    }

    /// Checks every dataset invariant: unique qids, answer presence
    /// matching answerability, and offsets that index their context.
    pub fn validate(&self) -> Result<(), DatasetError> {
        self.check_unique_qids()?;
        for (p, q) in self.qas() {
            if !q.is_impossible && q.answers.is_empty() {
                return Err(DatasetError::Invalid(format!(
                    "answerable {} has no answers",
                    q.qid
                )));
            }
            if q.is_impossible && !q.answers.is_empty() {
                return Err(DatasetError::Invalid(format!(
                    "unanswerable {} has answers",
                    q.qid
                )));
            }
            for a in q.answers.iter().chain(&q.plausible_answers) {
                if !offset_matches(&p.context, a) {
                    return Err(DatasetError::Invalid(format!(
                        "{}: answer {:?} not at offset {:?}",
                        q.qid, a.text, a.answer_start
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    pub text: String,
    pub is_supporting: bool,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

/// One multi-passage item (BoolQ, DROP, HotpotQA, TyDiQA style).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiPassageRecord {
    pub qid: String,
    pub question: String,
    pub passages: Vec<Passage>,
    pub answers: Vec<String>,
    pub answer_type: String,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, DatasetError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(DatasetError::from))
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), DatasetError> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.push(b'\n');
    }
    std::fs::write(path, buf)?;
    Ok(())
}

/// Passage-id to Wikipedia-title mapping, produced outside this crate.
pub fn load_title_mapping(path: &Path) -> Result<BTreeMap<String, String>, DatasetError> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
