//! Matching dataset passages to mined candidates and emitting paired
//! Original/Perturbed test sets, training augmentations, and perturbed
//! multi-passage records.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    char_find, normalize_whitespace, Answer, Article, MrcDataset, MultiPassageRecord, Paragraph,
    QaItem,
};
use crate::diff::{CandidatePair, PipelineConfig};
use crate::seed;

/// Suffix appended to qids of naturally perturbed training instances.
pub const AUGMENT_QID_SUFFIX: &str = "-nat";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BuildError {
    #[error("no context survived matching and answer filtering")]
    EmptyResult,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub page_title: String,
    pub prev_rev_id: u64,
    pub curr_rev_id: u64,
}

impl From<&CandidatePair> for Provenance {
    fn from(c: &CandidatePair) -> Self {
        Self {
            page_title: c.page_title.clone(),
            prev_rev_id: c.prev_rev_id,
            curr_rev_id: c.curr_rev_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedTestSet {
    pub original: MrcDataset,
    pub perturbed: MrcDataset,
    pub provenance: BTreeMap<String, Provenance>,
}

impl PairedTestSet {
    /// Keeps only the questions in `qids`. Paragraphs stay in place, so the
    /// two sides remain aligned position by position.
    pub fn restrict(&self, qids: &std::collections::HashSet<&str>) -> PairedTestSet {
        let keep = |d: &MrcDataset| {
            let mut d = d.clone();
            for p in d.articles.iter_mut().flat_map(|a| a.paragraphs.iter_mut()) {
                p.qas.retain(|q| qids.contains(q.qid.as_str()));
            }
            d
        };
        PairedTestSet {
            original: keep(&self.original),
            perturbed: keep(&self.perturbed),
            provenance: self
                .provenance
                .iter()
                .filter(|(k, _)| qids.contains(k.as_str()))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }
}

/// Candidates grouped by the whitespace-normalized text of their original.
pub struct CandidateIndex<'a> {
    by_original: HashMap<String, Vec<&'a CandidatePair>>,
}

impl<'a> CandidateIndex<'a> {
    pub fn new(candidates: &'a [CandidatePair]) -> Self {
        let mut by_original: HashMap<String, Vec<&CandidatePair>> = HashMap::new();
        for c in candidates {
            by_original
                .entry(normalize_whitespace(&c.original))
                .or_default()
                .push(c);
        }
        Self { by_original }
    }

    /// The candidate for `context`, chosen uniformly among all matches by a
    /// stream keyed on `seed` and the normalized context.
    pub fn select(&self, context: &str, seed: u64) -> Option<&'a CandidatePair> {
        let key = normalize_whitespace(context);
        let matches = self.by_original.get(&key)?;
        match matches.len() {
            0 => None,
            1 => Some(matches[0]),
            n => {
                let mut rng = seed::stream(seed, &[b"match", key.as_bytes()]);
                Some(matches[rng.gen_range(0..n)])
            }
        }
    }
}

/// Maps every dataset context that has at least one matching candidate to
/// the selected candidate.
pub fn match_passages(
    dataset: &MrcDataset,
    candidates: &[CandidatePair],
    seed: u64,
) -> BTreeMap<String, CandidatePair> {
    let index = CandidateIndex::new(candidates);
    dataset
        .articles
        .iter()
        .flat_map(|a| &a.paragraphs)
        .filter_map(|p| {
            index
                .select(&p.context, seed)
                .map(|c| (p.context.clone(), c.clone()))
        })
        .collect()
}

/// Re-locates every reference answer in `text`, or `None` if one is missing.
fn relocate(answers: &[Answer], text: &str) -> Option<Vec<Answer>> {
    answers
        .iter()
        .map(|a| char_find(text, &a.text).map(|start| Answer::new(a.text.clone(), Some(start))))
        .collect()
}

/// Keeps the QA items whose every gold answer (plausible answer, for
/// unanswerable items) occurs verbatim in the perturbed paragraph. Offsets
/// of the kept items are recomputed against the perturbed paragraph.
pub fn filter_answer_preserving(pair: &CandidatePair, qas: &[QaItem]) -> Vec<QaItem> {
    qas.iter()
        .filter_map(|q| relocate_item(q, &pair.perturbed))
        .collect()
}

/// `q` with offsets recomputed against `text`, or `None` when a reference
/// answer no longer occurs in it.
pub fn relocate_item(q: &QaItem, text: &str) -> Option<QaItem> {
    let answers = relocate(&q.answers, text)?;
    let plausible = relocate(&q.plausible_answers, text)?;
    Some(QaItem {
        answers,
        plausible_answers: plausible,
        ..q.clone()
    })
}

struct MatchedParagraph {
    original: Paragraph,
    perturbed: Paragraph,
    source: Provenance,
}

fn match_article(
    article: &Article,
    index: &CandidateIndex<'_>,
    seed: u64,
) -> Vec<MatchedParagraph> {
    article
        .paragraphs
        .iter()
        .filter_map(|p| {
            let cand = index.select(&p.context, seed)?;
            let kept = filter_answer_preserving(cand, &p.qas);
            if kept.is_empty() {
                return None;
            }
            let kept_ids: std::collections::HashSet<&str> =
                kept.iter().map(|q| q.qid.as_str()).collect();
            let original_qas = p
                .qas
                .iter()
                .filter(|q| kept_ids.contains(q.qid.as_str()))
                .cloned()
                .collect();
            Some(MatchedParagraph {
                original: Paragraph {
                    context: p.context.clone(),
                    qas: original_qas,
                    extra: p.extra.clone(),
                },
                perturbed: Paragraph {
                    context: cand.perturbed.clone(),
                    qas: kept,
                    extra: p.extra.clone(),
                },
                source: Provenance::from(cand),
            })
        })
        .collect()
}

fn matched_articles<'d>(
    dataset: &'d MrcDataset,
    candidates: &[CandidatePair],
    seed: u64,
) -> Vec<(&'d Article, Vec<MatchedParagraph>)> {
    let index = CandidateIndex::new(candidates);
    dataset
        .articles
        .par_iter()
        .map(|a| (a, match_article(a, &index, seed)))
        .filter(|(_, m)| !m.is_empty())
        .collect()
}

fn with_articles(template: &MrcDataset, name: String, articles: Vec<Article>) -> MrcDataset {
    MrcDataset {
        name,
        schema: template.schema,
        version: template.version.clone(),
        articles,
    }
}

pub fn build_paired_sets(
    dataset: &MrcDataset,
    candidates: &[CandidatePair],
    cfg: &PipelineConfig,
) -> Result<PairedTestSet, BuildError> {
    let matched = matched_articles(dataset, candidates, cfg.rng_seed);
    if matched.is_empty() {
        return Err(BuildError::EmptyResult);
    }
    let mut original = Vec::new();
    let mut perturbed = Vec::new();
    let mut provenance = BTreeMap::new();
    for (article, paragraphs) in matched {
        let mut orig_paras = Vec::new();
        let mut pert_paras = Vec::new();
        for m in paragraphs {
            for q in &m.perturbed.qas {
                provenance.insert(q.qid.clone(), m.source.clone());
            }
            orig_paras.push(m.original);
            pert_paras.push(m.perturbed);
        }
        original.push(Article {
            title: article.title.clone(),
            paragraphs: orig_paras,
            extra: article.extra.clone(),
        });
        perturbed.push(Article {
            title: article.title.clone(),
            paragraphs: pert_paras,
            extra: article.extra.clone(),
        });
    }
    Ok(PairedTestSet {
        original: with_articles(dataset, format!("{}_original", dataset.name), original),
        perturbed: with_articles(dataset, format!("{}_perturbed", dataset.name), perturbed),
        provenance,
    })
}

/// Naturally perturbed training instances, qids suffixed with
/// [`AUGMENT_QID_SUFFIX`], ready to be concatenated with the source split.
pub fn build_augmentation(
    train: &MrcDataset,
    candidates: &[CandidatePair],
    cfg: &PipelineConfig,
) -> Result<MrcDataset, BuildError> {
    let matched = matched_articles(train, candidates, cfg.rng_seed);
    if matched.is_empty() {
        return Err(BuildError::EmptyResult);
    }
    let articles = matched
        .into_iter()
        .map(|(article, paragraphs)| Article {
            title: article.title.clone(),
            extra: article.extra.clone(),
            paragraphs: paragraphs
                .into_iter()
                .map(|m| {
                    let mut p = m.perturbed;
                    for q in &mut p.qas {
                        q.qid.push_str(AUGMENT_QID_SUFFIX);
                    }
                    p
                })
                .collect(),
        })
        .collect();
    Ok(with_articles(
        train,
        format!("{}_natural_augmentation", train.name),
        articles,
    ))
}

/// Replaces supporting passages that have a matched candidate with their
/// perturbed version; distractors pass through. Returns `None` when no
/// supporting passage could be perturbed.
pub fn perturb_multipassage(
    record: &MultiPassageRecord,
    index: &CandidateIndex<'_>,
    cfg: &PipelineConfig,
) -> Option<MultiPassageRecord> {
    let mut out = record.clone();
    let mut replaced = 0;
    for passage in out.passages.iter_mut().filter(|p| p.is_supporting) {
        if let Some(c) = index.select(&passage.text, cfg.rng_seed) {
            passage.text = c.perturbed.clone();
            replaced += 1;
        }
    }
    (replaced > 0).then_some(out)
}
