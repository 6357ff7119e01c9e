use std::collections::{BTreeMap, HashMap, HashSet};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use super::{lacks_robustness, RobustnessRule};
use crate::dataset::{
    char_find, normalize_whitespace, Answer, Article, MrcDataset, Paragraph, QaItem,
};
use crate::diff::CandidatePair;
use crate::seed;
use crate::testset::{relocate_item, PairedTestSet, Provenance};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChallengeError {
    #[error("model {model} has no {side} prediction for {qid}")]
    MissingPrediction {
        model: String,
        side: &'static str,
        qid: String,
    },
    #[error("no question survived the orientation search")]
    EmptyResult,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolQuestion {
    /// Unique within the pool: the source qid plus the entry id.
    pub qid: String,
    pub source_qid: String,
    pub question: String,
    pub answers: Vec<String>,
    pub is_impossible: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub plausible_answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub extra: Map<String, Value>,
}

impl PoolQuestion {
    /// The question against `text`, with offsets of first occurrences.
    fn located(&self, text: &str, qid: &str) -> QaItem {
        let locate = |xs: &[String]| {
            xs.iter()
                .map(|a| Answer::new(a.clone(), char_find(text, a)))
                .collect()
        };
        QaItem {
            qid: qid.to_string(),
            question: self.question.clone(),
            answers: locate(&self.answers),
            is_impossible: self.is_impossible,
            plausible_answers: locate(&self.plausible_answers),
            extra: self.extra.clone(),
        }
    }
}

/// A mined pair whose prior or current side is a dev-set context, with the
/// dev questions whose answers occur in both sides.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub pool_id: String,
    pub provenance: Provenance,
    pub prev_context: String,
    pub curr_context: String,
    pub questions: Vec<PoolQuestion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChallengePool {
    pub dev_name: String,
    pub entries: Vec<PoolEntry>,
}

/// Predictions of one model on the prior-side and current-side pool sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPredictions {
    pub name: String,
    pub on_prev: BTreeMap<String, String>,
    pub on_curr: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrientationDecision {
    /// True when the prior revision is the original.
    pub forward: bool,
    pub n_forward: usize,
    pub n_reverse: usize,
    pub q_forward: usize,
    pub q_reverse: usize,
    pub tie_broken_randomly: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub pool_id: String,
    pub page_title: String,
    pub prev_rev_id: u64,
    pub curr_rev_id: u64,
    #[serde(flatten)]
    pub decision: OrientationDecision,
    pub reserved_questions: usize,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChallengeOutcome {
    pub set: PairedTestSet,
    pub decisions: Vec<DecisionRecord>,
}

type DevIndex = HashMap<String, (usize, usize)>;

fn dev_index(dev: &MrcDataset) -> DevIndex {
    let mut idx = HashMap::new();
    for (ai, a) in dev.articles.iter().enumerate() {
        for (pi, p) in a.paragraphs.iter().enumerate() {
            idx.entry(normalize_whitespace(&p.context))
                .or_insert((ai, pi));
        }
    }
    idx
}

fn answer_texts(answers: &[Answer]) -> Vec<String> {
    answers.iter().map(|a| a.text.clone()).collect()
}

/// Collects every candidate with a side matching a dev context. Questions
/// come from the matched context(s) and are kept when all their reference
/// answers occur in both sides.
pub fn build_challenge_pool(dev: &MrcDataset, candidates: &[CandidatePair]) -> ChallengePool {
    let index = dev_index(dev);
    let mut entries = Vec::new();
    for cand in candidates {
        let sides = [&cand.original, &cand.perturbed];
        let mut seen = HashSet::new();
        let mut questions = Vec::new();
        let pool_id = format!("p{}", entries.len());
        for side in sides {
            let Some(&(ai, pi)) = index.get(&normalize_whitespace(side)) else {
                continue;
            };
            for q in &dev.articles[ai].paragraphs[pi].qas {
                if !seen.insert(q.qid.clone()) {
                    continue;
                }
                if relocate_item(q, &cand.original).is_none()
                    || relocate_item(q, &cand.perturbed).is_none()
                {
                    continue;
                }
                questions.push(PoolQuestion {
                    qid: format!("{}-{pool_id}", q.qid),
                    source_qid: q.qid.clone(),
                    question: q.question.clone(),
                    answers: answer_texts(&q.answers),
                    is_impossible: q.is_impossible,
                    plausible_answers: answer_texts(&q.plausible_answers),
                    extra: q.extra.clone(),
                });
            }
        }
        if !questions.is_empty() {
            entries.push(PoolEntry {
                pool_id,
                provenance: Provenance::from(cand),
                prev_context: cand.original.clone(),
                curr_context: cand.perturbed.clone(),
                questions,
            });
        }
    }
    ChallengePool {
        dev_name: dev.name.clone(),
        entries,
    }
}

impl ChallengePool {
    /// The prior-side and current-side datasets that models predict on.
    pub fn to_datasets(&self, template: &MrcDataset) -> (MrcDataset, MrcDataset) {
        let side = |prev: bool| {
            let articles = self
                .entries
                .iter()
                .map(|e| {
                    let text = if prev {
                        &e.prev_context
                    } else {
                        &e.curr_context
                    };
                    let mut extra = Map::new();
                    extra.insert("pool_id".into(), Value::String(e.pool_id.clone()));
                    Article {
                        title: e.provenance.page_title.clone(),
                        extra: Map::new(),
                        paragraphs: vec![Paragraph {
                            context: text.clone(),
                            qas: e
                                .questions
                                .iter()
                                .map(|q| q.located(text, &q.qid))
                                .collect(),
                            extra,
                        }],
                    }
                })
                .collect();
            MrcDataset {
                name: format!(
                    "{}_pool_{}",
                    self.dev_name,
                    if prev { "prev" } else { "curr" }
                ),
                schema: template.schema,
                version: template.version.clone(),
                articles,
            }
        };
        (side(true), side(false))
    }
}

fn pool_items(entry: &PoolEntry) -> Vec<QaItem> {
    entry
        .questions
        .iter()
        .map(|q| q.located(&entry.prev_context, &q.qid))
        .collect()
}

fn pred<'a>(m: &'a BTreeMap<String, String>, qid: &str) -> &'a str {
    m.get(qid).map_or("", String::as_str)
}

/// Number of models lacking robustness on each question, with the prior
/// side as original when `forward`.
fn lacking_counts(
    qas: &[QaItem],
    models: &[ModelPredictions],
    rule: &RobustnessRule,
    forward: bool,
) -> Vec<usize> {
    qas.iter()
        .map(|qa| {
            models
                .iter()
                .filter(|m| {
                    let (o, p) = if forward {
                        (&m.on_prev, &m.on_curr)
                    } else {
                        (&m.on_curr, &m.on_prev)
                    };
                    lacks_robustness(pred(o, &qa.qid), pred(p, &qa.qid), qa, rule)
                })
                .count()
        })
        .collect()
}

/// Decides which side of a pair is the original. N counts (model,
/// question) lack-of-robustness events and Q the questions with at least
/// one, under each orientation; N decides, then Q, then a coin flip drawn
/// from a stream keyed by `seed` and `tie_key`.
pub fn orient_pair(
    qas: &[QaItem],
    models: &[ModelPredictions],
    rule: &RobustnessRule,
    seed: u64,
    tie_key: &str,
) -> OrientationDecision {
    let fwd = lacking_counts(qas, models, rule, true);
    let rev = lacking_counts(qas, models, rule, false);
    let n_forward = fwd.iter().sum();
    let n_reverse = rev.iter().sum();
    let q_forward = fwd.iter().filter(|&&c| c > 0).count();
    let q_reverse = rev.iter().filter(|&&c| c > 0).count();
    let (forward, tie_broken_randomly) = match (n_forward, q_forward).cmp(&(n_reverse, q_reverse)) {
        std::cmp::Ordering::Greater => (true, false),
        std::cmp::Ordering::Less => (false, false),
        std::cmp::Ordering::Equal => (
            seed::stream(seed, &[b"orient", tie_key.as_bytes()]).gen_bool(0.5),
            true,
        ),
    };
    OrientationDecision {
        forward,
        n_forward,
        n_reverse,
        q_forward,
        q_reverse,
        tie_broken_randomly,
    }
}

fn tie_key(p: &Provenance) -> String {
    format!(
        "{}\u{1f}{}\u{1f}{}",
        p.page_title, p.prev_rev_id, p.curr_rev_id
    )
}

fn check_predictions(
    pool: &ChallengePool,
    models: &[ModelPredictions],
) -> Result<(), ChallengeError> {
    for m in models {
        for q in pool.entries.iter().flat_map(|e| &e.questions) {
            for (side, preds) in [("prior-side", &m.on_prev), ("current-side", &m.on_curr)] {
                if !preds.contains_key(&q.qid) {
                    return Err(ChallengeError::MissingPrediction {
                        model: m.name.clone(),
                        side,
                        qid: q.qid.clone(),
                    });
                }
            }
        }
    }
    Ok(())
}

struct Oriented {
    decision: OrientationDecision,
    /// Indices into the entry's questions with at least one lacking model.
    reserved: Vec<usize>,
    dev_slot: Option<(usize, usize)>,
}

/// Orients every pool entry, keeps the questions on which some model lacks
/// robustness, requires the original side to be a dev context, and for dev
/// contexts chosen by several entries keeps the entry with the most
/// reserved questions (the earliest one on ties).
pub fn build_challenge_set(
    pool: &ChallengePool,
    dev: &MrcDataset,
    models: &[ModelPredictions],
    rule: &RobustnessRule,
    seed: u64,
) -> Result<ChallengeOutcome, ChallengeError> {
    check_predictions(pool, models)?;
    let index = dev_index(dev);
    let oriented: Vec<Oriented> = pool
        .entries
        .par_iter()
        .map(|e| {
            let qas = pool_items(e);
            let decision = orient_pair(&qas, models, rule, seed, &tie_key(&e.provenance));
            let counts = lacking_counts(&qas, models, rule, decision.forward);
            let reserved = counts
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(i, _)| i)
                .collect();
            let original = if decision.forward {
                &e.prev_context
            } else {
                &e.curr_context
            };
            let dev_slot = index.get(&normalize_whitespace(original)).copied();
            Oriented {
                decision,
                reserved,
                dev_slot,
            }
        })
        .collect();

    let mut best: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (i, o) in oriented.iter().enumerate() {
        let (Some(slot), false) = (o.dev_slot, o.reserved.is_empty()) else {
            continue;
        };
        match best.get(&slot) {
            Some(&j) if oriented[j].reserved.len() >= o.reserved.len() => {}
            _ => {
                best.insert(slot, i);
            }
        }
    }
    let winners: HashSet<usize> = best.values().copied().collect();

    let decisions = pool
        .entries
        .iter()
        .zip(&oriented)
        .enumerate()
        .map(|(i, (e, o))| {
            let status = if o.reserved.is_empty() {
                "no_reserved_questions"
            } else if o.dev_slot.is_none() {
                "original_not_in_dev"
            } else if winners.contains(&i) {
                "kept"
            } else {
                "superseded"
            };
            DecisionRecord {
                pool_id: e.pool_id.clone(),
                page_title: e.provenance.page_title.clone(),
                prev_rev_id: e.provenance.prev_rev_id,
                curr_rev_id: e.provenance.curr_rev_id,
                decision: o.decision,
                reserved_questions: o.reserved.len(),
                status: status.to_string(),
            }
        })
        .collect();

    let mut emitted: HashSet<String> = HashSet::new();
    let mut by_article: BTreeMap<usize, (Vec<Paragraph>, Vec<Paragraph>)> = BTreeMap::new();
    let mut provenance = BTreeMap::new();
    for (&(ai, pi), &i) in &best {
        let entry = &pool.entries[i];
        let o = &oriented[i];
        let dev_para = &dev.articles[ai].paragraphs[pi];
        let perturbed_text = if o.decision.forward {
            &entry.curr_context
        } else {
            &entry.prev_context
        };
        let mut orig_qas = Vec::new();
        let mut pert_qas = Vec::new();
        for &qi in &o.reserved {
            let q = &entry.questions[qi];
            if !emitted.insert(q.source_qid.clone()) {
                continue;
            }
            let orig = dev_para
                .qas
                .iter()
                .find(|d| d.qid == q.source_qid)
                .cloned()
                .unwrap_or_else(|| q.located(&dev_para.context, &q.source_qid));
            orig_qas.push(orig);
            pert_qas.push(q.located(perturbed_text, &q.source_qid));
            provenance.insert(q.source_qid.clone(), entry.provenance.clone());
        }
        if orig_qas.is_empty() {
            continue;
        }
        let slot = by_article.entry(ai).or_default();
        slot.0.push(Paragraph {
            context: dev_para.context.clone(),
            qas: orig_qas,
            extra: dev_para.extra.clone(),
        });
        slot.1.push(Paragraph {
            context: perturbed_text.clone(),
            qas: pert_qas,
            extra: dev_para.extra.clone(),
        });
    }
    if by_article.is_empty() {
        return Err(ChallengeError::EmptyResult);
    }
    let mut original = Vec::new();
    let mut perturbed = Vec::new();
    for (ai, (o, p)) in by_article {
        let a = &dev.articles[ai];
        original.push(Article {
            title: a.title.clone(),
            paragraphs: o,
            extra: a.extra.clone(),
        });
        perturbed.push(Article {
            title: a.title.clone(),
            paragraphs: p,
            extra: a.extra.clone(),
        });
    }
    let mk = |suffix: &str, articles| MrcDataset {
        name: format!("{}_challenge_{suffix}", dev.name),
        schema: dev.schema,
        version: dev.version.clone(),
        articles,
    };
    Ok(ChallengeOutcome {
        set: PairedTestSet {
            original: mk("original", original),
            perturbed: mk("perturbed", perturbed),
            provenance,
        },
        decisions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Schema;

    fn qa(id: &str, gold: &str) -> QaItem {
        QaItem::answerable(id, "?", vec![Answer::new(gold, None)])
    }

    fn model(name: &str, prev: &[(&str, &str)], curr: &[(&str, &str)]) -> ModelPredictions {
        let m = |v: &[(&str, &str)]| {
            v.iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect()
        };
        ModelPredictions {
            name: name.into(),
            on_prev: m(prev),
            on_curr: m(curr),
        }
    }

    #[test]
    fn orientation_branches() {
        let rule = RobustnessRule::default();
        let qas = vec![qa("a", "x"), qa("b", "y")];
        // N = 3 forward (m1 on a and b, m2 on a), N' = 1 (m3 on b)
        let ms = vec![
            model("m1", &[("a", "x"), ("b", "y")], &[("a", "z"), ("b", "z")]),
            model("m2", &[("a", "x"), ("b", "z")], &[("a", "z"), ("b", "z")]),
            model("m3", &[("a", "z"), ("b", "z")], &[("a", "z"), ("b", "y")]),
        ];
        let d = orient_pair(&qas, &ms, &rule, 0, "k");
        assert_eq!(
            (d.n_forward, d.n_reverse, d.q_forward, d.q_reverse),
            (3, 1, 2, 1)
        );
        assert!(d.forward && !d.tie_broken_randomly);

        // swapping the sides flips the decision
        let swapped: Vec<_> = ms
            .iter()
            .map(|m| ModelPredictions {
                name: m.name.clone(),
                on_prev: m.on_curr.clone(),
                on_curr: m.on_prev.clone(),
            })
            .collect();
        let s = orient_pair(&qas, &swapped, &rule, 0, "k");
        assert!(!s.forward && !s.tie_broken_randomly);
        assert_eq!((s.n_forward, s.n_reverse), (1, 3));
    }

    #[test]
    fn full_tie_is_seeded() {
        let rule = RobustnessRule::default();
        let qas = vec![qa("a", "x")];
        let ms = vec![model("m", &[("a", "z")], &[("a", "z")])];
        let d = orient_pair(&qas, &ms, &rule, 5, "page");
        assert!(d.tie_broken_randomly);
        assert_eq!(d, orient_pair(&qas, &ms, &rule, 5, "page"));
        let flips: HashSet<bool> = (0..32)
            .map(|s| orient_pair(&qas, &ms, &rule, s, "page").forward)
            .collect();
        assert_eq!(flips.len(), 2);
    }

    fn dev() -> MrcDataset {
        let para = |c: &str, qas| Paragraph {
            context: c.into(),
            qas,
            extra: Default::default(),
        };
        MrcDataset {
            name: "dev".into(),
            schema: Schema::SquadV1,
            version: "1.1".into(),
            articles: vec![Article {
                title: "Page".into(),
                extra: Default::default(),
                paragraphs: vec![
                    para(
                        "Alpha was built in 1901 by Ada.",
                        vec![qa_at("q1", "1901", 19), qa_at("q2", "Ada", 27)],
                    ),
                    para(
                        "Beta was built in 1902 by Bob.",
                        vec![qa_at("q3", "1902", 18)],
                    ),
                ],
            }],
        }
    }

    fn qa_at(id: &str, gold: &str, at: usize) -> QaItem {
        QaItem::answerable(id, "?", vec![Answer::new(gold, Some(at))])
    }

    fn cand(orig: &str, pert: &str, rev: u64) -> CandidatePair {
        CandidatePair {
            page_title: "Page".into(),
            prev_rev_id: rev,
            curr_rev_id: rev + 1,
            original: orig.into(),
            perturbed: pert.into(),
        }
    }

    #[test]
    fn two_pair_fixture_yields_one_pair() {
        let d = dev();
        d.validate().unwrap();
        let cands = vec![
            cand(
                "Alpha was built in 1901 by Ada.",
                "In 1901 Ada completed Alpha.",
                10,
            ),
            cand(
                "Beta was built in 1902 by Bob.",
                "Bob built Beta in 1902.",
                20,
            ),
        ];
        let pool = build_challenge_pool(&d, &cands);
        assert_eq!(pool.entries.len(), 2);
        assert_eq!(pool.entries[0].questions.len(), 2);
        let (prev, curr) = pool.to_datasets(&d);
        prev.validate().unwrap();
        curr.validate().unwrap();
        assert_eq!(prev.qids(), vec!["q1-p0", "q2-p0", "q3-p1"]);

        // model fails q1 on the current side only; everything else is right both ways
        let right = |q: &str| match q.split('-').next().unwrap() {
            "q1" => "1901",
            "q2" => "Ada",
            _ => "1902",
        };
        let prev_p: Vec<(&str, &str)> = prev.qids().into_iter().map(|q| (q, right(q))).collect();
        let curr_p: Vec<(&str, &str)> = curr
            .qids()
            .into_iter()
            .map(|q| (q, if q == "q1-p0" { "Ada" } else { right(q) }))
            .collect();
        let m = model("m", &prev_p, &curr_p);
        let out = build_challenge_set(&pool, &d, &[m], &RobustnessRule::default(), 0).unwrap();
        assert_eq!(out.set.original.context_count(), 1);
        assert_eq!(out.set.original.qids(), vec!["q1"]);
        assert_eq!(
            out.set.perturbed.articles[0].paragraphs[0].context,
            "In 1901 Ada completed Alpha."
        );
        out.set.original.validate().unwrap();
        out.set.perturbed.validate().unwrap();
        let status: Vec<&str> = out.decisions.iter().map(|r| r.status.as_str()).collect();
        assert_eq!(status, vec!["kept", "no_reserved_questions"]);
        assert!(out.decisions[0].decision.forward);
    }

    #[test]
    fn original_outside_dev_is_excluded() {
        let d = dev();
        // the dev context is the current side; the model fails only when the
        // prior side is treated as original, so the original is not a dev context
        let cands = vec![cand(
            "Alpha, built in 1901 by Ada.",
            "Alpha was built in 1901 by Ada.",
            10,
        )];
        let pool = build_challenge_pool(&d, &cands);
        let m = model(
            "m",
            &[("q1-p0", "1901"), ("q2-p0", "Ada")],
            &[("q1-p0", "x"), ("q2-p0", "Ada")],
        );
        let err = build_challenge_set(&pool, &d, &[m.clone()], &RobustnessRule::default(), 0)
            .unwrap_err();
        assert_eq!(err, ChallengeError::EmptyResult);

        let never_fails = model(
            "m",
            &[("q1-p0", "1901"), ("q2-p0", "Ada")],
            &[("q1-p0", "1901"), ("q2-p0", "Ada")],
        );
        assert_eq!(
            build_challenge_set(&pool, &d, &[never_fails], &RobustnessRule::default(), 0)
                .unwrap_err(),
            ChallengeError::EmptyResult
        );
        let missing = model("m", &[], &[]);
        assert!(matches!(
            build_challenge_set(&pool, &d, &[missing], &RobustnessRule::default(), 0),
            Err(ChallengeError::MissingPrediction { .. })
        ));
    }
}
