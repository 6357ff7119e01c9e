//! Paragraph-level alignment of adjacent revisions and candidate pair
//! extraction.
//!
//! Identical paragraphs pair first. The remaining paragraphs are matched
//! greedily by descending word-level LCS similarity; matches at or above the
//! configured threshold become modifications, everything else is an
//! addition (current side) or a deletion (previous side). Only
//! modifications whose both sides are long enough yield candidate pairs,
//! with the previous-revision paragraph as the original.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::harvest::{adjacent_pairs, HarvestError, PageRef, RevisionCache};
use crate::wikitext::{clean_revision, CleanDocument};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EditPattern {
    Addition,
    Deletion,
    Modification,
}

/// How one aligned unit relates its two sides. `Identical` units carry no
/// edit pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UnitKind {
    Identical,
    Edit(EditPattern),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedUnit {
    pub prev_paragraph: Option<String>,
    pub curr_paragraph: Option<String>,
    pub kind: UnitKind,
    pub similarity: f64,
}

impl AlignedUnit {
    pub fn pattern(&self) -> Option<EditPattern> {
        match self.kind {
            UnitKind::Identical => None,
            UnitKind::Edit(p) => Some(p),
        }
    }
}

/// An (original, perturbed) paragraph pair mined from adjacent revisions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CandidatePair {
    pub page_title: String,
    pub prev_rev_id: u64,
    pub curr_rev_id: u64,
    pub original: String,
    pub perturbed: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Both sides of a candidate must be strictly longer than this, in characters.
    pub min_paragraph_chars: usize,
    pub alignment_similarity_threshold: f64,
    pub rng_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            min_paragraph_chars: 500,
            alignment_similarity_threshold: 0.5,
            rng_seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.min_paragraph_chars < 1 {
            return Err("min_paragraph_chars must be at least 1".into());
        }
        let t = self.alignment_similarity_threshold;
        if !(t > 0.0 && t <= 1.0) {
            return Err(format!("alignment_similarity_threshold {t} outside (0, 1]"));
        }
        Ok(())
    }
}

/// Maps words to dense ids so LCS compares integers.
#[derive(Default)]
struct Vocab<'a> {
    ids: HashMap<&'a str, u32>,
}

impl<'a> Vocab<'a> {
    fn encode(&mut self, text: &'a str) -> Vec<u32> {
        text.split_whitespace()
            .map(|w| {
                let next = self.ids.len() as u32;
                *self.ids.entry(w).or_insert(next)
            })
            .collect()
    }
}

fn lcs_len(a: &[u32], b: &[u32]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut row = vec![0u32; short.len() + 1];
    for &x in long {
        let mut diag = 0u32;
        for (j, &y) in short.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[short.len()] as usize
}

fn token_similarity(a: &[u32], b: &[u32]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    2.0 * lcs_len(a, b) as f64 / (a.len() + b.len()) as f64
}

/// `2·LCS(a, b) / (|a| + |b|)` over whitespace-separated words.
pub fn similarity(a: &str, b: &str) -> f64 {
    let mut vocab = Vocab::default();
    let ta = vocab.encode(a);
    let tb = vocab.encode(b);
    token_similarity(&ta, &tb)
}

/// Aligns the paragraphs of two revisions. Every paragraph of either
/// document lands in exactly one unit. Units are ordered by position in
/// `curr`, with deletions appended in `prev` order.
pub fn align_paragraphs(
    prev: &CleanDocument,
    curr: &CleanDocument,
    cfg: &PipelineConfig,
) -> Vec<AlignedUnit> {
    let p = &prev.paragraphs;
    let c = &curr.paragraphs;
    let mut prev_match: Vec<Option<usize>> = vec![None; p.len()];
    let mut curr_match: Vec<Option<(usize, f64, bool)>> = vec![None; c.len()];

    // Identical paragraphs, first come first served.
    let mut by_text: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, text) in p.iter().enumerate().rev() {
        by_text.entry(text.as_str()).or_default().push(i);
    }
    for (j, text) in c.iter().enumerate() {
        if let Some(i) = by_text.get_mut(text.as_str()).and_then(Vec::pop) {
            prev_match[i] = Some(j);
            curr_match[j] = Some((i, 1.0, true));
        }
    }

    let open_prev: Vec<usize> = (0..p.len()).filter(|&i| prev_match[i].is_none()).collect();
    let open_curr: Vec<usize> = (0..c.len()).filter(|&j| curr_match[j].is_none()).collect();
    if !open_prev.is_empty() && !open_curr.is_empty() {
        let mut vocab = Vocab::default();
        let prev_tokens: Vec<Vec<u32>> = open_prev.iter().map(|&i| vocab.encode(&p[i])).collect();
        let curr_tokens: Vec<Vec<u32>> = open_curr.iter().map(|&j| vocab.encode(&c[j])).collect();
        let threshold = cfg.alignment_similarity_threshold;
        let mut scored = Vec::new();
        for (a, ta) in prev_tokens.iter().enumerate() {
            for (b, tb) in curr_tokens.iter().enumerate() {
                let total = ta.len() + tb.len();
                // LCS is bounded by the shorter side.
                if total > 0 && 2.0 * ta.len().min(tb.len()) as f64 / (total as f64) < threshold {
                    continue;
                }
                let s = token_similarity(ta, tb);
                if s >= threshold {
                    scored.push((s, open_prev[a], open_curr[b]));
                }
            }
        }
        scored.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        for (s, i, j) in scored {
            if prev_match[i].is_none() && curr_match[j].is_none() {
                prev_match[i] = Some(j);
                curr_match[j] = Some((i, s, false));
            }
        }
    }

    let mut units = Vec::with_capacity(p.len().max(c.len()));
    for (j, m) in curr_match.iter().enumerate() {
        units.push(match *m {
            Some((i, _, true)) => AlignedUnit {
                prev_paragraph: Some(p[i].clone()),
                curr_paragraph: Some(c[j].clone()),
                kind: UnitKind::Identical,
                similarity: 1.0,
            },
            Some((i, s, false)) => AlignedUnit {
                prev_paragraph: Some(p[i].clone()),
                curr_paragraph: Some(c[j].clone()),
                kind: UnitKind::Edit(EditPattern::Modification),
                similarity: s,
            },
            None => AlignedUnit {
                prev_paragraph: None,
                curr_paragraph: Some(c[j].clone()),
                kind: UnitKind::Edit(EditPattern::Addition),
                similarity: 0.0,
            },
        });
    }
    for (i, m) in prev_match.iter().enumerate() {
        if m.is_none() {
            units.push(AlignedUnit {
                prev_paragraph: Some(p[i].clone()),
                curr_paragraph: None,
                kind: UnitKind::Edit(EditPattern::Deletion),
                similarity: 0.0,
            });
        }
    }
    units
}

/// Identifies the page and revisions an alignment came from.
#[derive(Debug, Clone, Copy)]
pub struct RevisionMeta<'a> {
    pub page_title: &'a str,
    pub prev_rev_id: u64,
    pub curr_rev_id: u64,
}

pub fn extract_candidates(
    units: &[AlignedUnit],
    meta: RevisionMeta<'_>,
    cfg: &PipelineConfig,
) -> Vec<CandidatePair> {
    let long_enough = |s: &str| s.chars().count() > cfg.min_paragraph_chars;
    units
        .iter()
        .filter(|u| u.kind == UnitKind::Edit(EditPattern::Modification))
        .filter_map(|u| {
            let original = u.prev_paragraph.as_ref()?;
            let perturbed = u.curr_paragraph.as_ref()?;
            (original != perturbed && long_enough(original) && long_enough(perturbed)).then(|| {
                CandidatePair {
                    page_title: meta.page_title.to_string(),
                    prev_rev_id: meta.prev_rev_id,
                    curr_rev_id: meta.curr_rev_id,
                    original: original.clone(),
                    perturbed: perturbed.clone(),
                }
            })
        })
        .collect()
}

/// Candidate pairs over every adjacent revision pair of a cached page, in
/// chronological order, de-duplicated on the (original, perturbed) texts.
pub fn mine_page(
    page: &PageRef,
    cache: &RevisionCache,
    cfg: &PipelineConfig,
) -> Result<Vec<CandidatePair>, HarvestError> {
    let pairs = adjacent_pairs(page, cache)?;
    let mut out = Vec::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    let mut prev_clean: Option<(u64, CleanDocument)> = None;
    for (prev, curr) in &pairs {
        let prev_doc = match prev_clean.take() {
            Some((id, doc)) if id == prev.rev_id => doc,
            _ => clean_revision(prev),
        };
        let curr_doc = clean_revision(curr);
        let units = align_paragraphs(&prev_doc, &curr_doc, cfg);
        let meta = RevisionMeta {
            page_title: &page.title,
            prev_rev_id: prev.rev_id,
            curr_rev_id: curr.rev_id,
        };
        for cand in extract_candidates(&units, meta, cfg) {
            if seen.insert((cand.original.clone(), cand.perturbed.clone())) {
                out.push(cand);
            }
        }
        prev_clean = Some((curr.rev_id, curr_doc));
    }
    Ok(out)
}
