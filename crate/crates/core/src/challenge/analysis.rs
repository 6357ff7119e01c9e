use thiserror::Error;

use crate::dataset::char_find;
use crate::sentence::sentence_spans;
use crate::testset::PairedTestSet;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("inputs differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),
}

/// Levenshtein distance over the UTF-8 bytes of the two strings.
pub fn perturbation_magnitude(original: &str, perturbed: &str) -> usize {
    let (mut a, mut b) = (original.as_bytes(), perturbed.as_bytes());
    let prefix = a.iter().zip(b).take_while(|(x, y)| x == y).count();
    a = &a[prefix..];
    b = &b[prefix..];
    let suffix = a
        .iter()
        .rev()
        .zip(b.iter().rev())
        .take_while(|(x, y)| x == y)
        .count();
    a = &a[..a.len() - suffix];
    b = &b[..b.len() - suffix];
    if a.len() < b.len() {
        std::mem::swap(&mut a, &mut b);
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0; b.len() + 1];
    for (i, &x) in a.iter().enumerate() {
        curr[0] = i + 1;
        for (j, &y) in b.iter().enumerate() {
            let sub = prev[j] + (x != y) as usize;
            curr[j + 1] = sub.min(prev[j + 1] + 1).min(curr[j] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// Point-biserial correlation between a continuous variable and a binary
/// one, using the population standard deviation.
pub fn point_biserial(values: &[f64], flags: &[u8]) -> Result<f64, AnalysisError> {
    if values.len() != flags.len() {
        return Err(AnalysisError::LengthMismatch(values.len(), flags.len()));
    }
    let n = values.len() as f64;
    let (mut s1, mut n1, mut s0, mut n0) = (0.0, 0usize, 0.0, 0usize);
    for (&v, &f) in values.iter().zip(flags) {
        if f != 0 {
            s1 += v;
            n1 += 1;
        } else {
            s0 += v;
            n0 += 1;
        }
    }
    if n1 == 0 || n0 == 0 {
        return Err(AnalysisError::DegenerateInput("one group is empty"));
    }
    let mean = (s0 + s1) / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var <= 0.0 {
        return Err(AnalysisError::DegenerateInput("values have zero variance"));
    }
    let (m1, m0) = (s1 / n1 as f64, s0 / n0 as f64);
    let (p, q) = (n1 as f64 / n, n0 as f64 / n);
    Ok(((m1 - m0) / var.sqrt() * (p * q).sqrt()).clamp(-1.0, 1.0))
}

fn byte_offset(text: &str, char_offset: usize) -> Option<usize> {
    if char_offset == text.chars().count() {
        return Some(text.len());
    }
    text.char_indices().nth(char_offset).map(|(b, _)| b)
}

/// Percentage of answerable questions whose answer sentences (the original
/// sentences overlapping any gold span) all reappear verbatim in the
/// perturbed passage. `None` when the set has no answerable question with
/// a locatable answer.
pub fn answer_sentence_unmodified_rate(set: &PairedTestSet) -> Option<f64> {
    let mut total = 0usize;
    let mut unmodified = 0usize;
    let pert_contexts = set.perturbed.articles.iter().flat_map(|a| &a.paragraphs);
    for (orig, pert) in set
        .original
        .articles
        .iter()
        .flat_map(|a| &a.paragraphs)
        .zip(pert_contexts)
    {
        let spans = sentence_spans(&orig.context);
        for qa in orig.qas.iter().filter(|q| !q.is_impossible) {
            let mut answer_sentences = Vec::new();
            for ans in &qa.answers {
                let start = ans
                    .answer_start
                    .filter(|_| crate::dataset::offset_matches(&orig.context, ans))
                    .or_else(|| char_find(&orig.context, &ans.text));
                let Some(start) = start else { continue };
                let Some(b0) = byte_offset(&orig.context, start) else {
                    continue;
                };
                let b1 = b0 + ans.text.len();
                for s in spans
                    .iter()
                    .filter(|s| s.start < b1.max(b0 + 1) && b0 < s.end)
                {
                    if !answer_sentences.contains(s) {
                        answer_sentences.push(s.clone());
                    }
                }
            }
            if answer_sentences.is_empty() {
                continue;
            }
            total += 1;
            if answer_sentences
                .iter()
                .all(|s| pert.context.contains(&orig.context[s.clone()]))
            {
                unmodified += 1;
            }
        }
    }
    (total > 0).then(|| 100.0 * unmodified as f64 / total as f64)
}
