//! Synthetic character- and word-level perturbations of MRC contexts.
//!
//! Every method picks `ceil(rate * U)` of its `U` eligible units uniformly
//! without replacement and transforms each one. Character methods count
//! characters, except the two swap methods, which count words with a
//! swappable pair. Word methods count words.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    char_find, normalize_whitespace, offset_matches, Answer, Article, MrcDataset, Paragraph, QaItem,
};
use crate::seed;
use crate::sentence::sentence_spans;

const SAMPLE_RESOURCE: &str = include_str!("../data/sample_resource.jsonl");

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("{0:?} needs a substitution resource")]
    MissingResource(PerturbMethod),
    #[error("input text is empty")]
    EmptyInput,
    #[error("rate {0} outside [0, 1]")]
    InvalidRate(f64),
    #[error("malformed resource: {0}")]
    MalformedResource(String),
    #[error("no question survived perturbation")]
    EmptyResult,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PerturbMethod {
    CharOCR,
    CharInsert,
    CharSubstitute,
    CharSwapMid,
    CharSwapRand,
    WInsertCWE,
    WSubstituteCWE,
    WSplit,
    WSwap,
    WDelete,
    WCrop,
    WSynSub,
    WInsertWE,
}

impl PerturbMethod {
    pub const ALL: [PerturbMethod; 13] = [
        Self::CharOCR,
        Self::CharInsert,
        Self::CharSubstitute,
        Self::CharSwapMid,
        Self::CharSwapRand,
        Self::WInsertCWE,
        Self::WSubstituteCWE,
        Self::WSplit,
        Self::WSwap,
        Self::WDelete,
        Self::WCrop,
        Self::WSynSub,
        Self::WInsertWE,
    ];

    pub fn needs_resource(self) -> bool {
        matches!(
            self,
            Self::WInsertCWE | Self::WSubstituteCWE | Self::WSynSub | Self::WInsertWE
        )
    }

    pub fn default_scope(self) -> Scope {
        match self {
            Self::WSplit | Self::WSynSub | Self::WInsertWE => Scope::SentenceWise,
            _ => Scope::Paragraph,
        }
    }

    /// Lowercase tag used in qid suffixes and seed keys.
    pub fn tag(self) -> String {
        format!("{self:?}").to_lowercase()
    }
}

impl std::str::FromStr for PerturbMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let key: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .collect::<String>()
            .to_lowercase();
        Self::ALL
            .into_iter()
            .find(|m| m.tag() == key)
            .ok_or_else(|| format!("unknown perturbation method {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scope {
    Paragraph,
    SentenceWise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbSpec {
    pub method: PerturbMethod,
    pub rate: f64,
    pub seed: u64,
    pub scope: Scope,
}

impl PerturbSpec {
    pub fn new(method: PerturbMethod, seed: u64) -> Self {
        Self {
            method,
            rate: 0.3,
            seed,
            scope: method.default_scope(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResourceKind {
    Synonym,
    Embedding,
    Contextual,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubstitutionResource {
    pub entries: BTreeMap<String, Vec<String>>,
    pub kind: ResourceKind,
}

#[derive(Deserialize)]
struct ResourceLine {
    token: String,
    candidates: Vec<String>,
    kind: ResourceKind,
}

impl SubstitutionResource {
    pub fn parse(text: &str) -> Result<Self, SynthError> {
        let mut entries: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut kind = None;
        for (n, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let bad = |msg: String| SynthError::MalformedResource(format!("line {}: {msg}", n + 1));
            let rec: ResourceLine = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
            match kind {
                None => kind = Some(rec.kind),
                Some(k) if k != rec.kind => return Err(bad("mixed resource kinds".into())),
                _ => {}
            }
            let token = rec.token.trim().to_lowercase();
            if token.is_empty() || token.contains(char::is_whitespace) {
                return Err(bad(format!("bad token {:?}", rec.token)));
            }
            let list = entries.entry(token.clone()).or_default();
            for c in rec.candidates {
                let c = c.trim().to_lowercase();
                if !c.is_empty() && c != token && !list.contains(&c) {
                    list.push(c);
                }
            }
            if list.is_empty() {
                return Err(bad(format!("no usable candidates for {token:?}")));
            }
        }
        match kind {
            Some(kind) => Ok(Self { entries, kind }),
            None => Err(SynthError::MalformedResource("no entries".into())),
        }
    }

    pub fn load(path: &Path) -> Result<Self, SynthError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// The bundled 100-entry synonym sample.
    pub fn sample() -> Self {
        Self::parse(SAMPLE_RESOURCE).expect("bundled resource")
    }

    fn get(&self, word: &str) -> Option<&[String]> {
        self.entries.get(&word.to_lowercase()).map(Vec::as_slice)
    }
}

pub fn load_resource(path: &Path) -> Result<SubstitutionResource, SynthError> {
    SubstitutionResource::load(path)
}

/// Character confusions for the OCR method.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OcrMap {
    map: BTreeMap<char, Vec<char>>,
}

impl Default for OcrMap {
    fn default() -> Self {
        let pairs = [
            ('o', '0'),
            ('l', '1'),
            ('e', '3'),
            ('a', '@'),
            ('s', '5'),
            ('i', '1'),
            ('b', '6'),
            ('g', '9'),
            ('z', '2'),
        ];
        let mut map: BTreeMap<char, Vec<char>> = BTreeMap::new();
        for (x, y) in pairs {
            map.entry(x).or_default().push(y);
            map.entry(y).or_default().push(x);
        }
        Self { map }
    }
}

impl OcrMap {
    /// A JSON object from single characters to lists of single characters.
    pub fn load(path: &Path) -> Result<Self, SynthError> {
        let raw: BTreeMap<String, Vec<String>> =
            serde_json::from_str(&std::fs::read_to_string(path)?)
                .map_err(|e| SynthError::MalformedResource(e.to_string()))?;
        let single = |s: &str| {
            let mut it = s.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => Ok(c),
                _ => Err(SynthError::MalformedResource(format!(
                    "OCR map entry {s:?} is not one character"
                ))),
            }
        };
        let mut map = BTreeMap::new();
        for (k, vs) in raw {
            let k = single(&k)?;
            let vs = vs
                .iter()
                .map(|v| single(v))
                .collect::<Result<Vec<_>, _>>()?;
            let vs: Vec<char> = vs.into_iter().filter(|&v| v != k).collect();
            if !vs.is_empty() {
                map.insert(k, vs);
            }
        }
        if map.is_empty() {
            return Err(SynthError::MalformedResource("OCR map is empty".into()));
        }
        Ok(Self { map })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbReport {
    pub units_total: usize,
    pub units_perturbed: usize,
}

impl std::ops::AddAssign for PerturbReport {
    fn add_assign(&mut self, o: Self) {
        self.units_total += o.units_total;
        self.units_perturbed += o.units_perturbed;
    }
}

/// `ceil(rate * units)`, tolerant of float error in the product.
pub fn units_to_perturb(rate: f64, units: usize) -> usize {
    (((rate * units as f64) - 1e-9).ceil().max(0.0) as usize).min(units)
}

fn choose(rng: &mut ChaCha8Rng, eligible: usize, rate: f64) -> Vec<usize> {
    let k = units_to_perturb(rate, eligible);
    let mut idx = sample(rng, eligible, k).into_vec();
    idx.sort_unstable();
    idx
}

/// Text split into words and the whitespace around them:
/// `gaps[0] words[0] gaps[1] ... words[n-1] gaps[n]`.
struct Words {
    words: Vec<String>,
    gaps: Vec<String>,
}

impl Words {
    fn split(text: &str) -> Self {
        let mut words = Vec::new();
        let mut gaps = Vec::new();
        let mut cur = String::new();
        let mut in_word = false;
        for c in text.chars() {
            if c.is_whitespace() == in_word {
                if in_word { &mut words } else { &mut gaps }.push(std::mem::take(&mut cur));
                in_word = !in_word;
            }
            cur.push(c);
        }
        if in_word {
            words.push(cur);
            gaps.push(String::new());
        } else {
            gaps.push(cur);
        }
        Self { words, gaps }
    }

    fn join(&self) -> String {
        let mut out = self.gaps[0].clone();
        for (w, g) in self.words.iter().zip(&self.gaps[1..]) {
            out.push_str(w);
            out.push_str(g);
        }
        out
    }

    /// Keeps the words for which `keep` is true. Each kept word brings the
    /// gap before it, except that the first kept word takes the leading gap.
    fn retain(&mut self, keep: &[bool]) {
        let n = self.words.len();
        let kept: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
        let mut gaps = vec![self.gaps[0].clone()];
        if !kept.is_empty() {
            gaps.extend(kept[1..].iter().map(|&i| self.gaps[i].clone()));
            gaps.push(self.gaps[n].clone());
        }
        self.words = kept
            .iter()
            .map(|&i| std::mem::take(&mut self.words[i]))
            .collect();
        self.gaps = gaps;
    }

    /// Inserts `extra[i]` (when present) as a new word after word `i`.
    fn insert_after(&mut self, extra: BTreeMap<usize, String>) {
        let mut words = Vec::new();
        let mut gaps = vec![self.gaps[0].clone()];
        for (i, w) in std::mem::take(&mut self.words).into_iter().enumerate() {
            words.push(w);
            if let Some(x) = extra.get(&i) {
                gaps.push(" ".into());
                words.push(x.clone());
            }
            gaps.push(self.gaps[i + 1].clone());
        }
        self.words = words;
        self.gaps = gaps;
    }
}

/// Splits a word into leading punctuation, core, trailing punctuation.
fn word_core(w: &str) -> (&str, &str, &str) {
    let start = w.find(char::is_alphanumeric).unwrap_or(w.len());
    let end = w
        .rfind(char::is_alphanumeric)
        .map_or(start, |i| i + w[i..].chars().next().unwrap().len_utf8());
    (&w[..start], &w[start..end.max(start)], &w[end.max(start)..])
}

fn match_case(template: &str, word: &str) -> String {
    if template.chars().next().is_some_and(char::is_uppercase) {
        let mut c = word.chars();
        c.next()
            .map(|f| f.to_uppercase().chain(c).collect())
            .unwrap_or_default()
    } else {
        word.to_string()
    }
}

fn random_letter(rng: &mut ChaCha8Rng, not: Option<char>) -> char {
    loop {
        let c = (b'a' + rng.gen_range(0..26)) as char;
        if Some(c) != not.map(|n| n.to_ascii_lowercase()) {
            return c;
        }
    }
}

/// Adjacent pairs `(i, i+1)` in `chars[lo..hi]` holding different characters.
fn swappable_pairs(chars: &[char], lo: usize, hi: usize) -> Vec<usize> {
    (lo..hi.saturating_sub(1))
        .filter(|&i| chars[i] != chars[i + 1])
        .collect()
}

fn swap_range(word: &str, mid_only: bool) -> Option<(usize, usize)> {
    let n = word.chars().count();
    if mid_only {
        (n >= 4).then_some((1, n - 1))
    } else {
        (n >= 2).then_some((0, n))
    }
}

fn perturb_chars(
    text: &str,
    spec: &PerturbSpec,
    ocr: &OcrMap,
    rng: &mut ChaCha8Rng,
) -> (String, PerturbReport) {
    let mut chars: Vec<char> = text.chars().collect();
    let eligible: Vec<usize> = match spec.method {
        PerturbMethod::CharOCR => (0..chars.len())
            .filter(|&i| ocr.map.contains_key(&chars[i]))
            .collect(),
        _ => (0..chars.len())
            .filter(|&i| chars[i].is_alphanumeric())
            .collect(),
    };
    let picked = choose(rng, eligible.len(), spec.rate);
    let report = PerturbReport {
        units_total: eligible.len(),
        units_perturbed: picked.len(),
    };
    let mut inserts: BTreeMap<usize, char> = BTreeMap::new();
    for &p in &picked {
        let i = eligible[p];
        let c = chars[i];
        match spec.method {
            PerturbMethod::CharOCR => chars[i] = *ocr.map[&c].choose(rng).unwrap(),
            PerturbMethod::CharInsert => {
                inserts.insert(i, random_letter(rng, None));
            }
            PerturbMethod::CharSubstitute => {
                chars[i] = if c.is_ascii_digit() {
                    loop {
                        let d = (b'0' + rng.gen_range(0..10)) as char;
                        if d != c {
                            break d;
                        }
                    }
                } else {
                    let r = random_letter(rng, Some(c));
                    if c.is_uppercase() {
                        r.to_ascii_uppercase()
                    } else {
                        r
                    }
                };
            }
            _ => unreachable!("not a per-character method"),
        }
    }
    let mut out = String::with_capacity(text.len() + inserts.len());
    for (i, c) in chars.into_iter().enumerate() {
        out.push(c);
        if let Some(&x) = inserts.get(&i) {
            out.push(x);
        }
    }
    (out, report)
}

fn perturb_words(
    text: &str,
    spec: &PerturbSpec,
    resource: Option<&SubstitutionResource>,
    rng: &mut ChaCha8Rng,
) -> (String, PerturbReport) {
    use PerturbMethod::*;
    let mut w = Words::split(text);
    let n = w.words.len();
    let eligible: Vec<usize> = match spec.method {
        CharSwapMid | CharSwapRand => (0..n)
            .filter(|&i| {
                let chars: Vec<char> = w.words[i].chars().collect();
                swap_range(&w.words[i], spec.method == CharSwapMid)
                    .is_some_and(|(lo, hi)| !swappable_pairs(&chars, lo, hi).is_empty())
            })
            .collect(),
        WSplit => (0..n)
            .filter(|&i| w.words[i].chars().count() >= 2)
            .collect(),
        WSwap => {
            if n >= 2 {
                (0..n).collect()
            } else {
                Vec::new()
            }
        }
        WDelete | WCrop => (0..n).collect(),
        WInsertCWE | WSubstituteCWE | WSynSub | WInsertWE => {
            let res = resource.expect("checked by caller");
            (0..n)
                .filter(|&i| res.get(word_core(&w.words[i]).1).is_some())
                .collect()
        }
        _ => unreachable!("not a word-unit method"),
    };
    let report = |k| PerturbReport {
        units_total: eligible.len(),
        units_perturbed: k,
    };

    if spec.method == WCrop {
        let k = units_to_perturb(spec.rate, n);
        if k == 0 {
            return (text.to_string(), report(0));
        }
        let start = rng.gen_range(0..=n - k);
        let keep: Vec<bool> = (0..n).map(|i| i < start || i >= start + k).collect();
        w.retain(&keep);
        return (w.join(), report(k));
    }

    let picked: Vec<usize> = choose(rng, eligible.len(), spec.rate)
        .into_iter()
        .map(|p| eligible[p])
        .collect();
    match spec.method {
        CharSwapMid | CharSwapRand => {
            for &i in &picked {
                let mut chars: Vec<char> = w.words[i].chars().collect();
                let (lo, hi) = swap_range(&w.words[i], spec.method == CharSwapMid).unwrap();
                let pairs = swappable_pairs(&chars, lo, hi);
                let j = *pairs.choose(rng).unwrap();
                chars.swap(j, j + 1);
                w.words[i] = chars.into_iter().collect();
            }
        }
        WSplit => {
            for &i in &picked {
                let chars: Vec<char> = w.words[i].chars().collect();
                let at = rng.gen_range(1..chars.len());
                let left: String = chars[..at].iter().collect();
                let right: String = chars[at..].iter().collect();
                w.words[i] = format!("{left} {right}");
            }
        }
        WSwap => {
            for &i in &picked {
                let j = if i + 1 < n { i + 1 } else { i - 1 };
                w.words.swap(i, j);
            }
        }
        WDelete => {
            let mut keep = vec![true; n];
            for &i in &picked {
                keep[i] = false;
            }
            w.retain(&keep);
        }
        WSubstituteCWE | WSynSub => {
            let res = resource.unwrap();
            for &i in &picked {
                let (pre, core, post) = word_core(&w.words[i]);
                let cand = res.get(core).unwrap().choose(rng).unwrap();
                w.words[i] = format!("{pre}{}{post}", match_case(core, cand));
            }
        }
        WInsertCWE | WInsertWE => {
            let res = resource.unwrap();
            let extra = picked
                .iter()
                .map(|&i| {
                    (
                        i,
                        res.get(word_core(&w.words[i]).1)
                            .unwrap()
                            .choose(rng)
                            .unwrap()
                            .clone(),
                    )
                })
                .collect();
            w.insert_after(extra);
        }
        _ => unreachable!(),
    }
    (w.join(), report(picked.len()))
}

fn perturb_unit(
    text: &str,
    spec: &PerturbSpec,
    resource: Option<&SubstitutionResource>,
    ocr: &OcrMap,
    rng: &mut ChaCha8Rng,
) -> (String, PerturbReport) {
    match spec.method {
        PerturbMethod::CharOCR | PerturbMethod::CharInsert | PerturbMethod::CharSubstitute => {
            perturb_chars(text, spec, ocr, rng)
        }
        _ => perturb_words(text, spec, resource, rng),
    }
}

/// Perturbs `text` and reports how many units were eligible and changed.
pub fn perturb_with_report(
    text: &str,
    spec: &PerturbSpec,
    resource: Option<&SubstitutionResource>,
    ocr: &OcrMap,
) -> Result<(String, PerturbReport), SynthError> {
    if !(0.0..=1.0).contains(&spec.rate) {
        return Err(SynthError::InvalidRate(spec.rate));
    }
    if spec.method.needs_resource() && resource.is_none() {
        return Err(SynthError::MissingResource(spec.method));
    }
    if text.trim().is_empty() {
        return Err(SynthError::EmptyInput);
    }
    let tag = spec.method.tag();
    if spec.scope == Scope::Paragraph {
        let mut rng = seed::stream(spec.seed, &[b"synth", tag.as_bytes()]);
        return Ok(perturb_unit(text, spec, resource, ocr, &mut rng));
    }
    let mut out = String::with_capacity(text.len());
    let mut report = PerturbReport::default();
    let mut last = 0;
    for (n, span) in sentence_spans(text).into_iter().enumerate() {
        out.push_str(&text[last..span.start]);
        let mut rng = seed::stream(
            spec.seed,
            &[b"synth", tag.as_bytes(), &(n as u64).to_le_bytes()],
        );
        let (s, r) = perturb_unit(&text[span.clone()], spec, resource, ocr, &mut rng);
        out.push_str(&s);
        report += r;
        last = span.end;
    }
    out.push_str(&text[last..]);
    Ok((out, report))
}

pub fn perturb(
    text: &str,
    spec: &PerturbSpec,
    resource: Option<&SubstitutionResource>,
) -> Result<String, SynthError> {
    perturb_with_report(text, spec, resource, &OcrMap::default()).map(|(s, _)| s)
}

fn keep_or_relocate(answers: &[Answer], text: &str) -> Option<Vec<Answer>> {
    answers
        .iter()
        .map(|a| {
            if a.answer_start.is_some() && offset_matches(text, a) {
                Some(a.clone())
            } else {
                char_find(text, &a.text).map(|s| Answer::new(a.text.clone(), Some(s)))
            }
        })
        .collect()
}

/// Perturbs every context with a seed derived from the run seed and the
/// context, drops questions whose reference answers no longer occur, and
/// suffixes qids with the method tag.
pub fn perturb_dataset(
    dataset: &MrcDataset,
    spec: &PerturbSpec,
    resource: Option<&SubstitutionResource>,
    ocr: &OcrMap,
) -> Result<MrcDataset, SynthError> {
    let suffix = format!("-{}", spec.method.tag());
    let articles: Vec<Article> = dataset
        .articles
        .par_iter()
        .map(|a| -> Result<Option<Article>, SynthError> {
            let mut paragraphs = Vec::new();
            for p in &a.paragraphs {
                let key = normalize_whitespace(&p.context);
                let local = PerturbSpec {
                    seed: seed::derive(spec.seed, &[b"context", key.as_bytes()]),
                    ..*spec
                };
                let (text, _) = perturb_with_report(&p.context, &local, resource, ocr)?;
                let qas: Vec<QaItem> = p
                    .qas
                    .iter()
                    .filter_map(|q| {
                        Some(QaItem {
                            qid: format!("{}{suffix}", q.qid),
                            answers: keep_or_relocate(&q.answers, &text)?,
                            plausible_answers: keep_or_relocate(&q.plausible_answers, &text)?,
                            ..q.clone()
                        })
                    })
                    .collect();
                if !qas.is_empty() {
                    paragraphs.push(Paragraph {
                        context: text,
                        qas,
                        extra: p.extra.clone(),
                    });
                }
            }
            Ok((!paragraphs.is_empty()).then(|| Article {
                title: a.title.clone(),
                paragraphs,
                extra: a.extra.clone(),
            }))
        })
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect();
    if articles.is_empty() {
        return Err(SynthError::EmptyResult);
    }
    Ok(MrcDataset {
        name: format!("{}_{}", dataset.name, spec.method.tag()),
        schema: dataset.schema,
        version: dataset.version.clone(),
        articles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Schema;

    fn spec(method: PerturbMethod, rate: f64) -> PerturbSpec {
        PerturbSpec {
            rate,
            ..PerturbSpec::new(method, 42)
        }
    }

    const TEXT: &str =
        "The quick brown fox jumps over the lazy dog. A good big house stood near the old road.";

    #[test]
    fn rate_zero_is_identity() {
        let res = SubstitutionResource::sample();
        for m in PerturbMethod::ALL {
            assert_eq!(
                perturb(TEXT, &spec(m, 0.0), Some(&res)).unwrap(),
                TEXT,
                "{m:?}"
            );
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(
            perturb(TEXT, &spec(PerturbMethod::WSynSub, 0.3), None),
            Err(SynthError::MissingResource(_))
        ));
        assert!(matches!(
            perturb("  ", &spec(PerturbMethod::WDelete, 0.3), None),
            Err(SynthError::EmptyInput)
        ));
        assert!(matches!(
            perturb(TEXT, &spec(PerturbMethod::WDelete, 1.5), None),
            Err(SynthError::InvalidRate(_))
        ));
    }

    #[test]
    fn swap_mid_on_four_letters() {
        // the only middle pair of "word" is (o, r)
        for s in 0..20 {
            let out = perturb(
                "word",
                &PerturbSpec {
                    rate: 1.0,
                    ..PerturbSpec::new(PerturbMethod::CharSwapMid, s)
                },
                None,
            )
            .unwrap();
            assert_eq!(out, "wrod");
        }
    }

    #[test]
    fn deterministic_and_changes_text() {
        let res = SubstitutionResource::sample();
        for m in PerturbMethod::ALL {
            let a = perturb(TEXT, &spec(m, 0.3), Some(&res)).unwrap();
            assert_eq!(a, perturb(TEXT, &spec(m, 0.3), Some(&res)).unwrap());
            if m != PerturbMethod::WSwap {
                assert_ne!(a, TEXT, "{m:?}");
            }
        }
    }

    #[test]
    fn word_counts_move_as_expected() {
        let words = |s: &str| s.split_whitespace().count();
        let n = words(TEXT);
        let k = units_to_perturb(0.3, n);
        assert_eq!(
            words(&perturb(TEXT, &spec(PerturbMethod::WDelete, 0.3), None).unwrap()),
            n - k
        );
        assert_eq!(
            words(&perturb(TEXT, &spec(PerturbMethod::WCrop, 0.3), None).unwrap()),
            n - k
        );
        let para = PerturbSpec {
            scope: Scope::Paragraph,
            ..spec(PerturbMethod::WSplit, 0.3)
        };
        assert_eq!(words(&perturb(TEXT, &para, None).unwrap()), n + k);
    }

    #[test]
    fn ceil_is_exact() {
        assert_eq!(units_to_perturb(0.3, 10), 3);
        assert_eq!(units_to_perturb(0.3, 1000), 300);
        assert_eq!(units_to_perturb(0.3, 11), 4);
        assert_eq!(units_to_perturb(0.0, 11), 0);
        assert_eq!(units_to_perturb(1.0, 7), 7);
    }

    #[test]
    fn resource_parsing() {
        assert!(matches!(
            SubstitutionResource::parse(""),
            Err(SynthError::MalformedResource(_))
        ));
        let dup = r#"{"token":"Big","candidates":["large"],"kind":"synonym"}
{"token":"big","candidates":["huge","large"],"kind":"synonym"}"#;
        let r = SubstitutionResource::parse(dup).unwrap();
        assert_eq!(r.entries["big"], vec!["large", "huge"]);
        let mixed = dup.replace("\"kind\":\"synonym\"}\n", "\"kind\":\"embedding\"}\n");
        assert!(SubstitutionResource::parse(&mixed).is_err());
        assert_eq!(SubstitutionResource::sample().entries.len(), 100);
    }

    #[test]
    fn dataset_filter() {
        let ctx = "Marie Curie won the Nobel Prize in 1903 and again in 1911 for chemistry work.";
        let qa = |id: &str, a: &str| {
            QaItem::answerable(id, "?", vec![Answer::new(a, char_find(ctx, a))])
        };
        let ds = MrcDataset {
            name: "d".into(),
            schema: Schema::SquadV1,
            version: "1.1".into(),
            articles: vec![Article {
                title: "T".into(),
                extra: Default::default(),
                paragraphs: vec![Paragraph {
                    context: ctx.into(),
                    qas: vec![qa("a", "1903"), qa("b", "Marie Curie")],
                    extra: Default::default(),
                }],
            }],
        };
        let same = perturb_dataset(
            &ds,
            &spec(PerturbMethod::CharSubstitute, 0.0),
            None,
            &OcrMap::default(),
        )
        .unwrap();
        assert_eq!(same.qids(), vec!["a-charsubstitute", "b-charsubstitute"]);
        assert_eq!(
            same.articles[0].paragraphs[0],
            Paragraph {
                qas: same.articles[0].paragraphs[0].qas.clone(),
                ..ds.articles[0].paragraphs[0].clone()
            }
        );
        let all = perturb_dataset(
            &ds,
            &spec(PerturbMethod::CharSubstitute, 1.0),
            None,
            &OcrMap::default(),
        );
        assert!(matches!(all, Err(SynthError::EmptyResult)));
        for m in PerturbMethod::ALL {
            if let Ok(out) = perturb_dataset(
                &ds,
                &spec(m, 0.3),
                Some(&SubstitutionResource::sample()),
                &OcrMap::default(),
            ) {
                out.validate().unwrap();
            }
        }
    }
}
