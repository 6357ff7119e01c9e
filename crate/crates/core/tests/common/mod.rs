//! Seeded generators for synthetic revision histories and dumps.
#![allow(dead_code)]

use natpert::harvest::RawRevision;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const WORDS: &[&str] = &[
    "river",
    "empire",
    "council",
    "harbor",
    "temple",
    "winter",
    "railway",
    "bridge",
    "treaty",
    "market",
    "garden",
    "village",
    "castle",
    "valley",
    "scholar",
    "merchant",
    "festival",
    "library",
    "province",
    "mountain",
    "republic",
    "century",
    "dynasty",
    "colony",
    "factory",
    "island",
    "cathedral",
    "museum",
    "governor",
    "senate",
    "army",
    "navy",
    "voyage",
    "canal",
    "fortress",
    "monastery",
    "parliament",
    "election",
    "revolution",
    "industry",
    "commerce",
    "science",
    "painting",
    "orchestra",
    "theatre",
    "novel",
    "poetry",
    "language",
    "religion",
    "tribe",
    "kingdom",
    "frontier",
    "desert",
    "forest",
    "lake",
    "coast",
    "plateau",
    "glacier",
    "volcano",
    "earthquake",
    "harvest",
    "famine",
    "plague",
    "migration",
    "settlement",
    "charter",
    "statute",
    "court",
    "bishop",
    "abbey",
    "university",
    "college",
    "student",
    "professor",
    "engineer",
    "architect",
    "composer",
    "painter",
    "poet",
    "general",
    "admiral",
    "king",
    "queen",
    "prince",
    "duke",
    "mayor",
    "minister",
    "president",
    "chancellor",
    "ambassador",
    "the",
    "of",
    "and",
    "in",
    "to",
    "was",
    "by",
    "for",
    "with",
    "from",
    "during",
    "after",
    "before",
    "near",
    "large",
    "small",
    "ancient",
    "modern",
    "northern",
    "southern",
    "eastern",
    "western",
    "famous",
    "early",
    "late",
    "new",
    "old",
    "major",
    "minor",
    "royal",
    "local",
    "national",
    "built",
    "founded",
    "destroyed",
    "restored",
    "expanded",
    "governed",
    "visited",
    "described",
    "recorded",
];

pub fn sentence(rng: &mut ChaCha8Rng, words: usize) -> String {
    let mut s: Vec<String> = (0..words)
        .map(|_| WORDS.choose(rng).unwrap().to_string())
        .collect();
    let first = &mut s[0];
    *first = first[..1].to_uppercase() + &first[1..];
    format!("{}.", s.join(" "))
}

/// A plain paragraph of roughly `words` words.
pub fn paragraph(rng: &mut ChaCha8Rng, words: usize) -> String {
    let mut out = Vec::new();
    let mut left = words;
    while left > 0 {
        let n = rng.gen_range(8..16).min(left).max(1);
        out.push(sentence(rng, n));
        left -= n;
    }
    out.join(" ")
}

/// Replaces a few words in one sentence of `p`.
pub fn reword(rng: &mut ChaCha8Rng, p: &str) -> String {
    let mut words: Vec<String> = p.split(' ').map(String::from).collect();
    for _ in 0..rng.gen_range(1..4) {
        let i = rng.gen_range(0..words.len());
        let tail = if words[i].ends_with('.') { "." } else { "" };
        words[i] = format!("{}{tail}", WORDS.choose(rng).unwrap());
    }
    words.join(" ")
}

/// Renders plain paragraphs as wikitext: headings, links, references and
/// templates that the cleaner has to strip back out.
pub fn render(title: &str, paragraphs: &[String], rev: usize) -> String {
    let mut out = format!("{{{{Infobox place|name={title}|rev={rev}}}}}\n");
    for (i, p) in paragraphs.iter().enumerate() {
        if i % 2 == 0 {
            out.push_str(&format!("\n== Section {} ==\n\n", i / 2 + 1));
        }
        let mut words: Vec<String> = p.split(' ').map(String::from).collect();
        for (j, w) in words.iter_mut().enumerate() {
            if (j + i) % 11 == 3 && w.chars().all(char::is_alphabetic) {
                *w = format!("[[{w}]]");
            } else if (j + i) % 17 == 5 && w.chars().all(char::is_alphabetic) {
                *w = format!("[[{} (disambiguation)|{w}]]", w.to_uppercase());
            }
        }
        out.push_str(&words.join(" "));
        out.push_str(&format!(
            "<ref>{{{{cite web|url=https://example.org/{i}|title=Source {i}}}}}</ref>\n\n"
        ));
    }
    out.push_str("[[Category:Generated]]\n");
    out
}

/// A page history of `revisions` revisions. Each revision rewords one
/// paragraph, adds one, or removes one.
pub fn history(
    title: &str,
    revisions: usize,
    paragraphs: usize,
    words: usize,
    seed: u64,
) -> Vec<RawRevision> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut paras: Vec<String> = (0..paragraphs)
        .map(|_| paragraph(&mut rng, words))
        .collect();
    let mut out = Vec::new();
    for r in 0..revisions {
        if r > 0 {
            match rng.gen_range(0..10) {
                0 => paras.insert(rng.gen_range(0..=paras.len()), paragraph(&mut rng, words)),
                1 if paras.len() > 2 => {
                    paras.remove(rng.gen_range(0..paras.len()));
                }
                _ => {
                    let i = rng.gen_range(0..paras.len());
                    paras[i] = reword(&mut rng, &paras[i]);
                }
            }
        }
        let rev_id = seed * 100_000 + r as u64 + 1;
        out.push(RawRevision {
            page_title: title.to_string(),
            rev_id,
            parent_id: (r > 0).then(|| rev_id - 1),
            timestamp: format!(
                "2020-01-{:02}T{:02}:{:02}:00Z",
                1 + r / 1440 % 28,
                r / 60 % 24,
                r % 60
            ),
            wikitext: render(title, &paras, r),
        });
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// A pages-meta-history XML document holding the given pages.
pub fn dump_xml(pages: &[Vec<RawRevision>]) -> String {
    let mut out = String::from(
        "<mediawiki xmlns=\"http://www.mediawiki.org/xml/export-0.11/\" version=\"0.11\" xml:lang=\"en\">\n  <siteinfo>\n    <sitename>Wikipedia</sitename>\n  </siteinfo>\n",
    );
    for (n, revs) in pages.iter().enumerate() {
        let title = &revs[0].page_title;
        out.push_str(&format!(
            "  <page>\n    <title>{}</title>\n    <ns>0</ns>\n    <id>{}</id>\n",
            escape(title),
            n + 1
        ));
        for r in revs {
            out.push_str(&format!("    <revision>\n      <id>{}</id>\n", r.rev_id));
            if let Some(p) = r.parent_id {
                out.push_str(&format!("      <parentid>{p}</parentid>\n"));
            }
            out.push_str(&format!(
                "      <timestamp>{}</timestamp>\n      <contributor><username>Editor</username><id>7</id></contributor>\n      <model>wikitext</model>\n      <format>text/x-wiki</format>\n      <text bytes=\"{}\" xml:space=\"preserve\">{}</text>\n    </revision>\n",
                r.timestamp,
                r.wikitext.len(),
                escape(&r.wikitext)
            ));
        }
        out.push_str("  </page>\n");
    }
    out.push_str("</mediawiki>\n");
    out
}

/// Every regular file under `dir` with its content, sorted by path.
pub fn tree(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    fn walk(base: &std::path::Path, dir: &std::path::Path, out: &mut Vec<(String, Vec<u8>)>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                out.push((
                    p.strip_prefix(base).unwrap().display().to_string(),
                    std::fs::read(&p).unwrap(),
                ));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
