//! Wikitext to plain prose, and plain prose to paragraphs.
//!
//! The cleaner is a best-effort single-pass grammar over the constructs that
//! routinely appear in article bodies: internal and external links,
//! templates, tables, references, HTML comments and tags, category and file
//! links, bold/italic quote runs, headings and HTML entities. It is not a
//! renderer. A pass is repeated until the text stops changing, which makes
//! [`strip_markup`] idempotent and guarantees that none of the marker
//! strings in [`MARKUP_MARKERS`] survive.

use serde::{Deserialize, Serialize};

use crate::harvest::RawRevision;

/// Marker strings that never appear in cleaned output.
pub const MARKUP_MARKERS: [&str; 6] = ["[[", "]]", "{{", "}}", "'''", "=="];

/// Link namespaces whose links are dropped entirely instead of reduced to a label.
const DROPPED_LINK_NAMESPACES: [&str; 5] = ["category:", "file:", "image:", "media:", "wikipedia:"];

/// Tags whose whole element (content included) is removed.
const DROPPED_ELEMENTS: [&str; 8] = [
    "ref",
    "math",
    "gallery",
    "timeline",
    "score",
    "syntaxhighlight",
    "source",
    "imagemap",
];

const URL_SCHEMES: [&str; 6] = ["http://", "https://", "ftp://", "//", "mailto:", "irc://"];

/// A cleaned revision: ordered plain-text paragraphs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanDocument {
    pub page_title: String,
    pub rev_id: u64,
    pub paragraphs: Vec<String>,
}

/// Strips MediaWiki markup, leaving plain prose.
///
/// Headings keep their text on a line of its own, separated from the
/// surrounding text by blank lines.
pub fn strip_markup(wikitext: &str) -> String {
    let mut current = single_pass(wikitext);
    loop {
        let next = single_pass(&current);
        if next == current {
            return current;
        }
        current = next;
    }
}

/// Splits plain text on blank lines, trimming each segment and dropping
/// empty ones.
pub fn segment_paragraphs(plain_text: &str) -> Vec<String> {
    let mut paragraphs = Vec::new();
    let mut block: Vec<&str> = Vec::new();
    let mut flush = |block: &mut Vec<&str>| {
        if !block.is_empty() {
            let joined = block.join("\n");
            let trimmed = joined.trim();
            if !trimmed.is_empty() {
                paragraphs.push(trimmed.to_string());
            }
            block.clear();
        }
    };
    for line in plain_text.lines() {
        if line.trim().is_empty() {
            flush(&mut block);
        } else {
            block.push(line);
        }
    }
    flush(&mut block);
    paragraphs
}

pub fn clean_revision(rev: &RawRevision) -> CleanDocument {
    CleanDocument {
        page_title: rev.page_title.clone(),
        rev_id: rev.rev_id,
        paragraphs: segment_paragraphs(&strip_markup(&rev.wikitext)),
    }
}

fn single_pass(text: &str) -> String {
    let text = remove_comments(text);
    let text = remove_elements(&text);
    let text = remove_tables(&text);
    let text = remove_templates(&text);
    let text = replace_internal_links(&text);
    let text = replace_external_links(&text);
    let text = remove_tags(&text);
    let text = html_escape::decode_html_entities(&text).into_owned();
    let text = rewrite_lines(&text);
    let text = remove_stray_markers(&text);
    normalize_whitespace(&text)
}

/// Position of the end of the line containing `pos` (exclusive of the newline).
fn line_end(text: &str, pos: usize) -> usize {
    text[pos..].find('\n').map_or(text.len(), |i| pos + i)
}

fn remove_comments(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("<!--") {
        out.push_str(&rest[..start]);
        match rest[start + 4..].find("-->") {
            Some(end) => rest = &rest[start + 4 + end + 3..],
            None => {
                let stop = line_end(rest, start);
                rest = &rest[stop..];
            }
        }
    }
    out.push_str(rest);
    out
}

/// Case-insensitive ASCII search for `needle` in `hay` starting at `from`.
fn find_ci(hay: &str, needle: &str, from: usize) -> Option<usize> {
    let h = hay.as_bytes();
    let n = needle.as_bytes();
    if n.is_empty() || h.len() < n.len() {
        return None;
    }
    (from..=h.len() - n.len()).find(|&i| h[i..i + n.len()].eq_ignore_ascii_case(n))
}

/// Length of an opening tag `<name ...>` at `pos` when its name is `name`.
/// Returns the byte length of the tag and whether it self-closes.
fn opening_tag_at(text: &str, pos: usize, name: &str) -> Option<(usize, bool)> {
    let bytes = text.as_bytes();
    let after = pos + 1 + name.len();
    if bytes.get(pos) != Some(&b'<') || after > bytes.len() {
        return None;
    }
    if !bytes[pos + 1..after].eq_ignore_ascii_case(name.as_bytes()) {
        return None;
    }
    match bytes.get(after) {
        Some(b'>') | Some(b'/') | Some(b' ') | Some(b'\t') | Some(b'\n') => {}
        _ => return None,
    }
    let close = text[after..].find('>')? + after;
    if text[after..close].contains('<') {
        return None;
    }
    let self_closing = close > pos && bytes[close - 1] == b'/';
    Some((close + 1 - pos, self_closing))
}

fn remove_elements(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut i = 0;
    let mut copied = 0;
    while let Some(off) = text[i..].find('<') {
        let pos = i + off;
        let hit = DROPPED_ELEMENTS
            .iter()
            .find_map(|name| opening_tag_at(text, pos, name).map(|t| (*name, t)));
        match hit {
            Some((_, (len, true))) => {
                out.push_str(&text[copied..pos]);
                i = pos + len;
                copied = i;
            }
            Some((name, (len, false))) => {
                out.push_str(&text[copied..pos]);
                let closing = format!("</{name}");
                i = match find_ci(text, &closing, pos + len) {
                    Some(c) => text[c..].find('>').map_or(text.len(), |e| c + e + 1),
                    None => line_end(text, pos),
                };
                copied = i;
            }
            None => i = pos + 1,
        }
    }
    out.push_str(&text[copied..]);
    out
}

fn remove_tables(text: &str) -> String {
    let lines: Vec<&str> = text.split('\n').collect();
    let mut keep = Vec::with_capacity(lines.len());
    let mut i = 0;
    while i < lines.len() {
        if lines[i].trim_start().starts_with("{|") {
            let mut depth = 0usize;
            let mut end = None;
            for (j, line) in lines.iter().enumerate().skip(i) {
                let t = line.trim_start();
                if t.starts_with("{|") {
                    depth += 1;
                } else if t.starts_with("|}") {
                    depth -= 1;
                    if depth == 0 {
                        end = Some(j);
                        break;
                    }
                }
            }
            match end {
                Some(j) => i = j + 1,
                // unclosed table: only the opening line goes
                None => i += 1,
            }
            continue;
        }
        keep.push(lines[i]);
        i += 1;
    }
    keep.join("\n")
}

/// Index just past the delimiter that balances the opener at `start`, or
/// `None` when the construct is unbalanced.
fn balanced_end(text: &str, start: usize, open: &str, close: &str) -> Option<usize> {
    let mut depth = 0usize;
    let mut i = start;
    while i < text.len() {
        if text[i..].starts_with(open) {
            depth += 1;
            i += open.len();
        } else if text[i..].starts_with(close) {
            depth -= 1;
            i += close.len();
            if depth == 0 {
                return Some(i);
            }
        } else {
            i += text[i..].chars().next().map_or(1, char::len_utf8);
        }
    }
    None
}

fn remove_templates(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let end = balanced_end(rest, start, "{{", "}}").unwrap_or_else(|| line_end(rest, start));
        rest = &rest[end..];
    }
    out.push_str(rest);
    out
}

/// Display text of the body of an internal link, or `None` when the link is
/// dropped entirely.
fn link_label(body: &str) -> Option<String> {
    let target = body.split('|').next().unwrap_or("").trim();
    let lowered = target.to_lowercase();
    if DROPPED_LINK_NAMESPACES
        .iter()
        .any(|ns| lowered.starts_with(ns))
    {
        return None;
    }
    // Interlanguage links such as [[fr:Paris]].
    if let Some((prefix, _)) = target.split_once(':') {
        if (2..=3).contains(&prefix.len()) && prefix.chars().all(|c| c.is_ascii_lowercase()) {
            return None;
        }
    }
    match body.rfind('|') {
        Some(bar) if depth_zero_pipe(body, bar) => Some(body[bar + 1..].to_string()),
        _ => Some(target.trim_start_matches(':').to_string()),
    }
}

/// True when the pipe at `bar` is not nested inside another link.
fn depth_zero_pipe(body: &str, bar: usize) -> bool {
    let before = &body[..bar];
    before.matches("[[").count() == before.matches("]]").count()
}

fn replace_internal_links(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("[[") {
        out.push_str(&rest[..start]);
        match balanced_end(rest, start, "[[", "]]") {
            Some(end) => {
                if let Some(label) = link_label(&rest[start + 2..end - 2]) {
                    out.push_str(&label);
                }
                rest = &rest[end..];
            }
            None => rest = &rest[line_end(rest, start)..],
        }
    }
    out.push_str(rest);
    out
}

fn replace_external_links(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut i = 0;
    let mut copied = 0;
    while let Some(off) = text[i..].find('[') {
        let pos = i + off;
        let after = &text[pos + 1..];
        let is_link = !after.starts_with('[')
            && URL_SCHEMES.iter().any(|s| {
                after
                    .get(..s.len())
                    .is_some_and(|p| p.eq_ignore_ascii_case(s))
            });
        if !is_link {
            i = pos + 1;
            continue;
        }
        out.push_str(&text[copied..pos]);
        let stop = line_end(text, pos);
        match text[pos..stop].find(']') {
            Some(close) => {
                let body = &text[pos + 1..pos + close];
                if let Some((_, label)) = body.split_once(char::is_whitespace) {
                    out.push_str(label.trim());
                }
                i = pos + close + 1;
            }
            None => i = stop,
        }
        copied = i;
    }
    out.push_str(&text[copied..]);
    out
}

/// Removes remaining HTML-like tags (`<b>`, `</span>`, `<br/>`) but keeps
/// their content.
fn remove_tags(text: &str) -> String {
    let bytes = text.as_bytes();
    let mut out = String::with_capacity(text.len());
    let mut i = 0;
    let mut copied = 0;
    while let Some(off) = text[i..].find('<') {
        let pos = i + off;
        let mut j = pos + 1;
        if bytes.get(j) == Some(&b'/') {
            j += 1;
        }
        let starts_name = bytes.get(j).is_some_and(u8::is_ascii_alphabetic);
        let close = if starts_name {
            text[j..line_end(text, j)].find(['>', '<']).map(|c| j + c)
        } else {
            None
        };
        match close {
            Some(c) if bytes[c] == b'>' => {
                out.push_str(&text[copied..pos]);
                i = c + 1;
                copied = i;
            }
            _ => i = pos + 1,
        }
    }
    out.push_str(&text[copied..]);
    out
}

/// Heading text of a `== Heading ==` line.
fn heading_text(line: &str) -> Option<&str> {
    let t = line.trim();
    if t.len() < 3 || !t.starts_with('=') || !t.ends_with('=') {
        return None;
    }
    let inner = t.trim_matches('=').trim();
    if inner.is_empty() {
        None
    } else {
        Some(inner)
    }
}

/// Line-oriented constructs: headings, list markers, rules, magic words.
fn rewrite_lines(text: &str) -> String {
    let mut out: Vec<String> = Vec::new();
    for line in text.split('\n') {
        if let Some(h) = heading_text(line) {
            out.push(String::new());
            out.push(h.to_string());
            out.push(String::new());
            continue;
        }
        let t = line.trim_start();
        if t.starts_with("----") && t.trim_end().chars().all(|c| c == '-') {
            // a horizontal rule ends the paragraph
            out.push(String::new());
            continue;
        }
        let t = t.trim_start_matches(['*', '#', ':', ';']);
        out.push(remove_magic_words(t));
    }
    out.join("\n")
}

fn remove_magic_words(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut rest = line;
    while let Some(start) = rest.find("__") {
        let after = &rest[start + 2..];
        let word_len = after
            .find(|c: char| !c.is_ascii_uppercase())
            .unwrap_or(after.len());
        if word_len > 0 && after[word_len..].starts_with("__") {
            out.push_str(&rest[..start]);
            rest = &after[word_len + 2..];
        } else {
            out.push_str(&rest[..start + 2]);
            rest = after;
        }
    }
    out.push_str(rest);
    out
}

/// Removes unmatched link and template delimiters, quote runs and `=` runs.
fn remove_stray_markers(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let run = chars[i..].iter().take_while(|&&x| x == c).count();
        match c {
            '\'' | '=' if run >= 2 => i += run,
            '[' | ']' | '{' | '}' if run >= 2 => {
                // an odd run keeps one literal bracket
                if run % 2 == 1 {
                    out.push(c);
                }
                i += run;
            }
            _ => {
                out.push(c);
                i += 1;
            }
        }
    }
    out
}

fn normalize_whitespace(text: &str) -> String {
    let mut lines: Vec<String> = Vec::new();
    let mut blank_run = 0;
    for line in text.split('\n') {
        let collapsed = line
            .split(|c: char| c.is_whitespace())
            .filter(|w| !w.is_empty())
            .collect::<Vec<_>>()
            .join(" ");
        if collapsed.is_empty() {
            blank_run += 1;
            if blank_run > 1 {
                continue;
            }
        } else {
            blank_run = 0;
        }
        lines.push(collapsed);
    }
    lines.join("\n").trim().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn plain_sentence_is_identity() {
        assert_eq!(strip_markup("plain sentence."), "plain sentence.");
    }

    #[test]
    fn links_and_bold() {
        assert_eq!(
            strip_markup("see [[Apollo 11|the mission]] and '''bold'''"),
            "see the mission and bold"
        );
        assert_eq!(strip_markup("[[Paris]] is ''nice''"), "Paris is nice");
        assert_eq!(strip_markup("many [[cat]]s"), "many cats");
    }

    #[test]
    fn templates_removed() {
        assert_eq!(strip_markup("{{cite web|url=x}}text"), "text");
        assert_eq!(strip_markup("a {{outer|{{inner}}|x}} b"), "a b");
        assert_eq!(
            strip_markup("{{Infobox\n| name = X\n| born = {{birth date|1900}}\n}}\nBody."),
            "Body."
        );
    }

    #[test]
    fn unclosed_template_truncates_at_line_end() {
        assert_eq!(strip_markup("keep {{broken\nnext line"), "keep\nnext line");
    }

    #[test]
    fn references_and_comments() {
        assert_eq!(
            strip_markup("Fact.<ref name=\"a\">{{cite book|t=x}}</ref> More.<ref name=b /> End."),
            "Fact. More. End."
        );
        assert_eq!(strip_markup("a<!-- hidden -->b"), "ab");
        assert_eq!(strip_markup("a <!-- open\nb"), "a\nb");
    }

    #[test]
    fn category_file_and_external_links() {
        assert_eq!(
            strip_markup("[[File:X.jpg|thumb|A [[caption]] here]]Text [[Category:Foo]]"),
            "Text"
        );
        assert_eq!(
            strip_markup("[https://example.org Example site] ok"),
            "Example site ok"
        );
        assert_eq!(strip_markup("bare [https://example.org] ok"), "bare ok");
    }

    #[test]
    fn tables_removed() {
        let src = "Before.\n{| class=\"wikitable\"\n|-\n| a || b\n|}\nAfter.";
        assert_eq!(strip_markup(src), "Before.\nAfter.");
    }

    #[test]
    fn headings_on_own_line() {
        let src = "Intro text.\n== History ==\nBody text.";
        assert_eq!(strip_markup(src), "Intro text.\n\nHistory\n\nBody text.");
    }

    #[test]
    fn entities_decoded() {
        assert_eq!(
            strip_markup("Tom &amp; Jerry&nbsp;show &#8211; x"),
            "Tom & Jerry show – x"
        );
    }

    #[test]
    fn segment_examples() {
        assert_eq!(segment_paragraphs("A\n\nB"), vec!["A", "B"]);
        assert_eq!(segment_paragraphs("A\n\n\n\nB"), vec!["A", "B"]);
        assert!(segment_paragraphs("").is_empty());
        assert_eq!(segment_paragraphs("  A  \n \t \nB\nC"), vec!["A", "B\nC"]);
    }

    #[test]
    fn clean_revision_cases() {
        let mut rev = RawRevision {
            page_title: "P".into(),
            rev_id: 1,
            parent_id: None,
            timestamp: "2020-01-01T00:00:00Z".into(),
            wikitext: String::new(),
        };
        assert!(clean_revision(&rev).paragraphs.is_empty());
        rev.wikitext = "Just one paragraph.".into();
        assert_eq!(clean_revision(&rev).paragraphs, vec!["Just one paragraph."]);
    }

    fn markupish() -> impl Strategy<Value = String> {
        let atoms = prop::sample::select(vec![
            "[[",
            "]]",
            "{{",
            "}}",
            "'",
            "''",
            "=",
            "==",
            "[",
            "]",
            "{",
            "}",
            "|",
            "<",
            ">",
            "<ref>",
            "</ref>",
            "<!--",
            "-->",
            "&amp;",
            "&lt;",
            "&gt;",
            "&#91;",
            "&#123;",
            "&",
            ";",
            "\n",
            "\n\n",
            " ",
            "a",
            "Word",
            "http://x",
            "File:",
            "Category:",
            "{|",
            "|}",
            "__TOC__",
            "*",
            "#",
            ":",
            "é",
        ]);
        prop::collection::vec(atoms, 0..40).prop_map(|v| v.concat())
    }

    proptest! {
        #[test]
        fn strip_is_idempotent(s in markupish()) {
            let once = strip_markup(&s);
            prop_assert_eq!(strip_markup(&once), once);
        }

        #[test]
        fn no_marker_leaks(s in markupish()) {
            let out = strip_markup(&s);
            for m in MARKUP_MARKERS {
                prop_assert!(!out.contains(m), "{:?} leaked from {:?}: {:?}", m, s, out);
            }
        }

        #[test]
        fn idempotent_on_arbitrary_text(s in "\\PC{0,60}") {
            let once = strip_markup(&s);
            prop_assert_eq!(strip_markup(&once), once);
        }

        #[test]
        fn segments_are_never_blank(s in markupish()) {
            for p in segment_paragraphs(&strip_markup(&s)) {
                prop_assert!(!p.trim().is_empty());
            }
        }
    }
}
