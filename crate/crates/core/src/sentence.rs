//! Rule-based sentence segmentation.
//!
//! A boundary is a `.`, `?` or `!` (optionally followed by closing quotes or
//! brackets), then whitespace, then an uppercase letter, digit or opening
//! quote. Periods ending a known abbreviation or a single-letter initial do
//! not end a sentence.

use std::ops::Range;

const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "st", "jr", "sr", "vs", "etc", "e.g", "i.e", "u.s", "u.k",
    "no", "inc", "ltd", "co", "corp", "gen", "col", "lt", "sgt", "capt", "mt", "ft", "rev", "gov",
    "sen", "rep", "jan", "feb", "mar", "apr", "jun", "jul", "aug", "sep", "sept", "oct", "nov",
    "dec", "approx", "est", "fig", "vol", "op", "ca", "c",
];

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '”' | '’')
}

fn starts_sentence(c: char) -> bool {
    c.is_uppercase() || c.is_ascii_digit() || matches!(c, '"' | '\'' | '(' | '“' | '‘')
}

/// The word immediately before byte `end` (exclusive), without leading
/// punctuation.
fn word_before(text: &str, end: usize) -> &str {
    let start = text[..end].rfind(char::is_whitespace).map_or(0, |i| i + 1);
    text[start..end].trim_start_matches(|c: char| !c.is_alphanumeric())
}

fn is_abbreviation(word: &str) -> bool {
    let lw = word.to_lowercase();
    if ABBREVIATIONS.contains(&lw.as_str()) {
        return true;
    }
    // single-letter initials such as "O." in "James O. McKinsey"
    let mut chars = word.chars();
    matches!((chars.next(), chars.next()), (Some(c), None) if c.is_uppercase())
}

/// Byte ranges of sentences in `text`, trimmed of surrounding whitespace.
/// The text between consecutive ranges is the original separator.
pub fn sentence_spans(text: &str) -> Vec<Range<usize>> {
    let mut spans = Vec::new();
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if matches!(c, '.' | '?' | '!') {
            let mut j = i + 1;
            while j < chars.len()
                && (is_closer(chars[j].1) || matches!(chars[j].1, '.' | '?' | '!'))
            {
                j += 1;
            }
            let end = chars.get(j).map_or(text.len(), |&(p, _)| p);
            let mut k = j;
            while k < chars.len() && chars[k].1.is_whitespace() {
                k += 1;
            }
            let boundary = k > j
                && k < chars.len()
                && starts_sentence(chars[k].1)
                && !(c == '.' && is_abbreviation(word_before(text, pos)));
            if boundary {
                push_trimmed(text, start..end, &mut spans);
                start = chars[k].0;
                i = k;
                continue;
            }
        }
        i += 1;
    }
    push_trimmed(text, start..text.len(), &mut spans);
    spans
}

fn push_trimmed(text: &str, r: Range<usize>, out: &mut Vec<Range<usize>>) {
    let s = &text[r.clone()];
    let lead = s.len() - s.trim_start().len();
    let trail = s.len() - s.trim_end().len();
    if lead + trail < s.len() {
        out.push(r.start + lead..r.end - trail);
    }
}

pub fn split_sentences(text: &str) -> Vec<&str> {
    sentence_spans(text).into_iter().map(|r| &text[r]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_on_terminal_punctuation() {
        assert_eq!(
            split_sentences("It rained. Then it stopped! Did it? Yes."),
            vec!["It rained.", "Then it stopped!", "Did it?", "Yes."]
        );
    }

    #[test]
    fn respects_abbreviations_and_initials() {
        assert_eq!(
            split_sentences("Dr. Smith met James O. McKinsey in the U.S. Army. They talked."),
            vec![
                "Dr. Smith met James O. McKinsey in the U.S. Army.",
                "They talked."
            ]
        );
    }

    #[test]
    fn lowercase_continuation_is_not_a_boundary() {
        assert_eq!(
            split_sentences("Version 2.5 was released. it was fine."),
            vec!["Version 2.5 was released. it was fine."]
        );
    }

    #[test]
    fn closing_quotes_stay_with_sentence() {
        assert_eq!(
            split_sentences("He said \"stop.\" She left."),
            vec!["He said \"stop.\"", "She left."]
        );
    }

    #[test]
    fn spans_cover_text_without_overlap() {
        let text = "  One. Two.  Three  ";
        let spans = sentence_spans(text);
        assert_eq!(spans.len(), 3);
        for w in spans.windows(2) {
            assert!(w[0].end <= w[1].start);
        }
        assert!(split_sentences("   ").is_empty());
    }
}
