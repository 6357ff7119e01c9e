use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use quick_xml::events::Event;
use quick_xml::Reader;

use super::{within_cutoff, HarvestError, HarvestOptions, RawRevision, RevisionCache};

/// Revisions buffered per page before they are flushed to the cache.
const FLUSH_EVERY: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    Title,
    RevId,
    ParentId,
    Timestamp,
    Text,
}

#[derive(Default)]
struct RevisionFields {
    id: Option<u64>,
    parent_id: Option<u64>,
    timestamp: Option<String>,
    text: String,
}

/// Opens a dump file, transparently decompressing gzip and bzip2 streams.
fn open_dump(path: &Path) -> Result<Box<dyn BufRead>, HarvestError> {
    let mut file = File::open(path)?;
    let mut magic = [0u8; 3];
    let n = file.read(&mut magic)?;
    let file = File::open(path)?;
    let reader: Box<dyn Read> = match &magic[..n] {
        [0x1f, 0x8b, ..] => Box::new(flate2::read::MultiGzDecoder::new(file)),
        [b'B', b'Z', b'h'] => Box::new(bzip2::read::MultiBzDecoder::new(file)),
        _ => Box::new(file),
    };
    Ok(Box::new(BufReader::with_capacity(1 << 16, reader)))
}

/// Streams a `pages-meta-history` dump once, persisting revisions of the
/// requested titles. Returns the number of revisions newly written.
pub fn ingest_dump(
    dump_path: &Path,
    titles: &HashSet<String>,
    cache: &RevisionCache,
    opts: &HarvestOptions,
) -> Result<usize, HarvestError> {
    ingest_reader(open_dump(dump_path)?, titles, cache, opts)
}

fn malformed(reader_pos: u64, msg: impl std::fmt::Display) -> HarvestError {
    HarvestError::MalformedDump(format!("at byte {reader_pos}: {msg}"))
}

pub fn ingest_reader<R: BufRead>(
    input: R,
    titles: &HashSet<String>,
    cache: &RevisionCache,
    opts: &HarvestOptions,
) -> Result<usize, HarvestError> {
    let wanted: HashSet<String> = titles.iter().map(|t| t.replace('_', " ")).collect();
    let mut reader = Reader::from_reader(input);
    reader.config_mut().trim_text(false);
    reader.config_mut().check_end_names = true;

    let mut buf = Vec::new();
    let mut path: Vec<Vec<u8>> = Vec::new();
    let mut field: Option<Field> = None;
    let mut title = String::new();
    let mut matched = false;
    let mut rev = RevisionFields::default();
    let mut pending: Vec<RawRevision> = Vec::new();
    let mut written = 0usize;

    let flush = |title: &str,
                 pending: &mut Vec<RawRevision>,
                 written: &mut usize|
     -> Result<(), HarvestError> {
        if !pending.is_empty() {
            *written +=
                cache.store(title, std::mem::take(pending), opts.harvested_at.as_deref())?;
        }
        Ok(())
    };

    loop {
        let pos = reader.buffer_position() as u64;
        let event = reader
            .read_event_into(&mut buf)
            .map_err(|e| malformed(pos, e))?;
        match event {
            Event::Start(e) => {
                let name = e.name().as_ref().to_vec();
                let parent = path.last().map(Vec::as_slice);
                field = match (parent, name.as_slice()) {
                    (Some(b"page"), b"title") => Some(Field::Title),
                    (Some(b"revision"), b"id") if matched => Some(Field::RevId),
                    (Some(b"revision"), b"parentid") if matched => Some(Field::ParentId),
                    (Some(b"revision"), b"timestamp") if matched => Some(Field::Timestamp),
                    (Some(b"revision"), b"text") if matched => Some(Field::Text),
                    _ => None,
                };
                match name.as_slice() {
                    b"page" => {
                        title.clear();
                        matched = false;
                    }
                    b"revision" => rev = RevisionFields::default(),
                    _ => {}
                }
                path.push(name);
            }
            Event::Empty(e) => {
                // <text deleted="deleted" /> and friends carry no content.
                if e.name().as_ref() == b"revision" {
                    return Err(malformed(pos, "empty <revision/> element"));
                }
            }
            Event::Text(t) => {
                if let Some(f) = field {
                    let text = t.unescape().map_err(|e| malformed(pos, e))?;
                    push_field(f, &text, &mut title, &mut rev);
                }
            }
            Event::CData(t) => {
                if let Some(f) = field {
                    let text = String::from_utf8_lossy(&t.into_inner()).into_owned();
                    push_field(f, &text, &mut title, &mut rev);
                }
            }
            Event::End(e) => {
                let name = e.name().as_ref().to_vec();
                match (field, name.as_slice()) {
                    (Some(Field::Title), b"title") => {
                        matched = wanted.contains(title.trim());
                    }
                    (Some(Field::RevId), b"id") | (Some(Field::ParentId), b"parentid") => {
                        validate_id(&rev).map_err(|m| malformed(pos, m))?;
                    }
                    _ => {}
                }
                field = None;
                match name.as_slice() {
                    b"revision" if matched => {
                        let fields = std::mem::take(&mut rev);
                        let id = fields
                            .id
                            .ok_or_else(|| malformed(pos, "revision without <id>"))?;
                        let timestamp = fields.timestamp.ok_or_else(|| {
                            malformed(pos, format!("revision {id} without <timestamp>"))
                        })?;
                        let raw = RawRevision {
                            page_title: title.trim().to_string(),
                            rev_id: id,
                            parent_id: fields.parent_id,
                            timestamp: timestamp.trim().to_string(),
                            wikitext: fields.text,
                        };
                        if within_cutoff(&raw, opts.max_timestamp.as_ref())? {
                            pending.push(raw);
                        }
                        if pending.len() >= FLUSH_EVERY {
                            flush(title.trim(), &mut pending, &mut written)?;
                        }
                    }
                    b"page" => {
                        if matched {
                            flush(title.trim(), &mut pending, &mut written)?;
                        }
                        matched = false;
                    }
                    _ => {}
                }
                path.pop();
            }
            Event::Eof => break,
            _ => {}
        }
        buf.clear();
    }
    if !path.is_empty() {
        let open = String::from_utf8_lossy(path.last().unwrap()).into_owned();
        return Err(HarvestError::MalformedDump(format!(
            "unexpected end of dump inside <{open}>"
        )));
    }
    Ok(written)
}

fn push_field(f: Field, text: &str, title: &mut String, rev: &mut RevisionFields) {
    match f {
        Field::Title => title.push_str(text),
        Field::Text => rev.text.push_str(text),
        Field::Timestamp => rev.timestamp.get_or_insert_with(String::new).push_str(text),
        Field::RevId => rev.id = Some(parse_id_chunk(rev.id, text)),
        Field::ParentId => rev.parent_id = Some(parse_id_chunk(rev.parent_id, text)),
    }
}

/// Ids arrive as text events; anything non-numeric is flagged with
/// `u64::MAX` and rejected by [`validate_id`].
fn parse_id_chunk(prev: Option<u64>, text: &str) -> u64 {
    let t = text.trim();
    if t.is_empty() {
        return prev.unwrap_or(u64::MAX);
    }
    match (prev, t.parse::<u64>()) {
        (None, Ok(v)) => v,
        _ => u64::MAX,
    }
}

fn validate_id(rev: &RevisionFields) -> Result<(), &'static str> {
    if rev.id == Some(u64::MAX) || rev.parent_id == Some(u64::MAX) {
        Err("non-numeric revision id")
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DUMP: &str = r#"<mediawiki xmlns="http://www.mediawiki.org/xml/export-0.11/">
  <siteinfo><sitename>Wikipedia</sitename></siteinfo>
  <page>
    <title>Keep Me</title><ns>0</ns><id>10</id>
    <revision><id>1</id><timestamp>2020-01-01T00:00:00Z</timestamp>
      <contributor><username>A</username><id>99</id></contributor>
      <text bytes="5" xml:space="preserve">a &amp; b</text></revision>
    <revision><id>2</id><parentid>1</parentid><timestamp>2020-01-02T00:00:00Z</timestamp>
      <text deleted="deleted" /></revision>
  </page>
  <page>
    <title>Skip Me</title><ns>0</ns><id>11</id>
    <revision><id>3</id><timestamp>2020-01-01T00:00:00Z</timestamp><text>x</text></revision>
  </page>
</mediawiki>"#;

    fn titles(ts: &[&str]) -> HashSet<String> {
        ts.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn ingests_only_requested_pages() {
        let dir = tempfile::tempdir().unwrap();
        let cache = RevisionCache::open(dir.path()).unwrap();
        let n = ingest_reader(
            DUMP.as_bytes(),
            &titles(&["Keep_Me"]),
            &cache,
            &HarvestOptions::default(),
        )
        .unwrap();
        assert_eq!(n, 2);
        let revs = cache.load("Keep Me").unwrap();
        assert_eq!(revs[0].wikitext, "a & b");
        assert_eq!(revs[0].parent_id, None);
        assert_eq!(revs[1].parent_id, Some(1));
        assert_eq!(revs[1].wikitext, "");
        assert!(!cache.contains("Skip Me"));
    }

    #[test]
    fn no_matching_titles_ingests_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let cache = RevisionCache::open(dir.path()).unwrap();
        let n = ingest_reader(
            DUMP.as_bytes(),
            &titles(&["Absent"]),
            &cache,
            &HarvestOptions::default(),
        )
        .unwrap();
        assert_eq!(n, 0);
    }

    #[test]
    fn truncated_dump_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let cache = RevisionCache::open(dir.path()).unwrap();
        let cut = &DUMP[..DUMP.find("<page>\n    <title>Skip").unwrap() + 20];
        let err = ingest_reader(
            cut.as_bytes(),
            &titles(&["Keep Me"]),
            &cache,
            &HarvestOptions::default(),
        );
        assert!(matches!(err, Err(HarvestError::MalformedDump(_))));
    }

    #[test]
    fn bad_revision_id_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let cache = RevisionCache::open(dir.path()).unwrap();
        let bad = DUMP.replace("<id>1</id>", "<id>one</id>");
        let err = ingest_reader(
            bad.as_bytes(),
            &titles(&["Keep Me"]),
            &cache,
            &HarvestOptions::default(),
        );
        assert!(matches!(err, Err(HarvestError::MalformedDump(_))));
    }

    #[test]
    fn cutoff_filters_late_revisions() {
        let dir = tempfile::tempdir().unwrap();
        let cache = RevisionCache::open(dir.path()).unwrap();
        let opts = HarvestOptions {
            max_timestamp: Some(crate::harvest::parse_timestamp("2020-01-01T12:00:00Z").unwrap()),
            ..Default::default()
        };
        let n = ingest_reader(DUMP.as_bytes(), &titles(&["Keep Me"]), &cache, &opts).unwrap();
        assert_eq!(n, 1);
    }
}
