use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{sort_chronologically, HarvestError, RawRevision};

const INDEX_FILE: &str = "index.json";
const PAGES_DIR: &str = "pages";

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct PageEntry {
    file: String,
    rev_ids: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    harvested_at: Option<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct CacheIndex {
    pages: BTreeMap<String, PageEntry>,
}

/// Durable per-page revision store: `{root}/pages/{title}.jsonl` plus
/// `{root}/index.json`.
///
/// Revisions are immutable once written. Writes to one page are serialized;
/// different pages may be written concurrently.
#[derive(Debug)]
pub struct RevisionCache {
    root: PathBuf,
    index: Mutex<CacheIndex>,
    page_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

/// File-name-safe form of a title. ASCII alphanumerics, `-` and `.` pass
/// through, spaces become `_`, everything else is `%XX` per UTF-8 byte.
pub fn sanitize_title(title: &str) -> String {
    let mut out = String::with_capacity(title.len());
    for b in title.bytes() {
        match b {
            b'a'..=b'z' | b'A'..=b'Z' | b'0'..=b'9' | b'-' => out.push(b as char),
            b'.' if !out.is_empty() => out.push('.'),
            b' ' => out.push('_'),
            _ => out.push_str(&format!("%{b:02X}")),
        }
    }
    out
}

fn write_atomically(path: &Path, bytes: &[u8]) -> Result<(), HarvestError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

impl RevisionCache {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, HarvestError> {
        let root = root.into();
        fs::create_dir_all(root.join(PAGES_DIR))?;
        let index_path = root.join(INDEX_FILE);
        let index = if index_path.exists() {
            let text = fs::read_to_string(&index_path)?;
            serde_json::from_str(&text)
                .map_err(|e| HarvestError::CacheCorrupt(format!("{}: {e}", index_path.display())))?
        } else {
            CacheIndex::default()
        };
        Ok(Self {
            root,
            index: Mutex::new(index),
            page_locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn contains(&self, title: &str) -> bool {
        self.index.lock().unwrap().pages.contains_key(title)
    }

    /// Titles present in the cache, sorted.
    pub fn titles(&self) -> Vec<String> {
        self.index.lock().unwrap().pages.keys().cloned().collect()
    }

    pub fn rev_ids(&self, title: &str) -> Vec<u64> {
        self.index
            .lock()
            .unwrap()
            .pages
            .get(title)
            .map(|e| e.rev_ids.clone())
            .unwrap_or_default()
    }

    fn page_path(&self, title: &str) -> PathBuf {
        self.root
            .join(PAGES_DIR)
            .join(format!("{}.jsonl", sanitize_title(title)))
    }

    fn page_lock(&self, title: &str) -> Arc<Mutex<()>> {
        self.page_locks
            .lock()
            .unwrap()
            .entry(title.to_string())
            .or_default()
            .clone()
    }

    /// All cached revisions of `title`, oldest first. Unknown titles yield
    /// an empty list.
    pub fn load(&self, title: &str) -> Result<Vec<RawRevision>, HarvestError> {
        let expected = match self.index.lock().unwrap().pages.get(title) {
            Some(e) => e.rev_ids.clone(),
            None => return Ok(Vec::new()),
        };
        let lock = self.page_lock(title);
        let _guard = lock.lock().unwrap();
        let revs = self.read_page_file(title)?;
        let found: Vec<u64> = revs.iter().map(|r| r.rev_id).collect();
        if found != expected {
            return Err(HarvestError::CacheCorrupt(format!(
                "{title}: index lists {} revisions, file holds {}",
                expected.len(),
                found.len()
            )));
        }
        Ok(revs)
    }

    fn read_page_file(&self, title: &str) -> Result<Vec<RawRevision>, HarvestError> {
        let path = self.page_path(title);
        let file = File::open(&path)
            .map_err(|e| HarvestError::CacheCorrupt(format!("{}: {e}", path.display())))?;
        let mut revs = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rev: RawRevision = serde_json::from_str(&line).map_err(|e| {
                HarvestError::CacheCorrupt(format!("{}:{}: {e}", path.display(), n + 1))
            })?;
            if rev.page_title != title {
                return Err(HarvestError::CacheCorrupt(format!(
                    "{}:{}: revision belongs to {:?}",
                    path.display(),
                    n + 1,
                    rev.page_title
                )));
            }
            revs.push(rev);
        }
        Ok(revs)
    }

    /// Adds revisions of `title`, skipping rev_ids already cached. Returns
    /// the number of new revisions written.
    pub fn store(
        &self,
        title: &str,
        mut revs: Vec<RawRevision>,
        harvested_at: Option<&str>,
    ) -> Result<usize, HarvestError> {
        let lock = self.page_lock(title);
        let _guard = lock.lock().unwrap();

        let existing: Vec<u64> = self.rev_ids(title);
        let known: std::collections::HashSet<u64> = existing.iter().copied().collect();
        sort_chronologically(&mut revs);
        revs.dedup_by_key(|r| r.rev_id);
        revs.retain(|r| !known.contains(&r.rev_id));
        for r in &mut revs {
            r.page_title = title.to_string();
        }

        let path = self.page_path(title);
        let all_ids: Vec<u64>;
        let appendable = existing
            .last()
            .map_or(true, |&max| revs.first().map_or(true, |r| r.rev_id > max));
        if appendable {
            if !revs.is_empty() || !path.exists() {
                let f = OpenOptions::new().create(true).append(true).open(&path)?;
                let mut w = BufWriter::new(f);
                for r in &revs {
                    serde_json::to_writer(&mut w, r)?;
                    w.write_all(b"\n")?;
                }
                w.flush()?;
            }
            all_ids = existing
                .iter()
                .copied()
                .chain(revs.iter().map(|r| r.rev_id))
                .collect();
        } else {
            let mut merged = if existing.is_empty() {
                Vec::new()
            } else {
                self.read_page_file(title)?
            };
            merged.extend(revs.iter().cloned());
            sort_chronologically(&mut merged);
            let mut buf = Vec::new();
            for r in &merged {
                serde_json::to_writer(&mut buf, r)?;
                buf.push(b'\n');
            }
            write_atomically(&path, &buf)?;
            all_ids = merged.iter().map(|r| r.rev_id).collect();
        }

        let mut index = self.index.lock().unwrap();
        let entry = index.pages.entry(title.to_string()).or_default();
        entry.file = format!("{PAGES_DIR}/{}.jsonl", sanitize_title(title));
        entry.rev_ids = all_ids;
        if let Some(ts) = harvested_at {
            entry.harvested_at = Some(ts.to_string());
        }
        let bytes = serde_json::to_vec_pretty(&*index)?;
        write_atomically(&self.root.join(INDEX_FILE), &bytes)?;
        Ok(revs.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rev(id: u64, ts: &str) -> RawRevision {
        RawRevision {
            page_title: "Alpha Beta".into(),
            rev_id: id,
            parent_id: None,
            timestamp: ts.into(),
            wikitext: format!("text {id}"),
        }
    }

    #[test]
    fn sanitize_is_filename_safe() {
        assert_eq!(sanitize_title("Alpha Beta"), "Alpha_Beta");
        assert_eq!(sanitize_title("AC/DC"), "AC%2FDC");
        assert_eq!(sanitize_title("..x"), "%2E.x");
        assert_ne!(sanitize_title("A_B"), sanitize_title("A B"));
    }

    #[test]
    fn store_dedups_and_merges_out_of_order() {
        let dir = tempfile::tempdir().unwrap();
        let cache = RevisionCache::open(dir.path()).unwrap();
        assert_eq!(
            cache
                .store("Alpha Beta", vec![rev(5, "2020-01-05T00:00:00Z")], None)
                .unwrap(),
            1
        );
        assert_eq!(
            cache
                .store(
                    "Alpha Beta",
                    vec![
                        rev(2, "2020-01-02T00:00:00Z"),
                        rev(5, "2020-01-05T00:00:00Z")
                    ],
                    None
                )
                .unwrap(),
            1
        );
        let ids: Vec<u64> = cache
            .load("Alpha Beta")
            .unwrap()
            .iter()
            .map(|r| r.rev_id)
            .collect();
        assert_eq!(ids, vec![2, 5]);

        let reopened = RevisionCache::open(dir.path()).unwrap();
        assert_eq!(reopened.rev_ids("Alpha Beta"), vec![2, 5]);
    }

    #[test]
    fn detects_index_file_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let cache = RevisionCache::open(dir.path()).unwrap();
        cache
            .store("Alpha Beta", vec![rev(1, "2020-01-01T00:00:00Z")], None)
            .unwrap();
        fs::write(dir.path().join("pages/Alpha_Beta.jsonl"), "").unwrap();
        assert!(matches!(
            cache.load("Alpha Beta"),
            Err(HarvestError::CacheCorrupt(_))
        ));
    }

    #[test]
    fn unknown_title_loads_empty() {
        let dir = tempfile::tempdir().unwrap();
        let cache = RevisionCache::open(dir.path()).unwrap();
        assert!(cache.load("Nope").unwrap().is_empty());
    }
}
