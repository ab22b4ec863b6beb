//! Append-only JSONL cassette files: one recorded provider exchange per
//! line, keyed by the canonical request digest.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ChatRequest;

/// One recorded exchange. The request snapshot is stored in canonical form
/// so a cassette file is self-describing and can be audited or diffed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub request_key: String,
    pub request_snapshot: ChatRequest,
    pub response_text: String,
    pub recorded_at: String,
}

/// In-memory view of one provider's cassette file.
#[derive(Debug)]
pub struct Cassette {
    path: PathBuf,
    entries: BTreeMap<String, CassetteEntry>,
}

impl Cassette {
    /// Loads a cassette, treating a missing file as empty (the record mode
    /// bootstrap case). Unparseable lines are errors; a duplicated key keeps
    /// the first occurrence and logs a warning, since keys are unique by
    /// construction and a duplicate means the file was edited by hand.
    pub fn load(path: &Path) -> io::Result<Self> {
        let mut entries = BTreeMap::new();
        match fs::File::open(path) {
            Ok(file) => {
                let reader = BufReader::new(file);
                for (idx, line) in reader.lines().enumerate() {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let entry: CassetteEntry = serde_json::from_str(&line).map_err(|e| {
                        io::Error::new(
                            io::ErrorKind::InvalidData,
                            format!("{}:{}: bad cassette entry: {}", path.display(), idx + 1, e),
                        )
                    })?;
                    if entries.contains_key(&entry.request_key) {
                        log::warn!(
                            "{}:{}: duplicate request_key {}, keeping first",
                            path.display(),
                            idx + 1,
                            entry.request_key
                        );
                        continue;
                    }
                    entries.insert(entry.request_key.clone(), entry);
                }
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(e),
        }
        Ok(Cassette { path: path.to_path_buf(), entries })
    }

    pub fn get(&self, key: &str) -> Option<&CassetteEntry> {
        self.entries.get(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends an entry to the file and the in-memory index. Returns `false`
    /// without touching the file when the key is already present.
    pub fn append(&mut self, entry: CassetteEntry) -> io::Result<bool> {
        if self.entries.contains_key(&entry.request_key) {
            return Ok(false);
        }
        if let Some(parent) = self.path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut file = OpenOptions::new().create(true).append(true).open(&self.path)?;
        let line = serde_json::to_string(&entry)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        file.write_all(line.as_bytes())?;
        file.write_all(b"\n")?;
        self.entries.insert(entry.request_key.clone(), entry);
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(key: &str) -> CassetteEntry {
        CassetteEntry {
            request_key: key.to_string(),
            request_snapshot: ChatRequest {
                provider: "p".into(),
                model: "m".into(),
                system_prompt: "s".into(),
                user_prompt: "u".into(),
                temperature: 0.0,
                max_output_tokens: None,
            },
            response_text: format!("response for {key}"),
            recorded_at: "2026-01-01T00:00:00Z".into(),
        }
    }

    #[test]
    fn missing_file_loads_empty() {
        let dir = tempfile::tempdir().unwrap();
        let cassette = Cassette::load(&dir.path().join("absent.jsonl")).unwrap();
        assert!(cassette.is_empty());
    }

    #[test]
    fn append_persists_and_dedupes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tape.jsonl");
        let mut cassette = Cassette::load(&path).unwrap();
        assert!(cassette.append(entry("k1")).unwrap());
        assert!(cassette.append(entry("k2")).unwrap());
        assert!(!cassette.append(entry("k1")).unwrap(), "duplicate keys are not re-written");
        assert_eq!(cassette.len(), 2);

        let reloaded = Cassette::load(&path).unwrap();
        assert_eq!(reloaded.len(), 2);
        assert_eq!(reloaded.get("k1").unwrap().response_text, "response for k1");
        assert!(reloaded.get("k3").is_none());
    }

    #[test]
    fn corrupt_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tape.jsonl");
        std::fs::write(&path, "{not json}\n").unwrap();
        let err = Cassette::load(&path).unwrap_err();
        assert!(err.to_string().contains(":1:"));
    }

    #[test]
    fn duplicate_key_on_disk_keeps_first() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tape.jsonl");
        let mut a = entry("k1");
        a.response_text = "first".into();
        let mut b = entry("k1");
        b.response_text = "second".into();
        let lines = [
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap(),
        ];
        std::fs::write(&path, lines.join("\n") + "\n").unwrap();
        let cassette = Cassette::load(&path).unwrap();
        assert_eq!(cassette.len(), 1);
        assert_eq!(cassette.get("k1").unwrap().response_text, "first");
    }
}
