//! Corpus manifests: a CSV with header `id,path,speaker,session`, paths
//! relative to the manifest. An optional first line
//! `# corpus=<name> rate=<hz>` names the corpus and declares its rate.

use std::collections::{BTreeMap, HashSet};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    pub speaker: String,
    #[serde(default, deserialize_with = "empty_as_none")]
    pub session: Option<String>,
}

fn empty_as_none<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Option<String>, D::Error> {
    let s: Option<String> = Option::deserialize(d)?;
    Ok(s.filter(|s| !s.trim().is_empty()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusManifest {
    pub name: String,
    pub rate: Option<u32>,
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    /// Speaker labels in sorted order.
    pub fn speakers(&self) -> Vec<String> {
        let mut s: Vec<String> = self.entries.iter().map(|e| e.speaker.clone()).collect::<HashSet<_>>().into_iter().collect();
        s.sort();
        s
    }

    /// Entry indices per speaker, in manifest order.
    pub fn by_speaker(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut m: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, e) in self.entries.iter().enumerate() {
            m.entry(e.speaker.as_str()).or_default().push(i);
        }
        m
    }

    /// Checks unique ids, at least two utterances per speaker and, when
    /// `check_files`, that every path exists.
    pub fn validate(&self, check_files: bool) -> Result<()> {
        if self.entries.is_empty() {
            return Err(HarnessError::Data(format!("manifest `{}` has no entries", self.name)));
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            if e.id.is_empty() || e.speaker.is_empty() {
                return Err(HarnessError::Data("manifest entry with empty id or speaker".into()));
            }
            if !seen.insert(e.id.as_str()) {
                return Err(HarnessError::Data(format!("duplicate utterance id `{}`", e.id)));
            }
            if check_files && !e.path.is_file() {
                return Err(HarnessError::Data(format!("utterance `{}`: missing file {}", e.id, e.path.display())));
            }
        }
        if let Some((spk, ids)) = self.by_speaker().into_iter().find(|(_, v)| v.len() < 2) {
            return Err(HarnessError::Data(format!("speaker `{spk}` has {} utterance(s); at least 2 are required", ids.len())));
        }
        Ok(())
    }

    /// Writes the manifest with paths relative to `path`'s directory when
    /// possible.
    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = path.parent().unwrap_or(Path::new(""));
        let mut out = Vec::new();
        match self.rate {
            Some(r) => writeln!(out, "# corpus={} rate={r}", self.name),
            None => writeln!(out, "# corpus={}", self.name),
        }
        .expect("write to vec");
        {
            let mut w = csv::Writer::from_writer(&mut out);
            for e in &self.entries {
                let rel = e.path.strip_prefix(dir).unwrap_or(&e.path);
                w.serialize(ManifestEntry { path: rel.to_path_buf(), ..e.clone() }).map_err(|err| HarnessError::Data(err.to_string()))?;
            }
            w.flush().map_err(|err| HarnessError::io(path, err))?;
        }
        std::fs::write(path, out).map_err(|e| HarnessError::io(path, e))
    }
}

pub fn parse_manifest(text: &str, base_dir: &Path, default_name: &str) -> Result<CorpusManifest> {
    let mut name = default_name.to_string();
    let mut rate = None;
    let mut body = text;
    if let Some(first) = text.lines().next().filter(|l| l.trim_start().starts_with('#')) {
        for kv in first.trim_start_matches(|c: char| c == '#' || c.is_whitespace()).split_whitespace() {
            match kv.split_once('=') {
                Some(("corpus", v)) => name = v.to_string(),
                Some(("rate", v)) => {
                    rate = Some(v.parse().map_err(|_| HarnessError::Data(format!("manifest: bad rate `{v}`")))?);
                }
                _ => return Err(HarnessError::Data(format!("manifest: unknown header field `{kv}`"))),
            }
        }
        body = &text[first.len()..];
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(false).from_reader(body.trim_start().as_bytes());
    let headers = rdr.headers().map_err(|e| HarnessError::Data(format!("manifest: {e}")))?.clone();
    let expected = ["id", "path", "speaker", "session"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(HarnessError::Data(format!("manifest header must be `{}`", expected.join(","))));
    }
    let mut entries = Vec::new();
    for row in rdr.deserialize::<ManifestEntry>() {
        let mut e = row.map_err(|e| HarnessError::Data(format!("manifest: {e}")))?;
        if e.path.is_relative() {
            e.path = base_dir.join(&e.path);
        }
        entries.push(e);
    }
    Ok(CorpusManifest { name, rate, entries })
}

/// Reads and validates a manifest, resolving relative paths against its
/// directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<CorpusManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("corpus");
    let m = parse_manifest(&text, path.parent().unwrap_or(Path::new("")), stem)?;
    m.validate(true)?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn text(rows: &[(&str, &str)]) -> String {
        let mut s = String::from("# corpus=toy rate=8000\nid,path,speaker,session\n");
        for (id, spk) in rows {
            s.push_str(&format!("{id},{id}.wav,{spk},\n"));
        }
        s
    }

    #[test]
    fn parses_header_and_rows() {
        let m = parse_manifest(&text(&[("a1", "a"), ("a2", "a"), ("b1", "b"), ("b2", "b")]), Path::new("/data"), "x").unwrap();
        assert_eq!(m.name, "toy");
        assert_eq!(m.rate, Some(8000));
        assert_eq!(m.entries[2].path, PathBuf::from("/data/b1.wav"));
        assert_eq!(m.entries[0].session, None);
        m.validate(false).unwrap();
        assert_eq!(m.speakers(), vec!["a", "b"]);
    }

    #[test]
    fn accepts_39_speakers_by_10() {
        let rows: Vec<(String, String)> = (0..390).map(|i| (format!("u{i:03}"), format!("spk{:02}", i / 10))).collect();
        let refs: Vec<(&str, &str)> = rows.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let m = parse_manifest(&text(&refs), Path::new(""), "x").unwrap();
        m.validate(false).unwrap();
        assert_eq!(m.entries.len(), 390);
        assert_eq!(m.speakers().len(), 39);
    }

    #[test]
    fn rejects_duplicates_and_singletons() {
        let dup = parse_manifest(&text(&[("a1", "a"), ("a1", "a"), ("b1", "b"), ("b2", "b")]), Path::new(""), "x").unwrap();
        let err = dup.validate(false).unwrap_err().to_string();
        assert!(err.contains("a1"), "{err}");
        let single = parse_manifest(&text(&[("a1", "a"), ("a2", "a"), ("b1", "b")]), Path::new(""), "x").unwrap();
        assert!(single.validate(false).is_err());
        assert!(parse_manifest("id,file,speaker,session\n", Path::new(""), "x").is_err());
    }

    #[test]
    fn missing_files_are_reported() {
        let m = parse_manifest(&text(&[("a1", "a"), ("a2", "a")]), Path::new("/nonexistent"), "x").unwrap();
        assert!(m.validate(true).unwrap_err().to_string().contains("missing file"));
    }
}
