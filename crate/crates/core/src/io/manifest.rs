use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One monolingual source utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub audio: PathBuf,
    pub language: String,
    pub duration: f64,
    pub speaker: String,
    /// Optional grouping tag (for example a language family) used to filter pools.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(records: &[T], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Resolve a manifest path relative to the manifest's own directory.
pub fn resolve(manifest: &Path, entry: &Path) -> PathBuf {
    if entry.is_absolute() {
        entry.to_path_buf()
    } else {
        manifest.parent().unwrap_or(Path::new(".")).join(entry)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip_and_line_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let recs = vec![
            SourceRecord {
                audio: "a.wav".into(),
                language: "en".into(),
                duration: 1.5,
                speaker: "s1".into(),
                family: None,
            },
            SourceRecord {
                audio: "b.wav".into(),
                language: "hi".into(),
                duration: 2.0,
                speaker: "s2".into(),
                family: Some("indic".into()),
            },
        ];
        write_jsonl(&recs, &p).unwrap();
        let back: Vec<SourceRecord> = read_jsonl(&p).unwrap();
        assert_eq!(back, recs);

        std::fs::write(&p, "{\"audio\":\"a\",\"language\":\"en\",\"duration\":1,\"speaker\":\"s\"}\nnot json\n").unwrap();
        match read_jsonl::<SourceRecord>(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
