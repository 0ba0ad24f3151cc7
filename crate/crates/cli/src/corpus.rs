//! Corpus files: line-delimited JSON records with `text` and `score`
//! fields, or a two-column CSV with a `text,score` header. The format is
//! picked by file extension: `.csv` reads and writes CSV, anything else is
//! JSONL. Scores are validated on load and each example carries its derived
//! class label.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use daomix::data::{Dataset, Example};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Serialize, Deserialize)]
struct RawRecord {
    text: String,
    score: f64,
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .map(|e| e.eq_ignore_ascii_case("csv"))
        .unwrap_or(false)
}

pub fn load(path: &Path) -> Result<Dataset> {
    let display = path.display();
    if is_csv(path) {
        let mut reader = csv::Reader::from_path(path)
            .map_err(|e| CliError::Data(format!("{display}: {e}")))?;
        let headers = reader
            .headers()
            .map_err(|e| CliError::Data(format!("{display}: {e}")))?;
        if headers.iter().collect::<Vec<_>>() != ["text", "score"] {
            return Err(CliError::Data(format!(
                "{display}: header must be exactly `text,score`, got {headers:?}"
            )));
        }
        let mut examples = Vec::new();
        for (i, row) in reader.deserialize::<RawRecord>().enumerate() {
            let raw: RawRecord =
                row.map_err(|e| CliError::Data(format!("{display} row {}: {e}", i + 2)))?;
            examples.push(
                Example::new(raw.text, raw.score)
                    .map_err(|e| CliError::Data(format!("{display} row {}: {e}", i + 2)))?,
            );
        }
        Dataset::new(examples).map_err(CliError::from)
    } else {
        let text =
            fs::read_to_string(path).map_err(|e| CliError::Data(format!("{display}: {e}")))?;
        let mut examples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let raw: RawRecord = serde_json::from_str(line)
                .map_err(|e| CliError::Data(format!("{display} line {}: {e}", i + 1)))?;
            examples.push(
                Example::new(raw.text, raw.score)
                    .map_err(|e| CliError::Data(format!("{display} line {}: {e}", i + 1)))?,
            );
        }
        Dataset::new(examples).map_err(CliError::from)
    }
}

pub fn save(data: &Dataset, path: &Path) -> Result<()> {
    let display = path.display();
    if is_csv(path) {
        let mut writer = csv::Writer::from_path(path)
            .map_err(|e| CliError::Data(format!("{display}: {e}")))?;
        for e in data.iter() {
            writer
                .serialize(RawRecord {
                    text: e.text.clone(),
                    score: e.score,
                })
                .map_err(|err| CliError::Data(format!("{display}: {err}")))?;
        }
        writer
            .flush()
            .map_err(|e| CliError::Data(format!("{display}: {e}")))?;
        Ok(())
    } else {
        let file = fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        for e in data.iter() {
            let raw = RawRecord {
                text: e.text.clone(),
                score: e.score,
            };
            let line = serde_json::to_string(&raw)
                .map_err(|err| CliError::Data(format!("{display}: {err}")))?;
            writeln!(w, "{line}")?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use daomix::data::{generate, SynthConfig};

    fn sample() -> Dataset {
        generate(&SynthConfig {
            n: 25,
            mix: [0.2; 5],
            noise: 0.3,
            seed: 5,
        })
        .unwrap()
    }

    #[test]
    fn jsonl_roundtrip_preserves_scores_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let data = sample();
        save(&data, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(data.len(), back.len());
        for (a, b) in data.iter().zip(back.iter()) {
            assert_eq!(a.text, b.text);
            assert_eq!(a.score.to_bits(), b.score.to_bits());
            assert_eq!(a.label, b.label);
        }
    }

    #[test]
    fn csv_roundtrip_preserves_scores_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.csv");
        let data = sample();
        save(&data, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("text,score\n"));
        let back = load(&path).unwrap();
        for (a, b) in data.iter().zip(back.iter()) {
            assert_eq!(a.text, b.text);
            assert_eq!(a.score.to_bits(), b.score.to_bits());
        }
    }

    #[test]
    fn rejects_bad_records() {
        let dir = tempfile::tempdir().unwrap();
        let bad_score = dir.path().join("bad.jsonl");
        fs::write(&bad_score, "{\"text\":\"hi\",\"score\":2.0}\n").unwrap();
        assert!(load(&bad_score).is_err());

        let bad_json = dir.path().join("broken.jsonl");
        fs::write(&bad_json, "not json\n").unwrap();
        assert!(load(&bad_json).is_err());

        let bad_header = dir.path().join("bad.csv");
        fs::write(&bad_header, "words,value\nhi,0.5\n").unwrap();
        assert!(load(&bad_header).is_err());

        let empty = dir.path().join("empty.jsonl");
        fs::write(&empty, "").unwrap();
        assert!(load(&empty).is_err());
    }
}
