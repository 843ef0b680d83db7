//! Corpus, frames and embedding files.
//!
//! Corpus and frames are JSON lines; embeddings are plain text with a
//! `vocab d_emb` header followed by one whitespace-separated vector per line.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::encoders::{EmbeddedSample, FrameKnowledge, MatchKind, Span};
use crate::error::{Error, Result};
use crate::numerics::linalg::Mat;
use crate::prior::Mode;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetPaths {
    pub corpus: PathBuf,
    pub frames: PathBuf,
    pub embeddings: PathBuf,
}

impl DatasetPaths {
    /// `corpus.jsonl`, `frames.jsonl` and `embeddings.txt` inside `dir`.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        DatasetPaths {
            corpus: dir.join("corpus.jsonl"),
            frames: dir.join("frames.jsonl"),
            embeddings: dir.join("embeddings.txt"),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusRecord {
    tokens: Vec<u32>,
    trigger: [usize; 2],
    label: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameRecord {
    #[serde(rename = "type")]
    event_type: String,
    definition: Vec<u32>,
    arguments: Vec<Vec<[usize; 2]>>,
    lus: Vec<u32>,
    match_kind: MatchKind,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_embeddings(path: &Path) -> Result<Mat> {
    let text = read(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::load(path, 1, "missing `vocab d_emb` header"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::load(path, 1, format!("bad header: {e}")))?;
    let [vocab, d_emb] = dims[..] else {
        return Err(Error::load(path, 1, "header must be `vocab d_emb`"));
    };
    if d_emb == 0 {
        return Err(Error::load(path, 1, "d_emb must be positive"));
    }
    let mut data = Vec::with_capacity(vocab * d_emb);
    let mut rows = 0;
    for (i, line) in lines {
        let row: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::load(path, i + 1, format!("bad number: {e}")))?;
        if row.len() != d_emb {
            return Err(Error::load(
                path,
                i + 1,
                format!("expected {d_emb} values, found {}", row.len()),
            ));
        }
        if row.iter().any(|x| !x.is_finite()) {
            return Err(Error::load(path, i + 1, "non-finite embedding value"));
        }
        data.extend(row);
        rows += 1;
    }
    if rows != vocab {
        return Err(Error::load(
            path,
            1,
            format!("header declares {vocab} vectors, file has {rows}"),
        ));
    }
    Mat::from_vec(vocab, d_emb, data)
}

fn lookup(table: &Mat, ids: &[u32], path: &Path, line: usize) -> Result<Mat> {
    let mut data = Vec::with_capacity(ids.len() * table.cols());
    for &id in ids {
        if id as usize >= table.rows() {
            return Err(Error::load(
                path,
                line,
                format!("unknown token id {id} (vocabulary has {})", table.rows()),
            ));
        }
        data.extend_from_slice(table.row(id as usize));
    }
    Mat::from_vec(ids.len(), table.cols(), data)
}

fn json_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>> {
    let text = read(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map(|r| (i + 1, r))
                .map_err(|e| Error::load(path, i + 1, e.to_string()))
        })
        .collect()
}

/// Reads the three files into a [`Dataset`].
///
/// The registry lists frame types in first-appearance order. Corpus types
/// without a frame are an error in knowledge modes; otherwise they are
/// appended in corpus order with a warning.
pub fn load_dataset(paths: &DatasetPaths, mode: Mode) -> Result<Dataset> {
    let table = load_embeddings(&paths.embeddings)?;
    let mut dataset = Dataset::empty(table.cols());
    dataset.embeddings = table;

    for (line, rec) in json_lines::<FrameRecord>(&paths.frames)? {
        let path = &paths.frames;
        if dataset.frames.contains_key(&rec.event_type) {
            return Err(Error::load(
                path,
                line,
                format!("duplicate frame for type {}", rec.event_type),
            ));
        }
        let frame = FrameKnowledge {
            definition_tokens: lookup(&dataset.embeddings, &rec.definition, path, line)?,
            lu_tokens: lookup(&dataset.embeddings, &rec.lus, path, line)?,
            definition_ids: rec.definition,
            lu_ids: rec.lus,
            argument_spans: rec
                .arguments
                .iter()
                .map(|a| a.iter().map(|&[b, e]| Span::new(b, e)).collect())
                .collect(),
            match_kind: rec.match_kind,
            event_type: rec.event_type.clone(),
        };
        frame.validate().map_err(|e| Error::load(path, line, e.to_string()))?;
        dataset.type_registry.push(rec.event_type.clone());
        dataset.frames.insert(rec.event_type, frame);
    }

    for (line, rec) in json_lines::<CorpusRecord>(&paths.corpus)? {
        let path = &paths.corpus;
        if !dataset.frames.contains_key(&rec.label) && dataset.type_index(&rec.label).is_none() {
            if mode.uses_knowledge() {
                return Err(Error::load(
                    path,
                    line,
                    format!("type {} has no frame; {mode} mode needs one", rec.label),
                ));
            }
            log::warn!("{}:{line}: type {} has no frame", path.display(), rec.label);
            dataset.type_registry.push(rec.label.clone());
        }
        let sample = EmbeddedSample {
            tokens: lookup(&dataset.embeddings, &rec.tokens, path, line)?,
            token_ids: rec.tokens,
            trigger: Span::new(rec.trigger[0], rec.trigger[1]),
            label: Some(rec.label),
        };
        sample.validate().map_err(|e| Error::load(path, line, e.to_string()))?;
        dataset.samples.push(sample);
    }
    Ok(dataset)
}

/// Writes the dataset so that [`load_dataset`] reproduces it exactly.
/// Frames go out in registry order.
pub fn save_dataset(dataset: &Dataset, paths: &DatasetPaths) -> Result<()> {
    let mut emb = format!("{} {}\n", dataset.embeddings.rows(), dataset.embeddings.cols());
    for row in dataset.embeddings.row_iter() {
        let parts: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
        emb.push_str(&parts.join(" "));
        emb.push('\n');
    }

    let mut frames = String::new();
    let mut frameless = Vec::new();
    for t in &dataset.type_registry {
        let Some(f) = dataset.frames.get(t) else {
            frameless.push(t.as_str());
            continue;
        };
        if !frameless.is_empty() {
            return Err(Error::Input(format!(
                "types without frames ({}) must come after framed types to survive a reload",
                frameless.join(", ")
            )));
        }
        let rec = FrameRecord {
            event_type: t.clone(),
            definition: f.definition_ids.clone(),
            arguments: f
                .argument_spans
                .iter()
                .map(|a| a.iter().map(|s| [s.start, s.end]).collect())
                .collect(),
            lus: f.lu_ids.clone(),
            match_kind: f.match_kind,
        };
        writeln!(frames, "{}", serde_json::to_string(&rec)?).expect("string write");
    }

    let mut corpus = String::new();
    for s in &dataset.samples {
        let rec = CorpusRecord {
            tokens: s.token_ids.clone(),
            trigger: [s.trigger.start, s.trigger.end],
            label: s
                .label
                .clone()
                .ok_or_else(|| Error::Input("corpus samples must be labeled".into()))?,
        };
        writeln!(corpus, "{}", serde_json::to_string(&rec)?).expect("string write");
    }

    write(&paths.embeddings, &emb)?;
    write(&paths.frames, &frames)?;
    write(&paths.corpus, &corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_files(dir: &Path, emb: &str, frames: &str, corpus: &str) -> DatasetPaths {
        let p = DatasetPaths::in_dir(dir);
        fs::write(&p.embeddings, emb).unwrap();
        fs::write(&p.frames, frames).unwrap();
        fs::write(&p.corpus, corpus).unwrap();
        p
    }

    const EMB: &str = "3 2\n0.5 1\n-1 2\n0 0.25\n";
    const FRAME: &str =
        r#"{"type":"attack","definition":[0,1,2],"arguments":[[[0,0]],[[1,2]]],"lus":[1],"match_kind":"exact"}"#;

    #[test]
    fn empty_corpus_is_an_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_files(dir.path(), EMB, "", "");
        let d = load_dataset(&p, Mode::Ake).unwrap();
        assert!(d.samples.is_empty());
        assert!(d.type_registry.is_empty());
    }

    #[test]
    fn unknown_type_is_named_with_its_line() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = "{\"tokens\":[0,1],\"trigger\":[0,0],\"label\":\"attack\"}\n{\"tokens\":[2],\"trigger\":[0,0],\"label\":\"marry\"}\n";
        let p = write_files(dir.path(), EMB, FRAME, corpus);
        let err = load_dataset(&p, Mode::Kb).unwrap_err().to_string();
        assert!(err.contains("marry") && err.contains(":2"), "{err}");
        let d = load_dataset(&p, Mode::Ta).unwrap();
        assert_eq!(d.type_registry, vec!["attack", "marry"]);
        assert_eq!(d.samples[1].tokens.row(0), &[0.0, 0.25]);
    }

    #[test]
    fn bad_token_and_span_report_lines() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = "{\"tokens\":[0],\"trigger\":[0,0],\"label\":\"attack\"}\n{\"tokens\":[7],\"trigger\":[0,0],\"label\":\"attack\"}\n";
        let p = write_files(dir.path(), EMB, FRAME, corpus);
        let err = load_dataset(&p, Mode::Ake).unwrap_err().to_string();
        assert!(err.contains("corpus.jsonl:2") && err.contains("7"), "{err}");

        let corpus = "{\"tokens\":[0],\"trigger\":[0,1],\"label\":\"attack\"}\n";
        let p = write_files(dir.path(), EMB, FRAME, corpus);
        let err = load_dataset(&p, Mode::Ake).unwrap_err().to_string();
        assert!(err.contains("corpus.jsonl:1"), "{err}");
    }

    #[test]
    fn embedding_header_must_match() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_files(dir.path(), "4 2\n0 0\n", FRAME, "");
        assert!(load_dataset(&p, Mode::Ake).is_err());
    }
}
