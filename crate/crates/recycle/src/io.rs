//! Corpus, vocabulary and JSON files.

use std::fs;
use std::path::{Path, PathBuf};

use recycle_core::synth::SplitCorpus;
use recycle_core::Vocabulary;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Writes through a sibling temporary file so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    String::from_utf8(bytes).map_err(|e| Error::format(path, format!("not UTF-8: {e}")))
}

/// One sentence per line; a final newline does not add an empty sentence.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = read_text(path)?;
    let body = text.strip_suffix('\n').unwrap_or(&text);
    if body.is_empty() && text.len() <= 1 {
        return Ok(Vec::new());
    }
    Ok(body.split('\n').map(str::to_string).collect())
}

pub fn write_lines<S: AsRef<str>>(path: &Path, lines: &[S]) -> Result<()> {
    let mut out = String::new();
    for l in lines {
        out.push_str(l.as_ref());
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_parallel(src: &Path, tgt: &Path) -> Result<Vec<(String, String)>> {
    let s = read_lines(src)?;
    let t = read_lines(tgt)?;
    if s.len() != t.len() {
        return Err(Error::format(
            tgt,
            format!("{} lines but {} has {}", t.len(), src.display(), s.len()),
        ));
    }
    Ok(s.into_iter().zip(t).collect())
}

pub fn write_parallel(stem: &Path, pairs: &[(String, String)]) -> Result<()> {
    let src: Vec<&str> = pairs.iter().map(|p| p.0.as_str()).collect();
    let tgt: Vec<&str> = pairs.iter().map(|p| p.1.as_str()).collect();
    write_lines(&with_ext(stem, "src"), &src)?;
    write_lines(&with_ext(stem, "tgt"), &tgt)
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// A task directory holds `{train,dev,test}.{src,tgt}`.
pub fn read_task(dir: &Path) -> Result<SplitCorpus> {
    let part = |name: &str| read_parallel(&dir.join(format!("{name}.src")), &dir.join(format!("{name}.tgt")));
    Ok(SplitCorpus { train: part("train")?, dev: part("dev")?, test: part("test")? })
}

pub fn write_task(dir: &Path, corpus: &SplitCorpus) -> Result<()> {
    write_parallel(&dir.join("train"), &corpus.train)?;
    write_parallel(&dir.join("dev"), &corpus.dev)?;
    write_parallel(&dir.join("test"), &corpus.test)
}

pub fn read_vocab(path: &Path) -> Result<Vocabulary> {
    let text = read_text(path)?;
    Vocabulary::from_text(&text).map_err(|e| match e {
        recycle_core::Error::Parse { line, message } => {
            Error::format(path, format!("line {line}: {message}"))
        }
        other => Error::format(path, other.to_string()),
    })
}

pub fn write_vocab(path: &Path, vocab: &Vocabulary) -> Result<()> {
    write_atomic(path, vocab.to_text().as_bytes())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Tab separated table with a header row.
pub fn write_tsv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = header.join("\t");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join("\t"));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}
