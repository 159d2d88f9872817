//! Writing synthetic tasks to disk.

use std::path::Path;

use recycle_core::synth::{make_copy_task, make_task, CipherLang, Script, SplitCorpus, TaskSpec};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::io::{write_json, write_task};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub task: TaskSpec,
    /// `None` for a copy task.
    pub cipher_name: Option<String>,
    pub target_script: Option<Script>,
    pub cipher_seed: Option<u64>,
    pub source_script: Script,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

/// Generates a task and writes `{train,dev,test}.{src,tgt}` plus
/// `manifest.json` into `dir`.
pub fn write_synth(dir: &Path, spec: &TaskSpec, cipher: Option<&CipherLang>) -> Result<(SplitCorpus, Manifest)> {
    let corpus = match cipher {
        Some(c) => make_task(spec, c)?,
        None => make_copy_task(spec)?,
    };
    write_task(dir, &corpus)?;
    let (train, dev, test) = corpus.sizes();
    let manifest = Manifest {
        task: *spec,
        cipher_name: cipher.map(|c| c.name.clone()),
        target_script: cipher.map(|c| c.script),
        cipher_seed: cipher.map(|c| c.seed),
        source_script: Script::Latin,
        train,
        dev,
        test,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok((corpus, manifest))
}
