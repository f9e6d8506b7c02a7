use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use mixlm_core::counts::NgramCountTable;
use mixlm_core::interp::{read_weights, Component, ComponentSet, WeightVector};
use mixlm_core::lm::{read_arpa, read_arpa_with_vocab, BackoffLm};
use mixlm_core::vocab::Vocabulary;

pub fn open(path: &Path) -> Result<BufReader<File>> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(file))
}

/// Writes through a temporary file in the destination directory and renames
/// it into place, so a failed run never leaves a truncated output behind.
pub fn write_atomic<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<&mut File>) -> Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)
        .with_context(|| format!("cannot create a temporary file in {}", dir.display()))?;
    {
        let mut sink = BufWriter::new(tmp.as_file_mut());
        body(&mut sink)?;
        sink.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

pub fn read_vocab(path: &Path) -> Result<Vocabulary> {
    Vocabulary::read(open(path)?).with_context(|| format!("reading vocabulary {}", path.display()))
}

pub fn read_model(path: &Path, vocab: Option<&Arc<Vocabulary>>) -> Result<BackoffLm> {
    let source = open(path)?;
    let lm = match vocab {
        Some(v) => read_arpa_with_vocab(source, v.clone()),
        None => read_arpa(source),
    };
    lm.with_context(|| format!("reading model {}", path.display()))
}

/// The model's `domain` metadata, else the file stem.
fn component_name(lm: &BackoffLm, path: &Path) -> String {
    lm.meta("domain")
        .map(str::to_string)
        .or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| path.display().to_string())
}

/// Loads models sharing the first model's vocabulary, with optional counts
/// given in the same order.
pub fn load_components(models: &[PathBuf], counts: &[PathBuf]) -> Result<ComponentSet> {
    if models.is_empty() {
        bail!("at least one --lm is required");
    }
    if !counts.is_empty() && counts.len() != models.len() {
        bail!(
            "--counts must be given once per --lm ({} models, {} count files)",
            models.len(),
            counts.len()
        );
    }
    let first = read_model(&models[0], None)?;
    let vocab = first.vocab().clone();
    let mut loaded = vec![first];
    for path in &models[1..] {
        loaded.push(read_model(path, Some(&vocab))?);
    }
    let mut components = Vec::with_capacity(models.len());
    for (i, (lm, path)) in loaded.into_iter().zip(models).enumerate() {
        let table = match counts.get(i) {
            Some(cpath) => Some(
                NgramCountTable::read(&vocab, open(cpath)?)
                    .with_context(|| format!("reading counts {}", cpath.display()))?,
            ),
            None => None,
        };
        let name = component_name(&lm, path);
        components.push(Component::new(name, lm, table));
    }
    let mut names: Vec<&str> = components.iter().map(|c| c.name.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        bail!("component names must be distinct; got {names:?}");
    }
    Ok(ComponentSet::new(components)?)
}

/// `uniform`, or a weights file whose names are matched to the components.
pub fn load_weights(spec: &str, comps: &ComponentSet) -> Result<WeightVector> {
    if spec == "uniform" {
        return Ok(WeightVector::uniform(comps.len())?);
    }
    let path = Path::new(spec);
    let (names, weights) =
        read_weights(open(path)?).with_context(|| format!("reading weights {}", path.display()))?;
    if names.len() != comps.len() {
        bail!(
            "{} has {} weights for {} components",
            path.display(),
            names.len(),
            comps.len()
        );
    }
    let mut ordered = Vec::with_capacity(names.len());
    for name in comps.names() {
        let j = names
            .iter()
            .position(|n| n == name)
            .with_context(|| format!("{} has no weight for component {name}", path.display()))?;
        ordered.push(weights[j]);
    }
    Ok(WeightVector::new(ordered)?)
}
