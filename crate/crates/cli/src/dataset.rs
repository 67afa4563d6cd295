//! Resolves the input matrix and labels named by a run configuration.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use neural_nmf::data::{load_labels, load_term_doc, read_matrix_csv, synth_hier};
use neural_nmf::DenseMatrix;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InputSource {
    Synthetic { seed: u64 },
    File { data: HashedFile, labels: Option<HashedFile> },
}

#[derive(Debug, Clone, Serialize)]
pub struct HashedFile {
    pub path: String,
    pub sha256: String,
}

impl HashedFile {
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Self {
            path: path.display().to_string(),
            sha256: object_hash(&bytes),
        })
    }
}

/// Git-style object id: SHA-256 over `blob <len>\0` followed by the content.
pub fn object_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: DenseMatrix,
    pub labels: Option<Vec<usize>>,
    pub classes: usize,
    pub vocabulary: Vec<String>,
    pub source: InputSource,
}

/// Whether the first line of a CSV file is entirely numeric, meaning the
/// file is a headerless matrix rather than a labelled term-document table.
fn is_headerless_matrix(path: &Path) -> Result<bool> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let first = text.lines().next().unwrap_or("");
    if first.starts_with("%%MatrixMarket") {
        return Ok(false);
    }
    Ok(first.split(',').all(|f| f.trim().parse::<f64>().is_ok()))
}

pub fn load(cfg: &RunConfig) -> Result<Dataset> {
    let Some(path) = cfg.data.as_deref() else {
        if cfg.labels.is_some() {
            bail!("labels given without a data file");
        }
        let d = synth_hier(cfg.data_seed);
        return Ok(Dataset {
            vocabulary: (0..d.x.rows()).map(|i| i.to_string()).collect(),
            classes: d.classes(),
            labels: Some(d.labels),
            x: d.x,
            source: InputSource::Synthetic { seed: cfg.data_seed },
        });
    };
    let data = HashedFile::read(path)?;
    let labels_file = cfg.labels.as_deref().map(HashedFile::read).transpose()?;
    let (x, vocabulary, labels, classes) = if is_headerless_matrix(path)? {
        let x = read_matrix_csv(path).with_context(|| format!("parsing {}", path.display()))?;
        x.check_nonnegative().with_context(|| format!("checking {}", path.display()))?;
        let docs: Vec<String> = (0..x.cols()).map(|j| j.to_string()).collect();
        let (labels, classes) = match cfg.labels.as_deref() {
            Some(p) => {
                let (l, names) = load_labels(p, &docs).with_context(|| format!("parsing {}", p.display()))?;
                (Some(l), names.len())
            }
            None => (None, 0),
        };
        let vocab = (0..x.rows()).map(|i| i.to_string()).collect();
        (x, vocab, labels, classes)
    } else {
        let doc = load_term_doc(path, cfg.labels.as_deref()).with_context(|| format!("loading {}", path.display()))?;
        let classes = doc.classes();
        (doc.matrix, doc.vocabulary, doc.labels, classes)
    };
    if x.rows() == 0 || x.cols() == 0 {
        bail!("{} holds an empty matrix", path.display());
    }
    Ok(Dataset {
        x,
        labels,
        classes,
        vocabulary,
        source: InputSource::File { data, labels: labels_file },
    })
}
