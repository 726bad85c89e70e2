//! Dataset manifest, vocabulary and embedding-table files.
//!
//! A dataset directory holds `manifest.json`, one `EEGT` tensor per sample
//! (paths in the manifest are relative to the manifest's directory), and
//! optionally `vocab.txt` plus `embeddings.eegt` describing the target token
//! embedding space.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{adaptive_avg_pool, EegRecording, PooledSignal};
use crate::tensor::{Tensor, EEGT_MAGIC};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const EMBEDDINGS_FILE: &str = "embeddings.eegt";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub tensor: PathBuf,
    pub subject: String,
    pub token_id: usize,
    pub token_text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub subjects: Vec<String>,
    pub samples: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let subjects: HashSet<&str> = self.subjects.iter().map(String::as_str).collect();
        if subjects.len() != self.subjects.len() {
            return Err(Error::data("duplicate subject ids in manifest"));
        }
        for (i, s) in self.samples.iter().enumerate() {
            let name = s.tensor.display();
            if !subjects.contains(s.subject.as_str()) {
                return Err(Error::data(format!(
                    "sample {i} ({name}): subject {:?} is not listed",
                    s.subject
                )));
            }
            if s.token_id >= self.vocab_size {
                return Err(Error::data(format!(
                    "sample {i} ({name}): token_id {} >= vocab_size {}",
                    s.token_id, self.vocab_size
                )));
            }
            if s.token_text.is_empty() {
                return Err(Error::data(format!("sample {i} ({name}): empty token_text")));
            }
        }
        Ok(())
    }

    pub fn counts_per_subject(&self) -> BTreeMap<String, usize> {
        let mut counts: BTreeMap<String, usize> = self.subjects.iter().map(|s| (s.clone(), 0)).collect();
        for s in &self.samples {
            *counts.entry(s.subject.clone()).or_default() += 1;
        }
        counts
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}

/// A validated manifest plus the directory its tensor paths resolve against.
/// Recordings are read on demand.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

fn read_header(path: &Path) -> Result<Vec<usize>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    if &word != EEGT_MAGIC {
        return Err(Error::data("bad magic"));
    }
    r.read_exact(&mut word)?;
    r.read_exact(&mut word)?;
    let ndim = u32::from_le_bytes(word) as usize;
    let mut wide = [0u8; 8];
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        r.read_exact(&mut wide)?;
        dims.push(u64::from_le_bytes(wide) as usize);
    }
    let expected = 12 + 8 * ndim as u64 + 4 * dims.iter().product::<usize>() as u64;
    let actual = fs::metadata(path)?.len();
    if actual != expected {
        return Err(Error::data(format!(
            "file is {actual} bytes, header implies {expected}"
        )));
    }
    Ok(dims)
}

impl Dataset {
    /// Loads `manifest.json` (or the given manifest file) and checks every
    /// referenced tensor's header without reading payloads.
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let mut path = manifest_path.as_ref().to_path_buf();
        if path.is_dir() {
            path = path.join(MANIFEST_FILE);
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::load(&path, e.to_string()))?;
        let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::load(&path, e.to_string()))?;
        manifest.validate().map_err(|e| Error::load(&path, e.to_string()))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let dataset = Dataset { root, manifest };
        let mut channels = None;
        for (i, s) in dataset.manifest.samples.iter().enumerate() {
            let p = dataset.root.join(&s.tensor);
            let dims = read_header(&p).map_err(|e| Error::load(&p, format!("sample {i}: {e}")))?;
            match dims.as_slice() {
                [c, t] if *t >= 1 => {
                    if *channels.get_or_insert(*c) != *c {
                        return Err(Error::load(
                            &p,
                            format!("sample {i}: {c} channels, expected {}", channels.unwrap()),
                        ));
                    }
                }
                _ => {
                    return Err(Error::load(
                        &p,
                        format!("sample {i}: expected a [C, T] tensor, got {dims:?}"),
                    ))
                }
            }
        }
        Ok(dataset)
    }

    pub fn len(&self) -> usize {
        self.manifest.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.samples.is_empty()
    }

    pub fn recording(&self, index: usize) -> Result<EegRecording> {
        let s = self
            .manifest
            .samples
            .get(index)
            .ok_or_else(|| Error::param(format!("sample index {index} out of range")))?;
        let path = self.root.join(&s.tensor);
        let values = Tensor::load(&path)?;
        EegRecording::new(s.subject.clone(), values).map_err(|e| Error::load(&path, e.to_string()))
    }

    /// Loads and pools every sample whose subject passes `keep`.
    pub fn pooled_samples(&self, target_len: usize, keep: impl Fn(&str) -> bool) -> Result<Vec<PooledSample>> {
        self.manifest
            .samples
            .iter()
            .enumerate()
            .filter(|(_, s)| keep(&s.subject))
            .map(|(i, s)| {
                let rec = self.recording(i)?;
                Ok(PooledSample {
                    id: sample_id(s),
                    subject: s.subject.clone(),
                    token_id: s.token_id,
                    token_text: s.token_text.clone(),
                    pooled: adaptive_avg_pool(&rec, target_len)?,
                })
            })
            .collect()
    }
}

/// Sample identifier: the tensor path's file stem.
pub fn sample_id(record: &SampleRecord) -> String {
    record
        .tensor
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| record.tensor.display().to_string())
}

/// A pooled recording with its labels, the unit every pipeline stage consumes.
#[derive(Clone, Debug, PartialEq)]
pub struct PooledSample {
    pub id: String,
    pub subject: String,
    pub token_id: usize,
    pub token_text: String,
    pub pooled: PooledSignal,
}

/// Token vocabulary paired with a `V x E_dim` embedding matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    vectors: Tensor,
    vocab: Vec<String>,
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn new(vectors: Tensor, vocab: Vec<String>) -> Result<Self> {
        let [rows, _] = *vectors.dims() else {
            return Err(Error::shape(format!(
                "embedding table must be [V, E], got {:?}",
                vectors.dims()
            )));
        };
        if rows != vocab.len() {
            return Err(Error::data(format!(
                "embedding table has {rows} rows but vocabulary has {} tokens",
                vocab.len()
            )));
        }
        let mut index = HashMap::with_capacity(vocab.len());
        for (i, tok) in vocab.iter().enumerate() {
            index.entry(tok.clone()).or_insert(i);
        }
        Ok(EmbeddingTable { vectors, vocab, index })
    }

    pub fn load(table: impl AsRef<Path>, vocab: impl AsRef<Path>) -> Result<Self> {
        let vectors = Tensor::load(table.as_ref())?;
        let vocab = read_vocab(vocab.as_ref())?;
        Self::new(vectors, vocab)
    }

    pub fn save(&self, table: impl AsRef<Path>, vocab: impl AsRef<Path>) -> Result<()> {
        self.vectors.save(table)?;
        write_vocab(vocab, &self.vocab)
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.dims()[1]
    }

    pub fn row(&self, token_id: usize) -> &[f32] {
        self.vectors.row(token_id)
    }

    pub fn vectors(&self) -> &Tensor {
        &self.vectors
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn text(&self, token_id: usize) -> &str {
        &self.vocab[token_id]
    }

    pub fn token_id(&self, text: &str) -> Option<usize> {
        self.index.get(text).copied()
    }
}

/// One token per line; the line index is the token id.
pub fn read_vocab(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::load(path, e.to_string()))?;
    Ok(parse_vocab(&text))
}

pub fn parse_vocab(text: &str) -> Vec<String> {
    let mut lines: Vec<String> = text.split('\n').map(|l| l.trim_end_matches('\r').to_owned()).collect();
    if text.ends_with('\n') {
        lines.pop();
    }
    lines
}

pub fn write_vocab(path: impl AsRef<Path>, vocab: &[String]) -> Result<()> {
    let mut text = String::new();
    for tok in vocab {
        text.push_str(tok);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}
