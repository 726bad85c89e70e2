use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cortex_align::ablation::{FinetuneConfig, Protocol, SuiteConfig};
use cortex_align::dataset::{EMBEDDINGS_FILE, VOCAB_FILE};
use cortex_align::decode::DEFAULT_PROMPT;
use cortex_align::pipeline::PipelineConfig;
use cortex_align::split::{make_split, Selection, SubjectSplit};
use cortex_align::synth::SynthConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

/// `surrogate` or `bridge:URL`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BackendChoice {
    Surrogate,
    Bridge(String),
}

impl FromStr for BackendChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.split_once(':') {
            _ if s == "surrogate" => Ok(BackendChoice::Surrogate),
            Some(("bridge", url)) if !url.is_empty() => Ok(BackendChoice::Bridge(url.to_string())),
            _ => Err(format!("backend must be `surrogate` or `bridge:URL`, got `{s}`")),
        }
    }
}

impl Serialize for BackendChoice {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            BackendChoice::Surrogate => s.serialize_str("surrogate"),
            BackendChoice::Bridge(url) => s.serialize_str(&format!("bridge:{url}")),
        }
    }
}

impl<'de> Deserialize<'de> for BackendChoice {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Which subjects are held out: `subjects` if non-empty, otherwise a seeded
/// draw of `mask` subjects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub mask: usize,
    pub subjects: Vec<String>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            mask: 1,
            subjects: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub protocol: Protocol,
    pub suite: SuiteConfig,
    pub finetune: FinetuneConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Defaults to `<data_dir>/embeddings.eegt`.
    pub embedding_table: Option<PathBuf>,
    /// Defaults to `<data_dir>/vocab.txt`.
    pub vocab: Option<PathBuf>,
    pub seed: u64,
    pub backend: BackendChoice,
    pub precision: Precision,
    pub prompt: String,
    pub max_tokens: usize,
    pub split: SplitConfig,
    /// Generator settings for `gen-data`; its `seed` is replaced by `seed`.
    pub synth: SynthConfig,
    pub pipeline: PipelineConfig,
    pub ablation: AblationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            embedding_table: None,
            vocab: None,
            seed: 0,
            backend: BackendChoice::Surrogate,
            precision: Precision::F32,
            prompt: DEFAULT_PROMPT.to_string(),
            max_tokens: cortex_align::decode::DEFAULT_MAX_TOKENS,
            split: SplitConfig::default(),
            synth: SynthConfig::default(),
            pipeline: PipelineConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.precision == Precision::F64 {
            return Err(CliError::Config(
                "precision f64 is reserved for gradient checks; the pipeline trains in f32".into(),
            ));
        }
        if self.max_tokens == 0 {
            return Err(CliError::Config("max_tokens must be positive".into()));
        }
        if self.prompt.trim().is_empty() {
            return Err(CliError::Config("prompt must be non-empty".into()));
        }
        Ok(())
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.data_dir.join(cortex_align::dataset::MANIFEST_FILE)
    }

    pub fn table_paths(&self) -> (PathBuf, PathBuf) {
        (
            self.embedding_table
                .clone()
                .unwrap_or_else(|| self.data_dir.join(EMBEDDINGS_FILE)),
            self.vocab.clone().unwrap_or_else(|| self.data_dir.join(VOCAB_FILE)),
        )
    }

    pub fn subject_split(&self, subjects: &[String]) -> Result<SubjectSplit> {
        let selection = if self.split.subjects.is_empty() {
            Selection::Seeded(self.seed)
        } else {
            Selection::Explicit(self.split.subjects.clone())
        };
        let k = if self.split.subjects.is_empty() {
            self.split.mask
        } else {
            self.split.subjects.len()
        };
        Ok(make_split(subjects, k, &selection)?)
    }

    /// Per-split run directory under `out_dir`, e.g. `out/mask1_sub03`.
    pub fn run_dir(&self, split: &SubjectSplit) -> PathBuf {
        self.out_dir.join(split.label().replace([':', '+'], "_"))
    }
}
