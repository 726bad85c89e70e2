//! Synthetic subject-confounded EEG.
//!
//! Each token owns a smooth spatio-temporal prototype shared by all subjects:
//! a sum of a few harmonics per channel, evaluated on normalized time so that
//! recordings of any length carry the same waveform. Each subject owns a
//! random channel-mixing matrix `M_s` and a per-channel offset `b_s`. A
//! recording of token `v` by subject `s` is
//!
//! ```text
//! x = p_v + confound * (M_s p_v + b_s) + noise * N(0, 1)
//! ```
//!
//! so the token signal is subject-independent and the confound is
//! subject-dependent. Recording lengths are drawn per sample index and shared
//! across subjects, which makes same-index samples exact twins when the
//! confound and noise are both zero.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{
    sample_id, DatasetManifest, EmbeddingTable, PooledSample, SampleRecord, EMBEDDINGS_FILE, MANIFEST_FILE, VOCAB_FILE,
};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::signal::{adaptive_avg_pool, EegRecording, DEFAULT_CHANNELS};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub subjects: usize,
    pub samples_per_subject: usize,
    pub vocab_size: usize,
    pub channels: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Subject-confound strength.
    pub confound: f64,
    /// Standard deviation of additive Gaussian noise.
    pub noise: f64,
    pub embedding_dim: usize,
    /// Harmonics per channel in each token prototype.
    pub harmonics: usize,
    /// Gain of the subject mixing matrix relative to the prototype.
    pub mixing_scale: f64,
    /// Standard deviation of the per-channel subject offsets.
    pub offset_scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            subjects: 10,
            samples_per_subject: 200,
            vocab_size: 50,
            channels: DEFAULT_CHANNELS,
            min_len: 280,
            max_len: 320,
            confound: 0.5,
            noise: 0.1,
            embedding_dim: 64,
            harmonics: 4,
            mixing_scale: 2.0,
            offset_scale: 2.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::param(format!(
                "vocab size must be at least 2, got {}",
                self.vocab_size
            )));
        }
        if self.subjects < 2 {
            return Err(Error::param(format!("need at least 2 subjects, got {}", self.subjects)));
        }
        if self.channels == 0 || self.embedding_dim == 0 || self.harmonics == 0 {
            return Err(Error::param("channels, embedding_dim and harmonics must be positive"));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::param(format!(
                "invalid length range [{}, {}]",
                self.min_len, self.max_len
            )));
        }
        if !(self.confound >= 0.0 && self.noise >= 0.0) {
            return Err(Error::param("confound and noise must be non-negative"));
        }
        Ok(())
    }

    pub fn subject_ids(&self) -> Vec<String> {
        let width = self.subjects.to_string().len().max(2);
        (1..=self.subjects).map(|i| format!("sub{i:0width$}")).collect()
    }
}

/// Single-character token texts starting at U+4E00.
pub fn synthetic_vocab(size: usize) -> Vec<String> {
    (0..size)
        .map(|i| {
            char::from_u32(0x4E00 + i as u32)
                .expect("CJK block is contiguous")
                .to_string()
        })
        .collect()
}

struct Prototype {
    // [channel][harmonic] -> (amplitude, phase)
    coeffs: Vec<Vec<(f64, f64)>>,
}

impl Prototype {
    fn random(channels: usize, harmonics: usize, rng: &mut RngStream) -> Self {
        let mut coeffs: Vec<Vec<(f64, f64)>> = (0..channels)
            .map(|_| (0..harmonics).map(|_| (rng.normal(), rng.uniform(0.0, TAU))).collect())
            .collect();
        // mean power of a*sin is a^2/2; normalize to unit RMS per element
        let power: f64 = coeffs.iter().flatten().map(|(a, _)| a * a / 2.0).sum::<f64>() / channels as f64;
        let scale = 1.0 / power.sqrt();
        coeffs.iter_mut().flatten().for_each(|(a, _)| *a *= scale);
        Prototype { coeffs }
    }

    fn sample(&self, len: usize) -> Vec<f64> {
        let channels = self.coeffs.len();
        let mut out = vec![0.0; channels * len];
        for (c, harmonics) in self.coeffs.iter().enumerate() {
            for t in 0..len {
                let tau = (t as f64 + 0.5) / len as f64;
                out[c * len + t] = harmonics
                    .iter()
                    .enumerate()
                    .map(|(k, (a, phi))| a * (TAU * (k + 1) as f64 * tau + phi).sin())
                    .sum();
            }
        }
        out
    }
}

struct SubjectConfound {
    mixing: Vec<f64>,
    offset: Vec<f64>,
}

impl SubjectConfound {
    fn random(channels: usize, mixing_scale: f64, offset_scale: f64, rng: &mut RngStream) -> Self {
        let sd = mixing_scale / (channels as f64).sqrt();
        SubjectConfound {
            mixing: (0..channels * channels).map(|_| sd * rng.normal()).collect(),
            offset: (0..channels).map(|_| offset_scale * rng.normal()).collect(),
        }
    }

    fn apply(&self, base: &[f64], channels: usize, len: usize, strength: f64) -> Vec<f64> {
        let mut out = base.to_vec();
        if strength == 0.0 {
            return out;
        }
        for c in 0..channels {
            let row = &self.mixing[c * channels..(c + 1) * channels];
            for t in 0..len {
                let mixed: f64 = row.iter().enumerate().map(|(j, m)| m * base[j * len + t]).sum();
                out[c * len + t] += strength * (mixed + self.offset[c]);
            }
        }
        out
    }
}

/// A generated dataset held in memory; recordings are aligned with
/// `manifest.samples`.
#[derive(Clone, Debug)]
pub struct SynthData {
    pub manifest: DatasetManifest,
    pub recordings: Vec<EegRecording>,
    pub table: EmbeddingTable,
}

impl SynthData {
    /// Pools every recording whose subject passes `keep`.
    pub fn pooled(&self, target_len: usize, keep: impl Fn(&str) -> bool) -> Result<Vec<PooledSample>> {
        self.manifest
            .samples
            .iter()
            .zip(&self.recordings)
            .filter(|(s, _)| keep(&s.subject))
            .map(|(s, rec)| {
                Ok(PooledSample {
                    id: sample_id(s),
                    subject: s.subject.clone(),
                    token_id: s.token_id,
                    token_text: s.token_text.clone(),
                    pooled: adaptive_avg_pool(rec, target_len)?,
                })
            })
            .collect()
    }
}

pub fn synth_samples(config: &SynthConfig) -> Result<SynthData> {
    config.validate()?;
    let root = RngStream::new(config.seed);
    let (c, v) = (config.channels, config.vocab_size);

    let mut proto_rng = root.fork(1);
    let prototypes: Vec<Prototype> = (0..v)
        .map(|_| Prototype::random(c, config.harmonics, &mut proto_rng))
        .collect();

    let mut subject_rng = root.fork(2);
    let confounds: Vec<SubjectConfound> = (0..config.subjects)
        .map(|_| SubjectConfound::random(c, config.mixing_scale, config.offset_scale, &mut subject_rng))
        .collect();

    let mut embed_rng = root.fork(3);
    let e = config.embedding_dim;
    let scale = 1.0 / (e as f64).sqrt();
    let vectors = Tensor::from_fn(&[v, e], |_| (scale * embed_rng.normal()) as f32);
    let vocab = synthetic_vocab(v);
    let table = EmbeddingTable::new(vectors, vocab.clone())?;

    let mut len_rng = root.fork(4);
    let lengths: Vec<usize> = (0..config.samples_per_subject)
        .map(|_| config.min_len + len_rng.below(config.max_len - config.min_len + 1))
        .collect();

    let subjects = config.subject_ids();
    let mut samples = Vec::with_capacity(config.subjects * config.samples_per_subject);
    let mut recordings = Vec::with_capacity(samples.capacity());
    for (s, (subject, confound)) in subjects.iter().zip(&confounds).enumerate() {
        let mut noise_rng = root.fork(100 + s as u64);
        for (i, &len) in lengths.iter().enumerate() {
            let token = i % v;
            let base = prototypes[token].sample(len);
            let mut x = confound.apply(&base, c, len, config.confound);
            if config.noise > 0.0 {
                x.iter_mut().for_each(|val| *val += config.noise * noise_rng.normal());
            }
            let values = Tensor::from_vec(&[c, len], x.into_iter().map(|f| f as f32).collect())?;
            recordings.push(EegRecording::new(subject.clone(), values)?);
            samples.push(SampleRecord {
                tensor: PathBuf::from(format!("samples/{subject}_{i:04}.eegt")),
                subject: subject.clone(),
                token_id: token,
                token_text: vocab[token].clone(),
            });
        }
    }

    Ok(SynthData {
        manifest: DatasetManifest {
            vocab_size: v,
            embedding_dim: e,
            subjects,
            samples,
        },
        recordings,
        table,
    })
}

/// Generates a dataset and writes it under `out_dir`: the manifest, one
/// tensor per sample, the vocabulary and the target embedding table.
pub fn synth_generate(config: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let data = synth_samples(config)?;
    let out = out_dir.as_ref();
    fs::create_dir_all(out.join("samples"))?;
    for (record, rec) in data.manifest.samples.iter().zip(&data.recordings) {
        rec.values.save(out.join(&record.tensor))?;
    }
    data.table.save(out.join(EMBEDDINGS_FILE), out.join(VOCAB_FILE))?;
    data.manifest.save(out.join(MANIFEST_FILE))?;
    Ok(data.manifest)
}
