//! Turning predicted embeddings into tokens, judging them, and scoring.
//!
//! The surrogate backend returns the vocabulary row with the highest cosine
//! similarity to the prediction, which is what an ideal frozen language
//! model asked to repeat a single injected token would produce. It ignores
//! the prompt text. The bridge backend forwards prompt and embedding to an
//! HTTP service running a real model (see [`crate::bridge`]).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alignment::AlignmentModel;
use crate::autoencoder::Autoencoder;
use crate::bridge::BridgeClient;
use crate::dataset::{EmbeddingTable, PooledSample};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::split::SubjectSplit;
use crate::tensor::Tensor;

pub const DEFAULT_PROMPT: &str = "You are a helpful assistant. The user said something to you, but you didn't hear it very clearly. Don't worry about the semantics of what the user said, just try to repeat it faithfully. Your answer only needs to contain the user's words, nothing else.";

pub const DEFAULT_MAX_TOKENS: usize = 8;

/// Task prompt sent ahead of the injected embedding.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    text: String,
    #[serde(default = "default_max_tokens")]
    max_tokens: usize,
}

fn default_max_tokens() -> usize {
    DEFAULT_MAX_TOKENS
}

impl Default for PromptSpec {
    fn default() -> Self {
        PromptSpec {
            text: DEFAULT_PROMPT.to_string(),
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

impl PromptSpec {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::param("prompt text must be non-empty"));
        }
        Ok(PromptSpec {
            text,
            max_tokens: DEFAULT_MAX_TOKENS,
        })
    }

    pub fn with_max_tokens(mut self, max_tokens: usize) -> Result<Self> {
        if max_tokens == 0 {
            return Err(Error::param("max_tokens must be positive"));
        }
        self.max_tokens = max_tokens;
        Ok(self)
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn max_tokens(&self) -> usize {
        self.max_tokens
    }
}

/// Result of decoding one embedding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decoded {
    pub text: String,
    pub token_ids: Vec<usize>,
}

/// Index of the row of `table` (`[V, E]`) most cosine-similar to `pred`.
/// Ties keep the lowest id. A zero prediction uses Euclidean distance.
pub fn nearest_row(pred: &[f32], table: &Tensor) -> Result<usize> {
    let [v, e] = *table.dims() else {
        return Err(Error::shape(format!("table must be [V, E], got {:?}", table.dims())));
    };
    if v == 0 {
        return Err(Error::param("embedding table is empty"));
    }
    if pred.len() != e {
        return Err(Error::shape(format!(
            "prediction has {} dims, table has {e}",
            pred.len()
        )));
    }
    let pred_norm = pred.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for r in 0..v {
        let row = table.row(r);
        let score = if pred_norm > 0.0 {
            let mut dot = 0.0;
            let mut sq = 0.0;
            for (&a, &b) in pred.iter().zip(row) {
                dot += a as f64 * b as f64;
                sq += (b as f64).powi(2);
            }
            if sq > 0.0 {
                dot / (pred_norm * sq.sqrt())
            } else {
                0.0
            }
        } else {
            -row.iter().map(|&b| (b as f64).powi(2)).sum::<f64>()
        };
        if score > best_score {
            best_score = score;
            best = r;
        }
    }
    Ok(best)
}

pub fn surrogate_decode(pred: &[f32], table: &EmbeddingTable) -> Result<(usize, String)> {
    let id = nearest_row(pred, table.vectors())?;
    Ok((id, table.text(id).to_string()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Judgment {
    TrueCase,
    FalseCase,
}

impl Judgment {
    pub fn is_true(self) -> bool {
        self == Judgment::TrueCase
    }
}

/// A true case needs exactly one character, equal to the truth.
pub fn judge_case(predicted: &str, truth: &str) -> Result<Judgment> {
    if truth.is_empty() {
        return Err(Error::data("ground truth is empty"));
    }
    let mut chars = predicted.chars();
    let single = chars.next().is_some() && chars.next().is_none();
    Ok(if single && predicted == truth {
        Judgment::TrueCase
    } else {
        Judgment::FalseCase
    })
}

#[derive(Clone, Debug)]
pub enum DecoderBackend {
    Surrogate(EmbeddingTable),
    Bridge(BridgeClient),
}

impl DecoderBackend {
    pub fn name(&self) -> &'static str {
        match self {
            DecoderBackend::Surrogate(_) => "surrogate",
            DecoderBackend::Bridge(_) => "bridge",
        }
    }

    pub fn decode(&self, sample_id: &str, embedding: &[f32], prompt: &PromptSpec) -> Result<Decoded> {
        match self {
            DecoderBackend::Surrogate(table) => {
                let (id, text) = surrogate_decode(embedding, table)?;
                Ok(Decoded {
                    text,
                    token_ids: vec![id],
                })
            }
            DecoderBackend::Bridge(client) => {
                let resp = client
                    .generate(prompt.text(), embedding, prompt.max_tokens())
                    .map_err(|e| match e {
                        Error::Backend { reason, .. } => Error::Backend {
                            sample: sample_id.to_string(),
                            reason,
                        },
                        other => other,
                    })?;
                Ok(Decoded {
                    text: resp.text,
                    token_ids: resp.token_ids,
                })
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample_id: String,
    pub prediction: String,
    pub token_ids: Vec<usize>,
    pub truth: String,
    pub judged: Judgment,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_cases: usize,
    pub false_cases: usize,
    pub n: usize,
    pub per_class: BTreeMap<String, ClassCounts>,
}

pub const METRICS_HEADER: &str = "model,split,accuracy,precision,recall,f1,true_cases,false_cases,n";

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl MetricsReport {
    /// Macro precision, recall and F1 over the classes that occur in the
    /// ground truth. Predictions outside those classes only add misses.
    pub fn from_predictions(preds: &[Prediction]) -> Result<Self> {
        Self::from_outcomes(
            preds
                .iter()
                .map(|p| (p.prediction.clone(), p.truth.clone(), p.judged.is_true())),
        )
    }

    /// Same scoring for class-id predictions, where correct means equal ids.
    pub fn from_labels(predicted: &[usize], truth: &[usize]) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(Error::shape(format!(
                "{} predictions for {} labels",
                predicted.len(),
                truth.len()
            )));
        }
        Self::from_outcomes(
            predicted
                .iter()
                .zip(truth)
                .map(|(p, t)| (p.to_string(), t.to_string(), p == t)),
        )
    }

    fn from_outcomes(outcomes: impl Iterator<Item = (String, String, bool)>) -> Result<Self> {
        let outcomes: Vec<(String, String, bool)> = outcomes.collect();
        if outcomes.is_empty() {
            return Err(Error::param("no predictions to score"));
        }
        let mut per_class: BTreeMap<String, ClassCounts> = BTreeMap::new();
        for (_, truth, _) in &outcomes {
            per_class.entry(truth.clone()).or_default();
        }
        let mut true_cases = 0;
        for (pred, truth, correct) in &outcomes {
            if *correct {
                true_cases += 1;
                per_class.get_mut(truth).unwrap().tp += 1;
            } else {
                per_class.get_mut(truth).unwrap().fn_ += 1;
                if let Some(c) = per_class.get_mut(pred) {
                    c.fp += 1;
                }
            }
        }
        let k = per_class.len() as f64;
        let (mut precision, mut recall, mut f1) = (0.0, 0.0, 0.0);
        for c in per_class.values() {
            let p = ratio(c.tp, c.tp + c.fp);
            let r = ratio(c.tp, c.tp + c.fn_);
            precision += p;
            recall += r;
            f1 += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        }
        let n = outcomes.len();
        Ok(MetricsReport {
            accuracy: ratio(true_cases, n),
            precision: precision / k,
            recall: recall / k,
            f1: f1 / k,
            true_cases,
            false_cases: n - true_cases,
            n,
            per_class,
        })
    }

    pub fn csv_row(&self, model: &str, split: &str) -> String {
        format!(
            "{model},{split},{:.6},{:.6},{:.6},{:.6},{},{},{}",
            self.accuracy, self.precision, self.recall, self.f1, self.true_cases, self.false_cases, self.n
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub predictions: Vec<Prediction>,
}

/// Decodes and judges already-aligned embeddings.
/// `cases` holds `(sample id, truth)` for each row of `embeddings`.
pub fn evaluate_embeddings(
    cases: &[(String, String)],
    embeddings: &Tensor,
    backend: &DecoderBackend,
    prompt: &PromptSpec,
) -> Result<Evaluation> {
    if cases.is_empty() {
        return Err(Error::param("no samples to evaluate"));
    }
    if embeddings.dims().len() != 2 || embeddings.dims()[0] != cases.len() {
        return Err(Error::shape(format!(
            "{} cases but embeddings are {:?}",
            cases.len(),
            embeddings.dims()
        )));
    }
    let mut predictions = Vec::with_capacity(cases.len());
    for (i, (id, truth)) in cases.iter().enumerate() {
        let decoded = backend.decode(id, embeddings.row(i), prompt)?;
        let judged = judge_case(&decoded.text, truth).map_err(|e| Error::data(format!("sample {id}: {e}")))?;
        predictions.push(Prediction {
            sample_id: id.clone(),
            prediction: decoded.text,
            token_ids: decoded.token_ids,
            truth: truth.clone(),
            judged,
        });
    }
    Ok(Evaluation {
        report: MetricsReport::from_predictions(&predictions)?,
        predictions,
    })
}

/// Eval-mode latents of `samples` pushed through the alignment network.
pub fn align_samples(samples: &[PooledSample], ae: &Autoencoder, align: &AlignmentModel) -> Result<Tensor> {
    let rows = crate::autoencoder::extract_latents(samples, ae)?;
    let z = crate::autoencoder::latent_matrix(&rows)?;
    align.apply(&z)
}

/// Full evaluation of held-out samples. Any sample from a training subject
/// of `split` is rejected.
pub fn evaluate(
    samples: &[PooledSample],
    split: &SubjectSplit,
    ae: &Autoencoder,
    align: &AlignmentModel,
    backend: &DecoderBackend,
    prompt: &PromptSpec,
) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::param("no samples in the evaluation split"));
    }
    if let Some(s) = samples.iter().find(|s| split.is_train(&s.subject)) {
        return Err(Error::param(format!(
            "sample {} belongs to training subject {}",
            s.id, s.subject
        )));
    }
    let embeddings = align_samples(samples, ae, align)?;
    let cases: Vec<(String, String)> = samples.iter().map(|s| (s.id.clone(), s.token_text.clone())).collect();
    evaluate_embeddings(&cases, &embeddings, backend, prompt)
}

/// Scores a uniformly random token per case.
pub fn random_baseline(cases: &[(String, String)], vocab: &[String], rng: &mut RngStream) -> Result<Evaluation> {
    if vocab.is_empty() {
        return Err(Error::param("random baseline needs a non-empty vocabulary"));
    }
    if cases.is_empty() {
        return Err(Error::param("no samples to evaluate"));
    }
    let mut predictions = Vec::with_capacity(cases.len());
    for (id, truth) in cases {
        let t = rng.below(vocab.len());
        predictions.push(Prediction {
            sample_id: id.clone(),
            prediction: vocab[t].clone(),
            token_ids: vec![t],
            truth: truth.clone(),
            judged: judge_case(&vocab[t], truth)?,
        });
    }
    Ok(Evaluation {
        report: MetricsReport::from_predictions(&predictions)?,
        predictions,
    })
}

/// Writes the header and one row per `(model, split, report)`.
pub fn write_metrics_csv(path: impl AsRef<Path>, rows: &[(&str, &str, &MetricsReport)]) -> Result<()> {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for (model, split, report) in rows {
        out.push_str(&report.csv_row(model, split));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_predictions_jsonl(path: impl AsRef<Path>, preds: &[Prediction]) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    for p in preds {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions_jsonl(path: impl AsRef<Path>) -> Result<Vec<Prediction>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> EmbeddingTable {
        let vectors = Tensor::from_vec(
            &[4, 3],
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0],
        )
        .unwrap();
        EmbeddingTable::new(vectors, vec!["水".into(), "火".into(), "木".into(), "金".into()]).unwrap()
    }

    fn pred(id: &str, p: &str, t: &str) -> Prediction {
        Prediction {
            sample_id: id.into(),
            prediction: p.into(),
            token_ids: vec![],
            truth: t.into(),
            judged: judge_case(p, t).unwrap(),
        }
    }

    #[test]
    fn exact_and_scaled_rows_decode_to_themselves() {
        let t = table();
        for r in 0..4 {
            let row = t.row(r).to_vec();
            assert_eq!(surrogate_decode(&row, &t).unwrap().0, r);
            let scaled: Vec<f32> = row.iter().map(|x| x * 5.0).collect();
            assert_eq!(surrogate_decode(&scaled, &t).unwrap().0, r);
        }
    }

    #[test]
    fn ties_pick_lowest_id() {
        let vectors = Tensor::from_vec(&[3, 2], vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        let t = EmbeddingTable::new(vectors, vec!["a".into(), "b".into(), "c".into()]).unwrap();
        assert_eq!(surrogate_decode(&[2.0, 0.0], &t).unwrap().0, 1);
    }

    #[test]
    fn zero_prediction_uses_euclidean() {
        let vectors = Tensor::from_vec(&[3, 2], vec![3.0, 0.0, 0.5, 0.5, 0.0, 2.0]).unwrap();
        let t = EmbeddingTable::new(vectors, vec!["a".into(), "b".into(), "c".into()]).unwrap();
        assert_eq!(surrogate_decode(&[0.0, 0.0], &t).unwrap().0, 1);
    }

    #[test]
    fn empty_table_is_param_error() {
        assert!(matches!(
            nearest_row(&[], &Tensor::zeros(&[0, 0])),
            Err(Error::Param(_))
        ));
    }

    #[test]
    fn judging_rules() {
        assert_eq!(judge_case("水", "水").unwrap(), Judgment::TrueCase);
        assert_eq!(judge_case("水了", "水").unwrap(), Judgment::FalseCase);
        assert_eq!(judge_case("", "水").unwrap(), Judgment::FalseCase);
        assert_eq!(judge_case("火", "水").unwrap(), Judgment::FalseCase);
        assert!(matches!(judge_case("水", ""), Err(Error::Data(_))));
    }

    #[test]
    fn perfect_predictions_score_one() {
        let preds = vec![pred("a", "水", "水"), pred("b", "火", "火"), pred("c", "水", "水")];
        let m = MetricsReport::from_predictions(&preds).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
        let single = vec![pred("a", "水", "水"); 3];
        let m = MetricsReport::from_predictions(&single).unwrap();
        assert_eq!((m.precision, m.recall), (1.0, 1.0));
    }

    #[test]
    fn hand_counted_macro_metrics() {
        // truth 水 x2, 火 x2; predictions 水, 火, 水, 火火
        let preds = vec![
            pred("1", "水", "水"),
            pred("2", "火", "水"),
            pred("3", "水", "火"),
            pred("4", "火火", "火"),
        ];
        let m = MetricsReport::from_predictions(&preds).unwrap();
        // 水: tp1 fp1 fn1 -> p .5 r .5 ; 火: tp0 fp1 fn2 -> p 0 r 0
        assert_eq!(m.accuracy, 0.25);
        assert_eq!(m.precision, 0.25);
        assert_eq!(m.recall, 0.25);
        assert_eq!(m.f1, 0.25);
        assert_eq!(m.csv_row("m", "s"), "m,s,0.250000,0.250000,0.250000,0.250000,1,3,4");
    }

    #[test]
    fn baseline_with_one_token_is_always_right() {
        let cases: Vec<(String, String)> = (0..20).map(|i| (i.to_string(), "水".to_string())).collect();
        let e = random_baseline(&cases, &["水".to_string()], &mut RngStream::new(0)).unwrap();
        assert_eq!(e.report.accuracy, 1.0);
        let a = random_baseline(&cases, table().vocab(), &mut RngStream::new(9)).unwrap();
        let b = random_baseline(&cases, table().vocab(), &mut RngStream::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn prompt_must_be_non_empty() {
        assert!(PromptSpec::new("  ").is_err());
        assert!(PromptSpec::default().text().starts_with("You are a helpful assistant"));
    }

    #[test]
    fn jsonl_round_trip() {
        let preds = vec![pred("a", "水", "水"), pred("b", "水了", "火")];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.jsonl");
        write_predictions_jsonl(&p, &preds).unwrap();
        assert_eq!(read_predictions_jsonl(&p).unwrap(), preds);
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.contains("\"judged\":\"false_case\""));
    }
}
