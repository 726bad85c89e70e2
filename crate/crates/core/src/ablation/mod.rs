//! Latent-space diagnostics and classifier comparisons.
//!
//! Each repetition trains on a seeded draw of training subjects and tests
//! on held-out ones. Every run produces one [`AblationRow`] per setting;
//! [`summarize`] adds the per-setting mean across repetitions.

pub mod classify;
pub mod finetune;
pub mod knn;
pub mod pca;
pub mod tree;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use classify::{linear_probe, mlp_classify, train_classifier, Classifier, ClassifierConfig};
pub use finetune::{
    finetune_head, head_loss, one_hot, predict_retrained, retrain_classifier, FinetuneConfig, FinetuneHead, HeadLoss,
};
pub use knn::{knn_classify, K_GRID};
pub use pca::{pca_2d, PcaProjection, PointLabel};
pub use tree::{tree_classify, DecisionTree, DEPTH_GRID};

use crate::decode::MetricsReport;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::split::SubjectSplit;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Protocol {
    pub train_subjects: usize,
    pub test_subjects: usize,
    pub repetitions: usize,
    pub seed: u64,
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol {
            train_subjects: 8,
            test_subjects: 1,
            repetitions: 3,
            seed: 0,
        }
    }
}

/// One split per repetition: a seeded shuffle of `subjects`, the first
/// `train_subjects` for training and the next `test_subjects` for testing.
/// Subjects beyond those are unused in that repetition.
pub fn protocol_splits(subjects: &[String], protocol: &Protocol) -> Result<Vec<SubjectSplit>> {
    let need = protocol.train_subjects + protocol.test_subjects;
    if protocol.train_subjects == 0 || protocol.test_subjects == 0 || need > subjects.len() {
        return Err(Error::param(format!(
            "protocol needs {} + {} subjects, dataset has {}",
            protocol.train_subjects,
            protocol.test_subjects,
            subjects.len()
        )));
    }
    if protocol.repetitions == 0 {
        return Err(Error::param("protocol needs at least one repetition"));
    }
    Ok((0..protocol.repetitions)
        .map(|r| {
            let mut order: Vec<usize> = (0..subjects.len()).collect();
            RngStream::new(protocol.seed).fork(r as u64).shuffle(&mut order);
            let pick = |range: std::ops::Range<usize>| {
                let mut ids: Vec<usize> = order[range].to_vec();
                ids.sort();
                ids.into_iter().map(|i| subjects[i].clone()).collect()
            };
            SubjectSplit {
                train: pick(0..protocol.train_subjects),
                masked: pick(protocol.train_subjects..need),
            }
        })
        .collect())
}

pub const ABLATION_HEADER: &str = "ablation,setting,repetition,accuracy,precision,recall,f1,n";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub ablation: String,
    pub setting: String,
    /// `None` marks a summary row.
    pub repetition: Option<usize>,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub n: usize,
}

impl AblationRow {
    pub fn new(ablation: &str, setting: impl Into<String>, repetition: usize, report: &MetricsReport) -> Self {
        AblationRow {
            ablation: ablation.to_string(),
            setting: setting.into(),
            repetition: Some(repetition),
            accuracy: report.accuracy,
            precision: report.precision,
            recall: report.recall,
            f1: report.f1,
            n: report.n,
        }
    }

    pub fn csv_row(&self) -> String {
        let rep = self.repetition.map_or_else(|| "mean".to_string(), |r| r.to_string());
        format!(
            "{},{},{rep},{:.6},{:.6},{:.6},{:.6},{}",
            self.ablation, self.setting, self.accuracy, self.precision, self.recall, self.f1, self.n
        )
    }
}

/// Mean over repetitions for each `(ablation, setting)`, in first-seen order.
pub fn summarize(rows: &[AblationRow]) -> Vec<AblationRow> {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String), Vec<&AblationRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.repetition.is_some()) {
        let key = (r.ablation.clone(), r.setting.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            let mean = |f: fn(&AblationRow) -> f64| g.iter().map(|r| f(r)).sum::<f64>() / g.len() as f64;
            AblationRow {
                ablation: key.0.clone(),
                setting: key.1.clone(),
                repetition: None,
                accuracy: mean(|r| r.accuracy),
                precision: mean(|r| r.precision),
                recall: mean(|r| r.recall),
                f1: mean(|r| r.f1),
                n: g.iter().map(|r| r.n).sum(),
            }
        })
        .collect()
}

/// Writes per-repetition rows followed by their summaries.
pub fn write_ablation_csv(path: impl AsRef<Path>, rows: &[AblationRow]) -> Result<()> {
    let mut out = String::from(ABLATION_HEADER);
    out.push('\n');
    for r in rows.iter().chain(&summarize(rows)) {
        writeln!(out, "{}", r.csv_row()).unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}

/// Features with one class label per row.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet {
    pub features: Tensor,
    pub labels: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub k_grid: Vec<usize>,
    pub depth_grid: Vec<usize>,
    pub mlp: ClassifierConfig,
    pub probe: ClassifierConfig,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            k_grid: K_GRID.to_vec(),
            depth_grid: DEPTH_GRID.to_vec(),
            mlp: ClassifierConfig::default(),
            probe: ClassifierConfig::linear(),
        }
    }
}

/// KNN over the k grid, trees over the depth grid, the MLP and the linear
/// probe, all trained on `train` and scored on `test`. Values of k larger
/// than the training set are skipped.
pub fn run_classifier_suite(
    train: &LabeledSet,
    test: &LabeledSet,
    classes: usize,
    config: &SuiteConfig,
    repetition: usize,
    rng: &RngStream,
) -> Result<Vec<AblationRow>> {
    let n = train.labels.len();
    let mut rows = Vec::new();
    for &k in &config.k_grid {
        if k > n {
            log::warn!("skipping k = {k}: only {n} training samples");
            continue;
        }
        let pred = knn_classify(&train.features, &train.labels, &test.features, k)?;
        rows.push(AblationRow::new(
            "knn",
            format!("k={k}"),
            repetition,
            &MetricsReport::from_labels(&pred, &test.labels)?,
        ));
    }
    for &depth in &config.depth_grid {
        let pred = tree_classify(&train.features, &train.labels, &test.features, depth)?;
        rows.push(AblationRow::new(
            "tree",
            format!("max_depth={depth}"),
            repetition,
            &MetricsReport::from_labels(&pred, &test.labels)?,
        ));
    }
    let hidden = |c: &ClassifierConfig| c.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join("x");
    let pred = mlp_classify(
        &train.features,
        &train.labels,
        &test.features,
        classes,
        &config.mlp,
        &mut rng.fork(1),
    )?;
    rows.push(AblationRow::new(
        "mlp",
        format!("hidden={}", hidden(&config.mlp)),
        repetition,
        &MetricsReport::from_labels(&pred, &test.labels)?,
    ));
    let pred = linear_probe(
        &train.features,
        &train.labels,
        &test.features,
        classes,
        &config.probe,
        &mut rng.fork(2),
    )?;
    rows.push(AblationRow::new(
        "linear",
        "probe",
        repetition,
        &MetricsReport::from_labels(&pred, &test.labels)?,
    ));
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subjects() -> Vec<String> {
        (1..=10).map(|i| format!("sub{i:02}")).collect()
    }

    #[test]
    fn eight_plus_one_per_repetition() {
        let splits = protocol_splits(&subjects(), &Protocol::default()).unwrap();
        assert_eq!(splits.len(), 3);
        for s in &splits {
            assert_eq!((s.train.len(), s.masked.len()), (8, 1));
            assert!(!s.train.contains(&s.masked[0]));
        }
        assert_eq!(splits, protocol_splits(&subjects(), &Protocol::default()).unwrap());
        assert!(protocol_splits(
            &subjects(),
            &Protocol {
                train_subjects: 10,
                ..Protocol::default()
            }
        )
        .is_err());
    }

    #[test]
    fn summary_rows_average() {
        let report = |acc: f64| MetricsReport {
            accuracy: acc,
            precision: acc,
            recall: acc,
            f1: acc,
            true_cases: 0,
            false_cases: 0,
            n: 10,
            per_class: BTreeMap::new(),
        };
        let rows = vec![
            AblationRow::new("knn", "k=5", 0, &report(0.1)),
            AblationRow::new("knn", "k=5", 1, &report(0.3)),
            AblationRow::new("tree", "max_depth=5", 0, &report(0.5)),
        ];
        let s = summarize(&rows);
        assert_eq!(s.len(), 2);
        assert!((s[0].accuracy - 0.2).abs() < 1e-12);
        assert_eq!(s[0].csv_row(), "knn,k=5,mean,0.200000,0.200000,0.200000,0.200000,20");
    }
}
