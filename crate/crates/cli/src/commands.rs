use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use cortex_align::ablation::{
    finetune_head, knn_classify, linear_probe, mlp_classify, pca_2d, predict_retrained, protocol_splits,
    retrain_classifier, summarize, tree_classify, write_ablation_csv, AblationRow, LabeledSet, PointLabel, Protocol,
};
use cortex_align::alignment::{alignment_pairs, train_alignment, AlignmentModel};
use cortex_align::autoencoder::{self, latent_matrix, train_autoencoder, Autoencoder, LatentRow};
use cortex_align::bridge::BridgeClient;
use cortex_align::checkpoint::DESCRIPTOR_FILE;
use cortex_align::dataset::{Dataset, EmbeddingTable, PooledSample};
use cortex_align::decode::{
    evaluate, write_predictions_jsonl, DecoderBackend, MetricsReport, PromptSpec, METRICS_HEADER,
};
use cortex_align::pipeline::train_pipeline;
use cortex_align::split::SubjectSplit;
use cortex_align::synth::synth_generate;
use cortex_align::training::write_loss_csv;
use cortex_align::{RngStream, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::{BackendChoice, RunConfig};
use crate::error::{CliError, Result};
use crate::Ablation;

const AE_DIR: &str = "ae";
const ALIGN_DIR: &str = "align";
const LATENTS_TENSOR: &str = "latents.eegt";
const LATENTS_INDEX: &str = "latents.jsonl";

/// One line of `latents.jsonl`, aligned with the rows of `latents.eegt`.
#[derive(Debug, Serialize, Deserialize)]
struct LatentRecord {
    sample_id: String,
    subject: String,
    token_id: usize,
    token_text: String,
    role: String,
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let path = cfg.manifest_path();
    if !path.exists() {
        return Err(CliError::Data(format!(
            "no dataset manifest at {} (run `gen-data` or pass --data)",
            path.display()
        )));
    }
    Ok(Dataset::load(&path)?)
}

fn load_table(cfg: &RunConfig) -> Result<EmbeddingTable> {
    let (table, vocab) = cfg.table_paths();
    for p in [&table, &vocab] {
        if !p.exists() {
            return Err(CliError::Data(format!(
                "embedding table file {} not found",
                p.display()
            )));
        }
    }
    Ok(EmbeddingTable::load(&table, &vocab)?)
}

fn require(stage: &'static str, command: &'static str, path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::MissingStage { stage, command, path })
    }
}

fn signals(samples: &[PooledSample]) -> Vec<&Tensor> {
    samples.iter().map(|s| &s.pooled.values).collect()
}

fn channels(samples: &[PooledSample]) -> Result<usize> {
    samples
        .first()
        .map(|s| s.pooled.values.dims()[0])
        .ok_or_else(|| CliError::Data("no samples for the training subjects".into()))
}

/// Splits the dataset into training and held-out pooled samples.
fn split_samples(
    cfg: &RunConfig,
    data: &Dataset,
    split: &SubjectSplit,
) -> Result<(Vec<PooledSample>, Vec<PooledSample>)> {
    let len = cfg.pipeline.pooled_len;
    let train = data.pooled_samples(len, |s| split.is_train(s))?;
    let masked = data.pooled_samples(len, |s| split.is_masked(s))?;
    Ok((train, masked))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))
}

pub fn gen_data(cfg: &RunConfig) -> Result<()> {
    let mut synth = cfg.synth.clone();
    synth.seed = cfg.seed;
    synth.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let manifest = synth_generate(&synth, &cfg.data_dir)?;
    println!(
        "wrote {} samples from {} subjects ({} tokens, {} channels, E {}) to {}",
        manifest.samples.len(),
        manifest.subjects.len(),
        manifest.vocab_size,
        synth.channels,
        manifest.embedding_dim,
        cfg.data_dir.display()
    );
    Ok(())
}

pub fn train_ae(cfg: &RunConfig) -> Result<()> {
    let data = load_dataset(cfg)?;
    let split = cfg.subject_split(&data.manifest.subjects)?;
    let (train, _) = split_samples(cfg, &data, &split)?;
    let spec = cfg.pipeline.autoencoder_spec(channels(&train)?);
    let mut rng = RngStream::new(cfg.seed).fork(1);
    let (ae, history) = train_autoencoder(&signals(&train), spec, &cfg.pipeline.autoencoder, &mut rng)?;

    let dir = cfg.run_dir(&split);
    create_dir(&dir)?;
    ae.save(dir.join(AE_DIR), Some(&cfg.pipeline.autoencoder))?;
    write_loss_csv(dir.join("ae_loss.csv"), &history)?;
    fs::write(
        dir.join("split.json"),
        serde_json::to_string_pretty(&split).expect("split serializes"),
    )
    .map_err(cortex_align::Error::from)?;
    println!(
        "autoencoder trained on {} samples ({}), final loss {:.6}; saved to {}",
        train.len(),
        split.label(),
        history.last().copied().unwrap_or(f64::NAN),
        dir.display()
    );
    Ok(())
}

fn load_ae(dir: &Path) -> Result<Autoencoder> {
    require("ae", "train-ae", dir.join(AE_DIR).join(DESCRIPTOR_FILE))?;
    Ok(Autoencoder::load(dir.join(AE_DIR))?)
}

fn load_align(dir: &Path) -> Result<AlignmentModel> {
    require("align", "train-align", dir.join(ALIGN_DIR).join(DESCRIPTOR_FILE))?;
    Ok(AlignmentModel::load(dir.join(ALIGN_DIR))?)
}

pub fn train_align(cfg: &RunConfig) -> Result<()> {
    let data = load_dataset(cfg)?;
    let split = cfg.subject_split(&data.manifest.subjects)?;
    let dir = cfg.run_dir(&split);
    let ae = load_ae(&dir)?;
    let table = load_table(cfg)?;
    let (train, _) = split_samples(cfg, &data, &split)?;
    let rows = autoencoder::extract_latents(&train, &ae)?;
    let (x, y) = alignment_pairs(&rows, &table)?;
    let spec = cfg.pipeline.alignment_spec(table.dim());
    let mut rng = RngStream::new(cfg.seed).fork(2);
    let (model, history) = train_alignment(&x, &y, spec, &cfg.pipeline.alignment, &mut rng)?;
    model.save(dir.join(ALIGN_DIR), Some(&cfg.pipeline.alignment))?;
    write_loss_csv(dir.join("align_loss.csv"), &history)?;
    println!(
        "alignment trained on {} latents, final loss {:.6}; saved to {}",
        rows.len(),
        history.last().copied().unwrap_or(f64::NAN),
        dir.join(ALIGN_DIR).display()
    );
    Ok(())
}

pub fn extract_latents(cfg: &RunConfig) -> Result<()> {
    let data = load_dataset(cfg)?;
    let split = cfg.subject_split(&data.manifest.subjects)?;
    let dir = cfg.run_dir(&split);
    let ae = load_ae(&dir)?;
    let samples = data.pooled_samples(cfg.pipeline.pooled_len, |_| true)?;
    let rows = autoencoder::extract_latents(&samples, &ae)?;
    latent_matrix(&rows)?.save(dir.join(LATENTS_TENSOR))?;

    let mut out =
        std::io::BufWriter::new(fs::File::create(dir.join(LATENTS_INDEX)).map_err(cortex_align::Error::from)?);
    for r in &rows {
        let rec = LatentRecord {
            sample_id: r.sample_id.clone(),
            subject: r.subject.clone(),
            token_id: r.token_id,
            token_text: r.token_text.clone(),
            role: if split.is_train(&r.subject) { "train" } else { "masked" }.to_string(),
        };
        serde_json::to_writer(&mut out, &rec).map_err(cortex_align::Error::from)?;
        out.write_all(b"\n").map_err(cortex_align::Error::from)?;
    }
    out.flush().map_err(cortex_align::Error::from)?;
    println!(
        "encoded {} samples to {}",
        rows.len(),
        dir.join(LATENTS_TENSOR).display()
    );
    Ok(())
}

fn read_latents(dir: &Path) -> Result<(Tensor, Vec<LatentRecord>)> {
    let index = require("latents", "extract-latents", dir.join(LATENTS_INDEX))?;
    let tensor = require("latents", "extract-latents", dir.join(LATENTS_TENSOR))?;
    let z = Tensor::load(&tensor)?;
    let records: Vec<LatentRecord> = fs::read_to_string(&index)
        .map_err(cortex_align::Error::from)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| CliError::Data(format!("{}: {e}", index.display()))))
        .collect::<Result<_>>()?;
    if z.dims().first() != Some(&records.len()) {
        return Err(CliError::Data(format!(
            "{} has {:?} rows but {} lists {} samples",
            tensor.display(),
            z.dims(),
            index.display(),
            records.len()
        )));
    }
    Ok((z, records))
}

fn backend(cfg: &RunConfig) -> Result<DecoderBackend> {
    Ok(match &cfg.backend {
        BackendChoice::Surrogate => DecoderBackend::Surrogate(load_table(cfg)?),
        BackendChoice::Bridge(url) => DecoderBackend::Bridge(BridgeClient::new(url.as_str())?),
    })
}

/// Inserts or replaces the row keyed by `(model, split)` in `out/metrics.csv`.
fn merge_metrics(path: &Path, model: &str, split: &str, report: &MetricsReport) -> Result<()> {
    let mut rows: Vec<String> = match fs::read_to_string(path) {
        Ok(text) => text
            .lines()
            .skip(1)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(cortex_align::Error::from(e).into()),
    };
    let key = format!("{model},{split},");
    let row = report.csv_row(model, split);
    match rows.iter_mut().find(|r| r.starts_with(&key)) {
        Some(r) => *r = row,
        None => rows.push(row),
    }
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    fs::write(path, out).map_err(cortex_align::Error::from)?;
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let data = load_dataset(cfg)?;
    let split = cfg.subject_split(&data.manifest.subjects)?;
    let dir = cfg.run_dir(&split);
    let ae = load_ae(&dir)?;
    let align = load_align(&dir)?;
    let backend = backend(cfg)?;
    let prompt = PromptSpec::new(cfg.prompt.clone())?.with_max_tokens(cfg.max_tokens)?;
    let (_, masked) = split_samples(cfg, &data, &split)?;
    let result = evaluate(&masked, &split, &ae, &align, &backend, &prompt)?;
    write_predictions_jsonl(dir.join("predictions.jsonl"), &result.predictions)?;
    merge_metrics(
        &cfg.out_dir.join("metrics.csv"),
        backend.name(),
        &split.label(),
        &result.report,
    )?;
    println!(
        "{} on {}: accuracy {:.4}, f1 {:.4} over {} samples",
        backend.name(),
        split.label(),
        result.report.accuracy,
        result.report.f1,
        result.report.n
    );
    Ok(())
}

fn labeled_set(rows: &[LatentRow]) -> Result<LabeledSet> {
    Ok(LabeledSet {
        features: latent_matrix(rows)?,
        labels: rows.iter().map(|r| r.token_id).collect(),
    })
}

/// Rows of one classifier ablation on a single repetition.
fn classifier_rows(
    which: Ablation,
    cfg: &RunConfig,
    train: &LabeledSet,
    test: &LabeledSet,
    classes: usize,
    rep: usize,
    rng: &RngStream,
) -> Result<Vec<AblationRow>> {
    let suite = &cfg.ablation.suite;
    let score = |pred: &[usize]| MetricsReport::from_labels(pred, &test.labels);
    let mut rows = Vec::new();
    match which {
        Ablation::Knn => {
            for &k in &suite.k_grid {
                if k > train.labels.len() {
                    log::warn!("skipping k = {k}: only {} training samples", train.labels.len());
                    continue;
                }
                let pred = knn_classify(&train.features, &train.labels, &test.features, k)?;
                rows.push(AblationRow::new("knn", format!("k={k}"), rep, &score(&pred)?));
            }
        }
        Ablation::Tree => {
            for &depth in &suite.depth_grid {
                let pred = tree_classify(&train.features, &train.labels, &test.features, depth)?;
                rows.push(AblationRow::new(
                    "tree",
                    format!("max_depth={depth}"),
                    rep,
                    &score(&pred)?,
                ));
            }
        }
        Ablation::Mlp => {
            let hidden: Vec<String> = suite.mlp.hidden.iter().map(|h| h.to_string()).collect();
            let pred = mlp_classify(
                &train.features,
                &train.labels,
                &test.features,
                classes,
                &suite.mlp,
                &mut rng.fork(1),
            )?;
            rows.push(AblationRow::new(
                "mlp",
                format!("hidden={}", hidden.join("x")),
                rep,
                &score(&pred)?,
            ));
        }
        Ablation::Linear => {
            let pred = linear_probe(
                &train.features,
                &train.labels,
                &test.features,
                classes,
                &suite.probe,
                &mut rng.fork(2),
            )?;
            rows.push(AblationRow::new("linear", "probe", rep, &score(&pred)?));
        }
        Ablation::Pca | Ablation::Finetune | Ablation::All => unreachable!("not a classifier ablation"),
    }
    Ok(rows)
}

/// Frozen-backbone head against a from-scratch network at equal step count.
fn finetune_rows(
    cfg: &RunConfig,
    train: &[PooledSample],
    test: &[PooledSample],
    table: &EmbeddingTable,
    rep: usize,
    rng: &RngStream,
) -> Result<Vec<AblationRow>> {
    let trained = train_pipeline(train, table, &cfg.pipeline, rng)?;
    let backbone = &trained.alignment;
    let train_set = labeled_set(&autoencoder::extract_latents(train, &trained.autoencoder)?)?;
    let test_set = labeled_set(&autoencoder::extract_latents(test, &trained.autoencoder)?)?;
    let classes = table.len();
    let ft = &cfg.ablation.finetune;

    let before = backbone.checksum();
    let (head, _) = finetune_head(
        &train_set.features,
        &train_set.labels,
        classes,
        backbone,
        ft,
        &mut rng.fork(0xF1),
    )?;
    if backbone.checksum() != before {
        return Err(cortex_align::Error::State("backbone parameters changed during finetuning".into()).into());
    }
    let retrained = retrain_classifier(
        &train_set.features,
        &train_set.labels,
        classes,
        backbone.spec(),
        ft,
        head.steps,
        &mut rng.fork(0xF2),
    )?;
    let head_pred = head.predict(backbone, &test_set.features)?;
    let retrain_pred = predict_retrained(&retrained, &test_set.features)?;
    Ok(vec![
        AblationRow::new(
            "finetune",
            format!("head steps={}", head.steps),
            rep,
            &MetricsReport::from_labels(&head_pred, &test_set.labels)?,
        ),
        AblationRow::new(
            "finetune",
            format!("retrain steps={}", head.steps),
            rep,
            &MetricsReport::from_labels(&retrain_pred, &test_set.labels)?,
        ),
    ])
}

fn pca(latents_dir: &Path, out: &Path, classes: usize) -> Result<()> {
    let (z, records) = read_latents(latents_dir)?;
    let proj = pca_2d(&z)?;
    let labels: Vec<PointLabel> = records
        .iter()
        .map(|r| PointLabel {
            subject: r.subject.clone(),
            token_id: r.token_id,
        })
        .collect();
    proj.write_csv(out.join("pca.csv"), &labels)?;
    proj.write_svg(out.join("pca.svg"), &labels, classes)?;
    println!(
        "pca of {} latents from {}: explained variance ratio {:.4}, {:.4}",
        records.len(),
        latents_dir.display(),
        proj.explained_ratio[0],
        proj.explained_ratio[1]
    );
    Ok(())
}

pub fn ablate(cfg: &RunConfig, which: Ablation) -> Result<()> {
    let data = load_dataset(cfg)?;
    let split = cfg.subject_split(&data.manifest.subjects)?;
    let latents_dir = cfg.run_dir(&split);
    require("latents", "extract-latents", latents_dir.join(LATENTS_TENSOR))?;
    let table = load_table(cfg)?;
    let out = cfg.out_dir.join("ablation");
    create_dir(&out)?;

    let selected: Vec<Ablation> = match which {
        Ablation::All => vec![
            Ablation::Pca,
            Ablation::Knn,
            Ablation::Tree,
            Ablation::Mlp,
            Ablation::Linear,
            Ablation::Finetune,
        ],
        one => vec![one],
    };
    if selected.contains(&Ablation::Pca) {
        pca(&latents_dir, &out, table.len())?;
    }
    let classifiers: Vec<Ablation> = selected
        .iter()
        .copied()
        .filter(|a| matches!(a, Ablation::Knn | Ablation::Tree | Ablation::Mlp | Ablation::Linear))
        .collect();
    let finetune = selected.contains(&Ablation::Finetune);
    if classifiers.is_empty() && !finetune {
        return Ok(());
    }

    let protocol = Protocol {
        seed: cfg.seed,
        ..cfg.ablation.protocol.clone()
    };
    let splits = protocol_splits(&data.manifest.subjects, &protocol)?;
    let mut by_ablation: BTreeMap<&'static str, Vec<AblationRow>> = BTreeMap::new();
    for (rep, s) in splits.iter().enumerate() {
        let (train, test) = split_samples(cfg, &data, s)?;
        let rng = RngStream::new(cfg.seed).fork(100 + rep as u64);
        log::info!("repetition {rep}: {}", s.label());
        if !classifiers.is_empty() {
            let spec = cfg.pipeline.autoencoder_spec(channels(&train)?);
            let (ae, _) = train_autoencoder(&signals(&train), spec, &cfg.pipeline.autoencoder, &mut rng.fork(0))?;
            let train_set = labeled_set(&autoencoder::extract_latents(&train, &ae)?)?;
            let test_set = labeled_set(&autoencoder::extract_latents(&test, &ae)?)?;
            for &a in &classifiers {
                let rows = classifier_rows(a, cfg, &train_set, &test_set, table.len(), rep, &rng)?;
                by_ablation.entry(name(a)).or_default().extend(rows);
            }
        }
        if finetune {
            let rows = finetune_rows(cfg, &train, &test, &table, rep, &rng.fork(3))?;
            by_ablation.entry("finetune").or_default().extend(rows);
        }
    }

    let mut all = Vec::new();
    for a in classifiers
        .iter()
        .copied()
        .chain(finetune.then_some(Ablation::Finetune))
    {
        let rows = &by_ablation[name(a)];
        write_ablation_csv(out.join(format!("{}.csv", name(a))), rows)?;
        for r in summarize(rows) {
            println!(
                "{:<8} {:<24} accuracy {:.4} f1 {:.4}",
                r.ablation, r.setting, r.accuracy, r.f1
            );
        }
        all.extend(rows.iter().cloned());
    }
    if which == Ablation::All {
        write_ablation_csv(out.join("all.csv"), &all)?;
    }
    Ok(())
}

fn name(a: Ablation) -> &'static str {
    match a {
        Ablation::Pca => "pca",
        Ablation::Knn => "knn",
        Ablation::Tree => "tree",
        Ablation::Mlp => "mlp",
        Ablation::Linear => "linear",
        Ablation::Finetune => "finetune",
        Ablation::All => "all",
    }
}

pub fn bridge_check(cfg: &RunConfig) -> Result<()> {
    let BackendChoice::Bridge(url) = &cfg.backend else {
        return Err(CliError::Usage("bridge-check needs --backend bridge:URL".into()));
    };
    let client = BridgeClient::new(url.as_str())?;
    let hash = client.model_hash()?;
    let remote = client.embedding_table()?;
    println!("bridge {url}: model {hash}, table {} x {}", remote.len(), remote.dim());

    let (table, vocab) = cfg.table_paths();
    if table.exists() && vocab.exists() {
        let local = EmbeddingTable::load(&table, &vocab)?;
        if local.vocab() != remote.vocab() || local.vectors() != remote.vectors() {
            return Err(CliError::Backend(format!(
                "bridge table ({} x {}) differs from local {} ({} x {})",
                remote.len(),
                remote.dim(),
                table.display(),
                local.len(),
                local.dim()
            )));
        }
        println!("local table {} matches", table.display());
    }

    let probe = vec![0.0f32; remote.dim()];
    let resp = client.generate(&cfg.prompt, &probe, cfg.max_tokens)?;
    println!("generate round trip: {:?} ({} tokens)", resp.text, resp.token_ids.len());
    Ok(())
}
