use std::fs;

use cortex_align::dataset::{Dataset, DatasetManifest, EmbeddingTable, EMBEDDINGS_FILE, MANIFEST_FILE, VOCAB_FILE};
use cortex_align::synth::{synth_generate, synth_samples, SynthConfig};
use cortex_align::{Error, Tensor};
use tempfile::TempDir;

fn small() -> SynthConfig {
    SynthConfig {
        subjects: 3,
        samples_per_subject: 5,
        vocab_size: 4,
        channels: 3,
        min_len: 40,
        max_len: 50,
        embedding_dim: 6,
        seed: 11,
        ..SynthConfig::default()
    }
}

#[test]
fn generated_dataset_loads_back_exactly() {
    let tmp = TempDir::new().unwrap();
    let manifest = synth_generate(&small(), tmp.path()).unwrap();
    let data = Dataset::load(tmp.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(data.manifest, manifest);
    assert_eq!(data.len(), 15);

    let mem = synth_samples(&small()).unwrap();
    for i in 0..data.len() {
        assert_eq!(data.recording(i).unwrap().values, mem.recordings[i].values);
    }
    let from_disk = data.pooled_samples(16, |s| s != "sub02").unwrap();
    let in_memory = mem.pooled(16, |s| s != "sub02").unwrap();
    assert_eq!(from_disk.len(), 10);
    assert_eq!(from_disk, in_memory);

    let table = EmbeddingTable::load(tmp.path().join(EMBEDDINGS_FILE), tmp.path().join(VOCAB_FILE)).unwrap();
    assert_eq!(table, mem.table);
    assert_eq!((table.len(), table.dim()), (4, 6));
}

#[test]
fn directory_path_finds_the_manifest() {
    let tmp = TempDir::new().unwrap();
    synth_generate(&small(), tmp.path()).unwrap();
    assert_eq!(Dataset::load(tmp.path()).unwrap().len(), 15);
}

#[test]
fn truncated_sample_is_reported_with_its_path() {
    let tmp = TempDir::new().unwrap();
    let manifest = synth_generate(&small(), tmp.path()).unwrap();
    let victim = tmp.path().join(&manifest.samples[4].tensor);
    let bytes = fs::read(&victim).unwrap();
    fs::write(&victim, &bytes[..bytes.len() - 4]).unwrap();
    match Dataset::load(tmp.path()) {
        Err(e @ Error::Load { .. }) => {
            let msg = e.to_string();
            assert!(msg.contains(&victim.display().to_string()), "{msg}");
            assert!(msg.contains("sample 4"), "{msg}");
        }
        other => panic!("expected a load error, got {other:?}"),
    }
}

#[test]
fn inconsistent_manifests_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let manifest = synth_generate(&small(), tmp.path()).unwrap();
    let path = tmp.path().join(MANIFEST_FILE);
    let mutate = |f: &dyn Fn(&mut DatasetManifest)| {
        let mut m = manifest.clone();
        f(&mut m);
        m.save(&path).unwrap();
        Dataset::load(&path)
    };
    assert!(mutate(&|m| m.samples[0].subject = "sub99".into()).is_err());
    assert!(mutate(&|m| m.samples[1].token_id = 4).is_err());
    assert!(mutate(&|m| m.subjects.push("sub01".into())).is_err());
    assert!(mutate(&|m| m.samples[2].tensor = "samples/missing.eegt".into()).is_err());
    assert!(mutate(&|_| {}).is_ok());

    // A sample with a different channel count.
    Tensor::<f32>::zeros(&[5, 40])
        .save(tmp.path().join(&manifest.samples[3].tensor))
        .unwrap();
    assert!(Dataset::load(&path).is_err());

    fs::write(&path, "{ not json").unwrap();
    assert!(matches!(Dataset::load(&path), Err(Error::Load { .. })));
}

#[test]
fn embedding_table_round_trip_and_mismatch() {
    let tmp = TempDir::new().unwrap();
    let vectors = Tensor::from_vec(&[2, 3], vec![0.5, -1.0, 2.0, 0.0, 3.5, -0.25]).unwrap();
    let table = EmbeddingTable::new(vectors.clone(), vec!["天".into(), "地".into()]).unwrap();
    let (t, v) = (tmp.path().join("t.eegt"), tmp.path().join("v.txt"));
    table.save(&t, &v).unwrap();
    let back = EmbeddingTable::load(&t, &v).unwrap();
    assert_eq!(back, table);
    assert_eq!(back.token_id("地"), Some(1));
    assert_eq!(back.text(0), "天");

    fs::write(&v, "天\n地\n人\n").unwrap();
    assert!(EmbeddingTable::load(&t, &v).is_err());
    assert!(EmbeddingTable::new(Tensor::<f32>::zeros(&[2]), vec!["a".into(), "b".into()]).is_err());
}
