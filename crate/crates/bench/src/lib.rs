//! Seeded inputs shared by the benchmarks.

use cortex_align::dataset::EmbeddingTable;
use cortex_align::{RngStream, Tensor};

pub fn gaussian(dims: &[usize], seed: u64) -> Tensor {
    let mut rng = RngStream::new(seed);
    Tensor::from_fn(dims, |_| rng.normal() as f32)
}

/// `rows` labelled points in `dim` dimensions with `classes` labels.
pub fn labelled(rows: usize, dim: usize, classes: usize, seed: u64) -> (Tensor, Vec<usize>) {
    let x = gaussian(&[rows, dim], seed);
    let labels = (0..rows).map(|i| i % classes).collect();
    (x, labels)
}

pub fn table(vocab: usize, dim: usize, seed: u64) -> EmbeddingTable {
    let vocab_text = (0..vocab)
        .map(|i| char::from_u32(0x4E00 + i as u32).unwrap().to_string())
        .collect();
    EmbeddingTable::new(gaussian(&[vocab, dim], seed), vocab_text).expect("table shape")
}
