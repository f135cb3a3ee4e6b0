#![allow(dead_code)]

use hst_core::ctc::softmax_rows;
use hst_core::data::{DescriptionCorpus, EmbeddingVector, LogitMatrix, SubActionStatement};
use ndarray::Array2;
use rand::{RngExt, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_pcg::Pcg64Mcg;

pub fn rng(seed: u64) -> Pcg64Mcg {
    Pcg64Mcg::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut Pcg64Mcg) -> f64 {
    StandardNormal.sample(rng)
}

/// Random corpus. With `coarse` set, coordinates are small integers so equal
/// embeddings and exact similarity ties are common.
pub fn random_corpus(rng: &mut Pcg64Mcg, n_glosses: usize, max_subactions: usize, d: usize, coarse: bool) -> DescriptionCorpus<f64> {
    let mut pending: Vec<(usize, usize)> = Vec::new();
    for g in 0..n_glosses {
        let m = rng.random_range(1..=max_subactions);
        pending.extend((0..m).map(|k| (g, k)));
    }
    // interleave glosses while keeping each gloss's positions in order
    let mut order: Vec<(usize, usize)> = Vec::with_capacity(pending.len());
    let mut next = vec![0usize; n_glosses];
    let counts: Vec<usize> = (0..n_glosses).map(|g| pending.iter().filter(|p| p.0 == g).count()).collect();
    while order.len() < pending.len() {
        let g = rng.random_range(0..n_glosses);
        if next[g] < counts[g] {
            order.push((g, next[g]));
            next[g] += 1;
        }
    }
    let mut rows = Vec::new();
    for (i, (g, k)) in order.into_iter().enumerate() {
        let e: Vec<f64> = (0..d)
            .map(|_| if coarse { rng.random_range(-1i32..=1) as f64 } else { gaussian(rng) })
            .collect();
        let e = if e.iter().all(|&x| x == 0.0) { (0..d).map(|j| if j == 0 { 1.0 } else { 0.0 }).collect() } else { e };
        rows.push((
            SubActionStatement {
                statement_id: 100 + i as u64,
                gloss_id: g,
                position: k,
                text: format!("g{g} step {k}"),
                embedding: EmbeddingVector::new(e).unwrap(),
            },
            format!("G{g}"),
        ));
    }
    DescriptionCorpus::from_statements(rows, Some(d)).unwrap()
}

pub fn random_matrix(rng: &mut Pcg64Mcg, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| scale * gaussian(rng))
}

pub fn random_probs(rng: &mut Pcg64Mcg, frames: usize, classes: usize) -> LogitMatrix<f64> {
    let scale = rng.random_range(0.1..3.0);
    LogitMatrix::new(softmax_rows(&random_matrix(rng, frames, classes, scale))).unwrap()
}
