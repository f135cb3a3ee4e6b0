mod common;

use common::{random_probs, rng};
use hst_core::ctc::{ctc_brute_force, ctc_loss, min_frames};
use hst_core::data::{GlossSequence, LogitMatrix};
use hst_core::HstError;
use ndarray::Array2;
use rand::RngExt;

fn binomial(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[test]
fn forward_recursion_matches_path_enumeration() {
    let mut r = rng(2024);
    let mut checked = 0;
    let mut max_err: f64 = 0.0;
    while checked < 600 {
        let frames = r.random_range(1..=6);
        let n = r.random_range(1..=4);
        let len = r.random_range(0..=frames);
        let labels: Vec<usize> = (0..len).map(|_| r.random_range(0..n)).collect();
        if min_frames(&labels) > frames {
            continue;
        }
        let labels = GlossSequence::new(labels);
        let probs = random_probs(&mut r, frames, n + 1);
        let fast = ctc_loss(&probs, &labels, false).unwrap().negative_log_likelihood;
        let slow = ctc_brute_force(&probs, &labels).unwrap();
        max_err = max_err.max((fast - slow).abs());
        assert!((fast - slow).abs() < 1e-9, "T={frames} N={n} labels={labels}: {fast} vs {slow}");
        checked += 1;
    }
    println!("{checked} fixtures, max |dNLL| = {max_err:e}");
}

#[test]
fn infeasible_label_sequences_agree_with_enumeration() {
    let mut r = rng(5);
    for _ in 0..50 {
        let frames = r.random_range(1..=4);
        let n = r.random_range(1..=3);
        let mut labels: Vec<usize> = (0..frames).map(|_| r.random_range(0..n)).collect();
        labels.push(labels[labels.len() - 1]);
        let labels = GlossSequence::new(labels);
        let probs = random_probs(&mut r, frames, n + 1);
        assert!(matches!(ctc_loss(&probs, &labels, false), Err(HstError::Infeasible(_))));
        assert!(ctc_brute_force(&probs, &labels).is_err());
    }
}

/// Under uniform frame distributions every alignment has probability
/// C^-T, and a label sequence of length L without adjacent repeats has
/// binomial(T + L, 2L) alignments.
#[test]
fn uniform_distribution_counts_alignments() {
    for classes in 2..=5usize {
        let n = classes - 1;
        for frames in 1..=8usize {
            for len in 0..=frames.min(4) {
                let labels: Vec<usize> = (0..len).map(|i| i % n.max(1)).collect();
                if n == 1 && len > 1 {
                    continue;
                }
                let probs = LogitMatrix::new(Array2::from_elem((frames, classes), 1.0 / classes as f64)).unwrap();
                let nll = ctc_loss(&probs, &GlossSequence::new(labels), false).unwrap().negative_log_likelihood;
                let expected = -(binomial((frames + len) as u64, (2 * len) as u64).ln() - frames as f64 * (classes as f64).ln());
                assert!((nll - expected).abs() < 1e-10, "C={classes} T={frames} L={len}");
            }
        }
    }
}

#[test]
fn single_precision_tracks_double_precision() {
    let mut r = rng(77);
    for _ in 0..100 {
        let frames = r.random_range(1..=6);
        let n = r.random_range(1..=4);
        let labels = GlossSequence::new((0..frames / 2).map(|_| r.random_range(0..n)).collect());
        if min_frames(labels.labels()) > frames {
            continue;
        }
        let p64 = random_probs(&mut r, frames, n + 1);
        let p32 = LogitMatrix::new(p64.scores().mapv(|x| x as f32)).unwrap();
        let a = ctc_loss(&p64, &labels, true).unwrap();
        let b = ctc_loss(&p32, &labels, true).unwrap();
        assert!((a.negative_log_likelihood - b.negative_log_likelihood as f64).abs() < 1e-4);
        let (ga, gb) = (a.gradient.unwrap(), b.gradient.unwrap());
        assert!(ga.iter().zip(gb.iter()).all(|(x, y)| (x - *y as f64).abs() < 1e-4));
    }
}

#[test]
fn gradient_is_bounded_by_probabilities() {
    // p - posterior lies in [p - 1, p] component-wise
    let mut r = rng(9);
    for _ in 0..100 {
        let frames = r.random_range(2..=6);
        let probs = random_probs(&mut r, frames, 4);
        let g = ctc_loss(&probs, &GlossSequence::new(vec![0, 2]), true).unwrap().gradient.unwrap();
        for ((t, k), &x) in g.indexed_iter() {
            let p = probs.scores()[[t, k]];
            assert!(x <= p + 1e-12 && x >= p - 1.0 - 1e-12);
        }
    }
}
