//! Connectionist temporal classification: loss, gradient, decoding and WER.
//!
//! The blank is the last column of every probability matrix (index N).

mod decode;
mod wer;

pub use decode::{decode, greedy_decode, prefix_beam_decode, DecodeConfig, DecodeMode};
pub use wer::{edit_distance, wer, WerAccumulator};

use ndarray::Array2;

use crate::data::{GlossSequence, LogitMatrix};
use crate::error::{HstError, Result};
use crate::scalar::{log_add, Scalar};

/// Probabilities below this are clamped before taking logs.
pub const PROB_FLOOR: f64 = 1e-30;

/// Row sums must be within this of 1.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// Brute-force enumeration refuses more paths than this.
pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct CtcResult<S> {
    /// `-ln p(labels | probs)` in nats.
    pub negative_log_likelihood: S,
    /// Gradient with respect to the pre-softmax logits that produced `probs`.
    pub gradient: Option<Array2<S>>,
}

/// Checks that every row is a probability distribution.
pub fn check_distributions<S: Scalar>(probs: &LogitMatrix<S>) -> Result<()> {
    let tol = S::lit(ROW_SUM_TOLERANCE);
    for t in 0..probs.frames() {
        let row = probs.row(t);
        if let Some(p) = row.iter().find(|&&p| p < S::zero()) {
            return Err(HstError::Domain(format!("negative probability {p} at frame {t}")));
        }
        let sum = row.iter().fold(S::zero(), |a, &p| a + p);
        if (sum - S::one()).abs() > tol {
            return Err(HstError::Domain(format!("frame {t} sums to {sum}, not 1")));
        }
    }
    Ok(())
}

/// Minimum frame count that can emit `labels`: one frame per label plus a
/// separating blank between equal neighbours.
pub fn min_frames(labels: &[usize]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}

fn check_labels<S: Scalar>(probs: &LogitMatrix<S>, labels: &GlossSequence) -> Result<()> {
    labels.validate(probs.n_classes())?;
    let need = min_frames(labels.labels());
    if probs.frames() < need {
        return Err(HstError::Infeasible(format!(
            "{} labels need at least {need} frames, got {}",
            labels.len(),
            probs.frames()
        )));
    }
    Ok(())
}

/// Blank-interleaved label sequence `[b, y1, b, y2, ..., b]`.
fn extend_with_blanks(labels: &[usize], blank: usize) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * labels.len() + 1);
    ext.push(blank);
    for &l in labels {
        ext.push(l);
        ext.push(blank);
    }
    ext
}

/// CTC negative log-likelihood of `labels` under per-frame distributions
/// `probs`, computed by the forward recursion in log space. When
/// `with_gradient` is set, the backward recursion yields the gradient with
/// respect to the pre-softmax logits.
pub fn ctc_loss<S: Scalar>(probs: &LogitMatrix<S>, labels: &GlossSequence, with_gradient: bool) -> Result<CtcResult<S>> {
    check_distributions(probs)?;
    check_labels(probs, labels)?;

    let t_len = probs.frames();
    let blank = probs.blank();
    let ext = extend_with_blanks(labels.labels(), blank);
    let s_len = ext.len();
    let floor = S::lit(PROB_FLOOR);
    let neg_inf = S::neg_infinity();
    let log_p = probs.scores().mapv(|p| p.max(floor).ln());

    // alpha[t][s]: log prob of all prefixes ending in ext[s] at frame t, emissions through t included
    let mut alpha = Array2::from_elem((t_len, s_len), neg_inf);
    alpha[[0, 0]] = log_p[[0, ext[0]]];
    if s_len > 1 {
        alpha[[0, 1]] = log_p[[0, ext[1]]];
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut a = alpha[[t - 1, s]];
            if s >= 1 {
                a = log_add(a, alpha[[t - 1, s - 1]]);
            }
            if s >= 2 && ext[s] != blank && ext[s] != ext[s - 2] {
                a = log_add(a, alpha[[t - 1, s - 2]]);
            }
            alpha[[t, s]] = a + log_p[[t, ext[s]]];
        }
    }
    let mut log_likelihood = alpha[[t_len - 1, s_len - 1]];
    if s_len > 1 {
        log_likelihood = log_add(log_likelihood, alpha[[t_len - 1, s_len - 2]]);
    }
    if log_likelihood == neg_inf {
        return Err(HstError::Infeasible("no alignment has positive probability".into()));
    }

    let gradient = with_gradient.then(|| {
        // beta[t][s]: log prob of completing from state s at frame t, emissions after t only
        let mut beta = Array2::from_elem((t_len, s_len), neg_inf);
        beta[[t_len - 1, s_len - 1]] = S::zero();
        if s_len > 1 {
            beta[[t_len - 1, s_len - 2]] = S::zero();
        }
        for t in (0..t_len - 1).rev() {
            for s in 0..s_len {
                let mut b = beta[[t + 1, s]] + log_p[[t + 1, ext[s]]];
                if s + 1 < s_len {
                    b = log_add(b, beta[[t + 1, s + 1]] + log_p[[t + 1, ext[s + 1]]]);
                }
                if s + 2 < s_len && ext[s + 2] != blank && ext[s + 2] != ext[s] {
                    b = log_add(b, beta[[t + 1, s + 2]] + log_p[[t + 1, ext[s + 2]]]);
                }
                beta[[t, s]] = b;
            }
        }

        let classes = probs.n_classes() + 1;
        let mut grad = Array2::zeros((t_len, classes));
        let mut occupancy = vec![neg_inf; classes];
        for t in 0..t_len {
            occupancy.iter_mut().for_each(|o| *o = neg_inf);
            for s in 0..s_len {
                occupancy[ext[s]] = log_add(occupancy[ext[s]], alpha[[t, s]] + beta[[t, s]]);
            }
            for k in 0..classes {
                grad[[t, k]] = probs.scores()[[t, k]] - (occupancy[k] - log_likelihood).exp();
            }
        }
        grad
    });

    Ok(CtcResult { negative_log_likelihood: -log_likelihood, gradient })
}

/// Collapses a frame-level path: merge repeats, then drop blanks.
pub fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &k in path {
        if Some(k) != prev && k != blank {
            out.push(k);
        }
        prev = Some(k);
    }
    out
}

/// Reference CTC loss by enumerating all `(N+1)^T` frame paths.
pub fn ctc_brute_force<S: Scalar>(probs: &LogitMatrix<S>, labels: &GlossSequence) -> Result<S> {
    let t_len = probs.frames();
    let classes = probs.n_classes() + 1;
    let total = (classes as u128).checked_pow(t_len as u32).unwrap_or(u128::MAX);
    if total > BRUTE_FORCE_LIMIT {
        return Err(HstError::OracleTooLarge(total));
    }
    let blank = probs.blank();
    let mut path = vec![0usize; t_len];
    let mut sum = S::zero();
    loop {
        if collapse(&path, blank) == labels.labels() {
            let mut p = S::one();
            for (t, &k) in path.iter().enumerate() {
                p *= probs.scores()[[t, k]];
            }
            sum += p;
        }
        // odometer increment
        let mut i = 0;
        loop {
            if i == t_len {
                return if sum > S::zero() {
                    Ok(-sum.ln())
                } else {
                    Err(HstError::Infeasible("no admissible alignment".into()))
                };
            }
            path[i] += 1;
            if path[i] < classes {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

/// Row-wise softmax.
pub fn softmax_rows<S: Scalar>(logits: &Array2<S>) -> Array2<S> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.iter().fold(S::zero(), |a, &x| a + x);
        row.mapv_inplace(|x| x / sum);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn probs(m: Array2<f64>) -> LogitMatrix<f64> {
        LogitMatrix::new(m).unwrap()
    }

    #[test]
    fn single_frame_single_label() {
        let p = probs(array![[0.8, 0.2]]);
        let r = ctc_loss(&p, &GlossSequence::new(vec![0]), false).unwrap();
        assert!((r.negative_log_likelihood - (-(0.8f64).ln())).abs() < 1e-15);
        assert!((r.negative_log_likelihood - 0.22314).abs() < 1e-5);
    }

    #[test]
    fn two_frames_three_alignments() {
        let p = probs(array![[0.6, 0.1, 0.3], [0.5, 0.3, 0.2]]);
        // (g,g) + (blank,g) + (g,blank) with g = 0
        let by_hand = 0.6 * 0.5 + 0.3 * 0.5 + 0.6 * 0.2;
        let r = ctc_loss(&p, &GlossSequence::new(vec![0]), false).unwrap();
        assert!((r.negative_log_likelihood - (-f64::ln(by_hand))).abs() < 1e-12);
        assert!((ctc_brute_force(&p, &GlossSequence::new(vec![0])).unwrap() - (-f64::ln(by_hand))).abs() < 1e-12);
    }

    #[test]
    fn infeasible_labels() {
        let p = probs(array![[0.5, 0.5], [0.5, 0.5]]);
        assert!(matches!(ctc_loss(&p, &GlossSequence::new(vec![0, 0]), false), Err(HstError::Infeasible(_))));
        let p3 = probs(array![[0.3, 0.3, 0.4]]);
        assert!(matches!(ctc_loss(&p3, &GlossSequence::new(vec![0, 1]), false), Err(HstError::Infeasible(_))));
    }

    #[test]
    fn unnormalized_rows_rejected() {
        let p = probs(array![[0.5, 0.6]]);
        assert!(matches!(ctc_loss(&p, &GlossSequence::new(vec![0]), false), Err(HstError::Domain(_))));
    }

    #[test]
    fn empty_label_sequence_is_all_blank() {
        let p = probs(array![[0.3, 0.7], [0.1, 0.9]]);
        let r = ctc_loss(&p, &GlossSequence::default(), false).unwrap();
        assert!((r.negative_log_likelihood - (-(0.63f64).ln())).abs() < 1e-12);
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let logits = array![[0.3, -1.0, 0.5, 0.1], [1.2, 0.0, -0.4, 0.2], [0.0, 0.9, 0.3, -0.8]];
        let p = probs(softmax_rows(&logits));
        let r = ctc_loss(&p, &GlossSequence::new(vec![1, 2]), true).unwrap();
        for row in r.gradient.unwrap().rows() {
            assert!(row.sum().abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_size_guard() {
        let p = probs(Array2::from_elem((9, 5), 0.2));
        assert!(matches!(ctc_brute_force(&p, &GlossSequence::new(vec![0])), Err(HstError::OracleTooLarge(_))));
    }

    #[test]
    fn collapse_rule() {
        assert_eq!(collapse(&[2, 0, 0, 2, 1], 2), vec![0, 1]);
        assert_eq!(collapse(&[0, 2, 0], 2), vec![0, 0]);
        assert!(collapse(&[2, 2], 2).is_empty());
    }
}
