//! Central finite-difference checks for the CTC, contrastive and model
//! gradients on random small fixtures.

use ndarray::Array2;
use rand::{RngExt, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_pcg::Pcg64Mcg;
use serde::{Deserialize, Serialize};

use crate::contrastive::{contrastive_loss, ContrastiveBatch};
use crate::ctc::{ctc_loss, min_frames, softmax_rows};
use crate::data::{GlossSequence, LogitMatrix, VisualSequence};
use crate::error::Result;
use crate::model::{LinearModel, TrainConfig};
use crate::synth::{generate_corpus, SynthConfig};
use crate::tree::{build_hst, BranchingRule, Hst, TreeConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    pub fixtures: usize,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { fixtures: 50, seed: 7, step: 1e-6, tolerance: 1e-4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub name: String,
    pub fixtures: usize,
    pub components: usize,
    pub max_relative_error: f64,
    pub failures: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// `|a - n| / max(|a|, |n|, 1e-6)`: relative error, switching to absolute
/// error for near-zero components.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

struct Tally {
    report: GradCheckReport,
    tolerance: f64,
}

impl Tally {
    fn new(name: &str, tolerance: f64) -> Self {
        Self {
            report: GradCheckReport {
                name: name.into(),
                fixtures: 0,
                components: 0,
                max_relative_error: 0.0,
                failures: 0,
            },
            tolerance,
        }
    }

    fn compare(&mut self, analytic: f64, numeric: f64) {
        let e = relative_error(analytic, numeric);
        self.report.components += 1;
        self.report.max_relative_error = self.report.max_relative_error.max(e);
        if !(e < self.tolerance) {
            self.report.failures += 1;
        }
    }
}

fn central<F: FnMut(f64) -> Result<f64>>(x: f64, h: f64, mut f: F) -> Result<f64> {
    Ok((f(x + h)? - f(x - h)?) / (2.0 * h))
}

fn gaussian_matrix(rng: &mut Pcg64Mcg, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    })
}

fn random_labels(rng: &mut Pcg64Mcg, n_classes: usize, frames: usize) -> GlossSequence {
    loop {
        let len = rng.random_range(0..=frames.min(3));
        let labels: Vec<usize> = (0..len).map(|_| rng.random_range(0..n_classes)).collect();
        if min_frames(&labels) <= frames {
            return GlossSequence::new(labels);
        }
    }
}

fn ctc_nll(logits: &Array2<f64>, labels: &GlossSequence) -> Result<f64> {
    let probs = LogitMatrix::new(softmax_rows(logits))?;
    Ok(ctc_loss(&probs, labels, false)?.negative_log_likelihood)
}

/// CTC gradient with respect to pre-softmax logits, T <= 6, N <= 4.
pub fn check_ctc(config: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = Pcg64Mcg::seed_from_u64(config.seed);
    let mut tally = Tally::new("ctc", config.tolerance);
    for _ in 0..config.fixtures {
        let frames = rng.random_range(1..=6);
        let n = rng.random_range(1..=4);
        let labels = random_labels(&mut rng, n, frames);
        let logits = gaussian_matrix(&mut rng, frames, n + 1, 1.5);
        let probs = LogitMatrix::new(softmax_rows(&logits))?;
        let analytic = ctc_loss(&probs, &labels, true)?.gradient.expect("requested");
        for ((t, k), &a) in analytic.indexed_iter() {
            let numeric = central(logits[[t, k]], config.step, |x| {
                let mut l = logits.clone();
                l[[t, k]] = x;
                ctc_nll(&l, &labels)
            })?;
            tally.compare(a, numeric);
        }
        tally.report.fixtures += 1;
    }
    Ok(tally.report)
}

/// A small random depth-3 tree over `n_glosses` glosses.
fn random_tree(rng: &mut Pcg64Mcg, n_glosses: usize, dimension: usize) -> Result<Hst<f64>> {
    let synth = SynthConfig {
        n_glosses,
        subactions_per_gloss: 3,
        dimension,
        noise_sigma: 0.3,
        seed: rng.random(),
        ..Default::default()
    };
    let corpus = generate_corpus::<f64>(&synth)?;
    let tree_config = TreeConfig { branching_rule: BranchingRule::Fixed(2), seed: rng.random(), ..Default::default() };
    build_hst(&corpus, &tree_config)
}

/// Contrastive gradient with respect to the frame features.
pub fn check_contrastive(config: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = Pcg64Mcg::seed_from_u64(config.seed ^ 0x5A5A);
    let mut tally = Tally::new("contrastive", config.tolerance);
    while tally.report.fixtures < config.fixtures {
        let n = rng.random_range(2..=4);
        let d = rng.random_range(2..=6);
        let tree = random_tree(&mut rng, n, d)?;
        let frames = rng.random_range(1..=6);
        let features = gaussian_matrix(&mut rng, frames, d, 1.0);
        let labels: Vec<Option<usize>> =
            (0..frames).map(|_| rng.random_range(0..=n)).map(|y| (y < n).then_some(y)).collect();
        let batch = ContrastiveBatch::build(&tree, &features, &labels)?;
        let Ok(out) = contrastive_loss(&batch, &tree, true) else { continue };
        let analytic = out.gradient.expect("requested");
        for (i, f) in batch.frames.iter().enumerate() {
            for j in 0..d {
                let numeric = central(f.feature[j], config.step, |x| {
                    let mut b = batch.clone();
                    b.frames[i].feature[j] = x;
                    Ok(contrastive_loss(&b, &tree, false)?.value)
                })?;
                tally.compare(analytic[[i, j]], numeric);
            }
        }
        tally.report.fixtures += 1;
    }
    Ok(tally.report)
}

/// Smallest gap between the two largest probabilities over all frames.
fn min_top2_gap(probs: &LogitMatrix<f64>) -> f64 {
    (0..probs.frames())
        .map(|t| {
            let mut row = probs.row(t).to_vec();
            row.sort_by(|a, b| b.total_cmp(a));
            row[0] - row[1]
        })
        .fold(f64::INFINITY, f64::min)
}

/// Full model gradient (CTC + contrastive) on T = 4, N = 3, d = 4 fixtures.
/// Fixtures whose pseudo labels could flip under a step are redrawn.
pub fn check_model(config: &GradCheckConfig) -> Result<GradCheckReport> {
    const T: usize = 4;
    const N: usize = 3;
    const D: usize = 4;
    let mut rng = Pcg64Mcg::seed_from_u64(config.seed ^ 0xC0FFEE);
    let mut tally = Tally::new("model", config.tolerance);
    let train = TrainConfig { lambda_c: 1.0, ..Default::default() };
    while tally.report.fixtures < config.fixtures {
        let tree = random_tree(&mut rng, N, D)?;
        let model = LinearModel::<f64>::init(D, D, N, rng.random(), 0.8);
        let raw = VisualSequence::new("fixture", gaussian_matrix(&mut rng, T, D, 1.0))?;
        let labels = random_labels(&mut rng, N, T);
        if min_top2_gap(&model.forward(&raw)?.probs) < 1e-3 {
            continue;
        }
        let analytic = model.total_loss(&raw, &labels, &tree, &train)?.gradients.parameters();
        let base = model.parameters();
        for (p, &a) in analytic.iter().enumerate() {
            let numeric = central(base[p], config.step, |x| {
                let mut m = model.clone();
                *m.parameters_mut().nth(p).expect("index in range") = x;
                Ok(m.total_loss(&raw, &labels, &tree, &train)?.total)
            })?;
            tally.compare(a, numeric);
        }
        tally.report.fixtures += 1;
    }
    Ok(tally.report)
}

pub fn check_all(config: &GradCheckConfig) -> Result<Vec<GradCheckReport>> {
    Ok(vec![check_ctc(config)?, check_contrastive(config)?, check_model(config)?])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(2.0, 1.0), 0.5);
        assert!((relative_error(0.0, 1e-9) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn small_suite_passes() {
        let cfg = GradCheckConfig { fixtures: 5, ..Default::default() };
        for r in check_all(&cfg).unwrap() {
            assert!(r.passed(), "{r:?}");
            assert_eq!(r.fixtures, 5);
        }
    }
}
