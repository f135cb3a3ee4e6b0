//! Greedy root-to-leaf descent through the tree by cosine similarity.

use serde::{Deserialize, Serialize};

use crate::data::VisualSequence;
use crate::error::{HstError, Result};
use crate::scalar::Scalar;
use crate::tree::Hst;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    /// One query per frame, pooled over a symmetric window.
    #[default]
    PerFrame,
    /// One query for the whole sequence (mean of all frames).
    PerVideo,
}

impl std::str::FromStr for Granularity {
    type Err = HstError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-frame" => Ok(Self::PerFrame),
            "per-video" => Ok(Self::PerVideo),
            other => Err(HstError::Config(format!("unknown granularity {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub granularity: Granularity,
    pub window_radius: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { granularity: Granularity::PerFrame, window_radius: 2 }
    }
}

/// The chosen chain for one query: `nodes[i]` sits at level `i + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathEntry<S> {
    /// Frame index, or `None` for a whole-video query.
    pub frame: Option<usize>,
    pub nodes: Vec<usize>,
    pub scores: Vec<S>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathSelection<S> {
    pub granularity: Granularity,
    /// Frame count of the searched sequence.
    pub frames: usize,
    pub entries: Vec<PathEntry<S>>,
}

impl<S: Scalar> PathSelection<S> {
    /// The chain that applies to frame `t`.
    pub fn entry_for_frame(&self, t: usize) -> Option<&PathEntry<S>> {
        match self.granularity {
            Granularity::PerVideo => self.entries.first(),
            Granularity::PerFrame => self.entries.get(t),
        }
    }
}

fn dot<S: Scalar>(u: &[S], v: &[S]) -> S {
    let mut acc = S::zero();
    for (&a, &b) in u.iter().zip(v) {
        acc += a * b;
    }
    acc
}

fn norm<S: Scalar>(u: &[S]) -> S {
    dot(u, u).sqrt()
}

/// Cosine similarity and a flag that is set when either vector has zero norm
/// (the similarity is then reported as 0).
pub fn cosine_with_flag<S: Scalar>(u: &[S], v: &[S]) -> Result<(S, bool)> {
    if u.len() != v.len() {
        return Err(HstError::DimensionMismatch { expected: u.len(), found: v.len() });
    }
    Ok(cosine_from_norms(u, v, norm(u), norm(v)))
}

pub fn cosine<S: Scalar>(u: &[S], v: &[S]) -> Result<S> {
    cosine_with_flag(u, v).map(|(c, _)| c)
}

fn cosine_from_norms<S: Scalar>(u: &[S], v: &[S], nu: S, nv: S) -> (S, bool) {
    if nu == S::zero() || nv == S::zero() {
        return (S::zero(), true);
    }
    (dot(u, v) / (nu * nv), false)
}

/// Mean of frames `max(0, t - r) ..= min(T - 1, t + r)`.
pub fn pool_feature<S: Scalar>(seq: &VisualSequence<S>, t: usize, radius: usize) -> Vec<S> {
    assert!(t < seq.len(), "frame {t} out of range for {} frames", seq.len());
    let lo = t.saturating_sub(radius);
    let hi = (t + radius).min(seq.len() - 1);
    mean_rows(seq, lo, hi)
}

fn mean_rows<S: Scalar>(seq: &VisualSequence<S>, lo: usize, hi: usize) -> Vec<S> {
    let mut acc = vec![S::zero(); seq.dim()];
    for t in lo..=hi {
        for (a, &x) in acc.iter_mut().zip(seq.frame(t)) {
            *a += x;
        }
    }
    let count = S::from_usize(hi - lo + 1).expect("window size fits scalar");
    for a in acc.iter_mut() {
        *a /= count;
    }
    acc
}

/// Query vectors paired with the frame they belong to.
pub(crate) fn queries<S: Scalar>(seq: &VisualSequence<S>, config: &SearchConfig) -> Vec<(Option<usize>, Vec<S>)> {
    match config.granularity {
        Granularity::PerFrame => {
            (0..seq.len()).map(|t| (Some(t), pool_feature(seq, t, config.window_radius))).collect()
        }
        Granularity::PerVideo => vec![(None, mean_rows(seq, 0, seq.len() - 1))],
    }
}

/// Precomputed centroid norms for repeated searches against one tree.
pub struct PathSearcher<'a, S> {
    tree: &'a Hst<S>,
    norms: Vec<S>,
}

impl<'a, S: Scalar> PathSearcher<'a, S> {
    pub fn new(tree: &'a Hst<S>) -> Self {
        let norms = tree.nodes().iter().map(|n| norm(n.centroid.as_slice())).collect();
        Self { tree, norms }
    }

    /// Greedy descent for one query vector. Ties go to the lower node id.
    pub fn descend(&self, query: &[S]) -> (Vec<usize>, Vec<S>) {
        let qn = norm(query);
        let mut nodes = Vec::with_capacity(self.tree.depth() as usize);
        let mut scores = Vec::with_capacity(self.tree.depth() as usize);
        let mut candidates: &[usize] = self.tree.level1_ids();
        while !candidates.is_empty() {
            let mut best: Option<(usize, S)> = None;
            for &id in candidates {
                let c = self.tree.nodes()[id].centroid.as_slice();
                let (score, _) = cosine_from_norms(query, c, qn, self.norms[id]);
                let better = match best {
                    None => true,
                    Some((bid, bs)) => score > bs || (score == bs && id < bid),
                };
                if better {
                    best = Some((id, score));
                }
            }
            let (id, score) = best.expect("non-empty candidate set");
            nodes.push(id);
            scores.push(score);
            candidates = &self.tree.nodes()[id].children;
        }
        (nodes, scores)
    }

    pub fn search(&self, seq: &VisualSequence<S>, config: &SearchConfig) -> Result<PathSelection<S>> {
        if seq.dim() != self.tree.dimension() {
            return Err(HstError::DimensionMismatch { expected: self.tree.dimension(), found: seq.dim() });
        }
        let entries = queries(seq, config)
            .into_iter()
            .map(|(frame, q)| {
                let (nodes, scores) = self.descend(&q);
                PathEntry { frame, nodes, scores }
            })
            .collect();
        Ok(PathSelection { granularity: config.granularity, frames: seq.len(), entries })
    }
}

pub fn search_path<S: Scalar>(tree: &Hst<S>, seq: &VisualSequence<S>, config: &SearchConfig) -> Result<PathSelection<S>> {
    PathSearcher::new(tree).search(seq, config)
}

/// Independent replay of the greedy descent used to cross-check
/// [`search_path`]. Scans the full node list at every level instead of
/// following child links and recomputes every similarity from scratch.
/// Quadratic in the node count; meant for small trees.
pub fn search_path_oracle<S: Scalar>(
    tree: &Hst<S>,
    seq: &VisualSequence<S>,
    config: &SearchConfig,
) -> Result<PathSelection<S>> {
    let d = tree.dimension();
    if seq.dim() != d {
        return Err(HstError::DimensionMismatch { expected: d, found: seq.dim() });
    }
    let t_len = seq.len();

    let pooled = |center: Option<usize>| -> Vec<S> {
        let mut sum = vec![S::zero(); d];
        let mut count = 0usize;
        for t in 0..t_len {
            let inside = match center {
                None => true,
                Some(c) => t.abs_diff(c) <= config.window_radius,
            };
            if inside {
                count += 1;
                for (acc, &x) in sum.iter_mut().zip(seq.frame(t)) {
                    *acc += x;
                }
            }
        }
        let count = S::from_usize(count).unwrap();
        sum.into_iter().map(|x| x / count).collect()
    };

    let similarity = |q: &[S], c: &[S]| -> S {
        let (mut uv, mut uu, mut vv) = (S::zero(), S::zero(), S::zero());
        for j in 0..d {
            uv += q[j] * c[j];
            uu += q[j] * q[j];
            vv += c[j] * c[j];
        }
        let (nu, nv) = (uu.sqrt(), vv.sqrt());
        if nu == S::zero() || nv == S::zero() {
            S::zero()
        } else {
            uv / (nu * nv)
        }
    };

    let centers: Vec<Option<usize>> = match config.granularity {
        Granularity::PerFrame => (0..t_len).map(Some).collect(),
        Granularity::PerVideo => vec![None],
    };
    let mut entries = Vec::with_capacity(centers.len());
    for center in centers {
        let q = pooled(center);
        let mut parent: Option<usize> = None;
        let mut nodes = Vec::new();
        let mut scores = Vec::new();
        for level in 1..=tree.depth() {
            let mut best: Option<(usize, S)> = None;
            for n in tree.nodes() {
                if n.level != level || n.parent_id != parent {
                    continue;
                }
                let s = similarity(&q, n.centroid.as_slice());
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((n.node_id, s));
                }
            }
            let Some((id, s)) = best else { break };
            nodes.push(id);
            scores.push(s);
            parent = Some(id);
        }
        entries.push(PathEntry { frame: center, nodes, scores });
    }
    Ok(PathSelection { granularity: config.granularity, frames: t_len, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn cosine_basics() {
        let v = [0.3f64, -1.2, 2.0];
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0f64, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine_with_flag(&[0.0f64, 0.0], &[1.0, 0.0]).unwrap(), (0.0, true));
        assert!(cosine(&[1.0f64], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn cosine_against_exact_rational_evaluation() {
        // dot = 32, |u|^2 = 14, |v|^2 = 77: cos = 32 / sqrt(1078),
        // evaluated at 40 digits: 0.97463184619707627107857249112612286349
        let expected = 0.974_631_846_197_076_2_f64;
        let got = cosine(&[1.0f64, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((got - expected).abs() < 1e-15, "{got}");
    }

    #[test]
    fn pooling_windows() {
        let seq = VisualSequence::new(
            "v",
            array![[1.0f64, 0.0], [2.0, 1.0], [3.0, 5.0], [4.0, -1.0], [5.0, 2.0]],
        )
        .unwrap();
        assert_eq!(pool_feature(&seq, 3, 0), vec![4.0, -1.0]);
        assert_eq!(pool_feature(&seq, 0, 2), vec![2.0, 2.0]);
        assert_eq!(pool_feature(&seq, 4, 1), vec![4.5, 0.5]);
        let constant = VisualSequence::new("c", Array2::from_elem((4, 3), 0.7f64)).unwrap();
        for r in 0..5 {
            assert!(pool_feature(&constant, 1, r).iter().all(|x| (x - 0.7).abs() < 1e-15));
        }
    }
}
