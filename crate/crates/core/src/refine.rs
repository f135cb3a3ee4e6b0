//! Hierarchical logit updating: every gloss found on a frame's selected path
//! is scaled by `alpha` once per path node that contains it.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::LogitMatrix;
use crate::error::{HstError, Result};
use crate::scalar::Scalar;
use crate::search::{Granularity, PathSelection};
use crate::tree::Hst;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefinerConfig {
    pub alpha: f64,
    /// Rescale each updated row to sum to 1. Inputs must then be probabilities.
    pub normalize_rows: bool,
}

impl Default for RefinerConfig {
    fn default() -> Self {
        Self { alpha: 1.5, normalize_rows: true }
    }
}

impl RefinerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(HstError::Config(format!("alpha must be positive and finite, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// T x (N+1) multiplicative coefficients; the blank column is always 1.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateMatrix<S> {
    pub coefficients: Array2<S>,
}

/// `counts[[t, g]]` = number of nodes on frame t's path whose gloss set holds g.
pub fn path_gloss_counts<S: Scalar>(
    path: &PathSelection<S>,
    tree: &Hst<S>,
    frames: usize,
    n_classes: usize,
) -> Result<Array2<u32>> {
    match path.granularity {
        Granularity::PerVideo if path.entries.len() != 1 => {
            return Err(HstError::Consistency(format!(
                "per-video path must hold one entry, found {}",
                path.entries.len()
            )));
        }
        Granularity::PerFrame if path.entries.len() != frames => {
            return Err(HstError::Consistency(format!(
                "per-frame path covers {} frames, logits have {frames}",
                path.entries.len()
            )));
        }
        _ => {}
    }

    let mut rows: Vec<Vec<u32>> = Vec::with_capacity(path.entries.len());
    for (i, entry) in path.entries.iter().enumerate() {
        if path.granularity == Granularity::PerFrame && entry.frame != Some(i) {
            return Err(HstError::Consistency(format!("path entry {i} is labelled frame {:?}", entry.frame)));
        }
        let mut row = vec![0u32; n_classes];
        for &id in &entry.nodes {
            let node = tree
                .node(id)
                .ok_or_else(|| HstError::Consistency(format!("path references node {id} absent from the tree")))?;
            for &g in &node.gloss_ids {
                if g >= n_classes {
                    return Err(HstError::Consistency(format!("node {id} holds gloss {g} beyond {n_classes} classes")));
                }
                row[g] += 1;
            }
        }
        rows.push(row);
    }

    Ok(Array2::from_shape_fn((frames, n_classes), |(t, g)| match path.granularity {
        Granularity::PerVideo => rows[0][g],
        Granularity::PerFrame => rows[t][g],
    }))
}

pub fn build_update_matrix<S: Scalar>(
    path: &PathSelection<S>,
    tree: &Hst<S>,
    frames: usize,
    n_classes: usize,
    config: &RefinerConfig,
) -> Result<UpdateMatrix<S>> {
    config.validate()?;
    let counts = path_gloss_counts(path, tree, frames, n_classes)?;
    UpdateMatrix::from_counts(&counts, config.alpha)
}

impl<S: Scalar> UpdateMatrix<S> {
    /// `alpha^count` per gloss column plus a blank column of ones.
    pub fn from_counts(counts: &Array2<u32>, alpha: f64) -> Result<Self> {
        RefinerConfig { alpha, normalize_rows: false }.validate()?;
        let (frames, n_classes) = counts.dim();
        let alpha = S::lit(alpha);
        let coefficients = Array2::from_shape_fn((frames, n_classes + 1), |(t, g)| {
            if g == n_classes {
                S::one()
            } else {
                alpha.powi(counts[[t, g]] as i32)
            }
        });
        Ok(Self { coefficients })
    }
}

/// Elementwise product of the scores with the update matrix, optionally
/// followed by per-row renormalization.
pub fn refine_logits<S: Scalar>(
    origin: &LogitMatrix<S>,
    update: &UpdateMatrix<S>,
    config: &RefinerConfig,
) -> Result<LogitMatrix<S>> {
    if origin.scores().dim() != update.coefficients.dim() {
        return Err(HstError::Shape(format!(
            "logits {:?} vs update matrix {:?}",
            origin.scores().dim(),
            update.coefficients.dim()
        )));
    }
    let mut out = origin.scores() * &update.coefficients;
    if config.normalize_rows {
        if let Some(((t, c), v)) = origin.scores().indexed_iter().find(|(_, v)| **v < S::zero()) {
            return Err(HstError::Domain(format!("negative probability {v} at frame {t}, class {c}")));
        }
        for (t, mut row) in out.rows_mut().into_iter().enumerate() {
            let sum = row.iter().fold(S::zero(), |a, &x| a + x);
            if !(sum > S::zero()) {
                return Err(HstError::Domain(format!("frame {t} has zero total probability")));
            }
            row.mapv_inplace(|x| x / sum);
        }
    }
    LogitMatrix::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::EmbeddingVector;
    use crate::search::PathEntry;
    use crate::tree::{HstNode, TreeConfig};
    use ndarray::array;
    use std::collections::BTreeSet;

    fn node(id: usize, level: u8, parent: Option<usize>, children: Vec<usize>, glosses: &[usize]) -> HstNode<f64> {
        HstNode {
            node_id: id,
            level,
            parent_id: parent,
            children,
            centroid: EmbeddingVector::new(vec![1.0, 0.0]).unwrap(),
            member_statement_ids: (0..glosses.len() as u64).collect(),
            gloss_ids: glosses.iter().copied().collect::<BTreeSet<_>>(),
        }
    }

    /// chain 0 -> 1 -> 2 with gloss 0 at every level and gloss 1 only at level 1
    fn chain() -> Hst<f64> {
        let mut leaf = node(2, 3, Some(1), vec![], &[0]);
        leaf.member_statement_ids = [0].into();
        Hst::from_parts(
            2,
            TreeConfig::default(),
            vec![node(0, 1, None, vec![1], &[0, 1]), node(1, 2, Some(0), vec![2], &[0]), leaf],
        )
        .unwrap()
    }

    fn per_video(nodes: Vec<usize>) -> PathSelection<f64> {
        PathSelection {
            granularity: Granularity::PerVideo,
            frames: 2,
            entries: vec![PathEntry { frame: None, scores: vec![1.0; nodes.len()], nodes }],
        }
    }

    #[test]
    fn leaf_gloss_gets_alpha_cubed() {
        let tree = chain();
        let w = build_update_matrix(&per_video(vec![0, 1, 2]), &tree, 2, 3, &RefinerConfig::default()).unwrap();
        for t in 0..2 {
            assert_eq!(w.coefficients[[t, 0]], 3.375);
            assert_eq!(w.coefficients[[t, 1]], 1.5);
            assert_eq!(w.coefficients[[t, 2]], 1.0);
            assert_eq!(w.coefficients[[t, 3]], 1.0);
        }
    }

    #[test]
    fn alpha_one_gives_ones() {
        let tree = chain();
        let cfg = RefinerConfig { alpha: 1.0, normalize_rows: false };
        let w = build_update_matrix(&per_video(vec![0, 1, 2]), &tree, 2, 3, &cfg).unwrap();
        assert!(w.coefficients.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn unknown_node_is_a_consistency_error() {
        let tree = chain();
        let err = build_update_matrix(&per_video(vec![0, 9]), &tree, 2, 3, &RefinerConfig::default()).unwrap_err();
        assert!(matches!(err, HstError::Consistency(_)));
    }

    #[test]
    fn frame_count_must_match() {
        let tree = chain();
        let path = PathSelection {
            granularity: Granularity::PerFrame,
            frames: 1,
            entries: vec![PathEntry { frame: Some(0), nodes: vec![0, 1, 2], scores: vec![1.0; 3] }],
        };
        assert!(build_update_matrix(&path, &tree, 2, 3, &RefinerConfig::default()).is_err());
    }

    #[test]
    fn hadamard_rule() {
        let l = LogitMatrix::new(array![[0.4f64, 0.4, 0.2]]).unwrap();
        let w = UpdateMatrix { coefficients: array![[3.375f64, 1.0, 1.0]] };
        let raw = refine_logits(&l, &w, &RefinerConfig { alpha: 1.5, normalize_rows: false }).unwrap();
        assert_eq!(raw.scores(), &array![[1.35, 0.4, 0.2]]);

        let norm = refine_logits(&l, &w, &RefinerConfig { alpha: 1.5, normalize_rows: true }).unwrap();
        let total = 1.35 + 0.4 + 0.2;
        for (got, want) in norm.row(0).iter().zip([1.35 / total, 0.4 / total, 0.2 / total]) {
            assert!((got - want).abs() < 1e-15);
        }

        let ones = UpdateMatrix { coefficients: array![[1.0f64, 1.0, 1.0]] };
        let same = refine_logits(&l, &ones, &RefinerConfig { alpha: 1.0, normalize_rows: false }).unwrap();
        assert_eq!(same, l);
    }

    #[test]
    fn rejects_negative_probabilities_and_bad_shapes() {
        let l = LogitMatrix::new(array![[-0.1f64, 0.6, 0.5]]).unwrap();
        let ones = UpdateMatrix { coefficients: array![[1.0f64, 1.0, 1.0]] };
        assert!(matches!(refine_logits(&l, &ones, &RefinerConfig::default()), Err(HstError::Domain(_))));
        let wrong = UpdateMatrix { coefficients: array![[1.0f64, 1.0]] };
        assert!(matches!(refine_logits(&l, &wrong, &RefinerConfig::default()), Err(HstError::Shape(_))));
        assert!(RefinerConfig { alpha: 0.0, normalize_rows: true }.validate().is_err());
    }
}
