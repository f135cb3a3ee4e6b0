//! Layer-wise cross-modal contrastive loss.
//!
//! For a frame feature `v` with pseudo label `y` and a tree layer `k`, the
//! positives are the layer-k nodes whose gloss set contains `y` and the
//! negatives are the rest of the layer. The per-term loss is
//!
//! ```text
//! L = -(1/|pos|) * ln( sum_pos exp(cos(v, t_i)) / sum_neg exp(cos(v, t_j)) )
//! ```
//!
//! with the denominator over negatives only, so a term can be negative.
//! The reported loss is the mean over all (frame, layer) terms that have both
//! positives and negatives.

use ndarray::Array2;

use crate::data::LogitMatrix;
use crate::error::{HstError, Result};
use crate::scalar::{argmax, log_sum_exp, Scalar};
use crate::tree::Hst;

/// Per-frame argmax class, or `None` when the blank wins.
pub fn pseudo_labels<S: Scalar>(logits: &LogitMatrix<S>) -> Vec<Option<usize>> {
    (0..logits.frames())
        .map(|t| argmax(logits.row(t)).filter(|&k| k != logits.blank()))
        .collect()
}

/// Splits the whole of layer `layer` into nodes that contain `gloss` and the rest.
pub fn select_pos_neg<S: Scalar>(tree: &Hst<S>, gloss: usize, layer: u8) -> Result<(Vec<usize>, Vec<usize>)> {
    if layer < 1 || layer > tree.depth() {
        return Err(HstError::Config(format!("layer {layer} outside 1..={}", tree.depth())));
    }
    Ok(tree.level_ids(layer).into_iter().partition(|&id| tree.nodes()[id].gloss_ids.contains(&gloss)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerPartition {
    pub layer: u8,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveFrame<S> {
    pub frame: usize,
    pub feature: Vec<S>,
    pub label: usize,
    pub layers: Vec<LayerPartition>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveBatch<S> {
    pub frames: Vec<ContrastiveFrame<S>>,
}

impl<S: Scalar> ContrastiveBatch<S> {
    /// One entry per frame with a pseudo label; blank frames are dropped.
    pub fn build(tree: &Hst<S>, features: &Array2<S>, labels: &[Option<usize>]) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(HstError::Shape(format!(
                "{} feature rows but {} pseudo labels",
                features.nrows(),
                labels.len()
            )));
        }
        if features.ncols() != tree.dimension() {
            return Err(HstError::DimensionMismatch { expected: tree.dimension(), found: features.ncols() });
        }
        let mut frames = Vec::new();
        for (t, label) in labels.iter().enumerate() {
            let Some(y) = *label else { continue };
            let layers = (1..=tree.depth())
                .map(|layer| {
                    select_pos_neg(tree, y, layer).map(|(positives, negatives)| LayerPartition {
                        layer,
                        positives,
                        negatives,
                    })
                })
                .collect::<Result<_>>()?;
            frames.push(ContrastiveFrame { frame: t, feature: features.row(t).to_vec(), label: y, layers });
        }
        Ok(Self { frames })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveOutput<S> {
    pub value: S,
    /// Contributing (frame, layer) terms per layer, index 0 = layer 1.
    pub terms_per_layer: Vec<usize>,
    /// dLoss/dv for each batch frame, rows in batch order.
    pub gradient: Option<Array2<S>>,
}

impl<S> ContrastiveOutput<S> {
    pub fn terms(&self) -> usize {
        self.terms_per_layer.iter().sum()
    }
}

struct NodeFeatures<'a, S> {
    tree: &'a Hst<S>,
    norms: Vec<S>,
}

impl<'a, S: Scalar> NodeFeatures<'a, S> {
    fn new(tree: &'a Hst<S>) -> Self {
        let norms = tree
            .nodes()
            .iter()
            .map(|n| n.centroid.as_slice().iter().fold(S::zero(), |a, &x| a + x * x).sqrt())
            .collect();
        Self { tree, norms }
    }

    fn centroid(&self, id: usize) -> &[S] {
        self.tree.nodes()[id].centroid.as_slice()
    }
}

fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Loss of one (frame, layer) term and, optionally, its gradient accumulated
/// into `grad` scaled by `weight`.
fn term<S: Scalar>(
    v: &[S],
    v_norm: S,
    part: &LayerPartition,
    nodes: &NodeFeatures<'_, S>,
    grad: Option<(&mut [S], S)>,
) -> S {
    let cos = |id: usize| -> S {
        let n = nodes.norms[id];
        if v_norm == S::zero() || n == S::zero() {
            S::zero()
        } else {
            dot(v, nodes.centroid(id)) / (v_norm * n)
        }
    };
    let pos: Vec<S> = part.positives.iter().map(|&id| cos(id)).collect();
    let neg: Vec<S> = part.negatives.iter().map(|&id| cos(id)).collect();
    let n_pos = S::from_usize(pos.len()).expect("count fits scalar");
    let lse_pos = log_sum_exp(&pos);
    let lse_neg = log_sum_exp(&neg);
    let value = -(lse_pos - lse_neg) / n_pos;

    if let Some((g, weight)) = grad {
        if v_norm > S::zero() {
            // d cos(v, t) / dv = t / (|v||t|) - cos * v / |v|^2
            let mut add = |id: usize, c: S, coeff: S| {
                let n = nodes.norms[id];
                if n == S::zero() {
                    return;
                }
                let t = nodes.centroid(id);
                for j in 0..v.len() {
                    g[j] += weight * coeff * (t[j] / (v_norm * n) - c * v[j] / (v_norm * v_norm));
                }
            };
            for (&id, &c) in part.positives.iter().zip(&pos) {
                add(id, c, -(c - lse_pos).exp() / n_pos);
            }
            for (&id, &c) in part.negatives.iter().zip(&neg) {
                add(id, c, (c - lse_neg).exp() / n_pos);
            }
        }
    }
    value
}

pub fn contrastive_loss<S: Scalar>(
    batch: &ContrastiveBatch<S>,
    tree: &Hst<S>,
    with_gradient: bool,
) -> Result<ContrastiveOutput<S>> {
    let depth = tree.depth() as usize;
    let mut terms_per_layer = vec![0usize; depth];
    for f in &batch.frames {
        if f.feature.len() != tree.dimension() {
            return Err(HstError::DimensionMismatch { expected: tree.dimension(), found: f.feature.len() });
        }
        for part in &f.layers {
            if part.layer < 1 || part.layer as usize > depth {
                return Err(HstError::Consistency(format!("layer {} outside the tree", part.layer)));
            }
            if let Some(id) = part.positives.iter().chain(&part.negatives).find(|&&id| tree.node(id).is_none()) {
                return Err(HstError::Consistency(format!("batch references missing node {id}")));
            }
            if !part.positives.is_empty() && !part.negatives.is_empty() {
                terms_per_layer[part.layer as usize - 1] += 1;
            }
        }
    }
    let count: usize = terms_per_layer.iter().sum();
    if count == 0 {
        return Err(HstError::NoSignal);
    }
    let weight = S::one() / S::from_usize(count).expect("count fits scalar");

    let nodes = NodeFeatures::new(tree);
    let d = tree.dimension();
    let mut gradient = with_gradient.then(|| Array2::zeros((batch.frames.len(), d)));
    let mut total = S::zero();
    for (i, f) in batch.frames.iter().enumerate() {
        let v_norm = dot(&f.feature, &f.feature).sqrt();
        for part in &f.layers {
            if part.positives.is_empty() || part.negatives.is_empty() {
                continue;
            }
            let g = gradient
                .as_mut()
                .map(|g: &mut Array2<S>| (g.row_mut(i).into_slice().expect("standard layout"), weight));
            total += term(&f.feature, v_norm, part, &nodes, g);
        }
    }
    Ok(ContrastiveOutput { value: total * weight, terms_per_layer, gradient })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::EmbeddingVector;
    use crate::tree::{HstNode, TreeConfig};
    use ndarray::array;

    /// Two level-1 leaves: node 0 (gloss 0) at `a`, node 1 (gloss 1) at `b`.
    fn two_node_tree(a: [f64; 2], b: [f64; 2]) -> Hst<f64> {
        let node = |id: usize, c: [f64; 2]| HstNode {
            node_id: id,
            level: 1,
            parent_id: None,
            children: vec![],
            centroid: EmbeddingVector::new(c.to_vec()).unwrap(),
            member_statement_ids: [id as u64].into(),
            gloss_ids: [id].into(),
        };
        Hst::from_parts(2, TreeConfig { depth: 1, ..Default::default() }, vec![node(0, a), node(1, b)]).unwrap()
    }

    #[test]
    fn opposite_cosines_give_minus_two() {
        let tree = two_node_tree([1.0, 0.0], [-1.0, 0.0]);
        let batch = ContrastiveBatch::build(&tree, &array![[3.0, 0.0]], &[Some(0)]).unwrap();
        let out = contrastive_loss(&batch, &tree, false).unwrap();
        assert!((out.value - (-2.0)).abs() < 1e-12);
        assert_eq!(out.terms_per_layer, vec![1]);
    }

    #[test]
    fn orthogonal_cosines_give_zero() {
        let tree = two_node_tree([0.0, 1.0], [0.0, -1.0]);
        let batch = ContrastiveBatch::build(&tree, &array![[2.0, 0.0]], &[Some(0)]).unwrap();
        assert!(contrastive_loss(&batch, &tree, false).unwrap().value.abs() < 1e-12);
    }

    #[test]
    fn blank_frames_and_single_gloss_layers_are_skipped() {
        let tree = two_node_tree([1.0, 0.0], [0.0, 1.0]);
        let batch = ContrastiveBatch::build(&tree, &array![[1.0, 0.0], [0.0, 1.0]], &[None, Some(1)]).unwrap();
        assert_eq!(batch.frames.len(), 1);
        assert_eq!(batch.frames[0].frame, 1);

        let mut lonely = batch.clone();
        lonely.frames[0].layers[0].negatives.clear();
        assert!(matches!(contrastive_loss(&lonely, &tree, false), Err(HstError::NoSignal)));
    }

    #[test]
    fn pseudo_label_rules() {
        let l = LogitMatrix::new(array![[0.1f64, 0.2, 0.3, 0.9, 0.0], [0.1, 0.1, 0.1, 0.1, 0.6], [0.4, 0.4, 0.1, 0.0, 0.1]])
            .unwrap();
        assert_eq!(pseudo_labels(&l), vec![Some(3), None, Some(0)]);
    }

    #[test]
    fn layer_out_of_range() {
        let tree = two_node_tree([1.0, 0.0], [0.0, 1.0]);
        assert!(select_pos_neg(&tree, 0, 2).is_err());
        assert!(select_pos_neg(&tree, 0, 0).is_err());
        assert_eq!(select_pos_neg(&tree, 1, 1).unwrap(), (vec![1], vec![0]));
    }
}
