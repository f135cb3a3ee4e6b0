//! Hierarchical sub-action tree construction.
//!
//! Level 1 clusters every statement embedding. Each level-1 node is then
//! re-clustered into level-2 nodes after its member set is extended with the
//! next sub-action (position k+1, same gloss) of every member. Every member of
//! a level-2 node becomes a level-3 leaf.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{DescriptionCorpus, EmbeddingVector, SubActionStatement};
use crate::error::{HstError, Result};
use crate::kmeans::{kmeans, KMeansOptions};
use crate::scalar::Scalar;

/// How many clusters to form from a set of `m` points.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BranchingRule {
    /// `ceil(sqrt(m))`.
    Sqrt,
    /// A fixed count, capped at `m`.
    Fixed(usize),
}

impl BranchingRule {
    pub fn clusters_for(self, m: usize) -> usize {
        match self {
            BranchingRule::Sqrt => (m as f64).sqrt().ceil() as usize,
            BranchingRule::Fixed(k) => k.min(m),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeConfig {
    /// Level-1 cluster count; derived from `branching_rule` when absent.
    pub n1: Option<usize>,
    pub branching_rule: BranchingRule,
    pub seed: u64,
    pub max_iterations: usize,
    pub convergence_epsilon: f64,
    /// Number of levels to build, 1..=3.
    pub depth: u8,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            n1: None,
            branching_rule: BranchingRule::Sqrt,
            seed: 7,
            max_iterations: 100,
            convergence_epsilon: 1e-6,
            depth: 3,
        }
    }
}

impl TreeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n1 == Some(0) {
            return Err(HstError::Config("n1 must be at least 1".into()));
        }
        if self.branching_rule == BranchingRule::Fixed(0) {
            return Err(HstError::Config("fixed branching count must be at least 1".into()));
        }
        if self.max_iterations == 0 {
            return Err(HstError::Config("max_iterations must be at least 1".into()));
        }
        if !(self.convergence_epsilon > 0.0) {
            return Err(HstError::Config("convergence_epsilon must be positive".into()));
        }
        if !(1..=3).contains(&self.depth) {
            return Err(HstError::Config(format!("depth must be 1, 2 or 3, got {}", self.depth)));
        }
        Ok(())
    }

    pub fn kmeans_options(&self) -> KMeansOptions {
        KMeansOptions { max_iterations: self.max_iterations, convergence_epsilon: self.convergence_epsilon }
    }

    /// Seed for the `index`-th clustering run of a build (0 = level 1).
    fn seed_for(&self, index: usize) -> u64 {
        self.seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HstNode<S> {
    pub node_id: usize,
    pub level: u8,
    pub parent_id: Option<usize>,
    pub children: Vec<usize>,
    /// L2-normalized mean of the member embeddings.
    pub centroid: EmbeddingVector<S>,
    pub member_statement_ids: BTreeSet<u64>,
    pub gloss_ids: BTreeSet<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hst<S> {
    dimension: usize,
    config: TreeConfig,
    nodes: Vec<HstNode<S>>,
    level1_ids: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct HstFile<S> {
    dimension: usize,
    config: TreeConfig,
    nodes: Vec<HstNode<S>>,
}

fn normalized_mean<'a, S: Scalar>(members: impl IntoIterator<Item = &'a SubActionStatement<S>>, dim: usize) -> Vec<S> {
    let mut sum = vec![S::zero(); dim];
    let mut count = 0usize;
    for s in members {
        count += 1;
        for (acc, &x) in sum.iter_mut().zip(s.embedding.as_slice()) {
            *acc += x;
        }
    }
    let count = S::from_usize(count.max(1)).expect("count fits scalar");
    for x in sum.iter_mut() {
        *x /= count;
    }
    let norm = sum.iter().map(|&x| x * x).sum::<S>().sqrt();
    if norm > S::zero() {
        for x in sum.iter_mut() {
            *x /= norm;
        }
    }
    sum
}

fn make_node<S: Scalar>(
    corpus: &DescriptionCorpus<S>,
    node_id: usize,
    level: u8,
    parent_id: Option<usize>,
    members: &[u64],
) -> HstNode<S> {
    let stmts: Vec<&SubActionStatement<S>> =
        members.iter().map(|id| corpus.statement(*id).expect("member drawn from corpus")).collect();
    let centroid = normalized_mean(stmts.iter().copied(), corpus.dimension());
    HstNode {
        node_id,
        level,
        parent_id,
        children: Vec::new(),
        centroid: EmbeddingVector::new(centroid).expect("mean of finite vectors is finite"),
        member_statement_ids: members.iter().copied().collect(),
        gloss_ids: stmts.iter().map(|s| s.gloss_id).collect(),
    }
}

/// Builds the tree. Node ids are assigned level by level: all level-1 nodes,
/// then level-2 nodes grouped by parent, then leaves grouped by parent.
pub fn build_hst<S: Scalar>(corpus: &DescriptionCorpus<S>, config: &TreeConfig) -> Result<Hst<S>> {
    build_hst_traced(corpus, config).map(|(tree, _)| tree)
}

/// [`build_hst`] that also returns the WCSS trace of every k-means run, in
/// the order the runs happened (level 1 first).
pub fn build_hst_traced<S: Scalar>(corpus: &DescriptionCorpus<S>, config: &TreeConfig) -> Result<(Hst<S>, Vec<Vec<S>>)> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(HstError::EmptyInput("corpus has no statements".into()));
    }
    let statements: Vec<&SubActionStatement<S>> = corpus.statements().collect();
    // file-order rank of each statement, used to order augmented sets
    let rank: std::collections::HashMap<u64, usize> =
        statements.iter().enumerate().map(|(i, s)| (s.statement_id, i)).collect();
    let options = config.kmeans_options();

    let n1 = config.n1.unwrap_or_else(|| config.branching_rule.clusters_for(statements.len()));
    let points: Vec<&[S]> = statements.iter().map(|s| s.embedding.as_slice()).collect();
    let level1 = kmeans(&points, n1, config.seed_for(0), &options)?;
    let mut traces = vec![level1.wcss_trace.clone()];
    let level1_members: Vec<Vec<u64>> = level1
        .members()
        .into_iter()
        .map(|idx| idx.into_iter().map(|i| statements[i].statement_id).collect())
        .collect();

    let mut nodes: Vec<HstNode<S>> = level1_members
        .iter()
        .enumerate()
        .map(|(i, m)| make_node(corpus, i, 1, None, m))
        .collect();
    let level1_ids: Vec<usize> = (0..nodes.len()).collect();

    if config.depth >= 2 {
        // (parent id, member ids) for every level-2 cluster, in parent order
        let mut level2: Vec<(usize, Vec<u64>)> = Vec::new();
        for (parent, members) in level1_members.iter().enumerate() {
            let mut set: Vec<u64> = members.clone();
            let present: HashSet<u64> = set.iter().copied().collect();
            let mut extra: BTreeSet<u64> = BTreeSet::new();
            for id in members {
                if let Some(next) = corpus.successor(*id) {
                    if !present.contains(&next.statement_id) {
                        extra.insert(next.statement_id);
                    }
                }
            }
            set.extend(extra);
            set.sort_by_key(|id| rank[id]);

            let pts: Vec<&[S]> =
                set.iter().map(|id| corpus.statement(*id).expect("in corpus").embedding.as_slice()).collect();
            let k = config.branching_rule.clusters_for(set.len());
            let km = kmeans(&pts, k, config.seed_for(parent + 1), &options)?;
            traces.push(km.wcss_trace.clone());
            for cluster in km.members() {
                level2.push((parent, cluster.into_iter().map(|i| set[i]).collect()));
            }
        }

        let mut level2_ids = Vec::with_capacity(level2.len());
        for (parent, members) in &level2 {
            let id = nodes.len();
            nodes.push(make_node(corpus, id, 2, Some(*parent), members));
            nodes[*parent].children.push(id);
            level2_ids.push(id);
        }

        if config.depth == 3 {
            for (a_id, (_, members)) in level2_ids.iter().zip(&level2) {
                for &m in members {
                    let id = nodes.len();
                    nodes.push(make_node(corpus, id, 3, Some(*a_id), &[m]));
                    nodes[*a_id].children.push(id);
                }
            }
        }
    }

    Ok((Hst { dimension: corpus.dimension(), config: config.clone(), nodes, level1_ids }, traces))
}

impl<S: Scalar> Hst<S> {
    /// Assembles a tree from raw parts and checks every structural invariant.
    pub fn from_parts(dimension: usize, config: TreeConfig, nodes: Vec<HstNode<S>>) -> Result<Self> {
        let level1_ids = nodes.iter().filter(|n| n.level == 1).map(|n| n.node_id).collect();
        let tree = Self { dimension, config, nodes, level1_ids };
        tree.validate()?;
        Ok(tree)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn config(&self) -> &TreeConfig {
        &self.config
    }

    pub fn depth(&self) -> u8 {
        self.config.depth
    }

    pub fn nodes(&self) -> &[HstNode<S>] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> Option<&HstNode<S>> {
        self.nodes.get(id)
    }

    pub fn level1_ids(&self) -> &[usize] {
        &self.level1_ids
    }

    /// Node ids at `level`, ascending.
    pub fn level_ids(&self, level: u8) -> Vec<usize> {
        self.nodes.iter().filter(|n| n.level == level).map(|n| n.node_id).collect()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Structural invariants that hold independently of the source corpus.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HstError::Consistency(m));
        let depth = self.config.depth;
        if !(1..=3).contains(&depth) {
            return bad(format!("depth {depth} outside 1..=3"));
        }
        if self.nodes.is_empty() {
            return bad("tree has no nodes".into());
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if n.node_id != i {
                return bad(format!("node at index {i} has id {}", n.node_id));
            }
            if n.level < 1 || n.level > depth {
                return bad(format!("node {i} has level {} outside 1..={depth}", n.level));
            }
            if n.centroid.dim() != self.dimension {
                return bad(format!("node {i} centroid has dimension {}", n.centroid.dim()));
            }
            if n.centroid.as_slice().iter().any(|x| !x.is_finite()) {
                return bad(format!("node {i} centroid is not finite"));
            }
            if n.member_statement_ids.is_empty() || n.gloss_ids.is_empty() {
                return bad(format!("node {i} has no members"));
            }
            if n.level == 3 && n.member_statement_ids.len() != 1 {
                return bad(format!("leaf {i} holds {} statements", n.member_statement_ids.len()));
            }
            match n.parent_id {
                None if n.level != 1 => return bad(format!("orphan node {i} at level {}", n.level)),
                Some(_) if n.level == 1 => return bad(format!("level-1 node {i} has a parent")),
                Some(p) => {
                    let Some(parent) = self.nodes.get(p) else {
                        return bad(format!("node {i} points to missing parent {p}"));
                    };
                    if parent.level + 1 != n.level || !parent.children.contains(&i) {
                        return bad(format!("node {i} is not a registered child of {p}"));
                    }
                }
                None => {}
            }
            if n.level == depth && !n.children.is_empty() {
                return bad(format!("deepest-level node {i} has children"));
            }
            if n.level < depth && n.children.is_empty() {
                return bad(format!("inner node {i} has no children"));
            }
            for &c in &n.children {
                match self.nodes.get(c) {
                    Some(child) if child.parent_id == Some(i) => {}
                    _ => return bad(format!("node {i} lists child {c} that does not point back")),
                }
            }
        }
        Ok(())
    }

    /// Checks the tree against the corpus it was built from: memberships,
    /// gloss sets, the level-1 partition, successor augmentation at level 2,
    /// and leaf coverage.
    pub fn validate_against(&self, corpus: &DescriptionCorpus<S>) -> Result<()> {
        self.validate()?;
        let bad = |m: String| Err(HstError::Consistency(m));
        if corpus.dimension() != self.dimension {
            return Err(HstError::DimensionMismatch { expected: self.dimension, found: corpus.dimension() });
        }
        for n in &self.nodes {
            let mut owners = BTreeSet::new();
            for id in &n.member_statement_ids {
                match corpus.statement(*id) {
                    Some(s) => owners.insert(s.gloss_id),
                    None => return bad(format!("node {} references unknown statement {id}", n.node_id)),
                };
            }
            if owners != n.gloss_ids {
                return bad(format!("node {} gloss set disagrees with its members", n.node_id));
            }
        }

        let mut seen = HashSet::new();
        for &id in &self.level1_ids {
            for m in &self.nodes[id].member_statement_ids {
                if !seen.insert(*m) {
                    return bad(format!("statement {m} belongs to two level-1 nodes"));
                }
            }
        }
        if seen.len() != corpus.len() {
            return bad(format!("level 1 covers {} of {} statements", seen.len(), corpus.len()));
        }

        if self.depth() >= 2 {
            for &id in &self.level1_ids {
                let e = &self.nodes[id];
                let mut expected: BTreeSet<u64> = e.member_statement_ids.clone();
                for m in &e.member_statement_ids {
                    if let Some(next) = corpus.successor(*m) {
                        expected.insert(next.statement_id);
                    }
                }
                let mut union = BTreeSet::new();
                for &c in &e.children {
                    for m in &self.nodes[c].member_statement_ids {
                        if !union.insert(*m) {
                            return bad(format!("statement {m} appears in two children of node {id}"));
                        }
                    }
                }
                if union != expected {
                    return bad(format!("children of node {id} do not partition its augmented set"));
                }
            }
        }

        if self.depth() == 3 {
            let mut covered = HashSet::new();
            for a in self.level_ids(2) {
                let node = &self.nodes[a];
                let leaves: BTreeSet<u64> = node
                    .children
                    .iter()
                    .flat_map(|&c| self.nodes[c].member_statement_ids.iter().copied())
                    .collect();
                if leaves != node.member_statement_ids || node.children.len() != leaves.len() {
                    return bad(format!("leaves of node {a} differ from its members"));
                }
                covered.extend(leaves);
            }
            if covered.len() != corpus.len() {
                return bad("some statement has no leaf".into());
            }
        }

        for level in 1..=self.depth() {
            let mut glosses = BTreeSet::new();
            for id in self.level_ids(level) {
                glosses.extend(self.nodes[id].gloss_ids.iter().copied());
            }
            if glosses.len() != corpus.vocabulary_size() {
                return bad(format!("level {level} misses some gloss"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = HstFile { dimension: self.dimension, config: self.config.clone(), nodes: self.nodes.clone() };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: HstFile<S> = serde_json::from_str(text)?;
        Self::from_parts(file.dimension, file.config, file.nodes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(self.to_json()?.as_bytes())?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: HstFile<S> = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        Self::from_parts(file.dimension, file.config, file.nodes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(glosses: usize, per: usize, dim: usize) -> DescriptionCorpus<f64> {
        let mut rows = Vec::new();
        let mut id = 0u64;
        for g in 0..glosses {
            for k in 0..per {
                let emb: Vec<f64> =
                    (0..dim).map(|j| ((g * 31 + k * 7 + j * 3) as f64 * 0.37).sin() + g as f64 * 0.1).collect();
                rows.push((
                    SubActionStatement {
                        statement_id: id,
                        gloss_id: g,
                        position: k,
                        text: format!("g{g}s{k}"),
                        embedding: EmbeddingVector::new(emb).unwrap(),
                    },
                    format!("G{g}"),
                ));
                id += 1;
            }
        }
        DescriptionCorpus::from_statements(rows, None).unwrap()
    }

    #[test]
    fn degenerate_single_statement() {
        let c = corpus(1, 1, 3);
        let t = build_hst(&c, &TreeConfig::default()).unwrap();
        assert_eq!(t.len(), 3);
        for (lvl, n) in t.nodes().iter().enumerate() {
            assert_eq!(n.level as usize, lvl + 1);
            assert_eq!(n.member_statement_ids.iter().copied().collect::<Vec<_>>(), vec![0]);
        }
        t.validate_against(&c).unwrap();
    }

    #[test]
    fn sqrt_rule_level_one_count() {
        let c = corpus(10, 4, 6);
        let t = build_hst(&c, &TreeConfig::default()).unwrap();
        assert_eq!(t.level1_ids().len(), 7);
        t.validate_against(&c).unwrap();
    }

    #[test]
    fn successor_joins_level_two_set() {
        let c = corpus(5, 4, 4);
        let t = build_hst(&c, &TreeConfig::default()).unwrap();
        for &e in t.level1_ids() {
            let node = &t.nodes()[e];
            let below: BTreeSet<u64> = node
                .children
                .iter()
                .flat_map(|&a| t.nodes()[a].member_statement_ids.iter().copied())
                .collect();
            for m in &node.member_statement_ids {
                let s = c.statement(*m).unwrap();
                if let Some(next) = c.successor(*m) {
                    assert!(below.contains(&next.statement_id), "successor of {} (pos {}) missing", m, s.position);
                }
            }
        }
    }

    #[test]
    fn shallow_trees() {
        let c = corpus(4, 3, 4);
        for depth in 1..=2u8 {
            let t = build_hst(&c, &TreeConfig { depth, ..Default::default() }).unwrap();
            assert!(t.nodes().iter().all(|n| n.level <= depth));
            t.validate_against(&c).unwrap();
        }
        assert!(build_hst(&c, &TreeConfig { depth: 4, ..Default::default() }).is_err());
        assert!(build_hst(&c, &TreeConfig { depth: 0, ..Default::default() }).is_err());
    }

    #[test]
    fn n1_larger_than_corpus_is_infeasible() {
        let c = corpus(2, 2, 3);
        let err = build_hst(&c, &TreeConfig { n1: Some(5), ..Default::default() }).unwrap_err();
        assert!(matches!(err, HstError::Infeasible(_)));
    }

    #[test]
    fn centroids_are_unit_norm() {
        let c = corpus(6, 4, 5);
        let t = build_hst(&c, &TreeConfig::default()).unwrap();
        for n in t.nodes() {
            assert!((n.centroid.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn json_round_trip_and_tamper() {
        let c = corpus(6, 4, 5);
        let t = build_hst(&c, &TreeConfig::default()).unwrap();
        let json = t.to_json().unwrap();
        let back = Hst::<f64>::from_json(&json).unwrap();
        assert_eq!(t, back);
        assert_eq!(json, back.to_json().unwrap());

        let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
        let last = v["nodes"].as_array().unwrap().len() - 1;
        v["nodes"][last]["parent_id"] = serde_json::Value::Null;
        let err = Hst::<f64>::from_json(&v.to_string()).unwrap_err();
        assert!(matches!(err, HstError::Consistency(_)), "{err}");
    }

    #[test]
    fn fixed_branching() {
        let c = corpus(6, 4, 5);
        let cfg = TreeConfig { n1: Some(3), branching_rule: BranchingRule::Fixed(2), ..Default::default() };
        let t = build_hst(&c, &cfg).unwrap();
        assert_eq!(t.level1_ids().len(), 3);
        for &e in t.level1_ids() {
            assert!(t.nodes()[e].children.len() <= 2);
        }
        t.validate_against(&c).unwrap();
    }
}
