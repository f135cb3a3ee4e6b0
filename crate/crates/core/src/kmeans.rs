//! Seeded Lloyd's k-means with k-means++ initialization.

use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64Mcg;
use serde::{Deserialize, Serialize};

use crate::error::{HstError, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansOptions {
    pub max_iterations: usize,
    /// Stop once no centroid moves farther than this (Euclidean).
    pub convergence_epsilon: f64,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self { max_iterations: 100, convergence_epsilon: 1e-6 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans<S> {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<S>>,
    /// Within-cluster sum of squares after each Lloyd iteration.
    pub wcss_trace: Vec<S>,
}

impl<S: Scalar> KMeans<S> {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    /// Indices of the points in each cluster, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k()];
        for (i, &a) in self.assignments.iter().enumerate() {
            out[a].push(i);
        }
        out
    }
}

pub(crate) fn squared_distance<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut acc = S::zero();
    for (&x, &y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// Nearest centroid; equidistant points join the lowest index.
fn nearest<S: Scalar>(p: &[S], centroids: &[Vec<S>]) -> (usize, S) {
    let mut best = (0, squared_distance(p, &centroids[0]));
    for (j, c) in centroids.iter().enumerate().skip(1) {
        let d = squared_distance(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

pub fn wcss<S: Scalar, P: AsRef<[S]>>(points: &[P], assignments: &[usize], centroids: &[Vec<S>]) -> S {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| squared_distance(p.as_ref(), &centroids[a]))
        .fold(S::zero(), |acc, d| acc + d)
}

fn plus_plus_init<S: Scalar, P: AsRef<[S]>>(points: &[P], k: usize, rng: &mut Pcg64Mcg) -> Vec<Vec<S>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].as_ref().to_vec()];
    let mut d2: Vec<f64> =
        points.iter().map(|p| squared_distance(p.as_ref(), &centroids[0]).to_f64_lossy()).collect();

    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                acc += w;
                pick = Some(i);
                if acc >= target {
                    break;
                }
            }
            pick.expect("positive total weight implies a candidate")
        } else {
            // every point coincides with a centroid; fall back to a uniform unchosen point
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        let c = points[pick].as_ref().to_vec();
        for (w, p) in d2.iter_mut().zip(points) {
            *w = w.min(squared_distance(p.as_ref(), &c).to_f64_lossy());
        }
        centroids.push(c);
    }
    centroids
}

/// Moves points into empty clusters. Each donor is the point farthest from its
/// current centroid among clusters that still hold more than one point.
fn repair_empty<S: Scalar, P: AsRef<[S]>>(points: &[P], assignments: &mut [usize], centroids: &[Vec<S>]) {
    let k = centroids.len();
    let mut counts = vec![0usize; k];
    for &a in assignments.iter() {
        counts[a] += 1;
    }
    while let Some(empty) = counts.iter().position(|&c| c == 0) {
        let mut donor: Option<(usize, S)> = None;
        for (i, p) in points.iter().enumerate() {
            let a = assignments[i];
            if counts[a] < 2 {
                continue;
            }
            let d = squared_distance(p.as_ref(), &centroids[a]);
            if donor.is_none_or(|(_, best)| d > best) {
                donor = Some((i, d));
            }
        }
        let (i, _) = donor.expect("k <= n guarantees a cluster with two or more points");
        counts[assignments[i]] -= 1;
        assignments[i] = empty;
        counts[empty] += 1;
    }
}

fn means<S: Scalar, P: AsRef<[S]>>(points: &[P], assignments: &[usize], k: usize, dim: usize) -> Vec<Vec<S>> {
    let mut sums = vec![vec![S::zero(); dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        for (s, &x) in sums[a].iter_mut().zip(p.as_ref()) {
            *s += x;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        let c = S::from_usize(c).expect("count fits scalar");
        for x in s.iter_mut() {
            *x /= c;
        }
    }
    sums
}

/// Clusters `points` into exactly `k` non-empty clusters.
pub fn kmeans<S: Scalar, P: AsRef<[S]>>(points: &[P], k: usize, seed: u64, options: &KMeansOptions) -> Result<KMeans<S>> {
    let n = points.len();
    if n == 0 {
        return Err(HstError::EmptyInput("k-means over zero points".into()));
    }
    if k == 0 {
        return Err(HstError::Config("k-means needs k >= 1".into()));
    }
    if k > n {
        return Err(HstError::Infeasible(format!("k = {k} exceeds the {n} points available")));
    }
    if options.max_iterations == 0 {
        return Err(HstError::Config("max_iterations must be at least 1".into()));
    }
    if !(options.convergence_epsilon > 0.0) {
        return Err(HstError::Config("convergence_epsilon must be positive".into()));
    }
    let dim = points[0].as_ref().len();
    if let Some(p) = points.iter().find(|p| p.as_ref().len() != dim) {
        return Err(HstError::DimensionMismatch { expected: dim, found: p.as_ref().len() });
    }

    let mut rng = Pcg64Mcg::seed_from_u64(seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut assignments = vec![0usize; n];
    let mut wcss_trace = Vec::new();
    let eps = S::lit(options.convergence_epsilon);

    for _ in 0..options.max_iterations {
        for (a, p) in assignments.iter_mut().zip(points) {
            *a = nearest(p.as_ref(), &centroids).0;
        }
        repair_empty(points, &mut assignments, &centroids);
        let updated = means(points, &assignments, k, dim);
        let shift = centroids
            .iter()
            .zip(&updated)
            .map(|(a, b)| squared_distance(a, b).sqrt())
            .fold(S::zero(), S::max);
        centroids = updated;
        wcss_trace.push(wcss(points, &assignments, &centroids));
        if shift < eps {
            break;
        }
    }

    Ok(KMeans { assignments, centroids, wcss_trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> KMeansOptions {
        KMeansOptions::default()
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = vec![vec![1.0f64, 2.0], vec![3.0, -2.0], vec![5.0, 3.0]];
        let km = kmeans(&pts, 1, 3, &opts()).unwrap();
        assert_eq!(km.assignments, vec![0, 0, 0]);
        assert!((km.centroids[0][0] - 3.0).abs() < 1e-12);
        assert!((km.centroids[0][1] - 1.0).abs() < 1e-12);
    }

    /// Exhaustive search over every 2-partition of the fixture.
    fn best_two_partition(pts: &[Vec<f64>]) -> Vec<usize> {
        let n = pts.len();
        let mut best = (f64::INFINITY, vec![]);
        for mask in 1u32..(1 << n) - 1 {
            let a: Vec<usize> = (0..n).map(|i| ((mask >> i) & 1) as usize).collect();
            let c = means(pts, &a, 2, 2);
            let w = wcss(pts, &a, &c);
            if w < best.0 {
                best = (w, a);
            }
        }
        best.1
    }

    #[test]
    fn near_pairs_cluster_together() {
        let pts = vec![vec![0.0f64, 0.0], vec![0.1, 0.0], vec![10.0, 10.0], vec![10.1, 10.0]];
        let oracle = best_two_partition(&pts);
        assert_eq!(oracle[0], oracle[1]);
        assert_eq!(oracle[2], oracle[3]);
        assert_ne!(oracle[0], oracle[2]);
        for seed in 0..20 {
            let km = kmeans(&pts, 2, seed, &opts()).unwrap();
            let a = &km.assignments;
            assert_eq!(a[0], a[1]);
            assert_eq!(a[2], a[3]);
            assert_ne!(a[0], a[2]);
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let pts: Vec<Vec<f64>> = (0..30).map(|i| vec![(i as f64 * 0.7).sin(), (i as f64 * 1.3).cos()]).collect();
        let a = kmeans(&pts, 4, 11, &opts()).unwrap();
        let b = kmeans(&pts, 4, 11, &opts()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let pts = vec![vec![1.0f64, 1.0]; 5];
        let km = kmeans(&pts, 3, 0, &opts()).unwrap();
        let members = km.members();
        assert!(members.iter().all(|m| !m.is_empty()));
    }

    #[test]
    fn infeasible_and_empty_inputs() {
        let pts = vec![vec![0.0f64], vec![1.0]];
        assert!(matches!(kmeans(&pts, 3, 0, &opts()), Err(HstError::Infeasible(_))));
        let none: Vec<Vec<f64>> = vec![];
        assert!(matches!(kmeans(&none, 1, 0, &opts()), Err(HstError::EmptyInput(_))));
        let ragged = vec![vec![0.0f64], vec![1.0, 2.0]];
        assert!(matches!(kmeans(&ragged, 1, 0, &opts()), Err(HstError::DimensionMismatch { .. })));
    }

    #[test]
    fn wcss_never_increases() {
        let pts: Vec<Vec<f64>> =
            (0..200).map(|i| vec![((i * 37) % 101) as f64 / 10.0, ((i * 53) % 89) as f64 / 7.0]).collect();
        for seed in 0..10 {
            let km = kmeans(&pts, 7, seed, &KMeansOptions { max_iterations: 100, convergence_epsilon: 1e-12 }).unwrap();
            for w in km.wcss_trace.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", km.wcss_trace);
            }
        }
    }
}
