//! Seeded k-means: k-means++ initialization, Lloyd iterations with
//! deterministic empty-cluster repair, then a Hartigan single-point pass that
//! moves any point whose transfer lowers the total SSE.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::vector::{mean, sq_dist};

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub sse: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub stream: u64,
    pub max_iters: usize,
    pub restarts: usize,
}

fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, mu) in centroids.iter().enumerate() {
        let d = sq_dist(x, mu);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

fn plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && r < w {
                    pick = i;
                    break;
                }
                r -= w;
            }
            // Guard the float tail: never land on a zero-weight point.
            while d2[pick] == 0.0 && pick > 0 {
                pick -= 1;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = points[next].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn members(assignment: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut m = vec![Vec::new(); k];
    for (i, &c) in assignment.iter().enumerate() {
        m[c].push(i);
    }
    m
}

fn centroid_of(points: &[Vec<f64>], idx: &[usize], dim: usize) -> Vec<f64> {
    mean(idx.iter().map(|&i| points[i].as_slice()), dim)
}

fn sse(points: &[Vec<f64>], assignment: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(assignment)
        .map(|(p, &c)| sq_dist(p, &centroids[c]))
        .sum()
}

/// Fills empty clusters by moving the farthest member of the highest-SSE
/// cluster (among those with at least two members) into each of them.
fn repair_empty(points: &[Vec<f64>], assignment: &mut [usize], centroids: &mut [Vec<f64>], dim: usize) {
    let k = centroids.len();
    loop {
        let groups = members(assignment, k);
        let Some(empty) = groups.iter().position(Vec::is_empty) else {
            return;
        };
        let mut donor = None;
        let mut donor_sse = f64::NEG_INFINITY;
        for (c, g) in groups.iter().enumerate() {
            if g.len() < 2 {
                continue;
            }
            let s: f64 = g.iter().map(|&i| sq_dist(&points[i], &centroids[c])).sum();
            if s > donor_sse {
                donor_sse = s;
                donor = Some(c);
            }
        }
        let donor = donor.expect("k < n guarantees a cluster with two members");
        let mut far = groups[donor][0];
        let mut far_d = f64::NEG_INFINITY;
        for &i in &groups[donor] {
            let d = sq_dist(&points[i], &centroids[donor]);
            if d > far_d {
                far_d = d;
                far = i;
            }
        }
        assignment[far] = empty;
        centroids[empty] = points[far].clone();
        let rest: Vec<usize> = groups[donor].iter().copied().filter(|&i| i != far).collect();
        centroids[donor] = centroid_of(points, &rest, dim);
    }
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, max_iters: usize, dim: usize) -> (Vec<usize>, Vec<Vec<f64>>) {
    let k = centroids.len();
    let mut assignment: Vec<usize> = vec![usize::MAX; points.len()];
    for _ in 0..max_iters.max(1) {
        let next: Vec<usize> = points.par_iter().map(|p| nearest(p, &centroids)).collect();
        let changed = next != assignment;
        assignment = next;
        let groups = members(&assignment, k);
        for (c, g) in groups.iter().enumerate() {
            if !g.is_empty() {
                centroids[c] = centroid_of(points, g, dim);
            }
        }
        repair_empty(points, &mut assignment, &mut centroids, dim);
        if !changed {
            break;
        }
    }
    (assignment, centroids)
}

fn hartigan(points: &[Vec<f64>], assignment: &mut [usize], centroids: &mut [Vec<f64>], max_passes: usize, dim: usize) {
    let k = centroids.len();
    let mut sizes = vec![0usize; k];
    for &c in assignment.iter() {
        sizes[c] += 1;
    }
    for _ in 0..max_passes.max(1) {
        let mut moved = false;
        for (i, p) in points.iter().enumerate() {
            let from = assignment[i];
            let n_from = sizes[from] as f64;
            if sizes[from] < 2 {
                continue;
            }
            let removal = n_from / (n_from - 1.0) * sq_dist(p, &centroids[from]);
            let mut best = None;
            let mut best_cost = removal;
            for (c, mu) in centroids.iter().enumerate() {
                if c == from {
                    continue;
                }
                let n_to = sizes[c] as f64;
                let cost = n_to / (n_to + 1.0) * sq_dist(p, mu);
                if cost < best_cost {
                    best_cost = cost;
                    best = Some(c);
                }
            }
            let Some(to) = best else { continue };
            if removal - best_cost <= 1e-12 * removal.max(1e-300) {
                continue;
            }
            let n_to = sizes[to] as f64;
            for d in 0..dim {
                centroids[from][d] = (n_from * centroids[from][d] - p[d]) / (n_from - 1.0);
                centroids[to][d] = (n_to * centroids[to][d] + p[d]) / (n_to + 1.0);
            }
            sizes[from] -= 1;
            sizes[to] += 1;
            assignment[i] = to;
            moved = true;
        }
        if !moved {
            break;
        }
    }
    for (c, g) in members(assignment, k).iter().enumerate() {
        centroids[c] = centroid_of(points, g, dim);
    }
}

/// Clusters `points` into exactly `k` nonempty groups. Deterministic for a
/// given `(seed, stream)`; the lowest-SSE restart wins, earlier on ties.
pub fn kmeans(points: &[Vec<f64>], params: KMeansParams) -> Result<KMeans> {
    let n = points.len();
    let k = params.k;
    if k == 0 {
        return Err(Error::Cluster("k must be at least 1".into()));
    }
    if k >= n {
        return Err(Error::Cluster(format!("k = {k} must be smaller than the node count {n}")));
    }
    let dim = points[0].len();
    if dim == 0 {
        return Err(Error::Cluster("embeddings have zero dimension".into()));
    }
    if let Some(bad) = points.iter().position(|p| p.len() != dim) {
        return Err(Error::Cluster(format!("point {bad} has dimension {}, expected {dim}", points[bad].len())));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(params.stream);
    let mut best: Option<KMeans> = None;
    for _ in 0..params.restarts.max(1) {
        let init = plus_plus(points, k, &mut rng);
        let (mut assignment, mut centroids) = lloyd(points, init, params.max_iters, dim);
        hartigan(points, &mut assignment, &mut centroids, params.max_iters, dim);
        let total = sse(points, &assignment, &centroids);
        if best.as_ref().is_none_or(|b| total < b.sse) {
            best = Some(KMeans {
                assignment,
                centroids,
                sse: total,
            });
        }
    }
    Ok(best.expect("at least one restart"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(k: usize, seed: u64) -> KMeansParams {
        KMeansParams {
            k,
            seed,
            stream: 0,
            max_iters: 100,
            restarts: 1,
        }
    }

    /// Brute force over all 2-partitions of the square's corners.
    fn best_two_partition_sse(points: &[Vec<f64>]) -> f64 {
        let n = points.len();
        let mut best = f64::INFINITY;
        for mask in 1u32..(1 << n) - 1 {
            let a: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            let b: Vec<usize> = (0..n).filter(|i| mask & (1 << i) == 0).collect();
            let ca = centroid_of(points, &a, 2);
            let cb = centroid_of(points, &b, 2);
            let s: f64 = a.iter().map(|&i| sq_dist(&points[i], &ca)).sum::<f64>()
                + b.iter().map(|&i| sq_dist(&points[i], &cb)).sum::<f64>();
            best = best.min(s);
        }
        best
    }

    #[test]
    fn square_splits_into_adjacent_pairs_for_every_seed() {
        let points = vec![vec![1.0, 1.0], vec![-1.0, 1.0], vec![-1.0, -1.0], vec![1.0, -1.0]];
        let optimum = best_two_partition_sse(&points);
        assert!((optimum - 4.0).abs() < 1e-12);
        for seed in 0..64 {
            let r = kmeans(&points, params(2, seed)).unwrap();
            assert!((r.sse - optimum).abs() < 1e-12, "seed {seed}: sse {}", r.sse);
            let mut sizes = [0; 2];
            for &c in &r.assignment {
                sizes[c] += 1;
            }
            assert_eq!(sizes, [2, 2]);
            for c in &r.centroids {
                // Edge midpoints: one coordinate is 0, the other ±1.
                let zeros = c.iter().filter(|x| x.abs() < 1e-12).count();
                let ones = c.iter().filter(|x| (x.abs() - 1.0).abs() < 1e-12).count();
                assert_eq!((zeros, ones), (1, 1), "seed {seed}: {c:?}");
            }
        }
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let points = vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, 5.0]];
        let r = kmeans(&points, params(1, 3)).unwrap();
        assert_eq!(r.assignment, vec![0, 0, 0]);
        assert_eq!(r.centroids[0], vec![2.0, 3.0]);
    }

    #[test]
    fn duplicates_collapse() {
        let points = vec![vec![0.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![5.0, 5.0], vec![1.0, 0.0]];
        for seed in 0..16 {
            let r = kmeans(&points, params(3, seed)).unwrap();
            assert_eq!(r.assignment[0], r.assignment[1]);
            assert_eq!(r.assignment[2], r.assignment[4]);
            assert_ne!(r.assignment[0], r.assignment[2]);
            assert_ne!(r.assignment[3], r.assignment[0]);
            assert_eq!(r.sse, 0.0);
        }
    }

    #[test]
    fn never_leaves_empty_clusters() {
        let points = vec![vec![1.0, 0.0]; 6];
        let r = kmeans(&points, params(3, 1)).unwrap();
        let groups = members(&r.assignment, 3);
        assert!(groups.iter().all(|g| !g.is_empty()));
    }

    #[test]
    fn rejects_bad_k_and_dimension() {
        let points = vec![vec![1.0], vec![2.0]];
        assert!(kmeans(&points, params(2, 0)).is_err());
        assert!(kmeans(&points, params(0, 0)).is_err());
        assert!(kmeans(&[vec![], vec![]], params(1, 0)).is_err());
    }

    #[test]
    fn deterministic_for_seed() {
        let points: Vec<Vec<f64>> = (0..50).map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.91).cos()]).collect();
        let a = kmeans(&points, params(5, 11)).unwrap();
        let b = kmeans(&points, params(5, 11)).unwrap();
        assert_eq!(a, b);
    }
}
