//! Lloyd's k-means with seeded k-means++ initialization.
//!
//! Points may carry integer-like weights so that duplicated feature vectors
//! can be clustered once; a weighted fit is equivalent to an unweighted fit
//! over the expanded multiset.

use ndarray::Array2;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_MAX_ITER: usize = 50;
pub const DEFAULT_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub max_iter: usize,
    /// Stop once no centroid moves further than this.
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams {
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub centroids: Vec<Vec<f64>>,
    /// Cluster index of every fitted point, in input order.
    pub assignments: Vec<usize>,
    pub k: usize,
    /// Within-cluster sum of squared distances of the final model.
    pub objective: f64,
    /// Objective after each assignment pass, ending with the final one.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

/// Squared Euclidean distance, accumulated in eight independent lanes and
/// combined by a fixed tree, so every caller rounds identically.
#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0f64; 8];
    let (mut ca, mut cb) = (a.chunks_exact(8), b.chunks_exact(8));
    for (x, y) in (&mut ca).zip(&mut cb) {
        for t in 0..8 {
            let d = x[t] - y[t];
            lanes[t] += d * d;
        }
    }
    for (t, (x, y)) in ca.remainder().iter().zip(cb.remainder()).enumerate() {
        let d = x - y;
        lanes[t] += d * d;
    }
    ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5])) + ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7]))
}

/// Index of the nearest centroid; ties go to the lowest index.
fn nearest(centroids: &[Vec<f64>], point: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(c, point);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

impl ClusterModel {
    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    pub fn assign(&self, point: &[f64]) -> Result<usize> {
        if point.len() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "point has dimension {}, model has {}",
                point.len(),
                self.dim()
            )));
        }
        Ok(nearest(&self.centroids, point).0)
    }

    /// Sizes of each cluster under the stored assignments.
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

pub fn fit(points: &[Vec<f64>], k: usize, max_iter: usize, tol: f64, seed: u64) -> Result<ClusterModel> {
    let weights = vec![1.0; points.len()];
    fit_weighted(points, &weights, k, KMeansParams { max_iter, tol }, seed)
}

pub fn fit_weighted(
    points: &[Vec<f64>],
    weights: &[f64],
    k: usize,
    params: KMeansParams,
    seed: u64,
) -> Result<ClusterModel> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("cannot cluster an empty point set".into()));
    }
    if k == 0 || k > points.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must lie in 1..={}",
            points.len()
        )));
    }
    if weights.len() != points.len() || weights.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::InvalidArgument("weights must be positive, one per point".into()));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::InvalidArgument("points differ in dimensionality".into()));
    }

    let mut rng = rng::rng_from(seed, &[0x6b6d_6561_6e73]);
    let mut assigner = Assigner::new(points);
    let mut centroids = seed_plus_plus(points, &assigner.matrix, &assigner.norms, weights, k, &mut rng);
    let mut assignments = vec![0usize; points.len()];
    let mut dists = vec![0.0f64; points.len()];
    let mut trace = Vec::new();
    let mut iterations = 0;

    for _ in 0..params.max_iter {
        iterations += 1;
        assign_and_repair(&mut assigner, &mut centroids, &mut assignments, &mut dists);
        trace.push(wcss(weights, &dists));

        let updated = weighted_means(points, weights, &assignments, k, dim);
        let mut shift = 0.0f64;
        for (c, u) in centroids.iter_mut().zip(updated) {
            shift = shift.max(squared_distance(c, &u).sqrt());
            *c = u;
        }
        if shift < params.tol {
            break;
        }
    }
    assign_and_repair(&mut assigner, &mut centroids, &mut assignments, &mut dists);
    let objective = wcss(weights, &dists);
    trace.push(objective);

    Ok(ClusterModel {
        centroids,
        assignments,
        k,
        objective,
        objective_trace: trace,
        iterations,
    })
}

fn wcss(weights: &[f64], dists: &[f64]) -> f64 {
    weights.iter().zip(dists).map(|(w, d)| w * d).sum()
}

/// k-means++: first centre drawn proportional to weight, later centres
/// proportional to weight times squared distance to the closest centre.
fn seed_plus_plus(
    points: &[Vec<f64>],
    matrix: &Array2<f64>,
    norms: &[f64],
    weights: &[f64],
    k: usize,
    rng: &mut rng::Rng,
) -> Vec<Vec<f64>> {
    let mut chosen = vec![false; points.len()];
    let mut closest = vec![f64::INFINITY; points.len()];
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut scores = weights.to_vec();
    while centroids.len() < k {
        let next = sample_index(&scores, rng)
            // every remaining point coincides with a centre: take the first unused one
            .unwrap_or_else(|| chosen.iter().position(|c| !c).expect("k <= n"));
        chosen[next] = true;
        let dots = matrix.dot(&ndarray::ArrayView1::from(&points[next]));
        for (i, d) in closest.iter_mut().enumerate() {
            let dist = norms[i] - 2.0 * dots[i] + norms[next];
            // rounding residue of a coincident point
            let dist = if dist <= 1e-12 * (1.0 + norms[i] + norms[next]) { 0.0 } else { dist };
            *d = d.min(dist);
        }
        for ((s, d), w) in scores.iter_mut().zip(&closest).zip(weights) {
            *s = d * w;
        }
        centroids.push(points[next].clone());
    }
    centroids
}

fn sample_index(scores: &[f64], rng: &mut rng::Rng) -> Option<usize> {
    let total: f64 = scores.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let mut target = rng.random::<f64>() * total;
    let mut last = None;
    for (i, s) in scores.iter().enumerate() {
        if *s > 0.0 {
            if target < *s {
                return Some(i);
            }
            target -= s;
            last = Some(i);
        }
    }
    last
}

/// Relative slack on every bound comparison; far larger than the rounding
/// error of the distance arithmetic.
const BOUND_SLACK: f64 = 1e-9;

/// Centroids per bound group in the bounded passes.
const GROUP_SIZE: usize = 10;

/// Exact nearest-centroid assignment, identical to calling `nearest` per
/// point. The first pass scores all centroids with one matrix product
/// (`|x|^2 - 2 x.c + |c|^2`) and settles near ties exactly. Later passes
/// keep, for every point and every group of centroids, a lower bound on the
/// distance to the group's centroids other than the assigned one. Bounds
/// shrink by the largest movement in the group; only groups whose bound
/// falls below the distance to the assigned centroid are rescanned.
struct Assigner<'a> {
    points: &'a [Vec<f64>],
    matrix: Array2<f64>,
    norms: Vec<f64>,
    bounds: Option<Bounds>,
}

struct Bounds {
    /// `lower[[i, g]]` never exceeds the distance from point `i` to any
    /// centroid of group `g` other than its assigned one.
    lower: Array2<f64>,
    /// Centroids the bounds refer to.
    centroids: Vec<Vec<f64>>,
}

impl<'a> Assigner<'a> {
    fn new(points: &'a [Vec<f64>]) -> Self {
        let dim = points.first().map_or(0, Vec::len);
        Assigner {
            points,
            matrix: Array2::from_shape_fn((points.len(), dim), |(i, j)| points[i][j]),
            norms: points.iter().map(|p| p.iter().map(|x| x * x).sum()).collect(),
            bounds: None,
        }
    }

    fn assign(&mut self, centroids: &[Vec<f64>], assignments: &mut [usize], dists: &mut [f64]) {
        match self.bounds.take() {
            Some(b) if centroids.len() > 1 => self.assign_bounded(b, centroids, assignments, dists),
            _ => self.assign_dense(centroids, assignments, dists),
        }
    }

    /// Forgets the bounds of a point whose assignment was changed outside
    /// `assign`.
    fn invalidate(&mut self, i: usize) {
        if let Some(b) = &mut self.bounds {
            b.lower.row_mut(i).fill(0.0);
        }
    }

    fn assign_dense(&mut self, centroids: &[Vec<f64>], assignments: &mut [usize], dists: &mut [f64]) {
        let (matrix, norms, points) = (&self.matrix, &self.norms, self.points);
        let k = centroids.len();
        let dim = matrix.ncols();
        let c = Array2::from_shape_fn((k, dim), |(j, t)| centroids[j][t]);
        let c_norms: Vec<f64> = centroids.iter().map(|c| c.iter().map(|x| x * x).sum()).collect();
        let c_max = c_norms.iter().copied().fold(0.0, f64::max);
        let dots = matrix.dot(&c.t());
        let mut lower = Array2::from_elem((points.len(), k.div_ceil(GROUP_SIZE)), f64::INFINITY);
        let mut row_d = vec![0.0; k];
        for (i, row) in dots.outer_iter().enumerate() {
            let margin = BOUND_SLACK * (1.0 + norms[i] + c_max);
            let (mut best, mut best_d, mut second_d) = (0, f64::INFINITY, f64::INFINITY);
            for (j, dot) in row.iter().enumerate() {
                let d = norms[i] - 2.0 * dot + c_norms[j];
                row_d[j] = d;
                if d < best_d {
                    second_d = best_d;
                    (best, best_d) = (j, d);
                } else if d < second_d {
                    second_d = d;
                }
            }
            if second_d - best_d <= margin {
                // near tie: settle it with exact distances among the contenders
                let mut exact = (0, f64::INFINITY);
                for (j, d) in row_d.iter().enumerate() {
                    if *d <= best_d + margin {
                        let d = squared_distance(&points[i], &centroids[j]);
                        if d < exact.1 {
                            exact = (j, d);
                        }
                    }
                }
                (assignments[i], dists[i]) = exact;
            } else {
                assignments[i] = best;
                dists[i] = squared_distance(&points[i], &centroids[best]);
            }
            let mut bounds = lower.row_mut(i);
            for (j, d) in row_d.iter().enumerate() {
                if j != assignments[i] {
                    let l = &mut bounds[j / GROUP_SIZE];
                    *l = l.min(*d);
                }
            }
            bounds.mapv_inplace(|d| if d.is_finite() { (d - margin).max(0.0).sqrt() } else { d });
        }
        self.bounds = Some(Bounds {
            lower,
            centroids: centroids.to_vec(),
        });
    }

    fn assign_bounded(&mut self, mut b: Bounds, centroids: &[Vec<f64>], assignments: &mut [usize], dists: &mut [f64]) {
        let k = centroids.len();
        let groups = k.div_ceil(GROUP_SIZE);
        let up = |d: f64| d * (1.0 + BOUND_SLACK);
        let down = |d: f64| d * (1.0 - BOUND_SLACK);
        let mut group_drift = vec![0.0f64; groups];
        for (j, (old, new)) in b.centroids.iter().zip(centroids).enumerate() {
            let d = up(squared_distance(old, new).sqrt());
            group_drift[j / GROUP_SIZE] = group_drift[j / GROUP_SIZE].max(d);
        }
        let mut scanned = vec![false; groups];
        let mut group_d = vec![0.0; k];
        for (i, x) in self.points.iter().enumerate() {
            let lower = b.lower.row_mut(i).into_slice().expect("standard layout");
            let mut min_lower = f64::INFINITY;
            for (l, d) in lower.iter_mut().zip(&group_drift) {
                *l = (*l - d).max(0.0);
                min_lower = min_lower.min(*l);
            }
            let a0 = assignments[i];
            let d0 = squared_distance(x, &centroids[a0]);
            let u = up(d0.sqrt());
            if u < min_lower {
                dists[i] = d0;
                continue;
            }
            let (mut a, mut d_a) = (a0, d0);
            for g in 0..groups {
                scanned[g] = u >= lower[g];
                if !scanned[g] {
                    continue;
                }
                for j in g * GROUP_SIZE..((g + 1) * GROUP_SIZE).min(k) {
                    let d = if j == a0 { d0 } else { squared_distance(x, &centroids[j]) };
                    group_d[j] = d;
                    if d < d_a || (d == d_a && j < a) {
                        (a, d_a) = (j, d);
                    }
                }
            }
            for g in (0..groups).filter(|g| scanned[*g]) {
                let members = g * GROUP_SIZE..((g + 1) * GROUP_SIZE).min(k);
                let nearest = members.filter(|j| *j != a).map(|j| group_d[j]).fold(f64::INFINITY, f64::min);
                lower[g] = if nearest.is_finite() { down(nearest.sqrt()) } else { nearest };
            }
            let g0 = a0 / GROUP_SIZE;
            if a != a0 && !scanned[g0] {
                lower[g0] = lower[g0].min(down(d0.sqrt()));
            }
            assignments[i] = a;
            dists[i] = d_a;
        }
        b.centroids.clone_from_slice(centroids);
        self.bounds = Some(b);
    }
}

/// Nearest-centroid assignment followed by empty-cluster repair: an empty
/// centroid jumps onto the point farthest from its own centroid. Repeats
/// until no cluster is empty (or no repair is possible).
fn assign_and_repair(
    assigner: &mut Assigner,
    centroids: &mut [Vec<f64>],
    assignments: &mut [usize],
    dists: &mut [f64],
) {
    let points = assigner.points;
    let k = centroids.len();
    for _ in 0..=k {
        assigner.assign(centroids, assignments, dists);
        let mut counts = vec![0usize; k];
        for &a in assignments.iter() {
            counts[a] += 1;
        }
        let empty: Vec<usize> = (0..k).filter(|j| counts[*j] == 0).collect();
        if empty.is_empty() {
            return;
        }
        let mut moved = false;
        for j in empty {
            let far = (0..points.len())
                .filter(|i| counts[assignments[*i]] > 1 && dists[*i] > 0.0)
                .max_by(|a, b| {
                    dists[*a]
                        .partial_cmp(&dists[*b])
                        .expect("finite distances")
                        .then(b.cmp(a))
                });
            if let Some(i) = far {
                counts[assignments[i]] -= 1;
                counts[j] += 1;
                centroids[j] = points[i].clone();
                assignments[i] = j;
                dists[i] = 0.0;
                assigner.invalidate(i);
                moved = true;
            }
        }
        if !moved {
            return;
        }
    }
    assigner.assign(centroids, assignments, dists);
}

fn weighted_means(points: &[Vec<f64>], weights: &[f64], assignments: &[usize], k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut mass = vec![0.0; k];
    for ((p, w), &a) in points.iter().zip(weights).zip(assignments) {
        mass[a] += w;
        for (s, x) in sums[a].iter_mut().zip(p) {
            *s += w * x;
        }
    }
    for (s, m) in sums.iter_mut().zip(&mass) {
        if *m > 0.0 {
            s.iter_mut().for_each(|x| *x /= m);
        }
    }
    sums
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exhaustive search over all 2-partitions.
    fn best_two_partition(points: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
        let n = points.len();
        let mut best = (f64::INFINITY, vec![]);
        for mask in 1..(1u32 << n) - 1 {
            let mut cs = vec![vec![0.0; 2]; 2];
            let mut counts = [0.0; 2];
            for (i, p) in points.iter().enumerate() {
                let g = ((mask >> i) & 1) as usize;
                counts[g] += 1.0;
                cs[g][0] += p[0];
                cs[g][1] += p[1];
            }
            for g in 0..2 {
                cs[g][0] /= counts[g];
                cs[g][1] /= counts[g];
            }
            let cost: f64 = points
                .iter()
                .enumerate()
                .map(|(i, p)| squared_distance(p, &cs[((mask >> i) & 1) as usize]))
                .sum();
            if cost < best.0 {
                best = (cost, cs);
            }
        }
        best
    }

    #[test]
    fn unit_square_single_centroid() {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let m = fit(&pts, 1, 50, 1e-4, 0).unwrap();
        assert_eq!(m.centroids, vec![vec![0.5, 0.5]]);
        assert!((m.objective - 2.0).abs() < 1e-12);
    }

    #[test]
    fn two_clusters_match_exhaustive_optimum() {
        let pts = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![10.0, 0.0], vec![10.0, 1.0]];
        let (best_cost, best_cs) = best_two_partition(&pts);
        for seed in 0..10 {
            let m = fit(&pts, 2, 50, 1e-4, seed).unwrap();
            assert!((m.objective - best_cost).abs() < 1e-12);
            let mut got = m.centroids.clone();
            got.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut want = best_cs.clone();
            want.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(got, want);
            assert_eq!(got, vec![vec![0.0, 0.5], vec![10.0, 0.5]]);
        }
    }

    #[test]
    fn k_equals_n_is_exact() {
        let pts: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let m = fit(&pts, 7, 50, 1e-4, 3).unwrap();
        assert_eq!(m.objective, 0.0);
        assert_eq!(m.cluster_sizes(), vec![1; 7]);
    }

    #[test]
    fn argument_errors() {
        let pts = vec![vec![0.0], vec![1.0]];
        assert!(fit(&pts, 3, 50, 1e-4, 0).is_err());
        assert!(fit(&pts, 0, 50, 1e-4, 0).is_err());
        assert!(fit(&[], 1, 50, 1e-4, 0).is_err());
        assert!(fit(&[vec![0.0], vec![1.0, 2.0]], 1, 50, 1e-4, 0).is_err());
        let m = fit(&pts, 1, 50, 1e-4, 0).unwrap();
        assert!(m.assign(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn assign_ties_and_hits() {
        let m = ClusterModel {
            centroids: vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![5.0, 5.0], vec![9.0, 1.0]],
            assignments: vec![],
            k: 4,
            objective: 0.0,
            objective_trace: vec![],
            iterations: 0,
        };
        assert_eq!(m.assign(&[9.0, 1.0]).unwrap(), 3);
        assert_eq!(m.assign(&[1.0, 0.0]).unwrap(), 0);
    }

    #[test]
    fn weighted_fit_matches_expanded_means() {
        let pts = vec![vec![0.0], vec![1.0], vec![10.0]];
        let w = vec![3.0, 1.0, 2.0];
        let m = fit_weighted(&pts, &w, 1, KMeansParams::default(), 0).unwrap();
        assert!((m.centroids[0][0] - (0.0 * 3.0 + 1.0 + 20.0) / 6.0).abs() < 1e-12);
    }

    #[test]
    fn duplicate_points_do_not_hang() {
        let pts = vec![vec![1.0, 1.0]; 5];
        let m = fit(&pts, 3, 50, 1e-4, 0).unwrap();
        assert_eq!(m.objective, 0.0);
        assert!(m.assignments.iter().all(|a| *a < 3));
    }

    #[test]
    fn empty_cluster_is_reseeded() {
        // Centroid 1 starts far from everything and would be empty.
        let pts = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
        let mut centroids = vec![vec![1.5], vec![100.0]];
        let mut a = vec![0; 4];
        let mut d = vec![0.0; 4];
        assign_and_repair(&mut Assigner::new(&pts), &mut centroids, &mut a, &mut d);
        let mut counts = [0; 2];
        a.iter().for_each(|j| counts[*j] += 1);
        assert!(counts.iter().all(|c| *c > 0));
        assert_eq!(centroids[1], vec![0.0]);
    }
}
