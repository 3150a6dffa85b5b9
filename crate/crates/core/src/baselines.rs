//! Clustering baseline: K-means on raw glyph vectors, clusters mapped to
//! letters by a maximum-weight one-to-one assignment, and the purity
//! statistics reported alongside it.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::alphabet::{Letter, ALPHABET_SIZE};
use crate::corpus::UnigramTable;
use crate::linalg::{matmul, Matrix};
use crate::stats::entropy_nats;
use crate::{rng_from_seed, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub centroids: Matrix,
    pub k: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Within-cluster sum of squares after each assignment step.
    pub inertia: Vec<f64>,
}

impl ClusterModel {
    /// Nearest centroid of every row; ties go to the lower cluster index.
    pub fn assign(&self, images: &Matrix) -> Result<Vec<usize>> {
        if images.cols() != self.centroids.cols() {
            return Err(Error::param("image dimension differs from the centroids"));
        }
        Ok(nearest(images, &self.centroids).0)
    }
}

/// Squared distances of every row of `x` to every centroid, as
/// `|x|^2 - 2 x.c + |c|^2`, clamped at zero.
fn sq_distances(x: &Matrix, c: &Matrix) -> Matrix {
    let mut d = matmul(x, false, c, true);
    let cn: Vec<f64> = c.iter_rows().map(|r| r.iter().map(|v| v * v).sum()).collect();
    for i in 0..x.rows() {
        let xn: f64 = x.row(i).iter().map(|v| v * v).sum();
        for (v, &cj) in d.row_mut(i).iter_mut().zip(&cn) {
            *v = (xn - 2.0 * *v + cj).max(0.0);
        }
    }
    d
}

fn nearest(x: &Matrix, c: &Matrix) -> (Vec<usize>, Vec<f64>) {
    let d = sq_distances(x, c);
    d.iter_rows()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v < row[best] {
                    best = j;
                }
            }
            (best, row[best])
        })
        .unzip()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding followed by Lloyd iterations until the assignment stops
/// changing or `max_iters` updates have run. A cluster that loses all its
/// points is moved onto the point farthest from its current centroid.
pub fn kmeans(images: &Matrix, k: usize, seed: u64, max_iters: usize) -> Result<ClusterModel> {
    let n = images.rows();
    let dim = images.cols();
    if k == 0 {
        return Err(Error::param("k must be at least 1"));
    }
    if n < k {
        return Err(Error::param(alloc::format!("{n} points cannot form {k} clusters")));
    }
    if !images.all_finite() {
        return Err(Error::data("images contain non-finite values"));
    }
    let mut rng = rng_from_seed(seed);

    let mut centroids = Matrix::zeros(k, dim);
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(images.row(first));
    let mut best_d: Vec<f64> = (0..n).map(|i| sq_dist(images.row(i), images.row(first))).collect();
    for c in 1..k {
        let total: f64 = best_d.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in best_d.iter().enumerate() {
                if u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).copy_from_slice(images.row(pick));
        for (i, bd) in best_d.iter_mut().enumerate() {
            *bd = bd.min(sq_dist(images.row(i), images.row(pick)));
        }
    }

    let mut assignment: Option<Vec<usize>> = None;
    let mut inertia = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let (assign, dists) = nearest(images, &centroids);
        inertia.push(dists.iter().sum());
        if assignment.as_ref() == Some(&assign) {
            converged = true;
            break;
        }
        if iterations == max_iters {
            break;
        }
        iterations += 1;

        let mut sums = Matrix::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for (i, &a) in assign.iter().enumerate() {
            counts[a] += 1;
            for (s, &x) in sums.row_mut(a).iter_mut().zip(images.row(i)) {
                *s += x;
            }
        }
        let mut taken = vec![false; n];
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, &s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .unwrap_or(0);
                taken[far] = true;
                centroids.row_mut(c).copy_from_slice(images.row(far));
            }
        }
        assignment = Some(assign);
    }
    Ok(ClusterModel { centroids, k, iterations, converged, inertia })
}

/// Maximum-weight perfect matching on a square matrix: returns `col[row]`.
/// Shortest augmenting path with potentials, `O(n^3)`.
pub fn max_assignment(weights: &[Vec<i64>]) -> Result<Vec<usize>> {
    let n = weights.len();
    if weights.iter().any(|r| r.len() != n) {
        return Err(Error::param("assignment matrix must be square"));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    // Minimize the negated weights. Index 0 is a sentinel row/column.
    let cost = |i: usize, j: usize| -weights[i - 1][j - 1];
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![i64::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col = vec![0usize; n];
    for j in 1..=n {
        col[p[j] - 1] = j - 1;
    }
    Ok(col)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMatrix {
    /// `counts[cluster][letter]`.
    pub counts: Vec<[u64; ALPHABET_SIZE]>,
    /// Letter assigned to each cluster; `None` for clusters left over when
    /// there are more than 26.
    pub perm: Vec<Option<Letter>>,
}

impl AssignmentMatrix {
    /// Total count on the assigned cells.
    pub fn trace(&self) -> u64 {
        self.counts
            .iter()
            .zip(&self.perm)
            .filter_map(|(row, l)| l.map(|l| row[l as usize]))
            .sum()
    }
}

/// One-to-one cluster-to-letter map maximizing the assigned counts. The
/// matrix is padded with zero rows or columns to square.
pub fn hungarian_assign(counts: &[[u64; ALPHABET_SIZE]]) -> Result<AssignmentMatrix> {
    let k = counts.len();
    let n = k.max(ALPHABET_SIZE);
    let mut w = vec![vec![0i64; n]; n];
    for (i, row) in counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            w[i][j] = i64::try_from(c).map_err(|_| Error::param("count too large"))?;
        }
    }
    let col = max_assignment(&w)?;
    let perm = col[..k].iter().map(|&j| (j < ALPHABET_SIZE).then_some(j as Letter)).collect();
    Ok(AssignmentMatrix { counts: counts.to_vec(), perm })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterReport {
    pub accuracy: f64,
    /// `confusion[true][predicted]` under the assignment.
    pub confusion: [[u64; ALPHABET_SIZE]; ALPHABET_SIZE],
    pub assignment: AssignmentMatrix,
    /// Label entropy of each cluster, in nats.
    pub entropies: Vec<f64>,
    /// Fraction of the evaluated items carrying the most common label.
    pub max_class_accuracy: f64,
}

/// Scores a clustering against evaluation labels. Points in clusters left
/// without a letter count as errors and are not entered in the confusion
/// matrix.
pub fn cluster_report(model: &ClusterModel, images: &Matrix, labels: &[Letter]) -> Result<ClusterReport> {
    if images.rows() != labels.len() {
        return Err(Error::param("labels and images differ in length"));
    }
    if labels.is_empty() {
        return Err(Error::empty("no points to evaluate"));
    }
    if labels.iter().any(|&l| l as usize >= ALPHABET_SIZE) {
        return Err(Error::param("label outside the alphabet"));
    }
    let assign = model.assign(images)?;
    let mut counts = vec![[0u64; ALPHABET_SIZE]; model.k];
    let mut label_counts = [0u64; ALPHABET_SIZE];
    for (&c, &l) in assign.iter().zip(labels) {
        counts[c][l as usize] += 1;
        label_counts[l as usize] += 1;
    }
    let assignment = hungarian_assign(&counts)?;
    let mut confusion = [[0u64; ALPHABET_SIZE]; ALPHABET_SIZE];
    for (&c, &l) in assign.iter().zip(labels) {
        if let Some(pred) = assignment.perm[c] {
            confusion[l as usize][pred as usize] += 1;
        }
    }
    let n = labels.len() as f64;
    let entropies = counts.iter().map(|row| entropy_nats(row)).collect();
    Ok(ClusterReport {
        accuracy: assignment.trace() as f64 / n,
        confusion,
        assignment,
        entropies,
        max_class_accuracy: *label_counts.iter().max().unwrap_or(&0) as f64 / n,
    })
}

/// Accuracy of always guessing the most frequent letter.
pub fn max_class_accuracy(unigram: &UnigramTable) -> f64 {
    unigram.probs[unigram.max_class() as usize]
}
