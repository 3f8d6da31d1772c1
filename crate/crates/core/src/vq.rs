//! LBG codebook training and nearest-centroid quantization.
//!
//! The codebook grows from the global mean by splitting cells. Each split
//! nudges the parent by `±ε` along the cell's principal axis and first
//! re-partitions only the parent's own points between the two children;
//! because a two-way partition with means never has more distortion than a
//! single mean, every recorded distortion is no larger than the previous one.
//! Lloyd iterations then run over the whole codebook.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VqError {
    #[error("{found} distinct vectors, codebook needs at least {needed}")]
    TooFewVectors { needed: usize, found: usize },
    #[error("vector has dimension {found}, codebook has {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("codebook size must be at least 1")]
    ZeroSize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VqConfig {
    pub epsilon: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for VqConfig {
    fn default() -> Self {
        Self { epsilon: 1e-3, tolerance: 1e-6, max_iterations: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub centroids: Vec<Vec<f64>>,
    /// Mean squared distortion after every update, from the one-centroid
    /// start to the final Lloyd pass.
    pub distortion_history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; the lowest index wins ties.
fn nearest(centroids: &[Vec<f64>], v: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, v);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

impl Codebook {
    pub fn size(&self) -> usize {
        self.centroids.len()
    }

    pub fn dimension(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    pub fn quantize(&self, v: &[f64]) -> Result<usize, VqError> {
        if v.len() != self.dimension() {
            return Err(VqError::DimensionMismatch { expected: self.dimension(), found: v.len() });
        }
        Ok(nearest(&self.centroids, v).0)
    }

    pub fn distortion(&self, vectors: &[Vec<f64>]) -> f64 {
        vectors.iter().map(|v| nearest(&self.centroids, v).1).sum::<f64>() / vectors.len().max(1) as f64
    }
}

fn mean_of<'a>(rows: impl Iterator<Item = &'a Vec<f64>>, dim: usize) -> Option<Vec<f64>> {
    let mut sum = vec![0.0; dim];
    let mut n = 0usize;
    for r in rows {
        for (s, x) in sum.iter_mut().zip(r) {
            *s += x;
        }
        n += 1;
    }
    (n > 0).then(|| sum.into_iter().map(|s| s / n as f64).collect())
}

/// Dominant eigenvector of the cell's scatter matrix by power iteration,
/// falling back to the first axis for degenerate cells.
fn principal_axis(points: &[&Vec<f64>], centre: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let d = centre.len();
    let mut scatter = vec![0.0; d * d];
    for p in points {
        for i in 0..d {
            let di = p[i] - centre[i];
            for j in 0..d {
                scatter[i * d + j] += di * (p[j] - centre[j]);
            }
        }
    }
    let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..1.5)).collect();
    for _ in 0..60 {
        let w: Vec<f64> = (0..d).map(|i| (0..d).map(|j| scatter[i * d + j] * v[j]).sum()).collect();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            let mut axis = vec![0.0; d];
            axis[0] = 1.0;
            return axis;
        }
        v = w.into_iter().map(|x| x / norm).collect();
    }
    v
}

fn distinct_count(vectors: &[Vec<f64>], cap: usize) -> usize {
    let mut seen: Vec<&Vec<f64>> = Vec::new();
    for v in vectors {
        if !seen.contains(&v) {
            seen.push(v);
            if seen.len() >= cap {
                break;
            }
        }
    }
    seen.len()
}

pub fn train_codebook(vectors: &[Vec<f64>], size: usize, seed: u64, cfg: &VqConfig) -> Result<Codebook, VqError> {
    if size == 0 {
        return Err(VqError::ZeroSize);
    }
    let found = distinct_count(vectors, size);
    if found < size {
        return Err(VqError::TooFewVectors { needed: size, found });
    }
    let dim = vectors[0].len();
    if let Some(bad) = vectors.iter().find(|v| v.len() != dim) {
        return Err(VqError::DimensionMismatch { expected: dim, found: bad.len() });
    }
    let n = vectors.len() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![mean_of(vectors.iter(), dim).expect("non-empty")];
    let mut assign = vec![0usize; vectors.len()];
    let distortion = |centroids: &[Vec<f64>], assign: &[usize]| {
        vectors.iter().zip(assign).map(|(v, &a)| sq_dist(v, &centroids[a])).sum::<f64>() / n
    };
    let mut history = vec![distortion(&centroids, &assign)];

    while centroids.len() < size {
        // Split the cells with the highest distortion; all of them while
        // doubling fits.
        let k = centroids.len();
        let mut cell_cost = vec![0.0; k];
        for (v, &a) in vectors.iter().zip(&assign) {
            cell_cost[a] += sq_dist(v, &centroids[a]);
        }
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| cell_cost[b].total_cmp(&cell_cost[a]).then(a.cmp(&b)));
        order.truncate((size - k).min(k));
        order.sort_unstable();
        for &parent in &order {
            let members: Vec<usize> = (0..vectors.len()).filter(|&i| assign[i] == parent).collect();
            let pts: Vec<&Vec<f64>> = members.iter().map(|&i| &vectors[i]).collect();
            let c = centroids[parent].clone();
            let axis = principal_axis(&pts, &c, &mut rng);
            let scale = cfg.epsilon * (1.0 + c.iter().map(|x| x * x).sum::<f64>().sqrt());
            let lo: Vec<f64> = c.iter().zip(&axis).map(|(x, a)| x - scale * a).collect();
            let hi: Vec<f64> = c.iter().zip(&axis).map(|(x, a)| x + scale * a).collect();
            let child = centroids.len();
            // Re-partition the parent's points between its two children.
            let mut to_hi = Vec::new();
            let mut to_lo = Vec::new();
            for &i in &members {
                if sq_dist(&vectors[i], &hi) < sq_dist(&vectors[i], &lo) {
                    to_hi.push(i);
                } else {
                    to_lo.push(i);
                }
            }
            centroids[parent] = mean_of(to_lo.iter().map(|&i| &vectors[i]), dim).unwrap_or(lo);
            centroids.push(mean_of(to_hi.iter().map(|&i| &vectors[i]), dim).unwrap_or(hi));
            for &i in &to_hi {
                assign[i] = child;
            }
        }
        history.push(distortion(&centroids, &assign));
        lloyd(vectors, &mut centroids, &mut assign, &mut history, cfg);
    }
    if size == 1 {
        lloyd(vectors, &mut centroids, &mut assign, &mut history, cfg);
    }
    Ok(Codebook { centroids, distortion_history: history })
}

fn lloyd(vectors: &[Vec<f64>], centroids: &mut [Vec<f64>], assign: &mut [usize], history: &mut Vec<f64>, cfg: &VqConfig) {
    let dim = centroids[0].len();
    let k = centroids.len();
    let n = vectors.len() as f64;
    for _ in 0..cfg.max_iterations {
        for (v, a) in vectors.iter().zip(assign.iter_mut()) {
            *a = nearest(centroids, v).0;
        }
        // An empty centroid takes over the point farthest from its centroid
        // inside the costliest cell.
        loop {
            let mut counts = vec![0usize; k];
            for &a in assign.iter() {
                counts[a] += 1;
            }
            let Some(empty) = counts.iter().position(|&c| c == 0) else { break };
            let mut cost = vec![0.0; k];
            for (v, &a) in vectors.iter().zip(assign.iter()) {
                cost[a] += sq_dist(v, &centroids[a]);
            }
            let worst = (0..k).filter(|&c| counts[c] > 1).max_by(|&a, &b| cost[a].total_cmp(&cost[b]).then(b.cmp(&a)));
            let Some(worst) = worst else { break };
            let far = (0..vectors.len())
                .filter(|&i| assign[i] == worst)
                .max_by(|&a, &b| sq_dist(&vectors[a], &centroids[worst]).total_cmp(&sq_dist(&vectors[b], &centroids[worst])).then(b.cmp(&a)))
                .expect("non-empty cell");
            centroids[empty] = vectors[far].clone();
            for (v, a) in vectors.iter().zip(assign.iter_mut()) {
                *a = nearest(centroids, v).0;
            }
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            if let Some(m) = mean_of(vectors.iter().zip(assign.iter()).filter(|(_, &a)| a == c).map(|(v, _)| v), dim) {
                *centroid = m;
            }
        }
        let d = vectors.iter().zip(assign.iter()).map(|(v, &a)| sq_dist(v, &centroids[a])).sum::<f64>() / n;
        let prev = *history.last().expect("seeded history");
        history.push(d);
        if prev - d <= cfg.tolerance * prev.abs() {
            break;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn four_points() -> Vec<Vec<f64>> {
        vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![10.0, 10.0], vec![10.0, 11.0]]
    }

    /// Best 2-means over every two-way partition.
    fn brute_force_two_means(points: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
        let n = points.len();
        let mut best = (f64::INFINITY, Vec::new());
        for mask in 1..(1u32 << n) - 1 {
            let a: Vec<&Vec<f64>> = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| &points[i]).collect();
            let b: Vec<&Vec<f64>> = (0..n).filter(|i| mask >> i & 1 == 0).map(|i| &points[i]).collect();
            let ma = mean_of(a.iter().copied(), 2).unwrap();
            let mb = mean_of(b.iter().copied(), 2).unwrap();
            let cost: f64 = a.iter().map(|p| sq_dist(p, &ma)).sum::<f64>() + b.iter().map(|p| sq_dist(p, &mb)).sum::<f64>();
            if cost < best.0 {
                best = (cost, vec![ma, mb]);
            }
        }
        best
    }

    #[test]
    fn optimal_two_means_on_four_points() {
        let pts = four_points();
        let (_, want) = brute_force_two_means(&pts);
        let book = train_codebook(&pts, 2, 0, &VqConfig::default()).unwrap();
        let mut got = book.centroids.clone();
        got.sort_by(|a, b| a[0].total_cmp(&b[0]));
        let mut want = want;
        want.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(got, vec![vec![0.0, 0.5], vec![10.0, 10.5]]);
        assert_eq!(got, want);
    }

    #[test]
    fn size_one_is_the_mean() {
        let book = train_codebook(&four_points(), 1, 0, &VqConfig::default()).unwrap();
        assert_eq!(book.centroids, vec![vec![5.0, 5.5]]);
    }

    #[test]
    fn too_few_distinct_vectors() {
        let pts = vec![vec![1.0], vec![1.0], vec![2.0]];
        assert_eq!(train_codebook(&pts, 3, 0, &VqConfig::default()), Err(VqError::TooFewVectors { needed: 3, found: 2 }));
    }

    #[test]
    fn quantize_examples() {
        let book = Codebook { centroids: vec![vec![0.0, 0.0], vec![10.0, 10.0]], distortion_history: vec![] };
        assert_eq!(book.quantize(&[1.0, 1.0]), Ok(0));
        assert_eq!(book.quantize(&[5.0, 5.0]), Ok(0));
        assert_eq!(book.quantize(&[1.0]), Err(VqError::DimensionMismatch { expected: 2, found: 1 }));
    }

    fn cloud(seed: u64, n: usize, dim: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let centre = (i % 5) as f64 * 3.0;
                (0..dim).map(|_| centre + rng.random_range(-1.0..1.0)).collect()
            })
            .collect()
    }

    #[test]
    fn larger_codebook_invariants() {
        let pts = cloud(3, 400, 3);
        let book = train_codebook(&pts, 16, 0, &VqConfig::default()).unwrap();
        assert_eq!(book.size(), 16);
        assert!(book.distortion_history.windows(2).all(|w| w[1] <= w[0]));
        for (i, c) in book.centroids.iter().enumerate() {
            assert_eq!(book.quantize(c), Ok(i));
            assert!(c.iter().all(|x| x.is_finite()));
        }
        for i in 0..16 {
            for j in 0..i {
                assert_ne!(book.centroids[i], book.centroids[j]);
            }
        }
        let probes = cloud(9, 1000, 3);
        for p in &probes {
            let scan = (0..16).fold(0, |best, k| if sq_dist(&book.centroids[k], p) < sq_dist(&book.centroids[best], p) { k } else { best });
            assert_eq!(book.quantize(p), Ok(scan));
        }
        assert_eq!(book, train_codebook(&pts, 16, 0, &VqConfig::default()).unwrap());
        // Non-power-of-two sizes split only the costliest cells.
        assert_eq!(train_codebook(&pts, 12, 0, &VqConfig::default()).unwrap().size(), 12);
    }

    proptest! {
        #[test]
        fn distortion_never_increases(seed in any::<u64>(), size in 1usize..12) {
            let pts = cloud(seed, 60, 2);
            let book = train_codebook(&pts, size, 0, &VqConfig::default()).unwrap();
            prop_assert!(book.distortion_history.windows(2).all(|w| w[1] <= w[0]));
            prop_assert_eq!(book.size(), size);
        }
    }
}
