//! Finite metric spaces, greedy nets and empirical doubling / uniform
//! perfectness estimates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Above this size the triangle inequality is checked on sampled triples.
pub const EXHAUSTIVE_TRIANGLE_LIMIT: usize = 200;
/// Number of random triples drawn when sampling the triangle inequality.
pub const SAMPLED_TRIPLES: usize = 200_000;
/// Above this size the default radius sample is a geometric ladder.
pub const EXACT_RADII_LIMIT: usize = 500;
/// Default seed for triangle sampling.
pub const DEFAULT_SEED: u64 = 0x5eed_b11f;

const REL_SLACK: f64 = 1e-12;

/// A finite metric space with a dense distance matrix and an optional
/// positive weight per point (the measure used by the doubling estimate).
///
/// Points are addressed by their index `0..n`; ties are broken everywhere by
/// the smallest index.
#[derive(Debug, Clone)]
pub struct FiniteMetricSpace {
    labels: Vec<String>,
    dist: Vec<f64>,
    weights: Option<Vec<f64>>,
    diameter: f64,
    min_separation: f64,
}

impl FiniteMetricSpace {
    /// Build and validate a space from a full row-major `n * n` matrix.
    pub fn from_matrix(
        labels: Vec<String>,
        matrix: Vec<f64>,
        weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        Self::from_matrix_seeded(labels, matrix, weights, DEFAULT_SEED)
    }

    pub fn from_matrix_seeded(
        labels: Vec<String>,
        matrix: Vec<f64>,
        weights: Option<Vec<f64>>,
        seed: u64,
    ) -> Result<Self> {
        let n = labels.len();
        if matrix.len() != n * n {
            return Err(Error::MatrixShape {
                expected: n * n,
                got: matrix.len(),
            });
        }
        let space = Self::assemble(labels, matrix, weights)?;
        space.validate(seed)?;
        Ok(space)
    }

    /// Build a space from a distance oracle evaluated on every pair `i < j`.
    pub fn from_fn<F>(labels: Vec<String>, weights: Option<Vec<f64>>, mut oracle: F) -> Result<Self>
    where
        F: FnMut(usize, usize) -> f64,
    {
        let n = labels.len();
        let mut matrix = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = oracle(i, j);
                matrix[i * n + j] = d;
                matrix[j * n + i] = d;
            }
        }
        Self::from_matrix(labels, matrix, weights)
    }

    /// Euclidean distances between coordinate rows; labels are the indices.
    pub fn euclidean(coords: &[Vec<f64>]) -> Result<Self> {
        let labels = (0..coords.len()).map(|i| i.to_string()).collect();
        Self::from_fn(labels, None, |i, j| euclid(&coords[i], &coords[j]))
    }

    /// Build without the O(n^3) triangle check; the caller guarantees the
    /// matrix is a metric (e.g. a shortest-path metric). Symmetry, the
    /// diagonal and positivity are still verified.
    pub fn from_metric_matrix_unchecked(labels: Vec<String>, matrix: Vec<f64>) -> Result<Self> {
        let n = labels.len();
        if matrix.len() != n * n {
            return Err(Error::MatrixShape {
                expected: n * n,
                got: matrix.len(),
            });
        }
        let space = Self::assemble(labels, matrix, None)?;
        space.check_entries()?;
        Ok(space)
    }

    fn assemble(labels: Vec<String>, dist: Vec<f64>, weights: Option<Vec<f64>>) -> Result<Self> {
        let n = labels.len();
        if let Some(w) = &weights {
            if w.len() != n {
                return Err(Error::WeightCount(w.len(), n));
            }
            if let Some(i) = w.iter().position(|&x| !(x > 0.0 && x.is_finite())) {
                return Err(Error::NonPositiveWeight(labels[i].clone()));
            }
        }
        let mut diameter: f64 = 0.0;
        let mut min_separation = f64::INFINITY;
        for i in 0..n {
            for j in (i + 1)..n {
                let d = dist[i * n + j];
                diameter = diameter.max(d);
                min_separation = min_separation.min(d);
            }
        }
        Ok(Self {
            labels,
            dist,
            weights,
            diameter,
            min_separation,
        })
    }

    fn check_entries(&self) -> Result<()> {
        let n = self.len();
        for i in 0..n {
            if self.dist[i * n + i] != 0.0 {
                return Err(Error::NonzeroDiagonal(self.labels[i].clone()));
            }
            for j in (i + 1)..n {
                let a = self.dist[i * n + j];
                let b = self.dist[j * n + i];
                if !(a > 0.0 && a.is_finite()) {
                    return Err(Error::InvalidDistance {
                        a: self.labels[i].clone(),
                        b: self.labels[j].clone(),
                        value: a,
                    });
                }
                if (a - b).abs() > REL_SLACK * a.max(b) {
                    return Err(Error::Asymmetric(
                        self.labels[i].clone(),
                        self.labels[j].clone(),
                    ));
                }
            }
        }
        Ok(())
    }

    fn validate(&self, seed: u64) -> Result<()> {
        self.check_entries()?;
        let n = self.len();
        if n < 3 {
            return Ok(());
        }
        if n <= EXHAUSTIVE_TRIANGLE_LIMIT {
            for a in 0..n {
                for b in 0..n {
                    for c in 0..n {
                        self.check_triangle(a, b, c)?;
                    }
                }
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..SAMPLED_TRIPLES {
                let a = rng.gen_range(0..n);
                let b = rng.gen_range(0..n);
                let c = rng.gen_range(0..n);
                self.check_triangle(a, b, c)?;
            }
        }
        Ok(())
    }

    fn check_triangle(&self, a: usize, b: usize, c: usize) -> Result<()> {
        let ac = self.dist(a, c);
        let abc = self.dist(a, b) + self.dist(b, c);
        if ac > abc * (1.0 + REL_SLACK) {
            return Err(Error::TriangleViolation {
                a: self.labels[a].clone(),
                b: self.labels[b].clone(),
                c: self.labels[c].clone(),
                ac,
                abc,
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn dist(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.labels.len() + j]
    }

    /// Row `i` of the distance matrix.
    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.len();
        &self.dist[i * n..(i + 1) * n]
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    /// Smallest distance between distinct points; infinite for one point.
    pub fn min_separation(&self) -> f64 {
        self.min_separation
    }

    /// Distance from `x` to the nearest point of `set`.
    pub fn dist_to_set(&self, x: usize, set: &[usize]) -> f64 {
        let row = self.row(x);
        set.iter().map(|&s| row[s]).fold(f64::INFINITY, f64::min)
    }

    /// Smallest distance between points of two sets.
    pub fn set_dist(&self, a: &[usize], b: &[usize]) -> f64 {
        a.iter()
            .map(|&x| self.dist_to_set(x, b))
            .fold(f64::INFINITY, f64::min)
    }

    /// Diameter of a subset (0 for singletons).
    pub fn set_diameter(&self, set: &[usize]) -> f64 {
        let mut d: f64 = 0.0;
        for (k, &i) in set.iter().enumerate() {
            let row = self.row(i);
            for &j in &set[k + 1..] {
                d = d.max(row[j]);
            }
        }
        d
    }

    /// The subspace on `ids` (in the given order); labels are kept.
    pub fn subspace(&self, ids: &[usize]) -> FiniteMetricSpace {
        let m = ids.len();
        let mut dist = vec![0.0; m * m];
        for (a, &i) in ids.iter().enumerate() {
            for (b, &j) in ids.iter().enumerate() {
                dist[a * m + b] = self.dist(i, j);
            }
        }
        let labels = ids.iter().map(|&i| self.labels[i].clone()).collect();
        let weights = self
            .weights
            .as_ref()
            .map(|w| ids.iter().map(|&i| w[i]).collect());
        Self::assemble(labels, dist, weights).expect("subspace of a valid space")
    }

    /// Same points with every distance multiplied by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> FiniteMetricSpace {
        let dist = self.dist.iter().map(|d| d * factor).collect();
        Self::assemble(self.labels.clone(), dist, self.weights.clone()).expect("scaled space")
    }

    /// Same points with every distance raised to `exponent` (snowflake).
    pub fn snowflake(&self, exponent: f64) -> FiniteMetricSpace {
        let dist = self.dist.iter().map(|d| d.powf(exponent)).collect();
        Self::assemble(self.labels.clone(), dist, self.weights.clone()).expect("snowflaked space")
    }
}

#[inline]
pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// A maximal `scale`-separated subset with a nearest-center assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Net {
    pub scale: f64,
    /// Center point ids in selection order (ascending id).
    pub centers: Vec<usize>,
    /// Points covered by the net, ascending.
    pub domain: Vec<usize>,
    /// `assignment[k]` is the center of `domain[k]`.
    pub assignment: Vec<usize>,
}

impl Net {
    pub fn center_of(&self, point: usize) -> Option<usize> {
        self.domain
            .binary_search(&point)
            .ok()
            .map(|k| self.assignment[k])
    }
}

/// Greedy net over the whole space.
pub fn greedy_net(space: &FiniteMetricSpace, scale: f64) -> Result<Net> {
    let all: Vec<usize> = (0..space.len()).collect();
    greedy_net_on(space, &all, &all, scale)
}

/// Greedy net whose centers are drawn from `candidates` (visited in ascending
/// id order) and which assigns every point of `domain` to its nearest center.
///
/// A candidate becomes a center when it is at distance `>= scale` from every
/// center chosen so far, so centers are pairwise `>= scale` apart and every
/// rejected candidate lies within `< scale` of some center.
pub fn greedy_net_on(
    space: &FiniteMetricSpace,
    candidates: &[usize],
    domain: &[usize],
    scale: f64,
) -> Result<Net> {
    if !(scale > 0.0) {
        return Err(Error::InvalidParameter {
            name: "scale",
            value: scale,
            reason: "must be positive",
        });
    }
    let mut sorted: Vec<usize> = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut centers: Vec<usize> = Vec::new();
    for &c in &sorted {
        let row = space.row(c);
        if centers.iter().all(|&z| row[z] >= scale) {
            centers.push(c);
        }
    }
    let mut domain: Vec<usize> = domain.to_vec();
    domain.sort_unstable();
    domain.dedup();
    let assignment = domain
        .iter()
        .map(|&p| nearest(space, p, &centers))
        .collect();
    Ok(Net {
        scale,
        centers,
        domain,
        assignment,
    })
}

/// Nearest element of `centers` (ascending ids) to `p`, ties to the smallest id.
pub(crate) fn nearest(space: &FiniteMetricSpace, p: usize, centers: &[usize]) -> usize {
    let row = space.row(p);
    let mut best = centers[0];
    let mut best_d = row[best];
    for &c in &centers[1..] {
        let d = row[c];
        if d < best_d || (d == best_d && c < best) {
            best = c;
            best_d = d;
        }
    }
    best
}

/// Empirical diagnostics of a finite space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceDiagnostics {
    pub n_points: usize,
    pub doubling_constant_estimate: f64,
    pub uniform_perfectness_estimate: f64,
    pub diameter: f64,
    pub min_separation: f64,
    pub radii_sampled: usize,
    /// Set for spaces with fewer than two points.
    pub degenerate: bool,
}

/// Default radius sample: every distinct pairwise distance for small spaces,
/// otherwise a geometric ladder (ratio `2^(1/4)`) from the minimum separation
/// to the diameter.
pub fn default_radii(space: &FiniteMetricSpace) -> Vec<f64> {
    let n = space.len();
    if n < 2 {
        return vec![1.0];
    }
    if n <= EXACT_RADII_LIMIT {
        let mut radii = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            radii.extend_from_slice(&space.row(i)[i + 1..]);
        }
        radii.sort_by(f64::total_cmp);
        radii.dedup();
        radii
    } else {
        let step = 2f64.powf(0.25);
        let mut radii = Vec::new();
        let mut r = space.min_separation();
        while r < space.diameter() {
            radii.push(r);
            r *= step;
        }
        radii.push(space.diameter());
        radii
    }
}

/// One row's distances sorted ascending with prefix weights.
struct SortedRow {
    d: Vec<f64>,
    prefix: Vec<f64>,
}

impl SortedRow {
    fn new(space: &FiniteMetricSpace, x: usize) -> Self {
        let mut pairs: Vec<(f64, f64)> = space
            .row(x)
            .iter()
            .enumerate()
            .map(|(j, &d)| (d, space.weight(j)))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut prefix = Vec::with_capacity(pairs.len() + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for &(_, w) in &pairs {
            acc += w;
            prefix.push(acc);
        }
        SortedRow {
            d: pairs.into_iter().map(|p| p.0).collect(),
            prefix,
        }
    }

    /// Mass of the open ball of radius `r`.
    fn open_ball_mass(&self, r: f64) -> f64 {
        self.prefix[self.d.partition_point(|&d| d < r)]
    }
}

/// Max over sampled `(x, r)` of `mu(B(x, 2r)) / mu(B(x, r))` (open balls).
pub fn estimate_doubling(space: &FiniteMetricSpace, radii: &[f64]) -> f64 {
    let mut best: f64 = 1.0;
    for x in 0..space.len() {
        let row = SortedRow::new(space, x);
        for &r in radii.iter().filter(|r| **r > 0.0) {
            let inner = row.open_ball_mass(r);
            let outer = row.open_ball_mass(2.0 * r);
            best = best.max(outer / inner);
        }
    }
    best
}

/// Smallest `A` such that every probed annulus `[r/A, r]` is nonempty.
///
/// Each sampled radius `r <= diam X` is probed from below: the controlling
/// point is the farthest one at distance strictly less than `r`, so sampling
/// the pairwise distances yields the exact supremum over all
/// `d_1(x) <= r < diam X`. A point at exactly `r` with nothing closer (the
/// nearest neighbor) gives `A = 1`; radii below the nearest neighbor carry no
/// information and are skipped.
pub fn estimate_uniform_perfectness(space: &FiniteMetricSpace, radii: &[f64]) -> f64 {
    let diam = space.diameter();
    let mut best: f64 = 1.0;
    for x in 0..space.len() {
        let row = SortedRow::new(space, x);
        for &r in radii.iter().filter(|r| **r > 0.0 && **r <= diam) {
            let below = row.d.partition_point(|&d| d < r);
            // row.d[0] is the zero self-distance
            if below >= 2 {
                best = best.max(r / row.d[below - 1]);
            }
        }
    }
    best
}

/// Diagnostics with the default radius sample.
pub fn diagnose(space: &FiniteMetricSpace) -> SpaceDiagnostics {
    let radii = default_radii(space);
    let degenerate = space.len() < 2;
    SpaceDiagnostics {
        n_points: space.len(),
        doubling_constant_estimate: estimate_doubling(space, &radii),
        uniform_perfectness_estimate: if degenerate {
            1.0
        } else {
            estimate_uniform_perfectness(space, &radii)
        },
        diameter: space.diameter(),
        min_separation: if degenerate { 0.0 } else { space.min_separation() },
        radii_sampled: radii.len(),
        degenerate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[f64]) -> FiniteMetricSpace {
        let coords: Vec<Vec<f64>> = points.iter().map(|&x| vec![x]).collect();
        FiniteMetricSpace::euclidean(&coords).unwrap()
    }

    fn grid(n: usize) -> FiniteMetricSpace {
        let h = 1.0 / (n - 1) as f64;
        let coords: Vec<Vec<f64>> = (0..n * n)
            .map(|k| vec![(k % n) as f64 * h, (k / n) as f64 * h])
            .collect();
        FiniteMetricSpace::euclidean(&coords).unwrap()
    }

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| ["a", "b", "c", "d"][i].to_string()).collect()
    }

    #[test]
    fn equilateral_triangle() {
        let m = vec![0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0];
        let s = FiniteMetricSpace::from_matrix(labels(3), m, None).unwrap();
        assert_eq!(s.diameter(), 1.0);
    }

    #[test]
    fn triangle_violation_names_triple() {
        // d(a,b) = 1, d(b,c) = 1, d(a,c) = 5
        let m = vec![0.0, 1.0, 5.0, 1.0, 0.0, 1.0, 5.0, 1.0, 0.0];
        let err = FiniteMetricSpace::from_matrix(labels(3), m, None).unwrap_err();
        match err {
            Error::TriangleViolation { a, b, c, .. } => {
                assert_eq!((a.as_str(), b.as_str(), c.as_str()), ("a", "b", "c"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn rejects_asymmetric_and_negative() {
        let m = vec![0.0, 1.0, 2.0, 0.0];
        assert!(matches!(
            FiniteMetricSpace::from_matrix(labels(2), m, None),
            Err(Error::Asymmetric(..))
        ));
        let m = vec![0.0, -1.0, -1.0, 0.0];
        assert!(matches!(
            FiniteMetricSpace::from_matrix(labels(2), m, None),
            Err(Error::InvalidDistance { .. })
        ));
        let m = vec![0.0, 1.0, 1.0, 0.0];
        assert!(matches!(
            FiniteMetricSpace::from_matrix(labels(2), m, Some(vec![1.0, 0.0])),
            Err(Error::NonPositiveWeight(_))
        ));
    }

    #[test]
    fn unit_square_grid_diameter() {
        let s = grid(10);
        assert_eq!(s.len(), 100);
        assert!((s.diameter() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn greedy_net_on_line() {
        let s = line(&[0.0, 1.0, 2.0, 3.0]);
        let net = greedy_net(&s, 1.5).unwrap();
        assert_eq!(net.centers, vec![0, 2]);
        for (k, &p) in net.domain.iter().enumerate() {
            assert!(s.dist(p, net.assignment[k]) <= 1.5);
        }
        // point 1 is equidistant from 0 and 2: smallest id wins
        assert_eq!(net.center_of(1), Some(0));
        assert_eq!(greedy_net(&s, 10.0).unwrap().centers, vec![0]);
        assert_eq!(greedy_net(&s, 1.0).unwrap().centers, vec![0, 1, 2, 3]);
        assert!(greedy_net(&s, 0.0).is_err());
    }

    /// Brute-force doubling ratio over every center and every radius in a
    /// fine sweep, independent of the sorted-row implementation.
    fn brute_doubling(s: &FiniteMetricSpace, radii: &[f64]) -> f64 {
        let mut best: f64 = 1.0;
        for x in 0..s.len() {
            for &r in radii {
                let inner = (0..s.len()).filter(|&y| s.dist(x, y) < r).count() as f64;
                let outer = (0..s.len()).filter(|&y| s.dist(x, y) < 2.0 * r).count() as f64;
                best = best.max(outer / inner);
            }
        }
        best
    }

    #[test]
    fn doubling_four_points() {
        let s = line(&[0.0, 1.0, 2.0, 3.0]);
        let est = estimate_doubling(&s, &default_radii(&s));
        let sweep: Vec<f64> = (1..400).map(|k| k as f64 * 0.01).collect();
        let oracle = brute_doubling(&s, &sweep);
        assert!(est <= 4.0);
        // the sweep includes every pairwise distance, so it bounds the sample
        assert!(est <= oracle + 1e-12);
        assert_eq!(est, 3.0);
        assert_eq!(estimate_doubling(&line(&[0.0]), &[1.0]), 1.0);
    }

    #[test]
    fn doubling_grid_bounded() {
        let s = grid(10);
        let est = estimate_doubling(&s, &default_radii(&s));
        let oracle = brute_doubling(&s, &default_radii(&s));
        assert_eq!(est, oracle);
        assert!(est <= 16.0, "grid doubling estimate {est}");
    }

    /// Exact supremum of the annulus constant via consecutive distance gaps.
    fn brute_perfectness(s: &FiniteMetricSpace) -> f64 {
        let mut best: f64 = 1.0;
        for x in 0..s.len() {
            let mut d: Vec<f64> = (0..s.len()).filter(|&y| y != x).map(|y| s.dist(x, y)).collect();
            d.sort_by(f64::total_cmp);
            // radii up to the diameter, past this point's farthest neighbor too
            d.push(s.diameter());
            for w in d.windows(2) {
                if w[0] < w[1] {
                    best = best.max(w[1] / w[0]);
                }
            }
        }
        best
    }

    #[test]
    fn perfectness_grid_and_geometric() {
        let s = grid(8);
        let a = estimate_uniform_perfectness(&s, &default_radii(&s));
        assert!(a <= 2.0, "grid A {a}");
        assert_eq!(a, brute_perfectness(&s));

        let pts: Vec<f64> = (0..12).map(|k| 0.5f64.powi(k)).collect();
        let g = line(&pts);
        let a = estimate_uniform_perfectness(&g, &default_radii(&g));
        assert_eq!(a, brute_perfectness(&g));
        // farthest gap: from 2^-k the distances jump from 2^-k to 3 * 2^-k
        assert!((a - 3.0).abs() < 1e-9, "geometric A {a}");

        let two = line(&[0.0, 1.0]);
        assert_eq!(estimate_uniform_perfectness(&two, &default_radii(&two)), 1.0);
    }

    #[test]
    fn estimates_monotone_in_radii() {
        let s = grid(6);
        let all = default_radii(&s);
        let half: Vec<f64> = all.iter().step_by(2).copied().collect();
        assert!(estimate_doubling(&s, &half) <= estimate_doubling(&s, &all));
        assert!(
            estimate_uniform_perfectness(&s, &half) <= estimate_uniform_perfectness(&s, &all)
        );
    }

    #[test]
    fn diagnose_single_point() {
        let d = diagnose(&line(&[0.0]));
        assert!(d.degenerate);
        assert_eq!(d.doubling_constant_estimate, 1.0);
    }
}
