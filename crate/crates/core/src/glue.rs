//! Gluing: annulus normalization of local patches, the colored patch map
//! `H`, the global map `F = g x H x dist(., Y)` and the W-local and
//! W-large-scale co-Lipschitz verifiers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lipschitz::{distortion_with, mcshane_extend, LipschitzMap};
use crate::metric::{euclid, FiniteMetricSpace};
use crate::sparse::SparseVec;
use crate::whitney::{Coloring, Cutoff, CutoffFamily, WhitneyDecomposition};

/// Relative slack for float round-off in the verifiers.
pub const GLUE_SLACK: f64 = 1e-9;

/// Witnesses kept per verifier case.
pub const MAX_WITNESSES: usize = 10;

/// Smallest `M1` with `(4 C1 A / delta + 1)^2 / (2 sqrt(M1)) <= 1/2`, and at
/// least the dimension of the embedding of `Y`.
pub fn choose_m1(c1: f64, a: f64, delta: f64, y_dim: usize) -> usize {
    let b = 4.0 * c1 * a / delta + 1.0;
    let need = (b.powi(4) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    need.max(y_dim)
}

/// The W-local radius `16 M1 L1^2`.
pub fn wlocal_radius(m1: usize, l1: f64) -> f64 {
    16.0 * m1 as f64 * l1 * l1
}

/// Radius `((c L2 + 1 / (c L2)) / 2) * scale` at which patch images are centred.
pub fn annulus_radius(c: f64, l2: f64, scale: f64) -> f64 {
    let s = c * l2;
    0.5 * (s + 1.0 / s) * scale
}

/// Smallest `c` for which an image of radius `spread` about its centroid
/// fits in the annulus `[scale / (c L2), c L2 scale]`.
pub fn required_c(spread: f64, scale: f64, l2: f64) -> f64 {
    let t = spread / scale;
    (t + (t * t + 1.0).sqrt()) / l2
}

/// Length scale of a Whitney cube: its diameter, or `delta^level` for a
/// singleton.
pub fn cube_scale(decomp: &WhitneyDecomposition, q: usize) -> f64 {
    decomp.scale(q)
}

/// A local map `h_Q` given on (at least) the points of `Q**`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalPatch {
    pub cube: usize,
    /// Point ids, ascending.
    pub points: Vec<usize>,
    pub values: Vec<Vec<f64>>,
}

impl LocalPatch {
    pub fn new(cube: usize, points: Vec<usize>, values: Vec<Vec<f64>>) -> Result<Self> {
        if points.len() != values.len() {
            return Err(Error::MapShape(values.len(), points.len()));
        }
        let mut pairs: Vec<(usize, Vec<f64>)> = points.into_iter().zip(values).collect();
        pairs.sort_by_key(|p| p.0);
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Input(format!("patch for cube {cube} repeats a point")));
        }
        let (points, values) = pairs.into_iter().unzip();
        Ok(LocalPatch { cube, points, values })
    }

    pub fn dim(&self) -> usize {
        self.values.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn value(&self, p: usize) -> Option<&[f64]> {
        self.points.binary_search(&p).ok().map(|k| self.values[k].as_slice())
    }

    /// Restriction of the coordinates of every point to `points`.
    pub fn identity(cube: usize, points: &[usize], coords: &[Vec<f64>]) -> Self {
        LocalPatch {
            cube,
            points: points.to_vec(),
            values: points.iter().map(|&p| coords[p].clone()).collect(),
        }
    }
}

/// `max(expansion, contraction)` of `patch` on `subset`, with the worst pair
/// (labels). Subsets with fewer than two points give 1.
pub fn patch_constant(
    space: &FiniteMetricSpace,
    patch: &LocalPatch,
    subset: &[usize],
) -> Result<(f64, Option<(String, String)>)> {
    let rows: Vec<&[f64]> = subset
        .iter()
        .map(|&p| {
            patch.value(p).ok_or_else(|| Error::PatchCoverage {
                cube: patch.cube,
                point: space.label(p).to_string(),
            })
        })
        .collect::<Result<_>>()?;
    if subset.len() < 2 {
        return Ok((1.0, None));
    }
    let r = distortion_with(space, subset, |i, j| euclid(rows[i], rows[j]));
    if r.expansion >= r.contraction {
        Ok((r.expansion, r.expansion_pair))
    } else {
        Ok((r.contraction, r.contraction_pair))
    }
}

/// `h~_Q = (h_Q + t_Q) phi_Q` on the points of `Q**`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedPatch {
    pub cube: usize,
    pub translation: Vec<f64>,
    pub scale: f64,
    /// Points of `Q**`, ascending.
    pub points: Vec<usize>,
    pub values: Vec<SparseVec>,
}

impl NormalizedPatch {
    pub fn value(&self, p: usize) -> Option<&SparseVec> {
        self.points.binary_search(&p).ok().map(|k| &self.values[k])
    }
}

fn pad(v: &[f64], dim: usize) -> Vec<f64> {
    let mut out = v.to_vec();
    out.resize(dim, 0.0);
    out
}

/// Translate `h_Q` so the centroid of `h_Q(Q*)` sits on the first axis at
/// [`annulus_radius`], then multiply by the cutoff.
#[allow(clippy::too_many_arguments)]
pub fn normalize_patch(
    space: &FiniteMetricSpace,
    decomp: &WhitneyDecomposition,
    q: usize,
    patch: &LocalPatch,
    cutoff: &Cutoff,
    c: f64,
    l2: f64,
    dim: usize,
) -> Result<NormalizedPatch> {
    let dim = dim.max(patch.dim()).max(1);
    for &p in &cutoff.star2_points {
        if patch.value(p).is_none() {
            return Err(Error::PatchCoverage { cube: q, point: space.label(p).to_string() });
        }
    }
    let star = &cutoff.star_points;
    let (measured, pair) = patch_constant(space, patch, star)?;
    if measured > l2 * (1.0 + GLUE_SLACK) {
        let (a, b) = pair.unwrap_or_default();
        return Err(Error::PatchDistortion { cube: q, declared: l2, measured, a, b });
    }
    let image: Vec<Vec<f64>> = star.iter().map(|&p| pad(patch.value(p).unwrap(), dim)).collect();
    let mut centroid = vec![0.0; dim];
    for v in &image {
        for (c, x) in centroid.iter_mut().zip(v) {
            *c += x / image.len() as f64;
        }
    }
    let spread = image.iter().map(|v| euclid(v, &centroid)).fold(0.0, f64::max);
    let scale = cube_scale(decomp, q);
    let required = required_c(spread, scale, l2);
    if required > c * (1.0 + GLUE_SLACK) {
        return Err(Error::AnnulusInfeasible { cube: q, c, required });
    }
    let mut translation: Vec<f64> = centroid.iter().map(|x| -x).collect();
    translation[0] += annulus_radius(c, l2, scale);
    let values = cutoff
        .star2_points
        .iter()
        .zip(&cutoff.values)
        .map(|(&p, &phi)| {
            let v: Vec<f64> = pad(patch.value(p).unwrap(), dim)
                .iter()
                .zip(&translation)
                .map(|(h, t)| (h + t) * phi)
                .collect();
            SparseVec::from_dense(&v)
        })
        .collect();
    Ok(NormalizedPatch {
        cube: q,
        translation,
        scale,
        points: cutoff.star2_points.clone(),
        values,
    })
}

/// Local patches of every Whitney cube with their normalizations.
#[derive(Debug, Clone)]
pub struct PatchAtlas {
    pub m2: usize,
    pub l2: f64,
    pub c: f64,
    /// Measured `max(expansion, contraction)` of each `h_Q` on `Q*`.
    pub measured: Vec<f64>,
    pub raw: Vec<LocalPatch>,
    pub normalized: Vec<NormalizedPatch>,
}

/// Validate and normalize one patch per cube. `l2` defaults to the largest
/// measured patch constant and `c` to `max(2 L2 + 1, required)`.
pub fn build_atlas(
    space: &FiniteMetricSpace,
    decomp: &WhitneyDecomposition,
    cutoffs: &CutoffFamily,
    patches: Vec<LocalPatch>,
    l2: Option<f64>,
    c: Option<f64>,
) -> Result<PatchAtlas> {
    let m = decomp.len();
    let mut slots: Vec<Option<LocalPatch>> = vec![None; m];
    for p in patches {
        if p.cube < m {
            let cube = p.cube;
            slots[cube] = Some(p);
        }
    }
    let missing: Vec<usize> = (0..m).filter(|&q| slots[q].is_none()).collect();
    if !missing.is_empty() {
        return Err(Error::MissingPatches(missing));
    }
    let raw: Vec<LocalPatch> = slots.into_iter().map(Option::unwrap).collect();
    let m2 = raw.iter().map(LocalPatch::dim).max().unwrap_or(0).max(1);
    let measured: Vec<f64> = raw
        .iter()
        .enumerate()
        .map(|(q, p)| patch_constant(space, p, &cutoffs.cutoffs[q].star_points).map(|r| r.0))
        .collect::<Result<_>>()?;
    let l2 = l2.unwrap_or_else(|| measured.iter().copied().fold(1.0, f64::max));
    let c = match c {
        Some(c) => c,
        None => {
            let mut need: f64 = 2.0 * l2 + 1.0;
            for (q, p) in raw.iter().enumerate() {
                let star = &cutoffs.cutoffs[q].star_points;
                let image: Vec<Vec<f64>> = star.iter().map(|&x| pad(p.value(x).unwrap(), m2)).collect();
                let mut centroid = vec![0.0; m2];
                for v in &image {
                    for (a, x) in centroid.iter_mut().zip(v) {
                        *a += x / image.len() as f64;
                    }
                }
                let spread = image.iter().map(|v| euclid(v, &centroid)).fold(0.0, f64::max);
                need = need.max(required_c(spread, cube_scale(decomp, q), l2) * (1.0 + GLUE_SLACK));
            }
            need
        }
    };
    let normalized = raw
        .iter()
        .enumerate()
        .map(|(q, p)| normalize_patch(space, decomp, q, p, &cutoffs.cutoffs[q], c, l2, m2))
        .collect::<Result<_>>()?;
    Ok(PatchAtlas { m2, l2, c, measured, raw, normalized })
}

impl PatchAtlas {
    /// Cubes whose measured constant exceeds `L2`, with that constant.
    pub fn distortion_violations(&self) -> Vec<(usize, f64)> {
        self.measured
            .iter()
            .enumerate()
            .filter(|(_, &m)| m > self.l2 * (1.0 + GLUE_SLACK))
            .map(|(q, &m)| (q, m))
            .collect()
    }

    /// `(cube, point, |h~_Q(p)|)` with `p in Q*` outside the annulus.
    pub fn annulus_violations(&self, cutoffs: &CutoffFamily) -> Vec<(usize, usize, f64)> {
        let s = self.c * self.l2;
        let mut out = Vec::new();
        for (q, np) in self.normalized.iter().enumerate() {
            for &p in &cutoffs.cutoffs[q].star_points {
                let r = np.value(p).map_or(0.0, SparseVec::norm);
                if r < np.scale / s * (1.0 - GLUE_SLACK) || r > s * np.scale * (1.0 + GLUE_SLACK) {
                    out.push((q, p, r));
                }
            }
        }
        out
    }
}

/// `H(p) = sum_Q h~_Q(p) (x) e_K(Q)`: block `K(Q) - 1` of width `m2`.
#[derive(Debug, Clone, PartialEq)]
pub struct HMap {
    pub colors: usize,
    pub m2: usize,
    pub rows: Vec<SparseVec>,
}

pub fn assemble_h(atlas: &PatchAtlas, coloring: &Coloring, n_points: usize) -> Result<HMap> {
    if coloring.colors.len() != atlas.normalized.len() {
        return Err(Error::MapShape(coloring.colors.len(), atlas.normalized.len()));
    }
    let mut pairs: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n_points];
    for (q, np) in atlas.normalized.iter().enumerate() {
        let k = coloring.colors[q];
        if k == 0 || k > coloring.count {
            return Err(Error::ColorOutOfRange { cube: q, color: k, count: coloring.count });
        }
        let offset = ((k - 1) * atlas.m2) as u32;
        for (&p, v) in np.points.iter().zip(&np.values) {
            pairs[p].extend(v.iter().map(|(i, x)| (i + offset, x)));
        }
    }
    Ok(HMap {
        colors: coloring.count,
        m2: atlas.m2,
        rows: pairs.into_iter().map(SparseVec::from_pairs).collect(),
    })
}

/// `F = g x H x dist(., Y)`.
///
/// `g` is the McShane extension of `f` padded to `M1` coordinates. The
/// `M1 - dim f` padded coordinates extend zero and all equal
/// `L1 dist(x, Y)`, so they are stored as the single column
/// `sqrt(M1 - dim f) L1 dist(x, Y)`, which preserves every distance.
#[derive(Debug, Clone)]
pub struct GlobalEmbedding {
    pub m1: usize,
    pub l1: f64,
    pub y_dim: usize,
    pub pad_scale: f64,
    pub g: Vec<Vec<f64>>,
    pub dist_y: Vec<f64>,
    pub h: HMap,
}

/// Extend `f` (given on `Y`, `L1`-Lipschitz per coordinate) and concatenate.
pub fn assemble_f(
    space: &FiniteMetricSpace,
    y: &[usize],
    f: &LipschitzMap,
    l1: f64,
    m1: usize,
    h: HMap,
) -> Result<GlobalEmbedding> {
    let n = space.len();
    let y_dim = f.dim();
    let g = if y_dim == 0 {
        vec![Vec::new(); n]
    } else {
        mcshane_extend(space, f, l1)?.values
    };
    let dist_y = (0..n).map(|p| space.dist_to_set(p, y)).collect();
    let pad_scale = (m1.saturating_sub(y_dim) as f64).sqrt() * l1;
    Ok(GlobalEmbedding { m1, l1, y_dim, pad_scale, g, dist_y, h })
}

impl GlobalEmbedding {
    pub fn h_offset(&self) -> usize {
        self.y_dim + 1
    }

    pub fn dist_column(&self) -> usize {
        self.h_offset() + self.h.colors * self.h.m2
    }

    pub fn dim(&self) -> usize {
        self.dist_column() + 1
    }

    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }

    pub fn row(&self, p: usize) -> SparseVec {
        let mut head = self.g[p].clone();
        head.push(self.pad_scale * self.dist_y[p]);
        let mut row = SparseVec::from_dense(&head).concat(&self.h.rows[p], self.h_offset() as u32);
        row.push(self.dist_column() as u32, self.dist_y[p]);
        row
    }

    pub fn rows(&self) -> Vec<SparseVec> {
        (0..self.len()).map(|p| self.row(p)).collect()
    }

    /// `|g(p) - g(q)|` over all `M1` coordinates.
    pub fn g_dist(&self, p: usize, q: usize) -> f64 {
        let pad = self.pad_scale * (self.dist_y[p] - self.dist_y[q]);
        (euclid(&self.g[p], &self.g[q]).powi(2) + pad * pad).sqrt()
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (1..=self.y_dim).map(|i| format!("g{i}")).collect();
        names.push("g_pad".into());
        for k in 1..=self.h.colors {
            for i in 1..=self.h.m2 {
                names.push(format!("h{k}_{i}"));
            }
        }
        names.push("dist_y".into());
        names
    }

    /// Points of `Y` where `F` differs from `f x 0 x 0`.
    pub fn restriction_violations(&self, y: &[usize], f: &LipschitzMap) -> Vec<usize> {
        y.iter()
            .copied()
            .filter(|&p| {
                let fp = f.value_of(p).unwrap_or(&[]);
                self.g[p].as_slice() != fp || self.h.rows[p].nnz() != 0 || self.dist_y[p] != 0.0
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairWitness {
    pub p: String,
    pub q: String,
    pub lhs: f64,
    pub rhs: f64,
}

/// One verifier case: pairs checked, violations of `lhs >= rhs` and the
/// smallest measured `lhs / rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub checked: usize,
    pub violations: usize,
    #[serde(with = "crate::io::ext_f64")]
    pub worst_ratio: f64,
    pub witnesses: Vec<PairWitness>,
}

impl Default for CaseReport {
    fn default() -> Self {
        CaseReport { checked: 0, violations: 0, worst_ratio: f64::INFINITY, witnesses: Vec::new() }
    }
}

impl CaseReport {
    fn record(&mut self, space: &FiniteMetricSpace, p: usize, q: usize, lhs: f64, rhs: f64) {
        self.checked += 1;
        if rhs > 0.0 {
            self.worst_ratio = self.worst_ratio.min(lhs / rhs);
        }
        if lhs < rhs * (1.0 - GLUE_SLACK) {
            self.violations += 1;
            if self.witnesses.len() < MAX_WITNESSES {
                self.witnesses.push(PairWitness {
                    p: space.label(p).to_string(),
                    q: space.label(q).to_string(),
                    lhs,
                    rhs,
                });
            }
        }
    }

    pub fn is_clean(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WLargeReport {
    #[serde(with = "crate::io::ext_f64")]
    pub rho: f64,
    /// Case split on `dist(Q, R) / max(diam Q, diam R)`.
    pub threshold: f64,
    /// `|g(p) - g(q)| >= d(p, q) / (4 L1)`.
    pub case1: CaseReport,
    /// `|dist(p, Y) - dist(q, Y)| >= diam(R) / 2`.
    pub case2: CaseReport,
}

/// Scan pairs `p in Q`, `q in R` with `d_W(Q, R) >= rho`.
#[allow(clippy::too_many_arguments)]
pub fn verify_wlarge_scale<G>(
    space: &FiniteMetricSpace,
    decomp: &WhitneyDecomposition,
    g_dist: G,
    dist_y: &[f64],
    m1: usize,
    l1: f64,
    rho: f64,
) -> WLargeReport
where
    G: Fn(usize, usize) -> f64,
{
    let threshold = 8.0 * m1 as f64 * l1 * l1 / (1.0 + decomp.comparability_bound);
    let mut case1 = CaseReport::default();
    let mut case2 = CaseReport::default();
    let omega = &decomp.omega;
    for (a, &p0) in omega.iter().enumerate() {
        let q0 = decomp.point_cube[p0].expect("omega point in a cube");
        for &p1 in &omega[a + 1..] {
            let q1 = decomp.point_cube[p1].expect("omega point in a cube");
            if q0 == q1 || decomp.whitney_distance_lossy(q0, q1) < rho {
                continue;
            }
            let ((p, _), (q, r)) = if decomp.cubes[q0].diam <= decomp.cubes[q1].diam {
                ((p0, q0), (p1, q1))
            } else {
                ((p1, q1), (p0, q0))
            };
            let dmax = decomp.cubes[r].diam;
            let ratio = if dmax > 0.0 { decomp.cube_dist(q0, q1) / dmax } else { f64::INFINITY };
            let d = space.dist(p, q);
            if ratio >= threshold {
                case1.record(space, p, q, g_dist(p, q), d / (4.0 * l1));
            } else {
                case2.record(space, p, q, (dist_y[p] - dist_y[q]).abs(), 0.5 * dmax);
            }
        }
    }
    WLargeReport { rho, threshold, case1, case2 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WLocalReport {
    #[serde(with = "crate::io::ext_f64")]
    pub rho: f64,
    pub l2: f64,
    pub c: f64,
    /// `q in Q*`: `|H(p) - H(q)| >= d(p, q) / L2`.
    pub case1: CaseReport,
    /// `q` outside `Q**`: `|H(p) - H(q)| >= diam(Q) / (c L2)`.
    pub case2: CaseReport,
    /// `q in Q** \ Q*`: `|H(p) - H(q)| >= d(p, q) / L2`.
    pub case3: CaseReport,
}

/// Scan ordered pairs `p in Q`, `q in R`, `p != q`, with `d_W(Q, R) < rho`,
/// classified by the position of `q` relative to `Q*` and `Q**`.
pub fn verify_wlocal(
    space: &FiniteMetricSpace,
    decomp: &WhitneyDecomposition,
    h: &HMap,
    l2: f64,
    c: f64,
    rho: f64,
) -> WLocalReport {
    let m = decomp.len();
    let stars: Vec<Vec<usize>> = (0..m).map(|q| decomp.star_points(q)).collect();
    let stars2: Vec<Vec<usize>> = (0..m).map(|q| decomp.star2_points(q)).collect();
    let mut report = WLocalReport {
        rho,
        l2,
        c,
        case1: CaseReport::default(),
        case2: CaseReport::default(),
        case3: CaseReport::default(),
    };
    let mut classify = |p: usize, cq: usize, q: usize, hd: f64, d: f64| {
        if stars[cq].binary_search(&q).is_ok() {
            report.case1.record(space, p, q, hd, d / l2);
        } else if stars2[cq].binary_search(&q).is_err() {
            report.case2.record(space, p, q, hd, cube_scale(decomp, cq) / (c * l2));
        } else {
            report.case3.record(space, p, q, hd, d / l2);
        }
    };
    let omega = &decomp.omega;
    for (a, &p) in omega.iter().enumerate() {
        let cp = decomp.point_cube[p].expect("omega point in a cube");
        for &q in &omega[a + 1..] {
            let cq = decomp.point_cube[q].expect("omega point in a cube");
            if decomp.whitney_distance_lossy(cp, cq) >= rho {
                continue;
            }
            let hd = h.rows[p].dist(&h.rows[q]);
            let d = space.dist(p, q);
            classify(p, cp, q, hd, d);
            classify(q, cq, p, hd, d);
        }
    }
    report
}

/// `|H(p)| <= N c L2 dist(p, Y)` on `Omega`, with `N` the overlap number.
/// The annulus bound `|h~_Q| <= c L2 diam(Q)` contributes the factor `c`.
pub fn verify_cross_bound(
    space: &FiniteMetricSpace,
    decomp: &WhitneyDecomposition,
    h: &HMap,
    l2: f64,
    c: f64,
) -> CaseReport {
    let n = decomp.overlap_number() as f64 * c;
    let mut r = CaseReport::default();
    for &p in &decomp.omega {
        let dy = space.dist_to_set(p, &decomp.y);
        let nearest = decomp
            .y
            .iter()
            .copied()
            .min_by(|&a, &b| space.dist(p, a).total_cmp(&space.dist(p, b)))
            .expect("Y is nonempty");
        // recorded as lhs >= rhs
        r.record(space, p, nearest, n * l2 * dy, h.rows[p].norm());
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::FiniteMetricSpace;
    use crate::whitney::{build_cutoffs, color_cubes};

    #[test]
    fn m1_examples() {
        // 4 C1 A / delta + 1 = 2 and 3
        assert_eq!(choose_m1(0.125, 1.0, 0.5, 0), 16);
        assert_eq!(choose_m1(0.25, 1.0, 0.5, 0), 81);
        assert_eq!(choose_m1(0.25, 1.0, 0.5, 100), 100);
    }

    #[test]
    fn annulus_arithmetic() {
        let (c, l2, d) = (3.0, 1.0, 2.0);
        let r = annulus_radius(c, l2, d);
        assert!((r - (3.0 + 1.0 / 3.0)).abs() < 1e-15);
        // spread exactly at the feasibility limit
        let spread = 0.5 * (c * l2 - 1.0 / (c * l2)) * d;
        assert!((required_c(spread, d, l2) - c).abs() < 1e-12);
    }

    fn line(pts: &[f64]) -> FiniteMetricSpace {
        let c: Vec<Vec<f64>> = pts.iter().map(|&x| vec![x]).collect();
        FiniteMetricSpace::euclidean(&c).unwrap()
    }

    /// Two-cube decomposition on a line with `Y = {0, far}`.
    fn two_cubes() -> (FiniteMetricSpace, WhitneyDecomposition) {
        let s = line(&[0.0, 1.0, 1.5, 998.5, 999.0, 1000.0]);
        let d = WhitneyDecomposition::from_cubes(
            &s,
            &[0, 5],
            vec![(0, vec![1, 2]), (0, vec![3, 4])],
            0.5,
            1.0,
            0.5,
            1.0,
            0.5,
        )
        .unwrap();
        (s, d)
    }

    #[test]
    fn normalize_places_patch_in_annulus() {
        let (s, d) = two_cubes();
        let cut = build_cutoffs(&d, &s);
        let coords: Vec<Vec<f64>> = (0..s.len()).map(|p| vec![s.dist(0, p), 0.0]).collect();
        let pts = d.star2_points(0);
        let patch = LocalPatch::identity(0, &pts, &coords);
        let l2 = 1.0;
        let c = 2.0 * l2 + 1.0;
        let np = normalize_patch(&s, &d, 0, &patch, &cut.cutoffs[0], c, l2, 2).unwrap();
        for &p in &cut.cutoffs[0].star_points {
            let r = np.value(p).unwrap().norm();
            assert!(r >= 0.5 / (c * l2) && r <= c * l2 * 0.5, "{r}");
        }
        // too small a c is rejected with the required value
        match normalize_patch(&s, &d, 0, &patch, &cut.cutoffs[0], 0.5, l2, 2) {
            Err(Error::AnnulusInfeasible { required, .. }) => assert!(required > 0.5),
            other => panic!("{other:?}"),
        }
        // a patch that is not L2-bi-Lipschitz on Q* is rejected with a witness
        let mut bad = patch.clone();
        bad.values[1][0] = bad.values[0][0] + 1e-6;
        assert!(matches!(
            normalize_patch(&s, &d, 0, &bad, &cut.cutoffs[0], c, l2, 2),
            Err(Error::PatchDistortion { .. })
        ));
    }

    #[test]
    fn singleton_patch_sits_on_the_radius() {
        let s = line(&[0.0, 1.0, 5.0]);
        let d = WhitneyDecomposition::from_cubes(
            &s,
            &[0],
            vec![(1, vec![1]), (-2, vec![2])],
            0.5,
            1.0,
            0.5,
            1.0,
            0.5,
        )
        .unwrap();
        let cut = build_cutoffs(&d, &s);
        let patch = LocalPatch::new(0, vec![1], vec![vec![7.0]]).unwrap();
        let np = normalize_patch(&s, &d, 0, &patch, &cut.cutoffs[0], 3.0, 1.0, 1).unwrap();
        let r = np.value(1).unwrap().norm();
        assert!((r - annulus_radius(3.0, 1.0, 0.5)).abs() < 1e-15);
    }

    #[test]
    fn assembled_map_vanishes_on_y() {
        let (s, d) = two_cubes();
        let cut = build_cutoffs(&d, &s);
        let coords: Vec<Vec<f64>> = (0..s.len()).map(|p| vec![s.dist(0, p)]).collect();
        let patches = (0..d.len())
            .map(|q| LocalPatch::identity(q, &d.star2_points(q), &coords))
            .collect();
        let atlas = build_atlas(&s, &d, &cut, patches, None, None).unwrap();
        let col = color_cubes(&d, 1e6).unwrap();
        let h = assemble_h(&atlas, &col, s.len()).unwrap();
        for &y in &d.y {
            assert_eq!(h.rows[y].nnz(), 0);
        }
        // a point in exactly one halo has its patch value in one block
        let k = col.colors[0] - 1;
        let v = &h.rows[1];
        assert!(v.iter().all(|(i, _)| (i as usize) / atlas.m2 == k));
        let f = LipschitzMap::new(vec![0, 5], vec![vec![0.0], vec![1000.0]], 1.0).unwrap();
        let emb = assemble_f(&s, &d.y, &f, 1.0, 16, h).unwrap();
        assert!(emb.restriction_violations(&d.y, &f).is_empty());
        assert_eq!(emb.row(0).nnz(), 0);
        assert_eq!(emb.column_names().len(), emb.dim());
        let rho = wlocal_radius(16, 1.0);
        let local = verify_wlocal(&s, &d, &emb.h, atlas.l2, atlas.c, rho);
        assert!(local.case1.is_clean() && local.case2.is_clean() && local.case3.is_clean());
        assert_eq!(local.case1.checked + local.case2.checked + local.case3.checked, 4);
        let cross = verify_cross_bound(&s, &d, &emb.h, atlas.l2, atlas.c);
        assert!(cross.is_clean());
    }

    #[test]
    fn missing_patch_is_listed() {
        let (s, d) = two_cubes();
        let cut = build_cutoffs(&d, &s);
        let coords: Vec<Vec<f64>> = (0..s.len()).map(|p| vec![p as f64]).collect();
        let only = vec![LocalPatch::identity(1, &d.star2_points(1), &coords)];
        match build_atlas(&s, &d, &cut, only, None, None) {
            Err(Error::MissingPatches(v)) => assert_eq!(v, vec![0]),
            other => panic!("{other:?}"),
        }
    }
}
