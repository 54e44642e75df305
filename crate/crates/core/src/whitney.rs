//! Christ-Whitney decomposition of `Omega = X \ Y`, the cube halos `Q*` and
//! `Q**`, Lipschitz cutoffs, the Whitney distance and the cube coloring.

use serde::{Deserialize, Serialize};

use crate::cubes::{auto_levels, build_cube_tree_on, CubeId, CubeTree};
use crate::error::{Error, Result};
use crate::metric::FiniteMetricSpace;

pub const DEFAULT_EPSILON: f64 = 0.5;

const REL_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhitneyCube {
    pub tree_id: CubeId,
    pub level: i32,
    pub center: usize,
    pub members: Vec<usize>,
    /// 0 for singletons.
    pub diam: f64,
    pub dist_y: f64,
}

impl WhitneyCube {
    pub fn is_singleton(&self) -> bool {
        self.members.len() == 1
    }
}

/// A selected cube that fails `diam <= dist(Q, Y) <= bound * diam`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhitneyViolation {
    pub cube: usize,
    pub diam: f64,
    pub dist_y: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WhitneyDecomposition {
    pub epsilon: f64,
    pub delta: f64,
    pub c1: f64,
    pub a0: f64,
    /// Uniform perfectness constant measured on the whole space.
    pub a_space: f64,
    /// Constant used in the comparability bound: the larger of `a_space` and
    /// the cube-scale ratio `delta^k / diam(Q)` over selected cubes.
    pub a_used: f64,
    pub c_prime: f64,
    /// `4 C1 A / delta`.
    pub comparability_bound: f64,
    pub n_points: usize,
    pub y: Vec<usize>,
    pub omega: Vec<usize>,
    pub cubes: Vec<WhitneyCube>,
    /// `star[q]` lists the cubes of `Q*` (ascending, includes `q`).
    pub star: Vec<Vec<usize>>,
    pub star2: Vec<Vec<usize>>,
    /// Selected cube of each point; `None` on `Y`.
    pub point_cube: Vec<Option<usize>>,
    pub violations: Vec<WhitneyViolation>,
    #[serde(skip)]
    cube_dist: Vec<f64>,
}

/// The layer index `k` with `c' delta^k < dist <= c' delta^(k-1)`.
pub fn layer_level(dist: f64, c_prime: f64, delta: f64) -> i32 {
    let mut k = ((dist / c_prime).ln() / delta.ln()).floor() as i32 + 1;
    while c_prime * delta.powi(k) >= dist {
        k += 1;
    }
    while c_prime * delta.powi(k - 1) < dist {
        k -= 1;
    }
    k
}

/// `dist / min(dq, dr)` with the singleton convention: a zero minimum
/// diameter gives 0 when the cubes touch and `+inf` otherwise.
pub fn whitney_ratio(dist: f64, dq: f64, dr: f64) -> f64 {
    if dist == 0.0 {
        return 0.0;
    }
    let m = dq.min(dr);
    if m == 0.0 {
        f64::INFINITY
    } else {
        dist / m
    }
}

fn complement(space: &FiniteMetricSpace, y: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut y = y.to_vec();
    y.sort_unstable();
    y.dedup();
    if y.is_empty() {
        return Err(Error::EmptyY);
    }
    if let Some(&bad) = y.iter().find(|&&p| p >= space.len()) {
        return Err(Error::UnknownPoint(bad.to_string()));
    }
    let omega: Vec<usize> = (0..space.len())
        .filter(|p| y.binary_search(p).is_err())
        .collect();
    Ok((y, omega))
}

/// Cube tree on `Omega` whose level range covers every layer index the
/// decomposition will ask for.
pub fn build_whitney_tree(space: &FiniteMetricSpace, y: &[usize], delta: f64) -> Result<CubeTree> {
    let (y, omega) = complement(space, y)?;
    if omega.is_empty() {
        return Err(Error::EmptyOmega);
    }
    let (mut k0, mut k1) = auto_levels(space, &omega, delta);
    let dists: Vec<f64> = omega.iter().map(|&p| space.dist_to_set(p, &y)).collect();
    for _ in 0..8 {
        let tree = build_cube_tree_on(space, &omega, delta, k0, k1)?;
        let c_prime = 4.0 * tree.c1_measured;
        let (lo, hi) = dists.iter().fold((i32::MAX, i32::MIN), |(lo, hi), &d| {
            let k = layer_level(d, c_prime, delta);
            (lo.min(k), hi.max(k))
        });
        if lo >= k0 && hi <= k1 {
            return Ok(tree);
        }
        k0 = k0.min(lo);
        k1 = k1.max(hi);
    }
    build_cube_tree_on(space, &omega, delta, k0, k1)
}

/// Select the maximal level-`k` cubes meeting the layers `Omega_k` with
/// `c' = 4 C1` and report every cube that breaks the Whitney inequality.
pub fn whitney_decompose(
    tree: &CubeTree,
    space: &FiniteMetricSpace,
    y: &[usize],
    a_space: f64,
    epsilon: f64,
) -> Result<WhitneyDecomposition> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidParameter {
            name: "epsilon",
            value: epsilon,
            reason: "must lie in (0, 1)",
        });
    }
    let (y, omega) = complement(space, y)?;
    if omega.is_empty() {
        return Err(Error::EmptyOmega);
    }
    if tree.domain != omega {
        return Err(Error::TreeDomainMismatch);
    }
    let delta = tree.delta;
    let c1 = tree.c1_measured;
    let c_prime = 4.0 * c1;
    let n = space.len();

    let mut dist_y = vec![0.0; n];
    for &p in &omega {
        dist_y[p] = space.dist_to_set(p, &y);
    }

    // Initial selection M0.
    let levels: Vec<i32> = omega
        .iter()
        .map(|&p| layer_level(dist_y[p], c_prime, delta))
        .collect();
    let need_min = *levels.iter().min().unwrap();
    let need_max = *levels.iter().max().unwrap();
    if need_min < tree.k_min || need_max > tree.k_max {
        return Err(Error::LayerRangeUncovered {
            k_min: tree.k_min,
            k_max: tree.k_max,
            need_min,
            need_max,
        });
    }
    let mut in_m0 = vec![false; tree.cubes.len()];
    for (&p, &k) in omega.iter().zip(&levels) {
        in_m0[tree.cube_containing(p, k)?.id] = true;
    }
    // Keep cubes with no strict ancestor in M0.
    let mut selected: Vec<CubeId> = (0..tree.cubes.len())
        .filter(|&id| in_m0[id])
        .filter(|&id| {
            let mut up = tree.cubes[id].parent;
            while let Some(p) = up {
                if in_m0[p] {
                    return false;
                }
                up = tree.cubes[p].parent;
            }
            true
        })
        .collect();
    selected.sort_by_key(|&id| (tree.cubes[id].level, tree.cubes[id].center));

    let cubes: Vec<WhitneyCube> = selected
        .iter()
        .map(|&id| {
            let c = &tree.cubes[id];
            WhitneyCube {
                tree_id: id,
                level: c.level,
                center: c.center,
                members: c.members.clone(),
                diam: space.set_diameter(&c.members),
                dist_y: c.members.iter().map(|&p| dist_y[p]).fold(f64::INFINITY, f64::min),
            }
        })
        .collect();

    assemble(space, y, omega, cubes, delta, c1, tree.a0_measured, a_space, epsilon)
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    space: &FiniteMetricSpace,
    y: Vec<usize>,
    omega: Vec<usize>,
    cubes: Vec<WhitneyCube>,
    delta: f64,
    c1: f64,
    a0: f64,
    a_space: f64,
    epsilon: f64,
) -> Result<WhitneyDecomposition> {
    let n = space.len();
    let mut point_cube = vec![None; n];
    for (q, c) in cubes.iter().enumerate() {
        for &p in &c.members {
            point_cube[p] = Some(q);
        }
    }

    let a_cube = cubes
        .iter()
        .filter(|c| !c.is_singleton())
        .map(|c| delta.powi(c.level) / c.diam)
        .fold(0.0, f64::max);
    let a_used = a_space.max(a_cube).max(1.0);

    let mut decomp = WhitneyDecomposition {
        epsilon,
        delta,
        c1,
        a0,
        a_space,
        a_used,
        c_prime: 4.0 * c1,
        comparability_bound: 4.0 * c1 * a_used / delta,
        n_points: n,
        y,
        omega,
        cubes,
        star: Vec::new(),
        star2: Vec::new(),
        point_cube,
        violations: Vec::new(),
        cube_dist: Vec::new(),
    };
    decomp.attach(space);
    decomp.compute_stars();
    decomp.violations = decomp.whitney_violations();
    Ok(decomp)
}

impl WhitneyDecomposition {
    /// Decomposition from an explicit cube list `(level, members)`; the
    /// cubes must partition `X \ Y`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_cubes(
        space: &FiniteMetricSpace,
        y: &[usize],
        cubes: Vec<(i32, Vec<usize>)>,
        delta: f64,
        c1: f64,
        a0: f64,
        a_space: f64,
        epsilon: f64,
    ) -> Result<Self> {
        let (y, omega) = complement(space, y)?;
        let mut seen = vec![0usize; space.len()];
        let cubes: Vec<WhitneyCube> = cubes
            .into_iter()
            .enumerate()
            .map(|(id, (level, mut members))| {
                members.sort_unstable();
                for &p in &members {
                    seen[p] += 1;
                }
                let dist_y = members
                    .iter()
                    .map(|&p| space.dist_to_set(p, &y))
                    .fold(f64::INFINITY, f64::min);
                WhitneyCube {
                    tree_id: id,
                    level,
                    center: members[0],
                    diam: space.set_diameter(&members),
                    members,
                    dist_y,
                }
            })
            .collect();
        let partition = omega.iter().all(|&p| seen[p] == 1) && y.iter().all(|&p| seen[p] == 0);
        if !partition || cubes.iter().any(|c| c.members.is_empty()) {
            return Err(Error::TreeDomainMismatch);
        }
        assemble(space, y, omega, cubes, delta, c1, a0, a_space, epsilon)
    }
}

impl WhitneyDecomposition {
    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    /// Recompute the cached cube-to-cube distances (needed after loading).
    pub fn attach(&mut self, space: &FiniteMetricSpace) {
        let m = self.cubes.len();
        let mut cd = vec![f64::INFINITY; m * m];
        for i in 0..m {
            cd[i * m + i] = 0.0;
        }
        for (a, &p) in self.omega.iter().enumerate() {
            let (Some(qp), row) = (self.point_cube[p], space.row(p)) else {
                continue;
            };
            for &q in &self.omega[a + 1..] {
                let Some(qq) = self.point_cube[q] else { continue };
                if qp != qq {
                    let d = row[q];
                    if d < cd[qp * m + qq] {
                        cd[qp * m + qq] = d;
                        cd[qq * m + qp] = d;
                    }
                }
            }
        }
        self.cube_dist = cd;
    }

    pub fn is_attached(&self) -> bool {
        self.cube_dist.len() == self.cubes.len() * self.cubes.len()
    }

    /// `dist(Q, R)` between selected cubes.
    pub fn cube_dist(&self, q: usize, r: usize) -> f64 {
        self.cube_dist[q * self.cubes.len() + r]
    }

    fn star_related(&self, q: usize, r: usize) -> bool {
        q == r
            || self.cube_dist(q, r) < self.epsilon * self.cubes[q].diam.min(self.cubes[r].diam)
    }

    fn compute_stars(&mut self) {
        let m = self.cubes.len();
        self.star = (0..m)
            .map(|q| (0..m).filter(|&r| self.star_related(q, r)).collect())
            .collect();
        self.star2 = (0..m)
            .map(|q| {
                let mut s: Vec<usize> = self.star[q]
                    .iter()
                    .flat_map(|&r| self.star[r].iter().copied())
                    .collect();
                s.sort_unstable();
                s.dedup();
                s
            })
            .collect();
    }

    /// Points of `Q*`, ascending.
    pub fn star_points(&self, q: usize) -> Vec<usize> {
        self.union_points(&self.star[q])
    }

    /// Points of `Q**`, ascending.
    pub fn star2_points(&self, q: usize) -> Vec<usize> {
        self.union_points(&self.star2[q])
    }

    fn union_points(&self, cubes: &[usize]) -> Vec<usize> {
        let mut pts: Vec<usize> = cubes
            .iter()
            .flat_map(|&r| self.cubes[r].members.iter().copied())
            .collect();
        pts.sort_unstable();
        pts
    }

    pub fn whitney_distance(&self, q: usize, r: usize) -> Result<f64> {
        if q == r {
            return Ok(0.0);
        }
        let (a, b) = (&self.cubes[q], &self.cubes[r]);
        let d = self.cube_dist(q, r);
        if a.is_singleton() && b.is_singleton() && d > 0.0 {
            return Err(Error::SingletonWhitneyDistance(q, r));
        }
        Ok(whitney_ratio(d, a.diam, b.diam))
    }

    /// `d_W` with no error path. A singleton counts at its level scale
    /// `delta^k` instead of diameter 0, so nearby singletons stay in each
    /// other's Whitney balls and are colored apart.
    pub fn whitney_distance_lossy(&self, q: usize, r: usize) -> f64 {
        if q == r {
            return 0.0;
        }
        let d = self.cube_dist(q, r);
        if d == 0.0 {
            0.0
        } else {
            d / self.scale(q).min(self.scale(r))
        }
    }

    /// `diam(Q)`, or `delta^k` for a singleton at level `k`.
    pub fn scale(&self, q: usize) -> f64 {
        let c = &self.cubes[q];
        if c.is_singleton() {
            self.delta.powi(c.level)
        } else {
            c.diam
        }
    }

    /// Cubes `R` with `d_W(Q, R) < rho`, including `Q`.
    pub fn whitney_ball(&self, q: usize, rho: f64) -> Vec<usize> {
        (0..self.cubes.len())
            .filter(|&r| self.whitney_distance_lossy(q, r) < rho)
            .collect()
    }

    pub fn max_ball_cardinality(&self, rho: f64) -> usize {
        (0..self.cubes.len())
            .map(|q| self.whitney_ball(q, rho).len())
            .max()
            .unwrap_or(0)
    }

    /// `(K + 1 + eps)^-1 diam(R) <= diam(Q) <= (K + 1 + eps) diam(R)`.
    pub fn diam_comparability_check(&self, q: usize, r: usize) -> bool {
        let k = self.comparability_bound + 1.0 + self.epsilon;
        let (dq, dr) = (self.cubes[q].diam, self.cubes[r].diam);
        dq <= k * dr * (1.0 + REL_SLACK) && dr <= k * dq * (1.0 + REL_SLACK)
    }

    /// Pairs `(Q, R)` with `R` in `Q*` failing the comparability check.
    pub fn comparability_violations(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (q, s) in self.star.iter().enumerate() {
            for &r in s {
                if !self.diam_comparability_check(q, r) {
                    out.push((q, r));
                }
            }
        }
        out
    }

    pub fn whitney_violations(&self) -> Vec<WhitneyViolation> {
        let bound = self.comparability_bound;
        self.cubes
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_singleton())
            .filter(|(_, c)| {
                c.diam > c.dist_y * (1.0 + REL_SLACK)
                    || c.dist_y > bound * c.diam * (1.0 + REL_SLACK)
            })
            .map(|(q, c)| WhitneyViolation {
                cube: q,
                diam: c.diam,
                dist_y: c.dist_y,
                bound,
            })
            .collect()
    }

    /// Pairs where `R in Q*` but `Q not in R*`.
    pub fn star_symmetry_violations(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (q, s) in self.star.iter().enumerate() {
            for &r in s {
                if self.star[r].binary_search(&q).is_err() {
                    out.push((q, r));
                }
            }
        }
        out
    }

    /// Cubes whose stored `diam` or `dist_y` disagree with the space.
    pub fn metadata_violations(&self, space: &FiniteMetricSpace) -> Vec<usize> {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs());
        self.cubes
            .iter()
            .enumerate()
            .filter(|(_, c)| {
                let diam = space.set_diameter(&c.members);
                let dy = c
                    .members
                    .iter()
                    .map(|&p| space.dist_to_set(p, &self.y))
                    .fold(f64::INFINITY, f64::min);
                !close(diam, c.diam) || !close(dy, c.dist_y)
            })
            .map(|(q, _)| q)
            .collect()
    }

    /// Largest number of sets `Q**` containing a single point.
    pub fn overlap_number(&self) -> usize {
        let mut count = vec![0usize; self.n_points];
        for s in &self.star2 {
            for &r in s {
                for &p in &self.cubes[r].members {
                    count[p] += 1;
                }
            }
        }
        count.into_iter().max().unwrap_or(0)
    }

    pub fn max_star2_len(&self) -> usize {
        self.star2.iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// Cutoff data of one cube: `phi_Q` on the points of `Q**` (zero elsewhere).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cutoff {
    pub star_points: Vec<usize>,
    pub star2_points: Vec<usize>,
    /// `dist(Q*, X \ Q**)`; infinite when `Q**` is all of `X`.
    #[serde(with = "crate::io::ext_f64")]
    pub denom: f64,
    /// `values[k] = phi_Q(star2_points[k])`.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffFamily {
    pub cutoffs: Vec<Cutoff>,
    /// `max diam(Q) / dist(Q*, X \ Q**)` over non-singleton cubes, so that
    /// each `phi_Q` is `C / diam(Q)`-Lipschitz.
    pub lipschitz_constant: f64,
}

/// The cutoff of one cube from its `Q*` and `Q**` point sets:
/// `phi_Q(x) = min(1, dist(x, X \ Q**) / dist(Q*, X \ Q**))`.
pub fn cutoff_for(space: &FiniteMetricSpace, star_points: Vec<usize>, star2_points: Vec<usize>) -> Cutoff {
    let mut inside = vec![false; space.len()];
    for &p in &star2_points {
        inside[p] = true;
    }
    let outside: Vec<usize> = (0..space.len()).filter(|&p| !inside[p]).collect();
    let denom = space.set_dist(&star_points, &outside);
    let values = star2_points
        .iter()
        .map(|&p| {
            if outside.is_empty() {
                1.0
            } else {
                (space.dist_to_set(p, &outside) / denom).min(1.0)
            }
        })
        .collect();
    Cutoff {
        star_points,
        star2_points,
        denom,
        values,
    }
}

pub fn build_cutoffs(decomp: &WhitneyDecomposition, space: &FiniteMetricSpace) -> CutoffFamily {
    let mut constant: f64 = 0.0;
    let cutoffs = (0..decomp.len())
        .map(|q| {
            let c = cutoff_for(space, decomp.star_points(q), decomp.star2_points(q));
            let diam = decomp.cubes[q].diam;
            if diam > 0.0 && c.denom.is_finite() {
                constant = constant.max(diam / c.denom);
            }
            c
        })
        .collect();
    CutoffFamily {
        cutoffs,
        lipschitz_constant: constant,
    }
}

impl CutoffFamily {
    pub fn eval(&self, q: usize, x: usize) -> f64 {
        let c = &self.cutoffs[q];
        c.star2_points
            .binary_search(&x)
            .map_or(0.0, |k| c.values[k])
    }

    /// Witnesses `(Q, x, y)` of `|phi(x) - phi(y)| > d(x, y) / denom`.
    pub fn lipschitz_violations(&self, space: &FiniteMetricSpace) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for (q, c) in self.cutoffs.iter().enumerate() {
            if !c.denom.is_finite() {
                continue;
            }
            for (k, &x) in c.star2_points.iter().enumerate() {
                let fx = c.values[k];
                for y in 0..space.len() {
                    let gap = (fx - self.eval(q, y)).abs();
                    if gap > space.dist(x, y) / c.denom * (1.0 + 1e-9) + 1e-15 {
                        out.push((q, x, y));
                    }
                }
            }
        }
        out
    }
}

/// A coloring `K(Q) in 1..=count` of the selected cubes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coloring {
    pub rho: f64,
    pub colors: Vec<usize>,
    pub count: usize,
    /// Largest Whitney ball cardinality `|B_W(Q, rho)|`.
    pub m_ball: usize,
}

fn neighbors(decomp: &WhitneyDecomposition, rho: f64) -> Vec<Vec<usize>> {
    let m = decomp.len();
    (0..m)
        .map(|q| {
            (0..m)
                .filter(|&r| r != q && decomp.whitney_distance_lossy(q, r) < rho)
                .collect()
        })
        .collect()
}

/// Greedy coloring in cube order. A cube avoids the colors of every cube
/// within Whitney distance `rho` and of every cube within `rho` of such a
/// neighbor, so at most `m(m - 1)` colors are ever excluded.
pub fn color_cubes(decomp: &WhitneyDecomposition, rho: f64) -> Result<Coloring> {
    if !(rho > 0.0) {
        return Err(Error::InvalidParameter {
            name: "rho",
            value: rho,
            reason: "must be positive",
        });
    }
    let m = decomp.len();
    let adj = neighbors(decomp, rho);
    let m_ball = adj.iter().map(|a| a.len() + 1).max().unwrap_or(0);
    // seen[q]: colors already placed on q or on a neighbor of q
    let mut seen: Vec<Vec<u64>> = vec![Vec::new(); m];
    let mut colors = vec![0usize; m];
    let mut scratch: Vec<u64> = Vec::new();
    for q in 0..m {
        scratch.clear();
        for r in adj[q].iter().chain(std::iter::once(&q)) {
            let w = &seen[*r];
            if w.len() > scratch.len() {
                scratch.resize(w.len(), 0);
            }
            for (s, x) in scratch.iter_mut().zip(w) {
                *s |= *x;
            }
        }
        scratch.push(0);
        let c = scratch
            .iter()
            .enumerate()
            .find(|(_, w)| **w != u64::MAX)
            .map(|(i, w)| i * 64 + (!*w).trailing_zeros() as usize)
            .expect("a free color");
        colors[q] = c + 1;
        for &r in adj[q].iter().chain(std::iter::once(&q)) {
            if c / 64 >= seen[r].len() {
                seen[r].resize(c / 64 + 1, 0);
            }
            seen[r][c / 64] |= 1 << (c % 64);
        }
    }
    let count = colors.iter().copied().max().unwrap_or(0);
    Ok(Coloring {
        rho,
        colors,
        count,
        m_ball,
    })
}

impl Coloring {
    /// Wrap externally supplied colors (1-based) after a range check.
    pub fn from_colors(
        decomp: &WhitneyDecomposition,
        colors: Vec<usize>,
        count: usize,
        rho: f64,
    ) -> Result<Self> {
        if colors.len() != decomp.len() {
            return Err(Error::MapShape(colors.len(), decomp.len()));
        }
        if let Some((cube, &color)) = colors
            .iter()
            .enumerate()
            .find(|(_, &c)| c == 0 || c > count)
        {
            return Err(Error::ColorOutOfRange { cube, color, count });
        }
        Ok(Coloring {
            rho,
            colors,
            count,
            m_ball: decomp.max_ball_cardinality(rho),
        })
    }

    /// Same-color pairs at Whitney distance below `rho`.
    pub fn violations(&self, decomp: &WhitneyDecomposition) -> Vec<(usize, usize)> {
        let m = decomp.len();
        let mut out = Vec::new();
        for q in 0..m {
            for r in (q + 1)..m {
                if self.colors[q] == self.colors[r]
                    && decomp.whitney_distance_lossy(q, r) < self.rho
                {
                    out.push((q, r));
                }
            }
        }
        out
    }
}
