//! Christ dyadic cubes on a finite metric space, built from a cascade of
//! nested greedy nets.
//!
//! Level `k` has scale `delta^k`; larger `k` is finer. The finest level is a
//! greedy net of the domain, and the centers of level `k` are chosen greedily
//! among the centers of level `k + 1`. Every finer cube attaches to the
//! nearest coarser center, so members accumulate transitively and the levels
//! nest exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::{greedy_net_on, nearest, FiniteMetricSpace};

/// Index of a cube inside [`CubeTree::cubes`].
pub type CubeId = usize;

const NO_CUBE: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cube {
    pub id: CubeId,
    pub level: i32,
    /// Position within its level (cubes of a level are sorted by center).
    pub index: usize,
    pub center: usize,
    /// Member point ids, ascending.
    pub members: Vec<usize>,
    pub parent: Option<CubeId>,
    pub children: Vec<CubeId>,
    pub level_scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CubeTree {
    pub delta: f64,
    pub k_min: i32,
    pub k_max: i32,
    /// Points the tree partitions, ascending.
    pub domain: Vec<usize>,
    pub cubes: Vec<Cube>,
    /// `levels[k - k_min]` lists the cube ids of level `k`.
    pub levels: Vec<Vec<CubeId>>,
    pub a0_measured: f64,
    pub c1_measured: f64,
    /// `lookup[k - k_min][p]` is the level-`k` cube holding point `p`.
    #[serde(skip)]
    lookup: Vec<Vec<u32>>,
}

/// Level range covering a set: the coarsest level has `delta^k_min >= diam`
/// and the finest has `delta^k_max < min separation`, so it is all singletons.
pub fn auto_levels(space: &FiniteMetricSpace, domain: &[usize], delta: f64) -> (i32, i32) {
    if domain.len() < 2 {
        return (0, 0);
    }
    let sub = space.subspace(domain);
    let ln_d = delta.ln();
    let k_min = (sub.diameter().ln() / ln_d).floor() as i32;
    let mut k_max = (sub.min_separation().ln() / ln_d).floor() as i32 + 1;
    while delta.powi(k_max) >= sub.min_separation() {
        k_max += 1;
    }
    (k_min, k_max.max(k_min))
}

/// Cube tree on every point of the space.
pub fn build_cube_tree(
    space: &FiniteMetricSpace,
    delta: f64,
    k_min: i32,
    k_max: i32,
) -> Result<CubeTree> {
    let all: Vec<usize> = (0..space.len()).collect();
    build_cube_tree_on(space, &all, delta, k_min, k_max)
}

/// Cube tree partitioning only the points of `domain`.
pub fn build_cube_tree_on(
    space: &FiniteMetricSpace,
    domain: &[usize],
    delta: f64,
    k_min: i32,
    k_max: i32,
) -> Result<CubeTree> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter {
            name: "delta",
            value: delta,
            reason: "must lie in (0, 1)",
        });
    }
    if k_min > k_max {
        return Err(Error::EmptyLevelRange { k_min, k_max });
    }
    let mut domain = domain.to_vec();
    domain.sort_unstable();
    domain.dedup();
    if domain.is_empty() {
        return Err(Error::EmptyOmega);
    }

    let n_levels = (k_max - k_min + 1) as usize;
    // Built finest first; `centers_by_level[i]` is level k_max - i.
    let mut centers_by_level: Vec<Vec<usize>> = Vec::with_capacity(n_levels);
    // `attach[i][c]` maps each center of level k_max - i to its parent center.
    let mut attach: Vec<Vec<(usize, usize)>> = Vec::with_capacity(n_levels);

    let finest = greedy_net_on(space, &domain, &domain, delta.powi(k_max))?;
    let point_to_finest: Vec<(usize, usize)> = finest
        .domain
        .iter()
        .copied()
        .zip(finest.assignment.iter().copied())
        .collect();
    centers_by_level.push(finest.centers);

    for k in (k_min..k_max).rev() {
        let finer = centers_by_level.last().unwrap();
        let net = greedy_net_on(space, finer, finer, delta.powi(k))?;
        let links: Vec<(usize, usize)> = finer
            .iter()
            .map(|&c| (c, nearest(space, c, &net.centers)))
            .collect();
        attach.push(links);
        centers_by_level.push(net.centers);
    }

    // Assemble cubes coarse to fine so that ids increase with level.
    let mut cubes: Vec<Cube> = Vec::new();
    let mut levels: Vec<Vec<CubeId>> = Vec::with_capacity(n_levels);
    let mut center_cube: Vec<Vec<(usize, CubeId)>> = Vec::with_capacity(n_levels);
    for li in 0..n_levels {
        let k = k_min + li as i32;
        let centers = &centers_by_level[n_levels - 1 - li];
        let mut ids = Vec::with_capacity(centers.len());
        let mut map = Vec::with_capacity(centers.len());
        for (index, &z) in centers.iter().enumerate() {
            let id = cubes.len();
            cubes.push(Cube {
                id,
                level: k,
                index,
                center: z,
                members: Vec::new(),
                parent: None,
                children: Vec::new(),
                level_scale: delta.powi(k),
            });
            ids.push(id);
            map.push((z, id));
        }
        levels.push(ids);
        center_cube.push(map);
    }
    let find = |map: &[(usize, CubeId)], z: usize| -> CubeId {
        map[map.binary_search_by_key(&z, |e| e.0).expect("center present")].1
    };

    // Parent links: attach[i] links level k_max - i to level k_max - i - 1.
    for (i, links) in attach.iter().enumerate() {
        let fine_li = n_levels - 1 - i;
        for &(c, p) in links {
            let child = find(&center_cube[fine_li], c);
            let parent = find(&center_cube[fine_li - 1], p);
            cubes[child].parent = Some(parent);
            cubes[parent].children.push(child);
        }
    }
    for cube in &mut cubes {
        cube.children.sort_unstable();
    }

    // Members: finest level from the net assignment, then upward.
    for &(p, z) in &point_to_finest {
        let id = find(&center_cube[n_levels - 1], z);
        cubes[id].members.push(p);
    }
    for li in (0..n_levels - 1).rev() {
        for &id in &levels[li] {
            let mut members: Vec<usize> = cubes[id]
                .children
                .iter()
                .flat_map(|&c| cubes[c].members.iter().copied())
                .collect();
            members.sort_unstable();
            cubes[id].members = members;
        }
    }

    let mut tree = CubeTree {
        delta,
        k_min,
        k_max,
        domain,
        cubes,
        levels,
        a0_measured: 1.0,
        c1_measured: 1.0,
        lookup: Vec::new(),
    };
    tree.reindex(space.len());
    let (a0, c1) = quasiball_constants(&tree, space);
    tree.a0_measured = a0;
    tree.c1_measured = c1;
    Ok(tree)
}

impl CubeTree {
    /// Rebuild the point-to-cube lookup (needed after deserialization).
    pub fn reindex(&mut self, n_points: usize) {
        self.lookup = self
            .levels
            .iter()
            .map(|ids| {
                let mut row = vec![NO_CUBE; n_points];
                for &id in ids {
                    for &p in &self.cubes[id].members {
                        if p < n_points {
                            row[p] = id as u32;
                        }
                    }
                }
                row
            })
            .collect();
    }

    pub fn level(&self, k: i32) -> &[CubeId] {
        &self.levels[(k - self.k_min) as usize]
    }

    pub fn cube(&self, id: CubeId) -> &Cube {
        &self.cubes[id]
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    /// The level-`level` cube containing `point`.
    pub fn cube_containing(&self, point: usize, level: i32) -> Result<&Cube> {
        if level < self.k_min || level > self.k_max {
            return Err(Error::LevelOutOfRange {
                level,
                k_min: self.k_min,
                k_max: self.k_max,
            });
        }
        let li = (level - self.k_min) as usize;
        let id = match self.lookup.get(li).and_then(|row| row.get(point)) {
            Some(&id) if id != NO_CUBE => Some(id as usize),
            Some(_) => None,
            None => self.levels[li]
                .iter()
                .copied()
                .find(|&id| self.cubes[id].members.binary_search(&point).is_ok()),
        };
        id.map(|id| &self.cubes[id])
            .ok_or_else(|| Error::UnknownPoint(point.to_string()))
    }

    /// Exhaustive check of partition, nesting and parent/child structure.
    pub fn verify_axioms(&self) -> AxiomReport {
        let mut report = AxiomReport::default();
        let n = self.domain.len();
        for (li, ids) in self.levels.iter().enumerate() {
            let mut seen: Vec<usize> = ids
                .iter()
                .flat_map(|&id| self.cubes[id].members.iter().copied())
                .collect();
            let total = seen.len();
            seen.sort_unstable();
            seen.dedup();
            if total != n || seen != self.domain {
                report.partition_violations.push(self.k_min + li as i32);
            }
            for &id in ids {
                let c = &self.cubes[id];
                if c.members.is_empty() || c.members.binary_search(&c.center).is_err() {
                    report.structure_violations.push(id);
                }
            }
        }
        for c in &self.cubes {
            let top = c.level == self.k_min;
            let bottom = c.level == self.k_max;
            match c.parent {
                None if !top => report.parent_violations.push(c.id),
                Some(_) if top => report.parent_violations.push(c.id),
                Some(p) => {
                    let parent = &self.cubes[p];
                    if parent.level != c.level - 1
                        || !parent.children.contains(&c.id)
                        || !is_subset(&c.members, &parent.members)
                    {
                        report.nesting_violations.push((c.id, p));
                    }
                }
                None => {}
            }
            if !bottom {
                if c.children.is_empty() {
                    report.parent_violations.push(c.id);
                }
                let mut union: Vec<usize> = c
                    .children
                    .iter()
                    .flat_map(|&ch| self.cubes[ch].members.iter().copied())
                    .collect();
                union.sort_unstable();
                if union != c.members {
                    report.nesting_violations.push((c.id, c.id));
                }
            }
        }
        report
    }
}

fn is_subset(a: &[usize], b: &[usize]) -> bool {
    a.iter().all(|x| b.binary_search(x).is_ok())
}

/// Violations found by [`CubeTree::verify_axioms`]; empty means valid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AxiomReport {
    pub partition_violations: Vec<i32>,
    pub nesting_violations: Vec<(CubeId, CubeId)>,
    pub parent_violations: Vec<CubeId>,
    pub structure_violations: Vec<CubeId>,
}

impl AxiomReport {
    pub fn is_clean(&self) -> bool {
        self.partition_violations.is_empty()
            && self.nesting_violations.is_empty()
            && self.parent_violations.is_empty()
            && self.structure_violations.is_empty()
    }
}

/// Measured `(a0, C1)`: `C1` is the largest `d(center, member) / delta^k` and
/// `a0` the smallest `d(center, non-member) / delta^k` over cubes that have
/// non-members in the domain. Both are 1 when vacuous.
pub fn quasiball_constants(tree: &CubeTree, space: &FiniteMetricSpace) -> (f64, f64) {
    let mut a0 = f64::INFINITY;
    let mut c1: f64 = 0.0;
    for (li, ids) in tree.levels.iter().enumerate() {
        for &id in ids {
            let cube = &tree.cubes[id];
            let row = space.row(cube.center);
            let scale = cube.level_scale;
            for &p in &cube.members {
                c1 = c1.max(row[p] / scale);
            }
            if cube.members.len() < tree.domain.len() {
                let mut gap = f64::INFINITY;
                for &p in &tree.domain {
                    let other = match tree.lookup.get(li) {
                        Some(l) => l[p] as usize != id,
                        None => cube.members.binary_search(&p).is_err(),
                    };
                    if other {
                        gap = gap.min(row[p]);
                    }
                }
                a0 = a0.min(gap / scale);
            }
        }
    }
    let a0 = if a0.is_finite() { a0 } else { 1.0 };
    let c1 = if c1 > 0.0 { c1 } else { 1.0 };
    (a0, c1)
}
