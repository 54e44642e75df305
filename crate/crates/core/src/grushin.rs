//! The Grushin plane `ds^2 = dx^2 + dy^2 / x^2`: analytic distance bounds,
//! dilations, a shortest-path distance oracle on an anisotropic grid, the
//! dyadic Whitney mesh and chart-based local embeddings.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lipschitz::{distortion_with, DistortionReport};
use crate::metric::{euclid, greedy_net_on, FiniteMetricSpace};

/// Relative bracket tolerance of the oracle at the default resolution.
pub const DEFAULT_TOL: f64 = 0.1;

/// Largest ball count accepted when covering a halo `Q**`.
pub const DEFAULT_BALL_BUDGET: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrushinPoint {
    pub x: f64,
    pub y: f64,
}

impl GrushinPoint {
    pub fn new(x: f64, y: f64) -> Self {
        GrushinPoint { x, y }
    }
}

/// `delta_lambda(x, y) = (lambda x, lambda^2 y)`.
pub fn dilate(p: GrushinPoint, lambda: f64) -> Result<GrushinPoint> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "lambda",
            value: lambda,
            reason: "must be positive",
        });
    }
    Ok(GrushinPoint::new(lambda * p.x, lambda * lambda * p.y))
}

/// Lower and upper estimates of the cc-distance.
pub fn cc_bounds(p: GrushinPoint, q: GrushinPoint) -> (f64, f64) {
    let dx = (p.x - q.x).abs();
    let dy = (p.y - q.y).abs();
    let m = p.x.abs().min(q.x.abs());
    let vertical = if dy == 0.0 { 0.0 } else { dy / (m * m + 4.0 * dy).sqrt() };
    (0.5 * (dx + vertical), 4.0 * (dx + dy.sqrt()))
}

/// The horizontal segment to the axis is a shortest path.
pub fn dist_to_axis(p: GrushinPoint) -> f64 {
    p.x.abs()
}

#[derive(Clone, Copy, PartialEq)]
struct Key(f64);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Node lattice over a rectangle with `nx` by `ny` cells and 8-neighbour
/// edges of length `sqrt(dx^2 + dy^2 / x_mid^2)`.
///
/// A node column on `x = 0` has no vertical edges; its nodes connect through
/// diagonal edges, whose midpoints lie off the axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrushinGrid {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
    pub nx: usize,
    pub ny: usize,
}

const STENCIL: [(i64, i64); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

impl GrushinGrid {
    pub fn new(window: [f64; 4], nx: usize, ny: usize) -> Result<Self> {
        let [xmin, xmax, ymin, ymax] = window;
        if !(xmin < xmax && ymin < ymax) || !window.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidGrid(format!("empty or non-finite window {window:?}")));
        }
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidGrid("grid needs at least one cell per axis".into()));
        }
        Ok(GrushinGrid { xmin, xmax, ymin, ymax, nx, ny })
    }

    pub fn cols(&self) -> usize {
        self.nx + 1
    }

    pub fn rows(&self) -> usize {
        self.ny + 1
    }

    pub fn n_nodes(&self) -> usize {
        self.cols() * self.rows()
    }

    pub fn hx(&self) -> f64 {
        (self.xmax - self.xmin) / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        (self.ymax - self.ymin) / self.ny as f64
    }

    pub fn node_id(&self, ix: usize, iy: usize) -> usize {
        iy * self.cols() + ix
    }

    pub fn node_x(&self, ix: usize) -> f64 {
        let x = self.xmin + ix as f64 * self.hx();
        if x.abs() < 1e-9 * self.hx() {
            0.0
        } else {
            x
        }
    }

    pub fn node_y(&self, iy: usize) -> f64 {
        self.ymin + iy as f64 * self.hy()
    }

    pub fn node(&self, id: usize) -> GrushinPoint {
        GrushinPoint::new(self.node_x(id % self.cols()), self.node_y(id / self.cols()))
    }

    /// Nearest node, clamped to the window.
    pub fn snap(&self, p: GrushinPoint) -> usize {
        let ix = ((p.x - self.xmin) / self.hx()).round().clamp(0.0, self.nx as f64) as usize;
        let iy = ((p.y - self.ymin) / self.hy()).round().clamp(0.0, self.ny as f64) as usize;
        self.node_id(ix, iy)
    }

    fn edge(&self, ax: usize, ay: usize, bx: usize, by: usize) -> Option<f64> {
        let (xa, xb) = (self.node_x(ax), self.node_x(bx));
        let dx = xb - xa;
        let dy = self.node_y(by) - self.node_y(ay);
        if dy == 0.0 {
            return Some(dx.abs());
        }
        let xm = 0.5 * (xa + xb);
        if xm == 0.0 {
            return None;
        }
        Some((dx * dx + dy * dy / (xm * xm)).sqrt())
    }

    /// Shortest-path distances from `source` to every node; stops early once
    /// every node of `targets` is settled (all nodes when `targets` is empty).
    pub fn shortest_from(&self, source: usize, targets: &[usize]) -> Vec<f64> {
        let n = self.n_nodes();
        let (cols, rows) = (self.cols() as i64, self.rows() as i64);
        let mut dist = vec![f64::INFINITY; n];
        let mut done = vec![false; n];
        let mut wanted = vec![false; n];
        for &t in targets {
            wanted[t] = true;
        }
        let mut remaining = targets.iter().filter(|&&t| t < n).count();
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(Reverse((Key(0.0), source)));
        while let Some(Reverse((Key(d), u))) = heap.pop() {
            if done[u] {
                continue;
            }
            done[u] = true;
            if wanted[u] {
                wanted[u] = false;
                remaining -= 1;
                if remaining == 0 {
                    break;
                }
            }
            let (ux, uy) = ((u % cols as usize) as i64, (u / cols as usize) as i64);
            for (sx, sy) in STENCIL {
                let (vx, vy) = (ux + sx, uy + sy);
                if vx < 0 || vy < 0 || vx >= cols || vy >= rows {
                    continue;
                }
                let v = (vy * cols + vx) as usize;
                if done[v] {
                    continue;
                }
                if let Some(w) = self.edge(ux as usize, uy as usize, vx as usize, vy as usize) {
                    let nd = d + w;
                    if nd < dist[v] {
                        dist[v] = nd;
                        heap.push(Reverse((Key(nd), v)));
                    }
                }
            }
        }
        dist
    }

    /// One Dijkstra per source, reading off the distances to `targets`.
    pub fn distance_table(&self, sources: &[usize], targets: &[usize]) -> Result<Vec<Vec<f64>>> {
        sources
            .iter()
            .map(|&s| {
                let d = self.shortest_from(s, targets);
                targets
                    .iter()
                    .map(|&t| {
                        if d[t].is_finite() {
                            Ok(d[t])
                        } else {
                            Err(Error::Disconnected(s, t))
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// Oracle distance with the analytic bracket at the snapped nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleDistance {
    pub from: GrushinPoint,
    pub to: GrushinPoint,
    pub dist: f64,
    pub lower: f64,
    pub upper: f64,
    pub tol: f64,
    pub warning: Option<String>,
}

impl OracleDistance {
    pub fn bracketed(&self) -> bool {
        self.warning.is_none()
    }
}

/// Snap both points to the grid and run a shortest-path search.
pub fn cc_dist_oracle(grid: &GrushinGrid, p: GrushinPoint, q: GrushinPoint, tol: f64) -> Result<OracleDistance> {
    let (a, b) = (grid.snap(p), grid.snap(q));
    let d = grid.shortest_from(a, &[b])[b];
    if !d.is_finite() {
        return Err(Error::Disconnected(a, b));
    }
    let (from, to) = (grid.node(a), grid.node(b));
    let (lower, upper) = cc_bounds(from, to);
    let warning = if d < lower * (1.0 - tol) || d > upper * (1.0 + tol) {
        Some(format!("oracle {d} outside [{lower}, {upper}] at tolerance {tol}"))
    } else {
        None
    };
    Ok(OracleDistance { from, to, dist: d, lower, upper, tol, warning })
}

/// Finite Grushin sample: the nodes of a sample grid with distances computed
/// on a grid refined `refine` times.
#[derive(Debug, Clone)]
pub struct GrushinSample {
    pub grid: GrushinGrid,
    pub refine: usize,
    pub points: Vec<GrushinPoint>,
    pub space: FiniteMetricSpace,
}

impl GrushinSample {
    pub fn build(window: [f64; 4], nx: usize, ny: usize, refine: usize) -> Result<Self> {
        if refine == 0 {
            return Err(Error::InvalidGrid("refinement factor must be at least 1".into()));
        }
        let grid = GrushinGrid::new(window, nx, ny)?;
        let fine = GrushinGrid::new(window, nx * refine, ny * refine)?;
        let mut ids = Vec::with_capacity(grid.n_nodes());
        let mut labels = Vec::with_capacity(grid.n_nodes());
        for iy in 0..grid.rows() {
            for ix in 0..grid.cols() {
                ids.push(fine.node_id(ix * refine, iy * refine));
                labels.push(format!("x{ix}y{iy}"));
            }
        }
        let points: Vec<GrushinPoint> = ids.iter().map(|&i| fine.node(i)).collect();
        let table = fine.distance_table(&ids, &ids)?;
        let n = ids.len();
        let mut matrix = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                // Dijkstra sums in different orders; take the smaller value.
                let d = table[i][j].min(table[j][i]);
                matrix[i * n + j] = d;
                matrix[j * n + i] = d;
            }
        }
        let space = FiniteMetricSpace::from_metric_matrix_unchecked(labels, matrix)?;
        Ok(GrushinSample { grid, refine, points, space })
    }

    /// Points on the axis `x = 0`.
    pub fn axis(&self) -> Vec<usize> {
        (0..self.points.len()).filter(|&i| self.points[i].x == 0.0).collect()
    }

    pub fn coords(&self) -> Vec<Vec<f64>> {
        self.points.iter().map(|p| vec![p.x, p.y]).collect()
    }
}

/// Grushin space on arbitrary points: distances on the grid with `nx` cells
/// per unit of the bounding box side, between the nodes nearest each point.
pub fn grushin_space(labels: Vec<String>, points: &[GrushinPoint], nx: usize) -> Result<FiniteMetricSpace> {
    if points.len() != labels.len() {
        return Err(Error::MapShape(points.len(), labels.len()));
    }
    let fold = |f: fn(f64, f64) -> f64, init: f64, g: fn(&GrushinPoint) -> f64| points.iter().map(g).fold(init, f);
    let (x0, x1) = (fold(f64::min, f64::INFINITY, |p| p.x), fold(f64::max, f64::NEG_INFINITY, |p| p.x));
    let (y0, y1) = (fold(f64::min, f64::INFINITY, |p| p.y), fold(f64::max, f64::NEG_INFINITY, |p| p.y));
    let (w, h) = ((x1 - x0).max(1e-12), (y1 - y0).max(1e-12));
    let side = w.max(h);
    let cols = ((nx as f64 * w / side).round() as usize).max(1);
    let rows = ((nx as f64 * h / side).round() as usize).max(1);
    let grid = GrushinGrid::new([x0, x0 + w, y0, y0 + h], cols, rows)?;
    let ids: Vec<usize> = points.iter().map(|&p| grid.snap(p)).collect();
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by_key(|&i| ids[i]);
    if let Some(w) = order.windows(2).find(|w| ids[w[0]] == ids[w[1]]) {
        return Err(Error::InvalidGrid(format!(
            "points {} and {} snap to the same node; increase nx",
            labels[w[0]], labels[w[1]]
        )));
    }
    let table = grid.distance_table(&ids, &ids)?;
    let n = ids.len();
    let mut matrix = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = table[i][j].min(table[j][i]);
            matrix[i * n + j] = d;
            matrix[j * n + i] = d;
        }
    }
    FiniteMetricSpace::from_metric_matrix_unchecked(labels, matrix)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshCube {
    pub j: i32,
    /// Lattice indices: the cube is `[col, col + 1] * 2^-j` by
    /// `[row, row + 1] * 2^-2j`.
    pub col: i64,
    pub row: i64,
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
    /// Exact cc-distance to the axis, `min |x|` over the cube.
    pub dist_axis: f64,
    /// Analytic upper and lower estimates of the cc-diameter.
    pub diam_upper: f64,
    pub diam_lower: f64,
}

impl MeshCube {
    fn new(j: i32, col: i64, row: i64) -> Self {
        let w = 2f64.powi(-j);
        let h = w * w;
        let (x0, x1) = (col as f64 * w, (col + 1) as f64 * w);
        let (y0, y1) = (row as f64 * h, (row + 1) as f64 * h);
        let dist_axis = if col >= 0 { x0 } else { -x1 };
        let corner = |x: f64, y: f64| GrushinPoint::new(x, y);
        let (_, diam_upper) = cc_bounds(corner(x0, y0), corner(x1, y1));
        let near = if col >= 0 { x0 } else { x1 };
        let far = if col >= 0 { x1 } else { x0 };
        // lower estimate: the larger of the horizontal side and the side
        // along the axis-nearest edge
        let diam_lower = cc_bounds(corner(x0, y0), corner(x1, y0))
            .0
            .max(cc_bounds(corner(near, y0), corner(near, y1)).0)
            .max(cc_bounds(corner(far, y0), corner(near, y1)).0);
        MeshCube { j, col, row, x0, x1, y0, y1, dist_axis, diam_upper, diam_lower }
    }

    fn touches(&self, o: &MeshCube) -> bool {
        let eps = 1e-12 * (self.x1 - self.x0).min(o.x1 - o.x0);
        let epsy = 1e-12 * (self.y1 - self.y0).min(o.y1 - o.y0);
        self.x0 <= o.x1 + eps && o.x0 <= self.x1 + eps && self.y0 <= o.y1 + epsy && o.y0 <= self.y1 + epsy
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }
}

/// Dyadic Whitney mesh of the plane minus the axis, clipped to a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrushinWhitneyMesh {
    pub j_min: i32,
    pub j_max: i32,
    pub window: [f64; 4],
    pub cubes: Vec<MeshCube>,
    /// Largest `diam_upper / dist_axis` over the mesh.
    pub max_upper_ratio: f64,
    /// Smallest `diam_lower / dist_axis` over the mesh.
    pub min_lower_ratio: f64,
}

fn layer_candidate(col: i64) -> bool {
    // analytic distance in [2^-j, 8 * 2^-j], diam_upper = 8 * 2^-j
    let m = if col >= 0 { col } else { -col - 1 };
    (1..=8).contains(&m)
}

/// Cubes of side `2^-j` by `2^-2j` with `2^-j <= |x| <= 8 * 2^-j`, kept only
/// when no coarser candidate contains them.
pub fn build_grushin_mesh(j_min: i32, j_max: i32, window: [f64; 4]) -> Result<GrushinWhitneyMesh> {
    if j_min > j_max {
        return Err(Error::EmptyLevelRange { k_min: j_min, k_max: j_max });
    }
    let [xmin, xmax, ymin, ymax] = window;
    if !(xmin < xmax && ymin < ymax) {
        return Err(Error::InvalidGrid(format!("empty window {window:?}")));
    }
    let inside = |c: &MeshCube| c.x0 >= xmin && c.x1 <= xmax && c.y0 >= ymin && c.y1 <= ymax;
    let mut cubes = Vec::new();
    for j in j_min..=j_max {
        let w = 2f64.powi(-j);
        let h = w * w;
        let cols = (xmin / w).floor() as i64..(xmax / w).ceil() as i64;
        for col in cols.filter(|&c| layer_candidate(c)) {
            for row in (ymin / h).floor() as i64..(ymax / h).ceil() as i64 {
                let c = MeshCube::new(j, col, row);
                if !inside(&c) {
                    continue;
                }
                let covered = (j_min..j).any(|jp| {
                    let pc = col.div_euclid(1 << (j - jp));
                    let pr = row.div_euclid(1 << (2 * (j - jp)));
                    layer_candidate(pc) && inside(&MeshCube::new(jp, pc, pr))
                });
                if !covered {
                    cubes.push(c);
                }
            }
        }
    }
    if cubes.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let max_upper_ratio = cubes.iter().map(|c| c.diam_upper / c.dist_axis).fold(0.0, f64::max);
    let min_lower_ratio = cubes
        .iter()
        .map(|c| c.diam_lower / c.dist_axis)
        .fold(f64::INFINITY, f64::min);
    Ok(GrushinWhitneyMesh { j_min, j_max, window, cubes, max_upper_ratio, min_lower_ratio })
}

impl GrushinWhitneyMesh {
    /// Cubes failing `dist <= diam <= 8 dist` with the upper diameter estimate.
    pub fn inequality_violations(&self) -> Vec<usize> {
        (0..self.cubes.len())
            .filter(|&i| {
                let c = &self.cubes[i];
                c.dist_axis > c.diam_upper || c.diam_upper > 8.0 * c.dist_axis * (1.0 + 1e-12)
            })
            .collect()
    }

    /// Geometric overlaps (positive-area intersections) between cubes.
    pub fn overlaps(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for a in 0..self.cubes.len() {
            for b in (a + 1)..self.cubes.len() {
                let (p, q) = (&self.cubes[a], &self.cubes[b]);
                let ox = p.x1.min(q.x1) - p.x0.max(q.x0);
                let oy = p.y1.min(q.y1) - p.y0.max(q.y0);
                if ox > 1e-12 * p.width().min(q.width()) && oy > 1e-12 * p.height().min(q.height()) {
                    out.push((a, b));
                }
            }
        }
        out
    }

    /// Cubes touching cube `q` (including `q`).
    pub fn star(&self, q: usize) -> Vec<usize> {
        (0..self.cubes.len())
            .filter(|&r| self.cubes[q].touches(&self.cubes[r]))
            .collect()
    }

    pub fn star2(&self, q: usize) -> Vec<usize> {
        let mut s: Vec<usize> = self.star(q).into_iter().flat_map(|r| self.star(r)).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn find(&self, j: i32, col: i64, row: i64) -> Option<usize> {
        self.cubes
            .iter()
            .position(|c| c.j == j && c.col == col && c.row == row)
    }
}

/// `h_Q` on the points of a halo: `4N` coordinates (`u_i phi_i` then
/// `v_i phi_i`) for the `N` balls covering the halo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartPatch {
    pub radius: f64,
    /// Ball centers (point ids of the halo).
    pub centers: Vec<usize>,
    /// Shift along the first chart axis so that `|phi_i| >= radius` on `5 B_i`.
    pub shifts: Vec<f64>,
    /// Factor applied to every value (1 until [`ChartPatch::balance`]).
    pub scale: f64,
    pub points: Vec<usize>,
    pub values: Vec<Vec<f64>>,
}

impl ChartPatch {
    pub fn dim(&self) -> usize {
        4 * self.centers.len()
    }

    /// Rescale by `sqrt(contraction / expansion)` measured on `subset`, so
    /// both constants become `sqrt(expansion * contraction)`. Returns the
    /// report measured before rescaling.
    pub fn balance(&mut self, space: &FiniteMetricSpace, subset: &[usize]) -> DistortionReport {
        let report = patch_distortion(space, self, subset);
        if report.expansion > 0.0 && report.contraction.is_finite() && report.contraction > 0.0 {
            let s = (report.contraction / report.expansion).sqrt();
            self.scale *= s;
            for v in &mut self.values {
                for x in v.iter_mut() {
                    *x *= s;
                }
            }
        }
        report
    }
}

fn tent(d: f64, full: f64, zero: f64) -> f64 {
    ((zero - d) / (zero - full)).clamp(0.0, 1.0)
}

/// Chart embedding of the halo `points` of a cube of diameter `radius`.
///
/// Balls come from a greedy net at scale `radius`; chart `i` is
/// `(x - x_i, (y - y_i) / x_i)` shifted along its first axis; `u_i` is a tent
/// equal to 1 on `B_i` and 0 off `2 B_i`, `v_i` is 1 on `4 B_i` and 0 off `5 B_i`.
pub fn chart_patch(
    space: &FiniteMetricSpace,
    coords: &[GrushinPoint],
    points: &[usize],
    radius: f64,
    budget: usize,
    cube: usize,
) -> Result<ChartPatch> {
    if radius <= 0.0 {
        return Ok(ChartPatch {
            radius,
            centers: Vec::new(),
            shifts: Vec::new(),
            scale: 1.0,
            points: points.to_vec(),
            values: vec![Vec::new(); points.len()],
        });
    }
    let net = greedy_net_on(space, points, points, radius)?;
    let centers = net.centers;
    if centers.len() > budget {
        return Err(Error::CoveringBudget { cube, needed: centers.len(), budget });
    }
    if let Some(&c) = centers.iter().find(|&&c| coords[c].x == 0.0) {
        return Err(Error::InvalidGrid(format!("chart center {} lies on the axis", space.label(c))));
    }
    let chart = |c: usize, p: usize| -> [f64; 2] {
        let (a, b) = (coords[c], coords[p]);
        [b.x - a.x, (b.y - a.y) / a.x]
    };
    let shifts: Vec<f64> = centers
        .iter()
        .map(|&c| {
            let far = points
                .iter()
                .filter(|&&p| space.dist(c, p) <= 5.0 * radius)
                .map(|&p| {
                    let v = chart(c, p);
                    (v[0] * v[0] + v[1] * v[1]).sqrt()
                })
                .fold(0.0, f64::max);
            radius + far
        })
        .collect();
    let n = centers.len();
    let values = points
        .iter()
        .map(|&p| {
            let mut v = vec![0.0; 4 * n];
            for (i, &c) in centers.iter().enumerate() {
                let d = space.dist(c, p);
                let u = tent(d, radius, 2.0 * radius);
                let w = tent(d, 4.0 * radius, 5.0 * radius);
                if u == 0.0 && w == 0.0 {
                    continue;
                }
                let mut phi = chart(c, p);
                phi[0] += shifts[i];
                v[2 * i] = u * phi[0];
                v[2 * i + 1] = u * phi[1];
                v[2 * n + 2 * i] = w * phi[0];
                v[2 * n + 2 * i + 1] = w * phi[1];
            }
            v
        })
        .collect();
    Ok(ChartPatch { radius, centers, shifts, scale: 1.0, points: points.to_vec(), values })
}

/// Distortion of a patch restricted to `subset` (a subset of its points).
pub fn patch_distortion(space: &FiniteMetricSpace, patch: &ChartPatch, subset: &[usize]) -> DistortionReport {
    let rows: Vec<&Vec<f64>> = subset
        .iter()
        .map(|p| &patch.values[patch.points.binary_search(p).expect("subset of the halo")])
        .collect();
    distortion_with(space, subset, |i, j| euclid(rows[i], rows[j]))
}

/// Chart embedding of one mesh cube, measured on a local sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshChart {
    pub cube: usize,
    pub n_balls: usize,
    pub n_points: usize,
    /// Bi-Lipschitz constant on the sample of `Q*` after balancing:
    /// `sqrt(expansion * contraction)` of the unscaled chart map.
    pub constant: f64,
    pub scale: f64,
    /// Report of the unscaled chart map.
    pub report: DistortionReport,
}

/// Build `h_Q` for a mesh cube: sample each cube of `Q**` at its corners and
/// center, compute distances on a grid with spacing `w / 8` by `h / 8`
/// (`w`, `h` the sides of `Q`) over the bounding box of `Q**`, and measure
/// the chart map on the sample of `Q*`.
pub fn chart_local_embedding(mesh: &GrushinWhitneyMesh, q: usize, budget: usize) -> Result<MeshChart> {
    let star = mesh.star(q);
    let star2 = mesh.star2(q);
    let cq = &mesh.cubes[q];
    let bx0 = star2.iter().map(|&r| mesh.cubes[r].x0).fold(f64::INFINITY, f64::min);
    let bx1 = star2.iter().map(|&r| mesh.cubes[r].x1).fold(f64::NEG_INFINITY, f64::max);
    let by0 = star2.iter().map(|&r| mesh.cubes[r].y0).fold(f64::INFINITY, f64::min);
    let by1 = star2.iter().map(|&r| mesh.cubes[r].y1).fold(f64::NEG_INFINITY, f64::max);
    let (hx, hy) = (cq.width() / 8.0, cq.height() / 8.0);
    let nx = ((bx1 - bx0) / hx).round().max(1.0) as usize;
    let ny = ((by1 - by0) / hy).round().max(1.0) as usize;
    let grid = GrushinGrid::new([bx0, bx0 + nx as f64 * hx, by0, by0 + ny as f64 * hy], nx, ny)?;

    let sample = |cubes: &[usize]| -> Vec<usize> {
        let mut ids: Vec<usize> = cubes
            .iter()
            .flat_map(|&r| {
                let c = &mesh.cubes[r];
                let (xm, ym) = (0.5 * (c.x0 + c.x1), 0.5 * (c.y0 + c.y1));
                [(c.x0, c.y0), (c.x1, c.y0), (c.x0, c.y1), (c.x1, c.y1), (xm, ym)]
                    .map(|(x, y)| grid.snap(GrushinPoint::new(x, y)))
            })
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    };
    let halo_nodes = sample(&star2);
    let star_nodes = sample(&star);
    if halo_nodes.iter().any(|&i| grid.node(i).x == 0.0) {
        return Err(Error::InvalidGrid("mesh halo reaches the axis".into()));
    }
    let table = grid.distance_table(&halo_nodes, &halo_nodes)?;
    let n = halo_nodes.len();
    let mut matrix = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = table[i][j].min(table[j][i]);
            matrix[i * n + j] = d;
            matrix[j * n + i] = d;
        }
    }
    let labels = (0..n).map(|i| i.to_string()).collect();
    let space = FiniteMetricSpace::from_metric_matrix_unchecked(labels, matrix)?;
    let coords: Vec<GrushinPoint> = halo_nodes.iter().map(|&i| grid.node(i)).collect();
    let all: Vec<usize> = (0..n).collect();
    let star_local: Vec<usize> = star_nodes
        .iter()
        .map(|s| halo_nodes.binary_search(s).expect("star inside halo"))
        .collect();
    let radius = space.set_diameter(
        &sample(&[q])
            .iter()
            .map(|s| halo_nodes.binary_search(s).unwrap())
            .collect::<Vec<_>>(),
    );
    let mut patch = chart_patch(&space, &coords, &all, radius, budget, q)?;
    let report = patch.balance(&space, &star_local);
    Ok(MeshChart {
        cube: q,
        n_balls: patch.centers.len(),
        n_points: n,
        constant: (report.expansion * report.contraction).sqrt(),
        scale: patch.scale,
        report,
    })
}
