//! Lipschitz maps on finite spaces: McShane extension, a multiscale snowflake
//! embedder, and exact pairwise distortion measurement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::{greedy_net, FiniteMetricSpace};
use crate::sparse::SparseVec;

/// Relative slack allowed for float round-off in Lipschitz checks.
pub const LIPSCHITZ_SLACK: f64 = 1e-9;

/// A map from a subset of a space into `R^dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzMap {
    /// Domain point ids, ascending.
    pub domain: Vec<usize>,
    /// `values[k]` is the image of `domain[k]`.
    pub values: Vec<Vec<f64>>,
    pub declared_constant: f64,
}

impl LipschitzMap {
    pub fn new(domain: Vec<usize>, values: Vec<Vec<f64>>, declared_constant: f64) -> Result<Self> {
        if domain.len() != values.len() {
            return Err(Error::MapShape(values.len(), domain.len()));
        }
        let dim = values.first().map_or(0, Vec::len);
        if values.iter().any(|v| v.len() != dim) {
            return Err(Error::Input("map values have unequal lengths".into()));
        }
        let mut pairs: Vec<(usize, Vec<f64>)> = domain.into_iter().zip(values).collect();
        pairs.sort_by_key(|p| p.0);
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Input("duplicate point in map domain".into()));
        }
        let (domain, values) = pairs.into_iter().unzip();
        Ok(Self {
            domain,
            values,
            declared_constant,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn value_of(&self, p: usize) -> Option<&[f64]> {
        self.domain
            .binary_search(&p)
            .ok()
            .map(|k| self.values[k].as_slice())
    }

    /// Largest `|f_i(a) - f_i(b)| / d(a, b)` over coordinates and pairs, with
    /// the coordinate and pair realizing it.
    pub fn coordinate_constant(&self, space: &FiniteMetricSpace) -> (f64, Option<(usize, usize, usize)>) {
        let mut best = 0.0;
        let mut arg = None;
        for (i, &a) in self.domain.iter().enumerate() {
            for (j, &b) in self.domain.iter().enumerate().skip(i + 1) {
                let d = space.dist(a, b);
                for (c, (x, y)) in self.values[i].iter().zip(&self.values[j]).enumerate() {
                    let r = (x - y).abs() / d;
                    if r > best {
                        best = r;
                        arg = Some((c, a, b));
                    }
                }
            }
        }
        (best, arg)
    }

    /// Largest `|f(a) - f(b)| / d(a, b)` for the full vector map.
    pub fn full_constant(&self, space: &FiniteMetricSpace) -> f64 {
        let mut best: f64 = 0.0;
        for (i, &a) in self.domain.iter().enumerate() {
            for (j, &b) in self.domain.iter().enumerate().skip(i + 1) {
                best = best.max(euclid(&self.values[i], &self.values[j]) / space.dist(a, b));
            }
        }
        best
    }

    /// Reject the map unless every coordinate is `l`-Lipschitz.
    pub fn check_coordinates(&self, space: &FiniteMetricSpace, l: f64) -> Result<()> {
        let (best, arg) = self.coordinate_constant(space);
        match arg {
            Some((coord, a, b)) if best > l * (1.0 + LIPSCHITZ_SLACK) => Err(Error::NotLipschitz {
                declared: l,
                coord,
                a: space.label(a).to_string(),
                b: space.label(b).to_string(),
                ratio: best,
            }),
            _ => Ok(()),
        }
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    crate::metric::euclid(a, b)
}

/// McShane extension of each coordinate:
/// `F_i(x) = min over a in A of f_i(a) + L d(x, a)`, with `F = f` on `A`.
/// The extension is declared `sqrt(M) L`-Lipschitz.
pub fn mcshane_extend(space: &FiniteMetricSpace, f: &LipschitzMap, l: f64) -> Result<LipschitzMap> {
    if !(l > 0.0 && l.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "L",
            value: l,
            reason: "must be positive and finite",
        });
    }
    if f.domain.is_empty() {
        return Err(Error::EmptyY);
    }
    f.check_coordinates(space, l)?;
    let dim = f.dim();
    let values = (0..space.len())
        .map(|x| match f.value_of(x) {
            Some(v) => v.to_vec(),
            None => mcshane_point(space, f, l, x),
        })
        .collect();
    Ok(LipschitzMap {
        domain: (0..space.len()).collect(),
        values,
        declared_constant: (dim as f64).sqrt() * l,
    })
}

/// The McShane formula at one point.
pub fn mcshane_point(space: &FiniteMetricSpace, f: &LipschitzMap, l: f64, x: usize) -> Vec<f64> {
    let row = space.row(x);
    let mut out = vec![f64::INFINITY; f.dim()];
    for (k, &a) in f.domain.iter().enumerate() {
        let d = l * row[a];
        for (o, v) in out.iter_mut().zip(&f.values[k]) {
            *o = o.min(v + d);
        }
    }
    out
}

/// Exact bi-Lipschitz constants of a map over all pairs of a point set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionReport {
    pub n_pairs: usize,
    pub expansion: f64,
    #[serde(with = "crate::io::ext_f64")]
    pub contraction: f64,
    #[serde(with = "crate::io::ext_f64")]
    pub distortion: f64,
    pub expansion_pair: Option<(String, String)>,
    pub contraction_pair: Option<(String, String)>,
    /// Pairs of distinct points with equal images.
    pub infinite_contraction_pairs: usize,
    pub infinite_witness: Option<(String, String)>,
}

impl DistortionReport {
    pub fn is_embedding(&self) -> bool {
        self.infinite_contraction_pairs == 0
    }
}

/// Scan every pair of `points`; `image(i, j)` is the image distance of
/// `points[i]` and `points[j]`. With fewer than two points every constant is 1.
pub fn distortion_with<F>(space: &FiniteMetricSpace, points: &[usize], image: F) -> DistortionReport
where
    F: Fn(usize, usize) -> f64,
{
    let mut exp = 0.0;
    let mut con = 0.0;
    let mut exp_pair = None;
    let mut con_pair = None;
    let mut infinite = 0usize;
    let mut witness = None;
    let mut n_pairs = 0usize;
    for i in 0..points.len() {
        let row = space.row(points[i]);
        for j in (i + 1)..points.len() {
            n_pairs += 1;
            let d = row[points[j]];
            let e = image(i, j);
            if e == 0.0 {
                infinite += 1;
                if witness.is_none() {
                    witness = Some((i, j));
                }
                continue;
            }
            if e / d > exp {
                exp = e / d;
                exp_pair = Some((i, j));
            }
            if d / e > con {
                con = d / e;
                con_pair = Some((i, j));
            }
        }
    }
    let name = |p: Option<(usize, usize)>| {
        p.map(|(i, j)| {
            (
                space.label(points[i]).to_string(),
                space.label(points[j]).to_string(),
            )
        })
    };
    if n_pairs == 0 {
        return DistortionReport {
            n_pairs,
            expansion: 1.0,
            contraction: 1.0,
            distortion: 1.0,
            expansion_pair: None,
            contraction_pair: None,
            infinite_contraction_pairs: 0,
            infinite_witness: None,
        };
    }
    let (contraction, con_pair) = if infinite > 0 {
        (f64::INFINITY, witness)
    } else {
        (con, con_pair)
    };
    DistortionReport {
        n_pairs,
        expansion: exp,
        contraction,
        distortion: if infinite > 0 { f64::INFINITY } else { exp * con },
        expansion_pair: name(exp_pair),
        contraction_pair: name(con_pair),
        infinite_contraction_pairs: infinite,
        infinite_witness: name(witness),
    }
}

/// Distortion of a dense map over its domain.
pub fn measure_distortion(space: &FiniteMetricSpace, map: &LipschitzMap) -> DistortionReport {
    distortion_with(space, &map.domain, |i, j| euclid(&map.values[i], &map.values[j]))
}

/// Distortion of sparse image rows `rows[p]` over every point of the space.
pub fn measure_distortion_sparse(space: &FiniteMetricSpace, rows: &[SparseVec]) -> DistortionReport {
    let all: Vec<usize> = (0..space.len()).collect();
    distortion_with(space, &all, |i, j| rows[i].dist(&rows[j]))
}

/// Output of [`assouad_embed`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssouadEmbedding {
    pub epsilon: f64,
    pub delta: f64,
    pub scales: Vec<f64>,
    pub colors_per_scale: Vec<usize>,
    pub map: LipschitzMap,
    /// Distortion against the snowflaked metric `d^epsilon`.
    pub report: DistortionReport,
}

/// Multiscale snowflake embedding of `(X, d^epsilon)`.
///
/// Scale `r_j = delta^j` runs from the first scale with `8 r_j` above the
/// diameter down to the first with `4 r_j` at or below the minimum
/// separation. At each scale the centers of an `r_j`-net are colored
/// greedily so that equal colors are at least `12 r_j` apart, and block
/// `(j, color)` holds `r_j^epsilon * max(0, 1 - d(x, z) / (2 r_j))` for the
/// center `z` of that color. A pair with `4 r_j <= d < 8 r_j` is then
/// separated by at least `r_j^epsilon / 2` in block `j`.
pub fn assouad_embed(space: &FiniteMetricSpace, epsilon: f64, delta: f64) -> Result<AssouadEmbedding> {
    assouad_embed_scaled(space, epsilon, delta, 1.0)
}

/// As [`assouad_embed`] with scales `base * delta^j`.
pub fn assouad_embed_scaled(
    space: &FiniteMetricSpace,
    epsilon: f64,
    delta: f64,
    base: f64,
) -> Result<AssouadEmbedding> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidParameter {
            name: "epsilon",
            value: epsilon,
            reason: "must lie in (0, 1)",
        });
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter {
            name: "delta",
            value: delta,
            reason: "must lie in (0, 1)",
        });
    }
    let n = space.len();
    let domain: Vec<usize> = (0..n).collect();
    if n < 2 {
        let map = LipschitzMap::new(domain, vec![Vec::new(); n], 0.0)?;
        let report = measure_distortion(space, &map);
        return Ok(AssouadEmbedding {
            epsilon,
            delta,
            scales: Vec::new(),
            colors_per_scale: Vec::new(),
            map,
            report,
        });
    }
    let (diam, sep) = (space.diameter(), space.min_separation());
    let mut j = ((diam / base).ln() / delta.ln()).floor() as i32;
    while 8.0 * base * delta.powi(j) <= diam {
        j -= 1;
    }
    let mut scales = Vec::new();
    loop {
        let r = base * delta.powi(j);
        scales.push((j, r));
        if 4.0 * r <= sep {
            break;
        }
        j += 1;
    }

    struct Layer {
        block: usize,
        r: f64,
        centers: Vec<usize>,
        colors: Vec<usize>,
    }
    let mut layers = Vec::with_capacity(scales.len());
    let mut colors_per_scale = Vec::with_capacity(scales.len());
    for (block, &(_, r)) in scales.iter().enumerate() {
        let net = greedy_net(space, r)?;
        let mut colors: Vec<usize> = Vec::with_capacity(net.centers.len());
        for (k, &z) in net.centers.iter().enumerate() {
            let row = space.row(z);
            let mut used = vec![false; k + 1];
            for (l, &w) in net.centers[..k].iter().enumerate() {
                if row[w] < 12.0 * r {
                    used[colors[l]] = true;
                }
            }
            colors.push(used.iter().position(|u| !u).unwrap());
        }
        colors_per_scale.push(colors.iter().max().map_or(0, |c| c + 1));
        layers.push(Layer {
            block,
            r,
            centers: net.centers,
            colors,
        });
    }
    let n_colors = colors_per_scale.iter().copied().max().unwrap_or(1);
    let dim = layers.len() * n_colors;
    let mut values = vec![vec![0.0; dim]; n];
    for layer in &layers {
        let weight = layer.r.powf(epsilon);
        for (&z, &c) in layer.centers.iter().zip(&layer.colors) {
            let row = space.row(z);
            let coord = layer.block * n_colors + c;
            for (x, v) in values.iter_mut().enumerate() {
                let b = 1.0 - row[x] / (2.0 * layer.r);
                if b > 0.0 {
                    v[coord] += weight * b;
                }
            }
        }
    }
    let snow = space.snowflake(epsilon);
    let mut map = LipschitzMap::new(domain, values, 0.0)?;
    let report = measure_distortion(&snow, &map);
    map.declared_constant = report.expansion;
    Ok(AssouadEmbedding {
        epsilon,
        delta,
        scales: scales.into_iter().map(|s| s.1).collect(),
        colors_per_scale,
        map,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line(points: &[f64]) -> FiniteMetricSpace {
        let coords: Vec<Vec<f64>> = points.iter().map(|&x| vec![x]).collect();
        FiniteMetricSpace::euclidean(&coords).unwrap()
    }

    #[test]
    fn mcshane_formula() {
        let s = line(&[0.0, 1.0, 2.0, 0.5]);
        let f = LipschitzMap::new(vec![0, 1], vec![vec![0.0], vec![1.0]], 1.0).unwrap();
        let g = mcshane_extend(&s, &f, 1.0).unwrap();
        assert_eq!(g.value_of(2).unwrap(), &[2.0]);
        assert_eq!(g.value_of(3).unwrap(), &[0.5]);
        assert_eq!(g.value_of(1).unwrap(), &[1.0]);
        assert_eq!(g.declared_constant, 1.0);
    }

    #[test]
    fn mcshane_rejects_with_witness() {
        let s = line(&[0.0, 1.0, 2.0]);
        let f = LipschitzMap::new(vec![0, 1], vec![vec![0.0], vec![3.0]], 1.0).unwrap();
        match mcshane_extend(&s, &f, 1.0) {
            Err(Error::NotLipschitz { a, b, ratio, .. }) => {
                assert_eq!((a.as_str(), b.as_str()), ("0", "1"));
                assert_eq!(ratio, 3.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mcshane_on_grid() {
        let n = 7;
        let coords: Vec<Vec<f64>> = (0..50).map(|k| vec![(k % n) as f64, (k / n) as f64]).collect();
        let s = FiniteMetricSpace::euclidean(&coords).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<usize> = (0..50).filter(|_| rng.gen_bool(0.3)).collect();
        // 1-Lipschitz data: distances to two random anchors
        let (u, v) = (rng.gen_range(0..50), rng.gen_range(0..50));
        let vals = a.iter().map(|&p| vec![s.dist(p, u), -s.dist(p, v)]).collect();
        let f = LipschitzMap::new(a.clone(), vals, 1.0).unwrap();
        let g = mcshane_extend(&s, &f, 1.0).unwrap();
        for &p in &a {
            assert_eq!(g.value_of(p), f.value_of(p));
        }
        assert!(g.coordinate_constant(&s).0 <= 1.0 + 1e-12);
        assert!(g.full_constant(&s) <= g.declared_constant * (1.0 + 1e-9));
    }

    #[test]
    fn distortion_basics() {
        let pts = [0.0, 1.0, 3.0, 7.0];
        let s = line(&pts);
        let id = LipschitzMap::new((0..4).collect(), pts.iter().map(|&x| vec![x]).collect(), 1.0).unwrap();
        let r = measure_distortion(&s, &id);
        assert_eq!((r.expansion, r.contraction, r.distortion), (1.0, 1.0, 1.0));
        let double =
            LipschitzMap::new((0..4).collect(), pts.iter().map(|&x| vec![2.0 * x]).collect(), 2.0).unwrap();
        let r = measure_distortion(&s, &double);
        assert_eq!((r.expansion, r.contraction, r.distortion), (2.0, 0.5, 1.0));
        let constant = LipschitzMap::new((0..4).collect(), vec![vec![1.0]; 4], 0.0).unwrap();
        let r = measure_distortion(&s, &constant);
        assert_eq!(r.infinite_contraction_pairs, 6);
        assert!(r.distortion.is_infinite());
        assert_eq!(r.infinite_witness, Some(("0".into(), "1".into())));
        let json = serde_json::to_string(&r).unwrap();
        let back: DistortionReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn assouad_trivial_cases() {
        let one = assouad_embed(&line(&[0.0]), 0.5, 0.5).unwrap();
        assert_eq!(one.map.dim(), 0);
        let two = assouad_embed(&line(&[0.0, 1.0]), 0.5, 0.5).unwrap();
        assert!(two.report.is_embedding());
        let e = crate::metric::euclid(&two.map.values[0], &two.map.values[1]);
        assert!(e > 0.0 && e.is_finite());
        assert!(assouad_embed(&line(&[0.0, 1.0]), 1.0, 0.5).is_err());
    }

    fn snow_line(n: usize, seed: u64) -> FiniteMetricSpace {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        line(&pts)
    }

    #[test]
    fn assouad_snowflaked_line() {
        let a = assouad_embed(&snow_line(64, 11), 0.5, 0.5).unwrap();
        assert!(a.report.is_embedding());
        assert_eq!(a.map.dim(), a.scales.len() * a.colors_per_scale.iter().max().unwrap());
        assert!(a.report.distortion < ASSOUAD_LINE_BOUND, "{}", a.report.distortion);
    }

    /// Regression ceiling for seed 11 (measured 1.80).
    const ASSOUAD_LINE_BOUND: f64 = 2.5;

    #[test]
    fn assouad_stable_under_refinement() {
        for seed in [3, 11] {
            let a = assouad_embed(&snow_line(64, seed), 0.5, 0.5).unwrap().report.distortion;
            let b = assouad_embed(&snow_line(128, seed), 0.5, 0.5).unwrap().report.distortion;
            assert!((b / a - 1.0).abs() < 0.2, "seed {seed}: {a} -> {b}");
        }
        let even = |n: usize| {
            let pts: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
            assouad_embed(&line(&pts), 0.5, 0.5).unwrap().report
        };
        let (a, b) = (even(64), even(128));
        assert!(a.is_embedding() && b.is_embedding());
        assert!((b.distortion / a.distortion - 1.0).abs() < 0.2);
    }

    #[test]
    fn assouad_scale_covariance() {
        let s = snow_line(40, 5);
        let a = assouad_embed_scaled(&s, 0.5, 0.5, 1.0).unwrap();
        let b = assouad_embed_scaled(&s.scaled(4.0), 0.5, 0.5, 4.0).unwrap();
        let rel = (a.report.distortion - b.report.distortion).abs() / a.report.distortion;
        assert!(rel < 1e-9, "{} vs {}", a.report.distortion, b.report.distortion);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn mcshane_extends_and_stays_lipschitz(
            pts in prop::collection::vec(-10.0..10.0f64, 3..25),
            l in 0.5..3.0f64,
            mask in prop::collection::vec(any::<bool>(), 25),
        ) {
            let s = line(&pts);
            if s.min_separation() < 1e-6 { return Ok(()); }
            let a: Vec<usize> = (0..pts.len()).filter(|&i| mask[i] || i == 0).collect();
            let vals = a.iter().map(|&p| vec![l * pts[p].abs(), l * (pts[p] - 1.0).abs()]).collect();
            let f = LipschitzMap::new(a.clone(), vals, l).unwrap();
            let g = mcshane_extend(&s, &f, l).unwrap();
            for &p in &a { prop_assert_eq!(g.value_of(p), f.value_of(p)); }
            prop_assert!(g.coordinate_constant(&s).0 <= l * (1.0 + 1e-9));
            // larger L never lowers the extension off A
            let g2 = mcshane_extend(&s, &f, 2.0 * l).unwrap();
            for p in 0..pts.len() {
                for (x, y) in g.value_of(p).unwrap().iter().zip(g2.value_of(p).unwrap()) {
                    prop_assert!(y >= x);
                }
            }
        }

        #[test]
        fn distortion_isometry_invariant(
            pts in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 3..20),
            theta in 0.0..6.28f64,
            shift in (-3.0..3.0f64, -3.0..3.0f64),
        ) {
            let coords: Vec<Vec<f64>> = pts.iter().map(|p| vec![p.0, p.1]).collect();
            let Ok(s) = FiniteMetricSpace::euclidean(&coords) else { return Ok(()); };
            let warp: Vec<Vec<f64>> = coords.iter().map(|c| vec![c[0] + 0.3 * c[1].sin(), c[1]]).collect();
            let (ct, st) = (theta.cos(), theta.sin());
            let moved: Vec<Vec<f64>> = warp
                .iter()
                .map(|c| vec![ct * c[0] - st * c[1] + shift.0, st * c[0] + ct * c[1] + shift.1])
                .collect();
            let ids: Vec<usize> = (0..coords.len()).collect();
            let a = measure_distortion(&s, &LipschitzMap::new(ids.clone(), warp, 1.0).unwrap());
            let b = measure_distortion(&s, &LipschitzMap::new(ids, moved, 1.0).unwrap());
            if a.is_embedding() {
                prop_assert!((a.distortion - b.distortion).abs() <= 1e-9 * a.distortion);
            }
        }
    }
}
