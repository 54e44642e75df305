//! End-to-end driver: instances (files and generators), the stage chain from
//! the cube tree to the global map, artifact records and the invariant suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cubes::{AxiomReport, CubeTree};
use crate::error::{Error, Result};
use crate::glue::{
    assemble_f, assemble_h, build_atlas, choose_m1, verify_cross_bound, verify_wlarge_scale,
    verify_wlocal, wlocal_radius, CaseReport, GlobalEmbedding, HMap, LocalPatch, NormalizedPatch,
    PatchAtlas, GLUE_SLACK,
};
use crate::grushin::{cc_bounds, chart_patch, grushin_space, GrushinPoint, GrushinSample, DEFAULT_BALL_BUDGET};
use crate::io::{point_labels, MetricKind, PatchInput, SpaceInput, YInput};
use crate::lipschitz::{assouad_embed, distortion_with, measure_distortion_sparse, DistortionReport, LipschitzMap};
use crate::metric::{diagnose, euclid, FiniteMetricSpace, SpaceDiagnostics};
use crate::sparse::SparseVec;
use crate::whitney::{build_cutoffs, build_whitney_tree, color_cubes, whitney_decompose, Coloring, CutoffFamily, WhitneyDecomposition};

/// Built-in instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Generator {
    /// Grid nodes of `window` with `nx` by `ny` cells; distances on a grid
    /// refined `refine` times. Default `Y`: the axis `x = 0`.
    Grushin { window: [f64; 4], nx: usize, ny: usize, refine: usize },
    /// `n` by `n` Euclidean grid of spacing `1 / (n - 1)`. Default `Y`: the
    /// column `x = 0`.
    Grid { n: usize },
    /// `{0} u {2^-k : 0 <= k < n - 1}` on the line. Default `Y = {0}`.
    Line { n: usize },
    /// `n` uniform points of `[0, 1]^dim`. Default `Y`: point `0`.
    Random { n: usize, dim: usize, seed: u64 },
}

impl Generator {
    pub fn grushin_window() -> Self {
        Generator::Grushin { window: [-1.0, 1.0, -1.0, 1.0], nx: 60, ny: 60, refine: 1 }
    }
}

/// Where an instance came from; stored in the run manifest so `verify` can
/// rebuild the space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum Source {
    Generator { generator: Generator },
    File { path: String },
}

/// A finite space with its closed set `Y` and whatever the pipeline needs
/// to embed `Y` and build patches.
#[derive(Debug, Clone)]
pub struct Instance {
    pub space: FiniteMetricSpace,
    /// Euclidean coordinates, when the metric is Euclidean.
    pub coords: Option<Vec<Vec<f64>>>,
    /// Plane coordinates of a Grushin sample.
    pub grushin: Option<Vec<GrushinPoint>>,
    /// Grushin oracle refinement, for reports.
    pub refine: Option<usize>,
    pub y: Vec<usize>,
    /// Explicit embedding of `Y` (`y_embedding[k]` is the image of `y[k]`).
    pub y_embedding: Option<Vec<Vec<f64>>>,
}

fn axis_of(points: &[GrushinPoint]) -> Vec<usize> {
    (0..points.len()).filter(|&i| points[i].x == 0.0).collect()
}

impl Instance {
    pub fn generate(g: &Generator) -> Result<Self> {
        match *g {
            Generator::Grushin { window, nx, ny, refine } => {
                let s = GrushinSample::build(window, nx, ny, refine)?;
                let y = s.axis();
                Ok(Instance {
                    space: s.space,
                    coords: None,
                    grushin: Some(s.points),
                    refine: Some(refine),
                    y,
                    y_embedding: None,
                })
            }
            Generator::Grid { n } => {
                if n < 2 {
                    return Err(Error::Input("grid: n must be at least 2".into()));
                }
                let h = 1.0 / (n - 1) as f64;
                let coords: Vec<Vec<f64>> =
                    (0..n * n).map(|k| vec![(k % n) as f64 * h, (k / n) as f64 * h]).collect();
                let y = (0..n * n).filter(|k| k % n == 0).collect();
                Self::euclidean(coords, y)
            }
            Generator::Line { n } => {
                if n < 2 {
                    return Err(Error::Input("line: n must be at least 2".into()));
                }
                let mut coords = vec![vec![0.0]];
                coords.extend((0..n as i32 - 1).map(|k| vec![2f64.powi(-k)]));
                Self::euclidean(coords, vec![0])
            }
            Generator::Random { n, dim, seed } => {
                if n == 0 || dim == 0 {
                    return Err(Error::Input("random: n and dim must be positive".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let coords = (0..n).map(|_| (0..dim).map(|_| rng.gen::<f64>()).collect()).collect();
                Self::euclidean(coords, vec![0])
            }
        }
    }

    fn euclidean(coords: Vec<Vec<f64>>, y: Vec<usize>) -> Result<Self> {
        Ok(Instance {
            space: FiniteMetricSpace::euclidean(&coords)?,
            coords: Some(coords),
            grushin: None,
            refine: None,
            y,
            y_embedding: None,
        })
    }

    /// Build from a space file; `y` overrides the default `Y` (the axis for
    /// Grushin inputs, empty otherwise).
    pub fn from_input(input: &SpaceInput, y: Option<&YInput>) -> Result<Self> {
        let mut inst = match input.metric {
            MetricKind::Grushin => {
                let coords = input.checked_coords()?;
                if coords.first().map_or(false, |c| c.len() != 2) {
                    return Err(Error::Input("coords: Grushin points need 2 entries".into()));
                }
                let pts: Vec<GrushinPoint> = coords.iter().map(|c| GrushinPoint::new(c[0], c[1])).collect();
                let nx = input.nx.unwrap_or(100);
                let space = grushin_space(point_labels(&input.points)?, &pts, nx)?;
                Instance { space, coords: None, grushin: Some(pts), refine: None, y: Vec::new(), y_embedding: None }
            }
            MetricKind::Euclidean => Instance {
                space: input.build()?,
                coords: Some(input.checked_coords()?.clone()),
                grushin: None,
                refine: None,
                y: Vec::new(),
                y_embedding: None,
            },
            MetricKind::Matrix => Instance {
                space: input.build()?,
                coords: None,
                grushin: None,
                refine: None,
                y: Vec::new(),
                y_embedding: None,
            },
        };
        match y {
            Some(y) => inst.set_y(y)?,
            None => {
                if let Some(p) = &inst.grushin {
                    inst.y = axis_of(p);
                }
            }
        }
        Ok(inst)
    }

    /// Apply a `Y` specification (ids or the `"axis"` predicate).
    pub fn set_y(&mut self, y: &YInput) -> Result<()> {
        let ids = match y.predicate.as_deref() {
            Some("axis") => match (&self.grushin, &self.coords) {
                (Some(p), _) => axis_of(p),
                (None, Some(c)) => (0..c.len()).filter(|&i| c[i][0] == 0.0).collect(),
                (None, None) => return Err(Error::Input("Y: predicate \"axis\" needs coordinates".into())),
            },
            Some(other) => return Err(Error::Input(format!("Y: unknown predicate \"{other}\""))),
            None => y.resolve(&self.space)?,
        };
        if let Some(e) = &y.embedding {
            if e.len() != ids.len() {
                return Err(Error::Input(format!("Y: embedding has {} rows for {} points", e.len(), ids.len())));
            }
            let dim = e.first().map_or(0, Vec::len);
            if let Some(k) = e.iter().position(|v| v.len() != dim) {
                return Err(Error::Input(format!("Y: embedding[{k}]: expected {dim} entries")));
            }
        }
        // keep ids and embedding rows together, ordered by id
        let mut rows: Vec<(usize, Option<Vec<f64>>)> = ids
            .iter()
            .enumerate()
            .map(|(k, &p)| (p, y.embedding.as_ref().map(|e| e[k].clone())))
            .collect();
        rows.sort_by_key(|r| r.0);
        rows.dedup_by_key(|r| r.0);
        self.y = rows.iter().map(|r| r.0).collect();
        self.y_embedding = y.embedding.as_ref().map(|_| rows.into_iter().map(|r| r.1.unwrap()).collect());
        if self.y.is_empty() {
            return Err(Error::EmptyY);
        }
        Ok(())
    }

    pub fn is_grushin(&self) -> bool {
        self.grushin.is_some()
    }
}

/// Embedding `f` of `Y` with its bi-Lipschitz constant `L1`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct YEmbedding {
    /// `explicit`, `coordinates`, `assouad` or `trivial`.
    pub method: String,
    pub l1: f64,
    pub map: LipschitzMap,
    pub report: DistortionReport,
}

/// `L1 = max(expansion, contraction)` of `map` on `Y`.
fn y_constant(space: &FiniteMetricSpace, map: &LipschitzMap) -> Result<(f64, DistortionReport)> {
    let r = distortion_with(space, &map.domain, |i, j| euclid(&map.values[i], &map.values[j]));
    if r.infinite_contraction_pairs > 0 {
        let (a, b) = r.infinite_witness.clone().unwrap_or_default();
        return Err(Error::MissingYEmbedding(format!("embedding of Y is not injective ({a}, {b})")));
    }
    let l = if map.domain.len() < 2 { 1.0 } else { r.expansion.max(r.contraction) };
    Ok((l, r))
}

/// Explicit embedding if given; Euclidean coordinates; for Grushin samples an
/// Assouad embedding of the axis heights `(Y, |dy|^(1/2))`, rescaled by
/// `sqrt(contraction / expansion)` against the cc metric.
pub fn embed_y(inst: &Instance) -> Result<YEmbedding> {
    let space = &inst.space;
    let y = inst.y.clone();
    if let Some(rows) = &inst.y_embedding {
        let map = LipschitzMap::new(y, rows.clone(), 0.0)?;
        let (l1, report) = y_constant(space, &map)?;
        return Ok(YEmbedding { method: "explicit".into(), l1, map: LipschitzMap { declared_constant: l1, ..map }, report });
    }
    if y.len() == 1 {
        let map = LipschitzMap::new(y, vec![Vec::new()], 1.0)?;
        let (_, report) = y_constant(space, &map)?;
        return Ok(YEmbedding { method: "trivial".into(), l1: 1.0, map, report });
    }
    if let Some(c) = &inst.coords {
        let map = LipschitzMap::new(y.clone(), y.iter().map(|&p| c[p].clone()).collect(), 0.0)?;
        let (l1, report) = y_constant(space, &map)?;
        return Ok(YEmbedding { method: "coordinates".into(), l1, map: LipschitzMap { declared_constant: l1, ..map }, report });
    }
    if let Some(pts) = &inst.grushin {
        let heights: Vec<Vec<f64>> = y.iter().map(|&p| vec![pts[p].y]).collect();
        let line = FiniteMetricSpace::euclidean(&heights)?;
        let a = assouad_embed(&line, 0.5, 0.5)?;
        let raw = LipschitzMap::new(y.clone(), a.map.values, 0.0)?;
        let (_, r) = y_constant(space, &raw)?;
        let s = (r.contraction / r.expansion).sqrt();
        let scaled = LipschitzMap::new(
            y,
            raw.values.iter().map(|v| v.iter().map(|x| x * s).collect()).collect(),
            0.0,
        )?;
        let (l1, report) = y_constant(space, &scaled)?;
        return Ok(YEmbedding { method: "assouad".into(), l1, map: LipschitzMap { declared_constant: l1, ..scaled }, report });
    }
    Err(Error::MissingYEmbedding("give Y with an \"embedding\" for a matrix input".into()))
}

/// Where local patches come from.
#[derive(Debug, Clone)]
pub enum PatchSource {
    /// Restriction of the Euclidean input coordinates.
    Identity,
    Explicit(Vec<LocalPatch>),
    /// Grushin chart embeddings with a ball budget per halo.
    Chart { budget: usize },
}

impl PatchSource {
    /// Default for an instance: charts for Grushin samples, identity for
    /// Euclidean generators; file inputs must say.
    pub fn default_for(inst: &Instance) -> Option<Self> {
        if inst.is_grushin() {
            Some(PatchSource::Chart { budget: DEFAULT_BALL_BUDGET })
        } else if inst.coords.is_some() {
            Some(PatchSource::Identity)
        } else {
            None
        }
    }

    pub fn from_input(input: &PatchInput, space: &FiniteMetricSpace) -> Result<Self> {
        match input {
            PatchInput::Identity => Ok(PatchSource::Identity),
            PatchInput::Explicit { patches } => patches
                .iter()
                .enumerate()
                .map(|(k, e)| {
                    let ids = point_labels(&e.points)
                        .map_err(|err| Error::Input(format!("patches[{k}].{err}")))?
                        .iter()
                        .map(|l| space.index_of(l).ok_or_else(|| Error::UnknownPoint(l.clone())))
                        .collect::<Result<Vec<_>>>()?;
                    LocalPatch::new(e.cube, ids, e.values.clone())
                })
                .collect::<Result<_>>()
                .map(PatchSource::Explicit),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            PatchSource::Identity => "identity",
            PatchSource::Explicit(_) => "explicit",
            PatchSource::Chart { .. } => "chart",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineOptions {
    pub delta: f64,
    pub epsilon: f64,
    /// Replaces the W-local radius `16 M1 L1^2` for coloring and verifiers.
    pub rho: Option<f64>,
    pub l2: Option<f64>,
    pub c: Option<f64>,
    /// Fold colors into `1..=M` (a negative control when `M` is too small).
    pub max_colors: Option<usize>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions { delta: 0.5, epsilon: crate::whitney::DEFAULT_EPSILON, rho: None, l2: None, c: None, max_colors: None }
    }
}

/// Chart construction record of one cube (enough to regenerate its patch).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartRecipe {
    pub radius: f64,
    pub centers: Vec<String>,
    pub scale: f64,
}

/// One cube of the stored atlas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtlasEntry {
    pub cube: usize,
    /// Measured constant of `h_Q` on `Q*`.
    pub measured: f64,
    pub translation: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chart: Option<ChartRecipe>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<Vec<f64>>>,
}

/// Stored atlas. Chart atlases keep the recipe; identity and explicit
/// atlases keep the patch values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtlasRecord {
    pub kind: String,
    pub m2: usize,
    pub l2: f64,
    pub c: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    pub patches: Vec<AtlasEntry>,
}

/// Constants of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub delta: f64,
    pub epsilon: f64,
    pub c1: f64,
    pub a0: f64,
    pub a_space: f64,
    pub a_used: f64,
    /// `4 C1 A / delta`.
    pub comparability_bound: f64,
    pub m1: usize,
    pub l1: f64,
    pub rho: f64,
    pub l2: f64,
    pub c: f64,
    pub m2: usize,
    pub colors: usize,
    pub overlap: usize,
    pub dim: usize,
}

/// Every stage output of one run.
#[derive(Debug, Clone)]
pub struct Run {
    pub diagnostics: SpaceDiagnostics,
    pub f: YEmbedding,
    /// `None` when `Omega` is empty.
    pub stages: Option<Stages>,
    pub embedding: GlobalEmbedding,
    pub constants: Constants,
    pub distortion: DistortionReport,
}

#[derive(Debug, Clone)]
pub struct Stages {
    pub tree: CubeTree,
    pub decomp: WhitneyDecomposition,
    pub cutoffs: CutoffFamily,
    pub coloring: Coloring,
    pub atlas: PatchAtlas,
    pub record: AtlasRecord,
}

/// Tree and decomposition of `X \ Y`.
pub fn decompose(inst: &Instance, a_space: f64, opts: &PipelineOptions) -> Result<(CubeTree, WhitneyDecomposition)> {
    let tree = build_whitney_tree(&inst.space, &inst.y, opts.delta)?;
    let decomp = whitney_decompose(&tree, &inst.space, &inst.y, a_space, opts.epsilon)?;
    Ok((tree, decomp))
}

/// Coloring at radius `rho`, folded into `max_colors` when given.
pub fn color(decomp: &WhitneyDecomposition, rho: f64, max_colors: Option<usize>) -> Result<Coloring> {
    let mut col = color_cubes(decomp, rho)?;
    if let Some(m) = max_colors {
        if m == 0 {
            return Err(Error::InvalidParameter { name: "colors", value: 0.0, reason: "must be positive" });
        }
        for k in &mut col.colors {
            *k = (*k - 1) % m + 1;
        }
        col.count = col.colors.iter().copied().max().unwrap_or(0);
    }
    Ok(col)
}

/// Local patches of every cube.
pub fn make_patches(
    inst: &Instance,
    decomp: &WhitneyDecomposition,
    source: &PatchSource,
) -> Result<(Vec<LocalPatch>, Vec<Option<ChartRecipe>>)> {
    let m = decomp.len();
    match source {
        PatchSource::Explicit(p) => Ok((p.clone(), vec![None; m])),
        PatchSource::Identity => {
            let coords = inst
                .coords
                .as_ref()
                .ok_or_else(|| Error::Input("patches: identity patches need Euclidean coordinates".into()))?;
            Ok(((0..m).map(|q| LocalPatch::identity(q, &decomp.star2_points(q), coords)).collect(), vec![None; m]))
        }
        PatchSource::Chart { budget } => {
            let pts = inst
                .grushin
                .as_ref()
                .ok_or_else(|| Error::Input("patches: chart patches need a Grushin instance".into()))?;
            let mut patches = Vec::with_capacity(m);
            let mut recipes = Vec::with_capacity(m);
            for q in 0..m {
                let (patch, recipe) = chart_for(inst, pts, decomp, q, *budget, None)?;
                patches.push(patch);
                recipes.push(Some(recipe));
            }
            Ok((patches, recipes))
        }
    }
}

/// Balanced chart patch of cube `q`; `scale` replaces the balancing factor.
fn chart_for(
    inst: &Instance,
    pts: &[GrushinPoint],
    decomp: &WhitneyDecomposition,
    q: usize,
    budget: usize,
    scale: Option<f64>,
) -> Result<(LocalPatch, ChartRecipe)> {
    let star2 = decomp.star2_points(q);
    let mut patch = chart_patch(&inst.space, pts, &star2, decomp.cubes[q].diam, budget, q)?;
    match scale {
        Some(s) => {
            patch.scale = s;
            for v in &mut patch.values {
                for x in v.iter_mut() {
                    *x *= s;
                }
            }
        }
        None => {
            if patch.dim() > 0 {
                patch.balance(&inst.space, &decomp.star_points(q));
            }
        }
    }
    let recipe = ChartRecipe {
        radius: patch.radius,
        centers: patch.centers.iter().map(|&c| inst.space.label(c).to_string()).collect(),
        scale: patch.scale,
    };
    Ok((LocalPatch { cube: q, points: patch.points, values: patch.values }, recipe))
}

fn record_of(
    inst: &Instance,
    atlas: &PatchAtlas,
    source: &PatchSource,
    recipes: Vec<Option<ChartRecipe>>,
) -> AtlasRecord {
    let keep_values = !matches!(source, PatchSource::Chart { .. });
    AtlasRecord {
        kind: source.kind().into(),
        m2: atlas.m2,
        l2: atlas.l2,
        c: atlas.c,
        budget: match source {
            PatchSource::Chart { budget } => Some(*budget),
            _ => None,
        },
        patches: atlas
            .raw
            .iter()
            .zip(recipes)
            .enumerate()
            .map(|(q, (p, chart))| AtlasEntry {
                cube: q,
                measured: atlas.measured[q],
                translation: atlas.normalized[q].translation.clone(),
                chart,
                points: keep_values.then(|| p.points.iter().map(|&x| inst.space.label(x).to_string()).collect()),
                values: keep_values.then(|| p.values.clone()),
            })
            .collect(),
    }
}

/// Run every stage.
pub fn run_pipeline(inst: &Instance, source: &PatchSource, opts: &PipelineOptions) -> Result<Run> {
    let diagnostics = diagnose(&inst.space);
    let f = embed_y(inst)?;
    let y_dim = f.map.dim();
    let n = inst.space.len();
    if inst.y.len() == n {
        let h = HMap { colors: 0, m2: 0, rows: vec![SparseVec::new(); n] };
        let embedding = assemble_f(&inst.space, &inst.y, &f.map, f.l1, y_dim, h)?;
        let distortion = measure_distortion_sparse(&inst.space, &embedding.rows());
        let constants = Constants {
            delta: opts.delta,
            epsilon: opts.epsilon,
            c1: 0.0,
            a0: 0.0,
            a_space: diagnostics.uniform_perfectness_estimate,
            a_used: diagnostics.uniform_perfectness_estimate,
            comparability_bound: 0.0,
            m1: y_dim,
            l1: f.l1,
            rho: opts.rho.unwrap_or_else(|| wlocal_radius(y_dim, f.l1)),
            l2: 0.0,
            c: 0.0,
            m2: 0,
            colors: 0,
            overlap: 0,
            dim: embedding.dim(),
        };
        return Ok(Run { diagnostics, f, stages: None, embedding, constants, distortion });
    }
    let (tree, decomp) = decompose(inst, diagnostics.uniform_perfectness_estimate, opts)?;
    let cutoffs = build_cutoffs(&decomp, &inst.space);
    let m1 = choose_m1(decomp.c1, decomp.a_used, decomp.delta, y_dim);
    let rho = opts.rho.unwrap_or_else(|| wlocal_radius(m1, f.l1));
    let coloring = color(&decomp, rho, opts.max_colors)?;
    let (patches, recipes) = make_patches(inst, &decomp, source)?;
    let atlas = build_atlas(&inst.space, &decomp, &cutoffs, patches, opts.l2, opts.c)?;
    let record = record_of(inst, &atlas, source, recipes);
    let h = assemble_h(&atlas, &coloring, n)?;
    let embedding = assemble_f(&inst.space, &inst.y, &f.map, f.l1, m1, h)?;
    let distortion = measure_distortion_sparse(&inst.space, &embedding.rows());
    let constants = Constants {
        delta: decomp.delta,
        epsilon: decomp.epsilon,
        c1: decomp.c1,
        a0: decomp.a0,
        a_space: decomp.a_space,
        a_used: decomp.a_used,
        comparability_bound: decomp.comparability_bound,
        m1,
        l1: f.l1,
        rho,
        l2: atlas.l2,
        c: atlas.c,
        m2: atlas.m2,
        colors: coloring.count,
        overlap: decomp.overlap_number(),
        dim: embedding.dim(),
    };
    Ok(Run {
        diagnostics,
        f,
        stages: Some(Stages { tree, decomp, cutoffs, coloring, atlas, record }),
        embedding,
        constants,
        distortion,
    })
}

/// Rebuild an atlas from its record: regenerate or read `h_Q`, then apply
/// the stored translations without re-normalizing.
pub fn atlas_from_record(
    inst: &Instance,
    decomp: &WhitneyDecomposition,
    cutoffs: &CutoffFamily,
    record: &AtlasRecord,
) -> Result<(PatchAtlas, Vec<String>)> {
    let m = decomp.len();
    let mut issues = Vec::new();
    let mut entries: Vec<Option<&AtlasEntry>> = vec![None; m];
    for e in &record.patches {
        if e.cube < m {
            entries[e.cube] = Some(e);
        }
    }
    let missing: Vec<usize> = (0..m).filter(|&q| entries[q].is_none()).collect();
    if !missing.is_empty() {
        return Err(Error::MissingPatches(missing));
    }
    let mut raw = Vec::with_capacity(m);
    for (q, e) in entries.iter().map(|e| e.unwrap()).enumerate() {
        let patch = match (&e.chart, &e.points, &e.values) {
            (Some(recipe), _, _) => {
                let pts = inst
                    .grushin
                    .as_ref()
                    .ok_or_else(|| Error::Input("atlas: chart patches need a Grushin instance".into()))?;
                let budget = record.budget.unwrap_or(DEFAULT_BALL_BUDGET);
                let (patch, again) = chart_for(inst, pts, decomp, q, budget, Some(recipe.scale))?;
                if again.centers != recipe.centers || again.radius != recipe.radius {
                    issues.push(format!("cube {q}: chart recipe does not regenerate"));
                }
                patch
            }
            (None, Some(points), Some(values)) => {
                let ids = points
                    .iter()
                    .map(|l| inst.space.index_of(l).ok_or_else(|| Error::UnknownPoint(l.clone())))
                    .collect::<Result<Vec<_>>>()?;
                LocalPatch::new(q, ids, values.clone())?
            }
            _ => return Err(Error::Input(format!("atlas: cube {q} has neither a chart nor values"))),
        };
        raw.push(patch);
    }
    let dim = record.m2;
    let normalized = raw
        .iter()
        .enumerate()
        .map(|(q, p)| {
            let cut = &cutoffs.cutoffs[q];
            let t = &entries[q].unwrap().translation;
            let values = cut
                .star2_points
                .iter()
                .zip(&cut.values)
                .map(|(&x, &phi)| {
                    let h = p.value(x).ok_or_else(|| Error::PatchCoverage { cube: q, point: inst.space.label(x).to_string() })?;
                    let v: Vec<f64> = (0..dim.max(t.len()))
                        .map(|i| (h.get(i).copied().unwrap_or(0.0) + t.get(i).copied().unwrap_or(0.0)) * phi)
                        .collect();
                    Ok(SparseVec::from_dense(&v))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(NormalizedPatch {
                cube: q,
                translation: t.clone(),
                scale: crate::glue::cube_scale(decomp, q),
                points: cut.star2_points.clone(),
                values,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let measured = raw
        .iter()
        .enumerate()
        .map(|(q, p)| crate::glue::patch_constant(&inst.space, p, &cutoffs.cutoffs[q].star_points).map(|r| r.0))
        .collect::<Result<Vec<_>>>()?;
    Ok((
        PatchAtlas { m2: dim.max(raw.iter().map(LocalPatch::dim).max().unwrap_or(0)), l2: record.l2, c: record.c, measured, raw, normalized },
        issues,
    ))
}

/// Outcome of one check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Warn,
    /// Nothing in scope.
    Vacuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    /// Hard checks decide the exit code; soft ones only warn.
    pub hard: bool,
    pub status: Status,
    pub checked: usize,
    pub violations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measured: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<String>,
}

impl Check {
    fn new(name: &str, hard: bool, checked: usize, violations: usize, witness: Option<String>) -> Self {
        let status = if checked == 0 {
            Status::Vacuous
        } else if violations == 0 {
            Status::Pass
        } else if hard {
            Status::Fail
        } else {
            Status::Warn
        };
        Check { name: name.into(), hard, status, checked, violations, measured: None, bound: None, witness }
    }

    fn with(mut self, measured: f64, bound: Option<f64>) -> Self {
        self.measured = Some(measured);
        self.bound = bound;
        self
    }

    fn from_case(name: &str, r: &CaseReport) -> Self {
        let w = r.witnesses.first().map(|w| format!("{} {}: {} < {}", w.p, w.q, w.lhs, w.rhs));
        let c = Check::new(name, false, r.checked, r.violations, w);
        if r.worst_ratio.is_finite() {
            c.with(r.worst_ratio, Some(1.0))
        } else {
            c
        }
    }
}

/// The invariant suite with the reports it was computed from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
    pub constants: Constants,
    pub distortion: DistortionReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wlocal: Option<crate::glue::WLocalReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wlarge: Option<crate::glue::WLargeReport>,
}

impl VerifyReport {
    pub fn hard_failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| c.hard && c.status == Status::Fail).collect()
    }

    pub fn warnings(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| c.status == Status::Warn).collect()
    }

    pub fn passed(&self, strict: bool) -> bool {
        self.hard_failures().is_empty() && (!strict || self.warnings().is_empty())
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Fixed-width pass/fail table.
    pub fn table(&self) -> String {
        let mut out = format!("{:<24} {:<8} {:>10} {:>10}  {}\n", "check", "status", "checked", "violations", "detail");
        for c in &self.checks {
            let status = match c.status {
                Status::Pass => "pass",
                Status::Fail => "FAIL",
                Status::Warn => "warn",
                Status::Vacuous => "vacuous",
            };
            let mut detail = String::new();
            if let Some(m) = c.measured {
                detail.push_str(&format!("measured {m:.6e}"));
                if let Some(b) = c.bound {
                    detail.push_str(&format!(" bound {b:.6e}"));
                }
            }
            if let Some(w) = &c.witness {
                if !detail.is_empty() {
                    detail.push_str("; ");
                }
                detail.push_str("witness ");
                detail.push_str(w);
            }
            out.push_str(&format!("{:<24} {:<8} {:>10} {:>10}  {}\n", c.name, status, c.checked, c.violations, detail));
        }
        out
    }
}

/// Everything `verify` reads.
pub struct VerifyInput<'a> {
    pub inst: &'a Instance,
    pub f: &'a YEmbedding,
    pub tree: Option<&'a CubeTree>,
    pub decomp: Option<&'a WhitneyDecomposition>,
    pub coloring: Option<&'a Coloring>,
    pub atlas: Option<&'a PatchAtlas>,
    pub constants: &'a Constants,
    /// Problems found while loading artifacts (reported as a hard check).
    pub load_issues: Vec<String>,
}

fn first<T>(v: &[T], f: impl Fn(&T) -> String) -> Option<String> {
    v.first().map(f)
}

/// Run the whole suite on stored or fresh artifacts.
pub fn verify(input: VerifyInput<'_>) -> Result<VerifyReport> {
    let inst = input.inst;
    let space = &inst.space;
    let k = input.constants;
    let mut checks = Vec::new();
    checks.push(Check::new("artifacts", true, 1, input.load_issues.len(), input.load_issues.first().cloned()));

    // Y embedding and its extension
    let fy = &input.f.map;
    let (coord, arg) = fy.coordinate_constant(space);
    let bad = input.f.report.infinite_contraction_pairs > 0 || coord > k.l1 * (1.0 + GLUE_SLACK);
    let c = Check::new(
        "y_embedding",
        true,
        fy.domain.len(),
        usize::from(bad),
        arg.filter(|_| bad).map(|(i, a, b)| format!("coordinate {i} at {} {}", space.label(a), space.label(b))),
    );
    checks.push(c.with(input.f.l1, None));

    let n = space.len();
    let (h, decomp_ok) = match (input.decomp, input.coloring, input.atlas) {
        (Some(d), Some(col), Some(atlas)) => (assemble_h(atlas, col, n)?, Some((d, col, atlas))),
        _ => (HMap { colors: 0, m2: 0, rows: vec![SparseVec::new(); n] }, None),
    };
    let emb = assemble_f(space, &inst.y, fy, k.l1, k.m1, h)?;

    if let Some(t) = input.tree {
        let r: AxiomReport = t.verify_axioms();
        let count = r.partition_violations.len() + r.nesting_violations.len() + r.parent_violations.len() + r.structure_violations.len();
        let w = first(&r.partition_violations, |l| format!("level {l} is not a partition"))
            .or_else(|| first(&r.nesting_violations, |(a, b)| format!("cube {a} in {b}")))
            .or_else(|| first(&r.parent_violations, |a| format!("cube {a} parent/children")))
            .or_else(|| first(&r.structure_violations, |a| format!("cube {a} center")));
        checks.push(Check::new("cube_axioms", true, t.cubes.len(), count, w));
    } else {
        checks.push(Check::new("cube_axioms", true, 0, 0, None));
    }

    let mut wlocal = None;
    let mut wlarge = None;
    if let Some((d, col, atlas)) = decomp_ok {
        let m = d.len();
        let meta = d.metadata_violations(space);
        checks.push(Check::new(
            "cube_metadata",
            true,
            m,
            meta.len(),
            first(&meta, |&q| {
                format!("cube {q} stores diam {} (actual {})", d.cubes[q].diam, space.set_diameter(&d.cubes[q].members))
            }),
        ));
        let mut seen = vec![0usize; n];
        for c in &d.cubes {
            for &p in &c.members {
                seen[p] += 1;
            }
        }
        let bad: Vec<usize> = (0..n)
            .filter(|&p| {
                let in_y = inst.y.binary_search(&p).is_ok();
                seen[p] != usize::from(!in_y) || d.point_cube[p].map_or(!in_y, |q| d.cubes[q].members.binary_search(&p).is_err())
            })
            .collect();
        checks.push(Check::new("whitney_partition", true, n, bad.len(), first(&bad, |&p| format!("point {}", space.label(p)))));
        let wv = d.whitney_violations();
        let nonsingle = d.cubes.iter().filter(|c| !c.is_singleton()).count();
        checks.push(
            Check::new(
                "whitney_inequality",
                true,
                nonsingle,
                wv.len(),
                first(&wv, |v| format!("cube {}: diam {} dist {} bound {}", v.cube, v.diam, v.dist_y, v.bound)),
            )
            .with(d.comparability_bound, None),
        );
        let sym = d.star_symmetry_violations();
        checks.push(Check::new("star_symmetry", true, m, sym.len(), first(&sym, |(a, b)| format!("cubes {a} {b}"))));
        let comp = d.comparability_violations();
        checks.push(Check::new("star_comparability", false, m, comp.len(), first(&comp, |(a, b)| format!("cubes {a} {b}"))));
        let cutoffs = build_cutoffs(d, space);
        let cv = cutoffs.lipschitz_violations(space);
        checks.push(
            Check::new("cutoff_lipschitz", true, m, cv.len(), first(&cv, |(q, a, b)| format!("cube {q} at {} {}", space.label(*a), space.label(*b))))
                .with(cutoffs.lipschitz_constant, None),
        );
        let colv = col.violations(d);
        let w = first(&colv, |&(a, b)| {
            format!("cubes {a} {b} share color {} at d_W {:.6e} < rho", col.colors[a], d.whitney_distance_lossy(a, b))
        });
        checks.push(Check::new("coloring_validity", true, m, colv.len(), w).with(col.count as f64, Some(k.rho)));
        let mb = col.m_ball;
        let bound = (mb * mb.saturating_sub(1) + 1) as f64;
        checks.push(
            Check::new("color_count", true, 1, usize::from(col.count as f64 > bound), Some(format!("m = {mb}")).filter(|_| col.count as f64 > bound))
                .with(col.count as f64, Some(bound)),
        );
        let pd = atlas.distortion_violations();
        let w = pd.first().map(|&(q, meas)| {
            let (_, pair) = crate::glue::patch_constant(space, &atlas.raw[q], &cutoffs.cutoffs[q].star_points).unwrap_or((meas, None));
            let (a, b) = pair.unwrap_or_default();
            format!("cube {q}: constant {meas} > L2 at {a} {b}")
        });
        let worst = atlas.measured.iter().copied().fold(0.0, f64::max);
        checks.push(Check::new("patch_distortion", true, m, pd.len(), w).with(worst, Some(atlas.l2)));
        let supp: Vec<usize> = (0..m).filter(|&q| atlas.normalized[q].points != cutoffs.cutoffs[q].star2_points).collect();
        checks.push(Check::new("patch_support", true, m, supp.len(), first(&supp, |q| format!("cube {q}"))));
        let ann = atlas.annulus_violations(&cutoffs);
        let n_star: usize = cutoffs.cutoffs.iter().map(|c| c.star_points.len()).sum();
        checks.push(Check::new(
            "annulus",
            true,
            n_star,
            ann.len(),
            first(&ann, |&(q, p, r)| format!("cube {q} point {}: |h| = {r}", space.label(p))),
        ));
        let rv = emb.restriction_violations(&inst.y, fy);
        checks.push(Check::new("restriction_to_y", true, inst.y.len(), rv.len(), first(&rv, |&p| format!("point {}", space.label(p)))));
        let g = (0..emb.y_dim)
            .map(|i| {
                let mut best: f64 = 0.0;
                for &p in &d.omega {
                    for &q in &inst.y {
                        best = best.max((emb.g[p][i] - emb.g[q][i]).abs() / space.dist(p, q));
                    }
                }
                best
            })
            .fold(0.0, f64::max);
        checks.push(Check::new("mcshane_constant", true, usize::from(emb.y_dim > 0), usize::from(g > k.l1 * (1.0 + 1e-9)), None).with(g, Some(k.l1)));

        let wl = verify_wlocal(space, d, &emb.h, atlas.l2, atlas.c, k.rho);
        checks.push(Check::from_case("wlocal_case1", &wl.case1));
        checks.push(Check::from_case("wlocal_case2", &wl.case2));
        checks.push(Check::from_case("wlocal_case3", &wl.case3));
        let wg = verify_wlarge_scale(space, d, |p, q| emb.g_dist(p, q), &emb.dist_y, k.m1, k.l1, k.rho);
        checks.push(Check::from_case("wlarge_case1", &wg.case1));
        checks.push(Check::from_case("wlarge_case2", &wg.case2));
        let cross = verify_cross_bound(space, d, &emb.h, atlas.l2, atlas.c);
        checks.push(Check::from_case("cross_bound", &cross));
        wlocal = Some(wl);
        wlarge = Some(wg);
    } else {
        for name in ["cube_metadata", "whitney_partition", "whitney_inequality", "star_symmetry", "coloring_validity", "patch_distortion", "annulus"] {
            checks.push(Check::new(name, true, 0, 0, None));
        }
        let rv = emb.restriction_violations(&inst.y, fy);
        checks.push(Check::new("restriction_to_y", true, inst.y.len(), rv.len(), first(&rv, |&p| format!("point {}", space.label(p)))));
        for name in ["wlocal_case1", "wlocal_case2", "wlocal_case3", "wlarge_case1", "wlarge_case2"] {
            checks.push(Check::new(name, false, 0, 0, None));
        }
    }

    if let Some(pts) = &inst.grushin {
        let (mut checked, mut bad, mut w) = (0, 0, None);
        for i in 0..n {
            for j in (i + 1)..n {
                let (lo, hi) = cc_bounds(pts[i], pts[j]);
                let d = space.dist(i, j);
                checked += 1;
                if d < 0.9 * lo || d > 1.1 * hi {
                    bad += 1;
                    w.get_or_insert_with(|| format!("{} {}: {d} not in [{lo}, {hi}]", space.label(i), space.label(j)));
                }
            }
        }
        checks.push(Check::new("g2_bracketing", false, checked, bad, w));
    }

    let distortion = measure_distortion_sparse(space, &emb.rows());
    let inf = distortion.infinite_contraction_pairs;
    let w = distortion.infinite_witness.as_ref().map(|(a, b)| format!("F({a}) = F({b})"));
    checks.push(Check::new("infinite_contraction", true, distortion.n_pairs, inf, w).with(distortion.distortion, None));

    Ok(VerifyReport { checks, constants: k.clone(), distortion, wlocal, wlarge })
}

/// Suite on a fresh run.
pub fn verify_run(inst: &Instance, run: &Run) -> Result<VerifyReport> {
    let s = run.stages.as_ref();
    verify(VerifyInput {
        inst,
        f: &run.f,
        tree: s.map(|s| &s.tree),
        decomp: s.map(|s| &s.decomp),
        coloring: s.map(|s| &s.coloring),
        atlas: s.map(|s| &s.atlas),
        constants: &run.constants,
        load_issues: Vec::new(),
    })
}
