use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("distance matrix has {got} entries, expected {expected}")]
    MatrixShape { expected: usize, got: usize },

    #[error("distance matrix is not symmetric at ({0}, {1})")]
    Asymmetric(String, String),

    #[error("invalid distance {value} between {a} and {b}")]
    InvalidDistance { a: String, b: String, value: f64 },

    #[error("nonzero self-distance at {0}")]
    NonzeroDiagonal(String),

    #[error("triangle inequality violated by ({a}, {b}, {c}): d(a,c) = {ac} > d(a,b) + d(b,c) = {abc}")]
    TriangleViolation {
        a: String,
        b: String,
        c: String,
        ac: f64,
        abc: f64,
    },

    #[error("weight of {0} must be strictly positive")]
    NonPositiveWeight(String),

    #[error("{0} weights given for {1} points")]
    WeightCount(usize, usize),

    #[error("unknown point {0}")]
    UnknownPoint(String),

    #[error("empty level range {k_min}..={k_max}")]
    EmptyLevelRange { k_min: i32, k_max: i32 },

    #[error("level {level} outside tree range {k_min}..={k_max}")]
    LevelOutOfRange { level: i32, k_min: i32, k_max: i32 },

    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("closed set Y is empty")]
    EmptyY,

    #[error("Omega = X \\ Y is empty")]
    EmptyOmega,

    #[error("cube tree must be built on exactly the points of Omega")]
    TreeDomainMismatch,

    #[error("cube tree levels {k_min}..={k_max} do not cover the required layer range {need_min}..={need_max}")]
    LayerRangeUncovered {
        k_min: i32,
        k_max: i32,
        need_min: i32,
        need_max: i32,
    },

    #[error("Whitney distance undefined between two singleton cubes {0} and {1}")]
    SingletonWhitneyDistance(usize, usize),

    #[error("map is not {declared}-Lipschitz: coordinate {coord} between {a} and {b} has ratio {ratio}")]
    NotLipschitz {
        declared: f64,
        coord: usize,
        a: String,
        b: String,
        ratio: f64,
    },

    #[error("map values do not match its domain ({0} values, {1} points)")]
    MapShape(usize, usize),

    #[error("patch for cube {cube} has bi-Lipschitz constant {measured} > {declared} on Q* (witness {a}, {b})")]
    PatchDistortion {
        cube: usize,
        declared: f64,
        measured: f64,
        a: String,
        b: String,
    },

    #[error("annulus normalization infeasible for cube {cube} with c = {c}; needs c >= {required}")]
    AnnulusInfeasible { cube: usize, c: f64, required: f64 },

    #[error("no patch supplied for cubes {0:?}")]
    MissingPatches(Vec<usize>),

    #[error("patch for cube {cube} does not cover point {point} of Q**")]
    PatchCoverage { cube: usize, point: String },

    #[error("color index {color} of cube {cube} exceeds color count {count}")]
    ColorOutOfRange { cube: usize, color: usize, count: usize },

    #[error("covering of Q** for cube {cube} needs {needed} balls, budget is {budget}")]
    CoveringBudget {
        cube: usize,
        needed: usize,
        budget: usize,
    },

    #[error("grid graph is disconnected between nodes {0} and {1}")]
    Disconnected(usize, usize),

    #[error("mesh selection is empty")]
    EmptyMesh,

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("Y embedding missing: {0}")]
    MissingYEmbedding(String),

    #[error("malformed input: {0}")]
    Input(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
