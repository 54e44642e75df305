//! Bi-Lipschitz embeddings of finite doubling metric spaces by local-to-global
//! gluing.
//!
//! The pipeline runs in stages, each in its own module:
//!
//! * [`metric`]: finite metric spaces, nets and doubling / uniform
//!   perfectness diagnostics.
//! * [`cubes`]: the nested dyadic cube hierarchy built from a cascade of
//!   greedy nets.
//! * [`whitney`]: the Whitney decomposition of `X \ Y`, cube neighborhoods,
//!   cutoff functions, the Whitney distance and the cube coloring.
//! * [`lipschitz`]: McShane extension, the multiscale snowflake embedder and
//!   the distortion harness.
//! * [`glue`]: patch normalization and assembly of the global map.
//! * [`grushin`]: the Grushin plane: grid distance oracle, analytic bounds,
//!   dyadic mesh and chart-based local embeddings.
//! * [`pipeline`]: end-to-end drivers and the invariant suite.

pub mod cubes;
pub mod error;
pub mod glue;
pub mod grushin;
pub mod io;
pub mod lipschitz;
pub mod metric;
pub mod pipeline;
pub mod sparse;
pub mod whitney;

pub use cubes::{Cube, CubeId, CubeTree};
pub use error::{Error, Result};
pub use glue::{GlobalEmbedding, PatchAtlas};
pub use pipeline::{Generator, Instance, PipelineOptions, Run, VerifyReport};
pub use grushin::{GrushinGrid, GrushinPoint, GrushinWhitneyMesh};
pub use lipschitz::{DistortionReport, LipschitzMap};
pub use metric::{FiniteMetricSpace, Net, SpaceDiagnostics};
pub use sparse::SparseVec;
pub use whitney::{Coloring, CutoffFamily, WhitneyDecomposition};
