//! Run directories: the manifest, per-stage JSON artifacts and the
//! embedding CSV.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use bilip_core::io::{csv_row, fmt_f64, from_json, to_json, YInput};
use bilip_core::pipeline::{atlas_from_record, verify, AtlasRecord, Constants, Source, VerifyInput, YEmbedding};
use bilip_core::whitney::build_cutoffs;
use bilip_core::{Coloring, CubeTree, DistortionReport, GlobalEmbedding, Instance, PipelineOptions, Run, VerifyReport, WhitneyDecomposition};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{read, PipelineConfig};

pub const MANIFEST: &str = "run.json";
pub const TREE: &str = "tree.json";
pub const DECOMPOSITION: &str = "decomposition.json";
pub const COLORING: &str = "coloring.json";
pub const ATLAS: &str = "atlas.json";
pub const Y_EMBEDDING: &str = "y_embedding.json";
pub const DISTORTION: &str = "distortion.json";
pub const VERIFY: &str = "verify.json";
pub const EMBEDDING: &str = "embedding.csv";

/// Widest embedding written as a dense CSV.
pub const DENSE_CSV_LIMIT: usize = 4096;

/// What `verify` needs to rebuild the instance and find the artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub source: Source,
    /// Grushin oracle resolution of a file input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nx: Option<usize>,
    /// Labels of `Y`.
    pub y: Vec<String>,
    pub options: PipelineOptions,
    pub patches: String,
    pub constants: Constants,
    /// `false` when `Omega` is empty and no stage artifacts exist.
    pub stages: bool,
    pub embedding: String,
    /// `dense` or `long`.
    pub csv_layout: String,
}

/// Output locations of `embed`: `out` ending in `.csv` names the CSV and
/// the other artifacts go next to it; otherwise `out` is the directory.
pub fn layout(out: &Path) -> (PathBuf, PathBuf) {
    if out.extension().map_or(false, |e| e.eq_ignore_ascii_case("csv")) {
        let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        (dir.to_path_buf(), out.to_path_buf())
    } else {
        (out.to_path_buf(), out.join(EMBEDDING))
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_json(value, true)?).with_context(|| format!("cannot write {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(dir: &Path, name: &str) -> Result<T> {
    let path = dir.join(name);
    Ok(from_json(&read(&path)?, &path.display().to_string())?)
}

/// Dense rows `id,<column names>` or long rows `id,column,value` without
/// zeros.
pub fn write_csv(path: &Path, space_labels: &[String], emb: &GlobalEmbedding, long: bool) -> Result<()> {
    let file = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    let mut w = BufWriter::new(file);
    let names = emb.column_names();
    if long {
        writeln!(w, "id,column,value")?;
        for (p, label) in space_labels.iter().enumerate() {
            let row = emb.row(p);
            for (i, x) in row.iter() {
                if x != 0.0 {
                    writeln!(w, "{},{},{}", csv_row(label, std::iter::empty::<f64>()), names[i as usize], fmt_f64(x))?;
                }
            }
        }
    } else {
        writeln!(w, "id,{}", names.join(","))?;
        for (p, label) in space_labels.iter().enumerate() {
            writeln!(w, "{}", csv_row(label, emb.row(p).to_dense(emb.dim())))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Write every artifact of a run and return the manifest.
pub fn write_run(dir: &Path, csv: &Path, cfg: &PipelineConfig, inst: &Instance, run: &Run) -> Result<Manifest> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let long = cfg.sparse_csv || run.embedding.dim() > DENSE_CSV_LIMIT;
    write_csv(csv, inst.space.labels(), &run.embedding, long)?;
    if let Some(s) = &run.stages {
        write_json(&dir.join(TREE), &s.tree)?;
        write_json(&dir.join(DECOMPOSITION), &s.decomp)?;
        write_json(&dir.join(COLORING), &s.coloring)?;
        write_json(&dir.join(ATLAS), &s.record)?;
    }
    write_json(&dir.join(Y_EMBEDDING), &run.f)?;
    write_json(&dir.join(DISTORTION), &run.distortion)?;
    let manifest = Manifest {
        source: cfg.source()?,
        nx: if cfg.input.is_some() { cfg.nx } else { None },
        y: inst.y.iter().map(|&p| inst.space.label(p).to_string()).collect(),
        options: cfg.options(),
        patches: run.stages.as_ref().map_or("none".into(), |s| s.record.kind.clone()),
        constants: run.constants.clone(),
        stages: run.stages.is_some(),
        embedding: relative(csv, dir),
        csv_layout: if long { "long" } else { "dense" }.into(),
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

fn relative(path: &Path, dir: &Path) -> String {
    path.strip_prefix(dir)
        .map(|p| p.display().to_string())
        .unwrap_or_else(|_| path.display().to_string())
}

/// Rebuild the instance recorded in a manifest.
pub fn instance_of(manifest: &Manifest) -> Result<Instance> {
    let cfg = match &manifest.source {
        Source::File { path } => PipelineConfig { input: Some(path.into()), nx: manifest.nx, ..Default::default() },
        Source::Generator { generator } => PipelineConfig { generator: Some(generator.clone()), ..Default::default() },
    };
    let mut inst = cfg.instance()?;
    let y = YInput { points: Some(manifest.y.iter().cloned().map(Value::String).collect()), ..Default::default() };
    inst.set_y(&y)?;
    Ok(inst)
}

/// Index ranges a loaded decomposition must satisfy before it is used.
fn decomposition_issues(d: &WhitneyDecomposition, n: usize) -> Vec<String> {
    let mut out = Vec::new();
    let m = d.cubes.len();
    if d.n_points != n || d.point_cube.len() != n {
        out.push(format!("decomposition covers {} points, space has {n}", d.point_cube.len()));
    }
    if d.star.len() != m || d.star2.len() != m {
        out.push(format!("decomposition has {m} cubes but {} stars", d.star.len()));
    }
    let bad_point = d.cubes.iter().position(|c| c.members.is_empty() || c.members.iter().any(|&p| p >= n));
    if let Some(q) = bad_point {
        out.push(format!("cube {q} has members outside the space"));
    }
    if d.omega.iter().chain(&d.y).any(|&p| p >= n) || d.point_cube.iter().flatten().any(|&q| q >= m) {
        out.push("decomposition indices out of range".into());
    }
    if d.star.iter().chain(&d.star2).flatten().any(|&q| q >= m) {
        out.push("star lists reference missing cubes".into());
    }
    out
}

/// Load a run directory and run the invariant suite on it.
pub fn verify_dir(dir: &Path) -> Result<VerifyReport> {
    let manifest: Manifest = read_json(dir, MANIFEST)?;
    let inst = instance_of(&manifest)?;
    let n = inst.space.len();
    let f: YEmbedding = read_json(dir, Y_EMBEDDING)?;
    let mut issues = Vec::new();
    if f.map.domain != inst.y {
        issues.push("y_embedding domain differs from Y".into());
    }
    if !manifest.stages {
        return Ok(verify(VerifyInput {
            inst: &inst,
            f: &f,
            tree: None,
            decomp: None,
            coloring: None,
            atlas: None,
            constants: &manifest.constants,
            load_issues: issues,
        })?);
    }
    let mut tree: CubeTree = read_json(dir, TREE)?;
    let mut decomp: WhitneyDecomposition = read_json(dir, DECOMPOSITION)?;
    let coloring: Coloring = read_json(dir, COLORING)?;
    let record: AtlasRecord = read_json(dir, ATLAS)?;
    if tree.domain.iter().chain(tree.cubes.iter().flat_map(|c| &c.members)).any(|&p| p >= n) {
        anyhow::bail!("{}: cube tree references points outside the space", dir.join(TREE).display());
    }
    tree.reindex(n);
    let bad = decomposition_issues(&decomp, n);
    if !bad.is_empty() {
        anyhow::bail!("{}: {}", dir.join(DECOMPOSITION).display(), bad.join("; "));
    }
    decomp.attach(&inst.space);
    if decomp.y != inst.y {
        issues.push("decomposition Y differs from the manifest".into());
    }
    let coloring = match Coloring::from_colors(&decomp, coloring.colors.clone(), coloring.count, coloring.rho) {
        Ok(c) => Some(c),
        Err(e) => {
            issues.push(format!("coloring: {e}"));
            None
        }
    };
    let cutoffs = build_cutoffs(&decomp, &inst.space);
    let atlas = match atlas_from_record(&inst, &decomp, &cutoffs, &record) {
        Ok((a, more)) => {
            issues.extend(more);
            Some(a)
        }
        Err(e) => {
            issues.push(format!("atlas: {e}"));
            None
        }
    };
    Ok(verify(VerifyInput {
        inst: &inst,
        f: &f,
        tree: Some(&tree),
        decomp: Some(&decomp),
        coloring: coloring.as_ref().filter(|_| atlas.is_some()),
        atlas: atlas.as_ref().filter(|_| coloring.is_some()),
        constants: &manifest.constants,
        load_issues: issues,
    })?)
}

/// Distortion summary stored next to the CSV.
pub fn load_distortion(dir: &Path) -> Result<DistortionReport> {
    read_json(dir, DISTORTION)
}
