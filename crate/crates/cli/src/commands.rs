//! Subcommands.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bilip_core::cubes::{auto_levels, build_cube_tree};
use bilip_core::glue::{choose_m1, wlocal_radius};
use bilip_core::grushin::{build_grushin_mesh, cc_dist_oracle, DEFAULT_BALL_BUDGET, DEFAULT_TOL};
use bilip_core::io::{from_json, to_json, PatchInput};
use bilip_core::metric::diagnose;
use bilip_core::pipeline::{color, decompose, embed_y, run_pipeline, verify_run, PatchSource};
use bilip_core::{GrushinGrid, GrushinPoint, Instance, PipelineOptions, VerifyReport, WhitneyDecomposition};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::artifacts::{layout, verify_dir, write_json, write_run, VERIFY};
use crate::config::{parse_floats, parse_range, read, PipelineConfig, SourceArgs};

#[derive(Debug, Parser)]
#[command(name = "bilip", version, about = "Local-to-global bi-Lipschitz embeddings of finite metric spaces")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Doubling and uniform perfectness estimates.
    Diagnose {
        #[command(flatten)]
        src: SourceArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dyadic cube tree of the whole space.
    Cubes {
        #[command(flatten)]
        src: SourceArgs,
        /// Level range k_min:k_max (default: from the diameter down to singletons).
        #[arg(long, allow_hyphen_values = true, value_parser = parse_range)]
        levels: Option<(i32, i32)>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Whitney decomposition of X \ Y with stars and colors.
    Whitney {
        #[command(flatten)]
        src: SourceArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Coloring of the Whitney cubes.
    Color {
        #[command(flatten)]
        src: SourceArgs,
        /// Fold colors into 1..=M.
        #[arg(long)]
        colors: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full pipeline: writes the embedding CSV and every stage artifact.
    Embed(EmbedArgs),
    /// Invariant suite on a run directory.
    Verify {
        #[arg(long)]
        dir: PathBuf,
        /// Warnings also fail.
        #[arg(long)]
        strict: bool,
    },
    /// Grid shortest-path Grushin distance with its analytic bracket.
    GrushinDist {
        #[arg(long, allow_hyphen_values = true, value_parser = parse_floats::<2>)]
        from: [f64; 2],
        #[arg(long, allow_hyphen_values = true, value_parser = parse_floats::<2>)]
        to: [f64; 2],
        #[arg(long, default_value_t = 100)]
        nx: usize,
        /// Grid window; default [-2, 2]^2 grown to contain both points.
        #[arg(long, allow_hyphen_values = true, value_parser = parse_floats::<4>)]
        window: Option<[f64; 4]>,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
    },
    /// Dyadic Whitney mesh of the Grushin plane minus the axis.
    GrushinMesh {
        #[arg(long, allow_hyphen_values = true, value_parser = parse_floats::<4>)]
        window: [f64; 4],
        #[arg(long, allow_hyphen_values = true, value_parser = parse_range)]
        levels: (i32, i32),
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub src: SourceArgs,
    /// Local patch file: {"kind": "identity"} or {"kind": "explicit", "patches": [...]}.
    #[arg(long)]
    pub patches: Option<PathBuf>,
    /// Fold colors into 1..=M (too small a value is a negative control).
    #[arg(long)]
    pub colors: Option<usize>,
    /// Ball budget of Grushin chart patches.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Run directory, or the CSV path inside it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Long CSV layout (id,column,value) regardless of width.
    #[arg(long)]
    pub sparse_csv: bool,
    /// Warnings also fail.
    #[arg(long)]
    pub strict: bool,
    /// Skip the invariant suite (the infinite-contraction check still runs).
    #[arg(long)]
    pub no_verify: bool,
}

/// Run a command; the value is the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Diagnose { src, out } => {
            let cfg = src.resolve()?;
            let inst = cfg.instance()?;
            let d = diagnose(&inst.space);
            if d.degenerate {
                eprintln!("degenerate space: {} point(s), estimates are vacuous", d.n_points);
            }
            emit(out.as_deref(), &d)?;
            Ok(0)
        }
        Command::Cubes { src, levels, out } => {
            let cfg = src.resolve()?;
            let inst = cfg.instance()?;
            let delta = cfg.options().delta;
            let all: Vec<usize> = (0..inst.space.len()).collect();
            let (k0, k1) = levels.unwrap_or_else(|| auto_levels(&inst.space, &all, delta));
            let tree = build_cube_tree(&inst.space, delta, k0, k1)?;
            let axioms = tree.verify_axioms();
            #[derive(Serialize)]
            struct Out<'a> {
                labels: &'a [String],
                tree: &'a bilip_core::CubeTree,
                axioms: &'a bilip_core::cubes::AxiomReport,
            }
            emit(out.as_deref(), &Out { labels: inst.space.labels(), tree: &tree, axioms: &axioms })?;
            Ok(if axioms.is_clean() { 0 } else { 1 })
        }
        Command::Whitney { src, out } => {
            let cfg = src.resolve()?;
            let inst = cfg.instance()?;
            let (decomp, coloring, rho) = whitney_stage(&inst, &cfg.options())?;
            #[derive(Serialize)]
            struct Out<'a> {
                labels: &'a [String],
                rho: f64,
                decomposition: &'a WhitneyDecomposition,
                colors: &'a [usize],
            }
            emit(out.as_deref(), &Out { labels: inst.space.labels(), rho, decomposition: &decomp, colors: &coloring.colors })?;
            Ok(if decomp.violations.is_empty() { 0 } else { 1 })
        }
        Command::Color { src, colors, out } => {
            let mut cfg = src.resolve()?;
            if colors.is_some() {
                cfg.colors = colors;
            }
            let inst = cfg.instance()?;
            let (decomp, coloring, _) = whitney_stage(&inst, &cfg.options())?;
            let violations = coloring.violations(&decomp);
            #[derive(Serialize)]
            struct Out<'a> {
                coloring: &'a bilip_core::Coloring,
                violations: &'a [(usize, usize)],
            }
            emit(out.as_deref(), &Out { coloring: &coloring, violations: &violations })?;
            Ok(if violations.is_empty() { 0 } else { 1 })
        }
        Command::Embed(args) => embed(args),
        Command::Verify { dir, strict } => {
            let report = verify_dir(&dir)?;
            finish(&dir, &report, strict)
        }
        Command::GrushinDist { from, to, nx, window, tol } => {
            let (p, q) = (GrushinPoint::new(from[0], from[1]), GrushinPoint::new(to[0], to[1]));
            let w = window.unwrap_or_else(|| {
                let lo = |a: f64, b: f64| a.min(b).min(-2.0);
                let hi = |a: f64, b: f64| a.max(b).max(2.0);
                [lo(p.x, q.x), hi(p.x, q.x), lo(p.y, q.y), hi(p.y, q.y)]
            });
            let grid = GrushinGrid::new(w, nx, nx)?;
            let d = cc_dist_oracle(&grid, p, q, tol)?;
            if let Some(w) = &d.warning {
                eprintln!("warning: {w}");
            }
            emit(None, &d)?;
            Ok(0)
        }
        Command::GrushinMesh { window, levels, out } => {
            let mesh = build_grushin_mesh(levels.0, levels.1, window)?;
            if out.is_some() {
                eprintln!(
                    "{} cubes, diam_upper/dist in [{}, {}]",
                    mesh.cubes.len(),
                    mesh.min_lower_ratio,
                    mesh.max_upper_ratio
                );
            }
            emit(out.as_deref(), &mesh)?;
            Ok(0)
        }
    }
}

/// Write JSON to `out`, or to stdout.
fn emit<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    match out {
        Some(p) => write_json(p, value),
        None => {
            print!("{}", to_json(value, true)?);
            Ok(())
        }
    }
}

/// Decomposition and coloring with the pipeline's default `rho`.
fn whitney_stage(inst: &Instance, opts: &PipelineOptions) -> Result<(WhitneyDecomposition, bilip_core::Coloring, f64)> {
    let diag = diagnose(&inst.space);
    let (_, decomp) = decompose(inst, diag.uniform_perfectness_estimate, opts)?;
    let rho = match opts.rho {
        Some(r) => r,
        None => {
            let f = embed_y(inst).context("rho needs an embedding of Y; pass --rho")?;
            wlocal_radius(choose_m1(decomp.c1, decomp.a_used, decomp.delta, f.map.dim()), f.l1)
        }
    };
    let coloring = color(&decomp, rho, opts.max_colors)?;
    Ok((decomp, coloring, rho))
}

fn patch_source(cfg: &PipelineConfig, inst: &Instance) -> Result<PatchSource> {
    if let Some(p) = &cfg.patches {
        let input: PatchInput = from_json(&read(p)?, &p.display().to_string())?;
        return Ok(PatchSource::from_input(&input, &inst.space)?);
    }
    if inst.is_grushin() {
        return Ok(PatchSource::Chart { budget: cfg.budget.unwrap_or(DEFAULT_BALL_BUDGET) });
    }
    if cfg.input.is_some() {
        bail!("missing patch atlas: non-Grushin inputs need --patches FILE");
    }
    PatchSource::default_for(inst).context("missing patch atlas: pass --patches FILE")
}

fn embed(args: EmbedArgs) -> Result<i32> {
    let mut cfg = args.src.resolve()?;
    if args.patches.is_some() {
        cfg.patches = args.patches;
    }
    if args.colors.is_some() {
        cfg.colors = args.colors;
    }
    if args.budget.is_some() {
        cfg.budget = args.budget;
    }
    if args.out.is_some() {
        cfg.out = args.out;
    }
    cfg.sparse_csv |= args.sparse_csv;
    let out = cfg.out.clone().context("embed needs --out DIR or --out FILE.csv")?;
    let (dir, csv) = layout(&out);
    let inst = cfg.instance()?;
    let source = patch_source(&cfg, &inst)?;
    let run = run_pipeline(&inst, &source, &cfg.options())?;
    write_run(&dir, &csv, &cfg, &inst, &run)?;
    let d = &run.distortion;
    eprintln!(
        "{} points, dimension {}, distortion {} (expansion {}, contraction {})",
        inst.space.len(),
        run.embedding.dim(),
        d.distortion,
        d.expansion,
        d.contraction
    );
    if args.no_verify {
        if d.infinite_contraction_pairs > 0 {
            let (a, b) = d.infinite_witness.clone().unwrap_or_default();
            eprintln!("infinite contraction: {} pairs, e.g. F({a}) = F({b})", d.infinite_contraction_pairs);
            return Ok(1);
        }
        return Ok(0);
    }
    let report = verify_run(&inst, &run)?;
    finish(&dir, &report, args.strict)
}

/// Print the table, store the report, and map it to an exit code.
fn finish(dir: &Path, report: &VerifyReport, strict: bool) -> Result<i32> {
    print!("{}", report.table());
    write_json(&dir.join(VERIFY), report)?;
    let hard = report.hard_failures();
    let warn = report.warnings();
    if !hard.is_empty() {
        let names: Vec<&str> = hard.iter().map(|c| c.name.as_str()).collect();
        eprintln!("failed: {}", names.join(", "));
    }
    if strict && !warn.is_empty() {
        let names: Vec<&str> = warn.iter().map(|c| c.name.as_str()).collect();
        eprintln!("warnings (strict): {}", names.join(", "));
    }
    Ok(if report.passed(strict) { 0 } else { 1 })
}
