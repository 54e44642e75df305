//! Pipeline configuration: a TOML file with command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bilip_core::io::{from_json, SpaceInput, YInput};
use bilip_core::pipeline::Source;
use bilip_core::{Generator, Instance, PipelineOptions};
use clap::Args;
use serde::{Deserialize, Serialize};

/// Everything a run depends on. Fields left unset fall back to defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Space file (JSON).
    pub input: Option<PathBuf>,
    /// Built-in instance, used when no input file is given.
    pub generator: Option<Generator>,
    /// `Y` file, or the predicate `"axis"`.
    pub y: Option<String>,
    pub delta: Option<f64>,
    pub epsilon: Option<f64>,
    pub rho: Option<f64>,
    pub l2: Option<f64>,
    pub c: Option<f64>,
    /// Fold the coloring into this many colors.
    pub colors: Option<usize>,
    /// Grushin grid resolution for file inputs.
    pub nx: Option<usize>,
    /// Seed of the random generator.
    pub seed: Option<u64>,
    /// Local patch file.
    pub patches: Option<PathBuf>,
    /// Ball budget of Grushin chart patches.
    pub budget: Option<usize>,
    /// Output path: a directory, or the embedding CSV inside one.
    pub out: Option<PathBuf>,
    pub sparse_csv: bool,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read(path)?;
        Self::from_toml(&text).with_context(|| format!("config {}", path.display()))
    }

    pub fn options(&self) -> PipelineOptions {
        let d = PipelineOptions::default();
        PipelineOptions {
            delta: self.delta.unwrap_or(d.delta),
            epsilon: self.epsilon.unwrap_or(d.epsilon),
            rho: self.rho,
            l2: self.l2,
            c: self.c,
            max_colors: self.colors,
        }
    }

    /// Where the instance comes from.
    pub fn source(&self) -> Result<Source> {
        match (&self.input, &self.generator) {
            (Some(p), _) => Ok(Source::File { path: p.display().to_string() }),
            (None, Some(g)) => Ok(Source::Generator { generator: g.clone() }),
            (None, None) => bail!("no input: give --input FILE, --generator NAME or a config file"),
        }
    }

    /// Load or generate the instance and apply the `Y` specification.
    pub fn instance(&self) -> Result<Instance> {
        let y = self.y_input()?;
        match self.source()? {
            Source::File { path } => {
                let path = PathBuf::from(path);
                let mut input: SpaceInput = from_json(&read(&path)?, &path.display().to_string())?;
                if self.nx.is_some() {
                    input.nx = self.nx;
                }
                Ok(Instance::from_input(&input, y.as_ref())?)
            }
            Source::Generator { generator } => {
                let mut inst = Instance::generate(&generator)?;
                if let Some(y) = &y {
                    inst.set_y(y)?;
                }
                Ok(inst)
            }
        }
    }

    fn y_input(&self) -> Result<Option<YInput>> {
        match self.y.as_deref() {
            None => Ok(None),
            Some("axis") => Ok(Some(YInput { predicate: Some("axis".into()), ..Default::default() })),
            Some(path) => {
                let path = Path::new(path);
                Ok(Some(YInput::parse(&read(path)?).with_context(|| format!("Y file {}", path.display()))?))
            }
        }
    }
}

pub fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

/// Parse `a,b,...` into exactly `N` floats.
pub fn parse_floats<const N: usize>(s: &str) -> Result<[f64; N], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != N {
        return Err(format!("expected {N} comma-separated numbers, found {}", parts.len()));
    }
    let mut out = [0.0; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().map_err(|_| format!("not a number: {p}"))?;
    }
    Ok(out)
}

/// Parse `j0:j1`.
pub fn parse_range(s: &str) -> Result<(i32, i32), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected j0:j1, found {s}"))?;
    let a = a.trim().parse().map_err(|_| format!("not an integer: {a}"))?;
    let b = b.trim().parse().map_err(|_| format!("not an integer: {b}"))?;
    Ok((a, b))
}

/// Flags shared by every command that loads a space.
#[derive(Debug, Clone, Default, Args)]
pub struct SourceArgs {
    /// TOML configuration file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Space file (JSON).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Built-in instance: grushin, grid, line or random.
    #[arg(long)]
    pub generator: Option<String>,
    /// Point count (grid side for `grid`).
    #[arg(long)]
    pub n: Option<usize>,
    /// Dimension of the random generator.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Grushin window xmin,xmax,ymin,ymax.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_floats::<4>)]
    pub window: Option<[f64; 4]>,
    /// Grushin grid cells along x (file inputs: oracle resolution).
    #[arg(long)]
    pub nx: Option<usize>,
    #[arg(long)]
    pub ny: Option<usize>,
    /// Grushin oracle refinement factor.
    #[arg(long)]
    pub refine: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `Y` file (ids, or an object with points/predicate/embedding) or `axis`.
    #[arg(long)]
    pub y: Option<String>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// W-local radius override.
    #[arg(long)]
    pub rho: Option<f64>,
}

impl SourceArgs {
    /// The config file (if any) with every given flag applied on top.
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(p) = &self.input {
            cfg.input = Some(p.clone());
            cfg.generator = None;
        }
        if let Some(name) = &self.generator {
            cfg.input = None;
            cfg.generator = Some(default_generator(name)?);
        }
        if let Some(g) = &mut cfg.generator {
            self.apply(g);
        }
        if cfg.input.is_some() && self.nx.is_some() {
            cfg.nx = self.nx;
        }
        if self.seed.is_some() {
            cfg.seed = self.seed;
        }
        if let (Some(Generator::Random { seed, .. }), Some(s)) = (&mut cfg.generator, cfg.seed) {
            *seed = s;
        }
        macro_rules! take {
            ($($f:ident),*) => { $( if self.$f.is_some() { cfg.$f = self.$f.clone(); } )* };
        }
        take!(y, delta, epsilon, rho);
        Ok(cfg)
    }

    fn apply(&self, g: &mut Generator) {
        match g {
            Generator::Grushin { window, nx, ny, refine } => {
                if let Some(w) = self.window {
                    *window = w;
                }
                if let Some(v) = self.nx {
                    *nx = v;
                    *ny = self.ny.unwrap_or(v);
                }
                if let Some(v) = self.ny {
                    *ny = v;
                }
                if let Some(v) = self.refine {
                    *refine = v;
                }
            }
            Generator::Grid { n } | Generator::Line { n } => {
                if let Some(v) = self.n {
                    *n = v;
                }
            }
            Generator::Random { n, dim, .. } => {
                if let Some(v) = self.n {
                    *n = v;
                }
                if let Some(v) = self.dim {
                    *dim = v;
                }
            }
        }
    }
}

/// Generator by name with its default parameters.
pub fn default_generator(name: &str) -> Result<Generator> {
    Ok(match name {
        "grushin" => Generator::grushin_window(),
        "grid" => Generator::Grid { n: 10 },
        "line" => Generator::Line { n: 257 },
        "random" => Generator::Random { n: 100, dim: 2, seed: 0 },
        other => bail!("unknown generator {other}: expected grushin, grid, line or random"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let text = r#"
            y = "axis"
            delta = 0.5
            colors = 3
            sparse_csv = true

            [generator]
            kind = "grushin"
            window = [-1.0, 1.0, -1.0, 1.0]
            nx = 8
            ny = 8
            refine = 1
        "#;
        let cfg = PipelineConfig::from_toml(text).unwrap();
        assert_eq!(cfg.colors, Some(3));
        assert!(cfg.sparse_csv);
        assert!(matches!(cfg.generator, Some(Generator::Grushin { nx: 8, .. })));
        let back = PipelineConfig::from_toml(&toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert!(PipelineConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "rho = 2.0\nseed = 4\n[generator]\nkind = \"random\"\nn = 10\ndim = 3\nseed = 1\n").unwrap();
        let args = SourceArgs { config: Some(path), n: Some(20), rho: Some(5.0), ..Default::default() };
        let cfg = args.resolve().unwrap();
        assert_eq!(cfg.generator, Some(Generator::Random { n: 20, dim: 3, seed: 4 }));
        assert_eq!(cfg.rho, Some(5.0));
        let args = SourceArgs { generator: Some("grushin".into()), nx: Some(10), ..Default::default() };
        match args.resolve().unwrap().generator {
            Some(Generator::Grushin { nx, ny, .. }) => assert_eq!((nx, ny), (10, 10)),
            g => panic!("{g:?}"),
        }
    }

    #[test]
    fn parsers() {
        assert_eq!(parse_floats::<2>("1, -2.5").unwrap(), [1.0, -2.5]);
        assert!(parse_floats::<2>("1").is_err());
        assert_eq!(parse_range("-1:3").unwrap(), (-1, 3));
        assert!(parse_range("3").is_err());
    }
}
