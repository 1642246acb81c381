//! TOML run configuration and its canonical hash.
//!
//! Keys by table (defaults in parentheses):
//!
//! - `[physics]`: `c`, `mass` (1), `hbar` (1), `a` (-4 pi), `b` (1), `kappa` (1), `rho_s` (preset with
//!   `omega_s = omega_c`), `coupling` (`"linear"` or `"piecewise"`).
//! - `[grid]`: `points` (integer or three), `extent` (number or three), `boundary`
//!   (`"dirichlet"` or `"periodic"`).
//! - `[initial]`: `position`, optional `velocity`, and the field as a list of `modes`
//!   (`n = [nx, ny, nz]`, `re`, `im`) and/or `gaussians` (`center`, `width`, `momentum`, `amplitude`);
//!   `normalize` (false) rescales to unit norm.
//! - `[run]`: `t_end`, `dt`, `snapshot_every` (100, 0 disables), `laplacian` (`"spectral"` or
//!   `"seven_point"`), `probes`, `seed` (0).
//! - `[converge]`: `lights`, `reference_dt` (1e-3), `dt_factor` (1).
//! - `[measure]`: `cells`, `duration` (20/(kappa omega_c)), `dt` (duration/400), `trials` (0).
//! - `[greens]`: `source` (`amplitude`, `t_center`, `t_width`, `radius`), `points` (`[r, t]` pairs),
//!   `steps`, `kernel_radii`, `truncations`.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{Boundary, ComplexField, Grid3};
use crate::params::{CouplingKind, PhysicalParams};
use crate::spectral::LaplacianKind;

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Triple<T> {
    One(T),
    Three([T; 3]),
}

impl<T: Copy> Triple<T> {
    pub fn expand(&self) -> [T; 3] {
        match self {
            Triple::One(v) => [*v; 3],
            Triple::Three(v) => *v,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsConfig {
    pub c: f64,
    #[serde(default = "one")]
    pub mass: f64,
    #[serde(default = "one")]
    pub hbar: f64,
    #[serde(default = "default_a")]
    pub a: f64,
    #[serde(default = "one")]
    pub b: f64,
    #[serde(default = "one")]
    pub kappa: f64,
    pub rho_s: Option<f64>,
    #[serde(default)]
    pub coupling: CouplingKind,
}

fn one() -> f64 {
    1.0
}
fn default_a() -> f64 {
    -4.0 * PI
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub points: Triple<usize>,
    pub extent: Triple<f64>,
    pub boundary: Boundary,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeConfig {
    pub n: [i64; 3],
    #[serde(default)]
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianConfig {
    pub center: [f64; 3],
    pub width: f64,
    #[serde(default)]
    pub momentum: [f64; 3],
    #[serde(default = "one")]
    pub amplitude: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub position: [f64; 3],
    pub velocity: Option<[f64; 3]>,
    #[serde(default)]
    pub modes: Vec<ModeConfig>,
    #[serde(default)]
    pub gaussians: Vec<GaussianConfig>,
    #[serde(default)]
    pub normalize: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub t_end: f64,
    pub dt: Option<f64>,
    #[serde(default = "default_snapshots")]
    pub snapshot_every: usize,
    #[serde(default)]
    pub laplacian: LaplacianKind,
    #[serde(default)]
    pub probes: Vec<[f64; 3]>,
    #[serde(default)]
    pub seed: u64,
}

fn default_snapshots() -> usize {
    100
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergeConfig {
    pub lights: Vec<f64>,
    #[serde(default = "default_reference_dt")]
    pub reference_dt: f64,
    #[serde(default = "one")]
    pub dt_factor: f64,
}

fn default_reference_dt() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureConfig {
    pub cells: [usize; 3],
    pub duration: Option<f64>,
    pub dt: Option<f64>,
    #[serde(default)]
    pub trials: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub amplitude: f64,
    pub t_center: f64,
    pub t_width: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GreensConfig {
    pub source: SourceConfig,
    pub points: Vec<[f64; 2]>,
    pub steps: Vec<f64>,
    #[serde(default)]
    pub kernel_radii: Vec<f64>,
    #[serde(default)]
    pub truncations: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub physics: PhysicsConfig,
    pub grid: Option<GridConfig>,
    pub initial: Option<InitialConfig>,
    pub run: Option<RunConfig>,
    pub converge: Option<ConvergeConfig>,
    pub measure: Option<MeasureConfig>,
    pub greens: Option<GreensConfig>,
}

/// Parse errors carry toml's line and column; missing keys are reported by name.
pub fn parse_config(text: &str) -> Result<Config> {
    toml::from_str(text).map_err(|e| {
        let msg = e.to_string();
        match missing_field(&msg) {
            Some(key) => Error::MissingKey(key.to_string()),
            None => Error::Config(msg.trim().to_string()),
        }
    })
}

fn missing_field(msg: &str) -> Option<&str> {
    let rest = &msg[msg.find("missing field `")? + "missing field `".len()..];
    Some(&rest[..rest.find('`')?])
}

pub fn load_config(path: &Path) -> Result<(Config, String)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let cfg = parse_config(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })?;
    Ok((cfg, text))
}

/// SHA-256 of the document re-serialised with sorted keys, so it ignores ordering,
/// whitespace and comments.
pub fn config_hash(text: &str) -> Result<String> {
    let value: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let canonical = toml::to_string(&value).map_err(|e| Error::Config(e.to_string()))?;
    let digest = Sha256::digest(canonical.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

impl Config {
    pub fn params(&self) -> Result<PhysicalParams> {
        let p = &self.physics;
        Ok(PhysicalParams::new(p.mass, p.c, p.hbar, p.a, p.b, p.kappa, p.rho_s)?.with_kind(p.coupling))
    }

    pub fn grid(&self) -> Result<Grid3> {
        let g = self.grid.as_ref().ok_or_else(|| Error::MissingKey("grid".into()))?;
        Grid3::new(g.extent.expand(), g.points.expand(), g.boundary)
    }

    pub fn initial(&self) -> Result<&InitialConfig> {
        self.initial.as_ref().ok_or_else(|| Error::MissingKey("initial".into()))
    }

    pub fn run(&self) -> Result<&RunConfig> {
        self.run.as_ref().ok_or_else(|| Error::MissingKey("run".into()))
    }

    /// Sum of the configured modes and Gaussians on `grid`.
    pub fn initial_field(&self, grid: &Grid3) -> Result<ComplexField> {
        let init = self.initial()?;
        if init.modes.is_empty() && init.gaussians.is_empty() {
            return Err(Error::Config("initial field needs at least one mode or gaussian".into()));
        }
        let l = grid.extent();
        let dirichlet = grid.boundary() == Boundary::DirichletZero;
        for m in &init.modes {
            if dirichlet && m.n.iter().any(|&k| k < 1) {
                return Err(Error::Config(format!("box mode {:?} needs positive indices", m.n)));
            }
        }
        for gs in &init.gaussians {
            if !(gs.width > 0.0) {
                return Err(Error::Config(format!("gaussian width must be positive, got {}", gs.width)));
            }
        }
        let mut psi = ComplexField::from_fn(grid, |x| {
            let mut v = Complex64::new(0.0, 0.0);
            for m in &init.modes {
                let amp = Complex64::new(m.re, m.im);
                let shape = if dirichlet {
                    Complex64::new((0..3).map(|a| (m.n[a] as f64 * PI * x[a] / l[a]).sin()).product(), 0.0)
                } else {
                    Complex64::from_polar(1.0, (0..3).map(|a| 2.0 * PI * m.n[a] as f64 * x[a] / l[a]).sum())
                };
                v += amp * shape;
            }
            for gs in &init.gaussians {
                let r2: f64 = (0..3).map(|a| (x[a] - gs.center[a]).powi(2)).sum();
                let phase: f64 = (0..3).map(|a| gs.momentum[a] * x[a]).sum();
                v += Complex64::from_polar(gs.amplitude * (-r2 / (4.0 * gs.width * gs.width)).exp(), phase);
            }
            v
        });
        psi.enforce_boundary();
        if init.normalize {
            let n = (psi.norm_sqr() * grid.cell_volume()).sqrt();
            if !(n > 0.0) {
                return Err(Error::DegenerateDensity);
            }
            psi.scale(Complex64::new(1.0 / n, 0.0));
        }
        Ok(psi)
    }
}
