//! TOML run configuration.
//!
//! ```toml
//! seed = 7
//!
//! [ensemble]
//! n = 400
//! sigma2 = 1.0
//! entry_law = { kind = "gaussian_complex" }
//! deformation = { quantile_spec = { kind = "atoms", atoms = [[-1.0, 0.5], [1.0, 0.5]] } }
//!
//! [grid]
//! z = [[0.0, 2.0], [1.0, 1.0]]
//!
//! [simulate]
//! samples = 2000
//! test_functions = ["arctan"]
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dwlab::ensemble::EnsembleParams;
use dwlab::infinitesimal::{GeneratorSpec, MomentTable};
use dwlab::montecarlo::DEFAULT_IM_FLOOR;
use dwlab::{Complex64, Error};
use serde::Deserialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub ensemble: Option<EnsembleParams>,
    #[serde(default)]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub theory: TheoryConfig,
    #[serde(default)]
    pub simulate: Option<SimulateConfig>,
    #[serde(default)]
    pub compare: Option<CompareConfig>,
    #[serde(default)]
    pub density: Option<DensityConfig>,
    #[serde(default)]
    pub infinitesimal: Option<InfinitesimalConfig>,
    #[serde(default)]
    pub identities: Option<IdentitiesConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// `[re, im]` pairs.
    pub z: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TheoryMode {
    #[default]
    FiniteN,
    Limit,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryConfig {
    #[serde(default)]
    pub mode: TheoryMode,
    /// Test functions for the bias and variance extensions.
    #[serde(default)]
    pub test_functions: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub samples: usize,
    #[serde(default)]
    pub test_functions: Vec<String>,
    #[serde(default)]
    pub truncate: bool,
    /// Truncation level; `1 / log N` when absent.
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default = "default_im_floor")]
    pub im_floor: f64,
}

fn default_im_floor() -> f64 {
    DEFAULT_IM_FLOOR
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    /// Report written by `simulate`, relative to the config file.
    pub report: PathBuf,
    #[serde(default)]
    pub bias_z_max: Option<f64>,
    #[serde(default)]
    pub covariance_z_max: Option<f64>,
    #[serde(default)]
    pub ks_p_min: Option<f64>,
    #[serde(default)]
    pub check_variance_bounds: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub points: usize,
    #[serde(default)]
    pub test_functions: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorConfig {
    AlternatingSign,
    UniformDiagonal { lo: f64, hi: f64 },
    Diagonal { values: Vec<f64> },
    /// Real symmetric matrix, one comma separated row per line.
    MatrixFile { path: PathBuf },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossCheckConfig {
    pub n: usize,
    pub samples: usize,
    #[serde(default = "one")]
    pub sigma2: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfinitesimalConfig {
    pub words: Vec<String>,
    pub dims: Vec<usize>,
    #[serde(default = "one")]
    pub n_sigma2: f64,
    #[serde(default)]
    pub generators: BTreeMap<String, GeneratorConfig>,
    /// Abstract `tr` moments for free moments without matrices.
    #[serde(default)]
    pub moments: Option<MomentTable>,
    #[serde(default)]
    pub cross_check: Option<CrossCheckConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentitiesConfig {
    #[serde(default = "default_identity_samples")]
    pub samples: usize,
    /// Row removed for the Schur formulas.
    #[serde(default)]
    pub minor: usize,
}

fn default_identity_samples() -> usize {
    10
}

impl GeneratorConfig {
    pub fn spec(&self) -> Option<GeneratorSpec> {
        match self {
            Self::AlternatingSign => Some(GeneratorSpec::AlternatingSign),
            Self::UniformDiagonal { lo, hi } => Some(GeneratorSpec::UniformDiagonal { lo: *lo, hi: *hi }),
            Self::Diagonal { values } => Some(GeneratorSpec::Diagonal { values: values.clone() }),
            Self::MatrixFile { .. } => None,
        }
    }
}

/// A parsed config together with its source location and digest.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base_dir: PathBuf,
    pub digest: String,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        let mut loaded = Self::parse(&text)?;
        loaded.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(loaded)
    }

    pub fn parse(text: &str) -> Result<Self, Error> {
        let config: RunConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        let digest = hex::encode(&Sha256::digest(text.as_bytes())[..8]);
        Ok(Self {
            config,
            base_dir: PathBuf::new(),
            digest,
        })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn ensemble(&self) -> Result<&EnsembleParams, Error> {
        self.config
            .ensemble
            .as_ref()
            .ok_or_else(|| config_err("missing [ensemble] block"))
    }

    pub fn grid(&self) -> Result<Vec<Complex64>, Error> {
        let grid = self.config.grid.as_ref().ok_or_else(|| config_err("missing [grid] block"))?;
        if grid.z.is_empty() {
            return Err(config_err("grid.z is empty"));
        }
        let z: Vec<Complex64> = grid.z.iter().map(|[re, im]| Complex64::new(*re, *im)).collect();
        if let Some(bad) = z.iter().find(|z| z.im == 0.0 || !z.is_finite()) {
            return Err(config_err(format!("grid point {bad} must be finite and off the real axis")));
        }
        Ok(z)
    }

    pub fn seed(&self, flag: Option<u64>) -> Result<u64, Error> {
        flag.or(self.config.seed)
            .ok_or_else(|| config_err("no seed: set `seed` in the config or pass --seed"))
    }

    pub fn section<'a, T>(&self, section: &'a Option<T>, name: &str) -> Result<&'a T, Error> {
        section.as_ref().ok_or_else(|| config_err(format!("missing [{name}] block")))
    }
}
