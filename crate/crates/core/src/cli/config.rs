use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coefficients::CoefficientFamily;
use crate::matcore::Mat;
use crate::solver::{DataPreset, InitialData};
use crate::symmetrizer::Symmetrizer;

use super::CliError;

/// One experiment, read from a single JSON file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub m: usize,
    pub coefficients: CoefficientConfig,
    #[serde(default)]
    pub symmetrizer: SymmetrizerSource,
    pub data: DataConfig,
    pub grid: usize,
    #[serde(rename = "box")]
    pub box_size: f64,
    pub t_final: f64,
    pub n_t: usize,
    pub output_times: Vec<f64>,
    #[serde(default)]
    pub checks: Checks,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("hypercone-out")
}

/// `matrices[j]` holds the rows of `A_j`.
type Matrices = Vec<Vec<Vec<f64>>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientConfig {
    Constant {
        matrices: Matrices,
    },
    Smooth {
        matrices: Matrices,
        omega: f64,
    },
    Piecewise {
        jumps: Vec<f64>,
        levels: Vec<Matrices>,
    },
    Holder {
        matrices: Matrices,
        t0: f64,
        gamma: f64,
        #[serde(default)]
        offset: f64,
    },
    Singular {
        matrices: Matrices,
        t0: f64,
    },
    Csv {
        path: PathBuf,
    },
}

impl CoefficientConfig {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Constant { .. } => "constant",
            Self::Smooth { .. } => "smooth",
            Self::Piecewise { .. } => "piecewise",
            Self::Holder { .. } => "holder",
            Self::Singular { .. } => "singular",
            Self::Csv { .. } => "csv",
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum SymmetrizerSource {
    #[default]
    Identity,
    BuildStrict,
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    Bump,
    Ring,
    Hole,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub preset: DataKind,
    pub r0: f64,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    /// Defaults to the first unit vector.
    #[serde(default)]
    pub polarization: Option<Vec<f64>>,
    /// Shell width of the hole preset; defaults to `r0`.
    #[serde(default)]
    pub width: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checks {
    #[serde(default)]
    pub cone: bool,
    #[serde(default)]
    pub dod: bool,
    #[serde(default)]
    pub pw: bool,
    #[serde(default)]
    pub energy: bool,
    #[serde(default)]
    pub mollifier_bounds: bool,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Ball on which the data vanish; defaults to the hole of the data preset.
    #[serde(default)]
    pub dod_region: Option<Region>,
    #[serde(default)]
    pub pw_settings: PwConfig,
    #[serde(default = "default_eps")]
    pub mollifier_eps: Vec<f64>,
}

impl Default for Checks {
    fn default() -> Self {
        Self {
            cone: true,
            dod: false,
            pw: false,
            energy: false,
            mollifier_bounds: false,
            threshold: default_threshold(),
            dod_region: None,
            pw_settings: PwConfig::default(),
            mollifier_eps: default_eps(),
        }
    }
}

fn default_threshold() -> f64 {
    crate::verify::DEFAULT_THRESHOLD
}

fn default_eps() -> Vec<f64> {
    vec![0.2, 0.1, 0.05, 0.02]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub center: Vec<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PwConfig {
    pub directions: usize,
    pub magnitudes: usize,
    pub delta: f64,
}

impl Default for PwConfig {
    fn default() -> Self {
        Self { directions: 8, magnitudes: 12, delta: 0.05 }
    }
}

/// A parsed config together with its source bytes and location.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub sha256: String,
    pub base_dir: PathBuf,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl LoadedConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_bytes(&bytes, base_dir)
    }

    pub fn from_bytes(bytes: &[u8], base_dir: PathBuf) -> Result<Self, CliError> {
        let config: ExperimentConfig = serde_json::from_slice(bytes).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(Self { config, sha256: sha256_hex(bytes), base_dir })
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn family(&self) -> Result<CoefficientFamily, CliError> {
        let cfg = &self.config;
        let t = cfg.t_final;
        let family = match &cfg.coefficients {
            CoefficientConfig::Constant { matrices } => CoefficientFamily::constant(mats(matrices)?, t),
            CoefficientConfig::Smooth { matrices, omega } => CoefficientFamily::smooth(mats(matrices)?, *omega, t),
            CoefficientConfig::Piecewise { jumps, levels } => {
                CoefficientFamily::piecewise(jumps.clone(), levels.iter().map(mats).collect::<Result<_, _>>()?, t)
            }
            CoefficientConfig::Holder { matrices, t0, gamma, offset } => CoefficientFamily::holder(mats(matrices)?, *t0, *gamma, *offset, t),
            CoefficientConfig::Singular { matrices, t0 } => CoefficientFamily::singular(mats(matrices)?, *t0, t),
            CoefficientConfig::Csv { path } => CoefficientFamily::from_csv_path(&self.resolve(path)),
        }
        .map_err(|e| CliError::Config(format!("coefficients: {e}")))?;
        if family.n() != cfg.n || family.m() != cfg.m {
            return Err(CliError::Config(format!("coefficients have (n, m) = ({}, {}), config says ({}, {})", family.n(), family.m(), cfg.n, cfg.m)));
        }
        if (family.t_final() - t).abs() > 1e-12 * t {
            return Err(CliError::Config(format!("coefficient table ends at {}, config has t_final = {t}", family.t_final())));
        }
        Ok(family)
    }

    pub fn file_symmetrizer(&self) -> Option<Result<Symmetrizer, CliError>> {
        match &self.config.symmetrizer {
            SymmetrizerSource::File { path } => {
                Some(Symmetrizer::from_json_path(&self.resolve(path)).map_err(|e| CliError::Config(format!("symmetrizer: {e}"))))
            }
            _ => None,
        }
    }
}

fn mats(rows: &Matrices) -> Result<Vec<Mat>, CliError> {
    rows.iter()
        .map(|a| {
            let m = a.len();
            if m == 0 || a.iter().any(|r| r.len() != m) {
                return Err(CliError::Config("each coefficient matrix must be square and nonempty".into()));
            }
            let flat: Vec<f64> = a.iter().flatten().copied().collect();
            Mat::from_real(m, &flat).map_err(|e| CliError::Config(e.to_string()))
        })
        .collect()
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if !(1..=3).contains(&self.n) {
            return bad(format!("n = {} must be 1, 2 or 3", self.n));
        }
        if self.m == 0 || self.m > 8 {
            return bad(format!("m = {} must be between 1 and 8", self.m));
        }
        if self.grid < 4 || !self.grid.is_multiple_of(2) {
            return bad(format!("grid = {} must be even and at least 4", self.grid));
        }
        if !(self.box_size > 0.0 && self.box_size.is_finite()) {
            return bad("box must be positive".into());
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return bad("t_final must be positive".into());
        }
        if self.n_t < crate::solver::MIN_STEPS {
            return bad(format!("n_t = {} must be at least {}", self.n_t, crate::solver::MIN_STEPS));
        }
        if self.output_times.iter().any(|t| !(0.0..=self.t_final).contains(t)) {
            return bad("output_times must lie in [0, t_final]".into());
        }
        let d = &self.data;
        if !(d.r0 > 0.0) {
            return bad("data.r0 must be positive".into());
        }
        if d.x0.as_ref().is_some_and(|x| x.len() != self.n) {
            return bad("data.x0 must have n entries".into());
        }
        if d.polarization.as_ref().is_some_and(|p| p.len() != self.m) {
            return bad("data.polarization must have m entries".into());
        }
        let data = self.initial_data();
        let reach = data.outer_radius() + data.x0.iter().map(|x| x * x).sum::<f64>().sqrt();
        if reach >= 0.5 * self.box_size {
            return bad(format!("data reach |x0| + r = {reach} must be below L/2 = {}", 0.5 * self.box_size));
        }
        if let Some(r) = &self.checks.dod_region {
            if r.center.len() != self.n || !(r.radius > 0.0) {
                return bad("checks.dod_region needs n center coordinates and a positive radius".into());
            }
        }
        if self.checks.dod && self.checks.dod_region.is_none() && data.hole_radius().is_none() {
            return bad("the dod check needs checks.dod_region or a data preset with a hole".into());
        }
        let pw = &self.checks.pw_settings;
        if pw.magnitudes < 7 || pw.directions == 0 || !(pw.delta >= 0.0) {
            return bad("pw_settings needs at least 7 magnitudes, one direction and δ ≥ 0".into());
        }
        if !(self.checks.threshold > 0.0 && self.checks.threshold < 1.0) {
            return bad("checks.threshold must lie in (0, 1)".into());
        }
        if self.checks.mollifier_eps.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
            return bad("mollifier_eps entries must lie in (0, 1]".into());
        }
        Ok(())
    }

    pub fn initial_data(&self) -> InitialData {
        let d = &self.data;
        let preset = match d.preset {
            DataKind::Bump => DataPreset::Bump,
            DataKind::Ring => DataPreset::Ring,
            DataKind::Hole => DataPreset::Hole { width: d.width.unwrap_or(d.r0) },
        };
        let x0 = d.x0.clone().unwrap_or_else(|| vec![0.0; self.n]);
        let polarization = d.polarization.clone().unwrap_or_else(|| {
            let mut e = vec![0.0; self.m];
            e[0] = 1.0;
            e
        });
        InitialData::new(preset, d.r0, x0, polarization)
    }

    /// Ball used by the domain-of-dependence check.
    pub fn dod_region(&self) -> Option<Region> {
        self.checks.dod_region.clone().or_else(|| {
            let data = self.initial_data();
            data.hole_radius().map(|radius| Region { center: data.x0.clone(), radius })
        })
    }
}
