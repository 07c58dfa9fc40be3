use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use ultrakfp::{Axis, CoefficientSpec, DiffusionScheme, Error as CoreError, Model, ModelSpec, Point};

use crate::report::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub norm: NormSection,
    #[serde(default)]
    pub kernel: KernelSection,
    #[serde(default)]
    pub covariance: CovarianceSection,
    #[serde(default)]
    pub lemma21: Lemma21Section,
    #[serde(default)]
    pub potential: PotentialSection,
    #[serde(default)]
    pub solve: SolveSection,
    #[serde(default)]
    pub mc: McSection,
    #[serde(default)]
    pub moser: MoserSection,
    #[serde(default)]
    pub growth: GrowthSection,
    #[serde(default)]
    pub holder: HolderSection,
}

/// A space-time point `{"x": [...], "t": ...}`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointConfig {
    pub x: Vec<f64>,
    pub t: f64,
}

impl PointConfig {
    pub fn to_point(&self, model: &Model, what: &str) -> Result<Point, CliError> {
        if self.x.len() != model.dim() {
            return Err(CliError::Config(format!(
                "{what}: point has {} coordinates, model has N = {}",
                self.x.len(),
                model.dim()
            )));
        }
        Ok(Point::new(self.x.clone(), self.t))
    }
}

pub fn point_or(p: &Option<PointConfig>, model: &Model, what: &str, default: Point) -> Result<Point, CliError> {
    match p {
        Some(p) => p.to_point(model, what),
        None => Ok(default),
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormSection {
    pub points: Option<Vec<PointConfig>>,
    pub samples: usize,
    pub volume_radii: Vec<f64>,
    pub volume_samples: usize,
    pub tolerance: f64,
}

impl Default for NormSection {
    fn default() -> Self {
        Self {
            points: None,
            samples: 10_000,
            volume_radii: vec![0.5, 1.0, 2.0],
            volume_samples: 200_000,
            tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSection {
    pub points: Option<Vec<PointConfig>>,
    pub pole: Option<PointConfig>,
    pub mass_tolerance: f64,
}

impl Default for KernelSection {
    fn default() -> Self {
        Self {
            points: None,
            pole: None,
            mass_tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CovarianceSection {
    pub times: Vec<f64>,
    pub random_times: usize,
    pub quadrature_tolerance: f64,
    pub ode_tolerance: f64,
    pub scaling_tolerance: f64,
}

impl Default for CovarianceSection {
    fn default() -> Self {
        Self {
            times: vec![0.1, 0.5, 1.0, 2.0],
            random_times: 100,
            quadrature_tolerance: 1e-9,
            ode_tolerance: 1e-6,
            scaling_tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Lemma21Section {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub directions: usize,
    pub times: usize,
}

impl Default for Lemma21Section {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            directions: 64,
            times: 48,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PotentialSection {
    pub space: Option<Vec<Axis>>,
    pub time: Option<Axis>,
    pub trials: usize,
}

impl Default for PotentialSection {
    fn default() -> Self {
        Self {
            space: None,
            time: None,
            trials: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundaryConfig {
    Neumann {},
    FixedDirichlet {},
    KernelDirichlet { pole: Option<PointConfig> },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    /// `Γ(·, pole)` at the initial time.
    Kernel { pole: Option<PointConfig> },
    /// Seeded sum of Gaussian bumps.
    Random { seed: Option<u64> },
    Constant { value: f64 },
    /// A single-slice gridded-function file.
    File { path: PathBuf },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveSection {
    pub space: Option<Vec<Axis>>,
    pub t0: f64,
    pub dt: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub diffusion: DiffusionScheme,
    pub boundary: BoundaryConfig,
    pub initial: InitialConfig,
    pub coefficient: CoefficientSpec,
    pub save_every: usize,
}

impl Default for SolveSection {
    fn default() -> Self {
        Self {
            space: None,
            t0: 0.0,
            dt: 0.01,
            horizon: 0.5,
            diffusion: DiffusionScheme::Implicit,
            boundary: BoundaryConfig::KernelDirichlet { pole: None },
            initial: InitialConfig::Kernel { pole: None },
            coefficient: CoefficientSpec::Identity {},
            save_every: 10,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSection {
    pub pole: Option<PointConfig>,
    pub t: f64,
    pub paths: usize,
    pub steps: usize,
    pub z_max: f64,
}

impl Default for McSection {
    fn default() -> Self {
        Self {
            pole: None,
            t: 1.0,
            paths: 100_000,
            steps: 1000,
            z_max: 3.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MoserSection {
    pub pole: Option<PointConfig>,
    pub radii: Vec<f64>,
    pub centers: usize,
    pub center_lo: Option<PointConfig>,
    pub center_hi: Option<PointConfig>,
    pub p: f64,
    pub nodes: usize,
    pub tolerance: f64,
}

impl Default for MoserSection {
    fn default() -> Self {
        Self {
            pole: None,
            radii: vec![0.2, 0.4],
            centers: 10,
            center_lo: None,
            center_hi: None,
            p: 1.0,
            nodes: 48,
            tolerance: 0.2,
        }
    }
}

/// Shared setup of the rough-coefficient solver runs.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub space: Option<Vec<Axis>>,
    pub dt: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub diffusion: DiffusionScheme,
    pub coefficient: CoefficientSpec,
    pub runs: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            space: None,
            dt: 0.001,
            horizon: 0.5,
            diffusion: DiffusionScheme::Implicit,
            coefficient: CoefficientSpec::checkerboard(),
            runs: 5,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrowthSection {
    pub solver: ExperimentSection,
    pub center: Option<PointConfig>,
    pub r: f64,
    pub theta: f64,
}

impl Default for GrowthSection {
    fn default() -> Self {
        Self {
            solver: ExperimentSection::default(),
            center: None,
            r: 0.5,
            theta: 0.25,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HolderSection {
    pub solver: ExperimentSection,
    pub center: Option<PointConfig>,
    pub r0: f64,
    pub theta: f64,
    pub levels: usize,
    pub rho_max: f64,
}

impl Default for HolderSection {
    fn default() -> Self {
        Self {
            solver: ExperimentSection::default(),
            center: None,
            r0: 0.5,
            theta: 0.5,
            levels: 4,
            rho_max: 1.0,
        }
    }
}

/// Parsed configuration with its validated model and raw bytes.
pub struct LoadedConfig {
    pub config: RunConfig,
    pub model: Model,
    pub bytes: Vec<u8>,
}

pub fn parse_config_bytes(bytes: Vec<u8>) -> Result<LoadedConfig, CliError> {
    let mut de = serde_json::Deserializer::from_slice(&bytes);
    let config: RunConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config(format!("{path}: {}", e.into_inner()))
    })?;
    de.end().map_err(|e| CliError::Config(format!("trailing input: {e}")))?;
    let model = config.model.build::<f64>().map_err(|e| match e {
        CoreError::DimensionMismatch(msg) => CliError::Config(format!("model: {msg}")),
        other => CliError::Structure(other),
    })?;
    Ok(LoadedConfig { config, model, bytes })
}

pub fn parse_config(path: &Path) -> Result<LoadedConfig, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse_config_bytes(bytes)
}

/// Default box: `[-wide, wide]` on the first block and `[-narrow, narrow]`
/// elsewhere, `steps` intervals per axis.
pub fn default_space(model: &Model, wide: f64, narrow: f64, steps: (usize, usize)) -> Vec<Axis> {
    (0..model.dim())
        .map(|i| {
            if i < model.m0() {
                Axis::new(-wide, wide, steps.0)
            } else {
                Axis::new(-narrow, narrow, steps.1)
            }
        })
        .collect()
}
