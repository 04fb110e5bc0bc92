//! Experiment configuration: one TOML file drives every pipeline stage, so a
//! run is fully described by the config plus the seed.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use roacert_core::cegis::CegisConfig;
use roacert_core::dynamics::{self, NonlinearMap};
use roacert_core::errmodel::DEFAULT_GAMMA_GRID;
use roacert_core::geometry::{AxisBox, RoiConfig};
use roacert_core::learner::LearnerConfig;
use roacert_core::relu::TrainConfig;
use roacert_core::seed;
use roacert_core::verifier::VerifierConfig;
use roacert_core::Vector;

/// Anything that makes the experiment description unusable: unreadable or
/// malformed TOML, values out of range, or referenced artifacts that do not
/// exist yet. Mapped to its own exit code by the binary.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

/// Full experiment description as parsed from TOML.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    /// Master seed; every stage derives its own stream from it.
    #[serde(default)]
    pub seed: u64,
    /// Directory receiving all artifacts of this experiment.
    pub output_dir: PathBuf,
    pub system: SystemSection,
    pub region: RegionSection,
    pub approximate: ApproximateSection,
    pub error_bound: ErrorBoundSection,
    pub roi: RoiSection,
    #[serde(default)]
    pub cegis: CegisSection,
    #[serde(default)]
    pub learner: LearnerSection,
    #[serde(default)]
    pub verifier: VerifierSection,
    #[serde(default)]
    pub roa: RoaSection,
    #[serde(default)]
    pub simulate: Option<SimulateSection>,
}

fn default_schema() -> u32 {
    1
}

/// Which dynamics to certify.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    /// Built-in system name: `rational2d` or `poly3d`.
    pub name: String,
    /// Forward-Euler step for continuous-time systems (poly3d only).
    #[serde(default)]
    pub dt: Option<f64>,
}

/// Sample region and excluded neighborhood.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSection {
    /// The sample region is the centered box with this l-inf radius; training
    /// data, residual samples, and the region-of-interest grid all live here.
    pub halfwidth: f64,
    /// Per-axis half-widths of the excluded box around the origin.
    pub excluded: Vec<f64>,
}

/// Network architecture and trainer controls for the `approximate` stage.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApproximateSection {
    /// Layer widths, input first: `[n, h1, .., n]`.
    pub arch: Vec<usize>,
    /// Training grid points per axis over the sample region.
    pub grid: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_step_size")]
    pub step_size: f64,
    #[serde(default = "default_l1")]
    pub l1_weight: f64,
    /// Minibatch size; zero means full batch.
    #[serde(default)]
    pub batch_size: usize,
}

fn default_epochs() -> usize {
    500
}

fn default_step_size() -> f64 {
    5e-3
}

fn default_l1() -> f64 {
    1e-4
}

/// Residual sampling and bound construction for the `bound-error` stage.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorBoundSection {
    /// Covering radius of the residual sample net over the sample region.
    pub eps: f64,
    /// Slopes of the candidate affine pieces.
    #[serde(default = "default_gamma_grid")]
    pub gamma_grid: Vec<f64>,
    /// `sampled` keeps the fitted bound; `inflated` widens it by the worst
    /// drift between samples and needs `lipschitz_f`.
    #[serde(default = "default_mode")]
    pub mode: BoundMode,
    /// Where residuals are sampled: the region of interest (the set the
    /// certificate speaks about) or the full sample box.
    #[serde(default = "default_domain")]
    pub domain: BoundDomain,
    /// l-inf Lipschitz bound of the true map over the sample region, used
    /// only by the `inflated` mode.
    #[serde(default)]
    pub lipschitz_f: Option<f64>,
    /// Cap on the number of residual samples.
    #[serde(default = "default_max_points")]
    pub max_points: usize,
}

fn default_gamma_grid() -> Vec<f64> {
    DEFAULT_GAMMA_GRID.to_vec()
}

fn default_mode() -> BoundMode {
    BoundMode::Sampled
}

fn default_max_points() -> usize {
    4_000_000
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundMode {
    Sampled,
    Inflated,
}

fn default_domain() -> BoundDomain {
    BoundDomain::Roi
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundDomain {
    Roi,
    Region,
}

/// Region-of-interest construction controls.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiSection {
    /// Simulation grid points per axis over the sample region.
    pub grid: usize,
    #[serde(default = "default_roi_steps")]
    pub steps: usize,
    #[serde(default = "default_conv_tol")]
    pub conv_tol: f64,
    /// Shrink factor applied to the hull of convergent initial states.
    #[serde(default = "default_tau")]
    pub tau: f64,
}

fn default_roi_steps() -> usize {
    50
}

fn default_conv_tol() -> f64 {
    0.05
}

fn default_tau() -> f64 {
    0.9
}

/// Synthesis loop controls.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CegisSection {
    /// Trajectory order of the candidate family.
    pub k: usize,
    pub max_iterations: usize,
    /// Also cut at a deterministic probe pool after each counterexample.
    pub batch_cuts: bool,
}

impl Default for CegisSection {
    fn default() -> Self {
        let d = CegisConfig::default();
        CegisSection {
            k: d.k,
            max_iterations: d.max_iterations,
            batch_cuts: d.batch_cuts,
        }
    }
}

/// Analytic-center solver controls, all optional.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerSection {
    pub newton_tol: f64,
    pub max_newton_steps: usize,
    pub max_phase1_steps: usize,
    pub eps_int: f64,
    pub armijo: f64,
    pub shrink: f64,
}

impl Default for LearnerSection {
    fn default() -> Self {
        let d = LearnerConfig::default();
        LearnerSection {
            newton_tol: d.newton_tol,
            max_newton_steps: d.max_newton_steps,
            max_phase1_steps: d.max_phase1_steps,
            eps_int: d.eps_int,
            armijo: d.armijo,
            shrink: d.shrink,
        }
    }
}

impl LearnerSection {
    pub fn to_core(&self) -> LearnerConfig {
        LearnerConfig {
            newton_tol: self.newton_tol,
            max_newton_steps: self.max_newton_steps,
            max_phase1_steps: self.max_phase1_steps,
            eps_int: self.eps_int,
            armijo: self.armijo,
            shrink: self.shrink,
        }
    }
}

/// Branch-and-bound controls.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifierSection {
    pub eps_margin: f64,
    pub gap_tol: f64,
    pub node_cap: u64,
    /// Write a per-node CSV log next to the other artifacts.
    pub node_log: bool,
}

impl Default for VerifierSection {
    fn default() -> Self {
        let d = VerifierConfig::default();
        VerifierSection {
            eps_margin: d.eps_margin,
            gap_tol: d.gap_tol,
            node_cap: d.node_cap,
            node_log: false,
        }
    }
}

impl VerifierSection {
    /// Core config; the node log, when requested, goes to `log_path`.
    pub fn to_core(&self, log_path: Option<PathBuf>) -> VerifierConfig {
        VerifierConfig {
            eps_margin: self.eps_margin,
            gap_tol: self.gap_tol,
            node_cap: self.node_cap,
            node_log: if self.node_log { log_path } else { None },
        }
    }
}

/// Level-set evaluation and simulation cross-check controls.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoaSection {
    /// Grid points per axis for value grids and plots.
    pub resolution: usize,
    /// Trajectories for the simulation cross-check.
    pub trajectories: usize,
    pub sim_steps: usize,
}

impl Default for RoaSection {
    fn default() -> Self {
        RoaSection {
            resolution: 201,
            trajectories: 500,
            sim_steps: 150,
        }
    }
}

/// Inputs for the `simulate` subcommand.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub x0: Vec<f64>,
    #[serde(default = "default_sim_steps")]
    pub steps: usize,
    /// Draw disturbances from the error bound instead of running nominally.
    #[serde(default = "default_true")]
    pub disturbed: bool,
}

fn default_sim_steps() -> usize {
    100
}

fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    /// Reads and validates a config file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| bad(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| bad(format!("config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != 1 {
            return Err(bad(format!(
                "unsupported config schema_version {}",
                self.schema_version
            )));
        }
        let sys = self.resolve_system()?;
        let n = sys.dim();
        if !(self.region.halfwidth > 0.0 && self.region.halfwidth.is_finite()) {
            return Err(bad("region.halfwidth must be positive"));
        }
        if self.region.excluded.len() != n {
            return Err(bad(format!(
                "region.excluded has {} entries, system dimension is {n}",
                self.region.excluded.len()
            )));
        }
        for &h in &self.region.excluded {
            if !(h > 0.0 && h < self.region.halfwidth) {
                return Err(bad(
                    "region.excluded half-widths must be positive and smaller than the region",
                ));
            }
        }
        let arch = &self.approximate.arch;
        if arch.len() < 2 || arch[0] != n || arch[arch.len() - 1] != n {
            return Err(bad(format!(
                "approximate.arch must start and end with the system dimension {n}"
            )));
        }
        if arch.iter().any(|&w| w == 0) {
            return Err(bad("approximate.arch has a zero-width layer"));
        }
        if self.approximate.grid < 2 {
            return Err(bad("approximate.grid needs at least 2 points per axis"));
        }
        if self.approximate.epochs == 0 {
            return Err(bad("approximate.epochs must be positive"));
        }
        if !(self.error_bound.eps > 0.0) {
            return Err(bad("error_bound.eps must be positive"));
        }
        if self.error_bound.gamma_grid.is_empty()
            || self.error_bound.gamma_grid.iter().any(|&g| !(g >= 0.0))
        {
            return Err(bad("error_bound.gamma_grid needs nonnegative entries"));
        }
        if self.error_bound.mode == BoundMode::Inflated && self.error_bound.lipschitz_f.is_none() {
            return Err(bad(
                "error_bound.mode = \"inflated\" needs error_bound.lipschitz_f",
            ));
        }
        if self.roi.grid < 2 || self.roi.steps == 0 {
            return Err(bad("roi.grid and roi.steps must be positive"));
        }
        if !(self.roi.tau > 0.0 && self.roi.tau <= 1.0) {
            return Err(bad("roi.tau must lie in (0, 1]"));
        }
        if self.cegis.max_iterations == 0 {
            return Err(bad("cegis.max_iterations must be positive"));
        }
        if self.roa.resolution < 2 {
            return Err(bad("roa.resolution needs at least 2 points per axis"));
        }
        if let Some(sim) = &self.simulate {
            if sim.x0.len() != n {
                return Err(bad(format!(
                    "simulate.x0 has {} entries, system dimension is {n}",
                    sim.x0.len()
                )));
            }
            if sim.steps == 0 {
                return Err(bad("simulate.steps must be positive"));
            }
        }
        Ok(())
    }

    /// The discrete-time map named by the config.
    pub fn resolve_system(&self) -> Result<NonlinearMap, ConfigError> {
        match (self.system.name.as_str(), self.system.dt) {
            ("rational2d", None) => Ok(dynamics::rational2d()),
            ("rational2d", Some(_)) => Err(bad(
                "rational2d is already discrete-time; remove system.dt",
            )),
            ("poly3d", dt) => {
                let dt = dt.unwrap_or(0.1);
                if !(dt > 0.0 && dt.is_finite()) {
                    return Err(bad("system.dt must be positive"));
                }
                Ok(dynamics::euler_discretize(
                    &dynamics::poly3d_continuous(),
                    dt,
                ))
            }
            (other, _) => Err(bad(format!(
                "unknown system {other:?}; known: rational2d, poly3d"
            ))),
        }
    }

    /// Centered sample region box.
    pub fn region_box(&self) -> AxisBox {
        let n = self.region.excluded.len();
        AxisBox::centered(n, self.region.halfwidth).expect("validated halfwidth")
    }

    /// Excluded box around the origin.
    pub fn excluded_box(&self) -> AxisBox {
        let hw = Vector::from_vec(self.region.excluded.clone());
        AxisBox::new(-&hw, hw).expect("validated half-widths")
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.approximate.epochs,
            step_size: self.approximate.step_size,
            l1_weight: self.approximate.l1_weight,
            batch_size: self.approximate.batch_size,
            seed: seed::derive(self.seed, "train"),
        }
    }

    pub fn roi_config(&self, workers: usize) -> RoiConfig {
        RoiConfig {
            grid: self.roi.grid,
            steps: self.roi.steps,
            conv_tol: self.roi.conv_tol,
            tau: self.roi.tau,
            workers,
        }
    }
}

/// Worker-thread count from the environment, defaulting to one.
pub fn worker_count() -> usize {
    match std::env::var("ROACERT_WORKERS") {
        Ok(s) => s.trim().parse::<usize>().ok().filter(|&w| w >= 1).unwrap_or_else(|| {
            log::warn!("ignoring unparsable ROACERT_WORKERS={s:?}");
            1
        }),
        Err(_) => 1,
    }
}
