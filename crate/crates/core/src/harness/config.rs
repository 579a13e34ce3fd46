//! Scenario configuration files.
//!
//! TOML with one table per section and `schema_version` at the top; unknown
//! keys are rejected so that a config file pins a run exactly.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::assimilation::{AnalysisConfig, ObservationModel, ObservationPattern, WeightingScheme};
use crate::error::{Error, Result};
use crate::grid::{Field2D, Grid2D};
use crate::solver::{initial_condition, PdeModel, TimeStepper};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub name: String,
    pub pde: PdeSection,
    pub grid: GridSection,
    pub time: TimeSection,
    pub initial: InitialSection,
    pub ensemble: EnsembleSection,
    pub observation: ObservationSection,
    pub weighting: WeightingSection,
    pub truth: TruthSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PdeSection {
    LinearAdvection { ax: f64, ay: f64 },
    Burgers,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub nx: usize,
    pub ny: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub dt: f64,
    pub t_final: f64,
    /// Model steps between assimilations.
    pub obs_interval: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub condition: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub size: usize,
    pub noise_std: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationSection {
    pub pattern: String,
    pub gamma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightingSection {
    CovDiag {
        alpha: f64,
    },
    CovBanded {
        alpha: f64,
    },
    GradDiag {
        theta: f64,
        phi: f64,
        beta_tilde: f64,
        /// Inflation of the deviations entering the transform; off by default.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        transform_inflation: Option<f64>,
    },
    GradBanded {
        theta: f64,
        phi: f64,
        beta_tilde: f64,
        mask: bool,
        d_thresh: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        transform_inflation: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum TruthSection {
    /// Exact periodic translation of the initial condition (advection only).
    Analytic,
    /// Same solver on a grid refined by `refine`, with `dt / refine`.
    Reference { refine: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Times at which fields are kept for plotting.
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Canonical rendering; the config hash is taken over this text.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.grid()?;
        self.model()?;
        self.n_cycles()?;
        self.initial_field()?;
        self.observation_model()?;
        if self.ensemble.size < 2 {
            return Err(Error::Config(format!("ensemble.size {} must be >= 2", self.ensemble.size)));
        }
        if !(self.ensemble.noise_std >= 0.0) {
            return Err(Error::Config("ensemble.noise_std must be >= 0".into()));
        }
        if !(self.observation.gamma > 0.0) {
            return Err(Error::Config("observation.gamma must be > 0".into()));
        }
        self.analysis()?;
        match self.truth {
            TruthSection::Analytic => {
                if !matches!(self.pde, PdeSection::LinearAdvection { .. }) {
                    return Err(Error::Config("analytic truth requires linear advection".into()));
                }
            }
            TruthSection::Reference { refine } => {
                if refine < 1 {
                    return Err(Error::Config("truth.refine must be a positive integer".into()));
                }
            }
        }
        if self.output.snapshot_times.iter().any(|t| !t.is_finite()) {
            return Err(Error::Config("snapshot times must be finite".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid2D> {
        let g = &self.grid;
        Grid2D::new((g.x_min, g.x_max), (g.y_min, g.y_max), g.nx, g.ny)
    }

    pub fn model(&self) -> Result<PdeModel> {
        match self.pde {
            PdeSection::LinearAdvection { ax, ay } if ax.is_finite() && ay.is_finite() => {
                Ok(PdeModel::LinearAdvection { ax, ay })
            }
            PdeSection::LinearAdvection { .. } => Err(Error::Config("advection speeds must be finite".into())),
            PdeSection::Burgers => Ok(PdeModel::Burgers),
        }
    }

    pub fn stepper(&self) -> Result<TimeStepper> {
        TimeStepper::fixed(&self.grid()?, self.time.dt)
    }

    /// Time between assimilations.
    pub fn dt_obs(&self) -> f64 {
        self.time.obs_interval as f64 * self.time.dt
    }

    /// `t_q = q * obs_interval * dt`.
    pub fn cycle_time(&self, q: usize) -> f64 {
        (q * self.time.obs_interval) as f64 * self.time.dt
    }

    /// Number of assimilation cycles `L = T / (obs_interval dt)`; must be an
    /// integer.
    pub fn n_cycles(&self) -> Result<usize> {
        let t = &self.time;
        if !(t.dt > 0.0) || !t.dt.is_finite() {
            return Err(Error::Config(format!("time.dt {} must be positive", t.dt)));
        }
        if t.obs_interval < 1 {
            return Err(Error::Config("time.obs_interval must be >= 1".into()));
        }
        if !(t.t_final >= 0.0) || !t.t_final.is_finite() {
            return Err(Error::Config(format!("time.t_final {} must be >= 0", t.t_final)));
        }
        let l = t.t_final / self.dt_obs();
        let r = l.round();
        if (l - r).abs() > 1e-9 * r.max(1.0) {
            return Err(Error::Config(format!(
                "t_final {} is not a whole number of assimilation intervals {}",
                t.t_final,
                self.dt_obs()
            )));
        }
        Ok(r as usize)
    }

    pub fn initial_field(&self) -> Result<Field2D> {
        initial_condition(&self.initial.condition, &self.grid()?)
    }

    pub fn observation_model(&self) -> Result<ObservationModel> {
        let pattern: ObservationPattern = self.observation.pattern.parse()?;
        ObservationModel::new(&self.grid()?, pattern, self.observation.gamma)
    }

    pub fn scheme(&self) -> WeightingScheme {
        match self.weighting {
            WeightingSection::CovDiag { alpha } => WeightingScheme::CovDiag { alpha },
            WeightingSection::CovBanded { alpha } => WeightingScheme::CovBanded { alpha },
            WeightingSection::GradDiag { theta, phi, beta_tilde, .. } => {
                WeightingScheme::GradDiag { theta, phi, beta_tilde }
            }
            WeightingSection::GradBanded { theta, phi, beta_tilde, mask, d_thresh, .. } => WeightingScheme::GradBanded {
                theta,
                phi,
                beta_tilde,
                d_thresh: mask.then_some(d_thresh),
            },
        }
    }

    pub fn analysis(&self) -> Result<AnalysisConfig> {
        let mut cfg = AnalysisConfig::new(self.scheme());
        match self.weighting {
            WeightingSection::CovDiag { alpha } | WeightingSection::CovBanded { alpha } => check_min("alpha", alpha, 1.0)?,
            WeightingSection::GradDiag { theta, phi, beta_tilde, transform_inflation } => {
                check_grad(theta, phi, beta_tilde)?;
                cfg.transform_inflation = transform_inflation;
            }
            WeightingSection::GradBanded { theta, phi, beta_tilde, d_thresh, transform_inflation, .. } => {
                check_grad(theta, phi, beta_tilde)?;
                check_positive("d_thresh", d_thresh)?;
                cfg.transform_inflation = transform_inflation;
            }
        }
        if let Some(a) = cfg.transform_inflation {
            check_min("transform_inflation", a, 1.0)?;
        }
        Ok(cfg)
    }

    /// Moment and aggregation parameters for recorded statistics: those of
    /// the scheme, or `(1, 1)` for covariance schemes.
    pub fn stats_params(&self) -> (f64, f64) {
        match self.weighting {
            WeightingSection::GradDiag { theta, phi, .. } | WeightingSection::GradBanded { theta, phi, .. } => (theta, phi),
            _ => (1.0, 1.0),
        }
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::Config(format!("weighting.{name} = {v} must be positive")));
    }
    Ok(())
}

fn check_min(name: &str, v: f64, min: f64) -> Result<()> {
    if !(v >= min) || !v.is_finite() {
        return Err(Error::Config(format!("weighting.{name} = {v} must be >= {min}")));
    }
    Ok(())
}

fn check_grad(theta: f64, phi: f64, beta_tilde: f64) -> Result<()> {
    check_positive("theta", theta)?;
    check_positive("phi", phi)?;
    check_positive("beta_tilde", beta_tilde)
}

fn unit_grid(n: usize) -> GridSection {
    GridSection { nx: n, ny: n, x_min: 0.0, x_max: 1.0, y_min: 0.0, y_max: 1.0 }
}

/// Linear advection `u_t + 0.5 u_x - u_y = 0` on 101², dense observations.
pub fn advection_scenario(weighting: WeightingSection) -> ScenarioConfig {
    ScenarioConfig {
        schema_version: SCHEMA_VERSION,
        name: "advection".into(),
        pde: PdeSection::LinearAdvection { ax: 0.5, ay: -1.0 },
        grid: unit_grid(101),
        time: TimeSection { dt: 5e-3, t_final: 2.0, obs_interval: 5 },
        initial: InitialSection { condition: "advection_box".into() },
        ensemble: EnsembleSection { size: 100, noise_std: 0.1, seed: 1 },
        observation: ObservationSection { pattern: "dense".into(), gamma: 0.01, seed: 2 },
        weighting,
        truth: TruthSection::Analytic,
        output: OutputSection { snapshot_times: vec![1.0, 2.0] },
    }
}

/// Burgers with dense observations; the truth is a 4x refined run.
pub fn burgers_dense_scenario(weighting: WeightingSection) -> ScenarioConfig {
    ScenarioConfig {
        schema_version: SCHEMA_VERSION,
        name: "burgers_dense".into(),
        pde: PdeSection::Burgers,
        grid: unit_grid(101),
        time: TimeSection { dt: 2e-3, t_final: 2.0, obs_interval: 5 },
        initial: InitialSection { condition: "burgers_box".into() },
        ensemble: EnsembleSection { size: 100, noise_std: 0.1, seed: 1 },
        observation: ObservationSection { pattern: "dense".into(), gamma: 0.01, seed: 2 },
        weighting,
        truth: TruthSection::Reference { refine: 4 },
        output: OutputSection { snapshot_times: vec![1.0, 2.0] },
    }
}

/// Burgers with checkerboard observations and `γ = 0.005`.
pub fn burgers_sparse_scenario(weighting: WeightingSection) -> ScenarioConfig {
    let mut cfg = burgers_dense_scenario(weighting);
    cfg.name = "burgers_sparse".into();
    cfg.observation.pattern = "checkerboard".into();
    cfg.observation.gamma = 0.005;
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grad_diag() -> WeightingSection {
        WeightingSection::GradDiag { theta: 1.0, phi: 1.0, beta_tilde: 1e-3, transform_inflation: None }
    }

    #[test]
    fn presets_validate_and_round_trip() {
        for cfg in [
            advection_scenario(grad_diag()),
            burgers_dense_scenario(WeightingSection::CovDiag { alpha: 4.0 }),
            burgers_sparse_scenario(WeightingSection::GradBanded {
                theta: 1.0,
                phi: 1.0,
                beta_tilde: 1e-4,
                mask: true,
                d_thresh: 4.0,
                transform_inflation: None,
            }),
        ] {
            cfg.validate().unwrap();
            let text = cfg.to_toml();
            let back = ScenarioConfig::from_toml(&text).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.hash(), cfg.hash());
        }
    }

    #[test]
    fn cycle_counts() {
        let cfg = advection_scenario(grad_diag());
        assert_eq!(cfg.n_cycles().unwrap(), 80);
        assert_eq!(burgers_dense_scenario(grad_diag()).n_cycles().unwrap(), 200);
        let mut zero = cfg.clone();
        zero.time.t_final = 0.0;
        assert_eq!(zero.n_cycles().unwrap(), 0);
        let mut odd = cfg;
        odd.time.t_final = 0.03;
        assert!(odd.n_cycles().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut text = advection_scenario(grad_diag()).to_toml();
        text = text.replace("[grid]\n", "[grid]\nspacing = 3\n");
        assert!(matches!(ScenarioConfig::from_toml(&text), Err(Error::Config(_))));
        let text = advection_scenario(grad_diag()).to_toml().replace("beta_tilde", "beta");
        assert!(ScenarioConfig::from_toml(&text).is_err());
        let text = advection_scenario(grad_diag()).to_toml().replace("schema_version = 1", "schema_version = 2");
        assert!(ScenarioConfig::from_toml(&text).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        let mut cfg = advection_scenario(WeightingSection::CovDiag { alpha: 0.5 });
        assert!(cfg.validate().is_err());
        cfg.weighting = grad_diag();
        cfg.truth = TruthSection::Reference { refine: 0 };
        assert!(cfg.validate().is_err());
        let mut b = burgers_dense_scenario(grad_diag());
        b.truth = TruthSection::Analytic;
        assert!(b.validate().is_err());
        let mut c = advection_scenario(grad_diag());
        c.observation.pattern = "random".into();
        assert!(c.validate().is_err());
    }

    #[test]
    fn gradient_schemes_default_to_no_transform_inflation() {
        let cfg = advection_scenario(grad_diag());
        assert_eq!(cfg.analysis().unwrap().transform_inflation, None);
        let cov = advection_scenario(WeightingSection::CovDiag { alpha: 4.0 });
        assert_eq!(cov.analysis().unwrap().transform_inflation, Some(4.0));
        let over = advection_scenario(WeightingSection::GradDiag {
            theta: 1.0,
            phi: 1.0,
            beta_tilde: 1e-3,
            transform_inflation: Some(1.1),
        });
        assert_eq!(over.analysis().unwrap().transform_inflation, Some(1.1));
    }
}
