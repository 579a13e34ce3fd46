//! Observation model and the ETKF analysis step.
//!
//! The posterior mean minimizes `½|y - Hv|²_Γ + ½|v - m̂|²_W` and is computed
//! in gain form `m̂ + W Hᵀ (H W Hᵀ + Γ)⁻¹ (y - H m̂)`. The ensemble transform
//! always uses the sample deviations and `Γ`; only the mean sees `W`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::ensemble::{center, inflate, CenteredEnsemble, Ensemble};
use crate::error::{Error, Result};
use crate::grid::{Field2D, Grid2D};
use crate::linalg::{spd_sqrt, SymBandMatrix};
use crate::rng::RngStream;
use crate::statistics::gradient_stats;
use crate::weighting::{
    build_localization, build_mask, w_c_banded_from, w_c_diag_from, w_s_banded_from, w_s_diag_from, WeightingMatrix,
};

/// Eigenvalue clamp applied before taking `T^{1/2}`.
pub const SQRT_EIG_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObservationPattern {
    Dense,
    /// Points with `(i + j) mod 2 = 0`; the parity is the same for 0- and
    /// 1-based indices.
    Checkerboard,
}

impl std::str::FromStr for ObservationPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(Self::Dense),
            "checkerboard" => Ok(Self::Checkerboard),
            other => Err(Error::Config(format!("unknown observation pattern `{other}`"))),
        }
    }
}

impl ObservationPattern {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Dense => "dense",
            Self::Checkerboard => "checkerboard",
        }
    }
}

/// Selection operator `H` with `Γ = γ² I`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationModel {
    pub pattern: ObservationPattern,
    pub gamma: f64,
    n_state: usize,
    /// Observed 0-based offsets, ascending.
    selection: Vec<usize>,
}

impl ObservationModel {
    pub fn new(grid: &Grid2D, pattern: ObservationPattern, gamma: f64) -> Result<Self> {
        let selection = match pattern {
            ObservationPattern::Dense => (0..grid.len()).collect(),
            ObservationPattern::Checkerboard => {
                (0..grid.len()).filter(|&p| {
                    let (i, j) = grid.coords(p);
                    (i + j) % 2 == 0
                })
                .collect()
            }
        };
        Self::build(pattern, gamma, grid.len(), selection)
    }

    /// Observes every component of an `n`-dimensional state.
    pub fn dense(n: usize, gamma: f64) -> Result<Self> {
        Self::build(ObservationPattern::Dense, gamma, n, (0..n).collect())
    }

    fn build(pattern: ObservationPattern, gamma: f64, n_state: usize, selection: Vec<usize>) -> Result<Self> {
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidParameter(format!("observation noise {gamma} must be >= 0")));
        }
        Ok(Self { pattern, gamma, n_state, selection })
    }

    pub fn m_obs(&self) -> usize {
        self.selection.len()
    }

    pub fn n_state(&self) -> usize {
        self.n_state
    }

    pub fn selection(&self) -> &[usize] {
        &self.selection
    }

    /// `H v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.selection.iter().map(|&p| v[p]).collect()
    }

    fn positions(&self) -> Vec<Option<usize>> {
        let mut pos = vec![None; self.n_state];
        for (r, &p) in self.selection.iter().enumerate() {
            pos[p] = Some(r);
        }
        pos
    }

    fn check_state(&self, n: usize) -> Result<()> {
        if n != self.n_state {
            return Err(Error::GridMismatch(format!("state of size {n}, observation model expects {}", self.n_state)));
        }
        Ok(())
    }

    fn check_obs(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.m_obs() {
            return Err(Error::GridMismatch(format!("{} observations, expected {}", y.len(), self.m_obs())));
        }
        Ok(())
    }
}

/// `y = H truth + η` with i.i.d. `η ~ N(0, γ²)`.
pub fn observe_truth(truth: &Field2D, obs: &ObservationModel, rng: &mut RngStream) -> Result<Vec<f64>> {
    obs.check_state(truth.values().len())?;
    let mut y = obs.apply(truth.values());
    for v in &mut y {
        *v += obs.gamma * rng.normal();
    }
    Ok(y)
}

/// How the innovation system was solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeanSolve {
    /// Diagonal `W`: the system decouples point by point.
    Pointwise,
    /// Banded Cholesky of `H W Hᵀ + Γ`.
    Banded,
    /// Factorization failed; the diagonal part of `W` was used instead.
    DiagonalFallback,
}

impl MeanSolve {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Pointwise => "pointwise",
            Self::Banded => "banded",
            Self::DiagonalFallback => "diagonal_fallback",
        }
    }
}

fn pointwise_mean(prior: &[f64], y: &[f64], obs: &ObservationModel, w: &[f64]) -> Vec<f64> {
    let g2 = obs.gamma * obs.gamma;
    let mut out = prior.to_vec();
    for (&p, &yv) in obs.selection.iter().zip(y) {
        out[p] = (w[p] * yv + g2 * prior[p]) / (w[p] + g2);
    }
    out
}

/// Gain-form posterior mean on flattened vectors.
pub fn posterior_mean_flat(
    prior: &[f64],
    y: &[f64],
    obs: &ObservationModel,
    w: &WeightingMatrix,
) -> Result<(Vec<f64>, MeanSolve)> {
    obs.check_state(prior.len())?;
    obs.check_state(w.dim())?;
    obs.check_obs(y)?;
    let banded = match w {
        WeightingMatrix::Diagonal(d) => return Ok((pointwise_mean(prior, y, obs, d), MeanSolve::Pointwise)),
        WeightingMatrix::FiveBanded(b) => b,
    };

    // H W Hᵀ + Γ on observed indices; its bandwidth follows from the
    // observed pairs on the stored bands.
    let pos = obs.positions();
    let n = prior.len();
    let mut pairs = Vec::new();
    for (off, band) in [(1, &banded.first), (banded.stride, &banded.far)] {
        for p in 0..n - off {
            if let (Some(a), Some(b)) = (pos[p], pos[p + off]) {
                pairs.push((b, a, band[p]));
            }
        }
    }
    let bw = pairs.iter().map(|&(b, a, _)| b - a).max().unwrap_or(0);
    let m = obs.m_obs();
    let mut s = SymBandMatrix::zeros(m, bw);
    let g2 = obs.gamma * obs.gamma;
    for (r, &p) in obs.selection.iter().enumerate() {
        s.set(r, r, banded.main[p] + g2);
    }
    for (b, a, v) in pairs {
        s.set(b, a, v);
    }
    let chol = match s.cholesky() {
        Ok(c) => c,
        Err(e) => {
            log::warn!("innovation covariance not positive definite ({e}); using diagonal weighting");
            return Ok((pointwise_mean(prior, y, obs, &banded.main), MeanSolve::DiagonalFallback));
        }
    };
    let innov: Vec<f64> = obs.selection.iter().zip(y).map(|(&p, &yv)| yv - prior[p]).collect();
    let z = chol.solve(&innov);
    let mut ht_z = vec![0.0; n];
    for (&p, zv) in obs.selection.iter().zip(z) {
        ht_z[p] = zv;
    }
    let inc = w.mul_vec(&ht_z);
    Ok((prior.iter().zip(inc).map(|(a, b)| a + b).collect(), MeanSolve::Banded))
}

pub fn posterior_mean(prior_mean: &Field2D, y: &[f64], obs: &ObservationModel, w: &WeightingMatrix) -> Result<Field2D> {
    let (m, _) = posterior_mean_flat(prior_mean.values(), y, obs, w)?;
    Field2D::from_flat(*prior_mean.grid(), m)
}

fn observed_deviations(ce: &CenteredEnsemble, obs: &ObservationModel) -> Result<DMatrix<f64>> {
    obs.check_state(ce.state_dim())?;
    Ok(ce.deviations.select_rows(obs.selection.iter()))
}

/// Eigenpairs of `T⁻¹ = I + (HX̂)ᵀ Γ⁻¹ (HX̂)`.
fn inverse_transform_eigen(ce: &CenteredEnsemble, obs: &ObservationModel) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    if !(obs.gamma > 0.0) {
        return Err(Error::InvalidParameter("transform needs an invertible Γ (gamma > 0)".into()));
    }
    let hx = observed_deviations(ce, obs)?;
    let k = ce.size();
    let mut a = hx.tr_mul(&hx) / (obs.gamma * obs.gamma);
    for i in 0..k {
        a[(i, i)] += 1.0;
    }
    let a = (&a + a.transpose()) * 0.5;
    Ok(SymmetricEigen::new(a))
}

/// `T = [I + (HX̂)ᵀ Γ⁻¹ (HX̂)]⁻¹`.
pub fn transform_operator(ce: &CenteredEnsemble, obs: &ObservationModel) -> Result<DMatrix<f64>> {
    let eig = inverse_transform_eigen(ce, obs)?;
    let inv = eig.eigenvalues.map(|l| 1.0 / l);
    Ok(eig.recompose_with(&inv))
}

trait Recompose {
    fn recompose_with(&self, vals: &nalgebra::DVector<f64>) -> DMatrix<f64>;
}

impl Recompose for SymmetricEigen<f64, nalgebra::Dyn> {
    fn recompose_with(&self, vals: &nalgebra::DVector<f64>) -> DMatrix<f64> {
        let mut scaled = self.eigenvectors.clone();
        for (mut c, v) in scaled.column_iter_mut().zip(vals.iter()) {
            c *= *v;
        }
        scaled * self.eigenvectors.transpose()
    }
}

/// Members `m + sqrt(K - 1) (X̂ T^{1/2})_k`, with the transformed deviations
/// re-centered so the members average to `m` exactly.
pub fn posterior_ensemble(ce: &CenteredEnsemble, posterior_mean: &Field2D, t: &DMatrix<f64>) -> Result<Ensemble> {
    let k = ce.size();
    if t.nrows() != k || t.ncols() != k {
        return Err(Error::InvalidParameter(format!("transform is {}x{}, ensemble size {k}", t.nrows(), t.ncols())));
    }
    if posterior_mean.values().len() != ce.state_dim() {
        return Err(Error::GridMismatch("posterior mean does not match ensemble state".into()));
    }
    let sqrt_t = spd_sqrt(t, SQRT_EIG_FLOOR)?;
    Ok(members_from(ce, posterior_mean, &sqrt_t))
}

/// [`posterior_ensemble`] on flattened states: returns the `n x K` member
/// matrix.
pub fn posterior_members(ce: &CenteredEnsemble, posterior_mean: &[f64], t: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = ce.size();
    if t.nrows() != k || t.ncols() != k {
        return Err(Error::InvalidParameter(format!("transform is {}x{}, ensemble size {k}", t.nrows(), t.ncols())));
    }
    if posterior_mean.len() != ce.state_dim() {
        return Err(Error::GridMismatch("posterior mean does not match ensemble state".into()));
    }
    Ok(member_matrix(ce, posterior_mean, &spd_sqrt(t, SQRT_EIG_FLOOR)?))
}

fn member_matrix(ce: &CenteredEnsemble, mean: &[f64], sqrt_t: &DMatrix<f64>) -> DMatrix<f64> {
    let k = ce.size();
    let mut xa = &ce.deviations * sqrt_t;
    for mut row in xa.row_iter_mut() {
        let mu = row.sum() / k as f64;
        row.add_scalar_mut(-mu);
    }
    let scale = ((k - 1) as f64).sqrt();
    for mut c in xa.column_iter_mut() {
        for (d, m) in c.iter_mut().zip(mean) {
            *d = m + scale * *d;
        }
    }
    xa
}

fn members_from(ce: &CenteredEnsemble, mean: &Field2D, sqrt_t: &DMatrix<f64>) -> Ensemble {
    let cols = member_matrix(ce, mean.values(), sqrt_t);
    Ensemble::from_columns(*mean.grid(), &cols).expect("K >= 2 finite members on one grid")
}

/// Weighting used for the posterior mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightingScheme {
    /// `W_C^D = α² diag(C)`.
    CovDiag { alpha: f64 },
    /// `W_C = α² C ⊙ T`.
    CovBanded { alpha: f64 },
    /// `W_S^D = β S^D`.
    GradDiag { theta: f64, phi: f64, beta_tilde: f64 },
    /// `Ŵ_S = β S ⊙ T`, or `W_S = β S ⊙ T ⊙ M` with a mask threshold.
    GradBanded { theta: f64, phi: f64, beta_tilde: f64, d_thresh: Option<f64> },
}

impl WeightingScheme {
    pub fn is_covariance(&self) -> bool {
        matches!(self, Self::CovDiag { .. } | Self::CovBanded { .. })
    }

    pub fn label(&self) -> String {
        match *self {
            Self::CovDiag { alpha } => format!("W_C^D(alpha={alpha})"),
            Self::CovBanded { alpha } => format!("W_C(alpha={alpha})"),
            Self::GradDiag { theta, phi, beta_tilde } => {
                format!("W_S^D(theta={theta},phi={phi},beta={beta_tilde})")
            }
            Self::GradBanded { theta, phi, beta_tilde, d_thresh: None } => {
                format!("hatW_S(theta={theta},phi={phi},beta={beta_tilde})")
            }
            Self::GradBanded { theta, phi, beta_tilde, d_thresh: Some(d) } => {
                format!("W_S(theta={theta},phi={phi},beta={beta_tilde},d_thresh={d})")
            }
        }
    }
}

/// Scheme plus the inflation applied to the deviations used by the transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisConfig {
    pub scheme: WeightingScheme,
    /// `None` leaves the deviations untouched.
    pub transform_inflation: Option<f64>,
}

impl AnalysisConfig {
    /// Covariance schemes inflate the deviations by their `α`; gradient
    /// schemes do not inflate.
    pub fn new(scheme: WeightingScheme) -> Self {
        let transform_inflation = match scheme {
            WeightingScheme::CovDiag { alpha } | WeightingScheme::CovBanded { alpha } => Some(alpha),
            _ => None,
        };
        Self { scheme, transform_inflation }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub mean_solve: MeanSolve,
    pub w_diag_min: f64,
    pub w_diag_max: f64,
    /// Extreme eigenvalues of `T`.
    pub t_eig_min: f64,
    pub t_eig_max: f64,
    pub m_obs: usize,
}

#[derive(Debug, Clone)]
pub struct AnalysisResult {
    pub posterior_mean: Field2D,
    pub posterior_ensemble: Ensemble,
    pub diagnostics: Diagnostics,
}

/// Assembles the weighting matrix of `scheme` for the forecast ensemble.
pub fn assemble_weighting(ens: &Ensemble, ce: &CenteredEnsemble, scheme: &WeightingScheme) -> Result<WeightingMatrix> {
    let loc = || build_localization(ens.grid());
    match *scheme {
        WeightingScheme::CovDiag { alpha } => w_c_diag_from(ce, alpha),
        WeightingScheme::CovBanded { alpha } => w_c_banded_from(ce, alpha, &loc()),
        WeightingScheme::GradDiag { theta, phi, beta_tilde } => {
            check_beta(beta_tilde)?;
            Ok(w_s_diag_from(&gradient_stats(ens, theta, phi)?, beta_tilde))
        }
        WeightingScheme::GradBanded { theta, phi, beta_tilde, d_thresh } => {
            check_beta(beta_tilde)?;
            let stats = gradient_stats(ens, theta, phi)?;
            let mask = match d_thresh {
                Some(d) => Some(build_mask(&ce.mean_field(*ens.grid())?, d)?),
                None => None,
            };
            w_s_banded_from(ce, &stats, beta_tilde, &loc(), mask.as_ref())
        }
    }
}

fn check_beta(beta_tilde: f64) -> Result<()> {
    if !(beta_tilde > 0.0) || !beta_tilde.is_finite() {
        return Err(Error::InvalidParameter(format!("beta_tilde {beta_tilde} must be positive")));
    }
    Ok(())
}

/// center → inflate → assemble W → posterior mean → transform → members.
pub fn analysis_step(ens: &Ensemble, y: &[f64], obs: &ObservationModel, cfg: &AnalysisConfig) -> Result<AnalysisResult> {
    let ce = center(ens);
    let w = assemble_weighting(ens, &ce, &cfg.scheme)?;
    let prior = ce.mean_field(*ens.grid())?;
    let (mean, mean_solve) = posterior_mean_flat(prior.values(), y, obs, &w)?;
    let posterior_mean = Field2D::from_flat(*ens.grid(), mean)?;

    let ce_t = match cfg.transform_inflation {
        Some(alpha) => inflate(&ce, alpha)?,
        None => ce,
    };
    let eig = inverse_transform_eigen(&ce_t, obs)?;
    let t_eigs = eig.eigenvalues.map(|l| 1.0 / l);
    let root = eig.eigenvalues.map(|l| (1.0 / l).max(SQRT_EIG_FLOOR).sqrt());
    let sqrt_t = eig.recompose_with(&root);
    let posterior_ensemble = members_from(&ce_t, &posterior_mean, &sqrt_t);

    let diag = w.diagonal();
    let diagnostics = Diagnostics {
        mean_solve,
        w_diag_min: diag.iter().cloned().fold(f64::INFINITY, f64::min),
        w_diag_max: diag.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        t_eig_min: t_eigs.min(),
        t_eig_max: t_eigs.max(),
        m_obs: obs.m_obs(),
    };
    Ok(AnalysisResult { posterior_mean, posterior_ensemble, diagnostics })
}
