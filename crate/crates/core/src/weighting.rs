//! Weighting matrices for the analysis-step minimization.
//!
//! Covariance based: `W_C^D = α² diag(C)` and `W_C = α² C ⊙ T`.
//! Gradient based: `W_S^D = β S^D`, `Ŵ_S = β S ⊙ T` and the refined
//! `W_S = β S ⊙ T ⊙ M`, where `S_mm' = sqrt(S^D_m) R_mm' sqrt(S^D_m')` and
//! `β = β̃ / max S^D`.
//!
//! `T` is the five-banded localization (1 on the diagonal, 0.5 between grid
//! neighbours) and `M` the binary mask that cuts neighbour pairs whose
//! prior-mean divided difference exceeds `d_thresh`. Both live on the bands
//! `0, ±1, ±n_x` of the flattened index, and every banded matrix here is
//! stored as those three vectors.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::ensemble::{center, CenteredEnsemble, Ensemble};
use crate::error::{Error, Result};
use crate::grid::{Field2D, Grid2D};
use crate::linalg::SymBandMatrix;
use crate::statistics::{gradient_stats, GradientStats, EPS_VAR};

/// Relative size of the diagonal floor applied after assembly.
pub const FLOOR_REL: f64 = 1e-12;

/// Symmetric matrix supported on the bands `0`, `±1` and `±stride`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiveBanded {
    pub stride: usize,
    pub main: Vec<f64>,
    /// `(m, m + 1)`, length `n - 1`.
    pub first: Vec<f64>,
    /// `(m, m + stride)`, length `n - stride`.
    pub far: Vec<f64>,
}

impl FiveBanded {
    pub fn zeros(n: usize, stride: usize) -> Self {
        assert!(stride >= 2 && stride < n.max(3), "stride {stride} invalid for dimension {n}");
        Self { stride, main: vec![0.0; n], first: vec![0.0; n - 1], far: vec![0.0; n - stride] }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.main.len()
    }

    /// Entry `(p, q)`, 0-based.
    pub fn get(&self, p: usize, q: usize) -> f64 {
        let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
        match hi - lo {
            0 => self.main[lo],
            1 => self.first[lo],
            d if d == self.stride => self.far[lo],
            _ => 0.0,
        }
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let s = self.stride;
        let mut out: Vec<f64> = self.main.iter().zip(v).map(|(a, b)| a * b).collect();
        for k in 0..n - 1 {
            out[k] += self.first[k] * v[k + 1];
            out[k + 1] += self.first[k] * v[k];
        }
        for k in 0..n - s {
            out[k] += self.far[k] * v[k + s];
            out[k + s] += self.far[k] * v[k];
        }
        out
    }

    pub fn to_band(&self) -> SymBandMatrix {
        let n = self.dim();
        let mut b = SymBandMatrix::zeros(n, self.stride);
        for (k, &v) in self.main.iter().enumerate() {
            b.set(k, k, v);
        }
        for (k, &v) in self.first.iter().enumerate() {
            b.set(k + 1, k, v);
        }
        for (k, &v) in self.far.iter().enumerate() {
            b.set(k + self.stride, k, v);
        }
        b
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |p, q| self.get(p, q))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightingMatrix {
    Diagonal(Vec<f64>),
    FiveBanded(FiveBanded),
}

impl WeightingMatrix {
    pub fn dim(&self) -> usize {
        match self {
            Self::Diagonal(d) => d.len(),
            Self::FiveBanded(b) => b.dim(),
        }
    }

    pub fn diagonal(&self) -> &[f64] {
        match self {
            Self::Diagonal(d) => d,
            Self::FiveBanded(b) => &b.main,
        }
    }

    pub fn diagonal_part(&self) -> WeightingMatrix {
        Self::Diagonal(self.diagonal().to_vec())
    }

    pub fn get(&self, p: usize, q: usize) -> f64 {
        match self {
            Self::Diagonal(d) => {
                if p == q {
                    d[p]
                } else {
                    0.0
                }
            }
            Self::FiveBanded(b) => b.get(p, q),
        }
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        match self {
            Self::Diagonal(d) => d.iter().zip(v).map(|(a, b)| a * b).collect(),
            Self::FiveBanded(b) => b.mul_vec(v),
        }
    }

    /// Offsets of the nonzero bands, for bandwidth bookkeeping.
    pub fn offsets(&self) -> Vec<usize> {
        match self {
            Self::Diagonal(_) => vec![0],
            Self::FiveBanded(b) => vec![0, 1, b.stride],
        }
    }

    /// Replaces every diagonal entry `d` by `max(d, 1e-12 * max(max_diag, 1))`.
    pub fn apply_floor(&mut self) {
        let diag = match self {
            Self::Diagonal(d) => d,
            Self::FiveBanded(b) => &mut b.main,
        };
        let floor = FLOOR_REL * diag.iter().fold(1.0_f64, |m, v| m.max(*v));
        for d in diag.iter_mut() {
            *d = d.max(floor);
        }
    }

    /// Positive definiteness by attempted Cholesky.
    pub fn is_positive_definite(&self) -> bool {
        match self {
            Self::Diagonal(d) => d.iter().all(|v| *v > 0.0),
            Self::FiveBanded(b) => b.to_band().cholesky().is_ok(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |p, q| self.get(p, q))
    }

    /// CSV with header `band,index,value`; `band` is the offset (0, 1 or
    /// `n_x`) and `index` the 1-based row `m` of the upper-triangle entry.
    pub fn to_band_csv(&self) -> String {
        let mut s = String::from("band,index,value\n");
        let mut emit = |band: usize, vals: &[f64]| {
            for (k, v) in vals.iter().enumerate() {
                let _ = writeln!(s, "{band},{},{v}", k + 1);
            }
        };
        match self {
            Self::Diagonal(d) => emit(0, d),
            Self::FiveBanded(b) => {
                emit(0, &b.main);
                emit(1, &b.first);
                emit(b.stride, &b.far);
            }
        }
        s
    }
}

/// Five-banded localization: 1 on the diagonal, 0.5 between vertical and
/// horizontal grid neighbours, 0 elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationMatrix {
    nx: usize,
    n: usize,
}

impl LocalizationMatrix {
    /// Entry for 1-based flat indices.
    pub fn get(&self, m: usize, m2: usize) -> f64 {
        if m == m2 {
            1.0
        } else if m2 == m + 1 && m % self.nx != 0 || m == m2 + 1 && m2 % self.nx != 0 {
            0.5
        } else if m.abs_diff(m2) == self.nx {
            0.5
        } else {
            0.0
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn stride(&self) -> usize {
        self.nx
    }

    pub fn as_banded(&self) -> FiveBanded {
        let mut b = FiveBanded::zeros(self.n, self.nx);
        for k in 0..self.n {
            b.main[k] = 1.0;
        }
        for k in 0..self.n - 1 {
            b.first[k] = self.get(k + 1, k + 2);
        }
        for v in &mut b.far {
            *v = 0.5;
        }
        b
    }
}

pub fn build_localization(grid: &Grid2D) -> LocalizationMatrix {
    LocalizationMatrix { nx: grid.nx, n: grid.len() }
}

/// Column-major 2D array (`rows` fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct Array2 {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl Array2 {
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.values[r + c * self.rows]
    }
}

/// One-sided divided differences of the prior mean, without wrap:
/// `D^x` is `(n_x - 1) x n_y`, `D^y` is `n_x x (n_y - 1)`.
pub fn directional_derivative_fields(prior_mean: &Field2D) -> (Array2, Array2) {
    let g = prior_mean.grid();
    let (nx, ny) = (g.nx, g.ny);
    let mut dx = Vec::with_capacity((nx - 1) * ny);
    for j in 0..ny {
        for i in 0..nx - 1 {
            dx.push((prior_mean.at(i + 1, j) - prior_mean.at(i, j)).abs() / g.dx);
        }
    }
    let mut dy = Vec::with_capacity(nx * (ny - 1));
    for j in 0..ny - 1 {
        for i in 0..nx {
            dy.push((prior_mean.at(i, j + 1) - prior_mean.at(i, j)).abs() / g.dy);
        }
    }
    (
        Array2 { rows: nx - 1, cols: ny, values: dx },
        Array2 { rows: nx, cols: ny - 1, values: dy },
    )
}

/// Binary five-banded mask with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementMask {
    pub stride: usize,
    /// `(m, m + 1)`, length `n - 1`.
    pub first: Vec<f64>,
    /// `(m, m + n_x)`, length `n - n_x`.
    pub far: Vec<f64>,
}

impl RefinementMask {
    /// Entry for 0-based flattened indices; zero off the five bands.
    pub fn get(&self, p: usize, q: usize) -> f64 {
        let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
        match hi - lo {
            0 => 1.0,
            1 => self.first[lo],
            d if d == self.stride => self.far[lo],
            _ => 0.0,
        }
    }

    pub fn all_ones(grid: &Grid2D) -> Self {
        Self { stride: grid.nx, first: vec![1.0; grid.len() - 1], far: vec![1.0; grid.len() - grid.nx] }
    }
}

fn threshold(v: f64, d_thresh: f64) -> f64 {
    if v > d_thresh {
        0.0
    } else {
        1.0
    }
}

/// First band from `D^x` padded with a zero row at the bottom, flattened
/// column-wise and truncated by one entry; far band from flattened `D^y`.
pub fn build_mask(prior_mean: &Field2D, d_thresh: f64) -> Result<RefinementMask> {
    if !(d_thresh > 0.0) {
        return Err(Error::InvalidParameter(format!("d_thresh {d_thresh} must be positive")));
    }
    let g = prior_mean.grid();
    let (dx, dy) = directional_derivative_fields(prior_mean);
    let mut padded = Vec::with_capacity(g.len());
    for j in 0..dx.cols {
        padded.extend_from_slice(&dx.values[j * dx.rows..(j + 1) * dx.rows]);
        padded.push(0.0);
    }
    padded.pop();
    let first = padded.iter().map(|&v| threshold(v, d_thresh)).collect();
    let far = dy.values.iter().map(|&v| threshold(v, d_thresh)).collect();
    Ok(RefinementMask { stride: g.nx, first, far })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha >= 1.0) || !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!("inflation factor {alpha} must be >= 1")));
    }
    Ok(())
}

fn check_beta(beta_tilde: f64) -> Result<()> {
    if !(beta_tilde > 0.0) || !beta_tilde.is_finite() {
        return Err(Error::InvalidParameter(format!("beta_tilde {beta_tilde} must be positive")));
    }
    Ok(())
}

/// Per-state deviation rows with cached variances, for band correlations.
struct RowStats {
    k: usize,
    rows: Vec<f64>,
    var: Vec<f64>,
}

impl RowStats {
    fn new(ce: &CenteredEnsemble) -> Self {
        let t = ce.deviations.transpose();
        let k = t.nrows();
        let rows = t.as_slice().to_vec();
        let var = rows.chunks(k).map(|r| r.iter().map(|v| v * v).sum()).collect();
        Self { k, rows, var }
    }

    fn row(&self, p: usize) -> &[f64] {
        &self.rows[p * self.k..(p + 1) * self.k]
    }

    /// Pearson correlation with the collapsed-variance convention.
    fn corr(&self, p: usize, q: usize) -> f64 {
        if p == q {
            return 1.0;
        }
        let (vp, vq) = (self.var[p], self.var[q]);
        if vp < EPS_VAR || vq < EPS_VAR {
            return 0.0;
        }
        let c: f64 = self.row(p).iter().zip(self.row(q)).map(|(a, b)| a * b).sum();
        (c / (vp.sqrt() * vq.sqrt())).clamp(-1.0, 1.0)
    }
}

/// Five-banded `diag(sqrt(d)) R diag(sqrt(d)) ⊙ T ⊙ M`, scaled by `scale`.
fn banded_from_diag(
    diag: &[f64],
    scale: f64,
    rows: &RowStats,
    loc: &LocalizationMatrix,
    mask: Option<&RefinementMask>,
) -> FiveBanded {
    let n = diag.len();
    let taper = loc.as_banded();
    let mut b = FiveBanded::zeros(n, loc.stride());
    let sq: Vec<f64> = diag.iter().map(|d| d.max(0.0).sqrt()).collect();
    for p in 0..n {
        b.main[p] = scale * diag[p];
    }
    for p in 0..n - 1 {
        let t = taper.first[p] * mask.map_or(1.0, |m| m.first[p]);
        if t != 0.0 {
            b.first[p] = scale * sq[p] * rows.corr(p, p + 1) * sq[p + 1] * t;
        }
    }
    let s = loc.stride();
    for p in 0..n - s {
        let t = taper.far[p] * mask.map_or(1.0, |m| m.far[p]);
        if t != 0.0 {
            b.far[p] = scale * sq[p] * rows.corr(p, p + s) * sq[p + s] * t;
        }
    }
    b
}

/// `W_C^D = α² V`, floored.
pub fn assemble_w_c_diag(ens: &Ensemble, alpha: f64) -> Result<WeightingMatrix> {
    w_c_diag_from(&center(ens), alpha)
}

pub(crate) fn w_c_diag_from(ce: &CenteredEnsemble, alpha: f64) -> Result<WeightingMatrix> {
    check_alpha(alpha)?;
    let a2 = alpha * alpha;
    let mut w = WeightingMatrix::Diagonal(ce.variance().iter().map(|v| a2 * v).collect());
    w.apply_floor();
    Ok(w)
}

/// `W_C = α² C ⊙ T` on the five bands, floored.
pub fn assemble_w_c_banded(ens: &Ensemble, alpha: f64, loc: &LocalizationMatrix) -> Result<WeightingMatrix> {
    w_c_banded_from(&center(ens), alpha, loc)
}

pub(crate) fn w_c_banded_from(ce: &CenteredEnsemble, alpha: f64, loc: &LocalizationMatrix) -> Result<WeightingMatrix> {
    check_alpha(alpha)?;
    check_dim(ce.state_dim(), loc)?;
    let rows = RowStats::new(ce);
    let mut w = WeightingMatrix::FiveBanded(banded_from_diag(&rows.var, alpha * alpha, &rows, loc, None));
    w.apply_floor();
    Ok(w)
}

fn check_dim(n: usize, loc: &LocalizationMatrix) -> Result<()> {
    if n != loc.dim() {
        return Err(Error::GridMismatch(format!("{n} states vs localization of size {}", loc.dim())));
    }
    Ok(())
}

/// `β = β̃ / max S^D`, or `None` when the statistic has collapsed.
pub fn gradient_scale(stats: &GradientStats, beta_tilde: f64) -> Option<f64> {
    let max = stats.s_diag.values().iter().fold(0.0_f64, |m, v| m.max(*v));
    if max < EPS_VAR {
        None
    } else {
        Some(beta_tilde / max)
    }
}

/// `W_S^D = β S^D`, floored.
pub fn assemble_w_s_diag(ens: &Ensemble, theta: f64, phi: f64, beta_tilde: f64) -> Result<WeightingMatrix> {
    check_beta(beta_tilde)?;
    let stats = gradient_stats(ens, theta, phi)?;
    Ok(w_s_diag_from(&stats, beta_tilde))
}

pub(crate) fn w_s_diag_from(stats: &GradientStats, beta_tilde: f64) -> WeightingMatrix {
    let diag = match gradient_scale(stats, beta_tilde) {
        Some(beta) => stats.s_diag.values().iter().map(|s| beta * s).collect(),
        None => vec![0.0; stats.s_diag.values().len()],
    };
    let mut w = WeightingMatrix::Diagonal(diag);
    w.apply_floor();
    w
}

/// `Ŵ_S = β S ⊙ T`, or `W_S = β S ⊙ T ⊙ M` when a mask is given; floored.
pub fn assemble_w_s_banded(
    ens: &Ensemble,
    theta: f64,
    phi: f64,
    beta_tilde: f64,
    loc: &LocalizationMatrix,
    mask: Option<&RefinementMask>,
) -> Result<WeightingMatrix> {
    check_beta(beta_tilde)?;
    let stats = gradient_stats(ens, theta, phi)?;
    w_s_banded_from(&center(ens), &stats, beta_tilde, loc, mask)
}

pub(crate) fn w_s_banded_from(
    ce: &CenteredEnsemble,
    stats: &GradientStats,
    beta_tilde: f64,
    loc: &LocalizationMatrix,
    mask: Option<&RefinementMask>,
) -> Result<WeightingMatrix> {
    check_dim(ce.state_dim(), loc)?;
    if let Some(m) = mask {
        if m.stride != loc.stride() || m.first.len() + 1 != loc.dim() {
            return Err(Error::GridMismatch("mask does not match localization".into()));
        }
    }
    let rows = RowStats::new(ce);
    let banded = match gradient_scale(stats, beta_tilde) {
        Some(beta) => banded_from_diag(stats.s_diag.values(), beta, &rows, loc, mask),
        None => FiveBanded::zeros(loc.dim(), loc.stride()),
    };
    let mut w = WeightingMatrix::FiveBanded(banded);
    w.apply_floor();
    Ok(w)
}
