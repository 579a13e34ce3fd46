//! Ensemble container, seeded initialization, forecast and first/second
//! moment summaries.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{read_u64, Field2D, Grid2D};
use crate::rng::RngStream;
use crate::solver::{advance, PdeModel};

/// `K >= 2` fields on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: Vec<Field2D>,
}

impl Ensemble {
    pub fn new(members: Vec<Field2D>) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "ensemble needs at least 2 members, got {}",
                members.len()
            )));
        }
        let g = *members[0].grid();
        for m in &members[1..] {
            g.check_same(m.grid())?;
        }
        Ok(Self { members })
    }

    /// Members from the columns of an `n x K` matrix.
    pub fn from_columns(grid: Grid2D, cols: &DMatrix<f64>) -> Result<Self> {
        if cols.nrows() != grid.len() {
            return Err(Error::GridMismatch(format!("{} rows for {} grid points", cols.nrows(), grid.len())));
        }
        let members = cols
            .column_iter()
            .map(|c| Field2D::from_flat(grid, c.iter().copied().collect()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(members)
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.members.len()
    }

    #[inline]
    pub fn grid(&self) -> &Grid2D {
        self.members[0].grid()
    }

    pub fn members(&self) -> &[Field2D] {
        &self.members
    }

    pub fn member(&self, k: usize) -> &Field2D {
        &self.members[k]
    }

    pub fn into_members(self) -> Vec<Field2D> {
        self.members
    }

    /// Checkpoint: `K`, `n_x`, `n_y` as little-endian u64, then each member in
    /// the field binary format.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let g = self.grid();
        for v in [self.size() as u64, g.nx as u64, g.ny as u64] {
            w.write_all(&v.to_le_bytes())?;
        }
        for m in &self.members {
            m.write_binary(&mut w)?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R, x_range: (f64, f64), y_range: (f64, f64)) -> Result<Self> {
        let k = read_u64(&mut r, "ensemble header")? as usize;
        let nx = read_u64(&mut r, "ensemble header")? as usize;
        let ny = read_u64(&mut r, "ensemble header")? as usize;
        let mut members = Vec::with_capacity(k);
        for _ in 0..k {
            let f = Field2D::read_binary(&mut r, x_range, y_range)?;
            if f.grid().nx != nx || f.grid().ny != ny {
                return Err(Error::Format {
                    what: "ensemble checkpoint",
                    detail: format!("member is {}x{}, header says {nx}x{ny}", f.grid().nx, f.grid().ny),
                });
            }
            members.push(f);
        }
        Self::new(members)
    }
}

/// Member `k` is `u0` plus i.i.d. `N(0, noise_std^2)` per grid point. Draws are
/// taken member by member, each in flatten order.
pub fn init_ensemble(u0: &Field2D, k: usize, noise_std: f64, rng: &mut RngStream) -> Result<Ensemble> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("ensemble size {k} < 2")));
    }
    if !(noise_std >= 0.0) || !noise_std.is_finite() {
        return Err(Error::InvalidParameter(format!("noise std {noise_std} must be >= 0")));
    }
    let mut members = Vec::with_capacity(k);
    let mut noise = vec![0.0; u0.grid().len()];
    for _ in 0..k {
        rng.fill_normal(noise_std, &mut noise);
        let vals = u0.values().iter().zip(&noise).map(|(u, e)| u + e).collect();
        members.push(Field2D::from_flat(*u0.grid(), vals)?);
    }
    Ensemble::new(members)
}

/// Advance every member `n_steps` solver steps.
pub fn forecast(ens: &Ensemble, n_steps: usize, dt: f64, model: &PdeModel) -> Ensemble {
    let members = ens.members.par_iter().map(|m| advance(m, n_steps, dt, model)).collect();
    Ensemble { members }
}

pub fn ensemble_mean(ens: &Ensemble) -> Field2D {
    let g = *ens.grid();
    let mut acc = vec![0.0; g.len()];
    for m in &ens.members {
        for (a, v) in acc.iter_mut().zip(m.values()) {
            *a += v;
        }
    }
    let k = ens.size() as f64;
    for a in &mut acc {
        *a /= k;
    }
    Field2D::from_flat(g, acc).expect("mean of finite members")
}

/// Flattened mean and scaled deviations: column `k` of `deviations` is
/// `(v_k - mean) / sqrt(K - 1)`, so `deviations * deviations^T` is the sample
/// covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteredEnsemble {
    pub mean: DVector<f64>,
    pub deviations: DMatrix<f64>,
}

impl CenteredEnsemble {
    /// Centers the columns of an `n x K` member matrix.
    pub fn from_members(members: &DMatrix<f64>) -> Result<Self> {
        let k = members.ncols();
        if k < 2 {
            return Err(Error::InvalidParameter(format!("ensemble size {k} < 2")));
        }
        let mut mean = DVector::zeros(members.nrows());
        for c in members.column_iter() {
            mean += c;
        }
        mean /= k as f64;
        Ok(Self::from_mean(mean, members))
    }

    fn from_mean(mean: DVector<f64>, members: &DMatrix<f64>) -> Self {
        let scale = 1.0 / ((members.ncols() - 1) as f64).sqrt();
        let mut deviations = members.clone();
        for mut c in deviations.column_iter_mut() {
            c -= &mean;
            c *= scale;
        }
        Self { mean, deviations }
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.deviations.ncols()
    }

    #[inline]
    pub fn state_dim(&self) -> usize {
        self.deviations.nrows()
    }

    pub fn mean_field(&self, grid: Grid2D) -> Result<Field2D> {
        Field2D::from_flat(grid, self.mean.iter().copied().collect())
    }

    /// Implied sample covariance (dense; test scale only).
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.deviations * self.deviations.transpose()
    }

    /// Diagonal of the implied covariance.
    pub fn variance(&self) -> DVector<f64> {
        DVector::from_iterator(self.state_dim(), self.deviations.row_iter().map(|r| r.norm_squared()))
    }
}

pub fn members_matrix(ens: &Ensemble) -> DMatrix<f64> {
    let n = ens.grid().len();
    DMatrix::from_fn(n, ens.size(), |r, c| ens.members[c].values()[r])
}

pub fn center(ens: &Ensemble) -> CenteredEnsemble {
    let mean = DVector::from_vec(ensemble_mean(ens).into_values());
    CenteredEnsemble::from_mean(mean, &members_matrix(ens))
}

/// Multiplicative inflation of the deviations; covariance scales by `alpha^2`.
pub fn inflate(ce: &CenteredEnsemble, alpha: f64) -> Result<CenteredEnsemble> {
    if !(alpha >= 1.0) || !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!("inflation factor {alpha} must be >= 1")));
    }
    Ok(CenteredEnsemble { mean: ce.mean.clone(), deviations: &ce.deviations * alpha })
}
