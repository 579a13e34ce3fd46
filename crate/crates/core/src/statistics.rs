//! Ensemble second moments: pointwise variance, Pearson correlation and the
//! gradient statistics that replace variance in the structurally informed
//! weighting.

use nalgebra::{DMatrix, DVector};

use crate::ensemble::{center, ensemble_mean, CenteredEnsemble, Ensemble};
use crate::error::{Error, Result};
use crate::grid::{central_diff, Direction, Field2D, FlatIndex, Grid2D};

/// Sample variances below this are treated as a collapsed component.
pub const EPS_VAR: f64 = 1e-14;

/// Largest state for which a dense correlation matrix may be built.
pub const DENSE_LIMIT: usize = 4096;

/// `V_ij = 1/(K-1) sum_k (v_ij^(k) - m_ij)^2`.
pub fn pointwise_variance(ens: &Ensemble) -> Field2D {
    let mean = ensemble_mean(ens);
    let mut acc = vec![0.0; mean.values().len()];
    for m in ens.members() {
        for ((a, v), mu) in acc.iter_mut().zip(m.values()).zip(mean.values()) {
            let d = v - mu;
            *a += d * d;
        }
    }
    let denom = (ens.size() - 1) as f64;
    for a in &mut acc {
        *a /= denom;
    }
    Field2D::from_flat(*ens.grid(), acc).expect("finite variance")
}

/// Pearson correlation between state components `p` and `q` (0-based) of a
/// centered ensemble. Collapsed components give 0 off the diagonal and 1 on it.
pub fn pearson_from_deviations(dev: &DMatrix<f64>, p: usize, q: usize) -> f64 {
    let k = dev.ncols();
    let (mut vp, mut vq, mut c) = (0.0, 0.0, 0.0);
    for col in 0..k {
        let a = dev[(p, col)];
        let b = dev[(q, col)];
        vp += a * a;
        vq += b * b;
        c += a * b;
    }
    if p == q {
        return 1.0;
    }
    if vp < EPS_VAR || vq < EPS_VAR {
        return 0.0;
    }
    (c / (vp.sqrt() * vq.sqrt())).clamp(-1.0, 1.0)
}

pub fn pearson_entry(ens: &Ensemble, m: FlatIndex, m2: FlatIndex) -> f64 {
    let ce = center(ens);
    pearson_from_deviations(&ce.deviations, m.offset(), m2.offset())
}

/// Dense symmetric correlation matrix over flattened indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub grid: Grid2D,
    pub entries: DMatrix<f64>,
}

impl CorrelationMatrix {
    pub fn get(&self, m: FlatIndex, m2: FlatIndex) -> f64 {
        self.entries[(m.offset(), m2.offset())]
    }
}

/// Full sample Pearson matrix `R`. Only for grids with at most
/// [`DENSE_LIMIT`] points.
pub fn correlation_matrix(ens: &Ensemble) -> Result<CorrelationMatrix> {
    let g = *ens.grid();
    if g.len() > DENSE_LIMIT {
        return Err(Error::InvalidParameter(format!(
            "dense correlation requested for {} points (limit {DENSE_LIMIT})",
            g.len()
        )));
    }
    let ce: CenteredEnsemble = center(ens);
    let n = g.len();
    let mut r = DMatrix::zeros(n, n);
    for p in 0..n {
        for q in p..n {
            let v = pearson_from_deviations(&ce.deviations, p, q);
            r[(p, q)] = v;
            r[(q, p)] = v;
        }
    }
    Ok(CorrelationMatrix { grid: g, entries: r })
}

/// Directional discrepancy `|m_p - m_q| / |x_p - x_q|` between 0-based
/// flattened indices `p != q`.
pub fn directional_discrepancy(mean: &Field2D, p: usize, q: usize) -> f64 {
    let g = mean.grid();
    let (ip, jp) = g.coords(p);
    let (iq, jq) = g.coords(q);
    let dist = (g.x(ip) - g.x(iq)).hypot(g.y(jp) - g.y(jq));
    (mean.values()[p] - mean.values()[q]).abs() / dist
}

/// Zeroes correlations across pairs whose prior-mean discrepancy exceeds
/// `d_thresh`. The diagonal is set to 1 without evaluating the threshold.
pub fn structural_correlation(r: &CorrelationMatrix, prior_mean: &Field2D, d_thresh: f64) -> Result<CorrelationMatrix> {
    if !(d_thresh > 0.0) {
        return Err(Error::InvalidParameter(format!("d_thresh {d_thresh} must be positive")));
    }
    r.grid.check_same(prior_mean.grid())?;
    let n = r.grid.len();
    let mut out = r.entries.clone();
    for p in 0..n {
        out[(p, p)] = 1.0;
        for q in p + 1..n {
            if directional_discrepancy(prior_mean, p, q) > d_thresh {
                out[(p, q)] = 0.0;
                out[(q, p)] = 0.0;
            }
        }
    }
    Ok(CorrelationMatrix { grid: r.grid, entries: out })
}

/// Directional gradient statistics and their aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientStats {
    pub s_x: Field2D,
    pub s_y: Field2D,
    pub s_diag: Field2D,
    pub theta: f64,
    pub phi: f64,
}

impl GradientStats {
    pub fn diag_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(self.s_diag.values())
    }
}

#[inline]
fn pow_exact(x: f64, e: f64) -> f64 {
    if e == 1.0 {
        x
    } else if e == 2.0 {
        x * x
    } else {
        x.powf(e)
    }
}

/// `S^x = 1/K sum_k |d_x v^(k)|^theta` (likewise `S^y`) with periodic central
/// differences, and `S^D = (S^x)^phi + (S^y)^phi`.
pub fn gradient_stats(ens: &Ensemble, theta: f64, phi: f64) -> Result<GradientStats> {
    if !(theta > 0.0) || !(phi > 0.0) || !theta.is_finite() || !phi.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "moment {theta} and aggregation {phi} parameters must be positive"
        )));
    }
    let g = *ens.grid();
    let n = g.len();
    let mut sx = vec![0.0; n];
    let mut sy = vec![0.0; n];
    for m in ens.members() {
        let dx = central_diff(m, Direction::X);
        let dy = central_diff(m, Direction::Y);
        for p in 0..n {
            sx[p] += pow_exact(dx.values()[p].abs(), theta);
            sy[p] += pow_exact(dy.values()[p].abs(), theta);
        }
    }
    let k = ens.size() as f64;
    for p in 0..n {
        sx[p] /= k;
        sy[p] /= k;
    }
    let sd: Vec<f64> = sx.iter().zip(&sy).map(|(a, b)| pow_exact(*a, phi) + pow_exact(*b, phi)).collect();
    Ok(GradientStats {
        s_x: Field2D::from_flat(g, sx)?,
        s_y: Field2D::from_flat(g, sy)?,
        s_diag: Field2D::from_flat(g, sd)?,
        theta,
        phi,
    })
}
