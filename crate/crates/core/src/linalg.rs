//! Symmetric banded Cholesky and the SPD square root used by the transform.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Symmetric matrix with half-bandwidth `bw`, stored by rows of its lower
/// band: `band[i * (bw + 1) + d] = A[i][i - d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymBandMatrix {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl SymBandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        let bw = bw.min(n.saturating_sub(1));
        Self { n, bw, band: vec![0.0; n * (bw + 1)] }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    /// Entry `(i, j)`; zero outside the band.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let d = i - j;
        if d > self.bw {
            0.0
        } else {
            self.band[i * (self.bw + 1) + d]
        }
    }

    /// Sets `(i, j)` and, implicitly, `(j, i)`.
    ///
    /// Panics if the entry lies outside the band.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let d = i - j;
        assert!(d <= self.bw, "entry ({i}, {j}) outside bandwidth {}", self.bw);
        self.band[i * (self.bw + 1) + d] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let cur = self.get(i, j);
        self.set(i, j, cur + v);
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// `L L^T` factorization; fails on the first non-positive pivot.
    pub fn cholesky(&self) -> Result<BandCholesky> {
        let (n, bw) = (self.n, self.bw);
        let w = bw + 1;
        let mut l = self.band.clone();
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut s = l[i * w + (i - j)];
                let kl = lo.max(j.saturating_sub(bw));
                for k in kl..j {
                    s -= l[i * w + (i - k)] * l[j * w + (j - k)];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::NotPositiveDefinite { pivot: i, value: s });
                    }
                    l[i * w] = s.sqrt();
                } else {
                    l[i * w + (i - j)] = s / l[j * w];
                }
            }
        }
        Ok(BandCholesky { n, bw, l })
    }
}

#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandCholesky {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let (n, bw) = (self.n, self.bw);
        let w = bw + 1;
        let mut x = b.to_vec();
        for i in 0..n {
            let mut s = x[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.l[i * w + (i - k)] * x[k];
            }
            x[i] = s / self.l[i * w];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..(i + bw + 1).min(n) {
                s -= self.l[k * w + (k - i)] * x[k];
            }
            x[i] = s / self.l[i * w];
        }
        x
    }
}

/// Symmetric square root of an SPD matrix via eigendecomposition; eigenvalues
/// are clamped at `floor` first. Fails if an eigenvalue is not positive beyond
/// roundoff.
pub fn spd_sqrt(a: &DMatrix<f64>, floor: f64) -> Result<DMatrix<f64>> {
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
    if let Some((i, &v)) = eig.eigenvalues.iter().enumerate().find(|(_, &v)| v < -1e-10 * scale) {
        return Err(Error::NotPositiveDefinite { pivot: i, value: v });
    }
    let roots = eig.eigenvalues.map(|v| v.max(floor).sqrt());
    let q = &eig.eigenvectors;
    let mut scaled = q.clone();
    for (mut c, r) in scaled.column_iter_mut().zip(roots.iter()) {
        c *= *r;
    }
    Ok(scaled * q.transpose())
}
