//! Error and similarity measures of the posterior mean against the truth.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::grid::Field2D;

/// `|u - truth|` pointwise.
pub fn pointwise_error(u: &Field2D, truth: &Field2D) -> Result<Field2D> {
    u.grid().check_same(truth.grid())?;
    let vals = u.values().iter().zip(truth.values()).map(|(a, b)| (a - b).abs()).collect();
    Field2D::from_flat(*u.grid(), vals)
}

/// Relative ℓ1 and ℓ2 errors, each numerator and denominator averaged over
/// the grid before the ratio is taken.
pub fn relative_errors(u: &Field2D, truth: &Field2D) -> Result<(f64, f64)> {
    u.grid().check_same(truth.grid())?;
    let n = u.values().len() as f64;
    let (mut d1, mut d2, mut t1, mut t2) = (0.0, 0.0, 0.0, 0.0);
    for (a, b) in u.values().iter().zip(truth.values()) {
        let d = a - b;
        d1 += d.abs();
        d2 += d * d;
        t1 += b.abs();
        t2 += b * b;
    }
    if t1 == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok(((d1 / n) / (t1 / n), (d2 / n).sqrt() / (t2 / n).sqrt()))
}

/// Spatial Pearson correlation; `None` when either field has no spatial
/// variance.
pub fn pattern_correlation(u: &Field2D, truth: &Field2D) -> Result<Option<f64>> {
    u.grid().check_same(truth.grid())?;
    let n = u.values().len() as f64;
    let mu = u.values().iter().sum::<f64>() / n;
    let mt = truth.values().iter().sum::<f64>() / n;
    let (mut c, mut su, mut st) = (0.0, 0.0, 0.0);
    for (a, b) in u.values().iter().zip(truth.values()) {
        let (da, db) = (a - mu, b - mt);
        c += da * db;
        su += da * da;
        st += db * db;
    }
    if su == 0.0 || st == 0.0 {
        return Ok(None);
    }
    Ok(Some(c / (su.sqrt() * st.sqrt())))
}

/// Per-assimilation-time metrics; `pcorr` is NaN where undefined.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricSeries {
    pub times: Vec<f64>,
    pub err_l1: Vec<f64>,
    pub err_l2: Vec<f64>,
    pub pcorr: Vec<f64>,
}

impl MetricSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn push(&mut self, t: f64, err_l1: f64, err_l2: f64, pcorr: Option<f64>) -> Result<()> {
        if let Some(&last) = self.times.last() {
            if !(t > last) {
                return Err(Error::InvalidParameter(format!("time {t} does not follow {last}")));
            }
        }
        self.times.push(t);
        self.err_l1.push(err_l1);
        self.err_l2.push(err_l2);
        self.pcorr.push(pcorr.unwrap_or(f64::NAN));
        Ok(())
    }

    /// Appends the metrics of `u` against `truth` at time `t`.
    pub fn record(&mut self, t: f64, u: &Field2D, truth: &Field2D) -> Result<()> {
        let (l1, l2) = relative_errors(u, truth)?;
        let pc = pattern_correlation(u, truth)?;
        if pc.is_none() {
            log::warn!("pattern correlation undefined at t = {t}");
        }
        self.push(t, l1, l2, pc)
    }

    /// Header `t,err_l1,err_l2,pcorr`; values in shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,err_l1,err_l2,pcorr\n");
        for q in 0..self.len() {
            let _ = writeln!(s, "{},{},{},{}", self.times[q], self.err_l1[q], self.err_l2[q], self.pcorr[q]);
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |detail: String| Error::Format { what: "metrics csv", detail };
        let mut lines = text.lines();
        match lines.next() {
            Some("t,err_l1,err_l2,pcorr") => {}
            other => return Err(bad(format!("unexpected header {other:?}"))),
        }
        let mut out = MetricSeries::default();
        for (k, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let vals: Vec<f64> = line
                .split(',')
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| bad(format!("row {}: {e}", k + 1)))?;
            if vals.len() != 4 {
                return Err(bad(format!("row {} has {} columns", k + 1, vals.len())));
            }
            let pc = if vals[3].is_nan() { None } else { Some(vals[3]) };
            out.push(vals[0], vals[1], vals[2], pc)?;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryMetrics {
    pub e_l1: f64,
    pub e_l2: f64,
    pub pc: f64,
    /// 1-based first cycle of the averaging window.
    pub q0: usize,
}

impl std::fmt::Display for SummaryMetrics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "e_l1={}, e_l2={}, Pc={}", self.e_l1, self.e_l2, self.pc)
    }
}

/// `q0 = ceil(L / 2)` for `L` cycles (at least 1).
pub fn burn_in_start(l_obs: usize) -> usize {
    l_obs.div_ceil(2).max(1)
}

/// Means over cycles `q0..=L`; undefined correlations are skipped.
pub fn summarize(series: &MetricSeries) -> Result<SummaryMetrics> {
    if series.is_empty() {
        return Err(Error::InvalidParameter("cannot summarize an empty metric series".into()));
    }
    let q0 = burn_in_start(series.len());
    let window = q0 - 1..series.len();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let pcs: Vec<f64> = series.pcorr[window.clone()].iter().copied().filter(|v| !v.is_nan()).collect();
    Ok(SummaryMetrics {
        e_l1: mean(&series.err_l1[window.clone()]),
        e_l2: mean(&series.err_l2[window]),
        pc: if pcs.is_empty() { f64::NAN } else { mean(&pcs) },
        q0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid2D;
    use crate::rng::RngStream;
    use proptest::prelude::*;

    fn random_field(seed: u64, offset: f64) -> Field2D {
        let g = Grid2D::unit(7, 5).unwrap();
        let mut rng = RngStream::new(seed);
        Field2D::from_flat(g, (0..35).map(|_| offset + rng.normal()).collect()).unwrap()
    }

    #[test]
    fn pointwise_examples() {
        let t = random_field(1, 0.0);
        assert!(pointwise_error(&t, &t).unwrap().values().iter().all(|&v| v == 0.0));
        let e = pointwise_error(&t.map(|v| v + 0.25), &t).unwrap();
        assert!(e.values().iter().all(|v| (v - 0.25).abs() < 1e-15));
        let u = random_field(2, 0.0);
        let e = pointwise_error(&u, &t).unwrap();
        for p in 0..35 {
            assert_eq!(e.values()[p], (u.values()[p] - t.values()[p]).abs());
        }
        let other = Field2D::zeros(Grid2D::unit(3, 3).unwrap());
        assert!(pointwise_error(&other, &t).is_err());
    }

    #[test]
    fn relative_error_examples() {
        let t = random_field(3, 5.0);
        assert_eq!(relative_errors(&t, &t).unwrap(), (0.0, 0.0));
        let (a, b) = relative_errors(&t.map(|v| 1.1 * v), &t).unwrap();
        assert!((a - 0.1).abs() < 1e-13 && (b - 0.1).abs() < 1e-13);
        let z = Field2D::zeros(*t.grid());
        assert!(matches!(relative_errors(&t, &z), Err(Error::ZeroReference)));
    }

    #[test]
    fn relative_error_brute_force() {
        let u = random_field(4, 0.0);
        let t = random_field(5, 0.3);
        let (a, b) = relative_errors(&u, &t).unwrap();
        let g = t.grid();
        let (mut n1, mut d1, mut n2, mut d2) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..g.nx {
            for j in 0..g.ny {
                n1 += (u.at(i, j) - t.at(i, j)).abs() / 35.0;
                d1 += t.at(i, j).abs() / 35.0;
                n2 += (u.at(i, j) - t.at(i, j)).powi(2) / 35.0;
                d2 += t.at(i, j).powi(2) / 35.0;
            }
        }
        assert!((a - n1 / d1).abs() < 1e-13);
        assert!((b - n2.sqrt() / d2.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn pattern_correlation_examples() {
        let t = random_field(6, 0.0);
        assert!((pattern_correlation(&t, &t).unwrap().unwrap() - 1.0).abs() < 1e-14);
        let anti = t.map(|v| 3.0 - v);
        assert!((pattern_correlation(&anti, &t).unwrap().unwrap() + 1.0).abs() < 1e-14);
        assert_eq!(pattern_correlation(&Field2D::constant(*t.grid(), 2.0), &t).unwrap(), None);
    }

    #[test]
    fn pattern_correlation_brute_force() {
        let u = random_field(7, 0.0);
        let t = random_field(8, 1.0);
        let pc = pattern_correlation(&u, &t).unwrap().unwrap();
        let n = 35.0;
        let mu: f64 = u.values().iter().sum::<f64>() / n;
        let mt: f64 = t.values().iter().sum::<f64>() / n;
        let mut num = 0.0;
        let mut a = 0.0;
        let mut b = 0.0;
        for p in 0..35 {
            num += (u.values()[p] - mu) * (t.values()[p] - mt);
            a += (u.values()[p] - mu).powi(2);
            b += (t.values()[p] - mt).powi(2);
        }
        assert!((pc - num / (a.sqrt() * b.sqrt())).abs() < 1e-12);
    }

    fn series(vals: &[f64]) -> MetricSeries {
        let mut s = MetricSeries::default();
        for (q, &v) in vals.iter().enumerate() {
            s.push((q + 1) as f64 * 0.1, v, 2.0 * v, Some(v)).unwrap();
        }
        s
    }

    #[test]
    fn summary_windows() {
        let s = summarize(&series(&[0.5; 6])).unwrap();
        assert_eq!((s.e_l1, s.e_l2, s.pc), (0.5, 1.0, 0.5));
        let s = summarize(&series(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(s.q0, 2);
        assert_eq!(s.e_l1, 3.0);
        let s = summarize(&series(&[1.0, 2.0, 3.0, 4.0, 5.0])).unwrap();
        assert_eq!(s.q0, 3);
        assert_eq!(s.e_l1, 4.0);
        assert_eq!(summarize(&series(&[7.0])).unwrap().e_l1, 7.0);
        assert!(summarize(&MetricSeries::default()).is_err());
    }

    #[test]
    fn summary_brute_force() {
        let mut rng = RngStream::new(12);
        let vals: Vec<f64> = (0..400).map(|_| rng.uniform()).collect();
        let s = summarize(&series(&vals)).unwrap();
        let expect: f64 = vals[199..].iter().sum::<f64>() / 201.0;
        assert!((s.e_l1 - expect).abs() < 1e-14);
    }

    #[test]
    fn undefined_correlation_is_skipped() {
        let mut s = MetricSeries::default();
        s.push(1.0, 0.1, 0.1, Some(0.9)).unwrap();
        s.push(2.0, 0.1, 0.1, None).unwrap();
        s.push(3.0, 0.1, 0.1, Some(0.7)).unwrap();
        assert!((summarize(&s).unwrap().pc - 0.7).abs() < 1e-15);
        assert!(s.push(2.5, 0.0, 0.0, None).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut rng = RngStream::new(2);
        let mut s = MetricSeries::default();
        for q in 1..=20 {
            let pc = if q == 7 { None } else { Some(rng.uniform()) };
            s.push(q as f64 * 0.025, rng.uniform() * 1e-3, rng.normal().abs(), pc).unwrap();
        }
        let csv = s.to_csv();
        assert!(csv.starts_with("t,err_l1,err_l2,pcorr\n"));
        let back = MetricSeries::from_csv(&csv).unwrap();
        assert_eq!(back.to_csv(), csv);
        assert_eq!(back.err_l1, s.err_l1);
        assert!(MetricSeries::from_csv("a,b\n").is_err());
    }

    proptest! {
        #[test]
        fn pcorr_positive_affine_invariant(seed in 0u64..500, a in 0.01f64..100.0, b in -50.0f64..50.0) {
            let u = random_field(seed, 0.0);
            let t = random_field(seed + 1000, 0.5);
            let p0 = pattern_correlation(&u, &t).unwrap().unwrap();
            let p1 = pattern_correlation(&u.map(|v| a * v + b), &t).unwrap().unwrap();
            prop_assert!((p0 - p1).abs() < 1e-12);
        }

        #[test]
        fn relative_errors_scale_covariant(seed in 0u64..500, c in prop_oneof![-10.0f64..-0.1, 0.1f64..10.0]) {
            let u = random_field(seed, 0.0);
            let t = random_field(seed + 7, 1.0);
            let (a, b) = relative_errors(&u, &t).unwrap();
            let (a2, b2) = relative_errors(&u.map(|v| c * v), &t.map(|v| c * v)).unwrap();
            prop_assert!((a - a2).abs() < 1e-12 * a.max(1.0));
            prop_assert!((b - b2).abs() < 1e-12 * b.max(1.0));
        }
    }
}
