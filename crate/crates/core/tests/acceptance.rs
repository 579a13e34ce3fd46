//! Acceptance suite. Runs every criterion in order and prints one line per
//! criterion; exits nonzero if any hard criterion fails.
//!
//! The full-scale runs (criteria 5 to 8 and 10) take several minutes each on
//! a single core.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use sida_core::assimilation::{
    posterior_mean_flat, posterior_members, transform_operator, ObservationModel, ObservationPattern,
};
use sida_core::ensemble::CenteredEnsemble;
use sida_core::grid::{Field2D, Grid2D};
use sida_core::harness::{
    advection_scenario, burgers_dense_scenario, burgers_sparse_scenario, run_scenario, write_run_dir, ReferenceRun,
    RunRecord, ScenarioConfig, WeightingSection,
};
use sida_core::metrics::SummaryMetrics;
use sida_core::rng::RngStream;
use sida_core::solver::{advance, InitialCondition, PdeModel};
use sida_core::weighting::{build_localization, build_mask, FiveBanded, WeightingMatrix};

// Pinned tolerances.
const ORDER_RANGE: (f64, f64) = (4.5, 5.5);
const ORDER_BUDGET: Duration = Duration::from_secs(30);
const KALMAN_TOL: f64 = 1e-8;
const MINIMIZATION_TOL: f64 = 1e-8;
const ADVECTION_GRAD_BOUNDS: (f64, f64, f64) = (1.7e-3, 3.8e-3, 0.997);
const MOMENT_PRODUCT_REL: f64 = 0.10;
const PCORR_WIN_FRACTION: f64 = 0.8;
const PCORR_WINDOW: (f64, f64) = (0.3, 2.0);
const REFERENCE_L1_TOL: f64 = 5e-3;

#[derive(PartialEq)]
enum Status {
    Pass,
    Fail,
    /// Soft criterion not met.
    Warn,
}

struct Outcome {
    status: Status,
    detail: String,
}

impl Outcome {
    fn check(ok: bool, detail: String) -> Self {
        Self { status: if ok { Status::Pass } else { Status::Fail }, detail }
    }
}

fn grad_diag(theta: f64, phi: f64, beta_tilde: f64) -> WeightingSection {
    WeightingSection::GradDiag { theta, phi, beta_tilde, transform_inflation: None }
}

fn grad_banded(mask: bool) -> WeightingSection {
    WeightingSection::GradBanded {
        theta: 1.0,
        phi: 1.0,
        beta_tilde: 1e-4,
        mask,
        d_thresh: 4.0,
        transform_inflation: None,
    }
}

fn run(cfg: &ScenarioConfig) -> RunRecord {
    let t0 = Instant::now();
    let rec = run_scenario(cfg).unwrap_or_else(|e| panic!("{} failed: {e}", cfg.name));
    eprintln!("  ({} finished in {:.0?})", cfg.name, t0.elapsed());
    rec
}

fn summary(rec: &RunRecord) -> SummaryMetrics {
    rec.summary.expect("run has cycles")
}

fn fmt(s: &SummaryMetrics) -> String {
    format!("e_l1={:.3e} e_l2={:.3e} Pc={:.4}%", s.e_l1, s.e_l2, 100.0 * s.pc)
}

/// Shared full-scale runs, computed on first use.
#[derive(Default)]
struct Runs {
    adv_grad: Option<RunRecord>,
    adv_cov: Option<RunRecord>,
}

impl Runs {
    fn adv_grad(&mut self) -> &RunRecord {
        self.adv_grad.get_or_insert_with(|| run(&advection_scenario(grad_diag(1.0, 1.0, 1e-3))))
    }

    fn adv_cov(&mut self) -> &RunRecord {
        self.adv_cov.get_or_insert_with(|| run(&advection_scenario(WeightingSection::CovDiag { alpha: 4.0 })))
    }
}

/// ℓ1 convergence of the solver for a smooth advected wave.
fn solver_order(_: &mut Runs) -> Outcome {
    let start = Instant::now();
    let (ax, ay) = (0.5, -1.0);
    let model = PdeModel::LinearAdvection { ax, ay };
    let t_final = 0.25;
    let exact = |x: f64, y: f64, t: f64| (2.0 * std::f64::consts::PI * ((x - ax * t) + (y - ay * t))).sin();
    let mut hs = Vec::new();
    let mut errs = Vec::new();
    for cells in [32usize, 64, 128] {
        let g = Grid2D::unit(cells + 1, cells + 1).unwrap();
        let dx = g.dx;
        let n_steps = (t_final / dx.powf(5.0 / 3.0)).ceil() as usize;
        let dt = t_final / n_steps as f64;
        let u = advance(&Field2D::from_fn(g, |x, y| exact(x, y, 0.0)), n_steps, dt, &model);
        let mut e = 0.0;
        for j in 0..cells {
            for i in 0..cells {
                e += (u.at(i, j) - exact(g.x(i), g.y(j), t_final)).abs();
            }
        }
        hs.push(dx);
        errs.push(e / (cells * cells) as f64);
    }
    // least-squares slope of log e against log h
    let lx: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ly: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let (mx, my) = (lx.iter().sum::<f64>() / 3.0, ly.iter().sum::<f64>() / 3.0);
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let order = num / den;
    let pair: Vec<f64> = (0..2).map(|k| (errs[k] / errs[k + 1]).ln() / 2f64.ln()).collect();
    let elapsed = start.elapsed();
    Outcome::check(
        (ORDER_RANGE.0..=ORDER_RANGE.1).contains(&order) && elapsed < ORDER_BUDGET,
        format!(
            "order {order:.3} (pairwise {:.3}, {:.3}; errors {:.2e} {:.2e} {:.2e}) in {elapsed:.1?}",
            pair[0], pair[1], errs[0], errs[1], errs[2]
        ),
    )
}

/// One analysis cycle on a 3-state toy against the exact Kalman filter.
fn kalman_oracle(_: &mut Runs) -> Outcome {
    let start = Instant::now();
    let members = DMatrix::from_row_slice(3, 3, &[1.0, 1.3, 0.6, 0.2, -0.4, 0.5, 2.0, 2.2, 1.5]);
    let ce = CenteredEnsemble::from_members(&members).unwrap();
    let p = ce.covariance();
    let gamma = 0.1;
    let obs = ObservationModel::dense(3, gamma).unwrap();
    let mut w = FiveBanded::zeros(3, 2);
    for i in 0..3 {
        w.main[i] = p[(i, i)];
    }
    w.first = vec![p[(0, 1)], p[(1, 2)]];
    w.far = vec![p[(0, 2)]];
    let y = [0.9, 0.1, 1.7];
    let prior: Vec<f64> = ce.mean.iter().copied().collect();
    let (mean, _) = posterior_mean_flat(&prior, &y, &obs, &WeightingMatrix::FiveBanded(w)).unwrap();
    let t = transform_operator(&ce, &obs).unwrap();
    let post = posterior_members(&ce, &mean, &t).unwrap();
    let post_ce = CenteredEnsemble::from_members(&post).unwrap();

    let s = &p + DMatrix::identity(3, 3) * gamma * gamma;
    let gain = &p * s.try_inverse().unwrap();
    let m_kf = &ce.mean + &gain * (DVector::from_column_slice(&y) - &ce.mean);
    let p_kf = (DMatrix::identity(3, 3) - &gain) * &p;
    let mean_err = (DVector::from_vec(mean) - &m_kf).amax();
    let member_mean_err = (&post_ce.mean - &m_kf).amax();
    let cov_err = (post_ce.covariance() - &p_kf).amax();
    let worst = mean_err.max(member_mean_err).max(cov_err);
    let elapsed = start.elapsed();
    Outcome::check(
        worst <= KALMAN_TOL && elapsed < Duration::from_secs(1),
        format!("mean err {mean_err:.2e}, ensemble mean err {member_mean_err:.2e}, covariance err {cov_err:.2e} in {elapsed:.1?}"),
    )
}

/// Gain-form posterior mean against a dense normal-equation solve.
fn minimization_equivalence(_: &mut Runs) -> Outcome {
    let start = Instant::now();
    let mut rng = RngStream::new(20_240_601);
    let mut worst: f64 = 0.0;
    for inst in 0..50 {
        let (nx, ny) = [(3, 3), (3, 4), (4, 3), (4, 4)][inst % 4];
        let g = Grid2D::unit(nx, ny).unwrap();
        let n = g.len();
        let gamma = 0.05 + rng.uniform();
        let obs = ObservationModel::new(&g, ObservationPattern::Checkerboard, gamma).unwrap();

        let mut w = FiveBanded::zeros(n, nx);
        for v in w.first.iter_mut().chain(w.far.iter_mut()) {
            *v = rng.normal();
        }
        let dense = w.to_dense();
        for p in 0..n {
            let off: f64 = (0..n).filter(|&q| q != p).map(|q| dense[(p, q)].abs()).sum();
            w.main[p] = off + 0.1 + rng.uniform();
        }
        let wd = w.to_dense();
        let prior: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let y: Vec<f64> = (0..obs.m_obs()).map(|_| rng.normal()).collect();
        let (m, _) = posterior_mean_flat(&prior, &y, &obs, &WeightingMatrix::FiveBanded(w)).unwrap();

        let mut h = DMatrix::zeros(obs.m_obs(), n);
        for (r, &p) in obs.selection().iter().enumerate() {
            h[(r, p)] = 1.0;
        }
        let winv = wd.try_inverse().unwrap();
        let g2 = gamma * gamma;
        let lhs = h.transpose() * &h / g2 + &winv;
        let rhs = h.transpose() * DVector::from_vec(y) / g2 + &winv * DVector::from_vec(prior);
        let oracle = lhs.lu().solve(&rhs).unwrap();
        let rel = (DVector::from_vec(m) - &oracle).amax() / oracle.amax().max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
    }
    let elapsed = start.elapsed();
    Outcome::check(
        worst <= MINIMIZATION_TOL && elapsed < Duration::from_secs(5),
        format!("50 instances, worst relative difference {worst:.2e} in {elapsed:.1?}"),
    )
}

/// Localization and mask against pairwise construction on 5x5 grids.
fn mask_exactness(_: &mut Runs) -> Outcome {
    let start = Instant::now();
    let g = Grid2D::unit(5, 5).unwrap();
    let n = g.len();
    let d_thresh = 4.0;
    let loc = build_localization(&g);
    let banded = loc.as_banded();
    let mut mismatches = 0;
    let mut cut = 0;
    for p in 0..n {
        for q in 0..n {
            let (ip, jp) = g.coords(p);
            let (iq, jq) = g.coords(q);
            let t = if p == q {
                1.0
            } else if ip.abs_diff(iq) + jp.abs_diff(jq) == 1 {
                0.5
            } else {
                0.0
            };
            if loc.get(p + 1, q + 1) != t || banded.get(p, q) != t {
                mismatches += 1;
            }
        }
    }
    for seed in 0..20 {
        let mut rng = RngStream::new(seed);
        let mean = Field2D::from_flat(g, (0..n).map(|_| rng.normal()).collect()).unwrap();
        let mask = build_mask(&mean, d_thresh).unwrap();
        for p in 0..n {
            for q in 0..n {
                if p == q || loc.get(p + 1, q + 1) == 0.0 {
                    continue;
                }
                let (ip, jp) = g.coords(p);
                let (iq, jq) = g.coords(q);
                let dist = ((g.x(ip) - g.x(iq)).powi(2) + (g.y(jp) - g.y(jq)).powi(2)).sqrt();
                let d = (mean.values()[p] - mean.values()[q]).abs() / dist;
                let expect = if d > d_thresh { 0.0 } else { 1.0 };
                if mask.get(p, q) != expect {
                    mismatches += 1;
                }
                if expect == 0.0 {
                    cut += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    Outcome::check(
        mismatches == 0 && cut > 0 && elapsed < Duration::from_secs(1),
        format!("{mismatches} mismatches over 20 random means ({cut} neighbour pairs cut) in {elapsed:.1?}"),
    )
}

fn beats(a: &SummaryMetrics, b: &SummaryMetrics) -> bool {
    a.e_l1 < b.e_l1 && a.e_l2 < b.e_l2 && a.pc > b.pc
}

/// Advection, dense observations, full scale.
fn advection_levels(runs: &mut Runs) -> Outcome {
    let g = summary(runs.adv_grad());
    let c = summary(runs.adv_cov());
    let within = g.e_l1 <= ADVECTION_GRAD_BOUNDS.0 && g.e_l2 <= ADVECTION_GRAD_BOUNDS.1 && g.pc >= ADVECTION_GRAD_BOUNDS.2;
    Outcome::check(
        within && beats(&g, &c),
        format!("W_S^D(1,1,1e-3): {} | W_C^D(4): {}", fmt(&g), fmt(&c)),
    )
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// `(1/2, 2)` against `(1, 1)`; soft.
fn moment_product(runs: &mut Runs) -> Outcome {
    let half = summary(&run(&advection_scenario(grad_diag(0.5, 2.0, 1e-3))));
    let one = summary(runs.adv_grad());
    let d = [rel(half.e_l1, one.e_l1), rel(half.e_l2, one.e_l2), rel(half.pc, one.pc)];
    let ok = d.iter().all(|v| *v <= MOMENT_PRODUCT_REL);
    Outcome {
        status: if ok { Status::Pass } else { Status::Warn },
        detail: format!(
            "(1/2,2): {} | (1,1): {} | relative differences {:.1}% {:.1}% {:.2}%",
            fmt(&half),
            fmt(&one),
            100.0 * d[0],
            100.0 * d[1],
            100.0 * d[2]
        ),
    }
}

/// Burgers with dense observations.
fn burgers_dense(_: &mut Runs) -> Outcome {
    let g = run(&burgers_dense_scenario(grad_diag(1.0, 1.0, 1e-3)));
    let c = run(&burgers_dense_scenario(WeightingSection::CovDiag { alpha: 4.0 }));
    let (sg, sc) = (summary(&g), summary(&c));
    let mut total = 0;
    let mut wins = 0;
    for q in 0..g.metrics.len() {
        let t = g.metrics.times[q];
        if t >= PCORR_WINDOW.0 - 1e-12 && t <= PCORR_WINDOW.1 + 1e-12 {
            total += 1;
            if 1.0 - g.metrics.pcorr[q] < 1.0 - c.metrics.pcorr[q] {
                wins += 1;
            }
        }
    }
    let frac = wins as f64 / total as f64;
    Outcome::check(
        sg.e_l1 < sc.e_l1 && sg.e_l2 < sc.e_l2 && frac >= PCORR_WIN_FRACTION,
        format!(
            "W_S^D(1,1): {} | W_C^D(4): {} | 1-Pcorr smaller at {wins}/{total} times ({:.1}%)",
            fmt(&sg),
            fmt(&sc),
            100.0 * frac
        ),
    )
}

/// Burgers with checkerboard observations.
fn burgers_sparse(_: &mut Runs) -> Outcome {
    let masked = summary(&run(&burgers_sparse_scenario(grad_banded(true))));
    let plain = summary(&run(&burgers_sparse_scenario(grad_banded(false))));
    let cov = summary(&run(&burgers_sparse_scenario(WeightingSection::CovBanded { alpha: 4.0 })));
    let ok = masked.e_l1 < plain.e_l1
        && plain.e_l1 < cov.e_l1
        && masked.e_l2 < plain.e_l2
        && plain.e_l2 < cov.e_l2;
    Outcome::check(ok, format!("W_S: {} | hat W_S: {} | W_C(4): {}", fmt(&masked), fmt(&plain), fmt(&cov)))
}

/// Reference solutions refined by 2 and 4 agree at t = 1.
fn reference_convergence(_: &mut Runs) -> Outcome {
    let g = Grid2D::unit(101, 101).unwrap();
    let dt = 2e-3;
    let steps = 500;
    let at = |r: usize| {
        let mut run = ReferenceRun::new(InitialCondition::BurgersBox, &g, PdeModel::Burgers, dt, r).unwrap();
        run.advance_coarse(steps);
        run.coarse()
    };
    let (a, b) = (at(2), at(4));
    let diff = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).sum::<f64>() / g.len() as f64;
    Outcome::check(diff <= REFERENCE_L1_TOL, format!("mean |Ref(2) - Ref(4)| at t = 1: {diff:.3e}"))
}

/// Identical configs give byte-identical metrics files.
fn determinism(runs: &mut Runs) -> Outcome {
    let cfg = advection_scenario(grad_diag(1.0, 1.0, 1e-3));
    let dir = tempfile::tempdir().unwrap();
    write_run_dir(runs.adv_grad(), &dir.path().join("a")).unwrap();
    write_run_dir(&run(&cfg), &dir.path().join("b")).unwrap();
    let a = std::fs::read(dir.path().join("a/metrics.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/metrics.csv")).unwrap();
    Outcome::check(a == b && !a.is_empty(), format!("metrics.csv {} bytes, identical: {}", a.len(), a == b))
}

type Criterion = (u32, &'static str, fn(&mut Runs) -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        (1, "solver order", solver_order),
        (2, "Kalman equivalence", kalman_oracle),
        (3, "minimization equivalence", minimization_equivalence),
        (4, "mask/localization exactness", mask_exactness),
        (5, "advection error levels", advection_levels),
        (6, "moment-product agreement (soft)", moment_product),
        (7, "Burgers dense ordering", burgers_dense),
        (8, "Burgers sparse ordering", burgers_sparse),
        (9, "reference self-convergence", reference_convergence),
        (10, "determinism", determinism),
    ];
    // `cargo test <filter>` passes the filter through; run only matching
    // criteria when one is given.
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut runs = Runs::default();
    let mut failed = 0;
    for (id, name, f) in criteria {
        if let Some(flt) = &filter {
            if !name.contains(flt.as_str()) && flt != &id.to_string() {
                continue;
            }
        }
        let out = f(&mut runs);
        let tag = match out.status {
            Status::Pass => "PASS",
            Status::Fail => {
                failed += 1;
                "FAIL"
            }
            Status::Warn => "WARN",
        };
        println!("criterion {id:>2} [{name}]: {tag}: {}", out.detail);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
