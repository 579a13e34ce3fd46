//! The forecast/analysis cycle driver.

use std::fmt::Write as _;

use crate::assimilation::{analysis_step, observe_truth};
use crate::ensemble::{forecast, init_ensemble};
use crate::error::{Error, Result};
use crate::grid::Field2D;
use crate::metrics::{summarize, MetricSeries, SummaryMetrics};
use crate::rng::RngStream;
use crate::statistics::{gradient_stats, pointwise_variance};

use super::config::ScenarioConfig;
use super::truth::TruthStream;

/// Fields kept at one requested time.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub posterior_mean: Field2D,
    pub truth: Field2D,
    /// Statistics of the forecast ensemble entering the analysis.
    pub variance: Field2D,
    pub grad_x: Field2D,
    pub grad_y: Field2D,
    pub grad_diag: Field2D,
}

impl Snapshot {
    pub const STATS_KINDS: [&'static str; 4] = ["variance", "grad_x", "grad_y", "grad_diag"];

    pub fn stats(&self, kind: &str) -> Option<&Field2D> {
        match kind {
            "variance" => Some(&self.variance),
            "grad_x" => Some(&self.grad_x),
            "grad_y" => Some(&self.grad_y),
            "grad_diag" => Some(&self.grad_diag),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub config: ScenarioConfig,
    pub config_hash: String,
    pub metrics: MetricSeries,
    /// `None` when the run has no assimilation cycles.
    pub summary: Option<SummaryMetrics>,
    pub snapshots: Vec<Snapshot>,
    pub diagnostics: Vec<String>,
}

impl RunRecord {
    pub fn snapshot(&self, t: f64) -> Result<&Snapshot> {
        self.snapshots.iter().find(|s| (s.t - t).abs() < 1e-9).ok_or(Error::MissingSnapshot(t))
    }
}

fn wants_snapshot(cfg: &ScenarioConfig, t: f64) -> bool {
    cfg.output.snapshot_times.iter().any(|s| (s - t).abs() < 1e-9)
}

/// Runs all cycles: forecast `obs_interval` steps, observe the truth,
/// analyse, record metrics of the posterior mean.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let model = cfg.model()?;
    let obs = cfg.observation_model()?;
    let analysis = cfg.analysis()?;
    let dt = cfg.time.dt;
    let (theta, phi) = cfg.stats_params();

    let mut ens_rng = RngStream::new(cfg.ensemble.seed);
    let mut obs_rng = RngStream::new(cfg.observation.seed);
    let mut ens = init_ensemble(&cfg.initial_field()?, cfg.ensemble.size, cfg.ensemble.noise_std, &mut ens_rng)?;

    let mut metrics = MetricSeries::default();
    let mut snapshots = Vec::new();
    let mut diagnostics = Vec::new();
    diagnostics.push(format!(
        "scenario={} config_hash={} cycles={} scheme={} m_obs={}",
        cfg.name,
        cfg.hash(),
        cfg.n_cycles()?,
        analysis.scheme.label(),
        obs.m_obs()
    ));

    for (q, (t, truth)) in TruthStream::new(cfg)?.enumerate().map(|(k, v)| (k + 1, v)) {
        let cycle = |e: Error| Error::Cycle { cycle: q, source: Box::new(e) };
        ens = forecast(&ens, cfg.time.obs_interval, dt, &model);
        let y = observe_truth(&truth, &obs, &mut obs_rng).map_err(cycle)?;
        let res = analysis_step(&ens, &y, &obs, &analysis).map_err(cycle)?;
        metrics.record(t, &res.posterior_mean, &truth).map_err(cycle)?;

        let d = &res.diagnostics;
        let mut line = String::new();
        let _ = write!(
            line,
            "cycle={q} t={t} solve={} w_diag=[{:e},{:e}] t_eig=[{:e},{:e}] err_l1={:e}",
            d.mean_solve.name(),
            d.w_diag_min,
            d.w_diag_max,
            d.t_eig_min,
            d.t_eig_max,
            metrics.err_l1[q - 1]
        );
        log::info!("{line}");
        diagnostics.push(line);

        if wants_snapshot(cfg, t) {
            let stats = gradient_stats(&ens, theta, phi).map_err(cycle)?;
            snapshots.push(Snapshot {
                t,
                posterior_mean: res.posterior_mean.clone(),
                truth,
                variance: pointwise_variance(&ens),
                grad_x: stats.s_x,
                grad_y: stats.s_y,
                grad_diag: stats.s_diag,
            });
        }
        ens = res.posterior_ensemble;
    }

    let summary = if metrics.is_empty() { None } else { Some(summarize(&metrics)?) };
    Ok(RunRecord { config: cfg.clone(), config_hash: cfg.hash(), metrics, summary, snapshots, diagnostics })
}
