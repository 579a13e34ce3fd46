//! Run directories and plot-ready CSV.
//!
//! Layout of a run directory:
//!
//! ```text
//! config.snapshot        canonical config text
//! metrics.csv            t,err_l1,err_l2,pcorr
//! summary.txt            e_l1=..., e_l2=..., Pc=... plus q0, cycles, hash
//! diagnostics.log        one line per cycle
//! snapshots/<t>.field    posterior mean (binary field format)
//! snapshots/<t>_<kind>.field   truth, variance, grad_x, grad_y, grad_diag
//! ```

use std::fmt::Write as _;
use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::Field2D;
use crate::metrics::{summarize, MetricSeries};

use super::config::ScenarioConfig;
use super::run::{RunRecord, Snapshot};
use super::truth::TruthStream;

/// Time label used in file names, rounded to 1e-9.
pub fn time_label(t: f64) -> String {
    format!("{}", (t * 1e9).round() / 1e9)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_field(path: &Path, f: &Field2D) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    f.write_binary(&mut w).map_err(|e| Error::io(path, e))?;
    std::io::Write::flush(&mut w).map_err(|e| Error::io(path, e))
}

fn read_field(path: &Path, cfg: &ScenarioConfig) -> Result<Field2D> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let g = &cfg.grid;
    let f = Field2D::read_binary(BufReader::new(file), (g.x_min, g.x_max), (g.y_min, g.y_max))?;
    cfg.grid()?.check_same(f.grid())?;
    Ok(f)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn summary_text(record: &RunRecord) -> String {
    let mut s = String::new();
    if let Some(sm) = &record.summary {
        let _ = writeln!(s, "{sm}");
        let _ = writeln!(s, "q0={}", sm.q0);
    }
    let _ = writeln!(s, "cycles={}", record.metrics.len());
    let _ = writeln!(s, "config_hash={}", record.config_hash);
    s
}

pub fn write_run_dir(record: &RunRecord, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    write_file(&dir.join("config.snapshot"), &record.config.to_toml())?;
    write_file(&dir.join("metrics.csv"), &record.metrics.to_csv())?;
    write_file(&dir.join("summary.txt"), &summary_text(record))?;
    let mut log = record.diagnostics.join("\n");
    log.push('\n');
    write_file(&dir.join("diagnostics.log"), &log)?;
    let snaps = dir.join("snapshots");
    create_dir(&snaps)?;
    for s in &record.snapshots {
        let label = time_label(s.t);
        write_field(&snaps.join(format!("{label}.field")), &s.posterior_mean)?;
        write_field(&snaps.join(format!("{label}_truth.field")), &s.truth)?;
        for kind in Snapshot::STATS_KINDS {
            write_field(&snaps.join(format!("{label}_{kind}.field")), s.stats(kind).expect("known kind"))?;
        }
    }
    Ok(())
}

/// Reads back a run directory written by [`write_run_dir`].
pub fn load_run_dir(dir: &Path) -> Result<RunRecord> {
    let cfg_path = dir.join("config.snapshot");
    let config = ScenarioConfig::load(&cfg_path)?;
    let metrics_path = dir.join("metrics.csv");
    let metrics =
        MetricSeries::from_csv(&fs::read_to_string(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?)?;
    let log_path = dir.join("diagnostics.log");
    let diagnostics = match fs::read_to_string(&log_path) {
        Ok(text) => text.lines().map(str::to_string).collect(),
        Err(_) => Vec::new(),
    };

    let snaps = dir.join("snapshots");
    let mut times: Vec<(f64, PathBuf)> = Vec::new();
    if snaps.is_dir() {
        for entry in fs::read_dir(&snaps).map_err(|e| Error::io(&snaps, e))? {
            let path = entry.map_err(|e| Error::io(&snaps, e))?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            if let Some(stem) = name.strip_suffix(".field") {
                if !stem.contains('_') {
                    if let Ok(t) = stem.parse::<f64>() {
                        times.push((t, path.clone()));
                    }
                }
            }
        }
    }
    times.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut snapshots = Vec::new();
    for (t, path) in times {
        let label = time_label(t);
        // recover the exact cycle time behind the rounded label
        let t = metrics.times.iter().copied().find(|m| (m - t).abs() < 1e-9).unwrap_or(t);
        let part = |kind: &str| read_field(&snaps.join(format!("{label}_{kind}.field")), &config);
        snapshots.push(Snapshot {
            t,
            posterior_mean: read_field(&path, &config)?,
            truth: part("truth")?,
            variance: part("variance")?,
            grad_x: part("grad_x")?,
            grad_y: part("grad_y")?,
            grad_diag: part("grad_diag")?,
        });
    }
    let summary = if metrics.is_empty() { None } else { Some(summarize(&metrics)?) };
    Ok(RunRecord { config_hash: config.hash(), config, metrics, summary, snapshots, diagnostics })
}

/// Writes the truth at every assimilation time to `dir/truth/<t>.field`.
pub fn write_truth_dir(cfg: &ScenarioConfig, dir: &Path) -> Result<usize> {
    cfg.validate()?;
    let tdir = dir.join("truth");
    create_dir(&tdir)?;
    write_file(&dir.join("config.snapshot"), &cfg.to_toml())?;
    let mut n = 0;
    for (t, f) in TruthStream::new(cfg)? {
        write_field(&tdir.join(format!("{}.field", time_label(t))), &f)?;
        n += 1;
    }
    Ok(n)
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlotRequest {
    Metrics,
    /// Row of the grid nearest to `y` at time `t`.
    CrossSection { y: f64, t: f64 },
    StatsField { kind: String, t: f64 },
}

impl FromStr for PlotRequest {
    type Err = Error;

    /// `metrics`, `cross_section(<y>,<t>)` or `stats_field(<kind>,<t>)`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown plot request `{s}`"));
        let s = s.trim();
        if s == "metrics" {
            return Ok(Self::Metrics);
        }
        let (head, rest) = s.split_once('(').ok_or_else(bad)?;
        let args: Vec<&str> = rest.strip_suffix(')').ok_or_else(bad)?.split(',').map(str::trim).collect();
        let num = |v: &str| v.parse::<f64>().map_err(|_| bad());
        match (head.trim(), args.as_slice()) {
            ("cross_section", [y, t]) => Ok(Self::CrossSection { y: num(y)?, t: num(t)? }),
            ("stats_field", [kind, t]) if Snapshot::STATS_KINDS.contains(kind) => {
                Ok(Self::StatsField { kind: kind.to_string(), t: num(t)? })
            }
            _ => Err(bad()),
        }
    }
}

/// CSV for a plot request: the metrics file verbatim; a cross-section as
/// `x,posterior,truth,error` with one row per `x`; a statistics field as
/// `n_y` rows of `n_x` values.
pub fn emit_plot_data(record: &RunRecord, what: &PlotRequest) -> Result<String> {
    match what {
        PlotRequest::Metrics => Ok(record.metrics.to_csv()),
        PlotRequest::CrossSection { y, t } => {
            let snap = record.snapshot(*t)?;
            let g = *snap.posterior_mean.grid();
            if !(*y >= g.y_min - 0.5 * g.dy && *y <= g.y_max + 0.5 * g.dy) {
                return Err(Error::InvalidParameter(format!("y = {y} outside the domain")));
            }
            let j = (0..g.ny).min_by(|&a, &b| (g.y(a) - y).abs().total_cmp(&(g.y(b) - y).abs())).expect("ny >= 3");
            let mut s = String::from("x,posterior,truth,error\n");
            for i in 0..g.nx {
                let (p, tr) = (snap.posterior_mean.at(i, j), snap.truth.at(i, j));
                let _ = writeln!(s, "{},{},{},{}", g.x(i), p, tr, (p - tr).abs());
            }
            Ok(s)
        }
        PlotRequest::StatsField { kind, t } => {
            let snap = record.snapshot(*t)?;
            Ok(snap.stats(kind).ok_or_else(|| Error::Config(format!("unknown statistic `{kind}`")))?.to_csv())
        }
    }
}
