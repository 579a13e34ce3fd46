//! Ground truth at the assimilation times.

use crate::error::{Error, Result};
use crate::grid::{Field2D, Grid2D};
use crate::solver::{advance, InitialCondition, PdeModel};

use super::config::{ScenarioConfig, TruthSection};

/// Rounds a shifted coordinate so that roundoff in `x - a t` does not move a
/// point across a closed region boundary of the initial condition.
fn snap(v: f64) -> f64 {
    (v * 1e12).round() / 1e12
}

/// `u0((x - a_x t) mod Lx, (y - a_y t) mod Ly)` at the grid points.
pub fn analytic_advection(ic: InitialCondition, grid: &Grid2D, ax: f64, ay: f64, t: f64) -> Field2D {
    let lx = grid.x_max - grid.x_min;
    let ly = grid.y_max - grid.y_min;
    Field2D::from_fn(*grid, |x, y| {
        let xs = grid.x_min + snap((x - grid.x_min - ax * t).rem_euclid(lx)).rem_euclid(lx);
        let ys = grid.y_min + snap((y - grid.y_min - ay * t).rem_euclid(ly)).rem_euclid(ly);
        ic.eval(xs, ys)
    })
}

/// The solver run on a grid refined by an integer factor, sampled back onto
/// the coarse grid by index subsampling.
#[derive(Debug, Clone)]
pub struct ReferenceRun {
    coarse: Grid2D,
    refine: usize,
    model: PdeModel,
    fine_dt: f64,
    state: Field2D,
    fine_steps: usize,
}

impl ReferenceRun {
    /// Fine grid `(n - 1) r + 1` points per direction, fine step `dt / r`.
    pub fn new(ic: InitialCondition, coarse: &Grid2D, model: PdeModel, coarse_dt: f64, refine: usize) -> Result<Self> {
        if refine < 1 {
            return Err(Error::InvalidParameter(format!("refinement factor {refine} must be >= 1")));
        }
        let fine = Grid2D::new(
            (coarse.x_min, coarse.x_max),
            (coarse.y_min, coarse.y_max),
            (coarse.nx - 1) * refine + 1,
            (coarse.ny - 1) * refine + 1,
        )?;
        Ok(Self {
            coarse: *coarse,
            refine,
            model,
            fine_dt: coarse_dt / refine as f64,
            state: Field2D::from_fn(fine, |x, y| ic.eval(x, y)),
            fine_steps: 0,
        })
    }

    /// Advances by `coarse_steps` coarse time steps.
    pub fn advance_coarse(&mut self, coarse_steps: usize) {
        let n = coarse_steps * self.refine;
        self.state = advance(&self.state, n, self.fine_dt, &self.model);
        self.fine_steps += n;
    }

    pub fn time(&self) -> f64 {
        self.fine_steps as f64 * self.fine_dt
    }

    pub fn fine(&self) -> &Field2D {
        &self.state
    }

    /// Exact subsample at coarse points.
    pub fn coarse(&self) -> Field2D {
        let r = self.refine;
        let mut out = Field2D::zeros(self.coarse);
        for j in 0..self.coarse.ny {
            for i in 0..self.coarse.nx {
                out.set(i, j, self.state.at(i * r, j * r));
            }
        }
        out
    }
}

enum Source {
    Analytic { ic: InitialCondition, ax: f64, ay: f64 },
    Reference(Box<ReferenceRun>),
}

/// Streams the truth at `t_1, t_2, ...` without holding the full sequence.
pub struct TruthStream {
    grid: Grid2D,
    source: Source,
    steps_per_cycle: usize,
    cfg_times: Vec<f64>,
    q: usize,
}

impl TruthStream {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self> {
        let grid = cfg.grid()?;
        let ic: InitialCondition = cfg.initial.condition.parse()?;
        let model = cfg.model()?;
        let source = match (&cfg.truth, model) {
            (TruthSection::Analytic, PdeModel::LinearAdvection { ax, ay }) => Source::Analytic { ic, ax, ay },
            (TruthSection::Analytic, PdeModel::Burgers) => {
                return Err(Error::Config("analytic truth requires linear advection".into()))
            }
            (TruthSection::Reference { refine }, _) => {
                Source::Reference(Box::new(ReferenceRun::new(ic, &grid, model, cfg.time.dt, *refine)?))
            }
        };
        let cfg_times = (1..=cfg.n_cycles()?).map(|q| cfg.cycle_time(q)).collect();
        Ok(Self { grid, source, steps_per_cycle: cfg.time.obs_interval, cfg_times, q: 0 })
    }
}

impl Iterator for TruthStream {
    /// `(t_q, truth)`.
    type Item = (f64, Field2D);

    fn next(&mut self) -> Option<Self::Item> {
        let t = *self.cfg_times.get(self.q)?;
        self.q += 1;
        let field = match &mut self.source {
            Source::Analytic { ic, ax, ay } => analytic_advection(*ic, &self.grid, *ax, *ay, t),
            Source::Reference(run) => {
                run.advance_coarse(self.steps_per_cycle);
                run.coarse()
            }
        };
        Some((t, field))
    }
}

/// Truth at every assimilation time `t_1..t_L`.
pub fn generate_truth(cfg: &ScenarioConfig) -> Result<Vec<(f64, Field2D)>> {
    Ok(TruthStream::new(cfg)?.collect())
}
