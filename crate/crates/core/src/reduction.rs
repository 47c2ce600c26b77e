//! Reduction to the classical one-time renewal equation for rates that do
//! not depend on `a`, and the delay identity satisfied by its activity.
//!
//! The scheme here is the row sum of the two-time scheme, phase by phase, so
//! marginals of a two-time run and a one-time run agree to rounding.

use crate::error::{Error, Result};
use crate::grid::{steps_in, DensityField, Grid};
use crate::rate::{CellRates, FiringRateSpec, SigmoidParams};
use crate::transport::{damped_fixed_point, step_count, CouplingMode, SimulationTrace};

/// Distribution of the first elapsed time. `mass[i]` is the mass of cell
/// `[i delta, (i + 1) delta)`; the grid's `n_d` limits reinjection.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginal1D {
    pub grid: Grid,
    pub mass: Vec<f64>,
    pub lost_tail: f64,
}

impl Marginal1D {
    pub fn from_field(field: &DensityField) -> Self {
        Marginal1D {
            grid: field.grid,
            mass: field
                .mass
                .chunks_exact(field.grid.n_d)
                .map(|row| row.iter().sum())
                .collect(),
            lost_tail: field.lost_tail,
        }
    }

    /// From densities per unit `s` on the row centers.
    pub fn from_density(grid: Grid, density: &[f64]) -> Result<Self> {
        if density.len() != grid.n_s {
            return Err(Error::GridMismatch(format!(
                "expected {} rows, got {}",
                grid.n_s,
                density.len()
            )));
        }
        if let Some(bad) = density.iter().find(|m| !(**m >= 0.0)) {
            return Err(Error::InvalidParameter(format!("negative density {bad}")));
        }
        Ok(Marginal1D {
            grid,
            mass: density.iter().map(|m| m * grid.delta).collect(),
            lost_tail: 0.0,
        })
    }

    /// Row sums of the two-time discretization of `init` without storing the
    /// field, rescaled to unit mass.
    pub fn discretize<F>(init: F, grid: &Grid) -> Result<Self>
    where
        F: Fn(f64, f64) -> f64,
    {
        let area = grid.delta * grid.delta;
        let mass: Vec<f64> = (0..grid.n_s)
            .map(|i| {
                let s = grid.s_center(i);
                (0..grid.n_d)
                    .map(|j| {
                        let v = init(s, grid.a_center(i, j));
                        if v > 0.0 { v * area } else { 0.0 }
                    })
                    .sum()
            })
            .collect();
        let total: f64 = mass.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::ZeroMass);
        }
        Ok(Marginal1D {
            grid: *grid,
            mass: mass.into_iter().map(|m| m / total).collect(),
            lost_tail: 0.0,
        })
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn density(&self) -> Vec<f64> {
        self.mass.iter().map(|m| m / self.grid.delta).collect()
    }

    fn activity_at(&self, spec: &FiringRateSpec, x: f64) -> f64 {
        let rates = CellRates::new(spec, &self.grid, x);
        let fired: f64 = self
            .mass
            .iter()
            .zip(&rates.decay_row)
            .map(|(m, q)| m - q * m)
            .sum();
        fired / self.grid.delta
    }
}

/// Streaming solver, the one-time counterpart of
/// [`crate::transport::Simulation`].
#[derive(Debug, Clone)]
pub struct Classical {
    spec: FiringRateSpec,
    mode: CouplingMode,
    fallback: bool,
    state: Marginal1D,
    step_index: usize,
    x: f64,
    picard_iters: usize,
    fell_back: bool,
}

impl Classical {
    pub fn new(
        init: Marginal1D,
        spec: &FiringRateSpec,
        mode: CouplingMode,
        fallback_to_explicit: bool,
    ) -> Result<Self> {
        if !spec.is_a_independent() {
            return Err(Error::NotReducible);
        }
        mode.validate()?;
        let mut c = Classical {
            spec: spec.clone(),
            mode,
            fallback: fallback_to_explicit,
            state: init,
            step_index: 0,
            x: 0.5 * spec.p_inf,
            picard_iters: 0,
            fell_back: false,
        };
        let measured = c.state.activity_at(&c.spec, c.x);
        c.resolve(measured)?;
        Ok(c)
    }

    /// Same policy as the two-time solver: `measured` is the activity fired
    /// by the previous step and `self.x` the one it used.
    fn resolve(&mut self, measured: f64) -> Result<()> {
        self.picard_iters = 0;
        self.fell_back = false;
        match self.mode {
            CouplingMode::Frozen { x } => self.x = x,
            CouplingMode::Explicit => self.x = measured,
            CouplingMode::Picard { tol, max_iter } => {
                let state = &self.state;
                let spec = &self.spec;
                match damped_fixed_point(|x| state.activity_at(spec, x), self.x, spec.p_inf, tol, max_iter) {
                    Ok(fp) => {
                        self.x = fp.x;
                        self.picard_iters = fp.iterations;
                    }
                    Err(err @ Error::NoConvergence { .. }) => {
                        if !self.fallback {
                            return Err(err);
                        }
                        self.fell_back = true;
                        self.picard_iters = max_iter;
                        self.x = measured;
                    }
                    Err(err) => return Err(err),
                }
            }
        }
        Ok(())
    }

    pub fn state(&self) -> &Marginal1D {
        &self.state
    }

    pub fn activity(&self) -> f64 {
        self.x
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn time(&self) -> f64 {
        self.step_index as f64 * self.state.grid.delta
    }

    pub fn picard_iters(&self) -> usize {
        self.picard_iters
    }

    pub fn fell_back(&self) -> bool {
        self.fell_back
    }

    pub fn advance(&mut self) -> Result<()> {
        let g = self.state.grid;
        let rates = CellRates::new(&self.spec, &g, self.x);
        let n = g.n_s;
        let mass = &mut self.state.mass;
        let mut fired = vec![0.0; n];
        for i in 0..n {
            let kept = mass[i] * rates.decay_row[i];
            fired[i] = mass[i] - kept;
            mass[i] = kept;
        }
        let mut lost = mass[n - 1];
        mass.copy_within(0..n - 1, 1);
        let mut inflow = 0.0;
        for (i, f) in fired.iter().enumerate() {
            if i < g.n_d {
                inflow += f;
            } else {
                lost += f;
            }
        }
        mass[0] = inflow;
        self.state.lost_tail += lost;
        let measured = fired.iter().sum::<f64>() / g.delta;
        self.step_index += 1;
        let step = self.step_index;
        self.resolve(measured).map_err(|e| Error::StepFailed {
            step,
            source: Box::new(e),
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct ClassicalTrace {
    pub times: Vec<f64>,
    pub x_series: Vec<f64>,
    pub mass_series: Vec<f64>,
    pub lost_tail_series: Vec<f64>,
    pub fallback_steps: Vec<usize>,
    /// `(t, density per unit s)`.
    pub snapshots: Vec<(f64, Vec<f64>)>,
    pub final_state: Option<Marginal1D>,
}

pub fn solve_classical(
    init: Marginal1D,
    spec: &FiringRateSpec,
    t_end: f64,
    mode: CouplingMode,
    snapshot_every: Option<usize>,
    fallback_to_explicit: bool,
) -> Result<ClassicalTrace> {
    let steps = step_count(t_end, init.grid.delta);
    let mut solver = Classical::new(init, spec, mode, fallback_to_explicit)?;
    let mut trace = ClassicalTrace::default();
    let record = |c: &Classical, last: bool, trace: &mut ClassicalTrace| {
        trace.times.push(c.time());
        trace.x_series.push(c.activity());
        trace.mass_series.push(c.state().total_mass());
        trace.lost_tail_series.push(c.state().lost_tail);
        if c.fell_back() {
            trace.fallback_steps.push(c.step_index());
        }
        if snapshot_every.is_some_and(|e| e > 0 && (c.step_index().is_multiple_of(e) || last)) {
            trace.snapshots.push((c.time(), c.state().density()));
        }
    };
    record(&solver, steps == 0, &mut trace);
    for k in 0..steps {
        solver.advance()?;
        record(&solver, k + 1 == steps, &mut trace);
    }
    trace.final_state = Some(solver.state);
    Ok(trace)
}

/// L1 distance between the first-time marginal of a two-time field and a
/// one-time density.
pub fn marginal_l1(field: &DensityField, marginal: &Marginal1D) -> Result<f64> {
    if !field.grid.same_as(&marginal.grid) {
        return Err(Error::GridMismatch(format!("{:?} vs {:?}", field.grid, marginal.grid)));
    }
    Ok(field
        .mass
        .chunks_exact(field.grid.n_d)
        .zip(&marginal.mass)
        .map(|(row, m)| (row.iter().sum::<f64>() - m).abs())
        .sum())
}

/// Largest marginal discrepancy over the snapshot times both traces share,
/// with the time it occurs.
pub fn marginal_consistency(trace2d: &SimulationTrace, trace1d: &ClassicalTrace) -> Result<(f64, f64)> {
    let mut worst = (0.0, 0.0);
    let mut matched = 0;
    for (t, field) in &trace2d.snapshots {
        let delta = field.grid.delta;
        let Some((_, m)) = trace1d.snapshots.iter().find(|(s, _)| (s - t).abs() <= 1e-9 * delta) else {
            continue;
        };
        if m.len() != field.grid.n_s {
            return Err(Error::GridMismatch(format!(
                "{} rows in the one-time snapshot, {} in the two-time field",
                m.len(),
                field.grid.n_s
            )));
        }
        let dist: f64 = field
            .marginal_first_time()
            .iter()
            .zip(m)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * delta;
        matched += 1;
        if dist > worst.0 {
            worst = (dist, *t);
        }
    }
    if matched == 0 {
        return Err(Error::GridMismatch("no common snapshot times".into()));
    }
    Ok(worst)
}

/// `|int_{t - sigma}^t X + X(t) / phi(X(t)) - 1|` for every sample with
/// `t >= sigma`. Sample `k` is the activity held over `[t_k, t_k + dt)`, the
/// way a step fires `dt * X_k`, so the integral is the sum of those pieces
/// with a partial piece at the lower end.
pub fn activity_identity_residual(x: &[f64], dt: f64, phi: SigmoidParams, sigma: f64) -> Vec<(f64, f64)> {
    if !(dt > 0.0) || !(sigma > 0.0) {
        return Vec::new();
    }
    let whole = steps_in(sigma, dt);
    let lag = whole.map_or(sigma / dt, |w| w as f64);
    let k0 = whole.unwrap_or(lag.ceil() as usize);
    // fired[k] = integral over [0, t_k)
    let mut fired = vec![0.0; x.len() + 1];
    for k in 0..x.len() {
        fired[k + 1] = fired[k] + dt * x[k];
    }
    let mut out = Vec::new();
    for k in k0..x.len() {
        let start = (k as f64 - lag).max(0.0);
        let lo = start.floor() as usize;
        let below = fired[lo] + (start - lo as f64) * dt * x[lo];
        let integral = fired[k] - below;
        let xt = x[k];
        out.push((k as f64 * dt, (integral + xt / phi.value(xt) - 1.0).abs()));
    }
    out
}
