//! Time stepping for the nonlinear renewal system.
//!
//! One step of length `delta` (equal to the cell size, so advection is an
//! exact index shift) runs these phases in order:
//!
//! 1. resolve the activity `X` (damped Picard, or the previous value);
//! 2. every cell keeps `exp(-p delta)` of its mass, the rest fires;
//! 3. mass fired from `s`-row `i` is buffered for `d`-column `i`;
//! 4. all rows shift `i -> i + 1`, the last row leaves through `lost_tail`;
//! 5. the buffer becomes row 0, columns past `n_d` leave through `lost_tail`.
//!
//! Reinjected mass is exactly the fired mass, so `total_mass + lost_tail` is
//! conserved up to rounding. The discharge flux of a field is defined by the
//! same fired mass, `N_i = fired_i / delta^2`, which makes the stationary
//! problem in [`crate::steady`] the exact fixed point of this scheme.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{DensityField, Grid};
use crate::rate::{CellRates, FiringRateSpec};

pub const DEFAULT_PICARD_TOL: f64 = 1e-12;
pub const DEFAULT_PICARD_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CouplingMode {
    /// Use the activity measured in the previous step.
    Explicit,
    /// Solve `X = F(X)` on the current field.
    Picard { tol: f64, max_iter: usize },
    /// Linear problem at a frozen activity.
    Frozen { x: f64 },
}

impl Default for CouplingMode {
    fn default() -> Self {
        CouplingMode::Picard {
            tol: DEFAULT_PICARD_TOL,
            max_iter: DEFAULT_PICARD_MAX_ITER,
        }
    }
}

impl CouplingMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            CouplingMode::Picard { tol, max_iter } if !(tol > 0.0) || max_iter == 0 => Err(
                Error::InvalidParameter(format!("Picard needs tol > 0 and max_iter >= 1, got {tol}, {max_iter}")),
            ),
            CouplingMode::Frozen { x } if !(x >= 0.0) => {
                Err(Error::InvalidParameter(format!("frozen activity {x} < 0")))
            }
            _ => Ok(()),
        }
    }
}

/// Fired mass of every `s`-row at activity `x`, over `delta^2`.
pub fn compute_discharge_flux(field: &DensityField, spec: &FiringRateSpec, x: f64) -> Vec<f64> {
    let grid = field.grid;
    let rates = CellRates::new(spec, &grid, x);
    let area = grid.delta * grid.delta;
    field
        .mass
        .par_chunks_exact(grid.n_d)
        .enumerate()
        .map(|(i, row)| fired_in_row(row, &rates, i) / area)
        .collect()
}

#[inline]
fn fired_in_row(row: &[f64], rates: &CellRates, i: usize) -> f64 {
    let qr = rates.decay_row[i];
    row.iter()
        .zip(&rates.decay_col)
        .map(|(m, qc)| m - m * (qr * qc))
        .sum()
}

/// `X = sum_j N_j delta`.
pub fn compute_total_activity(flux: &[f64], delta: f64) -> f64 {
    flux.iter().sum::<f64>() * delta
}

/// Evaluates `F(X) = sum_i fired_i(X) / delta` on a fixed field in `O(n)`
/// per call after one `O(n^2)` pass.
///
/// Column factors only move where a difference threshold crosses a column,
/// so per-row sums `V_i = sum_j m_ij qc_j` are patched column by column.
pub(crate) struct ActivityEvaluator<'a> {
    field: &'a DensityField,
    spec: &'a FiringRateSpec,
    sums: &'a RowSums,
}

/// Per-row totals of a field, plain and weighted by the column survival at a
/// reference activity. They turn `F(X)` into an `O(n_s + n_d)` evaluation
/// when only a few columns change with `X`.
#[derive(Debug, Clone)]
pub(crate) struct RowSums {
    mass: Vec<f64>,
    weighted: Vec<f64>,
    ref_col: Vec<f64>,
}

impl RowSums {
    pub(crate) fn new(field: &DensityField, spec: &FiringRateSpec, x_ref: f64) -> Self {
        let grid = field.grid;
        let ref_col = CellRates::new(spec, &grid, x_ref).decay_col;
        let (mass, weighted): (Vec<f64>, Vec<f64>) = field
            .mass
            .par_chunks_exact(grid.n_d)
            .map(|row| row_sums(row, &ref_col))
            .unzip();
        RowSums { mass, weighted, ref_col }
    }

    pub(crate) fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }
}

fn row_sums(row: &[f64], col: &[f64]) -> (f64, f64) {
    let total: f64 = row.iter().sum();
    let weighted: f64 = row.iter().zip(col).map(|(m, q)| m * q).sum();
    (total, weighted)
}

impl<'a> ActivityEvaluator<'a> {
    pub(crate) fn new(field: &'a DensityField, spec: &'a FiringRateSpec, sums: &'a RowSums) -> Self {
        ActivityEvaluator { field, spec, sums }
    }

    pub(crate) fn eval(&self, x: f64) -> f64 {
        let grid = self.field.grid;
        let rates = CellRates::new(self.spec, &grid, x);
        let changed: Vec<(usize, f64)> = rates
            .decay_col
            .iter()
            .zip(&self.sums.ref_col)
            .enumerate()
            .filter(|(_, (q, q0))| q != q0)
            .map(|(j, (q, q0))| (j, q - q0))
            .collect();
        let mut fired = 0.0;
        for i in 0..grid.n_s {
            let mut weighted = self.sums.weighted[i];
            if !changed.is_empty() {
                let row = self.field.row(i);
                for &(j, dq) in &changed {
                    weighted += row[j] * dq;
                }
            }
            let m = self.sums.mass[i];
            fired += m - rates.decay_row[i] * weighted;
        }
        fired / grid.delta
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivityFixedPoint {
    pub x: f64,
    /// Number of Picard updates performed.
    pub iterations: usize,
    pub residual: f64,
}

/// Solves `X = F(X)` on a fixed field with the safeguarded Picard search seeded at
/// `x_guess`.
pub fn resolve_activity(
    field: &DensityField,
    spec: &FiringRateSpec,
    x_guess: f64,
    tol: f64,
    max_iter: usize,
) -> Result<ActivityFixedPoint> {
    let seed = x_guess.clamp(0.0, spec.p_inf);
    let sums = RowSums::new(field, spec, seed);
    let eval = ActivityEvaluator::new(field, spec, &sums);
    damped_fixed_point(|x| eval.eval(x), seed, spec.p_inf, tol, max_iter)
}

/// Plain Picard iterations tried before switching to a bracketing search.
const PICARD_WINDOW: usize = 8;

/// Damped Picard iteration for `X = F(X)` on `[0, p_inf]`, safeguarded by
/// false position once a sign change of `F(X) - X` is known.
///
/// If the Picard iterates stall without crossing the root, the search walks
/// from the last iterate in the direction of `F(X) - X` with doubling steps
/// until the sign changes. For increasing `F` this lands on the root the
/// Picard sequence converges to. `max_iter` caps the number of updates.
pub(crate) fn damped_fixed_point<F>(
    f_of: F,
    x_guess: f64,
    p_inf: f64,
    tol: f64,
    max_iter: usize,
) -> Result<ActivityFixedPoint>
where
    F: Fn(f64) -> f64,
{
    let clamp = |x: f64| x.clamp(0.0, p_inf);
    let g_of = |x: f64| f_of(x) - x;
    let mut x = clamp(x_guess);
    let mut g = g_of(x);
    let mut updates = 0;
    let done = |x: f64, g: f64, updates: usize| ActivityFixedPoint {
        x,
        iterations: updates,
        residual: g.abs(),
    };
    if g.abs() <= tol {
        return Ok(done(x, g, 0));
    }

    let mut bracket = None;
    while updates < max_iter.min(PICARD_WINDOW) {
        let next = if updates == 0 { clamp(x + g) } else { clamp(x + 0.5 * g) };
        let g_next = g_of(next);
        updates += 1;
        if g_next.abs() <= tol {
            return Ok(done(next, g_next, updates));
        }
        if g_next.signum() != g.signum() {
            bracket = Some(((x, g), (next, g_next)));
            x = next;
            g = g_next;
            break;
        }
        if next == x {
            // pinned at an end of the interval
            break;
        }
        x = next;
        g = g_next;
    }

    if bracket.is_none() {
        let dir = g.signum();
        let mut h = g.abs().max(1e-9 * p_inf);
        while updates < max_iter {
            let next = clamp(x + dir * h);
            let g_next = g_of(next);
            updates += 1;
            if g_next.abs() <= tol {
                return Ok(done(next, g_next, updates));
            }
            if g_next.signum() != g.signum() {
                bracket = Some(((x, g), (next, g_next)));
                break;
            }
            if next == x {
                break;
            }
            x = next;
            g = g_next;
            h *= 2.0;
        }
    }

    let Some(((mut a, mut ga), (mut b, mut gb))) = bracket else {
        return Err(Error::NoConvergence {
            last_x: x,
            residual: g.abs(),
            iterations: updates,
        });
    };
    if a > b {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut ga, &mut gb);
    }
    let mut side = 0i8;
    let mut best = if ga.abs() < gb.abs() { (a, ga) } else { (b, gb) };
    while updates < max_iter {
        let c = (a * gb - b * ga) / (gb - ga);
        let c = if c > a && c < b { c } else { 0.5 * (a + b) };
        let gc = g_of(c);
        updates += 1;
        if gc.abs() < best.1.abs() {
            best = (c, gc);
        }
        if gc.abs() <= tol {
            return Ok(done(c, gc, updates));
        }
        if b - a <= 4.0 * f64::EPSILON * b.abs().max(1.0) {
            break;
        }
        if gc.signum() == ga.signum() {
            a = c;
            ga = gc;
            if side == -1 {
                gb *= 0.5;
            }
            side = -1;
        } else {
            b = c;
            gb = gc;
            if side == 1 {
                ga *= 0.5;
            }
            side = 1;
        }
    }
    Err(Error::NoConvergence {
        last_x: best.0,
        residual: best.1.abs(),
        iterations: updates,
    })
}

/// Phases (2)-(5) at activity `x`: writes the new masses into `dest` and
/// returns the fired mass per `s`-row and the mass lost this step.
struct Transported {
    /// Mass fired by each source row.
    fired: Vec<f64>,
    lost: f64,
    /// Row sums of the destination, weighted by the column survival used for
    /// the step.
    sums: RowSums,
}

/// Moves every cell one step along the diagonal, sending fired mass to the
/// `s = 0` row. Mass pushed past `s_max` or `d_max` is lost.
fn transport_into(field: &DensityField, rates: &CellRates, dest: &mut [f64]) -> Transported {
    let grid = field.grid;
    let n_d = grid.n_d;
    let (first, rest) = dest.split_at_mut(n_d);
    let per_row: Vec<(f64, (f64, f64))> = rest
        .par_chunks_exact_mut(n_d)
        .zip(field.mass.par_chunks_exact(n_d))
        .enumerate()
        .map(|(i, (out, row))| {
            let qr = rates.decay_row[i];
            let mut f = 0.0;
            let mut total = 0.0;
            let mut weighted = 0.0;
            for ((o, m), qc) in out.iter_mut().zip(row).zip(&rates.decay_col) {
                let kept = m * (qr * qc);
                *o = kept;
                f += m - kept;
                total += kept;
                weighted += kept * qc;
            }
            (f, (total, weighted))
        })
        .collect();
    let (mut fired, (mut mass, mut weighted)): (Vec<f64>, (Vec<f64>, Vec<f64>)) = per_row.into_iter().unzip();

    let last = grid.n_s - 1;
    let qr = rates.decay_row[last];
    let mut lost = 0.0;
    let mut f_last = 0.0;
    for (m, qc) in field.row(last).iter().zip(&rates.decay_col) {
        let kept = m * (qr * qc);
        lost += kept;
        f_last += m - kept;
    }
    fired.push(f_last);

    first.iter_mut().for_each(|v| *v = 0.0);
    for (i, f) in fired.iter().enumerate() {
        if i < n_d {
            first[i] = *f;
        } else {
            lost += f;
        }
    }
    let (m0, w0) = row_sums(first, &rates.decay_col);
    mass.insert(0, m0);
    weighted.insert(0, w0);
    Transported {
        fired,
        lost,
        sums: RowSums {
            mass,
            weighted,
            ref_col: rates.decay_col.clone(),
        },
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub field: DensityField,
    /// `N_i = fired_i / delta^2` for every `s`-row.
    pub flux: Vec<f64>,
    /// Activity used for the rates of this step.
    pub activity: f64,
    pub picard_iters: usize,
}

/// One full step. In Picard mode `x_prev` seeds the iteration.
pub fn step(
    field: DensityField,
    spec: &FiringRateSpec,
    x_prev: f64,
    mode: CouplingMode,
) -> Result<StepOutcome> {
    let (x, picard_iters) = match mode {
        CouplingMode::Explicit => (x_prev, 0),
        CouplingMode::Frozen { x } => (x, 0),
        CouplingMode::Picard { tol, max_iter } => {
            let fp = resolve_activity(&field, spec, x_prev, tol, max_iter)?;
            (fp.x, fp.iterations)
        }
    };
    let grid = field.grid;
    let rates = CellRates::new(spec, &grid, x);
    let mut dest = vec![0.0; grid.len()];
    let Transported { fired, lost, .. } = transport_into(&field, &rates, &mut dest);
    let area = grid.delta * grid.delta;
    Ok(StepOutcome {
        field: DensityField {
            grid,
            mass: dest,
            lost_tail: field.lost_tail + lost,
        },
        flux: fired.iter().map(|f| f / area).collect(),
        activity: x,
        picard_iters,
    })
}

/// Output selection for [`run_simulation`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    /// Keep a field snapshot every this many steps (and at the end).
    pub snapshot_every: Option<usize>,
    /// Keep a flux row every this many steps (and at the end).
    pub flux_every: Option<usize>,
    /// On Picard failure use the previous activity for that step instead of
    /// aborting.
    pub fallback_to_explicit: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            snapshot_every: None,
            flux_every: None,
            fallback_to_explicit: true,
        }
    }
}

/// Streaming simulation: holds the field at `t_k = k delta` together with
/// the activity resolved on it.
#[derive(Debug, Clone)]
pub struct Simulation {
    spec: FiringRateSpec,
    mode: CouplingMode,
    fallback: bool,
    field: DensityField,
    scratch: Vec<f64>,
    step_index: usize,
    x: f64,
    picard_iters: usize,
    fell_back: bool,
    last_flux: Option<Vec<f64>>,
    sums: RowSums,
}

impl Simulation {
    pub fn new(
        init: DensityField,
        spec: &FiringRateSpec,
        mode: CouplingMode,
        fallback_to_explicit: bool,
    ) -> Result<Self> {
        mode.validate()?;
        let scratch = vec![0.0; init.grid.len()];
        let seed = 0.5 * spec.p_inf;
        let sums = RowSums::new(&init, spec, seed);
        let mut sim = Simulation {
            spec: spec.clone(),
            mode,
            fallback: fallback_to_explicit,
            field: init,
            scratch,
            step_index: 0,
            x: seed,
            picard_iters: 0,
            fell_back: false,
            last_flux: None,
            sums,
        };
        // with no step behind it, the explicit activity is read off the field
        let measured = ActivityEvaluator::new(&sim.field, &sim.spec, &sim.sums).eval(seed);
        sim.resolve(measured)?;
        Ok(sim)
    }

    /// Picks the activity for the current field. `measured` is the activity
    /// fired during the step that produced it, and `self.x` still holds the
    /// activity used for that step.
    fn resolve(&mut self, measured: f64) -> Result<()> {
        self.picard_iters = 0;
        self.fell_back = false;
        match self.mode {
            CouplingMode::Frozen { x } => self.x = x,
            CouplingMode::Explicit => self.x = measured,
            CouplingMode::Picard { tol, max_iter } => {
                let eval = ActivityEvaluator::new(&self.field, &self.spec, &self.sums);
                match damped_fixed_point(|x| eval.eval(x), self.x, self.spec.p_inf, tol, max_iter) {
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

    pub fn grid(&self) -> Grid {
        self.field.grid
    }

    pub fn field(&self) -> &DensityField {
        &self.field
    }

    pub fn into_field(self) -> DensityField {
        self.field
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn time(&self) -> f64 {
        self.step_index as f64 * self.field.grid.delta
    }

    /// Mass inside the domain, from row totals kept by the last step.
    pub fn total_mass(&self) -> f64 {
        self.sums.total_mass()
    }

    /// Activity used by the next step.
    pub fn activity(&self) -> f64 {
        self.x
    }

    pub fn picard_iters(&self) -> usize {
        self.picard_iters
    }

    /// Whether the current activity came from the explicit fallback.
    pub fn fell_back(&self) -> bool {
        self.fell_back
    }

    /// Flux fired during the most recent step.
    pub fn last_flux(&self) -> Option<&[f64]> {
        self.last_flux.as_deref()
    }

    /// Flux the current field would fire at the current activity.
    pub fn current_flux(&self) -> Vec<f64> {
        compute_discharge_flux(&self.field, &self.spec, self.x)
    }

    /// Advances one step and resolves the activity on the new field.
    pub fn advance(&mut self) -> Result<()> {
        let grid = self.field.grid;
        let rates = CellRates::new(&self.spec, &grid, self.x);
        let Transported { fired, lost, sums } = transport_into(&self.field, &rates, &mut self.scratch);
        std::mem::swap(&mut self.field.mass, &mut self.scratch);
        self.field.lost_tail += lost;
        self.sums = sums;
        let area = grid.delta * grid.delta;
        let measured = fired.iter().sum::<f64>() / grid.delta;
        self.last_flux = Some(fired.into_iter().map(|f| f / area).collect());
        self.step_index += 1;
        let step = self.step_index;
        self.resolve(measured).map_err(|e| Error::StepFailed {
            step,
            source: Box::new(e),
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct SimulationTrace {
    pub times: Vec<f64>,
    pub x_series: Vec<f64>,
    pub mass_series: Vec<f64>,
    pub lost_tail_series: Vec<f64>,
    pub picard_iters: Vec<usize>,
    /// Record indices whose activity came from the explicit fallback.
    pub fallback_steps: Vec<usize>,
    pub n_rows: Vec<(f64, Vec<f64>)>,
    pub snapshots: Vec<(f64, DensityField)>,
    pub final_field: Option<DensityField>,
}

impl SimulationTrace {
    fn record(&mut self, sim: &Simulation, opts: &RunOptions, last: bool) {
        let k = sim.step_index();
        let t = sim.time();
        self.times.push(t);
        self.x_series.push(sim.activity());
        self.mass_series.push(sim.total_mass());
        self.lost_tail_series.push(sim.field().lost_tail);
        self.picard_iters.push(sim.picard_iters());
        if sim.fell_back() {
            self.fallback_steps.push(k);
        }
        let due = |every: Option<usize>| every.is_some_and(|e| e > 0 && (k.is_multiple_of(e) || last));
        if due(opts.flux_every) {
            self.n_rows.push((t, sim.current_flux()));
        }
        if due(opts.snapshot_every) {
            self.snapshots.push((t, sim.field().clone()));
        }
    }
}

pub fn step_count(t_end: f64, delta: f64) -> usize {
    (t_end / delta - 1e-9).ceil().max(0.0) as usize
}

/// Runs `ceil(t_end / delta)` steps. `observe` sees the simulation after
/// every record (including the initial one).
pub fn run_simulation_with<F>(
    init: DensityField,
    spec: &FiringRateSpec,
    t_end: f64,
    mode: CouplingMode,
    opts: RunOptions,
    mut observe: F,
) -> Result<SimulationTrace>
where
    F: FnMut(&Simulation),
{
    if !(t_end >= 0.0) {
        return Err(Error::InvalidParameter(format!("t_end = {t_end} < 0")));
    }
    let steps = step_count(t_end, init.grid.delta);
    let mut sim = Simulation::new(init, spec, mode, opts.fallback_to_explicit)?;
    let mut trace = SimulationTrace::default();
    trace.record(&sim, &opts, steps == 0);
    observe(&sim);
    for k in 0..steps {
        sim.advance()?;
        trace.record(&sim, &opts, k + 1 == steps);
        observe(&sim);
    }
    trace.final_field = Some(sim.into_field());
    Ok(trace)
}

pub fn run_simulation(
    init: DensityField,
    spec: &FiringRateSpec,
    t_end: f64,
    mode: CouplingMode,
    opts: RunOptions,
) -> Result<SimulationTrace> {
    run_simulation_with(init, spec, t_end, mode, opts, |_| {})
}
