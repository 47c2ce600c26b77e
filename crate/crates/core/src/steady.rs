//! Stationary states at frozen and at self-consistent activity.
//!
//! The discrete operator is the exact stationary problem of the time
//! stepping scheme: with survival `S(i, u) = prod_{k < i} q(k, u)` along the
//! characteristic of column `u`,
//!
//! ```text
//! T[N]_i = sum_u S(i, u) (1 - q(i, u)) N_u
//! n(i, u) = delta^2 N_u S(i, u)
//! ```
//!
//! and `N` is scaled so that `n` has unit mass. A simulation that settles
//! therefore settles on exactly these objects, up to boundary truncation.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{DensityField, Grid};
use crate::rate::{CellRates, FiringRateSpec};

/// Mass fraction below which the power iterate counts as vanished.
pub const VANISHING_MASS: f64 = 1e-8;
/// Iteration count at which vanishing is judged.
pub const VANISHING_HORIZON: usize = 500;

/// Discharge flux on the nodes `a_j = (j + 1/2) delta`, as a density per
/// unit `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxVector {
    pub delta: f64,
    pub values: Vec<f64>,
}

impl FluxVector {
    pub fn zeros(delta: f64, len: usize) -> Self {
        FluxVector {
            delta,
            values: vec![0.0; len],
        }
    }

    pub fn node(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.delta
    }

    /// `sum_j N_j delta`.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.delta
    }

    pub fn l1_distance(&self, other: &FluxVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * self.delta
    }
}

/// Kernel `K(i, u)` for `i, u < n_flux`, plus the normalization weights
/// `w_u = sum_{i < n_s} S(i, u)`.
#[derive(Debug, Clone)]
pub struct TransferOperator {
    pub grid: Grid,
    pub x: f64,
    n: usize,
    kernel: Vec<f64>,
    weights: Vec<f64>,
    rates: CellRates,
}

impl TransferOperator {
    pub fn new(spec: &FiringRateSpec, grid: &Grid, x: f64) -> Result<Self> {
        if !(x >= 0.0) {
            return Err(Error::InvalidParameter(format!("activity X = {x} < 0")));
        }
        let n = grid.n_flux();
        let rates = CellRates::new(spec, grid, x);
        let mut kernel = vec![0.0; n * n];
        let mut survival = vec![1.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..grid.n_s {
            let qr = rates.decay_row[i];
            let out = if i < n {
                Some(&mut kernel[i * n..(i + 1) * n])
            } else {
                None
            };
            match out {
                Some(out) => {
                    for u in 0..n {
                        let s = survival[u];
                        weights[u] += s;
                        let kept = s * (qr * rates.decay_col[u]);
                        out[u] = s - kept;
                        survival[u] = kept;
                    }
                }
                None => {
                    for u in 0..n {
                        weights[u] += survival[u];
                        survival[u] *= qr * rates.decay_col[u];
                    }
                }
            }
        }
        Ok(TransferOperator {
            grid: *grid,
            x,
            n,
            kernel,
            weights,
            rates,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        let n = self.n;
        self.kernel
            .par_chunks_exact(n)
            .map(|k| k.iter().zip(values).map(|(k, v)| k * v).sum())
            .collect()
    }

    /// Mass of the density reconstructed from `values`.
    pub fn density_mass(&self, values: &[f64]) -> f64 {
        let area = self.grid.delta * self.grid.delta;
        values.iter().zip(&self.weights).map(|(v, w)| v * w).sum::<f64>() * area
    }

    /// `S(i, u)` for every cell, row-major over the full grid.
    fn survival_field(&self) -> Vec<f64> {
        let g = self.grid;
        let mut out = vec![0.0; g.len()];
        let mut survival = vec![1.0; self.n];
        for i in 0..g.n_s {
            let qr = self.rates.decay_row[i];
            out[i * g.n_d..i * g.n_d + self.n].copy_from_slice(&survival);
            for (sv, qc) in survival.iter_mut().zip(&self.rates.decay_col) {
                *sv *= qr * qc;
            }
        }
        out
    }
}

pub fn apply_transfer_operator(
    spec: &FiringRateSpec,
    grid: &Grid,
    x: f64,
    flux: &FluxVector,
) -> Result<FluxVector> {
    let op = TransferOperator::new(spec, grid, x)?;
    if flux.values.len() != op.len() {
        return Err(Error::GridMismatch(format!(
            "flux has {} entries, grid needs {}",
            flux.values.len(),
            op.len()
        )));
    }
    Ok(FluxVector {
        delta: grid.delta,
        values: op.apply(&flux.values),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerOptions {
    /// Stop when the `delta`-weighted L1 change of the mass-normalized
    /// iterate is at most this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PowerOptions {
    fn default() -> Self {
        PowerOptions {
            tol: 1e-13,
            max_iter: 20_000,
        }
    }
}

/// Power iteration for the fixed point of `T`, returned with the
/// normalization that gives the reconstructed density unit mass.
pub fn invariant_flux_with(op: &TransferOperator, opts: PowerOptions) -> Result<FluxVector> {
    let delta = op.grid.delta;
    let n = op.len();
    let mut current = vec![1.0 / (n as f64 * delta); n];
    // log of the mass the unnormalized iterate would carry
    let mut log_mass = 0.0;
    let mut converged = false;
    let mut change = f64::INFINITY;
    let mut ratio = 1.0;
    let mut iterations = 0;
    for iteration in 1..=opts.max_iter {
        iterations = iteration;
        let mut next = op.apply(&current);
        let mass = next.iter().sum::<f64>() * delta;
        log_mass += mass.ln();
        if !(mass > 0.0) || log_mass < VANISHING_MASS.ln() {
            return Err(Error::NoSteadyState {
                mass: log_mass.exp(),
                iteration,
            });
        }
        ratio = mass;
        next.iter_mut().for_each(|v| *v /= mass);
        change = next
            .iter()
            .zip(&current)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * delta;
        current = next;
        if change <= opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            last_x: op.x,
            residual: change,
            iterations: opts.max_iter,
        });
    }
    // Once the shape has settled every further iterate loses the same
    // fraction, so the mass at the horizon is known without iterating.
    if iterations < VANISHING_HORIZON && ratio < 1.0 {
        let per_step = ratio.ln();
        let projected = log_mass + (VANISHING_HORIZON - iterations) as f64 * per_step;
        if projected < VANISHING_MASS.ln() {
            let extra = ((VANISHING_MASS.ln() - log_mass) / per_step).ceil() as usize;
            return Err(Error::NoSteadyState {
                mass: projected.exp(),
                iteration: iterations + extra,
            });
        }
    }
    let scale = op.density_mass(&current);
    current.iter_mut().for_each(|v| *v /= scale);
    Ok(FluxVector {
        delta,
        values: current,
    })
}

pub fn invariant_flux(
    spec: &FiringRateSpec,
    grid: &Grid,
    x: f64,
    opts: PowerOptions,
) -> Result<FluxVector> {
    invariant_flux_with(&TransferOperator::new(spec, grid, x)?, opts)
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub field: DensityField,
    /// `1 - raw mass` before rescaling.
    pub deficit: f64,
    /// Set when the flux carries no mass and the field is identically zero.
    pub degenerate: bool,
}

/// `n(i, u) = delta^2 N_u S(i, u)`, rescaled to unit mass.
pub fn reconstruct_steady_density(
    spec: &FiringRateSpec,
    grid: &Grid,
    x: f64,
    flux: &FluxVector,
) -> Result<Reconstruction> {
    let op = TransferOperator::new(spec, grid, x)?;
    Ok(reconstruct_with(&op, flux))
}

fn reconstruct_with(op: &TransferOperator, flux: &FluxVector) -> Reconstruction {
    let g = op.grid;
    let area = g.delta * g.delta;
    let mut mass = op.survival_field();
    for row in mass.chunks_exact_mut(g.n_d) {
        for (m, v) in row.iter_mut().zip(&flux.values) {
            *m *= area * v;
        }
    }
    let mut field = DensityField {
        grid: g,
        mass,
        lost_tail: 0.0,
    };
    let raw = field.total_mass();
    let degenerate = !(raw > 0.0);
    if !degenerate {
        field.mass.iter_mut().for_each(|m| *m /= raw);
    }
    Reconstruction {
        field,
        deficit: 1.0 - raw,
        degenerate,
    }
}

/// `Phi(X) = sum_j N_X(j) delta`.
pub fn phi(spec: &FiringRateSpec, grid: &Grid, x: f64, opts: PowerOptions) -> Result<f64> {
    Ok(invariant_flux(spec, grid, x, opts)?.mass())
}

/// Centered difference of `Phi`; falls back to one-sided differences at the
/// ends of `[0, p_inf]`.
pub fn phi_derivative(
    spec: &FiringRateSpec,
    grid: &Grid,
    x: f64,
    h: f64,
    opts: PowerOptions,
) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("step h = {h} must be positive")));
    }
    let lo = (x - h).max(0.0);
    let hi = (x + h).min(spec.p_inf);
    if !(hi > lo) {
        return Err(Error::InvalidParameter(format!(
            "no room for a difference at X = {x} in [0, {}]",
            spec.p_inf
        )));
    }
    Ok((phi(spec, grid, hi, opts)? - phi(spec, grid, lo, opts)?) / (hi - lo))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumOptions {
    pub power: PowerOptions,
    /// Target for `|Phi(X*) - X*|`.
    pub tol: f64,
    /// Damped iterations before switching to a bracketing solve.
    pub max_outer: usize,
    pub compute_phi_prime: bool,
}

impl Default for EquilibriumOptions {
    fn default() -> Self {
        EquilibriumOptions {
            power: PowerOptions::default(),
            tol: 1e-10,
            max_outer: 60,
            compute_phi_prime: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SteadyStateResult {
    pub x_star: f64,
    pub n_star_flux: FluxVector,
    pub n_star: DensityField,
    /// `delta`-weighted L1 norm of `(I - T) N*`.
    pub operator_residual: f64,
    pub phi_residual: f64,
    pub phi_prime: Option<f64>,
    pub outer_iterations: usize,
    pub bracketed: bool,
    pub mass_deficit: f64,
    /// Bound `exp(-p0 (s_max - sigma)) / p0` on the mass cut off at `s_max`.
    pub truncation_bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SteadySummary {
    #[serde(rename = "X_star")]
    pub x_star: f64,
    pub operator_residual: f64,
    pub phi_residual: f64,
    pub phi_prime: Option<f64>,
    pub outer_iterations: usize,
    pub bracketed: bool,
    pub mass_deficit: f64,
    pub truncation_bound: f64,
    pub contraction: Option<bool>,
}

impl SteadyStateResult {
    pub fn summary(&self) -> SteadySummary {
        SteadySummary {
            x_star: self.x_star,
            operator_residual: self.operator_residual,
            phi_residual: self.phi_residual,
            phi_prime: self.phi_prime,
            outer_iterations: self.outer_iterations,
            bracketed: self.bracketed,
            mass_deficit: self.mass_deficit,
            truncation_bound: self.truncation_bound,
            contraction: self.phi_prime.map(|d| d.abs() < 1.0),
        }
    }
}

/// Finds `X = Phi(X)` by damped iteration `X <- (X + Phi(X)) / 2` from
/// `p_inf / 2`, switching to a bracketing solve on `[0, p_inf]` when the
/// residual stalls.
pub fn solve_equilibrium(
    spec: &FiringRateSpec,
    grid: &Grid,
    opts: EquilibriumOptions,
) -> Result<SteadyStateResult> {
    let g_of = |x: f64| -> Result<f64> { Ok(phi(spec, grid, x, opts.power)? - x) };
    let mut samples: Vec<(f64, f64)> = Vec::new();
    let mut x = 0.5 * spec.p_inf;
    let mut best = f64::INFINITY;
    let mut stalled = 0;
    let mut outer = 0;
    let mut found = None;
    if spec.is_x_independent() {
        x = phi(spec, grid, x, opts.power)?;
        outer = 1;
        found = Some(x);
    }
    while found.is_none() && outer < opts.max_outer {
        outer += 1;
        let g = g_of(x)?;
        samples.push((x, g));
        if g.abs() <= opts.tol {
            found = Some(x);
            break;
        }
        if g.abs() < 0.9 * best {
            best = g.abs();
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= 4 {
                break;
            }
        }
        x = (x + 0.5 * g).clamp(0.0, spec.p_inf);
    }
    let bracketed = found.is_none();
    let x_star = match found {
        Some(x) => x,
        None => bracket_root(&g_of, &mut samples, spec.p_inf, opts.tol, x)?,
    };

    let op = TransferOperator::new(spec, grid, x_star)?;
    let flux = invariant_flux_with(&op, opts.power)?;
    let image = op.apply(&flux.values);
    let operator_residual = image
        .iter()
        .zip(&flux.values)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        * grid.delta;
    let phi_residual = (flux.mass() - x_star).abs();
    let recon = reconstruct_with(&op, &flux);
    let phi_prime = if opts.compute_phi_prime {
        Some(phi_derivative(spec, grid, x_star, 1e-4 * spec.p_inf, opts.power)?)
    } else {
        None
    };
    Ok(SteadyStateResult {
        x_star,
        n_star_flux: flux,
        n_star: recon.field,
        operator_residual,
        phi_residual,
        phi_prime,
        outer_iterations: outer,
        bracketed,
        mass_deficit: recon.deficit,
        truncation_bound: (-spec.p0 * (grid.s_max() - spec.sigma)).exp() / spec.p0,
    })
}

/// Illinois false position on the sign change nearest to `near`.
fn bracket_root<G>(
    g_of: &G,
    samples: &mut Vec<(f64, f64)>,
    p_inf: f64,
    tol: f64,
    near: f64,
) -> Result<f64>
where
    G: Fn(f64) -> Result<f64>,
{
    for end in [0.0, p_inf] {
        if !samples.iter().any(|(x, _)| *x == end) {
            samples.push((end, g_of(end)?));
        }
    }
    let mut sorted = samples.clone();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let pair = sorted
        .windows(2)
        .filter(|w| w[0].1 == 0.0 || w[0].1.signum() != w[1].1.signum())
        .min_by(|a, b| {
            let da = (0.5 * (a[0].0 + a[1].0) - near).abs();
            let db = (0.5 * (b[0].0 + b[1].0) - near).abs();
            da.total_cmp(&db)
        })
        .map(|w| (w[0], w[1]));
    let ((mut a, mut ga), (mut b, mut gb)) = match pair {
        Some(p) => p,
        None => {
            return Err(Error::NoEquilibrium {
                samples: sorted,
            })
        }
    };
    if ga == 0.0 {
        return Ok(a);
    }
    let mut side = 0i8;
    for _ in 0..200 {
        let c = (a * gb - b * ga) / (gb - ga);
        let c = if c > a && c < b { c } else { 0.5 * (a + b) };
        let gc = g_of(c)?;
        samples.push((c, gc));
        if gc.abs() <= tol || b - a <= 4.0 * f64::EPSILON * p_inf {
            return Ok(c);
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
    Ok(0.5 * (a + b))
}
