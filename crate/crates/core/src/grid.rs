//! Uniform grid on the triangular domain `0 <= s <= a`, stored in the
//! sheared coordinates `(s, d = a - s)`.
//!
//! Transport along `(1, 1)` in `(s, a)` is pure advection in `s` at fixed
//! `d`, so the grid is rectangular and one time step of length `delta` is an
//! exact shift by one `s`-cell. Cell `(i, j)` covers
//! `s in [i delta, (i + 1) delta)` and `d in [j delta, (j + 1) delta)`.
//!
//! Fields store cell masses (probability per cell), not point densities.

use crate::error::{Error, Result};

const COMMENSURATE_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub delta: f64,
    pub n_s: usize,
    pub n_d: usize,
}

/// Number of whole steps of size `delta` in `value`, or `None` when `value`
/// is not a multiple of `delta` (relative tolerance 1e-9).
pub fn steps_in(value: f64, delta: f64) -> Option<usize> {
    if !(delta > 0.0) || !value.is_finite() || value < 0.0 {
        return None;
    }
    let ratio = value / delta;
    let n = ratio.round();
    if (ratio - n).abs() <= COMMENSURATE_RTOL * ratio.max(1.0) {
        Some(n as usize)
    } else {
        None
    }
}

pub fn build_grid(delta: f64, s_max: f64, d_max: f64) -> Result<Grid> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::NonPositiveStep(delta));
    }
    let n_s = steps_in(s_max, delta).ok_or(Error::NotCommensurate {
        name: "s_max",
        value: s_max,
        delta,
    })?;
    let n_d = steps_in(d_max, delta).ok_or(Error::NotCommensurate {
        name: "d_max",
        value: d_max,
        delta,
    })?;
    if n_s < 2 || n_d < 2 {
        return Err(Error::InvalidParameter(format!(
            "grid needs at least 2 cells per axis, got n_s = {n_s}, n_d = {n_d}"
        )));
    }
    Ok(Grid { delta, n_s, n_d })
}

impl Grid {
    pub fn s_max(&self) -> f64 {
        self.n_s as f64 * self.delta
    }

    pub fn d_max(&self) -> f64 {
        self.n_d as f64 * self.delta
    }

    pub fn len(&self) -> usize {
        self.n_s * self.n_d
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.n_d + j
    }

    #[inline]
    pub fn s_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.delta
    }

    #[inline]
    pub fn d_center(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.delta
    }

    /// Second elapsed time at the cell center, `a = s_i + d_j + delta`.
    #[inline]
    pub fn a_center(&self, i: usize, j: usize) -> f64 {
        (i + j + 1) as f64 * self.delta
    }

    /// Length of discharge-flux vectors: a neuron firing at `s`-row `i`
    /// re-enters at `d`-column `i`, so only rows below `min(n_s, n_d)` feed
    /// the boundary.
    pub fn n_flux(&self) -> usize {
        self.n_s.min(self.n_d)
    }

    pub fn same_as(&self, other: &Grid) -> bool {
        self.n_s == other.n_s
            && self.n_d == other.n_d
            && (self.delta - other.delta).abs() <= 1e-12 * self.delta
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub grid: Grid,
    /// Row-major `n_s x n_d` cell masses.
    pub mass: Vec<f64>,
    /// Mass advected past `s_max` or re-injected past `d_max`.
    pub lost_tail: f64,
}

/// Result of sampling a closed-form density onto a grid.
#[derive(Debug, Clone)]
pub struct Discretized {
    pub field: DensityField,
    /// Mass captured by the grid before rescaling to 1.
    pub raw_mass: f64,
}

impl Discretized {
    /// Mass outside the grid (or quadrature defect) before rescaling.
    pub fn deficit(&self) -> f64 {
        1.0 - self.raw_mass
    }
}

/// Samples `init(s, a)` at cell centers, multiplies by `delta^2` and rescales
/// the result to unit mass.
pub fn discretize_density<F>(init: F, grid: &Grid) -> Result<Discretized>
where
    F: Fn(f64, f64) -> f64,
{
    let area = grid.delta * grid.delta;
    let mut mass = vec![0.0; grid.len()];
    for i in 0..grid.n_s {
        let s = grid.s_center(i);
        for j in 0..grid.n_d {
            let v = init(s, grid.a_center(i, j));
            // negative or NaN samples are clipped
            mass[grid.index(i, j)] = if v > 0.0 { v * area } else { 0.0 };
        }
    }
    let mut field = DensityField {
        grid: *grid,
        mass,
        lost_tail: 0.0,
    };
    let raw_mass = field.total_mass();
    if !(raw_mass > 0.0) || !raw_mass.is_finite() {
        return Err(Error::ZeroMass);
    }
    field.mass.iter_mut().for_each(|m| *m /= raw_mass);
    Ok(Discretized { field, raw_mass })
}

impl DensityField {
    pub fn zeros(grid: Grid) -> Self {
        DensityField {
            grid,
            mass: vec![0.0; grid.len()],
            lost_tail: 0.0,
        }
    }

    pub fn from_masses(grid: Grid, mass: Vec<f64>) -> Result<Self> {
        if mass.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "expected {} cells, got {}",
                grid.len(),
                mass.len()
            )));
        }
        if let Some(bad) = mass.iter().find(|m| !(**m >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "cell masses must be non-negative, found {bad}"
            )));
        }
        Ok(DensityField {
            grid,
            mass,
            lost_tail: 0.0,
        })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.mass[self.grid.index(i, j)]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let n_d = self.grid.n_d;
        &self.mass[i * n_d..(i + 1) * n_d]
    }

    /// Sum over rows of row sums, in index order.
    pub fn total_mass(&self) -> f64 {
        self.mass
            .chunks_exact(self.grid.n_d)
            .map(|row| row.iter().sum::<f64>())
            .sum()
    }

    /// `m(s) = int_s^inf n(s, a) da` as a density per unit `s`.
    pub fn marginal_first_time(&self) -> Vec<f64> {
        let delta = self.grid.delta;
        self.mass
            .chunks_exact(self.grid.n_d)
            .map(|row| row.iter().sum::<f64>() / delta)
            .collect()
    }

    /// L1 distance between cell masses (the continuous L1 norm of the
    /// density difference).
    pub fn l1_distance(&self, other: &DensityField) -> f64 {
        self.mass
            .chunks_exact(self.grid.n_d)
            .zip(other.mass.chunks_exact(other.grid.n_d))
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>())
            .sum()
    }

    pub fn is_non_negative(&self) -> bool {
        self.mass.iter().all(|m| *m >= 0.0)
    }
}
