//! Empirical checks of the convergence theory: Doeblin constants and
//! minorization, fitted decay rates, relative entropy and its dissipation,
//! and jump and period detection on activity series.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::DensityField;
use crate::rate::{CellRates, FiringRateSpec};

/// Reference densities below this (per unit area) are masked out of the
/// entropy functionals.
pub const ENTROPY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DoeblinCertificate {
    pub t0: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub minorization: Option<MinorizationCheck>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MinorizationCheck {
    pub holds: bool,
    /// Smallest density over the lower-bound level in the checked region.
    pub worst_cell_ratio: f64,
    pub cells: usize,
}

fn check_bounds(p0: f64, p_inf: f64, sigma: f64) -> Result<()> {
    if p0 > 0.0 && sigma > 0.0 && p_inf >= p0 && p_inf.is_finite() && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidBounds { p0, p_inf, sigma })
    }
}

/// `alpha = p0^2 sigma^2 exp(-3 p_inf sigma) / 2`,
/// `lambda = -ln(1 - alpha) / (3 sigma)`, `t0 = 3 sigma`.
pub fn doeblin_constants(p0: f64, p_inf: f64, sigma: f64) -> Result<DoeblinCertificate> {
    check_bounds(p0, p_inf, sigma)?;
    let alpha = 0.5 * p0 * p0 * sigma * sigma * (-3.0 * p_inf * sigma).exp();
    let t0 = 3.0 * sigma;
    Ok(DoeblinCertificate {
        t0,
        alpha,
        lambda: -(-alpha).ln_1p() / t0,
        minorization: None,
    })
}

impl DoeblinCertificate {
    /// `exp(-lambda t) d0 / (1 - alpha)`.
    pub fn decay_bound(&self, t: f64, d0: f64) -> f64 {
        (-self.lambda * t).exp() * d0 / (1.0 - self.alpha)
    }
}

/// Compares the density at `t0 = 3 sigma` with `p0^2 exp(-3 p_inf sigma)`
/// on every cell lying wholly inside `{2 sigma > a > s + sigma}`.
pub fn check_minorization(
    field: &DensityField,
    p0: f64,
    p_inf: f64,
    sigma: f64,
) -> Result<MinorizationCheck> {
    check_bounds(p0, p_inf, sigma)?;
    let g = field.grid;
    let delta = g.delta;
    let eps = 1e-9 * delta;
    let level = p0 * p0 * (-3.0 * p_inf * sigma).exp();
    let area = delta * delta;
    let mut worst = f64::INFINITY;
    let mut cells = 0;
    for i in 0..g.n_s {
        for j in 0..g.n_d {
            let inside = j as f64 * delta >= sigma - eps && (i + j + 2) as f64 * delta <= 2.0 * sigma + eps;
            if inside {
                cells += 1;
                worst = worst.min(field.get(i, j) / area / level);
            }
        }
    }
    if cells == 0 {
        return Err(Error::GridTooCoarse);
    }
    Ok(MinorizationCheck {
        holds: worst >= 1.0 - 10.0 * delta,
        worst_cell_ratio: worst,
        cells,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyKind {
    /// `(x - 1)^2`
    Square,
    /// `|x - 1|`
    Abs,
    /// `x ln x`
    Kl,
}

impl EntropyKind {
    #[inline]
    pub fn eval(self, x: f64) -> f64 {
        match self {
            EntropyKind::Square => (x - 1.0) * (x - 1.0),
            EntropyKind::Abs => (x - 1.0).abs(),
            EntropyKind::Kl => {
                if x > 0.0 {
                    x * x.ln()
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EntropyValue {
    pub value: f64,
    /// Mass of `n` on cells where the reference is below the floor.
    pub masked_mass: f64,
}

fn same_grid(n: &DensityField, n_ref: &DensityField) -> Result<()> {
    if n.grid.same_as(&n_ref.grid) {
        Ok(())
    } else {
        Err(Error::GridMismatch(format!("{:?} vs {:?}", n.grid, n_ref.grid)))
    }
}

/// `sum n_ref H(n / n_ref)` over cells where the reference is above the
/// floor.
pub fn relative_entropy(n: &DensityField, n_ref: &DensityField, h: EntropyKind) -> Result<EntropyValue> {
    same_grid(n, n_ref)?;
    let floor = ENTROPY_FLOOR * n.grid.delta * n.grid.delta;
    let mut value = 0.0;
    let mut masked_mass = 0.0;
    for (m, r) in n.mass.iter().zip(&n_ref.mass) {
        if *r > floor {
            value += r * h.eval(m / r);
        } else {
            masked_mass += m;
        }
    }
    Ok(EntropyValue { value, masked_mass })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dissipation {
    pub value: f64,
    /// Per firing row (the `a`-node it re-enters at): the gap in Jensen's
    /// inequality, over `delta`. Non-negative for convex `H`.
    pub jensen_slack: Vec<f64>,
    pub masked_mass: f64,
}

/// Discrete dissipation for one step of the linear flow at activity `x`.
///
/// With fired masses `f = (1 - q) m` per cell and row totals `F`, this is
/// `(sum f_ref H(n / n_ref) - sum_rows F_ref H(F / F_ref)) / delta`, so the
/// entropy of one step drops by exactly `delta` times it when `n_ref` is
/// stationary.
pub fn entropy_dissipation(
    n: &DensityField,
    n_ref: &DensityField,
    spec: &FiringRateSpec,
    x: f64,
    h: EntropyKind,
) -> Result<Dissipation> {
    same_grid(n, n_ref)?;
    let g = n.grid;
    let floor = ENTROPY_FLOOR * g.delta * g.delta;
    let rates = CellRates::new(spec, &g, x);
    let mut masked_mass = 0.0;
    let mut jensen_slack = Vec::with_capacity(g.n_s);
    for i in 0..g.n_s {
        let (row, row_ref) = (n.row(i), n_ref.row(i));
        let (mut cell_term, mut fired, mut fired_ref) = (0.0, 0.0, 0.0);
        for j in 0..g.n_d {
            let (m, r) = (row[j], row_ref[j]);
            if r <= floor {
                masked_mass += m;
                continue;
            }
            let lost = 1.0 - rates.survival(i, j);
            cell_term += lost * r * h.eval(m / r);
            fired += lost * m;
            fired_ref += lost * r;
        }
        let row_term = if fired_ref > 0.0 {
            fired_ref * h.eval(fired / fired_ref)
        } else {
            0.0
        };
        jensen_slack.push((cell_term - row_term) / g.delta);
    }
    Ok(Dissipation {
        value: jensen_slack.iter().sum(),
        jensen_slack,
        masked_mass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    pub times: Vec<f64>,
    pub distances: Vec<f64>,
    pub lambda_emp: f64,
    pub fit_residual: f64,
    pub lambda_theory: f64,
}

/// Least-squares slope of `-ln(distance)` against `t` for `t >= t_burn`;
/// returns the rate and the RMS residual of the log fit.
pub fn fit_exponential_rate(times: &[f64], distances: &[f64], t_burn: f64) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(distances)
        .filter(|(t, d)| **t >= t_burn && **d > 0.0 && d.is_finite())
        .map(|(t, d)| (*t, d.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::InsufficientData(pts.len()));
    }
    let n = pts.len() as f64;
    let t_mean = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let y_mean = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - t_mean).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - t_mean) * (p.1 - y_mean)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InsufficientData(1));
    }
    let slope = sxy / sxx;
    let rss: f64 = pts
        .iter()
        .map(|p| (p.1 - (y_mean + slope * (p.0 - t_mean))).powi(2))
        .sum();
    Ok((-slope, (rss / n).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JumpEvent {
    /// Time of the first step of the run.
    pub time: f64,
    /// Net change of `X` across the run.
    pub size: f64,
    pub steps: usize,
}

/// Steps with `|X_{k+1} - X_k| > threshold`, consecutive ones merged.
pub fn detect_jumps(x: &[f64], dt: f64, threshold: f64) -> Result<Vec<JumpEvent>> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidParameter(format!("jump threshold {threshold} must be positive")));
    }
    let mut events: Vec<JumpEvent> = Vec::new();
    let mut open: Option<(usize, usize)> = None;
    let close = |start: usize, end: usize, events: &mut Vec<JumpEvent>| {
        events.push(JumpEvent {
            time: start as f64 * dt,
            size: x[end + 1] - x[start],
            steps: end + 1 - start,
        });
    };
    for k in 0..x.len().saturating_sub(1) {
        if (x[k + 1] - x[k]).abs() > threshold {
            open = Some(match open {
                Some((start, _)) => (start, k),
                None => (k, k),
            });
        } else if let Some((start, end)) = open.take() {
            close(start, end, &mut events);
        }
    }
    if let Some((start, end)) = open {
        close(start, end, &mut events);
    }
    Ok(events)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PeriodReport {
    pub period: f64,
    /// Coefficient of variation of the cycle lengths.
    pub regularity: f64,
    /// Peak-to-peak range over the last period.
    pub amplitude: f64,
    pub peaks: usize,
    /// Number of maxima making up one cycle.
    pub peaks_per_cycle: usize,
    pub periodic: bool,
}

pub const PERIODIC_REGULARITY: f64 = 0.05;
pub const PERIODIC_AMPLITUDE: f64 = 1e-3;
/// Largest number of maxima per cycle considered when grouping peaks.
pub const MAX_PEAKS_PER_CYCLE: usize = 8;
/// Share of the single-spacing variance allowed to remain unexplained by the
/// phase within a cycle.
const MAX_WITHIN_PHASE_SPREAD: f64 = 0.25;

/// Period from the spacing of peaks on `t >= t_min`. A peak is the highest
/// sample of each excursion above the window's mid-range, which ignores
/// rounding-level wiggles. When single spacings are irregular but repeat with
/// the position inside a cycle, the cycle spans `g` peaks (up to
/// [`MAX_PEAKS_PER_CYCLE`]) and the regularity is that of the cycle lengths. `None` when fewer than three peaks are
/// found.
pub fn detect_period(x: &[f64], dt: f64, t_min: Option<f64>) -> Result<Option<PeriodReport>> {
    let duration = x.len().saturating_sub(1) as f64 * dt;
    let t_min = t_min.unwrap_or(0.5 * duration);
    if x.len() < 4 || duration < 2.0 * t_min {
        return Err(Error::InsufficientData(x.len()));
    }
    let start = ((t_min / dt).ceil() as usize).min(x.len() - 1);
    let window = &x[start..];
    let hi = window.iter().cloned().fold(f64::MIN, f64::max);
    let lo = window.iter().cloned().fold(f64::MAX, f64::min);
    let mid = 0.5 * (hi + lo);
    let mut peaks: Vec<usize> = Vec::new();
    let mut k = 0;
    while k < window.len() {
        if window[k] > mid {
            let begin = k;
            let mut best = k;
            while k < window.len() && window[k] > mid {
                if window[k] > window[best] {
                    best = k;
                }
                k += 1;
            }
            // an excursion cut by either end of the window has no reliable peak
            if begin > 0 && k < window.len() {
                peaks.push(best);
            }
        } else {
            k += 1;
        }
    }
    if peaks.len() < 3 {
        return Ok(None);
    }
    // A pattern with several maxima per cycle repeats every `group` peaks.
    // Grouping is accepted only when the phase within the cycle explains most
    // of the spread of single spacings, so that summing irregular spacings
    // cannot fake a regular cycle.
    let spacings: Vec<f64> = peaks.windows(2).map(|w| (w[1] - w[0]) as f64 * dt).collect();
    let cycle_stats = |group: usize| {
        let cycles: Vec<f64> = spacings.windows(group).map(|w| w.iter().sum()).collect();
        let n = cycles.len() as f64;
        let mean = cycles.iter().sum::<f64>() / n;
        let var = cycles.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt() / mean)
    };
    let phase_explained = |group: usize| {
        let mean = spacings.iter().sum::<f64>() / spacings.len() as f64;
        let total: f64 = spacings.iter().map(|s| (s - mean).powi(2)).sum();
        let within: f64 = (0..group)
            .map(|r| {
                let phase: Vec<f64> = spacings.iter().skip(r).step_by(group).cloned().collect();
                let m = phase.iter().sum::<f64>() / phase.len() as f64;
                phase.iter().map(|s| (s - m).powi(2)).sum::<f64>()
            })
            .sum();
        within <= MAX_WITHIN_PHASE_SPREAD * total
    };
    let mut group = 1;
    let (mut period, mut regularity) = cycle_stats(1);
    for g in 2..=MAX_PEAKS_PER_CYCLE {
        // at least two full cycles so each spacing is seen twice
        if spacings.len() < 2 * g || regularity < PERIODIC_REGULARITY {
            break;
        }
        let (p, r) = cycle_stats(g);
        if r < PERIODIC_REGULARITY && phase_explained(g) {
            group = g;
            period = p;
            regularity = r;
        }
    }
    let last = ((period / dt).round() as usize).clamp(1, window.len());
    let tail = &window[window.len() - last..];
    let amplitude = tail.iter().cloned().fold(f64::MIN, f64::max) - tail.iter().cloned().fold(f64::MAX, f64::min);
    Ok(Some(PeriodReport {
        period,
        regularity,
        amplitude,
        peaks: peaks.len(),
        peaks_per_cycle: group,
        periodic: regularity < PERIODIC_REGULARITY && amplitude > PERIODIC_AMPLITUDE,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, discretize_density};
    use crate::rate::{RateTerm, ThresholdFn};
    use crate::steady::{invariant_flux, reconstruct_steady_density, PowerOptions};
    use crate::transport::{CouplingMode, Simulation};
    use proptest::prelude::*;

    fn refractory() -> FiringRateSpec {
        FiringRateSpec::new(
            vec![RateTerm::SThreshold { theta: ThresholdFn::Fixed(1.0) }],
            1.0,
            1.0,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn doeblin_constants_for_unit_bounds() {
        let c = doeblin_constants(1.0, 1.0, 1.0).unwrap();
        assert!((c.alpha - 0.5 * (-3.0f64).exp()).abs() < 1e-16);
        assert!((c.alpha - 0.0248935).abs() < 1e-7);
        assert!((c.lambda - 0.008402872745639845).abs() < 1e-16);
        assert!((c.lambda - 0.0084).abs() < 1e-5);
        assert_eq!(c.t0, 3.0);
        assert!(matches!(doeblin_constants(0.0, 1.0, 1.0), Err(Error::InvalidBounds { .. })));
        assert!(doeblin_constants(2.0, 1.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn doeblin_constants_are_consistent(p0 in 0.01..5.0f64, extra in 0.0..5.0f64, sigma in 0.01..5.0f64) {
            let c = doeblin_constants(p0, p0 + extra, sigma).unwrap();
            prop_assert!(c.alpha > 0.0 && c.alpha < 0.04);
            prop_assert!(c.lambda > 0.0);
            let lhs = 1.0 - c.alpha;
            prop_assert!((lhs - (-c.lambda * c.t0).exp()).abs() <= 1e-15);
        }
    }

    fn run_linear(spec: &FiringRateSpec, delta: f64, t: f64) -> DensityField {
        let g = build_grid(delta, 6.0, 6.0).unwrap();
        let init = discretize_density(|_, a| (-a).exp(), &g).unwrap().field;
        let mut sim = Simulation::new(init, spec, CouplingMode::Frozen { x: 0.0 }, false).unwrap();
        for _ in 0..(t / delta).round() as usize {
            sim.advance().unwrap();
        }
        sim.into_field()
    }

    #[test]
    fn minorization_holds_for_refractory_and_constant_rates() {
        let field = run_linear(&refractory(), 0.02, 3.0);
        let check = check_minorization(&field, 1.0, 1.0, 1.0).unwrap();
        assert!(check.holds, "{check:?}");
        let constant = FiringRateSpec::new(vec![RateTerm::Constant { c: 1.0 }], 1.0, 1.0, 1.0).unwrap();
        let field = run_linear(&constant, 0.02, 3.0);
        assert!(check_minorization(&field, 1.0, 1.0, 1.0).unwrap().holds);
    }

    #[test]
    fn minorization_needs_a_whole_cell() {
        let g = build_grid(0.5, 2.0, 2.0).unwrap();
        let f = DensityField::zeros(g);
        assert_eq!(check_minorization(&f, 1.0, 1.0, 0.4), Err(Error::GridTooCoarse));
    }

    #[test]
    fn entropy_of_identical_fields_is_zero() {
        let g = build_grid(0.1, 3.0, 3.0).unwrap();
        let f = discretize_density(|_, a| (-a).exp(), &g).unwrap().field;
        for h in [EntropyKind::Square, EntropyKind::Abs, EntropyKind::Kl] {
            let e = relative_entropy(&f, &f, h).unwrap();
            assert!(e.value.abs() < 1e-15);
            let d = entropy_dissipation(&f, &f, &refractory(), 0.0, h).unwrap();
            assert!(d.value.abs() < 1e-14);
        }
    }

    #[test]
    fn square_entropy_of_doubled_half() {
        let g = build_grid(0.5, 2.0, 2.0).unwrap();
        let r = DensityField::from_masses(g, vec![1.0 / 16.0; 16]).unwrap();
        let m: Vec<f64> = (0..16).map(|k| if k < 8 { 2.0 / 16.0 } else { 0.0 }).collect();
        let n = DensityField::from_masses(g, m).unwrap();
        let e = relative_entropy(&n, &r, EntropyKind::Square).unwrap();
        assert!((e.value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn abs_entropy_is_masked_l1_distance() {
        let g = build_grid(0.1, 2.0, 2.0).unwrap();
        let r = discretize_density(|s, a| if a - s > 0.5 { (-a).exp() } else { 0.0 }, &g).unwrap().field;
        let n = discretize_density(|s, a| (-(a + s)).exp(), &g).unwrap().field;
        let e = relative_entropy(&n, &r, EntropyKind::Abs).unwrap();
        let mut l1 = 0.0;
        let mut masked = 0.0;
        for (m, q) in n.mass.iter().zip(&r.mass) {
            if *q > 0.0 {
                l1 += (m - q).abs();
            } else {
                masked += m;
            }
        }
        assert!((e.value - l1).abs() < 1e-14);
        assert!((e.masked_mass - masked).abs() < 1e-14 && masked > 0.0);
    }

    fn positive_field(g: crate::grid::Grid) -> impl Strategy<Value = DensityField> {
        proptest::collection::vec(0.01..1.0f64, g.len())
            .prop_map(move |v| DensityField::from_masses(g, v).unwrap())
    }

    proptest! {
        #[test]
        fn dissipation_is_non_negative(
            n in positive_field(crate::grid::Grid { delta: 0.25, n_s: 8, n_d: 8 }),
            r in positive_field(crate::grid::Grid { delta: 0.25, n_s: 8, n_d: 8 }),
            x in 0.0..2.0f64,
        ) {
            let spec = FiringRateSpec::new(
                vec![
                    RateTerm::SThreshold { theta: ThresholdFn::Identity },
                    RateTerm::DiffThreshold { theta: ThresholdFn::Identity },
                ],
                1.0, 2.0, 2.0,
            ).unwrap();
            for h in [EntropyKind::Square, EntropyKind::Abs, EntropyKind::Kl] {
                let d = entropy_dissipation(&n, &r, &spec, x, h).unwrap();
                for s in &d.jensen_slack {
                    prop_assert!(*s >= -1e-12);
                }
            }
        }
    }

    #[test]
    fn abs_dissipation_can_vanish_off_the_stationary_state() {
        let delta = 0.1;
        let g = build_grid(delta, 15.0, 15.0).unwrap();
        let spec = refractory();
        let flux = invariant_flux(&spec, &g, 0.0, PowerOptions::default()).unwrap();
        let r = reconstruct_steady_density(&spec, &g, 0.0, &flux).unwrap().field;
        // move mass inside a non-firing row, keeping the row total
        let mut n = r.clone();
        let (a, b) = (g.index(2, 15), g.index(2, 16));
        let shift = 0.5 * n.mass[a].min(n.mass[b]);
        n.mass[a] += shift;
        n.mass[b] -= shift;
        let d = entropy_dissipation(&n, &r, &spec, 0.0, EntropyKind::Abs).unwrap();
        assert!(d.value.abs() < 1e-15);
        assert!(n.l1_distance(&r) > 0.0);
    }

    #[test]
    fn entropy_drops_by_dissipation_each_step() {
        // a large box keeps the boundary leak of the reference below 1e-10
        let delta = 0.1;
        let g = build_grid(delta, 25.0, 25.0).unwrap();
        let spec = FiringRateSpec::new(vec![RateTerm::Constant { c: 1.0 }], 1.0, 1.0, 1.0).unwrap();
        let flux = invariant_flux(&spec, &g, 0.0, PowerOptions::default()).unwrap();
        let r = reconstruct_steady_density(&spec, &g, 0.0, &flux).unwrap().field;
        let init = discretize_density(|s, a| if a < 2.0 && a > s + 1.0 { 2.0 } else { 0.0 }, &g)
            .unwrap()
            .field;
        let mut sim = Simulation::new(init, &spec, CouplingMode::Frozen { x: 0.0 }, false).unwrap();
        let mut prev = relative_entropy(sim.field(), &r, EntropyKind::Square).unwrap().value;
        for _ in 0..100 {
            let d = entropy_dissipation(sim.field(), &r, &spec, 0.0, EntropyKind::Square).unwrap();
            sim.advance().unwrap();
            let now = relative_entropy(sim.field(), &r, EntropyKind::Square).unwrap().value;
            assert!(d.value >= 0.0);
            assert!(now <= prev + 1e-12);
            assert!((prev - now - delta * d.value).abs() <= 1e-9 * prev.max(1.0), "{prev} {now} {}", d.value);
            prev = now;
        }
    }

    #[test]
    fn fit_examples() {
        let t = [0.0, 1.0, 2.0];
        let (rate, res) = fit_exponential_rate(&t, &t.map(|t: f64| (-t).exp()), 0.0).unwrap();
        assert!((rate - 1.0).abs() < 1e-14 && res < 1e-14);
        let (rate, _) = fit_exponential_rate(&t, &[0.3; 3], 0.0).unwrap();
        assert!(rate.abs() < 1e-15);
        assert_eq!(fit_exponential_rate(&t, &[1.0, 0.5, 0.2], 1.0), Err(Error::InsufficientData(2)));
    }

    #[test]
    fn jump_examples() {
        assert!(detect_jumps(&[0.5; 10], 0.1, 0.1).unwrap().is_empty());
        let step: Vec<f64> = (0..10).map(|k| if k < 4 { 0.0 } else { 1.0 }).collect();
        let j = detect_jumps(&step, 0.1, 0.5).unwrap();
        assert_eq!(j.len(), 1);
        assert!((j[0].time - 0.3).abs() < 1e-15 && j[0].size == 1.0);
        // a jump smeared over three steps is one event
        let ramp = [0.0, 0.0, 0.3, 0.6, 0.9, 0.9, 0.9];
        assert_eq!(detect_jumps(&ramp, 1.0, 0.2).unwrap().len(), 1);
        assert!(detect_jumps(&ramp, 1.0, 0.0).is_err());
    }

    #[test]
    fn period_examples() {
        let dt = 0.01;
        let sine: Vec<f64> = (0..2000).map(|k| (2.0 * std::f64::consts::PI * k as f64 * dt).sin()).collect();
        let p = detect_period(&sine, dt, None).unwrap().unwrap();
        assert!((p.period - 1.0).abs() <= dt && p.periodic, "{p:?}");
        let settling: Vec<f64> = (0..2000)
            .map(|k| 0.5 + (-(k as f64) * dt).exp() * (2.0 * std::f64::consts::PI * k as f64 * dt).sin())
            .collect();
        let p = detect_period(&settling, dt, None).unwrap();
        assert!(p.is_none_or(|p| !p.periodic));
        // two unequal bumps per unit cycle
        let bumps: Vec<f64> = (0..4000)
            .map(|k| {
                let ph = (k as f64 * dt).fract();
                (-((ph - 0.2) / 0.03).powi(2)).exp() + 0.8 * (-((ph - 0.5) / 0.03).powi(2)).exp()
            })
            .collect();
        let p = detect_period(&bumps, dt, None).unwrap().unwrap();
        assert_eq!(p.peaks_per_cycle, 2);
        assert!((p.period - 1.0).abs() <= dt && p.periodic, "{p:?}");
        // spacings that never repeat stay irregular under every grouping
        let mut t = 0.0;
        let mut state: u64 = 12345;
        let mut times = Vec::new();
        for _ in 0..60 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            t += 0.3 + 0.7 * (state >> 11) as f64 / (1u64 << 53) as f64;
            times.push(t);
        }
        let jittered: Vec<f64> = (0..(t / dt) as usize)
            .map(|k| times.iter().map(|c| (-((k as f64 * dt - c) / 0.03).powi(2)).exp()).sum())
            .collect();
        let p = detect_period(&jittered, dt, None).unwrap().unwrap();
        assert!(!p.periodic, "{p:?}");
        assert!(detect_period(&[0.0; 10], 0.1, Some(1.0)).is_err());
        assert_eq!(detect_period(&[0.0; 100], 0.1, None).unwrap(), None);
    }
}
