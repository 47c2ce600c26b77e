//! Firing rates `p(s, a, X)` built from a small vocabulary of terms.
//!
//! Every term depends on the first elapsed time `s` alone or on the
//! difference `d = a - s` alone, so on the sheared grid a rate splits into a
//! row part plus a column part. The solvers rely on this: a cell survival
//! factor is `exp(-delta row_i) * exp(-delta col_j)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// `3 sqrt(3) / 8`, the maximum of `2u / (u^2 + 1)^2`.
const SIGMOID_SLOPE_MAX: f64 = 0.649_519_052_838_329;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdFn {
    Fixed(f64),
    Identity,
    ExpNeg,
}

impl ThresholdFn {
    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            ThresholdFn::Fixed(v) => v,
            ThresholdFn::Identity => x,
            ThresholdFn::ExpNeg => (-x).exp(),
        }
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self, ThresholdFn::Fixed(_))
    }
}

/// `phi(u) = g u^2 / (u^2 + 1) + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmoidParams {
    pub g: f64,
    pub b: f64,
}

impl SigmoidParams {
    #[inline]
    pub fn value(&self, u: f64) -> f64 {
        let u2 = u * u;
        self.g * u2 / (u2 + 1.0) + self.b
    }

    /// `sup |phi'|`, attained at `u = 1 / sqrt(3)`.
    pub fn max_slope(&self) -> f64 {
        SIGMOID_SLOPE_MAX * self.g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RateTerm {
    Constant { c: f64 },
    /// `1{s > theta(X)}`
    SThreshold { theta: ThresholdFn },
    /// `1{a - s > theta(X)}` (or `1{s - a > theta(X)}` under the literal sign)
    DiffThreshold { theta: ThresholdFn },
    /// `phi(X) 1{s > sigma_t}`
    ModulatedS { phi: SigmoidParams, sigma_t: f64 },
}

/// Orientation of the difference term. `SMinusA` is the literal printed form
/// `1{s - a > theta}`, which vanishes on the domain for `theta >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffSign {
    #[default]
    AMinusS,
    SMinusA,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiringRateSpec {
    pub terms: Vec<RateTerm>,
    pub p0: f64,
    pub sigma: f64,
    pub p_inf: f64,
    #[serde(default)]
    pub diff_sign: DiffSign,
}

#[inline]
fn indicator(cond: bool) -> f64 {
    if cond {
        1.0
    } else {
        0.0
    }
}

impl FiringRateSpec {
    pub fn new(terms: Vec<RateTerm>, p0: f64, sigma: f64, p_inf: f64) -> Result<Self> {
        let spec = FiringRateSpec {
            terms,
            p0,
            sigma,
            p_inf,
            diff_sign: DiffSign::AMinusS,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_diff_sign(mut self, sign: DiffSign) -> Self {
        self.diff_sign = sign;
        self
    }

    /// Checks the structural invariants (not the bounds themselves; see
    /// [`verify_bounds`]).
    pub fn validate(&self) -> Result<()> {
        if !(self.p0 > 0.0 && self.sigma > 0.0 && self.p_inf >= self.p0) || !self.p_inf.is_finite()
        {
            return Err(Error::InvalidBounds {
                p0: self.p0,
                p_inf: self.p_inf,
                sigma: self.sigma,
            });
        }
        for term in &self.terms {
            match *term {
                RateTerm::Constant { c } if !(c >= 0.0) => {
                    return Err(Error::InvalidParameter(format!("constant rate {c} < 0")));
                }
                RateTerm::ModulatedS { phi, sigma_t } => {
                    if !(phi.g >= 0.0 && phi.b > 0.0) {
                        return Err(Error::InvalidParameter(format!(
                            "sigmoid needs g >= 0 and b > 0, got g = {}, b = {}",
                            phi.g, phi.b
                        )));
                    }
                    if !(sigma_t >= 0.0) {
                        return Err(Error::InvalidParameter(format!(
                            "modulated threshold {sigma_t} < 0"
                        )));
                    }
                }
                RateTerm::SThreshold { theta: ThresholdFn::Fixed(v) }
                | RateTerm::DiffThreshold { theta: ThresholdFn::Fixed(v) }
                    if !(v >= 0.0) =>
                {
                    return Err(Error::InvalidParameter(format!("threshold {v} < 0")));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// True when no term depends on `a`.
    pub fn is_a_independent(&self) -> bool {
        !self
            .terms
            .iter()
            .any(|t| matches!(t, RateTerm::DiffThreshold { .. }))
    }

    /// True when no term depends on `X`.
    pub fn is_x_independent(&self) -> bool {
        self.terms.iter().all(|t| match t {
            RateTerm::Constant { .. } => true,
            RateTerm::SThreshold { theta } | RateTerm::DiffThreshold { theta } => theta.is_fixed(),
            RateTerm::ModulatedS { phi, .. } => phi.g == 0.0,
        })
    }

    /// `sum c + #indicators + sum (g + b)`.
    pub fn structural_upper_bound(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| match *t {
                RateTerm::Constant { c } => c,
                RateTerm::SThreshold { .. } | RateTerm::DiffThreshold { .. } => 1.0,
                RateTerm::ModulatedS { phi, .. } => phi.g + phi.b,
            })
            .sum()
    }
}

/// Pointwise rate; indicators are strict.
pub fn eval_rate(spec: &FiringRateSpec, s: f64, a: f64, x: f64) -> Result<f64> {
    if s > a || s < 0.0 || x < 0.0 || s.is_nan() || a.is_nan() || x.is_nan() {
        return Err(Error::DomainViolation { s, a, x });
    }
    Ok(rate_unchecked(spec, s, a, x))
}

fn rate_unchecked(spec: &FiringRateSpec, s: f64, a: f64, x: f64) -> f64 {
    let diff = match spec.diff_sign {
        DiffSign::AMinusS => a - s,
        DiffSign::SMinusA => s - a,
    };
    spec.terms
        .iter()
        .map(|t| match *t {
            RateTerm::Constant { c } => c,
            RateTerm::SThreshold { theta } => indicator(s > theta.value(x)),
            RateTerm::DiffThreshold { theta } => indicator(diff > theta.value(x)),
            RateTerm::ModulatedS { phi, sigma_t } => phi.value(x) * indicator(s > sigma_t),
        })
        .sum()
}

/// Bound on `|d p / d X|`, `None` when some threshold moves with `X`.
pub fn lipschitz_in_x(spec: &FiringRateSpec) -> Option<f64> {
    let mut total = 0.0;
    for term in &spec.terms {
        match term {
            RateTerm::Constant { .. } => {}
            RateTerm::SThreshold { theta } | RateTerm::DiffThreshold { theta } => {
                if !theta.is_fixed() {
                    return None;
                }
            }
            RateTerm::ModulatedS { phi, .. } => total += phi.max_slope(),
        }
    }
    Some(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    /// `p < p0` on `{s >= sigma}`
    Lower,
    /// `p > p_inf`
    Upper,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundViolation {
    pub i: usize,
    pub j: usize,
    pub s: f64,
    pub a: f64,
    pub x: f64,
    pub rate: f64,
    pub kind: BoundKind,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct BoundsReport {
    pub checked: usize,
    pub violation_count: usize,
    /// First violations found, capped at [`BoundsReport::MAX_LISTED`].
    pub violations: Vec<BoundViolation>,
}

impl BoundsReport {
    pub const MAX_LISTED: usize = 1000;

    pub fn holds(&self) -> bool {
        self.violation_count == 0
    }
}

/// Checks `p0 1{a > s >= sigma} <= p <= p_inf` at every cell center and
/// every sampled activity.
pub fn verify_bounds(spec: &FiringRateSpec, grid: &Grid, x_samples: &[f64]) -> BoundsReport {
    const SLACK: f64 = 1e-12;
    let mut report = BoundsReport::default();
    for &x in x_samples {
        for i in 0..grid.n_s {
            let s = grid.s_center(i);
            for j in 0..grid.n_d {
                let a = grid.a_center(i, j);
                let rate = rate_unchecked(spec, s, a, x);
                report.checked += 1;
                let lower = if a > s && s >= spec.sigma { spec.p0 } else { 0.0 };
                let kind = if rate < lower - SLACK {
                    Some(BoundKind::Lower)
                } else if rate > spec.p_inf + SLACK {
                    Some(BoundKind::Upper)
                } else {
                    None
                };
                if let Some(kind) = kind {
                    report.violation_count += 1;
                    if report.violations.len() < BoundsReport::MAX_LISTED {
                        report.violations.push(BoundViolation {
                            i,
                            j,
                            s,
                            a,
                            x,
                            rate,
                            kind,
                        });
                    }
                }
            }
        }
    }
    report
}

/// Threshold position in cell units, snapped onto the grid when within
/// rounding of a node so that grid-aligned thresholds give exact 0/1 cells.
#[inline]
fn threshold_cells(theta: f64, delta: f64) -> f64 {
    let t = theta / delta;
    let r = t.round();
    if (t - r).abs() <= 1e-9 * t.abs().max(1.0) {
        r
    } else {
        t
    }
}

/// Fraction of `[k delta, (k + 1) delta)` lying above `theta`.
#[inline]
fn fraction_above(k: usize, t_cells: f64) -> f64 {
    (k as f64 + 1.0 - t_cells).clamp(0.0, 1.0)
}

/// Cell-averaged rate at a fixed activity, split as `row[i] + col[j]`,
/// together with the per-step survival factors.
#[derive(Debug, Clone)]
pub struct CellRates {
    pub row: Vec<f64>,
    pub col: Vec<f64>,
    pub decay_row: Vec<f64>,
    pub decay_col: Vec<f64>,
}

impl CellRates {
    pub fn new(spec: &FiringRateSpec, grid: &Grid, x: f64) -> Self {
        let delta = grid.delta;
        let mut row = vec![0.0; grid.n_s];
        let mut col = vec![0.0; grid.n_d];
        for term in &spec.terms {
            match *term {
                RateTerm::Constant { c } => row.iter_mut().for_each(|r| *r += c),
                RateTerm::SThreshold { theta } => {
                    let t = threshold_cells(theta.value(x), delta);
                    for (i, r) in row.iter_mut().enumerate() {
                        *r += fraction_above(i, t);
                    }
                }
                RateTerm::ModulatedS { phi, sigma_t } => {
                    let level = phi.value(x);
                    let t = threshold_cells(sigma_t, delta);
                    for (i, r) in row.iter_mut().enumerate() {
                        *r += level * fraction_above(i, t);
                    }
                }
                RateTerm::DiffThreshold { theta } => match spec.diff_sign {
                    DiffSign::AMinusS => {
                        let t = threshold_cells(theta.value(x), delta);
                        for (j, c) in col.iter_mut().enumerate() {
                            *c += fraction_above(j, t);
                        }
                    }
                    // s - a = -d <= 0 < theta on the whole domain
                    DiffSign::SMinusA => {}
                },
            }
        }
        let decay_row = row.iter().map(|r| (-delta * r).exp()).collect();
        let decay_col = col.iter().map(|c| (-delta * c).exp()).collect();
        CellRates {
            row,
            col,
            decay_row,
            decay_col,
        }
    }

    #[inline]
    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.row[i] + self.col[j]
    }

    /// Fraction of a cell's mass that does not fire during one step.
    #[inline]
    pub fn survival(&self, i: usize, j: usize) -> f64 {
        self.decay_row[i] * self.decay_col[j]
    }

    /// `(1 - survival) / delta`, the rate actually realised by one step.
    #[inline]
    pub fn effective_rate(&self, i: usize, j: usize, delta: f64) -> f64 {
        (1.0 - self.survival(i, j)) / delta
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use proptest::prelude::*;

    pub(crate) fn example1() -> FiringRateSpec {
        FiringRateSpec::new(
            vec![
                RateTerm::SThreshold { theta: ThresholdFn::Identity },
                RateTerm::DiffThreshold { theta: ThresholdFn::Identity },
            ],
            1.0,
            2.0,
            2.0,
        )
        .unwrap()
    }

    fn sigmoid_term() -> RateTerm {
        RateTerm::ModulatedS {
            phi: SigmoidParams { g: 10.0, b: 0.5 },
            sigma_t: 1.0,
        }
    }

    #[test]
    fn example1_rate_values() {
        let spec = example1();
        assert_eq!(eval_rate(&spec, 0.5, 2.0, 0.3).unwrap(), 2.0);
        // thresholds above both s and a - s
        assert_eq!(eval_rate(&spec, 0.5, 1.0, 0.9).unwrap(), 0.0);
        // strict inequality
        assert_eq!(eval_rate(&spec, 0.3, 0.6, 0.3).unwrap(), 0.0);
        let literal = spec.clone().with_diff_sign(DiffSign::SMinusA);
        assert_eq!(eval_rate(&literal, 0.5, 2.0, 0.3).unwrap(), 1.0);
    }

    #[test]
    fn constant_terms_survive_when_indicators_are_off() {
        let mut spec = example1();
        spec.terms.push(RateTerm::Constant { c: 0.7 });
        assert_eq!(eval_rate(&spec, 0.1, 0.2, 1.0).unwrap(), 0.7);
    }

    #[test]
    fn modulated_rate() {
        let spec = FiringRateSpec::new(vec![sigmoid_term()], 0.5, 1.0, 10.5).unwrap();
        assert!((eval_rate(&spec, 2.0, 3.0, 1.0).unwrap() - 5.5).abs() < 1e-15);
        assert_eq!(eval_rate(&spec, 0.5, 3.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn domain_violations() {
        let spec = example1();
        assert!(matches!(eval_rate(&spec, 2.0, 1.0, 0.1), Err(Error::DomainViolation { .. })));
        assert!(matches!(eval_rate(&spec, 0.5, 1.0, -0.1), Err(Error::DomainViolation { .. })));
    }

    #[test]
    fn spec_json_round_trip() {
        let text = r#"{"terms":[{"kind":"s_threshold","theta":"identity"},{"kind":"diff_threshold","theta":"identity"}],"p0":1.0,"sigma":1.0,"p_inf":2.0}"#;
        let spec: FiringRateSpec = serde_json::from_str(text).unwrap();
        assert_eq!(spec.terms.len(), 2);
        assert_eq!(spec.diff_sign, DiffSign::AMinusS);
        let other = r#"{"terms":[{"kind":"constant","c":1.5},{"kind":"s_threshold","theta":{"fixed":1.0}},
            {"kind":"modulated_s","phi":{"g":10.0,"b":0.5},"sigma_t":1.0},
            {"kind":"diff_threshold","theta":"exp_neg"}],"p0":0.5,"sigma":1.0,"p_inf":14.0,"diff_sign":"s_minus_a"}"#;
        let spec: FiringRateSpec = serde_json::from_str(other).unwrap();
        assert_eq!(spec.terms[1], RateTerm::SThreshold { theta: ThresholdFn::Fixed(1.0) });
        assert_eq!(spec.diff_sign, DiffSign::SMinusA);
        let back: FiringRateSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn invalid_specs() {
        assert!(FiringRateSpec::new(vec![], 0.0, 1.0, 1.0).is_err());
        assert!(FiringRateSpec::new(vec![], 2.0, 1.0, 1.0).is_err());
        assert!(FiringRateSpec::new(vec![RateTerm::Constant { c: -1.0 }], 1.0, 1.0, 1.0).is_err());
        let bad_phi = RateTerm::ModulatedS { phi: SigmoidParams { g: 1.0, b: 0.0 }, sigma_t: 1.0 };
        assert!(FiringRateSpec::new(vec![bad_phi], 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn verify_bounds_examples() {
        let g = build_grid(0.1, 3.0, 3.0).unwrap();
        let xs = [0.0, 0.5, 1.0];

        let constant = FiringRateSpec::new(vec![RateTerm::Constant { c: 1.0 }], 1.0, 0.3, 1.0).unwrap();
        assert!(verify_bounds(&constant, &g, &xs).holds());

        let fixed = FiringRateSpec::new(
            vec![RateTerm::SThreshold { theta: ThresholdFn::Fixed(1.0) }],
            1.0,
            0.5,
            1.0,
        )
        .unwrap();
        let report = verify_bounds(&fixed, &g, &[0.5]);
        assert!(!report.holds());
        assert!(report
            .violations
            .iter()
            .all(|v| v.kind == BoundKind::Lower && v.s >= 0.5 && v.s < 1.0));
        // rows 5..=9 times every column
        assert_eq!(report.violation_count, 5 * g.n_d);

        let mut ex1 = example1();
        ex1.p_inf = 1.0;
        ex1.sigma = 2.5;
        let report = verify_bounds(&ex1, &g, &[0.3]);
        assert!(report.violation_count > 0);
        assert!(report
            .violations
            .iter()
            .all(|v| v.kind == BoundKind::Upper && v.rate == 2.0));
    }

    #[test]
    fn lipschitz_bounds() {
        let c = FiringRateSpec::new(vec![RateTerm::Constant { c: 2.0 }], 1.0, 1.0, 2.0).unwrap();
        assert_eq!(lipschitz_in_x(&c), Some(0.0));
        let m = FiringRateSpec::new(vec![sigmoid_term()], 0.5, 1.0, 10.5).unwrap();
        let l = lipschitz_in_x(&m).unwrap();
        // brute-force sup of phi' on a fine grid
        let phi = SigmoidParams { g: 10.0, b: 0.5 };
        let h = 1e-6;
        let brute = (0..200_000)
            .map(|k| k as f64 * 1e-4)
            .map(|u| (phi.value(u + h) - phi.value(u - h)) / (2.0 * h))
            .fold(0.0_f64, f64::max);
        assert!((l - brute).abs() < 1e-6, "{l} vs {brute}");
        assert!((l - 6.495).abs() < 1e-3);
        assert_eq!(lipschitz_in_x(&example1()), None);
    }

    #[test]
    fn grid_aligned_thresholds_give_exact_cells() {
        let g = build_grid(0.005, 3.0, 3.0).unwrap();
        let spec = FiringRateSpec::new(
            vec![RateTerm::SThreshold { theta: ThresholdFn::Fixed(1.0) }],
            1.0,
            1.0,
            1.0,
        )
        .unwrap();
        let r = CellRates::new(&spec, &g, 0.0);
        assert_eq!(r.row[199], 0.0);
        assert_eq!(r.row[200], 1.0);
        assert!(r.decay_col.iter().all(|q| *q == 1.0));
    }

    #[test]
    fn cell_average_is_fractional_at_moving_threshold() {
        let g = build_grid(0.1, 2.0, 2.0).unwrap();
        let r = CellRates::new(&example1(), &g, 0.425);
        // cell 4 covers [0.4, 0.5): three quarters lie above 0.425
        assert!((r.row[4] - 0.75).abs() < 1e-12);
        assert!((r.col[4] - 0.75).abs() < 1e-12);
        assert_eq!(r.row[3], 0.0);
        assert_eq!(r.row[5], 1.0);
    }

    fn any_term() -> impl Strategy<Value = RateTerm> {
        let theta = prop_oneof![
            (0.0..3.0f64).prop_map(ThresholdFn::Fixed),
            Just(ThresholdFn::Identity),
            Just(ThresholdFn::ExpNeg),
        ];
        prop_oneof![
            (0.0..3.0f64).prop_map(|c| RateTerm::Constant { c }),
            theta.clone().prop_map(|theta| RateTerm::SThreshold { theta }),
            theta.prop_map(|theta| RateTerm::DiffThreshold { theta }),
            (0.0..10.0f64, 0.1..2.0f64, 0.0..2.0f64).prop_map(|(g, b, sigma_t)| RateTerm::ModulatedS {
                phi: SigmoidParams { g, b },
                sigma_t
            }),
        ]
    }

    proptest! {
        #[test]
        fn rate_is_non_negative_and_structurally_bounded(
            terms in proptest::collection::vec(any_term(), 0..5),
            s in 0.0..5.0f64, d in 0.0..5.0f64, x in 0.0..5.0f64,
        ) {
            let spec = FiringRateSpec { terms, p0: 1.0, sigma: 1.0, p_inf: 1.0, diff_sign: DiffSign::AMinusS };
            let p = eval_rate(&spec, s, s + d, x).unwrap();
            prop_assert!(p >= 0.0);
            prop_assert!(p <= spec.structural_upper_bound() + 1e-12);
        }

        #[test]
        fn identity_thresholds_are_inhibitory_exp_neg_excitatory(
            s in 0.0..3.0f64, d in 0.0..3.0f64, x1 in 0.0..3.0f64, dx in 0.0..1.0f64,
        ) {
            let inhib = example1();
            let excit = FiringRateSpec::new(
                vec![
                    RateTerm::SThreshold { theta: ThresholdFn::ExpNeg },
                    RateTerm::DiffThreshold { theta: ThresholdFn::ExpNeg },
                ],
                1.0, 1.0, 2.0,
            ).unwrap();
            let a = s + d;
            prop_assert!(eval_rate(&inhib, s, a, x1 + dx).unwrap() <= eval_rate(&inhib, s, a, x1).unwrap());
            prop_assert!(eval_rate(&excit, s, a, x1 + dx).unwrap() >= eval_rate(&excit, s, a, x1).unwrap());
        }

        #[test]
        fn constant_rate_never_violates_matching_bounds(c in 0.01..5.0f64, delta in 0.05..0.5f64) {
            let spec = FiringRateSpec::new(vec![RateTerm::Constant { c }], c, 1.0, c).unwrap();
            let g = build_grid(delta, 20.0 * delta, 10.0 * delta).unwrap();
            prop_assert!(verify_bounds(&spec, &g, &[0.0, c]).holds());
        }
    }
}
