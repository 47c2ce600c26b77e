//! Rates and initial densities of the reference examples.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::rate::{FiringRateSpec, RateTerm, SigmoidParams, ThresholdFn};

/// Sigmoid of the modulated examples, `10 u^2 / (u^2 + 1) + 1/2`.
pub const EXAMPLE3_SIGMOID: SigmoidParams = SigmoidParams { g: 10.0, b: 0.5 };

/// `1{s > X} + 1{a - s > X}`.
pub fn example1_spec() -> FiringRateSpec {
    FiringRateSpec::new(
        vec![
            RateTerm::SThreshold { theta: ThresholdFn::Identity },
            RateTerm::DiffThreshold { theta: ThresholdFn::Identity },
        ],
        1.0,
        2.0,
        2.0,
    )
    .expect("valid preset")
}

/// `1{s > exp(-X)} + 1{a - s > exp(-X)}`.
pub fn example2_spec() -> FiringRateSpec {
    FiringRateSpec::new(
        vec![
            RateTerm::SThreshold { theta: ThresholdFn::ExpNeg },
            RateTerm::DiffThreshold { theta: ThresholdFn::ExpNeg },
        ],
        1.0,
        1.0,
        2.0,
    )
    .expect("valid preset")
}

/// `phi(X) 1{s > 1}`.
pub fn example3_1_spec() -> FiringRateSpec {
    FiringRateSpec::new(
        vec![RateTerm::ModulatedS { phi: EXAMPLE3_SIGMOID, sigma_t: 1.0 }],
        0.5,
        1.0,
        10.5,
    )
    .expect("valid preset")
}

/// `phi(X) 1{s > 1} + 1{a - s > X}`.
pub fn example3_2_spec() -> FiringRateSpec {
    FiringRateSpec::new(
        vec![
            RateTerm::ModulatedS { phi: EXAMPLE3_SIGMOID, sigma_t: 1.0 },
            RateTerm::DiffThreshold { theta: ThresholdFn::Identity },
        ],
        0.5,
        1.0,
        11.5,
    )
    .expect("valid preset")
}

/// Closed-form initial densities `n0(s, a)` on `a > s > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "name")]
pub enum InitialDatum {
    /// `exp(-a)`
    ExpA,
    /// `2 * 1{2 > a > s + 1}`
    BoxExample2,
    /// `exp(-(a - 1)) / 2 * 1{a > max(s, 1)}`
    ShiftedExpExample3,
    /// `exp(-rate_a (a - shift))` restricted to `a_min < a < a_max` and
    /// `d_min < a - s < d_max`.
    Custom {
        rate_a: f64,
        #[serde(default)]
        shift: f64,
        #[serde(default)]
        a_min: f64,
        #[serde(default = "infinity")]
        a_max: f64,
        #[serde(default)]
        d_min: f64,
        #[serde(default = "infinity")]
        d_max: f64,
    },
}

fn infinity() -> f64 {
    f64::INFINITY
}

impl InitialDatum {
    pub fn density(&self, s: f64, a: f64) -> f64 {
        match *self {
            InitialDatum::ExpA => (-a).exp(),
            InitialDatum::BoxExample2 => {
                if a < 2.0 && a > s + 1.0 {
                    2.0
                } else {
                    0.0
                }
            }
            InitialDatum::ShiftedExpExample3 => {
                if a > s.max(1.0) {
                    0.5 * (-(a - 1.0)).exp()
                } else {
                    0.0
                }
            }
            InitialDatum::Custom {
                rate_a,
                shift,
                a_min,
                a_max,
                d_min,
                d_max,
            } => {
                let d = a - s;
                if a > a_min && a < a_max && d > d_min && d < d_max {
                    (-rate_a * (a - shift)).exp()
                } else {
                    0.0
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let InitialDatum::Custom { rate_a, a_min, a_max, d_min, d_max, .. } = *self {
            if !(rate_a >= 0.0 && a_max > a_min && d_max > d_min) {
                return Err(crate::error::Error::InvalidParameter(format!(
                    "custom initial datum needs rate_a >= 0 and non-empty ranges, got {self:?}"
                )));
            }
        }
        Ok(())
    }
}
