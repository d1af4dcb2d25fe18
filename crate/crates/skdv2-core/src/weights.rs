//! Weight functions with certified derivative bounds, and the smooth cutoff
//! used by the truncated Galerkin drift.
//!
//! A [`WeightFunction`] is a smooth positive weight `p` together with grid-
//! certified constants: a strict lower bound `delta0 < p`, upper bounds
//! `delta1..delta3` on the first three derivatives, and the amplitude cap
//! `lambda` tied to them through `(lambda - 2) * delta2 >= delta3`.
//! Certification evaluates `p` and its derivatives in closed form on an 8x
//! refinement of the grid and applies a 10% safety margin to the observed
//! extrema.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Grid;

/// Closed-form weight profiles. Every profile knows its first four
/// derivatives exactly; the quadrature identities in `diagnostics` need up to
/// the fourth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WeightProfile {
    /// `p ≡ level`.
    Const { level: f64 },
    /// `p(x) = offset + arctan(x / scale)` — smooth, bounded, strictly
    /// increasing, with closed-form derivative extrema. Needs
    /// `offset > π/2` for positivity.
    Atan { offset: f64, scale: f64 },
    /// `p(x) = mean + sin(2πx / length)` — periodic test profile, not
    /// monotone; used for integration-by-parts identities where boundary
    /// terms must vanish exactly.
    SinePeriodic { mean: f64, length: f64 },
}

impl WeightProfile {
    /// Value of the `order`-th derivative (order 0 is `p` itself).
    pub fn eval(&self, x: f64, order: u32) -> f64 {
        match *self {
            WeightProfile::Const { level } => {
                if order == 0 {
                    level
                } else {
                    0.0
                }
            }
            WeightProfile::Atan { offset, scale } => {
                let s = x / scale;
                let d = 1.0 + s * s;
                match order {
                    0 => offset + s.atan(),
                    1 => 1.0 / (scale * d),
                    2 => -2.0 * s / (scale.powi(2) * d.powi(2)),
                    3 => 2.0 * (3.0 * s * s - 1.0) / (scale.powi(3) * d.powi(3)),
                    4 => 24.0 * s * (1.0 - s * s) / (scale.powi(4) * d.powi(4)),
                    _ => unreachable!("weight derivatives beyond 4 are never used"),
                }
            }
            WeightProfile::SinePeriodic { mean, length } => {
                let w = 2.0 * std::f64::consts::PI / length;
                let arg = w * x;
                match order {
                    0 => mean + arg.sin(),
                    1 => w * arg.cos(),
                    2 => -w.powi(2) * arg.sin(),
                    3 => -w.powi(3) * arg.cos(),
                    4 => w.powi(4) * arg.sin(),
                    _ => unreachable!("weight derivatives beyond 4 are never used"),
                }
            }
        }
    }

    /// True when the profile is periodic with the box period, in which case
    /// boundary terms in integration by parts vanish without any decay
    /// requirement on the field.
    pub fn is_periodic(&self) -> bool {
        matches!(
            self,
            WeightProfile::Const { .. } | WeightProfile::SinePeriodic { .. }
        )
    }
}

/// A weight profile with numerically certified bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightFunction {
    profile: WeightProfile,
    delta0: f64,
    delta1: f64,
    delta2: f64,
    delta3: f64,
    lambda_cap: f64,
}

/// Grid refinement factor used during certification.
const CERT_REFINE: usize = 8;
/// Safety margin applied to observed extrema.
const CERT_MARGIN: f64 = 0.1;

/// Build a certified weight function on the given grid.
///
/// Fails when `lambda_cap <= 2` (the derivative-bound coupling is then
/// unsatisfiable with positive bounds), when the profile is not positive or
/// not nondecreasing on the refined grid, or when the certified bounds do
/// not satisfy `(lambda - 2) * delta2 >= delta3`.
pub fn make_weight(profile: WeightProfile, grid: Grid, lambda_cap: f64) -> Result<WeightFunction> {
    if !(lambda_cap > 2.0) {
        return Err(Error::invariant(format!(
            "lambda must exceed 2 (got {lambda_cap}); the bound coupling (lambda-2)*delta2 >= delta3 \
             is unsatisfiable otherwise"
        )));
    }

    let samples = grid.n() * CERT_REFINE;
    let h = grid.length() / samples as f64;
    let xs: Vec<f64> = (0..samples)
        .map(|j| -0.5 * grid.length() + j as f64 * h)
        .collect();

    let mut min_p = f64::INFINITY;
    let mut max_d = [0.0f64; 3];
    let mut prev = f64::NEG_INFINITY;
    for &x in &xs {
        let p = profile.eval(x, 0);
        min_p = min_p.min(p);
        if p < prev {
            return Err(Error::invariant(format!(
                "weight profile {profile:?} is not nondecreasing on the grid (drop at x={x})"
            )));
        }
        prev = p;
        for (i, slot) in max_d.iter_mut().enumerate() {
            *slot = slot.max(profile.eval(x, i as u32 + 1).abs());
        }
    }
    if !(min_p > 0.0) {
        return Err(Error::invariant(format!(
            "weight profile {profile:?} is not strictly positive on the grid (min {min_p})"
        )));
    }

    let delta0 = (1.0 - CERT_MARGIN) * min_p;
    let delta1 = (1.0 + CERT_MARGIN) * max_d[0];
    let delta2 = (1.0 + CERT_MARGIN) * max_d[1];
    let delta3 = (1.0 + CERT_MARGIN) * max_d[2];

    if (lambda_cap - 2.0) * delta2 < delta3 {
        return Err(Error::invariant(format!(
            "(lambda-2)*delta2 = {} < delta3 = {}; increase lambda or flatten the weight",
            (lambda_cap - 2.0) * delta2,
            delta3
        )));
    }

    Ok(WeightFunction {
        profile,
        delta0,
        delta1,
        delta2,
        delta3,
        lambda_cap,
    })
}

impl WeightFunction {
    pub fn profile(&self) -> WeightProfile {
        self.profile
    }

    pub fn eval(&self, x: f64, order: u32) -> f64 {
        self.profile.eval(x, order)
    }

    pub fn delta0(&self) -> f64 {
        self.delta0
    }

    pub fn delta1(&self) -> f64 {
        self.delta1
    }

    pub fn delta2(&self) -> f64 {
        self.delta2
    }

    pub fn delta3(&self) -> f64 {
        self.delta3
    }

    pub fn lambda_cap(&self) -> f64 {
        self.lambda_cap
    }

    /// Maximum of `p` over the grid (used for trace-term bounds).
    pub fn sup_on_grid(&self, grid: Grid) -> f64 {
        grid.points()
            .map(|x| self.profile.eval(x, 0))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Smooth cutoff: exactly 1 on `[0,1]`, exactly 0 on `[2,∞)`, and a C^∞
/// monotone bridge in between built from `exp(-1/s)` bump factors.
pub fn theta(xi: f64) -> Result<f64> {
    if xi < 0.0 {
        return Err(Error::config(format!("theta argument must be >= 0, got {xi}")));
    }
    Ok(theta_unchecked(xi))
}

pub(crate) fn theta_unchecked(xi: f64) -> f64 {
    if xi <= 1.0 {
        1.0
    } else if xi >= 2.0 {
        0.0
    } else {
        1.0 - smoothstep(xi - 1.0)
    }
}

/// C^∞ monotone step 0 -> 1 on [0,1]: ψ(s) / (ψ(s) + ψ(1-s)), ψ(s)=e^{-1/s}.
fn smoothstep(s: f64) -> f64 {
    let a = bump_side(s);
    let b = bump_side(1.0 - s);
    a / (a + b)
}

fn bump_side(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else {
        (-1.0 / s).exp()
    }
}
