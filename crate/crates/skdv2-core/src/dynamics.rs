//! Assembly of the drift variants: the full second-order KdV drift, its
//! parabolic regularization, and the norm-cutoff Galerkin drift.
//!
//! Sign convention: all spatial terms are moved to the right-hand side, so a
//! path evolves as `du = drift(u) dt + noise`. The full drift is
//!
//! ```text
//!   drift(u) = -[ u_3x + u u_x + u u_3x + 3 u_x u_2x ]          (kdv2)
//!   drift(u) = kdv2(u) - ε u_4x                                  (regularized)
//! ```
//!
//! and the Galerkin variant scales each of the five regularized terms by a
//! smooth cutoff of its own squared L² norm over the Galerkin dimension `m`,
//! then projects onto the first `m` frequencies. Quadratic products are
//! dealiased (3/2-rule zero padding) throughout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Field, Spectrum};
use crate::weights::theta_unchecked;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftVariant {
    /// Drift disabled (test hook for pure-noise runs).
    None,
    Kdv2,
    Regularized,
    GalerkinCutoff,
}

/// Which drift to integrate, with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    pub variant: DriftVariant,
    pub epsilon: f64,
    /// Galerkin dimension; only read when `variant = galerkin_cutoff`.
    pub m: usize,
}

impl DriftSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.epsilon.is_finite() || self.epsilon < 0.0 {
            return Err(Error::config(format!(
                "epsilon must be finite and >= 0, got {}",
                self.epsilon
            )));
        }
        match self.variant {
            DriftVariant::None | DriftVariant::Kdv2 => {
                if self.epsilon != 0.0 {
                    return Err(Error::config(format!(
                        "variant {:?} requires epsilon = 0, got {}",
                        self.variant, self.epsilon
                    )));
                }
            }
            DriftVariant::Regularized | DriftVariant::GalerkinCutoff => {
                if self.epsilon <= 0.0 {
                    return Err(Error::config(format!(
                        "variant {:?} requires epsilon > 0",
                        self.variant
                    )));
                }
            }
        }
        if self.variant == DriftVariant::GalerkinCutoff && self.m == 0 {
            return Err(Error::config("galerkin_m must be >= 1".to_string()));
        }
        Ok(())
    }

    /// Evaluate this drift on a field.
    pub fn eval(&self, u: &Field) -> Result<Field> {
        match self.variant {
            DriftVariant::None => Ok(Field::zeros(u.grid())),
            DriftVariant::Kdv2 => drift_kdv2(u),
            DriftVariant::Regularized => drift_regularized(u, self.epsilon),
            DriftVariant::GalerkinCutoff => drift_galerkin(u, self.epsilon, self.m),
        }
    }

    /// Coefficient of `u_4x` in the implicitly handled linear part.
    pub fn stiff_epsilon(&self) -> f64 {
        match self.variant {
            DriftVariant::None => 0.0,
            _ => self.epsilon,
        }
    }

    /// Whether the linear dispersive term participates (everything except
    /// the disabled-drift hook).
    pub fn has_linear_part(&self) -> bool {
        self.variant != DriftVariant::None
    }
}

/// The three dealiased quadratic products of the drift, in coefficient space.
struct NonlinearTerms {
    u_ux: Spectrum,
    u_u3x: Spectrum,
    ux_u2x: Spectrum,
}

fn nonlinear_terms(spec: &Spectrum) -> NonlinearTerms {
    let s1 = spec.derivative(1);
    let s2 = spec.derivative(2);
    let s3 = spec.derivative(3);
    NonlinearTerms {
        u_ux: spec.dealiased_mul(&s1),
        u_u3x: spec.dealiased_mul(&s3),
        ux_u2x: s1.dealiased_mul(&s2),
    }
}

/// Full second-order KdV drift, `-[u_3x + u u_x + u u_3x + 3 u_x u_2x]`.
pub fn drift_kdv2(u: &Field) -> Result<Field> {
    u.check_finite(0.0)?;
    let spec = u.to_spectrum();
    let nl = nonlinear_terms(&spec);
    let mut out = spec.derivative(3);
    out = out.add(&nl.u_ux);
    out = out.add(&nl.u_u3x);
    out = out.add(&nl.ux_u2x.scaled(3.0));
    let f = out.scaled(-1.0).to_field();
    f.check_finite(0.0)?;
    Ok(f)
}

/// Regularized drift, `kdv2(u) - ε u_4x`. Accepts ε = 0, where it reduces to
/// the plain drift exactly (the ε > 0 requirement is enforced on
/// [`DriftSpec`], not here).
pub fn drift_regularized(u: &Field, epsilon: f64) -> Result<Field> {
    if epsilon < 0.0 {
        return Err(Error::config(format!("epsilon must be >= 0, got {epsilon}")));
    }
    u.check_finite(0.0)?;
    let spec = u.to_spectrum();
    let nl = nonlinear_terms(&spec);
    let mut out = spec.derivative(3);
    out = out.add(&nl.u_ux);
    out = out.add(&nl.u_u3x);
    out = out.add(&nl.ux_u2x.scaled(3.0));
    out = out.add(&spec.derivative(4).scaled(epsilon));
    let f = out.scaled(-1.0).to_field();
    f.check_finite(0.0)?;
    Ok(f)
}

/// How much coefficient mass beyond the projection dimension counts as "not
/// band-limited" for the Galerkin precondition.
const BAND_LIMIT_TOL: f64 = 1e-10;

/// Cutoff Galerkin drift on the span of the first `m` frequencies.
///
/// Each of the five regularized terms is scaled by the cutoff of its own
/// argument: `|u_4x|²/m` for the dissipative term, `|u_x|²/m` for `u u_x`,
/// `|u_3x|²/m` for both `u_3x` and `u u_3x`, and `|u_x u_2x|²/m` for
/// `3 u_x u_2x` (norms are squared L² norms of the printed expressions; for
/// the product term the dealiased product is the realized expression).
pub fn drift_galerkin(u: &Field, epsilon: f64, m: usize) -> Result<Field> {
    u.check_finite(0.0)?;
    let n = u.grid().n();
    if m > n / 2 {
        return Err(Error::config(format!(
            "galerkin_m = {m} exceeds n/2 = {}",
            n / 2
        )));
    }
    if u.band_limit_excess(m) > BAND_LIMIT_TOL {
        return Err(Error::config(format!(
            "field is not band-limited to m = {m} frequencies (excess {:e})",
            u.band_limit_excess(m)
        )));
    }

    let spec = u.to_spectrum();
    let nl = nonlinear_terms(&spec);
    let md = m as f64;

    let cut_4x = theta_unchecked(spec.deriv_l2_norm_sq(4) / md);
    let cut_1x = theta_unchecked(spec.deriv_l2_norm_sq(1) / md);
    let cut_3x = theta_unchecked(spec.deriv_l2_norm_sq(3) / md);
    let cut_prod = theta_unchecked(nl.ux_u2x.l2_norm_sq() / md);

    let mut out = spec.derivative(3).scaled(cut_3x);
    out = out.add(&nl.u_ux.scaled(cut_1x));
    out = out.add(&nl.u_u3x.scaled(cut_3x));
    out = out.add(&nl.ux_u2x.scaled(3.0 * cut_prod));
    out = out.add(&spec.derivative(4).scaled(epsilon * cut_4x));
    let f = out.scaled(-1.0).project(m)?.to_field();
    f.check_finite(0.0)?;
    Ok(f)
}

/// Orthogonal projection onto frequencies |k| <= m.
pub fn project(u: &Field, m: usize) -> Result<Field> {
    u.project(m)
}
