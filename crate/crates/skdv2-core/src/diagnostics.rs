//! The analysis layer: the weighted energy functional, its Itô budget, the
//! exact integration-by-parts identities behind the moment estimates, the
//! weighted trace term, martingale/quadratic-variation probes, and the
//! time-integrated Sobolev moment estimators.
//!
//! Identities are checked with both sides under independent quadrature.
//! With a periodic weight profile the boundary terms vanish exactly; with
//! the monotone arctan profile the field must be boundary-clean (see
//! [`Field::boundary_contamination`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Field, Grid};
use crate::noise::NoiseModel;
use crate::weights::{WeightFunction, WeightProfile};

/// Per-snapshot diagnostics. Serialized one record per line with the fixed
/// key order below; `l2`, `h1`, `h2`, `h1_win` and `F` are squared norms /
/// functional values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    #[serde(rename = "l2")]
    pub l2_sq: f64,
    #[serde(rename = "h1")]
    pub h1_sq: f64,
    #[serde(rename = "h2")]
    pub h2_sq: f64,
    #[serde(rename = "h1_win")]
    pub h1_window_sq: f64,
    #[serde(rename = "F")]
    pub f_value: f64,
    #[serde(rename = "ito_drift")]
    pub ito_drift_term: f64,
    #[serde(rename = "ito_trace")]
    pub ito_trace_term: f64,
    #[serde(rename = "bc")]
    pub boundary_contamination: f64,
    #[serde(rename = "blowup")]
    pub blow_up: bool,
}

/// Everything a path needs to fill in a [`DiagnosticsRecord`].
#[derive(Debug, Clone)]
pub struct DiagnosticsCtx {
    pub weight: WeightFunction,
    /// Half-width of the local-norm window `[-k, k]`.
    pub window_k: f64,
    /// Optional martingale probe.
    pub probe: Option<ProbeSpec>,
    /// Retain the full field at every snapshot (sweep couplings need it).
    pub keep_snapshot_fields: bool,
}

impl DiagnosticsCtx {
    pub fn validate(&self, grid: Grid) -> Result<()> {
        if !(self.window_k > 0.0 && self.window_k <= 0.5 * grid.length()) {
            return Err(Error::config(format!(
                "window_k must lie in (0, L/2], got {}",
                self.window_k
            )));
        }
        Ok(())
    }

    /// Build the record for state `u` with its drift already evaluated.
    pub fn record(
        &self,
        t: f64,
        u: &Field,
        drift_field: &Field,
        noise: Option<&NoiseModel>,
    ) -> Result<DiagnosticsRecord> {
        let spec = u.to_spectrum();
        let l2_sq = spec.l2_norm_sq();
        let h1_sq = l2_sq + spec.deriv_l2_norm_sq(1);
        let h2_sq = h1_sq + spec.deriv_l2_norm_sq(2);
        let k = self.window_k;
        let h1_window_sq = u.sobolev_norm_sq(1, Some((-k, k)))?;
        let f_value = functional_f(u, &self.weight);
        let ito_drift_term = f_prime_pairing(u, drift_field, &self.weight);
        let ito_trace_term = noise.map_or(0.0, |n| ito_trace(u, &self.weight, n));
        Ok(DiagnosticsRecord {
            t,
            l2_sq,
            h1_sq,
            h2_sq,
            h1_window_sq,
            f_value,
            ito_drift_term,
            ito_trace_term,
            boundary_contamination: u.boundary_contamination(),
            blow_up: false,
        })
    }
}

/// Weighted energy functional `F(u) = ∫ p u² dx`.
pub fn functional_f(u: &Field, weight: &WeightFunction) -> f64 {
    let g = u.grid();
    g.spacing()
        * g.points()
            .zip(u.values())
            .map(|(x, v)| weight.eval(x, 0) * v * v)
            .sum::<f64>()
}

/// Boundary gate for the non-periodic weight profiles.
pub fn contamination_flagged(u: &Field, weight: &WeightFunction) -> bool {
    !weight.profile().is_periodic() && u.boundary_contamination() > 1e-8
}

/// `⟨F'(u); v⟩ = 2 ∫ p u v dx`.
pub fn f_prime_pairing(u: &Field, v: &Field, weight: &WeightFunction) -> f64 {
    let g = u.grid();
    2.0 * g.spacing()
        * g.points()
            .zip(u.values())
            .zip(v.values())
            .map(|((x, uv), vv)| weight.eval(x, 0) * uv * vv)
            .sum::<f64>()
}

/// Truncated trace term `2 Σ_i ∫ p (Phi(u) e_i)² dx`.
pub fn ito_trace(u: &Field, weight: &WeightFunction, noise: &NoiseModel) -> f64 {
    noise.trace_with_weight(u, |x| weight.eval(x, 0))
}

/// Absolute residuals of the four exact weighted integration-by-parts
/// identities, both sides quadratured independently:
///
/// ```text
///  (a) ∫p u u_3x        = (3/2)∫p' u_x² - (1/2)∫p''' u²
///  (b) ∫p u² u_x        = -(1/3)∫p' u³
///  (c) ∫p u u_4x        = ∫p u_2x² - 2∫p'' u_x² + (1/2)∫p'''' u²
///  (d) ∫p u (3u_x u_2x + u u_3x)
///                        = ∫p'' u² u_x + 2∫p' u u_x² + ∫p u u_x u_2x
/// ```
pub fn ibp_identity_residuals(u: &Field, profile: &WeightProfile) -> Result<[f64; 4]> {
    u.check_finite(0.0)?;
    let g = u.grid();
    let h = g.spacing();
    let ux = u.derivative(1)?;
    let u2x = u.derivative(2)?;
    let u3x = u.derivative(3)?;
    let u4x = u.derivative(4)?;

    let p: Vec<f64> = g.points().map(|x| profile.eval(x, 0)).collect();
    let p1: Vec<f64> = g.points().map(|x| profile.eval(x, 1)).collect();
    let p2: Vec<f64> = g.points().map(|x| profile.eval(x, 2)).collect();
    let p3: Vec<f64> = g.points().map(|x| profile.eval(x, 3)).collect();
    let p4: Vec<f64> = g.points().map(|x| profile.eval(x, 4)).collect();

    let n = g.n();
    let quad = |f: &dyn Fn(usize) -> f64| -> f64 { h * (0..n).map(f).sum::<f64>() };

    let uv = u.values();
    let uxv = ux.values();
    let u2v = u2x.values();
    let u3v = u3x.values();
    let u4v = u4x.values();

    let lhs_a = quad(&|j| p[j] * uv[j] * u3v[j]);
    let rhs_a = 1.5 * quad(&|j| p1[j] * uxv[j] * uxv[j])
        - 0.5 * quad(&|j| p3[j] * uv[j] * uv[j]);

    let lhs_b = quad(&|j| p[j] * uv[j] * uv[j] * uxv[j]);
    let rhs_b = -quad(&|j| p1[j] * uv[j].powi(3)) / 3.0;

    let lhs_c = quad(&|j| p[j] * uv[j] * u4v[j]);
    let rhs_c = quad(&|j| p[j] * u2v[j] * u2v[j]) - 2.0 * quad(&|j| p2[j] * uxv[j] * uxv[j])
        + 0.5 * quad(&|j| p4[j] * uv[j] * uv[j]);

    let lhs_d = quad(&|j| p[j] * uv[j] * (3.0 * uxv[j] * u2v[j] + uv[j] * u3v[j]));
    let rhs_d = quad(&|j| p2[j] * uv[j] * uv[j] * uxv[j])
        + 2.0 * quad(&|j| p1[j] * uv[j] * uxv[j] * uxv[j])
        + quad(&|j| p[j] * uv[j] * uxv[j] * u2v[j]);

    Ok([
        (lhs_a - rhs_a).abs(),
        (lhs_b - rhs_b).abs(),
        (lhs_c - rhs_c).abs(),
        (lhs_d - rhs_d).abs(),
    ])
}

/// Residual scale `1 + |u|³_{H²}` used by the identity tolerance bands.
pub fn identity_tolerance_scale(u: &Field) -> f64 {
    let h2 = u
        .sobolev_norm_sq(2, None)
        .expect("full-domain norm cannot fail")
        .sqrt();
    1.0 + h2.powi(3)
}

// ---------------------------------------------------------------------------
// Martingale probes
// ---------------------------------------------------------------------------

/// Compactly supported smooth probe: the standard bump
/// `exp(1 - 1/(1-s²))` on `|s| < 1`, L²-normalized on the grid.
pub fn bump_probe(grid: Grid, center: f64, halfwidth: f64) -> Field {
    let raw = Field::from_fn(grid, |x| {
        let s = (x - center) / halfwidth;
        if s.abs() < 1.0 {
            (1.0 - 1.0 / (1.0 - s * s)).exp()
        } else {
            0.0
        }
    });
    let norm = raw.l2_norm_sq().sqrt();
    raw.scaled(1.0 / norm)
}

/// Probe fields and the time pair for the martingale statistics.
#[derive(Debug, Clone)]
pub struct ProbeSpec {
    pub a: Field,
    pub b: Field,
    pub s: f64,
    pub t: f64,
}

impl ProbeSpec {
    pub fn validate(&self, t_end: f64) -> Result<()> {
        if !(self.s < self.t && self.s >= 0.0 && self.t <= t_end + 1e-12) {
            return Err(Error::config(format!(
                "probe times must satisfy 0 <= s < t <= t_end, got s={}, t={}",
                self.s, self.t
            )));
        }
        Ok(())
    }
}

/// Per-snapshot probe pairings accumulated along a path.
#[derive(Debug, Clone, Default)]
pub struct ProbeTrace {
    pub times: Vec<f64>,
    /// ⟨u(t), a⟩ and ⟨u(t), b⟩.
    pub u_a: Vec<f64>,
    pub u_b: Vec<f64>,
    /// Per-step trapezoid of ⟨drift(u), a⟩ and ⟨drift(u), b⟩ up to each time.
    pub int_drift_a: Vec<f64>,
    pub int_drift_b: Vec<f64>,
    /// Running realized covariation Σ ⟨ΔM, a⟩⟨ΔM, b⟩ (off-diagonal) and
    /// Σ ⟨ΔM, a⟩² (diagonal).
    pub realized_qv_ab: Vec<f64>,
    pub realized_qv_aa: Vec<f64>,
    /// Running Itô-quadrature of the predicted rates ⟨Φ*a, Φ*b⟩, ⟨Φ*a, Φ*a⟩.
    pub predicted_qv_ab: Vec<f64>,
    pub predicted_qv_aa: Vec<f64>,
}

impl ProbeTrace {
    fn index_at(&self, time: f64) -> Result<usize> {
        self.times
            .iter()
            .position(|&x| (x - time).abs() <= 1e-9 * (1.0 + time.abs()))
            .ok_or_else(|| {
                Error::config(format!(
                    "probe time {time} is not a snapshot time; snapshots: {:?}",
                    self.times
                ))
            })
    }

    /// ⟨M(t), v⟩ reconstructed from snapshots: `⟨u(t) - u(0), v⟩ - ∫₀ᵗ⟨drift, v⟩`.
    fn martingale_pairing(&self, idx: usize, pair_u: &[f64], int_drift: &[f64]) -> f64 {
        pair_u[idx] - pair_u[0] - int_drift[idx]
    }
}

/// Per-path probe statistics at the chosen (s, t).
#[derive(Debug, Clone, Copy)]
pub struct ProbePathSample {
    pub m_a_increment: f64,
    pub qv_statistic: f64,
    pub realized_qv_aa: f64,
    pub predicted_qv_aa: f64,
    pub predicted_qv_ab: f64,
}

/// Extract the (s, t) statistics from a path's trace.
pub fn probe_path_sample(trace: &ProbeTrace, s: f64, t: f64) -> Result<ProbePathSample> {
    let is = trace.index_at(s)?;
    let it = trace.index_at(t)?;
    let m_a_t = trace.martingale_pairing(it, &trace.u_a, &trace.int_drift_a);
    let m_a_s = trace.martingale_pairing(is, &trace.u_a, &trace.int_drift_a);
    let m_b_t = trace.martingale_pairing(it, &trace.u_b, &trace.int_drift_b);
    let m_b_s = trace.martingale_pairing(is, &trace.u_b, &trace.int_drift_b);
    let predicted_ab = trace.predicted_qv_ab[it] - trace.predicted_qv_ab[is];
    Ok(ProbePathSample {
        m_a_increment: m_a_t - m_a_s,
        qv_statistic: m_a_t * m_b_t - m_a_s * m_b_s - predicted_ab,
        realized_qv_aa: trace.realized_qv_aa[it] - trace.realized_qv_aa[is],
        predicted_qv_aa: trace.predicted_qv_aa[it] - trace.predicted_qv_aa[is],
        predicted_qv_ab: predicted_ab,
    })
}

/// Ensemble-level martingale/QV report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleProbeReport {
    pub paths: usize,
    pub s: f64,
    pub t: f64,
    /// Mean and standard error of ⟨M(t) - M(s), a⟩.
    pub mean_increment: f64,
    pub mean_increment_se: f64,
    /// Mean and SE of ⟨M(t),a⟩⟨M(t),b⟩ - ⟨M(s),a⟩⟨M(s),b⟩ - ∫ₛᵗ⟨Φ*a,Φ*b⟩.
    pub qv_discrepancy: f64,
    pub qv_discrepancy_se: f64,
    /// Ensemble means of the realized and predicted diagonal QV over [s, t].
    pub realized_qv_aa: f64,
    pub predicted_qv_aa: f64,
    pub increment_within_3se: bool,
    pub qv_within_3se: bool,
}

pub fn martingale_probe(samples: &[ProbePathSample], s: f64, t: f64) -> Result<MartingaleProbeReport> {
    if samples.is_empty() {
        return Err(Error::config("martingale probe needs at least one path"));
    }
    let n = samples.len() as f64;
    let (mut mean_inc, mut mean_qv, mut mean_raa, mut mean_paa) = (0.0, 0.0, 0.0, 0.0);
    for smp in samples {
        mean_inc += smp.m_a_increment;
        mean_qv += smp.qv_statistic;
        mean_raa += smp.realized_qv_aa;
        mean_paa += smp.predicted_qv_aa;
    }
    mean_inc /= n;
    mean_qv /= n;
    mean_raa /= n;
    mean_paa /= n;
    let mut var_inc = 0.0;
    let mut var_qv = 0.0;
    for smp in samples {
        var_inc += (smp.m_a_increment - mean_inc).powi(2);
        var_qv += (smp.qv_statistic - mean_qv).powi(2);
    }
    let dof = (n - 1.0).max(1.0);
    let se_inc = (var_inc / dof / n).sqrt();
    let se_qv = (var_qv / dof / n).sqrt();

    Ok(MartingaleProbeReport {
        paths: samples.len(),
        s,
        t,
        mean_increment: mean_inc,
        mean_increment_se: se_inc,
        qv_discrepancy: mean_qv,
        qv_discrepancy_se: se_qv,
        realized_qv_aa: mean_raa,
        predicted_qv_aa: mean_paa,
        increment_within_3se: mean_inc.abs() <= 3.0 * se_inc + 1e-12,
        qv_within_3se: mean_qv.abs() <= 3.0 * se_qv + 1e-12,
    })
}

// ---------------------------------------------------------------------------
// Itô budget and moment estimators
// ---------------------------------------------------------------------------

/// Trapezoid rule over (time, value) samples.
pub fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    times
        .windows(2)
        .zip(values.windows(2))
        .map(|(tw, vw)| 0.5 * (tw[1] - tw[0]) * (vw[0] + vw[1]))
        .sum()
}

/// Per-path scalars needed by the budget check and moment estimators.
#[derive(Debug, Clone, Copy, Default)]
pub struct PathIntegrals {
    /// F(u(T)).
    pub f_final: f64,
    /// ∫₀ᵀ [⟨F'(u), drift⟩ + ½·trace] dt, trapezoid over snapshots.
    pub budget_rhs: f64,
    /// ∫₀ᵀ |u|²_{H²} dt.
    pub int_h2_sq: f64,
    /// ∫₀ᵀ |u|²_{H¹(-k,k)} dt.
    pub int_h1_window_sq: f64,
}

/// Reduce a path's record stream to its time integrals.
pub fn path_time_integrals(records: &[DiagnosticsRecord]) -> PathIntegrals {
    let times: Vec<f64> = records.iter().map(|r| r.t).collect();
    let budget_rate: Vec<f64> = records
        .iter()
        .map(|r| r.ito_drift_term + 0.5 * r.ito_trace_term)
        .collect();
    let h2: Vec<f64> = records.iter().map(|r| r.h2_sq).collect();
    let h1w: Vec<f64> = records.iter().map(|r| r.h1_window_sq).collect();
    PathIntegrals {
        f_final: records.last().map_or(0.0, |r| r.f_value),
        budget_rhs: trapezoid(&times, &budget_rate),
        int_h2_sq: trapezoid(&times, &h2),
        int_h1_window_sq: trapezoid(&times, &h1w),
    }
}

/// Minimum ensemble size before the budget check is considered powered.
const BUDGET_MIN_PATHS: usize = 1000;
/// Time-discretization allowance relative to the signal.
const BUDGET_BAND_FRACTION: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItoBudgetReport {
    pub paths: usize,
    pub f_initial: f64,
    /// E[F(u(T))] - F(u₀).
    pub signal: f64,
    /// Time-quadrature of E[⟨F'(u), drift⟩ + ½·trace].
    pub rhs_quadrature: f64,
    pub discrepancy: f64,
    pub discrepancy_se: f64,
    /// 3·SE + discretization band actually applied.
    pub tolerance: f64,
    pub underpowered: bool,
    pub pass: bool,
}

/// Compare the ensemble-mean functional increment against the drift+trace
/// quadrature. Passes when the discrepancy sits inside 3 standard errors
/// plus an O(dt) band capped at 2% of the signal.
pub fn ito_budget_check(f_initial: f64, integrals: &[PathIntegrals]) -> Result<ItoBudgetReport> {
    if integrals.is_empty() {
        return Err(Error::config("budget check needs at least one path"));
    }
    let n = integrals.len() as f64;
    let per_path: Vec<f64> = integrals
        .iter()
        .map(|p| p.f_final - f_initial - p.budget_rhs)
        .collect();
    let mean_f = integrals.iter().map(|p| p.f_final).sum::<f64>() / n;
    let mean_rhs = integrals.iter().map(|p| p.budget_rhs).sum::<f64>() / n;
    let discrepancy = per_path.iter().sum::<f64>() / n;
    let var = per_path
        .iter()
        .map(|d| (d - discrepancy).powi(2))
        .sum::<f64>()
        / (n - 1.0).max(1.0);
    let se = (var / n).sqrt();
    let signal = mean_f - f_initial;
    let band = BUDGET_BAND_FRACTION * signal.abs().max(f_initial.abs() * 1e-6);
    let tolerance = 3.0 * se + band;
    Ok(ItoBudgetReport {
        paths: integrals.len(),
        f_initial,
        signal,
        rhs_quadrature: mean_rhs,
        discrepancy,
        discrepancy_se: se,
        tolerance,
        underpowered: integrals.len() < BUDGET_MIN_PATHS,
        pass: discrepancy.abs() <= tolerance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimators {
    /// ε · E ∫₀ᵀ |u|²_{H²} dt.
    pub est_4a: f64,
    pub est_4a_se: Option<f64>,
    /// E ∫₀ᵀ |u|²_{H¹(-k,k)} dt.
    pub est_4c: f64,
    pub est_4c_se: Option<f64>,
}

/// Ensemble moment estimators from completed paths.
pub fn moment_estimators(integrals: &[PathIntegrals], epsilon: f64) -> Result<MomentEstimators> {
    if integrals.is_empty() {
        return Err(Error::config(
            "moment estimators undefined: no completed paths",
        ));
    }
    let n = integrals.len() as f64;
    let mean_h2 = integrals.iter().map(|p| p.int_h2_sq).sum::<f64>() / n;
    let mean_h1w = integrals.iter().map(|p| p.int_h1_window_sq).sum::<f64>() / n;
    let (se_h2, se_h1w) = if integrals.len() > 1 {
        let v2 = integrals
            .iter()
            .map(|p| (p.int_h2_sq - mean_h2).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        let vw = integrals
            .iter()
            .map(|p| (p.int_h1_window_sq - mean_h1w).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        (Some((v2 / n).sqrt()), Some((vw / n).sqrt()))
    } else {
        (None, None)
    };
    Ok(MomentEstimators {
        est_4a: epsilon * mean_h2,
        est_4a_se: se_h2.map(|s| epsilon * s),
        est_4c: mean_h1w,
        est_4c_se: se_h1w,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid;
    use crate::noise::{NoiseKind, NoiseModel, NoiseParams};
    use crate::weights::{make_weight, WeightProfile};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn grid(n: usize) -> Grid {
        Grid::new(n, 40.0).unwrap()
    }

    fn band_limited(g: Grid, kmax: usize, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs: Vec<(f64, f64)> = (1..=kmax)
            .map(|_| (rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4)))
            .collect();
        Field::from_fn(g, |x| {
            coeffs
                .iter()
                .enumerate()
                .map(|(i, (a, b))| {
                    let arg = 2.0 * PI * (i + 1) as f64 * x / g.length();
                    a * arg.cos() + b * arg.sin()
                })
                .sum()
        })
    }

    #[test]
    fn functional_f_closed_forms() {
        let g = grid(128);
        let w = make_weight(WeightProfile::Const { level: 1.0 }, g, 10.0).unwrap();
        let c = 1.3;
        let u = Field::constant(g, c);
        assert!((functional_f(&u, &w) - c * c * g.length()).abs() < 1e-10);
        assert_eq!(functional_f(&Field::zeros(g), &w), 0.0);
    }

    #[test]
    fn functional_f_matches_fine_grid_oracle() {
        let g = grid(128);
        let fine = Grid::new(512, 40.0).unwrap();
        let w = make_weight(
            WeightProfile::Atan {
                offset: 2.0,
                scale: 5.0,
            },
            g,
            10.0,
        )
        .unwrap();
        let wf = make_weight(
            WeightProfile::Atan {
                offset: 2.0,
                scale: 5.0,
            },
            fine,
            10.0,
        )
        .unwrap();
        let bump = |x: f64| (-(x / 4.0) * (x / 4.0)).exp();
        let coarse_val = functional_f(&Field::from_fn(g, bump), &w);
        let fine_val = functional_f(&Field::from_fn(fine, bump), &wf);
        assert!(
            (coarse_val - fine_val).abs() < 1e-8 * fine_val.abs(),
            "{coarse_val} vs {fine_val}"
        );
    }

    #[test]
    fn f_dominates_weighted_l2() {
        let g = grid(128);
        let w = make_weight(
            WeightProfile::Atan {
                offset: 2.0,
                scale: 5.0,
            },
            g,
            10.0,
        )
        .unwrap();
        for seed in 0..5 {
            let u = band_limited(g, 12, seed);
            let f = functional_f(&u, &w);
            assert!(f >= w.delta0() * u.l2_norm_sq());
        }
    }

    #[test]
    fn identities_constant_weight_reduces_to_periodic_exactness() {
        let g = grid(256);
        let profile = WeightProfile::Const { level: 1.0 };
        for seed in 0..5 {
            let u = band_limited(g, 20, seed);
            let res = ibp_identity_residuals(&u, &profile).unwrap();
            assert!(res[0] < 1e-10, "identity (a) residual {}", res[0]);
        }
    }

    #[test]
    fn identities_periodic_weight_random_fields() {
        let g = grid(256);
        let profile = WeightProfile::SinePeriodic {
            mean: 2.0,
            length: g.length(),
        };
        for seed in 0..20 {
            let u = band_limited(g, 20, seed);
            let tol = 1e-8 * identity_tolerance_scale(&u);
            let res = ibp_identity_residuals(&u, &profile).unwrap();
            for (i, r) in res.iter().enumerate() {
                assert!(r < &tol, "seed {seed} identity {i}: residual {r} > {tol}");
            }
        }
    }

    #[test]
    fn identities_zero_field_exact() {
        let g = grid(128);
        let profile = WeightProfile::Atan {
            offset: 2.0,
            scale: 5.0,
        };
        let res = ibp_identity_residuals(&Field::zeros(g), &profile).unwrap();
        assert_eq!(res, [0.0; 4]);
    }

    #[test]
    fn trace_term_zero_noise_and_additive_closed_form() {
        let g = grid(128);
        let w = make_weight(WeightProfile::Const { level: 1.0 }, g, 10.0).unwrap();
        let u = band_limited(g, 8, 1);

        let zero = NoiseModel::new(
            NoiseParams {
                kind: NoiseKind::Zero,
                sigma0: 0.0,
                decay_r: 3.0,
                modes: 8,
                clip: 1.0,
            },
            g,
            10.0,
        )
        .unwrap();
        assert_eq!(ito_trace(&u, &w, &zero), 0.0);

        let additive = NoiseModel::new(
            NoiseParams {
                kind: NoiseKind::Additive,
                sigma0: 0.4,
                decay_r: 3.0,
                modes: 12,
                clip: 1.0,
            },
            g,
            10.0,
        )
        .unwrap();
        let expect = 2.0 * additive.sum_weight_sq();
        let got = ito_trace(&u, &w, &additive);
        assert!((got - expect).abs() < 1e-12 * expect, "{got} vs {expect}");
    }

    #[test]
    fn trace_term_respects_amplitude_bound() {
        let g = grid(128);
        let w = make_weight(
            WeightProfile::Atan {
                offset: 2.0,
                scale: 5.0,
            },
            g,
            10.0,
        )
        .unwrap();
        let noise = NoiseModel::new(
            NoiseParams {
                kind: NoiseKind::DiagonalMultiplicative,
                sigma0: 0.5,
                decay_r: 3.0,
                modes: 16,
                clip: 2.0,
            },
            g,
            10.0,
        )
        .unwrap();
        let sup_p = w.sup_on_grid(g);
        for seed in 0..10 {
            let u = band_limited(g, 10, seed);
            let lhs = ito_trace(&u, &w, &noise);
            let l2 = u.l2_norm_sq();
            let rhs = 2.0 * sup_p * noise.bound_sq(l2);
            assert!(lhs <= rhs * (1.0 + 1e-9), "seed {seed}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn identity_residuals_shrink_under_refinement() {
        // A smooth field whose spectral tail is marginally resolved at
        // n=128 and fully resolved at n=256: truncation error must drop by
        // at least 10x.
        let l = 40.0;
        let profile = WeightProfile::SinePeriodic {
            mean: 2.0,
            length: l,
        };
        let w = 0.22 * l;
        let shape = move |x: f64| {
            let envelope = (-(x / w).powi(4)).exp();
            let smooth = (2.0 * PI * 3.0 * x / l).sin() + 0.5 * (2.0 * PI * 7.0 * x / l).cos();
            let hi = 0.01 * (2.0 * PI * 45.0 * x / l).cos();
            envelope * (smooth + hi)
        };
        let coarse = Field::from_fn(Grid::new(128, l).unwrap(), shape);
        let fine = Field::from_fn(Grid::new(256, l).unwrap(), shape);
        let rc = ibp_identity_residuals(&coarse, &profile).unwrap();
        let rf = ibp_identity_residuals(&fine, &profile).unwrap();
        let max_c = rc.iter().cloned().fold(0.0, f64::max);
        let max_f = rf.iter().cloned().fold(0.0, f64::max);
        assert!(
            max_c > 10.0 * max_f,
            "refinement gain too small: {max_c} -> {max_f}"
        );
    }

    #[test]
    fn bump_probe_is_normalized_and_supported() {
        let g = grid(256);
        let a = bump_probe(g, -2.0, 5.0);
        assert!((a.l2_norm_sq() - 1.0).abs() < 1e-12);
        for (x, v) in g.points().zip(a.values()) {
            if (x + 2.0).abs() >= 5.0 {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn trapezoid_matches_closed_form() {
        let times: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let vals: Vec<f64> = times.iter().map(|t| t * t).collect();
        let got = trapezoid(&times, &vals);
        assert!((got - 1.0 / 3.0).abs() < 1e-4);
    }

    #[test]
    fn record_serializes_with_fixed_schema() {
        let rec = DiagnosticsRecord {
            t: 0.5,
            l2_sq: 1.0,
            h1_sq: 2.0,
            h2_sq: 3.0,
            h1_window_sq: 0.5,
            f_value: 2.5,
            ito_drift_term: -0.25,
            ito_trace_term: 0.125,
            boundary_contamination: 1e-12,
            blow_up: false,
        };
        let line = serde_json::to_string(&rec).unwrap();
        assert_eq!(
            line,
            "{\"t\":0.5,\"l2\":1.0,\"h1\":2.0,\"h2\":3.0,\"h1_win\":0.5,\"F\":2.5,\
             \"ito_drift\":-0.25,\"ito_trace\":0.125,\"bc\":1e-12,\"blowup\":false}"
        );
        let back: DiagnosticsRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn moment_estimators_require_paths_and_report_se() {
        assert!(moment_estimators(&[], 0.1).is_err());
        let one = [PathIntegrals {
            f_final: 1.0,
            budget_rhs: 0.0,
            int_h2_sq: 4.0,
            int_h1_window_sq: 2.0,
        }];
        let est = moment_estimators(&one, 0.5).unwrap();
        assert_eq!(est.est_4a, 2.0);
        assert_eq!(est.est_4c, 2.0);
        assert!(est.est_4a_se.is_none(), "single path has no SE");
    }
}
