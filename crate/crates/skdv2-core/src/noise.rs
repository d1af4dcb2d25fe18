//! Truncated cylindrical Wiener process and the concrete Hilbert-Schmidt
//! operator family driving the stochastic term.
//!
//! The operator is diagonal in the real Fourier basis of the box: a
//! covariance square root with square-summable mode weights
//! `q_i = sigma0 * (1+i)^(-decay_r)` composed with a pointwise gain `g(u)`
//! (1 for additive noise, `clamp(u, ±clip)` for diagonal multiplicative
//! noise, 0 for the zero kind):
//!
//! ```text
//!   Phi(u) v = g(u) · Σ_i q_i ⟨v, e_i⟩ e_i,      Phi(u) dW = g(u) · Σ_i q_i e_i dβ_i
//! ```
//!
//! The Hilbert-Schmidt norm and the weighted trace term are quadratures of
//! the precomputed kernel `K(x) = Σ_i q_i² e_i(x)²`, which keeps the
//! per-step bound check O(n). Amplitude-bound constants `(kappa1, kappa2)`
//! with `‖Phi(u)‖_HS <= kappa1·max{|u|²,|u|} + kappa2` are derived in closed
//! form at construction and double-checked against a brute-force trial-set
//! certificate.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Field, Grid};
use crate::rng::{keyed_rng, DrawHash, StreamDomain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Zero,
    Additive,
    DiagonalMultiplicative,
}

/// Serializable description of the noise operator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub kind: NoiseKind,
    /// Overall amplitude of the mode weights.
    pub sigma0: f64,
    /// Mode-weight exponent; must exceed 1/2 for square-summability.
    pub decay_r: f64,
    /// Number of retained Wiener modes.
    pub modes: usize,
    /// Clipping level of the multiplicative gain.
    pub clip: f64,
}

/// Relative tail mass allowed beyond the retained modes.
const TAIL_TOLERANCE: f64 = 1e-6;
/// Margin applied to the empirical trial-set certificate.
const CERT_MARGIN: f64 = 0.1;
/// Relative slack for the per-step bound check (quadrature round-off).
const BOUND_SLACK: f64 = 1e-9;

impl NoiseParams {
    pub fn validate(&self) -> Result<()> {
        if self.kind == NoiseKind::Zero {
            return Ok(());
        }
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return Err(Error::config(format!(
                "noise.sigma0 must be positive, got {}",
                self.sigma0
            )));
        }
        if !(self.decay_r > 0.5) {
            return Err(Error::config(format!(
                "noise.decay_r must exceed 1/2 (square-summable weights), got {}",
                self.decay_r
            )));
        }
        if self.modes == 0 {
            return Err(Error::config("noise.modes must be >= 1".to_string()));
        }
        if self.kind == NoiseKind::DiagonalMultiplicative && !(self.clip > 0.0) {
            return Err(Error::config(format!(
                "noise.clip must be positive, got {}",
                self.clip
            )));
        }
        Ok(())
    }
}

/// One batch of scaled normal draws: `xi_i ~ N(0, dt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WienerIncrement {
    pub dt: f64,
    pub xi: Vec<f64>,
}

/// Per-path cursor over the Wiener stream. Holds the stream coordinates and
/// the running hash of the draws it has emitted.
#[derive(Debug, Clone)]
pub struct PathStream {
    seed: u64,
    path: u64,
    hash: DrawHash,
}

impl PathStream {
    pub fn new(seed: u64, path: u64) -> Self {
        PathStream {
            seed,
            path,
            hash: DrawHash::new(),
        }
    }

    pub fn path_index(&self) -> u64 {
        self.path
    }

    pub fn draw_hash(&self) -> DrawHash {
        self.hash
    }

    /// `modes` independent N(0, dt) draws for the given step index.
    pub fn sample_increment(&mut self, step: u64, dt: f64, modes: usize) -> Result<WienerIncrement> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::config(format!("dt must be positive, got {dt}")));
        }
        let mut rng = keyed_rng(self.seed, self.path, step, StreamDomain::Wiener);
        let scale = dt.sqrt();
        let xi: Vec<f64> = (0..modes)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                let v = scale * z;
                self.hash.update(v);
                v
            })
            .collect();
        Ok(WienerIncrement { dt, xi })
    }
}

/// Noise operator realized on a grid, with certified amplitude-bound
/// constants.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    params: NoiseParams,
    grid: Grid,
    lambda: f64,
    weights: Vec<f64>,
    basis: Vec<Field>,
    kernel: Vec<f64>,
    kappa1: f64,
    kappa2: f64,
}

impl NoiseModel {
    pub fn new(params: NoiseParams, grid: Grid, lambda: f64) -> Result<Self> {
        params.validate()?;
        if params.kind == NoiseKind::DiagonalMultiplicative && params.clip > lambda {
            return Err(Error::config(format!(
                "noise.clip ({}) must not exceed lambda ({lambda})",
                params.clip
            )));
        }
        let m = if params.kind == NoiseKind::Zero { 0 } else { params.modes };
        let weights: Vec<f64> = (0..m)
            .map(|i| params.sigma0 * (1.0 + i as f64).powf(-params.decay_r))
            .collect();
        if m > 0 {
            check_tail(&weights, params.sigma0, params.decay_r)?;
        }
        Self::assemble(params, grid, lambda, weights)
    }

    /// Test hook: bypass the `(1+i)^(-decay_r)` weight law and the tail
    /// check, keeping everything else (basis, kernel, certification).
    pub fn with_mode_weights(
        kind: NoiseKind,
        weights: Vec<f64>,
        clip: f64,
        grid: Grid,
        lambda: f64,
    ) -> Result<Self> {
        let params = NoiseParams {
            kind,
            sigma0: weights.first().copied().unwrap_or(0.0),
            decay_r: f64::INFINITY,
            modes: weights.len(),
            clip,
        };
        Self::assemble(params, grid, lambda, weights)
    }

    fn assemble(params: NoiseParams, grid: Grid, lambda: f64, weights: Vec<f64>) -> Result<Self> {
        for w in weights.windows(2) {
            if !(w[1] < w[0]) {
                return Err(Error::invariant(
                    "noise mode weights must be strictly decreasing".to_string(),
                ));
            }
        }
        if !weights.is_empty() {
            let max_freq = weights.len() / 2;
            if max_freq >= grid.n() / 2 {
                return Err(Error::config(format!(
                    "noise.modessampling frequency {max_freq} reaches the grid Nyquist {}; \
                     increase grid.n or reduce noise.modes",
                    grid.n() / 2
                )));
            }
        }

        let basis: Vec<Field> = (0..weights.len())
            .map(|i| basis_field(grid, i))
            .collect();
        let mut kernel = vec![0.0; grid.n()];
        for (q, e) in weights.iter().zip(&basis) {
            for (slot, v) in kernel.iter_mut().zip(e.values()) {
                *slot += q * q * v * v;
            }
        }

        let sum_q_sq: f64 = weights.iter().map(|q| q * q).sum();
        let (kappa1, kappa2) = match params.kind {
            NoiseKind::Zero => (0.0, 0.0),
            NoiseKind::Additive => (0.0, sum_q_sq.sqrt()),
            // |g(u)| <= |u| pointwise and sup e_i² = 2/L give the closed-form
            // supremum ‖Phi(u)‖_HS <= sqrt(2 Σq²/L) · |u|_L².
            NoiseKind::DiagonalMultiplicative => {
                ((2.0 * sum_q_sq / grid.length()).sqrt(), 0.0)
            }
        };

        let model = NoiseModel {
            params,
            grid,
            lambda,
            weights,
            basis,
            kernel,
            kappa1,
            kappa2,
        };

        // Brute-force certificate over the default trial set must stay below
        // the analytic constants.
        let trials = model.default_trial_fields(0x5eed);
        let (emp1, emp2) = model.certify_w1(&trials)?;
        if emp1 > model.kappa1 * (1.0 + 1e-12) + 1e-12 || emp2 > model.kappa2 * (1.0 + 1e-12) + 1e-12
        {
            return Err(Error::invariant(format!(
                "empirical noise-bound certificate ({emp1}, {emp2}) exceeds the analytic \
                 constants ({}, {})",
                model.kappa1, model.kappa2
            )));
        }
        Ok(model)
    }

    pub fn params(&self) -> NoiseParams {
        self.params
    }

    pub fn kind(&self) -> NoiseKind {
        self.params.kind
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn modes(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn basis_field(&self, i: usize) -> &Field {
        &self.basis[i]
    }

    pub fn kappa1(&self) -> f64 {
        self.kappa1
    }

    pub fn kappa2(&self) -> f64 {
        self.kappa2
    }

    pub fn sum_weight_sq(&self) -> f64 {
        self.weights.iter().map(|q| q * q).sum()
    }

    /// Pointwise gain `g(u)`.
    fn gain(&self, u: &Field) -> Field {
        match self.params.kind {
            NoiseKind::Zero => Field::zeros(self.grid),
            NoiseKind::Additive => Field::constant(self.grid, 1.0),
            NoiseKind::DiagonalMultiplicative => {
                let c = self.params.clip;
                u.map(|v| v.clamp(-c, c))
            }
        }
    }

    /// `Phi(u) dW`: the stochastic increment as a grid field.
    pub fn apply_phi(&self, u: &Field, dw: &WienerIncrement) -> Result<Field> {
        u.check_finite(0.0)?;
        if dw.xi.len() != self.weights.len() {
            return Err(Error::config(format!(
                "increment has {} draws, model retains {} modes",
                dw.xi.len(),
                self.weights.len()
            )));
        }
        if self.params.kind == NoiseKind::Zero {
            return Ok(Field::zeros(self.grid));
        }
        let mut synth = vec![0.0; self.grid.n()];
        for ((q, xi), e) in self.weights.iter().zip(&dw.xi).zip(&self.basis) {
            let c = q * xi;
            for (slot, v) in synth.iter_mut().zip(e.values()) {
                *slot += c * v;
            }
        }
        let synth = Field::new(self.grid, synth)?;
        Ok(self.gain(u).zip_map(&synth, |g, s| g * s))
    }

    /// Squared Hilbert-Schmidt norm `Σ_i q_i² |g(u) e_i|²_L²` via the kernel.
    pub fn hs_norm_sq(&self, u: &Field) -> f64 {
        let g = self.gain(u);
        self.grid.spacing()
            * g.values()
                .iter()
                .zip(&self.kernel)
                .map(|(gv, kv)| gv * gv * kv)
                .sum::<f64>()
    }

    /// Weighted trace term `2 Σ_i ∫ p (Phi(u) e_i)² dx`.
    pub fn trace_with_weight(&self, u: &Field, p: impl Fn(f64) -> f64) -> f64 {
        let g = self.gain(u);
        2.0 * self.grid.spacing()
            * self
                .grid
                .points()
                .zip(g.values())
                .zip(&self.kernel)
                .map(|((x, gv), kv)| p(x) * gv * gv * kv)
                .sum::<f64>()
    }

    /// `Phi(u) v` as a field (used by the continuity probe).
    pub fn phi_apply(&self, u: &Field, v: &Field) -> Field {
        let mut out = vec![0.0; self.grid.n()];
        for (q, e) in self.weights.iter().zip(&self.basis) {
            let c = q * v.inner(e);
            for (slot, ev) in out.iter_mut().zip(e.values()) {
                *slot += c * ev;
            }
        }
        let smooth = Field::new(self.grid, out).expect("finite by construction");
        self.gain(u).zip_map(&smooth, |g, s| g * s)
    }

    /// `⟨Phi(u) a, Phi(u) b⟩` (the continuity pairing of the noise operator).
    pub fn phi_pairing(&self, u: &Field, a: &Field, b: &Field) -> f64 {
        self.phi_apply(u, a).inner(&self.phi_apply(u, b))
    }

    /// Mode coefficients of the adjoint, `[Phi(u)]* a = Σ_i q_i ⟨g(u)a, e_i⟩ e_i`.
    pub fn adjoint_coeffs(&self, u: &Field, a: &Field) -> Vec<f64> {
        let ga = self.gain(u).zip_map(a, |g, av| g * av);
        self.weights
            .iter()
            .zip(&self.basis)
            .map(|(q, e)| q * ga.inner(e))
            .collect()
    }

    /// `⟨[Phi(u)]* a, [Phi(u)]* b⟩`, the instantaneous quadratic-variation
    /// rate seen by the probes a, b.
    pub fn qv_rate(&self, u: &Field, a: &Field, b: &Field) -> f64 {
        self.adjoint_coeffs(u, a)
            .iter()
            .zip(self.adjoint_coeffs(u, b))
            .map(|(ca, cb)| ca * cb)
            .sum()
    }

    /// Squared value of the certified amplitude bound at the given squared
    /// L² norm.
    pub fn bound_sq(&self, l2_sq: f64) -> f64 {
        let l2 = l2_sq.sqrt();
        let rhs = self.kappa1 * l2_sq.max(l2) + self.kappa2;
        rhs * rhs
    }

    /// Per-step assertion: fails when the Hilbert-Schmidt norm escapes the
    /// certified bound.
    pub fn assert_bound(&self, u: &Field, t: f64) -> Result<()> {
        let hs_sq = self.hs_norm_sq(u);
        let bound_sq = self.bound_sq(u.l2_norm_sq());
        if hs_sq > bound_sq * (1.0 + BOUND_SLACK) + 1e-300 {
            return Err(Error::NoiseBound { t, hs_sq, bound_sq });
        }
        Ok(())
    }

    /// Empirical amplitude-bound constants from a trial set: the smallest
    /// constants (with a 10% margin for the fitted multiplicative case) that
    /// cover every trial. The trial set must contain the zero field.
    pub fn certify_w1(&self, trials: &[Field]) -> Result<(f64, f64)> {
        if trials.is_empty() {
            return Err(Error::config("trial set must be non-empty".to_string()));
        }
        match self.params.kind {
            NoiseKind::Zero => Ok((0.0, 0.0)),
            NoiseKind::Additive => {
                // HS norm independent of u: kappa2 alone covers it exactly.
                Ok((0.0, self.sum_weight_sq().sqrt()))
            }
            NoiseKind::DiagonalMultiplicative => {
                let mut ratio = 0.0f64;
                for u in trials {
                    let l2 = u.l2_norm_sq().sqrt();
                    if l2 == 0.0 {
                        // g(0) = 0 pointwise, so the zero field needs no
                        // constant at all.
                        if self.hs_norm_sq(u) > 1e-30 {
                            return Err(Error::invariant(
                                "zero field produced nonzero noise".to_string(),
                            ));
                        }
                        continue;
                    }
                    let denom = (l2 * l2).max(l2);
                    ratio = ratio.max(self.hs_norm_sq(u).sqrt() / denom);
                }
                Ok(((1.0 + CERT_MARGIN) * ratio, 0.0))
            }
        }
    }

    /// Deterministic trial set: zero field, flats and bumps at the amplitude
    /// cap, single modes, and random smooth fields across amplitudes.
    pub fn default_trial_fields(&self, seed: u64) -> Vec<Field> {
        let g = self.grid;
        let l = g.length();
        let lambda = self.lambda;
        let mut fields = vec![
            Field::zeros(g),
            Field::constant(g, lambda),
            Field::constant(g, -lambda),
            Field::from_fn(g, |x| lambda * (-32.0 * (x / l).powi(2)).exp()),
            Field::from_fn(g, |x| {
                lambda * (2.0 * std::f64::consts::PI * x / l).sin()
            }),
        ];
        let mut rng = keyed_rng(seed, 0, 0, StreamDomain::TrialFields);
        for amp_exp in -3..=0 {
            let amp = lambda * 10.0f64.powi(amp_exp);
            for _ in 0..4 {
                let coeffs: Vec<(f64, f64)> = (0..8)
                    .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                    .collect();
                let raw = Field::from_fn(g, |x| {
                    coeffs
                        .iter()
                        .enumerate()
                        .map(|(k, (a, b))| {
                            let arg = 2.0 * std::f64::consts::PI * (k + 1) as f64 * x / l;
                            a * arg.cos() + b * arg.sin()
                        })
                        .sum()
                });
                let peak = raw.max_abs().max(1e-300);
                fields.push(raw.scaled(amp / peak));
            }
        }
        fields
    }
}

/// Real orthonormal Fourier basis of the box: index 0 is the constant mode,
/// odd indices are cosines, even indices are sines of increasing frequency.
fn basis_field(grid: Grid, i: usize) -> Field {
    let l = grid.length();
    if i == 0 {
        return Field::constant(grid, 1.0 / l.sqrt());
    }
    let freq = ((i + 1) / 2) as f64;
    let amp = (2.0 / l).sqrt();
    let w = 2.0 * std::f64::consts::PI * freq / l;
    if i % 2 == 1 {
        Field::from_fn(grid, |x| amp * (w * x).cos())
    } else {
        Field::from_fn(grid, |x| amp * (w * x).sin())
    }
}

/// Tail condition: the discarded mass of the full weight series must be
/// negligible next to the whole series.
fn check_tail(weights: &[f64], sigma0: f64, decay_r: f64) -> Result<()> {
    let retained: f64 = weights.iter().map(|q| q * q).sum();
    let full = sigma0 * sigma0 * zeta_like(2.0 * decay_r);
    let tail = (full - retained).max(0.0);
    if tail >= TAIL_TOLERANCE * full {
        return Err(Error::invariant(format!(
            "noise truncation tail {:.3e} exceeds {:.0e} of the total weight mass {:.3e}; \
             raise noise.modes or noise.decay_r",
            tail, TAIL_TOLERANCE, full
        )));
    }
    Ok(())
}

/// `Σ_{j>=1} j^(-s)` by direct summation plus an Euler-Maclaurin tail.
fn zeta_like(s: f64) -> f64 {
    let cut = 20_000u64;
    let mut sum = 0.0;
    for j in 1..=cut {
        sum += (j as f64).powf(-s);
    }
    let n = cut as f64;
    sum + n.powf(1.0 - s) / (s - 1.0) + 0.5 * n.powf(-s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Grid {
        Grid::new(128, 20.0).unwrap()
    }

    fn model(kind: NoiseKind) -> NoiseModel {
        let params = NoiseParams {
            kind,
            sigma0: 0.5,
            decay_r: 3.0,
            modes: 16,
            clip: 2.0,
        };
        NoiseModel::new(params, grid(), 10.0).unwrap()
    }

    #[test]
    fn increments_are_reproducible_and_reject_bad_dt() {
        let mut s1 = PathStream::new(42, 3);
        let mut s2 = PathStream::new(42, 3);
        let a = s1.sample_increment(17, 0.01, 8).unwrap();
        let b = s2.sample_increment(17, 0.01, 8).unwrap();
        assert_eq!(a, b);
        assert_eq!(s1.draw_hash(), s2.draw_hash());
        assert!(s1.sample_increment(0, 0.0, 8).is_err());
        assert!(s1.sample_increment(0, -1.0, 8).is_err());
    }

    #[test]
    fn increment_moments_match_n0_dt() {
        let dt = 0.01;
        let count = 100_000usize;
        let mut stream = PathStream::new(7, 0);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for step in 0..(count / 10) as u64 {
            let inc = stream.sample_increment(step, dt, 10).unwrap();
            for x in inc.xi {
                sum += x;
                sum_sq += x * x;
            }
        }
        let mean = sum / count as f64;
        let var = sum_sq / count as f64 - mean * mean;
        let sigma = dt.sqrt();
        assert!(mean.abs() < 4.0 * sigma / (count as f64).sqrt(), "mean {mean}");
        assert!((var - dt).abs() < 0.05 * dt, "var {var}");
    }

    #[test]
    fn zero_kind_returns_zero_field() {
        let m = model(NoiseKind::Zero);
        let u = Field::from_fn(grid(), |x| x.sin());
        let dw = WienerIncrement { dt: 0.1, xi: vec![] };
        let out = m.apply_phi(&u, &dw).unwrap();
        assert_eq!(out.max_abs(), 0.0);
        assert_eq!(m.hs_norm_sq(&u), 0.0);
        assert_eq!(m.certify_w1(&[u]).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn additive_single_mode_identity() {
        let m = model(NoiseKind::Additive);
        let u = Field::from_fn(grid(), |x| x.cos());
        let mut xi = vec![0.0; m.modes()];
        xi[0] = 1.0;
        let dw = WienerIncrement { dt: 1.0, xi };
        let out = m.apply_phi(&u, &dw).unwrap();
        let expect = m.basis_field(0).scaled(m.weights()[0]);
        assert!(out.sub(&expect).max_abs() < 1e-14);
    }

    #[test]
    fn multiplicative_clamp_saturates() {
        let m = model(NoiseKind::DiagonalMultiplicative);
        let clip = m.params().clip;
        let u1 = Field::constant(grid(), 2.0 * clip);
        let u2 = Field::constant(grid(), clip);
        let mut stream = PathStream::new(1, 0);
        let dw = stream.sample_increment(0, 0.1, m.modes()).unwrap();
        let a = m.apply_phi(&u1, &dw).unwrap();
        let b = m.apply_phi(&u2, &dw).unwrap();
        assert!(a.sub(&b).max_abs() < 1e-15);
    }

    #[test]
    fn hs_norm_geometric_weights_closed_form() {
        let weights: Vec<f64> = (0..20).map(|i| 0.5f64.powi(i)).collect();
        let m = NoiseModel::with_mode_weights(NoiseKind::Additive, weights, 1.0, grid(), 10.0)
            .unwrap();
        let u = Field::zeros(grid());
        let got = m.hs_norm_sq(&u);
        assert!((got - 4.0 / 3.0).abs() < 1e-6, "got {got}");
    }

    #[test]
    fn hs_norm_of_zero_field_multiplicative() {
        let m = model(NoiseKind::DiagonalMultiplicative);
        assert!(m.hs_norm_sq(&Field::zeros(grid())) < 1e-30);
    }

    #[test]
    fn additive_certificate_is_exact() {
        let m = model(NoiseKind::Additive);
        let trials = m.default_trial_fields(9);
        let (k1, k2) = m.certify_w1(&trials).unwrap();
        assert_eq!(k1, 0.0);
        assert!((k2 - m.sum_weight_sq().sqrt()).abs() < 1e-14);
        for u in &trials {
            let hs = m.hs_norm_sq(u).sqrt();
            let l2 = u.l2_norm_sq().sqrt();
            assert!(hs <= k1 * (l2 * l2).max(l2) + k2 + 1e-12);
        }
    }

    #[test]
    fn multiplicative_certificate_bounds_trials_and_stays_below_analytic() {
        let m = model(NoiseKind::DiagonalMultiplicative);
        let trials = m.default_trial_fields(11);
        let (k1, k2) = m.certify_w1(&trials).unwrap();
        assert!(k1 > 0.0);
        assert_eq!(k2, 0.0);
        assert!(k1 <= m.kappa1(), "empirical {k1} vs analytic {}", m.kappa1());
        for u in &trials {
            let hs = m.hs_norm_sq(u).sqrt();
            let l2 = u.l2_norm_sq().sqrt();
            assert!(hs <= k1 * (l2 * l2).max(l2) + k2 + 1e-12);
        }
    }

    #[test]
    fn per_step_bound_never_fires_on_runtime_scales() {
        let m = model(NoiseKind::DiagonalMultiplicative);
        for seed in 0..20 {
            for amp in [1e-6, 1e-2, 1.0, 20.0, 1e4] {
                let f = Field::from_fn(grid(), |x| {
                    amp * ((x + seed as f64).sin() + 0.3 * (2.5 * x).cos())
                });
                assert!(m.assert_bound(&f, 0.0).is_ok());
            }
        }
    }

    #[test]
    fn tail_condition_enforced() {
        let params = NoiseParams {
            kind: NoiseKind::Additive,
            sigma0: 1.0,
            decay_r: 1.0,
            modes: 16,
            clip: 1.0,
        };
        assert!(matches!(
            NoiseModel::new(params, grid(), 10.0),
            Err(Error::Invariant(_))
        ));
        let ok = NoiseParams {
            decay_r: 3.0,
            ..params
        };
        assert!(NoiseModel::new(ok, grid(), 10.0).is_ok());
    }

    #[test]
    fn weights_strictly_decreasing_and_band_limited() {
        let m = model(NoiseKind::Additive);
        for w in m.weights().windows(2) {
            assert!(w[1] < w[0]);
        }
        // Too many modes for a tiny grid trips the Nyquist check.
        let tiny = Grid::new(8, 5.0).unwrap();
        let params = NoiseParams {
            kind: NoiseKind::Additive,
            sigma0: 1.0,
            decay_r: 3.0,
            modes: 16,
            clip: 1.0,
        };
        assert!(matches!(
            NoiseModel::new(params, tiny, 10.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn path_independence_of_streams() {
        // Empirical correlation between two paths' draws is at noise level.
        let mut s0 = PathStream::new(5, 0);
        let mut s1 = PathStream::new(5, 1);
        let count = 20_000;
        let mut xs = Vec::with_capacity(count);
        let mut ys = Vec::with_capacity(count);
        for step in 0..(count / 10) as u64 {
            xs.extend(s0.sample_increment(step, 1.0, 10).unwrap().xi);
            ys.extend(s1.sample_increment(step, 1.0, 10).unwrap().xi);
        }
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let mut cov = 0.0;
        let mut vx = 0.0;
        let mut vy = 0.0;
        for (x, y) in xs.iter().zip(&ys) {
            cov += (x - mx) * (y - my);
            vx += (x - mx).powi(2);
            vy += (y - my).powi(2);
        }
        let corr = cov / (vx.sqrt() * vy.sqrt());
        assert!(corr.abs() < 4.0 / n.sqrt(), "corr {corr}");
    }

    #[test]
    fn basis_is_orthonormal_on_grid() {
        let m = model(NoiseKind::Additive);
        for i in 0..m.modes() {
            for j in i..m.modes() {
                let dot = m.basis_field(i).inner(m.basis_field(j));
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-12, "⟨e{i}, e{j}⟩ = {dot}");
            }
        }
    }

    #[test]
    fn continuity_pairing_is_lipschitz_in_local_norm() {
        let m = model(NoiseKind::DiagonalMultiplicative);
        let g = grid();
        let k = 5.0;
        let a = crate::diagnostics::bump_probe(g, -1.5, 2.5);
        let b = crate::diagnostics::bump_probe(g, 1.5, 2.5);
        let mut worst: f64 = 0.0;
        let mut rng = keyed_rng(3, 0, 0, StreamDomain::TrialFields);
        for _ in 0..20 {
            let scale: f64 = rng.gen_range(0.2..1.5);
            let base = Field::from_fn(g, |x| scale * (x * 0.7).sin());
            let amp: f64 = rng.gen_range(1e-4..0.5f64);
            let pert = crate::diagnostics::bump_probe(g, 0.0, 0.8 * k).scaled(amp);
            let v = base.add(&pert);
            let dp = (m.phi_pairing(&base, &a, &b) - m.phi_pairing(&v, &a, &b)).abs();
            let dist = pert.sobolev_norm_sq(0, Some((-k, k))).unwrap().sqrt();
            if dist > 0.0 {
                worst = worst.max(dp / dist);
            }
        }
        assert!(worst.is_finite(), "Lipschitz ratio must stay finite, got {worst}");
    }
}
