//! Time stepping for the stochastic systems.
//!
//! The default scheme is a semi-implicit Euler-Maruyama: the stiff linear
//! operators (third derivative and the fourth-derivative dissipation) are
//! inverted per Fourier mode, nonlinear terms and the noise evaluated at the
//! left endpoint (Itô convention):
//!
//! ```text
//!   û⁺_k = [ û_k + dt·(D̂_k - λ_k û_k) + Ŵ_k ] / (1 - dt λ_k),
//!   λ_k  = i κ³ - ε κ⁴,   κ = 2πk/L,
//! ```
//!
//! where `D` is the full drift of the configured variant. The denominator
//! has modulus at least 1 for every dt and k, so the linear update never
//! amplifies a mode. A fully explicit Euler-Maruyama and a deterministic
//! classical Runge-Kutta stepper are kept for cross-checks and oracle runs.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{DiagnosticsCtx, DiagnosticsRecord, ProbeTrace};
use crate::dynamics::DriftSpec;
use crate::error::{Error, Result};
use crate::field::{Field, Grid};
use crate::noise::{NoiseKind, NoiseModel, PathStream, WienerIncrement};
use crate::rng::DrawHash;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    ImexEm,
    ExplicitEm,
    DeterministicRk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepperConfig {
    pub dt: f64,
    pub t_end: f64,
    pub scheme: Scheme,
    /// Steps between diagnostics records.
    pub snapshot_every: usize,
}

/// Sanity cap on the number of steps.
const MAX_STEPS: f64 = 1e8;
/// Blow-up ceiling: a path dies when |u|_∞ exceeds this multiple of lambda.
const BLOW_UP_FACTOR: f64 = 10.0;

impl StepperConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::config(format!(
                "t_end must be >= 0, got {}",
                self.t_end
            )));
        }
        if self.t_end > 0.0 {
            if self.dt > self.t_end * (1.0 + 1e-12) {
                return Err(Error::config(format!(
                    "dt = {} exceeds t_end = {}",
                    self.dt, self.t_end
                )));
            }
            let steps = (self.t_end / self.dt).round();
            if steps > MAX_STEPS {
                return Err(Error::config(format!(
                    "t_end/dt = {steps} exceeds the sanity cap {MAX_STEPS:e}"
                )));
            }
            if (steps * self.dt - self.t_end).abs() > 1e-9 * self.t_end.max(1.0) {
                return Err(Error::config(format!(
                    "t_end = {} is not an integer multiple of dt = {}",
                    self.t_end, self.dt
                )));
            }
        }
        if self.snapshot_every == 0 {
            return Err(Error::config("snapshot_every must be >= 1".to_string()));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> u64 {
        if self.t_end == 0.0 {
            0
        } else {
            (self.t_end / self.dt).round() as u64
        }
    }
}

/// State of one path.
#[derive(Debug, Clone)]
pub struct PathState {
    pub t: f64,
    pub step: u64,
    pub u: Field,
}

/// Symbol of the implicitly treated linear part `-u_3x - ε u_4x` at storage
/// index `i`. The dispersive part is dropped at the Nyquist mode, matching
/// the derivative convention.
pub fn linear_symbol(grid: Grid, i: usize, epsilon: f64) -> Complex64 {
    let k = grid.wavenumber(i);
    let dispersive = if i == grid.n() / 2 { 0.0 } else { k.powi(3) };
    Complex64::new(-epsilon * k.powi(4), dispersive)
}

/// Outcome of a single step: the new state plus the stochastic increment the
/// scheme actually applied (after any implicit division).
pub struct StepOutcome {
    pub state: PathState,
    pub effective_noise: Field,
}

/// Advance one step. `drift_field` must be the drift evaluated at
/// `state.u`; `dw` carries the Wiener draws (`None` only for zero-kind noise
/// or the deterministic scheme).
pub fn step(
    state: &PathState,
    drift_field: &Field,
    drift: &DriftSpec,
    noise: &NoiseModel,
    dw: Option<&WienerIncrement>,
    cfg: &StepperConfig,
    lambda: f64,
) -> Result<StepOutcome> {
    let dt = cfg.dt;
    let grid = state.u.grid();
    let t_next = state.t + dt;

    let noise_raw = match (noise.kind(), dw) {
        (NoiseKind::Zero, _) => Field::zeros(grid),
        (_, Some(dw)) => {
            let mut f = noise.apply_phi(&state.u, dw)?;
            if drift.variant == crate::dynamics::DriftVariant::GalerkinCutoff {
                f = f.project(drift.m)?;
            }
            f
        }
        (_, None) => {
            return Err(Error::config(
                "non-zero noise requires a Wiener increment".to_string(),
            ))
        }
    };

    let (u_next, effective_noise) = match cfg.scheme {
        Scheme::ExplicitEm => {
            let u = state.u.axpy(dt, drift_field).add(&noise_raw);
            (u, noise_raw)
        }
        Scheme::DeterministicRk4 => {
            if noise.kind() != NoiseKind::Zero {
                return Err(Error::config(
                    "deterministic_rk4 requires noise.kind = zero".to_string(),
                ));
            }
            let k1 = drift_field;
            let k2 = drift.eval(&state.u.axpy(0.5 * dt, k1))?;
            let k3 = drift.eval(&state.u.axpy(0.5 * dt, &k2))?;
            let k4 = drift.eval(&state.u.axpy(dt, &k3))?;
            let incr = k1
                .add(&k2.scaled(2.0))
                .add(&k3.scaled(2.0))
                .add(&k4);
            (state.u.axpy(dt / 6.0, &incr), Field::zeros(grid))
        }
        Scheme::ImexEm => {
            let eps = drift.stiff_epsilon();
            let u_hat = state.u.to_spectrum();
            let d_hat = drift_field.to_spectrum();
            let w_hat = noise_raw.to_spectrum();
            let n = grid.n();
            let mut out = Vec::with_capacity(n);
            let mut eff = Vec::with_capacity(n);
            for i in 0..n {
                let lam = if drift.has_linear_part() {
                    linear_symbol(grid, i, eps)
                } else {
                    Complex64::new(0.0, 0.0)
                };
                let denom = Complex64::new(1.0, 0.0) - lam * dt;
                let num = u_hat.coeffs()[i]
                    + (d_hat.coeffs()[i] - lam * u_hat.coeffs()[i]) * dt
                    + w_hat.coeffs()[i];
                out.push(num / denom);
                eff.push(w_hat.coeffs()[i] / denom);
            }
            let u = u_hat.with_coeffs(out).to_field();
            let e = u_hat.with_coeffs(eff).to_field();
            (u, e)
        }
    };

    if !u_next.is_finite() {
        return Err(Error::BlowUp {
            t: t_next,
            detail: "non-finite field value".into(),
        });
    }
    let peak = u_next.max_abs();
    if peak > BLOW_UP_FACTOR * lambda {
        return Err(Error::BlowUp {
            t: t_next,
            detail: format!("|u|_inf = {peak:.3e} exceeds {BLOW_UP_FACTOR} * lambda"),
        });
    }

    Ok(StepOutcome {
        state: PathState {
            t: t_next,
            step: state.step + 1,
            u: u_next,
        },
        effective_noise,
    })
}

/// Source of Wiener increments for a path. The counter-keyed [`PathStream`]
/// is the production implementation; tests supply prescribed increments for
/// coupled-refinement studies.
pub trait NoiseSource {
    fn increment(&mut self, step: u64, dt: f64, modes: usize) -> Result<WienerIncrement>;
    fn draw_hash(&self) -> DrawHash;
}

impl NoiseSource for PathStream {
    fn increment(&mut self, step: u64, dt: f64, modes: usize) -> Result<WienerIncrement> {
        self.sample_increment(step, dt, modes)
    }

    fn draw_hash(&self) -> DrawHash {
        PathStream::draw_hash(self)
    }
}

/// Fixed table of increments (used to couple runs across dt refinements).
pub struct PrescribedIncrements {
    pub dt: f64,
    pub increments: Vec<Vec<f64>>,
}

impl PrescribedIncrements {
    /// Aggregate fine-step increments into coarse steps of `factor` fine
    /// steps each, preserving the underlying Brownian path.
    pub fn aggregate(&self, factor: usize) -> PrescribedIncrements {
        let coarse: Vec<Vec<f64>> = self
            .increments
            .chunks(factor)
            .map(|chunk| {
                let modes = chunk[0].len();
                (0..modes)
                    .map(|i| chunk.iter().map(|xs| xs[i]).sum())
                    .collect()
            })
            .collect();
        PrescribedIncrements {
            dt: self.dt * factor as f64,
            increments: coarse,
        }
    }
}

impl NoiseSource for PrescribedIncrements {
    fn increment(&mut self, step: u64, dt: f64, _modes: usize) -> Result<WienerIncrement> {
        if (dt - self.dt).abs() > 1e-12 * self.dt {
            return Err(Error::config(format!(
                "prescribed increments built for dt = {}, asked for {dt}",
                self.dt
            )));
        }
        Ok(WienerIncrement {
            dt,
            xi: self.increments[step as usize].clone(),
        })
    }

    fn draw_hash(&self) -> DrawHash {
        DrawHash::new()
    }
}

/// A completed (or aborted) path.
#[derive(Debug, Clone)]
pub struct PathRun {
    pub records: Vec<DiagnosticsRecord>,
    pub probe: Option<ProbeTrace>,
    /// Full snapshot fields, present when the diagnostics context asks for
    /// them.
    pub snapshots: Option<Vec<Field>>,
    pub final_state: PathState,
    /// Blow-up or noise-bound failure; configuration errors surface as `Err`
    /// from `run_path` instead.
    pub failure: Option<Error>,
    pub draw_hash: DrawHash,
}

impl PathRun {
    pub fn blew_up(&self) -> bool {
        self.failure.is_some()
    }
}

/// Run one path from `u0`, emitting a record every `snapshot_every` steps
/// (plus the initial and final states). On blow-up the partial record list
/// is returned with the last record flagged.
pub fn run_path(
    u0: &Field,
    drift: &DriftSpec,
    noise: &NoiseModel,
    cfg: &StepperConfig,
    diag: &DiagnosticsCtx,
    lambda: f64,
    source: &mut dyn NoiseSource,
) -> Result<PathRun> {
    drift.validate()?;
    cfg.validate()?;
    diag.validate(u0.grid())?;
    u0.check_finite(0.0)?;
    if drift.variant == crate::dynamics::DriftVariant::GalerkinCutoff
        && u0.band_limit_excess(drift.m) > 1e-10
    {
        return Err(Error::config(format!(
            "initial condition is not band-limited to galerkin_m = {}",
            drift.m
        )));
    }
    if cfg.scheme == Scheme::DeterministicRk4 && noise.kind() != NoiseKind::Zero {
        return Err(Error::config(
            "deterministic_rk4 requires noise.kind = zero".to_string(),
        ));
    }
    if let Some(p) = &diag.probe {
        p.validate(cfg.t_end)?;
    }

    let noise_opt = if noise.kind() == NoiseKind::Zero {
        None
    } else {
        Some(noise)
    };

    let mut state = PathState {
        t: 0.0,
        step: 0,
        u: u0.clone(),
    };
    let mut drift_field = drift.eval(&state.u)?;

    let mut records = vec![diag.record(0.0, &state.u, &drift_field, noise_opt)?];
    let mut probe_acc = diag
        .probe
        .as_ref()
        .map(|spec| ProbeAccumulator::new(spec, &state.u, 0.0));
    let mut snapshots = diag.keep_snapshot_fields.then(|| vec![state.u.clone()]);
    let mut failure = None;

    let n_steps = cfg.n_steps();
    for s in 0..n_steps {
        if let Some(n) = noise_opt {
            if let Err(e) = n.assert_bound(&state.u, state.t) {
                failure = Some(e);
                break;
            }
        }
        let dw = match noise_opt {
            Some(n) => Some(source.increment(s, cfg.dt, n.modes())?),
            None => None,
        };

        let outcome = match step(&state, &drift_field, drift, noise, dw.as_ref(), cfg, lambda) {
            Ok(o) => o,
            Err(e @ Error::BlowUp { .. }) => {
                failure = Some(e);
                break;
            }
            Err(e) => return Err(e),
        };
        let drift_next = match drift.eval(&outcome.state.u) {
            Ok(d) => d,
            Err(Error::BlowUp { detail, .. }) => {
                failure = Some(Error::BlowUp {
                    t: outcome.state.t,
                    detail,
                });
                break;
            }
            Err(e) => return Err(e),
        };

        if let Some(acc) = probe_acc.as_mut() {
            acc.accumulate_step(
                cfg.dt,
                &state.u,
                &drift_field,
                &drift_next,
                &outcome.effective_noise,
                noise,
            );
        }

        state = outcome.state;
        drift_field = drift_next;

        let is_snapshot = (s + 1) % cfg.snapshot_every as u64 == 0 || s + 1 == n_steps;
        if is_snapshot {
            records.push(diag.record(state.t, &state.u, &drift_field, noise_opt)?);
            if let Some(acc) = probe_acc.as_mut() {
                acc.snapshot(state.t, &state.u);
            }
            if let Some(fields) = snapshots.as_mut() {
                fields.push(state.u.clone());
            }
        }
    }

    if failure.is_some() {
        let t_fail = match &failure {
            Some(Error::BlowUp { t, .. }) | Some(Error::NoiseBound { t, .. }) => *t,
            _ => state.t,
        };
        // The flagged record carries the last finite diagnostics.
        let mut last = records.last().cloned().expect("initial record always present");
        last.t = t_fail;
        last.blow_up = true;
        records.push(last);
    }

    Ok(PathRun {
        records,
        probe: probe_acc.map(|acc| acc.trace),
        snapshots,
        final_state: state,
        failure,
        draw_hash: source.draw_hash(),
    })
}

/// Per-step probe bookkeeping: trapezoid of the drift pairings, realized and
/// predicted quadratic variation, sampled into the trace at snapshots.
struct ProbeAccumulator {
    a: Field,
    b: Field,
    int_drift_a: f64,
    int_drift_b: f64,
    realized_ab: f64,
    realized_aa: f64,
    predicted_ab: f64,
    predicted_aa: f64,
    trace: ProbeTrace,
}

impl ProbeAccumulator {
    fn new(spec: &crate::diagnostics::ProbeSpec, u0: &Field, t0: f64) -> Self {
        let mut acc = ProbeAccumulator {
            a: spec.a.clone(),
            b: spec.b.clone(),
            int_drift_a: 0.0,
            int_drift_b: 0.0,
            realized_ab: 0.0,
            realized_aa: 0.0,
            predicted_ab: 0.0,
            predicted_aa: 0.0,
            trace: ProbeTrace::default(),
        };
        acc.snapshot(t0, u0);
        acc
    }

    fn accumulate_step(
        &mut self,
        dt: f64,
        u_before: &Field,
        drift_before: &Field,
        drift_after: &Field,
        effective_noise: &Field,
        noise: &NoiseModel,
    ) {
        self.int_drift_a +=
            0.5 * dt * (drift_before.inner(&self.a) + drift_after.inner(&self.a));
        self.int_drift_b +=
            0.5 * dt * (drift_before.inner(&self.b) + drift_after.inner(&self.b));
        let na = effective_noise.inner(&self.a);
        let nb = effective_noise.inner(&self.b);
        self.realized_ab += na * nb;
        self.realized_aa += na * na;
        if noise.kind() != NoiseKind::Zero {
            self.predicted_ab += dt * noise.qv_rate(u_before, &self.a, &self.b);
            self.predicted_aa += dt * noise.qv_rate(u_before, &self.a, &self.a);
        }
    }

    fn snapshot(&mut self, t: f64, u: &Field) {
        self.trace.times.push(t);
        self.trace.u_a.push(u.inner(&self.a));
        self.trace.u_b.push(u.inner(&self.b));
        self.trace.int_drift_a.push(self.int_drift_a);
        self.trace.int_drift_b.push(self.int_drift_b);
        self.trace.realized_qv_ab.push(self.realized_ab);
        self.trace.realized_qv_aa.push(self.realized_aa);
        self.trace.predicted_qv_ab.push(self.predicted_ab);
        self.trace.predicted_qv_aa.push(self.predicted_aa);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::DriftVariant;
    use crate::noise::NoiseParams;
    use crate::weights::{make_weight, WeightProfile};
    use std::f64::consts::PI;

    fn grid(n: usize, l: f64) -> Grid {
        Grid::new(n, l).unwrap()
    }

    fn zero_noise(g: Grid) -> NoiseModel {
        NoiseModel::new(
            NoiseParams {
                kind: NoiseKind::Zero,
                sigma0: 0.0,
                decay_r: 3.0,
                modes: 1,
                clip: 1.0,
            },
            g,
            10.0,
        )
        .unwrap()
    }

    fn diag_ctx(g: Grid) -> DiagnosticsCtx {
        DiagnosticsCtx {
            weight: make_weight(WeightProfile::Const { level: 1.0 }, g, 10.0).unwrap(),
            window_k: 0.25 * g.length(),
            probe: None,
            keep_snapshot_fields: false,
        }
    }

    #[test]
    fn stepper_config_validation() {
        let ok = StepperConfig {
            dt: 1e-3,
            t_end: 1.0,
            scheme: Scheme::ImexEm,
            snapshot_every: 10,
        };
        assert!(ok.validate().is_ok());
        assert_eq!(ok.n_steps(), 1000);

        for bad in [
            StepperConfig { dt: 0.0, ..ok },
            StepperConfig { dt: 2.0, ..ok },
            StepperConfig {
                t_end: 0.0015,
                ..ok
            },
            StepperConfig {
                snapshot_every: 0,
                ..ok
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?} should fail");
        }
        // t_end = 0 single-record edge case is allowed.
        assert!(StepperConfig { t_end: 0.0, ..ok }.validate().is_ok());
    }

    #[test]
    fn imex_linear_factor_never_amplifies() {
        let g = grid(128, 10.0);
        for eps in [0.0, 1e-3, 0.1, 1.0] {
            for dt in [1e-6, 1e-3, 1.0, 100.0] {
                for i in 0..g.n() {
                    let denom = Complex64::new(1.0, 0.0) - linear_symbol(g, i, eps) * dt;
                    assert!(
                        denom.norm() >= 1.0 - 1e-14,
                        "mode {i}, dt {dt}, eps {eps}: |denom| = {}",
                        denom.norm()
                    );
                }
            }
        }
    }

    #[test]
    fn zero_t_end_yields_single_record() {
        let g = grid(64, 10.0);
        let u0 = Field::from_fn(g, |x| (2.0 * PI * x / 10.0).sin());
        let cfg = StepperConfig {
            dt: 1e-3,
            t_end: 0.0,
            scheme: Scheme::ImexEm,
            snapshot_every: 1,
        };
        let drift = DriftSpec {
            variant: DriftVariant::Kdv2,
            epsilon: 0.0,
            m: 0,
        };
        let noise = zero_noise(g);
        let mut stream = PathStream::new(1, 0);
        let run = run_path(&u0, &drift, &noise, &cfg, &diag_ctx(g), 10.0, &mut stream).unwrap();
        assert_eq!(run.records.len(), 1);
        assert_eq!(run.records[0].t, 0.0);
        assert_eq!(run.final_state.u.values(), u0.values());
    }

    #[test]
    fn deterministic_runs_conserve_mass() {
        let g = grid(128, 20.0);
        let u0 = Field::from_fn(g, |x| 0.4 * (-(x * x) / 8.0).exp());
        let mass0 = u0.integrate();
        let cfg = StepperConfig {
            dt: 5e-4,
            t_end: 0.5,
            scheme: Scheme::ImexEm,
            snapshot_every: 100,
        };
        let drift = DriftSpec {
            variant: DriftVariant::Kdv2,
            epsilon: 0.0,
            m: 0,
        };
        let noise = zero_noise(g);
        let mut stream = PathStream::new(3, 0);
        let run = run_path(&u0, &drift, &noise, &cfg, &diag_ctx(g), 10.0, &mut stream).unwrap();
        assert!(run.failure.is_none());
        let mass_t = run.final_state.u.integrate();
        assert!(
            (mass_t - mass0).abs() < 1e-8 * mass0.abs(),
            "mass drifted {mass0} -> {mass_t}"
        );
    }

    #[test]
    fn same_seed_same_config_bitwise_identical() {
        let g = grid(64, 15.0);
        let u0 = Field::from_fn(g, |x| 0.2 * (2.0 * PI * x / 15.0).cos());
        let cfg = StepperConfig {
            dt: 1e-3,
            t_end: 0.05,
            scheme: Scheme::ImexEm,
            snapshot_every: 10,
        };
        let drift = DriftSpec {
            variant: DriftVariant::Regularized,
            epsilon: 0.01,
            m: 0,
        };
        let noise = NoiseModel::new(
            NoiseParams {
                kind: NoiseKind::Additive,
                sigma0: 0.1,
                decay_r: 4.0,
                modes: 8,
                clip: 1.0,
            },
            g,
            10.0,
        )
        .unwrap();
        let run = |seed| {
            let mut stream = PathStream::new(seed, 0);
            run_path(&u0, &drift, &noise, &cfg, &diag_ctx(g), 10.0, &mut stream).unwrap()
        };
        let r1 = run(7);
        let r2 = run(7);
        assert_eq!(r1.records, r2.records);
        assert_eq!(r1.final_state.u.values(), r2.final_state.u.values());
        assert_eq!(r1.draw_hash, r2.draw_hash);
        let r3 = run(8);
        assert_ne!(r1.final_state.u.values(), r3.final_state.u.values());
    }

    #[test]
    fn airy_phase_advance_matches_dispersion() {
        // Tiny single mode under the full drift: nonlinearity is O(amp²)
        // and the dynamics are the linear dispersive flow. Classical RK4 at
        // this dt resolves it to round-off. The grid is coarse so that the
        // stiffest mode respects the RK4 dispersive stability bound
        // |kappa_max³ dt| < 2.8.
        let l = 2.0 * PI;
        let g = grid(16, l);
        let amp = 1e-6;
        let k = 2i64;
        let u0 = Field::from_fn(g, |x| amp * (k as f64 * x).cos());
        let cfg = StepperConfig {
            dt: 1e-3,
            t_end: 1.0,
            scheme: Scheme::DeterministicRk4,
            snapshot_every: 1000,
        };
        let drift = DriftSpec {
            variant: DriftVariant::Kdv2,
            epsilon: 0.0,
            m: 0,
        };
        let noise = zero_noise(g);
        let mut stream = PathStream::new(5, 0);
        let run = run_path(&u0, &drift, &noise, &cfg, &diag_ctx(g), 10.0, &mut stream).unwrap();

        // u_t = -u_3x on mode k: û(t) = û(0) e^{i k³ t} (κ = k here, L = 2π).
        let spec0 = u0.to_spectrum();
        let spec_t = run.final_state.u.to_spectrum();
        let c0 = spec0.coeff(k);
        let ct = spec_t.coeff(k);
        let expected_phase = (k as f64).powi(3) * cfg.t_end;
        let rot = ct / c0;
        let phase_err = (rot.arg() - expected_phase).rem_euclid(2.0 * PI);
        let phase_err = phase_err.min(2.0 * PI - phase_err);
        assert!(phase_err < 1e-6, "phase error {phase_err}");
        assert!(
            (rot.norm() - 1.0).abs() < 1e-8,
            "amplitude drifted by {}",
            (rot.norm() - 1.0).abs()
        );
    }

    #[test]
    fn rk4_with_noise_is_config_error() {
        let g = grid(64, 10.0);
        let u0 = Field::zeros(g);
        let cfg = StepperConfig {
            dt: 1e-2,
            t_end: 0.1,
            scheme: Scheme::DeterministicRk4,
            snapshot_every: 1,
        };
        let drift = DriftSpec {
            variant: DriftVariant::Kdv2,
            epsilon: 0.0,
            m: 0,
        };
        let noise = NoiseModel::new(
            NoiseParams {
                kind: NoiseKind::Additive,
                sigma0: 0.1,
                decay_r: 4.0,
                modes: 8,
                clip: 1.0,
            },
            g,
            10.0,
        )
        .unwrap();
        let mut stream = PathStream::new(1, 0);
        assert!(matches!(
            run_path(&u0, &drift, &noise, &cfg, &diag_ctx(g), 10.0, &mut stream),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn blow_up_aborts_with_flagged_partial_records() {
        // Explicit Euler on a stiff dispersive problem with a huge dt blows
        // up quickly; the run must return flagged partial records rather
        // than an error.
        let g = grid(64, 5.0);
        let u0 = Field::from_fn(g, |x| (2.0 * PI * x / 5.0).sin());
        let cfg = StepperConfig {
            dt: 0.05,
            t_end: 10.0,
            scheme: Scheme::ExplicitEm,
            snapshot_every: 1,
        };
        let drift = DriftSpec {
            variant: DriftVariant::Kdv2,
            epsilon: 0.0,
            m: 0,
        };
        let noise = zero_noise(g);
        let mut stream = PathStream::new(1, 0);
        let run = run_path(&u0, &drift, &noise, &cfg, &diag_ctx(g), 10.0, &mut stream).unwrap();
        assert!(run.failure.is_some());
        assert!(run.records.last().unwrap().blow_up);
        assert!(run.records.len() >= 2);
        assert!(matches!(run.failure, Some(Error::BlowUp { .. })));
    }

    #[test]
    fn prescribed_increment_aggregation_preserves_brownian_sums() {
        let fine = PrescribedIncrements {
            dt: 0.25,
            increments: vec![
                vec![1.0, -1.0],
                vec![2.0, 0.5],
                vec![-0.5, 0.25],
                vec![0.25, 1.0],
            ],
        };
        let coarse = fine.aggregate(2);
        assert_eq!(coarse.dt, 0.5);
        assert_eq!(coarse.increments, vec![vec![3.0, -0.5], vec![-0.25, 1.25]]);
    }
}
