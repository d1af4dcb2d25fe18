//! Monte Carlo orchestration: parallel fan-out of independent paths,
//! reproducible stream assignment, deterministic aggregation, and parameter
//! sweeps with common random numbers.
//!
//! Paths are materialized in ordered chunks (parallel inside a chunk) and
//! folded sequentially by path index, so the aggregate is bitwise identical
//! for any worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::diagnostics::{
    self, ito_budget_check, martingale_probe, moment_estimators, DiagnosticsCtx,
    ItoBudgetReport, MartingaleProbeReport, MomentEstimators, PathIntegrals, ProbePathSample,
    ProbeSpec,
};
use crate::dynamics::{DriftSpec, DriftVariant};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::integrator::{run_path, PathRun, StepperConfig};
use crate::noise::{NoiseModel, PathStream};
use crate::rng::DrawHash;
use crate::weights::WeightFunction;

/// Ensemble-level knobs, extracted from the experiment config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub paths: usize,
    pub workers: usize,
}

impl EnsembleConfig {
    pub fn from_sim(cfg: &SimConfig) -> Self {
        EnsembleConfig {
            paths: cfg.paths,
            workers: cfg.effective_workers(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.paths == 0 {
            return Err(Error::config("paths must be >= 1".to_string()));
        }
        Ok(())
    }
}

/// Mean/variance/standard error of one record field across paths, per time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SeriesStats {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub se: Vec<Option<f64>>,
}

/// Per-time statistics of every numeric record field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct PerTimeStats {
    pub times: Vec<f64>,
    /// Paths contributing at each time (blown-up paths drop out).
    pub alive: Vec<usize>,
    pub l2: SeriesStats,
    pub h1: SeriesStats,
    pub h2: SeriesStats,
    pub h1_win: SeriesStats,
    pub f: SeriesStats,
    pub ito_drift: SeriesStats,
    pub ito_trace: SeriesStats,
    pub bc: SeriesStats,
}

/// Aggregated ensemble output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub paths: usize,
    pub completed_paths: usize,
    pub blow_up_fraction: f64,
    pub noise_bound_violations: usize,
    pub f_initial: f64,
    pub per_time: PerTimeStats,
    pub moments: MomentEstimators,
    pub budget: ItoBudgetReport,
    pub probe: Option<MartingaleProbeReport>,
    /// FNV fold of every path's draw hash, in path order.
    pub draws_hash: String,
}

/// Number-stable streaming accumulator (Welford) per time bin.
#[derive(Debug, Clone, Default)]
struct WelfordBin {
    count: usize,
    mean: f64,
    m2: f64,
}

impl WelfordBin {
    fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn variance(&self) -> f64 {
        if self.count > 1 {
            self.m2 / (self.count as f64 - 1.0)
        } else {
            0.0
        }
    }

    fn se(&self) -> Option<f64> {
        if self.count > 1 {
            Some((self.variance() / self.count as f64).sqrt())
        } else {
            None
        }
    }
}

#[derive(Debug, Default)]
struct SeriesAccumulator {
    bins: Vec<WelfordBin>,
}

impl SeriesAccumulator {
    fn resize(&mut self, len: usize) {
        self.bins.resize_with(len, WelfordBin::default);
    }

    fn push(&mut self, idx: usize, x: f64) {
        self.bins[idx].push(x);
    }

    fn finish(&self) -> SeriesStats {
        SeriesStats {
            mean: self.bins.iter().map(|b| b.mean).collect(),
            variance: self.bins.iter().map(|b| b.variance()).collect(),
            se: self.bins.iter().map(|b| b.se()).collect(),
        }
    }
}

/// Everything shared by every path of one ensemble run.
struct RunSetup {
    grid_u0: Field,
    drift: DriftSpec,
    noise: NoiseModel,
    stepper: StepperConfig,
    diag: DiagnosticsCtx,
    lambda: f64,
    seed: u64,
}

impl RunSetup {
    fn build(cfg: &SimConfig, probe: Option<ProbeSpec>, keep_snapshots: bool) -> Result<Self> {
        cfg.validate()?;
        let grid = cfg.build_grid()?;
        let mut diag = cfg.diagnostics_ctx(grid, probe)?;
        diag.keep_snapshot_fields = keep_snapshots;
        Ok(RunSetup {
            grid_u0: cfg.build_u0(grid)?,
            drift: cfg.drift_spec(),
            noise: cfg.build_noise(grid)?,
            stepper: cfg.stepper_config(),
            diag,
            lambda: cfg.lambda,
            seed: cfg.seed,
        })
    }

    fn run_one(&self, path: u64) -> Result<PathRun> {
        let mut stream = PathStream::new(self.seed, path);
        run_path(
            &self.grid_u0,
            &self.drift,
            &self.noise,
            &self.stepper,
            &self.diag,
            self.lambda,
            &mut stream,
        )
    }
}

/// Run paths in ordered chunks under a dedicated thread pool, folding each
/// completed chunk sequentially.
fn fan_out<F>(setup: &RunSetup, paths: usize, workers: usize, mut fold: F) -> Result<()>
where
    F: FnMut(u64, PathRun) -> Result<()>,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config(format!("could not build thread pool: {e}")))?;
    let chunk = (workers.max(1) * 4).max(8);
    let mut start = 0usize;
    while start < paths {
        let end = (start + chunk).min(paths);
        let runs: Vec<(u64, PathRun)> = pool.install(|| {
            (start..end)
                .into_par_iter()
                .map(|p| setup.run_one(p as u64).map(|r| (p as u64, r)))
                .collect::<Result<Vec<_>>>()
        })?;
        for (p, run) in runs {
            fold(p, run)?;
        }
        start = end;
    }
    Ok(())
}

struct EnsembleAccumulator {
    times: Vec<f64>,
    alive: Vec<usize>,
    series: [SeriesAccumulator; 8],
    integrals: Vec<PathIntegrals>,
    probe_samples: Vec<ProbePathSample>,
    blow_ups: usize,
    bound_violations: usize,
    draws: DrawHash,
    probe_times: Option<(f64, f64)>,
}

impl EnsembleAccumulator {
    fn new(probe_times: Option<(f64, f64)>) -> Self {
        EnsembleAccumulator {
            times: Vec::new(),
            alive: Vec::new(),
            series: Default::default(),
            integrals: Vec::new(),
            probe_samples: Vec::new(),
            blow_ups: 0,
            bound_violations: 0,
            draws: DrawHash::new(),
            probe_times,
        }
    }

    fn fold(&mut self, run: PathRun) -> Result<()> {
        let clean: Vec<_> = run.records.iter().filter(|r| !r.blow_up).collect();
        if self.times.is_empty() {
            self.times = clean.iter().map(|r| r.t).collect();
            self.alive = vec![0; self.times.len()];
            for s in self.series.iter_mut() {
                s.resize(self.times.len());
            }
        }
        for (i, rec) in clean.iter().enumerate() {
            if i >= self.times.len() {
                break;
            }
            self.alive[i] += 1;
            self.series[0].push(i, rec.l2_sq);
            self.series[1].push(i, rec.h1_sq);
            self.series[2].push(i, rec.h2_sq);
            self.series[3].push(i, rec.h1_window_sq);
            self.series[4].push(i, rec.f_value);
            self.series[5].push(i, rec.ito_drift_term);
            self.series[6].push(i, rec.ito_trace_term);
            self.series[7].push(i, rec.boundary_contamination);
        }

        match &run.failure {
            None => {
                self.integrals.push(diagnostics::path_time_integrals(&run.records));
                if let (Some(trace), Some((s, t))) = (&run.probe, self.probe_times) {
                    self.probe_samples.push(diagnostics::probe_path_sample(trace, s, t)?);
                }
            }
            Some(Error::NoiseBound { .. }) => {
                self.bound_violations += 1;
                self.blow_ups += 1;
            }
            Some(_) => self.blow_ups += 1,
        }
        self.draws.absorb(run.draw_hash);
        Ok(())
    }

    fn finish(self, paths: usize, f_initial: f64, epsilon: f64) -> Result<EnsembleStats> {
        if self.integrals.is_empty() {
            return Err(Error::invariant(
                "all paths failed; estimators undefined (blow-up fraction 1.0)".to_string(),
            ));
        }
        let moments = moment_estimators(&self.integrals, epsilon)?;
        let budget = ito_budget_check(f_initial, &self.integrals)?;
        let probe = match (self.probe_samples.is_empty(), self.probe_times) {
            (false, Some((s, t))) => Some(martingale_probe(&self.probe_samples, s, t)?),
            _ => None,
        };
        let [l2, h1, h2, h1_win, f, ito_drift, ito_trace, bc] = self.series;
        Ok(EnsembleStats {
            paths,
            completed_paths: self.integrals.len(),
            blow_up_fraction: self.blow_ups as f64 / paths as f64,
            noise_bound_violations: self.bound_violations,
            f_initial,
            per_time: PerTimeStats {
                times: self.times,
                alive: self.alive,
                l2: l2.finish(),
                h1: h1.finish(),
                h2: h2.finish(),
                h1_win: h1_win.finish(),
                f: f.finish(),
                ito_drift: ito_drift.finish(),
                ito_trace: ito_trace.finish(),
                bc: bc.finish(),
            },
            moments,
            budget,
            probe,
            draws_hash: self.draws.to_hex(),
        })
    }
}

/// Run `cfg.paths` independent paths and aggregate. The result is identical
/// for any worker count.
pub fn run_ensemble(cfg: &SimConfig, probe: Option<ProbeSpec>) -> Result<EnsembleStats> {
    run_ensemble_with(cfg, probe, |_, _| Ok(()))
}

/// Like [`run_ensemble`], additionally feeding every completed path to
/// `on_path` in path-index order (e.g. to stream per-path record files).
pub fn run_ensemble_with(
    cfg: &SimConfig,
    probe: Option<ProbeSpec>,
    mut on_path: impl FnMut(u64, &PathRun) -> Result<()>,
) -> Result<EnsembleStats> {
    let ens = EnsembleConfig::from_sim(cfg);
    ens.validate()?;
    let probe_times = probe.as_ref().map(|p| (p.s, p.t));
    let setup = RunSetup::build(cfg, probe, false)?;
    let f_initial = diagnostics::functional_f(&setup.grid_u0, &setup.diag.weight);

    let mut acc = EnsembleAccumulator::new(probe_times);
    fan_out(&setup, ens.paths, ens.workers, |p, run| {
        on_path(p, &run)?;
        acc.fold(run)
    })?;
    acc.finish(ens.paths, f_initial, cfg.drift.epsilon)
}

/// One row of the sweep table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub m: usize,
    pub est_4a: f64,
    pub est_4a_se: Option<f64>,
    pub est_4c: f64,
    pub est_4c_se: Option<f64>,
    pub blowup_frac: f64,
}

/// Coupled-path distance between two consecutive epsilon values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairDistance {
    pub eps_from: f64,
    pub eps_to: f64,
    /// Ensemble mean and max of |u^{ε1} - u^{ε2}|_{L²(0,T;L²)}.
    pub mean_dist: f64,
    pub max_dist: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub pair_distances: Vec<PairDistance>,
    /// Whether every epsilon consumed bitwise-identical draws (checked when
    /// nothing blew up).
    pub draws_coupled: Option<bool>,
}

/// `L²(0,T;L²)` distance between two coupled snapshot sequences.
fn path_distance(times: &[f64], a: &[Field], b: &[Field]) -> f64 {
    let rates: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(fa, fb)| fa.sub(fb).l2_norm_sq())
        .collect();
    diagnostics::trapezoid(&times[..rates.len()], &rates).sqrt()
}

/// Sweep over epsilon values with common random numbers: for each path the
/// same Wiener draws drive every epsilon, so consecutive-epsilon distances
/// are low-variance convergence diagnostics.
pub fn sweep_epsilon(cfg: &SimConfig, epsilons: &[f64]) -> Result<SweepTable> {
    if epsilons.is_empty() {
        return Err(Error::config("sweep needs at least one epsilon".to_string()));
    }
    for e in epsilons {
        if !(*e > 0.0) {
            return Err(Error::config("sweep epsilons must be positive".to_string()));
        }
    }
    for pair in epsilons.windows(2) {
        if !(pair[1] < pair[0]) {
            return Err(Error::config(
                "sweep epsilons must be strictly decreasing".to_string(),
            ));
        }
    }
    if !matches!(
        cfg.drift.variant,
        DriftVariant::Regularized | DriftVariant::GalerkinCutoff
    ) {
        return Err(Error::config(
            "sweep requires drift.variant = regularized or galerkin_cutoff".to_string(),
        ));
    }

    let ens = EnsembleConfig::from_sim(cfg);
    ens.validate()?;

    // One setup per epsilon; identical seeds couple the noise.
    let mut setups = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let mut c = cfg.clone();
        c.drift.epsilon = eps;
        setups.push(RunSetup::build(&c, None, true)?);
    }
    let f_initial = diagnostics::functional_f(&setups[0].grid_u0, &setups[0].diag.weight);

    struct PerEps {
        integrals: Vec<PathIntegrals>,
        blow_ups: usize,
        draws: DrawHash,
    }
    let mut per_eps: Vec<PerEps> = epsilons
        .iter()
        .map(|_| PerEps {
            integrals: Vec::new(),
            blow_ups: 0,
            draws: DrawHash::new(),
        })
        .collect();
    let mut pair_mean = vec![0.0f64; epsilons.len().saturating_sub(1)];
    let mut pair_max = vec![0.0f64; epsilons.len().saturating_sub(1)];
    let mut pair_count = vec![0usize; epsilons.len().saturating_sub(1)];

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ens.workers)
        .build()
        .map_err(|e| Error::config(format!("could not build thread pool: {e}")))?;
    let chunk = (ens.workers.max(1) * 4).max(8);
    let mut start = 0usize;
    while start < ens.paths {
        let end = (start + chunk).min(ens.paths);
        let results: Vec<(u64, Vec<PathRun>)> = pool.install(|| {
            (start..end)
                .into_par_iter()
                .map(|p| {
                    let runs = setups
                        .iter()
                        .map(|s| s.run_one(p as u64))
                        .collect::<Result<Vec<_>>>()?;
                    Ok((p as u64, runs))
                })
                .collect::<Result<Vec<_>>>()
        })?;
        for (_p, runs) in results {
            for (i, run) in runs.iter().enumerate() {
                if run.failure.is_none() {
                    per_eps[i]
                        .integrals
                        .push(diagnostics::path_time_integrals(&run.records));
                } else {
                    per_eps[i].blow_ups += 1;
                }
                per_eps[i].draws.absorb(run.draw_hash);
            }
            for i in 0..epsilons.len().saturating_sub(1) {
                if runs[i].failure.is_some() || runs[i + 1].failure.is_some() {
                    continue;
                }
                let (Some(sa), Some(sb)) = (&runs[i].snapshots, &runs[i + 1].snapshots) else {
                    continue;
                };
                let times: Vec<f64> = runs[i].records.iter().map(|r| r.t).collect();
                let d = path_distance(&times, sa, sb);
                pair_mean[i] += d;
                pair_max[i] = pair_max[i].max(d);
                pair_count[i] += 1;
            }
        }
        start = end;
    }

    let mut rows = Vec::with_capacity(epsilons.len());
    for (i, &eps) in epsilons.iter().enumerate() {
        if per_eps[i].integrals.is_empty() {
            return Err(Error::invariant(format!(
                "all paths failed at epsilon = {eps}; estimators undefined"
            )));
        }
        let m = moment_estimators(&per_eps[i].integrals, eps)?;
        rows.push(SweepRow {
            epsilon: eps,
            m: cfg.drift.galerkin_m,
            est_4a: m.est_4a,
            est_4a_se: m.est_4a_se,
            est_4c: m.est_4c,
            est_4c_se: m.est_4c_se,
            blowup_frac: per_eps[i].blow_ups as f64 / ens.paths as f64,
        });
    }
    let _ = f_initial;

    let no_failures = per_eps.iter().all(|p| p.blow_ups == 0);
    let draws_coupled = if no_failures {
        let first = per_eps[0].draws;
        let coupled = per_eps.iter().all(|p| p.draws == first);
        if !coupled {
            return Err(Error::invariant(
                "sweep draws decoupled: epsilon runs consumed different noise".to_string(),
            ));
        }
        Some(true)
    } else {
        None
    };

    let pair_distances = (0..epsilons.len().saturating_sub(1))
        .map(|i| PairDistance {
            eps_from: epsilons[i],
            eps_to: epsilons[i + 1],
            mean_dist: if pair_count[i] > 0 {
                pair_mean[i] / pair_count[i] as f64
            } else {
                f64::NAN
            },
            max_dist: pair_max[i],
        })
        .collect();

    Ok(SweepTable {
        rows,
        pair_distances,
        draws_coupled,
    })
}

/// Convenience for tests and the verify suites: run one ensemble twice with
/// different worker counts and return both stats.
pub fn run_with_workers(cfg: &SimConfig, workers: usize) -> Result<EnsembleStats> {
    let mut c = cfg.clone();
    c.workers = workers;
    run_ensemble(&c, None)
}

#[allow(unused)]
fn unused_weight_hook(_w: &WeightFunction) {}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{InitialKind, SimConfig, WeightConfig, WeightProfileKind};
    use crate::dynamics::DriftVariant;
    use crate::noise::NoiseKind;

    fn small_cfg() -> SimConfig {
        let mut cfg = SimConfig::default();
        cfg.grid.n = 64;
        cfg.grid.length = 20.0;
        cfg.noise.modes = 8;
        cfg.noise.decay_r = 4.0;
        cfg.noise.sigma0 = 0.1;
        cfg.stepper.dt = 1e-2;
        cfg.stepper.t_end = 0.1;
        cfg.stepper.snapshot_every = 2;
        cfg.drift.epsilon = 0.05;
        cfg.initial_condition.amplitude = 0.3;
        cfg.initial_condition.width = 2.0;
        cfg.window_k = 5.0;
        cfg.paths = 16;
        cfg.weight = WeightConfig {
            profile: WeightProfileKind::Atan,
            param: 5.0,
        };
        cfg
    }

    #[test]
    fn single_path_stats_match_path_records() {
        let mut cfg = small_cfg();
        cfg.paths = 1;
        let stats = run_ensemble(&cfg, None).unwrap();
        assert_eq!(stats.paths, 1);
        assert_eq!(stats.completed_paths, 1);
        assert!(stats.per_time.l2.se.iter().all(|s| s.is_none()), "single path: SE null");
        assert_eq!(stats.blow_up_fraction, 0.0);
        assert!(stats.moments.est_4a_se.is_none());
    }

    #[test]
    fn worker_count_does_not_change_stats() {
        let cfg = small_cfg();
        let s1 = run_with_workers(&cfg, 1).unwrap();
        let s8 = run_with_workers(&cfg, 8).unwrap();
        assert_eq!(s1, s8);
    }

    #[test]
    fn zero_drift_additive_noise_matches_ito_isometry() {
        // du = Phi dW from u0 = 0: E|u(t)|² = t Σ q².
        let mut cfg = small_cfg();
        cfg.drift.variant = DriftVariant::None;
        cfg.drift.epsilon = 0.0;
        cfg.noise.kind = NoiseKind::Additive;
        cfg.noise.sigma0 = 0.3;
        cfg.initial_condition.amplitude = 0.0;
        cfg.paths = 2000;
        cfg.stepper.dt = 1e-2;
        cfg.stepper.t_end = 0.2;
        cfg.stepper.snapshot_every = 5;
        let stats = run_ensemble(&cfg, None).unwrap();

        let grid = cfg.build_grid().unwrap();
        let noise = cfg.build_noise(grid).unwrap();
        let rate = noise.sum_weight_sq();
        for (i, &t) in stats.per_time.times.iter().enumerate() {
            let expect = t * rate;
            let got = stats.per_time.l2.mean[i];
            let se = stats.per_time.l2.se[i].unwrap_or(0.0);
            assert!(
                (got - expect).abs() <= 3.0 * se + 1e-12,
                "t = {t}: {got} vs {expect} (se {se})"
            );
        }
    }

    #[test]
    fn sweep_single_epsilon_matches_run_ensemble() {
        let mut cfg = small_cfg();
        cfg.paths = 8;
        let table = sweep_epsilon(&cfg, &[cfg.drift.epsilon]).unwrap();
        assert_eq!(table.rows.len(), 1);
        let stats = run_ensemble(&cfg, None).unwrap();
        let row = table.rows[0];
        assert!((row.est_4a - stats.moments.est_4a).abs() < 1e-12);
        assert!((row.est_4c - stats.moments.est_4c).abs() < 1e-12);
        assert_eq!(row.blowup_frac, 0.0);
        assert_eq!(table.draws_coupled, Some(true));
    }

    #[test]
    fn sweep_zero_noise_distances_decrease() {
        let mut cfg = small_cfg();
        cfg.noise.kind = NoiseKind::Zero;
        cfg.paths = 1;
        cfg.stepper.t_end = 0.1;
        let table = sweep_epsilon(&cfg, &[0.1, 0.02, 0.004]).unwrap();
        assert_eq!(table.pair_distances.len(), 2);
        let d01 = table.pair_distances[0].mean_dist;
        let d12 = table.pair_distances[1].mean_dist;
        assert!(
            d12 < d01,
            "coupled distances should shrink as epsilon shrinks: {d01} -> {d12}"
        );
    }

    #[test]
    fn sweep_rejects_bad_epsilon_lists() {
        let cfg = small_cfg();
        assert!(sweep_epsilon(&cfg, &[]).is_err());
        assert!(sweep_epsilon(&cfg, &[0.1, 0.2]).is_err());
        assert!(sweep_epsilon(&cfg, &[0.1, -0.2]).is_err());
        let mut kdv = cfg.clone();
        kdv.drift.variant = DriftVariant::Kdv2;
        kdv.drift.epsilon = 0.0;
        assert!(sweep_epsilon(&kdv, &[0.1]).is_err());
    }

    #[test]
    fn gaussian_ic_single_mode_ic_build() {
        let mut cfg = small_cfg();
        cfg.initial_condition.kind = InitialKind::SingleMode;
        cfg.initial_condition.mode = 2;
        assert!(run_ensemble(&cfg, None).is_ok());
    }
}
