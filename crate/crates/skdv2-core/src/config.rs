//! Complete, serializable description of one experiment, and the builders
//! that turn it into runnable objects.

use serde::{Deserialize, Serialize};

use crate::diagnostics::{DiagnosticsCtx, ProbeSpec};
use crate::dynamics::{DriftSpec, DriftVariant};
use crate::error::{Error, Result};
use crate::field::{Field, Grid};
use crate::integrator::{Scheme, StepperConfig};
use crate::noise::{NoiseKind, NoiseModel, NoiseParams};
use crate::weights::{make_weight, WeightFunction, WeightProfile};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub n: usize,
    pub length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftConfig {
    pub variant: DriftVariant,
    pub epsilon: f64,
    pub galerkin_m: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightProfileKind {
    /// `2 + arctan(x / param)`.
    Atan,
    /// `p ≡ param`.
    Const,
    /// `param + sin(2πx/L)`; identity-suite profile, rejected by the
    /// certified-weight builder (not monotone).
    SinPeriodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightConfig {
    pub profile: WeightProfileKind,
    pub param: f64,
}

/// Offset of the arctan weight profile; any value above π/2 keeps the
/// profile positive, and the bound coupling then constrains lambda.
pub const ATAN_WEIGHT_OFFSET: f64 = 2.0;

impl WeightConfig {
    pub fn to_profile(self, grid: Grid) -> WeightProfile {
        match self.profile {
            WeightProfileKind::Atan => WeightProfile::Atan {
                offset: ATAN_WEIGHT_OFFSET,
                scale: self.param,
            },
            WeightProfileKind::Const => WeightProfile::Const { level: self.param },
            WeightProfileKind::SinPeriodic => WeightProfile::SinePeriodic {
                mean: self.param,
                length: grid.length(),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepperSettings {
    pub dt: f64,
    pub t_end: f64,
    pub scheme: Scheme,
    pub snapshot_every: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    GaussianBump,
    SingleMode,
    SechSquared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialCondition {
    pub kind: InitialKind,
    pub amplitude: f64,
    /// Width for the bump/sech profiles.
    pub width: f64,
    pub center: f64,
    /// Mode number for `single_mode`.
    pub mode: usize,
    /// Reference frame velocity for soliton-style analysis of `sech_squared`
    /// runs; echoed with the config, not used by the dynamics.
    pub velocity: f64,
}

impl InitialCondition {
    pub fn build(&self, grid: Grid) -> Result<Field> {
        if !(self.amplitude.is_finite()) {
            return Err(Error::config("initial_condition.amplitude must be finite"));
        }
        match self.kind {
            InitialKind::GaussianBump => {
                if !(self.width > 0.0) {
                    return Err(Error::config(format!(
                        "initial_condition.width must be positive, got {}",
                        self.width
                    )));
                }
                let (a, w, c) = (self.amplitude, self.width, self.center);
                Ok(Field::from_fn(grid, |x| {
                    a * (-(x - c) * (x - c) / (2.0 * w * w)).exp()
                }))
            }
            InitialKind::SingleMode => {
                if self.mode == 0 || self.mode >= grid.n() / 2 {
                    return Err(Error::config(format!(
                        "initial_condition.mode must lie in 1..n/2, got {}",
                        self.mode
                    )));
                }
                let a = self.amplitude;
                let w = 2.0 * std::f64::consts::PI * self.mode as f64 / grid.length();
                Ok(Field::from_fn(grid, |x| a * (w * x).sin()))
            }
            InitialKind::SechSquared => {
                if !(self.width > 0.0) {
                    return Err(Error::config(format!(
                        "initial_condition.width must be positive, got {}",
                        self.width
                    )));
                }
                let (a, w, c) = (self.amplitude, self.width, self.center);
                Ok(Field::from_fn(grid, |x| {
                    let s = ((x - c) / w).cosh();
                    a / (s * s)
                }))
            }
        }
    }
}

/// Complete experiment description. Round-trips losslessly through the
/// flat-key config format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub grid: GridConfig,
    pub drift: DriftConfig,
    pub noise: NoiseParams,
    pub weight: WeightConfig,
    pub lambda: f64,
    pub stepper: StepperSettings,
    pub initial_condition: InitialCondition,
    pub seed: u64,
    pub window_k: f64,
    pub output_dir: String,
    pub paths: usize,
    pub workers: usize,
    /// Epsilon values for the sweep command (descending).
    pub sweep_epsilons: Vec<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            grid: GridConfig {
                n: 128,
                length: 40.0,
            },
            drift: DriftConfig {
                variant: DriftVariant::Regularized,
                epsilon: 0.01,
                galerkin_m: 32,
            },
            noise: NoiseParams {
                kind: NoiseKind::Additive,
                sigma0: 0.1,
                decay_r: 3.0,
                modes: 32,
                clip: 2.0,
            },
            weight: WeightConfig {
                profile: WeightProfileKind::Atan,
                param: 5.0,
            },
            lambda: 10.0,
            stepper: StepperSettings {
                dt: 1e-3,
                t_end: 0.5,
                scheme: Scheme::ImexEm,
                snapshot_every: 10,
            },
            initial_condition: InitialCondition {
                kind: InitialKind::GaussianBump,
                amplitude: 0.5,
                width: 3.0,
                center: 0.0,
                mode: 1,
                velocity: 0.0,
            },
            seed: 42,
            window_k: 10.0,
            output_dir: "out".to_string(),
            paths: 100,
            workers: 0,
            sweep_epsilons: vec![1e-1, 1e-2, 1e-3],
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let grid = self.build_grid()?;
        self.drift_spec().validate()?;
        if self.drift.variant == DriftVariant::GalerkinCutoff
            && self.drift.galerkin_m > grid.n() / 2
        {
            return Err(Error::config(format!(
                "galerkin_m = {} exceeds n/2 = {}",
                self.drift.galerkin_m,
                grid.n() / 2
            )));
        }
        self.noise.validate()?;
        if !(self.lambda > 2.0) {
            return Err(Error::config(format!(
                "lambda must exceed 2, got {}",
                self.lambda
            )));
        }
        if !(self.weight.param > 0.0) {
            return Err(Error::config(format!(
                "weight.param must be positive, got {}",
                self.weight.param
            )));
        }
        self.stepper_config().validate()?;
        self.initial_condition.build(grid)?;
        if !(self.window_k > 0.0 && self.window_k <= 0.5 * grid.length()) {
            return Err(Error::config(format!(
                "window_k must lie in (0, L/2], got {}",
                self.window_k
            )));
        }
        if self.paths == 0 {
            return Err(Error::config("paths must be >= 1".to_string()));
        }
        for pair in self.sweep_epsilons.windows(2) {
            if !(pair[1] < pair[0]) {
                return Err(Error::config(
                    "sweep epsilons must be strictly decreasing".to_string(),
                ));
            }
        }
        if self.sweep_epsilons.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::config("sweep epsilons must be positive".to_string()));
        }
        Ok(())
    }

    pub fn build_grid(&self) -> Result<Grid> {
        Grid::new(self.grid.n, self.grid.length)
    }

    pub fn drift_spec(&self) -> DriftSpec {
        DriftSpec {
            variant: self.drift.variant,
            epsilon: self.drift.epsilon,
            m: self.drift.galerkin_m,
        }
    }

    pub fn stepper_config(&self) -> StepperConfig {
        StepperConfig {
            dt: self.stepper.dt,
            t_end: self.stepper.t_end,
            scheme: self.stepper.scheme,
            snapshot_every: self.stepper.snapshot_every,
        }
    }

    pub fn build_weight(&self, grid: Grid) -> Result<WeightFunction> {
        make_weight(self.weight.to_profile(grid), grid, self.lambda)
    }

    pub fn build_noise(&self, grid: Grid) -> Result<NoiseModel> {
        NoiseModel::new(self.noise, grid, self.lambda)
    }

    /// Initial condition, projected when the Galerkin variant asks for
    /// band-limited data.
    pub fn build_u0(&self, grid: Grid) -> Result<Field> {
        let u0 = self.initial_condition.build(grid)?;
        if self.drift.variant == DriftVariant::GalerkinCutoff {
            u0.project(self.drift.galerkin_m)
        } else {
            Ok(u0)
        }
    }

    pub fn diagnostics_ctx(&self, grid: Grid, probe: Option<ProbeSpec>) -> Result<DiagnosticsCtx> {
        Ok(DiagnosticsCtx {
            weight: self.build_weight(grid)?,
            window_k: self.window_k,
            probe,
            keep_snapshot_fields: false,
        })
    }

    /// Effective worker count (0 means "let the runtime decide").
    pub fn effective_workers(&self) -> usize {
        if self.workers == 0 {
            rayon::current_num_threads()
        } else {
            self.workers
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let cfg = SimConfig::default();
        cfg.validate().unwrap();
        let grid = cfg.build_grid().unwrap();
        cfg.build_weight(grid).unwrap();
        cfg.build_noise(grid).unwrap();
        cfg.build_u0(grid).unwrap();
    }

    #[test]
    fn negative_epsilon_rejected() {
        let mut cfg = SimConfig::default();
        cfg.drift.epsilon = -0.1;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn zero_paths_rejected() {
        let mut cfg = SimConfig::default();
        cfg.paths = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn sin_periodic_weight_rejected_for_certified_runs() {
        let mut cfg = SimConfig::default();
        cfg.weight = WeightConfig {
            profile: WeightProfileKind::SinPeriodic,
            param: 2.0,
        };
        let grid = cfg.build_grid().unwrap();
        assert!(cfg.build_weight(grid).is_err());
    }

    #[test]
    fn initial_conditions_build() {
        let grid = Grid::new(128, 40.0).unwrap();
        let mut ic = InitialCondition {
            kind: InitialKind::GaussianBump,
            amplitude: 0.5,
            width: 3.0,
            center: 1.0,
            mode: 3,
            velocity: 0.0,
        };
        assert!(ic.build(grid).is_ok());
        ic.kind = InitialKind::SingleMode;
        assert!(ic.build(grid).is_ok());
        ic.kind = InitialKind::SechSquared;
        ic.center = 0.0;
        let u = ic.build(grid).unwrap();
        assert!((u.max_abs() - 0.5).abs() < 1e-9);

        ic.kind = InitialKind::SingleMode;
        ic.mode = 0;
        assert!(ic.build(grid).is_err());
        ic.mode = 64;
        assert!(ic.build(grid).is_err());
    }

    #[test]
    fn galerkin_u0_is_projected() {
        let mut cfg = SimConfig::default();
        cfg.drift = DriftConfig {
            variant: DriftVariant::GalerkinCutoff,
            epsilon: 0.01,
            galerkin_m: 8,
        };
        let grid = cfg.build_grid().unwrap();
        let u0 = cfg.build_u0(grid).unwrap();
        assert!(u0.band_limit_excess(8) < 1e-12);
    }
}
