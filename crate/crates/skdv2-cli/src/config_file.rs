//! Flat-key configuration format: one `key = value` per line, `#` comments,
//! dotted section prefixes. Later assignments win, so appending overrides is
//! cheap and `--override key=value` uses the same grammar. Unknown keys are
//! rejected with the offending name.

use skdv2_core::config::{InitialKind, SimConfig, WeightProfileKind};
use skdv2_core::dynamics::DriftVariant;
use skdv2_core::error::{Error, Result};
use skdv2_core::integrator::Scheme;
use skdv2_core::noise::NoiseKind;

/// Parse a config file body on top of the defaults.
pub fn parse(text: &str) -> Result<SimConfig> {
    let mut cfg = SimConfig::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = split_pair(line)
            .ok_or_else(|| Error::config(format!("line {}: expected 'key = value', got {raw:?}", lineno + 1)))?;
        apply(&mut cfg, key, value)
            .map_err(|e| Error::config(format!("line {}: {e}", lineno + 1)))?;
    }
    Ok(cfg)
}

/// Apply one `key=value` override.
pub fn apply_override(cfg: &mut SimConfig, pair: &str) -> Result<()> {
    let (key, value) = split_pair(pair)
        .ok_or_else(|| Error::config(format!("override must be key=value, got {pair:?}")))?;
    apply(cfg, key, value)
}

fn split_pair(s: &str) -> Option<(&str, &str)> {
    let (k, v) = s.split_once('=')?;
    Some((k.trim(), v.trim()))
}

fn apply(cfg: &mut SimConfig, key: &str, value: &str) -> Result<()> {
    let bad = |what: &str| Error::config(format!("key '{key}': invalid {what} {value:?}"));
    macro_rules! num {
        ($t:ty, $what:expr) => {
            value.parse::<$t>().map_err(|_| bad($what))?
        };
    }
    match key {
        "grid.n" => cfg.grid.n = num!(usize, "integer"),
        "grid.length" => cfg.grid.length = num!(f64, "number"),
        "drift.variant" => {
            cfg.drift.variant = match value {
                "none" => DriftVariant::None,
                "kdv2" => DriftVariant::Kdv2,
                "regularized" => DriftVariant::Regularized,
                "galerkin_cutoff" => DriftVariant::GalerkinCutoff,
                _ => return Err(bad("drift variant")),
            }
        }
        "epsilon" => cfg.drift.epsilon = num!(f64, "number"),
        "galerkin_m" => cfg.drift.galerkin_m = num!(usize, "integer"),
        "noise.kind" => {
            cfg.noise.kind = match value {
                "zero" => NoiseKind::Zero,
                "additive" => NoiseKind::Additive,
                "diagonal_multiplicative" => NoiseKind::DiagonalMultiplicative,
                _ => return Err(bad("noise kind")),
            }
        }
        "noise.sigma0" => cfg.noise.sigma0 = num!(f64, "number"),
        "noise.decay_r" => cfg.noise.decay_r = num!(f64, "number"),
        "noise.modes" => cfg.noise.modes = num!(usize, "integer"),
        "noise.clip" => cfg.noise.clip = num!(f64, "number"),
        "weight.profile" => {
            cfg.weight.profile = match value {
                "atan" => WeightProfileKind::Atan,
                "const" => WeightProfileKind::Const,
                "sin_periodic" => WeightProfileKind::SinPeriodic,
                _ => return Err(bad("weight profile")),
            }
        }
        "weight.param" => cfg.weight.param = num!(f64, "number"),
        "lambda" => cfg.lambda = num!(f64, "number"),
        "dt" => cfg.stepper.dt = num!(f64, "number"),
        "t_end" => cfg.stepper.t_end = num!(f64, "number"),
        "scheme" => {
            cfg.stepper.scheme = match value {
                "imex_em" => Scheme::ImexEm,
                "explicit_em" => Scheme::ExplicitEm,
                "deterministic_rk4" => Scheme::DeterministicRk4,
                _ => return Err(bad("scheme")),
            }
        }
        "snapshot_every" => cfg.stepper.snapshot_every = num!(usize, "integer"),
        "initial_condition.kind" => {
            cfg.initial_condition.kind = match value {
                "gaussian_bump" => InitialKind::GaussianBump,
                "single_mode" => InitialKind::SingleMode,
                "sech_squared" => InitialKind::SechSquared,
                _ => return Err(bad("initial condition kind")),
            }
        }
        "initial_condition.amplitude" => cfg.initial_condition.amplitude = num!(f64, "number"),
        "initial_condition.width" => cfg.initial_condition.width = num!(f64, "number"),
        "initial_condition.center" => cfg.initial_condition.center = num!(f64, "number"),
        "initial_condition.mode" => cfg.initial_condition.mode = num!(usize, "integer"),
        "initial_condition.velocity" => cfg.initial_condition.velocity = num!(f64, "number"),
        "seed" => cfg.seed = num!(u64, "integer"),
        "window_k" => cfg.window_k = num!(f64, "number"),
        "output_dir" => cfg.output_dir = value.to_string(),
        "paths" => cfg.paths = num!(usize, "integer"),
        "workers" => cfg.workers = num!(usize, "integer"),
        "sweep.epsilons" => {
            cfg.sweep_epsilons = value
                .split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|_| bad("epsilon list")))
                .collect::<Result<Vec<f64>>>()?;
        }
        _ => return Err(Error::config(format!("unknown config key '{key}'"))),
    }
    Ok(())
}

/// Render the fully resolved config in the same flat-key format. Rust's
/// float display is shortest-round-trip, so `parse(format(cfg)) == cfg`.
pub fn format(cfg: &SimConfig) -> String {
    let drift = match cfg.drift.variant {
        DriftVariant::None => "none",
        DriftVariant::Kdv2 => "kdv2",
        DriftVariant::Regularized => "regularized",
        DriftVariant::GalerkinCutoff => "galerkin_cutoff",
    };
    let noise = match cfg.noise.kind {
        NoiseKind::Zero => "zero",
        NoiseKind::Additive => "additive",
        NoiseKind::DiagonalMultiplicative => "diagonal_multiplicative",
    };
    let weight = match cfg.weight.profile {
        WeightProfileKind::Atan => "atan",
        WeightProfileKind::Const => "const",
        WeightProfileKind::SinPeriodic => "sin_periodic",
    };
    let scheme = match cfg.stepper.scheme {
        Scheme::ImexEm => "imex_em",
        Scheme::ExplicitEm => "explicit_em",
        Scheme::DeterministicRk4 => "deterministic_rk4",
    };
    let ic = match cfg.initial_condition.kind {
        InitialKind::GaussianBump => "gaussian_bump",
        InitialKind::SingleMode => "single_mode",
        InitialKind::SechSquared => "sech_squared",
    };
    let eps_list = cfg
        .sweep_epsilons
        .iter()
        .map(|e| e.to_string())
        .collect::<Vec<_>>()
        .join(",");
    format!(
        "grid.n = {}\n\
         grid.length = {}\n\
         drift.variant = {drift}\n\
         epsilon = {}\n\
         galerkin_m = {}\n\
         noise.kind = {noise}\n\
         noise.sigma0 = {}\n\
         noise.decay_r = {}\n\
         noise.modes = {}\n\
         noise.clip = {}\n\
         weight.profile = {weight}\n\
         weight.param = {}\n\
         lambda = {}\n\
         dt = {}\n\
         t_end = {}\n\
         scheme = {scheme}\n\
         snapshot_every = {}\n\
         initial_condition.kind = {ic}\n\
         initial_condition.amplitude = {}\n\
         initial_condition.width = {}\n\
         initial_condition.center = {}\n\
         initial_condition.mode = {}\n\
         initial_condition.velocity = {}\n\
         seed = {}\n\
         window_k = {}\n\
         output_dir = {}\n\
         paths = {}\n\
         workers = {}\n\
         sweep.epsilons = {eps_list}\n",
        cfg.grid.n,
        cfg.grid.length,
        cfg.drift.epsilon,
        cfg.drift.galerkin_m,
        cfg.noise.sigma0,
        cfg.noise.decay_r,
        cfg.noise.modes,
        cfg.noise.clip,
        cfg.weight.param,
        cfg.lambda,
        cfg.stepper.dt,
        cfg.stepper.t_end,
        cfg.stepper.snapshot_every,
        cfg.initial_condition.amplitude,
        cfg.initial_condition.width,
        cfg.initial_condition.center,
        cfg.initial_condition.mode,
        cfg.initial_condition.velocity,
        cfg.seed,
        cfg.window_k,
        cfg.output_dir,
        cfg.paths,
        cfg.workers,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_lossless() {
        let mut cfg = SimConfig::default();
        cfg.grid.n = 256;
        cfg.stepper.dt = 1.25e-4;
        cfg.noise.sigma0 = 0.123456789012345;
        cfg.sweep_epsilons = vec![0.1, 0.007];
        let text = format(&cfg);
        let back = parse(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let cfg = parse("# a comment\n\n seed = 7 \n").unwrap();
        assert_eq!(cfg.seed, 7);
    }

    #[test]
    fn unknown_key_rejected_by_name() {
        let err = parse("grid.m = 4\n").unwrap_err();
        assert!(err.to_string().contains("grid.m"), "{err}");
        assert!(err.is_config());
    }

    #[test]
    fn bad_values_name_the_key() {
        let err = parse("grid.n = twelve\n").unwrap_err();
        assert!(err.to_string().contains("grid.n"), "{err}");
        assert!(apply_override(&mut SimConfig::default(), "dt").is_err());
    }

    #[test]
    fn later_assignments_win() {
        let cfg = parse("seed = 1\nseed = 2\n").unwrap();
        assert_eq!(cfg.seed, 2);
        let mut cfg = cfg;
        apply_override(&mut cfg, "dt=1e-3").unwrap();
        assert_eq!(cfg.stepper.dt, 1e-3);
    }
}
