//! Ready-made experiment configs.

use super::config::ExperimentSpec;
use crate::error::{Error, Result};

pub const PRESET_NAMES: &[&str] = &[
    "rate_vs_N",
    "em_vs_ei_m2",
    "forward_kl_decay",
    "schedule_pi_bounds",
    "dsm_recovery",
    "hessian_tail",
    "lipschitz_lownoise",
    "eps0_linearity",
];

const RATE_VS_N: &str = r#"# Exact KL of the EI chain against p_δ as the exponential grid is refined.
seed = 1
metrics = ["kl"]

schedule.kind = "constant"

grid.kind = "exp_decreasing"
grid.delta = 0.001
grid.T = 8.0
grid.N = [32, 64, 128, 256, 512, 1024]

distribution.preset = "gaussian"
distribution.d = 4
distribution.var = 4.0

score.kind = "exact"
sampler.scheme = "ei"
"#;

const EM_VS_EI_M2: &str = r#"# EM and EI errors as the data mean moves away from the origin.
seed = 2
metrics = ["kl"]

schedule.kind = "constant"

grid.kind = "uniform"
grid.delta = 0.0
grid.T = 8.0
grid.N = 128

distribution.preset = "gaussian"
distribution.d = 4
distribution.mu = [0.0, 10.0, 50.0, 100.0]

score.kind = "exact"
sampler.scheme = ["em", "ei"]
"#;

const FORWARD_KL_DECAY: &str = r#"# KL(p_T | N(0, I)) against (d + M2) exp(-G_T).
seed = 3
metrics = ["forward_kl"]

schedule.kind = "constant"
grid.kind = "uniform"
grid.delta = 0.0
grid.N = 1
grid.T = [2.0, 4.0, 6.0, 8.0, 10.0]
distribution.d = [2, 8]
distribution.mu = 3.0

[[experiment]]
distribution.preset = "gaussian"
distribution.var = 2.0

[[experiment]]
distribution.preset = "point_mass"
"#;

const SCHEDULE_PI_BOUNDS: &str = r#"# Π on power-schedule and exponentially decreasing grids.
seed = 4
metrics = ["schedule_pi"]

distribution.d = 1
grid.delta = [0.01, 0.001]
grid.T = [4.0, 8.0]

[[experiment]]
schedule.kind = "power"
schedule.alpha = [0.25, 0.5, 1.0, 2.0]
grid.kind = "uniform"
grid.N = "auto"

[[experiment]]
schedule.kind = "constant"
grid.kind = "exp_decreasing"
grid.c = [0.015625, 0.0078125]
"#;

const DSM_RECOVERY: &str = r#"# Weighted score error of the affine DSM fit against the fit sample size.
seed = 5
metrics = ["score_error"]

schedule.kind = "constant"
grid.kind = "uniform"
grid.delta = 0.1
grid.T = 4.0
grid.N = 16

distribution.preset = "standard_gaussian"
distribution.d = 2

score.kind = "dsm_affine"
score.n_fit = [250, 500, 1000, 2000, 4000]
metric.n_mc = 4000
"#;

const HESSIAN_TAIL: &str = r#"# Tail scale of the Hessian norm of a smoothed three-point mixture.
seed = 6
metrics = ["hessian_proxy"]

grid.kind = "uniform"
grid.N = 1

distribution.preset = "gmm"
distribution.name = "three_point"
distribution.d = [4, 8]

metric.sigma_sq = [0.5, 0.25]
metric.n_mc = 100000
"#;

const LIPSCHITZ_LOWNOISE: &str = r#"# Operator norm of the Hessian of log p_t at small t against 2L/α_t.
seed = 7
metrics = ["lipschitz"]

schedule.kind = "constant"
grid.kind = "uniform"
grid.N = 1
grid.T = 1.0
grid.delta = [0.001, 0.002, 0.005, 0.01, 0.02, 0.04]

distribution.preset = "anisotropic"
distribution.d = 3
distribution.L = [2.0, 10.0]
"#;

const EPS0_LINEARITY: &str = r#"# Exact KL of the EI chain with a biased score on a fine grid.
seed = 8
metrics = ["kl", "score_error"]

schedule.kind = "constant"

grid.kind = "exp_decreasing"
grid.delta = 0.001
grid.T = 8.0
grid.N = 2048

distribution.preset = "gaussian"
distribution.d = 4
distribution.var = 4.0

score.kind = "perturbed"
score.eps0 = [0.0, 0.1, 0.2, 0.3]
sampler.scheme = "ei"
"#;

/// TOML text of a preset.
pub fn preset_toml(name: &str) -> Result<&'static str> {
    Ok(match name {
        "rate_vs_N" => RATE_VS_N,
        "em_vs_ei_m2" => EM_VS_EI_M2,
        "forward_kl_decay" => FORWARD_KL_DECAY,
        "schedule_pi_bounds" => SCHEDULE_PI_BOUNDS,
        "dsm_recovery" => DSM_RECOVERY,
        "hessian_tail" => HESSIAN_TAIL,
        "lipschitz_lownoise" => LIPSCHITZ_LOWNOISE,
        "eps0_linearity" => EPS0_LINEARITY,
        other => {
            return Err(Error::Config(format!(
                "unknown preset `{other}`; choose one of {}",
                PRESET_NAMES.join(", ")
            )))
        }
    })
}

pub fn preset(name: &str) -> Result<ExperimentSpec> {
    ExperimentSpec::from_toml_str(preset_toml(name)?)
}
