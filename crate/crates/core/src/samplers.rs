//! Reverse-time samplers.
//!
//! Reverse step `k = 0..N` moves from forward time `t_{N-k}` down to
//! `t_{N-k-1}`; its clock length is `G = G_{t_{N-k-1}, t_{N-k}}` and the score is
//! queried at index `N - k` (the left end of the reverse interval). Both schemes
//! have the form `y' = a y + b s + c z`:
//!
//! | scheme | a | b | c |
//! |---|---|---|---|
//! | EM | `1 + G/2` | `G` | `√G` |
//! | EI | `e^{G/2}` | `2(e^{G/2} - 1)` | `√(e^G - 1)` |
//!
//! The EI coefficients solve `dy = (½ y + s) dG + dW_G` exactly with `s` frozen.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::distributions::{GaussianMixture, ScoreScratch};
use crate::error::{Error, Result};
use crate::linalg::{symmetrize, Samples};
use crate::rng;
use crate::schedules::{DiscretizationGrid, VarianceSchedule};
use crate::score_models::ScoreModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    EulerMaruyama,
    ExponentialIntegrator,
}

impl Scheme {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "em" | "euler_maruyama" => Ok(Self::EulerMaruyama),
            "ei" | "exponential_integrator" => Ok(Self::ExponentialIntegrator),
            other => Err(Error::Config(format!("unknown sampler scheme `{other}`"))),
        }
    }

    pub fn short_name(&self) -> &'static str {
        match self {
            Self::EulerMaruyama => "em",
            Self::ExponentialIntegrator => "ei",
        }
    }

    /// `(a, b, c)` of the update `y' = a y + b s + c z` for a step of length `g`.
    pub fn coefficients(&self, g: f64) -> (f64, f64, f64) {
        match self {
            Self::EulerMaruyama => (1.0 + 0.5 * g, g, g.sqrt()),
            Self::ExponentialIntegrator => ((0.5 * g).exp(), 2.0 * (0.5 * g).exp_m1(), g.exp_m1().sqrt()),
        }
    }
}

fn check_step_inputs(g: f64, parts: &[&[f64]]) -> Result<()> {
    if !(g >= 0.0 && g.is_finite()) {
        return Err(Error::InvalidParameter(format!("step length must be non-negative, got {g}")));
    }
    let d = parts[0].len();
    if parts.iter().any(|p| p.len() != d) {
        return Err(Error::InvalidInput("state, score and noise dimensions differ".into()));
    }
    if parts.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
        return Err(Error::Numeric("sampler step input".into()));
    }
    Ok(())
}

fn step(scheme: Scheme, y: &DVector<f64>, g: f64, s: &DVector<f64>, z: &DVector<f64>) -> Result<DVector<f64>> {
    check_step_inputs(g, &[y.as_slice(), s.as_slice(), z.as_slice()])?;
    let (a, b, c) = scheme.coefficients(g);
    Ok(y * a + s * b + z * c)
}

/// One Euler–Maruyama step: `y + (½ y + s) G + √G z`.
pub fn step_em(y: &DVector<f64>, g: f64, s: &DVector<f64>, z: &DVector<f64>) -> Result<DVector<f64>> {
    step(Scheme::EulerMaruyama, y, g, s, z)
}

/// One exponential-integrator step: `e^{G/2} y + 2(e^{G/2}-1) s + √(e^G-1) z`.
pub fn step_ei(y: &DVector<f64>, g: f64, s: &DVector<f64>, z: &DVector<f64>) -> Result<DVector<f64>> {
    step(Scheme::ExponentialIntegrator, y, g, s, z)
}

/// How per-step Gaussian noise is produced.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseMode {
    /// Fresh `d` normals per step.
    Independent,
    /// Each step combines the normals a chain on `fine` would draw over the
    /// same interval, weighted so the result is again standard normal. `fine`
    /// must have the same endpoints and a step count that is a multiple of
    /// the sampler grid's, with every coarse point also a fine point.
    Coupled { fine: DiscretizationGrid },
}

/// Everything needed to run a chain.
#[derive(Debug, Clone)]
pub struct SamplerConfig<'a> {
    pub scheme: Scheme,
    pub grid: &'a DiscretizationGrid,
    pub schedule: &'a VarianceSchedule,
    pub model: &'a ScoreModel,
    pub seed: u64,
    pub n_samples: usize,
    pub noise: NoiseMode,
}

impl<'a> SamplerConfig<'a> {
    pub fn new(
        scheme: Scheme,
        grid: &'a DiscretizationGrid,
        schedule: &'a VarianceSchedule,
        model: &'a ScoreModel,
        seed: u64,
        n_samples: usize,
    ) -> Self {
        Self { scheme, grid, schedule, model, seed, n_samples, noise: NoiseMode::Independent }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.model.matches_grid(self.grid) {
            return Err(Error::InvalidInput("score model grid differs from sampler grid".into()));
        }
        if let NoiseMode::Coupled { fine } = &self.noise {
            let (n, nf) = (self.grid.n_steps(), fine.n_steps());
            if n == 0 || nf % n != 0 {
                return Err(Error::InvalidInput(format!("coupling needs a multiple of {n} fine steps, got {nf}")));
            }
            let r = nf / n;
            for (i, &t) in self.grid.points().iter().enumerate() {
                let tf = fine.points()[i * r];
                if (t - tf).abs() > 1e-9 * t.abs().max(1.0) {
                    return Err(Error::InvalidInput("coupling grid is not nested in the sampler grid".into()));
                }
            }
        }
        Ok(())
    }
}

/// Per reverse step: coefficients plus, when coupled, the fine-noise weights.
struct StepPlan {
    index: usize,
    a: f64,
    b: f64,
    c: f64,
    weights: Vec<f64>,
}

fn plan(config: &SamplerConfig) -> Vec<StepPlan> {
    let n = config.grid.n_steps();
    let gs = config.grid.step_gs(config.schedule);
    let fine_gs = match &config.noise {
        NoiseMode::Independent => None,
        NoiseMode::Coupled { fine } => Some(fine.step_gs(config.schedule)),
    };
    (0..n)
        .map(|k| {
            let j = n - k;
            let g = gs[j - 1];
            let (a, b, c) = config.scheme.coefficients(g);
            let weights = match &fine_gs {
                None => Vec::new(),
                Some(fg) => {
                    let r = fg.len() / n;
                    // fine steps covering [t_{j-1}, t_j], in reverse-time order
                    let sub: Vec<f64> = fg[(j - 1) * r..j * r].iter().rev().copied().collect();
                    let mut w: Vec<f64> = match config.scheme {
                        Scheme::EulerMaruyama => sub.iter().map(|g| g.sqrt()).collect(),
                        Scheme::ExponentialIntegrator => {
                            let mut after = 0.0_f64;
                            let mut w = vec![0.0; r];
                            for i in (0..r).rev() {
                                w[i] = (0.5 * after).exp() * sub[i].exp_m1().sqrt();
                                after += sub[i];
                            }
                            w
                        }
                    };
                    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
                    w.iter_mut().for_each(|v| *v /= norm);
                    w
                }
            };
            StepPlan { index: j, a, b, c, weights }
        })
        .collect()
}

/// Runs `n_samples` independent chains from `N(0, I)`; returns the states at
/// forward time `t_0`. Sample `i` draws all its randomness from stream `i` of
/// the seed: `d` prior normals, then `d` normals per (fine) step.
pub fn run_chain(config: &SamplerConfig) -> Result<Samples> {
    config.validate()?;
    let d = config.model.dim();
    let steps = plan(config);
    let mut out = Samples::zeros(config.n_samples, d);
    out.as_flat_mut().par_chunks_mut(d).enumerate().try_for_each(|(i, y)| {
        let mut r = rng::stream(config.seed, i as u64);
        let mut scratch = ScoreScratch::default();
        let mut s = vec![0.0; d];
        let mut z = vec![0.0; d];
        let mut zf = vec![0.0; d];
        rng::fill_normal(&mut r, y);
        for st in &steps {
            config.model.score_into(st.index, y, &mut s, &mut scratch)?;
            if st.weights.is_empty() {
                rng::fill_normal(&mut r, &mut z);
            } else {
                z.iter_mut().for_each(|v| *v = 0.0);
                for w in &st.weights {
                    rng::fill_normal(&mut r, &mut zf);
                    for (zi, f) in z.iter_mut().zip(&zf) {
                        *zi += w * f;
                    }
                }
            }
            for ((yi, si), zi) in y.iter_mut().zip(&s).zip(&z) {
                *yi = st.a * *yi + st.b * si + st.c * zi;
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("chain {i} diverged")));
        }
        Ok(())
    })?;
    Ok(out)
}

/// A Gaussian law `N(mean, cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLaw {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianLaw {
    pub fn standard(d: usize) -> Self {
        Self { mean: DVector::zeros(d), cov: DMatrix::identity(d, d) }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Exact law of the chain when every score evaluation is affine: each step maps
/// `(m, C)` to `(F m + u, F C Fᵀ + v I)` with `F = a I + b A`, `u = b β`,
/// `v = c²` for the score `A x + β`.
pub fn propagate_affine_law(config: &SamplerConfig) -> Result<GaussianLaw> {
    config.validate()?;
    let d = config.model.dim();
    let eye = DMatrix::<f64>::identity(d, d);
    let mut law = GaussianLaw::standard(d);
    let n = config.grid.n_steps();
    let gs = config.grid.step_gs(config.schedule);
    for k in 0..n {
        let j = n - k;
        let (a_mat, beta) = config
            .model
            .affine_at(j)?
            .ok_or_else(|| Error::UnsupportedModel(format!("{} score is not affine", config.model.kind_name())))?;
        let (a, b, c) = config.scheme.coefficients(gs[j - 1]);
        let f = &eye * a + a_mat * b;
        law.mean = &f * &law.mean + beta * b;
        law.cov = symmetrize(&(&f * &law.cov * f.transpose() + &eye * (c * c)));
    }
    if law.mean.iter().chain(law.cov.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("propagated law".into()));
    }
    Ok(law)
}

/// Objects the early-stopping map `x ↦ e^{G_δ/2} x` can act on.
pub trait Rescalable {
    fn scaled(self, factor: f64) -> Self;
}

impl Rescalable for Samples {
    fn scaled(mut self, factor: f64) -> Self {
        self.scale(factor);
        self
    }
}

impl Rescalable for GaussianLaw {
    fn scaled(self, factor: f64) -> Self {
        Self { mean: self.mean * factor, cov: self.cov * (factor * factor) }
    }
}

impl Rescalable for DVector<f64> {
    fn scaled(self, factor: f64) -> Self {
        self * factor
    }
}

pub fn rescale_factor(delta: f64, schedule: &VarianceSchedule) -> f64 {
    (0.5 * schedule.cumulative(delta)).exp()
}

/// Pushes early-stopped output forward by `x ↦ e^{G_δ/2} x`.
pub fn rescale_output<T: Rescalable>(x: T, delta: f64, schedule: &VarianceSchedule) -> Result<T> {
    if !(delta >= 0.0) {
        return Err(Error::InvalidParameter(format!("δ must be non-negative, got {delta}")));
    }
    Ok(x.scaled(rescale_factor(delta, schedule)))
}

/// The same chain on the grid refined `r` times, with the exact score of
/// `dist` at every sub-step and the same seed.
pub fn reference_chain(config: &SamplerConfig, dist: &GaussianMixture, r: usize) -> Result<Samples> {
    let fine = config.grid.refine(config.schedule, r)?;
    let model = ScoreModel::exact(dist, &fine, config.schedule)?;
    let fine_config = SamplerConfig {
        grid: &fine,
        model: &model,
        noise: NoiseMode::Independent,
        ..config.clone()
    };
    run_chain(&fine_config)
}
