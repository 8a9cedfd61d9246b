//! Gaussian-mixture data laws and their forward marginals.
//!
//! A mixture is closed under the forward flow: component `(w, μ, Σ)` becomes
//! `(w, α_t μ, α_t² Σ + σ_t² I)`. Point masses are zero-covariance components,
//! so they only acquire a density once `σ_t > 0`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{check_psd, psd_sqrt, spd_inverse_logdet, Samples};
use crate::rng;
use crate::schedules::VarianceSchedule;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl Component {
    pub fn new(weight: f64, mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        Self { weight, mean, cov }
    }
}

/// Finite Gaussian mixture in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    dim: usize,
    components: Vec<Component>,
    /// `L_i` with `L_i L_iᵀ = Σ_i`, used for sampling.
    factors: Vec<DMatrix<f64>>,
    cumulative_weights: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidInput("mixture needs at least one component".into()))?;
        let dim = first.mean.len();
        if dim == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        let mut total = 0.0;
        for (i, c) in components.iter().enumerate() {
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return Err(Error::InvalidInput(format!("component {i} has non-positive weight")));
            }
            if c.mean.len() != dim || c.cov.nrows() != dim || c.cov.ncols() != dim {
                return Err(Error::InvalidInput(format!("component {i} has inconsistent dimension")));
            }
            if c.mean.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("component {i} has a non-finite mean")));
            }
            check_psd(&c.cov, &format!("covariance of component {i}"))?;
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("weights sum to {total}, not 1")));
        }
        let factors = components.iter().map(|c| psd_sqrt(&c.cov)).collect();
        let cumulative_weights = components
            .iter()
            .scan(0.0, |acc, c| {
                *acc += c.weight;
                Some(*acc)
            })
            .collect();
        Ok(Self { dim, components, factors, cumulative_weights })
    }

    pub fn gaussian(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        Self::new(vec![Component::new(1.0, mean, cov)])
    }

    pub fn standard_gaussian(d: usize) -> Result<Self> {
        Self::gaussian(DVector::zeros(d), DMatrix::identity(d, d))
    }

    pub fn point_mass(at: DVector<f64>) -> Result<Self> {
        let d = at.len();
        Self::gaussian(at, DMatrix::zeros(d, d))
    }

    /// Equal-weight components at `±μ e₁` with covariance `var·I`.
    pub fn two_point(d: usize, mu: f64, var: f64) -> Result<Self> {
        let mut m = DVector::zeros(d);
        if d > 0 {
            m[0] = mu;
        }
        let cov = DMatrix::identity(d, d) * var;
        Self::new(vec![
            Component::new(0.5, m.clone(), cov.clone()),
            Component::new(0.5, -m, cov),
        ])
    }

    /// Named mixtures used by the experiment presets.
    ///
    /// - `bimodal`: `two_point(d, 2, 0.25)`.
    /// - `three_point`: point masses at `e₁`, `-e₁`, `e₂` with weights 0.4/0.35/0.25.
    /// - `three_component`: the same means with covariance `0.05 I`.
    pub fn preset(name: &str, d: usize) -> Result<Self> {
        match name {
            "bimodal" => Self::two_point(d, 2.0, 0.25),
            "three_point" | "three_component" => {
                if d < 2 {
                    return Err(Error::InvalidInput(format!("{name} needs d >= 2")));
                }
                let var = if name == "three_point" { 0.0 } else { 0.05 };
                let unit = |i: usize, s: f64| {
                    let mut v = DVector::zeros(d);
                    v[i] = s;
                    v
                };
                let cov = DMatrix::identity(d, d) * var;
                Self::new(vec![
                    Component::new(0.4, unit(0, 1.0), cov.clone()),
                    Component::new(0.35, unit(0, -1.0), cov.clone()),
                    Component::new(0.25, unit(1, 1.0), cov),
                ])
            }
            other => Err(Error::Config(format!("unknown mixture preset `{other}`"))),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn is_single_gaussian(&self) -> bool {
        self.components.len() == 1
    }

    /// `M₂ = Σ w_i (‖μ_i‖² + tr Σ_i)`.
    pub fn second_moment(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight * (c.mean.norm_squared() + c.cov.trace()))
            .sum()
    }

    pub fn mean(&self) -> DVector<f64> {
        self.components
            .iter()
            .fold(DVector::zeros(self.dim), |acc, c| acc + &c.mean * c.weight)
    }

    /// Component-wise affine image `x ↦ a x + noise`, `noise ~ N(0, var I)`.
    pub fn scaled_and_smoothed(&self, a: f64, var: f64) -> Self {
        let eye = DMatrix::identity(self.dim, self.dim);
        let comps = self
            .components
            .iter()
            .map(|c| Component::new(c.weight, &c.mean * a, &c.cov * (a * a) + &eye * var))
            .collect();
        Self::new(comps).expect("affine image of a valid mixture is valid")
    }

    /// Law of `x + σ z` for `x` from this mixture.
    pub fn gaussian_perturbation(&self, var: f64) -> Self {
        self.scaled_and_smoothed(1.0, var)
    }

    /// Draws one point into `out`.
    pub fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64], z: &mut [f64]) {
        let u: f64 = rng.random();
        let i = self
            .cumulative_weights
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.components.len() - 1);
        rng::fill_normal(rng, z);
        let comp = &self.components[i];
        let l = &self.factors[i];
        for r in 0..self.dim {
            let mut v = comp.mean[r];
            for c in 0..self.dim {
                v += l[(r, c)] * z[c];
            }
            out[r] = v;
        }
    }

    /// `n` i.i.d. draws; sample `i` uses stream `i` of `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Samples {
        let d = self.dim;
        let mut s = Samples::zeros(n, d);
        s.as_flat_mut().par_chunks_mut(d).enumerate().for_each(|(i, row)| {
            let mut rng = rng::stream(seed, i as u64);
            let mut z = vec![0.0; d];
            self.draw_into(&mut rng, row, &mut z);
        });
        s
    }

    /// Precomputed evaluator for density, score and Hessian. Fails when a
    /// component covariance is singular.
    pub fn density(&self) -> Result<MixtureDensity> {
        MixtureDensity::new(self)
    }
}

#[derive(Debug, Clone)]
struct ComponentCache {
    /// `ln w_i - ½ ln det C_i`.
    log_norm: f64,
    mean: Vec<f64>,
    /// Row-major `C_i^{-1}`.
    precision: Vec<f64>,
}

/// Reusable buffers for [`MixtureDensity::score_into`].
#[derive(Debug, Clone, Default)]
pub struct ScoreScratch {
    logw: Vec<f64>,
    grads: Vec<f64>,
}

/// Density, score and Hessian of a mixture whose covariances are all positive
/// definite. Responsibilities are computed in log space.
#[derive(Debug, Clone)]
pub struct MixtureDensity {
    dim: usize,
    comps: Vec<ComponentCache>,
}

impl MixtureDensity {
    pub fn new(mix: &GaussianMixture) -> Result<Self> {
        let dim = mix.dim();
        let comps = mix
            .components()
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let (inv, logdet) = spd_inverse_logdet(&c.cov).ok_or_else(|| {
                    Error::NoDensity(format!("component {i} has a singular covariance"))
                })?;
                let mut precision = vec![0.0; dim * dim];
                for r in 0..dim {
                    for k in 0..dim {
                        precision[r * dim + k] = inv[(r, k)];
                    }
                }
                Ok(ComponentCache {
                    log_norm: c.weight.ln() - 0.5 * logdet,
                    mean: c.mean.iter().copied().collect(),
                    precision,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dim, comps })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Fills per-component gradients `g_i = -C_i^{-1}(x - m_i)` and log weights.
    fn component_terms(&self, x: &[f64], scratch: &mut ScoreScratch) {
        let d = self.dim;
        let k = self.comps.len();
        scratch.logw.resize(k, 0.0);
        scratch.grads.resize(k * d, 0.0);
        for (i, c) in self.comps.iter().enumerate() {
            let g = &mut scratch.grads[i * d..(i + 1) * d];
            let mut quad = 0.0;
            for r in 0..d {
                let row = &c.precision[r * d..(r + 1) * d];
                let mut acc = 0.0;
                for j in 0..d {
                    acc += row[j] * (x[j] - c.mean[j]);
                }
                g[r] = -acc;
                quad += acc * (x[r] - c.mean[r]);
            }
            scratch.logw[i] = c.log_norm - 0.5 * quad;
        }
    }

    /// Turns `scratch.logw` into responsibilities, returning the log-sum-exp.
    fn normalize(scratch: &mut ScoreScratch) -> f64 {
        let max = scratch.logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for w in scratch.logw.iter_mut() {
            *w = (*w - max).exp();
            sum += *w;
        }
        for w in scratch.logw.iter_mut() {
            *w /= sum;
        }
        max + sum.ln()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let mut scratch = ScoreScratch::default();
        self.component_terms(x, &mut scratch);
        Self::normalize(&mut scratch) - 0.5 * self.dim as f64 * LN_2PI
    }

    /// `∇ log p(x)` written into `out`.
    pub fn score_into(&self, x: &[f64], out: &mut [f64], scratch: &mut ScoreScratch) {
        let d = self.dim;
        self.component_terms(x, scratch);
        if self.comps.len() == 1 {
            out.copy_from_slice(&scratch.grads[..d]);
            return;
        }
        Self::normalize(scratch);
        out.iter_mut().for_each(|v| *v = 0.0);
        for (i, r) in scratch.logw.iter().enumerate() {
            for (o, g) in out.iter_mut().zip(&scratch.grads[i * d..(i + 1) * d]) {
                *o += r * g;
            }
        }
    }

    pub fn score(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        self.score_into(x.as_slice(), out.as_mut_slice(), &mut ScoreScratch::default());
        out
    }

    /// `∇² log p(x) = Σ r_i (-C_i^{-1} + g_i g_iᵀ) - s sᵀ`.
    pub fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let d = self.dim;
        let mut scratch = ScoreScratch::default();
        self.component_terms(x.as_slice(), &mut scratch);
        Self::normalize(&mut scratch);
        let mut h = DMatrix::<f64>::zeros(d, d);
        let mut s = DVector::<f64>::zeros(d);
        for (i, c) in self.comps.iter().enumerate() {
            let r = scratch.logw[i];
            let g = &scratch.grads[i * d..(i + 1) * d];
            for a in 0..d {
                s[a] += r * g[a];
                for b in 0..d {
                    h[(a, b)] += r * (g[a] * g[b] - c.precision[a * d + b]);
                }
            }
        }
        h - &s * s.transpose()
    }
}

/// Law of `x_t` under the forward flow started from a mixture.
#[derive(Debug, Clone)]
pub struct ForwardMarginal {
    t: f64,
    alpha: f64,
    sigma_sq: f64,
    mixture: GaussianMixture,
    density: Option<MixtureDensity>,
}

/// `p_t` for data law `dist` under `schedule`.
pub fn forward_marginal(dist: &GaussianMixture, schedule: &VarianceSchedule, t: f64) -> Result<ForwardMarginal> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!("time must be non-negative, got {t}")));
    }
    let alpha = schedule.alpha_at(t);
    let sigma_sq = schedule.sigma_sq(t);
    let mixture = dist.scaled_and_smoothed(alpha, sigma_sq);
    let density = mixture.density().ok();
    Ok(ForwardMarginal { t, alpha, sigma_sq, mixture, density })
}

impl ForwardMarginal {
    pub fn time(&self) -> f64 {
        self.t
    }

    /// `α_t`.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn sigma_sq(&self) -> f64 {
        self.sigma_sq
    }

    pub fn mixture(&self) -> &GaussianMixture {
        &self.mixture
    }

    pub fn dim(&self) -> usize {
        self.mixture.dim()
    }

    pub fn density(&self) -> Result<&MixtureDensity> {
        self.density.as_ref().ok_or_else(|| {
            Error::NoDensity(format!(
                "marginal at t = {} has a singular component covariance",
                self.t
            ))
        })
    }

    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.density()?.log_density(x.as_slice()))
    }

    pub fn score(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.density()?.score(x))
    }

    pub fn hessian_log_density(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.density()?.hessian(x))
    }

    /// `(m, C)` when the marginal is a single Gaussian.
    pub fn as_gaussian(&self) -> Option<(&DVector<f64>, &DMatrix<f64>)> {
        if self.mixture.is_single_gaussian() {
            let c = &self.mixture.components()[0];
            Some((&c.mean, &c.cov))
        } else {
            None
        }
    }
}

/// `n` draws of `x_t = α_t x₀ + σ_t z`.
pub fn sample_forward(
    dist: &GaussianMixture,
    schedule: &VarianceSchedule,
    t: f64,
    n: usize,
    seed: u64,
) -> Samples {
    let a = schedule.alpha_at(t);
    let s = schedule.sigma_sq(t).sqrt();
    let d = dist.dim();
    let mut out = Samples::zeros(n, d);
    out.as_flat_mut().par_chunks_mut(d).enumerate().for_each(|(i, row)| {
        let mut rng = rng::stream(seed, i as u64);
        let mut z = vec![0.0; d];
        dist.draw_into(&mut rng, row, &mut z);
        rng::fill_normal(&mut rng, &mut z);
        for (x, zi) in row.iter_mut().zip(&z) {
            *x = a * *x + s * zi;
        }
    });
    out
}

/// A KL value with its Monte Carlo standard error (zero when exact).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlEstimate {
    pub value: f64,
    pub stderr: f64,
}

/// `KL(N(m, C) ‖ N(0, I)) = ½(tr C - d - ln det C + ‖m‖²)`.
pub fn kl_gaussian_to_standard(mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    check_psd(cov, "covariance")?;
    let (_, logdet) = spd_inverse_logdet(cov)
        .ok_or_else(|| Error::InvalidInput("covariance is singular".into()))?;
    let d = mean.len() as f64;
    Ok((0.5 * (cov.trace() - d - logdet + mean.norm_squared())).max(0.0))
}

/// `KL(p_t ‖ γ_d)`: closed form for a single Gaussian, otherwise a direct
/// Monte Carlo average of `log p_t - log γ_d` over `n_mc` draws from `p_t`.
pub fn kl_to_standard_gaussian(marginal: &ForwardMarginal, n_mc: usize, seed: u64) -> Result<KlEstimate> {
    if let Some((m, c)) = marginal.as_gaussian() {
        return Ok(KlEstimate { value: kl_gaussian_to_standard(m, c)?, stderr: 0.0 });
    }
    let density = marginal.density()?;
    let d = marginal.dim();
    let samples = marginal.mixture().sample(n_mc, seed);
    let terms: Vec<f64> = samples
        .as_flat()
        .par_chunks(d)
        .map(|x| {
            let log_gamma = -0.5 * (d as f64 * LN_2PI + x.iter().map(|v| v * v).sum::<f64>());
            density.log_density(x) - log_gamma
        })
        .collect();
    let (mean, se) = mean_and_stderr(&terms);
    Ok(KlEstimate { value: mean, stderr: se })
}

pub(crate) fn mean_and_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
