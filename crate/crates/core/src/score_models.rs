//! Score estimators indexed by grid point.
//!
//! A model built for a grid `t_0 < … < t_N` answers queries at indices
//! `k = 1..=N`, i.e. at the times `t_k` where the reverse chain evaluates the
//! score. Index 0 is never queried.
//!
//! Weighted errors are normalized by `W = Σ_k G_k`, the clock length covered by
//! the grid, so that the weights `G_k / W` always sum to one.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::distributions::{forward_marginal, mean_and_stderr, sample_forward, ForwardMarginal, GaussianMixture, MixtureDensity, ScoreScratch};
use crate::error::{Error, Result};
use crate::linalg::Samples;
use crate::rng;
use crate::schedules::{DiscretizationGrid, VarianceSchedule};

/// Anything the DSM fit can draw clean data points from.
pub trait DataSource: Sync {
    fn dim(&self) -> usize;
    fn draw(&self, rng: &mut ChaCha8Rng, out: &mut [f64]);
}

impl DataSource for GaussianMixture {
    fn dim(&self) -> usize {
        GaussianMixture::dim(self)
    }

    fn draw(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        let mut z = vec![0.0; self.dim()];
        self.draw_into(rng, out, &mut z);
    }
}

/// Resamples uniformly from a fixed data set.
impl DataSource for Samples {
    fn dim(&self) -> usize {
        Samples::dim(self)
    }

    fn draw(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        let i = rng.random_range(0..self.len());
        out.copy_from_slice(self.row(i));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetPolicy {
    /// `‖c_k‖² = ε₀²` at every grid point.
    Uniform,
    /// `‖c_k‖² ∝ 1/σ²_{t_k}`.
    SigmaScaled,
}

impl BudgetPolicy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "sigma_scaled" => Ok(Self::SigmaScaled),
            other => Err(Error::Config(format!("unknown score policy `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Uniform => "uniform",
            Self::SigmaScaled => "sigma_scaled",
        }
    }
}

/// Direction of the constant bias added by a perturbed model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BiasDirection {
    FirstAxis,
    /// Independent uniform unit vector per grid point, drawn from this seed.
    Random(u64),
}

#[derive(Debug, Clone)]
enum Kind {
    Exact,
    Perturbed { biases: Vec<DVector<f64>>, policy: BudgetPolicy },
    DsmAffine { a: Vec<DMatrix<f64>>, b: Vec<DVector<f64>>, n_fit: usize },
}

/// A score model `s(x, t_k)` defined at the points of one grid.
#[derive(Debug, Clone)]
pub struct ScoreModel {
    dim: usize,
    points: Vec<f64>,
    /// Exact marginals at `t_1..t_N`; absent for fitted models.
    marginals: Option<Vec<ForwardMarginal>>,
    data: Option<GaussianMixture>,
    kind: Kind,
}

impl ScoreModel {
    /// The exact score `∇ log p_{t_k}` of the forward marginals of `dist`.
    pub fn exact(dist: &GaussianMixture, grid: &DiscretizationGrid, schedule: &VarianceSchedule) -> Result<Self> {
        let marginals = grid.points()[1..]
            .iter()
            .map(|&t| {
                let m = forward_marginal(dist, schedule, t)?;
                m.density()?;
                Ok(m)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dim: dist.dim(),
            points: grid.points().to_vec(),
            marginals: Some(marginals),
            data: Some(dist.clone()),
            kind: Kind::Exact,
        })
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            Kind::Exact => "exact",
            Kind::Perturbed { .. } => "perturbed",
            Kind::DsmAffine { .. } => "dsm_affine",
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of queryable indices, `N`.
    pub fn n_points(&self) -> usize {
        self.points.len() - 1
    }

    pub fn grid_points(&self) -> &[f64] {
        &self.points
    }

    pub fn matches_grid(&self, grid: &DiscretizationGrid) -> bool {
        self.points == grid.points()
    }

    /// The data law the model was built from, when known.
    pub fn data(&self) -> Option<&GaussianMixture> {
        self.data.as_ref()
    }

    pub fn policy(&self) -> Option<BudgetPolicy> {
        match &self.kind {
            Kind::Perturbed { policy, .. } => Some(*policy),
            _ => None,
        }
    }

    pub fn biases(&self) -> Option<&[DVector<f64>]> {
        match &self.kind {
            Kind::Perturbed { biases, .. } => Some(biases),
            _ => None,
        }
    }

    pub fn n_fit(&self) -> Option<usize> {
        match &self.kind {
            Kind::DsmAffine { n_fit, .. } => Some(*n_fit),
            _ => None,
        }
    }

    fn check_index(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.n_points() {
            return Err(Error::InvalidParameter(format!(
                "score index {k} outside 1..={}",
                self.n_points()
            )));
        }
        Ok(())
    }

    fn density(&self, k: usize) -> &MixtureDensity {
        self.marginals.as_ref().expect("exact marginals present")[k - 1]
            .density()
            .expect("checked at construction")
    }

    /// Writes `s(x, t_k)` into `out`.
    pub fn score_into(&self, k: usize, x: &[f64], out: &mut [f64], scratch: &mut ScoreScratch) -> Result<()> {
        self.check_index(k)?;
        match &self.kind {
            Kind::Exact => self.density(k).score_into(x, out, scratch),
            Kind::Perturbed { biases, .. } => {
                self.density(k).score_into(x, out, scratch);
                for (o, c) in out.iter_mut().zip(biases[k - 1].iter()) {
                    *o += c;
                }
            }
            Kind::DsmAffine { a, b, .. } => {
                let (a, b) = (&a[k - 1], &b[k - 1]);
                for (r, o) in out.iter_mut().enumerate() {
                    let mut v = b[r];
                    for (c, xc) in x.iter().enumerate() {
                        v += a[(r, c)] * xc;
                    }
                    *o = v;
                }
            }
        }
        Ok(())
    }

    pub fn score(&self, k: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.dim);
        self.score_into(k, x.as_slice(), out.as_mut_slice(), &mut ScoreScratch::default())?;
        Ok(out)
    }

    /// `(A_k, b_k)` with `s(x, t_k) = A_k x + b_k`, when the model is affine.
    pub fn affine_at(&self, k: usize) -> Result<Option<(DMatrix<f64>, DVector<f64>)>> {
        self.check_index(k)?;
        let exact_affine = || {
            let m = &self.marginals.as_ref().expect("exact marginals present")[k - 1];
            m.as_gaussian().map(|(mean, cov)| {
                let p = cov.clone().try_inverse().expect("marginal covariance is positive definite");
                let b = &p * mean;
                (-p, b)
            })
        };
        Ok(match &self.kind {
            Kind::Exact => exact_affine(),
            Kind::Perturbed { biases, .. } => exact_affine().map(|(a, b)| (a, b + &biases[k - 1])),
            Kind::DsmAffine { a, b, .. } => Some((a[k - 1].clone(), b[k - 1].clone())),
        })
    }

    pub fn is_affine(&self) -> bool {
        match &self.kind {
            Kind::DsmAffine { .. } => true,
            _ => self.data.as_ref().is_some_and(GaussianMixture::is_single_gaussian),
        }
    }
}

/// Clock increments `G_k`, variances `σ²_{t_k}` and `W = Σ G_k` of a grid.
fn grid_weights(grid: &DiscretizationGrid, schedule: &VarianceSchedule) -> (Vec<f64>, Vec<f64>, f64) {
    let gs = grid.step_gs(schedule);
    let s2 = grid.points()[1..].iter().map(|&t| schedule.sigma_sq(t)).collect();
    let w = gs.iter().sum();
    (gs, s2, w)
}

/// Squared bias norms for the sigma-scaled policy: `‖c_k‖² = κ/σ_k²` with `κ`
/// chosen so that `Σ G_k ‖c_k‖² / Σ G_k = ε₀²`.
pub fn sigma_scaled_budgets(gs: &[f64], sigma_sq: &[f64], eps0: f64) -> Vec<f64> {
    let w: f64 = gs.iter().sum();
    let s: f64 = gs.iter().zip(sigma_sq).map(|(g, s2)| g / s2).sum();
    let kappa = eps0 * eps0 * w / s;
    sigma_sq.iter().map(|s2| kappa / s2).collect()
}

/// Adds a constant bias `c_k` to an exact model so that the weighted error
/// equals `ε₀²` exactly.
pub fn make_perturbed(
    exact: &ScoreModel,
    grid: &DiscretizationGrid,
    schedule: &VarianceSchedule,
    eps0: f64,
    policy: BudgetPolicy,
    direction: BiasDirection,
) -> Result<ScoreModel> {
    if !matches!(exact.kind, Kind::Exact) {
        return Err(Error::UnsupportedModel("perturbation needs an exact base model".into()));
    }
    if !exact.matches_grid(grid) {
        return Err(Error::InvalidInput("score model grid differs from the given grid".into()));
    }
    if !(eps0 >= 0.0 && eps0.is_finite()) {
        return Err(Error::InvalidParameter(format!("ε₀ must be non-negative, got {eps0}")));
    }
    let d = exact.dim;
    let n = exact.n_points();
    let sq_norms = match policy {
        BudgetPolicy::Uniform => vec![eps0 * eps0; n],
        BudgetPolicy::SigmaScaled => {
            let (gs, s2, _) = grid_weights(grid, schedule);
            sigma_scaled_budgets(&gs, &s2, eps0)
        }
    };
    let biases = sq_norms
        .iter()
        .enumerate()
        .map(|(i, sq)| {
            let mut u = DVector::zeros(d);
            match direction {
                BiasDirection::FirstAxis => u[0] = 1.0,
                BiasDirection::Random(seed) => {
                    let mut r = rng::stream(seed, i as u64);
                    while u.norm() < 1e-12 {
                        rng::fill_normal(&mut r, u.as_mut_slice());
                    }
                    u /= u.norm();
                }
            }
            u * sq.sqrt()
        })
        .collect();
    let mut model = exact.clone();
    model.kind = Kind::Perturbed { biases, policy };
    Ok(model)
}

/// Fits `s(x, t_k) = A_k x + b_k` by least squares on the denoising target
/// `(α x₀ - x_t)/σ²`, with `n` fresh pairs per grid point.
pub fn fit_dsm_affine(
    data: &dyn DataSource,
    grid: &DiscretizationGrid,
    schedule: &VarianceSchedule,
    n: usize,
    seed: u64,
) -> Result<ScoreModel> {
    let d = data.dim();
    if n < d + 2 {
        return Err(Error::FitFailure(format!("need at least d + 2 = {} samples, got {n}", d + 2)));
    }
    let times = &grid.points()[1..];
    let fits = times
        .par_iter()
        .enumerate()
        .map(|(i, &t)| fit_one(data, schedule, t, n, rng::derive_seed(seed, &format!("dsm/{i}"))))
        .collect::<Result<Vec<_>>>()?;
    let (a, b) = fits.into_iter().unzip();
    Ok(ScoreModel {
        dim: d,
        points: grid.points().to_vec(),
        marginals: None,
        data: None,
        kind: Kind::DsmAffine { a, b, n_fit: n },
    })
}

fn fit_one(data: &dyn DataSource, schedule: &VarianceSchedule, t: f64, n: usize, seed: u64) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let d = data.dim();
    let alpha = schedule.alpha_at(t);
    let s2 = schedule.sigma_sq(t);
    if !(s2 > 0.0) {
        return Err(Error::FitFailure(format!("σ² = 0 at t = {t}")));
    }
    let sigma = s2.sqrt();
    let p = d + 1;
    // Accumulated ΦᵀΦ and ΦᵀY with features φ = (x_t, 1).
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut cross = DMatrix::<f64>::zeros(p, d);
    let mut rng = rng::stream(seed, 0);
    let mut x0 = vec![0.0; d];
    let mut z = vec![0.0; d];
    let mut phi = vec![1.0; p];
    for _ in 0..n {
        data.draw(&mut rng, &mut x0);
        rng::fill_normal(&mut rng, &mut z);
        for j in 0..d {
            phi[j] = alpha * x0[j] + sigma * z[j];
        }
        for r in 0..p {
            for c in 0..p {
                gram[(r, c)] += phi[r] * phi[c];
            }
            for j in 0..d {
                // (α x₀ - x_t)/σ² = -z/σ
                cross[(r, j)] += phi[r] * (-z[j] / sigma);
            }
        }
    }
    let inv_n = 1.0 / n as f64;
    gram *= inv_n;
    cross *= inv_n;
    for i in 0..p {
        gram[(i, i)] += 1e-10;
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::FitFailure(format!("singular design at t = {t}")))?;
    let w = chol.solve(&cross);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::FitFailure(format!("non-finite coefficients at t = {t}")));
    }
    let a = w.rows(0, d).transpose();
    let b = w.row(d).transpose();
    Ok((a, b))
}

/// Monte Carlo estimate of `Σ_k (G_k/W) E_{p_{t_k}} ‖∇ log p_{t_k} - s(·, t_k)‖²`
/// with its standard error. Biases of a perturbed model are deterministic, so
/// that case is evaluated exactly.
pub fn weighted_score_error(
    model: &ScoreModel,
    dist: &GaussianMixture,
    grid: &DiscretizationGrid,
    schedule: &VarianceSchedule,
    n_mc: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if !model.matches_grid(grid) {
        return Err(Error::InvalidInput("score model grid differs from the given grid".into()));
    }
    let (gs, _, w) = grid_weights(grid, schedule);
    let same_data = model.data.as_ref() == Some(dist);
    match &model.kind {
        Kind::Exact if same_data => return Ok((0.0, 0.0)),
        Kind::Perturbed { biases, .. } if same_data => {
            let v = gs.iter().zip(biases).map(|(g, c)| g * c.norm_squared()).sum::<f64>() / w;
            return Ok((v, 0.0));
        }
        _ => {}
    }
    let exact = ScoreModel::exact(dist, grid, schedule)?;
    let d = dist.dim();
    let per_point = (1..=model.n_points())
        .into_par_iter()
        .map(|k| {
            let xs = sample_forward(dist, schedule, grid.time(k), n_mc, rng::derive_seed(seed, &format!("err/{k}")));
            let mut scratch = ScoreScratch::default();
            let (mut s_true, mut s_model) = (vec![0.0; d], vec![0.0; d]);
            let mut sq = Vec::with_capacity(n_mc);
            for x in xs.rows() {
                exact.score_into(k, x, &mut s_true, &mut scratch)?;
                model.score_into(k, x, &mut s_model, &mut scratch)?;
                sq.push(s_true.iter().zip(&s_model).map(|(a, b)| (a - b).powi(2)).sum());
            }
            Ok(mean_and_stderr(&sq))
        })
        .collect::<Result<Vec<_>>>()?;
    let value = gs.iter().zip(&per_point).map(|(g, (m, _))| g * m).sum::<f64>() / w;
    let var = gs.iter().zip(&per_point).map(|(g, (_, se))| (g * se).powi(2)).sum::<f64>() / (w * w);
    Ok((value, var.sqrt()))
}

/// Raw DSM error level `ε₀² W / Σ_k G_k/σ²_{t_k}` that keeps the weighted error
/// within `ε₀²`.
pub fn epsilon_budget(grid: &DiscretizationGrid, schedule: &VarianceSchedule, eps0: f64) -> f64 {
    let (gs, s2, w) = grid_weights(grid, schedule);
    let s: f64 = gs.iter().zip(&s2).map(|(g, v)| g / v).sum();
    eps0 * eps0 * w / s
}
