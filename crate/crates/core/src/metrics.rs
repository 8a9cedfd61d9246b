//! Distances between sampler output and targets, bound formulas and rate fits.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::distributions::{mean_and_stderr, GaussianMixture};
use crate::error::{Error, Result};
use crate::linalg::{check_psd, psd_sqrt, spd_inverse_logdet, Samples};
use crate::rng;
use crate::samplers::GaussianLaw;

/// One measured quantity with its provenance.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ErrorReport {
    pub metric: String,
    pub value: f64,
    /// Zero for closed-form values.
    pub stderr: f64,
    pub meta: ReportMeta,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReportMeta {
    pub n_steps: Option<usize>,
    pub dim: Option<usize>,
    pub delta: Option<f64>,
    pub scheme: Option<String>,
    pub schedule: Option<String>,
    pub eps0: Option<f64>,
}

impl ErrorReport {
    pub fn new(metric: impl Into<String>, value: f64, stderr: f64) -> Result<Self> {
        if !(value >= 0.0 && stderr >= 0.0) {
            return Err(Error::Numeric(format!("report value {value} ± {stderr}")));
        }
        Ok(Self { metric: metric.into(), value, stderr, meta: ReportMeta::default() })
    }
}

/// `KL(p ‖ q)` between Gaussian laws.
pub fn kl_gaussian(p: &GaussianLaw, q: &GaussianLaw) -> Result<f64> {
    let d = p.dim();
    if q.dim() != d {
        return Err(Error::InvalidInput("laws have different dimensions".into()));
    }
    let (_, logdet_p) = spd_inverse_logdet(&p.cov).ok_or_else(|| Error::InvalidInput("first covariance is singular".into()))?;
    let (q_inv, logdet_q) = spd_inverse_logdet(&q.cov).ok_or_else(|| Error::InvalidInput("second covariance is singular".into()))?;
    let diff = &q.mean - &p.mean;
    let trace = (&q_inv * &p.cov).trace();
    let quad = diff.dot(&(&q_inv * &diff));
    Ok((0.5 * (trace - d as f64 + quad + logdet_q - logdet_p)).max(0.0))
}

/// Bures–Wasserstein distance between Gaussian laws.
pub fn w2_gaussian(p: &GaussianLaw, q: &GaussianLaw) -> f64 {
    let root_q = psd_sqrt(&q.cov);
    let cross = psd_sqrt(&(&root_q * &p.cov * &root_q));
    let sq = (&p.mean - &q.mean).norm_squared() + p.cov.trace() + q.cov.trace() - 2.0 * cross.trace();
    sq.max(0.0).sqrt()
}

/// Squared 1-d W2 between two empirical measures, via the merged quantile
/// functions. Both inputs must be sorted.
fn w2_sq_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    if a.len() == b.len() {
        return a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / na;
    }
    let (mut i, mut j) = (0usize, 0usize);
    let mut u = 0.0;
    let mut total = 0.0;
    while i < a.len() && j < b.len() {
        let next_a = (i + 1) as f64 / na;
        let next_b = (j + 1) as f64 / nb;
        let next = next_a.min(next_b);
        total += (next - u) * (a[i] - b[j]).powi(2);
        u = next;
        if next_a <= next {
            i += 1;
        }
        if next_b <= next {
            j += 1;
        }
    }
    total
}

/// Mean over `n_projections` random unit directions of the exact 1-d W2
/// between the projected samples, with the standard error across directions.
pub fn sliced_w2(a: &Samples, b: &Samples, n_projections: usize, seed: u64) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("sliced W2 needs non-empty sample sets".into()));
    }
    if a.dim() != b.dim() {
        return Err(Error::InvalidInput("sample sets have different dimensions".into()));
    }
    if n_projections == 0 {
        return Err(Error::InvalidParameter("need at least one projection".into()));
    }
    let d = a.dim();
    let project = |s: &Samples, theta: &[f64]| {
        let mut v: Vec<f64> = s.rows().map(|x| x.iter().zip(theta).map(|(p, q)| p * q).sum()).collect();
        v.sort_unstable_by(f64::total_cmp);
        v
    };
    let values: Vec<f64> = (0..n_projections)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, i as u64);
            let mut theta = vec![0.0; d];
            let mut norm = 0.0;
            while norm < 1e-12 {
                rng::fill_normal(&mut r, &mut theta);
                norm = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
            }
            theta.iter_mut().for_each(|v| *v /= norm);
            w2_sq_sorted(&project(a, &theta), &project(b, &theta)).sqrt()
        })
        .collect();
    Ok(mean_and_stderr(&values))
}

/// `2E‖X-Y‖ - E‖X-X'‖ - E‖Y-Y'‖` with U-statistics for the within-set terms.
/// Quadratic in the sample sizes.
pub fn energy_distance(a: &Samples, b: &Samples) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidInput("energy distance needs two points per set".into()));
    }
    if a.dim() != b.dim() {
        return Err(Error::InvalidInput("sample sets have different dimensions".into()));
    }
    let dist = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    let mean_cross = |s: &Samples, t: &Samples| -> f64 {
        let sum: f64 = (0..s.len())
            .into_par_iter()
            .map(|i| t.rows().map(|y| dist(s.row(i), y)).sum::<f64>())
            .sum();
        sum / (s.len() * t.len()) as f64
    };
    let mean_within = |s: &Samples| -> f64 {
        let n = s.len();
        let sum: f64 = (0..n)
            .into_par_iter()
            .map(|i| (i + 1..n).map(|j| dist(s.row(i), s.row(j))).sum::<f64>())
            .sum();
        2.0 * sum / (n * (n - 1)) as f64
    };
    Ok((2.0 * mean_cross(a, b) - mean_within(a) - mean_within(b)).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundSetting {
    SmoothEi,
    SmoothEm,
    GeneralEi,
    GeneralEm,
    /// Smooth data without early stopping on an optimally spaced grid.
    SmoothNostop,
}

impl BoundSetting {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "smooth_ei" => Ok(Self::SmoothEi),
            "smooth_em" => Ok(Self::SmoothEm),
            "general_ei" => Ok(Self::GeneralEi),
            "general_em" => Ok(Self::GeneralEm),
            "smooth_nostop" => Ok(Self::SmoothNostop),
            other => Err(Error::Config(format!("unknown bound setting `{other}`"))),
        }
    }
}

/// Inputs to [`theoretical_bound`]; each setting reads only what it needs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BoundParams {
    pub m2: Option<f64>,
    pub d: Option<f64>,
    pub g_t: Option<f64>,
    pub eps0_sq: Option<f64>,
    pub lipschitz: Option<f64>,
    pub pi2: Option<f64>,
    pub pi3: Option<f64>,
    pub pi: Option<f64>,
    pub n: Option<f64>,
}

fn need(v: Option<f64>, name: &str) -> Result<f64> {
    v.ok_or_else(|| Error::Config(format!("bound needs parameter `{name}`")))
}

/// Upper-bound expressions with every implicit constant set to one.
///
/// All settings share `(M₂ + d) e^{-G_T} + G_T ε₀²`; the discretization term is
/// `d L² Π₂` (smooth), `d² Π` (general) or `d² (ln L + G_T)² / N` (no early
/// stopping). EM settings add `M₂ Π₃`.
pub fn theoretical_bound(setting: BoundSetting, p: &BoundParams) -> Result<f64> {
    let m2 = need(p.m2, "m2")?;
    let d = need(p.d, "d")?;
    let g_t = need(p.g_t, "g_t")?;
    let eps0_sq = need(p.eps0_sq, "eps0_sq")?;
    let base = (m2 + d) * (-g_t).exp() + g_t * eps0_sq;
    let disc = match setting {
        BoundSetting::SmoothEi | BoundSetting::SmoothEm => {
            let l = need(p.lipschitz, "lipschitz")?;
            d * l * l * need(p.pi2, "pi2")?
        }
        BoundSetting::GeneralEi | BoundSetting::GeneralEm => d * d * need(p.pi, "pi")?,
        BoundSetting::SmoothNostop => {
            let l = need(p.lipschitz, "lipschitz")?;
            d * d * (l.ln() + g_t).powi(2) / need(p.n, "n")?
        }
    };
    let extra = match setting {
        BoundSetting::SmoothEm | BoundSetting::GeneralEm => m2 * need(p.pi3, "pi3")?,
        _ => 0.0,
    };
    Ok(base + disc + extra)
}

/// Least-squares line through `(ln x, ln y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub stderr: f64,
    pub intercept: f64,
}

pub fn rate_fit(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(Error::InvalidInput(format!("rate fit needs at least 3 points, got {}", points.len())));
    }
    if points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(Error::InvalidInput("rate fit needs positive values".into()));
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidInput("rate fit needs distinct abscissae".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let stderr = (ssr / (n - 2.0) / sxx).sqrt();
    Ok(RateFit { slope, stderr, intercept })
}

/// Scale proxy for a sub-exponential variable: its `(1 - e^{-1})` empirical
/// quantile. For `Exp(λ)` data this recovers the scale `λ`.
pub fn subexp_norm_proxy(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidInput("no values".into()));
    }
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    let q = 1.0 - (-1.0f64).exp();
    let idx = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1;
    Ok(v[idx])
}

/// Proxy of the sub-exponential norm of `‖∇² log p_σ(x)‖_F`, `x ~ p_σ`, where
/// `p_σ` is `dist` convolved with `N(0, σ² I)`.
pub fn hessian_tail_proxy(dist: &GaussianMixture, sigma_sq: f64, n: usize, seed: u64) -> Result<f64> {
    if !(sigma_sq > 0.0) {
        return Err(Error::InvalidParameter(format!("σ² must be positive, got {sigma_sq}")));
    }
    let smoothed = dist.gaussian_perturbation(sigma_sq);
    let density = smoothed.density()?;
    let xs = smoothed.sample(n, seed);
    let norms: Vec<f64> = xs
        .as_flat()
        .par_chunks(xs.dim())
        .map(|x| density.hessian(&DVector::from_column_slice(x)).norm())
        .collect();
    subexp_norm_proxy(&norms)
}

/// Operator norm of a covariance inverse, `1/λ_min(C)`.
pub fn precision_norm(cov: &DMatrix<f64>) -> Result<f64> {
    check_psd(cov, "covariance")?;
    let lmin = crate::linalg::min_eigenvalue(cov);
    if lmin <= 0.0 {
        return Err(Error::InvalidInput("covariance is singular".into()));
    }
    Ok(1.0 / lmin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn law(m: &[f64], c: DMatrix<f64>) -> GaussianLaw {
        GaussianLaw { mean: DVector::from_column_slice(m), cov: c }
    }

    fn random_pd(r: &mut rand_chacha::ChaCha8Rng, d: usize) -> DMatrix<f64> {
        let b = DMatrix::from_fn(d, d, |_, _| r.random_range(-1.0..1.0));
        &b * b.transpose() + DMatrix::identity(d, d) * 0.1
    }

    #[test]
    fn kl_examples() {
        let i2 = DMatrix::identity(2, 2);
        let p = law(&[0.0, 0.0], i2.clone());
        assert_eq!(kl_gaussian(&p, &p).unwrap(), 0.0);
        assert!((kl_gaussian(&p, &law(&[1.0, 0.0], i2.clone())).unwrap() - 0.5).abs() < 1e-15);
        let wide = law(&[0.0], DMatrix::identity(1, 1) * 2.0);
        let unit = law(&[0.0], DMatrix::identity(1, 1));
        assert!((kl_gaussian(&wide, &unit).unwrap() - 0.5 * (1.0 - 2f64.ln())).abs() < 1e-15);
        assert!(matches!(kl_gaussian(&p, &law(&[0.0, 0.0], DMatrix::zeros(2, 2))), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn kl_positive_for_distinct_laws() {
        let mut r = rng::stream(1, 0);
        for _ in 0..200 {
            let d = r.random_range(1..5);
            let c = random_pd(&mut r, d);
            let m: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
            let p = law(&m, c.clone());
            assert!(kl_gaussian(&p, &p).unwrap() < 1e-12);
            let mut m2 = m.clone();
            m2[0] += 1e-5;
            assert!(kl_gaussian(&p, &law(&m2, c.clone())).unwrap() > 0.0);
            let q = law(&m, random_pd(&mut r, d));
            assert!(kl_gaussian(&p, &q).unwrap() > 0.0);
        }
    }

    #[test]
    fn w2_examples() {
        let z = DMatrix::zeros(2, 2);
        let p = law(&[0.0, 0.0], DMatrix::identity(2, 2));
        assert!(w2_gaussian(&p, &p) < 1e-7);
        assert!((w2_gaussian(&law(&[0.0, 0.0], z.clone()), &law(&[1.0, 0.0], z)) - 1.0).abs() < 1e-15);
        let a = law(&[0.0], DMatrix::identity(1, 1));
        let b = law(&[0.0], DMatrix::identity(1, 1) * 4.0);
        assert!((w2_gaussian(&a, &b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn w2_triangle_inequality() {
        let mut r = rng::stream(2, 0);
        for _ in 0..200 {
            let d = r.random_range(1..5);
            let mk = |r: &mut rand_chacha::ChaCha8Rng| {
                let m: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
                law(&m, random_pd(r, d))
            };
            let (a, b, c) = (mk(&mut r), mk(&mut r), mk(&mut r));
            assert!(w2_gaussian(&a, &c) <= w2_gaussian(&a, &b) + w2_gaussian(&b, &c) + 1e-9);
        }
    }

    #[test]
    fn w2_sorted_handles_unequal_sizes() {
        // {0, 1} against {0, 0.5, 1}: quantile pieces (0,1/3):0, (1/3,1/2):0.25, (1/2,2/3):0.25, (2/3,1):0
        let v = w2_sq_sorted(&[0.0, 1.0], &[0.0, 0.5, 1.0]);
        assert!((v - (0.25 / 6.0 + 0.25 / 6.0)).abs() < 1e-15);
        assert!((w2_sq_sorted(&[1.0, 1.0], &[0.0, 0.0, 0.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sliced_w2_examples() {
        let d = 3;
        let n = 500;
        let a = Samples::zeros(n, d);
        assert_eq!(sliced_w2(&a, &a, 50, 1).unwrap().0, 0.0);
        let mut b = Samples::zeros(n, d);
        for i in 0..n {
            b.row_mut(i)[0] = 1.0;
        }
        // E|θ₁| for θ uniform on the sphere in R³ is 1/2
        let (v, se) = sliced_w2(&a, &b, 4000, 7).unwrap();
        assert!((v - 0.5).abs() < 4.0 * se, "{v} ± {se}");
        assert!(sliced_w2(&Samples::zeros(0, d), &a, 10, 0).is_err());
    }

    #[test]
    fn sliced_w2_rotation_invariance() {
        let mix = GaussianMixture::two_point(2, 1.5, 0.3).unwrap();
        let a = mix.sample(2000, 1);
        let b = GaussianMixture::standard_gaussian(2).unwrap().sample(2000, 2);
        let rot = |s: &Samples, th: f64| {
            let (c, si) = (th.cos(), th.sin());
            let rows: Vec<Vec<f64>> = s.rows().map(|x| vec![c * x[0] - si * x[1], si * x[0] + c * x[1]]).collect();
            Samples::from_rows(&rows).unwrap()
        };
        let (v1, s1) = sliced_w2(&a, &b, 500, 3).unwrap();
        let (v2, s2) = sliced_w2(&rot(&a, 0.7), &rot(&b, 0.7), 500, 4).unwrap();
        assert!((v1 - v2).abs() < 3.0 * (s1 * s1 + s2 * s2).sqrt());
    }

    #[test]
    fn sliced_w2_same_law_vanishes() {
        let d = 2;
        let n = 100_000;
        let g = GaussianMixture::standard_gaussian(d).unwrap();
        let (v, se) = sliced_w2(&g.sample(n, 10), &g.sample(n, 11), 100, 5).unwrap();
        assert!(v <= 3.0 * se + 3.0 / (n as f64).sqrt(), "{v} ± {se}");
        let (small, _) = sliced_w2(&g.sample(1000, 10), &g.sample(1000, 11), 100, 5).unwrap();
        assert!(v < small / 5.0);
    }

    #[test]
    fn energy_distance_basics() {
        let g = GaussianMixture::standard_gaussian(2).unwrap();
        let a = g.sample(400, 1);
        let same = energy_distance(&a, &a).unwrap();
        assert!(same < 1e-12);
        let shifted = Samples::from_flat(2, a.as_flat().iter().enumerate().map(|(i, v)| if i % 2 == 0 { v + 3.0 } else { *v }).collect()).unwrap();
        assert!(energy_distance(&a, &shifted).unwrap() > 1.0);
        // point masses at distance 1: 2·1 - 0 - 0
        let p = Samples::zeros(3, 2);
        let q = Samples::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert!((energy_distance(&p, &q).unwrap() - 2.0).abs() < 1e-15);
    }

    fn params() -> BoundParams {
        BoundParams {
            m2: Some(5.0),
            d: Some(3.0),
            g_t: Some(8.0),
            eps0_sq: Some(0.01),
            lipschitz: Some(2.0),
            pi2: Some(0.1),
            pi3: Some(0.02),
            pi: Some(0.3),
            n: Some(100.0),
        }
    }

    #[test]
    fn bound_examples() {
        let p = params();
        let gap = theoretical_bound(BoundSetting::GeneralEm, &p).unwrap() - theoretical_bound(BoundSetting::GeneralEi, &p).unwrap();
        assert!((gap - 5.0 * 0.02).abs() < 1e-15);
        let vanishing = BoundParams { eps0_sq: Some(0.0), g_t: Some(200.0), pi: Some(0.0), pi3: Some(0.0), ..p };
        assert!(theoretical_bound(BoundSetting::GeneralEm, &vanishing).unwrap() < 1e-80);

        // constant g, uniform grid from 0: Π₂ = T²/N
        let (t, n, d, l, m2, e) = (6.0, 50.0, 2.0, 3.0, 4.0, 0.04);
        let q = BoundParams { m2: Some(m2), d: Some(d), g_t: Some(t), eps0_sq: Some(e), lipschitz: Some(l), pi2: Some(t * t / n), ..Default::default() };
        let expect = (m2 + d) * (-t).exp() + t * e + t * t * l * l * d / n;
        assert!((theoretical_bound(BoundSetting::SmoothEi, &q).unwrap() - expect).abs() < 1e-12);

        let missing = BoundParams { pi: None, ..p };
        assert!(matches!(theoretical_bound(BoundSetting::GeneralEi, &missing), Err(Error::Config(_))));
        let nostop = theoretical_bound(BoundSetting::SmoothNostop, &p).unwrap();
        let expect = 8.0 * (-8.0f64).exp() + 0.08 + 9.0 * (2f64.ln() + 8.0).powi(2) / 100.0;
        assert!((nostop - expect).abs() < 1e-12);
    }

    #[test]
    fn bound_monotone_under_refinement() {
        use crate::schedules::{build_uniform_grid, schedule_functionals, VarianceSchedule};
        let s = VarianceSchedule::power(0.5).unwrap();
        let mut last = [f64::INFINITY; 4];
        for n in [8, 16, 32, 64, 128] {
            let grid = build_uniform_grid(1e-2, 6.0, n).unwrap();
            let f = schedule_functionals(&grid, &s);
            let p = BoundParams { pi2: Some(f.pi2), pi3: Some(f.pi3), pi: f.pi, n: Some(n as f64), ..params() };
            for (i, set) in [BoundSetting::SmoothEi, BoundSetting::SmoothEm, BoundSetting::GeneralEi, BoundSetting::GeneralEm].iter().enumerate() {
                let b = theoretical_bound(*set, &p).unwrap();
                assert!(b <= last[i]);
                last[i] = b;
            }
        }
    }

    #[test]
    fn rate_fit_examples() {
        let pts: Vec<(f64, f64)> = [16.0, 32.0, 64.0, 128.0, 256.0, 512.0, 1024.0].iter().map(|&n| (n, 8.0 / n)).collect();
        let f = rate_fit(&pts).unwrap();
        assert!((f.slope + 1.0).abs() < 1e-12 && f.stderr < 1e-12);
        let pts: Vec<(f64, f64)> = [10.0, 20.0, 40.0].iter().map(|&n| (n, 3.0 / (n * n))).collect();
        assert!((rate_fit(&pts).unwrap().slope + 2.0).abs() < 1e-12);
        assert!(rate_fit(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]).is_err());
        assert!(rate_fit(&[(1.0, 1.0), (2.0, 1.0)]).is_err());
    }

    #[test]
    fn subexp_proxy_recovers_exponential_scale() {
        let mut r = rng::stream(4, 0);
        let lambda = 2.5;
        let v: Vec<f64> = (0..100_000).map(|_| -lambda * (1.0 - r.random::<f64>()).ln()).collect();
        assert!((subexp_norm_proxy(&v).unwrap() / lambda - 1.0).abs() < 0.02);
    }

    #[test]
    fn hessian_proxy_bounded_by_dim_over_sigma() {
        let mut ratios = Vec::new();
        for d in [2, 8] {
            let mix = GaussianMixture::preset("three_point", d).unwrap();
            for s2 in [0.1, 0.5] {
                let proxy = hessian_tail_proxy(&mix, s2, 100_000, 5).unwrap();
                ratios.push(proxy / (d as f64 / s2));
            }
        }
        let c = ratios.iter().copied().fold(0.0, f64::max);
        assert!(c <= 20.0, "{ratios:?}");
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative(a in 0.1f64..3.0, b in 0.1f64..3.0, m in -2.0f64..2.0) {
            let p = law(&[m], DMatrix::identity(1, 1) * a);
            let q = law(&[0.0], DMatrix::identity(1, 1) * b);
            prop_assert!(kl_gaussian(&p, &q).unwrap() >= 0.0);
        }
    }
}
