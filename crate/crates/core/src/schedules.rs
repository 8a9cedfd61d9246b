//! Variance functions, discretization grids and step functionals.
//!
//! The forward clock is `G_{t,s} = ∫_t^s g(u)² du`. Everything downstream
//! (contraction `α_{t,s}`, conditional variance `σ_t²`, step sizes `G_k`) is
//! expressed through it, and every schedule here integrates in closed form.

use crate::error::{Error, Result};

/// The variance function `g(t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VarianceSchedule {
    /// `g ≡ 1`.
    Constant,
    /// `g(t) = t^α` up to the switch point `t* = (2α+1)^{1/(2α+1)}`, then `1`.
    ///
    /// `g` jumps at `t*` for every `α > 0`; `G` is continuous and `G_{t*} = 1`.
    Power { alpha: f64 },
}

impl VarianceSchedule {
    pub fn power(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "power exponent must be positive, got {alpha}"
            )));
        }
        Ok(Self::Power { alpha })
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Constant => "constant",
            Self::Power { .. } => "power",
        }
    }

    pub fn alpha_param(&self) -> Option<f64> {
        match self {
            Self::Constant => None,
            Self::Power { alpha } => Some(*alpha),
        }
    }

    /// Switch point `t*` of the power schedule.
    pub fn switch_point(&self) -> Option<f64> {
        match self {
            Self::Constant => None,
            Self::Power { alpha } => {
                let p = 2.0 * alpha + 1.0;
                Some(p.powf(1.0 / p))
            }
        }
    }

    pub fn g(&self, t: f64) -> f64 {
        match self {
            Self::Constant => 1.0,
            Self::Power { alpha } => {
                if t <= self.switch_point().unwrap_or(0.0) {
                    t.powf(*alpha)
                } else {
                    1.0
                }
            }
        }
    }

    /// Antiderivative `G_t = G_{0,t}`.
    pub fn cumulative(&self, t: f64) -> f64 {
        match self {
            Self::Constant => t,
            Self::Power { alpha } => {
                let p = 2.0 * alpha + 1.0;
                let ts = p.powf(1.0 / p);
                if t <= ts {
                    t.powf(p) / p
                } else {
                    1.0 + (t - ts)
                }
            }
        }
    }

    /// Inverse of [`cumulative`](Self::cumulative): the time at which `G_t = g`.
    pub fn time_of_cumulative(&self, g: f64) -> f64 {
        match self {
            Self::Constant => g,
            Self::Power { alpha } => {
                let p = 2.0 * alpha + 1.0;
                if g <= 1.0 {
                    (g * p).powf(1.0 / p)
                } else {
                    p.powf(1.0 / p) + (g - 1.0)
                }
            }
        }
    }

    /// `G_{t,s} = ∫_t^s g(u)² du`.
    pub fn g_squared_integral(&self, t: f64, s: f64) -> Result<f64> {
        if !(t >= 0.0 && t <= s) {
            return Err(Error::ArgumentOrder { lo: t, hi: s });
        }
        Ok(match self {
            Self::Constant => s - t,
            Self::Power { alpha } => {
                let p = 2.0 * alpha + 1.0;
                let ts = p.powf(1.0 / p);
                if s <= ts {
                    (s.powf(p) - t.powf(p)) / p
                } else if t >= ts {
                    s - t
                } else {
                    (ts.powf(p) - t.powf(p)) / p + (s - ts)
                }
            }
        })
    }

    /// `α_{t,s} = exp(-G_{t,s}/2)`.
    pub fn alpha(&self, t: f64, s: f64) -> Result<f64> {
        Ok((-0.5 * self.g_squared_integral(t, s)?).exp())
    }

    /// `α_t = α_{0,t}`.
    pub fn alpha_at(&self, t: f64) -> f64 {
        (-0.5 * self.cumulative(t)).exp()
    }

    /// `σ_t² = 1 - exp(-G_t)`, evaluated without cancellation for small `G_t`.
    pub fn sigma_sq(&self, t: f64) -> f64 {
        -(-self.cumulative(t)).exp_m1()
    }
}

/// Ordered time points `t_0 < t_1 < … < t_N = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizationGrid {
    points: Vec<f64>,
}

impl DiscretizationGrid {
    /// Validates strict monotonicity and non-negativity. A single point is a
    /// zero-step grid.
    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidGrid("grid needs at least one point".into()));
        }
        if points[0] < 0.0 || points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidGrid("points must be finite and non-negative".into()));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid("points must be strictly increasing".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn n_steps(&self) -> usize {
        self.points.len() - 1
    }

    pub fn start(&self) -> f64 {
        self.points[0]
    }

    pub fn end(&self) -> f64 {
        *self.points.last().expect("non-empty grid")
    }

    /// True when `t_0 = δ > 0`.
    pub fn is_early_stopped(&self) -> bool {
        self.points[0] > 0.0
    }

    /// `t_k`.
    pub fn time(&self, k: usize) -> f64 {
        self.points[k]
    }

    /// `G_k = G_{t_{k-1}, t_k}` for `k ∈ 1..=N`.
    pub fn step_g(&self, schedule: &VarianceSchedule, k: usize) -> f64 {
        schedule
            .g_squared_integral(self.points[k - 1], self.points[k])
            .expect("grid points are ordered")
    }

    /// All `G_k`, `k = 1..=N`.
    pub fn step_gs(&self, schedule: &VarianceSchedule) -> Vec<f64> {
        (1..=self.n_steps()).map(|k| self.step_g(schedule, k)).collect()
    }

    /// Splits every step into `r` sub-steps of equal `G`.
    pub fn refine(&self, schedule: &VarianceSchedule, r: usize) -> Result<Self> {
        if r == 0 {
            return Err(Error::InvalidParameter("refinement factor must be >= 1".into()));
        }
        if r == 1 {
            return Ok(self.clone());
        }
        let mut pts = Vec::with_capacity(self.n_steps() * r + 1);
        pts.push(self.points[0]);
        for w in self.points.windows(2) {
            let g0 = schedule.cumulative(w[0]);
            let g1 = schedule.cumulative(w[1]);
            for j in 1..r {
                let g = g0 + (g1 - g0) * j as f64 / r as f64;
                pts.push(schedule.time_of_cumulative(g).clamp(w[0], w[1]));
            }
            pts.push(w[1]);
        }
        // Sub-step times from the inverse clock can collide for extremely flat g.
        pts.dedup_by(|b, a| *b <= *a);
        Self::from_points(pts)
    }
}

/// `t_k = δ + k(T-δ)/N`.
pub fn build_uniform_grid(delta: f64, t_end: f64, n: usize) -> Result<DiscretizationGrid> {
    if n == 0 {
        return Err(Error::InvalidGrid("uniform grid needs N >= 1".into()));
    }
    if !(delta >= 0.0 && delta < t_end) {
        return Err(Error::InvalidGrid(format!("need 0 <= δ < T, got δ={delta}, T={t_end}")));
    }
    let h = (t_end - delta) / n as f64;
    let mut pts: Vec<f64> = (0..n).map(|k| delta + k as f64 * h).collect();
    pts.push(t_end);
    DiscretizationGrid::from_points(pts)
}

/// Grid with `h_k = c·min{max{t_k, floor}, 1}`.
///
/// Below the floor the step is `c·floor`; between the floor and 1 the points
/// follow `t_k = t_{k-1}/(1-c)`, which solves the implicit relation exactly;
/// above 1 the step is `c`. The last point is clamped to `T`.
pub fn build_exp_decreasing_grid(
    delta: f64,
    t_end: f64,
    c: f64,
    floor: Option<f64>,
) -> Result<DiscretizationGrid> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::InvalidParameter(format!("step factor c must lie in (0, 1), got {c}")));
    }
    if let Some(f) = floor {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::InvalidParameter(format!("floor must lie in (0, 1], got {f}")));
        }
        if !(delta >= 0.0 && delta < t_end) {
            return Err(Error::InvalidGrid(format!("need 0 <= δ < T, got δ={delta}, T={t_end}")));
        }
    } else if !(delta > 0.0 && delta < t_end) {
        return Err(Error::InvalidGrid(format!(
            "need 0 < δ < T without a floor, got δ={delta}, T={t_end}"
        )));
    }
    let floor = floor.unwrap_or(0.0);
    let mut pts = vec![delta];
    let mut t = delta;
    // Anything closer than this to T is absorbed into the final step.
    let snap = 1e-12 * t_end;
    loop {
        let next = if t + c * floor <= floor && floor > 0.0 {
            t + c * floor
        } else if t / (1.0 - c) <= 1.0 {
            t / (1.0 - c)
        } else {
            t + c
        };
        if next >= t_end - snap {
            pts.push(t_end);
            break;
        }
        pts.push(next);
        t = next;
    }
    DiscretizationGrid::from_points(pts)
}

/// Number of steps [`build_exp_decreasing_grid`] would produce, without
/// materializing the grid.
pub fn exp_decreasing_step_count(delta: f64, t_end: f64, c: f64, floor: Option<f64>) -> usize {
    step_count_capped(delta, t_end, c, floor, usize::MAX)
}

/// Step count, stopping early once it exceeds `cap`.
fn step_count_capped(delta: f64, t_end: f64, c: f64, floor: Option<f64>, cap: usize) -> usize {
    let f = floor.unwrap_or(0.0);
    let snap = 1e-12 * t_end;
    let mut t = delta;
    let mut n = 0usize;
    loop {
        let next = if t + c * f <= f && f > 0.0 {
            t + c * f
        } else if t / (1.0 - c) <= 1.0 {
            t / (1.0 - c)
        } else {
            t + c
        };
        n += 1;
        if next >= t_end - snap || n > cap {
            return n;
        }
        t = next;
    }
}

/// Exponentially decreasing grid whose factor `c` is tuned by bisection so the
/// grid has `n` steps. The step count is a non-increasing step function of
/// `c`; when it jumps over `n` the nearest count below `n` is returned.
pub fn build_exp_decreasing_grid_with_steps(
    delta: f64,
    t_end: f64,
    n: usize,
    floor: Option<f64>,
) -> Result<(DiscretizationGrid, f64)> {
    if n == 0 {
        return Err(Error::InvalidGrid("exponential grid needs N >= 1".into()));
    }
    let (mut lo, mut hi) = (1e-9_f64, 1.0 - 1e-9);
    if exp_decreasing_step_count(delta, t_end, hi, floor) > n {
        return Err(Error::InvalidGrid(format!("cannot build a grid with only {n} steps")));
    }
    if step_count_capped(delta, t_end, lo, floor, n) <= n {
        hi = lo;
    } else {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if step_count_capped(delta, t_end, mid, floor, n) > n {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
    }
    let grid = build_exp_decreasing_grid(delta, t_end, hi, floor)?;
    Ok((grid, hi))
}

/// Smallest uniform-grid size at which the power-schedule step condition is
/// guaranteed: `N ≥ K d (2α+1) G_T / G_δ^{1/(2α+1)}`.
pub fn power_threshold_steps(alpha: f64, delta: f64, t_end: f64, d: usize, k: f64) -> Result<usize> {
    let schedule = VarianceSchedule::power(alpha)?;
    let p = 2.0 * alpha + 1.0;
    let g_delta = schedule.cumulative(delta);
    if g_delta <= 0.0 {
        return Err(Error::DegenerateGrid("threshold needs δ > 0".into()));
    }
    let g_t = schedule.cumulative(t_end);
    Ok((k * d as f64 * p * g_t / g_delta.powf(1.0 / p)).ceil() as usize)
}

/// The sums `Π₂ = Σ G_k²`, `Π₃ = Σ G_k³` and `Π = Σ G_k²/σ_{t_{k-1}}⁴`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleFunctionals {
    pub pi2: f64,
    pub pi3: f64,
    /// `None` when `t_0 = 0`.
    pub pi: Option<f64>,
}

pub fn schedule_functionals(grid: &DiscretizationGrid, schedule: &VarianceSchedule) -> ScheduleFunctionals {
    let mut pi2 = 0.0;
    let mut pi3 = 0.0;
    let mut pi = 0.0;
    for k in 1..=grid.n_steps() {
        let gk = grid.step_g(schedule, k);
        pi2 += gk * gk;
        pi3 += gk * gk * gk;
        let s2 = schedule.sigma_sq(grid.time(k - 1));
        pi += gk * gk / (s2 * s2);
    }
    ScheduleFunctionals {
        pi2,
        pi3,
        pi: grid.is_early_stopped().then_some(pi),
    }
}

/// `Π`, failing on a grid that starts at zero.
pub fn pi_functional(grid: &DiscretizationGrid, schedule: &VarianceSchedule) -> Result<f64> {
    schedule_functionals(grid, schedule)
        .pi
        .ok_or_else(|| Error::DegenerateGrid("Π needs t_0 > 0".into()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepCondition {
    /// `max_k G_k / σ²_{t_{k-1}}`.
    pub worst_ratio: f64,
    pub threshold: f64,
    pub holds: bool,
}

/// Checks `G_k / σ²_{t_{k-1}} ≤ 1/(K d)` for every step.
pub fn check_step_condition(
    grid: &DiscretizationGrid,
    schedule: &VarianceSchedule,
    d: usize,
    k: f64,
) -> Result<StepCondition> {
    if !grid.is_early_stopped() {
        return Err(Error::DegenerateGrid("step condition needs t_0 > 0".into()));
    }
    let worst_ratio = (1..=grid.n_steps())
        .map(|j| grid.step_g(schedule, j) / schedule.sigma_sq(grid.time(j - 1)))
        .fold(0.0_f64, f64::max);
    let threshold = 1.0 / (k * d as f64);
    Ok(StepCondition { worst_ratio, threshold, holds: worst_ratio <= threshold })
}

/// Reference expression for `Π` on a uniform grid under the power schedule:
/// `((2α+1)² G_δ^{-1/(2α+1)} G_T + G_T²) / N`.
pub fn power_pi_reference(alpha: f64, g_delta: f64, g_t: f64, n: usize) -> f64 {
    let p = 2.0 * alpha + 1.0;
    (p * p * g_delta.powf(-1.0 / p) * g_t + g_t * g_t) / n as f64
}

/// Reference expression for `Π` on the exponentially decreasing grid:
/// `c (log(1/δ) + T)`.
pub fn exp_pi_reference(c: f64, delta: f64, t_end: f64) -> f64 {
    c * ((1.0 / delta).ln() + t_end)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        let m = 0.5 * (a + b);
        (b - a) / 6.0 * (f(a) + 4.0 * f(m) + f(b))
    }

    fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let left = simpson(f, a, m);
        let right = simpson(f, m, b);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        adaptive(f, a, m, left, tol / 2.0, depth - 1) + adaptive(f, m, b, right, tol / 2.0, depth - 1)
    }

    /// Quadrature of g² split at the schedule's breakpoint.
    fn quad_g2(s: &VarianceSchedule, a: f64, b: f64) -> f64 {
        let f = |u: f64| s.g(u).powi(2);
        let mut cuts = vec![a];
        if let Some(ts) = s.switch_point() {
            if ts > a && ts < b {
                cuts.push(ts);
            }
        }
        cuts.push(b);
        cuts.windows(2)
            .map(|w| adaptive(&f, w[0], w[1], simpson(&f, w[0], w[1]), 1e-15, 60))
            .sum()
    }

    #[test]
    fn integral_examples() {
        let c = VarianceSchedule::Constant;
        assert_eq!(c.g_squared_integral(0.0, 2.0).unwrap(), 2.0);
        let p = VarianceSchedule::power(0.5).unwrap();
        assert!((p.switch_point().unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!((p.g_squared_integral(0.0, 2f64.sqrt()).unwrap() - 1.0).abs() < 1e-14);
        for s in [c, p] {
            assert_eq!(s.g_squared_integral(0.7, 0.7).unwrap(), 0.0);
            assert_eq!(s.alpha(0.7, 0.7).unwrap(), 1.0);
        }
        assert!(matches!(c.g_squared_integral(2.0, 1.0), Err(Error::ArgumentOrder { .. })));
    }

    #[test]
    fn alpha_and_sigma_examples() {
        let c = VarianceSchedule::Constant;
        assert!((c.sigma_sq(2f64.ln()) - 0.5).abs() < 1e-15);
        assert!((c.alpha(0.0, 2.0).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(c.sigma_sq(0.0), 0.0);
    }

    #[test]
    fn switch_point_has_unit_clock() {
        for a in [0.25, 0.5, 1.0, 2.0, 3.7] {
            let s = VarianceSchedule::power(a).unwrap();
            let ts = s.switch_point().unwrap();
            assert!((s.cumulative(ts) - 1.0).abs() < 1e-14);
            // left branch limit differs from 1: g is only piecewise
            assert!((ts.powf(a) - 1.0).abs() > 1e-3);
            assert!((s.time_of_cumulative(s.cumulative(0.3)) - 0.3).abs() < 1e-14);
            assert!((s.time_of_cumulative(s.cumulative(3.3)) - 3.3).abs() < 1e-13);
        }
        assert!(VarianceSchedule::power(0.0).is_err());
    }

    #[test]
    fn quadrature_agrees_on_random_intervals() {
        use rand::Rng;
        let mut rng = crate::rng::stream(11, 0);
        for s in [
            VarianceSchedule::Constant,
            VarianceSchedule::power(0.25).unwrap(),
            VarianceSchedule::power(0.5).unwrap(),
            VarianceSchedule::power(2.0).unwrap(),
        ] {
            for _ in 0..100 {
                let a: f64 = rng.random_range(0.0..4.0);
                let b: f64 = rng.random_range(0.0..4.0);
                let (a, b) = if a < b { (a, b) } else { (b, a) };
                let exact = s.g_squared_integral(a, b).unwrap();
                let quad = quad_g2(&s, a, b);
                assert!(
                    (exact - quad).abs() <= 1e-10 * exact.abs().max(1e-300),
                    "{s:?} [{a}, {b}]: {exact} vs {quad}"
                );
            }
        }
    }

    proptest! {
        #[test]
        fn clock_is_additive(alpha in 0.1f64..3.0, a in 0.0f64..6.0, b in 0.0f64..6.0, c in 0.0f64..6.0, power in proptest::bool::ANY) {
            let s = if power { VarianceSchedule::power(alpha).unwrap() } else { VarianceSchedule::Constant };
            let mut v = [a, b, c];
            v.sort_by(f64::total_cmp);
            let [t, u, w] = v;
            let whole = s.g_squared_integral(t, w).unwrap();
            let parts = s.g_squared_integral(t, u).unwrap() + s.g_squared_integral(u, w).unwrap();
            prop_assert!((whole - parts).abs() <= 1e-12 * whole.max(1e-300) + 1e-15);
            let aw = s.alpha(t, w).unwrap();
            let ap = s.alpha(t, u).unwrap() * s.alpha(u, w).unwrap();
            prop_assert!((aw - ap).abs() <= 1e-12 * aw);
        }

        #[test]
        fn refining_never_increases_pi2_pi3(n in 1usize..20, r in 2usize..5, alpha in 0.2f64..2.0) {
            let s = VarianceSchedule::power(alpha).unwrap();
            let g = build_uniform_grid(0.01, 3.0, n).unwrap();
            let f = g.refine(&s, r).unwrap();
            let a = schedule_functionals(&g, &s);
            let b = schedule_functionals(&f, &s);
            prop_assert!(b.pi2 < a.pi2);
            prop_assert!(b.pi3 < a.pi3);
        }
    }

    #[test]
    fn uniform_grid_examples() {
        assert_eq!(build_uniform_grid(0.0, 1.0, 2).unwrap().points(), &[0.0, 0.5, 1.0]);
        assert_eq!(build_uniform_grid(0.25, 1.0, 3).unwrap().points(), &[0.25, 0.5, 0.75, 1.0]);
        let g = build_uniform_grid(0.0, 2.0, 4).unwrap();
        assert_eq!(g.step_g(&VarianceSchedule::Constant, 1), 0.5);
        assert!(matches!(build_uniform_grid(0.0, 1.0, 0), Err(Error::InvalidGrid(_))));
    }

    #[test]
    fn exp_grid_example() {
        let g = build_exp_decreasing_grid(0.25, 2.0, 0.5, None).unwrap();
        assert_eq!(g.points(), &[0.25, 0.5, 1.0, 1.5, 2.0]);
        for k in 1..=2 {
            let h = g.time(k) - g.time(k - 1);
            assert!((h - 0.5 * g.time(k).min(1.0)).abs() < 1e-15);
        }
        assert!(matches!(build_exp_decreasing_grid(0.25, 2.0, 1.0, None), Err(Error::InvalidParameter(_))));
        assert!(matches!(build_exp_decreasing_grid(0.25, 2.0, 0.0, None), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn exp_grid_above_one_is_uniform() {
        let g = build_exp_decreasing_grid(1.5, 4.0, 0.25, None).unwrap();
        for w in g.points().windows(2) {
            assert!((w[1] - w[0] - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn exp_grid_recursion_is_exact() {
        for (delta, c) in [(1e-3, 0.01), (1e-2, 1.0 / 64.0), (1e-4, 0.2), (0.3, 0.05)] {
            let g = build_exp_decreasing_grid(delta, 8.0, c, None).unwrap();
            let n = g.n_steps();
            for k in 1..n {
                let tk = g.time(k);
                let h = tk - g.time(k - 1);
                assert!((h - c * tk.min(1.0)).abs() <= 1e-12 * tk, "k={k} t={tk} h={h}");
            }
            assert_eq!(g.end(), 8.0);
            assert_eq!(exp_decreasing_step_count(delta, 8.0, c, None), n);
        }
    }

    #[test]
    fn exp_grid_with_floor() {
        let floor = 0.1;
        let c = 0.05;
        let g = build_exp_decreasing_grid(0.0, 3.0, c, Some(floor)).unwrap();
        for k in 1..g.n_steps() {
            let tk = g.time(k);
            let h = tk - g.time(k - 1);
            assert!((h - c * tk.max(floor).min(1.0)).abs() <= 1e-12 * tk.max(floor), "k={k}");
        }
        assert!(build_exp_decreasing_grid(0.0, 3.0, c, None).is_err());
        assert!(build_exp_decreasing_grid(0.0, 3.0, c, Some(1.5)).is_err());
    }

    #[test]
    fn exp_grid_step_count_bound() {
        // N ≲ (log(1/δ) + T)/c with a modest constant
        for (delta, c) in [(1e-3, 0.01), (1e-2, 0.05), (1e-5, 0.1)] {
            let n = exp_decreasing_step_count(delta, 8.0, c, None) as f64;
            assert!(n <= 1.5 * ((1.0f64 / delta).ln() + 8.0) / c);
        }
    }

    #[test]
    fn exp_grid_with_requested_steps() {
        for n in [32, 64, 100, 1024] {
            let (g, c) = build_exp_decreasing_grid_with_steps(1e-3, 8.0, n, None).unwrap();
            assert_eq!(g.n_steps(), n);
            assert!(c > 0.0 && c < 1.0);
        }
    }

    #[test]
    fn functionals_constant_uniform() {
        let s = VarianceSchedule::Constant;
        let g = build_uniform_grid(0.5, 2.5, 8).unwrap();
        let f = schedule_functionals(&g, &s);
        let h: f64 = 0.25;
        assert!((f.pi2 - 8.0 * h * h).abs() < 1e-14);
        assert!((f.pi3 - 8.0 * h.powi(3)).abs() < 1e-15);
        assert!(f.pi.is_some());
        let g0 = build_uniform_grid(0.0, 2.0, 8).unwrap();
        assert_eq!(schedule_functionals(&g0, &s).pi, None);
        assert!(matches!(pi_functional(&g0, &s), Err(Error::DegenerateGrid(_))));
    }

    #[test]
    fn functionals_exp_grid_direct_sum() {
        // Π on the (0.25, 2, 0.5) grid summed by hand from G_k and σ² at left ends.
        let s = VarianceSchedule::Constant;
        let g = build_exp_decreasing_grid(0.25, 2.0, 0.5, None).unwrap();
        let lefts = [0.25f64, 0.5, 1.0, 1.5];
        let steps = [0.25f64, 0.5, 0.5, 0.5];
        let expected: f64 = lefts
            .iter()
            .zip(steps)
            .map(|(t, h)| h * h / (1.0 - (-t).exp()).powi(2))
            .sum();
        assert!((pi_functional(&g, &s).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn step_condition_examples() {
        let s = VarianceSchedule::Constant;
        let coarse = build_uniform_grid(0.01, 4.0, 10).unwrap();
        assert!(!check_step_condition(&coarse, &s, 2, 2.0).unwrap().holds);
        let single = DiscretizationGrid::from_points(vec![0.01, 5.0]).unwrap();
        assert!(!check_step_condition(&single, &s, 1, 2.0).unwrap().holds);
        let d = 4;
        let c = 1.0 / (2.0 * d as f64);
        let exp = build_exp_decreasing_grid(1e-3, 8.0, c, None).unwrap();
        let cond = check_step_condition(&exp, &s, d, 2.0).unwrap();
        // The uniform-grid example sits below the power-schedule threshold.
        let pw = VarianceSchedule::power(1.0).unwrap();
        let below = power_threshold_steps(1.0, 0.01, 4.0, d, 2.0).unwrap() / 10;
        let u = build_uniform_grid(0.01, 4.0, below).unwrap();
        assert!(!check_step_condition(&u, &pw, d, 2.0).unwrap().holds);
        // At c = 1/(Kd) the ratio c·t_k/σ²_{t_{k-1}} overshoots 1/(Kd) by up to
        // 1/(1-e^{-1}); it stays within the 2/(Kd) the exponential-grid analysis allows.
        assert!(cond.worst_ratio <= 2.0 * c);
        assert!(cond.worst_ratio <= c / (1.0 - (-1.0f64).exp()) / (1.0 - c) * 1.0001);
        let tight = c * (1.0 - (-1.0f64).exp()) * (1.0 - c);
        let exp_tight = build_exp_decreasing_grid(1e-3, 8.0, tight, None).unwrap();
        assert!(check_step_condition(&exp_tight, &s, d, 2.0).unwrap().holds);
    }

    #[test]
    fn refine_splits_clock_evenly() {
        let s = VarianceSchedule::power(1.0).unwrap();
        let g = build_uniform_grid(0.01, 3.0, 5).unwrap();
        let f = g.refine(&s, 4).unwrap();
        assert_eq!(f.n_steps(), 20);
        for k in 1..=5 {
            let coarse = g.step_g(&s, k);
            for j in 0..4 {
                let fine = f.step_g(&s, 4 * (k - 1) + j + 1);
                assert!((fine - coarse / 4.0).abs() < 1e-12 * coarse.max(1e-12));
            }
        }
        assert_eq!(g.refine(&s, 1).unwrap(), g);
    }
}
