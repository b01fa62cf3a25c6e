//! Shared numerical tools: the uniform price grid, grid-sampled functions
//! with a linear tail, the truncated lognormal expectation, bisection, and
//! Gauss-Legendre quadrature nodes.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::gbm_model::{norm_cdf, MarketModel};
use crate::reward::ProjectSpec;

/// Uniform grid on [0, x_max]. The first node is always exactly 0 and the
/// last exactly x_max.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceGrid {
    points: Vec<f64>,
    step: f64,
}

impl PriceGrid {
    pub fn new(x_max: f64, count: usize) -> Result<Self> {
        if !x_max.is_finite() || x_max <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "grid upper bound x_max = {x_max} must be positive and finite"
            )));
        }
        if count < 3 {
            return Err(Error::InvalidParameter(format!(
                "grid needs at least 3 points, got {count}"
            )));
        }
        let step = x_max / (count - 1) as f64;
        let mut points: Vec<f64> = (0..count).map(|i| i as f64 * step).collect();
        points[count - 1] = x_max;
        Ok(Self { points, step })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn x_max(&self) -> f64 {
        *self.points.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Grid whose span covers the price paths that matter when iterating from a
/// first boundary near `x1_star`: log-space upper quantile of X after one
/// lifetime started at the boundary.
pub fn build_grid(
    model: &MarketModel,
    spec: &ProjectSpec,
    x1_star: f64,
    count: usize,
) -> Result<Arc<PriceGrid>> {
    if !(x1_star.is_finite() && x1_star > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "grid anchor x1_star = {x1_star} must be positive and finite"
        )));
    }
    let t = spec.lifetime;
    let log_span = (model.alpha - 0.5 * model.sigma * model.sigma) * t
        + 3.29 * model.sigma * t.sqrt();
    let x_max = (x1_star.ln() + log_span).exp();
    if x_max <= x1_star {
        return Err(Error::BoundaryOutsideGrid {
            boundary: x1_star,
            x_max,
        });
    }
    Ok(Arc::new(PriceGrid::new(x_max, count)?))
}

/// A function sampled on a [`PriceGrid`], linear between nodes and extended
/// beyond x_max by the straight line through the last two samples.
#[derive(Debug, Clone)]
pub struct GridFunction {
    grid: Arc<PriceGrid>,
    values: Vec<f64>,
    tail_slope: f64,
    tail_intercept: f64,
}

impl GridFunction {
    pub fn new(grid: Arc<PriceGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        let n = values.len();
        // one-sided second-order slope; the two-node chord lags by O(h f'')
        // and expectations taken near x_max lean hard on this line
        let tail_slope = if n >= 3 {
            (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * grid.step())
        } else {
            (values[n - 1] - values[n - 2]) / grid.step()
        };
        let tail_intercept = values[n - 1] - tail_slope * grid.x_max();
        Ok(Self {
            grid,
            values,
            tail_slope,
            tail_intercept,
        })
    }

    /// Same as new but with a caller-supplied tail slope, for functions
    /// whose derivative at x_max is known better than a node-difference
    /// estimate. The intercept still makes the tail continuous.
    pub fn with_tail_slope(grid: Arc<PriceGrid>, values: Vec<f64>, tail_slope: f64) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        if !tail_slope.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "tail slope {tail_slope} is not finite"
            )));
        }
        let tail_intercept = values[values.len() - 1] - tail_slope * grid.x_max();
        Ok(Self {
            grid,
            values,
            tail_slope,
            tail_intercept,
        })
    }

    pub fn zeros(grid: Arc<PriceGrid>) -> Self {
        let values = vec![0.0; grid.len()];
        Self {
            grid,
            values,
            tail_slope: 0.0,
            tail_intercept: 0.0,
        }
    }

    pub fn grid(&self) -> &Arc<PriceGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn tail_slope(&self) -> f64 {
        self.tail_slope
    }

    pub fn tail_intercept(&self) -> f64 {
        self.tail_intercept
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Linear interpolation on the grid, exact at the nodes; beyond x_max the
    /// tail line continues the last segment.
    pub fn evaluate(&self, x: f64) -> f64 {
        debug_assert!(x >= 0.0);
        let n = self.values.len();
        let xm = self.grid.x_max();
        if x >= xm {
            if x == xm {
                return self.values[n - 1];
            }
            return self.tail_slope * x + self.tail_intercept;
        }
        let h = self.grid.step();
        let i = ((x / h) as usize).min(n - 2);
        let z_i = self.grid.points()[i];
        let frac = (x - z_i) / h;
        self.values[i] + frac * (self.values[i + 1] - self.values[i])
    }
}

/// E[f(X_t) | X_0 = x] where f is the grid function extended by its tail.
///
/// Trapezoid over the grid (the density vanishes at zero) plus the exact
/// lognormal partial moments of the affine tail on [x_max, inf). Truncating
/// the tail instead loses first-moment mass that linear integrands turn
/// into a bias growing with the tail slope.
pub fn lognormal_expectation(f: &GridFunction, model: &MarketModel, x: f64, t: f64) -> f64 {
    debug_assert!(t > 0.0 && x >= 0.0);
    if x == 0.0 {
        // zero is absorbing
        return f.values()[0];
    }
    let grid = f.grid();
    let pts = grid.points();
    let vals = f.values();
    let n = pts.len();
    let s = model.sigma * t.sqrt();
    let mu = x.ln() + (model.alpha - 0.5 * model.sigma * model.sigma) * t;
    let norm = 1.0 / (s * 2.506628274631000502);

    let mut acc = 0.0;
    for i in 1..n {
        let z = pts[i];
        let w = (z.ln() - mu) / s;
        let g = (-0.5 * w * w).exp() * norm / z;
        let fg = vals[i] * g;
        acc += if i + 1 == n { 0.5 * fg } else { fg };
    }
    let inner = acc * grid.step();

    // integral of (k z + m) g(z) dz over [x_max, inf) in closed form
    let ln_x_max = grid.x_max().ln();
    let k = f.tail_slope();
    let m = f.tail_intercept();
    let mean = x * (model.alpha * t).exp();
    let first = norm_cdf((mu + s * s - ln_x_max) / s);
    let mass = norm_cdf((mu - ln_x_max) / s);
    inner + k * mean * first + m * mass
}

/// Root of f on [lo, hi] by bisection; returns the midpoint of the final
/// bracket, which has width at most tol.
pub fn bisect<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    let (a, b) = bisect_bracket(f, lo, hi, tol)?;
    Ok(0.5 * (a + b))
}

/// Bisection that hands back the final enclosing interval. On return
/// f(result.0) has the sign of f(lo) and f(result.1) the sign of f(hi),
/// unless an exact zero was hit, in which case both ends coincide there.
pub fn bisect_bracket<F: Fn(f64) -> f64>(
    f: F,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
) -> Result<(f64, f64)> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidParameter(format!(
            "bisection interval [{lo}, {hi}] is not a finite ordered pair"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "bisection tolerance {tol} must be positive"
        )));
    }
    let f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo == 0.0 {
        return Ok((lo, lo));
    }
    if f_hi == 0.0 {
        return Ok((hi, hi));
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::NoSignChange { lo, hi, f_lo, f_hi });
    }
    let lo_sign = f_lo.signum();
    for _ in 0..200 {
        if hi - lo <= tol {
            return Ok((lo, hi));
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            // interval narrower than one ulp
            return Ok((lo, hi));
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok((mid, mid));
        }
        if fm.signum() == lo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::BisectionStalled { max_iter: 200 })
}

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1].
///
/// Newton iteration on the Legendre polynomial from the Tricomi initial
/// guess; exact for polynomials of degree 2n - 1.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature order must be at least 1");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= 1e-15 * x.abs().max(1.0) {
                let (_, d2) = legendre_with_derivative(n, x);
                dp = d2;
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let pk = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = pk;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Least-squares straight line through the sample points.
pub fn fit_line(points: &[(f64, f64)]) -> (f64, f64) {
    assert!(points.len() >= 2);
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let denom = n * sxx - sx * sx;
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    (slope, intercept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn table_model() -> MarketModel {
        MarketModel::new(0.05, 0.2, 0.1).unwrap()
    }

    #[test]
    fn grid_is_uniform_and_anchored() {
        let g = PriceGrid::new(2.0, 5).unwrap();
        assert_eq!(g.points(), &[0.0, 0.5, 1.0, 1.5, 2.0]);
        assert_eq!(g.step(), 0.5);
        assert_eq!(g.x_max(), 2.0);
        assert!(PriceGrid::new(2.0, 2).is_err());
        assert!(PriceGrid::new(-1.0, 10).is_err());
        assert!(PriceGrid::new(f64::INFINITY, 10).is_err());
    }

    #[test]
    fn built_grid_tracks_the_upper_price_quantile() {
        let m = table_model();
        let spec = ProjectSpec::new(1.0, 0.1, 5.0, 1.0, true).unwrap();
        let grid = build_grid(&m, &spec, 0.85, 500).unwrap();
        let x_max = grid.x_max();
        assert!((x_max - 4.301).abs() < 2e-3);

        // within a tenth of a percent of the exact 99.95% quantile of X_T
        let mu = 0.85f64.ln() + (m.alpha - 0.5 * m.sigma * m.sigma) * spec.lifetime;
        let s = m.sigma * spec.lifetime.sqrt();
        let q = (mu + 3.2905267314919255 * s).exp();
        assert!((x_max - q).abs() / q < 1e-3);
        assert_eq!(grid.len(), 500);
    }

    #[test]
    fn grid_function_interpolates_and_extrapolates_affinely() {
        let grid = Arc::new(PriceGrid::new(4.0, 81).unwrap());
        let values: Vec<f64> = grid.points().iter().map(|&z| 3.0 * z + 1.0).collect();
        let f = GridFunction::new(grid.clone(), values).unwrap();
        for &x in &[0.0, 0.025, 1.3, 3.975, 4.0, 5.0, 40.0] {
            let exact = 3.0 * x + 1.0;
            assert!((f.evaluate(x) - exact).abs() < 1e-10 * (1.0 + exact), "x = {x}");
        }
        // value continuity where the tail takes over
        let eps = 1e-9;
        assert!((f.evaluate(4.0 + eps) - f.evaluate(4.0)).abs() < 1e-7);
    }

    #[test]
    fn grid_function_midpoints_average_neighbors() {
        let grid = Arc::new(PriceGrid::new(1.0, 11).unwrap());
        let values: Vec<f64> = grid.points().iter().map(|&z| z * z).collect();
        let f = GridFunction::new(grid.clone(), values.clone()).unwrap();
        for i in 0..10 {
            let mid = 0.5 * (grid.points()[i] + grid.points()[i + 1]);
            let expect = 0.5 * (values[i] + values[i + 1]);
            assert!((f.evaluate(mid) - expect).abs() < 1e-14);
        }
    }

    proptest! {
        #[test]
        fn affine_functions_are_reproduced_exactly(
            slope in -5.0f64..5.0,
            intercept in -2.0f64..2.0,
            x in 0.0f64..10.0,
        ) {
            let grid = Arc::new(PriceGrid::new(3.0, 61).unwrap());
            let values: Vec<f64> =
                grid.points().iter().map(|&z| slope * z + intercept).collect();
            let f = GridFunction::new(grid, values).unwrap();
            let exact = slope * x + intercept;
            prop_assert!((f.evaluate(x) - exact).abs() <= 1e-10 * (1.0 + exact.abs()));
        }
    }

    #[test]
    fn grid_function_rejects_wrong_length() {
        let grid = Arc::new(PriceGrid::new(1.0, 11).unwrap());
        assert!(GridFunction::new(grid, vec![0.0; 10]).is_err());
    }

    #[test]
    fn expectation_of_constant_is_the_constant() {
        let m = table_model();
        let grid = Arc::new(PriceGrid::new(4.3, 500).unwrap());
        let kc = 2.7;
        let f = GridFunction::new(grid, vec![kc; 500]).unwrap();
        let e = lognormal_expectation(&f, &m, 0.5, 5.0);
        assert!((e - kc).abs() < 1e-5 * kc, "e = {e}");
    }

    #[test]
    fn expectation_of_identity_is_the_forward_price() {
        let m = table_model();
        let grid = Arc::new(PriceGrid::new(4.3, 500).unwrap());
        let values: Vec<f64> = grid.points().to_vec();
        let f = GridFunction::new(grid, values).unwrap();
        for &x in &[0.3, 0.5, 1.0] {
            let e = lognormal_expectation(&f, &m, x, 5.0);
            let exact = x * (m.alpha * 5.0f64).exp();
            assert!((e - exact).abs() < 1e-5 * exact, "x = {x}: {e} vs {exact}");
        }
    }

    #[test]
    fn expectation_at_zero_start_is_the_value_at_zero() {
        let m = table_model();
        let grid = Arc::new(PriceGrid::new(4.3, 500).unwrap());
        let values: Vec<f64> = grid.points().iter().map(|&z| 5.0 - z).collect();
        let f = GridFunction::new(grid, values).unwrap();
        assert_eq!(lognormal_expectation(&f, &m, 0.0, 5.0), 5.0);
    }

    #[test]
    fn expectation_matches_monte_carlo_on_a_kinked_function() {
        let m = table_model();
        let grid = Arc::new(PriceGrid::new(4.3, 500).unwrap());
        let values: Vec<f64> = grid.points().iter().map(|&z| (z - 0.85).max(0.0)).collect();
        let f = GridFunction::new(grid, values).unwrap();
        let (x, t) = (0.5, 5.0);
        let quad = lognormal_expectation(&f, &m, x, t);

        let mu = x.ln() + (m.alpha - 0.5 * m.sigma * m.sigma) * t;
        let s = m.sigma * t.sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 1_000_000usize;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            let v = f.evaluate((mu + s * z).exp());
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / n as f64;
        let var = (sum_sq - n as f64 * mean * mean) / (n as f64 - 1.0);
        let se = (var / n as f64).sqrt();
        assert!(
            (quad - mean).abs() <= 3.5 * se + 1e-4 * mean.abs(),
            "quad {quad} vs mc {mean} +- {se}"
        );
    }

    #[test]
    fn expectation_error_decays_quadratically_in_the_step() {
        // A C^1 integrand, affine past z = 1 so the tail treatment is
        // identical at every resolution, with visible density at x_max.
        let m = MarketModel::new(0.05, 0.3, 0.1).unwrap();
        let shape = |z: f64| if z <= 1.0 { z * z } else { 2.0 * z - 1.0 };
        let (x, t) = (1.2, 0.5);

        let eval = |count: usize| -> f64 {
            let grid = Arc::new(PriceGrid::new(2.0, count).unwrap());
            let values: Vec<f64> = grid.points().iter().map(|&z| shape(z)).collect();
            let f = GridFunction::new(grid, values).unwrap();
            lognormal_expectation(&f, &m, x, t)
        };

        let reference = eval(16_001);
        let e1 = (eval(251) - reference).abs();
        let e2 = (eval(501) - reference).abs();
        let e3 = (eval(1_001) - reference).abs();
        let r1 = e1 / e2;
        let r2 = e2 / e3;
        assert!((3.3..4.7).contains(&r1), "halving ratio {r1}");
        assert!((3.3..4.7).contains(&r2), "halving ratio {r2}");
    }

    #[test]
    fn bisect_finds_sqrt_two() {
        let root = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-12).unwrap();
        assert!((root - 2.0f64.sqrt()).abs() < 1e-11);
    }

    #[test]
    fn bisect_is_exact_on_straight_lines() {
        let root = bisect(|x| 3.0 * (x - 0.7), 0.0, 1.0, 1e-13).unwrap();
        assert!((root - 0.7).abs() < 1e-12);
    }

    #[test]
    fn bisect_reports_missing_sign_change() {
        let err = bisect(|x| x * x + 1.0, -1.0, 1.0, 1e-10).unwrap_err();
        assert!(matches!(err, Error::NoSignChange { .. }));
    }

    #[test]
    fn bisect_accepts_roots_at_the_ends() {
        assert_eq!(bisect(|x| x, 0.0, 1.0, 1e-10).unwrap(), 0.0);
        assert_eq!(bisect(|x| x - 1.0, 0.0, 1.0, 1e-10).unwrap(), 1.0);
    }

    #[test]
    fn bisect_bracket_keeps_the_signs() {
        let f = |x: f64| x * x * x - 2.0;
        let (lo, hi) = bisect_bracket(f, 0.0, 2.0, 1e-10).unwrap();
        assert!(f(lo) < 0.0 && f(hi) > 0.0);
        assert!(hi - lo <= 1e-10);
    }

    #[test]
    fn gauss_legendre_five_point_rule_is_textbook() {
        let (nodes, weights) = gauss_legendre(5);
        let expect_nodes = [
            -0.9061798459386640,
            -0.5384693101056831,
            0.0,
            0.5384693101056831,
            0.9061798459386640,
        ];
        let expect_weights = [
            0.2369268850561891,
            0.4786286704993665,
            0.5688888888888889,
            0.4786286704993665,
            0.2369268850561891,
        ];
        for i in 0..5 {
            assert!((nodes[i] - expect_nodes[i]).abs() < 1e-14, "node {i}");
            assert!((weights[i] - expect_weights[i]).abs() < 1e-14, "weight {i}");
        }
    }

    #[test]
    fn gauss_legendre_integrates_high_degree_polynomials_exactly() {
        // integral of x^9 over [0, 1] = 0.1 with a 5-point rule
        let (nodes, weights) = gauss_legendre(5);
        let mut acc = 0.0;
        for i in 0..5 {
            let x = 0.5 * (nodes[i] + 1.0);
            acc += 0.5 * weights[i] * x.powi(9);
        }
        assert!((acc - 0.1).abs() < 1e-15);

        for n in [1usize, 2, 8, 64] {
            let (_, w) = gauss_legendre(n);
            let total: f64 = w.iter().sum();
            assert!((total - 2.0).abs() < 1e-13, "weights at n = {n}");
        }
    }

    #[test]
    fn gauss_legendre_integrates_exponentials_at_machine_precision() {
        // the reward quadrature rests on this for its discount kernels
        for n in [16usize, 32, 64] {
            let (nodes, weights) = gauss_legendre(n);
            for c in [0.05f64, 0.1, 0.3] {
                let exact = (c.exp() - (-c).exp()) / c;
                let got: f64 = (0..n).map(|i| weights[i] * (c * nodes[i]).exp()).sum();
                assert!(
                    ((got - exact) / exact).abs() < 1e-14,
                    "n = {n}, c = {c}: rel err {:.3e}",
                    (got - exact) / exact
                );
            }
        }
    }

    #[test]
    fn fit_line_recovers_exact_lines() {
        let pts: Vec<(f64, f64)> = (0..20).map(|i| {
            let x = 0.3 + 0.1 * i as f64;
            (x, -2.5 * x + 0.4)
        }).collect();
        let (slope, intercept) = fit_line(&pts);
        assert!((slope + 2.5).abs() < 1e-12);
        assert!((intercept - 0.4).abs() < 1e-12);
    }
}
