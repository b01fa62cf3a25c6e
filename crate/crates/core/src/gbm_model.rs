//! Price dynamics: geometric Brownian motion with constant drift and
//! volatility, discounted at a fixed rate.

use crate::error::{Error, Result};

const SQRT_2PI: f64 = 2.506628274631000502;

/// dX = alpha X dt + sigma X dW, cash flows discounted at r.
///
/// r > alpha is required so that discounted revenue integrals stay finite;
/// the constructor rejects anything else.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketModel {
    /// Price drift per year.
    pub alpha: f64,
    /// Price volatility per square-root year, strictly positive.
    pub sigma: f64,
    /// Discount rate per year, strictly positive and above `alpha`.
    pub r: f64,
}

impl MarketModel {
    pub fn new(alpha: f64, sigma: f64, r: f64) -> Result<Self> {
        if !alpha.is_finite() || !sigma.is_finite() || !r.is_finite() {
            return Err(Error::InvalidParameter(
                "market parameters must be finite".into(),
            ));
        }
        if sigma <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "sigma = {sigma} must be strictly positive"
            )));
        }
        if r <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "discount rate r = {r} must be strictly positive"
            )));
        }
        if r <= alpha {
            return Err(Error::InvalidParameter(format!(
                "discount rate r = {r} must strictly exceed drift alpha = {alpha}"
            )));
        }
        Ok(Self { alpha, sigma, r })
    }

    /// Positive root of (sigma^2/2) y (y - 1) + alpha y - r = 0.
    ///
    /// Always exceeds 1 when r > alpha; governs the power-law shape of
    /// perpetual first-passage values under this dynamics.
    pub fn gamma(&self) -> f64 {
        let s2 = self.sigma * self.sigma;
        let half_minus = 0.5 - self.alpha / s2;
        half_minus + (half_minus * half_minus + 2.0 * self.r / s2).sqrt()
    }

    /// E[(X_t - c)^+ | X_0 = x], undiscounted.
    pub fn call_expectation(&self, x: f64, c: f64, t: f64) -> f64 {
        debug_assert!(t > 0.0 && x >= 0.0 && c >= 0.0);
        let growth = (self.alpha * t).exp();
        if c == 0.0 {
            return x * growth;
        }
        if x == 0.0 {
            return 0.0;
        }
        let s = self.sigma * t.sqrt();
        let d_plus = ((x / c).ln() + (self.alpha + 0.5 * self.sigma * self.sigma) * t) / s;
        let d_minus = d_plus - s;
        x * growth * norm_cdf(d_plus) - c * norm_cdf(d_minus)
    }

    /// Density of X_t at z given X_0 = x; zero for z <= 0.
    pub fn lognormal_density(&self, z: f64, x: f64, t: f64) -> f64 {
        debug_assert!(x > 0.0 && t > 0.0);
        if z <= 0.0 {
            return 0.0;
        }
        let s = self.sigma * t.sqrt();
        let mu = x.ln() + (self.alpha - 0.5 * self.sigma * self.sigma) * t;
        let w = (z.ln() - mu) / s;
        (-0.5 * w * w).exp() / (z * s * SQRT_2PI)
    }

    /// E[exp(-r tau)] where tau is the first passage time of X from x up to
    /// `barrier`. Requires x <= barrier; equals (x / barrier)^gamma.
    pub fn first_passage_factor(&self, x: f64, barrier: f64) -> f64 {
        debug_assert!(barrier > 0.0 && (0.0..=barrier).contains(&x));
        if x == 0.0 {
            return 0.0;
        }
        (self.gamma() * (x / barrier).ln()).exp()
    }
}

/// Standard normal CDF through the complementary error function; absolute
/// error stays near machine precision over the whole real line.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * std::f64::consts::FRAC_1_SQRT_2)
}
