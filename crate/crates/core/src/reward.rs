//! Reward from committing one investment: discounted net revenue of a
//! capacity unit bought at price x, productive after a lead time and over a
//! finite lifetime.

use crate::error::{Error, Result};
use crate::gbm_model::{norm_cdf, MarketModel};
use crate::numerics::gauss_legendre;

/// Contract of a single capacity unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectSpec {
    /// Capital outlay I paid at commitment.
    pub invest_cost: f64,
    /// Operating cost c per unit of output.
    pub op_cost: f64,
    /// Productive lifetime T in years; also the refraction period between
    /// consecutive commitments.
    pub lifetime: f64,
    /// Construction lead time in years before output starts.
    pub lead_time: f64,
    /// Flexible units only run when the price clears the operating cost;
    /// inflexible units run regardless.
    pub flexible: bool,
}

impl ProjectSpec {
    pub fn new(
        invest_cost: f64,
        op_cost: f64,
        lifetime: f64,
        lead_time: f64,
        flexible: bool,
    ) -> Result<Self> {
        for (name, v) in [
            ("invest_cost", invest_cost),
            ("op_cost", op_cost),
            ("lifetime", lifetime),
            ("lead_time", lead_time),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} = {v} must be finite")));
            }
        }
        if invest_cost < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "invest_cost = {invest_cost} must be nonnegative"
            )));
        }
        if op_cost < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "op_cost = {op_cost} must be nonnegative"
            )));
        }
        if lifetime <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "lifetime = {lifetime} must be strictly positive"
            )));
        }
        if lead_time < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "lead_time = {lead_time} must be nonnegative"
            )));
        }
        Ok(Self {
            invest_cost,
            op_cost,
            lifetime,
            lead_time,
            flexible,
        })
    }
}

/// Expected discounted payoff of one commitment as a function of the price
/// at commitment time.
///
/// Flexible: psi(x) = -I + integral over [nu, nu + T] of
/// e^{-rt} E[(X_t - c)^+] dt, evaluated by Gauss-Legendre quadrature.
/// Inflexible: the unit earns X_t - c unconditionally, which collapses to
/// the straight line a x - b.
#[derive(Debug, Clone)]
pub struct RewardFunction {
    model: MarketModel,
    spec: ProjectSpec,
    gamma: f64,
    affine: (f64, f64),
    // quadrature caches over t in [nu, nu + T]
    disc_w: Vec<f64>,   // weight * e^{-r t}
    growth: Vec<f64>,   // e^{alpha t}
    s: Vec<f64>,        // sigma sqrt(t)
    inv_s: Vec<f64>,
    dp_shift: Vec<f64>, // (alpha + sigma^2/2) t
    sum_dwg: f64,       // quadrature image of the affine slope a
}

impl RewardFunction {
    pub const DEFAULT_QUADRATURE_NODES: usize = 64;

    pub fn new(model: MarketModel, spec: ProjectSpec) -> Result<Self> {
        Self::with_nodes(model, spec, Self::DEFAULT_QUADRATURE_NODES)
    }

    pub fn with_nodes(model: MarketModel, spec: ProjectSpec, nodes: usize) -> Result<Self> {
        if nodes < 1 {
            return Err(Error::InvalidParameter(
                "quadrature_nodes must be at least 1".into(),
            ));
        }
        let (xi, w) = gauss_legendre(nodes);
        let half = 0.5 * spec.lifetime;
        let mut disc_w = Vec::with_capacity(nodes);
        let mut growth = Vec::with_capacity(nodes);
        let mut s = Vec::with_capacity(nodes);
        let mut inv_s = Vec::with_capacity(nodes);
        let mut dp_shift = Vec::with_capacity(nodes);
        let mut sum_dwg = 0.0;
        for i in 0..nodes {
            let t = spec.lead_time + half * (xi[i] + 1.0);
            let dw = w[i] * half * (-model.r * t).exp();
            let gr = (model.alpha * t).exp();
            disc_w.push(dw);
            growth.push(gr);
            s.push(model.sigma * t.sqrt());
            inv_s.push(1.0 / (model.sigma * t.sqrt()));
            dp_shift.push((model.alpha + 0.5 * model.sigma * model.sigma) * t);
            sum_dwg += dw * gr;
        }

        let q = model.r - model.alpha;
        let a = (-q * spec.lead_time).exp() * (1.0 - (-q * spec.lifetime).exp()) / q;
        let b = spec.invest_cost
            + (-model.r * spec.lead_time).exp() * (1.0 - (-model.r * spec.lifetime).exp())
                * spec.op_cost
                / model.r;

        Ok(Self {
            gamma: model.gamma(),
            affine: (a, b),
            model,
            spec,
            disc_w,
            growth,
            s,
            inv_s,
            dp_shift,
            sum_dwg,
        })
    }

    pub fn model(&self) -> &MarketModel {
        &self.model
    }

    pub fn spec(&self) -> &ProjectSpec {
        &self.spec
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Slope and intercept (a, b) of the inflexible reward a x - b. For the
    /// flexible reward the same line is its large-x asymptote.
    pub fn affine_coefficients(&self) -> (f64, f64) {
        self.affine
    }

    pub fn psi(&self, x: f64) -> f64 {
        debug_assert!(x >= 0.0);
        if !self.spec.flexible {
            let (a, b) = self.affine;
            return a * x - b;
        }
        let c = self.spec.op_cost;
        if c == 0.0 {
            return self.sum_dwg * x - self.spec.invest_cost;
        }
        if x == 0.0 {
            return -self.spec.invest_cost;
        }
        let lxc = (x / c).ln();
        let mut acc = 0.0;
        for i in 0..self.disc_w.len() {
            let dp = (lxc + self.dp_shift[i]) * self.inv_s[i];
            let dm = dp - self.s[i];
            acc += self.disc_w[i] * (x * self.growth[i] * norm_cdf(dp) - c * norm_cdf(dm));
        }
        acc - self.spec.invest_cost
    }

    pub fn psi_prime(&self, x: f64) -> f64 {
        debug_assert!(x >= 0.0);
        if !self.spec.flexible {
            return self.affine.0;
        }
        let c = self.spec.op_cost;
        if c == 0.0 {
            return self.sum_dwg;
        }
        if x == 0.0 {
            return 0.0;
        }
        let lxc = (x / c).ln();
        let mut acc = 0.0;
        for i in 0..self.disc_w.len() {
            let dp = (lxc + self.dp_shift[i]) * self.inv_s[i];
            acc += self.disc_w[i] * self.growth[i] * norm_cdf(dp);
        }
        acc
    }

    /// gamma psi(x) - x psi'(x), fused into one quadrature pass.
    pub fn lambda_psi(&self, x: f64) -> f64 {
        debug_assert!(x >= 0.0);
        let g = self.gamma;
        if !self.spec.flexible {
            let (a, b) = self.affine;
            return (g - 1.0) * a * x - g * b;
        }
        let c = self.spec.op_cost;
        let i_cost = self.spec.invest_cost;
        if c == 0.0 {
            return (g - 1.0) * self.sum_dwg * x - g * i_cost;
        }
        if x == 0.0 {
            return -g * i_cost;
        }
        let lxc = (x / c).ln();
        let mut acc = 0.0;
        for i in 0..self.disc_w.len() {
            let dp = (lxc + self.dp_shift[i]) * self.inv_s[i];
            let dm = dp - self.s[i];
            acc += self.disc_w[i]
                * ((g - 1.0) * x * self.growth[i] * norm_cdf(dp) - g * c * norm_cdf(dm));
        }
        acc - g * i_cost
    }

    /// Reward under the optional positive-part branch. Clamping never moves
    /// the exercise region because psi is negative only below the break-even
    /// price, which every boundary strictly exceeds.
    pub(crate) fn psi_branch(&self, x: f64, clamp: bool) -> f64 {
        let p = self.psi(x);
        if clamp {
            p.max(0.0)
        } else {
            p
        }
    }

    pub(crate) fn lambda_psi_branch(&self, x: f64, clamp: bool) -> f64 {
        if clamp && self.psi(x) <= 0.0 {
            return 0.0;
        }
        self.lambda_psi(x)
    }

    /// Price below which the one-commitment obstacle stops being convex for
    /// flexible units; zero for inflexible units or zero operating cost.
    pub fn convexity_threshold(&self) -> f64 {
        if !self.spec.flexible || self.spec.op_cost == 0.0 {
            return 0.0;
        }
        let s2 = self.model.sigma * self.model.sigma;
        let expo = self.model.alpha + self.gamma * s2 - 0.5 * s2;
        self.spec.op_cost * (-expo * self.spec.lead_time).exp()
    }

    /// Unique positive root of psi, when one exists.
    pub fn break_even(&self) -> Result<f64> {
        let (a, b) = self.affine;
        if !self.spec.flexible {
            if b <= 0.0 {
                return Err(Error::NoBreakEven(
                    "committed reward is nonnegative at zero price".into(),
                ));
            }
            return Ok(b / a);
        }
        let i_cost = self.spec.invest_cost;
        if i_cost == 0.0 {
            return Err(Error::NoBreakEven(
                "zero investment cost: flexible reward is positive at every positive price"
                    .into(),
            ));
        }
        // psi(lo) <= a lo - I < 0 because a (r - alpha) < 1
        let scale = self.spec.op_cost.max(i_cost * (self.model.r - self.model.alpha));
        let lo = 1e-6 * scale;
        let mut hi = scale.max(2.0 * lo);
        let mut expansions = 0;
        while self.psi(hi) <= 0.0 {
            hi *= 2.0;
            expansions += 1;
            if expansions > 200 {
                return Err(Error::NoBreakEven(
                    "no sign change while expanding the bracket".into(),
                ));
            }
        }
        let (blo, bhi) = crate::numerics::bisect_bracket(
            |x| self.psi(x),
            lo,
            hi,
            1e-10 * i_cost,
        )?;
        Ok(0.5 * (blo + bhi))
    }

    /// Break-even price and convexity threshold, rejecting parameter sets
    /// where the boundary characterization is not valid.
    pub fn applicability(&self) -> Result<(f64, f64)> {
        let x0 = self.break_even()?;
        let x_prime = self.convexity_threshold();
        if self.spec.flexible && x0 < x_prime {
            return Err(Error::NotApplicable { x0, x_prime });
        }
        Ok((x0, x_prime))
    }
}
