//! Monte Carlo check on the solver: simulate price paths, exercise a fixed
//! threshold policy subject to the refraction delay, and average discounted
//! rewards. The estimate is unbiased for the policy value up to the time
//! discretization of crossing times, so it certifies the deterministic
//! machinery without sharing any code path with it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::{GridFunction, PriceGrid};
use crate::reward::RewardFunction;
use crate::solver::SolveResult;

/// Exercise the i-th right at the first step at least `refraction` after the
/// previous exercise with the price at or above `thresholds[i]`. Infinite
/// thresholds are legal and mean "never".
#[derive(Debug, Clone)]
pub struct ThresholdPolicy {
    thresholds: Vec<f64>,
    refraction: f64,
}

impl ThresholdPolicy {
    pub fn new(thresholds: Vec<f64>, refraction: f64) -> Result<Self> {
        if thresholds.is_empty() {
            return Err(Error::InvalidParameter(
                "a policy needs at least one threshold".into(),
            ));
        }
        for (i, &t) in thresholds.iter().enumerate() {
            if t.is_nan() || t <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "threshold {i} = {t} must be positive"
                )));
            }
        }
        if !(refraction.is_finite() && refraction > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "refraction period {refraction} must be positive and finite"
            )));
        }
        Ok(Self {
            thresholds,
            refraction,
        })
    }

    /// Policy implied by a solve when `rights` investments remain: the
    /// boundaries are indexed by rights left, so they apply in reverse.
    pub fn from_solve(result: &SolveResult, rf: &RewardFunction, rights: usize) -> Result<Self> {
        if rights == 0 || rights > result.boundaries.len() {
            return Err(Error::InvalidParameter(format!(
                "{rights} rights requested from a solve with {} passes",
                result.boundaries.len()
            )));
        }
        let thresholds = result.boundaries[..rights].iter().rev().copied().collect();
        Self::new(thresholds, rf.spec().lifetime)
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn refraction(&self) -> f64 {
        self.refraction
    }
}

/// Simulation size and discretization. `time_step` must resolve the
/// refraction period (at most refraction/50); `horizon` caps path length and
/// must leave every right reachable. Same seed, same estimate, bit for bit,
/// regardless of thread count.
#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub path_count: usize,
    pub time_step: f64,
    pub horizon: f64,
    pub seed: u64,
    pub antithetic: bool,
}

impl SimulationConfig {
    pub fn new(path_count: usize, time_step: f64, horizon: f64, seed: u64) -> Self {
        Self {
            path_count,
            time_step,
            horizon,
            seed,
            antithetic: false,
        }
    }

    fn validate(&self, policy: &ThresholdPolicy) -> Result<()> {
        if self.path_count < 2 {
            return Err(Error::InvalidSimulation(format!(
                "path_count = {} cannot produce a standard error",
                self.path_count
            )));
        }
        if !(self.time_step.is_finite() && self.time_step > 0.0) {
            return Err(Error::InvalidSimulation(format!(
                "time_step = {} must be positive and finite",
                self.time_step
            )));
        }
        let cap = policy.refraction / 50.0;
        if self.time_step > cap * (1.0 + 1e-12) {
            return Err(Error::InvalidSimulation(format!(
                "time_step = {} does not resolve the refraction period (cap {cap})",
                self.time_step
            )));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::InvalidSimulation(format!(
                "horizon = {} must be positive and finite",
                self.horizon
            )));
        }
        let reach = policy.refraction * (policy.thresholds.len() - 1) as f64;
        if self.horizon < reach {
            return Err(Error::InvalidSimulation(format!(
                "horizon = {} is too short for {} refraction-separated rights (needs {reach})",
                self.horizon,
                policy.thresholds.len()
            )));
        }
        Ok(())
    }
}

// paths per work unit; statistics are merged across units in index order so
// the reduction is identical no matter how rayon schedules them
const CHUNK: usize = 4096;

struct Sim<'a> {
    rf: &'a RewardFunction,
    ln_thresholds: Vec<f64>,
    refraction: f64,
    r: f64,
    ln_x0: f64,
    x0: f64,
    drift_dt: f64,
    vol_sqdt: f64,
    dt: f64,
    guard: f64,
    n_steps: usize,
    // sampled reward for exercises after t = 0; the flexible psi is a
    // quadrature and far too slow to evaluate once per exercise per path
    table: Option<GridFunction>,
}

impl<'a> Sim<'a> {
    fn new(
        rf: &'a RewardFunction,
        policy: &ThresholdPolicy,
        config: &SimulationConfig,
        x0: f64,
    ) -> Result<Self> {
        let model = rf.model();
        let dt = config.time_step;
        let table = if rf.spec().flexible {
            let top = policy
                .thresholds
                .iter()
                .copied()
                .filter(|t| t.is_finite())
                .fold(x0, f64::max);
            let grid = Arc::new(PriceGrid::new(1.5 * top, 4096)?);
            let vals = grid.points().iter().map(|&z| rf.psi(z)).collect();
            Some(GridFunction::new(grid, vals)?)
        } else {
            None
        };
        Ok(Self {
            rf,
            ln_thresholds: policy.thresholds.iter().map(|t| t.ln()).collect(),
            refraction: policy.refraction,
            r: model.r,
            ln_x0: x0.ln(),
            x0,
            drift_dt: (model.alpha - 0.5 * model.sigma * model.sigma) * dt,
            vol_sqdt: model.sigma * dt.sqrt(),
            dt,
            guard: 1e-9 * dt,
            n_steps: (config.horizon / dt + 1e-9).floor() as usize,
            table,
        })
    }

    fn reward(&self, x: f64) -> f64 {
        match &self.table {
            Some(t) => t.evaluate(x),
            None => self.rf.psi(x),
        }
    }

    /// One discounted payoff; `sign` flips the normals for antithetic pairs.
    fn leg(&self, rng: &mut ChaCha8Rng, sign: f64) -> f64 {
        let k = self.ln_thresholds.len();
        let mut l = self.ln_x0;
        let mut right = 0usize;
        let mut next_allowed = 0.0f64;
        let mut payoff = 0.0f64;
        let mut j = 0usize;
        loop {
            let t = j as f64 * self.dt;
            if t + self.guard >= next_allowed && l >= self.ln_thresholds[right] {
                // the start point is exact, later prices go through exp once
                let x = if j == 0 { self.x0 } else { l.exp() };
                let psi = if j == 0 { self.rf.psi(x) } else { self.reward(x) };
                payoff += (-self.r * t).exp() * psi;
                right += 1;
                if right == k {
                    break;
                }
                next_allowed = t + self.refraction;
            }
            if j >= self.n_steps {
                break;
            }
            let z: f64 = rng.sample(StandardNormal);
            l += self.drift_dt + sign * self.vol_sqdt * z;
            j += 1;
        }
        payoff
    }

    fn sample(&self, seed: u64, path: u64, antithetic: bool) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path + 1);
        if antithetic {
            let mut mirror = rng.clone();
            0.5 * (self.leg(&mut rng, 1.0) + self.leg(&mut mirror, -1.0))
        } else {
            self.leg(&mut rng, 1.0)
        }
    }
}

fn merge(a: (u64, f64, f64), b: (u64, f64, f64)) -> (u64, f64, f64) {
    let (na, ma, m2a) = a;
    let (nb, mb, m2b) = b;
    if na == 0 {
        return b;
    }
    if nb == 0 {
        return a;
    }
    let n = na + nb;
    let delta = mb - ma;
    let mean = ma + delta * (nb as f64 / n as f64);
    let m2 = m2a + m2b + delta * delta * (na as f64 * nb as f64 / n as f64);
    (n, mean, m2)
}

/// Mean and standard error of the discounted reward stream collected by the
/// policy along `path_count` exact lognormal paths started at `x0`.
pub fn simulate_policy_value(
    rf: &RewardFunction,
    policy: &ThresholdPolicy,
    config: &SimulationConfig,
    x0: f64,
) -> Result<(f64, f64)> {
    if !(x0.is_finite() && x0 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "start price x0 = {x0} must be positive and finite"
        )));
    }
    config.validate(policy)?;
    let sim = Sim::new(rf, policy, config, x0)?;
    let chunks = config.path_count.div_ceil(CHUNK);
    let stats: Vec<(u64, f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = ((c + 1) * CHUNK).min(config.path_count);
            let mut n = 0u64;
            let mut mean = 0.0f64;
            let mut m2 = 0.0f64;
            for p in lo..hi {
                let x = sim.sample(config.seed, p as u64, config.antithetic);
                n += 1;
                let delta = x - mean;
                mean += delta / n as f64;
                m2 += delta * (x - mean);
            }
            (n, mean, m2)
        })
        .collect();
    let (n, mean, m2) = stats.into_iter().fold((0, 0.0, 0.0), merge);
    let se = (m2 / (n - 1) as f64 / n as f64).sqrt();
    Ok((mean, se))
}

/// First-order optimality probe: nudge each solver threshold by ten percent
/// in both directions and check that no perturbed policy beats the solved
/// one by more than three combined standard errors.
pub fn policy_suboptimality_check(
    rf: &RewardFunction,
    result: &SolveResult,
    config: &SimulationConfig,
    x0: f64,
) -> Result<bool> {
    if !result.converged {
        return Err(Error::InvalidParameter(
            "suboptimality check needs a converged solve".into(),
        ));
    }
    let base = ThresholdPolicy::from_solve(result, rf, result.boundaries.len())?;
    let (v0, se0) = simulate_policy_value(rf, &base, config, x0)?;
    for i in 0..base.thresholds.len() {
        for factor in [0.9, 1.1] {
            let mut t = base.thresholds.clone();
            t[i] *= factor;
            let policy = ThresholdPolicy::new(t, base.refraction)?;
            let (v, se) = simulate_policy_value(rf, &policy, config, x0)?;
            if v > v0 + 3.0 * (se0 * se0 + se * se).sqrt() {
                return Ok(false);
            }
        }
    }
    Ok(true)
}
