//! Scale comparison between a large benchmark project and a smaller, faster
//! alternative sharing the market and the operating cost. The question the
//! module answers: how expensive may the small project be before its full
//! bundle of repeated investments stops beating the benchmark at every
//! price? Bisection on the investment cost against a pointwise dominance
//! predicate gives that critical cost; a discounted-outlay identity gives
//! the naive baseline it is compared against.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::gbm_model::MarketModel;
use crate::numerics::{build_grid, fit_line, GridFunction, PriceGrid};
use crate::reward::{ProjectSpec, RewardFunction};
use crate::solver::{provisional_boundary, solve_on_grid, SolveResult, SolverOptions};

/// A benchmark project and the template of its challenger. Both scenarios
/// are priced on one grid wide enough for whichever spreads further, so
/// value functions can be compared node by node.
#[derive(Debug, Clone)]
pub struct ScenarioPair {
    pub model: MarketModel,
    pub large: ProjectSpec,
    /// Challenger with every field fixed except the investment cost, which
    /// the critical-cost search replaces.
    pub small_template: ProjectSpec,
    pub options: SolverOptions,
    pub quadrature_nodes: usize,
    grid: Arc<PriceGrid>,
}

impl ScenarioPair {
    pub fn new(
        model: MarketModel,
        large: ProjectSpec,
        small_template: ProjectSpec,
        options: SolverOptions,
        quadrature_nodes: usize,
    ) -> Result<Self> {
        if large.op_cost != small_template.op_cost {
            return Err(Error::InvalidParameter(format!(
                "scenarios must share the operating cost, got {} and {}",
                large.op_cost, small_template.op_cost
            )));
        }
        let mut grid: Option<Arc<PriceGrid>> = None;
        for spec in [&large, &small_template] {
            let rf = RewardFunction::with_nodes(model.clone(), spec.clone(), quadrature_nodes)?;
            let x1 = provisional_boundary(&rf, options.clamp_negative_reward)?;
            let g = build_grid(&model, spec, x1, options.grid_count)?;
            if grid.as_ref().map_or(true, |held| g.x_max() > held.x_max()) {
                grid = Some(g);
            }
        }
        Ok(Self {
            model,
            large,
            small_template,
            options,
            quadrature_nodes,
            grid: grid.expect("two candidates were offered"),
        })
    }

    pub fn grid(&self) -> &Arc<PriceGrid> {
        &self.grid
    }

    pub fn solve_large(&self) -> Result<SolveResult> {
        let rf = RewardFunction::with_nodes(
            self.model.clone(),
            self.large.clone(),
            self.quadrature_nodes,
        )?;
        solve_on_grid(&rf, &self.grid, &self.options)
    }

    pub fn solve_small(&self, invest_cost: f64) -> Result<SolveResult> {
        let spec = ProjectSpec::new(
            invest_cost,
            self.small_template.op_cost,
            self.small_template.lifetime,
            self.small_template.lead_time,
            self.small_template.flexible,
        )?;
        let rf = RewardFunction::with_nodes(self.model.clone(), spec, self.quadrature_nodes)?;
        solve_on_grid(&rf, &self.grid, &self.options)
    }
}

/// True when the first solve's value is at least the second's at every
/// strictly positive grid node, with a slack of 1e-6 of the larger value
/// absorbing quadrature noise. Near zero both values collapse onto
/// coefficient times x^gamma, so the coefficients are compared directly
/// instead of trusting ever-smaller node values.
pub fn dominates(small: &SolveResult, large: &SolveResult) -> Result<bool> {
    let (gs, gl) = (&small.grid, &large.grid);
    if gs.len() != gl.len() || gs.x_max() != gl.x_max() {
        return Err(Error::GridMismatch);
    }
    if small.gamma != large.gamma {
        return Err(Error::GridMismatch);
    }
    let vs = small.final_record().v.values();
    let vl = large.final_record().v.values();
    let scale = vs
        .iter()
        .chain(vl.iter())
        .fold(0.0f64, |m, &v| m.max(v.abs()));
    let slack = 1e-6 * scale;
    for i in 1..vs.len() {
        if vs[i] + slack < vl[i] {
            return Ok(false);
        }
    }
    let coeff = |r: &SolveResult| {
        let rec = r.final_record();
        rec.psi_star / rec.boundary.powf(r.gamma)
    };
    Ok(coeff(small) >= coeff(large) * (1.0 - 1e-9))
}

/// Critical investment cost with the bracket the bisection ended on.
#[derive(Debug, Clone, Copy)]
pub struct CriticalCostResult {
    pub i_crit: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Largest investment cost at which the challenger still dominates the
/// benchmark, to bracket width `tol`. Value functions fall when the cost
/// rises, so dominance is monotone in the cost and bisection applies.
pub fn critical_cost(pair: &ScenarioPair, tol: f64) -> Result<CriticalCostResult> {
    let benchmark = pair.solve_large()?;
    critical_cost_with_benchmark(pair, tol, &benchmark)
}

/// [`critical_cost`] against an already-solved benchmark, so contour sweeps
/// pay for the large scenario once.
pub fn critical_cost_with_benchmark(
    pair: &ScenarioPair,
    tol: f64,
    benchmark: &SolveResult,
) -> Result<CriticalCostResult> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "bracket tolerance {tol} must be positive"
        )));
    }
    let i_ref = pair.large.invest_cost;
    // a cost so low the project has no break-even price cannot dominate
    let probe = |i: f64| -> Result<Option<bool>> {
        match pair.solve_small(i) {
            Ok(res) => dominates(&res, benchmark).map(Some),
            Err(Error::NotApplicable { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    };

    // push the failing end up from the benchmark cost
    let cap = 10.0 * i_ref;
    let mut hi = i_ref;
    loop {
        match probe(hi)? {
            Some(false) => break,
            Some(true) => {
                if hi >= cap {
                    return Err(Error::NoParity(format!(
                        "challenger still dominates at {hi}, ten times the benchmark cost"
                    )));
                }
                hi = (2.0 * hi).min(cap);
            }
            None => {
                return Err(Error::NoParity(format!(
                    "challenger cannot be priced at cost {hi}"
                )));
            }
        }
    }
    // and the dominating end down
    let mut lo = 0.5 * hi;
    loop {
        match probe(lo)? {
            Some(true) => break,
            Some(false) => hi = lo,
            None => {}
        }
        lo *= 0.5;
        if lo < 1e-9 * i_ref {
            return Err(Error::NoParity(
                "dominance fails at every feasible cost".into(),
            ));
        }
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        match probe(mid)? {
            Some(true) => lo = mid,
            _ => hi = mid,
        }
    }
    Ok(CriticalCostResult {
        i_crit: 0.5 * (lo + hi),
        lo,
        hi,
    })
}

/// Cost that equates the two scenarios' discounted outlay streams over an
/// infinite horizon of back-to-back lifetimes.
pub fn npv_critical_cost(r: f64, t_small: f64, t_large: f64, i_large: f64) -> f64 {
    debug_assert!(r > 0.0 && t_small > 0.0 && t_large > 0.0 && i_large > 0.0);
    i_large * (1.0 - (-r * t_small).exp()) / (1.0 - (-r * t_large).exp())
}

/// Least-squares slope of a grid function over the last tenth of the grid.
pub fn tail_slope(f: &GridFunction) -> f64 {
    let pts = f.grid().points();
    let vals = f.values();
    let n = pts.len();
    let start = n - (n / 10).max(2);
    let window: Vec<(f64, f64)> = (start..n).map(|i| (pts[i], vals[i])).collect();
    fit_line(&window).0
}

/// Far above the operating cost the trigger and the value both straighten
/// out, with slopes set by the lead-time discount alone: the value grows
/// like e^{-(r-alpha) nu}/(r-alpha) per unit price and the trigger carries
/// an extra factor gamma - 1. Lifetime only enters through terms that
/// cancel, which is what this check certifies across sweeps.
pub fn asymptotic_slope_check(result: &SolveResult, rf: &RewardFunction) -> bool {
    let model = rf.model();
    let q = model.r - model.alpha;
    let f = (-q * rf.spec().lead_time).exp() / q;
    let rec = result.final_record();
    let u_target = (result.gamma - 1.0) * f;
    let v_target = f;
    let u_fit = tail_slope(&rec.u);
    let v_fit = tail_slope(&rec.v);
    (u_fit - u_target).abs() <= 0.02 * u_target && (v_fit - v_target).abs() <= 0.02 * v_target
}
