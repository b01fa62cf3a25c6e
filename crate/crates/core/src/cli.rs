//! Command-line front end: a sectioned key-value scenario file, four
//! subcommands (solve, sweep, contour, oracle), CSV artifacts with
//! round-trip-exact floats, and exit codes that separate configuration
//! mistakes from solver failures from simulation disagreement.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::critical_cost::{critical_cost, ScenarioPair};
use crate::gbm_model::MarketModel;
use crate::oracle::{simulate_policy_value, SimulationConfig, ThresholdPolicy};
use crate::reward::{ProjectSpec, RewardFunction};
use crate::solver::{solve_multiple_with, SolveResult, SolverOptions};

/// Iteration controls as they appear in the `[solver]` config section.
#[derive(Debug, Clone, Copy)]
pub struct SolverSettings {
    pub grid_count: usize,
    pub eps_target: f64,
    pub k_max: usize,
    pub quadrature_nodes: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            grid_count: 500,
            eps_target: 1e-3,
            k_max: 200,
            quadrature_nodes: RewardFunction::DEFAULT_QUADRATURE_NODES,
        }
    }
}

/// A fully validated scenario: market dynamics, project terms, iteration
/// controls. Field defaults reproduce the reference parameter set
/// (alpha 5%, sigma 20%, r 10%, I 1, c 0.1, T 5, nu 1, flexible).
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: MarketModel,
    pub spec: ProjectSpec,
    pub solver: SolverSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: MarketModel::new(0.05, 0.2, 0.1).expect("reference market parameters"),
            spec: ProjectSpec::new(1.0, 0.1, 5.0, 1.0, true).expect("reference project terms"),
            solver: SolverSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn reward(&self) -> crate::Result<RewardFunction> {
        RewardFunction::with_nodes(
            self.model.clone(),
            self.spec.clone(),
            self.solver.quadrature_nodes,
        )
    }

    pub fn options(&self) -> SolverOptions {
        SolverOptions {
            grid_count: self.solver.grid_count,
            k_max: self.solver.k_max,
            eps_target: self.solver.eps_target,
            ..SolverOptions::default()
        }
    }
}

/// Parse or validation failure, pinned to a config file line.
#[derive(Debug)]
pub struct ConfigError {
    pub origin: String,
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.origin, self.line, self.message)
    }
}

impl std::error::Error for ConfigError {}

struct RawItem {
    value: String,
    line: usize,
    used: bool,
}

struct RawConfig {
    origin: String,
    // (section, key) -> value; sections keep their header line for
    // cross-field complaints that no single key owns
    items: Vec<(String, String, RawItem)>,
    section_lines: Vec<(String, usize)>,
}

impl RawConfig {
    fn err(&self, line: usize, message: impl Into<String>) -> ConfigError {
        ConfigError {
            origin: self.origin.clone(),
            line,
            message: message.into(),
        }
    }

    fn section_line(&self, section: &str) -> usize {
        self.section_lines
            .iter()
            .find(|(s, _)| s == section)
            .map(|&(_, l)| l)
            .unwrap_or(0)
    }

    fn take(&mut self, section: &str, key: &str) -> Option<(String, usize)> {
        for (s, k, item) in &mut self.items {
            if s == section && k == key {
                item.used = true;
                return Some((item.value.clone(), item.line));
            }
        }
        None
    }

    fn float(&mut self, section: &str, key: &str, default: f64) -> Result<(f64, usize), ConfigError> {
        match self.take(section, key) {
            None => Ok((default, self.section_line(section))),
            Some((raw, line)) => raw
                .parse::<f64>()
                .map_err(|_| self.err(line, format!("{key} is not a number: `{raw}`")))
                .map(|v| (v, line)),
        }
    }

    fn usize(
        &mut self,
        section: &str,
        key: &str,
        default: usize,
    ) -> Result<(usize, usize), ConfigError> {
        match self.take(section, key) {
            None => Ok((default, self.section_line(section))),
            Some((raw, line)) => raw
                .parse::<usize>()
                .map_err(|_| self.err(line, format!("{key} is not a whole number: `{raw}`")))
                .map(|v| (v, line)),
        }
    }

    fn boolean(&mut self, section: &str, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.take(section, key) {
            None => Ok(default),
            Some((raw, line)) => match raw.as_str() {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(self.err(line, format!("{key} must be true or false, got `{raw}`"))),
            },
        }
    }
}

fn scan(text: &str, origin: &str) -> Result<RawConfig, ConfigError> {
    let mut raw = RawConfig {
        origin: origin.to_string(),
        items: Vec::new(),
        section_lines: Vec::new(),
    };
    let mut section: Option<String> = None;
    for (idx, full_line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = full_line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| raw.err(lineno, "unterminated section header"))?
                .trim();
            if !matches!(name, "market" | "project" | "solver") {
                return Err(raw.err(lineno, format!("unknown section [{name}]")));
            }
            if raw.section_lines.iter().any(|(s, _)| s == name) {
                return Err(raw.err(lineno, format!("section [{name}] appears twice")));
            }
            raw.section_lines.push((name.to_string(), lineno));
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| raw.err(lineno, format!("expected `key = value`, got `{line}`")))?;
        let key = key.trim();
        let value = value.trim();
        let section = section
            .clone()
            .ok_or_else(|| raw.err(lineno, format!("`{key}` appears before any section header")))?;
        if raw
            .items
            .iter()
            .any(|(s, k, _)| *s == section && k == key)
        {
            return Err(raw.err(lineno, format!("duplicate key `{key}` in [{section}]")));
        }
        raw.items.push((
            section,
            key.to_string(),
            RawItem {
                value: value.to_string(),
                line: lineno,
                used: false,
            },
        ));
    }
    Ok(raw)
}

/// Builds a validated scenario from config text. Unknown keys, duplicate
/// keys, malformed numbers, and parameter-range violations all fail with
/// the offending line.
pub fn parse_config(text: &str, origin: &str) -> Result<RunConfig, ConfigError> {
    let mut raw = scan(text, origin)?;
    let defaults = RunConfig::default();

    let (alpha, _) = raw.float("market", "alpha", defaults.model.alpha)?;
    let (sigma, sigma_line) = raw.float("market", "sigma", defaults.model.sigma)?;
    let (r, _) = raw.float("market", "r", defaults.model.r)?;
    if sigma <= 0.0 {
        return Err(raw.err(sigma_line, format!("sigma must be positive, got {sigma}")));
    }
    let model = MarketModel::new(alpha, sigma, r)
        .map_err(|e| raw.err(raw.section_line("market"), e.to_string()))?;

    let (invest_cost, _) = raw.float("project", "invest_cost", defaults.spec.invest_cost)?;
    let (op_cost, _) = raw.float("project", "op_cost", defaults.spec.op_cost)?;
    let (lifetime, _) = raw.float("project", "lifetime", defaults.spec.lifetime)?;
    let (lead_time, _) = raw.float("project", "lead_time", defaults.spec.lead_time)?;
    let flexible = raw.boolean("project", "flexible", defaults.spec.flexible)?;
    let spec = ProjectSpec::new(invest_cost, op_cost, lifetime, lead_time, flexible)
        .map_err(|e| raw.err(raw.section_line("project"), e.to_string()))?;

    let (grid_count, gc_line) = raw.usize("solver", "grid_count", defaults.solver.grid_count)?;
    let (eps_target, eps_line) = raw.float("solver", "eps_target", defaults.solver.eps_target)?;
    let (k_max, km_line) = raw.usize("solver", "k_max", defaults.solver.k_max)?;
    let (quadrature_nodes, qn_line) =
        raw.usize("solver", "quadrature_nodes", defaults.solver.quadrature_nodes)?;
    if grid_count < 3 {
        return Err(raw.err(gc_line, format!("grid_count must be at least 3, got {grid_count}")));
    }
    if !(eps_target > 0.0 && eps_target.is_finite()) {
        return Err(raw.err(eps_line, format!("eps_target must be positive, got {eps_target}")));
    }
    if k_max < 1 {
        return Err(raw.err(km_line, "k_max must be at least 1".to_string()));
    }
    if quadrature_nodes < 2 {
        return Err(raw.err(qn_line, format!(
            "quadrature_nodes must be at least 2, got {quadrature_nodes}"
        )));
    }

    for (section, key, item) in &raw.items {
        if !item.used {
            return Err(ConfigError {
                origin: raw.origin.clone(),
                line: item.line,
                message: format!("unknown key `{key}` in [{section}]"),
            });
        }
    }

    Ok(RunConfig {
        model,
        spec,
        solver: SolverSettings {
            grid_count,
            eps_target,
            k_max,
            quadrature_nodes,
        },
    })
}

/// Reads and parses a config file; `None` yields the built-in defaults.
pub fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| {
                CliError::Config(format!("cannot read config {}: {e}", p.display()))
            })?;
            parse_config(&text, &p.display().to_string())
                .map_err(|e| CliError::Config(e.to_string()))
        }
    }
}

/// Failure classes, ordered by exit code: config 1, solver 2, oracle 3.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Solver(crate::Error),
    Io(std::io::Error),
    OracleDeviation { z: f64 },
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "{m}"),
            CliError::Solver(e) => write!(f, "solve failed: {e}"),
            CliError::Io(e) => write!(f, "{e}"),
            CliError::OracleDeviation { z } => {
                write!(f, "simulation disagrees with the solver: |z| = {:.2} > 4", z.abs())
            }
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 1,
            CliError::Solver(_) => 2,
            CliError::OracleDeviation { .. } => 3,
        }
    }
}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        CliError::Solver(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

// 17 significant digits: parses back to the identical bit pattern
fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<(), CliError> {
    let mut out = String::with_capacity(rows.len() * 64 + header.len() + 1);
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(row);
        out.push('\n');
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

// error strings share rows with numeric fields; keep the delimiter clean
fn sanitize(message: &str) -> String {
    message.replace(['\n', ','], ";")
}

fn solve(cfg: &RunConfig) -> Result<(RewardFunction, SolveResult), CliError> {
    let rf = cfg.reward()?;
    let result = solve_multiple_with(&rf, &cfg.options())?;
    Ok((rf, result))
}

/// Full solve: boundaries.csv and value.csv under `out`, human-readable
/// summary returned for stdout.
pub fn cmd_solve(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let (_, result) = solve(cfg)?;
    fs::create_dir_all(out)?;

    let rows: Vec<String> = result
        .records
        .iter()
        .map(|rec| {
            format!(
                "{},{},{}",
                rec.k,
                fmt_float(rec.boundary),
                fmt_float(rec.epsilon)
            )
        })
        .collect();
    write_csv(&out.join("boundaries.csv"), "k,x_star,epsilon", &rows)?;

    // early passes show the sweep of the iteration, then the final one
    let mut picks: Vec<usize> = [1usize, 2, 5, 10]
        .iter()
        .copied()
        .filter(|&k| k < result.k_final)
        .collect();
    picks.push(result.k_final);
    let header = std::iter::once("x".to_string())
        .chain(picks.iter().map(|k| format!("v_k{k}")))
        .collect::<Vec<_>>()
        .join(",");
    let pts = result.grid.points();
    let value_rows: Vec<String> = (0..pts.len())
        .map(|i| {
            let mut row = fmt_float(pts[i]);
            for &k in &picks {
                row.push(',');
                row.push_str(&fmt_float(result.records[k - 1].v.values()[i]));
            }
            row
        })
        .collect();
    write_csv(&out.join("value.csv"), &header, &value_rows)?;

    let warn = if result.warnings.is_empty() {
        String::new()
    } else {
        format!("\nwarnings:\n  {}", result.warnings.join("\n  "))
    };
    Ok(format!(
        "gamma      {:.6}\n\
         x0         {:.6}\n\
         x_prime    {:.6}\n\
         x_max      {:.6}\n\
         x1_star    {:.6}\n\
         x_final    {:.6}\n\
         k_final    {}\n\
         epsilon    {:.3e}\n\
         converged  {}{}",
        result.gamma,
        result.x0,
        result.x_prime,
        result.grid.x_max(),
        result.boundaries[0],
        result.final_record().boundary,
        result.k_final,
        result.final_record().epsilon,
        result.converged,
        warn
    ))
}

/// Parameter axes a sweep can walk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Alpha,
    Sigma,
    Lifetime,
    LeadTime,
    InvestCost,
    OpCost,
}

impl SweepAxis {
    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "alpha" => Self::Alpha,
            "sigma" => Self::Sigma,
            "T" | "lifetime" => Self::Lifetime,
            "nu" | "lead_time" => Self::LeadTime,
            "I" | "invest_cost" => Self::InvestCost,
            "c" | "op_cost" => Self::OpCost,
            _ => return None,
        })
    }

    fn apply(self, cfg: &RunConfig, value: f64) -> crate::Result<RunConfig> {
        let mut model = (cfg.model.alpha, cfg.model.sigma, cfg.model.r);
        let mut spec = (
            cfg.spec.invest_cost,
            cfg.spec.op_cost,
            cfg.spec.lifetime,
            cfg.spec.lead_time,
        );
        match self {
            Self::Alpha => model.0 = value,
            Self::Sigma => model.1 = value,
            Self::Lifetime => spec.2 = value,
            Self::LeadTime => spec.3 = value,
            Self::InvestCost => spec.0 = value,
            Self::OpCost => spec.1 = value,
        }
        Ok(RunConfig {
            model: MarketModel::new(model.0, model.1, model.2)?,
            spec: ProjectSpec::new(spec.0, spec.1, spec.2, spec.3, cfg.spec.flexible)?,
            solver: cfg.solver,
        })
    }
}

/// One solve per axis value, concurrently, emitted in input order to
/// sweep.csv. A failed cell keeps its row with the message in the error
/// column so the rest of the sweep survives.
pub fn cmd_sweep(
    cfg: &RunConfig,
    axis: SweepAxis,
    values: &[f64],
    out: &Path,
) -> Result<String, CliError> {
    fs::create_dir_all(out)?;
    let header = "axis_value,x1_star,x2_star,x3_star,x_final_star,\
                  v_at_quarter_x1,v_at_half_x1,v_at_x1,v_at_half,error";
    let rows: Vec<String> = values
        .par_iter()
        .map(|&value| {
            let cell = axis
                .apply(cfg, value)
                .and_then(|c| {
                    let rf = c.reward()?;
                    let result = solve_multiple_with(&rf, &c.options())?;
                    Ok(result)
                });
            match cell {
                Err(e) => format!("{},,,,,,,,,{}", fmt_float(value), sanitize(&e.to_string())),
                Ok(result) => {
                    let b = &result.boundaries;
                    let x1 = b[0];
                    let pick = |k: usize| {
                        b.get(k - 1)
                            .map(|&x| fmt_float(x))
                            .unwrap_or_default()
                    };
                    let probes = [0.25 * x1, 0.5 * x1, x1, 0.5];
                    let v = result.final_record();
                    let probe_cols = probes
                        .iter()
                        .map(|&p| fmt_float(v.v.evaluate(p)))
                        .collect::<Vec<_>>()
                        .join(",");
                    format!(
                        "{},{},{},{},{},{},",
                        fmt_float(value),
                        pick(1),
                        pick(2),
                        pick(3),
                        fmt_float(b[b.len() - 1]),
                        probe_cols
                    )
                }
            }
        })
        .collect();
    write_csv(&out.join("sweep.csv"), header, &rows)?;
    Ok(format!("sweep of {} values written to {}", values.len(), out.join("sweep.csv").display()))
}

/// Critical-cost surface over small-project lifetimes and lead times,
/// against the benchmark described by the config. Cells run concurrently;
/// rows come out in (lifetime, lead time) input order.
pub fn cmd_contour(
    cfg: &RunConfig,
    lifetimes: &[f64],
    lead_times: &[f64],
    tol: f64,
    out: &Path,
) -> Result<String, CliError> {
    fs::create_dir_all(out)?;
    let cells: Vec<(f64, f64)> = lifetimes
        .iter()
        .flat_map(|&t| lead_times.iter().map(move |&nu| (t, nu)))
        .collect();
    let rows: Vec<String> = cells
        .par_iter()
        .map(|&(t, nu)| {
            let run = ProjectSpec::new(cfg.spec.invest_cost, cfg.spec.op_cost, t, nu, cfg.spec.flexible)
                .and_then(|small| {
                    let pair = ScenarioPair::new(
                        cfg.model.clone(),
                        cfg.spec.clone(),
                        small,
                        cfg.options(),
                        cfg.solver.quadrature_nodes,
                    )?;
                    critical_cost(&pair, tol)
                });
            match run {
                Ok(res) => format!("{},{},{},", fmt_float(t), fmt_float(nu), fmt_float(res.i_crit)),
                Err(e) => format!(
                    "{},{},,{}",
                    fmt_float(t),
                    fmt_float(nu),
                    sanitize(&e.to_string())
                ),
            }
        })
        .collect();
    write_csv(&out.join("contour.csv"), "t_small,nu_small,i_crit,error", &rows)?;
    Ok(format!(
        "{} cells written to {}",
        cells.len(),
        out.join("contour.csv").display()
    ))
}

/// Simulation check settings; `None` fields fall back to scales taken from
/// the scenario itself.
#[derive(Debug, Clone, Copy)]
pub struct OracleArgs {
    pub rights: usize,
    pub start: f64,
    pub paths: usize,
    pub seed: u64,
    pub time_step: Option<f64>,
    pub horizon: Option<f64>,
    pub antithetic: bool,
}

impl Default for OracleArgs {
    fn default() -> Self {
        Self {
            rights: 1,
            start: 0.5,
            paths: 100_000,
            seed: 1,
            time_step: None,
            horizon: None,
            antithetic: false,
        }
    }
}

/// Solves, then replays the solved thresholds through the path simulator
/// and reports the z-score of the disagreement. |z| > 4 is a failure.
pub fn cmd_oracle(cfg: &RunConfig, args: &OracleArgs) -> Result<String, CliError> {
    let (rf, result) = solve(cfg)?;
    if args.rights == 0 || args.rights > result.k_final {
        return Err(CliError::Config(format!(
            "rights must lie in 1..={} (the solve produced {} passes), got {}",
            result.k_final, result.k_final, args.rights
        )));
    }
    let target = result.records[args.rights - 1].v.evaluate(args.start);

    let policy = ThresholdPolicy::from_solve(&result, &rf, args.rights)?;
    let lifetime = cfg.spec.lifetime;
    let dt = args.time_step.unwrap_or(lifetime / 100.0);
    let horizon = args
        .horizon
        .unwrap_or(lifetime * (args.rights - 1) as f64 + 40.0 * lifetime);
    let mut sim = SimulationConfig::new(args.paths, dt, horizon, args.seed);
    sim.antithetic = args.antithetic;
    let (estimate, se) = simulate_policy_value(&rf, &policy, &sim, args.start)?;

    let diff = estimate - target;
    let z = if se > 0.0 {
        diff / se
    } else if diff.abs() <= 1e-12 * target.abs().max(1.0) {
        0.0
    } else {
        f64::INFINITY
    };
    let report = format!(
        "solver value  {}\n\
         simulated     {} (se {})\n\
         z             {z:.3}",
        fmt_float(target),
        fmt_float(estimate),
        fmt_float(se),
    );
    if z.abs() > 4.0 {
        eprintln!("{report}");
        return Err(CliError::OracleDeviation { z });
    }
    Ok(report)
}

/// Output directory helper: the flag when given, else the working dir.
pub fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.unwrap_or_else(|| PathBuf::from("."))
}
