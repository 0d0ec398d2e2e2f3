use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use cpmm_core::backtest::{
    execute_path, read_events, run_liquidation_backtest, run_lp_backtest, run_speculation_backtest,
    synthetic_lp_events, synthetic_model1_events, write_results, BacktestConfig, LpBacktestConfig, StrategyKind,
};
use cpmm_core::dynamics::{
    simulate_cir, simulate_depth, simulate_model1, simulate_order_flow, CirParams, ModelIIParams, ModelIParams,
    OrderFlowParams,
};
use cpmm_core::econometrics::{estimate_model1, fit_var, rolling_spillover, spillover, var1_to_multi_ou, FevdVariant};
use cpmm_core::env::{optimal_spread_ticks, run_episode, Action, EnvConfig};
use cpmm_core::execution::LiquidationConfig;
use cpmm_core::hjb::{solve_model1_pde, solve_model2_pde, verify_bounds, Grid3D};
use cpmm_core::lp::{optimal_spread, viability_check, LpParams};
use cpmm_core::nalgebra::DMatrix;
use cpmm_core::Error;

const DAY: f64 = 86_400.0;

/// Toolkit for constant-product market makers: simulation, estimation,
/// optimal execution, liquidity provision and backtests.
#[derive(Parser, Debug)]
#[command(name = "cpmm", version)]
struct Cli {
    /// Flat `key = value` file; keys are long flag names. Command-line flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Simulate rate, depth, fee-rate or order-flow paths to CSV.
    Simulate(SimulateArgs),
    /// Fit Model I or a VAR to a CSV of observations; JSON out.
    Estimate(EstimateArgs),
    /// Run a liquidation strategy on a simulated Model I path; CSV out.
    Execute(ExecuteArgs),
    /// Solve the liquidation HJB system on a grid; CSV out, bound report on stderr.
    SolveHjb(SolveHjbArgs),
    /// Optimal LP range for given pool statistics; JSON out.
    LpQuote(LpQuoteArgs),
    /// Diebold-Yilmaz spillover indices of a CSV of series; JSON out.
    Spillover(SpilloverArgs),
    /// Run the multi-pool LP environment; trajectory CSV out.
    EnvRun(EnvRunArgs),
    /// Replay backtest over an event CSV or a synthetic log; CSV or JSON out.
    Backtest(BacktestArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SimModel {
    Model1,
    Model2,
    Cir,
    OrderFlow,
}

#[derive(Args, Debug)]
struct ModelIArgs {
    #[arg(long, default_value_t = 0.045)]
    sigma: f64,
    #[arg(long, default_value_t = 657.9)]
    beta: f64,
    #[arg(long, default_value_t = 0.034)]
    gamma: f64,
    #[arg(long, default_value_t = 2690.0)]
    s0: f64,
    #[arg(long, default_value_t = 2690.0)]
    z0: f64,
}

impl ModelIArgs {
    fn params(&self) -> ModelIParams {
        ModelIParams { sigma: self.sigma, beta: self.beta, gamma: self.gamma, s0: self.s0, z0: self.z0 }
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "model1")]
    model: SimModel,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    /// Time step in days.
    #[arg(long, default_value_t = 1.0 / 1440.0)]
    dt: f64,
    #[command(flatten)]
    m1: ModelIArgs,
    #[arg(long, default_value_t = 0.1)]
    varsigma: f64,
    #[arg(long, default_value_t = 2.25e7)]
    kappa0: f64,
    #[arg(long, default_value_t = 10.0)]
    big_gamma: f64,
    #[arg(long, default_value_t = 0.02)]
    pi_bar: f64,
    #[arg(long, default_value_t = 0.1)]
    psi: f64,
    #[arg(long, default_value_t = 0.02)]
    pi0: f64,
    /// Orders per minute.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0.5)]
    p_buy: f64,
    #[arg(long, default_value_t = 132_030.0)]
    mu_size: f64,
    #[arg(long, default_value_t = 20_000.0)]
    xi_size: f64,
    /// Order-flow horizon in minutes.
    #[arg(long, default_value_t = 1440.0)]
    horizon: f64,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum EstimateKind {
    Model1,
    Var,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "model1")]
    kind: EstimateKind,
    /// Sampling interval in days.
    #[arg(long, default_value_t = 1.0 / 1440.0)]
    dt: f64,
    #[arg(long, default_value = "S")]
    s_col: String,
    #[arg(long, default_value = "Z")]
    z_col: String,
    #[arg(long, default_value_t = 1)]
    lags: usize,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Strategy {
    Optimal,
    Twap,
    SingleOrder,
    AlmgrenChriss,
}

impl From<Strategy> for StrategyKind {
    fn from(s: Strategy) -> Self {
        match s {
            Strategy::Optimal => StrategyKind::Optimal,
            Strategy::Twap => StrategyKind::Twap,
            Strategy::SingleOrder => StrategyKind::SingleOrder,
            Strategy::AlmgrenChriss => StrategyKind::AlmgrenChriss,
        }
    }
}

#[derive(Args, Debug)]
struct LiquidationArgs {
    /// Horizon in days.
    #[arg(long, default_value_t = 0.083)]
    t_horizon: f64,
    #[arg(long, default_value_t = 0.005)]
    phi: f64,
    #[arg(long, default_value_t = 10.0)]
    alpha: f64,
    /// Trading-frequency scale in days.
    #[arg(long, default_value_t = 13.0 / DAY)]
    eta: f64,
    #[arg(long, default_value_t = 2.25e7)]
    kappa: f64,
    #[arg(long, default_value_t = 14_877.0)]
    y0: f64,
}

#[derive(Args, Debug)]
struct ExecuteArgs {
    #[arg(long, value_enum, default_value = "optimal")]
    strategy: Strategy,
    #[command(flatten)]
    liq: LiquidationArgs,
    #[command(flatten)]
    m1: ModelIArgs,
    #[arg(long, default_value_t = 552)]
    steps: usize,
    #[arg(long, default_value_t = 1e-4)]
    amm_fee: f64,
    #[arg(long, default_value_t = 5.0)]
    gas: f64,
}

#[derive(Args, Debug)]
struct SolveHjbArgs {
    /// 1 solves on (t, Z, S), 2 on (t, Z, kappa).
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    model: u8,
    /// Nodes as TIMExRATExSECOND.
    #[arg(long, default_value = "64x64x64")]
    grid: String,
    #[arg(long, default_value_t = 0.1)]
    t_horizon: f64,
    #[arg(long, default_value_t = 1e-5)]
    phi: f64,
    #[arg(long, default_value_t = 5.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    #[arg(long, default_value_t = 1e7)]
    kappa: f64,
    #[arg(long, default_value_t = 0.03)]
    sigma: f64,
    #[arg(long, default_value_t = 0.02)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value_t = 2000.0)]
    z0: f64,
    #[arg(long, default_value_t = 2000.0)]
    s0: f64,
    #[arg(long, default_value_t = 0.1)]
    varsigma: f64,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 50)]
    max_iters: usize,
}

#[derive(Args, Debug)]
struct LpArgs {
    /// Concentration cost per day.
    #[arg(long, default_value_t = 5e-7)]
    gamma_c: f64,
    /// Rate volatility per square-root day.
    #[arg(long, default_value_t = 0.02)]
    sigma: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    mu: f64,
    #[arg(long, default_value_t = 1e-4)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.0)]
    zeta_rebal: f64,
}

impl LpArgs {
    fn params(&self) -> LpParams {
        LpParams {
            gamma_c: self.gamma_c,
            sigma: self.sigma,
            zeta_rebal: self.zeta_rebal,
            epsilon: self.epsilon,
            mu: self.mu,
        }
    }
}

#[derive(Args, Debug)]
struct LpQuoteArgs {
    /// Pool fee rate per day.
    #[arg(long)]
    pi: f64,
    #[arg(long, default_value_t = 1.0)]
    z: f64,
    #[command(flatten)]
    lp: LpArgs,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Variant {
    Standard,
    Squared,
}

#[derive(Args, Debug)]
struct SpilloverArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 1)]
    lags: usize,
    #[arg(long, default_value_t = 10)]
    horizon: usize,
    #[arg(long, value_enum, default_value = "standard")]
    variant: Variant,
    /// Rolling window length in observations.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long, default_value_t = 1)]
    step: usize,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum EnvStrategy {
    Optimal,
    Widest,
    Fixed,
}

#[derive(Args, Debug)]
struct EnvRunArgs {
    /// Orders per minute.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0.5)]
    p_buy: f64,
    #[arg(long, default_value_t = 0.003)]
    tau: f64,
    #[arg(long, value_enum, default_value = "optimal")]
    strategy: EnvStrategy,
    /// Ticks below the current tick for the fixed strategy.
    #[arg(long, default_value_t = 50)]
    lower: u32,
    /// Ticks above the current tick for the fixed strategy.
    #[arg(long, default_value_t = 50)]
    upper: u32,
    #[arg(long, default_value_t = 5e-7)]
    gamma_c: f64,
    #[arg(long, default_value_t = 1e-6)]
    epsilon: f64,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum BacktestKind {
    Liquidation,
    Speculation,
    Lp,
}

#[derive(Args, Debug)]
struct BacktestArgs {
    #[arg(long, value_enum, default_value = "liquidation")]
    kind: BacktestKind,
    /// Event CSV; a synthetic log is generated from the seed when absent.
    #[arg(long)]
    events: Option<PathBuf>,
    /// Length of the synthetic log in hours.
    #[arg(long, default_value_t = 24)]
    synthetic_hours: usize,
    #[arg(long, default_value = "pool")]
    pool_id: String,
    #[arg(long, default_value = "oracle")]
    oracle_id: String,
    /// Seconds.
    #[arg(long, default_value_t = 7200.0)]
    in_sample_window: f64,
    /// Seconds.
    #[arg(long, default_value_t = 7200.0)]
    out_sample_window: f64,
    /// Seconds.
    #[arg(long, default_value_t = 15.0)]
    sample_interval: f64,
    #[arg(long, default_value_t = 0.5)]
    participation_rate: f64,
    #[arg(long, default_value_t = 5.0)]
    gas_per_tx: f64,
    #[arg(long, default_value_t = 1e-4)]
    amm_fee: f64,
    #[arg(long, default_value_t = 0.005)]
    phi: f64,
    #[arg(long, default_value_t = 10.0)]
    alpha: f64,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "optimal,twap,single-order")]
    strategies: Vec<Strategy>,
    /// LP operation length in seconds.
    #[arg(long, default_value_t = 60.0)]
    period: f64,
    #[arg(long, default_value_t = 5e-4)]
    fee_tier: f64,
    #[arg(long, default_value_t = 1e5)]
    wealth: f64,
    #[arg(long, default_value_t = 84.8)]
    gas_per_op: f64,
    #[command(flatten)]
    lp: LpArgs,
}

enum Failure {
    Config(String),
    Data(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Domain(_) | Error::Dimension(_) => Failure::Config(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

type Res<T> = std::result::Result<T, Failure>;

fn config_path(argv: &[String]) -> Option<String> {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.to_string());
        }
    }
    None
}

/// Append `--key=value` for every config entry not already given as a flag.
fn merge_config(mut argv: Vec<String>) -> Res<Vec<String>> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| Failure::Config(format!("config {path}: {e}")))?;
    let mut extra = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Failure::Config(format!("config {path}:{}: expected key = value", n + 1)));
        };
        let key = k.trim().replace('_', "-");
        let flag = format!("--{key}");
        if key == "config" || argv.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}="))) {
            continue;
        }
        extra.push(format!("{flag}={}", v.trim()));
    }
    argv.extend(extra);
    Ok(argv)
}

fn output(path: &Option<PathBuf>) -> Res<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn write_json(path: &Option<PathBuf>, v: &Value) -> Res<()> {
    let mut w = output(path)?;
    serde_json::to_writer_pretty(&mut w, v).map_err(|e| Failure::Data(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Numeric CSV with a header; returns column names and rows.
fn read_table(path: &Path) -> Res<(Vec<String>, Vec<Vec<f64>>)> {
    let f = File::open(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    let mut rd = csv::Reader::from_reader(BufReader::new(f));
    let names: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for (n, rec) in rd.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Failure::Data(format!("{} row {}: {e}", path.display(), n + 2)))?;
        rows.push(row);
    }
    Ok((names, rows))
}

fn column(names: &[String], rows: &[Vec<f64>], name: &str) -> Res<Vec<f64>> {
    let k = names.iter().position(|n| n == name).ok_or_else(|| Failure::Data(format!("missing column '{name}'")))?;
    Ok(rows.iter().map(|r| r[k]).collect())
}

/// All columns except a leading time column, as an observations-by-series matrix.
fn series_matrix(names: &[String], rows: &[Vec<f64>]) -> Res<(Vec<String>, DMatrix<f64>)> {
    let keep: Vec<usize> = (0..names.len()).filter(|&k| names[k] != "t").collect();
    if keep.is_empty() || rows.is_empty() {
        return Err(Failure::Data("no data columns".into()));
    }
    let m = DMatrix::from_fn(rows.len(), keep.len(), |i, j| rows[i][keep[j]]);
    Ok((keep.iter().map(|&k| names[k].clone()).collect(), m))
}

fn matrix_json(m: &DMatrix<f64>) -> Value {
    json!((0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect::<Vec<_>>()).collect::<Vec<_>>())
}

fn finite_or_null(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

fn simulate(a: &SimulateArgs, seed: u64, out: &Option<PathBuf>) -> Res<()> {
    let w = output(out)?;
    match a.model {
        SimModel::Model1 => simulate_model1(&a.m1.params(), a.dt, a.steps, seed)?.write_csv(w)?,
        SimModel::Model2 => {
            let p = ModelIIParams { gamma: a.m1.gamma, varsigma: a.varsigma, z0: a.m1.z0, kappa0: a.kappa0 };
            simulate_depth(&p, a.dt, a.steps, seed)?.write_csv(w)?
        }
        SimModel::Cir => {
            let p = CirParams { big_gamma: a.big_gamma, pi_bar: a.pi_bar, psi: a.psi, pi_tilde0: a.pi0 };
            simulate_cir(&p, a.dt, a.steps, seed)?.write_csv(w)?
        }
        SimModel::OrderFlow => {
            let p = OrderFlowParams { lambda: a.lambda, p_buy: a.p_buy, mu_size: a.mu_size, xi_size: a.xi_size };
            let mut wr = csv::Writer::from_writer(w);
            wr.write_record(["t_minutes", "buy", "size_x_units"])?;
            for e in simulate_order_flow(&p, a.horizon, seed)? {
                wr.write_record([e.time.to_string(), e.buy.to_string(), e.size.to_string()])?;
            }
            wr.flush()?;
        }
    }
    Ok(())
}

fn estimate(a: &EstimateArgs, out: &Option<PathBuf>) -> Res<()> {
    let (names, rows) = read_table(&a.input)?;
    let v = match a.kind {
        EstimateKind::Model1 => {
            let s = column(&names, &rows, &a.s_col)?;
            let z = column(&names, &rows, &a.z_col)?;
            let e = estimate_model1(&s, &z, a.dt)?;
            json!({
                "sigma_per_sqrt_day": e.sigma,
                "sigma_se_per_sqrt_day": e.sigma_se,
                "gamma_per_sqrt_day": e.gamma,
                "gamma_se_per_sqrt_day": e.gamma_se,
                "beta_per_day": e.beta,
                "beta_se_per_day": e.beta_se,
                "beta_t_stat": e.beta_t(),
                "n_obs": e.n_obs,
            })
        }
        EstimateKind::Var => {
            let (series, data) = series_matrix(&names, &rows)?;
            let m = fit_var(&data, a.lags)?;
            let mut v = json!({
                "series": series,
                "order": m.order(),
                "n_obs": m.n_obs,
                "intercept": m.intercept.iter().collect::<Vec<_>>(),
                "intercept_se": m.intercept_se.iter().collect::<Vec<_>>(),
                "lags": m.lags.iter().map(matrix_json).collect::<Vec<_>>(),
                "lag_se": m.lag_se.iter().map(matrix_json).collect::<Vec<_>>(),
                "residual_covariance": matrix_json(&m.sigma),
                "companion_spectral_radius": m.spectral_radius(),
            });
            if a.lags == 1 {
                let ou = var1_to_multi_ou(&m, a.dt)?;
                let cov = &ou.sigma_chol * ou.sigma_chol.transpose();
                v["ou_mean_reversion_per_day"] = matrix_json(&ou.beta);
                v["ou_mean"] = json!(ou.mu.iter().collect::<Vec<_>>());
                v["ou_covariance_per_day"] = matrix_json(&cov);
            }
            v
        }
    };
    write_json(out, &v)
}

fn execute(a: &ExecuteArgs, seed: u64, out: &Option<PathBuf>) -> Res<()> {
    let l = &a.liq;
    let cfg =
        LiquidationConfig { t_horizon: l.t_horizon, phi: l.phi, alpha: l.alpha, eta: l.eta, kappa: l.kappa, y0: l.y0 };
    if a.steps == 0 {
        return Err(Failure::Config("steps must be positive".into()));
    }
    let dt = l.t_horizon / a.steps as f64;
    let paths = simulate_model1(&a.m1.params(), dt, a.steps, seed)?;
    let s = paths.column("S").expect("S path");
    let z = paths.column("Z").expect("Z path");
    let depth = vec![l.kappa; z.len()];
    let ex = execute_path(a.strategy.into(), s, z, &depth, &cfg, a.m1.beta, a.amm_fee, 0.0)?;
    let mut wr = csv::Writer::from_writer(output(out)?);
    wr.write_record(["t_days", "s_x_per_y", "z_x_per_y", "order_y_units", "inventory_y_units"])?;
    for k in 0..a.steps {
        wr.write_record([
            paths.t[k].to_string(),
            s[k].to_string(),
            z[k].to_string(),
            ex.orders[k].to_string(),
            ex.inventory_path[k].to_string(),
        ])?;
    }
    wr.flush()?;
    let y = ex.inventory;
    let gross = ex.cash + y * z[a.steps] - l.y0 * z[0];
    let summary = json!({
        "gross_pnl_x_units": gross,
        "amm_fees_x_units": ex.fees,
        "gas_x_units": a.gas * ex.trades.len() as f64,
        "num_trades": ex.trades.len(),
        "terminal_inventory_y_units": y,
    });
    eprintln!("{summary}");
    Ok(())
}

fn parse_grid(s: &str) -> Res<(usize, usize, usize)> {
    let parts: Vec<_> = s.split('x').map(|p| p.trim().parse::<usize>()).collect();
    match parts.as_slice() {
        [Ok(a), Ok(b), Ok(c)] => Ok((*a, *b, *c)),
        _ => Err(Failure::Config(format!("grid must look like 64x64x64, got '{s}'"))),
    }
}

fn solve_hjb(a: &SolveHjbArgs, out: &Option<PathBuf>) -> Res<()> {
    let (nt, nu, nv) = parse_grid(&a.grid)?;
    let cfg =
        LiquidationConfig { t_horizon: a.t_horizon, phi: a.phi, alpha: a.alpha, eta: a.eta, kappa: a.kappa, y0: 0.0 };
    let (sol, report) = if a.model == 1 {
        let p = ModelIParams { sigma: a.sigma, beta: a.beta, gamma: a.gamma, s0: a.s0, z0: a.z0 };
        let grid = Grid3D::around(a.t_horizon, nt, a.z0, a.gamma, nu, a.s0, a.sigma, nv)?;
        let sol = solve_model1_pde(&p, &cfg, &grid, a.tol, a.max_iters)?;
        let r = verify_bounds(&sol, Some(&p))?;
        (sol, r)
    } else {
        let p = ModelIIParams { gamma: a.gamma, varsigma: a.varsigma, z0: a.z0, kappa0: a.kappa };
        let grid = Grid3D::around(a.t_horizon, nt, a.z0, a.gamma, nu, a.kappa, a.varsigma, nv)?;
        let sol = solve_model2_pde(&p, &cfg, &grid, a.tol, a.max_iters)?;
        let r = verify_bounds(&sol, None)?;
        (sol, r)
    };
    sol.write_csv(output(out)?)?;
    let bounds: serde_json::Map<String, Value> = report.violations.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
    eprintln!(
        "{}",
        json!({
            "bound_violations": bounds,
            "max_violation": report.max_violation(),
            "picard_iterations_max": sol.picard_iters.iter().max(),
        })
    );
    Ok(())
}

fn lp_quote(a: &LpQuoteArgs, out: &Option<PathBuf>) -> Res<()> {
    let p = a.lp.params();
    let q = optimal_spread(a.pi, a.z, &p)?;
    let v = viability_check(a.pi, &p);
    let cond = |c: &cpmm_core::lp::Condition| json!({"pass": c.pass, "margin": c.margin});
    write_json(
        out,
        &json!({
            "delta_fraction": q.delta,
            "delta_lower_fraction": q.delta_l,
            "delta_upper_fraction": q.delta_u,
            "asymmetry_rho": q.rho,
            "z_x_per_y": q.z,
            "z_lower_x_per_y": q.z_l,
            "z_upper_x_per_y": finite_or_null(q.z_u),
            "viable": q.viable,
            "full_range": q.full_range,
            "refused": q.refused,
            "conditions": {
                "profitability": cond(&v.profitability),
                "minimum_fee_rate": cond(&v.minimum_fee_rate),
                "spread_upper": cond(&v.spread_upper),
                "spread_lower": cond(&v.spread_lower),
                "drift": cond(&v.drift),
            },
            "rule_of_thumb_fee_rate_per_day": v.rule_of_thumb,
        }),
    )
}

fn spillover_report_json(r: &cpmm_core::SpilloverReport) -> Value {
    json!({
        "horizon_steps": r.horizon,
        "fevd_share": r.fevd,
        "total_spillover_pct": r.tsi_pct,
        "directional_to_pct": r.dsi_to_pct,
        "directional_from_pct": r.dsi_from_pct,
        "net_pct": r.nsi_pct,
    })
}

fn spillover_cmd(a: &SpilloverArgs, out: &Option<PathBuf>) -> Res<()> {
    let (names, rows) = read_table(&a.input)?;
    let (series, data) = series_matrix(&names, &rows)?;
    let variant = match a.variant {
        Variant::Standard => FevdVariant::Standard,
        Variant::Squared => FevdVariant::SquaredDenominator,
    };
    let v = match a.window {
        None => {
            let m = fit_var(&data, a.lags)?;
            let mut v = spillover_report_json(&spillover(&m, a.horizon, variant)?);
            v["series"] = json!(series);
            v
        }
        Some(w) => {
            let rolls = rolling_spillover(&data, w, a.step, a.lags, a.horizon, variant)?;
            json!({
                "series": series,
                "windows": rolls.iter().map(|(end, r)| {
                    let mut v = spillover_report_json(r);
                    v["window_end_row"] = json!(end);
                    v
                }).collect::<Vec<_>>(),
            })
        }
    };
    write_json(out, &v)
}

fn env_run(a: &EnvRunArgs, seed: u64, out: &Option<PathBuf>) -> Res<()> {
    let cfg = EnvConfig::single_pool(a.lambda, a.p_buy, a.tau);
    let lp = LpParams { gamma_c: a.gamma_c, epsilon: a.epsilon, ..LpParams::default() };
    let mut err = None;
    let episode = run_episode(
        &cfg,
        |st, c| match a.strategy {
            EnvStrategy::Widest => Action::uniform(1, c.max_spread, c.max_spread),
            EnvStrategy::Fixed => Action::uniform(1, a.lower, a.upper),
            EnvStrategy::Optimal => match optimal_spread_ticks(&c.pools[0], st.pools[0].z, &lp, c.max_spread) {
                Ok((l, u)) => Action::uniform(1, l, u),
                Err(e) => {
                    err.get_or_insert(e);
                    Action::uniform(1, c.max_spread, c.max_spread)
                }
            },
        },
        seed,
    )?;
    if let Some(e) = err {
        return Err(e.into());
    }
    episode.write_csv(output(out)?)?;
    eprintln!(
        "{}",
        json!({
            "terminal_wealth_x_units": episode.terminal_wealth,
            "gas_x_units": episode.gas_total,
            "ruined": episode.ruined,
        })
    );
    Ok(())
}

fn backtest(a: &BacktestArgs, seed: u64, out: &Option<PathBuf>) -> Res<()> {
    let events = match &a.events {
        Some(p) => {
            let f = File::open(p).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?;
            read_events(BufReader::new(f))?
        }
        None => match a.kind {
            BacktestKind::Lp => {
                let cir = CirParams { big_gamma: 20.0, pi_bar: 0.002, psi: 0.05, pi_tilde0: 0.002 };
                synthetic_lp_events(2000.0, 0.04, 1.5e7, a.fee_tier, &cir, a.period, a.synthetic_hours * 60, seed)?
            }
            _ => {
                let p = ModelIParams { sigma: 0.045, beta: 657.9, gamma: 0.034, s0: 2690.0, z0: 2690.0 };
                synthetic_model1_events(&p, 2.25e7, 50.0, a.sample_interval, a.synthetic_hours * 240, seed)?
            }
        },
    };
    if let BacktestKind::Lp = a.kind {
        let cfg = LpBacktestConfig {
            pool_id: a.pool_id.clone(),
            period: a.period,
            vol_window: DAY.min(a.synthetic_hours as f64 * 3600.0 / 2.0).max(a.period),
            fee_tier: a.fee_tier,
            wealth: a.wealth,
            gas_per_op: a.gas_per_op,
            params: LpParams { epsilon: 1e-6, ..a.lp.params() },
        };
        let r = run_lp_backtest(&events, &cfg)?;
        return write_json(
            out,
            &json!({
                "operations": r.operations,
                "position_return_mean_fraction": r.position_mean,
                "position_return_sd_fraction": r.position_sd,
                "fee_return_mean_fraction": r.fee_mean,
                "fee_return_sd_fraction": r.fee_sd,
                "total_return_mean_fraction": r.total_mean,
                "total_return_sd_fraction": r.total_sd,
                "rebalance_cost_mean_fraction": r.rebalance_cost_mean,
                "net_return_mean_fraction": r.net_mean,
                "break_even_wealth_x_units": finite_or_null(r.break_even_wealth),
                "mean_range_width_fraction": r.mean_spread,
            }),
        );
    }
    let cfg = BacktestConfig {
        pool_id: a.pool_id.clone(),
        oracle_id: a.oracle_id.clone(),
        in_sample_window: a.in_sample_window,
        out_sample_window: a.out_sample_window,
        sample_interval: a.sample_interval,
        participation_rate: a.participation_rate,
        gas_per_tx: a.gas_per_tx,
        amm_fee: a.amm_fee,
        phi: a.phi,
        alpha: a.alpha,
        strategies: a.strategies.iter().map(|&s| s.into()).collect(),
    };
    let results = match a.kind {
        BacktestKind::Speculation => run_speculation_backtest(&events, &cfg)?,
        _ => run_liquidation_backtest(&events, &cfg)?,
    };
    write_results(&results, output(out)?)?;
    Ok(())
}

fn run(cli: Cli) -> Res<()> {
    let (seed, out) = (cli.seed, &cli.out);
    match &cli.cmd {
        Cmd::Simulate(a) => simulate(a, seed, out),
        Cmd::Estimate(a) => estimate(a, out),
        Cmd::Execute(a) => execute(a, seed, out),
        Cmd::SolveHjb(a) => solve_hjb(a, out),
        Cmd::LpQuote(a) => lp_quote(a, out),
        Cmd::Spillover(a) => spillover_cmd(a, out),
        Cmd::EnvRun(a) => env_run(a, seed, out),
        Cmd::Backtest(a) => backtest(a, seed, out),
    }
}

fn main() -> ExitCode {
    let argv = match merge_config(std::env::args().collect()) {
        Ok(a) => a,
        Err(Failure::Config(m) | Failure::Data(m)) => {
            eprintln!("error: {m}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
