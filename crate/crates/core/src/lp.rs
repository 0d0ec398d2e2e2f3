//! Optimal liquidity provision in a concentrated-liquidity pool.
//!
//! A position over `(Z_L, Z_U]` around the current rate `Z` has spread
//! `delta = delta_L + delta_U` with `sqrt(Z_L) = sqrt(Z)(1 - delta_L/2)` and
//! `sqrt(Z_U) = sqrt(Z) / (1 - delta_U/2)`. The optimal spread is
//!
//! ```text
//! delta* = (2 gamma + mu^2 sigma^2) / (4 pi - sigma^2/2 + mu (mu - sigma^2/2))
//! ```
//!
//! with `delta_U = delta/2 + mu` and `delta_L = delta/2 - mu`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::econometrics::{ols, OlsFit};
use crate::error::{domain, Error, Result};
use crate::pool::{rate_of_tick, tick_of_rate, Tick, MAX_TICK, MIN_TICK};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LpParams {
    /// Concentration cost, per day.
    pub gamma_c: f64,
    /// Rate volatility, per square-root day.
    pub sigma: f64,
    /// Rebalancing cost as a drift reduction, per day.
    pub zeta_rebal: f64,
    /// Profitability margin, per day.
    pub epsilon: f64,
    /// Drift of the rate, per day.
    pub mu: f64,
}

impl Default for LpParams {
    fn default() -> Self {
        LpParams { gamma_c: 5e-7, sigma: 0.02, zeta_rebal: 0.0, epsilon: 1e-4, mu: 0.0 }
    }
}

impl LpParams {
    /// Drift net of rebalancing costs.
    pub fn effective_mu(&self) -> f64 {
        self.mu - self.zeta_rebal
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_c >= 0.0 && self.sigma >= 0.0 && self.epsilon > 0.0 && self.zeta_rebal >= 0.0) {
            return Err(domain("need gamma_c >= 0, sigma >= 0, epsilon > 0, zeta_rebal >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpreadQuote {
    pub delta: f64,
    pub delta_l: f64,
    pub delta_u: f64,
    pub rho: f64,
    pub z: f64,
    pub z_l: f64,
    /// Infinite when the upper end is unbounded.
    pub z_u: f64,
    pub viable: bool,
    /// The quote is the maximal range `(0, inf)`.
    pub full_range: bool,
    /// Provision refused because the drift is outside `[-1, 1]`.
    pub refused: bool,
}

/// Range bounds for half-spreads at rate `z`.
pub fn range_bounds(z: f64, delta_l: f64, delta_u: f64) -> (f64, f64) {
    let s = z.sqrt();
    let lo = if delta_l >= 2.0 { 0.0 } else { (s * (1.0 - 0.5 * delta_l)).powi(2) };
    let hi = if delta_u >= 2.0 { f64::INFINITY } else { (s / (1.0 - 0.5 * delta_u)).powi(2) };
    (lo, hi)
}

fn spread_parts(pi: f64, p: &LpParams) -> (f64, f64) {
    let mu = p.effective_mu();
    let s2 = p.sigma * p.sigma;
    (2.0 * p.gamma_c + mu * mu * s2, 4.0 * pi - 0.5 * s2 + mu * (mu - 0.5 * s2))
}

pub fn optimal_spread(pi: f64, z: f64, params: &LpParams) -> Result<SpreadQuote> {
    params.validate()?;
    if !(pi > 0.0 && z > 0.0) {
        return Err(domain("need pi > 0 and Z > 0"));
    }
    let mu = params.effective_mu();
    let full = |refused: bool| SpreadQuote {
        delta: 4.0,
        delta_l: 2.0,
        delta_u: 2.0,
        rho: 0.5,
        z,
        z_l: 0.0,
        z_u: f64::INFINITY,
        viable: false,
        full_range: true,
        refused,
    };
    if mu.abs() > 1.0 {
        return Ok(full(true));
    }
    let (num, den) = spread_parts(pi, params);
    if den <= 0.0 {
        return Ok(full(false));
    }
    let delta = num / den;
    let delta_u = 0.5 * delta + mu;
    let delta_l = delta - delta_u;
    let (z_l, z_u) = range_bounds(z, delta_l, delta_u);
    let report = viability_check(pi, params);
    let rho = position_asymmetry(delta, mu);
    let viable = report.all_pass() && rho.admissible && delta > 0.0;
    Ok(SpreadQuote {
        delta,
        delta_l,
        delta_u,
        rho: rho.rho,
        z,
        z_l,
        z_u,
        viable,
        full_range: delta_l >= 2.0 && delta_u >= 2.0,
        refused: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Asymmetry {
    pub rho: f64,
    pub admissible: bool,
}

/// `rho = 1/2 + mu / delta`, flagged when outside `(0, 1)`.
pub fn position_asymmetry(delta: f64, mu: f64) -> Asymmetry {
    let rho = 0.5 + mu / delta;
    Asymmetry { rho, admissible: delta > 0.0 && rho > 0.0 && rho < 1.0 }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub pass: bool,
    /// Positive when satisfied with room to spare.
    pub margin: f64,
}

impl Condition {
    fn ge(lhs: f64, rhs: f64) -> Self {
        Condition { pass: lhs >= rhs, margin: lhs - rhs }
    }

    fn gt(lhs: f64, rhs: f64) -> Self {
        Condition { pass: lhs > rhs, margin: lhs - rhs }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViabilityReport {
    /// `4 pi - sigma^2/2 + mu (mu - sigma^2/2) > epsilon`.
    pub profitability: Condition,
    /// `pi - gamma/8 >= sigma^2/8`.
    pub minimum_fee_rate: Condition,
    /// `delta* <= 4 - 2|mu|`.
    pub spread_upper: Condition,
    /// `delta* >= 2|mu|`.
    pub spread_lower: Condition,
    /// `|mu| <= 1`.
    pub drift: Condition,
    /// `sigma^2 / 8`.
    pub rule_of_thumb: f64,
}

impl ViabilityReport {
    pub fn all_pass(&self) -> bool {
        self.profitability.pass
            && self.minimum_fee_rate.pass
            && self.spread_upper.pass
            && self.spread_lower.pass
            && self.drift.pass
    }
}

pub fn viability_check(pi: f64, params: &LpParams) -> ViabilityReport {
    let mu = params.effective_mu();
    let s2 = params.sigma * params.sigma;
    let (num, den) = spread_parts(pi, params);
    let delta = if den > 0.0 { num / den } else { f64::INFINITY };
    ViabilityReport {
        profitability: Condition::gt(den, params.epsilon),
        minimum_fee_rate: Condition::ge(pi - params.gamma_c / 8.0, s2 / 8.0),
        spread_upper: Condition::ge(4.0 - 2.0 * mu.abs(), delta),
        spread_lower: Condition::ge(delta, 2.0 * mu.abs()),
        drift: Condition::ge(1.0, mu.abs()),
        rule_of_thumb: s2 / 8.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LpWealthState {
    pub v: f64,
    pub alpha_pos: f64,
    pub fees: f64,
    /// Cumulative rebalancing costs, nonpositive.
    pub costs: f64,
}

impl LpWealthState {
    pub fn new(v0: f64) -> Self {
        LpWealthState { v: v0, alpha_pos: v0, fees: 0.0, costs: 0.0 }
    }
}

/// Euler step of the LP wealth over `dt` with realized rate return `dz / z`.
///
/// ```text
/// d alpha = rho V dZ/Z - (sigma^2 / (2 delta)) V dt
/// d p     = (4 pi / delta - gamma / delta^2) V dt
/// d c     = -zeta rho V dt
/// ```
pub fn lp_wealth_step(
    state: &LpWealthState,
    quote: &SpreadQuote,
    rate_return: f64,
    pi: f64,
    params: &LpParams,
    dt: f64,
) -> Result<LpWealthState> {
    if !(dt > 0.0) {
        return Err(domain("dt must be positive"));
    }
    if !quote.viable {
        return Err(domain("wealth dynamics need a viable quote"));
    }
    let v = state.v;
    let d = quote.delta;
    let da = quote.rho * v * rate_return - 0.5 * params.sigma * params.sigma / d * v * dt;
    let dp = (4.0 * pi / d - params.gamma_c / (d * d)) * v * dt;
    let dc = -params.zeta_rebal * quote.rho * v * dt;
    let next = LpWealthState {
        v: v + da + dp + dc,
        alpha_pos: state.alpha_pos + da,
        fees: state.fees + dp,
        costs: state.costs + dc,
    };
    if !(next.v > 0.0) {
        return Err(Error::Ruin(next.v));
    }
    Ok(next)
}

/// `pi~` that makes the Hamiltonian maximizer coincide with `optimal_spread` at fee rate `pi`.
pub fn pi_tilde_from_pi(pi: f64, params: &LpParams) -> f64 {
    let (_, den) = spread_parts(pi, params);
    0.25 * (den - params.epsilon)
}

/// Supremand of the HJB equation as a function of the spread.
pub fn hamiltonian(delta: f64, pi_tilde: f64, params: &LpParams) -> f64 {
    let mu = params.effective_mu();
    let s2 = params.sigma * params.sigma;
    let eta = s2 / 8.0 - 0.25 * mu * (mu - 0.5 * s2) + 0.25 * params.epsilon;
    (4.0 * pi_tilde + 4.0 * eta - 0.5 * s2) / delta + mu * mu / delta
        - 0.5 * s2 * (mu * mu / (delta * delta) + mu / delta)
        - params.gamma_c / (delta * delta)
}

/// Geometric grid of `n` points on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    let mut g: Vec<f64> = (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect();
    g[0] = lo;
    g[n - 1] = hi;
    g
}

/// Grid maximizer of the Hamiltonian.
pub fn hamiltonian_argmax(pi_tilde: f64, params: &LpParams, grid: &[f64]) -> Result<f64> {
    if grid.is_empty() || grid.iter().any(|&d| !(d > 0.0 && d <= 4.0)) {
        return Err(domain("spread grid must lie in (0, 4]"));
    }
    let mut best = (f64::NEG_INFINITY, grid[0]);
    for &d in grid {
        let g = hamiltonian(d, pi_tilde, params);
        if g > best.0 {
            best = (g, d);
        }
    }
    Ok(best.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationFit {
    pub gamma_c: f64,
    pub gamma_c_se: f64,
    /// Fee rate implied by the slope.
    pub pi: f64,
    pub fit: OlsFit,
}

/// Regress `delta^2 p_hat` on `delta`; `gamma = -intercept / m`, `pi = slope / (4 m)`.
pub fn fit_concentration_cost(samples: &[(f64, f64)], m: f64) -> Result<ConcentrationFit> {
    if !(m > 0.0) {
        return Err(domain("rebalancing interval must be positive"));
    }
    let first = samples.first().map(|s| s.0);
    if samples.iter().all(|s| Some(s.0) == first) {
        return Err(Error::Singular("need at least two distinct spreads".into()));
    }
    let y: Vec<f64> = samples.iter().map(|(d, p)| d * d * p).collect();
    let x = DMatrix::from_iterator(samples.len(), 1, samples.iter().map(|s| s.0));
    let fit = if samples.len() == 2 {
        let (d0, d1) = (samples[0].0, samples[1].0);
        let slope = (y[1] - y[0]) / (d1 - d0);
        OlsFit {
            coefficients: vec![y[0] - slope * d0, slope],
            std_errors: vec![0.0, 0.0],
            r_squared: 1.0,
            residual_variance: 0.0,
            n_obs: 2,
        }
    } else {
        ols(&y, &x, true)?
    };
    Ok(ConcentrationFit {
        gamma_c: -fit.coefficients[0] / m,
        gamma_c_se: fit.std_errors[0] / m,
        pi: fit.coefficients[1] / (4.0 * m),
        fit,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TickRange {
    pub lower: Tick,
    pub upper: Tick,
    pub full_range: bool,
}

/// Widen a quote to ticks: lower end rounded down, upper end rounded up.
pub fn spread_to_ticks(quote: &SpreadQuote, z: f64) -> Result<TickRange> {
    if quote.full_range || quote.z_l <= 0.0 || !quote.z_u.is_finite() {
        let lower = if quote.z_l > 0.0 { floor_tick(quote.z_l)? } else { MIN_TICK };
        let upper = if quote.z_u.is_finite() { ceil_tick(quote.z_u)? } else { MAX_TICK };
        return Ok(TickRange { lower: Tick::new(lower), upper: Tick::new(upper), full_range: true });
    }
    let mut lower = floor_tick(quote.z_l)?;
    let mut upper = ceil_tick(quote.z_u)?;
    while rate_of_tick(lower) >= z {
        lower -= 1;
    }
    while rate_of_tick(upper) <= z {
        upper += 1;
    }
    Ok(TickRange { lower: Tick::new(lower), upper: Tick::new(upper), full_range: false })
}

/// Largest tick with rate at most `z`.
fn floor_tick(z: f64) -> Result<i32> {
    let i = tick_of_rate(z)?;
    Ok(if rate_of_tick(i + 1) == z { i + 1 } else { i })
}

/// Smallest tick with rate at least `z`.
fn ceil_tick(z: f64) -> Result<i32> {
    Ok(tick_of_rate(z)? + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn base() -> LpParams {
        LpParams::default()
    }

    #[test]
    fn symmetric_spread() {
        let q = optimal_spread(0.02, 2000.0, &base()).unwrap();
        assert_relative_eq!(q.delta, 4.0 * 5e-7 / (0.16 - 0.0004), max_relative = 1e-12);
        assert_relative_eq!(q.delta, 1.2531e-5, max_relative = 1e-4);
        assert_eq!(q.delta_l, q.delta_u);
        assert!(q.viable);
        assert_relative_eq!(q.z_u.sqrt() * (1.0 - 0.5 * q.delta_u), 2000f64.sqrt(), max_relative = 1e-14);
        assert_relative_eq!(q.z_l.sqrt(), 2000f64.sqrt() * (1.0 - 0.5 * q.delta_l), max_relative = 1e-14);
    }

    #[test]
    fn drift_shifts_upper_half_spread() {
        let p = LpParams { mu: 0.01, ..base() };
        let q = optimal_spread(0.02, 2000.0, &p).unwrap();
        assert_relative_eq!(q.delta_u - 0.5 * q.delta, 0.01, max_relative = 1e-12);
        let far = LpParams { mu: 1.2, ..base() };
        assert!(optimal_spread(0.02, 2000.0, &far).unwrap().refused);
    }

    #[test]
    fn asymmetry() {
        assert_eq!(position_asymmetry(0.1, 0.0).rho, 0.5);
        assert_relative_eq!(position_asymmetry(0.1, 0.025).rho, 0.75);
        assert!(!position_asymmetry(0.1, -0.05).admissible);
    }

    #[test]
    fn viability() {
        let r = viability_check(0.02, &base());
        assert!(r.all_pass());
        let edge = LpParams { gamma_c: 0.0, ..base() };
        let pi = 0.02f64.powi(2) / 8.0;
        assert!(!viability_check(pi, &edge).profitability.pass);
        assert!(!viability_check(0.02, &LpParams { mu: 1.2, ..base() }).drift.pass);
    }

    #[test]
    fn wealth_step_identity_and_limits() {
        let p = LpParams { gamma_c: 0.0, sigma: 0.0, zeta_rebal: 0.0, epsilon: 1e-4, mu: 0.0 };
        let mut q = optimal_spread(0.02, 2000.0, &base()).unwrap();
        q.delta = 0.5;
        let s = LpWealthState::new(100.0);
        let n = lp_wealth_step(&s, &q, 0.0, 0.0, &p, 0.1).unwrap();
        assert_eq!(n.v, 100.0);
        let mut q0 = q;
        q0.rho = 0.0;
        let p2 = LpParams { sigma: 0.2, ..p };
        let n = lp_wealth_step(&s, &q0, 0.0, 0.0, &p2, 0.1).unwrap();
        assert_relative_eq!(n.v - 100.0, -0.5 * 0.04 / 0.5 * 100.0 * 0.1, max_relative = 1e-12);
        let p3 = LpParams { gamma_c: 1e-4, zeta_rebal: 0.01, ..p2 };
        let n = lp_wealth_step(&s, &q, 0.013, 0.02, &p3, 0.1).unwrap();
        assert_relative_eq!(n.v, n.alpha_pos + n.fees + n.costs, max_relative = 1e-12);
    }

    #[test]
    fn hamiltonian_oracle() {
        let grid = log_grid(1e-10, 4.0, 10_000);
        let p = base();
        let q = optimal_spread(0.02, 2000.0, &p).unwrap();
        let arg = hamiltonian_argmax(pi_tilde_from_pi(0.02, &p), &p, &grid).unwrap();
        let ratio = grid[1] / grid[0];
        assert!(arg / q.delta < ratio && q.delta / arg < ratio);
        let zero = LpParams { gamma_c: 0.0, ..p };
        assert_eq!(hamiltonian_argmax(pi_tilde_from_pi(0.02, &zero), &zero, &grid).unwrap(), grid[0]);
    }

    #[test]
    fn concentration_fit() {
        let (g, pi, m) = (5e-7, 0.001, 1.0);
        let samples: Vec<(f64, f64)> =
            [0.01, 0.02, 0.05, 0.1, 0.3].iter().map(|&d| (d, (4.0 * pi * m * d - g * m) / (d * d))).collect();
        let f = fit_concentration_cost(&samples, m).unwrap();
        assert!((f.gamma_c - g).abs() < 1e-12);
        assert!((f.pi - pi).abs() < 1e-12);
        assert!(fit_concentration_cost(&[(0.1, 1.0), (0.1, 2.0)], 1.0).is_err());
    }

    #[test]
    fn ticks() {
        let z = 2000.0;
        let q = SpreadQuote {
            delta: 1e-4,
            delta_l: 5e-5,
            delta_u: 5e-5,
            rho: 0.5,
            z,
            z_l: 0.0,
            z_u: 0.0,
            viable: true,
            full_range: false,
            refused: false,
        };
        let (zl, zu) = range_bounds(z, q.delta_l, q.delta_u);
        let q = SpreadQuote { z_l: zl, z_u: zu, ..q };
        let r = spread_to_ticks(&q, z).unwrap();
        assert!(r.lower.rate < z && z < r.upper.rate);
        assert!(r.lower.rate <= zl && r.upper.rate >= zu);
        let on = SpreadQuote { z_l: rate_of_tick(75_000), z_u: rate_of_tick(76_100), ..q };
        let r = spread_to_ticks(&on, rate_of_tick(75_900)).unwrap();
        assert_eq!((r.lower.index, r.upper.index), (75_000, 76_100));
        let full = optimal_spread(0.02, z, &LpParams { mu: 1.5, ..base() }).unwrap();
        assert!(spread_to_ticks(&full, z).unwrap().full_range);
    }
}
