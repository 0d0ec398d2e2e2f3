//! Constant-product pool arithmetic with concentrated liquidity.
//!
//! Rates are quoted as units of X per unit of Y. Tick ranges are left-open and
//! right-closed, `(Z(i), Z(i+1)]`. Fees accrue in X only.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

pub const TICK_BASE: f64 = 1.0001;
/// Widest tick indices usable as a "full range" position.
pub const MIN_TICK: i32 = -887_272;
pub const MAX_TICK: i32 = 887_272;

/// `1.0001^i`.
pub fn rate_of_tick(i: i32) -> f64 {
    let mut n = i.unsigned_abs();
    let mut base = TICK_BASE;
    let mut acc = 1.0;
    while n > 0 {
        if n & 1 == 1 {
            acc *= base;
        }
        base *= base;
        n >>= 1;
    }
    if i < 0 {
        1.0 / acc
    } else {
        acc
    }
}

/// Index `i` with `rate_of_tick(i) < z <= rate_of_tick(i + 1)`.
pub fn tick_of_rate(z: f64) -> Result<i32> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(domain(format!("rate must be positive and finite, got {z}")));
    }
    let guess = (z.ln() / TICK_BASE.ln()).floor();
    if guess < MIN_TICK as f64 - 1.0 || guess > MAX_TICK as f64 {
        return Err(domain(format!("rate {z} outside the tick domain")));
    }
    let mut i = guess as i32;
    while rate_of_tick(i) >= z {
        i -= 1;
    }
    while rate_of_tick(i + 1) < z {
        i += 1;
    }
    Ok(i)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tick {
    pub index: i32,
    pub rate: f64,
}

impl Tick {
    pub fn new(index: i32) -> Self {
        Tick { index, rate: rate_of_tick(index) }
    }
}

/// Reserves of a single constant-product pool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolState {
    pub x: f64,
    pub y: f64,
    pub kappa: f64,
    pub tau: f64,
}

impl PoolState {
    pub fn new(x: f64, y: f64, tau: f64) -> Result<Self> {
        if !(x > 0.0 && y > 0.0) {
            return Err(domain("reserves must be positive"));
        }
        if !(0.0..1.0).contains(&tau) {
            return Err(domain("fee tier must lie in [0, 1)"));
        }
        Ok(PoolState { x, y, kappa: (x * y).sqrt(), tau })
    }

    /// Pool with depth `kappa` quoting rate `z`.
    pub fn from_rate_depth(z: f64, kappa: f64, tau: f64) -> Result<Self> {
        if !(z > 0.0 && kappa > 0.0) {
            return Err(domain("rate and depth must be positive"));
        }
        let s = z.sqrt();
        let mut p = PoolState::new(kappa * s, kappa / s, tau)?;
        p.kappa = kappa;
        Ok(p)
    }
}

/// Instantaneous rate `x / y`.
pub fn marginal_rate(pool: &PoolState) -> f64 {
    pool.x / pool.y
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    /// Taker receives Y and pays X.
    BuyY,
    /// Taker pays Y and receives X.
    SellY,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwapResult {
    pub delta_x: f64,
    pub delta_y: f64,
    pub fee_paid: f64,
    pub rate_before: f64,
    pub rate_after: f64,
    pub unitary_cost: f64,
}

/// Swap `delta_y` of Y against a full-range pool.
///
/// The fee is charged on the leg the taker pays and leaves the reserves, so
/// `x' y' = kappa^2` holds after every trade.
pub fn execute_swap(pool: &PoolState, side: Side, delta_y: f64) -> Result<(PoolState, SwapResult)> {
    if !(delta_y >= 0.0) || !delta_y.is_finite() {
        return Err(domain(format!("trade size must be nonnegative, got {delta_y}")));
    }
    let k2 = pool.kappa * pool.kappa;
    let z0 = marginal_rate(pool);
    if delta_y == 0.0 {
        let r = SwapResult {
            delta_x: 0.0,
            delta_y: 0.0,
            fee_paid: 0.0,
            rate_before: z0,
            rate_after: z0,
            unitary_cost: 0.0,
        };
        return Ok((*pool, r));
    }
    let (dx, fee, x1, y1) = match side {
        Side::BuyY => {
            if delta_y >= pool.y {
                return Err(Error::Depletion { requested: delta_y, available: pool.y });
            }
            let y1 = pool.y - delta_y;
            let x1 = k2 / y1;
            let net = x1 - pool.x;
            let gross = net / (1.0 - pool.tau);
            (gross, gross - net, x1, y1)
        }
        Side::SellY => {
            let y1 = pool.y + (1.0 - pool.tau) * delta_y;
            let x1 = k2 / y1;
            let dx = pool.x - x1;
            (dx, pool.tau * delta_y * z0, x1, y1)
        }
    };
    let next = PoolState { x: x1, y: y1, kappa: pool.kappa, tau: pool.tau };
    let unitary_cost = if delta_y > 0.0 { (z0 - dx / delta_y).abs() } else { 0.0 };
    Ok((next, SwapResult { delta_x: dx, delta_y, fee_paid: fee, rate_before: z0, rate_after: x1 / y1, unitary_cost }))
}

/// `Z - (eta / kappa) Z^{3/2} nu`.
pub fn approx_execution_rate(z: f64, kappa: f64, nu: f64, eta: f64) -> f64 {
    z - eta / kappa * z.powf(1.5) * nu
}

/// `Z^{3/2} |dy| / kappa`, the convexity approximation of the unitary cost.
pub fn approx_unitary_cost(z: f64, kappa: f64, delta_y: f64) -> f64 {
    z.powf(1.5) * delta_y.abs() / kappa
}

/// A liquidity position over `(Z(L), Z(U)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiquidityPosition {
    pub lower: Tick,
    pub upper: Tick,
    pub depth: f64,
}

impl LiquidityPosition {
    pub fn new(lower: i32, upper: i32, depth: f64) -> Result<Self> {
        if lower >= upper {
            return Err(domain(format!("lower tick {lower} must be below upper tick {upper}")));
        }
        if !(depth >= 0.0) {
            return Err(domain("position depth must be nonnegative"));
        }
        Ok(LiquidityPosition { lower: Tick::new(lower), upper: Tick::new(upper), depth })
    }

    /// Whether the position earns fees at rate `z`.
    pub fn in_range(&self, z: f64) -> bool {
        self.lower.rate < z && z <= self.upper.rate
    }
}

/// Holdings `(x, y)` of a position when the pool rate is `z`.
pub fn cl_holdings(pos: &LiquidityPosition, z: f64) -> (f64, f64) {
    let (sl, su) = (pos.lower.rate.sqrt(), pos.upper.rate.sqrt());
    let k = pos.depth;
    if z < pos.lower.rate {
        (0.0, k * (1.0 / sl - 1.0 / su))
    } else if z < pos.upper.rate {
        let s = z.sqrt();
        (k * (s - sl), k * (1.0 / s - 1.0 / su))
    } else {
        (k * (su - sl), 0.0)
    }
}

/// Depth bought by depositing `w * v` of wealth in `(Z(L), Z(U)]` at rate `z`.
pub fn wealth_to_position_depth(v: f64, w: f64, z: f64, lower: Tick, upper: Tick) -> Result<f64> {
    if !(v >= 0.0 && w >= 0.0) {
        return Err(domain("wealth and weight must be nonnegative"));
    }
    if !(lower.rate < z && z <= upper.rate) {
        return Err(domain(format!("rate {z} outside the deposit range ({}, {}]", lower.rate, upper.rate)));
    }
    let denom = 2.0 * z.sqrt() - lower.rate.sqrt() - z / upper.rate.sqrt();
    Ok(w * v / denom)
}

/// Split `total_fee` among positions in proportion to active depth.
///
/// `other_depth` is in-range liquidity that is not listed in `positions`.
pub fn distribute_fee(total_fee: f64, positions: &[LiquidityPosition], z: f64, other_depth: f64) -> Result<Vec<f64>> {
    if !(total_fee >= 0.0) {
        return Err(domain("fee must be nonnegative"));
    }
    let active: f64 = positions.iter().filter(|p| p.in_range(z)).map(|p| p.depth).sum::<f64>() + other_depth;
    if active <= 0.0 {
        if total_fee > 0.0 {
            return Err(Error::NoLiquidity(z));
        }
        return Ok(vec![0.0; positions.len()]);
    }
    Ok(positions.iter().map(|p| if p.in_range(z) { total_fee * p.depth / active } else { 0.0 }).collect())
}

/// How much of an order is specified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Amount {
    /// Y received on a buy, Y paid (gross of fee) on a sell.
    Y(f64),
    /// X paid (gross of fee) on a buy, X received on a sell.
    X(f64),
}

/// One constant-depth piece of a swap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub depth: f64,
    pub sqrt_before: f64,
    pub sqrt_after: f64,
    /// X paid into (buy) or out of (sell) the pool, gross of fee on buys.
    pub dx: f64,
    /// Y out of (buy) or into (sell) the pool, gross of fee on sells.
    pub dy: f64,
    /// Fee in X.
    pub fee: f64,
}

impl Segment {
    /// Relative violation of the fee-adjusted constant-product condition.
    pub fn invariant_error(&self, side: Side, tau: f64) -> f64 {
        let k = self.depth;
        let (x, y) = (k * self.sqrt_before, k / self.sqrt_before);
        let prod = match side {
            Side::BuyY => (x + (1.0 - tau) * self.dx) * (y - self.dy),
            Side::SellY => (x - self.dx) * (y + (1.0 - tau) * self.dy),
        };
        (prod / (k * k) - 1.0).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClSwap {
    pub side: Side,
    pub delta_x: f64,
    pub delta_y: f64,
    pub fee_total: f64,
    pub rate_before: f64,
    pub rate_after: f64,
    pub segments: Vec<Segment>,
    /// Fee credited to each position, in X.
    pub position_fees: Vec<f64>,
    /// Fee credited to the background depth, in X.
    pub background_fee: f64,
}

/// Concentrated-liquidity pool: a uniform background depth plus positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClPool {
    sqrt_z: f64,
    pub tau: f64,
    pub background_depth: f64,
    pub positions: Vec<LiquidityPosition>,
}

impl ClPool {
    pub fn new(z: f64, tau: f64, background_depth: f64) -> Result<Self> {
        if !(z > 0.0) || !(0.0..1.0).contains(&tau) || !(background_depth >= 0.0) {
            return Err(domain("invalid pool configuration"));
        }
        Ok(ClPool { sqrt_z: z.sqrt(), tau, background_depth, positions: Vec::new() })
    }

    pub fn rate(&self) -> f64 {
        self.sqrt_z * self.sqrt_z
    }

    pub fn sqrt_rate(&self) -> f64 {
        self.sqrt_z
    }

    pub fn add_position(&mut self, p: LiquidityPosition) -> usize {
        self.positions.push(p);
        self.positions.len() - 1
    }

    pub fn clear_positions(&mut self) {
        self.positions.clear();
    }

    /// Active depth at the current rate.
    pub fn active_depth(&self) -> f64 {
        let z = self.rate();
        self.background_depth + self.positions.iter().filter(|p| p.in_range(z)).map(|p| p.depth).sum::<f64>()
    }

    /// Depth over the interval just above (`up`) or just below `s`.
    fn depth_near(&self, s: f64, up: bool) -> f64 {
        let mut d = self.background_depth;
        for p in &self.positions {
            let (l, u) = (p.lower.rate.sqrt(), p.upper.rate.sqrt());
            let inside = if up { l <= s && s < u } else { l < s && s <= u };
            if inside {
                d += p.depth;
            }
        }
        d
    }

    fn next_boundary(&self, s: f64, up: bool) -> Option<f64> {
        let mut best: Option<f64> = None;
        for p in &self.positions {
            for b in [p.lower.rate.sqrt(), p.upper.rate.sqrt()] {
                let ok = if up { b > s } else { b < s };
                if ok {
                    best = Some(match best {
                        None => b,
                        Some(c) => {
                            if up {
                                c.min(b)
                            } else {
                                c.max(b)
                            }
                        }
                    });
                }
            }
        }
        best
    }

    /// Execute a swap, crossing tick boundaries as needed.
    ///
    /// The pool is left unchanged when the order cannot be filled.
    pub fn swap(&mut self, side: Side, amount: Amount) -> Result<ClSwap> {
        let (req, is_y) = match amount {
            Amount::Y(v) => (v, true),
            Amount::X(v) => (v, false),
        };
        if !(req >= 0.0) || !req.is_finite() {
            return Err(domain(format!("trade size must be nonnegative, got {req}")));
        }
        let tau = self.tau;
        let up = side == Side::BuyY;
        let mut s = self.sqrt_z;
        let mut remaining = req;
        let mut segments = Vec::new();
        let mut position_fees = vec![0.0; self.positions.len()];
        let mut background_fee = 0.0;
        let (mut tot_x, mut tot_y, mut tot_fee) = (0.0, 0.0, 0.0);
        let mut guard = 0usize;
        while remaining > 0.0 {
            guard += 1;
            if guard > 1_000_000 {
                return Err(domain("swap did not terminate"));
            }
            let k = self.depth_near(s, up);
            let boundary = self.next_boundary(s, up);
            if k <= 0.0 {
                match boundary {
                    Some(b) => {
                        s = b;
                        continue;
                    }
                    None => return Err(Error::Depletion { requested: req, available: req - remaining }),
                }
            }
            let (x, y) = (k * s, k / s);
            // Capacity of this piece up to the boundary, in the unit of `remaining`.
            let cap = match (side, is_y, boundary) {
                (Side::BuyY, true, Some(b)) => y - k / b,
                (Side::BuyY, true, None) => y,
                (Side::BuyY, false, Some(b)) => (k * b - x) / (1.0 - tau),
                (Side::BuyY, false, None) => f64::INFINITY,
                (Side::SellY, true, Some(b)) => (k / b - y) / (1.0 - tau),
                (Side::SellY, true, None) => f64::INFINITY,
                (Side::SellY, false, Some(b)) => x - k * b,
                (Side::SellY, false, None) => x,
            };
            let fits = remaining < cap || (remaining == cap && boundary.is_some());
            let (s_new, dx, dy, used) = if fits {
                match (side, is_y) {
                    (Side::BuyY, true) => {
                        let s1 = k / (y - remaining);
                        let net = k * s1 - x;
                        (s1, net / (1.0 - tau), remaining, remaining)
                    }
                    (Side::BuyY, false) => {
                        let net = (1.0 - tau) * remaining;
                        let s1 = (x + net) / k;
                        (s1, remaining, y - k / s1, remaining)
                    }
                    (Side::SellY, true) => {
                        let net = (1.0 - tau) * remaining;
                        let s1 = k / (y + net);
                        (s1, x - k * s1, remaining, remaining)
                    }
                    (Side::SellY, false) => {
                        let s1 = (x - remaining) / k;
                        let net = k / s1 - y;
                        (s1, remaining, net / (1.0 - tau), remaining)
                    }
                }
            } else {
                let Some(b) = boundary else {
                    return Err(Error::Depletion { requested: req, available: req - remaining + cap });
                };
                match side {
                    Side::BuyY => {
                        let net = k * b - x;
                        (b, net / (1.0 - tau), y - k / b, cap)
                    }
                    Side::SellY => {
                        let net = k / b - y;
                        (b, x - k * b, net / (1.0 - tau), cap)
                    }
                }
            };
            let fee = match side {
                Side::BuyY => tau * dx,
                Side::SellY => tau * dy * s * s,
            };
            // Fee is shared by the depth that was active over this piece.
            for (j, p) in self.positions.iter().enumerate() {
                let (l, u) = (p.lower.rate.sqrt(), p.upper.rate.sqrt());
                let inside = if up { l <= s && s < u } else { l < s && s <= u };
                if inside {
                    position_fees[j] += fee * p.depth / k;
                }
            }
            background_fee += fee * self.background_depth / k;
            segments.push(Segment { depth: k, sqrt_before: s, sqrt_after: s_new, dx, dy, fee });
            tot_x += dx;
            tot_y += dy;
            tot_fee += fee;
            remaining -= used;
            if !fits && remaining <= req * 1e-15 {
                remaining = 0.0;
            }
            s = s_new;
        }
        let before = self.rate();
        self.sqrt_z = s;
        Ok(ClSwap {
            side,
            delta_x: tot_x,
            delta_y: tot_y,
            fee_total: tot_fee,
            rate_before: before,
            rate_after: s * s,
            segments,
            position_fees,
            background_fee,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn tick_rates() {
        assert_eq!(rate_of_tick(0), 1.0);
        assert_relative_eq!(rate_of_tick(1), 1.0001, max_relative = 1e-15);
        let i = tick_of_rate(2000.0).unwrap();
        assert!(rate_of_tick(i) < 2000.0 && 2000.0 <= rate_of_tick(i + 1));
        assert_eq!(i, (2000f64.ln() / 1.0001f64.ln()).floor() as i32);
        // exact boundary resolves to the lower interval
        let b = rate_of_tick(17);
        assert_eq!(tick_of_rate(b).unwrap(), 16);
        assert!(tick_of_rate(0.0).is_err());
        assert!(tick_of_rate(-1.0).is_err());
    }

    #[test]
    fn rate_examples() {
        let p = PoolState::new(1000.0, 100.0, 0.0).unwrap();
        assert_relative_eq!(marginal_rate(&p), 10.0);
        assert_relative_eq!(p.kappa * p.kappa / (p.y * p.y), 10.0, max_relative = 1e-12);
        let q = PoolState::new(7.0, 7.0, 0.0).unwrap();
        assert_eq!(marginal_rate(&q), 1.0);
        let r = PoolState::new(2690.77 * 3.0, 3.0, 0.0).unwrap();
        assert_relative_eq!(marginal_rate(&r), 2690.77, max_relative = 1e-14);
    }

    #[test]
    fn swap_examples() {
        let p = PoolState::new(1000.0, 100.0, 0.0).unwrap();
        let (n, r) = execute_swap(&p, Side::SellY, 10.0).unwrap();
        assert_relative_eq!(r.delta_x, 1000.0 - 100000.0 / 110.0, max_relative = 1e-13);
        assert_relative_eq!(r.rate_after, 100000.0 / (110.0 * 110.0), max_relative = 1e-13);
        assert_relative_eq!(n.kappa, p.kappa);
        assert_relative_eq!(r.unitary_cost, 0.909090909, max_relative = 1e-8);

        let (n0, r0) = execute_swap(&p, Side::SellY, 0.0).unwrap();
        assert_eq!(r0.delta_x, 0.0);
        assert_eq!(n0, p);

        let pf = PoolState::new(1000.0, 100.0, 0.003).unwrap();
        let (nf, rf) = execute_swap(&pf, Side::SellY, 10.0).unwrap();
        assert_relative_eq!(rf.delta_x, 1000.0 - 100000.0 / (100.0 + 0.997 * 10.0), max_relative = 1e-13);
        assert_relative_eq!(nf.x * nf.y, pf.kappa * pf.kappa, max_relative = 1e-12);

        assert!(matches!(execute_swap(&p, Side::BuyY, 100.0), Err(Error::Depletion { .. })));
        assert!(execute_swap(&p, Side::BuyY, -1.0).is_err());
    }

    #[test]
    fn approximation_examples() {
        assert_eq!(approx_execution_rate(10.0, 5.0, 0.0, 1.0), 10.0);
        let c = approx_unitary_cost(10.0, 100000f64.sqrt(), 10.0);
        assert_relative_eq!(c, 1.0, max_relative = 1e-12);
        assert!((approx_execution_rate(10.0, 1e300, 5.0, 1.0) - 10.0).abs() < 1e-250);
    }

    #[test]
    fn holdings_examples() {
        let p = LiquidityPosition {
            lower: Tick { index: 0, rate: 1.0 },
            upper: Tick { index: 0, rate: 9.0 },
            depth: 100.0,
        };
        let (x, y) = cl_holdings(&p, 4.0);
        assert_relative_eq!(x, 100.0);
        assert_relative_eq!(y, 100.0 * (0.5 - 1.0 / 3.0), max_relative = 1e-14);
        let (x, y) = cl_holdings(&p, 0.5);
        assert_eq!(x, 0.0);
        assert_relative_eq!(y, 100.0 * (1.0 - 1.0 / 3.0), max_relative = 1e-14);
        let (x, y) = cl_holdings(&p, 16.0);
        assert_relative_eq!(x, 200.0);
        assert_eq!(y, 0.0);
    }

    #[test]
    fn deposit_examples() {
        let l = Tick { index: 0, rate: 1.0 };
        let u = Tick { index: 0, rate: 9.0 };
        let k = wealth_to_position_depth(100.0, 1.0, 4.0, l, u).unwrap();
        assert_relative_eq!(k, 60.0, max_relative = 1e-14);
        let (x, y) = cl_holdings(&LiquidityPosition { lower: l, upper: u, depth: k }, 4.0);
        assert_relative_eq!(x, 60.0, max_relative = 1e-14);
        assert_relative_eq!(y, 10.0, max_relative = 1e-14);
        assert_eq!(wealth_to_position_depth(100.0, 0.0, 4.0, l, u).unwrap(), 0.0);
        assert!(wealth_to_position_depth(100.0, 1.0, 0.5, l, u).is_err());

        let i = tick_of_rate(2200.0).unwrap();
        let (lo, hi) = (Tick::new(i - 500), Tick::new(i + 500));
        let k = wealth_to_position_depth(500_000.0, 1.0, 2200.0, lo, hi).unwrap();
        let (x, y) = cl_holdings(&LiquidityPosition { lower: lo, upper: hi, depth: k }, 2200.0);
        assert_relative_eq!(x + y * 2200.0, 500_000.0, max_relative = 1e-10);
    }

    #[test]
    fn fee_examples() {
        let a = LiquidityPosition::new(-10, 10, 300.0).unwrap();
        assert_relative_eq!(distribute_fee(7.0, &[a], 1.0, 0.0).unwrap()[0], 7.0);
        let b = LiquidityPosition::new(-10, 10, 60.0).unwrap();
        let c = LiquidityPosition::new(-10, 10, 240.0).unwrap();
        let f = distribute_fee(10.0, &[b, c], 1.0, 0.0).unwrap();
        assert_relative_eq!(f[0], 2.0, max_relative = 1e-14);
        let far = LiquidityPosition::new(100, 200, 50.0).unwrap();
        assert_eq!(distribute_fee(10.0, &[b, far], 1.0, 0.0).unwrap()[1], 0.0);
        assert!(distribute_fee(1.0, &[far], 1.0, 0.0).is_err());
    }

    #[test]
    fn cl_swap_matches_full_range_pool() {
        let mut cl = ClPool::new(10.0, 0.003, 100000f64.sqrt()).unwrap();
        let p = PoolState::new(1000.0, 100.0, 0.003).unwrap();
        let r = cl.swap(Side::SellY, Amount::Y(10.0)).unwrap();
        let (_, e) = execute_swap(&p, Side::SellY, 10.0).unwrap();
        assert_relative_eq!(r.delta_x, e.delta_x, max_relative = 1e-12);
        assert_relative_eq!(r.rate_after, e.rate_after, max_relative = 1e-12);
        assert_relative_eq!(r.fee_total, e.fee_paid, max_relative = 1e-12);
    }

    #[test]
    fn cl_swap_crosses_ticks() {
        let mut cl = ClPool::new(1.0, 0.003, 1000.0).unwrap();
        cl.add_position(LiquidityPosition::new(-20, 5, 5000.0).unwrap());
        cl.add_position(LiquidityPosition::new(3, 40, 2000.0).unwrap());
        let r = cl.swap(Side::BuyY, Amount::X(40.0)).unwrap();
        assert!(r.segments.len() >= 3, "{:?}", r.segments.len());
        for s in &r.segments {
            assert!(s.invariant_error(Side::BuyY, 0.003) < 1e-12);
        }
        let paid: f64 = r.position_fees.iter().sum::<f64>() + r.background_fee;
        assert_relative_eq!(paid, r.fee_total, max_relative = 1e-12);
        let back = cl.swap(Side::SellY, Amount::Y(r.delta_y)).unwrap();
        assert!(back.rate_after < r.rate_after);
    }
}
