//! Finite-difference solvers for the execution HJB systems.
//!
//! The value function is written as `x + y Z + theta0 + theta1 y + theta2 y^2`,
//! which splits the HJB equation into three PDEs solved backward in time.
//! With `q = kappa / (eta Z^{3/2})` and generator `L`:
//!
//! ```text
//! d_t theta2 + L theta2 - phi + q theta2^2              = 0,  theta2(T) = -alpha
//! d_t theta1 + L theta1 + beta (S - Z) + q theta2 theta1 = 0,  theta1(T) = 0
//! d_t theta0 + L theta0 + (q / 4) theta1^2              = 0,  theta0(T) = 0
//! ```
//!
//! Each time level is an implicit Euler step split into one tridiagonal solve per
//! axis. The quadratic term is linearized by Picard iteration.

use serde::{Deserialize, Serialize};

use crate::dynamics::{ModelIIParams, ModelIParams};
use crate::error::{domain, Error, Result};
use crate::execution::LiquidationConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid3D {
    pub t_axis: Vec<f64>,
    /// Pool rate Z.
    pub u_axis: Vec<f64>,
    /// Oracle rate S (Model I) or depth kappa (Model II).
    pub v_axis: Vec<f64>,
}

fn uniform(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

impl Grid3D {
    pub fn new(t_axis: Vec<f64>, u_axis: Vec<f64>, v_axis: Vec<f64>) -> Result<Self> {
        for (name, ax) in [("t", &t_axis), ("u", &u_axis), ("v", &v_axis)] {
            if ax.len() < 3 {
                return Err(domain(format!("{name} axis needs at least 3 nodes")));
            }
            if ax.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(domain(format!("{name} axis must be strictly increasing")));
            }
        }
        if t_axis[0] != 0.0 {
            return Err(domain("time axis must start at 0"));
        }
        Ok(Grid3D { t_axis, u_axis, v_axis })
    }

    pub fn uniform(t_end: f64, nt: usize, u: (f64, f64, usize), v: (f64, f64, usize)) -> Result<Self> {
        if nt < 3 || u.2 < 3 || v.2 < 3 {
            return Err(domain("each axis needs at least 3 nodes"));
        }
        Grid3D::new(uniform(0.0, t_end, nt), uniform(u.0, u.1, u.2), uniform(v.0, v.1, v.2))
    }

    /// Axes spanning +-5 log standard deviations around the initial state.
    #[allow(clippy::too_many_arguments)]
    pub fn around(
        t_end: f64,
        nt: usize,
        u0: f64,
        u_vol: f64,
        nu: usize,
        v0: f64,
        v_vol: f64,
        nv: usize,
    ) -> Result<Self> {
        let span = |x0: f64, vol: f64| {
            let w = 5.0 * vol * t_end.sqrt();
            let w = if w > 0.0 { w } else { 1e-3 };
            (x0 * (-w).exp(), x0 * w.exp())
        };
        let (ul, uh) = span(u0, u_vol);
        let (vl, vh) = span(v0, v_vol);
        Grid3D::uniform(t_end, nt, (ul, uh, nu), (vl, vh, nv))
    }

    pub fn len(&self) -> usize {
        self.t_axis.len() * self.plane()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn plane(&self) -> usize {
        self.u_axis.len() * self.v_axis.len()
    }

    pub fn index(&self, it: usize, iu: usize, iv: usize) -> usize {
        it * self.plane() + iu * self.v_axis.len() + iv
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Model1,
    Model2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeSolution {
    pub model: Model,
    pub grid: Grid3D,
    pub config: LiquidationConfig,
    pub theta0: Vec<f64>,
    pub theta1: Vec<f64>,
    pub theta2: Vec<f64>,
    /// Picard iterations used at each time level (index matches `t_axis`).
    pub picard_iters: Vec<usize>,
    /// Sup-change of successive Picard iterates at each level.
    pub picard_residuals: Vec<Vec<f64>>,
}

impl PdeSolution {
    pub fn theta2_at(&self, it: usize, iu: usize, iv: usize) -> f64 {
        self.theta2[self.grid.index(it, iu, iv)]
    }

    pub fn theta1_at(&self, it: usize, iu: usize, iv: usize) -> f64 {
        self.theta1[self.grid.index(it, iu, iv)]
    }

    pub fn theta0_at(&self, it: usize, iu: usize, iv: usize) -> f64 {
        self.theta0[self.grid.index(it, iu, iv)]
    }

    /// Depth used in the feedback map at a node.
    fn kappa(&self, v: f64) -> f64 {
        match self.model {
            Model::Model1 => self.config.kappa,
            Model::Model2 => v,
        }
    }

    /// Trilinear interpolation of `(theta0, theta1, theta2)` and a clamp flag.
    pub fn interpolate(&self, t: f64, u: f64, v: f64) -> ([f64; 3], bool) {
        let g = &self.grid;
        let (it, ft, ct) = locate(&g.t_axis, t);
        let (iu, fu, cu) = locate(&g.u_axis, u);
        let (iv, fv, cv) = locate(&g.v_axis, v);
        let mut out = [0.0; 3];
        for (k, field) in [&self.theta0, &self.theta1, &self.theta2].into_iter().enumerate() {
            let mut acc = 0.0;
            for (dt, wt) in [(0, 1.0 - ft), (1, ft)] {
                for (du, wu) in [(0, 1.0 - fu), (1, fu)] {
                    for (dv, wv) in [(0, 1.0 - fv), (1, fv)] {
                        let w = wt * wu * wv;
                        if w != 0.0 {
                            acc += w * field[g.index(it + dt, iu + du, iv + dv)];
                        }
                    }
                }
            }
            out[k] = acc;
        }
        (out, ct || cu || cv)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "u", "v", "theta0", "theta1", "theta2"])?;
        let g = &self.grid;
        for (it, t) in g.t_axis.iter().enumerate() {
            for (iu, u) in g.u_axis.iter().enumerate() {
                for (iv, v) in g.v_axis.iter().enumerate() {
                    let k = g.index(it, iu, iv);
                    wr.write_record(&[
                        t.to_string(),
                        u.to_string(),
                        v.to_string(),
                        self.theta0[k].to_string(),
                        self.theta1[k].to_string(),
                        self.theta2[k].to_string(),
                    ])?;
                }
            }
        }
        wr.flush()?;
        Ok(())
    }
}

fn locate(grid: &[f64], x: f64) -> (usize, f64, bool) {
    let n = grid.len();
    if x <= grid[0] {
        return (0, 0.0, x < grid[0]);
    }
    if x >= grid[n - 1] {
        return (n - 2, 1.0, x > grid[n - 1]);
    }
    let i = grid.partition_point(|&g| g <= x) - 1;
    let i = i.min(n - 2);
    (i, (x - grid[i]) / (grid[i + 1] - grid[i]), false)
}

/// Feedback speed `nu = -(q / 2)(2 theta2 y + theta1)`; positive sells Y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub nu: f64,
    pub clamped: bool,
}

/// `state` is `(Z, S)` for Model I and `(Z, kappa)` for Model II.
pub fn feedback_speed_from_solution(sol: &PdeSolution, t: f64, y: f64, state: (f64, f64)) -> Feedback {
    let (u, v) = state;
    let ([_, th1, th2], clamped) = sol.interpolate(t, u, v);
    let q = sol.kappa(v) / (sol.config.eta * u.powf(1.5));
    Feedback { nu: -0.5 * q * (2.0 * th2 * y + th1), clamped }
}

/// Solve `a_i x_{i-1} + b_i x_i + c_i x_{i+1} = d_i` in place into `d`.
fn thomas(a: &[f64], b: &[f64], c: &[f64], d: &mut [f64], scratch: &mut [f64]) {
    let n = d.len();
    scratch[0] = c[0] / b[0];
    d[0] /= b[0];
    for i in 1..n {
        let m = b[i] - a[i] * scratch[i - 1];
        scratch[i] = c[i] / m;
        d[i] = (d[i] - a[i] * d[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        d[i] -= scratch[i] * d[i + 1];
    }
}

/// Generator coefficients along one axis: drift and half squared diffusion at each node.
struct Line<'a> {
    x: &'a [f64],
    drift: Vec<f64>,
    diff: Vec<f64>,
}

/// Build the implicit operator `I - dt (L + r)` along a line with Neumann ends.
fn assemble(line: &Line, dt: f64, reaction: &[f64], a: &mut [f64], b: &mut [f64], c: &mut [f64]) {
    let n = line.x.len();
    for i in 0..n {
        let (mut lo, mut mid, mut hi) = (0.0, 0.0, 0.0);
        if i == 0 || i == n - 1 {
            let (nb, h) = if i == 0 { (1, line.x[1] - line.x[0]) } else { (n - 2, line.x[n - 1] - line.x[n - 2]) };
            let w = 2.0 * line.diff[i] / (h * h);
            mid -= w;
            if nb == 1 {
                hi += w;
            } else {
                lo += w;
            }
        } else {
            let hm = line.x[i] - line.x[i - 1];
            let hp = line.x[i + 1] - line.x[i];
            let dm = 2.0 * line.diff[i] / (hm * (hm + hp));
            let dp = 2.0 * line.diff[i] / (hp * (hm + hp));
            lo += dm;
            hi += dp;
            mid -= dm + dp;
            let mu = line.drift[i];
            if mu > 0.0 {
                hi += mu / hp;
                mid -= mu / hp;
            } else {
                lo -= mu / hm;
                mid += mu / hm;
            }
        }
        a[i] = -dt * lo;
        b[i] = 1.0 - dt * (mid + reaction[i]);
        c[i] = -dt * hi;
    }
}

struct Workspace {
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    d: Vec<f64>,
    s: Vec<f64>,
    r: Vec<f64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Workspace {
            a: vec![0.0; n],
            b: vec![0.0; n],
            c: vec![0.0; n],
            d: vec![0.0; n],
            s: vec![0.0; n],
            r: vec![0.0; n],
        }
    }
}

/// Axis-wise dynamics on the (u, v) plane.
struct Operator {
    nu: usize,
    nv: usize,
    /// `u_lines[iv]` describes the u-direction line at fixed `v`.
    u_lines: Vec<(Vec<f64>, Vec<f64>)>,
    v_line: (Vec<f64>, Vec<f64>),
    u: Vec<f64>,
    v: Vec<f64>,
}

impl Operator {
    /// One split implicit step: u-sweep with `reaction` and `source`, then v-sweep.
    #[allow(clippy::too_many_arguments)]
    fn step(
        &self,
        old: &[f64],
        reaction: &[f64],
        source: &[f64],
        dt: f64,
        out: &mut [f64],
        wu: &mut Workspace,
        wv: &mut Workspace,
    ) {
        let (nu, nv) = (self.nu, self.nv);
        let mut mid = vec![0.0; nu * nv];
        for iv in 0..nv {
            let (drift, diff) = &self.u_lines[iv];
            let line = Line { x: &self.u, drift: drift.clone(), diff: diff.clone() };
            for iu in 0..nu {
                let k = iu * nv + iv;
                wu.r[iu] = reaction[k];
                wu.d[iu] = old[k] + dt * source[k];
            }
            assemble(&line, dt, &wu.r, &mut wu.a, &mut wu.b, &mut wu.c);
            thomas(&wu.a, &wu.b, &wu.c, &mut wu.d, &mut wu.s);
            for iu in 0..nu {
                mid[iu * nv + iv] = wu.d[iu];
            }
        }
        let line = Line { x: &self.v, drift: self.v_line.0.clone(), diff: self.v_line.1.clone() };
        wv.r.iter_mut().for_each(|r| *r = 0.0);
        assemble(&line, dt, &wv.r, &mut wv.a, &mut wv.b, &mut wv.c);
        for iu in 0..nu {
            wv.d.copy_from_slice(&mid[iu * nv..(iu + 1) * nv]);
            thomas(&wv.a, &wv.b, &wv.c, &mut wv.d, &mut wv.s);
            out[iu * nv..(iu + 1) * nv].copy_from_slice(&wv.d);
        }
    }
}

fn check_inputs(cfg: &LiquidationConfig, grid: &Grid3D, tol: f64, max_iters: usize) -> Result<()> {
    cfg.validate()?;
    if !(tol > 0.0) || max_iters == 0 {
        return Err(domain("need tol > 0 and max_iters >= 1"));
    }
    let t_end = *grid.t_axis.last().unwrap();
    if (t_end - cfg.t_horizon).abs() > 1e-12 * cfg.t_horizon.max(1.0) {
        return Err(domain("time axis must end at the horizon T"));
    }
    if grid.u_axis[0] <= 0.0 || grid.v_axis[0] <= 0.0 {
        return Err(domain("space axes must be positive"));
    }
    Ok(())
}

/// Backward sweep shared by both models. `q[k]` is the quadratic coefficient per node.
#[allow(clippy::too_many_arguments)]
fn sweep(
    model: Model,
    cfg: &LiquidationConfig,
    grid: &Grid3D,
    op: &Operator,
    q: &[f64],
    theta1_source: Option<&[f64]>,
    tol: f64,
    max_iters: usize,
) -> Result<PdeSolution> {
    let plane = grid.plane();
    let nt = grid.t_axis.len();
    let mut th2 = vec![0.0; nt * plane];
    let mut th1 = vec![0.0; nt * plane];
    let mut th0 = vec![0.0; nt * plane];
    let last = (nt - 1) * plane;
    th2[last..].iter_mut().for_each(|x| *x = -cfg.alpha);
    let mut wu = Workspace::new(op.nu);
    let mut wv = Workspace::new(op.nv);
    let mut iters = vec![0usize; nt];
    let mut residuals = vec![Vec::new(); nt];
    let zero = vec![0.0; plane];
    let phi_src = vec![-cfg.phi; plane];
    let mut reaction = vec![0.0; plane];
    let mut next = vec![0.0; plane];
    for it in (0..nt - 1).rev() {
        let dt = grid.t_axis[it + 1] - grid.t_axis[it];
        let old2 = th2[(it + 1) * plane..(it + 2) * plane].to_vec();
        let mut cur = old2.clone();
        let mut converged = false;
        let mut last_res = f64::INFINITY;
        for k in 1..=max_iters {
            for i in 0..plane {
                reaction[i] = q[i] * cur[i];
            }
            op.step(&old2, &reaction, &phi_src, dt, &mut next, &mut wu, &mut wv);
            last_res = cur.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            std::mem::swap(&mut cur, &mut next);
            residuals[it].push(last_res);
            iters[it] = k;
            if !last_res.is_finite() {
                return Err(domain(format!("non-finite Picard iterate at t = {}", grid.t_axis[it])));
            }
            if last_res < tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NoConvergence { iters: max_iters, residual: last_res });
        }
        th2[it * plane..(it + 1) * plane].copy_from_slice(&cur);

        if let Some(src) = theta1_source {
            for i in 0..plane {
                reaction[i] = q[i] * cur[i];
            }
            let old1 = th1[(it + 1) * plane..(it + 2) * plane].to_vec();
            op.step(&old1, &reaction, src, dt, &mut next, &mut wu, &mut wv);
            th1[it * plane..(it + 1) * plane].copy_from_slice(&next);
            let src0: Vec<f64> = (0..plane).map(|i| 0.25 * q[i] * next[i] * next[i]).collect();
            let old0 = th0[(it + 1) * plane..(it + 2) * plane].to_vec();
            op.step(&old0, &zero, &src0, dt, &mut next, &mut wu, &mut wv);
            th0[it * plane..(it + 1) * plane].copy_from_slice(&next);
        } else {
            // Homogeneous linear PDEs with zero terminal data.
            for i in 0..plane {
                reaction[i] = q[i] * cur[i];
            }
            let old1 = th1[(it + 1) * plane..(it + 2) * plane].to_vec();
            op.step(&old1, &reaction, &zero, dt, &mut next, &mut wu, &mut wv);
            th1[it * plane..(it + 1) * plane].copy_from_slice(&next);
            let old0 = th0[(it + 1) * plane..(it + 2) * plane].to_vec();
            op.step(&old0, &zero, &zero, dt, &mut next, &mut wu, &mut wv);
            th0[it * plane..(it + 1) * plane].copy_from_slice(&next);
        }
    }
    Ok(PdeSolution {
        model,
        grid: grid.clone(),
        config: *cfg,
        theta0: th0,
        theta1: th1,
        theta2: th2,
        picard_iters: iters,
        picard_residuals: residuals,
    })
}

/// Model I on `(t, Z, S)`.
pub fn solve_model1_pde(
    params: &ModelIParams,
    cfg: &LiquidationConfig,
    grid: &Grid3D,
    tol: f64,
    max_iters: usize,
) -> Result<PdeSolution> {
    check_inputs(cfg, grid, tol, max_iters)?;
    let (nu, nv) = (grid.u_axis.len(), grid.v_axis.len());
    let u_lines = grid
        .v_axis
        .iter()
        .map(|&s| {
            let drift = grid.u_axis.iter().map(|&z| params.beta * (s - z)).collect();
            let diff = grid.u_axis.iter().map(|&z| 0.5 * params.gamma * params.gamma * z * z).collect();
            (drift, diff)
        })
        .collect();
    let v_line = (vec![0.0; nv], grid.v_axis.iter().map(|&s| 0.5 * params.sigma * params.sigma * s * s).collect());
    let op = Operator { nu, nv, u_lines, v_line, u: grid.u_axis.clone(), v: grid.v_axis.clone() };
    let mut q = vec![0.0; nu * nv];
    let mut src = vec![0.0; nu * nv];
    for (iu, &z) in grid.u_axis.iter().enumerate() {
        for (iv, &s) in grid.v_axis.iter().enumerate() {
            q[iu * nv + iv] = cfg.kappa / (cfg.eta * z.powf(1.5));
            src[iu * nv + iv] = params.beta * (s - z);
        }
    }
    sweep(Model::Model1, cfg, grid, &op, &q, Some(&src), tol, max_iters)
}

/// Model II on `(t, Z, kappa)`. `cfg.kappa` is unused; depth is a state variable.
pub fn solve_model2_pde(
    params: &ModelIIParams,
    cfg: &LiquidationConfig,
    grid: &Grid3D,
    tol: f64,
    max_iters: usize,
) -> Result<PdeSolution> {
    check_inputs(cfg, grid, tol, max_iters)?;
    let (nu, nv) = (grid.u_axis.len(), grid.v_axis.len());
    let diff_u: Vec<f64> = grid.u_axis.iter().map(|&z| 0.5 * params.gamma * params.gamma * z * z).collect();
    let u_lines = (0..nv).map(|_| (vec![0.0; nu], diff_u.clone())).collect();
    let v_line =
        (vec![0.0; nv], grid.v_axis.iter().map(|&k| 0.5 * params.varsigma * params.varsigma * k * k).collect());
    let op = Operator { nu, nv, u_lines, v_line, u: grid.u_axis.clone(), v: grid.v_axis.clone() };
    let mut q = vec![0.0; nu * nv];
    for (iu, &z) in grid.u_axis.iter().enumerate() {
        for (iv, &k) in grid.v_axis.iter().enumerate() {
            q[iu * nv + iv] = k / (cfg.eta * z.powf(1.5));
        }
    }
    sweep(Model::Model2, cfg, grid, &op, &q, None, tol, max_iters)
}

/// Coefficients of the quadratic envelope `A S^2 + (1/2) B S Z + C Z^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MertonCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl MertonCoefficients {
    pub fn envelope(&self, z: f64, s: f64) -> f64 {
        self.a * s * s + 0.5 * self.b * s * z + self.c * z * z
    }
}

/// Envelope coefficients at each time on `t_axis`, zero at the horizon.
///
/// ```text
/// -A' = sigma^2 A + beta^2/(4 phi) + beta B / 2
/// -B' = -beta B - beta^2/phi + 4 beta C
/// -C' = (gamma^2 - 2 beta) C + beta^2/(4 phi)
/// ```
pub fn merton_coefficients(params: &ModelIParams, phi: f64, t_axis: &[f64]) -> Result<Vec<MertonCoefficients>> {
    if !(phi > 0.0) {
        return Err(domain("envelope needs phi > 0"));
    }
    let (s2, g2, b) = (params.sigma * params.sigma, params.gamma * params.gamma, params.beta);
    let k = b * b / phi;
    // Derivatives in time-to-maturity.
    let rhs = |v: [f64; 3]| -> [f64; 3] {
        [s2 * v[0] + 0.25 * k + 0.5 * b * v[1], -b * v[1] - k + 4.0 * b * v[2], (g2 - 2.0 * b) * v[2] + 0.25 * k]
    };
    let rate = s2 + g2 + 4.0 * b.abs() + 1.0;
    let n = t_axis.len();
    let mut out = vec![MertonCoefficients { a: 0.0, b: 0.0, c: 0.0 }; n];
    let mut v = [0.0; 3];
    for it in (0..n - 1).rev() {
        let h = t_axis[it + 1] - t_axis[it];
        let m = ((h * rate / 0.02).ceil() as usize).max(1);
        let hs = h / m as f64;
        for _ in 0..m {
            let k1 = rhs(v);
            let k2 = rhs(std::array::from_fn(|i| v[i] + 0.5 * hs * k1[i]));
            let k3 = rhs(std::array::from_fn(|i| v[i] + 0.5 * hs * k2[i]));
            let k4 = rhs(std::array::from_fn(|i| v[i] + hs * k3[i]));
            v = std::array::from_fn(|i| v[i] + hs / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
        }
        out[it] = MertonCoefficients { a: v[0], b: v[1], c: v[2] };
    }
    Ok(out)
}

/// `E[Z_T | Z_t = z, S_t = s]` in Model I.
pub fn expected_terminal_rate(beta: f64, z: f64, s: f64, tau: f64) -> f64 {
    let e = (-beta * tau).exp();
    z * e + s * (1.0 - e)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// `(bound name, largest violation)`; zero means the bound holds everywhere.
    pub violations: Vec<(String, f64)>,
}

impl BoundReport {
    pub fn max_violation(&self) -> f64 {
        self.violations.iter().map(|(_, v)| *v).fold(0.0, f64::max)
    }
}

/// Largest violation of each a-priori bound over every grid node.
pub fn verify_bounds(sol: &PdeSolution, model1: Option<&ModelIParams>) -> Result<BoundReport> {
    let g = &sol.grid;
    let cfg = &sol.config;
    let t_end = cfg.t_horizon;
    let mut lower2 = 0.0f64;
    let mut upper2 = 0.0f64;
    let mut lower0 = 0.0f64;
    let mut upper0 = 0.0f64;
    let mut lower1 = 0.0f64;
    let mut upper1 = 0.0f64;
    let env = match (sol.model, model1) {
        (Model::Model1, Some(p)) => Some((p, merton_coefficients(p, cfg.phi, &g.t_axis)?)),
        (Model::Model1, None) => return Err(domain("Model I bounds need the dynamics parameters")),
        _ => None,
    };
    for (it, &t) in g.t_axis.iter().enumerate() {
        let pen = cfg.alpha + cfg.phi * (t_end - t);
        for (iu, &z) in g.u_axis.iter().enumerate() {
            for (iv, &v) in g.v_axis.iter().enumerate() {
                let th2 = sol.theta2_at(it, iu, iv);
                lower2 = lower2.max(-pen - th2);
                match &env {
                    None => upper2 = upper2.max(th2),
                    Some((p, coef)) => {
                        let m = coef[it].envelope(z, v);
                        upper2 = upper2.max(th2 - m);
                        let th0 = sol.theta0_at(it, iu, iv);
                        lower0 = lower0.max(-th0);
                        upper0 = upper0.max(th0 - m);
                        let th1 = sol.theta1_at(it, iu, iv);
                        let ez = expected_terminal_rate(p.beta, z, v, t_end - t);
                        lower1 = lower1.max((-z + ez - pen - m) - th1);
                        upper1 = upper1.max(th1 - (m + pen));
                    }
                }
            }
        }
    }
    let mut violations = vec![("theta2 >= -alpha - phi (T - t)".to_string(), lower2)];
    match env {
        None => violations.push(("theta2 <= 0".into(), upper2)),
        Some(_) => {
            violations.push(("theta2 <= envelope".into(), upper2));
            violations.push(("theta0 >= 0".into(), lower0));
            violations.push(("theta0 <= envelope".into(), upper0));
            violations.push(("theta1 lower".into(), lower1));
            violations.push(("theta1 upper".into(), upper1));
        }
    }
    Ok(BoundReport { violations })
}
