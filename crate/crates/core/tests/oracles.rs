use cpmm_core::dynamics::{
    cir_mean, model1_mean_z, multi_ou_mean, simulate_cir, simulate_model1, simulate_multi_ou, CirParams, ModelIParams,
    MultiOuParams,
};
use cpmm_core::env::{run_episode, Action, EnvConfig};
use cpmm_core::execution::LiquidationConfig;
use cpmm_core::hjb::{solve_model1_pde, Grid3D};
use cpmm_core::nalgebra::{DMatrix, DVector};
use cpmm_core::rng::derive_seed;

const PATHS: u64 = 10_000;

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

#[test]
fn model1_terminal_mean() {
    let p = ModelIParams { sigma: 0.045, beta: 657.9, gamma: 0.034, s0: 2700.0, z0: 2690.77 };
    let dt = 1.0 / 86_400.0;
    let steps = 120;
    let zs: Vec<f64> = (0..PATHS)
        .map(|i| *simulate_model1(&p, dt, steps, derive_seed(1, i)).unwrap().column("Z").unwrap().last().unwrap())
        .collect();
    let (m, se) = mean_se(&zs);
    let target = model1_mean_z(p.beta, p.z0, p.s0, dt * steps as f64);
    assert!((m - target).abs() < 3.0 * se + 1e-3, "{m} vs {target} (se {se})");
}

#[test]
fn cir_terminal_mean() {
    let p = CirParams { big_gamma: 4.0, pi_bar: 0.02, psi: 0.05, pi_tilde0: 0.005 };
    let xs: Vec<f64> = (0..PATHS)
        .map(|i| *simulate_cir(&p, 1e-3, 300, derive_seed(2, i)).unwrap().values[0].last().unwrap())
        .collect();
    let (m, se) = mean_se(&xs);
    let target = cir_mean(&p, 0.3);
    assert!((m - target).abs() < 3.0 * se + 2e-5, "{m} vs {target} (se {se})");
}

#[test]
fn multi_ou_terminal_mean() {
    let p = MultiOuParams {
        beta: DMatrix::from_row_slice(2, 2, &[3.0, 0.5, -0.2, 2.0]),
        mu: DVector::from_vec(vec![1.0, -1.0]),
        sigma_chol: DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.1, 0.2]),
        r0: DVector::from_vec(vec![0.0, 0.0]),
    };
    let t = 0.5;
    let target = multi_ou_mean(&p, t);
    let finals: Vec<Vec<f64>> = (0..PATHS)
        .map(|i| {
            let path = simulate_multi_ou(&p, 1e-3, 500, derive_seed(3, i)).unwrap();
            path.values.iter().map(|c| *c.last().unwrap()).collect()
        })
        .collect();
    for k in 0..2 {
        let xs: Vec<f64> = finals.iter().map(|f| f[k]).collect();
        let (m, se) = mean_se(&xs);
        // Euler bias at dt = 1e-3 is well below the Monte Carlo error here.
        assert!((m - target[k]).abs() < 3.0 * se + 2e-3, "coordinate {k}: {m} vs {}", target[k]);
    }
}

fn reference_problem() -> (ModelIParams, LiquidationConfig) {
    (
        ModelIParams { sigma: 0.03, beta: 1.0, gamma: 0.02, s0: 2000.0, z0: 2000.0 },
        LiquidationConfig { t_horizon: 0.1, phi: 1e-5, alpha: 5.0, eta: 1.0, kappa: 1e7, y0: 0.0 },
    )
}

#[test]
fn hjb_inventory_coefficient_falls_with_terminal_penalty() {
    let (p, cfg) = reference_problem();
    let g = Grid3D::around(cfg.t_horizon, 41, p.z0, p.gamma, 15, p.s0, p.sigma, 15).unwrap();
    let lo = solve_model1_pde(&p, &cfg, &g, 1e-8, 50).unwrap();
    let hi = solve_model1_pde(&p, &LiquidationConfig { alpha: 8.0, ..cfg }, &g, 1e-8, 50).unwrap();
    assert!(hi.theta2.iter().zip(&lo.theta2).all(|(h, l)| h <= l));
}

#[test]
fn hjb_picard_residuals_contract() {
    let (p, cfg) = reference_problem();
    let g = Grid3D::around(cfg.t_horizon, 41, p.z0, p.gamma, 15, p.s0, p.sigma, 15).unwrap();
    let sol = solve_model1_pde(&p, &cfg, &g, 1e-8, 50).unwrap();
    for res in &sol.picard_residuals[..g.t_axis.len() - 1] {
        assert!(!res.is_empty() && res.len() <= 50);
        assert!(res.windows(2).skip(1).all(|w| w[1] <= w[0]), "{res:?}");
    }
}

#[test]
fn hjb_refinement_shrinks_changes() {
    let (p, cfg) = reference_problem();
    let value = |nt: usize, n: usize| {
        let g = Grid3D::around(cfg.t_horizon, nt, p.z0, p.gamma, n, p.s0, p.sigma, n).unwrap();
        let sol = solve_model1_pde(&p, &cfg, &g, 1e-8, 50).unwrap();
        sol.interpolate(0.0, p.z0, p.s0).0[2]
    };
    let (a, b, c) = (value(11, 9), value(21, 17), value(41, 33));
    assert!((c - b).abs() < (b - a).abs(), "{a} {b} {c}");
}

#[test]
fn fee_free_symmetric_flow_is_a_martingale() {
    let cfg = EnvConfig::single_pool(1.0, 0.5, 0.0);
    let mut incs = Vec::new();
    let mut events = 0usize;
    let mut seed = 0;
    while events < 1_000_000 {
        let ep = run_episode(&cfg, |_, c| Action::uniform(1, c.max_spread, c.max_spread), seed).unwrap();
        events += ep.steps.iter().map(|s| s.n_trades[0]).sum::<usize>();
        incs.extend(ep.rows.windows(2).map(|w| w[1].z[0] - w[0].z[0]));
        seed += 1;
    }
    let (m, se) = mean_se(&incs);
    assert!(m.abs() < 4.0 * se, "drift {m} se {se}");
}
