use nalgebra::{DMatrix, DVector};
use quadretarget::ddp::{
    backward_pass, forward_pass, rollout, solve_ocp, CostDerivs, DdpOptions, LqProblem, OcpProblem,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Discrete Riccati recursion; returns the optimal cost from x0 (target 0).
fn riccati_cost(p: &LqProblem) -> f64 {
    let mut s = p.qf.clone();
    for _ in 0..p.horizon {
        let bt_s = p.b.transpose() * &s;
        let k = (&p.r + &bt_s * &p.b).try_inverse().unwrap() * &bt_s * &p.a;
        s = &p.q + p.a.transpose() * &s * (&p.a - &p.b * k);
        s = 0.5 * (&s + s.transpose());
    }
    p.x0.dot(&(&s * &p.x0))
}

/// Stacked least squares over the whole control sequence: the optimal cost
/// is `x0ᵀ W x0`, so the value Hessian is `2W` and its gradient `2W x0`.
fn batch_value(p: &LqProblem) -> DMatrix<f64> {
    let (n, m, h) = (p.a.nrows(), p.b.ncols(), p.horizon);
    // x_k = Sx_k x0 + Su_k U
    let mut sx = vec![DMatrix::identity(n, n)];
    let mut su = vec![DMatrix::zeros(n, m * h)];
    for k in 0..h {
        let mut next_su = &p.a * &su[k];
        let mut blk = next_su.view_mut((0, m * k), (n, m));
        blk += &p.b;
        sx.push(&p.a * &sx[k]);
        su.push(next_su);
    }
    let mut hu = DMatrix::zeros(m * h, m * h);
    let mut g = DMatrix::zeros(m * h, n);
    let mut w = DMatrix::zeros(n, n);
    for k in 0..=h {
        let q = if k == h { &p.qf } else { &p.q };
        hu += su[k].transpose() * q * &su[k];
        g += su[k].transpose() * q * &sx[k];
        w += sx[k].transpose() * q * &sx[k];
    }
    for k in 0..h {
        let mut blk = hu.view_mut((m * k, m * k), (m, m));
        blk += &p.r;
    }
    let sol = hu.cholesky().unwrap().solve(&g);
    w - g.transpose() * sol
}

fn random_lq(rng: &mut ChaCha8Rng, n: usize, m: usize, horizon: usize) -> LqProblem {
    let mut rand_mat = |r: usize, c: usize, s: f64| DMatrix::from_fn(r, c, |_, _| rng.gen_range(-s..s));
    let a = DMatrix::identity(n, n) + rand_mat(n, n, 0.15);
    let b = rand_mat(n, m, 1.0);
    let lq = rand_mat(n, n, 1.0);
    let lr = rand_mat(m, m, 1.0);
    let lf = rand_mat(n, n, 1.0);
    let q = &lq * lq.transpose() * 0.1;
    let r = &lr * lr.transpose() * 0.1 + DMatrix::identity(m, m) * 0.1;
    let qf = &lf * lf.transpose();
    let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    LqProblem {
        a,
        b,
        q,
        r,
        qf,
        x0,
        target: DVector::zeros(n),
        horizon,
    }
}

#[test]
fn matches_riccati_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let n = rng.gen_range(2..=12);
        let m = rng.gen_range(1..=n.min(6));
        let h = rng.gen_range(5..=50);
        let p = random_lq(&mut rng, n, m, h);
        let start = std::time::Instant::now();
        let sol = solve_ocp(&p, &vec![DVector::zeros(m); h], &DdpOptions::default()).unwrap();
        assert!(start.elapsed().as_secs_f64() < 1.0);
        let oracle = riccati_cost(&p);
        assert!(
            (sol.cost() - oracle).abs() <= 1e-6 * oracle.abs().max(1e-12),
            "{} vs {oracle}",
            sol.cost()
        );
        for w in sol.cost_trace.windows(2) {
            assert!(w[1] <= w[0]);
        }
        // Stored states re-simulate from stored controls.
        let again = rollout(&p, &sol.controls);
        for (a, b) in again.states.iter().zip(&sol.states) {
            assert!((a - b).amax() <= 1e-9);
        }
        assert!(sol.max_qu < 1e-4 * (1.0 + sol.cost()));
    }
}

#[test]
fn value_function_matches_batch_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let p = random_lq(&mut rng, 4, 2, 12);
        let traj = rollout(&p, &vec![DVector::zeros(2); 12]);
        let bp = backward_pass(&p, &traj, 0.0).unwrap();
        let w = batch_value(&p);
        let scale = w.amax().max(1.0);
        assert!((&bp.vxx0 - 2.0 * &w).amax() < 1e-8 * scale);
        assert!((&bp.vx0 - 2.0 * &w * &p.x0).amax() < 1e-8 * scale);
    }
}

#[test]
fn lq_single_step_reaches_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = random_lq(&mut rng, 6, 3, 20);
    let traj = rollout(&p, &vec![DVector::zeros(3); 20]);
    let bp = backward_pass(&p, &traj, 0.0).unwrap();
    let next = forward_pass(&p, &traj, &bp, 1.0).unwrap();
    let oracle = riccati_cost(&p);
    assert!((next.cost - oracle).abs() < 1e-9 * oracle);
    assert!((traj.cost + bp.expected(1.0) - oracle).abs() < 1e-9 * oracle);
}

#[test]
fn double_integrator_reaches_target() {
    let dt = 0.05;
    let p = LqProblem {
        a: DMatrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]),
        b: DMatrix::from_row_slice(2, 1, &[0.5 * dt * dt, dt]),
        q: DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.1])),
        r: DMatrix::from_element(1, 1, 0.01),
        qf: DMatrix::from_diagonal(&DVector::from_vec(vec![100.0, 10.0])),
        x0: DVector::from_vec(vec![0.0, 0.0]),
        target: DVector::from_vec(vec![1.0, 0.0]),
        horizon: 40,
    };
    let sol = solve_ocp(&p, &vec![DVector::zeros(1); 40], &DdpOptions::default()).unwrap();
    // The target is an equilibrium, so shifting coordinates gives plain LQR.
    let shifted = LqProblem {
        x0: &p.x0 - &p.target,
        target: DVector::zeros(2),
        ..p.clone()
    };
    let oracle = riccati_cost(&shifted);
    assert!((sol.cost() - oracle).abs() < 1e-6 * oracle);
    assert!((sol.states[40][0] - 1.0).abs() < 0.05);
}

/// Torque-driven pendulum swinging towards upright.
struct Pendulum {
    dt: f64,
    horizon: usize,
    x0: DVector<f64>,
}

impl OcpProblem for Pendulum {
    fn horizon(&self) -> usize {
        self.horizon
    }
    fn state_dim(&self) -> usize {
        2
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn initial_state(&self) -> DVector<f64> {
        self.x0.clone()
    }
    fn step(&self, _k: usize, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let w = x[1] + self.dt * (-9.81 * x[0].sin() + u[0]);
        DVector::from_vec(vec![x[0] + self.dt * w, w])
    }
    fn running_cost(&self, _k: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        0.1 * ((x[0] - std::f64::consts::PI).powi(2) + 0.1 * x[1] * x[1]) + 0.01 * u[0] * u[0]
    }
    fn final_cost(&self, x: &DVector<f64>) -> f64 {
        10.0 * ((x[0] - std::f64::consts::PI).powi(2) + x[1] * x[1])
    }
    fn running_derivs(&self, _k: usize, x: &DVector<f64>, u: &DVector<f64>) -> CostDerivs {
        CostDerivs {
            lx: DVector::from_vec(vec![0.2 * (x[0] - std::f64::consts::PI), 0.02 * x[1]]),
            lu: DVector::from_element(1, 0.02 * u[0]),
            lxx: DMatrix::from_diagonal(&DVector::from_vec(vec![0.2, 0.02])),
            luu: DMatrix::from_element(1, 1, 0.02),
            lux: DMatrix::zeros(1, 2),
        }
    }
    fn final_derivs(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        (
            DVector::from_vec(vec![20.0 * (x[0] - std::f64::consts::PI), 20.0 * x[1]]),
            DMatrix::from_diagonal(&DVector::from_vec(vec![20.0, 20.0])),
        )
    }
}

#[test]
fn nonlinear_line_search_finds_descent() {
    for (i, start) in [0.0, 0.3, -0.5, 1.0].into_iter().enumerate() {
        let p = Pendulum {
            dt: 0.05,
            horizon: 60 + 10 * i,
            x0: DVector::from_vec(vec![start, 0.0]),
        };
        let traj = rollout(&p, &vec![DVector::zeros(1); p.horizon]);
        let bp = backward_pass(&p, &traj, 1e-6).unwrap();
        let improved = (0..7)
            .map(|j| 0.5f64.powi(j))
            .filter_map(|a| forward_pass(&p, &traj, &bp, a))
            .any(|t| t.cost < traj.cost);
        assert!(improved);

        let sol = solve_ocp(&p, &traj.controls, &DdpOptions::default()).unwrap();
        assert!(sol.cost() < 0.5 * traj.cost);
        for w in sol.cost_trace.windows(2) {
            assert!(w[1] <= w[0]);
        }
        let again = rollout(&p, &sol.controls);
        for (a, b) in again.states.iter().zip(&sol.states) {
            assert!((a - b).amax() <= 1e-9);
        }
    }
}
