//! Iterative LQG / DDP with Gauss-Newton value recursion, Levenberg-Marquardt
//! regularisation of Q_uu and a backtracking forward rollout.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Quadratic model of one stage cost.
#[derive(Debug, Clone)]
pub struct CostDerivs {
    pub lx: DVector<f64>,
    pub lu: DVector<f64>,
    pub lxx: DMatrix<f64>,
    pub luu: DMatrix<f64>,
    pub lux: DMatrix<f64>,
}

/// A discrete-time optimal control problem. States live in a coordinate
/// vector that may be larger than the tangent space (`state_dim`); the
/// solver only touches them through `retract` and `difference`.
pub trait OcpProblem: Sync {
    fn horizon(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn initial_state(&self) -> DVector<f64>;
    fn step(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    fn running_cost(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64;
    fn final_cost(&self, x: &DVector<f64>) -> f64;
    fn running_derivs(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> CostDerivs;
    fn final_derivs(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>);

    fn retract(&self, x: &DVector<f64>, dx: &DVector<f64>) -> DVector<f64> {
        x + dx
    }

    fn difference(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        b - a
    }

    /// Tangent-space dynamics Jacobians; central differences by default.
    fn dynamics_derivs(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        fd_dynamics(self, k, x, u)
    }
}

/// Central-difference `f_x`, `f_u` with steps of 1e-6 (controls scaled by
/// their magnitude).
pub fn fd_dynamics<P: OcpProblem + ?Sized>(
    problem: &P,
    k: usize,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let (nx, nu) = (problem.state_dim(), problem.control_dim());
    let nominal = problem.step(k, x, u);
    let mut fx = DMatrix::zeros(nx, nx);
    for i in 0..nx {
        let h = 1e-6;
        let mut dx = DVector::zeros(nx);
        dx[i] = h;
        let plus = problem.step(k, &problem.retract(x, &dx), u);
        dx[i] = -h;
        let minus = problem.step(k, &problem.retract(x, &dx), u);
        let col = (problem.difference(&nominal, &plus) - problem.difference(&nominal, &minus)) / (2.0 * h);
        fx.set_column(i, &col);
    }
    let mut fu = DMatrix::zeros(nx, nu);
    for i in 0..nu {
        let h = 1e-6 * (1.0 + u[i].abs());
        let mut up = u.clone();
        up[i] += h;
        let plus = problem.step(k, x, &up);
        up[i] = u[i] - h;
        let minus = problem.step(k, x, &up);
        let col = (problem.difference(&nominal, &plus) - problem.difference(&nominal, &minus)) / (2.0 * h);
        fu.set_column(i, &col);
    }
    (fx, fu)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub cost: f64,
}

pub fn rollout<P: OcpProblem + ?Sized>(problem: &P, controls: &[DVector<f64>]) -> Trajectory {
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(problem.initial_state());
    let mut cost = 0.0;
    for (k, u) in controls.iter().enumerate() {
        cost += problem.running_cost(k, &states[k], u);
        let next = problem.step(k, &states[k], u);
        states.push(next);
    }
    cost += problem.final_cost(states.last().expect("initial state present"));
    Trajectory {
        states,
        controls: controls.to_vec(),
        cost,
    }
}

#[derive(Debug, Clone)]
pub struct BackwardPass {
    /// Feedforward terms `−Q_uu⁻¹ Q_u`.
    pub k: Vec<DVector<f64>>,
    /// Feedback gains `−Q_uu⁻¹ Q_ux`.
    pub gains: Vec<DMatrix<f64>>,
    /// Expected change `α·dv[0] + α²·dv[1]` for a step of size α.
    pub dv: [f64; 2],
    pub vx0: DVector<f64>,
    pub vxx0: DMatrix<f64>,
    /// Largest |Q_u| entry over the horizon.
    pub max_qu: f64,
}

impl BackwardPass {
    pub fn expected(&self, alpha: f64) -> f64 {
        alpha * self.dv[0] + alpha * alpha * self.dv[1]
    }
}

/// Q_uu + λI was not positive definite at step `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NotPositiveDefinite {
    pub k: usize,
}

/// Value recursion along `traj` with second-order dynamics terms dropped.
pub fn backward_pass<P: OcpProblem + ?Sized>(
    problem: &P,
    traj: &Trajectory,
    lambda: f64,
) -> std::result::Result<BackwardPass, NotPositiveDefinite> {
    let h = problem.horizon();
    let nu = problem.control_dim();
    let (mut vx, mut vxx) = problem.final_derivs(&traj.states[h]);
    let mut ks = vec![DVector::zeros(nu); h];
    let mut gains = vec![DMatrix::zeros(nu, problem.state_dim()); h];
    let mut dv = [0.0, 0.0];
    let mut max_qu: f64 = 0.0;
    for k in (0..h).rev() {
        let (x, u) = (&traj.states[k], &traj.controls[k]);
        let (fx, fu) = problem.dynamics_derivs(k, x, u);
        let l = problem.running_derivs(k, x, u);
        let qx = &l.lx + fx.transpose() * &vx;
        let qu = &l.lu + fu.transpose() * &vx;
        let vxx_fx = &vxx * &fx;
        let qxx = &l.lxx + fx.transpose() * &vxx_fx;
        let quu = &l.luu + fu.transpose() * &vxx * &fu;
        let qux = &l.lux + fu.transpose() * &vxx_fx;
        max_qu = max_qu.max(qu.amax());

        let mut quu_reg = quu.clone();
        for i in 0..nu {
            quu_reg[(i, i)] += lambda;
        }
        let chol = Cholesky::new(quu_reg).ok_or(NotPositiveDefinite { k })?;
        let kff = -chol.solve(&qu);
        let kfb = -chol.solve(&qux);

        dv[0] += kff.dot(&qu);
        dv[1] += 0.5 * kff.dot(&(&quu * &kff));
        let kt = kfb.transpose();
        vx = &qx + &kt * (&quu * &kff) + &kt * &qu + qux.transpose() * &kff;
        let v = &qxx + &kt * &quu * &kfb + &kt * &qux + qux.transpose() * &kfb;
        vxx = 0.5 * (&v + v.transpose());
        ks[k] = kff;
        gains[k] = kfb;
    }
    Ok(BackwardPass {
        k: ks,
        gains,
        dv,
        vx0: vx,
        vxx0: vxx,
        max_qu,
    })
}

/// Rollout of `u + α·k + K·(x_new ⊖ x)`; `None` when a state goes non-finite.
pub fn forward_pass<P: OcpProblem + ?Sized>(
    problem: &P,
    traj: &Trajectory,
    bp: &BackwardPass,
    alpha: f64,
) -> Option<Trajectory> {
    let h = problem.horizon();
    let mut states = Vec::with_capacity(h + 1);
    let mut controls = Vec::with_capacity(h);
    states.push(problem.initial_state());
    let mut cost = 0.0;
    for k in 0..h {
        let dx = problem.difference(&traj.states[k], &states[k]);
        let u = &traj.controls[k] + alpha * &bp.k[k] + &bp.gains[k] * dx;
        cost += problem.running_cost(k, &states[k], &u);
        let next = problem.step(k, &states[k], &u);
        if next.iter().any(|v| !v.is_finite()) {
            return None;
        }
        states.push(next);
        controls.push(u);
    }
    cost += problem.final_cost(&states[h]);
    cost.is_finite().then_some(Trajectory { states, controls, cost })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct DdpOptions {
    pub max_iter: usize,
    /// Relative cost-change tolerance.
    pub tol: f64,
    pub lambda_init: f64,
    pub lambda_factor: f64,
    pub lambda_max: f64,
}

impl Default for DdpOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-9,
            lambda_init: 1e-6,
            lambda_factor: 10.0,
            lambda_max: 1e10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OcpSolution {
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub feedforward: Vec<DVector<f64>>,
    pub gains: Vec<DMatrix<f64>>,
    /// Cost of the initial rollout followed by every accepted iterate.
    pub cost_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub max_qu: f64,
}

impl OcpSolution {
    pub fn cost(&self) -> f64 {
        *self.cost_trace.last().expect("trace starts with the initial cost")
    }
}

const LINE_SEARCH: [f64; 7] = [1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625];

pub fn solve_ocp<P: OcpProblem + ?Sized>(
    problem: &P,
    u_init: &[DVector<f64>],
    opts: &DdpOptions,
) -> Result<OcpSolution> {
    let h = problem.horizon();
    if h == 0 {
        return Err(Error::invalid("horizon", None, "must be at least 1"));
    }
    if u_init.len() != h || u_init.iter().any(|u| u.len() != problem.control_dim()) {
        return Err(Error::Dimension(format!(
            "expected {h} controls of size {}",
            problem.control_dim()
        )));
    }
    let mut traj = rollout(problem, u_init);
    if !traj.cost.is_finite() || traj.states.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Diverged("initial rollout is not finite".into()));
    }
    let mut lambda = opts.lambda_init;
    let mut trace = vec![traj.cost];
    let mut converged = false;
    let mut iterations = 0;
    let mut last_bp = None;
    while iterations < opts.max_iter {
        iterations += 1;
        let bp = match backward_pass(problem, &traj, lambda) {
            Ok(bp) => bp,
            Err(_) => {
                lambda *= opts.lambda_factor;
                if lambda > opts.lambda_max {
                    break;
                }
                continue;
            }
        };
        let threshold = opts.tol * traj.cost;
        if -bp.expected(1.0) <= threshold {
            converged = true;
            last_bp = Some(bp);
            break;
        }
        let accepted = LINE_SEARCH.iter().find_map(|&alpha| {
            let cand = forward_pass(problem, &traj, &bp, alpha)?;
            (cand.cost < traj.cost).then_some(cand)
        });
        match accepted {
            Some(next) => {
                let drop = traj.cost - next.cost;
                traj = next;
                trace.push(traj.cost);
                lambda = (lambda / 2.0).max(1e-12);
                last_bp = Some(bp);
                if drop < threshold {
                    converged = true;
                    break;
                }
            }
            None => {
                last_bp = Some(bp);
                lambda *= opts.lambda_factor;
                if lambda > opts.lambda_max {
                    break;
                }
            }
        }
    }
    // Gains consistent with the returned trajectory.
    let bp = match backward_pass(problem, &traj, lambda) {
        Ok(bp) => bp,
        Err(_) => last_bp.ok_or_else(|| Error::Diverged("no positive-definite backward pass".into()))?,
    };
    Ok(OcpSolution {
        states: traj.states,
        controls: traj.controls,
        feedforward: bp.k,
        gains: bp.gains,
        cost_trace: trace,
        converged,
        iterations,
        max_qu: bp.max_qu,
    })
}

/// Linear dynamics `x' = A x + B u` with cost
/// `Σ (x−x̄)ᵀQ(x−x̄) + uᵀRu + (x_h−x̄)ᵀQ_f(x_h−x̄)`.
#[derive(Debug, Clone)]
pub struct LqProblem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub qf: DMatrix<f64>,
    pub x0: DVector<f64>,
    pub target: DVector<f64>,
    pub horizon: usize,
}

impl OcpProblem for LqProblem {
    fn horizon(&self) -> usize {
        self.horizon
    }
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn control_dim(&self) -> usize {
        self.b.ncols()
    }
    fn initial_state(&self) -> DVector<f64> {
        self.x0.clone()
    }
    fn step(&self, _k: usize, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }
    fn running_cost(&self, _k: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let e = x - &self.target;
        e.dot(&(&self.q * &e)) + u.dot(&(&self.r * u))
    }
    fn final_cost(&self, x: &DVector<f64>) -> f64 {
        let e = x - &self.target;
        e.dot(&(&self.qf * &e))
    }
    fn running_derivs(&self, _k: usize, x: &DVector<f64>, u: &DVector<f64>) -> CostDerivs {
        let e = x - &self.target;
        CostDerivs {
            lx: 2.0 * &self.q * e,
            lu: 2.0 * &self.r * u,
            lxx: 2.0 * &self.q,
            luu: 2.0 * &self.r,
            lux: DMatrix::zeros(self.control_dim(), self.state_dim()),
        }
    }
    fn final_derivs(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        (2.0 * &self.qf * (x - &self.target), 2.0 * &self.qf)
    }
    fn dynamics_derivs(&self, _k: usize, _x: &DVector<f64>, _u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.a.clone(), self.b.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(horizon: usize) -> LqProblem {
        let m = |v: f64| DMatrix::from_element(1, 1, v);
        LqProblem {
            a: m(1.0),
            b: m(1.0),
            q: m(0.0),
            r: m(1.0),
            qf: m(1.0),
            x0: DVector::from_element(1, 2.0),
            target: DVector::zeros(1),
            horizon,
        }
    }

    #[test]
    fn one_step_riccati_gain() {
        // x' = x + u, cost u² + x'²: u* = −x/2.
        let p = scalar(1);
        let traj = rollout(&p, &[DVector::zeros(1)]);
        let bp = backward_pass(&p, &traj, 0.0).unwrap();
        assert!((bp.gains[0][(0, 0)] + 0.5).abs() < 1e-15);
        assert!((bp.k[0][0] + 1.0).abs() < 1e-15);
        // Optimal cost x0²/2 = 2 from 4.
        assert!((traj.cost + bp.expected(1.0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn stationary_trajectory_has_no_feedforward() {
        let mut p = scalar(5);
        p.x0[0] = 0.0;
        let traj = rollout(&p, &vec![DVector::zeros(1); 5]);
        let bp = backward_pass(&p, &traj, 0.0).unwrap();
        assert!(bp.k.iter().all(|k| k.amax() < 1e-15));
        assert_eq!(bp.expected(1.0), 0.0);
    }

    #[test]
    fn zero_step_reproduces_trajectory() {
        let p = scalar(4);
        let traj = rollout(&p, &vec![DVector::from_element(1, 0.3); 4]);
        let bp = backward_pass(&p, &traj, 0.0).unwrap();
        let same = forward_pass(&p, &traj, &bp, 0.0).unwrap();
        assert_eq!(same.states, traj.states);
        assert_eq!(same.cost, traj.cost);
    }

    #[test]
    fn lq_solved_in_one_step_and_idempotent() {
        let p = scalar(6);
        let sol = solve_ocp(&p, &vec![DVector::zeros(1); 6], &DdpOptions::default()).unwrap();
        assert!(sol.converged);
        assert!(sol.cost_trace.len() <= 3);
        let again = solve_ocp(&p, &sol.controls, &DdpOptions::default()).unwrap();
        assert!(again.converged && again.iterations <= 2);
        assert!((again.cost() - sol.cost()).abs() <= 1e-9 * sol.cost());
    }

    #[test]
    fn non_pd_quu_reported() {
        let mut p = scalar(1);
        p.r[(0, 0)] = -2.0;
        let traj = rollout(&p, &[DVector::zeros(1)]);
        assert_eq!(backward_pass(&p, &traj, 0.0).unwrap_err(), NotPositiveDefinite { k: 0 });
        assert!(backward_pass(&p, &traj, 10.0).is_ok());
    }

    #[test]
    fn bad_inputs_rejected() {
        let p = scalar(3);
        assert!(matches!(
            solve_ocp(&p, &[DVector::zeros(1)], &DdpOptions::default()),
            Err(Error::Dimension(_))
        ));
        let mut nan = p.clone();
        nan.x0[0] = f64::NAN;
        assert!(matches!(
            solve_ocp(&nan, &vec![DVector::zeros(1); 3], &DdpOptions::default()),
            Err(Error::Diverged(_))
        ));
    }
}
