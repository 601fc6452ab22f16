//! Dense operator-splitting QP solver for
//! `min ½xᵀPx + qᵀx  s.t.  l ≤ Ax ≤ u`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_SCALE: f64 = 1e3;
/// Bounds beyond this magnitude count as infinite.
const INF_BOUND: f64 = 1e20;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl QpProblem {
    pub fn new(
        p: DMatrix<f64>,
        q: DVector<f64>,
        a: DMatrix<f64>,
        lower: DVector<f64>,
        upper: DVector<f64>,
    ) -> Result<Self> {
        let prob = Self { p, q, a, lower, upper };
        prob.validate()?;
        Ok(prob)
    }

    pub fn unconstrained(p: DMatrix<f64>, q: DVector<f64>) -> Result<Self> {
        let n = q.len();
        Self::new(p, q, DMatrix::zeros(0, n), DVector::zeros(0), DVector::zeros(0))
    }

    pub fn num_vars(&self) -> usize {
        self.q.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.lower.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.q.len();
        if self.p.shape() != (n, n) {
            return Err(Error::Dimension(format!("P is {:?}, expected {n}×{n}", self.p.shape())));
        }
        let m = self.lower.len();
        if self.upper.len() != m || self.a.shape() != (m, n) {
            return Err(Error::Dimension(format!(
                "A is {:?} with {} lower and {} upper bounds, expected {m}×{n}",
                self.a.shape(),
                m,
                self.upper.len()
            )));
        }
        if (&self.p - self.p.transpose()).amax() > 1e-10 * self.p.amax().max(1.0) {
            return Err(Error::invalid("P", None, "matrix is not symmetric"));
        }
        for i in 0..m {
            if self.lower[i] > self.upper[i] || self.lower[i].is_nan() || self.upper[i].is_nan() {
                return Err(Error::invalid("bounds", None, format!("row {i}: lower exceeds upper")));
            }
        }
        Ok(())
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QpSettings {
    pub rho: f64,
    pub sigma: f64,
    /// Over-relaxation factor in (0, 2).
    pub alpha: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub eps_prim_inf: f64,
    pub max_iter: usize,
    /// Iterations between step-size updates; 0 keeps ρ fixed.
    pub adaptive_rho_interval: usize,
    /// Refine the ADMM answer by solving the KKT system on the guessed active set.
    pub polish: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            eps_abs: 1e-6,
            eps_rel: 1e-6,
            eps_prim_inf: 1e-4,
            max_iter: 4000,
            adaptive_rho_interval: 25,
            polish: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    MaxIter,
    PrimalInfeasible,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Constraint multipliers: positive at an active upper bound, negative at a lower one.
    pub y: DVector<f64>,
    pub z: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub prim_res: f64,
    pub dual_res: f64,
    pub polished: bool,
}

struct Factorization {
    p: DMatrix<f64>,
    a: DMatrix<f64>,
    rho: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
}

/// Solver that keeps the last factorisation and reuses it while `P`, `A`
/// and the step sizes are unchanged.
pub struct QpSolver {
    pub settings: QpSettings,
    cache: Option<Factorization>,
    pub factorizations: usize,
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

fn project(v: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(v.len(), |i, _| v[i].clamp(lo[i], hi[i]))
}

impl QpSolver {
    pub fn new(settings: QpSettings) -> Self {
        Self {
            settings,
            cache: None,
            factorizations: 0,
        }
    }

    fn rho_vector(&self, prob: &QpProblem, rho: f64) -> DVector<f64> {
        DVector::from_fn(prob.num_constraints(), |i, _| {
            let (l, u) = (prob.lower[i], prob.upper[i]);
            if l <= -INF_BOUND && u >= INF_BOUND {
                RHO_MIN
            } else if u - l < 1e-12 {
                RHO_EQ_SCALE * rho
            } else {
                rho
            }
        })
    }

    fn factor(&mut self, prob: &QpProblem, rho: &DVector<f64>) -> Result<()> {
        if let Some(c) = &self.cache {
            if c.p == prob.p && c.a == prob.a && c.rho == *rho {
                return Ok(());
            }
        }
        let n = prob.num_vars();
        let mut k = &prob.p + DMatrix::identity(n, n) * self.settings.sigma;
        k += prob.a.transpose() * DMatrix::from_diagonal(rho) * &prob.a;
        let chol = Cholesky::new(k).ok_or_else(|| Error::Other("QP system matrix is not positive definite".into()))?;
        self.factorizations += 1;
        self.cache = Some(Factorization {
            p: prob.p.clone(),
            a: prob.a.clone(),
            rho: rho.clone(),
            chol,
        });
        Ok(())
    }

    pub fn solve(&mut self, prob: &QpProblem, warm_x: Option<&DVector<f64>>) -> Result<QpSolution> {
        prob.validate()?;
        let s = self.settings;
        let (n, m) = (prob.num_vars(), prob.num_constraints());
        let lo = prob.lower.map(|v| v.max(-INF_BOUND));
        let hi = prob.upper.map(|v| v.min(INF_BOUND));
        let mut x = warm_x.cloned().unwrap_or_else(|| DVector::zeros(n));
        if x.len() != n {
            return Err(Error::Dimension(format!(
                "warm start has {} entries, expected {n}",
                x.len()
            )));
        }
        if m == 0 {
            if let Some(chol) = Cholesky::new(prob.p.clone()) {
                let x = chol.solve(&(-&prob.q));
                let dual_res = inf_norm(&(&prob.p * &x + &prob.q));
                return Ok(QpSolution {
                    x,
                    y: DVector::zeros(0),
                    z: DVector::zeros(0),
                    status: QpStatus::Solved,
                    iterations: 0,
                    prim_res: 0.0,
                    dual_res,
                    polished: false,
                });
            }
        }
        let mut z = project(&(&prob.a * &x), &lo, &hi);
        let mut y = DVector::zeros(m);
        let mut rho_scalar = s.rho;
        let mut rho = self.rho_vector(prob, rho_scalar);
        self.factor(prob, &rho)?;

        let mut status = QpStatus::MaxIter;
        let mut iterations = 0;
        let (mut prim_res, mut dual_res) = (f64::INFINITY, f64::INFINITY);
        for k in 1..=s.max_iter {
            iterations = k;
            let rhs = &x * s.sigma - &prob.q + prob.a.transpose() * (rho.component_mul(&z) - &y);
            let x_tilde = self.cache.as_ref().unwrap().chol.solve(&rhs);
            let z_tilde = &prob.a * &x_tilde;
            let x_new = &x_tilde * s.alpha + &x * (1.0 - s.alpha);
            let z_relaxed = &z_tilde * s.alpha + &z * (1.0 - s.alpha);
            let z_new = project(&(&z_relaxed + y.component_div(&rho)), &lo, &hi);
            let y_new = &y + rho.component_mul(&(&z_relaxed - &z_new));
            let delta_y = &y_new - &y;
            x = x_new;
            z = z_new;
            y = y_new;

            let ax = &prob.a * &x;
            let px = &prob.p * &x;
            let aty = prob.a.transpose() * &y;
            prim_res = inf_norm(&(&ax - &z));
            dual_res = inf_norm(&(&px + &prob.q + &aty));
            let eps_prim = s.eps_abs + s.eps_rel * inf_norm(&ax).max(inf_norm(&z));
            let eps_dual = s.eps_abs + s.eps_rel * inf_norm(&px).max(inf_norm(&aty)).max(inf_norm(&prob.q));
            if prim_res <= eps_prim && dual_res <= eps_dual {
                status = QpStatus::Solved;
                break;
            }
            if m > 0 && primal_infeasible(prob, &delta_y, s.eps_prim_inf) {
                status = QpStatus::PrimalInfeasible;
                break;
            }
            if s.adaptive_rho_interval > 0 && k % s.adaptive_rho_interval == 0 && m > 0 {
                let prim_scale = inf_norm(&ax).max(inf_norm(&z)).max(1e-12);
                let dual_scale = inf_norm(&px).max(inf_norm(&aty)).max(inf_norm(&prob.q)).max(1e-12);
                let ratio = ((prim_res / prim_scale) / (dual_res / dual_scale).max(1e-30)).sqrt();
                let proposed = (rho_scalar * ratio).clamp(RHO_MIN, RHO_MAX);
                if proposed > 5.0 * rho_scalar || proposed < 0.2 * rho_scalar {
                    rho_scalar = proposed;
                    rho = self.rho_vector(prob, rho_scalar);
                    self.factor(prob, &rho)?;
                }
            }
        }

        let mut sol = QpSolution {
            x,
            y,
            z,
            status,
            iterations,
            prim_res,
            dual_res,
            polished: false,
        };
        if s.polish && status == QpStatus::Solved {
            polish(prob, &mut sol);
        }
        Ok(sol)
    }
}

/// Certificate check on the dual iterate difference.
fn primal_infeasible(prob: &QpProblem, dy: &DVector<f64>, eps: f64) -> bool {
    let norm = inf_norm(dy);
    if norm < 1e-30 {
        return false;
    }
    if inf_norm(&(prob.a.transpose() * dy)) > eps * norm {
        return false;
    }
    let mut support = 0.0;
    for i in 0..dy.len() {
        let d = dy[i];
        if d > 0.0 {
            if prob.upper[i] >= INF_BOUND {
                if d > eps * norm {
                    return false;
                }
                continue;
            }
            support += prob.upper[i] * d;
        } else if d < 0.0 {
            if prob.lower[i] <= -INF_BOUND {
                if -d > eps * norm {
                    return false;
                }
                continue;
            }
            support += prob.lower[i] * d;
        }
    }
    support < -eps * norm
}

/// Solves the equality-constrained problem on the active set guessed from
/// the ADMM iterate and keeps it when residuals do not get worse.
fn polish(prob: &QpProblem, sol: &mut QpSolution) {
    let (n, m) = (prob.num_vars(), prob.num_constraints());
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for i in 0..m {
        if sol.z[i] - prob.lower[i] < -sol.y[i] {
            rows.push(i);
            targets.push(prob.lower[i]);
        } else if prob.upper[i] - sol.z[i] < sol.y[i] {
            rows.push(i);
            targets.push(prob.upper[i]);
        }
    }
    let k = rows.len();
    let delta = 1e-9;
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(&prob.p);
    for (r, &i) in rows.iter().enumerate() {
        for c in 0..n {
            kkt[(n + r, c)] = prob.a[(i, c)];
            kkt[(c, n + r)] = prob.a[(i, c)];
        }
    }
    let mut reg = kkt.clone();
    for d in 0..n {
        reg[(d, d)] += delta;
    }
    for d in n..n + k {
        reg[(d, d)] -= delta;
    }
    let mut rhs = DVector::zeros(n + k);
    rhs.rows_mut(0, n).copy_from(&(-&prob.q));
    for (r, t) in targets.iter().enumerate() {
        rhs[n + r] = *t;
    }
    let lu = reg.lu();
    let Some(mut sol_vec) = lu.solve(&rhs) else { return };
    for _ in 0..3 {
        let resid = &rhs - &kkt * &sol_vec;
        if let Some(corr) = lu.solve(&resid) {
            sol_vec += corr;
        }
    }
    let x = sol_vec.rows(0, n).into_owned();
    let mut y = DVector::zeros(m);
    for (r, &i) in rows.iter().enumerate() {
        y[i] = sol_vec[n + r];
    }
    let ax = &prob.a * &x;
    let z = project(&ax, &prob.lower, &prob.upper);
    let prim = inf_norm(&(&ax - &z));
    let dual = inf_norm(&(&prob.p * &x + &prob.q + prob.a.transpose() * &y));
    // Multipliers must carry the right sign for the guessed bound.
    let signs_ok = rows.iter().enumerate().all(|(r, &i)| {
        let yi = sol_vec[n + r];
        if prob.upper[i] - prob.lower[i] < 1e-12 {
            true
        } else if targets[r] == prob.upper[i] {
            yi >= -1e-9
        } else {
            yi <= 1e-9
        }
    });
    if signs_ok && prim <= sol.prim_res.max(1e-9) && dual <= sol.dual_res.max(1e-9) {
        sol.x = x;
        sol.y = y;
        sol.z = z;
        sol.prim_res = prim;
        sol.dual_res = dual;
        sol.polished = true;
    }
}

pub fn solve_qp(prob: &QpProblem, settings: &QpSettings) -> Result<QpSolution> {
    QpSolver::new(*settings).solve(prob, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(p: f64, q: f64) -> (DMatrix<f64>, DVector<f64>) {
        (DMatrix::from_element(1, 1, p), DVector::from_element(1, q))
    }

    #[test]
    fn unconstrained_stationary_point() {
        let (p, q) = scalar(1.0, -1.0);
        let sol = solve_qp(&QpProblem::unconstrained(p, q).unwrap(), &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        assert!((sol.x[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn active_lower_bound() {
        let (p, q) = scalar(2.0, 0.0);
        let prob = QpProblem::new(
            p,
            q,
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 1.0),
            DVector::from_element(1, f64::INFINITY),
        )
        .unwrap();
        let sol = solve_qp(&prob, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        assert!((sol.x[0] - 1.0).abs() < 1e-6);
        assert!(sol.y[0] < 0.0);
    }

    #[test]
    fn contradictory_bounds_detected() {
        let (p, q) = scalar(1.0, 0.0);
        let prob = QpProblem::new(
            p,
            q,
            DMatrix::from_column_slice(2, 1, &[1.0, 1.0]),
            DVector::from_column_slice(&[1.0, f64::NEG_INFINITY]),
            DVector::from_column_slice(&[f64::INFINITY, 0.0]),
        )
        .unwrap();
        let sol = solve_qp(&prob, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::PrimalInfeasible);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let err = QpProblem::new(
            DMatrix::identity(2, 2),
            DVector::zeros(3),
            DMatrix::zeros(0, 3),
            DVector::zeros(0),
            DVector::zeros(0),
        );
        assert!(matches!(err, Err(Error::Dimension(_))));
        let asym = QpProblem::unconstrained(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]), DVector::zeros(2));
        assert!(asym.is_err());
    }

    /// Brute-force KKT: try every assignment of each row to inactive / at
    /// lower / at upper, keep primal-dual feasible candidates, return the
    /// one with the lowest objective.
    fn active_set_oracle(prob: &QpProblem) -> Option<DVector<f64>> {
        let (n, m) = (prob.num_vars(), prob.num_constraints());
        let mut best: Option<(f64, DVector<f64>)> = None;
        for code in 0..3usize.pow(m as u32) {
            let mut c = code;
            let mut active = Vec::new();
            for i in 0..m {
                match c % 3 {
                    1 if prob.lower[i].is_finite() => active.push((i, prob.lower[i], -1.0)),
                    2 if prob.upper[i].is_finite() => active.push((i, prob.upper[i], 1.0)),
                    0 => {}
                    _ => {
                        active.clear();
                        active.push((usize::MAX, 0.0, 0.0));
                        break;
                    }
                }
                c /= 3;
            }
            if active.first().is_some_and(|a| a.0 == usize::MAX) {
                continue;
            }
            let k = active.len();
            let mut kkt = DMatrix::zeros(n + k, n + k);
            kkt.view_mut((0, 0), (n, n)).copy_from(&prob.p);
            let mut rhs = DVector::zeros(n + k);
            rhs.rows_mut(0, n).copy_from(&(-&prob.q));
            for (r, &(i, b, _)) in active.iter().enumerate() {
                for col in 0..n {
                    kkt[(n + r, col)] = prob.a[(i, col)];
                    kkt[(col, n + r)] = prob.a[(i, col)];
                }
                rhs[n + r] = b;
            }
            let Some(sol) = kkt.lu().solve(&rhs) else { continue };
            let x = sol.rows(0, n).into_owned();
            let ax = &prob.a * &x;
            let feasible = (0..m).all(|i| ax[i] >= prob.lower[i] - 1e-9 && ax[i] <= prob.upper[i] + 1e-9);
            let dual_ok = active
                .iter()
                .enumerate()
                .all(|(r, &(_, _, sign))| sol[n + r] * sign >= -1e-9);
            if feasible && dual_ok {
                let f = prob.objective(&x);
                if best.as_ref().map_or(true, |(bf, _)| f < *bf) {
                    best = Some((f, x));
                }
            }
        }
        best.map(|(_, x)| x)
    }

    fn random_problem(rng: &mut ChaCha8Rng, n: usize, m: usize) -> QpProblem {
        let mhalf = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let p = mhalf.transpose() * &mhalf + DMatrix::identity(n, n) * 0.1;
        let q = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
        let a = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
        // Bounds around a random interior point keep the problem feasible.
        let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-0.5..0.5));
        let ax0 = &a * &x0;
        let lower = DVector::from_fn(m, |i, _| {
            if rng.gen_bool(0.2) {
                f64::NEG_INFINITY
            } else {
                ax0[i] - rng.gen_range(0.0..0.5)
            }
        });
        let upper = DVector::from_fn(m, |i, _| {
            if rng.gen_bool(0.2) {
                f64::INFINITY
            } else {
                ax0[i] + rng.gen_range(0.0..0.5)
            }
        });
        QpProblem::new(p, q, a, lower, upper).unwrap()
    }

    #[test]
    fn matches_active_set_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let settings = QpSettings::default();
        let tol = 10.0 * settings.eps_abs;
        for _ in 0..50 {
            let prob = random_problem(&mut rng, 6, 4);
            let oracle = active_set_oracle(&prob).expect("feasible by construction");
            let sol = solve_qp(&prob, &settings).unwrap();
            assert_eq!(sol.status, QpStatus::Solved);
            assert!((&sol.x - &oracle).amax() < 1e-5, "x {} vs oracle {}", sol.x, oracle);
            let ax = &prob.a * &sol.x;
            for i in 0..4 {
                assert!(ax[i] >= prob.lower[i] - tol && ax[i] <= prob.upper[i] + tol);
            }
            // No oracle-feasible point does better.
            for _ in 0..20 {
                let cand = &oracle + DVector::from_fn(6, |_, _| rng.gen_range(-0.1..0.1));
                let ac = &prob.a * &cand;
                if (0..4).all(|i| ac[i] >= prob.lower[i] && ac[i] <= prob.upper[i]) {
                    assert!(prob.objective(&sol.x) <= prob.objective(&cand) + 1e-5);
                }
            }
        }
    }

    #[test]
    fn equality_rows_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut prob = random_problem(&mut rng, 5, 3);
        prob.upper[0] = prob.lower[0].max(-1.0);
        prob.lower[0] = prob.upper[0];
        let a = solve_qp(&prob, &QpSettings::default()).unwrap();
        let b = solve_qp(&prob, &QpSettings::default()).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.iterations, b.iterations);
        assert!(((&prob.a * &a.x)[0] - prob.lower[0]).abs() < 1e-5);
        let oracle = active_set_oracle(&prob).unwrap();
        assert!((&a.x - &oracle).amax() < 1e-5);
    }

    #[test]
    fn factorization_reused_for_repeated_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let prob = random_problem(&mut rng, 4, 2);
        let mut solver = QpSolver::new(QpSettings {
            adaptive_rho_interval: 0,
            ..Default::default()
        });
        solver.solve(&prob, None).unwrap();
        let mut shifted = prob.clone();
        shifted.q[0] += 0.1;
        solver.solve(&shifted, None).unwrap();
        assert_eq!(solver.factorizations, 1);
    }

    #[test]
    fn unpolished_solution_meets_tolerances() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let settings = QpSettings {
            polish: false,
            ..Default::default()
        };
        for _ in 0..10 {
            let prob = random_problem(&mut rng, 6, 4);
            let sol = solve_qp(&prob, &settings).unwrap();
            assert_eq!(sol.status, QpStatus::Solved);
            let ax = &prob.a * &sol.x;
            let scale = inf_norm(&ax).max(inf_norm(&sol.z));
            assert!(sol.prim_res <= settings.eps_abs + settings.eps_rel * scale);
        }
    }
}
