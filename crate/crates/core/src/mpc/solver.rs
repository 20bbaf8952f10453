//! Dense convex QP solver (Goldfarb-Idnani dual active set).
//!
//! Solves `min 0.5 z'Hz + g'z  s.t.  A z >= b` for positive definite `H`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Qp {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    /// Constraint rows, `a_i' z >= b_i`.
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    pub z: Vec<f64>,
    pub objective: f64,
    /// Indices of the constraints in the final active set.
    pub active: Vec<usize>,
    pub multipliers: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iterations: usize,
    pub feasibility_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { max_iterations: 500, feasibility_tol: 1e-9 }
    }
}

impl Qp {
    pub fn n(&self) -> usize {
        self.g.len()
    }

    pub fn m(&self) -> usize {
        self.b.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.g.dot(z)
    }

    pub fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.h * z + &self.g
    }

    /// Largest constraint violation at `z` (zero when feasible).
    pub fn max_violation(&self, z: &DVector<f64>) -> f64 {
        let r = &self.a * z - &self.b;
        r.iter().fold(0.0f64, |acc, v| acc.max(-v))
    }
}

pub fn solve_qp(qp: &Qp, opts: &SolverOptions) -> Result<QpSolution> {
    let n = qp.n();
    if qp.h.nrows() != n || qp.h.ncols() != n || qp.a.ncols() != n || qp.a.nrows() != qp.m() {
        return Err(Error::Config("inconsistent QP dimensions".into()));
    }
    let chol: Cholesky<f64, Dyn> =
        Cholesky::new(qp.h.clone()).ok_or_else(|| Error::NotConvex("Hessian is not positive definite".into()))?;

    let mut z = -chol.solve(&qp.g);
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let row = |i: usize| qp.a.row(i).transpose();
    let norms: Vec<f64> = (0..qp.m()).map(|i| qp.a.row(i).norm().max(1e-300)).collect();
    let mut iterations = 0;

    loop {
        // most violated constraint, scaled by row norm
        let mut pick: Option<(usize, f64)> = None;
        for i in 0..qp.m() {
            if active.contains(&i) {
                continue;
            }
            let s = (qp.a.row(i).dot(&z.transpose()) - qp.b[i]) / norms[i];
            let tol = opts.feasibility_tol * (1.0 + qp.b[i].abs() / norms[i]);
            if s < -tol && pick.is_none_or(|(_, best)| s < best) {
                pick = Some((i, s));
            }
        }
        let Some((p, _)) = pick else {
            let objective = qp.objective(&z);
            return Ok(QpSolution { z: z.iter().copied().collect(), objective, active, multipliers: u, iterations });
        };
        let np = row(p);
        let mut up = 0.0;

        loop {
            iterations += 1;
            if iterations > opts.max_iterations {
                return Err(Error::NotConverged { iterations, best: z.iter().copied().collect() });
            }
            let q = active.len();
            let w = chol.solve(&np);
            let (step_dir, r) = if q == 0 {
                (w.clone(), DVector::zeros(0))
            } else {
                let nmat = DMatrix::from_columns(&active.iter().map(|&j| row(j)).collect::<Vec<_>>());
                let hin = chol.solve(&nmat);
                let m = nmat.transpose() * &hin;
                let r = m
                    .clone()
                    .lu()
                    .solve(&(nmat.transpose() * &w))
                    .ok_or_else(|| Error::NotConvex("degenerate active set".into()))?;
                (w - hin * &r, r)
            };

            // dual step bound
            let mut t1: Option<(f64, usize)> = None;
            for (k, &rk) in r.iter().enumerate() {
                if rk > 1e-12 {
                    let ratio = u[k] / rk;
                    if t1.is_none_or(|(best, _)| ratio < best) {
                        t1 = Some((ratio, k));
                    }
                }
            }
            let curvature = step_dir.dot(&np);
            let sp = np.dot(&z) - qp.b[p];
            let t2 = (curvature.abs() > 1e-14 * np.norm_squared().max(1.0)).then(|| -sp / curvature);

            match (t1, t2) {
                (None, None) => return Err(Error::Infeasible),
                (Some((t, l)), None) => {
                    for k in 0..q {
                        u[k] -= t * r[k];
                    }
                    up += t;
                    active.remove(l);
                    u.remove(l);
                }
                (t1, Some(t2)) => {
                    let (t, drop) = match t1 {
                        Some((t1, l)) if t1 < t2 => (t1, Some(l)),
                        _ => (t2, None),
                    };
                    z += &step_dir * t;
                    for k in 0..q {
                        u[k] -= t * r[k];
                    }
                    up += t;
                    match drop {
                        Some(l) => {
                            active.remove(l);
                            u.remove(l);
                        }
                        None => {
                            active.push(p);
                            u.push(up);
                            break;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        &m * m.transpose() + DMatrix::identity(n, n) * 0.1
    }

    #[test]
    fn unconstrained_matches_linear_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 1..8 {
            let h = random_pd(&mut rng, n);
            let g = DVector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0));
            let oracle = -h.clone().lu().solve(&g).unwrap();
            let qp = Qp { h, g, a: DMatrix::zeros(0, n), b: DVector::zeros(0) };
            let s = solve_qp(&qp, &SolverOptions::default()).unwrap();
            for (a, b) in s.z.iter().zip(oracle.iter()) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn zero_gradient_gives_zero() {
        let qp = Qp {
            h: DMatrix::identity(3, 3),
            g: DVector::zeros(3),
            a: DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]),
            b: DVector::from_element(1, -1.0),
        };
        assert_eq!(solve_qp(&qp, &SolverOptions::default()).unwrap().z, vec![0.0; 3]);
    }

    #[test]
    fn box_constrained_projection() {
        // min |z - c|^2 over a box is the clamp of c
        let c = [3.0, -2.0, 0.5];
        let qp = Qp {
            h: DMatrix::identity(3, 3) * 2.0,
            g: DVector::from_iterator(3, c.iter().map(|v| -2.0 * v)),
            a: DMatrix::from_row_slice(6, 3, &[
                1.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, -1.0,
            ]),
            b: DVector::from_row_slice(&[-1.0, -1.0, -1.0, -1.0, -1.0, -1.0]),
        };
        let s = solve_qp(&qp, &SolverOptions::default()).unwrap();
        let expect = [1.0, -1.0, 0.5];
        for (a, b) in s.z.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(s.active.len(), 2);
    }

    #[test]
    fn infeasible_and_not_convex() {
        let qp = Qp {
            h: DMatrix::identity(1, 1),
            g: DVector::zeros(1),
            a: DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            b: DVector::from_row_slice(&[1.0, 0.0]),
        };
        assert!(matches!(solve_qp(&qp, &SolverOptions::default()), Err(Error::Infeasible)));
        let qp = Qp { h: DMatrix::from_element(1, 1, -1.0), g: DVector::zeros(1), a: DMatrix::zeros(0, 1), b: DVector::zeros(0) };
        assert!(matches!(solve_qp(&qp, &SolverOptions::default()), Err(Error::NotConvex(_))));
    }

    #[test]
    fn kkt_conditions_hold_on_random_problems() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let n = rng.gen_range(1..7);
            let m = rng.gen_range(0..12);
            let h = random_pd(&mut rng, n);
            let g = DVector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0));
            // feasible by construction: z0 satisfies every row
            let z0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let a = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
            let b = &a * &z0 - DVector::from_fn(m, |_, _| rng.gen_range(0.0..1.0));
            let qp = Qp { h, g, a, b };
            let s = solve_qp(&qp, &SolverOptions::default()).unwrap();
            let z = DVector::from_vec(s.z.clone());
            assert!(qp.max_violation(&z) < 1e-8);
            // stationarity: H z + g = sum u_i a_i with u >= 0
            let mut resid = qp.gradient(&z);
            for (k, &i) in s.active.iter().enumerate() {
                assert!(s.multipliers[k] >= -1e-9);
                resid -= qp.a.row(i).transpose() * s.multipliers[k];
            }
            assert!(resid.norm() < 1e-7, "{}", resid.norm());
        }
    }
}
