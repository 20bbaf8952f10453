//! Linear single-track model.
//!
//! State `x = [vx, vy, r, phi, X, Y]`, input `u = [F, delta]`,
//! tracked output `y = [vx, phi, Y]`, hard-constrained output `y_s = [vx, Y]`.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NX: usize = 6;
pub const NU: usize = 2;
pub const NY: usize = 3;
pub const NS: usize = 2;

pub type State = SVector<f64, NX>;
pub type Input = SVector<f64, NU>;
pub type Output = SVector<f64, NY>;
pub type MatA = SMatrix<f64, NX, NX>;
pub type MatB = SMatrix<f64, NX, NU>;
pub type MatC = SMatrix<f64, NY, NX>;
pub type MatCs = SMatrix<f64, NS, NX>;

/// Speed below which the cornering terms are evaluated at this value.
pub const V_EPS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    pub mass: f64,
    pub yaw_inertia: f64,
    pub cornering_stiffness_front: f64,
    pub cornering_stiffness_rear: f64,
    pub dist_cg_front: f64,
    pub dist_cg_rear: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 1500.0,
            yaw_inertia: 2500.0,
            cornering_stiffness_front: 6.0e4,
            cornering_stiffness_rear: 6.0e4,
            dist_cg_front: 1.2,
            dist_cg_rear: 1.6,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.mass,
            self.yaw_inertia,
            self.cornering_stiffness_front,
            self.cornering_stiffness_rear,
            self.dist_cg_front,
            self.dist_cg_rear,
        ];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::Config("vehicle parameters must be positive".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearModel {
    pub a: MatA,
    pub b: MatB,
    pub c: MatC,
    pub c_s: MatCs,
    pub dt: f64,
}

/// Continuous-time matrices at operating speed `vx`.
pub fn continuous(p: &VehicleParams, vx: f64) -> (MatA, MatB) {
    let v = vx.max(V_EPS);
    let (m, iz) = (p.mass, p.yaw_inertia);
    let (cf, cr) = (p.cornering_stiffness_front, p.cornering_stiffness_rear);
    let (a, b) = (p.dist_cg_front, p.dist_cg_rear);
    let mut ac = MatA::zeros();
    ac[(1, 1)] = -(cf + cr) / (m * v);
    ac[(1, 2)] = -(a * cf - b * cr) / (m * v) - v;
    ac[(2, 1)] = -(a * cf - b * cr) / (iz * v);
    ac[(2, 2)] = -(a * a * cf + b * b * cr) / (iz * v);
    ac[(3, 2)] = 1.0;
    ac[(4, 0)] = 1.0;
    ac[(5, 1)] = 1.0;
    ac[(5, 3)] = v;
    let mut bc = MatB::zeros();
    bc[(0, 0)] = 1.0 / m;
    bc[(1, 1)] = cf / m;
    bc[(2, 1)] = a * cf / iz;
    (ac, bc)
}

/// Forward-Euler discretization at `dt`.
pub fn linearize(p: &VehicleParams, operating_vx: f64, dt: f64) -> LinearModel {
    let (ac, bc) = continuous(p, operating_vx);
    let mut c = MatC::zeros();
    c[(0, 0)] = 1.0;
    c[(1, 3)] = 1.0;
    c[(2, 5)] = 1.0;
    let mut c_s = MatCs::zeros();
    c_s[(0, 0)] = 1.0;
    c_s[(1, 5)] = 1.0;
    LinearModel { a: MatA::identity() + ac * dt, b: bc * dt, c, c_s, dt }
}

impl LinearModel {
    pub fn step(&self, x: &State, u: &Input) -> State {
        self.a * x + self.b * u
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equilibrium_and_force() {
        let p = VehicleParams::default();
        let m = linearize(&p, 20.0, 0.05);
        let x = State::from_column_slice(&[20.0, 0.0, 0.0, 0.0, 0.0, 1.5]);
        let x1 = m.step(&x, &Input::zeros());
        assert_eq!(x1[0], 20.0);
        assert_eq!(x1[5], 1.5);
        assert!((x1[4] - 1.0).abs() < 1e-12);
        let x1 = m.step(&x, &Input::new(p.mass, 0.0));
        assert!((x1[0] - 20.05).abs() < 1e-12);
    }

    #[test]
    fn low_speed_is_clamped() {
        let p = VehicleParams::default();
        assert_eq!(linearize(&p, 0.0, 0.05).a, linearize(&p, V_EPS, 0.05).a);
    }

    #[test]
    fn steering_matches_fine_integration() {
        // RK4 on the continuous model with a tiny step as the reference.
        let p = VehicleParams::default();
        let vx = 20.0;
        let dt = 0.005;
        let m = linearize(&p, vx, dt);
        let (ac, bc) = continuous(&p, vx);
        let u = Input::new(0.0, 0.02);
        let f = |x: &State| ac * x + bc * u;
        let mut xe = State::from_column_slice(&[vx, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let mut xr = xe;
        let h = dt / 20.0;
        for _ in 0..200 {
            xe = m.step(&xe, &u);
            for _ in 0..20 {
                let k1 = f(&xr);
                let k2 = f(&(xr + k1 * (h / 2.0)));
                let k3 = f(&(xr + k2 * (h / 2.0)));
                let k4 = f(&(xr + k3 * h));
                xr += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            }
        }
        assert!(xe[2] > 0.0 && xe[5] > 0.0);
        assert!((xe - xr).abs().max() < 1e-3 * (1.0 + xr.abs().max()), "{xe} vs {xr}");
    }
}
