//! Closed-form solution of the order-zero problem.
//!
//! The attitude is treated as an instantaneous control: `v̇ = a e + g`, and
//! `v(t_f)` must become parallel to the unit target direction `w` as fast as
//! possible. The optimal thrust direction is constant and orthogonal to `w`.

use std::f64::consts::PI;

use nalgebra::Vector3;
use thiserror::Error;

use crate::frames::{body_axis, normalize_angle, EulerAngles};
use crate::model::{Costate, State, P0};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Ocp0Error {
    #[error("no non-negative final time aligns the velocity with the target direction")]
    Infeasible,
    #[error("thrust cannot dominate the gravity component transverse to the target (a1 = {a1:e})")]
    DegenerateThrust { a1: f64 },
    #[error("target direction must be a unit vector")]
    BadTarget,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ocp0Problem {
    pub v0: Vector3<f64>,
    /// Unit target velocity direction.
    pub w: Vector3<f64>,
    pub a: f64,
    pub g: Vector3<f64>,
    /// Initial and final yaw used to pick the Euler branch.
    pub psi0: f64,
    pub psif: f64,
    pub phi_star: f64,
}

impl Ocp0Problem {
    pub fn new(v0: Vector3<f64>, w: Vector3<f64>, a: f64, g: Vector3<f64>) -> Self {
        Ocp0Problem { v0, w, a, g, psi0: 0.0, psif: 0.0, phi_star: 0.0 }
    }

    /// Coefficients `(a1, a2, a3)` of the final-time quadratic.
    pub fn quadratic(&self) -> (f64, f64, f64) {
        let w = self.w;
        let gw = self.g.dot(&w);
        let vw = self.v0.dot(&w);
        let a1 = self.a * self.a - (gw * w - self.g).norm_squared();
        let a2 = 2.0 * (vw * gw - self.v0.dot(&self.g));
        let a3 = -(vw * w - self.v0).norm_squared();
        (a1, a2, a3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ocp0Solution {
    pub e_star: Vector3<f64>,
    pub t_f: f64,
    pub p_v: Vector3<f64>,
    pub theta: f64,
    pub psi: f64,
    pub phi: f64,
}

impl Ocp0Solution {
    pub fn attitude(&self) -> EulerAngles {
        EulerAngles::new(self.theta, self.psi, self.phi)
    }

    /// Velocity at `t` under the constant optimal thrust.
    pub fn velocity_at(&self, prob: &Ocp0Problem, t: f64) -> Vector3<f64> {
        prob.v0 + (prob.a * self.e_star + prob.g) * t
    }
}

const A1_EPS: f64 = 1e-12;

pub fn solve_ocp0(prob: &Ocp0Problem) -> Result<Ocp0Solution, Ocp0Error> {
    if (prob.w.norm() - 1.0).abs() > 1e-12 {
        return Err(Ocp0Error::BadTarget);
    }
    let (a1, a2, a3) = prob.quadratic();
    let scale = prob.a * prob.a;
    if a1.abs() <= A1_EPS * scale {
        return Err(Ocp0Error::DegenerateThrust { a1 });
    }
    let disc = a2 * a2 - 4.0 * a1 * a3;
    if disc < 0.0 {
        return Err(Ocp0Error::Infeasible);
    }
    let sq = disc.sqrt();
    let gw = prob.g.dot(&prob.w);
    let vw = prob.v0.dot(&prob.w);

    // numerically stable pair of roots
    let q = -0.5 * (a2 + a2.signum() * sq);
    let mut roots = if q != 0.0 { vec![q / a1, a3 / q] } else { vec![0.0, -a2 / a1] };
    roots.retain(|t| t.is_finite() && *t >= -1e-12);
    roots.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let t_f = roots
        .into_iter()
        .map(|t| t.max(0.0))
        .find(|&t| vw + gw * t >= -1e-9 * (1.0 + prob.v0.norm()))
        .ok_or(Ocp0Error::Infeasible)?;

    let e_star = if t_f > 0.0 {
        let k = vw + gw * t_f;
        let e = ((k * prob.w - prob.v0) / t_f - prob.g) / prob.a;
        // the quadratic pins ‖e‖ = 1; renormalize the rounding away
        e / e.norm()
    } else {
        // already aligned: any thrust orthogonal to w, preferably against gravity
        let g_perp = gw * prob.w - prob.g;
        if g_perp.norm() > 1e-12 {
            g_perp.normalize()
        } else {
            prob.w.cross(&Vector3::x()).try_normalize(1e-12).unwrap_or_else(|| prob.w.cross(&Vector3::y()).normalize())
        }
    };
    let p_v = (-P0 / (prob.a + e_star.dot(&prob.g))) * e_star;
    let (theta, psi) = extract_euler(&e_star, prob.psi0, prob.psif);
    Ok(Ocp0Solution { e_star, t_f, p_v, theta, psi, phi: prob.phi_star })
}

/// Pitch and yaw reproducing a unit body axis, picking the branch closest to
/// the given initial and final yaws.
pub fn extract_euler(e: &Vector3<f64>, psi0: f64, psif: f64) -> (f64, f64) {
    let principal = (e.x.atan2(e.z), (-e.y).clamp(-1.0, 1.0).asin());
    let alternate = (
        normalize_angle((-e.x).atan2(-e.z)),
        -e.y.signum() * (PI - e.y.abs().clamp(0.0, 1.0).asin()),
    );
    let cost = |psi: f64| (psi0 - psi).abs() + (psif - psi).abs();
    if cost(alternate.1) < cost(principal.1) {
        alternate
    } else {
        principal
    }
}

/// Extremal of the order-zero problem seen in the full state space: attitude
/// frozen at the optimal thrust direction, zero rates and attitude costates.
pub fn embed_in_mtcp(sol: &Ocp0Solution, v0: &Vector3<f64>, phi_star: f64) -> (State, Costate) {
    let x = State {
        vx: v0.x,
        vy: v0.y,
        vz: v0.z,
        theta: sol.theta,
        psi: sol.psi,
        phi: phi_star,
        omega_x: 0.0,
        omega_y: 0.0,
    };
    let p = Costate { vx: sol.p_v.x, vy: sol.p_v.y, vz: sol.p_v.z, ..Costate::default() };
    (x, p)
}

/// Unit body axis at the target attitude.
pub fn target_direction(theta_f: f64, psi_f: f64) -> Vector3<f64> {
    body_axis(&EulerAngles::new(theta_f, psi_f, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn already_aligned() {
        let prob = Ocp0Problem::new(
            Vector3::new(0.0, 0.0, 100.0),
            Vector3::z(),
            18.0,
            Vector3::new(-9.80665, 0.0, 0.0),
        );
        let (_, a2, a3) = prob.quadratic();
        assert_eq!((a2, a3), (0.0, 0.0));
        let sol = solve_ocp0(&prob).unwrap();
        assert_eq!(sol.t_f, 0.0);
        assert_abs_diff_eq!(sol.e_star.norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn perpendicular_velocity_cancellation() {
        let prob = Ocp0Problem::new(Vector3::new(100.0, 0.0, 0.0), Vector3::z(), 18.0, Vector3::zeros());
        let (a1, a2, a3) = prob.quadratic();
        assert_abs_diff_eq!(a1, 324.0, epsilon = 1e-12);
        assert_eq!(a2, 0.0);
        assert_abs_diff_eq!(a3, -1e4, epsilon = 1e-9);
        let sol = solve_ocp0(&prob).unwrap();
        assert_abs_diff_eq!(sol.t_f, 100.0 / 18.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.e_star, Vector3::new(-1.0, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn thrust_is_orthogonal_to_target() {
        let prob = Ocp0Problem::new(
            Vector3::new(200.0, 0.0, 50.0),
            Vector3::z(),
            25.0,
            Vector3::new(-9.80665, 0.0, 0.0),
        );
        let sol = solve_ocp0(&prob).unwrap();
        assert!(sol.e_star.dot(&prob.w).abs() < 1e-12);
        let vf = sol.velocity_at(&prob, sol.t_f);
        assert!(vf.cross(&prob.w).norm() < 1e-8 * vf.norm());
        assert!(vf.dot(&prob.w) > 0.0);
    }

    #[test]
    fn degenerate_thrust() {
        let prob = Ocp0Problem::new(Vector3::new(10.0, 0.0, 0.0), Vector3::z(), 9.80665, Vector3::new(-9.80665, 0.0, 0.0));
        assert!(matches!(solve_ocp0(&prob), Err(Ocp0Error::DegenerateThrust { .. })));
    }

    #[test]
    fn euler_examples() {
        assert_eq!(extract_euler(&Vector3::z(), 0.0, 0.0), (0.0, 0.0));
        let (t, p) = extract_euler(&Vector3::x(), 0.0, 0.0);
        assert_abs_diff_eq!(t, PI / 2.0, epsilon = 1e-15);
        assert_eq!(p, 0.0);
    }

    #[test]
    fn alternate_branch_selected_near_large_yaw() {
        let ey: f64 = -0.95;
        let e = Vector3::new(0.0, ey, (1.0 - ey * ey).sqrt());
        let hundred = 100f64.to_radians();
        let (t, p) = extract_euler(&e, hundred, hundred);
        // both branches and the selection functional, evaluated directly
        let principal = (-ey).asin();
        let alternate = PI - (-ey).asin();
        assert!(2.0 * (hundred - alternate).abs() < 2.0 * (hundred - principal).abs());
        assert_abs_diff_eq!(p, alternate, epsilon = 1e-12);
        assert_abs_diff_eq!(p.to_degrees(), 108.19, epsilon = 0.01);
        assert_abs_diff_eq!(body_axis(&EulerAngles::new(t, p, 0.0)), e, epsilon = 1e-12);
    }

    #[test]
    fn embedding_blocks() {
        let prob = Ocp0Problem::new(Vector3::new(100.0, 0.0, 0.0), Vector3::z(), 18.0, Vector3::zeros());
        let sol = solve_ocp0(&prob).unwrap();
        let (x, p) = embed_in_mtcp(&sol, &prob.v0, 0.0);
        assert_eq!((x.omega_x, x.omega_y, x.phi), (0.0, 0.0, 0.0));
        assert_eq!([p.theta, p.psi, p.phi, p.omega_x, p.omega_y], [0.0; 5]);
        assert_abs_diff_eq!(p.velocity(), sol.p_v, epsilon = 0.0);
    }
}
