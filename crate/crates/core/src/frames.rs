//! Rotation matrices, Euler-angle conventions and the launch-frame change.
//!
//! All matrices are passive (coordinate transform) rotations. The body frame
//! is reached from the launch frame by `R_y(θ)`, then `R_x(ψ)`, then `R_z(φ)`,
//! so `L_bR = R_z(φ) R_x(ψ) R_y(θ)` and the body symmetry axis expressed in
//! the launch frame is the third row of `L_bR`:
//! `(sin θ cos ψ, −sin ψ, cos θ cos ψ)`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::model::{Costate, State, VehicleParams};

/// Minimum distance of a transformed yaw from `±π/2` for the Euler map to be
/// considered invertible.
pub const GIMBAL_MARGIN: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrameError {
    #[error("velocity vector has zero modulus")]
    ZeroVelocity,
    #[error("transformed yaw {psi} rad is within the gimbal-lock margin")]
    GimbalLock { psi: f64 },
    #[error("no frame rotation makes the transformed terminal yaws opposite")]
    NoSolution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

/// Orthonormal 3×3 direction-cosine matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation3(Matrix3<f64>);

impl Rotation3 {
    pub fn identity() -> Self {
        Rotation3(Matrix3::identity())
    }

    /// Wraps a matrix without checking orthogonality.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation3(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation3(self.0.transpose())
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// `max |RᵀR − I|` entrywise.
    pub fn orthogonality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity()).abs().max()
    }

    pub fn determinant(&self) -> f64 {
        self.0.determinant()
    }
}

impl std::ops::Mul for Rotation3 {
    type Output = Rotation3;

    fn mul(self, rhs: Rotation3) -> Rotation3 {
        Rotation3(self.0 * rhs.0)
    }
}

/// Passive single-axis rotation by `angle` radians.
pub fn axis_rotation(axis: Axis, angle: f64) -> Rotation3 {
    let (s, c) = angle.sin_cos();
    let m = match axis {
        Axis::X => Matrix3::new(1.0, 0.0, 0.0, 0.0, c, s, 0.0, -s, c),
        Axis::Y => Matrix3::new(c, 0.0, -s, 0.0, 1.0, 0.0, s, 0.0, c),
        Axis::Z => Matrix3::new(c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0),
    };
    Rotation3(m)
}

/// Wraps an angle into `(−π, π]`.
pub fn normalize_angle(angle: f64) -> f64 {
    let mut a = angle % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// The representative of `angle` modulo 2π closest to `reference`.
pub fn unwrap_near(angle: f64, reference: f64) -> f64 {
    reference + normalize_angle(angle - reference)
}

/// Pitch, yaw and roll of the body frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EulerAngles {
    pub theta: f64,
    pub psi: f64,
    pub phi: f64,
}

impl EulerAngles {
    pub fn new(theta: f64, psi: f64, phi: f64) -> Self {
        EulerAngles { theta, psi, phi }
    }

    pub fn normalized(&self) -> Self {
        EulerAngles {
            theta: normalize_angle(self.theta),
            psi: normalize_angle(self.psi),
            phi: normalize_angle(self.phi),
        }
    }

    /// Transfer matrix `L_bR` from the reference frame to the body frame.
    pub fn body_from_reference(&self) -> Rotation3 {
        axis_rotation(Axis::Z, self.phi) * axis_rotation(Axis::X, self.psi) * axis_rotation(Axis::Y, self.theta)
    }

    /// Re-extracts the angles from a transfer matrix `R_z(φ) R_x(ψ) R_y(θ)`,
    /// taking the principal branch `cos ψ ≥ 0`.
    pub fn from_body_matrix(l: &Rotation3) -> Self {
        let m = l.matrix();
        let psi = (-m[(2, 1)]).clamp(-1.0, 1.0).asin();
        let theta = m[(2, 0)].atan2(m[(2, 2)]);
        let phi = m[(0, 1)].atan2(m[(1, 1)]);
        EulerAngles { theta, psi, phi }.normalized()
    }

    /// The other Euler triple describing the same attitude, on the opposite
    /// side of the yaw singularity.
    pub fn alternate_branch(&self) -> Self {
        EulerAngles {
            theta: self.theta + PI,
            psi: PI - self.psi,
            phi: self.phi + PI,
        }
        .normalized()
    }

    /// Matrix `E` mapping Euler rates `(θ̇, ψ̇, φ̇)` to body rates
    /// `(ω_x, ω_y, ω_z)`.
    pub fn rate_matrix(&self) -> Matrix3<f64> {
        let (sp, cp) = self.phi.sin_cos();
        let (sy, cy) = self.psi.sin_cos();
        Matrix3::new(sp * cy, cp, 0.0, cp * cy, -sp, 0.0, -sy, 0.0, 1.0)
    }
}

/// Unit body symmetry axis in the launch frame.
pub fn body_axis(e: &EulerAngles) -> Vector3<f64> {
    let (st, ct) = e.theta.sin_cos();
    let (sy, cy) = e.psi.sin_cos();
    Vector3::new(st * cy, -sy, ct * cy)
}

/// Polar and flight-path description of a velocity vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityAngles {
    pub speed: f64,
    pub theta_v: f64,
    pub psi_v: f64,
    /// Flight-path angle, `cos ξ = v_x / v`.
    pub xi: f64,
    /// Bank angle, `tan κ = −v_y / v_z`.
    pub kappa: f64,
}

impl VelocityAngles {
    pub fn to_velocity(&self) -> Vector3<f64> {
        let e = EulerAngles::new(self.theta_v, self.psi_v, 0.0);
        body_axis(&e) * self.speed
    }
}

pub fn velocity_to_angles(v: &Vector3<f64>) -> Result<VelocityAngles, FrameError> {
    let speed = v.norm();
    if speed == 0.0 || !speed.is_finite() {
        return Err(FrameError::ZeroVelocity);
    }
    let psi_v = (-v.y / speed).clamp(-1.0, 1.0).asin();
    let theta_v = v.x.atan2(v.z);
    let xi = (v.x / speed).clamp(-1.0, 1.0).acos();
    // (v_y, v_z) = v sin ξ (sin κ, −cos κ)
    let kappa = if v.y == 0.0 && v.z == 0.0 { 0.0 } else { v.y.atan2(-v.z) };
    Ok(VelocityAngles { speed, theta_v, psi_v, xi, kappa })
}

/// Launch-frame rotation `L_R'R = R_x(β) · R_first(α)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameChange {
    pub alpha: f64,
    pub beta: f64,
    /// Axis of the first rotation; `Y` unless overridden.
    pub first_axis: Axis,
}

impl FrameChange {
    pub fn new(alpha: f64, beta: f64) -> Self {
        FrameChange { alpha, beta, first_axis: Axis::Y }
    }

    pub fn identity() -> Self {
        FrameChange::new(0.0, 0.0)
    }

    pub fn is_identity(&self) -> bool {
        self.alpha == 0.0 && self.beta == 0.0
    }

    pub fn matrix(&self) -> Rotation3 {
        axis_rotation(Axis::X, self.beta) * axis_rotation(self.first_axis, self.alpha)
    }

    /// Maps `(x, p)` from the original launch frame to the rotated one.
    pub fn apply(&self, x: &State, p: &Costate) -> Result<(State, Costate), FrameError> {
        transform_extremal(&self.matrix(), x, p)
    }

    /// Maps `(x', p')` from the rotated frame back to the original one.
    pub fn invert(&self, x: &State, p: &Costate) -> Result<(State, Costate), FrameError> {
        transform_extremal(&self.matrix().transpose(), x, p)
    }

    pub fn apply_attitude(&self, e: &EulerAngles) -> Result<EulerAngles, FrameError> {
        map_attitude(&self.matrix(), e)
    }

    pub fn invert_attitude(&self, e: &EulerAngles) -> Result<EulerAngles, FrameError> {
        map_attitude(&self.matrix().transpose(), e)
    }

    /// Vehicle parameters with gravity expressed in the rotated frame.
    pub fn apply_vehicle(&self, vp: &VehicleParams) -> VehicleParams {
        VehicleParams { gravity: self.matrix().apply(&vp.gravity), ..*vp }
    }
}

/// `apply_frame_change` with a plain `(α, β)` pair.
pub fn apply_frame_change(fc: &FrameChange, x: &State, p: &Costate) -> Result<(State, Costate), FrameError> {
    fc.apply(x, p)
}

/// Euler angles of the body with respect to a reference frame rotated by `l`
/// (`l` maps old-frame coordinates to new-frame coordinates).
pub fn map_attitude(l: &Rotation3, e: &EulerAngles) -> Result<EulerAngles, FrameError> {
    let lb = e.body_from_reference() * l.transpose();
    let mut out = EulerAngles::from_body_matrix(&lb);
    // stay on the yaw branch of the input
    if e.psi.cos() < 0.0 {
        out = out.alternate_branch();
    }
    if out.psi.cos().abs() < GIMBAL_MARGIN.sin() {
        return Err(FrameError::GimbalLock { psi: out.psi });
    }
    Ok(out)
}

/// Jacobian of the attitude map `e ↦ e'` for a frame rotation; body rates are
/// frame independent, so `E(e') ė' = E(e) ė`.
pub fn attitude_map_jacobian(e: &EulerAngles, e_new: &EulerAngles) -> Option<Matrix3<f64>> {
    let inv = e_new.rate_matrix().try_inverse()?;
    Some(inv * e.rate_matrix())
}

fn transform_extremal(l: &Rotation3, x: &State, p: &Costate) -> Result<(State, Costate), FrameError> {
    let e = x.attitude();
    let e_new = map_attitude(l, &e)?;
    let jac = attitude_map_jacobian(&e, &e_new).ok_or(FrameError::GimbalLock { psi: e.psi })?;
    let jac_inv_t = jac
        .try_inverse()
        .ok_or(FrameError::GimbalLock { psi: e.psi })?
        .transpose();

    let v = l.apply(&x.velocity());
    let pv = l.apply(&p.velocity());
    let patt = jac_inv_t * Vector3::new(p.theta, p.psi, p.phi);

    let x_new = State {
        vx: v.x,
        vy: v.y,
        vz: v.z,
        theta: e_new.theta,
        psi: e_new.psi,
        phi: e_new.phi,
        omega_x: x.omega_x,
        omega_y: x.omega_y,
    };
    let p_new = Costate {
        vx: pv.x,
        vy: pv.y,
        vz: pv.z,
        theta: patt.x,
        psi: patt.y,
        phi: patt.z,
        omega_x: p.omega_x,
        omega_y: p.omega_y,
    };
    Ok((x_new, p_new))
}

/// Rotation about x that makes the transformed initial and final yaw angles
/// opposite, for a given first rotation `alpha`.
///
/// With `u = R_y(α) e`, the transformed yaw is `−asin(cos β u_y + sin β u_z)`,
/// so opposite yaws reduce to `cos β (u0_y + uf_y) + sin β (u0_z + uf_z) = 0`.
/// Of the two roots the one closest to zero is returned.
pub fn choose_beta(alpha: f64, initial: &EulerAngles, terminal: &EulerAngles) -> Result<f64, FrameError> {
    choose_beta_about(alpha, Axis::Y, initial, terminal)
}

pub fn choose_beta_about(
    alpha: f64,
    first_axis: Axis,
    initial: &EulerAngles,
    terminal: &EulerAngles,
) -> Result<f64, FrameError> {
    let r = axis_rotation(first_axis, alpha);
    let u0 = r.apply(&body_axis(initial));
    let uf = r.apply(&body_axis(terminal));
    let sy = u0.y + uf.y;
    let sz = u0.z + uf.z;
    if !(sy.is_finite() && sz.is_finite()) {
        return Err(FrameError::NoSolution);
    }
    if sy.abs() < 1e-15 && sz.abs() < 1e-15 {
        // every β works
        return Ok(0.0);
    }
    let b1 = normalize_angle((-sy).atan2(sz));
    let b2 = normalize_angle(b1 + PI);
    Ok(if b1.abs() <= b2.abs() { b1 } else { b2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_rotation_is_identity() {
        assert_eq!(axis_rotation(Axis::Y, 0.0), Rotation3::identity());
    }

    #[test]
    fn half_turn_about_x() {
        let v = axis_rotation(Axis::X, PI).apply(&Vector3::new(0.0, 1.0, 0.0));
        assert_abs_diff_eq!(v, Vector3::new(0.0, -1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn composed_rotation_is_proper() {
        let r = axis_rotation(Axis::Z, 0.1) * axis_rotation(Axis::X, 0.2) * axis_rotation(Axis::Y, 0.3);
        assert!(r.orthogonality_error() < 1e-12);
        assert_abs_diff_eq!(r.determinant(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn third_row_is_body_axis() {
        let e = EulerAngles::new(0.3, 0.2, -0.7);
        let m = *e.body_from_reference().matrix();
        let row = Vector3::new(m[(2, 0)], m[(2, 1)], m[(2, 2)]);
        assert_abs_diff_eq!(row, body_axis(&e), epsilon = 1e-15);
    }

    #[test]
    fn body_axis_examples() {
        assert_abs_diff_eq!(body_axis(&EulerAngles::default()), Vector3::z(), epsilon = 1e-15);
        assert_abs_diff_eq!(
            body_axis(&EulerAngles::new(PI / 2.0, 0.0, 0.0)),
            Vector3::x(),
            epsilon = 1e-15
        );
        let e = body_axis(&EulerAngles::new(0.3, 0.2, 0.0));
        assert_abs_diff_eq!(e.x, 0.3f64.sin() * 0.2f64.cos(), epsilon = 1e-15);
        assert_abs_diff_eq!(e.y, -(0.2f64.sin()), epsilon = 1e-15);
        assert_abs_diff_eq!(e.z, 0.3f64.cos() * 0.2f64.cos(), epsilon = 1e-15);
        assert_abs_diff_eq!(e.norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn velocity_angle_examples() {
        let a = velocity_to_angles(&Vector3::new(0.0, 0.0, 100.0)).unwrap();
        assert_eq!((a.theta_v, a.psi_v), (0.0, 0.0));
        let a = velocity_to_angles(&Vector3::new(100.0, 0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(a.theta_v, PI / 2.0, epsilon = 1e-15);
        assert_eq!(a.psi_v, 0.0);
        assert_eq!(velocity_to_angles(&Vector3::zeros()), Err(FrameError::ZeroVelocity));
    }

    #[test]
    fn velocity_angles_round_trip() {
        let v = Vector3::new(50.0, -30.0, 60.0);
        let a = velocity_to_angles(&v).unwrap();
        assert!((a.to_velocity() - v).norm() < 1e-12 * v.norm());
        // flight-path description
        let s = a.speed;
        let w = Vector3::new(
            s * a.xi.cos(),
            s * a.xi.sin() * a.kappa.sin(),
            -s * a.xi.sin() * a.kappa.cos(),
        );
        assert!((w - v).norm() < 1e-12 * s);
    }

    #[test]
    fn euler_extraction_inverts_body_matrix() {
        let e = EulerAngles::new(2.5, -1.2, 0.4);
        let back = EulerAngles::from_body_matrix(&e.body_from_reference());
        assert_abs_diff_eq!(back.theta, e.theta, epsilon = 1e-12);
        assert_abs_diff_eq!(back.psi, e.psi, epsilon = 1e-12);
        assert_abs_diff_eq!(back.phi, e.phi, epsilon = 1e-12);
    }

    #[test]
    fn normalization_range() {
        assert_abs_diff_eq!(normalize_angle(-PI), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(normalize_angle(3.0 * PI), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(normalize_angle(7.0), 7.0 - 2.0 * PI, epsilon = 1e-12);
    }

    #[test]
    fn rate_matrix_matches_finite_differences() {
        // body rates from numerically differentiated L_bR: Ω = −L̇ Lᵀ (passive)
        let e = EulerAngles::new(0.4, 0.3, -0.5);
        let rates = Vector3::new(0.2, -0.1, 0.3);
        let h = 1e-6;
        let ep = EulerAngles::new(e.theta + h * rates.x, e.psi + h * rates.y, e.phi + h * rates.z);
        let em = EulerAngles::new(e.theta - h * rates.x, e.psi - h * rates.y, e.phi - h * rates.z);
        let ldot = (ep.body_from_reference().matrix() - em.body_from_reference().matrix()) / (2.0 * h);
        let omega = -ldot * e.body_from_reference().matrix().transpose();
        let w = Vector3::new(omega[(2, 1)], omega[(0, 2)], omega[(1, 0)]);
        let expected = e.rate_matrix() * rates;
        assert!((w - expected).norm() < 1e-8, "{w} vs {expected}");
    }

    #[test]
    fn identity_frame_change_is_identity() {
        let x = State {
            vx: 10.0,
            vy: -2.0,
            vz: 30.0,
            theta: 0.3,
            psi: 0.1,
            phi: -0.2,
            omega_x: 0.01,
            omega_y: -0.02,
        };
        let p = Costate {
            vx: 0.1,
            vy: 0.2,
            vz: -0.3,
            theta: 1.0,
            psi: -2.0,
            phi: 0.5,
            omega_x: 3.0,
            omega_y: 4.0,
        };
        let (x2, p2) = apply_frame_change(&FrameChange::identity(), &x, &p).unwrap();
        for (a, b) in x.to_array().iter().zip(x2.to_array()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-14);
        }
        for (a, b) in p.to_array().iter().zip(p2.to_array()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn quarter_turn_velocity() {
        let fc = FrameChange::new(PI / 2.0, 0.0);
        let x = State { vx: 1.0, ..State::default() };
        let (x2, _) = fc.apply(&x, &Costate::default()).unwrap();
        // R_y(π/2) (1,0,0) = (cos, 0, sin) = (0, 0, 1)
        assert_abs_diff_eq!(x2.velocity(), Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-15);
    }

    #[test]
    fn beta_trivial_cases() {
        let z = EulerAngles::default();
        assert_eq!(choose_beta(0.0, &z, &z).unwrap(), 0.0);
        let a = EulerAngles::new(0.3, 0.2, 0.0);
        let b = EulerAngles::new(0.3, -0.2, 0.0);
        assert_abs_diff_eq!(choose_beta(0.0, &a, &b).unwrap(), 0.0, epsilon = 1e-15);
    }
}
