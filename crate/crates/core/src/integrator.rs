//! Fixed-step RK4 propagation of the extremal flow on normalized time.
//!
//! Time is `t = τ t_f` with `τ ∈ [0, 1]`, so the integrated field is
//! `t_f · (ẋ, ṗ)`. The control is re-evaluated from the costate at every
//! stage, and the singular-limit field is used pointwise near gimbal lock.
//!
//! At `λ4 = 1` the control jumps where the switching function changes side.
//! Steps containing such a switch are split at the switch time, located by
//! bisection, so the flow stays smooth in the initial data. Below `λ4 = 1`
//! the same is done where a control component enters or leaves saturation.

use thiserror::Error;

use nalgebra::Vector2;

use crate::model::{
    bang_control_on_branch, extremal_field, extremal_field_with, switching_function, unsaturated_control, Control,
    Costate, HomotopyState, State, VehicleParams,
};

pub const DEFAULT_STEPS: usize = 512;
pub const MIN_STEPS: usize = 16;
const MAX_SWITCHES_PER_STEP: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegratorError {
    #[error("non-finite extremal at τ = {tau}")]
    NonFinite { tau: f64 },
    #[error("final time must be positive, got {0}")]
    BadFinalTime(f64),
    #[error("at least {MIN_STEPS} steps are required, got {0}")]
    TooFewSteps(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtremalPoint {
    pub tau: f64,
    pub x: State,
    pub p: Costate,
}

impl ExtremalPoint {
    fn pack(&self) -> [f64; 16] {
        let mut y = [0.0; 16];
        y[..8].copy_from_slice(&self.x.to_array());
        y[8..].copy_from_slice(&self.p.to_array());
        y
    }

    fn unpack(tau: f64, y: &[f64; 16]) -> Self {
        ExtremalPoint { tau, x: State::from_array(&y[..8]), p: Costate::from_array(&y[8..]) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t_f: f64,
    pub nodes: Vec<ExtremalPoint>,
    /// Control at each node.
    pub controls: Vec<Control>,
}

impl Trajectory {
    pub fn time(&self, i: usize) -> f64 {
        self.nodes[i].tau * self.t_f
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// One classical RK4 step of `dy/dt = f(t, y)`.
pub fn rk4_step<const N: usize, F>(f: &mut F, t: f64, y: &[f64; N], h: f64) -> [f64; N]
where
    F: FnMut(f64, &[f64; N]) -> [f64; N],
{
    let axpy = |y: &[f64; N], k: &[f64; N], s: f64| {
        let mut out = *y;
        for i in 0..N {
            out[i] += s * k[i];
        }
        out
    };
    let k1 = f(t, y);
    let k2 = f(t + 0.5 * h, &axpy(y, &k1, 0.5 * h));
    let k3 = f(t + 0.5 * h, &axpy(y, &k2, 0.5 * h));
    let k4 = f(t + h, &axpy(y, &k3, h));
    let mut out = *y;
    for i in 0..N {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Integrates `dy/dt = f(t, y)` from `t0` to `t1` in `n` equal steps.
pub fn rk4_fixed<const N: usize, F>(mut f: F, t0: f64, t1: f64, y0: [f64; N], n: usize) -> [f64; N]
where
    F: FnMut(f64, &[f64; N]) -> [f64; N],
{
    let h = (t1 - t0) / n as f64;
    let mut y = y0;
    for i in 0..n {
        y = rk4_step(&mut f, t0 + i as f64 * h, &y, h);
    }
    y
}

pub fn propagate(
    x0: &State,
    p0: &Costate,
    t_f: f64,
    vp: &VehicleParams,
    h: &HomotopyState,
    n_steps: usize,
) -> Result<Trajectory, IntegratorError> {
    if !(t_f > 0.0 && t_f.is_finite()) {
        return Err(IntegratorError::BadFinalTime(t_f));
    }
    if n_steps < MIN_STEPS {
        return Err(IntegratorError::TooFewSteps(n_steps));
    }
    let bang = h.lambda4 >= 1.0;

    let start = ExtremalPoint { tau: 0.0, x: *x0, p: *p0 };
    if !(x0.is_finite() && p0.is_finite()) {
        return Err(IntegratorError::NonFinite { tau: 0.0 });
    }
    let dtau = 1.0 / n_steps as f64;
    let mut nodes = Vec::with_capacity(n_steps + 1);
    let mut controls = Vec::with_capacity(n_steps + 1);
    nodes.push(start);
    controls.push(extremal_field(x0, p0, vp, h).0);
    let mut y = start.pack();
    for i in 0..n_steps {
        y = if bang { bang_step(&y, dtau, t_f, vp, h.lambda3) } else { saturated_step(&y, dtau, t_f, vp, h) };
        let tau = if i + 1 == n_steps { 1.0 } else { (i + 1) as f64 * dtau };
        if y.iter().any(|c| !c.is_finite()) {
            return Err(IntegratorError::NonFinite { tau });
        }
        let node = ExtremalPoint::unpack(tau, &y);
        controls.push(extremal_field(&node.x, &node.p, vp, h).0);
        nodes.push(node);
    }
    Ok(Trajectory { t_f, nodes, controls })
}

fn scaled_rates(xd: &State, pd: &Costate, t_f: f64) -> [f64; 16] {
    let mut out = [0.0; 16];
    for (o, v) in out.iter_mut().zip(xd.to_array().into_iter().chain(pd.to_array())) {
        *o = t_f * v;
    }
    out
}

/// One RK4 step of the bang flow, split at every change of side of the
/// switching function with respect to the control at the step start.
fn bang_step(y0: &[f64; 16], dtau: f64, t_f: f64, vp: &VehicleParams, lambda3: f64) -> [f64; 16] {
    let costate = |y: &[f64; 16]| Costate::from_array(&y[8..]);
    let phi0 = switching_function(&costate(y0), vp);
    let mut reference = if phi0.norm() > 0.0 { phi0.normalize() } else { Vector2::x() };
    let sub = |y: &[f64; 16], d: f64, r: &Vector2<f64>| {
        let mut f = |_: f64, y: &[f64; 16]| {
            let x = State::from_array(&y[..8]);
            let p = costate(y);
            let u = bang_control_on_branch(&p, vp, r);
            let (xd, pd) = extremal_field_with(&x, &p, &u, vp, lambda3);
            scaled_rates(&xd, &pd, t_f)
        };
        rk4_step(&mut f, 0.0, y, d)
    };
    let side = |y: &[f64; 16], r: &Vector2<f64>| switching_function(&costate(y), vp).dot(r);

    let mut y = *y0;
    let mut remaining = dtau;
    for _ in 0..MAX_SWITCHES_PER_STEP {
        let end = sub(&y, remaining, &reference);
        if side(&end, &reference) >= 0.0 || end.iter().any(|c| !c.is_finite()) {
            return end;
        }
        let (mut lo, mut hi) = (0.0, remaining);
        loop {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if side(&sub(&y, mid, &reference), &reference) >= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        y = sub(&y, hi, &reference);
        remaining -= hi;
        reference = -reference;
        if remaining <= 0.0 {
            return y;
        }
    }
    sub(&y, remaining, &reference)
}

/// Saturation pattern of the control: `0` for a free component, `±1` for a
/// component held at a bound.
type Pattern = [i8; 2];

fn pattern_of(r: &Vector2<f64>) -> Pattern {
    let side = |v: f64| if v > 1.0 { 1 } else if v < -1.0 { -1 } else { 0 };
    [side(r.x), side(r.y)]
}

/// One RK4 step of the relaxed flow with the saturation pattern held fixed,
/// split wherever the pattern of the integrated costate changes.
fn saturated_step(y0: &[f64; 16], dtau: f64, t_f: f64, vp: &VehicleParams, h: &HomotopyState) -> [f64; 16] {
    let costate = |y: &[f64; 16]| Costate::from_array(&y[8..]);
    let ratio = |y: &[f64; 16]| unsaturated_control(&costate(y), vp, h).unwrap_or_default();
    let sub = |y: &[f64; 16], d: f64, pat: Pattern| {
        let mut f = |_: f64, y: &[f64; 16]| {
            let x = State::from_array(&y[..8]);
            let p = costate(y);
            let r = ratio(y);
            let pick = |s: i8, v: f64| if s == 0 { v } else { f64::from(s) };
            let u = Control { u1: pick(pat[0], r.x), u2: pick(pat[1], r.y) };
            let (xd, pd) = extremal_field_with(&x, &p, &u, vp, h.lambda3);
            scaled_rates(&xd, &pd, t_f)
        };
        rk4_step(&mut f, 0.0, y, d)
    };

    let mut y = *y0;
    let mut pat = pattern_of(&ratio(&y));
    let mut remaining = dtau;
    for _ in 0..MAX_SWITCHES_PER_STEP {
        let end = sub(&y, remaining, pat);
        if pattern_of(&ratio(&end)) == pat || end.iter().any(|c| !c.is_finite()) {
            return end;
        }
        let (mut lo, mut hi) = (0.0, remaining);
        loop {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if pattern_of(&ratio(&sub(&y, mid, pat))) == pat {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        y = sub(&y, hi, pat);
        remaining -= hi;
        pat = pattern_of(&ratio(&y));
        if remaining <= 0.0 {
            return y;
        }
    }
    sub(&y, remaining, pat)
}

pub fn terminal_point(traj: &Trajectory) -> &ExtremalPoint {
    traj.nodes.last().expect("trajectories always hold the initial node")
}
