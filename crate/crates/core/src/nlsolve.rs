//! Powell hybrid (dogleg trust-region) solver for square nonlinear systems.
//!
//! The Jacobian is built by forward differences and then maintained by
//! Broyden rank-1 updates; it is recomputed when the trust region keeps
//! shrinking. Steps are measured in a diagonally scaled norm.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const SINGULAR_CONDITION: f64 = 1e15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    Stalled,
    MaxIter,
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Tolerance on `‖F‖∞`.
    pub tol: f64,
    /// Evaluation budget; `None` means `200 n`.
    pub max_eval: Option<usize>,
    pub broyden: bool,
    /// Initial trust radius as a multiple of `‖D x0‖`.
    pub radius_factor: f64,
    /// Keep a per-iteration log.
    pub log: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tol: DEFAULT_TOL, max_eval: None, broyden: true, radius_factor: 100.0, log: false }
    }
}

/// One trust-region iteration of a logged run.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// Trust radius the step was computed with.
    pub radius: f64,
    /// Scaled step norm `‖D δ‖`.
    pub step_norm: f64,
    pub residual_norm: f64,
    pub accepted: bool,
    /// Relative secant error `‖J⁺ δ − ΔF‖ / (‖ΔF‖ + ‖J δ‖)` after a Broyden update.
    pub secant_error: Option<f64>,
    pub jacobian_refreshed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub x: DVector<f64>,
    pub f: DVector<f64>,
    /// `‖F(x)‖∞`.
    pub residual_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub condition: f64,
    pub status: SolveStatus,
    pub log: Vec<IterationRecord>,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionEstimate {
    pub value: f64,
    pub singular: bool,
}

/// 1-norm condition number `‖J‖₁ ‖J⁻¹‖₁`.
pub fn condition_estimate(j: &DMatrix<f64>) -> ConditionEstimate {
    let norm1 = |m: &DMatrix<f64>| m.column_iter().map(|c| c.lp_norm(1)).fold(0.0, f64::max);
    let value = match j.clone().lu().try_inverse() {
        Some(inv) => norm1(j) * norm1(&inv),
        None => f64::INFINITY,
    };
    let value = if value.is_finite() { value } else { f64::INFINITY };
    ConditionEstimate { value, singular: value > SINGULAR_CONDITION }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.amax()
}

fn is_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|c| c.is_finite())
}

struct Counted<F> {
    f: F,
    evaluations: usize,
}

impl<F: FnMut(&DVector<f64>) -> Option<DVector<f64>>> Counted<F> {
    fn eval(&mut self, x: &DVector<f64>) -> Option<DVector<f64>> {
        self.evaluations += 1;
        (self.f)(x).filter(is_finite)
    }

    fn jacobian(&mut self, x: &DVector<f64>, fx: &DVector<f64>) -> Option<DMatrix<f64>> {
        let n = x.len();
        let mut j = DMatrix::zeros(fx.len(), n);
        for k in 0..n {
            let h = (1e-8 * x[k].abs()).max(1e-8);
            let mut xp = x.clone();
            xp[k] += h;
            let fp = self.eval(&xp)?;
            j.set_column(k, &((fp - fx) / h));
        }
        Some(j)
    }
}

/// Dogleg step in scaled variables `y = D x`, returned in unscaled form.
fn dogleg(j: &DMatrix<f64>, f: &DVector<f64>, d: &DVector<f64>, radius: f64) -> DVector<f64> {
    let js = DMatrix::from_fn(j.nrows(), j.ncols(), |r, c| j[(r, c)] / d[c]);
    let newton = js.clone().lu().solve(&(-f)).filter(is_finite);
    if let Some(sn) = &newton {
        if sn.norm() <= radius {
            return sn.component_div(d);
        }
    }
    let g = js.tr_mul(f);
    let gnorm = g.norm();
    if gnorm == 0.0 {
        return DVector::zeros(f.len());
    }
    let jg = &js * &g;
    let jg2 = jg.norm_squared();
    let sd = if jg2 > 0.0 { -(gnorm * gnorm / jg2) * &g } else { -(radius / gnorm) * &g };
    let s = match newton {
        Some(sn) if sd.norm() < radius => {
            // point on the segment sd → sn at distance `radius`
            let diff = &sn - &sd;
            let a = diff.norm_squared();
            let b = 2.0 * sd.dot(&diff);
            let c = sd.norm_squared() - radius * radius;
            let t = (-b + (b * b - 4.0 * a * c).max(0.0).sqrt()) / (2.0 * a);
            sd + t.clamp(0.0, 1.0) * diff
        }
        _ => -(radius / gnorm) * g,
    };
    s.component_div(d)
}

pub fn solve<F>(f: F, x0: &DVector<f64>, opts: &SolveOptions) -> SolveReport
where
    F: FnMut(&DVector<f64>) -> Option<DVector<f64>>,
{
    let n = x0.len();
    let max_eval = opts.max_eval.unwrap_or(200 * n);
    let mut fc = Counted { f, evaluations: 0 };
    let mut log = Vec::new();

    let mut x = x0.clone();
    let finish = |x: DVector<f64>, fx: DVector<f64>, it, ev, cond, status, log| SolveReport {
        residual_norm: if fx.is_empty() { f64::INFINITY } else { inf_norm(&fx) },
        x,
        f: fx,
        iterations: it,
        evaluations: ev,
        condition: cond,
        status,
        log,
    };
    let Some(mut fx) = fc.eval(&x) else {
        return finish(x, DVector::zeros(0), 0, fc.evaluations, f64::NAN, SolveStatus::NonFinite, log);
    };
    if inf_norm(&fx) <= opts.tol {
        return finish(x, fx, 0, fc.evaluations, f64::NAN, SolveStatus::Converged, log);
    }
    let Some(mut j) = fc.jacobian(&x, &fx) else {
        return finish(x, fx, 0, fc.evaluations, f64::NAN, SolveStatus::NonFinite, log);
    };
    let col_norms = |j: &DMatrix<f64>| DVector::from_iterator(n, j.column_iter().map(|c| c.norm()));
    let mut d = col_norms(&j).map(|c| if c > 0.0 { c } else { 1.0 });
    let xnorm = x.component_mul(&d).norm();
    let mut radius = if xnorm > 0.0 { opts.radius_factor * xnorm } else { opts.radius_factor };

    let mut iterations = 0;
    let mut shrinks = 0;
    let mut fresh = true;
    let mut stale_refreshes = 0;
    loop {
        if fc.evaluations >= max_eval {
            let cond = condition_estimate(&j).value;
            return finish(x, fx, iterations, fc.evaluations, cond, SolveStatus::MaxIter, log);
        }
        iterations += 1;
        let used_radius = radius;
        let step = dogleg(&j, &fx, &d, radius);
        let step_norm = step.component_mul(&d).norm();
        if iterations == 1 {
            radius = radius.min(step_norm.max(f64::MIN_POSITIVE));
        }
        let fnorm = fx.norm();
        let trial = &x + &step;
        let ftrial = fc.eval(&trial);
        let predicted = &fx + &j * &step;
        let pred = 1.0 - (predicted.norm() / fnorm).powi(2);
        let ratio = match &ftrial {
            Some(ft) if pred > 0.0 => (1.0 - (ft.norm() / fnorm).powi(2)) / pred,
            _ => -1.0,
        };

        if ratio < 0.1 {
            radius = 0.5 * radius.min(step_norm);
            shrinks += 1;
        } else {
            shrinks = 0;
            if ratio >= 0.5 || (ratio - 1.0).abs() <= 0.1 {
                radius = radius.max(2.0 * step_norm);
            }
        }
        let accepted = ratio >= 1e-4;

        let mut secant_error = None;
        let mut refreshed = false;
        if let Some(ft) = &ftrial {
            let df = ft - &fx;
            if opts.broyden && step_norm > 0.0 {
                let jd = &j * &step;
                let denom = step.norm_squared();
                j += (&df - &jd) * step.transpose() / denom;
                let err = (&j * &step - &df).norm() / (df.norm() + jd.norm()).max(f64::MIN_POSITIVE);
                secant_error = Some(err);
            }
        }
        if accepted {
            x = trial;
            fx = ftrial.expect("accepted steps have finite residuals");
            fresh = false;
            stale_refreshes = 0;
        }
        let residual_norm = inf_norm(&fx);
        let converged = residual_norm <= opts.tol;

        if !converged && ((accepted && !opts.broyden) || (shrinks >= 2 && !fresh)) {
            match fc.jacobian(&x, &fx) {
                Some(jn) => {
                    j = jn;
                    d = d.zip_map(&col_norms(&j), f64::max);
                    refreshed = true;
                    fresh = true;
                    shrinks = 0;
                    if !accepted {
                        stale_refreshes += 1;
                    }
                }
                None => {
                    let cond = condition_estimate(&j).value;
                    return finish(x, fx, iterations, fc.evaluations, cond, SolveStatus::NonFinite, log);
                }
            }
        }
        if opts.log {
            log.push(IterationRecord {
                radius: used_radius,
                step_norm,
                residual_norm,
                accepted,
                secant_error,
                jacobian_refreshed: refreshed,
            });
        }
        if converged {
            let cond = condition_estimate(&j).value;
            return finish(x, fx, iterations, fc.evaluations, cond, SolveStatus::Converged, log);
        }
        let xnorm = x.component_mul(&d).norm();
        if radius <= 1e-15 * xnorm.max(1e-300) || stale_refreshes > 3 {
            let cond = condition_estimate(&j).value;
            return finish(x, fx, iterations, fc.evaluations, cond, SolveStatus::Stalled, log);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logged() -> SolveOptions {
        SolveOptions { log: true, ..SolveOptions::default() }
    }

    #[test]
    fn affine() {
        let c = DVector::from_vec(vec![1.0, -2.0, 3.5, 0.25]);
        let rep = solve(|x| Some(x - &c), &DVector::zeros(4), &SolveOptions { tol: 1e-12, ..logged() });
        assert!(rep.converged());
        assert!(rep.iterations <= 2);
        assert!((&rep.x - &c).amax() < 1e-12);
    }

    #[test]
    fn scalar_square_root() {
        let opts = SolveOptions { tol: 1e-12, ..SolveOptions::default() };
        let rep = solve(|x| Some(DVector::from_element(1, x[0] * x[0] - 4.0)), &DVector::from_element(1, 1.0), &opts);
        assert!(rep.converged());
        assert!((rep.x[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn newton_converges_quadratically() {
        let f = |x: &DVector<f64>| Some(DVector::from_vec(vec![x[0] * x[0] + x[1] * x[1] - 4.0, x[0] * x[1] - 1.0]));
        let opts = SolveOptions { tol: 1e-13, broyden: false, ..logged() };
        let rep = solve(f, &DVector::from_vec(vec![2.0, 0.3]), &opts);
        assert!(rep.converged());
        let norms: Vec<f64> = rep.log.iter().filter(|r| r.accepted).map(|r| r.residual_norm).collect();
        let tail: Vec<&[f64]> = norms.windows(2).filter(|w| w[0] < 1e-2 && w[0] > 1e-10).collect();
        assert!(!tail.is_empty(), "{norms:?}");
        for w in tail {
            // forward-difference Jacobian leaves a small linear term
            assert!(w[1] <= 10.0 * w[0] * w[0] + 1e-6 * w[0], "{norms:?}");
        }
    }

    #[test]
    fn non_finite_start() {
        let rep = solve(|_| None, &DVector::zeros(3), &SolveOptions::default());
        assert_eq!(rep.status, SolveStatus::NonFinite);
    }

    #[test]
    fn rootless_system_does_not_converge() {
        let rep = solve(
            |x| Some(DVector::from_element(1, x[0] * x[0] + 1.0)),
            &DVector::from_element(1, 3.0),
            &SolveOptions::default(),
        );
        assert!(matches!(rep.status, SolveStatus::Stalled | SolveStatus::MaxIter));
        assert!(rep.evaluations <= 200 + 2);
    }

    #[test]
    fn condition_examples() {
        let id = DMatrix::<f64>::identity(9, 9);
        assert!((condition_estimate(&id).value - 1.0).abs() < 1e-15);
        let mut d = DMatrix::<f64>::identity(9, 9);
        d[(1, 1)] = 1e6;
        assert!((condition_estimate(&d).value / 1e6 - 1.0).abs() < 1e-12);
        let mut s = DMatrix::<f64>::identity(9, 9);
        s[(4, 4)] = 0.0;
        assert!(condition_estimate(&s).singular);
    }

    #[test]
    fn dogleg_respects_radius() {
        let j = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.5, 3.0]);
        let f = DVector::from_vec(vec![10.0, -4.0]);
        let d = DVector::from_vec(vec![1.0, 5.0]);
        for radius in [1e-3, 0.1, 1.0, 3.0, 100.0] {
            let s = dogleg(&j, &f, &d, radius);
            assert!(s.component_mul(&d).norm() <= radius + 1e-12);
        }
    }
}
