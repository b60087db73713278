//! Adaptive RK4 initial-value integration with domain-exit detection.
//!
//! Step-doubling error control: one step of size h against two of size
//! h/2, accepted when the scaled difference is within tolerance, with PI
//! step-size adaptation. A guard predicate marks the admissible region;
//! when the flow leaves it the exit time is located by bisection and the
//! trajectory ends with an explicit [`DomainExit`] record instead of an
//! error.

use crate::error::{Error, Result};

/// Right-hand side (t, y) → ẏ; failures inside a stage make the caller
/// shrink the step.
pub type Rhs<'a> = &'a mut dyn FnMut(f64, &[f64]) -> Result<Vec<f64>>;

/// Admissibility predicate (t, y) → still inside the domain.
pub type Guard<'a> = &'a mut dyn FnMut(f64, &[f64]) -> bool;

pub struct IvpProblem<'a> {
    pub rhs: Rhs<'a>,
    pub y0: Vec<f64>,
    pub t_span: (f64, f64),
    pub guard: Guard<'a>,
    /// Upper bound on the step, e.g. to force output density.
    pub max_step: Option<f64>,
}

/// Where and why the flow left the admissible region.
#[derive(Debug, Clone)]
pub struct DomainExit {
    pub t: f64,
    pub reason: String,
}

/// Accepted integration states, strictly increasing in time.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub exit: Option<DomainExit>,
}

impl Trajectory {
    pub fn last(&self) -> (f64, &[f64]) {
        (
            *self.times.last().unwrap(),
            self.states.last().unwrap().as_slice(),
        )
    }
}

/// One classical fourth-order Runge–Kutta step.
pub fn step_rk4(rhs: Rhs, t: f64, y: &[f64], h: f64) -> Result<Vec<f64>> {
    let k1 = rhs(t, y)?;
    let y2: Vec<f64> = y.iter().zip(&k1).map(|(y, k)| y + 0.5 * h * k).collect();
    let k2 = rhs(t + 0.5 * h, &y2)?;
    let y3: Vec<f64> = y.iter().zip(&k2).map(|(y, k)| y + 0.5 * h * k).collect();
    let k3 = rhs(t + 0.5 * h, &y3)?;
    let y4: Vec<f64> = y.iter().zip(&k3).map(|(y, k)| y + h * k).collect();
    let k4 = rhs(t + h, &y4)?;
    Ok(y.iter()
        .enumerate()
        .map(|(i, y)| y + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// One step of size h refined by two of size h/2, Richardson-extrapolated,
/// with the scaled error of the pair.
fn double_step(
    rhs: Rhs,
    t: f64,
    y: &[f64],
    h: f64,
    rtol: f64,
    atol: f64,
) -> Result<(Vec<f64>, f64)> {
    let big = step_rk4(rhs, t, y, h)?;
    let mid = step_rk4(rhs, t, y, 0.5 * h)?;
    let fine = step_rk4(rhs, t + 0.5 * h, &mid, 0.5 * h)?;
    let mut err = 0.0f64;
    for i in 0..y.len() {
        let scale = atol + rtol * fine[i].abs().max(y[i].abs());
        err = err.max((fine[i] - big[i]).abs() / scale);
    }
    let extrapolated: Vec<f64> = fine
        .iter()
        .zip(&big)
        .map(|(f, b)| f + (f - b) / 15.0)
        .collect();
    Ok((extrapolated, err))
}

/// Integrate the problem with step-doubling RK4.
pub fn integrate(problem: IvpProblem, h0: f64, rtol: f64, atol: f64) -> Result<Trajectory> {
    let (t0, t1) = problem.t_span;
    if !(t1 > t0) {
        return Err(Error::Invalid("t_span requires t1 > t0".into()));
    }
    if !(h0 > 0.0) {
        return Err(Error::Invalid("h0 must be positive".into()));
    }
    let span = t1 - t0;
    let h_min = 1e-14 * span;
    let exit_tol = 1e-10 * span;
    let rhs = problem.rhs;
    let guard = problem.guard;
    if !guard(t0, &problem.y0) {
        return Err(Error::Invalid("guard rejects the initial state".into()));
    }

    let mut t = t0;
    let mut y = problem.y0.clone();
    let mut h = h0.min(span);
    if let Some(mx) = problem.max_step {
        h = h.min(mx);
    }
    let mut err_prev = 1.0f64;
    let mut times = vec![t0];
    let mut states = vec![y.clone()];
    let mut exit = None;

    'outer: while t < t1 - 1e-14 * span {
        h = h.min(t1 - t);
        if let Some(mx) = problem.max_step {
            h = h.min(mx);
        }
        if h < h_min {
            return Err(Error::StepUnderflow { t });
        }
        match double_step(rhs, t, &y, h, rtol, atol) {
            Err(_) => {
                // A stage failed (e.g. infeasible parameter probed by a
                // large trial step): shrink, and if even tiny steps fail
                // the flow is pinned to the boundary.
                if h * 0.5 >= h_min {
                    h *= 0.5;
                    continue;
                }
                return Err(Error::StepUnderflow { t });
            }
            Ok((y_new, err)) => {
                if err > 1.0 {
                    let fac = (0.9 * err.powf(-0.2)).clamp(0.2, 0.9);
                    h *= fac;
                    continue;
                }
                if !guard(t + h, &y_new) {
                    // locate the exit time by bisection on the step size
                    let (t_exit, reason) =
                        locate_exit(rhs, guard, t, &y, h, exit_tol, rtol, atol, &mut times, &mut states)?;
                    exit = Some(DomainExit {
                        t: t_exit,
                        reason,
                    });
                    break 'outer;
                }
                t += h;
                y = y_new;
                times.push(t);
                states.push(y.clone());
                // PI controller on the pair (err, err_prev)
                let e = err.max(1e-12);
                let fac = (0.9 * e.powf(-0.14) * err_prev.powf(0.08)).clamp(0.2, 5.0);
                h *= fac;
                err_prev = e;
            }
        }
    }
    Ok(Trajectory {
        times,
        states,
        exit,
    })
}

/// Bisect the step size at a guard violation; pushes the last admissible
/// state and returns the exit time bracketed within `exit_tol`.
#[allow(clippy::too_many_arguments)]
fn locate_exit(
    rhs: Rhs,
    guard: Guard,
    t: f64,
    y: &[f64],
    h_bad: f64,
    exit_tol: f64,
    rtol: f64,
    atol: f64,
    times: &mut Vec<f64>,
    states: &mut Vec<Vec<f64>>,
) -> Result<(f64, String)> {
    let mut lo = 0.0f64;
    let mut hi = h_bad;
    let mut y_lo: Option<Vec<f64>> = None;
    while hi - lo > exit_tol {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        match double_step(rhs, t, y, mid, rtol, atol) {
            Ok((cand, _)) if guard(t + mid, &cand) => {
                lo = mid;
                y_lo = Some(cand);
            }
            _ => hi = mid,
        }
    }
    if let Some(state) = y_lo {
        times.push(t + lo);
        states.push(state);
    }
    Ok((t + hi, "guard violated (domain exit)".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay(_t: f64, y: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![-y[0]])
    }

    #[test]
    fn rk4_single_step_examples() {
        let mut rhs = decay;
        let y = step_rk4(&mut rhs, 0.0, &[1.0], 0.1).unwrap();
        assert!((y[0] - 0.9048375).abs() < 1e-12); // frozen RK4 value
        assert!((y[0] - (-0.1f64).exp()).abs() < 1e-7);

        let mut zero = |_t: f64, _y: &[f64]| Ok(vec![0.0]);
        let y = step_rk4(&mut zero, 0.0, &[2.5], 0.3).unwrap();
        assert_eq!(y[0], 2.5);

        let mut one = |_t: f64, _y: &[f64]| Ok(vec![1.0]);
        let y = step_rk4(&mut one, 0.0, &[2.0], 0.25).unwrap();
        assert_eq!(y[0], 2.25);

        // quadrature in t: RK4 reduces to Simpson, exact on cubics
        let mut cubic = |t: f64, _y: &[f64]| Ok(vec![3.0 * t * t]);
        let y = step_rk4(&mut cubic, 0.0, &[0.0], 1.0).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn integrate_exponential_decay() {
        let mut rhs = decay;
        let mut guard = |_t: f64, _y: &[f64]| true;
        let traj = integrate(
            IvpProblem {
                rhs: &mut rhs,
                y0: vec![1.0],
                t_span: (0.0, 1.0),
                guard: &mut guard,
                max_step: None,
            },
            0.1,
            1e-8,
            1e-10,
        )
        .unwrap();
        let (t, y) = traj.last();
        assert!((t - 1.0).abs() < 1e-12);
        assert!((y[0] - (-1.0f64).exp()).abs() < 1e-7, "y(1) = {}", y[0]);
        assert!(traj.exit.is_none());
        assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn fixed_step_global_error_scales_as_h4() {
        let run = |h: f64| -> f64 {
            let mut rhs = decay;
            let mut y = vec![1.0];
            let mut t = 0.0;
            let n = (1.0 / h).round() as usize;
            for _ in 0..n {
                y = step_rk4(&mut rhs, t, &y, h).unwrap();
                t += h;
            }
            (y[0] - (-1.0f64).exp()).abs()
        };
        let e1 = run(0.1);
        let e2 = run(0.05);
        let e3 = run(0.025);
        let r1 = e1 / e2;
        let r2 = e2 / e3;
        assert!((r1 - 16.0).abs() < 1.6, "ratio {r1}");
        assert!((r2 - 16.0).abs() < 1.6, "ratio {r2}");
    }

    #[test]
    fn guard_exit_is_located_precisely() {
        // y' = -1 from 1; y > 0 fails exactly at t = 1
        let mut rhs = |_t: f64, _y: &[f64]| Ok(vec![-1.0]);
        let mut guard = |_t: f64, y: &[f64]| y[0] > 0.0;
        let traj = integrate(
            IvpProblem {
                rhs: &mut rhs,
                y0: vec![1.0],
                t_span: (0.0, 2.0),
                guard: &mut guard,
                max_step: None,
            },
            0.3,
            1e-8,
            1e-10,
        )
        .unwrap();
        let exit = traj.exit.expect("must exit");
        assert!((exit.t - 1.0).abs() < 1e-8, "exit at {}", exit.t);
        // guard soundness: every recorded state admissible
        for (t, y) in traj.times.iter().zip(&traj.states) {
            assert!(y[0] > 0.0, "state at t={t} violates guard");
        }
    }

    #[test]
    fn persistent_rhs_failure_underflows() {
        let mut rhs = |t: f64, y: &[f64]| {
            if t > 0.5 {
                Err(Error::InfeasibleTheta("wall".into()))
            } else {
                Ok(vec![y[0].cos()])
            }
        };
        let mut guard = |_t: f64, _y: &[f64]| true;
        let res = integrate(
            IvpProblem {
                rhs: &mut rhs,
                y0: vec![0.0],
                t_span: (0.0, 1.0),
                guard: &mut guard,
                max_step: None,
            },
            0.1,
            1e-8,
            1e-10,
        );
        assert!(matches!(res, Err(Error::StepUnderflow { .. })));
    }

    #[test]
    fn max_step_caps_output_spacing() {
        let mut rhs = decay;
        let mut guard = |_t: f64, _y: &[f64]| true;
        let traj = integrate(
            IvpProblem {
                rhs: &mut rhs,
                y0: vec![1.0],
                t_span: (0.0, 1.0),
                guard: &mut guard,
                max_step: Some(0.05),
            },
            0.5,
            1e-6,
            1e-9,
        )
        .unwrap();
        assert!(traj
            .times
            .windows(2)
            .all(|w| w[1] - w[0] <= 0.05 + 1e-12));
    }
}
