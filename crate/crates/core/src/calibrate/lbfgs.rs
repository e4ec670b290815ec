//! Limited-memory BFGS with a strong Wolfe line search (bracket plus cubic
//! zoom). The bounded variant projects onto lower bounds and backtracks on a
//! sufficient-decrease condition instead.

use std::collections::VecDeque;

use super::{Objective, StopReason, TrainConfig, TrainResult};
use crate::error::{Error, Result};

const C1: f64 = 1e-4;
const C2: f64 = 0.9;
const ALPHA_MAX: f64 = 1e20;
const MAX_BRACKET: usize = 25;
const MAX_ZOOM: usize = 30;
/// Curvature pairs with s'y below this times |s||y| are skipped.
const CURVATURE_SKIP: f64 = 1e-10;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, &v| m.max(v.abs()))
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

/// Two-loop recursion; returns the quasi-Newton direction -H g in `d`.
fn lbfgs_direction(g: &[f64], hist: &VecDeque<Pair>, d: &mut [f64]) {
    d.copy_from_slice(g);
    if hist.is_empty() {
        for v in d.iter_mut() {
            *v = -*v;
        }
        return;
    }
    let mut alpha = vec![0.0; hist.len()];
    for (i, p) in hist.iter().enumerate().rev() {
        let a = p.rho * dot(&p.s, d);
        alpha[i] = a;
        for (dv, yv) in d.iter_mut().zip(&p.y) {
            *dv -= a * yv;
        }
    }
    let last = hist.back().unwrap();
    let gamma = 1.0 / (last.rho * dot(&last.y, &last.y));
    for v in d.iter_mut() {
        *v *= gamma;
    }
    for (i, p) in hist.iter().enumerate() {
        let beta = p.rho * dot(&p.y, d);
        let a = alpha[i] - beta;
        for (dv, sv) in d.iter_mut().zip(&p.s) {
            *dv += a * sv;
        }
    }
    for v in d.iter_mut() {
        *v = -*v;
    }
}

/// Counts objective calls against the budget. `eval` returning Ok(None)
/// means the budget is spent.
struct Evaluator<'a> {
    obj: &'a mut dyn Objective,
    calls: usize,
    budget: usize,
}

impl<'a> Evaluator<'a> {
    fn eval(&mut self, x: &[f64], g: &mut [f64]) -> Result<Option<f64>> {
        if self.calls >= self.budget {
            return Ok(None);
        }
        self.calls += 1;
        self.obj.value_and_grad(x, g).map(Some)
    }
}

/// Minimizer of the cubic Hermite interpolant through two bracket endpoints;
/// falls back to bisection when the interpolant is degenerate or lands
/// outside the safeguarded interior.
fn cubic_step(al: f64, fl: f64, dl: f64, ah: f64, fh: f64, dh: f64) -> f64 {
    let lo = al.min(ah);
    let hi = al.max(ah);
    let width = hi - lo;
    let bisect = 0.5 * (lo + hi);
    if !(width > 0.0) {
        return bisect;
    }
    let d1 = dl + dh - 3.0 * (fl - fh) / (al - ah);
    let disc = d1 * d1 - dl * dh;
    if disc < 0.0 {
        return bisect;
    }
    let d2 = (ah - al).signum() * disc.sqrt();
    let denom = dh - dl + 2.0 * d2;
    if denom == 0.0 {
        return bisect;
    }
    let a = ah - (ah - al) * (dh + d2 - d1) / denom;
    if !a.is_finite() || a < lo + 0.1 * width || a > hi - 0.1 * width {
        return bisect;
    }
    a
}

enum LsOutcome {
    /// Step length accepted; trial buffers hold x, g, and f.
    Accepted { alpha: f64, f: f64, dphi: f64 },
    Budget,
    Failed,
}

/// Strong Wolfe search along d from x. On Accepted, `x_trial`/`g_trial`
/// contain the new point (the accepted candidate is always the last one
/// evaluated).
#[allow(clippy::too_many_arguments)]
fn wolfe_search(
    ev: &mut Evaluator,
    x: &[f64],
    d: &[f64],
    f0: f64,
    dphi0: f64,
    alpha_init: f64,
    x_trial: &mut [f64],
    g_trial: &mut [f64],
) -> Result<LsOutcome> {
    debug_assert!(dphi0 < 0.0);
    let mut probe = |alpha: f64, x_trial: &mut [f64], g_trial: &mut [f64]| -> Result<Option<(f64, f64)>> {
        for ((xt, &xv), &dv) in x_trial.iter_mut().zip(x).zip(d) {
            *xt = xv + alpha * dv;
        }
        match ev.eval(x_trial, g_trial)? {
            Some(f) => Ok(Some((f, dot(g_trial, d)))),
            None => Ok(None),
        }
    };

    // Bracket phase: expand until the minimum is trapped or Wolfe holds.
    let mut a_prev = 0.0;
    let mut f_prev = f0;
    let mut d_prev = dphi0;
    let mut alpha = alpha_init.min(ALPHA_MAX);
    let mut bracket = None;
    for it in 0..MAX_BRACKET {
        let (fa, da) = match probe(alpha, x_trial, g_trial)? {
            Some(v) => v,
            None => return Ok(LsOutcome::Budget),
        };
        if !fa.is_finite() || fa > f0 + C1 * alpha * dphi0 || (it > 0 && fa >= f_prev) {
            bracket = Some((a_prev, f_prev, d_prev, alpha, fa, da));
            break;
        }
        if da.abs() <= -C2 * dphi0 {
            return Ok(LsOutcome::Accepted { alpha, f: fa, dphi: da });
        }
        if da >= 0.0 {
            bracket = Some((alpha, fa, da, a_prev, f_prev, d_prev));
            break;
        }
        a_prev = alpha;
        f_prev = fa;
        d_prev = da;
        if alpha >= ALPHA_MAX {
            return Ok(LsOutcome::Failed);
        }
        alpha = (alpha * 2.0).min(ALPHA_MAX);
    }
    let (mut a_lo, mut f_lo, mut d_lo, mut a_hi, mut f_hi, mut d_hi) = match bracket {
        Some(b) => b,
        None => return Ok(LsOutcome::Failed),
    };

    // Zoom phase: the interval [a_lo, a_hi] (unordered) always contains a
    // Wolfe point; a_lo carries the best sufficient-decrease value so far.
    for _ in 0..MAX_ZOOM {
        if (a_hi - a_lo).abs() <= 1e-16 * a_lo.abs().max(1.0) {
            return Ok(LsOutcome::Failed);
        }
        let aj = cubic_step(a_lo, f_lo, d_lo, a_hi, f_hi, d_hi);
        let (fj, dj) = match probe(aj, x_trial, g_trial)? {
            Some(v) => v,
            None => return Ok(LsOutcome::Budget),
        };
        if !fj.is_finite() || fj > f0 + C1 * aj * dphi0 || fj >= f_lo {
            a_hi = aj;
            f_hi = fj;
            d_hi = dj;
        } else {
            if dj.abs() <= -C2 * dphi0 {
                return Ok(LsOutcome::Accepted { alpha: aj, f: fj, dphi: dj });
            }
            if dj * (a_hi - a_lo) >= 0.0 {
                a_hi = a_lo;
                f_hi = f_lo;
                d_hi = d_lo;
            }
            a_lo = aj;
            f_lo = fj;
            d_lo = dj;
        }
    }
    Ok(LsOutcome::Failed)
}

/// Unconstrained L-BFGS. Deterministic: reruns with the same inputs produce
/// bit-identical traces.
pub fn minimize(
    obj: &mut dyn Objective,
    theta0: &[f64],
    cfg: &TrainConfig,
    monitor: Option<&mut dyn FnMut(&[f64]) -> f64>,
) -> Result<TrainResult> {
    drive(obj, theta0, cfg, monitor, None)
}

/// L-BFGS with componentwise lower bounds via gradient projection. Entries
/// of `lower` may be -inf; with no finite bound this is exactly `minimize`.
pub fn minimize_bounded(
    obj: &mut dyn Objective,
    theta0: &[f64],
    lower: &[f64],
    cfg: &TrainConfig,
    monitor: Option<&mut dyn FnMut(&[f64]) -> f64>,
) -> Result<TrainResult> {
    if lower.len() != theta0.len() {
        return Err(Error::contract("bound vector length mismatch"));
    }
    if lower.iter().all(|&b| b == f64::NEG_INFINITY) {
        return drive(obj, theta0, cfg, monitor, None);
    }
    drive(obj, theta0, cfg, monitor, Some(lower))
}

fn drive(
    obj: &mut dyn Objective,
    theta0: &[f64],
    cfg: &TrainConfig,
    mut monitor: Option<&mut dyn FnMut(&[f64]) -> f64>,
    lower: Option<&[f64]>,
) -> Result<TrainResult> {
    let n = theta0.len();
    if n != obj.dim() {
        return Err(Error::contract("theta0 length does not match objective"));
    }
    if theta0.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("non-finite initial parameters"));
    }
    if cfg.memory == 0 {
        return Err(Error::contract("lbfgs memory must be positive"));
    }
    let mut ev = Evaluator {
        obj,
        calls: 0,
        budget: cfg.call_budget.unwrap_or(usize::MAX),
    };

    let mut x = theta0.to_vec();
    if let Some(lb) = lower {
        for (xv, &b) in x.iter_mut().zip(lb) {
            *xv = xv.max(b);
        }
    }
    let mut g = vec![0.0; n];
    let mut f = match ev.eval(&x, &mut g)? {
        Some(f) => f,
        None => return Err(Error::contract("objective call budget is zero")),
    };
    if !f.is_finite() {
        return Err(Error::contract("objective is non-finite at theta0"));
    }

    let mut trace = vec![f];
    let mut test_trace = monitor.as_mut().map(|m| vec![m(&x)]);

    let mut hist: VecDeque<Pair> = VecDeque::new();
    let mut d = vec![0.0; n];
    let mut x_trial = vec![0.0; n];
    let mut g_trial = vec![0.0; n];
    let mut iterations = 0;
    let reason;

    loop {
        let stat_norm = match lower {
            // Projected-gradient stationarity: ||P(x - g) - x||_inf.
            Some(lb) => x
                .iter()
                .zip(&g)
                .zip(lb)
                .map(|((&xv, &gv), &b)| ((xv - gv).max(b) - xv).abs())
                .fold(0.0, f64::max),
            None => norm_inf(&g),
        };
        if stat_norm <= cfg.grad_tol {
            reason = StopReason::ConvergedGrad;
            break;
        }
        if iterations >= cfg.max_iters {
            reason = StopReason::MaxIter;
            break;
        }

        lbfgs_direction(&g, &hist, &mut d);
        let mut dphi0 = dot(&g, &d);
        if !(dphi0 < 0.0) {
            hist.clear();
            for (dv, &gv) in d.iter_mut().zip(&g) {
                *dv = -gv;
            }
            dphi0 = dot(&g, &d);
            if !(dphi0 < 0.0) {
                // Gradient numerically zero in every direction.
                reason = StopReason::ConvergedGrad;
                break;
            }
        }
        let alpha_init = if hist.is_empty() {
            (1.0 / norm2(&d).max(1e-30)).min(1.0)
        } else {
            1.0
        };

        let outcome = match lower {
            Some(lb) => projected_backtrack(
                &mut ev, &x, &d, f, &g, lb, alpha_init, &mut x_trial, &mut g_trial,
            )?,
            None => wolfe_search(
                &mut ev, &x, &d, f, dphi0, alpha_init, &mut x_trial, &mut g_trial,
            )?,
        };

        let (f_new, _alpha) = match outcome {
            LsOutcome::Accepted { alpha, f: fa, dphi } => {
                debug_assert!(fa <= f + C1 * alpha * dphi0 + 1e-12 * f.abs());
                debug_assert!(lower.is_some() || dphi.abs() <= -C2 * dphi0 + 1e-12);
                (fa, alpha)
            }
            LsOutcome::Budget => {
                reason = StopReason::Budget;
                break;
            }
            LsOutcome::Failed => {
                reason = StopReason::LineSearchFailure;
                break;
            }
        };

        // Curvature update from actual movement (projection-safe).
        let s: Vec<f64> = x_trial.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_trial.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > CURVATURE_SKIP * norm2(&s) * norm2(&y) {
            if hist.len() == cfg.memory {
                hist.pop_front();
            }
            hist.push_back(Pair { rho: 1.0 / sy, s, y });
        }

        std::mem::swap(&mut x, &mut x_trial);
        std::mem::swap(&mut g, &mut g_trial);
        let f_old = f;
        f = f_new;
        iterations += 1;
        trace.push(f);
        if let (Some(m), Some(tt)) = (monitor.as_mut(), test_trace.as_mut()) {
            tt.push(m(&x));
        }

        if (f_old - f).abs() <= cfg.rel_obj_tol * f_old.abs().max(f.abs()) {
            reason = StopReason::ConvergedObj;
            break;
        }
    }

    Ok(TrainResult {
        grad_norm: norm_inf(&g),
        theta: x,
        loss: f,
        trace,
        test_trace,
        reason,
        iterations,
        obj_calls: ev.calls,
    })
}

/// Armijo backtracking on the projected arc x(a) = P(x + a d). The curvature
/// condition is dropped; history pairs are filtered by the s'y test instead.
#[allow(clippy::too_many_arguments)]
fn projected_backtrack(
    ev: &mut Evaluator,
    x: &[f64],
    d: &[f64],
    f0: f64,
    g: &[f64],
    lower: &[f64],
    alpha_init: f64,
    x_trial: &mut [f64],
    g_trial: &mut [f64],
) -> Result<LsOutcome> {
    let mut alpha = alpha_init;
    for _ in 0..40 {
        let mut step_dot_g = 0.0;
        let mut moved = false;
        for (i, xt) in x_trial.iter_mut().enumerate() {
            *xt = (x[i] + alpha * d[i]).max(lower[i]);
            let dx = *xt - x[i];
            step_dot_g += g[i] * dx;
            moved |= dx != 0.0;
        }
        if !moved {
            return Ok(LsOutcome::Failed);
        }
        let fa = match ev.eval(x_trial, g_trial)? {
            Some(v) => v,
            None => return Ok(LsOutcome::Budget),
        };
        if fa.is_finite() && fa <= f0 + C1 * step_dot_g && step_dot_g < 0.0 {
            return Ok(LsOutcome::Accepted { alpha, f: fa, dphi: step_dot_g });
        }
        alpha *= 0.5;
    }
    Ok(LsOutcome::Failed)
}
