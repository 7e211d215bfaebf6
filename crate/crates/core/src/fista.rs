//! Accelerated proximal gradient descent with function-value restart.
//!
//! Whenever a momentum step raises the composite objective the step is
//! discarded and the momentum reset, so the accepted iterates decrease the
//! objective monotonically.

use alloc::vec::Vec;

use crate::Vector;

/// Composite problem `min f(x) + g(x)` with smooth `f` and a prox-friendly
/// `g`.
pub trait ProxProblem {
    /// `f(x)` and `∇f(x)`.
    fn smooth(&self, x: &Vector) -> (f64, Vector);
    /// `f(x)` alone; override when it is cheaper than the gradient.
    fn smooth_value(&self, x: &Vector) -> f64 {
        self.smooth(x).0
    }
    /// `g(x)` for feasible `x`.
    fn penalty(&self, x: &Vector) -> f64;
    /// In-place `prox_{step·g}`. With `step = 0` this is the projection onto
    /// the feasible set.
    fn prox(&self, x: &mut Vector, step: f64);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FistaOptions {
    pub max_iters: usize,
    /// Stop when the largest absolute coordinate change drops below this.
    pub tol: f64,
    /// Lipschitz constant of `∇f`; the step size is its inverse.
    pub lipschitz: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FistaOutcome {
    pub x: Vector,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub restarts: usize,
    /// Composite objective after each accepted step, starting with the
    /// projected initial point.
    pub trace: Vec<f64>,
}

pub fn fista<P: ProxProblem + ?Sized>(p: &P, x0: Vector, opts: FistaOptions) -> FistaOutcome {
    let mut x = x0;
    p.prox(&mut x, 0.0);
    let mut fx = p.smooth_value(&x) + p.penalty(&x);
    let mut trace = Vec::new();
    trace.push(fx);

    let lip = if opts.lipschitz.is_finite() && opts.lipschitz > 0.0 {
        opts.lipschitz
    } else {
        1.0
    };
    let step = 1.0 / lip;
    let mut y = x.clone();
    let mut theta = 1.0f64;
    let mut fresh = true;
    let mut restarts = 0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        iterations += 1;
        let (_, grad) = p.smooth(&y);
        let mut next = &y - grad * step;
        p.prox(&mut next, step);
        let fnext = p.smooth_value(&next) + p.penalty(&next);

        if !(fnext <= fx) {
            if fresh {
                // Even a plain proximal step failed to descend: at a
                // stationary point up to rounding.
                converged = true;
                break;
            }
            y.copy_from(&x);
            theta = 1.0;
            fresh = true;
            restarts += 1;
            continue;
        }

        let change = (&next - &x).amax();
        let theta_next = 0.5 * (1.0 + libm::sqrt(1.0 + 4.0 * theta * theta));
        let momentum = (theta - 1.0) / theta_next;
        y = &next + (&next - &x) * momentum;
        x = next;
        fx = fnext;
        theta = theta_next;
        fresh = false;
        trace.push(fx);
        if change < opts.tol {
            converged = true;
            break;
        }
    }

    FistaOutcome { x, objective: fx, iterations, converged, restarts, trace }
}
