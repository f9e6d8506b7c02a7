//! Limited-memory BFGS with a backtracking Armijo line search.

use std::collections::VecDeque;

#[derive(Debug, Clone)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop when the gradient max-norm or the relative change of the
    /// objective falls below this.
    pub tol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            memory: 10,
            max_iterations: 500,
            tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// (iteration, value, gradient max-norm) after every accepted step,
    /// starting with the initial point as iteration 0.
    pub trace: Vec<(usize, f64, f64)>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_norm(g: &[f64]) -> f64 {
    g.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimizes `f`, which returns the objective and its gradient.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, opts: &LbfgsOptions) -> LbfgsOutcome
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut x = x0;
    let (mut value, mut grad) = f(&x);
    let mut trace = vec![(0, value, max_norm(&grad))];
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    if x.is_empty() || max_norm(&grad) < opts.tol {
        return LbfgsOutcome {
            x,
            value,
            iterations: 0,
            converged: true,
            trace,
        };
    }

    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;

        // Two-loop recursion.
        let mut dir: Vec<f64> = grad.iter().map(|g| -g).collect();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &dir);
            for (d, yi) in dir.iter_mut().zip(y) {
                *d -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            for d in &mut dir {
                *d *= gamma;
            }
        } else {
            let scale = 1.0 / max_norm(&grad).max(1.0);
            for d in &mut dir {
                *d *= scale;
            }
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &dir);
            for (d, si) in dir.iter_mut().zip(s) {
                *d += (a - b) * si;
            }
        }
        let mut slope = dot(&grad, &dir);
        if slope.is_nan() || slope >= 0.0 {
            history.clear();
            dir = grad.iter().map(|g| -g / max_norm(&grad).max(1.0)).collect();
            slope = dot(&grad, &dir);
        }

        // Backtracking Armijo search.
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, d)| xi + step * d).collect();
            let (v, g) = f(&trial);
            if v.is_finite() && v <= value + 1e-4 * step * slope {
                accepted = Some((trial, v, g));
                break;
            }
            step *= 0.5;
        }
        let Some((new_x, new_value, new_grad)) = accepted else {
            // No decrease representable in floating point: a stationary point
            // up to rounding.
            converged = max_norm(&grad) < opts.tol.sqrt();
            break;
        };

        let s: Vec<f64> = new_x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = new_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }

        let rel_change = (value - new_value).abs() / value.abs().max(new_value.abs()).max(1.0);
        x = new_x;
        value = new_value;
        grad = new_grad;
        let gnorm = max_norm(&grad);
        trace.push((iterations, value, gnorm));
        if gnorm < opts.tol || rel_change < opts.tol {
            converged = true;
            break;
        }
    }
    LbfgsOutcome {
        x,
        value,
        iterations,
        converged,
        trace,
    }
}
