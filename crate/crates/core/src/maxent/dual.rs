//! Damped Newton minimization of the dual of an entropy program.
//!
//! Primal points are recovered as `f ∝ g · exp(eta · Bᵀy)` grouped by state,
//! so each accepted step is a multiplicative update of a strictly positive
//! pmf. The dual has the form
//!
//! ```text
//! D(y) = alpha · log Σ_x ( Σ_{u} g(x,u) exp(eta · c(x,u)) )^beta,   c = Bᵀ y
//! ```
//!
//! which covers the joint entropy (`alpha = beta = eta = 1`, `g = 1`) and the
//! KL-proximal step for the marginal entropy (`beta = 1/(1+eta)`,
//! `alpha = 1 + 1/eta`). In both cases `∂D/∂c = f`, so `∇D = B f`.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::error::SolveError;

pub(crate) struct DualProblem {
    pub n_coords: usize,
    /// Coordinate ranges sharing a state.
    pub groups: Vec<Range<usize>>,
    /// `rows x n_coords`, row-major.
    pub b: Vec<f64>,
    pub rows: usize,
    /// Rows `0..n_eq` have free multipliers, the rest are constrained `>= 0`.
    pub n_eq: usize,
    pub log_g: Vec<f64>,
    pub eta: f64,
    pub beta: f64,
    pub alpha: f64,
}

pub(crate) struct Eval {
    pub value: f64,
    pub f: Vec<f64>,
    pub q: Vec<f64>,
    pub w: Vec<f64>,
    pub grad: Vec<f64>,
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

impl DualProblem {
    fn row(&self, r: usize) -> &[f64] {
        &self.b[r * self.n_coords..(r + 1) * self.n_coords]
    }

    /// `c = Bᵀ y`.
    pub fn multipliers(&self, y: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; self.n_coords];
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            for (cj, bj) in c.iter_mut().zip(self.row(r)) {
                *cj += yr * bj;
            }
        }
        c
    }

    pub fn eval(&self, y: &[f64]) -> Eval {
        let c = self.multipliers(y);
        let s: Vec<f64> = c
            .iter()
            .zip(&self.log_g)
            .map(|(cj, lg)| lg + self.eta * cj)
            .collect();
        let lz: Vec<f64> = self
            .groups
            .iter()
            .map(|g| log_sum_exp(s[g.clone()].iter().copied()))
            .collect();
        let t: Vec<f64> = lz.iter().map(|l| self.beta * l).collect();
        let total = log_sum_exp(t.iter().copied());

        let mut f = vec![0.0; self.n_coords];
        let mut q = vec![0.0; self.n_coords];
        let mut w = vec![0.0; self.groups.len()];
        for (gi, g) in self.groups.iter().enumerate() {
            let log_w = t[gi] - total;
            w[gi] = log_w.exp();
            for j in g.clone() {
                let log_q = s[j] - lz[gi];
                q[j] = log_q.exp();
                f[j] = (log_w + log_q).exp();
            }
        }
        let grad = (0..self.rows)
            .map(|r| self.row(r).iter().zip(&f).map(|(b, fj)| b * fj).sum())
            .collect();
        Eval {
            value: self.alpha * total,
            f,
            q,
            w,
            grad,
        }
    }

    /// Hessian of `D` restricted to `free` rows.
    fn hessian(&self, ev: &Eval, free: &[usize]) -> DMatrix<f64> {
        let k = free.len();
        let mut h = DMatrix::<f64>::zeros(k, k);
        let scaled: Vec<Vec<f64>> = free
            .iter()
            .map(|&r| self.row(r).iter().zip(&ev.f).map(|(b, f)| b * f).collect())
            .collect();
        for a in 0..k {
            let ra = self.row(free[a]);
            for bidx in a..k {
                let v: f64 = ra.iter().zip(&scaled[bidx]).map(|(x, y)| x * y).sum();
                h[(a, bidx)] = self.eta * v;
            }
        }
        if self.beta != 1.0 {
            let coef = self.eta * (self.beta - 1.0);
            for (gi, g) in self.groups.iter().enumerate() {
                let bq: Vec<f64> = free
                    .iter()
                    .map(|&r| g.clone().map(|j| self.row(r)[j] * ev.q[j]).sum())
                    .collect();
                for a in 0..k {
                    for bidx in a..k {
                        h[(a, bidx)] += coef * ev.w[gi] * bq[a] * bq[bidx];
                    }
                }
            }
        }
        let coef = self.beta * self.eta;
        for a in 0..k {
            for bidx in a..k {
                h[(a, bidx)] -= coef * ev.grad[free[a]] * ev.grad[free[bidx]];
                h[(bidx, a)] = h[(a, bidx)];
            }
        }
        h
    }

    fn projected_gradient_norm(&self, y: &[f64], grad: &[f64]) -> f64 {
        grad.iter()
            .enumerate()
            .map(|(r, &g)| {
                if r < self.n_eq || y[r] > 0.0 {
                    g.abs()
                } else {
                    (-g).max(0.0)
                }
            })
            .fold(0.0, f64::max)
    }

    fn project(&self, y: &mut [f64]) {
        for v in &mut y[self.n_eq..] {
            *v = v.max(0.0);
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct NewtonSettings {
    pub grad_tol: f64,
    /// A stalled line search is accepted as convergence below this gradient norm.
    pub stall_tol: f64,
    pub max_iter: usize,
    /// Dual values below this prove the primal infeasible.
    pub infeasible_below: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum DualOutcome {
    Converged,
    Infeasible,
}

pub(crate) struct DualResult {
    pub outcome: DualOutcome,
    pub y: Vec<f64>,
    pub eval: Eval,
    pub iterations: usize,
    pub grad_norm: f64,
}

const STALL_STEPS: usize = 50;

pub(crate) fn minimize(
    p: &DualProblem,
    mut y: Vec<f64>,
    s: &NewtonSettings,
) -> Result<DualResult, SolveError> {
    p.project(&mut y);
    let mut ev = p.eval(&y);
    let mut pg = p.projected_gradient_norm(&y, &ev.grad);
    let mut iterations = 0;
    let mut best_pg = pg;
    let mut idle = 0;
    loop {
        if ev.value < s.infeasible_below || !ev.value.is_finite() {
            return Ok(DualResult {
                outcome: DualOutcome::Infeasible,
                y,
                eval: ev,
                iterations,
                grad_norm: pg,
            });
        }
        if pg <= s.grad_tol {
            break;
        }
        // accepted steps that only shuffle rounding error
        if idle >= STALL_STEPS && pg <= s.stall_tol {
            break;
        }
        if iterations >= s.max_iter {
            return Err(SolveError::NonConvergence {
                iterations,
                gradient: pg,
            });
        }
        iterations += 1;

        let free: Vec<usize> = (0..p.rows)
            .filter(|&r| r < p.n_eq || y[r] > 0.0 || ev.grad[r] < 0.0)
            .collect();
        let h = p.hessian(&ev, &free);
        let g = DVector::from_iterator(free.len(), free.iter().map(|&r| ev.grad[r]));
        let dir = newton_direction(&h, &g);

        let mut d = vec![0.0; p.rows];
        for (i, &r) in free.iter().enumerate() {
            d[r] = dir[i];
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..80 {
            let mut trial: Vec<f64> = y.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            p.project(&mut trial);
            let tev = p.eval(&trial);
            let decrease: f64 = ev
                .grad
                .iter()
                .zip(trial.iter().zip(&y))
                .map(|(g, (t, o))| g * (t - o))
                .sum();
            let tpg = p.projected_gradient_norm(&trial, &tev.grad);
            let armijo = tev.value <= ev.value + 1e-4 * decrease;
            // near the optimum D is flat to rounding; fall back on the gradient
            let flat = tev.value <= ev.value + 1e-13 * (1.0 + ev.value.abs()) && tpg < 0.5 * pg;
            if tev.value.is_finite() && (armijo || flat) {
                accepted = Some((trial, tev, tpg));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((trial, tev, tpg)) => {
                y = trial;
                ev = tev;
                pg = tpg;
                if pg < 0.99 * best_pg {
                    best_pg = pg;
                    idle = 0;
                } else {
                    idle += 1;
                }
            }
            None if pg <= s.stall_tol => break,
            None => {
                return Err(SolveError::NonConvergence {
                    iterations,
                    gradient: pg,
                })
            }
        }
    }
    Ok(DualResult {
        outcome: DualOutcome::Converged,
        y,
        eval: ev,
        iterations,
        grad_norm: pg,
    })
}

/// Solves `(H + delta I) d = -g`, raising `delta` until Cholesky succeeds.
fn newton_direction(h: &DMatrix<f64>, g: &DVector<f64>) -> DVector<f64> {
    let k = h.nrows();
    let scale = (0..k)
        .map(|i| h[(i, i)].abs())
        .fold(0.0, f64::max)
        .max(1e-300);
    let mut delta = 1e-14 * scale;
    for _ in 0..40 {
        let mut reg = h.clone();
        for i in 0..k {
            reg[(i, i)] += delta;
        }
        if let Some(chol) = reg.cholesky() {
            let d = -chol.solve(g);
            if d.iter().all(|v| v.is_finite()) && d.dot(g) < 0.0 {
                return d;
            }
        }
        delta *= 100.0;
    }
    -g.clone()
}
