//! Augmented Lagrangian outer loop.

use serde::{Deserialize, Serialize};

use super::eval::{Evaluation, Evaluator};
use super::lbfgs::{self, LbfgsSettings, Termination};
use super::IterationCounts;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlSettings {
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    /// The penalty grows unless the violation shrinks to this fraction.
    pub required_shrink: f64,
    pub max_outer: usize,
    pub max_penalty: f64,
    /// Violation at which the loop may stop.
    pub tolerance: f64,
}

impl Default for AlSettings {
    fn default() -> Self {
        Self {
            initial_penalty: 1000.0,
            penalty_growth: 5.0,
            required_shrink: 0.25,
            max_outer: 15,
            max_penalty: 1e9,
            tolerance: 1e-4,
        }
    }
}

/// Multipliers and penalty between outer iterations.
#[derive(Clone, Debug, PartialEq)]
pub struct AlState {
    pub lambda: Vec<f64>,
    pub nu: Vec<f64>,
    pub penalty: f64,
    pub outer: usize,
}

impl AlState {
    pub fn new(n_eq: usize, n_ineq: usize, penalty: f64) -> Self {
        Self { lambda: vec![0.0; n_eq], nu: vec![0.0; n_ineq], penalty, outer: 0 }
    }

    /// `f + Σ λc + ½μΣc² + (1/2μ)Σ[max(0, ν + μg)² − ν²]` and its gradient.
    pub(crate) fn merit(&self, e: &Evaluation) -> (f64, Vec<f64>) {
        let mu = self.penalty;
        let mut v = e.value;
        let mut g = e.gradient.clone();
        for ((c, row), lam) in e.eq.iter().zip(&e.eq_grad).zip(&self.lambda) {
            v += lam * c + 0.5 * mu * c * c;
            let w = lam + mu * c;
            for (gi, ri) in g.iter_mut().zip(row) {
                *gi += w * ri;
            }
        }
        for ((c, row), nu) in e.ineq.iter().zip(&e.ineq_grad).zip(&self.nu) {
            let s = (nu + mu * c).max(0.0);
            v += (s * s - nu * nu) / (2.0 * mu);
            if s > 0.0 {
                for (gi, ri) in g.iter_mut().zip(row) {
                    *gi += s * ri;
                }
            }
        }
        (v, g)
    }

    fn update(&mut self, e: &Evaluation) {
        let mu = self.penalty;
        for (lam, c) in self.lambda.iter_mut().zip(&e.eq) {
            *lam += mu * c;
        }
        for (nu, c) in self.nu.iter_mut().zip(&e.ineq) {
            *nu = (*nu + mu * c).max(0.0);
        }
    }
}

pub(crate) struct AlRun {
    pub x: Vec<f64>,
    pub history: Vec<f64>,
    pub counts: IterationCounts,
    pub last_termination: Termination,
}

/// Minimizes the evaluator's objective subject to its constraints over the
/// box `[lo, hi]`. Rotation increments are folded into the evaluator's frame
/// after every outer iteration.
pub(crate) fn run_al(
    ev: &mut Evaluator<'_>,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    levers: Option<&[f64]>,
    al: &AlSettings,
    inner: &LbfgsSettings,
) -> AlRun {
    let mut x = x0.to_vec();
    let e0 = ev.evaluate(&x);
    let mut state = AlState::new(e0.eq.len(), e0.ineq.len(), al.initial_penalty);
    let mut prev = e0.violation();
    let mut history = Vec::new();
    let mut counts = IterationCounts { restarts: 1, ..Default::default() };
    let mut termination = Termination::Gradient;

    for k in 0..al.max_outer {
        state.outer = k;
        let res = {
            let ev_ref = &*ev;
            let st = &state;
            lbfgs::minimize_with_levers(|y| st.merit(&ev_ref.evaluate(y)), &x, lo, hi, inner, levers)
        };
        counts.outer += 1;
        counts.inner += res.iterations;
        counts.evaluations += res.evaluations;
        termination = res.termination;
        x = res.x;
        ev.rebase(&mut x);
        let last = ev.evaluate(&x);
        let v = last.violation();
        history.push(v);
        state.update(&last);
        if v <= al.tolerance && termination != Termination::MaxIterations {
            break;
        }
        if v > al.required_shrink * prev {
            state.penalty = (state.penalty * al.penalty_growth).min(al.max_penalty);
        }
        prev = v;
    }
    AlRun { x, history, counts, last_termination: termination }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::eval::IneqKind;

    fn eval_at(x: &[f64]) -> Evaluation {
        // min x² + y² s.t. x + y = 1, y ≤ 0.2
        Evaluation {
            value: x[0] * x[0] + x[1] * x[1],
            gradient: vec![2.0 * x[0], 2.0 * x[1]],
            eq: vec![x[0] + x[1] - 1.0],
            eq_grad: vec![vec![1.0, 1.0]],
            ineq: vec![x[1] - 0.2],
            ineq_grad: vec![vec![0.0, 1.0]],
            ineq_kind: vec![IneqKind::Table],
            fk_grasp: None,
            fk_place: None,
            log_success: None,
            place_cost: None,
        }
    }

    #[test]
    fn merit_gradient_matches_finite_differences() {
        let mut s = AlState::new(1, 1, 7.0);
        s.lambda[0] = 0.3;
        s.nu[0] = 0.5;
        for x in [[0.1, 0.4], [0.9, -0.7], [2.0, 0.19]] {
            let (_, g) = s.merit(&eval_at(&x));
            for k in 0..2 {
                let h = 1e-6;
                let mut a = x;
                let mut b = x;
                a[k] += h;
                b[k] -= h;
                let fd = (s.merit(&eval_at(&a)).0 - s.merit(&eval_at(&b)).0) / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn solves_small_constrained_problem() {
        let inf = f64::INFINITY;
        let mut x = vec![0.0, 0.0];
        let mut s = AlState::new(1, 1, 10.0);
        let mut prev = eval_at(&x).violation();
        for _ in 0..15 {
            let st = s.clone();
            x = lbfgs::minimize(|y| st.merit(&eval_at(y)), &x, &[-inf, -inf], &[inf, inf], &LbfgsSettings::default()).x;
            let e = eval_at(&x);
            s.update(&e);
            if e.violation() > 0.25 * prev {
                s.penalty *= 5.0;
            }
            prev = e.violation();
        }
        assert!((x[0] - 0.8).abs() < 1e-5 && (x[1] - 0.2).abs() < 1e-5, "{x:?}");
    }
}
