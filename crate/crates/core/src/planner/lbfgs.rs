//! Bound-constrained limited-memory BFGS with projected Armijo backtracking.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LbfgsSettings {
    pub memory: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    pub max_iterations: usize,
    /// Stop when `‖P(x − ∇f) − x‖ ≤ tol`.
    pub gradient_tolerance: f64,
    pub max_backtracks: usize,
    /// Largest coordinate change of a first or reset step.
    pub initial_step: f64,
    /// Cap on `Σ lever_k·|Δx_k|` per step when levers are given.
    pub max_displacement: f64,
}

impl Default for LbfgsSettings {
    fn default() -> Self {
        Self {
            memory: 10,
            armijo: 1e-4,
            max_iterations: 200,
            gradient_tolerance: 1e-6,
            max_backtracks: 40,
            initial_step: 0.1,
            max_displacement: 0.01,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Gradient,
    /// No sufficient decrease along steepest descent.
    Stalled,
    MaxIterations,
}

#[derive(Clone, Debug)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(*l, *h);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `‖P(x − g) − x‖₂`.
pub fn projected_gradient_norm(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .zip(lo.iter().zip(hi))
        .map(|((v, d), (l, h))| ((v - d).clamp(*l, *h) - v).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Minimizes `f` over the box `[lo, hi]`. `f` returns value and gradient.
/// Every iterate lies inside the box.
pub fn minimize<F>(f: F, x0: &[f64], lo: &[f64], hi: &[f64], s: &LbfgsSettings) -> LbfgsResult
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    minimize_with_levers(f, x0, lo, hi, s, None)
}

/// [`minimize`], with every step shortened so that `Σ lever_k·|Δx_k|`
/// stays within `max_displacement`. Levers bound how far a unit change of
/// each variable moves geometry, which keeps steps from tunneling through
/// thin obstacles.
pub fn minimize_with_levers<F>(mut f: F, x0: &[f64], lo: &[f64], hi: &[f64], s: &LbfgsSettings, levers: Option<&[f64]>) -> LbfgsResult
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let (mut fx, mut g) = f(&x);
    let mut evaluations = 1;
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(s.memory);
    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;

    while iterations < s.max_iterations {
        if !fx.is_finite() || projected_gradient_norm(&x, &g, lo, hi) <= s.gradient_tolerance {
            termination = if fx.is_finite() { Termination::Gradient } else { Termination::Stalled };
            break;
        }
        // variables pinned at a bound with the gradient pushing outward stay put
        let free: Vec<bool> = (0..n)
            .map(|i| lo[i] < hi[i] && !((x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0)))
            .collect();
        let masked = |v: &[f64]| -> Vec<f64> { v.iter().zip(&free).map(|(a, &m)| if m { *a } else { 0.0 }).collect() };

        let mut d = two_loop(&masked(&g), &pairs);
        d = masked(&d);
        for v in &mut d {
            *v = -*v;
        }
        let mut slope = dot(&g, &d);
        let steepest = pairs.is_empty() || !(slope < 0.0);
        if steepest {
            pairs.clear();
            d = masked(&g).iter().map(|v| -v).collect();
            slope = dot(&g, &d);
            if !(slope < 0.0) {
                termination = Termination::Gradient;
                break;
            }
        }
        let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut step = if steepest { (s.initial_step / dmax).min(1.0) } else { 1.0 };
        if let Some(w) = levers {
            let reach: f64 = d.iter().zip(w).map(|(v, l)| v.abs() * l).sum();
            if reach * step > s.max_displacement {
                step = s.max_displacement / reach;
            }
        }

        let mut accepted = None;
        for _ in 0..=s.max_backtracks {
            let mut xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            project(&mut xn, lo, hi);
            let (fn_, gn) = f(&xn);
            evaluations += 1;
            let decrease = dot(&g, &xn.iter().zip(&x).map(|(a, b)| a - b).collect::<Vec<_>>());
            if fn_.is_finite() && fn_ <= fx + s.armijo * decrease.min(0.0) && decrease < 0.0 {
                accepted = Some((xn, fn_, gn));
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        let Some((xn, fn_, gn)) = accepted else {
            if steepest {
                termination = Termination::Stalled;
                break;
            }
            pairs.clear();
            continue;
        };
        let sv: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&sv, &yv);
        if sy > 1e-12 * dot(&sv, &sv).sqrt() * dot(&yv, &yv).sqrt() && sy > 0.0 {
            if pairs.len() == s.memory {
                pairs.pop_front();
            }
            pairs.push_back((sv, yv, 1.0 / sy));
        }
        x = xn;
        fx = fn_;
        g = gn;
    }
    LbfgsResult { x, value: fx, iterations, evaluations, termination }
}

/// `H·q` for the inverse-Hessian estimate held in `pairs`.
fn two_loop(q: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut r = q.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * dot(s, &r);
        for (ri, yi) in r.iter_mut().zip(y) {
            *ri -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.back() {
        let gamma = dot(s, y) / dot(y, y);
        for v in &mut r {
            *v *= gamma;
        }
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &r);
        for (ri, si) in r.iter_mut().zip(s) {
            *ri += (a - b) * si;
        }
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> (f64, Vec<f64>) {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        (f, vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)])
    }

    #[test]
    fn solves_rosenbrock() {
        let inf = f64::INFINITY;
        let r = minimize(rosenbrock, &[-1.2, 1.0], &[-inf, -inf], &[inf, inf], &LbfgsSettings::default());
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5, "{:?}", r);
        assert_eq!(r.termination, Termination::Gradient);
    }

    #[test]
    fn respects_bounds_at_every_iterate() {
        let lo = [-0.5, 2.0];
        let hi = [0.5, 3.0];
        let mut seen = Vec::new();
        let r = minimize(
            |x| {
                seen.push(x.to_vec());
                rosenbrock(x)
            },
            &[0.0, 2.5],
            &lo,
            &hi,
            &LbfgsSettings::default(),
        );
        for x in &seen {
            assert!(x[0] >= lo[0] && x[0] <= hi[0] && x[1] >= lo[1] && x[1] <= hi[1]);
        }
        // minimum of the restricted problem lies on the x = 0.5 face
        assert!((r.x[0] - 0.5).abs() < 1e-9);
        assert!(projected_gradient_norm(&r.x, &rosenbrock(&r.x).1, &lo, &hi) <= 1e-5);
    }

    #[test]
    fn fixed_variables_never_move() {
        let r = minimize(
            |x| (x.iter().map(|v| v * v).sum(), x.iter().map(|v| 2.0 * v).collect()),
            &[1.0, 2.0, 3.0],
            &[-5.0, 2.0, -5.0],
            &[5.0, 2.0, 5.0],
            &LbfgsSettings::default(),
        );
        assert_eq!(r.x[1], 2.0);
        assert!(r.x[0].abs() < 1e-6 && r.x[2].abs() < 1e-6);
    }
}
