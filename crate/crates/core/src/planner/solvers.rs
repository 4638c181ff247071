//! Joint, pick-then-place and sampling solvers.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::al::{run_al, AlRun};
use super::eval::{Evaluator, Frame, Terms};
use super::init::{fallback_place, grasp_inits, init_place_prior, place_prior_candidates, reach, reach_or_closest, PlaceCandidate};
use super::lbfgs::Termination;
use super::{check_constraints, IterationCounts, Method, Problem, Solution, SolveStatus};
use crate::costs::{PlacePose, PlacementCost};
use crate::geom::{wrap_angle, Pose2};
use crate::grasp::{sample_prior_labeled, GraspConfig};
use crate::{Error, Result};

/// Offsets the seed of the placement draws from that of the grasp draws.
const PLACE_DRAW_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

/// Place candidates tried for the grasp chosen by pick-then-place.
const SEQUENTIAL_PLACE_TRIES: usize = 8;

fn par_map<T: Sync, U: Send>(parallel: bool, items: &[T], f: impl Fn(usize, &T) -> U + Sync + Send) -> Vec<U> {
    if parallel {
        items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()
    } else {
        items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
    }
}

/// Box bounds over the full variable vector.
fn bounds(ev: &Evaluator<'_>) -> (Vec<f64>, Vec<f64>) {
    let p = ev.problem;
    let l = ev.layout;
    let n = l.len();
    let mut lo = vec![f64::NEG_INFINITY; n];
    let mut hi = vec![f64::INFINITY; n];
    let (tl, th) = p.place_translation_bounds();
    let planar = l.np == 3;
    let m = if planar { 2 } else { 3 };
    lo[..m].copy_from_slice(&tl[..m]);
    hi[..m].copy_from_slice(&th[..m]);
    let hand = p.spec.grasp_model.hand();
    lo[l.preshape()] = hand.preshape_min;
    hi[l.preshape()] = hand.preshape_max;
    for (k, j) in l.q_grasp().zip(&p.spec.arm.joints).chain(l.q_place().zip(&p.spec.arm.joints)) {
        lo[k] = j.lower;
        hi[k] = j.upper;
    }
    (lo, hi)
}

/// Upper bounds on how far geometry moves per unit change of each variable.
fn levers(ev: &Evaluator<'_>, x: &[f64]) -> Vec<f64> {
    let p = ev.problem;
    let l = ev.layout;
    let st = ev.decode(x);
    let object = p.object_local.iter().map(|q| q.norm()).fold(0.0, f64::max);
    let hand = p.spec.gripper.spheres().iter().map(|s| s.center().norm() + s.radius).fold(0.0, f64::max);
    let grip = (st.grasp.palm.translation - p.centroid).norm() + hand;
    let mut w = vec![0.0; l.len()];
    for k in l.place() {
        w[k] = if k < 2 || (l.np == 6 && k == 2) { 1.0 } else { object.max(grip) };
    }
    for k in l.palm_t() {
        w[k] = 1.0;
    }
    for k in l.palm_w() {
        w[k] = hand;
    }
    w
}

fn freeze(lo: &mut [f64], hi: &mut [f64], x: &[f64], r: std::ops::Range<usize>) {
    for k in r {
        lo[k] = x[k];
        hi[k] = x[k];
    }
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(*l, *h);
    }
}

fn normalize_place(place: PlacePose) -> PlacePose {
    match place {
        PlacePose::Planar(p) => PlacePose::Planar(Pose2::new(p.x, p.y, wrap_angle(p.theta))),
        s => s,
    }
}

/// Builds a scored, checked solution from a configuration.
fn assemble(
    problem: &Problem,
    method: Method,
    place: PlacePose,
    grasp: GraspConfig,
    q_grasp: Vec<f64>,
    q_place: Vec<f64>,
    run: Option<&AlRun>,
) -> Solution {
    let ctx = problem.cost_context();
    let kind = ctx.params.kind;
    let place = normalize_place(place);
    let h = kind.value(&place, ctx).expect("task space matches the problem");
    let model = &problem.spec.grasp_model;
    let (lf, _) = model.log_success(&grasp, problem.summary());
    let mut sol = Solution {
        method,
        grasp,
        place,
        q_grasp,
        q_place,
        objective: ctx.params.alpha * h - lf,
        grasp_success: lf.exp(),
        place_likelihood: kind.likelihood(&place, ctx).expect("task space matches the problem"),
        residuals: Default::default(),
        iterations: run.map(|r| r.counts).unwrap_or_default(),
        wall_time: Default::default(),
        status: SolveStatus::Infeasible,
        restart: 0,
        violation_history: run.map(|r| r.history.clone()).unwrap_or_default(),
    };
    sol.residuals = check_constraints(&sol, problem);
    if sol.residuals.is_feasible(&problem.spec.solver.tolerances) {
        sol.status = match run.map(|r| r.last_termination) {
            Some(Termination::MaxIterations) => SolveStatus::MaxIterations,
            _ => SolveStatus::Converged,
        };
    }
    sol
}

/// Runs the outer loop from `x0` and assembles the result.
fn optimize(
    problem: &Problem,
    method: Method,
    terms: Terms,
    x0: &[f64],
    frame: Frame,
    freeze_ranges: &[std::ops::Range<usize>],
) -> (Solution, Vec<f64>, Frame) {
    let s = &problem.spec.solver;
    let mut ev = Evaluator::new(problem, terms, problem.spec.epsilon + s.collision_slack, frame);
    let (mut lo, mut hi) = bounds(&ev);
    let mut x = x0.to_vec();
    project(&mut x, &lo, &hi);
    for r in freeze_ranges {
        freeze(&mut lo, &mut hi, &x, r.clone());
    }
    let w = levers(&ev, &x);
    let mut inner = s.lbfgs;
    inner.max_displacement = inner.max_displacement.min(1.5 * ev.margin);
    let run = run_al(&mut ev, &x, &lo, &hi, Some(&w), &s.al, &inner);
    let st = ev.decode(&run.x);
    let sol = assemble(problem, method, st.place, st.grasp, st.q_grasp, st.q_place, Some(&run));
    (sol, run.x, ev.frame)
}

/// Orders solutions: feasible before infeasible, then by objective, then
/// by the worst residual for infeasible ones. Earlier entries win ties.
fn pick_best(sols: Vec<Solution>) -> Option<Solution> {
    let worst = |s: &Solution| {
        let r = &s.residuals;
        let c = r.collision().unwrap_or(f64::NEG_INFINITY).max(0.0);
        r.fk_grasp.max(r.fk_place).max(c).max(r.place_bounds.max(0.0))
    };
    let better = |a: &Solution, b: &Solution| match (a.status.is_feasible(), b.status.is_feasible()) {
        (true, false) => true,
        (false, true) => false,
        (true, true) => a.objective < b.objective,
        (false, false) => worst(a) < worst(b),
    };
    let mut best: Option<Solution> = None;
    for s in sols {
        if best.as_ref().is_none_or(|b| better(&s, b)) {
            best = Some(s);
        }
    }
    best
}

/// Joint optimization over grasp, placement and both arm configurations.
/// Also refines the pick-then-place answer, which it therefore never does
/// worse than.
pub fn joint_solve(problem: &Problem, seed: u64) -> Result<Solution> {
    let start = Instant::now();
    let seq = sequential_solve(problem, seed)?;
    let mut sol = joint_solve_from(problem, seed, Some(&seq))?;
    sol.wall_time = start.elapsed();
    Ok(sol)
}

/// Joint optimization from prior restarts, plus `warm` and a refinement of
/// it when given.
pub fn joint_solve_from(problem: &Problem, seed: u64, warm: Option<&Solution>) -> Result<Solution> {
    let start = Instant::now();
    let s = &problem.spec.solver;
    let grasps = grasp_inits(problem, s.grasp_restarts.max(1), seed)?;
    let per_grasp = par_map(s.parallel, &grasps, |_, g| -> Result<Vec<Solution>> {
        let q_g = reach_or_closest(problem, &g.palm, None);
        let places = match init_place_prior(problem, g, s.place_restarts.max(1)) {
            Ok(c) => c,
            Err(Error::InfeasibleInit) => {
                vec![PlaceCandidate { pose: fallback_place(problem)?, cost: 0.0, q: None }]
            }
            Err(e) => return Err(e),
        };
        Ok(places
            .iter()
            .map(|c| {
                let q_p = c.q.clone().unwrap_or_else(|| reach_or_closest(problem, &problem.palm_at_place(&c.pose, g), Some(&q_g)));
                let (x0, frame) = Evaluator::encode(problem, &c.pose, g, &q_g, &q_p);
                optimize(problem, Method::Joint, Terms::ALL, &x0, frame, &[]).0
            })
            .collect())
    });
    let mut all = Vec::new();
    let mut counts = IterationCounts::default();
    for r in per_grasp {
        for sol in r? {
            counts += sol.iterations;
            all.push(sol);
        }
    }
    if let Some(w) = warm {
        let (x0, frame) = Evaluator::encode(problem, &w.place, &w.grasp, &w.q_grasp, &w.q_place);
        let (refined, _, _) = optimize(problem, Method::Joint, Terms::ALL, &x0, frame, &[]);
        counts += refined.iterations;
        all.push(refined);
        all.push(assemble(problem, Method::Joint, w.place, w.grasp, w.q_grasp.clone(), w.q_place.clone(), None));
    }
    let indexed: Vec<Solution> = all.into_iter().enumerate().map(|(i, mut s)| { s.restart = i; s }).collect();
    let mut best = pick_best(indexed).expect("at least one restart runs");
    best.iterations = counts;
    best.wall_time = start.elapsed();
    Ok(best)
}

/// Pick-then-place: the best grasp alone, then the best placement it allows.
pub fn sequential_solve(problem: &Problem, seed: u64) -> Result<Solution> {
    let start = Instant::now();
    let s = &problem.spec.solver;
    let tol = &s.tolerances;
    let grasps = grasp_inits(problem, s.grasp_restarts.max(1), seed)?;
    let parking = fallback_place(problem)?;
    let nq = problem.spec.arm.dof();
    let probe = Evaluator::new(problem, Terms::GRASP, 0.0, Frame { place_rot: Default::default(), palm_rot: Default::default() });
    let l = probe.layout;

    // Stage one: grasp objective and grasp-side constraints only.
    let stage1 = par_map(s.parallel, &grasps, |_, g| {
        let q_g = reach_or_closest(problem, &g.palm, None);
        let (x0, frame) = Evaluator::encode(problem, &parking, g, &q_g, &vec![0.0; nq]);
        let (sol, x, frame) = optimize(problem, Method::Sequential, Terms::GRASP, &x0, frame, &[l.place(), l.q_place()]);
        let check = Evaluator::new(problem, Terms::GRASP, problem.spec.epsilon, frame).evaluate(&x);
        let ok = check.fk_grasp.is_some_and(|e| e <= tol.fk) && check.ineq.iter().all(|v| *v <= tol.collision);
        (sol, ok)
    });
    let mut counts = IterationCounts::default();
    let mut best_grasp: Option<(usize, Solution)> = None;
    for (i, (sol, ok)) in stage1.into_iter().enumerate() {
        counts += sol.iterations;
        if ok && best_grasp.as_ref().is_none_or(|(_, b)| sol.grasp_success > b.grasp_success) {
            best_grasp = Some((i, sol));
        }
    }
    let Some((gi, gsol)) = best_grasp else {
        let g = &grasps[0];
        let mut sol = assemble(problem, Method::Sequential, parking, *g, reach_or_closest(problem, &g.palm, None), vec![0.0; nq], None);
        sol.status = SolveStatus::Infeasible;
        sol.iterations = counts;
        sol.wall_time = start.elapsed();
        return Ok(sol);
    };

    // Stage two: the grasp is fixed; optimize the placement for it.
    let g = gsol.grasp;
    let q_g = gsol.q_grasp.clone();
    let places = match init_place_prior(problem, &g, SEQUENTIAL_PLACE_TRIES) {
        Ok(c) => c,
        Err(Error::InfeasibleInit) => vec![PlaceCandidate { pose: parking, cost: 0.0, q: None }],
        Err(e) => return Err(e),
    };
    let stage2 = par_map(s.parallel, &places, |_, c| {
        let q_p = c.q.clone().unwrap_or_else(|| reach_or_closest(problem, &problem.palm_at_place(&c.pose, &g), Some(&q_g)));
        let (x0, frame) = Evaluator::encode(problem, &c.pose, &g, &q_g, &q_p);
        let frozen = [l.grasp_block(), l.q_grasp()];
        let mut sol = optimize(problem, Method::Sequential, Terms::PLACE, &x0, frame, &frozen).0;
        sol.grasp = g;
        sol.q_grasp = q_g.clone();
        sol
    });
    for sol in &stage2 {
        counts += sol.iterations;
    }
    let n = places.len();
    let mut best = pick_best(stage2.into_iter().enumerate().map(|(i, mut s)| { s.restart = gi * n + i; s }).collect())
        .expect("at least one place candidate");
    if !best.status.is_feasible() {
        best.status = SolveStatus::PlacementInfeasible;
    }
    best.iterations = counts;
    best.wall_time = start.elapsed();
    Ok(best)
}

/// Best of `n` prior grasps, each paired with a place candidate drawn
/// uniformly from the collision-free candidates of its prior component and
/// given arm configurations by inverse kinematics.
pub fn sampling_solve(problem: &Problem, n: usize, seed: u64) -> Result<Solution> {
    let start = Instant::now();
    let s = &problem.spec.solver;
    let prior = problem.prior();
    let model = &problem.spec.grasp_model;
    let hand = model.hand();
    let samples = sample_prior_labeled(prior, problem.summary(), hand, n, seed)?;
    let pools: Vec<Vec<PlaceCandidate>> = par_map(s.parallel, prior.components(), |k, _| {
        let mean = prior.mean_grasp(k, problem.summary(), hand);
        place_prior_candidates(problem, &mean)
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(PLACE_DRAW_STREAM));
    let draws: Vec<Option<usize>> = samples
        .iter()
        .map(|(k, _)| (!pools[*k].is_empty()).then(|| rng.random_range(0..pools[*k].len())))
        .collect();
    let results = par_map(s.parallel, &samples, |i, (k, g)| {
        let c = &pools[*k][draws[i]?];
        let q_g = reach(problem, &g.palm, None)?;
        let q_p = reach(problem, &problem.palm_at_place(&c.pose, g), c.q.as_deref())?;
        let mut sol = assemble(problem, Method::Sampling, c.pose, *g, q_g, q_p, None);
        sol.restart = i;
        sol.status.is_feasible().then_some(sol)
    });
    let counts = IterationCounts { restarts: n, ..Default::default() };
    let mut best = match pick_best(results.into_iter().flatten().collect()) {
        Some(b) => b,
        None => {
            let (_, g) = samples[0];
            let place = fallback_place(problem)?;
            let q_g = reach_or_closest(problem, &g.palm, None);
            let q_p = reach_or_closest(problem, &problem.palm_at_place(&place, &g), Some(&q_g));
            let mut sol = assemble(problem, Method::Sampling, place, g, q_g, q_p, None);
            sol.status = SolveStatus::Infeasible;
            sol
        }
    };
    best.iterations = counts;
    best.wall_time = start.elapsed();
    Ok(best)
}
