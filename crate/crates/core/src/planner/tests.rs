use std::sync::Arc;

use nalgebra::{DVector, Point3, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::eval::{Evaluator, Terms};
use super::init::{footprint_mask, scene_cells, Lattice};
use super::*;
use crate::costs::{PlacePose, TaskParams};
use crate::geom::{so3, Pose2, Pose3, PointCloud};
use crate::grasp::{GraspGradient, HandParams, PriorSettings, SurrogateModel, SurrogateParams};
use crate::robot::{ArmModel, GripperGeometry};
use crate::sdf::SdfSettings;

/// Surface samples of an axis-aligned box whose bottom face is centered at `base`.
fn box_surface(base: Vector3<f64>, size: Vector3<f64>, step: f64) -> PointCloud {
    let n = |s: f64| (s / step).ceil().max(1.0) as usize;
    let (nx, ny, nz) = (n(size.x), n(size.y), n(size.z));
    let mut pts = Vec::new();
    for i in 0..=nx {
        for j in 0..=ny {
            for k in 0..=nz {
                if i == 0 || i == nx || j == 0 || j == ny || k == 0 || k == nz {
                    let p = Vector3::new(
                        size.x * (i as f64 / nx as f64 - 0.5),
                        size.y * (j as f64 / ny as f64 - 0.5),
                        size.z * k as f64 / nz as f64,
                    );
                    pts.push(Point3::from(base + p));
                }
            }
        }
    }
    PointCloud::new(pts, "world")
}

fn spec(task: TaskParams, place_scene: PointCloud) -> ProblemSpec {
    ProblemSpec {
        object: box_surface(Vector3::new(0.45, 0.4, 0.0), Vector3::new(0.05, 0.07, 0.1), 0.01),
        grasp_clutter: None,
        place_scene,
        surface: PlacementSurface { min: [0.3, -0.3], max: [0.7, 0.2], height: 0.0 },
        task,
        grasp_model: Arc::new(SurrogateModel::new(SurrogateParams::default())),
        prior: PriorSettings::default(),
        arm: ArmModel::bundled(),
        gripper: GripperGeometry::default(),
        sdf: SdfSettings::default(),
        epsilon: 0.005,
        solver: SolverSettings::default(),
    }
}

fn target(x: f64, y: f64, theta: f64) -> TaskParams {
    TaskParams::target(PlacePose::Planar(Pose2::new(x, y, theta)), 5.0)
}

/// `k` boxes scattered over the placement surface.
fn clutter(k: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = PointCloud::empty("world");
    for _ in 0..k {
        let base = Vector3::new(rng.random_range(0.3..0.7), rng.random_range(-0.3..0.2), 0.0);
        let size = Vector3::new(rng.random_range(0.04..0.1), rng.random_range(0.04..0.1), rng.random_range(0.04..0.15));
        c.extend(&box_surface(base, size, 0.01));
    }
    c
}

fn empty() -> PointCloud {
    PointCloud::empty("world")
}

/// A grasp model with a fixed logit.
struct ConstModel(f64, HandParams);

impl GraspModel for ConstModel {
    fn logit(&self, _: &GraspConfig, _: &crate::grasp::ObjectSummary) -> (f64, GraspGradient) {
        (self.0, GraspGradient::zeros())
    }

    fn hand(&self) -> &HandParams {
        &self.1
    }
}

fn random_grasp(rng: &mut ChaCha8Rng) -> GraspConfig {
    let t = Vector3::new(rng.random_range(0.3..0.6), rng.random_range(0.2..0.6), rng.random_range(0.0..0.3));
    let r = UnitQuaternion::from_scaled_axis(Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0)));
    GraspConfig::new(Pose3::from_parts(t, r), rng.random_range(0.1..0.9))
}

fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-8)
}

#[test]
fn objective_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let planar = Problem::new(spec(target(0.5, 0.0, 0.4), empty())).unwrap();
    let mut stack = spec(TaskParams::stack(Vector3::new(0.5, -0.1, 0.05), 2.0), empty());
    stack.task.tether = 10.0;
    let stack = Problem::new(stack).unwrap();
    let mut checked = 0;
    for i in 0..60 {
        let (p, place) = if i % 2 == 0 {
            (&planar, PlacePose::Planar(Pose2::new(rng.random_range(0.3..0.7), rng.random_range(-0.3..0.2), rng.random_range(-3.0..3.0))))
        } else {
            let r = UnitQuaternion::from_scaled_axis(Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0)));
            let t = Vector3::new(rng.random_range(0.3..0.7), rng.random_range(-0.3..0.2), rng.random_range(0.0..0.3));
            (&stack, PlacePose::Spatial(Pose3::from_parts(t, r)))
        };
        let g = random_grasp(&mut rng);
        let (_, grad) = objective(p, &g, &place).unwrap();
        let np = place.space().dim();
        let h = 1e-6;
        let f = |place: &PlacePose, g: &GraspConfig| objective(p, g, place).unwrap().0;
        let fd = DVector::from_fn(np + 7, |k, _| {
            let shift = |s: f64| -> (PlacePose, GraspConfig) {
                let mut pl = place;
                let mut gg = g;
                if k < np {
                    match &mut pl {
                        PlacePose::Planar(q) => match k {
                            0 => q.x += s,
                            1 => q.y += s,
                            _ => q.theta += s,
                        },
                        PlacePose::Spatial(q) => {
                            if k < 3 {
                                q.translation[k] += s;
                            } else {
                                let d = Vector3::from_fn(|j, _| if j == k - 3 { s } else { 0.0 });
                                *q = Pose3::from_rotation_matrix(q.translation, &(so3::exp(&d) * q.rotation().to_rotation_matrix()));
                            }
                        }
                    }
                } else {
                    let j = k - np;
                    if j < 3 {
                        gg.palm.translation[j] += s;
                    } else if j < 6 {
                        let d = Vector3::from_fn(|m, _| if m == j - 3 { s } else { 0.0 });
                        gg.palm = Pose3::from_rotation_matrix(gg.palm.translation, &(so3::exp(&d) * gg.palm.rotation().to_rotation_matrix()));
                    } else {
                        gg.preshape += s;
                    }
                }
                (pl, gg)
            };
            let (a, ga) = shift(h);
            let (b, gb) = shift(-h);
            (f(&a, &ga) - f(&b, &gb)) / (2.0 * h)
        });
        // the stacking cost has kinks where a rotation entry crosses zero
        if let PlacePose::Spatial(q) = place {
            if q.rotation_matrix().iter().any(|v| v.abs() < 1e-3) {
                continue;
            }
        }
        let e = rel_err(&grad, &fd);
        assert!(e <= 1e-4, "point {i}: rel err {e}\n{grad}\n{fd}");
        checked += 1;
    }
    assert!(checked >= 50, "only {checked} points checked");
}

#[test]
fn objective_vanishes_when_both_terms_are_certain() {
    let mut s = spec(target(0.5, 0.0, 0.0), empty());
    s.grasp_model = Arc::new(ConstModel(60.0, HandParams::default()));
    let p = Problem::new(s).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (v, g) = objective(&p, &random_grasp(&mut rng), &PlacePose::Planar(Pose2::new(0.5, 0.0, 0.0))).unwrap();
    assert!(v.abs() < 1e-12 && g.norm() < 1e-12, "{v} {g}");
}

#[test]
fn doubling_alpha_doubles_the_place_term() {
    let mut s = spec(target(0.5, 0.0, 0.0), empty());
    s.grasp_model = Arc::new(ConstModel(60.0, HandParams::default()));
    let p1 = Problem::new(s.clone()).unwrap();
    s.task.alpha *= 2.0;
    let p2 = Problem::new(s).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let g = random_grasp(&mut rng);
        let x = PlacePose::Planar(Pose2::new(rng.random_range(0.3..0.7), rng.random_range(-0.3..0.2), rng.random_range(-3.0..3.0)));
        let (a, _) = objective(&p1, &g, &x).unwrap();
        let (b, _) = objective(&p2, &g, &x).unwrap();
        assert!((b - 2.0 * a).abs() <= 1e-9 * (1.0 + b.abs()), "{a} {b}");
    }
}

#[test]
fn trivial_scene_places_at_the_target() {
    let p = Problem::new(spec(target(0.5, -0.05, 0.3), empty())).unwrap();
    for sol in [joint_solve(&p, 0).unwrap(), sequential_solve(&p, 0).unwrap()] {
        assert_eq!(sol.status, SolveStatus::Converged, "{}", sol.method);
        assert!(sol.place_likelihood >= 0.99, "{}: {}", sol.method, sol.place_likelihood);
        assert!(sol.residuals.is_feasible(&Tolerances::default()));
    }
}

#[test]
fn unreachable_target_gives_a_feasible_compromise() {
    // the target lies off the surface
    let p = Problem::new(spec(target(0.9, 0.5, 0.0), empty())).unwrap();
    let sol = joint_solve(&p, 0).unwrap();
    assert!(sol.status.is_feasible(), "{:?}", sol.status);
    assert!(sol.place_likelihood < 1.0);
    let (lo, hi) = p.place_translation_bounds();
    let t = p.place_pose3(&sol.place).translation;
    // pushed into the nearest corner
    assert!((t.x - hi[0]).abs() < 1e-3 && (t.y - hi[1]).abs() < 1e-3, "{t} {lo:?} {hi:?}");
}

#[test]
fn residuals_agree_with_the_solver_diagnostics() {
    for seed in 0..4 {
        let p = Problem::new(spec(target(0.5, -0.05, 0.0), clutter(5, seed))).unwrap();
        let sol = joint_solve(&p, seed).unwrap();
        let r = check_constraints(&sol, &p);
        assert_eq!(r.max_difference(&sol.residuals), 0.0);
        let (x, frame) = Evaluator::encode(&p, &sol.place, &sol.grasp, &sol.q_grasp, &sol.q_place);
        let e = Evaluator::new(&p, Terms::ALL, p.spec.epsilon, frame).evaluate(&x);
        assert!((e.fk_grasp.unwrap() - r.fk_grasp).abs() <= 1e-9);
        assert!((e.fk_place.unwrap() - r.fk_place).abs() <= 1e-9);
        let worst_ineq = e.ineq.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((worst_ineq - r.collision().unwrap()).abs() <= 1e-9, "{worst_ineq} {r:?}");
    }
}

#[test]
fn violations_are_flagged() {
    let scene = box_surface(Vector3::new(0.5, 0.0, 0.0), Vector3::new(0.1, 0.1, 0.1), 0.01);
    let p = Problem::new(spec(target(0.5, -0.2, 0.0), scene)).unwrap();
    let sol = joint_solve(&p, 0).unwrap();
    assert!(sol.status.is_feasible());

    let mut bad = sol.clone();
    bad.q_place[0] += 0.1;
    let r = check_constraints(&bad, &p);
    assert!(r.fk_place > 1e-3 && !r.is_feasible(&Tolerances::default()));

    let mut inside = sol.clone();
    inside.place = PlacePose::Planar(Pose2::new(0.5, 0.0, 0.0));
    let r = check_constraints(&inside, &p);
    assert!(r.place_object.unwrap() > 0.0 && !r.is_feasible(&Tolerances::default()));

    let mut off = sol;
    off.q_grasp[1] = 5.0;
    assert!(check_constraints(&off, &p).joint_limits > 0.0);
}

/// Direct scan over scene points for every cell and offset.
fn naive_candidate_count(p: &Problem, g: &GraspConfig) -> usize {
    let lat = Lattice::of(p);
    let h = p.spec.surface.height;
    let (lo, hi) = p.place_translation_bounds();
    let n = p.spec.solver.yaw_samples;
    let mut count = 0;
    for k in 0..n {
        let mask = footprint_mask(p, g, 2.0 * std::f64::consts::PI * k as f64 / n as f64);
        for i in 0..lat.dims[0] as i64 {
            for j in 0..lat.dims[1] as i64 {
                let c = lat.center(i, j);
                if c.x < lo[0] || c.x > hi[0] || c.y < lo[1] || c.y > hi[1] {
                    continue;
                }
                let hit = p.spec.place_scene.points.iter().any(|q| {
                    q.z > h + 1e-3
                        && mask.iter().any(|(a, b)| {
                            let x0 = lat.origin.x + (i + a) as f64 * lat.cell;
                            let y0 = lat.origin.y + (j + b) as f64 * lat.cell;
                            q.x >= x0 && q.x < x0 + lat.cell && q.y >= y0 && q.y < y0 + lat.cell
                        })
                });
                if !hit {
                    count += 1;
                }
            }
        }
    }
    count
}

#[test]
fn place_candidates_match_a_naive_scan() {
    for seed in 0..10 {
        let mut s = spec(target(0.5, 0.0, 0.0), clutter(1 + seed as usize % 5, 100 + seed));
        s.solver.yaw_samples = 4;
        let p = Problem::new(s).unwrap();
        let g = p.prior().mean_grasp(0, p.summary(), p.spec.grasp_model.hand());
        let fast = place_prior_candidates(&p, &g).unwrap();
        assert_eq!(fast.len(), naive_candidate_count(&p, &g), "seed {seed}");
        assert!(fast.windows(2).all(|w| w[0].cost <= w[1].cost));
    }
}

#[test]
fn a_band_narrower_than_the_hand_is_rejected() {
    let mut s = spec(target(0.5, 0.0, 0.0), clutter(2, 3));
    s.sdf = SdfSettings::with_spacing(0.005);
    assert!(matches!(Problem::new(s.clone()), Err(Error::InvalidParameter(_))));
    s.sdf.truncation = 0.06;
    assert!(Problem::new(s).is_ok());
}

#[test]
fn empty_and_full_scenes() {
    let p = Problem::new(spec(target(0.5, 0.0, 0.0), empty())).unwrap();
    let g = p.prior().mean_grasp(0, p.summary(), p.spec.grasp_model.hand());
    let (lo, hi) = p.place_translation_bounds();
    let lat = Lattice::of(&p);
    let cells = (0..lat.dims[0] as i64)
        .flat_map(|i| (0..lat.dims[1] as i64).map(move |j| (i, j)))
        .filter(|&(i, j)| {
            let c = lat.center(i, j);
            c.x >= lo[0] && c.x <= hi[0] && c.y >= lo[1] && c.y <= hi[1]
        })
        .count();
    assert!(scene_cells(&p, &lat).is_empty());
    assert_eq!(place_prior_candidates(&p, &g).unwrap().len(), cells * p.spec.solver.yaw_samples);

    let full = box_surface(Vector3::new(0.5, -0.05, 0.0), Vector3::new(0.5, 0.6, 0.2), 0.01);
    let p = Problem::new(spec(target(0.5, 0.0, 0.0), full)).unwrap();
    assert!(place_prior_candidates(&p, &g).unwrap().is_empty());
    assert!(matches!(init_place_prior(&p, &g, 2), Err(crate::Error::InfeasibleInit)));
}

#[test]
fn cube_orientations_are_the_rotation_group_of_the_cube() {
    let rs = cube_orientations();
    assert_eq!(rs.len(), 24);
    for (i, a) in rs.iter().enumerate() {
        assert!((a.matrix().determinant() - 1.0).abs() < 1e-12);
        for b in &rs[..i] {
            assert!((a.matrix() - b.matrix()).norm() > 1e-9);
        }
    }
}

#[test]
fn solves_are_deterministic() {
    let p = Problem::new(spec(target(0.55, -0.1, 1.0), clutter(5, 7))).unwrap();
    let a = joint_solve(&p, 11).unwrap();
    let b = joint_solve(&p, 11).unwrap();
    let mut serial = p.spec.clone();
    serial.solver.parallel = false;
    let c = joint_solve(&Problem::new(serial).unwrap(), 11).unwrap();
    for s in [&b, &c] {
        assert_eq!(a.objective.to_bits(), s.objective.to_bits());
        assert_eq!(a.q_place, s.q_place);
        assert_eq!(a.restart, s.restart);
    }
    let m1 = sampling_solve(&p, 100, 4).unwrap();
    let m2 = sampling_solve(&p, 100, 4).unwrap();
    assert_eq!(m1.objective.to_bits(), m2.objective.to_bits());
}

#[test]
fn violation_shrinks_over_outer_iterations() {
    let p = Problem::new(spec(target(0.5, -0.05, 0.0), clutter(5, 3))).unwrap();
    let sol = joint_solve_from(&p, 0, None).unwrap();
    let h = &sol.violation_history;
    assert!(!h.is_empty());
    assert!(h.last().unwrap() <= &h[0].max(1e-4), "{h:?}");
}

#[test]
fn joint_never_loses_to_sequential() {
    for seed in 0..5 {
        let p = Problem::new(spec(target(0.5, -0.05, 0.5), clutter(6, 200 + seed))).unwrap();
        let seq = sequential_solve(&p, seed).unwrap();
        let joint = joint_solve(&p, seed).unwrap();
        if seq.status.is_feasible() {
            assert!(joint.status.is_feasible());
            assert!(joint.objective <= seq.objective + 1e-6, "seed {seed}: {} vs {}", joint.objective, seq.objective);
        }
    }
}

#[test]
fn sampling_approaches_the_optimum_with_many_samples() {
    // the target sits on a lattice center at a sampled yaw
    let lat_x = 0.3 + 10.5 * 0.02;
    let lat_y = -0.3 + 12.5 * 0.02;
    let mut s = spec(target(lat_x, lat_y, std::f64::consts::FRAC_PI_2), empty());
    // a small surface keeps the candidate pool small enough to converge
    s.surface.min = [lat_x - 0.07, lat_y - 0.07];
    s.surface.max = [lat_x + 0.07, lat_y + 0.07];
    let p = Problem::new(s).unwrap();
    let joint = joint_solve(&p, 0).unwrap();
    let sampled = sampling_solve(&p, 10_000, 0).unwrap();
    assert!(sampled.status.is_feasible());
    assert!(sampled.place_likelihood > 0.99, "{}", sampled.place_likelihood);
    assert!(sampled.objective >= joint.objective - 1e-6);
    assert!(sampled.objective - joint.objective <= 0.1 * joint.objective.abs(), "{} vs {}", sampled.objective, joint.objective);
}

#[test]
fn stacking_lands_on_the_base() {
    let base = box_surface(Vector3::new(0.5, -0.1, 0.0), Vector3::new(0.12, 0.12, 0.05), 0.01);
    let mut s = spec(TaskParams::stack(Vector3::new(0.5, -0.1, 0.05), 1.0), base);
    s.object = box_surface(Vector3::new(0.45, 0.4, 0.0), Vector3::new(0.04, 0.06, 0.1), 0.01);
    let p = Problem::new(s).unwrap();
    let sol = joint_solve(&p, 0).unwrap();
    assert!(sol.status.is_feasible(), "{:?}", sol.residuals);
    let t = p.place_pose3(&sol.place).translation;
    assert!((t.xy() - Vector2::new(0.5, -0.1)).norm() < 0.03, "{t}");
    assert!(t.z > 0.05, "{t}");
}

#[test]
fn constraint_jacobians_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut s = spec(TaskParams::stack(Vector3::new(0.5, -0.1, 0.05), 1.0), clutter(6, 9));
    s.grasp_clutter = Some(clutter(4, 10).transformed(&Pose3::from_translation(Vector3::new(-0.05, 0.55, 0.0))));
    let p = Problem::new(s).unwrap();
    let nq = p.spec.arm.dof();
    let mut checked = 0;
    for _ in 0..80 {
        let g = random_grasp(&mut rng);
        let place = PlacePose::Spatial(Pose3::from_parts(
            Vector3::new(rng.random_range(0.35..0.65), rng.random_range(-0.25..0.15), rng.random_range(0.03..0.15)),
            UnitQuaternion::from_scaled_axis(Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0))),
        ));
        let q: Vec<f64> = (0..2 * nq).map(|_| rng.random_range(-1.5..1.5)).collect();
        let (mut x, frame) = Evaluator::encode(&p, &place, &g, &q[..nq], &q[nq..]);
        // nonzero increments exercise the exponential-map chain rule
        for k in 3..6 {
            x[k] = rng.random_range(-0.3..0.3);
        }
        let ev = Evaluator::new(&p, Terms::ALL, p.spec.epsilon, frame);
        let e0 = ev.evaluate(&x);
        let rows = e0.eq.len() + e0.ineq.len();
        let analytic: Vec<&Vec<f64>> = e0.eq_grad.iter().chain(&e0.ineq_grad).collect();
        let fd_at = |h: f64| -> Vec<Vec<f64>> {
            let mut out = vec![vec![0.0; x.len()]; rows];
            for k in 0..x.len() {
                let (mut a, mut b) = (x.clone(), x.clone());
                a[k] += h;
                b[k] -= h;
                let (ea, eb) = (ev.evaluate(&a), ev.evaluate(&b));
                if ea.ineq.len() != e0.ineq.len() || eb.ineq.len() != e0.ineq.len() {
                    return Vec::new();
                }
                let va: Vec<f64> = ea.eq.iter().chain(&ea.ineq).cloned().collect();
                let vb: Vec<f64> = eb.eq.iter().chain(&eb.ineq).cloned().collect();
                for r in 0..rows {
                    out[r][k] = (va[r] - vb[r]) / (2.0 * h);
                }
            }
            out
        };
        let (f1, f2) = (fd_at(1e-6), fd_at(1e-7));
        if f1.is_empty() || f2.is_empty() {
            continue;
        }
        for r in 0..rows {
            let a = DVector::from_column_slice(analytic[r]);
            let b1 = DVector::from_column_slice(&f1[r]);
            let b2 = DVector::from_column_slice(&f2[r]);
            // skip rows straddling a cell face or an argmin switch
            if rel_err(&b1, &b2) > 1e-4 || b1.norm() == 0.0 {
                continue;
            }
            let err = rel_err(&a, &b1);
            assert!(err <= 1e-4, "row {r}: {err}\n{a}\n{b1}");
            checked += 1;
        }
    }
    assert!(checked >= 50, "only {checked} rows checked");
}

#[test]
fn sequential_grasp_score_bounds_the_joint_one() {
    for seed in 0..4 {
        let p = Problem::new(spec(target(0.5, -0.05, 0.5), clutter(5, 300 + seed))).unwrap();
        let seq = sequential_solve(&p, seed).unwrap();
        let joint = joint_solve(&p, seed).unwrap();
        assert!(seq.grasp_success >= joint.grasp_success - 1e-9, "seed {seed}: {} vs {}", seq.grasp_success, joint.grasp_success);
    }
}

#[test]
fn violation_is_mostly_non_increasing() {
    let mut monotone = 0;
    let n = 20;
    for seed in 0..n {
        let p = Problem::new(spec(target(0.5, -0.05, 0.3 * seed as f64), clutter(4 + seed as usize % 4, 400 + seed))).unwrap();
        let sol = joint_solve_from(&p, seed, None).unwrap();
        // movement below the stopping tolerance is solver noise, not lost feasibility
        let tol = p.spec.solver.al.tolerance;
        if sol.violation_history.windows(2).all(|w| w[1] <= w[0].max(tol)) {
            monotone += 1;
        }
        if sol.status == SolveStatus::Converged {
            assert!(*sol.violation_history.last().unwrap() <= p.spec.solver.al.tolerance);
        }
    }
    assert!(monotone * 10 >= n * 9, "{monotone}/{n}");
}

