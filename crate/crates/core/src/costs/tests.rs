use super::*;
use nalgebra::UnitQuaternion;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::{FRAC_PI_2, PI};

fn box_points(center: Vector3<f64>, size: Vector3<f64>, n: usize) -> PointCloud {
    let mut pts = Vec::new();
    for i in 0..=n {
        for j in 0..=n {
            for k in 0..=n {
                let f = |t: usize, s: f64| -0.5 * s + s * t as f64 / n as f64;
                pts.push(Point3::from(center + Vector3::new(f(i, size.x), f(j, size.y), f(k, size.z))));
            }
        }
    }
    PointCloud::new(pts, "world")
}

fn random_rotation(rng: &mut ChaCha8Rng) -> UnitQuaternion<f64> {
    UnitQuaternion::from_scaled_axis(Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0)))
}

/// Central differences over the pose parameters, rotations perturbed on the left.
fn fd_gradient(f: &dyn Fn(&PlacePose) -> f64, x: &PlacePose, h: f64) -> DVector<f64> {
    let n = x.space().dim();
    let step = |k: usize, s: f64| -> PlacePose {
        match x {
            PlacePose::Planar(p) => {
                let mut v = [p.x, p.y, p.theta];
                v[k] += s;
                PlacePose::Planar(Pose2 { x: v[0], y: v[1], theta: v[2] })
            }
            PlacePose::Spatial(p) => {
                let mut t = p.translation;
                let mut r = p.rotation_matrix();
                if k < 3 {
                    t[k] += s;
                } else {
                    let mut d = Vector3::zeros();
                    d[k - 3] = s;
                    r = so3::exp(&d).into_inner() * r;
                }
                PlacePose::Spatial(Pose3::from_rotation_matrix(t, &Rotation3::from_matrix_unchecked(r)))
            }
        }
    };
    DVector::from_fn(n, |k, _| (f(&step(k, h)) - f(&step(k, -h))) / (2.0 * h))
}

fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-8)
}

#[test]
fn likelihood_examples() {
    assert_eq!(likelihood_from_cost(0.0, 3.0), 1.0);
    assert!((likelihood_from_cost(1.0, 1.0) - 0.36787944117144233).abs() < 1e-15);
}

proptest! {
    #[test]
    fn likelihood_preserves_argmin(costs in proptest::collection::vec(-50.0f64..50.0, 1..40), alpha in 1e-3f64..20.0) {
        let argmin = costs.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        let g: Vec<f64> = costs.iter().map(|&h| likelihood_from_cost(h, alpha)).collect();
        let best = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(g[argmin], best);
        prop_assert!(costs.iter().zip(&g).all(|(h, v)| *v < best || *h == costs[argmin] || *v == best));
    }
}

#[test]
fn target_examples() {
    let t = PlacePose::Planar(Pose2::new(0.4, -0.2, 0.3));
    let (v, g) = cost_target(&t, &t).unwrap();
    assert_eq!(v, 0.0);
    assert_eq!(g.norm(), 0.0);
    let p = PlacePose::Planar(Pose2::new(1.4, -0.2, 0.3));
    assert!((cost_target(&p, &t).unwrap().0 - 0.5).abs() < 1e-15);
    let s = PlacePose::Spatial(Pose3::identity());
    assert!(matches!(cost_target(&s, &t), Err(Error::SpaceMismatch)));
    // yaw wraps around
    let a = PlacePose::Planar(Pose2::new(0.0, 0.0, PI - 0.05));
    let b = PlacePose::Planar(Pose2::new(0.0, 0.0, -PI + 0.05));
    assert!((cost_target(&a, &b).unwrap().0 - 0.5 * 0.01).abs() < 1e-12);
}

#[test]
fn target_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..100 {
        let p = PlacePose::Planar(Pose2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-3.0..3.0)));
        let t = PlacePose::Planar(Pose2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-3.0..3.0)));
        if let PlacePose::Planar(a) = p {
            if let PlacePose::Planar(b) = t {
                if (wrap_angle(a.theta - b.theta).abs() - PI).abs() < 1e-3 {
                    continue;
                }
            }
        }
        let (_, g) = cost_target(&p, &t).unwrap();
        let fd = fd_gradient(&|x| cost_target(x, &t).unwrap().0, &p, 1e-6);
        assert!(rel_err(&g, &fd) <= 1e-5);
    }
    let mut checked = 0;
    while checked < 100 {
        let p = Pose3::from_parts(Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)), random_rotation(&mut rng));
        let t = Pose3::from_parts(Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)), random_rotation(&mut rng));
        if p.rotation().angle_to(t.rotation()) > 3.0 {
            continue;
        }
        let (p, t) = (PlacePose::Spatial(p), PlacePose::Spatial(t));
        let (_, g) = cost_target(&p, &t).unwrap();
        let fd = fd_gradient(&|x| cost_target(x, &t).unwrap().0, &p, 1e-6);
        assert!(rel_err(&g, &fd) <= 1e-5, "{}", rel_err(&g, &fd));
        checked += 1;
    }
}

proptest! {
    #[test]
    fn target_cost_is_zero_only_at_target(
        a in proptest::array::uniform3(-2.0f64..2.0),
        b in proptest::array::uniform3(-2.0f64..2.0),
    ) {
        let p = PlacePose::Planar(Pose2::new(a[0], a[1], a[2]));
        let t = PlacePose::Planar(Pose2::new(b[0], b[1], b[2]));
        let v = cost_target(&p, &t).unwrap().0;
        prop_assert!(v >= 0.0);
        prop_assert_eq!(v == 0.0, p == t);
        prop_assert_eq!(cost_target(&t, &t).unwrap().0, 0.0);
    }

    #[test]
    fn inline_is_invariant_along_the_line(
        p in proptest::array::uniform2(-2.0f64..2.0),
        t in proptest::array::uniform2(-2.0f64..2.0),
        theta in -PI..PI,
        s in -5.0f64..5.0,
    ) {
        let d = line_direction(theta) * s;
        let pose = PlacePose::Planar(Pose2::new(p[0], p[1], 0.0));
        let moved = PlacePose::Planar(Pose2::new(p[0] + d.x, p[1] + d.y, 0.0));
        let a = cost_inline(&pose, &Vector2::new(t[0], t[1]), theta).unwrap().0;
        let b = cost_inline(&moved, &(Vector2::new(t[0], t[1]) + d), theta).unwrap().0;
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a));
        let on_line = PlacePose::Planar(Pose2::new(t[0] + d.x, t[1] + d.y, 1.0));
        prop_assert!(cost_inline(&on_line, &Vector2::new(t[0], t[1]), theta).unwrap().0 < 1e-20);
    }
}

#[test]
fn inline_examples() {
    let x_t = Vector2::new(0.0, 0.0);
    let (v, _) = cost_inline(&PlacePose::Planar(Pose2::new(3.0, 0.0, 0.0)), &x_t, 0.0).unwrap();
    assert!((v - 9.0).abs() < 1e-12);
    assert!((likelihood_from_cost(v, 1.0) - (-9f64).exp()).abs() < 1e-18);
    let (v, _) = cost_inline(&PlacePose::Planar(Pose2::new(0.0, 5.0, 0.0)), &x_t, 0.0).unwrap();
    assert_eq!(v, 0.0);
    // rotating the line and the offset together changes nothing
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let d = Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let (th, phi) = (rng.random_range(-PI..PI), rng.random_range(-PI..PI));
        let r = nalgebra::Rotation2::new(phi) * d;
        let a = cost_inline(&PlacePose::Planar(Pose2::new(d.x, d.y, 0.0)), &x_t, th).unwrap().0;
        let b = cost_inline(&PlacePose::Planar(Pose2::new(r.x, r.y, 0.0)), &x_t, th + phi).unwrap().0;
        assert!((a - b).abs() < 1e-12);
    }
    assert!(cost_inline(&PlacePose::Spatial(Pose3::identity()), &x_t, 0.0).is_err());
}

#[test]
fn inline_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let p = PlacePose::Planar(Pose2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-3.0..3.0)));
        let t = Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let th = rng.random_range(-PI..PI);
        let (_, g) = cost_inline(&p, &t, th).unwrap();
        let fd = fd_gradient(&|x| cost_inline(x, &t, th).unwrap().0, &p, 1e-6);
        assert!(rel_err(&g, &fd) <= 1e-5);
    }
}

#[test]
fn stack_identity_is_length_plus_height() {
    let z_o = box_points(Vector3::new(0.3, 0.1, 0.2), Vector3::new(0.05, 0.07, 0.2), 4);
    let x_c = Vector3::new(0.3, 0.1, 0.2);
    let x_p = PlacePose::Spatial(Pose3::from_translation(x_c));
    for mode in [AbsRotationMode::Elementwise, AbsRotationMode::PerAxisProduct] {
        let (v, _) = cost_stack(&x_p, &z_o, &x_c, 10.0, mode).unwrap();
        assert!((v - 0.25).abs() < 1e-12);
    }
    let flat = box_points(Vector3::zeros(), Vector3::new(0.1, 0.1, 0.0), 3);
    assert!(matches!(cost_stack(&x_p, &flat, &x_c, 10.0, AbsRotationMode::Elementwise), Err(Error::DegenerateGeometry(_))));
    let planar = PlacePose::Planar(Pose2::identity());
    assert!(matches!(cost_stack(&planar, &z_o, &x_c, 10.0, AbsRotationMode::Elementwise), Err(Error::SpaceMismatch)));
}

proptest! {
    #[test]
    fn stack_identity_holds_for_any_box(
        size in proptest::array::uniform3(0.01f64..0.5),
        center in proptest::array::uniform3(-1.0f64..1.0),
    ) {
        let z_o = box_points(Vector3::from(center), Vector3::from(size), 2);
        let ext = object_extents(&z_o).unwrap();
        for mode in [AbsRotationMode::Elementwise, AbsRotationMode::PerAxisProduct] {
            let (v, _) = stack_orientation_cost(&Matrix3::identity(), &ext, mode);
            prop_assert_eq!(v, ext.x + ext.z);
        }
    }
}

#[test]
fn stack_lays_tall_boxes_down() {
    let ext = Vector3::new(0.04, 0.05, 0.3);
    let identity = stack_orientation_cost(&Matrix3::identity(), &ext, AbsRotationMode::Elementwise).0;
    // grid search over 10³ Euler angles
    let mut grid_min = f64::INFINITY;
    let n = 10;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let ang = |t: usize| -PI + 2.0 * PI * t as f64 / n as f64;
                let r = Rotation3::from_euler_angles(ang(i), ang(j), ang(k));
                grid_min = grid_min.min(stack_orientation_cost(r.matrix(), &ext, AbsRotationMode::Elementwise).0);
            }
        }
    }
    // lying along y leaves the two short sides counted
    let down = Rotation3::from_axis_angle(&Vector3::x_axis(), FRAC_PI_2);
    let v = stack_orientation_cost(down.matrix(), &ext, AbsRotationMode::Elementwise).0;
    assert!((v - 0.09).abs() < 1e-12);
    assert!(v <= grid_min + 1e-12 && v < identity);
}

#[test]
fn stack_is_yaw_invariant_for_square_footprints() {
    let ext = Vector3::new(0.06, 0.06, 0.1);
    for k in 0..16 {
        let r = Rotation3::from_axis_angle(&Vector3::z_axis(), k as f64 * 0.4);
        let (v, _) = stack_orientation_cost(r.matrix(), &ext, AbsRotationMode::Elementwise);
        // |cos|·L + |sin|·W on x, height untouched
        let expect = 0.06 * ((k as f64 * 0.4).cos().abs() + (k as f64 * 0.4).sin().abs()) + 0.1;
        assert!((v - expect).abs() < 1e-12);
    }
}

#[test]
fn stack_gradients_match_finite_differences() {
    let z_o = box_points(Vector3::zeros(), Vector3::new(0.05, 0.08, 0.2), 3);
    let x_c = Vector3::new(0.5, 0.0, 0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for mode in [AbsRotationMode::Elementwise, AbsRotationMode::PerAxisProduct] {
        let mut checked = 0;
        while checked < 100 {
            let q = random_rotation(&mut rng);
            let r = q.to_rotation_matrix();
            let (a, b, c) = euler_xyz(r.matrix());
            // keep away from kinks of |·| and the Euler singularity
            let factor_kink = [a, b, c].iter().any(|t| t.sin().abs() < 1e-3 || t.cos().abs() < 1e-3);
            let near_kink = r.matrix().iter().any(|v| v.abs() < 1e-3) || factor_kink || (b.abs() - FRAC_PI_2).abs() < 0.05;
            let x_p = PlacePose::Spatial(Pose3::from_parts(Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)), q));
            let (_, g) = cost_stack(&x_p, &z_o, &x_c, 10.0, mode).unwrap();
            if near_kink || mode == AbsRotationMode::PerAxisProduct && g.rows(3, 3).norm() < 1e-3 {
                continue;
            }
            let fd = fd_gradient(&|x| cost_stack(x, &z_o, &x_c, 10.0, mode).unwrap().0, &x_p, 1e-6);
            assert!(rel_err(&g, &fd) <= 1e-5, "{mode:?} {}", rel_err(&g, &fd));
            checked += 1;
        }
    }
}

fn min_max_area(clouds: &[&PointCloud]) -> f64 {
    let (mut xl, mut xh, mut yl, mut yh) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for c in clouds {
        for p in &c.points {
            xl = xl.min(p.x);
            xh = xh.max(p.x);
            yl = yl.min(p.y);
            yh = yh.max(p.y);
        }
    }
    (xh - xl) * (yh - yl)
}

#[test]
fn pack_second_term_at_identity() {
    let z_o = box_points(Vector3::new(0.2, 0.3, 0.05), Vector3::new(0.08, 0.05, 0.1), 4);
    let z_e = box_points(Vector3::new(0.5, 0.5, 0.05), Vector3::new(0.1, 0.1, 0.1), 4);
    let x_p = PlacePose::Planar(Pose2::identity());
    let (v, _) = cost_pack(&x_p, &z_o, &z_e, &Vector2::zeros(), 100.0).unwrap();
    let placed = place_cloud(&z_o, &x_p, 0.05).unwrap();
    let area = min_max_area(&[&placed, &z_e]);
    assert!((v - area - (0.08 + 0.05)).abs() < 1e-12);
    assert!(matches!(
        cost_pack(&x_p, &z_o, &PointCloud::empty("world"), &Vector2::zeros(), 100.0),
        Err(Error::EmptyInput(_))
    ));
}

#[test]
fn pack_area_grows_only_outside_the_footprint() {
    let z_o = box_points(Vector3::new(0.2, 0.3, 0.05), Vector3::new(0.04, 0.04, 0.1), 4);
    let mut z_e = box_points(Vector3::new(0.3, 0.3, 0.05), Vector3::new(0.06, 0.06, 0.1), 4);
    z_e.extend(&box_points(Vector3::new(0.6, 0.6, 0.05), Vector3::new(0.06, 0.06, 0.1), 4));
    let params = TaskParams::pack(5.0);
    let ctx = CostContext::new(params, z_o.clone(), z_e.clone()).unwrap();
    let geo = ctx.pack_geometry().unwrap();
    let before = min_max_area(&[&z_e]);
    assert!((geo.area_before() - before).abs() < 1e-12);

    let inside = Pose2::new(0.45, 0.45, 0.3);
    let outside = Pose2::new(0.9, 0.45, 0.0);
    let ein = geo.evaluate(&inside);
    let eout = geo.evaluate(&outside);
    let oracle = |p: &Pose2| min_max_area(&[&place_cloud(&z_o, &PlacePose::Planar(*p), 0.0).unwrap(), &z_e]);
    assert!((ein.area_after - oracle(&inside)).abs() < 1e-12);
    assert!((eout.area_after - oracle(&outside)).abs() < 1e-12);
    assert!((ein.area_after - before).abs() < 1e-12);
    assert!(eout.area_after > before + 1e-3);

    let lin = TaskKind::Pack.likelihood(&PlacePose::Planar(inside), &ctx).unwrap();
    let lout = TaskKind::Pack.likelihood(&PlacePose::Planar(outside), &ctx).unwrap();
    assert_eq!(lin, 1.0);
    assert!(lout < 1.0 && lout > 0.0);
}

#[test]
fn pack_smooth_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let z_o = box_points(Vector3::new(0.2, 0.3, 0.05), Vector3::new(0.08, 0.05, 0.1), 3);
    let mut z_e = box_points(Vector3::new(0.4, 0.4, 0.05), Vector3::new(0.1, 0.1, 0.1), 3);
    z_e.extend(&box_points(Vector3::new(0.7, 0.5, 0.05), Vector3::new(0.1, 0.2, 0.1), 3));
    let geo = PackGeometry::new(&z_o, &z_e, Vector2::new(0.1, -0.1), 100.0).unwrap();
    for _ in 0..100 {
        let p = Pose2::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(-3.0..3.0));
        let e = geo.evaluate(&p);
        let f = |x: &PlacePose| match x {
            PlacePose::Planar(q) => geo.evaluate(q).smooth_value,
            _ => unreachable!(),
        };
        let fd = fd_gradient(&f, &PlacePose::Planar(p), 1e-6);
        assert!(rel_err(&e.gradient, &fd) <= 1e-5, "{}", rel_err(&e.gradient, &fd));
        // the smooth box never undercuts the hard one
        assert!(e.smooth_value >= e.value - 1e-12);
    }
}

#[test]
fn context_validates_parameters() {
    let z_o = box_points(Vector3::zeros(), Vector3::new(0.05, 0.05, 0.05), 2);
    let e = PointCloud::empty("world");
    let mut p = TaskParams::pack(0.0);
    assert!(CostContext::new(p.clone(), z_o.clone(), e.clone()).is_err());
    p.alpha = 1.0;
    assert!(CostContext::new(p, z_o.clone(), e.clone()).is_ok());
    assert!(CostContext::new(TaskParams::new(TaskKind::Target), z_o.clone(), e.clone()).is_err());
    let spatial = TaskParams::inline(Vector2::zeros(), 0.0, 1.0);
    assert_eq!(spatial.space(), PoseSpace::Planar);
    let t = TaskParams::target(PlacePose::Spatial(Pose3::identity()), 1.0);
    assert_eq!(t.space(), PoseSpace::Spatial);
}

#[test]
fn target_likelihood_is_one_exactly_at_target() {
    let z_o = box_points(Vector3::zeros(), Vector3::new(0.05, 0.05, 0.05), 2);
    let t = PlacePose::Planar(Pose2::new(0.5, -0.4, 0.2));
    let ctx = CostContext::new(TaskParams::target(t, 10.0), z_o, PointCloud::empty("world")).unwrap();
    assert_eq!(TaskKind::Target.likelihood(&t, &ctx).unwrap(), 1.0);
    let off = PlacePose::Planar(Pose2::new(0.5, -0.4, 0.2 + 1e-6));
    assert!(TaskKind::Target.likelihood(&off, &ctx).unwrap() < 1.0);
}

#[test]
fn doubling_alpha_doubles_negative_log_likelihood() {
    let z_o = box_points(Vector3::zeros(), Vector3::new(0.05, 0.05, 0.05), 2);
    let t = PlacePose::Planar(Pose2::new(0.5, -0.4, 0.2));
    let p = PlacePose::Planar(Pose2::new(0.3, -0.1, 1.2));
    let nll = |alpha: f64| {
        let ctx = CostContext::new(TaskParams::target(t, alpha), z_o.clone(), PointCloud::empty("world")).unwrap();
        -TaskKind::Target.likelihood(&p, &ctx).unwrap().ln()
    };
    assert!((nll(6.0) - 2.0 * nll(3.0)).abs() < 1e-12);
}
