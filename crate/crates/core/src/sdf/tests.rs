use super::*;
use crate::geom::{voxelize, GridGeometry};
use nalgebra::UnitQuaternion;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Exact signed distance (meters) from each voxel to the nearest surface
/// voxel center, by scanning every pair; truncated like the field.
fn brute_force(occ: &OccupancyGrid, truncation: f64) -> Vec<f64> {
    let g = occ.geometry;
    let surface: Vec<[usize; 3]> = CellBox::full(g.dims)
        .iter()
        .filter(|&idx| brushfire::classify(occ, idx) == CellClass::Surface)
        .collect();
    (0..g.len())
        .map(|lin| {
            let idx = g.unlinear(lin);
            let class = brushfire::classify(occ, idx);
            if class == CellClass::Surface {
                return 0.0;
            }
            let best = surface
                .iter()
                .map(|s| {
                    let d: i64 = (0..3).map(|a| (s[a] as i64 - idx[a] as i64).pow(2)).sum();
                    d
                })
                .min()
                .map_or(f64::INFINITY, |sq| (sq as f64).sqrt() * g.spacing)
                .min(truncation);
            if class == CellClass::Free {
                best
            } else {
                -best
            }
        })
        .collect()
}

fn random_scene(rng: &mut ChaCha8Rng, n: usize, spacing: f64) -> OccupancyGrid {
    let g = GridGeometry::new(Vector3::zeros(), spacing, [n, n, n]).unwrap();
    let mut occ = OccupancyGrid::new(g);
    let boxes = rng.random_range(1..5);
    for _ in 0..boxes {
        let size: [usize; 3] = [rng.random_range(1..6), rng.random_range(1..6), rng.random_range(1..6)];
        let lo: [usize; 3] = [
            rng.random_range(1..n - size[0] - 1),
            rng.random_range(1..n - size[1] - 1),
            rng.random_range(1..n - size[2] - 1),
        ];
        for i in lo[0]..lo[0] + size[0] {
            for j in lo[1]..lo[1] + size[1] {
                for k in lo[2]..lo[2] + size[2] {
                    occ.set([i, j, k], true);
                }
            }
        }
    }
    for _ in 0..rng.random_range(0..20) {
        occ.set([rng.random_range(1..n - 1), rng.random_range(1..n - 1), rng.random_range(1..n - 1)], true);
    }
    occ
}

#[test]
fn single_voxel_face_neighbors() {
    let s = 0.01;
    let g = GridGeometry::new(Vector3::zeros(), s, [9, 9, 9]).unwrap();
    let mut occ = OccupancyGrid::new(g);
    occ.set([4, 4, 4], true);
    let sdf = build_sdf(&occ, 8.0 * s).unwrap();
    assert_eq!(sdf.distance_at([4, 4, 4]), 0.0);
    for n in [[5, 4, 4], [3, 4, 4], [4, 5, 4], [4, 3, 4], [4, 4, 5], [4, 4, 3]] {
        assert!((sdf.distance_at(n) - s).abs() < 1e-7, "{n:?}");
    }
    let oracle = brute_force(&occ, 8.0 * s);
    for (lin, exact) in oracle.iter().enumerate() {
        assert!((sdf.distances()[lin] as f64 - exact).abs() < 1e-6);
    }
}

#[test]
fn far_margin_saturates() {
    let s = 0.01;
    let trunc = 3.0 * s;
    let g = GridGeometry::new(Vector3::zeros(), s, [12, 12, 12]).unwrap();
    let mut occ = OccupancyGrid::new(g);
    occ.set([1, 1, 1], true);
    let sdf = build_sdf(&occ, trunc).unwrap();
    assert_eq!(sdf.distance_at([11, 11, 11]), trunc as f32 as f64);
    assert_eq!(sdf.distance_at([1, 1, 5]), trunc as f32 as f64);
}

#[test]
fn solid_block_center_is_negative() {
    let s = 0.01;
    let g = GridGeometry::new(Vector3::zeros(), s, [11, 11, 11]).unwrap();
    let mut occ = OccupancyGrid::new(g);
    for i in 3..8 {
        for j in 3..8 {
            for k in 3..8 {
                occ.set([i, j, k], true);
            }
        }
    }
    let sdf = build_sdf(&occ, 8.0 * s).unwrap();
    assert!((sdf.distance_at([5, 5, 5]) + 2.0 * s).abs() < s);
    assert_eq!(sdf.distance_at([3, 5, 5]), 0.0);
    assert!(sdf.distance_at([4, 5, 5]) < 0.0);
}

#[test]
fn rejects_empty_full_and_thin_band() {
    let g = GridGeometry::new(Vector3::zeros(), 0.01, [4, 4, 4]).unwrap();
    let occ = OccupancyGrid::new(g);
    assert!(matches!(build_sdf(&occ, 0.08), Err(Error::EmptyScene)));
    let mut full = OccupancyGrid::new(g);
    full.cells.iter_mut().for_each(|c| *c = true);
    assert!(matches!(build_sdf(&full, 0.08), Err(Error::DegenerateGeometry(_))));
    let mut one = OccupancyGrid::new(g);
    one.set([1, 1, 1], true);
    assert!(matches!(build_sdf(&one, 0.015), Err(Error::InvalidParameter(_))));
}

#[test]
fn matches_brute_force_on_random_scenes() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut cells, mut exact_hits) = (0usize, 0usize);
    for _ in 0..12 {
        let n = rng.random_range(16..=24);
        let s = 0.01;
        let occ = random_scene(&mut rng, n, s);
        let trunc = 8.0 * s;
        let sdf = build_sdf(&occ, trunc).unwrap();
        let oracle = brute_force(&occ, trunc);
        for (lin, exact) in oracle.iter().enumerate() {
            let d = sdf.distances()[lin] as f64;
            assert!((d - exact).abs() <= s * 3f64.sqrt(), "cell {lin}: {d} vs {exact}");
            // sign: free cells positive, occupied zero or negative
            if occ.cells[lin] {
                assert!(d <= 0.0);
            } else {
                assert!(d > 0.0);
            }
            cells += 1;
            if (d - exact).abs() < 1e-6 {
                exact_hits += 1;
            }
        }
    }
    // The marching is exact inside this band on every cell we have seen.
    assert_eq!(exact_hits, cells);
}

#[test]
fn half_space_gradient_points_away_from_wall() {
    let s = 0.01;
    let g = GridGeometry::new(Vector3::zeros(), s, [24, 8, 8]).unwrap();
    let mut occ = OccupancyGrid::new(g);
    for i in 0..4 {
        for j in 0..8 {
            for k in 0..8 {
                occ.set([i, j, k], true);
            }
        }
    }
    let trunc = 8.0 * s;
    let sdf = build_sdf(&occ, trunc).unwrap();
    // analytic field: (i - 3)·s for free cells inside the band
    for i in 5..10 {
        let grad = sdf.gradient_at([i, 4, 4]);
        assert!((grad - Vector3::x()).norm() < 0.05, "{i}: {grad:?}");
        assert!((sdf.distance_at([i, 4, 4]) - (i as f64 - 3.0) * s).abs() < 1e-6);
    }
    // saturated region
    for i in 13..23 {
        assert_eq!(sdf.gradient_at([i, 4, 4]), Vector3::zeros());
    }
}

#[test]
fn gradient_above_single_voxel_points_up() {
    let s = 0.01;
    let g = GridGeometry::new(Vector3::zeros(), s, [9, 9, 9]).unwrap();
    let mut occ = OccupancyGrid::new(g);
    occ.set([4, 4, 4], true);
    let sdf = build_sdf(&occ, 8.0 * s).unwrap();
    for k in 5..8 {
        assert!(sdf.gradient_at([4, 4, k]).z > 0.0);
    }
    let recomputed = compute_gradients(&sdf);
    assert_eq!(recomputed, sdf);
}

#[test]
fn query_interpolates() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let occ = random_scene(&mut rng, 16, 0.01);
    let sdf = build_sdf(&occ, 0.08).unwrap();
    let g = *sdf.geometry();
    let idx = [6, 7, 8];
    let c = g.cell_center(idx);
    assert!((sdf.query(&c).distance - sdf.distance_at(idx)).abs() < 1e-12);

    let n = [7, 7, 8];
    let mid = Point3::from((c.coords + g.cell_center(n).coords) * 0.5);
    let expect = 0.5 * (sdf.distance_at(idx) + sdf.distance_at(n));
    assert!((sdf.query(&mid).distance - expect).abs() < 1e-9);

    let far = Point3::new(-1.0, 0.0, 0.0);
    let q = sdf.query(&far);
    assert_eq!(q.distance, 0.08);
    assert_eq!(q.gradient, Vector3::zeros());
}

#[test]
fn query_tracks_exact_distance_in_band() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let s = 0.01;
    for _ in 0..5 {
        let occ = random_scene(&mut rng, 16, s);
        let sdf = build_sdf(&occ, 0.08).unwrap();
        let surface: Vec<Point3<f64>> = CellBox::full(occ.geometry.dims)
            .iter()
            .filter(|&idx| brushfire::classify(&occ, idx) == CellClass::Surface)
            .map(|idx| occ.geometry.cell_center(idx))
            .collect();
        for _ in 0..300 {
            let p = Point3::new(
                rng.random_range(0.01..0.15),
                rng.random_range(0.01..0.15),
                rng.random_range(0.01..0.15),
            );
            let exact = surface.iter().map(|c| (c - p).norm()).fold(f64::INFINITY, f64::min);
            let q = sdf.query(&p).distance;
            let free = !occ.get(occ.geometry.cell_of(&p).unwrap());
            if free && exact < 0.07 && q > 0.0 {
                assert!((q - exact).abs() <= s * 3f64.sqrt(), "{q} vs {exact}");
            }
        }
    }
}

#[test]
fn query_is_lipschitz() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let s = 0.01;
    let occ = random_scene(&mut rng, 20, s);
    let trunc = 0.08;
    let sdf = build_sdf(&occ, trunc).unwrap();
    // neighboring voxel values differ by at most one spacing
    let lipschitz = 3f64.sqrt();
    for _ in 0..2000 {
        let p = Point3::new(rng.random_range(0.01..0.19), rng.random_range(0.01..0.19), rng.random_range(0.01..0.19));
        let d = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            * 0.003;
        let a = sdf.query(&p).distance;
        let b = sdf.query(&(p + d)).distance;
        assert!((a - b).abs() <= lipschitz * d.norm() + 1e-12);
    }
}

fn box_cloud(center: Vector3<f64>, half: Vector3<f64>, step: f64) -> PointCloud {
    let mut pts = Vec::new();
    let n = |h: f64| ((2.0 * h / step).round() as i64).max(1);
    let (nx, ny, nz) = (n(half.x), n(half.y), n(half.z));
    for i in 0..=nx {
        for j in 0..=ny {
            for k in 0..=nz {
                let on_face = i == 0 || i == nx || j == 0 || j == ny || k == 0 || k == nz;
                if on_face {
                    let p = Vector3::new(
                        -half.x + 2.0 * half.x * i as f64 / nx as f64,
                        -half.y + 2.0 * half.y * j as f64 / ny as f64,
                        -half.z + 2.0 * half.z * k as f64 / nz as f64,
                    );
                    pts.push(Point3::from(center + p));
                }
            }
        }
    }
    PointCloud::new(pts, "world")
}

#[test]
fn set_minimum_matches_naive_loop() {
    let scene = box_cloud(Vector3::new(0.0, 0.0, 0.05), Vector3::new(0.05, 0.05, 0.05), 0.005);
    let sdf = build_scene_sdf(&scene, &SdfSettings::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pts: Vec<_> = (0..100)
        .map(|_| Point3::new(rng.random_range(-0.03..0.03), rng.random_range(-0.03..0.03), rng.random_range(-0.03..0.03)))
        .collect();
    let q = CollisionQuerySet { object: PointCloud::new(pts.clone(), "object"), ..Default::default() };
    for _ in 0..10 {
        let pose = Pose3::from_parts(
            Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(0.0..0.15)),
            UnitQuaternion::from_scaled_axis(Vector3::new(rng.random(), rng.random(), rng.random())),
        );
        let m = min_sdf_over_set(&sdf, &pose, &q, GradientMode::Filtered).unwrap();
        let naive = pts
            .iter()
            .map(|p| sdf.query(&pose.transform_point(p)).distance)
            .fold(f64::INFINITY, f64::min);
        assert!((m.overall.distance - naive).abs() < 1e-12);
    }
}

#[test]
fn set_minimum_examples() {
    let scene = box_cloud(Vector3::new(0.0, 0.0, 0.05), Vector3::new(0.05, 0.05, 0.05), 0.005);
    let sdf = build_scene_sdf(&scene, &SdfSettings::default()).unwrap();
    let q = CollisionQuerySet {
        object: PointCloud::new(vec![Point3::origin(), Point3::new(0.01, 0.0, 0.0)], "object"),
        robot: PointCloud::new(vec![Point3::new(0.0, 0.0, 0.1)], "object"),
        robot_radii: vec![0.02],
    };
    let far = Pose3::from_translation(Vector3::new(5.0, 5.0, 5.0));
    let m = min_sdf_over_set(&sdf, &far, &q, GradientMode::Filtered).unwrap();
    assert_eq!(m.object.unwrap().distance, sdf.truncation());

    // an object point at an occupied voxel center reads zero
    let occupied = sdf.occupancy().occupied_indices().next().unwrap();
    let at = Pose3::from_translation(sdf.geometry().cell_center(occupied).coords);
    let m = min_sdf_over_set(&sdf, &at, &q, GradientMode::Filtered).unwrap();
    assert_eq!(m.object.unwrap().distance, 0.0);

    // union minimum decomposes
    let m = min_sdf_over_set(&sdf, &Pose3::from_translation(Vector3::new(0.02, 0.08, 0.06)), &q, GradientMode::Filtered)
        .unwrap();
    let (o, r) = (m.object.unwrap().distance, m.robot.unwrap().distance);
    assert_eq!(m.overall.distance, o.min(r));

    let empty = CollisionQuerySet::default();
    assert!(matches!(min_sdf_over_set(&sdf, &far, &empty, GradientMode::Filtered), Err(Error::EmptyInput(_))));
}

#[test]
fn collision_margin_examples() {
    let scene = box_cloud(Vector3::new(0.0, 0.0, 0.05), Vector3::new(0.05, 0.05, 0.05), 0.005);
    let sdf = build_scene_sdf(&scene, &SdfSettings::default()).unwrap();
    let q = CollisionQuerySet { object: PointCloud::new(vec![Point3::origin()], "object"), ..Default::default() };
    let far = Pose3::from_translation(Vector3::new(3.0, 0.0, 0.0));
    let m = collision_margin(&sdf, &far, &q, 0.01, GradientMode::Filtered).unwrap();
    assert!((m.residual - (0.01 - sdf.truncation())).abs() < 1e-12);
    assert!(m.residual < 0.0);

    let occupied = sdf.occupancy().occupied_indices().next().unwrap();
    let at = Pose3::from_translation(sdf.geometry().cell_center(occupied).coords);
    let m = collision_margin(&sdf, &at, &q, 0.01, GradientMode::Filtered).unwrap();
    assert_eq!(m.residual, 0.01);
    assert!(collision_margin(&sdf, &at, &q, -0.1, GradientMode::Filtered).is_err());
}

#[test]
fn collision_margin_translation_gradient() {
    let scene = box_cloud(Vector3::new(0.0, 0.0, 0.05), Vector3::new(0.05, 0.05, 0.05), 0.005);
    let sdf = build_scene_sdf(&scene, &SdfSettings::default()).unwrap();
    let q = CollisionQuerySet {
        object: PointCloud::new(vec![Point3::new(-0.01, 0.0, 0.0), Point3::new(0.01, 0.0, 0.0)], "object"),
        ..Default::default()
    };
    let pose = Pose3::from_parts(
        Vector3::new(0.093, 0.012, 0.047),
        UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 0.3),
    );
    for mode in [GradientMode::Filtered, GradientMode::Interpolant] {
        let m = collision_margin(&sdf, &pose, &q, 0.01, mode).unwrap();
        let h = 1e-6;
        for a in 0..3 {
            let mut tp = pose.translation;
            tp[a] += h;
            let mut tm = pose.translation;
            tm[a] -= h;
            let fp = collision_margin(&sdf, &Pose3::from_parts(tp, *pose.rotation()), &q, 0.01, mode).unwrap();
            let fm = collision_margin(&sdf, &Pose3::from_parts(tm, *pose.rotation()), &q, 0.01, mode).unwrap();
            let fd = (fp.residual - fm.residual) / (2.0 * h);
            let tol = match mode {
                GradientMode::Filtered => 5e-2 * fd.abs().max(1e-3),
                GradientMode::Interpolant => 1e-4 * fd.abs().max(1e-3),
            };
            assert!((m.grad_translation[a] - fd).abs() <= tol, "{mode:?} axis {a}: {} vs {fd}", m.grad_translation[a]);
        }
    }
}

#[test]
fn update_without_new_cells_is_identity() {
    let scene = box_cloud(Vector3::new(0.0, 0.0, 0.05), Vector3::new(0.05, 0.05, 0.05), 0.005);
    let sdf = build_scene_sdf(&scene, &SdfSettings::default()).unwrap();
    let updated = update_sdf(&sdf, &scene, &Pose3::identity()).unwrap();
    assert_eq!(updated, sdf);
}

#[test]
fn update_matches_rebuild() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let base = box_cloud(Vector3::new(0.0, 0.0, 0.04), Vector3::new(0.04, 0.06, 0.04), 0.005);
    let settings = SdfSettings::default();
    let mut sdf = build_scene_sdf(&base, &settings).unwrap();
    let mut clouds = vec![base];
    for _ in 0..4 {
        let obj = box_cloud(
            Vector3::zeros(),
            Vector3::new(rng.random_range(0.01..0.04), rng.random_range(0.01..0.04), rng.random_range(0.01..0.04)),
            0.005,
        );
        let pose = Pose3::from_parts(
            Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(0.02..0.1)),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), rng.random_range(-3.0..3.0)),
        );
        sdf = update_sdf(&sdf, &obj, &pose).unwrap();
        clouds.push(obj.transformed(&pose));
        let refs: Vec<&PointCloud> = clouds.iter().collect();
        let occ = occupancy_from_points(*sdf.geometry(), &refs);
        let rebuilt = build_sdf(&occ, settings.truncation).unwrap();
        assert_eq!(sdf.occupancy(), rebuilt.occupancy());
        assert!(sdf.distances() == rebuilt.distances());
        assert!(sdf.gradients() == rebuilt.gradients());
    }
}

#[test]
fn update_outside_bounds_grows_grid() {
    let base = box_cloud(Vector3::new(0.0, 0.0, 0.04), Vector3::new(0.04, 0.04, 0.04), 0.005);
    let settings = SdfSettings::default();
    let sdf = build_scene_sdf(&base, &settings).unwrap();
    let obj = box_cloud(Vector3::zeros(), Vector3::new(0.02, 0.02, 0.02), 0.005);
    let pose = Pose3::from_translation(Vector3::new(0.6, 0.0, 0.02));
    let grown = update_sdf(&sdf, &obj, &pose).unwrap();
    assert!(grown.geometry().dims[0] > sdf.geometry().dims[0]);
    let occ = occupancy_from_points(*grown.geometry(), &[&base, &obj.transformed(&pose)]);
    let rebuilt = build_sdf(&occ, settings.truncation).unwrap();
    assert!(grown.distances() == rebuilt.distances());
    // distances around the original block are preserved
    for idx in CellBox::full(sdf.geometry().dims).iter() {
        let p = sdf.geometry().cell_center(idx);
        let q = grown.query(&p).distance;
        if p.x < 0.3 {
            assert!((q - sdf.distance_at(idx)).abs() < 1e-6);
        }
    }
}

#[test]
fn dump_round_trip() {
    let scene = box_cloud(Vector3::new(0.0, 0.0, 0.05), Vector3::new(0.05, 0.03, 0.05), 0.005);
    let sdf = build_scene_sdf(&scene, &SdfSettings::default()).unwrap();
    let mut bytes = Vec::new();
    sdf.write_to(&mut bytes).unwrap();
    assert_eq!(&bytes[..5], b"TSDF1");
    let back = TruncatedSdf::read_from(bytes.as_slice()).unwrap();
    assert_eq!(back, sdf);

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(TruncatedSdf::read_from(bad.as_slice()), Err(Error::Format(_))));
    assert!(matches!(TruncatedSdf::read_from(&bytes[..100]), Err(Error::Format(_))));
}

#[test]
fn voxelized_scene_has_positive_margin() {
    let scene = box_cloud(Vector3::new(0.0, 0.0, 0.05), Vector3::new(0.05, 0.05, 0.05), 0.005);
    let grid = voxelize(&scene, 0.01, 10).unwrap();
    let sdf = build_sdf(&grid, 0.08).unwrap();
    let g = sdf.geometry();
    assert_eq!(sdf.distance_at([0, 0, 0]), 0.08f32 as f64);
    assert_eq!(sdf.distance_at([g.dims[0] - 1, g.dims[1] - 1, g.dims[2] - 1]), 0.08f32 as f64);
}
