use nalgebra::{Point3, Vector2, Vector3};

use super::Pose3;
use crate::{Error, Result};

/// An unordered set of 3D points tagged with the frame they are expressed in.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3<f64>>,
    pub frame: String,
}

impl PointCloud {
    pub fn new(points: Vec<Point3<f64>>, frame: impl Into<String>) -> Self {
        Self { points, frame: frame.into() }
    }

    pub fn empty(frame: impl Into<String>) -> Self {
        Self::new(Vec::new(), frame)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|p| p.coords.iter().all(|c| c.is_finite()))
    }

    pub fn extend(&mut self, other: &PointCloud) {
        self.points.extend_from_slice(&other.points);
    }

    pub fn transformed(&self, pose: &Pose3) -> PointCloud {
        transform_points(pose, self)
    }

    /// Axis-aligned bounds `(min, max)`, `None` for an empty cloud.
    pub fn aabb(&self) -> Option<(Point3<f64>, Point3<f64>)> {
        let first = *self.points.first()?;
        Some(self.points.iter().fold((first, first), |(lo, hi), p| {
            (lo.inf(p), hi.sup(p))
        }))
    }
}

/// Applies `p` to every point; order and cardinality are preserved.
pub fn transform_points(p: &Pose3, c: &PointCloud) -> PointCloud {
    let rot = p.rotation_matrix();
    let points = c
        .points
        .iter()
        .map(|q| Point3::from(rot * q.coords + p.translation))
        .collect();
    PointCloud { points, frame: c.frame.clone() }
}

/// Axis-aligned planar box: `length` along x, `width` along y.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Box2 {
    pub length: f64,
    pub width: f64,
    pub center: Vector2<f64>,
}

impl Box2 {
    pub fn area(&self) -> f64 {
        self.length * self.width
    }

    pub fn min(&self) -> Vector2<f64> {
        self.center - Vector2::new(self.length, self.width) * 0.5
    }

    pub fn max(&self) -> Vector2<f64> {
        self.center + Vector2::new(self.length, self.width) * 0.5
    }
}

pub fn bounding_box_2d(c: &PointCloud) -> Result<Box2> {
    let (lo, hi) = c.aabb().ok_or(Error::EmptyInput("point cloud"))?;
    Ok(Box2 {
        length: hi.x - lo.x,
        width: hi.y - lo.y,
        center: Vector2::new(0.5 * (lo.x + hi.x), 0.5 * (lo.y + hi.y)),
    })
}

pub fn centroid(c: &PointCloud) -> Result<Vector3<f64>> {
    if c.is_empty() {
        return Err(Error::EmptyInput("point cloud"));
    }
    let sum = c.points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords);
    Ok(sum / c.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
        let pts = (0..n)
            .map(|_| Point3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()))
            .collect();
        PointCloud::new(pts, "world")
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose3 {
        let axis = Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
        Pose3::from_parts(
            Vector3::new(rng.random(), rng.random(), rng.random()),
            UnitQuaternion::from_scaled_axis(axis * 4.0),
        )
    }

    #[test]
    fn transform_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = random_cloud(&mut rng, 20);
        assert_eq!(transform_points(&Pose3::identity(), &c), c);

        let single = PointCloud::new(vec![Point3::origin()], "w");
        let t = transform_points(&Pose3::from_translation(Vector3::new(0.0, 0.0, 1.0)), &single);
        assert_eq!(t.points[0], Point3::new(0.0, 0.0, 1.0));

        let p = random_pose(&mut rng);
        let back = transform_points(&p.inverse(), &transform_points(&p, &c));
        for (a, b) in back.points.iter().zip(&c.points) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn transform_is_a_group_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let c = random_cloud(&mut rng, 10);
            let (p1, p2) = (random_pose(&mut rng), random_pose(&mut rng));
            let lhs = transform_points(&p2, &transform_points(&p1, &c));
            let rhs = transform_points(&p2.compose(&p1), &c);
            for (a, b) in lhs.points.iter().zip(&rhs.points) {
                assert!((a - b).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn bounding_box_examples() {
        let one = PointCloud::new(vec![Point3::new(0.3, 0.2, 5.0)], "w");
        let b = bounding_box_2d(&one).unwrap();
        assert_eq!((b.length, b.width), (0.0, 0.0));

        let two = PointCloud::new(vec![Point3::new(0.0, 0.0, 0.0), Point3::new(2.0, 1.0, 7.0)], "w");
        let b = bounding_box_2d(&two).unwrap();
        assert_eq!((b.length, b.width), (2.0, 1.0));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = random_cloud(&mut rng, 50);
        let mut grown = c.clone();
        grown.extend(&c.transformed(&Pose3::from_translation(Vector3::new(3.0, 0.0, 0.0))));
        let (b0, b1) = (bounding_box_2d(&c).unwrap(), bounding_box_2d(&grown).unwrap());
        assert!((b1.length - b0.length - 3.0).abs() < 1e-12);
        assert_eq!(b1.width, b0.width);

        assert!(matches!(bounding_box_2d(&PointCloud::empty("w")), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn bounding_box_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = random_cloud(&mut rng, 30);
        let shift = Vector3::new(0.7, -1.3, 9.0);
        let b0 = bounding_box_2d(&c).unwrap();
        let b1 = bounding_box_2d(&c.transformed(&Pose3::from_translation(shift))).unwrap();
        assert!((b1.length - b0.length).abs() < 1e-12 && (b1.width - b0.width).abs() < 1e-12);
        assert!((b1.center - b0.center - shift.xy()).norm() < 1e-12);
    }

    #[test]
    fn centroid_examples() {
        let p = Point3::new(1.0, -2.0, 3.0);
        assert_eq!(centroid(&PointCloud::new(vec![p], "w")).unwrap(), p.coords);
        let two = PointCloud::new(vec![Point3::origin(), Point3::new(2.0, 0.0, 0.0)], "w");
        assert_eq!(centroid(&two).unwrap(), Vector3::new(1.0, 0.0, 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = random_cloud(&mut rng, 1000);
        let direct = c.points.iter().map(|p| p.coords).sum::<Vector3<f64>>() / 1000.0;
        let m = centroid(&c).unwrap();
        assert!((m - direct).norm() < 1e-12);
        assert!((m - Vector3::repeat(0.5)).norm() < 0.05);
        assert!(centroid(&PointCloud::empty("w")).is_err());
    }
}
