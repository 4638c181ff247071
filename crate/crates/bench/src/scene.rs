//! Scene files: primitive shapes on a table, a grasp target and a task.
//!
//! Clouds are synthesized by sampling primitive surfaces and dropping the
//! points whose outward normal faces away from a virtual viewpoint, which
//! gives the one-sided look of a single depth view.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Point3, Rotation3, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use jointpnp_core::costs::{PlacePose, TaskKind, TaskParams};
use jointpnp_core::geom::{Pose2, Pose3, PointCloud};
use jointpnp_core::planner::PlacementSurface;

use crate::{BenchError, Result};

pub const SCENE_SCHEMA: &str = "jointpnp-scene/1";

/// Where generated grasp targets sit, clear of the placement surface.
pub const GRASP_AREA: [f64; 2] = [0.45, 0.42];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Box { size: [f64; 3] },
    Cylinder { radius: f64, height: f64 },
    /// Points in the object's own frame, bottom at `z = 0`.
    Points { points: Vec<[f64; 3]> },
}

impl Shape {
    pub fn height(&self) -> f64 {
        match self {
            Shape::Box { size } => size[2],
            Shape::Cylinder { height, .. } => *height,
            Shape::Points { points } => points.iter().map(|p| p[2]).fold(0.0, f64::max),
        }
    }

    /// Radius of a circle around the base center covering the footprint.
    pub fn footprint_radius(&self) -> f64 {
        match self {
            Shape::Box { size } => 0.5 * size[0].hypot(size[1]),
            Shape::Cylinder { radius, .. } => *radius,
            Shape::Points { points } => points.iter().map(|p| p[0].hypot(p[1])).fold(0.0, f64::max),
        }
    }
}

/// A shape standing on its base at `position` (bottom center), turned by `yaw`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub name: String,
    pub shape: Shape,
    pub position: [f64; 3],
    #[serde(default)]
    pub yaw: f64,
}

impl SceneObject {
    pub fn pose(&self) -> Pose3 {
        Pose3::from_rotation_matrix(Vector3::from(self.position), &Rotation3::from_axis_angle(&Vector3::z_axis(), self.yaw))
    }

    pub fn top(&self) -> f64 {
        self.position[2] + self.shape.height()
    }

    /// Whether the world point `(x, y)` lies over the object's footprint.
    pub fn covers(&self, x: f64, y: f64) -> bool {
        let d = Vector2::new(x - self.position[0], y - self.position[1]);
        let (s, c) = self.yaw.sin_cos();
        let local = Vector2::new(c * d.x + s * d.y, -s * d.x + c * d.y);
        match &self.shape {
            Shape::Box { size } => local.x.abs() <= 0.5 * size[0] + 1e-9 && local.y.abs() <= 0.5 * size[1] + 1e-9,
            Shape::Cylinder { radius, .. } => local.norm() <= radius + 1e-9,
            Shape::Points { points } => {
                let flat: Vec<Vector2<f64>> = points.iter().map(|p| Vector2::new(p[0], p[1])).collect();
                in_convex_hull(&convex_hull(&flat), &local)
            }
        }
    }
}

/// Counter-clockwise convex hull, without collinear points.
pub fn convex_hull(points: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let mut p = points.to_vec();
    p.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    p.dedup();
    if p.len() < 3 {
        return p;
    }
    let cross = |o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>| (a - o).perp(&(b - o));
    let mut hull: Vec<Vector2<f64>> = Vec::with_capacity(2 * p.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Vector2<f64>>> = if pass == 0 { Box::new(p.iter()) } else { Box::new(p.iter().rev()) };
        for q in iter {
            while hull.len() >= start + 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], q) <= 0.0 {
                hull.pop();
            }
            hull.push(*q);
        }
        hull.pop();
    }
    hull
}

/// Whether `q` lies inside or on a counter-clockwise hull.
pub fn in_convex_hull(hull: &[Vector2<f64>], q: &Vector2<f64>) -> bool {
    match hull.len() {
        0 => false,
        1 => (hull[0] - q).norm() <= 1e-9,
        2 => {
            let (a, b) = (hull[0], hull[1]);
            let t = ((q - a).dot(&(b - a)) / (b - a).norm_squared()).clamp(0.0, 1.0);
            (a + (b - a) * t - q).norm() <= 1e-9
        }
        n => (0..n).all(|i| (hull[(i + 1) % n] - hull[i]).perp(&(q - hull[i])) >= -1e-9),
    }
}

/// Task block of a scene file; `target` is `[x, y, θ]` for planar targets
/// or `[x, y, z, ωx, ωy, ωz]` (rotation vector) for spatial ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskBlock {
    pub kind: TaskKind,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Vec<f64>>,
    #[serde(default)]
    pub line_angle: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stack_base: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tether: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pack_reference: Option<[f64; 2]>,
}

impl TaskBlock {
    pub fn to_params(&self) -> Result<TaskParams> {
        let mut p = TaskParams::new(self.kind);
        p.alpha = self.alpha;
        p.line_angle = self.line_angle;
        p.target = match self.target.as_deref() {
            None => None,
            Some([x, y, t]) => Some(PlacePose::Planar(Pose2::new(*x, *y, *t))),
            Some([x, y, z, a, b, c]) => Some(PlacePose::Spatial(Pose3::from_parts(
                Vector3::new(*x, *y, *z),
                UnitQuaternion::from_scaled_axis(Vector3::new(*a, *b, *c)),
            ))),
            Some(v) => return Err(BenchError::Config(format!("task target needs 3 or 6 numbers, got {}", v.len()))),
        };
        if let Some(b) = self.stack_base {
            p.stack_base = Vector3::from(b);
        }
        if let Some(t) = self.tether {
            p.tether = t;
        }
        if let Some(r) = self.pack_reference {
            p.pack_reference = Vector2::from(r);
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceBlock {
    pub min: [f64; 2],
    pub max: [f64; 2],
    pub height: f64,
}

impl From<&SurfaceBlock> for PlacementSurface {
    fn from(s: &SurfaceBlock) -> Self {
        PlacementSurface { min: s.min, max: s.max, height: s.height }
    }
}

fn default_spacing() -> f64 {
    0.005
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub schema: String,
    pub name: String,
    /// Virtual camera position used to cull back-facing samples.
    pub viewpoint: [f64; 3],
    #[serde(default = "default_spacing")]
    pub sample_spacing: f64,
    #[serde(default = "default_true")]
    pub cull: bool,
    pub surface: SurfaceBlock,
    pub task: TaskBlock,
    pub grasp_target: SceneObject,
    /// Objects already on the placement surface.
    #[serde(default, rename = "object")]
    pub objects: Vec<SceneObject>,
    #[serde(default)]
    pub grasp_clutter: Vec<SceneObject>,
    /// Objects placed one after another by the sequential demos.
    #[serde(default)]
    pub sequence: Vec<SceneObject>,
    /// Clutter count asked of the generator when fewer objects fit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requested_clutter: Option<usize>,
}

impl SceneFile {
    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let scene: SceneFile = toml::from_str(s)?;
        if scene.schema != SCENE_SCHEMA {
            return Err(BenchError::Config(format!("unsupported scene schema {:?}", scene.schema)));
        }
        if !(scene.sample_spacing > 0.0) {
            return Err(BenchError::Config("sample_spacing must be positive".into()));
        }
        Ok(scene)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn object_cloud(&self, o: &SceneObject) -> PointCloud {
        sample_object(o, self.sample_spacing, self.cull.then_some(Vector3::from(self.viewpoint)))
    }

    /// Union of the placement-surface objects' clouds.
    pub fn place_cloud(&self) -> PointCloud {
        let mut c = PointCloud::empty("world");
        for o in &self.objects {
            c.extend(&self.object_cloud(o));
        }
        c
    }

    pub fn grasp_clutter_cloud(&self) -> Option<PointCloud> {
        if self.grasp_clutter.is_empty() {
            return None;
        }
        let mut c = PointCloud::empty("world");
        for o in &self.grasp_clutter {
            c.extend(&self.object_cloud(o));
        }
        Some(c)
    }
}

/// Samples on a `[0, len]` segment at roughly `step`, both ends included.
fn ticks(len: f64, step: f64) -> Vec<f64> {
    let n = (len / step).ceil().max(1.0) as usize;
    (0..=n).map(|i| len * i as f64 / n as f64).collect()
}

/// Surface samples of a shape in its own frame with outward normals.
fn sample_shape(shape: &Shape, step: f64) -> Vec<(Vector3<f64>, Vector3<f64>)> {
    let mut out = Vec::new();
    match shape {
        Shape::Box { size } => {
            let h = Vector3::new(0.5 * size[0], 0.5 * size[1], 0.5 * size[2]);
            let c = Vector3::new(0.0, 0.0, h.z);
            for axis in 0..3 {
                let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
                for sign in [-1.0, 1.0] {
                    let mut n = Vector3::zeros();
                    n[axis] = sign;
                    for a in ticks(size[u], step) {
                        for b in ticks(size[v], step) {
                            let mut p = Vector3::zeros();
                            p[axis] = sign * h[axis];
                            p[u] = a - h[u];
                            p[v] = b - h[v];
                            out.push((c + p, n));
                        }
                    }
                }
            }
        }
        Shape::Cylinder { radius, height } => {
            let m = ((2.0 * PI * radius / step).ceil() as usize).max(8);
            for z in ticks(*height, step) {
                for k in 0..m {
                    let a = 2.0 * PI * k as f64 / m as f64;
                    let n = Vector3::new(a.cos(), a.sin(), 0.0);
                    out.push((n * *radius + Vector3::new(0.0, 0.0, z), n));
                }
            }
            for (z, nz) in [(0.0, -1.0), (*height, 1.0)] {
                for x in ticks(2.0 * radius, step) {
                    for y in ticks(2.0 * radius, step) {
                        let p = Vector3::new(x - radius, y - radius, z);
                        if p.xy().norm() < *radius {
                            out.push((p, Vector3::new(0.0, 0.0, nz)));
                        }
                    }
                }
            }
        }
        Shape::Points { points } => {
            // no normals: every point is kept
            out.extend(points.iter().map(|p| (Vector3::from(*p), Vector3::zeros())));
        }
    }
    out
}

/// World-frame cloud of a scene object, culled against `viewpoint` if given.
pub fn sample_object(o: &SceneObject, step: f64, viewpoint: Option<Vector3<f64>>) -> PointCloud {
    let pose = o.pose();
    let r = pose.rotation_matrix();
    let pts = sample_shape(&o.shape, step)
        .into_iter()
        .map(|(p, n)| (r * p + pose.translation, r * n))
        .filter(|(p, n)| match viewpoint {
            Some(v) if n.norm() > 0.0 => n.dot(&(v - p)) > 0.0,
            _ => true,
        })
        .map(|(p, _)| Point3::from(p))
        .collect();
    PointCloud::new(pts, "world")
}

fn random_shape(rng: &mut ChaCha8Rng, footprint: (f64, f64), height: (f64, f64)) -> Shape {
    if rng.random_bool(0.6) {
        Shape::Box {
            size: [rng.random_range(footprint.0..footprint.1), rng.random_range(footprint.0..footprint.1), rng.random_range(height.0..height.1)],
        }
    } else {
        Shape::Cylinder { radius: 0.5 * rng.random_range(footprint.0..footprint.1), height: rng.random_range(height.0..height.1) }
    }
}

/// The far corner `(max x, min y)` lies outside the bundled arm's reach.
fn default_surface() -> SurfaceBlock {
    SurfaceBlock { min: [0.30, -0.45], max: [0.85, 0.20], height: 0.0 }
}

pub const DEFAULT_VIEWPOINT: [f64; 3] = [0.2, 0.0, 1.2];

/// Draws a graspable target: its narrowest horizontal side fits the hand.
fn random_target(rng: &mut ChaCha8Rng) -> SceneObject {
    let shape = if rng.random_bool(0.6) {
        Shape::Box { size: [rng.random_range(0.04..0.07), rng.random_range(0.05..0.09), rng.random_range(0.06..0.14)] }
    } else {
        Shape::Cylinder { radius: rng.random_range(0.02..0.035), height: rng.random_range(0.06..0.14) }
    };
    SceneObject {
        name: "target".into(),
        shape,
        position: [GRASP_AREA[0] + rng.random_range(-0.04..0.04), GRASP_AREA[1] + rng.random_range(-0.04..0.04), 0.0],
        yaw: rng.random_range(-PI..PI),
    }
}

/// Rejection-samples `count` non-overlapping primitives on `surface`.
fn scatter(rng: &mut ChaCha8Rng, surface: &SurfaceBlock, count: usize) -> Vec<SceneObject> {
    const ATTEMPTS: usize = 200;
    const GAP: f64 = 0.01;
    let mut placed: Vec<SceneObject> = Vec::new();
    for i in 0..count {
        for _ in 0..ATTEMPTS {
            let shape = random_shape(rng, (0.04, 0.10), (0.04, 0.15));
            let r = shape.footprint_radius();
            if surface.max[0] - surface.min[0] <= 2.0 * r || surface.max[1] - surface.min[1] <= 2.0 * r {
                continue;
            }
            let x = rng.random_range(surface.min[0] + r..surface.max[0] - r);
            let y = rng.random_range(surface.min[1] + r..surface.max[1] - r);
            let clear = placed.iter().all(|o| {
                let d = (x - o.position[0]).hypot(y - o.position[1]);
                d >= r + o.shape.footprint_radius() + GAP
            });
            if clear {
                let yaw = rng.random_range(-PI..PI);
                placed.push(SceneObject { name: format!("clutter-{i}"), shape, position: [x, y, surface.height], yaw });
                break;
            }
        }
    }
    placed
}

/// A random table scene with `clutter` objects on the placement surface.
/// Target tasks aim at the surface corner the arm cannot reach.
/// Fewer objects are kept when rejection sampling runs out of room; the
/// requested count is then recorded in the file.
pub fn generate_scene(seed: u64, clutter: usize, kind: TaskKind) -> Result<SceneFile> {
    if clutter > 8 {
        return Err(BenchError::Config(format!("clutter count must be at most 8, got {clutter}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let surface = default_surface();
    let grasp_target = random_target(&mut rng);
    let mut objects = scatter(&mut rng, &surface, clutter);
    let margin = 0.08;
    let (lo, hi) = ([surface.min[0] + margin, surface.min[1] + margin], [surface.max[0] - margin, surface.max[1] - margin]);
    let task = match kind {
        TaskKind::Target => TaskBlock {
            kind,
            alpha: 5.0,
            // the far corner, so the best placement is a compromise
            target: Some(vec![surface.max[0], surface.min[1], rng.random_range(-PI..PI)]),
            line_angle: 0.0,
            stack_base: None,
            tether: None,
            pack_reference: None,
        },
        TaskKind::Inline => TaskBlock {
            kind,
            alpha: 20.0,
            target: Some(vec![rng.random_range(lo[0]..hi[0]), rng.random_range(lo[1]..hi[1]), 0.0]),
            line_angle: rng.random_range(0.0..PI),
            stack_base: None,
            tether: None,
            pack_reference: None,
        },
        TaskKind::Pack => TaskBlock {
            kind,
            alpha: 10.0,
            target: None,
            line_angle: 0.0,
            stack_base: None,
            tether: None,
            pack_reference: Some(surface.min),
        },
        TaskKind::Stack => {
            // the stack grows on a box near the middle of the surface
            let base = SceneObject {
                name: "stack-base".into(),
                shape: Shape::Box { size: [0.12, 0.12, 0.04] },
                position: [0.5 * (surface.min[0] + surface.max[0]), 0.5 * (surface.min[1] + surface.max[1]), surface.height],
                yaw: 0.0,
            };
            objects.retain(|o| (o.position[0] - base.position[0]).hypot(o.position[1] - base.position[1]) > o.shape.footprint_radius() + 0.1);
            let top = [base.position[0], base.position[1], base.top()];
            objects.insert(0, base);
            TaskBlock { kind, alpha: 2.0, target: None, line_angle: 0.0, stack_base: Some(top), tether: None, pack_reference: None }
        }
    };
    let requested_clutter = (objects.len() < clutter).then_some(clutter);
    Ok(SceneFile {
        schema: SCENE_SCHEMA.into(),
        name: format!("{kind}-{seed}"),
        viewpoint: DEFAULT_VIEWPOINT,
        sample_spacing: default_spacing(),
        cull: true,
        surface,
        task,
        grasp_target,
        objects,
        grasp_clutter: Vec::new(),
        sequence: Vec::new(),
        requested_clutter,
    })
}

/// A flat, wide object whose only feasible placement is inside a walled
/// pocket. Closing across its height is the best grasp by score, but that
/// grasp approaches from the side and its wrist cannot fit between the
/// walls; grasps from above score lower and fit.
pub fn adversarial_scene(index: u64) -> SceneFile {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + index);
    let long = rng.random_range(0.135..0.145);
    let short = rng.random_range(0.112..0.118);
    let thick = rng.random_range(0.04..0.05);
    let pocket = 0.24;
    let c = [rng.random_range(0.48..0.56), rng.random_range(-0.12..0.0)];
    let wall = 0.03;
    let wall_h = rng.random_range(0.24..0.27);
    let half = 0.5 * pocket;
    let span = pocket + 2.0 * wall;
    let walls = [
        ([c[0] - half - 0.5 * wall, c[1]], [wall, span]),
        ([c[0] + half + 0.5 * wall, c[1]], [wall, span]),
        ([c[0], c[1] - half - 0.5 * wall], [pocket, wall]),
        ([c[0], c[1] + half + 0.5 * wall], [pocket, wall]),
    ];
    let objects = walls
        .iter()
        .enumerate()
        .map(|(i, (p, s))| SceneObject {
            name: format!("wall-{i}"),
            shape: Shape::Box { size: [s[0], s[1], wall_h] },
            position: [p[0], p[1], 0.0],
            yaw: 0.0,
        })
        .collect();
    SceneFile {
        schema: SCENE_SCHEMA.into(),
        name: format!("adversarial-{index}"),
        viewpoint: DEFAULT_VIEWPOINT,
        sample_spacing: default_spacing(),
        // the mechanism rests on grasp scores, which a one-sided view of a
        // flat plate distorts
        cull: false,
        surface: SurfaceBlock { min: [c[0] - half, c[1] - half], max: [c[0] + half, c[1] + half], height: 0.0 },
        task: TaskBlock {
            kind: TaskKind::Target,
            alpha: 5.0,
            target: Some(vec![c[0], c[1], rng.random_range(-PI..PI)]),
            line_angle: 0.0,
            stack_base: None,
            tether: None,
            pack_reference: None,
        },
        grasp_target: SceneObject {
            name: "plate".into(),
            shape: Shape::Box { size: [long, short, thick] },
            position: [GRASP_AREA[0] + rng.random_range(-0.03..0.03), GRASP_AREA[1] + rng.random_range(-0.03..0.03), 0.0],
            yaw: rng.random_range(-0.3..0.3),
        },
        objects,
        grasp_clutter: Vec::new(),
        sequence: Vec::new(),
        requested_clutter: None,
    }
}
