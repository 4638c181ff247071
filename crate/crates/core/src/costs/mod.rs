//! Placement costs and their likelihoods.
//!
//! Each cost `H(x_p)` maps to a likelihood `G = exp(−α·H)`. Gradients are
//! taken over the pose parameters: `(x, y, θ)` for planar poses and
//! `(t, δ)` for spatial ones, where `δ` is a world-frame rotation
//! perturbation `R ← exp(δ)·R`.

use nalgebra::{DVector, Matrix3, Point3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::geom::{abs_rotation_matrix, centroid, euler_xyz, so3, wrap_angle, AbsRotationMode, PointCloud, Pose2, Pose3};
use crate::{Error, Result};

#[cfg(test)]
mod tests;

/// Where an object's centroid goes, in the plane or in space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PlacePose {
    Planar(Pose2),
    Spatial(Pose3),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseSpace {
    Planar,
    Spatial,
}

impl PoseSpace {
    /// Length of the parameter vector gradients are taken over.
    pub fn dim(self) -> usize {
        match self {
            PoseSpace::Planar => 3,
            PoseSpace::Spatial => 6,
        }
    }
}

impl PlacePose {
    pub fn space(&self) -> PoseSpace {
        match self {
            PlacePose::Planar(_) => PoseSpace::Planar,
            PlacePose::Spatial(_) => PoseSpace::Spatial,
        }
    }

    pub fn translation(&self) -> Vector3<f64> {
        match self {
            PlacePose::Planar(p) => Vector3::new(p.x, p.y, 0.0),
            PlacePose::Spatial(p) => p.translation,
        }
    }

    /// The pose in 3D, with planar poses lifted to height `z`.
    pub fn to_pose3(&self, z: f64) -> Pose3 {
        match self {
            PlacePose::Planar(p) => p.to_pose3(z),
            PlacePose::Spatial(p) => *p,
        }
    }

    fn rotation_matrix(&self) -> Matrix3<f64> {
        match self {
            PlacePose::Planar(p) => *Rotation3::from_axis_angle(&Vector3::z_axis(), p.theta).matrix(),
            PlacePose::Spatial(p) => p.rotation_matrix(),
        }
    }
}

/// Converts a cost into an unnormalized likelihood `exp(−α·H)`.
///
/// The solver works with `−ln G = α·H`, so the normalizer never matters.
pub fn likelihood_from_cost(cost: f64, alpha: f64) -> f64 {
    debug_assert!(alpha > 0.0);
    (-alpha * cost).exp()
}

/// `½|x_p ⊖ x_t|²` with wrapped yaw in the plane and the rotation vector of
/// `R_p·R_tᵀ` in space.
pub fn cost_target(x_p: &PlacePose, x_t: &PlacePose) -> Result<(f64, DVector<f64>)> {
    let d = match (x_p, x_t) {
        (PlacePose::Planar(p), PlacePose::Planar(t)) => {
            DVector::from_vec(vec![p.x - t.x, p.y - t.y, wrap_angle(p.theta - t.theta)])
        }
        (PlacePose::Spatial(p), PlacePose::Spatial(t)) => {
            let dt = p.translation - t.translation;
            let r = so3::log(&(p.rotation() * t.rotation().inverse()).to_rotation_matrix());
            DVector::from_vec(vec![dt.x, dt.y, dt.z, r.x, r.y, r.z])
        }
        _ => return Err(Error::SpaceMismatch),
    };
    // J_l(r)^{-T}·r = r, so the rotation part of the gradient is r itself
    Ok((0.5 * d.norm_squared(), d))
}

/// `(Δ·n)²` with `n = (cos θ_l, sin θ_l)`: squared distance from the line
/// through `x_t` with direction `(−sin θ_l, cos θ_l)`.
pub fn cost_inline(x_p: &PlacePose, x_t: &Vector2<f64>, theta_l: f64) -> Result<(f64, DVector<f64>)> {
    let PlacePose::Planar(p) = x_p else {
        return Err(Error::SpaceMismatch);
    };
    let n = line_normal(theta_l);
    let e = (p.translation() - x_t).dot(&n);
    Ok((e * e, DVector::from_vec(vec![2.0 * e * n.x, 2.0 * e * n.y, 0.0])))
}

pub fn line_normal(theta_l: f64) -> Vector2<f64> {
    Vector2::new(theta_l.cos(), theta_l.sin())
}

pub fn line_direction(theta_l: f64) -> Vector2<f64> {
    Vector2::new(-theta_l.sin(), theta_l.cos())
}

/// Full axis-aligned lengths `(L, W, H)` of a cloud.
pub fn object_extents(z_o: &PointCloud) -> Result<Vector3<f64>> {
    let (lo, hi) = z_o.aabb().ok_or(Error::EmptyInput("object cloud"))?;
    Ok(hi - lo)
}

/// Orientation part of the stacking cost: `(1, 0, 1)·R̂·(L, W, H)ᵀ`, with its
/// gradient over a world-frame rotation perturbation.
pub fn stack_orientation_cost(r: &Matrix3<f64>, extents: &Vector3<f64>, mode: AbsRotationMode) -> (f64, Vector3<f64>) {
    let w = Vector3::new(1.0, 0.0, 1.0);
    let value = w.dot(&(abs_rotation_matrix(r, mode) * extents));
    let grad = match mode {
        AbsRotationMode::Elementwise => {
            // d|R_ij| = s_ij (δ × r_j)_i, so the j-th column contributes
            // e_j · r_j × (w ⊙ s_j)
            let mut g = Vector3::zeros();
            for j in 0..3 {
                let rj = r.column(j).into_owned();
                let ws = Vector3::from_fn(|i, _| w[i] * sign(r[(i, j)]));
                g += rj.cross(&ws) * extents[j];
            }
            g
        }
        AbsRotationMode::PerAxisProduct => {
            let (a, b, c) = euler_xyz(r);
            let rot_x = |t: f64| Rotation3::from_axis_angle(&Vector3::x_axis(), t).into_inner();
            let rot_y = |t: f64| Rotation3::from_axis_angle(&Vector3::y_axis(), t).into_inner();
            let rot_z = |t: f64| Rotation3::from_axis_angle(&Vector3::z_axis(), t).into_inner();
            let (rx, ry, rz) = (rot_x(a), rot_y(b), rot_z(c));
            let d_abs = |m: Matrix3<f64>, dm: Matrix3<f64>| m.zip_map(&dm, |v, dv| sign(v) * dv);
            // dR_k(t)/dt is R_k(t + π/2) with the fixed axis entry removed
            let quarter = std::f64::consts::FRAC_PI_2;
            let drop = |mut m: Matrix3<f64>, k: usize| {
                m[(k, k)] = 0.0;
                m
            };
            let dx = d_abs(rx, drop(rot_x(a + quarter), 0));
            let dy = d_abs(ry, drop(rot_y(b + quarter), 1));
            let dz = d_abs(rz, drop(rot_z(c + quarter), 2));
            let (ax, ay, az) = (rx.abs(), ry.abs(), rz.abs());
            let ga = Vector3::new(
                w.dot(&(dx * ay * az * extents)),
                w.dot(&(ax * dy * az * extents)),
                w.dot(&(ax * ay * dz * extents)),
            );
            // world angular velocity ω = E·(ȧ, ḃ, ċ)
            let e = Matrix3::from_columns(&[Vector3::x(), rx * Vector3::y(), rx * ry * Vector3::z()]);
            e.transpose().try_inverse().map(|m| m * ga).unwrap_or_else(Vector3::zeros)
        }
    };
    (value, grad)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Stacking cost: orientation term plus `½λ_c|t − x_c|²` holding the
/// object near the stack.
pub fn cost_stack(
    x_p: &PlacePose,
    z_o: &PointCloud,
    x_c: &Vector3<f64>,
    tether: f64,
    mode: AbsRotationMode,
) -> Result<(f64, DVector<f64>)> {
    let PlacePose::Spatial(p) = x_p else {
        return Err(Error::SpaceMismatch);
    };
    let ext = object_extents(z_o)?;
    check_extents(&ext)?;
    Ok(stack_with_extents(p, &ext, x_c, tether, mode))
}

fn check_extents(ext: &Vector3<f64>) -> Result<()> {
    if ext.iter().any(|&e| !(e > 1e-9)) {
        return Err(Error::DegenerateGeometry(format!("object extents {:?}", ext.as_slice())));
    }
    Ok(())
}

fn stack_with_extents(p: &Pose3, ext: &Vector3<f64>, x_c: &Vector3<f64>, tether: f64, mode: AbsRotationMode) -> (f64, DVector<f64>) {
    let (v, gr) = stack_orientation_cost(&p.rotation_matrix(), ext, mode);
    let d = p.translation - x_c;
    let gt = d * tether;
    (v + 0.5 * tether * d.norm_squared(), DVector::from_vec(vec![gt.x, gt.y, gt.z, gr.x, gr.y, gr.z]))
}

/// Packing geometry with the placed object kept in its centroid frame.
#[derive(Clone, Debug)]
pub struct PackGeometry {
    local: Vec<Vector2<f64>>,
    length: f64,
    width: f64,
    scene: Option<[SoftExtreme; 4]>,
    scene_box: Option<[f64; 4]>,
    reference: Vector2<f64>,
    beta: f64,
}

/// Running log-sum-exp of `β·v` over a fixed point set.
#[derive(Clone, Copy, Debug)]
struct SoftExtreme {
    max: f64,
    sum: f64,
}

impl SoftExtreme {
    fn of(values: impl Iterator<Item = f64>, beta: f64) -> Option<Self> {
        let v: Vec<f64> = values.collect();
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return None;
        }
        Some(Self { max, sum: v.iter().map(|x| (beta * (x - max)).exp()).sum() })
    }
}

/// Hard and smooth packing evaluations.
#[derive(Clone, Debug)]
pub struct PackEval {
    /// Cost value with exact bounding boxes.
    pub value: f64,
    /// Smooth value, consistent with `gradient`.
    pub smooth_value: f64,
    pub gradient: DVector<f64>,
    /// Area of the scene footprint after placement.
    pub area_after: f64,
}

impl PackGeometry {
    pub fn new(z_o: &PointCloud, z_e: &PointCloud, reference: Vector2<f64>, beta: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::InvalidParameter(format!("softmax temperature must be positive, got {beta}")));
        }
        let c = centroid(z_o)?;
        let local: Vec<Vector2<f64>> = z_o.points.iter().map(|p| Vector2::new(p.x - c.x, p.y - c.y)).collect();
        let (lo, hi) = z_o.aabb().ok_or(Error::EmptyInput("object cloud"))?;
        let scene = if z_e.is_empty() {
            None
        } else {
            let xs = || z_e.points.iter().map(|p| p.x);
            let ys = || z_e.points.iter().map(|p| p.y);
            Some([
                SoftExtreme::of(xs(), beta).unwrap(),
                SoftExtreme::of(xs().map(|v| -v), beta).unwrap(),
                SoftExtreme::of(ys(), beta).unwrap(),
                SoftExtreme::of(ys().map(|v| -v), beta).unwrap(),
            ])
        };
        let scene_box = scene.map(|s| [s[0].max, -s[1].max, s[2].max, -s[3].max]);
        Ok(Self { local, length: hi.x - lo.x, width: hi.y - lo.y, scene, scene_box, reference, beta })
    }

    /// Footprint area of the scene alone, zero for an empty scene.
    pub fn area_before(&self) -> f64 {
        self.scene_box.map(|[xh, xl, yh, yl]| (xh - xl) * (yh - yl)).unwrap_or(0.0)
    }

    pub fn object_size(&self) -> (f64, f64) {
        (self.length, self.width)
    }

    pub fn evaluate(&self, p: &Pose2) -> PackEval {
        let (s, c) = p.theta.sin_cos();
        let placed: Vec<Vector2<f64>> =
            self.local.iter().map(|q| Vector2::new(c * q.x - s * q.y + p.x, s * q.x + c * q.y + p.y)).collect();
        let dtheta: Vec<Vector2<f64>> = self.local.iter().map(|q| Vector2::new(-s * q.x - c * q.y, c * q.x - s * q.y)).collect();

        // hard extents
        let mut bx = self.scene_box.unwrap_or([f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY]);
        for q in &placed {
            bx[0] = bx[0].max(q.x);
            bx[1] = bx[1].min(q.x);
            bx[2] = bx[2].max(q.y);
            bx[3] = bx[3].min(q.y);
        }
        let area_after = (bx[0] - bx[1]) * (bx[2] - bx[3]);

        // smooth extents as ±(1/β)·ln Σ exp(±β·v)
        let mut soft = [0.0; 4];
        let mut dsoft = [Vector3::zeros(); 4];
        for k in 0..4 {
            let (sgn, axis) = match k {
                0 => (1.0, 0),
                1 => (-1.0, 0),
                2 => (1.0, 1),
                _ => (-1.0, 1),
            };
            let vals: Vec<f64> = placed.iter().map(|q| sgn * q[axis]).collect();
            let mut m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if let Some(sc) = self.scene.map(|s| s[k]) {
                m = m.max(sc.max);
            }
            let weights: Vec<f64> = vals.iter().map(|v| (self.beta * (v - m)).exp()).collect();
            let scene_sum = self.scene.map(|s| s[k].sum * (self.beta * (s[k].max - m)).exp()).unwrap_or(0.0);
            let total: f64 = weights.iter().sum::<f64>() + scene_sum;
            soft[k] = sgn * (m + total.ln() / self.beta);
            let mut g = Vector3::zeros();
            for (w, dq) in weights.iter().zip(&dtheta) {
                let w = w / total;
                g[axis] += w;
                g[2] += w * dq[axis];
            }
            // the sign of the extreme cancels the sign inside the exponent
            dsoft[k] = g;
        }
        let (l, w) = (soft[0] - soft[1], soft[2] - soft[3]);
        let dl = dsoft[0] - dsoft[1];
        let dw = dsoft[2] - dsoft[3];

        let (lin, dlin) = self.linear_term(p);
        let gradient = dl * w + dw * l + dlin;
        PackEval {
            value: area_after + lin,
            smooth_value: l * w + lin,
            gradient: DVector::from_column_slice(gradient.as_slice()),
            area_after,
        }
    }

    /// `(1, 1, 0)·T_2(x_p)·(L_O, W_O, 1)ᵀ` measured from the reference point.
    fn linear_term(&self, p: &Pose2) -> (f64, Vector3<f64>) {
        let (s, c) = p.theta.sin_cos();
        let (l, w) = (self.length, self.width);
        let t = p.translation() - self.reference;
        let v = (c * l - s * w + t.x) + (s * l + c * w + t.y);
        (v, Vector3::new(1.0, 1.0, (-s + c) * l + (-c - s) * w))
    }
}

/// Packing cost with exact extents; the gradient comes from the
/// log-sum-exp bounding box at temperature `β`.
pub fn cost_pack(
    x_p: &PlacePose,
    z_o: &PointCloud,
    z_e: &PointCloud,
    reference: &Vector2<f64>,
    beta: f64,
) -> Result<(f64, DVector<f64>)> {
    let PlacePose::Planar(p) = x_p else {
        return Err(Error::SpaceMismatch);
    };
    if z_e.is_empty() {
        return Err(Error::EmptyInput("scene cloud"));
    }
    let e = PackGeometry::new(z_o, z_e, *reference, beta)?.evaluate(p);
    Ok((e.value, e.gradient))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Target,
    Pack,
    Stack,
    Inline,
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TaskKind::Target => "target",
            TaskKind::Pack => "pack",
            TaskKind::Stack => "stack",
            TaskKind::Inline => "inline",
        })
    }
}

/// Parameters of a placement task.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskParams {
    pub kind: TaskKind,
    /// Likelihood sharpness.
    pub alpha: f64,
    /// Target pose, or a point on the line for inline placement.
    pub target: Option<PlacePose>,
    pub line_angle: f64,
    /// Centroid of the stack being built on.
    pub stack_base: Vector3<f64>,
    pub tether: f64,
    pub beta: f64,
    pub pack_reference: Vector2<f64>,
    pub abs_mode: AbsRotationMode,
}

impl TaskParams {
    pub fn new(kind: TaskKind) -> Self {
        Self {
            kind,
            alpha: 1.0,
            target: None,
            line_angle: 0.0,
            stack_base: Vector3::zeros(),
            tether: 10.0,
            beta: 100.0,
            pack_reference: Vector2::zeros(),
            abs_mode: AbsRotationMode::Elementwise,
        }
    }

    pub fn target(target: PlacePose, alpha: f64) -> Self {
        Self { alpha, target: Some(target), ..Self::new(TaskKind::Target) }
    }

    pub fn inline(point: Vector2<f64>, line_angle: f64, alpha: f64) -> Self {
        Self {
            alpha,
            line_angle,
            target: Some(PlacePose::Planar(Pose2::new(point.x, point.y, 0.0))),
            ..Self::new(TaskKind::Inline)
        }
    }

    pub fn pack(alpha: f64) -> Self {
        Self { alpha, ..Self::new(TaskKind::Pack) }
    }

    pub fn stack(base: Vector3<f64>, alpha: f64) -> Self {
        Self { alpha, stack_base: base, ..Self::new(TaskKind::Stack) }
    }

    pub fn space(&self) -> PoseSpace {
        match self.kind {
            TaskKind::Target => self.target.map(|t| t.space()).unwrap_or(PoseSpace::Planar),
            TaskKind::Pack | TaskKind::Inline => PoseSpace::Planar,
            TaskKind::Stack => PoseSpace::Spatial,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidParameter(format!("alpha must be positive, got {}", self.alpha)));
        }
        if matches!(self.kind, TaskKind::Target | TaskKind::Inline) && self.target.is_none() {
            return Err(Error::InvalidParameter(format!("{} task needs a target", self.kind)));
        }
        if self.kind == TaskKind::Inline && self.target.map(|t| t.space()) != Some(PoseSpace::Planar) {
            return Err(Error::InvalidParameter("inline target must be planar".into()));
        }
        if !(self.tether >= 0.0) || !(self.beta > 0.0) {
            return Err(Error::InvalidParameter("tether must be non-negative and beta positive".into()));
        }
        Ok(())
    }
}

/// What a cost needs besides the pose: the object, the place scene and the
/// task, with per-task precomputation.
#[derive(Clone, Debug)]
pub struct CostContext {
    pub params: TaskParams,
    pub object: PointCloud,
    pub scene: PointCloud,
    extents: Vector3<f64>,
    pack: Option<PackGeometry>,
}

impl CostContext {
    pub fn new(params: TaskParams, object: PointCloud, scene: PointCloud) -> Result<Self> {
        params.validate()?;
        let extents = object_extents(&object)?;
        if params.kind == TaskKind::Stack {
            check_extents(&extents)?;
        }
        let pack = match params.kind {
            TaskKind::Pack => Some(PackGeometry::new(&object, &scene, params.pack_reference, params.beta)?),
            _ => None,
        };
        Ok(Self { params, object, scene, extents, pack })
    }

    pub fn extents(&self) -> Vector3<f64> {
        self.extents
    }

    pub fn pack_geometry(&self) -> Option<&PackGeometry> {
        self.pack.as_ref()
    }
}

/// Smooth value and gradient over the pose parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct CostEval {
    pub value: f64,
    pub gradient: DVector<f64>,
}

/// A differentiable placement cost.
pub trait PlacementCost: Send + Sync {
    fn space(&self, ctx: &CostContext) -> PoseSpace;

    /// Value and gradient the optimizer follows.
    fn evaluate(&self, x_p: &PlacePose, ctx: &CostContext) -> Result<CostEval>;

    /// Reported value; differs from the smooth value only where a
    /// non-differentiable cost is smoothed.
    fn value(&self, x_p: &PlacePose, ctx: &CostContext) -> Result<f64> {
        Ok(self.evaluate(x_p, ctx)?.value)
    }

    fn gradient(&self, x_p: &PlacePose, ctx: &CostContext) -> Result<DVector<f64>> {
        Ok(self.evaluate(x_p, ctx)?.gradient)
    }

    /// Reported likelihood in `[0, 1]` for bounded-below costs.
    fn likelihood(&self, x_p: &PlacePose, ctx: &CostContext) -> Result<f64> {
        Ok(likelihood_from_cost(self.value(x_p, ctx)?, ctx.params.alpha))
    }
}

impl PlacementCost for TaskKind {
    fn space(&self, ctx: &CostContext) -> PoseSpace {
        ctx.params.space()
    }

    fn evaluate(&self, x_p: &PlacePose, ctx: &CostContext) -> Result<CostEval> {
        let p = &ctx.params;
        let (value, gradient) = match self {
            TaskKind::Target => cost_target(x_p, p.target.as_ref().expect("validated"))?,
            TaskKind::Inline => {
                let t = p.target.expect("validated").translation();
                cost_inline(x_p, &Vector2::new(t.x, t.y), p.line_angle)?
            }
            TaskKind::Stack => {
                let PlacePose::Spatial(q) = x_p else {
                    return Err(Error::SpaceMismatch);
                };
                stack_with_extents(q, &ctx.extents, &p.stack_base, p.tether, p.abs_mode)
            }
            TaskKind::Pack => {
                let PlacePose::Planar(q) = x_p else {
                    return Err(Error::SpaceMismatch);
                };
                let e = ctx.pack.as_ref().expect("built for packing").evaluate(q);
                (e.smooth_value, e.gradient)
            }
        };
        Ok(CostEval { value, gradient })
    }

    fn value(&self, x_p: &PlacePose, ctx: &CostContext) -> Result<f64> {
        match (self, x_p) {
            (TaskKind::Pack, PlacePose::Planar(q)) => Ok(ctx.pack.as_ref().expect("built for packing").evaluate(q).value),
            _ => Ok(self.evaluate(x_p, ctx)?.value),
        }
    }

    /// Packing reports footprint growth: 1 when the placed object stays
    /// inside the scene's existing bounding box.
    fn likelihood(&self, x_p: &PlacePose, ctx: &CostContext) -> Result<f64> {
        match (self, x_p) {
            (TaskKind::Pack, PlacePose::Planar(q)) => {
                let g = ctx.pack.as_ref().expect("built for packing");
                let growth = (g.evaluate(q).area_after - g.area_before()).max(0.0);
                Ok(likelihood_from_cost(growth, ctx.params.alpha))
            }
            (TaskKind::Pack, _) => Err(Error::SpaceMismatch),
            _ => Ok(likelihood_from_cost(self.value(x_p, ctx)?, ctx.params.alpha)),
        }
    }
}

/// Object points placed at `x_p`, with the object frame at its centroid.
pub fn place_cloud(z_o: &PointCloud, x_p: &PlacePose, z: f64) -> Result<PointCloud> {
    let c = centroid(z_o)?;
    let pose = x_p.to_pose3(z);
    let r = x_p.rotation_matrix();
    let t = pose.translation;
    let pts = z_o.points.iter().map(|p| Point3::from(r * (p.coords - c) + t)).collect();
    Ok(PointCloud::new(pts, "world"))
}
