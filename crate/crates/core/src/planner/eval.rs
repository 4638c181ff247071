//! The joint objective and constraints over the solver's variable vector.

use std::ops::Range;

use nalgebra::{DVector, Matrix3, Matrix6, Point3, Rotation3, Vector3};

use super::Problem;
use crate::costs::{PlacePose, PlacementCost, PoseSpace};
use crate::geom::{so3, Pose2, Pose3};
use crate::grasp::GraspConfig;
use crate::robot::pose_error;
use crate::sdf::TruncatedSdf;
use crate::Result;

/// Offsets into `[x_p | palm t | palm ω | preshape | q_g | q_p]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Layout {
    pub np: usize,
    pub nq: usize,
}

impl Layout {
    pub fn new(space: PoseSpace, nq: usize) -> Self {
        Self { np: space.dim(), nq }
    }

    pub fn place(&self) -> Range<usize> {
        0..self.np
    }

    pub fn palm_t(&self) -> Range<usize> {
        self.np..self.np + 3
    }

    pub fn palm_w(&self) -> Range<usize> {
        self.np + 3..self.np + 6
    }

    pub fn preshape(&self) -> usize {
        self.np + 6
    }

    pub fn q_grasp(&self) -> Range<usize> {
        self.np + 7..self.np + 7 + self.nq
    }

    pub fn q_place(&self) -> Range<usize> {
        self.np + 7 + self.nq..self.np + 7 + 2 * self.nq
    }

    pub fn len(&self) -> usize {
        self.np + 7 + 2 * self.nq
    }

    pub fn grasp_block(&self) -> Range<usize> {
        self.np..self.np + 7
    }
}

/// Which parts of the problem an evaluator includes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Terms {
    pub grasp_objective: bool,
    pub place_objective: bool,
    pub grasp_constraints: bool,
    pub place_constraints: bool,
}

impl Terms {
    pub const ALL: Terms = Terms { grasp_objective: true, place_objective: true, grasp_constraints: true, place_constraints: true };
    pub const GRASP: Terms = Terms { grasp_objective: true, place_objective: false, grasp_constraints: true, place_constraints: false };
    pub const PLACE: Terms = Terms { grasp_objective: false, place_objective: true, grasp_constraints: false, place_constraints: true };
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum IneqKind {
    PlaceObject,
    PlaceRobot,
    GraspRobot,
    Table,
}

/// Reference rotations the exponential-map variables perturb.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Frame {
    pub place_rot: Rotation3<f64>,
    pub palm_rot: Rotation3<f64>,
}

#[derive(Clone, Debug)]
pub(crate) struct State {
    pub place: PlacePose,
    pub place3: Pose3,
    pub grasp: GraspConfig,
    pub q_grasp: Vec<f64>,
    pub q_place: Vec<f64>,
}

#[derive(Clone, Debug)]
pub(crate) struct Evaluation {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub eq: Vec<f64>,
    pub eq_grad: Vec<Vec<f64>>,
    pub ineq: Vec<f64>,
    pub ineq_grad: Vec<Vec<f64>>,
    pub ineq_kind: Vec<IneqKind>,
    /// Norms of the grasp and place pose errors, when included.
    pub fk_grasp: Option<f64>,
    pub fk_place: Option<f64>,
    pub log_success: Option<f64>,
    pub place_cost: Option<f64>,
}

impl Evaluation {
    pub fn violation(&self) -> f64 {
        let e = self.eq.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        self.ineq.iter().fold(e, |m, v| m.max(*v))
    }
}

pub(crate) struct Evaluator<'a> {
    pub problem: &'a Problem,
    pub layout: Layout,
    pub terms: Terms,
    /// Clearance demanded by the collision constraints.
    pub margin: f64,
    pub frame: Frame,
}

impl<'a> Evaluator<'a> {
    pub fn new(problem: &'a Problem, terms: Terms, margin: f64, frame: Frame) -> Self {
        let layout = Layout::new(problem.space(), problem.spec.arm.dof());
        Self { problem, layout, terms, margin, frame }
    }

    /// Packs a configuration; rotations go into the frame with zero increments.
    pub fn encode(problem: &Problem, place: &PlacePose, grasp: &GraspConfig, q_g: &[f64], q_p: &[f64]) -> (Vec<f64>, Frame) {
        let l = Layout::new(problem.space(), problem.spec.arm.dof());
        let mut x = vec![0.0; l.len()];
        let place_rot = match place {
            PlacePose::Planar(p) => {
                x[0] = p.x;
                x[1] = p.y;
                x[2] = p.theta;
                Rotation3::identity()
            }
            PlacePose::Spatial(p) => {
                x[..3].copy_from_slice(p.translation.as_slice());
                p.rotation().to_rotation_matrix()
            }
        };
        x[l.palm_t()].copy_from_slice(grasp.palm.translation.as_slice());
        x[l.preshape()] = grasp.preshape;
        x[l.q_grasp()].copy_from_slice(q_g);
        x[l.q_place()].copy_from_slice(q_p);
        (x, Frame { place_rot, palm_rot: grasp.palm.rotation().to_rotation_matrix() })
    }

    fn place_omega(&self, x: &[f64]) -> Vector3<f64> {
        match self.layout.np {
            6 => Vector3::new(x[3], x[4], x[5]),
            _ => Vector3::zeros(),
        }
    }

    fn palm_omega(&self, x: &[f64]) -> Vector3<f64> {
        Vector3::from_column_slice(&x[self.layout.palm_w()])
    }

    pub fn decode(&self, x: &[f64]) -> State {
        let l = &self.layout;
        let (place, place3) = if l.np == 3 {
            let p = PlacePose::Planar(Pose2 { x: x[0], y: x[1], theta: x[2] });
            (p, self.problem.place_pose3(&p))
        } else {
            let r = so3::exp(&self.place_omega(x)) * self.frame.place_rot;
            let p = Pose3::from_rotation_matrix(Vector3::new(x[0], x[1], x[2]), &r);
            (PlacePose::Spatial(p), p)
        };
        let rg = so3::exp(&self.palm_omega(x)) * self.frame.palm_rot;
        let palm = Pose3::from_rotation_matrix(Vector3::from_column_slice(&x[l.palm_t()]), &rg);
        State {
            place,
            place3,
            grasp: GraspConfig::new(palm, x[l.preshape()]),
            q_grasp: x[l.q_grasp()].to_vec(),
            q_place: x[l.q_place()].to_vec(),
        }
    }

    /// Folds the rotation increments into the frame.
    pub fn rebase(&mut self, x: &mut [f64]) {
        if self.layout.np == 6 {
            self.frame.place_rot = so3::exp(&self.place_omega(x)) * self.frame.place_rot;
            x[3..6].fill(0.0);
        }
        self.frame.palm_rot = so3::exp(&self.palm_omega(x)) * self.frame.palm_rot;
        let r = self.layout.palm_w();
        x[r].fill(0.0);
    }

    /// Adds a gradient over `(t, δ)` of the placement to `out`.
    fn add_place(&self, out: &mut [f64], x: &[f64], gt: &Vector3<f64>, gd: &Vector3<f64>) {
        if self.layout.np == 3 {
            out[0] += gt.x;
            out[1] += gt.y;
            out[2] += gd.z;
        } else {
            let gw = so3::left_jacobian(&self.place_omega(x)).transpose() * gd;
            for k in 0..3 {
                out[k] += gt[k];
                out[3 + k] += gw[k];
            }
        }
    }

    fn add_palm(&self, out: &mut [f64], x: &[f64], gt: &Vector3<f64>, gd: &Vector3<f64>) {
        let gw = so3::left_jacobian(&self.palm_omega(x)).transpose() * gd;
        let (t, w) = (self.layout.palm_t(), self.layout.palm_w());
        for k in 0..3 {
            out[t.start + k] += gt[k];
            out[w.start + k] += gw[k];
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> Evaluation {
        let p = self.problem;
        let l = self.layout;
        let n = l.len();
        let st = self.decode(x);
        let mut ev = Evaluation {
            value: 0.0,
            gradient: vec![0.0; n],
            eq: Vec::new(),
            eq_grad: Vec::new(),
            ineq: Vec::new(),
            ineq_grad: Vec::new(),
            ineq_kind: Vec::new(),
            fk_grasp: None,
            fk_place: None,
            log_success: None,
            place_cost: None,
        };
        let rp = st.place3.rotation_matrix();
        let rg = st.grasp.palm.rotation_matrix();
        let tp = st.place3.translation;
        let tg = st.grasp.palm.translation;
        let c = p.centroid;

        if self.terms.grasp_objective {
            let (lf, g) = p.spec.grasp_model.log_success(&st.grasp, &p.summary);
            ev.value -= lf;
            ev.log_success = Some(lf);
            let mut grad = std::mem::take(&mut ev.gradient);
            self.add_palm(&mut grad, x, &-g.fixed_rows::<3>(0).into_owned(), &-g.fixed_rows::<3>(3).into_owned());
            grad[l.preshape()] -= g[6];
            ev.gradient = grad;
        }
        if self.terms.place_objective {
            let ctx = &p.cost;
            let e = ctx.params.kind.evaluate(&st.place, ctx).expect("task space matches the layout");
            let a = ctx.params.alpha;
            ev.value += a * e.value;
            ev.place_cost = Some(e.value);
            let g = &e.gradient;
            let mut grad = std::mem::take(&mut ev.gradient);
            if l.np == 3 {
                for k in 0..3 {
                    grad[k] += a * g[k];
                }
            } else {
                let gt = Vector3::new(g[0], g[1], g[2]) * a;
                let gd = Vector3::new(g[3], g[4], g[5]) * a;
                self.add_place(&mut grad, x, &gt, &gd);
            }
            ev.gradient = grad;
        }

        let arm = &p.spec.arm;
        if self.terms.grasp_constraints {
            let (pose, jac) = arm.fk_jacobian(&st.q_grasp).expect("layout matches the arm");
            let (e, d) = pose_error(&pose, &st.grasp.palm);
            let jq = dense_rows(&d.wrt_a, &jac);
            ev.fk_grasp = Some(e.norm());
            for r in 0..6 {
                let mut row = vec![0.0; n];
                for (k, v) in l.q_grasp().zip(jq[r].iter()) {
                    row[k] = *v;
                }
                let gt = Vector3::new(d.wrt_b[(r, 0)], d.wrt_b[(r, 1)], d.wrt_b[(r, 2)]);
                let gd = Vector3::new(d.wrt_b[(r, 3)], d.wrt_b[(r, 4)], d.wrt_b[(r, 5)]);
                self.add_palm(&mut row, x, &gt, &gd);
                ev.eq.push(e[r]);
                ev.eq_grad.push(row);
            }
            if let Some(sdf) = p.grasp_sdf.as_deref() {
                for s in p.spec.gripper.spheres() {
                    let u = rg * s.center();
                    let w = Point3::from(u + tg);
                    let q = sdf.query_with(&w, p.spec.solver.gradient_mode);
                    let mut row = vec![0.0; n];
                    self.add_palm(&mut row, x, &-q.gradient, &-u.cross(&q.gradient));
                    ev.ineq.push(self.margin - (q.distance - s.radius));
                    ev.ineq_grad.push(row);
                    ev.ineq_kind.push(IneqKind::GraspRobot);
                }
            }
        }

        if self.terms.place_constraints {
            let (pose, jac) = arm.fk_jacobian(&st.q_place).expect("layout matches the arm");
            let v = rp * (tg - c);
            let hand = Pose3::from_rotation_matrix(v + tp, &Rotation3::from_matrix_unchecked(rp * rg));
            let (e, d) = pose_error(&pose, &hand);
            let jq = dense_rows(&d.wrt_a, &jac);
            ev.fk_place = Some(e.norm());
            let m = d.wrt_b;
            let at: Matrix6x3 = m.fixed_view::<6, 3>(0, 0).into_owned();
            let ar: Matrix6x3 = m.fixed_view::<6, 3>(0, 3).into_owned();
            let d_tp = at;
            let d_dp = at * (-so3::hat(&v)) + ar;
            let d_tg = at * rp;
            let d_dg = ar * rp;
            for r in 0..6 {
                let mut row = vec![0.0; n];
                for (k, val) in l.q_place().zip(jq[r].iter()) {
                    row[k] = *val;
                }
                self.add_place(&mut row, x, &d_tp.row(r).transpose(), &d_dp.row(r).transpose());
                self.add_palm(&mut row, x, &d_tg.row(r).transpose(), &d_dg.row(r).transpose());
                ev.eq.push(e[r]);
                ev.eq_grad.push(row);
            }

            if let Some(sdf) = p.place_sdf.as_deref() {
                self.place_collisions(&mut ev, x, sdf, &rp, &rg, &tp, &tg);
            }
            if l.np == 6 {
                // lowest object point stays on or above the surface
                let (u, z) = p
                    .object_local
                    .iter()
                    .map(|q| {
                        let u = rp * q;
                        (u, u.z + tp.z)
                    })
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .expect("object is non-empty");
                let mut row = vec![0.0; n];
                self.add_place(&mut row, x, &-Vector3::z(), &-u.cross(&Vector3::z()));
                ev.ineq.push(p.spec.surface.height - z);
                ev.ineq_grad.push(row);
                ev.ineq_kind.push(IneqKind::Table);
            }
        }
        ev
    }

    #[allow(clippy::too_many_arguments)]
    fn place_collisions(
        &self,
        ev: &mut Evaluation,
        x: &[f64],
        sdf: &TruncatedSdf,
        rp: &Matrix3<f64>,
        rg: &Matrix3<f64>,
        tp: &Vector3<f64>,
        tg: &Vector3<f64>,
    ) {
        let p = self.problem;
        let n = self.layout.len();
        let mode = p.spec.solver.gradient_mode;
        let mut best: Option<(f64, Vector3<f64>, Vector3<f64>)> = None;
        for q in &p.object_local {
            let u = rp * q;
            let s = sdf.query_with(&Point3::from(u + tp), mode);
            if best.is_none_or(|b| s.distance < b.0) {
                best = Some((s.distance, u, s.gradient));
            }
        }
        let (dist, u, grad) = best.expect("object is non-empty");
        let mut row = vec![0.0; n];
        self.add_place(&mut row, x, &-grad, &-u.cross(&grad));
        ev.ineq.push(self.margin - dist);
        ev.ineq_grad.push(row);
        ev.ineq_kind.push(IneqKind::PlaceObject);

        for s in p.spec.gripper.spheres() {
            let us = rg * s.center();
            let ci = us + tg - p.centroid;
            let wv = rp * ci;
            let q = sdf.query_with(&Point3::from(wv + tp), mode);
            let local = rp.transpose() * q.gradient;
            let mut row = vec![0.0; n];
            self.add_place(&mut row, x, &-q.gradient, &-wv.cross(&q.gradient));
            self.add_palm(&mut row, x, &-local, &-us.cross(&local));
            ev.ineq.push(self.margin - (q.distance - s.radius));
            ev.ineq_grad.push(row);
            ev.ineq_kind.push(IneqKind::PlaceRobot);
        }
    }
}

type Matrix6x3 = nalgebra::Matrix6x3<f64>;

/// Rows of `a · jac` as plain vectors.
fn dense_rows(a: &Matrix6<f64>, jac: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    let m = a * jac;
    (0..6).map(|r| m.row(r).iter().cloned().collect()).collect()
}

/// `α·H(x_p) − ln F(θ_g)` and its gradient over
/// `[x_p params | palm t | palm δ | preshape]`, rotations perturbed in the
/// world frame.
pub fn objective(problem: &Problem, grasp: &GraspConfig, place: &PlacePose) -> Result<(f64, DVector<f64>)> {
    if place.space() != problem.space() {
        return Err(crate::Error::SpaceMismatch);
    }
    let nq = problem.spec.arm.dof();
    let q = vec![0.0; nq];
    let (x, frame) = Evaluator::encode(problem, place, grasp, &q, &q);
    let ev = Evaluator::new(problem, Terms { grasp_constraints: false, place_constraints: false, ..Terms::ALL }, 0.0, frame);
    let e = ev.evaluate(&x);
    let np = ev.layout.np;
    Ok((e.value, DVector::from_column_slice(&e.gradient[..np + 7])))
}
