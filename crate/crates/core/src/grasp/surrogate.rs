use nalgebra::Vector3;

use super::{GraspConfig, GraspGradient, GraspModel, HandParams, ObjectSummary};

/// Weights and scales of the analytic success surrogate.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SurrogateParams {
    pub w_dist: f64,
    pub w_align: f64,
    pub w_width: f64,
    pub bias: f64,
    /// Position scale σ_p, meters.
    pub sigma_pos: f64,
    /// Width scale σ_w, meters.
    pub sigma_width: f64,
    /// Palm-to-centroid standoff along the approach axis, meters.
    pub standoff: f64,
    pub hand: HandParams,
}

impl Default for SurrogateParams {
    fn default() -> Self {
        Self {
            w_dist: 1.0,
            w_align: 1.0,
            w_width: 1.0,
            bias: 2.0,
            sigma_pos: 0.05,
            sigma_width: 0.02,
            standoff: 0.12,
            hand: HandParams::default(),
        }
    }
}

/// `F = σ(w₁·a_dist + w₂·a_align + w₃·a_width + b)` with
///
/// * `a_dist = −‖p − (c − d·a)‖² / σ_p²`
/// * `a_align = a · (c − p) / ‖c − p‖`
/// * `a_width = −(opening(q_h) − w_req)² / σ_w²`
///
/// where `a` is the approach axis, `c` the object centroid and `w_req` the
/// object's extent along the closing axis.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SurrogateModel {
    pub params: SurrogateParams,
}

impl SurrogateModel {
    pub fn new(params: SurrogateParams) -> Self {
        Self { params }
    }

    /// Palm position scored best for approach `a`.
    pub fn ideal_position(&self, o: &ObjectSummary, a: &Vector3<f64>) -> Vector3<f64> {
        o.centroid - a * self.params.standoff
    }
}

impl GraspModel for SurrogateModel {
    fn hand(&self) -> &HandParams {
        &self.params.hand
    }

    fn logit(&self, g: &GraspConfig, o: &ObjectSummary) -> (f64, GraspGradient) {
        let k = &self.params;
        let p = g.palm.translation;
        let a = g.approach();
        let b = g.closing();
        let c = o.centroid;
        let mut grad = GraspGradient::zeros();

        let r = p - c + a * k.standoff;
        let sp2 = k.sigma_pos * k.sigma_pos;
        let a_dist = -r.norm_squared() / sp2;
        let dist_t = r * (-2.0 / sp2);
        let dist_rot = a.cross(&r) * (-2.0 * k.standoff / sp2);

        let v = c - p;
        let n = v.norm();
        let (a_align, align_t, align_rot) = if n > 1e-12 {
            let f = a.dot(&v) / n;
            (f, -(a / n - v * (a.dot(&v) / (n * n * n))), a.cross(&v) / n)
        } else {
            (0.0, Vector3::zeros(), Vector3::zeros())
        };

        let sw2 = k.sigma_width * k.sigma_width;
        let open = k.hand.opening(g.preshape);
        let need = o.required_width(&b);
        let gap = open - need;
        let a_width = -gap * gap / sw2;
        let width_q = -2.0 * gap * k.hand.opening_slope / sw2;
        let width_rot = o.required_width_rot_grad(&b) * (2.0 * gap / sw2);

        let z = k.w_dist * a_dist + k.w_align * a_align + k.w_width * a_width + k.bias;
        let t = dist_t * k.w_dist + align_t * k.w_align;
        let rot = dist_rot * k.w_dist + align_rot * k.w_align + width_rot * k.w_width;
        grad.fixed_rows_mut::<3>(0).copy_from(&t);
        grad.fixed_rows_mut::<3>(3).copy_from(&rot);
        grad[6] = width_q * k.w_width;
        (z, grad)
    }
}
