//! Success logits sampled on a regular grid, loaded from `GMOD1` files.
//!
//! Grid axes, in order: palm offset x, y, z in the object's principal frame
//! (meters), approach azimuth and elevation in the same frame (radians), and
//! preshape. The finger roll about the approach axis is not tabulated; a
//! tabulated model assumes the canonical closing axis of
//! [`canonical_closing_axis`].
//!
//! File layout, all little-endian:
//!
//! ```text
//! magic   5 bytes  "GMOD1"
//! axes    6 × (u32 count, f64 min, f64 max)
//! logits  Π count × f32, row-major, last axis fastest
//! ```

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Vector3};

use super::{GraspConfig, GraspGradient, GraspModel, HandParams, ObjectSummary};
use crate::geom::Pose3;
use crate::{Error, Result};

pub const GMOD_MAGIC: &[u8; 5] = b"GMOD1";
const AXES: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TabAxis {
    pub count: usize,
    pub min: f64,
    pub max: f64,
}

impl TabAxis {
    pub fn new(count: usize, min: f64, max: f64) -> Result<Self> {
        if count < 2 {
            return Err(Error::Format(format!("axis needs at least 2 samples, got {count}")));
        }
        if !(max > min) || !min.is_finite() || !max.is_finite() {
            return Err(Error::Format(format!("axis range [{min}, {max}] is not increasing")));
        }
        Ok(Self { count, min, max })
    }

    fn step(&self) -> f64 {
        (self.max - self.min) / (self.count - 1) as f64
    }

    pub fn value(&self, i: usize) -> f64 {
        self.min + self.step() * i as f64
    }

    /// Cell index, fraction within the cell, and whether the value was clamped.
    fn locate(&self, v: f64) -> (usize, f64, bool) {
        let u = (v - self.min) / self.step();
        let top = (self.count - 1) as f64;
        let (u, clamped) = if u <= 0.0 {
            (0.0, u < 0.0)
        } else if u >= top {
            (top, u > top)
        } else {
            (u, false)
        };
        let i = (u.floor() as usize).min(self.count - 2);
        (i, u - i as f64, clamped)
    }
}

/// Closing axis a tabulated model assumes for approach `a_local`, both in
/// the object's principal frame.
pub fn canonical_closing_axis(a_local: &Vector3<f64>) -> Vector3<f64> {
    let reference = if a_local.z.abs() < 0.99 { Vector3::z() } else { Vector3::x() };
    reference.cross(a_local).normalize()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TabulatedModel {
    axes: [TabAxis; AXES],
    logits: Vec<f32>,
    hand: HandParams,
}

impl TabulatedModel {
    pub fn new(axes: [TabAxis; AXES], logits: Vec<f32>, hand: HandParams) -> Result<Self> {
        let n: usize = axes.iter().map(|a| a.count).product();
        if logits.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: logits.len() });
        }
        Ok(Self { axes, logits, hand })
    }

    /// Samples `f` at every grid node.
    pub fn from_fn(axes: [TabAxis; AXES], hand: HandParams, f: impl Fn([f64; AXES]) -> f64) -> Result<Self> {
        let n: usize = axes.iter().map(|a| a.count).product();
        let mut logits = Vec::with_capacity(n);
        for lin in 0..n {
            let idx = unravel(&axes, lin);
            let coords: [f64; AXES] = std::array::from_fn(|k| axes[k].value(idx[k]));
            logits.push(f(coords) as f32);
        }
        Self::new(axes, logits, hand)
    }

    /// Tabulates another model's logit for one object, using the canonical
    /// closing axis at every node.
    pub fn sample_model(model: &dyn GraspModel, o: &ObjectSummary, axes: [TabAxis; AXES]) -> Result<Self> {
        Self::from_fn(axes, *model.hand(), |c| model.logit(&grasp_at(o, &c), o).0)
    }

    pub fn axes(&self) -> &[TabAxis; AXES] {
        &self.axes
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(GMOD_MAGIC)?;
        for a in &self.axes {
            w.write_all(&(a.count as u32).to_le_bytes())?;
            w.write_all(&a.min.to_le_bytes())?;
            w.write_all(&a.max.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.logits.len() * 4);
        for v in &self.logits {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R, hand: HandParams) -> Result<Self> {
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic).map_err(|_| Error::Format("truncated header".into()))?;
        if &magic != GMOD_MAGIC {
            return Err(Error::Format("bad magic, expected GMOD1".into()));
        }
        let mut axes = Vec::with_capacity(AXES);
        for _ in 0..AXES {
            let mut b4 = [0u8; 4];
            let mut b8 = [0u8; 8];
            r.read_exact(&mut b4).map_err(|_| Error::Format("truncated header".into()))?;
            let count = u32::from_le_bytes(b4) as usize;
            r.read_exact(&mut b8).map_err(|_| Error::Format("truncated header".into()))?;
            let min = f64::from_le_bytes(b8);
            r.read_exact(&mut b8).map_err(|_| Error::Format("truncated header".into()))?;
            let max = f64::from_le_bytes(b8);
            axes.push(TabAxis::new(count, min, max)?);
        }
        let axes: [TabAxis; AXES] = axes.try_into().expect("six axes");
        let n = axes
            .iter()
            .try_fold(1usize, |acc, a| acc.checked_mul(a.count))
            .filter(|&n| n <= 1 << 30)
            .ok_or_else(|| Error::Format("grid too large".into()))?;
        let mut body = vec![0u8; n * 4];
        r.read_exact(&mut body).map_err(|_| Error::Format("truncated logit data".into()))?;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes after logits", rest.len())));
        }
        let logits = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Self::new(axes, logits, hand)
    }

    /// Multilinear interpolation of the logit and its derivative with
    /// respect to the grid coordinates (zero along clamped axes).
    pub fn interpolate(&self, c: &[f64; AXES]) -> (f64, [f64; AXES]) {
        let loc: [(usize, f64, bool); AXES] = std::array::from_fn(|k| self.axes[k].locate(c[k]));
        let mut strides = [1usize; AXES];
        for k in (0..AXES - 1).rev() {
            strides[k] = strides[k + 1] * self.axes[k + 1].count;
        }
        let mut value = 0.0;
        let mut deriv = [0.0; AXES];
        for corner in 0..(1usize << AXES) {
            let mut lin = 0;
            let mut w = [0.0; AXES];
            for k in 0..AXES {
                let bit = corner >> (AXES - 1 - k) & 1;
                lin += (loc[k].0 + bit) * strides[k];
                w[k] = if bit == 1 { loc[k].1 } else { 1.0 - loc[k].1 };
            }
            let v = self.logits[lin] as f64;
            value += w.iter().product::<f64>() * v;
            for k in 0..AXES {
                if loc[k].2 {
                    continue;
                }
                let bit = corner >> (AXES - 1 - k) & 1;
                let sign = if bit == 1 { 1.0 } else { -1.0 };
                let others: f64 = (0..AXES).filter(|&j| j != k).map(|j| w[j]).product();
                deriv[k] += sign * others * v / self.axes[k].step();
            }
        }
        (value, deriv)
    }
}

fn unravel(axes: &[TabAxis; AXES], mut lin: usize) -> [usize; AXES] {
    let mut idx = [0; AXES];
    for k in (0..AXES).rev() {
        idx[k] = lin % axes[k].count;
        lin /= axes[k].count;
    }
    idx
}

/// Grid coordinates of a grasp relative to an object.
fn coords_of(g: &GraspConfig, o: &ObjectSummary) -> ([f64; AXES], Vector3<f64>) {
    let off = o.axes.transpose() * (g.palm.translation - o.centroid);
    let a = o.axes.transpose() * g.approach();
    let az = a.y.atan2(a.x);
    let el = a.z.clamp(-1.0, 1.0).asin();
    ([off.x, off.y, off.z, az, el, g.preshape], a)
}

/// The grasp at grid coordinates `c`, with canonical roll.
pub(crate) fn grasp_at(o: &ObjectSummary, c: &[f64; AXES]) -> GraspConfig {
    let (az, el) = (c[3], c[4]);
    let a_local = Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
    let b_local = canonical_closing_axis(&a_local);
    let r_local = Matrix3::from_columns(&[a_local, b_local, a_local.cross(&b_local)]);
    let r = o.axes * r_local;
    let t = o.centroid + o.axes * Vector3::new(c[0], c[1], c[2]);
    GraspConfig::new(Pose3::from_rotation_matrix(t, &Rotation3::from_matrix_unchecked(r)), c[5])
}

impl GraspModel for TabulatedModel {
    fn hand(&self) -> &HandParams {
        &self.hand
    }

    fn logit(&self, g: &GraspConfig, o: &ObjectSummary) -> (f64, GraspGradient) {
        let (c, a_local) = coords_of(g, o);
        let (z, d) = self.interpolate(&c);
        let mut grad = GraspGradient::zeros();
        let t = o.axes * Vector3::new(d[0], d[1], d[2]);
        grad.fixed_rows_mut::<3>(0).copy_from(&t);

        // chain through (azimuth, elevation) of the local approach axis
        let rho2 = a_local.x * a_local.x + a_local.y * a_local.y;
        let mut g_a = Vector3::zeros();
        if rho2 > 1e-12 {
            g_a += Vector3::new(-a_local.y, a_local.x, 0.0) * (d[3] / rho2);
            g_a += Vector3::new(0.0, 0.0, d[4] / rho2.sqrt());
        }
        let a = o.axes * a_local;
        let rot = a.cross(&(o.axes * g_a));
        grad.fixed_rows_mut::<3>(3).copy_from(&rot);
        grad[6] = d[5];
        (z, grad)
    }
}

/// Reads a `GMOD1` file.
pub fn load_tabulated_model(path: impl AsRef<Path>, hand: HandParams) -> Result<TabulatedModel> {
    let f = std::fs::File::open(path)?;
    TabulatedModel::read_from(std::io::BufReader::new(f), hand)
}
