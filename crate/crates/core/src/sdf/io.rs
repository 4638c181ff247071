//! `TSDF1` binary snapshots.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic      5 bytes  "TSDF1"
//! dims       3 × u32
//! spacing    f64
//! origin     3 × f64
//! truncation f64
//! distances  N × f32       row-major, z fastest
//! gradients  N × 3 × f32   (gx, gy, gz) per voxel, same order
//! ```
//!
//! Occupancy is not stored; on load a voxel is occupied iff its distance is
//! `≤ 0`, which reproduces the source occupancy exactly.

use std::io::{Read, Write};

use nalgebra::Vector3;

use super::TruncatedSdf;
use crate::geom::{GridGeometry, OccupancyGrid};
use crate::{Error, Result};

pub const TSDF_MAGIC: &[u8; 5] = b"TSDF1";

impl TruncatedSdf {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let g = &self.geometry;
        w.write_all(TSDF_MAGIC)?;
        for d in g.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        w.write_all(&g.spacing.to_le_bytes())?;
        for a in 0..3 {
            w.write_all(&g.origin[a].to_le_bytes())?;
        }
        w.write_all(&self.truncation.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.distance.len() * 16);
        for d in &self.distance {
            buf.extend_from_slice(&d.to_le_bytes());
        }
        for g in &self.gradient {
            for c in g {
                buf.extend_from_slice(&c.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<TruncatedSdf> {
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic).map_err(|_| Error::Format("truncated header".into()))?;
        if &magic != TSDF_MAGIC {
            return Err(Error::Format("bad magic, expected TSDF1".into()));
        }
        let mut dims = [0usize; 3];
        for d in &mut dims {
            *d = read_u32(&mut r)? as usize;
        }
        let spacing = read_f64(&mut r)?;
        let origin = Vector3::new(read_f64(&mut r)?, read_f64(&mut r)?, read_f64(&mut r)?);
        let truncation = read_f64(&mut r)?;
        let geometry =
            GridGeometry::new(origin, spacing, dims).map_err(|e| Error::Format(format!("invalid grid header: {e}")))?;
        if !(truncation > 0.0) {
            return Err(Error::Format(format!("invalid truncation {truncation}")));
        }
        let n = geometry.len();
        let mut body = vec![0u8; n * 16];
        r.read_exact(&mut body).map_err(|_| Error::Format("truncated voxel data".into()))?;
        let f = |i: usize| f32::from_le_bytes(body[4 * i..4 * i + 4].try_into().unwrap());
        let distance: Vec<f32> = (0..n).map(f).collect();
        let gradient: Vec<[f32; 3]> = (0..n).map(|v| [f(n + 3 * v), f(n + 3 * v + 1), f(n + 3 * v + 2)]).collect();
        let mut occupancy = OccupancyGrid::new(geometry);
        for (c, d) in occupancy.cells.iter_mut().zip(&distance) {
            *c = *d <= 0.0;
        }
        Ok(TruncatedSdf { geometry, distance, gradient, truncation, occupancy })
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::Format("truncated header".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| Error::Format("truncated header".into()))?;
    Ok(f64::from_le_bytes(b))
}
