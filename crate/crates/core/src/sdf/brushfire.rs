//! Wavefront marching of signed distances out of (and into) occupied space.
//!
//! Distances are propagated as references to the nearest surface cell, so a
//! reached cell stores the exact Euclidean distance to the seed it inherited
//! rather than a hop count. The queue is ordered by `(squared distance, cell)`
//! which makes the result independent of the order seeds are supplied in.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::geom::OccupancyGrid;

/// Half-open box of cell indices `[lo, hi)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct CellBox {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl CellBox {
    pub fn full(dims: [usize; 3]) -> Self {
        Self { lo: [0; 3], hi: dims }
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.hi[0] - self.lo[0], self.hi[1] - self.lo[1], self.hi[2] - self.lo[2]]
    }

    pub fn len(&self) -> usize {
        let d = self.dims();
        d[0] * d[1] * d[2]
    }

    /// Grows the box by `r` cells per side, clipped to `dims`.
    pub fn dilate(&self, r: usize, dims: [usize; 3]) -> Self {
        let mut out = *self;
        for a in 0..3 {
            out.lo[a] = self.lo[a].saturating_sub(r);
            out.hi[a] = (self.hi[a] + r).min(dims[a]);
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let (lo, hi) = (self.lo, self.hi);
        (lo[0]..hi[0]).flat_map(move |i| (lo[1]..hi[1]).flat_map(move |j| (lo[2]..hi[2]).map(move |k| [i, j, k])))
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub(crate) enum CellClass {
    Free,
    Surface,
    Interior,
}

const FACE_NEIGHBORS: [[i64; 3]; 6] = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]];

/// Occupied cells with at least one free face neighbor are surface cells.
/// Cells beyond the grid boundary do not count as free.
pub(crate) fn classify(occ: &OccupancyGrid, idx: [usize; 3]) -> CellClass {
    if !occ.get(idx) {
        return CellClass::Free;
    }
    let g = &occ.geometry;
    for off in FACE_NEIGHBORS {
        let n = [idx[0] as i64 + off[0], idx[1] as i64 + off[1], idx[2] as i64 + off[2]];
        if g.contains_index(n) && !occ.get([n[0] as usize, n[1] as usize, n[2] as usize]) {
            return CellClass::Surface;
        }
    }
    CellClass::Interior
}

/// Squared distance (in cells²) from each cell of `window` to the nearest
/// surface cell inside `window`, or `None` beyond `max_sq`. Free cells only
/// inherit through free cells, interior cells only through interior cells.
///
/// Returns `(class, squared distance)` per window cell in window-local
/// row-major order.
pub(crate) fn march(occ: &OccupancyGrid, window: CellBox, max_sq: u32) -> Vec<(CellClass, Option<u32>)> {
    let wd = window.dims();
    let n = window.len();

    let mut class = Vec::with_capacity(n);
    for idx in window.iter() {
        class.push(classify(occ, idx));
    }

    let mut best = vec![u32::MAX; n];
    // Seed coordinates in global cell units.
    let mut seed = vec![[0i32; 3]; n];
    let mut heap = BinaryHeap::new();
    for (l, idx) in window.iter().enumerate() {
        if class[l] == CellClass::Surface {
            best[l] = 0;
            seed[l] = [idx[0] as i32, idx[1] as i32, idx[2] as i32];
            heap.push(Reverse((0u32, l as u32)));
        }
    }

    while let Some(Reverse((sq, l))) = heap.pop() {
        let l = l as usize;
        if sq != best[l] {
            continue;
        }
        let src_class = class[l];
        let s = seed[l];
        let li = [l / (wd[1] * wd[2]), (l / wd[2]) % wd[1], l % wd[2]];
        for dx in -1i64..=1 {
            for dy in -1i64..=1 {
                for dz in -1i64..=1 {
                    if dx == 0 && dy == 0 && dz == 0 {
                        continue;
                    }
                    let ni = [li[0] as i64 + dx, li[1] as i64 + dy, li[2] as i64 + dz];
                    if ni[0] < 0 || ni[1] < 0 || ni[2] < 0 || ni[0] >= wd[0] as i64 || ni[1] >= wd[1] as i64 || ni[2] >= wd[2] as i64 {
                        continue;
                    }
                    let nl = ((ni[0] as usize) * wd[1] + ni[1] as usize) * wd[2] + ni[2] as usize;
                    let dst_class = class[nl];
                    let allowed = match src_class {
                        CellClass::Surface => dst_class != CellClass::Surface,
                        other => dst_class == other,
                    };
                    if !allowed {
                        continue;
                    }
                    let g = [
                        (ni[0] as usize + window.lo[0]) as i32,
                        (ni[1] as usize + window.lo[1]) as i32,
                        (ni[2] as usize + window.lo[2]) as i32,
                    ];
                    let d = [(g[0] - s[0]) as i64, (g[1] - s[1]) as i64, (g[2] - s[2]) as i64];
                    let cand = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) as u32;
                    if cand > max_sq {
                        continue;
                    }
                    if cand < best[nl] || (cand == best[nl] && s < seed[nl]) {
                        best[nl] = cand;
                        seed[nl] = s;
                        heap.push(Reverse((cand, nl as u32)));
                    }
                }
            }
        }
    }

    class
        .into_iter()
        .zip(best)
        .map(|(c, b)| (c, (b != u32::MAX).then_some(b)))
        .collect()
}
