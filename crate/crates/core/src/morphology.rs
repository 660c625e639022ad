//! Exact Euclidean distance transforms and ball morphology in physical units.
//!
//! Distances follow the separable lower-envelope construction of
//! Felzenszwalb and Huttenlocher, one pass per axis with that axis' spacing,
//! so anisotropic grids get exact physical distances between voxel centers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{crop, pad_volume, paste, BoundingBox, Mask, VoxelSpacing};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MorphOp {
    Dilate,
    Erode,
}

/// Squared-distance comparison with a relative slack for the exact integer
/// sums that land on the ball surface.
#[inline]
pub(crate) fn within(d2: f64, radius: f64) -> bool {
    let r2 = radius * radius;
    d2 <= r2 + 1e-9 * r2.max(1.0)
}

struct Envelope {
    v: Vec<usize>,
    z: Vec<f64>,
    xs: Vec<f64>,
    fs: Vec<f64>,
}

impl Envelope {
    fn new() -> Self {
        Self {
            v: Vec::new(),
            z: Vec::new(),
            xs: Vec::new(),
            fs: Vec::new(),
        }
    }

    /// Replaces `line[i]` by `min_q (x_i - x_q)^2 + line[q]`, with optional
    /// zero-cost samples just outside both ends of the line.
    fn transform(&mut self, line: &mut [f64], step: f64, outside_features: bool) {
        let n = line.len();
        self.xs.clear();
        self.fs.clear();
        if outside_features {
            self.xs.push(-step);
            self.fs.push(0.0);
        }
        for (q, &f) in line.iter().enumerate() {
            if f.is_finite() {
                self.xs.push(q as f64 * step);
                self.fs.push(f);
            }
        }
        if outside_features {
            self.xs.push(n as f64 * step);
            self.fs.push(0.0);
        }
        let m = self.xs.len();
        if m == 0 {
            return;
        }
        self.v.clear();
        self.z.clear();
        self.v.resize(m, 0);
        self.z.resize(m + 1, 0.0);
        let (xs, fs) = (&self.xs, &self.fs);
        let inter = |a: usize, b: usize| {
            ((fs[a] + xs[a] * xs[a]) - (fs[b] + xs[b] * xs[b])) / (2.0 * (xs[a] - xs[b]))
        };
        let mut k = 0usize;
        self.v[0] = 0;
        self.z[0] = f64::NEG_INFINITY;
        self.z[1] = f64::INFINITY;
        for q in 1..m {
            let mut s = inter(q, self.v[k]);
            while s <= self.z[k] {
                k -= 1;
                s = inter(q, self.v[k]);
            }
            k += 1;
            self.v[k] = q;
            self.z[k] = s;
            self.z[k + 1] = f64::INFINITY;
        }
        k = 0;
        for (i, out) in line.iter_mut().enumerate() {
            let x = i as f64 * step;
            while self.z[k + 1] < x {
                k += 1;
            }
            let q = self.v[k];
            *out = (x - xs[q]) * (x - xs[q]) + fs[q];
        }
    }
}

/// Squared physical distance from every voxel to the nearest `true` voxel.
///
/// With `outside_is_feature` the region beyond the grid counts as `true`.
/// Voxels with no feature anywhere get `f64::INFINITY`.
pub fn squared_distance_to(mask: &Mask, outside_is_feature: bool) -> Vec<f64> {
    let dims = mask.dims();
    let [nx, ny, nz] = dims.as_array();
    let sp = mask.spacing().as_array();
    let mut d: Vec<f64> = mask
        .data()
        .iter()
        .map(|&b| if b { 0.0 } else { f64::INFINITY })
        .collect();
    let mut env = Envelope::new();
    let mut line = Vec::new();

    // x lines are contiguous
    for row in d.chunks_mut(nx) {
        env.transform(row, sp[0], outside_is_feature);
    }
    for k in 0..nz {
        for i in 0..nx {
            line.clear();
            line.extend((0..ny).map(|j| d[dims.index(i, j, k)]));
            env.transform(&mut line, sp[1], outside_is_feature);
            for (j, &v) in line.iter().enumerate() {
                d[dims.index(i, j, k)] = v;
            }
        }
    }
    for j in 0..ny {
        for i in 0..nx {
            line.clear();
            line.extend((0..nz).map(|k| d[dims.index(i, j, k)]));
            env.transform(&mut line, sp[2], outside_is_feature);
            for (k, &v) in line.iter().enumerate() {
                d[dims.index(i, j, k)] = v;
            }
        }
    }
    d
}

/// Physical distance (mm) from each voxel to the nearest `true` voxel.
pub fn distance_to(mask: &Mask) -> Vec<f64> {
    squared_distance_to(mask, false)
        .into_iter()
        .map(f64::sqrt)
        .collect()
}

/// Physical distance (mm) from each voxel to the nearest voxel outside
/// `mask`, counting the region beyond the grid as outside. Zero off the mask.
pub fn distance_to_background(mask: &Mask) -> Vec<f64> {
    squared_distance_to(&mask.not(), true)
        .into_iter()
        .map(f64::sqrt)
        .collect()
}

fn check_radius(radius_mm: f64) -> Result<()> {
    if !radius_mm.is_finite() || radius_mm < 0.0 {
        return Err(Error::InvalidRadius(radius_mm));
    }
    Ok(())
}

/// Dilation or erosion by a ball of physical radius `radius_mm`.
///
/// The ball is every voxel offset whose physical length is at most the
/// radius, so anisotropic spacing shrinks it along coarse axes. Erosion
/// treats voxels beyond the grid as background.
pub fn morphology(mask: &Mask, op: MorphOp, radius_mm: f64) -> Result<Mask> {
    check_radius(radius_mm)?;
    if radius_mm == 0.0 {
        return Ok(mask.clone());
    }
    let mut out = mask.like(false);
    match op {
        MorphOp::Dilate => {
            let d2 = squared_distance_to(mask, false);
            for (o, &d) in out.data_mut().iter_mut().zip(&d2) {
                *o = within(d, radius_mm);
            }
        }
        MorphOp::Erode => {
            let d2 = squared_distance_to(&mask.not(), true);
            for (o, &d) in out.data_mut().iter_mut().zip(&d2) {
                *o = !within(d, radius_mm);
            }
        }
    }
    Ok(out)
}

pub fn dilate(mask: &Mask, radius_mm: f64) -> Result<Mask> {
    morphology(mask, MorphOp::Dilate, radius_mm)
}

pub fn erode(mask: &Mask, radius_mm: f64) -> Result<Mask> {
    morphology(mask, MorphOp::Erode, radius_mm)
}

/// Dilation followed by erosion, computed on a padded grid so structures
/// near the border close as if the grid were unbounded.
///
/// A closing never leaves the bounding box of the mask, so only that box
/// (plus the padding) is processed.
pub fn closing(mask: &Mask, radius_mm: f64) -> Result<Mask> {
    check_radius(radius_mm)?;
    let Some(bbox) = mask.bounding_box().filter(|_| radius_mm > 0.0) else {
        return Ok(mask.clone());
    };
    let s = mask.spacing().as_array();
    let pad = [0, 1, 2].map(|a| (radius_mm / s[a]).ceil() as usize + 1);
    let padded = pad_volume(&crop(mask, &bbox)?, pad, false)?;
    let closed = erode(&dilate(&padded, radius_mm)?, radius_mm)?;
    let d = bbox.size();
    let inner = BoundingBox::new(
        pad,
        [pad[0] + d[0] - 1, pad[1] + d[1] - 1, pad[2] + d[2] - 1],
    )?;
    let mut out = mask.like(false);
    paste(&mut out, &crop(&closed, &inner)?, bbox.min)?;
    Ok(out)
}

/// Erosion followed by dilation.
pub fn opening(mask: &Mask, radius_mm: f64) -> Result<Mask> {
    dilate(&erode(mask, radius_mm)?, radius_mm)
}

/// Integer voxel offsets inside the ball of physical radius `radius_mm`.
pub fn ball_offsets(spacing: VoxelSpacing, radius_mm: f64) -> Vec<[i64; 3]> {
    let s = spacing.as_array();
    let reach = [
        (radius_mm / s[0]).floor() as i64,
        (radius_mm / s[1]).floor() as i64,
        (radius_mm / s[2]).floor() as i64,
    ];
    let mut out = Vec::new();
    for c in -reach[2]..=reach[2] {
        for b in -reach[1]..=reach[1] {
            for a in -reach[0]..=reach[0] {
                if within(spacing.offset_len2([a, b, c]), radius_mm) {
                    out.push([a, b, c]);
                }
            }
        }
    }
    out
}
