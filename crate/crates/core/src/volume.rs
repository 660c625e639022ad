//! Dense 3D volumes and the grid operations shared by every pipeline stage.
//!
//! Voxels are stored x-fastest: `index = i + nx * (j + ny * k)`. Voxel
//! `(i, j, k)` has its center at `origin + (i·dx, j·dy, k·dz)` in millimeters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Millimeters per voxel along each axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelSpacing {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
}

impl VoxelSpacing {
    pub fn new(dx: f64, dy: f64, dz: f64) -> Result<Self> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(dx) && ok(dy) && ok(dz) {
            Ok(Self { dx, dy, dz })
        } else {
            Err(Error::InvalidSpacing(dx, dy, dz))
        }
    }

    pub fn isotropic(d: f64) -> Result<Self> {
        Self::new(d, d, d)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.dx, self.dy, self.dz]
    }

    pub fn from_array(a: [f64; 3]) -> Result<Self> {
        Self::new(a[0], a[1], a[2])
    }

    pub fn min(&self) -> f64 {
        self.dx.min(self.dy).min(self.dz)
    }

    pub fn voxel_volume(&self) -> f64 {
        self.dx * self.dy * self.dz
    }

    /// Squared physical length of an integer voxel offset.
    pub fn offset_len2(&self, d: [i64; 3]) -> f64 {
        let [sx, sy, sz] = self.as_array();
        let (a, b, c) = (d[0] as f64 * sx, d[1] as f64 * sy, d[2] as f64 * sz);
        a * a + b * b + c * c
    }
}

/// Voxel counts along x, y and z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::ZeroDimension([nx, ny, nz]));
        }
        Ok(Self { nx, ny, nz })
    }

    pub fn cube(n: usize) -> Result<Self> {
        Self::new(n, n, n)
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub fn from_array(a: [usize; 3]) -> Result<Self> {
        Self::new(a[0], a[1], a[2])
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.nx * (j + self.ny * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.nx;
        let j = (idx / self.nx) % self.ny;
        let k = idx / (self.nx * self.ny);
        [i, j, k]
    }

    /// Linear index of `c + d`, or `None` when it leaves the grid.
    #[inline]
    pub fn offset(&self, c: [usize; 3], d: [i64; 3]) -> Option<usize> {
        let x = c[0] as i64 + d[0];
        let y = c[1] as i64 + d[1];
        let z = c[2] as i64 + d[2];
        if x < 0 || y < 0 || z < 0 {
            return None;
        }
        let (x, y, z) = (x as usize, y as usize, z as usize);
        if x >= self.nx || y >= self.ny || z >= self.nz {
            return None;
        }
        Some(self.index(x, y, z))
    }
}

/// Neighborhood used for connectivity questions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    Six,
    TwentySix,
}

impl Connectivity {
    pub fn offsets(self) -> &'static [[i64; 3]] {
        match self {
            Connectivity::Six => &N6,
            Connectivity::TwentySix => &N26,
        }
    }
}

pub(crate) const N6: [[i64; 3]; 6] = [
    [-1, 0, 0],
    [1, 0, 0],
    [0, -1, 0],
    [0, 1, 0],
    [0, 0, -1],
    [0, 0, 1],
];

pub(crate) const N26: [[i64; 3]; 26] = {
    let mut out = [[0i64; 3]; 26];
    let mut n = 0;
    let mut k = -1;
    while k <= 1 {
        let mut j = -1;
        while j <= 1 {
            let mut i = -1;
            while i <= 1 {
                if !(i == 0 && j == 0 && k == 0) {
                    out[n] = [i, j, k];
                    n += 1;
                }
                i += 1;
            }
            j += 1;
        }
        k += 1;
    }
    out
};

/// Substructure vocabulary. Codes 0-7 are output classes; 8-10 exist only
/// inside the pipeline.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
#[repr(u8)]
pub enum Label {
    #[default]
    Background = 0,
    LV = 1,
    RV = 2,
    LA = 3,
    RA = 4,
    Myo = 5,
    Ao = 6,
    PA = 7,
    BloodPool = 8,
    PoolBoundary = 9,
    VesselCandidate = 10,
}

impl Label {
    /// The seven evaluated substructures, in code order.
    pub const SUBSTRUCTURES: [Label; 7] = [
        Label::LV,
        Label::RV,
        Label::LA,
        Label::RA,
        Label::Myo,
        Label::Ao,
        Label::PA,
    ];

    pub const CHAMBERS: [Label; 4] = [Label::LV, Label::RV, Label::LA, Label::RA];

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => Label::Background,
            1 => Label::LV,
            2 => Label::RV,
            3 => Label::LA,
            4 => Label::RA,
            5 => Label::Myo,
            6 => Label::Ao,
            7 => Label::PA,
            8 => Label::BloodPool,
            9 => Label::PoolBoundary,
            10 => Label::VesselCandidate,
            other => return Err(Error::InvalidLabel(other)),
        })
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn is_chamber(self) -> bool {
        matches!(self, Label::LV | Label::RV | Label::LA | Label::RA)
    }

    /// Blood-filled substructures (chambers plus great vessels).
    pub fn is_blood_pool(self) -> bool {
        matches!(
            self,
            Label::LV | Label::RV | Label::LA | Label::RA | Label::Ao | Label::PA
        )
    }

    pub fn is_output(self) -> bool {
        self.code() <= 7
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Background => "Background",
            Label::LV => "LV",
            Label::RV => "RV",
            Label::LA => "LA",
            Label::RA => "RA",
            Label::Myo => "Myo",
            Label::Ao => "Ao",
            Label::PA => "PA",
            Label::BloodPool => "BloodPool",
            Label::PoolBoundary => "PoolBoundary",
            Label::VesselCandidate => "VesselCandidate",
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A dense 3D grid with physical placement.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    dims: Dims,
    spacing: VoxelSpacing,
    origin: [f64; 3],
    data: Vec<T>,
}

pub type IntensityVolume = Volume<f32>;
pub type LabelVolume = Volume<Label>;
pub type Mask = Volume<bool>;

impl<T: Copy> Volume<T> {
    pub fn from_data(
        dims: Dims,
        spacing: VoxelSpacing,
        origin: [f64; 3],
        data: Vec<T>,
    ) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::DataLength {
                dims: dims.as_array(),
                expected: dims.len(),
                actual: data.len(),
            });
        }
        Ok(Self {
            dims,
            spacing,
            origin,
            data,
        })
    }

    pub fn filled(dims: Dims, spacing: VoxelSpacing, origin: [f64; 3], value: T) -> Self {
        Self {
            dims,
            spacing,
            origin,
            data: vec![value; dims.len()],
        }
    }

    /// A volume on the same grid as `self` filled with `value`.
    pub fn like<U: Copy>(&self, value: U) -> Volume<U> {
        Volume::filled(self.dims, self.spacing, self.origin, value)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> VoxelSpacing {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> T {
        self.data[self.dims.index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: T) {
        let idx = self.dims.index(i, j, k);
        self.data[idx] = v;
    }

    /// Physical center of voxel `c` in millimeters.
    pub fn position(&self, c: [usize; 3]) -> [f64; 3] {
        let s = self.spacing.as_array();
        [
            self.origin[0] + c[0] as f64 * s[0],
            self.origin[1] + c[1] as f64 * s[1],
            self.origin[2] + c[2] as f64 * s[2],
        ]
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Volume<U> {
        Volume {
            dims: self.dims,
            spacing: self.spacing,
            origin: self.origin,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn same_grid<U>(&self, other: &Volume<U>) -> bool {
        self.dims == other.dims
            && self.spacing == other.spacing
            && self
                .origin
                .iter()
                .zip(other.origin.iter())
                .all(|(a, b)| (a - b).abs() < 1e-6)
    }

    pub fn check_same_grid<U>(&self, other: &Volume<U>) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::GridMismatch(format!(
                "dims {:?} vs {:?}",
                self.dims.as_array(),
                other.dims.as_array()
            )));
        }
        if !self.same_grid(other) {
            return Err(Error::GridMismatch(format!(
                "spacing/origin {:?}/{:?} vs {:?}/{:?}",
                self.spacing.as_array(),
                self.origin,
                other.spacing.as_array(),
                other.origin
            )));
        }
        Ok(())
    }

    pub fn with_origin(mut self, origin: [f64; 3]) -> Self {
        self.origin = origin;
        self
    }

    /// Reorders axes so that output axis `a` is input axis `perm[a]`.
    pub fn permute_axes(&self, perm: [usize; 3]) -> Result<Self> {
        let mut seen = [false; 3];
        for &p in &perm {
            if p > 2 || seen[p] {
                return Err(Error::InvalidParameter(format!(
                    "{perm:?} is not an axis permutation"
                )));
            }
            seen[p] = true;
        }
        let din = self.dims.as_array();
        let sin = self.spacing.as_array();
        let dims = Dims::new(din[perm[0]], din[perm[1]], din[perm[2]])?;
        let spacing = VoxelSpacing::new(sin[perm[0]], sin[perm[1]], sin[perm[2]])?;
        let origin = [
            self.origin[perm[0]],
            self.origin[perm[1]],
            self.origin[perm[2]],
        ];
        let mut data = Vec::with_capacity(dims.len());
        for k in 0..dims.nz {
            for j in 0..dims.ny {
                for i in 0..dims.nx {
                    let out = [i, j, k];
                    let mut src = [0usize; 3];
                    for a in 0..3 {
                        src[perm[a]] = out[a];
                    }
                    data.push(self.get(src[0], src[1], src[2]));
                }
            }
        }
        Volume::from_data(dims, spacing, origin, data)
    }
}

impl LabelVolume {
    pub fn mask_of(&self, label: Label) -> Mask {
        self.map(|l| l == label)
    }

    pub fn mask_where(&self, f: impl Fn(Label) -> bool) -> Mask {
        self.map(f)
    }

    pub fn count(&self, label: Label) -> usize {
        self.data.iter().filter(|&&l| l == label).count()
    }

    /// Converts raw codes, rejecting anything outside the vocabulary.
    pub fn from_codes(
        dims: Dims,
        spacing: VoxelSpacing,
        origin: [f64; 3],
        codes: &[u8],
    ) -> Result<Self> {
        let data = codes
            .iter()
            .map(|&c| Label::from_code(c))
            .collect::<Result<Vec<_>>>()?;
        Volume::from_data(dims, spacing, origin, data)
    }

    pub fn codes(&self) -> Vec<u8> {
        self.data.iter().map(|l| l.code()).collect()
    }
}

impl Mask {
    pub fn count_true(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn not(&self) -> Mask {
        self.map(|b| !b)
    }

    pub fn and(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn or(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn and_not(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a && !b)
    }

    fn zip_with(&self, other: &Mask, f: impl Fn(bool, bool) -> bool) -> Mask {
        assert_eq!(self.dims, other.dims, "mask dims differ");
        Volume {
            dims: self.dims,
            spacing: self.spacing,
            origin: self.origin,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Tight bounding box of the true voxels, if any.
    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let mut min = [usize::MAX; 3];
        let mut max = [0usize; 3];
        let mut any = false;
        for (idx, &b) in self.data.iter().enumerate() {
            if b {
                any = true;
                let c = self.dims.coords(idx);
                for a in 0..3 {
                    min[a] = min[a].min(c[a]);
                    max[a] = max[a].max(c[a]);
                }
            }
        }
        any.then_some(BoundingBox { min, max })
    }
}

/// Inclusive voxel-index box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: [usize; 3],
    pub max: [usize; 3],
}

impl BoundingBox {
    pub fn new(min: [usize; 3], max: [usize; 3]) -> Result<Self> {
        if (0..3).any(|a| min[a] > max[a]) {
            return Err(Error::InvalidParameter(format!(
                "bounding box min {min:?} exceeds max {max:?}"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn full(dims: Dims) -> Self {
        Self {
            min: [0; 3],
            max: [dims.nx - 1, dims.ny - 1, dims.nz - 1],
        }
    }

    pub fn size(&self) -> [usize; 3] {
        [
            self.max[0] - self.min[0] + 1,
            self.max[1] - self.min[1] + 1,
            self.max[2] - self.min[2] + 1,
        ]
    }

    pub fn fits(&self, dims: Dims) -> bool {
        let d = dims.as_array();
        (0..3).all(|a| self.min[a] <= self.max[a] && self.max[a] < d[a])
    }

    pub fn contains(&self, c: [usize; 3]) -> bool {
        (0..3).all(|a| c[a] >= self.min[a] && c[a] <= self.max[a])
    }
}

/// Copies the voxels inside `bbox`; the origin moves to the box corner.
pub fn crop<T: Copy>(volume: &Volume<T>, bbox: &BoundingBox) -> Result<Volume<T>> {
    if !bbox.fits(volume.dims) {
        return Err(Error::BoxOutOfBounds {
            min: bbox.min,
            max: bbox.max,
            dims: volume.dims.as_array(),
        });
    }
    let size = bbox.size();
    let dims = Dims::from_array(size)?;
    let mut data = Vec::with_capacity(dims.len());
    for k in bbox.min[2]..=bbox.max[2] {
        for j in bbox.min[1]..=bbox.max[1] {
            let start = volume.dims.index(bbox.min[0], j, k);
            data.extend_from_slice(&volume.data[start..start + size[0]]);
        }
    }
    let origin = volume.position(bbox.min);
    Volume::from_data(dims, volume.spacing, origin, data)
}

/// Writes `patch` into `target` with its first voxel at `corner`.
pub fn paste<T: Copy>(target: &mut Volume<T>, patch: &Volume<T>, corner: [usize; 3]) -> Result<()> {
    let p = patch.dims.as_array();
    let bbox = BoundingBox::new(
        corner,
        [
            corner[0] + p[0] - 1,
            corner[1] + p[1] - 1,
            corner[2] + p[2] - 1,
        ],
    )?;
    if !bbox.fits(target.dims) {
        return Err(Error::BoxOutOfBounds {
            min: bbox.min,
            max: bbox.max,
            dims: target.dims.as_array(),
        });
    }
    for k in 0..p[2] {
        for j in 0..p[1] {
            let src = patch.dims.index(0, j, k);
            let dst = target.dims.index(corner[0], corner[1] + j, corner[2] + k);
            target.data[dst..dst + p[0]].copy_from_slice(&patch.data[src..src + p[0]]);
        }
    }
    Ok(())
}

/// Surrounds `volume` with `pad[a]` voxels of `value` on both sides of axis `a`.
pub fn pad_volume<T: Copy>(volume: &Volume<T>, pad: [usize; 3], value: T) -> Result<Volume<T>> {
    let d = volume.dims.as_array();
    let dims = Dims::new(d[0] + 2 * pad[0], d[1] + 2 * pad[1], d[2] + 2 * pad[2])?;
    let s = volume.spacing.as_array();
    let origin = [0, 1, 2].map(|a| volume.origin[a] - pad[a] as f64 * s[a]);
    let mut out = Volume::filled(dims, volume.spacing, origin, value);
    paste(&mut out, volume, pad)?;
    Ok(out)
}

/// Voxel types that know how to sample themselves at a continuous index.
pub trait Resample: Copy {
    fn sample(volume: &Volume<Self>, u: [f64; 3]) -> Self;
}

fn nearest_index(u: f64, n: usize) -> usize {
    (u.round().max(0.0) as usize).min(n - 1)
}

fn nearest<T: Copy>(volume: &Volume<T>, u: [f64; 3]) -> T {
    let d = volume.dims;
    volume.get(
        nearest_index(u[0], d.nx),
        nearest_index(u[1], d.ny),
        nearest_index(u[2], d.nz),
    )
}

impl Resample for Label {
    fn sample(volume: &Volume<Self>, u: [f64; 3]) -> Self {
        nearest(volume, u)
    }
}

impl Resample for bool {
    fn sample(volume: &Volume<Self>, u: [f64; 3]) -> Self {
        nearest(volume, u)
    }
}

impl Resample for f32 {
    fn sample(volume: &Volume<Self>, u: [f64; 3]) -> Self {
        let d = volume.dims.as_array();
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut t = [0f64; 3];
        for a in 0..3 {
            let x = u[a].clamp(0.0, (d[a] - 1) as f64);
            let f = x.floor();
            lo[a] = f as usize;
            hi[a] = (lo[a] + 1).min(d[a] - 1);
            t[a] = x - f;
        }
        let mut acc = 0.0f64;
        for corner in 0..8 {
            let mut w = 1.0;
            let mut c = [0usize; 3];
            for a in 0..3 {
                if corner >> a & 1 == 1 {
                    w *= t[a];
                    c[a] = hi[a];
                } else {
                    w *= 1.0 - t[a];
                    c[a] = lo[a];
                }
            }
            if w != 0.0 {
                acc += w * volume.get(c[0], c[1], c[2]) as f64;
            }
        }
        acc as f32
    }
}

/// Resamples onto `target` voxels while keeping the physical extent.
///
/// Intensities are interpolated trilinearly, labels and masks by nearest
/// neighbor. Identical dims return an exact copy.
pub fn resample<T: Resample>(volume: &Volume<T>, target: Dims) -> Result<Volume<T>> {
    let target = Dims::from_array(target.as_array())?;
    if target == volume.dims {
        return Ok(volume.clone());
    }
    let src = volume.dims.as_array();
    let dst = target.as_array();
    let s = volume.spacing.as_array();
    let scale = [
        src[0] as f64 / dst[0] as f64,
        src[1] as f64 / dst[1] as f64,
        src[2] as f64 / dst[2] as f64,
    ];
    let spacing = VoxelSpacing::new(s[0] * scale[0], s[1] * scale[1], s[2] * scale[2])?;
    let ns = spacing.as_array();
    let origin = [
        volume.origin[0] - 0.5 * s[0] + 0.5 * ns[0],
        volume.origin[1] - 0.5 * s[1] + 0.5 * ns[1],
        volume.origin[2] - 0.5 * s[2] + 0.5 * ns[2],
    ];
    let mut data = Vec::with_capacity(target.len());
    for k in 0..dst[2] {
        let uz = (k as f64 + 0.5) * scale[2] - 0.5;
        for j in 0..dst[1] {
            let uy = (j as f64 + 0.5) * scale[1] - 0.5;
            for i in 0..dst[0] {
                let ux = (i as f64 + 0.5) * scale[0] - 0.5;
                data.push(T::sample(volume, [ux, uy, uz]));
            }
        }
    }
    Volume::from_data(target, spacing, origin, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iso(n: usize) -> (Dims, VoxelSpacing) {
        (
            Dims::cube(n).unwrap(),
            VoxelSpacing::isotropic(1.0).unwrap(),
        )
    }

    fn sphere(n: usize, r: f64) -> LabelVolume {
        let (dims, sp) = iso(n);
        let c = (n as f64 - 1.0) / 2.0;
        let mut v = LabelVolume::filled(dims, sp, [0.0; 3], Label::Background);
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let d2 =
                        (i as f64 - c).powi(2) + (j as f64 - c).powi(2) + (k as f64 - c).powi(2);
                    if d2 <= r * r {
                        v.set(i, j, k, Label::LV);
                    }
                }
            }
        }
        v
    }

    #[test]
    fn spacing_rejects_nonpositive() {
        assert!(VoxelSpacing::new(1.0, 0.0, 1.0).is_err());
        assert!(VoxelSpacing::new(1.0, f64::NAN, 1.0).is_err());
        assert!(VoxelSpacing::new(0.25, 0.25, 0.5).is_ok());
    }

    #[test]
    fn dims_reject_zero() {
        assert!(Dims::new(4, 0, 4).is_err());
    }

    #[test]
    fn n26_has_every_offset_once() {
        let mut seen = std::collections::BTreeSet::new();
        for o in N26 {
            assert!(o != [0, 0, 0]);
            assert!(seen.insert(o));
        }
        assert_eq!(seen.len(), 26);
    }

    #[test]
    fn resample_identity_is_bitwise() {
        let (dims, sp) = iso(64);
        let data: Vec<f32> = (0..dims.len())
            .map(|i| (i as f32 * 0.37).sin() * 100.0)
            .collect();
        let v = IntensityVolume::from_data(dims, sp, [1.0, 2.0, 3.0], data).unwrap();
        let r = resample(&v, dims).unwrap();
        assert_eq!(r, v);
    }

    #[test]
    fn resample_rejects_zero_target() {
        let (dims, sp) = iso(4);
        let v = IntensityVolume::filled(dims, sp, [0.0; 3], 0.0);
        assert!(resample(
            &v,
            Dims {
                nx: 0,
                ny: 4,
                nz: 4
            }
        )
        .is_err());
    }

    #[test]
    fn resample_sphere_halves_radius() {
        let big = sphere(128, 40.0);
        let small = resample(&big, Dims::cube(64).unwrap()).unwrap();
        let reference = sphere(64, 20.0);
        // every voxel that differs from the analytic raster must sit on the surface band
        let c = 31.5;
        for k in 0..64 {
            for j in 0..64 {
                for i in 0..64 {
                    if small.get(i, j, k) != reference.get(i, j, k) {
                        let r = ((i as f64 - c).powi(2)
                            + (j as f64 - c).powi(2)
                            + (k as f64 - c).powi(2))
                        .sqrt();
                        assert!((r - 20.0).abs() <= 1.0, "deviation at radius {r}");
                    }
                }
            }
        }
        assert_eq!(small.spacing().dx, 2.0);
    }

    #[test]
    fn resample_preserves_extent() {
        let dims = Dims::new(512, 512, 200).unwrap();
        let sp = VoxelSpacing::new(0.25, 0.25, 0.5).unwrap();
        let v = IntensityVolume::filled(dims, sp, [-10.0, 5.0, 0.0], 0.0);
        let target = Dims::cube(64).unwrap();
        let r = resample(&v, target).unwrap();
        let ns = r.spacing();
        assert_eq!(ns.dx, 0.25 * 8.0);
        assert_eq!(ns.dy, 0.25 * 8.0);
        assert!((ns.dz - 0.5 * 200.0 / 64.0).abs() < 1e-12);
        for a in 0..3 {
            let lo_in = v.origin()[a] - 0.5 * sp.as_array()[a];
            let hi_in = lo_in + dims.as_array()[a] as f64 * sp.as_array()[a];
            let lo_out = r.origin()[a] - 0.5 * ns.as_array()[a];
            let hi_out = lo_out + 64.0 * ns.as_array()[a];
            assert!((lo_in - lo_out).abs() < ns.as_array()[a]);
            assert!((hi_in - hi_out).abs() < ns.as_array()[a]);
        }
    }

    #[test]
    fn crop_full_box_is_identity() {
        let v = sphere(16, 5.0);
        let c = crop(&v, &BoundingBox::full(v.dims())).unwrap();
        assert_eq!(c, v);
    }

    #[test]
    fn crop_single_voxel() {
        let (dims, sp) = iso(8);
        let data: Vec<f32> = (0..dims.len()).map(|i| i as f32).collect();
        let v = IntensityVolume::from_data(dims, sp, [0.0; 3], data).unwrap();
        let b = BoundingBox::new([3, 4, 5], [3, 4, 5]).unwrap();
        let c = crop(&v, &b).unwrap();
        assert_eq!(c.dims().as_array(), [1, 1, 1]);
        assert_eq!(c.data()[0], v.get(3, 4, 5));
        assert_eq!(c.origin(), [3.0, 4.0, 5.0]);
    }

    #[test]
    fn crop_rejects_out_of_bounds() {
        let (dims, sp) = iso(8);
        let v = IntensityVolume::filled(dims, sp, [0.0; 3], 0.0);
        let b = BoundingBox::new([2, 2, 2], [8, 3, 3]).unwrap();
        assert!(matches!(crop(&v, &b), Err(Error::BoxOutOfBounds { .. })));
    }

    #[test]
    fn crop_then_paste_round_trip() {
        let (dims, sp) = iso(10);
        let data: Vec<f32> = (0..dims.len()).map(|i| i as f32 + 1.0).collect();
        let v = IntensityVolume::from_data(dims, sp, [0.0; 3], data).unwrap();
        let b = BoundingBox::new([1, 2, 3], [6, 8, 4]).unwrap();
        let c = crop(&v, &b).unwrap();
        let mut back = v.like(0.0f32);
        paste(&mut back, &c, b.min).unwrap();
        for k in 0..10 {
            for j in 0..10 {
                for i in 0..10 {
                    let expect = if b.contains([i, j, k]) {
                        v.get(i, j, k)
                    } else {
                        0.0
                    };
                    assert_eq!(back.get(i, j, k), expect);
                }
            }
        }
    }

    #[test]
    fn permute_axes_moves_spacing() {
        let dims = Dims::new(2, 3, 4).unwrap();
        let sp = VoxelSpacing::new(1.0, 2.0, 3.0).unwrap();
        let data: Vec<f32> = (0..24).map(|i| i as f32).collect();
        let v = IntensityVolume::from_data(dims, sp, [0.0; 3], data).unwrap();
        let p = v.permute_axes([2, 0, 1]).unwrap();
        assert_eq!(p.dims().as_array(), [4, 2, 3]);
        assert_eq!(p.spacing().as_array(), [3.0, 1.0, 2.0]);
        assert_eq!(p.get(3, 1, 2), v.get(1, 2, 3));
    }
}
