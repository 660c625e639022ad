//! Synthetic heart phantoms for four great-vessel anatomies, and a label
//! degradation model that imitates an imperfect upstream segmenter.
//!
//! Physical coordinates put (0, 0, 0) at the volume center with +x toward
//! the left ventricle, +y posterior and +z superior. Geometry is in mm at
//! scale 1; the scale factor multiplies every coordinate and radius.
//!
//! Painting order decides overlaps: the myocardial shell around the LV
//! first, then vessel tubes (PA before Ao), then atria, then ventricles.
//! Pulmonary-vein and vena-cava tubes are painted with the LA and RA labels.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morphology::{dilate, distance_to, distance_to_background, erode};
use crate::volume::{
    crop, paste, BoundingBox, Dims, IntensityVolume, Label, LabelVolume, Mask, VoxelSpacing,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    Normal,
    TGA,
    CAT,
    PuA,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Normal, Variant::TGA, Variant::CAT, Variant::PuA];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Normal => "Normal",
            Variant::TGA => "TGA",
            Variant::CAT => "CAT",
            Variant::PuA => "PuA",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "unknown variant {s:?} (expected normal, tga, cat or pua)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub variant: Variant,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub seed: u64,
    pub scale: f64,
    /// Radius of a ventricular septal hole, mm; 0 leaves the septum intact.
    pub vsd_radius_mm: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            variant: Variant::Normal,
            dims: [128; 3],
            spacing: [1.0; 3],
            seed: 0,
            scale: 1.0,
            vsd_radius_mm: 0.0,
        }
    }
}

impl PhantomSpec {
    pub fn new(variant: Variant, seed: u64) -> Self {
        Self {
            variant,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&n| n < 64) {
            return Err(Error::InvalidParameter(format!(
                "phantom dims must be at least 64 per axis, got {:?}",
                self.dims
            )));
        }
        VoxelSpacing::from_array(self.spacing)?;
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "scale must be positive, got {}",
                self.scale
            )));
        }
        if !(self.vsd_radius_mm.is_finite() && self.vsd_radius_mm >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "vsd_radius_mm must be >= 0, got {}",
                self.vsd_radius_mm
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub semi: [f64; 3],
}

impl Ellipsoid {
    fn contains(&self, p: [f64; 3]) -> bool {
        (0..3)
            .map(|a| ((p[a] - self.center[a]) / self.semi[a]).powi(2))
            .sum::<f64>()
            <= 1.0
    }

    fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        (
            [0, 1, 2].map(|a| self.center[a] - self.semi[a]),
            [0, 1, 2].map(|a| self.center[a] + self.semi[a]),
        )
    }

    fn grown(&self, t: f64) -> Ellipsoid {
        Ellipsoid {
            center: self.center,
            semi: self.semi.map(|s| s + t),
        }
    }
}

/// A polyline swept by a ball.
#[derive(Debug, Clone, PartialEq)]
pub struct Tube {
    /// Label painted for the tube: Ao, PA, or LA/RA for veins.
    pub class: Label,
    pub points: Vec<[f64; 3]>,
    pub radius: f64,
    /// Chamber the tube opens into, if any.
    pub root: Option<Label>,
}

impl Tube {
    fn distance(&self, p: [f64; 3]) -> f64 {
        self.points
            .windows(2)
            .map(|w| segment_distance(p, w[0], w[1]))
            .fold(f64::INFINITY, f64::min)
    }

    fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a] - self.radius);
                hi[a] = hi[a].max(p[a] + self.radius);
            }
        }
        (lo, hi)
    }
}

fn segment_distance(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let ap = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
    let l2: f64 = ab.iter().map(|x| x * x).sum();
    let t = if l2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / l2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (0..3)
        .map(|i| (ap[i] - t * ab[i]).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Analytic description of one phantom.
#[derive(Debug, Clone, PartialEq)]
pub struct Anatomy {
    pub lv: Ellipsoid,
    pub rv: Ellipsoid,
    pub la: Ellipsoid,
    pub ra: Ellipsoid,
    pub myo_thickness: f64,
    /// Painted in order, later tubes override earlier ones.
    pub tubes: Vec<Tube>,
    pub vsd: Option<([f64; 3], f64)>,
}

impl Anatomy {
    pub fn new(variant: Variant, scale: f64, vsd_radius_mm: f64) -> Anatomy {
        let s = |p: [f64; 3]| p.map(|x| x * scale);
        let tube = |class, pts: &[[f64; 3]], r: f64, root| Tube {
            class,
            points: pts.iter().map(|&p| s(p)).collect(),
            radius: r * scale,
            root,
        };
        let ell = |c: [f64; 3], semi: [f64; 3]| Ellipsoid {
            center: s(c),
            semi: s(semi),
        };
        // arch and descending aorta, shared by every variant
        const ARCH: [[f64; 3]; 3] = [[-2.0, 4.0, 40.0], [-4.0, 24.0, 34.0], [-4.0, 28.0, -40.0]];
        let lv_root = [10.0, -8.0, -6.0];
        let rv_root = [-12.0, -10.0, -6.0];
        let mut tubes = match variant {
            Variant::Normal => vec![
                tube(
                    Label::PA,
                    &[rv_root, [-10.0, -16.0, 14.0], [-8.0, -18.0, 28.0]],
                    5.0,
                    Some(Label::RV),
                ),
                tube(
                    Label::Ao,
                    &[
                        lv_root,
                        [8.0, -12.0, 14.0],
                        [4.0, -10.0, 32.0],
                        ARCH[0],
                        ARCH[1],
                        ARCH[2],
                    ],
                    6.0,
                    Some(Label::LV),
                ),
            ],
            Variant::TGA => vec![
                tube(
                    Label::PA,
                    &[lv_root, [8.0, -16.0, 14.0], [6.0, -18.0, 28.0]],
                    5.0,
                    Some(Label::LV),
                ),
                tube(
                    Label::Ao,
                    &[
                        rv_root,
                        [-10.0, -14.0, 14.0],
                        [-6.0, -10.0, 32.0],
                        ARCH[0],
                        ARCH[1],
                        ARCH[2],
                    ],
                    6.0,
                    Some(Label::RV),
                ),
            ],
            Variant::CAT => {
                let branch = [-4.0, -12.0, 14.0];
                vec![
                    tube(
                        Label::PA,
                        &[
                            [-4.0, -12.0, 16.0],
                            [-14.0, -18.0, 26.0],
                            [-20.0, -18.0, 34.0],
                        ],
                        4.0,
                        None,
                    ),
                    tube(
                        Label::Ao,
                        &[[-10.0, -8.0, -8.0], branch],
                        7.0,
                        Some(Label::RV),
                    ),
                    tube(
                        Label::Ao,
                        &[branch, [-2.0, -10.0, 32.0], ARCH[0], ARCH[1], ARCH[2]],
                        6.0,
                        None,
                    ),
                ]
            }
            Variant::PuA => vec![
                tube(
                    Label::PA,
                    &[[-4.0, 28.0, 0.0], [10.0, 36.0, -2.0], [24.0, 40.0, -4.0]],
                    2.5,
                    None,
                ),
                tube(
                    Label::Ao,
                    &[
                        lv_root,
                        [8.0, -12.0, 14.0],
                        [4.0, -10.0, 32.0],
                        ARCH[0],
                        ARCH[1],
                        ARCH[2],
                    ],
                    6.0,
                    Some(Label::LV),
                ),
            ],
        };
        tubes.push(tube(
            Label::LA,
            &[[14.0, 10.0, 6.0], [30.0, 18.0, 10.0], [40.0, 30.0, 10.0]],
            3.5,
            Some(Label::LA),
        ));
        tubes.push(tube(
            Label::RA,
            &[[-16.0, 10.0, 10.0], [-18.0, 8.0, 48.0]],
            4.5,
            Some(Label::RA),
        ));
        Anatomy {
            lv: ell([12.0, -4.0, -14.0], [12.0, 11.0, 16.0]),
            rv: ell([-14.0, -6.0, -14.0], [11.0, 11.0, 15.0]),
            la: ell([9.0, 8.0, 4.0], [12.0, 9.0, 9.0]),
            ra: ell([-13.0, 6.0, 4.0], [12.0, 9.0, 9.0]),
            myo_thickness: 7.0 * scale,
            tubes,
            vsd: (vsd_radius_mm > 0.0).then(|| (s([-1.5, -5.0, -14.0]), vsd_radius_mm)),
        }
    }

    fn bounds(&self) -> Vec<(String, [f64; 3], [f64; 3])> {
        let mut out = vec![(
            "Myo".to_string(),
            self.lv.grown(self.myo_thickness).bounds(),
        )];
        for (name, e) in [
            ("LV", self.lv),
            ("RV", self.rv),
            ("LA", self.la),
            ("RA", self.ra),
        ] {
            out.push((name.to_string(), e.bounds()));
        }
        for t in &self.tubes {
            out.push((format!("{} tube", t.class), t.bounds()));
        }
        out.into_iter().map(|(n, (lo, hi))| (n, lo, hi)).collect()
    }
}

/// Phantom volumes on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub spec: PhantomSpec,
    pub anatomy: Anatomy,
    pub intensity: IntensityVolume,
    /// Ground truth over codes 0-7.
    pub labels: LabelVolume,
    /// Chamber bodies and myocardium without any vessel tube: what a chamber
    /// segmenter would hand to the refinement stage.
    pub chambers: LabelVolume,
}

fn paint(
    vol: &mut LabelVolume,
    lo: [f64; 3],
    hi: [f64; 3],
    label: Label,
    inside: impl Fn([f64; 3]) -> bool,
) {
    let dims = vol.dims().as_array();
    let s = vol.spacing().as_array();
    let o = vol.origin();
    let range = |a: usize| {
        let l = ((lo[a] - o[a]) / s[a]).floor().max(0.0) as usize;
        let h = (((hi[a] - o[a]) / s[a]).ceil().max(-1.0) as i64).min(dims[a] as i64 - 1);
        l..=(h.max(0) as usize)
    };
    for k in range(2) {
        for j in range(1) {
            for i in range(0) {
                if inside(vol.position([i, j, k])) {
                    vol.set(i, j, k, label);
                }
            }
        }
    }
}

fn paint_ellipsoid(vol: &mut LabelVolume, e: &Ellipsoid, label: Label) {
    let (lo, hi) = e.bounds();
    paint(vol, lo, hi, label, |p| e.contains(p));
}

fn rasterize(anatomy: &Anatomy, grid: &LabelVolume, with_tubes: bool) -> LabelVolume {
    let mut vol = grid.clone();
    paint_ellipsoid(
        &mut vol,
        &anatomy.lv.grown(anatomy.myo_thickness),
        Label::Myo,
    );
    if with_tubes {
        for t in &anatomy.tubes {
            let (lo, hi) = t.bounds();
            paint(&mut vol, lo, hi, t.class, |p| t.distance(p) <= t.radius);
        }
    }
    paint_ellipsoid(&mut vol, &anatomy.la, Label::LA);
    paint_ellipsoid(&mut vol, &anatomy.ra, Label::RA);
    paint_ellipsoid(&mut vol, &anatomy.lv, Label::LV);
    paint_ellipsoid(&mut vol, &anatomy.rv, Label::RV);
    if let Some((c, r)) = anatomy.vsd {
        let lo = c.map(|x| x - r);
        let hi = c.map(|x| x + r);
        let mut hole = vol.like(false);
        paint_mask(&mut hole, lo, hi, |p| dist3(p, c) <= r);
        let dims = vol.dims();
        for idx in 0..dims.len() {
            if hole.data()[idx] && vol.data()[idx] == Label::Myo {
                let p = vol.position(dims.coords(idx));
                vol.data_mut()[idx] = if p[0] >= c[0] { Label::LV } else { Label::RV };
            }
        }
    }
    vol
}

fn paint_mask(m: &mut Mask, lo: [f64; 3], hi: [f64; 3], inside: impl Fn([f64; 3]) -> bool) {
    let mut lv = m.like(Label::Background);
    paint(&mut lv, lo, hi, Label::LV, inside);
    for (d, &l) in m.data_mut().iter_mut().zip(lv.data()) {
        *d |= l == Label::LV;
    }
}

fn dist3(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Mean intensity and noise standard deviation per tissue class.
pub const POOL_INTENSITY: (f32, f32) = (300.0, 20.0);
pub const MYO_INTENSITY: (f32, f32) = (80.0, 10.0);
pub const BACKGROUND_INTENSITY: (f32, f32) = (-50.0, 10.0);

/// Renders the phantom described by `spec`.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let dims = Dims::from_array(spec.dims)?;
    let spacing = VoxelSpacing::from_array(spec.spacing)?;
    let origin = [0, 1, 2].map(|a| -((spec.dims[a] - 1) as f64) / 2.0 * spec.spacing[a]);
    let anatomy = Anatomy::new(spec.variant, spec.scale, spec.vsd_radius_mm);

    // keep one voxel of background around every structure
    for (name, lo, hi) in anatomy.bounds() {
        for a in 0..3 {
            let min = origin[a] + spec.spacing[a];
            let max = -origin[a] - spec.spacing[a];
            if lo[a] < min || hi[a] > max {
                return Err(Error::GeometryOverflow(format!(
                    "{name} spans [{:.1}, {:.1}] mm on axis {a}, grid interior is [{min:.1}, {max:.1}] mm",
                    lo[a], hi[a]
                )));
            }
        }
    }

    let grid = LabelVolume::filled(dims, spacing, origin, Label::Background);
    let labels = rasterize(&anatomy, &grid, true);
    let mut chambers = rasterize(&anatomy, &grid, false);
    for (c, &t) in chambers.data_mut().iter_mut().zip(labels.data()) {
        if *c == Label::Myo && t != Label::Myo {
            *c = Label::Background;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = |(m, sd): (f32, f32)| Normal::new(m, sd).expect("valid noise parameters");
    let (pool, myo, bg) = (
        noise(POOL_INTENSITY),
        noise(MYO_INTENSITY),
        noise(BACKGROUND_INTENSITY),
    );
    let data = labels
        .data()
        .iter()
        .map(|&l| match l {
            Label::Myo => myo.sample(&mut rng),
            Label::Background => bg.sample(&mut rng),
            _ => pool.sample(&mut rng),
        })
        .collect();
    let intensity = IntensityVolume::from_data(dims, spacing, origin, data)?;
    Ok(Phantom {
        spec: *spec,
        anatomy,
        intensity,
        labels,
        chambers,
    })
}

/// Parameters of the label degradation model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradeSpec {
    /// Maximum boundary displacement, mm.
    pub jitter_mm: f64,
    /// Spacing of the random lattice that shapes the jitter, mm.
    pub jitter_cell_mm: f64,
    /// Chance that a structure is eroded or dilated as a whole.
    pub morph_probability: f64,
    pub morph_radius_mm: f64,
    /// Spheres removed from each structure.
    pub dropout_count: usize,
    pub dropout_radius_mm: f64,
    pub seed: u64,
}

impl Default for DegradeSpec {
    fn default() -> Self {
        Self {
            jitter_mm: 0.0,
            jitter_cell_mm: 4.0,
            morph_probability: 0.0,
            morph_radius_mm: 1.0,
            dropout_count: 0,
            dropout_radius_mm: 0.0,
            seed: 0,
        }
    }
}

impl DegradeSpec {
    pub fn jitter(jitter_mm: f64, seed: u64) -> Self {
        Self {
            jitter_mm,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("jitter_mm", self.jitter_mm),
            ("morph_radius_mm", self.morph_radius_mm),
            ("dropout_radius_mm", self.dropout_radius_mm),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be >= 0, got {v}"
                )));
            }
        }
        if !(self.jitter_cell_mm.is_finite() && self.jitter_cell_mm > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "jitter_cell_mm must be positive, got {}",
                self.jitter_cell_mm
            )));
        }
        if !(0.0..=1.0).contains(&self.morph_probability) {
            return Err(Error::InvalidParameter(format!(
                "morph_probability must lie in [0, 1], got {}",
                self.morph_probability
            )));
        }
        Ok(())
    }
}

/// Smooth random field in [-1, 1]: uniform values on a coarse lattice,
/// trilinearly interpolated at voxel centers.
struct LatticeNoise {
    m: [usize; 3],
    scale: [f64; 3],
    values: Vec<f64>,
}

impl LatticeNoise {
    fn new(grid: &Mask, cell: f64, rng: &mut ChaCha8Rng) -> Self {
        let dims = grid.dims().as_array();
        let s = grid.spacing().as_array();
        let m = [0, 1, 2].map(|a| (((dims[a] - 1) as f64 * s[a]) / cell).ceil() as usize + 2);
        let values = (0..m[0] * m[1] * m[2])
            .map(|_| rng.random_range(-1.0..=1.0))
            .collect();
        Self {
            m,
            scale: s.map(|x| x / cell),
            values,
        }
    }

    fn at(&self, c: [usize; 3]) -> f64 {
        let m = self.m;
        let t = [0, 1, 2].map(|a| c[a] as f64 * self.scale[a]);
        let b = t.map(|x| x.floor() as usize);
        let f = [t[0] - b[0] as f64, t[1] - b[1] as f64, t[2] - b[2] as f64];
        let mut v = 0.0;
        for (dz, wz) in [(0, 1.0 - f[2]), (1, f[2])] {
            for (dy, wy) in [(0, 1.0 - f[1]), (1, f[1])] {
                for (dx, wx) in [(0, 1.0 - f[0]), (1, f[0])] {
                    v += wx
                        * wy
                        * wz
                        * self.values[b[0] + dx + m[0] * (b[1] + dy + m[1] * (b[2] + dz))];
                }
            }
        }
        v
    }
}

/// Moves the boundary of `mask` by up to `jitter_mm` along the noise field.
///
/// Only voxels within the jitter of the boundary can change, so the distance
/// transforms run on the mask's bounding box padded past that reach.
fn jitter_boundary(mask: &mut Mask, noise: &LatticeNoise, jitter_mm: f64) -> Result<()> {
    let Some(bbox) = mask.bounding_box() else {
        return Ok(());
    };
    let dims = mask.dims().as_array();
    let s = mask.spacing().as_array();
    let h = mask.spacing().min();
    let pad = [0, 1, 2].map(|a| (jitter_mm / s[a]).ceil() as usize + 2);
    let lo = [0, 1, 2].map(|a| bbox.min[a].saturating_sub(pad[a]));
    let hi = [0, 1, 2].map(|a| (bbox.max[a] + pad[a]).min(dims[a] - 1));
    let region = BoundingBox::new(lo, hi)?;
    let mut sub = crop(mask, &region)?;
    let inside = distance_to_background(&sub);
    let outside = distance_to(&sub);
    let sd = sub.dims();
    for (idx, v) in sub.data_mut().iter_mut().enumerate() {
        let c = sd.coords(idx);
        let signed = if *v {
            -inside[idx] + 0.5 * h
        } else {
            outside[idx] - 0.5 * h
        };
        *v = signed < jitter_mm * noise.at([c[0] + lo[0], c[1] + lo[1], c[2] + lo[2]]);
    }
    paste(mask, &sub, lo)
}

/// Perturbs every labeled structure independently and recomposes them.
///
/// Per structure, in label order: an optional whole-structure erosion or
/// dilation, a boundary displacement of up to `jitter_mm` shaped by a smooth
/// random field, then spherical dropouts. A voxel claimed by several
/// structures keeps its original label when that label is among them and
/// otherwise takes the lowest claiming code; unclaimed voxels become
/// background.
pub fn degrade_labels(labels: &LabelVolume, spec: &DegradeSpec) -> Result<LabelVolume> {
    spec.validate()?;
    let n = labels.data().len();
    // bit per label code
    let mut claims = vec![0u16; n];
    for code in 1..=10u8 {
        let label = Label::from_code(code)?;
        let mut mask = labels.mask_of(label);
        if mask.count_true() == 0 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(code as u64);

        let morph = rng.random::<f64>() < spec.morph_probability;
        let grow = rng.random::<bool>();
        if morph && spec.morph_radius_mm > 0.0 {
            mask = if grow {
                dilate(&mask, spec.morph_radius_mm)?
            } else {
                erode(&mask, spec.morph_radius_mm)?
            };
        }

        if spec.jitter_mm > 0.0 {
            let noise = LatticeNoise::new(&mask, spec.jitter_cell_mm, &mut rng);
            jitter_boundary(&mut mask, &noise, spec.jitter_mm)?;
        }

        if spec.dropout_count > 0 && spec.dropout_radius_mm > 0.0 {
            let members: Vec<usize> = (0..n).filter(|&i| mask.data()[i]).collect();
            if !members.is_empty() {
                let dims = mask.dims();
                let centers: Vec<[f64; 3]> = (0..spec.dropout_count)
                    .map(|_| {
                        mask.position(dims.coords(members[rng.random_range(0..members.len())]))
                    })
                    .collect();
                let mut hole = mask.like(false);
                for c in centers {
                    let r = spec.dropout_radius_mm;
                    paint_mask(&mut hole, c.map(|x| x - r), c.map(|x| x + r), |p| {
                        dist3(p, c) <= r
                    });
                }
                mask = mask.and_not(&hole);
            }
        }

        for (cl, &m) in claims.iter_mut().zip(mask.data()) {
            if m {
                *cl |= 1 << code;
            }
        }
    }
    let mut out = labels.clone();
    for (o, &cl) in out.data_mut().iter_mut().zip(&claims) {
        let own = o.code();
        *o = if own != 0 && cl & (1 << own) != 0 {
            *o
        } else if cl == 0 {
            Label::Background
        } else {
            Label::from_code(cl.trailing_zeros() as u8)?
        };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::components::connected_components;
    use crate::volume::Connectivity;

    fn normal() -> Phantom {
        generate_phantom(&PhantomSpec::new(Variant::Normal, 7)).unwrap()
    }

    #[test]
    fn cropped_jitter_equals_full_grid_jitter() {
        let p = normal();
        for (label, jitter) in [(Label::LV, 1.0), (Label::Ao, 2.5), (Label::Myo, 0.7)] {
            let mask = p.labels.mask_of(label);
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let noise = LatticeNoise::new(&mask, 4.0, &mut rng);
            let mut fast = mask.clone();
            jitter_boundary(&mut fast, &noise, jitter).unwrap();

            let inside = distance_to_background(&mask);
            let outside = distance_to(&mask);
            let dims = mask.dims();
            let full: Vec<bool> = (0..dims.len())
                .map(|i| {
                    let sd = if mask.data()[i] {
                        -inside[i] + 0.5
                    } else {
                        outside[i] - 0.5
                    };
                    sd < jitter * noise.at(dims.coords(i))
                })
                .collect();
            assert_eq!(fast.data(), &full[..], "{label}");
            assert_ne!(fast, mask);
        }
    }

    #[test]
    fn variant_names_parse_case_insensitively() {
        assert_eq!("tga".parse::<Variant>().unwrap(), Variant::TGA);
        assert_eq!("PuA".parse::<Variant>().unwrap(), Variant::PuA);
        assert!("fontan".parse::<Variant>().is_err());
    }

    #[test]
    fn labels_use_the_output_vocabulary_only() {
        let p = normal();
        let mut seen = [false; 11];
        for &l in p.labels.data() {
            seen[l.code() as usize] = true;
        }
        assert!(seen[..8].iter().all(|&s| s));
        assert!(!seen[8..].iter().any(|&s| s));
    }

    #[test]
    fn pool_is_one_component_for_every_variant() {
        for v in Variant::ALL {
            let p = generate_phantom(&PhantomSpec::new(v, 1)).unwrap();
            let pool = p.labels.mask_where(Label::is_blood_pool);
            assert_eq!(
                connected_components(&pool, Connectivity::TwentySix).count(),
                1,
                "{v}"
            );
        }
    }

    #[test]
    fn chamber_volume_is_truth_without_vessels() {
        let p = normal();
        for (&c, &t) in p.chambers.data().iter().zip(p.labels.data()) {
            assert!(matches!(
                c,
                Label::Background | Label::LV | Label::RV | Label::LA | Label::RA | Label::Myo
            ));
            if c != Label::Background {
                assert_eq!(c, t);
            }
        }
        assert_eq!(p.chambers.count(Label::LV), p.labels.count(Label::LV));
        assert!(p.chambers.count(Label::LA) < p.labels.count(Label::LA));
    }

    #[test]
    fn intensities_follow_tissue_classes() {
        let p = normal();
        let mean = |l: Label| {
            let v: Vec<f64> = p
                .labels
                .data()
                .iter()
                .zip(p.intensity.data())
                .filter(|(&x, _)| x == l)
                .map(|(_, &i)| i as f64)
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!((mean(Label::LV) - 300.0).abs() < 2.0);
        assert!((mean(Label::Myo) - 80.0).abs() < 1.0);
        assert!((mean(Label::Background) + 50.0).abs() < 1.0);
    }

    #[test]
    fn same_spec_same_bytes() {
        let a = normal();
        let b = normal();
        assert_eq!(a, b);
        let c = generate_phantom(&PhantomSpec::new(Variant::Normal, 8)).unwrap();
        assert_eq!(a.labels, c.labels);
        assert_ne!(a.intensity, c.intensity);
    }

    #[test]
    fn small_grid_overflows() {
        let spec = PhantomSpec {
            dims: [64; 3],
            ..PhantomSpec::default()
        };
        assert!(matches!(
            generate_phantom(&spec),
            Err(Error::GeometryOverflow(_))
        ));
        let scaled = PhantomSpec {
            scale: 0.45,
            ..spec
        };
        generate_phantom(&scaled).unwrap();
        let tiny = PhantomSpec {
            dims: [32; 3],
            ..PhantomSpec::default()
        };
        assert!(matches!(
            generate_phantom(&tiny),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn septal_hole_joins_the_ventricles() {
        let base = normal();
        let spec = PhantomSpec {
            vsd_radius_mm: 4.0,
            ..PhantomSpec::new(Variant::Normal, 7)
        };
        let holed = generate_phantom(&spec).unwrap();
        let ventricles = |p: &Phantom| p.labels.mask_where(|l| l == Label::LV || l == Label::RV);
        assert_eq!(
            connected_components(&ventricles(&base), Connectivity::TwentySix).count(),
            2
        );
        assert_eq!(
            connected_components(&ventricles(&holed), Connectivity::TwentySix).count(),
            1
        );
    }

    #[test]
    fn zero_degradation_is_identity() {
        let p = normal();
        let out = degrade_labels(&p.labels, &DegradeSpec::default()).unwrap();
        assert_eq!(out, p.labels);
    }

    #[test]
    fn degradation_is_seeded() {
        let p = normal();
        let spec = DegradeSpec {
            jitter_mm: 1.0,
            morph_probability: 0.5,
            dropout_count: 2,
            dropout_radius_mm: 2.0,
            seed: 3,
            ..DegradeSpec::default()
        };
        let a = degrade_labels(&p.chambers, &spec).unwrap();
        let b = degrade_labels(&p.chambers, &spec).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, p.chambers);
        let c = degrade_labels(&p.chambers, &DegradeSpec { seed: 4, ..spec }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn negative_magnitudes_are_rejected() {
        let p = normal();
        let spec = DegradeSpec {
            jitter_mm: -1.0,
            ..DegradeSpec::default()
        };
        assert!(degrade_labels(&p.labels, &spec).is_err());
    }
}
