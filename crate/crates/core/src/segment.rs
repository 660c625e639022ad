//! Classical stand-ins for the learned stages: RoI cropping, blood-pool
//! thresholding with a boundary class, and chamber refinement.

use serde::{Deserialize, Serialize};

use crate::components::{connected_components, largest_component};
use crate::error::{Error, Result};
use crate::morphology::{closing, erode};
use crate::volume::{
    crop, resample, BoundingBox, Connectivity, Dims, IntensityVolume, Label, LabelVolume, Mask, N26,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentParams {
    /// Voxels strictly above this intensity are blood pool.
    pub threshold: f64,
    pub boundary_thickness_mm: f64,
    pub roi_margin_mm: f64,
    /// Pool components smaller than this are dropped, mm³.
    pub min_component_mm3: f64,
    /// Grid size of the low-resolution RoI search.
    pub roi_dims: usize,
    /// Geodesic reach of chamber refinement, mm.
    pub refine_cap_mm: f64,
}

impl Default for SegmentParams {
    fn default() -> Self {
        Self {
            threshold: 150.0,
            boundary_thickness_mm: 1.0,
            roi_margin_mm: 10.0,
            min_component_mm3: 50.0,
            roi_dims: 64,
            refine_cap_mm: 5.0,
        }
    }
}

impl SegmentParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !self.threshold.is_finite() {
            return bad(format!("threshold must be finite, got {}", self.threshold));
        }
        if !(self.boundary_thickness_mm.is_finite() && self.boundary_thickness_mm > 0.0) {
            return bad(format!(
                "boundary_thickness_mm must be > 0, got {}",
                self.boundary_thickness_mm
            ));
        }
        if !(self.roi_margin_mm.is_finite() && self.roi_margin_mm >= 0.0) {
            return bad(format!(
                "roi_margin_mm must be >= 0, got {}",
                self.roi_margin_mm
            ));
        }
        if !(self.min_component_mm3.is_finite() && self.min_component_mm3 >= 0.0) {
            return bad(format!(
                "min_component_mm3 must be >= 0, got {}",
                self.min_component_mm3
            ));
        }
        if self.roi_dims == 0 {
            return bad("roi_dims must be >= 1".into());
        }
        if !(self.refine_cap_mm.is_finite() && self.refine_cap_mm >= 0.0) {
            return bad(format!(
                "refine_cap_mm must be >= 0, got {}",
                self.refine_cap_mm
            ));
        }
        Ok(())
    }
}

fn above(intensity: &IntensityVolume, threshold: f64) -> Mask {
    intensity.map(|v| v as f64 > threshold)
}

/// Finds the heart on a coarse grid and crops the full-resolution volume
/// around it.
///
/// The largest 26-connected component above threshold on the
/// `roi_dims`-cubed grid is mapped back to every full-resolution voxel its
/// coarse voxels overlap, grown by the margin and clamped to the volume.
pub fn roi_crop(
    intensity: &IntensityVolume,
    params: &SegmentParams,
) -> Result<(BoundingBox, IntensityVolume)> {
    params.validate()?;
    let low = resample(intensity, Dims::cube(params.roi_dims)?)?;
    let heart = largest_component(&above(&low, params.threshold), Connectivity::TwentySix)
        .ok_or(Error::EmptyRoi(params.threshold))?;
    let lb = heart
        .bounding_box()
        .ok_or(Error::EmptyRoi(params.threshold))?;
    let full = intensity.dims().as_array();
    let m = params.roi_dims;
    let s = intensity.spacing().as_array();
    let mut min = [0usize; 3];
    let mut max = [0usize; 3];
    for a in 0..3 {
        let n = full[a];
        let margin = (params.roi_margin_mm / s[a]).ceil() as usize;
        let lo = lb.min[a] * n / m;
        let hi = ((lb.max[a] + 1) * n).div_ceil(m) - 1;
        min[a] = lo.saturating_sub(margin);
        max[a] = (hi + margin).min(n - 1);
    }
    let bbox = BoundingBox::new(min, max)?;
    let cropped = crop(intensity, &bbox)?;
    Ok((bbox, cropped))
}

/// Thresholds the blood pool and splits it into interior and boundary.
///
/// Boundary voxels are pool voxels removed by an erosion of the pool by
/// `boundary_thickness_mm`; at one voxel of isotropic spacing that is every
/// pool voxel with a background face neighbor.
pub fn segment_blood_pool(
    intensity: &IntensityVolume,
    params: &SegmentParams,
) -> Result<LabelVolume> {
    params.validate()?;
    let raw = above(intensity, params.threshold);
    let cc = connected_components(&raw, Connectivity::TwentySix);
    let voxel = intensity.spacing().voxel_volume();
    let mut pool = raw.like(false);
    for (p, &id) in pool.data_mut().iter_mut().zip(&cc.labels) {
        *p = id != 0 && cc.size(id) as f64 * voxel >= params.min_component_mm3;
    }
    if pool.count_true() == 0 {
        return Err(Error::EmptyPool);
    }
    let interior = erode(&pool, params.boundary_thickness_mm)?;
    let mut out = pool.like(Label::Background);
    for ((o, &p), &i) in out
        .data_mut()
        .iter_mut()
        .zip(pool.data())
        .zip(interior.data())
    {
        if p {
            *o = if i {
                Label::BloodPool
            } else {
                Label::PoolBoundary
            };
        }
    }
    Ok(out)
}

/// Voxels that count as blood pool in a pool label volume.
pub fn pool_mask(pool: &LabelVolume) -> Mask {
    pool.mask_where(|l| matches!(l, Label::BloodPool | Label::PoolBoundary) || l.is_blood_pool())
}

/// Reconciles chamber masks with the blood pool.
///
/// Chamber labels off the pool are cleared and Myo is kept only off the
/// pool. Unassigned pool voxels are then grown into chambers layer by layer:
/// a voxel joins chamber `c` when its assigned 26-neighbors all carry `c`,
/// it lies inside the closing of `c` by `cap_mm`, and its geodesic distance
/// through the pool from the original extent of `c` is at most `cap_mm`.
/// Pool voxels still unassigned become `VesselCandidate`.
pub fn refine_chambers(
    chambers: &LabelVolume,
    pool: &LabelVolume,
    cap_mm: f64,
) -> Result<LabelVolume> {
    chambers.check_same_grid(pool)?;
    if !(cap_mm.is_finite() && cap_mm >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "refine cap must be >= 0, got {cap_mm}"
        )));
    }
    if let Some(&bad) = chambers
        .data()
        .iter()
        .find(|l| !matches!(l, Label::Background | Label::Myo) && !l.is_chamber())
    {
        return Err(Error::InvalidParameter(format!(
            "chamber volume may hold only LV, RV, LA, RA and Myo, found {bad}"
        )));
    }
    let in_pool = pool_mask(pool);
    let p = in_pool.data();
    let mut out = chambers.like(Label::Background);
    for ((o, &c), &ip) in out.data_mut().iter_mut().zip(chambers.data()).zip(p) {
        *o = match c {
            Label::Myo if !ip => Label::Myo,
            c if c.is_chamber() && ip => c,
            _ => Label::Background,
        };
    }

    let mut hulls: [Option<Mask>; 5] = Default::default();
    for c in Label::CHAMBERS {
        let m = out.mask_of(c);
        if m.count_true() > 0 {
            hulls[c.code() as usize] = Some(closing(&m, cap_mm)?);
        }
    }

    let dims = out.dims();
    let spacing = out.spacing();
    let steps: Vec<f64> = N26.iter().map(|&d| spacing.offset_len2(d).sqrt()).collect();
    let mut dist: Vec<f64> = out
        .data()
        .iter()
        .map(|l| if l.is_chamber() { 0.0 } else { f64::INFINITY })
        .collect();
    let unassigned = |out: &LabelVolume, i: usize| p[i] && !out.data()[i].is_chamber();
    let mut frontier: Vec<usize> = Vec::new();
    for i in 0..dims.len() {
        if !out.data()[i].is_chamber() {
            continue;
        }
        let c = dims.coords(i);
        for &d in &N26 {
            if let Some(n) = dims.offset(c, d) {
                if unassigned(&out, n) {
                    frontier.push(n);
                }
            }
        }
    }

    while !frontier.is_empty() {
        frontier.sort_unstable();
        frontier.dedup();
        let mut accepted: Vec<(usize, Label, f64)> = Vec::new();
        for &v in &frontier {
            if !unassigned(&out, v) {
                continue;
            }
            let c = dims.coords(v);
            let mut label = None;
            let mut unique = true;
            let mut best = f64::INFINITY;
            for (&d, &step) in N26.iter().zip(&steps) {
                let Some(n) = dims.offset(c, d) else { continue };
                let l = out.data()[n];
                if !l.is_chamber() {
                    continue;
                }
                match label {
                    None => label = Some(l),
                    Some(prev) if prev != l => unique = false,
                    _ => {}
                }
                best = best.min(dist[n] + step);
            }
            let Some(l) = label else { continue };
            let in_hull = hulls[l.code() as usize]
                .as_ref()
                .is_some_and(|h| h.data()[v]);
            if unique && in_hull && best <= cap_mm + 1e-9 {
                accepted.push((v, l, best));
            }
        }
        let mut next = Vec::new();
        for &(v, l, d) in &accepted {
            out.data_mut()[v] = l;
            dist[v] = d;
        }
        for &(v, _, _) in &accepted {
            let c = dims.coords(v);
            for &d in &N26 {
                if let Some(n) = dims.offset(c, d) {
                    if unassigned(&out, n) {
                        next.push(n);
                    }
                }
            }
        }
        frontier = next;
    }

    for (o, &ip) in out.data_mut().iter_mut().zip(p) {
        if ip && !o.is_chamber() {
            *o = Label::VesselCandidate;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::dice;
    use crate::phantom::{degrade_labels, generate_phantom, DegradeSpec, PhantomSpec, Variant};
    use crate::volume::VoxelSpacing;

    fn normal() -> crate::phantom::Phantom {
        generate_phantom(&PhantomSpec::new(Variant::Normal, 7)).unwrap()
    }

    #[test]
    fn roi_contains_every_labeled_voxel() {
        for v in Variant::ALL {
            let p = generate_phantom(&PhantomSpec::new(v, 3)).unwrap();
            let (bbox, cropped) = roi_crop(&p.intensity, &SegmentParams::default()).unwrap();
            let truth = p
                .labels
                .mask_where(|l| l != Label::Background)
                .bounding_box()
                .unwrap();
            for a in 0..3 {
                assert!(
                    bbox.min[a] <= truth.min[a] && bbox.max[a] >= truth.max[a],
                    "{v} axis {a}"
                );
            }
            assert_eq!(cropped.dims().as_array(), bbox.size());
        }
    }

    #[test]
    fn uniform_volume_has_no_roi() {
        let v = IntensityVolume::filled(
            Dims::cube(32).unwrap(),
            VoxelSpacing::isotropic(1.0).unwrap(),
            [0.0; 3],
            -50.0,
        );
        assert!(matches!(
            roi_crop(&v, &SegmentParams::default()),
            Err(Error::EmptyRoi(_))
        ));
        assert!(matches!(
            segment_blood_pool(&v, &SegmentParams::default()),
            Err(Error::EmptyPool)
        ));
    }

    #[test]
    fn full_volume_structure_gives_full_roi() {
        let v = IntensityVolume::filled(
            Dims::new(100, 90, 70).unwrap(),
            VoxelSpacing::isotropic(1.0).unwrap(),
            [0.0; 3],
            300.0,
        );
        let params = SegmentParams {
            roi_margin_mm: 0.0,
            ..SegmentParams::default()
        };
        let (bbox, _) = roi_crop(&v, &params).unwrap();
        assert_eq!(bbox, BoundingBox::full(v.dims()));
    }

    #[test]
    fn pool_matches_truth() {
        let p = normal();
        let seg = segment_blood_pool(&p.intensity, &SegmentParams::default()).unwrap();
        let pred = pool_mask(&seg);
        let truth = p.labels.mask_where(Label::is_blood_pool);
        let inter = pred.and(&truth).count_true() as f64;
        let d = 2.0 * inter / (pred.count_true() + truth.count_true()) as f64;
        assert!(d >= 0.97, "pool dice {d}");
    }

    #[test]
    fn one_voxel_boundary_is_the_face_boundary() {
        let p = normal();
        let seg = segment_blood_pool(&p.intensity, &SegmentParams::default()).unwrap();
        let pool = pool_mask(&seg);
        let dims = pool.dims();
        for i in 0..dims.len() {
            if !pool.data()[i] {
                continue;
            }
            let c = dims.coords(i);
            let exposed = crate::volume::N6
                .iter()
                .any(|&d| dims.offset(c, d).is_none_or(|n| !pool.data()[n]));
            assert_eq!(seg.data()[i] == Label::PoolBoundary, exposed);
        }
    }

    #[test]
    fn diagonal_ball_boundary_uses_all_26_neighbors() {
        // a ball radius of sqrt(3) voxels peels every voxel with any background neighbor
        let p = normal();
        let params = SegmentParams {
            boundary_thickness_mm: 3f64.sqrt(),
            ..SegmentParams::default()
        };
        let seg = segment_blood_pool(&p.intensity, &params).unwrap();
        let pool = pool_mask(&seg);
        let dims = pool.dims();
        for i in 0..dims.len() {
            if !pool.data()[i] {
                continue;
            }
            let c = dims.coords(i);
            let exposed = N26
                .iter()
                .any(|&d| dims.offset(c, d).is_none_or(|n| !pool.data()[n]));
            assert_eq!(seg.data()[i] == Label::PoolBoundary, exposed);
        }
    }

    #[test]
    fn perfect_inputs_leave_chambers_unchanged() {
        let p = normal();
        let refined = refine_chambers(&p.chambers, &p.labels, 5.0).unwrap();
        for ((&r, &c), &t) in refined
            .data()
            .iter()
            .zip(p.chambers.data())
            .zip(p.labels.data())
        {
            if t.is_blood_pool() && c == Label::Background {
                assert_eq!(r, Label::VesselCandidate);
            } else {
                assert_eq!(r, c);
            }
        }
    }

    #[test]
    fn empty_chambers_make_the_whole_pool_a_candidate() {
        let p = normal();
        let none = p.chambers.like(Label::Background);
        let refined = refine_chambers(&none, &p.labels, 5.0).unwrap();
        assert_eq!(
            refined.count(Label::VesselCandidate),
            p.labels.mask_where(Label::is_blood_pool).count_true()
        );
    }

    #[test]
    fn refinement_does_not_hurt_degraded_chambers() {
        let p = normal();
        let seg = segment_blood_pool(&p.intensity, &SegmentParams::default()).unwrap();
        for seed in 0..2 {
            let degraded = degrade_labels(&p.chambers, &DegradeSpec::jitter(1.0, seed)).unwrap();
            let refined = refine_chambers(&degraded, &seg, 5.0).unwrap();
            for c in Label::CHAMBERS {
                let before = dice(&degraded, &p.labels, c).unwrap();
                let after = dice(&refined, &p.labels, c).unwrap();
                assert!(after >= before, "seed {seed} {c}: {before} -> {after}");
            }
        }
    }

    #[test]
    fn vessel_labels_in_chamber_input_are_rejected() {
        let p = normal();
        assert!(refine_chambers(&p.labels, &p.labels, 5.0).is_err());
    }
}
