//! Connected-component labeling on binary volumes.

use std::collections::VecDeque;

use crate::volume::{Connectivity, Dims, Mask};

/// Per-voxel component ids (0 = background, 1 = largest component).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentMap {
    pub dims: Dims,
    pub labels: Vec<u32>,
    /// `sizes[id - 1]` is the voxel count of component `id`.
    pub sizes: Vec<usize>,
}

impl ComponentMap {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    pub fn size(&self, id: u32) -> usize {
        self.sizes[id as usize - 1]
    }

    pub fn mask(&self, template: &Mask, id: u32) -> Mask {
        let mut m = template.like(false);
        for (dst, &l) in m.data_mut().iter_mut().zip(&self.labels) {
            *dst = l == id;
        }
        m
    }
}

/// Labels the foreground of `mask`.
///
/// Components are numbered by descending voxel count; equal counts keep the
/// order of their lowest linear voxel index.
pub fn connected_components(mask: &Mask, connectivity: Connectivity) -> ComponentMap {
    let dims = mask.dims();
    let data = mask.data();
    let offsets = connectivity.offsets();
    let mut provisional = vec![0u32; dims.len()];
    // (size, seed index) per provisional id
    let mut found: Vec<(usize, usize)> = Vec::new();
    let mut queue = VecDeque::new();

    for seed in 0..dims.len() {
        if !data[seed] || provisional[seed] != 0 {
            continue;
        }
        let id = found.len() as u32 + 1;
        provisional[seed] = id;
        queue.push_back(seed);
        let mut size = 0usize;
        while let Some(idx) = queue.pop_front() {
            size += 1;
            let c = dims.coords(idx);
            for &d in offsets {
                if let Some(n) = dims.offset(c, d) {
                    if data[n] && provisional[n] == 0 {
                        provisional[n] = id;
                        queue.push_back(n);
                    }
                }
            }
        }
        found.push((size, seed));
    }

    let mut order: Vec<usize> = (0..found.len()).collect();
    // seeds are discovered in increasing index order, so a stable sort on size
    // keeps the lowest-seed tie-break
    order.sort_by(|&a, &b| found[b].0.cmp(&found[a].0));
    let mut remap = vec![0u32; found.len() + 1];
    for (rank, &p) in order.iter().enumerate() {
        remap[p + 1] = rank as u32 + 1;
    }
    let labels = provisional.iter().map(|&p| remap[p as usize]).collect();
    let sizes = order.iter().map(|&p| found[p].0).collect();
    ComponentMap {
        dims,
        labels,
        sizes,
    }
}

/// Mask of the largest component, or `None` for an empty mask.
pub fn largest_component(mask: &Mask, connectivity: Connectivity) -> Option<Mask> {
    let cc = connected_components(mask, connectivity);
    (cc.count() > 0).then(|| cc.mask(mask, 1))
}

/// Drops components whose voxel count is below `min_voxels`.
pub fn remove_small_components(mask: &Mask, connectivity: Connectivity, min_voxels: usize) -> Mask {
    let cc = connected_components(mask, connectivity);
    let mut out = mask.like(false);
    for (dst, &l) in out.data_mut().iter_mut().zip(&cc.labels) {
        *dst = l != 0 && cc.size(l) >= min_voxels;
    }
    out
}
