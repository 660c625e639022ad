//! Topology-preserving 3D thinning.
//!
//! Foreground uses 26-connectivity and background 6-connectivity. A voxel is
//! removed only if it is simple (its deletion changes neither the number of
//! foreground components, background components nor cavities) and it is not
//! a curve endpoint. Each iteration runs six directional sub-iterations
//! (+x, -x, +y, -y, +z, -z); inside a sub-iteration the border candidates are
//! re-tested one by one in linear voxel order, which keeps the result
//! deterministic and exactly topology-preserving.

use crate::error::{Error, Result};
use crate::morphology::distance_to_background;
use crate::volume::{pad_volume, Dims, Mask, VoxelSpacing};

/// A thinned voxel set with local radii.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    pub dims: Dims,
    pub spacing: VoxelSpacing,
    pub origin: [f64; 3],
    /// Linear indices into the source grid, ascending.
    pub voxels: Vec<usize>,
    /// Distance (mm) from each skeleton voxel to the nearest voxel outside
    /// the source mask.
    pub radii: Vec<f64>,
}

impl Skeleton {
    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn to_mask(&self) -> Mask {
        let mut m = Mask::filled(self.dims, self.spacing, self.origin, false);
        let data = m.data_mut();
        for &v in &self.voxels {
            data[v] = true;
        }
        m
    }

    pub fn position(&self, idx: usize) -> [f64; 3] {
        let c = self.dims.coords(idx);
        let s = self.spacing.as_array();
        [0, 1, 2].map(|a| self.origin[a] + c[a] as f64 * s[a])
    }
}

// Bit b of a neighborhood word is the voxel at offset
// (b % 3 - 1, b / 3 % 3 - 1, b / 9 - 1); bit 13 is the center.
const CENTER: usize = 13;

struct Cube {
    adj26: [u32; 27],
    adj6: [u32; 27],
    n18: u32,
    n6: u32,
}

const fn offset_of(b: usize) -> [i64; 3] {
    [
        (b % 3) as i64 - 1,
        (b / 3 % 3) as i64 - 1,
        (b / 9) as i64 - 1,
    ]
}

const fn build_cube() -> Cube {
    let mut adj26 = [0u32; 27];
    let mut adj6 = [0u32; 27];
    let mut n18 = 0u32;
    let mut n6 = 0u32;
    let mut a = 0;
    while a < 27 {
        let oa = offset_of(a);
        let la = oa[0].abs() + oa[1].abs() + oa[2].abs();
        if a != CENTER {
            if la <= 2 {
                n18 |= 1 << a;
            }
            if la == 1 {
                n6 |= 1 << a;
            }
        }
        let mut b = 0;
        while b < 27 {
            let ob = offset_of(b);
            let d = [ob[0] - oa[0], ob[1] - oa[1], ob[2] - oa[2]];
            let cheb = {
                let x = if d[0].abs() > d[1].abs() {
                    d[0].abs()
                } else {
                    d[1].abs()
                };
                if x > d[2].abs() {
                    x
                } else {
                    d[2].abs()
                }
            };
            let l1 = d[0].abs() + d[1].abs() + d[2].abs();
            if a != b && cheb == 1 {
                adj26[a] |= 1 << b;
                if l1 == 1 {
                    adj6[a] |= 1 << b;
                }
            }
            b += 1;
        }
        a += 1;
    }
    Cube {
        adj26,
        adj6,
        n18,
        n6,
    }
}

static CUBE: Cube = build_cube();

/// Grows `seed` inside `within` along `adj`.
fn flood(seed: u32, within: u32, adj: &[u32; 27]) -> u32 {
    let mut comp = seed;
    let mut frontier = seed;
    while frontier != 0 {
        let mut next = 0;
        let mut f = frontier;
        while f != 0 {
            let b = f.trailing_zeros() as usize;
            f &= f - 1;
            next |= adj[b];
        }
        next &= within & !comp;
        comp |= next;
        frontier = next;
    }
    comp
}

/// Simple-point test on a 3x3x3 neighborhood word (the center bit is ignored).
pub(crate) fn is_simple(nb: u32) -> bool {
    let fg = nb & !(1 << CENTER) & ((1 << 27) - 1);
    if fg == 0 {
        return false;
    }
    // one 26-component of foreground in N26*
    let first = fg & fg.wrapping_neg();
    if flood(first, fg, &CUBE.adj26) != fg {
        return false;
    }
    // one 6-component of background in N18* that touches a face neighbor
    let bg = !nb & CUBE.n18;
    let touching = bg & CUBE.n6;
    if touching == 0 {
        return false;
    }
    let seed = touching & touching.wrapping_neg();
    let comp = flood(seed, bg, &CUBE.adj6);
    touching & !comp == 0
}

struct Grid {
    dims: Dims,
    data: Vec<bool>,
    nb: [isize; 27],
}

impl Grid {
    fn word(&self, idx: usize) -> u32 {
        let mut w = 0u32;
        for (b, &o) in self.nb.iter().enumerate() {
            if self.data[(idx as isize + o) as usize] {
                w |= 1 << b;
            }
        }
        w
    }
}

/// Thins `mask` to a curve skeleton.
pub fn skeletonize(mask: &Mask) -> Result<Skeleton> {
    if mask.count_true() == 0 {
        return Err(Error::EmptyMask);
    }
    let padded = pad_volume(mask, [1, 1, 1], false)?;
    let pd = padded.dims();
    let mut nb = [0isize; 27];
    for (b, o) in nb.iter_mut().enumerate() {
        let d = offset_of(b);
        *o = d[0] as isize + pd.nx as isize * (d[1] as isize + pd.ny as isize * d[2] as isize);
    }
    let mut grid = Grid {
        dims: pd,
        data: padded.into_data(),
        nb,
    };
    let mut alive: Vec<usize> = (0..grid.data.len()).filter(|&i| grid.data[i]).collect();

    // face-neighbor bit for each sub-iteration direction
    let directions = [14usize, 12, 16, 10, 22, 4];
    loop {
        let mut changed = false;
        for &dir in &directions {
            let step = grid.nb[dir];
            let candidates: Vec<usize> = alive
                .iter()
                .copied()
                .filter(|&i| !grid.data[(i as isize + step) as usize])
                .collect();
            for i in candidates {
                let w = grid.word(i);
                let neighbors = (w & !(1 << CENTER)).count_ones();
                if neighbors != 1 && is_simple(w) {
                    grid.data[i] = false;
                    changed = true;
                }
            }
            alive.retain(|&i| grid.data[i]);
        }
        if !changed {
            break;
        }
    }

    let dims = mask.dims();
    let dist = distance_to_background(mask);
    let mut voxels = Vec::with_capacity(alive.len());
    let mut radii = Vec::with_capacity(alive.len());
    for &p in &alive {
        let c = grid.dims.coords(p);
        let idx = dims.index(c[0] - 1, c[1] - 1, c[2] - 1);
        voxels.push(idx);
        radii.push(dist[idx]);
    }
    Ok(Skeleton {
        dims,
        spacing: mask.spacing(),
        origin: mask.origin(),
        voxels,
        radii,
    })
}
