//! Vessel connectivity graphs built from curve skeletons.
//!
//! Skeleton voxels whose 26-neighbor count differs from two are critical;
//! 26-connected groups of critical voxels become nodes and the runs of
//! two-neighbor voxels between them become edges. A pure cycle gets a node at
//! its lowest voxel. Endpoints whose ball (node radius plus the port radius)
//! reaches a chamber voxel become chamber ports; the ball is also tried one
//! radius further out along the tip direction, since a curve skeleton ends
//! short of an open tube end.
//!
//! Pruning repeats until nothing changes: short spurs hanging off junctions,
//! short isolated fragments, short self-loops and bare nodes are removed, and
//! nodes left with two edges are dissolved into a single edge. Chamber ports
//! are never pruned as spurs or fragments.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morphology::opening;
use crate::skeleton::Skeleton;
use crate::volume::{Dims, Label, LabelVolume, Mask, VoxelSpacing, N26};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    Junction,
    Endpoint,
    ChamberPort,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VesselNode {
    pub id: usize,
    pub kind: NodeKind,
    /// Centroid of the node's skeleton voxels, mm.
    pub position: [f64; 3],
    /// Mean skeleton radius over the node's voxels, mm.
    pub radius: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chamber: Option<Label>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VesselEdge {
    pub id: usize,
    pub source: usize,
    pub target: usize,
    /// Arc length of the polyline source → path voxels → target, mm.
    pub length: f64,
    /// Mean skeleton radius along the path, mm.
    pub radius: f64,
    /// Unit vector from source to target position.
    pub direction: [f64; 3],
    /// Interior skeleton voxels from source to target, as grid coordinates.
    #[serde(default)]
    pub path: Vec<[usize; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridInfo {
    pub dims: Dims,
    pub spacing: VoxelSpacing,
    pub origin: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VesselGraph {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridInfo>,
    pub nodes: Vec<VesselNode>,
    pub edges: Vec<VesselEdge>,
}

impl VesselGraph {
    pub fn degree(&self, node: usize) -> usize {
        self.edges
            .iter()
            .map(|e| (e.source == node) as usize + (e.target == node) as usize)
            .sum()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.nodes.len()];
        for e in &self.edges {
            d[e.source] += 1;
            d[e.target] += 1;
        }
        d
    }

    /// Checks ids, endpoint indices and kind/degree consistency.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(format!("graph: {m}")));
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id != i {
                return bad(format!("node at position {i} has id {}", n.id));
            }
            if (n.kind == NodeKind::ChamberPort) != n.chamber.is_some() {
                return bad(format!(
                    "node {i}: chamber label must be present exactly on ports"
                ));
            }
            if let Some(c) = n.chamber {
                if !c.is_chamber() {
                    return bad(format!("node {i}: {c} is not a chamber"));
                }
            }
        }
        for (i, e) in self.edges.iter().enumerate() {
            if e.id != i {
                return bad(format!("edge at position {i} has id {}", e.id));
            }
            if e.source >= self.nodes.len() || e.target >= self.nodes.len() {
                return bad(format!("edge {i} references a missing node"));
            }
        }
        Ok(())
    }

    /// Relabels node `i` as `perm[i]`, keeping edge order.
    pub fn permute_nodes(&self, perm: &[usize]) -> Result<VesselGraph> {
        let n = self.nodes.len();
        let mut seen = vec![false; n];
        if perm.len() != n
            || perm
                .iter()
                .any(|&p| p >= n || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::InvalidParameter(
                "node permutation is not a bijection".into(),
            ));
        }
        let mut nodes = self.nodes.clone();
        for (i, node) in self.nodes.iter().enumerate() {
            nodes[perm[i]] = VesselNode {
                id: perm[i],
                ..node.clone()
            };
        }
        let edges = self
            .edges
            .iter()
            .map(|e| VesselEdge {
                source: perm[e.source],
                target: perm[e.target],
                ..e.clone()
            })
            .collect();
        Ok(VesselGraph {
            grid: self.grid,
            nodes,
            edges,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serialization cannot fail")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let g = Self::from_json(&text).map_err(|e| Error::json(path, e))?;
        g.validate()?;
        Ok(g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphParams {
    /// Spurs, fragments and self-loops shorter than this are removed, mm.
    pub prune_length_mm: f64,
    /// Extra reach beyond the node radius for chamber attachment, mm.
    pub port_radius_mm: f64,
    /// Opening radius applied to the vessel candidates before skeletonizing, mm.
    /// Strips the thin seams an imperfect chamber mask leaves behind.
    pub opening_radius_mm: f64,
}

impl Default for GraphParams {
    fn default() -> Self {
        Self {
            prune_length_mm: 5.0,
            port_radius_mm: 1.5,
            opening_radius_mm: 1.5,
        }
    }
}

impl GraphParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.prune_length_mm.is_finite() && self.prune_length_mm >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "prune_length_mm must be >= 0, got {}",
                self.prune_length_mm
            )));
        }
        if !(self.port_radius_mm.is_finite() && self.port_radius_mm >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "port_radius_mm must be >= 0, got {}",
                self.port_radius_mm
            )));
        }
        if !(self.opening_radius_mm.is_finite() && self.opening_radius_mm >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "opening_radius_mm must be >= 0, got {}",
                self.opening_radius_mm
            )));
        }
        Ok(())
    }
}

struct WNode {
    voxels: Vec<usize>,
    position: [f64; 3],
    radius: f64,
    chamber: Option<Label>,
    alive: bool,
}

struct WEdge {
    a: usize,
    b: usize,
    path: Vec<usize>,
    alive: bool,
}

struct Work<'a> {
    skel: &'a Skeleton,
    /// skeleton slot + 1 per grid voxel, 0 off the skeleton
    slot: Vec<u32>,
    nodes: Vec<WNode>,
    edges: Vec<WEdge>,
}

impl Work<'_> {
    fn pos(&self, idx: usize) -> [f64; 3] {
        self.skel.position(idx)
    }

    fn radius_at(&self, idx: usize) -> f64 {
        self.skel.radii[self.slot[idx] as usize - 1]
    }

    fn neighbors(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        let dims = self.skel.dims;
        let c = dims.coords(idx);
        N26.iter()
            .filter_map(move |&d| dims.offset(c, d))
            .filter(move |&n| self.slot[n] != 0)
    }

    fn edge_length(&self, e: &WEdge) -> f64 {
        let mut pts = Vec::with_capacity(e.path.len() + 2);
        pts.push(self.nodes[e.a].position);
        pts.extend(e.path.iter().map(|&v| self.pos(v)));
        pts.push(self.nodes[e.b].position);
        pts.windows(2).map(|w| dist(w[0], w[1])).sum()
    }

    fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.nodes.len()];
        for e in self.edges.iter().filter(|e| e.alive) {
            d[e.a] += 1;
            d[e.b] += 1;
        }
        d
    }

    fn is_port(&self, node: usize, degree: usize) -> bool {
        degree == 1 && self.nodes[node].chamber.is_some()
    }
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Nearest chamber whose voxel centers lie within `reach` of `p`; ties go to
/// the lower label code.
fn touching_chamber(chambers: &LabelVolume, p: [f64; 3], reach: f64) -> Option<Label> {
    let dims = chambers.dims();
    let s = chambers.spacing().as_array();
    let o = chambers.origin();
    let n = dims.as_array();
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    for a in 0..3 {
        let l = ((p[a] - reach - o[a]) / s[a]).ceil().max(0.0);
        let h = ((p[a] + reach - o[a]) / s[a])
            .floor()
            .min(n[a] as f64 - 1.0);
        if h < l {
            return None;
        }
        lo[a] = l as usize;
        hi[a] = h as usize;
    }
    let mut best: Option<(f64, Label)> = None;
    for k in lo[2]..=hi[2] {
        for j in lo[1]..=hi[1] {
            for i in lo[0]..=hi[0] {
                let l = chambers.get(i, j, k);
                if !l.is_chamber() {
                    continue;
                }
                let d = dist(p, chambers.position([i, j, k]));
                if d > reach + 1e-9 {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bd, bl)) => d < bd - 1e-12 || ((d - bd).abs() <= 1e-12 && l < bl),
                };
                if better {
                    best = Some((d, l));
                }
            }
        }
    }
    best.map(|(_, l)| l)
}

/// `position` pushed one radius along the direction away from nearby skeleton
/// voxels, or None when the neighborhood is balanced (junctions, isolated voxels).
fn outward(work: &Work, position: [f64; 3], radius: f64) -> Option<[f64; 3]> {
    let dims = work.skel.dims;
    let s = work.skel.spacing.as_array();
    let o = work.skel.origin;
    let n = dims.as_array();
    let h = s.iter().cloned().fold(f64::INFINITY, f64::min);
    let ball = radius.max(2.0 * h);
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    for a in 0..3 {
        lo[a] = ((position[a] - ball - o[a]) / s[a]).ceil().max(0.0) as usize;
        hi[a] = (((position[a] + ball - o[a]) / s[a]).floor().max(0.0) as usize).min(n[a] - 1);
    }
    let mut sum = [0.0; 3];
    let mut m = 0usize;
    for k in lo[2]..=hi[2] {
        for j in lo[1]..=hi[1] {
            for i in lo[0]..=hi[0] {
                let idx = dims.index(i, j, k);
                if work.slot[idx] == 0 {
                    continue;
                }
                let p = work.pos(idx);
                if dist(p, position) <= ball {
                    for a in 0..3 {
                        sum[a] += p[a];
                    }
                    m += 1;
                }
            }
        }
    }
    if m == 0 {
        return None;
    }
    let d: Vec<f64> = (0..3).map(|a| position[a] - sum[a] / m as f64).collect();
    let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if len < 0.25 * h {
        return None;
    }
    Some([0, 1, 2].map(|a| position[a] + d[a] / len * radius))
}

fn build_node(
    work: &Work,
    voxels: Vec<usize>,
    chambers: &LabelVolume,
    params: &GraphParams,
) -> WNode {
    let m = voxels.len() as f64;
    let mut position = [0.0; 3];
    let mut radius = 0.0;
    for &v in &voxels {
        let p = work.pos(v);
        for a in 0..3 {
            position[a] += p[a] / m;
        }
        radius += work.radius_at(v) / m;
    }
    let reach = radius + params.port_radius_mm;
    let chamber = touching_chamber(chambers, position, reach).or_else(|| {
        // a curve skeleton stops about one radius short of an open tube end
        let tip = outward(work, position, radius)?;
        touching_chamber(chambers, tip, reach)
    });
    WNode {
        voxels,
        position,
        radius,
        chamber,
        alive: true,
    }
}

fn trace<'a>(skel: &'a Skeleton, chambers: &LabelVolume, params: &GraphParams) -> Work<'a> {
    let dims = skel.dims;
    let mut slot = vec![0u32; dims.len()];
    for (s, &v) in skel.voxels.iter().enumerate() {
        slot[v] = s as u32 + 1;
    }
    let mut work = Work {
        skel,
        slot,
        nodes: Vec::new(),
        edges: Vec::new(),
    };
    let count: Vec<usize> = skel
        .voxels
        .iter()
        .map(|&v| work.neighbors(v).count())
        .collect();
    let critical = |work: &Work, v: usize| count[work.slot[v] as usize - 1] != 2;

    // node id + 1 per skeleton slot
    let mut owner = vec![0usize; skel.voxels.len()];
    for &seed in &skel.voxels {
        if !critical(&work, seed) || owner[work.slot[seed] as usize - 1] != 0 {
            continue;
        }
        let id = work.nodes.len() + 1;
        let mut cluster = vec![seed];
        owner[work.slot[seed] as usize - 1] = id;
        let mut q = 0;
        while q < cluster.len() {
            let v = cluster[q];
            q += 1;
            let next: Vec<usize> = work.neighbors(v).collect();
            for n in next {
                let s = work.slot[n] as usize - 1;
                if owner[s] == 0 && critical(&work, n) {
                    owner[s] = id;
                    cluster.push(n);
                }
            }
        }
        cluster.sort_unstable();
        let node = build_node(&work, cluster, chambers, params);
        work.nodes.push(node);
    }

    let mut visited = vec![false; skel.voxels.len()];
    let walk =
        |work: &Work, visited: &mut Vec<bool>, owner: &[usize], from: usize, first: usize| {
            let mut path = vec![first];
            visited[work.slot[first] as usize - 1] = true;
            let mut prev = from;
            let mut cur = first;
            loop {
                let next = work
                    .neighbors(cur)
                    .find(|&n| n != prev)
                    .expect("path voxel has two neighbors");
                let s = work.slot[next] as usize - 1;
                if owner[s] != 0 {
                    return (path, owner[s] - 1);
                }
                if visited[s] {
                    // closed loop back to the start voxel
                    return (path, usize::MAX);
                }
                visited[s] = true;
                path.push(next);
                prev = cur;
                cur = next;
            }
        };

    for a in 0..work.nodes.len() {
        let starts: Vec<(usize, usize)> = work.nodes[a]
            .voxels
            .iter()
            .flat_map(|&v| work.neighbors(v).map(move |n| (v, n)))
            .collect();
        for (v, n) in starts {
            let s = work.slot[n] as usize - 1;
            if owner[s] != 0 || visited[s] {
                continue;
            }
            let (path, b) = walk(&work, &mut visited, &owner, v, n);
            work.edges.push(WEdge {
                a,
                b,
                path,
                alive: true,
            });
        }
    }

    // pure cycles
    for idx in 0..skel.voxels.len() {
        if owner[idx] != 0 || visited[idx] {
            continue;
        }
        let anchor = skel.voxels[idx];
        let id = work.nodes.len();
        owner[idx] = id + 1;
        visited[idx] = true;
        let node = build_node(&work, vec![anchor], chambers, params);
        work.nodes.push(node);
        let first = work
            .neighbors(anchor)
            .min()
            .expect("cycle voxel has neighbors");
        let (path, _) = walk(&work, &mut visited, &owner, anchor, first);
        work.edges.push(WEdge {
            a: id,
            b: id,
            path,
            alive: true,
        });
    }
    work
}

/// Shortest 26-connected route through `cluster` from a voxel adjacent to
/// `from` to a voxel adjacent to `to`.
fn route_through(work: &Work, cluster: &[usize], from: usize, to: usize) -> Vec<usize> {
    let dims = work.skel.dims;
    let adjacent = |a: usize, b: usize| {
        let (ca, cb) = (dims.coords(a), dims.coords(b));
        (0..3).all(|i| ca[i].abs_diff(cb[i]) <= 1) && a != b
    };
    let mut parent: Vec<Option<usize>> = vec![None; cluster.len()];
    let mut seen = vec![false; cluster.len()];
    let mut queue = VecDeque::new();
    for (i, &v) in cluster.iter().enumerate() {
        if adjacent(v, from) {
            seen[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        if adjacent(cluster[i], to) {
            let mut out = vec![cluster[i]];
            let mut cur = i;
            while let Some(p) = parent[cur] {
                out.push(cluster[p]);
                cur = p;
            }
            out.reverse();
            return out;
        }
        for (j, &w) in cluster.iter().enumerate() {
            if !seen[j] && adjacent(cluster[i], w) {
                seen[j] = true;
                parent[j] = Some(i);
                queue.push_back(j);
            }
        }
    }
    // the cluster is connected and touches both paths, so a route exists;
    // fall back to the whole cluster in voxel order
    cluster.to_vec()
}

fn prune(work: &mut Work, params: &GraphParams) {
    let limit = params.prune_length_mm;
    loop {
        let mut changed = false;

        // spurs, shortest first
        let mut spurs: Vec<(f64, usize)> = {
            let deg = work.degrees();
            work.edges
                .iter()
                .enumerate()
                .filter(|(_, e)| e.alive && e.a != e.b)
                .filter(|(_, e)| {
                    let (da, db) = (deg[e.a], deg[e.b]);
                    (da == 1 && db >= 3) || (db == 1 && da >= 3)
                })
                .map(|(i, e)| (work.edge_length(e), i))
                .filter(|&(l, _)| l < limit)
                .collect()
        };
        spurs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        for (_, i) in spurs {
            let deg = work.degrees();
            let e = &work.edges[i];
            let (tip, base) = if deg[e.a] == 1 {
                (e.a, e.b)
            } else {
                (e.b, e.a)
            };
            if deg[tip] != 1 || deg[base] < 3 || work.is_port(tip, 1) {
                continue;
            }
            work.edges[i].alive = false;
            work.nodes[tip].alive = false;
            changed = true;
        }

        // short self-loops
        for i in 0..work.edges.len() {
            let e = &work.edges[i];
            if e.alive && e.a == e.b && work.edge_length(e) < limit {
                work.edges[i].alive = false;
                changed = true;
            }
        }

        // short fragments without ports, and bare nodes
        changed |= drop_fragments(work, limit);

        // dissolve two-edge nodes
        let deg = work.degrees();
        for (n, &d) in deg.iter().enumerate() {
            if !work.nodes[n].alive || d != 2 {
                continue;
            }
            let inc: Vec<usize> = (0..work.edges.len())
                .filter(|&i| work.edges[i].alive && (work.edges[i].a == n || work.edges[i].b == n))
                .collect();
            if inc.len() != 2 {
                // a lone self-loop
                continue;
            }
            let (e1, e2) = (inc[0], inc[1]);
            let mut p1 = work.edges[e1].path.clone();
            let mut a = work.edges[e1].a;
            if work.edges[e1].a == n {
                p1.reverse();
                a = work.edges[e1].b;
            }
            let mut p2 = work.edges[e2].path.clone();
            let mut b = work.edges[e2].b;
            if work.edges[e2].b == n {
                p2.reverse();
                b = work.edges[e2].a;
            }
            let mid = route_through(work, &work.nodes[n].voxels, p1[p1.len() - 1], p2[0]);
            p1.extend(mid);
            p1.extend(p2);
            work.edges[e1].alive = false;
            work.edges[e2].alive = false;
            work.nodes[n].alive = false;
            work.edges.push(WEdge {
                a,
                b,
                path: p1,
                alive: true,
            });
            changed = true;
            // degrees of a and b are unchanged, the loop continues safely
        }

        if !changed {
            break;
        }
    }
}

fn drop_fragments(work: &mut Work, limit: f64) -> bool {
    let n = work.nodes.len();
    let deg = work.degrees();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, e) in work.edges.iter().enumerate().filter(|(_, e)| e.alive) {
        adj[e.a].push(i);
        adj[e.b].push(i);
    }
    let mut comp = vec![usize::MAX; n];
    let mut changed = false;
    for s in 0..n {
        if !work.nodes[s].alive || comp[s] != usize::MAX {
            continue;
        }
        let mut members = vec![s];
        let mut edges = Vec::new();
        comp[s] = s;
        let mut q = 0;
        while q < members.len() {
            let u = members[q];
            q += 1;
            for &ei in &adj[u] {
                if !edges.contains(&ei) {
                    edges.push(ei);
                }
                let e = &work.edges[ei];
                let v = if e.a == u { e.b } else { e.a };
                if comp[v] == usize::MAX {
                    comp[v] = s;
                    members.push(v);
                }
            }
        }
        let total: f64 = edges
            .iter()
            .map(|&i| work.edge_length(&work.edges[i]))
            .sum();
        let has_port = members.iter().any(|&m| work.is_port(m, deg[m]));
        if edges.is_empty() || (total < limit && !has_port) {
            for &m in &members {
                work.nodes[m].alive = false;
            }
            for &i in &edges {
                work.edges[i].alive = false;
            }
            changed = true;
        }
    }
    changed
}

fn finish(work: &Work) -> VesselGraph {
    let skel = work.skel;
    let dims = skel.dims;
    let deg = work.degrees();
    let mut order: Vec<usize> = (0..work.nodes.len())
        .filter(|&n| work.nodes[n].alive)
        .collect();
    let anchor = |n: usize| {
        let c = dims.coords(work.nodes[n].voxels[0]);
        work.nodes[n]
            .voxels
            .iter()
            .map(|&v| dims.coords(v))
            .fold(c, |m, c| m.min(c))
    };
    order.sort_by_key(|&n| anchor(n));
    let mut new_id = vec![usize::MAX; work.nodes.len()];
    for (i, &n) in order.iter().enumerate() {
        new_id[n] = i;
    }
    let nodes = order
        .iter()
        .enumerate()
        .map(|(id, &n)| {
            let w = &work.nodes[n];
            let port = work.is_port(n, deg[n]);
            VesselNode {
                id,
                kind: if port {
                    NodeKind::ChamberPort
                } else if deg[n] == 1 {
                    NodeKind::Endpoint
                } else {
                    NodeKind::Junction
                },
                position: w.position,
                radius: w.radius,
                chamber: if port { w.chamber } else { None },
            }
        })
        .collect();

    let mut edges: Vec<(usize, usize, Vec<[usize; 3]>, &WEdge)> = work
        .edges
        .iter()
        .filter(|e| e.alive)
        .map(|e| {
            let (mut s, mut t) = (new_id[e.a], new_id[e.b]);
            let mut path: Vec<[usize; 3]> = e.path.iter().map(|&v| dims.coords(v)).collect();
            if s > t || (s == t && path.first() > path.last()) {
                std::mem::swap(&mut s, &mut t);
                path.reverse();
            }
            (s, t, path, e)
        })
        .collect();
    edges.sort_by(|x, y| (x.0, x.1, &x.2).cmp(&(y.0, y.1, &y.2)));
    let edges = edges
        .into_iter()
        .enumerate()
        .map(|(id, (source, target, path, e))| {
            let ps = work.nodes[e.a].position;
            let pt = work.nodes[e.b].position;
            let (ps, pt) = if new_id[e.a] == source {
                (ps, pt)
            } else {
                (pt, ps)
            };
            let d = dist(ps, pt);
            let direction = if d > 0.0 {
                [0, 1, 2].map(|a| (pt[a] - ps[a]) / d)
            } else {
                [0.0; 3]
            };
            let radius =
                e.path.iter().map(|&v| work.radius_at(v)).sum::<f64>() / e.path.len() as f64;
            VesselEdge {
                id,
                source,
                target,
                length: work.edge_length(e),
                radius,
                direction,
                path,
            }
        })
        .collect();
    VesselGraph {
        grid: Some(GridInfo {
            dims,
            spacing: skel.spacing,
            origin: skel.origin,
        }),
        nodes,
        edges,
    }
}

fn check_grid(skeleton: &Skeleton, chambers: &LabelVolume) -> Result<()> {
    if skeleton.dims != chambers.dims() || skeleton.spacing != chambers.spacing() {
        return Err(Error::GridMismatch(format!(
            "skeleton {:?} vs chambers {:?}",
            skeleton.dims.as_array(),
            chambers.dims().as_array()
        )));
    }
    Ok(())
}

/// Graph of the raw skeleton, before any pruning. Every skeleton voxel is
/// either a node voxel or the interior voxel of exactly one edge.
/// VesselCandidate voxels of `labels`, opened by `params.opening_radius_mm`.
pub fn vessel_mask(labels: &LabelVolume, params: &GraphParams) -> Result<Mask> {
    params.validate()?;
    let m = labels.mask_of(Label::VesselCandidate);
    if params.opening_radius_mm > 0.0 {
        opening(&m, params.opening_radius_mm)
    } else {
        Ok(m)
    }
}

pub fn trace_graph(
    skeleton: &Skeleton,
    chambers: &LabelVolume,
    params: &GraphParams,
) -> Result<VesselGraph> {
    params.validate()?;
    check_grid(skeleton, chambers)?;
    Ok(finish(&trace(skeleton, chambers, params)))
}

/// Builds the pruned vessel graph of `skeleton`, attaching endpoints to the
/// chambers of `chambers`.
pub fn extract_graph(
    skeleton: &Skeleton,
    chambers: &LabelVolume,
    params: &GraphParams,
) -> Result<VesselGraph> {
    params.validate()?;
    check_grid(skeleton, chambers)?;
    if skeleton.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut work = trace(skeleton, chambers, params);
    prune(&mut work, params);
    Ok(finish(&work))
}
