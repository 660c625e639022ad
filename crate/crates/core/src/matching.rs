//! Error-tolerant attributed graph matching of vessel graphs against anatomy
//! templates.
//!
//! A correspondence maps each graph node to a template node or to nothing.
//! Graph ports may only take template ports of the same chamber; other graph
//! nodes may take any template node, paying `w_port` on a template port and
//! `w_kind` on a node of the other kind. Edges follow the nodes: a graph edge
//! whose endpoints land on the two ends of a template edge matches it and
//! pays the clamped relative deviation of its length and radius. When several
//! parallel graph edges land on one template edge the cheapest (then lowest
//! id) keeps it. Every other graph edge is rejected at `w_extra`, and every
//! mandatory template edge left uncovered costs `w_miss`.
//!
//! [`match_graph`] finds the minimum over all templates by branch and bound;
//! [`brute_force_match`] enumerates every correspondence and is kept as the
//! test oracle. Both score complete correspondences with the same function, so
//! their costs compare exactly. Ties go to the lower template index, then to
//! the lexicographically smallest correspondence (unmapped before mapped).

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{NodeKind, VesselGraph};
use crate::volume::Label;

/// Largest graph accepted by [`brute_force_match`].
pub const BRUTE_FORCE_LIMIT: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeClass {
    Ao,
    PA,
    LA,
    RA,
    Unclassified,
}

impl EdgeClass {
    /// Output label painted for this class; None for Unclassified.
    pub fn label(self) -> Option<Label> {
        match self {
            EdgeClass::Ao => Some(Label::Ao),
            EdgeClass::PA => Some(Label::PA),
            EdgeClass::LA => Some(Label::LA),
            EdgeClass::RA => Some(Label::RA),
            EdgeClass::Unclassified => None,
        }
    }
}

impl fmt::Display for EdgeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Weights {
    pub port: f64,
    pub kind: f64,
    pub length: f64,
    pub radius: f64,
    pub missing: f64,
    pub extra: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            port: 10.0,
            kind: 2.0,
            length: 1.0,
            radius: 1.0,
            missing: 5.0,
            extra: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateNode {
    pub kind: NodeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chamber: Option<Label>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateEdge {
    pub source: usize,
    pub target: usize,
    pub class: EdgeClass,
    /// Nominal length and slack, mm.
    pub length: f64,
    #[serde(default)]
    pub length_tol: f64,
    /// Nominal radius and slack, mm.
    pub radius: f64,
    #[serde(default)]
    pub radius_tol: f64,
    /// Optional edges cost nothing when left unmatched.
    #[serde(default)]
    pub optional: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateGraph {
    pub variant: String,
    pub nodes: Vec<TemplateNode>,
    pub edges: Vec<TemplateEdge>,
    #[serde(default)]
    pub weights: Weights,
}

impl TemplateGraph {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Schema(format!("template {:?}: {m}", self.variant)));
        if self.variant.trim().is_empty() {
            return bad("empty variant name".into());
        }
        if self.nodes.is_empty() {
            return bad("no nodes".into());
        }
        for (i, n) in self.nodes.iter().enumerate() {
            match (n.kind, n.chamber) {
                (NodeKind::ChamberPort, Some(c)) if c.is_chamber() => {}
                (NodeKind::ChamberPort, Some(c)) => {
                    return bad(format!("node {i}: {c} is not a chamber"))
                }
                (NodeKind::ChamberPort, None) => {
                    return bad(format!("node {i}: port without chamber"))
                }
                (_, Some(_)) => return bad(format!("node {i}: chamber on a non-port node")),
                (_, None) => {}
            }
        }
        if !self.nodes.iter().any(|n| n.kind == NodeKind::ChamberPort) {
            return bad("no chamber port".into());
        }
        let mut pairs = std::collections::BTreeSet::new();
        for (i, e) in self.edges.iter().enumerate() {
            if e.source >= self.nodes.len() || e.target >= self.nodes.len() {
                return bad(format!("edge {i} references a missing node"));
            }
            if e.source == e.target {
                return bad(format!("edge {i} is a self-loop"));
            }
            if !pairs.insert((e.source.min(e.target), e.source.max(e.target))) {
                return bad(format!("edge {i} duplicates another edge"));
            }
            if e.class == EdgeClass::Unclassified {
                return bad(format!("edge {i}: class must be one of Ao, PA, LA, RA"));
            }
            let positive = |x: f64| x.is_finite() && x > 0.0;
            let nonneg = |x: f64| x.is_finite() && x >= 0.0;
            if !positive(e.length)
                || !positive(e.radius)
                || !nonneg(e.length_tol)
                || !nonneg(e.radius_tol)
            {
                return bad(format!(
                    "edge {i}: lengths and radii must be positive, tolerances >= 0"
                ));
            }
        }
        let w = &self.weights;
        if [w.port, w.kind, w.length, w.radius, w.missing, w.extra]
            .iter()
            .any(|x| !(x.is_finite() && *x >= 0.0))
        {
            return bad("weights must be finite and >= 0".into());
        }
        Ok(())
    }

    #[cfg(test)]
    fn mandatory_edges(&self) -> usize {
        self.edges.iter().filter(|e| !e.optional).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateSet {
    pub templates: Vec<TemplateGraph>,
}

impl TemplateSet {
    pub fn validate(&self) -> Result<()> {
        if self.templates.is_empty() {
            return Err(Error::Schema("empty template set".into()));
        }
        self.templates.iter().try_for_each(TemplateGraph::validate)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let set: TemplateSet =
            serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        set.validate()?;
        Ok(set)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("template serialization cannot fail")
    }

    /// The four variants the phantom generator produces.
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN).expect("built-in templates are valid")
    }

    pub fn names(&self) -> Vec<&str> {
        self.templates.iter().map(|t| t.variant.as_str()).collect()
    }
}

const BUILTIN: &str = include_str!("../templates/builtin.json");

pub fn load_templates(path: impl AsRef<Path>) -> Result<TemplateSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    TemplateSet::from_json(&text).map_err(|e| match e {
        Error::Schema(m) => Error::Schema(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Template node assigned to each graph node, indexed by graph node id.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Correspondence {
    pub nodes: Vec<Option<usize>>,
}

impl Correspondence {
    pub fn empty(graph_nodes: usize) -> Self {
        Self {
            nodes: vec![None; graph_nodes],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    /// Port and kind penalties.
    pub node: f64,
    /// Length and radius deviations of matched edges.
    pub edge: f64,
    /// Missing mandatory template edges plus rejected graph edges.
    pub structural: f64,
    pub total: f64,
    pub matched_edges: usize,
    pub rejected_edges: usize,
    pub missing_edges: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub variant: String,
    /// Index of the chosen template in its set.
    pub template: usize,
    pub correspondence: Correspondence,
    /// Template edge matched by each graph edge, indexed by graph edge id.
    pub edge_map: Vec<Option<usize>>,
    /// Class of each graph edge, indexed by graph edge id.
    pub classes: Vec<EdgeClass>,
    pub cost: CostBreakdown,
}

impl MatchResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("match serialization cannot fail")
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

/// Clamped relative deviation beyond the tolerance.
fn deviation(x: f64, nominal: f64, tol: f64) -> f64 {
    (((x - nominal).abs() - tol).max(0.0) / nominal).min(1.0)
}

/// Precomputed lookups for one (graph, template) pair.
struct Problem<'a> {
    graph: &'a VesselGraph,
    template: &'a TemplateGraph,
    /// template edge index per unordered template node pair
    tedge: Vec<Option<usize>>,
    /// feasible template nodes and their node cost, per graph node
    options: Vec<Vec<(usize, f64)>>,
    /// graph edges incident to each graph node
    incident: Vec<Vec<usize>>,
}

impl<'a> Problem<'a> {
    fn new(graph: &'a VesselGraph, template: &'a TemplateGraph) -> Self {
        let m = template.nodes.len();
        let mut tedge = vec![None; m * m];
        for (i, e) in template.edges.iter().enumerate() {
            tedge[e.source * m + e.target] = Some(i);
            tedge[e.target * m + e.source] = Some(i);
        }
        let w = &template.weights;
        let options = graph
            .nodes
            .iter()
            .map(|g| {
                template
                    .nodes
                    .iter()
                    .enumerate()
                    .filter_map(|(t, tn)| node_cost(g.kind, g.chamber, tn, w).map(|c| (t, c)))
                    .collect()
            })
            .collect();
        let mut incident = vec![Vec::new(); graph.nodes.len()];
        for (i, e) in graph.edges.iter().enumerate() {
            incident[e.source].push(i);
            if e.target != e.source {
                incident[e.target].push(i);
            }
        }
        Self {
            graph,
            template,
            tedge,
            options,
            incident,
        }
    }

    fn template_edge(&self, a: usize, b: usize) -> Option<usize> {
        self.tedge[a * self.template.nodes.len() + b]
    }

    fn edge_cost(&self, g: usize, t: usize) -> f64 {
        let (ge, te) = (&self.graph.edges[g], &self.template.edges[t]);
        let w = &self.template.weights;
        w.length * deviation(ge.length, te.length, te.length_tol)
            + w.radius * deviation(ge.radius, te.radius, te.radius_tol)
    }

    /// Winning template edge per graph edge for a (possibly partial) assignment;
    /// `decided[n]` false leaves node n open and its edges unresolved.
    fn induced(&self, map: &[Option<usize>], decided: &[bool]) -> Vec<Option<(usize, f64)>> {
        let mut out = vec![None; self.graph.edges.len()];
        let mut best: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for (i, e) in self.graph.edges.iter().enumerate() {
            if !(decided[e.source] && decided[e.target]) {
                continue;
            }
            let (Some(a), Some(b)) = (map[e.source], map[e.target]) else {
                continue;
            };
            if a == b {
                continue;
            }
            if let Some(t) = self.template_edge(a, b) {
                let c = self.edge_cost(i, t);
                let slot = best.entry(t).or_insert((c, i));
                if c < slot.0 {
                    *slot = (c, i);
                }
            }
        }
        for (t, (c, i)) in best {
            out[i] = Some((t, c));
        }
        out
    }

    /// Full cost of a complete assignment.
    fn evaluate(&self, map: &[Option<usize>]) -> (CostBreakdown, Vec<Option<usize>>) {
        let w = &self.template.weights;
        let mut node = 0.0;
        for (g, &t) in map.iter().enumerate() {
            if let Some(t) = t {
                node += self.options[g]
                    .iter()
                    .find(|o| o.0 == t)
                    .map_or(0.0, |o| o.1);
            }
        }
        let decided = vec![true; map.len()];
        let induced = self.induced(map, &decided);
        let mut edge = 0.0;
        let mut covered = vec![false; self.template.edges.len()];
        let mut matched = 0;
        for &(t, c) in induced.iter().flatten() {
            edge += c;
            covered[t] = true;
            matched += 1;
        }
        let rejected = self.graph.edges.len() - matched;
        let missing = self
            .template
            .edges
            .iter()
            .zip(&covered)
            .filter(|(e, &c)| !e.optional && !c)
            .count();
        let structural = w.missing * missing as f64 + w.extra * rejected as f64;
        let cost = CostBreakdown {
            node,
            edge,
            structural,
            total: node + edge + structural,
            matched_edges: matched,
            rejected_edges: rejected,
            missing_edges: missing,
        };
        (
            cost,
            induced.into_iter().map(|x| x.map(|(t, _)| t)).collect(),
        )
    }

    /// Admissible lower bound on every completion of a partial assignment.
    fn bound(&self, map: &[Option<usize>], decided: &[bool]) -> f64 {
        let w = &self.template.weights;
        let mut cost = 0.0;
        for g in 0..map.len() {
            if let (true, Some(t)) = (decided[g], map[g]) {
                cost += self.options[g]
                    .iter()
                    .find(|o| o.0 == t)
                    .map_or(0.0, |o| o.1);
            }
        }
        let induced = self.induced(map, decided);
        let mut covered = vec![false; self.template.edges.len()];
        for (i, e) in self.graph.edges.iter().enumerate() {
            let closed = decided[e.source] && decided[e.target];
            let dropped = (decided[e.source] && map[e.source].is_none())
                || (decided[e.target] && map[e.target].is_none());
            match induced[i] {
                Some((t, c)) => {
                    cost += c;
                    covered[t] = true;
                }
                None if closed || dropped => cost += w.extra,
                None => {}
            }
        }
        // preimage of each template node among decided graph nodes
        let mut owner = vec![None; self.template.nodes.len()];
        for g in 0..map.len() {
            if let (true, Some(t)) = (decided[g], map[g]) {
                owner[t] = Some(g);
            }
        }
        let open_neighbor = |g: usize| {
            self.incident[g].iter().any(|&i| {
                let e = &self.graph.edges[i];
                let other = if e.source == g { e.target } else { e.source };
                !decided[other]
            })
        };
        for (t, e) in self.template.edges.iter().enumerate() {
            if e.optional || covered[t] {
                continue;
            }
            let lost = match (owner[e.source], owner[e.target]) {
                (Some(_), Some(_)) => true,
                (Some(g), None) | (None, Some(g)) => !open_neighbor(g),
                (None, None) => false,
            };
            if lost {
                cost += w.missing;
            }
        }
        cost
    }

    fn result(&self, index: usize, map: Vec<Option<usize>>) -> MatchResult {
        let (cost, edge_map) = self.evaluate(&map);
        let classes = edge_map
            .iter()
            .map(|t| t.map_or(EdgeClass::Unclassified, |t| self.template.edges[t].class))
            .collect();
        MatchResult {
            variant: self.template.variant.clone(),
            template: index,
            correspondence: Correspondence { nodes: map },
            edge_map,
            classes,
            cost,
        }
    }
}

/// Cost of `tn` for a graph node of `kind`, None when infeasible.
fn node_cost(
    kind: NodeKind,
    chamber: Option<Label>,
    tn: &TemplateNode,
    w: &Weights,
) -> Option<f64> {
    match (kind, tn.kind) {
        (NodeKind::ChamberPort, NodeKind::ChamberPort) => (chamber == tn.chamber).then_some(0.0),
        (NodeKind::ChamberPort, _) => None,
        (_, NodeKind::ChamberPort) => Some(w.port),
        (a, b) => Some(if a == b { 0.0 } else { w.kind }),
    }
}

fn check_correspondence(problem: &Problem, corr: &Correspondence) -> Result<()> {
    let bad = |m: String| Err(Error::InvalidCorrespondence(m));
    let n = problem.graph.nodes.len();
    if corr.nodes.len() != n {
        return bad(format!("{} entries for {n} graph nodes", corr.nodes.len()));
    }
    let mut used = vec![false; problem.template.nodes.len()];
    for (g, &t) in corr.nodes.iter().enumerate() {
        let Some(t) = t else { continue };
        if t >= used.len() {
            return bad(format!("graph node {g} maps to missing template node {t}"));
        }
        if std::mem::replace(&mut used[t], true) {
            return bad(format!("template node {t} is used twice"));
        }
        if !problem.options[g].iter().any(|o| o.0 == t) {
            return bad(format!("graph port {g} cannot map to template node {t}"));
        }
    }
    Ok(())
}

/// Cost of an explicit correspondence.
pub fn match_cost(
    corr: &Correspondence,
    graph: &VesselGraph,
    template: &TemplateGraph,
) -> Result<CostBreakdown> {
    graph.validate()?;
    template.validate()?;
    let problem = Problem::new(graph, template);
    check_correspondence(&problem, corr)?;
    Ok(problem.evaluate(&corr.nodes).0)
}

/// Builds the full [`MatchResult`] of an explicit correspondence.
pub fn evaluate_correspondence(
    corr: &Correspondence,
    graph: &VesselGraph,
    templates: &TemplateSet,
    index: usize,
) -> Result<MatchResult> {
    let template = templates
        .templates
        .get(index)
        .ok_or_else(|| Error::InvalidCorrespondence(format!("no template {index}")))?;
    graph.validate()?;
    let problem = Problem::new(graph, template);
    check_correspondence(&problem, corr)?;
    Ok(problem.result(index, corr.nodes.clone()))
}

/// Whether (cost, correspondence) `a` beats `b` under the tie rule.
fn better(
    a: &CostBreakdown,
    am: &[Option<usize>],
    b: &CostBreakdown,
    bm: &[Option<usize>],
) -> bool {
    a.total < b.total || (a.total == b.total && am < bm)
}

struct Search<'p, 'a> {
    problem: &'p Problem<'a>,
    order: Vec<usize>,
    map: Vec<Option<usize>>,
    decided: Vec<bool>,
    used: Vec<bool>,
    best: (CostBreakdown, Vec<Option<usize>>),
}

impl Search<'_, '_> {
    fn run(&mut self, depth: usize) {
        let b = self.bound();
        let limit = self.best.0.total;
        if b > limit + 1e-9 * limit.max(1.0) {
            return;
        }
        if depth == self.order.len() {
            let (cost, _) = self.problem.evaluate(&self.map);
            if better(&cost, &self.map, &self.best.0, &self.best.1) {
                self.best = (cost, self.map.clone());
            }
            return;
        }
        let g = self.order[depth];
        self.decided[g] = true;
        self.map[g] = None;
        self.run(depth + 1);
        for k in 0..self.problem.options[g].len() {
            let t = self.problem.options[g][k].0;
            if self.used[t] {
                continue;
            }
            self.used[t] = true;
            self.map[g] = Some(t);
            self.run(depth + 1);
            self.used[t] = false;
        }
        self.map[g] = None;
        self.decided[g] = false;
    }

    fn bound(&self) -> f64 {
        self.problem.bound(&self.map, &self.decided)
    }
}

fn branch_and_bound(problem: &Problem) -> Vec<Option<usize>> {
    let n = problem.graph.nodes.len();
    let degrees = problem.graph.degrees();
    // ports first, they have the fewest options; then by degree
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&g| {
        (
            problem.graph.nodes[g].kind != NodeKind::ChamberPort,
            std::cmp::Reverse(degrees[g]),
            g,
        )
    });
    let empty = vec![None; n];
    let start = problem.evaluate(&empty).0;
    let mut search = Search {
        problem,
        order,
        map: empty.clone(),
        decided: vec![false; n],
        used: vec![false; problem.template.nodes.len()],
        best: (start, empty),
    };
    search.run(0);
    search.best.1
}

fn pick(results: Vec<MatchResult>) -> MatchResult {
    results
        .into_iter()
        .reduce(|a, b| {
            if b.cost.total < a.cost.total
                || (b.cost.total == a.cost.total && b.template < a.template)
            {
                b
            } else {
                a
            }
        })
        .expect("template set is never empty")
}

/// Minimum-cost correspondence over every template, found by branch and bound.
pub fn match_graph(graph: &VesselGraph, templates: &TemplateSet) -> Result<MatchResult> {
    graph.validate()?;
    templates.validate()?;
    if graph.nodes.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let results = templates
        .templates
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let problem = Problem::new(graph, t);
            problem.result(i, branch_and_bound(&problem))
        })
        .collect();
    Ok(pick(results))
}

/// Exhaustive minimum over every correspondence into `template`.
pub fn brute_force_match(graph: &VesselGraph, template: &TemplateGraph) -> Result<MatchResult> {
    brute_force_indexed(graph, template, 0)
}

/// [`brute_force_match`] over a whole set with the same tie rule as [`match_graph`].
pub fn brute_force_match_set(graph: &VesselGraph, templates: &TemplateSet) -> Result<MatchResult> {
    templates.validate()?;
    let results = templates
        .templates
        .iter()
        .enumerate()
        .map(|(i, t)| brute_force_indexed(graph, t, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(pick(results))
}

fn brute_force_indexed(
    graph: &VesselGraph,
    template: &TemplateGraph,
    index: usize,
) -> Result<MatchResult> {
    graph.validate()?;
    template.validate()?;
    let n = graph.nodes.len();
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::GraphTooLarge(n, BRUTE_FORCE_LIMIT));
    }
    let problem = Problem::new(graph, template);
    let mut map = vec![None; n];
    let mut used = vec![false; template.nodes.len()];
    let mut best: Option<(CostBreakdown, Vec<Option<usize>>)> = None;
    enumerate(&problem, 0, &mut map, &mut used, &mut best);
    let (_, map) = best.expect("the empty correspondence is always feasible");
    Ok(problem.result(index, map))
}

fn enumerate(
    problem: &Problem,
    g: usize,
    map: &mut Vec<Option<usize>>,
    used: &mut Vec<bool>,
    best: &mut Option<(CostBreakdown, Vec<Option<usize>>)>,
) {
    if g == map.len() {
        let (cost, _) = problem.evaluate(map);
        if best
            .as_ref()
            .is_none_or(|(bc, bm)| better(&cost, map, bc, bm))
        {
            *best = Some((cost, map.clone()));
        }
        return;
    }
    map[g] = None;
    enumerate(problem, g + 1, map, used, best);
    for &(t, _) in &problem.options[g] {
        if used[t] {
            continue;
        }
        used[t] = true;
        map[g] = Some(t);
        enumerate(problem, g + 1, map, used, best);
        used[t] = false;
    }
    map[g] = None;
}

/// Graph whose nodes and edges carry the template's nominal attributes,
/// node `i` standing for template node `i`.
pub fn instantiate(template: &TemplateGraph) -> VesselGraph {
    use crate::graph::{VesselEdge, VesselNode};
    let nodes = template
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| VesselNode {
            id: i,
            kind: n.kind,
            position: [i as f64, 0.0, 0.0],
            radius: 1.0,
            chamber: n.chamber,
        })
        .collect();
    let edges = template
        .edges
        .iter()
        .enumerate()
        .map(|(i, e)| VesselEdge {
            id: i,
            source: e.source,
            target: e.target,
            length: e.length,
            radius: e.radius,
            direction: [1.0, 0.0, 0.0],
            path: Vec::new(),
        })
        .collect();
    VesselGraph {
        grid: None,
        nodes,
        edges,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{VesselEdge, VesselNode};

    fn node(id: usize, kind: NodeKind, chamber: Option<Label>) -> VesselNode {
        VesselNode {
            id,
            kind,
            position: [0.0; 3],
            radius: 1.0,
            chamber,
        }
    }

    fn edge(id: usize, s: usize, t: usize, length: f64, radius: f64) -> VesselEdge {
        VesselEdge {
            id,
            source: s,
            target: t,
            length,
            radius,
            direction: [1.0, 0.0, 0.0],
            path: Vec::new(),
        }
    }

    fn single_edge_template() -> TemplateGraph {
        TemplateGraph {
            variant: "one".into(),
            nodes: vec![
                TemplateNode {
                    kind: NodeKind::ChamberPort,
                    chamber: Some(Label::LV),
                },
                TemplateNode {
                    kind: NodeKind::Endpoint,
                    chamber: None,
                },
            ],
            edges: vec![TemplateEdge {
                source: 0,
                target: 1,
                class: EdgeClass::Ao,
                length: 100.0,
                length_tol: 10.0,
                radius: 5.0,
                radius_tol: 1.0,
                optional: false,
            }],
            weights: Weights::default(),
        }
    }

    #[test]
    fn builtin_set_has_four_variants() {
        let set = TemplateSet::builtin();
        assert_eq!(set.names(), ["Normal", "TGA", "CAT", "PuA"]);
    }

    #[test]
    fn schema_errors() {
        let good = TemplateSet::builtin().to_json();
        let myo = good.replacen("\"class\": \"PA\"", "\"class\": \"Myo\"", 1);
        assert!(matches!(
            TemplateSet::from_json(&myo),
            Err(Error::Schema(_))
        ));
        assert!(matches!(
            TemplateSet::from_json(r#"{"templates": []}"#),
            Err(Error::Schema(_))
        ));
        let unclassified = good.replacen("\"class\": \"PA\"", "\"class\": \"Unclassified\"", 1);
        assert!(TemplateSet::from_json(&unclassified).is_err());
        let mut t = single_edge_template();
        t.nodes[0] = TemplateNode {
            kind: NodeKind::Endpoint,
            chamber: None,
        };
        assert!(t.validate().is_err(), "a template needs a port");
    }

    #[test]
    fn self_match_costs_nothing() {
        for t in TemplateSet::builtin().templates {
            let g = instantiate(&t);
            let identity = Correspondence {
                nodes: (0..t.nodes.len()).map(Some).collect(),
            };
            let c = match_cost(&identity, &g, &t).unwrap();
            assert_eq!(c.total, 0.0, "{}", t.variant);
            assert_eq!(c.missing_edges, 0);
        }
    }

    #[test]
    fn empty_correspondence_cost_formula() {
        let set = TemplateSet::builtin();
        let g = instantiate(&set.templates[2]);
        for t in &set.templates {
            let c = match_cost(&Correspondence::empty(g.nodes.len()), &g, t).unwrap();
            let w = t.weights;
            assert_eq!(
                c.total,
                w.missing * t.mandatory_edges() as f64 + w.extra * g.edges.len() as f64
            );
        }
    }

    #[test]
    fn infeasible_correspondences_are_errors() {
        let t = single_edge_template();
        let g = VesselGraph {
            grid: None,
            nodes: vec![
                node(0, NodeKind::ChamberPort, Some(Label::RV)),
                node(1, NodeKind::Endpoint, None),
            ],
            edges: vec![edge(0, 0, 1, 100.0, 5.0)],
        };
        let c = |v: Vec<Option<usize>>| match_cost(&Correspondence { nodes: v }, &g, &t);
        assert!(c(vec![Some(0), None]).is_err(), "RV port onto LV port");
        assert!(
            c(vec![None, Some(0)]).is_ok(),
            "non-port onto port is allowed at a price"
        );
        assert!(c(vec![Some(1), Some(1)]).is_err());
        assert!(c(vec![None]).is_err());
    }

    #[test]
    fn single_edge_graph_finds_the_one_match() {
        let t = single_edge_template();
        let g = VesselGraph {
            grid: None,
            nodes: vec![
                node(0, NodeKind::ChamberPort, Some(Label::LV)),
                node(1, NodeKind::Endpoint, None),
            ],
            edges: vec![edge(0, 0, 1, 105.0, 5.5)],
        };
        let r = brute_force_match(&g, &t).unwrap();
        assert_eq!(r.correspondence.nodes, [Some(0), Some(1)]);
        assert_eq!(r.classes, [EdgeClass::Ao]);
        assert_eq!(r.cost.total, 0.0);
    }

    #[test]
    fn foreign_port_is_only_rejected() {
        let t = single_edge_template();
        let g = VesselGraph {
            grid: None,
            nodes: vec![
                node(0, NodeKind::ChamberPort, Some(Label::RA)),
                node(1, NodeKind::Endpoint, None),
            ],
            edges: vec![edge(0, 0, 1, 100.0, 5.0)],
        };
        let r = brute_force_match(&g, &t).unwrap();
        assert_eq!(r.correspondence.nodes[0], None);
        assert_eq!(r.classes, [EdgeClass::Unclassified]);
        assert_eq!(r.cost.total, t.weights.missing + t.weights.extra);
    }

    #[test]
    fn parallel_edges_keep_the_cheaper() {
        let t = single_edge_template();
        let g = VesselGraph {
            grid: None,
            nodes: vec![
                node(0, NodeKind::ChamberPort, Some(Label::LV)),
                node(1, NodeKind::Endpoint, None),
            ],
            edges: vec![edge(0, 0, 1, 160.0, 5.0), edge(1, 0, 1, 100.0, 5.0)],
        };
        let r = match_graph(&g, &TemplateSet { templates: vec![t] }).unwrap();
        assert_eq!(r.edge_map, [None, Some(0)]);
        assert_eq!(r.cost.rejected_edges, 1);
    }

    #[test]
    fn nominal_graphs_pick_their_own_template() {
        let set = TemplateSet::builtin();
        for (i, t) in set.templates.iter().enumerate() {
            let r = match_graph(&instantiate(t), &set).unwrap();
            assert_eq!(r.template, i);
            assert_eq!(r.cost.total, 0.0);
            let bf = brute_force_match_set(&instantiate(t), &set).unwrap();
            assert_eq!(bf, r);
        }
    }

    #[test]
    fn brute_force_guard() {
        let t = single_edge_template();
        let nodes = (0..13).map(|i| node(i, NodeKind::Endpoint, None)).collect();
        let g = VesselGraph {
            grid: None,
            nodes,
            edges: Vec::new(),
        };
        assert!(matches!(
            brute_force_match(&g, &t),
            Err(Error::GraphTooLarge(13, 12))
        ));
        assert!(matches!(
            match_graph(&VesselGraph::default(), &TemplateSet::builtin()),
            Err(Error::EmptyGraph)
        ));
    }

    #[test]
    fn deviation_clamps() {
        assert_eq!(deviation(100.0, 100.0, 0.0), 0.0);
        assert_eq!(deviation(105.0, 100.0, 10.0), 0.0);
        assert_eq!(deviation(130.0, 100.0, 10.0), 0.2);
        assert_eq!(deviation(1000.0, 100.0, 10.0), 1.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        const CHAMBERS: [Label; 4] = [Label::LV, Label::RV, Label::LA, Label::RA];

        prop_compose! {
            fn small_graph()(n in 1usize..=8)
                (kinds in proptest::collection::vec(0usize..7, n),
                 pairs in proptest::collection::vec((0..n, 0..n, 10.0f64..160.0, 2.0f64..7.0), 0..=n + 2))
                -> VesselGraph {
                let nodes = kinds.iter().enumerate().map(|(i, &k)| match k {
                    0..=3 => node(i, NodeKind::ChamberPort, Some(CHAMBERS[k])),
                    4 | 5 => node(i, NodeKind::Endpoint, None),
                    _ => node(i, NodeKind::Junction, None),
                }).collect();
                let edges = pairs.iter().enumerate()
                    .map(|(i, &(s, t, l, r))| edge(i, s, t, l.round(), r.round()))
                    .collect();
                VesselGraph { grid: None, nodes, edges }
            }
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn branch_and_bound_equals_brute_force(g in small_graph()) {
                let set = TemplateSet::builtin();
                let fast = match_graph(&g, &set).unwrap();
                let slow = brute_force_match_set(&g, &set).unwrap();
                prop_assert_eq!(&fast, &slow);
                let again = match_cost(&fast.correspondence, &g, &set.templates[fast.template]).unwrap();
                prop_assert_eq!(again, fast.cost);
            }

            #[test]
            fn unmatchable_edge_never_lowers_cost(g in small_graph(), s in 0usize..8) {
                let set = TemplateSet::builtin();
                let before = match_graph(&g, &set).unwrap().cost.total;
                let mut h = g.clone();
                let n = h.nodes.len();
                // templates carry no self-loops, so this edge can never match
                h.edges.push(edge(h.edges.len(), s % n, s % n, 50.0, 4.0));
                let after = match_graph(&h, &set).unwrap().cost.total;
                prop_assert!(after >= before - 1e-9);
            }
        }
    }
}
