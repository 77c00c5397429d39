//! Multigraph representation of the city: mode-tagged arcs over a shared
//! vertex set, layer extraction, shortest paths with deterministic
//! tie-breaking, incidence matrices and the fully-connected closure used
//! for operator price surfaces.

use std::collections::BinaryHeap;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense vertex identifier, `0..|V|-1` after ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VertexId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Walk,
    Road,
    Transit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arc {
    pub id: usize,
    pub source: VertexId,
    pub target: VertexId,
    pub mode: Mode,
    /// Travel time in hours.
    pub travel_time: f64,
    /// Length in kilometers.
    pub length: f64,
    /// Transit-line label, used to look up boarding waits.
    pub line_tag: Option<String>,
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("arc {arc} references missing vertex {vertex}")]
    DanglingArc { arc: usize, vertex: usize },
    #[error("walk layer is not strongly connected")]
    WalkLayerDisconnected,
    #[error("arc {arc} has non-positive travel time {time}")]
    NonPositiveTravelTime { arc: usize, time: f64 },
    #[error("arc {arc} is a self-loop at vertex {vertex}")]
    SelfLoop { arc: usize, vertex: usize },
    #[error("walk arc {arc} has non-positive length")]
    ZeroLengthWalkArc { arc: usize },
    #[error("duplicate arc id {arc}")]
    DuplicateArcId { arc: usize },
    #[error("vertex ids are not dense 0..n-1")]
    NonDenseVertices,
    #[error("layer {0:?} has no arcs")]
    EmptyLayer(Mode),
    #[error("no path from {from:?} to {to:?}")]
    Unreachable { from: VertexId, to: VertexId },
    #[error("congestion factor {0} is below one")]
    FactorBelowOne(f64),
    #[error("negative arc weight on arc {0}")]
    NegativeWeight(usize),
}

/// How much structure [`MultiGraph::build`] verifies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidationMode {
    /// All invariants, including walk-layer strong connectivity.
    Strict,
    /// Skip the walk-layer connectivity check (partial fixtures, tests).
    SkipConnectivity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiGraph {
    vertices: Vec<VertexId>,
    arcs: Vec<Arc>,
}

impl MultiGraph {
    pub fn build(
        vertices: Vec<VertexId>,
        arcs: Vec<Arc>,
        validation: ValidationMode,
    ) -> Result<Self, GraphError> {
        let n = vertices.len();
        let mut seen = vec![false; n];
        for v in &vertices {
            if v.0 >= n || seen[v.0] {
                return Err(GraphError::NonDenseVertices);
            }
            seen[v.0] = true;
        }
        let mut ids = std::collections::HashSet::new();
        for a in &arcs {
            if !ids.insert(a.id) {
                return Err(GraphError::DuplicateArcId { arc: a.id });
            }
            for end in [a.source, a.target] {
                if end.0 >= n {
                    return Err(GraphError::DanglingArc { arc: a.id, vertex: end.0 });
                }
            }
            if a.source == a.target {
                return Err(GraphError::SelfLoop { arc: a.id, vertex: a.source.0 });
            }
            if a.travel_time <= 0.0 {
                return Err(GraphError::NonPositiveTravelTime { arc: a.id, time: a.travel_time });
            }
            if a.mode == Mode::Walk && a.length <= 0.0 {
                return Err(GraphError::ZeroLengthWalkArc { arc: a.id });
            }
        }
        let graph = MultiGraph { vertices, arcs };
        if validation == ValidationMode::Strict {
            let walk = graph.layer_arcs(Mode::Walk);
            if walk.is_empty() {
                return Err(GraphError::EmptyLayer(Mode::Walk));
            }
            if !graph.layer_strongly_connected(Mode::Walk) {
                return Err(GraphError::WalkLayerDisconnected);
            }
        }
        Ok(graph)
    }

    pub fn vertices(&self) -> &[VertexId] {
        &self.vertices
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    pub fn arc(&self, id: usize) -> &Arc {
        self.arcs.iter().find(|a| a.id == id).expect("arc id")
    }

    pub fn layer_arcs(&self, mode: Mode) -> Vec<&Arc> {
        self.arcs.iter().filter(|a| a.mode == mode).collect()
    }

    /// Vertices incident to at least one arc of the given mode, sorted.
    pub fn layer_vertices(&self, mode: Mode) -> Vec<VertexId> {
        let mut vs: Vec<VertexId> = self
            .arcs
            .iter()
            .filter(|a| a.mode == mode)
            .flat_map(|a| [a.source, a.target])
            .collect();
        vs.sort();
        vs.dedup();
        vs
    }

    fn layer_strongly_connected(&self, mode: Mode) -> bool {
        let verts = self.layer_vertices(mode);
        if verts.is_empty() {
            return false;
        }
        let fwd = |v: VertexId| -> Vec<VertexId> {
            self.arcs
                .iter()
                .filter(|a| a.mode == mode && a.source == v)
                .map(|a| a.target)
                .collect()
        };
        let bwd = |v: VertexId| -> Vec<VertexId> {
            self.arcs
                .iter()
                .filter(|a| a.mode == mode && a.target == v)
                .map(|a| a.source)
                .collect()
        };
        reaches_all(verts[0], &verts, fwd) && reaches_all(verts[0], &verts, bwd)
    }

    /// Scales every road arc's travel time by `factor`; other modes untouched.
    pub fn apply_congestion(&self, factor: f64) -> Result<MultiGraph, GraphError> {
        if factor < 1.0 {
            return Err(GraphError::FactorBelowOne(factor));
        }
        let mut out = self.clone();
        for a in &mut out.arcs {
            if a.mode == Mode::Road {
                a.travel_time *= factor;
            }
        }
        Ok(out)
    }
}

fn reaches_all<F>(start: VertexId, targets: &[VertexId], neighbours: F) -> bool
where
    F: Fn(VertexId) -> Vec<VertexId>,
{
    let mut seen = std::collections::HashSet::new();
    let mut stack = vec![start];
    seen.insert(start);
    while let Some(v) = stack.pop() {
        for w in neighbours(v) {
            if seen.insert(w) {
                stack.push(w);
            }
        }
    }
    targets.iter().all(|t| seen.contains(t))
}

/// Vertex/arc incidence of one mode layer: each column carries `-1` at the
/// arc's source row and `+1` at its target row.
#[derive(Debug, Clone)]
pub struct IncidenceMatrix {
    pub rows: Vec<VertexId>,
    pub cols: Vec<usize>,
    /// `entries[r][c]` in `{-1, 0, +1}`.
    pub entries: Vec<Vec<i8>>,
}

impl IncidenceMatrix {
    pub fn of_layer(graph: &MultiGraph, mode: Mode) -> Result<Self, GraphError> {
        let arcs = graph.layer_arcs(mode);
        if arcs.is_empty() {
            return Err(GraphError::EmptyLayer(mode));
        }
        let rows = graph.layer_vertices(mode);
        let row_of: HashMap<VertexId, usize> =
            rows.iter().enumerate().map(|(i, v)| (*v, i)).collect();
        let cols: Vec<usize> = arcs.iter().map(|a| a.id).collect();
        let mut entries = vec![vec![0i8; cols.len()]; rows.len()];
        for (c, a) in arcs.iter().enumerate() {
            entries[row_of[&a.source]][c] = -1;
            entries[row_of[&a.target]][c] = 1;
        }
        Ok(IncidenceMatrix { rows, cols, entries })
    }

    /// Net inflow per row vertex for a per-column flow vector.
    pub fn balance(&self, flow: &[f64]) -> Vec<f64> {
        assert_eq!(flow.len(), self.cols.len());
        self.entries
            .iter()
            .map(|row| row.iter().zip(flow).map(|(e, f)| f64::from(*e) * f).sum())
            .collect()
    }
}

/// All ordered pairs `(v_i, v_j)`, `i != j`, over a layer's vertex set; the
/// domain of an operator's pricing strategy.
pub fn fully_connected_pairs(
    graph: &MultiGraph,
    mode: Mode,
) -> Result<Vec<(VertexId, VertexId)>, GraphError> {
    let verts = graph.layer_vertices(mode);
    if verts.is_empty() {
        return Err(GraphError::EmptyLayer(mode));
    }
    let mut pairs = Vec::with_capacity(verts.len() * (verts.len() - 1));
    for &a in &verts {
        for &b in &verts {
            if a != b {
                pairs.push((a, b));
            }
        }
    }
    Ok(pairs)
}

/// A simple path with its accumulated weight.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedPath {
    pub arcs: Vec<usize>,
    pub total_weight: f64,
    pub origin: VertexId,
    pub destination: VertexId,
}

/// A lightweight arc view for routing over virtual graphs (e.g. the transit
/// closure) without materializing a [`MultiGraph`].
#[derive(Debug, Clone, Copy)]
pub struct RoutingArc {
    pub id: usize,
    pub source: VertexId,
    pub target: VertexId,
    pub weight: f64,
}

#[derive(PartialEq)]
struct HeapEntry {
    dist: f64,
    vertex: usize,
}
impl Eq for HeapEntry {}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // min-heap on (dist, vertex)
        other
            .dist
            .partial_cmp(&self.dist)
            .unwrap()
            .then(other.vertex.cmp(&self.vertex))
    }
}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra over an explicit arc list. Among all minimum-weight simple paths
/// the one with the lexicographically smallest arc-id sequence is returned.
pub fn shortest_path_over(
    num_vertices: usize,
    arcs: &[RoutingArc],
    origin: VertexId,
    destination: VertexId,
) -> Result<WeightedPath, GraphError> {
    assert_ne!(origin, destination, "origin and destination must differ");
    for a in arcs {
        if a.weight < 0.0 || !a.weight.is_finite() {
            return Err(GraphError::NegativeWeight(a.id));
        }
    }
    // Backward pass: distance from every vertex to the destination.
    let mut incoming: Vec<Vec<&RoutingArc>> = vec![Vec::new(); num_vertices];
    for a in arcs {
        incoming[a.target.0].push(a);
    }
    let mut dist = vec![f64::INFINITY; num_vertices];
    dist[destination.0] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(HeapEntry { dist: 0.0, vertex: destination.0 });
    let mut done = vec![false; num_vertices];
    while let Some(HeapEntry { dist: d, vertex: v }) = heap.pop() {
        if done[v] {
            continue;
        }
        done[v] = true;
        for a in &incoming[v] {
            let nd = d + a.weight;
            if nd < dist[a.source.0] {
                dist[a.source.0] = nd;
                heap.push(HeapEntry { dist: nd, vertex: a.source.0 });
            }
        }
    }
    if !dist[origin.0].is_finite() {
        return Err(GraphError::Unreachable { from: origin, to: destination });
    }
    // Forward reconstruction: greedily take the smallest arc id that still
    // admits an optimal simple completion, backtracking past zero-weight
    // cycles if needed.
    let mut outgoing: Vec<Vec<&RoutingArc>> = vec![Vec::new(); num_vertices];
    for a in arcs {
        outgoing[a.source.0].push(a);
    }
    for out in &mut outgoing {
        out.sort_by_key(|a| a.id);
    }
    let mut visited = vec![false; num_vertices];
    let mut path = Vec::new();
    let total = dist[origin.0];
    let eps = 1e-12 * (1.0 + total.abs());
    if !reconstruct(origin.0, destination.0, &outgoing, &dist, &mut visited, &mut path, eps) {
        return Err(GraphError::Unreachable { from: origin, to: destination });
    }
    Ok(WeightedPath { arcs: path, total_weight: total, origin, destination })
}

fn reconstruct(
    v: usize,
    dest: usize,
    outgoing: &[Vec<&RoutingArc>],
    dist: &[f64],
    visited: &mut Vec<bool>,
    path: &mut Vec<usize>,
    eps: f64,
) -> bool {
    if v == dest {
        return true;
    }
    visited[v] = true;
    for a in &outgoing[v] {
        let t = a.target.0;
        if visited[t] {
            continue;
        }
        if (a.weight + dist[t] - dist[v]).abs() <= eps {
            path.push(a.id);
            if reconstruct(t, dest, outgoing, dist, visited, path, eps) {
                return true;
            }
            path.pop();
        }
    }
    visited[v] = false;
    false
}

/// Shortest path on a [`MultiGraph`] under explicit per-arc weights.
pub fn shortest_path(
    graph: &MultiGraph,
    weights: &HashMap<usize, f64>,
    origin: VertexId,
    destination: VertexId,
) -> Result<WeightedPath, GraphError> {
    let arcs: Vec<RoutingArc> = graph
        .arcs()
        .iter()
        .filter_map(|a| {
            weights.get(&a.id).map(|w| RoutingArc {
                id: a.id,
                source: a.source,
                target: a.target,
                weight: *w,
            })
        })
        .collect();
    shortest_path_over(graph.vertices().len(), &arcs, origin, destination)
}
