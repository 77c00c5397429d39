//! Per-demand precomputation: AMoD door-to-door time, the transit route with
//! its time and fares, the shortest road service path, and the per-operator
//! service cost.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{
    shortest_path_over, GraphError, Mode, MultiGraph, RoutingArc, VertexId, WeightedPath,
};

/// An aggregated customer flow between two walk-layer vertices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Demand {
    pub origin: VertexId,
    pub destination: VertexId,
    /// Customers per second.
    pub rate: f64,
}

/// Waiting and access times attached to trips, all in hours.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceTiming {
    /// Pickup wait before an AMoD ride.
    pub amod_wait: f64,
    /// Half-headway boarding wait per transit line class.
    pub transit_headway_wait: HashMap<String, f64>,
    /// Wait applied to transit arcs whose line tag has no dedicated entry.
    pub default_transit_wait: f64,
    /// Walk-to-station plus station-to-walk time per boarding.
    pub transit_access: f64,
    /// Km/h, carried for reporting.
    pub walk_speed: f64,
}

impl ServiceTiming {
    fn wait_for(&self, line_tag: Option<&str>) -> f64 {
        line_tag
            .and_then(|t| self.transit_headway_wait.get(t).copied())
            .unwrap_or(self.default_transit_wait)
            + self.transit_access
    }
}

#[derive(Debug, Error)]
pub enum ContextError {
    #[error("demand {origin:?}->{destination:?} has AMoD and transit time both equal to {time} h")]
    DegenerateTiming { origin: VertexId, destination: VertexId, time: f64 },
    #[error("no road route from {from:?} to {to:?}")]
    RoadUnreachable { from: VertexId, to: VertexId },
    #[error("demand {origin:?}->{destination:?} has non-positive rate {rate}")]
    NonPositiveRate { origin: VertexId, destination: VertexId, rate: f64 },
    #[error("demand endpoints {origin:?}->{destination:?} are not on the walk layer")]
    OffWalkLayer { origin: VertexId, destination: VertexId },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Everything the reaction curves and best-response programs need to know
/// about one demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandContext {
    pub demand: Demand,
    /// AMoD door-to-door time (net road time plus pickup wait), hours.
    pub t_road: f64,
    /// Total time of the chosen transit/walk route, hours.
    pub t_transit: f64,
    /// Sum of transit fares along the chosen route, USD.
    pub fare_transit: f64,
    /// Road arcs of the unit service path, one unit of flow per served customer.
    pub road_flow: Vec<usize>,
    /// Service cost per served customer and operator, USD (indexed like the
    /// scenario's operator list).
    pub service_cost: Vec<f64>,
    pub transit_path_has_transit_arc: bool,
}

impl DemandContext {
    /// Transit time minus road time; sign selects the reaction-curve branch.
    pub fn delta_t(&self) -> f64 {
        self.t_transit - self.t_road
    }
}

/// The chosen transit route and its aggregates.
#[derive(Debug, Clone)]
pub struct TransitRoute {
    pub path: WeightedPath,
    pub total_time: f64,
    pub total_fare: f64,
    pub boardings: usize,
}

struct ClosureArc {
    time: f64,
    wait: f64,
}

/// Routing graph for customers without an AMoD ride: the walk layer plus a
/// fully-connected closure of the transit layer. Each closure arc stands for
/// one boarding: one fare, one headway wait, and the in-vehicle time of the
/// best transit-only connection between its endpoints.
pub struct TransitRoutingGraph {
    arcs: Vec<RoutingArc>,
    closure: HashMap<usize, ClosureArc>,
    num_vertices: usize,
    fare_per_ride: f64,
    vot_reference: f64,
}

impl TransitRoutingGraph {
    pub fn build(
        graph: &MultiGraph,
        fare_per_ride: f64,
        vot_reference: f64,
        timing: &ServiceTiming,
    ) -> Self {
        let num_vertices = graph.vertices().len();
        let mut arcs = Vec::new();
        let mut closure = HashMap::new();
        for a in graph.layer_arcs(Mode::Walk) {
            arcs.push(RoutingArc {
                id: a.id,
                source: a.source,
                target: a.target,
                weight: vot_reference * a.travel_time,
            });
        }
        let transit_arcs: Vec<RoutingArc> = graph
            .layer_arcs(Mode::Transit)
            .iter()
            .map(|a| RoutingArc {
                id: a.id,
                source: a.source,
                target: a.target,
                weight: a.travel_time,
            })
            .collect();
        let transit_vertices = graph.layer_vertices(Mode::Transit);
        let mut next_id = graph.arcs().iter().map(|a| a.id + 1).max().unwrap_or(0);
        for &u in &transit_vertices {
            for &v in &transit_vertices {
                if u == v {
                    continue;
                }
                let Ok(path) = shortest_path_over(num_vertices, &transit_arcs, u, v) else {
                    continue;
                };
                let first = path.arcs.first().map(|id| graph.arc(*id));
                let wait = timing.wait_for(first.and_then(|a| a.line_tag.as_deref()));
                let time = path.total_weight;
                arcs.push(RoutingArc {
                    id: next_id,
                    source: u,
                    target: v,
                    weight: fare_per_ride + vot_reference * (time + wait),
                });
                closure.insert(next_id, ClosureArc { time, wait });
                next_id += 1;
            }
        }
        TransitRoutingGraph { arcs, closure, num_vertices, fare_per_ride, vot_reference }
    }

    pub fn route(&self, origin: VertexId, destination: VertexId) -> Result<TransitRoute, GraphError> {
        let path = shortest_path_over(self.num_vertices, &self.arcs, origin, destination)?;
        let mut total_time = 0.0;
        let mut boardings = 0;
        for id in &path.arcs {
            match self.closure.get(id) {
                Some(c) => {
                    total_time += c.time + c.wait;
                    boardings += 1;
                }
                None => {
                    // walk arc: weight is vot * time
                    let arc = self.arcs.iter().find(|a| a.id == *id).unwrap();
                    total_time += arc.weight / self.vot_reference;
                }
            }
        }
        Ok(TransitRoute {
            path,
            total_time,
            total_fare: self.fare_per_ride * boardings as f64,
            boardings,
        })
    }
}

/// Shortest walk/transit route for one demand.
pub fn transit_route(
    graph: &MultiGraph,
    demand: &Demand,
    fare_per_ride: f64,
    vot_reference: f64,
    timing: &ServiceTiming,
) -> Result<TransitRoute, GraphError> {
    TransitRoutingGraph::build(graph, fare_per_ride, vot_reference, timing)
        .route(demand.origin, demand.destination)
}

/// The shortest road service path for one demand, costed at `cost_per_km`.
pub fn road_route(
    graph: &MultiGraph,
    demand: &Demand,
    cost_per_km: f64,
    timing: &ServiceTiming,
) -> Result<(Vec<usize>, f64, f64), ContextError> {
    let arcs: Vec<RoutingArc> = graph
        .layer_arcs(Mode::Road)
        .iter()
        .map(|a| RoutingArc {
            id: a.id,
            source: a.source,
            target: a.target,
            weight: cost_per_km * a.length,
        })
        .collect();
    let path = shortest_path_over(graph.vertices().len(), &arcs, demand.origin, demand.destination)
        .map_err(|e| match e {
            GraphError::Unreachable { from, to } => ContextError::RoadUnreachable { from, to },
            other => ContextError::Graph(other),
        })?;
    let drive_time: f64 = path.arcs.iter().map(|id| graph.arc(*id).travel_time).sum();
    Ok((path.arcs, path.total_weight, drive_time + timing.amod_wait))
}

/// Scenario-level constants needed to build contexts, already in canonical
/// internal units.
#[derive(Debug, Clone)]
pub struct ContextParams {
    pub fare_per_ride: f64,
    pub vot_reference: f64,
    pub cost_per_km: Vec<f64>,
    pub timing: ServiceTiming,
}

pub fn build_contexts(
    graph: &MultiGraph,
    demands: &[Demand],
    params: &ContextParams,
) -> Result<Vec<DemandContext>, ContextError> {
    let walk_vertices = graph.layer_vertices(Mode::Walk);
    let routing = TransitRoutingGraph::build(
        graph,
        params.fare_per_ride,
        params.vot_reference,
        &params.timing,
    );
    let mut contexts = Vec::with_capacity(demands.len());
    for d in demands {
        if d.rate <= 0.0 {
            return Err(ContextError::NonPositiveRate {
                origin: d.origin,
                destination: d.destination,
                rate: d.rate,
            });
        }
        if !walk_vertices.contains(&d.origin) || !walk_vertices.contains(&d.destination) {
            return Err(ContextError::OffWalkLayer {
                origin: d.origin,
                destination: d.destination,
            });
        }
        let transit = routing.route(d.origin, d.destination)?;
        // The service path is cost-per-distance shortest, hence identical for
        // all operators; only the cost scales.
        let reference_cost = params.cost_per_km[0].max(1e-12);
        let (road_flow, _, t_road) = road_route(graph, d, reference_cost, &params.timing)?;
        let path_length: f64 = road_flow.iter().map(|id| graph.arc(*id).length).sum();
        let service_cost: Vec<f64> =
            params.cost_per_km.iter().map(|c| c * path_length).collect();
        if t_road == transit.total_time {
            return Err(ContextError::DegenerateTiming {
                origin: d.origin,
                destination: d.destination,
                time: t_road,
            });
        }
        contexts.push(DemandContext {
            demand: *d,
            t_road,
            t_transit: transit.total_time,
            fare_transit: transit.total_fare,
            road_flow,
            service_cost,
            transit_path_has_transit_arc: transit.boardings > 0,
        });
    }
    Ok(contexts)
}
