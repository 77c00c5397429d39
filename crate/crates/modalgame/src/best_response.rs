//! One operator's profit-maximizing best response: a concave conic program
//! over served rates, revenue epigraphs, and rebalancing flows, plus price
//! recovery and a standalone profit evaluator for fixed prices.

use std::collections::BTreeMap;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::DemandContext;
use crate::graph::{fully_connected_pairs, Mode, MultiGraph, VertexId};
use crate::reaction::{
    affine_reaction, evaluate_reaction, invert_reaction, price_bounds, reaction_pieces,
    AdversaryPrice, AffineReaction, Piece, PreferenceNoise, ReactionError,
    ValueOfTimeDistribution,
};
use crate::solver::{Cone, ConicBackend, ConicProgram, SolverError};

/// Seconds per hour: rates are customers/second, times are hours, fleet
/// sizes are vehicle counts.
pub const RATE_TIME_TO_VEHICLES: f64 = 3600.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorConfig {
    pub fleet_size: f64,
    pub cost_per_km: f64,
}

/// Nonnegative price per ordered origin-destination pair of the road layer.
/// Serializes as a list of [origin, destination, price] triples.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PricingStrategy(pub BTreeMap<(usize, usize), f64>);

impl Serialize for PricingStrategy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.0.iter().map(|((o, d), p)| (*o, *d, *p)))
    }
}

impl<'de> Deserialize<'de> for PricingStrategy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let triples = Vec::<(usize, usize, f64)>::deserialize(d)?;
        Ok(PricingStrategy(triples.into_iter().map(|(o, d, p)| ((o, d), p)).collect()))
    }
}

impl PricingStrategy {
    pub fn get(&self, origin: VertexId, destination: VertexId) -> Option<f64> {
        self.0.get(&(origin.0, destination.0)).copied()
    }

    pub fn set(&mut self, origin: VertexId, destination: VertexId, price: f64) {
        self.0.insert((origin.0, destination.0), price);
    }
}

/// The rival's stance as seen by one best response.
#[derive(Debug, Clone, Copy)]
pub enum Adversary<'a> {
    Monopoly,
    Prices(&'a PricingStrategy),
}

impl Adversary<'_> {
    pub fn price_for(&self, ctx: &DemandContext) -> AdversaryPrice {
        match self {
            Adversary::Monopoly => AdversaryPrice::Monopoly,
            Adversary::Prices(ps) => ps
                .get(ctx.demand.origin, ctx.demand.destination)
                .map(AdversaryPrice::Price)
                .unwrap_or(AdversaryPrice::Monopoly),
        }
    }
}

#[derive(Debug, Error)]
pub enum BestResponseError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Reaction(#[from] ReactionError),
    #[error("rebalancing flow cannot be completed: vertex {0:?} has surplus with no road route to any deficit vertex")]
    RebalancingDisconnected(VertexId),
    #[error("fleet of {fleet} vehicles cannot cover the service flow alone ({needed:.3} vehicles)")]
    FleetExceeded { fleet: f64, needed: f64 },
}

/// The assembled conic program together with the variable layout needed to
/// read the solution back.
pub struct BestResponseProgram {
    pub program: ConicProgram,
    pub num_demands: usize,
    /// Road arc ids in f0 column order.
    pub road_arc_ids: Vec<usize>,
    pub pieces: Vec<Vec<Piece>>,
    pub bases: Vec<AffineReaction>,
}

impl BestResponseProgram {
    pub fn x_col(&self, i: usize) -> usize {
        i
    }
    pub fn r_col(&self, i: usize) -> usize {
        self.num_demands + i
    }
    pub fn f0_col(&self, a: usize) -> usize {
        2 * self.num_demands + a
    }
}

pub fn build_program(
    graph: &MultiGraph,
    contexts: &[DemandContext],
    op_index: usize,
    operator: &OperatorConfig,
    adversary: Adversary,
    vot: &ValueOfTimeDistribution,
    noise: &PreferenceNoise,
    tax: f64,
) -> Result<BestResponseProgram, BestResponseError> {
    let road_arcs = graph.layer_arcs(Mode::Road);
    let road_arc_ids: Vec<usize> = road_arcs.iter().map(|a| a.id).collect();
    let n = contexts.len();
    let num_vars = 2 * n + road_arc_ids.len();
    let mut prog = ConicProgram::new(num_vars);

    let mut bases = Vec::with_capacity(n);
    let mut pieces = Vec::with_capacity(n);
    for ctx in contexts {
        let base = affine_reaction(ctx, vot, noise)?;
        pieces.push(reaction_pieces(&base, adversary.price_for(ctx)));
        bases.push(base);
    }

    // objective: minimize service + rebalancing costs minus after-tax revenue
    for (i, ctx) in contexts.iter().enumerate() {
        prog.c[i] = ctx.service_cost[op_index];
        prog.c[n + i] = -(1.0 - tax);
    }
    for (k, arc_id) in road_arc_ids.iter().enumerate() {
        let a = graph.arc(*arc_id);
        prog.c[2 * n + k] = operator.cost_per_km * a.length;
    }

    // vehicle balance at every road-layer vertex
    let road_vertices = graph.layer_vertices(Mode::Road);
    if !road_vertices.is_empty() {
        let first = prog.add_rows(Cone::Zero(road_vertices.len()), road_vertices.len());
        let row_of: HashMap<usize, usize> = road_vertices
            .iter()
            .enumerate()
            .map(|(r, v)| (v.0, first + r))
            .collect();
        let add_arc = |prog: &mut ConicProgram, arc_id: usize, col: usize| {
            let a = graph.arc(arc_id);
            prog.a.push(row_of[&a.target.0], col, 1.0);
            prog.a.push(row_of[&a.source.0], col, -1.0);
        };
        for (i, ctx) in contexts.iter().enumerate() {
            for arc_id in &ctx.road_flow {
                add_arc(&mut prog, *arc_id, i);
            }
        }
        for (k, arc_id) in road_arc_ids.iter().enumerate() {
            add_arc(&mut prog, *arc_id, 2 * n + k);
        }
    }

    // bounds and the fleet budget
    let nn = 3 * n + road_arc_ids.len() + 1;
    let first = prog.add_rows(Cone::Nonneg(nn), nn);
    let mut row = first;
    for (i, ctx) in contexts.iter().enumerate() {
        prog.a.push(row, i, -1.0); // x >= 0
        prog.a.push(row + 1, i, 1.0); // x <= rate
        prog.b[row + 1] = ctx.demand.rate;
        prog.a.push(row + 2, n + i, -1.0); // r >= 0
        row += 3;
    }
    for k in 0..road_arc_ids.len() {
        prog.a.push(row, 2 * n + k, -1.0); // f0 >= 0
        row += 1;
    }
    // The budget row is stated in rate-hours (fleet / RATE_TIME_TO_VEHICLES)
    // so its coefficients stay on the same scale as the other rows.
    for (i, ctx) in contexts.iter().enumerate() {
        prog.a.push(row, i, ctx.t_road);
    }
    for (k, arc_id) in road_arc_ids.iter().enumerate() {
        prog.a.push(row, 2 * n + k, graph.arc(*arc_id).travel_time);
    }
    prog.b[row] = operator.fleet_size / RATE_TIME_TO_VEHICLES;

    // revenue epigraphs: r <= x (x - q)/m per piece, as x^2 <= q x + m r
    for (i, piece_set) in pieces.iter().enumerate() {
        for p in piece_set {
            assert!(p.m < 0.0, "reaction slopes must be negative");
            let soc = prog.add_rows(Cone::SecondOrder(3), 3);
            prog.a.push(soc, i, -p.q);
            prog.a.push(soc, n + i, -p.m);
            prog.b[soc] = 1.0;
            prog.a.push(soc + 1, i, -p.q);
            prog.a.push(soc + 1, n + i, -p.m);
            prog.b[soc + 1] = -1.0;
            prog.a.push(soc + 2, i, -2.0);
        }
    }

    Ok(BestResponseProgram { program: prog, num_demands: n, road_arc_ids, pieces, bases })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BestResponseSolution {
    /// Served rate per demand, customers/s.
    pub x: Vec<f64>,
    /// Rebalancing rate per road arc id, vehicles-as-rate (1/s equivalents).
    pub f0: BTreeMap<usize, f64>,
    pub prices: PricingStrategy,
    pub revenue: f64,
    pub service_cost: f64,
    pub rebalancing_cost: f64,
    pub tax_paid: f64,
    pub profit: f64,
    pub fleet_used: f64,
    pub kkt_residual: f64,
}

pub fn solve_best_response(
    graph: &MultiGraph,
    contexts: &[DemandContext],
    op_index: usize,
    operator: &OperatorConfig,
    adversary: Adversary,
    vot: &ValueOfTimeDistribution,
    noise: &PreferenceNoise,
    tax: f64,
    backend: &dyn ConicBackend,
    tolerance: f64,
) -> Result<BestResponseSolution, BestResponseError> {
    let built = build_program(graph, contexts, op_index, operator, adversary, vot, noise, tax)?;
    if operator.fleet_size <= 0.0 || contexts.is_empty() {
        let x = vec![0.0; contexts.len()];
        let prices = recover_prices(graph, contexts, &built.pieces, &x);
        return Ok(BestResponseSolution {
            x,
            f0: BTreeMap::new(),
            prices,
            revenue: 0.0,
            service_cost: 0.0,
            rebalancing_cost: 0.0,
            tax_paid: 0.0,
            profit: 0.0,
            fleet_used: 0.0,
            kkt_residual: 0.0,
        })
    }
    let sol = backend.solve(&built.program, tolerance)?;
    let n = contexts.len();
    let x: Vec<f64> = contexts
        .iter()
        .enumerate()
        .map(|(i, ctx)| sol.x[i].clamp(0.0, ctx.demand.rate))
        .collect();
    let mut f0 = BTreeMap::new();
    for (k, arc_id) in built.road_arc_ids.iter().enumerate() {
        let v = sol.x[2 * n + k].max(0.0);
        if v > 0.0 {
            f0.insert(*arc_id, v);
        }
    }
    let prices = recover_prices(graph, contexts, &built.pieces, &x);
    Ok(assemble_solution(
        graph,
        contexts,
        op_index,
        operator,
        &x,
        &f0,
        prices,
        tax,
        sol.kkt_residual,
    ))
}

#[allow(clippy::too_many_arguments)]
fn assemble_solution(
    graph: &MultiGraph,
    contexts: &[DemandContext],
    op_index: usize,
    operator: &OperatorConfig,
    x: &[f64],
    f0: &BTreeMap<usize, f64>,
    prices: PricingStrategy,
    tax: f64,
    kkt_residual: f64,
) -> BestResponseSolution {
    let mut revenue = 0.0;
    let mut service_cost = 0.0;
    let mut fleet_used = 0.0;
    for (i, ctx) in contexts.iter().enumerate() {
        if x[i] > 0.0 {
            let p = prices
                .get(ctx.demand.origin, ctx.demand.destination)
                .unwrap_or(0.0);
            revenue += x[i] * p;
        }
        service_cost += x[i] * ctx.service_cost[op_index];
        fleet_used += RATE_TIME_TO_VEHICLES * ctx.t_road * x[i];
    }
    let mut rebalancing_cost = 0.0;
    for (arc_id, v) in f0 {
        let a = graph.arc(*arc_id);
        rebalancing_cost += operator.cost_per_km * a.length * v;
        fleet_used += RATE_TIME_TO_VEHICLES * a.travel_time * v;
    }
    let tax_paid = tax * revenue;
    let profit = (1.0 - tax) * revenue - service_cost - rebalancing_cost;
    BestResponseSolution {
        x: x.to_vec(),
        f0: f0.clone(),
        prices,
        revenue,
        service_cost,
        rebalancing_cost,
        tax_paid,
        profit,
        fleet_used,
        kkt_residual,
    }
}

/// Prices from served rates by inverting each demand's reaction curve.
/// Pairs without demand are priced at zero; fully priced-out demands land on
/// p_max through the inversion at x = 0.
pub fn recover_prices(
    graph: &MultiGraph,
    contexts: &[DemandContext],
    pieces: &[Vec<Piece>],
    x: &[f64],
) -> PricingStrategy {
    let mut prices = PricingStrategy::default();
    if let Ok(pairs) = fully_connected_pairs(graph, Mode::Road) {
        for (o, d) in pairs {
            prices.set(o, d, 0.0);
        }
    }
    for (i, ctx) in contexts.iter().enumerate() {
        let rate = ctx.demand.rate;
        let xi = x[i].clamp(0.0, rate);
        let p = invert_reaction(&pieces[i], rate, xi).unwrap().max(0.0);
        prices.set(ctx.demand.origin, ctx.demand.destination, p);
    }
    prices
}

/// Minimum-cost completion of a service flow into a circulation on the road
/// layer: successive shortest paths with potentials, uncapacitated arcs.
pub fn min_cost_rebalancing(
    graph: &MultiGraph,
    service_flow: &BTreeMap<usize, f64>,
    cost_per_km: f64,
) -> Result<BTreeMap<usize, f64>, BestResponseError> {
    let road_arcs = graph.layer_arcs(Mode::Road);
    let nv = graph.vertices().len();
    let mut divergence = vec![0.0f64; nv];
    for (arc_id, v) in service_flow {
        let a = graph.arc(*arc_id);
        divergence[a.target.0] += v;
        divergence[a.source.0] -= v;
    }

    // adjacency over road arcs; flows tracked per arc for residual edges
    let mut heads: Vec<Vec<usize>> = vec![Vec::new(); nv];
    struct Edge {
        to: usize,
        cost: f64,
        arc_id: usize,
    }
    let mut edges = Vec::new();
    for a in &road_arcs {
        heads[a.source.0].push(edges.len());
        edges.push(Edge { to: a.target.0, cost: cost_per_km * a.length, arc_id: a.id });
    }
    let mut flow: BTreeMap<usize, f64> = BTreeMap::new();
    let mut potential = vec![0.0f64; nv];

    // Imbalances below roundoff noise of the total flow are not matched; a
    // fixed absolute cutoff would chase cancellation dust on large instances.
    let scale: f64 = service_flow.values().map(|v| v.abs()).sum();
    let eps = (1e-9 * scale).max(1e-12);
    loop {
        let Some(src) = (0..nv).find(|v| divergence[*v] > eps) else {
            break;
        };
        // Dijkstra over the residual graph with reduced costs
        let mut dist = vec![f64::INFINITY; nv];
        let mut pred: Vec<Option<(usize, bool)>> = vec![None; nv]; // (edge, forward)
        dist[src] = 0.0;
        let mut heap = std::collections::BinaryHeap::new();
        heap.push(std::cmp::Reverse((ordered_float(0.0), src)));
        while let Some(std::cmp::Reverse((d, u))) = heap.pop() {
            let d = f64::from_bits(d);
            if d > dist[u] + eps {
                continue;
            }
            for &ei in &heads[u] {
                let e = &edges[ei];
                let rc = e.cost + potential[u] - potential[e.to];
                let nd = dist[u] + rc.max(0.0);
                if nd + eps < dist[e.to] {
                    dist[e.to] = nd;
                    pred[e.to] = Some((ei, true));
                    heap.push(std::cmp::Reverse((ordered_float(nd), e.to)));
                }
            }
            // backward residual edges: any arc with positive flow into u
            for (arc_id, f) in flow.iter() {
                if *f <= eps {
                    continue;
                }
                let a = graph.arc(*arc_id);
                if a.target.0 != u {
                    continue;
                }
                let rc = -(cost_per_km * a.length) + potential[u] - potential[a.source.0];
                let nd = dist[u] + rc.max(0.0);
                if nd + eps < dist[a.source.0] {
                    dist[a.source.0] = nd;
                    pred[a.source.0] = Some((*arc_id, false));
                    heap.push(std::cmp::Reverse((ordered_float(nd), a.source.0)));
                }
            }
        }
        // nearest reachable deficit vertex
        let sink = (0..nv)
            .filter(|v| divergence[*v] < -eps && dist[*v].is_finite())
            .min_by(|a, b| dist[*a].partial_cmp(&dist[*b]).unwrap());
        let Some(sink) = sink else {
            // A surplus within roundoff of the total flow has no real
            // counterpart deficit; drop it instead of failing.
            if divergence[src] <= (1e-7 * scale).max(1e-9) {
                divergence[src] = 0.0;
                continue;
            }
            return Err(BestResponseError::RebalancingDisconnected(VertexId(src)));
        };
        for v in 0..nv {
            if dist[v].is_finite() {
                potential[v] += dist[v];
            }
        }
        // trace back and compute the bottleneck over backward edges
        let mut amount = divergence[src].min(-divergence[sink]);
        let mut v = sink;
        let mut path = Vec::new();
        while v != src {
            let (key, forward) = pred[v].expect("path must reach src");
            if forward {
                let e = &edges[key];
                path.push((e.arc_id, true));
                v = edge_source(&road_arcs, e.arc_id);
            } else {
                amount = amount.min(flow[&key]);
                path.push((key, false));
                v = graph.arc(key).target.0;
            }
        }
        for (arc_id, forward) in path {
            let entry = flow.entry(arc_id).or_insert(0.0);
            if forward {
                *entry += amount;
            } else {
                *entry -= amount;
                if *entry <= eps {
                    flow.remove(&arc_id);
                }
            }
        }
        divergence[src] -= amount;
        divergence[sink] += amount;
    }
    flow.retain(|_, v| *v > eps);
    Ok(flow)
}

fn edge_source(road_arcs: &[&crate::graph::Arc], arc_id: usize) -> usize {
    road_arcs
        .iter()
        .find(|a| a.id == arc_id)
        .expect("road arc")
        .source
        .0
}

fn ordered_float(v: f64) -> u64 {
    // nonnegative finite distances only
    v.to_bits()
}

/// Profit of one operator at fixed own prices against fixed adversary
/// prices: customers react, service flows follow, rebalancing is completed
/// at minimum cost (re-solved under the fleet budget if the cheap completion
/// busts it).
#[allow(clippy::too_many_arguments)]
pub fn evaluate_profit(
    graph: &MultiGraph,
    contexts: &[DemandContext],
    op_index: usize,
    operator: &OperatorConfig,
    own_prices: &PricingStrategy,
    adversary: Adversary,
    vot: &ValueOfTimeDistribution,
    noise: &PreferenceNoise,
    tax: f64,
    backend: &dyn ConicBackend,
) -> Result<BestResponseSolution, BestResponseError> {
    if operator.fleet_size <= 0.0 {
        // no vehicles, no service, whatever the posted prices say
        let x = vec![0.0; contexts.len()];
        return Ok(assemble_solution(
            graph,
            contexts,
            op_index,
            operator,
            &x,
            &BTreeMap::new(),
            own_prices.clone(),
            tax,
            0.0,
        ));
    }
    let mut x = Vec::with_capacity(contexts.len());
    let mut pieces_all = Vec::with_capacity(contexts.len());
    for ctx in contexts {
        let base = affine_reaction(ctx, vot, noise)?;
        let pieces = reaction_pieces(&base, adversary.price_for(ctx));
        let mut xi = match own_prices.get(ctx.demand.origin, ctx.demand.destination) {
            Some(p) => evaluate_reaction(&pieces, ctx.demand.rate, p),
            None => 0.0,
        };
        if xi < 1e-12 * ctx.demand.rate {
            xi = 0.0;
        }
        x.push(xi);
        pieces_all.push(pieces);
    }
    let mut service_flow: BTreeMap<usize, f64> = BTreeMap::new();
    let mut service_time = 0.0;
    for (i, ctx) in contexts.iter().enumerate() {
        if x[i] <= 0.0 {
            continue;
        }
        service_time += RATE_TIME_TO_VEHICLES * ctx.t_road * x[i];
        for arc_id in &ctx.road_flow {
            *service_flow.entry(*arc_id).or_insert(0.0) += x[i];
        }
    }
    let f0 = if service_time <= operator.fleet_size {
        let f0 = min_cost_rebalancing(graph, &service_flow, operator.cost_per_km)?;
        let rebal_time: f64 = f0
            .iter()
            .map(|(id, v)| RATE_TIME_TO_VEHICLES * graph.arc(*id).travel_time * v)
            .sum();
        if service_time + rebal_time <= operator.fleet_size * (1.0 + 1e-9) + 1e-9 {
            f0
        } else {
            let (cx, cf0) = capped_service_allocation(
                graph, contexts, op_index, operator, own_prices, &x, tax, backend,
            )?;
            x = cx;
            cf0
        }
    } else {
        // Posted prices attract more demand than the fleet can carry; the
        // operator serves the profit-maximizing feasible part and declines
        // the rest.
        let (cx, cf0) = capped_service_allocation(
            graph, contexts, op_index, operator, own_prices, &x, tax, backend,
        )?;
        x = cx;
        cf0
    };
    let prices = own_prices.clone();
    Ok(assemble_solution(graph, contexts, op_index, operator, &x, &f0, prices, tax, 0.0))
}

/// Profit-maximizing feasible service when posted prices attract more
/// demand than the fleet can carry (with its rebalancing): serve up to the
/// induced rate on each pair, decline the rest. Linear program over served
/// rates and rebalancing flow under vertex balance and the fleet budget.
#[allow(clippy::too_many_arguments)]
fn capped_service_allocation(
    graph: &MultiGraph,
    contexts: &[DemandContext],
    op_index: usize,
    operator: &OperatorConfig,
    own_prices: &PricingStrategy,
    induced: &[f64],
    tax: f64,
    backend: &dyn ConicBackend,
) -> Result<(Vec<f64>, BTreeMap<usize, f64>), BestResponseError> {
    let road_arcs = graph.layer_arcs(Mode::Road);
    let n = contexts.len();
    let m = road_arcs.len();
    let mut prog = ConicProgram::new(n + m);
    for (i, ctx) in contexts.iter().enumerate() {
        let p = own_prices.get(ctx.demand.origin, ctx.demand.destination).unwrap_or(0.0);
        prog.c[i] = ctx.service_cost[op_index] - (1.0 - tax) * p;
    }
    for (k, a) in road_arcs.iter().enumerate() {
        prog.c[n + k] = operator.cost_per_km * a.length;
    }
    let road_vertices = graph.layer_vertices(Mode::Road);
    if !road_vertices.is_empty() {
        let first = prog.add_rows(Cone::Zero(road_vertices.len()), road_vertices.len());
        let row_of: HashMap<usize, usize> = road_vertices
            .iter()
            .enumerate()
            .map(|(r, v)| (v.0, first + r))
            .collect();
        let add_arc = |prog: &mut ConicProgram, arc_id: usize, col: usize| {
            let a = graph.arc(arc_id);
            prog.a.push(row_of[&a.target.0], col, 1.0);
            prog.a.push(row_of[&a.source.0], col, -1.0);
        };
        for (i, ctx) in contexts.iter().enumerate() {
            for arc_id in &ctx.road_flow {
                add_arc(&mut prog, *arc_id, i);
            }
        }
        for (k, a) in road_arcs.iter().enumerate() {
            add_arc(&mut prog, a.id, n + k);
        }
    }
    let nn = 2 * n + m + 1;
    let first = prog.add_rows(Cone::Nonneg(nn), nn);
    let mut row = first;
    for (i, cap) in induced.iter().enumerate() {
        prog.a.push(row, i, -1.0); // x >= 0
        prog.a.push(row + 1, i, 1.0); // x <= induced demand
        prog.b[row + 1] = *cap;
        row += 2;
    }
    for k in 0..m {
        prog.a.push(row, n + k, -1.0); // f0 >= 0
        row += 1;
    }
    for (i, ctx) in contexts.iter().enumerate() {
        prog.a.push(row, i, ctx.t_road);
    }
    for (k, a) in road_arcs.iter().enumerate() {
        prog.a.push(row, n + k, a.travel_time);
    }
    prog.b[row] = operator.fleet_size / RATE_TIME_TO_VEHICLES;
    let sol = backend.solve(&prog, 1e-7).map_err(|_| BestResponseError::FleetExceeded {
        fleet: operator.fleet_size,
        needed: f64::NAN,
    })?;
    let mut x = Vec::with_capacity(n);
    for (i, cap) in induced.iter().enumerate() {
        let mut v = sol.x[i].clamp(0.0, *cap);
        if v < 1e-12 * cap.max(1.0) {
            v = 0.0;
        }
        x.push(v);
    }
    let mut f0 = BTreeMap::new();
    for (k, a) in road_arcs.iter().enumerate() {
        let v = sol.x[n + k].max(0.0);
        if v > 1e-12 {
            f0.insert(a.id, v);
        }
    }
    Ok((x, f0))
}

/// Residual of the vertex-balance equations for a combined flow, for
/// conservation checks.
pub fn balance_residual(
    graph: &MultiGraph,
    contexts: &[DemandContext],
    x: &[f64],
    f0: &BTreeMap<usize, f64>,
) -> f64 {
    let nv = graph.vertices().len();
    let mut div = vec![0.0f64; nv];
    for (i, ctx) in contexts.iter().enumerate() {
        for arc_id in &ctx.road_flow {
            let a = graph.arc(*arc_id);
            div[a.target.0] += x[i];
            div[a.source.0] -= x[i];
        }
    }
    for (arc_id, v) in f0 {
        let a = graph.arc(*arc_id);
        div[a.target.0] += v;
        div[a.source.0] -= v;
    }
    div.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Full capture and zero-demand prices for each demand under the given
/// adversary stance; used for random price initialization.
pub fn demand_price_bounds(
    contexts: &[DemandContext],
    vot: &ValueOfTimeDistribution,
    noise: &PreferenceNoise,
    adversary: Adversary,
) -> Result<Vec<(f64, f64)>, BestResponseError> {
    contexts
        .iter()
        .map(|ctx| {
            let base = affine_reaction(ctx, vot, noise)?;
            let pieces = reaction_pieces(&base, adversary.price_for(ctx));
            Ok(price_bounds(&pieces, ctx.demand.rate))
        })
        .collect()
}
