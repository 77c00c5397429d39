//! Independent ground-truth generators used by tests and acceptance
//! checks: a closed-form two-operator example, its homogeneous-customer
//! fixed-point counterpart, an exhaustive grid-search best response, and an
//! equilibrium certificate checker.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::best_response::{
    min_cost_rebalancing, solve_best_response, Adversary, BestResponseError, OperatorConfig,
    RATE_TIME_TO_VEHICLES,
};
use crate::context::DemandContext;
use crate::equilibrium::{relative_improvement, stance, EquilibriumResult, GameEnv};
use crate::graph::MultiGraph;
use crate::reaction::{
    affine_reaction, invert_reaction, reaction_pieces, ModeShares, PreferenceNoise, ReactionError,
    ValueOfTimeDistribution,
};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("closed-form example assumption violated: {0}")]
    AssumptionViolated(String),
    #[error("instance too large for exhaustive search: {demands} demands, {evals} evaluations")]
    TooLarge { demands: usize, evals: usize },
    #[error(transparent)]
    BestResponse(#[from] BestResponseError),
    #[error(transparent)]
    Reaction(#[from] ReactionError),
}

/// A one-pair market with two operators and walking, all customers sharing a
/// single value of time. Travel times t1 < t2 < t3 (operator 1, operator 2,
/// walking); c1, c2 are the per-leg service costs so a round trip costs
/// twice that.
#[derive(Debug, Clone, Copy)]
pub struct BasicExampleParams {
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub c1: f64,
    pub c2: f64,
    pub v_t: f64,
    pub rate: f64,
}

impl BasicExampleParams {
    fn check(&self) -> Result<(), OracleError> {
        if !(self.t1 < self.t2 && self.t2 < self.t3) {
            return Err(OracleError::AssumptionViolated(format!(
                "need t1 < t2 < t3, got {} / {} / {}",
                self.t1, self.t2, self.t3
            )));
        }
        let bound = self.v_t * (self.t2 - self.t1) / 2.0;
        if !(self.c1 < bound) {
            return Err(OracleError::AssumptionViolated(format!(
                "need c1 < v_t (t2 - t1) / 2 strictly, got c1 = {} vs {bound}",
                self.c1
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasicExampleSolution {
    /// Forward price posted by the faster operator.
    pub price_op1: f64,
    pub profit1: f64,
    pub profit2: f64,
    pub shares: ModeShares,
}

/// Closed form: the faster operator undercuts the slower one down to its
/// time advantage and captures the whole rate; the slower operator earns
/// nothing.
pub fn basic_example_equilibrium(
    params: &BasicExampleParams,
) -> Result<BasicExampleSolution, OracleError> {
    params.check()?;
    let price = params.v_t * (params.t2 - params.t1);
    Ok(BasicExampleSolution {
        price_op1: price,
        profit1: params.rate * (price - 2.0 * params.c1),
        profit2: 0.0,
        shares: ModeShares { op1: params.rate, op2: 0.0, transit: 0.0 },
    })
}

/// Total cost of each option for one customer; ties go to operator 1 first,
/// then to an operator over walking.
fn winner(params: &BasicExampleParams, p1: f64, p2: f64) -> usize {
    // tolerance keeps the intended ties exact despite rounding in v_t * t
    const TIE: f64 = 1e-9;
    let c1 = p1 + params.v_t * params.t1;
    let c2 = p2 + params.v_t * params.t2;
    let cw = params.v_t * params.t3;
    if c1 <= c2 + TIE && c1 <= cw + TIE {
        0
    } else if c2 <= cw + TIE {
        1
    } else {
        2
    }
}

fn captured_profit(params: &BasicExampleParams, op: usize, p1: f64, p2: f64) -> f64 {
    if winner(params, p1, p2) != op {
        return 0.0;
    }
    let (price, cost) = if op == 0 { (p1, params.c1) } else { (p2, params.c2) };
    params.rate * (price - 2.0 * cost)
}

/// Best price for one operator against a fixed rival price, over the
/// candidate set of tying prices (rival tie, walk tie) and staying put.
fn homogeneous_best_price(params: &BasicExampleParams, op: usize, own: f64, rival: f64) -> f64 {
    let (t_own, t_rival) = if op == 0 {
        (params.t1, params.t2)
    } else {
        (params.t2, params.t1)
    };
    let candidates = [
        own,
        (rival + params.v_t * (t_rival - t_own)).max(0.0),
        (params.v_t * (params.t3 - t_own)).max(0.0),
    ];
    let mut best = own;
    let mut best_profit = f64::NEG_INFINITY;
    for &p in &candidates {
        let profit = if op == 0 {
            captured_profit(params, 0, p, rival)
        } else {
            captured_profit(params, 1, rival, p)
        };
        if profit > best_profit + 1e-12 {
            best = p;
            best_profit = profit;
        }
    }
    best
}

/// The same example solved through the homogeneous-customer choice rule by
/// alternating exact best responses from p2 = 0 until the prices stop
/// moving.
pub fn basic_example_fixed_point(
    params: &BasicExampleParams,
) -> Result<BasicExampleSolution, OracleError> {
    params.check()?;
    let (mut p1, mut p2) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let n1 = homogeneous_best_price(params, 0, p1, p2);
        let n2 = homogeneous_best_price(params, 1, p2, n1);
        if (n1 - p1).abs() < 1e-12 && (n2 - p2).abs() < 1e-12 {
            break;
        }
        p1 = n1;
        p2 = n2;
    }
    let shares = match winner(params, p1, p2) {
        0 => ModeShares { op1: params.rate, ..Default::default() },
        1 => ModeShares { op2: params.rate, ..Default::default() },
        _ => ModeShares { transit: params.rate, ..Default::default() },
    };
    Ok(BasicExampleSolution {
        price_op1: p1,
        profit1: captured_profit(params, 0, p1, p2),
        profit2: captured_profit(params, 1, p1, p2),
        shares,
    })
}

#[derive(Debug, Clone)]
pub struct GridBestResponse {
    pub x: Vec<f64>,
    pub prices: Vec<f64>,
    pub profit: f64,
    /// Grid spacing per demand, for tolerance statements.
    pub step: Vec<f64>,
}

const MAX_GRID_EVALS: usize = 101 * 101 * 101;

/// How many times the grid is re-centered on the incumbent with a window of
/// one step per side. Resolves optima sitting on the fleet boundary between
/// base grid points.
const REFINE_LEVELS: usize = 4;

/// Exhaustive best response: served rates on a uniform grid, prices by
/// inverting the reaction curve, rebalancing completed exactly, fleet-bound
/// violators discarded. The base grid maximizer is refined by repeating the
/// search on a shrinking box around the incumbent.
#[allow(clippy::too_many_arguments)]
pub fn grid_best_response(
    graph: &MultiGraph,
    contexts: &[DemandContext],
    op_index: usize,
    operator: &OperatorConfig,
    adversary: Adversary,
    vot: &ValueOfTimeDistribution,
    noise: &PreferenceNoise,
    tax: f64,
    grid_points: usize,
) -> Result<GridBestResponse, OracleError> {
    let n = contexts.len();
    let evals = grid_points.checked_pow(n as u32).unwrap_or(usize::MAX);
    if n > 3 || evals > MAX_GRID_EVALS {
        return Err(OracleError::TooLarge { demands: n, evals });
    }

    let mut all_pieces = Vec::with_capacity(n);
    for ctx in contexts {
        let base = affine_reaction(ctx, vot, noise)?;
        all_pieces.push(reaction_pieces(&base, adversary.price_for(ctx)));
    }
    let rates: Vec<f64> = contexts.iter().map(|c| c.demand.rate).collect();
    let base_step: Vec<f64> = rates.iter().map(|r| r / (grid_points - 1) as f64).collect();

    let fleet_cap = operator.fleet_size * (1.0 + 1e-9) + 1e-9;
    let mut lo = vec![0.0f64; n];
    let mut hi = rates.clone();
    let mut best_profit = f64::NEG_INFINITY;
    let mut best_x = vec![0.0f64; n];
    let mut best_price = vec![0.0f64; n];

    for _level in 0..REFINE_LEVELS {
        // per-demand tables over this level's axis
        let mut xs = Vec::with_capacity(n);
        let mut revenue = Vec::with_capacity(n);
        let mut price = Vec::with_capacity(n);
        let mut svc = Vec::with_capacity(n);
        let mut fleet_svc = Vec::with_capacity(n);
        for (i, ctx) in contexts.iter().enumerate() {
            let span = hi[i] - lo[i];
            let mut xr = Vec::with_capacity(grid_points);
            let mut rr = Vec::with_capacity(grid_points);
            let mut pr = Vec::with_capacity(grid_points);
            let mut sr = Vec::with_capacity(grid_points);
            let mut fr = Vec::with_capacity(grid_points);
            for k in 0..grid_points {
                let x = (lo[i] + span * k as f64 / (grid_points - 1) as f64)
                    .clamp(0.0, rates[i]);
                let p = invert_reaction(&all_pieces[i], rates[i], x)?.max(0.0);
                xr.push(x);
                pr.push(p);
                rr.push(x * p);
                sr.push(x * ctx.service_cost[op_index]);
                fr.push(RATE_TIME_TO_VEHICLES * ctx.t_road * x);
            }
            xs.push(xr);
            revenue.push(rr);
            price.push(pr);
            svc.push(sr);
            fleet_svc.push(fr);
        }

        let mut idx = vec![0usize; n];
        'grid: loop {
            let service_fleet: f64 = (0..n).map(|i| fleet_svc[i][idx[i]]).sum();
            if service_fleet <= fleet_cap {
                let mut service_flow: BTreeMap<usize, f64> = BTreeMap::new();
                for (i, ctx) in contexts.iter().enumerate() {
                    let x = xs[i][idx[i]];
                    if x > 0.0 {
                        for arc_id in &ctx.road_flow {
                            *service_flow.entry(*arc_id).or_insert(0.0) += x;
                        }
                    }
                }
                let f0 = min_cost_rebalancing(graph, &service_flow, operator.cost_per_km)?;
                let mut fleet = service_fleet;
                let mut rebal_cost = 0.0;
                for (arc_id, v) in &f0 {
                    let a = graph.arc(*arc_id);
                    fleet += RATE_TIME_TO_VEHICLES * a.travel_time * v;
                    rebal_cost += operator.cost_per_km * a.length * v;
                }
                if fleet <= fleet_cap {
                    let rev: f64 = (0..n).map(|i| revenue[i][idx[i]]).sum();
                    let cost: f64 = (0..n).map(|i| svc[i][idx[i]]).sum();
                    let profit = (1.0 - tax) * rev - cost - rebal_cost;
                    if profit > best_profit {
                        best_profit = profit;
                        best_x = (0..n).map(|i| xs[i][idx[i]]).collect();
                        best_price = (0..n).map(|i| price[i][idx[i]]).collect();
                    }
                }
            }
            let mut d = 0;
            loop {
                if d == n {
                    break 'grid;
                }
                idx[d] += 1;
                if idx[d] < grid_points {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
        }

        // Shrink the box to two steps around the incumbent. Two rather than
        // one: with a binding fleet budget the best lattice point can sit a
        // couple of steps away from the continuum optimum along the budget
        // facet, and a one-step window would lock the refinement out of it.
        for i in 0..n {
            let step = (hi[i] - lo[i]) / (grid_points - 1) as f64;
            let center = best_x[i];
            lo[i] = (center - 2.0 * step).max(0.0);
            hi[i] = (center + 2.0 * step).min(rates[i]);
        }
    }

    Ok(GridBestResponse { x: best_x, prices: best_price, profit: best_profit, step: base_step })
}

/// A randomized desk-scale instance for oracle-equivalence checks: 2-4
/// vertices with complete walk and road layers, 1-3 demands, optional
/// rival prices, optional binding fleet.
pub struct RandomInstance {
    pub graph: MultiGraph,
    pub contexts: Vec<DemandContext>,
    pub operator: OperatorConfig,
    pub adversary_prices: Option<crate::best_response::PricingStrategy>,
    pub vot: ValueOfTimeDistribution,
    pub noise: PreferenceNoise,
    pub tax: f64,
}

impl RandomInstance {
    pub fn adversary(&self) -> Adversary<'_> {
        match &self.adversary_prices {
            Some(p) => Adversary::Prices(p),
            None => Adversary::Monopoly,
        }
    }
}

pub fn random_instance(seed: u64) -> RandomInstance {
    use crate::best_response::{demand_price_bounds, PricingStrategy};
    use crate::context::{build_contexts, ContextParams, Demand, ServiceTiming};
    use crate::graph::{Arc, Mode, ValidationMode, VertexId};
    use rand::{Rng, SeedableRng};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let nv = rng.random_range(2..=4usize);
    let mut arcs = Vec::new();
    let mut id = 0;
    for s in 0..nv {
        for t in 0..nv {
            if s == t {
                continue;
            }
            arcs.push(Arc {
                id,
                source: VertexId(s),
                target: VertexId(t),
                mode: Mode::Walk,
                travel_time: rng.random_range(0.4..1.5),
                length: rng.random_range(1.0..4.0),
                line_tag: None,
            });
            id += 1;
            arcs.push(Arc {
                id,
                source: VertexId(s),
                target: VertexId(t),
                mode: Mode::Road,
                travel_time: rng.random_range(0.05..0.25),
                length: rng.random_range(0.5..2.0),
                line_tag: None,
            });
            id += 1;
        }
    }
    let graph = MultiGraph::build(
        (0..nv).map(VertexId).collect(),
        arcs,
        ValidationMode::Strict,
    )
    .expect("generated graph is valid");

    let mut pairs: Vec<(usize, usize)> = (0..nv)
        .flat_map(|s| (0..nv).filter(move |t| *t != s).map(move |t| (s, t)))
        .collect();
    let k = rng.random_range(1..=3usize.min(pairs.len()));
    let mut demands = Vec::with_capacity(k);
    for _ in 0..k {
        let idx = rng.random_range(0..pairs.len());
        let (o, d) = pairs.swap_remove(idx);
        demands.push(Demand {
            origin: VertexId(o),
            destination: VertexId(d),
            rate: rng.random_range(1.0..8.0),
        });
    }

    let v_min = rng.random_range(5.0..12.0);
    let vot = ValueOfTimeDistribution { v_min, v_max: v_min + rng.random_range(2.0..8.0) };
    let noise = PreferenceNoise { width: rng.random_range(0.5..2.0) };
    let cost_per_km = rng.random_range(0.2..1.0);
    let params = ContextParams {
        fare_per_ride: 0.0,
        vot_reference: vot.midpoint(),
        cost_per_km: vec![cost_per_km],
        timing: ServiceTiming {
            amod_wait: 0.0,
            transit_headway_wait: Default::default(),
            default_transit_wait: 0.0,
            transit_access: 0.0,
            walk_speed: 5.0,
        },
    };
    let contexts = build_contexts(&graph, &demands, &params).expect("contexts build");

    let adversary_prices = if rng.random_bool(0.5) {
        let bounds = demand_price_bounds(&contexts, &vot, &noise, Adversary::Monopoly)
            .expect("bounds");
        let mut prices = PricingStrategy::default();
        for (ctx, (lo, hi)) in contexts.iter().zip(&bounds) {
            let p = if hi > lo { rng.random_range(*lo..*hi) } else { *lo };
            prices.set(ctx.demand.origin, ctx.demand.destination, p);
        }
        Some(prices)
    } else {
        None
    };

    let fleet_size = if rng.random_bool(0.5) {
        1e9
    } else {
        let need: f64 = contexts
            .iter()
            .map(|c| 2.0 * RATE_TIME_TO_VEHICLES * c.t_road * c.demand.rate)
            .sum();
        need * rng.random_range(0.1..0.6)
    };
    RandomInstance {
        graph,
        contexts,
        operator: OperatorConfig { fleet_size, cost_per_km },
        adversary_prices,
        vot,
        noise,
        tax: rng.random_range(0.0..0.4),
    }
}

#[derive(Debug, Clone)]
pub struct EpsilonCertificate {
    pub ok: bool,
    /// Relative improvement still available to each operator.
    pub slack: Vec<f64>,
}

/// Re-solves every operator's best response against the reported prices and
/// checks that nobody can improve their profit by more than epsilon,
/// relative to its own magnitude.
pub fn verify_epsilon_equilibrium(
    env: &GameEnv,
    operators: &[&OperatorConfig],
    result: &EquilibriumResult,
    epsilon: f64,
) -> Result<EpsilonCertificate, BestResponseError> {
    let mut slack = Vec::with_capacity(operators.len());
    for (j, op) in operators.iter().enumerate() {
        let adversary = match operators.len() {
            1 => Adversary::Monopoly,
            _ => stance(operators[1 - j], &result.operators[1 - j].prices),
        };
        let br = solve_best_response(
            env.graph,
            env.contexts,
            j,
            op,
            adversary,
            &env.vot,
            &env.noise,
            env.tax,
            env.backend,
            env.tolerance,
        )?;
        slack.push(relative_improvement(br.profit, result.operators[j].profit));
    }
    let ok = slack.iter().all(|s| *s <= epsilon);
    Ok(EpsilonCertificate { ok, slack })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::{build_contexts, ContextParams, Demand, ServiceTiming};
    use crate::graph::{Arc, Mode, MultiGraph, ValidationMode, VertexId};
    use crate::solver::ClarabelBackend;

    fn params() -> BasicExampleParams {
        BasicExampleParams {
            t1: 0.2,
            t2: 0.3,
            t3: 1.0,
            c1: 0.5,
            c2: 0.5,
            v_t: 12.0,
            rate: 5.0,
        }
    }

    #[test]
    fn closed_form_reference_values() {
        let s = basic_example_equilibrium(&params()).unwrap();
        assert!((s.price_op1 - 1.2).abs() < 1e-12);
        assert!((s.profit1 - 1.0).abs() < 1e-12);
        assert_eq!(s.profit2, 0.0);
        assert_eq!(s.shares.op1, 5.0);
    }

    #[test]
    fn boundary_cost_rejected() {
        let mut p = params();
        p.c1 = 0.6; // exactly v_t (t2 - t1) / 2
        assert!(matches!(
            basic_example_equilibrium(&p),
            Err(OracleError::AssumptionViolated(_))
        ));
        p.t2 = 0.2;
        assert!(matches!(
            basic_example_equilibrium(&p),
            Err(OracleError::AssumptionViolated(_))
        ));
    }

    #[test]
    fn fixed_point_matches_closed_form() {
        let p = params();
        let closed = basic_example_equilibrium(&p).unwrap();
        let fixed = basic_example_fixed_point(&p).unwrap();
        assert!((fixed.price_op1 - closed.price_op1).abs() < 1e-6);
        assert!((fixed.profit1 - closed.profit1).abs() < 1e-6);
        assert!(fixed.profit2.abs() < 1e-6);
        assert_eq!(fixed.shares.op1, p.rate);
    }

    fn arc(id: usize, s: usize, t: usize, mode: Mode, time: f64, len: f64) -> Arc {
        Arc {
            id,
            source: VertexId(s),
            target: VertexId(t),
            mode,
            travel_time: time,
            length: len,
            line_tag: None,
        }
    }

    fn two_node() -> (MultiGraph, Vec<DemandContext>) {
        let g = MultiGraph::build(
            (0..2).map(VertexId).collect(),
            vec![
                arc(0, 0, 1, Mode::Road, 0.2, 1.0),
                arc(1, 1, 0, Mode::Road, 0.2, 1.0),
                arc(2, 0, 1, Mode::Walk, 1.0, 4.0),
                arc(3, 1, 0, Mode::Walk, 1.0, 4.0),
            ],
            ValidationMode::Strict,
        )
        .unwrap();
        let params = ContextParams {
            fare_per_ride: 0.0,
            vot_reference: 13.5,
            cost_per_km: vec![5.0],
            timing: ServiceTiming {
                amod_wait: 0.0,
                transit_headway_wait: Default::default(),
                default_transit_wait: 0.0,
                transit_access: 0.0,
                walk_speed: 5.04,
            },
        };
        let d = Demand { origin: VertexId(0), destination: VertexId(1), rate: 20.0 };
        let ctxs = build_contexts(&g, &[d], &params).unwrap();
        (g, ctxs)
    }

    fn vot() -> ValueOfTimeDistribution {
        ValueOfTimeDistribution { v_min: 10.0, v_max: 17.0 }
    }

    #[test]
    fn grid_matches_calculus_single_demand() {
        let (g, ctxs) = two_node();
        let op = OperatorConfig { fleet_size: 1e9, cost_per_km: 5.0 };
        let noise = PreferenceNoise { width: 1.0 };
        let grid = grid_best_response(
            &g, &ctxs, 0, &op, Adversary::Monopoly, &vot(), &noise, 0.0, 101,
        )
        .unwrap();
        let base = affine_reaction(&ctxs[0], &vot(), &noise).unwrap();
        // serve and rebalance both cost 5 USD per customer
        let x_star = ((base.q1 + base.m1 * 10.0) / 2.0).clamp(0.0, 20.0);
        assert!((grid.x[0] - x_star).abs() <= grid.step[0] + 1e-12);
    }

    #[test]
    fn grid_agrees_with_conic_solver() {
        let (g, ctxs) = two_node();
        let op = OperatorConfig { fleet_size: 1e9, cost_per_km: 5.0 };
        let noise = PreferenceNoise { width: 1.0 };
        let grid = grid_best_response(
            &g, &ctxs, 0, &op, Adversary::Monopoly, &vot(), &noise, 0.0, 101,
        )
        .unwrap();
        let sol = solve_best_response(
            &g, &ctxs, 0, &op, Adversary::Monopoly, &vot(), &noise, 0.0,
            &ClarabelBackend, 1e-7,
        )
        .unwrap();
        assert!((grid.profit - sol.profit).abs() <= 0.005 * sol.profit.abs());
        assert!((grid.x[0] - sol.x[0]).abs() <= grid.step[0]);
    }

    #[test]
    fn zero_fleet_grid_maximizer_is_zero() {
        let (g, ctxs) = two_node();
        let op = OperatorConfig { fleet_size: 0.0, cost_per_km: 5.0 };
        let grid = grid_best_response(
            &g, &ctxs, 0, &op, Adversary::Monopoly, &vot(),
            &PreferenceNoise { width: 1.0 }, 0.0, 101,
        )
        .unwrap();
        assert_eq!(grid.x[0], 0.0);
    }

    #[test]
    fn oversized_instance_rejected() {
        let (g, ctxs) = two_node();
        let four = vec![ctxs[0].clone(), ctxs[0].clone(), ctxs[0].clone(), ctxs[0].clone()];
        let op = OperatorConfig { fleet_size: 1e9, cost_per_km: 5.0 };
        assert!(matches!(
            grid_best_response(
                &g, &four, 0, &op, Adversary::Monopoly, &vot(),
                &PreferenceNoise { width: 1.0 }, 0.0, 101,
            ),
            Err(OracleError::TooLarge { .. })
        ));
    }

    #[test]
    fn monopoly_certificate_passes() {
        use crate::equilibrium::solve_monopoly;
        let (g, ctxs) = two_node();
        let op = OperatorConfig { fleet_size: 1e9, cost_per_km: 5.0 };
        let env = GameEnv {
            graph: &g,
            contexts: &ctxs,
            vot: vot(),
            noise: PreferenceNoise { width: 1.0 },
            tax: 0.0,
            backend: &ClarabelBackend,
            tolerance: 1e-7,
        };
        let result = solve_monopoly(&env, &op).unwrap();
        let cert = verify_epsilon_equilibrium(&env, &[&op], &result, 1e-4).unwrap();
        assert!(cert.ok, "slack {:?}", cert.slack);
        assert!(cert.slack[0] <= 1e-6);
    }
}
