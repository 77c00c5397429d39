//! Randomized property checks for the routing and reaction-curve layers.

use proptest::prelude::*;

use modalgame::graph::{shortest_path_over, GraphError, RoutingArc, VertexId};
use modalgame::reaction::{
    evaluate_reaction, invert_reaction, reaction_pieces, AdversaryPrice, Piece,
};

/// All simple paths from `from` to `to`, by weight, via brute-force DFS.
fn enumerate_min_weight(
    num_vertices: usize,
    arcs: &[RoutingArc],
    from: VertexId,
    to: VertexId,
) -> Option<f64> {
    fn dfs(
        arcs: &[RoutingArc],
        visited: &mut Vec<bool>,
        at: usize,
        to: usize,
        weight: f64,
        best: &mut Option<f64>,
    ) {
        if at == to {
            *best = Some(best.map_or(weight, |b: f64| b.min(weight)));
            return;
        }
        for a in arcs.iter().filter(|a| a.source.0 == at) {
            if !visited[a.target.0] {
                visited[a.target.0] = true;
                dfs(arcs, visited, a.target.0, to, weight + a.weight, best);
                visited[a.target.0] = false;
            }
        }
    }
    let mut visited = vec![false; num_vertices];
    visited[from.0] = true;
    let mut best = None;
    dfs(arcs, &mut visited, from.0, to.0, 0.0, &mut best);
    best
}

fn arb_arcs(num_vertices: usize) -> impl Strategy<Value = Vec<RoutingArc>> {
    let pairs: Vec<(usize, usize)> = (0..num_vertices)
        .flat_map(|s| (0..num_vertices).filter(move |t| *t != s).map(move |t| (s, t)))
        .collect();
    let n = pairs.len();
    (
        proptest::collection::vec(0.01f64..10.0, n),
        proptest::collection::vec(proptest::bool::ANY, n),
    )
        .prop_map(move |(weights, keep)| {
            pairs
                .iter()
                .zip(weights)
                .zip(keep)
                .filter(|(_, k)| *k)
                .enumerate()
                .map(|(id, (((s, t), w), _))| RoutingArc {
                    id,
                    source: VertexId(*s),
                    target: VertexId(*t),
                    weight: w,
                })
                .collect()
        })
}

proptest! {
    /// Dijkstra agrees with exhaustive simple-path enumeration on graphs of
    /// up to 6 vertices, both on reachability and on the minimum weight.
    #[test]
    fn shortest_path_matches_enumeration(
        nv in 2usize..=6,
        seed_arcs in arb_arcs(6),
        from in 0usize..6,
        to in 0usize..6,
    ) {
        prop_assume!(from < nv && to < nv && from != to);
        let arcs: Vec<RoutingArc> = seed_arcs
            .into_iter()
            .filter(|a| a.source.0 < nv && a.target.0 < nv)
            .collect();
        let brute = enumerate_min_weight(nv, &arcs, VertexId(from), VertexId(to));
        let dijkstra = shortest_path_over(nv, &arcs, VertexId(from), VertexId(to));
        match (brute, dijkstra) {
            (Some(w), Ok(path)) => {
                prop_assert!((path.total_weight - w).abs() <= 1e-9 * w.max(1.0));
                let sum: f64 = path
                    .arcs
                    .iter()
                    .map(|id| arcs.iter().find(|a| a.id == *id).unwrap().weight)
                    .sum();
                prop_assert!((sum - path.total_weight).abs() <= 1e-9 * w.max(1.0));
            }
            (None, Err(GraphError::Unreachable { .. })) => {}
            (b, d) => prop_assert!(
                false,
                "enumeration {:?} disagrees with dijkstra {:?}",
                b,
                d.map(|p| p.total_weight)
            ),
        }
    }
}

fn arb_pieces() -> impl Strategy<Value = (Vec<Piece>, f64)> {
    // a monopoly piece plus optional adversary-coupled pieces, built from
    // the real constructor so the slopes are consistent
    (
        0.5f64..10.0,   // rate
        0.01f64..2.0,   // dt
        1.0f64..20.0,   // v_min
        0.5f64..10.0,   // spread
        0.0f64..5.0,    // fare
        0.2f64..3.0,    // noise width
        proptest::option::of(0.0f64..15.0), // adversary price
    )
        .prop_map(|(rate, dt, v_min, spread, fare, width, p_adv)| {
            let m1 = -rate / (spread * dt);
            let q1 = -m1 * ((v_min + spread) * dt + fare);
            let base = modalgame::reaction::AffineReaction {
                m1,
                q1,
                m2: -1.0 / width,
                m3: -1.0 / width + m1 / 2.0,
                q2_const: rate / 2.0,
                q2_slope: 1.0 / width,
                q3_const: q1 / 2.0,
                q3_slope: m1 / 2.0 - (-1.0 / width + m1 / 2.0),
                rate,
            };
            let adversary = match p_adv {
                Some(p) => AdversaryPrice::Price(p),
                None => AdversaryPrice::Monopoly,
            };
            (reaction_pieces(&base, adversary), rate)
        })
}

proptest! {
    /// Inverting a served rate strictly inside the curve and evaluating the
    /// reaction at that price round-trips to within 1e-9 of the rate scale.
    #[test]
    fn reaction_invert_round_trip((pieces, rate) in arb_pieces(), frac in 0.001f64..0.999) {
        let lo = evaluate_reaction(&pieces, rate, 1e6);
        prop_assume!(lo == 0.0); // curve must reach zero at high prices
        let x = frac * rate;
        let p = invert_reaction(&pieces, rate, x).unwrap();
        // only interior points are invertible: clamping must not bind
        let unclamped: f64 =
            pieces.iter().map(|pc| pc.at(p)).fold(f64::INFINITY, f64::min);
        prop_assume!(unclamped > 0.0 && unclamped < rate);
        let back = evaluate_reaction(&pieces, rate, p);
        prop_assert!(
            (back - x).abs() <= 1e-9 * rate,
            "x {x}, price {p}, back {back}"
        );
    }

    /// The reaction is nonincreasing in the operator's own price.
    #[test]
    fn reaction_monotone_in_price(
        (pieces, rate) in arb_pieces(),
        p1 in 0.0f64..30.0,
        dp in 0.0f64..10.0,
    ) {
        let a = evaluate_reaction(&pieces, rate, p1);
        let b = evaluate_reaction(&pieces, rate, p1 + dp);
        prop_assert!(b <= a + 1e-12 * rate, "x({p1}) = {a} < x({}) = {b}", p1 + dp);
    }
}
