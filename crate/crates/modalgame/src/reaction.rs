//! Customer reaction curves: the clamped minimum of three affine pieces for
//! heterogeneous customers, its inverse and price bounds, plus the
//! homogeneous (single value of time) choice rule and a sampling oracle.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::DemandContext;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueOfTimeDistribution {
    /// USD/h.
    pub v_min: f64,
    /// USD/h.
    pub v_max: f64,
}

impl ValueOfTimeDistribution {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.v_min + self.v_max)
    }

    pub fn is_valid(&self) -> bool {
        self.v_min > 0.0 && self.v_min < self.v_max
    }
}

/// Width of the zero-mean uniform taste perturbation on the second
/// operator's total cost, USD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferenceNoise {
    pub width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AdversaryPrice {
    /// The rival operator is absent; only the base piece applies.
    Monopoly,
    Price(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Piece {
    pub m: f64,
    pub q: f64,
}

impl Piece {
    pub fn at(&self, price: f64) -> f64 {
        self.m * price + self.q
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ReactionError {
    #[error("AMoD and transit times are equal ({time} h); the base slope is undefined")]
    DegenerateTiming { time: f64 },
    #[error("served rate {x} outside [0, {rate}]")]
    OutOfRange { x: f64, rate: f64 },
}

/// The affine family behind one demand's reaction curve. The base piece is
/// fixed; the intercepts of the other two are affine in the adversary price.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineReaction {
    pub m1: f64,
    pub q1: f64,
    pub m2: f64,
    pub m3: f64,
    /// q2(p_adv) = q2_const + q2_slope * p_adv
    pub q2_const: f64,
    pub q2_slope: f64,
    /// q3(p_adv) = q3_const + q3_slope * p_adv
    pub q3_const: f64,
    pub q3_slope: f64,
    pub rate: f64,
}

/// The adversary-independent slope and intercept of the base piece, from the
/// demand's timing, transit fare, and the value-of-time range.
pub fn base_constants(
    ctx: &DemandContext,
    vot: &ValueOfTimeDistribution,
    rate: f64,
) -> Result<(f64, f64), ReactionError> {
    let dt = ctx.t_transit - ctx.t_road;
    if dt == 0.0 {
        return Err(ReactionError::DegenerateTiming { time: ctx.t_road });
    }
    let spread = vot.v_max - vot.v_min;
    let (m1, q1) = if dt > 0.0 {
        let m1 = -rate / (spread * dt);
        (m1, -m1 * (vot.v_max * dt + ctx.fare_transit))
    } else {
        let d = -dt;
        let m1 = -rate / (spread * d);
        (m1, -m1 * (-vot.v_min * d + ctx.fare_transit))
    };
    Ok((m1, q1))
}

pub fn affine_reaction(
    ctx: &DemandContext,
    vot: &ValueOfTimeDistribution,
    noise: &PreferenceNoise,
) -> Result<AffineReaction, ReactionError> {
    let rate = ctx.demand.rate;
    let (m1, q1) = base_constants(ctx, vot, rate)?;
    let m2 = -1.0 / noise.width;
    let m3 = m2 + m1 / 2.0;
    Ok(AffineReaction {
        m1,
        q1,
        m2,
        m3,
        q2_const: rate / 2.0,
        q2_slope: -m2,
        q3_const: q1 / 2.0,
        q3_slope: m1 / 2.0 - m3,
        rate,
    })
}

/// The active affine pieces for a given adversary price. In monopoly mode the
/// adversary-coupled pieces drop out (their intercepts diverge).
pub fn reaction_pieces(base: &AffineReaction, adversary: AdversaryPrice) -> Vec<Piece> {
    match adversary {
        AdversaryPrice::Monopoly => vec![Piece { m: base.m1, q: base.q1 }],
        AdversaryPrice::Price(p_adv) => vec![
            Piece { m: base.m1, q: base.q1 },
            Piece { m: base.m2, q: base.q2_const + base.q2_slope * p_adv },
            Piece { m: base.m3, q: base.q3_const + base.q3_slope * p_adv },
        ],
    }
}

/// Served rate at a given own price: min of the pieces, clamped to [0, rate].
pub fn evaluate_reaction(pieces: &[Piece], rate: f64, own_price: f64) -> f64 {
    let f = pieces
        .iter()
        .map(|p| p.at(own_price))
        .fold(f64::INFINITY, f64::min);
    f.clamp(0.0, rate)
}

/// The price at which the unclamped curve takes value `x`. Since every slope
/// is negative, the min of affines inverts to the min of the per-piece
/// inverses. The result may be negative; callers clip where pricing demands
/// nonnegativity.
pub fn invert_reaction(pieces: &[Piece], rate: f64, x: f64) -> Result<f64, ReactionError> {
    if !(0.0..=rate).contains(&x) {
        return Err(ReactionError::OutOfRange { x, rate });
    }
    Ok(pieces
        .iter()
        .map(|p| (x - p.q) / p.m)
        .fold(f64::INFINITY, f64::min))
}

/// Prices at which the curve hits full capture and zero, clipped to be
/// nonnegative.
pub fn price_bounds(pieces: &[Piece], rate: f64) -> (f64, f64) {
    let p_min = invert_reaction(pieces, rate, rate).unwrap().max(0.0);
    let p_max = invert_reaction(pieces, rate, 0.0).unwrap().max(0.0);
    (p_min, p_max)
}

/// How one demand's rate splits across the two operators and public
/// transport (walking along the transit route counts as transit).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ModeShares {
    pub op1: f64,
    pub op2: f64,
    pub transit: f64,
}

/// Single-value-of-time choice: the whole rate takes the cheapest total cost.
/// Ties go to operator 1 first, then to an operator over transit.
pub fn homogeneous_reaction(
    ctx: &DemandContext,
    prices: [Option<f64>; 2],
    v_t: f64,
) -> ModeShares {
    let cost_op = |p: Option<f64>| p.map(|p| p + v_t * ctx.t_road).unwrap_or(f64::INFINITY);
    let c1 = cost_op(prices[0]);
    let c2 = cost_op(prices[1]);
    let ct = ctx.fare_transit + v_t * ctx.t_transit;
    let rate = ctx.demand.rate;
    if c1 <= c2 && c1 <= ct {
        ModeShares { op1: rate, ..Default::default() }
    } else if c2 <= ct {
        ModeShares { op2: rate, ..Default::default() }
    } else {
        ModeShares { transit: rate, ..Default::default() }
    }
}

/// Sampling oracle for the heterogeneous reaction: draws a value of time and
/// the taste perturbation per customer and tallies the argmin choices.
///
/// The perturbation is drawn uniform on ±rate·width/2: the published slope of
/// the price-coupled piece is 1/width without a rate factor, which is the
/// expectation of this rate-scaled draw (and the small-width limit of the
/// unscaled one).
pub fn monte_carlo_reaction(
    ctx: &DemandContext,
    vot: &ValueOfTimeDistribution,
    noise: &PreferenceNoise,
    own_price: f64,
    adversary: AdversaryPrice,
    samples: u32,
    seed: u64,
) -> ModeShares {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rate = ctx.demand.rate;
    let half_width = 0.5 * rate * noise.width;
    let mut counts = [0u64; 3];
    for _ in 0..samples {
        let v: f64 = rng.random_range(vot.v_min..vot.v_max);
        let c1 = own_price + v * ctx.t_road;
        let c2 = match adversary {
            AdversaryPrice::Monopoly => f64::INFINITY,
            AdversaryPrice::Price(p_adv) => {
                let e2: f64 = rng.random_range(-half_width..half_width);
                p_adv + v * ctx.t_road + e2
            }
        };
        let ct = ctx.fare_transit + v * ctx.t_transit;
        if c1 <= c2 && c1 <= ct {
            counts[0] += 1;
        } else if c2 <= ct {
            counts[1] += 1;
        } else {
            counts[2] += 1;
        }
    }
    let scale = rate / samples as f64;
    ModeShares {
        op1: counts[0] as f64 * scale,
        op2: counts[1] as f64 * scale,
        transit: counts[2] as f64 * scale,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::Demand;
    use crate::graph::VertexId;

    fn ctx(t_road: f64, t_transit: f64, fare: f64, rate: f64) -> DemandContext {
        DemandContext {
            demand: Demand { origin: VertexId(0), destination: VertexId(1), rate },
            t_road,
            t_transit,
            fare_transit: fare,
            road_flow: vec![],
            service_cost: vec![0.0],
            transit_path_has_transit_arc: fare > 0.0,
        }
    }

    fn vot() -> ValueOfTimeDistribution {
        ValueOfTimeDistribution { v_min: 10.0, v_max: 17.0 }
    }

    #[test]
    fn base_constants_road_faster() {
        let c = ctx(0.25, 0.5, 3.12, 10.0);
        let (m1, q1) = base_constants(&c, &vot(), 10.0).unwrap();
        assert!((m1 + 40.0 / 7.0).abs() < 1e-12);
        assert!((q1 - (40.0 / 7.0) * 7.37).abs() < 1e-9);
        // full capture at fare + v_min*dt, zero at fare + v_max*dt
        let pieces = [Piece { m: m1, q: q1 }];
        assert!((evaluate_reaction(&pieces, 10.0, 5.62) - 10.0).abs() < 1e-9);
        assert!(evaluate_reaction(&pieces, 10.0, 7.37).abs() < 1e-9);
    }

    #[test]
    fn base_constants_transit_faster() {
        let c = ctx(0.5, 0.25, 3.12, 10.0);
        let (m1, q1) = base_constants(&c, &vot(), 10.0).unwrap();
        let pieces = [Piece { m: m1, q: q1 }];
        // f(fare - v_max * 0.25) = rate on the second branch
        let p = 3.12 - 17.0 * 0.25;
        assert!((evaluate_reaction(&pieces, 10.0, p) - 10.0).abs() < 1e-9);
        assert!(evaluate_reaction(&pieces, 10.0, 3.12 - 10.0 * 0.25).abs() < 1e-9);
    }

    #[test]
    fn degenerate_timing_rejected() {
        let c = ctx(0.5, 0.5, 3.12, 10.0);
        assert!(matches!(
            base_constants(&c, &vot(), 10.0),
            Err(ReactionError::DegenerateTiming { .. })
        ));
    }

    #[test]
    fn duopoly_piece_constants() {
        let c = ctx(0.25, 0.5, 3.12, 10.0);
        let base =
            affine_reaction(&c, &vot(), &PreferenceNoise { width: 1.0 }).unwrap();
        let pieces = reaction_pieces(&base, AdversaryPrice::Price(5.0));
        assert_eq!(pieces.len(), 3);
        assert!((pieces[1].m + 1.0).abs() < 1e-12);
        assert!((pieces[1].q - 10.0).abs() < 1e-12); // rate/2 + 5
        assert!((pieces[2].m - (base.m2 + base.m1 / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn monopoly_single_piece() {
        let c = ctx(0.25, 0.5, 3.12, 10.0);
        let base =
            affine_reaction(&c, &vot(), &PreferenceNoise { width: 1.0 }).unwrap();
        let pieces = reaction_pieces(&base, AdversaryPrice::Monopoly);
        assert_eq!(pieces.len(), 1);
    }

    #[test]
    fn symmetric_split_at_equal_prices() {
        let c = ctx(0.25, 0.5, 3.12, 10.0);
        let base =
            affine_reaction(&c, &vot(), &PreferenceNoise { width: 1.0 }).unwrap();
        let p = 6.0;
        let pieces = reaction_pieces(&base, AdversaryPrice::Price(p));
        assert!((pieces[1].at(p) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn invert_round_trip_and_bounds() {
        let c = ctx(0.25, 0.5, 3.12, 10.0);
        let base =
            affine_reaction(&c, &vot(), &PreferenceNoise { width: 1.0 }).unwrap();
        let pieces = reaction_pieces(&base, AdversaryPrice::Monopoly);
        let p = invert_reaction(&pieces, 10.0, 5.0).unwrap();
        assert!((p - 6.495).abs() < 1e-3);
        assert!((evaluate_reaction(&pieces, 10.0, p) - 5.0).abs() < 1e-9);
        let (p_min, p_max) = price_bounds(&pieces, 10.0);
        assert!((p_min - 5.62).abs() < 1e-9);
        assert!((p_max - 7.37).abs() < 1e-9);
        assert!(invert_reaction(&pieces, 10.0, 10.5).is_err());
        assert!(invert_reaction(&pieces, 10.0, -0.1).is_err());
    }

    #[test]
    fn monotone_in_own_price() {
        let c = ctx(0.25, 0.5, 3.12, 10.0);
        let base =
            affine_reaction(&c, &vot(), &PreferenceNoise { width: 1.0 }).unwrap();
        let pieces = reaction_pieces(&base, AdversaryPrice::Price(6.0));
        let mut prev = f64::INFINITY;
        for i in 0..200 {
            let p = i as f64 * 0.05;
            let x = evaluate_reaction(&pieces, 10.0, p);
            assert!(x <= prev + 1e-12);
            prev = x;
        }
    }

    #[test]
    fn homogeneous_tie_conventions() {
        let c = ctx(0.25, 0.5, 3.12, 10.0);
        // strictly cheapest operator wins
        let s = homogeneous_reaction(&c, [Some(1.0), Some(2.0)], 12.0);
        assert_eq!(s.op1, 10.0);
        // tie between operators goes to operator 1
        let s = homogeneous_reaction(&c, [Some(2.0), Some(2.0)], 12.0);
        assert_eq!(s.op1, 10.0);
        // operator/transit tie goes to the operator: costs 6.12 each
        let c2 = ctx(0.25, 0.5, 3.12, 10.0);
        let s = homogeneous_reaction(&c2, [None, Some(3.12 + 12.0 * 0.25)], 12.0);
        assert_eq!(s.op2, 10.0);
        // transit wins when strictly cheapest
        let s = homogeneous_reaction(&c, [Some(50.0), Some(50.0)], 12.0);
        assert_eq!(s.transit, 10.0);
    }

    #[test]
    fn monte_carlo_matches_analytic_monopoly() {
        let c = ctx(0.25, 0.5, 3.12, 10.0);
        let vot = vot();
        let noise = PreferenceNoise { width: 0.05 };
        let base = affine_reaction(&c, &vot, &noise).unwrap();
        let pieces = reaction_pieces(&base, AdversaryPrice::Monopoly);
        for (k, price) in [5.9, 6.5, 7.1].iter().enumerate() {
            let x = evaluate_reaction(&pieces, 10.0, *price);
            let s = monte_carlo_reaction(
                &c,
                &vot,
                &noise,
                *price,
                AdversaryPrice::Monopoly,
                400_000,
                42 + k as u64,
            );
            let p_hat = x / 10.0;
            let se = 10.0 * (p_hat * (1.0 - p_hat) / 400_000.0).sqrt();
            assert!(
                (s.op1 - x).abs() <= 3.0 * se + 1e-9,
                "price {price}: mc {} vs analytic {x}",
                s.op1
            );
        }
    }

    #[test]
    fn monte_carlo_duopoly_at_equal_prices() {
        let c = ctx(0.25, 0.5, 3.12, 10.0);
        let vot = vot();
        let noise = PreferenceNoise { width: 0.05 };
        let base = affine_reaction(&c, &vot, &noise).unwrap();
        let p = 6.5;
        let pieces = reaction_pieces(&base, AdversaryPrice::Price(p));
        let x = evaluate_reaction(&pieces, 10.0, p);
        let s = monte_carlo_reaction(
            &c,
            &vot,
            &noise,
            p,
            AdversaryPrice::Price(p),
            400_000,
            7,
        );
        let p_hat = x / 10.0;
        let se = 10.0 * (p_hat * (1.0 - p_hat) / 400_000.0).sqrt();
        assert!((s.op1 - x).abs() <= 3.0 * se, "mc {} vs analytic {x}", s.op1);
    }

    #[test]
    fn monte_carlo_above_p_max_is_zero() {
        let c = ctx(0.25, 0.5, 3.12, 10.0);
        let s = monte_carlo_reaction(
            &c,
            &vot(),
            &PreferenceNoise { width: 0.05 },
            8.0,
            AdversaryPrice::Monopoly,
            10_000,
            1,
        );
        assert_eq!(s.op1, 0.0);
        assert_eq!(s.transit, 10.0);
    }

    #[test]
    fn monte_carlo_narrow_vot_approaches_homogeneous() {
        let c = ctx(0.25, 0.5, 3.12, 10.0);
        let narrow = ValueOfTimeDistribution { v_min: 12.0, v_max: 12.001 };
        let s = monte_carlo_reaction(
            &c,
            &narrow,
            &PreferenceNoise { width: 1e-4 },
            5.0,
            AdversaryPrice::Price(5.5),
            50_000,
            3,
        );
        let h = homogeneous_reaction(&c, [Some(5.0), Some(5.5)], 12.0);
        assert!((s.op1 - h.op1).abs() < 0.05);
    }

    #[test]
    fn deterministic_under_seed() {
        let c = ctx(0.25, 0.5, 3.12, 10.0);
        let a = monte_carlo_reaction(
            &c, &vot(), &PreferenceNoise { width: 0.05 }, 6.5,
            AdversaryPrice::Price(6.0), 10_000, 99,
        );
        let b = monte_carlo_reaction(
            &c, &vot(), &PreferenceNoise { width: 0.05 }, 6.5,
            AdversaryPrice::Price(6.0), 10_000, 99,
        );
        assert_eq!(a, b);
    }
}
