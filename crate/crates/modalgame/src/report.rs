//! Result aggregation: modal shares, per-trip profit-share statistics,
//! per-demand mode classification, operator totals, and deterministic CSV /
//! JSON emission for sweep tables.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::context::DemandContext;
use crate::equilibrium::EquilibriumResult;

/// Mode usage threshold: a mode counts as used on a demand if it carries
/// more than this fraction of the demand's rate. Absorbs solver noise in
/// iterated solutions.
pub const USE_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ShareSummary {
    pub op1: f64,
    pub op2: f64,
    pub transit: f64,
    pub walk_only: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassificationShares {
    pub pt_only: f64,
    pub amod_only: f64,
    pub op1_only: f64,
    pub op2_only: f64,
    pub walk_only: f64,
    pub mixed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileSummary {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorTotals {
    pub profit: f64,
    pub revenue: f64,
    pub service_cost: f64,
    pub rebalancing_cost: f64,
    pub tax_paid: f64,
    pub fleet_used: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalReport {
    /// Rate-weighted fractions over all demands; sum to 1.
    pub shares: ShareSummary,
    /// Rate-weighted fractions of demands by the set of modes they use.
    pub classification: ClassificationShares,
    /// Distribution of (per-trip profit / per-trip revenue) per operator,
    /// weighted by served rate; absent when an operator serves nothing.
    pub profit_share_per_trip: Vec<Option<QuantileSummary>>,
    pub operators: Vec<OperatorTotals>,
    pub total_profit: f64,
    pub total_revenue: f64,
    pub tax_collected: f64,
    /// Largest relative violation of profit = (1-tax) revenue - costs.
    pub profit_identity_residual: f64,
}

/// Weighted quantile: smallest value whose cumulative weight reaches the
/// target fraction.
fn weighted_quantile(sorted: &[(f64, f64)], total: f64, q: f64) -> f64 {
    let target = q * total;
    let mut cum = 0.0;
    for (v, w) in sorted {
        cum += w;
        if cum >= target - 1e-15 {
            return *v;
        }
    }
    sorted.last().map(|(v, _)| *v).unwrap_or(0.0)
}

fn quantiles(values: Vec<(f64, f64)>) -> Option<QuantileSummary> {
    let total: f64 = values.iter().map(|(_, w)| w).sum();
    if values.is_empty() || total <= 0.0 {
        return None;
    }
    let mut sorted = values;
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    Some(QuantileSummary {
        min: sorted.first().unwrap().0,
        q25: weighted_quantile(&sorted, total, 0.25),
        median: weighted_quantile(&sorted, total, 0.5),
        q75: weighted_quantile(&sorted, total, 0.75),
        max: sorted.last().unwrap().0,
    })
}

pub fn build_report(
    result: &EquilibriumResult,
    contexts: &[DemandContext],
    tax: f64,
) -> ModalReport {
    let num_ops = result.operators.len();
    let total_rate: f64 = contexts.iter().map(|c| c.demand.rate).sum();

    let mut shares = ShareSummary::default();
    let mut class = ClassificationShares::default();

    // rebalancing cost allocation weights: served rate times service time
    let mut rate_time: Vec<f64> = vec![0.0; num_ops];
    for (j, op) in result.operators.iter().enumerate() {
        for (i, ctx) in contexts.iter().enumerate() {
            rate_time[j] += op.x[i] * ctx.t_road;
        }
    }

    let mut trip_shares: Vec<Vec<(f64, f64)>> = vec![Vec::new(); num_ops];
    for (i, ctx) in contexts.iter().enumerate() {
        let rate = ctx.demand.rate;
        let threshold = USE_THRESHOLD * rate;
        let x1 = result.operators[0].x[i];
        let x2 = result.operators.get(1).map(|s| s.x[i]).unwrap_or(0.0);
        let rest = (rate - x1 - x2).max(0.0);
        shares.op1 += x1;
        shares.op2 += x2;
        if ctx.transit_path_has_transit_arc {
            shares.transit += rest;
        } else {
            shares.walk_only += rest;
        }

        let used1 = x1 > threshold;
        let used2 = x2 > threshold;
        let used_pt = rest > threshold;
        let slot = match (used1, used2, used_pt) {
            (false, false, _) => {
                if ctx.transit_path_has_transit_arc {
                    &mut class.pt_only
                } else {
                    &mut class.walk_only
                }
            }
            (true, false, false) => &mut class.op1_only,
            (false, true, false) => &mut class.op2_only,
            (true, true, false) => &mut class.amod_only,
            _ => &mut class.mixed,
        };
        *slot += rate;

        for (j, op) in result.operators.iter().enumerate() {
            let x = op.x[i];
            if x <= threshold {
                continue;
            }
            let price = op
                .prices
                .get(ctx.demand.origin, ctx.demand.destination)
                .unwrap_or(0.0);
            if price <= 0.0 {
                continue;
            }
            let rebal_per_customer = if rate_time[j] > 0.0 {
                op.rebalancing_cost * ctx.t_road / rate_time[j]
            } else {
                0.0
            };
            let share =
                ((1.0 - tax) * price - ctx.service_cost[j] - rebal_per_customer) / price;
            trip_shares[j].push((share, x));
        }
    }

    if total_rate > 0.0 {
        shares.op1 /= total_rate;
        shares.op2 /= total_rate;
        shares.transit /= total_rate;
        shares.walk_only /= total_rate;
        class.pt_only /= total_rate;
        class.amod_only /= total_rate;
        class.op1_only /= total_rate;
        class.op2_only /= total_rate;
        class.walk_only /= total_rate;
        class.mixed /= total_rate;
    }

    let mut residual = 0.0f64;
    let mut totals = Vec::with_capacity(num_ops);
    for op in &result.operators {
        let implied = (1.0 - tax) * op.revenue - op.service_cost - op.rebalancing_cost;
        let scale = op.profit.abs().max(op.revenue.abs()).max(1.0);
        residual = residual.max((implied - op.profit).abs() / scale);
        totals.push(OperatorTotals {
            profit: op.profit,
            revenue: op.revenue,
            service_cost: op.service_cost,
            rebalancing_cost: op.rebalancing_cost,
            tax_paid: op.tax_paid,
            fleet_used: op.fleet_used,
        });
    }

    ModalReport {
        shares,
        classification: class,
        profit_share_per_trip: trip_shares.into_iter().map(quantiles).collect(),
        operators: totals,
        total_profit: result.operators.iter().map(|o| o.profit).sum(),
        total_revenue: result.operators.iter().map(|o| o.revenue).sum(),
        tax_collected: result.operators.iter().map(|o| o.tax_paid).sum(),
        profit_identity_residual: residual,
    }
}

/// One line of a sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub converged: bool,
    pub report: ModalReport,
}

pub const CSV_HEADER: &str = "value,converged,share_op1,share_op2,share_transit,share_walk_only,\
class_pt_only,class_amod_only,class_op1_only,class_op2_only,class_walk_only,class_mixed,\
profit_op1,profit_op2,revenue_op1,revenue_op2,rebalancing_op1,rebalancing_op2,tax_collected";

fn op_field(report: &ModalReport, j: usize, f: impl Fn(&OperatorTotals) -> f64) -> f64 {
    report.operators.get(j).map(f).unwrap_or(0.0)
}

/// Deterministic fixed-precision CSV: identical inputs produce identical
/// bytes.
pub fn write_csv<W: Write>(rows: &[SweepRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for row in rows {
        let r = &row.report;
        let cols = [
            r.shares.op1,
            r.shares.op2,
            r.shares.transit,
            r.shares.walk_only,
            r.classification.pt_only,
            r.classification.amod_only,
            r.classification.op1_only,
            r.classification.op2_only,
            r.classification.walk_only,
            r.classification.mixed,
            op_field(r, 0, |o| o.profit),
            op_field(r, 1, |o| o.profit),
            op_field(r, 0, |o| o.revenue),
            op_field(r, 1, |o| o.revenue),
            op_field(r, 0, |o| o.rebalancing_cost),
            op_field(r, 1, |o| o.rebalancing_cost),
            r.tax_collected,
        ];
        write!(out, "{:.6},{}", row.value, row.converged)?;
        for c in cols {
            write!(out, ",{c:.9}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn emit_csv(rows: &[SweepRow], path: impl AsRef<Path>) -> std::io::Result<()> {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf)?;
    std::fs::write(path, buf)
}

pub fn emit_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> std::io::Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    std::fs::write(path, s)
}
