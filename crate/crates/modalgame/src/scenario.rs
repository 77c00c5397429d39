//! Scenario bundles: network JSON, demand CSV, scenario config JSON, and
//! parameter-sweep expansion. Files carry human units (minutes, seconds,
//! m/s); everything is converted to hours / km / USD on load.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::best_response::OperatorConfig;
use crate::context::{ContextParams, Demand, ServiceTiming};
use crate::graph::{Arc, GraphError, Mode, MultiGraph, ValidationMode, VertexId};
use crate::reaction::{PreferenceNoise, ValueOfTimeDistribution};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid scenario: {field}: {message}")]
    Validation { field: String, message: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

fn invalid(field: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation { field: field.to_string(), message: message.into() }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VertexEntry {
    id: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArcEntry {
    id: usize,
    source: usize,
    target: usize,
    mode: Mode,
    travel_time_h: f64,
    length_km: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    line: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    vertices: Vec<VertexEntry>,
    arcs: Vec<ArcEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DemandRow {
    origin: usize,
    destination: usize,
    rate_per_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VotReferencePolicy {
    Midpoint,
    Fixed(f64),
}

impl Default for VotReferencePolicy {
    fn default() -> Self {
        VotReferencePolicy::Midpoint
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorEntry {
    pub fleet_size: f64,
    pub cost_per_km_usd: f64,
}

fn default_walk_speed() -> f64 {
    1.4
}

/// On-disk scenario config. `network` and `demand` are paths relative to
/// the scenario file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub network: String,
    pub demand: String,
    pub pt_fare_usd: f64,
    pub vot_min_usd_per_h: f64,
    pub vot_max_usd_per_h: f64,
    pub noise_width_usd: f64,
    pub amod_wait_min: f64,
    pub congestion_factor: f64,
    pub service_tax: f64,
    #[serde(default)]
    pub vot_reference_policy: VotReferencePolicy,
    /// Boarding wait per transit line class, minutes; key "default" covers
    /// unlisted classes.
    #[serde(default)]
    pub transit_wait_min: BTreeMap<String, f64>,
    /// Station access plus egress per boarding, seconds.
    #[serde(default)]
    pub transit_access_s: f64,
    #[serde(default = "default_walk_speed")]
    pub walk_speed_m_s: f64,
    pub operators: Vec<OperatorEntry>,
}

impl PartialEq for OperatorEntry {
    fn eq(&self, other: &Self) -> bool {
        self.fleet_size == other.fleet_size && self.cost_per_km_usd == other.cost_per_km_usd
    }
}

/// Validated scenario in canonical internal units (hours, km, USD).
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub pt_fare: f64,
    pub vot: ValueOfTimeDistribution,
    pub noise: PreferenceNoise,
    pub timing: ServiceTiming,
    pub congestion_factor: f64,
    pub service_tax: f64,
    pub vot_reference_policy: VotReferencePolicy,
    pub operators: Vec<OperatorConfig>,
}

impl ScenarioConfig {
    pub fn vot_reference(&self) -> f64 {
        match self.vot_reference_policy {
            VotReferencePolicy::Midpoint => self.vot.midpoint(),
            VotReferencePolicy::Fixed(v) => v,
        }
    }

    pub fn context_params(&self) -> ContextParams {
        ContextParams {
            fare_per_ride: self.pt_fare,
            vot_reference: self.vot_reference(),
            cost_per_km: self.operators.iter().map(|o| o.cost_per_km).collect(),
            timing: self.timing.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadedScenario {
    /// Congestion already applied to the road layer.
    pub graph: MultiGraph,
    pub demands: Vec<Demand>,
    pub config: ScenarioConfig,
    /// The parsed file, kept for canonical re-serialization.
    pub raw: ScenarioFile,
}

fn read_to_string(path: &Path) -> Result<String, ScenarioError> {
    fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.into(), source })
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ScenarioError> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| ScenarioError::Parse { path: path.into(), message: e.to_string() })
}

fn load_network(path: &Path, congestion_factor: f64) -> Result<MultiGraph, ScenarioError> {
    let file: NetworkFile = parse_json(path)?;
    let vertices = file.vertices.iter().map(|v| VertexId(v.id)).collect();
    let arcs = file
        .arcs
        .into_iter()
        .map(|a| Arc {
            id: a.id,
            source: VertexId(a.source),
            target: VertexId(a.target),
            mode: a.mode,
            travel_time: a.travel_time_h,
            length: a.length_km,
            line_tag: a.line,
        })
        .collect();
    let graph = MultiGraph::build(vertices, arcs, ValidationMode::Strict)?;
    Ok(graph.apply_congestion(congestion_factor)?)
}

fn load_demands(path: &Path) -> Result<Vec<Demand>, ScenarioError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| ScenarioError::Parse { path: path.into(), message: e.to_string() })?;
    let mut out = Vec::new();
    for row in reader.deserialize::<DemandRow>() {
        let row =
            row.map_err(|e| ScenarioError::Parse { path: path.into(), message: e.to_string() })?;
        if row.rate_per_s <= 0.0 {
            return Err(invalid(
                "rate_per_s",
                format!("demand {} -> {} has rate {}", row.origin, row.destination, row.rate_per_s),
            ));
        }
        out.push(Demand {
            origin: VertexId(row.origin),
            destination: VertexId(row.destination),
            rate: row.rate_per_s,
        });
    }
    Ok(out)
}

fn validate_config(file: &ScenarioFile) -> Result<ScenarioConfig, ScenarioError> {
    if !(0.0..=1.0).contains(&file.service_tax) {
        return Err(invalid("service_tax", format!("{} outside [0, 1]", file.service_tax)));
    }
    if file.operators.is_empty() || file.operators.len() > 2 {
        return Err(invalid(
            "operators",
            format!("need 1 or 2 operators, got {}", file.operators.len()),
        ));
    }
    let vot = ValueOfTimeDistribution {
        v_min: file.vot_min_usd_per_h,
        v_max: file.vot_max_usd_per_h,
    };
    if !vot.is_valid() {
        return Err(invalid("vot", format!("need 0 < min < max, got [{}, {}]", vot.v_min, vot.v_max)));
    }
    if file.noise_width_usd <= 0.0 {
        return Err(invalid("noise_width_usd", "must be positive"));
    }
    if file.congestion_factor < 1.0 {
        return Err(invalid("congestion_factor", "must be at least 1"));
    }
    if file.pt_fare_usd < 0.0 {
        return Err(invalid("pt_fare_usd", "must be nonnegative"));
    }
    if file.amod_wait_min < 0.0 || file.transit_access_s < 0.0 {
        return Err(invalid("waits", "waits must be nonnegative"));
    }
    if file.walk_speed_m_s <= 0.0 {
        return Err(invalid("walk_speed_m_s", "must be positive"));
    }
    let mut headway: HashMap<String, f64> = HashMap::new();
    let mut default_wait = 0.0;
    for (class, minutes) in &file.transit_wait_min {
        if *minutes < 0.0 {
            return Err(invalid("transit_wait_min", format!("{class}: {minutes} < 0")));
        }
        if class == "default" {
            default_wait = minutes / 60.0;
        } else {
            headway.insert(class.clone(), minutes / 60.0);
        }
    }
    let operators = file
        .operators
        .iter()
        .enumerate()
        .map(|(i, o)| {
            if o.fleet_size < 0.0 || o.cost_per_km_usd < 0.0 {
                return Err(invalid(
                    "operators",
                    format!("operator {i}: fleet and cost must be nonnegative"),
                ));
            }
            Ok(OperatorConfig { fleet_size: o.fleet_size, cost_per_km: o.cost_per_km_usd })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ScenarioConfig {
        pt_fare: file.pt_fare_usd,
        vot,
        noise: PreferenceNoise { width: file.noise_width_usd },
        timing: ServiceTiming {
            amod_wait: file.amod_wait_min / 60.0,
            transit_headway_wait: headway,
            default_transit_wait: default_wait,
            transit_access: file.transit_access_s / 3600.0,
            walk_speed: file.walk_speed_m_s * 3.6,
        },
        congestion_factor: file.congestion_factor,
        service_tax: file.service_tax,
        vot_reference_policy: file.vot_reference_policy,
        operators,
    })
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<LoadedScenario, ScenarioError> {
    let path = path.as_ref();
    let file: ScenarioFile = parse_json(path)?;
    let config = validate_config(&file)?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let graph = load_network(&dir.join(&file.network), config.congestion_factor)?;
    let demands = load_demands(&dir.join(&file.demand))?;
    let nv = graph.vertices().len();
    for d in &demands {
        if d.origin.0 >= nv || d.destination.0 >= nv {
            return Err(invalid(
                "demand",
                format!("pair {} -> {} references a missing vertex", d.origin.0, d.destination.0),
            ));
        }
    }
    Ok(LoadedScenario { graph, demands, config, raw: file })
}

/// Canonical serialized form of a scenario config file.
pub fn canonical_json(file: &ScenarioFile) -> String {
    let mut s = serde_json::to_string_pretty(file).expect("scenario serializes");
    s.push('\n');
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    FleetSize,
    CostPerKm,
    PtFare,
    ServiceTax,
}

/// How a swept total fleet is divided between two operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    Equal,
    /// One fleet 50% larger than the other (3:2).
    Ratio,
}

impl Default for SplitRule {
    fn default() -> Self {
        SplitRule::Equal
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    #[serde(default)]
    pub split_rule: SplitRule,
}

pub fn load_sweep_spec(path: impl AsRef<Path>) -> Result<SweepSpec, ScenarioError> {
    let spec: SweepSpec = parse_json(path.as_ref())?;
    if spec.values.is_empty() {
        return Err(invalid("values", "sweep values must be nonempty"));
    }
    if spec.values.windows(2).any(|w| w[0] > w[1]) {
        return Err(invalid("values", "sweep values must be sorted ascending"));
    }
    Ok(spec)
}

/// One scenario per sweep value. Fleet sweeps interpret the value as the
/// total across operators and divide it per the split rule; cost sweeps set
/// every operator's per-km cost.
pub fn expand_sweep(base: &ScenarioConfig, spec: &SweepSpec) -> Result<Vec<ScenarioConfig>, ScenarioError> {
    spec.values
        .iter()
        .map(|&v| {
            let mut cfg = base.clone();
            match spec.parameter {
                SweepParameter::FleetSize => {
                    if v < 0.0 {
                        return Err(invalid("values", format!("fleet {v} < 0")));
                    }
                    match cfg.operators.len() {
                        1 => cfg.operators[0].fleet_size = v,
                        _ => {
                            let (a, b) = match spec.split_rule {
                                SplitRule::Equal => (v / 2.0, v / 2.0),
                                SplitRule::Ratio => (v * 0.6, v * 0.4),
                            };
                            cfg.operators[0].fleet_size = a;
                            cfg.operators[1].fleet_size = b;
                        }
                    }
                }
                SweepParameter::CostPerKm => {
                    if v < 0.0 {
                        return Err(invalid("values", format!("cost {v} < 0")));
                    }
                    for op in &mut cfg.operators {
                        op.cost_per_km = v;
                    }
                }
                SweepParameter::PtFare => {
                    if v < 0.0 {
                        return Err(invalid("values", format!("fare {v} < 0")));
                    }
                    cfg.pt_fare = v;
                }
                SweepParameter::ServiceTax => {
                    if !(0.0..=1.0).contains(&v) {
                        return Err(invalid("values", format!("tax {v} outside [0, 1]")));
                    }
                    cfg.service_tax = v;
                }
            }
            Ok(cfg)
        })
        .collect()
}
