//! Scenario files: the unit of reproducible experiment. A scenario names a
//! topology, per-station policies and traffic, PHY parameters, a duration
//! and a seed list, in a single TOML document. Presets for the shipped
//! experiments are embedded in the library.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;

use crate::engine::{SimTime, StationId};
use crate::log::{EventLog, RunStats};
use crate::mac::PhyParams;
use crate::policy::{
    BinaryExponential, ContentionPolicy, DelayDriven, DelayDrivenParams, EdcaAc, IdleSense,
    IdleSenseParams, MarHimd, MarHimdParams,
};
use crate::sim::{Simulator, StationSetup};
use crate::topology::Topology;
use crate::traffic::{parse_trace, Direction, SourceKind, TrafficSource};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub duration_ms: u64,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub phy: PhyParams,
    pub topology: TopologyConfig,
    #[serde(default)]
    pub defaults: StationDefaults,
    #[serde(default)]
    pub policies: PolicyTables,
    #[serde(default)]
    pub stations: Vec<StationOverride>,
    /// When set, the runner repeats the scenario once per named policy with
    /// `defaults.policy` replaced, for side-by-side tables.
    #[serde(default)]
    pub compare_policies: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologyConfig {
    /// `pairs` transmitter/receiver pairs in one carrier-sense domain.
    FullyConnected { pairs: usize },
    /// The three-room hidden/exposed terminal arrangement.
    ThreeRooms,
    /// Explicit sense matrix over all stations plus `[tx, rx]` links.
    Explicit {
        sense: Vec<Vec<bool>>,
        links: Vec<(usize, usize)>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StationDefaults {
    pub policy: String,
    pub traffic: TrafficConfig,
}

impl Default for StationDefaults {
    fn default() -> Self {
        StationDefaults {
            policy: "himd".into(),
            traffic: TrafficConfig::Name("saturated".into()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TrafficConfig {
    /// `"saturated"` or `"none"`.
    Name(String),
    Spec(TrafficSpec),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrafficSpec {
    Saturated,
    None,
    Trace {
        path: String,
        #[serde(default = "default_direction")]
        direction: String,
    },
    Frames {
        fps: u32,
        frame_bytes: u64,
        #[serde(default = "default_mtu")]
        mtu: u64,
    },
}

fn default_direction() -> String {
    "down".into()
}

fn default_mtu() -> u64 {
    1500
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyTables {
    pub himd: MarHimdParams,
    pub ieee: IeeeParams,
    pub idlesense: IdleSenseParams,
    pub dda: DelayDrivenParams,
}

impl Default for PolicyTables {
    fn default() -> Self {
        PolicyTables {
            himd: MarHimdParams::default(),
            ieee: IeeeParams::default(),
            idlesense: IdleSenseParams {
                n: 0, // auto: filled with the transmitter count at build
                ..IdleSenseParams::default()
            },
            dda: DelayDrivenParams::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IeeeParams {
    pub cw_min: f64,
    pub cw_max: f64,
}

impl Default for IeeeParams {
    fn default() -> Self {
        IeeeParams {
            cw_min: 15.0,
            cw_max: 1023.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationOverride {
    /// Transmitter ordinal (0-based position in the topology's link list).
    pub index: usize,
    #[serde(default)]
    pub policy: Option<String>,
    #[serde(default)]
    pub traffic: Option<TrafficConfig>,
    #[serde(default)]
    pub start_ms: Option<u64>,
    #[serde(default)]
    pub stop_ms: Option<u64>,
}

pub const PRESET_NAMES: &[&str] = &[
    "saturated_n8",
    "coexist",
    "hidden_terminal",
    "convergence_5flows",
    "sweep_mar_tar",
    "param_sensitivity",
    "gaming_vs_iperf",
];

/// Embedded preset scenario text by name.
pub fn preset(name: &str) -> Option<&'static str> {
    match name {
        "saturated_n8" => Some(include_str!("../../../scenarios/saturated_n8.toml")),
        "coexist" => Some(include_str!("../../../scenarios/coexist.toml")),
        "hidden_terminal" => Some(include_str!("../../../scenarios/hidden_terminal.toml")),
        "convergence_5flows" => Some(include_str!("../../../scenarios/convergence_5flows.toml")),
        "sweep_mar_tar" => Some(include_str!("../../../scenarios/sweep_mar_tar.toml")),
        "param_sensitivity" => Some(include_str!("../../../scenarios/param_sensitivity.toml")),
        "gaming_vs_iperf" => Some(include_str!("../../../scenarios/gaming_vs_iperf.toml")),
        _ => None,
    }
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Scenario, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Load a scenario from a file path, or fall back to a preset name.
    pub fn load(path_or_preset: &str) -> Result<Scenario, String> {
        let p = Path::new(path_or_preset);
        if p.exists() {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{path_or_preset}: {e}"))?;
            return Scenario::from_toml_str(&text);
        }
        match preset(path_or_preset) {
            Some(text) => Scenario::from_toml_str(text),
            None => Err(format!(
                "{path_or_preset}: no such file and not a preset (presets: {})",
                PRESET_NAMES.join(", ")
            )),
        }
    }

    /// Parse a scenario with dotted-path overrides applied first, e.g.
    /// `policies.himd.mar_tar=0.25` or `phy.rts_cts=true`.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Scenario, String> {
        let mut value: toml::Value = text.parse().map_err(|e| format!("{e}"))?;
        for ov in overrides {
            let (path, literal) = ov
                .split_once('=')
                .ok_or_else(|| format!("override `{ov}` is not of the form key.path=value"))?;
            apply_override(&mut value, path.trim(), literal.trim())?;
        }
        value.try_into().map_err(|e: toml::de::Error| e.to_string())
    }

    pub fn duration(&self) -> SimTime {
        SimTime(self.duration_ms * 1000)
    }

    /// Transmitter count implied by the topology.
    pub fn transmitter_count(&self) -> usize {
        match &self.topology {
            TopologyConfig::FullyConnected { pairs } => *pairs,
            TopologyConfig::ThreeRooms => 3,
            TopologyConfig::Explicit { links, .. } => links.len(),
        }
    }

    pub fn build_topology(&self) -> Result<Topology, String> {
        match &self.topology {
            TopologyConfig::FullyConnected { pairs } => {
                if *pairs == 0 {
                    return Err("topology.pairs: must be positive".into());
                }
                Ok(Topology::fully_connected(*pairs))
            }
            TopologyConfig::ThreeRooms => Ok(Topology::three_rooms()),
            TopologyConfig::Explicit { sense, links } => {
                let n = sense.len();
                let mut link_vec = vec![None; n];
                for &(tx, rx) in links {
                    if tx >= n || rx >= n {
                        return Err(format!("topology.links: ({tx},{rx}) out of range"));
                    }
                    if link_vec[tx].is_some() {
                        return Err(format!("topology.links: transmitter {tx} listed twice"));
                    }
                    link_vec[tx] = Some(StationId(rx));
                }
                Topology::new(sense.clone(), link_vec).map_err(|e| format!("topology.sense: {e}"))
            }
        }
    }

    /// Check every invariant; returns the full list of problems.
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut errors = Vec::new();
        if self.name.is_empty() {
            errors.push("name: empty".into());
        }
        if self.duration_ms == 0 {
            errors.push("duration_ms: must be positive".into());
        }
        if self.seeds.is_empty() {
            errors.push("seeds: list empty".into());
        }
        if let Err(e) = self.phy.validate() {
            errors.push(format!("phy: {e}"));
        }
        let tx_count = self.transmitter_count();
        if let Err(e) = self.build_topology() {
            errors.push(e);
        }
        if let Err(e) = self.policies.himd.validate() {
            errors.push(format!("policies.himd: {e}"));
        }
        if !(self.policies.ieee.cw_min >= 0.0
            && self.policies.ieee.cw_min < self.policies.ieee.cw_max)
        {
            errors.push("policies.ieee: need 0 <= cw_min < cw_max".into());
        }
        if !known_policy(&self.defaults.policy) {
            errors.push(format!(
                "defaults.policy: unknown policy `{}`",
                self.defaults.policy
            ));
        }
        for (i, p) in self.compare_policies.iter().enumerate() {
            if !known_policy(p) {
                errors.push(format!("compare_policies[{i}]: unknown policy `{p}`"));
            }
        }
        let mut seen = BTreeSet::new();
        for (i, st) in self.stations.iter().enumerate() {
            if st.index >= tx_count {
                errors.push(format!(
                    "stations[{i}].index: {} out of range ({} transmitters)",
                    st.index, tx_count
                ));
            }
            if !seen.insert(st.index) {
                errors.push(format!("stations[{i}].index: {} listed twice", st.index));
            }
            if let Some(p) = &st.policy {
                if !known_policy(p) {
                    errors.push(format!("stations[{i}].policy: unknown policy `{p}`"));
                }
            }
            if let (Some(a), Some(b)) = (st.start_ms, st.stop_ms) {
                if a >= b {
                    errors.push(format!("stations[{i}]: start_ms must precede stop_ms"));
                }
            }
            if let Some(cfg) = &st.traffic {
                if let Err(e) = validate_traffic(cfg) {
                    errors.push(format!("stations[{i}].traffic: {e}"));
                }
            }
        }
        if let Err(e) = validate_traffic(&self.defaults.traffic) {
            errors.push(format!("defaults.traffic: {e}"));
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }

    fn make_policy(
        &self,
        name: &str,
        tx_count: usize,
    ) -> Result<Box<dyn ContentionPolicy>, String> {
        Ok(match name {
            "himd" => Box::new(MarHimd::new(MarHimdParams {
                fast_recovery: true,
                ..self.policies.himd.clone()
            })),
            "himd_sc" => Box::new(MarHimd::new(MarHimdParams {
                fast_recovery: false,
                ..self.policies.himd.clone()
            })),
            "ieee" => Box::new(BinaryExponential::new(
                self.policies.ieee.cw_min,
                self.policies.ieee.cw_max,
            )),
            "edca_bk" => Box::new(BinaryExponential::for_ac(EdcaAc::Bk)),
            "edca_be" => Box::new(BinaryExponential::for_ac(EdcaAc::Be)),
            "edca_vi" => Box::new(BinaryExponential::for_ac(EdcaAc::Vi)),
            "edca_vo" => Box::new(BinaryExponential::for_ac(EdcaAc::Vo)),
            "idlesense" => {
                let mut p = self.policies.idlesense.clone();
                if p.n == 0 {
                    p.n = tx_count;
                }
                Box::new(IdleSense::new(p))
            }
            "dda" => Box::new(DelayDriven::new(self.policies.dda.clone())),
            other => return Err(format!("unknown policy `{other}`")),
        })
    }

    fn make_source(
        &self,
        cfg: &TrafficConfig,
        start: SimTime,
        stop: Option<SimTime>,
    ) -> Result<Option<TrafficSource>, String> {
        let spec = normalize_traffic(cfg)?;
        let kind = match spec {
            TrafficSpec::None => return Ok(None),
            TrafficSpec::Saturated => SourceKind::Saturated {
                packet_bits: self.phy.ppdu_bits,
            },
            TrafficSpec::Trace { path, direction } => {
                let text =
                    std::fs::read_to_string(&path).map_err(|e| format!("trace {path}: {e}"))?;
                let records = parse_trace(&text).map_err(|e| format!("trace {path}: {e}"))?;
                let direction = match direction.as_str() {
                    "down" => Direction::Down,
                    "up" => Direction::Up,
                    other => return Err(format!("direction `{other}` not down|up")),
                };
                SourceKind::Trace { records, direction }
            }
            TrafficSpec::Frames {
                fps,
                frame_bytes,
                mtu,
            } => SourceKind::Frames {
                fps,
                frame_bytes,
                mtu,
            },
        };
        Ok(Some(TrafficSource::new(kind, start, stop)))
    }

    /// Instantiate the simulator for one seed.
    pub fn build(&self, seed: u64) -> Result<Simulator, String> {
        self.validate().map_err(|es| es.join("; "))?;
        let topo = self.build_topology()?;
        let transmitters: Vec<StationId> = topo.transmitters().collect();
        let mut setups: Vec<StationSetup> = (0..topo.len())
            .map(|_| StationSetup {
                policy: None,
                source: None,
            })
            .collect();
        for (ordinal, tx) in transmitters.iter().enumerate() {
            let over = self.stations.iter().find(|s| s.index == ordinal);
            let policy_name = over
                .and_then(|o| o.policy.as_deref())
                .unwrap_or(&self.defaults.policy);
            let traffic_cfg = over
                .and_then(|o| o.traffic.clone())
                .unwrap_or_else(|| self.defaults.traffic.clone());
            let start = SimTime(over.and_then(|o| o.start_ms).unwrap_or(0) * 1000);
            let stop = over.and_then(|o| o.stop_ms).map(|v| SimTime(v * 1000));
            setups[tx.idx()] = StationSetup {
                policy: Some(self.make_policy(policy_name, transmitters.len())?),
                source: self.make_source(&traffic_cfg, start, stop)?,
            };
        }
        Ok(Simulator::new(self.phy.clone(), topo, setups, seed))
    }

    /// Run one seed to completion.
    pub fn run(&self, seed: u64) -> Result<(EventLog, RunStats), String> {
        Ok(self.build(seed)?.run_until(self.duration()))
    }

    /// A copy with `defaults.policy` (and all station policy overrides)
    /// replaced; used by the policy-comparison runner.
    pub fn with_policy(&self, policy: &str) -> Scenario {
        let mut s = self.clone();
        s.defaults.policy = policy.to_string();
        for st in &mut s.stations {
            if st.policy.is_some() {
                st.policy = Some(policy.to_string());
            }
        }
        s
    }
}

fn known_policy(name: &str) -> bool {
    matches!(
        name,
        "himd"
            | "himd_sc"
            | "ieee"
            | "edca_bk"
            | "edca_be"
            | "edca_vi"
            | "edca_vo"
            | "idlesense"
            | "dda"
    )
}

fn normalize_traffic(cfg: &TrafficConfig) -> Result<TrafficSpec, String> {
    match cfg {
        TrafficConfig::Name(n) => match n.as_str() {
            "saturated" => Ok(TrafficSpec::Saturated),
            "none" => Ok(TrafficSpec::None),
            other => Err(format!(
                "unknown traffic `{other}` (want saturated|none or a table)"
            )),
        },
        TrafficConfig::Spec(s) => Ok(s.clone()),
    }
}

fn validate_traffic(cfg: &TrafficConfig) -> Result<(), String> {
    let spec = normalize_traffic(cfg)?;
    if let TrafficSpec::Frames {
        fps,
        frame_bytes,
        mtu,
    } = spec
    {
        if fps == 0 || frame_bytes == 0 || mtu == 0 {
            return Err("frames: fps, frame_bytes and mtu must be positive".into());
        }
    }
    Ok(())
}

/// Set `path` (dot-separated; numeric segments index arrays) in a TOML tree
/// to the literal, which is parsed as a TOML value.
pub fn apply_override(root: &mut toml::Value, path: &str, literal: &str) -> Result<(), String> {
    let parsed: toml::Value = format!("v = {literal}")
        .parse::<toml::Table>()
        .map(|t| t["v"].clone())
        .unwrap_or_else(|_| toml::Value::String(literal.to_string()));
    let segments: Vec<&str> = path.split('.').collect();
    if segments.is_empty() || segments.iter().any(|s| s.is_empty()) {
        return Err(format!("override path `{path}` is malformed"));
    }
    let mut node = root;
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        if let Ok(idx) = seg.parse::<usize>() {
            let arr = node
                .as_array_mut()
                .ok_or_else(|| format!("override path `{path}`: `{seg}` indexes a non-array"))?;
            if idx >= arr.len() {
                return Err(format!("override path `{path}`: index {idx} out of range"));
            }
            if last {
                arr[idx] = parsed;
                return Ok(());
            }
            node = &mut arr[idx];
        } else {
            let table = node
                .as_table_mut()
                .ok_or_else(|| format!("override path `{path}`: `{seg}` is not a table"))?;
            if last {
                table.insert(seg.to_string(), parsed);
                return Ok(());
            }
            node = table
                .entry(seg.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "t"
duration_ms = 100
seeds = [1]

[topology]
kind = "fully_connected"
pairs = 2
"#;

    #[test]
    fn minimal_scenario_parses_and_validates() {
        let sc = Scenario::from_toml_str(MINIMAL).unwrap();
        assert!(sc.validate().is_ok());
        assert_eq!(sc.transmitter_count(), 2);
        assert_eq!(sc.defaults.policy, "himd");
    }

    #[test]
    fn validation_reports_field_paths() {
        let text = r#"
name = "t"
duration_ms = 100
seeds = []

[topology]
kind = "fully_connected"
pairs = 2

[defaults]
policy = "warp"
"#;
        let sc = Scenario::from_toml_str(text).unwrap();
        let errs = sc.validate().unwrap_err();
        assert!(
            errs.iter().any(|e| e.contains("seeds: list empty")),
            "{errs:?}"
        );
        assert!(errs.iter().any(|e| e.contains("defaults.policy")), "{errs:?}");
    }

    #[test]
    fn asymmetric_sense_matrix_rejected() {
        let text = r#"
name = "t"
duration_ms = 100
seeds = [1]

[topology]
kind = "explicit"
sense = [[true, true], [false, true]]
links = [[0, 1]]
"#;
        let sc = Scenario::from_toml_str(text).unwrap();
        let errs = sc.validate().unwrap_err();
        assert!(errs.iter().any(|e| e.contains("not symmetric")), "{errs:?}");
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let sc = Scenario::from_toml_with_overrides(
            MINIMAL,
            &[
                "policies.himd.mar_tar=0.25".into(),
                "phy.rts_cts=true".into(),
                "duration_ms=50".into(),
            ],
        )
        .unwrap();
        assert_eq!(sc.policies.himd.mar_tar, 0.25);
        assert!(sc.phy.rts_cts);
        assert_eq!(sc.duration_ms, 50);
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = format!("{MINIMAL}\nbogus_field = 3\n");
        assert!(Scenario::from_toml_str(&text).is_err());
    }

    #[test]
    fn all_presets_parse_and_validate() {
        for name in PRESET_NAMES {
            let sc = Scenario::load(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            if let Err(es) = sc.validate() {
                panic!("{name}: {es:?}");
            }
        }
    }
}
