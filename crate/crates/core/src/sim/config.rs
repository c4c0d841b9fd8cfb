//! Scenario configuration: the sectioned line-oriented `key=value` file
//! format ([costs], [devices], [store], [apps]), its parser and writer, and
//! the generated scale-topology family.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::agents::{ServiceDescriptor, ServiceRequest};
use crate::model::{
    Aggregation, AppRequirements, Capabilities, DeviceClass, DeviceDescriptor, DeviceProps,
    InfoModelKind, ProtocolKind, Tick, validate_descriptor,
};
use crate::orchestrator::PlacementStrategy;
use crate::vnf::{DaConfig, VnfKind};

pub const DEFAULT_HOP_DELAY: Tick = 10;
pub const DEFAULT_PROC_COST: Tick = 5;
pub const DEFAULT_JOIN_COST: Tick = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScenarioCosts {
    pub hop_delay: Tick,
    pub proc_cost: Tick,
    pub join_cost: Tick,
}

impl Default for ScenarioCosts {
    fn default() -> Self {
        ScenarioCosts {
            hop_delay: DEFAULT_HOP_DELAY,
            proc_cost: DEFAULT_PROC_COST,
            join_cost: DEFAULT_JOIN_COST,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwitchLine {
    pub id: String,
    pub host: String,
    pub links: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub quantity: String,
    pub unit: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredeployLine {
    pub kind: VnfKind,
    pub host: String,
    /// Kind this instance load-balances for, when it is a group front.
    pub fronts: Option<VnfKind>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub costs: ScenarioCosts,
    pub scale_k: u32,
    pub placement: PlacementStrategy,
    pub chain_order: Option<Vec<VnfKind>>,
    /// The fixed node: gateway-overlay master and the co-located bridge.
    pub fixed_node: String,
    /// Application-overlay master; defaults to the first requesting app.
    pub app_master: String,
    pub devices: Vec<DeviceDescriptor>,
    pub switches: Vec<SwitchLine>,
    /// Extra host-to-switch attachments beyond switch hosting.
    pub attachments: BTreeMap<String, String>,
    pub measurements: BTreeMap<String, MeasurementSet>,
    pub packages: Vec<(VnfKind, String)>,
    pub imc_pairs: Vec<(u8, InfoModelKind, InfoModelKind)>,
    pub pc_pairs: Vec<(u8, ProtocolKind, ProtocolKind)>,
    pub predeploys: Vec<PredeployLine>,
    pub requests: Vec<ServiceRequest>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 42,
            costs: ScenarioCosts::default(),
            scale_k: 1,
            placement: PlacementStrategy::Random,
            chain_order: None,
            fixed_node: String::new(),
            app_master: String::new(),
            devices: Vec::new(),
            switches: Vec::new(),
            attachments: BTreeMap::new(),
            measurements: BTreeMap::new(),
            packages: Vec::new(),
            imc_pairs: Vec::new(),
            pc_pairs: Vec::new(),
            predeploys: Vec::new(),
            requests: Vec::new(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("config line {line}: {reason}")]
pub struct ConfigError {
    pub line: usize,
    pub reason: String,
}

fn bad(line: usize, reason: impl Into<String>) -> ConfigError {
    ConfigError { line, reason: reason.into() }
}

fn parse_aggregation(s: &str, line: usize) -> Result<(Aggregation, Option<DaConfig>), ConfigError> {
    let (tag, param) = match s.split_once(':') {
        Some((t, p)) => (t, Some(p)),
        None => (s, None),
    };
    match tag {
        "None" => Ok((Aggregation::None, None)),
        "AverageData" => {
            let window: usize = param
                .ok_or_else(|| bad(line, "AverageData needs a window, e.g. AverageData:5"))?
                .parse()
                .map_err(|_| bad(line, "bad window"))?;
            Ok((Aggregation::AverageData, Some(DaConfig::average(window))))
        }
        "ThresholdData" => {
            let threshold: f64 = param
                .ok_or_else(|| bad(line, "ThresholdData needs a threshold, e.g. ThresholdData:50"))?
                .parse()
                .map_err(|_| bad(line, "bad threshold"))?;
            Ok((Aggregation::ThresholdData, Some(DaConfig::threshold(threshold))))
        }
        other => Err(bad(line, format!("unknown aggregation {:?}", other))),
    }
}

fn aggregation_str(req: &ServiceRequest) -> String {
    match (req.requirements.aggregation, &req.da_config) {
        (Aggregation::None, _) => "None".to_string(),
        (Aggregation::AverageData, Some(c)) => format!("AverageData:{}", c.window),
        (Aggregation::ThresholdData, Some(c)) => format!("ThresholdData:{}", c.threshold),
        (a, None) => a.to_string(),
    }
}

fn parse_protocol(s: &str, line: usize) -> Result<ProtocolKind, ConfigError> {
    ProtocolKind::parse(s).ok_or_else(|| bad(line, format!("unknown protocol {:?}", s)))
}

fn parse_model(s: &str, line: usize) -> Result<InfoModelKind, ConfigError> {
    InfoModelKind::parse(s).ok_or_else(|| bad(line, format!("unknown info model {:?}", s)))
}

fn parse_kind(s: &str, line: usize) -> Result<VnfKind, ConfigError> {
    VnfKind::parse(s).ok_or_else(|| bad(line, format!("unknown function kind {:?}", s)))
}

/// Parses the sectioned scenario grammar. Unknown keys are errors; devices
/// are validated against their class invariants.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let mut cfg = ScenarioConfig::default();
    let mut section = String::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line.starts_with('[') && line.ends_with(']') {
            section = line[1..line.len() - 1].to_string();
            match section.as_str() {
                "costs" | "devices" | "store" | "apps" => continue,
                other => return Err(bad(line_no, format!("unknown section [{}]", other))),
            }
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(line_no, "expected key=value"))?;

        match (section.as_str(), key) {
            ("costs", "seed") => {
                cfg.seed = value.parse().map_err(|_| bad(line_no, "bad seed"))?;
            }
            ("costs", "hop_delay") => {
                cfg.costs.hop_delay = value.parse().map_err(|_| bad(line_no, "bad hop_delay"))?;
            }
            ("costs", "proc_cost") => {
                cfg.costs.proc_cost = value.parse().map_err(|_| bad(line_no, "bad proc_cost"))?;
            }
            ("costs", "join_cost") => {
                cfg.costs.join_cost = value.parse().map_err(|_| bad(line_no, "bad join_cost"))?;
            }
            ("costs", "scale_k") => {
                let k: u32 = value.parse().map_err(|_| bad(line_no, "bad scale_k"))?;
                if k < 1 {
                    return Err(bad(line_no, "scale_k must be at least 1"));
                }
                cfg.scale_k = k;
            }
            ("costs", "placement") => {
                cfg.placement = match value {
                    "random" => PlacementStrategy::Random,
                    "ordered" => PlacementStrategy::Ordered,
                    other => return Err(bad(line_no, format!("unknown placement {:?}", other))),
                };
            }
            ("costs", "chain_order") => {
                let kinds = value
                    .split(',')
                    .map(|s| parse_kind(s, line_no))
                    .collect::<Result<Vec<_>, _>>()?;
                cfg.chain_order = Some(kinds);
            }
            ("costs", "fixed_node") => cfg.fixed_node = value.to_string(),
            ("costs", "app_master") => cfg.app_master = value.to_string(),

            ("devices", "device") => {
                let f: Vec<&str> = value.split('|').collect();
                if f.len() != 10 {
                    return Err(bad(line_no, format!("device needs 10 fields, got {}", f.len())));
                }
                let d = DeviceDescriptor {
                    id: f[0].to_string(),
                    class: DeviceClass::parse(f[1])
                        .ok_or_else(|| bad(line_no, "class must be A or B"))?,
                    props: DeviceProps {
                        protocol: parse_protocol(f[2], line_no)?,
                        info_model: parse_model(f[3], line_no)?,
                    },
                    capabilities: Capabilities {
                        energy_pct: f[4].parse().map_err(|_| bad(line_no, "bad energy"))?,
                        location: (
                            f[5].parse().map_err(|_| bad(line_no, "bad x"))?,
                            f[6].parse().map_err(|_| bad(line_no, "bad y"))?,
                        ),
                        response_time: f[7]
                            .parse()
                            .map_err(|_| bad(line_no, "bad response_time"))?,
                        host_capacity: f[8].parse().map_err(|_| bad(line_no, "bad capacity"))?,
                    },
                    proxy: if f[9].is_empty() { None } else { Some(f[9].to_string()) },
                };
                let violations = validate_descriptor(&d);
                if !violations.is_empty() {
                    let msgs: Vec<String> =
                        violations.iter().map(|v| v.to_string()).collect();
                    return Err(bad(line_no, msgs.join("; ")));
                }
                cfg.devices.push(d);
            }
            ("devices", "switch") => {
                let f: Vec<&str> = value.split('|').collect();
                if f.len() != 3 {
                    return Err(bad(line_no, "switch needs id|host|links"));
                }
                let links = if f[2].is_empty() {
                    Vec::new()
                } else {
                    f[2].split(',').map(|s| s.to_string()).collect()
                };
                cfg.switches.push(SwitchLine {
                    id: f[0].to_string(),
                    host: f[1].to_string(),
                    links,
                });
            }
            ("devices", "attach") => {
                let (dev, sw) = value
                    .split_once('|')
                    .ok_or_else(|| bad(line_no, "attach needs device|switch"))?;
                cfg.attachments.insert(dev.to_string(), sw.to_string());
            }
            ("devices", "measurements") => {
                let f: Vec<&str> = value.split('|').collect();
                if f.len() != 4 {
                    return Err(bad(line_no, "measurements needs device|quantity|unit|values"));
                }
                let values = f[3]
                    .split(',')
                    .map(|v| v.parse::<f64>().map_err(|_| bad(line_no, "bad value")))
                    .collect::<Result<Vec<_>, _>>()?;
                cfg.measurements.insert(
                    f[0].to_string(),
                    MeasurementSet {
                        quantity: f[1].to_string(),
                        unit: f[2].to_string(),
                        values,
                    },
                );
            }

            ("store", "package") => {
                let (kind, version) = value
                    .split_once('|')
                    .ok_or_else(|| bad(line_no, "package needs kind|version"))?;
                cfg.packages
                    .push((parse_kind(kind, line_no)?, version.to_string()));
            }
            ("store", "imc_pair") => {
                let f: Vec<&str> = value.split('|').collect();
                if f.len() != 3 {
                    return Err(bad(line_no, "imc_pair needs variant|source|target"));
                }
                cfg.imc_pairs.push((
                    f[0].parse().map_err(|_| bad(line_no, "bad variant"))?,
                    parse_model(f[1], line_no)?,
                    parse_model(f[2], line_no)?,
                ));
            }
            ("store", "pc_pair") => {
                let f: Vec<&str> = value.split('|').collect();
                if f.len() != 3 {
                    return Err(bad(line_no, "pc_pair needs variant|source|target"));
                }
                cfg.pc_pairs.push((
                    f[0].parse().map_err(|_| bad(line_no, "bad variant"))?,
                    parse_protocol(f[1], line_no)?,
                    parse_protocol(f[2], line_no)?,
                ));
            }
            ("store", "predeploy") => {
                let f: Vec<&str> = value.split('|').collect();
                if f.len() < 2 || f.len() > 3 {
                    return Err(bad(line_no, "predeploy needs kind|host[|fronts]"));
                }
                cfg.predeploys.push(PredeployLine {
                    kind: parse_kind(f[0], line_no)?,
                    host: f[1].to_string(),
                    fronts: match f.get(2) {
                        Some(k) if !k.is_empty() => Some(parse_kind(k, line_no)?),
                        _ => None,
                    },
                });
            }

            ("apps", "request") => {
                let f: Vec<&str> = value.split('|').collect();
                if f.len() != 6 {
                    return Err(bad(line_no, "request needs app|protocol|model|aggregation|descriptor|device"));
                }
                let (aggregation, da_config) = parse_aggregation(f[3], line_no)?;
                let requirements = AppRequirements {
                    protocol: parse_protocol(f[1], line_no)?,
                    info_model: parse_model(f[2], line_no)?,
                    aggregation,
                };
                requirements
                    .validate()
                    .map_err(|e| bad(line_no, e.to_string()))?;
                let descriptor = match f[4].split_once(':') {
                    Some(("sensor", quantity)) => {
                        ServiceDescriptor::SensorData { quantity: quantity.to_string() }
                    }
                    Some(("robot", path)) => {
                        ServiceDescriptor::RobotTask { command_path: path.to_string() }
                    }
                    _ => return Err(bad(line_no, "descriptor must be sensor:<q> or robot:<path>")),
                };
                cfg.requests.push(ServiceRequest {
                    app: f[0].to_string(),
                    requirements,
                    descriptor,
                    device: f[5].to_string(),
                    da_config,
                });
            }

            ("", k) => return Err(bad(line_no, format!("key {:?} before any section", k))),
            (s, k) => return Err(bad(line_no, format!("unknown key {:?} in [{}]", k, s))),
        }
    }

    if cfg.fixed_node.is_empty() {
        cfg.fixed_node = cfg
            .switches
            .first()
            .map(|s| s.host.clone())
            .unwrap_or_default();
    }
    if cfg.app_master.is_empty() {
        cfg.app_master = cfg.requests.first().map(|r| r.app.clone()).unwrap_or_default();
    }
    Ok(cfg)
}

/// Writes a config back out in the file grammar; parsing the result yields
/// the same config.
pub fn render_scenario(cfg: &ScenarioConfig) -> String {
    let mut out = String::new();
    out.push_str("[costs]\n");
    out.push_str(&format!("seed={}\n", cfg.seed));
    out.push_str(&format!("hop_delay={}\n", cfg.costs.hop_delay));
    out.push_str(&format!("proc_cost={}\n", cfg.costs.proc_cost));
    out.push_str(&format!("join_cost={}\n", cfg.costs.join_cost));
    out.push_str(&format!("scale_k={}\n", cfg.scale_k));
    let placement = match cfg.placement {
        PlacementStrategy::Random => "random",
        PlacementStrategy::Ordered => "ordered",
    };
    out.push_str(&format!("placement={}\n", placement));
    if let Some(order) = &cfg.chain_order {
        let kinds: Vec<String> = order.iter().map(|k| k.to_string()).collect();
        out.push_str(&format!("chain_order={}\n", kinds.join(",")));
    }
    out.push_str(&format!("fixed_node={}\n", cfg.fixed_node));
    out.push_str(&format!("app_master={}\n", cfg.app_master));

    out.push_str("\n[devices]\n");
    for d in &cfg.devices {
        out.push_str(&format!(
            "device={}|{}|{}|{}|{}|{}|{}|{}|{}|{}\n",
            d.id,
            d.class.as_str(),
            d.props.protocol,
            d.props.info_model,
            d.capabilities.energy_pct,
            d.capabilities.location.0,
            d.capabilities.location.1,
            d.capabilities.response_time,
            d.capabilities.host_capacity,
            d.proxy.clone().unwrap_or_default(),
        ));
    }
    for s in &cfg.switches {
        out.push_str(&format!("switch={}|{}|{}\n", s.id, s.host, s.links.join(",")));
    }
    for (dev, sw) in &cfg.attachments {
        out.push_str(&format!("attach={}|{}\n", dev, sw));
    }
    for (dev, m) in &cfg.measurements {
        let values: Vec<String> = m.values.iter().map(|v| v.to_string()).collect();
        out.push_str(&format!(
            "measurements={}|{}|{}|{}\n",
            dev,
            m.quantity,
            m.unit,
            values.join(",")
        ));
    }

    out.push_str("\n[store]\n");
    for (kind, version) in &cfg.packages {
        out.push_str(&format!("package={}|{}\n", kind, version));
    }
    for (v, s, t) in &cfg.imc_pairs {
        out.push_str(&format!("imc_pair={}|{}|{}\n", v, s, t));
    }
    for (v, s, t) in &cfg.pc_pairs {
        out.push_str(&format!("pc_pair={}|{}|{}\n", v, s, t));
    }
    for p in &cfg.predeploys {
        match &p.fronts {
            Some(k) => out.push_str(&format!("predeploy={}|{}|{}\n", p.kind, p.host, k)),
            None => out.push_str(&format!("predeploy={}|{}\n", p.kind, p.host)),
        }
    }

    out.push_str("\n[apps]\n");
    for r in &cfg.requests {
        let descriptor = match &r.descriptor {
            ServiceDescriptor::SensorData { quantity } => format!("sensor:{}", quantity),
            ServiceDescriptor::RobotTask { command_path } => format!("robot:{}", command_path),
        };
        out.push_str(&format!(
            "request={}|{}|{}|{}|{}|{}\n",
            r.app,
            r.requirements.protocol,
            r.requirements.info_model,
            aggregation_str(r),
            descriptor,
            r.device,
        ));
    }
    out
}

fn device_b(id: &str, protocol: ProtocolKind, capacity: u32) -> DeviceDescriptor {
    DeviceDescriptor {
        id: id.to_string(),
        class: DeviceClass::B,
        props: DeviceProps { protocol, info_model: InfoModelKind::Raw },
        capabilities: Capabilities {
            energy_pct: 90,
            location: (0.0, 0.0),
            response_time: 2,
            host_capacity: capacity,
        },
        proxy: None,
    }
}

fn device_a(id: &str, protocol: ProtocolKind, proxy: &str) -> DeviceDescriptor {
    DeviceDescriptor {
        id: id.to_string(),
        class: DeviceClass::A,
        props: DeviceProps { protocol, info_model: InfoModelKind::Raw },
        capabilities: Capabilities {
            energy_pct: 70,
            location: (1.0, 1.0),
            response_time: 5,
            host_capacity: 0,
        },
        proxy: Some(proxy.to_string()),
    }
}

/// The scaling-test topology family: `k` instances of each of the two VNF
/// kinds, one load balancer per group when `k >= 2`, and a linear run of
/// `2k + 1` switches. Overlay node count is `2k + LBs + switches`.
pub fn gen_scale_topology(k: u32) -> ScenarioConfig {
    let k = k.max(1);
    let n_switches = 2 * k + 1;
    let mut cfg = ScenarioConfig {
        placement: PlacementStrategy::Ordered,
        scale_k: k,
        fixed_node: "gw-fixed".into(),
        app_master: "app-1".into(),
        ..Default::default()
    };

    let sw_name = |i: u32| format!("SW{:02}", i);

    // Switch hosts: the fixed node fronts the classifier, the rest get
    // dedicated capability-0 hosts.
    cfg.devices.push(device_b("gw-fixed", ProtocolKind::HttpLike, 0));
    for i in 2..=n_switches {
        cfg.devices
            .push(device_b(&format!("s{:02}", i), ProtocolKind::HttpLike, 0));
    }
    // VNF hosts, one per instance, attached along the line.
    for i in 1..=(2 * k) {
        let host = format!("v{:02}", i);
        cfg.devices.push(device_b(&host, ProtocolKind::HttpLike, 1));
        cfg.attachments.insert(host, sw_name(i + 1));
    }
    // Load-balancer hosts, pre-provisioned as part of the fabric.
    if k >= 2 {
        cfg.devices.push(device_b("x-lb1", ProtocolKind::HttpLike, 1));
        cfg.devices.push(device_b("x-lb2", ProtocolKind::HttpLike, 1));
        cfg.attachments.insert("x-lb1".into(), sw_name(2));
        cfg.attachments.insert("x-lb2".into(), sw_name(k + 2));
        cfg.predeploys.push(PredeployLine {
            kind: VnfKind::lb(1),
            host: "x-lb1".into(),
            fronts: Some(VnfKind::da(1)),
        });
        cfg.predeploys.push(PredeployLine {
            kind: VnfKind::lb(1),
            host: "x-lb2".into(),
            fronts: Some(VnfKind::imc(1)),
        });
    }

    cfg.devices
        .push(device_a("sensor-a", ProtocolKind::HttpLike, "gw-fixed"));
    cfg.attachments
        .insert("sensor-a".into(), sw_name(n_switches));
    cfg.measurements.insert(
        "sensor-a".into(),
        MeasurementSet {
            quantity: "sound".into(),
            unit: "dB".into(),
            values: vec![10.0, 20.0, 30.0, 40.0, 60.0],
        },
    );

    for i in 1..=n_switches {
        let host = if i == 1 { "gw-fixed".to_string() } else { format!("s{:02}", i) };
        let mut links = Vec::new();
        if i > 1 {
            links.push(sw_name(i - 1));
        }
        if i < n_switches {
            links.push(sw_name(i + 1));
        }
        cfg.switches.push(SwitchLine { id: sw_name(i), host, links });
    }

    for kind in [VnfKind::da(1), VnfKind::imc(1), VnfKind::lb(1)] {
        cfg.packages.push((kind, "1.0".into()));
    }
    cfg.imc_pairs
        .push((1, InfoModelKind::Raw, InfoModelKind::SenmlLike));

    cfg.requests.push(ServiceRequest {
        app: "app-1".into(),
        requirements: AppRequirements {
            protocol: ProtocolKind::HttpLike,
            info_model: InfoModelKind::SenmlLike,
            aggregation: Aggregation::AverageData,
        },
        descriptor: ServiceDescriptor::SensorData { quantity: "sound".into() },
        device: "sensor-a".into(),
        da_config: Some(DaConfig::average(5)),
    });
    cfg
}

/// Overlay node count the generated family provisions: `2k` VNF hosts, the
/// group load balancers, and `2k + 1` switch hosts.
pub fn scale_overlay_nodes(k: u32) -> u32 {
    let lbs = if k >= 2 { 2 } else { 0 };
    2 * k + lbs + (2 * k + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_render_round_trip() {
        let cfg = gen_scale_topology(2);
        let text = render_scenario(&cfg);
        let back = parse_scenario(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn scale_counts_match_construction_rule() {
        // Counting generated config entries cross-checks the formula.
        for k in 1..=6u32 {
            let cfg = gen_scale_topology(k);
            let vnf_hosts = cfg
                .devices
                .iter()
                .filter(|d| d.id.starts_with('v'))
                .count() as u32;
            let lb_hosts = cfg
                .devices
                .iter()
                .filter(|d| d.id.starts_with("x-lb"))
                .count() as u32;
            let switches = cfg.switches.len() as u32;
            assert_eq!(vnf_hosts, 2 * k);
            assert_eq!(lb_hosts, if k >= 2 { 2 } else { 0 });
            assert_eq!(switches, 2 * k + 1);
            assert_eq!(vnf_hosts + lb_hosts + switches, scale_overlay_nodes(k));
        }
        assert_eq!(scale_overlay_nodes(3), 15);
        assert_eq!(scale_overlay_nodes(1), 5);
        assert_eq!(scale_overlay_nodes(2), 11);
    }

    #[test]
    fn rejects_unknown_section_and_bad_device() {
        assert!(parse_scenario("[nope]\n").is_err());
        let err = parse_scenario(
            "[devices]\ndevice=sensor|A|CoapLike|Raw|80|0|0|5|2|rpi\n",
        )
        .unwrap_err();
        assert!(err.reason.contains("capacity 0"));
    }

    #[test]
    fn aggregation_params_round_trip() {
        let (agg, cfg) = parse_aggregation("ThresholdData:50", 1).unwrap();
        assert_eq!(agg, Aggregation::ThresholdData);
        assert_eq!(cfg.unwrap().threshold, 50.0);
        let (agg, cfg) = parse_aggregation("AverageData:3", 1).unwrap();
        assert_eq!(agg, Aggregation::AverageData);
        assert_eq!(cfg.unwrap().window, 3);
        assert!(parse_aggregation("AverageData", 1).is_err());
    }
}
