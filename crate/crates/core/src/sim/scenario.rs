//! Scenario runners: the single-run entry point, the upgrade-vs-fresh
//! comparison, the chain-order comparison, and the built-in scenario
//! configurations for the two reference applications.

use crate::agents::{ServiceDescriptor, ServiceRequest};
use crate::model::{
    Aggregation, AppRequirements, Capabilities, DeviceClass, DeviceDescriptor, DeviceProps,
    InfoModelKind, ProtocolKind,
};
use crate::orchestrator::PlacementStrategy;
use crate::sim::config::{MeasurementSet, PredeployLine, ScenarioConfig, SwitchLine};
use crate::sim::metrics::MetricsReport;
use crate::sim::world::{SimError, World};
use crate::vnf::{DaConfig, VnfKind};

pub struct ScenarioRun {
    pub world: World,
    pub report: MetricsReport,
}

/// Builds the world, drives it to quiescence, and reports.
pub fn run_scenario(cfg: ScenarioConfig) -> Result<ScenarioRun, SimError> {
    let mut world = World::new(cfg)?;
    world.run();
    let report = world.report();
    Ok(ScenarioRun { world, report })
}

/// Runs the same scenario twice: once on a fresh domain and once with the
/// configured pre-deployments in place (the gateway-upgrade arm).
pub fn run_upgrade_scenario(cfg: ScenarioConfig) -> Result<(ScenarioRun, ScenarioRun), SimError> {
    let mut fresh_cfg = cfg.clone();
    fresh_cfg.predeploys.clear();
    let fresh = run_scenario(fresh_cfg)?;
    let upgrade = run_scenario(cfg)?;
    Ok((fresh, upgrade))
}

/// Runs the scenario with the natural decomposition order, then again with
/// the order reversed (or the configured override), same seed and topology.
pub fn compare_chain_orders(cfg: ScenarioConfig) -> Result<(ScenarioRun, ScenarioRun), SimError> {
    let mut first_cfg = cfg.clone();
    first_cfg.chain_order = None;
    let first = run_scenario(first_cfg)?;

    let mut second_cfg = cfg.clone();
    if second_cfg.chain_order.is_none() {
        let natural: Vec<VnfKind> = first
            .world
            .flows
            .values()
            .next()
            .and_then(|f| f.chain_id.clone())
            .and_then(|id| {
                first
                    .world
                    .controller
                    .registration(&id)
                    .map(|r| r.chain.functions.clone())
            })
            .unwrap_or_default();
        let mut reversed = natural;
        reversed.reverse();
        second_cfg.chain_order = Some(reversed);
    }
    let second = run_scenario(second_cfg)?;
    Ok((first, second))
}

fn host(id: &str, protocol: ProtocolKind, capacity: u32) -> DeviceDescriptor {
    DeviceDescriptor {
        id: id.into(),
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

fn sensor(
    id: &str,
    protocol: ProtocolKind,
    proxy: &str,
) -> DeviceDescriptor {
    DeviceDescriptor {
        id: id.into(),
        class: DeviceClass::A,
        props: DeviceProps { protocol, info_model: InfoModelKind::Raw },
        capabilities: Capabilities {
            energy_pct: 70,
            location: (1.0, 0.0),
            response_time: 5,
            host_capacity: 0,
        },
        proxy: Some(proxy.into()),
    }
}

fn linear_switches(hosts: &[&str]) -> Vec<SwitchLine> {
    let n = hosts.len();
    (0..n)
        .map(|i| {
            let mut links = Vec::new();
            if i > 0 {
                links.push(format!("SW{}", i));
            }
            if i + 1 < n {
                links.push(format!("SW{}", i + 2));
            }
            SwitchLine { id: format!("SW{}", i + 1), host: hosts[i].into(), links }
        })
        .collect()
}

/// Earthquake recovery: sound sensors report raw values over an HTTP-like
/// link; the application wants SenML-like records of sounds above a
/// threshold, so the chain is aggregator plus model converter.
pub fn earthquake_config() -> ScenarioConfig {
    let mut cfg = ScenarioConfig {
        placement: PlacementStrategy::Ordered,
        fixed_node: "gw-fixed".into(),
        app_master: "quake-app".into(),
        ..Default::default()
    };
    cfg.devices = vec![
        host("gw-fixed", ProtocolKind::HttpLike, 0),
        host("h2", ProtocolKind::HttpLike, 1),
        host("h3", ProtocolKind::HttpLike, 1),
        sensor("sensor-a", ProtocolKind::HttpLike, "gw-fixed"),
    ];
    cfg.switches = linear_switches(&["gw-fixed", "h2", "h3"]);
    cfg.attachments.insert("sensor-a".into(), "SW3".into());
    cfg.measurements.insert(
        "sensor-a".into(),
        MeasurementSet {
            quantity: "sound".into(),
            unit: "dB".into(),
            values: vec![10.0, 20.0, 30.0, 40.0, 60.0],
        },
    );
    cfg.packages = vec![
        (VnfKind::da(1), "1.0".into()),
        (VnfKind::imc(1), "1.0".into()),
    ];
    cfg.imc_pairs = vec![(1, InfoModelKind::Raw, InfoModelKind::SenmlLike)];
    cfg.requests = vec![ServiceRequest {
        app: "quake-app".into(),
        requirements: AppRequirements {
            protocol: ProtocolKind::HttpLike,
            info_model: InfoModelKind::SenmlLike,
            aggregation: Aggregation::ThresholdData,
        },
        descriptor: ServiceDescriptor::SensorData { quantity: "sound".into() },
        device: "sensor-a".into(),
        da_config: Some(DaConfig::threshold(50.0)),
    }];
    cfg
}

/// Fire detection and fighting: temperature sensors speak CoAP and raw
/// data, the application wants thresholded SenML over HTTP (aggregator,
/// model converter, protocol converter), and afterwards it sends a grab
/// command that the gateway turns into a robot-protocol envelope.
pub fn fire_config() -> ScenarioConfig {
    let mut cfg = ScenarioConfig {
        placement: PlacementStrategy::Ordered,
        fixed_node: "gw-fixed".into(),
        app_master: "fire-app".into(),
        ..Default::default()
    };
    let mut robot = sensor("robot-1", ProtocolKind::LcpLike, "gw-fixed");
    robot.props.info_model = InfoModelKind::RobotCmd;
    cfg.devices = vec![
        host("gw-fixed", ProtocolKind::HttpLike, 0),
        host("h2", ProtocolKind::HttpLike, 2),
        host("h3", ProtocolKind::HttpLike, 2),
        host("h4", ProtocolKind::HttpLike, 2),
        sensor("sensor-a", ProtocolKind::CoapLike, "gw-fixed"),
        robot,
    ];
    cfg.switches = linear_switches(&["gw-fixed", "h2", "h3", "h4"]);
    cfg.attachments.insert("sensor-a".into(), "SW4".into());
    cfg.attachments.insert("robot-1".into(), "SW4".into());
    cfg.measurements.insert(
        "sensor-a".into(),
        MeasurementSet {
            quantity: "temperature".into(),
            unit: "Cel".into(),
            values: vec![20.0, 22.0, 90.0],
        },
    );
    cfg.packages = vec![
        (VnfKind::da(1), "1.0".into()),
        (VnfKind::imc(1), "1.0".into()),
        (VnfKind::imc(3), "1.0".into()),
        (VnfKind::pc(1), "1.0".into()),
        (VnfKind::pc(2), "1.0".into()),
    ];
    cfg.imc_pairs = vec![
        (1, InfoModelKind::Raw, InfoModelKind::SenmlLike),
        (3, InfoModelKind::SenmlLike, InfoModelKind::RobotCmd),
    ];
    cfg.pc_pairs = vec![
        (1, ProtocolKind::CoapLike, ProtocolKind::HttpLike),
        (2, ProtocolKind::HttpLike, ProtocolKind::LcpLike),
    ];
    cfg.requests = vec![
        ServiceRequest {
            app: "fire-app".into(),
            requirements: AppRequirements {
                protocol: ProtocolKind::HttpLike,
                info_model: InfoModelKind::SenmlLike,
                aggregation: Aggregation::ThresholdData,
            },
            descriptor: ServiceDescriptor::SensorData { quantity: "temperature".into() },
            device: "sensor-a".into(),
            da_config: Some(DaConfig::threshold(45.0)),
        },
        ServiceRequest {
            app: "fire-app".into(),
            requirements: AppRequirements {
                protocol: ProtocolKind::HttpLike,
                info_model: InfoModelKind::SenmlLike,
                aggregation: Aggregation::None,
            },
            descriptor: ServiceDescriptor::RobotTask {
                command_path: "/robot/grab?item=extinguisher".into(),
            },
            device: "robot-1".into(),
            da_config: None,
        },
    ];
    cfg
}

/// The upgrade experiment: the fire chain (aggregator, model converter,
/// protocol converter) with the model converter already deployed in the
/// upgrade arm.
pub fn upgrade_config() -> ScenarioConfig {
    let mut cfg = fire_config();
    cfg.requests.truncate(1);
    cfg.predeploys = vec![PredeployLine {
        kind: VnfKind::imc(1),
        host: "h3".into(),
        fronts: None,
    }];
    // One slot per host so both arms land on the same placement.
    for d in cfg.devices.iter_mut() {
        if d.capabilities.host_capacity > 1 {
            d.capabilities.host_capacity = 1;
        }
    }
    cfg
}
