//! Control-plane signaling endpoints: the Application Agent, the IoT
//! Provider Agent, and the VNF Agent with its chain-decomposition rule.
//!
//! Decomposition is a pure function of the consumer-side requirements and
//! the producer-side properties: an aggregator when aggregation is asked
//! for, a model converter when the info models differ, a protocol converter
//! when the protocols differ, in data-path order from the producer side.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::model::{
    AppRequirements, Aggregation, ChainId, ChainSpec, DeviceDescriptor, DeviceProps, Tick,
};
use crate::vnf::{ConversionTable, DaConfig, VnfKind};

#[derive(Debug, Clone, PartialEq)]
pub enum ServiceDescriptor {
    /// Collect measurements of one quantity from a sensor.
    SensorData { quantity: String },
    /// Drive a robot with a command expressed as a resource path.
    RobotTask { command_path: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceRequest {
    pub app: String,
    pub requirements: AppRequirements,
    pub descriptor: ServiceDescriptor,
    /// Device named by the scenario; the provider resolves it against its
    /// repository.
    pub device: String,
    pub da_config: Option<DaConfig>,
}

/// What the provider hands to the VNF agent: the consumer-side requirements
/// and producer-side properties of the flow.
#[derive(Debug, Clone, PartialEq)]
pub struct GatewayRequest {
    pub app: String,
    pub device: String,
    pub requirements: AppRequirements,
    pub device_props: DeviceProps,
    pub descriptor: ServiceDescriptor,
    pub da_config: Option<DaConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Notification {
    /// The gateway is up; contact the flow classifier at this address.
    ServiceAvailable { classifier: String },
    ServiceUnavailable { retry_after: Tick },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("no matching devices for {0}")]
    NoMatchingDevices(String),
    #[error("no conversion from {from} to {to} is provisionable")]
    InfeasibleConversion { from: String, to: String },
    #[error("invalid requirements: {0}")]
    InvalidRequirements(String),
}

/// The IoT provider's device repository.
#[derive(Debug, Clone, Default)]
pub struct DeviceRepository {
    devices: BTreeMap<String, DeviceDescriptor>,
}

impl DeviceRepository {
    pub fn insert(&mut self, d: DeviceDescriptor) {
        self.devices.insert(d.id.clone(), d);
    }

    pub fn get(&self, id: &str) -> Option<&DeviceDescriptor> {
        self.devices.get(id)
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    pub fn all(&self) -> Vec<DeviceDescriptor> {
        self.devices.values().cloned().collect()
    }
}

/// Builds the gateway request for a service. Data collection converts from
/// the device toward the application; a robot task flows the other way, so
/// the consumer side is the robot and the producer side is the application.
pub fn provider_request_gateway(
    req: &ServiceRequest,
    repository: &DeviceRepository,
) -> Result<GatewayRequest, AgentError> {
    let device = repository
        .get(&req.device)
        .ok_or_else(|| AgentError::NoMatchingDevices(req.device.clone()))?;
    let (requirements, device_props) = match req.descriptor {
        ServiceDescriptor::SensorData { .. } => (req.requirements, device.props),
        ServiceDescriptor::RobotTask { .. } => (
            AppRequirements {
                protocol: device.props.protocol,
                info_model: device.props.info_model,
                aggregation: Aggregation::None,
            },
            DeviceProps {
                protocol: req.requirements.protocol,
                info_model: req.requirements.info_model,
            },
        ),
    };
    Ok(GatewayRequest {
        app: req.app.clone(),
        device: req.device.clone(),
        requirements,
        device_props,
        descriptor: req.descriptor.clone(),
        da_config: req.da_config,
    })
}

fn label(n: u32) -> String {
    // A, B, ..., Z, AA, AB, ...
    let mut n = n;
    let mut out = Vec::new();
    loop {
        out.push(b'A' + (n % 26) as u8);
        if n < 26 {
            break;
        }
        n = n / 26 - 1;
    }
    out.reverse();
    String::from_utf8(out).expect("ascii labels")
}

/// Chain labels assigned in registration order and stable per
/// (requirements, properties) pair.
#[derive(Debug, Clone, Default)]
pub struct ChainRegistry {
    assigned: BTreeMap<(AppRequirements, DeviceProps), ChainSpec>,
    next: u32,
}

impl ChainRegistry {
    pub fn get(&self, app: &AppRequirements, dev: &DeviceProps) -> Option<&ChainSpec> {
        self.assigned.get(&(*app, *dev))
    }

    pub fn chains(&self) -> impl Iterator<Item = &ChainSpec> {
        self.assigned.values()
    }

    /// Decomposes a gateway request into its chain: an aggregator when
    /// aggregation is required, the model converter covering the
    /// (producer, consumer) model pair, the protocol converter covering the
    /// protocol pair. Deterministic and memoized per input pair.
    pub fn decompose(
        &mut self,
        app: &AppRequirements,
        dev: &DeviceProps,
        table: &ConversionTable,
    ) -> Result<ChainSpec, AgentError> {
        app.validate()
            .map_err(|e| AgentError::InvalidRequirements(e.to_string()))?;
        if let Some(existing) = self.assigned.get(&(*app, *dev)) {
            return Ok(existing.clone());
        }

        let mut functions: Vec<VnfKind> = Vec::new();
        if app.aggregation != Aggregation::None {
            functions.push(VnfKind::da(1));
        }
        if app.info_model != dev.info_model {
            let kind = table.find_imc(dev.info_model, app.info_model).ok_or_else(|| {
                AgentError::InfeasibleConversion {
                    from: dev.info_model.to_string(),
                    to: app.info_model.to_string(),
                }
            })?;
            functions.push(kind);
        }
        if app.protocol != dev.protocol {
            let kind = table.find_pc(dev.protocol, app.protocol).ok_or_else(|| {
                AgentError::InfeasibleConversion {
                    from: dev.protocol.to_string(),
                    to: app.protocol.to_string(),
                }
            })?;
            functions.push(kind);
        }

        let chain = ChainSpec::new(ChainId::new(label(self.next)), functions);
        self.next += 1;
        self.assigned.insert((*app, *dev), chain.clone());
        Ok(chain)
    }
}

/// The VNF agent: owns the chain registry and coalesces concurrent
/// provisioning of the same (requirements, properties) pair onto one plan.
#[derive(Debug, Clone, Default)]
pub struct VnfAgent {
    pub registry: ChainRegistry,
    in_flight: BTreeMap<(AppRequirements, DeviceProps), u64>,
}

impl VnfAgent {
    pub fn in_flight_plan(&self, app: &AppRequirements, dev: &DeviceProps) -> Option<u64> {
        self.in_flight.get(&(*app, *dev)).copied()
    }

    pub fn mark_in_flight(&mut self, app: &AppRequirements, dev: &DeviceProps, plan: u64) {
        self.in_flight.insert((*app, *dev), plan);
    }

    pub fn clear_in_flight(&mut self, app: &AppRequirements, dev: &DeviceProps) {
        self.in_flight.remove(&(*app, *dev));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Capabilities, DeviceClass, InfoModelKind, ProtocolKind};

    fn table() -> ConversionTable {
        ConversionTable::default()
    }

    fn row1() -> (AppRequirements, DeviceProps) {
        (
            AppRequirements {
                protocol: ProtocolKind::HttpLike,
                info_model: InfoModelKind::SenmlLike,
                aggregation: Aggregation::AverageData,
            },
            DeviceProps { protocol: ProtocolKind::CoapLike, info_model: InfoModelKind::Raw },
        )
    }

    fn row2() -> (AppRequirements, DeviceProps) {
        (
            AppRequirements {
                protocol: ProtocolKind::HttpLike,
                info_model: InfoModelKind::SensormlLike,
                aggregation: Aggregation::AverageData,
            },
            DeviceProps { protocol: ProtocolKind::HttpLike, info_model: InfoModelKind::Raw },
        )
    }

    #[test]
    fn decompose_yields_the_reference_chains() {
        let mut registry = ChainRegistry::default();
        let (app1, dev1) = row1();
        let chain_a = registry.decompose(&app1, &dev1, &table()).unwrap();
        assert_eq!(chain_a.chain_id, ChainId::new("A"));
        assert_eq!(
            chain_a.functions,
            vec![VnfKind::da(1), VnfKind::imc(1), VnfKind::pc(1)]
        );

        let (app2, dev2) = row2();
        let chain_b = registry.decompose(&app2, &dev2, &table()).unwrap();
        assert_eq!(chain_b.chain_id, ChainId::new("B"));
        assert_eq!(chain_b.functions, vec![VnfKind::da(1), VnfKind::imc(2)]);
    }

    #[test]
    fn decompose_is_stable_per_pair() {
        let mut registry = ChainRegistry::default();
        let (app, dev) = row1();
        let first = registry.decompose(&app, &dev, &table()).unwrap();
        let second = registry.decompose(&app, &dev, &table()).unwrap();
        assert_eq!(first, second);

        let (app2, dev2) = row2();
        registry.decompose(&app2, &dev2, &table()).unwrap();
        assert_eq!(
            registry.decompose(&app, &dev, &table()).unwrap().chain_id,
            ChainId::new("A")
        );
    }

    #[test]
    fn nothing_to_convert_yields_empty_chain() {
        let mut registry = ChainRegistry::default();
        let app = AppRequirements {
            protocol: ProtocolKind::HttpLike,
            info_model: InfoModelKind::SenmlLike,
            aggregation: Aggregation::None,
        };
        let dev = DeviceProps {
            protocol: ProtocolKind::HttpLike,
            info_model: InfoModelKind::SenmlLike,
        };
        let chain = registry.decompose(&app, &dev, &table()).unwrap();
        assert!(chain.functions.is_empty());
        // Downstream the plan store refuses it as an invalid request.
        assert!(chain.validate().is_err());
    }

    #[test]
    fn infeasible_conversion_is_refused() {
        let mut registry = ChainRegistry::default();
        let app = AppRequirements {
            protocol: ProtocolKind::CoapLike,
            info_model: InfoModelKind::SenmlLike,
            aggregation: Aggregation::None,
        };
        // No declared converter reaches CoAP from LCP.
        let dev = DeviceProps {
            protocol: ProtocolKind::LcpLike,
            info_model: InfoModelKind::SenmlLike,
        };
        assert_eq!(
            registry.decompose(&app, &dev, &table()),
            Err(AgentError::InfeasibleConversion {
                from: "LcpLike".into(),
                to: "CoapLike".into()
            })
        );
    }

    #[test]
    fn label_sequence_is_excel_style() {
        let labels: Vec<String> = (0..28).map(label).collect();
        assert_eq!(labels[0], "A");
        assert_eq!(labels[1], "B");
        assert_eq!(labels[25], "Z");
        assert_eq!(labels[26], "AA");
        assert_eq!(labels[27], "AB");
    }

    fn robot() -> DeviceDescriptor {
        DeviceDescriptor {
            id: "robot-1".into(),
            class: DeviceClass::A,
            props: DeviceProps {
                protocol: ProtocolKind::LcpLike,
                info_model: InfoModelKind::RobotCmd,
            },
            capabilities: Capabilities {
                energy_pct: 60,
                location: (5.0, 5.0),
                response_time: 3,
                host_capacity: 0,
            },
            proxy: Some("gw-fixed".into()),
        }
    }

    #[test]
    fn robot_task_flips_producer_and_consumer() {
        let mut repo = DeviceRepository::default();
        repo.insert(robot());
        let req = ServiceRequest {
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
        };
        let gw = provider_request_gateway(&req, &repo).unwrap();
        // Consumer side is the robot, producer side is the app.
        assert_eq!(gw.requirements.protocol, ProtocolKind::LcpLike);
        assert_eq!(gw.requirements.info_model, InfoModelKind::RobotCmd);
        assert_eq!(gw.device_props.protocol, ProtocolKind::HttpLike);
        assert_eq!(gw.device_props.info_model, InfoModelKind::SenmlLike);

        let mut registry = ChainRegistry::default();
        let chain = registry
            .decompose(&gw.requirements, &gw.device_props, &table())
            .unwrap();
        assert_eq!(chain.functions, vec![VnfKind::imc(3), VnfKind::pc(2)]);
    }

    #[test]
    fn missing_device_is_no_match() {
        let repo = DeviceRepository::default();
        let req = ServiceRequest {
            app: "app".into(),
            requirements: row1().0,
            descriptor: ServiceDescriptor::SensorData { quantity: "sound".into() },
            device: "sensor-a".into(),
            da_config: None,
        };
        assert_eq!(
            provider_request_gateway(&req, &repo),
            Err(AgentError::NoMatchingDevices("sensor-a".into()))
        );
    }

    #[test]
    fn in_flight_coalescing() {
        let mut agent = VnfAgent::default();
        let (app, dev) = row1();
        assert_eq!(agent.in_flight_plan(&app, &dev), None);
        agent.mark_in_flight(&app, &dev, 1);
        assert_eq!(agent.in_flight_plan(&app, &dev), Some(1));
        agent.clear_in_flight(&app, &dev);
        assert_eq!(agent.in_flight_plan(&app, &dev), None);
    }
}
