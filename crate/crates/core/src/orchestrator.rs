//! MANO-style orchestration: the plan resource behind the REST-shaped API,
//! the three-phase execution (deploy, chain, overlay create), device
//! discovery, and deterministic VNF placement.
//!
//! Phase functions mutate domain state and return a step timeline (tick
//! offsets from the phase start); the simulator stamps real ticks onto the
//! steps and schedules the next phase at the returned duration.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::control::{ChainRegistration, ControlError, SdnController, TopologyView};
use crate::fabric::{Fabric, MatchPredicate, Target};
use crate::model::{ChainSpec, DeviceClass, DeviceDescriptor, Tick};
use crate::overlay::{OverlayError, OverlayId, OverlayNet};
use crate::vnf::{
    Catalogue, DaConfig, GatewayFunctionStore, HostRegistry, VnfConfig, VnfError, VnfFamily,
    VnfKind,
};

pub const PLAN_RESOURCE: &str = "/OrchestrationPlan";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseKind {
    Deploy,
    Chain,
    OverlayCreate,
}

impl PhaseKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PhaseKind::Deploy => "deploy",
            PhaseKind::Chain => "chain",
            PhaseKind::OverlayCreate => "overlay",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseStatus {
    Pending,
    Running,
    Done,
    Failed,
}

impl PhaseStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            PhaseStatus::Pending => "Pending",
            PhaseStatus::Running => "Running",
            PhaseStatus::Done => "Done",
            PhaseStatus::Failed => "Failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseRecord {
    pub kind: PhaseKind,
    pub status: PhaseStatus,
    pub start: Option<Tick>,
    pub end: Option<Tick>,
}

impl PhaseRecord {
    fn pending(kind: PhaseKind) -> Self {
        PhaseRecord { kind, status: PhaseStatus::Pending, start: None, end: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanStatus {
    Pending,
    Running,
    Done,
    Failed,
}

impl PlanStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            PlanStatus::Pending => "Pending",
            PlanStatus::Running => "Running",
            PlanStatus::Done => "Done",
            PlanStatus::Failed => "Failed",
        }
    }
}

/// What a plan is asked to provision.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanRequest {
    pub chain: ChainSpec,
    pub classification: MatchPredicate,
    pub ingress: String,
    pub egress: Target,
    pub da_config: Option<DaConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrchestrationPlan {
    pub id: u64,
    pub uri: String,
    pub request: PlanRequest,
    pub phases: [PhaseRecord; 3],
    pub status: PlanStatus,
    /// Instances created by this plan, in creation order.
    pub deployed: Vec<String>,
    /// Instances found in the catalogue and reused.
    pub reused: Vec<String>,
    pub instantiation_count: u32,
    pub joined: Vec<String>,
}

impl OrchestrationPlan {
    pub fn phase(&self, kind: PhaseKind) -> &PhaseRecord {
        self.phases
            .iter()
            .find(|p| p.kind == kind)
            .expect("all three phases exist")
    }

    pub fn phase_mut(&mut self, kind: PhaseKind) -> &mut PhaseRecord {
        self.phases
            .iter_mut()
            .find(|p| p.kind == kind)
            .expect("all three phases exist")
    }

    pub fn orchestration_time(&self) -> Option<Tick> {
        let start = self.phase(PhaseKind::Deploy).start?;
        let end = self.phases.iter().filter_map(|p| p.end).max()?;
        Some(end - start)
    }

    pub fn phase_time(&self, kind: PhaseKind) -> Tick {
        let p = self.phase(kind);
        match (p.start, p.end) {
            (Some(s), Some(e)) => e - s,
            _ => 0,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("invalid plan request: {0}")]
    InvalidPlanRequest(String),
    #[error("plan {0} not found")]
    PlanNotFound(u64),
    #[error("plan {0} is already running")]
    PlanAlreadyRunning(u64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlanOp {
    Create(u64),
    Update(u64),
    Delete(u64),
}

/// The plan registry: a serialized single-writer store.
#[derive(Debug, Clone, Default)]
pub struct PlanStore {
    plans: BTreeMap<u64, OrchestrationPlan>,
    next_id: u64,
    pub op_log: Vec<PlanOp>,
}

impl PlanStore {
    fn validate(request: &PlanRequest) -> Result<(), PlanError> {
        request
            .chain
            .validate()
            .map_err(|e| PlanError::InvalidPlanRequest(e.to_string()))?;
        if request.classification.is_unconstrained() {
            return Err(PlanError::InvalidPlanRequest(
                "classification has no constraints".into(),
            ));
        }
        let needs_da = request
            .chain
            .functions
            .iter()
            .any(|k| k.family == VnfFamily::Da);
        if needs_da && request.da_config.is_none() {
            return Err(PlanError::InvalidPlanRequest(
                "chain includes an aggregator but no aggregator config".into(),
            ));
        }
        Ok(())
    }

    /// Creates the plan resource (status Pending) and returns its URI.
    pub fn create(&mut self, request: PlanRequest) -> Result<String, PlanError> {
        Self::validate(&request)?;
        self.next_id += 1;
        let id = self.next_id;
        let uri = format!("{}/{}", PLAN_RESOURCE, id);
        self.plans.insert(
            id,
            OrchestrationPlan {
                id,
                uri: uri.clone(),
                request,
                phases: [
                    PhaseRecord::pending(PhaseKind::Deploy),
                    PhaseRecord::pending(PhaseKind::Chain),
                    PhaseRecord::pending(PhaseKind::OverlayCreate),
                ],
                status: PlanStatus::Pending,
                deployed: Vec::new(),
                reused: Vec::new(),
                instantiation_count: 0,
                joined: Vec::new(),
            },
        );
        self.op_log.push(PlanOp::Create(id));
        Ok(uri)
    }

    pub fn get(&self, id: u64) -> Result<&OrchestrationPlan, PlanError> {
        self.plans.get(&id).ok_or(PlanError::PlanNotFound(id))
    }

    pub fn get_mut(&mut self, id: u64) -> Result<&mut OrchestrationPlan, PlanError> {
        self.plans.get_mut(&id).ok_or(PlanError::PlanNotFound(id))
    }

    pub fn get_all(&self) -> Vec<&OrchestrationPlan> {
        self.plans.values().collect()
    }

    /// Replaces the pending portion of a plan that has not started running.
    pub fn update(&mut self, id: u64, request: PlanRequest) -> Result<(), PlanError> {
        Self::validate(&request)?;
        let plan = self.plans.get_mut(&id).ok_or(PlanError::PlanNotFound(id))?;
        if plan.status != PlanStatus::Pending {
            return Err(PlanError::PlanAlreadyRunning(id));
        }
        plan.request = request;
        self.op_log.push(PlanOp::Update(id));
        Ok(())
    }

    pub fn remove(&mut self, id: u64) -> Result<OrchestrationPlan, PlanError> {
        let plan = self.plans.remove(&id).ok_or(PlanError::PlanNotFound(id))?;
        self.op_log.push(PlanOp::Delete(id));
        Ok(plan)
    }

    pub fn ids(&self) -> Vec<u64> {
        self.plans.keys().copied().collect()
    }

    /// Brute-force replay of the create/update/delete log.
    pub fn replay_ids(ops: &[PlanOp]) -> Vec<u64> {
        let mut alive = Vec::new();
        for op in ops {
            match op {
                PlanOp::Create(id) => alive.push(*id),
                PlanOp::Delete(id) => alive.retain(|x| x != id),
                PlanOp::Update(_) => {}
            }
        }
        alive.sort_unstable();
        alive
    }
}

// --- discovery and placement ------------------------------------------------

/// Capable devices and their capability tuples, refreshed before each
/// deploy phase.
#[derive(Debug, Clone, PartialEq)]
pub struct ResourceView {
    pub devices: Vec<DeviceDescriptor>,
}

/// Exactly the class-B devices, capability tuples echoed from their
/// descriptors.
pub fn discover_devices(all: &[DeviceDescriptor]) -> ResourceView {
    ResourceView {
        devices: all
            .iter()
            .filter(|d| d.class == DeviceClass::B)
            .cloned()
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlacementStrategy {
    /// Uniform-random over eligible hosts, driven by the run's seed.
    Random,
    /// First eligible host in id order; keeps arm-to-arm comparisons
    /// hop-symmetric.
    Ordered,
}

#[derive(Debug, Clone)]
pub struct Placement {
    pub strategy: PlacementStrategy,
    rng: ChaCha8Rng,
}

impl Placement {
    pub fn new(strategy: PlacementStrategy, seed: u64) -> Self {
        Placement { strategy, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn choose(&mut self, eligible: &[String]) -> Option<String> {
        if eligible.is_empty() {
            return None;
        }
        match self.strategy {
            PlacementStrategy::Ordered => Some(eligible[0].clone()),
            PlacementStrategy::Random => {
                let idx = self.rng.gen_range(0..eligible.len());
                Some(eligible[idx].clone())
            }
        }
    }
}

// --- phase execution ---------------------------------------------------------

/// Simulated-time unit costs for orchestration steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseCosts {
    /// One message hop between entities.
    pub hop: Tick,
    /// Per-record (and per-instantiation) processing.
    pub proc: Tick,
    /// One overlay join round-trip.
    pub join: Tick,
}

/// Timeline step: (offset from phase start, log line tail).
pub type Step = (Tick, String);

#[derive(Debug, Clone, PartialEq)]
pub struct DeployOutcome {
    pub steps: Vec<Step>,
    pub duration: Tick,
    pub instantiated: Vec<String>,
    pub reused: Vec<String>,
    pub error: Option<VnfError>,
}

fn config_for(kind: VnfKind, da_config: &Option<DaConfig>) -> VnfConfig {
    match kind.family {
        VnfFamily::Da => VnfConfig::Da(da_config.unwrap_or(DaConfig::threshold(0.0))),
        VnfFamily::Lb => VnfConfig::Lb,
        VnfFamily::Imc | VnfFamily::Pc => VnfConfig::Conversion,
    }
}

/// Deploy phase: for each required kind, check the catalogue, reuse on a
/// hit, otherwise look the package up and dispatch one wave of `scale_k`
/// instances in parallel. Checks and lookups are serialized hops; a wave
/// costs one dispatch hop plus instantiation processing regardless of how
/// many instances it carries.
#[allow(clippy::too_many_arguments)]
pub fn run_deploy_phase(
    chain: &ChainSpec,
    da_config: &Option<DaConfig>,
    scale_k: u32,
    store: &GatewayFunctionStore,
    catalogue: &mut Catalogue,
    hosts: &mut HostRegistry,
    placement: &mut Placement,
    costs: &PhaseCosts,
) -> DeployOutcome {
    let mut steps: Vec<Step> = Vec::new();
    let mut t: Tick = 0;
    steps.push((t, "orchestrator,discover".to_string()));
    t += costs.hop;

    let mut instantiated: Vec<String> = Vec::new();
    let mut reused: Vec<String> = Vec::new();

    for kind in &chain.functions {
        let hit = catalogue.check(*kind).map(|i| i.id.clone());
        steps.push((
            t,
            format!(
                "vnfm,catalogue_check:{}:{}",
                kind,
                if hit.is_some() { "hit" } else { "miss" }
            ),
        ));
        t += costs.hop;
        if let Some(id) = hit {
            reused.push(id);
            continue;
        }

        match store.lookup(*kind) {
            Ok(_) => {
                steps.push((t, format!("vnfm,store_lookup:{}:ok", kind)));
                t += costs.hop;
            }
            Err(e) => {
                steps.push((t, format!("vnfm,store_lookup:{}:unavailable", kind)));
                // No partial gateway: everything this plan created goes away.
                for id in instantiated.iter().rev() {
                    let _ = catalogue.terminate(hosts, id);
                    steps.push((t, format!("vnfm,rollback_terminate:{}", id)));
                }
                return DeployOutcome {
                    steps,
                    duration: t,
                    instantiated: Vec::new(),
                    reused,
                    error: Some(e),
                };
            }
        }

        let mut wave: Vec<String> = Vec::new();
        let mut wave_error = None;
        for _ in 0..scale_k.max(1) {
            let eligible = hosts.eligible();
            let host = match placement.choose(&eligible) {
                Some(h) => h,
                None => {
                    wave_error = Some(VnfError::HostFull("no eligible host".into()));
                    break;
                }
            };
            match catalogue.instantiate(hosts, *kind, &host, config_for(*kind, da_config)) {
                Ok(id) => wave.push(id),
                Err(e) => {
                    wave_error = Some(e);
                    break;
                }
            }
        }
        if let Some(e) = wave_error {
            for id in wave.iter().chain(instantiated.iter()).rev() {
                let _ = catalogue.terminate(hosts, id);
                steps.push((t, format!("vnfm,rollback_terminate:{}", id)));
            }
            return DeployOutcome {
                steps,
                duration: t,
                instantiated: Vec::new(),
                reused,
                error: Some(e),
            };
        }
        steps.push((t, format!("vnfm,dispatch:{}:{}", kind, wave.join("+"))));
        // Instances in a wave dispatch concurrently: one hop, one
        // instantiation's processing.
        t += costs.hop + costs.proc;
        instantiated.extend(wave);
    }

    DeployOutcome { steps, duration: t, instantiated, reused, error: None }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutcome {
    pub steps: Vec<Step>,
    pub duration: Tick,
    pub error: Option<ControlError>,
}

/// Chain phase: one registration hop to the controller, then one atomic
/// broadcast push to all switches on the route.
pub fn run_chain_phase(
    reg: ChainRegistration,
    controller: &mut SdnController,
    topo: &TopologyView,
    fabric: &mut Fabric,
    costs: &PhaseCosts,
) -> ChainOutcome {
    let mut steps: Vec<Step> = Vec::new();
    let mut t: Tick = 0;
    let chain_id = reg.chain.chain_id.clone();
    steps.push((t, format!("sdn-app,register_chain:{}", chain_id)));
    t += costs.hop;
    match controller.register_chain(reg, topo, fabric) {
        Ok(()) => {
            let n = controller.installed_entries(&chain_id).len();
            steps.push((t, format!("sdn-controller,push_entries:{}:{}", chain_id, n)));
            t += costs.hop;
            ChainOutcome { steps, duration: t, error: None }
        }
        Err(e) => {
            steps.push((t, format!("sdn-controller,chain_failed:{}", e)));
            ChainOutcome { steps, duration: t, error: Some(e) }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlayOutcome {
    pub steps: Vec<Step>,
    pub duration: Tick,
    pub joined: Vec<String>,
    pub error: Option<OverlayError>,
}

/// Overlay phase: create the gateway overlay if absent, then join every
/// listed node that is not already a member. Joins serialize through the
/// master at one join round-trip each; representation registrations are
/// bookkeeping.
pub fn run_overlay_phase(
    master: &str,
    to_join: &[String],
    represent: &[(String, String)],
    net: &mut OverlayNet,
    costs: &PhaseCosts,
) -> OverlayOutcome {
    let mut steps: Vec<Step> = Vec::new();
    let mut t: Tick = 0;
    let mut joined: Vec<String> = Vec::new();

    if net.overlay(OverlayId::Gateway).is_none() {
        match net.create_overlay(OverlayId::Gateway, master) {
            Ok(()) => steps.push((t, format!("Gateway,create,{}", master))),
            Err(e) => {
                return OverlayOutcome { steps, duration: t, joined, error: Some(e) };
            }
        }
    }

    for node in to_join {
        if net.is_member(OverlayId::Gateway, node) {
            continue;
        }
        match net.join(node, OverlayId::Gateway) {
            Ok(()) => {
                t += costs.join;
                steps.push((t, format!("Gateway,join,{}", node)));
                joined.push(node.clone());
            }
            Err(e) => {
                return OverlayOutcome { steps, duration: t, joined, error: Some(e) };
            }
        }
    }

    for (proxy, device) in represent {
        if net.represent(OverlayId::Gateway, proxy, device).is_ok() {
            steps.push((t, format!("Gateway,represent,{}:{}", proxy, device)));
        }
    }

    OverlayOutcome { steps, duration: t, joined, error: None }
}

/// Removes a plan and undoes its footprint: its flow entries leave the
/// fabric, its instances terminate and give their slots back. Reused
/// instances belong to earlier plans and stay.
pub fn delete_plan(
    store: &mut PlanStore,
    id: u64,
    catalogue: &mut Catalogue,
    hosts: &mut HostRegistry,
    controller: &mut SdnController,
    topo: &mut TopologyView,
    fabric: &mut Fabric,
) -> Result<OrchestrationPlan, PlanError> {
    let plan = store.remove(id)?;
    controller.unregister_chain(&plan.request.chain.chain_id, fabric);
    for instance in plan.deployed.iter().rev() {
        let _ = catalogue.terminate(hosts, instance);
        fabric.unlink_vnf_everywhere(instance);
        topo.remove_vnf(instance);
    }
    Ok(plan)
}
