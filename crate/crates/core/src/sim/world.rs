//! The deterministic event loop: one `World` owns every module's state
//! machine and drives signaling, orchestration phases, and the data plane in
//! simulated ticks. A `(config, seed)` pair fully determines the event log
//! and the metrics report.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use thiserror::Error;

use crate::agents::{
    DeviceRepository, GatewayRequest, Notification, ServiceDescriptor, ServiceRequest, VnfAgent,
    provider_request_gateway,
};
use crate::control::{ChainRegistration, SdnController, TopologyView, VnfSite};
use crate::fabric::{DataPlane, Fabric, FabricError, Packet, Target};
use crate::model::{
    Body, CanonicalRecord, ChainId, ChainSpec, Envelope, ProtocolKind, Tick, encode_envelope,
};
use crate::orchestrator::{
    PhaseCosts, PhaseKind, PhaseStatus, Placement, PlanStatus, PlanStore, discover_devices,
    run_chain_phase, run_deploy_phase, run_overlay_phase,
};
use crate::overlay::{OverlayId, OverlayMsg, OverlayNet};
use crate::sim::config::ScenarioConfig;
use crate::sim::metrics::{EventLog, MetricsReport, PhaseTimes};
use crate::vnf::{
    Catalogue, ConversionTable, GatewayFunctionStore, HostRegistry, InstanceState, RecordContext,
    VnfConfig, VnfFamily, VnfKind, VnfPackage, da_apply, imc_convert, lb_select, pc_convert,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario wiring: {0}")]
    Config(String),
}

#[derive(Debug, Clone)]
enum Event {
    AppBoot { app: String },
    ServiceSend { idx: usize },
    ProviderRecv { idx: usize },
    VnfAgentRecv { idx: usize },
    PlanCreate { idx: usize },
    PlanPhase { plan: u64, phase: PhaseKind },
    PlanDone { plan: u64, ok: bool },
    NotifyVnfAgent { plan: u64, ok: bool },
    NotifyVnfAgentSvc { idx: usize, ok: bool },
    NotifyProvider { idx: usize, ok: bool },
    NotifyApp { idx: usize, ok: bool },
    FlowKick { idx: usize },
    CollectArrive { flow: u64, packet: Packet },
    PacketAt { flow: u64, switch: String, packet: Packet },
    DeviceRecv { flow: u64, device: String, packet: Packet },
    AppDirect { flow: u64, app: String, packet: Packet },
    GatewayMsg { flow: u64, msg: OverlayMsg },
    AppMsg { flow: u64, msg: OverlayMsg },
}

#[derive(Debug)]
struct Scheduled {
    tick: Tick,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.tick, self.seq) == (other.tick, other.seq)
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.tick, self.seq).cmp(&(other.tick, other.seq))
    }
}

#[derive(Debug, Clone)]
struct ServiceState {
    request: ServiceRequest,
    gw: Option<GatewayRequest>,
    chain: Option<ChainSpec>,
    plan: Option<u64>,
    sent_at: Option<Tick>,
    notified_at: Option<Tick>,
    notification: Option<Notification>,
    flow: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct FlowState {
    pub idx: usize,
    pub app: String,
    pub device: String,
    pub chain_id: Option<ChainId>,
    pub e2e_start: Option<Tick>,
    pub e2e_end: Option<Tick>,
    /// Full hop trace, assembled at delivery.
    pub trace: Vec<String>,
    pub done: bool,
}

pub struct World {
    pub cfg: ScenarioConfig,
    pub now: Tick,
    queue: BinaryHeap<Reverse<Scheduled>>,
    next_seq: u64,
    pub log: EventLog,

    pub store: GatewayFunctionStore,
    pub catalogue: Catalogue,
    pub hosts: HostRegistry,
    pub fabric: Fabric,
    pub controller: SdnController,
    pub topo: TopologyView,
    pub net: OverlayNet,
    pub plans: PlanStore,
    pub placement: Placement,
    pub vnf_agent: VnfAgent,
    pub repository: DeviceRepository,
    pub costs: PhaseCosts,

    host_switch: BTreeMap<String, String>,
    lb_fronts: BTreeMap<String, VnfKind>,
    classifier: String,

    services: Vec<ServiceState>,
    plan_waiters: BTreeMap<u64, Vec<usize>>,
    pub flows: BTreeMap<u64, FlowState>,
    next_flow: u64,
    lb_seq: BTreeMap<String, u64>,
    booted: BTreeSet<String>,
    app_overlay_created: bool,

    pub invocations: BTreeMap<String, u64>,
    pub message_count: u64,
    pub delivered: Vec<String>,
    pub failures: Vec<(Tick, String)>,
}

impl World {
    pub fn new(cfg: ScenarioConfig) -> Result<World, SimError> {
        let costs = PhaseCosts {
            hop: cfg.costs.hop_delay,
            proc: cfg.costs.proc_cost,
            join: cfg.costs.join_cost,
        };

        let mut hosts = HostRegistry::default();
        let mut repository = DeviceRepository::default();
        let mut net = OverlayNet::default();
        for d in &cfg.devices {
            hosts.add_host(&d.id, d.class, d.capabilities.host_capacity);
            repository.insert(d.clone());
            net.add_node(&d.id);
        }
        for r in &cfg.requests {
            net.add_node(&r.app);
        }

        let table = if cfg.imc_pairs.is_empty() && cfg.pc_pairs.is_empty() {
            ConversionTable::default()
        } else {
            let mut t = ConversionTable::empty();
            for (v, s, tg) in &cfg.imc_pairs {
                t.declare_imc(*v, *s, *tg);
            }
            for (v, s, tg) in &cfg.pc_pairs {
                t.declare_pc(*v, *s, *tg);
            }
            t
        };
        let mut store = GatewayFunctionStore::new(table);
        for (kind, version) in &cfg.packages {
            store.add_package(VnfPackage::new(*kind, version.clone()));
        }

        let mut fabric = Fabric::default();
        let mut topo = TopologyView::default();
        let mut host_switch: BTreeMap<String, String> = BTreeMap::new();
        let classifier = cfg
            .switches
            .first()
            .map(|s| s.id.clone())
            .ok_or_else(|| SimError::Config("no switches configured".into()))?;
        for (i, sw) in cfg.switches.iter().enumerate() {
            fabric.add_switch(&sw.id, &sw.host, i == 0);
            topo.add_switch(&sw.id);
            host_switch.insert(sw.host.clone(), sw.id.clone());
        }
        for sw in &cfg.switches {
            for peer in &sw.links {
                if fabric.switch(peer).is_none() {
                    return Err(SimError::Config(format!(
                        "switch {} links to unknown {}",
                        sw.id, peer
                    )));
                }
                topo.link_switches(&sw.id, peer);
                fabric
                    .link(&sw.id, Target::Switch(peer.clone()))
                    .map_err(|e| SimError::Config(e.to_string()))?;
                fabric
                    .link(peer, Target::Switch(sw.id.clone()))
                    .map_err(|e| SimError::Config(e.to_string()))?;
            }
        }
        for (host, sw) in &cfg.attachments {
            if fabric.switch(sw).is_none() {
                return Err(SimError::Config(format!(
                    "attachment {} to unknown switch {}",
                    host, sw
                )));
            }
            host_switch.insert(host.clone(), sw.clone());
        }
        // Devices become forwardable targets at their attachment switch.
        for d in &cfg.devices {
            if let Some(sw) = cfg.attachments.get(&d.id) {
                topo.attach_device(&d.id, sw);
                fabric
                    .link(sw, Target::Device(d.id.clone()))
                    .map_err(|e| SimError::Config(e.to_string()))?;
            }
        }

        let placement = Placement::new(cfg.placement, cfg.seed);

        let mut world = World {
            costs,
            store,
            catalogue: Catalogue::default(),
            hosts,
            fabric,
            controller: SdnController::default(),
            topo,
            net,
            plans: PlanStore::default(),
            placement,
            vnf_agent: VnfAgent::default(),
            repository,
            host_switch,
            lb_fronts: BTreeMap::new(),
            classifier,
            services: cfg
                .requests
                .iter()
                .map(|r| ServiceState {
                    request: r.clone(),
                    gw: None,
                    chain: None,
                    plan: None,
                    sent_at: None,
                    notified_at: None,
                    notification: None,
                    flow: None,
                })
                .collect(),
            plan_waiters: BTreeMap::new(),
            flows: BTreeMap::new(),
            next_flow: 0,
            lb_seq: BTreeMap::new(),
            booted: BTreeSet::new(),
            app_overlay_created: false,
            invocations: BTreeMap::new(),
            message_count: 0,
            delivered: Vec::new(),
            failures: Vec::new(),
            now: 0,
            queue: BinaryHeap::new(),
            next_seq: 0,
            log: EventLog::default(),
            cfg,
        };

        // Pre-provisioned instances are part of the starting domain state.
        for p in world.cfg.predeploys.clone() {
            let id = world
                .catalogue
                .instantiate(&mut world.hosts, p.kind, &p.host, predeploy_config(p.kind))
                .map_err(|e| SimError::Config(format!("predeploy {}: {}", p.kind, e)))?;
            world
                .wire_instance(&id)
                .map_err(SimError::Config)?;
            if let Some(fronted) = p.fronts {
                world.topo.set_group_front(fronted, &id);
                world.lb_fronts.insert(id.clone(), fronted);
            }
        }
        Ok(world)
    }

    /// Places a newly created instance into the topology view and links it
    /// at its host's switch. Also used when plans execute outside the event
    /// loop (the plan API).
    pub fn wire_instance(&mut self, id: &str) -> Result<(), String> {
        let inst = self
            .catalogue
            .get(id)
            .ok_or_else(|| format!("instance {} missing", id))?
            .clone();
        let sw = self
            .host_switch
            .get(&inst.host)
            .ok_or_else(|| format!("host {} has no switch attachment", inst.host))?
            .clone();
        self.topo.place_vnf(VnfSite {
            instance: inst.id.clone(),
            kind: inst.kind,
            host: inst.host.clone(),
            switch: sw.clone(),
        });
        self.fabric
            .link(&sw, Target::Vnf(inst.id.clone()))
            .map_err(|e| e.to_string())?;
        Ok(())
    }

    fn schedule(&mut self, delay: Tick, event: Event) {
        let tick = self.now + delay;
        self.queue.push(Reverse(Scheduled { tick, seq: self.next_seq, event }));
        self.next_seq += 1;
    }

    /// Schedules a message hop and counts it.
    fn schedule_msg(&mut self, delay: Tick, event: Event) {
        self.message_count += 1;
        self.schedule(delay, event);
    }

    fn fail(&mut self, reason: impl Into<String>) {
        self.fail_at(self.now, reason);
    }

    fn fail_at(&mut self, tick: Tick, reason: impl Into<String>) {
        let reason = reason.into();
        self.log.record(tick, format!("error,{}", reason));
        self.failures.push((tick, reason));
    }

    /// Runs until the queue drains, then finalizes the log.
    pub fn run(&mut self) {
        let apps: Vec<String> = self
            .cfg
            .requests
            .iter()
            .map(|r| r.app.clone())
            .collect();
        let mut seen = BTreeSet::new();
        for app in apps {
            if seen.insert(app.clone()) {
                self.schedule(0, Event::AppBoot { app });
            }
        }
        while let Some(Reverse(s)) = self.queue.pop() {
            debug_assert!(s.tick >= self.now, "time went backwards");
            self.now = s.tick;
            self.handle(s.event);
        }
        self.log.finalize();
        debug_assert!(self.log.is_monotone());
    }

    fn handle(&mut self, event: Event) {
        match event {
            Event::AppBoot { app } => self.on_app_boot(app),
            Event::ServiceSend { idx } => self.on_service_send(idx),
            Event::ProviderRecv { idx } => self.on_provider_recv(idx),
            Event::VnfAgentRecv { idx } => self.on_vnf_agent_recv(idx),
            Event::PlanCreate { idx } => self.on_plan_create(idx),
            Event::PlanPhase { plan, phase } => self.on_plan_phase(plan, phase),
            Event::PlanDone { plan, ok } => {
                let uri = self
                    .plans
                    .get(plan)
                    .map(|p| p.uri.clone())
                    .unwrap_or_default();
                let status = if ok { "done" } else { "failed" };
                self.log
                    .record(self.now, format!("orchestrator,plan_{}:{}", status, uri));
                self.schedule_msg(self.costs.hop, Event::NotifyVnfAgent { plan, ok });
            }
            Event::NotifyVnfAgent { plan, ok } => {
                let waiters = self.plan_waiters.remove(&plan).unwrap_or_default();
                for idx in waiters {
                    if let Some(gw) = self.services[idx].gw.clone() {
                        self.vnf_agent
                            .clear_in_flight(&gw.requirements, &gw.device_props);
                    }
                    self.log
                        .record(self.now, format!("vnf-agent,notify:{}:{}", idx, ok));
                    self.schedule_msg(self.costs.hop, Event::NotifyProvider { idx, ok });
                }
            }
            Event::NotifyVnfAgentSvc { idx, ok } => {
                self.log
                    .record(self.now, format!("vnf-agent,notify:{}:{}", idx, ok));
                self.schedule_msg(self.costs.hop, Event::NotifyProvider { idx, ok });
            }
            Event::NotifyProvider { idx, ok } => {
                self.log
                    .record(self.now, format!("provider-agent,notify:{}:{}", idx, ok));
                self.schedule_msg(self.costs.hop, Event::NotifyApp { idx, ok });
            }
            Event::NotifyApp { idx, ok } => self.on_notify_app(idx, ok),
            Event::FlowKick { idx } => self.on_flow_kick(idx),
            Event::CollectArrive { flow, packet } => self.on_collect_arrive(flow, packet),
            Event::PacketAt { flow, switch, packet } => self.on_packet(flow, switch, packet),
            Event::DeviceRecv { flow, device, packet } => {
                self.on_device_recv(flow, device, packet)
            }
            Event::AppDirect { flow, app, packet } => {
                self.log.record(self.now, format!("{},data_received", app));
                self.delivered.push(encode_envelope(&packet.env));
                if let Some(f) = self.flows.get_mut(&flow) {
                    f.e2e_end = Some(self.now);
                    let mut trace = packet.trace;
                    trace.push(format!("deliver:{}", app));
                    f.trace = trace;
                    f.done = true;
                }
                self.trigger_next_request(flow);
            }
            Event::GatewayMsg { flow, msg } => self.on_gateway_msg(flow, msg),
            Event::AppMsg { flow, msg } => self.on_app_msg(flow, msg),
        }
    }

    fn on_app_boot(&mut self, app: String) {
        if !self.booted.insert(app.clone()) {
            return;
        }
        let mut t = self.now;
        if !self.app_overlay_created {
            let master = self.cfg.app_master.clone();
            if let Err(e) = self.net.create_overlay(OverlayId::Application, &master) {
                self.fail(format!("application overlay: {}", e));
                return;
            }
            self.app_overlay_created = true;
            self.log.record(t, format!("Application,create,{}", master));
            // The fixed node joins the application overlay so a co-located
            // bridge exists from the start.
            let fixed = self.cfg.fixed_node.clone();
            if !fixed.is_empty() {
                match self.net.join(&fixed, OverlayId::Application) {
                    Ok(()) => {
                        t += self.costs.join;
                        self.log.record(t, format!("Application,join,{}", fixed));
                    }
                    Err(e) => self.fail(format!("fixed node join: {}", e)),
                }
            }
        }
        if app != self.cfg.app_master {
            match self.net.join(&app, OverlayId::Application) {
                Ok(()) => {
                    t += self.costs.join;
                    self.log.record(t, format!("Application,join,{}", app));
                }
                Err(e) => self.fail(format!("app join: {}", e)),
            }
        }
        if let Some(idx) = self
            .services
            .iter()
            .position(|s| s.request.app == app && s.sent_at.is_none())
        {
            self.schedule(t - self.now, Event::ServiceSend { idx });
        }
    }

    fn on_service_send(&mut self, idx: usize) {
        self.services[idx].sent_at = Some(self.now);
        let app = self.services[idx].request.app.clone();
        let device = self.services[idx].request.device.clone();
        self.log
            .record(self.now, format!("{},request_service:{}", app, device));
        self.schedule_msg(self.costs.hop, Event::ProviderRecv { idx });
    }

    fn on_provider_recv(&mut self, idx: usize) {
        let request = self.services[idx].request.clone();
        match provider_request_gateway(&request, &self.repository) {
            Ok(gw) => {
                self.log.record(
                    self.now,
                    format!("provider-agent,request_gateway:{}", gw.device),
                );
                self.services[idx].gw = Some(gw);
                self.schedule_msg(self.costs.hop, Event::VnfAgentRecv { idx });
            }
            Err(e) => {
                self.fail(format!("provider-agent: {}", e));
                self.schedule_msg(self.costs.hop, Event::NotifyApp { idx, ok: false });
            }
        }
    }

    fn on_vnf_agent_recv(&mut self, idx: usize) {
        let gw = match self.services[idx].gw.clone() {
            Some(gw) => gw,
            None => return,
        };
        match self
            .vnf_agent
            .registry
            .decompose(&gw.requirements, &gw.device_props, &self.store.table)
        {
            Ok(mut chain) => {
                if let Some(order) = &self.cfg.chain_order {
                    let mut want = order.clone();
                    let mut have = chain.functions.clone();
                    want.sort();
                    have.sort();
                    if want == have {
                        chain.functions = order.clone();
                    }
                }
                let fns: Vec<String> =
                    chain.functions.iter().map(|k| k.to_string()).collect();
                self.log.record(
                    self.now,
                    format!("vnf-agent,decompose:{}:{}", chain.chain_id, fns.join("+")),
                );
                self.services[idx].chain = Some(chain);
                if let Some(plan) =
                    self.vnf_agent.in_flight_plan(&gw.requirements, &gw.device_props)
                {
                    // A plan for this pair is already provisioning; ride it.
                    self.log
                        .record(self.now, format!("vnf-agent,coalesce:{}:{}", idx, plan));
                    self.services[idx].plan = Some(plan);
                    self.plan_waiters.entry(plan).or_default().push(idx);
                } else {
                    self.schedule_msg(self.costs.hop, Event::PlanCreate { idx });
                }
            }
            Err(e) => {
                self.fail(format!("vnf-agent: {}", e));
                self.schedule_msg(self.costs.hop, Event::NotifyProvider { idx, ok: false });
            }
        }
    }

    fn on_plan_create(&mut self, idx: usize) {
        let (gw, chain) = match (self.services[idx].gw.clone(), self.services[idx].chain.clone())
        {
            (Some(gw), Some(chain)) => (gw, chain),
            _ => return,
        };
        let request = crate::orchestrator::PlanRequest {
            chain,
            classification: crate::fabric::MatchPredicate::classification(
                gw.requirements,
                gw.device_props,
            ),
            ingress: self.classifier.clone(),
            egress: Target::Device(gw.device.clone()),
            da_config: gw.da_config,
        };
        match self.plans.create(request) {
            Ok(uri) => {
                self.log.record(self.now, format!("orchestrator,plan_create:{}", uri));
                let id: u64 = uri.rsplit('/').next().unwrap().parse().unwrap();
                self.vnf_agent
                    .mark_in_flight(&gw.requirements, &gw.device_props, id);
                self.services[idx].plan = Some(id);
                self.plan_waiters.entry(id).or_default().push(idx);
                if let Ok(plan) = self.plans.get_mut(id) {
                    plan.status = PlanStatus::Running;
                }
                self.schedule(0, Event::PlanPhase { plan: id, phase: PhaseKind::Deploy });
            }
            Err(e) => {
                self.fail(format!("orchestrator: {}", e));
                self.schedule_msg(self.costs.hop, Event::NotifyVnfAgentSvc { idx, ok: false });
            }
        }
    }

    fn on_plan_phase(&mut self, plan: u64, phase: PhaseKind) {
        let request = match self.plans.get(plan) {
            Ok(p) => p.request.clone(),
            Err(_) => return,
        };
        if let Ok(p) = self.plans.get_mut(plan) {
            let rec = p.phase_mut(phase);
            rec.status = PhaseStatus::Running;
            rec.start = Some(self.now);
        }
        match phase {
            PhaseKind::Deploy => {
                let view = discover_devices(&self.repository.all());
                self.log.record(
                    self.now,
                    format!("orchestrator,resource_view:{}", view.devices.len()),
                );
                let outcome = run_deploy_phase(
                    &request.chain,
                    &request.da_config,
                    self.cfg.scale_k,
                    &self.store,
                    &mut self.catalogue,
                    &mut self.hosts,
                    &mut self.placement,
                    &self.costs,
                );
                for (off, line) in &outcome.steps {
                    self.log.record(self.now + off, line.clone());
                }
                for id in outcome.instantiated.clone() {
                    if let Err(e) = self.wire_instance(&id) {
                        self.fail(e);
                    }
                }
                let end = self.now + outcome.duration;
                if let Ok(p) = self.plans.get_mut(plan) {
                    p.deployed = outcome.instantiated.clone();
                    p.reused = outcome.reused.clone();
                    p.instantiation_count = outcome.instantiated.len() as u32;
                    let rec = p.phase_mut(phase);
                    rec.end = Some(end);
                    rec.status = if outcome.error.is_none() {
                        PhaseStatus::Done
                    } else {
                        PhaseStatus::Failed
                    };
                }
                match outcome.error {
                    None => {
                        self.schedule(
                            outcome.duration,
                            Event::PlanPhase { plan, phase: PhaseKind::Chain },
                        );
                    }
                    Some(e) => {
                        self.fail_at(end, format!("deploy: {}", e));
                        if let Ok(p) = self.plans.get_mut(plan) {
                            p.status = PlanStatus::Failed;
                        }
                        self.schedule(outcome.duration, Event::PlanDone { plan, ok: false });
                    }
                }
            }
            PhaseKind::Chain => {
                let reg = ChainRegistration {
                    chain: request.chain.clone(),
                    classification: request.classification.clone(),
                    ingress: request.ingress.clone(),
                    egress: request.egress.clone(),
                };
                let outcome = run_chain_phase(
                    reg,
                    &mut self.controller,
                    &self.topo,
                    &mut self.fabric,
                    &self.costs,
                );
                for (off, line) in &outcome.steps {
                    self.log.record(self.now + off, line.clone());
                }
                let end = self.now + outcome.duration;
                if let Ok(p) = self.plans.get_mut(plan) {
                    let rec = p.phase_mut(phase);
                    rec.end = Some(end);
                    rec.status = if outcome.error.is_none() {
                        PhaseStatus::Done
                    } else {
                        PhaseStatus::Failed
                    };
                }
                match outcome.error {
                    None => {
                        self.schedule(
                            outcome.duration,
                            Event::PlanPhase { plan, phase: PhaseKind::OverlayCreate },
                        );
                    }
                    Some(e) => {
                        self.fail_at(end, format!("chain: {}", e));
                        self.rollback_plan(plan);
                        if let Ok(p) = self.plans.get_mut(plan) {
                            p.status = PlanStatus::Failed;
                        }
                        self.schedule(outcome.duration, Event::PlanDone { plan, ok: false });
                    }
                }
            }
            PhaseKind::OverlayCreate => {
                let mut to_join: BTreeSet<String> = BTreeSet::new();
                for inst in self.catalogue.instances() {
                    to_join.insert(inst.host.clone());
                }
                for sw in self.fabric.switches() {
                    to_join.insert(sw.host.clone());
                }
                let to_join: Vec<String> = to_join.into_iter().collect();
                let represent: Vec<(String, String)> = self
                    .repository
                    .all()
                    .iter()
                    .filter_map(|d| d.proxy.clone().map(|p| (p, d.id.clone())))
                    .collect();
                let master = self.cfg.fixed_node.clone();
                let outcome =
                    run_overlay_phase(&master, &to_join, &represent, &mut self.net, &self.costs);
                for (off, line) in &outcome.steps {
                    self.log.record(self.now + off, line.clone());
                }
                let end = self.now + outcome.duration;
                let ok = outcome.error.is_none();
                if let Ok(p) = self.plans.get_mut(plan) {
                    p.joined = outcome.joined.clone();
                    let rec = p.phase_mut(phase);
                    rec.end = Some(end);
                    rec.status = if ok { PhaseStatus::Done } else { PhaseStatus::Failed };
                    p.status = if ok { PlanStatus::Done } else { PlanStatus::Failed };
                }
                if let Some(e) = outcome.error {
                    self.fail_at(end, format!("overlay: {}", e));
                }
                self.schedule(outcome.duration, Event::PlanDone { plan, ok });
            }
        }
    }

    /// Terminates everything a failed plan created, restoring the domain.
    fn rollback_plan(&mut self, plan: u64) {
        let deployed = match self.plans.get(plan) {
            Ok(p) => p.deployed.clone(),
            Err(_) => return,
        };
        for id in deployed.iter().rev() {
            let _ = self.catalogue.terminate(&mut self.hosts, id);
            self.fabric.unlink_vnf_everywhere(id);
            self.topo.remove_vnf(id);
            self.log.record(self.now, format!("vnfm,rollback_terminate:{}", id));
        }
        if let Ok(p) = self.plans.get_mut(plan) {
            p.deployed.clear();
            p.instantiation_count = 0;
        }
    }

    fn on_notify_app(&mut self, idx: usize, ok: bool) {
        let app = self.services[idx].request.app.clone();
        self.services[idx].notified_at = Some(self.now);
        if ok {
            self.services[idx].notification = Some(Notification::ServiceAvailable {
                classifier: self.classifier.clone(),
            });
            self.log
                .record(self.now, format!("{},service_available:{}", app, self.classifier));
            self.schedule_msg(self.costs.hop, Event::FlowKick { idx });
        } else {
            self.services[idx].notification = Some(Notification::ServiceUnavailable {
                retry_after: self.costs.join,
            });
            // Cancel the negotiation: no data flow, no follow-up requests.
            self.log.record(self.now, format!("{},service_unavailable", app));
            self.log.record(self.now, format!("{},cancel_negotiation", app));
        }
    }

    fn on_flow_kick(&mut self, idx: usize) {
        let svc = self.services[idx].clone();
        let gw = match svc.gw {
            Some(gw) => gw,
            None => return,
        };
        let flow = self.next_flow;
        self.next_flow += 1;
        self.services[idx].flow = Some(flow);

        let mut trace = vec![format!("req:{}->{}", gw.app, self.classifier)];
        let env = match &svc.request.descriptor {
            ServiceDescriptor::SensorData { .. } => {
                let mut env = Envelope::new(
                    gw.requirements.protocol,
                    gw.app.clone(),
                    self.classifier.clone(),
                    Body::RawValues(vec![]),
                );
                env.set_app_requirements(&gw.requirements);
                env.set_device_props(&gw.device_props);
                env
            }
            ServiceDescriptor::RobotTask { command_path } => {
                let mut env = Envelope::new(
                    gw.device_props.protocol,
                    gw.app.clone(),
                    self.classifier.clone(),
                    crate::vnf::robot_request_body(&gw.app, command_path),
                );
                env.set_app_requirements(&gw.requirements);
                env.set_device_props(&gw.device_props);
                env.set_header(crate::vnf::H_HTTP_CONTENT_TYPE, "application/senml+json")
                    .expect("plain header");
                env
            }
        };

        self.flows.insert(
            flow,
            FlowState {
                idx,
                app: gw.app.clone(),
                device: gw.device.clone(),
                chain_id: None,
                e2e_start: None,
                e2e_end: None,
                trace: Vec::new(),
                done: false,
            },
        );
        self.log.record(
            self.now,
            format!("{},-,recv:req:{}", self.classifier, gw.app),
        );

        // Classification happens at the ingress before anything else; the
        // matched entry's own insert action is then an idempotent re-stamp.
        let mut env = env;
        match self.fabric.classify(&env) {
            Ok(chain_id) => {
                env.stamp_chain_id(&chain_id).expect("fresh envelope");
                trace.push(format!("{}:classify:{}", self.classifier, chain_id));
                if let Some(f) = self.flows.get_mut(&flow) {
                    f.chain_id = Some(chain_id);
                }
            }
            Err(e) => {
                self.fail(format!("classify: {}", e));
                return;
            }
        }

        match &svc.request.descriptor {
            ServiceDescriptor::SensorData { .. } => {
                trace.push(format!("collect:{}->{}", self.classifier, gw.device));
                let packet = Packet { env, trace };
                self.log.record(
                    self.now,
                    format!("{},collect_request:{}", self.classifier, gw.device),
                );
                self.schedule_msg(self.costs.hop, Event::CollectArrive { flow, packet });
            }
            ServiceDescriptor::RobotTask { .. } => {
                let packet = Packet { env, trace };
                let classifier = self.classifier.clone();
                self.schedule(0, Event::PacketAt { flow, switch: classifier, packet });
            }
        }
    }

    fn on_collect_arrive(&mut self, flow: u64, mut packet: Packet) {
        let (device, idx) = match self.flows.get(&flow) {
            Some(f) => (f.device.clone(), f.idx),
            None => return,
        };
        let m = match self.cfg.measurements.get(&device) {
            Some(m) => m.clone(),
            None => {
                self.fail(format!("device {} has no measurements", device));
                return;
            }
        };
        let records: Vec<CanonicalRecord> = m
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| CanonicalRecord {
                device_id: device.clone(),
                quantity: m.quantity.clone(),
                unit: m.unit.clone(),
                value: *v,
                timestamp: i as Tick + 1,
            })
            .collect();
        // The collected data rides the request onward in the device's own
        // protocol and raw form; the chain converts it on the way.
        if let Some(gw) = &self.services[idx].gw {
            packet.env.protocol = gw.device_props.protocol;
        }
        packet.env.body = Body::Records(records);
        if packet.env.protocol == ProtocolKind::CoapLike {
            let _ = packet.env.set_header(crate::vnf::H_COAP_CONTENT_FORMAT, "0");
        }
        packet.trace.push(format!("collect:{}->{}", device, self.classifier));
        self.log.record(self.now, format!("{},measurements:{}", device, m.values.len()));
        if let Some(f) = self.flows.get_mut(&flow) {
            f.e2e_start = Some(self.now);
        }
        let classifier = self.classifier.clone();
        self.schedule_msg(self.costs.hop, Event::PacketAt { flow, switch: classifier, packet });
    }

    fn on_packet(&mut self, flow: u64, switch: String, packet: Packet) {
        let chain_label = packet
            .env
            .chain_id()
            .map(|c| c.0)
            .unwrap_or_else(|| "-".to_string());
        let hop = self.costs.hop;

        let World {
            fabric,
            catalogue,
            store,
            invocations,
            lb_seq,
            lb_fronts,
            costs,
            message_count,
            ..
        } = self;
        let mut plane = RuntimePlane {
            catalogue,
            table: &store.table,
            costs: *costs,
            invocations,
            lb_seq,
            lb_fronts,
            relayed: message_count,
        };
        match fabric.process_packet(&switch, packet, &mut plane) {
            Ok(out) => {
                self.log.record(
                    self.now,
                    format!("{},{},{}", switch, chain_label, out.applied.join(";")),
                );
                for em in out.emissions {
                    let delay = em.at_elapsed + hop;
                    match em.target {
                        Target::Switch(sw) => {
                            self.schedule_msg(delay, Event::PacketAt {
                                flow,
                                switch: sw,
                                packet: em.packet,
                            });
                        }
                        Target::Device(dev) => {
                            self.schedule_msg(delay, Event::DeviceRecv {
                                flow,
                                device: dev,
                                packet: em.packet,
                            });
                        }
                        Target::App(app) => {
                            self.schedule_msg(delay, Event::AppDirect {
                                flow,
                                app,
                                packet: em.packet,
                            });
                        }
                        Target::Vnf(v) => {
                            self.fail(format!("unexpected bare vnf emission {}", v));
                        }
                    }
                }
            }
            Err(e) => {
                self.log
                    .record(self.now, format!("{},{},error:{}", switch, chain_label, e));
                self.fail(format!("switch {}: {}", switch, e));
            }
        }
    }

    fn on_device_recv(&mut self, flow: u64, device: String, mut packet: Packet) {
        self.log.record(self.now, format!("{},recv", device));
        let (is_sensor, app) = match self.flows.get(&flow) {
            Some(f) => {
                let sensor = matches!(
                    self.services[f.idx].request.descriptor,
                    ServiceDescriptor::SensorData { .. }
                );
                (sensor, f.app.clone())
            }
            None => return,
        };
        if !is_sensor {
            // A command flow ends at its device.
            self.delivered.push(encode_envelope(&packet.env));
            packet.trace.push(format!("deliver:{}", device));
            if let Some(f) = self.flows.get_mut(&flow) {
                f.trace = packet.trace;
                f.done = true;
            }
            self.log.record(self.now, format!("{},command_received", device));
            self.trigger_next_request(flow);
            return;
        }

        // The processed data turns around at the device and returns through
        // the overlays: device -> proxy -> (gateway overlay) -> co-located
        // fixed node -> bridge -> (application overlay) -> application.
        let proxy = match self.net.representative_of(&device) {
            Some(p) => p.to_string(),
            None => {
                self.fail(format!("device {} has no overlay representative", device));
                return;
            }
        };
        packet.trace.push(format!("reply:{}->{}", device, proxy));
        let fixed = self.cfg.fixed_node.clone();
        let msg = OverlayMsg {
            overlay: OverlayId::Gateway,
            src: proxy.clone(),
            dst: fixed.clone(),
            payload: packet.env,
            trace: packet.trace,
        };
        let mut delay = self.costs.hop;
        if proxy != fixed {
            match self.net.route(&msg) {
                Ok(hops) => delay += hops as Tick * self.costs.hop,
                Err(e) => {
                    self.fail(format!("gateway overlay route: {}", e));
                    return;
                }
            }
        }
        let _ = app;
        self.schedule_msg(delay, Event::GatewayMsg { flow, msg });
    }

    fn on_gateway_msg(&mut self, flow: u64, msg: OverlayMsg) {
        if let Err(e) = self.net.check_delivery(&msg) {
            self.fail(format!("gateway overlay delivery: {}", e));
            return;
        }
        let app = match self.flows.get(&flow) {
            Some(f) => f.app.clone(),
            None => return,
        };
        let at = msg.dst.clone();
        match self.net.bridge(&msg, &at, &app) {
            Ok(bridged) => {
                self.log.record(self.now, format!("Gateway,bridge,{}", at));
                match self.net.route(&bridged) {
                    Ok(hops) => {
                        let delay = hops as Tick * self.costs.hop;
                        self.schedule_msg(delay, Event::AppMsg { flow, msg: bridged });
                    }
                    Err(e) => self.fail(format!("application overlay route: {}", e)),
                }
            }
            Err(e) => self.fail(format!("bridge: {}", e)),
        }
    }

    fn on_app_msg(&mut self, flow: u64, msg: OverlayMsg) {
        if let Err(e) = self.net.check_delivery(&msg) {
            self.fail(format!("application overlay delivery: {}", e));
            return;
        }
        self.log.record(self.now, format!("{},data_received", msg.dst));
        self.delivered.push(encode_envelope(&msg.payload));
        if let Some(f) = self.flows.get_mut(&flow) {
            f.e2e_end = Some(self.now);
            let mut trace = msg.trace;
            trace.push(format!("deliver:{}", msg.dst));
            f.trace = trace;
            f.done = true;
        }
        self.trigger_next_request(flow);
    }

    /// Applications run their requests sequentially: the next one goes out
    /// once the previous flow has delivered.
    fn trigger_next_request(&mut self, flow: u64) {
        let (idx, app) = match self.flows.get(&flow) {
            Some(f) => (f.idx, f.app.clone()),
            None => return,
        };
        if let Some(next) = self
            .services
            .iter()
            .position(|s| s.request.app == app && s.sent_at.is_none())
        {
            if next > idx {
                self.schedule(0, Event::ServiceSend { idx: next });
            }
        }
    }

    // --- reporting -------------------------------------------------------

    pub fn service_notification(&self, idx: usize) -> Option<&Notification> {
        self.services.get(idx).and_then(|s| s.notification.as_ref())
    }

    pub fn service_plan(&self, idx: usize) -> Option<u64> {
        self.services.get(idx).and_then(|s| s.plan)
    }

    pub fn flow_of_service(&self, idx: usize) -> Option<&FlowState> {
        let id = self.services.get(idx)?.flow?;
        self.flows.get(&id)
    }

    pub fn report(&self) -> MetricsReport {
        let mut report = MetricsReport {
            message_count: self.message_count,
            vnf_invocations: self.invocations.clone(),
            delivered: self.delivered.clone(),
            ..Default::default()
        };
        if let Some(svc) = self.services.first() {
            if let (Some(sent), Some(notified)) = (svc.sent_at, svc.notified_at) {
                report.provisioning_time = notified - sent;
            }
            if let Some(plan) = svc.plan.and_then(|id| self.plans.get(id).ok()) {
                report.orchestration_time = plan.orchestration_time().unwrap_or(0);
                report.phase_times = PhaseTimes {
                    deploy: plan.phase_time(PhaseKind::Deploy),
                    chain: plan.phase_time(PhaseKind::Chain),
                    overlay: plan.phase_time(PhaseKind::OverlayCreate),
                };
                report.instantiation_count = plan.instantiation_count;
            }
        }
        if let Some(f) = self
            .flows
            .values()
            .find(|f| f.e2e_start.is_some() && f.e2e_end.is_some())
        {
            report.e2e_delay = f.e2e_end.unwrap() - f.e2e_start.unwrap();
        }
        report
            .overlay_sizes
            .insert("application".into(), self.net.members(OverlayId::Application).len());
        report
            .overlay_sizes
            .insert("gateway".into(), self.net.members(OverlayId::Gateway).len());
        report
    }
}

fn predeploy_config(kind: VnfKind) -> VnfConfig {
    match kind.family {
        VnfFamily::Da => VnfConfig::Da(crate::vnf::DaConfig::threshold(0.0)),
        VnfFamily::Lb => VnfConfig::Lb,
        _ => VnfConfig::Conversion,
    }
}

/// Data-plane runtime behind the switches: resolves instances against the
/// catalogue, applies the gateway functions, charges detour time, and keeps
/// per-instance invocation counts.
struct RuntimePlane<'a> {
    catalogue: &'a Catalogue,
    table: &'a ConversionTable,
    costs: PhaseCosts,
    invocations: &'a mut BTreeMap<String, u64>,
    lb_seq: &'a mut BTreeMap<String, u64>,
    lb_fronts: &'a BTreeMap<String, VnfKind>,
    relayed: &'a mut u64,
}

impl RuntimePlane<'_> {
    fn apply(&mut self, instance: &str, env: Envelope) -> Result<(Envelope, Tick), FabricError> {
        let inst = self
            .catalogue
            .get(instance)
            .filter(|i| i.state == InstanceState::Active)
            .ok_or_else(|| FabricError::NoVnfAtHop(instance.to_string()))?
            .clone();
        let records_in = env.body.record_count() as u64;
        *self.invocations.entry(instance.to_string()).or_insert(0) += records_in;
        let work = self.costs.proc * records_in;

        let proc_err =
            |e: crate::vnf::VnfError| FabricError::VnfProcessing(format!("{}: {}", instance, e));

        match inst.kind.family {
            VnfFamily::Da => {
                let cfg = match &inst.config {
                    VnfConfig::Da(c) => *c,
                    _ => {
                        return Err(FabricError::VnfProcessing(format!(
                            "{}: aggregator without config",
                            instance
                        )))
                    }
                };
                let mut env = env;
                env.body = da_apply(&env.body, &cfg).map_err(proc_err)?;
                Ok((env, work))
            }
            VnfFamily::Imc => {
                let (s, t) = self
                    .table
                    .imc_pair(inst.kind.variant)
                    .ok_or_else(|| proc_err(crate::vnf::VnfError::FunctionUnavailable(
                        inst.kind.into(),
                    )))?;
                let ctx = RecordContext {
                    device_id: env.src().to_string(),
                    ..Default::default()
                };
                let mut env = env;
                env.body = imc_convert(&env.body, s, t, &ctx).map_err(proc_err)?;
                Ok((env, work))
            }
            VnfFamily::Pc => {
                let (s, t) = self
                    .table
                    .pc_pair(inst.kind.variant)
                    .ok_or_else(|| proc_err(crate::vnf::VnfError::FunctionUnavailable(
                        inst.kind.into(),
                    )))?;
                let env = pc_convert(&env, s, t).map_err(proc_err)?;
                Ok((env, work))
            }
            VnfFamily::Lb => {
                let fronted = self
                    .lb_fronts
                    .get(instance)
                    .copied()
                    .ok_or_else(|| {
                        FabricError::VnfProcessing(format!("{}: fronts no group", instance))
                    })?;
                let group: Vec<crate::vnf::VnfInstance> = self
                    .catalogue
                    .live_of_kind(fronted)
                    .into_iter()
                    .cloned()
                    .collect();
                let seq = self.lb_seq.entry(instance.to_string()).or_insert(0);
                let chosen = lb_select(&group, *seq).map_err(proc_err)?.id.clone();
                *seq += 1;
                // Relay to the selected instance and back: two more hops.
                *self.relayed += 1;
                let (env, inner) = self.apply(&chosen, env)?;
                Ok((env, inner + 2 * self.costs.hop))
            }
        }
    }
}

impl DataPlane for RuntimePlane<'_> {
    fn invoke_vnf(
        &mut self,
        instance: &str,
        env: Envelope,
    ) -> Result<(Envelope, Tick), FabricError> {
        // Detour cost: hop to the instance, processing, hop back.
        let (env, work) = self.apply(instance, env)?;
        Ok((env, work + 2 * self.costs.hop))
    }
}
