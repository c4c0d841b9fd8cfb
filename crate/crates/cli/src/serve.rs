//! Plan API bound to a local socket: the orchestration-plan resource
//! (POST/GET/PUT/DELETE on /OrchestrationPlan) plus the controller's chain
//! registrations on /Chain. One connection at a time; requests are
//! linearized against the world, matching the single-writer plan store.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;
use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};

use iotgw_core::control::ChainRegistration;
use iotgw_core::fabric::{MatchPredicate, Target};
use iotgw_core::model::{
    Aggregation, AppRequirements, ChainId, ChainSpec, DeviceProps, InfoModelKind, ProtocolKind,
};
use iotgw_core::orchestrator::{
    PhaseKind, PhaseStatus, PlanRequest, PlanStatus, delete_plan, run_chain_phase,
    run_deploy_phase, run_overlay_phase,
};
use iotgw_core::sim::World;
use iotgw_core::vnf::{DaConfig, VnfKind};

#[derive(Debug, Deserialize)]
struct RequirementsDto {
    protocol: String,
    info_model: String,
    aggregation: String,
    threshold: Option<f64>,
    window: Option<usize>,
}

#[derive(Debug, Deserialize)]
struct PropsDto {
    protocol: String,
    info_model: String,
}

#[derive(Debug, Deserialize)]
struct PlanRequestDto {
    chain_id: String,
    functions: Vec<String>,
    egress_device: String,
    app: RequirementsDto,
    device: PropsDto,
}

#[derive(Debug, Serialize)]
struct PhaseDto {
    phase: &'static str,
    status: &'static str,
    start: Option<u64>,
    end: Option<u64>,
}

#[derive(Debug, Serialize)]
struct PlanDto {
    id: u64,
    uri: String,
    status: &'static str,
    chain_id: String,
    functions: Vec<String>,
    instantiation_count: u32,
    deployed: Vec<String>,
    reused: Vec<String>,
    phases: Vec<PhaseDto>,
}

#[derive(Debug, Serialize)]
struct ChainDto {
    chain_id: String,
    functions: Vec<String>,
    ingress: String,
    egress: String,
}

fn plan_dto(plan: &iotgw_core::orchestrator::OrchestrationPlan) -> PlanDto {
    PlanDto {
        id: plan.id,
        uri: plan.uri.clone(),
        status: plan.status.as_str(),
        chain_id: plan.request.chain.chain_id.0.clone(),
        functions: plan
            .request
            .chain
            .functions
            .iter()
            .map(|k| k.to_string())
            .collect(),
        instantiation_count: plan.instantiation_count,
        deployed: plan.deployed.clone(),
        reused: plan.reused.clone(),
        phases: plan
            .phases
            .iter()
            .map(|p| PhaseDto {
                phase: p.kind.as_str(),
                status: p.status.as_str(),
                start: p.start,
                end: p.end,
            })
            .collect(),
    }
}

fn parse_plan_request(body: &str, classifier: &str) -> Result<PlanRequest, String> {
    let dto: PlanRequestDto = serde_json::from_str(body).map_err(|e| e.to_string())?;
    let protocol = |s: &str| ProtocolKind::parse(s).ok_or(format!("bad protocol {s:?}"));
    let model = |s: &str| InfoModelKind::parse(s).ok_or(format!("bad info model {s:?}"));
    let aggregation = Aggregation::parse(&dto.app.aggregation)
        .ok_or(format!("bad aggregation {:?}", dto.app.aggregation))?;
    let requirements = AppRequirements {
        protocol: protocol(&dto.app.protocol)?,
        info_model: model(&dto.app.info_model)?,
        aggregation,
    };
    requirements.validate().map_err(|e| e.to_string())?;
    let props = DeviceProps {
        protocol: protocol(&dto.device.protocol)?,
        info_model: model(&dto.device.info_model)?,
    };
    let functions = dto
        .functions
        .iter()
        .map(|f| VnfKind::parse(f).ok_or(format!("bad function {f:?}")))
        .collect::<Result<Vec<_>, _>>()?;
    let da_config = match aggregation {
        Aggregation::ThresholdData => Some(DaConfig::threshold(dto.app.threshold.unwrap_or(0.0))),
        Aggregation::AverageData => Some(DaConfig::average(dto.app.window.unwrap_or(1))),
        Aggregation::None => None,
    };
    Ok(PlanRequest {
        chain: ChainSpec::new(ChainId::new(dto.chain_id), functions),
        classification: MatchPredicate::classification(requirements, props),
        ingress: classifier.to_string(),
        egress: Target::Device(dto.egress_device),
        da_config,
    })
}

/// Runs a freshly created plan's three phases synchronously, advancing the
/// world clock by their durations.
fn execute_plan(world: &mut World, id: u64) -> Result<(), String> {
    let request = world.plans.get(id).map_err(|e| e.to_string())?.request.clone();
    {
        let plan = world.plans.get_mut(id).map_err(|e| e.to_string())?;
        plan.status = PlanStatus::Running;
    }
    let start = world.now;

    let deploy = run_deploy_phase(
        &request.chain,
        &request.da_config,
        world.cfg.scale_k,
        &world.store,
        &mut world.catalogue,
        &mut world.hosts,
        &mut world.placement,
        &world.costs,
    );
    for (off, line) in &deploy.steps {
        world.log.record(start + off, line.clone());
    }
    let deploy_end = start + deploy.duration;
    let deployed = deploy.instantiated.clone();
    {
        let plan = world.plans.get_mut(id).map_err(|e| e.to_string())?;
        plan.deployed = deploy.instantiated.clone();
        plan.reused = deploy.reused.clone();
        plan.instantiation_count = deploy.instantiated.len() as u32;
        let rec = plan.phase_mut(PhaseKind::Deploy);
        rec.start = Some(start);
        rec.end = Some(deploy_end);
        rec.status = if deploy.error.is_none() { PhaseStatus::Done } else { PhaseStatus::Failed };
    }
    if let Some(e) = deploy.error {
        world.plans.get_mut(id).map_err(|e| e.to_string())?.status = PlanStatus::Failed;
        world.now = deploy_end;
        return Err(format!("deploy failed: {}", e));
    }
    for inst in &deployed {
        world.wire_instance(inst).map_err(|e| e.to_string())?;
    }

    let reg = ChainRegistration {
        chain: request.chain.clone(),
        classification: request.classification.clone(),
        ingress: request.ingress.clone(),
        egress: request.egress.clone(),
    };
    world.now = deploy_end;
    let chain = run_chain_phase(reg, &mut world.controller, &world.topo, &mut world.fabric, &world.costs);
    for (off, line) in &chain.steps {
        world.log.record(deploy_end + off, line.clone());
    }
    let chain_end = deploy_end + chain.duration;
    {
        let plan = world.plans.get_mut(id).map_err(|e| e.to_string())?;
        let rec = plan.phase_mut(PhaseKind::Chain);
        rec.start = Some(deploy_end);
        rec.end = Some(chain_end);
        rec.status = if chain.error.is_none() { PhaseStatus::Done } else { PhaseStatus::Failed };
    }
    if let Some(e) = chain.error {
        world.plans.get_mut(id).map_err(|e| e.to_string())?.status = PlanStatus::Failed;
        world.now = chain_end;
        return Err(format!("chain failed: {}", e));
    }

    let to_join: Vec<String> = {
        let mut set = std::collections::BTreeSet::new();
        for inst in world.catalogue.instances() {
            set.insert(inst.host.clone());
        }
        for sw in world.fabric.switches() {
            set.insert(sw.host.clone());
        }
        set.into_iter().collect()
    };
    let master = world.cfg.fixed_node.clone();
    world.now = chain_end;
    let overlay = run_overlay_phase(&master, &to_join, &[], &mut world.net, &world.costs);
    for (off, line) in &overlay.steps {
        world.log.record(chain_end + off, line.clone());
    }
    let overlay_end = chain_end + overlay.duration;
    let ok = overlay.error.is_none();
    {
        let plan = world.plans.get_mut(id).map_err(|e| e.to_string())?;
        plan.joined = overlay.joined.clone();
        let rec = plan.phase_mut(PhaseKind::OverlayCreate);
        rec.start = Some(chain_end);
        rec.end = Some(overlay_end);
        rec.status = if ok { PhaseStatus::Done } else { PhaseStatus::Failed };
        plan.status = if ok { PlanStatus::Done } else { PlanStatus::Failed };
    }
    world.now = overlay_end;
    match overlay.error {
        None => Ok(()),
        Some(e) => Err(format!("overlay failed: {}", e)),
    }
}

struct Response {
    status: u16,
    body: String,
}

fn json<T: Serialize>(status: u16, value: &T) -> Response {
    Response { status, body: serde_json::to_string_pretty(value).unwrap() }
}

fn error_body(status: u16, message: &str) -> Response {
    Response {
        status,
        body: serde_json::json!({ "error": message }).to_string(),
    }
}

fn route(world: &mut World, method: &str, path: &str, body: &str) -> Response {
    let classifier = world
        .fabric
        .classifier()
        .map(|s| s.id.clone())
        .unwrap_or_default();
    match (method, path) {
        ("POST", "/OrchestrationPlan") => match parse_plan_request(body, &classifier) {
            Ok(request) => match world.plans.create(request) {
                Ok(uri) => {
                    let id: u64 = uri.rsplit('/').next().unwrap().parse().unwrap();
                    let exec = execute_plan(world, id);
                    let mut value = serde_json::json!({ "uri": uri });
                    if let Err(e) = exec {
                        value["execution_error"] = serde_json::Value::String(e);
                    }
                    Response { status: 201, body: value.to_string() }
                }
                Err(e) => error_body(400, &e.to_string()),
            },
            Err(e) => error_body(400, &e),
        },
        ("GET", "/OrchestrationPlan/all") => {
            let dtos: Vec<PlanDto> = world.plans.get_all().into_iter().map(plan_dto).collect();
            json(200, &dtos)
        }
        ("GET", p) if p.starts_with("/OrchestrationPlan/") => {
            match p.trim_start_matches("/OrchestrationPlan/").parse::<u64>() {
                Ok(id) => match world.plans.get(id) {
                    Ok(plan) => json(200, &plan_dto(plan)),
                    Err(e) => error_body(404, &e.to_string()),
                },
                Err(_) => error_body(400, "bad plan id"),
            }
        }
        ("PUT", p) if p.starts_with("/OrchestrationPlan/") => {
            match p.trim_start_matches("/OrchestrationPlan/").parse::<u64>() {
                Ok(id) => match parse_plan_request(body, &classifier) {
                    Ok(request) => match world.plans.update(id, request) {
                        Ok(()) => json(200, &plan_dto(world.plans.get(id).unwrap())),
                        Err(iotgw_core::orchestrator::PlanError::PlanNotFound(_)) => {
                            error_body(404, "plan not found")
                        }
                        Err(e) => error_body(409, &e.to_string()),
                    },
                    Err(e) => error_body(400, &e),
                },
                Err(_) => error_body(400, "bad plan id"),
            }
        }
        ("DELETE", p) if p.starts_with("/OrchestrationPlan/") => {
            match p.trim_start_matches("/OrchestrationPlan/").parse::<u64>() {
                Ok(id) => {
                    let World {
                        plans,
                        catalogue,
                        hosts,
                        controller,
                        topo,
                        fabric,
                        ..
                    } = world;
                    match delete_plan(plans, id, catalogue, hosts, controller, topo, fabric) {
                        Ok(_) => Response { status: 204, body: String::new() },
                        Err(e) => error_body(404, &e.to_string()),
                    }
                }
                Err(_) => error_body(400, "bad plan id"),
            }
        }
        ("GET", "/Chain") => {
            let dtos: Vec<ChainDto> = world
                .controller
                .registrations()
                .map(|r| ChainDto {
                    chain_id: r.chain.chain_id.0.clone(),
                    functions: r.chain.functions.iter().map(|k| k.to_string()).collect(),
                    ingress: r.ingress.clone(),
                    egress: r.egress.to_string(),
                })
                .collect();
            json(200, &dtos)
        }
        ("GET", p) if p.starts_with("/Chain/") => {
            let id = ChainId::new(p.trim_start_matches("/Chain/"));
            match world.controller.registration(&id) {
                Some(r) => json(
                    200,
                    &ChainDto {
                        chain_id: r.chain.chain_id.0.clone(),
                        functions: r.chain.functions.iter().map(|k| k.to_string()).collect(),
                        ingress: r.ingress.clone(),
                        egress: r.egress.to_string(),
                    },
                ),
                None => error_body(404, "chain not registered"),
            }
        }
        ("DELETE", p) if p.starts_with("/Chain/") => {
            let id = ChainId::new(p.trim_start_matches("/Chain/"));
            if world.controller.registration(&id).is_some() {
                let World { controller, fabric, .. } = world;
                controller.unregister_chain(&id, fabric);
                Response { status: 204, body: String::new() }
            } else {
                error_body(404, "chain not registered")
            }
        }
        _ => error_body(404, "no such resource"),
    }
}

fn handle_connection(world: &mut World, stream: TcpStream) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let mut parts = request_line.split_whitespace();
    let method = parts.next().unwrap_or("").to_string();
    let path = parts.next().unwrap_or("").to_string();

    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            content_length = v.trim().parse().unwrap_or(0);
        }
    }
    let mut body = vec![0u8; content_length];
    if content_length > 0 {
        reader.read_exact(&mut body)?;
    }
    let body = String::from_utf8_lossy(&body).to_string();

    let response = route(world, &method, &path, &body);
    let reason = match response.status {
        200 => "OK",
        201 => "Created",
        204 => "No Content",
        400 => "Bad Request",
        404 => "Not Found",
        409 => "Conflict",
        _ => "Internal Server Error",
    };
    let mut stream = reader.into_inner();
    write!(
        stream,
        "HTTP/1.1 {} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        response.status,
        reason,
        response.body.len(),
        response.body
    )?;
    stream.flush()
}

/// Serves the plan API until `stop` is raised; each accepted connection is
/// one request.
pub fn serve(world: &mut World, listener: TcpListener, stop: Arc<AtomicBool>) {
    for stream in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        match stream {
            Ok(s) => {
                if let Err(e) = handle_connection(world, s) {
                    eprintln!("plan api: {}", e);
                }
            }
            Err(e) => {
                eprintln!("plan api accept: {}", e);
                break;
            }
        }
        if stop.load(Ordering::SeqCst) {
            break;
        }
    }
}
