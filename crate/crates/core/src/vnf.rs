//! Gateway functions as VNFs: the Data Aggregator, Information Model
//! Converter, Protocol Converter, and Load Balancer, plus the Gateway
//! Functions Store, the VNF Catalogue, and instance lifecycle.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::model::{
    Body, CanonicalRecord, DeviceClass, Envelope, InfoModelKind, ProtocolKind, Tick,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VnfFamily {
    Da,
    Imc,
    Pc,
    Lb,
}

impl VnfFamily {
    pub fn as_str(&self) -> &'static str {
        match self {
            VnfFamily::Da => "DA",
            VnfFamily::Imc => "IMC",
            VnfFamily::Pc => "PC",
            VnfFamily::Lb => "LB",
        }
    }
}

/// A gateway function family plus variant index; for IMC/PC the variant
/// resolves to exactly one (source, target) conversion pair through the
/// feasibility table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VnfKind {
    pub family: VnfFamily,
    pub variant: u8,
}

impl VnfKind {
    pub fn da(variant: u8) -> Self {
        VnfKind { family: VnfFamily::Da, variant }
    }
    pub fn imc(variant: u8) -> Self {
        VnfKind { family: VnfFamily::Imc, variant }
    }
    pub fn pc(variant: u8) -> Self {
        VnfKind { family: VnfFamily::Pc, variant }
    }
    pub fn lb(variant: u8) -> Self {
        VnfKind { family: VnfFamily::Lb, variant }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let split = s.find(|c: char| c.is_ascii_digit())?;
        let (fam, num) = s.split_at(split);
        let variant: u8 = num.parse().ok()?;
        let family = match fam {
            "DA" => VnfFamily::Da,
            "IMC" => VnfFamily::Imc,
            "PC" => VnfFamily::Pc,
            "LB" => VnfFamily::Lb,
            _ => return None,
        };
        Some(VnfKind { family, variant })
    }
}

impl fmt::Display for VnfKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.family.as_str(), self.variant)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VnfError {
    #[error("function {0} unavailable")]
    FunctionUnavailable(VnfKindName),
    #[error("host {0} has no free capacity")]
    HostFull(String),
    #[error("host {0} cannot execute functions")]
    HostNotCapable(String),
    #[error("unknown host {0}")]
    UnknownHost(String),
    #[error("unknown instance {0}")]
    UnknownInstance(String),
    #[error("no conversion from {from} to {to}")]
    InfeasibleConversion { from: String, to: String },
    #[error("envelope protocol is {found}, converter expects {expected}")]
    ProtocolMismatch { expected: ProtocolKind, found: ProtocolKind },
    #[error("body not processable here: {0}")]
    UnsupportedBody(String),
    #[error("load-balancer group is empty")]
    EmptyGroup,
    #[error("load-balancer group mixes kinds")]
    MixedGroup,
}

/// Display-form of a kind, kept as a plain string so the error type stays
/// cheap to clone and compare.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VnfKindName(pub String);

impl fmt::Display for VnfKindName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<VnfKind> for VnfKindName {
    fn from(k: VnfKind) -> Self {
        VnfKindName(k.to_string())
    }
}

// --- feasibility table --------------------------------------------------

/// Declares which conversion pairs are provisionable. A conversion that is
/// not declared here is never provisioned; lookups for it fail with
/// `FunctionUnavailable`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConversionTable {
    imc: BTreeMap<u8, (InfoModelKind, InfoModelKind)>,
    pc: BTreeMap<u8, (ProtocolKind, ProtocolKind)>,
}

impl ConversionTable {
    pub fn empty() -> Self {
        ConversionTable { imc: BTreeMap::new(), pc: BTreeMap::new() }
    }

    pub fn declare_imc(&mut self, variant: u8, source: InfoModelKind, target: InfoModelKind) {
        self.imc.insert(variant, (source, target));
    }

    pub fn declare_pc(&mut self, variant: u8, source: ProtocolKind, target: ProtocolKind) {
        self.pc.insert(variant, (source, target));
    }

    pub fn imc_pair(&self, variant: u8) -> Option<(InfoModelKind, InfoModelKind)> {
        self.imc.get(&variant).copied()
    }

    pub fn pc_pair(&self, variant: u8) -> Option<(ProtocolKind, ProtocolKind)> {
        self.pc.get(&variant).copied()
    }

    pub fn find_imc(&self, source: InfoModelKind, target: InfoModelKind) -> Option<VnfKind> {
        self.imc
            .iter()
            .find(|(_, pair)| **pair == (source, target))
            .map(|(v, _)| VnfKind::imc(*v))
    }

    pub fn find_pc(&self, source: ProtocolKind, target: ProtocolKind) -> Option<VnfKind> {
        self.pc
            .iter()
            .find(|(_, pair)| **pair == (source, target))
            .map(|(v, _)| VnfKind::pc(*v))
    }

    /// Resolves the conversion pair a kind stands for, if declared.
    pub fn declared(&self, kind: VnfKind) -> bool {
        match kind.family {
            VnfFamily::Imc => self.imc.contains_key(&kind.variant),
            VnfFamily::Pc => self.pc.contains_key(&kind.variant),
            VnfFamily::Da | VnfFamily::Lb => true,
        }
    }
}

impl Default for ConversionTable {
    fn default() -> Self {
        let mut t = ConversionTable::empty();
        t.declare_imc(1, InfoModelKind::Raw, InfoModelKind::SenmlLike);
        t.declare_imc(2, InfoModelKind::Raw, InfoModelKind::SensormlLike);
        // Robot commands arrive as SenML-style descriptions; raw data is not
        // a valid command source.
        t.declare_imc(3, InfoModelKind::SenmlLike, InfoModelKind::RobotCmd);
        t.declare_pc(1, ProtocolKind::CoapLike, ProtocolKind::HttpLike);
        t.declare_pc(2, ProtocolKind::HttpLike, ProtocolKind::LcpLike);
        t
    }
}

// --- store and catalogue --------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VnfPackage {
    pub kind: VnfKind,
    pub version: String,
    pub metadata: Vec<(String, String)>,
}

impl VnfPackage {
    pub fn new(kind: VnfKind, version: impl Into<String>) -> Self {
        VnfPackage { kind, version: version.into(), metadata: Vec::new() }
    }
}

/// The list of gateway functions the provider domain can deliver.
#[derive(Debug, Clone, Default)]
pub struct GatewayFunctionStore {
    packages: BTreeMap<VnfKind, VnfPackage>,
    pub table: ConversionTable,
}

impl GatewayFunctionStore {
    pub fn new(table: ConversionTable) -> Self {
        GatewayFunctionStore { packages: BTreeMap::new(), table }
    }

    pub fn add_package(&mut self, pkg: VnfPackage) {
        self.packages.insert(pkg.kind, pkg);
    }

    pub fn remove_package(&mut self, kind: VnfKind) {
        self.packages.remove(&kind);
    }

    pub fn packages(&self) -> impl Iterator<Item = &VnfPackage> {
        self.packages.values()
    }

    /// Finds the package for a kind. Conversions whose pair is not declared
    /// feasible are never provisioned, so they look absent too.
    pub fn lookup(&self, kind: VnfKind) -> Result<&VnfPackage, VnfError> {
        if !self.table.declared(kind) {
            return Err(VnfError::FunctionUnavailable(kind.into()));
        }
        self.packages
            .get(&kind)
            .ok_or_else(|| VnfError::FunctionUnavailable(kind.into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstanceState {
    Instantiated,
    Active,
    Terminated,
}

#[derive(Debug, Clone, PartialEq)]
pub enum VnfConfig {
    Da(DaConfig),
    Conversion,
    Lb,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DaMode {
    Threshold,
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DaConfig {
    pub mode: DaMode,
    pub threshold: f64,
    /// Window length in records; only meaningful in Average mode.
    pub window: usize,
}

impl DaConfig {
    pub fn threshold(threshold: f64) -> Self {
        DaConfig { mode: DaMode::Threshold, threshold, window: 1 }
    }

    pub fn average(window: usize) -> Self {
        DaConfig { mode: DaMode::Average, threshold: 0.0, window: window.max(1) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VnfInstance {
    pub id: String,
    pub kind: VnfKind,
    pub host: String,
    pub state: InstanceState,
    pub config: VnfConfig,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CatalogueOp {
    Instantiate { id: String, kind: VnfKind, host: String },
    Terminate { id: String },
}

#[derive(Debug, Clone, Default)]
pub struct HostRegistry {
    hosts: BTreeMap<String, HostEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HostEntry {
    pub class: DeviceClass,
    pub capacity: u32,
    pub free: u32,
}

impl HostRegistry {
    pub fn add_host(&mut self, id: impl Into<String>, class: DeviceClass, capacity: u32) {
        self.hosts
            .insert(id.into(), HostEntry { class, capacity, free: capacity });
    }

    pub fn get(&self, id: &str) -> Option<&HostEntry> {
        self.hosts.get(id)
    }

    /// Class-B hosts with at least one free slot, least occupied first so
    /// successive placements spread across hosts, ties broken by id.
    pub fn eligible(&self) -> Vec<String> {
        let mut v: Vec<(u32, String)> = self
            .hosts
            .iter()
            .filter(|(_, h)| h.class == DeviceClass::B && h.free > 0)
            .map(|(id, h)| (h.capacity - h.free, id.clone()))
            .collect();
        v.sort();
        v.into_iter().map(|(_, id)| id).collect()
    }

    pub fn occupancy(&self) -> BTreeMap<String, (u32, u32)> {
        self.hosts
            .iter()
            .map(|(id, h)| (id.clone(), (h.free, h.capacity)))
            .collect()
    }
}

/// Catalogue of on-boarded instances plus host bookkeeping. Terminated
/// instances drop out of the catalogue entirely; the operation log stays.
#[derive(Debug, Clone, Default)]
pub struct Catalogue {
    instances: BTreeMap<String, VnfInstance>,
    next_seq: u64,
    pub op_log: Vec<CatalogueOp>,
}

impl Catalogue {
    /// A live (non-terminated) instance of the kind, if any; lowest id wins.
    pub fn check(&self, kind: VnfKind) -> Option<&VnfInstance> {
        self.instances.values().find(|i| i.kind == kind)
    }

    pub fn get(&self, id: &str) -> Option<&VnfInstance> {
        self.instances.get(id)
    }

    pub fn is_active(&self, id: &str) -> bool {
        matches!(self.instances.get(id), Some(i) if i.state == InstanceState::Active)
    }

    pub fn live_of_kind(&self, kind: VnfKind) -> Vec<&VnfInstance> {
        self.instances.values().filter(|i| i.kind == kind).collect()
    }

    pub fn instances(&self) -> impl Iterator<Item = &VnfInstance> {
        self.instances.values()
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn instantiate(
        &mut self,
        hosts: &mut HostRegistry,
        kind: VnfKind,
        host: &str,
        config: VnfConfig,
    ) -> Result<String, VnfError> {
        let entry = hosts
            .hosts
            .get_mut(host)
            .ok_or_else(|| VnfError::UnknownHost(host.to_string()))?;
        if entry.class == DeviceClass::A {
            return Err(VnfError::HostNotCapable(host.to_string()));
        }
        if entry.free == 0 {
            return Err(VnfError::HostFull(host.to_string()));
        }
        entry.free -= 1;
        self.next_seq += 1;
        let id = format!("{}-{}", kind, self.next_seq);
        let mut instance = VnfInstance {
            id: id.clone(),
            kind,
            host: host.to_string(),
            state: InstanceState::Instantiated,
            config,
        };
        instance.state = InstanceState::Active;
        self.instances.insert(id.clone(), instance);
        self.op_log.push(CatalogueOp::Instantiate {
            id: id.clone(),
            kind,
            host: host.to_string(),
        });
        Ok(id)
    }

    pub fn terminate(&mut self, hosts: &mut HostRegistry, id: &str) -> Result<(), VnfError> {
        let instance = self
            .instances
            .remove(id)
            .ok_or_else(|| VnfError::UnknownInstance(id.to_string()))?;
        if let Some(entry) = hosts.hosts.get_mut(&instance.host) {
            entry.free += 1;
        }
        self.op_log.push(CatalogueOp::Terminate { id: id.to_string() });
        Ok(())
    }

    /// Brute-force replay of the operation log; used as the consistency
    /// oracle for the catalogue state.
    pub fn replay_ids(ops: &[CatalogueOp]) -> Vec<String> {
        let mut live: Vec<String> = Vec::new();
        for op in ops {
            match op {
                CatalogueOp::Instantiate { id, .. } => live.push(id.clone()),
                CatalogueOp::Terminate { id } => live.retain(|x| x != id),
            }
        }
        live.sort();
        live
    }

    pub fn live_ids(&self) -> Vec<String> {
        self.instances.keys().cloned().collect()
    }
}

// --- data aggregator ------------------------------------------------------

/// Threshold mode keeps records strictly above the threshold, order
/// preserved. Average mode emits one record per window of `window` records
/// carrying the arithmetic mean; identity fields come from the window's last
/// record.
pub fn da_process(records: &[CanonicalRecord], cfg: &DaConfig) -> Vec<CanonicalRecord> {
    match cfg.mode {
        DaMode::Threshold => records
            .iter()
            .filter(|r| r.value > cfg.threshold)
            .cloned()
            .collect(),
        DaMode::Average => {
            let window = cfg.window.max(1);
            records
                .chunks(window)
                .map(|chunk| {
                    let mean =
                        chunk.iter().map(|r| r.value).sum::<f64>() / chunk.len() as f64;
                    let last = chunk.last().expect("chunks are non-empty");
                    CanonicalRecord { value: mean, ..last.clone() }
                })
                .collect()
        }
    }
}

fn da_values(values: &[f64], cfg: &DaConfig) -> Vec<f64> {
    match cfg.mode {
        DaMode::Threshold => values.iter().copied().filter(|v| *v > cfg.threshold).collect(),
        DaMode::Average => values
            .chunks(cfg.window.max(1))
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect(),
    }
}

/// Applies the aggregator to whatever body shape carries the data, decoding
/// and re-encoding text models in place so either chain order works.
pub fn da_apply(body: &Body, cfg: &DaConfig) -> Result<Body, VnfError> {
    match body {
        Body::RawValues(vals) => Ok(Body::RawValues(da_values(vals, cfg))),
        Body::Records(records) => Ok(Body::Records(da_process(records, cfg))),
        Body::EncodedText { model: InfoModelKind::SenmlLike, text } => {
            let records = senml_decode(text)?;
            Ok(Body::EncodedText {
                model: InfoModelKind::SenmlLike,
                text: senml_encode(&da_process(&records, cfg)),
            })
        }
        Body::EncodedText { model: InfoModelKind::SensormlLike, text } => {
            let records = sensorml_decode(text)?;
            Ok(Body::EncodedText {
                model: InfoModelKind::SensormlLike,
                text: sensorml_encode(&da_process(&records, cfg)),
            })
        }
        other => Err(VnfError::UnsupportedBody(format!(
            "aggregator cannot process {:?}",
            other.info_model()
        ))),
    }
}

// --- information model converter -------------------------------------------

/// Identity fields used when bare raw values have to be lifted into records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecordContext {
    pub device_id: String,
    pub quantity: String,
    pub unit: String,
    pub timestamp: Tick,
}

const SENML_ESCAPES: &[char] = &['%', '=', ' ', '\n'];
const SENSORML_ESCAPES: &[char] = &['%', '"', '\n'];

/// Text conversions the IMC knows how to perform. The feasibility table
/// decides which of these are provisionable in a given scenario.
pub const ROBOT_VERBS: &[&str] = &["move", "grab"];

fn esc(s: &str, set: &[char]) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        if set.contains(&c) {
            let mut buf = [0u8; 4];
            for b in c.encode_utf8(&mut buf).as_bytes() {
                out.push_str(&format!("%{:02X}", b));
            }
        } else {
            out.push(c);
        }
    }
    out
}

fn unesc(s: &str) -> Result<String, VnfError> {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            if i + 3 > bytes.len() {
                return Err(VnfError::UnsupportedBody("truncated escape".into()));
            }
            let hex = std::str::from_utf8(&bytes[i + 1..i + 3])
                .map_err(|_| VnfError::UnsupportedBody("bad escape".into()))?;
            out.push(
                u8::from_str_radix(hex, 16)
                    .map_err(|_| VnfError::UnsupportedBody("bad escape".into()))?,
            );
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).map_err(|_| VnfError::UnsupportedBody("bad utf-8".into()))
}

/// One record per line: `bn=<base name> n=<quantity> u=<unit> v=<value> t=<ticks>`.
pub fn senml_encode(records: &[CanonicalRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&format!(
            "bn={} n={} u={} v={} t={}\n",
            esc(&r.device_id, SENML_ESCAPES),
            esc(&r.quantity, SENML_ESCAPES),
            esc(&r.unit, SENML_ESCAPES),
            r.value,
            r.timestamp
        ));
    }
    out
}

fn senml_fields(line: &str) -> Result<BTreeMap<String, String>, VnfError> {
    let mut map = BTreeMap::new();
    for piece in line.split(' ').filter(|p| !p.is_empty()) {
        let (k, v) = piece.split_once('=').ok_or_else(|| {
            VnfError::UnsupportedBody(format!("senml field {:?} missing '='", piece))
        })?;
        map.insert(k.to_string(), v.to_string());
    }
    Ok(map)
}

pub fn senml_decode(text: &str) -> Result<Vec<CanonicalRecord>, VnfError> {
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let fields = senml_fields(line)?;
        let get = |k: &str| {
            fields
                .get(k)
                .ok_or_else(|| VnfError::UnsupportedBody(format!("senml line missing {}", k)))
        };
        out.push(CanonicalRecord {
            device_id: unesc(get("bn")?)?,
            quantity: unesc(get("n")?)?,
            unit: unesc(get("u")?)?,
            value: get("v")?
                .parse()
                .map_err(|_| VnfError::UnsupportedBody("bad senml value".into()))?,
            timestamp: get("t")?
                .parse()
                .map_err(|_| VnfError::UnsupportedBody("bad senml time".into()))?,
        });
    }
    Ok(out)
}

/// Tag-based alternative encoding with the same fields.
pub fn sensorml_encode(records: &[CanonicalRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&format!(
            "<obs device=\"{}\" quantity=\"{}\" unit=\"{}\" value=\"{}\" time=\"{}\"/>\n",
            esc(&r.device_id, SENSORML_ESCAPES),
            esc(&r.quantity, SENSORML_ESCAPES),
            esc(&r.unit, SENSORML_ESCAPES),
            r.value,
            r.timestamp
        ));
    }
    out
}

pub fn sensorml_decode(text: &str) -> Result<Vec<CanonicalRecord>, VnfError> {
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let inner = line
            .strip_prefix("<obs ")
            .and_then(|l| l.strip_suffix("/>"))
            .ok_or_else(|| VnfError::UnsupportedBody("bad sensorml tag".into()))?;
        let mut fields = BTreeMap::new();
        for piece in inner.split(' ').filter(|p| !p.is_empty()) {
            let (k, v) = piece
                .split_once("=\"")
                .ok_or_else(|| VnfError::UnsupportedBody("bad sensorml attr".into()))?;
            let v = v
                .strip_suffix('"')
                .ok_or_else(|| VnfError::UnsupportedBody("unterminated attr".into()))?;
            fields.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| {
            fields
                .get(k)
                .ok_or_else(|| VnfError::UnsupportedBody(format!("sensorml missing {}", k)))
        };
        out.push(CanonicalRecord {
            device_id: unesc(get("device")?)?,
            quantity: unesc(get("quantity")?)?,
            unit: unesc(get("unit")?)?,
            value: get("value")?
                .parse()
                .map_err(|_| VnfError::UnsupportedBody("bad sensorml value".into()))?,
            timestamp: get("time")?
                .parse()
                .map_err(|_| VnfError::UnsupportedBody("bad sensorml time".into()))?,
        });
    }
    Ok(out)
}

fn records_of(body: &Body, ctx: &RecordContext) -> Result<Vec<CanonicalRecord>, VnfError> {
    match body {
        Body::Records(r) => Ok(r.clone()),
        Body::RawValues(vals) => Ok(vals
            .iter()
            .enumerate()
            .map(|(i, v)| CanonicalRecord {
                device_id: ctx.device_id.clone(),
                quantity: ctx.quantity.clone(),
                unit: ctx.unit.clone(),
                value: *v,
                timestamp: ctx.timestamp + i as Tick,
            })
            .collect()),
        other => Err(VnfError::UnsupportedBody(format!(
            "expected raw data, found {:?}",
            other.info_model()
        ))),
    }
}

/// Resource-path form of a robot command: `/robot/<verb>?k=v&k=v`.
fn robot_path(verb: &str, args: &[String]) -> String {
    if args.is_empty() {
        format!("/robot/{}", verb)
    } else {
        format!("/robot/{}?{}", verb, args.join("&"))
    }
}

/// A robot task as an application emits it: a SenML-style line whose string
/// value carries the resource path of the command.
pub fn robot_request_body(origin: &str, path: &str) -> Body {
    Body::EncodedText {
        model: InfoModelKind::SenmlLike,
        text: format!(
            "bn={} n=task u=cmd vs={}\n",
            esc(origin, SENML_ESCAPES),
            esc(path, SENML_ESCAPES)
        ),
    }
}

fn robot_from_path(path: &str) -> Result<(String, Vec<String>), VnfError> {
    let (route, query) = match path.split_once('?') {
        Some((r, q)) => (r, Some(q)),
        None => (path, None),
    };
    let verb = route
        .rsplit('/')
        .next()
        .filter(|v| !v.is_empty())
        .ok_or_else(|| VnfError::UnsupportedBody("command path has no verb".into()))?;
    if !ROBOT_VERBS.contains(&verb) {
        return Err(VnfError::UnsupportedBody(format!("unknown robot verb {:?}", verb)));
    }
    let args = query
        .map(|q| q.split('&').map(|s| s.to_string()).collect())
        .unwrap_or_default();
    Ok((verb.to_string(), args))
}

fn infeasible(source: InfoModelKind, target: InfoModelKind) -> VnfError {
    VnfError::InfeasibleConversion { from: source.to_string(), to: target.to_string() }
}

/// Converts a body between information models. The `(source, target)` pair
/// comes from the variant's declared conversion pair; `ctx` supplies
/// identity fields when bare raw values have to be lifted.
pub fn imc_convert(
    body: &Body,
    source: InfoModelKind,
    target: InfoModelKind,
    ctx: &RecordContext,
) -> Result<Body, VnfError> {
    if body.info_model() != source {
        return Err(VnfError::UnsupportedBody(format!(
            "body is {:?}, converter expects {:?}",
            body.info_model(),
            source
        )));
    }
    if source == target {
        return Ok(body.clone());
    }
    match (source, target) {
        (InfoModelKind::Raw, InfoModelKind::SenmlLike) => Ok(Body::EncodedText {
            model: InfoModelKind::SenmlLike,
            text: senml_encode(&records_of(body, ctx)?),
        }),
        (InfoModelKind::Raw, InfoModelKind::SensormlLike) => Ok(Body::EncodedText {
            model: InfoModelKind::SensormlLike,
            text: sensorml_encode(&records_of(body, ctx)?),
        }),
        (InfoModelKind::SenmlLike, InfoModelKind::Raw) => match body {
            Body::EncodedText { text, .. } => Ok(Body::Records(senml_decode(text)?)),
            _ => Err(VnfError::UnsupportedBody("senml body must be text".into())),
        },
        (InfoModelKind::SensormlLike, InfoModelKind::Raw) => match body {
            Body::EncodedText { text, .. } => Ok(Body::Records(sensorml_decode(text)?)),
            _ => Err(VnfError::UnsupportedBody("sensorml body must be text".into())),
        },
        (InfoModelKind::SenmlLike, InfoModelKind::RobotCmd) => match body {
            // A command description is a senml line whose string value is
            // the resource path; the last path segment is the verb, query
            // pairs become the args.
            Body::EncodedText { text, .. } => {
                let line = text
                    .lines()
                    .find(|l| !l.trim().is_empty())
                    .ok_or_else(|| VnfError::UnsupportedBody("empty command body".into()))?;
                let fields = senml_fields(line)?;
                let path = fields.get("vs").ok_or_else(|| {
                    VnfError::UnsupportedBody("command line missing vs field".into())
                })?;
                let (verb, args) = robot_from_path(&unesc(path)?)?;
                Ok(Body::RobotCommand { verb, args })
            }
            _ => Err(VnfError::UnsupportedBody("senml body must be text".into())),
        },
        (InfoModelKind::RobotCmd, InfoModelKind::SenmlLike) => match body {
            Body::RobotCommand { verb, args } => Ok(Body::EncodedText {
                model: InfoModelKind::SenmlLike,
                text: format!(
                    "bn={} n=task u=cmd vs={}\n",
                    esc(&ctx.device_id, SENML_ESCAPES),
                    esc(&robot_path(verb, args), SENML_ESCAPES)
                ),
            }),
            _ => Err(VnfError::UnsupportedBody("robot body expected".into())),
        },
        (s, t) => Err(infeasible(s, t)),
    }
}

// --- protocol converter -----------------------------------------------------

pub const H_COAP_CONTENT_FORMAT: &str = "coap_content_format";
pub const H_HTTP_CONTENT_TYPE: &str = "http_content_type";
pub const H_LCP_PAYLOAD_KIND: &str = "lcp_payload_kind";

/// Published header re-keying table: CoAP content-format codes against HTTP
/// content-type strings, and HTTP content-types against LCP payload kinds.
pub const CONTENT_FORMAT_MAP: &[(&str, &str)] = &[
    ("0", "text/plain"),
    ("110", "application/senml+json"),
    ("310", "application/sensorml+text"),
];

pub const LCP_PAYLOAD_MAP: &[(&str, &str)] = &[
    ("text/plain", "text"),
    ("application/senml+json", "senml"),
];

fn map_value(map: &[(&str, &str)], v: &str, forward: bool) -> String {
    for (a, b) in map {
        if forward && *a == v {
            return b.to_string();
        }
        if !forward && *b == v {
            return a.to_string();
        }
    }
    v.to_string()
}

fn rekey(
    env: &mut Envelope,
    from_key: &str,
    to_key: &str,
    map: &[(&str, &str)],
    forward: bool,
) {
    if let Some(v) = env.header(from_key).map(|s| s.to_string()) {
        env.rekey_header(from_key, to_key, map_value(map, &v, forward));
    }
}

/// Rewrites the envelope between protocol families: tag replaced, headers
/// re-keyed per the published mapping, body untouched, chain id and
/// addresses preserved.
pub fn pc_convert(
    env: &Envelope,
    source: ProtocolKind,
    target: ProtocolKind,
) -> Result<Envelope, VnfError> {
    if env.protocol != source {
        return Err(VnfError::ProtocolMismatch { expected: source, found: env.protocol });
    }
    if source == target {
        return Ok(env.clone());
    }
    let mut out = env.clone();
    out.protocol = target;
    match (source, target) {
        (ProtocolKind::CoapLike, ProtocolKind::HttpLike) => {
            rekey(&mut out, H_COAP_CONTENT_FORMAT, H_HTTP_CONTENT_TYPE, CONTENT_FORMAT_MAP, true);
        }
        (ProtocolKind::HttpLike, ProtocolKind::CoapLike) => {
            rekey(&mut out, H_HTTP_CONTENT_TYPE, H_COAP_CONTENT_FORMAT, CONTENT_FORMAT_MAP, false);
        }
        (ProtocolKind::HttpLike, ProtocolKind::LcpLike) => {
            if !matches!(out.body, Body::RobotCommand { .. }) {
                return Err(VnfError::UnsupportedBody(
                    "robot protocol carries only robot commands".into(),
                ));
            }
            rekey(&mut out, H_HTTP_CONTENT_TYPE, H_LCP_PAYLOAD_KIND, LCP_PAYLOAD_MAP, true);
        }
        (ProtocolKind::LcpLike, ProtocolKind::HttpLike) => {
            rekey(&mut out, H_LCP_PAYLOAD_KIND, H_HTTP_CONTENT_TYPE, LCP_PAYLOAD_MAP, false);
        }
        (s, t) => {
            return Err(VnfError::InfeasibleConversion {
                from: s.to_string(),
                to: t.to_string(),
            })
        }
    }
    Ok(out)
}

// --- load balancer -----------------------------------------------------------

/// Round-robin selection: `group[seq mod len]`. All members must be the same
/// kind.
pub fn lb_select(group: &[VnfInstance], seq: u64) -> Result<&VnfInstance, VnfError> {
    if group.is_empty() {
        return Err(VnfError::EmptyGroup);
    }
    let kind = group[0].kind;
    if group.iter().any(|i| i.kind != kind) {
        return Err(VnfError::MixedGroup);
    }
    Ok(&group[(seq % group.len() as u64) as usize])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Aggregation, ChainId};
    use proptest::prelude::*;

    fn record(value: f64, ts: Tick) -> CanonicalRecord {
        CanonicalRecord {
            device_id: "sensor-x".into(),
            quantity: "sound".into(),
            unit: "dB".into(),
            value,
            timestamp: ts,
        }
    }

    fn records(values: &[f64]) -> Vec<CanonicalRecord> {
        values
            .iter()
            .enumerate()
            .map(|(i, v)| record(*v, i as Tick + 1))
            .collect()
    }

    fn default_store() -> GatewayFunctionStore {
        let mut store = GatewayFunctionStore::new(ConversionTable::default());
        for kind in [
            VnfKind::da(1),
            VnfKind::imc(1),
            VnfKind::imc(2),
            VnfKind::imc(3),
            VnfKind::pc(1),
            VnfKind::pc(2),
            VnfKind::lb(1),
        ] {
            store.add_package(VnfPackage::new(kind, "1.0"));
        }
        store
    }

    #[test]
    fn kind_display_and_parse() {
        assert_eq!(VnfKind::da(1).to_string(), "DA1");
        assert_eq!(VnfKind::parse("IMC2"), Some(VnfKind::imc(2)));
        assert_eq!(VnfKind::parse("XYZ1"), None);
    }

    #[test]
    fn store_lookup_finds_da1() {
        let store = default_store();
        assert_eq!(store.lookup(VnfKind::da(1)).unwrap().kind, VnfKind::da(1));
    }

    #[test]
    fn empty_store_lookup_unavailable() {
        let store = GatewayFunctionStore::new(ConversionTable::default());
        assert_eq!(
            store.lookup(VnfKind::da(1)),
            Err(VnfError::FunctionUnavailable(VnfKind::da(1).into()))
        );
    }

    #[test]
    fn undeclared_pc_pair_is_unavailable() {
        // A package exists for PC9 but no feasibility declaration does.
        let mut store = default_store();
        store.add_package(VnfPackage::new(VnfKind::pc(9), "1.0"));
        assert_eq!(
            store.lookup(VnfKind::pc(9)),
            Err(VnfError::FunctionUnavailable(VnfKind::pc(9).into()))
        );
    }

    #[test]
    fn feasible_pc_pairs_match_hand_enumeration() {
        // Every protocol pair, enumerated by hand against the default table:
        // only CoAP->HTTP and HTTP->LCP are provisionable.
        let table = ConversionTable::default();
        let protos =
            [ProtocolKind::HttpLike, ProtocolKind::CoapLike, ProtocolKind::LcpLike];
        for s in protos {
            for t in protos {
                let expect = (s == ProtocolKind::CoapLike && t == ProtocolKind::HttpLike)
                    || (s == ProtocolKind::HttpLike && t == ProtocolKind::LcpLike);
                assert_eq!(table.find_pc(s, t).is_some(), expect, "{s}->{t}");
            }
        }
        assert!(table.find_pc(ProtocolKind::LcpLike, ProtocolKind::CoapLike).is_none());
    }

    #[test]
    fn catalogue_check_after_deploy_and_terminate() {
        let mut hosts = HostRegistry::default();
        hosts.add_host("rpi-1", DeviceClass::B, 2);
        let mut cat = Catalogue::default();
        assert!(cat.check(VnfKind::da(1)).is_none());

        // The aggregator-plus-model-converter chain: DA1 then IMC2.
        cat.instantiate(&mut hosts, VnfKind::da(1), "rpi-1", VnfConfig::Da(DaConfig::average(3)))
            .unwrap();
        let imc = cat
            .instantiate(&mut hosts, VnfKind::imc(2), "rpi-1", VnfConfig::Conversion)
            .unwrap();
        assert_eq!(cat.check(VnfKind::imc(2)).unwrap().id, imc);

        cat.terminate(&mut hosts, &imc).unwrap();
        assert!(cat.check(VnfKind::imc(2)).is_none());
        assert_eq!(cat.terminate(&mut hosts, &imc), Err(VnfError::UnknownInstance(imc)));
    }

    #[test]
    fn instantiate_respects_class_and_capacity() {
        let mut hosts = HostRegistry::default();
        hosts.add_host("rpi-1", DeviceClass::B, 1);
        hosts.add_host("sensor-a", DeviceClass::A, 0);
        let mut cat = Catalogue::default();

        assert_eq!(
            cat.instantiate(&mut hosts, VnfKind::da(1), "sensor-a", VnfConfig::Lb),
            Err(VnfError::HostNotCapable("sensor-a".into()))
        );

        cat.instantiate(&mut hosts, VnfKind::da(1), "rpi-1", VnfConfig::Lb).unwrap();
        assert_eq!(hosts.get("rpi-1").unwrap().free, 0);
        assert_eq!(
            cat.instantiate(&mut hosts, VnfKind::da(1), "rpi-1", VnfConfig::Lb),
            Err(VnfError::HostFull("rpi-1".into()))
        );
    }

    #[test]
    fn terminate_restores_capacity() {
        let mut hosts = HostRegistry::default();
        hosts.add_host("rpi-1", DeviceClass::B, 1);
        let mut cat = Catalogue::default();
        let id = cat.instantiate(&mut hosts, VnfKind::da(1), "rpi-1", VnfConfig::Lb).unwrap();
        cat.terminate(&mut hosts, &id).unwrap();
        assert_eq!(hosts.get("rpi-1").unwrap().free, 1);
    }

    #[test]
    fn da_threshold_keeps_only_the_human_sound() {
        // Five consecutive measurements; only the last crosses the threshold.
        let cfg = DaConfig::threshold(50.0);
        let out = da_process(&records(&[10.0, 20.0, 30.0, 40.0, 60.0]), &cfg);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].value, 60.0);
        assert_eq!(out[0].timestamp, 5);
        assert!(da_process(&[], &cfg).is_empty());
    }

    #[test]
    fn da_average_matches_mean_oracle() {
        let cfg = DaConfig::average(3);
        let input = records(&[20.0, 22.0, 24.0]);
        let out = da_process(&input, &cfg);
        let mean = (20.0 + 22.0 + 24.0) / 3.0;
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].value, mean);
        // Identity fields come from the window's last record.
        assert_eq!(out[0].timestamp, 3);
    }

    #[test]
    fn imc_raw_to_senml_and_back() {
        let ctx = RecordContext {
            device_id: "temp-1".into(),
            quantity: "temperature".into(),
            unit: "Cel".into(),
            timestamp: 7,
        };
        let body = Body::RawValues(vec![23.5]);
        let senml =
            imc_convert(&body, InfoModelKind::Raw, InfoModelKind::SenmlLike, &ctx).unwrap();
        match &senml {
            Body::EncodedText { model: InfoModelKind::SenmlLike, text } => {
                assert!(text.contains("bn=temp-1"));
                assert!(text.contains("v=23.5"));
                assert!(text.contains("u=Cel"));
            }
            other => panic!("unexpected body {other:?}"),
        }
        let back = imc_convert(
            &senml,
            InfoModelKind::SenmlLike,
            InfoModelKind::Raw,
            &RecordContext::default(),
        )
        .unwrap();
        assert_eq!(
            back,
            Body::Records(vec![CanonicalRecord {
                device_id: "temp-1".into(),
                quantity: "temperature".into(),
                unit: "Cel".into(),
                value: 23.5,
                timestamp: 7,
            }])
        );
    }

    #[test]
    fn imc_identity_conversion() {
        let body = Body::Records(records(&[1.0]));
        let out = imc_convert(
            &body,
            InfoModelKind::Raw,
            InfoModelKind::Raw,
            &RecordContext::default(),
        )
        .unwrap();
        assert_eq!(out, body);
    }

    #[test]
    fn imc_raw_to_robot_is_infeasible() {
        let body = Body::RawValues(vec![1.0]);
        let err = imc_convert(
            &body,
            InfoModelKind::Raw,
            InfoModelKind::RobotCmd,
            &RecordContext::default(),
        )
        .unwrap_err();
        assert_eq!(
            err,
            VnfError::InfeasibleConversion { from: "Raw".into(), to: "RobotCmd".into() }
        );
    }

    #[test]
    fn imc_senml_to_robot_command() {
        let body = Body::EncodedText {
            model: InfoModelKind::SenmlLike,
            text: "bn=fire-app n=task u=cmd vs=/robot/grab?item=extinguisher&force=3\n".into(),
        };
        let out = imc_convert(
            &body,
            InfoModelKind::SenmlLike,
            InfoModelKind::RobotCmd,
            &RecordContext::default(),
        )
        .unwrap();
        assert_eq!(
            out,
            Body::RobotCommand {
                verb: "grab".into(),
                args: vec!["item=extinguisher".into(), "force=3".into()],
            }
        );
        // Inverse restores the resource path.
        let ctx = RecordContext { device_id: "fire-app".into(), ..Default::default() };
        let back =
            imc_convert(&out, InfoModelKind::RobotCmd, InfoModelKind::SenmlLike, &ctx).unwrap();
        let again = imc_convert(
            &back,
            InfoModelKind::SenmlLike,
            InfoModelKind::RobotCmd,
            &RecordContext::default(),
        )
        .unwrap();
        assert_eq!(again, out);
    }

    #[test]
    fn unknown_robot_verb_is_rejected() {
        let body = Body::EncodedText {
            model: InfoModelKind::SenmlLike,
            text: "bn=x n=task u=cmd vs=/robot/dance\n".into(),
        };
        assert!(matches!(
            imc_convert(
                &body,
                InfoModelKind::SenmlLike,
                InfoModelKind::RobotCmd,
                &RecordContext::default()
            ),
            Err(VnfError::UnsupportedBody(_))
        ));
    }

    fn coap_env() -> Envelope {
        let mut env = Envelope::new(
            ProtocolKind::CoapLike,
            "sensor-a",
            "app-1",
            Body::Records(records(&[60.0])),
        );
        env.set_header(H_COAP_CONTENT_FORMAT, "110").unwrap();
        env.stamp_chain_id(&ChainId::new("A")).unwrap();
        env
    }

    #[test]
    fn pc_coap_to_http_preserves_body_and_chain() {
        let env = coap_env();
        let out = pc_convert(&env, ProtocolKind::CoapLike, ProtocolKind::HttpLike).unwrap();
        assert_eq!(out.protocol, ProtocolKind::HttpLike);
        assert_eq!(out.body, env.body);
        assert_eq!(out.chain_id(), env.chain_id());
        assert_eq!(out.src(), env.src());
        assert_eq!(out.header(H_HTTP_CONTENT_TYPE), Some("application/senml+json"));
        assert_eq!(out.header(H_COAP_CONTENT_FORMAT), None);

        let back = pc_convert(&out, ProtocolKind::HttpLike, ProtocolKind::CoapLike).unwrap();
        assert_eq!(back, env);
    }

    #[test]
    fn pc_identity_and_mismatch() {
        let env = coap_env();
        assert_eq!(
            pc_convert(&env, ProtocolKind::CoapLike, ProtocolKind::CoapLike).unwrap(),
            env
        );
        assert_eq!(
            pc_convert(&env, ProtocolKind::HttpLike, ProtocolKind::CoapLike),
            Err(VnfError::ProtocolMismatch {
                expected: ProtocolKind::HttpLike,
                found: ProtocolKind::CoapLike
            })
        );
    }

    #[test]
    fn pc_http_robot_command_to_lcp() {
        let mut env = Envelope::new(
            ProtocolKind::HttpLike,
            "app-1",
            "robot-1",
            Body::RobotCommand { verb: "move".into(), args: vec!["dir=north".into()] },
        );
        env.set_header(H_HTTP_CONTENT_TYPE, "text/plain").unwrap();
        let out = pc_convert(&env, ProtocolKind::HttpLike, ProtocolKind::LcpLike).unwrap();
        assert_eq!(out.protocol, ProtocolKind::LcpLike);
        assert_eq!(out.header(H_LCP_PAYLOAD_KIND), Some("text"));
        let back = pc_convert(&out, ProtocolKind::LcpLike, ProtocolKind::HttpLike).unwrap();
        assert_eq!(back, env);
    }

    #[test]
    fn pc_lcp_needs_robot_body() {
        let env = Envelope::new(
            ProtocolKind::HttpLike,
            "a",
            "b",
            Body::RawValues(vec![1.0]),
        );
        assert!(matches!(
            pc_convert(&env, ProtocolKind::HttpLike, ProtocolKind::LcpLike),
            Err(VnfError::UnsupportedBody(_))
        ));
    }

    fn lb_group(n: usize) -> Vec<VnfInstance> {
        (0..n)
            .map(|i| VnfInstance {
                id: format!("DA1-{}", i + 1),
                kind: VnfKind::da(1),
                host: format!("h{}", i + 1),
                state: InstanceState::Active,
                config: VnfConfig::Da(DaConfig::threshold(0.0)),
            })
            .collect()
    }

    #[test]
    fn lb_round_robin_counts() {
        let group = lb_group(3);
        let mut counts = BTreeMap::new();
        for seq in 0..6u64 {
            let picked = lb_select(&group, seq).unwrap();
            *counts.entry(picked.id.clone()).or_insert(0u32) += 1;
        }
        assert!(counts.values().all(|c| *c == 2), "{counts:?}");

        let single = lb_group(1);
        for seq in 0..5 {
            assert_eq!(lb_select(&single, seq).unwrap().id, "DA1-1");
        }
        assert_eq!(lb_select(&[], 0).err(), Some(VnfError::EmptyGroup));
    }

    #[test]
    fn da_apply_reencodes_senml() {
        let cfg = DaConfig::threshold(50.0);
        let senml = Body::EncodedText {
            model: InfoModelKind::SenmlLike,
            text: senml_encode(&records(&[10.0, 60.0])),
        };
        let out = da_apply(&senml, &cfg).unwrap();
        match out {
            Body::EncodedText { text, .. } => {
                let recs = senml_decode(&text).unwrap();
                assert_eq!(recs.len(), 1);
                assert_eq!(recs[0].value, 60.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn aggregation_enum_round_trip() {
        for a in [Aggregation::None, Aggregation::AverageData, Aggregation::ThresholdData] {
            assert_eq!(Aggregation::parse(a.as_str()), Some(a));
        }
    }

    // --- properties -------------------------------------------------------

    proptest! {
        #[test]
        fn da_threshold_is_order_preserving_subset(
            values in proptest::collection::vec(-100.0f64..100.0, 0..30),
            threshold in -50.0f64..50.0,
        ) {
            let input = records(&values);
            let out = da_process(&input, &DaConfig::threshold(threshold));
            // Subset, order preserved: out appears in input in order.
            let mut idx = 0;
            for r in &out {
                let pos = input[idx..].iter().position(|x| x == r);
                prop_assert!(pos.is_some());
                idx += pos.unwrap() + 1;
                prop_assert!(r.value > threshold);
            }
        }

        #[test]
        fn da_average_length_is_ceil(
            values in proptest::collection::vec(-100.0f64..100.0, 1..30),
            window in 1usize..6,
        ) {
            let input = records(&values);
            let out = da_process(&input, &DaConfig::average(window));
            prop_assert_eq!(out.len(), values.len().div_ceil(window));
            // Independent mean oracle per window.
            for (i, chunk) in values.chunks(window).enumerate() {
                let mean = chunk.iter().sum::<f64>() / chunk.len() as f64;
                prop_assert!((out[i].value - mean).abs() < 1e-12);
            }
        }

        #[test]
        fn senml_round_trips(values in proptest::collection::vec(-1e5f64..1e5, 0..8)) {
            let input = records(&values);
            prop_assert_eq!(senml_decode(&senml_encode(&input)).unwrap(), input.clone());
            prop_assert_eq!(sensorml_decode(&sensorml_encode(&input)).unwrap(), input);
        }

        #[test]
        fn lb_spread_at_most_one(len in 1usize..8, total in 1u64..200) {
            let group = lb_group(len);
            let mut counts = vec![0u64; len];
            for seq in 0..total {
                let picked = lb_select(&group, seq).unwrap();
                let idx = group.iter().position(|i| i.id == picked.id).unwrap();
                counts[idx] += 1;
            }
            let max = counts.iter().max().unwrap();
            let min = counts.iter().min().unwrap();
            prop_assert!(max - min <= 1);
        }

        #[test]
        fn catalogue_matches_replay(ops in proptest::collection::vec(0u8..4, 1..40)) {
            let mut hosts = HostRegistry::default();
            hosts.add_host("h1", DeviceClass::B, 100);
            hosts.add_host("h2", DeviceClass::B, 100);
            let mut cat = Catalogue::default();
            let mut live: Vec<String> = Vec::new();
            for (i, op) in ops.iter().enumerate() {
                if *op == 0 || live.is_empty() {
                    let host = if i % 2 == 0 { "h1" } else { "h2" };
                    let kind = if i % 3 == 0 { VnfKind::da(1) } else { VnfKind::imc(1) };
                    let id = cat.instantiate(&mut hosts, kind, host, VnfConfig::Lb).unwrap();
                    live.push(id);
                } else {
                    let victim = live.remove((i * 7) % live.len());
                    cat.terminate(&mut hosts, &victim).unwrap();
                }
            }
            prop_assert_eq!(cat.live_ids(), Catalogue::replay_ids(&cat.op_log));
            // Capacity conservation: free + occupied is constant per host.
            for (_, (free, cap)) in hosts.occupancy() {
                let occupied = cap - free;
                prop_assert_eq!(free + occupied, cap);
            }
            let occupied_total: usize = cat.live_ids().len();
            let free_total: u32 = hosts.occupancy().values().map(|(f, _)| f).sum();
            prop_assert_eq!(free_total as usize + occupied_total, 200);
        }
    }
}
