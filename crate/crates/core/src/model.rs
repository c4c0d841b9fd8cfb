//! Shared domain vocabulary: protocols, info models, devices, chains, and the
//! envelope that every switch, VNF, and overlay passes around.
//!
//! The envelope wire form is a line-oriented self-delimiting text block:
//! one `key=value` pair per line, header lines prefixed `h:`, the body on a
//! `body=` line, and a blank line terminating the block. Keys are ASCII;
//! values percent-escape `=`, newline, and `%`.

use std::fmt;

use thiserror::Error;

use crate::vnf::VnfKind;

/// Simulated time, in ticks.
pub type Tick = u64;

pub const H_APP_SRC: &str = "app_level_src";
pub const H_APP_DST: &str = "app_level_dst";
pub const H_CHAIN_ID: &str = "chain_id";
pub const H_APP_PROTOCOL: &str = "app_protocol";
pub const H_APP_INFO_MODEL: &str = "app_info_model";
pub const H_APP_AGGREGATION: &str = "app_aggregation";
pub const H_DEV_PROTOCOL: &str = "dev_protocol";
pub const H_DEV_INFO_MODEL: &str = "dev_info_model";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ProtocolKind {
    HttpLike,
    CoapLike,
    /// Robot command protocol; only valid for robot-command bodies.
    LcpLike,
}

impl ProtocolKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProtocolKind::HttpLike => "HttpLike",
            ProtocolKind::CoapLike => "CoapLike",
            ProtocolKind::LcpLike => "LcpLike",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "HttpLike" => Some(ProtocolKind::HttpLike),
            "CoapLike" => Some(ProtocolKind::CoapLike),
            "LcpLike" => Some(ProtocolKind::LcpLike),
            _ => None,
        }
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum InfoModelKind {
    Raw,
    SenmlLike,
    SensormlLike,
    RobotCmd,
}

impl InfoModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            InfoModelKind::Raw => "Raw",
            InfoModelKind::SenmlLike => "SenmlLike",
            InfoModelKind::SensormlLike => "SensormlLike",
            InfoModelKind::RobotCmd => "RobotCmd",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "Raw" => Some(InfoModelKind::Raw),
            "SenmlLike" => Some(InfoModelKind::SenmlLike),
            "SensormlLike" => Some(InfoModelKind::SensormlLike),
            "RobotCmd" => Some(InfoModelKind::RobotCmd),
            _ => None,
        }
    }
}

impl fmt::Display for InfoModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Aggregation {
    None,
    AverageData,
    ThresholdData,
}

impl Aggregation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Aggregation::None => "None",
            Aggregation::AverageData => "AverageData",
            Aggregation::ThresholdData => "ThresholdData",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "None" => Some(Aggregation::None),
            "AverageData" => Some(Aggregation::AverageData),
            "ThresholdData" => Some(Aggregation::ThresholdData),
            _ => None,
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The internal normal form every measurement passes through between
/// encodings: one observation from one device.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalRecord {
    pub device_id: String,
    pub quantity: String,
    pub unit: String,
    pub value: f64,
    pub timestamp: Tick,
}

/// What the consuming side of a flow requires of the data it receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AppRequirements {
    pub protocol: ProtocolKind,
    pub info_model: InfoModelKind,
    pub aggregation: Aggregation,
}

impl AppRequirements {
    /// Applications consume structured models, never raw data.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.info_model == InfoModelKind::Raw {
            return Err(ModelError::RawAppModel);
        }
        Ok(())
    }
}

/// What the producing side of a flow emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DeviceProps {
    pub protocol: ProtocolKind,
    pub info_model: InfoModelKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeviceClass {
    A,
    B,
}

impl DeviceClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            DeviceClass::A => "A",
            DeviceClass::B => "B",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "A" => Some(DeviceClass::A),
            "B" => Some(DeviceClass::B),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Capabilities {
    pub energy_pct: u8,
    pub location: (f64, f64),
    pub response_time: Tick,
    /// Free VNF slots the device offers when acting as a host.
    pub host_capacity: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceDescriptor {
    pub id: String,
    pub class: DeviceClass,
    pub props: DeviceProps,
    pub capabilities: Capabilities,
    /// Type-B device that acts on this device's behalf; required iff class A.
    pub proxy: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DescriptorViolation(pub String);

impl fmt::Display for DescriptorViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Checks every descriptor invariant and returns all violations, not just
/// the first.
pub fn validate_descriptor(d: &DeviceDescriptor) -> Vec<DescriptorViolation> {
    let mut out = Vec::new();
    if d.id.is_empty() {
        out.push(DescriptorViolation("device id must be non-empty".into()));
    }
    if d.capabilities.energy_pct > 100 {
        out.push(DescriptorViolation(format!(
            "energy_pct {} exceeds 100",
            d.capabilities.energy_pct
        )));
    }
    match d.class {
        DeviceClass::A => {
            if d.capabilities.host_capacity != 0 {
                out.push(DescriptorViolation("A must have capacity 0".into()));
            }
            if d.proxy.is_none() {
                out.push(DescriptorViolation("A must have a proxy".into()));
            }
        }
        DeviceClass::B => {
            if d.proxy.is_some() {
                out.push(DescriptorViolation("B must not have proxy".into()));
            }
        }
    }
    out
}

/// Chain label assigned by the VNF agent's registry (A, B, C, ...).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ChainId(pub String);

impl ChainId {
    pub fn new(label: impl Into<String>) -> Self {
        ChainId(label.into())
    }
}

impl fmt::Display for ChainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// An ordered list of gateway functions plus its label.
///
/// An empty function list is representable (the degenerate chain compiles to
/// a classify-and-forward entry) but is rejected at plan creation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainSpec {
    pub chain_id: ChainId,
    pub functions: Vec<VnfKind>,
}

impl ChainSpec {
    pub fn new(chain_id: ChainId, functions: Vec<VnfKind>) -> Self {
        ChainSpec { chain_id, functions }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.functions.is_empty() {
            return Err(ModelError::EmptyChain);
        }
        for (i, f) in self.functions.iter().enumerate() {
            if self.functions[..i].contains(f) {
                return Err(ModelError::DuplicateFunction(f.to_string()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Body {
    RawValues(Vec<f64>),
    Records(Vec<CanonicalRecord>),
    EncodedText { model: InfoModelKind, text: String },
    RobotCommand { verb: String, args: Vec<String> },
}

impl Body {
    /// The information model this body is an instance of.
    pub fn info_model(&self) -> InfoModelKind {
        match self {
            Body::RawValues(_) | Body::Records(_) => InfoModelKind::Raw,
            Body::EncodedText { model, .. } => *model,
            Body::RobotCommand { .. } => InfoModelKind::RobotCmd,
        }
    }

    /// Number of data units carried; drives per-record processing cost.
    pub fn record_count(&self) -> usize {
        match self {
            Body::RawValues(v) => v.len(),
            Body::Records(r) => r.len(),
            Body::EncodedText { text, .. } => {
                text.lines().filter(|l| !l.trim().is_empty()).count()
            }
            Body::RobotCommand { .. } => 1,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("application info model must not be Raw")]
    RawAppModel,
    #[error("chain has no functions")]
    EmptyChain,
    #[error("duplicate function {0} in chain")]
    DuplicateFunction(String),
    #[error("chain_id already set to {existing}, refusing {attempted}")]
    ChainIdOverwrite { existing: String, attempted: String },
    #[error("header key {0} must be set through its dedicated accessor")]
    ReservedHeader(String),
    #[error("header key {0:?} must be non-empty ascii")]
    BadHeaderKey(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed envelope at line {line}: {reason}")]
pub struct MalformedEnvelope {
    pub line: usize,
    pub reason: String,
}

fn malformed(line: usize, reason: impl Into<String>) -> MalformedEnvelope {
    MalformedEnvelope { line, reason: reason.into() }
}

/// A protocol-tagged, header-bearing message unit.
///
/// `app_level_src` and `app_level_dst` are always present; the `chain_id`
/// header is write-once for the envelope's lifetime.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub protocol: ProtocolKind,
    headers: Vec<(String, String)>,
    pub body: Body,
}

impl Envelope {
    pub fn new(
        protocol: ProtocolKind,
        src: impl Into<String>,
        dst: impl Into<String>,
        body: Body,
    ) -> Self {
        Envelope {
            protocol,
            headers: vec![
                (H_APP_SRC.to_string(), src.into()),
                (H_APP_DST.to_string(), dst.into()),
            ],
            body,
        }
    }

    pub fn header(&self, key: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn headers(&self) -> impl Iterator<Item = (&str, &str)> {
        self.headers.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Sets or replaces a header. The chain-id header is refused here; it is
    /// write-once and goes through [`Envelope::stamp_chain_id`].
    pub fn set_header(
        &mut self,
        key: impl Into<String>,
        value: impl Into<String>,
    ) -> Result<(), ModelError> {
        let key = key.into();
        if key == H_CHAIN_ID {
            return Err(ModelError::ReservedHeader(key));
        }
        if key.is_empty() || !key.is_ascii() {
            return Err(ModelError::BadHeaderKey(key));
        }
        self.set_header_unchecked(key, value.into());
        Ok(())
    }

    fn set_header_unchecked(&mut self, key: String, value: String) {
        if let Some(slot) = self.headers.iter_mut().find(|(k, _)| *k == key) {
            slot.1 = value;
        } else {
            self.headers.push((key, value));
        }
    }

    /// Removes a header. The two address headers are load-bearing and stay.
    pub fn remove_header(&mut self, key: &str) {
        if key == H_APP_SRC || key == H_APP_DST {
            return;
        }
        self.headers.retain(|(k, _)| k != key);
    }

    /// Replaces a header's key and value in place, keeping its position so
    /// inverse rewrites restore the envelope exactly. Returns false when the
    /// key is absent.
    pub fn rekey_header(
        &mut self,
        from_key: &str,
        to_key: impl Into<String>,
        value: impl Into<String>,
    ) -> bool {
        match self.headers.iter_mut().find(|(k, _)| k == from_key) {
            Some(slot) => {
                *slot = (to_key.into(), value.into());
                true
            }
            None => false,
        }
    }

    pub fn chain_id(&self) -> Option<ChainId> {
        self.header(H_CHAIN_ID).map(ChainId::new)
    }

    /// Write-once chain-id insertion. Stamping the same value again is a
    /// no-op; a different value is an error.
    pub fn stamp_chain_id(&mut self, id: &ChainId) -> Result<(), ModelError> {
        match self.header(H_CHAIN_ID) {
            Some(existing) if existing == id.0 => Ok(()),
            Some(existing) => Err(ModelError::ChainIdOverwrite {
                existing: existing.to_string(),
                attempted: id.0.clone(),
            }),
            None => {
                self.headers.push((H_CHAIN_ID.to_string(), id.0.clone()));
                Ok(())
            }
        }
    }

    pub fn src(&self) -> &str {
        self.header(H_APP_SRC).expect("src always present")
    }

    pub fn dst(&self) -> &str {
        self.header(H_APP_DST).expect("dst always present")
    }

    pub fn set_app_requirements(&mut self, req: &AppRequirements) {
        self.set_header_unchecked(H_APP_PROTOCOL.into(), req.protocol.to_string());
        self.set_header_unchecked(H_APP_INFO_MODEL.into(), req.info_model.to_string());
        self.set_header_unchecked(H_APP_AGGREGATION.into(), req.aggregation.to_string());
    }

    pub fn app_requirements(&self) -> Option<AppRequirements> {
        Some(AppRequirements {
            protocol: ProtocolKind::parse(self.header(H_APP_PROTOCOL)?)?,
            info_model: InfoModelKind::parse(self.header(H_APP_INFO_MODEL)?)?,
            aggregation: Aggregation::parse(self.header(H_APP_AGGREGATION)?)?,
        })
    }

    pub fn set_device_props(&mut self, props: &DeviceProps) {
        self.set_header_unchecked(H_DEV_PROTOCOL.into(), props.protocol.to_string());
        self.set_header_unchecked(H_DEV_INFO_MODEL.into(), props.info_model.to_string());
    }

    pub fn device_props(&self) -> Option<DeviceProps> {
        Some(DeviceProps {
            protocol: ProtocolKind::parse(self.header(H_DEV_PROTOCOL)?)?,
            info_model: InfoModelKind::parse(self.header(H_DEV_INFO_MODEL)?)?,
        })
    }

    /// Trusted constructor used by the decoder; bypasses the chain-id guard.
    fn from_parts(
        protocol: ProtocolKind,
        headers: Vec<(String, String)>,
        body: Body,
    ) -> Self {
        Envelope { protocol, headers, body }
    }
}

// --- wire form ---------------------------------------------------------

/// Characters escaped in every value position.
const VALUE_ESCAPES: &[char] = &['%', '=', '\n'];
/// Additional separators escaped inside body sub-fields.
const FIELD_ESCAPES: &[char] = &['%', '=', '\n', '|', ';', ',', ':'];

fn escape(s: &str, set: &[char]) -> String {
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

fn unescape(s: &str) -> Result<String, String> {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            if i + 3 > bytes.len() {
                return Err("truncated escape".into());
            }
            let hex = std::str::from_utf8(&bytes[i + 1..i + 3])
                .map_err(|_| "bad escape".to_string())?;
            let v = u8::from_str_radix(hex, 16).map_err(|_| "bad escape".to_string())?;
            out.push(v);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).map_err(|_| "escape decodes to invalid utf-8".into())
}

fn format_f64(v: f64) -> String {
    // Display gives the shortest representation that parses back exactly.
    format!("{}", v)
}

fn encode_record(r: &CanonicalRecord) -> String {
    format!(
        "{}|{}|{}|{}|{}",
        escape(&r.device_id, FIELD_ESCAPES),
        escape(&r.quantity, FIELD_ESCAPES),
        escape(&r.unit, FIELD_ESCAPES),
        format_f64(r.value),
        r.timestamp
    )
}

fn decode_record(s: &str, line: usize) -> Result<CanonicalRecord, MalformedEnvelope> {
    let parts: Vec<&str> = s.split('|').collect();
    if parts.len() != 5 {
        return Err(malformed(line, format!("record needs 5 fields, got {}", parts.len())));
    }
    let err = |m: String| malformed(line, m);
    Ok(CanonicalRecord {
        device_id: unescape(parts[0]).map_err(err)?,
        quantity: unescape(parts[1]).map_err(err)?,
        unit: unescape(parts[2]).map_err(err)?,
        value: parts[3]
            .parse::<f64>()
            .map_err(|_| malformed(line, format!("bad record value {:?}", parts[3])))?,
        timestamp: parts[4]
            .parse::<Tick>()
            .map_err(|_| malformed(line, format!("bad record timestamp {:?}", parts[4])))?,
    })
}

fn encode_body(body: &Body) -> String {
    match body {
        Body::RawValues(vals) => {
            let joined: Vec<String> = vals.iter().map(|v| format_f64(*v)).collect();
            format!("raw:{}", joined.join(","))
        }
        Body::Records(records) => {
            let joined: Vec<String> = records.iter().map(encode_record).collect();
            format!("records:{}", joined.join(";"))
        }
        Body::EncodedText { model, text } => {
            format!("text:{}:{}", model, escape(text, FIELD_ESCAPES))
        }
        Body::RobotCommand { verb, args } => {
            // No args means no second colon, so empty-string args stay
            // distinguishable from an empty list.
            if args.is_empty() {
                format!("robot:{}", escape(verb, FIELD_ESCAPES))
            } else {
                let joined: Vec<String> =
                    args.iter().map(|a| escape(a, FIELD_ESCAPES)).collect();
                format!("robot:{}:{}", escape(verb, FIELD_ESCAPES), joined.join(","))
            }
        }
    }
}

fn decode_body(s: &str, line: usize) -> Result<Body, MalformedEnvelope> {
    if let Some(rest) = s.strip_prefix("raw:") {
        if rest.is_empty() {
            return Ok(Body::RawValues(Vec::new()));
        }
        let mut vals = Vec::new();
        for piece in rest.split(',') {
            vals.push(
                piece
                    .parse::<f64>()
                    .map_err(|_| malformed(line, format!("bad raw value {:?}", piece)))?,
            );
        }
        Ok(Body::RawValues(vals))
    } else if let Some(rest) = s.strip_prefix("records:") {
        if rest.is_empty() {
            return Ok(Body::Records(Vec::new()));
        }
        let mut records = Vec::new();
        for piece in rest.split(';') {
            records.push(decode_record(piece, line)?);
        }
        Ok(Body::Records(records))
    } else if let Some(rest) = s.strip_prefix("text:") {
        let (model_str, payload) = rest
            .split_once(':')
            .ok_or_else(|| malformed(line, "text body needs model tag"))?;
        let model = InfoModelKind::parse(model_str)
            .ok_or_else(|| malformed(line, format!("unknown info model {:?}", model_str)))?;
        let text = unescape(payload).map_err(|m| malformed(line, m))?;
        Ok(Body::EncodedText { model, text })
    } else if let Some(rest) = s.strip_prefix("robot:") {
        let (verb_str, args) = match rest.split_once(':') {
            None => (rest, Vec::new()),
            Some((v, args_str)) => (
                v,
                args_str
                    .split(',')
                    .map(|a| unescape(a).map_err(|m| malformed(line, m)))
                    .collect::<Result<Vec<_>, _>>()?,
            ),
        };
        let verb = unescape(verb_str).map_err(|m| malformed(line, m))?;
        Ok(Body::RobotCommand { verb, args })
    } else {
        Err(malformed(line, format!("unknown body form {:?}", s)))
    }
}

/// Renders an envelope as its self-delimiting text block.
pub fn encode_envelope(env: &Envelope) -> String {
    let mut out = String::new();
    out.push_str(&format!("protocol={}\n", env.protocol));
    for (k, v) in &env.headers {
        out.push_str(&format!("h:{}={}\n", k, escape(v, VALUE_ESCAPES)));
    }
    out.push_str(&format!("body={}\n", encode_body(&env.body)));
    out.push('\n');
    out
}

/// Exact structural inverse of [`encode_envelope`].
pub fn decode_envelope(text: &str) -> Result<Envelope, MalformedEnvelope> {
    let mut protocol = None;
    let mut headers: Vec<(String, String)> = Vec::new();
    let mut body = None;
    let mut terminated = false;

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if terminated {
            return Err(malformed(line_no, "content after terminating blank line"));
        }
        if raw_line.is_empty() {
            terminated = true;
            continue;
        }
        if let Some(rest) = raw_line.strip_prefix("h:") {
            let (k, v) = rest
                .split_once('=')
                .ok_or_else(|| malformed(line_no, "header line missing '='"))?;
            if k.is_empty() || !k.is_ascii() {
                return Err(malformed(line_no, "header key must be non-empty ascii"));
            }
            if body.is_some() {
                return Err(malformed(line_no, "header after body"));
            }
            let value = unescape(v).map_err(|m| malformed(line_no, m))?;
            headers.push((k.to_string(), value));
        } else if let Some(v) = raw_line.strip_prefix("protocol=") {
            if protocol.is_some() {
                return Err(malformed(line_no, "duplicate protocol line"));
            }
            protocol = Some(
                ProtocolKind::parse(v)
                    .ok_or_else(|| malformed(line_no, format!("unknown protocol tag {:?}", v)))?,
            );
        } else if let Some(v) = raw_line.strip_prefix("body=") {
            if body.is_some() {
                return Err(malformed(line_no, "duplicate body line"));
            }
            body = Some(decode_body(v, line_no)?);
        } else {
            return Err(malformed(line_no, format!("unrecognized line {:?}", raw_line)));
        }
    }

    let last = text.lines().count();
    if !terminated {
        return Err(malformed(last + 1, "missing terminating blank line"));
    }
    let protocol = protocol.ok_or_else(|| malformed(last, "missing protocol line"))?;
    let body = body.ok_or_else(|| malformed(last, "missing body line"))?;
    if !headers.iter().any(|(k, _)| k == H_APP_SRC) {
        return Err(malformed(last, "missing app_level_src header"));
    }
    if !headers.iter().any(|(k, _)| k == H_APP_DST) {
        return Err(malformed(last, "missing app_level_dst header"));
    }
    Ok(Envelope::from_parts(protocol, headers, body))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vnf::VnfKind;
    use proptest::prelude::*;

    fn sample_record() -> CanonicalRecord {
        CanonicalRecord {
            device_id: "temp-1".into(),
            quantity: "temperature".into(),
            unit: "Cel".into(),
            value: 23.5,
            timestamp: 7,
        }
    }

    #[test]
    fn encode_contains_protocol_and_raw_body() {
        let env = Envelope::new(
            ProtocolKind::CoapLike,
            "app-1",
            "SW1",
            Body::RawValues(vec![23.5]),
        );
        let text = encode_envelope(&env);
        assert!(text.contains("protocol=CoapLike"));
        assert!(text.contains("body=raw:23.5"));
    }

    #[test]
    fn minimal_envelope_is_four_lines_plus_terminator() {
        let env = Envelope::new(
            ProtocolKind::HttpLike,
            "a",
            "b",
            Body::RawValues(vec![]),
        );
        let text = encode_envelope(&env);
        let lines: Vec<&str> = text.split('\n').collect();
        // protocol, two address headers, body, blank terminator, trailing "".
        assert_eq!(lines.len(), 6);
        assert_eq!(lines[0], "protocol=HttpLike");
        assert_eq!(lines[1], "h:app_level_src=a");
        assert_eq!(lines[2], "h:app_level_dst=b");
        assert_eq!(lines[3], "body=raw:");
        assert_eq!(lines[4], "");
    }

    #[test]
    fn decode_missing_dst_is_malformed() {
        let text = "protocol=HttpLike\nh:app_level_src=a\nbody=raw:1\n\n";
        let err = decode_envelope(text).unwrap_err();
        assert!(err.reason.contains("app_level_dst"));
    }

    #[test]
    fn decode_unknown_protocol_is_malformed() {
        let text = "protocol=XmppLike\nh:app_level_src=a\nh:app_level_dst=b\nbody=raw:1\n\n";
        let err = decode_envelope(text).unwrap_err();
        assert_eq!(err.line, 1);
        assert!(err.reason.contains("XmppLike"));
    }

    #[test]
    fn round_trip_all_body_forms() {
        let mut env = Envelope::new(
            ProtocolKind::HttpLike,
            "app|1",
            "dst=x",
            Body::Records(vec![sample_record()]),
        );
        env.set_header("note", "50% done\nmore").unwrap();
        env.stamp_chain_id(&ChainId::new("A")).unwrap();
        assert_eq!(decode_envelope(&encode_envelope(&env)).unwrap(), env);

        let robot = Envelope::new(
            ProtocolKind::LcpLike,
            "app",
            "robot-1",
            Body::RobotCommand { verb: "grab".into(), args: vec!["item=extinguisher".into()] },
        );
        assert_eq!(decode_envelope(&encode_envelope(&robot)).unwrap(), robot);

        let text = Envelope::new(
            ProtocolKind::HttpLike,
            "a",
            "b",
            Body::EncodedText { model: InfoModelKind::SenmlLike, text: "bn=x v=1\n".into() },
        );
        assert_eq!(decode_envelope(&encode_envelope(&text)).unwrap(), text);
    }

    #[test]
    fn chain_id_is_write_once() {
        let mut env =
            Envelope::new(ProtocolKind::HttpLike, "a", "b", Body::RawValues(vec![]));
        env.stamp_chain_id(&ChainId::new("A")).unwrap();
        // Same value is idempotent.
        env.stamp_chain_id(&ChainId::new("A")).unwrap();
        let err = env.stamp_chain_id(&ChainId::new("B")).unwrap_err();
        assert_eq!(
            err,
            ModelError::ChainIdOverwrite { existing: "A".into(), attempted: "B".into() }
        );
        // Direct header writes to chain_id are refused.
        assert!(env.set_header(H_CHAIN_ID, "C").is_err());
    }

    #[test]
    fn validate_descriptor_reports_all_violations() {
        let ok = DeviceDescriptor {
            id: "sensor-a".into(),
            class: DeviceClass::A,
            props: DeviceProps {
                protocol: ProtocolKind::CoapLike,
                info_model: InfoModelKind::Raw,
            },
            capabilities: Capabilities {
                energy_pct: 80,
                location: (0.0, 0.0),
                response_time: 5,
                host_capacity: 0,
            },
            proxy: Some("rpi-1".into()),
        };
        assert!(validate_descriptor(&ok).is_empty());

        let mut bad_a = ok.clone();
        bad_a.capabilities.host_capacity = 2;
        let v = validate_descriptor(&bad_a);
        assert_eq!(v, vec![DescriptorViolation("A must have capacity 0".into())]);

        let mut bad_b = ok.clone();
        bad_b.class = DeviceClass::B;
        let v = validate_descriptor(&bad_b);
        assert_eq!(v, vec![DescriptorViolation("B must not have proxy".into())]);

        let mut double = ok;
        double.capabilities.host_capacity = 1;
        double.proxy = None;
        assert_eq!(validate_descriptor(&double).len(), 2);
    }

    #[test]
    fn app_requirements_reject_raw() {
        let req = AppRequirements {
            protocol: ProtocolKind::HttpLike,
            info_model: InfoModelKind::Raw,
            aggregation: Aggregation::None,
        };
        assert_eq!(req.validate(), Err(ModelError::RawAppModel));
    }

    #[test]
    fn chain_spec_validation() {
        let ok = ChainSpec::new(
            ChainId::new("A"),
            vec![VnfKind::da(1), VnfKind::imc(1)],
        );
        assert!(ok.validate().is_ok());
        let empty = ChainSpec::new(ChainId::new("A"), vec![]);
        assert_eq!(empty.validate(), Err(ModelError::EmptyChain));
        let dup = ChainSpec::new(ChainId::new("A"), vec![VnfKind::da(1), VnfKind::da(1)]);
        assert!(matches!(dup.validate(), Err(ModelError::DuplicateFunction(_))));
    }

    // --- generators -----------------------------------------------------

    prop_compose! {
        fn arb_string()(s in "[a-zA-Z0-9 =%|;:,._/-]{0,12}") -> String { s }
    }

    prop_compose! {
        fn arb_value()(v in -1e6f64..1e6f64) -> f64 { v }
    }

    fn arb_protocol() -> impl Strategy<Value = ProtocolKind> {
        prop_oneof![
            Just(ProtocolKind::HttpLike),
            Just(ProtocolKind::CoapLike),
            Just(ProtocolKind::LcpLike),
        ]
    }

    fn arb_record() -> impl Strategy<Value = CanonicalRecord> {
        (arb_string(), arb_string(), arb_string(), arb_value(), 0u64..10_000).prop_map(
            |(device_id, quantity, unit, value, timestamp)| CanonicalRecord {
                device_id,
                quantity,
                unit,
                value,
                timestamp,
            },
        )
    }

    fn arb_body() -> impl Strategy<Value = Body> {
        prop_oneof![
            proptest::collection::vec(arb_value(), 0..5).prop_map(Body::RawValues),
            proptest::collection::vec(arb_record(), 0..4).prop_map(Body::Records),
            (
                prop_oneof![
                    Just(InfoModelKind::SenmlLike),
                    Just(InfoModelKind::SensormlLike)
                ],
                arb_string()
            )
                .prop_map(|(model, text)| Body::EncodedText { model, text }),
            (arb_string(), proptest::collection::vec(arb_string(), 0..3))
                .prop_map(|(verb, args)| Body::RobotCommand { verb, args }),
        ]
    }

    pub(crate) fn arb_envelope() -> impl Strategy<Value = Envelope> {
        (
            arb_protocol(),
            arb_string(),
            arb_string(),
            arb_body(),
            proptest::collection::vec(("[a-z_]{1,8}", arb_string()), 0..4),
            proptest::option::of("[A-Z]{1,2}"),
        )
            .prop_map(|(protocol, src, dst, body, extra, chain)| {
                let mut env = Envelope::new(protocol, src, dst, body);
                for (k, v) in extra {
                    if k != H_CHAIN_ID {
                        env.set_header(k, v).unwrap();
                    }
                }
                if let Some(c) = chain {
                    env.stamp_chain_id(&ChainId::new(c)).unwrap();
                }
                env
            })
    }

    proptest! {
        #[test]
        fn envelope_round_trip(env in arb_envelope()) {
            let text = encode_envelope(&env);
            let back = decode_envelope(&text).unwrap();
            prop_assert_eq!(back, env);
        }
    }
}
