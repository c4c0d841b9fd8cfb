//! Application-level SDN switches: flow tables whose match fields are
//! application-layer header values, chain-id insertion, and forwarding to
//! switches, VNF instances, devices, or application addresses.
//!
//! A VNF hop is synchronous within an entry's action list: the switch hands
//! the envelope to the instance, receives the processed envelope, then
//! applies the remaining actions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::model::{
    AppRequirements, ChainId, DeviceProps, Envelope, ModelError, ProtocolKind, Tick,
};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Target {
    Switch(String),
    Vnf(String),
    Device(String),
    App(String),
}

impl Target {
    /// Hop-trace label; switches appear bare, everything else keeps its
    /// namespace prefix.
    pub fn trace_label(&self) -> String {
        match self {
            Target::Switch(id) => id.clone(),
            other => other.to_string(),
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Switch(id) => write!(f, "sw:{}", id),
            Target::Vnf(id) => write!(f, "vnf:{}", id),
            Target::Device(id) => write!(f, "dev:{}", id),
            Target::App(id) => write!(f, "app:{}", id),
        }
    }
}

/// Exact-match constraints over application-level fields; unset fields are
/// wildcards. At least one constraint must be present.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MatchPredicate {
    pub app_level_src: Option<String>,
    pub app_level_dst: Option<String>,
    pub chain_id: Option<ChainId>,
    pub app_requirements: Option<AppRequirements>,
    pub device_props: Option<DeviceProps>,
    pub protocol: Option<ProtocolKind>,
}

impl MatchPredicate {
    pub fn chain(id: &ChainId) -> Self {
        MatchPredicate { chain_id: Some(id.clone()), ..Default::default() }
    }

    pub fn classification(req: AppRequirements, props: DeviceProps) -> Self {
        MatchPredicate {
            app_requirements: Some(req),
            device_props: Some(props),
            ..Default::default()
        }
    }

    pub fn is_unconstrained(&self) -> bool {
        self.app_level_src.is_none()
            && self.app_level_dst.is_none()
            && self.chain_id.is_none()
            && self.app_requirements.is_none()
            && self.device_props.is_none()
            && self.protocol.is_none()
    }

    pub fn matches(&self, env: &Envelope) -> bool {
        if let Some(src) = &self.app_level_src {
            if env.src() != src {
                return false;
            }
        }
        if let Some(dst) = &self.app_level_dst {
            if env.dst() != dst {
                return false;
            }
        }
        if let Some(chain) = &self.chain_id {
            if env.chain_id().as_ref() != Some(chain) {
                return false;
            }
        }
        if let Some(req) = &self.app_requirements {
            if env.app_requirements().as_ref() != Some(req) {
                return false;
            }
        }
        if let Some(props) = &self.device_props {
            if env.device_props().as_ref() != Some(props) {
                return false;
            }
        }
        if let Some(p) = &self.protocol {
            if env.protocol != *p {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    InsertChainId(ChainId),
    ForwardTo(Target),
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::InsertChainId(id) => write!(f, "insert_chain:{}", id),
            Action::ForwardTo(t) => write!(f, "forward:{}", t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowEntry {
    pub priority: i32,
    pub matcher: MatchPredicate,
    pub actions: Vec<Action>,
}

impl FlowEntry {
    pub fn new(matcher: MatchPredicate, actions: Vec<Action>) -> Self {
        FlowEntry { priority: 0, matcher, actions }
    }

    pub fn validate(&self) -> Result<(), FabricError> {
        if self.matcher.is_unconstrained() {
            return Err(FabricError::InvalidEntry("match has no constraints".into()));
        }
        if self.actions.is_empty() {
            return Err(FabricError::InvalidEntry("entry has no actions".into()));
        }
        let inserts = self
            .actions
            .iter()
            .filter(|a| matches!(a, Action::InsertChainId(_)))
            .count();
        if inserts > 1 {
            return Err(FabricError::InvalidEntry("more than one chain-id insert".into()));
        }
        if let Some(pos) = self
            .actions
            .iter()
            .position(|a| matches!(a, Action::InsertChainId(_)))
        {
            if self.actions[..pos]
                .iter()
                .any(|a| matches!(a, Action::ForwardTo(_)))
            {
                return Err(FabricError::InvalidEntry(
                    "chain-id insert must precede forwarding".into(),
                ));
            }
        }
        Ok(())
    }

    fn forward_targets(&self) -> impl Iterator<Item = &Target> {
        self.actions.iter().filter_map(|a| match a {
            Action::ForwardTo(t) => Some(t),
            Action::InsertChainId(_) => None,
        })
    }
}

/// Entries kept sorted by (priority desc, insertion order); first match wins.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlowTable {
    entries: Vec<FlowEntry>,
}

impl FlowTable {
    pub fn entries(&self) -> &[FlowEntry] {
        &self.entries
    }

    pub fn insert(&mut self, entry: FlowEntry) {
        if self.entries.contains(&entry) {
            return;
        }
        let pos = self
            .entries
            .partition_point(|e| e.priority >= entry.priority);
        self.entries.insert(pos, entry);
    }

    pub fn remove(&mut self, entry: &FlowEntry) -> bool {
        match self.entries.iter().position(|e| e == entry) {
            Some(pos) => {
                self.entries.remove(pos);
                true
            }
            None => false,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Highest-priority entry whose every set constraint equals the envelope's
/// value; `None` means the switch drops the packet.
pub fn match_packet<'a>(table: &'a FlowTable, env: &Envelope) -> Option<&'a FlowEntry> {
    table.entries.iter().find(|e| e.matcher.matches(env))
}

#[derive(Debug, Clone)]
pub struct SwitchNode {
    pub id: String,
    pub host: String,
    pub table: FlowTable,
    pub links: BTreeSet<Target>,
    /// SW1 additionally owns the classifier role.
    pub classifier: bool,
}

/// An envelope in flight plus the hops it has taken so far.
#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub env: Envelope,
    pub trace: Vec<String>,
}

impl Packet {
    pub fn new(env: Envelope) -> Self {
        Packet { env, trace: Vec::new() }
    }
}

/// How the switch reaches VNF instances during a packet visit. The runtime
/// behind this decides processing cost and records invocation counts.
pub trait DataPlane {
    /// Hands the envelope to the instance and returns the processed envelope
    /// plus the simulated ticks the detour consumed.
    fn invoke_vnf(&mut self, instance: &str, env: Envelope) -> Result<(Envelope, Tick), FabricError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Emission {
    pub target: Target,
    pub packet: Packet,
    /// Ticks elapsed within the switch visit when this emission left.
    pub at_elapsed: Tick,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessOutcome {
    pub emissions: Vec<Emission>,
    pub dropped: bool,
    /// Rendered actions, for the per-hop switch trace log.
    pub applied: Vec<String>,
    /// Total ticks consumed inside the switch visit (VNF detours).
    pub elapsed: Tick,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FabricError {
    #[error("unknown switch {0}")]
    UnknownSwitch(String),
    #[error("invalid flow entry: {0}")]
    InvalidEntry(String),
    #[error("forward target {0} does not exist in the topology")]
    DanglingTarget(String),
    #[error("entry would overwrite chain id {existing} with {attempted}")]
    ChainIdOverwrite { existing: String, attempted: String },
    #[error("no live instance {0} at hop")]
    NoVnfAtHop(String),
    #[error("function processing failed: {0}")]
    VnfProcessing(String),
    #[error("no classification entry matches the request")]
    UnclassifiableRequest,
}

/// The forwarding plane: all switches, their tables, and the logs the
/// harness asserts over. All table writes carry the writer's identity.
#[derive(Debug, Clone, Default)]
pub struct Fabric {
    switches: BTreeMap<String, SwitchNode>,
    pub install_log: Vec<(String, String, FlowEntry)>,
    pub drop_log: Vec<(String, String)>,
}

impl Fabric {
    pub fn add_switch(&mut self, id: impl Into<String>, host: impl Into<String>, classifier: bool) {
        let id = id.into();
        self.switches.insert(
            id.clone(),
            SwitchNode {
                id,
                host: host.into(),
                table: FlowTable::default(),
                links: BTreeSet::new(),
                classifier,
            },
        );
    }

    pub fn switch(&self, id: &str) -> Option<&SwitchNode> {
        self.switches.get(id)
    }

    pub fn switches(&self) -> impl Iterator<Item = &SwitchNode> {
        self.switches.values()
    }

    pub fn classifier(&self) -> Option<&SwitchNode> {
        self.switches.values().find(|s| s.classifier)
    }

    pub fn link(&mut self, switch: &str, target: Target) -> Result<(), FabricError> {
        self.switches
            .get_mut(switch)
            .ok_or_else(|| FabricError::UnknownSwitch(switch.to_string()))?
            .links
            .insert(target);
        Ok(())
    }

    pub fn unlink(&mut self, switch: &str, target: &Target) {
        if let Some(sw) = self.switches.get_mut(switch) {
            sw.links.remove(target);
        }
    }

    /// Drops a VNF's link from every switch, e.g. when it terminates.
    pub fn unlink_vnf_everywhere(&mut self, instance: &str) {
        let target = Target::Vnf(instance.to_string());
        for sw in self.switches.values_mut() {
            sw.links.remove(&target);
        }
    }

    /// Installs an entry. Idempotent for identical entries; every forward
    /// target must exist in the switch's links at install time.
    pub fn install_entry(
        &mut self,
        writer: &str,
        switch_id: &str,
        entry: FlowEntry,
    ) -> Result<(), FabricError> {
        entry.validate()?;
        let sw = self
            .switches
            .get_mut(switch_id)
            .ok_or_else(|| FabricError::UnknownSwitch(switch_id.to_string()))?;
        for target in entry.forward_targets() {
            if !sw.links.contains(target) {
                return Err(FabricError::DanglingTarget(target.to_string()));
            }
        }
        self.install_log
            .push((writer.to_string(), switch_id.to_string(), entry.clone()));
        sw.table.insert(entry);
        Ok(())
    }

    pub fn remove_entry(&mut self, writer: &str, switch_id: &str, entry: &FlowEntry) -> bool {
        match self.switches.get_mut(switch_id) {
            Some(sw) => {
                let removed = sw.table.remove(entry);
                if removed {
                    self.install_log.push((
                        writer.to_string(),
                        switch_id.to_string(),
                        FlowEntry {
                            priority: entry.priority,
                            matcher: entry.matcher.clone(),
                            actions: vec![],
                        },
                    ));
                }
                removed
            }
            None => false,
        }
    }

    /// Applies the matched entry's actions in order. Chain-id insertion is
    /// write-once; each non-VNF forward emits one (target, packet) pair; a
    /// VNF forward is a synchronous detour through the data plane.
    pub fn process_packet(
        &mut self,
        switch_id: &str,
        mut packet: Packet,
        dataplane: &mut dyn DataPlane,
    ) -> Result<ProcessOutcome, FabricError> {
        let sw = self
            .switches
            .get(switch_id)
            .ok_or_else(|| FabricError::UnknownSwitch(switch_id.to_string()))?;
        let entry = match match_packet(&sw.table, &packet.env) {
            Some(e) => e.clone(),
            None => {
                self.drop_log
                    .push((switch_id.to_string(), "no matching entry".to_string()));
                return Ok(ProcessOutcome {
                    emissions: vec![],
                    dropped: true,
                    applied: vec!["drop".into()],
                    elapsed: 0,
                });
            }
        };

        let mut emissions = Vec::new();
        let mut applied = Vec::new();
        let mut elapsed: Tick = 0;
        for action in &entry.actions {
            applied.push(action.to_string());
            match action {
                Action::InsertChainId(id) => {
                    let fresh = packet.env.chain_id().is_none();
                    packet.env.stamp_chain_id(id).map_err(|e| match e {
                        ModelError::ChainIdOverwrite { existing, attempted } => {
                            FabricError::ChainIdOverwrite { existing, attempted }
                        }
                        other => FabricError::InvalidEntry(other.to_string()),
                    })?;
                    // A same-value re-stamp is a no-op and leaves no hop.
                    if fresh {
                        packet.trace.push(format!("{}:classify:{}", switch_id, id));
                    }
                }
                Action::ForwardTo(Target::Vnf(instance)) => {
                    packet.trace.push(format!("fwd:{}->vnf:{}", switch_id, instance));
                    let (env, cost) = dataplane.invoke_vnf(instance, packet.env.clone())?;
                    packet.env = env;
                    elapsed += cost;
                    packet.trace.push(format!("ret:vnf:{}->{}", instance, switch_id));
                }
                Action::ForwardTo(target) => {
                    let mut forked = packet.clone();
                    forked
                        .trace
                        .push(format!("fwd:{}->{}", switch_id, target.trace_label()));
                    emissions.push(Emission {
                        target: target.clone(),
                        packet: forked,
                        at_elapsed: elapsed,
                    });
                }
            }
        }
        Ok(ProcessOutcome { emissions, dropped: false, applied, elapsed })
    }

    /// Maps a request to its chain id using the classifier's table.
    pub fn classify(&self, env: &Envelope) -> Result<ChainId, FabricError> {
        let sw = self.classifier().ok_or(FabricError::UnclassifiableRequest)?;
        let entry = match_packet(&sw.table, env).ok_or(FabricError::UnclassifiableRequest)?;
        entry
            .actions
            .iter()
            .find_map(|a| match a {
                Action::InsertChainId(id) => Some(id.clone()),
                _ => None,
            })
            .ok_or(FabricError::UnclassifiableRequest)
    }

    /// Deterministic dump of every table, used as the snapshot oracle for
    /// rollback checks.
    pub fn render_tables(&self) -> String {
        let mut out = String::new();
        for sw in self.switches.values() {
            out.push_str(&format!("[{}]\n", sw.id));
            for e in sw.table.entries() {
                let actions: Vec<String> = e.actions.iter().map(|a| a.to_string()).collect();
                out.push_str(&format!(
                    "  prio={} match={:?} actions={}\n",
                    e.priority,
                    e.matcher,
                    actions.join(",")
                ));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Aggregation, Body, InfoModelKind};
    use proptest::prelude::*;

    struct NullPlane;
    impl DataPlane for NullPlane {
        fn invoke_vnf(
            &mut self,
            _instance: &str,
            env: Envelope,
        ) -> Result<(Envelope, Tick), FabricError> {
            Ok((env, 0))
        }
    }

    struct DeadPlane;
    impl DataPlane for DeadPlane {
        fn invoke_vnf(
            &mut self,
            instance: &str,
            _env: Envelope,
        ) -> Result<(Envelope, Tick), FabricError> {
            Err(FabricError::NoVnfAtHop(instance.to_string()))
        }
    }

    fn chain_a_requirements() -> AppRequirements {
        AppRequirements {
            protocol: ProtocolKind::HttpLike,
            info_model: InfoModelKind::SenmlLike,
            aggregation: Aggregation::AverageData,
        }
    }

    fn chain_a_props() -> DeviceProps {
        DeviceProps { protocol: ProtocolKind::CoapLike, info_model: InfoModelKind::Raw }
    }

    fn request_env() -> Envelope {
        let mut env = Envelope::new(
            ProtocolKind::HttpLike,
            "app-1",
            "SW1",
            Body::RawValues(vec![]),
        );
        env.set_app_requirements(&chain_a_requirements());
        env.set_device_props(&chain_a_props());
        env
    }

    fn two_switch_fabric() -> Fabric {
        let mut f = Fabric::default();
        f.add_switch("SW1", "gw-fixed", true);
        f.add_switch("SW2", "h2", false);
        f.link("SW1", Target::Switch("SW2".into())).unwrap();
        f.link("SW2", Target::Switch("SW1".into())).unwrap();
        f
    }

    #[test]
    fn install_and_lookup_chain_entry() {
        let mut f = two_switch_fabric();
        let entry = FlowEntry::new(
            MatchPredicate::chain(&ChainId::new("A")),
            vec![Action::ForwardTo(Target::Switch("SW1".into()))],
        );
        f.install_entry("sdn-controller", "SW2", entry.clone()).unwrap();
        assert_eq!(f.switch("SW2").unwrap().table.entries(), std::slice::from_ref(&entry));
        // Identical install is idempotent.
        f.install_entry("sdn-controller", "SW2", entry).unwrap();
        assert_eq!(f.switch("SW2").unwrap().table.len(), 1);
    }

    #[test]
    fn install_unknown_switch_fails() {
        let mut f = two_switch_fabric();
        let entry = FlowEntry::new(
            MatchPredicate::chain(&ChainId::new("A")),
            vec![Action::ForwardTo(Target::Switch("SW1".into()))],
        );
        assert_eq!(
            f.install_entry("sdn-controller", "SW9", entry),
            Err(FabricError::UnknownSwitch("SW9".into()))
        );
    }

    #[test]
    fn install_dangling_target_fails() {
        let mut f = two_switch_fabric();
        // The VNF was linked once, then terminated and unlinked.
        f.link("SW2", Target::Vnf("DA1-1".into())).unwrap();
        f.unlink_vnf_everywhere("DA1-1");
        let entry = FlowEntry::new(
            MatchPredicate::chain(&ChainId::new("A")),
            vec![Action::ForwardTo(Target::Vnf("DA1-1".into()))],
        );
        assert_eq!(
            f.install_entry("sdn-controller", "SW2", entry),
            Err(FabricError::DanglingTarget("vnf:DA1-1".into()))
        );
    }

    #[test]
    fn classifier_match_per_flow_table_rows() {
        let mut f = two_switch_fabric();
        let classify = FlowEntry::new(
            MatchPredicate::classification(chain_a_requirements(), chain_a_props()),
            vec![
                Action::InsertChainId(ChainId::new("A")),
                Action::ForwardTo(Target::Switch("SW2".into())),
            ],
        );
        f.install_entry("sdn-controller", "SW1", classify).unwrap();

        let env = request_env();
        let matched = match_packet(&f.switch("SW1").unwrap().table, &env).unwrap();
        assert!(matches!(matched.actions[0], Action::InsertChainId(_)));
        assert_eq!(f.classify(&env).unwrap(), ChainId::new("A"));

        // Device-facing row: chain id match forwards to "sensor a".
        f.link("SW2", Target::Device("sensor a".into())).unwrap();
        let sensor_row = FlowEntry::new(
            MatchPredicate::chain(&ChainId::new("A")),
            vec![Action::ForwardTo(Target::Device("sensor a".into()))],
        );
        f.install_entry("sdn-controller", "SW2", sensor_row).unwrap();
        let mut stamped = env.clone();
        stamped.stamp_chain_id(&ChainId::new("A")).unwrap();
        let hit = match_packet(&f.switch("SW2").unwrap().table, &stamped).unwrap();
        assert_eq!(
            hit.actions,
            vec![Action::ForwardTo(Target::Device("sensor a".into()))]
        );

        // A chain-B packet finds nothing in a chain-A-only table.
        let mut other = request_env();
        other.stamp_chain_id(&ChainId::new("B")).unwrap();
        assert!(match_packet(&f.switch("SW2").unwrap().table, &other).is_none());
    }

    #[test]
    fn process_packet_stamps_and_forwards() {
        let mut f = two_switch_fabric();
        let classify = FlowEntry::new(
            MatchPredicate::classification(chain_a_requirements(), chain_a_props()),
            vec![
                Action::InsertChainId(ChainId::new("A")),
                Action::ForwardTo(Target::Switch("SW2".into())),
            ],
        );
        f.install_entry("sdn-controller", "SW1", classify).unwrap();

        let outcome = f
            .process_packet("SW1", Packet::new(request_env()), &mut NullPlane)
            .unwrap();
        assert!(!outcome.dropped);
        assert_eq!(outcome.emissions.len(), 1);
        let em = &outcome.emissions[0];
        assert_eq!(em.target, Target::Switch("SW2".into()));
        assert_eq!(em.packet.env.chain_id(), Some(ChainId::new("A")));
        assert_eq!(em.packet.trace, vec!["SW1:classify:A", "fwd:SW1->SW2"]);
    }

    #[test]
    fn same_chain_insert_is_idempotent_and_conflict_errors() {
        let mut f = two_switch_fabric();
        let classify = FlowEntry::new(
            MatchPredicate::classification(chain_a_requirements(), chain_a_props()),
            vec![
                Action::InsertChainId(ChainId::new("A")),
                Action::ForwardTo(Target::Switch("SW2".into())),
            ],
        );
        f.install_entry("sdn-controller", "SW1", classify).unwrap();

        let mut env = request_env();
        env.stamp_chain_id(&ChainId::new("A")).unwrap();
        let ok = f.process_packet("SW1", Packet::new(env), &mut NullPlane).unwrap();
        assert!(!ok.dropped);

        let mut conflicting = request_env();
        conflicting.stamp_chain_id(&ChainId::new("B")).unwrap();
        let err = f
            .process_packet("SW1", Packet::new(conflicting), &mut NullPlane)
            .unwrap_err();
        assert_eq!(
            err,
            FabricError::ChainIdOverwrite { existing: "B".into(), attempted: "A".into() }
        );
    }

    #[test]
    fn terminated_vnf_hop_fails() {
        let mut f = two_switch_fabric();
        f.link("SW2", Target::Vnf("DA1-1".into())).unwrap();
        let entry = FlowEntry::new(
            MatchPredicate::chain(&ChainId::new("A")),
            vec![
                Action::ForwardTo(Target::Vnf("DA1-1".into())),
                Action::ForwardTo(Target::Switch("SW1".into())),
            ],
        );
        f.install_entry("sdn-controller", "SW2", entry).unwrap();
        let mut env = request_env();
        env.stamp_chain_id(&ChainId::new("A")).unwrap();
        let err = f
            .process_packet("SW2", Packet::new(env), &mut DeadPlane)
            .unwrap_err();
        assert_eq!(err, FabricError::NoVnfAtHop("DA1-1".into()));
    }

    #[test]
    fn no_match_drops_and_logs() {
        let mut f = two_switch_fabric();
        let out = f
            .process_packet("SW2", Packet::new(request_env()), &mut NullPlane)
            .unwrap();
        assert!(out.dropped);
        assert_eq!(f.drop_log.len(), 1);
        assert_eq!(f.drop_log[0].0, "SW2");
    }

    #[test]
    fn unclassifiable_request() {
        let f = two_switch_fabric();
        assert_eq!(
            f.classify(&request_env()),
            Err(FabricError::UnclassifiableRequest)
        );
    }

    #[test]
    fn entry_validation() {
        let no_match = FlowEntry::new(
            MatchPredicate::default(),
            vec![Action::ForwardTo(Target::Switch("SW2".into()))],
        );
        assert!(no_match.validate().is_err());

        let no_actions = FlowEntry::new(MatchPredicate::chain(&ChainId::new("A")), vec![]);
        assert!(no_actions.validate().is_err());

        let insert_after_forward = FlowEntry::new(
            MatchPredicate::chain(&ChainId::new("A")),
            vec![
                Action::ForwardTo(Target::Switch("SW2".into())),
                Action::InsertChainId(ChainId::new("A")),
            ],
        );
        assert!(insert_after_forward.validate().is_err());
    }

    #[test]
    fn priority_orders_entries() {
        let mut table = FlowTable::default();
        let mut low = FlowEntry::new(
            MatchPredicate::chain(&ChainId::new("A")),
            vec![Action::ForwardTo(Target::Switch("low".into()))],
        );
        low.priority = 0;
        let mut high = FlowEntry::new(
            MatchPredicate::chain(&ChainId::new("A")),
            vec![Action::ForwardTo(Target::Switch("high".into()))],
        );
        high.priority = 10;
        table.insert(low);
        table.insert(high);
        let mut env = request_env();
        env.stamp_chain_id(&ChainId::new("A")).unwrap();
        let hit = match_packet(&table, &env).unwrap();
        assert_eq!(hit.actions[0], Action::ForwardTo(Target::Switch("high".into())));
    }

    proptest! {
        // Disjoint equal-priority entries: installation order never changes
        // which entry matches.
        #[test]
        fn first_match_deterministic_for_disjoint_entries(
            perm in Just(()).prop_perturb(|_, mut rng| {
                let mut idx: Vec<usize> = (0..6).collect();
                for i in (1..idx.len()).rev() {
                    let j = (rng.next_u32() as usize) % (i + 1);
                    idx.swap(i, j);
                }
                idx
            }),
            probe in 0usize..6,
        ) {
            let chains: Vec<ChainId> =
                (0..6).map(|i| ChainId::new(format!("C{}", i))).collect();
            let mut table = FlowTable::default();
            for i in &perm {
                table.insert(FlowEntry::new(
                    MatchPredicate::chain(&chains[*i]),
                    vec![Action::ForwardTo(Target::Switch(format!("SW{}", i)))],
                ));
            }
            let mut env = request_env();
            env.stamp_chain_id(&chains[probe]).unwrap();
            let hit = match_packet(&table, &env).unwrap();
            prop_assert_eq!(
                &hit.actions[0],
                &Action::ForwardTo(Target::Switch(format!("SW{}", probe)))
            );
        }
    }
}
