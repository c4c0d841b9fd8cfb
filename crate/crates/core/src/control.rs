//! The SDN controller (co-located with the infrastructure manager): accepts
//! chain registrations on the extended northbound interface, compiles them
//! against the switch topology and live VNF placements, and pushes
//! application-level flow entries southbound.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::fabric::{Action, Fabric, FabricError, FlowEntry, MatchPredicate, Target};
use crate::model::{ChainId, ChainSpec};
use crate::vnf::VnfKind;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainRegistration {
    pub chain: ChainSpec,
    pub classification: MatchPredicate,
    pub ingress: String,
    pub egress: Target,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VnfSite {
    pub instance: String,
    pub kind: VnfKind,
    pub host: String,
    pub switch: String,
}

/// The controller's view of the network: switch adjacency, where each live
/// instance sits, where devices and applications attach, and which load
/// balancer fronts each multi-instance group.
#[derive(Debug, Clone, Default)]
pub struct TopologyView {
    adjacency: BTreeMap<String, BTreeSet<String>>,
    vnf_sites: BTreeMap<String, VnfSite>,
    device_switch: BTreeMap<String, String>,
    app_switch: BTreeMap<String, String>,
    group_fronts: BTreeMap<VnfKind, String>,
}

impl TopologyView {
    pub fn add_switch(&mut self, id: impl Into<String>) {
        self.adjacency.entry(id.into()).or_default();
    }

    pub fn link_switches(&mut self, a: &str, b: &str) {
        self.adjacency
            .entry(a.to_string())
            .or_default()
            .insert(b.to_string());
        self.adjacency
            .entry(b.to_string())
            .or_default()
            .insert(a.to_string());
    }

    pub fn has_switch(&self, id: &str) -> bool {
        self.adjacency.contains_key(id)
    }

    pub fn switches(&self) -> impl Iterator<Item = &String> {
        self.adjacency.keys()
    }

    pub fn place_vnf(&mut self, site: VnfSite) {
        self.vnf_sites.insert(site.instance.clone(), site);
    }

    pub fn remove_vnf(&mut self, instance: &str) {
        self.vnf_sites.remove(instance);
        self.group_fronts.retain(|_, front| front != instance);
    }

    pub fn attach_device(&mut self, device: &str, switch: &str) {
        self.device_switch
            .insert(device.to_string(), switch.to_string());
    }

    pub fn attach_app(&mut self, app: &str, switch: &str) {
        self.app_switch.insert(app.to_string(), switch.to_string());
    }

    /// Marks a load-balancer instance as the entry point for a kind's group.
    pub fn set_group_front(&mut self, kind: VnfKind, lb_instance: &str) {
        self.group_fronts.insert(kind, lb_instance.to_string());
    }

    pub fn group_front(&self, kind: VnfKind) -> Option<&VnfSite> {
        self.group_fronts
            .get(&kind)
            .and_then(|id| self.vnf_sites.get(id))
    }

    pub fn instances_of(&self, kind: VnfKind) -> Vec<&VnfSite> {
        self.vnf_sites.values().filter(|s| s.kind == kind).collect()
    }

    pub fn site(&self, instance: &str) -> Option<&VnfSite> {
        self.vnf_sites.get(instance)
    }

    fn egress_switch(&self, egress: &Target) -> Option<&String> {
        match egress {
            Target::Device(d) => self.device_switch.get(d),
            Target::App(a) => self.app_switch.get(a),
            _ => None,
        }
    }

    /// BFS shortest path with neighbors expanded in id order, so equal-length
    /// alternatives resolve to the lexicographically first parent chain.
    fn shortest_path(&self, from: &str, to: &str) -> Option<Vec<String>> {
        if from == to {
            return Some(vec![from.to_string()]);
        }
        let mut parent: BTreeMap<String, String> = BTreeMap::new();
        let mut queue = VecDeque::new();
        queue.push_back(from.to_string());
        while let Some(cur) = queue.pop_front() {
            for next in self.adjacency.get(&cur).into_iter().flatten() {
                if next != from && !parent.contains_key(next) {
                    parent.insert(next.clone(), cur.clone());
                    if next == to {
                        let mut path = vec![to.to_string()];
                        let mut at = to.to_string();
                        while let Some(p) = parent.get(&at) {
                            path.push(p.clone());
                            at = p.clone();
                        }
                        path.reverse();
                        return Some(path);
                    }
                    queue.push_back(next.clone());
                }
            }
        }
        None
    }
}

/// One switch visit along the compiled route, with the VNF detours taken
/// there in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Visit {
    pub switch: String,
    pub vnfs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompiledChain {
    pub chain_id: ChainId,
    pub visits: Vec<Visit>,
    /// `(switch, entry)` pairs in route order, ingress first.
    pub entries: Vec<(String, FlowEntry)>,
}

impl CompiledChain {
    /// Entries grouped per switch, for table-level comparisons.
    pub fn per_switch(&self) -> BTreeMap<String, Vec<FlowEntry>> {
        let mut map: BTreeMap<String, Vec<FlowEntry>> = BTreeMap::new();
        for (sw, e) in &self.entries {
            map.entry(sw.clone()).or_default().push(e.clone());
        }
        map
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ControlError {
    #[error("unknown ingress switch {0}")]
    UnknownIngress(String),
    #[error("no active instance for {0}")]
    MissingVnf(String),
    #[error("no path: {0}")]
    NoPath(String),
    #[error(transparent)]
    Fabric(#[from] FabricError),
}

/// Chooses the instance a chain hop steers through: the single live
/// instance, or the load balancer fronting the group.
fn hop_site(topo: &TopologyView, kind: VnfKind) -> Result<&VnfSite, ControlError> {
    let instances = topo.instances_of(kind);
    match instances.len() {
        0 => Err(ControlError::MissingVnf(kind.to_string())),
        1 => Ok(instances[0]),
        _ => topo
            .group_front(kind)
            .ok_or_else(|| ControlError::MissingVnf(format!("LB fronting {}", kind))),
    }
}

/// Compiles a registration into per-switch flow entries: one classification
/// entry at the ingress (match, insert chain id, forward), a chain-id entry
/// on every switch along the shortest route through the VNF sites in chain
/// order, and an egress forward at the final switch.
pub fn compile_chain(
    reg: &ChainRegistration,
    topo: &TopologyView,
) -> Result<CompiledChain, ControlError> {
    if !topo.has_switch(&reg.ingress) {
        return Err(ControlError::UnknownIngress(reg.ingress.clone()));
    }
    let mut hops: Vec<&VnfSite> = Vec::new();
    for kind in &reg.chain.functions {
        hops.push(hop_site(topo, *kind)?);
    }
    let egress_switch = topo
        .egress_switch(&reg.egress)
        .ok_or_else(|| ControlError::NoPath(format!("egress {} not attached", reg.egress)))?
        .clone();

    let mut visits: Vec<Visit> = vec![Visit { switch: reg.ingress.clone(), vnfs: vec![] }];
    let extend_to = |visits: &mut Vec<Visit>, to: &str| -> Result<(), ControlError> {
        let from = visits.last().expect("non-empty").switch.clone();
        let path = topo
            .shortest_path(&from, to)
            .ok_or_else(|| ControlError::NoPath(format!("{} -> {}", from, to)))?;
        for sw in path.into_iter().skip(1) {
            visits.push(Visit { switch: sw, vnfs: vec![] });
        }
        Ok(())
    };
    for site in &hops {
        extend_to(&mut visits, &site.switch)?;
        visits
            .last_mut()
            .expect("non-empty")
            .vnfs
            .push(site.instance.clone());
    }
    extend_to(&mut visits, &egress_switch)?;

    // A route that visits a switch twice would need two entries with the
    // same chain-id match; the linear topologies in play never do.
    let mut seen = BTreeSet::new();
    for v in &visits {
        if !seen.insert(v.switch.clone()) {
            return Err(ControlError::NoPath(format!("route revisits {}", v.switch)));
        }
    }

    let mut entries = Vec::new();
    for (i, visit) in visits.iter().enumerate() {
        let mut actions = Vec::new();
        if i == 0 {
            actions.push(Action::InsertChainId(reg.chain.chain_id.clone()));
        }
        for vnf in &visit.vnfs {
            actions.push(Action::ForwardTo(Target::Vnf(vnf.clone())));
        }
        let next = if i + 1 < visits.len() {
            Target::Switch(visits[i + 1].switch.clone())
        } else {
            reg.egress.clone()
        };
        actions.push(Action::ForwardTo(next));
        let matcher = if i == 0 {
            reg.classification.clone()
        } else {
            MatchPredicate::chain(&reg.chain.chain_id)
        };
        let entry = FlowEntry::new(matcher, actions);
        entry.validate()?;
        entries.push((visit.switch.clone(), entry));
    }

    Ok(CompiledChain { chain_id: reg.chain.chain_id.clone(), visits, entries })
}

/// The logically centralized controller; the single writer of every flow
/// table.
#[derive(Debug, Clone)]
pub struct SdnController {
    pub id: String,
    registrations: BTreeMap<ChainId, ChainRegistration>,
    installed: BTreeMap<ChainId, Vec<(String, FlowEntry)>>,
}

impl Default for SdnController {
    fn default() -> Self {
        SdnController {
            id: "sdn-controller".to_string(),
            registrations: BTreeMap::new(),
            installed: BTreeMap::new(),
        }
    }
}

impl SdnController {
    pub fn registration(&self, chain: &ChainId) -> Option<&ChainRegistration> {
        self.registrations.get(chain)
    }

    pub fn registrations(&self) -> impl Iterator<Item = &ChainRegistration> {
        self.registrations.values()
    }

    pub fn installed_entries(&self, chain: &ChainId) -> &[(String, FlowEntry)] {
        self.installed
            .get(chain)
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    /// Installs a compiled chain atomically, egress-first, so a stamped
    /// packet can never reach a switch whose entry is missing. Any failure
    /// rolls back the entries already pushed.
    pub fn push_entries(
        &mut self,
        fabric: &mut Fabric,
        compiled: &CompiledChain,
    ) -> Result<(), ControlError> {
        let mut pushed: Vec<(String, FlowEntry)> = Vec::new();
        for (switch, entry) in compiled.entries.iter().rev() {
            match fabric.install_entry(&self.id, switch, entry.clone()) {
                Ok(()) => pushed.push((switch.clone(), entry.clone())),
                Err(e) => {
                    for (sw, en) in pushed.iter().rev() {
                        fabric.remove_entry(&self.id, sw, en);
                    }
                    return Err(e.into());
                }
            }
        }
        self.installed
            .insert(compiled.chain_id.clone(), compiled.entries.clone());
        Ok(())
    }

    /// Registers a chain and programs the fabric. Identical re-registration
    /// is a no-op; a changed registration replaces the old entries.
    pub fn register_chain(
        &mut self,
        reg: ChainRegistration,
        topo: &TopologyView,
        fabric: &mut Fabric,
    ) -> Result<(), ControlError> {
        if !topo.has_switch(&reg.ingress) {
            return Err(ControlError::UnknownIngress(reg.ingress.clone()));
        }
        if self.registrations.get(&reg.chain.chain_id) == Some(&reg) {
            return Ok(());
        }
        if self.registrations.contains_key(&reg.chain.chain_id) {
            self.unregister_chain(&reg.chain.chain_id, fabric);
        }
        let compiled = compile_chain(&reg, topo)?;
        self.push_entries(fabric, &compiled)?;
        self.registrations.insert(reg.chain.chain_id.clone(), reg);
        Ok(())
    }

    /// Uninstalls a chain's entries, classifier first.
    pub fn unregister_chain(&mut self, chain: &ChainId, fabric: &mut Fabric) {
        if let Some(entries) = self.installed.remove(chain) {
            for (switch, entry) in entries.iter() {
                fabric.remove_entry(&self.id, switch, entry);
            }
        }
        self.registrations.remove(chain);
    }
}
