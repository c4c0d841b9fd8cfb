//! The two P2P overlays riding on the simulated MANET: the IoT Gateway
//! Overlay and the Application Overlay. Membership is master-advertised;
//! constrained devices are represented by capable nodes; co-located nodes
//! (members of both overlays) bridge messages between them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::model::Envelope;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OverlayId {
    Gateway,
    Application,
}

impl OverlayId {
    pub fn other(&self) -> OverlayId {
        match self {
            OverlayId::Gateway => OverlayId::Application,
            OverlayId::Application => OverlayId::Gateway,
        }
    }
}

impl fmt::Display for OverlayId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OverlayId::Gateway => f.write_str("Gateway"),
            OverlayId::Application => f.write_str("Application"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlayMsg {
    pub overlay: OverlayId,
    pub src: String,
    pub dst: String,
    pub payload: Envelope,
    pub trace: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OverlayOp {
    Create { overlay: OverlayId, master: String },
    Join { overlay: OverlayId, node: String },
    Leave { overlay: OverlayId, node: String },
}

#[derive(Debug, Clone)]
pub struct OverlayState {
    pub master: String,
    pub members: BTreeSet<String>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OverlayError {
    #[error("overlay {0} already created")]
    AlreadyCreated(OverlayId),
    #[error("overlay {0} not created")]
    OverlayNotCreated(OverlayId),
    #[error("node {0} unreachable in the simulated network")]
    Unreachable(String),
    #[error("node {0} is not a member")]
    NotMember(String),
    #[error("node {0} is not co-located in both overlays")]
    NotCoLocated(String),
    #[error("master {0} cannot leave its overlay")]
    MasterLeft(String),
}

/// Both overlays plus the underlying static node graph for the run.
#[derive(Debug, Clone, Default)]
pub struct OverlayNet {
    overlays: BTreeMap<OverlayId, OverlayState>,
    represents: BTreeMap<String, Vec<String>>,
    nodes: BTreeSet<String>,
    /// Hop counts for pairs routed through relays; everything else is one
    /// logical hop via master-known membership.
    relay_hops: BTreeMap<(String, String), u32>,
    pub op_log: Vec<OverlayOp>,
}

impl OverlayNet {
    /// Registers a node with the simulated network.
    pub fn add_node(&mut self, id: impl Into<String>) {
        self.nodes.insert(id.into());
    }

    pub fn set_relay_hops(&mut self, src: &str, dst: &str, hops: u32) {
        self.relay_hops
            .insert((src.to_string(), dst.to_string()), hops);
    }

    pub fn overlay(&self, id: OverlayId) -> Option<&OverlayState> {
        self.overlays.get(&id)
    }

    pub fn members(&self, id: OverlayId) -> BTreeSet<String> {
        self.overlays
            .get(&id)
            .map(|s| s.members.clone())
            .unwrap_or_default()
    }

    pub fn is_member(&self, id: OverlayId, node: &str) -> bool {
        self.overlays
            .get(&id)
            .map(|s| s.members.contains(node))
            .unwrap_or(false)
    }

    pub fn represents(&self, node: &str) -> &[String] {
        self.represents.get(node).map(|v| v.as_slice()).unwrap_or(&[])
    }

    /// The proxy node representing a device, if any has registered it.
    pub fn representative_of(&self, device: &str) -> Option<&str> {
        self.represents
            .iter()
            .find(|(_, devs)| devs.iter().any(|d| d == device))
            .map(|(n, _)| n.as_str())
    }

    pub fn create_overlay(&mut self, id: OverlayId, master: &str) -> Result<(), OverlayError> {
        if self.overlays.contains_key(&id) {
            return Err(OverlayError::AlreadyCreated(id));
        }
        if !self.nodes.contains(master) {
            return Err(OverlayError::Unreachable(master.to_string()));
        }
        let mut members = BTreeSet::new();
        members.insert(master.to_string());
        self.overlays
            .insert(id, OverlayState { master: master.to_string(), members });
        self.op_log
            .push(OverlayOp::Create { overlay: id, master: master.to_string() });
        Ok(())
    }

    /// Adds a node to the registry. One simulated round-trip to the master
    /// (`c_join` ticks) is charged by the caller. Idempotent for existing
    /// members.
    pub fn join(&mut self, node: &str, id: OverlayId) -> Result<(), OverlayError> {
        if !self.nodes.contains(node) {
            return Err(OverlayError::Unreachable(node.to_string()));
        }
        let state = self
            .overlays
            .get_mut(&id)
            .ok_or(OverlayError::OverlayNotCreated(id))?;
        if state.members.insert(node.to_string()) {
            self.op_log.push(OverlayOp::Join { overlay: id, node: node.to_string() });
        }
        Ok(())
    }

    /// A type-A device rides on its proxy: the proxy's represented set gains
    /// the device; the registry itself is unchanged.
    pub fn represent(
        &mut self,
        id: OverlayId,
        proxy: &str,
        device: &str,
    ) -> Result<(), OverlayError> {
        if !self.is_member(id, proxy) {
            return Err(OverlayError::NotMember(proxy.to_string()));
        }
        let devs = self.represents.entry(proxy.to_string()).or_default();
        if !devs.iter().any(|d| d == device) {
            devs.push(device.to_string());
        }
        Ok(())
    }

    pub fn leave(&mut self, node: &str, id: OverlayId) -> Result<(), OverlayError> {
        let state = self
            .overlays
            .get_mut(&id)
            .ok_or(OverlayError::OverlayNotCreated(id))?;
        if state.master == node {
            return Err(OverlayError::MasterLeft(node.to_string()));
        }
        if !state.members.remove(node) {
            return Err(OverlayError::NotMember(node.to_string()));
        }
        self.op_log.push(OverlayOp::Leave { overlay: id, node: node.to_string() });
        Ok(())
    }

    /// Validates a send and returns the hop count; the caller schedules the
    /// delivery `hops * hop_delay` ticks out.
    pub fn route(&self, msg: &OverlayMsg) -> Result<u32, OverlayError> {
        let state = self
            .overlays
            .get(&msg.overlay)
            .ok_or(OverlayError::OverlayNotCreated(msg.overlay))?;
        if !state.members.contains(&msg.src) {
            return Err(OverlayError::NotMember(msg.src.clone()));
        }
        if !state.members.contains(&msg.dst) {
            return Err(OverlayError::NotMember(msg.dst.clone()));
        }
        Ok(self
            .relay_hops
            .get(&(msg.src.clone(), msg.dst.clone()))
            .copied()
            .unwrap_or(1))
    }

    /// Membership re-check at delivery time; a node that left while the
    /// message was in flight fails here.
    pub fn check_delivery(&self, msg: &OverlayMsg) -> Result<(), OverlayError> {
        if !self.is_member(msg.overlay, &msg.dst) {
            return Err(OverlayError::NotMember(msg.dst.clone()));
        }
        Ok(())
    }

    /// Re-emits a message into the other overlay at a co-located node.
    pub fn bridge(
        &self,
        msg: &OverlayMsg,
        at: &str,
        dst: &str,
    ) -> Result<OverlayMsg, OverlayError> {
        let other = msg.overlay.other();
        if !self.is_member(msg.overlay, at) || !self.is_member(other, at) {
            return Err(OverlayError::NotCoLocated(at.to_string()));
        }
        let mut trace = msg.trace.clone();
        trace.push(format!("bridge:{}:{}->{}", at, msg.overlay, other));
        Ok(OverlayMsg {
            overlay: other,
            src: at.to_string(),
            dst: dst.to_string(),
            payload: msg.payload.clone(),
            trace,
        })
    }

    pub fn co_located_nodes(&self) -> Vec<String> {
        let gw = self.members(OverlayId::Gateway);
        let app = self.members(OverlayId::Application);
        gw.intersection(&app).cloned().collect()
    }

    /// Cross-overlay delivery is possible iff some co-located node exists.
    pub fn cross_reachable(&self) -> bool {
        !self.co_located_nodes().is_empty()
    }

    /// Brute-force replay of the op log for one overlay; the membership
    /// consistency oracle.
    pub fn replay_members(ops: &[OverlayOp], id: OverlayId) -> BTreeSet<String> {
        let mut members = BTreeSet::new();
        for op in ops {
            match op {
                OverlayOp::Create { overlay, master } if *overlay == id => {
                    members.insert(master.clone());
                }
                OverlayOp::Join { overlay, node } if *overlay == id => {
                    members.insert(node.clone());
                }
                OverlayOp::Leave { overlay, node } if *overlay == id => {
                    members.remove(node);
                }
                _ => {}
            }
        }
        members
    }
}
