//! Per-sensor deployment protocol: message vocabulary, the pure decision
//! rules, and the reactive state machine that ties them together.

mod rules;
mod sensor;

pub use rules::{
    merge_resolve, moving_condition, role_exchange_check, select_push, select_snap_assignments, start_portion,
    Density, MergeAction, NeighborView, PushChoice, SwapCosts,
};
pub use sensor::{rest_point, Env, Motion, ProtocolParams, Sensor};

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::energy::EnergyLedger;
use crate::lattice::{HexCoord, PortionKey};
use crate::{GridSpec, Point};

pub type SensorId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Free,
    Slave,
    Snapped,
    Hybrid,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Free => "free",
            Role::Slave => "slave",
            Role::Snapped => "snapped",
            Role::Hybrid => "hybrid",
        }
    }

    /// Snapped and hybrid sensors both sit on a hexagon center of their own
    /// portion.
    pub fn governs(self) -> bool {
        matches!(self, Role::Snapped | Role::Hybrid)
    }
}

/// A movement a sensor has agreed to perform for a commander.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub commander: SensorId,
    pub portion: PortionKey,
    pub target: HexCoord,
    /// Snap onto the target center, or join the governor of the target as a
    /// slave.
    pub snap: bool,
    pub issued_at: f64,
}

/// State every message carries about its sender.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub role: Role,
    pub position: Point,
    pub portion: Option<PortionKey>,
    pub honored: Option<PortionKey>,
    pub hex: Option<HexCoord>,
    pub master: Option<SensorId>,
    pub slave_count: u32,
    pub order: u64,
    pub task: Option<Task>,
    pub snap_time: f64,
    pub moving: bool,
    pub energy: EnergyLedger,
}

/// Role state handed to another sensor when it takes over a hexagon.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub portion: GridSpec,
    pub hex: HexCoord,
    pub slaves: Vec<SensorId>,
    pub incoming: Vec<(SensorId, f64)>,
    pub base_order: u64,
    pub snap_time: f64,
    pub neighbors: Vec<(SensorId, Summary)>,
    /// Set on an energy exchange: the new slave that now travels in place of
    /// the receiver, toward this destination governor.
    pub replaces_mover: Option<(SensorId, SensorId)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MessageKind {
    NeighborDiscoveryRequest,
    NeighborDiscoveryReply { request_from: SensorId },
    SnapCommand { target: HexCoord },
    PushCommand { target: HexCoord, new_master: SensorId, via: Vec<HexCoord> },
    PushOffer { mover: SensorId, count: u32, order: u64 },
    PushReply { mover: SensorId, accepted: bool },
    TriggerNotification { order: u64 },
    TriggerExtension { origin: SensorId, hole: HexCoord, hop: u32, ring: u32, round: u32 },
    ProfilePacket(Box<Profile>),
    StateAdvertisement { departing: bool },
}

impl MessageKind {
    pub fn name(&self) -> &'static str {
        match self {
            MessageKind::NeighborDiscoveryRequest => "discovery_request",
            MessageKind::NeighborDiscoveryReply { .. } => "discovery_reply",
            MessageKind::SnapCommand { .. } => "snap_command",
            MessageKind::PushCommand { .. } => "push_command",
            MessageKind::PushOffer { .. } => "push_offer",
            MessageKind::PushReply { .. } => "push_reply",
            MessageKind::TriggerNotification { .. } => "trigger_notification",
            MessageKind::TriggerExtension { .. } => "trigger_extension",
            MessageKind::ProfilePacket(_) => "profile_packet",
            MessageKind::StateAdvertisement { .. } => "state_advertisement",
        }
    }
}

/// One radio frame. The header portion is the portion the sender answers to.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolMessage {
    pub sender: SensorId,
    pub portion: Option<GridSpec>,
    pub send_time: f64,
    pub to: Option<SensorId>,
    pub summary: Summary,
    pub kind: MessageKind,
}

pub type SharedMessage = Rc<ProtocolMessage>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MovePurpose {
    Snap,
    Push,
    PullFill,
    MergeResnap,
    RoleExchange,
}

/// Self-addressed wakeups.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Timer {
    StartPortion,
    DiscoveryDone { epoch: u32 },
    Decide,
    ResolveCommands,
    OfferTimeout { epoch: u32 },
    PendingCheck,
    TriggerTimeout { round: u32, ring: u32 },
    LeaseExpiry,
    ArrivalCheck { epoch: u32 },
}

/// Protocol-level facts the engine writes into the trace.
#[derive(Debug, Clone, PartialEq)]
pub enum Note {
    Starter { portion: GridSpec },
    RoleChange { from: Role, to: Role },
    OrderChange { from: u64, to: u64 },
    TransferAccepted { from: SensorId, mover: SensorId, from_claim: (u32, u64), to_pre: (u32, u64) },
    TriggerAbandoned { hole: HexCoord, ring: u32 },
    Anomaly(String),
}

/// What a handler asks of the engine.
#[derive(Debug, Clone, PartialEq)]
pub enum Output {
    Send { kind: MessageKind, to: Option<SensorId> },
    Timer { at: f64, timer: Timer },
    Move { dest: Point, purpose: MovePurpose },
    Halt,
    Note(Note),
}
