//! The reactive per-sensor machine.
//!
//! A [`Sensor`] never looks at another sensor's state. Everything it knows
//! about the world arrives in message summaries and sits in its neighbor
//! cache; everything it does leaves as an [`Output`] for the engine to carry
//! out.

use std::collections::{BTreeMap, BTreeSet};

use crate::energy::{EnergyLedger, EnergyModel};
use crate::lattice::{HexCoord, PortionKey};
use crate::{Aoi, GridSpec, Point, RadioParams};

use super::rules::{
    merge_resolve, moving_condition, role_exchange_check, select_push, select_snap_assignments, start_portion,
    Density, MergeAction, NeighborView, SwapCosts,
};
use super::{
    MessageKind, MovePurpose, Note, Output, Profile, ProtocolMessage, Role, SensorId, Summary, Task, Timer,
};

/// Protocol constants shared by every sensor of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolParams {
    pub radio: RadioParams,
    pub speed: f64,
    pub side: f64,
    pub latency: f64,
    pub pull_base: f64,
    pub max_ring: u32,
    pub role_exchange: bool,
    pub energy: EnergyModel,
    /// Slaves idle this fraction of a side away from the center.
    pub rest_offset: f64,
}

impl ProtocolParams {
    fn travel(&self, meters: f64) -> f64 {
        meters / self.speed
    }
}

/// Read-only context for one handler invocation.
#[derive(Debug, Clone, Copy)]
pub struct Env<'a> {
    pub now: f64,
    pub aoi: &'a Aoi,
    pub params: &'a ProtocolParams,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Motion {
    pub from: Point,
    pub to: Point,
    pub depart: f64,
    pub arrive: f64,
    pub purpose: MovePurpose,
    pub epoch: u32,
}

impl Motion {
    pub fn position_at(&self, t: f64) -> Point {
        if self.arrive <= self.depart {
            return self.to;
        }
        let f = ((t - self.depart) / (self.arrive - self.depart)).clamp(0.0, 1.0);
        self.from.lerp(self.to, f)
    }
}

#[derive(Debug, Clone)]
struct Known {
    summary: Summary,
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    sensor: SensorId,
    deadline: f64,
}

#[derive(Debug, Clone, Copy)]
struct Offer {
    to: SensorId,
    mover: SensorId,
    dest_hex: HexCoord,
    epoch: u32,
}

/// An extension lease outlives the next renewal by one period.
const LEASE_PERIODS: f64 = 2.0;

#[derive(Debug, Clone, Copy)]
struct Trigger {
    round: u32,
}

#[derive(Debug, Clone, Copy)]
struct Lease {
    hop: u32,
    ring: u32,
    expiry: f64,
}

#[derive(Debug, Clone)]
struct Command {
    sender: SensorId,
    send_time: f64,
    portion: GridSpec,
    kind: MessageKind,
}

#[derive(Debug, Clone, PartialEq)]
struct AdvertKey {
    role: Role,
    portion: Option<PortionKey>,
    honored: Option<PortionKey>,
    hex: Option<HexCoord>,
    master: Option<SensorId>,
    count: u32,
    order: u64,
    task: bool,
}

#[derive(Debug, Clone)]
pub struct Sensor {
    pub id: SensorId,
    pub role: Role,
    /// Rest position; while moving, the start of the current leg.
    pub position: Point,
    pub motion: Option<Motion>,
    pub portion: Option<GridSpec>,
    pub honored: Option<GridSpec>,
    pub hex: Option<HexCoord>,
    pub master: Option<SensorId>,
    pub base_order: u64,
    pub order: u64,
    pub slaves: BTreeSet<SensorId>,
    pub incoming: BTreeMap<SensorId, f64>,
    pub energy: EnergyLedger,
    pub start_time: f64,
    pub orientation: f64,
    pub snap_time: f64,
    pub task: Option<Task>,
    pub move_epoch: u32,
    task_grid: Option<GridSpec>,
    contacted: bool,
    neighbors: BTreeMap<SensorId, Known>,
    pending: BTreeMap<HexCoord, Pending>,
    foreign_pending: BTreeMap<HexCoord, f64>,
    claimed: BTreeMap<SensorId, f64>,
    offer: Option<Offer>,
    offer_epoch: u32,
    deferred_slaves: Vec<SensorId>,
    deferred_incoming: Vec<SensorId>,
    trigger: Option<Trigger>,
    trigger_round: u32,
    /// Radius and expiry of this sensor's own latest extension.
    reach: Option<(u32, f64)>,
    stalled: bool,
    leases: BTreeMap<SensorId, Lease>,
    relayed: BTreeSet<(SensorId, u32, u32)>,
    inbox: Vec<Command>,
    resolve_scheduled: bool,
    decide_scheduled: bool,
    discovering: bool,
    discovery_epoch: u32,
    newer_contacts: BTreeSet<SensorId>,
    arrival_epoch: u32,
    awaiting_ack: bool,
    check_at: Option<f64>,
    lease_check_at: Option<f64>,
    last_advert: Option<AdvertKey>,
    sent: bool,
    out: Vec<Output>,
}

const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;

impl Sensor {
    pub fn new(id: SensorId, position: Point, start_time: f64, orientation: f64, base_order: u64) -> Self {
        Sensor {
            id,
            role: Role::Free,
            position,
            motion: None,
            portion: None,
            honored: None,
            hex: None,
            master: None,
            base_order,
            order: base_order,
            slaves: BTreeSet::new(),
            incoming: BTreeMap::new(),
            energy: EnergyLedger::default(),
            start_time,
            orientation,
            snap_time: 0.0,
            task: None,
            move_epoch: 0,
            task_grid: None,
            contacted: false,
            neighbors: BTreeMap::new(),
            pending: BTreeMap::new(),
            foreign_pending: BTreeMap::new(),
            claimed: BTreeMap::new(),
            offer: None,
            offer_epoch: 0,
            deferred_slaves: Vec::new(),
            deferred_incoming: Vec::new(),
            trigger: None,
            trigger_round: 0,
            reach: None,
            stalled: false,
            leases: BTreeMap::new(),
            relayed: BTreeSet::new(),
            inbox: Vec::new(),
            resolve_scheduled: false,
            decide_scheduled: false,
            discovering: false,
            discovery_epoch: 0,
            newer_contacts: BTreeSet::new(),
            arrival_epoch: 0,
            awaiting_ack: false,
            check_at: None,
            lease_check_at: None,
            last_advert: None,
            sent: false,
            out: Vec::new(),
        }
    }

    pub fn position_at(&self, t: f64) -> Point {
        self.motion.map_or(self.position, |m| m.position_at(t))
    }

    pub fn is_moving(&self) -> bool {
        self.motion.is_some()
    }

    /// Slave count as if every agreed movement had already completed.
    pub fn adjusted_count(&self) -> u32 {
        (self.slaves.len() + self.incoming.len()) as u32
    }

    /// Portion named in the header of every message this sensor sends.
    pub fn header_portion(&self) -> Option<GridSpec> {
        match self.role {
            Role::Free | Role::Hybrid => self.honored,
            Role::Slave | Role::Snapped => self.portion,
        }
    }

    pub fn summary(&self, now: f64) -> Summary {
        Summary {
            role: self.role,
            position: self.position_at(now),
            portion: self.portion.map(|g| g.key()),
            honored: self.honored.map(|g| g.key()),
            hex: self.hex,
            master: self.master,
            slave_count: self.adjusted_count(),
            order: self.order,
            task: self.task,
            snap_time: self.snap_time,
            moving: self.is_moving(),
            energy: self.energy,
        }
    }

    /// True while outstanding obligations could still generate protocol
    /// traffic; used by end-of-run audits.
    pub fn has_open_reservations(&self) -> bool {
        !self.incoming.is_empty() || !self.pending.is_empty() || self.offer.is_some()
    }

    // ----- handler entry points -------------------------------------------------

    pub fn on_start(&mut self, env: &Env) -> Vec<Output> {
        if self.role == Role::Free && !self.contacted && self.task.is_none() {
            let grid = start_portion(self.id, self.position, self.orientation, env.params.side, env.now);
            self.out.push(Output::Note(Note::Starter { portion: grid }));
            self.snap_in(env, grid, HexCoord::ORIGIN);
        }
        self.finish(env)
    }

    pub fn on_arrival(&mut self, env: &Env, purpose: MovePurpose) -> Vec<Output> {
        self.motion = None;
        match (self.role, self.task) {
            (_, Some(task)) if task.snap => {
                let grid = self.task_grid.take().or(self.portion).expect("snap task carries its grid");
                self.task = None;
                self.snap_in(env, grid, task.target);
            }
            (Role::Slave, _) => {
                self.task = None;
                self.task_grid = None;
                self.awaiting_ack = true;
                self.arrival_epoch += 1;
                self.send(MessageKind::StateAdvertisement { departing: false }, self.master);
                let at = env.now + 4.0 * env.params.latency;
                self.out.push(Output::Timer { at, timer: Timer::ArrivalCheck { epoch: self.arrival_epoch } });
            }
            (Role::Snapped, _) if purpose == MovePurpose::RoleExchange => {
                self.schedule_decide(env);
            }
            _ => {}
        }
        self.finish(env)
    }

    pub fn on_timer(&mut self, env: &Env, timer: Timer) -> Vec<Output> {
        match timer {
            Timer::StartPortion => return self.on_start(env),
            Timer::DiscoveryDone { epoch } if epoch == self.discovery_epoch && self.discovering => {
                self.discovering = false;
                if !self.resolve_duplicate(env) {
                    self.decide(env);
                }
            }
            Timer::Decide => {
                self.decide_scheduled = false;
                self.decide(env);
            }
            Timer::ResolveCommands => {
                self.resolve_scheduled = false;
                self.resolve_commands(env);
            }
            Timer::OfferTimeout { epoch } => {
                if self.offer.is_some_and(|o| o.epoch == epoch) {
                    self.offer = None;
                    self.settle_after_offer(env);
                    self.decide(env);
                }
            }
            Timer::PendingCheck => {
                if self.check_at.is_some_and(|t| t <= env.now) {
                    self.check_at = None;
                }
                self.expire(env);
                self.decide(env);
            }
            Timer::TriggerTimeout { round, ring } => self.trigger_timeout(env, round, ring),
            Timer::LeaseExpiry => {
                if self.lease_check_at.is_some_and(|t| t <= env.now) {
                    self.lease_check_at = None;
                }
                let now = env.now;
                self.leases.retain(|_, l| l.expiry > now);
                self.schedule_lease_check(env);
                self.publish_order(env);
                self.schedule_decide(env);
            }
            Timer::ArrivalCheck { epoch } => {
                if epoch == self.arrival_epoch && self.awaiting_ack && self.role == Role::Slave {
                    self.awaiting_ack = false;
                    self.release_to_free(env, self.portion);
                }
            }
            _ => {}
        }
        self.finish(env)
    }

    pub fn on_message(&mut self, env: &Env, msg: &ProtocolMessage) -> Vec<Output> {
        if msg.sender != self.id {
            self.receive(env, msg);
        }
        self.finish(env)
    }

    // ----- message processing ---------------------------------------------------

    fn receive(&mut self, env: &Env, msg: &ProtocolMessage) {
        if msg.portion.is_some() {
            self.contacted = true;
        }
        let action = merge_resolve(self.role, self.portion.as_ref(), self.honored.as_ref(), msg.portion.as_ref());
        match action {
            MergeAction::Honor | MergeAction::Rehonor => self.honored = msg.portion,
            MergeAction::Release => self.release_to_free(env, msg.portion),
            MergeAction::BecomeHybrid => self.become_hybrid(env, msg.portion),
            MergeAction::Discover => {
                if self.newer_contacts.insert(msg.sender) && !self.discovering {
                    self.start_discovery(env);
                }
                return;
            }
            MergeAction::Ignore => return,
            MergeAction::None => {}
        }

        if self.role == Role::Snapped {
            self.learn(env, msg);
        }

        let to_me = msg.to == Some(self.id);
        match &msg.kind {
            MessageKind::NeighborDiscoveryRequest => {
                if self.role != Role::Slave {
                    self.send(MessageKind::NeighborDiscoveryReply { request_from: msg.sender }, Some(msg.sender));
                }
            }
            MessageKind::SnapCommand { .. } | MessageKind::PushCommand { .. } if to_me => self.on_command(env, msg),
            MessageKind::PushOffer { mover, count, order } if to_me => self.on_offer(env, msg, *mover, *count, *order),
            MessageKind::PushReply { mover, accepted } if to_me => self.on_reply(env, *mover, *accepted),
            MessageKind::TriggerExtension { origin, hole, ring, round, .. } => {
                if self.role == Role::Snapped && msg.portion == self.portion {
                    self.on_extension(env, *origin, *hole, *ring, *round);
                }
            }
            MessageKind::ProfilePacket(profile) => self.on_profile(env, msg, profile),
            MessageKind::StateAdvertisement { .. } if to_me => {
                if self.role == Role::Slave && self.master == Some(msg.sender) {
                    self.awaiting_ack = false;
                }
            }
            _ => {}
        }
    }

    /// Update the neighbor cache of a snapped sensor and react to what the
    /// sender's summary says about our own bookkeeping.
    fn learn(&mut self, env: &Env, msg: &ProtocolMessage) {
        let s = &msg.summary;
        let sender = msg.sender;
        let my_key = self.portion.map(|g| g.key());
        let mut relevant = false;

        // Slaves and movers that name us as master.
        let claims_me = s.role == Role::Slave && s.master == Some(self.id) && s.portion == my_key;
        if claims_me {
            if s.moving {
                if !self.slaves.contains(&sender) && !self.incoming.contains_key(&sender) {
                    let dist = s.position.distance(self.center());
                    let deadline = env.now + env.params.travel(dist) + 20.0 * env.params.latency;
                    self.incoming.insert(sender, deadline);
                    relevant = true;
                } else {
                    let dist = s.position.distance(self.center());
                    let d = self.incoming.get_mut(&sender).expect("checked above");
                    *d = d.max(env.now + env.params.travel(dist) + 20.0 * env.params.latency);
                }
            } else {
                self.incoming.remove(&sender);
                let fresh = self.slaves.insert(sender);
                relevant |= fresh;
                self.send(MessageKind::StateAdvertisement { departing: false }, Some(sender));
            }
        } else {
            if self.slaves.contains(&sender) && s.master != Some(self.id) {
                self.remove_slave(sender);
                relevant = true;
            }
            if self.incoming.contains_key(&sender) {
                let elsewhere = match (s.role, s.task) {
                    (Role::Snapped | Role::Hybrid, _) => true,
                    (Role::Slave, _) => s.master != Some(self.id),
                    (Role::Free, Some(t)) => t.commander != self.id,
                    (Role::Free, None) => false,
                };
                if elsewhere {
                    self.drop_incoming(sender);
                    relevant = true;
                }
            }
        }

        // Our own snap commands.
        let resolved: Vec<HexCoord> = self
            .pending
            .iter()
            .filter(|(hex, p)| {
                let occupant = s.role.governs() && s.portion == my_key && s.hex == Some(**hex);
                let lost = p.sensor == sender
                    && match s.task {
                        Some(t) => t.commander != self.id,
                        None => !s.role.governs() && !(s.role == Role::Free && s.honored == my_key),
                    };
                occupant || lost
            })
            .map(|(h, _)| *h)
            .collect();
        for hex in resolved {
            self.pending.remove(&hex);
            relevant = true;
        }
        if let Some(t) = s.task {
            let target_center = self.center_of(t.target);
            if let Some(p) = self.pending.get_mut(&t.target) {
                if p.sensor == sender && t.commander == self.id {
                    let dist = s.position.distance(target_center);
                    p.deadline = env.now + env.params.travel(dist) + 20.0 * env.params.latency;
                }
            }
            if t.commander != self.id && Some(t.portion) == my_key && t.snap {
                let dist = s.position.distance(self.center_of(t.target));
                let until = env.now + env.params.travel(dist) + 20.0 * env.params.latency;
                self.foreign_pending.insert(t.target, until);
                relevant = true;
            }
        }

        // Commands to others we overhear: keep away from their targets.
        match &msg.kind {
            MessageKind::ProfilePacket(profile) if Some(profile.portion.key()) == my_key => {
                if let Some(heir) = msg.to.filter(|&h| h != self.id) {
                    // The hexagon changes hands; it never falls vacant.
                    let summary = Summary {
                        role: Role::Snapped,
                        position: profile.portion.center(profile.hex),
                        portion: my_key,
                        honored: None,
                        hex: Some(profile.hex),
                        master: None,
                        slave_count: (profile.slaves.len() + profile.incoming.len()) as u32,
                        order: profile.base_order,
                        task: None,
                        snap_time: profile.snap_time,
                        moving: true,
                        energy: self.neighbors.get(&heir).map(|k| k.summary.energy).unwrap_or_default(),
                    };
                    self.neighbors.insert(heir, Known { summary });
                }
            }
            MessageKind::SnapCommand { target } if msg.portion == self.portion && msg.to != Some(self.id) => {
                let until = env.now + env.params.travel(env.params.radio.transmission * 2.0) + 20.0 * env.params.latency;
                self.foreign_pending.insert(*target, until);
                if let Some(to) = msg.to {
                    self.claimed.insert(to, env.now + 6.0 * env.params.latency);
                }
            }
            MessageKind::PushCommand { .. } if msg.to != Some(self.id) => {
                if let Some(to) = msg.to {
                    self.claimed.insert(to, env.now + 6.0 * env.params.latency);
                }
            }
            _ => {}
        }

        if self.stalled && s.role == Role::Snapped && s.portion == my_key {
            let newcomer = self.neighbors.get(&sender).is_none_or(|k| k.summary.role != Role::Snapped);
            if newcomer || s.slave_count > 0 {
                self.stalled = false;
                relevant = true;
            }
        }
        let candidate = s.task.is_none()
            && ((s.role == Role::Free && (s.honored == my_key || s.honored.is_none()))
                || (s.role == Role::Hybrid && s.honored == my_key));
        let prev = self.neighbors.insert(sender, Known { summary: s.clone() });
        let changed = match &prev {
            None => true,
            Some(k) => {
                k.summary.role != s.role
                    || k.summary.slave_count != s.slave_count
                    || k.summary.order != s.order
                    || k.summary.hex != s.hex
                    || k.summary.portion != s.portion
                    || k.summary.task.is_some() != s.task.is_some()
            }
        };
        if changed && (candidate || s.role.governs() || prev.is_some_and(|k| k.summary.role.governs())) {
            relevant = true;
        }
        if matches!(msg.kind, MessageKind::TriggerNotification { .. }) {
            relevant = true;
        }
        if relevant && !self.discovering {
            self.schedule_decide(env);
        }
    }

    fn on_command(&mut self, env: &Env, msg: &ProtocolMessage) {
        let Some(portion) = msg.portion else { return };
        match self.role {
            Role::Free | Role::Hybrid => {
                if self.task.is_some() || self.honored != Some(portion) {
                    return;
                }
                self.inbox.push(Command { sender: msg.sender, send_time: msg.send_time, portion, kind: msg.kind.clone() });
                if !self.resolve_scheduled {
                    self.resolve_scheduled = true;
                    self.out.push(Output::Timer { at: env.now, timer: Timer::ResolveCommands });
                }
            }
            Role::Slave => {
                if self.master != Some(msg.sender) || self.is_moving() || self.portion != Some(portion) {
                    return;
                }
                self.awaiting_ack = false;
                self.execute_command(env, msg.sender, msg.send_time, portion, &msg.kind, MovePurpose::Push);
            }
            Role::Snapped => {}
        }
    }

    /// Earliest command wins; ties go to the lower sender id.
    fn resolve_commands(&mut self, env: &Env) {
        let inbox = std::mem::take(&mut self.inbox);
        if self.task.is_some() || !matches!(self.role, Role::Free | Role::Hybrid) {
            return;
        }
        let Some(best) = inbox
            .into_iter()
            .filter(|c| Some(c.portion) == self.honored)
            .min_by(|a, b| a.send_time.total_cmp(&b.send_time).then(a.sender.cmp(&b.sender)))
        else {
            return;
        };
        let purpose = if self.role == Role::Hybrid {
            self.leave_hexagon(env);
            MovePurpose::MergeResnap
        } else if matches!(best.kind, MessageKind::SnapCommand { .. }) {
            MovePurpose::Snap
        } else {
            MovePurpose::Push
        };
        self.execute_command(env, best.sender, best.send_time, best.portion, &best.kind, purpose);
        if !self.sent {
            self.send(MessageKind::StateAdvertisement { departing: false }, Some(best.sender));
        }
    }

    fn execute_command(
        &mut self,
        env: &Env,
        commander: SensorId,
        issued_at: f64,
        portion: GridSpec,
        kind: &MessageKind,
        purpose: MovePurpose,
    ) {
        let before = self.role;
        match kind {
            MessageKind::SnapCommand { target } => {
                self.task = Some(Task { commander, portion: portion.key(), target: *target, snap: true, issued_at });
                self.task_grid = Some(portion);
                if self.role == Role::Slave {
                    self.master = None;
                    self.hex = None;
                } else {
                    self.role = Role::Free;
                    self.honored = Some(portion);
                }
                let dest = portion.center(*target);
                self.out.push(Output::Move { dest, purpose: if before == Role::Slave { MovePurpose::Snap } else { purpose } });
            }
            MessageKind::PushCommand { target, new_master, .. } => {
                self.task = Some(Task { commander, portion: portion.key(), target: *target, snap: false, issued_at });
                self.role = Role::Slave;
                self.portion = Some(portion);
                self.honored = None;
                self.master = Some(*new_master);
                self.hex = Some(*target);
                let dest = rest_point(&portion, *target, self.id, env.params.rest_offset);
                self.out.push(Output::Move { dest, purpose });
            }
            _ => return,
        }
        if before != self.role {
            self.out.push(Output::Note(Note::RoleChange { from: before, to: self.role }));
        }
    }

    fn on_offer(&mut self, env: &Env, msg: &ProtocolMessage, mover: SensorId, count: u32, order: u64) {
        let accepted = self.role == Role::Snapped
            && !self.discovering
            && msg.portion == self.portion
            && moving_condition(Density::new(count, order), Density::new(self.adjusted_count(), self.order));
        if accepted {
            let pre = (self.adjusted_count(), self.order);
            let dist = msg.summary.position.distance(self.center()) + env.params.side;
            let deadline = env.now + env.params.travel(dist) + 30.0 * env.params.latency;
            self.incoming.insert(mover, deadline);
            self.out.push(Output::Note(Note::TransferAccepted { from: msg.sender, mover, from_claim: (count, order), to_pre: pre }));
            self.schedule_check(env, deadline);
        }
        self.send(MessageKind::PushReply { mover, accepted }, Some(msg.sender));
    }

    fn on_reply(&mut self, env: &Env, mover: SensorId, accepted: bool) {
        let Some(offer) = self.offer else { return };
        if offer.mover != mover {
            return;
        }
        self.offer = None;
        if accepted {
            self.dispatch(env, offer);
        }
        self.settle_after_offer(env);
        if self.role == Role::Snapped {
            self.schedule_decide(env);
        }
    }

    fn dispatch(&mut self, env: &Env, offer: Offer) {
        let grid = self.portion.expect("governor has a portion");
        let mover = offer.mover;
        if !self.slaves.contains(&mover) {
            self.out.push(Output::Note(Note::Anomaly(format!("sensor {} lost mover {mover} before dispatch", self.id))));
            return;
        }
        let via = vec![self.hex.unwrap_or_default(), offer.dest_hex];
        if self.role == Role::Snapped && self.exchange_worthwhile(env, &grid, offer) {
            self.exchange_roles(env, grid, offer);
            return;
        }
        self.slaves.remove(&mover);
        self.send(MessageKind::PushCommand { target: offer.dest_hex, new_master: offer.to, via }, Some(mover));
    }

    fn exchange_worthwhile(&self, env: &Env, grid: &GridSpec, offer: Offer) -> bool {
        let p = env.params;
        if !p.role_exchange
            || !self.pending.is_empty()
            || !self.incoming.is_empty()
            || self.trigger.is_some()
            || !self.leases.is_empty()
            || self.is_moving()
        {
            return false;
        }
        let Some(known) = self.neighbors.get(&offer.mover) else { return false };
        let slave_pos = rest_point(grid, self.hex.unwrap_or_default(), offer.mover, p.rest_offset);
        let remaining = slave_pos.distance(rest_point(grid, offer.dest_hex, offer.mover, p.rest_offset));
        let costs = SwapCosts {
            detour: slave_pos.distance(self.center()),
            governor_path: self.center().distance(rest_point(grid, offer.dest_hex, self.id, p.rest_offset)),
            model: p.energy,
        };
        role_exchange_check(&known.summary.energy, &self.energy, remaining, &costs)
    }

    fn exchange_roles(&mut self, env: &Env, grid: GridSpec, offer: Offer) {
        let mover = offer.mover;
        let mover_order = self.neighbors.get(&mover).map_or(self.base_order, |k| k.summary.order);
        let hex = self.hex.expect("governor has a hex");
        let slaves: Vec<SensorId> = self.slaves.iter().copied().filter(|&s| s != mover).collect();
        let neighbors = self.neighbors.iter().map(|(id, k)| (*id, k.summary.clone())).collect();
        let profile = Profile {
            portion: grid,
            hex,
            slaves,
            incoming: Vec::new(),
            base_order: self.base_order,
            snap_time: self.snap_time,
            neighbors,
            replaces_mover: Some((self.id, offer.to)),
        };
        let old_order = self.order;
        self.role = Role::Slave;
        self.master = Some(offer.to);
        self.hex = Some(offer.dest_hex);
        self.base_order = mover_order;
        self.order = mover_order;
        self.slaves.clear();
        self.neighbors.clear();
        self.foreign_pending.clear();
        self.claimed.clear();
        self.newer_contacts.clear();
        self.relayed.clear();
        self.stalled = false;
        self.task = Some(Task { commander: self.id, portion: grid.key(), target: offer.dest_hex, snap: false, issued_at: env.now });
        self.out.push(Output::Note(Note::RoleChange { from: Role::Snapped, to: Role::Slave }));
        self.out.push(Output::Note(Note::OrderChange { from: old_order, to: mover_order }));
        self.send(MessageKind::ProfilePacket(Box::new(profile)), Some(mover));
        let dest = rest_point(&grid, offer.dest_hex, self.id, env.params.rest_offset);
        self.out.push(Output::Move { dest, purpose: MovePurpose::RoleExchange });
    }

    fn on_profile(&mut self, env: &Env, msg: &ProtocolMessage, profile: &Profile) {
        if msg.to == Some(self.id) {
            self.take_over(env, msg.sender, profile);
            return;
        }
        if self.role == Role::Slave && self.master == Some(msg.sender) && profile.slaves.contains(&self.id) {
            self.master = msg.to;
        }
        if self.role == Role::Snapped {
            if let (Some((new_mover, dest)), Some(old)) = (profile.replaces_mover, msg.to) {
                if dest == self.id {
                    if let Some(deadline) = self.incoming.remove(&old) {
                        self.incoming.insert(new_mover, deadline);
                    }
                }
            }
        }
    }

    fn take_over(&mut self, _env: &Env, from: SensorId, profile: &Profile) {
        let accept = match self.role {
            Role::Slave => self.master == Some(from),
            _ => false,
        };
        if !accept {
            self.out.push(Output::Note(Note::Anomaly(format!("sensor {} refused profile from {from}", self.id))));
            return;
        }
        let before = self.role;
        let old_order = self.order;
        self.role = Role::Snapped;
        self.portion = Some(profile.portion);
        self.honored = None;
        self.hex = Some(profile.hex);
        self.master = None;
        self.task = None;
        self.task_grid = None;
        self.awaiting_ack = false;
        self.snap_time = profile.snap_time;
        self.base_order = profile.base_order;
        self.slaves = profile.slaves.iter().copied().collect();
        self.incoming = profile.incoming.iter().copied().collect();
        self.neighbors = profile
            .neighbors
            .iter()
            .filter(|(id, _)| *id != self.id)
            .map(|(id, s)| (*id, Known { summary: s.clone() }))
            .collect();
        self.leases.clear();
        self.trigger = None;
        self.stalled = false;
        self.recompute_order();
        self.out.push(Output::Note(Note::RoleChange { from: before, to: Role::Snapped }));
        if old_order != self.order {
            self.out.push(Output::Note(Note::OrderChange { from: old_order, to: self.order }));
        }
        let center = profile.portion.center(profile.hex);
        self.out.push(Output::Move { dest: center, purpose: MovePurpose::RoleExchange });
        self.send(MessageKind::StateAdvertisement { departing: false }, None);
    }

    // ----- role transitions -----------------------------------------------------

    fn snap_in(&mut self, env: &Env, grid: GridSpec, hex: HexCoord) {
        let before = self.role;
        self.role = Role::Snapped;
        self.portion = Some(grid);
        self.honored = None;
        self.hex = Some(hex);
        self.master = None;
        self.snap_time = env.now;
        self.slaves.clear();
        self.incoming.clear();
        self.neighbors.clear();
        self.pending.clear();
        self.foreign_pending.clear();
        self.claimed.clear();
        self.leases.clear();
        self.relayed.clear();
        self.newer_contacts.clear();
        self.trigger = None;
        self.stalled = false;
        self.order = self.base_order;
        if before != Role::Snapped {
            self.out.push(Output::Note(Note::RoleChange { from: before, to: Role::Snapped }));
        }
        self.start_discovery(env);
    }

    fn start_discovery(&mut self, env: &Env) {
        self.discovering = true;
        self.discovery_epoch += 1;
        self.send(MessageKind::NeighborDiscoveryRequest, None);
        let at = env.now + 2.5 * env.params.latency;
        self.out.push(Output::Timer { at, timer: Timer::DiscoveryDone { epoch: self.discovery_epoch } });
    }

    /// A later arrival on an already governed hexagon steps down to slave.
    fn resolve_duplicate(&mut self, env: &Env) -> bool {
        let (Some(hex), Some(grid)) = (self.hex, self.portion) else { return false };
        let key = grid.key();
        let mine = (self.snap_time, self.id);
        let holder = self
            .neighbors
            .iter()
            .filter(|(_, k)| k.summary.role.governs() && k.summary.portion == Some(key) && k.summary.hex == Some(hex))
            .map(|(id, k)| (k.summary.snap_time, *id))
            .filter(|other| other.0.total_cmp(&mine.0).then(other.1.cmp(&mine.1)).is_lt())
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let Some((_, holder)) = holder else { return false };
        if !self.slaves.is_empty() || !self.incoming.is_empty() || !self.pending.is_empty() || self.offer.is_some() {
            return false;
        }
        self.role = Role::Slave;
        self.master = Some(holder);
        self.neighbors.clear();
        self.out.push(Output::Note(Note::RoleChange { from: Role::Snapped, to: Role::Slave }));
        let dest = rest_point(&grid, hex, self.id, env.params.rest_offset);
        self.task = Some(Task { commander: holder, portion: key, target: hex, snap: false, issued_at: env.now });
        self.out.push(Output::Move { dest, purpose: MovePurpose::Push });
        true
    }

    fn release_to_free(&mut self, env: &Env, honored: Option<GridSpec>) {
        let before = self.role;
        if self.is_moving() {
            self.out.push(Output::Halt);
        }
        self.role = Role::Free;
        self.honored = honored;
        self.portion = None;
        self.master = None;
        self.hex = None;
        self.task = None;
        self.task_grid = None;
        self.awaiting_ack = false;
        self.out.push(Output::Note(Note::RoleChange { from: before, to: Role::Free }));
        let _ = env;
    }

    fn become_hybrid(&mut self, env: &Env, honored: Option<GridSpec>) {
        self.role = Role::Hybrid;
        self.honored = honored;
        if self.trigger.take().is_some() {
            self.publish_order(env);
        }
        self.out.push(Output::Note(Note::RoleChange { from: Role::Snapped, to: Role::Hybrid }));
    }

    /// A hybrid sensor called away by the older portion hands its hexagon to
    /// the slave nearest the center, or announces its departure.
    fn leave_hexagon(&mut self, env: &Env) {
        let (Some(grid), Some(hex)) = (self.portion, self.hex) else { return };
        let center = grid.center(hex);
        let substitute = self
            .slaves
            .iter()
            .copied()
            .min_by(|a, b| {
                let da = rest_point(&grid, hex, *a, env.params.rest_offset).distance_sq(center);
                let db = rest_point(&grid, hex, *b, env.params.rest_offset).distance_sq(center);
                da.total_cmp(&db).then(a.cmp(b))
            });
        let mut slaves = std::mem::take(&mut self.slaves);
        let incoming = std::mem::take(&mut self.incoming);
        self.pending.clear();
        self.offer = None;
        self.trigger = None;
        self.leases.clear();
        self.neighbors.clear();
        match substitute {
            Some(sub) => {
                slaves.remove(&sub);
                let profile = Profile {
                    portion: grid,
                    hex,
                    slaves: slaves.into_iter().collect(),
                    incoming: incoming.into_iter().collect(),
                    base_order: self.base_order,
                    snap_time: self.snap_time,
                    neighbors: Vec::new(),
                    replaces_mover: None,
                };
                self.send(MessageKind::ProfilePacket(Box::new(profile)), Some(sub));
            }
            None => self.send(MessageKind::StateAdvertisement { departing: true }, None),
        }
        self.portion = None;
        self.hex = None;
    }

    // ----- decisions ------------------------------------------------------------

    fn center(&self) -> Point {
        self.center_of(self.hex.unwrap_or_default())
    }

    fn center_of(&self, hex: HexCoord) -> Point {
        self.portion.map_or(self.position, |g| g.center(hex))
    }

    fn schedule_decide(&mut self, env: &Env) {
        if self.role == Role::Snapped && !self.decide_scheduled {
            self.decide_scheduled = true;
            let at = env.now + 2.0 * env.params.latency;
            self.out.push(Output::Timer { at, timer: Timer::Decide });
        }
    }

    fn schedule_check(&mut self, env: &Env, at: f64) {
        let at = at.max(env.now);
        if self.check_at.is_none_or(|t| at < t) {
            self.check_at = Some(at);
            self.out.push(Output::Timer { at, timer: Timer::PendingCheck });
        }
    }

    fn schedule_lease_check(&mut self, _env: &Env) {
        if let Some(next) = self.leases.values().map(|l| l.expiry).min_by(f64::total_cmp) {
            if self.lease_check_at.is_none_or(|t| next < t) {
                self.lease_check_at = Some(next);
                self.out.push(Output::Timer { at: next, timer: Timer::LeaseExpiry });
            }
        }
    }

    fn expire(&mut self, env: &Env) {
        let now = env.now;
        self.pending.retain(|_, p| p.deadline > now);
        self.foreign_pending.retain(|_, t| *t > now);
        self.claimed.retain(|_, t| *t > now);
        let late: Vec<SensorId> = self.incoming.iter().filter(|(_, d)| **d <= now).map(|(id, _)| *id).collect();
        for id in late {
            self.drop_incoming(id);
        }
    }

    fn remove_slave(&mut self, id: SensorId) {
        if self.offer.is_some() {
            self.deferred_slaves.push(id);
        } else {
            self.slaves.remove(&id);
        }
    }

    fn drop_incoming(&mut self, id: SensorId) {
        if self.offer.is_some() {
            self.deferred_incoming.push(id);
        } else {
            self.incoming.remove(&id);
        }
    }

    fn settle_after_offer(&mut self, env: &Env) {
        for id in std::mem::take(&mut self.deferred_slaves) {
            self.slaves.remove(&id);
        }
        for id in std::mem::take(&mut self.deferred_incoming) {
            self.incoming.remove(&id);
        }
        self.publish_order(env);
    }

    fn vacant_positions(&self, env: &Env) -> Vec<(HexCoord, Point)> {
        let (Some(grid), Some(hex)) = (self.portion, self.hex) else { return Vec::new() };
        let key = grid.key();
        let occupied: BTreeSet<HexCoord> = self
            .neighbors
            .values()
            .filter(|k| k.summary.role.governs() && k.summary.portion == Some(key))
            .filter_map(|k| k.summary.hex)
            .collect();
        hex.adjacent()
            .into_iter()
            .filter(|h| {
                !occupied.contains(h)
                    && !self.pending.contains_key(h)
                    && !self.foreign_pending.contains_key(h)
                    && grid.hex_meets_aoi(*h, env.aoi)
            })
            .map(|h| (h, grid.center(h)))
            .collect()
    }

    fn free_candidates(&self) -> Vec<(SensorId, Point)> {
        let key = self.portion.map(|g| g.key());
        let busy: BTreeSet<SensorId> = self.pending.values().map(|p| p.sensor).collect();
        self.neighbors
            .iter()
            .filter(|(id, k)| {
                let s = &k.summary;
                s.task.is_none()
                    && !s.moving
                    && ((s.role == Role::Free && (s.honored == key || s.honored.is_none()))
                        || (s.role == Role::Hybrid && s.honored == key))
                    && !busy.contains(id)
                    && !self.incoming.contains_key(id)
                    && !self.claimed.contains_key(id)
            })
            .map(|(id, k)| (*id, k.summary.position))
            .collect()
    }

    fn radio_neighbors(&self, env: &Env) -> Vec<NeighborView> {
        let (Some(grid), Some(_)) = (self.portion, self.hex) else { return Vec::new() };
        let key = grid.key();
        let me = self.center();
        let range = env.params.radio.transmission + 1e-9;
        self.neighbors
            .iter()
            .filter(|(_, k)| k.summary.role == Role::Snapped && k.summary.portion == Some(key))
            .filter_map(|(id, k)| {
                let hex = k.summary.hex?;
                let center = grid.center(hex);
                (center.distance(me) <= range && Some(hex) != self.hex).then_some(NeighborView {
                    id: *id,
                    hex,
                    center,
                    density: Density::new(k.summary.slave_count, k.summary.order),
                })
            })
            .collect()
    }

    fn decide(&mut self, env: &Env) {
        if self.role != Role::Snapped || self.is_moving() || self.offer.is_some() || self.discovering {
            return;
        }
        self.expire(env);
        let grid = self.portion.expect("snapped sensor has a portion");
        let hex = self.hex.expect("snapped sensor has a hex");
        let p = env.params;

        let vacant = self.vacant_positions(env);
        let free = self.free_candidates();
        let mut candidates: Vec<(SensorId, Point)> = free.clone();
        candidates.extend(self.slaves.iter().map(|&s| (s, rest_point(&grid, hex, s, p.rest_offset))));
        let assignments = select_snap_assignments(&vacant, &candidates);
        let mut assigned: BTreeSet<SensorId> = BTreeSet::new();
        for &(sensor, target) in &assignments {
            assigned.insert(sensor);
            let from = candidates.iter().find(|c| c.0 == sensor).map_or(self.center(), |c| c.1);
            let travel = p.travel(from.distance(grid.center(target)));
            let deadline = if self.slaves.remove(&sensor) {
                env.now + travel + 20.0 * p.latency
            } else {
                env.now + 6.0 * p.latency
            };
            self.pending.insert(target, Pending { sensor, deadline });
            self.send(MessageKind::SnapCommand { target }, Some(sensor));
            self.schedule_check(env, deadline);
        }

        // Adopt free sensors sitting in our hexagon, or stranded where no
        // hexagon of the tiling is needed.
        let me = self.center();
        for &(sensor, pos) in &free {
            if assigned.contains(&sensor) {
                continue;
            }
            let cell = grid.locate(pos);
            let adopt = cell == hex || (!grid.hex_meets_aoi(cell, env.aoi) && pos.distance(me) <= p.radio.transmission);
            if adopt {
                let deadline = env.now + 6.0 * p.latency;
                self.incoming.insert(sensor, deadline);
                self.send(MessageKind::PushCommand { target: hex, new_master: self.id, via: vec![hex] }, Some(sensor));
                self.schedule_check(env, deadline);
            }
        }

        let vacant_left = vacant.len() > assignments.len();
        if !vacant_left && !self.slaves.is_empty() {
            let slaves: Vec<(SensorId, Point)> =
                self.slaves.iter().map(|&s| (s, rest_point(&grid, hex, s, p.rest_offset))).collect();
            let me_density = Density::new(self.adjusted_count(), self.order);
            let neighbors = self.radio_neighbors(env);
            if let Some(choice) = select_push(me_density, self.center(), &slaves, &neighbors) {
                self.offer_epoch += 1;
                let offer = Offer { to: choice.dest, mover: choice.slave, dest_hex: choice.dest_hex, epoch: self.offer_epoch };
                self.send(
                    MessageKind::PushOffer { mover: choice.slave, count: me_density.slaves, order: me_density.order },
                    Some(choice.dest),
                );
                self.offer = Some(offer);
                let at = env.now + 4.0 * p.latency;
                self.out.push(Output::Timer { at, timer: Timer::OfferTimeout { epoch: offer.epoch } });
            }
        }

        // Pull: a hole nobody is about to fill.
        let hole = vacant_left && self.slaves.is_empty() && self.incoming.is_empty() && free.len() <= assignments.len();
        match (self.trigger.is_some(), hole) {
            (true, false) => {
                if self.incoming.is_empty() || !self.slaves.is_empty() || !vacant_left {
                    self.trigger = None;
                    self.publish_order(env);
                }
            }
            (false, true) if !self.stalled => {
                let me_density = Density::new(0, self.order);
                let neighbors = self.radio_neighbors(env);
                if neighbors.is_empty() {
                    // Nobody would hear an extension.
                    self.stalled = true;
                } else if !neighbors.iter().any(|n| moving_condition(n.density, me_density)) {
                    self.start_trigger(env);
                }
            }
            _ => {}
        }
    }

    // ----- pull trigger ---------------------------------------------------------

    fn start_trigger(&mut self, env: &Env) {
        self.trigger_round += 1;
        self.trigger = Some(Trigger { round: self.trigger_round });
        self.publish_order(env);
        // A hole inside a live extension region resumes at that region's
        // radius: the slaves closer than that were already being drawn in.
        let p = env.params;
        let ring = self.warm_ring(env.now).clamp(1, p.max_ring);
        if ring > 1 {
            self.extend(env, ring);
        }
        // Ring k is due T_pull * k after the start, so rings widen once per T_pull.
        let at = env.now + p.pull_base;
        self.out.push(Output::Timer { at, timer: Timer::TriggerTimeout { round: self.trigger_round, ring } });
    }

    fn trigger_timeout(&mut self, env: &Env, round: u32, ring: u32) {
        let Some(trigger) = self.trigger else { return };
        if trigger.round != round || self.role != Role::Snapped {
            return;
        }
        let p = env.params;
        if !self.incoming.is_empty() {
            let at = env.now + p.pull_base;
            self.out.push(Output::Timer { at, timer: Timer::TriggerTimeout { round, ring } });
            return;
        }
        if self.vacant_positions(env).is_empty() || !self.slaves.is_empty() {
            self.trigger = None;
            self.publish_order(env);
            self.schedule_decide(env);
            return;
        }
        // The notification already reached ring 1; each timeout widens by at
        // least one.
        let next = (ring + 1).max(self.warm_ring(env.now));
        if next > p.max_ring {
            let hole = self.hex.unwrap_or_default();
            self.out.push(Output::Note(Note::TriggerAbandoned { hole, ring }));
            self.trigger = None;
            self.stalled = true;
            self.publish_order(env);
            return;
        }
        self.extend(env, next);
        let at = env.now + p.pull_base;
        self.out.push(Output::Timer { at, timer: Timer::TriggerTimeout { round, ring: next } });
    }

    fn extend(&mut self, env: &Env, ring: u32) {
        let hole = self.hex.expect("snapped sensor has a hex");
        let round = self.trigger_round;
        self.send(MessageKind::TriggerExtension { origin: self.id, hole, hop: 0, ring, round }, None);
        self.reach = Some((ring, env.now + LEASE_PERIODS * env.params.pull_base));
    }

    /// Largest extension radius still live around this sensor.
    fn warm_ring(&self, now: f64) -> u32 {
        let own = self.reach.filter(|&(_, expiry)| expiry > now).map(|(ring, _)| ring);
        let leased = self.leases.values().filter(|l| l.expiry > now).map(|l| l.ring).max();
        own.max(leased).unwrap_or(1)
    }

    fn on_extension(&mut self, env: &Env, origin: SensorId, hole: HexCoord, ring: u32, round: u32) {
        let Some(hex) = self.hex else { return };
        if origin == self.id {
            return;
        }
        let hop = hex.hex_distance(hole);
        if hop == 0 || hop > ring {
            return;
        }
        let expiry = env.now + LEASE_PERIODS * env.params.pull_base;
        let lease = self.leases.entry(origin).or_insert(Lease { hop, ring, expiry });
        lease.hop = hop;
        lease.ring = lease.ring.max(ring);
        lease.expiry = lease.expiry.max(expiry);
        if hop < ring && self.relayed.insert((origin, round, ring)) {
            self.send(MessageKind::TriggerExtension { origin, hole, hop, ring, round }, None);
        }
        self.schedule_lease_check(env);
        self.publish_order(env);
    }

    fn recompute_order(&mut self) {
        self.order = if self.trigger.is_some() {
            0
        } else {
            self.leases.values().map(|l| l.hop as u64).min().unwrap_or(self.base_order)
        };
    }

    /// Make the current order value visible, unless an offer is waiting on
    /// an answer computed with the old one.
    fn publish_order(&mut self, _env: &Env) {
        if self.offer.is_some() {
            return;
        }
        let old = self.order;
        self.recompute_order();
        if old != self.order {
            self.out.push(Output::Note(Note::OrderChange { from: old, to: self.order }));
            if self.role == Role::Snapped {
                self.send(MessageKind::TriggerNotification { order: self.order }, None);
            }
        }
    }

    // ----- outputs --------------------------------------------------------------

    fn send(&mut self, kind: MessageKind, to: Option<SensorId>) {
        self.sent = true;
        self.out.push(Output::Send { kind, to });
    }

    fn advert_key(&self) -> AdvertKey {
        AdvertKey {
            role: self.role,
            portion: self.portion.map(|g| g.key()),
            honored: if self.role == Role::Hybrid { self.honored.map(|g| g.key()) } else { None },
            hex: self.hex,
            master: self.master,
            count: self.adjusted_count(),
            order: self.order,
            task: self.task.is_some(),
        }
    }

    /// Advertise any externally visible change that no outgoing message of
    /// this handler already carried, then hand the outputs to the engine.
    fn finish(&mut self, _env: &Env) -> Vec<Output> {
        let key = self.advert_key();
        if self.last_advert.as_ref() != Some(&key) {
            let silent_free = self.role == Role::Free
                && self.task.is_none()
                && self.last_advert.as_ref().is_none_or(|k| k.role == Role::Free && !k.task);
            if !self.sent && !silent_free {
                self.out.push(Output::Send { kind: MessageKind::StateAdvertisement { departing: false }, to: None });
            }
            self.last_advert = Some(key);
        }
        self.sent = false;
        std::mem::take(&mut self.out)
    }
}

/// Where a slave of hexagon `hex` idles: a small offset from the center,
/// spread by id so slaves never coincide.
pub fn rest_point(grid: &GridSpec, hex: HexCoord, id: SensorId, offset: f64) -> Point {
    let angle = (id as f64 * GOLDEN_ANGLE).rem_euclid(std::f64::consts::TAU);
    grid.center(hex) + Point::polar(offset * grid.side, angle)
}
