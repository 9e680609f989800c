//! Deterministic discrete-event execution of one scenario.
//!
//! Random draws all come from one ChaCha8 stream seeded by the scenario, in
//! this order: initial placement, then per sensor in id order its start
//! instant, grid orientation and order value.

mod queue;
pub mod trace;

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::energy::EnergyModel;
use crate::geometry::Bounds;
use crate::protocol::{
    Env, Motion, MovePurpose, Note, Output, ProtocolMessage, ProtocolParams, Sensor, SensorId, SharedMessage, Timer,
};
use crate::scenario::{draw_initial, Resolved, Scenario, ScenarioError};
use crate::{Aoi, Point};

pub use queue::EventQueue;
pub use trace::{FinalSensor, Record, SensorSnapshot, StateEntry, Trace, TraceError, TRACE_FORMAT, TRACE_VERSION};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

#[derive(Debug)]
enum Event {
    Timer { sensor: SensorId, timer: Timer },
    Deliver { msg: SharedMessage, receivers: Vec<SensorId> },
    Arrive { sensor: SensorId, epoch: u32 },
    Snapshot,
}

/// Potential contribution of one governor.
pub fn potential_term(slaves: u32, order: u64) -> (u128, u128) {
    let s = slaves as u128 + 1;
    (s * s, s * order as u128)
}

struct Engine {
    aoi: Aoi,
    params: ProtocolParams,
    bounds: Bounds<f64>,
    margin: f64,
    sensors: Vec<Sensor>,
    queue: EventQueue<Event>,
    active_events: usize,
    records: Vec<Record>,
    now: f64,
    range_sq: f64,
}

/// Executes `scenario` until no protocol event is left or the hard limit
/// passes.
pub fn run(scenario: &Scenario) -> Result<Trace, SimError> {
    let resolved = scenario.resolve()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let initial = draw_initial(&scenario.deployment, &resolved.aoi, scenario.sensors, &scenario.generator, &mut rng)?;
    let mut engine = Engine::new(scenario, &resolved, &initial, &mut rng);
    engine.records.push(Record::Header {
        format: TRACE_FORMAT.to_string(),
        version: trace::TRACE_VERSION,
        scenario: Box::new(scenario.clone()),
        side: resolved.side,
        initial,
    });
    engine.execute(resolved.hard_limit, scenario.timing.snapshot_interval);
    Ok(Trace { records: engine.records })
}

impl Engine {
    fn new(scenario: &Scenario, resolved: &Resolved, initial: &[Point], rng: &mut ChaCha8Rng) -> Self {
        let params = ProtocolParams {
            radio: resolved.radio,
            speed: scenario.speed,
            side: resolved.side,
            latency: scenario.timing.latency,
            pull_base: resolved.pull_base,
            max_ring: resolved.max_ring,
            role_exchange: scenario.protocol.role_exchange,
            energy: EnergyModel::default(),
            rest_offset: scenario.protocol.rest_offset,
        };
        let mut queue = EventQueue::default();
        let mut sensors = Vec::with_capacity(initial.len());
        for (i, &p) in initial.iter().enumerate() {
            let start = rng.gen_range(0.0..scenario.timing.start_window.max(f64::MIN_POSITIVE));
            let orientation = rng.gen_range(0.0..std::f64::consts::FRAC_PI_3);
            let order = rng.gen::<u32>() as u64 + 1;
            let id = i as SensorId;
            sensors.push(Sensor::new(id, p, start, orientation, order));
            queue.push(start, Event::Timer { sensor: id, timer: Timer::StartPortion });
        }
        let active_events = queue.len();
        let bounds = resolved.aoi.bounds();
        let tx = resolved.radio.transmission;
        Engine {
            margin: 2.0 * 3f64.sqrt() * resolved.side,
            aoi: resolved.aoi.clone(),
            params,
            bounds,
            sensors,
            queue,
            active_events,
            records: Vec::new(),
            now: 0.0,
            range_sq: tx * tx,
        }
    }

    fn push(&mut self, at: f64, event: Event) {
        if !matches!(event, Event::Snapshot) {
            self.active_events += 1;
        }
        self.queue.push(at, event);
    }

    fn execute(&mut self, hard_limit: f64, snapshot_interval: f64) {
        self.queue.push(0.0, Event::Snapshot);
        let mut last_snapshot = f64::NEG_INFINITY;
        let mut terminated = true;
        while let Some((t, event)) = self.queue.pop() {
            if t > hard_limit {
                terminated = false;
                self.now = hard_limit;
                break;
            }
            self.now = t;
            match event {
                Event::Snapshot => {
                    self.snapshot();
                    last_snapshot = t;
                    if self.active_events > 0 {
                        self.queue.push(t + snapshot_interval, Event::Snapshot);
                    }
                    continue;
                }
                Event::Timer { sensor, timer } => {
                    self.active_events -= 1;
                    let env = Env { now: t, aoi: &self.aoi, params: &self.params };
                    let out = self.sensors[sensor as usize].on_timer(&env, timer);
                    self.apply(sensor, out);
                }
                Event::Deliver { msg, receivers } => {
                    self.active_events -= 1;
                    for r in receivers {
                        let env = Env { now: t, aoi: &self.aoi, params: &self.params };
                        let out = self.sensors[r as usize].on_message(&env, &msg);
                        self.apply(r, out);
                    }
                }
                Event::Arrive { sensor, epoch } => {
                    self.active_events -= 1;
                    self.arrive(sensor, epoch);
                }
            }
            if self.active_events == 0 {
                break;
            }
        }
        if last_snapshot < self.now {
            self.snapshot();
        }
        let sensors = self.sensors.iter().map(|s| self.final_sensor(s)).collect();
        self.records.push(Record::Final { t: self.now, terminated, sensors });
    }

    fn snapshot(&mut self) {
        let now = self.now;
        let sensors = self
            .sensors
            .iter()
            .map(|s| SensorSnapshot { id: s.id, role: s.role, position: s.position_at(now), hex: s.hex })
            .collect();
        self.records.push(Record::Snapshot { t: now, sensors });
    }

    fn final_sensor(&self, s: &Sensor) -> FinalSensor {
        FinalSensor {
            id: s.id,
            role: s.role,
            position: s.position_at(self.now),
            portion: s.portion,
            hex: s.hex,
            master: s.master,
            slaves: s.slaves.iter().copied().collect(),
            incoming: s.incoming.keys().copied().collect(),
            order: s.order,
            base_order: s.base_order,
            moving: s.is_moving(),
            energy: s.energy,
        }
    }

    /// Movement and bookkeeping first so that messages sent by the same
    /// handler describe the sender after the change.
    fn apply(&mut self, sensor: SensorId, outputs: Vec<Output>) {
        let mut sends = Vec::new();
        for out in outputs {
            match out {
                Output::Send { kind, to } => sends.push((kind, to)),
                Output::Timer { at, timer } => self.push(at.max(self.now), Event::Timer { sensor, timer }),
                Output::Move { dest, purpose } => self.start_move(sensor, dest, purpose),
                Output::Halt => self.halt(sensor),
                Output::Note(note) => self.note(sensor, note),
            }
        }
        for (kind, to) in sends {
            self.send(sensor, kind, to);
        }
    }

    fn send(&mut self, sender: SensorId, kind: crate::protocol::MessageKind, to: Option<SensorId>) {
        let now = self.now;
        let s = &mut self.sensors[sender as usize];
        s.energy.tx_count += 1;
        let origin = s.position_at(now);
        let msg = Rc::new(ProtocolMessage {
            sender,
            portion: s.header_portion(),
            send_time: now,
            to,
            summary: s.summary(now),
            kind,
        });
        let mut receivers = Vec::new();
        for other in self.sensors.iter_mut() {
            if other.id != sender && other.position_at(now).distance_sq(origin) <= self.range_sq {
                other.energy.rx_count += 1;
                receivers.push(other.id);
            }
        }
        self.records.push(Record::Message {
            t: now,
            sender,
            kind: msg.kind.name().to_string(),
            to,
            deliveries: receivers.len() as u32,
        });
        self.push(now + self.params.latency, Event::Deliver { msg, receivers });
    }

    fn stop_leg(&mut self, sensor: SensorId) {
        let now = self.now;
        let s = &mut self.sensors[sensor as usize];
        if let Some(m) = s.motion.take() {
            let at = m.position_at(now);
            let meters = m.from.distance(at);
            s.energy.meters_moved += meters;
            if m.from != m.to {
                s.energy.start_brake_count += 1;
            }
            s.position = at;
            s.move_epoch += 1;
            self.records.push(Record::MoveDone { t: now, sensor, at, meters, completed: false });
        }
    }

    fn halt(&mut self, sensor: SensorId) {
        self.stop_leg(sensor);
    }

    fn start_move(&mut self, sensor: SensorId, dest: Point, purpose: MovePurpose) {
        self.stop_leg(sensor);
        let now = self.now;
        let from = self.sensors[sensor as usize].position;
        let dest = if self.bounds.contains_with_margin(dest, self.margin) {
            dest
        } else {
            self.records.push(Record::Anomaly {
                t: now,
                sensor,
                message: format!("move to ({:.3}, {:.3}) outside the area bounds rejected", dest.x, dest.y),
            });
            from
        };
        let s = &mut self.sensors[sensor as usize];
        let dist = from.distance(dest);
        if dist > 0.0 {
            s.energy.start_brake_count += 1;
        }
        s.move_epoch += 1;
        let arrive = now + dist / self.params.speed;
        s.motion = Some(Motion { from, to: dest, depart: now, arrive, purpose, epoch: s.move_epoch });
        let epoch = s.move_epoch;
        self.records.push(Record::MoveIssued { t: now, sensor, from, to: dest, purpose });
        self.push(arrive, Event::Arrive { sensor, epoch });
    }

    fn arrive(&mut self, sensor: SensorId, epoch: u32) {
        let now = self.now;
        let s = &mut self.sensors[sensor as usize];
        let Some(m) = s.motion.filter(|m| m.epoch == epoch && s.move_epoch == epoch) else { return };
        s.motion = None;
        let meters = m.from.distance(m.to);
        s.energy.meters_moved += meters;
        if meters > 0.0 {
            s.energy.start_brake_count += 1;
        }
        s.position = m.to;
        self.records.push(Record::MoveDone { t: now, sensor, at: m.to, meters, completed: true });
        let env = Env { now, aoi: &self.aoi, params: &self.params };
        let out = self.sensors[sensor as usize].on_arrival(&env, m.purpose);
        self.apply(sensor, out);
    }

    fn note(&mut self, sensor: SensorId, note: Note) {
        let t = self.now;
        let record = match note {
            Note::Starter { portion } => Record::Starter { t, sensor, portion },
            Note::RoleChange { from, to } => Record::RoleChange { t, sensor, from, to },
            Note::OrderChange { from, to } => Record::OrderChange { t, sensor, from, to },
            Note::TriggerAbandoned { hole, ring } => Record::TriggerAbandoned { t, sensor, hole, ring },
            Note::Anomaly(message) => Record::Anomaly { t, sensor, message },
            Note::TransferAccepted { from, mover, from_claim, to_pre } => self.transfer(sensor, from, mover, from_claim, to_pre),
        };
        self.records.push(record);
    }

    /// Ground-truth network state around an accepted push. `to_pre` is the
    /// receiver's state before it reserved room for the mover.
    fn transfer(&self, to: SensorId, from: SensorId, mover: SensorId, claim: (u32, u64), to_pre: (u32, u64)) -> Record {
        let t = self.now;
        let receiver = &self.sensors[to as usize];
        let Some(portion) = receiver.portion else {
            return Record::Anomaly { t, sensor: to, message: "transfer accepted outside any portion".into() };
        };
        let key = portion.key();
        let source = &self.sensors[from as usize];
        let mut f_pre = potential_term(to_pre.0, to_pre.1);
        for g in &self.sensors {
            if g.id != to && g.role.governs() && g.portion.map(|p| p.key()) == Some(key) {
                let (a, b) = potential_term(g.adjusted_count(), g.order);
                f_pre.0 += a;
                f_pre.1 += b;
            }
        }
        let source_pre = if source.role.governs() && source.portion.map(|p| p.key()) == Some(key) {
            StateEntry { sensor: from, slaves: source.adjusted_count(), order: source.order }
        } else {
            // Not a governor of this portion: the claim is all we have.
            StateEntry { sensor: from, slaves: claim.0, order: claim.1 }
        };
        let pre = [source_pre, StateEntry { sensor: to, slaves: to_pre.0, order: to_pre.1 }];
        let post = [
            StateEntry { slaves: pre[0].slaves.saturating_sub(1), ..pre[0] },
            StateEntry { slaves: pre[1].slaves + 1, ..pre[1] },
        ];
        let sub = |f: (u128, u128), e: &StateEntry| {
            let (a, b) = potential_term(e.slaves, e.order);
            (f.0 - a, f.1 - b)
        };
        let add = |f: (u128, u128), e: &StateEntry| {
            let (a, b) = potential_term(e.slaves, e.order);
            (f.0 + a, f.1 + b)
        };
        let f_post = add(add(sub(sub(f_pre, &pre[0]), &pre[1]), &post[0]), &post[1]);
        Record::Transfer { t, portion: key, mover, pre, post, f_pre, f_post }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{AoiSpec, DeploymentSpec, Mode};
    use crate::protocol::Role;

    fn tiny(points: Vec<[f64; 2]>, side: f64) -> Scenario {
        let mut s = Scenario::square80("tiny", Mode::Pp1, points.len(), DeploymentSpec::Points { points }, 1);
        s.aoi = AoiSpec::Rectangle { width: side, height: side };
        s
    }

    #[test]
    fn single_sensor_snaps_and_stops() {
        let trace = run(&tiny(vec![[3.0, 3.0]], 10.0)).unwrap();
        let (_, terminated, sensors) = trace.final_state().unwrap();
        assert!(terminated);
        assert_eq!(sensors[0].role, Role::Snapped);
        assert_eq!(sensors[0].energy.meters_moved, 0.0);
        assert_eq!(trace.records.iter().filter(|r| matches!(r, Record::Starter { .. })).count(), 1);
        assert!(!trace.records.iter().any(|r| matches!(r, Record::MoveIssued { .. })));
    }

    #[test]
    fn ten_meter_leg_costs_two_actions() {
        let mut e = {
            let s = tiny(vec![[1.0, 1.0]], 20.0);
            let r = s.resolve().unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            Engine::new(&s, &r, &[Point::new(1.0, 1.0)], &mut rng)
        };
        e.start_move(0, Point::new(11.0, 1.0), MovePurpose::Push);
        let (t, ev) = loop {
            let (t, ev) = e.queue.pop().unwrap();
            if matches!(ev, Event::Arrive { .. }) {
                break (t, ev);
            }
        };
        assert!((t - 10.0).abs() < 1e-12);
        e.now = t;
        if let Event::Arrive { sensor, epoch } = ev {
            e.arrive(sensor, epoch);
        }
        let ledger = e.sensors[0].energy;
        assert!((ledger.meters_moved - 10.0).abs() < 1e-12);
        assert_eq!(ledger.start_brake_count, 2);

        // Pre-empted after 3 m: 3 m and two actions charged, new leg starts.
        e.start_move(0, Point::new(1.0, 1.0), MovePurpose::Push);
        e.now += 3.0;
        e.start_move(0, Point::new(8.0, 5.0), MovePurpose::Push);
        let ledger = e.sensors[0].energy;
        assert!((ledger.meters_moved - 13.0).abs() < 1e-9);
        assert_eq!(ledger.start_brake_count, 5);

        // Zero-length order: no charge.
        let before = e.sensors[0].energy;
        e.stop_leg(0);
        let here = e.sensors[0].position;
        let b2 = e.sensors[0].energy;
        e.start_move(0, here, MovePurpose::Push);
        assert_eq!(e.sensors[0].energy.start_brake_count, b2.start_brake_count);
        assert!(before.start_brake_count + 1 == b2.start_brake_count);
    }

    #[test]
    fn broadcast_closed_ball_and_tx_count() {
        let s = tiny(vec![[0.0, 0.0], [11.0, 0.0], [11.0 + 1e-6, 0.0]], 20.0);
        let r = s.resolve().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let init = [Point::new(0.0, 0.0), Point::new(11.0, 0.0), Point::new(30.0, 0.0)];
        let mut e = Engine::new(&s, &r, &init, &mut rng);
        e.send(0, crate::protocol::MessageKind::NeighborDiscoveryRequest, None);
        match e.records.last().unwrap() {
            Record::Message { deliveries, .. } => assert_eq!(*deliveries, 1),
            other => panic!("{other:?}"),
        }
        assert_eq!(e.sensors[0].energy.tx_count, 1);
        assert_eq!(e.sensors[1].energy.rx_count, 1);
        assert_eq!(e.sensors[2].energy.rx_count, 0);
        e.send(2, crate::protocol::MessageKind::NeighborDiscoveryRequest, None);
        assert_eq!(e.sensors[2].energy.tx_count, 1);
    }
}
