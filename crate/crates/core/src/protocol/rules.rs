//! Side-effect free decision rules. The sensor state machine feeds them its
//! local view and acts on the result.

use std::cmp::Ordering;

use crate::energy::{EnergyLedger, EnergyModel};
use crate::lattice::HexCoord;
use crate::{GridSpec, Point};

use super::{Role, SensorId};

/// Slave count and order value of a snapped sensor, as far as the Moving
/// Condition is concerned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Density {
    pub slaves: u32,
    pub order: u64,
}

impl Density {
    pub fn new(slaves: u32, order: u64) -> Self {
        Density { slaves, order }
    }
}

/// Whether a slave may move from the hexagon of `x` to the hexagon of `y`.
pub fn moving_condition(x: Density, y: Density) -> bool {
    let (sx, sy) = (x.slaves as u64, y.slaves as u64);
    sx > sy + 1 || (sx == sy + 1 && x.order > y.order)
}

/// Greedy closest-pair matching of candidate sensors onto vacant hexagons.
///
/// Repeatedly takes the globally closest (hexagon, sensor) pair among those
/// still unassigned, so each hexagon gets the nearest remaining sensor in
/// order of how cheaply it can be filled.
pub fn select_snap_assignments(
    vacant: &[(HexCoord, Point)],
    candidates: &[(SensorId, Point)],
) -> Vec<(SensorId, HexCoord)> {
    let mut pairs: Vec<(f64, HexCoord, SensorId)> = Vec::with_capacity(vacant.len() * candidates.len());
    for &(hex, center) in vacant {
        for &(id, pos) in candidates {
            pairs.push((center.distance_sq(pos), hex, id));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_hex: Vec<HexCoord> = Vec::with_capacity(vacant.len());
    let mut used_id: Vec<SensorId> = Vec::with_capacity(vacant.len());
    let mut out = Vec::new();
    for (_, hex, id) in pairs {
        if used_hex.len() == vacant.len() || used_id.len() == candidates.len() {
            break;
        }
        if used_hex.contains(&hex) || used_id.contains(&id) {
            continue;
        }
        used_hex.push(hex);
        used_id.push(id);
        out.push((id, hex));
    }
    out
}

/// A snapped radio neighbor as seen from the pushing sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborView {
    pub id: SensorId,
    pub hex: HexCoord,
    pub center: Point,
    pub density: Density,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PushChoice {
    pub slave: SensorId,
    pub dest: SensorId,
    pub dest_hex: HexCoord,
}

/// Picks the least crowded, then closest, neighbor the Moving Condition
/// allows, and the slave nearest to it.
pub fn select_push(
    me: Density,
    my_center: Point,
    slaves: &[(SensorId, Point)],
    neighbors: &[NeighborView],
) -> Option<PushChoice> {
    if slaves.is_empty() {
        return None;
    }
    let dest = neighbors
        .iter()
        .filter(|n| moving_condition(me, n.density))
        .min_by(|a, b| {
            a.density
                .slaves
                .cmp(&b.density.slaves)
                .then_with(|| my_center.distance_sq(a.center).total_cmp(&my_center.distance_sq(b.center)))
                .then(a.hex.cmp(&b.hex))
        })?;
    let slave = slaves
        .iter()
        .min_by(|a, b| a.1.distance_sq(dest.center).total_cmp(&b.1.distance_sq(dest.center)).then(a.0.cmp(&b.0)))?;
    Some(PushChoice { slave: slave.0, dest: dest.id, dest_hex: dest.hex })
}

/// Extra costs paid when a slave and its governor swap roles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwapCosts {
    /// Distance from the slave to the hexagon center it takes over.
    pub detour: f64,
    /// Distance the governor travels instead of the slave.
    pub governor_path: f64,
    pub model: EnergyModel,
}

/// True when letting the governor travel instead of the slave strictly
/// shrinks the gap between their projected energy totals.
pub fn role_exchange_check(
    slave: &EnergyLedger,
    snapped: &EnergyLedger,
    remaining_path: f64,
    costs: &SwapCosts,
) -> bool {
    let m = &costs.model;
    let es = m.units(slave);
    let eg = m.units(snapped);
    let keep = ((es + m.leg(remaining_path)) - eg).abs();
    let swap_slave = es + m.leg(costs.detour) + m.rx_unit;
    let swap_governor = eg + m.leg(costs.governor_path) + m.tx_unit;
    let swap = (swap_slave - swap_governor).abs();
    swap < keep
}

/// How a sensor reacts to a message whose header names a different portion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeAction {
    /// Same portion, or nothing to reconcile.
    None,
    /// Free sensor: start answering to the header's portion.
    Honor,
    /// Newer-portion slave: drop the current master and become free.
    Release,
    /// Newer-portion governor: keep the hexagon, answer to the older portion.
    BecomeHybrid,
    /// Hybrid sensor hearing an even older portion.
    Rehonor,
    /// Older-portion governor contacted by a newer portion: look around.
    Discover,
    Ignore,
}

/// Case split for tiling merges. `own` is the portion a slave or governor
/// belongs to, `honored` the one a free or hybrid sensor answers to.
pub fn merge_resolve(
    role: Role,
    own: Option<&GridSpec>,
    honored: Option<&GridSpec>,
    incoming: Option<&GridSpec>,
) -> MergeAction {
    let Some(incoming) = incoming else {
        return MergeAction::None;
    };
    let older = |mine: Option<&GridSpec>| match mine {
        None => Ordering::Less,
        Some(m) => incoming.cmp(m),
    };
    match role {
        Role::Free => match older(honored) {
            Ordering::Less => MergeAction::Honor,
            _ => MergeAction::None,
        },
        Role::Hybrid => match older(honored) {
            Ordering::Less => MergeAction::Rehonor,
            _ => MergeAction::None,
        },
        Role::Slave => match older(own) {
            Ordering::Less => MergeAction::Release,
            Ordering::Equal => MergeAction::None,
            Ordering::Greater => MergeAction::Ignore,
        },
        Role::Snapped => match older(own) {
            Ordering::Less => MergeAction::BecomeHybrid,
            Ordering::Equal => MergeAction::None,
            Ordering::Greater => MergeAction::Discover,
        },
    }
}

/// Grid of a new portion started by `starter` at its own position.
pub fn start_portion(starter: SensorId, position: Point, orientation: f64, side: f64, now: f64) -> GridSpec {
    GridSpec::new(position, orientation, side, now, starter)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(slaves: u32, order: u64) -> Density {
        Density::new(slaves, order)
    }

    #[test]
    fn moving_condition_examples() {
        assert!(moving_condition(d(3, 0), d(1, 0)));
        assert!(moving_condition(d(2, 7), d(1, 3)));
        assert!(!moving_condition(d(2, 3), d(1, 7)));
        assert!(!moving_condition(d(2, 9), d(2, 1)));
    }

    #[test]
    fn snap_assignment_six_around_center() {
        let g = GridSpec::new(Point::new(0.0, 0.0), 0.0, 5.0, 0.0, 0);
        let vacant: Vec<_> = HexCoord::ORIGIN.adjacent().iter().map(|&h| (h, g.center(h))).collect();
        let candidates: Vec<_> = (0..6)
            .map(|k| {
                let ang = k as f64 * std::f64::consts::FRAC_PI_3 + 0.1;
                (k as u32 + 10, Point::polar(2.0, ang))
            })
            .collect();
        let out = select_snap_assignments(&vacant, &candidates);
        assert_eq!(out.len(), 6);
        let mut ids: Vec<_> = out.iter().map(|x| x.0).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 6);
        // Sensor k lies nearly toward adjacent direction k.
        for (id, hex) in out {
            let k = (id - 10) as usize;
            assert_eq!(hex, HexCoord::ORIGIN.adjacent()[k]);
        }
        assert!(select_snap_assignments(&vacant, &[]).is_empty());
        assert!(select_snap_assignments(&[], &candidates).is_empty());
    }

    #[test]
    fn push_picks_closest_among_least_loaded() {
        let me = d(3, 100);
        let slaves = [(1, Point::new(0.1, 0.0)), (2, Point::new(-0.1, 0.0)), (3, Point::new(0.0, 0.1))];
        let near = NeighborView { id: 20, hex: HexCoord::new(1, 0), center: Point::new(8.0, 0.0), density: d(0, 5) };
        let far = NeighborView { id: 21, hex: HexCoord::new(-2, 0), center: Point::new(-10.0, 0.0), density: d(0, 5) };
        let choice = select_push(me, Point::origin(), &slaves, &[far, near]).unwrap();
        assert_eq!(choice, PushChoice { slave: 1, dest: 20, dest_hex: HexCoord::new(1, 0) });

        let y1 = NeighborView { density: d(1, 5), ..far };
        let y2 = NeighborView { density: d(2, 5), ..near };
        assert_eq!(select_push(me, Point::origin(), &slaves, &[y1, y2]).unwrap().dest, 21);

        let blocked = NeighborView { density: d(3, 500), ..near };
        assert!(select_push(me, Point::origin(), &slaves, &[blocked]).is_none());
    }

    #[test]
    fn role_exchange_examples() {
        let costs = SwapCosts { detour: 0.25, governor_path: 10.0, model: EnergyModel::default() };
        let moved = EnergyLedger::new(40.0, 0, 0, 0);
        let still = EnergyLedger::default();
        assert!(role_exchange_check(&moved, &still, 10.0, &costs));
        assert!(!role_exchange_check(&still, &moved, 10.0, &costs));
        let zero = SwapCosts { governor_path: 0.0, ..costs };
        assert!(!role_exchange_check(&still, &still, 0.0, &zero));
    }

    #[test]
    fn merge_cases() {
        let old = GridSpec::new(Point::origin(), 0.0, 5.0, 1.0, 3);
        let new = GridSpec::new(Point::origin(), 0.0, 5.0, 4.0, 1);
        assert_eq!(merge_resolve(Role::Snapped, Some(&new), None, Some(&old)), MergeAction::BecomeHybrid);
        assert_eq!(merge_resolve(Role::Slave, Some(&old), None, Some(&new)), MergeAction::Ignore);
        assert_eq!(merge_resolve(Role::Slave, Some(&new), None, Some(&old)), MergeAction::Release);
        assert_eq!(merge_resolve(Role::Snapped, Some(&old), None, Some(&new)), MergeAction::Discover);
        assert_eq!(merge_resolve(Role::Free, None, Some(&new), Some(&old)), MergeAction::Honor);
        assert_eq!(merge_resolve(Role::Free, None, Some(&old), Some(&new)), MergeAction::None);
        assert_eq!(merge_resolve(Role::Free, None, None, Some(&new)), MergeAction::Honor);
        assert_eq!(merge_resolve(Role::Snapped, Some(&old), None, Some(&old)), MergeAction::None);
    }
}
