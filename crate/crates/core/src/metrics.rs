//! Deployment quality metrics and trace certifiers.
//!
//! Everything here reads finished traces only. The checks re-derive what
//! they need from trace records (slave-to-master links, recorded potential
//! entries), so they share no decision code with the protocol.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::TAU;

use crate::energy::EnergyModel;
use crate::lattice::{HexCoord, PortionKey};
use crate::protocol::{Role, SensorId};
use crate::sim::{FinalSensor, Record, Trace};
use crate::{Aoi, Point};

const DISTANCE_SLACK: f64 = 1e-9;
const ANGLE_SLACK: f64 = 1e-9;

/// Integer-meter points strictly inside the area.
#[derive(Debug, Clone)]
pub struct Mesh {
    points: Vec<Point>,
    x0: i64,
    y0: i64,
    width: usize,
    /// Grid cell to index into `points`.
    index: Vec<Option<u32>>,
}

impl Mesh {
    pub fn new(aoi: &Aoi) -> Self {
        let b = aoi.bounds();
        let (x0, x1) = (b.min.x.floor() as i64, b.max.x.ceil() as i64);
        let (y0, y1) = (b.min.y.floor() as i64, b.max.y.ceil() as i64);
        let width = (x1 - x0 + 1) as usize;
        let height = (y1 - y0 + 1) as usize;
        let mut points = Vec::new();
        let mut index = vec![None; width * height];
        for y in y0..=y1 {
            for x in x0..=x1 {
                let p = Point::new(x as f64, y as f64);
                if aoi.contains_strict(p) {
                    index[(y - y0) as usize * width + (x - x0) as usize] = Some(points.len() as u32);
                    points.push(p);
                }
            }
        }
        Mesh { points, x0, y0, width, index }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Number of sensors within `radius` of each mesh point.
    pub fn density(&self, sensors: impl IntoIterator<Item = Point>, radius: f64) -> Vec<u32> {
        let mut field = vec![0u32; self.points.len()];
        let reach = radius * (1.0 + DISTANCE_SLACK);
        let r2 = reach * reach;
        let height = self.index.len() / self.width;
        for s in sensors {
            let xa = ((s.x - reach).ceil() as i64).max(self.x0);
            let xb = ((s.x + reach).floor() as i64).min(self.x0 + self.width as i64 - 1);
            let ya = ((s.y - reach).ceil() as i64).max(self.y0);
            let yb = ((s.y + reach).floor() as i64).min(self.y0 + height as i64 - 1);
            for y in ya..=yb {
                let dy = y as f64 - s.y;
                for x in xa..=xb {
                    let dx = x as f64 - s.x;
                    if dx * dx + dy * dy <= r2 {
                        if let Some(i) = self.index[(y - self.y0) as usize * self.width + (x - self.x0) as usize] {
                            field[i as usize] += 1;
                        }
                    }
                }
            }
        }
        field
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityStats {
    pub covered_fraction: f64,
    pub mean: f64,
    pub stddev: f64,
}

pub fn density_stats(field: &[u32]) -> DensityStats {
    if field.is_empty() {
        return DensityStats { covered_fraction: 1.0, mean: 0.0, stddev: 0.0 };
    }
    let n = field.len() as f64;
    let covered = field.iter().filter(|&&d| d > 0).count() as f64;
    let mean = field.iter().map(|&d| d as f64).sum::<f64>() / n;
    let var = field.iter().map(|&d| (d as f64 - mean).powi(2)).sum::<f64>() / n;
    DensityStats { covered_fraction: covered / n, mean, stddev: var.sqrt() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub covered_fraction: f64,
    pub density_mean: f64,
    pub density_stddev: f64,
    pub grid_k: Option<u64>,
    pub continuous_k: Option<u64>,
    pub connected: bool,
    pub completion_time: Option<f64>,
    pub termination_time: f64,
}

/// Metrics of the final deployment plus the timing of the run.
pub fn coverage_report(trace: &Trace, aoi: &Aoi, sensing: f64, tx_radius: f64) -> CoverageReport {
    let mesh = Mesh::new(aoi);
    let sensors = trace.final_state().map(|f| f.2).unwrap_or(&[]);
    let positions: Vec<Point> = sensors.iter().map(|s| s.position).collect();
    let stats = density_stats(&mesh.density(positions.iter().copied(), sensing));
    let completion_time = trace
        .snapshots()
        .find(|(_, snap)| {
            let field = mesh.density(snap.iter().map(|s| s.position), sensing);
            field.iter().all(|&d| d > 0)
        })
        .map(|(t, _)| t);
    let (grid_k, continuous_k) = certify_k_coverage(sensors, aoi, sensing);
    CoverageReport {
        covered_fraction: stats.covered_fraction,
        density_mean: stats.mean,
        density_stddev: stats.stddev,
        grid_k,
        continuous_k,
        connected: check_connectivity(&positions, tx_radius),
        completion_time,
        termination_time: termination_time(trace),
    }
}

/// Time of the last message or movement.
pub fn termination_time(trace: &Trace) -> f64 {
    trace
        .records
        .iter()
        .filter(|r| matches!(r, Record::Message { .. } | Record::MoveDone { .. } | Record::MoveIssued { .. }))
        .map(Record::time)
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyTotals {
    pub per_sensor: Vec<f64>,
    pub mean: f64,
    pub stddev: f64,
    pub mean_meters: f64,
    pub mean_start_brake: f64,
}

pub fn energy_totals(trace: &Trace, model: &EnergyModel) -> EnergyTotals {
    let sensors = trace.final_state().map(|f| f.2).unwrap_or(&[]);
    let per_sensor: Vec<f64> = sensors.iter().map(|s| model.units(&s.energy)).collect();
    let n = per_sensor.len().max(1) as f64;
    let mean = per_sensor.iter().sum::<f64>() / n;
    let stddev = (per_sensor.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n).sqrt();
    EnergyTotals {
        mean,
        stddev,
        mean_meters: sensors.iter().map(|s| s.energy.meters_moved).sum::<f64>() / n,
        mean_start_brake: sensors.iter().map(|s| s.energy.start_brake_count as f64).sum::<f64>() / n,
        per_sensor,
    }
}

/// One hexagon of the final network state: `density` is the governor plus
/// every sensor naming it as master.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HexState {
    pub sensor: SensorId,
    pub portion: PortionKey,
    pub hex: HexCoord,
    pub position: Point,
    pub density: u32,
    pub order: u64,
}

pub fn network_state(sensors: &[FinalSensor]) -> Vec<HexState> {
    let mut followers: BTreeMap<SensorId, u32> = BTreeMap::new();
    for s in sensors.iter().filter(|s| s.role == Role::Slave) {
        if let Some(m) = s.master {
            *followers.entry(m).or_default() += 1;
        }
    }
    sensors
        .iter()
        .filter(|s| matches!(s.role, Role::Snapped | Role::Hybrid))
        .filter_map(|s| {
            Some(HexState {
                sensor: s.id,
                portion: s.portion?.key(),
                hex: s.hex?,
                position: s.position,
                density: 1 + followers.get(&s.id).copied().unwrap_or(0),
                order: s.order,
            })
        })
        .collect()
}

/// True iff no slave may move between any two radio-adjacent hexagons of
/// the same portion.
pub fn check_stable(state: &[HexState], tx_radius: f64) -> bool {
    stability_violations(state, tx_radius).is_empty()
}

pub fn stability_violations(state: &[HexState], tx_radius: f64) -> Vec<(SensorId, SensorId)> {
    let reach = tx_radius * (1.0 + DISTANCE_SLACK);
    let mut out = Vec::new();
    for x in state {
        for y in state {
            if x.sensor == y.sensor || x.portion != y.portion || x.position.distance(y.position) > reach {
                continue;
            }
            let allowed = x.density > y.density + 1 || (x.density == y.density + 1 && x.order > y.order);
            if allowed {
                out.push((x.sensor, y.sensor));
            }
        }
    }
    out
}

fn lex_less(a: (u128, u128), b: (u128, u128)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

fn term(slaves: u32, order: u64) -> (u128, u128) {
    let s = slaves as u128 + 1;
    (s * s, s * order as u128)
}

/// Every recorded push must lower the potential, and its recorded entries
/// must account for the recorded change.
pub fn check_potential_monotone(trace: &Trace) -> (bool, Vec<String>) {
    let mut violations = Vec::new();
    for r in &trace.records {
        let Record::Transfer { t, pre, post, f_pre, f_post, mover, .. } = r else { continue };
        let shape_ok = post[0].sensor == pre[0].sensor
            && post[1].sensor == pre[1].sensor
            && post[0].order == pre[0].order
            && post[1].order == pre[1].order
            && pre[0].slaves >= 1
            && post[0].slaves + 1 == pre[0].slaves
            && post[1].slaves == pre[1].slaves + 1;
        let balance = || -> Option<(u128, u128)> {
            let mut f = *f_pre;
            for e in pre {
                let (a, b) = term(e.slaves, e.order);
                f = (f.0.checked_sub(a)?, f.1.checked_sub(b)?);
            }
            for e in post {
                let (a, b) = term(e.slaves, e.order);
                f = (f.0 + a, f.1 + b);
            }
            Some(f)
        };
        if !shape_ok || balance() != Some(*f_post) {
            violations.push(format!("t={t}: transfer of {mover} has inconsistent entries"));
        } else if !lex_less(*f_post, *f_pre) {
            violations.push(format!(
                "t={t}: transfer of {mover} from {} to {} does not lower the potential: {:?} -> {:?}",
                pre[0].sensor, pre[1].sensor, f_pre, f_post
            ));
        }
    }
    (violations.is_empty(), violations)
}

/// Minimum overlap of the arcs other sensors cut out of the sensing circle
/// of `center`. Arcs are closed; endpoints closer than 1e-9 rad coincide.
pub fn perimeter_coverage(center: Point, others: impl IntoIterator<Item = Point>, radius: f64) -> u64 {
    let mut full = 0u64;
    let mut arcs: Vec<(f64, f64)> = Vec::new();
    for q in others {
        let d = center.distance(q);
        if d <= DISTANCE_SLACK * radius {
            full += 1;
            continue;
        }
        if d > 2.0 * radius * (1.0 + DISTANCE_SLACK) {
            continue;
        }
        let half = (d / (2.0 * radius)).min(1.0).acos();
        let mid = (q.y - center.y).atan2(q.x - center.x);
        arcs.push((mid, half));
    }
    if arcs.is_empty() {
        return full;
    }
    let mut cuts: Vec<f64> = arcs
        .iter()
        .flat_map(|&(m, h)| [(m - h).rem_euclid(TAU), (m + h).rem_euclid(TAU)])
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() <= ANGLE_SLACK);
    if cuts.len() > 1 && (cuts[0] + TAU - cuts[cuts.len() - 1]) <= ANGLE_SLACK {
        cuts.pop();
    }
    let covering = |theta: f64| -> u64 {
        arcs.iter()
            .filter(|&&(m, h)| {
                let off = (theta - m + std::f64::consts::PI).rem_euclid(TAU) - std::f64::consts::PI;
                off.abs() <= h + ANGLE_SLACK
            })
            .count() as u64
    };
    let mut best = u64::MAX;
    for i in 0..cuts.len() {
        let a = cuts[i];
        let b = if i + 1 < cuts.len() { cuts[i + 1] } else { cuts[0] + TAU };
        if b - a > ANGLE_SLACK {
            best = best.min(covering(0.5 * (a + b)));
        }
    }
    if best == u64::MAX {
        // Every arc endpoint coincides: the overlap is the same all around.
        best = covering(cuts[0] + 0.5);
    }
    full + best
}

/// Certified coverage levels of the final deployment, evaluated away from
/// the boundary where the tiling is complete: lattice points at least one
/// sensing radius inside, perimeters of governors at least two inside.
pub fn certify_k_coverage(sensors: &[FinalSensor], aoi: &Aoi, sensing: f64) -> (Option<u64>, Option<u64>) {
    let positions: Vec<Point> = sensors.iter().map(|s| s.position).collect();
    let governors: Vec<Point> = sensors
        .iter()
        .filter(|s| matches!(s.role, Role::Snapped | Role::Hybrid))
        .map(|s| s.position)
        .collect();
    let inside = |p: Point, depth: f64| aoi.contains(p) && aoi.distance_to_boundary(p) >= depth - DISTANCE_SLACK;
    let reach = sensing * (1.0 + DISTANCE_SLACK);
    let grid_k = governors
        .iter()
        .filter(|p| inside(**p, sensing))
        .map(|p| positions.iter().filter(|q| q.distance(*p) <= reach).count() as u64)
        .min();
    let continuous_k = sensors
        .iter()
        .filter(|s| matches!(s.role, Role::Snapped | Role::Hybrid) && inside(s.position, 2.0 * sensing))
        .map(|s| {
            let others = sensors.iter().filter(|o| o.id != s.id).map(|o| o.position);
            perimeter_coverage(s.position, others, sensing)
        })
        .min();
    (grid_k, continuous_k)
}

/// Graph on sensors with an edge between any two within `radius`.
pub fn check_connectivity(positions: &[Point], radius: f64) -> bool {
    let n = positions.len();
    if n <= 1 {
        return true;
    }
    let reach = radius * (1.0 + DISTANCE_SLACK);
    let r2 = reach * reach;
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mut components = n;
    for i in 0..n {
        for j in i + 1..n {
            if positions[i].distance_sq(positions[j]) <= r2 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a] = b;
                    components -= 1;
                }
            }
        }
    }
    components == 1
}

/// Structural problems in a final deployment.
pub fn audit_final(sensors: &[FinalSensor]) -> Vec<String> {
    let mut issues = Vec::new();
    let by_id: BTreeMap<SensorId, &FinalSensor> = sensors.iter().map(|s| (s.id, s)).collect();
    let mut seen: BTreeSet<(PortionKey, HexCoord)> = BTreeSet::new();
    let portions: BTreeSet<PortionKey> = sensors.iter().filter_map(|s| s.portion.map(|p| p.key())).collect();
    if portions.len() > 1 {
        issues.push(format!("{} tiling portions remain", portions.len()));
    }
    for s in sensors {
        if s.moving {
            issues.push(format!("sensor {} still moving", s.id));
        }
        if s.order != s.base_order {
            issues.push(format!("sensor {} kept a lowered order value", s.id));
        }
        match s.role {
            Role::Snapped | Role::Hybrid => {
                if s.role == Role::Hybrid {
                    issues.push(format!("sensor {} is still hybrid", s.id));
                }
                match (s.portion, s.hex) {
                    (Some(p), Some(h)) => {
                        if !seen.insert((p.key(), h)) {
                            issues.push(format!("hexagon {h} governed twice"));
                        }
                    }
                    _ => issues.push(format!("governor {} lacks a hexagon", s.id)),
                }
                if !s.incoming.is_empty() {
                    issues.push(format!("governor {} still expects {:?}", s.id, s.incoming));
                }
                for slave in &s.slaves {
                    if by_id.get(slave).and_then(|x| x.master) != Some(s.id) {
                        issues.push(format!("governor {} lists {slave}, which answers elsewhere", s.id));
                    }
                }
            }
            Role::Slave => match s.master.and_then(|m| by_id.get(&m)) {
                Some(m) if m.slaves.contains(&s.id) && m.hex == s.hex => {}
                _ => issues.push(format!("slave {} is not held by its master {:?}", s.id, s.master)),
            },
            Role::Free => issues.push(format!("sensor {} is still free", s.id)),
        }
    }
    issues
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::EnergyLedger;
    use crate::lattice::{continuous_coverage_bound, lattice_count};
    use crate::GridSpec;

    fn fs(id: SensorId, role: Role, p: Point) -> FinalSensor {
        FinalSensor {
            id,
            role,
            position: p,
            portion: None,
            hex: None,
            master: None,
            slaves: vec![],
            incoming: vec![],
            order: 1,
            base_order: 1,
            moving: false,
            energy: EnergyLedger::default(),
        }
    }

    fn lattice(side: f64, extent: f64) -> Vec<FinalSensor> {
        let g = GridSpec::new(Point::new(extent / 2.0, extent / 2.0), 0.0, side, 0.0, 0);
        let span = (extent / (3f64.sqrt() * side)).ceil() as i32 + 2;
        let mut out = Vec::new();
        for a in -span..=span {
            for b in -span..=span {
                let p = g.center(HexCoord::new(a, b));
                if p.x > -side && p.x < extent + side && p.y > -side && p.y < extent + side {
                    let mut s = fs(out.len() as SensorId, Role::Snapped, p);
                    s.portion = Some(g);
                    s.hex = Some(HexCoord::new(a, b));
                    out.push(s);
                }
            }
        }
        out
    }

    #[test]
    fn single_sensor_disk() {
        let aoi = Aoi::rectangle(20.0, 20.0).unwrap();
        let mesh = Mesh::new(&aoi);
        assert_eq!(mesh.len(), 19 * 19);
        let field = mesh.density([Point::new(10.0, 10.0)], 5.0);
        for (p, d) in mesh.points.iter().zip(&field) {
            assert_eq!(*d, (p.distance(Point::new(10.0, 10.0)) <= 5.0) as u32);
        }
        assert_eq!(density_stats(&[3, 3, 3]).stddev, 0.0);
    }

    #[test]
    fn lattice_k_coverage_matches_formulas() {
        let rs = 5.0;
        let side = rs / 3f64.sqrt();
        let sensors = lattice(side, 60.0);
        let aoi = Aoi::rectangle(60.0, 60.0).unwrap();
        let (grid_k, cont_k) = certify_k_coverage(&sensors, &aoi, rs);
        assert_eq!(grid_k, Some(lattice_count(rs, side)));
        assert_eq!(grid_k, Some(7));
        assert!(cont_k.unwrap() >= continuous_coverage_bound(side, rs));
        assert!(cont_k.unwrap() >= 3);
        let lone = [fs(0, Role::Snapped, Point::new(30.0, 30.0))];
        assert_eq!(certify_k_coverage(&lone, &aoi, rs).1, Some(0));
    }

    #[test]
    fn full_lattice_connectivity_threshold() {
        let side = 5.0;
        let pts: Vec<Point> = lattice(side, 60.0).iter().map(|s| s.position).collect();
        assert!(check_connectivity(&pts, 3f64.sqrt() * side));
        assert!(!check_connectivity(&pts, 0.99 * 3f64.sqrt() * side));
        assert!(check_connectivity(&pts[..1], 1.0));
    }

    fn hs(sensor: SensorId, x: f64, density: u32, order: u64) -> HexState {
        HexState {
            sensor,
            portion: PortionKey { timestamp: 0.0, starter: 0 },
            hex: HexCoord::new(sensor as i32, 0),
            position: Point::new(x, 0.0),
            density,
            order,
        }
    }

    #[test]
    fn stability_examples() {
        assert!(check_stable(&[hs(0, 0.0, 2, 1), hs(1, 8.0, 2, 9)], 11.0));
        assert!(!check_stable(&[hs(0, 0.0, 3, 1), hs(1, 8.0, 1, 9)], 11.0));
        // Gradient falling by one toward lower order values.
        let g = [hs(0, 0.0, 3, 2), hs(1, 8.0, 2, 3), hs(2, 16.0, 1, 4)];
        assert!(check_stable(&g, 11.0));
        // Out of radio range: ignored.
        assert!(check_stable(&[hs(0, 0.0, 5, 1), hs(1, 20.0, 1, 9)], 11.0));
    }

    #[test]
    fn potential_examples() {
        use crate::sim::StateEntry;
        let f = |s: &[(u32, u64)]| s.iter().fold((0u128, 0u128), |acc, &(s, id)| {
            let s = s as u128;
            (acc.0 + s * s, acc.1 + s * id as u128)
        });
        assert_eq!(f(&[(3, 5), (1, 2)]), (10, 17));
        assert_eq!(f(&[(2, 5), (2, 2)]), (8, 14));
        assert_eq!(f(&[(2, 5), (1, 2)]), (5, 12));
        assert_eq!(f(&[(1, 5), (2, 2)]), (5, 9));

        let e = |sensor, slaves, order| StateEntry { sensor, slaves, order };
        let rec = |pre: [StateEntry; 2], post: [StateEntry; 2], f_pre, f_post| Record::Transfer {
            t: 1.0,
            portion: PortionKey { timestamp: 0.0, starter: 0 },
            mover: 9,
            pre,
            post,
            f_pre,
            f_post,
        };
        let good = Trace {
            records: vec![
                rec([e(0, 2, 5), e(1, 0, 2)], [e(0, 1, 5), e(1, 1, 2)], (10, 17), (8, 14)),
                rec([e(0, 1, 5), e(1, 0, 2)], [e(0, 0, 5), e(1, 1, 2)], (5, 12), (5, 9)),
            ],
        };
        assert_eq!(check_potential_monotone(&good), (true, vec![]));
        let bad = Trace { records: vec![rec([e(0, 1, 2), e(1, 0, 5)], [e(0, 0, 2), e(1, 1, 5)], (5, 9), (5, 12))] };
        assert!(!check_potential_monotone(&bad).0);
        let forged = Trace { records: vec![rec([e(0, 2, 5), e(1, 0, 2)], [e(0, 1, 5), e(1, 1, 2)], (10, 17), (1, 1))] };
        assert!(!check_potential_monotone(&forged).0);
    }

    #[test]
    fn perimeter_of_coincident_and_far_sensors() {
        let c = Point::new(0.0, 0.0);
        assert_eq!(perimeter_coverage(c, [Point::new(0.0, 0.0)], 5.0), 1);
        assert_eq!(perimeter_coverage(c, [Point::new(20.0, 0.0)], 5.0), 0);
        // Two sensors opposite at distance r cover 120 degree arcs each, leaving gaps.
        assert_eq!(perimeter_coverage(c, [Point::new(5.0, 0.0), Point::new(-5.0, 0.0)], 5.0), 0);
    }
}
