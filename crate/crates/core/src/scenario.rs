//! Scenario files, initial deployments and the dumbbell area.

use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::GeometryError;
use crate::lattice::RadioError;
use crate::tight::{shrinked_side, TightError};
use crate::{Aoi, Point, RadioParams};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid scenario")]
    Parse(#[from] toml::de::Error),
    #[error("cannot write scenario")]
    Emit(#[from] toml::ser::Error),
    #[error("invalid area")]
    Area(#[from] GeometryError),
    #[error(transparent)]
    Radio(#[from] RadioError),
    #[error(transparent)]
    Tight(#[from] TightError),
    #[error("deployment points: {0}")]
    Points(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Hexagon side equal to the sensing radius.
    Pp1,
    /// Hexagon side shrunk until the available sensors match the bound.
    Pp2,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Pp1 => "pp1",
            Mode::Pp2 => "pp2",
        })
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pp1" => Ok(Mode::Pp1),
            "pp2" => Ok(Mode::Pp2),
            other => Err(format!("unknown mode `{other}`, expected pp1 or pp2")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AoiSpec {
    Rectangle { width: f64, height: f64 },
    Dumbbell { square_side: f64, narrows_width: f64, narrows_length: f64 },
    Polygon { points: Vec<[f64; 2]> },
}

impl AoiSpec {
    pub fn build(&self) -> Result<Aoi, ScenarioError> {
        Ok(match self {
            AoiSpec::Rectangle { width, height } => Aoi::rectangle(*width, *height)?,
            AoiSpec::Dumbbell { square_side, narrows_width, narrows_length } => {
                dumbbell_aoi(*square_side, *narrows_width, *narrows_length)?
            }
            AoiSpec::Polygon { points } => Aoi::new(points.iter().map(|p| Point::new(p[0], p[1])).collect())?,
        })
    }
}

/// Two squares joined by a corridor centered on their facing sides.
pub fn dumbbell_aoi(square_side: f64, narrows_width: f64, narrows_length: f64) -> Result<Aoi, GeometryError> {
    if !(square_side > 0.0 && narrows_width > 0.0 && narrows_length >= 0.0) || narrows_width > square_side {
        return Err(GeometryError::Degenerate);
    }
    let s = square_side;
    if narrows_length == 0.0 || narrows_width == square_side {
        return Aoi::rectangle(2.0 * s + narrows_length, s);
    }
    let lo = (s - narrows_width) / 2.0;
    let hi = lo + narrows_width;
    let right = s + narrows_length;
    let pts = [
        (0.0, 0.0),
        (s, 0.0),
        (s, lo),
        (right, lo),
        (right, 0.0),
        (right + s, 0.0),
        (right + s, s),
        (right, s),
        (right, hi),
        (s, hi),
        (s, s),
        (0.0, s),
    ];
    Aoi::new(pts.iter().map(|&(x, y)| Point::new(x, y)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DeploymentSpec {
    /// Jittered band along the diagonal of the bounding box.
    Trail,
    /// Dense square in the lower-left corner.
    SafeCorner,
    /// Dense disk around the center.
    Central,
    Points { points: Vec<[f64; 2]> },
    /// Flat table with an `id,x,y` header.
    File { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeploymentKind {
    Trail,
    SafeCorner,
    Central,
}

impl DeploymentSpec {
    pub fn name(&self) -> &'static str {
        match self {
            DeploymentSpec::Trail => "trail",
            DeploymentSpec::SafeCorner => "safe_corner",
            DeploymentSpec::Central => "central",
            DeploymentSpec::Points { .. } => "points",
            DeploymentSpec::File { .. } => "file",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Timing {
    pub start_window: f64,
    pub latency: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pull_base: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hard_limit: Option<f64>,
    pub snapshot_interval: f64,
}

impl Default for Timing {
    fn default() -> Self {
        Timing { start_window: 10.0, latency: 0.01, pull_base: None, hard_limit: None, snapshot_interval: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorParams {
    pub trail_width: f64,
    /// Side of the corner square as a fraction of the bounding-box diagonal.
    pub corner_fraction: f64,
    /// Radius of the central disk as a fraction of the bounding-box diagonal.
    pub central_fraction: f64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams { trail_width: 6.0, corner_fraction: 0.2, central_fraction: 0.15 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSettings {
    pub role_exchange: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_ring: Option<u32>,
    pub rest_offset: f64,
}

impl Default for ProtocolSettings {
    fn default() -> Self {
        ProtocolSettings { role_exchange: true, max_ring: None, rest_offset: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchSpec {
    pub seeds: SeedRange,
}

/// Half-open `a..b` or inclusive `a..=b` seed range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedRange(pub Range<u64>);

impl SeedRange {
    pub fn seeds(&self) -> Range<u64> {
        self.0.clone()
    }
}

impl FromStr for SeedRange {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("seed range `{s}` is not of the form a..b or a..=b");
        let (a, rest) = s.split_once("..").ok_or_else(bad)?;
        let start: u64 = a.trim().parse().map_err(|_| bad())?;
        let end: u64 = match rest.strip_prefix('=') {
            Some(b) => b.trim().parse::<u64>().map_err(|_| bad())? + 1,
            None => rest.trim().parse().map_err(|_| bad())?,
        };
        if end <= start {
            return Err(format!("seed range `{s}` is empty"));
        }
        Ok(SeedRange(start..end))
    }
}

impl fmt::Display for SeedRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.0.start, self.0.end)
    }
}

impl Serialize for SeedRange {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SeedRange {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn default_speed() -> f64 {
    1.0
}

/// One scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: String,
    pub seed: u64,
    pub mode: Mode,
    pub sensors: usize,
    pub sensing_radius: f64,
    pub tx_radius: f64,
    #[serde(default = "default_speed")]
    pub speed: f64,
    pub aoi: AoiSpec,
    pub deployment: DeploymentSpec,
    #[serde(default)]
    pub timing: Timing,
    #[serde(default)]
    pub generator: GeneratorParams,
    #[serde(default)]
    pub protocol: ProtocolSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<BatchSpec>,
}

/// A scenario with every derived quantity worked out.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub aoi: Aoi,
    pub radio: RadioParams,
    pub side: f64,
    pub pull_base: f64,
    pub hard_limit: f64,
    pub max_ring: u32,
}

impl Scenario {
    /// The 80 m square with the radio and speed of the reference runs.
    pub fn square80(id: &str, mode: Mode, sensors: usize, deployment: DeploymentSpec, seed: u64) -> Self {
        Scenario {
            id: id.to_string(),
            seed,
            mode,
            sensors,
            sensing_radius: 5.0,
            tx_radius: 11.0,
            speed: 1.0,
            aoi: AoiSpec::Rectangle { width: 80.0, height: 80.0 },
            deployment,
            timing: Timing::default(),
            generator: GeneratorParams::default(),
            protocol: ProtocolSettings::default(),
            batch: None,
        }
    }

    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.into(), source })?;
        let mut scenario = Self::parse(&text)?;
        if let DeploymentSpec::File { path: rel } = &mut scenario.deployment {
            if rel.is_relative() {
                if let Some(dir) = path.parent() {
                    *rel = dir.join(&*rel);
                }
            }
        }
        Ok(scenario)
    }

    pub fn emit(&self) -> Result<String, ScenarioError> {
        Ok(toml::to_string(self)?)
    }

    pub fn resolve(&self) -> Result<Resolved, ScenarioError> {
        if self.sensors == 0 {
            return Err(ScenarioError::Invalid("a scenario needs at least one sensor".into()));
        }
        if !(self.speed > 0.0) || !(self.timing.latency > 0.0) || !(self.timing.snapshot_interval > 0.0) {
            return Err(ScenarioError::Invalid("speed, latency and snapshot interval must be positive".into()));
        }
        let aoi = self.aoi.build()?;
        let radio = RadioParams::new(self.sensing_radius, self.tx_radius)?;
        let side = match self.mode {
            Mode::Pp1 => self.sensing_radius,
            Mode::Pp2 => shrinked_side(&aoi, self.sensors as u64, self.sensing_radius)?,
        };
        let diag = aoi.bounds().diagonal();
        let spacing = 3f64.sqrt() * side;
        Ok(Resolved {
            pull_base: self.timing.pull_base.unwrap_or(2.0 * spacing / self.speed),
            hard_limit: self.timing.hard_limit.unwrap_or(10.0 * diag / self.speed),
            max_ring: self.protocol.max_ring.unwrap_or((diag / spacing).ceil() as u32 + 2),
            aoi,
            radio,
            side,
        })
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Scenario { seed, ..self.clone() }
    }
}

/// Initial positions drawn from `rng`, the first consumer of a run's stream.
pub fn draw_initial(
    spec: &DeploymentSpec,
    aoi: &Aoi,
    n: usize,
    params: &GeneratorParams,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Point>, ScenarioError> {
    let kind = match spec {
        DeploymentSpec::Trail => DeploymentKind::Trail,
        DeploymentSpec::SafeCorner => DeploymentKind::SafeCorner,
        DeploymentSpec::Central => DeploymentKind::Central,
        DeploymentSpec::Points { points } => return explicit(points.iter().map(|p| Point::new(p[0], p[1])), aoi, n),
        DeploymentSpec::File { path } => return explicit(read_points(path)?.into_iter(), aoi, n),
    };
    let b = aoi.bounds();
    let diag = b.diagonal();
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n {
        attempts += 1;
        if attempts > 10_000 * n.max(1) {
            return Err(ScenarioError::Points(format!("could not place {n} sensors inside the area")));
        }
        let p = match kind {
            DeploymentKind::Trail => {
                let dir = Point::new(b.width(), b.height()) * (1.0 / diag);
                let normal = Point::new(-dir.y, dir.x);
                let along = rng.gen_range(0.0..diag);
                let across = rng.gen_range(-0.5..0.5) * params.trail_width;
                b.min + dir * along + normal * across
            }
            DeploymentKind::SafeCorner => {
                let side = params.corner_fraction * diag;
                b.min + Point::new(rng.gen_range(0.0..side), rng.gen_range(0.0..side))
            }
            DeploymentKind::Central => {
                let radius = params.central_fraction * diag;
                let r = radius * rng.gen::<f64>().sqrt();
                let a = rng.gen_range(0.0..std::f64::consts::TAU);
                b.center() + Point::polar(r, a)
            }
        };
        if aoi.contains(p) {
            out.push(p);
        }
    }
    Ok(out)
}

/// Seeded wrapper around [`draw_initial`].
pub fn generate_initial(
    spec: &DeploymentSpec,
    aoi: &Aoi,
    n: usize,
    params: &GeneratorParams,
    seed: u64,
) -> Result<Vec<Point>, ScenarioError> {
    draw_initial(spec, aoi, n, params, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn explicit(points: impl Iterator<Item = Point>, aoi: &Aoi, n: usize) -> Result<Vec<Point>, ScenarioError> {
    let pts: Vec<Point> = points.collect();
    if pts.len() != n {
        return Err(ScenarioError::Points(format!("{} points listed for {n} sensors", pts.len())));
    }
    if let Some(p) = pts.iter().find(|p| !aoi.contains(**p)) {
        return Err(ScenarioError::Points(format!("({}, {}) lies outside the area", p.x, p.y)));
    }
    Ok(pts)
}

#[derive(Debug, Deserialize)]
struct PointRow {
    id: u32,
    x: f64,
    y: f64,
}

/// Reads an `id,x,y` table; rows are ordered by id.
pub fn read_points(path: &Path) -> Result<Vec<Point>, ScenarioError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| ScenarioError::Points(format!("{}: {e}", path.display())))?;
    let mut rows: Vec<PointRow> = reader
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| ScenarioError::Points(format!("{}: {e}", path.display())))?;
    rows.sort_by_key(|r| r.id);
    Ok(rows.into_iter().map(|r| Point::new(r.x, r.y)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::segment_distance;

    #[test]
    fn dumbbell_examples() {
        let d = dumbbell_aoi(40.0, 10.0, 20.0).unwrap();
        assert!((d.area() - 3400.0).abs() < 1e-9);
        assert_eq!(d.reflex_vertex_count(), 4);
        let r = dumbbell_aoi(40.0, 40.0, 0.0).unwrap();
        assert_eq!(r.as_rectangle(), Some((80.0, 40.0)));
        assert!(dumbbell_aoi(40.0, 50.0, 10.0).is_err());
    }

    #[test]
    fn central_points_in_disk() {
        let aoi = Aoi::rectangle(80.0, 80.0).unwrap();
        let g = GeneratorParams::default();
        let pts = generate_initial(&DeploymentSpec::Central, &aoi, 400, &g, 7).unwrap();
        let radius = 0.15 * aoi.bounds().diagonal();
        assert_eq!(pts.len(), 400);
        assert!(pts.iter().all(|p| p.distance(Point::new(40.0, 40.0)) <= radius));
    }

    #[test]
    fn trail_in_corridor_and_crossing() {
        let aoi = Aoi::rectangle(80.0, 80.0).unwrap();
        let g = GeneratorParams::default();
        let pts = generate_initial(&DeploymentSpec::Trail, &aoi, 100, &g, 3).unwrap();
        let (a, b) = (Point::new(0.0, 0.0), Point::new(80.0, 80.0));
        assert!(pts.iter().all(|p| segment_distance(*p, a, b) <= 3.0 + 1e-9 && aoi.contains(*p)));
        // The corridor's axis joins opposite corners, so it meets every side.
        assert!(aoi.on_boundary(a) && aoi.on_boundary(b));
        assert_eq!(pts, generate_initial(&DeploymentSpec::Trail, &aoi, 100, &g, 3).unwrap());
    }

    #[test]
    fn generated_points_inside_concave_area() {
        let aoi = dumbbell_aoi(40.0, 10.0, 20.0).unwrap();
        let g = GeneratorParams::default();
        for spec in [DeploymentSpec::Trail, DeploymentSpec::SafeCorner, DeploymentSpec::Central] {
            let pts = generate_initial(&spec, &aoi, 300, &g, 11).unwrap();
            assert!(pts.iter().all(|p| aoi.contains(*p)), "{spec:?}");
        }
    }

    #[test]
    fn seed_ranges() {
        assert_eq!("0..30".parse::<SeedRange>().unwrap().seeds().count(), 30);
        assert_eq!("5..=5".parse::<SeedRange>().unwrap().seeds().collect::<Vec<_>>(), vec![5]);
        assert!("3..3".parse::<SeedRange>().is_err());
        assert!("x".parse::<SeedRange>().is_err());
    }

    #[test]
    fn parse_reports_unknown_field() {
        let text = "id = \"a\"\nseed = 1\nmode = \"pp1\"\nsensors = 4\nsensing_radius = 5.0\ntx_radius = 11.0\nbogus = 3\n\
                    [aoi]\nkind = \"rectangle\"\nwidth = 10.0\nheight = 10.0\n[deployment]\nkind = \"central\"\n";
        let err = Scenario::parse(text).unwrap_err();
        let err = std::iter::successors(Some(&err as &dyn std::error::Error), |e| e.source())
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(": ");
        assert!(err.contains("bogus"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn pp2_requires_tight_number() {
        let s = Scenario::square80("t", Mode::Pp2, 100, DeploymentSpec::Central, 0);
        assert!(matches!(s.resolve(), Err(ScenarioError::Tight(_))));
        let s = Scenario::square80("t", Mode::Pp2, 400, DeploymentSpec::Central, 0);
        assert!((s.resolve().unwrap().side - 2.8332).abs() < 1e-4);
    }
}
