use std::path::PathBuf;

use proptest::prelude::*;

use pushpull::scenario::{
    AoiSpec, BatchSpec, DeploymentSpec, GeneratorParams, Mode, ProtocolSettings, Scenario, SeedRange, Timing,
};

fn coord() -> impl Strategy<Value = f64> {
    -1.0e4..1.0e4f64
}

fn positive() -> impl Strategy<Value = f64> {
    1.0e-3..1.0e3f64
}

fn aoi() -> impl Strategy<Value = AoiSpec> {
    prop_oneof![
        (positive(), positive()).prop_map(|(width, height)| AoiSpec::Rectangle { width, height }),
        (positive(), positive(), positive()).prop_map(|(square_side, narrows_width, narrows_length)| {
            AoiSpec::Dumbbell { square_side, narrows_width, narrows_length }
        }),
        proptest::collection::vec([coord(), coord()], 3..8).prop_map(|points| AoiSpec::Polygon { points }),
    ]
}

fn deployment() -> impl Strategy<Value = DeploymentSpec> {
    prop_oneof![
        Just(DeploymentSpec::Trail),
        Just(DeploymentSpec::SafeCorner),
        Just(DeploymentSpec::Central),
        proptest::collection::vec([coord(), coord()], 1..6).prop_map(|points| DeploymentSpec::Points { points }),
        "[a-z]{1,8}(/[a-z]{1,8})?\\.csv".prop_map(|p| DeploymentSpec::File { path: PathBuf::from(p) }),
    ]
}

fn timing() -> impl Strategy<Value = Timing> {
    (positive(), positive(), proptest::option::of(positive()), proptest::option::of(positive()), positive()).prop_map(
        |(start_window, latency, pull_base, hard_limit, snapshot_interval)| Timing {
            start_window,
            latency,
            pull_base,
            hard_limit,
            snapshot_interval,
        },
    )
}

fn scenario() -> impl Strategy<Value = Scenario> {
    (
        ("[A-Za-z0-9_-]{1,12}", 0..=i64::MAX as u64, prop_oneof![Just(Mode::Pp1), Just(Mode::Pp2)], 1usize..5000),
        (positive(), positive(), positive()),
        (aoi(), deployment(), timing()),
        (positive(), 0.0..1.0f64, 0.0..1.0f64),
        (any::<bool>(), proptest::option::of(1u32..100), 0.0..1.0f64),
        proptest::option::of((0u64..1000, 1u64..1000)),
    )
        .prop_map(|((id, seed, mode, sensors), (sensing_radius, tx_radius, speed), (aoi, deployment, timing), g, p, batch)| {
            Scenario {
                id,
                seed,
                mode,
                sensors,
                sensing_radius,
                tx_radius,
                speed,
                aoi,
                deployment,
                timing,
                generator: GeneratorParams { trail_width: g.0, corner_fraction: g.1, central_fraction: g.2 },
                protocol: ProtocolSettings { role_exchange: p.0, max_ring: p.1, rest_offset: p.2 },
                batch: batch.map(|(a, n)| BatchSpec { seeds: SeedRange(a..a + n) }),
            }
        })
}

proptest! {
    #[test]
    fn parse_inverts_emit(s in scenario()) {
        let text = s.emit().unwrap();
        prop_assert_eq!(Scenario::parse(&text).unwrap(), s);
    }
}

#[test]
fn sample_files_parse() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let s = Scenario::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            s.resolve().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        }
    }
}

#[test]
fn minimal_file_takes_defaults() {
    let s = Scenario::parse(
        "id = \"m\"\nseed = 3\nmode = \"pp1\"\nsensors = 5\nsensing_radius = 5.0\ntx_radius = 11.0\n\
         [aoi]\nkind = \"rectangle\"\nwidth = 10.0\nheight = 10.0\n[deployment]\nkind = \"trail\"\n",
    )
    .unwrap();
    assert_eq!(s.speed, 1.0);
    assert_eq!(s.timing, Timing::default());
    assert!(s.batch.is_none());
}
