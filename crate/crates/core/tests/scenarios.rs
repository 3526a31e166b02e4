//! Whole-loop behaviour on small hand-written worlds.

use seatrack::config::ScenarioConfig;
use seatrack::eval::compute_report;
use seatrack::geom::RigidTransform;
use seatrack::linalg::Vec3;
use seatrack::sim::{run_scenario, Event, Record, RunLog};
use seatrack::Error;

fn run(toml: &str) -> RunLog {
    run_scenario(&ScenarioConfig::from_toml_str(toml).unwrap()).unwrap()
}

fn events(log: &RunLog) -> Vec<(f64, Event)> {
    log.records
        .iter()
        .filter_map(|r| match r {
            Record::Event { t, event, .. } => Some((*t, event.clone())),
            _ => None,
        })
        .collect()
}

#[test]
fn empty_sea_produces_no_fused_tracks() {
    let log = run("seed = 2\nduration = 20.0\n[[agents]]\nid = 1\nposition = [0.0, 0.0, 25.0]\n");
    let s = log.summary().unwrap();
    assert_eq!(s.containers, 0);
    assert!(events(&log).is_empty());
    let r = compute_report(&log).unwrap();
    assert!(r.errors.is_none());
    assert!(r.containers.is_empty());
    assert_eq!(s.track_audit.violations + s.fusion_audit.violations, 0);
}

#[test]
fn single_container_is_done_and_handed_off_in_vessel_frame() {
    let log = run("seed = 5\nduration = 60.0\n\
         [vessel]\nposition = [10.0, -30.0, 0.0]\nyaw_deg = 90.0\n\
         [[agents]]\nid = 1\nposition = [0.0, 0.0, 20.0]\n\
         [[containers]]\nid = 1\nposition = [5.0, 3.0, 0.0]\n");
    let ev = events(&log);
    let done = ev
        .iter()
        .find_map(|(t, e)| matches!(e, Event::Done { .. }).then_some(*t))
        .expect("done event");
    let handoff = ev
        .iter()
        .find_map(|(t, e)| match e {
            Event::Handoff {
                uav,
                target,
                vessel_position,
            } => Some((*t, *uav, *target, *vessel_position)),
            _ => None,
        })
        .expect("handoff event");
    assert!(handoff.0 >= done);
    assert_eq!(handoff.1, 1);

    // the handed-off position, mapped back to the world, lands near the container
    let vessel = RigidTransform::new(
        *RigidTransform::rot_z(90f64.to_radians()).rotation(),
        Vec3::new(10.0, -30.0, 0.0),
    )
    .unwrap();
    let world = vessel.apply(&handoff.3);
    assert!((world - Vec3::new(5.0, 3.0, 0.0)).norm() < 1.0, "{world:?}");

    let r = compute_report(&log).unwrap();
    assert!(r.all_containers_done);
    assert_eq!(r.identity.idsw, 0);
    assert_eq!(r.containers[0].track, Some(handoff.2));
}

#[test]
fn lossy_bus_still_converges() {
    let log = run("seed = 8\nduration = 60.0\n[bus]\ndrop_probability = 0.5\n\
         [[agents]]\nid = 1\nposition = [0.0, 0.0, 20.0]\n\
         [[agents]]\nid = 2\nposition = [10.0, 0.0, 20.0]\n\
         [[containers]]\nid = 1\nposition = [5.0, 3.0, 0.0]\n");
    let s = log.summary().unwrap();
    assert!(s.bus.dropped > 0 && s.bus.delivered > 0);
    assert_eq!(s.bus.dropped + s.bus.delivered, s.bus.messages_sent);
    assert!(compute_report(&log).unwrap().all_containers_done);
}

#[test]
fn config_errors_carry_field_paths() {
    let agent = "[[agents]]\nid = 1\nposition = [0.0, 0.0, 20.0]\n";
    let cases = [
        (format!("seed = 1\nduration = -1.0\n{agent}"), "duration"),
        (
            format!("seed = 1\nduration = 1.0\n{agent}[alloc]\ncapacity = 0\n"),
            "alloc.capacity",
        ),
        (
            format!("seed = 1\nduration = 1.0\n{agent}[rates]\ntick_hz = 10.0\ncomm_hz = 3.0\n"),
            "rates.comm_hz",
        ),
        (format!("seed = 1\nduration = 1.0\n{agent}{agent}"), "agents[1].id"),
        (
            format!("seed = 1\nduration = 1.0\n{agent}[fuse]\nretire_after = 0.0\n"),
            "fuse.retire_after",
        ),
        ("seed = 1\nduration = 1.0\n".to_string(), "<root>"),
    ];
    for (toml, path) in cases {
        match ScenarioConfig::from_toml_str(&toml) {
            Err(Error::Config { path: p, .. }) => assert_eq!(p, path, "{toml}"),
            other => panic!("{toml}: {other:?}"),
        }
    }
}

#[test]
fn config_round_trips_through_toml() {
    let text =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/paper_like.toml")).unwrap();
    let cfg = ScenarioConfig::from_toml_str(&text).unwrap();
    let again = ScenarioConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
    assert_eq!(cfg, again);
}
