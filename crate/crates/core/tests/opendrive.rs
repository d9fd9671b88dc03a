mod common;

use drivecov::opendrive::{export_network, to_xml, OpenDriveDocument};
use drivecov::orchestrator::ScenarioConfig;
use drivecov::sampler::{sample_mixed, Strategy, StrategyKind};
use drivecov::scene::{connect, grid_world, Port, PortRef, RoadElement, RoadNetwork};
use drivecov::Error;

fn round_trip(xml: &str) -> OpenDriveDocument {
    let doc = OpenDriveDocument::parse(xml).unwrap();
    assert_eq!(doc.check(), Vec::<String>::new());
    assert_eq!(doc.to_xml(), xml, "re-serialization changed the file");
    doc
}

#[test]
fn tjunction_instances_round_trip() {
    let cfg = ScenarioConfig::load(&common::scenario_path("tjunction.json")).unwrap();
    let set = sample_mixed(&cfg.params, &Strategy::plain(StrategyKind::Halton, 25), 3).unwrap();
    for s in &set.samples {
        let net = cfg.instantiate(&s.vector).unwrap().network;
        let doc = round_trip(&to_xml(&net, "t").unwrap());
        assert_eq!(doc.roads.len(), 6);
        assert_eq!(doc.junctions.len(), 1);
        assert_eq!(doc.junctions[0].connections.len(), 6);
        let len = s.vector.real("len").unwrap();
        let straight: Vec<_> = doc.roads.iter().filter(|r| r.junction == -1).collect();
        assert_eq!(straight.len(), 3);
        for r in straight {
            assert!((r.length - len).abs() <= 5e-7, "{} vs {len}", r.length);
        }
    }
}

#[test]
fn grid_round_trips() {
    let net = grid_world(3, 3, 2, 40.0).unwrap();
    let doc = round_trip(&to_xml(&net, "grid").unwrap());
    assert_eq!(doc.junctions.len(), 9);
    assert_eq!(doc.roads.iter().filter(|r| r.junction == -1).count(), 18);
    // six port pairs per four-way junction
    assert_eq!(doc.roads.iter().filter(|r| r.junction >= 0).count(), 9 * 6);
}

#[test]
fn export_writes_the_file() {
    let dir = std::env::temp_dir().join(format!("odr-export-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("single.xodr");
    let net = RoadNetwork::from(RoadElement::straight("r", 12.5, 4).unwrap());
    export_network(&net, &path).unwrap();
    let xml = std::fs::read_to_string(&path).unwrap();
    assert!(xml.starts_with("<?xml"));
    let doc = round_trip(&xml);
    assert_eq!(doc.roads.len(), 1);
    assert_eq!(doc.roads[0].lanes.len(), 4);
    assert!(std::fs::read_dir(&dir).unwrap().all(|e| !e.unwrap().file_name().to_string_lossy().ends_with(".tmp")));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn shifted_road_breaks_continuity() {
    let a = RoadElement::straight("a", 20.0, 2).unwrap();
    let b = RoadElement::straight("b", 30.0, 2).unwrap();
    let net = connect(a, vec![(PortRef::new("a", Port::Two), b.into(), PortRef::new("b", Port::One))]).unwrap();
    let mut doc = OpenDriveDocument::parse(&to_xml(&net, "ab").unwrap()).unwrap();
    assert!(doc.check().is_empty());
    doc.roads[1].geometry[0].x += 1e-3;
    assert!(!doc.check().is_empty());
}

#[test]
fn wrong_length_sum_is_reported() {
    let net = RoadNetwork::from(RoadElement::straight("r", 10.0, 2).unwrap());
    let mut doc = OpenDriveDocument::parse(&to_xml(&net, "r").unwrap()).unwrap();
    doc.roads[0].length = 11.0;
    assert!(doc.check().iter().any(|p| p.contains("length")));
}

#[test]
fn other_revisions_and_broken_xml_are_rejected() {
    let net = RoadNetwork::from(RoadElement::straight("r", 10.0, 2).unwrap());
    let xml = to_xml(&net, "r").unwrap();
    let other = xml.replace("revMinor=\"4\"", "revMinor=\"6\"");
    assert!(matches!(OpenDriveDocument::parse(&other), Err(Error::Xml(_))));
    assert!(matches!(OpenDriveDocument::parse(&xml[..xml.len() / 2]), Err(Error::Xml(_))));
}

#[test]
fn invalid_network_is_refused() {
    let cross = |id: &str| RoadNetwork::from(RoadElement::cross_intersection(id, 2).unwrap());
    let w = cross("w");
    let z = connect(cross("z"), vec![(PortRef::new("z", Port::Two), w, PortRef::new("w", Port::Four))]).unwrap();
    let y = connect(cross("y"), vec![(PortRef::new("y", Port::Three), z, PortRef::new("z", Port::One))]).unwrap();
    let x = connect(cross("x"), vec![(PortRef::new("x", Port::Four), y, PortRef::new("y", Port::Two))]).unwrap();
    let a = RoadElement::straight("a", 30.0, 2).unwrap();
    let net = connect(a, vec![(PortRef::new("a", Port::Two), x, PortRef::new("x", Port::Three))]).unwrap();
    assert!(matches!(to_xml(&net, "bad"), Err(Error::Validation(_))));
}
