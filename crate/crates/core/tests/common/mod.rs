#![allow(dead_code)]

pub mod stub;

use std::path::PathBuf;

use sg4d::synth::{generate, ObjectSpec, ScenarioSpec, ShapeKind, SynthScene, Waypoint};

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(name)
}

pub fn four_boxes() -> ScenarioSpec {
    let text = std::fs::read_to_string(scenario_path("four_boxes.json")).unwrap();
    ScenarioSpec::from_json(&text).unwrap()
}

/// A static 50 m bar well clear of the moving boxes.
pub fn long_bar() -> ObjectSpec {
    ObjectSpec {
        name: "bar".into(),
        class: "barrier".into(),
        shape: ShapeKind::Box,
        size: [50.0, 0.5, 1.0],
        density_pts_per_m2: 10.0,
        color: Some([150, 90, 200]),
        trajectory: vec![Waypoint {
            t: 0.0,
            position: [1.5, -17.0, 0.5],
        }],
    }
}

pub fn scene(spec: &ScenarioSpec) -> SynthScene {
    generate(spec).unwrap()
}

pub fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}
