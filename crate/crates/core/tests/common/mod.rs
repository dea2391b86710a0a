#![allow(dead_code)]

use std::path::PathBuf;

use phasecap::{load_case, NetworkCase};

pub const BUNDLED: [&str; 5] = [
    "two_node",
    "star_4node",
    "feeder_13node",
    "symmetric_3node",
    "weak_line",
];

pub fn case_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../cases")
        .join(format!("{name}.json"))
}

pub fn bundled(name: &str) -> NetworkCase {
    load_case(case_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Per-unit cap for a cap given in kW.
pub fn cap_pu(case: &NetworkCase, kw: f64) -> f64 {
    case.base.kw_to_pu(kw)
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}
