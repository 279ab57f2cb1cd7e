//! Shared fixtures for the benchmarks in `benches/`.

use std::path::Path;

use modp_core::testbed::{generate, PopulationSpec};
use modp_core::ResponseMatrix;

/// The bundled testbed, cut down to `rows` rows.
pub fn testbed(rows: usize) -> ResponseMatrix {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/testbed.toml");
    let mut spec = PopulationSpec::load(path).expect("bundled testbed spec");
    spec.rows = rows;
    generate(&spec, 0).expect("testbed").matrix().expect("encode testbed")
}
