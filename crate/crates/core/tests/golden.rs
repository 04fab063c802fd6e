//! Snapshot tests. Set `UPDATE_GOLDEN=1` to rewrite the files under
//! `tests/golden/`.

use std::path::PathBuf;

use slam_core::frontend::decisions_to_jsonl;
use slam_core::pipeline::{run, PipelineConfig, RunOutput};
use slam_core::posegraph::write_g2o;
use slam_core::synth::{generate, single_room, NoiseSpec, OraclePredictor};

fn check(name: &str, actual: &str) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(expected == actual, "{name} differs from the snapshot");
}

fn small_run() -> RunOutput {
    let seq = generate(&single_room(5, 48)).unwrap();
    let noise = NoiseSpec { point_sigma: 0.002, drift_rot: 0.002, drift_trans: 0.001, ..Default::default() };
    let oracle = OraclePredictor::new(&seq, noise).unwrap();
    let cfg = PipelineConfig { frontend: slam_core::frontend::FrontendConfig { tau_anchor: 0.5, ..Default::default() }, ..Default::default() };
    run(&oracle, &seq, &cfg).unwrap()
}

#[test]
fn pipeline_outputs_match_snapshots() {
    let out = small_run();
    assert!(out.submaps.len() > 1);
    check("small_run.tum", &out.trajectory.to_tum());
    check("small_run.decisions.jsonl", &decisions_to_jsonl(&out.decisions));
    check("small_run.g2o", &write_g2o(&out.graph));
}
