use slam_web::{gate_explorer, pipeline_demo, pose_graph_demo, pose_graph_demo_js};

#[test]
fn loop_closure_pulls_nodes_back() {
    let demo = pose_graph_demo(10, 0.02, 0.002, 10.0, 4).unwrap();
    assert_eq!(demo.before.len(), 10);
    assert_eq!(demo.after.len(), 10);
    assert!(demo.ate_after < 0.2 * demo.ate_before, "{} -> {}", demo.ate_before, demo.ate_after);
    assert!(demo.cost_trace.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn bad_arguments_come_back_as_json_errors() {
    let v: serde_json::Value = serde_json::from_str(&pose_graph_demo_js(2, 0.0, 0.0, 1.0, 0)).unwrap();
    assert!(v["error"].is_string());
}

#[test]
fn pipeline_demo_closes_the_loop() {
    let demo = pipeline_demo(200, 0.05, 0.5, 2.0, 0).unwrap();
    assert_eq!(demo.truth.len(), demo.frames);
    assert_eq!(demo.estimate.len(), demo.frames);
    assert!(!demo.loops.is_empty());
    assert_eq!(demo.boundaries[0], 0);
    assert!(demo.ate_cm < demo.open_loop_ate_cm);
}

#[test]
fn gates_stay_open_interval_and_vary_with_memory() {
    let a = gate_explorer(1.0, 3, 0).unwrap();
    assert_eq!(a.reset.len(), a.rows * a.cols);
    assert!(a.range[0] > 0.0 && a.range[1] < 1.0);
    assert!(a.memory_change > 0.0);
    let b = gate_explorer(100.0, 3, 0).unwrap();
    assert_ne!(a.update, b.update);
    let again = gate_explorer(1.0, 3, 0).unwrap();
    assert_eq!(a.update, again.update);
}
