//! End-to-end checks of the `aoictl` binary against library oracles.

use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use aoictl_core::io::{parse_thresholds, read_model, render_model};
use aoictl_core::joac::{Epsilon, JoacInstance};
use aoictl_core::mdp::AgingMdpInstance;
use aoictl_core::mobility::MobilityModel;
use aoictl_core::sim::exhaustive_threshold_search;
use nalgebra::dmatrix;

fn aoictl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aoictl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_success(output: &Output) {
    assert!(
        output.status.success(),
        "command failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
}

fn write_model_file(dir: &Path, model: &MobilityModel) -> String {
    let path = dir.join("model.txt");
    std::fs::write(&path, render_model(model)).unwrap();
    path.to_string_lossy().into_owned()
}

fn three_location_model() -> MobilityModel {
    MobilityModel::from_transitions(dmatrix![
        0.2, 0.5, 0.3;
        0.4, 0.2, 0.4;
        0.3, 0.3, 0.4;
    ])
    .unwrap()
}

#[test]
fn estimate_alternating_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.txt");
    let mut lines = String::new();
    for t in 0..10 {
        let cell = if t % 2 == 0 { "A" } else { "B" };
        lines.push_str(&format!("{}.0 dev0 {cell}\n", t * 2));
    }
    std::fs::write(&trace, lines).unwrap();
    let out = dir.path().join("run");
    let output = aoictl(&[
        "estimate",
        "--trace",
        trace.to_str().unwrap(),
        "--resample-step",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_success(&output);
    let model = read_model(&out.join("model.txt")).unwrap();
    assert_eq!(model.num_locations(), 2);
    assert!((model.transition(0, 1) - 1.0).abs() < 1e-12);
    assert!((model.transition(1, 0) - 1.0).abs() < 1e-12);
}

#[test]
fn estimate_empty_trace_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.txt");
    std::fs::write(&trace, "").unwrap();
    let output = aoictl(&[
        "estimate",
        "--trace",
        trace.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(5));
}

#[test]
fn solve_zero_price_class_has_zero_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let model_path = write_model_file(dir.path(), &three_location_model());
    let config = dir.path().join("instance.toml");
    std::fs::write(
        &config,
        format!(
            "model = {model_path:?}\nmax_age = 10\nutility = \"linear\"\n\n\
             [pricing]\nprices = [0.0, 6.0, 9.0]\n"
        ),
    )
    .unwrap();
    let out = dir.path().join("run");
    let output = aoictl(&[
        "solve",
        "--instance",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_success(&output);
    let thresholds =
        parse_thresholds(&std::fs::read_to_string(out.join("thresholds.txt")).unwrap()).unwrap();
    assert_eq!(thresholds.threshold(0), 0);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["kind"], "solve");
    assert!(summary["gain"].is_number());
}

fn offload_config(model_path: &str, costs: &str, d: usize) -> String {
    format!(
        "model = {model_path:?}\nmax_age = 8\nutility = \"linear\"\n\n\
         [offload]\ncosts = {costs}\ndevices = 10\nmean_size = 1.0\n\
         slot_seconds = 1.0\nlatency_target = {d}\nepsilon = 0.4\n"
    )
}

#[test]
fn optimize_small_instance_matches_exhaustive_search() {
    let dir = tempfile::tempdir().unwrap();
    let model = three_location_model();
    let model_path = write_model_file(dir.path(), &model);
    let config = dir.path().join("instance.toml");
    std::fs::write(&config, offload_config(&model_path, "[0.5, 4.0, 2.0]", 4)).unwrap();
    let out = dir.path().join("run");
    let output = aoictl(&[
        "optimize",
        "--instance",
        config.to_str().unwrap(),
        "--t-max",
        "2",
        "--seed",
        "3",
        "--iteration-cap",
        "20000",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_success(&output);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();

    let instance = JoacInstance {
        model: Arc::new(model),
        costs: vec![0.5, 4.0, 2.0],
        capacities: vec![f64::INFINITY; 3],
        device_count: 10,
        mean_size: 1.0,
        slot_seconds: 1.0,
        latency_target: 4,
        epsilon: Epsilon::Scalar(0.4),
        max_age: 8,
        utility: AgingMdpInstance::linear_utility(8),
        cap_t_max_at_d_plus_3: false,
    };
    let oracle = exhaustive_threshold_search(&instance, 2).unwrap();
    assert!((summary["cost"].as_f64().unwrap() - oracle.cost).abs() < 1e-9);
}

#[test]
fn optimize_uniform_costs_gives_demand_rate_cost() {
    let dir = tempfile::tempdir().unwrap();
    let model_path = write_model_file(dir.path(), &three_location_model());
    let config = dir.path().join("instance.toml");
    std::fs::write(&config, offload_config(&model_path, "[2.0, 2.0, 2.0]", 4)).unwrap();
    let out = dir.path().join("run");
    let output = aoictl(&[
        "optimize",
        "--instance",
        config.to_str().unwrap(),
        "--t-max",
        "2",
        "--iteration-cap",
        "2000",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_success(&output);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    // Every collected byte is uploaded exactly once, so with uniform costs
    // the objective is cost * N * F / kappa for any threshold vector.
    assert!((summary["cost"].as_f64().unwrap() - 2.0 * 10.0).abs() < 1e-9);
}

#[test]
fn simulate_reports_rates_and_reward() {
    let dir = tempfile::tempdir().unwrap();
    let model_path = write_model_file(dir.path(), &three_location_model());
    let config = dir.path().join("instance.toml");
    std::fs::write(
        &config,
        format!(
            "model = {model_path:?}\nmax_age = 8\nutility = \"linear\"\n\n\
             [pricing]\nprices = [0.0, 3.0, 1.0]\n"
        ),
    )
    .unwrap();
    let thresholds = dir.path().join("thresholds.txt");
    std::fs::write(&thresholds, "0\n2\n1\n").unwrap();
    let replay = dir.path().join("replay.txt");
    std::fs::write(&replay, "0\n1\n0\n1\n0\n1\n").unwrap();
    let out = dir.path().join("run");
    let output = aoictl(&[
        "simulate",
        "--instance",
        config.to_str().unwrap(),
        "--thresholds",
        thresholds.to_str().unwrap(),
        "--cycles",
        "20000",
        "--slots",
        "5000",
        "--replay",
        replay.to_str().unwrap(),
        "--seed",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_success(&output);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["kind"], "simulate");
    assert!(summary["reward"]["average_reward"].is_number());
    // Alternating replay with tau = (0, 2, ...): uploads happen at every
    // visit to location 0 (age threshold 0) and never reach age 3 at
    // location 1, so exactly the three visits to location 0 upload.
    assert_eq!(summary["replay"]["slots"], 6);
    assert_eq!(summary["replay"]["uploads"], 3);
}

#[test]
fn report_empty_dir_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let output = aoictl(&["report", "--run", dir.path().to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(10));
}

#[test]
fn report_price_sweep_and_cost_vs_d_tables() {
    let dir = tempfile::tempdir().unwrap();
    let model_path = write_model_file(dir.path(), &three_location_model());
    let runs = dir.path().join("runs");

    // Price sweep: raise one price, reward must not increase.
    for (i, p1) in [1.0, 3.0, 5.0].iter().enumerate() {
        let config = dir.path().join(format!("sweep{i}.toml"));
        std::fs::write(
            &config,
            format!(
                "model = {model_path:?}\nmax_age = 8\nutility = \"linear\"\n\n\
                 [pricing]\nprices = [0.0, {p1}, 2.0]\n"
            ),
        )
        .unwrap();
        let out = runs.join(format!("solve{i}"));
        assert_success(&aoictl(&[
            "solve",
            "--instance",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]));
    }

    // Cost vs d: loosen the latency target, optimal cost must not increase.
    for d in [2usize, 4, 6] {
        let config = dir.path().join(format!("d{d}.toml"));
        std::fs::write(&config, offload_config(&model_path, "[0.5, 4.0, 2.0]", d)).unwrap();
        let out = runs.join(format!("optimize_d{d}"));
        assert_success(&aoictl(&[
            "optimize",
            "--instance",
            config.to_str().unwrap(),
            "--iteration-cap",
            "20000",
            "--out",
            out.to_str().unwrap(),
        ]));
    }

    let report = dir.path().join("report");
    assert_success(&aoictl(&[
        "report",
        "--run",
        runs.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]));

    let rewards: Vec<f64> = std::fs::read_to_string(report.join("reward_vs_price.txt"))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split('\t').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(rewards.len(), 3);
    assert!(rewards.windows(2).all(|w| w[1] <= w[0] + 1e-9));

    let costs: Vec<f64> = std::fs::read_to_string(report.join("cost_vs_d.txt"))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split('\t').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(costs.len(), 3);
    assert!(costs.windows(2).all(|w| w[1] <= w[0] + 1e-9));

    // Share rows normalize per run.
    let shares = std::fs::read_to_string(report.join("traffic_share.txt")).unwrap();
    for run in ["optimize_d2", "optimize_d4", "optimize_d6"] {
        let total: f64 = shares
            .lines()
            .filter(|l| l.starts_with(run))
            .map(|l| l.split('\t').nth(3).unwrap().parse::<f64>().unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-6, "{run} shares sum to {total}");
    }
}
