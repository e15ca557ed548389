//! Command implementations. Every command writes its result tables plus a
//! machine-readable `summary.json` into the output directory; `report`
//! aggregates the summaries of previous runs.

use std::fs;
use std::path::{Path, PathBuf};

use aoictl_core::anneal::{sa_optimize, AnnealConfig, AnnealTrace, Schedule};
use aoictl_core::aoi::UploadAnalytics;
use aoictl_core::coloring::accelerated_sa;
use aoictl_core::io::{
    parse_centers, parse_trace, parse_xy_trace, read_thresholds, write_model, write_thresholds,
};
use aoictl_core::joac::JoacInstance;
use aoictl_core::mdp::{
    average_reward, extract_thresholds, solve_average_reward, upload_mass_per_class,
    upload_set_conditions,
};
use aoictl_core::mobility::{assign_cells, estimate_from_trace, Resampling};
use aoictl_core::sim::{simulate_from_trace, simulate_policy, simulate_upload_cycles};
use serde_json::{json, Value};

use crate::config::load_instance;
use crate::error::CliError;

/// Fixed-precision float formatting for delimited tables.
fn fmt(v: f64) -> String {
    format!("{v:.8}")
}

fn write_table(dir: &Path, name: &str, header: &str, rows: &[String]) -> Result<(), CliError> {
    let mut text = String::from(header);
    text.push('\n');
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    fs::write(dir.join(name), text)?;
    Ok(())
}

fn write_summary(dir: &Path, summary: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(summary).expect("serializable summary");
    text.push('\n');
    fs::write(dir.join("summary.json"), text)?;
    Ok(())
}

fn ensure_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// CCDF curve rows `origin<TAB>d<TAB>P(age > d)` for d = 0..=t_cap.
fn ccdf_rows(analytics: &UploadAnalytics) -> Vec<String> {
    let mut rows = Vec::new();
    for origin in 0..analytics.num_locations() {
        for d in 0..=analytics.t_cap() {
            rows.push(format!("{origin}\t{d}\t{}", fmt(analytics.ccdf(origin, d))));
        }
    }
    rows
}

fn ccdf_json(analytics: &UploadAnalytics) -> Value {
    let curves: Vec<Vec<f64>> = (0..analytics.num_locations())
        .map(|origin| {
            (0..=analytics.t_cap())
                .map(|d| analytics.ccdf(origin, d))
                .collect()
        })
        .collect();
    json!(curves)
}

pub fn cmd_estimate(
    trace: &Path,
    resample_step: f64,
    centers: Option<&Path>,
    nearest: bool,
    out: &Path,
) -> Result<(), CliError> {
    ensure_out(out)?;
    let text = fs::read_to_string(trace)?;
    let records = match centers {
        Some(centers_path) => {
            let centers = parse_centers(&fs::read_to_string(centers_path)?)?;
            let xy = parse_xy_trace(&text)?;
            assign_cells(&xy, &centers)
        }
        None => parse_trace(&text)?,
    };
    let resampling = if nearest {
        Resampling::Nearest
    } else {
        Resampling::HoldLast
    };
    let estimate = estimate_from_trace(&records, resample_step, resampling)?;
    write_model(&out.join("model.txt"), &estimate.model)?;
    fs::write(
        out.join("remap.txt"),
        aoictl_core::io::render_remap(&estimate.remap),
    )?;
    write_summary(
        out,
        &json!({
            "kind": "estimate",
            "locations": estimate.model.num_locations(),
            "records": records.len(),
            "resample_step": resample_step,
            "remap": estimate.remap,
        }),
    )?;
    println!(
        "estimated {} locations from {} records",
        estimate.model.num_locations(),
        records.len()
    );
    Ok(())
}

pub fn cmd_solve(instance_path: &Path, tolerance: f64, out: &Path) -> Result<(), CliError> {
    ensure_out(out)?;
    let loaded = load_instance(instance_path)?;
    let instance = loaded.mdp()?;
    let solution = solve_average_reward(&instance, tolerance)?;
    let thresholds = extract_thresholds(&solution)?;
    write_thresholds(&out.join("thresholds.txt"), &thresholds)?;

    let l = instance.num_locations();
    let mut value_rows = Vec::new();
    for x in 1..=instance.max_age {
        let row: Vec<String> = (0..l).map(|loc| fmt(solution.value(x, loc))).collect();
        value_rows.push(format!("{x}\t{}", row.join("\t")));
    }
    write_table(out, "value_table.txt", "# age\tV(age, location 0..L-1)", &value_rows)?;

    let prediction = upload_set_conditions(&instance);
    let mass = upload_mass_per_class(&instance, &thresholds)?;
    let derived: Vec<usize> = mass
        .iter()
        .enumerate()
        .filter(|(_, &m)| m > 1e-12)
        .map(|(i, _)| i)
        .collect();
    write_summary(
        out,
        &json!({
            "kind": "solve",
            "prices": instance.prices,
            "gain": solution.gain,
            "thresholds": thresholds.thresholds(),
            "predicted_classes": prediction.predicted_classes,
            "derived_classes": derived,
            "prediction_matches": prediction.predicted_classes == derived,
            "iterations": solution.iterations,
            "residual": solution.residual,
        }),
    )?;
    println!(
        "gain {} thresholds {:?}",
        fmt(solution.gain),
        thresholds.thresholds()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_optimize(
    instance_path: &Path,
    accelerated: bool,
    seed: u64,
    schedule: Schedule,
    a_hat: Option<f64>,
    t_max: Option<usize>,
    iteration_cap: Option<u64>,
    out: &Path,
) -> Result<(), CliError> {
    ensure_out(out)?;
    let loaded = load_instance(instance_path)?;
    let instance = loaded.joac()?;
    let mut config = AnnealConfig {
        schedule,
        a_hat,
        t_max,
        seed,
        ..AnnealConfig::default()
    };
    if let Some(cap) = iteration_cap {
        config.iteration_cap = cap;
    }

    let (trace, coloring_extra) = if accelerated {
        let fast = accelerated_sa(&instance, &config)?;
        let coloring_rows: Vec<String> = fast
            .coloring_history
            .iter()
            .map(|(slot, colors)| format!("{slot}\t{colors}"))
            .collect();
        write_table(out, "coloring_trace.txt", "# slot\tcolors_in_use", &coloring_rows)?;
        let extra = json!({
            "colors_in_use": fast.coloring.num_used(),
            "reverted_merges": fast.reverted,
        });
        (fast.anneal, Some(extra))
    } else {
        (sa_optimize(&instance, &config)?, None)
    };
    write_optimize_outputs(&instance, &trace, accelerated, seed, &config, coloring_extra, out)
}

fn write_optimize_outputs(
    instance: &JoacInstance,
    trace: &AnnealTrace,
    accelerated: bool,
    seed: u64,
    config: &AnnealConfig,
    coloring_extra: Option<Value>,
    out: &Path,
) -> Result<(), CliError> {
    write_thresholds(&out.join("thresholds.txt"), &trace.best)?;

    let cost_rows: Vec<String> = trace
        .cost_history
        .iter()
        .map(|(slot, cost)| format!("{slot}\t{}", fmt(*cost)))
        .collect();
    write_table(out, "anneal_trace.txt", "# slot\tcost", &cost_rows)?;
    let best_rows: Vec<String> = trace
        .best_history
        .iter()
        .map(|(slot, cost)| format!("{slot}\t{}", fmt(*cost)))
        .collect();
    write_table(out, "best_trace.txt", "# slot\tbest_cost", &best_rows)?;

    let eval = instance.evaluate(&trace.best)?;
    write_table(out, "aoi_ccdf.txt", "# origin\td\tccdf", &ccdf_rows(&eval.analytics))?;
    let feasibility = instance.feasibility_of(&eval);

    let mut summary = json!({
        "kind": "optimize",
        "accelerated": accelerated,
        "seed": seed,
        "d": instance.latency_target,
        "cost": trace.best_cost,
        "thresholds": trace.best.thresholds(),
        "iterations": trace.iterations,
        "accepted": trace.accepted,
        "rejected_infeasible": trace.rejected_infeasible,
        "stop_reason": format!("{:?}", trace.stop_reason),
        "feasible": feasibility.feasible(),
        "location_costs": instance.costs,
        "location_uploads": eval.rates.uploads,
        "ccdf": ccdf_json(&eval.analytics),
        "best_history": trace.best_history,
        "t_max": config.t_max,
    });
    if let Some(extra) = coloring_extra {
        let map = summary.as_object_mut().expect("object summary");
        map.insert("coloring".to_string(), extra);
    }
    write_summary(out, &summary)?;
    println!(
        "best cost {} thresholds {:?} after {} slots ({:?})",
        fmt(trace.best_cost),
        trace.best.thresholds(),
        trace.iterations,
        trace.stop_reason
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_simulate(
    instance_path: &Path,
    thresholds_path: &Path,
    cycles: u64,
    slots: u64,
    replay: Option<&Path>,
    seed: u64,
    out: &Path,
) -> Result<(), CliError> {
    ensure_out(out)?;
    let loaded = load_instance(instance_path)?;
    let thresholds = read_thresholds(thresholds_path)?;
    let model = &loaded.model;

    let empirical = simulate_upload_cycles(model, &thresholds, cycles, seed);
    let analytics = UploadAnalytics::compute(model, &thresholds)?;
    let l = model.num_locations();
    let mut y_rows = Vec::new();
    for i in 0..l {
        for z in 0..l {
            y_rows.push(format!(
                "{i}\t{z}\t{}\t{}",
                fmt(empirical.y_hat[(i, z)]),
                fmt(analytics.per_device_rates()[(i, z)])
            ));
        }
    }
    write_table(out, "upload_rates.txt", "# origin\tlocation\ty_empirical\ty_analytic", &y_rows)?;

    let aoi_rows: Vec<String> = (0..l)
        .map(|i| {
            format!(
                "{i}\t{}\t{}",
                fmt(empirical.mean_aoi[i]),
                fmt(analytics.mean_aoi(i))
            )
        })
        .collect();
    write_table(out, "mean_aoi.txt", "# origin\tempirical\tanalytic", &aoi_rows)?;
    write_table(out, "aoi_ccdf.txt", "# origin\td\tccdf", &ccdf_rows(&analytics))?;

    let mut summary = json!({
        "kind": "simulate",
        "seed": seed,
        "cycles": cycles,
        "cycles_per_origin": empirical.cycles_per_origin,
        "mean_aoi_empirical": empirical.mean_aoi,
        "mean_aoi_analytic": (0..l).map(|i| analytics.mean_aoi(i)).collect::<Vec<f64>>(),
        "ccdf": ccdf_json(&analytics),
    });
    let map = summary.as_object_mut().expect("object summary");

    if slots > 0 {
        let instance = loaded.mdp()?;
        let result = simulate_policy(&instance, &thresholds, slots, slots / 10, seed);
        let exact = average_reward(&instance, &thresholds)?;
        map.insert(
            "reward".to_string(),
            json!({
                "slots": result.slots,
                "uploads": result.uploads,
                "average_reward": result.average_reward,
                "exact_average_reward": exact,
            }),
        );
        println!(
            "simulated reward {} over {} slots (exact {})",
            fmt(result.average_reward),
            result.slots,
            fmt(exact)
        );
    }

    if let Some(replay_path) = replay {
        let instance = loaded.mdp()?;
        let trajectory = parse_trajectory(&fs::read_to_string(replay_path)?)?;
        let result = simulate_from_trace(&instance, &thresholds, &trajectory)?;
        map.insert(
            "replay".to_string(),
            json!({
                "slots": result.slots,
                "uploads": result.uploads,
                "average_reward": result.average_reward,
            }),
        );
        println!(
            "replayed {} slots: {} uploads, reward {}",
            result.slots,
            result.uploads,
            fmt(result.average_reward)
        );
    }

    write_summary(out, &summary)?;
    println!("simulated {cycles} upload cycles over {l} origins");
    Ok(())
}

/// One location index per line.
fn parse_trajectory(text: &str) -> Result<Vec<usize>, CliError> {
    let mut out = Vec::new();
    for (number, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let loc: usize = trimmed.parse().map_err(|_| {
            CliError::Input(aoictl_core::io::IoError::Parse {
                line: number + 1,
                message: format!("expected a location index, got {trimmed:?}"),
            })
        })?;
        out.push(loc);
    }
    Ok(out)
}

pub fn cmd_report(run: &Path, out: &Path) -> Result<(), CliError> {
    ensure_out(out)?;
    let summaries = collect_summaries(run)?;
    if summaries.is_empty() {
        return Err(CliError::Report(format!(
            "no summary.json found under {run:?}"
        )));
    }

    let mut cost_vs_d: Vec<(u64, f64, String)> = Vec::new();
    let mut reward_rows = Vec::new();
    let mut share_rows = Vec::new();
    let mut ccdf_rows = Vec::new();
    let mut convergence_rows = Vec::new();
    let mut counted = 0usize;

    for (name, summary) in &summaries {
        match summary["kind"].as_str() {
            Some("optimize") => {
                counted += 1;
                let d = summary["d"].as_u64().unwrap_or(0);
                let cost = summary["cost"].as_f64().unwrap_or(f64::NAN);
                cost_vs_d.push((d, cost, name.clone()));
                share_rows.extend(traffic_share_rows(name, summary));
                ccdf_rows.extend(summary_ccdf_rows(name, summary));
                if let Some(history) = summary["best_history"].as_array() {
                    for pair in history {
                        let slot = pair[0].as_u64().unwrap_or(0);
                        let best = pair[1].as_f64().unwrap_or(f64::NAN);
                        convergence_rows.push(format!("{name}\t{slot}\t{}", fmt(best)));
                    }
                }
            }
            Some("solve") => {
                counted += 1;
                let prices: Vec<String> = summary["prices"]
                    .as_array()
                    .map(|a| {
                        a.iter()
                            .map(|p| fmt(p.as_f64().unwrap_or(f64::NAN)))
                            .collect()
                    })
                    .unwrap_or_default();
                let gain = summary["gain"].as_f64().unwrap_or(f64::NAN);
                reward_rows.push((prices, gain, name.clone()));
            }
            Some("simulate") => {
                counted += 1;
                ccdf_rows.extend(summary_ccdf_rows(name, summary));
            }
            _ => {}
        }
    }
    if counted == 0 {
        return Err(CliError::Report(format!(
            "no solve/optimize/simulate summaries under {run:?}"
        )));
    }

    cost_vs_d.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.2.cmp(&b.2)));
    let cost_rows: Vec<String> = cost_vs_d
        .iter()
        .map(|(d, cost, name)| format!("{d}\t{}\t{name}", fmt(*cost)))
        .collect();
    write_table(out, "cost_vs_d.txt", "# d\tcost\trun", &cost_rows)?;

    reward_rows.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.2.cmp(&b.2)));
    let reward_table: Vec<String> = reward_rows
        .iter()
        .map(|(prices, gain, name)| format!("{}\t{}\t{name}", prices.join(","), fmt(*gain)))
        .collect();
    write_table(out, "reward_vs_price.txt", "# prices\treward\trun", &reward_table)?;

    write_table(
        out,
        "traffic_share.txt",
        "# run\tcost_range_lo\tcost_range_hi\tshare",
        &share_rows,
    )?;
    write_table(out, "aoi_ccdf.txt", "# run\torigin\td\tccdf", &ccdf_rows)?;
    write_table(out, "convergence.txt", "# run\tslot\tbest_cost", &convergence_rows)?;
    write_summary(
        out,
        &json!({
            "kind": "report",
            "runs": counted,
        }),
    )?;
    println!("aggregated {counted} run(s) from {:?}", run);
    Ok(())
}

/// Upload-volume share per cost range: locations split into three
/// equal-width cost bins between the cheapest and the most expensive.
fn traffic_share_rows(name: &str, summary: &Value) -> Vec<String> {
    let costs: Vec<f64> = match summary["location_costs"].as_array() {
        Some(a) => a.iter().filter_map(|v| v.as_f64()).collect(),
        None => return Vec::new(),
    };
    let uploads: Vec<f64> = match summary["location_uploads"].as_array() {
        Some(a) => a.iter().filter_map(|v| v.as_f64()).collect(),
        None => return Vec::new(),
    };
    if costs.len() != uploads.len() || costs.is_empty() {
        return Vec::new();
    }
    let total: f64 = uploads.iter().sum();
    let lo = costs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = costs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let bins = if hi > lo { 3 } else { 1 };
    let width = if bins == 1 { 1.0 } else { (hi - lo) / bins as f64 };
    let mut rows = Vec::new();
    for b in 0..bins {
        let (b_lo, b_hi) = (lo + b as f64 * width, lo + (b + 1) as f64 * width);
        let mass: f64 = costs
            .iter()
            .zip(&uploads)
            .filter(|(&c, _)| c >= b_lo && (c < b_hi || b == bins - 1))
            .map(|(_, &y)| y)
            .sum();
        let share = if total > 0.0 { mass / total } else { 0.0 };
        rows.push(format!("{name}\t{}\t{}\t{}", fmt(b_lo), fmt(b_hi), fmt(share)));
    }
    rows
}

fn summary_ccdf_rows(name: &str, summary: &Value) -> Vec<String> {
    let mut rows = Vec::new();
    if let Some(curves) = summary["ccdf"].as_array() {
        for (origin, curve) in curves.iter().enumerate() {
            if let Some(values) = curve.as_array() {
                for (d, v) in values.iter().enumerate() {
                    rows.push(format!(
                        "{name}\t{origin}\t{d}\t{}",
                        fmt(v.as_f64().unwrap_or(f64::NAN))
                    ));
                }
            }
        }
    }
    rows
}

/// summary.json files directly in `run` or one level below, in path order.
fn collect_summaries(run: &Path) -> Result<Vec<(String, Value)>, CliError> {
    if !run.is_dir() {
        return Err(CliError::Report(format!("{run:?} is not a directory")));
    }
    let mut paths: Vec<(String, PathBuf)> = Vec::new();
    let direct = run.join("summary.json");
    if direct.is_file() {
        paths.push((".".to_string(), direct));
    }
    let mut entries: Vec<_> = fs::read_dir(run)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let candidate = entry.path().join("summary.json");
        if candidate.is_file() {
            paths.push((entry.file_name().to_string_lossy().into_owned(), candidate));
        }
    }
    let mut summaries = Vec::new();
    for (name, path) in paths {
        let text = fs::read_to_string(&path)?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Report(format!("{path:?}: {e}")))?;
        summaries.push((name, value));
    }
    Ok(summaries)
}
