//! Single-run and campaign execution with CSV artifact emission.
//!
//! A run is deterministic given its seed and stream: the generator is a
//! counter-based stream cipher, each campaign run owning the stream equal to
//! its run index under the campaign seed. Runs of one campaign execute in
//! parallel and are aggregated in index order, so results are independent of
//! the parallelism degree, and the same seed always reproduces the same
//! bytes in every artifact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::analysis::{
    campaign_aggregate, lyapunov_monitor, run_metrics, CampaignSummary, LyapunovReport,
    MonitorMode, RunMetrics,
};
use crate::error::{Error, Result};
use crate::hybrid::{initial_state, simulate, HybridTrajectory, Setup};
use crate::scenario::Scenario;
use crate::triggering::Scheme;

/// Everything produced by one simulation run.
pub struct RunOutput {
    /// Normalized scenario the run executed.
    pub scenario: Scenario,
    pub trajectory: HybridTrajectory,
    pub metrics: RunMetrics,
    pub lyapunov: LyapunovReport,
}

/// Compact per-run record kept by campaigns (trajectories are dropped).
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub run: u64,
    pub metrics: RunMetrics,
    pub lyap_mode: MonitorMode,
    pub lyap_jump_increases: usize,
    pub lyap_flow_increases: usize,
    pub lyap_rate_violations: usize,
}

/// One cell of a campaign grid: a scheme, a clock reset value, and the runs.
pub struct CampaignCell {
    pub scheme: Scheme,
    pub b: f64,
    pub records: Vec<RunRecord>,
    pub summary: CampaignSummary,
}

/// Runs a scenario with the RNG stream derived from `(seed, stream)`.
pub fn run_scenario_stream(scenario: &Scenario, seed: u64, stream: u64) -> Result<RunOutput> {
    let norm = scenario.normalize()?;
    let setup = norm.setup()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let initial = initial_state(&setup, &norm.init_spec(), &mut rng)?;
    let trajectory = simulate(&setup, norm.sim_config(), initial, rng)?;
    let lyapunov = lyapunov_monitor(&trajectory, &setup);
    let metrics = run_metrics(&trajectory, &setup, &lyapunov)?;
    Ok(RunOutput {
        scenario: norm,
        trajectory,
        metrics,
        lyapunov,
    })
}

/// Runs a scenario on stream 0 of its configured seed.
pub fn run_scenario(scenario: &Scenario) -> Result<RunOutput> {
    run_scenario_stream(scenario, scenario.sim.seed, 0)
}

/// Executes `runs` seeds of every `(scheme, b)` grid cell, in parallel
/// across runs. The campaign seed is the scenario's; run `i` owns stream
/// `i`, so all schemes and reset values see the same initial conditions.
pub fn run_campaign(
    base: &Scenario,
    schemes: &[Scheme],
    bs: &[f64],
    runs: usize,
) -> Result<Vec<CampaignCell>> {
    if schemes.is_empty() || bs.is_empty() || runs == 0 {
        return Err(Error::EmptyCampaign(
            "campaign needs at least one scheme, one b value and one run".into(),
        ));
    }
    let seed = base.sim.seed;
    let mut cells = Vec::with_capacity(schemes.len() * bs.len());
    for &scheme in schemes {
        for &b in bs {
            let mut cell_scenario = base.clone();
            cell_scenario.trigger.scheme = scheme;
            cell_scenario.trigger.b = b;
            let norm = cell_scenario.normalize()?;
            let records: Vec<RunRecord> = (0..runs as u64)
                .into_par_iter()
                .map(|i| {
                    let out = run_scenario_stream(&norm, seed, i)?;
                    Ok(RunRecord {
                        run: i,
                        metrics: out.metrics,
                        lyap_mode: out.lyapunov.mode,
                        lyap_jump_increases: out.lyapunov.jump_increases,
                        lyap_flow_increases: out.lyapunov.flow_increases,
                        lyap_rate_violations: out.lyapunov.rate_violations,
                    })
                })
                .collect::<Result<_>>()?;
            let metrics: Vec<RunMetrics> = records.iter().map(|r| r.metrics.clone()).collect();
            let summary = campaign_aggregate(&metrics)?;
            cells.push(CampaignCell {
                scheme,
                b,
                records,
                summary,
            });
        }
    }
    Ok(cells)
}

fn push_row(buf: &mut String, fields: &[String]) {
    buf.push_str(&fields.join(","));
    buf.push('\n');
}

fn block_headers(prefix: &str, count: usize, per: usize) -> Vec<String> {
    (0..count)
        .flat_map(|i| {
            (0..per).map(move |c| {
                if per == 1 {
                    format!("{prefix}_{}", i + 1)
                } else {
                    format!("{prefix}_{}_{}", i + 1, c + 1)
                }
            })
        })
        .collect()
}

/// Trajectory CSV: `t, k, p_*, v_*, zhat_*, trigger_*`.
pub fn trajectory_csv(out: &RunOutput, setup: &Setup) -> String {
    let np = setup.np;
    let n = setup.node_count();
    let m = setup.edge_count();
    let mut header = vec!["t".to_string(), "k".to_string()];
    header.extend(block_headers("p", n, np));
    header.extend(block_headers("v", n, np));
    header.extend(block_headers("zhat", m, np));
    header.extend(block_headers("trigger", m, 1));
    let mut buf = String::new();
    push_row(&mut buf, &header);
    for s in &out.trajectory.samples {
        let mut row = vec![format!("{}", s.t), format!("{}", s.k)];
        row.extend(s.state.p.iter().map(|v| format!("{v}")));
        row.extend(s.state.v.iter().map(|v| format!("{v}")));
        row.extend(s.state.zhat.iter().map(|v| format!("{v}")));
        row.extend(s.state.trigger.values.iter().map(|v| format!("{v}")));
        push_row(&mut buf, &row);
    }
    buf
}

/// Event CSV: `t, k, edge` with 1-based edge ids.
pub fn events_csv(out: &RunOutput) -> String {
    let mut buf = String::from("t,k,edge\n");
    for e in &out.trajectory.events {
        let _ = writeln!(buf, "{},{},{}", e.t, e.k, e.edge + 1);
    }
    buf
}

/// Metrics CSV rows shared by single runs and campaign cells.
fn metrics_header(m: usize) -> Vec<String> {
    let mut h = vec![
        "scheme".to_string(),
        "b".to_string(),
        "run".to_string(),
        "events_total".to_string(),
    ];
    h.extend(block_headers("events_edge", m, 1));
    h.push("t5".to_string());
    h.push("t5_reached".to_string());
    h.extend(block_headers("min_interevent_edge", m, 1));
    h.push("max_state_norm".to_string());
    h.push("lyap_max_increase".to_string());
    h.push("sat_breaches".to_string());
    h
}

fn metrics_row(scheme: Scheme, b: f64, run: u64, metrics: &RunMetrics) -> Vec<String> {
    let mut row = vec![
        scheme.tag().to_string(),
        format!("{b}"),
        format!("{run}"),
        format!("{}", metrics.events_total),
    ];
    row.extend(metrics.events_per_edge.iter().map(|c| format!("{c}")));
    row.push(metrics.t5.map(|t| format!("{t}")).unwrap_or_default());
    row.push(format!("{}", metrics.t5.is_some()));
    row.extend(
        metrics
            .min_interevent
            .iter()
            .map(|g| g.map(|v| format!("{v}")).unwrap_or_default()),
    );
    row.push(format!("{}", metrics.max_state_norm));
    row.push(format!("{}", metrics.lyap_max_increase));
    row.push(format!("{}", metrics.sat_breaches));
    row
}

pub fn metrics_csv_single(out: &RunOutput, setup: &Setup) -> String {
    let mut buf = String::new();
    push_row(&mut buf, &metrics_header(setup.edge_count()));
    push_row(
        &mut buf,
        &metrics_row(setup.scheme, out.scenario.trigger.b, 0, &out.metrics),
    );
    buf
}

/// Energy CSV: `t, k, u_phys, u_cyber, u_total, mode`.
pub fn lyapunov_csv(out: &RunOutput) -> String {
    let mut buf = String::from("t,k,u_phys,u_cyber,u_total,mode\n");
    for s in &out.lyapunov.samples {
        let _ = writeln!(
            buf,
            "{},{},{},{},{},{}",
            s.t,
            s.k,
            s.u_phys,
            s.u_cyber,
            s.u_total,
            out.lyapunov.mode.tag()
        );
    }
    buf
}

/// Long-format plot data: `t, series, value` with one series per position
/// and internal-state component.
pub fn plot_data_csv(out: &RunOutput, setup: &Setup) -> String {
    let np = setup.np;
    let n = setup.node_count();
    let p_names = block_headers("p", n, np);
    let v_names = block_headers("v", n, np);
    let mut buf = String::from("t,series,value\n");
    for s in &out.trajectory.samples {
        for (name, v) in p_names.iter().zip(&s.state.p) {
            let _ = writeln!(buf, "{},{},{}", s.t, name, v);
        }
        for (name, v) in v_names.iter().zip(&s.state.v) {
            let _ = writeln!(buf, "{},{},{}", s.t, name, v);
        }
    }
    buf
}

/// Writes `trajectory.csv`, `events.csv`, `metrics.csv` and `lyapunov.csv`.
pub fn write_run_artifacts(out: &RunOutput, dir: &Path) -> Result<()> {
    let setup = out.scenario.setup()?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("trajectory.csv"), trajectory_csv(out, &setup))?;
    fs::write(dir.join("events.csv"), events_csv(out))?;
    fs::write(dir.join("metrics.csv"), metrics_csv_single(out, &setup))?;
    fs::write(dir.join("lyapunov.csv"), lyapunov_csv(out))?;
    Ok(())
}

/// Writes the long-format plot CSV for a finished run.
pub fn write_plot_data(out: &RunOutput, path: &Path) -> Result<()> {
    let setup = out.scenario.setup()?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, plot_data_csv(out, &setup))?;
    Ok(())
}

fn cell_dir_name(scheme: Scheme, b: f64) -> String {
    format!("{}_b{}", scheme.tag(), b)
}

/// Campaign summary CSV: one row per cell.
pub fn campaign_summary_csv(cells: &[CampaignCell]) -> String {
    let mut buf = String::from(
        "scheme,b,runs,mean_events,std_events,mean_t5,std_t5,reached_fraction\n",
    );
    for cell in cells {
        let _ = writeln!(
            buf,
            "{},{},{},{},{},{},{},{}",
            cell.scheme.tag(),
            cell.b,
            cell.summary.runs,
            cell.summary.mean_events,
            cell.summary.std_events,
            cell.summary.mean_t5.map(|v| v.to_string()).unwrap_or_default(),
            cell.summary.std_t5.map(|v| v.to_string()).unwrap_or_default(),
            cell.summary.reached_fraction
        );
    }
    buf
}

/// Aligned plain-text table of mean event counts and mean times-to-5%,
/// schemes as rows and reset values as columns.
pub fn campaign_summary_table(cells: &[CampaignCell]) -> String {
    let mut bs: Vec<f64> = cells.iter().map(|c| c.b).collect();
    bs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    bs.dedup();
    let mut schemes: Vec<Scheme> = Vec::new();
    for c in cells {
        if !schemes.contains(&c.scheme) {
            schemes.push(c.scheme);
        }
    }
    let find = |scheme: Scheme, b: f64| cells.iter().find(|c| c.scheme == scheme && c.b == b);

    let mut out = String::new();
    let _ = write!(out, "{:<24}", "");
    for b in &bs {
        let _ = write!(out, "{:>12}", format!("b={b}"));
    }
    out.push('\n');
    for (label, pick) in [
        (
            "mean events",
            Box::new(|c: &CampaignCell| Some(c.summary.mean_events))
                as Box<dyn Fn(&CampaignCell) -> Option<f64>>,
        ),
        ("mean t5% [s]", Box::new(|c: &CampaignCell| c.summary.mean_t5)),
    ] {
        for (row_idx, &scheme) in schemes.iter().enumerate() {
            let row_label = if row_idx == 0 { label } else { "" };
            let _ = write!(out, "{:<18}{:<6}", row_label, scheme.tag());
            for &b in &bs {
                match find(scheme, b).and_then(&pick) {
                    Some(v) => {
                        let _ = write!(out, "{:>12.4}", v);
                    }
                    None => {
                        let _ = write!(out, "{:>12}", "-");
                    }
                }
            }
            out.push('\n');
        }
    }
    let runs = cells.first().map(|c| c.summary.runs).unwrap_or(0);
    let _ = writeln!(out, "\nruns per cell: {runs}");
    for c in cells {
        if c.summary.reached_fraction < 1.0 {
            let _ = writeln!(
                out,
                "note: {} b={} reached the 5% threshold in {:.0}% of runs",
                c.scheme.tag(),
                c.b,
                100.0 * c.summary.reached_fraction
            );
        }
    }
    out
}

/// Writes per-cell metrics plus the consolidated summary CSV and table.
pub fn write_campaign_artifacts(cells: &[CampaignCell], setup_edges: usize, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for cell in cells {
        let cell_dir = dir.join(cell_dir_name(cell.scheme, cell.b));
        fs::create_dir_all(&cell_dir)?;
        let mut buf = String::new();
        push_row(&mut buf, &metrics_header(setup_edges));
        for r in &cell.records {
            push_row(&mut buf, &metrics_row(cell.scheme, cell.b, r.run, &r.metrics));
        }
        fs::write(cell_dir.join("metrics.csv"), buf)?;
    }
    fs::write(dir.join("summary.csv"), campaign_summary_csv(cells))?;
    fs::write(dir.join("summary.txt"), campaign_summary_table(cells))?;
    Ok(())
}
