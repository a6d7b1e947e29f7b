//! Seed batches, attacker sweeps and the files they produce.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Result, SimError};
use crate::metrics::{received_bandwidth_series, summarize, Summary};
use crate::network::{RunResult, World, WorldOptions};
use crate::scenario::{FlowPlan, Scenario, Scheme};
use crate::sim::{stream_rng, Time};
use crate::topology::{build_topology, random_placement, Topology};
use crate::traffic::{generate_flows, FlowSpec};

const PLACEMENT_STREAM: u64 = 0;
const FLOW_STREAM: u64 = 1;

/// Topology and flow list for one seed. Independent of the scheme.
pub fn prepare(scenario: &Scenario, seed: u64) -> Result<(Topology, Vec<FlowSpec>)> {
    let nodes = random_placement(scenario.node_count, scenario.area, &mut stream_rng(seed, PLACEMENT_STREAM));
    let topology = build_topology(nodes, scenario.area, scenario.radio_range_m)?;
    let flows = match &scenario.flows {
        FlowPlan::Explicit(f) => f.clone(),
        FlowPlan::Generated(mix) => generate_flows(&topology, mix, &mut stream_rng(seed, FLOW_STREAM))?,
    };
    Ok((topology, flows))
}

pub fn run_once(scenario: &Scenario, seed: u64, options: WorldOptions) -> Result<RunResult> {
    let (topology, flows) = prepare(scenario, seed)?;
    let scenario = Scenario {
        seed,
        ..scenario.clone()
    };
    World::new(&scenario, topology, flows, options)?.run()
}

#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub scheme: Scheme,
    pub result: RunResult,
    pub summary: Summary,
}

/// Every seed of `scenario`, in parallel. Results come back in seed-list order.
pub fn run_seeds(scenario: &Scenario, seeds: &[u64]) -> Result<Vec<SeedOutcome>> {
    seeds
        .par_iter()
        .map(|&seed| {
            let result = run_once(scenario, seed, WorldOptions::default())?;
            let summary = summarize(&result.metrics);
            Ok(SeedOutcome {
                seed,
                scheme: scenario.scheme,
                result,
                summary,
            })
        })
        .collect()
}

/// Mean over seeds of the legitimate received-bandwidth series.
pub fn averaged_series(outcomes: &[SeedOutcome], legitimate_only: bool) -> Vec<(Time, f64)> {
    let mut acc: Vec<(Time, f64)> = Vec::new();
    for o in outcomes {
        let s = received_bandwidth_series(&o.result.metrics, legitimate_only);
        if acc.is_empty() {
            acc = s.iter().map(|&(t, _)| (t, 0.0)).collect();
        }
        for (a, (_, v)) in acc.iter_mut().zip(s) {
            a.1 += v;
        }
    }
    let n = outcomes.len().max(1) as f64;
    acc.into_iter().map(|(t, v)| (t, v / n)).collect()
}

#[derive(Debug, Serialize)]
struct BucketRow {
    time_s: f64,
    flow_id: usize,
    delivered_bits: u64,
    sent_pkts: u64,
    delivered_pkts: u64,
    dropped_mac: u64,
    dropped_rejected: u64,
    dropped_queue: u64,
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let io = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(err) => SimError::io(path, err),
        other => SimError::io(path, std::io::Error::other(format!("{other:?}"))),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|e| SimError::io(path, e))
}

pub fn write_bucket_csv(path: &Path, result: &RunResult) -> Result<()> {
    let m = &result.metrics;
    let rows = (0..m.flow_count()).flat_map(|f| {
        (0..m.bucket_count()).map(move |b| {
            let c = m.bucket(f, b);
            BucketRow {
                time_s: b as f64 * m.bucket_width(),
                flow_id: f,
                delivered_bits: c.bits_delivered,
                sent_pkts: c.packets_sent,
                delivered_pkts: c.packets_delivered,
                dropped_mac: c.packets_dropped_mac,
                dropped_rejected: c.packets_dropped_rejected,
                dropped_queue: c.packets_dropped_queue,
            }
        })
    });
    write_csv(path, rows)
}

pub fn summary_text(o: &SeedOutcome) -> String {
    let s = &o.summary;
    let mut out = String::new();
    let _ = writeln!(out, "scheme {} seed {}", o.scheme, o.seed);
    let _ = writeln!(
        out,
        "flow  role      src  dst  sent  delivered  drop_mac  drop_rej  drop_queue  in_flight  rejected_at"
    );
    for (f, spec) in s.flows.iter().zip(&o.result.flows) {
        let _ = writeln!(
            out,
            "{:<5} {:<9} {:<4} {:<4} {:<5} {:<10} {:<9} {:<9} {:<11} {:<10} {}",
            f.flow_id,
            if f.is_attacker { "attacker" } else { "legit" },
            spec.source_id,
            spec.destination_id,
            f.sent,
            f.delivered,
            f.dropped_mac,
            f.dropped_rejected,
            f.dropped_queue,
            f.in_flight,
            f.rejected_at.map_or("-".to_string(), |t| format!("{t:.3}")),
        );
    }
    let pdr = s.legitimate_pdr.map_or("n/a".to_string(), |p| format!("{p:.4}"));
    let _ = writeln!(out, "legitimate_pdr {pdr}");
    let _ = writeln!(out, "lost_legitimate {}", s.lost_legitimate);
    let _ = writeln!(out, "mean_legitimate_bandwidth_bps {:.1}", s.mean_legitimate_bandwidth);
    let _ = writeln!(out, "legitimate_rejected {}", s.legitimate_rejected);
    for &(f, t) in &s.detection_times {
        let excess = s.first_excess_times.iter().find(|(g, _)| *g == f).map(|(_, t)| *t);
        let _ = writeln!(
            out,
            "detection flow {f} rejected_at {t:.3} first_excess {}",
            excess.map_or("-".to_string(), |e| format!("{e:.3}"))
        );
    }
    out
}

/// Seed-averaged view of a batch.
pub fn averaged_summary_text(outcomes: &[SeedOutcome]) -> String {
    let n = outcomes.len().max(1) as f64;
    let mean = |f: &dyn Fn(&SeedOutcome) -> f64| outcomes.iter().map(f).sum::<f64>() / n;
    let pdrs: Vec<f64> = outcomes.iter().filter_map(|o| o.summary.legitimate_pdr).collect();
    let mut out = String::new();
    if let Some(o) = outcomes.first() {
        let _ = writeln!(out, "scheme {} seeds {}", o.scheme, outcomes.len());
    }
    let pdr = if pdrs.is_empty() {
        "n/a".to_string()
    } else {
        format!("{:.4}", pdrs.iter().sum::<f64>() / pdrs.len() as f64)
    };
    let _ = writeln!(out, "mean_legitimate_pdr {pdr}");
    let _ = writeln!(out, "mean_lost_legitimate {:.2}", mean(&|o| o.summary.lost_legitimate as f64));
    let _ = writeln!(
        out,
        "mean_legitimate_bandwidth_bps {:.1}",
        mean(&|o| o.summary.mean_legitimate_bandwidth)
    );
    let _ = writeln!(
        out,
        "legitimate_rejected_total {}",
        outcomes.iter().map(|o| o.summary.legitimate_rejected).sum::<usize>()
    );
    let _ = writeln!(
        out,
        "attackers_rejected_total {}",
        outcomes.iter().map(|o| o.summary.detection_times.len()).sum::<usize>()
    );
    out
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| SimError::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))
}

/// Run a batch and write per-seed CSV and summaries plus the averaged summary.
pub fn run_experiment(scenario: &Scenario, seeds: &[u64], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let outcomes = run_seeds(scenario, seeds)?;
    ensure_dir(out_dir)?;
    let mut written = Vec::new();
    for o in &outcomes {
        let csv = out_dir.join(format!("{}_seed{}_buckets.csv", o.scheme, o.seed));
        write_bucket_csv(&csv, &o.result)?;
        let txt = out_dir.join(format!("{}_seed{}_summary.txt", o.scheme, o.seed));
        write_text(&txt, &summary_text(o))?;
        written.extend([csv, txt]);
    }
    let avg = out_dir.join(format!("{}_summary.txt", scenario.scheme));
    write_text(&avg, &averaged_summary_text(&outcomes))?;
    written.push(avg);
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub attackers: usize,
    pub scheme: String,
    pub seed: u64,
    pub legitimate_bandwidth_bps: f64,
    pub legitimate_pdr: f64,
    pub lost_legitimate: u64,
    pub attackers_rejected: usize,
    pub legitimate_rejected: usize,
}

/// One row per (attacker count, scheme, seed).
pub fn sweep_attackers(
    scenario: &Scenario,
    counts: &[usize],
    schemes: &[Scheme],
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    if counts.is_empty() {
        return Err(SimError::validation("attackers", "need at least one attacker count"));
    }
    let jobs: Vec<(usize, Scheme, u64)> = counts
        .iter()
        .flat_map(|&c| schemes.iter().flat_map(move |&s| seeds.iter().map(move |&seed| (c, s, seed))))
        .collect();
    jobs.par_iter()
        .map(|&(count, scheme, seed)| {
            let sc = Scenario {
                scheme,
                ..scenario.with_attackers(count)
            };
            let r = run_once(&sc, seed, WorldOptions::default())?;
            let s = summarize(&r.metrics);
            Ok(SweepRow {
                attackers: count,
                scheme: scheme.to_string(),
                seed,
                legitimate_bandwidth_bps: s.mean_legitimate_bandwidth,
                legitimate_pdr: s.legitimate_pdr.unwrap_or(0.0),
                lost_legitimate: s.lost_legitimate,
                attackers_rejected: s.detection_times.len(),
                legitimate_rejected: s.legitimate_rejected,
            })
        })
        .collect()
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    write_csv(path, rows)
}
