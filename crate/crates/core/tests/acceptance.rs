//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero if any fail.

use std::fs;
use std::process::ExitCode;
use std::time::Instant;

use adhoc_ddos::defense::{
    allocate_rates, apply_congestion_bit, initiate_query, measure_rate, process_reply, FlowTable, FmtEntry,
    MessageType, StreamKey,
};
use adhoc_ddos::experiment::{averaged_series, run_experiment, run_seeds, summary_text, SeedOutcome};
use adhoc_ddos::scenario::FlowPlan;
use adhoc_ddos::topology::{build_topology, Area, NodeSpec};
use adhoc_ddos::{load_scenario, RunResult, Scenario, Scheme};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 10] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10];

type Check = Result<String, String>;

fn default_scenario() -> Scenario {
    load_scenario(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/default.toml").as_ref()).unwrap()
}

fn batch(base: &Scenario, scheme: Scheme, attackers: usize) -> Vec<SeedOutcome> {
    run_seeds(&Scenario { scheme, ..base.with_attackers(attackers) }, &SEEDS).unwrap()
}

fn attack_start(s: &Scenario) -> f64 {
    match &s.flows {
        FlowPlan::Generated(mix) => mix.attack_start,
        FlowPlan::Explicit(f) => f.iter().filter(|f| f.is_attacker).map(|f| f.start_time).fold(f64::INFINITY, f64::min),
    }
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

fn c1_default_scenario() -> Check {
    let s = default_scenario();
    let FlowPlan::Generated(mix) = &s.flows else {
        return Err("flows are not generated from a mix".into());
    };
    let want = [
        ("nodes", s.node_count as f64, 80.0),
        ("width", s.area.width, 1200.0),
        ("height", s.area.height, 1200.0),
        ("range", s.radio_range_m, 250.0),
        ("capacity", s.link_capacity_bps, 2_000_000.0),
        ("duration", s.sim_time_s, 60.0),
        ("packet", s.packet_size_bytes as f64, 512.0),
        ("legit flows", mix.legitimate as f64, 5.0),
        ("legit rate", mix.legitimate_rate, 50_000.0),
        ("attackers", mix.attackers as f64, 1.0),
        ("attack rate", mix.attack_rate, 500_000.0),
    ];
    for (name, got, exp) in want {
        if got != exp {
            return Err(format!("{name} = {got}, expected {exp}"));
        }
    }
    if s.traffic != "cbr" {
        return Err(format!("traffic = {}", s.traffic));
    }
    let t0 = Instant::now();
    run_seeds(&s, &[s.seed]).unwrap();
    let wall = t0.elapsed().as_secs_f64();
    if wall >= 10.0 {
        return Err(format!("single run took {wall:.2} s"));
    }
    Ok(format!("scenario values match; one run {wall:.3} s"))
}

fn legit_bits_after(r: &RunResult, from: f64) -> u64 {
    let m = &r.metrics;
    let first = (from / m.bucket_width()).round() as usize;
    m.legitimate_flows()
        .iter()
        .map(|&f| (first..m.bucket_count()).map(|b| m.bucket(f, b).bits_delivered).sum::<u64>())
        .sum()
}

fn mean_over(series: &[(f64, f64)], from: f64, to: f64) -> f64 {
    let v: Vec<f64> = series.iter().filter(|(t, _)| *t >= from && *t < to).map(|&(_, b)| b).collect();
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn c2_bandwidth(base: &Scenario, p: &[SeedOutcome], s: &[SeedOutcome]) -> Check {
    let onset = attack_start(base);
    let wins = p
        .iter()
        .zip(s)
        .filter(|(a, b)| legit_bits_after(&a.result, onset) >= legit_bits_after(&b.result, onset))
        .count();
    if wins < 9 {
        return Err(format!("proposed >= swan in {wins}/10 seeds"));
    }
    let rejected: Vec<f64> = p
        .iter()
        .flat_map(|o| o.summary.detection_times.iter().map(|&(_, t)| t))
        .collect();
    if rejected.len() != p.len() {
        return Err(format!("{} of {} attackers rejected", rejected.len(), p.len()));
    }
    let t_rej = rejected.iter().copied().fold(0.0, f64::max);
    let series = averaged_series(p, true);
    let pre = mean_over(&series, 2.0, onset);
    let post = mean_over(&series, t_rej + 5.0, base.sim_time_s);
    let ratio = post / pre;
    if ratio < 0.9 {
        return Err(format!("recovered to {:.1}% of pre-attack ({post:.0} / {pre:.0} bps)", 100.0 * ratio));
    }
    Ok(format!(
        "wins {wins}/10; recovered to {:.1}% ({post:.0} / {pre:.0} bps) from {:.0} s",
        100.0 * ratio,
        t_rej + 5.0
    ))
}

fn c3_lost(runs: &[(Vec<SeedOutcome>, Vec<SeedOutcome>)]) -> Check {
    let mut notes = Vec::new();
    for (k, (p, s)) in runs.iter().enumerate().skip(1) {
        let wins = p
            .iter()
            .zip(s)
            .filter(|(a, b)| a.summary.lost_legitimate < b.summary.lost_legitimate)
            .count();
        notes.push(format!("{k}:{wins}/10"));
        if wins < 9 {
            return Err(format!("{k} attackers: proposed < swan in {wins}/10 seeds"));
        }
    }
    Ok(format!("wins {}", notes.join(" ")))
}

fn mean_pdr(v: &[SeedOutcome]) -> f64 {
    v.iter().map(|o| o.summary.legitimate_pdr.unwrap_or(0.0)).sum::<f64>() / v.len() as f64
}

fn c4_pdr(runs: &[(Vec<SeedOutcome>, Vec<SeedOutcome>)]) -> Check {
    let mut notes = Vec::new();
    for (k, (p, s)) in runs.iter().enumerate() {
        let (a, b) = (mean_pdr(p), mean_pdr(s));
        notes.push(format!("{k}:{a:.3}/{b:.3}"));
        let ok = if k == 0 { (a - b).abs() <= 0.02 } else { a > b };
        if !ok {
            return Err(format!("{k} attackers: proposed {a:.4} swan {b:.4}"));
        }
    }
    Ok(notes.join(" "))
}

fn c5_detection(base: &Scenario, p: &[SeedOutcome]) -> Check {
    let limit = 2.0 * base.defense.interval_s;
    let mut worst: f64 = 0.0;
    for o in p {
        let attackers = o.result.metrics.attacker_flows();
        let text = summary_text(o);
        for f in attackers {
            let Some(&rej) = o.result.metrics.rejections().get(&f) else {
                return Err(format!("seed {}: attacker flow {f} never rejected", o.seed));
            };
            let Some(&first) = o.result.metrics.first_excess().get(&f) else {
                return Err(format!("seed {}: no excess interval recorded for flow {f}", o.seed));
            };
            let lag = rej - first;
            worst = worst.max(lag);
            if lag > limit + 1e-9 {
                return Err(format!("seed {}: rejected {lag:.3} s after first excess", o.seed));
            }
            if !text.contains(&format!("detection flow {f} rejected_at {rej:.3}")) {
                return Err(format!("seed {}: detection missing from summary", o.seed));
            }
        }
    }
    Ok(format!("worst lag {worst:.3} s (limit {limit:.3} s)"))
}

fn c6_soundness(p: &[SeedOutcome]) -> Check {
    let bad: usize = p.iter().map(|o| o.summary.legitimate_rejected).sum();
    if bad > 0 {
        return Err(format!("{bad} legitimate rejections"));
    }
    Ok("no legitimate flow rejected in 10 seeds".into())
}

fn c7_equations() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..1000 {
        let cap: f64 = rng.random_range(1e5..1e7);
        let n = rng.random_range(1..10);
        let ars: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..3e6)).collect();
        let delta: f64 = rng.random_range(0.0..1e5);
        let bits: f64 = rng.random_range(0.0..1e7);
        let period: f64 = rng.random_range(0.01..10.0);

        let mut es: Vec<FmtEntry> = ars
            .iter()
            .enumerate()
            .map(|(i, &ar)| {
                let key = StreamKey { flow_id: i, upstream: None, downstream: None };
                FmtEntry::new(key, 0, 1, ar)
            })
            .collect();
        let w = allocate_rates(cap, es.iter_mut());

        let sum: f64 = ars.iter().sum();
        let w_ref = if sum > 0.0 && cap < sum { cap / sum } else { 1.0 };
        if !close(w, w_ref) {
            return Err(format!("case {case}: W {w} vs {w_ref}"));
        }
        for (e, &ar) in es.iter_mut().zip(&ars) {
            let acr = w_ref * ar;
            if !close(e.actual_rate, acr) {
                return Err(format!("case {case}: ACR {} vs {acr}", e.actual_rate));
            }
            let new_ar = apply_congestion_bit(e, delta);
            let want = if acr - delta > 0.0 { acr - delta } else { 0.0 };
            if !close(new_ar, want) || new_ar != e.assigned_rate {
                return Err(format!("case {case}: AR {new_ar} vs {want}"));
            }
        }
        let e = &mut es[0];
        e.traffic_counter = bits;
        let mr = measure_rate(e, period);
        if !close(mr, bits / period) || e.traffic_counter != 0.0 {
            return Err(format!("case {case}: MR {mr} vs {}", bits / period));
        }
    }
    Ok("1000 tuples agree".into())
}

fn c8_bnbw() -> Check {
    let cap = 2_000_000.0;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..500 {
        let n = rng.random_range(2..=6);
        let nodes = (0..n).map(|id| NodeSpec { id, x: id as f64 * 200.0, y: 0.0 }).collect();
        let topo = build_topology(nodes, Area { width: 1200.0, height: 10.0 }, 250.0).unwrap();
        let abw: Vec<f64> = (0..n).map(|_| rng.random_range(0..=2_000) as f64 * 1_000.0).collect();
        let requested = rng.random_range(1..=1_000) as f64 * 1_000.0;
        let mut tables: Vec<FlowTable> = (0..n)
            .map(|i| {
                let mut t = FlowTable::new(i, cap);
                let used = cap - abw[i];
                if used > 0.0 {
                    let key = StreamKey { flow_id: 10_000, upstream: None, downstream: None };
                    t.insert(FmtEntry::new(key, 0, 0, used));
                    t.reserve(&key, used);
                }
                t
            })
            .collect();
        let (src, dst) = if rng.random_bool(0.5) { (0, n - 1) } else { (n - 1, 0) };
        let (q, route) = initiate_query(1, src, dst, requested, MessageType::BandwidthQuery, &topo).unwrap();
        if route.forward_path.len() != n {
            return Err(format!("case {case}: path {:?}", route.forward_path));
        }
        let mut pkt = q.into_reply();
        for &node in route.reverse_path.iter() {
            pkt = process_reply(&mut tables[node], &route, pkt);
        }
        let mut want = requested;
        for a in &abw {
            if *a < want {
                want = *a;
            }
        }
        if pkt.bnbw != want {
            return Err(format!("case {case}: BnBW {} vs {want}", pkt.bnbw));
        }
    }
    Ok("500 paths agree".into())
}

fn c9_conservation(all: &[&SeedOutcome], base: &Scenario) -> Check {
    for o in all {
        let r = &o.result;
        for f in 0..r.metrics.flow_count() {
            let t = r.metrics.totals(f);
            if t.packets_sent != t.packets_delivered + t.dropped() + r.in_flight[f] {
                return Err(format!("{} seed {} flow {f} not conserved", o.scheme, o.seed));
            }
        }
    }
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut compared = 0;
    for scheme in Scheme::ALL {
        let sc = Scenario { scheme, ..base.clone() };
        let a = run_experiment(&sc, &[1, 2, 3], dirs[0].path()).unwrap();
        let b = run_experiment(&sc, &[1, 2, 3], dirs[1].path()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            if fs::read(x).unwrap() != fs::read(y).unwrap() {
                return Err(format!("{} differs between runs", x.display()));
            }
            compared += 1;
        }
    }
    Ok(format!("{} runs conserved; {compared} files byte-identical", all.len()))
}

fn main() -> ExitCode {
    let base = default_scenario();
    let runs: Vec<(Vec<SeedOutcome>, Vec<SeedOutcome>)> = (0..=5)
        .map(|k| (batch(&base, Scheme::Proposed, k), batch(&base, Scheme::Swan, k)))
        .collect();
    let none = batch(&base, Scheme::None, 1);
    let (p1, s1) = &runs[1];
    let everything: Vec<&SeedOutcome> = runs.iter().flat_map(|(p, s)| p.iter().chain(s)).chain(&none).collect();

    let results = [
        ("1 default scenario", c1_default_scenario()),
        ("2 bandwidth under attack", c2_bandwidth(&base, p1, s1)),
        ("3 lost legitimate packets", c3_lost(&runs)),
        ("4 legitimate PDR", c4_pdr(&runs)),
        ("5 detection completeness", c5_detection(&base, p1)),
        ("6 detection soundness", c6_soundness(p1)),
        ("7 equation oracle", c7_equations()),
        ("8 BnBW oracle", c8_bnbw()),
        ("9 conservation and determinism", c9_conservation(&everything, &base)),
    ];
    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(note) => println!("PASS criterion {name}: {note}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {name}: {why}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
