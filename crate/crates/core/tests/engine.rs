use adhoc_ddos::experiment::prepare;
use adhoc_ddos::sim::{stream_rng, Scheduler};
use adhoc_ddos::topology::{build_topology, random_placement, Area, NodeSpec};
use adhoc_ddos::{Scenario, SimError};
use proptest::prelude::*;

fn find(parent: &mut Vec<usize>, x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    let mut c = x;
    while parent[c] != r {
        let next = parent[c];
        parent[c] = r;
        c = next;
    }
    r
}

#[test]
fn default_seed_placement_is_nearly_connected() {
    let sc = Scenario::default();
    let (topo, _) = prepare(&sc, sc.seed).unwrap();
    let n = topo.len();
    let mut parent: Vec<usize> = (0..n).collect();
    let r2 = sc.radio_range_m * sc.radio_range_m;
    let nodes = topo.nodes();
    for i in 0..n {
        for j in i + 1..n {
            let dx = nodes[i].x - nodes[j].x;
            let dy = nodes[i].y - nodes[j].y;
            if dx * dx + dy * dy <= r2 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    let mut sizes = vec![0usize; n];
    for i in 0..n {
        let root = find(&mut parent, i);
        sizes[root] += 1;
    }
    let largest = *sizes.iter().max().unwrap();
    assert!(largest * 100 >= 95 * n, "largest component {largest} of {n}");
    assert_eq!(largest, topo.largest_component().len());
}

#[test]
fn placement_is_reproducible() {
    let area = Area { width: 1200.0, height: 1200.0 };
    let a = random_placement(80, area, &mut stream_rng(9, 0));
    let b = random_placement(80, area, &mut stream_rng(9, 0));
    assert_eq!(a, b);
    let c = random_placement(80, area, &mut stream_rng(10, 0));
    assert_ne!(a, c);
}

#[test]
fn run_until_parks_clock_and_leaves_later_events() {
    let mut s: Scheduler<u32> = Scheduler::new();
    for t in [3.0, 1.0, 2.0] {
        s.schedule(t, t as u32).unwrap();
    }
    let mut seen = Vec::new();
    let end = s.run_until(2.5, |_, ev| seen.push(ev.kind)).unwrap();
    assert_eq!(end, 2.5);
    assert_eq!(seen, vec![1, 2]);
    assert_eq!(s.pending(), 1);
    assert!(matches!(s.schedule(2.0, 9), Err(SimError::PastEvent { .. })));
}

proptest! {
    #[test]
    fn events_fire_in_time_then_sequence_order(times in prop::collection::vec(0u8..20, 1..200)) {
        let mut s: Scheduler<usize> = Scheduler::new();
        for (i, &t) in times.iter().enumerate() {
            s.schedule(f64::from(t) * 0.5, i).unwrap();
        }
        let mut fired = Vec::new();
        s.run_until(100.0, |sch, ev| fired.push((sch.now(), ev.fire_time, ev.sequence_no, ev.kind))).unwrap();
        prop_assert_eq!(fired.len(), times.len());
        for w in fired.windows(2) {
            prop_assert!(w[0].1 <= w[1].1);
            if w[0].1 == w[1].1 {
                prop_assert!(w[0].2 < w[1].2);
            }
        }
        for &(now, fire, _, kind) in &fired {
            prop_assert_eq!(now, fire);
            prop_assert_eq!(fire, f64::from(times[kind]) * 0.5);
        }
    }

    #[test]
    fn handlers_can_schedule_without_going_backwards(seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = stream_rng(seed, 3);
        let mut s: Scheduler<u32> = Scheduler::new();
        s.schedule(0.0, 0).unwrap();
        let mut last = 0.0;
        let mut count = 0;
        s.run_until(50.0, |sch, ev| {
            assert!(ev.fire_time >= last);
            last = ev.fire_time;
            count += 1;
            if ev.kind < 300 {
                let d: f64 = rng.random_range(0.0..1.0);
                sch.schedule_in(d, ev.kind + 1);
                if ev.kind % 7 == 0 {
                    sch.schedule_in(0.0, 1_000);
                }
            }
        }).unwrap();
        prop_assert!(count > 0);
    }

    #[test]
    fn adjacency_follows_the_distance_rule(pts in prop::collection::vec((0.0f64..600.0, 0.0f64..600.0), 2..30), range in 1.0f64..400.0) {
        let nodes: Vec<NodeSpec> = pts.iter().enumerate().map(|(id, &(x, y))| NodeSpec { id, x, y }).collect();
        let topo = build_topology(nodes.clone(), Area { width: 600.0, height: 600.0 }, range).unwrap();
        for a in &nodes {
            for b in &nodes {
                let d = ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt();
                let expect = a.id != b.id && d <= range;
                prop_assert_eq!(topo.is_adjacent(a.id, b.id), expect);
                prop_assert_eq!(topo.is_adjacent(a.id, b.id), topo.is_adjacent(b.id, a.id));
            }
        }
    }
}
