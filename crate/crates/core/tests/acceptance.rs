//! Acceptance gate: one line per criterion, non-zero exit if any fails.

use std::time::Instant;

use eolla_core::analytics::{
    cbg_error_from_tb, cbger_target, conditional_failed_at_most, failed_cbg_pmf, residual_tber_target,
    tb_error_from_cbg,
};
use eolla_core::harq::{CbgFeedback, CbgMask, HarqMode, HarqProcess};
use eolla_core::link::{LinkModel, McsTable};
use eolla_core::olla::{OllaPolicy, OllaState};
use eolla_core::rng::{run_seed, stream};
use eolla_core::sim::capacity::standard_error;
use eolla_core::sim::{simulate, system_capacity, TraceFlags};
use eolla_core::traffic::TruncGaussParams;
use eolla_core::Scenario;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

fn failed_given_any() -> Verdict {
    let v = conditional_failed_at_most(2, 0.1, 8).unwrap();
    verdict(within(v, 0.998, 0.001), format!("P(k<=2 | k>=1) = {v:.6}, want 0.998 +/- 0.001"))
}

fn convergence_targets() -> Verdict {
    let a = cbger_target(0.5, 0.21).unwrap();
    let b = residual_tber_target(0.5, 0.044).unwrap();
    verdict(
        within(a, 0.2958, 1e-4) && within(b, 0.1497, 1e-3),
        format!("cbger_target = {a:.5} (0.2958 +/- 1e-4), residual_tber_target = {b:.5} (0.1497 +/- 1e-3)"),
    )
}

/// One UE at a fixed SINR inside the table, no fading or CQI error, frames that
/// always fit one slot with eight CBGs.
fn stationary(policy: OllaPolicy, step_down: f64) -> Scenario {
    let mut s = Scenario::default();
    s.cells = 1;
    s.ues_per_cell = 1;
    s.horizon_ms = 60_000.0;
    s.channel.geometry_db = [10.0, 10.0];
    s.channel.fading_std_db = 0.0;
    s.channel.cqi_noise_std_db = 0.0;
    s.traffic.frame_size = TruncGaussParams::new(12.0, 1.0, 9.0, 15.0).unwrap();
    s.la.policy = policy;
    s.la.step_up_db = 0.5;
    s.la.step_down_db = Some(step_down);
    s.validate().unwrap();
    s
}

fn simulated_convergence() -> Verdict {
    let s1 = stationary(OllaPolicy::EollaAlg1, 0.21);
    let k1 = simulate(&s1, run_seed(s1.seed, 0), TraceFlags::default()).unwrap().pooled_kpi();
    let cbger = k1.first_tx_cbger().unwrap_or(f64::NAN);
    let s2 = stationary(OllaPolicy::EollaAlg2, 0.044);
    let k2 = simulate(&s2, run_seed(s2.seed, 0), TraceFlags::default()).unwrap().pooled_kpi();
    let resid = k2.residual_tber().unwrap_or(f64::NAN);
    verdict(
        within(cbger, 0.296, 0.03) && within(resid, 0.15, 0.03),
        format!(
            "Alg1 1st-TX CBGER = {cbger:.4} over {} CBGs (0.296 +/- 0.03); Alg2 2nd-TX residual TBER = {resid:.4} over {} TBs (0.15 +/- 0.03)",
            k1.first_tx_cbg_sent, k2.second_tx_count
        ),
    )
}

fn monte_carlo_histogram() -> Verdict {
    let link = LinkModel::new(McsTable::nr_256qam(-5.0, 1.0).unwrap(), 2.0).unwrap();
    let mcs = 14;
    let sinr = link.table.entries()[mcs].sinr_ref_db;
    let layout = HarqMode::Cbg { n_max: 8 }.layout(8 * 8448).unwrap();
    assert_eq!(layout.m, 8);
    let mut rng = stream(4, "acceptance/mc");
    let n = 1_000_000u64;
    let mut hist = [0u64; 9];
    for _ in 0..n {
        let mut p = HarqProcess::new(0, 0, layout.clone(), mcs, 10, 1000.0, Vec::new(), 4);
        hist[p.draw_outcome(sinr, &link, &mut rng).unwrap().f() as usize] += 1;
    }
    let p_cbg = cbg_error_from_tb(0.1, 8).unwrap();
    let mut worst = 0.0f64;
    for (k, &count) in hist.iter().enumerate() {
        let pk = failed_cbg_pmf(k as u32, p_cbg, 8).unwrap();
        let sigma = (n as f64 * pk * (1.0 - pk)).sqrt();
        let z = if sigma > 0.0 { (count as f64 - n as f64 * pk).abs() / sigma } else { count as f64 };
        worst = worst.max(z);
    }
    let mean = hist.iter().enumerate().map(|(k, &c)| k as f64 * c as f64).sum::<f64>() / n as f64;
    let oracle: f64 = (0..=8).map(|k| f64::from(k) * failed_cbg_pmf(k, p_cbg, 8).unwrap()).sum();
    let rel = (mean - oracle).abs() / oracle;
    verdict(
        worst <= 3.0 && rel <= 0.01,
        format!("worst bin |z| = {worst:.2} (<= 3), mean failed CBGs {mean:.5} vs {oracle:.5} ({:.3}% off, <= 1%)", rel * 100.0),
    )
}

/// Per-seed mean PRB load and mean MCS of the default scenario.
fn per_seed(policy: OllaPolicy) -> (Vec<f64>, Vec<f64>) {
    let mut s = Scenario::default();
    s.la.policy = policy;
    let mut prb = Vec::new();
    let mut mcs = Vec::new();
    for r in 0..s.runs {
        let out = simulate(&s, run_seed(s.seed, r), TraceFlags::default()).unwrap();
        prb.push(out.mean_prb_load().unwrap());
        mcs.push(out.mean_mcs().unwrap());
    }
    (prb, mcs)
}

fn paired(a: &[f64], b: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    (d.iter().sum::<f64>() / d.len() as f64, standard_error(&d))
}

fn resource_saving() -> Verdict {
    let (prb_t, mcs_t) = per_seed(OllaPolicy::Traditional);
    let (prb_2, mcs_2) = per_seed(OllaPolicy::EollaAlg2);
    let (d_prb, se_prb) = paired(&prb_t, &prb_2);
    let (d_mcs, se_mcs) = paired(&mcs_2, &mcs_t);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    verdict(
        d_prb > 3.0 * se_prb && d_mcs > 3.0 * se_mcs,
        format!(
            "PRB load TB-OLLA {:.4} vs Alg2 {:.4} (saving {d_prb:+.4}, 3se {:.4}); MCS TB-OLLA {:.2} vs Alg2 {:.2} (gain {d_mcs:+.2}, 3se {:.3}); {} seeds",
            mean(&prb_t),
            mean(&prb_2),
            3.0 * se_prb,
            mean(&mcs_t),
            mean(&mcs_2),
            3.0 * se_mcs,
            prb_t.len()
        ),
    )
}

fn capacity_ordering() -> Verdict {
    let counts: Vec<usize> = (1..=10).collect();
    let cap = |policy| {
        let mut s = Scenario::default();
        s.la.policy = policy;
        system_capacity(&s, &counts, s.capacity.satisfied_fraction).unwrap().capacity
    };
    let t = cap(OllaPolicy::Traditional);
    let a1 = cap(OllaPolicy::EollaAlg1);
    let a2 = cap(OllaPolicy::EollaAlg2);
    verdict(
        a2 >= a1 && a1 >= t && a2 > t,
        format!("capacity UEs/cell: Alg2 {a2}, Alg1 {a1}, TB-OLLA-10% {t} (want Alg2 >= Alg1 >= TB, Alg2 > TB)"),
    )
}

fn property(name: &str, result: Result<(), String>, failures: &mut Vec<String>) {
    if let Err(e) = result {
        failures.push(format!("{name}: {e}"));
    }
}

fn run_prop<S: Strategy>(
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let mut runner = TestRunner::new(Config { cases: 10_000, failure_persistence: None, ..Config::default() });
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn tiny(seed: u64, ues: usize, policy: OllaPolicy, geometry: f64) -> Scenario {
    let mut s = Scenario::default();
    s.seed = seed;
    s.cells = 1;
    s.ues_per_cell = ues;
    s.horizon_ms = 40.0;
    s.harq.processes = 4;
    s.la.policy = policy;
    s.channel.geometry_db = [geometry, geometry + 10.0];
    s.traffic.frame_size = s.traffic.frame_size.scaled(0.2);
    s
}

fn policies() -> impl Strategy<Value = OllaPolicy> {
    prop_oneof![Just(OllaPolicy::Traditional), Just(OllaPolicy::EollaAlg1), Just(OllaPolicy::EollaAlg2)]
}

fn property_suites() -> Verdict {
    let mut failures = Vec::new();
    property(
        "roundtrip",
        run_prop((0.0f64..=1.0, 1u32..=8), |(p, m)| {
            let back = tb_error_from_cbg(cbg_error_from_tb(p, m).unwrap(), m).unwrap();
            prop_assert!((back - p).abs() <= 1e-12);
            Ok(())
        }),
        &mut failures,
    );
    property(
        "pmf",
        run_prop((0.0f64..=1.0, 1u32..=8), |(p, m)| {
            let s: f64 = (0..=m).map(|k| failed_cbg_pmf(k, p, m).unwrap()).sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
            Ok(())
        }),
        &mut failures,
    );
    property(
        "clamp",
        run_prop(
            (policies(), prop::collection::vec((1u8..=4, 0u32..=8), 1..100)),
            |(policy, events)| {
                let mut s = OllaState::new(policy, 0.0, 0.5, 0.21, (-25.0, 15.0)).unwrap();
                for (tx, f) in events {
                    s.apply(&CbgFeedback {
                        process_id: 0,
                        tx_index: tx,
                        m: 8,
                        transmitted: CbgMask::all(8),
                        nack: CbgMask::from_bits(((1u16 << f) - 1) as u8),
                    });
                    prop_assert!((-25.0..=15.0).contains(&s.offset_db));
                }
                Ok(())
            },
        ),
        &mut failures,
    );
    let link = LinkModel::new(McsTable::nr_256qam(-5.0, 1.0).unwrap(), 2.0).unwrap();
    property(
        "pending",
        run_prop(
            (1u64..300_000, 0usize..28, prop::collection::vec(-10.0f64..30.0, 4), any::<u64>()),
            |(bits, mcs, sinrs, seed)| {
                let layout = HarqMode::Cbg { n_max: 8 }.layout(bits).unwrap();
                let mut p = HarqProcess::new(0, 0, layout, mcs, 10, 1000.0, Vec::new(), 4);
                let mut rng = stream(seed, "pending");
                let mut prev = p.pending;
                for s in sinrs {
                    if p.pending.is_empty() {
                        break;
                    }
                    p.draw_outcome(s, &link, &mut rng).unwrap();
                    prop_assert!(p.pending.is_subset_of(prev));
                    prev = p.pending;
                }
                Ok(())
            },
        ),
        &mut failures,
    );
    property(
        "conservation",
        run_prop((any::<u64>(), 1usize..=3, policies(), -10.0f64..25.0), |(seed, ues, policy, g)| {
            let out = simulate(&tiny(seed, ues, policy, g), seed, TraceFlags::default()).unwrap();
            prop_assert!(out.conservation.holds());
            prop_assert_eq!(out.conservation.in_flight, 0);
            Ok(())
        }),
        &mut failures,
    );
    property(
        "determinism",
        run_prop((any::<u64>(), 1usize..=2, policies(), -10.0f64..25.0), |(seed, ues, policy, g)| {
            let s = tiny(seed, ues, policy, g);
            let flags = TraceFlags { offset: true, harq: true, packet: true };
            prop_assert_eq!(simulate(&s, seed, flags).unwrap(), simulate(&s, seed, flags).unwrap());
            Ok(())
        }),
        &mut failures,
    );
    if failures.is_empty() {
        verdict(true, "roundtrip, pmf, clamp, pending, conservation, determinism: 10000 cases each")
    } else {
        verdict(false, failures.join("; "))
    }
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 7] = [
        ("1 conditional failed-CBG anchor", failed_given_any),
        ("2 convergence targets", convergence_targets),
        ("3 convergence in simulation", simulated_convergence),
        ("4 Monte-Carlo failed-CBG histogram", monte_carlo_histogram),
        ("5 resource saving direction", resource_saving),
        ("6 capacity ordering", capacity_ordering),
        ("7 property suites", property_suites),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let v = check();
        failed += usize::from(!v.pass);
        println!(
            "criterion {name}: {} ({:.1}s) {}",
            if v.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            v.detail
        );
    }
    println!("acceptance: {} of 7 criteria passed", 7 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
