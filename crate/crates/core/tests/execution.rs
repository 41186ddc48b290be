mod common;

use common::{multi_stem, nested_stem, rel_err, statevector_amplitude, to_c64};
use num_complex::Complex;
use tnc_core::circuit::{circuit_to_network, random_circuit};
use tnc_core::executor::{
    hierarchical_reduce, read_partials, replay_verify, run_direct, run_reuse, run_sliced,
    write_partials, ReductionTopology, RunOptions,
};
use tnc_core::network::TensorNetwork;
use tnc_core::reuse::{
    choose_reuse_subset, interpret, plan_spindle, plan_tree_reuse, predict, tune_memory,
    MemoryBudget,
};
use tnc_core::schedule::{linearize, LinearSchedule};
use tnc_core::slicer::{select_slices, SliceSpec};
use tnc_core::tensor::{Index, Precision};
use tnc_core::tree::{greedy_path, tree_metrics, ContractionTree};
use tnc_core::TncError;

fn reuse_all(s: &LinearSchedule, labels: &[&str]) -> SliceSpec {
    let mut spec = SliceSpec::from_labels(s, labels).unwrap();
    for e in &mut spec.entries {
        e.reuse = true;
    }
    spec.refresh_nesting();
    spec
}

fn circuit_case(
    n: usize,
    depth: usize,
    seed: u64,
) -> (TensorNetwork<f64>, ContractionTree, String) {
    let c = random_circuit(n, depth, seed);
    let b: String = (0..n)
        .map(|k| if (seed >> k) & 1 == 1 { '1' } else { '0' })
        .collect();
    let net = circuit_to_network::<f64>(&c, &b).unwrap();
    let t = greedy_path(&net.structure(), seed).unwrap();
    (net, t, c.to_text())
}

#[test]
fn sliced_equals_direct_with_exact_counts() {
    for seed in 0..15u64 {
        let (net, t, _) = circuit_case(8 + seed as usize % 4, 4, seed);
        let cap = tree_metrics(&t).max_rank.saturating_sub(2).max(4);
        let spec = select_slices(&t, cap, 0, seed).unwrap();
        let (direct, _) = run_direct(&net, &t, &RunOptions::default()).unwrap();
        let out = run_sliced(&net, &t, &spec, &RunOptions::default()).unwrap();
        assert!(rel_err(out.value, direct, 1e-3) < 1e-10);
        let sliced_cost: u128 = tree_metrics(&t.sliced(&spec.labels())).total_cost;
        assert_eq!(out.stats.multiplies, spec.subtask_count() * sliced_cost);
        assert_eq!(out.stats.subtasks_done, spec.subtask_count());
        assert_eq!(out.partials.len() as u128, spec.subtask_count());
    }
}

#[test]
fn spindle_matches_sliced_and_prediction() {
    for (before, after, d) in [(0, 0, 2), (2, 3, 2), (1, 2, 3), (3, 1, 4)] {
        let b = nested_stem(before, after, d);
        let t = b.build();
        let net = b.network::<f64>(before as u64);
        let s = linearize(&t);
        let spec = reuse_all(&s, &["n1", "n2", "n3"]);
        let (rs, report) =
            plan_spindle(&s, &spec, &MemoryBudget::unlimited(Precision::Double)).unwrap();
        let stats = interpret(&rs).unwrap();
        assert_eq!(stats.peak_checkpoints, 3);
        if d == 2 {
            assert!(stats.extra_buffers <= 1);
        }
        let reused = run_reuse(&net, &s, &rs, &RunOptions::default()).unwrap();
        let plain = run_sliced(&net, &t, &spec, &RunOptions::default()).unwrap();
        assert!(rel_err(reused.value, plain.value, 1e-3) < 1e-10);
        assert_eq!(reused.stats.multiplies, report.predicted_multiplies);
        assert!(reused.stats.multiplies < plain.stats.multiplies);
        assert!(reused.stats.bytes_peak <= report.predicted_peak_bytes);
    }
}

#[test]
fn tree_reuse_sits_between() {
    let b = nested_stem(2, 4, 2);
    let t = b.build();
    let net = b.network::<f64>(1);
    let s = linearize(&t);
    let spec = reuse_all(&s, &["n1", "n2", "n3"]);
    let budget = MemoryBudget::unlimited(Precision::Double);
    let (spindle, sp) = plan_spindle(&s, &spec, &budget).unwrap();
    let (tree, tp) = plan_tree_reuse(&s, &spec, &budget).unwrap();
    let plain = run_sliced(&net, &t, &spec, &RunOptions::default()).unwrap();
    assert!(sp.predicted_multiplies <= tp.predicted_multiplies);
    assert!(tp.predicted_multiplies <= plain.stats.multiplies);
    for rs in [&spindle, &tree] {
        let out = run_reuse(&net, &s, rs, &RunOptions::default()).unwrap();
        assert!(rel_err(out.value, plain.value, 1e-3) < 1e-10);
    }
}

#[test]
fn empty_reuse_set_is_bitwise_sliced() {
    let b = nested_stem(1, 1, 2);
    let t = b.build();
    let net = b.network::<f64>(9);
    let s = linearize(&t);
    let spec = SliceSpec::from_labels(&s, &["n1", "n2"]).unwrap();
    let (rs, report) =
        plan_spindle(&s, &spec, &MemoryBudget::unlimited(Precision::Double)).unwrap();
    assert!(rs.nested_slices.is_empty());
    let a = run_reuse(&net, &s, &rs, &RunOptions::default()).unwrap();
    let b = run_sliced(&net, &t, &spec, &RunOptions::default()).unwrap();
    assert_eq!(a.value, b.value);
    assert_eq!(a.partials, b.partials);
    assert_eq!(a.stats.multiplies, b.stats.multiplies);
    assert_eq!(report.overhead_with_reuse, report.overhead_without_reuse);
}

#[test]
fn reuse_on_circuits_matches_direct() {
    for seed in 0..8u64 {
        let (net, t, text) = circuit_case(10, 5, seed);
        let cap = tree_metrics(&t).max_rank.saturating_sub(3).max(4);
        let spec = select_slices(&t, cap, 0, seed).unwrap();
        let s = linearize(&t);
        let budget = MemoryBudget::unlimited(Precision::Double);
        let choice = choose_reuse_subset(&s, &spec, &budget, 12).unwrap();
        let (rs, report) = plan_spindle(&choice.schedule, &choice.spec, &budget).unwrap();
        interpret(&rs).unwrap();
        let out = run_reuse(&net, &choice.schedule, &rs, &RunOptions::default()).unwrap();
        assert_eq!(out.stats.multiplies, report.predicted_multiplies);
        let c = tnc_core::circuit::parse_circuit(&text).unwrap();
        let bits: String = (0..10)
            .map(|k| if (seed >> k) & 1 == 1 { '1' } else { '0' })
            .collect();
        let want = statevector_amplitude(&c, &bits);
        assert!(
            rel_err(out.value, want, 2f64.powi(-5)) < 1e-10,
            "seed {seed}"
        );
    }
}

#[test]
fn workers_do_not_change_results() {
    let b = multi_stem();
    let t = b.build();
    let net = b.network::<f32>(3);
    let s = linearize(&t);
    let spec = reuse_all(&s, &["n1", "n2", "n3"]);
    let mut spec = spec;
    spec.entries
        .extend(SliceSpec::from_labels(&s, &["c1"]).unwrap().entries);
    spec.refresh_nesting();
    let (rs, _) = plan_spindle(&s, &spec, &MemoryBudget::unlimited(Precision::Single)).unwrap();
    let run = |w: usize| {
        let opts = RunOptions {
            workers: w,
            group_size: 3,
            ..RunOptions::default()
        };
        (
            run_reuse(&net, &s, &rs, &opts).unwrap(),
            run_sliced(&net, &t, &spec, &opts).unwrap(),
        )
    };
    let (r1, s1) = run(1);
    for w in [2, 4] {
        let (r, sl) = run(w);
        assert_eq!(r.value, r1.value);
        assert_eq!(r.partials, r1.partials);
        assert_eq!(r.stats.multiplies, r1.stats.multiplies);
        assert_eq!(sl.value, s1.value);
        assert_eq!(sl.partials, s1.partials);
    }
}

#[test]
fn tune_memory_trades_multiplies_for_peak() {
    let b = nested_stem(3, 3, 2);
    let t = b.build();
    let net = b.network::<f64>(2);
    let s = linearize(&t);
    let spec = reuse_all(&s, &["n1", "n2", "n3"]);
    let free = predict(&s, &spec, 16).unwrap();
    let budget = MemoryBudget::new(free.peak_bytes - 1, Precision::Double);
    let (tuned, report) = tune_memory(&s, &spec, &budget).unwrap();
    assert!(!report.moves.is_empty() || !report.demoted.is_empty());
    let after = predict(&s, &tuned, 16).unwrap();
    assert_eq!(after.multiplies, free.multiplies + report.added_multiplies);
    assert_eq!(after.peak_bytes, report.predicted_peak_bytes);
    let (rs, plan) = plan_spindle(&s, &tuned, &budget).unwrap();
    interpret(&rs).unwrap();
    let out = run_reuse(&net, &s, &rs, &RunOptions::default()).unwrap();
    assert_eq!(out.stats.multiplies, plan.predicted_multiplies);
    let plain = run_sliced(&net, &t, &spec, &RunOptions::default()).unwrap();
    assert!(rel_err(out.value, plain.value, 1e-3) < 1e-10);
}

#[test]
fn group_size_is_irrelevant_for_integers() {
    let partials: Vec<Complex<f64>> = (0..1000)
        .map(|k| Complex::new((k % 17) as f64 - 8.0, (k % 5) as f64))
        .collect();
    let want = hierarchical_reduce(&partials, &ReductionTopology::new(1).unwrap());
    for g in [2, 7, 64, 256, 5000] {
        assert_eq!(
            hierarchical_reduce(&partials, &ReductionTopology::new(g).unwrap()),
            want
        );
    }
    assert!(ReductionTopology::new(0).is_err());
}

#[test]
fn replay_catches_single_corruption() {
    let (net, t, _) = circuit_case(10, 6, 4);
    let spec = select_slices(&t, tree_metrics(&t).max_rank - 2, 0, 0).unwrap();
    assert!(spec.len() >= 2);
    let indices: Vec<Index> = spec.entries.iter().map(|e| e.index.clone()).collect();
    let out = run_sliced(&net, &t, &spec, &RunOptions::default()).unwrap();
    let n = out.partials.len();
    let clean = replay_verify(&net, &t, &indices, &out.partials, n, 1, 1e-10).unwrap();
    assert!(clean.passed);
    assert!(clean.flagged.is_empty());
    for k in 0..n {
        let mut bad = out.partials.clone();
        let bits = bad[k].re.to_bits() ^ (1u64 << 61);
        bad[k].re = f64::from_bits(bits);
        let r = replay_verify(&net, &t, &indices, &bad, n, 1, 1e-10).unwrap();
        assert_eq!(r.flagged, vec![k as u64]);
        assert!(!r.passed);
    }
    let none = replay_verify(&net, &t, &indices, &out.partials, 0, 1, 1e-10).unwrap();
    assert!(none.samples.is_empty() && none.passed);
}

#[test]
fn spill_round_trip() {
    let dir = std::env::temp_dir().join(format!("tnc-spill-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("partials.bin");
    let (net, t, _) = circuit_case(10, 6, 6);
    let spec = select_slices(&t, tree_metrics(&t).max_rank - 1, 0, 0).unwrap();
    assert!(!spec.is_empty());
    let mem = run_sliced(&net, &t, &spec, &RunOptions::default()).unwrap();
    let opts = RunOptions {
        spill: Some(path.clone()),
        ..RunOptions::default()
    };
    let spilled = run_sliced(&net, &t, &spec, &opts).unwrap();
    assert_eq!(spilled.value, mem.value);
    let back = read_partials(&path).unwrap();
    assert_eq!(back.len(), mem.partials.len());
    for (k, (id, c)) in back.iter().enumerate() {
        assert_eq!(*id, k as u64);
        assert_eq!(*c, mem.partials[k]);
    }
    write_partials(&path, &mem.partials[..1]).unwrap();
    assert_eq!(read_partials(&path).unwrap().len(), 1);
    std::fs::write(&path, [0u8; 5]).unwrap();
    assert!(read_partials(&path).is_err());
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn intermediate_guard_trips() {
    let (net, t, _) = circuit_case(8, 4, 2);
    let opts = RunOptions {
        max_intermediate_elements: Some(4),
        ..RunOptions::default()
    };
    assert!(matches!(
        run_direct(&net, &t, &opts),
        Err(TncError::OutOfMemory { .. })
    ));
}

#[test]
fn single_precision_chain() {
    let b = nested_stem(2, 2, 2);
    let t = b.build();
    let net64 = b.network::<f64>(12);
    let net32: TensorNetwork<f32> = net64.cast();
    let s = linearize(&t);
    let spec = reuse_all(&s, &["n1", "n2", "n3"]);
    let (rs, _) = plan_spindle(&s, &spec, &MemoryBudget::unlimited(Precision::Single)).unwrap();
    let (want, _) = run_direct(&net64, &t, &RunOptions::default()).unwrap();
    let (d, _) = run_direct(&net32, &t, &RunOptions::default()).unwrap();
    let sl = run_sliced(&net32, &t, &spec, &RunOptions::default()).unwrap();
    let ru = run_reuse(&net32, &s, &rs, &RunOptions::default()).unwrap();
    for v in [d, sl.value, ru.value] {
        assert!(rel_err(to_c64(v), want, 1e-3) < 1e-5);
    }
}
