mod common;

use common::{batch_stem, oscillating_stem, random_stem};
use num_rational::Ratio;
use tnc_core::cost::{
    batch_swap_ratio, failure_rate, plan_batch_swaps, simulate_fusion, ArrayParams,
};
use tnc_core::executor::simulate_failure_rate;
use tnc_core::schedule::linearize;

#[test]
fn section_identity_and_dominance() {
    let p = ArrayParams::default();
    for seed in 0..200u64 {
        let s = linearize(&random_stem(seed, 10, 21, 25));
        let solo = simulate_fusion(&s, &p, false).unwrap();
        let coop = simulate_fusion(&s, &p, true).unwrap();
        for r in [&solo, &coop] {
            let saved: u128 = r
                .fused_sections
                .iter()
                .map(|x| 2 * (x.length as u128 - 1))
                .sum();
            assert_eq!(
                r.baseline_accesses - r.memory_accesses,
                saved,
                "seed {seed}"
            );
        }
        assert!(coop.memory_accesses <= solo.memory_accesses, "seed {seed}");
        assert!(coop.fused_sections.len() <= solo.fused_sections.len());
        assert!(coop.mean_fused_length() >= solo.mean_fused_length());
        assert_eq!(solo.rma_bytes, 0);
    }
}

#[test]
fn small_stem_ignores_cooperation() {
    let p = ArrayParams::default();
    for seed in 0..20u64 {
        let s = linearize(&random_stem(seed, 4, 12, 15));
        let solo = simulate_fusion(&s, &p, false).unwrap();
        let mut coop = simulate_fusion(&s, &p, true).unwrap();
        assert_eq!(coop.rma_bytes, 0);
        assert!(coop.swap_events.is_empty());
        coop.cooperate = false;
        assert_eq!(coop, solo);
    }
}

#[test]
fn oscillating_stem_fuses_under_cooperation() {
    let s = linearize(&oscillating_stem());
    let p = ArrayParams::default();
    let solo = simulate_fusion(&s, &p, false).unwrap();
    let coop = simulate_fusion(&s, &p, true).unwrap();
    assert_eq!(coop.fused_sections.len(), 1);
    assert_eq!(coop.fused_sections[0].length, 20);
    assert_eq!(coop.memory_accesses, 2);
    assert_eq!(solo.memory_accesses, 40);
    assert!(10 * coop.memory_accesses <= 7 * solo.memory_accesses);
    assert!(coop.dma_bytes < solo.dma_bytes);
}

#[test]
fn swaps_serve_contractions() {
    let p = ArrayParams::default();
    for seed in 0..50u64 {
        let s = linearize(&random_stem(seed, 14, 19, 20));
        let coop = simulate_fusion(&s, &p, true).unwrap();
        for ev in &coop.swap_events {
            let st = &s.steps[ev.step];
            for l in &ev.indices {
                assert!(
                    st.lhs_indices.iter().any(|i| &i.label == l)
                        && st.rhs_indices.iter().any(|i| &i.label == l)
                );
            }
            assert_eq!(ev.group_cells, 2);
        }
        for r in &coop.residency {
            assert!(r.inter.len() <= p.inter_slots());
            assert!(r.intra.iter().all(|l| !r.inter.contains(l)));
        }
    }
}

#[test]
fn batched_traffic_reproduces_ratio() {
    let p = ArrayParams::default();
    for n in 1..=5u32 {
        let s = linearize(&batch_stem(n as usize));
        let pairwise = plan_batch_swaps(&s, &p, None).unwrap();
        let batch = plan_batch_swaps(&s, &p, Some(0)).unwrap();
        assert_eq!(pairwise.ratio(), Ratio::from_integer(1));
        assert_eq!(batch.pairwise_per_cell_bytes, pairwise.per_cell_bytes);
        assert_eq!(
            pairwise.per_cell_bytes / batch.per_cell_bytes,
            batch_swap_ratio(n).unwrap(),
            "n={n}"
        );
        assert_eq!(batch.ratio(), batch_swap_ratio(n).unwrap());
        assert_eq!(batch.events.len(), 1);
        assert_eq!(batch.events[0].group_cells, 1 << n);
    }
}

#[test]
fn two_leg_batch_is_three_quarters() {
    let s = linearize(&batch_stem(2));
    let p = ArrayParams::default();
    let batch = plan_batch_swaps(&s, &p, Some(0)).unwrap();
    // rank 14 with six legs spread across cells leaves a 2^8 block per cell
    let tensor = Ratio::from_integer((1u128 << 8) * 8);
    assert_eq!(batch.per_cell_bytes, tensor * Ratio::new(3, 4));
}

#[test]
fn ratio_values() {
    let r = |n| batch_swap_ratio(n).unwrap();
    assert_eq!(r(1), Ratio::from_integer(1));
    assert_eq!(r(2), Ratio::new(4, 3));
    assert_eq!(r(3), Ratio::new(12, 7));
    for n in 1..40 {
        assert!(r(n + 1) > r(n));
    }
    assert!(batch_swap_ratio(0).is_err());
}

#[test]
fn failure_rates() {
    assert_eq!(failure_rate(10, 0.0).unwrap(), 0.0);
    assert!((failure_rate(2, 0.5).unwrap() - 0.75).abs() < 1e-15);
    let want = 1.0 - (1.0f64 - 1e-4).powi(1024);
    assert!((failure_rate(1024, 1e-4).unwrap() - want).abs() < 1e-12);
    assert!((failure_rate(1024, 1e-4).unwrap() - 0.09733).abs() < 1e-5);
    assert!(failure_rate(3, 1.5).is_err());
    assert!(failure_rate(3, -0.1).is_err());
}

#[test]
fn injector_agrees_with_formula() {
    let got = simulate_failure_rate(64, 0.01, 20_000, 5).unwrap();
    let want = failure_rate(64, 0.01).unwrap();
    assert!((got - want).abs() < 0.02, "{got} {want}");
    assert_eq!(
        simulate_failure_rate(64, 0.01, 100, 5).unwrap(),
        simulate_failure_rate(64, 0.01, 100, 5).unwrap()
    );
}

#[test]
fn params_follow_cell_count() {
    let p = ArrayParams::new(16, 10, 16).unwrap();
    assert_eq!(p.coop_rank_cap, 14);
    assert_eq!(p.inter_slots(), 4);
    assert!(ArrayParams::new(48, 13, 8).is_err());
    let bad = ArrayParams {
        coop_rank_cap: 18,
        ..ArrayParams::default()
    };
    let s = linearize(&oscillating_stem());
    assert!(simulate_fusion(&s, &bad, true).is_err());
}
