use proptest::prelude::*;

use memaudit::lira::{
    counterfactual_memorization, global_lira_asr, local_lira_score, make_splits, LiraConfig, ShadowEntry,
    ShadowSuite, VarianceMode,
};

fn suite(n: usize, masks: &[Vec<bool>], gaps: &[Vec<f64>]) -> ShadowSuite {
    let entries = masks
        .iter()
        .zip(gaps)
        .enumerate()
        .map(|(s, (mask, g))| ShadowEntry {
            split_id: s as u32,
            mask: mask.clone(),
            gaps: vec![g.clone()],
        })
        .collect();
    ShadowSuite::new(n, vec![1.0], 0, entries).unwrap()
}

fn gaps_strategy(n: usize, m: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-8.0f64..8.0, n), m)
}

const N: usize = 12;
const M: usize = 24;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn attack_predictions_are_affine_invariant(
        gaps in gaps_strategy(N, M),
        seed in 0u64..1000,
        scale in prop::sample::select(vec![0.25, 2.0, 8.0]),
        shift in -4i32..4,
    ) {
        let masks = make_splits(N, M, seed).unwrap();
        let cfg = LiraConfig { variance: VarianceMode::PerSampleWithFallback, ..LiraConfig::default() };
        let moved: Vec<Vec<f64>> = gaps
            .iter()
            .map(|g| g.iter().map(|v| scale * v + shift as f64).collect())
            .collect();
        let a = global_lira_asr(&suite(N, &masks, &gaps), 0, &cfg).unwrap();
        let b = global_lira_asr(&suite(N, &masks, &moved), 0, &cfg).unwrap();
        prop_assert_eq!(a.successes, b.successes);
        prop_assert_eq!(a.attacks, b.attacks);
    }

    #[test]
    fn local_scores_are_affine_invariant(gaps in gaps_strategy(N, M), seed in 0u64..1000) {
        let masks = make_splits(N, M, seed).unwrap();
        let cfg = LiraConfig { variance: VarianceMode::PerSampleWithFallback, ..LiraConfig::default() };
        let moved: Vec<Vec<f64>> = gaps.iter().map(|g| g.iter().map(|v| 4.0 * v - 3.0).collect()).collect();
        let a = local_lira_score(&suite(N, &masks, &gaps), 0, 0, &cfg).unwrap();
        let b = local_lira_score(&suite(N, &masks, &moved), 0, 0, &cfg).unwrap();
        for (x, y) in a.scores.iter().zip(&b.scores) {
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()), "{} vs {}", x, y);
        }
    }

    #[test]
    fn counterfactual_memorization_superposes(
        g1 in gaps_strategy(N, M),
        g2 in gaps_strategy(N, M),
        seed in 0u64..1000,
    ) {
        let masks = make_splits(N, M, seed).unwrap();
        let sum: Vec<Vec<f64>> = g1.iter().zip(&g2).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect()).collect();
        let c1 = counterfactual_memorization(&suite(N, &masks, &g1), 0).unwrap();
        let c2 = counterfactual_memorization(&suite(N, &masks, &g2), 0).unwrap();
        let cs = counterfactual_memorization(&suite(N, &masks, &sum), 0).unwrap();
        for i in 0..N {
            prop_assert!((cs[i] - (c1[i] + c2[i])).abs() <= 1e-12, "sample {}", i);
        }
        // Scaling by a power of two is exact.
        let doubled: Vec<Vec<f64>> = g1.iter().map(|g| g.iter().map(|v| 2.0 * v).collect()).collect();
        let cd = counterfactual_memorization(&suite(N, &masks, &doubled), 0).unwrap();
        for i in 0..N {
            prop_assert_eq!(cd[i], 2.0 * c1[i]);
        }
    }
}

#[test]
fn null_gaps_give_chance_level_asr() {
    let (n, m) = (80, 32);
    let masks = make_splits(n, m, 4).unwrap();
    // Deterministic pseudo-noise unrelated to membership.
    let gaps: Vec<Vec<f64>> = (0..m)
        .map(|s| (0..n).map(|i| (((s * 7919 + i * 104729) % 1009) as f64 / 1009.0) - 0.5).collect())
        .collect();
    let g = global_lira_asr(&suite(n, &masks, &gaps), 0, &LiraConfig::default()).unwrap();
    let mean = g.asr.iter().sum::<f64>() / n as f64;
    assert!((0.4..=0.6).contains(&mean), "mean ASR {mean}");
}
