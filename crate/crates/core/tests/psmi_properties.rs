use proptest::prelude::*;

use memaudit::datastore::{LabelSet, RepresentationSet};
use memaudit::psmi::{estimate_psmi, smi_estimate, FitScope};
use memaudit::synthetic::{sample_mixture, MixtureConfig};
use memaudit::Matrix;

fn dataset(d: usize, labels: &[u32], values: &[f64]) -> (RepresentationSet, LabelSet) {
    let n = labels.len();
    let reps = RepresentationSet::new(Matrix::from_vec(n, d, values[..n * d].to_vec()).unwrap(), 1, "p", None).unwrap();
    (reps, LabelSet::new(labels.to_vec(), None, None).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn mean_psmi_equals_direction_average(
        d in 1usize..5,
        per_class in 3usize..12,
        values in prop::collection::vec(-5.0f64..5.0, 4 * 36),
        seed in 0u64..100,
    ) {
        let labels: Vec<u32> = (0..3 * per_class).map(|i| (i % 3) as u32).collect();
        let (reps, labels) = dataset(d, &labels, &values);
        for scope in [FitScope::InSample, FitScope::LeaveOneOut] {
            let s = estimate_psmi(&reps, &labels, 16, seed, scope).unwrap();
            let smi = smi_estimate(&s).unwrap().value;
            let by_direction = s.direction_mi().iter().sum::<f64>() / s.direction_count() as f64;
            prop_assert!((smi - by_direction).abs() <= 1e-9 * smi.abs().max(1e-12), "{} vs {}", smi, by_direction);
            prop_assert!(s.values().iter().all(|v| v.is_finite()));
        }
    }
}

#[test]
fn scores_do_not_depend_on_thread_count() {
    let s = sample_mixture(&MixtureConfig::symmetric(6, 1.0, 0.2, 3000, 8)).unwrap();
    let reps = s.representation_set().unwrap();
    let labels = s.label_set().unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| estimate_psmi(&reps, &labels, 300, 2, FitScope::InSample).unwrap())
    };
    let (a, b) = (run(1), run(5));
    assert_eq!(a.values(), b.values());
    assert_eq!(a.stderr(), b.stderr());
}
