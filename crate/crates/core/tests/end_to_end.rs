use memaudit::datastore::LabelSet;
use memaudit::layout::{hyperparameters, read_dataset, train_suite_to_disk, write_dataset, DatasetInfo, RunDirectory};
use memaudit::lira::{local_lira_score, LiraConfig, VarianceMode};
use memaudit::pipeline::{loss_trace, member_ground_truth, predict_pipeline, InMemoryRun, PipelineConfig};
use memaudit::synthetic::{run_shadow_suite, sample_mixture, ShadowConfig, ShadowOutput, MixtureConfig, MixtureSample};

fn suite(config: &MixtureConfig) -> (MixtureSample, LabelSet, ShadowOutput) {
    let s = sample_mixture(config).unwrap();
    let labels = s.label_set().unwrap();
    let out = run_shadow_suite(&s.data, &labels, &ShadowConfig::default()).unwrap();
    (s, labels, out)
}

#[test]
fn outliers_dominate_the_top_decile() {
    let (sample, labels, out) = suite(&MixtureConfig::symmetric(16, 2.0, 0.1, 2000, 0));
    let src = InMemoryRun::new(&out, &labels).unwrap();

    let trace = loss_trace(&src).unwrap();
    let medians = trace.medians();
    assert!(medians.last().unwrap() < &medians[0]);

    let last = out.suite.checkpoint_epochs().len() - 1;
    let cfg = LiraConfig {
        variance: VarianceMode::PerSampleWithFallback,
        ..LiraConfig::default()
    };
    let lira = local_lira_score(&out.suite, 0, last, &cfg).unwrap();
    let mut order: Vec<usize> = (0..lira.scores.len()).collect();
    order.sort_by(|&a, &b| lira.scores[b].total_cmp(&lira.scores[a]));
    let top = &order[..order.len() / 10];
    let members = &lira.sample_ids;
    let rate = |idx: &mut dyn Iterator<Item = usize>| {
        let v: Vec<bool> = idx.map(|i| sample.outlier[members[i]]).collect();
        v.iter().filter(|&&o| o).count() as f64 / v.len() as f64
    };
    let top_rate = rate(&mut top.iter().copied());
    let base_rate = rate(&mut (0..members.len()));
    assert!(top_rate >= 2.0 * base_rate, "top decile {top_rate}, base {base_rate}");
}

#[test]
fn clean_data_completes_with_forced_quantile() {
    let (_, labels, out) = suite(&MixtureConfig::symmetric(16, 4.0, 0.0, 1000, 3));
    let src = InMemoryRun::new(&out, &labels).unwrap();
    let cfg = PipelineConfig {
        directions: 200,
        ..PipelineConfig::default()
    };
    let o = predict_pipeline(&src, &cfg).unwrap();
    // The ground truth always labels the top decile, whatever the data.
    assert_eq!(o.report.memorized, 50);
    let rate = o.report.predicted as f64 / o.report.members as f64;
    assert_eq!(o.report.base_rate_mismatch, !(0.05..=0.2).contains(&rate));
}

#[test]
fn disk_and_memory_agree() {
    let dir = tempfile::tempdir().unwrap();
    let config = MixtureConfig::symmetric(8, 2.0, 0.1, 400, 5);
    let sample = sample_mixture(&config).unwrap();
    let info = DatasetInfo {
        name: "e2e".into(),
        d: 8,
        n: 400,
        epsilon: 0.1,
        separation: 2.0,
        law: "class-mixture".into(),
        seed: 5,
    };
    write_dataset(dir.path(), &info, &sample).unwrap();
    let ds = read_dataset(dir.path()).unwrap();
    let shadow = ShadowConfig {
        train: memaudit::synthetic::TrainConfig {
            epochs: 3,
            ..Default::default()
        },
        ..ShadowConfig::default()
    };
    train_suite_to_disk(dir.path(), &ds, &shadow, hyperparameters(&shadow, 0.95, 2000, 0.1, 0.75)).unwrap();
    let disk = RunDirectory::open(dir.path()).unwrap();
    // The dataset is stored as float32, so train the in-memory suite on the same values.
    let mem = run_shadow_suite(&ds.data, &ds.labels, &shadow).unwrap();
    let src = InMemoryRun::new(&mem, &ds.labels).unwrap();
    let cfg = PipelineConfig::default();
    let (la, ga) = member_ground_truth(&disk, &cfg).unwrap();
    let (lb, gb) = member_ground_truth(&src, &cfg).unwrap();
    assert_eq!(la.scores, lb.scores);
    assert_eq!(ga, gb);
}
