use oneshot_unlearn::data::{
    build_unlearning_request, generate_dataset, split_by_identity, Dataset, GeneratorConfig, TaskKind,
};
use oneshot_unlearn::evaluation::{average_precision, rate_at, threshold_at_fpr, tow, PerfTriple};
use proptest::prelude::*;

fn generator() -> impl Strategy<Value = (GeneratorConfig, u64)> {
    (4usize..30, 2usize..6, 2usize..6, 2usize..5, any::<bool>(), 0.0f64..0.5, any::<u64>()).prop_map(
        |(ids, per, dim, classes, multi, resample, seed)| {
            let cfg = GeneratorConfig {
                num_identities: ids,
                samples_per_identity: per,
                feature_dim: dim,
                num_classes: classes,
                task_kind: if multi { TaskKind::MultiLabel } else { TaskKind::MultiClass },
                label_resample_frac: resample,
                ..Default::default()
            };
            (cfg, seed)
        },
    )
}

fn triple() -> impl Strategy<Value = PerfTriple> {
    (0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0).prop_map(|(retain, forget, test)| PerfTriple { retain, forget, test })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn dataset_json_round_trips((cfg, seed) in generator()) {
        let ds = generate_dataset(&cfg, seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.json");
        ds.save(&path).unwrap();
        let back = Dataset::load(&path).unwrap();
        prop_assert_eq!(&back, &ds);
        prop_assert_eq!(ds.len(), cfg.num_identities * cfg.samples_per_identity);
    }

    #[test]
    fn requests_partition_the_training_split((cfg, seed) in generator(), n_frac in 0.0f64..1.0) {
        prop_assume!(cfg.num_identities >= 5);
        let ds = generate_dataset(&cfg, seed).unwrap();
        let bundle = split_by_identity(&ds, [0.6, 0.2, 0.2], seed ^ 1).unwrap();
        let n_s = 1 + (n_frac * (bundle.train_ids.len() - 1) as f64) as usize;
        let (req, reduced) = build_unlearning_request(&bundle, n_s, seed ^ 2).unwrap();
        prop_assert_eq!(req.support().len(), n_s);
        prop_assert_eq!(req.support().identities(), req.forget_ids.clone());
        prop_assert_eq!(req.forget_set().len() + req.retain_set().len(), reduced.len());
        prop_assert_eq!(reduced.len() + n_s, bundle.train.len());
        prop_assert!(req.support().sample_ids().is_disjoint(&reduced.sample_ids()));
    }

    #[test]
    fn tow_is_symmetric_and_bounded(a in triple(), b in triple()) {
        let t = tow(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&t));
        prop_assert_eq!(t, tow(&b, &a).unwrap());
        prop_assert_eq!(tow(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn ap_is_bounded_and_perfect_rankings_score_one(labels in prop::collection::vec(any::<bool>(), 1..40)) {
        let perfect: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
        match average_precision(&perfect, &labels) {
            None => prop_assert!(labels.iter().all(|l| !l)),
            Some(ap) => prop_assert_eq!(ap, 1.0),
        }
        let reversed: Vec<f64> = perfect.iter().map(|s| -s).collect();
        if let Some(ap) = average_precision(&reversed, &labels) {
            prop_assert!(ap > 0.0 && ap <= 1.0);
        }
    }

    #[test]
    fn threshold_respects_target(scores in prop::collection::vec(-5.0f64..5.0, 1..500), fpr in 1e-4f64..1.0) {
        let beta = threshold_at_fpr(&scores, fpr).unwrap().beta;
        prop_assert!(rate_at(&scores, beta) <= fpr);
        prop_assert!(rate_at(&scores, beta.next_down()) > fpr);
    }
}
