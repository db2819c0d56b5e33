use proptest::prelude::*;

use sparsecl_core::baselines::{ewc_penalty, gem_project, EwcState};
use sparsecl_core::continual::{run_sequence, ImportanceMasking, OptimizerConfig};
use sparsecl_core::importance::{estimate, estimate_fisher, Estimator, DEFAULT_XI};
use sparsecl_core::masking::{GradientMask, MaskSource};
use sparsecl_core::metrics::{bleu, rouge_l};
use sparsecl_core::model::{attach_lora, build_model, LoraConfig, ModelConfig, Sample};
use sparsecl_core::tasks::{generate_sequence, generate_task, GeneratorKind, SyntheticTaskConfig};
use sparsecl_core::{GradientRecord, Granularity};

fn labeled(features: Vec<Vec<f64>>, classes: usize) -> Vec<Sample> {
    features.into_iter().enumerate().map(|(i, f)| Sample::labeled(f, i % classes)).collect()
}

fn rec(v: &[f64]) -> GradientRecord {
    GradientRecord { values: v.to_vec(), granularity: Granularity::PerBatch }
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn batch_gradient_is_mean_of_sample_gradients(
        seed in 0u64..1000,
        xs in proptest::collection::vec(proptest::collection::vec(-2.0f64..2.0, 4), 1..9),
        ln in any::<bool>(),
    ) {
        let (m, s) = build_model(ModelConfig::mlp(&[4, 6, 3], seed).with_layer_norm(ln)).unwrap();
        let batch = labeled(xs, 3);
        let (_, b) = m.loss_and_grad(&s, &batch, Granularity::PerBatch).unwrap();
        let (_, per) = m.loss_and_grad(&s, &batch, Granularity::PerSample).unwrap();
        prop_assert_eq!(per.len(), batch.len());
        for i in 0..s.len() {
            let mean = per.iter().map(|r| r.values[i]).sum::<f64>() / batch.len() as f64;
            prop_assert!((mean - b[0].values[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn forward_is_pure(seed in 0u64..1000, tokens in proptest::collection::vec(0usize..12, 1..8)) {
        let (m, s) = build_model(ModelConfig::transformer(12, 8, 1, 2, seed)).unwrap();
        let a = m.token_logits(&s, &tokens).unwrap();
        let b = m.token_logits(&s, &tokens).unwrap();
        prop_assert_eq!(bits(a.data()), bits(b.data()));
    }

    #[test]
    fn zero_b_adapters_keep_base_logits(seed in 0u64..1000, tokens in proptest::collection::vec(0usize..12, 1..6), rank in 1usize..4) {
        let (m, s) = build_model(ModelConfig::transformer(12, 8, 1, 2, seed)).unwrap();
        let mut adapted = s.clone();
        attach_lora(&mut adapted, &LoraConfig { rank, ..LoraConfig::default() }, "t1", seed).unwrap();
        let a = m.token_logits(&s, &tokens).unwrap();
        let b = m.token_logits(&adapted, &tokens).unwrap();
        prop_assert_eq!(bits(a.data()), bits(b.data()));
    }

    #[test]
    fn duplicated_dataset_gives_identical_importance(seed in 0u64..1000, n in 1usize..12) {
        let (m, s) = build_model(ModelConfig::mlp(&[3, 5, 2], seed)).unwrap();
        let data = generate_task(&SyntheticTaskConfig::gaussian(3, 2, n, 2, seed, 0.0), 1).unwrap().train;
        let twice: Vec<Sample> = data.iter().chain(&data).cloned().collect();
        let a = estimate(&m, &s, &data, Estimator::Fisher).unwrap();
        let b = estimate(&m, &s, &twice, Estimator::Fisher).unwrap();
        for (x, y) in a.scores.iter().zip(&b.scores) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs());
        }
        // |mean g| can cancel to rounding level, so second-order scores are
        // compared on their [0, 1) scale
        let so = Estimator::SecondOrder { xi: DEFAULT_XI };
        let a = estimate(&m, &s, &data, so).unwrap();
        let b = estimate(&m, &s, &twice, so).unwrap();
        for (x, y) in a.scores.iter().zip(&b.scores) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn gem_feasible_and_no_worse_than_grid(
        g in proptest::collection::vec(-1.0f64..1.0, 3),
        mem in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 3), 1..4),
    ) {
        let out = gem_project(&rec(&g), &mem.iter().map(|m| rec(m)).collect::<Vec<_>>()).unwrap();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        for m in &mem {
            prop_assert!(dot(&out.values, m) >= -1e-9);
        }
        let dist = |x: &[f64]| x.iter().zip(&g).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let best = dist(&out.values);
        let steps: Vec<f64> = (-10..=10).map(|i| i as f64 / 10.0).collect();
        for &a in &steps {
            for &b in &steps {
                for &c in &steps {
                    let x = [a, b, c];
                    if mem.iter().all(|m| dot(&x, m) >= 0.0) {
                        prop_assert!(best <= dist(&x) + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn ewc_penalty_zero_iff_anchored_on_support(
        fisher in proptest::collection::vec(prop_oneof![Just(0.0), 0.1f64..2.0], 1..10),
        shift in proptest::collection::vec(prop_oneof![Just(0.0), -1.0f64..1.0], 10),
    ) {
        let n = fisher.len();
        let anchor: Vec<f64> = (0..n).map(|i| i as f64 * 0.3 - 1.0).collect();
        let theta: Vec<f64> = anchor.iter().zip(&shift).map(|(a, d)| a + d).collect();
        let st = EwcState { lambda: 0.7, fisher: fisher.clone(), anchor };
        let (pen, _) = ewc_penalty(&theta, &st).unwrap();
        let on_support = (0..n).all(|i| fisher[i] == 0.0 || shift[i] == 0.0);
        prop_assert_eq!(pen == 0.0, on_support);
    }

    #[test]
    fn generators_pure_with_disjoint_splits(seed in 0u64..10_000, kind in 0usize..4, drift in 0.0f64..1.0) {
        let kind = [GeneratorKind::GaussianClusters, GeneratorKind::PermutedFeatures, GeneratorKind::SplitLabels, GeneratorKind::CharSequence][kind];
        let cfg = SyntheticTaskConfig { kind, ..SyntheticTaskConfig::gaussian(6, 4, 30, 12, seed, drift) };
        let a = generate_task(&cfg, 1).unwrap();
        let b = generate_task(&cfg, 1).unwrap();
        prop_assert_eq!(&a.train, &b.train);
        prop_assert_eq!(&a.eval, &b.eval);
        prop_assert!(a.train.iter().all(|s| !a.eval.contains(s)));
    }

    #[test]
    fn identity_text_scores(x in proptest::collection::vec(0u8..6, 1..15), n in 1usize..5) {
        prop_assert_eq!(rouge_l(&x, &x), 1.0);
        if n <= x.len() {
            prop_assert!((bleu(&x, &x, n).unwrap() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn mask_bytes_round_trip(idx in proptest::collection::btree_set(0usize..5000, 1..200), task in 1u32..50) {
        let m = GradientMask::new(idx.into_iter().collect(), 5000, MaskSource::SecondOrder, task).unwrap();
        prop_assert_eq!(GradientMask::from_bytes(&m.to_bytes()).unwrap(), m);
    }
}

#[test]
fn importance_is_a_function_of_the_pre_task_checkpoint() {
    let cfgs: Vec<_> = (0..3).map(|i| SyntheticTaskConfig::gaussian(5, 3, 80, 20, 30 + i, i as f64)).collect();
    let tasks = generate_sequence(&cfgs).unwrap();
    let (m, init) = build_model(ModelConfig::mlp(&[5, 12, 3], 9)).unwrap();
    let run = run_sequence(&m, &init, &tasks, &mut ImportanceMasking::new(Estimator::Fisher, 0.1), &OptimizerConfig::adam(0.01, 2, 16, 4)).unwrap();
    for (t, imp) in run.importances.iter().enumerate() {
        let again = estimate_fisher(&m, &run.checkpoints[t], &tasks[t].train).unwrap();
        assert_eq!(bits(&again.scores), bits(&imp.scores));
    }
}
