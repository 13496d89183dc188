use proptest::prelude::*;
use protograph_core::eval::mean_and_ci95;
use protograph_core::numerics::{log_softmax, standard_normal_sample};
use protograph_core::sampler::{log_mean_exp, predicted_slot};
use protograph_core::trainer::episode_streams;
use protograph_core::*;

fn small_dataset(seed: u64) -> (Dataset, RelationGraph) {
    let synth = SynthConfig {
        num_relations: 8,
        dim: 3,
        cluster_scale: 2.0,
        instances_per_relation: 6,
        train_relations: 5,
        val_relations: 1,
        ..SynthConfig::default()
    };
    let (ds, emb) = generate_synthetic(&synth, &RngStream::new(seed, 0)).unwrap();
    let graph = build_knn_graph(&emb, 3).unwrap();
    (ds, graph)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn log_mean_exp_lies_between_min_and_max(xs in prop::collection::vec(-700.0f64..700.0, 1..12)) {
        let lme = log_mean_exp(&xs);
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lme >= lo - 1e-9 && lme <= hi + 1e-9);
    }

    #[test]
    fn log_softmax_exponentiates_to_a_distribution(xs in prop::collection::vec(-1e4f64..1e4, 1..12)) {
        let lp = log_softmax(&xs).unwrap();
        prop_assert!(lp.iter().all(|&x| x <= 1e-12));
        prop_assert!((lp.iter().map(|x| x.exp()).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ties_go_to_the_lowest_relation_id(ids in prop::collection::btree_set(0usize..50, 2..8), seed in any::<u64>()) {
        let mut targets: Vec<RelationId> = ids.into_iter().map(RelationId).collect();
        let k = targets.len();
        // Shuffle deterministically so the lowest id is not always in slot 0.
        targets.rotate_left((seed as usize) % k);
        let probs = vec![1.0 / k as f64; k];
        let slot = predicted_slot(&probs, &targets);
        prop_assert_eq!(targets[slot], *targets.iter().min().unwrap());
    }

    #[test]
    fn confidence_interval_contains_the_mean(values in prop::collection::vec(0.0f64..1.0, 2..40)) {
        let (mean, ci) = mean_and_ci95(&values);
        let exact = values.iter().sum::<f64>() / values.len() as f64;
        prop_assert!((mean - exact).abs() < 1e-12);
        prop_assert!(ci >= 0.0);
    }

    #[test]
    fn step_sizes_never_increase(eps in 1e-4f64..1.0, decay in 0.0f64..1.0) {
        let cfg = SamplerConfig { epsilon0: eps, step_decay: decay, ..SamplerConfig::default() };
        for t in 1..20 {
            prop_assert!(cfg.step_size(t + 1) <= cfg.step_size(t));
        }
        prop_assert!((cfg.step_size(1) - eps).abs() < 1e-15);
    }

    #[test]
    fn forked_streams_replay(seed in any::<u64>(), id in any::<u64>(), child in 0u64..1000) {
        let a = standard_normal_sample(&[4], &RngStream::new(seed, id).fork(child));
        let b = standard_normal_sample(&[4], &RngStream::new(seed, id).fork(child));
        prop_assert_eq!(&a, &b);
        let c = standard_normal_sample(&[4], &RngStream::new(seed, id).fork(child + 1));
        prop_assert_ne!(a, c);
    }

    #[test]
    fn episode_streams_are_distinct(seed in any::<u64>(), i in 0usize..1000) {
        let base = RngStream::new(seed, 1);
        let (task, chains) = episode_streams(&base, i);
        let (next_task, _) = episode_streams(&base, i + 1);
        prop_assert_ne!(task, chains);
        prop_assert_ne!(task, next_task);
    }

    #[test]
    fn parameters_round_trip_through_a_flat_vector(seed in any::<u64>(), layers in 1usize..3, linear in any::<bool>()) {
        let spec = ModelSpec {
            encoder: if linear { EncoderMode::Linear } else { EncoderMode::Identity },
            gnn_layers: layers,
            ..ModelSpec::default()
        };
        let params = ModelParams::init(&spec, 3, 4, &RngStream::new(seed, 0)).unwrap();
        let flat = params.flatten();
        prop_assert_eq!(flat.len(), params.num_values());
        prop_assert_eq!(params.with_values(&flat).unwrap(), params);
    }

    #[test]
    fn sampled_episodes_only_use_their_split(seed in any::<u64>(), split_idx in 0usize..2) {
        let (ds, _) = small_dataset(3);
        let split = [Split::Train, Split::Test][split_idx];
        let ep = sample_episode(&ds, split, 2, 2, 2, &RngStream::new(seed, 0)).unwrap();
        for r in &ep.targets {
            prop_assert_eq!(ds.relation(*r).unwrap().split, split);
        }
        for item in ep.support.iter().chain(&ep.query) {
            prop_assert_eq!(&ds.relation(item.relation).unwrap().instances[item.index], &item.features);
        }
    }

    #[test]
    fn summaries_have_one_row_per_node(seed in any::<u64>(), layers in 1usize..4) {
        let (_, graph) = small_dataset(seed);
        let spec = ModelSpec { gnn_layers: layers, ..ModelSpec::default() };
        let params = ModelParams::init(&spec, 3, 3, &RngStream::new(seed, 1)).unwrap();
        let h = relation_summaries(&graph, &params.gnn).unwrap();
        prop_assert_eq!(h.shape(), (graph.num_nodes(), params.gnn.output_dim()));
        prop_assert!(h.all_finite());
    }

    #[test]
    fn objective_is_reproducible(seed in any::<u64>()) {
        let (ds, graph) = small_dataset(seed % 7);
        let spec = ModelSpec { encoder: EncoderMode::Linear, ..ModelSpec::default() };
        let params = ModelParams::init(&spec, 3, 3, &RngStream::new(seed, 1)).unwrap();
        let ep = sample_episode(&ds, Split::Train, 3, 1, 2, &RngStream::new(seed, 2)).unwrap();
        let cfg = SamplerConfig { chains: 2, steps: 2, ..SamplerConfig::default() };
        let stream = RngStream::new(seed, 3);
        let (a, ga) = episode_objective_and_grads(&ep, &graph, &params, &cfg, &stream).unwrap();
        let (b, gb) = episode_objective_and_grads(&ep, &graph, &params, &cfg, &stream).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
        prop_assert_eq!(ga, gb);
        prop_assert!(a >= 0.0);
    }
}
