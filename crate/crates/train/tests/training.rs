use proptest::prelude::*;
use waydcm_core::synth::{generate, GenConfig};
use waydcm_core::{prepare_scenes, PipelineConfig, Point2, Variant};
use waydcm_nn::{Model, ModelConfig, SceneInput};
use waydcm_train::metrics::{ade, fde, min_ade_fde};
use waydcm_train::trainer::{write_log_csv, LOG_HEADER};
use waydcm_train::{build_inputs, evaluate, train, Error, TrainConfig};

fn toy() -> ModelConfig {
    ModelConfig {
        embed_dim: 8,
        enc_hidden: 8,
        att_dim: 8,
        dec_hidden: 8,
        goal_embed: 8,
        ..ModelConfig::default()
    }
}

fn data(n: usize, variant: Variant) -> Vec<SceneInput> {
    let pipeline = PipelineConfig::default();
    let gen = GenConfig {
        n_scenes: n,
        pilot_scenes: 200,
        ..GenConfig::default()
    };
    let corpus = generate(&gen, &pipeline).unwrap();
    let prepared = prepare_scenes(&corpus.scenes, &pipeline).unwrap();
    build_inputs(&prepared, &corpus.scaler, variant, &pipeline, &toy())
}

#[test]
fn validation_loss_decreases() {
    let inputs = data(2000, Variant::WayDCM2);
    let model = Model::new(Variant::WayDCM2, toy(), 15, 30, 0);
    let cfg = TrainConfig {
        epochs: 20,
        ..TrainConfig::default()
    };
    let out = train(model, &inputs, &cfg).unwrap();
    let first = out.log[0].val_total;
    let best = out.log.iter().map(|r| r.val_total).fold(f64::INFINITY, f64::min);
    assert!(best < 0.5 * first, "val {first} -> best {best}");
    assert_eq!(out.log.len(), 20);
    assert_eq!(out.log[out.best_epoch - 1].val_total, best);
    assert_eq!((out.train_indices.len(), out.val_indices.len()), (1800, 200));
    let warm = out.warm_start.unwrap();
    assert!(warm.beta.to_array().iter().all(|b| *b < 0.0));
}

#[test]
fn log_csv_has_the_documented_columns() {
    let inputs = data(40, Variant::TrajDCM);
    let model = Model::new(Variant::TrajDCM, toy(), 15, 30, 0);
    let out = train(
        model,
        &inputs,
        &TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let mut buf = Vec::new();
    write_log_csv(&out.log, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], LOG_HEADER);
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,"));
    assert_eq!(lines[2].split(',').count(), 6);
}

#[test]
fn baseline_trains_without_goal_terms() {
    let inputs = data(40, Variant::Lstm);
    let model = Model::new(Variant::Lstm, toy(), 15, 30, 0);
    let out = train(
        model,
        &inputs,
        &TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    assert!(out.warm_start.is_none());
    assert_eq!(out.log[0].l_cls, 0.0);
    let m = evaluate(&out.model, &inputs);
    assert!(m.goal_accuracy.is_none());
    assert!(m.min_fde_6 <= m.min_fde_1);
}

#[test]
fn non_finite_loss_names_the_batch() {
    let mut inputs = data(40, Variant::WayDCM1);
    // Every scene is poisoned, so the first batch fails.
    for x in &mut inputs {
        x.future.as_mut().unwrap()[3] = Point2::new(f64::NAN, 0.0);
    }
    let model = Model::new(Variant::WayDCM1, toy(), 15, 30, 0);
    let err = train(model, &inputs, &TrainConfig::default()).unwrap_err();
    match err {
        Error::Diverged { epoch, batch, .. } => assert_eq!((epoch, batch), (1, 0)),
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn evaluation_is_thread_count_independent() {
    let inputs = data(60, Variant::WayDCM2);
    let model = Model::new(Variant::WayDCM2, toy(), 15, 30, 2);
    let run = |n| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .unwrap()
            .install(|| evaluate(&model, &inputs))
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn invalid_config_is_rejected() {
    let inputs = data(10, Variant::WayDCM2);
    let model = Model::new(Variant::WayDCM2, toy(), 15, 30, 0);
    let bad = TrainConfig {
        batch_size: 0,
        ..TrainConfig::default()
    };
    assert!(matches!(train(model, &inputs, &bad), Err(Error::Config(_))));
}

fn traj(len: usize) -> impl Strategy<Value = Vec<Point2>> {
    prop::collection::vec((-100.0..100.0f64, -100.0..100.0f64).prop_map(|(x, y)| Point2::new(x, y)), len)
}

proptest! {
    #[test]
    fn min_over_more_modes_is_never_worse(
        modes in prop::collection::vec(traj(5), 1..8),
        truth in traj(5),
        seed in 0u64..1000,
    ) {
        let probs: Vec<f64> = (0..modes.len()).map(|i| ((seed + i as u64 * 7) % 5) as f64 + 1.0).collect();
        let (a1, f1) = min_ade_fde(&modes, &probs, &truth, 1);
        let (a6, f6) = min_ade_fde(&modes, &probs, &truth, 6);
        prop_assert!(a6 <= a1 && f6 <= f1);
        let all = min_ade_fde(&modes, &probs, &truth, modes.len());
        let best_f = modes.iter().map(|m| fde(m, &truth)).fold(f64::INFINITY, f64::min);
        let best_a = modes.iter().map(|m| ade(m, &truth)).fold(f64::INFINITY, f64::min);
        prop_assert_eq!(all, (best_a, best_f));
    }

    #[test]
    fn ade_is_zero_only_on_the_truth(truth in traj(4)) {
        prop_assert_eq!(ade(&truth, &truth), 0.0);
        let shifted: Vec<Point2> = truth.iter().map(|p| *p + Point2::new(3.0, 4.0)).collect();
        prop_assert!((ade(&shifted, &truth) - 5.0).abs() < 1e-12);
        prop_assert!((fde(&shifted, &truth) - 5.0).abs() < 1e-12);
    }
}

#[test]
fn zero_batches_leave_weights_unchanged() {
    let model = Model::new(Variant::WayDCM2, toy(), 15, 30, 0);
    let out = train(
        model.clone(),
        &[],
        &TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    assert_eq!(out.model.params, model.params);
    assert_eq!(out.log.len(), 1);
}

#[test]
fn same_seed_gives_identical_logs() {
    let inputs = data(60, Variant::WayDCM1);
    let cfg = TrainConfig {
        epochs: 2,
        seed: 3,
        ..TrainConfig::default()
    };
    let run = || train(Model::new(Variant::WayDCM1, toy(), 15, 30, 3), &inputs, &cfg).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.log, b.log);
    assert_eq!(a.model.params, b.model.params);
}

#[test]
fn metric_examples() {
    let truth: Vec<Point2> = (0..5).map(|t| Point2::new(t as f64, 0.5 * t as f64)).collect();
    let off: Vec<Point2> = truth.iter().map(|p| *p + Point2::new(1.0, 0.0)).collect();
    let far: Vec<Point2> = truth.iter().map(|p| *p + Point2::new(9.0, -9.0)).collect();
    assert_eq!(min_ade_fde(&[off.clone()], &[1.0], &truth, 1), (1.0, 1.0));
    let modes = vec![far.clone(), truth.clone(), off.clone()];
    assert_eq!(min_ade_fde(&modes, &[0.5, 0.2, 0.3], &truth, 6), (0.0, 0.0));
    assert_eq!(min_ade_fde(&modes, &[0.5, 0.2, 0.3], &truth, 1), (ade(&far, &truth), fde(&far, &truth)));
    // Relabeling modes together with their probabilities changes nothing.
    let permuted = vec![off, far, truth.clone()];
    for k in [1, 2, 6] {
        assert_eq!(
            min_ade_fde(&modes, &[0.5, 0.2, 0.3], &truth, k),
            min_ade_fde(&permuted, &[0.3, 0.5, 0.2], &truth, k)
        );
    }
}
