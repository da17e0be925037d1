use waydcm_core::choice::{goal_probabilities, utilities};
use waydcm_core::synth::{generate, GenConfig};
use waydcm_core::{prepare_scenes, BetaVector, GridSpec, PipelineConfig, Scaler, Variant};
use waydcm_nn::checkpoint::{load_params_into, Checkpoint};
use waydcm_nn::gradcheck::{gradient_check, total_gradient};
use waydcm_nn::model::{LossWeights, Model, ModelConfig, SceneInput};
use waydcm_nn::{Error, Tape};

fn small_pipeline() -> PipelineConfig {
    pipeline_with_grid(2, 2)
}

fn pipeline_with_grid(k_sectors: usize, k_rings: usize) -> PipelineConfig {
    PipelineConfig {
        t_obs: 4,
        t_f: 3,
        grid: GridSpec {
            k_sectors,
            k_rings,
            ..GridSpec::default()
        },
        ..PipelineConfig::default()
    }
}

fn small_config() -> ModelConfig {
    ModelConfig {
        embed_dim: 8,
        enc_hidden: 8,
        att_dim: 8,
        dec_hidden: 8,
        goal_embed: 8,
        num_modes: 2,
        ..ModelConfig::default()
    }
}

fn inputs(n: usize, variant: Variant, cfg: &ModelConfig) -> (Vec<SceneInput>, Scaler) {
    inputs_on(&small_pipeline(), n, variant, cfg)
}

fn inputs_on(pipeline: &PipelineConfig, n: usize, variant: Variant, cfg: &ModelConfig) -> (Vec<SceneInput>, Scaler) {
    let gen = GenConfig {
        n_scenes: n,
        n_neighbors: [3, 6],
        pilot_scenes: 50,
        true_beta: BetaVector::from_array([-1.0, -1.0, -1.0, -1.0, -1.0]),
        ..GenConfig::default()
    };
    let corpus = generate(&gen, pipeline).unwrap();
    let prepared = prepare_scenes(&corpus.scenes, pipeline).unwrap();
    let xs = prepared
        .iter()
        .map(|p| SceneInput::new(p, &corpus.scaler, variant.feature_set(), &pipeline.interaction, &cfg.social))
        .collect();
    (xs, corpus.scaler)
}

fn model(variant: Variant, cfg: ModelConfig, seed: u64) -> Model {
    let mut m = Model::new(variant, cfg, 4, 3, seed);
    m.set_beta(&BetaVector::from_array([-0.5, -0.3, -0.2, -0.4, -0.6]));
    m
}

#[test]
fn gradients_match_finite_differences_per_group() {
    let cfg = small_config();
    for variant in Variant::ALL {
        let (xs, _) = inputs(3, variant, &cfg);
        assert!(xs.iter().any(|x| x.num_agents() > 1));
        let m = model(variant, cfg, 11);
        for g in gradient_check(&m, &xs, &LossWeights::default(), 1e-6) {
            assert!(g.relative_error < 1e-4, "{variant} {}: {}", g.group, g.relative_error);
        }
    }
}

#[test]
fn every_parameter_receives_gradient() {
    // Two sectors share one heading deviation, so the default grid is used here.
    let cfg = small_config();
    let pipeline = pipeline_with_grid(5, 3);
    for variant in Variant::ALL {
        let (xs, _) = inputs_on(&pipeline, 8, variant, &cfg);
        let mut m = Model::new(variant, cfg, 15, 3, 3);
        m.set_beta(&BetaVector::from_array([-0.5, -0.3, -0.2, -0.4, -0.6]));
        let grads = total_gradient(&m, &xs, &LossWeights::default());
        for (name, g) in m.params.names.iter().zip(&grads) {
            if name == "beta" {
                let set = variant.feature_set().unwrap();
                for (c, on) in set.0.iter().enumerate() {
                    assert_eq!(g.data[c] != 0.0, *on, "{variant} beta column {c}");
                }
                continue;
            }
            assert!(g.data.iter().any(|v| *v != 0.0), "{variant}: {name} has zero gradient");
            assert!(g.is_finite(), "{variant}: {name}");
        }
    }
}

#[test]
fn parameter_groups_by_variant() {
    let cfg = small_config();
    let groups = |v| {
        let m = Model::new(v, cfg, 4, 3, 0);
        let mut g: Vec<String> = m.params.names.iter().map(|n| waydcm_nn::param_group(n).to_string()).collect();
        g.dedup();
        g
    };
    assert_eq!(groups(Variant::WayDCM2), ["encoder", "attention", "zhead", "beta", "decoder"]);
    assert_eq!(groups(Variant::Lstm), ["encoder", "decoder"]);
}

#[test]
fn zero_neural_head_reduces_to_the_logit_model() {
    let cfg = small_config();
    let (xs, _) = inputs(5, Variant::WayDCM2, &cfg);
    let mut m = model(Variant::WayDCM2, cfg, 5);
    for name in ["zhead.context_w", "zhead.state_w", "zhead.b"] {
        let i = m.params.index(name).unwrap();
        m.params.values[i].fill(0.0);
    }
    let beta = m.beta();
    for x in &xs {
        let mut tape = Tape::new();
        let fwd = m.forward(&mut tape, x, None);
        let rows: Vec<_> = (0..4)
            .map(|k| waydcm_core::FeatureRow(std::array::from_fn(|c| x.features.at(k, c))))
            .collect();
        let expect = goal_probabilities(&utilities(&rows, &beta), None).unwrap();
        let got = m.goal_distribution(&fwd).unwrap();
        for (a, b) in got.probs.iter().zip(&expect.probs) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_raw_outputs_give_unit_gaussians_on_the_anchor() {
    let cfg = small_config();
    let (xs, _) = inputs(2, Variant::WayDCM1, &cfg);
    let mut m = model(Variant::WayDCM1, cfg, 1);
    for name in ["decoder.out_w", "decoder.out_b"] {
        let i = m.params.index(name).unwrap();
        m.params.values[i].fill(0.0);
    }
    let mut tape = Tape::new();
    let fwd = m.forward(&mut tape, &xs[0], None);
    let mix = m.mixture(&tape, &fwd);
    for (l, mode) in mix.modes.iter().enumerate() {
        let goal = xs[0].centers[fwd.selected[l]];
        for (t, g) in mode.iter().enumerate() {
            assert_eq!((g.sigma_x, g.sigma_y, g.rho), (1.0, 1.0, 0.0));
            let a = goal * ((t + 1) as f64 / 3.0);
            assert!(g.mu.distance(a) < 1e-12);
        }
    }
    assert!((mix.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn outputs_do_not_depend_on_neighbor_order() {
    let cfg = small_config();
    let pipeline = small_pipeline();
    let gen = GenConfig {
        n_scenes: 4,
        pilot_scenes: 50,
        ..GenConfig::default()
    };
    let corpus = generate(&gen, &pipeline).unwrap();
    let m = model(Variant::WayDCM2, cfg, 9);
    for scene in &corpus.scenes {
        let mut rev = scene.clone();
        rev.neighbors.reverse();
        let run = |s: &waydcm_core::Scene| {
            let p = prepare_scenes(std::slice::from_ref(s), &pipeline).unwrap();
            let x = SceneInput::new(&p[0], &corpus.scaler, Some(waydcm_core::FeatureSet::WAY_DCM2), &pipeline.interaction, &cfg.social);
            let mut tape = Tape::new();
            let fwd = m.forward(&mut tape, &x, None);
            (m.goal_distribution(&fwd).unwrap().probs, m.mixture(&tape, &fwd))
        };
        let (pa, ma) = run(scene);
        let (pb, mb) = run(&rev);
        for (a, b) in pa.iter().zip(&pb) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in ma.modes.iter().flatten().zip(mb.modes.iter().flatten()) {
            assert!(a.mu.distance(b.mu) < 1e-9);
        }
    }
}

#[test]
fn scene_without_neighbors_runs() {
    let cfg = small_config();
    let (mut xs, _) = inputs(1, Variant::TrajDCM, &cfg);
    let x = &mut xs[0];
    for s in &mut x.steps {
        *s = waydcm_nn::Tensor::from_vec(5, 1, (0..5).map(|r| s.at(r, 0)).collect());
    }
    x.cell_centers.clear();
    let m = model(Variant::TrajDCM, cfg, 2);
    let mut tape = Tape::new();
    let fwd = m.forward(&mut tape, x, x.label);
    assert!(fwd.attention.is_none());
    let loss = m.losses(&mut tape, &fwd, x, &LossWeights::default());
    assert!(tape.value(loss.total).item().is_finite());
    let mut grads = m.params.zeros_like();
    tape.backward(loss.total, 1.0, &mut grads);
    assert!(grads.iter().all(|g| g.is_finite()));
}

#[test]
fn teacher_forcing_keeps_the_label_among_decoded_goals() {
    let cfg = small_config();
    let (xs, _) = inputs(10, Variant::WayDCM2, &cfg);
    let m = model(Variant::WayDCM2, cfg, 4);
    for x in &xs {
        let mut tape = Tape::new();
        let fwd = m.forward(&mut tape, x, x.label);
        assert!(fwd.selected.contains(&x.label.unwrap()));
        let free = m.forward(&mut tape, x, None);
        let dist = m.goal_distribution(&free).unwrap();
        assert_eq!(free.selected, dist.top(2));
    }
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("ckpt/model");
    let cfg = small_config();
    let (_, scaler) = inputs(1, Variant::WayDCM2, &cfg);
    let ck = Checkpoint {
        model: model(Variant::WayDCM2, cfg, 21),
        scaler,
        pipeline: small_pipeline(),
        config_hash: "abc".into(),
        seed: 21,
    };
    ck.save(&base).unwrap();
    let back = Checkpoint::load(&base).unwrap();
    assert_eq!(back, ck);
    let first = std::fs::read(dir.path().join("ckpt/model.bin")).unwrap();
    back.save(&base).unwrap();
    assert_eq!(std::fs::read(dir.path().join("ckpt/model.bin")).unwrap(), first);
}

#[test]
fn checkpoint_mismatch_names_the_parameter() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("m");
    let cfg = small_config();
    let (_, scaler) = inputs(1, Variant::WayDCM2, &cfg);
    Checkpoint {
        model: model(Variant::WayDCM2, cfg, 1),
        scaler,
        pipeline: small_pipeline(),
        config_hash: String::new(),
        seed: 1,
    }
    .save(&base)
    .unwrap();
    let mut wider = Model::new(Variant::WayDCM2, ModelConfig { enc_hidden: 9, ..cfg }, 4, 3, 0);
    let err = load_params_into(&mut wider, &base).unwrap_err();
    assert!(matches!(err, Error::Mismatch(ref m) if m.contains("encoder.lstm_wx")), "{err}");

    let mut base_model = Model::new(Variant::Lstm, cfg, 4, 3, 0);
    assert!(matches!(load_params_into(&mut base_model, &base), Err(Error::Mismatch(_))));

    std::fs::write(dir.path().join("m.bin"), [0u8; 12]).unwrap();
    assert!(matches!(Checkpoint::load(&base), Err(Error::Format { .. })));
}

#[test]
fn loss_terms_follow_their_definitions() {
    let cfg = ModelConfig {
        num_modes: 6,
        ..small_config()
    };
    let pipeline = pipeline_with_grid(5, 3);
    let (xs, _) = inputs_on(&pipeline, 4, Variant::WayDCM2, &cfg);
    let mut m = Model::new(Variant::WayDCM2, cfg, 15, 3, 8);
    m.set_beta(&BetaVector::from_array([-0.5, -0.3, -0.2, -0.4, -0.6]));
    let w = LossWeights::default();
    for x in &xs {
        let mut tape = Tape::new();
        let fwd = m.forward(&mut tape, x, x.label);
        let l = m.losses(&mut tape, &fwd, x, &w);
        let (reg, score, cls, total) = (
            tape.value(l.l_reg).item(),
            tape.value(l.l_score).item(),
            tape.value(l.l_cls.unwrap()).item(),
            tape.value(l.total).item(),
        );
        assert_eq!(total, reg + score + cls);

        let mix = m.mixture(&tape, &fwd);
        let truth = x.future.as_ref().unwrap();
        let nll: Vec<f64> = (0..6).map(|k| mix.mode_nll(k, truth)).collect();
        let min = nll.iter().copied().fold(f64::INFINITY, f64::min);
        assert!((reg - min).abs() < 1e-9);
        assert!((score + mix.probs[l.best_mode].ln()).abs() < 1e-12);
        let goals = m.goal_distribution(&fwd).unwrap();
        assert!((cls + goals.probs[x.label.unwrap()].ln()).abs() < 1e-12);

        // Winner-take-all: only the winning mode's outputs get regression gradient.
        let mut grads = m.params.zeros_like();
        let mut t2 = Tape::new();
        let f2 = m.forward(&mut t2, x, x.label);
        let l2 = m.losses(&mut t2, &f2, x, &w);
        t2.backward(l2.l_reg, 1.0, &mut grads);
        let mode_w = m.params.index("decoder.mode_w").unwrap();
        assert!(grads[mode_w].data.iter().all(|g| *g == 0.0));
    }
}

#[test]
fn uniform_mode_probabilities_score_log_l() {
    let cfg = ModelConfig {
        num_modes: 6,
        ..small_config()
    };
    let pipeline = pipeline_with_grid(5, 3);
    let (xs, _) = inputs_on(&pipeline, 1, Variant::Lstm, &cfg);
    let mut m = Model::new(Variant::Lstm, cfg, 15, 3, 0);
    let i = m.params.index("decoder.mode_w").unwrap();
    m.params.values[i].fill(0.0);
    let mut tape = Tape::new();
    let fwd = m.forward(&mut tape, &xs[0], None);
    let l = m.losses(&mut tape, &fwd, &xs[0], &LossWeights::default());
    assert!((tape.value(l.l_score).item() - 6f64.ln()).abs() < 1e-12);
    assert!(l.l_cls.is_none());
}

#[test]
fn mixture_nll_matches_the_bivariate_density() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let raw: [f64; 5] = std::array::from_fn(|_| rng.random_range(-2.5..2.5));
        let anchor = waydcm_core::Point2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let y = waydcm_core::Point2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let g = waydcm_nn::Gaussian2::from_raw(raw, anchor, 1.5);
        // Density through the explicit covariance inverse and determinant.
        let (sx, sy, r) = (g.sigma_x, g.sigma_y, g.rho);
        let (a, b, d) = (sx * sx, r * sx * sy, sy * sy);
        let det = a * d - b * b;
        let (dx, dy) = (y.x - g.mu.x, y.y - g.mu.y);
        let q = (d * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det;
        let log_density = -0.5 * q - (2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln();
        assert!((g.nll(y) + log_density).abs() < 1e-9 * log_density.abs().max(1.0));
    }
}
