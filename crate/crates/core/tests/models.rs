mod common;

use common::{check_with_params, permute_rows, random_permutation};
use poolforge::layers::{transformer_encoder, transformer_encoder_star, TransformerConfig, TransformerParams};
use poolforge::models::{forward, moe_head, representation, MoeParams};
use poolforge::tensor::random;
use poolforge::{Architecture, Checkpoint, GradCheckOptions, Mode, Model, ModelConfig, ParamStore, Tape, Tensor};

fn toy_input(cfg: &ModelConfig, batch: usize, seed: u64) -> Tensor {
    random::normal([batch, cfg.frames, cfg.input_dim()], 1.0, &mut random::rng(seed))
}

fn moe_store(d: usize, e: usize, l: usize, seed: u64) -> ParamStore {
    let mut store = ParamStore::new();
    MoeParams::init(&mut store, "moe", d, e, l, &mut random::rng(seed));
    let mut rng = random::rng(seed + 1);
    store.insert("moe/gate/b", random::normal([l * (e + 1)], 0.5, &mut rng));
    store.insert("moe/expert/b", random::normal([l * e], 0.5, &mut rng));
    store
}

#[test]
fn moe_single_expert_with_silenced_dummy_is_a_sigmoid() {
    let (d, l) = (6, 4);
    let mut store = moe_store(d, 1, l, 3);
    // Dummy gate column l*2+1: zero weights, logit -1e4.
    let mut gw = store.get("moe/gate/w").unwrap().clone();
    let mut gb = store.get("moe/gate/b").unwrap().clone();
    for label in 0..l {
        for row in 0..d {
            gw.data_mut()[row * 2 * l + label * 2 + 1] = 0.0;
        }
        gb.data_mut()[label * 2 + 1] = -1e4;
    }
    store.insert("moe/gate/w", gw);
    store.insert("moe/gate/b", gb);
    let v = random::normal([d], 0.3, &mut random::rng(4));
    let out = common::forward(&store, |t| {
        let p = MoeParams::bind(t, "moe", 1)?;
        let vv = t.constant(v.clone());
        moe_head(t, vv, &p)
    });
    let ew = store.get("moe/expert/w").unwrap();
    let eb = store.get("moe/expert/b").unwrap();
    for label in 0..l {
        let z: f64 = (0..d).map(|r| v.data()[r] * ew.at(&[r, label])).sum::<f64>() + eb.data()[label];
        let want = 1.0 / (1.0 + (-z).exp());
        assert!((out.data()[label] - want).abs() < 1e-14);
    }
}

#[test]
fn moe_outputs_are_probabilities() {
    let store = moe_store(8, 3, 7, 5);
    let v = random::normal([10_000, 8], 4.0, &mut random::rng(6));
    let out = common::forward(&store, |t| {
        let p = MoeParams::bind(t, "moe", 3)?;
        let vv = t.constant(v.clone());
        moe_head(t, vv, &p)
    });
    assert_eq!(out.dims(), &[10_000, 7]);
    assert!(out.data().iter().all(|p| (0.0..=1.0).contains(p)));
}

#[test]
fn moe_gradient() {
    for seed in 0..5 {
        let store = moe_store(8, 2, 5, seed);
        let v = random::normal([8], 1.0, &mut random::rng(seed + 20));
        let report = check_with_params(&store, &v, 1e-4, |t, vv| {
            let p = MoeParams::bind(t, "moe", 2)?;
            moe_head(t, vv, &p)
        });
        assert!(report.passed, "{report:?}");
    }
}

#[test]
fn all_architectures_are_frame_permutation_invariant() {
    for arch in Architecture::ALL {
        let cfg = ModelConfig::toy(arch);
        let mut model = Model::new(cfg.clone(), 7).unwrap();
        // Warm the running statistics so evaluation is not trivially centered.
        for step in 0..5 {
            model.predict(&toy_input(&cfg, 3, 100 + step), Mode::Train).unwrap();
        }
        let x = toy_input(&cfg, 2, 8);
        let base = model.infer(&x).unwrap();
        let base_train = model.clone().predict(&x, Mode::Train).unwrap();
        for trial in 0..10 {
            let perm = random_permutation(cfg.frames, trial);
            let px = permute_rows(&x, &perm);
            let diff = model.infer(&px).unwrap().max_abs_diff(&base).unwrap();
            assert!(diff < 1e-9, "{arch} eval diff {diff}");
            let diff = model.clone().predict(&px, Mode::Train).unwrap().max_abs_diff(&base_train).unwrap();
            assert!(diff < 1e-9, "{arch} train diff {diff}");
        }
    }
}

#[test]
fn single_video_input_gives_a_label_vector() {
    let cfg = ModelConfig::toy(Architecture::BaselineNetvlad);
    let model = Model::new(cfg.clone(), 1).unwrap();
    let x = random::normal([cfg.frames, cfg.input_dim()], 1.0, &mut random::rng(2));
    let p = model.infer(&x).unwrap();
    assert_eq!(p.dims(), &[cfg.labels]);
    let wrong = random::normal([cfg.frames + 1, cfg.input_dim()], 1.0, &mut random::rng(2));
    assert!(model.infer(&wrong).is_err());
}

#[test]
fn identity_encoders_reduce_attention_enhanced_to_baseline() {
    let cfg = ModelConfig::toy(Architecture::AttentionEnhanced);
    let mut enhanced = Model::new(cfg.clone(), 11).unwrap();
    let paths: Vec<String> = enhanced.params.paths().map(str::to_string).collect();
    for path in &paths {
        let zero_out = ["/wo", "/bo", "/ff2/w", "/ff2/b"].iter().any(|s| path.ends_with(s));
        if (path.contains("/f1/") || path.contains("/f2/")) && zero_out {
            let dims = enhanced.params.get(path).unwrap().dims().to_vec();
            enhanced.params.insert(path.clone(), Tensor::zeros(dims));
        }
    }
    let mut baseline = Model::new(ModelConfig { architecture: Architecture::BaselineNetvlad, ..cfg.clone() }, 0).unwrap();
    for path in baseline.params.paths().map(str::to_string).collect::<Vec<_>>() {
        baseline.params.insert(path.clone(), enhanced.params.get(&path).unwrap().clone());
    }
    let x = toy_input(&cfg, 3, 12);
    for mode in [Mode::Train, Mode::Eval] {
        let a = enhanced.predict(&x, mode).unwrap();
        let b = baseline.predict(&x, mode).unwrap();
        assert_eq!(a.data(), b.data(), "{mode:?}");
    }
}

#[test]
fn attention_netvlad_similarities_are_row_stochastic() {
    let cfg = ModelConfig::toy(Architecture::AttentionNetvlad);
    let mut model = Model::new(cfg.clone(), 13).unwrap();
    let x = random::normal([2, cfg.frames, cfg.video_dim], 1.0, &mut random::rng(14));
    let mut tape = Tape::new();
    model.params.bind(&mut tape);
    let xv = tape.constant(x);
    let g1 = TransformerParams::bind(&tape, "video/g1", &TransformerConfig::encoder(cfg.video_dim, cfg.heads)).unwrap();
    let g2 = TransformerParams::bind(&tape, "video/g2", &TransformerConfig::star(cfg.video_dim, cfg.heads, cfg.clusters)).unwrap();
    let h = transformer_encoder(&mut tape, xv, &g1, &mut model.state, Mode::Train).unwrap();
    let logits = transformer_encoder_star(&mut tape, h, &g2, &mut model.state, Mode::Train).unwrap();
    let sims = tape.softmax(logits, -1).unwrap();
    assert_eq!(tape.shape(sims), &[2, cfg.frames, cfg.clusters]);
    for row in tape.value(sims).rows() {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-8);
    }
}

#[test]
fn second_order_representation_width() {
    let cfg = ModelConfig::toy(Architecture::SecondOrderFa);
    let mut model = Model::new(cfg.clone(), 15).unwrap();
    let (c, p) = (cfg.clusters, cfg.projected);
    let want: usize = [cfg.video_dim, cfg.audio_dim]
        .iter()
        .map(|&f| c * (1 + f + p * p) + c * f)
        .sum();
    assert_eq!(cfg.representation_width(), want);
    let mut tape = Tape::new();
    model.params.bind(&mut tape);
    let xv = tape.constant(toy_input(&cfg, 2, 16));
    let r = representation(&mut tape, &cfg, xv, &mut model.state, Mode::Eval).unwrap();
    assert_eq!(tape.shape(r), &[2, want]);
}

#[test]
fn every_architecture_passes_an_end_to_end_gradient_check() {
    for arch in Architecture::ALL {
        let cfg = ModelConfig::toy(arch);
        let model = Model::new(cfg.clone(), 21).unwrap();
        let x = toy_input(&cfg, 2, 22);
        let report = check_with_params(&model.params, &x, 1e-4, |t, xv| {
            let mut state = model.state.clone();
            forward(t, &cfg, xv, &mut state, Mode::Train)
        });
        assert!(report.passed, "{arch}: {report:?}");
    }
}

#[test]
fn loss_is_finite_and_gradients_cover_every_parameter() {
    for arch in Architecture::ALL {
        let cfg = ModelConfig::toy(arch);
        let mut model = Model::new(cfg.clone(), 31).unwrap();
        let x = toy_input(&cfg, 3, 32);
        let mut targets = Tensor::zeros([3, cfg.labels]);
        targets.data_mut()[1] = 1.0;
        targets.data_mut()[cfg.labels + 3] = 1.0;
        targets.data_mut()[2 * cfg.labels] = 1.0;
        let (loss, grads) = model.loss_and_gradients(&x, &targets).unwrap();
        assert!(loss.is_finite() && loss > 0.0);
        assert_eq!(grads.len(), model.params.len());
        for (path, g) in &grads {
            assert_eq!(g.dims(), model.params.get(path).unwrap().dims(), "{path}");
        }
    }
}

#[test]
fn checkpoint_round_trip_preserves_outputs_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    for arch in Architecture::ALL {
        let cfg = ModelConfig::toy(arch);
        let mut model = Model::new(cfg.clone(), 41).unwrap();
        for step in 0..3 {
            model.predict(&toy_input(&cfg, 2, 50 + step), Mode::Train).unwrap();
        }
        let x = toy_input(&cfg, 2, 42);
        let before = model.infer(&x).unwrap();
        let path = dir.path().join(format!("{arch}.ckpt"));
        Checkpoint::new(model.clone(), 3).save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.step, 3);
        assert_eq!(loaded.model, model);
        let after = loaded.model.infer(&x).unwrap();
        let same = before.data().iter().zip(after.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same, "{arch}");
    }
}

#[test]
fn checkpoint_rejects_a_foreign_tensor_shape() {
    let cfg = ModelConfig::toy(Architecture::BaselineNetvlad);
    let model = Model::new(cfg, 1).unwrap();
    let mut bad = model.clone();
    bad.params.insert("head/projection/b", Tensor::zeros([99]));
    let bytes = Checkpoint::new(bad, 0).to_bytes().unwrap();
    assert!(matches!(Checkpoint::from_bytes(&bytes), Err(poolforge::Error::Format { .. })));
}

#[test]
fn packaged_gradient_check_passes() {
    for arch in Architecture::ALL {
        let r = poolforge::models::gradient_check(arch, 3, GradCheckOptions::default()).unwrap();
        assert!(r.passed, "{arch}: {r:?}");
    }
}
