use mgt_core::data::{generate_synthetic, FeatureMask, FeatureScaler, NodeKind};
use mgt_core::layers::{Activation, Bound};
use mgt_core::model::*;
use mgt_core::seeded_rng;
use mgt_core::tensor::{check_gradients, Tape, Tensor, Var};

fn prepared(n: usize, seed: u64) -> Vec<PreparedEvent> {
    let events = generate_synthetic(n, n, seed);
    let scaler = FeatureScaler::fit(&events).unwrap();
    prepare_all(&events, &scaler, &FeatureMask::none())
}

fn batch_of(events: &[PreparedEvent], d_pe: usize) -> Batch {
    let refs: Vec<&PreparedEvent> = events.iter().collect();
    BatchBuilder::new(d_pe).build(&refs, None)
}

fn logits(model: &Model, batch: &Batch) -> Tensor {
    let mut tape = Tape::new();
    let p = model.store.bind_constant(&mut tape);
    let fwd = model.forward(&mut tape, &p, batch, false, &mut seeded_rng(0)).unwrap();
    tape.value(fwd.logits).clone()
}

#[test]
fn mgt_parameter_count() {
    let c = ModelConfig::default();
    let (d, n, e, w) = (c.d_model, c.n_experts, c.d_expert, c.input_width());
    let attention = 4 * d * d + 2 * d;
    let gate = 2 * d * n;
    let experts = n * (d * e + e + e * d + d);
    let per_layer = attention + gate + experts + 2 * d;
    let expected = (w * d + d) + c.layers * per_layer + (d * 2 + 2);
    let model = Model::new(c, &mut seeded_rng(1)).unwrap();
    assert_eq!(model.parameter_count(), expected);
    assert_eq!(model.parameter_count(), 94_402);
}

#[test]
fn baseline_shapes() {
    let mlp = Model::new(ModelConfig::with_kind(ModelKind::Mlp), &mut seeded_rng(1)).unwrap();
    assert_eq!(mlp.parameter_count(), (70 * 80 + 80) + (80 * 40 + 40) + (40 * 2 + 2));
    let gcn = Model::new(ModelConfig::with_kind(ModelKind::Gcn), &mut seeded_rng(1)).unwrap();
    assert_eq!(gcn.parameter_count(), (10 * 80 + 80) + (80 * 40 + 40) + (40 * 2 + 2));
}

#[test]
fn invalid_configuration_lists_every_problem() {
    let c = ModelConfig {
        heads: 3,
        top_k: 9,
        dropout: 1.0,
        ..ModelConfig::default()
    };
    match Model::new(c, &mut seeded_rng(1)) {
        Err(ModelError::Config(problems)) => assert_eq!(problems.len(), 3, "{problems:?}"),
        _ => panic!("expected a configuration error"),
    }
}

#[test]
fn unknown_model_name_lists_valid_ones() {
    let err = "transformer".parse::<ModelKind>().unwrap_err();
    assert!(err.contains("mgt, gt, mlp, gcn"));
}

/// A one-expert, top-1 MGT whose expert copies the GT feed-forward block.
fn degenerate_mgt(gt: &Model) -> Model {
    let config = ModelConfig {
        kind: ModelKind::Mgt,
        n_experts: 1,
        top_k: 1,
        d_expert: gt.config.d_ffn,
        expert_activation: Activation::Relu,
        ..gt.config.clone()
    };
    let mut mgt = Model::new(config, &mut seeded_rng(99)).unwrap();
    for (i, name) in mgt.store.names().to_vec().iter().enumerate() {
        let source = name.replace("expert0", "ffn").replace("moe_norm", "ffn_norm");
        if let Some(id) = gt.store.find(&source) {
            mgt.store.tensors_mut()[i] = gt.store.get(id).clone();
        } else {
            assert!(name.contains(".gate."), "unmatched parameter {name}");
        }
    }
    mgt
}

#[test]
fn transformer_equals_single_expert_mgt() {
    let events = prepared(50, 3);
    for seed in 0..3 {
        let gt = Model::new(ModelConfig::with_kind(ModelKind::Gt), &mut seeded_rng(seed)).unwrap();
        let mgt = degenerate_mgt(&gt);
        let batch = batch_of(&events, 4);
        let a = logits(&gt, &batch);
        let b = logits(&mgt, &batch);
        assert!(a.max_abs_diff(&b) < 1e-10, "seed {seed}: {}", a.max_abs_diff(&b));
    }
}

#[test]
fn permuting_experts_leaves_logits_unchanged() {
    let events = prepared(20, 4);
    let batch = batch_of(&events, 4);
    let model = Model::new(ModelConfig::default(), &mut seeded_rng(5)).unwrap();
    let mut permuted = model.clone();
    let perm = [3usize, 0, 5, 1, 4, 2];
    let names = model.store.names().to_vec();
    for (i, name) in names.iter().enumerate() {
        for (to, &from) in perm.iter().enumerate() {
            let tag = format!(".expert{to}.");
            if name.contains(&tag) {
                let src = name.replace(&tag, &format!(".expert{from}."));
                permuted.store.tensors_mut()[i] = model.store.get(model.store.find(&src).unwrap()).clone();
            }
        }
        if name.ends_with(".gate.w_g") || name.ends_with(".gate.w_noise") {
            let t = model.store.tensors()[i].clone();
            let mut p = t.clone();
            for r in 0..t.rows() {
                for (to, &from) in perm.iter().enumerate() {
                    p.set(r, to, t.get(r, from));
                }
            }
            permuted.store.tensors_mut()[i] = p;
        }
    }
    let a = logits(&model, &batch);
    let b = logits(&permuted, &batch);
    assert!(a.max_abs_diff(&b) < 1e-10);
}

#[test]
fn duplicated_events_get_identical_logits() {
    let events = prepared(5, 6);
    let doubled: Vec<PreparedEvent> = events.iter().chain(events.iter()).cloned().collect();
    let batch = batch_of(&doubled, 4);
    for kind in ModelKind::ALL {
        let model = Model::new(ModelConfig::with_kind(kind), &mut seeded_rng(7)).unwrap();
        let out = logits(&model, &batch);
        let n = events.len();
        for r in 0..n {
            assert_eq!(out.row(r), out.row(r + n), "{kind} event {r}");
        }
    }
}

#[test]
fn mlp_pads_the_missing_third_jet() {
    let events: Vec<PreparedEvent> = prepared(20, 8).into_iter().filter(|e| e.rows.len() == 6).take(1).collect();
    let batch = batch_of(&events, 4);
    let padded = batch.padded();
    let w = 10;
    let slot = NodeKind::J3.index();
    assert!(padded.row(0)[slot * w..(slot + 1) * w].iter().all(|&v| v == 0.0));
    assert!(padded.row(0)[0..w].iter().any(|&v| v != 0.0));
}

#[test]
fn gcn_keeps_constant_rows_constant() {
    let mut events = prepared(3, 9);
    for e in &mut events {
        for row in &mut e.rows {
            *row = [0.3, -0.2, 0.1, 0.5, 0.7, -0.4];
        }
    }
    let builder = BatchBuilder::new(4);
    let mut batch = builder.build(&events.iter().collect::<Vec<_>>(), None);
    // constant encodings too, so every row of an event is identical
    for r in 0..batch.x.rows() {
        for c in 6..10 {
            batch.x.set(r, c, 0.25);
        }
    }
    let model = Model::new(ModelConfig::with_kind(ModelKind::Gcn), &mut seeded_rng(10)).unwrap();
    let mut tape = Tape::new();
    let p = model.store.bind_constant(&mut tape);
    let fwd = model.forward(&mut tape, &p, &batch, false, &mut seeded_rng(0)).unwrap();
    let h = tape.value(fwd.node_states.unwrap());
    for &(start, n) in &batch.segments {
        for r in start + 1..start + n {
            assert_eq!(h.row(r), h.row(start));
        }
    }
}

#[test]
fn cross_entropy_examples() {
    let mut tape = Tape::new();
    let z = tape.param(Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap());
    let l = tape.cross_entropy(z, &[1]).unwrap();
    assert!((tape.value(l).item() - std::f64::consts::LN_2).abs() < 1e-15);
    let z2 = tape.param(Tensor::from_rows(&[vec![20.0, -20.0]]).unwrap());
    let l2 = tape.cross_entropy(z2, &[0]).unwrap();
    assert!(tape.value(l2).item() < 1e-15);

    let logits = vec![0.3, -1.1];
    let z3 = tape.param(Tensor::row_vector(logits.clone()).unwrap());
    let l3 = tape.cross_entropy(z3, &[0]).unwrap();
    let g = tape.backward(l3).unwrap();
    let e: Vec<f64> = logits.iter().map(|v| v.exp()).collect();
    let s = e[0] + e[1];
    let expected = [e[0] / s - 1.0, e[1] / s];
    for (a, b) in g.get(z3).unwrap().data().iter().zip(expected) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn end_to_end_gradient_of_input_projection() {
    let events = prepared(2, 11);
    let batch = BatchBuilder::new(4).build(&events.iter().collect::<Vec<_>>(), Some(&mut seeded_rng(3)));
    let config = ModelConfig {
        d_model: 8,
        d_expert: 4,
        ..ModelConfig::default()
    };
    for seed in 0..3 {
        let model = Model::new(config.clone(), &mut seeded_rng(seed)).unwrap();
        let Arch::Transformer { input, .. } = &model.arch else { unreachable!() };
        let target = input.weight;
        let f = |tape: &mut Tape, v: &[Var]| {
            let vars: Vec<Var> = model
                .store
                .tensors()
                .iter()
                .enumerate()
                .map(|(i, t)| if i == target.0 { v[0] } else { tape.constant(t.clone()) })
                .collect();
            let p = Bound::from_vars(vars);
            let fwd = model.forward(tape, &p, &batch, true, &mut seeded_rng(77)).unwrap();
            Ok(training_loss(tape, &fwd, &batch.labels, 1.0).unwrap().total)
        };
        let report = check_gradients(f, &[model.store.get(target).clone()], 1e-5).unwrap();
        assert!(report.max_error() < 1e-3, "seed {seed}: {:?}", report.errors);
    }
}

#[test]
fn checkpoint_round_trip_is_byte_stable() {
    let events = generate_synthetic(30, 30, 12);
    let scaler = FeatureScaler::fit(&events).unwrap();
    let model = Model::new(ModelConfig::default(), &mut seeded_rng(13)).unwrap();
    let ck = Checkpoint::new(&model, &scaler, 13);
    let text = ck.to_json().unwrap();
    let back = Checkpoint::from_json(&text).unwrap();
    assert_eq!(back.to_json().unwrap(), text);
    let restored = back.model().unwrap();
    assert_eq!(restored.store, model.store);
    let set = prepare_all(&events, &scaler, &FeatureMask::none());
    assert_eq!(restored.predict(&set, 16).unwrap(), model.predict(&set, 16).unwrap());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    ck.save(&path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), text);
    assert_eq!(Checkpoint::load(&path).unwrap(), ck);
}

#[test]
fn checkpoint_rejects_foreign_formats() {
    let events = generate_synthetic(10, 10, 1);
    let scaler = FeatureScaler::fit(&events).unwrap();
    let model = Model::new(ModelConfig::with_kind(ModelKind::Mlp), &mut seeded_rng(1)).unwrap();
    let mut ck = Checkpoint::new(&model, &scaler, 1);
    ck.format = "other/2".into();
    let text = serde_json::to_string(&ck).unwrap();
    assert!(matches!(Checkpoint::from_json(&text), Err(CheckpointError::Format(_))));
}
