use mgt_core::data::{generate_synthetic, split, FeatureMask, FeatureScaler};
use mgt_core::model::{prepare_all, Model, ModelConfig, ModelKind};
use mgt_core::seeded_rng;
use mgt_core::training::*;

fn report(accuracy: f64, auc: f64) -> MetricsReport {
    MetricsReport {
        accuracy,
        precision: accuracy,
        recall: accuracy,
        f1: accuracy,
        auc,
        confusion: Confusion::default(),
        n_events: 10,
    }
}

#[test]
fn one_epoch_on_ten_events_is_finite() {
    let events = generate_synthetic(5, 5, 1);
    let scaler = FeatureScaler::fit(&events).unwrap();
    let set = prepare_all(&events, &scaler, &FeatureMask::none());
    let mut model = Model::new(ModelConfig::default(), &mut seeded_rng(1)).unwrap();
    let config = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let curve = train(&mut model, &config, &set, None, 1).unwrap();
    assert_eq!(curve.len(), 1);
    assert!(curve[0].ce_loss.is_finite() && curve[0].load_loss.is_finite());
    assert_eq!(curve_csv(&curve).lines().count(), 2);
}

#[test]
fn same_seed_gives_identical_parameters() {
    let events = generate_synthetic(60, 60, 2);
    let scaler = FeatureScaler::fit(&events).unwrap();
    let set = prepare_all(&events, &scaler, &FeatureMask::none());
    let config = TrainConfig {
        epochs: 2,
        batch_size: 32,
        ..TrainConfig::default()
    };
    let run = |seed| {
        let mut model = Model::new(ModelConfig::default(), &mut seeded_rng(seed)).unwrap();
        let curve = train(&mut model, &config, &set, None, seed).unwrap();
        (model.store, curve)
    };
    let (a, ca) = run(4);
    let (b, cb) = run(4);
    assert_eq!(a, b);
    assert_eq!(ca, cb);
    assert_ne!(run(5).0, a);
}

#[test]
fn training_loss_decreases() {
    let events = generate_synthetic(400, 400, 3);
    let scaler = FeatureScaler::fit(&events).unwrap();
    let set = prepare_all(&events, &scaler, &FeatureMask::none());
    let mut model = Model::new(ModelConfig::default(), &mut seeded_rng(3)).unwrap();
    let config = TrainConfig {
        epochs: 4,
        batch_size: 100,
        ..TrainConfig::default()
    };
    let curve = train(&mut model, &config, &set, None, 3).unwrap();
    assert!(curve.last().unwrap().ce_loss < curve[0].ce_loss, "{curve:?}");
}

#[test]
fn invalid_training_config_lists_problems() {
    let events = generate_synthetic(5, 5, 1);
    let set = prepare_all(&events, &FeatureScaler::fit(&events).unwrap(), &FeatureMask::none());
    let mut model = Model::new(ModelConfig::default(), &mut seeded_rng(1)).unwrap();
    let config = TrainConfig {
        epochs: 0,
        batch_size: 0,
        ..TrainConfig::default()
    };
    match train(&mut model, &config, &set, None, 1) {
        Err(TrainError::Config(p)) => assert_eq!(p.len(), 2, "{p:?}"),
        other => panic!("unexpected {:?}", other.map(|_| ())),
    }
    assert!(matches!(train(&mut model, &TrainConfig::default(), &[], None, 1), Err(TrainError::Empty(_))));
}

#[test]
fn aggregate_of_one_seed_has_zero_spread() {
    let agg = aggregate(&[report(0.8, 0.9)]);
    assert_eq!(agg.n_seeds, 1);
    assert_eq!(agg.std, MetricValues::default());
    assert_eq!(agg.mean.auc, 0.9);
}

#[test]
fn aggregate_of_two_seeds_matches_hand_values() {
    let agg = aggregate(&[report(0.8, 0.9), report(0.6, 0.7)]);
    assert!((agg.mean.accuracy - 0.7).abs() < 1e-15);
    assert!((agg.mean.auc - 0.8).abs() < 1e-15);
    // sample std of {a, b} is |a − b|/√2
    assert!((agg.std.accuracy - 0.2 / 2f64.sqrt()).abs() < 1e-15);
    assert!((agg.std.auc - 0.2 / 2f64.sqrt()).abs() < 1e-15);
}

#[test]
fn seeds_agree_on_separable_data() {
    let events = generate_synthetic(1000, 1000, 4);
    let (train_events, test_events) = split(&events, (0.8, 0.2), 4).unwrap();
    let mut config = ExperimentConfig::default();
    config.train.epochs = 3;
    config.train.batch_size = 100;
    config.train.seeds = vec![1, 2, 3];
    let ex = run_experiment(&config, &train_events, &test_events, &FeatureMask::none()).unwrap();
    let aucs: Vec<f64> = ex.runs.iter().map(|r| r.metrics.auc).collect();
    let spread = aucs.iter().copied().fold(f64::MIN, f64::max) - aucs.iter().copied().fold(f64::MAX, f64::min);
    assert!(spread < 0.05, "{aucs:?}");
    assert!(aucs.iter().all(|&a| a > 0.85), "{aucs:?}");
    assert_eq!(ex.aggregate.n_seeds, 3);
}

#[test]
fn experiment_rejects_bad_model_config() {
    let events = generate_synthetic(10, 10, 5);
    let mut config = ExperimentConfig::default();
    config.model = ModelConfig {
        top_k: 0,
        ..ModelConfig::with_kind(ModelKind::Mgt)
    };
    assert!(matches!(
        run_experiment(&config, &events, &events, &FeatureMask::none()),
        Err(TrainError::Config(_))
    ));
}

#[test]
fn overfit_tiny_set() {
    let events = generate_synthetic(40, 40, 6);
    let scaler = FeatureScaler::fit(&events).unwrap();
    let set = prepare_all(&events, &scaler, &FeatureMask::none());
    let mut model = Model::new(ModelConfig::with_kind(ModelKind::Mlp), &mut seeded_rng(6)).unwrap();
    let config = TrainConfig {
        epochs: 150,
        batch_size: 20,
        learning_rate: 3e-3,
        ..TrainConfig::default()
    };
    train(&mut model, &config, &set, None, 6).unwrap();
    assert!(evaluate(&model, &set, 80).unwrap().accuracy > 0.9);
}
