//! Finite-difference checks for every layer, shared by the core gradient
//! tests and the acceptance run.

use mgt_core::data::FeatureMask;
use mgt_core::data::{generate_synthetic, FeatureScaler};
use mgt_core::layers::*;
use mgt_core::model::{prepare_all, training_loss, BatchBuilder, Model, ModelConfig, PreparedEvent};
use mgt_core::tensor::{check_gradients, Segment, Tape, Tensor, Var};
use mgt_core::{seeded_rng, Rng};
use rand::Rng as _;

pub const LAYER_TOLERANCE: f64 = 1e-4;
pub const END_TO_END_TOLERANCE: f64 = 1e-3;
const STEP: f64 = 1e-5;
const SEGMENTS: [Segment; 2] = [(0, 6), (6, 7)];
const ROWS: usize = 13;

pub struct Check {
    pub layer: &'static str,
    pub error: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.error < self.tolerance
    }
}

fn random_tensor(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

/// Random parameters everywhere, including norm gains and biases.
fn randomize(store: &mut ParamStore, rng: &mut Rng) {
    for t in store.tensors_mut() {
        *t = random_tensor(t.rows(), t.cols(), rng);
    }
}

/// `Σ y ⊙ w` for a fixed random `w`, so no output direction cancels.
fn project(tape: &mut Tape, y: Var, w: &Tensor) -> Var {
    let w = tape.constant(w.clone());
    let yw = tape.mul(y, w).unwrap();
    tape.sum(yw)
}

fn params_and_input(store: &ParamStore, x: Tensor) -> Vec<Tensor> {
    let mut inputs = store.tensors().to_vec();
    inputs.push(x);
    inputs
}

fn split_inputs(v: &[Var]) -> (Bound, Var) {
    (Bound::from_vars(v[..v.len() - 1].to_vec()), v[v.len() - 1])
}

fn attention(seed: u64) -> f64 {
    let mut rng = seeded_rng(seed);
    let d = 6;
    let mut store = ParamStore::new();
    let params = AttentionLayerParams::new(&mut store, "attn", d, 2, &mut rng).unwrap();
    randomize(&mut store, &mut rng);
    let inputs = params_and_input(&store, random_tensor(ROWS, d, &mut rng));
    let w = random_tensor(ROWS, d, &mut rng);
    let f = |tape: &mut Tape, v: &[Var]| {
        let (p, x) = split_inputs(v);
        let out = attention_block(tape, &p, x, &SEGMENTS, &params).unwrap();
        Ok(project(tape, out.out, &w))
    };
    check_gradients(f, &inputs, STEP).unwrap().max_error()
}

fn feed_forward(seed: u64) -> f64 {
    let mut rng = seeded_rng(seed);
    let d = 5;
    let mut store = ParamStore::new();
    let params = FfnParams::new(&mut store, "ffn", d, 7, &mut rng);
    randomize(&mut store, &mut rng);
    let inputs = params_and_input(&store, random_tensor(ROWS, d, &mut rng));
    let w = random_tensor(ROWS, d, &mut rng);
    let f = |tape: &mut Tape, v: &[Var]| {
        let (p, x) = split_inputs(v);
        let y = ffn(tape, &p, x, &params).unwrap();
        Ok(project(tape, y, &w))
    };
    check_gradients(f, &inputs, STEP).unwrap().max_error()
}

fn gate(seed: u64) -> f64 {
    let mut rng = seeded_rng(seed);
    let (d, n) = (5, 6);
    let mut store = ParamStore::new();
    let params = GateParams::new(&mut store, "gate", d, n, 2, &mut rng).unwrap();
    randomize(&mut store, &mut rng);
    let inputs = params_and_input(&store, random_tensor(ROWS, d, &mut rng));
    let w = random_tensor(ROWS, n, &mut rng);
    let f = |tape: &mut Tape, v: &[Var]| {
        let (p, x) = split_inputs(v);
        let routing = noisy_gate(tape, &p, x, &params, true, &mut seeded_rng(seed ^ 1)).unwrap();
        Ok(project(tape, routing.gates, &w))
    };
    check_gradients(f, &inputs, STEP).unwrap().max_error()
}

fn expert(seed: u64) -> f64 {
    let mut rng = seeded_rng(seed);
    let d = 5;
    let mut store = ParamStore::new();
    let params = ExpertParams {
        net: FfnParams::new(&mut store, "expert", d, 4, &mut rng),
        dropout: 0.2,
    };
    randomize(&mut store, &mut rng);
    let inputs = params_and_input(&store, random_tensor(ROWS, d, &mut rng));
    let w = random_tensor(ROWS, d, &mut rng);
    let f = |tape: &mut Tape, v: &[Var]| {
        let (p, x) = split_inputs(v);
        let act = Activation::LeakyRelu(0.01);
        let y = expert_forward(tape, &p, x, &params, act, true, &mut seeded_rng(seed ^ 2)).unwrap();
        Ok(project(tape, y, &w))
    };
    check_gradients(f, &inputs, STEP).unwrap().max_error()
}

fn load_loss(seed: u64) -> f64 {
    let mut rng = seeded_rng(seed);
    let (d, n) = (5, 6);
    let mut store = ParamStore::new();
    let params = GateParams::new(&mut store, "gate", d, n, 2, &mut rng).unwrap();
    randomize(&mut store, &mut rng);
    let inputs = params_and_input(&store, random_tensor(ROWS, d, &mut rng));
    let f = |tape: &mut Tape, v: &[Var]| {
        let (p, x) = split_inputs(v);
        let routing = noisy_gate(tape, &p, x, &params, true, &mut seeded_rng(seed ^ 3)).unwrap();
        Ok(load_balance_loss(tape, &routing, 1.0).unwrap())
    };
    check_gradients(f, &inputs, STEP).unwrap().max_error()
}

fn cross_entropy(seed: u64) -> f64 {
    let mut rng = seeded_rng(seed);
    let logits = random_tensor(9, 2, &mut rng);
    let labels: Vec<usize> = (0..9).map(|_| rng.random_range(0..2)).collect();
    let f = |tape: &mut Tape, v: &[Var]| tape.cross_entropy(v[0], &labels);
    check_gradients(f, &[logits], STEP).unwrap().max_error()
}

fn events(seed: u64) -> Vec<PreparedEvent> {
    let raw = generate_synthetic(6, 6, seed);
    let scaler = FeatureScaler::fit(&raw).unwrap();
    prepare_all(&raw, &scaler, &FeatureMask::none()).into_iter().step_by(4).collect()
}

/// Total training loss of a small MGT, differentiated against every parameter.
fn full_model(seed: u64) -> f64 {
    let set = events(seed);
    let refs: Vec<&PreparedEvent> = set.iter().collect();
    let batch = BatchBuilder::new(4).build(&refs, Some(&mut seeded_rng(seed)));
    let config = ModelConfig {
        d_model: 8,
        d_expert: 4,
        ..ModelConfig::default()
    };
    let model = Model::new(config, &mut seeded_rng(seed)).unwrap();
    let f = |tape: &mut Tape, v: &[Var]| {
        let p = Bound::from_vars(v.to_vec());
        let fwd = model.forward(tape, &p, &batch, true, &mut seeded_rng(seed ^ 4)).unwrap();
        Ok(training_loss(tape, &fwd, &batch.labels, 1.0).unwrap().total)
    };
    check_gradients(f, model.store.tensors(), STEP).unwrap().max_error()
}

/// Worst relative error per layer over the given seeds.
pub fn run(seeds: impl IntoIterator<Item = u64> + Clone) -> Vec<Check> {
    let layers: [(&'static str, fn(u64) -> f64, f64); 7] = [
        ("attention", attention, LAYER_TOLERANCE),
        ("ffn", feed_forward, LAYER_TOLERANCE),
        ("gate", gate, LAYER_TOLERANCE),
        ("expert", expert, LAYER_TOLERANCE),
        ("load loss", load_loss, LAYER_TOLERANCE),
        ("cross-entropy", cross_entropy, LAYER_TOLERANCE),
        ("full mgt", full_model, END_TO_END_TOLERANCE),
    ];
    layers
        .iter()
        .map(|&(layer, check, tolerance)| Check {
            layer,
            error: seeds.clone().into_iter().map(check).fold(0.0, f64::max),
            tolerance,
        })
        .collect()
}
