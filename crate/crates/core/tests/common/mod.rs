#![allow(dead_code)]

pub mod oracles;

use deblur_core::params::Bindings;
use deblur_core::{ParamStore, Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

/// Relative error with a floor on the denominator so that near-zero gradient
/// entries are judged on an absolute scale.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Worst relative error between reverse-mode gradients of `f` and central
/// finite differences, over every element of every input.
pub fn max_grad_rel_err(
    inputs: &[Tensor<f64>],
    f: &dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    h: f64,
    floor: f64,
) -> f64 {
    let eval = |ins: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.param(t.clone()).unwrap()).collect();
        let out = f(&mut tape, &vars).unwrap();
        tape.value(out).data()[0]
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone()).unwrap()).collect();
    let out = f(&mut tape, &vars).unwrap();
    tape.backward(out).unwrap();
    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = tape.grad(vars[i]).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; input.numel()]);
        for j in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            worst = worst.max(rel_err(analytic[j], numeric, floor));
        }
    }
    worst
}

/// Reduces an arbitrary-shape output to a scalar through a fixed random
/// projection, so every output element contributes a distinct weight.
pub fn project(tape: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var> {
    let mut r = rng(seed);
    let weights = rand_tensor(&mut r, tape.shape(out), 1.0);
    let wv = tape.constant(weights)?;
    let prod = tape.mul(out, wv)?;
    tape.sum(prod)
}

/// Like [`max_grad_rel_err`] over the tensors of `store`, but only at
/// `per_tensor` randomly chosen entries of each, for models too large to
/// difference exhaustively.
pub fn sampled_store_grad_err(
    store: &ParamStore<f64>,
    f: &dyn Fn(&mut Tape<f64>, &Bindings) -> Result<Var>,
    per_tensor: usize,
    h: f64,
    seed: u64,
) -> f64 {
    let eval = |s: &ParamStore<f64>| {
        let mut tape = Tape::new();
        let b = s.bind(&mut tape).unwrap();
        let out = f(&mut tape, &b).unwrap();
        tape.value(out).data()[0]
    };
    let mut tape = Tape::new();
    let b = store.bind(&mut tape).unwrap();
    let out = f(&mut tape, &b).unwrap();
    tape.backward(out).unwrap();
    let mut pick = rng(seed);
    let mut worst = 0.0f64;
    for (name, t) in store.iter() {
        let grad = tape.grad(b.get(name).unwrap()).unwrap().to_vec();
        for _ in 0..per_tensor {
            let j = pick.gen_range(0..t.numel());
            let shifted = |delta: f64| {
                let mut s = store.clone();
                s.get_mut(name).unwrap().data_mut()[j] += delta;
                eval(&s)
            };
            let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
            worst = worst.max(rel_err(grad[j], numeric, 1e-3));
        }
    }
    worst
}
