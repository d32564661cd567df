mod common;

use common::oracles::naive_dft_magnitude;
use common::{max_grad_rel_err, rand_tensor, rng};
use deblur_core::losses::{freq_loss, l1_loss, total_loss, LossConfig};
use deblur_core::{Result, Tape, Tensor, Var};

fn eval(f: impl Fn(&mut Tape<f64>, Var, Var) -> Result<Var>, p: &Tensor<f64>, t: &Tensor<f64>) -> f64 {
    let mut tape = Tape::new();
    let pv = tape.constant(p.clone()).unwrap();
    let tv = tape.constant(t.clone()).unwrap();
    let l = f(&mut tape, pv, tv).unwrap();
    tape.value(l).data()[0]
}

fn total(cfg: LossConfig) -> impl Fn(&mut Tape<f64>, Var, Var) -> Result<Var> {
    move |tape, a, b| Ok(total_loss(tape, a, b, &cfg)?.total)
}

fn uniform01(seed: u64, shape: &[usize]) -> Tensor<f64> {
    rand_tensor(&mut rng(seed), shape, 0.5).map(|v| v + 0.5)
}

#[test]
fn l1_closed_forms() {
    let t = uniform01(1, &[2, 3, 4, 5]);
    assert_eq!(eval(l1_loss, &t, &t), 0.0);
    let p = t.map(|v| v + 0.5);
    assert!((eval(l1_loss, &p, &t) - 0.5).abs() < 1e-12);
}

#[test]
fn l1_gradient_is_sign_over_n() {
    let p = rand_tensor(&mut rng(2), &[1, 2, 3, 3], 1.0);
    let t = rand_tensor(&mut rng(3), &[1, 2, 3, 3], 1.0);
    let mut tape = Tape::new();
    let pv = tape.param(p.clone()).unwrap();
    let tv = tape.constant(t.clone()).unwrap();
    let l = l1_loss(&mut tape, pv, tv).unwrap();
    tape.backward(l).unwrap();
    let n = p.numel() as f64;
    for ((g, a), b) in tape.grad(pv).unwrap().iter().zip(p.data()).zip(t.data()) {
        assert_eq!(*g, (a - b).signum() / n);
    }
    let err = max_grad_rel_err(
        &[p],
        &|tape, v| {
            let tv = tape.constant(t.clone())?;
            l1_loss(tape, v[0], tv)
        },
        1e-6,
        1e-3,
    );
    assert!(err < 1e-4, "{err}");
}

#[test]
fn losses_reject_shape_mismatch() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::<f64>::zeros(&[1, 3, 4, 4])).unwrap();
    let b = tape.constant(Tensor::<f64>::zeros(&[1, 3, 4, 5])).unwrap();
    assert!(l1_loss(&mut tape, a, b).is_err());
    assert!(freq_loss(&mut tape, a, b).is_err());
}

#[test]
fn freq_loss_of_constant_images_is_dc_difference() {
    for (h, w) in [(8, 8), (5, 7), (1, 3), (6, 4)] {
        let a = Tensor::full(&[2, 3, h, w], 0.8);
        let b = Tensor::full(&[2, 3, h, w], 0.3);
        assert!((eval(freq_loss, &a, &b) - 0.5).abs() < 1e-12, "{h}x{w}");
        assert_eq!(eval(freq_loss, &a, &a), 0.0);
    }
}

#[test]
fn freq_loss_matches_naive_dft() {
    let (n, c, h, w) = (2, 3, 8, 8);
    let p = uniform01(4, &[n, c, h, w]);
    let t = uniform01(5, &[n, c, h, w]);
    // Per-image mean over channels and bins, then mean over the batch.
    let mut per_image = vec![0.0; n];
    for (img, acc) in per_image.iter_mut().enumerate() {
        for ch in 0..c {
            let off = (img * c + ch) * h * w;
            let mp = naive_dft_magnitude(&p.data()[off..off + h * w], h, w);
            let mt = naive_dft_magnitude(&t.data()[off..off + h * w], h, w);
            *acc += mp.iter().zip(&mt).map(|(a, b)| (a - b).abs()).sum::<f64>();
        }
        *acc /= (c * h * w) as f64;
    }
    let oracle = per_image.iter().sum::<f64>() / n as f64;
    let got = eval(freq_loss, &p, &t);
    assert!((got - oracle).abs() / oracle < 1e-5, "{got} vs {oracle}");
}

#[test]
fn total_loss_closed_forms() {
    let t = uniform01(6, &[1, 3, 8, 8]);
    let p = t.map(|v| v + 0.5);
    assert!((eval(total(LossConfig::default()), &p, &t) - 0.55).abs() < 1e-12);
    assert_eq!(eval(total(LossConfig::default()), &t, &t), 0.0);
    let q = uniform01(7, &[1, 3, 8, 8]);
    assert_eq!(eval(total(LossConfig { lambda_freq: 0.0 }), &q, &t), eval(l1_loss, &q, &t));
}

#[test]
fn total_loss_decomposes() {
    let p = uniform01(8, &[2, 3, 8, 6]);
    let t = uniform01(9, &[2, 3, 8, 6]);
    let l1 = eval(l1_loss, &p, &t);
    let fr = eval(freq_loss, &p, &t);
    for lambda in [0.0, 0.1, 2.5] {
        let mut tape = Tape::new();
        let pv = tape.constant(p.clone()).unwrap();
        let tv = tape.constant(t.clone()).unwrap();
        let terms = total_loss(&mut tape, pv, tv, &LossConfig { lambda_freq: lambda }).unwrap();
        let v = |x| tape.value(x).data()[0];
        assert_eq!(v(terms.l1), l1);
        assert_eq!(v(terms.freq), fr);
        assert!((v(terms.total) - (l1 + lambda * fr)).abs() <= 1e-15 * (1.0 + l1 + lambda * fr));
    }
}

#[test]
fn total_loss_gradients_match_finite_differences() {
    let p = uniform01(10, &[2, 2, 6, 8]);
    let t = uniform01(11, &[2, 2, 6, 8]);
    let err = max_grad_rel_err(
        &[p],
        &|tape, v| {
            let tv = tape.constant(t.clone())?;
            Ok(total_loss(tape, v[0], tv, &LossConfig::default())?.total)
        },
        1e-6,
        1e-3,
    );
    assert!(err < 1e-3, "{err}");
}

#[test]
fn loss_config_validation() {
    assert!(LossConfig::default().validate().is_ok());
    assert_eq!(LossConfig::default().lambda_freq, 0.1);
    assert!(LossConfig { lambda_freq: -1.0 }.validate().is_err());
    assert!(LossConfig { lambda_freq: f64::NAN }.validate().is_err());
}
