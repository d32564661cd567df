use deblur_core::augment::AugmentConfig;
use deblur_core::losses::LossConfig;
use deblur_core::params::ParamStore;
use deblur_core::train::*;
use deblur_core::{synthetic, Error, ModelConfig, Tensor};

fn scalar_store(v: f64) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    s.insert("theta".into(), Tensor::new(&[1], vec![v]).unwrap()).unwrap();
    s
}

fn no_decay() -> AdamWConfig {
    AdamWConfig {
        weight_decay: 0.0,
        ..AdamWConfig::default()
    }
}

#[test]
fn adamw_defaults() {
    let c = AdamWConfig::default();
    assert_eq!((c.beta1, c.beta2, c.eps, c.weight_decay), (0.9, 0.999, 1e-8, 1e-4));
}

#[test]
fn adamw_zero_gradient_is_fixed_point() {
    let mut s = scalar_store(0.7);
    let mut opt = AdamW::new(no_decay());
    let g = [0.0];
    for _ in 0..5 {
        opt.step(&mut s, |_| Some(&g[..]), 1e-2).unwrap();
    }
    assert_eq!(s.get("theta").unwrap().data()[0], 0.7);
}

#[test]
fn adamw_first_step_hand_value() {
    let mut s = scalar_store(1.0);
    let mut opt = AdamW::new(no_decay());
    let g = [0.5];
    opt.step(&mut s, |_| Some(&g[..]), 1e-3).unwrap();
    let expected = 1.0 - 1e-3 * (0.5 / (0.5 + 1e-8));
    assert!((s.get("theta").unwrap().data()[0] - expected).abs() < 1e-15);
    assert_eq!(opt.step_count(), 1);
}

#[test]
fn adamw_pure_decay_path() {
    let mut s = scalar_store(2.0);
    let mut opt = AdamW::new(AdamWConfig {
        weight_decay: 0.1,
        ..AdamWConfig::default()
    });
    let g = [0.0];
    opt.step(&mut s, |_| Some(&g[..]), 1e-3).unwrap();
    assert!((s.get("theta").unwrap().data()[0] - 2.0 * (1.0 - 1e-4)).abs() < 1e-15);
}

/// Textbook Adam on a plain vector.
fn reference_adam(theta: &mut [f64], grads: &[Vec<f64>], lr: f64) {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut m = vec![0.0; theta.len()];
    let mut v = vec![0.0; theta.len()];
    for (t, g) in grads.iter().enumerate() {
        let t = (t + 1) as i32;
        for i in 0..theta.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mh = m[i] / (1.0 - b1.powi(t));
            let vh = v[i] / (1.0 - b2.powi(t));
            theta[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

#[test]
fn adamw_without_decay_equals_adam() {
    let grads: Vec<Vec<f64>> = (0..6).map(|k| vec![0.3 - 0.1 * k as f64, (k as f64).sin(), -0.02]).collect();
    let mut reference = vec![0.5, -1.0, 2.0];
    reference_adam(&mut reference, &grads, 3e-3);
    let mut s = ParamStore::new();
    s.insert("w".into(), Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap()).unwrap();
    let mut opt = AdamW::new(no_decay());
    for g in &grads {
        opt.step(&mut s, |_| Some(g.as_slice()), 3e-3).unwrap();
    }
    for (a, b) in s.get("w").unwrap().data().iter().zip(&reference) {
        assert!((a - b).abs() < 1e-14, "{a} vs {b}");
    }
}

#[test]
fn adamw_step_decreases_convex_quadratic() {
    // f(θ) = ½ Σ a_i θ_i², gradient a_i θ_i.
    let a = [1.0, 4.0, 0.5];
    let mut s = ParamStore::new();
    s.insert("w".into(), Tensor::new(&[3], vec![1.0, -0.5, 2.0]).unwrap()).unwrap();
    let f = |w: &[f64]| 0.5 * w.iter().zip(a).map(|(x, k)| k * x * x).sum::<f64>();
    let mut opt = AdamW::new(AdamWConfig::default());
    let mut last = f(s.get("w").unwrap().data());
    for _ in 0..20 {
        let g: Vec<f64> = s.get("w").unwrap().data().iter().zip(a).map(|(x, k)| k * x).collect();
        opt.step(&mut s, |_| Some(g.as_slice()), 1e-2).unwrap();
        let now = f(s.get("w").unwrap().data());
        assert!(now < last);
        last = now;
    }
}

#[test]
fn adamw_names_the_nan_parameter() {
    let mut s = scalar_store(1.0);
    s.insert("other".into(), Tensor::new(&[2], vec![0.0, 0.0]).unwrap()).unwrap();
    let mut opt = AdamW::new(AdamWConfig::default());
    let bad = [f64::NAN, 0.0];
    let good = [0.1];
    let err = opt
        .step(&mut s, |n| Some(if n == "other" { &bad[..] } else { &good[..] }), 1e-3)
        .unwrap_err();
    assert_eq!(err, Error::NonFiniteGrad { param: "other".into() });
    assert!(err.to_string().contains("other"));
    // Nothing moved.
    assert_eq!(s.get("theta").unwrap().data()[0], 1.0);
    assert_eq!(opt.step_count(), 0);
}

#[test]
fn adamw_requires_every_gradient() {
    let mut s = scalar_store(1.0);
    let mut opt = AdamW::new(AdamWConfig::default());
    assert!(opt.step(&mut s, |_| None, 1e-3).is_err());
}

#[test]
fn cosine_endpoints_and_midpoint() {
    let s = TrainSchedule::paper_8gpu();
    assert_eq!(s.cosine_lr(0).unwrap(), 3e-4);
    assert_eq!(s.cosine_lr(300_000).unwrap(), 1e-6);
    assert!((s.cosine_lr(150_000).unwrap() - 1.505e-4).abs() < 1e-15);
    assert!(s.cosine_lr(300_001).is_err());
}

#[test]
fn cosine_is_nonincreasing() {
    let s = TrainSchedule::paper_8gpu();
    let mut last = f64::INFINITY;
    for t in 0..=s.total_iters {
        let lr = s.cosine_lr(t).unwrap();
        assert!(lr <= last, "t={t}");
        last = lr;
    }
}

#[test]
fn paper_ladder_boundaries() {
    let s = TrainSchedule::paper_8gpu();
    let cases = [
        (0, (128, 64)),
        (91_999, (128, 64)),
        (92_000, (160, 40)),
        (156_000, (192, 32)),
        (204_000, (256, 16)),
        (240_000, (320, 8)),
        (276_000, (384, 8)),
        (299_999, (384, 8)),
    ];
    for (iter, expected) in cases {
        assert_eq!(s.ladder_lookup(iter), expected, "iter {iter}");
    }
}

#[test]
fn improved_and_reproduced_ladders() {
    let imp = TrainSchedule::improved();
    let rungs: Vec<(usize, usize)> = LADDER_ITERS.iter().map(|&i| imp.ladder_lookup(i)).collect();
    assert_eq!(rungs, [(128, 8), (160, 6), (192, 4), (256, 2), (320, 2), (384, 1)]);
    assert_eq!(imp.ladder_lookup(299_999), (384, 1));
    let rep = TrainSchedule::reproduced_baseline();
    assert_eq!(rep.ladder_lookup(299_999), (320, 1));
    assert_eq!(rep.ladder_lookup(92_000), (160, 4));
}

#[test]
fn ladder_is_piecewise_constant_and_right_continuous() {
    let s = TrainSchedule::paper_8gpu();
    for w in s.ladder.windows(2) {
        let before = s.ladder_lookup(w[1].start_iter - 1);
        assert_eq!(before, (w[0].patch, w[0].batch));
        assert_eq!(s.ladder_lookup(w[1].start_iter), (w[1].patch, w[1].batch));
    }
}

#[test]
fn schedule_validation() {
    for s in [TrainSchedule::paper_8gpu(), TrainSchedule::improved(), TrainSchedule::reproduced_baseline()] {
        s.validate().unwrap();
    }
    let mut bad = TrainSchedule::paper_8gpu();
    bad.ladder[0].start_iter = 5;
    assert!(bad.validate().is_err());
    let mut bad = TrainSchedule::paper_8gpu();
    bad.ladder[2].patch = 100;
    assert!(bad.validate().is_err());
    let mut bad = TrainSchedule::paper_8gpu();
    bad.ladder[3].start_iter = bad.ladder[2].start_iter;
    assert!(bad.validate().is_err());
}

fn short_run(lambda: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        model: ModelConfig::toy(),
        loss: LossConfig { lambda_freq: lambda },
        schedule: TrainSchedule::constant(6, 1e-3, 1e-5, 16, 3),
        optim: AdamWConfig::default(),
        augment: AugmentConfig::default(),
        seed,
        log_every: 2,
        val_every: 3,
        checkpoint_every: 2,
        grad_clip: None,
    }
}

#[test]
fn training_is_deterministic() {
    let data = synthetic::pairs(5, 20, 3);
    let a = train(&short_run(0.1, 9), &data, &data[..2], None, &mut NoObserver).unwrap();
    let b = train(&short_run(0.1, 9), &data, &data[..2], None, &mut NoObserver).unwrap();
    assert_eq!(a.status, Status::Completed);
    assert_eq!(a.losses.len(), 6);
    assert!(a.losses.iter().zip(&b.losses).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_eq!(a.params, b.params);
    let c = train(&short_run(0.1, 10), &data, &data[..2], None, &mut NoObserver).unwrap();
    assert_ne!(a.losses, c.losses);
}

#[test]
fn frequency_weight_changes_the_trace() {
    let data = synthetic::pairs(4, 16, 4);
    let a = train(&short_run(0.0, 1), &data, &[], None, &mut NoObserver).unwrap();
    let b = train(&short_run(0.1, 1), &data, &[], None, &mut NoObserver).unwrap();
    assert_ne!(a.losses[1], b.losses[1]);
    for r in &a.log {
        assert_eq!(r.loss, r.l1);
    }
}

#[derive(Default)]
struct Recorder {
    iters: Vec<usize>,
    checkpoints: Vec<(usize, CheckpointKind)>,
}

impl Observer for Recorder {
    fn record(&mut self, r: &LogRecord) -> deblur_core::Result<()> {
        self.iters.push(r.iter);
        Ok(())
    }

    fn checkpoint(&mut self, iter: usize, kind: CheckpointKind, _: &ParamStore<f32>) -> deblur_core::Result<()> {
        self.checkpoints.push((iter, kind));
        Ok(())
    }
}

#[test]
fn observer_sees_logs_validation_and_checkpoints() {
    let data = synthetic::pairs(3, 16, 5);
    let mut rec = Recorder::default();
    let out = train(&short_run(0.1, 2), &data, &data[..1], None, &mut rec).unwrap();
    assert_eq!(rec.iters, [2, 3, 4, 6]);
    assert!(rec.iters.windows(2).all(|w| w[0] < w[1]));
    let validated: Vec<usize> = out.log.iter().filter(|r| r.psnr.is_some()).map(|r| r.iter).collect();
    assert_eq!(validated, [3, 6]);
    assert!(rec.checkpoints.contains(&(2, CheckpointKind::Periodic)));
    assert!(rec.checkpoints.contains(&(4, CheckpointKind::Periodic)));
    assert!(rec.checkpoints.contains(&(3, CheckpointKind::Best)));
    assert_eq!(rec.checkpoints.last(), Some(&(6, CheckpointKind::Final)));
    assert!(out.best_psnr.is_some());
}

#[test]
fn non_finite_loss_aborts_with_finite_parameters() {
    let data = synthetic::pairs(2, 16, 6);
    let mut cfg = short_run(0.1, 3);
    cfg.schedule = TrainSchedule::constant(6, 1e30, 1e30, 16, 2);
    let mut rec = Recorder::default();
    let out = train(&cfg, &data, &[], None, &mut rec).unwrap();
    match &out.status {
        Status::Aborted { error, .. } => assert!(error.is_numeric(), "{error}"),
        s => panic!("expected abort, got {s:?}"),
    }
    assert!(out.params.iter().all(|(_, t)| t.is_finite()));
    assert!(!rec.checkpoints.iter().any(|(_, k)| *k == CheckpointKind::Final));
}

#[test]
fn gradient_clipping_changes_updates() {
    let data = synthetic::pairs(3, 16, 7);
    let mut clipped = short_run(0.1, 4);
    clipped.grad_clip = Some(1e-3);
    let a = train(&short_run(0.1, 4), &data, &[], None, &mut NoObserver).unwrap();
    let b = train(&clipped, &data, &[], None, &mut NoObserver).unwrap();
    assert_eq!(a.losses[0], b.losses[0]);
    assert_ne!(a.params, b.params);
}

#[test]
fn empty_training_set_is_rejected() {
    assert!(train(&short_run(0.1, 0), &[], &[], None, &mut NoObserver).is_err());
}
