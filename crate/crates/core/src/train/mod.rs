//! Training loop: progressive patch sampling, augmentation, combined loss,
//! AdamW with cosine learning rate, periodic validation.

mod optim;
mod schedule;

use alloc::vec::Vec;

pub use optim::{AdamW, AdamWConfig};
pub use schedule::{LadderStep, TrainSchedule, LADDER_ITERS};

use crate::augment::{self, AugmentConfig, Pair};
use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::losses::{total_loss, LossConfig};
use crate::metrics;
use crate::model::{self, ModelConfig};
use crate::params::ParamStore;
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub schedule: TrainSchedule,
    pub optim: AdamWConfig,
    pub augment: AugmentConfig,
    pub seed: u64,
    /// Emit a log record every this many iterations (the last one is always logged).
    pub log_every: usize,
    /// Validate every this many iterations; 0 validates only at the end.
    pub val_every: usize,
    /// Hand a checkpoint to the observer every this many iterations; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    /// Global gradient-norm ceiling; `None` leaves gradients untouched.
    pub grad_clip: Option<f64>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.schedule.validate()?;
        self.optim.validate()?;
        self.augment.validate()?;
        if self.log_every == 0 {
            return Err(Error::InvalidConfig("log_every must be positive".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::InvalidConfig(alloc::format!("grad_clip must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRecord {
    pub iter: usize,
    pub loss: f64,
    pub l1: f64,
    pub freq: f64,
    pub lr: f64,
    pub patch: usize,
    pub batch: usize,
    /// Validation results, present on validation iterations.
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckpointKind {
    Periodic,
    /// New best validation PSNR.
    Best,
    Final,
}

/// Receives progress from [`train`]; the default methods ignore it.
pub trait Observer {
    fn record(&mut self, _record: &LogRecord) -> Result<()> {
        Ok(())
    }

    fn checkpoint(&mut self, _iter: usize, _kind: CheckpointKind, _params: &ParamStore<f32>) -> Result<()> {
        Ok(())
    }
}

pub struct NoObserver;

impl Observer for NoObserver {}

#[derive(Clone, Debug, PartialEq)]
pub enum Status {
    Completed,
    /// Training stopped on a NaN/infinite value at `iter`.
    Aborted { iter: usize, error: Error },
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Final parameters, or the last finite ones when aborted.
    pub params: ParamStore<f32>,
    /// Total loss of every completed iteration.
    pub losses: Vec<f64>,
    pub log: Vec<LogRecord>,
    pub best_psnr: Option<f64>,
    pub status: Status,
}

/// Mean PSNR (finite values only) and SSIM of restoring each pair's blurred image.
pub fn evaluate(params: &ParamStore<f32>, cfg: &ModelConfig, pairs: &[Pair]) -> Result<(Option<f64>, f64)> {
    let mut psnrs = Vec::with_capacity(pairs.len());
    let mut ssim_sum = 0.0;
    for pair in pairs {
        let input = Image::batch::<f32>(&[&pair.blur])?;
        let out = Image::from_batch(&model::restore(params, cfg, &input)?, 0)?;
        psnrs.push(metrics::psnr(&pair.sharp, &out)?);
        ssim_sum += metrics::ssim(&pair.sharp, &out)?;
    }
    let finite: Vec<f64> = psnrs.into_iter().filter(|p| p.is_finite()).collect();
    let psnr = (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64);
    Ok((psnr, ssim_sum / pairs.len().max(1) as f64))
}

/// Picks the batch for one iteration: without replacement when the dataset
/// is large enough, with replacement otherwise.
fn batch_indices(n: usize, batch: usize, rng: &mut rng::Rng) -> Vec<usize> {
    use rand::Rng;
    if batch <= n {
        rand::seq::index::sample(rng, n, batch).into_vec()
    } else {
        (0..batch).map(|_| rng.gen_range(0..n)).collect()
    }
}

fn assemble(train_set: &[Pair], cfg: &TrainConfig, iter: usize, patch: usize, batch: usize) -> Result<(Vec<Image>, Vec<Image>)> {
    let mut r = rng::stream(cfg.seed, iter as u64);
    let mut blurs = Vec::with_capacity(batch);
    let mut sharps = Vec::with_capacity(batch);
    for i in batch_indices(train_set.len(), batch, &mut r) {
        let p = augment::sample_patch(&train_set[i], patch, &mut r)?;
        let p = augment::apply(&p, &cfg.augment, &mut r)?;
        blurs.push(p.blur);
        sharps.push(p.sharp);
    }
    Ok((blurs, sharps))
}

fn all_finite(params: &ParamStore<f32>) -> bool {
    params.iter().all(|(_, t)| t.is_finite())
}

/// Runs `cfg.schedule.total_iters` optimizer steps starting from `init`
/// (or a fresh model seeded by `cfg.seed`).
pub fn train(
    cfg: &TrainConfig,
    train_set: &[Pair],
    val_set: &[Pair],
    init: Option<ParamStore<f32>>,
    observer: &mut dyn Observer,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let mut params = match init {
        Some(p) => {
            model::check_params(&cfg.model, &p)?;
            p
        }
        None => model::build(&cfg.model, cfg.seed)?,
    };
    let mut last_good = params.clone();
    let mut opt = AdamW::<f32>::new(cfg.optim);
    let total = cfg.schedule.total_iters;
    let mut losses = Vec::with_capacity(total);
    let mut log = Vec::new();
    let mut best_psnr: Option<f64> = None;

    let abort = |params: ParamStore<f32>, last_good: ParamStore<f32>, losses, log, best_psnr, iter, error| {
        let params = if all_finite(&params) { params } else { last_good };
        Ok(TrainOutcome {
            params,
            losses,
            log,
            best_psnr,
            status: Status::Aborted { iter, error },
        })
    };

    for iter in 0..total {
        let (patch, batch) = cfg.schedule.ladder_lookup(iter);
        let lr = cfg.schedule.cosine_lr(iter)?;
        let (blurs, sharps) = assemble(train_set, cfg, iter, patch, batch)?;
        let input = Image::batch::<f32>(&blurs.iter().collect::<Vec<_>>())?;
        let target = Image::batch::<f32>(&sharps.iter().collect::<Vec<_>>())?;

        let mut tape = Tape::<f32>::new();
        let bindings = params.bind(&mut tape)?;
        let step = (|| {
            let x = tape.constant(input)?;
            let t = tape.constant(target)?;
            let y = model::forward(&mut tape, &bindings, &cfg.model, x)?;
            let terms = total_loss(&mut tape, y, t, &cfg.loss)?;
            tape.backward(terms.total)?;
            Ok::<_, Error>(terms)
        })();
        let terms = match step {
            Ok(t) => t,
            Err(e) if e.is_numeric() => return abort(params, last_good, losses, log, best_psnr, iter, e),
            Err(e) => return Err(e),
        };
        let value = |v| tape.value(v).data()[0] as f64;
        let (loss, l1, freq) = (value(terms.total), value(terms.l1), value(terms.freq));

        let scale = match cfg.grad_clip {
            Some(max_norm) => {
                let sq: f64 = bindings
                    .iter()
                    .filter_map(|(_, &v)| tape.grad(v))
                    .flat_map(|g| g.iter().map(|&x| (x as f64) * (x as f64)))
                    .sum();
                let norm = libm::sqrt(sq);
                (norm > max_norm).then(|| (max_norm / norm) as f32)
            }
            None => None,
        };
        let scaled: Option<alloc::collections::BTreeMap<&str, Vec<f32>>> = scale.map(|s| {
            bindings
                .iter()
                .filter_map(|(n, &v)| tape.grad(v).map(|g| (n.as_str(), g.iter().map(|x| x * s).collect())))
                .collect()
        });
        let stepped = match &scaled {
            Some(map) => opt.step(&mut params, |n| map.get(n).map(|g| g.as_slice()), lr),
            None => opt.step(&mut params, |n| bindings.get(n).ok().and_then(|v| tape.grad(v)), lr),
        };
        if let Err(e) = stepped {
            if e.is_numeric() {
                return abort(params, last_good, losses, log, best_psnr, iter, e);
            }
            return Err(e);
        }
        if !all_finite(&params) {
            let e = Error::NonFinite { op: "adamw" };
            return abort(params, last_good, losses, log, best_psnr, iter, e);
        }
        losses.push(loss);

        let done = iter + 1;
        let is_last = done == total;
        let validate_now = !val_set.is_empty() && (is_last || (cfg.val_every > 0 && done % cfg.val_every == 0));
        let (psnr, ssim) = if validate_now {
            let (p, s) = evaluate(&params, &cfg.model, val_set)?;
            (p, Some(s))
        } else {
            (None, None)
        };
        if done % cfg.log_every == 0 || is_last || validate_now {
            let rec = LogRecord {
                iter: done,
                loss,
                l1,
                freq,
                lr,
                patch,
                batch,
                psnr,
                ssim,
            };
            observer.record(&rec)?;
            log.push(rec);
        }
        if let Some(p) = psnr {
            if best_psnr.is_none_or(|b| p > b) {
                best_psnr = Some(p);
                observer.checkpoint(done, CheckpointKind::Best, &params)?;
            }
        }
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && !is_last {
            observer.checkpoint(done, CheckpointKind::Periodic, &params)?;
            last_good = params.clone();
        }
    }
    observer.checkpoint(total, CheckpointKind::Final, &params)?;
    Ok(TrainOutcome {
        params,
        losses,
        log,
        best_psnr,
        status: Status::Completed,
    })
}
