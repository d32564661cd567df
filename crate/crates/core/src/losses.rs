//! Pixel L1 loss, Fourier-magnitude loss and their weighted sum.

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Weight of the frequency term.
pub const DEFAULT_LAMBDA_FREQ: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub lambda_freq: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_freq: DEFAULT_LAMBDA_FREQ,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_freq.is_finite() && self.lambda_freq >= 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig(alloc::format!(
                "lambda_freq must be finite and ≥ 0, got {}",
                self.lambda_freq
            )))
        }
    }
}

fn same_shape<T: Real>(tape: &Tape<T>, op: &'static str, a: Var, b: Var) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::Shape {
            op,
            lhs: tape.shape(a).to_vec(),
            rhs: tape.shape(b).to_vec(),
        });
    }
    Ok(())
}

/// Mean absolute error over every element.
pub fn l1_loss<T: Real>(tape: &mut Tape<T>, pred: Var, target: Var) -> Result<Var> {
    same_shape(tape, "l1_loss", pred, target)?;
    let d = tape.sub(pred, target)?;
    let a = tape.abs(d)?;
    tape.mean(a)
}

/// Mean over images, channels and frequency bins of `||F(pred)| − |F(target)||`,
/// with `F` the unnormalized 2-D DFT of each H×W plane.
///
/// Every image has the same number of bins, so the global mean equals the
/// batch mean of per-image means.
pub fn freq_loss<T: Real>(tape: &mut Tape<T>, pred: Var, target: Var) -> Result<Var> {
    same_shape(tape, "freq_loss", pred, target)?;
    let mp = tape.fft2_magnitude(pred)?;
    let mt = tape.fft2_magnitude(target)?;
    let d = tape.sub(mp, mt)?;
    let a = tape.abs(d)?;
    tape.mean(a)
}

/// Loss terms recorded on the tape; `total = l1 + λ·freq`.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub l1: Var,
    pub freq: Var,
    pub total: Var,
}

pub fn total_loss<T: Real>(tape: &mut Tape<T>, pred: Var, target: Var, cfg: &LossConfig) -> Result<LossTerms> {
    let l1 = l1_loss(tape, pred, target)?;
    let freq = freq_loss(tape, pred, target)?;
    let weighted = tape.scale(freq, T::from_f64(cfg.lambda_freq))?;
    let total = tape.add(l1, weighted)?;
    Ok(LossTerms { l1, freq, total })
}
