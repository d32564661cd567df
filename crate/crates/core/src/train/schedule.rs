//! Cosine learning-rate curve and the progressive patch/batch ladder.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LadderStep {
    pub start_iter: usize,
    pub patch: usize,
    pub batch: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSchedule {
    pub total_iters: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub ladder: Vec<LadderStep>,
}

/// Iterations at which the progressive ladder advances.
pub const LADDER_ITERS: [usize; 6] = [0, 92_000, 156_000, 204_000, 240_000, 276_000];

fn ladder(sizes: [(usize, usize); 6]) -> Vec<LadderStep> {
    LADDER_ITERS
        .iter()
        .zip(sizes)
        .map(|(&start_iter, (patch, batch))| LadderStep { start_iter, patch, batch })
        .collect()
}

impl TrainSchedule {
    fn with_ladder(sizes: [(usize, usize); 6]) -> Self {
        TrainSchedule {
            total_iters: 300_000,
            lr_start: 3e-4,
            lr_end: 1e-6,
            ladder: ladder(sizes),
        }
    }

    /// Original eight-GPU progressive schedule.
    pub fn paper_8gpu() -> Self {
        Self::with_ladder([(128, 64), (160, 40), (192, 32), (256, 16), (320, 8), (384, 8)])
    }

    /// Single-GPU reproduction of the baseline.
    pub fn reproduced_baseline() -> Self {
        Self::with_ladder([(128, 8), (160, 4), (192, 4), (256, 2), (320, 1), (320, 1)])
    }

    /// Ladder of the improved pipeline.
    pub fn improved() -> Self {
        Self::with_ladder([(128, 8), (160, 6), (192, 4), (256, 2), (320, 2), (384, 1)])
    }

    /// One fixed rung for the whole run.
    pub fn constant(total_iters: usize, lr_start: f64, lr_end: f64, patch: usize, batch: usize) -> Self {
        TrainSchedule {
            total_iters,
            lr_start,
            lr_end,
            ladder: alloc::vec![LadderStep { start_iter: 0, patch, batch }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: alloc::string::String| Err(Error::InvalidConfig(m));
        if self.total_iters == 0 {
            return bad("total_iters must be positive".into());
        }
        if !(self.lr_start.is_finite() && self.lr_end.is_finite() && self.lr_start >= 0.0 && self.lr_end >= 0.0) {
            return bad(format!("learning rates must be finite and ≥ 0, got {} → {}", self.lr_start, self.lr_end));
        }
        match self.ladder.first() {
            Some(first) if first.start_iter == 0 => {}
            _ => return bad("ladder must start at iteration 0".into()),
        }
        for pair in self.ladder.windows(2) {
            if pair[1].start_iter <= pair[0].start_iter {
                return bad("ladder start iterations must strictly increase".into());
            }
            if pair[1].patch < pair[0].patch {
                return bad("ladder patch sizes must not decrease".into());
            }
        }
        if self.ladder.iter().any(|s| s.patch == 0 || s.batch == 0) {
            return bad("patch and batch sizes must be positive".into());
        }
        Ok(())
    }

    /// `end + ½(start − end)(1 + cos(π·t/T))`, written as a convex blend of
    /// the endpoints so `t = 0` and `t = T` return them exactly.
    pub fn cosine_lr(&self, iter: usize) -> Result<f64> {
        if iter > self.total_iters {
            return Err(Error::InvalidArgument(format!(
                "iteration {iter} beyond schedule length {}",
                self.total_iters
            )));
        }
        let c = 0.5 * (1.0 + libm::cos(core::f64::consts::PI * iter as f64 / self.total_iters as f64));
        Ok(self.lr_start * c + self.lr_end * (1.0 - c))
    }

    /// `(patch, batch)` of the last rung starting at or before `iter`.
    pub fn ladder_lookup(&self, iter: usize) -> (usize, usize) {
        let i = self.ladder.partition_point(|s| s.start_iter <= iter);
        let s = self.ladder[i.saturating_sub(1)];
        (s.patch, s.batch)
    }
}
