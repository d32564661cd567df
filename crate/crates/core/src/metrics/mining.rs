//! Per-image metric records, aggregation and PSNR-band labelling.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{delta_e2000, mae, psnr, ssim};
use crate::error::{Error, Result};
use crate::image::Image;

pub const DEFAULT_LO_DB: f64 = 20.0;
pub const DEFAULT_HI_DB: f64 = 30.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    /// PSNR above the band.
    HardPositive,
    /// PSNR below the band.
    HardNegative,
    Neither,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::HardPositive => "hard_positive",
            Label::HardNegative => "hard_negative",
            Label::Neither => "neither",
        }
    }

    pub fn classify(psnr_db: f64, lo: f64, hi: f64) -> Label {
        if psnr_db < lo {
            Label::HardNegative
        } else if psnr_db > hi {
            Label::HardPositive
        } else {
            Label::Neither
        }
    }
}

impl core::fmt::Display for Label {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRecord {
    pub id: String,
    /// `+inf` for identical images.
    pub psnr: f64,
    pub ssim: f64,
    pub mae: f64,
    pub delta_e: f64,
    pub label: Label,
}

/// All metrics for one restored/reference pair; the label starts as `Neither`.
pub fn evaluate_pair(id: &str, restored: &Image, reference: &Image) -> Result<MetricRecord> {
    Ok(MetricRecord {
        id: id.into(),
        psnr: psnr(reference, restored)?,
        ssim: ssim(reference, restored)?,
        mae: mae(reference, restored)?,
        delta_e: delta_e2000(reference, restored)?,
        label: Label::Neither,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aggregates {
    /// Mean over finite PSNR values only; `None` when every pair was identical.
    pub psnr: Option<f64>,
    pub ssim: f64,
    pub mae: f64,
    pub delta_e: f64,
    /// Pairs whose PSNR was the `+inf` sentinel.
    pub identical: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub records: Vec<MetricRecord>,
    pub aggregates: Aggregates,
    pub hard_positive: usize,
    pub hard_negative: usize,
    pub neither: usize,
    pub lo: f64,
    pub hi: f64,
}

impl MetricReport {
    pub fn ids_with(&self, label: Label) -> impl Iterator<Item = &str> {
        self.records.iter().filter(move |r| r.label == label).map(|r| r.id.as_str())
    }
}

fn aggregate(records: &[MetricRecord]) -> Aggregates {
    let n = records.len().max(1) as f64;
    let finite: Vec<f64> = records.iter().map(|r| r.psnr).filter(|p| p.is_finite()).collect();
    Aggregates {
        psnr: (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64),
        ssim: records.iter().map(|r| r.ssim).sum::<f64>() / n,
        mae: records.iter().map(|r| r.mae).sum::<f64>() / n,
        delta_e: records.iter().map(|r| r.delta_e).sum::<f64>() / n,
        identical: records.len() - finite.len(),
    }
}

/// Labels every record against the `[lo, hi]` PSNR band and aggregates.
pub fn mine_hard(mut records: Vec<MetricRecord>, lo: f64, hi: f64) -> Result<MetricReport> {
    if !(lo < hi) {
        return Err(Error::InvalidArgument(format!("mining band needs lo < hi, got {lo} and {hi}")));
    }
    let (mut pos, mut neg, mut neither) = (0, 0, 0);
    for r in &mut records {
        r.label = Label::classify(r.psnr, lo, hi);
        match r.label {
            Label::HardPositive => pos += 1,
            Label::HardNegative => neg += 1,
            Label::Neither => neither += 1,
        }
    }
    Ok(MetricReport {
        aggregates: aggregate(&records),
        records,
        hard_positive: pos,
        hard_negative: neg,
        neither,
        lo,
        hi,
    })
}
