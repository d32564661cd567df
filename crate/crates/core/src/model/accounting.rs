//! Closed-form parameter and size accounting, and the reduced-configuration search.

use alloc::vec::Vec;

use super::checkpoint;
use super::config::ModelConfig;
use super::stages;
use crate::error::Result;
use crate::nn::block_param_count;

#[derive(Clone, Debug, PartialEq)]
pub struct StageReport {
    pub name: &'static str,
    pub blocks: usize,
    pub channels: usize,
    pub heads: usize,
    pub params: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArchReport {
    pub total_params: usize,
    pub total_blocks: usize,
    pub stages: Vec<StageReport>,
    /// Parameters outside transformer blocks (embedding, resampling, channel reduction, output).
    pub other_params: usize,
    /// Size of the fp32 checkpoint: `4·total_params + header_bytes`.
    pub checkpoint_bytes: usize,
    pub header_bytes: usize,
}

/// Counts parameters without materializing them.
pub fn param_count(cfg: &ModelConfig) -> Result<ArchReport> {
    cfg.validate()?;
    let ch = cfg.level_channels();
    let stage_reports: Vec<StageReport> = stages(cfg)
        .iter()
        .map(|s| StageReport {
            name: s.name,
            blocks: s.blocks,
            channels: s.channels,
            heads: s.heads,
            params: s.blocks * block_param_count(s.channels, s.heads, cfg.gamma),
        })
        .collect();
    let embed = cfg.in_channels * ch[0] * 9;
    // Bias-free 3×3: C→C/2 on the way down, C→2C on the way up.
    let down: usize = ch[..3].iter().map(|&c| (c / 2) * c * 9).sum();
    let up: usize = ch[1..].iter().map(|&c| 2 * c * c * 9).sum();
    let reduce = (ch[2] * ch[3] + ch[2]) + (ch[1] * ch[2] + ch[1]);
    let output = cfg.out_channels * ch[1] * 9;
    let other = embed + down + up + reduce + output;
    let total_params = other + stage_reports.iter().map(|s| s.params).sum::<usize>();
    let header_bytes = checkpoint::header_len(cfg)?;
    Ok(ArchReport {
        total_params,
        total_blocks: cfg.total_blocks(),
        stages: stage_reports,
        other_params: other,
        checkpoint_bytes: 4 * total_params + header_bytes,
        header_bytes,
    })
}

/// Target parameter ratio of the reduced model (81.5 MB vs 99.9 MB weights).
pub const TARGET_PARAM_RATIO: f64 = 0.816;
/// Target block ratio (30% fewer transformer blocks).
pub const TARGET_BLOCK_RATIO: f64 = 0.70;
pub const BLOCK_RATIO_TOLERANCE: f64 = 0.03;
/// Largest per-stage block count explored by the search.
pub const SEARCH_MAX_BLOCKS: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub config: ModelConfig,
    pub param_ratio: f64,
    pub block_ratio: f64,
    pub candidates: usize,
}

/// Searches mirrored configurations (decoder levels repeat encoder levels
/// 3, 2, 1) with every head count doubled, keeping those whose block ratio
/// to `baseline` is within tolerance of 0.70 and returning the one whose
/// parameter ratio is closest to 0.816. Ties keep the first candidate in
/// (enc1, enc2, enc3, latent, refinement) lexicographic order.
pub fn search_improved(baseline: &ModelConfig) -> Result<Option<SearchResult>> {
    let base = param_count(baseline)?;
    let heads = baseline.heads.map(|h| 2 * h);
    let mut best: Option<SearchResult> = None;
    let mut candidates = 0;
    let range = 1..=SEARCH_MAX_BLOCKS;
    for e1 in range.clone() {
        for e2 in range.clone() {
            for e3 in range.clone() {
                for latent in range.clone() {
                    for refinement in range.clone() {
                        let cfg = ModelConfig {
                            enc_blocks: [e1, e2, e3, latent],
                            dec_blocks: [e3, e2, e1],
                            heads,
                            refinement_blocks: refinement,
                            ..baseline.clone()
                        };
                        if cfg.validate().is_err() {
                            continue;
                        }
                        let block_ratio = cfg.total_blocks() as f64 / base.total_blocks as f64;
                        if (block_ratio - TARGET_BLOCK_RATIO).abs() > BLOCK_RATIO_TOLERANCE {
                            continue;
                        }
                        candidates += 1;
                        let param_ratio = param_count(&cfg)?.total_params as f64 / base.total_params as f64;
                        let better = best.as_ref().is_none_or(|b| {
                            (param_ratio - TARGET_PARAM_RATIO).abs() < (b.param_ratio - TARGET_PARAM_RATIO).abs()
                        });
                        if better {
                            best = Some(SearchResult {
                                config: cfg,
                                param_ratio,
                                block_ratio,
                                candidates: 0,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(best.map(|b| SearchResult { candidates, ..b }))
}
