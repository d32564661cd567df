use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Shape of the four-level encoder-decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Width of level 1; level `i` runs at `base_channels · 2^(i-1)`.
    pub base_channels: usize,
    /// Encoder levels 1–3 followed by the latent level.
    pub enc_blocks: [usize; 4],
    /// Decoder levels 3, 2, 1.
    pub dec_blocks: [usize; 3],
    pub heads: [usize; 4],
    pub refinement_blocks: usize,
    /// GDFN expansion factor.
    pub gamma: f64,
}

impl ModelConfig {
    /// Published reference configuration (44 transformer blocks).
    pub fn baseline() -> Self {
        ModelConfig {
            in_channels: 3,
            out_channels: 3,
            base_channels: 48,
            enc_blocks: [4, 6, 6, 8],
            dec_blocks: [6, 6, 4],
            heads: [1, 2, 4, 8],
            refinement_blocks: 4,
            gamma: 2.66,
        }
    }

    /// Reduced configuration with doubled heads, as selected by
    /// [`crate::model::search_improved`] against [`ModelConfig::baseline`].
    pub fn improved() -> Self {
        ModelConfig {
            enc_blocks: [3, 3, 6, 6],
            dec_blocks: [6, 3, 3],
            heads: [2, 4, 8, 16],
            refinement_blocks: 1,
            ..Self::baseline()
        }
    }

    /// Desk-scale configuration: widths 8/16/32/64, one block everywhere.
    pub fn toy() -> Self {
        ModelConfig {
            in_channels: 3,
            out_channels: 3,
            base_channels: 8,
            enc_blocks: [1, 1, 1, 1],
            dec_blocks: [1, 1, 1],
            heads: [1, 2, 4, 8],
            refinement_blocks: 1,
            gamma: 2.66,
        }
    }

    pub fn level_channels(&self) -> [usize; 4] {
        let c = self.base_channels;
        [c, 2 * c, 4 * c, 8 * c]
    }

    pub fn total_blocks(&self) -> usize {
        self.enc_blocks.iter().sum::<usize>() + self.dec_blocks.iter().sum::<usize>() + self.refinement_blocks
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.in_channels == 0 || self.out_channels == 0 {
            return bad("in/out channels must be positive".into());
        }
        if self.base_channels < 2 || self.base_channels % 2 != 0 {
            return bad(format!("base_channels must be even and ≥ 2, got {}", self.base_channels));
        }
        if self.enc_blocks.contains(&0) || self.dec_blocks.contains(&0) || self.refinement_blocks == 0 {
            return bad("every block count must be ≥ 1".into());
        }
        for (i, (&h, c)) in self.heads.iter().zip(self.level_channels()).enumerate() {
            if h == 0 || c % h != 0 {
                return bad(format!("heads[{i}] = {h} does not divide level {} width {c}", i + 1));
            }
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) || crate::nn::gdfn_hidden(self.base_channels, self.gamma) == 0 {
            return bad(format!("gamma {} leaves no hidden channels", self.gamma));
        }
        Ok(())
    }

    /// `key=value` lines, the form embedded in checkpoints.
    pub fn to_kv(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",");
        format!(
            "in_channels={}\nout_channels={}\nbase_channels={}\nenc_blocks={}\ndec_blocks={}\nheads={}\nrefinement_blocks={}\ngamma={}\n",
            self.in_channels,
            self.out_channels,
            self.base_channels,
            join(&self.enc_blocks),
            join(&self.dec_blocks),
            join(&self.heads),
            self.refinement_blocks,
            self.gamma,
        )
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        fn list<const N: usize>(key: &str, v: &str) -> Result<[usize; N]> {
            let parts: Vec<&str> = v.split(',').collect();
            if parts.len() != N {
                return Err(Error::InvalidConfig(format!("{key}: expected {N} values")));
            }
            let mut out = [0; N];
            for (o, p) in out.iter_mut().zip(parts) {
                *o = num(key, p)?;
            }
            Ok(out)
        }
        fn num(key: &str, v: &str) -> Result<usize> {
            v.trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("{key}: bad integer {v:?}")))
        }
        let mut cfg = ModelConfig::baseline();
        let mut seen = 0u32;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("malformed line {line:?}")))?;
            let v = v.trim();
            match k.trim() {
                "in_channels" => cfg.in_channels = num(k, v)?,
                "out_channels" => cfg.out_channels = num(k, v)?,
                "base_channels" => cfg.base_channels = num(k, v)?,
                "enc_blocks" => cfg.enc_blocks = list(k, v)?,
                "dec_blocks" => cfg.dec_blocks = list(k, v)?,
                "heads" => cfg.heads = list(k, v)?,
                "refinement_blocks" => cfg.refinement_blocks = num(k, v)?,
                "gamma" => {
                    cfg.gamma = v
                        .parse()
                        .map_err(|_| Error::InvalidConfig(format!("gamma: bad number {v:?}")))?
                }
                other => return Err(Error::InvalidConfig(format!("unknown key {other:?}"))),
            }
            seen += 1;
        }
        if seen != 8 {
            return Err(Error::InvalidConfig(format!("expected 8 keys, found {seen}")));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::baseline()
    }
}
