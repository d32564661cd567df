//! Four-level encoder-decoder assembled from transformer blocks.

mod accounting;
pub mod checkpoint;
mod config;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

pub use accounting::{param_count, search_improved, ArchReport, SearchResult, StageReport};
pub use config::ModelConfig;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{self, BlockParams};
use crate::params::{Bindings, Init, ParamSpec, ParamStore};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Spatial extents must be multiples of this (three 2× downsamplings).
pub const SPATIAL_MULTIPLE: usize = 8;

/// A named run of transformer blocks sharing width and head count.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    pub name: &'static str,
    pub blocks: usize,
    pub channels: usize,
    pub heads: usize,
}

/// Block stages in execution order.
pub fn stages(cfg: &ModelConfig) -> [Stage; 8] {
    let ch = cfg.level_channels();
    let s = |name, blocks, channels, heads| Stage {
        name,
        blocks,
        channels,
        heads,
    };
    [
        s("encoder_level1", cfg.enc_blocks[0], ch[0], cfg.heads[0]),
        s("encoder_level2", cfg.enc_blocks[1], ch[1], cfg.heads[1]),
        s("encoder_level3", cfg.enc_blocks[2], ch[2], cfg.heads[2]),
        s("latent", cfg.enc_blocks[3], ch[3], cfg.heads[3]),
        s("decoder_level3", cfg.dec_blocks[0], ch[2], cfg.heads[2]),
        s("decoder_level2", cfg.dec_blocks[1], ch[1], cfg.heads[1]),
        // The top level keeps the concatenated 2C width.
        s("decoder_level1", cfg.dec_blocks[2], ch[1], cfg.heads[0]),
        s("refinement", cfg.refinement_blocks, ch[1], cfg.heads[0]),
    ]
}

fn block_prefix(stage: &str, i: usize) -> String {
    format!("{stage}.{i:02}")
}

/// Every learnable tensor of the model, in initialization order.
pub fn layout(cfg: &ModelConfig) -> Result<Vec<ParamSpec>> {
    cfg.validate()?;
    let ch = cfg.level_channels();
    let c = ch[0];
    let mut specs = vec![ParamSpec::new(
        "patch_embed.weight".into(),
        &[c, cfg.in_channels, 3, 3],
        Init::TruncNormal,
    )];
    let st = stages(cfg);
    let push_stage = |specs: &mut Vec<ParamSpec>, s: &Stage| {
        for i in 0..s.blocks {
            specs.extend(nn::block_specs(&block_prefix(s.name, i), s.channels, s.heads, cfg.gamma));
        }
    };
    push_stage(&mut specs, &st[0]);
    specs.push(nn::downsample_spec("down1_2.weight".into(), ch[0]));
    push_stage(&mut specs, &st[1]);
    specs.push(nn::downsample_spec("down2_3.weight".into(), ch[1]));
    push_stage(&mut specs, &st[2]);
    specs.push(nn::downsample_spec("down3_4.weight".into(), ch[2]));
    push_stage(&mut specs, &st[3]);
    specs.push(nn::upsample_spec("up4_3.weight".into(), ch[3]));
    specs.push(ParamSpec::new("reduce_chan_level3.weight".into(), &[ch[2], ch[3]], Init::TruncNormal));
    specs.push(ParamSpec::new("reduce_chan_level3.bias".into(), &[ch[2]], Init::Zeros));
    push_stage(&mut specs, &st[4]);
    specs.push(nn::upsample_spec("up3_2.weight".into(), ch[2]));
    specs.push(ParamSpec::new("reduce_chan_level2.weight".into(), &[ch[1], ch[2]], Init::TruncNormal));
    specs.push(ParamSpec::new("reduce_chan_level2.bias".into(), &[ch[1]], Init::Zeros));
    push_stage(&mut specs, &st[5]);
    specs.push(nn::upsample_spec("up2_1.weight".into(), ch[1]));
    push_stage(&mut specs, &st[6]);
    push_stage(&mut specs, &st[7]);
    specs.push(ParamSpec::new(
        "output.weight".into(),
        &[cfg.out_channels, ch[1], 3, 3],
        Init::TruncNormal,
    ));
    Ok(specs)
}

/// Deterministically initialized parameters for `cfg`.
pub fn build<T: Real>(cfg: &ModelConfig, seed: u64) -> Result<ParamStore<T>> {
    ParamStore::from_specs(&layout(cfg)?, seed)
}

/// Checks that `params` holds exactly the tensors `cfg` requires.
pub fn check_params<T: Real>(cfg: &ModelConfig, params: &ParamStore<T>) -> Result<()> {
    let specs = layout(cfg)?;
    if specs.len() != params.len() {
        return Err(Error::InvalidConfig(format!(
            "expected {} parameter tensors, found {}",
            specs.len(),
            params.len()
        )));
    }
    for s in &specs {
        match params.get(&s.name) {
            Some(t) if t.shape() == s.shape.as_slice() => {}
            Some(t) => {
                return Err(Error::Shape {
                    op: "check_params",
                    lhs: s.shape.clone(),
                    rhs: t.shape().to_vec(),
                })
            }
            None => return Err(Error::InvalidConfig(format!("missing parameter {}", s.name))),
        }
    }
    Ok(())
}

fn run_stage<T: Real>(tape: &mut Tape<T>, b: &Bindings, stage: &Stage, mut x: Var) -> Result<Var> {
    for i in 0..stage.blocks {
        let p = BlockParams::lookup(b, &block_prefix(stage.name, i), stage.heads)?;
        x = nn::block_forward(tape, x, &p)?;
    }
    Ok(x)
}

/// Records the full restoration graph on `tape`: returns `I + R`.
///
/// `input` must be N×in_channels×H×W with H and W multiples of 8.
pub fn forward<T: Real>(tape: &mut Tape<T>, b: &Bindings, cfg: &ModelConfig, input: Var) -> Result<Var> {
    let [_, c_in, h, w] = tape.value(input).dims4()?;
    if c_in != cfg.in_channels {
        return Err(Error::Shape {
            op: "forward",
            lhs: vec![cfg.in_channels],
            rhs: vec![c_in],
        });
    }
    if h % SPATIAL_MULTIPLE != 0 || w % SPATIAL_MULTIPLE != 0 {
        let (ph, pw) = required_padding(h, w);
        return Err(Error::InvalidArgument(format!(
            "spatial size {h}x{w} is not a multiple of {SPATIAL_MULTIPLE}; pad by {ph} rows and {pw} columns"
        )));
    }
    if cfg.in_channels != cfg.out_channels {
        return Err(Error::InvalidConfig("residual output needs in_channels == out_channels".into()));
    }
    let st = stages(cfg);
    let x0 = tape.conv3x3(input, b.get("patch_embed.weight")?, None)?;
    let e1 = run_stage(tape, b, &st[0], x0)?;
    let d = nn::downsample(tape, e1, b.get("down1_2.weight")?)?;
    let e2 = run_stage(tape, b, &st[1], d)?;
    let d = nn::downsample(tape, e2, b.get("down2_3.weight")?)?;
    let e3 = run_stage(tape, b, &st[2], d)?;
    let d = nn::downsample(tape, e3, b.get("down3_4.weight")?)?;
    let latent = run_stage(tape, b, &st[3], d)?;

    let u = nn::upsample(tape, latent, b.get("up4_3.weight")?)?;
    let u = tape.concat_channels(u, e3)?;
    let u = tape.conv_pw(u, b.get("reduce_chan_level3.weight")?, Some(b.get("reduce_chan_level3.bias")?))?;
    let d3 = run_stage(tape, b, &st[4], u)?;

    let u = nn::upsample(tape, d3, b.get("up3_2.weight")?)?;
    let u = tape.concat_channels(u, e2)?;
    let u = tape.conv_pw(u, b.get("reduce_chan_level2.weight")?, Some(b.get("reduce_chan_level2.bias")?))?;
    let d2 = run_stage(tape, b, &st[5], u)?;

    let u = nn::upsample(tape, d2, b.get("up2_1.weight")?)?;
    let u = tape.concat_channels(u, e1)?;
    let d1 = run_stage(tape, b, &st[6], u)?;
    let refined = run_stage(tape, b, &st[7], d1)?;

    let residual = tape.conv3x3(refined, b.get("output.weight")?, None)?;
    tape.add(input, residual)
}

/// Rows and columns of padding needed to reach a multiple of 8.
pub fn required_padding(h: usize, w: usize) -> (usize, usize) {
    let up = |v: usize| v.div_ceil(SPATIAL_MULTIPLE) * SPATIAL_MULTIPLE - v;
    (up(h), up(w))
}

/// Index into `0..len` under reflection without repeating the edge sample
/// (`-1 → 1`, `len → len-2`), folding as often as needed.
pub fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    (if m < len as isize { m } else { period - m }) as usize
}

/// Reflect-pads the bottom and right of an N×C×H×W tensor.
pub fn reflect_pad<T: Real>(x: &Tensor<T>, pad_h: usize, pad_w: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4()?;
    let (ho, wo) = (h + pad_h, w + pad_w);
    let src = x.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        for y in 0..ho {
            let sy = reflect_index(y as isize, h);
            for xx in 0..wo {
                out.push(src[(plane * h + sy) * w + reflect_index(xx as isize, w)]);
            }
        }
    }
    Tensor::new(&[n, c, ho, wo], out)
}

/// Top-left `h×w` window of an N×C×H×W tensor.
pub fn crop<T: Real>(x: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let [n, c, hi, wi] = x.dims4()?;
    if h > hi || w > wi {
        return Err(Error::InvalidArgument(format!("crop {h}x{w} exceeds {hi}x{wi}")));
    }
    let mut out = Vec::with_capacity(n * c * h * w);
    for plane in 0..n * c {
        for y in 0..h {
            let row = (plane * hi + y) * wi;
            out.extend_from_slice(&x.data()[row..row + w]);
        }
    }
    Tensor::new(&[n, c, h, w], out)
}

/// Inference on an arbitrary-size batch: reflect-pads to a multiple of 8,
/// runs the network without recording gradients, and crops back.
pub fn restore<T: Real>(params: &ParamStore<T>, cfg: &ModelConfig, input: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, _, h, w] = input.dims4()?;
    let (ph, pw) = required_padding(h, w);
    let padded = if ph == 0 && pw == 0 {
        input.clone()
    } else {
        reflect_pad(input, ph, pw)?
    };
    let mut tape = Tape::new();
    let b = params.bind_frozen(&mut tape)?;
    let x = tape.constant(padded)?;
    let y = forward(&mut tape, &b, cfg, x)?;
    let out = tape.value(y);
    if ph == 0 && pw == 0 {
        Ok(out.clone())
    } else {
        crop(out, h, w)
    }
}
