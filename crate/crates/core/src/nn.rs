//! Transposed (channel) attention, gated feed-forward, the transformer block
//! built from them, and the level-transition resampling layers.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bindings, Init, ParamSpec};
use crate::scalar::Real;

pub const LAYER_NORM_EPS: f64 = 1e-5;
const QK_NORM_EPS: f64 = 1e-12;

/// Hidden width of the gated feed-forward network: `floor(γ·C)`.
pub fn gdfn_hidden(channels: usize, gamma: f64) -> usize {
    libm::floor(gamma * channels as f64) as usize
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNormParams {
    pub weight: Var,
    pub bias: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct MdtaParams {
    /// C → 3C point-wise projection producing q, k, v.
    pub qkv: Var,
    pub qkv_bias: Var,
    /// 3C depth-wise 3×3 kernels.
    pub qkv_dw: Var,
    pub qkv_dw_bias: Var,
    /// C → C output projection.
    pub project: Var,
    pub project_bias: Var,
    /// Per-head temperature (length `heads`).
    pub alpha: Var,
    pub heads: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct GdfnParams {
    /// C → 2·hidden; the first half feeds the GELU branch, the second the linear branch.
    pub expand: Var,
    pub expand_bias: Var,
    pub dw: Var,
    pub dw_bias: Var,
    /// hidden → C.
    pub project: Var,
    pub project_bias: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct BlockParams {
    pub norm1: LayerNormParams,
    pub mdta: MdtaParams,
    pub norm2: LayerNormParams,
    pub gdfn: GdfnParams,
}

fn spec(prefix: &str, suffix: &str, shape: &[usize], init: Init) -> ParamSpec {
    ParamSpec::new(format!("{prefix}.{suffix}"), shape, init)
}

/// Parameter layout of one transformer block at `channels` width.
pub fn block_specs(prefix: &str, channels: usize, heads: usize, gamma: f64) -> Vec<ParamSpec> {
    let c = channels;
    let h = gdfn_hidden(c, gamma);
    let head_dim = c / heads.max(1);
    vec![
        spec(prefix, "norm1.weight", &[c], Init::Ones),
        spec(prefix, "norm1.bias", &[c], Init::Zeros),
        spec(prefix, "attn.qkv.weight", &[3 * c, c], Init::TruncNormal),
        spec(prefix, "attn.qkv.bias", &[3 * c], Init::Zeros),
        spec(prefix, "attn.qkv_dw.weight", &[3 * c, 3, 3], Init::TruncNormal),
        spec(prefix, "attn.qkv_dw.bias", &[3 * c], Init::Zeros),
        spec(prefix, "attn.project_out.weight", &[c, c], Init::TruncNormal),
        spec(prefix, "attn.project_out.bias", &[c], Init::Zeros),
        spec(
            prefix,
            "attn.temperature",
            &[heads],
            Init::Const(1.0 / libm::sqrt(head_dim as f64)),
        ),
        spec(prefix, "norm2.weight", &[c], Init::Ones),
        spec(prefix, "norm2.bias", &[c], Init::Zeros),
        spec(prefix, "ffn.project_in.weight", &[2 * h, c], Init::TruncNormal),
        spec(prefix, "ffn.project_in.bias", &[2 * h], Init::Zeros),
        spec(prefix, "ffn.dwconv.weight", &[2 * h, 3, 3], Init::TruncNormal),
        spec(prefix, "ffn.dwconv.bias", &[2 * h], Init::Zeros),
        spec(prefix, "ffn.project_out.weight", &[c, h], Init::TruncNormal),
        spec(prefix, "ffn.project_out.bias", &[c], Init::Zeros),
    ]
}

/// Scalar parameter count of [`block_specs`], in closed form.
pub fn block_param_count(channels: usize, heads: usize, gamma: f64) -> usize {
    let c = channels;
    let h = gdfn_hidden(c, gamma);
    4 * c * c + 3 * h * c + 39 * c + 22 * h + heads
}

impl BlockParams {
    pub fn lookup(b: &Bindings, prefix: &str, heads: usize) -> Result<Self> {
        let g = |s: &str| b.get(&join(prefix, s));
        Ok(BlockParams {
            norm1: LayerNormParams {
                weight: g("norm1.weight")?,
                bias: g("norm1.bias")?,
            },
            mdta: MdtaParams {
                qkv: g("attn.qkv.weight")?,
                qkv_bias: g("attn.qkv.bias")?,
                qkv_dw: g("attn.qkv_dw.weight")?,
                qkv_dw_bias: g("attn.qkv_dw.bias")?,
                project: g("attn.project_out.weight")?,
                project_bias: g("attn.project_out.bias")?,
                alpha: g("attn.temperature")?,
                heads,
            },
            norm2: LayerNormParams {
                weight: g("norm2.weight")?,
                bias: g("norm2.bias")?,
            },
            gdfn: GdfnParams {
                expand: g("ffn.project_in.weight")?,
                expand_bias: g("ffn.project_in.bias")?,
                dw: g("ffn.dwconv.weight")?,
                dw_bias: g("ffn.dwconv.bias")?,
                project: g("ffn.project_out.weight")?,
                project_bias: g("ffn.project_out.bias")?,
            },
        })
    }
}

fn join(prefix: &str, suffix: &str) -> String {
    format!("{prefix}.{suffix}")
}

pub fn layer_norm<T: Real>(tape: &mut Tape<T>, x: Var, p: &LayerNormParams) -> Result<Var> {
    tape.layer_norm(x, p.weight, p.bias, T::from_f64(LAYER_NORM_EPS))
}

/// Attention branch without the residual: returns the projected output and
/// the per-head attention map of shape N×heads×c×c (c = C/heads).
///
/// q, k and v are laid out channel-major (c × HW per head); q and k rows are
/// L2-normalized over the spatial axis, logits are `(q·kᵀ)·α_h`, the softmax
/// runs over the last axis (the one contracted against v), and the head
/// output is `A·v`.
pub fn mdta_core<T: Real>(tape: &mut Tape<T>, y: Var, p: &MdtaParams) -> Result<(Var, Var)> {
    let [n, c, h, w] = tape.value(y).dims4()?;
    if p.heads == 0 || c % p.heads != 0 {
        return Err(Error::Indivisible {
            op: "mdta",
            extent: c,
            factor: p.heads,
        });
    }
    if tape.shape(p.alpha) != [p.heads] {
        return Err(Error::Shape {
            op: "mdta",
            lhs: vec![p.heads],
            rhs: tape.shape(p.alpha).to_vec(),
        });
    }
    let hd = c / p.heads;
    let head_shape = [n, p.heads, hd, h * w];
    let qkv = tape.conv_pw(y, p.qkv, Some(p.qkv_bias))?;
    let qkv = tape.conv_dw(qkv, p.qkv_dw, Some(p.qkv_dw_bias))?;
    let q = tape.slice_channels(qkv, 0, c)?;
    let k = tape.slice_channels(qkv, c, c)?;
    let v = tape.slice_channels(qkv, 2 * c, c)?;
    let q = tape.reshape(q, &head_shape)?;
    let k = tape.reshape(k, &head_shape)?;
    let v = tape.reshape(v, &head_shape)?;
    let eps = T::from_f64(QK_NORM_EPS);
    let q = tape.l2_normalize(q, eps)?;
    let k = tape.l2_normalize(k, eps)?;
    let kt = tape.transpose_last2(k)?;
    let logits = tape.matmul(q, kt)?;
    let logits = tape.mul_channel(logits, p.alpha)?;
    let attn = tape.softmax(logits)?;
    let out = tape.matmul(attn, v)?;
    let out = tape.reshape(out, &[n, c, h, w])?;
    let out = tape.conv_pw(out, p.project, Some(p.project_bias))?;
    Ok((out, attn))
}

/// `x + W_p·Attention(x)`.
pub fn mdta_forward<T: Real>(tape: &mut Tape<T>, x: Var, p: &MdtaParams) -> Result<Var> {
    let (out, _) = mdta_core(tape, x, p)?;
    tape.add(x, out)
}

/// Gated feed-forward branch without the residual:
/// `W_p⁰·(GELU(dw¹(pw¹ y)) ⊙ dw²(pw² y))`.
pub fn gdfn_core<T: Real>(tape: &mut Tape<T>, y: Var, p: &GdfnParams) -> Result<Var> {
    let expanded = tape.conv_pw(y, p.expand, Some(p.expand_bias))?;
    let expanded = tape.conv_dw(expanded, p.dw, Some(p.dw_bias))?;
    let two_h = tape.shape(expanded)[1];
    if two_h % 2 != 0 {
        return Err(Error::Indivisible {
            op: "gdfn",
            extent: two_h,
            factor: 2,
        });
    }
    let hidden = two_h / 2;
    let gate = tape.slice_channels(expanded, 0, hidden)?;
    let linear = tape.slice_channels(expanded, hidden, hidden)?;
    let gate = tape.gelu(gate)?;
    let gated = tape.mul(gate, linear)?;
    tape.conv_pw(gated, p.project, Some(p.project_bias))
}

/// `x + gdfn_core(x)`.
pub fn gdfn_forward<T: Real>(tape: &mut Tape<T>, x: Var, p: &GdfnParams) -> Result<Var> {
    let out = gdfn_core(tape, x, p)?;
    tape.add(x, out)
}

/// Pre-norm residual block: `x1 = x + MDTA(LN₁ x)`, `out = x1 + GDFN(LN₂ x1)`.
pub fn block_forward<T: Real>(tape: &mut Tape<T>, x: Var, p: &BlockParams) -> Result<Var> {
    let y = layer_norm(tape, x, &p.norm1)?;
    let (attn, _) = mdta_core(tape, y, &p.mdta)?;
    let x1 = tape.add(x, attn)?;
    let y = layer_norm(tape, x1, &p.norm2)?;
    let ffn = gdfn_core(tape, y, &p.gdfn)?;
    tape.add(x1, ffn)
}

/// Bias-free 3×3 conv C→C/2 followed by pixel-unshuffle: N×C×H×W → N×2C×H/2×W/2.
pub fn downsample<T: Real>(tape: &mut Tape<T>, x: Var, weight: Var) -> Result<Var> {
    let y = tape.conv3x3(x, weight, None)?;
    tape.pixel_unshuffle(y, 2)
}

/// Bias-free 3×3 conv C→2C followed by pixel-shuffle: N×C×H×W → N×C/2×2H×2W.
pub fn upsample<T: Real>(tape: &mut Tape<T>, x: Var, weight: Var) -> Result<Var> {
    let y = tape.conv3x3(x, weight, None)?;
    tape.pixel_shuffle(y, 2)
}

pub fn downsample_spec(name: String, channels: usize) -> ParamSpec {
    ParamSpec::new(name, &[channels / 2, channels, 3, 3], Init::TruncNormal)
}

pub fn upsample_spec(name: String, channels: usize) -> ParamSpec {
    ParamSpec::new(name, &[channels * 2, channels, 3, 3], Init::TruncNormal)
}
