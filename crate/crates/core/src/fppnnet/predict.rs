//! Coarse depth prediction: per-group input convolutions, a residual
//! encoder, a deconvolution decoder with skip connections and optional
//! attention after each merge.

use super::cbam::{build_cbam, cbam};
use super::config::{InputGroup, PredictionNetConfig};
use super::input::NetworkInput;
use super::layers::{basic_block, build_basic_block, Builder, Ctx};
use crate::error::Result;
use crate::tensor::{ConvSpec, Scalar, Var};

pub(crate) fn build<T: Scalar>(b: &mut Builder<'_, T>, cfg: &PredictionNetConfig) -> Result<()> {
    cfg.validate()?;
    let base = cfg.base_channels;
    let groups = cfg.inputs.groups();
    for g in &groups {
        b.conv_bn(
            &format!("pred.in.{}", g.name()),
            ConvSpec::conv(g.channels(), cfg.init_channels, 3, 1, 1),
        )?;
    }
    b.conv_bn("pred.stem", ConvSpec::conv(groups.len() * cfg.init_channels, base, 3, 1, 1))?;
    let mut cin = base;
    for (s, &blocks) in cfg.blocks.iter().enumerate() {
        let c = cfg.stage_channels(s);
        for j in 0..blocks {
            let stride = if s > 0 && j == 0 { 2 } else { 1 };
            build_basic_block(b, &format!("pred.enc{s}.{j}"), cin, c, stride)?;
            cin = c;
        }
    }
    b.conv_bn("pred.bottom", ConvSpec::conv(cin, cin, 3, 2, 1))?;
    for (j, s) in (0..cfg.stages()).rev().enumerate() {
        let o = cfg.decoder_channels(s);
        b.conv_bn(&format!("pred.up{s}"), ConvSpec::deconv(cin, o, 4, 2, 1))?;
        cin = o + cfg.stage_channels(s);
        if cfg.cbam_at(j) {
            build_cbam(b, &format!("pred.att{s}"), cin, cfg.cbam_reduction)?;
        }
    }
    b.conv_bn("pred.up_stem", ConvSpec::deconv(cin, base, 3, 1, 1))?;
    if cfg.cbam_at(cfg.stages()) {
        build_cbam(b, "pred.att_stem", 2 * base, cfg.cbam_reduction)?;
    }
    b.conv("pred.head", ConvSpec::conv(2 * base, 1, 1, 1, 0), true)
}

/// Coarse depth and the pre-activation logits it was computed from.
#[derive(Clone, Copy, Debug)]
pub struct CoarseOutput {
    pub depth: Var,
    pub logits: Var,
    /// Metres per unit of normalised depth for this sample.
    pub scale: f64,
}

/// Per-sample depth unit: the median valid value of `d_t`, or the fixed
/// `depth_scale`.
pub fn depth_reference(cfg: &PredictionNetConfig, input: &NetworkInput) -> f64 {
    if !cfg.adaptive_scale {
        return cfg.depth_scale;
    }
    let mut v: Vec<f64> = input.depth_t.data().iter().copied().filter(|d| *d > 0.0).collect();
    if v.is_empty() {
        return cfg.depth_scale;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Maps logits to metres: `scale · softplus(z) + floor`.
pub(crate) fn logits_to_depth<T: Scalar>(ctx: &mut Ctx<'_, T>, z: Var, scale: f64, floor: f64) -> Var {
    let s = ctx.tape.softplus(z);
    let s = ctx.tape.scale(s, T::from_f64(scale));
    ctx.tape.add_scalar(s, T::from_f64(floor))
}

pub(crate) fn forward<T: Scalar>(
    ctx: &mut Ctx<'_, T>,
    cfg: &PredictionNetConfig,
    input: &NetworkInput,
) -> Result<CoarseOutput> {
    let scale = depth_reference(cfg, input);
    let mut feats = Vec::new();
    for (g, t) in input.groups(&cfg.inputs) {
        let norm = match g {
            InputGroup::Flow => 1.0 / cfg.flow_scale,
            InputGroup::Edges => 1.0,
            _ => 1.0 / scale,
        };
        let x = ctx.tape.constant(t.map(|v| v * norm).cast());
        feats.push(ctx.conv_bn_relu(&format!("pred.in.{}", g.name()), x, 1, 1)?);
    }
    let x = ctx.tape.concat(&feats, 1)?;
    let stem = ctx.conv_bn_relu("pred.stem", x, 1, 1)?;

    let mut skips = Vec::with_capacity(cfg.stages());
    let mut x = stem;
    for (s, &blocks) in cfg.blocks.iter().enumerate() {
        for j in 0..blocks {
            let stride = if s > 0 && j == 0 { 2 } else { 1 };
            x = basic_block(ctx, &format!("pred.enc{s}.{j}"), x, stride)?;
        }
        skips.push(x);
    }
    x = ctx.conv_bn_relu("pred.bottom", x, 2, 1)?;
    for (j, s) in (0..cfg.stages()).rev().enumerate() {
        let up = ctx.deconv_bn_relu(&format!("pred.up{s}"), x, 2, 1)?;
        x = ctx.tape.concat(&[up, skips[s]], 1)?;
        if cfg.cbam_at(j) {
            x = cbam(ctx, &format!("pred.att{s}"), x)?;
        }
    }
    let up = ctx.deconv_bn_relu("pred.up_stem", x, 1, 1)?;
    x = ctx.tape.concat(&[up, stem], 1)?;
    if cfg.cbam_at(cfg.stages()) {
        x = cbam(ctx, "pred.att_stem", x)?;
    }
    let logits = ctx.conv("pred.head", x, 1, 0)?;
    let depth = logits_to_depth(ctx, logits, scale, cfg.depth_floor);
    Ok(CoarseOutput { depth, logits, scale })
}
