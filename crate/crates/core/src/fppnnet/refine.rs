//! Encoder-decoder that corrects the coarse map using the target frame.
//!
//! The correction is added to the coarse logits, so a zero output leaves
//! the coarse prediction unchanged.

use super::config::{PredictionNetConfig, RefineNetConfig, REFINE_INPUT_CHANNELS as INPUT_CHANNELS};
use super::layers::{Builder, Ctx};
use super::predict::{logits_to_depth, CoarseOutput};
use crate::error::Result;
use crate::tensor::{ConvSpec, Scalar, Tensor, Var};

pub(crate) fn build<T: Scalar>(b: &mut Builder<'_, T>, cfg: &RefineNetConfig) -> Result<()> {
    cfg.validate()?;
    let mut cin = INPUT_CHANNELS;
    for i in 0..cfg.levels {
        let c = cfg.level_channels(i);
        b.conv_bn(&format!("ref.down{i}"), ConvSpec::conv(cin, c, 3, 2, 1))?;
        cin = c;
    }
    for i in (0..cfg.levels).rev() {
        let (o, skip) = if i > 0 {
            (cfg.level_channels(i - 1), cfg.level_channels(i - 1))
        } else {
            (cfg.base_channels, INPUT_CHANNELS)
        };
        b.conv_bn(&format!("ref.up{i}"), ConvSpec::deconv(cin, o, 4, 2, 1))?;
        cin = o + skip;
    }
    b.conv("ref.head", ConvSpec::conv(cin, 1, 1, 1, 0), true)
}

pub(crate) fn forward<T: Scalar>(
    ctx: &mut Ctx<'_, T>,
    cfg: &RefineNetConfig,
    pred: &PredictionNetConfig,
    coarse: CoarseOutput,
    rgb: &Tensor<f64>,
) -> Result<Var> {
    let d = ctx.tape.scale(coarse.depth, T::from_f64(1.0 / coarse.scale));
    let rgb = ctx.tape.constant(rgb.cast());
    let input = ctx.tape.concat(&[d, rgb], 1)?;
    let mut skips = vec![input];
    let mut x = input;
    for i in 0..cfg.levels {
        x = ctx.conv_bn_relu(&format!("ref.down{i}"), x, 2, 1)?;
        skips.push(x);
    }
    for i in (0..cfg.levels).rev() {
        let up = ctx.deconv_bn_relu(&format!("ref.up{i}"), x, 2, 1)?;
        x = ctx.tape.concat(&[up, skips[i]], 1)?;
    }
    let delta = ctx.conv("ref.head", x, 1, 0)?;
    let z = ctx.tape.add(coarse.logits, delta)?;
    Ok(logits_to_depth(ctx, z, coarse.scale, pred.depth_floor))
}
