//! Convolutional block attention: channel attention then spatial attention.

use super::layers::{Builder, Ctx};
use crate::error::{Error, Result};
use crate::tensor::{ConvSpec, Scalar, Var};

const SPATIAL_KERNEL: usize = 7;

pub(crate) fn build_cbam<T: Scalar>(b: &mut Builder<'_, T>, name: &str, channels: usize, reduction: usize) -> Result<()> {
    let hidden = channels / reduction.max(1);
    if reduction == 0 || hidden == 0 {
        return Err(Error::config(
            "cbam_reduction",
            format!("{channels} channels cannot be reduced by {reduction}"),
        ));
    }
    b.conv(&format!("{name}.fc1"), ConvSpec::conv(channels, hidden, 1, 1, 0), true)?;
    b.conv(&format!("{name}.fc2"), ConvSpec::conv(hidden, channels, 1, 1, 0), true)?;
    b.conv(&format!("{name}.spatial"), ConvSpec::conv(2, 1, SPATIAL_KERNEL, 1, 0), true)?;
    Ok(())
}

/// Channel weights from pooled descriptors, sigmoid(mlp(avg) + mlp(max)).
pub(crate) fn channel_attention<T: Scalar>(ctx: &mut Ctx<'_, T>, name: &str, x: Var) -> Result<Var> {
    let mlp = |ctx: &mut Ctx<'_, T>, v: Var| -> Result<Var> {
        let h = ctx.conv(&format!("{name}.fc1"), v, 1, 0)?;
        let h = ctx.tape.relu(h);
        ctx.conv(&format!("{name}.fc2"), h, 1, 0)
    };
    let avg = ctx.tape.global_avg(x)?;
    let max = ctx.tape.global_max(x)?;
    let a = mlp(ctx, avg)?;
    let m = mlp(ctx, max)?;
    let s = ctx.tape.add(a, m)?;
    Ok(ctx.tape.sigmoid(s))
}

/// Spatial weights from channel-wise mean and max, via a 7×7 convolution
/// over an edge-replicated border.
pub(crate) fn spatial_attention<T: Scalar>(ctx: &mut Ctx<'_, T>, name: &str, x: Var) -> Result<Var> {
    let avg = ctx.tape.reduce_mean(x, 1)?;
    let max = ctx.tape.reduce_max(x, 1)?;
    let cat = ctx.tape.concat(&[avg, max], 1)?;
    let padded = ctx.tape.pad_replicate(cat, SPATIAL_KERNEL / 2)?;
    let s = ctx.conv(&format!("{name}.spatial"), padded, 1, 0)?;
    Ok(ctx.tape.sigmoid(s))
}

pub(crate) fn cbam<T: Scalar>(ctx: &mut Ctx<'_, T>, name: &str, x: Var) -> Result<Var> {
    let mc = channel_attention(ctx, name, x)?;
    let x = ctx.tape.mul(x, mc)?;
    let ms = spatial_attention(ctx, name, x)?;
    ctx.tape.mul(x, ms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{ParamStore, Tensor};

    fn module(c: usize, r: usize) -> ParamStore<f64> {
        let mut store = ParamStore::new();
        build_cbam(&mut Builder { store: &mut store, seed: 9, norm: false }, "att", c, r).unwrap();
        store
    }

    #[test]
    fn weights_lie_in_unit_interval_and_shapes_match() {
        let store = module(8, 4);
        let mut ctx = Ctx::new(&store, false);
        let x = ctx.tape.constant(Tensor::from_fn(&[1, 8, 6, 5], |i| ((i * 7919) % 113) as f64 / 10.0 - 5.0));
        let mc = channel_attention(&mut ctx, "att", x).unwrap();
        assert_eq!(ctx.tape.shape(mc), &[1, 8, 1, 1]);
        let ms = spatial_attention(&mut ctx, "att", x).unwrap();
        assert_eq!(ctx.tape.shape(ms), &[1, 1, 6, 5]);
        for v in ctx.tape.value(mc).data().iter().chain(ctx.tape.value(ms).data()) {
            assert!(*v > 0.0 && *v < 1.0);
        }
        let y = cbam(&mut ctx, "att", x).unwrap();
        assert_eq!(ctx.tape.shape(y), &[1, 8, 6, 5]);
    }

    #[test]
    fn constant_input_gives_constant_spatial_map() {
        let store = module(8, 4);
        let mut ctx = Ctx::new(&store, false);
        let x = ctx.tape.constant(Tensor::full(&[1, 8, 9, 7], 0.3));
        let ms = spatial_attention(&mut ctx, "att", x).unwrap();
        let d = ctx.tape.value(ms).data();
        assert!(d.iter().all(|v| (v - d[0]).abs() < 1e-12), "{d:?}");
    }

    #[test]
    fn too_few_channels_are_rejected() {
        let mut store = ParamStore::<f64>::new();
        let e = build_cbam(&mut Builder { store: &mut store, seed: 0, norm: false }, "a", 3, 4).unwrap_err();
        assert!(e.to_string().contains("cbam_reduction"));
    }
}
