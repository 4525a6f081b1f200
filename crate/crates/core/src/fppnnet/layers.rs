use crate::error::{Error, Result};
use crate::tensor::{he_normal, ConvSpec, ParamId, ParamKind, ParamStore, Scalar, Tape, Tensor, Var};

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;

/// Creates named parameters with deterministic initial values.
pub(crate) struct Builder<'a, T: Scalar> {
    pub store: &'a mut ParamStore<T>,
    pub seed: u64,
    pub norm: bool,
}

impl<T: Scalar> Builder<'_, T> {
    pub fn conv(&mut self, name: &str, spec: ConvSpec, bias: bool) -> Result<()> {
        spec.validate()?;
        let w = format!("{name}.w");
        self.store
            .insert(&w, he_normal(&spec.weight_shape(), spec.fan_in(), self.seed, &w), ParamKind::Trainable)?;
        if bias {
            self.store.insert(
                format!("{name}.b"),
                Tensor::zeros(&[1, spec.out_channels, 1, 1]),
                ParamKind::Trainable,
            )?;
        }
        Ok(())
    }

    pub fn bn(&mut self, name: &str, channels: usize) -> Result<()> {
        let one = T::one();
        self.store.insert(format!("{name}.gamma"), Tensor::full(&[channels], one), ParamKind::Trainable)?;
        self.store.insert(format!("{name}.beta"), Tensor::zeros(&[channels]), ParamKind::Trainable)?;
        self.store.insert(format!("{name}.mean"), Tensor::zeros(&[channels]), ParamKind::Buffer)?;
        self.store.insert(format!("{name}.var"), Tensor::full(&[channels], one), ParamKind::Buffer)?;
        Ok(())
    }

    /// Convolution followed by batch normalisation, or a biased
    /// convolution when `norm` is off.
    pub fn conv_bn(&mut self, name: &str, spec: ConvSpec) -> Result<()> {
        if !self.norm {
            return self.conv(&format!("{name}.conv"), spec, true);
        }
        self.conv(&format!("{name}.conv"), spec, false)?;
        self.bn(&format!("{name}.bn"), spec.out_channels)
    }
}

/// Batch statistics gathered during a training forward pass.
#[derive(Clone, Debug)]
pub struct BnUpdate<T: Scalar> {
    mean_id: ParamId,
    var_id: ParamId,
    mean: Vec<T>,
    var: Vec<T>,
}

/// Forward-pass state: the tape, read-only parameters and the mode.
pub struct Ctx<'s, T: Scalar = f64> {
    pub tape: Tape<T>,
    store: &'s ParamStore<T>,
    train: bool,
    updates: Vec<BnUpdate<T>>,
}

impl<'s, T: Scalar> Ctx<'s, T> {
    pub fn new(store: &'s ParamStore<T>, train: bool) -> Self {
        Self {
            tape: Tape::new(),
            store,
            train,
            updates: Vec::new(),
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    /// Releases the tape and the collected batch statistics.
    pub fn finish(self) -> (Tape<T>, Vec<BnUpdate<T>>) {
        (self.tape, self.updates)
    }

    fn id(&self, name: &str) -> Result<ParamId> {
        self.store
            .id(name)
            .ok_or_else(|| Error::invalid(format!("missing parameter `{name}`")))
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        let id = self.id(name)?;
        Ok(self.tape.param(self.store, id))
    }

    fn spec_of(&self, w: &str, stride: usize, padding: usize, transposed: bool) -> Result<ConvSpec> {
        let s = self.store.tensor(self.id(w)?).shape();
        let (a, b) = (s[0], s[1]);
        let mut spec = if transposed {
            ConvSpec::deconv(a, b, s[2], stride, padding)
        } else {
            ConvSpec::conv(b, a, s[2], stride, padding)
        };
        spec.kernel = (s[2], s[3]);
        Ok(spec)
    }

    fn conv_impl(&mut self, name: &str, x: Var, stride: usize, padding: usize, transposed: bool) -> Result<Var> {
        let wn = format!("{name}.w");
        let spec = self.spec_of(&wn, stride, padding, transposed)?;
        let w = self.param(&wn)?;
        let mut y = if transposed {
            self.tape.deconv2d(x, w, spec)?
        } else {
            self.tape.conv2d(x, w, spec)?
        };
        let bn = format!("{name}.b");
        if self.store.id(&bn).is_some() {
            let b = self.param(&bn)?;
            y = self.tape.add(y, b)?;
        }
        Ok(y)
    }

    pub fn conv(&mut self, name: &str, x: Var, stride: usize, padding: usize) -> Result<Var> {
        self.conv_impl(name, x, stride, padding, false)
    }

    pub fn deconv(&mut self, name: &str, x: Var, stride: usize, padding: usize) -> Result<Var> {
        self.conv_impl(name, x, stride, padding, true)
    }

    pub fn bn(&mut self, name: &str, x: Var) -> Result<Var> {
        let gamma = self.param(&format!("{name}.gamma"))?;
        let beta = self.param(&format!("{name}.beta"))?;
        let mean_id = self.id(&format!("{name}.mean"))?;
        let var_id = self.id(&format!("{name}.var"))?;
        let eps = T::from_f64(BN_EPS);
        if self.train {
            let (y, mean, var) = self.tape.batch_norm(x, gamma, beta, None, eps)?;
            self.updates.push(BnUpdate {
                mean_id,
                var_id,
                mean,
                var,
            });
            Ok(y)
        } else {
            let store = self.store;
            let running = (store.tensor(mean_id).data(), store.tensor(var_id).data());
            Ok(self.tape.batch_norm(x, gamma, beta, Some(running), eps)?.0)
        }
    }

    /// Batch normalisation when the layer has it, identity otherwise.
    pub(crate) fn maybe_bn(&mut self, name: &str, x: Var) -> Result<Var> {
        if self.store.id(&format!("{name}.gamma")).is_some() {
            self.bn(name, x)
        } else {
            Ok(x)
        }
    }

    /// Convolution, batch normalisation, ReLU.
    pub fn conv_bn_relu(&mut self, name: &str, x: Var, stride: usize, padding: usize) -> Result<Var> {
        let y = self.conv(&format!("{name}.conv"), x, stride, padding)?;
        let y = self.maybe_bn(&format!("{name}.bn"), y)?;
        Ok(self.tape.relu(y))
    }

    pub fn deconv_bn_relu(&mut self, name: &str, x: Var, stride: usize, padding: usize) -> Result<Var> {
        let y = self.deconv(&format!("{name}.conv"), x, stride, padding)?;
        let y = self.maybe_bn(&format!("{name}.bn"), y)?;
        Ok(self.tape.relu(y))
    }
}

/// Moves running statistics towards the batch statistics.
pub fn apply_bn_updates<T: Scalar>(store: &mut ParamStore<T>, updates: &[BnUpdate<T>]) {
    let m = T::from_f64(BN_MOMENTUM);
    let keep = T::one() - m;
    for u in updates {
        for (r, &b) in store.tensor_mut(u.mean_id).data_mut().iter_mut().zip(&u.mean) {
            *r = keep * *r + m * b;
        }
        for (r, &b) in store.tensor_mut(u.var_id).data_mut().iter_mut().zip(&u.var) {
            *r = keep * *r + m * b;
        }
    }
}

/// Residual block: two 3×3 conv-BN layers plus a shortcut (1×1 conv-BN
/// when the shape changes), then ReLU.
pub(crate) fn build_basic_block<T: Scalar>(
    b: &mut Builder<'_, T>,
    name: &str,
    cin: usize,
    cout: usize,
    stride: usize,
) -> Result<()> {
    b.conv_bn(&format!("{name}.c1"), ConvSpec::conv(cin, cout, 3, stride, 1))?;
    b.conv_bn(&format!("{name}.c2"), ConvSpec::conv(cout, cout, 3, 1, 1))?;
    if stride != 1 || cin != cout {
        b.conv_bn(&format!("{name}.down"), ConvSpec::conv(cin, cout, 1, stride, 0))?;
    }
    Ok(())
}

pub(crate) fn basic_block<T: Scalar>(ctx: &mut Ctx<'_, T>, name: &str, x: Var, stride: usize) -> Result<Var> {
    let h = ctx.conv_bn_relu(&format!("{name}.c1"), x, stride, 1)?;
    let h = ctx.conv(&format!("{name}.c2.conv"), h, 1, 1)?;
    let h = ctx.maybe_bn(&format!("{name}.c2.bn"), h)?;
    let down = format!("{name}.down");
    let sc = if ctx.store().id(&format!("{down}.conv.w")).is_some() {
        let s = ctx.conv(&format!("{down}.conv"), x, stride, 0)?;
        ctx.maybe_bn(&format!("{down}.bn"), s)?
    } else {
        x
    };
    let y = ctx.tape.add(h, sc)?;
    Ok(ctx.tape.relu(y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn running_stats_move_by_momentum() {
        let mut store = ParamStore::<f64>::new();
        Builder { store: &mut store, seed: 1, norm: true }.bn("n", 2).unwrap();
        let x = Tensor::from_vec(&[1, 2, 1, 2], vec![1.0, 3.0, -2.0, 2.0]).unwrap();
        let updates = {
            let mut ctx = Ctx::new(&store, true);
            let v = ctx.tape.constant(x);
            ctx.bn("n", v).unwrap();
            ctx.finish().1
        };
        apply_bn_updates(&mut store, &updates);
        let mean = store.get("n.mean").unwrap().data().to_vec();
        let var = store.get("n.var").unwrap().data().to_vec();
        assert!((mean[0] - 0.2).abs() < 1e-12 && mean[1].abs() < 1e-12);
        assert!((var[0] - (0.9 + 0.1)).abs() < 1e-12);
        assert!((var[1] - (0.9 + 0.4)).abs() < 1e-12);
    }

    #[test]
    fn block_shapes() {
        let mut store = ParamStore::<f64>::new();
        let mut b = Builder { store: &mut store, seed: 3, norm: true };
        build_basic_block(&mut b, "same", 4, 4, 1).unwrap();
        build_basic_block(&mut b, "down", 4, 8, 2).unwrap();
        assert!(store.id("same.down.conv.w").is_none());
        let mut ctx = Ctx::new(&store, true);
        let x = ctx.tape.constant(Tensor::from_fn(&[1, 4, 8, 8], |i| (i as f64 * 0.37).sin()));
        let y = basic_block(&mut ctx, "same", x, 1).unwrap();
        assert_eq!(ctx.tape.shape(y), &[1, 4, 8, 8]);
        let z = basic_block(&mut ctx, "down", y, 2).unwrap();
        assert_eq!(ctx.tape.shape(z), &[1, 8, 4, 4]);
    }
}
