use std::path::Path;

use super::config::ModelConfig;
use super::input::NetworkInput;
use super::layers::{Builder, Ctx};
use super::predict::{self, CoarseOutput};
use super::refine;
use crate::dataio::{DenseDepth, Grid};
use crate::error::{Error, Result};
use crate::tensor::{Checkpoint, ParamStore, Scalar, Var};

const CONFIG_ENTRY: &str = "config";

/// Prediction network, optional refinement network and their parameters.
#[derive(Clone, Debug)]
pub struct Model<T: Scalar = f64> {
    config: ModelConfig,
    pub store: ParamStore<T>,
}

/// Tape handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Outputs {
    pub coarse: CoarseOutput,
    pub refined: Option<Var>,
}

impl Outputs {
    /// The final map: refined when available, coarse otherwise.
    pub fn depth(&self) -> Var {
        self.refined.unwrap_or(self.coarse.depth)
    }
}

/// Coarse and final dense predictions.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub coarse: DenseDepth,
    pub refined: Option<DenseDepth>,
}

impl Prediction {
    pub fn depth(&self) -> &DenseDepth {
        self.refined.as_ref().unwrap_or(&self.coarse)
    }
}

impl<T: Scalar> Model<T> {
    /// Builds a model with He-initialised weights drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut b = Builder {
            store: &mut store,
            seed,
            norm: config.predict.batch_norm,
        };
        predict::build(&mut b, &config.predict)?;
        if let Some(r) = &config.refine {
            b.norm = r.batch_norm;
            refine::build(&mut b, r)?;
        }
        Ok(Self { config, store })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.store.trainable_count()
    }

    /// Records one forward pass on `ctx`.
    pub fn forward(&self, ctx: &mut Ctx<'_, T>, input: &NetworkInput) -> Result<Outputs> {
        input.check()?;
        let (w, h) = input.size();
        self.config.check_extent(w, h)?;
        let coarse = predict::forward(ctx, &self.config.predict, input)?;
        let refined = match &self.config.refine {
            Some(r) => Some(refine::forward(ctx, r, &self.config.predict, coarse, &input.rgb)?),
            None => None,
        };
        Ok(Outputs { coarse, refined })
    }

    /// Inference with running batch statistics.
    pub fn predict(&self, input: &NetworkInput) -> Result<Prediction> {
        let mut ctx = Ctx::new(&self.store, false);
        let out = self.forward(&mut ctx, input)?;
        let (w, h) = input.size();
        let to_depth = |v: Var| -> Result<DenseDepth> {
            let data = ctx.tape.value(v).data().iter().map(|x| x.as_f64()).collect();
            DenseDepth::new(Grid::from_vec(w, h, data)?)
        };
        Ok(Prediction {
            coarse: to_depth(out.coarse.depth)?,
            refined: out.refined.map(to_depth).transpose()?,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_store(&self.store);
        ck.push_bytes(CONFIG_ENTRY, self.config.to_text().as_bytes());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let text = ck
            .bytes(CONFIG_ENTRY)
            .ok_or_else(|| Error::format("checkpoint", "no model configuration entry"))?;
        let text = std::str::from_utf8(text).map_err(|e| Error::format("checkpoint", e.to_string()))?;
        let mut model = Self::new(ModelConfig::from_text(text)?, 0)?;
        ck.load_into(&mut model.store)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            store: self.store.cast(),
        }
    }
}
