use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{LossConfig, TrainConfig};
use super::input::NetworkInput;
use super::layers::{apply_bn_updates, Ctx};
use super::loss::total_loss_var;
use super::model::Model;
use crate::dataio::SparseDepth;
use crate::error::{Error, Result};
use crate::tensor::{Adam, AdamConfig, Scalar};

/// Precomputed network input with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub input: NetworkInput,
    pub gt: SparseDepth,
}

impl TrainSample {
    pub fn flip_vertical(&self) -> Result<Self> {
        Ok(Self {
            input: self.input.flip_vertical(),
            gt: SparseDepth::new(self.gt.grid().flip_vertical())?,
        })
    }
}

/// Loss values of one optimisation step (before the update).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub total: f64,
    pub coarse: f64,
    pub refined: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub step: usize,
    pub losses: StepLosses,
    pub lr: f64,
}

/// Adam optimisation of the combined loss, one sample per step.
pub struct Trainer<T: Scalar = f64> {
    pub model: Model<T>,
    adam: Adam<T>,
    config: TrainConfig,
    loss: LossConfig,
    rng: ChaCha8Rng,
    step: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: Model<T>, config: TrainConfig, loss: LossConfig) -> Result<Self> {
        config.validate()?;
        loss.validate()?;
        let adam = Adam::new(
            AdamConfig {
                beta1: config.beta1,
                beta2: config.beta2,
                eps: config.eps,
            },
            &model.store,
        );
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            model,
            adam,
            config,
            loss,
            rng,
            step: 0,
        })
    }

    pub fn steps(&self) -> usize {
        self.step
    }

    /// Forward, backward and one update on `sample`.
    pub fn step(&mut self, sample: &TrainSample, lr: f64) -> Result<StepLosses> {
        self.model.store.zero_grad();
        let mut ctx = Ctx::new(&self.model.store, true);
        let out = self.model.forward(&mut ctx, &sample.input)?;
        let tl = total_loss_var(&mut ctx.tape, out.coarse.depth, out.refined, &sample.gt, &self.loss)?;
        let (tape, updates) = ctx.finish();
        let value = |v| tape.value(v).data()[0].as_f64();
        let losses = StepLosses {
            total: value(tl.total),
            coarse: value(tl.coarse),
            refined: value(tl.refined),
        };
        if !losses.total.is_finite() {
            return Err(Error::NonFinite(format!("training loss {}", losses.total)));
        }
        tape.backward_into(tl.total, &mut self.model.store)?;
        self.adam.step(&mut self.model.store, lr);
        apply_bn_updates(&mut self.model.store, &updates);
        self.step += 1;
        Ok(losses)
    }

    /// One pass over `data` in a seeded random order.
    pub fn epoch(&mut self, data: &[TrainSample], epoch: usize) -> Result<Vec<LogRow>> {
        if data.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        let lr = self.config.lr_at(epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut rows = Vec::with_capacity(order.len());
        for i in order {
            let flip = self.config.flip && self.rng.random_bool(0.5);
            let losses = if flip {
                self.step(&data[i].flip_vertical()?, lr)
            } else {
                self.step(&data[i], lr)
            }
            .map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("{m} at sample {i}")),
                e => e,
            })?;
            rows.push(LogRow {
                epoch,
                step: self.step,
                losses,
                lr,
            });
        }
        Ok(rows)
    }

    /// Runs every configured epoch; `after_epoch` sees the model and that
    /// epoch's rows.
    pub fn fit(
        &mut self,
        data: &[TrainSample],
        mut after_epoch: impl FnMut(usize, &Model<T>, &[LogRow]) -> Result<()>,
    ) -> Result<Vec<LogRow>> {
        let mut all = Vec::new();
        for e in 0..self.config.epochs {
            let rows = self.epoch(data, e)?;
            after_epoch(e, &self.model, &rows)?;
            all.extend(rows);
        }
        Ok(all)
    }

    pub fn into_model(self) -> Model<T> {
        self.model
    }
}

/// Mean total loss per epoch.
pub fn epoch_means(rows: &[LogRow]) -> Vec<f64> {
    let mut out: Vec<(f64, usize)> = Vec::new();
    for r in rows {
        if out.len() <= r.epoch {
            out.resize(r.epoch + 1, (0.0, 0));
        }
        out[r.epoch].0 += r.losses.total;
        out[r.epoch].1 += 1;
    }
    out.into_iter().map(|(s, n)| if n == 0 { f64::NAN } else { s / n as f64 }).collect()
}

pub fn write_log_csv(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut text = String::from("epoch,step,loss,coarse,refined,lr\n");
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch, r.step, r.losses.total, r.losses.coarse, r.losses.refined, r.lr
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
