use std::path::PathBuf;

use crate::edgefeat::CannyParams;
use crate::error::{Error, Result};
use crate::fppnnet::{parse_bool, parse_kv, InputLayout, LossConfig, ModelConfig, TrainConfig};

/// Stage switches; each one maps onto a row of the ablation table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Toggles {
    pub use_aggregation: bool,
    pub use_edges: bool,
    pub use_cbam: bool,
    pub use_refinement: bool,
    pub include_second_warp: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self {
            use_aggregation: true,
            use_edges: true,
            use_cbam: true,
            use_refinement: true,
            include_second_warp: true,
        }
    }
}

impl Toggles {
    /// Both warped maps and the refinement stage, nothing else.
    pub fn baseline() -> Self {
        Self {
            use_aggregation: false,
            use_edges: false,
            use_cbam: false,
            use_refinement: true,
            include_second_warp: true,
        }
    }

    /// `base` with the network-side switches overridden.
    pub fn apply(&self, base: &ModelConfig) -> ModelConfig {
        let mut cfg = base.clone();
        cfg.predict.use_cbam = self.use_cbam;
        cfg.predict.inputs = InputLayout {
            warped_tm1: self.include_second_warp,
            aggregated: self.use_aggregation,
            edges: self.use_edges,
        };
        cfg.refine = if self.use_refinement {
            Some(base.refine.clone().unwrap_or_default())
        } else {
            None
        };
        cfg
    }
}

/// Labelled settings of the ablation study, in table order.
pub fn ablation_rows() -> Vec<(&'static str, Toggles)> {
    let b = Toggles::baseline();
    vec![
        ("baseline", b),
        (
            "-rgb",
            Toggles {
                use_refinement: false,
                ..b
            },
        ),
        (
            "+aggregation",
            Toggles {
                use_aggregation: true,
                ..b
            },
        ),
        ("+edge", Toggles { use_edges: true, ..b }),
        ("+attention", Toggles { use_cbam: true, ..b }),
        ("ours", Toggles::default()),
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub manifest: Option<PathBuf>,
    /// Held-out manifest for validation logs and ablation scores.
    pub val_manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub toggles: Toggles,
    pub canny: CannyParams,
    /// Widths and depths; the toggles override its switches.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    /// `(width, height)` bottom-anchored crop applied on load.
    pub crop: Option<(usize, usize)>,
    /// Use only the first N samples of the manifest.
    pub max_samples: Option<usize>,
    /// Drop samples whose mean flow magnitude is below this, pixels.
    pub min_mean_flow: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            val_manifest: None,
            checkpoint: None,
            out: PathBuf::from("out"),
            seed: 0,
            toggles: Toggles::default(),
            canny: CannyParams::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            loss: LossConfig::default(),
            crop: None,
            max_samples: None,
            min_mean_flow: 0.0,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e: T::Err| Error::config(key, format!("`{v}`: {e}")))
}

impl PipelineConfig {
    pub const KEYS: &'static [&'static str] = &[
        "manifest",
        "val_manifest",
        "checkpoint",
        "out",
        "seed",
        "use_aggregation",
        "use_edges",
        "use_cbam",
        "use_refinement",
        "include_second_warp",
        "canny_sigma",
        "canny_low",
        "canny_high",
        "base_channels",
        "init_channels",
        "blocks",
        "cbam_reduction",
        "refine_channels",
        "refine_levels",
        "epochs",
        "lr",
        "halve_every",
        "flip",
        "lambda1",
        "lambda2",
        "crop_width",
        "crop_height",
        "max_samples",
        "min_mean_flow",
    ];

    /// Defaults overridden by the `key=value` lines of `text`.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in parse_kv(text)? {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    /// Sets one key; command-line flags go through here as well.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let refine = |cfg: &mut Self| cfg.model.refine.get_or_insert_with(Default::default).clone();
        match key {
            "manifest" => self.manifest = Some(PathBuf::from(v)),
            "val_manifest" => self.val_manifest = Some(PathBuf::from(v)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(v)),
            "out" => self.out = PathBuf::from(v),
            "seed" => self.seed = num(key, v)?,
            "use_aggregation" => self.toggles.use_aggregation = parse_bool(key, v)?,
            "use_edges" => self.toggles.use_edges = parse_bool(key, v)?,
            "use_cbam" => self.toggles.use_cbam = parse_bool(key, v)?,
            "use_refinement" => self.toggles.use_refinement = parse_bool(key, v)?,
            "include_second_warp" => self.toggles.include_second_warp = parse_bool(key, v)?,
            "canny_sigma" => self.canny.sigma = num(key, v)?,
            "canny_low" => self.canny.low = num(key, v)?,
            "canny_high" => self.canny.high = num(key, v)?,
            "base_channels" => self.model.predict.base_channels = num(key, v)?,
            "init_channels" => self.model.predict.init_channels = num(key, v)?,
            "blocks" => {
                self.model.predict.blocks = v
                    .split(',')
                    .map(|s| num(key, s.trim()))
                    .collect::<Result<Vec<usize>>>()?
            }
            "cbam_reduction" => self.model.predict.cbam_reduction = num(key, v)?,
            "refine_channels" => {
                let mut r = refine(self);
                r.base_channels = num(key, v)?;
                self.model.refine = Some(r);
            }
            "refine_levels" => {
                let mut r = refine(self);
                r.levels = num(key, v)?;
                self.model.refine = Some(r);
            }
            "epochs" => self.train.epochs = num(key, v)?,
            "lr" => self.train.lr = num(key, v)?,
            "halve_every" => self.train.halve_every = num(key, v)?,
            "flip" => self.train.flip = parse_bool(key, v)?,
            "lambda1" => self.loss.lambda1 = num(key, v)?,
            "lambda2" => self.loss.lambda2 = num(key, v)?,
            "crop_width" => {
                let h = self.crop.map_or(0, |c| c.1);
                self.crop = Some((num(key, v)?, h));
            }
            "crop_height" => {
                let w = self.crop.map_or(0, |c| c.0);
                self.crop = Some((w, num(key, v)?));
            }
            "max_samples" => self.max_samples = Some(num(key, v)?),
            "min_mean_flow" => self.min_mean_flow = num(key, v)?,
            _ => {
                return Err(Error::config(
                    key,
                    format!("unknown key; expected one of {}", Self::KEYS.join(", ")),
                ))
            }
        }
        Ok(())
    }

    /// Architecture for training: widths from `model`, switches from the toggles.
    pub fn model_config(&self) -> ModelConfig {
        self.toggles.apply(&self.model)
    }

    /// Training schedule seeded from the pipeline seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.canny.validate().map_err(|e| Error::config("canny", e.to_string()))?;
        self.model_config().validate()?;
        self.train_config().validate()?;
        self.loss.validate()?;
        if let Some((w, h)) = self.crop {
            if w == 0 || h == 0 {
                return Err(Error::config("crop_width", "crop needs both crop_width and crop_height"));
            }
        }
        if self.max_samples == Some(0) {
            return Err(Error::config("max_samples", "must be at least 1"));
        }
        if !(self.min_mean_flow >= 0.0) {
            return Err(Error::config("min_mean_flow", "must be >= 0"));
        }
        Ok(())
    }

    pub fn require_manifest(&self) -> Result<&PathBuf> {
        let p = self.manifest.as_ref().ok_or_else(|| Error::config("manifest", "no manifest given"))?;
        if !p.is_file() {
            return Err(Error::config("manifest", format!("{} does not exist", p.display())));
        }
        Ok(p)
    }

    pub fn require_checkpoint(&self) -> Result<&PathBuf> {
        self.checkpoint.as_ref().ok_or_else(|| Error::config("checkpoint", "no checkpoint path given"))
    }
}
