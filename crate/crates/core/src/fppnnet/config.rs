use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Optional input groups of the prediction network. `d_t`, the flow
/// `F_{t+1→t}` and the warped map `d_{t→t+1}` are always present.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InputLayout {
    /// `d_{t−1→t+1}`.
    pub warped_tm1: bool,
    /// `d^A_{t+1}`.
    pub aggregated: bool,
    pub edges: bool,
}

impl Default for InputLayout {
    fn default() -> Self {
        Self {
            warped_tm1: true,
            aggregated: true,
            edges: true,
        }
    }
}

/// An input group: its name and channel count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputGroup {
    DepthT,
    Flow,
    WarpedT,
    WarpedTm1,
    Aggregated,
    Edges,
}

impl InputGroup {
    pub fn name(self) -> &'static str {
        match self {
            InputGroup::DepthT => "d_t",
            InputGroup::Flow => "flow",
            InputGroup::WarpedT => "d_w_t",
            InputGroup::WarpedTm1 => "d_w_tm1",
            InputGroup::Aggregated => "d_agg",
            InputGroup::Edges => "edges",
        }
    }

    pub fn channels(self) -> usize {
        match self {
            InputGroup::Flow => 2,
            _ => 1,
        }
    }
}

impl InputLayout {
    pub fn groups(&self) -> Vec<InputGroup> {
        let mut g = vec![InputGroup::DepthT, InputGroup::Flow, InputGroup::WarpedT];
        if self.warped_tm1 {
            g.push(InputGroup::WarpedTm1);
        }
        if self.aggregated {
            g.push(InputGroup::Aggregated);
        }
        if self.edges {
            g.push(InputGroup::Edges);
        }
        g
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionNetConfig {
    pub base_channels: usize,
    /// Output channels of each per-group initial convolution.
    pub init_channels: usize,
    /// Residual blocks per encoder stage; stages after the first halve the
    /// resolution, and a final strided convolution halves it once more.
    pub blocks: Vec<usize>,
    pub use_cbam: bool,
    /// Per-junction switches when `use_cbam` is set, deepest junction first
    /// and the full-resolution one last; empty enables every junction.
    pub cbam_junctions: Vec<bool>,
    pub cbam_reduction: usize,
    pub inputs: InputLayout,
    /// Metres per unit of normalised depth (inputs and output); with
    /// `adaptive_scale` only used for samples without valid `d_t`.
    pub depth_scale: f64,
    /// Use the median valid depth of `d_t` as the per-sample scale.
    pub adaptive_scale: bool,
    /// Pixels per unit of normalised flow.
    pub flow_scale: f64,
    /// Smallest predicted depth, metres.
    pub depth_floor: f64,
    /// Batch normalisation after each hidden convolution; without it those
    /// convolutions carry a bias.
    pub batch_norm: bool,
}

impl Default for PredictionNetConfig {
    fn default() -> Self {
        Self {
            base_channels: 16,
            init_channels: 4,
            blocks: vec![1, 1, 1, 1],
            use_cbam: true,
            cbam_junctions: Vec::new(),
            cbam_reduction: 4,
            inputs: InputLayout::default(),
            depth_scale: 20.0,
            adaptive_scale: true,
            flow_scale: 4.0,
            depth_floor: 0.01,
            batch_norm: false,
        }
    }
}

impl PredictionNetConfig {
    pub fn stages(&self) -> usize {
        self.blocks.len()
    }

    /// Input extents must be multiples of this.
    pub fn divisor(&self) -> usize {
        1 << self.stages()
    }

    /// Whether attention follows decoder junction `j` (0 is the deepest).
    pub fn cbam_at(&self, j: usize) -> bool {
        self.use_cbam && self.cbam_junctions.get(j).copied().unwrap_or(true)
    }

    /// Channels of encoder stage `s`.
    pub fn stage_channels(&self, s: usize) -> usize {
        self.base_channels << s
    }

    /// Output channels of the upsampling step that lands on stage `s`.
    pub fn decoder_channels(&self, s: usize) -> usize {
        (self.stage_channels(s) / 2).max(self.base_channels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.init_channels == 0 {
            return Err(Error::config("base_channels", "channel counts must be >= 1"));
        }
        if self.blocks.is_empty() || self.blocks.iter().any(|&b| b == 0) {
            return Err(Error::config("blocks", "need at least one stage with >= 1 block each"));
        }
        if !self.cbam_junctions.is_empty() && self.cbam_junctions.len() != self.stages() + 1 {
            return Err(Error::config(
                "cbam_junctions",
                format!("expected {} switches, got {}", self.stages() + 1, self.cbam_junctions.len()),
            ));
        }
        if self.use_cbam {
            if self.cbam_reduction == 0 {
                return Err(Error::config("cbam_reduction", "must be >= 1"));
            }
            if 2 * self.base_channels < self.cbam_reduction {
                return Err(Error::config(
                    "cbam_reduction",
                    format!(
                        "attention over {} channels cannot be reduced by {}",
                        2 * self.base_channels,
                        self.cbam_reduction
                    ),
                ));
            }
        }
        for (field, v) in [
            ("depth_scale", self.depth_scale),
            ("flow_scale", self.flow_scale),
            ("depth_floor", self.depth_floor),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Trainable parameter count implied by the configuration.
    pub fn param_count(&self) -> usize {
        let b = self.base_channels;
        let c0 = self.init_channels;
        let per_out = if self.batch_norm { 2 } else { 1 };
        let conv_bn = |cin: usize, cout: usize, k: usize| k * k * cin * cout + per_out * cout;
        let cbam = |j: usize, c: usize| {
            let h = c / self.cbam_reduction.max(1);
            if self.cbam_at(j) {
                2 * c * h + h + c + 2 * 49 + 1
            } else {
                0
            }
        };
        let groups = self.inputs.groups();
        let mut n: usize = groups.iter().map(|g| conv_bn(g.channels(), c0, 3)).sum();
        n += conv_bn(groups.len() * c0, b, 3);
        let mut cin = b;
        for (s, &blocks) in self.blocks.iter().enumerate() {
            let c = self.stage_channels(s);
            for j in 0..blocks {
                let stride = if s > 0 && j == 0 { 2 } else { 1 };
                n += conv_bn(cin, c, 3) + conv_bn(c, c, 3);
                if stride != 1 || cin != c {
                    n += conv_bn(cin, c, 1);
                }
                cin = c;
            }
        }
        n += conv_bn(cin, cin, 3);
        for (j, s) in (0..self.stages()).rev().enumerate() {
            let o = self.decoder_channels(s);
            n += conv_bn(cin, o, 4);
            cin = o + self.stage_channels(s);
            n += cbam(j, cin);
        }
        n += conv_bn(cin, b, 3);
        cin = 2 * b;
        n += cbam(self.stages(), cin);
        n + cin + 1
    }
}

/// Normalised coarse depth plus RGB.
pub(crate) const REFINE_INPUT_CHANNELS: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct RefineNetConfig {
    pub base_channels: usize,
    /// Strided convolutions in the encoder (and deconvolutions in the decoder).
    pub levels: usize,
    pub batch_norm: bool,
}

impl Default for RefineNetConfig {
    fn default() -> Self {
        Self {
            base_channels: 16,
            levels: 5,
            batch_norm: false,
        }
    }
}

impl RefineNetConfig {
    /// Channels at encoder level `i` (0-based), capped at 8× the base.
    pub fn level_channels(&self, i: usize) -> usize {
        self.base_channels << i.min(3)
    }

    pub fn divisor(&self) -> usize {
        1 << self.levels
    }

    /// Trainable parameter count implied by the configuration.
    pub fn param_count(&self) -> usize {
        let per_out = if self.batch_norm { 2 } else { 1 };
        let conv_bn = |cin: usize, cout: usize, k: usize| k * k * cin * cout + per_out * cout;
        let mut n = 0;
        let mut cin = REFINE_INPUT_CHANNELS;
        for i in 0..self.levels {
            n += conv_bn(cin, self.level_channels(i), 3);
            cin = self.level_channels(i);
        }
        for i in (0..self.levels).rev() {
            let (o, skip) = if i > 0 {
                (self.level_channels(i - 1), self.level_channels(i - 1))
            } else {
                (self.base_channels, REFINE_INPUT_CHANNELS)
            };
            n += conv_bn(cin, o, 4);
            cin = o + skip;
        }
        n + cin + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 {
            return Err(Error::config("refine_channels", "must be >= 1"));
        }
        if self.levels == 0 {
            return Err(Error::config("refine_levels", "must be >= 1"));
        }
        Ok(())
    }
}

/// Prediction network plus optional refinement stage.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub predict: PredictionNetConfig,
    pub refine: Option<RefineNetConfig>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            predict: PredictionNetConfig::default(),
            refine: Some(RefineNetConfig::default()),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.predict.validate()?;
        if let Some(r) = &self.refine {
            r.validate()?;
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.predict.param_count() + self.refine.as_ref().map_or(0, RefineNetConfig::param_count)
    }

    pub fn divisor(&self) -> usize {
        let p = self.predict.divisor();
        self.refine.as_ref().map_or(p, |r| p.max(r.divisor()))
    }

    /// Rejects extents the encoders cannot halve cleanly, naming the padding
    /// needed to fix them.
    pub fn check_extent(&self, width: usize, height: usize) -> Result<()> {
        let d = self.divisor();
        let pad = |v: usize| (d - v % d) % d;
        if width == 0 || height == 0 || pad(width) != 0 || pad(height) != 0 {
            return Err(Error::shape(format!(
                "input {width}x{height} must be a multiple of {d} in both extents; pad by {} columns and {} rows (to {}x{})",
                pad(width),
                pad(height),
                width + pad(width),
                height + pad(height)
            )));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let p = &self.predict;
        let mut kv = vec![
            ("base_channels", p.base_channels.to_string()),
            ("init_channels", p.init_channels.to_string()),
            (
                "blocks",
                p.blocks.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(","),
            ),
            ("use_cbam", p.use_cbam.to_string()),
            (
                "cbam_junctions",
                p.cbam_junctions.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(","),
            ),
            ("cbam_reduction", p.cbam_reduction.to_string()),
            ("input_warped_tm1", p.inputs.warped_tm1.to_string()),
            ("input_aggregated", p.inputs.aggregated.to_string()),
            ("input_edges", p.inputs.edges.to_string()),
            ("depth_scale", format!("{:?}", p.depth_scale)),
            ("adaptive_scale", p.adaptive_scale.to_string()),
            ("batch_norm", p.batch_norm.to_string()),
            ("flow_scale", format!("{:?}", p.flow_scale)),
            ("depth_floor", format!("{:?}", p.depth_floor)),
            ("use_refinement", self.refine.is_some().to_string()),
        ];
        if let Some(r) = &self.refine {
            kv.push(("refine_channels", r.base_channels.to_string()));
            kv.push(("refine_levels", r.levels.to_string()));
            kv.push(("refine_batch_norm", r.batch_norm.to_string()));
        }
        kv.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let kv = parse_kv(text)?;
        let get = |k: &str| kv.get(k).map(String::as_str);
        let d = ModelConfig::default();
        let refine_on = get("use_refinement").map(|v| parse_bool("use_refinement", v)).transpose()?.unwrap_or(true);
        let rd = RefineNetConfig::default();
        let cfg = ModelConfig {
            predict: PredictionNetConfig {
                base_channels: opt(get("base_channels"), "base_channels", d.predict.base_channels)?,
                init_channels: opt(get("init_channels"), "init_channels", d.predict.init_channels)?,
                blocks: match get("blocks") {
                    Some(v) => v
                        .split(',')
                        .map(|s| s.trim().parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| Error::config("blocks", e.to_string()))?,
                    None => d.predict.blocks.clone(),
                },
                use_cbam: get("use_cbam").map(|v| parse_bool("use_cbam", v)).transpose()?.unwrap_or(d.predict.use_cbam),
                cbam_junctions: match get("cbam_junctions") {
                    Some("") | None => Vec::new(),
                    Some(v) => v
                        .split(',')
                        .map(|s| parse_bool("cbam_junctions", s.trim()))
                        .collect::<Result<_>>()?,
                },
                cbam_reduction: opt(get("cbam_reduction"), "cbam_reduction", d.predict.cbam_reduction)?,
                inputs: InputLayout {
                    warped_tm1: get("input_warped_tm1")
                        .map(|v| parse_bool("input_warped_tm1", v))
                        .transpose()?
                        .unwrap_or(true),
                    aggregated: get("input_aggregated")
                        .map(|v| parse_bool("input_aggregated", v))
                        .transpose()?
                        .unwrap_or(true),
                    edges: get("input_edges").map(|v| parse_bool("input_edges", v)).transpose()?.unwrap_or(true),
                },
                depth_scale: opt(get("depth_scale"), "depth_scale", d.predict.depth_scale)?,
                adaptive_scale: get("adaptive_scale")
                    .map(|v| parse_bool("adaptive_scale", v))
                    .transpose()?
                    .unwrap_or(d.predict.adaptive_scale),
                batch_norm: get("batch_norm")
                    .map(|v| parse_bool("batch_norm", v))
                    .transpose()?
                    .unwrap_or(d.predict.batch_norm),
                flow_scale: opt(get("flow_scale"), "flow_scale", d.predict.flow_scale)?,
                depth_floor: opt(get("depth_floor"), "depth_floor", d.predict.depth_floor)?,
            },
            refine: if refine_on {
                Some(RefineNetConfig {
                    base_channels: opt(get("refine_channels"), "refine_channels", rd.base_channels)?,
                    levels: opt(get("refine_levels"), "refine_levels", rd.levels)?,
                    batch_norm: get("refine_batch_norm")
                        .map(|v| parse_bool("refine_batch_norm", v))
                        .transpose()?
                        .unwrap_or(rd.batch_norm),
                })
            } else {
                None
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Weights of the coarse and refined loss terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.1,
            lambda2: 0.9,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::config("lambda", "loss weights must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// The rate halves after this many epochs.
    pub halve_every: usize,
    /// First-moment decay (momentum).
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Random vertical flips of whole samples.
    pub flip: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 1e-5,
            halve_every: 5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            flip: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let halvings = if self.halve_every == 0 { 0 } else { epoch / self.halve_every };
        self.lr * 0.5f64.powi(halvings as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", format!("must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("beta", "decay rates must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Parses `key=value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}", no + 1), format!("expected key=value, got `{line}`")))?;
        let k = k.trim().to_string();
        if out.insert(k.clone(), v.trim().to_string()).is_some() {
            return Err(Error::config(k, "given twice"));
        }
    }
    Ok(out)
}

pub fn parse_bool(field: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::config(field, format!("expected a boolean, got `{v}`"))),
    }
}

fn opt<T: std::str::FromStr>(v: Option<&str>, field: &str, default: T) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    match v {
        Some(s) => s.parse().map_err(|e: T::Err| Error::config(field, e.to_string())),
        None => Ok(default),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = ModelConfig::default();
        c.predict.blocks = vec![2, 1, 3];
        c.predict.inputs.edges = false;
        c.predict.cbam_junctions = vec![true, false, true, true];
        c.predict.depth_scale = 0.1 + 0.2;
        assert_eq!(ModelConfig::from_text(&c.to_text()).unwrap(), c);
        c.refine = None;
        assert_eq!(ModelConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn bad_text_names_the_field() {
        let e = ModelConfig::from_text("use_cbam=maybe").unwrap_err().to_string();
        assert!(e.contains("use_cbam"), "{e}");
        assert!(ModelConfig::from_text("base_channels").is_err());
        assert!(ModelConfig::from_text("a=1\na=2").is_err());
    }

    #[test]
    fn extent_check_reports_padding() {
        let c = ModelConfig::default();
        assert!(c.check_extent(64, 64).is_ok());
        let e = c.check_extent(60, 64).unwrap_err().to_string();
        assert!(e.contains("pad by 4 columns and 0 rows"), "{e}");
    }

    #[test]
    fn schedule_halves() {
        let t = TrainConfig { lr: 1e-3, ..TrainConfig::default() };
        assert_eq!(t.lr_at(0), 1e-3);
        assert_eq!(t.lr_at(4), 1e-3);
        assert_eq!(t.lr_at(5), 5e-4);
        assert_eq!(t.lr_at(12), 2.5e-4);
    }
}
