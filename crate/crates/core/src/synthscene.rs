//! Synthetic moving scenes: textured rectangles over a sloped background,
//! rendered at three consecutive frames with exact backward flows.
//!
//! Frame indices 0, 1, 2 stand for `t−1`, `t`, `t+1`. A rectangle's top-left
//! corner at frame `k` is `round(p0 + v·k + a·k²/2)`. Depth and texture are
//! attached to the rectangle, so they travel with it. Colours are multiples
//! of 1/255 and depths multiples of 1/256 m, so the PNG codecs reproduce
//! every rendered value exactly.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataio::{
    write_sample, CameraIntrinsics, DenseDepth, FlowField, Grid, RgbImage, Sample, SampleIndex, SparseDepth,
};
use crate::error::{Error, Result};
use crate::fppnnet::parse_kv;
use crate::tensor::name_seed;

const FRAMES: usize = 3;
/// Largest depth the scene may contain, below the depth PNG ceiling.
const MAX_SCENE_DEPTH: f64 = 250.0;
const OBJECT_PATCH: usize = 4;
const BACKGROUND_PATCH: usize = 8;
const TEXTURE_JITTER: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct Rect {
    /// Top-left corner at `t−1`, pixels.
    pub x: f64,
    pub y: f64,
    pub width: usize,
    pub height: usize,
    /// Depth of the top-left texel, metres.
    pub depth: f64,
    /// Depth change per texel along x and y, metres.
    pub slope: (f64, f64),
    /// Pixels per frame.
    pub velocity: (f64, f64),
    /// Pixels per frame².
    pub accel: (f64, f64),
    pub color: [f64; 3],
}

impl Rect {
    pub fn position(&self, frame: usize) -> (i64, i64) {
        let k = frame as f64;
        let p = |p0: f64, v: f64, a: f64| (p0 + v * k + 0.5 * a * k * k).round() as i64;
        (
            p(self.x, self.velocity.0, self.accel.0),
            p(self.y, self.velocity.1, self.accel.1),
        )
    }

    /// Depth at texel `(lx, ly)`, quantised to the depth PNG step.
    pub fn depth_at(&self, lx: usize, ly: usize) -> f64 {
        quantize_depth(self.depth + self.slope.0 * lx as f64 + self.slope.1 * ly as f64)
    }

    fn depth_range(&self) -> (f64, f64) {
        let (w, h) = (self.width - 1, self.height - 1);
        let c = [self.depth_at(0, 0), self.depth_at(w, 0), self.depth_at(0, h), self.depth_at(w, h)];
        (
            c.iter().copied().fold(f64::INFINITY, f64::min),
            c.iter().copied().fold(0.0, f64::max),
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Background depth at the bottom row, metres.
    pub background_depth: f64,
    /// Background depth increase per row towards the top, metres.
    pub background_slope: f64,
    pub rects: Vec<Rect>,
    /// Fraction of pixels kept in the sparse depth maps.
    pub sparsity: f64,
    /// Standard deviation of the noise added to `F_{t+1→t−1}`, pixels.
    pub flow_noise: f64,
    pub seed: u64,
}

fn quantize_depth(d: f64) -> f64 {
    (d * 256.0).round() / 256.0
}

fn quantize_color(c: f64) -> f64 {
    (c.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

impl SceneSpec {
    pub fn background_at(&self, y: usize) -> f64 {
        quantize_depth(self.background_depth + self.background_slope * (self.height - 1 - y) as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| Err(Error::config(field, reason));
        if self.width == 0 || self.height == 0 {
            return bad("resolution", format!("{}x{} is empty", self.width, self.height));
        }
        if !(self.sparsity > 0.0 && self.sparsity <= 1.0) {
            return bad("sparsity", format!("must lie in (0, 1], got {}", self.sparsity));
        }
        if !(self.flow_noise >= 0.0 && self.flow_noise.is_finite()) {
            return bad("flow_noise", format!("must be >= 0, got {}", self.flow_noise));
        }
        if !(self.background_slope >= 0.0) {
            return bad("background_slope", format!("must be >= 0, got {}", self.background_slope));
        }
        let near_bg = self.background_at(self.height - 1);
        if !(near_bg > 0.0) || self.background_at(0) > MAX_SCENE_DEPTH {
            return bad(
                "background_depth",
                format!("background must lie in (0, {MAX_SCENE_DEPTH}] m"),
            );
        }
        for (i, r) in self.rects.iter().enumerate() {
            let field = format!("rects[{i}]");
            if r.width == 0 || r.height == 0 {
                return bad(&field, "empty rectangle".into());
            }
            let vals = [r.x, r.y, r.velocity.0, r.velocity.1, r.accel.0, r.accel.1, r.slope.0, r.slope.1];
            if vals.iter().any(|v| !v.is_finite()) {
                return bad(&field, "non-finite geometry".into());
            }
            if r.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return bad(&field, format!("colour {:?} outside [0, 1]", r.color));
            }
            let (lo, hi) = r.depth_range();
            if !(lo > 0.0) {
                return bad(&field, format!("depth reaches {lo} m"));
            }
            if hi >= near_bg {
                return bad(
                    &field,
                    format!("depth {hi} m is not in front of the background ({near_bg} m)"),
                );
            }
        }
        for i in 0..self.rects.len() {
            for j in i + 1..self.rects.len() {
                let (a, b) = (&self.rects[i], &self.rects[j]);
                if a.depth == b.depth && (0..FRAMES).any(|k| overlap(a, b, k)) {
                    return Err(Error::config(
                        format!("rects[{j}]"),
                        format!("overlaps rects[{i}] at the same depth {} m; z-order is ambiguous", a.depth),
                    ));
                }
            }
        }
        Ok(())
    }
}

fn overlap(a: &Rect, b: &Rect, frame: usize) -> bool {
    let (ax, ay) = a.position(frame);
    let (bx, by) = b.position(frame);
    ax < bx + b.width as i64 && bx < ax + a.width as i64 && ay < by + b.height as i64 && by < ay + a.height as i64
}

/// A rendered scene: the sample plus the dense truth behind it.
#[derive(Clone, Debug)]
pub struct Render {
    pub sample: Sample,
    /// Dense depth at `t−1`, `t`, `t+1`.
    pub dense: [DenseDepth; 3],
    /// Visible surface per pixel: 0 for the background, `i + 1` for rect `i`.
    pub labels: [Grid<u16>; 3],
    /// `F_{t+1→t−1}` before noise.
    pub clean_flow_tm1: FlowField,
}

fn stream(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(name_seed(seed, name))
}

fn texture(rng: &mut ChaCha8Rng, base: [f64; 3], cols: usize, rows: usize) -> Vec<[f64; 3]> {
    (0..cols * rows)
        .map(|_| base.map(|c| quantize_color(c + rng.random_range(-TEXTURE_JITTER..=TEXTURE_JITTER))))
        .collect()
}

pub fn render(spec: &SceneSpec) -> Result<Render> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let mut rng = stream(spec.seed, "texture");
    let bg_base = [0.5, 0.5, 0.5].map(|c: f64| c + rng.random_range(-0.3..0.3));
    let (bg_cols, bg_rows) = (w.div_ceil(BACKGROUND_PATCH), h.div_ceil(BACKGROUND_PATCH));
    let bg_tex = texture(&mut rng, bg_base, bg_cols, bg_rows);
    let rect_tex: Vec<Vec<[f64; 3]>> = spec
        .rects
        .iter()
        .map(|r| texture(&mut rng, r.color, r.width.div_ceil(OBJECT_PATCH), r.height.div_ceil(OBJECT_PATCH)))
        .collect();

    // Far to near, so nearer rectangles overwrite.
    let mut order: Vec<usize> = (0..spec.rects.len()).collect();
    order.sort_by(|&a, &b| spec.rects[b].depth.total_cmp(&spec.rects[a].depth).then(a.cmp(&b)));

    let mut rgb = Vec::with_capacity(FRAMES);
    let mut dense = Vec::with_capacity(FRAMES);
    let mut labels = Vec::with_capacity(FRAMES);
    for k in 0..FRAMES {
        let mut img = Grid::from_fn(w, h, |x, y| bg_tex[(y / BACKGROUND_PATCH) * bg_cols + x / BACKGROUND_PATCH]);
        let mut depth = Grid::from_fn(w, h, |_, y| spec.background_at(y));
        let mut label = Grid::filled(w, h, 0u16);
        for &i in &order {
            let r = &spec.rects[i];
            let (px, py) = r.position(k);
            let tcols = r.width.div_ceil(OBJECT_PATCH);
            for ly in 0..r.height {
                for lx in 0..r.width {
                    let (x, y) = (px + lx as i64, py + ly as i64);
                    if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                        continue;
                    }
                    let (x, y) = (x as usize, y as usize);
                    img.set(x, y, rect_tex[i][(ly / OBJECT_PATCH) * tcols + lx / OBJECT_PATCH]);
                    depth.set(x, y, r.depth_at(lx, ly));
                    label.set(x, y, i as u16 + 1);
                }
            }
        }
        rgb.push(RgbImage::new(img)?);
        dense.push(DenseDepth::new(depth)?);
        labels.push(label);
    }

    let flow_to = |src: usize| -> Result<FlowField> {
        let lab = &labels[2];
        FlowField::new(Grid::from_fn(w, h, |x, y| match lab.get(x, y) {
            0 => [0.0, 0.0],
            l => {
                let r = &spec.rects[l as usize - 1];
                let (a, b) = (r.position(src), r.position(2));
                [(a.0 - b.0) as f32, (a.1 - b.1) as f32]
            }
        }))
    };
    let flow_t = flow_to(1)?;
    let clean_flow_tm1 = flow_to(0)?;
    let flow_tm1 = perturb_flow(&clean_flow_tm1, spec.flow_noise, name_seed(spec.seed, "flow-noise"))?;

    let mut mask_rng = stream(spec.seed, "lidar");
    let mut sparse = |d: &DenseDepth| -> Result<SparseDepth> {
        let mut keep = |v: f64| if mask_rng.random_bool(spec.sparsity) { v } else { 0.0 };
        SparseDepth::new(Grid::from_vec(w, h, d.grid().data().iter().map(|&v| keep(v)).collect())?)
    };
    let depth_tm1 = sparse(&dense[0])?;
    let depth_t = sparse(&dense[1])?;
    let f = w as f64;
    let sample = Sample {
        rgb_tm1: rgb[0].clone(),
        rgb_t: rgb[1].clone(),
        rgb_tp1: rgb[2].clone(),
        depth_tm1,
        depth_t,
        flow_t,
        flow_tm1,
        gt: dense[2].to_sparse()?,
        intrinsics: CameraIntrinsics::new(f, f, w as f64 / 2.0, h as f64 / 2.0)?,
    };
    let [l0, l1, l2] = <[Grid<u16>; 3]>::try_from(labels).expect("three frames");
    let [d0, d1, d2] = <[DenseDepth; 3]>::try_from(dense).expect("three frames");
    Ok(Render {
        sample,
        dense: [d0, d1, d2],
        labels: [l0, l1, l2],
        clean_flow_tm1,
    })
}

/// Adds independent zero-mean Gaussian noise with standard deviation
/// `sigma` to both components of every vector.
pub fn perturb_flow(flow: &FlowField, sigma: f64, seed: u64) -> Result<FlowField> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("flow noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(flow.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = flow.grid();
    let data = g
        .data()
        .iter()
        .map(|&[du, dv]| {
            let a: f64 = normal.sample(&mut rng);
            let b: f64 = normal.sample(&mut rng);
            [(f64::from(du) + a) as f32, (f64::from(dv) + b) as f32]
        })
        .collect();
    FlowField::new(Grid::from_vec(g.width(), g.height(), data)?)
}

/// Parameters for drawing random scenes.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub train: usize,
    pub val: usize,
    pub width: usize,
    pub height: usize,
    pub sparsity: f64,
    pub flow_noise: f64,
    pub seed: u64,
    pub min_rects: usize,
    pub max_rects: usize,
    /// Rectangle side lengths, pixels.
    pub min_size: usize,
    pub max_size: usize,
    /// Per-component bound on rectangle speed, pixels per frame.
    pub max_speed: f64,
    /// Per-component bound on acceleration, pixels per frame².
    pub max_accel: f64,
    pub min_depth: f64,
    pub max_depth: f64,
    /// Per-component bound on rectangle depth slopes, metres per pixel.
    pub max_slope: f64,
    pub background_min: f64,
    pub background_max: f64,
    /// Bound on the background's per-row depth increase, metres.
    pub max_background_slope: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            train: 200,
            val: 40,
            width: 64,
            height: 64,
            sparsity: 0.05,
            flow_noise: 1.0,
            seed: 0,
            min_rects: 2,
            max_rects: 4,
            min_size: 10,
            max_size: 28,
            max_speed: 3.0,
            max_accel: 1.0,
            min_depth: 4.0,
            max_depth: 25.0,
            max_slope: 0.05,
            background_min: 30.0,
            background_max: 45.0,
            max_background_slope: 0.25,
        }
    }
}

/// Written dataset: one manifest per split.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetPaths {
    pub train: PathBuf,
    pub val: PathBuf,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| Err(Error::config(field, reason));
        if self.train == 0 {
            return bad("train", "need at least one training sample");
        }
        if self.width == 0 || self.height == 0 {
            return bad("width", "resolution must be non-empty");
        }
        if !(self.sparsity > 0.0 && self.sparsity <= 1.0) {
            return bad("sparsity", "must lie in (0, 1]");
        }
        if !(self.flow_noise >= 0.0) {
            return bad("flow_noise", "must be >= 0");
        }
        if self.min_rects > self.max_rects {
            return bad("min_rects", "exceeds max_rects");
        }
        if self.min_size == 0 || self.min_size > self.max_size {
            return bad("min_size", "need 1 <= min_size <= max_size");
        }
        if !(self.max_speed >= 0.0 && self.max_accel >= 0.0 && self.max_slope >= 0.0) {
            return bad("max_speed", "motion and slope bounds must be >= 0");
        }
        let reach = self.max_slope * (self.max_size - 1) as f64 * 2.0;
        if !(self.min_depth - reach > 0.0) {
            return bad("min_depth", "slopes could push rectangle depth to zero");
        }
        if !(self.min_depth < self.max_depth) {
            return bad("max_depth", "must exceed min_depth");
        }
        if !(self.max_depth + reach < self.background_min) {
            return bad("background_min", "rectangles could reach the background");
        }
        if !(self.background_min <= self.background_max && self.max_background_slope >= 0.0) {
            return bad("background_max", "must be >= background_min");
        }
        if self.background_max + self.max_background_slope * self.height as f64 > MAX_SCENE_DEPTH {
            return bad("background_max", "background exceeds the depth PNG range");
        }
        Ok(())
    }

    /// Scene `i`; indices at or above `train` belong to the validation split.
    pub fn scene(&self, i: usize) -> SceneSpec {
        let mut rng = stream(self.seed, &format!("scene{i}"));
        let sym = |rng: &mut ChaCha8Rng, m: f64| if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
        let n = rng.random_range(self.min_rects..=self.max_rects);
        let mut rects: Vec<Rect> = Vec::with_capacity(n);
        while rects.len() < n {
            let width = rng.random_range(self.min_size..=self.max_size);
            let height = rng.random_range(self.min_size..=self.max_size);
            let depth = quantize_depth(rng.random_range(self.min_depth..self.max_depth));
            if rects.iter().any(|r| r.depth == depth) {
                continue;
            }
            rects.push(Rect {
                x: rng.random_range(-(width as f64) / 2.0..self.width as f64 - width as f64 / 2.0),
                y: rng.random_range(-(height as f64) / 2.0..self.height as f64 - height as f64 / 2.0),
                width,
                height,
                depth,
                slope: (sym(&mut rng, self.max_slope), sym(&mut rng, self.max_slope)),
                velocity: (sym(&mut rng, self.max_speed), sym(&mut rng, self.max_speed)),
                accel: (sym(&mut rng, self.max_accel), sym(&mut rng, self.max_accel)),
                color: [0; 3].map(|_| rng.random_range(0.1..0.9)),
            });
        }
        SceneSpec {
            width: self.width,
            height: self.height,
            background_depth: quantize_depth(rng.random_range(self.background_min..=self.background_max)),
            background_slope: rng.random_range(0.0..=self.max_background_slope),
            rects,
            sparsity: self.sparsity,
            flow_noise: self.flow_noise,
            seed: name_seed(self.seed, &format!("render{i}")),
        }
    }

    /// Renders every scene into `dir/train` and `dir/val`, each with a
    /// `manifest.txt`.
    pub fn write(&self, dir: &Path) -> Result<DatasetPaths> {
        self.validate()?;
        let mut manifests = Vec::new();
        for (split, range) in [("train", 0..self.train), ("val", self.train..self.train + self.val)] {
            let sub = dir.join(split);
            std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            let mut paths = Vec::with_capacity(range.len());
            for (j, i) in range.enumerate() {
                let r = render(&self.scene(i))?;
                paths.push(write_sample(&sub, &format!("s{j:04}"), &r.sample)?);
            }
            let manifest = sub.join("manifest.txt");
            SampleIndex::new(&sub, paths).write_manifest(&manifest)?;
            manifests.push(manifest);
        }
        let spec_path = dir.join("spec.txt");
        std::fs::write(&spec_path, self.to_text()).map_err(|e| Error::io(&spec_path, e))?;
        let val = manifests.pop().expect("two splits");
        let train = manifests.pop().expect("two splits");
        Ok(DatasetPaths { train, val })
    }

    pub fn to_text(&self) -> String {
        let kv: [(&str, String); 19] = [
            ("train", self.train.to_string()),
            ("val", self.val.to_string()),
            ("width", self.width.to_string()),
            ("height", self.height.to_string()),
            ("sparsity", format!("{:?}", self.sparsity)),
            ("flow_noise", format!("{:?}", self.flow_noise)),
            ("seed", self.seed.to_string()),
            ("min_rects", self.min_rects.to_string()),
            ("max_rects", self.max_rects.to_string()),
            ("min_size", self.min_size.to_string()),
            ("max_size", self.max_size.to_string()),
            ("max_speed", format!("{:?}", self.max_speed)),
            ("max_accel", format!("{:?}", self.max_accel)),
            ("min_depth", format!("{:?}", self.min_depth)),
            ("max_depth", format!("{:?}", self.max_depth)),
            ("max_slope", format!("{:?}", self.max_slope)),
            ("background_min", format!("{:?}", self.background_min)),
            ("background_max", format!("{:?}", self.background_max)),
            ("max_background_slope", format!("{:?}", self.max_background_slope)),
        ];
        kv.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Reads `key=value` lines; missing keys keep their defaults, unknown
    /// keys are rejected.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut s = Self::default();
        for (k, v) in parse_kv(text)? {
            let e = |err: String| Error::config(k.clone(), err);
            let u = |v: &str| v.parse::<usize>().map_err(|x| e(x.to_string()));
            let f = |v: &str| v.parse::<f64>().map_err(|x| e(x.to_string()));
            match k.as_str() {
                "train" => s.train = u(&v)?,
                "val" => s.val = u(&v)?,
                "width" => s.width = u(&v)?,
                "height" => s.height = u(&v)?,
                "sparsity" => s.sparsity = f(&v)?,
                "flow_noise" => s.flow_noise = f(&v)?,
                "seed" => s.seed = v.parse().map_err(|x: std::num::ParseIntError| e(x.to_string()))?,
                "min_rects" => s.min_rects = u(&v)?,
                "max_rects" => s.max_rects = u(&v)?,
                "min_size" => s.min_size = u(&v)?,
                "max_size" => s.max_size = u(&v)?,
                "max_speed" => s.max_speed = f(&v)?,
                "max_accel" => s.max_accel = f(&v)?,
                "min_depth" => s.min_depth = f(&v)?,
                "max_depth" => s.max_depth = f(&v)?,
                "max_slope" => s.max_slope = f(&v)?,
                "background_min" => s.background_min = f(&v)?,
                "background_max" => s.background_max = f(&v)?,
                "max_background_slope" => s.max_background_slope = f(&v)?,
                _ => return Err(Error::config(k.clone(), "unknown key")),
            }
        }
        s.validate()?;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowwarp::{warp_depth, warp_rgb};

    fn rect(x: f64, y: f64, depth: f64, velocity: (f64, f64)) -> Rect {
        Rect {
            x,
            y,
            width: 8,
            height: 6,
            depth,
            slope: (0.0, 0.0),
            velocity,
            accel: (0.0, 0.0),
            color: [0.8, 0.2, 0.3],
        }
    }

    fn scene(rects: Vec<Rect>) -> SceneSpec {
        SceneSpec {
            width: 24,
            height: 20,
            background_depth: 30.0,
            background_slope: 0.1,
            rects,
            sparsity: 1.0,
            flow_noise: 0.0,
            seed: 3,
        }
    }

    #[test]
    fn static_scene_has_zero_flow() {
        let r = render(&scene(vec![rect(3.0, 4.0, 10.0, (0.0, 0.0))])).unwrap();
        let s = &r.sample;
        assert_eq!(s.rgb_tm1, s.rgb_t);
        assert_eq!(s.rgb_t, s.rgb_tp1);
        assert!(s.flow_t.grid().data().iter().all(|v| *v == [0.0, 0.0]));
        assert!(s.flow_tm1.grid().data().iter().all(|v| *v == [0.0, 0.0]));
    }

    #[test]
    fn backward_flow_points_to_the_previous_position() {
        let r = render(&scene(vec![rect(3.0, 4.0, 10.0, (2.0, 0.0))])).unwrap();
        // The rectangle covers x in 7..15 at t+1.
        assert_eq!(r.labels[2].get(7, 4), 1);
        assert_eq!(r.sample.flow_t.get(7, 4), (-2.0, 0.0));
        assert_eq!(r.sample.flow_tm1.get(14, 9), (-4.0, 0.0));
        assert_eq!(r.sample.flow_t.get(0, 0), (0.0, 0.0));
        // Backward warping of I_t reproduces I_{t+1} on the rectangle.
        let w = warp_rgb(&r.sample.rgb_t, &r.sample.flow_t).unwrap();
        for y in 4..10 {
            for x in 7..15 {
                assert_eq!(w.warped.get(x, y), r.sample.rgb_tp1.get(x, y));
            }
        }
    }

    #[test]
    fn full_sparsity_keeps_dense_truth() {
        let r = render(&scene(vec![rect(3.0, 4.0, 10.0, (1.0, 1.0))])).unwrap();
        assert_eq!(r.sample.depth_t.grid(), r.dense[1].grid());
        assert_eq!(r.sample.gt.grid(), r.dense[2].grid());
    }

    #[test]
    fn nearest_surface_wins() {
        let r = render(&scene(vec![rect(0.0, 0.0, 12.0, (0.0, 0.0)), rect(4.0, 2.0, 8.0, (0.0, 0.0))])).unwrap();
        assert_eq!(r.labels[0].get(5, 3), 2);
        assert_eq!(r.dense[0].get(5, 3), 8.0);
        assert_eq!(r.labels[0].get(1, 1), 1);
        assert_eq!(r.dense[0].get(20, 19), 30.0);
        assert_eq!(r.dense[0].get(20, 0), quantize_depth(30.0 + 0.1 * 19.0));
    }

    #[test]
    fn invalid_scenes_are_rejected() {
        let e = render(&scene(vec![rect(0.0, 0.0, 10.0, (0.0, 0.0)), rect(4.0, 2.0, 10.0, (0.0, 0.0))]))
            .unwrap_err()
            .to_string();
        assert!(e.contains("rects[1]") && e.contains("ambiguous"), "{e}");
        let e = render(&scene(vec![rect(0.0, 0.0, 31.0, (0.0, 0.0))])).unwrap_err().to_string();
        assert!(e.contains("rects[0]"), "{e}");
        let mut s = scene(vec![]);
        s.sparsity = 0.0;
        assert!(render(&s).unwrap_err().to_string().contains("sparsity"));
    }

    #[test]
    fn acceleration_breaks_constant_velocity() {
        let mut r = rect(2.0, 2.0, 10.0, (1.0, 0.0));
        r.accel = (2.0, 0.0);
        assert_eq!([r.position(0).0, r.position(1).0, r.position(2).0], [2, 4, 8]);
    }

    #[test]
    fn warped_truth_matches_next_frame_on_covisible_pixels() {
        let spec = DatasetSpec::default();
        for i in 0..20 {
            let r = render(&spec.scene(i)).unwrap();
            let flow = &r.sample.flow_t;
            let warped = warp_depth(&r.dense[1].to_sparse().unwrap(), flow).unwrap();
            let mut checked = 0;
            for y in 0..64 {
                for x in 0..64 {
                    let (du, dv) = flow.get(x, y);
                    let (sx, sy) = (x as f64 + du, y as f64 + dv);
                    if !warped.mask.get(x, y) || r.labels[1].get(sx as usize, sy as usize) != r.labels[2].get(x, y) {
                        continue;
                    }
                    checked += 1;
                    assert!((warped.warped.get(x, y) - r.dense[2].get(x, y)).abs() < 1e-9);
                }
            }
            assert!(checked > 64 * 64 / 2);
        }
    }

    #[test]
    fn sparse_maps_are_subsets_at_the_requested_rate() {
        let spec = DatasetSpec::default();
        let (mut kept, mut total) = (0usize, 0usize);
        for i in 0..40 {
            let r = render(&spec.scene(i)).unwrap();
            for (s, d) in [(&r.sample.depth_tm1, &r.dense[0]), (&r.sample.depth_t, &r.dense[1])] {
                for (a, b) in s.grid().data().iter().zip(d.grid().data()) {
                    assert!(*a == 0.0 || a == b);
                }
                kept += s.valid_count();
                total += s.grid().len();
            }
        }
        let rate = kept as f64 / total as f64;
        assert!((rate - 0.05).abs() < 0.01, "{rate}");
    }

    #[test]
    fn rendering_is_deterministic() {
        let spec = DatasetSpec::default().scene(7);
        let a = render(&spec).unwrap();
        let b = render(&spec).unwrap();
        assert_eq!(a.sample, b.sample);
        let other = DatasetSpec { seed: 1, ..DatasetSpec::default() }.scene(7);
        assert_ne!(render(&other).unwrap().sample, a.sample);
    }

    #[test]
    fn flow_noise_statistics() {
        let flow = FlowField::uniform(128, 100, 1.5, -2.0);
        assert_eq!(perturb_flow(&flow, 0.0, 9).unwrap(), flow);
        let a = perturb_flow(&flow, 1.0, 9).unwrap();
        let b = perturb_flow(&flow, 1.0, 10).unwrap();
        assert_ne!(a, b);
        let noise: Vec<f64> = a
            .grid()
            .data()
            .iter()
            .flat_map(|&[u, v]| [f64::from(u) - 1.5, f64::from(v) + 2.0])
            .collect();
        let n = noise.len() as f64;
        let mean = noise.iter().sum::<f64>() / n;
        let sd = (noise.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        assert!((sd - 1.0).abs() < 0.05, "{sd}");
        assert!(mean.abs() < 0.05);
        assert!(perturb_flow(&flow, -1.0, 0).is_err());
    }

    #[test]
    fn dataset_spec_text_round_trip() {
        let s = DatasetSpec {
            train: 3,
            sparsity: 0.1 + 0.2,
            ..DatasetSpec::default()
        };
        assert_eq!(DatasetSpec::from_text(&s.to_text()).unwrap(), s);
        assert!(DatasetSpec::from_text("colour=red").unwrap_err().to_string().contains("colour"));
        assert!(DatasetSpec::from_text("sparsity=2").unwrap_err().to_string().contains("sparsity"));
    }

    #[test]
    fn written_dataset_reloads_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec {
            train: 2,
            val: 1,
            ..DatasetSpec::default()
        };
        let paths = spec.write(dir.path()).unwrap();
        let idx = SampleIndex::from_manifest(&paths.train).unwrap();
        assert_eq!(idx.len(), 2);
        let loaded = crate::dataio::load_sample(&idx, 1, None).unwrap();
        assert_eq!(loaded, render(&spec.scene(1)).unwrap().sample);
        let val = SampleIndex::from_manifest(&paths.val).unwrap();
        assert_eq!(
            crate::dataio::load_sample(&val, 0, None).unwrap(),
            render(&spec.scene(2)).unwrap().sample
        );
    }
}
