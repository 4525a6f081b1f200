//! Per-pixel fusion of the two warped depth candidates.
//!
//! Weights come from the cosine similarity between each warped RGB frame and
//! the target frame, turned into a two-way softmax over `(t−1, t)`.

use crate::dataio::{DenseDepth, Grid, RgbImage, SparseDepth};
use crate::error::{Error, Result};
use crate::flowwarp::WarpResult;

/// Similarity assigned where a warped image has no sample.
pub const MASKED_SIMILARITY: f64 = -1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct WeightMap {
    /// Weight of the `t−1` branch.
    pub w_tm1: Grid<f64>,
    /// Weight of the `t` branch.
    pub w_t: Grid<f64>,
}

impl WeightMap {
    pub fn mean(&self) -> (f64, f64) {
        let n = self.w_t.len().max(1) as f64;
        (
            self.w_tm1.data().iter().sum::<f64>() / n,
            self.w_t.data().iter().sum::<f64>() / n,
        )
    }
}

/// Cosine of the angle between two RGB vectors; 0 when either is zero.
pub fn cosine(a: [f64; 3], b: [f64; 3]) -> f64 {
    let na = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    let nb = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let (ua, ub) = (a.map(|v| v / na), b.map(|v| v / nb));
    (ua[0] * ub[0] + ua[1] * ub[1] + ua[2] * ub[2]).clamp(-1.0, 1.0)
}

/// `(e^a, e^b) / (e^a + e^b)`, evaluated as a logistic of the difference.
pub fn softmax2(a: f64, b: f64) -> (f64, f64) {
    let wa = 1.0 / (1.0 + (b - a).exp());
    (wa, 1.0 - wa)
}

pub fn cosine_weights(
    warped_tm1: &WarpResult<RgbImage>,
    warped_t: &WarpResult<RgbImage>,
    target: &RgbImage,
) -> Result<WeightMap> {
    let (w, h) = (target.width(), target.height());
    for (name, r) in [("I_{t-1->t+1}", warped_tm1), ("I_{t->t+1}", warped_t)] {
        r.warped.grid().check_same_size(target.grid(), name)?;
        r.mask.check_same_size(target.grid(), name)?;
    }
    let mut w_tm1 = Grid::filled(w, h, 0.0);
    let mut w_t = Grid::filled(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            let tgt = target.get(x, y);
            let sim = |r: &WarpResult<RgbImage>| {
                if r.mask.get(x, y) {
                    cosine(r.warped.get(x, y), tgt)
                } else {
                    MASKED_SIMILARITY
                }
            };
            let (a, b) = softmax2(sim(warped_tm1), sim(warped_t));
            w_tm1.set(x, y, a);
            w_t.set(x, y, b);
        }
    }
    Ok(WeightMap { w_tm1, w_t })
}

/// Fuses the candidates: convex combination where both are valid, the lone
/// valid depth where only one is, invalid elsewhere.
pub fn aggregate_depth(
    weights: &WeightMap,
    d_tm1: &WarpResult<SparseDepth>,
    d_t: &WarpResult<SparseDepth>,
) -> Result<SparseDepth> {
    let g1 = d_tm1.warped.grid();
    let g0 = d_t.warped.grid();
    g1.check_same_size(g0, "warped depths")?;
    weights.w_tm1.check_same_size(g0, "weights vs depth")?;
    weights.w_t.check_same_size(g0, "weights vs depth")?;
    let (w, h) = g0.size();
    let mut out = Grid::filled(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            let (a, b) = (weights.w_tm1.get(x, y), weights.w_t.get(x, y));
            if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) {
                return Err(Error::invalid(format!(
                    "weights ({a}, {b}) at pixel ({x}, {y}) are outside [0, 1]"
                )));
            }
            let (v1, v0) = (g1.get(x, y), g0.get(x, y));
            let d = match (v1 > 0.0, v0 > 0.0) {
                (true, true) => {
                    let s = a + b;
                    if s > 0.0 {
                        (a * v1 + b * v0) / s
                    } else {
                        0.5 * (v1 + v0)
                    }
                }
                (true, false) => v1,
                (false, true) => v0,
                (false, false) => 0.0,
            };
            out.set(x, y, d);
        }
    }
    SparseDepth::new(out)
}

/// Fills every invalid pixel with the value of the closest valid pixel
/// (Euclidean; ties go to the first in row-major order).
pub fn nearest_fill(depth: &SparseDepth) -> Result<DenseDepth> {
    let (w, h) = (depth.width(), depth.height());
    let valid: Vec<(usize, usize, f64)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter_map(|(x, y)| depth.is_valid(x, y).then(|| (x, y, depth.get(x, y))))
        .collect();
    if valid.is_empty() {
        return Err(Error::invalid("nearest fill of a map with no valid pixels"));
    }
    let mut out = Grid::filled(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            if depth.is_valid(x, y) {
                out.set(x, y, depth.get(x, y));
                continue;
            }
            let mut best = (usize::MAX, 0.0);
            for &(vx, vy, d) in &valid {
                let dist = vx.abs_diff(x).pow(2) + vy.abs_diff(y).pow(2);
                if dist < best.0 {
                    best = (dist, d);
                }
            }
            out.set(x, y, best.1);
        }
    }
    DenseDepth::new(out)
}
