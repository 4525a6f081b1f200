//! Backward warping with a target-anchored flow: `out(p) = src(p + F(p))`.
//!
//! Depth is sampled nearest-neighbour at `round(p + F(p))` (halves away from
//! zero) and keeps its validity; RGB is sampled bilinearly.

use crate::dataio::{FlowField, Grid, RgbImage, SparseDepth};
use crate::error::{Error, Result};

/// Warped raster plus the pixels whose sample was usable. Masked-out pixels
/// hold zero.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpResult<V> {
    pub warped: V,
    pub mask: Grid<bool>,
}

impl<V> WarpResult<V> {
    pub fn valid_count(&self) -> usize {
        self.mask.data().iter().filter(|&&m| m).count()
    }
}

fn check(sw: usize, sh: usize, flow: &FlowField) -> Result<()> {
    if (sw, sh) != (flow.width(), flow.height()) {
        return Err(Error::shape(format!(
            "source is {sw}x{sh} but flow is {}x{}",
            flow.width(),
            flow.height()
        )));
    }
    Ok(())
}

/// Source pixel for target `(x, y)` under nearest sampling, if inside.
#[inline]
pub fn nearest_source(x: usize, y: usize, flow: &FlowField) -> Option<(usize, usize)> {
    let (du, dv) = flow.get(x, y);
    let sx = (x as f64 + du).round();
    let sy = (y as f64 + dv).round();
    let inside = sx >= 0.0 && sy >= 0.0 && sx < flow.width() as f64 && sy < flow.height() as f64;
    inside.then_some((sx as usize, sy as usize))
}

pub fn warp_depth(src: &SparseDepth, flow: &FlowField) -> Result<WarpResult<SparseDepth>> {
    check(src.width(), src.height(), flow)?;
    let (w, h) = (src.width(), src.height());
    let mut out = Grid::filled(w, h, 0.0);
    let mut mask = Grid::filled(w, h, false);
    for y in 0..h {
        for x in 0..w {
            if let Some((sx, sy)) = nearest_source(x, y, flow) {
                let d = src.get(sx, sy);
                if d > 0.0 {
                    out.set(x, y, d);
                    mask.set(x, y, true);
                }
            }
        }
    }
    Ok(WarpResult {
        warped: SparseDepth::new(out)?,
        mask,
    })
}

/// Bilinear sample of `img` at `(sx, sy)`; `None` outside `[0, W−1] × [0, H−1]`.
pub fn sample_bilinear(img: &Grid<[f64; 3]>, sx: f64, sy: f64) -> Option<[f64; 3]> {
    let (w, h) = img.size();
    if !(sx >= 0.0 && sy >= 0.0 && sx <= (w - 1) as f64 && sy <= (h - 1) as f64) {
        return None;
    }
    let x0 = sx.floor() as usize;
    let y0 = sy.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = sx - x0 as f64;
    let fy = sy - y0 as f64;
    let (a, b, c, d) = (img.get(x0, y0), img.get(x1, y0), img.get(x0, y1), img.get(x1, y1));
    let mut out = [0.0; 3];
    for k in 0..3 {
        let top = a[k] + fx * (b[k] - a[k]);
        let bot = c[k] + fx * (d[k] - c[k]);
        out[k] = top + fy * (bot - top);
    }
    Some(out)
}

pub fn warp_rgb(src: &RgbImage, flow: &FlowField) -> Result<WarpResult<RgbImage>> {
    check(src.width(), src.height(), flow)?;
    let (w, h) = (src.width(), src.height());
    let mut out = Grid::filled(w, h, [0.0; 3]);
    let mut mask = Grid::filled(w, h, false);
    for y in 0..h {
        for x in 0..w {
            let (du, dv) = flow.get(x, y);
            if let Some(v) = sample_bilinear(src.grid(), x as f64 + du, y as f64 + dv) {
                // Interpolating in-range values stays in range up to rounding.
                out.set(x, y, v.map(|c| c.clamp(0.0, 1.0)));
                mask.set(x, y, true);
            }
        }
    }
    Ok(WarpResult {
        warped: RgbImage::new(out)?,
        mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive nearest oracle: candidates within half a pixel on each
    /// axis; a tie goes to the candidate farther from zero.
    fn oracle_nearest(s: f64, n: usize) -> Option<usize> {
        let hits: Vec<usize> = (0..n).filter(|&q| (s - q as f64).abs() <= 0.5).collect();
        match hits[..] {
            [] => None,
            [q] => {
                // A tie with an out-of-range neighbour loses to that neighbour.
                let other = if s > q as f64 { q as f64 + 1.0 } else { q as f64 - 1.0 };
                let tie = (s - q as f64).abs() == 0.5;
                if tie && other.abs() > q as f64 {
                    None
                } else {
                    Some(q)
                }
            }
            [a, b] => Some(a.max(b)),
            _ => unreachable!(),
        }
    }

    /// Tent-kernel form of bilinear interpolation summed over every pixel.
    fn oracle_bilinear(img: &Grid<[f64; 3]>, sx: f64, sy: f64) -> Option<[f64; 3]> {
        let (w, h) = img.size();
        if sx < 0.0 || sy < 0.0 || sx > (w - 1) as f64 || sy > (h - 1) as f64 {
            return None;
        }
        let mut acc = [0.0; 3];
        for y in 0..h {
            for x in 0..w {
                let k = (1.0 - (sx - x as f64).abs()).max(0.0) * (1.0 - (sy - y as f64).abs()).max(0.0);
                for c in 0..3 {
                    acc[c] += k * img.get(x, y)[c];
                }
            }
        }
        Some(acc)
    }

    fn random_flow(w: usize, h: usize, rng: &mut ChaCha8Rng, halves: bool) -> FlowField {
        FlowField::new(Grid::from_fn(w, h, |_, _| {
            if halves {
                [rng.random_range(-8..=8) as f32 * 0.5, rng.random_range(-8..=8) as f32 * 0.5]
            } else {
                [rng.random_range(-4.0f32..4.0), rng.random_range(-4.0f32..4.0)]
            }
        }))
        .unwrap()
    }

    #[test]
    fn zero_flow_is_identity() {
        let d = SparseDepth::new(Grid::from_fn(5, 4, |x, y| if (x * y) % 2 == 0 { 1.0 + x as f64 } else { 0.0 }))
            .unwrap();
        let r = warp_depth(&d, &FlowField::zeros(5, 4)).unwrap();
        assert_eq!(r.warped, d);
        assert_eq!(r.mask, d.validity());
        let img = RgbImage::new(Grid::from_fn(5, 4, |x, y| [x as f64 / 5.0, y as f64 / 4.0, 0.3])).unwrap();
        let r = warp_rgb(&img, &FlowField::zeros(5, 4)).unwrap();
        assert_eq!(r.warped, img);
        assert!(r.mask.data().iter().all(|&m| m));
    }

    #[test]
    fn unit_shift_moves_single_point() {
        let mut g = Grid::filled(10, 10, 0.0);
        g.set(5, 5, 10.0);
        let r = warp_depth(&SparseDepth::new(g).unwrap(), &FlowField::uniform(10, 10, 1.0, 0.0)).unwrap();
        assert_eq!(r.valid_count(), 1);
        assert_eq!(r.warped.get(4, 5), 10.0);
        assert!(r.mask.get(4, 5));
    }

    #[test]
    fn flow_out_of_grid_invalidates_everything() {
        let d = SparseDepth::new(Grid::filled(6, 6, 3.0)).unwrap();
        let r = warp_depth(&d, &FlowField::uniform(6, 6, 100.0, -3.0)).unwrap();
        assert_eq!(r.valid_count(), 0);
        assert!(r.warped.grid().data().iter().all(|&v| v == 0.0));
        let img = RgbImage::new(Grid::filled(6, 6, [0.2; 3])).unwrap();
        let r = warp_rgb(&img, &FlowField::uniform(6, 6, -7.0, 0.0)).unwrap();
        assert_eq!(r.valid_count(), 0);
    }

    #[test]
    fn half_pixel_rounding_is_away_from_zero() {
        let d = SparseDepth::new(Grid::from_fn(4, 1, |x, _| 1.0 + x as f64)).unwrap();
        // 1 + 0.5 = 1.5 rounds to 2; 3 + 0.5 = 3.5 rounds to 4 (outside).
        let r = warp_depth(&d, &FlowField::uniform(4, 1, 0.5, 0.0)).unwrap();
        assert_eq!(r.warped.get(1, 0), 3.0);
        assert!(!r.mask.get(3, 0));
        // 0 - 0.5 = -0.5 rounds to -1 (outside); 2 - 0.5 = 1.5 rounds to 2.
        let r = warp_depth(&d, &FlowField::uniform(4, 1, -0.5, 0.0)).unwrap();
        assert!(!r.mask.get(0, 0));
        assert_eq!(r.warped.get(2, 0), 3.0);
    }

    #[test]
    fn half_shift_on_ramp() {
        let slope = 0.1;
        let img = RgbImage::new(Grid::from_fn(8, 3, |x, _| [slope * x as f64, 0.5, 0.0])).unwrap();
        let r = warp_rgb(&img, &FlowField::uniform(8, 3, 0.5, 0.0)).unwrap();
        for x in 0..7 {
            assert!((r.warped.get(x, 1)[0] - slope * (x as f64 + 0.5)).abs() < 1e-12);
        }
        assert!(!r.mask.get(7, 1));
    }

    #[test]
    fn constant_image_stays_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = RgbImage::new(Grid::filled(9, 7, [0.3, 0.6, 0.9])).unwrap();
        let r = warp_rgb(&img, &random_flow(9, 7, &mut rng, false)).unwrap();
        for (v, &m) in r.warped.grid().data().iter().zip(r.mask.data()) {
            if m {
                assert!((v[0] - 0.3).abs() < 1e-12 && (v[1] - 0.6).abs() < 1e-12 && (v[2] - 0.9).abs() < 1e-12);
            } else {
                assert_eq!(*v, [0.0; 3]);
            }
        }
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let d = SparseDepth::empty(4, 4);
        assert!(warp_depth(&d, &FlowField::zeros(4, 5)).is_err());
    }

    proptest! {
        #[test]
        fn nearest_matches_exhaustive_oracle(w in 1usize..33, h in 1usize..33, seed in any::<u64>(), halves in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = SparseDepth::new(Grid::from_fn(w, h, |_, _| {
                if rng.random_bool(0.4) { rng.random_range(1.0..80.0) } else { 0.0 }
            })).unwrap();
            let flow = random_flow(w, h, &mut rng, halves);
            let r = warp_depth(&d, &flow).unwrap();
            for y in 0..h {
                for x in 0..w {
                    let (du, dv) = flow.get(x, y);
                    let q = oracle_nearest(x as f64 + du, w).zip(oracle_nearest(y as f64 + dv, h));
                    let want = q.map_or(0.0, |(qx, qy)| d.get(qx, qy));
                    prop_assert_eq!(r.warped.get(x, y), want);
                    prop_assert_eq!(r.mask.get(x, y), want > 0.0);
                    // Mask implies an in-bounds, valid source.
                    if r.mask.get(x, y) {
                        prop_assert!(q.is_some());
                    }
                }
            }
        }

        #[test]
        fn bilinear_matches_tent_oracle(w in 1usize..33, h in 1usize..33, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = RgbImage::new(Grid::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()])).unwrap();
            let flow = random_flow(w, h, &mut rng, false);
            let r = warp_rgb(&img, &flow).unwrap();
            for y in 0..h {
                for x in 0..w {
                    let (du, dv) = flow.get(x, y);
                    match oracle_bilinear(img.grid(), x as f64 + du, y as f64 + dv) {
                        None => {
                            prop_assert!(!r.mask.get(x, y));
                            prop_assert_eq!(r.warped.get(x, y), [0.0; 3]);
                        }
                        Some(v) => {
                            prop_assert!(r.mask.get(x, y));
                            for c in 0..3 {
                                prop_assert!((r.warped.get(x, y)[c] - v[c]).abs() < 1e-12);
                            }
                        }
                    }
                }
            }
        }
    }
}
