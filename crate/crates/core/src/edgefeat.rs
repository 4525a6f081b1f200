//! Canny edge detection on the target RGB frame.
//!
//! Gray conversion, Gaussian blur, Sobel gradients, non-maximum suppression
//! and hysteresis. Gradient magnitudes are scaled so that a unit step between
//! neighbouring pixels of an unblurred image has magnitude 1 along its axis.
//!
//! Every stage is written so that rotating the input by 180° rotates the
//! output exactly: symmetric taps are summed in pairs and ties in
//! suppression are broken along the gradient direction.

use crate::dataio::{Grid, RgbImage};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CannyParams {
    pub sigma: f64,
    pub low: f64,
    pub high: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self {
            sigma: 1.4,
            low: 0.03,
            high: 0.06,
        }
    }
}

impl CannyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(format!("canny sigma must be positive, got {}", self.sigma)));
        }
        if !(self.low > 0.0) || !(self.low < self.high) {
            return Err(Error::invalid(format!(
                "canny thresholds need 0 < low < high, got low={} high={}",
                self.low, self.high
            )));
        }
        Ok(())
    }
}

/// Binary edge indicator (0 or 1 per pixel).
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeMap(Grid<u8>);

impl EdgeMap {
    pub fn grid(&self) -> &Grid<u8> {
        &self.0
    }

    pub fn count(&self) -> usize {
        self.0.data().iter().filter(|&&v| v == 1).count()
    }

    pub fn to_plane(&self) -> Vec<f64> {
        self.0.data().iter().map(|&v| v as f64).collect()
    }
}

pub fn luma(img: &RgbImage) -> Grid<f64> {
    img.grid().map(|[r, g, b]| 0.299 * r + 0.587 * g + 0.114 * b)
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil().max(1.0) as usize;
    let raw: Vec<f64> = (0..=r).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total = raw[0] + 2.0 * raw[1..].iter().sum::<f64>();
    raw.iter().map(|v| v / total).collect()
}

#[inline]
fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Separable blur with edge-replicating borders; `k[0]` is the centre tap.
fn blur(src: &Grid<f64>, k: &[f64]) -> Grid<f64> {
    let (w, h) = src.size();
    let pass = |g: &Grid<f64>, horizontal: bool| {
        Grid::from_fn(w, h, |x, y| {
            let at = |o: isize| {
                if horizontal {
                    g.get(clamp_index(x as isize + o, w), y)
                } else {
                    g.get(x, clamp_index(y as isize + o, h))
                }
            };
            let mut acc = k[0] * at(0);
            for (j, &kj) in k.iter().enumerate().skip(1) {
                acc += kj * (at(-(j as isize)) + at(j as isize));
            }
            acc
        })
    };
    pass(&pass(src, true), false)
}

/// Sobel gradients, `(gx, gy)` per pixel, divided by 4.
pub fn sobel(src: &Grid<f64>) -> Grid<(f64, f64)> {
    let (w, h) = src.size();
    let p = |x: isize, y: isize| src.get(clamp_index(x, w), clamp_index(y, h));
    Grid::from_fn(w, h, |x, y| {
        let (x, y) = (x as isize, y as isize);
        let dx = |yy: isize| p(x + 1, yy) - p(x - 1, yy);
        let dy = |xx: isize| p(xx, y + 1) - p(xx, y - 1);
        let gx = ((dx(y - 1) + dx(y + 1)) + 2.0 * dx(y)) / 4.0;
        let gy = ((dy(x - 1) + dy(x + 1)) + 2.0 * dy(x)) / 4.0;
        (gx, gy)
    })
}

/// tan(22.5°): sector boundary between axis-aligned and diagonal directions.
const TAN_22_5: f64 = 0.414_213_562_373_095_03;

/// Unit step along the gradient direction, quantised to 8 neighbours.
fn direction(gx: f64, gy: f64) -> (isize, isize) {
    let (ax, ay) = (gx.abs(), gy.abs());
    let s = |v: f64| if v > 0.0 { 1 } else if v < 0.0 { -1 } else { 0 };
    if ay <= TAN_22_5 * ax {
        (s(gx), 0)
    } else if ax <= TAN_22_5 * ay {
        (0, s(gy))
    } else {
        (s(gx), s(gy))
    }
}

/// Gradient magnitude after non-maximum suppression (suppressed pixels are 0).
pub fn suppress(grad: &Grid<(f64, f64)>) -> Grid<f64> {
    let (w, h) = grad.size();
    let mag = grad.map(|(gx, gy)| gx.hypot(gy));
    let at = |x: isize, y: isize| {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            mag.get(x as usize, y as usize)
        }
    };
    Grid::from_fn(w, h, |x, y| {
        let m = mag.get(x, y);
        if m == 0.0 {
            return 0.0;
        }
        let (gx, gy) = grad.get(x, y);
        let (dx, dy) = direction(gx, gy);
        let (x, y) = (x as isize, y as isize);
        if m > at(x + dx, y + dy) && m >= at(x - dx, y - dy) {
            m
        } else {
            0.0
        }
    })
}

/// Keeps pixels with magnitude ≥ `low` that are 8-connected to one with
/// magnitude ≥ `high`.
pub fn hysteresis(nms: &Grid<f64>, low: f64, high: f64) -> Grid<u8> {
    let (w, h) = nms.size();
    let mut out = Grid::filled(w, h, 0u8);
    let mut stack = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if nms.get(x, y) >= high && out.get(x, y) == 0 {
                out.set(x, y, 1);
                stack.push((x, y));
                while let Some((cx, cy)) = stack.pop() {
                    for ny in cy.saturating_sub(1)..=(cy + 1).min(h - 1) {
                        for nx in cx.saturating_sub(1)..=(cx + 1).min(w - 1) {
                            if out.get(nx, ny) == 0 && nms.get(nx, ny) >= low {
                                out.set(nx, ny, 1);
                                stack.push((nx, ny));
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn canny_gray(gray: &Grid<f64>, params: &CannyParams) -> Result<EdgeMap> {
    params.validate()?;
    if gray.is_empty() {
        return Ok(EdgeMap(Grid::filled(gray.width(), gray.height(), 0)));
    }
    let blurred = blur(gray, &gaussian_kernel(params.sigma));
    let nms = suppress(&sobel(&blurred));
    Ok(EdgeMap(hysteresis(&nms, params.low, params.high)))
}

pub fn canny(img: &RgbImage, params: &CannyParams) -> Result<EdgeMap> {
    canny_gray(&luma(img), params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn rgb(g: Grid<f64>) -> RgbImage {
        RgbImage::new(g.map(|v| [v; 3])).unwrap()
    }

    #[test]
    fn kernel_is_normalised() {
        let k = gaussian_kernel(1.4);
        assert_eq!(k.len(), 6);
        let total = k[0] + 2.0 * k[1..].iter().sum::<f64>();
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_image_has_no_edges() {
        let e = canny(&rgb(Grid::filled(12, 9, 0.7)), &CannyParams::default()).unwrap();
        assert_eq!(e.count(), 0);
    }

    #[test]
    fn step_edge_gives_one_column() {
        let g = Grid::from_fn(16, 12, |x, _| if x < 8 { 0.0 } else { 1.0 });
        let e = canny(&rgb(g), &CannyParams::default()).unwrap();
        // The blurred profile is odd-symmetric about x = 7.5, so the gradient
        // peaks at column 7 or 8 (equal up to rounding).
        let first: Vec<usize> = (0..16).filter(|&x| e.grid().get(x, 0) == 1).collect();
        assert!(first == vec![7] || first == vec![8], "{first:?}");
        for y in 0..12 {
            let cols: Vec<usize> = (0..16).filter(|&x| e.grid().get(x, y) == 1).collect();
            assert_eq!(cols, first, "row {y}");
        }
    }

    #[test]
    fn weak_edge_is_dropped() {
        let g = Grid::from_fn(16, 12, |x, _| if x < 8 { 0.4 } else { 0.45 });
        assert_eq!(canny(&rgb(g), &CannyParams::default()).unwrap().count(), 0);
    }

    #[test]
    fn degenerate_thresholds_are_rejected() {
        let img = rgb(Grid::filled(4, 4, 0.0));
        let p = |low, high, sigma| CannyParams { sigma, low, high };
        assert!(canny(&img, &p(0.2, 0.2, 1.0)).is_err());
        assert!(canny(&img, &p(0.3, 0.2, 1.0)).is_err());
        assert!(canny(&img, &p(0.1, 0.2, 0.0)).is_err());
        assert!(canny(&img, &p(0.0, 0.2, 1.0)).is_err());
    }

    #[test]
    fn diagonal_edge_is_thin() {
        let g = Grid::from_fn(20, 20, |x, y| if x + y < 20 { 0.0 } else { 1.0 });
        let e = canny(&rgb(g), &CannyParams::default()).unwrap();
        assert!(e.count() > 0);
        // Thin along the gradient: no two edge pixels adjacent along (1, 1).
        for y in 0..19 {
            for x in 0..19 {
                assert!(!(e.grid().get(x, y) == 1 && e.grid().get(x + 1, y + 1) == 1));
            }
        }
    }

    fn blocks(seed: u64, w: usize, h: usize) -> Grid<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let cells: Vec<f64> = (0..16).map(|_| rng.random::<f64>()).collect();
        let noise: Vec<f64> = (0..w * h).map(|_| rng.random_range(-0.02..0.02)).collect();
        Grid::from_fn(w, h, |x, y| (cells[(y * 4 / h) * 4 + x * 4 / w] + noise[y * w + x]).clamp(0.0, 1.0))
    }

    proptest! {
        #[test]
        fn rotation_by_180_commutes(seed in any::<u64>(), w in 4usize..24, h in 4usize..24) {
            let g = blocks(seed, w, h);
            let p = CannyParams::default();
            let a = canny_gray(&g, &p).unwrap();
            let b = canny_gray(&g.rotate_180(), &p).unwrap();
            prop_assert_eq!(a.grid().rotate_180(), b.grid().clone());
        }

        #[test]
        fn raising_high_never_adds_edges(seed in any::<u64>(), high in 0.11f64..0.6, extra in 0.0f64..0.3) {
            let g = blocks(seed, 20, 16);
            let lo = CannyParams { high, ..CannyParams::default() };
            let hi = CannyParams { high: high + extra, ..lo };
            let a = canny_gray(&g, &lo).unwrap();
            let b = canny_gray(&g, &hi).unwrap();
            for (x, y) in a.grid().data().iter().zip(b.grid().data()) {
                prop_assert!(y <= x);
            }
        }
    }
}
