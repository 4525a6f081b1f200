//! Raster types, file codecs and sample loading.
//!
//! All rasters are row-major [`Grid`]s indexed `(x, y)` = (column, row).
//! Depth uses metres with `0.0` meaning "no measurement".

mod calib;
mod codec;
mod manifest;

use crate::error::{Error, Result};

pub use calib::{parse_calibration, read_calibration, write_calibration};
pub use codec::{
    decode_depth_png, decode_flow, decode_rgb_png, encode_depth_png, encode_flow, encode_rgb_png, read_depth_png,
    read_flow, read_rgb_png, write_depth_png, write_flow, write_rgb_png, DEPTH_SCALE, MAX_DEPTH_RAW,
};
pub use manifest::{load_sample, write_sample, Sample, SampleIndex, SamplePaths};

/// Crop size used for KITTI-sized rasters.
pub const KITTI_CROP: (usize, usize) = (1216, 256);

/// Upper bound (exclusive) for a valid sparse depth, in metres.
pub const DEPTH_CEILING: f64 = 655.35;

#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(format!(
                "{width}x{height} grid needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Window `[x0, x0+w) × [y0, y0+h)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::shape(format!(
                "crop window {w}x{h} at ({x0}, {y0}) exceeds {}x{} grid",
                self.width, self.height
            )));
        }
        Ok(Self::from_fn(w, h, |x, y| self.get(x0 + x, y0 + y)))
    }

    /// Mirrors rows (top becomes bottom).
    pub fn flip_vertical(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| self.get(x, self.height - 1 - y))
    }

    pub fn rotate_180(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| {
            self.get(self.width - 1 - x, self.height - 1 - y)
        })
    }

    pub fn check_same_size<U>(&self, other: &Grid<U>, what: &str) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::shape(format!(
                "{what}: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

/// Offset `(x0, y0)` of a `target_w × target_h` window that keeps the bottom
/// rows of a `w × h` raster, centred horizontally.
pub fn crop_offset(w: usize, h: usize, target_w: usize, target_h: usize) -> Result<(usize, usize)> {
    if w < target_w || h < target_h {
        return Err(Error::shape(format!(
            "cannot crop {w}x{h} raster to {target_w}x{target_h}"
        )));
    }
    Ok(((w - target_w) / 2, h - target_h))
}

/// Drops the top rows (and equal margins left and right) down to the target size.
pub fn crop_top<T: Copy>(grid: &Grid<T>, target_w: usize, target_h: usize) -> Result<Grid<T>> {
    let (x0, y0) = crop_offset(grid.width, grid.height, target_w, target_h)?;
    grid.crop(x0, y0, target_w, target_h)
}

/// Depth with missing measurements (`0.0`).
#[derive(Clone, Debug, PartialEq)]
pub struct SparseDepth(Grid<f64>);

impl SparseDepth {
    pub fn new(grid: Grid<f64>) -> Result<Self> {
        if let Some(i) = grid.data.iter().position(|&d| !(d.is_finite() && (0.0..DEPTH_CEILING).contains(&d))) {
            return Err(Error::invalid(format!(
                "sparse depth {} at pixel ({}, {}) is outside [0, {DEPTH_CEILING})",
                grid.data[i],
                i % grid.width,
                i / grid.width
            )));
        }
        Ok(Self(grid))
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self(Grid::filled(width, height, 0.0))
    }

    pub fn grid(&self) -> &Grid<f64> {
        &self.0
    }

    pub fn into_grid(self) -> Grid<f64> {
        self.0
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.0.get(x, y)
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.0.get(x, y) > 0.0
    }

    pub fn valid_count(&self) -> usize {
        self.0.data.iter().filter(|&&d| d > 0.0).count()
    }

    pub fn validity(&self) -> Grid<bool> {
        self.0.map(|d| d > 0.0)
    }
}

/// Depth defined (strictly positive) at every pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseDepth(Grid<f64>);

impl DenseDepth {
    pub fn new(grid: Grid<f64>) -> Result<Self> {
        if let Some(i) = grid.data.iter().position(|&d| !(d.is_finite() && d > 0.0)) {
            return Err(Error::invalid(format!(
                "dense depth {} at pixel ({}, {}) is not strictly positive",
                grid.data[i],
                i % grid.width,
                i / grid.width
            )));
        }
        Ok(Self(grid))
    }

    pub fn grid(&self) -> &Grid<f64> {
        &self.0
    }

    pub fn into_grid(self) -> Grid<f64> {
        self.0
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.0.get(x, y)
    }

    /// Same values as a sparse map (every pixel valid).
    pub fn to_sparse(&self) -> Result<SparseDepth> {
        SparseDepth::new(self.0.clone())
    }
}

/// Anything that carries a depth grid with the `0 = invalid` convention.
pub trait DepthGrid {
    fn depth_grid(&self) -> &Grid<f64>;
}

impl DepthGrid for SparseDepth {
    fn depth_grid(&self) -> &Grid<f64> {
        &self.0
    }
}

impl DepthGrid for DenseDepth {
    fn depth_grid(&self) -> &Grid<f64> {
        &self.0
    }
}

/// Three-channel image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage(Grid<[f64; 3]>);

impl RgbImage {
    pub fn new(grid: Grid<[f64; 3]>) -> Result<Self> {
        if let Some(i) = grid
            .data
            .iter()
            .position(|px| px.iter().any(|&c| !(0.0..=1.0).contains(&c)))
        {
            return Err(Error::invalid(format!(
                "RGB value {:?} at pixel ({}, {}) is outside [0, 1]",
                grid.data[i],
                i % grid.width,
                i / grid.width
            )));
        }
        Ok(Self(grid))
    }

    pub fn grid(&self) -> &Grid<[f64; 3]> {
        &self.0
    }

    pub fn into_grid(self) -> Grid<[f64; 3]> {
        self.0
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.0.get(x, y)
    }

    /// Channel-planar copy, `3 × H × W`.
    pub fn to_planar(&self) -> Vec<f64> {
        let n = self.0.len();
        let mut out = vec![0.0; 3 * n];
        for (i, px) in self.0.data.iter().enumerate() {
            for c in 0..3 {
                out[c * n + i] = px[c];
            }
        }
        out
    }
}

/// Backward optical flow: the value at target pixel `p` points to `p + F(p)`
/// in the source frame. Stored as `(du, dv)` in single precision, the
/// precision of the file format.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField(Grid<[f32; 2]>);

impl FlowField {
    pub fn new(grid: Grid<[f32; 2]>) -> Result<Self> {
        if let Some(i) = grid.data.iter().position(|v| !(v[0].is_finite() && v[1].is_finite())) {
            return Err(Error::NonFinite(format!(
                "flow at pixel ({}, {})",
                i % grid.width,
                i / grid.width
            )));
        }
        Ok(Self(grid))
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self(Grid::filled(width, height, [0.0, 0.0]))
    }

    pub fn uniform(width: usize, height: usize, du: f32, dv: f32) -> Self {
        Self(Grid::filled(width, height, [du, dv]))
    }

    pub fn grid(&self) -> &Grid<[f32; 2]> {
        &self.0
    }

    pub fn into_grid(self) -> Grid<[f32; 2]> {
        self.0
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn get(&self, x: usize, y: usize) -> (f64, f64) {
        let [u, v] = self.0.get(x, y);
        (u as f64, v as f64)
    }

    pub fn mean_magnitude(&self) -> f64 {
        if self.0.is_empty() {
            return 0.0;
        }
        let s: f64 = self.0.data.iter().map(|v| (v[0] as f64).hypot(v[1] as f64)).sum();
        s / self.0.len() as f64
    }

    /// Flow of the vertically mirrored scene (rows flipped, `dv` negated).
    pub fn flip_vertical(&self) -> Self {
        Self(self.0.flip_vertical().map(|[u, v]| [u, -v]))
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fu: f64,
    pub fv: f64,
    pub cu: f64,
    pub cv: f64,
}

impl CameraIntrinsics {
    pub fn new(fu: f64, fv: f64, cu: f64, cv: f64) -> Result<Self> {
        let k = Self { fu, fv, cu, cv };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fu > 0.0 && self.fv > 0.0 && self.fu.is_finite() && self.fv.is_finite()) {
            return Err(Error::invalid(format!(
                "focal lengths must be positive, got fu={} fv={}",
                self.fu, self.fv
            )));
        }
        if !(self.cu.is_finite() && self.cv.is_finite()) {
            return Err(Error::invalid("principal point must be finite"));
        }
        Ok(())
    }

    /// Intrinsics of the window whose top-left corner was at `(x0, y0)`.
    pub fn cropped(&self, x0: usize, y0: usize) -> Self {
        Self {
            cu: self.cu - x0 as f64,
            cv: self.cv - y0 as f64,
            ..*self
        }
    }

    /// Intrinsics after mirroring the rows of a raster `height` pixels tall.
    pub fn flipped_vertical(&self, height: usize) -> Self {
        Self {
            cv: (height - 1) as f64 - self.cv,
            ..*self
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kitti_crop_keeps_bottom_rows() {
        // Marker pixels in the source tell where each output pixel came from.
        let src = Grid::from_fn(1242, 375, |x, y| (x, y));
        let out = crop_top(&src, 1216, 256).unwrap();
        assert_eq!(out.size(), (1216, 256));
        assert_eq!(out.get(0, 0), (13, 119));
        assert_eq!(out.get(1215, 255), (1228, 374));
        assert_eq!(crop_offset(1242, 375, 1216, 256).unwrap(), (13, 119));
    }

    #[test]
    fn crop_identity_and_too_small() {
        let g = Grid::from_fn(1216, 256, |x, y| x * 7 + y);
        assert_eq!(crop_top(&g, 1216, 256).unwrap(), g);
        let small = Grid::filled(100, 100, 0u8);
        assert!(crop_top(&small, 1216, 256).is_err());
    }

    #[test]
    fn invariants_are_enforced() {
        assert!(SparseDepth::new(Grid::filled(2, 2, 655.35)).is_err());
        assert!(SparseDepth::new(Grid::filled(2, 2, -1.0)).is_err());
        assert!(SparseDepth::new(Grid::filled(2, 2, 655.0)).is_ok());
        assert!(DenseDepth::new(Grid::filled(2, 2, 0.0)).is_err());
        assert!(RgbImage::new(Grid::filled(1, 1, [0.0, 1.0, 1.01])).is_err());
        assert!(FlowField::new(Grid::filled(1, 1, [f32::NAN, 0.0])).is_err());
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn crop_shifts_principal_point() {
        let k = CameraIntrinsics::new(721.5, 721.5, 609.6, 172.9).unwrap();
        let c = k.cropped(13, 119);
        assert_eq!(c.cu, 609.6 - 13.0);
        assert_eq!(c.cv, 172.9 - 119.0);
    }

    #[test]
    fn flow_flip_negates_dv() {
        let f = FlowField::new(Grid::from_fn(2, 3, |x, y| [x as f32, y as f32 + 0.5])).unwrap();
        let g = f.flip_vertical();
        assert_eq!(g.get(1, 0), (1.0, -2.5));
        assert_eq!(g.flip_vertical(), f);
    }
}
