//! Sample manifests and loading of one input tuple.
//!
//! A manifest line holds nine whitespace-separated paths, relative to the
//! manifest's directory unless absolute:
//!
//! ```text
//! I_{t-1} I_t I_{t+1} d_{t-1} d_t F_{t+1->t} F_{t+1->t-1} gt_{t+1} calib
//! ```

use std::path::{Path, PathBuf};

use super::{
    crop_offset, read_calibration, read_depth_png, read_flow, read_rgb_png, write_calibration, write_depth_png,
    write_flow, write_rgb_png, CameraIntrinsics, FlowField, RgbImage, SparseDepth,
};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SamplePaths {
    pub rgb_tm1: PathBuf,
    pub rgb_t: PathBuf,
    pub rgb_tp1: PathBuf,
    pub depth_tm1: PathBuf,
    pub depth_t: PathBuf,
    /// `F_{t+1→t}`.
    pub flow_t: PathBuf,
    /// `F_{t+1→t−1}`.
    pub flow_tm1: PathBuf,
    pub gt: PathBuf,
    pub calib: PathBuf,
}

impl SamplePaths {
    fn fields(&self) -> [&PathBuf; 9] {
        [
            &self.rgb_tm1,
            &self.rgb_t,
            &self.rgb_tp1,
            &self.depth_tm1,
            &self.depth_t,
            &self.flow_t,
            &self.flow_tm1,
            &self.gt,
            &self.calib,
        ]
    }

    fn parse(line: &str) -> Option<Self> {
        let p: Vec<PathBuf> = line.split_whitespace().map(PathBuf::from).collect();
        let [a, b, c, d, e, f, g, h, i] = <[PathBuf; 9]>::try_from(p).ok()?;
        Some(Self {
            rgb_tm1: a,
            rgb_t: b,
            rgb_tp1: c,
            depth_tm1: d,
            depth_t: e,
            flow_t: f,
            flow_tm1: g,
            gt: h,
            calib: i,
        })
    }

    fn line(&self) -> String {
        self.fields().map(|p| p.display().to_string()).join(" ")
    }
}

/// Ordered list of samples sharing a root directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleIndex {
    root: PathBuf,
    samples: Vec<SamplePaths>,
}

impl SampleIndex {
    pub fn new(root: impl Into<PathBuf>, samples: Vec<SamplePaths>) -> Self {
        Self {
            root: root.into(),
            samples,
        }
    }

    pub fn from_manifest(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut samples = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let s = SamplePaths::parse(line).ok_or_else(|| {
                Error::format(
                    "manifest",
                    format!(
                        "{}:{}: expected 9 paths, found {}",
                        path.display(),
                        no + 1,
                        line.split_whitespace().count()
                    ),
                )
            })?;
            samples.push(s);
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { root, samples })
    }

    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        let text: String = self.samples.iter().map(|s| s.line() + "\n").collect();
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn paths(&self, i: usize) -> Option<&SamplePaths> {
        self.samples.get(i)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Checks that every referenced file exists.
    pub fn check_files(&self) -> Result<()> {
        for (i, s) in self.samples.iter().enumerate() {
            for p in s.fields() {
                let full = self.resolve(p);
                if !full.is_file() {
                    return Err(Error::invalid(format!("sample {i}: missing file {}", full.display())));
                }
            }
        }
        Ok(())
    }

    /// Drops samples whose `F_{t+1→t}` has mean magnitude below
    /// `min_mean_flow` pixels; returns how many were removed.
    pub fn retain_min_motion(&mut self, min_mean_flow: f64) -> Result<usize> {
        if min_mean_flow <= 0.0 {
            return Ok(0);
        }
        let mut keep = Vec::with_capacity(self.samples.len());
        for s in &self.samples {
            let f = read_flow(&self.resolve(&s.flow_t))?;
            keep.push(f.mean_magnitude() >= min_mean_flow);
        }
        let before = self.samples.len();
        let mut it = keep.into_iter();
        self.samples.retain(|_| it.next().unwrap_or(false));
        Ok(before - self.samples.len())
    }
}

/// One input tuple plus ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub rgb_tm1: RgbImage,
    pub rgb_t: RgbImage,
    pub rgb_tp1: RgbImage,
    pub depth_tm1: SparseDepth,
    pub depth_t: SparseDepth,
    /// `F_{t+1→t}`.
    pub flow_t: FlowField,
    /// `F_{t+1→t−1}`.
    pub flow_tm1: FlowField,
    pub gt: SparseDepth,
    pub intrinsics: CameraIntrinsics,
}

impl Sample {
    pub fn size(&self) -> (usize, usize) {
        (self.gt.width(), self.gt.height())
    }

    /// All rasters must share one resolution.
    pub fn check_sizes(&self) -> Result<()> {
        let want = self.size();
        let sizes = [
            ("I_{t-1}", (self.rgb_tm1.width(), self.rgb_tm1.height())),
            ("I_t", (self.rgb_t.width(), self.rgb_t.height())),
            ("I_{t+1}", (self.rgb_tp1.width(), self.rgb_tp1.height())),
            ("d_{t-1}", (self.depth_tm1.width(), self.depth_tm1.height())),
            ("d_t", (self.depth_t.width(), self.depth_t.height())),
            ("F_{t+1->t}", (self.flow_t.width(), self.flow_t.height())),
            ("F_{t+1->t-1}", (self.flow_tm1.width(), self.flow_tm1.height())),
        ];
        for (name, s) in sizes {
            if s != want {
                return Err(Error::shape(format!(
                    "{name} is {}x{} but ground truth is {}x{}",
                    s.0, s.1, want.0, want.1
                )));
            }
        }
        Ok(())
    }

    /// Crops every raster with the bottom-anchored, horizontally centred
    /// window and shifts the principal point accordingly.
    pub fn crop_top(&self, target_w: usize, target_h: usize) -> Result<Self> {
        self.check_sizes()?;
        let (w, h) = self.size();
        let (x0, y0) = crop_offset(w, h, target_w, target_h)?;
        let rgb = |i: &RgbImage| RgbImage::new(i.grid().crop(x0, y0, target_w, target_h)?);
        let depth = |d: &SparseDepth| SparseDepth::new(d.grid().crop(x0, y0, target_w, target_h)?);
        let flow = |f: &FlowField| FlowField::new(f.grid().crop(x0, y0, target_w, target_h)?);
        Ok(Self {
            rgb_tm1: rgb(&self.rgb_tm1)?,
            rgb_t: rgb(&self.rgb_t)?,
            rgb_tp1: rgb(&self.rgb_tp1)?,
            depth_tm1: depth(&self.depth_tm1)?,
            depth_t: depth(&self.depth_t)?,
            flow_t: flow(&self.flow_t)?,
            flow_tm1: flow(&self.flow_tm1)?,
            gt: depth(&self.gt)?,
            intrinsics: self.intrinsics.cropped(x0, y0),
        })
    }
}

/// Loads sample `i`, optionally cropped to `crop = (width, height)`.
pub fn load_sample(index: &SampleIndex, i: usize, crop: Option<(usize, usize)>) -> Result<Sample> {
    let p = index
        .paths(i)
        .ok_or_else(|| Error::invalid(format!("sample index {i} out of range (0..{})", index.len())))?;
    let r = |q: &PathBuf| index.resolve(q);
    let s = Sample {
        rgb_tm1: read_rgb_png(&r(&p.rgb_tm1))?,
        rgb_t: read_rgb_png(&r(&p.rgb_t))?,
        rgb_tp1: read_rgb_png(&r(&p.rgb_tp1))?,
        depth_tm1: read_depth_png(&r(&p.depth_tm1))?,
        depth_t: read_depth_png(&r(&p.depth_t))?,
        flow_t: read_flow(&r(&p.flow_t))?,
        flow_tm1: read_flow(&r(&p.flow_tm1))?,
        gt: read_depth_png(&r(&p.gt))?,
        intrinsics: read_calibration(&r(&p.calib))?,
    };
    s.check_sizes()
        .map_err(|e| Error::shape(format!("sample {i}: {e}")))?;
    match crop {
        Some((w, h)) => s.crop_top(w, h),
        None => Ok(s),
    }
}

/// Writes a sample's files into `dir` as `{stem}_*.{png,flo,txt}` and returns
/// their paths relative to `dir`.
pub fn write_sample(dir: &Path, stem: &str, s: &Sample) -> Result<SamplePaths> {
    s.check_sizes()?;
    let paths = SamplePaths {
        rgb_tm1: format!("{stem}_rgb_tm1.png").into(),
        rgb_t: format!("{stem}_rgb_t.png").into(),
        rgb_tp1: format!("{stem}_rgb_tp1.png").into(),
        depth_tm1: format!("{stem}_depth_tm1.png").into(),
        depth_t: format!("{stem}_depth_t.png").into(),
        flow_t: format!("{stem}_flow_tp1_t.flo").into(),
        flow_tm1: format!("{stem}_flow_tp1_tm1.flo").into(),
        gt: format!("{stem}_gt_tp1.png").into(),
        calib: format!("{stem}_calib.txt").into(),
    };
    write_rgb_png(&dir.join(&paths.rgb_tm1), &s.rgb_tm1)?;
    write_rgb_png(&dir.join(&paths.rgb_t), &s.rgb_t)?;
    write_rgb_png(&dir.join(&paths.rgb_tp1), &s.rgb_tp1)?;
    write_depth_png(&dir.join(&paths.depth_tm1), &s.depth_tm1)?;
    write_depth_png(&dir.join(&paths.depth_t), &s.depth_t)?;
    write_flow(&dir.join(&paths.flow_t), &s.flow_t)?;
    write_flow(&dir.join(&paths.flow_tm1), &s.flow_tm1)?;
    write_depth_png(&dir.join(&paths.gt), &s.gt)?;
    write_calibration(&dir.join(&paths.calib), &[s.intrinsics])?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Grid;

    fn tiny(w: usize, h: usize, shift: f32) -> Sample {
        let rgb = RgbImage::new(Grid::from_fn(w, h, |x, y| [x as f64 / 255.0, y as f64 / 255.0, 128.0 / 255.0])).unwrap();
        let d = SparseDepth::new(Grid::from_fn(w, h, |x, y| if (x + y) % 3 == 0 { 4.0 + x as f64 / 256.0 } else { 0.0 }))
            .unwrap();
        Sample {
            rgb_tm1: rgb.clone(),
            rgb_t: rgb.clone(),
            rgb_tp1: rgb,
            depth_tm1: d.clone(),
            depth_t: d.clone(),
            flow_t: FlowField::uniform(w, h, shift, 0.0),
            flow_tm1: FlowField::uniform(w, h, 2.0 * shift, 0.0),
            gt: d,
            intrinsics: CameraIntrinsics::new(50.0, 50.0, w as f64 / 2.0, h as f64 / 2.0).unwrap(),
        }
    }

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let a = tiny(6, 4, 0.0);
        let b = tiny(6, 4, 1.5);
        let pa = write_sample(dir.path(), "a", &a).unwrap();
        let pb = write_sample(dir.path(), "b", &b).unwrap();
        let manifest = dir.path().join("train.txt");
        SampleIndex::new(dir.path(), vec![pa, pb]).write_manifest(&manifest).unwrap();

        let mut idx = SampleIndex::from_manifest(&manifest).unwrap();
        idx.check_files().unwrap();
        assert_eq!(idx.len(), 2);
        assert_eq!(load_sample(&idx, 1, None).unwrap(), b);
        assert!(load_sample(&idx, 2, None).is_err());

        let c = load_sample(&idx, 0, Some((4, 2))).unwrap();
        assert_eq!(c.size(), (4, 2));
        assert_eq!(c.intrinsics.cu, 3.0 - 1.0);
        assert_eq!(c.intrinsics.cv, 2.0 - 2.0);
        assert_eq!(c.gt.get(0, 0), a.gt.get(1, 2));

        assert_eq!(idx.retain_min_motion(1.0).unwrap(), 1);
        assert_eq!(idx.len(), 1);
        assert_eq!(load_sample(&idx, 0, None).unwrap(), b);
    }

    #[test]
    fn mismatched_modalities_are_rejected() {
        let mut s = tiny(6, 4, 0.0);
        s.flow_t = FlowField::zeros(5, 4);
        let err = s.check_sizes().unwrap_err().to_string();
        assert!(err.contains("F_{t+1->t}"), "{err}");
    }

    #[test]
    fn bad_manifest_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.txt");
        std::fs::write(&p, "a b c\n").unwrap();
        assert!(SampleIndex::from_manifest(&p).is_err());
    }
}
