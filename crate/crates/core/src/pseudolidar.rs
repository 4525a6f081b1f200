//! Back-projection of depth maps into camera-frame point clouds.
//!
//! Pixel `(u, v)` is column `u`, row `v`, taken at the integer pixel centre.

use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::dataio::{CameraIntrinsics, DepthGrid, RgbImage};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    /// `(x, y, z)` in metres.
    pub points: Vec<[f64; 3]>,
    /// Optional grey level per point.
    pub intensity: Option<Vec<u8>>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn summary(&self) -> CloudSummary {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for p in &self.points {
            for i in 0..3 {
                min[i] = min[i].min(p[i]);
                max[i] = max[i].max(p[i]);
            }
        }
        CloudSummary {
            count: self.points.len(),
            bounds: (!self.points.is_empty()).then_some((min, max)),
        }
    }
}

/// Point count and axis-aligned bounding box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CloudSummary {
    pub count: usize,
    pub bounds: Option<([f64; 3], [f64; 3])>,
}

impl fmt::Display for CloudSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.bounds {
            Some((lo, hi)) => write!(
                f,
                "{} points, x [{:.3}, {:.3}] y [{:.3}, {:.3}] z [{:.3}, {:.3}] m",
                self.count, lo[0], hi[0], lo[1], hi[1], lo[2], hi[2]
            ),
            None => write!(f, "0 points"),
        }
    }
}

fn check_intrinsics(k: &CameraIntrinsics) -> Result<()> {
    if !(k.fu > 0.0 && k.fv > 0.0) {
        return Err(Error::invalid(format!("focal lengths must be positive, got ({}, {})", k.fu, k.fv)));
    }
    Ok(())
}

fn backproject_impl<D: DepthGrid>(depth: &D, k: &CameraIntrinsics, rgb: Option<&RgbImage>) -> Result<PointCloud> {
    check_intrinsics(k)?;
    let g = depth.depth_grid();
    if let Some(img) = rgb {
        g.check_same_size(img.grid(), "depth vs rgb")?;
    }
    let mut cloud = PointCloud {
        points: Vec::new(),
        intensity: rgb.map(|_| Vec::new()),
    };
    for v in 0..g.height() {
        for u in 0..g.width() {
            let z = g.get(u, v);
            if z == 0.0 {
                continue;
            }
            if !(z > 0.0 && z.is_finite()) {
                return Err(Error::invalid(format!("depth {z} at pixel ({u}, {v}) is not a positive finite value")));
            }
            let x = (u as f64 - k.cu) * z / k.fu;
            let y = (v as f64 - k.cv) * z / k.fv;
            cloud.points.push([x, y, z]);
            if let (Some(img), Some(i)) = (rgb, cloud.intensity.as_mut()) {
                let [r, gr, b] = img.get(u, v);
                i.push(((0.299 * r + 0.587 * gr + 0.114 * b) * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Ok(cloud)
}

/// One point per pixel with positive depth; zero-depth pixels are skipped.
pub fn backproject<D: DepthGrid>(depth: &D, k: &CameraIntrinsics) -> Result<PointCloud> {
    backproject_impl(depth, k, None)
}

/// As [`backproject`], with grey levels taken from `rgb`.
pub fn backproject_with_intensity<D: DepthGrid>(depth: &D, k: &CameraIntrinsics, rgb: &RgbImage) -> Result<PointCloud> {
    backproject_impl(depth, k, Some(rgb))
}

/// Pinhole projection: `(u, v, d)` of a camera-frame point.
pub fn project(p: [f64; 3], k: &CameraIntrinsics) -> Result<(f64, f64, f64)> {
    check_intrinsics(k)?;
    let [x, y, z] = p;
    if !(z > 0.0) {
        return Err(Error::invalid(format!("cannot project a point with z = {z}")));
    }
    Ok((x * k.fu / z + k.cu, y * k.fv / z + k.cv, z))
}

/// Binary little-endian PLY with float32 `x y z` and optional uchar
/// `intensity` per vertex.
pub fn write_ply<W: Write>(cloud: &PointCloud, mut out: W) -> std::io::Result<()> {
    if let Some(i) = &cloud.intensity {
        if i.len() != cloud.points.len() {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidInput,
                format!("{} intensities for {} points", i.len(), cloud.points.len()),
            ));
        }
    }
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n",
        cloud.points.len()
    );
    if cloud.intensity.is_some() {
        header.push_str("property uchar intensity\n");
    }
    header.push_str("end_header\n");
    let stride = if cloud.intensity.is_some() { 13 } else { 12 };
    let mut body = Vec::with_capacity(header.len() + stride * cloud.points.len());
    body.extend_from_slice(header.as_bytes());
    for (n, p) in cloud.points.iter().enumerate() {
        for c in p {
            body.extend_from_slice(&(*c as f32).to_le_bytes());
        }
        if let Some(i) = &cloud.intensity {
            body.push(i[n]);
        }
    }
    out.write_all(&body)
}

pub fn export_ply(cloud: &PointCloud, path: &Path) -> Result<()> {
    if let Some((n, _)) = cloud.points.iter().enumerate().find(|(_, p)| p.iter().any(|c| !c.is_finite())) {
        return Err(Error::NonFinite(format!("point {n}")));
    }
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_ply(cloud, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{DenseDepth, Grid, SparseDepth};
    use proptest::prelude::*;

    fn k(f: f64, c: f64) -> CameraIntrinsics {
        CameraIntrinsics::new(f, f, c, c).unwrap()
    }

    #[test]
    fn hand_points() {
        let mut g = Grid::filled(151, 60, 0.0);
        g.set(50, 50, 10.0);
        g.set(150, 50, 2.0);
        let cloud = backproject(&SparseDepth::new(g).unwrap(), &k(100.0, 50.0)).unwrap();
        assert_eq!(cloud.points, vec![[0.0, 0.0, 10.0], [2.0, 0.0, 2.0]]);
        assert_eq!(project([2.0, 0.0, 2.0], &k(100.0, 50.0)).unwrap(), (150.0, 50.0, 2.0));
        assert_eq!(project([0.0, 0.0, 10.0], &k(100.0, 50.0)).unwrap(), (50.0, 50.0, 10.0));
        assert!(project([0.0, 0.0, 0.0], &k(100.0, 50.0)).is_err());
    }

    #[test]
    fn scaling_depth_scales_points() {
        let d = DenseDepth::new(Grid::from_fn(7, 5, |x, y| 1.0 + (x * 5 + y) as f64 * 0.25)).unwrap();
        let d2 = DenseDepth::new(d.grid().map(|v| v * 4.0)).unwrap();
        let intr = CameraIntrinsics::new(30.0, 40.0, 3.2, 2.1).unwrap();
        let a = backproject(&d, &intr).unwrap();
        let b = backproject(&d2, &intr).unwrap();
        assert_eq!(a.len(), 35);
        for (p, q) in a.points.iter().zip(&b.points) {
            for i in 0..3 {
                assert_eq!(p[i] * 4.0, q[i]);
            }
        }
    }

    #[test]
    fn ply_layout() {
        let mut buf = Vec::new();
        write_ply(&PointCloud::default(), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("element vertex 0\n"));
        let header_len = buf.len();
        let cloud = PointCloud {
            points: vec![[1.0, 2.0, 3.0]; 5],
            intensity: None,
        };
        let mut buf = Vec::new();
        write_ply(&cloud, &mut buf).unwrap();
        let five = "element vertex 5\n".len() - "element vertex 0\n".len();
        assert_eq!(buf.len(), header_len + five + 12 * 5);
        let with = PointCloud {
            intensity: Some(vec![7; 5]),
            ..cloud
        };
        let mut buf2 = Vec::new();
        write_ply(&with, &mut buf2).unwrap();
        assert_eq!(buf2.len(), header_len + five + "property uchar intensity\n".len() + 13 * 5);
        assert_eq!(*buf2.last().unwrap(), 7);
    }

    #[test]
    fn summary_text() {
        assert_eq!(PointCloud::default().summary().to_string(), "0 points");
        let c = PointCloud {
            points: vec![[1.0, -2.0, 3.0], [-1.0, 0.5, 9.0]],
            intensity: None,
        };
        let s = c.summary();
        assert_eq!(s.bounds, Some(([-1.0, -2.0, 3.0], [1.0, 0.5, 9.0])));
    }

    proptest! {
        #[test]
        fn round_trip(
            px in prop::collection::vec((0usize..40, 0usize..30, 0.5f64..200.0), 1..30),
            f in 10.0f64..500.0, cu in 0.0f64..40.0, cv in 0.0f64..30.0,
        ) {
            let intr = CameraIntrinsics::new(f, f * 1.1, cu, cv).unwrap();
            let mut g = Grid::filled(40, 30, 0.0);
            for &(u, v, d) in &px {
                g.set(u, v, d);
            }
            let sparse = SparseDepth::new(g.clone()).unwrap();
            let cloud = backproject(&sparse, &intr).unwrap();
            prop_assert_eq!(cloud.len(), sparse.valid_count());
            let mut it = cloud.points.iter();
            for v in 0..30 {
                for u in 0..40 {
                    if g.get(u, v) > 0.0 {
                        let (pu, pv, pd) = project(*it.next().unwrap(), &intr).unwrap();
                        prop_assert!((pu - u as f64).abs() < 1e-9);
                        prop_assert!((pv - v as f64).abs() < 1e-9);
                        prop_assert!((pd - g.get(u, v)).abs() < 1e-9);
                    }
                }
            }
        }
    }
}
