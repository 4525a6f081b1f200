use super::config::{InputGroup, InputLayout};
use crate::aggregate::{aggregate_depth, cosine_weights, WeightMap};
use crate::dataio::{Grid, RgbImage, Sample, SparseDepth};
use crate::edgefeat::{canny, CannyParams, EdgeMap};
use crate::error::{Error, Result};
use crate::flowwarp::{warp_depth, warp_rgb, WarpResult};
use crate::tensor::{Scalar, Tensor};

/// Intermediate products of the classical stages for one sample.
#[derive(Clone, Debug)]
pub struct Stages {
    /// `d_{t→t+1}`.
    pub warped_t: WarpResult<SparseDepth>,
    /// `d_{t−1→t+1}`.
    pub warped_tm1: WarpResult<SparseDepth>,
    pub rgb_warped_t: WarpResult<RgbImage>,
    pub rgb_warped_tm1: WarpResult<RgbImage>,
    pub weights: WeightMap,
    /// `d^A_{t+1}`.
    pub aggregated: SparseDepth,
    pub edges: EdgeMap,
}

impl Stages {
    pub fn compute(sample: &Sample, canny_params: &CannyParams) -> Result<Self> {
        sample.check_sizes()?;
        let warped_t = warp_depth(&sample.depth_t, &sample.flow_t)?;
        let warped_tm1 = warp_depth(&sample.depth_tm1, &sample.flow_tm1)?;
        let rgb_warped_t = warp_rgb(&sample.rgb_t, &sample.flow_t)?;
        let rgb_warped_tm1 = warp_rgb(&sample.rgb_tm1, &sample.flow_tm1)?;
        let weights = cosine_weights(&rgb_warped_tm1, &rgb_warped_t, &sample.rgb_tp1)?;
        let aggregated = aggregate_depth(&weights, &warped_tm1, &warped_t)?;
        let edges = canny(&sample.rgb_tp1, canny_params)?;
        Ok(Self {
            warped_t,
            warped_tm1,
            rgb_warped_t,
            rgb_warped_tm1,
            weights,
            aggregated,
            edges,
        })
    }
}

/// Network inputs as `1×C×H×W` planes in physical units (metres, pixels).
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkInput {
    pub depth_t: Tensor<f64>,
    /// `(du, dv)` of `F_{t+1→t}`.
    pub flow: Tensor<f64>,
    pub warped_t: Tensor<f64>,
    pub warped_tm1: Tensor<f64>,
    pub aggregated: Tensor<f64>,
    pub edges: Tensor<f64>,
    /// `I_{t+1}`, consumed by the refinement stage.
    pub rgb: Tensor<f64>,
}

fn plane(g: &Grid<f64>) -> Tensor<f64> {
    Tensor::from_vec(&[1, 1, g.height(), g.width()], g.data().to_vec()).expect("grid extents")
}

impl NetworkInput {
    pub fn from_stages(sample: &Sample, stages: &Stages) -> Result<Self> {
        let (w, h) = sample.size();
        let n = w * h;
        let mut flow = vec![0.0; 2 * n];
        for (i, &[du, dv]) in sample.flow_t.grid().data().iter().enumerate() {
            flow[i] = f64::from(du);
            flow[n + i] = f64::from(dv);
        }
        let edges = Grid::from_vec(w, h, stages.edges.to_plane())?;
        Ok(Self {
            depth_t: plane(sample.depth_t.grid()),
            flow: Tensor::from_vec(&[1, 2, h, w], flow)?,
            warped_t: plane(stages.warped_t.warped.grid()),
            warped_tm1: plane(stages.warped_tm1.warped.grid()),
            aggregated: plane(stages.aggregated.grid()),
            edges: plane(&edges),
            rgb: Tensor::from_vec(&[1, 3, h, w], sample.rgb_tp1.to_planar())?,
        })
    }

    pub fn from_sample(sample: &Sample, canny_params: &CannyParams) -> Result<Self> {
        Self::from_stages(sample, &Stages::compute(sample, canny_params)?)
    }

    /// `(width, height)`.
    pub fn size(&self) -> (usize, usize) {
        let s = self.depth_t.shape();
        (s[3], s[2])
    }

    pub fn check(&self) -> Result<()> {
        let (w, h) = self.size();
        for (name, t, c) in [
            ("d_t", &self.depth_t, 1),
            ("flow", &self.flow, 2),
            ("d_w_t", &self.warped_t, 1),
            ("d_w_tm1", &self.warped_tm1, 1),
            ("d_agg", &self.aggregated, 1),
            ("edges", &self.edges, 1),
            ("rgb", &self.rgb, 3),
        ] {
            if t.shape() != [1, c, h, w] {
                return Err(Error::shape(format!(
                    "input `{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    [1, c, h, w]
                )));
            }
            if !t.all_finite() {
                return Err(Error::NonFinite(format!("input `{name}`")));
            }
        }
        Ok(())
    }

    pub fn group(&self, g: InputGroup) -> &Tensor<f64> {
        match g {
            InputGroup::DepthT => &self.depth_t,
            InputGroup::Flow => &self.flow,
            InputGroup::WarpedT => &self.warped_t,
            InputGroup::WarpedTm1 => &self.warped_tm1,
            InputGroup::Aggregated => &self.aggregated,
            InputGroup::Edges => &self.edges,
        }
    }

    /// The groups a layout feeds to the network, in order.
    pub fn groups(&self, layout: &InputLayout) -> Vec<(InputGroup, &Tensor<f64>)> {
        layout.groups().into_iter().map(|g| (g, self.group(g))).collect()
    }

    /// Upside-down copy; the vertical flow component changes sign.
    pub fn flip_vertical(&self) -> Self {
        let flip = |t: &Tensor<f64>| flip_rows(t);
        let mut flow = flip(&self.flow);
        let (w, h) = self.size();
        flow.data_mut()[w * h..].iter_mut().for_each(|v| *v = -*v);
        Self {
            depth_t: flip(&self.depth_t),
            flow,
            warped_t: flip(&self.warped_t),
            warped_tm1: flip(&self.warped_tm1),
            aggregated: flip(&self.aggregated),
            edges: flip(&self.edges),
            rgb: flip(&self.rgb),
        }
    }
}

/// Reverses the row order of every channel of an `N×C×H×W` tensor.
pub fn flip_rows<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let s = t.shape();
    let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
    let src = t.data();
    let mut out = Vec::with_capacity(src.len());
    for p in 0..planes {
        for y in (0..h).rev() {
            let o = (p * h + y) * w;
            out.extend_from_slice(&src[o..o + w]);
        }
    }
    Tensor::from_vec(s, out).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{CameraIntrinsics, FlowField};

    fn toy(w: usize, h: usize) -> Sample {
        let rgb = |k: f64| RgbImage::new(Grid::from_fn(w, h, |x, y| [(x as f64 * k) % 1.0, y as f64 / h as f64, 0.5])).unwrap();
        let depth = |off: f64| SparseDepth::new(Grid::from_fn(w, h, |x, y| if (x + y) % 3 == 0 { 5.0 + off + x as f64 } else { 0.0 })).unwrap();
        Sample {
            rgb_tm1: rgb(0.1),
            rgb_t: rgb(0.11),
            rgb_tp1: rgb(0.12),
            depth_tm1: depth(0.5),
            depth_t: depth(0.25),
            flow_t: FlowField::uniform(w, h, 1.0, -0.5),
            flow_tm1: FlowField::uniform(w, h, 2.0, -1.0),
            gt: depth(0.0),
            intrinsics: CameraIntrinsics::new(50.0, 50.0, w as f64 / 2.0, h as f64 / 2.0).unwrap(),
        }
    }

    #[test]
    fn planes_have_network_layout() {
        let s = toy(8, 4);
        let n = NetworkInput::from_sample(&s, &CannyParams::default()).unwrap();
        n.check().unwrap();
        assert_eq!(n.size(), (8, 4));
        assert_eq!(n.flow.at(&[0, 0, 2, 3]), 1.0);
        assert_eq!(n.flow.at(&[0, 1, 2, 3]), -0.5);
        assert_eq!(n.depth_t.at(&[0, 0, 0, 3]), 8.25);
        assert_eq!(n.rgb.at(&[0, 1, 3, 0]), 0.75);
    }

    #[test]
    fn flip_twice_is_identity() {
        let n = NetworkInput::from_sample(&toy(6, 5), &CannyParams::default()).unwrap();
        let f = n.flip_vertical();
        assert_eq!(f.depth_t.at(&[0, 0, 4, 0]), n.depth_t.at(&[0, 0, 0, 0]));
        assert_eq!(f.flow.at(&[0, 1, 0, 2]), 0.5);
        assert_eq!(f.flip_vertical(), n);
    }
}
