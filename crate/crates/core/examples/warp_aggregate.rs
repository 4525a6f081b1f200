//! Warps both past depth maps to t+1, fuses them, and scores each candidate
//! against ground truth after nearest-valid filling.

use fppn::aggregate::nearest_fill;
use fppn::depthmetrics::evaluate;
use fppn::edgefeat::CannyParams;
use fppn::fppnnet::Stages;
use fppn::synthscene::{render, DatasetSpec};

fn main() -> fppn::Result<()> {
    let spec = DatasetSpec::default();
    println!("flow noise on the t-1 branch: {} px", spec.flow_noise);
    for i in 0..5 {
        let r = render(&spec.scene(i))?;
        let st = Stages::compute(&r.sample, &CannyParams::default())?;
        let (w_tm1, w_t) = st.weights.mean();
        let score = |d| -> fppn::Result<f64> { Ok(evaluate(&nearest_fill(d)?, &r.sample.gt)?.rmse) };
        println!(
            "sample {i}: weights t-1 {w_tm1:.3} / t {w_t:.3}; RMSE mm: t-1 {:.0}, t {:.0}, fused {:.0}",
            score(&st.warped_tm1.warped)?,
            score(&st.warped_t.warped)?,
            score(&st.aggregated)?
        );
    }
    Ok(())
}
