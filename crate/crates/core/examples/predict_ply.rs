//! Predicts one frame with a freshly initialised network, back-projects it
//! and writes a PLY cloud. Pass a checkpoint path to use trained weights.

use fppn::fppnnet::{Model, NetworkInput};
use fppn::edgefeat::CannyParams;
use fppn::pseudolidar::{backproject_with_intensity, export_ply};
use fppn::synthscene::{render, DatasetSpec};

fn main() -> fppn::Result<()> {
    let model = match std::env::args().nth(1) {
        Some(p) => Model::<f64>::load(p.as_ref())?,
        None => Model::new(Default::default(), 0)?,
    };
    let r = render(&DatasetSpec::default().scene(0))?;
    let input = NetworkInput::from_sample(&r.sample, &CannyParams::default())?;
    let pred = model.predict(&input)?;
    let cloud = backproject_with_intensity(pred.depth(), &r.sample.intrinsics, &r.sample.rgb_tp1)?;
    let path = std::env::temp_dir().join("fppn_example.ply");
    export_ply(&cloud, &path)?;
    println!("{}", cloud.summary());
    println!("wrote {}", path.display());
    Ok(())
}
