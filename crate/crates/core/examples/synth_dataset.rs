//! Writes a small synthetic dataset and prints what one sample looks like.
//!
//! cargo run --release --example synth_dataset -- [out_dir]

use fppn::dataio::SampleIndex;
use fppn::synthscene::{render, DatasetSpec};

fn main() -> fppn::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "synth_example".into());
    let spec = DatasetSpec {
        train: 8,
        val: 2,
        ..DatasetSpec::default()
    };
    let paths = spec.write(out.as_ref())?;
    let index = SampleIndex::from_manifest(&paths.train)?;
    println!("{} training samples under {}", index.len(), index.root().display());

    let r = render(&spec.scene(0))?;
    let s = &r.sample;
    println!(
        "sample 0: {}x{}, {} lidar returns at t, {} gt pixels, mean flow {:.2} px",
        s.gt.width(),
        s.gt.height(),
        s.depth_t.valid_count(),
        s.gt.valid_count(),
        s.flow_t.mean_magnitude()
    );
    Ok(())
}
