//! Canny edges of a rendered frame, printed as ASCII.

use fppn::edgefeat::{canny, CannyParams};
use fppn::synthscene::{render, DatasetSpec};

fn main() -> fppn::Result<()> {
    let spec = DatasetSpec {
        width: 48,
        height: 32,
        ..DatasetSpec::default()
    };
    let r = render(&spec.scene(3))?;
    let e = canny(&r.sample.rgb_tp1, &CannyParams::default())?;
    let g = e.grid();
    for y in 0..g.height() {
        let row: String = (0..g.width()).map(|x| if g.get(x, y) > 0 { '#' } else { '.' }).collect();
        println!("{row}");
    }
    println!("{} edge pixels of {}", e.count(), g.len());
    Ok(())
}
