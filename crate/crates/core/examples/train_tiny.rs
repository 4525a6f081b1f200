//! Trains a narrow network for a few epochs and compares it with
//! nearest-valid filling of the fused warp.

use fppn::pipeline::{evaluate_baseline, prepare, train_model, PipelineConfig};
use fppn::synthscene::DatasetSpec;

fn main() -> fppn::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let dir = std::env::temp_dir().join("fppn_train_tiny");
    let spec = DatasetSpec {
        train: 40,
        val: 10,
        ..DatasetSpec::default()
    };
    let paths = spec.write(&dir)?;
    let mut cfg = PipelineConfig::from_text("base_channels=8\ninit_channels=4\nrefine_channels=8\nepochs=5\nlr=0.001\n")?;
    cfg.seed = 1;
    let (train, _) = prepare(&paths.train, &cfg)?;
    let (val, _) = prepare(&paths.val, &cfg)?;
    let out = train_model(&cfg, &train, &val)?;
    let (base, _) = evaluate_baseline(&val)?;
    let last = out.epochs.last().and_then(|e| e.val).expect("validation set");
    println!("network RMSE {:.0} mm, nearest-fill RMSE {:.0} mm", last.rmse, base.rmse);
    println!("{} parameters", out.model.param_count());
    Ok(())
}
