use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fppn::pipeline::{self, PipelineConfig};
use fppn::synthscene::DatasetSpec;
use fppn::Error;

#[derive(Parser)]
#[command(name = "fppn", version, about = "Future depth and pseudo-LiDAR prediction")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a synthetic dataset.
    Synth {
        /// Dataset spec in key=value form; defaults otherwise.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value = "data")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a network and write a checkpoint.
    Train(Common),
    /// Write depth PNGs, PLY clouds and a summary for every sample.
    Predict(Common),
    /// Train and score each ablation setting.
    Ablate(Common),
    /// Score a checkpoint against the nearest-fill baseline, or rank a
    /// table of reported metrics.
    Eval {
        #[command(flatten)]
        common: Common,
        /// CSV of `name,rmse,mae,irmse,imae` rows to rank instead.
        #[arg(long)]
        table: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Pipeline config in key=value form; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    val_manifest: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    max_samples: Option<usize>,
    #[arg(long)]
    no_aggregation: bool,
    #[arg(long)]
    no_edges: bool,
    #[arg(long)]
    no_cbam: bool,
    #[arg(long)]
    no_refinement: bool,
    #[arg(long)]
    no_second_warp: bool,
    /// Extra `key=value` overrides.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn read(path: &PathBuf) -> Result<String, Error> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })
}

impl Common {
    fn config(&self) -> Result<PipelineConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::from_text(&read(p)?)?,
            None => PipelineConfig::default(),
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.to_string_lossy().into_owned());
        let mut kv: Vec<(&str, String)> = Vec::new();
        let pairs = [
            ("manifest", path(&self.manifest)),
            ("val_manifest", path(&self.val_manifest)),
            ("checkpoint", path(&self.checkpoint)),
            ("out", path(&self.out)),
            ("seed", self.seed.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("lr", self.lr.map(|v| v.to_string())),
            ("max_samples", self.max_samples.map(|v| v.to_string())),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                kv.push((k, v));
            }
        }
        for (flag, key) in [
            (self.no_aggregation, "use_aggregation"),
            (self.no_edges, "use_edges"),
            (self.no_cbam, "use_cbam"),
            (self.no_refinement, "use_refinement"),
            (self.no_second_warp, "include_second_warp"),
        ] {
            if flag {
                kv.push((key, "false".into()));
            }
        }
        for (k, v) in kv {
            cfg.set(k, &v)?;
        }
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Config {
                    field: s.clone(),
                    reason: "expected KEY=VALUE".into(),
                })?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<bool, Error> {
    match cli.cmd {
        Cmd::Synth { spec, out, seed } => {
            let mut s = match &spec {
                Some(p) => DatasetSpec::from_text(&read(p)?)?,
                None => DatasetSpec::default(),
            };
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let paths = pipeline::cmd_synth(&s, &out)?;
            println!("train manifest: {}", paths.train.display());
            println!("val manifest: {}", paths.val.display());
            Ok(true)
        }
        Cmd::Train(c) => {
            let cfg = c.config()?;
            let o = pipeline::cmd_train(&cfg)?;
            println!("{} steps", o.rows.len());
            if let Some(last) = o.epochs.last() {
                println!("final epoch loss {:.5}", last.train_loss);
            }
            Ok(true)
        }
        Cmd::Predict(c) => {
            let cfg = c.config()?;
            let s = pipeline::cmd_predict(&cfg)?;
            for p in &s.samples {
                println!("sample {}: {} points", p.index, p.points);
            }
            for f in &s.failures {
                eprintln!("sample {} failed: {}", f.index, f.message);
            }
            println!("summary: {}", s.summary_csv.display());
            Ok(s.failures.is_empty())
        }
        Cmd::Ablate(c) => {
            let cfg = c.config()?;
            let r = pipeline::cmd_ablate(&cfg)?;
            print!("{}", r.table.to_markdown());
            Ok(true)
        }
        Cmd::Eval { common, table } => {
            let t = match table {
                Some(t) => pipeline::cmd_eval_table(&t, &common.config()?.out)?,
                None => pipeline::cmd_eval(&common.config()?)?,
            };
            print!("{}", t.to_markdown());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e @ Error::Config { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
