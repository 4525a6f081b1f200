//! End-to-end commands: dataset synthesis, training, prediction,
//! evaluation and the ablation sweep.

mod config;

pub use config::{ablation_rows, PipelineConfig, Toggles};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};

use crate::aggregate::nearest_fill;
use crate::dataio::{encode_depth_png, load_sample, DenseDepth, Sample, SampleIndex, SparseDepth, DEPTH_SCALE, MAX_DEPTH_RAW};
use crate::depthmetrics::{compare, evaluate, parse_reports_csv, MetricReport, RankedTable};
use crate::error::{Error, Result};
use crate::fppnnet::{epoch_means, write_log_csv, LogRow, Model, NetworkInput, Stages, TrainSample, Trainer};
use crate::pseudolidar::{backproject_with_intensity, export_ply};
use crate::synthscene::{DatasetPaths, DatasetSpec};

/// A loaded sample with its classical-stage products and network input.
#[derive(Clone, Debug)]
pub struct Prepared {
    /// Position in the manifest.
    pub index: usize,
    pub sample: Sample,
    pub stages: Stages,
    pub train: TrainSample,
}

/// A sample that could not be processed.
#[derive(Clone, Debug, PartialEq)]
pub struct Failure {
    pub index: usize,
    pub message: String,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn prepare_sample(index: &SampleIndex, i: usize, cfg: &PipelineConfig) -> Result<Prepared> {
    let sample = load_sample(index, i, cfg.crop)?;
    let stages = Stages::compute(&sample, &cfg.canny)?;
    let input = NetworkInput::from_stages(&sample, &stages)?;
    input.check()?;
    let train = TrainSample {
        input,
        gt: sample.gt.clone(),
    };
    Ok(Prepared {
        index: i,
        sample,
        stages,
        train,
    })
}

/// Loads every sample of `manifest`; failures are logged and collected.
pub fn prepare(manifest: &Path, cfg: &PipelineConfig) -> Result<(Vec<Prepared>, Vec<Failure>)> {
    let mut index = SampleIndex::from_manifest(manifest)?;
    let dropped = index.retain_min_motion(cfg.min_mean_flow)?;
    if dropped > 0 {
        info!("dropped {dropped} samples below {} px mean flow", cfg.min_mean_flow);
    }
    let n = cfg.max_samples.map_or(index.len(), |m| m.min(index.len()));
    let mut ok = Vec::with_capacity(n);
    let mut failed = Vec::new();
    for i in 0..n {
        match prepare_sample(&index, i, cfg) {
            Ok(p) => ok.push(p),
            Err(e) => {
                warn!("sample {i}: {e}");
                failed.push(Failure {
                    index: i,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok((ok, failed))
}

/// Non-learned reference: the aggregated warped depth with every hole
/// filled from its nearest valid pixel.
pub fn nearest_fill_baseline(p: &Prepared) -> Result<DenseDepth> {
    nearest_fill(&p.stages.aggregated)
}

/// Per-sample metrics of `model`, averaged over samples; `refined = false`
/// scores the coarse head.
pub fn evaluate_model(model: &Model, data: &[Prepared], refined: bool) -> Result<(MetricReport, Vec<MetricReport>)> {
    let mut all = Vec::with_capacity(data.len());
    for p in data {
        let pred = model.predict(&p.train.input)?;
        let d = if refined { pred.depth() } else { &pred.coarse };
        all.push(evaluate(d, &p.sample.gt).map_err(|e| Error::invalid(format!("sample {}: {e}", p.index)))?);
    }
    Ok((MetricReport::mean(&all)?, all))
}

pub fn evaluate_baseline(data: &[Prepared]) -> Result<(MetricReport, Vec<MetricReport>)> {
    let mut all = Vec::with_capacity(data.len());
    for p in data {
        let d = nearest_fill_baseline(p)?;
        all.push(evaluate(&d, &p.sample.gt).map_err(|e| Error::invalid(format!("sample {}: {e}", p.index)))?);
    }
    Ok((MetricReport::mean(&all)?, all))
}

/// Writes the default (or given) synthetic dataset under `out`.
pub fn cmd_synth(spec: &DatasetSpec, out: &Path) -> Result<DatasetPaths> {
    spec.validate()?;
    create_dir(out)?;
    let paths = spec.write(out)?;
    info!(
        "wrote {} training and {} validation samples to {}",
        spec.train,
        spec.val,
        out.display()
    );
    Ok(paths)
}

/// Validation RMSE after one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: Option<MetricReport>,
}

pub struct TrainOutcome {
    pub model: Model,
    pub rows: Vec<LogRow>,
    pub epochs: Vec<EpochReport>,
    /// Validation metrics of the untrained network, when a validation set
    /// is configured.
    pub initial_val: Option<MetricReport>,
}

/// Trains a fresh network on `data` with the configured toggles.
pub fn train_model(cfg: &PipelineConfig, data: &[Prepared], val: &[Prepared]) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model_cfg = cfg.model_config();
    if let Some(p) = data.first() {
        let (w, h) = p.sample.size();
        model_cfg.check_extent(w, h)?;
    }
    let model = Model::new(model_cfg, cfg.seed)?;
    let score = |m: &Model| -> Result<Option<MetricReport>> {
        if val.is_empty() {
            Ok(None)
        } else {
            evaluate_model(m, val, true).map(|r| Some(r.0))
        }
    };
    let initial_val = score(&model)?;
    if let Some(r) = initial_val {
        info!("initial validation RMSE {:.1} mm", r.rmse);
    }
    let samples: Vec<TrainSample> = data.iter().map(|p| p.train.clone()).collect();
    let mut trainer = Trainer::new(model, cfg.train_config(), cfg.loss)?;
    let mut epochs = Vec::new();
    let rows = if cfg.train.epochs == 0 {
        Vec::new()
    } else {
        if samples.is_empty() {
            return Err(Error::invalid("no usable training samples"));
        }
        trainer
            .fit(&samples, |e, m, rows| {
                let train_loss = epoch_means(rows).last().copied().unwrap_or(f64::NAN);
                let v = score(m)?;
                match v {
                    Some(r) => info!("epoch {e}: loss {train_loss:.4}, validation RMSE {:.1} mm", r.rmse),
                    None => info!("epoch {e}: loss {train_loss:.4}"),
                }
                epochs.push(EpochReport {
                    epoch: e,
                    train_loss,
                    val: v,
                });
                Ok(())
            })
            .map_err(|e| match e {
                // Sample positions are reported against the manifest.
                Error::NonFinite(m) => Error::NonFinite(remap_sample(&m, data)),
                e => e,
            })?
    };
    Ok(TrainOutcome {
        model: trainer.into_model(),
        rows,
        epochs,
        initial_val,
    })
}

fn remap_sample(msg: &str, data: &[Prepared]) -> String {
    if let Some((head, tail)) = msg.rsplit_once("at sample ") {
        if let Ok(i) = tail.trim().parse::<usize>() {
            if let Some(p) = data.get(i) {
                return format!("{head}at sample {}", p.index);
            }
        }
    }
    msg.to_string()
}

fn write_epoch_csv(path: &Path, epochs: &[EpochReport]) -> Result<()> {
    let mut s = String::from("epoch,train_loss,val_rmse_mm,val_mae_mm,val_irmse,val_imae\n");
    for e in epochs {
        let _ = match e.val {
            Some(r) => writeln!(s, "{},{},{},{},{},{}", e.epoch, e.train_loss, r.rmse, r.mae, r.irmse, r.imae),
            None => writeln!(s, "{},{},,,,", e.epoch, e.train_loss),
        };
    }
    write_file(path, s.as_bytes())
}

/// Trains on the manifest and writes the checkpoint plus
/// `train_log.csv` and `epochs.csv` under the output directory.
pub fn cmd_train(cfg: &PipelineConfig) -> Result<TrainOutcome> {
    let manifest = cfg.require_manifest()?.clone();
    let checkpoint = cfg.require_checkpoint()?.clone();
    cfg.validate()?;
    let (data, failed) = prepare(&manifest, cfg)?;
    if !failed.is_empty() {
        warn!("{} training samples skipped", failed.len());
    }
    if data.is_empty() {
        return Err(Error::invalid(format!("{}: no usable samples", manifest.display())));
    }
    let val = match &cfg.val_manifest {
        Some(v) => prepare(v, cfg)?.0,
        None => Vec::new(),
    };
    let outcome = train_model(cfg, &data, &val)?;
    create_dir(&cfg.out)?;
    if let Some(dir) = checkpoint.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    outcome.model.save(&checkpoint)?;
    write_log_csv(&cfg.out.join("train_log.csv"), &outcome.rows)?;
    write_epoch_csv(&cfg.out.join("epochs.csv"), &outcome.epochs)?;
    info!("saved {} after {} steps", checkpoint.display(), outcome.rows.len());
    Ok(outcome)
}

/// Depth quantised as the PNG codec stores it, clamped to its range.
pub fn png_depth(d: &DenseDepth) -> Result<SparseDepth> {
    let top = f64::from(MAX_DEPTH_RAW) / DEPTH_SCALE;
    let min = 1.0 / DEPTH_SCALE;
    SparseDepth::new(d.grid().map(|v| v.clamp(min, top)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictedSample {
    pub index: usize,
    pub depth_png: PathBuf,
    pub ply: PathBuf,
    pub points: usize,
    pub report: Option<MetricReport>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictSummary {
    pub samples: Vec<PredictedSample>,
    pub failures: Vec<Failure>,
    pub summary_csv: PathBuf,
}

fn predict_one(model: &Model, p: &Prepared, refined: bool, out: &Path) -> Result<PredictedSample> {
    let pred = model.predict(&p.train.input)?;
    let depth = if refined { pred.depth() } else { &pred.coarse };
    let stem = format!("s{:04}", p.index);
    let depth_png = out.join(format!("{stem}_depth.png"));
    let clamped = png_depth(depth)?;
    if clamped.grid() != depth.grid() {
        warn!("sample {}: depth outside the PNG range was clamped", p.index);
    }
    write_file(&depth_png, &encode_depth_png(&clamped)?)?;
    let cloud = backproject_with_intensity(depth, &p.sample.intrinsics, &p.sample.rgb_tp1)?;
    let ply = out.join(format!("{stem}.ply"));
    export_ply(&cloud, &ply)?;
    let report = if p.sample.gt.valid_count() > 0 {
        Some(evaluate(depth, &p.sample.gt)?)
    } else {
        None
    };
    Ok(PredictedSample {
        index: p.index,
        depth_png,
        ply,
        points: cloud.len(),
        report,
    })
}

/// Runs every sample through the checkpoint and writes a depth PNG, a PLY
/// cloud and `summary.csv`. Failing samples are logged and skipped.
pub fn cmd_predict(cfg: &PipelineConfig) -> Result<PredictSummary> {
    let manifest = cfg.require_manifest()?.clone();
    let ck = cfg.require_checkpoint()?;
    let model = Model::load(ck)?;
    let refined = cfg.toggles.use_refinement;
    if refined && model.config().refine.is_none() {
        info!("checkpoint has no refinement stage; writing coarse predictions");
    }
    create_dir(&cfg.out)?;
    let index = SampleIndex::from_manifest(&manifest)?;
    let n = cfg.max_samples.map_or(index.len(), |m| m.min(index.len()));
    let mut samples = Vec::new();
    let mut failures = Vec::new();
    for i in 0..n {
        match prepare_sample(&index, i, cfg).and_then(|p| predict_one(&model, &p, refined, &cfg.out)) {
            Ok(s) => samples.push(s),
            Err(e) => {
                warn!("sample {i}: {e}");
                failures.push(Failure {
                    index: i,
                    message: e.to_string(),
                });
            }
        }
    }
    let mut csv = String::from("sample,depth_png,ply,points,rmse_mm,mae_mm,irmse_per_km,imae_per_km\n");
    for s in &samples {
        let name = |p: &Path| p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
        let _ = write!(csv, "{},{},{},{}", s.index, name(&s.depth_png), name(&s.ply), s.points);
        let _ = match s.report {
            Some(r) => writeln!(csv, ",{},{},{},{}", r.rmse, r.mae, r.irmse, r.imae),
            None => writeln!(csv, ",,,,"),
        };
    }
    for f in &failures {
        let _ = writeln!(csv, "{},,,,,,,", f.index);
    }
    let summary_csv = cfg.out.join("summary.csv");
    write_file(&summary_csv, csv.as_bytes())?;
    Ok(PredictSummary {
        samples,
        failures,
        summary_csv,
    })
}

/// Scores the checkpoint and the nearest-fill baseline on the manifest and
/// writes `eval.csv` and `eval.md`.
pub fn cmd_eval(cfg: &PipelineConfig) -> Result<RankedTable> {
    let manifest = cfg.require_manifest()?.clone();
    let model = Model::load(cfg.require_checkpoint()?)?;
    let (data, failed) = prepare(&manifest, cfg)?;
    if data.is_empty() {
        return Err(Error::invalid(format!("{}: no usable samples", manifest.display())));
    }
    if !failed.is_empty() {
        warn!("{} samples skipped", failed.len());
    }
    let (m, _) = evaluate_model(&model, &data, cfg.toggles.use_refinement)?;
    let (b, _) = evaluate_baseline(&data)?;
    let table = compare(vec![("model".into(), m), ("nearest-fill".into(), b)])?;
    write_tables(&table, &cfg.out, "eval")?;
    Ok(table)
}

/// Ranks externally reported metrics given as `name,rmse,mae,irmse,imae`.
pub fn cmd_eval_table(csv: &Path, out: &Path) -> Result<RankedTable> {
    let text = std::fs::read_to_string(csv).map_err(|e| Error::io(csv, e))?;
    let table = compare(parse_reports_csv(&text)?)?;
    write_tables(&table, out, "ranking")?;
    Ok(table)
}

fn write_tables(table: &RankedTable, out: &Path, stem: &str) -> Result<()> {
    create_dir(out)?;
    write_file(&out.join(format!("{stem}.csv")), table.to_csv().as_bytes())?;
    write_file(&out.join(format!("{stem}.md")), table.to_markdown().as_bytes())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    /// Rows in table order.
    pub rows: Vec<(String, MetricReport)>,
    pub table: RankedTable,
}

impl AblationReport {
    pub fn get(&self, label: &str) -> Option<&MetricReport> {
        self.rows.iter().find(|r| r.0 == label).map(|r| &r.1)
    }
}

/// Trains and scores each labelled setting under the same seed and budget.
pub fn run_ablation(
    cfg: &PipelineConfig,
    rows: &[(&str, Toggles)],
    train: &[Prepared],
    val: &[Prepared],
) -> Result<AblationReport> {
    let mut out = Vec::with_capacity(rows.len());
    for (label, toggles) in rows {
        let row_cfg = PipelineConfig {
            toggles: *toggles,
            ..cfg.clone()
        };
        info!("ablation row `{label}`");
        let t = train_model(&row_cfg, train, &[])?;
        let (r, _) = evaluate_model(&t.model, val, true)?;
        info!("`{label}`: RMSE {:.1} mm", r.rmse);
        out.push((label.to_string(), r));
    }
    let table = compare(out.clone())?;
    Ok(AblationReport { rows: out, table })
}

/// The full ablation sweep; scores on the validation manifest when given,
/// else on the training manifest. Writes `ablation.csv` and `ablation.md`.
pub fn cmd_ablate(cfg: &PipelineConfig) -> Result<AblationReport> {
    let manifest = cfg.require_manifest()?.clone();
    cfg.validate()?;
    let (train, _) = prepare(&manifest, cfg)?;
    if train.is_empty() {
        return Err(Error::invalid(format!("{}: no usable samples", manifest.display())));
    }
    let val = match &cfg.val_manifest {
        Some(v) => {
            let vcfg = PipelineConfig {
                max_samples: None,
                ..cfg.clone()
            };
            prepare(v, &vcfg)?.0
        }
        None => train.clone(),
    };
    let report = run_ablation(cfg, &ablation_rows(), &train, &val)?;
    write_tables(&report.table, &cfg.out, "ablation")?;
    Ok(report)
}
