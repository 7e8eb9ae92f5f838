//! Implementations behind the `eamri` subcommands. Each writes its
//! human-readable report to `out` and returns a typed summary.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mri::{zero_filled, KSpaceSample};
use crate::recon::EamriModel;
use crate::tensor::RealTensor;
use crate::training::{evaluate, split_indices, EvalReport, MetricReport, Trainer};

use super::dataset::ground_truth_edges;
use super::gradcheck::run_suite;
use super::image::{write_heatmap, write_pgm16};
use super::{
    build_dataset, load_checkpoint, read_dataset, save_checkpoint, write_dataset, DatasetSpec, EdgeOperator,
    ReconConfig, VariantKind,
};

pub const DATASET_FILE: &str = "dataset.eamri";
pub const CHECKPOINT_FILE: &str = "checkpoint.eamri";
pub const METRICS_FILE: &str = "metrics.jsonl";

fn io_err(e: std::io::Error) -> Error {
    Error::io("<output>", e)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Caps the global worker pool at `EAMRI_THREADS` when that is set.
pub fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("EAMRI_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("EAMRI_THREADS must be a positive integer, got `{v}`")))?;
        // a pool that already exists keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Builds `samples` phantoms from `config` and writes `out_dir/dataset.eamri`.
pub fn simulate(config: &ReconConfig, samples: usize, out_dir: &Path, out: &mut dyn Write) -> Result<PathBuf> {
    config.validate()?;
    ensure_dir(out_dir)?;
    let spec = DatasetSpec::from_config(config, samples);
    let data = build_dataset(&spec)?;
    let path = out_dir.join(DATASET_FILE);
    write_dataset(&path, &spec, &data)?;
    writeln!(
        out,
        "wrote {} samples ({}x{}, {} coils, AF {}, {:?} edges) to {}",
        samples,
        spec.size,
        spec.size,
        spec.coils,
        spec.af,
        spec.edge_op,
        path.display()
    )
    .map_err(io_err)?;
    Ok(path)
}

fn check_dataset(config: &ReconConfig, samples: &[KSpaceSample]) -> Result<()> {
    let s = samples.first().ok_or_else(|| Error::arg("dataset is empty"))?;
    if s.image_shape() != (config.image_size, config.image_size) || s.coils() != config.coils {
        return Err(Error::Config(format!(
            "dataset holds {}x{} images with {} coils, config expects {}x{} with {}",
            s.image_shape().0,
            s.image_shape().1,
            s.coils(),
            config.image_size,
            config.image_size,
            config.coils
        )));
    }
    Ok(())
}

/// Recomputes the ground-truth edge maps with `op`.
pub fn with_edge_operator(samples: &[KSpaceSample], op: EdgeOperator) -> Result<Vec<KSpaceSample>> {
    samples
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.edge_gt = ground_truth_edges(&s.x_gt.abs(), op)?;
            Ok(s)
        })
        .collect()
}

/// Result of a training run.
#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub reports: Vec<EvalReport>,
    pub parameters: usize,
}

/// Trains on `samples` up to `config.steps`, writing the metric log and
/// final checkpoint into `out_dir`. With `resume` the model, optimizer and
/// step counter come from that checkpoint and the log is appended to.
pub fn train_on(
    config: &ReconConfig,
    samples: &[KSpaceSample],
    out_dir: &Path,
    resume: Option<&Path>,
    out: &mut dyn Write,
) -> Result<TrainSummary> {
    ensure_dir(out_dir)?;
    let mut trainer = match resume {
        Some(path) => {
            let (mut model, adam) = load_checkpoint(path)?;
            let schedule_only = ReconConfig {
                steps: config.steps,
                eval_every: config.eval_every,
                ..model.config().clone()
            };
            if &schedule_only != config {
                return Err(Error::Config(format!(
                    "{} was trained with a different configuration; only steps and eval_every may change on resume",
                    path.display()
                )));
            }
            model.set_schedule(config.steps, config.eval_every)?;
            Trainer::resume(model, adam, samples.len())?
        }
        None => Trainer::new(EamriModel::new(config)?, samples.len())?,
    };
    check_dataset(trainer.model.config(), samples)?;
    let log_path = out_dir.join(METRICS_FILE);
    let mut log = OpenOptions::new()
        .create(true)
        .write(true)
        .append(resume.is_some())
        .truncate(resume.is_none())
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    writeln!(
        out,
        "training {} ({} parameters) from step {} to {}",
        trainer.model.variant().name(),
        trainer.model.parameter_count(),
        trainer.step(),
        config.steps
    )
    .map_err(io_err)?;
    let reports = trainer.run(samples, config.steps as u64, |r| {
        let line = serde_json::to_string(r).expect("report serializes");
        writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
        writeln!(
            out,
            "step {:>5}  loss {:.5}  val {:.5}  edge {:.5}  psnr {:.2}  ssim {:.4}  nmse {:.5}",
            r.step, r.loss, r.val_loss, r.edge_loss, r.psnr, r.ssim, r.nmse
        )
        .map_err(io_err)
    })?;
    let checkpoint = out_dir.join(CHECKPOINT_FILE);
    save_checkpoint(&checkpoint, &trainer)?;
    Ok(TrainSummary {
        checkpoint,
        reports,
        parameters: trainer.model.parameter_count(),
    })
}

/// Reads a dataset file and trains on it; see [`train_on`].
pub fn train(
    config: &ReconConfig,
    dataset: &Path,
    out_dir: &Path,
    resume: Option<&Path>,
    out: &mut dyn Write,
) -> Result<TrainSummary> {
    let (_, samples) = read_dataset(dataset)?;
    let samples = with_edge_operator(&samples, config.edge_op)?;
    train_on(config, &samples, out_dir, resume, out)
}

/// Mean metrics of the zero-filled reconstruction with the true coil maps.
pub fn zero_filled_baseline(samples: &[&KSpaceSample]) -> Result<MetricReport> {
    let reports = samples
        .iter()
        .map(|s| {
            let maps = s
                .coil_maps
                .as_ref()
                .ok_or_else(|| Error::arg("zero-filled baseline needs the simulated coil maps"))?;
            MetricReport::of_images(&zero_filled(&s.y, maps)?, &s.x_gt)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::mean(&reports))
}

/// Model and zero-filled metrics on the validation split.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct EvalSummary {
    pub model: MetricReport,
    pub zero_filled: MetricReport,
    pub edge_loss: f64,
}

pub fn evaluate_split(model: &EamriModel, samples: &[KSpaceSample]) -> Result<EvalSummary> {
    let (_, val) = split_indices(samples.len())?;
    let val: Vec<&KSpaceSample> = val.iter().map(|&i| &samples[i]).collect();
    let (stats, report) = evaluate(model, &val)?;
    Ok(EvalSummary {
        model: report,
        zero_filled: zero_filled_baseline(&val)?,
        edge_loss: stats.edge_loss,
    })
}

pub fn eval(checkpoint: &Path, dataset: &Path, out: &mut dyn Write) -> Result<EvalSummary> {
    let (model, _) = load_checkpoint(checkpoint)?;
    let (_, samples) = read_dataset(dataset)?;
    check_dataset(model.config(), &samples)?;
    let samples = with_edge_operator(&samples, model.config().edge_op)?;
    let s = evaluate_split(&model, &samples)?;
    writeln!(out, "{:<12} {:>10} {:>10} {:>10}", "", "PSNR (dB)", "SSIM", "NMSE").map_err(io_err)?;
    for (name, m) in [("model", s.model), ("zero-filled", s.zero_filled)] {
        writeln!(out, "{name:<12} {:>10.3} {:>10.4} {:>10.5}", m.psnr, m.ssim, m.nmse).map_err(io_err)?;
    }
    Ok(s)
}

/// Reconstructs sample `index` and writes `recon.pgm`, `target.pgm`,
/// `zero_filled.pgm`, `error.ppm`, `edge{t}.pgm` and `edge_gt.pgm`.
pub fn recon(checkpoint: &Path, dataset: &Path, index: usize, out_dir: &Path, out: &mut dyn Write) -> Result<MetricReport> {
    let (model, _) = load_checkpoint(checkpoint)?;
    let (_, samples) = read_dataset(dataset)?;
    check_dataset(model.config(), &samples)?;
    let sample = samples
        .get(index)
        .ok_or_else(|| Error::arg(format!("sample {index} out of range (dataset holds {})", samples.len())))?;
    ensure_dir(out_dir)?;
    let r = model.reconstruct(&sample.y, &sample.mask)?;
    let gt = sample.x_gt.abs();
    let pred = r.image.abs();
    let scale = gt.max();
    write_pgm16(&out_dir.join("recon.pgm"), &pred, scale)?;
    write_pgm16(&out_dir.join("target.pgm"), &gt, scale)?;
    write_pgm16(&out_dir.join("zero_filled.pgm"), &r.zero_filled.abs(), scale)?;
    let err: Vec<f64> = pred.data().iter().zip(gt.data()).map(|(a, b)| (a - b).abs()).collect();
    let err = RealTensor::new(gt.shape().to_vec(), err)?;
    write_heatmap(&out_dir.join("error.ppm"), &err, 0.25 * scale)?;
    for (t, e) in r.edges.iter().enumerate() {
        write_pgm16(&out_dir.join(format!("edge{t}.pgm")), e, 1.0)?;
    }
    write_pgm16(&out_dir.join("edge_gt.pgm"), &sample.edge_gt, 1.0)?;
    let m = MetricReport::of_images(&r.image, &sample.x_gt)?;
    writeln!(
        out,
        "sample {index}: psnr {:.3} dB  ssim {:.4}  nmse {:.6}; images in {}",
        m.psnr,
        m.ssim,
        m.nmse,
        out_dir.display()
    )
    .map_err(io_err)?;
    Ok(m)
}

/// Runs the finite-difference suite. Returns true when every check passes.
pub fn gradcheck(seed: u64, verbose: bool, out: &mut dyn Write) -> Result<bool> {
    let results = run_suite(seed)?;
    let failed = results.iter().filter(|r| !r.passed()).count();
    let worst = results.iter().map(|r| r.rel_err).fold(0.0, f64::max);
    for r in results.iter().filter(|r| verbose || !r.passed()) {
        writeln!(
            out,
            "{} {:<44} analytic {:+.6e} numeric {:+.6e} rel {:.2e} (tol {:.0e})",
            if r.passed() { "ok  " } else { "FAIL" },
            r.name,
            r.analytic,
            r.numeric,
            r.rel_err,
            r.tol
        )
        .map_err(io_err)?;
    }
    writeln!(out, "{} checks, {failed} failed, worst relative error {worst:.2e}", results.len()).map_err(io_err)?;
    Ok(failed == 0)
}

/// One row of the ablation table.
#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub label: String,
    pub variant: VariantKind,
    pub edge_op: EdgeOperator,
    pub parameters: usize,
    pub metrics: MetricReport,
}

/// Trains every variant with the configured edge operator, plus FULL with
/// the other operator, and prints parameter counts and validation metrics.
pub fn ablate(config: &ReconConfig, dataset: &Path, out_dir: &Path, out: &mut dyn Write) -> Result<Vec<AblationRow>> {
    let (_, samples) = read_dataset(dataset)?;
    let other = match config.edge_op {
        EdgeOperator::Sobel => EdgeOperator::Canny,
        EdgeOperator::Canny => EdgeOperator::Sobel,
    };
    let mut runs: Vec<(VariantKind, EdgeOperator)> = VariantKind::ALL.iter().map(|&v| (v, config.edge_op)).collect();
    runs.push((VariantKind::Full, other));
    let mut rows = Vec::new();
    for (variant, edge_op) in runs {
        let cfg = ReconConfig {
            variant,
            edge_op,
            ..config.clone()
        };
        let label = format!("{}-{}", variant.name(), edge_op.name());
        let data = with_edge_operator(&samples, edge_op)?;
        let summary = train_on(&cfg, &data, &out_dir.join(&label), None, &mut std::io::sink())?;
        let (model, _) = load_checkpoint(&summary.checkpoint)?;
        let eval = evaluate_split(&model, &data)?;
        writeln!(out, "{label:<12} params {:>8}  psnr {:.3}", summary.parameters, eval.model.psnr).map_err(io_err)?;
        rows.push(AblationRow {
            label,
            variant,
            edge_op,
            parameters: summary.parameters,
            metrics: eval.model,
        });
    }
    writeln!(out, "\n{:<12} {:>10} {:>10} {:>8} {:>9}", "run", "params", "PSNR", "SSIM", "NMSE").map_err(io_err)?;
    for r in &rows {
        writeln!(
            out,
            "{:<12} {:>10} {:>10.3} {:>8.4} {:>9.5}",
            r.label, r.parameters, r.metrics.psnr, r.metrics.ssim, r.metrics.nmse
        )
        .map_err(io_err)?;
    }
    let path = out_dir.join("ablation.json");
    let json = serde_json::to_string_pretty(&rows).expect("rows serialize");
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}
