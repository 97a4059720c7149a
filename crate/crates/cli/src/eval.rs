//! `gazelearn eval`: saliency metrics or gaze error for a checkpoint or a
//! data-only static baseline.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use gazelearn_core::data::manifest::{load_dataset, DatasetManifest};
use gazelearn_core::eval::{
    evaluate_attention, predict_saliency, static_gaze_baseline, static_saliency_baseline,
    AttnPredictor, AttnTask,
};
use gazelearn_core::model::{load_network, receptive_field, Mode, Network};
use gazelearn_core::saliency::{save_salf_with_preview, SaliencyConfig, SaliencyTarget};
use gazelearn_core::{Error, Result};

use crate::config::{archive, RunConfig};
use crate::train::TaskArg;
use crate::Common;

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint to evaluate
    #[arg(long, conflicts_with = "baseline")]
    model: Option<PathBuf>,
    /// Data-only baseline instead of a model ("static")
    #[arg(long)]
    baseline: Option<String>,
    /// Task to score; defaults to the checkpoint's training task
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    /// Evaluation dataset directory
    #[arg(long)]
    data: Option<PathBuf>,
    /// Dataset the static baseline is fitted on; defaults to --data itself
    #[arg(long)]
    fit: Option<PathBuf>,
    /// Write the predicted map of every frame as a SALF file (plus preview)
    #[arg(long)]
    dump_saliency: bool,
}

pub fn run(args: &EvalArgs) -> Result<()> {
    let rc = RunConfig::from_arg(args.common.config.as_deref())?;
    let data_dir = args
        .data
        .clone()
        .or(rc.data.clone())
        .ok_or_else(|| Error::invalid("--data is required"))?;
    let out = args
        .common
        .out
        .clone()
        .or(rc.out.clone())
        .ok_or_else(|| Error::invalid("--out is required"))?;
    let seed = args.common.seed.or(rc.seed).unwrap_or(0);
    let scfg = rc.saliency.unwrap_or_default();
    scfg.validate()?;
    let ds = load_dataset(&data_dir)?;
    eprintln!("evaluating on {} frames from {}", ds.records.len(), data_dir.display());

    let mut resolved = RunConfig {
        data: Some(data_dir),
        out: Some(out.clone()),
        saliency: Some(scfg),
        seed: Some(seed),
        ..RunConfig::default()
    };

    enum Source {
        Net(Box<Network<f32>>),
        Map(SaliencyTarget, (usize, usize)),
        Point((f64, f64), (usize, usize)),
    }

    let (source, task) = match (&args.model, args.baseline.as_deref()) {
        (Some(path), None) => {
            let (net, header) = load_network::<f32>(path)?;
            let task = match args.task {
                Some(t) => AttnTask::from(t),
                None => task_from_metadata(&header.metadata)?,
            };
            eprintln!("loaded checkpoint {}", path.display());
            (Source::Net(Box::new(net)), task)
        }
        (None, Some("static")) => {
            let task = AttnTask::from(args.task.unwrap_or(TaskArg::Saliency));
            let fit_dir = args.fit.clone().or(rc.val.clone());
            let fit_ds;
            let fit: &DatasetManifest = match &fit_dir {
                Some(dir) => {
                    fit_ds = load_dataset(dir)?;
                    eprintln!("fitting the static baseline on {}", dir.display());
                    &fit_ds
                }
                None => {
                    eprintln!("fitting the static baseline on the evaluation set itself; pass --fit for a held-out fit");
                    &ds
                }
            };
            let ncfg = rc.resolve_net(ds.classes.len(), seed)?;
            let input = ncfg.input;
            resolved.net = Some(crate::config::NetSpec::Inline(ncfg.clone()));
            resolved.val = fit_dir;
            match task {
                AttnTask::Saliency => {
                    let stride = receptive_field(&ncfg, Mode::Attention)?.output.stride;
                    let map = fit_static_map(fit, input, stride, &scfg)?;
                    (Source::Map(map, input), task)
                }
                AttnTask::Gaze => {
                    let point = fit_static_point(fit, input)?;
                    eprintln!("static gaze point: ({:.2}, {:.2}) px", point.0, point.1);
                    (Source::Point(point, input), task)
                }
            }
        }
        (None, Some(other)) => {
            return Err(Error::invalid(format!("unknown baseline {other:?}; known: static")))
        }
        (None, None) => return Err(Error::invalid("pass --model or --baseline static")),
        (Some(_), Some(_)) => unreachable!("clap rejects the combination"),
    };

    let predictor = match &source {
        Source::Net(net) => AttnPredictor::Network(net),
        Source::Map(map, input) => AttnPredictor::StaticMap { map, input: *input },
        Source::Point(point, input) => AttnPredictor::StaticPoint { point: *point, input: *input },
    };

    archive(&out, &resolved)?;
    let report = evaluate_attention(&predictor, &ds, task, &scfg)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(out.join("metrics.json"))?);
    serde_json::to_writer_pretty(&mut w, &report)?;
    writeln!(w)?;
    w.flush()?;

    if args.dump_saliency {
        dump_maps(&predictor, &ds, out.join("saliency"))?;
    }
    eprintln!("metrics written to {}", out.join("metrics.json").display());
    Ok(())
}

impl From<TaskArg> for AttnTask {
    fn from(t: TaskArg) -> AttnTask {
        match t {
            TaskArg::Saliency => AttnTask::Saliency,
            TaskArg::Gaze => AttnTask::Gaze,
        }
    }
}

fn task_from_metadata(metadata: &serde_json::Value) -> Result<AttnTask> {
    match metadata.get("task").and_then(|v| v.as_str()) {
        Some("saliency") | None => Ok(AttnTask::Saliency),
        Some("gaze") => Ok(AttnTask::Gaze),
        Some(other) => Err(Error::invalid(format!(
            "checkpoint was trained for task {other:?}; pass --task to score it as saliency or gaze"
        ))),
    }
}

/// Mean training-set target map at head resolution, from the manifest's
/// normalized gaze directly (identical to the evaluation-side scaling).
fn fit_static_map(
    fit: &DatasetManifest,
    input: (usize, usize),
    stride: usize,
    scfg: &SaliencyConfig,
) -> Result<SaliencyTarget> {
    let mut maps = Vec::new();
    for rec in &fit.records {
        if rec.gaze.is_empty() {
            continue;
        }
        let gaze = denormalize(&rec.gaze, input);
        maps.push(gazelearn_core::eval::target_at_head(&gaze, input, stride, scfg)?);
    }
    if maps.is_empty() {
        return Err(Error::invalid("no frames with gaze to fit the static baseline on"));
    }
    static_saliency_baseline(&maps)
}

fn fit_static_point(fit: &DatasetManifest, input: (usize, usize)) -> Result<(f64, f64)> {
    let mut points = Vec::new();
    for rec in &fit.records {
        points.extend(denormalize(&rec.gaze, input));
    }
    if points.is_empty() {
        return Err(Error::invalid("no gaze points to fit the static baseline on"));
    }
    static_gaze_baseline(&points)
}

fn denormalize(gaze: &[[f64; 2]], input: (usize, usize)) -> Vec<(f64, f64)> {
    gaze.iter().map(|&[gx, gy]| (gx * input.1 as f64, gy * input.0 as f64)).collect()
}

/// One SALF (+ PGM preview) per evaluated frame, named by the frame's image
/// stem.
fn dump_maps(
    pred: &AttnPredictor<'_, f32>,
    ds: &DatasetManifest,
    dir: PathBuf,
) -> Result<()> {
    std::fs::create_dir_all(&dir)?;
    for idx in 0..ds.records.len() {
        let map;
        let grid: &SaliencyTarget = match pred {
            AttnPredictor::Network(net) => {
                let sample = ds.load_frame(idx)?;
                let (image, _) =
                    gazelearn_core::data::augment::prepare_plain(&sample, net.config.input.0, net.config.input.1)?;
                map = predict_saliency(net, &image)?;
                &map
            }
            AttnPredictor::StaticMap { map, .. } => map,
            AttnPredictor::StaticPoint { .. } => {
                return Err(Error::invalid("--dump-saliency needs a saliency predictor, not a point baseline"))
            }
        };
        let stem = Path::new(&ds.records[idx].image)
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::invalid(format!("unusable image path {:?}", ds.records[idx].image)))?
            .to_string();
        save_salf_with_preview(dir.join(format!("{stem}.salf")), grid.h(), grid.w(), grid.grid())?;
    }
    eprintln!("wrote {} saliency maps to {}", ds.records.len(), dir.display());
    Ok(())
}
