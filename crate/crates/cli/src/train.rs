//! `gazelearn train`: attention pre-training on the saliency or gaze task.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use gazelearn_core::data::manifest::load_dataset;
use gazelearn_core::model::{build_network, save_network};
use gazelearn_core::train::{train_attention, Task, TrainLog};
use gazelearn_core::{Error, Result};

use crate::config::{archive, NetSpec, RunConfig, TrainSpec};
use crate::split::split_by_scan;
use crate::Common;

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TaskArg {
    Saliency,
    Gaze,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::Saliency => Task::Saliency,
            TaskArg::Gaze => Task::Gaze,
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Pre-training task
    #[arg(long, value_enum)]
    task: TaskArg,
    /// Dataset directory
    #[arg(long)]
    data: Option<PathBuf>,
    /// Validation dataset directory; omitted, a scan-level split of --data
    #[arg(long)]
    val: Option<PathBuf>,
}

pub fn run(args: &TrainArgs) -> Result<()> {
    let rc = RunConfig::from_arg(args.common.config.as_deref())?;
    let task = Task::from(args.task);
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
    let seed = args.common.seed.or(rc.seed).or(rc.train_seed()).unwrap_or(0);

    let ds = load_dataset(&data_dir)?;
    eprintln!("loaded {} frames from {}", ds.records.len(), data_dir.display());
    let weights = rc.split.clone().unwrap_or_else(|| vec![2, 1]);
    let (train_ds, val_ds, val_path) = match &args.val {
        Some(dir) => (ds, load_dataset(dir)?, Some(dir.clone())),
        None => {
            if weights.len() != 2 {
                return Err(Error::invalid(format!(
                    "training splits into train/val; got {} split weights",
                    weights.len()
                )));
            }
            let mut parts = split_by_scan(&ds, &weights, seed)?;
            let val = parts.pop().expect("two parts");
            let train = parts.pop().expect("two parts");
            eprintln!(
                "scan-level {}:{} split: {} train frames, {} val frames",
                weights[0],
                weights[1],
                train.records.len(),
                val.records.len()
            );
            (train, val, None)
        }
    };

    let mut tc = rc.resolve_train(task, seed)?;
    if let Some(t) = args.common.threads.or(rc.threads) {
        tc.threads = t;
    }
    let scfg = rc.saliency.unwrap_or_default();
    let ncfg = rc.resolve_net(train_ds.classes.len(), seed)?;
    let resolved = RunConfig {
        data: Some(data_dir),
        val: val_path,
        out: Some(out.clone()),
        net: Some(NetSpec::Inline(ncfg.clone())),
        train: Some(TrainSpec::Inline(tc.clone())),
        saliency: Some(scfg),
        split: args.val.is_none().then_some(weights),
        seed: Some(seed),
        threads: Some(tc.threads),
        ..RunConfig::default()
    };
    archive(&out, &resolved)?;

    let mut net = build_network::<f32>(&ncfg)?;
    net.dilate_for_attention()?;
    eprintln!("dilated network for attention training ({} parameters)", net.params.len());

    let task_name = match task {
        Task::Saliency => "saliency",
        Task::Gaze => "gaze",
        Task::Classify => unreachable!("train takes saliency|gaze"),
    };
    let log = train_attention(&mut net, &train_ds, &val_ds, &tc, &scfg)?;
    log_to_stderr(&log);

    save_network(
        out.join("model.gazm"),
        &net,
        &train_ds.classes,
        serde_json::json!({ "task": task_name, "seed": seed }),
    )?;
    log.save(out.join("train-log.jsonl"))?;
    let best = log
        .epochs
        .iter()
        .min_by(|a, b| a.val_loss.total_cmp(&b.val_loss))
        .expect("at least one epoch");
    eprintln!(
        "kept epoch {} (val loss {:.6}); checkpoint at {}",
        best.epoch,
        best.val_loss,
        out.join("model.gazm").display()
    );
    Ok(())
}

pub(crate) fn log_to_stderr(log: &TrainLog) {
    for e in &log.epochs {
        let metric = e.val_metric.map(|m| format!(", val F1 {m:.4}")).unwrap_or_default();
        eprintln!(
            "epoch {}: lr {:.6}, train loss {:.6}, val loss {:.6}{} ({:.1}s)",
            e.epoch, e.lr, e.train_loss, e.val_loss, metric, e.seconds
        );
    }
}
