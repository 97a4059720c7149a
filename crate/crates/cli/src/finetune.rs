//! `gazelearn finetune`: end-to-end classification fine-tuning from an
//! attention checkpoint or from random initialization.

use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use gazelearn_core::data::manifest::{load_dataset, DatasetManifest};
use gazelearn_core::eval::evaluate_classifier;
use gazelearn_core::model::{build_network, load_network, save_network, Mode};
use gazelearn_core::train::{finetune_classifier, Task};
use gazelearn_core::{Error, Result};

use crate::config::{archive, NetSpec, RunConfig, TrainSpec};
use crate::split::split_by_scan;
use crate::train::log_to_stderr;
use crate::Common;

#[derive(Args, Debug)]
pub struct FinetuneArgs {
    #[command(flatten)]
    common: Common,
    /// Initializer: a checkpoint path, or "random"
    #[arg(long)]
    init: Option<String>,
    /// Labeled dataset directory
    #[arg(long)]
    data: Option<PathBuf>,
    /// Validation dataset directory (pass --test too, or neither)
    #[arg(long)]
    val: Option<PathBuf>,
    /// Test dataset directory for the final report
    #[arg(long)]
    test: Option<PathBuf>,
}

pub fn run(args: &FinetuneArgs) -> Result<()> {
    let rc = RunConfig::from_arg(args.common.config.as_deref())?;
    let init = args
        .init
        .clone()
        .or(rc.init.clone())
        .ok_or_else(|| Error::invalid("--init is required: a checkpoint path or \"random\""))?;
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
    let labeled = ds.records.iter().filter(|r| r.label.is_some()).count();
    if labeled == 0 {
        return Err(Error::invalid(format!(
            "the dataset at {} has no labels; fine-tuning needs labeled frames",
            data_dir.display()
        )));
    }
    eprintln!("loaded {} frames ({} labeled) from {}", ds.records.len(), labeled, data_dir.display());

    let (split_used, train_ds, val_ds, test_ds) =
        three_way(ds, &args.val, &args.test, &rc, seed)?;

    let mut tc = rc.resolve_train(Task::Classify, seed)?;
    if let Some(t) = args.common.threads.or(rc.threads) {
        tc.threads = t;
    }

    let (mut net, net_spec) = match init.as_str() {
        "random" => {
            let ncfg = rc.resolve_net(train_ds.classes.len(), seed)?;
            eprintln!("random initialization at input {}×{}", ncfg.input.0, ncfg.input.1);
            (build_network::<f32>(&ncfg)?, Some(NetSpec::Inline(ncfg)))
        }
        path => {
            let (mut net, header) = load_network::<f32>(path)?;
            if header.classes != train_ds.classes {
                return Err(Error::invalid(format!(
                    "checkpoint vocabulary {:?} does not match the dataset vocabulary {:?}",
                    header.classes, train_ds.classes
                )));
            }
            if net.mode() == Mode::Attention {
                eprintln!("undilating attention checkpoint for classification fine-tuning");
                net.undilate_for_classification()?;
            }
            eprintln!("loaded checkpoint {path}");
            (net, Some(NetSpec::Inline(header.config)))
        }
    };

    let resolved = RunConfig {
        data: Some(data_dir),
        val: args.val.clone(),
        test: args.test.clone(),
        out: Some(out.clone()),
        init: Some(init.clone()),
        net: net_spec,
        train: Some(TrainSpec::Inline(tc.clone())),
        split: split_used,
        seed: Some(seed),
        threads: Some(tc.threads),
        ..RunConfig::default()
    };
    archive(&out, &resolved)?;

    let log = finetune_classifier(&mut net, &train_ds, &val_ds, &tc)?;
    log_to_stderr(&log);

    let report = evaluate_classifier(&net, &test_ds)?;
    save_network(
        out.join("model.gazm"),
        &net,
        &train_ds.classes,
        serde_json::json!({ "task": "classify", "seed": seed, "init": init }),
    )?;
    log.save(out.join("train-log.jsonl"))?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(out.join("report.json"))?);
    serde_json::to_writer_pretty(&mut w, &report)?;
    writeln!(w)?;
    w.flush()?;
    eprintln!(
        "test macro F1 {:.4} over {} classes; report at {}",
        report.macro_f1,
        report.per_class.len(),
        out.join("report.json").display()
    );
    Ok(())
}

/// Resolve train/val/test: explicit directories for both, or a scan-level
/// split of the base dataset (default weights 2:1:1).
pub(crate) fn three_way(
    ds: DatasetManifest,
    val: &Option<PathBuf>,
    test: &Option<PathBuf>,
    rc: &RunConfig,
    seed: u64,
) -> Result<(Option<Vec<usize>>, DatasetManifest, DatasetManifest, DatasetManifest)> {
    match (val, test) {
        (Some(v), Some(t)) => Ok((None, ds, load_dataset(v)?, load_dataset(t)?)),
        (None, None) => {
            let weights = rc.split.clone().unwrap_or_else(|| vec![2, 1, 1]);
            if weights.len() != 3 {
                return Err(Error::invalid(format!(
                    "this command splits into train/val/test; got {} split weights",
                    weights.len()
                )));
            }
            let mut parts = split_by_scan(&ds, &weights, seed)?;
            let test = parts.pop().expect("three parts");
            let val = parts.pop().expect("three parts");
            let train = parts.pop().expect("three parts");
            eprintln!(
                "scan-level {}:{}:{} split: {}/{}/{} frames",
                weights[0],
                weights[1],
                weights[2],
                train.records.len(),
                val.records.len(),
                test.records.len()
            );
            Ok((Some(weights), train, val, test))
        }
        _ => Err(Error::invalid("pass both --val and --test, or neither")),
    }
}
