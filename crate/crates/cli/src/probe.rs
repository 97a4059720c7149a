//! `gazelearn probe`: linear probes over frozen, globally pooled features.
//!
//! Output schema (`probe.json`): a JSON array with one record per layer,
//! `{"layer": str, "selected_l2": f, "val_f1": f, "test": {"per_class":
//! [{"class": str, "precision": f, "recall": f, "f1": f, "support": n},
//! ...], "macro_precision": f, "macro_recall": f, "macro_f1": f,
//! "confusion": [[n, ...], ...]}}`.

use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use gazelearn_core::data::manifest::load_dataset;
use gazelearn_core::eval::probe_sweep;
use gazelearn_core::model::{build_network, load_network, Network};
use gazelearn_core::{Error, Result};

use crate::config::{archive, NetSpec, RunConfig};
use crate::finetune::three_way;
use crate::Common;

#[derive(Args, Debug)]
pub struct ProbeArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint to probe, or "random" for an untrained network
    #[arg(long)]
    model: Option<String>,
    /// Labeled dataset directory
    #[arg(long)]
    data: Option<PathBuf>,
    /// Validation dataset directory (pass --test too, or neither)
    #[arg(long)]
    val: Option<PathBuf>,
    /// Test dataset directory
    #[arg(long)]
    test: Option<PathBuf>,
    /// "all", or a comma-separated subset of the registered probe layers
    #[arg(long, default_value = "all")]
    layers: String,
}

pub fn run(args: &ProbeArgs) -> Result<()> {
    let rc = RunConfig::from_arg(args.common.config.as_deref())?;
    let model = args
        .model
        .clone()
        .ok_or_else(|| Error::invalid("--model is required: a checkpoint path or \"random\""))?;
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

    let ds = load_dataset(&data_dir)?;
    eprintln!("loaded {} frames from {}", ds.records.len(), data_dir.display());
    let (split_used, train_ds, val_ds, test_ds) =
        three_way(ds, &args.val, &args.test, &rc, seed)?;

    let (net, net_spec): (Network<f32>, Option<NetSpec>) = match model.as_str() {
        "random" => {
            let ncfg = rc.resolve_net(train_ds.classes.len(), seed)?;
            eprintln!("probing random weights (seed {})", ncfg.seed);
            (build_network(&ncfg)?, Some(NetSpec::Inline(ncfg)))
        }
        path => {
            let (net, header) = load_network(path)?;
            eprintln!("probing checkpoint {path}");
            (net, Some(NetSpec::Inline(header.config)))
        }
    };

    let layers: Vec<String> = match args.layers.trim() {
        "all" => net.probe_names().iter().map(|s| s.to_string()).collect(),
        list => list.split(',').map(|s| s.trim().to_string()).collect(),
    };

    let pcfg = rc.probe.clone().unwrap_or_default();
    let resolved = RunConfig {
        data: Some(data_dir),
        val: args.val.clone(),
        test: args.test.clone(),
        out: Some(out.clone()),
        init: Some(model),
        net: net_spec,
        probe: Some(pcfg.clone()),
        split: split_used,
        seed: Some(seed),
        ..RunConfig::default()
    };
    archive(&out, &resolved)?;

    let reports = probe_sweep(&net, &layers, &train_ds, &val_ds, &test_ds, &pcfg)?;
    for r in &reports {
        eprintln!(
            "layer {}: test macro F1 {:.4} (val {:.4}, l2 {:.0e})",
            r.layer, r.test.macro_f1, r.val_f1, r.selected_l2
        );
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(out.join("probe.json"))?);
    serde_json::to_writer_pretty(&mut w, &reports)?;
    writeln!(w)?;
    w.flush()?;
    eprintln!("probe sweep written to {}", out.join("probe.json").display());
    Ok(())
}
