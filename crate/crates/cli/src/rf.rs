//! `gazelearn rf`: receptive-field geometry of a network config, per probe
//! point, for classification and attention modes side by side. Scales that
//! change under dilation are shown in parentheses.

use clap::{Args, ValueEnum};
use gazelearn_core::model::{receptive_field, Mode, ProbeField};
use gazelearn_core::Result;

use crate::config::RunConfig;
use crate::Common;

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Classification,
    Attention,
    Both,
}

#[derive(Args, Debug)]
pub struct RfArgs {
    #[command(flatten)]
    common: Common,
    /// Which mode's geometry to print
    #[arg(long, value_enum, default_value = "both")]
    mode: ModeArg,
}

pub fn run(args: &RfArgs) -> Result<()> {
    let rc = RunConfig::from_arg(args.common.config.as_deref())?;
    // Class count and seed do not move any geometry; placeholders suffice
    // when the config is a named family.
    let cfg = rc.resolve_net(2, args.common.seed.or(rc.seed).unwrap_or(0))?;
    println!("input {}×{}", cfg.input.0, cfg.input.1);
    match args.mode {
        ModeArg::Classification => print_single(&cfg, Mode::Classification)?,
        ModeArg::Attention => print_single(&cfg, Mode::Attention)?,
        ModeArg::Both => print_both(&cfg)?,
    }
    Ok(())
}

fn extent(p: &ProbeField) -> String {
    format!("{}×{}", p.extent.0, p.extent.1)
}

fn rows(info: &gazelearn_core::model::ReceptiveFieldInfo) -> Vec<&ProbeField> {
    // The trunk output coincides with the last probe point, so the probe
    // list alone is the whole story.
    info.probes.iter().collect()
}

fn print_single(cfg: &gazelearn_core::model::NetworkConfig, mode: Mode) -> Result<()> {
    let info = receptive_field(cfg, mode)?;
    println!("{:<12} {:>5} {:>9} {:>7} {:>8}", "probe", "ch", "extent", "rf", "scale");
    for p in rows(&info) {
        println!(
            "{:<12} {:>5} {:>9} {:>7} {:>8}",
            p.name,
            p.channels,
            extent(p),
            p.rf_px,
            format!("1/{}", p.stride)
        );
    }
    Ok(())
}

/// Both modes in one table. The scale column shows the classification
/// scale, with the attention-mode scale in parentheses where the removed
/// strides (turned into dilation) leave the map finer.
fn print_both(cfg: &gazelearn_core::model::NetworkConfig) -> Result<()> {
    let cls = receptive_field(cfg, Mode::Classification)?;
    let attn = receptive_field(cfg, Mode::Attention)?;
    println!(
        "{:<12} {:>5} {:>12} {:>7} {:>12} {:>7}   {}",
        "probe", "ch", "cls-extent", "cls-rf", "attn-extent", "attn-rf", "scale"
    );
    for (c, a) in rows(&cls).iter().zip(rows(&attn).iter()) {
        let scale = if c.stride == a.stride {
            format!("1/{}", c.stride)
        } else {
            format!("1/{} (1/{})", c.stride, a.stride)
        };
        println!(
            "{:<12} {:>5} {:>12} {:>7} {:>12} {:>7}   {}",
            c.name,
            c.channels,
            extent(c),
            c.rf_px,
            extent(a),
            a.rf_px,
            scale
        );
    }
    Ok(())
}
