use std::time::Instant;

use crate::data::augment::{augment_attention, prepare_plain, AugmentConfig};
use crate::data::manifest::DatasetManifest;
use crate::error::{Error, Result};
use crate::eval::target_at_head;
use crate::median::geometric_median;
use crate::model::{receptive_field, Mode, Network};
use crate::optim::SgdState;
use crate::rng::{derive_stream, RngStream};
use crate::saliency::SaliencyConfig;
use crate::scalar::Scalar;
use crate::tape::{BnMode, Tape};
use crate::tensor::Tensor;

use super::config::{Task, TrainConfig, TAG_ORDER, TAG_SAMPLE};
use super::engine::{
    apply_batch, forward_loss, numeric_abort, restore_frozen, restore_snapshot, run_batch,
    set_trainable, snapshot, Prepared, Snapshot, Supervision,
};
use super::log::{EpochLog, TrainLog};

/// Pre-train the attention head on the saliency or gaze task. Each epoch is
/// one shuffled pass over the training set (or `samples_per_epoch` of it),
/// with gradients averaged per batch; validation runs un-augmented in eval
/// mode after every epoch, and the best-validation-loss parameters are what
/// the network holds on return.
pub fn train_attention<E: Scalar>(
    net: &mut Network<E>,
    train: &DatasetManifest,
    val: &DatasetManifest,
    cfg: &TrainConfig,
    scfg: &SaliencyConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    if cfg.task == Task::Classify {
        return Err(Error::invalid("attention training wants the saliency or gaze task"));
    }
    if net.mode() != Mode::Attention {
        return Err(Error::invalid("attention training wants the network in attention mode"));
    }
    if train.records.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if val.records.is_empty() {
        return Err(Error::invalid("validation set is empty"));
    }
    let active = net.active_param_ids(Mode::Attention);
    let mut trainable = vec![false; net.params.len()];
    for &i in &active {
        trainable[i] = true;
    }
    let saved = set_trainable(net, &trainable);
    let result = run_epochs(net, train, val, cfg, scfg, &active);
    restore_frozen(net, saved);
    result
}

fn run_epochs<E: Scalar>(
    net: &mut Network<E>,
    train: &DatasetManifest,
    val: &DatasetManifest,
    cfg: &TrainConfig,
    scfg: &SaliencyConfig,
    active: &[usize],
) -> Result<TrainLog> {
    let stride = receptive_field(&net.config, Mode::Attention)?.output.stride;
    let input = net.config.input;
    let aug = AugmentConfig::attention();
    let mut state = SgdState::new(&net.params);
    net.zero_grads();
    let mut log = TrainLog::default();
    let mut best: Option<(f64, Snapshot<E>)> = None;
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let lr = cfg.lr_at(epoch);
        let mut order: Vec<usize> = (0..train.records.len()).collect();
        RngStream::new(cfg.seed, derive_stream(cfg.seed, &[TAG_ORDER, epoch as u64])).shuffle(&mut order);
        if let Some(n) = cfg.samples_per_epoch {
            order.truncate(n);
        }
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut batch = Vec::with_capacity(chunk.len());
            for (k, &idx) in chunk.iter().enumerate() {
                let pos = (b * cfg.batch_size + k) as u64;
                let mut rng =
                    RngStream::new(cfg.seed, derive_stream(cfg.seed, &[TAG_SAMPLE, epoch as u64, pos]));
                let sample = train.load_frame(idx)?;
                if sample.gaze.is_empty() {
                    return Err(Error::invalid(format!(
                        "frame {}/{} has no gaze points",
                        sample.scan, sample.frame
                    )));
                }
                let (image, gaze) = augment_attention(&sample, &aug, input.0, input.1, &mut rng)?;
                let sup = supervision(&gaze, cfg.task, scfg, input, stride)?;
                batch.push(Prepared { image: image.cast::<E>(), sup });
            }
            let outs = run_batch(net, &batch, active, BnMode::Train, cfg.threads)
                .map_err(|e| numeric_abort(e, epoch, b, lr))?;
            loss_sum += apply_batch(net, &mut state, outs, lr, cfg.momentum, cfg.weight_decay)?;
        }
        let train_loss = loss_sum / order.len() as f64;
        let val_loss = validation_loss(net, val, cfg.task, scfg)?;
        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, snapshot(net)));
        }
        log.push(EpochLog {
            epoch,
            lr,
            train_loss,
            val_loss,
            val_metric: None,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    if let Some((_, snap)) = best {
        restore_snapshot(net, snap);
    }
    Ok(log)
}

fn supervision<E: Scalar>(
    gaze: &[(f64, f64)],
    task: Task,
    scfg: &SaliencyConfig,
    input: (usize, usize),
    stride: usize,
) -> Result<Supervision<E>> {
    match task {
        Task::Saliency => {
            let t = target_at_head(gaze, input, stride, scfg)?;
            let grid: Vec<E> = t.grid().iter().map(|&v| E::from_f64(v)).collect();
            Ok(Supervision::Map(Tensor::new(vec![t.h(), t.w()], grid)?))
        }
        Task::Gaze => Ok(Supervision::Point(geometric_median(gaze, 1e-9, 10_000)?.point)),
        Task::Classify => Err(Error::invalid("classification has no attention supervision")),
    }
}

/// Mean task loss over a dataset, un-augmented and in eval mode; exactly the
/// quantity the training loop logs as `val_loss`. Touches no network state.
pub fn validation_loss<E: Scalar>(
    net: &Network<E>,
    ds: &DatasetManifest,
    task: Task,
    scfg: &SaliencyConfig,
) -> Result<f64> {
    if net.mode() != Mode::Attention {
        return Err(Error::invalid("attention validation wants the network in attention mode"));
    }
    if ds.records.is_empty() {
        return Err(Error::invalid("validation set is empty"));
    }
    let stride = receptive_field(&net.config, Mode::Attention)?.output.stride;
    let input = net.config.input;
    let mut sum = 0.0;
    for idx in 0..ds.records.len() {
        let sample = ds.load_frame(idx)?;
        if sample.gaze.is_empty() {
            return Err(Error::invalid(format!(
                "frame {}/{} has no gaze points",
                sample.scan, sample.frame
            )));
        }
        let (image, gaze) = prepare_plain(&sample, input.0, input.1)?;
        let sup = supervision::<E>(&gaze, task, scfg, input, stride)?;
        let mut tape = Tape::new(false);
        let vars = net.make_leaves(&mut tape);
        let x = tape.leaf(image.cast::<E>());
        let (loss, _) = forward_loss(net, &mut tape, &vars, x, &sup, BnMode::Eval)?;
        let v = tape.value(loss).data()[0].as_f64();
        if !v.is_finite() {
            return Err(Error::NonFinite("validation loss".into()));
        }
        sum += v;
    }
    Ok(sum / ds.records.len() as f64)
}
