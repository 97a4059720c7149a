use std::time::Instant;

use crate::data::augment::{augment_classification, prepare_plain, AugmentConfig};
use crate::data::manifest::DatasetManifest;
use crate::data::sampler::BalancedSampler;
use crate::error::{Error, Result};
use crate::eval::{confusion_matrix, macro_prf};
use crate::model::{Mode, Network};
use crate::optim::SgdState;
use crate::rng::{derive_stream, RngStream};
use crate::scalar::Scalar;
use crate::tape::{BnMode, Tape};

use super::config::{Task, TrainConfig, TAG_SAMPLE};
use super::engine::{
    apply_batch, numeric_abort, restore_frozen, restore_snapshot, run_batch, set_trainable,
    snapshot, Prepared, Snapshot, Supervision,
};
use super::log::{EpochLog, TrainLog};

/// Fine-tune the classification head (and, unless frozen, the trunk) on
/// labeled frames. Epochs draw `samples_per_epoch` indices from the balanced
/// sampler — foreground and background alternating, foreground classes
/// uniform — and the parameters with the best validation macro-F1 are what
/// the network holds on return.
pub fn finetune_classifier<E: Scalar>(
    net: &mut Network<E>,
    train: &DatasetManifest,
    val: &DatasetManifest,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    if cfg.task != Task::Classify {
        return Err(Error::invalid("fine-tuning wants the classify task"));
    }
    if net.mode() != Mode::Classification {
        return Err(Error::invalid(
            "fine-tuning wants the network in classification mode; undilate first",
        ));
    }
    if train.classes != val.classes {
        return Err(Error::invalid("training and validation class vocabularies differ"));
    }
    if net.config.classes != train.classes.len() {
        return Err(Error::invalid(format!(
            "network head has {} classes but the vocabulary has {}",
            net.config.classes,
            train.classes.len()
        )));
    }
    let labels = label_ids(train)?;
    let sampler = BalancedSampler::new(&labels, train.classes.len(), cfg.sampler_stream())?;
    let labeled = labels.iter().flatten().count();
    let active = net.active_param_ids(Mode::Classification);
    let mut trainable = vec![false; net.params.len()];
    for &i in &active {
        trainable[i] = !cfg.freeze_trunk || net.params[i].name.starts_with("cls.");
    }
    let saved = set_trainable(net, &trainable);
    let result = run_epochs(net, train, val, cfg, &labels, sampler, labeled, &active);
    restore_frozen(net, saved);
    result
}

#[allow(clippy::too_many_arguments)]
fn run_epochs<E: Scalar>(
    net: &mut Network<E>,
    train: &DatasetManifest,
    val: &DatasetManifest,
    cfg: &TrainConfig,
    labels: &[Option<usize>],
    mut sampler: BalancedSampler,
    labeled: usize,
    active: &[usize],
) -> Result<TrainLog> {
    let input = net.config.input;
    let aug = AugmentConfig::classification();
    // A frozen trunk keeps its normalization statistics too, so its features
    // stay exactly the ones the head is being fit to.
    let bn = if cfg.freeze_trunk { BnMode::Eval } else { BnMode::Train };
    let per_epoch = cfg.samples_per_epoch.unwrap_or(labeled);
    let mut state = SgdState::new(&net.params);
    net.zero_grads();
    let mut log = TrainLog::default();
    let mut best: Option<(f64, Snapshot<E>)> = None;
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let lr = cfg.lr_at(epoch);
        let picks = sampler.take(per_epoch);
        let mut loss_sum = 0.0;
        for (b, chunk) in picks.chunks(cfg.batch_size).enumerate() {
            let mut batch = Vec::with_capacity(chunk.len());
            for (k, &idx) in chunk.iter().enumerate() {
                let pos = (b * cfg.batch_size + k) as u64;
                let mut rng =
                    RngStream::new(cfg.seed, derive_stream(cfg.seed, &[TAG_SAMPLE, epoch as u64, pos]));
                let sample = train.load_frame(idx)?;
                let class = labels[idx].expect("sampler yields labeled indices");
                let image = augment_classification(&sample, &aug, input.0, input.1, &mut rng)?;
                batch.push(Prepared { image: image.cast::<E>(), sup: Supervision::Class(class) });
            }
            let outs = run_batch(net, &batch, active, bn, cfg.threads)
                .map_err(|e| numeric_abort(e, epoch, b, lr))?;
            loss_sum += apply_batch(net, &mut state, outs, lr, cfg.momentum, cfg.weight_decay)?;
        }
        let train_loss = loss_sum / picks.len() as f64;
        let (val_loss, val_f1) = validation_scores(net, val)?;
        if best.as_ref().is_none_or(|(b, _)| val_f1 > *b) {
            best = Some((val_f1, snapshot(net)));
        }
        log.push(EpochLog {
            epoch,
            lr,
            train_loss,
            val_loss,
            val_metric: Some(val_f1),
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    if let Some((_, snap)) = best {
        restore_snapshot(net, snap);
    }
    Ok(log)
}

/// Mean cross-entropy and macro-F1 (background excluded) over the labeled
/// frames of a dataset, un-augmented and in eval mode; exactly what the
/// fine-tuning loop logs per epoch. Touches no network state.
pub fn validation_scores<E: Scalar>(net: &Network<E>, ds: &DatasetManifest) -> Result<(f64, f64)> {
    if net.mode() != Mode::Classification {
        return Err(Error::invalid(
            "classifier validation wants the network in classification mode",
        ));
    }
    let labels = label_ids(ds)?;
    let k = ds.classes.len();
    let (h, w) = net.config.input;
    let mut truths = Vec::new();
    let mut preds = Vec::new();
    let mut loss_sum = 0.0;
    for (idx, label) in labels.iter().enumerate() {
        let Some(class) = label else { continue };
        let sample = ds.load_frame(idx)?;
        let (image, _) = prepare_plain(&sample, h, w)?;
        let mut tape = Tape::new(false);
        let vars = net.make_leaves(&mut tape);
        let x = tape.leaf(image.cast::<E>());
        let out = net.classification_forward(&mut tape, &vars, x, BnMode::Eval)?;
        let loss = tape.cross_entropy(out.logits, *class)?;
        let v = tape.value(loss).data()[0].as_f64();
        if !v.is_finite() {
            return Err(Error::NonFinite("validation loss".into()));
        }
        loss_sum += v;
        let pred = tape
            .value(out.probs)
            .data()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.as_f64().partial_cmp(&b.1.as_f64()).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        truths.push(*class);
        preds.push(pred);
    }
    if truths.is_empty() {
        return Err(Error::invalid("validation set has no labeled frames"));
    }
    let cm = confusion_matrix(&truths, &preds, k)?;
    let included: Vec<usize> = (0..k - 1).collect();
    let report = macro_prf(&cm, &ds.classes, &included)?;
    Ok((loss_sum / truths.len() as f64, report.macro_f1))
}

fn label_ids(ds: &DatasetManifest) -> Result<Vec<Option<usize>>> {
    ds.records
        .iter()
        .map(|r| match &r.label {
            None => Ok(None),
            Some(name) => ds
                .classes
                .iter()
                .position(|c| c == name)
                .map(Some)
                .ok_or_else(|| Error::invalid(format!("label {name:?} missing from vocabulary"))),
        })
        .collect()
}
