use crate::error::{Error, Result};
use crate::model::{BnStat, Network};
use crate::optim::{sgd_step, SgdState};
use crate::scalar::Scalar;
use crate::tape::{BnBatchStats, BnMode, Tape, Var};
use crate::tensor::Tensor;

/// Normalization running-statistics momentum: one fold of the batch-mean
/// statistics per optimizer step.
pub(crate) const BN_MOMENTUM: f64 = 0.1;

/// A sample materialized for one step: normalized input plus its target.
pub(crate) enum Supervision<E: Scalar> {
    /// Saliency grid at head resolution, KL-divergence loss.
    Map(Tensor<E>),
    /// Gaze point in input pixels, soft-argmax Euclidean loss.
    Point((f64, f64)),
    /// Class index, cross-entropy loss on the head logits.
    Class(usize),
}

pub(crate) struct Prepared<E: Scalar> {
    pub image: Tensor<E>,
    pub sup: Supervision<E>,
}

pub(crate) struct SampleOut<E: Scalar> {
    pub loss: f64,
    /// Per-parameter gradient contribution, aligned with `active`.
    pub grads: Vec<(usize, Option<Tensor<E>>)>,
    pub bn: Vec<(usize, BnBatchStats)>,
}

/// Forward pass and loss for one prepared sample on the given tape.
pub(crate) fn forward_loss<E: Scalar>(
    net: &Network<E>,
    tape: &mut Tape<E>,
    vars: &[Var],
    x: Var,
    sup: &Supervision<E>,
    bn: BnMode,
) -> Result<(Var, Vec<(usize, BnBatchStats)>)> {
    match sup {
        Supervision::Map(target) => {
            let out = net.attention_forward(tape, vars, x, bn)?;
            Ok((tape.kld_loss(target, out.saliency)?, out.trunk.bn))
        }
        Supervision::Point(p) => {
            let out = net.attention_forward(tape, vars, x, bn)?;
            let (h, w) = net.config.input;
            let point = tape.soft_argmax(out.saliency, h, w)?;
            Ok((tape.euclid_loss(*p, point)?, out.trunk.bn))
        }
        Supervision::Class(c) => {
            let out = net.classification_forward(tape, vars, x, bn)?;
            Ok((tape.cross_entropy(out.logits, *c)?, out.trunk.bn))
        }
    }
}

/// Forward, loss check, and backward for one sample. The backward seed is
/// 1/batch so summing contributions averages the batch gradient.
fn sample_pass<E: Scalar>(
    net: &Network<E>,
    prep: &Prepared<E>,
    inv_batch: f64,
    active: &[usize],
    bn: BnMode,
) -> Result<SampleOut<E>> {
    let mut tape = Tape::new(true);
    let vars = net.make_leaves(&mut tape);
    let x = tape.leaf(prep.image.clone());
    let (loss, bn_stats) = forward_loss(net, &mut tape, &vars, x, &prep.sup, bn)?;
    let value = tape.value(loss).data()[0].as_f64();
    if !value.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    let mut grads = tape.backward(loss, E::from_f64(inv_batch))?;
    let mut picked = Vec::with_capacity(active.len());
    for &i in active {
        let g = grads.take(vars[i]);
        if g.is_none() && !net.params[i].optional {
            return Err(Error::Disconnected(net.params[i].name.clone()));
        }
        picked.push((i, g));
    }
    Ok(SampleOut { loss: value, grads: picked, bn: bn_stats })
}

/// Per-sample passes for one batch, fanned out over worker threads. The
/// returned vector is in batch order regardless of thread count, and the
/// first error (again in batch order) wins.
pub(crate) fn run_batch<E: Scalar>(
    net: &Network<E>,
    batch: &[Prepared<E>],
    active: &[usize],
    bn: BnMode,
    threads: usize,
) -> Result<Vec<SampleOut<E>>> {
    let inv = 1.0 / batch.len() as f64;
    let workers = threads.clamp(1, batch.len());
    if workers == 1 {
        return batch.iter().map(|p| sample_pass(net, p, inv, active, bn)).collect();
    }
    let mut slots: Vec<Option<Result<SampleOut<E>>>> = Vec::new();
    slots.resize_with(batch.len(), || None);
    let chunk = batch.len().div_ceil(workers);
    std::thread::scope(|scope| {
        for (outs, preps) in slots.chunks_mut(chunk).zip(batch.chunks(chunk)) {
            scope.spawn(move || {
                for (slot, prep) in outs.iter_mut().zip(preps) {
                    *slot = Some(sample_pass(net, prep, inv, active, bn));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("every slot filled")).collect()
}

/// Reduce a batch in sample order — sum gradients into the parameters, fold
/// the mean normalization statistics — then step. A zero rate skips the
/// optimizer entirely so parameters stay bit-identical. Returns the summed
/// sample loss.
pub(crate) fn apply_batch<E: Scalar>(
    net: &mut Network<E>,
    state: &mut SgdState<E>,
    outs: Vec<SampleOut<E>>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<f64> {
    let mut loss_sum = 0.0;
    let mut bn_acc: Vec<(usize, BnBatchStats, usize)> = Vec::new();
    for out in outs {
        loss_sum += out.loss;
        for (i, g) in out.grads {
            if let Some(g) = g {
                for (d, s) in net.params[i].grad.data_mut().iter_mut().zip(g.data()) {
                    *d = *d + *s;
                }
            }
        }
        for (idx, stats) in out.bn {
            match bn_acc.iter_mut().find(|(i, _, _)| *i == idx) {
                Some((_, acc, n)) => {
                    for (a, m) in acc.mean.iter_mut().zip(&stats.mean) {
                        *a += m;
                    }
                    for (a, v) in acc.var.iter_mut().zip(&stats.var) {
                        *a += v;
                    }
                    *n += 1;
                }
                None => bn_acc.push((idx, stats, 1)),
            }
        }
    }
    let folds: Vec<(usize, BnBatchStats)> = bn_acc
        .into_iter()
        .map(|(idx, mut acc, n)| {
            let k = 1.0 / n as f64;
            for m in &mut acc.mean {
                *m *= k;
            }
            for v in &mut acc.var {
                *v *= k;
            }
            (idx, acc)
        })
        .collect();
    net.update_running_stats(&folds, BN_MOMENTUM);
    if lr > 0.0 {
        sgd_step(&mut net.params, state, lr, momentum, weight_decay)?;
    }
    net.zero_grads();
    Ok(loss_sum)
}

/// A non-finite loss during a training step becomes the numeric abort with
/// its position; everything else passes through.
pub(crate) fn numeric_abort(e: Error, epoch: usize, batch: usize, lr: f64) -> Error {
    match e {
        Error::NonFinite(_) => Error::Numeric { epoch, batch, lr },
        e => e,
    }
}

/// Freeze every parameter outside `trainable`, returning the prior flags.
pub(crate) fn set_trainable<E: Scalar>(net: &mut Network<E>, trainable: &[bool]) -> Vec<bool> {
    net.params
        .iter_mut()
        .zip(trainable)
        .map(|(p, &t)| std::mem::replace(&mut p.frozen, !t))
        .collect()
}

pub(crate) fn restore_frozen<E: Scalar>(net: &mut Network<E>, saved: Vec<bool>) {
    for (p, f) in net.params.iter_mut().zip(saved) {
        p.frozen = f;
    }
}

/// Parameter values and normalization statistics at a point in time, for
/// best-validation checkpoint retention.
pub(crate) struct Snapshot<E: Scalar> {
    values: Vec<Tensor<E>>,
    stats: Vec<BnStat<E>>,
}

pub(crate) fn snapshot<E: Scalar>(net: &Network<E>) -> Snapshot<E> {
    Snapshot {
        values: net.params.iter().map(|p| p.value.clone()).collect(),
        stats: net.stats.clone(),
    }
}

pub(crate) fn restore_snapshot<E: Scalar>(net: &mut Network<E>, snap: Snapshot<E>) {
    for (p, v) in net.params.iter_mut().zip(snap.values) {
        p.value = v;
    }
    net.stats = snap.stats;
}
