//! Triplet and two-branch objectives with their backward passes.

use super::{Dropout, TowerTrace, TripletModel};
use crate::error::{Error, Result};
use crate::numerics::{bce_with_logit, bce_with_logit_grad, sigmoid_stable, Matrix, RngState};

/// Feature rows for a batch of triplets, row `r` of each matrix belonging to
/// the same example.
#[derive(Clone, Debug)]
pub struct TripletBatch {
    pub users: Matrix,
    pub items_i: Matrix,
    pub items_j: Matrix,
    /// `PairLabel` targets (0 or 1).
    pub labels: Vec<f64>,
}

/// Feature rows for (user, item, match) examples.
#[derive(Clone, Debug)]
pub struct PairBatch {
    pub users: Matrix,
    pub items: Matrix,
    pub labels: Vec<f64>,
}

/// Dropout masks of one forward pass. Item masks cover the stacked item
/// rows (the `i` rows followed by the `j` rows for triplets).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BatchMasks {
    pub user: Vec<Matrix>,
    pub item: Vec<Matrix>,
}

pub enum Mode<'a> {
    Inference,
    Train(&'a mut RngState),
    /// Training-mode pass that replays previously drawn masks.
    Frozen(&'a BatchMasks),
}

impl Mode<'_> {
    pub fn training(rng: &mut RngState, training: bool) -> Mode<'_> {
        if training {
            Mode::Train(rng)
        } else {
            Mode::Inference
        }
    }
}

#[derive(Clone, Debug)]
pub struct LossOutput {
    /// Mean loss over the batch.
    pub loss: f64,
    pub per_sample: Vec<f64>,
    /// Logit of each example: `o = D(u,i) − D(u,j)` for triplets, `−D(u,i)` for pairs.
    pub logits: Vec<f64>,
    pub masks: BatchMasks,
}

struct Forward {
    user: TowerTrace,
    items: TowerTrace,
    masks: BatchMasks,
}

fn run_towers(
    model: &TripletModel,
    users: &Matrix,
    items: &Matrix,
    mode: Mode<'_>,
) -> Result<Forward> {
    let (user, items) = match mode {
        Mode::Inference => (
            model.user_tower.forward(users, Dropout::Off)?,
            model.item_tower.forward(items, Dropout::Off)?,
        ),
        Mode::Train(rng) => {
            let u = model.user_tower.forward(users, Dropout::Sample(rng))?;
            let i = model.item_tower.forward(items, Dropout::Sample(rng))?;
            (u, i)
        }
        Mode::Frozen(m) => (
            model.user_tower.forward(users, Dropout::Frozen(&m.user))?,
            model.item_tower.forward(items, Dropout::Frozen(&m.item))?,
        ),
    };
    let masks = BatchMasks {
        user: user.masks(),
        item: items.masks(),
    };
    Ok(Forward { user, items, masks })
}

fn check_batch(users: &Matrix, others: &[&Matrix], labels: &[f64]) -> Result<()> {
    let n = users.rows();
    if n == 0 {
        return Err(Error::Data("empty batch".into()));
    }
    for m in others {
        if m.rows() != n {
            return Err(Error::Shape {
                op: "batch rows",
                left: users.shape(),
                right: m.shape(),
            });
        }
    }
    if labels.len() != n {
        return Err(Error::Data(format!(
            "batch has {n} rows but {} labels",
            labels.len()
        )));
    }
    Ok(())
}

fn check_finite(per_sample: &[f64]) -> Result<()> {
    let rows: Vec<usize> = per_sample
        .iter()
        .enumerate()
        .filter(|(_, l)| !l.is_finite())
        .map(|(r, _)| r)
        .collect();
    if rows.is_empty() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss {
            epoch: 0,
            batch: 0,
            rows,
        })
    }
}

fn triplet_forward(
    model: &TripletModel,
    batch: &TripletBatch,
    mode: Mode<'_>,
) -> Result<(Forward, LossOutput)> {
    check_batch(
        &batch.users,
        &[&batch.items_i, &batch.items_j],
        &batch.labels,
    )?;
    let n = batch.users.rows();
    let stacked = batch.items_i.vstack(&batch.items_j)?;
    let fwd = run_towers(model, &batch.users, &stacked, mode)?;
    let zu = &fwd.user.output;
    let zs = &fwd.items.output;
    let mut logits = Vec::with_capacity(n);
    let mut per_sample = Vec::with_capacity(n);
    for r in 0..n {
        let o = model
            .head
            .distance_difference(zu.row(r), zs.row(r), zs.row(n + r));
        logits.push(o);
        per_sample.push(bce_with_logit(o, batch.labels[r]));
    }
    check_finite(&per_sample)?;
    let loss = per_sample.iter().sum::<f64>() / n as f64;
    let out = LossOutput {
        loss,
        per_sample,
        logits,
        masks: fwd.masks.clone(),
    };
    Ok((fwd, out))
}

/// Mean triplet loss without touching gradients.
pub fn triplet_loss(
    model: &TripletModel,
    batch: &TripletBatch,
    mode: Mode<'_>,
) -> Result<LossOutput> {
    triplet_forward(model, batch, mode).map(|(_, out)| out)
}

/// Mean triplet loss; accumulates gradients of the user tower, the shared
/// item tower (both branches), and the head.
pub fn triplet_loss_and_grads(
    model: &mut TripletModel,
    batch: &TripletBatch,
    mode: Mode<'_>,
) -> Result<LossOutput> {
    let (fwd, out) = triplet_forward(model, batch, mode)?;
    let n = batch.users.rows();
    let latent = model.latent_dim();
    let w = model.head.weights().to_vec();
    let zu = &fwd.user.output;
    let zs = &fwd.items.output;

    let mut d_user = Matrix::zeros(n, latent);
    let mut d_items = Matrix::zeros(2 * n, latent);
    let mut d_w = vec![0.0; latent];
    for r in 0..n {
        let g = bce_with_logit_grad(out.logits[r], batch.labels[r]) / n as f64;
        // The head bias cancels in o, so it receives no gradient.
        for k in 0..latent {
            let di = zu.get(r, k) - zs.get(r, k);
            let dj = zu.get(r, k) - zs.get(n + r, k);
            d_w[k] += g * (di * di - dj * dj);
            let gi = 2.0 * w[k] * di * g;
            let gj = -2.0 * w[k] * dj * g;
            d_user.row_mut(r)[k] = gi + gj;
            d_items.row_mut(r)[k] = -gi;
            d_items.row_mut(n + r)[k] = -gj;
        }
    }
    accumulate_head(model, &d_w, 0.0);
    model.item_tower.backward(&fwd.items, &d_items)?;
    model.user_tower.backward(&fwd.user, &d_user)?;
    Ok(out)
}

fn accumulate_head(model: &mut TripletModel, d_w: &[f64], d_b: f64) {
    model
        .head
        .weight
        .grad
        .as_mut_slice()
        .iter_mut()
        .zip(d_w)
        .for_each(|(g, d)| *g += d);
    model.head.bias.grad.as_mut_slice()[0] += d_b;
}

fn twonet_forward(
    model: &TripletModel,
    batch: &PairBatch,
    mode: Mode<'_>,
) -> Result<(Forward, LossOutput)> {
    check_batch(&batch.users, &[&batch.items], &batch.labels)?;
    let n = batch.users.rows();
    let fwd = run_towers(model, &batch.users, &batch.items, mode)?;
    let mut logits = Vec::with_capacity(n);
    let mut per_sample = Vec::with_capacity(n);
    for r in 0..n {
        let logit = -model
            .head
            .distance(fwd.user.output.row(r), fwd.items.output.row(r));
        logits.push(logit);
        per_sample.push(bce_with_logit(logit, batch.labels[r]));
    }
    check_finite(&per_sample)?;
    let loss = per_sample.iter().sum::<f64>() / n as f64;
    let out = LossOutput {
        loss,
        per_sample,
        logits,
        masks: fwd.masks.clone(),
    };
    Ok((fwd, out))
}

/// Mean two-branch loss without touching gradients.
pub fn twonet_loss(model: &TripletModel, batch: &PairBatch, mode: Mode<'_>) -> Result<LossOutput> {
    twonet_forward(model, batch, mode).map(|(_, out)| out)
}

/// Mean BCE of `σ(−D(u, item))` against the match labels, with gradients.
pub fn twonet_loss_and_grads(
    model: &mut TripletModel,
    batch: &PairBatch,
    mode: Mode<'_>,
) -> Result<LossOutput> {
    let (fwd, out) = twonet_forward(model, batch, mode)?;
    let n = batch.users.rows();
    let latent = model.latent_dim();
    let w = model.head.weights().to_vec();
    let zu = &fwd.user.output;
    let zi = &fwd.items.output;

    let mut d_user = Matrix::zeros(n, latent);
    let mut d_items = Matrix::zeros(n, latent);
    let mut d_w = vec![0.0; latent];
    let mut d_b = 0.0;
    for r in 0..n {
        // logit = −D, so ∂L/∂D = −(σ(logit) − y).
        let g_d = -bce_with_logit_grad(out.logits[r], batch.labels[r]) / n as f64;
        d_b += g_d;
        for k in 0..latent {
            let diff = zu.get(r, k) - zi.get(r, k);
            d_w[k] += g_d * diff * diff;
            let g = 2.0 * w[k] * diff * g_d;
            d_user.row_mut(r)[k] = g;
            d_items.row_mut(r)[k] = -g;
        }
    }
    accumulate_head(model, &d_w, d_b);
    model.item_tower.backward(&fwd.items, &d_items)?;
    model.user_tower.backward(&fwd.user, &d_user)?;
    Ok(out)
}

/// `o = D(π(u), φ(i)) − D(π(u), φ(j))` for a single example.
pub fn pair_logit(
    model: &TripletModel,
    user: &[f64],
    item_i: &[f64],
    item_j: &[f64],
    mode: Mode<'_>,
) -> Result<f64> {
    let batch = TripletBatch {
        users: Matrix::row_vector(user.to_vec()),
        items_i: Matrix::row_vector(item_i.to_vec()),
        items_j: Matrix::row_vector(item_j.to_vec()),
        labels: vec![0.0],
    };
    triplet_loss(model, &batch, mode).map(|out| out.logits[0])
}

/// `P = σ(o)`: near 0 when item `i` is the closer one.
#[inline]
pub fn pair_prob(logit: f64) -> f64 {
    sigmoid_stable(logit)
}
