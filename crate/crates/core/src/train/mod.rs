//! Seeded minibatch training for both objectives.

mod checkpoint;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, TrainRngState, CHECKPOINT_VERSION,
};

use serde::{Deserialize, Serialize};

use crate::data::{FeatureStore, TripletExample};
use crate::error::{Error, Result};
use crate::eval::pairwise_accuracy;
use crate::model::{
    triplet_loss_and_grads, twonet_loss_and_grads, Mode, ModelKind, PairBatch, TowerSpec,
    TripletBatch, TripletModel,
};
use crate::numerics::{adam_step, AdamConfig, HasParams, RngState};

const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Applied to both towers, overriding their own `dropout_p`.
    pub dropout_p: f64,
    pub learning_rate: f64,
    pub seed: u64,
    pub model_kind: ModelKind,
    pub user_tower: TowerSpec,
    pub item_tower: TowerSpec,
    /// Epochs between held-out evaluations; 0 disables them.
    pub eval_every: usize,
}

impl TrainConfig {
    /// 200 epochs, batch 256, dropout 0.2, Adam at 1e-3, default tower widths.
    pub fn defaults(user_dim: usize, item_dim: usize) -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 256,
            dropout_p: 0.2,
            learning_rate: 1e-3,
            seed: 0,
            model_kind: ModelKind::Triplet,
            user_tower: TowerSpec::default_user(user_dim),
            item_tower: TowerSpec::default_item(item_dim),
            eval_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} invalid",
                self.learning_rate
            )));
        }
        let (u, i) = self.tower_specs();
        u.validate()?;
        i.validate()?;
        if u.output_dim != i.output_dim {
            return Err(Error::Config(
                "user and item towers must share the latent dim".into(),
            ));
        }
        Ok(())
    }

    /// Tower specs with the configured dropout applied.
    pub fn tower_specs(&self) -> (TowerSpec, TowerSpec) {
        let mut u = self.user_tower.clone();
        let mut i = self.item_tower.clone();
        u.dropout_p = self.dropout_p;
        i.dropout_p = self.dropout_p;
        (u, i)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig::with_lr(self.learning_rate)
    }

    /// Freshly initialized model for this config's seed.
    pub fn init_model(&self) -> Result<TripletModel> {
        let (u, i) = self.tower_specs();
        TripletModel::new(u, i, &mut RngState::substream(self.seed, INIT_STREAM))
    }

    pub fn check_store(&self, store: &FeatureStore) -> Result<()> {
        if self.user_tower.input_dim != store.user_dim() {
            return Err(Error::Config(format!(
                "user tower expects {} inputs, corpus has {}",
                self.user_tower.input_dim,
                store.user_dim()
            )));
        }
        if self.item_tower.input_dim != store.item_dim() {
            return Err(Error::Config(format!(
                "item tower expects {} inputs, corpus has {}",
                self.item_tower.input_dim,
                store.item_dim()
            )));
        }
        Ok(())
    }
}

/// One line of the per-epoch training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_acc: Option<f64>,
}

impl EpochLog {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("plain struct serializes")
    }
}

/// Feature rows for a slice of triplets.
pub fn gather_triplets(store: &FeatureStore, triplets: &[&TripletExample]) -> Result<TripletBatch> {
    let users: Vec<u64> = triplets.iter().map(|t| t.user).collect();
    let items_i: Vec<u64> = triplets.iter().map(|t| t.item_i).collect();
    let items_j: Vec<u64> = triplets.iter().map(|t| t.item_j).collect();
    Ok(TripletBatch {
        users: store.user_matrix(&users)?,
        items_i: store.item_matrix(&items_i)?,
        items_j: store.item_matrix(&items_j)?,
        labels: triplets.iter().map(|t| t.label.target()).collect(),
    })
}

/// Two (user, item, match) pairs per triplet, labelled 1 when the item's tag
/// equals the user's dominant tag.
pub fn gather_pairs(store: &FeatureStore, triplets: &[&TripletExample]) -> Result<PairBatch> {
    let mut users = Vec::with_capacity(2 * triplets.len());
    let mut items = Vec::with_capacity(2 * triplets.len());
    let mut labels = Vec::with_capacity(2 * triplets.len());
    for t in triplets {
        let user = store
            .user(t.user)
            .ok_or_else(|| Error::Data(format!("unknown user id {}", t.user)))?;
        for item_id in [t.item_i, t.item_j] {
            let item = store
                .item(item_id)
                .ok_or_else(|| Error::Data(format!("unknown item id {item_id}")))?;
            users.push(t.user);
            items.push(item_id);
            labels.push(if item.tag == user.dominant_tag {
                1.0
            } else {
                0.0
            });
        }
    }
    Ok(PairBatch {
        users: store.user_matrix(&users)?,
        items: store.item_matrix(&items)?,
        labels,
    })
}

pub fn train(
    store: &FeatureStore,
    triplets: &[TripletExample],
    config: &TrainConfig,
) -> Result<Checkpoint> {
    train_with(store, triplets, config, None, |_| {})
}

/// Trains from scratch, calling `on_epoch` after every epoch. When `eval`
/// is given and `config.eval_every > 0`, pairwise accuracy on it is
/// reported every `eval_every` epochs.
pub fn train_with(
    store: &FeatureStore,
    triplets: &[TripletExample],
    config: &TrainConfig,
    eval: Option<&[TripletExample]>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Checkpoint> {
    config.validate()?;
    config.check_store(store)?;
    if triplets.is_empty() {
        return Err(Error::Data("no training triplets".into()));
    }
    let mut model = config.init_model()?;
    let mut shuffle_rng = RngState::substream(config.seed, SHUFFLE_STREAM);
    let mut dropout_rng = RngState::substream(config.seed, DROPOUT_STREAM);
    let adam = config.adam();
    let mut order: Vec<usize> = (0..triplets.len()).collect();
    let mut steps = 0u64;
    let mut loss_history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&TripletExample> = chunk.iter().map(|&i| &triplets[i]).collect();
            let mode = Mode::Train(&mut dropout_rng);
            let result = match config.model_kind {
                ModelKind::Triplet => {
                    triplet_loss_and_grads(&mut model, &gather_triplets(store, &batch)?, mode)
                }
                ModelKind::Twonet => {
                    twonet_loss_and_grads(&mut model, &gather_pairs(store, &batch)?, mode)
                }
            };
            let rows_per_triplet = match config.model_kind {
                ModelKind::Triplet => 1,
                ModelKind::Twonet => 2,
            };
            let out = result.map_err(|e| match e {
                Error::NonFiniteLoss { rows, .. } => Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    rows: rows
                        .into_iter()
                        .map(|r| chunk[r / rows_per_triplet])
                        .collect(),
                },
                other => other,
            })?;
            steps += 1;
            adam_step(&mut model.params_mut(), &adam, steps);
            model.zero_grads();
            loss_sum += out.loss * chunk.len() as f64;
        }
        let mean_loss = loss_sum / triplets.len() as f64;
        loss_history.push(mean_loss);
        let eval_acc = match eval {
            Some(set) if config.eval_every > 0 && epoch % config.eval_every == 0 => {
                Some(pairwise_accuracy(&model, set, store)?)
            }
            _ => None,
        };
        log::debug!("epoch {epoch}: mean loss {mean_loss:.6}");
        on_epoch(&EpochLog {
            epoch,
            mean_loss,
            eval_acc,
        });
    }

    Ok(Checkpoint {
        config: config.clone(),
        model,
        rng: TrainRngState {
            shuffle: shuffle_rng.snapshot(),
            dropout: dropout_rng.snapshot(),
        },
        epoch: config.epochs,
        steps,
        loss_history,
    })
}
