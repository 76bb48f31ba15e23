//! Users, items, triplet construction, and the synthetic corpus generator.

mod io;
mod split;
mod synth;
mod triplets;

use std::collections::{BTreeSet, HashMap};

pub use io::{
    load_corpus, load_corpus_dir, load_triplets, read_items, read_triplets, read_users,
    save_corpus_dir, save_triplets, write_items, write_triplets, write_users, ITEMS_FILE,
    USERS_FILE,
};
pub use split::{split_corpus, split_train_test, CorpusSplit};
pub use synth::{generate_synthetic, SynthConfig};
pub use triplets::{build_triplets, label_is_consistent, PairingStrategy, TripletExample};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub type UserId = u64;
pub type ItemId = u64;
pub type TagId = u32;

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax_tag(values: &[f64]) -> TagId {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best as TagId
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserRecord {
    pub id: UserId,
    pub topic_vector: Vec<f64>,
    pub dominant_tag: TagId,
}

impl UserRecord {
    /// Dominant tag taken as the argmax of the topic vector.
    pub fn new(id: UserId, topic_vector: Vec<f64>) -> Self {
        let dominant_tag = argmax_tag(&topic_vector);
        UserRecord {
            id,
            topic_vector,
            dominant_tag,
        }
    }

    pub fn with_tag(id: UserId, topic_vector: Vec<f64>, dominant_tag: TagId) -> Self {
        UserRecord {
            id,
            topic_vector,
            dominant_tag,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ItemRecord {
    pub id: ItemId,
    pub tag: TagId,
    pub features: Vec<f64>,
}

/// Per-item feature layout: `frames × frame_dim` values, frame-major, so
/// value `d` of frame `f` sits at `f * frame_dim + d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameLayout {
    pub frames: usize,
    pub frame_dim: usize,
}

impl FrameLayout {
    pub const fn dim(&self) -> usize {
        self.frames * self.frame_dim
    }

    pub const fn index(&self, frame: usize, d: usize) -> usize {
        frame * self.frame_dim + d
    }
}

impl Default for FrameLayout {
    /// 20 frames of 378 values: 7560 features.
    fn default() -> Self {
        FrameLayout {
            frames: 20,
            frame_dim: 378,
        }
    }
}

/// Validated users and items with id lookup.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStore {
    users: Vec<UserRecord>,
    items: Vec<ItemRecord>,
    user_dim: usize,
    item_dim: usize,
    user_pos: HashMap<UserId, usize>,
    item_pos: HashMap<ItemId, usize>,
}

impl FeatureStore {
    pub fn new(users: Vec<UserRecord>, items: Vec<ItemRecord>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Data("no items".into()));
        }
        if users.is_empty() {
            return Err(Error::Data("no users".into()));
        }
        let user_dim = users[0].topic_vector.len();
        let item_dim = items[0].features.len();
        if user_dim == 0 || item_dim == 0 {
            return Err(Error::Data("feature vectors must be non-empty".into()));
        }
        let mut user_pos = HashMap::with_capacity(users.len());
        for (i, u) in users.iter().enumerate() {
            if u.topic_vector.len() != user_dim {
                return Err(Error::Data(format!(
                    "user {}: expected {user_dim} dims, found {}",
                    u.id,
                    u.topic_vector.len()
                )));
            }
            if let Some(k) = u.topic_vector.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "user {}: non-finite value at t{k}",
                    u.id
                )));
            }
            if user_pos.insert(u.id, i).is_some() {
                return Err(Error::Data(format!("duplicate user id {}", u.id)));
            }
        }
        let mut item_pos = HashMap::with_capacity(items.len());
        for (i, it) in items.iter().enumerate() {
            if it.features.len() != item_dim {
                return Err(Error::Data(format!(
                    "item {}: expected {item_dim} dims, found {}",
                    it.id,
                    it.features.len()
                )));
            }
            if let Some(k) = it.features.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "item {}: non-finite value at f{k}",
                    it.id
                )));
            }
            if item_pos.insert(it.id, i).is_some() {
                return Err(Error::Data(format!("duplicate item id {}", it.id)));
            }
        }
        Ok(FeatureStore {
            users,
            items,
            user_dim,
            item_dim,
            user_pos,
            item_pos,
        })
    }

    pub fn users(&self) -> &[UserRecord] {
        &self.users
    }

    pub fn items(&self) -> &[ItemRecord] {
        &self.items
    }

    pub fn user(&self, id: UserId) -> Option<&UserRecord> {
        self.user_pos.get(&id).map(|&i| &self.users[i])
    }

    pub fn item(&self, id: ItemId) -> Option<&ItemRecord> {
        self.item_pos.get(&id).map(|&i| &self.items[i])
    }

    pub fn user_dim(&self) -> usize {
        self.user_dim
    }

    pub fn item_dim(&self) -> usize {
        self.item_dim
    }

    /// `(users, items)`.
    pub fn counts(&self) -> (usize, usize) {
        (self.users.len(), self.items.len())
    }

    pub fn item_tags(&self) -> Vec<TagId> {
        self.items
            .iter()
            .map(|i| i.tag)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn user_ids(&self) -> Vec<UserId> {
        self.users.iter().map(|u| u.id).collect()
    }

    pub fn item_ids(&self) -> Vec<ItemId> {
        self.items.iter().map(|i| i.id).collect()
    }

    fn require_user(&self, id: UserId) -> Result<&UserRecord> {
        self.user(id)
            .ok_or_else(|| Error::Data(format!("unknown user id {id}")))
    }

    fn require_item(&self, id: ItemId) -> Result<&ItemRecord> {
        self.item(id)
            .ok_or_else(|| Error::Data(format!("unknown item id {id}")))
    }

    pub fn user_matrix(&self, ids: &[UserId]) -> Result<Matrix> {
        let mut data = Vec::with_capacity(ids.len() * self.user_dim);
        for &id in ids {
            data.extend_from_slice(&self.require_user(id)?.topic_vector);
        }
        Matrix::from_vec(ids.len(), self.user_dim, data)
    }

    pub fn item_matrix(&self, ids: &[ItemId]) -> Result<Matrix> {
        let mut data = Vec::with_capacity(ids.len() * self.item_dim);
        for &id in ids {
            data.extend_from_slice(&self.require_item(id)?.features);
        }
        Matrix::from_vec(ids.len(), self.item_dim, data)
    }

    /// A store restricted to the given ids, in the order given.
    pub fn subset(&self, user_ids: &[UserId], item_ids: &[ItemId]) -> Result<FeatureStore> {
        let users = user_ids
            .iter()
            .map(|&id| self.require_user(id).cloned())
            .collect::<Result<Vec<_>>>()?;
        let items = item_ids
            .iter()
            .map(|&id| self.require_item(id).cloned())
            .collect::<Result<Vec<_>>>()?;
        FeatureStore::new(users, items)
    }
}
