//! The triplet network: a user tower, one item tower shared by both item
//! branches, and a weighted-distance head; plus the two-branch baseline that
//! reuses the same parameter layout.

mod head;
mod loss;
mod retrieval;
mod tower;

use serde::{Deserialize, Serialize};

pub use head::{weighted_distance, DistanceHead};
pub use loss::{
    pair_logit, pair_prob, triplet_loss, triplet_loss_and_grads, twonet_loss,
    twonet_loss_and_grads, BatchMasks, LossOutput, Mode, PairBatch, TripletBatch,
};
pub use retrieval::{
    rank_items_for_item, rank_items_for_user, rank_latent_for_item, rank_latent_for_user, Catalog,
    Ranking,
};
pub use tower::{
    embed_item, embed_user, Dense, Dropout, HiddenLayer, Norm, Tower, TowerSpec, TowerTrace,
};

use crate::error::{Error, Result};
use crate::numerics::{HasParams, Matrix, ParamTensor, RngState};

/// Which objective a model is trained with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Pairwise (positive, negative) comparison under a sigmoid BCE.
    Triplet,
    /// (user, item) match classification with `p = σ(−D)`.
    Twonet,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Triplet => "triplet",
            ModelKind::Twonet => "twonet",
        })
    }
}

/// Which of the two items in a comparison is the positive one.
///
/// The numeric value is the target for `P = σ(D(u,i) − D(u,j))`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PairLabel {
    /// `i` is the positive item, `j` the negative; target 0.
    PosNeg,
    /// `i` is the negative item, `j` the positive; target 1.
    NegPos,
}

impl PairLabel {
    pub fn value(self) -> u8 {
        match self {
            PairLabel::PosNeg => 0,
            PairLabel::NegPos => 1,
        }
    }

    pub fn target(self) -> f64 {
        f64::from(self.value())
    }

    pub fn from_value(v: u8) -> Option<Self> {
        match v {
            0 => Some(PairLabel::PosNeg),
            1 => Some(PairLabel::NegPos),
            _ => None,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            PairLabel::PosNeg => PairLabel::NegPos,
            PairLabel::NegPos => PairLabel::PosNeg,
        }
    }
}

/// User tower, the single item tower, and the distance head.
///
/// Both item branches of a triplet run through `item_tower`; there is no
/// second copy of its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TripletModel {
    pub user_tower: Tower,
    pub item_tower: Tower,
    pub head: DistanceHead,
}

impl TripletModel {
    pub fn new(user: TowerSpec, item: TowerSpec, rng: &mut RngState) -> Result<Self> {
        check_latent(&user, &item)?;
        let user_tower = Tower::new(user, rng)?;
        let item_tower = Tower::new(item, rng)?;
        let head = DistanceHead::new(user_tower.output_dim(), rng);
        Ok(TripletModel {
            user_tower,
            item_tower,
            head,
        })
    }

    /// Zero weights everywhere (normalization gains one), zero head.
    pub fn zeroed(user: TowerSpec, item: TowerSpec) -> Result<Self> {
        check_latent(&user, &item)?;
        let latent = user.output_dim;
        Ok(TripletModel {
            user_tower: Tower::zeroed(user)?,
            item_tower: Tower::zeroed(item)?,
            head: DistanceHead::from_values(vec![0.0; latent], 0.0),
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.head.latent_dim()
    }

    pub fn embed_users(&self, users: &Matrix) -> Result<Matrix> {
        self.user_tower.embed(users)
    }

    pub fn embed_items(&self, items: &Matrix) -> Result<Matrix> {
        self.item_tower.embed(items)
    }

    /// Parameter names in [`HasParams`] order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = self.user_tower.param_names("user");
        names.extend(self.item_tower.param_names("item"));
        names.push("head.weight".into());
        names.push("head.bias".into());
        names
    }
}

fn check_latent(user: &TowerSpec, item: &TowerSpec) -> Result<()> {
    if user.output_dim != item.output_dim {
        return Err(Error::Config(format!(
            "user latent dim {} differs from item latent dim {}",
            user.output_dim, item.output_dim
        )));
    }
    Ok(())
}

impl HasParams for TripletModel {
    fn params(&self) -> Vec<&ParamTensor> {
        let mut out = self.user_tower.params();
        out.extend(self.item_tower.params());
        out.extend(self.head.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut out = self.user_tower.params_mut();
        out.extend(self.item_tower.params_mut());
        out.extend(self.head.params_mut());
        out
    }
}
