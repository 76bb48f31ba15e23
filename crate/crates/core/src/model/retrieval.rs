//! Nearest-item retrieval over precomputed item embeddings.

use super::{DistanceHead, TripletModel};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Item ids with their latent vectors, embedded once in inference mode.
#[derive(Clone, Debug)]
pub struct Catalog {
    ids: Vec<u64>,
    latents: Matrix,
}

impl Catalog {
    /// Embeds `features` (one row per id) with the item tower.
    pub fn build(model: &TripletModel, ids: Vec<u64>, features: &Matrix) -> Result<Self> {
        if ids.len() != features.rows() {
            return Err(Error::Data(format!(
                "{} ids for {} feature rows",
                ids.len(),
                features.rows()
            )));
        }
        let latents = if ids.is_empty() {
            Matrix::zeros(0, model.latent_dim())
        } else {
            model.embed_items(features)?
        };
        Ok(Catalog { ids, latents })
    }

    pub fn from_latents(ids: Vec<u64>, latents: Matrix) -> Result<Self> {
        if ids.len() != latents.rows() {
            return Err(Error::Data(format!(
                "{} ids for {} latent rows",
                ids.len(),
                latents.rows()
            )));
        }
        Ok(Catalog { ids, latents })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn latents(&self) -> &Matrix {
        &self.latents
    }

    pub fn latent(&self, idx: usize) -> &[f64] {
        self.latents.row(idx)
    }
}

/// Top-k ids, best first, with their scores.
#[derive(Clone, Debug, PartialEq)]
pub struct Ranking {
    pub ids: Vec<u64>,
    pub scores: Vec<f64>,
    /// Set when fewer than `k` candidates were available.
    pub truncated: bool,
}

fn top_k(mut scored: Vec<(f64, u64)>, k: usize) -> Ranking {
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let truncated = k > scored.len();
    scored.truncate(k);
    let (scores, ids) = scored.into_iter().unzip();
    Ranking {
        ids,
        scores,
        truncated,
    }
}

/// Ranks catalog items by weighted distance to an already-embedded user.
pub fn rank_latent_for_user(
    head: &DistanceHead,
    user_latent: &[f64],
    catalog: &Catalog,
    k: usize,
) -> Ranking {
    let scored = catalog
        .ids
        .iter()
        .enumerate()
        .map(|(idx, &id)| (head.distance(user_latent, catalog.latent(idx)), id))
        .collect();
    top_k(scored, k)
}

/// Ranks catalog items by squared Euclidean distance to an embedded query.
pub fn rank_latent_for_item(
    query_latent: &[f64],
    catalog: &Catalog,
    k: usize,
    exclude: Option<u64>,
) -> Ranking {
    let scored = catalog
        .ids
        .iter()
        .enumerate()
        .filter(|(_, &id)| Some(id) != exclude)
        .map(|(idx, &id)| {
            let d = query_latent
                .iter()
                .zip(catalog.latent(idx))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
            (d, id)
        })
        .collect();
    top_k(scored, k)
}

/// Embeds the user and returns the `k` catalog items with smallest weighted
/// distance, ties broken by ascending id.
pub fn rank_items_for_user(
    model: &TripletModel,
    user_features: &[f64],
    catalog: &Catalog,
    k: usize,
) -> Result<Ranking> {
    let z = model.embed_users(&Matrix::row_vector(user_features.to_vec()))?;
    Ok(rank_latent_for_user(&model.head, z.row(0), catalog, k))
}

/// Embeds the query item and returns its `k` nearest catalog items in the
/// latent space, optionally skipping the query's own id.
pub fn rank_items_for_item(
    model: &TripletModel,
    query_features: &[f64],
    catalog: &Catalog,
    k: usize,
    exclude: Option<u64>,
) -> Result<Ranking> {
    let z = model.embed_items(&Matrix::row_vector(query_features.to_vec()))?;
    Ok(rank_latent_for_item(z.row(0), catalog, k, exclude))
}
