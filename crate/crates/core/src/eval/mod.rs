//! Pairwise ranking accuracy, user→item and item→item precision@k, and
//! multi-seed method comparisons.

mod compare;

pub use compare::{
    compare_arms, compare_methods, Arm, ArmSummary, ComparisonTable, HeadToHead, MetricSummary,
    Protocol, SeedResult, WinLoss,
};

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureStore, ItemId, TripletExample, UserId};
use crate::error::{Error, Result};
use crate::model::{
    pair_prob, rank_latent_for_item, rank_latent_for_user, Catalog, PairLabel, TripletModel,
};
use crate::numerics::Matrix;

/// Environment variable capping evaluation threads (0 or unset: all cores).
pub const THREADS_ENV: &str = "TRIPLET_RANK_THREADS";

const EMBED_CHUNK: usize = 512;

/// Thread pool sized by [`THREADS_ENV`].
pub fn eval_pool() -> rayon::ThreadPool {
    let threads = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool")
}

fn embed_rows(
    rows: Matrix,
    embed: impl Fn(&Matrix) -> Result<Matrix>,
    latent: usize,
) -> Result<Matrix> {
    let mut out = Matrix::zeros(0, latent);
    let mut start = 0;
    while start < rows.rows() {
        let end = (start + EMBED_CHUNK).min(rows.rows());
        out = out.vstack(&embed(&rows.slice_rows(start, end))?)?;
        start = end;
    }
    Ok(out)
}

/// Inference-mode embeddings of the given users.
pub fn embed_user_ids(
    model: &TripletModel,
    store: &FeatureStore,
    ids: &[UserId],
) -> Result<Matrix> {
    embed_rows(
        store.user_matrix(ids)?,
        |m| model.embed_users(m),
        model.latent_dim(),
    )
}

/// Inference-mode catalog of the given items.
pub fn build_catalog(
    model: &TripletModel,
    store: &FeatureStore,
    ids: &[ItemId],
) -> Result<Catalog> {
    let latents = embed_rows(
        store.item_matrix(ids)?,
        |m| model.embed_items(m),
        model.latent_dim(),
    )?;
    Catalog::from_latents(ids.to_vec(), latents)
}

fn dedup<T: Copy + Ord>(values: impl Iterator<Item = T>) -> Vec<T> {
    let mut v: Vec<T> = values.collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Fraction of triplets whose predicted order is correct: label 0 needs
/// `P < 0.5`, label 1 needs `P > 0.5`. `P = 0.5` is always wrong.
pub fn pairwise_accuracy(
    model: &TripletModel,
    test: &[TripletExample],
    store: &FeatureStore,
) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Data("empty test set".into()));
    }
    let users = dedup(test.iter().map(|t| t.user));
    let items = dedup(test.iter().flat_map(|t| [t.item_i, t.item_j]));
    let zu = embed_user_ids(model, store, &users)?;
    let catalog = build_catalog(model, store, &items)?;
    let user_row: HashMap<UserId, usize> = users.iter().enumerate().map(|(i, &u)| (u, i)).collect();
    let item_row: HashMap<ItemId, usize> = items.iter().enumerate().map(|(i, &u)| (u, i)).collect();
    let correct = test
        .iter()
        .filter(|t| {
            let u = zu.row(user_row[&t.user]);
            let o = model.head.distance_difference(
                u,
                catalog.latent(item_row[&t.item_i]),
                catalog.latent(item_row[&t.item_j]),
            );
            let p = pair_prob(o);
            match t.label {
                PairLabel::PosNeg => p < 0.5,
                PairLabel::NegPos => p > 0.5,
            }
        })
        .count();
    Ok(correct as f64 / test.len() as f64)
}

/// Mean precision over a set of queries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Precision {
    pub value: f64,
    pub n_queries: usize,
    /// Set when `k` exceeded the candidates available to some query; those
    /// queries are scored over what was retrieved.
    pub truncated: bool,
}

fn check_query(k: usize, queries: usize, candidates: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    if queries == 0 {
        return Err(Error::Data("no queries".into()));
    }
    if candidates == 0 {
        return Err(Error::Data("no candidate items".into()));
    }
    Ok(())
}

fn mean_precision(per_query: Vec<(f64, bool)>) -> Precision {
    let n = per_query.len();
    // Sequential sum in query order keeps the result independent of thread count.
    let value = per_query.iter().map(|p| p.0).sum::<f64>() / n as f64;
    Precision {
        value,
        n_queries: n,
        truncated: per_query.iter().any(|p| p.1),
    }
}

/// For each user, the share of its top-`k` items (by weighted distance)
/// whose tag equals the user's dominant tag, averaged over users.
pub fn precision_at_k(
    model: &TripletModel,
    users: &[UserId],
    items: &[ItemId],
    store: &FeatureStore,
    k: usize,
) -> Result<Precision> {
    check_query(k, users.len(), items.len())?;
    let zu = embed_user_ids(model, store, users)?;
    let catalog = build_catalog(model, store, items)?;
    let per_user: Vec<(f64, bool)> = eval_pool().install(|| {
        users
            .par_iter()
            .enumerate()
            .map(|(row, &uid)| {
                let tag = store.user(uid).expect("embedded above").dominant_tag;
                let ranking = rank_latent_for_user(&model.head, zu.row(row), &catalog, k);
                let hits = ranking
                    .ids
                    .iter()
                    .filter(|&&id| store.item(id).expect("in catalog").tag == tag)
                    .count();
                (hits as f64 / ranking.ids.len() as f64, ranking.truncated)
            })
            .collect()
    });
    Ok(mean_precision(per_user))
}

/// For each query item, the share of its `k` nearest other items (squared
/// Euclidean in the latent space) that carry the query's tag.
pub fn item_item_precision_at_k(
    model: &TripletModel,
    queries: &[ItemId],
    items: &[ItemId],
    store: &FeatureStore,
    k: usize,
) -> Result<Precision> {
    check_query(k, queries.len(), items.len())?;
    let catalog = build_catalog(model, store, items)?;
    let zq = build_catalog(model, store, queries)?;
    let per_query: Vec<Result<(f64, bool)>> = eval_pool().install(|| {
        queries
            .par_iter()
            .enumerate()
            .map(|(row, &qid)| {
                let tag = store.item(qid).expect("embedded above").tag;
                let ranking = rank_latent_for_item(zq.latent(row), &catalog, k, Some(qid));
                if ranking.ids.is_empty() {
                    return Err(Error::Data(format!("item {qid} has no other candidates")));
                }
                let hits = ranking
                    .ids
                    .iter()
                    .filter(|&&id| store.item(id).expect("in catalog").tag == tag)
                    .count();
                Ok((hits as f64 / ranking.ids.len() as f64, ranking.truncated))
            })
            .collect()
    });
    Ok(mean_precision(
        per_query.into_iter().collect::<Result<_>>()?,
    ))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TestCounts {
    pub triplets: usize,
    pub users: usize,
    pub items: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairwise_accuracy: Option<f64>,
    pub precision_at_k: BTreeMap<usize, f64>,
    pub item_item_precision_at_k: BTreeMap<usize, f64>,
    pub n_test: TestCounts,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Two-column `Metric | Value` table.
    pub fn to_table(&self) -> String {
        let mut rows: Vec<(String, String)> = Vec::new();
        if let Some(acc) = self.pairwise_accuracy {
            rows.push(("Pairwise accuracy".into(), format!("{:.2}%", acc * 100.0)));
        }
        for (k, v) in &self.precision_at_k {
            rows.push((
                format!("User->item precision@{k}"),
                format!("{:.2}%", v * 100.0),
            ));
        }
        for (k, v) in &self.item_item_precision_at_k {
            rows.push((
                format!("Item->item precision@{k}"),
                format!("{:.2}%", v * 100.0),
            ));
        }
        format_table(("Metric", "Value"), &rows)
    }
}

pub(crate) fn format_table(head: (&str, &str), rows: &[(String, String)]) -> String {
    let w0 = rows
        .iter()
        .map(|r| r.0.len())
        .chain([head.0.len()])
        .max()
        .unwrap_or(0);
    let w1 = rows
        .iter()
        .map(|r| r.1.len())
        .chain([head.1.len()])
        .max()
        .unwrap_or(0);
    let rule = format!("{}-+-{}\n", "-".repeat(w0), "-".repeat(w1));
    let mut out = format!("{:<w0$} | {:>w1$}\n", head.0, head.1);
    out.push_str(&rule);
    for (a, b) in rows {
        out.push_str(&format!("{a:<w0$} | {b:>w1$}\n"));
    }
    out
}

/// Pairwise accuracy on `test` (when non-empty) plus both precisions for
/// every `k`. User queries are the users in `test` (or all users when it
/// is empty); item queries and candidates are all items in `store`.
pub fn evaluate(
    model: &TripletModel,
    store: &FeatureStore,
    test: &[TripletExample],
    ks: &[usize],
) -> Result<EvalReport> {
    let users = if test.is_empty() {
        store.user_ids()
    } else {
        dedup(test.iter().map(|t| t.user))
    };
    let items = store.item_ids();
    let pairwise = if test.is_empty() {
        None
    } else {
        Some(pairwise_accuracy(model, test, store)?)
    };
    let mut precision = BTreeMap::new();
    let mut item_item = BTreeMap::new();
    for &k in ks {
        precision.insert(k, precision_at_k(model, &users, &items, store, k)?.value);
        item_item.insert(
            k,
            item_item_precision_at_k(model, &items, &items, store, k)?.value,
        );
    }
    Ok(EvalReport {
        pairwise_accuracy: pairwise,
        precision_at_k: precision,
        item_item_precision_at_k: item_item,
        n_test: TestCounts {
            triplets: test.len(),
            users: users.len(),
            items: items.len(),
        },
    })
}
