//! Multi-seed comparisons between training arms on identical data.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{eval_pool, format_table, item_item_precision_at_k, pairwise_accuracy, precision_at_k};
use crate::data::{build_triplets, split_corpus, FeatureStore, PairingStrategy};
use crate::error::{Error, Result};
use crate::model::ModelKind;
use crate::train::{train, TrainConfig};

/// How each seed's held-out evaluation is set up.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    /// Fraction of users and of items (per tag) held out.
    pub test_fraction: f64,
    pub k: usize,
    /// Pairing used to build the held-out triplets.
    pub test_strategy: PairingStrategy,
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol {
            test_fraction: 0.25,
            k: 10,
            test_strategy: PairingStrategy::Balanced,
        }
    }
}

/// One configuration under comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub name: String,
    pub strategy: PairingStrategy,
    /// Its `seed` is replaced by each comparison seed.
    pub config: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub pairwise_accuracy: f64,
    pub precision_at_k: f64,
    pub item_item_precision_at_k: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Sample standard deviation.
    pub std: f64,
}

impl MetricSummary {
    fn of(values: impl Iterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = if v.len() > 1 {
            v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        MetricSummary {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub name: String,
    pub model_kind: ModelKind,
    pub strategy: PairingStrategy,
    pub per_seed: Vec<SeedResult>,
    pub pairwise_accuracy: MetricSummary,
    pub precision_at_k: MetricSummary,
    pub item_item_precision_at_k: MetricSummary,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WinLoss {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
}

impl WinLoss {
    fn tally(a: impl Iterator<Item = f64>, b: impl Iterator<Item = f64>) -> Self {
        let mut wl = WinLoss::default();
        for (x, y) in a.zip(b) {
            if x > y {
                wl.wins += 1;
            } else if x < y {
                wl.losses += 1;
            } else {
                wl.ties += 1;
            }
        }
        wl
    }
}

/// Per-seed record of the first arm against the second.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadToHead {
    pub challenger: String,
    pub baseline: String,
    pub pairwise_accuracy: WinLoss,
    pub precision_at_k: WinLoss,
    pub item_item_precision_at_k: WinLoss,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub k: usize,
    pub seeds: Vec<u64>,
    pub arms: Vec<ArmSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub head_to_head: Option<HeadToHead>,
}

impl ComparisonTable {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }

    pub fn to_table(&self) -> String {
        let fmt = |m: &MetricSummary| format!("{:.2}% ± {:.2}", m.mean * 100.0, m.std * 100.0);
        let mut out = String::new();
        for (title, pick) in [
            (
                "Pairwise accuracy",
                (|a: &ArmSummary| a.pairwise_accuracy) as fn(&ArmSummary) -> MetricSummary,
            ),
            ("User->item precision", |a: &ArmSummary| a.precision_at_k),
            ("Item->item precision", |a: &ArmSummary| {
                a.item_item_precision_at_k
            }),
        ] {
            let rows: Vec<(String, String)> = self
                .arms
                .iter()
                .map(|a| (a.name.clone(), fmt(&pick(a))))
                .collect();
            let heading = if title.contains("precision") {
                format!("{title}@{}", self.k)
            } else {
                title.to_string()
            };
            out.push_str(&format_table(("Methods", &heading), &rows));
            out.push('\n');
        }
        if let Some(h) = &self.head_to_head {
            out.push_str(&format!(
                "{} vs {} (wins/losses/ties): accuracy {}/{}/{}, precision {}/{}/{}, item-item {}/{}/{}\n",
                h.challenger,
                h.baseline,
                h.pairwise_accuracy.wins,
                h.pairwise_accuracy.losses,
                h.pairwise_accuracy.ties,
                h.precision_at_k.wins,
                h.precision_at_k.losses,
                h.precision_at_k.ties,
                h.item_item_precision_at_k.wins,
                h.item_item_precision_at_k.losses,
                h.item_item_precision_at_k.ties,
            ));
        }
        out
    }
}

fn run_one(store: &FeatureStore, arm: &Arm, seed: u64, protocol: &Protocol) -> Result<SeedResult> {
    let split = split_corpus(store, protocol.test_fraction, seed)?;
    let train_set = build_triplets(&split.train, arm.strategy, seed)?;
    let test_set = build_triplets(&split.test, protocol.test_strategy, seed ^ 0x7E57)?;
    let config = TrainConfig {
        seed,
        ..arm.config.clone()
    };
    let model = train(&split.train, &train_set, &config)?.model;
    let test_users = split.test.user_ids();
    let test_items = split.test.item_ids();
    Ok(SeedResult {
        seed,
        pairwise_accuracy: pairwise_accuracy(&model, &test_set, &split.test)?,
        precision_at_k: precision_at_k(&model, &test_users, &test_items, &split.test, protocol.k)?
            .value,
        item_item_precision_at_k: item_item_precision_at_k(
            &model,
            &test_items,
            &test_items,
            &split.test,
            protocol.k,
        )?
        .value,
    })
}

/// Trains every arm once per seed and evaluates on held-out users and
/// items. For a given seed all arms see the same split, and arms sharing a
/// pairing strategy see the same training triplets.
pub fn compare_arms(
    store: &FeatureStore,
    arms: &[Arm],
    seeds: &[u64],
    protocol: &Protocol,
) -> Result<ComparisonTable> {
    if seeds.len() < 3 {
        return Err(Error::Config(format!(
            "need at least 3 seeds, got {}",
            seeds.len()
        )));
    }
    if arms.is_empty() {
        return Err(Error::Config("no arms to compare".into()));
    }
    let jobs: Vec<(usize, u64)> = (0..arms.len())
        .flat_map(|a| seeds.iter().map(move |&s| (a, s)))
        .collect();
    let results: Vec<Result<SeedResult>> = eval_pool().install(|| {
        jobs.par_iter()
            .map(|&(a, s)| run_one(store, &arms[a], s, protocol))
            .collect()
    });
    let mut results = results.into_iter();
    let mut summaries = Vec::with_capacity(arms.len());
    for arm in arms {
        let per_seed = results
            .by_ref()
            .take(seeds.len())
            .collect::<Result<Vec<_>>>()?;
        summaries.push(ArmSummary {
            name: arm.name.clone(),
            model_kind: arm.config.model_kind,
            strategy: arm.strategy,
            pairwise_accuracy: MetricSummary::of(per_seed.iter().map(|r| r.pairwise_accuracy)),
            precision_at_k: MetricSummary::of(per_seed.iter().map(|r| r.precision_at_k)),
            item_item_precision_at_k: MetricSummary::of(
                per_seed.iter().map(|r| r.item_item_precision_at_k),
            ),
            per_seed,
        });
    }
    let head_to_head = (summaries.len() >= 2).then(|| {
        let (a, b) = (&summaries[0], &summaries[1]);
        HeadToHead {
            challenger: a.name.clone(),
            baseline: b.name.clone(),
            pairwise_accuracy: WinLoss::tally(
                a.per_seed.iter().map(|r| r.pairwise_accuracy),
                b.per_seed.iter().map(|r| r.pairwise_accuracy),
            ),
            precision_at_k: WinLoss::tally(
                a.per_seed.iter().map(|r| r.precision_at_k),
                b.per_seed.iter().map(|r| r.precision_at_k),
            ),
            item_item_precision_at_k: WinLoss::tally(
                a.per_seed.iter().map(|r| r.item_item_precision_at_k),
                b.per_seed.iter().map(|r| r.item_item_precision_at_k),
            ),
        }
    });
    Ok(ComparisonTable {
        k: protocol.k,
        seeds: seeds.to_vec(),
        arms: summaries,
        head_to_head,
    })
}

/// Triplet against Twonet on the same splits and triplets.
pub fn compare_methods(
    store: &FeatureStore,
    triplet: &TrainConfig,
    twonet: &TrainConfig,
    strategy: PairingStrategy,
    seeds: &[u64],
    protocol: &Protocol,
) -> Result<ComparisonTable> {
    let arms = [
        Arm {
            name: "Triplet".into(),
            strategy,
            config: triplet.clone(),
        },
        Arm {
            name: "Twonet".into(),
            strategy,
            config: twonet.clone(),
        },
    ];
    compare_arms(store, &arms, seeds, protocol)
}
