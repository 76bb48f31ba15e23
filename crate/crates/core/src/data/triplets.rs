//! Triplet construction under the three pairing regimes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{FeatureStore, ItemId, ItemRecord, TagId, UserId};
use crate::error::{Error, Result};
use crate::model::PairLabel;
use crate::numerics::RngState;

/// One comparison: is `item_i` or `item_j` the user's positive item?
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TripletExample {
    pub user: UserId,
    pub item_i: ItemId,
    pub item_j: ItemId,
    pub label: PairLabel,
}

impl TripletExample {
    /// Builds the example in the requested orientation.
    pub fn oriented(user: UserId, positive: ItemId, negative: ItemId, label: PairLabel) -> Self {
        let (item_i, item_j) = match label {
            PairLabel::PosNeg => (positive, negative),
            PairLabel::NegPos => (negative, positive),
        };
        TripletExample {
            user,
            item_i,
            item_j,
            label,
        }
    }

    /// The same event with the items swapped.
    pub fn swapped(self) -> Self {
        TripletExample {
            item_i: self.item_j,
            item_j: self.item_i,
            label: self.label.flipped(),
            ..self
        }
    }

    pub fn positive(&self) -> ItemId {
        match self.label {
            PairLabel::PosNeg => self.item_i,
            PairLabel::NegPos => self.item_j,
        }
    }

    pub fn negative(&self) -> ItemId {
        match self.label {
            PairLabel::PosNeg => self.item_j,
            PairLabel::NegPos => self.item_i,
        }
    }
}

/// How negatives are paired with positives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingStrategy {
    /// One negative per positive, drawn uniformly from all other-tag items.
    Unbalanced,
    /// One negative per positive, with every (positive tag, negative tag)
    /// combination receiving the same number of triplets.
    Balanced,
    /// `n` distinct negatives per positive.
    OneToN(usize),
}

impl std::fmt::Display for PairingStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PairingStrategy::Unbalanced => f.write_str("unbalanced"),
            PairingStrategy::Balanced => f.write_str("balanced"),
            PairingStrategy::OneToN(n) => write!(f, "one-to-{n}"),
        }
    }
}

/// Label invariant: the positive item carries the user's dominant tag and
/// the negative does not.
pub fn label_is_consistent(store: &FeatureStore, t: &TripletExample) -> bool {
    let (Some(user), Some(pos), Some(neg)) = (
        store.user(t.user),
        store.item(t.positive()),
        store.item(t.negative()),
    ) else {
        return false;
    };
    pos.tag == user.dominant_tag && neg.tag != user.dominant_tag
}

const BALANCED_SALT: u64 = 0xB41A_2CED_0000_0001;

fn orient(rng: &mut RngState, user: UserId, pos: ItemId, neg: ItemId) -> TripletExample {
    let label = if rng.bernoulli(0.5) {
        PairLabel::NegPos
    } else {
        PairLabel::PosNeg
    };
    TripletExample::oriented(user, pos, neg, label)
}

/// Emits triplets for every user: positives are the items sharing the
/// user's dominant tag, negatives come from other tags. Each triplet is
/// oriented pos-neg or neg-pos with probability ½.
pub fn build_triplets(
    store: &FeatureStore,
    strategy: PairingStrategy,
    seed: u64,
) -> Result<Vec<TripletExample>> {
    let mut by_tag: BTreeMap<TagId, Vec<&ItemRecord>> = BTreeMap::new();
    for item in store.items() {
        by_tag.entry(item.tag).or_default().push(item);
    }
    if by_tag.len() < 2 {
        return Err(Error::Data(format!(
            "need at least 2 distinct item tags, found {}",
            by_tag.len()
        )));
    }
    for user in store.users() {
        if !by_tag.contains_key(&user.dominant_tag) {
            return Err(Error::Data(format!(
                "tag {} has no items (dominant tag of user {})",
                user.dominant_tag, user.id
            )));
        }
    }
    match strategy {
        PairingStrategy::Unbalanced => per_positive(store, &by_tag, 1, false, seed),
        PairingStrategy::OneToN(0) => Err(Error::Config("one-to-n needs n >= 1".into())),
        PairingStrategy::OneToN(n) => per_positive(store, &by_tag, n, true, seed),
        PairingStrategy::Balanced => balanced(store, &by_tag, seed),
    }
}

fn per_positive(
    store: &FeatureStore,
    by_tag: &BTreeMap<TagId, Vec<&ItemRecord>>,
    n: usize,
    distinct: bool,
    seed: u64,
) -> Result<Vec<TripletExample>> {
    let mut out = Vec::new();
    let mut warned = false;
    for user in store.users() {
        let mut rng = RngState::substream(seed, user.id);
        let positives = &by_tag[&user.dominant_tag];
        let negatives: Vec<ItemId> = store
            .items()
            .iter()
            .filter(|i| i.tag != user.dominant_tag)
            .map(|i| i.id)
            .collect();
        for pos in positives {
            if distinct && n <= negatives.len() {
                for idx in rng.sample_distinct(negatives.len(), n) {
                    out.push(orient(&mut rng, user.id, pos.id, negatives[idx]));
                }
            } else {
                if distinct && !warned {
                    log::warn!(
                        "user {}: {} negatives requested but only {} available; sampling with replacement",
                        user.id,
                        n,
                        negatives.len()
                    );
                    warned = true;
                }
                for _ in 0..n {
                    let neg = negatives[rng.index(negatives.len())];
                    out.push(orient(&mut rng, user.id, pos.id, neg));
                }
            }
        }
    }
    Ok(out)
}

fn balanced(
    store: &FeatureStore,
    by_tag: &BTreeMap<TagId, Vec<&ItemRecord>>,
    seed: u64,
) -> Result<Vec<TripletExample>> {
    let tags: Vec<TagId> = by_tag.keys().copied().collect();
    // (positive tag, negative tag) -> [(user, positive item)]
    let mut combos: BTreeMap<(TagId, TagId), Vec<(UserId, ItemId)>> = BTreeMap::new();
    for &t in &tags {
        let users: Vec<UserId> = store
            .users()
            .iter()
            .filter(|u| u.dominant_tag == t)
            .map(|u| u.id)
            .collect();
        if users.is_empty() {
            continue;
        }
        let mut rng = RngState::substream(seed ^ BALANCED_SALT, u64::from(t));
        let mut pairs: Vec<(UserId, ItemId)> = users
            .iter()
            .flat_map(|&u| by_tag[&t].iter().map(move |i| (u, i.id)))
            .collect();
        rng.shuffle(&mut pairs);
        let mut others: Vec<TagId> = tags.iter().copied().filter(|&s| s != t).collect();
        rng.shuffle(&mut others);
        for &s in &others {
            combos.entry((t, s)).or_default();
        }
        for (k, pair) in pairs.into_iter().enumerate() {
            combos
                .get_mut(&(t, others[k % others.len()]))
                .unwrap()
                .push(pair);
        }
    }
    let per_combo = combos.values().map(Vec::len).min().unwrap_or(0);
    if per_combo == 0 {
        return Err(Error::Data(
            "balanced pairing leaves no triplets: some tag has fewer positives than other tags"
                .into(),
        ));
    }
    let mut out = Vec::with_capacity(per_combo * combos.len());
    for ((t, s), mut pairs) in combos {
        // Pairs were shuffled before assignment, so truncation drops a random excess.
        pairs.truncate(per_combo);
        let mut rng = RngState::substream(
            seed ^ BALANCED_SALT,
            (u64::from(t) << 32) | u64::from(s) | (1 << 63),
        );
        let pool = &by_tag[&s];
        for (user, pos) in pairs {
            let neg = pool[rng.index(pool.len())].id;
            out.push(orient(&mut rng, user, pos, neg));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ItemRecord, UserRecord};
    use std::collections::HashSet;

    fn store(tags_items: &[(TagId, usize)], users: &[(UserId, TagId)]) -> FeatureStore {
        let mut items = Vec::new();
        let mut id = 0;
        for &(tag, n) in tags_items {
            for _ in 0..n {
                items.push(ItemRecord {
                    id,
                    tag,
                    features: vec![id as f64],
                });
                id += 1;
            }
        }
        let dim = 1 + tags_items.iter().map(|t| t.0).max().unwrap() as usize;
        let users = users
            .iter()
            .map(|&(uid, tag)| {
                let mut v = vec![0.0; dim];
                v[tag as usize] = 1.0;
                UserRecord::new(uid, v)
            })
            .collect();
        FeatureStore::new(users, items).unwrap()
    }

    #[test]
    fn one_to_ten_single_positive() {
        let s = store(&[(0, 1), (1, 10)], &[(7, 0)]);
        let t = build_triplets(&s, PairingStrategy::OneToN(10), 3).unwrap();
        assert_eq!(t.len(), 10);
        let negs: HashSet<_> = t.iter().map(|t| t.negative()).collect();
        assert_eq!(negs.len(), 10);
        assert!(t
            .iter()
            .all(|x| x.positive() == 0 && label_is_consistent(&s, x)));
    }

    #[test]
    fn one_to_one_matches_unbalanced_count() {
        let s = store(&[(0, 4), (1, 6), (2, 3)], &[(1, 0), (2, 1), (3, 2), (4, 1)]);
        let a = build_triplets(&s, PairingStrategy::OneToN(1), 9).unwrap();
        let b = build_triplets(&s, PairingStrategy::Unbalanced, 9).unwrap();
        assert_eq!(a.len(), b.len());
        assert_eq!(a.len(), 4 + 6 + 3 + 6);
    }

    #[test]
    fn too_few_negatives_falls_back_to_replacement() {
        let s = store(&[(0, 2), (1, 3)], &[(1, 0)]);
        let t = build_triplets(&s, PairingStrategy::OneToN(5), 1).unwrap();
        assert_eq!(t.len(), 10);
        assert!(t.iter().all(|x| label_is_consistent(&s, x)));
    }

    #[test]
    fn balanced_equalizes_combinations() {
        let s = store(&[(0, 9), (1, 4), (2, 6)], &[(1, 0), (2, 1), (3, 2), (4, 2)]);
        let t = build_triplets(&s, PairingStrategy::Balanced, 5).unwrap();
        let mut counts: BTreeMap<(TagId, TagId), usize> = BTreeMap::new();
        for x in &t {
            assert!(label_is_consistent(&s, x));
            let pt = s.item(x.positive()).unwrap().tag;
            let nt = s.item(x.negative()).unwrap().tag;
            *counts.entry((pt, nt)).or_default() += 1;
        }
        assert_eq!(counts.len(), 6);
        // tag 1 has 4 positives over 2 other tags -> 2 per combination.
        assert!(counts.values().all(|&c| c == 2), "{counts:?}");
    }

    #[test]
    fn errors() {
        let one_tag = store(&[(0, 3)], &[(1, 0)]);
        assert!(build_triplets(&one_tag, PairingStrategy::Unbalanced, 0).is_err());
        let items = vec![
            ItemRecord {
                id: 0,
                tag: 0,
                features: vec![0.0],
            },
            ItemRecord {
                id: 1,
                tag: 1,
                features: vec![0.0],
            },
        ];
        let users = vec![UserRecord::new(0, vec![0.0, 0.0, 1.0])];
        let s = FeatureStore::new(users, items).unwrap();
        let err = build_triplets(&s, PairingStrategy::Unbalanced, 0).unwrap_err();
        assert!(err.to_string().contains("tag 2 has no items"), "{err}");
        let s = store(&[(0, 1), (1, 1)], &[(1, 0)]);
        assert!(build_triplets(&s, PairingStrategy::OneToN(0), 0).is_err());
    }

    #[test]
    fn swapped_is_same_event() {
        let t = TripletExample::oriented(1, 10, 20, PairLabel::PosNeg);
        let s = t.swapped();
        assert_eq!((s.item_i, s.item_j, s.label), (20, 10, PairLabel::NegPos));
        assert_eq!((s.positive(), s.negative()), (10, 20));
    }
}
