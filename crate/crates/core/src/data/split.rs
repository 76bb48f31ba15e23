use std::collections::BTreeMap;

use super::{FeatureStore, TagId, TripletExample};
use crate::error::{Error, Result};
use crate::numerics::RngState;

/// Splits triplets into (train, test), stratified by the dominant tag of each
/// triplet's user. Both parts keep the input order.
///
/// The test part has `round(n · test_fraction)` triplets, distributed over
/// strata by largest remainder. If any stratum has fewer than two triplets
/// the split falls back to unstratified sampling.
pub fn split_train_test(
    triplets: &[TripletExample],
    store: &FeatureStore,
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<TripletExample>, Vec<TripletExample>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test fraction {test_fraction} not in (0, 1)"
        )));
    }
    let mut strata: BTreeMap<TagId, Vec<usize>> = BTreeMap::new();
    for (idx, t) in triplets.iter().enumerate() {
        let user = store
            .user(t.user)
            .ok_or_else(|| Error::Data(format!("triplet {idx}: unknown user {}", t.user)))?;
        strata.entry(user.dominant_tag).or_default().push(idx);
    }
    if strata.values().any(|s| s.len() < 2) {
        log::warn!("degenerate strata in train/test split; falling back to unstratified");
        strata = BTreeMap::from([(0, (0..triplets.len()).collect())]);
    }
    let n = triplets.len();
    let total_test = (n as f64 * test_fraction).round() as usize;

    // Largest-remainder allocation of the test budget.
    let quotas: Vec<(TagId, f64)> = strata
        .iter()
        .map(|(&t, s)| (t, total_test as f64 * s.len() as f64 / n as f64))
        .collect();
    let mut alloc: BTreeMap<TagId, usize> = quotas
        .iter()
        .map(|&(t, q)| (t, q.floor() as usize))
        .collect();
    let mut leftover = total_test - alloc.values().sum::<usize>();
    let mut order: Vec<(TagId, f64)> = quotas.iter().map(|&(t, q)| (t, q - q.floor())).collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for (t, _) in order {
        if leftover == 0 {
            break;
        }
        *alloc.get_mut(&t).unwrap() += 1;
        leftover -= 1;
    }

    let mut rng = RngState::new(seed);
    let mut is_test = vec![false; n];
    for (t, mut members) in strata {
        rng.shuffle(&mut members);
        for &idx in members.iter().take(alloc[&t]) {
            is_test[idx] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (t, flag) in triplets.iter().zip(is_test) {
        if flag {
            test.push(*t);
        } else {
            train.push(*t);
        }
    }
    Ok((train, test))
}

/// Users and items partitioned into disjoint train and test stores.
#[derive(Clone, Debug)]
pub struct CorpusSplit {
    pub train: FeatureStore,
    pub test: FeatureStore,
}

fn stratified_ids<K: Ord + Copy>(
    members: Vec<(K, u64)>,
    fraction: f64,
    rng: &mut RngState,
) -> (Vec<u64>, Vec<u64>) {
    let mut groups: BTreeMap<K, Vec<u64>> = BTreeMap::new();
    for (k, id) in members {
        groups.entry(k).or_default().push(id);
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (_, mut ids) in groups {
        rng.shuffle(&mut ids);
        let n_test = if ids.len() < 2 {
            0
        } else {
            ((ids.len() as f64 * fraction).round() as usize).clamp(1, ids.len() - 1)
        };
        test.extend_from_slice(&ids[..n_test]);
        train.extend_from_slice(&ids[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Holds out a fraction of users and items per tag, so the test store shares
/// no user or item with the train store.
pub fn split_corpus(store: &FeatureStore, test_fraction: f64, seed: u64) -> Result<CorpusSplit> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test fraction {test_fraction} not in (0, 1)"
        )));
    }
    let mut rng = RngState::substream(seed, 0x5117);
    let (train_items, test_items) = stratified_ids(
        store.items().iter().map(|i| (i.tag, i.id)).collect(),
        test_fraction,
        &mut rng,
    );
    let (train_users, test_users) = stratified_ids(
        store
            .users()
            .iter()
            .map(|u| (u.dominant_tag, u.id))
            .collect(),
        test_fraction,
        &mut rng,
    );
    Ok(CorpusSplit {
        train: store.subset(&train_users, &train_items)?,
        test: store.subset(&test_users, &test_items)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ItemRecord, UserRecord};
    use crate::model::PairLabel;

    fn fixture(n: usize) -> (FeatureStore, Vec<TripletExample>) {
        let users = (0..4)
            .map(|u| {
                let mut v = vec![0.0; 2];
                v[u % 2] = 1.0;
                UserRecord::new(u as u64, v)
            })
            .collect();
        let items = (0..4)
            .map(|i| ItemRecord {
                id: i,
                tag: (i % 2) as TagId,
                features: vec![0.0],
            })
            .collect();
        let store = FeatureStore::new(users, items).unwrap();
        let triplets = (0..n)
            .map(|k| TripletExample {
                user: (k % 4) as u64,
                item_i: (k % 3) as u64,
                item_j: k as u64,
                label: PairLabel::PosNeg,
            })
            .collect();
        (store, triplets)
    }

    #[test]
    fn sizes_union_and_determinism() {
        let (store, trip) = fixture(100);
        let (train, test) = split_train_test(&trip, &store, 0.2, 11).unwrap();
        assert_eq!((train.len(), test.len()), (80, 20));
        let mut all: Vec<_> = train.iter().chain(&test).copied().collect();
        all.sort();
        let mut orig = trip.clone();
        orig.sort();
        assert_eq!(all, orig);
        let again = split_train_test(&trip, &store, 0.2, 11).unwrap();
        assert_eq!(again, (train, test));
    }

    #[test]
    fn degenerate_strata_fall_back() {
        let (store, trip) = fixture(5);
        // users 0, 1, 3: tag 0 has a single triplet.
        let lopsided = vec![trip[0], trip[1], trip[3]];
        let (train, test) = split_train_test(&lopsided, &store, 0.4, 1).unwrap();
        assert_eq!((train.len(), test.len()), (2, 1));
        assert!(split_train_test(&trip, &store, 1.0, 1).is_err());
    }

    #[test]
    fn corpus_split_is_disjoint() {
        let (store, _) = fixture(0);
        let split = split_corpus(&store, 0.5, 3).unwrap();
        for id in split.test.item_ids() {
            assert!(split.train.item(id).is_none());
        }
        for id in split.test.user_ids() {
            assert!(split.train.user(id).is_none());
        }
        assert_eq!(split.train.counts(), (2, 2));
        assert_eq!(split.test.counts(), (2, 2));
    }
}
