//! Ranking and metrics against independent brute-force recounts.

use triplet_rank::data::{
    build_triplets, generate_synthetic, FeatureStore, FrameLayout, PairingStrategy, SynthConfig,
};
use triplet_rank::eval::{item_item_precision_at_k, pairwise_accuracy, precision_at_k};
use triplet_rank::model::{
    rank_items_for_item, rank_items_for_user, rank_latent_for_item, rank_latent_for_user, Catalog,
    DistanceHead, PairLabel, TowerSpec, TripletModel,
};
use triplet_rank::numerics::{Matrix, RngState};

fn corpus(seed: u64, items_per_tag: usize) -> FeatureStore {
    generate_synthetic(&SynthConfig {
        num_tags: 4,
        users_per_tag: 6,
        items_per_tag,
        feature_noise_std: 1.5,
        topic_sharpness: 1.0,
        seed,
        layout: FrameLayout {
            frames: 2,
            frame_dim: 5,
        },
        topic_dim: 7,
        item_counts: None,
        user_counts: None,
    })
    .unwrap()
}

fn model(seed: u64, store: &FeatureStore) -> TripletModel {
    let user = TowerSpec {
        input_dim: store.user_dim(),
        hidden_dims: vec![6, 5],
        output_dim: 3,
        dropout_p: 0.2,
        normalize: true,
    };
    let item = TowerSpec {
        input_dim: store.item_dim(),
        hidden_dims: vec![8, 5],
        output_dim: 3,
        dropout_p: 0.2,
        normalize: true,
    };
    TripletModel::new(user, item, &mut RngState::new(seed)).unwrap()
}

fn embed_one_user(m: &TripletModel, x: &[f64]) -> Vec<f64> {
    m.embed_users(&Matrix::row_vector(x.to_vec()))
        .unwrap()
        .row(0)
        .to_vec()
}

fn embed_one_item(m: &TripletModel, x: &[f64]) -> Vec<f64> {
    m.embed_items(&Matrix::row_vector(x.to_vec()))
        .unwrap()
        .row(0)
        .to_vec()
}

fn brute_distance(w: &[f64], bias: f64, a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for k in 0..w.len() {
        acc += w[k] * (a[k] - b[k]) * (a[k] - b[k]);
    }
    acc + bias
}

/// Selection by repeated minimum: smallest score, then smallest id.
fn brute_top_k(mut scored: Vec<(f64, u64)>, k: usize) -> Vec<u64> {
    let mut out = Vec::new();
    while out.len() < k && !scored.is_empty() {
        let mut best = 0;
        for i in 1..scored.len() {
            let (s, id) = scored[i];
            let (bs, bid) = scored[best];
            if s < bs || (s == bs && id < bid) {
                best = i;
            }
        }
        out.push(scored.swap_remove(best).1);
    }
    out
}

#[test]
fn user_ranking_matches_exhaustive_selection() {
    for seed in 0..5 {
        let store = corpus(seed, 50);
        assert!(store.items().len() <= 200);
        let m = model(seed + 100, &store);
        let ids = store.item_ids();
        let catalog = Catalog::build(&m, ids.clone(), &store.item_matrix(&ids).unwrap()).unwrap();
        let (w, bias) = (m.head.weights().to_vec(), m.head.bias_value());
        for user in store.users() {
            let zu = embed_one_user(&m, &user.topic_vector);
            for k in [1, 7, 200, 500] {
                let got = rank_items_for_user(&m, &user.topic_vector, &catalog, k).unwrap();
                let scored = store
                    .items()
                    .iter()
                    .map(|it| {
                        (
                            brute_distance(&w, bias, &zu, &embed_one_item(&m, &it.features)),
                            it.id,
                        )
                    })
                    .collect();
                assert_eq!(got.ids, brute_top_k(scored, k), "user {} k {k}", user.id);
                assert_eq!(got.truncated, k > store.items().len());
            }
        }
    }
}

#[test]
fn item_ranking_matches_exhaustive_selection() {
    let store = corpus(3, 40);
    let m = model(7, &store);
    let ids = store.item_ids();
    let catalog = Catalog::build(&m, ids.clone(), &store.item_matrix(&ids).unwrap()).unwrap();
    for query in store.items().iter().step_by(3) {
        let zq = embed_one_item(&m, &query.features);
        for exclude in [None, Some(query.id)] {
            let got = rank_items_for_item(&m, &query.features, &catalog, 10, exclude).unwrap();
            let scored = store
                .items()
                .iter()
                .filter(|it| Some(it.id) != exclude)
                .map(|it| {
                    let z = embed_one_item(&m, &it.features);
                    (
                        zq.iter()
                            .zip(&z)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>(),
                        it.id,
                    )
                })
                .collect();
            assert_eq!(got.ids, brute_top_k(scored, 10));
            if exclude.is_none() {
                assert_eq!(got.ids[0], query.id);
                assert_eq!(got.scores[0], 0.0);
            }
        }
    }
}

#[test]
fn ties_break_by_ascending_id() {
    let latents = Matrix::from_rows(&[
        vec![1.0, 0.0],
        vec![0.0, 0.0],
        vec![1.0, 0.0],
        vec![0.0, 0.0],
        vec![2.0, 0.0],
    ])
    .unwrap();
    let catalog = Catalog::from_latents(vec![40, 30, 10, 20, 0], latents).unwrap();
    let head = DistanceHead::from_values(vec![1.0, 1.0], 0.0);
    let r = rank_latent_for_user(&head, &[0.0, 0.0], &catalog, 5);
    assert_eq!(r.ids, vec![20, 30, 10, 40, 0]);
    assert_eq!(r.scores, vec![0.0, 0.0, 1.0, 1.0, 4.0]);
    let r = rank_latent_for_item(&[0.0, 0.0], &catalog, 3, Some(20));
    assert_eq!(r.ids, vec![30, 10, 40]);
    let r = rank_latent_for_item(&[0.0, 0.0], &catalog, 9, None);
    assert!(r.truncated);
    assert_eq!(r.ids.len(), 5);
}

#[test]
fn pairwise_accuracy_matches_recount() {
    for seed in 0..4 {
        let store = corpus(seed, 30);
        let m = model(seed + 50, &store);
        let triplets = build_triplets(&store, PairingStrategy::OneToN(3), seed).unwrap();
        let (w, bias) = (m.head.weights().to_vec(), m.head.bias_value());
        let mut correct = 0usize;
        for t in &triplets {
            let zu = embed_one_user(&m, &store.user(t.user).unwrap().topic_vector);
            let zi = embed_one_item(&m, &store.item(t.item_i).unwrap().features);
            let zj = embed_one_item(&m, &store.item(t.item_j).unwrap().features);
            let o = brute_distance(&w, bias, &zu, &zi) - brute_distance(&w, bias, &zu, &zj);
            let p = 1.0 / (1.0 + (-o).exp());
            let ok = match t.label {
                PairLabel::PosNeg => p < 0.5,
                PairLabel::NegPos => p > 0.5,
            };
            correct += usize::from(ok);
        }
        let expected = correct as f64 / triplets.len() as f64;
        assert_eq!(pairwise_accuracy(&m, &triplets, &store).unwrap(), expected);
    }
}

#[test]
fn precision_matches_recount() {
    let store = corpus(8, 45);
    let m = model(9, &store);
    let items = store.item_ids();
    let users = store.user_ids();
    let (w, bias) = (m.head.weights().to_vec(), m.head.bias_value());
    let item_z: Vec<(u64, u32, Vec<f64>)> = store
        .items()
        .iter()
        .map(|it| (it.id, it.tag, embed_one_item(&m, &it.features)))
        .collect();
    let tag_of = |id: u64| item_z.iter().find(|e| e.0 == id).unwrap().1;
    for k in [1, 5, 10, 180, 400] {
        let mut total = 0.0;
        for user in store.users() {
            let zu = embed_one_user(&m, &user.topic_vector);
            let scored = item_z
                .iter()
                .map(|(id, _, z)| (brute_distance(&w, bias, &zu, z), *id))
                .collect();
            let top = brute_top_k(scored, k);
            let hits = top
                .iter()
                .filter(|&&id| tag_of(id) == user.dominant_tag)
                .count();
            total += hits as f64 / top.len() as f64;
        }
        let expected = total / users.len() as f64;
        let got = precision_at_k(&m, &users, &items, &store, k).unwrap();
        assert_eq!(got.value, expected, "k {k}");
        assert_eq!(got.n_queries, users.len());
        assert_eq!(got.truncated, k > items.len());

        let mut total = 0.0;
        for (qid, qtag, zq) in &item_z {
            let scored = item_z
                .iter()
                .filter(|e| e.0 != *qid)
                .map(|(id, _, z)| {
                    (
                        zq.iter()
                            .zip(z)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>(),
                        *id,
                    )
                })
                .collect();
            let top = brute_top_k(scored, k);
            let hits = top.iter().filter(|&&id| tag_of(id) == *qtag).count();
            total += hits as f64 / top.len() as f64;
        }
        let expected = total / item_z.len() as f64;
        let got = item_item_precision_at_k(&m, &items, &items, &store, k).unwrap();
        assert_eq!(got.value, expected, "item-item k {k}");
    }
}

#[test]
fn degenerate_inputs_are_errors() {
    let store = corpus(1, 10);
    let m = model(1, &store);
    let items = store.item_ids();
    let users = store.user_ids();
    assert!(pairwise_accuracy(&m, &[], &store).is_err());
    assert!(precision_at_k(&m, &users, &items, &store, 0).is_err());
    assert!(precision_at_k(&m, &[], &items, &store, 5).is_err());
    assert!(precision_at_k(&m, &users, &[], &store, 5).is_err());
    assert!(item_item_precision_at_k(&m, &items[..1], &items[..1], &store, 5).is_err());
}
