//! Synthetic corpus standing in for real listening data.
//!
//! Each tag gets a Gaussian prototype feature vector; items of that tag are
//! the prototype plus isotropic Gaussian noise. Users of a tag get a topic
//! vector whose largest entry is always that tag's topic.

use serde::{Deserialize, Serialize};

use super::{FeatureStore, FrameLayout, ItemRecord, TagId, UserRecord};
use crate::error::{Error, Result};
use crate::numerics::RngState;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_tags: usize,
    pub users_per_tag: usize,
    pub items_per_tag: usize,
    pub feature_noise_std: f64,
    /// Extra weight on the user's own topic; 0 keeps the other topics
    /// close behind, large values give near one-hot vectors.
    pub topic_sharpness: f64,
    pub seed: u64,
    pub layout: FrameLayout,
    /// Length of user topic vectors; must be at least `num_tags`.
    pub topic_dim: usize,
    /// Per-tag item counts overriding `items_per_tag`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_counts: Option<Vec<usize>>,
    /// Per-tag user counts overriding `users_per_tag`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_counts: Option<Vec<usize>>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_tags: 7,
            users_per_tag: 20,
            items_per_tag: 40,
            feature_noise_std: 0.5,
            topic_sharpness: 2.0,
            seed: 0,
            layout: FrameLayout::default(),
            topic_dim: 7,
            item_counts: None,
            user_counts: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_tags == 0 || self.users_per_tag == 0 || self.items_per_tag == 0 {
            return bad("tag, user and item counts must be >= 1".into());
        }
        if !(self.feature_noise_std >= 0.0 && self.feature_noise_std.is_finite()) {
            return bad(format!(
                "noise std {} must be finite and >= 0",
                self.feature_noise_std
            ));
        }
        if !(self.topic_sharpness >= 0.0 && self.topic_sharpness.is_finite()) {
            return bad(format!(
                "topic sharpness {} must be finite and >= 0",
                self.topic_sharpness
            ));
        }
        if self.layout.dim() == 0 {
            return bad("feature layout is empty".into());
        }
        if self.topic_dim < self.num_tags {
            return bad(format!(
                "topic dim {} cannot hold {} tags",
                self.topic_dim, self.num_tags
            ));
        }
        for (name, counts) in [("item", &self.item_counts), ("user", &self.user_counts)] {
            if let Some(c) = counts {
                if c.len() != self.num_tags || c.contains(&0) {
                    return bad(format!(
                        "{name} counts must list {} positive values",
                        self.num_tags
                    ));
                }
            }
        }
        Ok(())
    }

    fn items_for(&self, tag: usize) -> usize {
        self.item_counts
            .as_ref()
            .map_or(self.items_per_tag, |c| c[tag])
    }

    fn users_for(&self, tag: usize) -> usize {
        self.user_counts
            .as_ref()
            .map_or(self.users_per_tag, |c| c[tag])
    }
}

/// Deterministic in `config.seed`. Item ids and user ids both count from 0
/// in tag-major order.
pub fn generate_synthetic(config: &SynthConfig) -> Result<FeatureStore> {
    config.validate()?;
    let dim = config.layout.dim();
    let mut proto_rng = RngState::substream(config.seed, 0);
    let prototypes: Vec<Vec<f64>> = (0..config.num_tags)
        .map(|_| (0..dim).map(|_| proto_rng.normal()).collect())
        .collect();

    let mut item_rng = RngState::substream(config.seed, 1);
    let mut items = Vec::new();
    for (tag, proto) in prototypes.iter().enumerate() {
        for _ in 0..config.items_for(tag) {
            let features = proto
                .iter()
                .map(|&p| {
                    if config.feature_noise_std == 0.0 {
                        p
                    } else {
                        p + config.feature_noise_std * item_rng.normal()
                    }
                })
                .collect();
            items.push(ItemRecord {
                id: items.len() as u64,
                tag: tag as TagId,
                features,
            });
        }
    }

    let mut user_rng = RngState::substream(config.seed, 2);
    let mut users = Vec::new();
    for tag in 0..config.num_tags {
        for _ in 0..config.users_for(tag) {
            // Off-topic weights lie in [0, 1); the own topic gets 1 + sharpness.
            let mut raw: Vec<f64> = (0..config.topic_dim).map(|_| user_rng.uniform()).collect();
            raw[tag] = 1.0 + config.topic_sharpness;
            let total: f64 = raw.iter().sum();
            let topic = raw.into_iter().map(|v| v / total).collect();
            users.push(UserRecord::new(users.len() as u64, topic));
        }
    }
    FeatureStore::new(users, items)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(noise: f64) -> SynthConfig {
        SynthConfig {
            num_tags: 3,
            users_per_tag: 4,
            items_per_tag: 5,
            feature_noise_std: noise,
            topic_sharpness: 0.0,
            seed: 17,
            layout: FrameLayout {
                frames: 2,
                frame_dim: 6,
            },
            topic_dim: 7,
            item_counts: None,
            user_counts: None,
        }
    }

    #[test]
    fn zero_noise_items_identical_within_tag() {
        let store = generate_synthetic(&small(0.0)).unwrap();
        for tag in 0..3 {
            let group: Vec<_> = store.items().iter().filter(|i| i.tag == tag).collect();
            assert_eq!(group.len(), 5);
            assert!(group.windows(2).all(|w| w[0].features == w[1].features));
        }
    }

    #[test]
    fn same_seed_same_store() {
        assert_eq!(
            generate_synthetic(&small(0.3)).unwrap(),
            generate_synthetic(&small(0.3)).unwrap()
        );
        let mut other = small(0.3);
        other.seed = 18;
        assert_ne!(
            generate_synthetic(&small(0.3)).unwrap(),
            generate_synthetic(&other).unwrap()
        );
    }

    #[test]
    fn users_dominated_by_their_tag() {
        let store = generate_synthetic(&small(0.3)).unwrap();
        assert_eq!(store.user_dim(), 7);
        for (k, u) in store.users().iter().enumerate() {
            assert_eq!(u.dominant_tag as usize, k / 4);
            assert!((u.topic_vector.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn count_overrides() {
        let mut cfg = small(0.1);
        cfg.item_counts = Some(vec![1, 2, 3]);
        cfg.user_counts = Some(vec![3, 2, 1]);
        let store = generate_synthetic(&cfg).unwrap();
        assert_eq!(store.counts(), (6, 6));
        cfg.item_counts = Some(vec![1, 2]);
        assert!(generate_synthetic(&cfg).is_err());
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = small(0.1);
        cfg.num_tags = 8;
        assert!(cfg.validate().is_err());
        let mut cfg = small(-0.1);
        assert!(cfg.validate().is_err());
        cfg.feature_noise_std = 0.0;
        cfg.items_per_tag = 0;
        assert!(cfg.validate().is_err());
    }
}
