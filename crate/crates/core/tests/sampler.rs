mod support;

use std::collections::BTreeSet;

use am3::episode::{episode_stream, sample_episode, EpisodeConfig};
use am3::synthetic::SyntheticTaskSpec;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn ten_categories() -> am3::dataset::LabeledDataset {
    support::synthetic(SyntheticTaskSpec {
        n_categories: 10,
        visual_dim: 3,
        semantic_dim: 3,
        samples_per_category: 8,
        ..Default::default()
    })
    .0
}

#[test]
fn categories_appear_in_proportion() {
    let d = ten_categories();
    let ids = d.category_ids();
    let n_way = 3;
    let draws = 1000;
    let config = EpisodeConfig::new(n_way, 1, 1).unwrap();
    let mut counts = vec![0usize; ids.len()];
    for episode in episode_stream(&d, &ids, config, 21, draws).unwrap() {
        for id in &episode.category_ids {
            counts[ids.iter().position(|x| x == id).unwrap()] += 1;
        }
    }
    let expected = n_way as f64 / ids.len() as f64;
    for (id, c) in ids.iter().zip(&counts) {
        let freq = *c as f64 / draws as f64;
        assert!((freq - expected).abs() <= 0.05, "{id}: {freq} vs {expected}");
    }
}

proptest! {
    #[test]
    fn episodes_respect_counts_and_disjointness(
        n_way in 1usize..=5,
        k_shot in 1usize..=4,
        k_query in 1usize..=4,
        seed in any::<u64>(),
    ) {
        let d = ten_categories();
        let ids = d.category_ids();
        let config = EpisodeConfig::new(n_way, k_shot, k_query).unwrap();
        let episode = sample_episode(&d, &ids, &config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();

        prop_assert_eq!(episode.n_way(), n_way);
        let mut sorted = episode.category_ids.clone();
        sorted.sort();
        sorted.dedup();
        prop_assert_eq!(&sorted, &episode.category_ids);
        prop_assert_eq!(episode.support.len(), n_way * k_shot);
        prop_assert_eq!(episode.query.len(), n_way * k_query);
        for class in 0..n_way {
            let support: BTreeSet<usize> = episode.support.iter().filter(|s| s.class == class).map(|s| s.position).collect();
            let query: BTreeSet<usize> = episode.query.iter().filter(|s| s.class == class).map(|s| s.position).collect();
            prop_assert_eq!(support.len(), k_shot);
            prop_assert_eq!(query.len(), k_query);
            prop_assert!(support.is_disjoint(&query));
            let samples = &d.category(&episode.category_ids[class]).unwrap().samples;
            for s in episode.support.iter().chain(&episode.query).filter(|s| s.class == class) {
                prop_assert_eq!(&samples[s.position], &s.features);
            }
        }
        prop_assert!(episode.support.iter().chain(&episode.query).all(|s| s.class < n_way));
    }

    #[test]
    fn same_seed_same_episode(seed in any::<u64>()) {
        let d = ten_categories();
        let ids = d.category_ids();
        let config = EpisodeConfig::new(4, 2, 3).unwrap();
        let a = sample_episode(&d, &ids, &config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = sample_episode(&d, &ids, &config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn empty_stream_and_oversized_requests() {
    let d = ten_categories();
    let ids = d.category_ids();
    let config = EpisodeConfig::new(5, 1, 1).unwrap();
    assert_eq!(episode_stream(&d, &ids, config, 0, 0).unwrap().count(), 0);
    let four: Vec<String> = ids.into_iter().take(4).collect();
    let err = episode_stream(&d, &four, config, 0, 1).err().unwrap();
    assert!(matches!(err, am3::Error::Config(_)), "{err}");
}
