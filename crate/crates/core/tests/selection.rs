mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use emo_ig::data::{generate_synthetic, Dataset, VideoSample};
use emo_ig::model::EmotionLabel;
use emo_ig::selection::{select_typical_baselines, subset_dataset, LandmarkRanking};
use emo_ig::Tensor;

use common::{planted_spec, train_planted, TARGET};

fn scores() -> impl Strategy<Value = Vec<f64>> {
    // few distinct values, so ties are common
    prop::collection::vec(
        prop_oneof![0.0f64..1.0, (0u8..4).prop_map(f64::from)],
        1..40,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ranking_is_a_deterministic_permutation(s in scores()) {
        let r = LandmarkRanking::from_scores(s.clone());
        let mut seen = r.order.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..s.len()).collect::<Vec<_>>());
        prop_assert_eq!(&r, &LandmarkRanking::from_scores(s.clone()));
        for w in r.order.windows(2) {
            let (a, b) = (w[0], w[1]);
            prop_assert!(s[a] > s[b] || (s[a] == s[b] && a < b));
        }
    }

    #[test]
    fn top_sets_are_nested(s in scores()) {
        let r = LandmarkRanking::from_scores(s.clone());
        for k in 0..s.len() {
            let small = r.top(k);
            let big = r.top(k + 1);
            prop_assert!(small.iter().all(|n| big.contains(n)));
        }
    }

    #[test]
    fn full_subset_inverts_exactly(seed in 0u64..1000, l in 2usize..10, s in scores()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..4)
            .map(|i| {
                let frames = Tensor::from_fn(&[2, 2, l], |_| rng.random_range(0.0..1.0));
                VideoSample::new(i, frames, EmotionLabel::ALL[i as usize]).unwrap()
            })
            .collect();
        let ds = Dataset::new(2, l, samples).unwrap();
        let scores: Vec<f64> = (0..l).map(|n| s[n % s.len()]).collect();
        let ranking = LandmarkRanking::from_scores(scores);
        let sub = subset_dataset(&ds, &ranking, l).unwrap();
        prop_assert_eq!(&sub.original_indices, &ranking.order);
        prop_assert_eq!(sub.inverse().unwrap(), ds);
    }
}

#[test]
fn typical_video_is_the_first_highest_scoring_one() {
    let run = train_planted(0, 0.02);
    let mut samples: Vec<VideoSample> = generate_synthetic(&planted_spec(1, 0.05))
        .unwrap()
        .dataset
        .samples
        .into_iter()
        .filter(|s| s.label == TARGET)
        .take(40)
        .collect();
    let model = &run.outcome.model;
    let score = |s: &VideoSample| model.predict(&s.frames).unwrap();
    let best = samples
        .iter()
        .max_by(|a, b| score(a).total_cmp(&score(b)).then(b.id.cmp(&a.id)))
        .unwrap()
        .clone();
    // an exact copy with a larger id must lose the tie
    let next_id = samples.iter().map(|s| s.id).max().unwrap() + 1;
    samples.push(VideoSample {
        id: next_id,
        ..best.clone()
    });
    let ds = Dataset::new(8, 64, samples).unwrap();
    let models = BTreeMap::from([(TARGET, run.outcome.model.clone())]);
    let picked = select_typical_baselines(&ds, &models, &BTreeMap::new()).unwrap();
    assert_eq!(picked.get(TARGET), Some(best.id));
}
