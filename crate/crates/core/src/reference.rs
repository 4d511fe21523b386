//! Published reference values for the CK+ experiments.
//!
//! These are documentation targets: the CK+ data is licensed and not shipped,
//! so nothing here is asserted by the synthetic test suites.

use crate::model::EmotionLabel;
use EmotionLabel::*;

/// The landmark ladder used for retraining after ranking.
pub const LANDMARK_LADDER: [usize; 5] = [234, 128, 64, 32, 16];

/// Total landmarks produced by the face-mesh extractor.
pub const FULL_LANDMARKS: usize = 468;

/// Adam learning rate and mini-batch size used for every network.
pub const LEARNING_RATE: f64 = 1e-4;
pub const BATCH_SIZE: usize = 16;

/// CK+ split sizes after removing contempt.
pub const CKPLUS_TRAIN_SAMPLES: usize = 487;
pub const CKPLUS_TEST_SAMPLES: usize = 87;

/// Grid-searched `(F, Q, R)` for T-EMO at each reduced landmark count.
const TEMO_GRID_RESULTS: [(usize, [(EmotionLabel, (usize, usize, usize)); 6]); 5] = [
    (
        234,
        [
            (Anger, (25, 31, 54)),
            (Disgust, (35, 50, 63)),
            (Fear, (39, 51, 34)),
            (Happiness, (50, 58, 63)),
            (Sadness, (24, 68, 54)),
            (Surprise, (30, 58, 63)),
        ],
    ),
    (
        128,
        [
            (Anger, (25, 31, 54)),
            (Disgust, (39, 30, 63)),
            (Fear, (39, 51, 34)),
            (Happiness, (39, 68, 72)),
            (Sadness, (39, 58, 74)),
            (Surprise, (40, 68, 73)),
        ],
    ),
    (
        64,
        [
            (Anger, (25, 31, 54)),
            (Disgust, (39, 30, 33)),
            (Fear, (39, 51, 34)),
            (Happiness, (16, 58, 52)),
            (Sadness, (39, 68, 64)),
            (Surprise, (40, 58, 63)),
        ],
    ),
    (
        32,
        [
            (Anger, (25, 31, 54)),
            (Disgust, (39, 50, 63)),
            (Fear, (39, 61, 64)),
            (Happiness, (16, 58, 52)),
            (Sadness, (39, 58, 74)),
            (Surprise, (30, 58, 63)),
        ],
    ),
    (
        16,
        [
            (Anger, (25, 31, 54)),
            (Disgust, (39, 50, 53)),
            (Fear, (24, 68, 64)),
            (Happiness, (16, 58, 52)),
            (Sadness, (39, 58, 64)),
            (Surprise, (40, 58, 63)),
        ],
    ),
];

/// `(F, Q, R)` reported for a T-EMO network with `landmarks` inputs, if any.
pub fn temo_hyperparameters(
    emotion: EmotionLabel,
    landmarks: usize,
) -> Option<(usize, usize, usize)> {
    TEMO_GRID_RESULTS
        .iter()
        .find(|(k, _)| *k == landmarks)
        .and_then(|(_, rows)| rows.iter().find(|(e, _)| *e == emotion))
        .map(|(_, v)| *v)
}

/// Every `(F, Q, R)` reported at `landmarks`, one per emotion.
pub fn temo_hyperparameters_at(landmarks: usize) -> Option<Vec<(usize, usize, usize)>> {
    TEMO_GRID_RESULTS
        .iter()
        .find(|(k, _)| *k == landmarks)
        .map(|(_, rows)| rows.iter().map(|(_, v)| *v).collect())
}

/// Reported `mean±std` accuracy cells, columns `[468, 234, 128, 64, 32, 16]`.
pub const TEMO_ACCURACY: [(EmotionLabel, [(f64, f64); 6]); 6] = [
    (
        Anger,
        [
            (0.924, 0.016),
            (0.926, 0.037),
            (0.905, 0.037),
            (0.903, 0.034),
            (0.924, 0.030),
            (0.891, 0.041),
        ],
    ),
    (
        Disgust,
        [
            (0.934, 0.019),
            (0.964, 0.027),
            (0.964, 0.019),
            (0.951, 0.034),
            (0.948, 0.040),
            (0.925, 0.045),
        ],
    ),
    (
        Fear,
        [
            (0.948, 0.024),
            (0.971, 0.023),
            (0.974, 0.020),
            (0.964, 0.026),
            (0.950, 0.026),
            (0.919, 0.041),
        ],
    ),
    (
        Happiness,
        [
            (0.986, 0.008),
            (0.988, 0.011),
            (0.982, 0.014),
            (0.979, 0.018),
            (0.981, 0.015),
            (0.978, 0.012),
        ],
    ),
    (
        Sadness,
        [
            (0.920, 0.026),
            (0.905, 0.052),
            (0.916, 0.020),
            (0.914, 0.040),
            (0.922, 0.018),
            (0.910, 0.029),
        ],
    ),
    (
        Surprise,
        [
            (0.993, 0.009),
            (0.995, 0.021),
            (0.995, 0.008),
            (0.993, 0.012),
            (0.991, 0.009),
            (0.986, 0.007),
        ],
    ),
];

pub const REMO_ACCURACY: [(EmotionLabel, [(f64, f64); 6]); 6] = [
    (
        Anger,
        [
            (0.889, 0.018),
            (0.874, 0.032),
            (0.862, 0.04),
            (0.874, 0.033),
            (0.883, 0.047),
            (0.866, 0.043),
        ],
    ),
    (
        Disgust,
        [
            (0.941, 0.023),
            (0.941, 0.032),
            (0.953, 0.019),
            (0.897, 0.034),
            (0.905, 0.023),
            (0.887, 0.048),
        ],
    ),
    (
        Fear,
        [
            (0.934, 0.033),
            (0.948, 0.016),
            (0.939, 0.027),
            (0.936, 0.003),
            (0.924, 0.025),
            (0.907, 0.032),
        ],
    ),
    (
        Happiness,
        [
            (0.968, 0.022),
            (0.978, 0.011),
            (0.971, 0.016),
            (0.957, 0.021),
            (0.966, 0.011),
            (0.964, 0.017),
        ],
    ),
    (
        Sadness,
        [
            (0.907, 0.031),
            (0.893, 0.021),
            (0.893, 0.037),
            (0.907, 0.027),
            (0.898, 0.033),
            (0.893, 0.033),
        ],
    ),
    (
        Surprise,
        [
            (0.962, 0.014),
            (0.981, 0.009),
            (0.976, 0.0016),
            (0.981, 0.017),
            (0.974, 0.027),
            (0.974, 0.021),
        ],
    ),
];

/// Per-emotion accuracy of the linear-kernel and RBF-kernel SVM benchmarks.
pub const SVM_LINEAR_ACCURACY: [(EmotionLabel, f64); 6] = [
    (Anger, 0.85),
    (Fear, 0.95),
    (Disgust, 0.78),
    (Happiness, 0.97),
    (Sadness, 0.75),
    (Surprise, 0.99),
];
pub const SVM_RBF_ACCURACY: [(EmotionLabel, f64); 6] = [
    (Anger, 0.84),
    (Fear, 0.95),
    (Disgust, 0.74),
    (Happiness, 0.98),
    (Sadness, 0.79),
    (Surprise, 1.00),
];
