mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use emo_ig::attribution::{integrated_gradients, IGConfig, LinearTarget};
use emo_ig::autodiff::{bce_loss, grad_check, ParameterStore, Tape};
use emo_ig::data::{generate_synthetic, Dataset, SyntheticSpec, VideoSample};
use emo_ig::export::{csv_bytes, export_landmark_plot};
use emo_ig::model::{names, EmotionLabel, EmotionModel, ModelConfig};
use emo_ig::reference::LANDMARK_LADDER;
use emo_ig::selection::{
    global_attribution, rank_landmarks, select_typical_baselines, AttributionScope, GlobalConfig,
    LandmarkRanking, ReportTable, SelectionConfig,
};
use emo_ig::training::{
    adam_step, evaluate_accuracy, split_dataset, train, train_step, AdamConfig, AdamState,
    GridSpec, TrainConfig,
};
use emo_ig::{selection::selection_pipeline, Tensor};

use common::{first_of_each, planted_model, planted_train, train_planted, TARGET};

/// Timed criteria run one at a time so their clocks measure only themselves.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(criterion: u32, name: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "{tag} criterion {criterion} ({name}): {detail}").unwrap();
    out.flush().unwrap();
}

fn small_config() -> ModelConfig {
    ModelConfig::new(2, 3, 4, 8, 3)
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize, p: usize, l: usize) -> Vec<Tensor> {
    (0..n)
        .map(|_| Tensor::from_fn(&[p, 2, l], |_| rng.random_range(0.0..1.0)))
        .collect()
}

#[test]
fn criterion_1_gradients_match_finite_differences() {
    let _g = serial();
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut checks = 0;
    for trial in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let mut model = EmotionModel::build(small_config(), EmotionLabel::Fear, trial).unwrap();
        // zero biases put ReLU inputs exactly on the kink when dropout clears a row
        for (_, p) in model.params.iter_mut() {
            let jitter = Tensor::from_fn(p.value.shape(), |_| rng.random_range(-0.1..0.1));
            p.value.add_assign(&jitter);
        }
        let samples = random_batch(&mut rng, 4, 3, 8);
        let refs: Vec<&Tensor> = samples.iter().collect();
        let batch = model.stack(&refs).unwrap();
        let targets = [1.0, 0.0, 0.0, 1.0];
        let dropout_seed = rng.random::<u64>();

        let loss_with = |tape: &mut Tape, name: Option<&str>, x| {
            let mut params = model.params.bind(tape, false);
            let input = match name {
                Some(n) => {
                    params.replace(n, x);
                    tape.constant(batch.clone())
                }
                None => x,
            };
            let mut bn = model.bn_state.clone();
            let mut drop_rng = ChaCha8Rng::seed_from_u64(dropout_seed);
            let out = model.forward_graph(tape, &params, input, &mut bn, true, &mut drop_rng)?;
            tape.bce_loss(out.probs, &targets, None)
        };

        let names: Vec<String> = model.params.names().map(String::from).collect();
        for name in &names {
            let point = model.params.tensor(name).unwrap().clone();
            let err = grad_check(|t, x| loss_with(t, Some(name), x), &point, 1e-5).unwrap();
            worst = worst.max(err);
            checks += 1;
        }
        let err = grad_check(|t, x| loss_with(t, None, x), &batch, 1e-5).unwrap();
        worst = worst.max(err);
        checks += 1;
    }
    let elapsed = start.elapsed();
    let pass = worst < 1e-5 && elapsed < Duration::from_secs(60);
    verdict(
        1,
        "gradient correctness",
        pass,
        &format!(
            "max relative error {worst:.3e} over {checks} tensors in {:.1}s",
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_2_linear_ig_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let shape = [3, 2, 5];
    let w = Tensor::from_fn(&shape, |_| rng.random_range(-2.0..2.0));
    let target = LinearTarget::new(w.clone(), 0.7);
    let x = Tensor::from_fn(&shape, |_| rng.random_range(-1.0..1.0));
    let x0 = Tensor::from_fn(&shape, |_| rng.random_range(-1.0..1.0));
    let mut worst: f64 = 0.0;
    for m in [1, 7, 50] {
        let a = integrated_gradients(&target, &x, &x0, &IGConfig::with_steps(m)).unwrap();
        for i in 0..w.len() {
            let expected = (x.values()[i] - x0.values()[i]) * w.values()[i];
            worst = worst.max((a.values.values()[i] - expected).abs());
        }
    }
    let pass = worst < 1e-12;
    verdict(
        2,
        "linear IG exactness",
        pass,
        &format!("max abs error {worst:.3e} for m in {{1, 7, 50}}"),
    );
    assert!(pass);
}

#[test]
fn criterion_3_completeness_gap_shrinks_with_m() {
    let _g = serial();
    let spec = SyntheticSpec {
        landmarks: 8,
        frames: 3,
        samples_per_class: 60,
        informative: vec![1, 4, 6],
        amplitude: 0.1,
        noise_sigma: 0.02,
        seed: 0,
        target: EmotionLabel::Surprise,
    };
    let ds = generate_synthetic(&spec).unwrap().dataset;
    let split = split_dataset(&ds, spec.target, 0, 0.1, 0.15).unwrap();
    let mut cfg = small_config();
    cfg.bn_momentum = 0.9;
    let model = EmotionModel::build(cfg, spec.target, 0).unwrap();
    let tc = TrainConfig {
        learning_rate: 1e-2,
        epochs: 20,
        seed: 0,
        ..TrainConfig::default()
    };
    let model = train(model, &ds.select(&split.train), &ds.select(&split.val), &tc)
        .unwrap()
        .model;
    // a collapsed network has F(x) = F(x') and satisfies everything vacuously
    let val = evaluate_accuracy(&model, &ds.select(&split.val), 0.5).unwrap();
    assert!(val >= 0.9, "small model did not train: val acc {val}");

    let pos: Vec<&VideoSample> = ds
        .samples
        .iter()
        .filter(|s| s.label == spec.target)
        .collect();
    let neg: Vec<&VideoSample> = ds
        .samples
        .iter()
        .filter(|s| s.label != spec.target)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut failing = 0;
    let mut worst_ratio: f64 = 0.0;
    let mut first_failure = String::new();
    for pair in 0..10 {
        let x = &pos[rng.random_range(0..pos.len())].frames;
        let x0 = &neg[rng.random_range(0..neg.len())].frames;
        let mut gaps = Vec::new();
        let mut delta = 0.0;
        for m in [32, 64, 128, 256, 512] {
            let a = integrated_gradients(&model, x, x0, &IGConfig::with_steps(m)).unwrap();
            delta = (a.input_output - a.baseline_output).abs();
            gaps.push(a.completeness_gap());
        }
        assert!(delta > 0.0, "pair {pair} has F(x) = F(x')");
        worst_ratio = worst_ratio.max(gaps[4] / delta);
        let bound = gaps[4] <= 1e-3 * delta + 1e-6;
        let monotone = gaps.windows(2).all(|w| w[1] <= w[0] + 1e-9);
        if !(bound && monotone) {
            failing += 1;
            if first_failure.is_empty() {
                first_failure = format!(
                    "; pair {pair}: |ΔF| {delta:.3e}, gaps {:?}",
                    gaps.iter().map(|g| format!("{g:.2e}")).collect::<Vec<_>>()
                );
            }
        }
    }
    let pass = failing == 0;
    verdict(
        3,
        "completeness gap",
        pass,
        &format!(
            "{failing}/10 pairs violate the bound or the doubling rule, \
             largest gap(512)/|ΔF| {worst_ratio:.2e}{first_failure}"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_4_planted_landmarks_are_recovered() {
    let _g = serial();
    let start = Instant::now();
    let mut hits = Vec::new();
    let mut min_val: f64 = 1.0;
    for seed in 0..5 {
        let run = train_planted(seed, 0.02);
        min_val = min_val.min(run.outcome.history.best_val_acc);
        let baselines = first_of_each(&run.pool);
        let cfg = GlobalConfig {
            ig: IGConfig::with_steps(32),
            ..GlobalConfig::default()
        };
        let g =
            global_attribution(TARGET, &run.outcome.model, &run.pool, &baselines, &cfg).unwrap();
        let ranking = rank_landmarks(&g);
        hits.push(
            ranking
                .top(8)
                .iter()
                .filter(|n| run.spec.informative.contains(n))
                .count(),
        );
    }
    let elapsed = start.elapsed();
    let mut sorted = hits.clone();
    sorted.sort_unstable();
    let median = sorted[2];
    let pass = min_val >= 0.90 && median >= 6 && elapsed < Duration::from_secs(600);
    verdict(
        4,
        "planted-landmark recovery",
        pass,
        &format!(
            "hits per seed {hits:?}, median {median}, min val acc {min_val:.3}, {:.0}s",
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_5_reduced_sets_keep_accuracy() {
    let _g = serial();
    let run = train_planted(0, 0.02);
    let baselines = first_of_each(&run.pool);
    let cfg = SelectionConfig {
        ladder: vec![16, 8],
        default_grid: Some(GridSpec::singleton(8, 16, 16)),
        grid_seeds: 1,
        report_seeds: 10,
        train: planted_train(0),
        global: GlobalConfig {
            ig: IGConfig::with_steps(32),
            ..GlobalConfig::default()
        },
        ..SelectionConfig::default()
    };
    let report =
        selection_pipeline(TARGET, &run.dataset, &run.outcome.model, &baselines, &cfg).unwrap();
    let full = report.full.mean();
    let k16 = report.row(16).and_then(|r| r.mean());
    let k8 = report.row(8).and_then(|r| r.mean());
    let pass = match (full, k16, k8) {
        (Some(f), Some(a), Some(b)) => a >= f - 0.02 && b >= f - 0.02,
        _ => false,
    };
    verdict(
        5,
        "selection benefit",
        pass,
        &format!(
            "full {} | k=16 {} | k=8 {}",
            report.full.cell(),
            report.row(16).map_or("missing".into(), |r| r.cell()),
            report.row(8).map_or("missing".into(), |r| r.cell()),
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_6_randomized_conv_stays_frozen() {
    let _g = serial();
    let seed = 0;
    let ds = generate_synthetic(&common::planted_spec(seed, 0.0))
        .unwrap()
        .dataset;
    let split = split_dataset(&ds, TARGET, seed, 0.1, 0.15).unwrap();
    let tr = ds.select(&split.train);
    let cfg = planted_model(64, 8).randomized(true);
    let mut model = EmotionModel::build(cfg, TARGET, seed).unwrap();
    let kernel = model.params.tensor(names::CONV_KERNEL).unwrap().clone();
    let bias = model.params.tensor(names::CONV_BIAS).unwrap().clone();
    let tc = TrainConfig {
        learning_rate: 1e-3,
        seed,
        ..TrainConfig::default()
    };
    let mut adam = AdamState::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = tr.binary_labels(TARGET);
    for step in 0..50 {
        let idx: Vec<usize> = (0..16).map(|i| (step * 16 + i) % tr.len()).collect();
        let inputs: Vec<&Tensor> = idx.iter().map(|&i| &tr.samples[i].frames).collect();
        let targets: Vec<f64> = idx.iter().map(|&i| labels[i]).collect();
        train_step(
            &mut model,
            &inputs,
            &targets,
            None,
            &mut adam,
            &tc.adam(),
            &mut rng,
        )
        .unwrap();
    }
    let same = |name: &str, t: &Tensor| {
        let now = model.params.tensor(name).unwrap();
        now.shape() == t.shape()
            && now
                .values()
                .iter()
                .zip(t.values())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    };
    let frozen = same(names::CONV_KERNEL, &kernel) && same(names::CONV_BIAS, &bias);
    let val = evaluate_accuracy(&model, &ds.select(&split.val), 0.5).unwrap();
    let pass = frozen && val >= 0.95;
    verdict(
        6,
        "R-EMO freeze contract",
        pass,
        &format!("conv bit-identical: {frozen}, val acc {val:.3} after 50 steps"),
    );
    assert!(pass);
}

#[test]
fn criterion_7_bce_and_adam_match_closed_forms() {
    let ln2 = bce_loss(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
    let mut worst_bce = (ln2 - std::f64::consts::LN_2).abs();
    let cases: [(&[f64], &[f64], f64); 3] = [
        (&[0.9], &[1.0], -(0.9f64).ln()),
        (
            &[0.9, 0.2],
            &[1.0, 0.0],
            -((0.9f64).ln() + (0.8f64).ln()) / 2.0,
        ),
        (
            &[0.25, 0.75, 0.6],
            &[0.0, 0.0, 1.0],
            -((0.75f64).ln() + (0.25f64).ln() + (0.6f64).ln()) / 3.0,
        ),
    ];
    for (p, y, expected) in cases {
        worst_bce = worst_bce.max((bce_loss(p, y).unwrap() - expected).abs());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut params = ParameterStore::new();
    let w0 = Tensor::from_fn(&[3, 4], |_| rng.random_range(-1.0..1.0));
    let b0 = Tensor::from_fn(&[4], |_| rng.random_range(-1.0..1.0));
    params.insert("w", w0.clone(), true).unwrap();
    params.insert("b", b0.clone(), true).unwrap();
    let mut grads = BTreeMap::new();
    grads.insert(
        "w".to_string(),
        Tensor::from_fn(&[3, 4], |_| rng.random_range(-3.0..3.0)),
    );
    grads.insert(
        "b".to_string(),
        Tensor::from_fn(&[4], |_| rng.random_range(-1e-3..1e-3)),
    );
    let cfg = AdamConfig {
        learning_rate: 1e-2,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(&params);
    adam_step(&mut params, &grads, &mut state, &cfg).unwrap();
    let mut worst_adam: f64 = 0.0;
    for (name, start) in [("w", &w0), ("b", &b0)] {
        let g = &grads[name];
        let now = params.tensor(name).unwrap();
        for i in 0..start.len() {
            let gi = g.values()[i];
            let expected = start.values()[i] - cfg.learning_rate * gi / (gi.abs() + cfg.eps);
            worst_adam = worst_adam.max((now.values()[i] - expected).abs());
        }
    }
    let pass = worst_bce < 1e-12 && worst_adam < 1e-12;
    verdict(
        7,
        "BCE and Adam oracles",
        pass,
        &format!("bce error {worst_bce:.3e}, first Adam step error {worst_adam:.3e}"),
    );
    assert!(pass);
}

#[test]
fn criterion_8_aggregation_is_order_invariant() {
    let _g = serial();
    let spec = SyntheticSpec {
        samples_per_class: 6,
        ..SyntheticSpec::planted(12, 3, 4, 6, 0.02, 8)
    };
    let ds = generate_synthetic(&spec).unwrap().dataset;
    let model = EmotionModel::build(ModelConfig::new(3, 4, 5, 12, 4), spec.target, 8).unwrap();
    let baselines = first_of_each(&ds);
    let cfg = GlobalConfig {
        ig: IGConfig::with_steps(8),
        ..GlobalConfig::default()
    };
    let g = global_attribution(spec.target, &model, &ds, &baselines, &cfg).unwrap();

    let mut shuffled = ds.samples.clone();
    shuffled.reverse();
    shuffled.swap(0, 7);
    let permuted = Dataset::new(ds.frames, ds.landmarks, shuffled).unwrap();
    let gp = global_attribution(spec.target, &model, &permuted, &baselines, &cfg).unwrap();
    let sample_diff = g
        .mask
        .scores
        .iter()
        .zip(&gp.mask.scores)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let l = ds.landmarks;
    let n = g.per_baseline.len() as f64;
    let mut reversed = vec![0.0; l];
    for m in g.per_baseline.iter().rev() {
        for (r, s) in reversed.iter_mut().zip(&m.scores) {
            *r += s;
        }
    }
    let baseline_diff = reversed
        .iter()
        .zip(&g.mask.scores)
        .map(|(r, s)| (r / n - s).abs())
        .fold(0.0, f64::max);

    let scores = vec![0.5, 2.0, 1.0, 2.0, 0.5, 1.0, 2.0, 0.0];
    let a = LandmarkRanking::from_scores(scores.clone());
    let b = LandmarkRanking::from_scores(scores);
    let ties_ok = a.order == b.order && a.order == vec![1, 3, 6, 2, 5, 0, 4, 7];

    let pass = sample_diff < 1e-12 && baseline_diff < 1e-12 && ties_ok;
    verdict(
        8,
        "aggregation invariances",
        pass,
        &format!(
            "sample order {sample_diff:.3e}, baseline order {baseline_diff:.3e}, deterministic ties: {ties_ok}"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_9_protocol_runs_on_full_ladder() {
    let _g = serial();
    let start = Instant::now();
    let (p, l, n) = (8, 468, 574);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let samples = (0..n)
        .map(|i| {
            let frames = Tensor::from_fn(&[p, 2, l], |_| rng.random_range(0.0..1.0));
            VideoSample::new(i as u64, frames, EmotionLabel::ALL[i % 6]).unwrap()
        })
        .collect();
    let ds = Dataset::new(p, l, samples).unwrap();
    let emotion = EmotionLabel::Anger;
    let tc = TrainConfig {
        epochs: 10,
        ..TrainConfig::default()
    };
    let split = split_dataset(&ds, emotion, 0, tc.val_fraction, tc.test_fraction).unwrap();
    let model = EmotionModel::build(ModelConfig::new(16, 30, 33, l, p), emotion, 0).unwrap();
    let model = train(model, &ds.select(&split.train), &ds.select(&split.val), &tc)
        .unwrap()
        .model;
    let mut overrides = BTreeMap::new();
    for s in split.train.iter().map(|&i| &ds.samples[i]) {
        overrides.entry(s.label).or_insert(s.id);
    }
    let baselines = select_typical_baselines(&ds, &BTreeMap::new(), &overrides).unwrap();
    let cfg = SelectionConfig {
        ladder: LANDMARK_LADDER.to_vec(),
        default_grid: Some(GridSpec::singleton(16, 30, 33)),
        grid_seeds: 1,
        report_seeds: 3,
        train: tc,
        global: GlobalConfig {
            ig: IGConfig::with_steps(8),
            scope: AttributionScope::TargetOnly,
            ..GlobalConfig::default()
        },
        ..SelectionConfig::default()
    };
    let report = selection_pipeline(emotion, &ds, &model, &baselines, &cfg).unwrap();

    let reports = [report];
    let table = String::from_utf8(csv_bytes(&ReportTable { reports: &reports }).unwrap()).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    let header_ok = lines.first() == Some(&"emotion,468,234,128,64,32,16");
    let cells: Vec<&str> = lines.get(1).map_or(Vec::new(), |r| r.split(',').collect());
    let row_ok = lines.len() == 2
        && cells.len() == 7
        && cells[0] == "Anger"
        && cells[1..].iter().all(|c| c.contains('±'));

    let dir = tempfile::tempdir().unwrap();
    let plot = dir.path().join("landmarks.svg");
    let reference = Tensor::from_fn(&[2, l], |i| ds.samples[0].frames.values()[i]);
    export_landmark_plot(&reports[0].global.mask.scores, &reference, 16, &plot).unwrap();
    let svg = std::fs::read_to_string(&plot).unwrap();
    let circles = svg.matches("r=\"6\"").count();

    let elapsed = start.elapsed();
    let pass = header_ok && row_ok && circles == 16 && elapsed < Duration::from_secs(1800);
    verdict(
        9,
        "protocol fidelity artifacts",
        pass,
        &format!(
            "header {:?}, row {:?}, {circles} circled landmarks, {:.0}s",
            lines.first().unwrap_or(&""),
            lines.get(1).unwrap_or(&""),
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}
