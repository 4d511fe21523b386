use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde_json::{json, Value};

use emo_ig::attribution::{attribution_mask, integrated_gradients, AttributionMask};
use emo_ig::data::{
    augment_dataset, generate_synthetic, load_dataset, save_dataset, signal_to_noise, Dataset,
    SyntheticSpec,
};
use emo_ig::export::{export_csv, export_landmark_plot, write_atomic};
use emo_ig::model::{read_checkpoint, write_checkpoint, EmotionLabel, EmotionModel};
use emo_ig::selection::{
    global_attribution, rank_landmarks, select_typical_baselines, selection_pipeline,
    AttributionScope, BaselineSet, ReportTable, SelectionConfig,
};
use emo_ig::training::{evaluate_accuracy, split_dataset, train as train_model};

use crate::config::{load_run_config, GridFile, RunConfig};
use crate::layout::{mean_first_frame, read_layout, Layout};
use crate::{
    AttributeArgs, BaselineArgs, DataArgs, EvalArgs, GlobalArgs, PlotArgs, SelectArgs, SynthArgs,
    TrainArgs,
};

pub fn checkpoint_name(emotion: EmotionLabel) -> String {
    format!("model-{}.ckpt", emotion.name().to_ascii_lowercase())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_summary(dir: &Path, command: &str, started: Instant, body: Value) -> Result<()> {
    let summary = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "elapsed_seconds": started.elapsed().as_secs_f64(),
        "result": body,
    });
    let bytes = serde_json::to_vec_pretty(&summary)?;
    write_atomic(&dir.join("summary.json"), &bytes)?;
    Ok(())
}

fn load(data: &DataArgs) -> Result<(Dataset, RunConfig)> {
    let mut cfg = load_run_config(data.config.as_deref())?;
    if let Some(seed) = data.seed {
        cfg.train.seed = seed;
    }
    let ds = load_dataset(&data.manifest)?;
    Ok((ds, cfg))
}

/// Training and validation samples of the split for `emotion`, sorted.
fn pool_indices(ds: &Dataset, emotion: EmotionLabel, cfg: &RunConfig) -> Result<Vec<usize>> {
    let t = &cfg.train;
    let split = split_dataset(ds, emotion, t.seed, t.val_fraction, t.test_fraction)?;
    let mut idx: Vec<usize> = split.train.iter().chain(&split.val).copied().collect();
    idx.sort_unstable();
    Ok(idx)
}

fn resolve_baselines(pool: &Dataset, args: &BaselineArgs) -> Result<BaselineSet> {
    let overrides: BTreeMap<EmotionLabel, u64> = args.overrides.iter().copied().collect();
    for (emotion, id) in &overrides {
        if pool.get(*id).is_none() {
            bail!(
                "baseline override {emotion}={id}: sample {id} is held out by the test split; \
                 baselines must come from the training pool"
            );
        }
    }
    let mut models = BTreeMap::new();
    for emotion in pool.emotions() {
        if overrides.contains_key(&emotion) {
            continue;
        }
        let Some(dir) = &args.models else {
            bail!(
                "no baseline for {emotion}: pass --models DIR or --baseline-override {emotion}=ID"
            );
        };
        let path = dir.join(checkpoint_name(emotion));
        models.insert(emotion, read_checkpoint(&path)?);
    }
    Ok(select_typical_baselines(pool, &models, &overrides)?)
}

fn reference_layout_for(layout: Option<&Path>, ds: &Dataset) -> Result<emo_ig::Tensor> {
    let t = match layout {
        Some(p) => read_layout(p)?,
        None => mean_first_frame(ds)?,
    };
    if t.shape() != [2, ds.landmarks] {
        bail!(
            "layout has {} landmarks, the data has {}",
            t.shape()[1],
            ds.landmarks
        );
    }
    Ok(t)
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let started = Instant::now();
    let cfg = load_run_config(args.config.as_deref())?;
    let mut spec = cfg
        .synth
        .unwrap_or_else(|| SyntheticSpec::planted(64, 8, 8, 120, 0.02, 0));
    if let Some(v) = args.landmarks {
        spec.landmarks = v;
    }
    if let Some(v) = args.frames {
        spec.frames = v;
    }
    if let Some(v) = args.per_class {
        spec.samples_per_class = v;
    }
    if let Some(v) = args.sigma {
        spec.noise_sigma = v;
    }
    if let Some(v) = args.seed {
        spec.seed = v;
    }
    if let Some(v) = args.emotion {
        spec.target = v;
    }
    if let Some(n) = args.planted {
        spec.informative = SyntheticSpec::planted(spec.landmarks, n, 1, 1, 0.0, 0).informative;
    }
    if let Some(v) = args.informative {
        spec.informative = v;
    }
    if let Some(v) = args.amplitude {
        spec.amplitude = v;
    }
    let data = generate_synthetic(&spec)?;
    create_dir(&args.out)?;
    let manifest = save_dataset(&data.dataset, &args.out)?;
    export_csv(&Layout(data.layout.clone()), &args.out.join("layout.csv"))?;
    let snr = signal_to_noise(&data.dataset, spec.target, &spec.informative).ok();
    println!(
        "wrote {} samples to {}",
        data.dataset.len(),
        manifest.display()
    );
    write_summary(
        &args.out,
        "synth",
        started,
        json!({
            "manifest": manifest,
            "spec": spec,
            "samples": data.dataset.len(),
            "warnings": data.warnings,
            "snr": snr,
        }),
    )
}

pub fn train(args: TrainArgs) -> Result<()> {
    let started = Instant::now();
    let (ds, mut cfg) = load(&args.data)?;
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if args.randomized {
        cfg.model.randomized_conv = true;
    }
    let emotions: Vec<EmotionLabel> = if args.emotion.eq_ignore_ascii_case("all") {
        ds.emotions().into_iter().collect()
    } else {
        vec![args.emotion.parse()?]
    };
    create_dir(&args.out)?;
    let mut results = Vec::new();
    for emotion in emotions {
        let t = &cfg.train;
        let split = split_dataset(&ds, emotion, t.seed, t.val_fraction, t.test_fraction)?;
        let mut train_set = ds.select(&split.train);
        if args.augment {
            train_set = augment_dataset(&train_set, args.flip_axis);
        }
        let model_cfg = cfg.model.build(ds.landmarks, ds.frames);
        let model = EmotionModel::build(model_cfg, emotion, t.seed)?;
        let out = train_model(model, &train_set, &ds.select(&split.val), t)?;
        let test_acc = evaluate_accuracy(
            &out.model,
            &ds.select(&split.test),
            emo_ig::training::DEFAULT_THRESHOLD,
        )?;
        let ckpt = args.out.join(checkpoint_name(emotion));
        write_checkpoint(&out.model, &ckpt)?;
        let history = args.out.join(format!(
            "history-{}.csv",
            emotion.name().to_ascii_lowercase()
        ));
        export_csv(&out.history, &history)?;
        println!(
            "{emotion}: best epoch {} val {:.4} test {:.4}",
            out.history.best_epoch, out.history.best_val_acc, test_acc
        );
        results.push(json!({
            "emotion": emotion,
            "checkpoint": ckpt,
            "history": history,
            "best_epoch": out.history.best_epoch,
            "best_val_acc": out.history.best_val_acc,
            "test_acc": test_acc,
            "train_samples": train_set.len(),
            "trainable_params": out.model.parameter_count().0,
        }));
    }
    write_summary(
        &args.out,
        "train",
        started,
        json!({ "config": { "train": cfg.train }, "models": results }),
    )
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let started = Instant::now();
    let (ds, cfg) = load(&args.data)?;
    let model = read_checkpoint(&args.checkpoint)?;
    let subset = if args.test_split {
        let t = &cfg.train;
        let split = split_dataset(&ds, model.target, t.seed, t.val_fraction, t.test_fraction)?;
        ds.select(&split.test)
    } else {
        ds
    };
    let acc = evaluate_accuracy(&model, &subset, args.threshold)?;
    println!("accuracy {acc} on {} samples", subset.len());
    if let Some(out) = &args.out {
        create_dir(out)?;
        write_summary(
            out,
            "eval",
            started,
            json!({
                "emotion": model.target,
                "accuracy": acc,
                "samples": subset.len(),
                "test_split": args.test_split,
            }),
        )?;
    }
    Ok(())
}

pub fn attribute(args: AttributeArgs) -> Result<()> {
    let started = Instant::now();
    let (ds, cfg) = load(&args.data)?;
    let model = read_checkpoint(&args.checkpoint)?;
    let fetch = |id: u64| {
        ds.get(id)
            .with_context(|| format!("sample {id} is not in the dataset"))
    };
    let (x, b) = (fetch(args.sample)?, fetch(args.baseline)?);
    let mut ig = cfg.attribution.ig;
    if let Some(m) = args.m {
        ig.steps = m;
    }
    let a = integrated_gradients(&model, &x.frames, &b.frames, &ig)?.with_ids(x.id, b.id);
    let mask = attribution_mask(&a)?;
    let gap = a.completeness_gap();
    create_dir(&args.out)?;
    export_csv(&a, &args.out.join("attribution.csv"))?;
    export_csv(&mask, &args.out.join("mask.csv"))?;
    println!(
        "F(x) {:.6} F(x') {:.6} sum {:.6} completeness gap {gap:.3e} (m = {})",
        a.input_output,
        a.baseline_output,
        a.values.sum(),
        ig.steps
    );
    write_summary(
        &args.out,
        "attribute",
        started,
        json!({
            "emotion": model.target,
            "sample": x.id,
            "baseline": b.id,
            "steps": ig.steps,
            "input_output": a.input_output,
            "baseline_output": a.baseline_output,
            "attribution_sum": a.values.sum(),
            "completeness_gap": gap,
        }),
    )
}

fn global_config(args: &GlobalArgs, cfg: &mut RunConfig) {
    if let Some(m) = args.m {
        cfg.attribution.ig.steps = m;
    }
    if args.target_only {
        cfg.attribution.scope = AttributionScope::TargetOnly;
    }
}

fn write_plot(args: &GlobalArgs, ds: &Dataset, mask: &AttributionMask) -> Result<PathBuf> {
    let layout = reference_layout_for(args.layout.as_deref(), ds)?;
    let path = args.out.join("landmarks.svg");
    export_landmark_plot(&mask.scores, &layout, args.top_k.min(ds.landmarks), &path)?;
    Ok(path)
}

pub fn global_attr(args: GlobalArgs) -> Result<()> {
    let started = Instant::now();
    let (ds, mut cfg) = load(&args.data)?;
    global_config(&args, &mut cfg);
    let model = read_checkpoint(&args.checkpoint)?;
    let pool = ds.select(&pool_indices(&ds, model.target, &cfg)?);
    let baselines = resolve_baselines(&pool, &args.baselines)?;
    let g = global_attribution(model.target, &model, &pool, &baselines, &cfg.attribution)?;
    let ranking = rank_landmarks(&g);
    create_dir(&args.out)?;
    export_csv(&g, &args.out.join("global-mask.csv"))?;
    export_csv(&ranking, &args.out.join("ranking.csv"))?;
    let plot = write_plot(&args, &ds, &g.mask)?;
    println!(
        "{}: top landmarks {:?}",
        model.target,
        ranking.top(args.top_k.min(ds.landmarks))
    );
    write_summary(
        &args.out,
        "global-attr",
        started,
        json!({
            "emotion": model.target,
            "baselines": baselines.ids,
            "baseline_outputs": g.baseline_outputs,
            "samples": g.sample_count,
            "steps": g.steps,
            "max_completeness_gap": g.max_gap,
            "top": ranking.top(args.top_k.min(ds.landmarks)),
            "plot": plot,
        }),
    )
}

pub fn select(args: SelectArgs) -> Result<()> {
    let started = Instant::now();
    let g = &args.global;
    let (ds, mut cfg) = load(&g.data)?;
    global_config(g, &mut cfg);
    let model = read_checkpoint(&g.checkpoint)?;
    let emotion = model.target;
    let pool = ds.select(&pool_indices(&ds, emotion, &cfg)?);
    let baselines = resolve_baselines(&pool, &g.baselines)?;

    let mut sel = SelectionConfig {
        grid_seeds: args.grid_seeds.unwrap_or(cfg.selection.grid_seeds),
        report_seeds: args.seeds.unwrap_or(cfg.selection.report_seeds),
        train: cfg.train.clone(),
        global: cfg.attribution.clone(),
        ..SelectionConfig::default()
    };
    if let Some(l) = args.ladder.clone().or(cfg.selection.ladder.clone()) {
        sel.ladder = l;
    }
    if let Some(path) = &args.grid {
        let file = GridFile::load(path)?;
        sel.grids = file.per_size()?;
        sel.default_grid = file.default;
    }

    let report = selection_pipeline(emotion, &ds, &model, &baselines, &sel)?;
    create_dir(&g.out)?;
    let reports = [report];
    let table = ReportTable { reports: &reports };
    export_csv(&table, &g.out.join("report.csv"))?;
    export_csv(&table.detail(), &g.out.join("report-detail.csv"))?;
    let report = &reports[0];
    export_csv(&report.global, &g.out.join("global-mask.csv"))?;
    export_csv(&report.ranking, &g.out.join("ranking.csv"))?;
    for row in &report.rows {
        if let Some(grid) = &row.grid {
            export_csv(grid, &g.out.join(format!("grid-{}.csv", row.k)))?;
        }
    }
    let plot = write_plot(g, &ds, &report.global.mask)?;

    let rows: Vec<Value> = std::iter::once(&report.full)
        .chain(report.rows.iter().filter(|r| r.k != report.full_landmarks))
        .map(|r| {
            json!({
                "k": r.k,
                "cell": r.cell(),
                "mean": r.result.as_ref().map(|x| x.mean),
                "std": r.result.as_ref().map(|x| x.std),
                "accuracies": r.result.as_ref().map(|x| x.accuracies.clone()),
                "config": r.config,
                "error": r.error,
            })
        })
        .collect();
    for r in &rows {
        println!("k = {}: {}", r["k"], r["cell"].as_str().unwrap_or("failed"));
    }
    write_summary(
        &g.out,
        "select",
        started,
        json!({
            "emotion": emotion,
            "ladder": sel.ladder,
            "baselines": baselines.ids,
            "report_seeds": sel.report_seeds,
            "grid_seeds": sel.grid_seeds,
            "rows": rows,
            "top": report.ranking.top(g.top_k.min(ds.landmarks)),
            "plot": plot,
        }),
    )
}

pub fn plot(args: PlotArgs) -> Result<()> {
    let mask = AttributionMask::read_csv(&args.mask)?;
    let layout = match (&args.layout, &args.manifest) {
        (Some(p), _) => read_layout(p)?,
        (None, Some(m)) => mean_first_frame(&load_dataset(m)?)?,
        (None, None) => bail!("plot needs --layout or --manifest"),
    };
    if layout.shape() != [2, mask.landmarks()] {
        bail!(
            "layout has {} landmarks, the mask has {}",
            layout.shape()[1],
            mask.landmarks()
        );
    }
    export_landmark_plot(&mask.scores, &layout, args.top_k, &args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}
