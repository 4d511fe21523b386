use std::collections::BTreeMap;

use emo_ig::attribution::IGConfig;
use emo_ig::data::{generate_synthetic, SyntheticSpec};
use emo_ig::model::{EmotionModel, ModelConfig};
use emo_ig::par;
use emo_ig::selection::{global_attribution, select_typical_baselines, GlobalConfig};

#[test]
fn sequential_and_parallel_runs_agree_bitwise() {
    let spec = SyntheticSpec::planted(10, 3, 4, 6, 0.02, 9);
    let ds = generate_synthetic(&spec).unwrap().dataset;
    let model = EmotionModel::build(ModelConfig::new(3, 4, 5, 10, 4), spec.target, 9).unwrap();
    let mut overrides = BTreeMap::new();
    for s in &ds.samples {
        overrides.entry(s.label).or_insert(s.id);
    }
    let baselines = select_typical_baselines(&ds, &BTreeMap::new(), &overrides).unwrap();
    let cfg = GlobalConfig {
        ig: IGConfig::with_steps(12),
        ..GlobalConfig::default()
    };
    let run = |parallel| {
        par::set_parallel(parallel);
        let g = global_attribution(spec.target, &model, &ds, &baselines, &cfg).unwrap();
        let p = model.predict_batch(&ds.tensors()).unwrap();
        (g, p)
    };
    let seq = run(false);
    let par_run = run(true);
    assert_eq!(seq, par_run);
}
