//! Shared fixtures for the benchmarks.

use annoconsist::synthgen::{gen_record, ProposalConfig, SceneConfig};
use annoconsist::train::{seed_labeling, SeedTarget, TrainScene};
use annoconsist::{FitConfig, InstanceLabeling, SceneRecord};

pub fn scene(seed: u64) -> SceneRecord {
    gen_record(&SceneConfig::default(), &ProposalConfig::default(), seed).expect("scene generation")
}

/// A prepared scene and its seed labeling under the default fit config.
pub fn train_fixture<'a>(record: &'a SceneRecord, cfg: &FitConfig) -> (TrainScene<'a>, InstanceLabeling) {
    let ts = TrainScene::new(record, cfg.train.regime, &cfg.inference).expect("prepare scene");
    let y = seed_labeling(&ts, SeedTarget::Retrieval).expect("seed labeling");
    (ts, y)
}
