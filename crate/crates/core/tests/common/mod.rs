#![allow(dead_code)]

use std::sync::OnceLock;

use latent_clan::diffusion::{train, Model, ScheduleParams, TrainConfig};
use latent_clan::toy_world::WorldSpec;

/// Quickly trained model for properties that only need a trained checkpoint,
/// not a good one.
pub fn small_model() -> &'static Model {
    static MODEL: OnceLock<Model> = OnceLock::new();
    MODEL.get_or_init(|| {
        let world = WorldSpec::faces(0).unwrap();
        let cfg = TrainConfig {
            dataset_size: 4000,
            batch: 32,
            steps: 400,
            hidden: vec![48, 48],
            ..TrainConfig::default()
        };
        let ckpt = train(&world, &cfg, ScheduleParams::default()).unwrap();
        Model::new(world, ckpt).unwrap()
    })
}
