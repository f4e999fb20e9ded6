//! Configuration, synthetic planted world and pipeline orchestration.

pub mod config;
pub mod pipeline;
pub mod synth;

pub use config::{derive_seed, Mode, RunConfig, Setting};
pub use pipeline::{
    run_pipeline, screening_runs, stage_detect, stage_eval, stage_gen_synth, stage_label, stage_pocket_id,
    stage_screen, stage_train_adapter, stage_train_align, Manifest, RunReport, Workspace,
};
pub use synth::{gen_synthetic, PlantedSite, SiteRole, SyntheticWorld, SyntheticWorldSpec};
