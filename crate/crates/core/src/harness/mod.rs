//! Datasets, normalization, file formats, configuration and experiment orchestration.

mod checkpoint;
mod config;
mod dataset;
mod io;
mod pipeline;
mod report;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, MAGIC};
pub use config::ExperimentConfig;
pub use dataset::{
    apply_norm, compute_norm_stats, invert_norm, load_dataset, save_dataset, DemoDataset, DemoPair, DimStats,
    NormStats, FRACTIONS, STD_FLOOR,
};
pub use io::{read_bytes, read_text, write_atomic};
pub use pipeline::{
    action_box, augment, checkpoint_file, dbc_policy_for, demos_for, eval_stage, field_stage, fractions, gen_demos,
    noise_model_for, sweep, sweep_csv, train_baseline, train_dm, train_method, train_policy_stage, SweepRow,
    TrainedActor, AUGMENTED_FILE, AUGMENT_CKPT, DEMOS_FILE, DM_FILE, FIELD_FILE, SWEEP_FILE,
};
pub use report::{emit_report, episodes_csv, summary_line, EPISODE_HEADER, SUMMARY_HEADER};
