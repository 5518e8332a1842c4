//! Monte-Carlo cross-validation: manifests, task definitions, shared split
//! plans, class rebalancing and the train-twice benchmark runner.

mod bench;
mod manifest;
mod splits;
mod task;

pub use bench::{
    gather_tiles, meta_path, read_tile_labels, read_tile_labels_file, run_benchmark, run_seed, task_distributions, tile_sets, BenchConfig, DirSource,
    FeatureSource, MemorySource, MetricTable, RunRecord, SplitRow, TableMeta, TileLabels, RUNS_PER_SPLIT,
};
pub use manifest::{read_manifest, read_manifest_file, write_manifest, write_manifest_file, SlideManifest, SlideRecord};
pub use splits::{
    balance_classes, make_splits, make_splits_with, Grouping, Split, SplitConfig, SplitPlan, N_SPLITS, TRAIN_FRACTION,
};
pub use task::{order_classes, EligibleSlide, TaskKind, TaskSpec, TaskTargets};
