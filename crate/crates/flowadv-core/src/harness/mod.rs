//! Run configuration, model/dataset persistence, experiment reports, and
//! image dumps shared by the CLI and the test suites.

pub mod checkpoint;
pub mod config;
pub mod fsutil;
pub mod images;
pub mod report;

pub use checkpoint::{
    load_classifier, load_flow, save_classifier, save_flow, Descriptor, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config::{AttackSection, DataConfig, FlowSection, IoConfig, RunConfig};
pub use fsutil::atomic_write;
pub use images::{dump_images, pgm_bytes, pgm_from_bytes, PERTURBATION_GAIN};
pub use report::{aggregates, build_report, emit_report, load_report, Aggregates, Report};
