//! Input files, synthetic instances with planted support, and support-recovery metrics.

pub mod io;
mod metrics;
mod synth;

pub use io::{load_design, save_design, DesignPaths};
pub use metrics::{support_metrics, SupportMetrics};
pub use synth::{FeatureSigns, noise_sd_for_snr, planted_graph_edges, simulate, GroundTruth, SyntheticSpec};
