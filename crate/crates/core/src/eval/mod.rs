//! Subject-level splits, ROC/AUC with bootstrap intervals, and the ablation
//! runner.

mod ablation;
mod metrics;
mod report;
mod split;

pub use ablation::*;
pub use metrics::*;
pub use report::*;
pub use split::*;
