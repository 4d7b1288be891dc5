//! Measurement quantities evaluated along optimizer trajectories.

mod moreau;
mod quantile;
mod record;
mod z;

pub use moreau::{gamma_window, moreau_grad, MoreauGrad, DEFAULT_PROX_TOL};
pub use quantile::{aggregate_quantile, median, nearest_rank};
pub use record::{consensus_error, Metric, RecorderSettings, TrajectoryEntry, TrajectoryRecord, TrajectoryRecorder};
pub use z::{z_update, ZTracker};
