//! Spatial splitting, class rebalancing and band normalization.

mod batch;
mod rebalance;
mod split;
mod stats;

pub use batch::{make_input, stack_early};
pub use rebalance::{rebalance, rebalance_indices, ClassStrategy, RebalancePlan};
pub use split::{read_split_manifest, split, write_split_manifest, Split, SplitRecord, SplitSpec, Splits};
pub use stats::{fit_stats, BandStat, BandStats, BAND_NAMES};
