pub mod abf;
pub mod bits;
pub mod dataset;
pub mod error;
pub mod mnist;
pub mod estimate;
pub mod experiments;
pub mod export;
pub mod nn;
pub mod oracle;
pub mod search;
pub mod spectrum;
pub mod synth;

pub use bits::{parity, BitPattern, SubsetMask};
pub use dataset::{group_by_restriction, ActivationDataset, Record, RestrictionGroups};
pub use error::{Error, Result};
pub use estimate::EstimatorConfig;
pub use oracle::{FnOracle, PatternOracle, ProjectionOracle};
