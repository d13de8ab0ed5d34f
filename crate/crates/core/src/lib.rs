pub mod data;
pub mod density;
pub mod dirpa;
pub mod error;
pub mod experiment;
pub mod labelspace;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod split;
pub mod stats;
pub mod train;
