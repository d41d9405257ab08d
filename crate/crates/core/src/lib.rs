//! Pipeline core: turns narrated field videos into a curated,
//! versioned image dataset and tracks the collection workflow around it.

pub mod align;
pub mod archive;
pub mod config;
pub mod dataset;
pub mod digest;
pub mod error;
pub mod media;
pub mod qc;
pub mod store;
pub mod taxon;
pub mod transcribe;
pub mod workflow;
