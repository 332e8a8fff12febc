//! Layer-by-layer scene decomposition on synthetic sprite scenes.
//!
//! The crate is organised bottom-up:
//!
//! - [`raster`] and [`scene`]: masks, appearances, instances, compositing.
//! - [`order`]: pairwise occlusion matrices, layer orders, and order
//!   inference from removal steps.
//! - [`synth`] and [`dataset`]: seeded scene generation with exact ground
//!   truth and the on-disk annotation format.
//! - [`engine`]: the decompose-and-complete loop over pluggable
//!   [`engine::Segmenter`] and [`engine::Completer`] implementations.
//! - [`components`]: oracle, corrupted, and classical segmenters/completers.
//! - [`metrics`]: mask AP, occlusion AP, completion quality, and ordering
//!   baselines.
//! - [`edit`]: delete / move / reorder edits and recomposition.

pub mod components;
pub mod dataset;
pub mod engine;
pub mod edit;
pub mod error;
pub mod metrics;
pub mod order;
pub mod raster;
pub mod scene;
pub mod synth;

pub use error::{Error, Result};
pub use order::{LayerOrderAssignment, OcclusionMatrix};
pub use raster::{Appearance, BBox, Mask, Rle};
pub use scene::{Category, InstanceId, InstanceRecord, Scene};
