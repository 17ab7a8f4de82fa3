//! Airway segmentation with a nested-U saliency network: slice
//! preprocessing, the network and its Dice objective, training,
//! connected-component refinement, and volume I/O.

pub mod config;
mod error;

pub mod data;
pub mod loss;
pub mod post;
pub mod pre;
pub mod registry;
pub mod trainer;
pub mod u2net;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{Dims, LabelMap, Mask, Spacing, Volume};
