//! Entropy-based activity features from in-home location event streams.
//!
//! The library turns timestamped (household, location) sensor events into
//! three per-window activity measures: Shannon entropy of the location
//! occupancy, the entropy rate of a first-order Markov movement model, and
//! a neural estimate of the entropy-production rate. A pipeline aggregates
//! the per-day measures into weekly features, normalizes them per
//! household, and discretizes them into four activity bands.

pub mod entropy;
pub mod error;
pub mod events;
pub mod markov;
pub mod neep;
pub mod pipeline;
pub mod rng;
pub mod validate;

pub use error::{Error, Result};
