//! Cooperative-perception trajectory anomaly detection.
//!
//! The pipeline generates multi-agent driving scenarios, labels each
//! trajectory with rule-based detectors, trains a graph-attention plus
//! transformer classifier, and measures its robustness to communication
//! blackouts.

pub mod autodiff;
pub mod blackout;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod features;
pub mod gat;
pub mod labeler;
pub mod lof;
pub mod metrics;
pub mod model;
pub mod scenario;
pub mod sim;
pub mod temporal;
pub mod train;

pub use error::{Error, Result};
