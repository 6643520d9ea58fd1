//! Self-knowledge distillation via dropout-sampled posterior pairs.
//!
//! A single network is regularized by sampling two dropout views of its
//! feature vector, producing two posteriors, and matching them with a
//! symmetric temperature-scaled KL divergence whose gradient flow is
//! explicitly controlled (forward / reverse / both). The crate bundles:
//!
//! - [`autodiff`]: a minimal reverse-mode engine with a stop-gradient marker;
//! - [`model`]: a configurable split MLP with a dropout sampling point;
//! - [`distill`]: the loss family (cross-entropy, label smoothing, flow-mode
//!   KL, symmetric distillation loss, combined objective);
//! - [`kl_analysis`]: closed-form KL derivative formulas and the numeric
//!   checks behind them (assumption statistics, derivative-gap studies,
//!   gradient-direction reports);
//! - [`trainer`]: the SGD training loop with run modes and schedules;
//! - [`metrics`]: calibration, adversarial, corruption, and OOD evaluation;
//! - [`data`]: synthetic generators plus IDX/CSV ingestion;
//! - [`checkpoint`], [`config`], [`report`], [`commands`]: persistence and
//!   the CLI surface.

pub mod autodiff;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod distill;
pub mod error;
pub mod kl_analysis;
pub mod metrics;
pub mod model;
pub mod report;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
