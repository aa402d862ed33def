//! Ground-based localization of a landing drone from an event camera and an
//! FMCW mmWave radar.
//!
//! The pipeline runs in two stages. Cross-modal tracking filters both sensor
//! streams, detects candidate objects and picks the landing drone by its
//! propeller signature. A factor-graph optimizer then fuses the surviving
//! measurements into a smooth trajectory, using an adaptive incremental QR
//! solver to keep per-update latency low. A deterministic simulator produces
//! labeled streams for testing every stage against ground truth.

pub mod config;
pub mod consistency;
pub mod event;
pub mod gajo;
pub mod geometry;
pub mod metrics;
pub mod pipeline;
pub mod radar;
pub mod sim;
