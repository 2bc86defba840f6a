//! Temporal drift and adversarial robustness benchmark for Android malware
//! detectors.

pub mod attacks;
pub mod config;
pub mod data;
pub mod metrics;
pub mod models;
pub mod preprocess;
pub mod protocols;
pub mod report;
pub mod seed;
