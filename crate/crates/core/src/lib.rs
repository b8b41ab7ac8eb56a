//! Health-alert pipeline for noisy wearable-sensor streams.
//!
//! Sensor windows are denoised, combined with a redacted free-text summary
//! of the user's condition and its embedding, routed to an expert alert
//! agent chosen from a free-text user description, and scored by a DDPG
//! policy whose per-parameter weights drive a thresholded alert rule. User
//! feedback on alerts relabels rewards and moves per-activity thresholds.

pub mod activity;
pub mod agent;
pub mod dataset;
pub mod denoise;
pub mod feedback;
pub mod gate;
pub mod harness;
pub mod hub_edge;
pub mod nn;
pub mod noise;
pub mod persist;
pub mod pipeline;
pub mod seed;
pub mod text;
