//! Queue-aware capacitated p-median facility location.
//!
//! Clients route demand to facilities that run M/M/k queues. The objective is
//! mean response time: network latency plus time in system.

pub mod formulations;
pub mod greedy;
pub mod harness;
pub mod heuristic;
pub mod ingestion;
pub mod model;
pub mod pwl;
pub mod queueing;
pub mod scalar;

pub use model::{Instance, Solution};
pub use scalar::Scalar;

pub type QueueParams = queueing::QueueParams<f64>;
pub type QueueMetrics = queueing::QueueMetrics<f64>;
pub type Basepoint = pwl::Basepoint<f64>;
pub type CurvePWL = pwl::CurvePWL<f64>;
pub type BasepointSet = pwl::BasepointSet<f64>;
pub type SurfaceMesh = pwl::SurfaceMesh<f64>;
