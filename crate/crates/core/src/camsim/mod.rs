//! Multi-camera ingestion at desk scale: a share-nothing worker pool behind
//! static modulo routing, an HTTP recognition service on it, and an
//! in-process load replay that reports measured latency quantiles.

mod pool;
mod service;
mod simulate;

pub use pool::{Handler, Job, WorkerPool};
pub use service::{serve, RecognizeFn, ServeConfig, Service};
pub use simulate::{camera_streams, simulate, SimConfig, SimReport};

use crate::error::{Error, Result};
use crate::img::Image;
use crate::synthgen::SceneRecord;
use serde::{Deserialize, Serialize};

// ── Routing ─────────────────────────────────────────────────────────────────

/// Static round-robin: camera -> worker by id modulo pool size. No work
/// stealing; a camera's frames always land on the same worker.
pub fn route(camera_id: u32, num_workers: usize) -> usize {
    assert!(num_workers >= 1, "need at least one worker");
    camera_id as usize % num_workers
}

// ── Stats ───────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerStats {
    pub worker_id: usize,
    pub frames_accepted: u64,
    pub frames_processed: u64,
    pub frames_dropped: u64,
    /// Waiting plus in-flight, so accepted = processed + queue_depth + dropped
    /// holds at any instant.
    pub queue_depth: usize,
    pub p50_s: f64,
    pub p90_s: f64,
    pub p99_s: f64,
}

/// Nearest-rank quantile over an ascending-sorted slice; 0 when empty.
pub(crate) fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

// ── Camera streams ──────────────────────────────────────────────────────────

/// One camera's replay source: frames in timestamp order, emitted at a fixed
/// interval, cycling when told to run longer than it has frames.
pub struct CameraStream {
    pub camera_id: u32,
    pub frames: Vec<Image>,
    pub frame_interval_s: f64,
}

impl CameraStream {
    pub fn new(
        camera_id: u32,
        records: &[&SceneRecord],
        frames: Vec<Image>,
        frame_interval_s: f64,
    ) -> Result<CameraStream> {
        if !(frame_interval_s > 0.0) {
            return Err(Error::Config(format!(
                "frame interval must be positive, got {frame_interval_s}"
            )));
        }
        if records.windows(2).any(|w| w[0].timestamp > w[1].timestamp) {
            return Err(Error::InvalidInput(format!(
                "camera {camera_id} records out of timestamp order"
            )));
        }
        Ok(CameraStream { camera_id, frames, frame_interval_s })
    }
}
