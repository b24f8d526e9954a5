//! Share-nothing worker pool. Each worker owns one bounded queue; producers
//! push with drop-oldest overflow and workers drain until closed. All stats
//! live behind the same per-worker mutex as the queue, so a snapshot is one
//! lock per worker and the conservation identity
//! accepted = processed + in_queue + dropped holds at every observation.

use super::{quantile, WorkerStats};
use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::Instant;

pub struct Job<P> {
    pub camera_id: u32,
    pub payload: P,
    pub enqueued: Instant,
}

struct Inner<P> {
    jobs: VecDeque<Job<P>>,
    accepted: u64,
    dropped: u64,
    processed: u64,
    in_flight: u64, // popped but handler not yet returned
    latencies: Vec<f64>, // seconds, enqueue to completion
    closed: bool,
}

struct Queue<P> {
    inner: Mutex<Inner<P>>,
    cv: Condvar,
}

/// Handler runs on the worker thread; anything it needs (recognizer,
/// response channel) rides in via the closure or the payload.
pub type Handler<P> = Arc<dyn Fn(u32, P) + Send + Sync>;

pub struct WorkerPool<P> {
    queues: Vec<Arc<Queue<P>>>,
    handles: Vec<JoinHandle<()>>,
    capacity: usize,
}

impl<P: Send + 'static> WorkerPool<P> {
    pub fn new(num_workers: usize, capacity: usize, handler: Handler<P>) -> WorkerPool<P> {
        assert!(num_workers >= 1 && capacity >= 1);
        let queues: Vec<Arc<Queue<P>>> = (0..num_workers)
            .map(|_| {
                Arc::new(Queue {
                    inner: Mutex::new(Inner {
                        jobs: VecDeque::new(),
                        accepted: 0,
                        dropped: 0,
                        processed: 0,
                        in_flight: 0,
                        latencies: Vec::new(),
                        closed: false,
                    }),
                    cv: Condvar::new(),
                })
            })
            .collect();
        let handles = queues
            .iter()
            .map(|q| {
                let q = Arc::clone(q);
                let handler = Arc::clone(&handler);
                std::thread::spawn(move || loop {
                    let mut g = q.inner.lock().unwrap();
                    while g.jobs.is_empty() && !g.closed {
                        g = q.cv.wait(g).unwrap();
                    }
                    let Some(job) = g.jobs.pop_front() else {
                        break; // closed and drained
                    };
                    g.in_flight += 1;
                    drop(g);
                    let enqueued = job.enqueued;
                    handler(job.camera_id, job.payload);
                    let mut g = q.inner.lock().unwrap();
                    g.in_flight -= 1;
                    g.processed += 1;
                    g.latencies.push(enqueued.elapsed().as_secs_f64());
                })
            })
            .collect();
        WorkerPool { queues, handles, capacity }
    }

    pub fn num_workers(&self) -> usize {
        self.queues.len()
    }

    /// Enqueues onto `worker`'s queue. When the queue is full the oldest
    /// waiting job is displaced (counted dropped) and handed back so the
    /// caller can fail it; in-flight work is never revoked.
    pub fn offer(&self, worker: usize, job: Job<P>) -> Option<Job<P>> {
        let q = &self.queues[worker];
        let mut g = q.inner.lock().unwrap();
        g.accepted += 1;
        let displaced = if g.jobs.len() >= self.capacity {
            g.dropped += 1;
            g.jobs.pop_front()
        } else {
            None
        };
        g.jobs.push_back(job);
        q.cv.notify_one();
        displaced
    }

    pub fn stats(&self) -> Vec<WorkerStats> {
        self.queues
            .iter()
            .enumerate()
            .map(|(i, q)| {
                let g = q.inner.lock().unwrap();
                let mut lat = g.latencies.clone();
                lat.sort_by(|a, b| a.total_cmp(b));
                WorkerStats {
                    worker_id: i,
                    frames_accepted: g.accepted,
                    frames_processed: g.processed,
                    frames_dropped: g.dropped,
                    // Counts in-flight work too, else a snapshot taken while
                    // a handler runs would break the conservation identity.
                    queue_depth: g.jobs.len() + g.in_flight as usize,
                    p50_s: quantile(&lat, 0.50),
                    p90_s: quantile(&lat, 0.90),
                    p99_s: quantile(&lat, 0.99),
                }
            })
            .collect()
    }

    /// Stops accepting, lets workers drain their queues, joins them.
    pub fn close(mut self) -> Vec<WorkerStats> {
        for q in &self.queues {
            q.inner.lock().unwrap().closed = true;
            q.cv.notify_all();
        }
        for h in self.handles.drain(..) {
            let _ = h.join();
        }
        self.stats()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camsim::route;
    use std::sync::atomic::{AtomicU64, Ordering};
    use std::time::Duration;

    #[test]
    fn conservation_and_per_camera_order() {
        let log: Arc<Mutex<Vec<(u32, u64)>>> = Arc::new(Mutex::new(Vec::new()));
        let l2 = Arc::clone(&log);
        let pool: WorkerPool<u64> = WorkerPool::new(
            2,
            64,
            Arc::new(move |cam, seq| {
                l2.lock().unwrap().push((cam, seq));
            }),
        );
        for seq in 0..60u64 {
            let cam = (seq % 3) as u32;
            pool.offer(
                route(cam, 2),
                Job { camera_id: cam, payload: seq, enqueued: Instant::now() },
            );
        }
        let stats = pool.close();
        let accepted: u64 = stats.iter().map(|s| s.frames_accepted).sum();
        let processed: u64 = stats.iter().map(|s| s.frames_processed).sum();
        let dropped: u64 = stats.iter().map(|s| s.frames_dropped).sum();
        assert_eq!(accepted, 60);
        assert_eq!(processed + dropped, 60);
        assert_eq!(dropped, 0);
        // Within each camera the processing order preserves submission order.
        let seen = log.lock().unwrap();
        for cam in 0..3u32 {
            let seqs: Vec<u64> = seen.iter().filter(|(c, _)| *c == cam).map(|(_, s)| *s).collect();
            assert!(seqs.windows(2).all(|w| w[0] < w[1]), "camera {cam}: {seqs:?}");
        }
    }

    #[test]
    fn overflow_drops_oldest_not_newest() {
        let done = Arc::new(AtomicU64::new(0));
        let d2 = Arc::clone(&done);
        let pool: WorkerPool<u64> = WorkerPool::new(
            1,
            4,
            Arc::new(move |_, _| {
                std::thread::sleep(Duration::from_millis(15));
                d2.fetch_add(1, Ordering::SeqCst);
            }),
        );
        let mut displaced = Vec::new();
        for seq in 0..20u64 {
            if let Some(j) = pool.offer(0, Job { camera_id: 0, payload: seq, enqueued: Instant::now() }) {
                displaced.push(j.payload);
            }
        }
        let stats = pool.close();
        assert_eq!(stats[0].frames_accepted, 20);
        assert!(stats[0].frames_dropped > 0);
        assert_eq!(stats[0].frames_processed + stats[0].frames_dropped, 20);
        assert_eq!(stats[0].frames_processed, done.load(Ordering::SeqCst));
        assert_eq!(displaced.len() as u64, stats[0].frames_dropped);
        // Oldest-first: every displaced job predates every one that ran after it.
        let mut sorted = displaced.clone();
        sorted.sort_unstable();
        assert_eq!(displaced, sorted);
        assert_eq!(stats[0].queue_depth, 0);
    }
}
