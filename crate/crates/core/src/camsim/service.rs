//! HTTP recognition service: one accept loop parses and validates requests,
//! then hands (request, frame) to the worker pool keyed by camera id. The
//! worker responds from its own thread, so a slow recognition never blocks
//! accept or the other workers' queues.

use super::pool::{Job, WorkerPool};
use super::{route, WorkerStats};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::img::Image;
use crate::pipeline::PlateResult;
use serde::{Deserialize, Serialize};
use std::io::Read;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};
use tiny_http::{Header, Method, Response, Server};

/// Runs on a worker thread; must be pure in the frame (identical image in,
/// identical result out) for the service to stay deterministic.
pub type RecognizeFn = Arc<dyn Fn(u32, &Image) -> Result<PlateResult> + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServeConfig {
    pub port: u16,
    pub workers: usize,
    /// Frames waiting per worker before the oldest is shed with a 503.
    pub queue_depth: usize,
    /// Upload limit; larger bodies get 413 and the size echoed back.
    pub max_body_bytes: usize,
    /// Minimum per-frame service time, see SimConfig::service_floor_ms.
    pub service_floor_ms: f64,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            port: 8080,
            workers: 4,
            queue_depth: 16,
            max_body_bytes: 4 << 20,
            service_floor_ms: 0.0,
        }
    }
}

/// Body of a successful POST /recognize.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecognizeResponse {
    pub camera_id: u32,
    pub text: String,
    pub confidence: f64,
    pub processing_ms: f64,
    /// (view id, plate box), one per view that produced a detection.
    pub detections: Vec<(u32, BBox)>,
}

type Payload = (tiny_http::Request, Image);

pub struct Service {
    server: Arc<Server>,
    addr: SocketAddr,
    accept: Option<JoinHandle<()>>,
    pool: Arc<WorkerPool<Payload>>,
}

impl Service {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stats(&self) -> Vec<WorkerStats> {
        self.pool.stats()
    }

    /// Stops accepting, drains queued frames (each still gets its response),
    /// and returns final per-worker stats.
    pub fn stop(mut self) -> Vec<WorkerStats> {
        self.server.unblock();
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        let pool = Arc::into_inner(self.pool).expect("accept loop joined, sole owner");
        pool.close()
    }
}

/// Binds the port (0 picks a free one) and spawns accept loop plus workers.
pub fn serve(cfg: &ServeConfig, recognizer: RecognizeFn) -> Result<Service> {
    if cfg.workers == 0 {
        return Err(Error::Config("need at least one worker".into()));
    }
    let server = Server::http(("0.0.0.0", cfg.port))
        .map_err(|e| Error::Config(format!("bind port {}: {e}", cfg.port)))?;
    let addr = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| Error::Config("listener has no ip address".into()))?;
    let server = Arc::new(server);

    let floor = Duration::from_secs_f64(cfg.service_floor_ms / 1000.0);
    let handler = Arc::new(move |camera_id: u32, (request, image): Payload| {
        let t0 = Instant::now();
        if !floor.is_zero() {
            std::thread::sleep(floor);
        }
        match recognizer(camera_id, &image) {
            Ok(r) => {
                let body = RecognizeResponse {
                    camera_id,
                    text: r.text,
                    confidence: r.confidence,
                    processing_ms: t0.elapsed().as_secs_f64() * 1000.0,
                    detections: r.detections,
                };
                let _ = request.respond(json(200, serde_json::to_string(&body).unwrap()));
            }
            Err(e) => {
                let _ = request.respond(json_error(500, &format!("recognition failed: {e}")));
            }
        }
    });
    let pool = Arc::new(WorkerPool::new(cfg.workers, cfg.queue_depth.max(1), handler));

    let accept = {
        let server = Arc::clone(&server);
        let pool = Arc::clone(&pool);
        let max_body = cfg.max_body_bytes;
        std::thread::spawn(move || {
            for request in server.incoming_requests() {
                dispatch(&pool, max_body, request);
            }
        })
    };
    Ok(Service { server, addr, accept: Some(accept), pool })
}

// ── Request handling ────────────────────────────────────────────────────────

fn dispatch(pool: &WorkerPool<Payload>, max_body: usize, request: tiny_http::Request) {
    let url = request.url().to_string();
    let (path, query) = match url.split_once('?') {
        Some((p, q)) => (p, Some(q)),
        None => (url.as_str(), None),
    };
    match (request.method(), path) {
        (Method::Get, "/healthz") => {
            let _ = request.respond(Response::from_string("ok"));
        }
        (Method::Get, "/stats") => {
            let _ = request.respond(json(200, serde_json::to_string(&pool.stats()).unwrap()));
        }
        (Method::Post, "/recognize") => recognize(pool, max_body, request, query),
        _ => {
            let _ = request.respond(json_error(404, &format!("no route {path}")));
        }
    }
}

/// Validation failures answer immediately on the accept thread; only frames
/// that decode make it into a queue.
fn recognize(
    pool: &WorkerPool<Payload>,
    max_body: usize,
    mut request: tiny_http::Request,
    query: Option<&str>,
) {
    let camera_id = match query
        .into_iter()
        .flat_map(|q| q.split('&'))
        .find_map(|kv| kv.strip_prefix("camera="))
    {
        None => 0,
        Some(v) => match v.parse::<u32>() {
            Ok(c) => c,
            Err(_) => {
                let _ = request.respond(json_error(400, &format!("camera={v} is not a u32")));
                return;
            }
        },
    };
    if let Some(len) = request.body_length() {
        if len > max_body {
            let _ = request.respond(json_error(
                413,
                &format!("body of {len} bytes exceeds the {max_body} byte limit"),
            ));
            return;
        }
    }
    let mut buf = Vec::new();
    // Cap the read too: a chunked body can lie about (or omit) its length.
    if let Err(e) = request.as_reader().take(max_body as u64 + 1).read_to_end(&mut buf) {
        let _ = request.respond(json_error(400, &format!("body read failed: {e}")));
        return;
    }
    if buf.len() > max_body {
        let _ = request.respond(json_error(
            413,
            &format!("body exceeds the {max_body} byte limit"),
        ));
        return;
    }
    let image = match Image::from_png_bytes(&buf) {
        Ok(img) => img,
        Err(e) => {
            let _ = request.respond(json_error(400, &format!("body is not a decodable png: {e}")));
            return;
        }
    };
    let worker = route(camera_id, pool.num_workers());
    let job = Job { camera_id, payload: (request, image), enqueued: Instant::now() };
    if let Some(shed) = pool.offer(worker, job) {
        let (displaced, _) = shed.payload;
        let _ = displaced.respond(json_error(
            503,
            &format!("worker {worker} queue full, oldest frame shed"),
        ));
    }
}

fn json(status: u16, body: String) -> Response<std::io::Cursor<Vec<u8>>> {
    Response::from_string(body)
        .with_status_code(status)
        .with_header(Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).unwrap())
}

fn json_error(status: u16, msg: &str) -> Response<std::io::Cursor<Vec<u8>>> {
    json(status, serde_json::json!({ "error": msg }).to_string())
}
