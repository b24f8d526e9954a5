//! Command-line surface. Every run is reproducible: one JSON config plus a
//! --seed override determine all artifacts, and repeated runs write
//! byte-identical manifests, checkpoints, and reports (timing fields in the
//! replay report are measured and therefore exempt).

use crate::camsim::{serve, simulate, RecognizeFn, SimConfig};
use crate::config::AppConfig;
use crate::error::{Error, Result};
use crate::img::Image;
use crate::neuralcore::OcrNet;
use crate::pipeline::{
    evaluate, ocr_samples_from_records, run_pipeline, train_layout_classifier, train_ocr,
    LayoutNet, PipelineParams, SceneOutcome, CANON_H, CANON_W,
};
use crate::synthgen::{make_dataset, read_manifest, records_by_scene, Layout, SceneRecord};
use clap::{Parser, Subcommand};
use serde::Serialize;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Parser)]
#[command(name = "platefuse", version, about = "Multi-view license plate recognition")]
struct Cli {
    /// JSON config; absent fields keep built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's master seed and every per-stage seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for everything a command writes.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a synthetic dataset: frames under img/, manifest.jsonl beside.
    Synth,
    /// Train the sequence recognizer from a manifest's ground truth.
    TrainOcr {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Train the row-layout classifier from a manifest's ground truth.
    TrainClassifier {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Train the learned image fuser on same-scene view pairs.
    TrainFuser {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Recognize every scene in a manifest and write the evaluation report.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory holding layout.ckpt and ocr.ckpt.
        #[arg(long)]
        params: PathBuf,
    },
    /// Recognize one bundle: each image is a view of the same plate.
    Run {
        #[arg(long)]
        params: PathBuf,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Serve recognition over HTTP until interrupted.
    Serve {
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        port: Option<u16>,
        /// Checkpoint directory; omitted means seed-initialized weights
        /// (useful only for load testing).
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Replay manifest frames through a worker pool and report latencies.
    Simulate {
        #[arg(long)]
        cameras: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
        /// Seconds of replay.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        params: Option<PathBuf>,
    },
}

pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e)
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(Error::Config(e.to_string())),
    };
    let mut cfg = match &cli.config {
        Some(path) => AppConfig::load(path)?,
        None => AppConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.override_seed(seed);
    }
    let out = &cli.out;

    match cli.cmd {
        Cmd::Synth => {
            let records = make_dataset(&cfg.synth, cfg.seed, out)?;
            println!(
                "wrote {} records ({} scenes x {} views) under {}",
                records.len(),
                cfg.synth.scenes,
                cfg.synth.views_per_scene,
                out.display()
            );
        }
        Cmd::TrainOcr { manifest } => {
            let (records, root) = load_manifest(&manifest)?;
            let samples =
                ocr_samples_from_records(&records, &root, CANON_H, CANON_W, cfg.ocr_jitter, cfg.seed)?;
            let (net, report) = train_ocr(&samples, &cfg.ocr_train)?;
            std::fs::create_dir_all(out)?;
            net.save(&out.join("ocr.ckpt"))?;
            write_json(&out.join("ocr_train_report.json"), &report)?;
            println!(
                "trained recognizer on {} samples, final loss {:.4} -> {}",
                report.train_samples,
                report.train_loss.last().copied().unwrap_or(f64::NAN),
                out.join("ocr.ckpt").display()
            );
        }
        Cmd::TrainClassifier { manifest } => {
            let (records, root) = load_manifest(&manifest)?;
            let mut samples = Vec::with_capacity(records.len());
            for r in &records {
                let frame = Image::load_png(&root.join(&r.image_path))?;
                let b = &r.gt_box;
                let crop =
                    frame.crop_resize(b, b.height().round() as usize, b.width().round() as usize);
                samples.push((crop, matches!(r.layout, Layout::TwoRow { .. })));
            }
            let (net, losses) = train_layout_classifier(&samples, &cfg.layout_train)?;
            std::fs::create_dir_all(out)?;
            net.save(&out.join("layout.ckpt"))?;
            write_json(&out.join("layout_train_report.json"), &losses)?;
            println!(
                "trained layout classifier on {} crops, final loss {:.4} -> {}",
                samples.len(),
                losses.last().copied().unwrap_or(f64::NAN),
                out.join("layout.ckpt").display()
            );
        }
        Cmd::TrainFuser { manifest } => {
            let (records, root) = load_manifest(&manifest)?;
            let mut pairs = Vec::new();
            for (_, views) in records_by_scene(&records) {
                if views.len() < 2 {
                    continue;
                }
                let crop = |r: &SceneRecord| -> Result<Image> {
                    Ok(Image::load_png(&root.join(&r.image_path))?
                        .crop_resize(&r.gt_box, CANON_H, CANON_W))
                };
                pairs.push((crop(views[0])?, crop(views[1])?));
            }
            let (net, curve) = crate::fusion::train_fusion_net(&pairs, &cfg.fusion_train)?;
            std::fs::create_dir_all(out)?;
            net.save(&out.join("fusion.ckpt"))?;
            write_json(&out.join("fusion_train_report.json"), &curve)?;
            println!(
                "trained fuser on {} view pairs, final loss {:.6} -> {}",
                pairs.len(),
                curve.last().copied().unwrap_or(f64::NAN),
                out.join("fusion.ckpt").display()
            );
        }
        Cmd::Eval { manifest, params } => {
            let (records, root) = load_manifest(&manifest)?;
            let p = load_params(&params, &cfg)?;
            let mut outcomes = Vec::new();
            for (scene_id, views) in records_by_scene(&records) {
                let frames = views
                    .iter()
                    .map(|r| Ok((r.view_id, Image::load_png(&root.join(&r.image_path))?)))
                    .collect::<Result<Vec<_>>>()?;
                let res = run_pipeline(scene_id, &frames, &p)?;
                outcomes.push(SceneOutcome {
                    scene_id,
                    detections: res.detections,
                    text: res.text,
                });
            }
            let report = evaluate(&outcomes, &records)?;
            std::fs::create_dir_all(out)?;
            write_json(&out.join("eval_report.json"), &report)?;
            println!(
                "{} scenes: exact {:.1}%, char {:.1}%, det P {:.3} R {:.3} F1 {:.3}",
                outcomes.len(),
                100.0 * report.plate_exact_match_rate,
                100.0 * report.mean_char_accuracy,
                report.precision,
                report.recall,
                report.f1
            );
        }
        Cmd::Run { params, images } => {
            let p = load_params(&params, &cfg)?;
            let frames = images
                .iter()
                .enumerate()
                .map(|(i, path)| Ok((i as u32, Image::load_png(path)?)))
                .collect::<Result<Vec<_>>>()?;
            let res = run_pipeline(0, &frames, &p)?;
            println!(
                "{}",
                serde_json::json!({
                    "text": res.text,
                    "confidence": res.confidence,
                    "per_view_texts": res.per_view_texts,
                    "detections": res.detections,
                })
            );
        }
        Cmd::Serve { workers, port, params } => {
            let mut scfg = cfg.serve.clone();
            if let Some(w) = workers {
                scfg.workers = w;
            }
            if let Some(p) = port {
                scfg.port = p;
            }
            let svc = serve(&scfg, recognizer_from(params.as_deref(), &cfg)?)?;
            println!("listening on {} with {} workers", svc.addr(), scfg.workers);
            loop {
                std::thread::park();
            }
        }
        Cmd::Simulate { cameras, workers, duration, manifest, params } => {
            let mut sim: SimConfig = cfg.sim.clone();
            if let Some(c) = cameras {
                sim.num_cameras = c;
            }
            if let Some(w) = workers {
                sim.num_workers = w;
            }
            if let Some(d) = duration {
                sim.duration_s = d;
            }
            let (records, root) = load_manifest(&manifest)?;
            let recognizer = recognizer_from(params.as_deref(), &cfg)?;
            let report = simulate(&records, &root, &sim, recognizer)?;
            std::fs::create_dir_all(out)?;
            write_json(&out.join("sim_report.json"), &report)?;
            println!(
                "{} cameras / {} workers for {:.1}s: {} offered, {} processed, {} dropped ({:.1} fps)",
                report.num_cameras,
                report.num_workers,
                report.duration_s,
                report.offered,
                report.processed,
                report.dropped,
                report.throughput_fps
            );
            for w in &report.workers {
                println!(
                    "  worker {}: {} processed, {} dropped, p50 {:.1}ms p90 {:.1}ms p99 {:.1}ms",
                    w.worker_id,
                    w.frames_processed,
                    w.frames_dropped,
                    w.p50_s * 1e3,
                    w.p90_s * 1e3,
                    w.p99_s * 1e3
                );
            }
        }
    }
    Ok(())
}

fn load_manifest(path: &Path) -> Result<(Vec<SceneRecord>, PathBuf)> {
    let records = read_manifest(path)?;
    let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    Ok((records, root))
}

fn load_params(dir: &Path, cfg: &AppConfig) -> Result<PipelineParams> {
    Ok(PipelineParams {
        detector: cfg.detector.clone(),
        layout: LayoutNet::load(&dir.join("layout.ckpt"))?,
        ocr: OcrNet::load(&dir.join("ocr.ckpt"))?,
        fusion_c: cfg.fusion_c,
        beam_width: cfg.beam_width,
    })
}

fn recognizer_from(params: Option<&Path>, cfg: &AppConfig) -> Result<RecognizeFn> {
    let p = match params {
        Some(dir) => load_params(dir, cfg)?,
        None => PipelineParams {
            detector: cfg.detector.clone(),
            layout: LayoutNet::init(cfg.seed),
            ocr: OcrNet::init(cfg.ocr_train.net.clone(), cfg.seed)?,
            fusion_c: cfg.fusion_c,
            beam_width: cfg.beam_width,
        },
    };
    let p = Arc::new(p);
    Ok(Arc::new(move |cam, img: &Image| {
        run_pipeline(cam as u64, &[(0, img.clone())], &p)
    }))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(std::fs::write(path, s)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(parts: &[&str]) -> Vec<String> {
        std::iter::once("platefuse")
            .chain(parts.iter().copied())
            .map(String::from)
            .collect()
    }

    #[test]
    fn rejects_unknown_commands_and_missing_args() {
        assert!(matches!(run(args(&["frobnicate"])), Err(Error::Config(_))));
        assert!(matches!(run(args(&["train-ocr"])), Err(Error::Config(_))));
        assert!(matches!(run(args(&["run", "--params", "x"])), Err(Error::Config(_))));
    }

    #[test]
    fn help_is_not_an_error() {
        assert!(run(args(&["--help"])).is_ok());
        assert!(run(args(&["synth", "--help"])).is_ok());
    }

    #[test]
    fn synth_is_byte_identical_per_seed() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("config.json");
        std::fs::write(
            &cfg_path,
            r#"{"synth": {"scenes": 3, "views_per_scene": 2, "frame_h": 60, "frame_w": 90}}"#,
        )
        .unwrap();
        let cfg = cfg_path.to_str().unwrap();
        let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
        for out in [&a, &b] {
            run(args(&["synth", "--config", cfg, "--seed", "5", "--out", out.to_str().unwrap()]))
                .unwrap();
        }
        run(args(&["synth", "--config", cfg, "--seed", "6", "--out", c.to_str().unwrap()]))
            .unwrap();
        let manifest = |p: &Path| std::fs::read(p.join("manifest.jsonl")).unwrap();
        assert_eq!(manifest(&a), manifest(&b));
        assert_ne!(manifest(&a), manifest(&c));
        let first_png = |p: &Path| {
            let mut names: Vec<_> = std::fs::read_dir(p.join("img"))
                .unwrap()
                .map(|e| e.unwrap().path())
                .collect();
            names.sort();
            std::fs::read(&names[0]).unwrap()
        };
        assert_eq!(first_png(&a), first_png(&b));
    }
}
