//! End-to-end multi-view plate reading: localize the plate in each view,
//! rectify and align the crops, fuse them row-wise, and decode the text.
//! Also hosts the training drivers and the evaluation harness.

mod detect;
mod eval;
mod fuse;
pub mod layout;
mod recognize;
mod rectify;

pub use detect::{detect_plates, DetectorConfig};
pub use eval::{char_accuracy, evaluate, EvalReport, SceneOutcome};
pub use fuse::fuse_views;
pub use layout::{train_layout_classifier, LayoutClass, LayoutNet, LayoutTrainConfig};
pub use recognize::{
    labels_to_text, ocr_samples_from_records, recognize, text_to_labels, train_ocr, OcrTrainConfig,
    OcrTrainReport, Recognition, MIN_CROP,
};
pub use rectify::{rectify_and_align, rectify_crop, split_row_index, AlignedPlate};

use crate::error::Result;
use crate::geometry::BBox;
use crate::img::Image;
use crate::neuralcore::OcrNet;

/// Canonical rectified row size all recognition runs on.
pub const CANON_H: usize = 32;
pub const CANON_W: usize = 96;

/// Everything a pipeline run needs besides the frames.
pub struct PipelineParams {
    pub detector: DetectorConfig,
    pub layout: LayoutNet,
    pub ocr: OcrNet,
    /// Fusion weight temperature. Information measures on rectified plate
    /// rows live around 1e-2, so a few 1e-3 separates views decisively.
    pub fusion_c: f64,
    pub beam_width: usize,
}

impl PipelineParams {
    pub fn new(layout: LayoutNet, ocr: OcrNet) -> PipelineParams {
        PipelineParams {
            detector: DetectorConfig::default(),
            layout,
            ocr,
            fusion_c: 0.002,
            beam_width: 8,
        }
    }
}

/// One read-out plate for a bundle of views.
#[derive(Debug, Clone)]
pub struct PlateResult {
    pub bundle_id: u64,
    /// Fused rectified plate (rows stacked vertically); empty if no view
    /// produced a detection.
    pub fused_crop: Image,
    pub text: String,
    /// Single-view readings, one per view that yielded a crop.
    pub per_view_texts: Vec<String>,
    /// (view_id, box) for the best detection per view.
    pub detections: Vec<(u32, BBox)>,
    pub confidence: f64,
}

impl PlateResult {
    pub(crate) fn empty(bundle_id: u64) -> PlateResult {
        PlateResult {
            bundle_id,
            fused_crop: Image::new(0, 0, 1, 0.0),
            text: String::new(),
            per_view_texts: Vec::new(),
            detections: Vec::new(),
            confidence: 0.0,
        }
    }
}

fn stack_rows(rows: &[Image]) -> Image {
    let h: usize = rows.iter().map(|r| r.h).sum();
    let w = rows.iter().map(|r| r.w).max().unwrap_or(0);
    let mut out = Image::zeros(h, w);
    let mut y0 = 0;
    for r in rows {
        for y in 0..r.h {
            for x in 0..r.w {
                out.set(y0 + y, x, 0, r.get(y, x, 0));
            }
        }
        y0 += r.h;
    }
    out
}

/// Reads the plate from one bundle of near-simultaneous view frames.
///
/// Each frame is localized independently and its best-scoring detection
/// cropped. The layout vote is the mean two-row probability across crops;
/// every crop is then rectified under the voted layout, rows are fused
/// across views, and the fused rows are decoded. Views are also decoded
/// individually for diagnostics. No detection anywhere gives an empty
/// result with zero confidence.
pub fn run_pipeline(
    bundle_id: u64,
    frames: &[(u32, Image)],
    params: &PipelineParams,
) -> Result<PlateResult> {
    let mut crops: Vec<Image> = Vec::new();
    let mut detections: Vec<(u32, BBox)> = Vec::new();
    for (view_id, frame) in frames {
        let dets = detect_plates(frame, &params.detector);
        let Some(best) = dets.first() else { continue };
        let b = &best.bbox;
        let crop = frame.crop_resize(
            b,
            b.height().round().max(1.0) as usize,
            b.width().round().max(1.0) as usize,
        );
        detections.push((*view_id, *b));
        crops.push(crop);
    }
    if crops.is_empty() {
        return Ok(PlateResult::empty(bundle_id));
    }

    let mut p_two_sum = 0.0;
    for crop in &crops {
        let (class, p) = params.layout.classify(crop)?;
        p_two_sum += match class {
            LayoutClass::TwoRow => p,
            LayoutClass::SingleRow => 1.0 - p,
        };
    }
    let layout = if p_two_sum / crops.len() as f64 > 0.5 {
        LayoutClass::TwoRow
    } else {
        LayoutClass::SingleRow
    };

    let aligned: Vec<AlignedPlate> =
        crops.iter().map(|c| rectify_crop(c, layout, CANON_H, CANON_W)).collect();
    let n_rows = aligned[0].rows.len();

    let mut per_view_texts = Vec::with_capacity(aligned.len());
    for plate in &aligned {
        let mut text = String::new();
        for row in &plate.rows {
            text.push_str(&recognize(row, &params.ocr, params.beam_width)?.text);
        }
        per_view_texts.push(text);
    }

    let mut fused_rows = Vec::with_capacity(n_rows);
    for r in 0..n_rows {
        let views: Vec<Image> = aligned.iter().map(|p| p.rows[r].clone()).collect();
        fused_rows.push(fuse_views(&views, params.fusion_c)?);
    }

    let mut text = String::new();
    let mut confidence = 1.0;
    for row in &fused_rows {
        let rec = recognize(row, &params.ocr, params.beam_width)?;
        text.push_str(&rec.text);
        confidence *= rec.confidence;
    }

    Ok(PlateResult {
        bundle_id,
        fused_crop: stack_rows(&fused_rows),
        text,
        per_view_texts,
        detections,
        confidence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralcore::OcrNetConfig;
    use crate::synthgen::{render_plate, Layout, PlateSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn background(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = rng.random_range(0.35..0.5);
        let mut img = Image::zeros(h, w);
        for y in 0..h {
            for x in 0..w {
                img.set(y, x, 0, base + 0.03 * x as f64 / w as f64);
            }
        }
        img
    }

    fn paste(frame: &mut Image, plate: &Image, y0: usize, x0: usize) {
        let p = plate.to_luma();
        for y in 0..p.h {
            for x in 0..p.w {
                frame.set(y0 + y, x0 + x, 0, p.get(y, x, 0));
            }
        }
    }

    fn scene_frames(text: &str) -> Vec<(u32, Image)> {
        let mut frames = Vec::new();
        for (v, (y0, x0)) in [(30usize, 60usize), (55, 90), (40, 30)].iter().enumerate() {
            let plate = render_plate(
                &PlateSpec {
                    text: text.into(),
                    layout: Layout::SingleRow,
                    width: 117,
                    height: 39,
                },
                400 + v as u64,
            )
            .unwrap()
            .image;
            let mut frame = background(160, 240, 900 + v as u64);
            paste(&mut frame, &plate, *y0, *x0);
            frames.push((v as u32, frame));
        }
        frames
    }

    fn trained_layout() -> LayoutNet {
        let mut samples = Vec::new();
        for (i, t) in ["29A12345", "51F00123", "11B22333", "77C88999"].iter().enumerate() {
            let s = i as u64;
            let single = render_plate(
                &PlateSpec { text: (*t).into(), layout: Layout::SingleRow, width: 112, height: 36 },
                s,
            )
            .unwrap()
            .image;
            let two = render_plate(
                &PlateSpec { text: (*t).into(), layout: Layout::TwoRow { split: 4 }, width: 90, height: 58 },
                40 + s,
            )
            .unwrap()
            .image;
            samples.push((single, false));
            samples.push((two, true));
        }
        let cfg = LayoutTrainConfig { epochs: 60, lr: 0.1, batch_size: 8, seed: 3 };
        train_layout_classifier(&samples, &cfg).unwrap().0
    }

    /// Overfit a small net on the crops this exact pipeline produces, to test
    /// the wiring end to end without a long generalization run.
    fn trained_ocr_for(frames: &[(u32, Image)], text: &str) -> OcrNet {
        let det = DetectorConfig::default();
        let mut samples = Vec::new();
        for (_, frame) in frames {
            let d = &detect_plates(frame, &det)[0];
            let crop = frame.crop_resize(
                &d.bbox,
                d.bbox.height().round() as usize,
                d.bbox.width().round() as usize,
            );
            let row = rectify_crop(&crop, LayoutClass::SingleRow, CANON_H, CANON_W);
            samples.push((row.rows[0].clone(), text_to_labels(text).unwrap()));
        }
        // A couple of clean renders widen the basin slightly.
        for s in 0..2 {
            let img = render_plate(
                &PlateSpec { text: text.into(), layout: Layout::SingleRow, width: 96, height: 32 },
                500 + s,
            )
            .unwrap()
            .image;
            samples.push((img.to_luma(), text_to_labels(text).unwrap()));
        }
        let cfg = OcrTrainConfig {
            net: OcrNetConfig {
                input_h: 16,
                input_w: 48,
                conv_channels: [8, 12, 16, 16],
                lstm_hidden: 48,
                classes: 53,
            },
            epochs: 150,
            lr: 0.4,
            batch_size: 1,
            seed: 9,
            val_fraction: 0.0,
            grad_clip: 5.0,
            ..Default::default()
        };
        train_ocr(&samples, &cfg).unwrap().0
    }

    #[test]
    fn three_clean_views_read_exactly() {
        let text = "51F00123";
        let frames = scene_frames(text);
        let ocr = trained_ocr_for(&frames, text);
        let params = PipelineParams::new(trained_layout(), ocr);
        let result = run_pipeline(7, &frames, &params).unwrap();
        assert_eq!(result.text, text);
        assert_eq!(result.detections.len(), 3);
        assert_eq!(result.per_view_texts.len(), 3);
        assert!(result.confidence > 0.3, "confidence {}", result.confidence);
        assert_eq!((result.fused_crop.h, result.fused_crop.w), (CANON_H, CANON_W));
        // Determinism end to end.
        let again = run_pipeline(7, &frames, &params).unwrap();
        assert_eq!(again.text, result.text);
        assert_eq!(again.confidence, result.confidence);
    }

    #[test]
    fn plateless_bundle_is_empty_with_zero_confidence() {
        let frames = vec![(0u32, background(160, 240, 1)), (1u32, background(160, 240, 2))];
        let ocr = OcrNet::init(
            OcrNetConfig {
                input_h: 16,
                input_w: 48,
                conv_channels: [4, 6, 8, 8],
                lstm_hidden: 10,
                classes: 53,
            },
            1,
        )
        .unwrap();
        let params = PipelineParams::new(trained_layout(), ocr);
        let result = run_pipeline(3, &frames, &params).unwrap();
        assert_eq!(result.text, "");
        assert_eq!(result.confidence, 0.0);
        assert!(result.per_view_texts.is_empty());
        assert_eq!(result.fused_crop.data.len(), 0);
    }
}
