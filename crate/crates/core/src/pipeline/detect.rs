//! Classical plate localizer. Plates in a frame are dense clusters of
//! character edges on an otherwise smooth background, so a blurred gradient
//! magnitude map thresholded above the frame's own statistics yields plate
//! blobs. Components are filtered by size, aspect, and fill, snapped to the
//! plate's tonal extent, and deduplicated with NMS.

use crate::geometry::{nms, BBox, Detection};
use crate::img::Image;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Blur radius applied to the gradient map before thresholding.
    pub density_sigma: f64,
    /// Absolute density floor; keeps flat frames silent regardless of their
    /// own statistics.
    pub density_floor: f64,
    /// Threshold = max(floor, mean + k * std) of the density map.
    pub density_k: f64,
    /// Binary dilation radius bridging inter-character gaps.
    pub dilate: usize,
    pub min_area: f64,
    pub min_aspect: f64,
    pub max_aspect: f64,
    /// Component pixels / box area; plate blobs are solid after blurring.
    pub min_fill: f64,
    /// Tonal snap: pixels brighter than this or darker than `dark_thresh`
    /// are treated as plate material (bright field, dark ink and frame).
    pub bright_thresh: f64,
    pub dark_thresh: f64,
    /// Padding around the density box before the tonal snap.
    pub refine_pad: usize,
    pub nms_iou: f64,
    pub max_detections: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            density_sigma: 2.0,
            density_floor: 0.02,
            density_k: 1.0,
            dilate: 2,
            min_area: 150.0,
            min_aspect: 1.05,
            max_aspect: 8.0,
            min_fill: 0.30,
            bright_thresh: 0.57,
            dark_thresh: 0.30,
            refine_pad: 16,
            nms_iou: 0.3,
            max_detections: 8,
        }
    }
}

/// Snaps a candidate box to the extent of plate-toned pixels around it.
/// Works on a lightly blurred luma so lone noise pixels do not vote.
fn refine_box(luma: &Image, b: &BBox, cfg: &DetectorConfig) -> BBox {
    let x0 = (b.x0 as isize - cfg.refine_pad as isize).max(0) as usize;
    let y0 = (b.y0 as isize - cfg.refine_pad as isize).max(0) as usize;
    let x1 = ((b.x1 as usize) + cfg.refine_pad).min(luma.w);
    let y1 = ((b.y1 as usize) + cfg.refine_pad).min(luma.h);
    if x0 >= x1 || y0 >= y1 {
        return *b;
    }
    let w = x1 - x0;
    let h = y1 - y0;
    let mut col = vec![0usize; w];
    let mut row = vec![0usize; h];
    for y in y0..y1 {
        for x in x0..x1 {
            let v = luma.get(y, x, 0);
            if v > cfg.bright_thresh || v < cfg.dark_thresh {
                col[x - x0] += 1;
                row[y - y0] += 1;
            }
        }
    }
    // A column/row belongs to the plate when a meaningful run of its pixels
    // are plate-toned.
    let col_need = (h / 4).max(2);
    let row_need = (w / 8).max(2);
    let cx0 = col.iter().position(|&c| c >= col_need);
    let cx1 = col.iter().rposition(|&c| c >= col_need);
    let ry0 = row.iter().position(|&c| c >= row_need);
    let ry1 = row.iter().rposition(|&c| c >= row_need);
    match (cx0, cx1, ry0, ry1) {
        (Some(a), Some(b2), Some(c), Some(d)) if b2 >= a && d >= c => BBox::new(
            (x0 + a) as f64,
            (y0 + c) as f64,
            (x0 + b2 + 1) as f64,
            (y0 + d + 1) as f64,
        ),
        _ => *b,
    }
}

/// Finds plate-like regions. Returned detections carry score = mean density
/// inside the box; view_id and timestamp are zero and are the caller's to
/// fill.
pub fn detect_plates(frame: &Image, cfg: &DetectorConfig) -> Vec<Detection> {
    if frame.h < 64 || frame.w < 64 {
        return Vec::new();
    }
    let luma = frame.to_luma();
    let density = luma.sobel_magnitude().gaussian_blur(cfg.density_sigma);

    let n = density.data.len() as f64;
    let mean = density.data.iter().sum::<f64>() / n;
    let var = density.data.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let thresh = (mean + cfg.density_k * var.sqrt()).max(cfg.density_floor);

    let (h, w) = (density.h, density.w);
    let mut mask = vec![false; h * w];
    for (i, &v) in density.data.iter().enumerate() {
        mask[i] = v > thresh;
    }
    if cfg.dilate > 0 {
        let r = cfg.dilate as isize;
        let src = mask.clone();
        for y in 0..h as isize {
            for x in 0..w as isize {
                if src[y as usize * w + x as usize] {
                    continue;
                }
                'scan: for dy in -r..=r {
                    for dx in -r..=r {
                        let (sy, sx) = (y + dy, x + dx);
                        if sy >= 0
                            && sy < h as isize
                            && sx >= 0
                            && sx < w as isize
                            && src[sy as usize * w + sx as usize]
                        {
                            mask[y as usize * w + x as usize] = true;
                            break 'scan;
                        }
                    }
                }
            }
        }
    }

    // Connected components, 4-neighborhood, iterative flood fill.
    let mut seen = vec![false; h * w];
    let mut dets = Vec::new();
    let blurred = luma.gaussian_blur(1.0);
    for start in 0..h * w {
        if !mask[start] || seen[start] {
            continue;
        }
        let mut stack = vec![start];
        seen[start] = true;
        let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0usize, 0usize);
        let mut count = 0usize;
        while let Some(i) = stack.pop() {
            let (y, x) = (i / w, i % w);
            count += 1;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            if x > 0 && mask[i - 1] && !seen[i - 1] {
                seen[i - 1] = true;
                stack.push(i - 1);
            }
            if x + 1 < w && mask[i + 1] && !seen[i + 1] {
                seen[i + 1] = true;
                stack.push(i + 1);
            }
            if y > 0 && mask[i - w] && !seen[i - w] {
                seen[i - w] = true;
                stack.push(i - w);
            }
            if y + 1 < h && mask[i + w] && !seen[i + w] {
                seen[i + w] = true;
                stack.push(i + w);
            }
        }
        let bw = (x1 - x0 + 1) as f64;
        let bh = (y1 - y0 + 1) as f64;
        if bw * bh < cfg.min_area {
            continue;
        }
        let aspect = bw / bh;
        if aspect < cfg.min_aspect || aspect > cfg.max_aspect {
            continue;
        }
        if count as f64 / (bw * bh) < cfg.min_fill {
            continue;
        }
        let rough = BBox::new(x0 as f64, y0 as f64, (x1 + 1) as f64, (y1 + 1) as f64);
        let snapped = refine_box(&blurred, &rough, cfg);

        // Score: mean density over the snapped box.
        let (sx0, sy0) = (snapped.x0.max(0.0) as usize, snapped.y0.max(0.0) as usize);
        let (sx1, sy1) = ((snapped.x1 as usize).min(w), (snapped.y1 as usize).min(h));
        let mut sum = 0.0;
        let mut cells = 0usize;
        for y in sy0..sy1 {
            for x in sx0..sx1 {
                sum += density.get(y, x, 0);
                cells += 1;
            }
        }
        let score = if cells == 0 { 0.0 } else { sum / cells as f64 };
        dets.push(Detection { bbox: snapped, score, class_id: 0, view_id: 0, timestamp: 0.0 });
    }

    let mut kept = nms(&dets, cfg.nms_iou);
    kept.truncate(cfg.max_detections);
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::iou;
    use crate::synthgen::{render_plate, DegradationProfile, Layout, PlateSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn background(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = rng.random_range(0.35..0.5);
        let mut img = Image::zeros(h, w);
        for y in 0..h {
            for x in 0..w {
                img.data[y * w + x] = base + 0.03 * (x as f64 / w as f64);
            }
        }
        img
    }

    fn paste(frame: &mut Image, plate: &Image, x0: usize, y0: usize) -> BBox {
        for y in 0..plate.h {
            for x in 0..plate.w {
                frame.set(y0 + y, x0 + x, 0, plate.get(y, x, 0));
            }
        }
        BBox::new(x0 as f64, y0 as f64, (x0 + plate.w) as f64, (y0 + plate.h) as f64)
    }

    fn plate(text: &str, height: usize, seed: u64) -> Image {
        let aspect = 3.0;
        let spec = PlateSpec {
            text: text.to_string(),
            layout: Layout::SingleRow,
            width: (height as f64 * aspect) as usize,
            height,
        };
        render_plate(&spec, seed).unwrap().image
    }

    #[test]
    fn empty_frame_yields_no_detections() {
        let frame = background(160, 240, 1);
        assert!(detect_plates(&frame, &DetectorConfig::default()).is_empty());
    }

    #[test]
    fn clean_plate_is_found_tightly() {
        let mut frame = background(160, 240, 2);
        let gt = paste(&mut frame, &plate("29A12345", 36, 7), 60, 50);
        let dets = detect_plates(&frame, &DetectorConfig::default());
        assert_eq!(dets.len(), 1, "got {dets:?}");
        assert!(
            iou(&dets[0].bbox, &gt) >= 0.7,
            "iou {} for {:?} vs {gt:?}",
            iou(&dets[0].bbox, &gt),
            dets[0].bbox
        );
    }

    #[test]
    fn two_separated_plates_both_found() {
        let mut frame = background(160, 240, 3);
        let a = paste(&mut frame, &plate("11B22333", 33, 9), 15, 20);
        let b = paste(&mut frame, &plate("77C88999", 36, 11), 110, 100);
        let dets = detect_plates(&frame, &DetectorConfig::default());
        assert_eq!(dets.len(), 2, "got {dets:?}");
        let hit = |gt: &BBox| dets.iter().any(|d| iou(&d.bbox, gt) >= 0.6);
        assert!(hit(&a) && hit(&b));
    }

    #[test]
    fn noisy_plate_still_found() {
        let mut frame = background(160, 240, 4);
        let gt = paste(&mut frame, &plate("51F00123", 38, 13), 40, 60);
        let profile = DegradationProfile {
            blur_sigma: 0.8,
            noise_std: 0.05,
            brightness_scale: 0.85,
            ..DegradationProfile::default()
        };
        let frame = crate::synthgen::degrade(&frame, &profile, 99, None);
        let dets = detect_plates(&frame, &DetectorConfig::default());
        assert!(!dets.is_empty());
        assert!(iou(&dets[0].bbox, &gt) >= 0.5, "iou {}", iou(&dets[0].bbox, &gt));
    }

    #[test]
    fn small_frames_are_rejected_quietly() {
        let frame = background(32, 32, 5);
        assert!(detect_plates(&frame, &DetectorConfig::default()).is_empty());
    }
}
