//! Synthetic plate scenes: deterministic rendering of plate images from the
//! embedded font, parameterized degradations, and multi-view dataset
//! generation with a JSONL manifest.

pub mod font;

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::img::{warp_inverse, Homography, Image};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub use font::{char_to_class, charset_chars, class_to_char, CHARSET, CHARSET_LEN};

// ── Plate specification and rendering ───────────────────────────────────────

/// Text arrangement on the plate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layout {
    SingleRow,
    /// Characters `[..split]` on the top row, `[split..]` on the bottom.
    TwoRow { split: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateSpec {
    pub text: String,
    pub layout: Layout,
    /// Plate canvas size in pixels.
    pub width: usize,
    pub height: usize,
}

/// A rendered plate: the canvas plus one tight box per character, in canvas
/// coordinates and text order.
#[derive(Debug, Clone)]
pub struct PlateArt {
    pub image: Image,
    pub char_boxes: Vec<BBox>,
}

/// Maximum characters on a plate.
pub const MAX_TEXT_LEN: usize = 10;

fn rows_of(spec: &PlateSpec) -> Result<Vec<Vec<char>>> {
    let chars: Vec<char> = spec.text.chars().collect();
    match spec.layout {
        Layout::SingleRow => Ok(vec![chars]),
        Layout::TwoRow { split } => {
            if split == 0 || split >= chars.len() {
                return Err(Error::InvalidInput(format!(
                    "two-row split {split} out of range for {} chars",
                    chars.len()
                )));
            }
            Ok(vec![chars[..split].to_vec(), chars[split..].to_vec()])
        }
    }
}

/// Render a plate: light background, dark border frame, dark glyphs scaled
/// by an integer factor from the 5x7 font. Ink and background levels jitter
/// slightly with the seed (per-view lighting variation).
pub fn render_plate(spec: &PlateSpec, seed: u64) -> Result<PlateArt> {
    let n = spec.text.chars().count();
    if n == 0 || n > MAX_TEXT_LEN {
        return Err(Error::InvalidInput(format!("text length {n} outside 1..={MAX_TEXT_LEN}")));
    }
    for c in spec.text.chars() {
        if font::glyph(c).is_none() {
            return Err(Error::InvalidInput(format!("no glyph for {c:?}")));
        }
    }
    let rows = rows_of(spec)?;

    // Content size in font units: glyph cells plus 1-unit gaps, 2-unit
    // frame+margin on every side.
    let row_units_w = |len: usize| 6 * len - 1;
    let content_w = rows.iter().map(|r| row_units_w(r.len())).max().unwrap();
    let content_h = 7 * rows.len() + (rows.len() - 1);
    let scale = (spec.width / (content_w + 4)).min(spec.height / (content_h + 4));
    if scale == 0 {
        return Err(Error::InvalidInput(format!(
            "plate {}x{} too small for {:?} ({}x{} units)",
            spec.width, spec.height, spec.text, content_w + 4, content_h + 4
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bg = rng.random_range(0.86..0.94);
    let ink = rng.random_range(0.04..0.12);

    let mut image = Image::new(spec.height, spec.width, 1, bg);

    // Border frame, one unit thick.
    for y in 0..spec.height {
        for x in 0..spec.width {
            if y < scale || y >= spec.height - scale || x < scale || x >= spec.width - scale {
                image.set(y, x, 0, ink);
            }
        }
    }

    let mut char_boxes = Vec::with_capacity(n);
    let y_start = (spec.height - content_h * scale) / 2;
    for (ri, row) in rows.iter().enumerate() {
        let row_w = row_units_w(row.len()) * scale;
        let x_start = (spec.width - row_w) / 2;
        let y0 = y_start + ri * 8 * scale;
        for (ci, &ch) in row.iter().enumerate() {
            let x0 = x_start + ci * 6 * scale;
            let bitmap = font::glyph(ch).unwrap();
            for (gy, &bits) in bitmap.iter().enumerate() {
                for gx in 0..font::GLYPH_W {
                    if bits & (1 << (font::GLYPH_W - 1 - gx)) != 0 {
                        for dy in 0..scale {
                            for dx in 0..scale {
                                image.set(y0 + gy * scale + dy, x0 + gx * scale + dx, 0, ink);
                            }
                        }
                    }
                }
            }
            char_boxes.push(BBox::new(
                x0 as f64,
                y0 as f64,
                (x0 + font::GLYPH_W * scale) as f64,
                (y0 + font::GLYPH_H * scale) as f64,
            ));
        }
    }
    Ok(PlateArt { image, char_boxes })
}

// ── Degradation ──────────────────────────────────────────────────────────────

/// Photometric and geometric damage applied to a view. The neutral profile
/// (zeros, brightness 1) leaves the image untouched.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationProfile {
    /// Gaussian blur sigma in pixels.
    pub blur_sigma: f64,
    /// Additive Gaussian noise standard deviation.
    pub noise_std: f64,
    /// Fraction of the plate box hidden by a solid rectangle, in [0, 1).
    pub occlusion_fraction: f64,
    /// Perspective trapezoid inset as a fraction of width, in [0, 0.5].
    pub perspective_skew: f64,
    /// Multiplicative brightness factor, > 0.
    pub brightness_scale: f64,
}

impl Default for DegradationProfile {
    fn default() -> Self {
        DegradationProfile {
            blur_sigma: 0.0,
            noise_std: 0.0,
            occlusion_fraction: 0.0,
            perspective_skew: 0.0,
            brightness_scale: 1.0,
        }
    }
}

impl DegradationProfile {
    pub fn is_neutral(&self) -> bool {
        self.blur_sigma <= 0.0
            && self.noise_std <= 0.0
            && self.occlusion_fraction <= 0.0
            && self.perspective_skew <= 0.0
            && self.brightness_scale == 1.0
    }
}

/// Apply `profile` to `img` in a fixed order: perspective warp, blur, noise,
/// brightness, occlusion; the result is clamped to [0, 1]. The occluding
/// rectangle covers `occlusion_fraction` of `plate_box` (the full image when
/// None) to within one pixel row. Deterministic in (img, profile, seed).
pub fn degrade(img: &Image, profile: &DegradationProfile, seed: u64, plate_box: Option<&BBox>) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = img.clone();

    if profile.perspective_skew > 0.0 {
        let (w, h) = (img.w as f64, img.h as f64);
        let inset = profile.perspective_skew.min(0.5) * w / 2.0;
        let top = rng.random_bool(0.5);
        let rect = [(0.0, 0.0), (w - 1.0, 0.0), (w - 1.0, h - 1.0), (0.0, h - 1.0)];
        let trap = if top {
            [(inset, 0.0), (w - 1.0 - inset, 0.0), (w - 1.0, h - 1.0), (0.0, h - 1.0)]
        } else {
            [(0.0, 0.0), (w - 1.0, 0.0), (w - 1.0 - inset, h - 1.0), (inset, h - 1.0)]
        };
        // Inverse map (trapezoid -> rect) so output pixels sample the source.
        if let Some(inv) = Homography::from_quad(&trap, &rect) {
            out = warp_inverse(&out, &inv);
        }
    }

    if profile.blur_sigma > 0.0 {
        out = out.gaussian_blur(profile.blur_sigma);
    }

    if profile.noise_std > 0.0 {
        let normal = rand_distr::Normal::new(0.0, profile.noise_std).expect("finite noise std");
        for v in &mut out.data {
            *v += rng.sample(normal);
        }
    }

    if profile.brightness_scale != 1.0 {
        for v in &mut out.data {
            *v *= profile.brightness_scale;
        }
    }

    if profile.occlusion_fraction > 0.0 {
        let full = BBox::new(0.0, 0.0, img.w as f64, img.h as f64);
        let b = plate_box.unwrap_or(&full);
        let bw = b.width().max(1.0);
        let bh = b.height().max(1.0);
        let target = profile.occlusion_fraction.min(0.95) * bw * bh;
        let mut ow = (bw * rng.random_range(0.35..0.75)).round().clamp(1.0, bw);
        let oh = (target / ow).round().clamp(1.0, bh);
        // Re-derive width when the height clamped, keeping area within a row.
        if (ow * oh - target).abs() > ow.max(oh) {
            ow = (target / oh).round().clamp(1.0, bw);
        }
        let x0 = b.x0 + rng.random_range(0.0..=(bw - ow).max(0.0));
        let y0 = b.y0 + rng.random_range(0.0..=(bh - oh).max(0.0));
        let fill = rng.random_range(0.08..0.25);
        let (x0, y0) = (x0.round() as usize, y0.round() as usize);
        for y in y0..(y0 + oh as usize).min(img.h) {
            for x in x0..(x0 + ow as usize).min(img.w) {
                for ch in 0..out.c {
                    out.set(y, x, ch, fill);
                }
            }
        }
    }

    out.clamp01();
    out
}

// ── Dataset generation ───────────────────────────────────────────────────────

/// Uniform sampling range; `hi <= lo` collapses to the constant `lo`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range2 {
    pub lo: f64,
    pub hi: f64,
}

impl Range2 {
    pub fn new(lo: f64, hi: f64) -> Self {
        Range2 { lo, hi }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.hi <= self.lo {
            self.lo
        } else {
            rng.random_range(self.lo..self.hi)
        }
    }
}

/// Per-view degradation sampling ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationRange {
    pub blur_sigma: Range2,
    pub noise_std: Range2,
    pub occlusion_fraction: Range2,
    pub perspective_skew: Range2,
    pub brightness_scale: Range2,
}

impl DegradationRange {
    pub fn clean() -> Self {
        DegradationRange {
            blur_sigma: Range2::new(0.0, 0.0),
            noise_std: Range2::new(0.0, 0.0),
            occlusion_fraction: Range2::new(0.0, 0.0),
            perspective_skew: Range2::new(0.0, 0.0),
            brightness_scale: Range2::new(1.0, 1.0),
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> DegradationProfile {
        DegradationProfile {
            blur_sigma: self.blur_sigma.sample(rng),
            noise_std: self.noise_std.sample(rng),
            occlusion_fraction: self.occlusion_fraction.sample(rng),
            perspective_skew: self.perspective_skew.sample(rng),
            brightness_scale: self.brightness_scale.sample(rng),
        }
    }
}

impl Default for DegradationRange {
    fn default() -> Self {
        Self::clean()
    }
}

/// Dataset generation parameters. `pattern` positions take `D` (digit),
/// `L` (non-digit charset letter), or `A` (any charset character).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub scenes: usize,
    pub views_per_scene: usize,
    pub frame_h: usize,
    pub frame_w: usize,
    pub charset: String,
    pub pattern: String,
    pub two_row_fraction: f64,
    /// Single-row plate height range in pixels; two-row plates are 1.7x.
    pub plate_height: Range2,
    pub single_row_aspect: f64,
    pub two_row_aspect: f64,
    /// Cycled by view index.
    pub degradations: Vec<DegradationRange>,
    pub scene_stride_s: f64,
    pub view_dt_s: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            scenes: 200,
            views_per_scene: 1,
            frame_h: 160,
            frame_w: 240,
            charset: CHARSET.to_string(),
            pattern: "DDLDDDDD".to_string(),
            two_row_fraction: 0.25,
            plate_height: Range2::new(30.0, 42.0),
            single_row_aspect: 3.0,
            two_row_aspect: 1.5,
            degradations: vec![DegradationRange::clean()],
            scene_stride_s: 1.0,
            view_dt_s: 0.02,
        }
    }
}

/// One manifest line: a single view frame of a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene_id: u64,
    /// Relative to the manifest's directory.
    pub image_path: String,
    pub view_id: u32,
    pub timestamp: f64,
    pub gt_box: BBox,
    pub gt_text: String,
    pub layout: Layout,
    /// The per-record seed actually used (base seed xor record index).
    pub seed: u64,
    pub degradation: DegradationProfile,
}

fn scene_seed(seed: u64, scene: u64) -> u64 {
    let mut z = seed ^ 0x5343_454e_4553_4545 ^ scene.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sample_text(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<String> {
    let chars: Vec<char> = cfg.charset.chars().collect();
    let digits: Vec<char> = chars.iter().copied().filter(|c| c.is_ascii_digit()).collect();
    let letters: Vec<char> = chars.iter().copied().filter(|c| !c.is_ascii_digit()).collect();
    let mut text = String::new();
    for p in cfg.pattern.chars() {
        let pool = match p {
            'D' => &digits,
            'L' => &letters,
            'A' => &chars,
            _ => return Err(Error::Config(format!("pattern char {p:?} not in {{D, L, A}}"))),
        };
        if pool.is_empty() {
            return Err(Error::Config(format!("charset has no characters for pattern {p:?}")));
        }
        text.push(pool[rng.random_range(0..pool.len())]);
    }
    Ok(text)
}

/// Smooth low-gradient background: a seeded base level with a gentle ramp.
fn frame_background(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Image {
    let base = rng.random_range(0.35..0.5);
    let gx = rng.random_range(-0.1..0.1) / w as f64;
    let gy = rng.random_range(-0.1..0.1) / h as f64;
    let mut img = Image::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            img.set(y, x, 0, base + gx * x as f64 + gy * y as f64);
        }
    }
    img
}

/// Generate `cfg.scenes * cfg.views_per_scene` frames under `out_dir`
/// (PNGs in `img/`, manifest at `manifest.jsonl`) and return the records.
/// Byte-identical output for identical (cfg, seed).
pub fn make_dataset(cfg: &SynthConfig, seed: u64, out_dir: &Path) -> Result<Vec<SceneRecord>> {
    if cfg.scenes == 0 || cfg.views_per_scene == 0 {
        return Err(Error::Config("scenes and views_per_scene must be positive".into()));
    }
    if cfg.degradations.is_empty() {
        return Err(Error::Config("need at least one degradation range".into()));
    }
    for c in cfg.charset.chars() {
        if font::glyph(c).is_none() {
            return Err(Error::Config(format!("charset char {c:?} has no glyph")));
        }
    }
    std::fs::create_dir_all(out_dir.join("img"))?;

    let mut records = Vec::with_capacity(cfg.scenes * cfg.views_per_scene);
    for scene in 0..cfg.scenes as u64 {
        let mut srng = ChaCha8Rng::seed_from_u64(scene_seed(seed, scene));
        let text = sample_text(cfg, &mut srng)?;
        let n = text.chars().count();
        let layout = if n >= 2 && srng.random_bool(cfg.two_row_fraction.clamp(0.0, 1.0)) {
            Layout::TwoRow { split: n.div_ceil(2) }
        } else {
            Layout::SingleRow
        };

        for v in 0..cfg.views_per_scene as u32 {
            let record_index = scene * cfg.views_per_scene as u64 + v as u64;
            let rec_seed = seed ^ record_index;
            let mut rng = ChaCha8Rng::seed_from_u64(rec_seed);

            let (aspect, h_mul) = match layout {
                Layout::SingleRow => (cfg.single_row_aspect, 1.0),
                Layout::TwoRow { .. } => (cfg.two_row_aspect, 1.7),
            };
            let max_h = (cfg.frame_h as f64 - 8.0).max(8.0);
            let max_w = (cfg.frame_w as f64 - 8.0).max(8.0);
            let mut ph = (cfg.plate_height.sample(&mut rng) * h_mul).min(max_h);
            let mut pw = ph * aspect;
            if pw > max_w {
                pw = max_w;
                ph = pw / aspect;
            }
            let (ph, pw) = (ph.round() as usize, pw.round() as usize);
            let x0 = rng.random_range(4..=(cfg.frame_w - pw - 4).max(4)) as usize;
            let y0 = rng.random_range(4..=(cfg.frame_h - ph - 4).max(4)) as usize;

            let profile = cfg.degradations[v as usize % cfg.degradations.len()].sample(&mut rng);
            let render_seed: u64 = rng.random();
            let degrade_seed: u64 = rng.random();

            let spec = PlateSpec { text: text.clone(), layout, width: pw, height: ph };
            let art = render_plate(&spec, render_seed)?;

            // Geometry damage happens on the plate canvas (so the ground
            // truth box stays put), photometric damage on the whole frame.
            let plate_level = DegradationProfile {
                perspective_skew: profile.perspective_skew,
                occlusion_fraction: profile.occlusion_fraction,
                ..DegradationProfile::default()
            };
            let plate_img = degrade(&art.image, &plate_level, degrade_seed, None);

            let mut frame = frame_background(cfg.frame_h, cfg.frame_w, &mut rng);
            for y in 0..ph {
                for x in 0..pw {
                    frame.set(y0 + y, x0 + x, 0, plate_img.get(y, x, 0));
                }
            }
            let frame_level = DegradationProfile {
                blur_sigma: profile.blur_sigma,
                noise_std: profile.noise_std,
                brightness_scale: profile.brightness_scale,
                ..DegradationProfile::default()
            };
            let frame = degrade(&frame, &frame_level, degrade_seed.wrapping_add(1), None);

            let image_path = format!("img/s{scene:05}_v{v}.png");
            frame.save_png(&out_dir.join(&image_path))?;

            records.push(SceneRecord {
                scene_id: scene,
                image_path,
                view_id: v,
                timestamp: scene as f64 * cfg.scene_stride_s + v as f64 * cfg.view_dt_s,
                gt_box: BBox::new(x0 as f64, y0 as f64, (x0 + pw) as f64, (y0 + ph) as f64),
                gt_text: text.clone(),
                layout,
                seed: rec_seed,
                degradation: profile,
            });
        }
    }
    write_manifest(&out_dir.join("manifest.jsonl"), &records)?;
    Ok(records)
}

// ── Manifest I/O ─────────────────────────────────────────────────────────────

pub fn write_manifest(path: &Path, records: &[SceneRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<SceneRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    for line in text.lines() {
        if !line.trim().is_empty() {
            records.push(serde_json::from_str(line)?);
        }
    }
    Ok(records)
}

/// Group manifest records by scene, ordered by scene id then view id.
pub fn records_by_scene(records: &[SceneRecord]) -> Vec<(u64, Vec<&SceneRecord>)> {
    let mut map: std::collections::BTreeMap<u64, Vec<&SceneRecord>> = Default::default();
    for r in records {
        map.entry(r.scene_id).or_default().push(r);
    }
    let mut out: Vec<(u64, Vec<&SceneRecord>)> = map.into_iter().collect();
    for (_, views) in &mut out {
        views.sort_by_key(|r| r.view_id);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn spec(text: &str, layout: Layout) -> PlateSpec {
        PlateSpec { text: text.into(), layout, width: 120, height: 40 }
    }

    #[test]
    fn render_is_deterministic_and_seed_sensitive() {
        let s = spec("29A4512", Layout::SingleRow);
        let a = render_plate(&s, 7).unwrap();
        let b = render_plate(&s, 7).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.char_boxes, b.char_boxes);
        let c = render_plate(&s, 8).unwrap();
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn char_boxes_disjoint_inside_and_inked() {
        let s = spec("51F123", Layout::SingleRow);
        let art = render_plate(&s, 3).unwrap();
        assert_eq!(art.char_boxes.len(), 6);
        let plate = BBox::new(0.0, 0.0, 120.0, 40.0);
        for (i, a) in art.char_boxes.iter().enumerate() {
            assert!(a.intersection_area(&plate) >= a.area() - 1e-9, "box {i} leaves the plate");
            for b in &art.char_boxes[i + 1..] {
                assert_eq!(a.intersection_area(b), 0.0);
            }
            // Ink is darker than the local background.
            let cx = ((a.x0 + a.x1) / 2.0) as usize;
            let cy = ((a.y0 + a.y1) / 2.0) as usize;
            let region_min = (a.y0 as usize..a.y1 as usize)
                .flat_map(|y| (a.x0 as usize..a.x1 as usize).map(move |x| (y, x)))
                .map(|(y, x)| art.image.get(y, x, 0))
                .fold(f64::INFINITY, f64::min);
            assert!(region_min < 0.2, "char {i} has no ink near ({cy},{cx})");
        }
    }

    #[test]
    fn two_row_layout_stacks_rows() {
        let s = PlateSpec { text: "29A41234".into(), layout: Layout::TwoRow { split: 4 }, width: 100, height: 70 };
        let art = render_plate(&s, 1).unwrap();
        assert_eq!(art.char_boxes.len(), 8);
        let top_max = art.char_boxes[..4].iter().map(|b| b.y1).fold(0.0, f64::max);
        let bot_min = art.char_boxes[4..].iter().map(|b| b.y0).fold(f64::INFINITY, f64::min);
        assert!(top_max <= bot_min, "rows overlap vertically");
    }

    #[test]
    fn render_rejects_bad_specs() {
        assert!(render_plate(&spec("", Layout::SingleRow), 0).is_err());
        assert!(render_plate(&spec("ABCDEFGHIJK", Layout::SingleRow), 0).is_err());
        assert!(render_plate(&spec("AB?", Layout::SingleRow), 0).is_err());
        assert!(render_plate(&spec("ABC", Layout::TwoRow { split: 0 }), 0).is_err());
        assert!(render_plate(&spec("ABC", Layout::TwoRow { split: 3 }), 0).is_err());
        let tiny = PlateSpec { text: "ABCDEFGH".into(), layout: Layout::SingleRow, width: 20, height: 8 };
        assert!(render_plate(&tiny, 0).is_err());
    }

    #[test]
    fn neutral_degrade_is_identity() {
        let art = render_plate(&spec("1234AB", Layout::SingleRow), 5).unwrap();
        let out = degrade(&art.image, &DegradationProfile::default(), 99, None);
        assert_eq!(out, art.image);
    }

    #[test]
    fn degrade_is_deterministic_per_seed() {
        let art = render_plate(&spec("1234AB", Layout::SingleRow), 5).unwrap();
        let p = DegradationProfile {
            blur_sigma: 1.0,
            noise_std: 0.05,
            occlusion_fraction: 0.2,
            perspective_skew: 0.1,
            brightness_scale: 0.9,
        };
        assert_eq!(degrade(&art.image, &p, 42, None), degrade(&art.image, &p, 42, None));
        assert_ne!(degrade(&art.image, &p, 42, None), degrade(&art.image, &p, 43, None));
    }

    #[test]
    fn occluder_covers_requested_fraction() {
        let img = Image::new(60, 120, 1, 0.5);
        let p = DegradationProfile { occlusion_fraction: 0.5, ..Default::default() };
        for seed in 0..10 {
            let out = degrade(&img, &p, seed, None);
            let changed = out.data.iter().filter(|&&v| (v - 0.5).abs() > 1e-9).count() as f64;
            let target = 0.5 * (60.0 * 120.0);
            // Within one pixel row/column of rounding.
            assert!((changed - target).abs() <= 120.0, "seed {seed}: {changed} vs {target}");
        }
    }

    #[test]
    fn blur_distance_grows_with_sigma() {
        let art = render_plate(&spec("8W31", Layout::SingleRow), 2).unwrap();
        let clean = &art.image;
        let mut last = 0.0;
        for sigma in [0.0, 0.5, 1.0, 2.0, 4.0] {
            let p = DegradationProfile { blur_sigma: sigma, ..Default::default() };
            let out = degrade(clean, &p, 1, None);
            let mad: f64 = out
                .data
                .iter()
                .zip(&clean.data)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / clean.data.len() as f64;
            assert!(mad >= last - 1e-12, "sigma {sigma}: {mad} < {last}");
            last = mad;
        }
    }

    #[test]
    fn dataset_roundtrip_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            scenes: 4,
            views_per_scene: 2,
            frame_h: 100,
            frame_w: 160,
            plate_height: Range2::new(20.0, 26.0),
            ..Default::default()
        };
        let recs = make_dataset(&cfg, 11, dir.path()).unwrap();
        assert_eq!(recs.len(), 8);
        for r in &recs {
            assert!(dir.path().join(&r.image_path).exists());
            assert!(r.gt_text.chars().all(|c| CHARSET.contains(c)));
            assert!(r.gt_text.chars().count() <= MAX_TEXT_LEN);
        }
        // Views of one scene share text; timestamps step by view_dt.
        assert_eq!(recs[0].gt_text, recs[1].gt_text);
        assert!((recs[1].timestamp - recs[0].timestamp - cfg.view_dt_s).abs() < 1e-12);

        let back = read_manifest(&dir.path().join("manifest.jsonl")).unwrap();
        assert_eq!(back, recs);

        // Same seed, fresh directory: byte-identical manifest and images.
        let dir2 = tempfile::tempdir().unwrap();
        make_dataset(&cfg, 11, dir2.path()).unwrap();
        let m1 = std::fs::read(dir.path().join("manifest.jsonl")).unwrap();
        let m2 = std::fs::read(dir2.path().join("manifest.jsonl")).unwrap();
        assert_eq!(m1, m2);
        let i1 = std::fs::read(dir.path().join(&recs[0].image_path)).unwrap();
        let i2 = std::fs::read(dir2.path().join(&recs[0].image_path)).unwrap();
        assert_eq!(i1, i2);
    }

    #[test]
    fn thousand_records_no_image_collisions() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            scenes: 500,
            views_per_scene: 2,
            frame_h: 80,
            frame_w: 120,
            plate_height: Range2::new(16.0, 22.0),
            pattern: "DDLD".into(),
            degradations: vec![
                DegradationRange::clean(),
                DegradationRange {
                    noise_std: Range2::new(0.01, 0.05),
                    ..DegradationRange::clean()
                },
            ],
            ..Default::default()
        };
        let recs = make_dataset(&cfg, 123, dir.path()).unwrap();
        assert_eq!(recs.len(), 1000);
        let mut seeds = HashSet::new();
        let mut hashes = HashSet::new();
        for r in &recs {
            assert!(seeds.insert(r.seed), "record seed collision");
            let bytes = std::fs::read(dir.path().join(&r.image_path)).unwrap();
            use std::hash::{Hash, Hasher};
            let mut h = std::collections::hash_map::DefaultHasher::new();
            bytes.hash(&mut h);
            assert!(hashes.insert(h.finish()), "image collision at {}", r.image_path);
        }
    }

    #[test]
    fn records_group_by_scene_in_view_order() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            scenes: 3,
            views_per_scene: 3,
            frame_h: 100,
            frame_w: 160,
            plate_height: Range2::new(20.0, 24.0),
            ..Default::default()
        };
        let recs = make_dataset(&cfg, 5, dir.path()).unwrap();
        let grouped = records_by_scene(&recs);
        assert_eq!(grouped.len(), 3);
        for (sid, views) in grouped {
            assert_eq!(views.len(), 3);
            for (i, v) in views.iter().enumerate() {
                assert_eq!(v.scene_id, sid);
                assert_eq!(v.view_id, i as u32);
            }
        }
    }
}
