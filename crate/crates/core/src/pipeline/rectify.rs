//! Crop rectification: every detected plate becomes one or two canonical
//! fixed-size row images. Two-row plates are cut at the brightest horizontal
//! seam (the inter-row gap carries no ink), searched in the middle band of
//! the crop.

use crate::error::Result;
use crate::geometry::BBox;
use crate::img::Image;
use crate::pipeline::layout::{LayoutClass, LayoutNet};

/// A rectified plate: one canonical image per text row.
#[derive(Debug, Clone)]
pub struct AlignedPlate {
    pub rows: Vec<Image>,
    pub layout: LayoutClass,
}

/// Row seam: the y with minimal mean ink (1 - luma) in the central band.
pub fn split_row_index(crop: &Image) -> usize {
    let luma = crop.to_luma();
    let lo = (crop.h as f64 * 0.35) as usize;
    let hi = ((crop.h as f64 * 0.65) as usize).max(lo + 1).min(crop.h);
    let mut best_y = lo;
    let mut best = f64::INFINITY;
    for y in lo..hi {
        let ink: f64 = (0..crop.w).map(|x| 1.0 - luma.get(y, x, 0)).sum::<f64>() / crop.w as f64;
        if ink < best {
            best = ink;
            best_y = y;
        }
    }
    best_y
}

/// Rectifies one crop under a known layout.
pub fn rectify_crop(crop: &Image, layout: LayoutClass, canon_h: usize, canon_w: usize) -> AlignedPlate {
    let rows = match layout {
        LayoutClass::SingleRow => vec![crop.to_luma().resize(canon_h, canon_w)],
        LayoutClass::TwoRow => {
            let split = split_row_index(crop).clamp(1, crop.h.saturating_sub(1)) as f64;
            let top = BBox::new(0.0, 0.0, crop.w as f64, split);
            let bottom = BBox::new(0.0, split, crop.w as f64, crop.h as f64);
            vec![
                crop.to_luma().crop_resize(&top, canon_h, canon_w),
                crop.to_luma().crop_resize(&bottom, canon_h, canon_w),
            ]
        }
    };
    AlignedPlate { rows, layout }
}

/// Classifies each crop's layout and rectifies it to the canonical size.
pub fn rectify_and_align(
    crops: &[Image],
    classifier: &LayoutNet,
    canon_h: usize,
    canon_w: usize,
) -> Result<Vec<AlignedPlate>> {
    crops
        .iter()
        .map(|crop| {
            let (layout, _) = classifier.classify(crop)?;
            Ok(rectify_crop(crop, layout, canon_h, canon_w))
        })
        .collect()
}
