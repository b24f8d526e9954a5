//! Multi-view fusion of rectified plate rows. Views are folded pairwise in
//! descending information order, so the sharpest view anchors the result and
//! each extra view can only contribute where it carries signal.

use crate::error::{Error, Result};
use crate::fusion::{fusion_weights, image_info};
use crate::img::Image;

/// Fuses a pair. Equal sizes blend everywhere; otherwise the overlapping
/// top-left extent is blended and the margins come from the higher-g view,
/// whose frame also sets the output size.
fn fuse_pair(a: &Image, b: &Image, c: f64) -> Result<Image> {
    let ga = image_info(a)?;
    let gb = image_info(b)?;
    let (hi, lo, w) = if ga >= gb {
        (a, b, fusion_weights(ga, gb, c)?)
    } else {
        (b, a, fusion_weights(gb, ga, c)?)
    };
    let mut out = hi.clone();
    for y in 0..hi.h.min(lo.h) {
        for x in 0..hi.w.min(lo.w) {
            out.set(y, x, 0, w.w1 * hi.get(y, x, 0) + w.w2 * lo.get(y, x, 0));
        }
    }
    Ok(out)
}

/// Fuses any number of same-row views into one image.
///
/// With one view the output is a copy. With several, views are ranked by
/// information measure and folded best-first with info-gated weights at
/// temperature `c`.
pub fn fuse_views(views: &[Image], c: f64) -> Result<Image> {
    if views.is_empty() {
        return Err(Error::InvalidInput("fuse_views: no views".into()));
    }
    if views.len() == 1 {
        return Ok(views[0].clone());
    }
    let mut order: Vec<usize> = (0..views.len()).collect();
    let info: Vec<f64> = views.iter().map(image_info).collect::<Result<_>>()?;
    // Descending info; index breaks ties so the fold is deterministic.
    order.sort_by(|&a, &b| info[b].partial_cmp(&info[a]).unwrap().then(a.cmp(&b)));

    let mut acc = views[order[0]].to_luma();
    for &i in &order[1..] {
        acc = fuse_pair(&acc, &views[i].to_luma(), c)?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{render_plate, Layout, PlateSpec};

    fn plate(seed: u64) -> Image {
        render_plate(
            &PlateSpec { text: "29A12345".into(), layout: Layout::SingleRow, width: 96, height: 32 },
            seed,
        )
        .unwrap()
        .image
        .to_luma()
    }

    #[test]
    fn single_view_passes_through() {
        let v = plate(1);
        let out = fuse_views(std::slice::from_ref(&v), 0.002).unwrap();
        assert_eq!(out.data, v.data);
    }

    #[test]
    fn identical_views_fuse_to_themselves() {
        let v = plate(2);
        let out = fuse_views(&[v.clone(), v.clone(), v.clone()], 0.002).unwrap();
        for (a, b) in out.data.iter().zip(&v.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sharp_view_dominates_a_blurred_one() {
        let sharp = plate(3);
        let blurred = sharp.gaussian_blur(2.0);
        let fused = fuse_views(&[blurred.clone(), sharp.clone()], 0.002).unwrap();
        assert!(fused.mse(&sharp) < fused.mse(&blurred));
        // Order of the input slice must not matter.
        let fused2 = fuse_views(&[sharp.clone(), blurred], 0.002).unwrap();
        for (a, b) in fused.data.iter().zip(&fused2.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn margins_come_from_the_sharper_frame() {
        let sharp = plate(4); // 32x96, strong edges
        let flat = Image::new(30, 90, 1, 0.5); // near-zero info, smaller
        let out = fuse_views(&[flat.clone(), sharp.clone()], 0.002).unwrap();
        assert_eq!((out.h, out.w), (32, 96));
        // Margin pixels outside the 30x90 overlap are the sharp view's own.
        for y in 30..32 {
            for x in 0..96 {
                assert_eq!(out.get(y, x, 0), sharp.get(y, x, 0));
            }
        }
        // Overlap leans heavily toward the sharp view at this temperature.
        let mut num = 0.0;
        let mut den = 0.0;
        for y in 0..30 {
            for x in 0..90 {
                num += (out.get(y, x, 0) - sharp.get(y, x, 0)).powi(2);
                den += (out.get(y, x, 0) - flat.get(y, x, 0)).powi(2);
            }
        }
        assert!(num < den, "fused overlap should sit nearer the sharp view");
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(fuse_views(&[], 0.002).is_err());
    }
}
