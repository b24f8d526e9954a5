//! Minimal float image type and the raster operations the pipeline needs:
//! PNG round-tripping, bilinear resampling, Gaussian blur, Sobel gradients,
//! and perspective warping. Values live in [0, 1], row-major with the
//! channel index fastest.

use crate::error::Error;
use crate::geometry::BBox;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(h: usize, w: usize, c: usize, fill: f64) -> Self {
        Image { h, w, c, data: vec![fill; h * w * c] }
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self::new(h, w, 1, 0.0)
    }

    #[inline]
    pub fn idx(&self, y: usize, x: usize, ch: usize) -> usize {
        (y * self.w + x) * self.c + ch
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, ch: usize) -> f64 {
        self.data[(y * self.w + x) * self.c + ch]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, ch: usize, v: f64) {
        self.data[(y * self.w + x) * self.c + ch] = v;
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Mean squared difference over all samples. Shapes must match.
    pub fn mse(&self, other: &Image) -> f64 {
        assert_eq!((self.h, self.w, self.c), (other.h, other.w, other.c), "mse shape mismatch");
        if self.data.is_empty() {
            return 0.0;
        }
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        sum / self.data.len() as f64
    }

    /// Average channels down to a single-channel image (identity for c = 1).
    pub fn to_luma(&self) -> Image {
        if self.c == 1 {
            return self.clone();
        }
        let mut out = Image::zeros(self.h, self.w);
        for y in 0..self.h {
            for x in 0..self.w {
                let mut s = 0.0;
                for ch in 0..self.c {
                    s += self.get(y, x, ch);
                }
                out.set(y, x, 0, s / self.c as f64);
            }
        }
        out
    }

    /// Stack two same-shape single-channel images into one two-channel image.
    pub fn stack2(a: &Image, b: &Image) -> Image {
        assert_eq!((a.h, a.w, a.c), (b.h, b.w, b.c));
        assert_eq!(a.c, 1);
        let mut out = Image::new(a.h, a.w, 2, 0.0);
        for y in 0..a.h {
            for x in 0..a.w {
                out.set(y, x, 0, a.get(y, x, 0));
                out.set(y, x, 1, b.get(y, x, 0));
            }
        }
        out
    }

    /// Bilinear sample at pixel-center coordinates (y, x), clamped to edges.
    pub fn sample(&self, y: f64, x: f64, ch: usize) -> f64 {
        let y = y.clamp(0.0, (self.h - 1) as f64);
        let x = x.clamp(0.0, (self.w - 1) as f64);
        let y0 = y.floor() as usize;
        let x0 = x.floor() as usize;
        let y1 = (y0 + 1).min(self.h - 1);
        let x1 = (x0 + 1).min(self.w - 1);
        let fy = y - y0 as f64;
        let fx = x - x0 as f64;
        let top = self.get(y0, x0, ch) * (1.0 - fx) + self.get(y0, x1, ch) * fx;
        let bot = self.get(y1, x0, ch) * (1.0 - fx) + self.get(y1, x1, ch) * fx;
        top * (1.0 - fy) + bot * fy
    }

    /// Resample to (oh, ow) with bilinear interpolation.
    pub fn resize(&self, oh: usize, ow: usize) -> Image {
        if oh == self.h && ow == self.w {
            return self.clone();
        }
        let mut out = Image::new(oh, ow, self.c, 0.0);
        let sy = self.h as f64 / oh as f64;
        let sx = self.w as f64 / ow as f64;
        for y in 0..oh {
            let src_y = (y as f64 + 0.5) * sy - 0.5;
            for x in 0..ow {
                let src_x = (x as f64 + 0.5) * sx - 0.5;
                for ch in 0..self.c {
                    out.set(y, x, ch, self.sample(src_y, src_x, ch));
                }
            }
        }
        out
    }

    /// Cut the (continuous-coordinate) box region and resample it to (oh, ow).
    pub fn crop_resize(&self, b: &BBox, oh: usize, ow: usize) -> Image {
        let mut out = Image::new(oh, ow, self.c, 0.0);
        let sy = b.height() / oh as f64;
        let sx = b.width() / ow as f64;
        for y in 0..oh {
            let src_y = b.y0 + (y as f64 + 0.5) * sy - 0.5;
            for x in 0..ow {
                let src_x = b.x0 + (x as f64 + 0.5) * sx - 0.5;
                for ch in 0..self.c {
                    out.set(y, x, ch, self.sample(src_y, src_x, ch));
                }
            }
        }
        out
    }

    /// Separable Gaussian blur, kernel radius ceil(3 sigma), edge-clamped.
    /// sigma <= 0 is the identity.
    pub fn gaussian_blur(&self, sigma: f64) -> Image {
        if sigma <= 0.0 {
            return self.clone();
        }
        let radius = (3.0 * sigma).ceil() as i64;
        let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
        for i in -radius..=radius {
            kernel.push((-(i * i) as f64 / (2.0 * sigma * sigma)).exp());
        }
        let norm: f64 = kernel.iter().sum();
        for k in &mut kernel {
            *k /= norm;
        }

        let mut tmp = Image::new(self.h, self.w, self.c, 0.0);
        for y in 0..self.h {
            for x in 0..self.w {
                for ch in 0..self.c {
                    let mut acc = 0.0;
                    for (ki, k) in kernel.iter().enumerate() {
                        let sx = (x as i64 + ki as i64 - radius).clamp(0, self.w as i64 - 1) as usize;
                        acc += k * self.get(y, sx, ch);
                    }
                    tmp.set(y, x, ch, acc);
                }
            }
        }
        let mut out = Image::new(self.h, self.w, self.c, 0.0);
        for y in 0..self.h {
            for x in 0..self.w {
                for ch in 0..self.c {
                    let mut acc = 0.0;
                    for (ki, k) in kernel.iter().enumerate() {
                        let sy = (y as i64 + ki as i64 - radius).clamp(0, self.h as i64 - 1) as usize;
                        acc += k * tmp.get(sy, x, ch);
                    }
                    out.set(y, x, ch, acc);
                }
            }
        }
        out
    }

    /// Sobel gradient magnitude of the luma image, same size, edge-clamped.
    /// Kernels are scaled by 1/8 so a unit step yields magnitude ~0.5.
    pub fn sobel_magnitude(&self) -> Image {
        let src = self.to_luma();
        let mut out = Image::zeros(src.h, src.w);
        let at = |y: i64, x: i64| -> f64 {
            let y = y.clamp(0, src.h as i64 - 1) as usize;
            let x = x.clamp(0, src.w as i64 - 1) as usize;
            src.get(y, x, 0)
        };
        for y in 0..src.h as i64 {
            for x in 0..src.w as i64 {
                let gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1)
                    - at(y - 1, x - 1)
                    - 2.0 * at(y, x - 1)
                    - at(y + 1, x - 1))
                    / 8.0;
                let gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1)
                    - at(y - 1, x - 1)
                    - 2.0 * at(y - 1, x)
                    - at(y - 1, x + 1))
                    / 8.0;
                out.set(y as usize, x as usize, 0, gx.hypot(gy));
            }
        }
        out
    }

    /// Blur lightly and keep every second pixel in each dimension
    /// (ceil semantics, so odd extents round up).
    pub fn downsample2(&self) -> Image {
        let blurred = self.gaussian_blur(0.8);
        let oh = self.h.div_ceil(2).max(1);
        let ow = self.w.div_ceil(2).max(1);
        let mut out = Image::new(oh, ow, self.c, 0.0);
        for y in 0..oh {
            for x in 0..ow {
                for ch in 0..self.c {
                    out.set(y, x, ch, blurred.get((2 * y).min(self.h - 1), (2 * x).min(self.w - 1), ch));
                }
            }
        }
        out
    }

    // ── PNG I/O ─────────────────────────────────────────────────────────────

    /// Encode as 8-bit grayscale PNG. Multi-channel images are converted to
    /// luma first; values are clamped then quantized.
    pub fn to_png_bytes(&self) -> Result<Vec<u8>, Error> {
        use image::ImageEncoder;
        let luma = self.to_luma();
        let bytes: Vec<u8> = luma
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let mut out = Vec::new();
        image::codecs::png::PngEncoder::new(&mut out)
            .write_image(&bytes, luma.w as u32, luma.h as u32, image::ExtendedColorType::L8)
            .map_err(|e| Error::Image(e.to_string()))?;
        Ok(out)
    }

    pub fn from_png_bytes(bytes: &[u8]) -> Result<Image, Error> {
        let decoded = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
            .map_err(|e| Error::Image(e.to_string()))?
            .to_luma8();
        let (w, h) = (decoded.width() as usize, decoded.height() as usize);
        let mut img = Image::zeros(h, w);
        for y in 0..h {
            for x in 0..w {
                img.set(y, x, 0, decoded.get_pixel(x as u32, y as u32).0[0] as f64 / 255.0);
            }
        }
        Ok(img)
    }

    pub fn save_png(&self, path: &std::path::Path) -> Result<(), Error> {
        std::fs::write(path, self.to_png_bytes()?)?;
        Ok(())
    }

    pub fn load_png(path: &std::path::Path) -> Result<Image, Error> {
        Image::from_png_bytes(&std::fs::read(path)?)
    }
}

// ── Perspective warp ─────────────────────────────────────────────────────────

/// 3x3 homography acting on pixel coordinates.
#[derive(Debug, Clone, Copy)]
pub struct Homography(pub [f64; 9]);

impl Homography {
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.0;
        let w = m[6] * x + m[7] * y + m[8];
        ((m[0] * x + m[1] * y + m[2]) / w, (m[3] * x + m[4] * y + m[5]) / w)
    }

    /// Least-constraint homography sending `src[i]` to `dst[i]` for four
    /// point pairs (direct linear transform, h22 pinned to 1).
    pub fn from_quad(src: &[(f64, f64); 4], dst: &[(f64, f64); 4]) -> Option<Homography> {
        let mut a = [[0.0f64; 9]; 8];
        for i in 0..4 {
            let (x, y) = src[i];
            let (u, v) = dst[i];
            a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
            a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
        }
        // Gaussian elimination with partial pivoting on the 8x8 system
        // (last column is the rhs).
        for col in 0..8 {
            let pivot = (col..8).max_by(|&r1, &r2| a[r1][col].abs().total_cmp(&a[r2][col].abs()))?;
            if a[pivot][col].abs() < 1e-12 {
                return None;
            }
            a.swap(col, pivot);
            let p = a[col][col];
            for r in 0..8 {
                if r == col {
                    continue;
                }
                let f = a[r][col] / p;
                if f != 0.0 {
                    for k in col..9 {
                        a[r][k] -= f * a[col][k];
                    }
                }
            }
        }
        let mut h = [0.0f64; 9];
        for i in 0..8 {
            h[i] = a[i][8] / a[i][i];
        }
        h[8] = 1.0;
        Some(Homography(h))
    }
}

/// Warp by the inverse mapping: every output pixel samples the source at
/// `inv(x, y)` with bilinear interpolation, edge-clamped. Same size as input.
pub fn warp_inverse(src: &Image, inv: &Homography) -> Image {
    let mut out = Image::new(src.h, src.w, src.c, 0.0);
    for y in 0..src.h {
        for x in 0..src.w {
            let (sx, sy) = inv.apply(x as f64, y as f64);
            for ch in 0..src.c {
                out.set(y, x, ch, src.sample(sy, sx, ch));
            }
        }
    }
    out
}
