//! Minimal RGB float raster shared by ingestion, encoding, masking and rendering.

use serde::{Deserialize, Serialize};

/// Interleaved RGB pixels (`HWC`), nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Raster {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Raster {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    /// Wraps interleaved RGB data; `None` if the length does not match.
    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Option<Self> {
        (data.len() == width * height * 3).then_some(Self { width, height, data })
    }

    /// Decodes an 8-bit image, scaling each channel by 1/255.
    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let data = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
        Self { width: img.width() as usize, height: img.height() as usize, data }
    }

    /// Quantizes back to 8 bits (round to nearest, clamped).
    pub fn to_rgb8(&self) -> image::RgbImage {
        let raw = self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Per-channel mean over every pixel, accumulated in f64.
    pub fn channel_means(&self) -> [f64; 3] {
        let mut sums = [0.0f64; 3];
        for px in self.data.chunks_exact(3) {
            for c in 0..3 {
                sums[c] += px[c] as f64;
            }
        }
        let n = (self.width * self.height).max(1) as f64;
        sums.map(|s| s / n)
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Copies the pixel block `[x0, x1) x [y0, y1)`.
    pub fn crop(&self, x0: usize, x1: usize, y0: usize, y1: usize) -> Raster {
        let (w, h) = (x1 - x0, y1 - y0);
        let mut data = Vec::with_capacity(w * h * 3);
        for y in y0..y1 {
            let row = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[row..row + w * 3]);
        }
        Raster { width: w, height: h, data }
    }

    /// Bilinear resample with half-pixel centers and edge clamping.
    /// Same-size resampling returns an exact copy.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Raster {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let xs = axis_taps(self.width, width);
        let ys = axis_taps(self.height, height);
        let mut out = Vec::with_capacity(width * height * 3);
        for &(y0, y1, fy) in &ys {
            let r0 = y0 * self.width;
            let r1 = y1 * self.width;
            for &(x0, x1, fx) in &xs {
                let a = (r0 + x0) * 3;
                let b = (r0 + x1) * 3;
                let c = (r1 + x0) * 3;
                let d = (r1 + x1) * 3;
                for ch in 0..3 {
                    let top = self.data[a + ch] + (self.data[b + ch] - self.data[a + ch]) * fx;
                    let bot = self.data[c + ch] + (self.data[d + ch] - self.data[c + ch]) * fx;
                    out.push(top + (bot - top) * fy);
                }
            }
        }
        Raster { width, height, data: out }
    }

    /// Block-average down to `cells x cells`; each cell averages the source
    /// pixels whose index maps into it.
    pub fn area_pool(&self, cells: usize) -> Vec<f32> {
        let mut sums = vec![0.0f32; cells * cells * 3];
        let mut counts = vec![0u32; cells * cells];
        for y in 0..self.height {
            let cy = y * cells / self.height;
            for x in 0..self.width {
                let cx = x * cells / self.width;
                let cell = cy * cells + cx;
                let i = (y * self.width + x) * 3;
                sums[cell * 3] += self.data[i];
                sums[cell * 3 + 1] += self.data[i + 1];
                sums[cell * 3 + 2] += self.data[i + 2];
                counts[cell] += 1;
            }
        }
        for (cell, &n) in counts.iter().enumerate() {
            let n = n.max(1) as f32;
            for ch in 0..3 {
                sums[cell * 3 + ch] /= n;
            }
        }
        sums
    }

    /// Equivalent to cropping `[x0, x1) x [y0, y1)`, resizing to
    /// `size x size` and pooling to `cells x cells`, without materializing
    /// the resized image. Agrees with that pipeline up to float rounding.
    pub fn crop_resize_pool(&self, x0: usize, x1: usize, y0: usize, y1: usize, size: usize, cells: usize) -> Vec<f32> {
        let wx = pooled_axis(x1 - x0, size, cells);
        let wy = pooled_axis(y1 - y0, size, cells);
        let mut out = vec![0.0f32; cells * cells * 3];
        let mut row = vec![0.0f64; cells * 3];
        for (cy, taps) in wy.iter().enumerate() {
            let mut acc = vec![0.0f64; cells * 3];
            for &(j, w_y) in taps {
                let base = ((y0 + j) * self.width + x0) * 3;
                row.fill(0.0);
                for (cx, xt) in wx.iter().enumerate() {
                    for &(i, w_x) in xt {
                        let p = base + i * 3;
                        for ch in 0..3 {
                            row[cx * 3 + ch] += w_x * self.data[p + ch] as f64;
                        }
                    }
                }
                for (a, r) in acc.iter_mut().zip(&row) {
                    *a += w_y * r;
                }
            }
            for (o, a) in out[cy * cells * 3..(cy + 1) * cells * 3].iter_mut().zip(&acc) {
                *o = *a as f32;
            }
        }
        out
    }
}

/// Per-cell source weights along one axis for a bilinear resize to `dst`
/// followed by a block average into `cells`.
fn pooled_axis(src: usize, dst: usize, cells: usize) -> Vec<Vec<(usize, f64)>> {
    let mut dense = vec![vec![0.0f64; src]; cells];
    let mut counts = vec![0usize; cells];
    for (o, (i0, i1, f)) in axis_taps(src, dst).into_iter().enumerate() {
        let c = o * cells / dst;
        dense[c][i0] += 1.0 - f as f64;
        dense[c][i1] += f as f64;
        counts[c] += 1;
    }
    dense
        .into_iter()
        .zip(counts)
        .map(|(w, n)| {
            let n = n.max(1) as f64;
            w.into_iter().enumerate().filter(|(_, v)| *v != 0.0).map(|(i, v)| (i, v / n)).collect()
        })
        .collect()
}

/// Source taps `(i0, i1, frac)` for each destination index along one axis.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    let scale = src as f64 / dst as f64;
    let last = src.saturating_sub(1);
    (0..dst)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, last as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(last);
            (i0, i1, (s - i0 as f64) as f32)
        })
        .collect()
}
