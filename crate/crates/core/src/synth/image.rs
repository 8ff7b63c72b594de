use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Floating-point RGB image, row-major `[height, width, 3]`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut img = RgbImage::new(width, height);
        for px in img.data.chunks_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Bilinear sample at continuous coordinates where pixel `i` covers
    /// `[i, i+1)`. Coordinates outside the image replicate the border.
    pub fn sample(&self, x: f64, y: f64) -> [f32; 3] {
        let fx = (x - 0.5).clamp(0.0, (self.width - 1) as f64);
        let fy = (y - 0.5).clamp(0.0, (self.height - 1) as f64);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let ax = (fx - x0 as f64) as f32;
        let ay = (fy - y0 as f64) as f32;
        let (p00, p01, p10, p11) = (
            self.get(x0, y0),
            self.get(x1, y0),
            self.get(x0, y1),
            self.get(x1, y1),
        );
        let mut out = [0.0; 3];
        for c in 0..3 {
            let top = p00[c] + (p01[c] - p00[c]) * ax;
            let bot = p10[c] + (p11[c] - p10[c]) * ax;
            out[c] = top + (bot - top) * ay;
        }
        out
    }

    /// Bilinear resize with half-pixel centers.
    pub fn resize(&self, width: usize, height: usize) -> RgbImage {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut out = RgbImage::new(width, height);
        for y in 0..height {
            for x in 0..width {
                out.set(
                    x,
                    y,
                    self.sample((x as f64 + 0.5) * sx, (y as f64 + 0.5) * sy),
                );
            }
        }
        out
    }

    /// Copy of the pixels in `[x0, x1) x [y0, y1)`.
    pub fn crop(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> RgbImage {
        assert!(
            x0 < x1 && x1 <= self.width && y0 < y1 && y1 <= self.height,
            "crop out of bounds"
        );
        let mut out = RgbImage::new(x1 - x0, y1 - y0);
        for y in y0..y1 {
            let src = &self.data[(y * self.width + x0) * 3..(y * self.width + x1) * 3];
            let dst_start = (y - y0) * out.width * 3;
            out.data[dst_start..dst_start + src.len()].copy_from_slice(src);
        }
        out
    }

    /// Snap values to the 8-bit grid so PNG storage is lossless.
    pub fn quantize(&mut self) {
        for v in &mut self.data {
            *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
    }

    pub fn luminance(rgb: [f32; 3]) -> f32 {
        0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]
    }

    /// `[3, H, W]` network input, centered around zero.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let n = self.width * self.height;
        let mut data = vec![0.0; 3 * n];
        for (p, px) in self.data.chunks(3).enumerate() {
            for c in 0..3 {
                data[c * n + p] = px[c] - 0.5;
            }
        }
        Tensor::from_vec(&[3, self.height, self.width], data).expect("image tensor shape")
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let bytes = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer size")
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        RgbImage {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.as_raw().iter().map(|&b| b as f32 / 255.0).collect(),
        }
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Image {
                path: path.to_path_buf(),
                message: other.to_string(),
            },
        })?;
        Ok(RgbImage::from_rgb8(&img.to_rgb8()))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save(path).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Image {
                path: path.to_path_buf(),
                message: other.to_string(),
            },
        })
    }
}

/// Solve `a x = b` for a small dense system by Gaussian elimination with
/// partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Planar projective transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(pub [f64; 9]);

impl Homography {
    /// The transform taking each `src[i]` to `dst[i]`.
    pub fn from_points(src: [[f64; 2]; 4], dst: [[f64; 2]; 4]) -> Option<Self> {
        let mut a = Vec::with_capacity(8);
        let mut b = Vec::with_capacity(8);
        for i in 0..4 {
            let [x, y] = src[i];
            let [u, v] = dst[i];
            a.push(vec![x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]);
            b.push(u);
            a.push(vec![0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]);
            b.push(v);
        }
        let h = solve(a, b)?;
        Some(Homography([
            h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0,
        ]))
    }

    pub fn apply(&self, x: f64, y: f64) -> [f64; 2] {
        let h = &self.0;
        let w = h[6] * x + h[7] * y + h[8];
        [
            (h[0] * x + h[1] * y + h[2]) / w,
            (h[3] * x + h[4] * y + h[5]) / w,
        ]
    }
}

/// Render a `width x height` image whose pixel centers map through
/// `to_source` into `src` (bilinear, border replicate).
pub fn warp(
    src: &RgbImage,
    width: usize,
    height: usize,
    to_source: impl Fn(f64, f64) -> [f64; 2],
) -> RgbImage {
    let mut out = RgbImage::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let [sx, sy] = to_source(x as f64 + 0.5, y as f64 + 0.5);
            out.set(x, y, src.sample(sx, sy));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resize_identity_and_crop() {
        let mut img = RgbImage::new(4, 3);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = i as f32 / 36.0;
        }
        assert_eq!(img.resize(4, 3), img);
        let c = img.crop(1, 1, 3, 3);
        assert_eq!(c.get(0, 0), img.get(1, 1));
        assert_eq!(c.get(1, 1), img.get(2, 2));
    }

    #[test]
    fn sample_at_centers_is_exact() {
        let mut img = RgbImage::new(3, 2);
        img.set(2, 1, [0.2, 0.4, 0.6]);
        assert_eq!(img.sample(2.5, 1.5), [0.2, 0.4, 0.6]);
        // beyond the border replicates the edge pixel
        assert_eq!(img.sample(10.0, 5.0), [0.2, 0.4, 0.6]);
    }

    #[test]
    fn homography_maps_corners() {
        let src = [[0.0, 0.0], [10.0, 0.0], [10.0, 5.0], [0.0, 5.0]];
        let dst = [[-1.0, -2.0], [12.0, 0.5], [11.0, 7.0], [0.5, 6.0]];
        let h = Homography::from_points(src, dst).unwrap();
        for i in 0..4 {
            let [u, v] = h.apply(src[i][0], src[i][1]);
            assert!((u - dst[i][0]).abs() < 1e-9 && (v - dst[i][1]).abs() < 1e-9);
        }
    }
}
