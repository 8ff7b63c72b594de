use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CharBox;

use super::{warp, RgbImage, Sample};

/// Training-time augmentation ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentParams {
    /// Maximum absolute rotation in degrees.
    pub rotation_deg: f64,
    /// Maximum hue rotation in degrees.
    pub hue_deg: f64,
    /// Maximum additive brightness shift.
    pub brightness: f32,
    /// Contrast factor range around the image mean.
    pub contrast: [f32; 2],
    pub blur_prob: f64,
    pub blur_sigma: [f64; 2],
    /// Output sizes as `(height, width)`; one is picked per sample.
    pub sizes: Vec<(usize, usize)>,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            rotation_deg: 15.0,
            hue_deg: 20.0,
            brightness: 0.15,
            contrast: [0.7, 1.3],
            blur_prob: 0.3,
            blur_sigma: [0.3, 1.0],
            sizes: vec![(32, 128), (48, 192), (64, 256)],
        }
    }
}

impl AugmentParams {
    /// No photometric or geometric change; only the resize.
    pub fn resize_only(sizes: Vec<(usize, usize)>) -> Self {
        AugmentParams {
            rotation_deg: 0.0,
            hue_deg: 0.0,
            brightness: 0.0,
            contrast: [1.0, 1.0],
            blur_prob: 0.0,
            blur_sigma: [0.0, 0.0],
            sizes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() {
            return Err(Error::invalid(
                "augmentation needs at least one output size",
            ));
        }
        for &(h, w) in &self.sizes {
            if h < 16 || w < 16 || h % 8 != 0 || w % 8 != 0 {
                return Err(Error::invalid(format!(
                    "output size {h}x{w} must be multiples of 8 and at least 16"
                )));
            }
        }
        if self.contrast[0] > self.contrast[1] || self.blur_sigma[0] > self.blur_sigma[1] {
            return Err(Error::invalid("empty augmentation range"));
        }
        if self.rotation_deg < 0.0
            || self.hue_deg < 0.0
            || self.brightness < 0.0
            || !(0.0..=1.0).contains(&self.blur_prob)
        {
            return Err(Error::invalid(
                "augmentation magnitudes must be non-negative",
            ));
        }
        Ok(())
    }
}

/// Map each box's corners through `fwd`, take the axis-aligned hull and clamp
/// it to `width x height`. Characters whose box falls outside are dropped.
pub(crate) fn map_boxes(s: &Sample, image: RgbImage, fwd: impl Fn(f64, f64) -> [f64; 2]) -> Sample {
    let (w, h) = (image.width as f64, image.height as f64);
    let mapped: Vec<Option<CharBox>> = s
        .boxes
        .iter()
        .map(|b| {
            let corners = [
                fwd(b.x_min, b.y_min),
                fwd(b.x_max, b.y_min),
                fwd(b.x_min, b.y_max),
                fwd(b.x_max, b.y_max),
            ];
            let hull = CharBox {
                x_min: corners.iter().map(|c| c[0]).fold(f64::INFINITY, f64::min),
                y_min: corners.iter().map(|c| c[1]).fold(f64::INFINITY, f64::min),
                x_max: corners
                    .iter()
                    .map(|c| c[0])
                    .fold(f64::NEG_INFINITY, f64::max),
                y_max: corners
                    .iter()
                    .map(|c| c[1])
                    .fold(f64::NEG_INFINITY, f64::max),
                class_id: b.class_id,
            };
            hull.clamp_to(w, h)
        })
        .collect();
    let keep: Vec<bool> = mapped.iter().map(Option::is_some).collect();
    let mut out = Sample {
        image,
        word: s.word.clone(),
        boxes: s.boxes.clone(),
    };
    out.retain_boxes(&keep);
    out.boxes = mapped.into_iter().flatten().collect();
    out
}

fn rotation(deg: f64) -> (f64, f64) {
    let t = deg.to_radians();
    (t.cos(), t.sin())
}

/// Rotate by `deg` degrees (counter-clockwise on screen) about `center`,
/// keeping the canvas size. Borders replicate.
pub(crate) fn rotate_about(s: &Sample, deg: f64, center: (f64, f64)) -> Sample {
    let (c, sn) = rotation(deg);
    let (cx, cy) = center;
    let image = warp(&s.image, s.image.width, s.image.height, |x, y| {
        let (dx, dy) = (x - cx, y - cy);
        [cx + c * dx - sn * dy, cy + sn * dx + c * dy]
    });
    map_boxes(s, image, |x, y| {
        let (dx, dy) = (x - cx, y - cy);
        [cx + c * dx + sn * dy, cy - sn * dx + c * dy]
    })
}

/// Rotate by `deg` degrees about the image center, keeping the canvas.
/// Boxes become the bounds of their rotated corners clipped to the image.
pub fn rotate_in_place(s: &Sample, deg: f64) -> Sample {
    let center = (s.image.width as f64 / 2.0, s.image.height as f64 / 2.0);
    rotate_about(s, deg, center)
}

/// Rotate by `deg` degrees on a canvas enlarged to hold the whole rotated
/// image. Borders replicate.
pub fn rotate(s: &Sample, deg: f64) -> Sample {
    let (c, sn) = rotation(deg);
    let (w, h) = (s.image.width as f64, s.image.height as f64);
    // the epsilon keeps exact quarter turns from gaining a pixel
    let nw = (w * c.abs() + h * sn.abs() - 1e-9).ceil().max(1.0);
    let nh = (w * sn.abs() + h * c.abs() - 1e-9).ceil().max(1.0);
    let (cx, cy) = (w / 2.0, h / 2.0);
    let (ncx, ncy) = (nw / 2.0, nh / 2.0);
    let image = warp(&s.image, nw as usize, nh as usize, |x, y| {
        let (dx, dy) = (x - ncx, y - ncy);
        [cx + c * dx - sn * dy, cy + sn * dx + c * dy]
    });
    map_boxes(s, image, |x, y| {
        let (dx, dy) = (x - cx, y - cy);
        [ncx + c * dx + sn * dy, ncy - sn * dx + c * dy]
    })
}

fn blur(img: &RgbImage, sigma: f64) -> RgbImage {
    let radius = (3.0 * sigma).ceil() as i64;
    let kernel: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp() as f32)
        .collect();
    let norm: f32 = kernel.iter().sum();
    let pass = |src: &RgbImage, horizontal: bool| {
        let mut out = RgbImage::new(src.width, src.height);
        for y in 0..src.height {
            for x in 0..src.width {
                let mut acc = [0.0f32; 3];
                for (k, wgt) in kernel.iter().enumerate() {
                    let o = k as i64 - radius;
                    let (sx, sy) = if horizontal {
                        ((x as i64 + o).clamp(0, src.width as i64 - 1) as usize, y)
                    } else {
                        (x, (y as i64 + o).clamp(0, src.height as i64 - 1) as usize)
                    };
                    let p = src.get(sx, sy);
                    for c in 0..3 {
                        acc[c] += wgt * p[c];
                    }
                }
                out.set(x, y, acc.map(|v| v / norm));
            }
        }
        out
    };
    pass(&pass(img, true), false)
}

fn photometric(img: &mut RgbImage, p: &AugmentParams, rng: &mut impl Rng) {
    // hue: rotate colors about the gray axis
    let theta = if p.hue_deg > 0.0 {
        rng.gen_range(-p.hue_deg..=p.hue_deg).to_radians()
    } else {
        0.0
    };
    let (c, s) = (theta.cos() as f32, theta.sin() as f32);
    let k = (1.0 - c) / 3.0;
    let r3 = (1.0f32 / 3.0).sqrt();
    let m = [
        [c + k, k - r3 * s, k + r3 * s],
        [k + r3 * s, c + k, k - r3 * s],
        [k - r3 * s, k + r3 * s, c + k],
    ];
    let bright = if p.brightness > 0.0 {
        rng.gen_range(-p.brightness..=p.brightness)
    } else {
        0.0
    };
    let contrast = if p.contrast[0] < p.contrast[1] {
        rng.gen_range(p.contrast[0]..=p.contrast[1])
    } else {
        p.contrast[0]
    };
    let n = (img.width * img.height).max(1) as f32;
    let mean = img.data.iter().sum::<f32>() / (3.0 * n);
    for px in img.data.chunks_exact_mut(3) {
        let v = [px[0], px[1], px[2]];
        for (ch, row) in m.iter().enumerate() {
            let h = row[0] * v[0] + row[1] * v[1] + row[2] * v[2];
            px[ch] = ((h - mean) * contrast + mean + bright).clamp(0.0, 1.0);
        }
    }
}

/// Random rotation, color jitter, blur and resize to one of the configured
/// sizes. Boxes follow the geometry.
pub fn augment(s: &Sample, p: &AugmentParams, rng: &mut impl Rng) -> Result<Sample> {
    p.validate()?;
    let mut out = if p.rotation_deg > 0.0 {
        rotate_in_place(s, rng.gen_range(-p.rotation_deg..=p.rotation_deg))
    } else {
        s.clone()
    };
    photometric(&mut out.image, p, rng);
    if p.blur_prob > 0.0 && rng.gen_bool(p.blur_prob) {
        let sigma = rng.gen_range(p.blur_sigma[0]..=p.blur_sigma[1]);
        if sigma > 0.0 {
            out.image = blur(&out.image, sigma);
        }
    }
    let &(h, w) = p.sizes.choose(rng).expect("validated non-empty");
    Ok(resize_sample(&out, h, w))
}

/// Resize image and boxes to `height x width`.
pub fn resize_sample(s: &Sample, height: usize, width: usize) -> Sample {
    let sx = width as f64 / s.image.width as f64;
    let sy = height as f64 / s.image.height as f64;
    let image = s.image.resize(width, height);
    map_boxes(s, image, |x, y| [x * sx, y * sy])
}
