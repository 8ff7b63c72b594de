use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::augment::map_boxes;
use super::{crop_sample, warp, Homography, Sample, Scene};

/// Pad by `fx * W` columns and `fy * H` rows (rounded, split evenly with the
/// odd pixel on the right/bottom), replicating border pixels.
pub fn perturb_pad(s: &Sample, fx: f64, fy: f64) -> Sample {
    let (w, h) = (s.image.width, s.image.height);
    let px = (fx.max(0.0) * w as f64).round() as usize;
    let py = (fy.max(0.0) * h as f64).round() as usize;
    let (left, top) = (px / 2, py / 2);
    let image = warp(&s.image, w + px, h + py, |x, y| {
        [x - left as f64, y - top as f64]
    });
    let mut out = s.clone();
    out.image = image;
    for b in &mut out.boxes {
        *b = b.translate(left as f64, top as f64);
    }
    out
}

/// Stretch the four image corners outward by the given fractions of width and
/// height (`[dx, dy]` for top-left, top-right, bottom-right, bottom-left) and
/// warp the quadrilateral back to an axis-aligned rectangle.
pub fn stretch_with(s: &Sample, disp: [[f64; 2]; 4]) -> Sample {
    let (w, h) = (s.image.width as f64, s.image.height as f64);
    let d = disp.map(|[dx, dy]| [dx.max(0.0) * w, dy.max(0.0) * h]);
    if d.iter().all(|v| v[0] == 0.0 && v[1] == 0.0) {
        return s.clone();
    }
    let quad = [
        [-d[0][0], -d[0][1]],
        [w + d[1][0], -d[1][1]],
        [w + d[2][0], h + d[2][1]],
        [-d[3][0], h + d[3][1]],
    ];
    let out_w = ((quad[1][0] - quad[0][0] + quad[2][0] - quad[3][0]) / 2.0)
        .round()
        .max(1.0);
    let out_h = ((quad[3][1] - quad[0][1] + quad[2][1] - quad[1][1]) / 2.0)
        .round()
        .max(1.0);
    let rect = [[0.0, 0.0], [out_w, 0.0], [out_w, out_h], [0.0, out_h]];
    let to_source = Homography::from_points(rect, quad).expect("outward quad is convex");
    let to_output = Homography::from_points(quad, rect).expect("outward quad is convex");
    let image = warp(&s.image, out_w as usize, out_h as usize, |x, y| {
        to_source.apply(x, y)
    });
    map_boxes(s, image, |x, y| to_output.apply(x, y))
}

/// Random outward corner stretch of up to `max_ratio` of width and height.
pub fn perturb_random_stretch(s: &Sample, max_ratio: f64, seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = max_ratio.max(0.0);
    let disp = [0; 4].map(|_| [rng.gen::<f64>() * m, rng.gen::<f64>() * m]);
    stretch_with(s, disp)
}

/// How a detector box is enlarged before cropping from the canvas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExpandMode {
    /// Enlarge by this fraction of width and height, split evenly per side.
    Fixed(f64),
    /// Push each corner outward by up to this fraction and take the
    /// circumscribed rectangle.
    Random(f64),
}

impl ExpandMode {
    /// Expand `[x0, y0, x1, y1]` given per-corner draws in `[0, 1)` (top-left,
    /// top-right, bottom-right, bottom-left; ignored in fixed mode).
    pub fn expand(&self, rect: [f64; 4], draws: [[f64; 2]; 4]) -> [f64; 4] {
        let [x0, y0, x1, y1] = rect;
        let (w, h) = (x1 - x0, y1 - y0);
        match *self {
            ExpandMode::Fixed(f) => [
                x0 - f * w / 2.0,
                y0 - f * h / 2.0,
                x1 + f * w / 2.0,
                y1 + f * h / 2.0,
            ],
            ExpandMode::Random(m) => {
                let [tl, tr, br, bl] = draws.map(|[u, v]| [u * m * w, v * m * h]);
                [
                    x0 - tl[0].max(bl[0]),
                    y0 - tl[1].max(tr[1]),
                    x1 + tr[0].max(br[0]),
                    y1 + bl[1].max(br[1]),
                ]
            }
        }
    }
}

/// Crop an expanded version of the scene's detector box from its canvas.
/// The expanded rectangle is rounded outward and clamped to the canvas.
pub fn perturb_expand_crop(scene: &Scene, mode: ExpandMode, seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws = [0; 4].map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]);
    let [x0, y0, x1, y1] = scene.crop.map(|v| v as f64);
    let r = mode.expand([x0, y0, x1, y1], draws);
    let (cw, ch) = (
        scene.canvas.image.width as f64,
        scene.canvas.image.height as f64,
    );
    let crop = [
        r[0].floor().clamp(0.0, cw) as usize,
        r[1].floor().clamp(0.0, ch) as usize,
        r[2].ceil().clamp(0.0, cw) as usize,
        r[3].ceil().clamp(0.0, ch) as usize,
    ];
    crop_sample(&scene.canvas, crop)
}

/// The four expanded-crop evaluation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Perturbation {
    /// Border-replicate padding by 10% of each dimension.
    Pad10,
    /// Random outward corner stretch up to 20%.
    RandomPad20,
    /// Crop from context with the box enlarged by 10%.
    Expand10,
    /// Crop from context with corners pushed out by up to 20%.
    RandomExpand20,
}

impl Perturbation {
    pub const ALL: [Perturbation; 4] = [
        Perturbation::Pad10,
        Perturbation::RandomPad20,
        Perturbation::Expand10,
        Perturbation::RandomExpand20,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Perturbation::Pad10 => "pad10",
            Perturbation::RandomPad20 => "rpad20",
            Perturbation::Expand10 => "ex10",
            Perturbation::RandomExpand20 => "rex20",
        }
    }

    pub fn needs_context(&self) -> bool {
        matches!(self, Perturbation::Expand10 | Perturbation::RandomExpand20)
    }

    /// Apply to a word crop. Expanded crops need the surrounding scene.
    pub fn apply(&self, sample: &Sample, scene: Option<&Scene>, seed: u64) -> Result<Sample> {
        match self {
            Perturbation::Pad10 => Ok(perturb_pad(sample, 0.10, 0.10)),
            Perturbation::RandomPad20 => Ok(perturb_random_stretch(sample, 0.20, seed)),
            Perturbation::Expand10 | Perturbation::RandomExpand20 => {
                let scene = scene.ok_or_else(|| {
                    Error::invalid(format!(
                        "perturbation {} needs a context image",
                        self.name()
                    ))
                })?;
                let mode = if *self == Perturbation::Expand10 {
                    ExpandMode::Fixed(0.10)
                } else {
                    ExpandMode::Random(0.20)
                };
                let mut out = perturb_expand_crop(scene, mode, seed);
                out.word = sample.word.clone();
                Ok(out)
            }
        }
    }
}

impl fmt::Display for Perturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Perturbation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Perturbation::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown perturbation {s:?} (expected pad10, rpad20, ex10 or rex20)"
                ))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CharBox;
    use crate::synth::RgbImage;

    fn sample(w: usize, h: usize) -> Sample {
        let mut image = RgbImage::new(w, h);
        for y in 0..h {
            for x in 0..w {
                image.set(
                    x,
                    y,
                    [
                        x as f32 / w as f32,
                        y as f32 / h as f32,
                        ((x * 7 + y * 3) % 11) as f32 / 11.0,
                    ],
                );
            }
        }
        image.quantize();
        Sample {
            image,
            word: "hi".into(),
            boxes: vec![
                CharBox::new(20.0, 20.0, 60.0, 80.0, 18).unwrap(),
                CharBox::new(100.0, 20.0, 140.0, 80.0, 19).unwrap(),
            ],
        }
    }

    #[test]
    fn pad_arithmetic() {
        let s = sample(200, 100);
        let p = perturb_pad(&s, 0.10, 0.10);
        assert_eq!((p.image.width, p.image.height), (220, 110));
        assert_eq!(p.boxes[0], s.boxes[0].translate(10.0, 5.0));
        assert_eq!(p.image.get(0, 0), s.image.get(0, 0));
        assert_eq!(p.image.get(219, 109), s.image.get(199, 99));
        assert_eq!(p.image.crop(10, 5, 210, 105), s.image);
        assert_eq!(perturb_pad(&s, 0.0, 0.0), s);
    }

    #[test]
    fn symmetric_stretch_is_padding() {
        let s = sample(200, 100);
        let st = stretch_with(&s, [[0.1, 0.1]; 4]);
        let pad = perturb_pad(&s, 0.2, 0.2);
        assert_eq!(
            (st.image.width, st.image.height),
            (pad.image.width, pad.image.height)
        );
        for (a, b) in st.image.data.iter().zip(&pad.image.data) {
            assert!((a - b).abs() < 1e-5);
        }
        for (a, b) in st.boxes.iter().zip(&pad.boxes) {
            assert!((a.x_min - b.x_min).abs() < 1e-6 && (a.y_max - b.y_max).abs() < 1e-6);
        }
    }

    #[test]
    fn stretch_identity_and_determinism() {
        let s = sample(200, 100);
        assert_eq!(perturb_random_stretch(&s, 0.0, 5), s);
        let a = perturb_random_stretch(&s, 0.2, 5);
        assert_eq!(a, perturb_random_stretch(&s, 0.2, 5));
        assert_eq!(a.word, s.word);
        a.validate().unwrap();
        assert!(a.image.width >= 200 && a.image.width <= 280);
    }

    #[test]
    fn fixed_expand_arithmetic() {
        let r = ExpandMode::Fixed(0.10).expand([10.0, 10.0, 110.0, 60.0], [[0.5; 2]; 4]);
        assert_eq!(r, [5.0, 7.5, 115.0, 62.5]);
        let r = ExpandMode::Random(0.20).expand([10.0, 10.0, 110.0, 60.0], [[0.0; 2]; 4]);
        assert_eq!(r, [10.0, 10.0, 110.0, 60.0]);
        let r = ExpandMode::Random(0.20).expand(
            [0.0, 0.0, 100.0, 50.0],
            [[1.0, 0.0], [0.0; 2], [0.0; 2], [0.5, 1.0]],
        );
        assert_eq!(r, [-20.0, 0.0, 100.0, 60.0]);
    }

    #[test]
    fn expand_crop_clamps_and_keeps_word() {
        let s = sample(200, 100);
        let scene = Scene {
            canvas: s.clone(),
            crop: [0, 0, 200, 100],
            curvature: 0.0,
        };
        let out = perturb_expand_crop(&scene, ExpandMode::Fixed(0.10), 0);
        assert_eq!(out, s);
        let scene = Scene {
            canvas: s.clone(),
            crop: [10, 10, 150, 90],
            curvature: 0.0,
        };
        let out = Perturbation::RandomExpand20
            .apply(&scene.tight(), Some(&scene), 3)
            .unwrap();
        assert_eq!(out.word, "hi");
        out.validate().unwrap();
        assert!(Perturbation::Expand10.apply(&s, None, 0).is_err());
    }

    #[test]
    fn names_round_trip() {
        for p in Perturbation::ALL {
            assert_eq!(p.name().parse::<Perturbation>().unwrap(), p);
        }
        assert!("pad11".parse::<Perturbation>().is_err());
    }
}
