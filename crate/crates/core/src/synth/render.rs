use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{char_to_class, CharBox};

use super::augment::rotate_about;
use super::font::{glyph, Glyph, CELL};
use super::{RgbImage, Sample, Scene};

/// Appearance distribution of rendered words. Every `[lo, hi]` pair is a
/// uniform range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderStyle {
    /// Image pixels per font pixel.
    pub glyph_scale: [f64; 2],
    /// Extra gap between glyphs, in font pixels.
    pub spacing: [f64; 2],
    /// Probability that a word is drawn along a curved baseline.
    pub curved_prob: f64,
    /// Arc amplitude of curved baselines as a fraction of the text height.
    pub curvature: [f64; 2],
    pub rotation_deg: [f64; 2],
    /// Per-channel range of the background color.
    pub background: [f32; 2],
    /// Per-channel range of the text color.
    pub foreground: [f32; 2],
    /// Minimum luminance difference between text and background.
    pub min_contrast: f32,
    /// Standard deviation of additive pixel noise.
    pub noise: f32,
    /// Probability of upper-casing the first letter (half of those: the
    /// whole word).
    pub uppercase_prob: f64,
    /// Detector crop margin around the inked word, as a fraction of the
    /// glyph height.
    pub crop_margin: [f64; 2],
    /// Background context around the crop, as a fraction of the crop size.
    pub context: f64,
}

impl Default for RenderStyle {
    fn default() -> Self {
        RenderStyle {
            glyph_scale: [3.0, 5.0],
            spacing: [0.0, 1.5],
            curved_prob: 0.0,
            curvature: [0.2, 0.35],
            rotation_deg: [-3.0, 3.0],
            background: [0.0, 1.0],
            foreground: [0.0, 1.0],
            min_contrast: 0.35,
            noise: 0.02,
            uppercase_prob: 0.1,
            crop_margin: [0.05, 0.2],
            context: 0.3,
        }
    }
}

fn check_range(name: &str, r: [f64; 2]) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
        return Err(Error::invalid(format!("{name} range {r:?} is empty")));
    }
    Ok(())
}

fn draw(rng: &mut impl Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.gen_range(r[0]..r[1])
    }
}

impl RenderStyle {
    pub fn validate(&self) -> Result<()> {
        check_range("glyph_scale", self.glyph_scale)?;
        check_range("spacing", self.spacing)?;
        check_range("curvature", self.curvature)?;
        check_range("rotation_deg", self.rotation_deg)?;
        check_range("crop_margin", self.crop_margin)?;
        check_range("background", self.background.map(f64::from))?;
        check_range("foreground", self.foreground.map(f64::from))?;
        if self.glyph_scale[0] <= 0.0 {
            return Err(Error::invalid("glyph scale must be positive"));
        }
        if self.curvature[0] < 0.0 || self.curvature[1] > 0.5 {
            return Err(Error::invalid("curvature amplitude must lie in [0, 0.5]"));
        }
        if !(0.0..=1.0).contains(&self.curved_prob) || !(0.0..=1.0).contains(&self.uppercase_prob) {
            return Err(Error::invalid("probabilities must lie in [0, 1]"));
        }
        if self.spacing[0] <= -1.0 {
            return Err(Error::invalid("spacing must keep glyphs from overlapping"));
        }
        if self.noise < 0.0 || self.context < 0.0 || self.crop_margin[0] < 0.0 {
            return Err(Error::invalid(
                "noise, context and margins must be non-negative",
            ));
        }
        Ok(())
    }

    /// A copy that always draws curved baselines with amplitude in `range`.
    pub fn curved(&self, range: [f64; 2]) -> Self {
        RenderStyle {
            curved_prob: 1.0,
            curvature: range,
            ..self.clone()
        }
    }
}

struct Placed {
    glyph: Glyph,
    class_id: u8,
    /// Top-left corner of the 8x8 cell, in text coordinates.
    cell_x: f64,
    cell_y: f64,
}

fn random_color(rng: &mut impl Rng, r: [f32; 2]) -> [f32; 3] {
    [0; 3].map(|_| {
        if r[0] == r[1] {
            r[0]
        } else {
            rng.gen_range(r[0]..r[1])
        }
    })
}

/// Render `word` centered on a background canvas with context around it.
pub fn render_scene(word: &str, style: &RenderStyle, seed: u64) -> Result<Scene> {
    style.validate()?;
    if word.chars().all(char::is_whitespace) {
        return Err(Error::invalid(format!(
            "word {word:?} has no renderable glyphs"
        )));
    }
    if word.chars().any(|c| c.is_control()) {
        return Err(Error::invalid(format!(
            "word {word:?} contains control characters"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let text: String = if rng.gen_bool(style.uppercase_prob) {
        if rng.gen_bool(0.5) {
            word.to_uppercase()
        } else {
            let mut cs = word.chars();
            cs.next()
                .map(|f| f.to_uppercase().chain(cs).collect())
                .unwrap_or_default()
        }
    } else {
        word.to_string()
    };
    // case mapping can change character counts for non-ASCII input
    let text = if text.chars().count() == word.chars().count() {
        text
    } else {
        word.to_string()
    };

    let scale = draw(&mut rng, style.glyph_scale);
    let spacing = draw(&mut rng, style.spacing);
    let fallback = glyph('?').expect("fallback glyph");
    let mut placed = Vec::new();
    let mut pen = 0.0;
    for (shown, orig) in text.chars().zip(word.chars()) {
        if orig.is_whitespace() {
            pen += 4.0 * scale;
            continue;
        }
        let g = glyph(shown).unwrap_or(fallback);
        placed.push(Placed {
            glyph: g,
            class_id: char_to_class(orig),
            cell_x: pen - g.cols.0 as f64 * scale,
            cell_y: 0.0,
        });
        pen += (g.ink_width() as f64 + 1.0 + spacing) * scale;
    }
    let text_w = pen - (1.0 + spacing) * scale;
    let text_h = CELL as f64 * scale;

    let amp = if rng.gen_bool(style.curved_prob) {
        draw(&mut rng, style.curvature)
    } else {
        0.0
    };
    let deflection = amp / (1.0 - amp) * text_h;
    let frown = rng.gen_bool(0.5);
    for p in &mut placed {
        let ink = p.glyph.cols;
        let cx = p.cell_x + (ink.0 as f64 + ink.1 as f64 + 1.0) * scale / 2.0;
        let arc = (std::f64::consts::PI * (cx / text_w).clamp(0.0, 1.0)).sin();
        p.cell_y = if frown {
            deflection * (1.0 - arc)
        } else {
            deflection * arc
        };
    }
    let block_h = text_h + deflection;

    let margins = [0; 4].map(|_| draw(&mut rng, style.crop_margin) * text_h);
    let crop_w = text_w + margins[0] + margins[2];
    let crop_h = block_h + margins[1] + margins[3];
    let pad_x = style.context * crop_w + 2.0;
    let pad_y = style.context * crop_h + 2.0;
    let origin_x = margins[0] + pad_x;
    let origin_y = margins[1] + pad_y;
    let width = (crop_w + 2.0 * pad_x).ceil() as usize;
    let height = (crop_h + 2.0 * pad_y).ceil() as usize;

    let bg = random_color(&mut rng, style.background);
    let mut fg = random_color(&mut rng, style.foreground);
    let mut tries = 0;
    while (RgbImage::luminance(fg) - RgbImage::luminance(bg)).abs() < style.min_contrast {
        tries += 1;
        if tries > 64 {
            fg = if RgbImage::luminance(bg) > 0.5 {
                [0.0; 3]
            } else {
                [1.0; 3]
            };
            break;
        }
        fg = random_color(&mut rng, style.foreground);
    }

    let mut image = RgbImage::new(width, height);
    let grad = [rng.gen_range(-0.12f32..0.12), rng.gen_range(-0.12f32..0.12)];
    for y in 0..height {
        for x in 0..width {
            let t = grad[0] * (x as f32 / width as f32 - 0.5)
                + grad[1] * (y as f32 / height as f32 - 0.5);
            image.set(x, y, bg.map(|c| (c + t).clamp(0.0, 1.0)));
        }
    }

    const SUB: usize = 4;
    let mut boxes = Vec::with_capacity(placed.len());
    for p in &placed {
        let cx0 = origin_x + p.cell_x;
        let cy0 = origin_y + p.cell_y;
        let span = CELL as f64 * scale;
        let (x_lo, x_hi) = (
            cx0.floor().max(0.0) as usize,
            ((cx0 + span).ceil() as usize).min(width),
        );
        let (y_lo, y_hi) = (
            cy0.floor().max(0.0) as usize,
            ((cy0 + span).ceil() as usize).min(height),
        );
        for y in y_lo..y_hi {
            for x in x_lo..x_hi {
                let mut hits = 0;
                for sy in 0..SUB {
                    let fy = ((y as f64 + (sy as f64 + 0.5) / SUB as f64) - cy0) / scale;
                    for sx in 0..SUB {
                        let fx = ((x as f64 + (sx as f64 + 0.5) / SUB as f64) - cx0) / scale;
                        if fx >= 0.0 && fy >= 0.0 && p.glyph.ink(fy as usize, fx as usize) {
                            hits += 1;
                        }
                    }
                }
                if hits > 0 {
                    let cov = hits as f32 / (SUB * SUB) as f32;
                    let cur = image.get(x, y);
                    image.set(x, y, [0, 1, 2].map(|c| cur[c] * (1.0 - cov) + fg[c] * cov));
                }
            }
        }
        let (c0, c1) = p.glyph.cols;
        let (r0, r1) = p.glyph.rows_range;
        boxes.push(CharBox {
            x_min: cx0 + c0 as f64 * scale,
            y_min: cy0 + r0 as f64 * scale,
            x_max: cx0 + (c1 + 1) as f64 * scale,
            y_max: cy0 + (r1 + 1) as f64 * scale,
            class_id: p.class_id,
        });
    }

    let mut canvas = Sample {
        image,
        word: word.to_string(),
        boxes,
    };
    let angle = draw(&mut rng, style.rotation_deg);
    if angle != 0.0 {
        let center = (origin_x + text_w / 2.0, origin_y + block_h / 2.0);
        canvas = rotate_about(&canvas, angle, center);
    }
    if style.noise > 0.0 {
        let normal = Normal::new(0.0, style.noise as f64).expect("finite noise");
        for v in &mut canvas.image.data {
            *v = (*v + normal.sample(&mut rng) as f32).clamp(0.0, 1.0);
        }
    }
    canvas.image.quantize();

    let ux0 = canvas
        .boxes
        .iter()
        .map(|b| b.x_min)
        .fold(f64::INFINITY, f64::min);
    let uy0 = canvas
        .boxes
        .iter()
        .map(|b| b.y_min)
        .fold(f64::INFINITY, f64::min);
    let ux1 = canvas
        .boxes
        .iter()
        .map(|b| b.x_max)
        .fold(f64::NEG_INFINITY, f64::max);
    let uy1 = canvas
        .boxes
        .iter()
        .map(|b| b.y_max)
        .fold(f64::NEG_INFINITY, f64::max);
    let crop = [
        (ux0 - margins[0]).floor().max(0.0) as usize,
        (uy0 - margins[1]).floor().max(0.0) as usize,
        ((ux1 + margins[2]).ceil() as usize).min(width),
        ((uy1 + margins[3]).ceil() as usize).min(height),
    ];
    Ok(Scene {
        canvas,
        crop,
        curvature: amp,
    })
}

/// Render `word` and crop it the way a text detector would.
pub fn render_word(word: &str, style: &RenderStyle, seed: u64) -> Result<Sample> {
    Ok(render_scene(word, style, seed)?.tight())
}
