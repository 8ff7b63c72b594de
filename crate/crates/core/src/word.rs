//! Word formation: from a per-pixel character probability map to a string
//! with character locations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::class_to_char;
use crate::nn::{ops, Float, Tensor};

/// Binarization threshold applied to the character probability map.
pub const DEFAULT_THRESHOLD: f64 = 240.0 / 255.0;
/// Components smaller than this many pixels are discarded as noise.
pub const MIN_REGION_PIXELS: usize = 2;

/// Per-pixel softmax-normalized class probabilities, stored `[h, w, C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub data: Vec<f32>,
}

impl ProbMap {
    pub fn new(height: usize, width: usize, classes: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * classes {
            return Err(Error::invalid(format!(
                "probability map {height}x{width}x{classes} needs {} values, got {}",
                height * width * classes,
                data.len()
            )));
        }
        if classes < 2 {
            return Err(Error::invalid("probability map needs at least 2 classes"));
        }
        Ok(ProbMap {
            height,
            width,
            classes,
            data,
        })
    }

    /// All-background map.
    pub fn background(height: usize, width: usize, classes: usize) -> Self {
        let mut data = vec![0.0; height * width * classes];
        for p in data.chunks_mut(classes) {
            p[0] = 1.0;
        }
        ProbMap {
            height,
            width,
            classes,
            data,
        }
    }

    /// Channel softmax of `[C, h, w]` logits.
    pub fn from_logits<T: Float>(logits: &Tensor<T>) -> Result<Self> {
        let (c, h, w) = logits.chw()?;
        let probs = ops::channel_softmax(logits)?;
        let n = h * w;
        let mut data = vec![0.0f32; n * c];
        for ch in 0..c {
            for (p, v) in probs.data()[ch * n..(ch + 1) * n].iter().enumerate() {
                data[p * c + ch] = v.to_f64() as f32;
            }
        }
        ProbMap::new(h, w, c, data)
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let i = (y * self.width + x) * self.classes;
        &self.data[i..i + self.classes]
    }

    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [f32] {
        let i = (y * self.width + x) * self.classes;
        &mut self.data[i..i + self.classes]
    }

    pub fn argmax(&self, y: usize, x: usize) -> usize {
        let px = self.pixel(y, x);
        (0..self.classes).fold(0, |best, c| if px[c] > px[best] { c } else { best })
    }

    /// Left-right mirror image.
    pub fn flip_horizontal(&self) -> ProbMap {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.pixel_mut(y, self.width - 1 - x)
                    .copy_from_slice(self.pixel(y, x));
            }
        }
        out
    }
}

/// Which per-pixel score is compared against the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Largest probability among the character classes.
    #[default]
    MaxChar,
    /// One minus the background probability.
    NotBackground,
}

/// Binary foreground mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }
}

pub fn binarize(m: &ProbMap, threshold: f64, mode: ThresholdMode) -> Mask {
    let data = m
        .data
        .chunks(m.classes)
        .map(|px| {
            let score = match mode {
                ThresholdMode::MaxChar => px[1..].iter().fold(0.0f32, |a, &b| a.max(b)) as f64,
                ThresholdMode::NotBackground => 1.0 - px[0] as f64,
            };
            score >= threshold
        })
        .collect();
    Mask {
        height: m.height,
        width: m.width,
        data,
    }
}

/// Maximal 8-connected foreground components, each listed in row-major
/// pixel order, components ordered by their first pixel.
pub fn connected_components(mask: &Mask) -> Vec<Vec<(usize, usize)>> {
    let (h, w) = (mask.height, mask.width);
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !mask.data[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut comp = Vec::new();
        while let Some(i) = stack.pop() {
            let (y, x) = (i / w, i % w);
            comp.push(i);
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    if mask.data[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        comp.sort_unstable();
        out.push(comp.into_iter().map(|i| (i / w, i % w)).collect());
    }
    out
}

/// One recognized character.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CharRegion {
    /// `(row, column)` pixels at map resolution.
    pub pixels: Vec<(usize, usize)>,
    pub class_id: u8,
    /// Mean probability of every class over the region.
    pub mean_scores: Vec<f64>,
    /// `[x_min, y_min, x_max, y_max]` in map pixels, max exclusive.
    pub bbox: [usize; 4],
    pub centroid_x: f64,
    /// Mean score of the winning class.
    pub confidence: f64,
}

impl CharRegion {
    pub fn character(&self) -> char {
        class_to_char(self.class_id).unwrap_or(crate::geometry::SPECIAL_CHAR)
    }
}

/// Vote a class for a region: the character class (never background) with
/// the largest mean probability; ties go to the smaller index.
pub fn assign_class(pixels: &[(usize, usize)], m: &ProbMap) -> Result<CharRegion> {
    if pixels.is_empty() {
        return Err(Error::invalid("cannot classify an empty region"));
    }
    let mut sums = vec![0.0f64; m.classes];
    let mut bbox = [usize::MAX, usize::MAX, 0, 0];
    let mut sx = 0.0;
    for &(y, x) in pixels {
        if y >= m.height || x >= m.width {
            return Err(Error::invalid(format!("pixel ({y}, {x}) outside the map")));
        }
        for (s, &p) in sums.iter_mut().zip(m.pixel(y, x)) {
            *s += p as f64;
        }
        bbox[0] = bbox[0].min(x);
        bbox[1] = bbox[1].min(y);
        bbox[2] = bbox[2].max(x + 1);
        bbox[3] = bbox[3].max(y + 1);
        sx += x as f64;
    }
    let n = pixels.len() as f64;
    let means: Vec<f64> = sums.iter().map(|s| s / n).collect();
    let mut best = 1;
    for c in 2..m.classes {
        if means[c] > means[best] {
            best = c;
        }
    }
    Ok(CharRegion {
        pixels: pixels.to_vec(),
        class_id: best as u8,
        confidence: means[best],
        mean_scores: means,
        bbox,
        centroid_x: sx / n,
    })
}

/// Decoded word plus its character regions in reading order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WordResult {
    pub word: String,
    pub regions: Vec<CharRegion>,
}

/// Word formation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WordFormer {
    pub threshold: f64,
    pub mode: ThresholdMode,
    pub min_region_pixels: usize,
}

impl Default for WordFormer {
    fn default() -> Self {
        WordFormer {
            threshold: DEFAULT_THRESHOLD,
            mode: ThresholdMode::MaxChar,
            min_region_pixels: MIN_REGION_PIXELS,
        }
    }
}

impl WordFormer {
    pub fn form(&self, m: &ProbMap) -> WordResult {
        let mask = binarize(m, self.threshold, self.mode);
        let mut regions: Vec<CharRegion> = connected_components(&mask)
            .into_iter()
            .filter(|c| c.len() >= self.min_region_pixels)
            .map(|c| assign_class(&c, m).expect("component pixels are in bounds"))
            .collect();
        regions.sort_by(|a, b| a.centroid_x.total_cmp(&b.centroid_x));
        let word = regions.iter().map(CharRegion::character).collect();
        WordResult { word, regions }
    }
}

/// Word formation with the default threshold and connectivity.
pub fn form_word(m: &ProbMap) -> WordResult {
    WordFormer::default().form(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map_with(h: usize, w: usize, cells: &[(usize, usize, usize, f32)]) -> ProbMap {
        let mut m = ProbMap::background(h, w, 38);
        for &(y, x, class, p) in cells {
            let px = m.pixel_mut(y, x);
            px.fill(0.0);
            px[class] = p;
            px[0] = 1.0 - p;
        }
        m
    }

    #[test]
    fn binarize_threshold_boundary() {
        let m = map_with(1, 3, &[(0, 1, 11, 0.95), (0, 2, 11, 0.94)]);
        let mask = binarize(&m, DEFAULT_THRESHOLD, ThresholdMode::MaxChar);
        assert_eq!(mask.data, vec![false, true, false]);
    }

    #[test]
    fn diagonal_pixels_connect() {
        let mask = Mask {
            height: 3,
            width: 3,
            data: vec![true, false, true, false, true, false, true, false, true],
        };
        let comps = connected_components(&mask);
        assert_eq!(comps.len(), 1);
        assert_eq!(comps[0].len(), 5);
        let empty = Mask {
            height: 2,
            width: 2,
            data: vec![false; 4],
        };
        assert!(connected_components(&empty).is_empty());
    }

    #[test]
    fn class_vote_by_mean() {
        let mut m = ProbMap::background(1, 2, 38);
        m.pixel_mut(0, 0).copy_from_slice(&{
            let mut v = vec![0.0; 38];
            v[12] = 0.5;
            v[13] = 0.8;
            v
        });
        m.pixel_mut(0, 1).copy_from_slice(&{
            let mut v = vec![0.0; 38];
            v[12] = 0.9;
            v[13] = 0.1;
            v
        });
        let r = assign_class(&[(0, 0), (0, 1)], &m).unwrap();
        assert_eq!(r.class_id, 12);
        assert!((r.mean_scores[12] - 0.7).abs() < 1e-6);
        assert!((r.mean_scores[13] - 0.45).abs() < 1e-6);
        assert!(assign_class(&[], &m).is_err());
    }

    #[test]
    fn uniform_region_and_ties() {
        let m = map_with(1, 2, &[(0, 0, 12, 0.96), (0, 1, 12, 0.96)]);
        let r = assign_class(&[(0, 0), (0, 1)], &m).unwrap();
        assert_eq!(r.class_id, 12);
        assert!((r.confidence - 0.96).abs() < 1e-6);
        let mut m = ProbMap::background(1, 1, 38);
        let px = m.pixel_mut(0, 0);
        px.fill(0.0);
        px[11] = 0.5;
        px[12] = 0.5;
        assert_eq!(assign_class(&[(0, 0)], &m).unwrap().class_id, 11);
    }

    #[test]
    fn two_blobs_read_left_to_right() {
        let c = crate::geometry::char_to_class('c') as usize;
        let a = crate::geometry::char_to_class('a') as usize;
        let mut cells = Vec::new();
        for y in 1..3 {
            for x in 2..4 {
                cells.push((y, x, c, 0.99));
            }
            for x in 6..8 {
                cells.push((y, x, a, 0.99));
            }
        }
        let m = map_with(4, 10, &cells);
        let r = form_word(&m);
        assert_eq!(r.word, "ca");
        assert_eq!(r.regions[0].centroid_x, 2.5);
        assert_eq!(r.regions[1].centroid_x, 6.5);
        assert_eq!(r.regions[1].bbox, [6, 1, 8, 3]);
        assert_eq!(form_word(&ProbMap::background(4, 10, 38)).word, "");
    }

    #[test]
    fn special_class_and_noise() {
        let m = map_with(
            2,
            8,
            &[(0, 0, 37, 0.99), (1, 0, 37, 0.99), (0, 5, 11, 0.99)],
        );
        let r = form_word(&m);
        assert_eq!(r.word, "□");
    }

    #[test]
    fn from_logits_normalizes() {
        let logits = Tensor::from_vec(&[3, 1, 2], vec![0.0f32, 1.0, 2.0, 0.0, -1.0, 5.0]).unwrap();
        let m = ProbMap::from_logits(&logits).unwrap();
        for y in 0..1 {
            for x in 0..2 {
                let s: f32 = m.pixel(y, x).iter().sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
        assert_eq!(m.argmax(0, 0), 1);
        assert_eq!(m.argmax(0, 1), 2);
    }
}
