//! Synthetic training and evaluation data.

mod augment;
mod dataset;
pub mod font;
mod image;
mod perturb;
mod render;
pub mod words;

pub use self::image::{warp, Homography, RgbImage};
pub use augment::{augment, resize_sample, rotate, rotate_in_place, AugmentParams};
pub use dataset::{
    read_dataset, read_entries, write_dataset, write_entries, ContextRef, Entry, EntryChar, Record,
    MANIFEST,
};
pub use perturb::{
    perturb_expand_crop, perturb_pad, perturb_random_stretch, stretch_with, ExpandMode,
    Perturbation,
};
pub use render::{render_scene, render_word, RenderStyle};
pub use words::random_word;

use crate::error::{Error, Result};
use crate::geometry::CharBox;

/// A word image with one box per non-whitespace character, in reading order.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: RgbImage,
    pub word: String,
    pub boxes: Vec<CharBox>,
}

impl Sample {
    pub fn validate(&self) -> Result<()> {
        let chars = self.word.chars().filter(|c| !c.is_whitespace()).count();
        if chars != self.boxes.len() {
            return Err(Error::invalid(format!(
                "word {:?} has {chars} characters but {} boxes",
                self.word,
                self.boxes.len()
            )));
        }
        let (w, h) = (self.image.width as f64, self.image.height as f64);
        for b in &self.boxes {
            b.validate()?;
            if b.x_min < 0.0 || b.y_min < 0.0 || b.x_max > w || b.y_max > h {
                return Err(Error::invalid(format!("box {b:?} outside {w}x{h} image")));
            }
        }
        Ok(())
    }

    /// Keep only the boxes (and their characters) for which `keep` is true.
    pub(crate) fn retain_boxes(&mut self, keep: &[bool]) {
        let mut idx = 0;
        let word: String = self
            .word
            .chars()
            .filter(|c| {
                if c.is_whitespace() {
                    return true;
                }
                idx += 1;
                keep[idx - 1]
            })
            .collect();
        let mut it = keep.iter();
        self.boxes.retain(|_| *it.next().unwrap());
        self.word = word;
    }
}

/// A word rendered on a larger canvas with surrounding background, plus the
/// integer crop `[x0, y0, x1, y1)` a detector would return for it.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub canvas: Sample,
    pub crop: [usize; 4],
    /// Baseline arc amplitude as a fraction of text height; 0 when straight.
    pub curvature: f64,
}

impl Scene {
    /// The word crop with boxes in crop coordinates.
    pub fn tight(&self) -> Sample {
        crop_sample(&self.canvas, self.crop)
    }
}

/// Crop a sample to `[x0, y0, x1, y1)`, translating and clamping its boxes.
/// Characters whose box leaves nothing inside the crop are dropped.
pub(crate) fn crop_sample(s: &Sample, crop: [usize; 4]) -> Sample {
    let [x0, y0, x1, y1] = crop;
    let image = s.image.crop(x0, y0, x1, y1);
    let (w, h) = ((x1 - x0) as f64, (y1 - y0) as f64);
    let moved: Vec<Option<CharBox>> = s
        .boxes
        .iter()
        .map(|b| b.translate(-(x0 as f64), -(y0 as f64)).clamp_to(w, h))
        .collect();
    let keep: Vec<bool> = moved.iter().map(Option::is_some).collect();
    let mut out = Sample {
        image,
        word: s.word.clone(),
        boxes: s.boxes.clone(),
    };
    out.retain_boxes(&keep);
    out.boxes = moved.into_iter().flatten().collect();
    out
}

/// Render `count` random words as dataset records. Record `i` depends only on
/// `(seed, i)`.
pub fn synthesize(
    count: usize,
    style: &RenderStyle,
    random_word_prob: f64,
    seed: u64,
) -> Result<Vec<Record>> {
    use rand::SeedableRng;
    use rayon::prelude::*;
    style.validate()?;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let word = random_word(&mut rng, random_word_prob);
            let scene_seed = rand::Rng::gen::<u64>(&mut rng);
            Ok(Record::from_scene(&render_scene(&word, style, scene_seed)?))
        })
        .collect()
}
