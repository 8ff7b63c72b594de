//! Character classes, character boxes and ground-truth rasterization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of output classes: background, 10 digits, 26 letters, 1 special.
pub const NUM_CLASSES: usize = 38;
/// Class index of the background.
pub const BACKGROUND: u8 = 0;
/// Class index shared by every glyph outside `[0-9a-z]`.
pub const SPECIAL: u8 = 37;
/// Character emitted for the special class.
pub const SPECIAL_CHAR: char = '□';

/// Shrink ratio used for the character-attention targets.
pub const ATTENTION_SHRINK: f64 = 0.5;
/// Shrink ratio used for the character-prediction target.
pub const PREDICTION_SHRINK: f64 = 0.25;

/// Mapping between characters and the 38 class indices.
///
/// Index 0 is background, 1–10 are `'0'..='9'`, 11–36 are `'a'..='z'`
/// (upper case folds onto lower case) and 37 is the special class.
#[derive(Debug, Clone, Copy, Default)]
pub struct Alphabet;

impl Alphabet {
    pub const fn size(&self) -> usize {
        NUM_CLASSES
    }

    pub fn class_of(&self, ch: char) -> u8 {
        char_to_class(ch)
    }

    pub fn char_of(&self, class: u8) -> Option<char> {
        class_to_char(class)
    }
}

/// Total mapping from a character to its class index (never 0).
pub fn char_to_class(ch: char) -> u8 {
    match ch {
        '0'..='9' => 1 + (ch as u8 - b'0'),
        'a'..='z' => 11 + (ch as u8 - b'a'),
        'A'..='Z' => 11 + (ch as u8 - b'A'),
        _ => SPECIAL,
    }
}

/// Representative character of a class; `None` for background and
/// out-of-range indices.
pub fn class_to_char(class: u8) -> Option<char> {
    match class {
        1..=10 => Some((b'0' + class - 1) as char),
        11..=36 => Some((b'a' + class - 11) as char),
        SPECIAL => Some(SPECIAL_CHAR),
        _ => None,
    }
}

/// Axis-aligned character rectangle in image pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub class_id: u8,
}

impl CharBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64, class_id: u8) -> Result<Self> {
        let b = CharBox {
            x_min,
            y_min,
            x_max,
            y_max,
            class_id,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let coords = [self.x_min, self.y_min, self.x_max, self.y_max];
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite box {self:?}")));
        }
        if !(self.x_min < self.x_max && self.y_min < self.y_max) {
            return Err(Error::invalid(format!("degenerate box {self:?}")));
        }
        if self.class_id == BACKGROUND || self.class_id as usize >= NUM_CLASSES {
            return Err(Error::invalid(format!(
                "box class {} outside 1..{}",
                self.class_id,
                NUM_CLASSES - 1
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        )
    }

    pub fn contains(&self, other: &CharBox) -> bool {
        self.x_min <= other.x_min
            && self.y_min <= other.y_min
            && other.x_max <= self.x_max
            && other.y_max <= self.y_max
    }

    pub fn translate(&self, dx: f64, dy: f64) -> CharBox {
        CharBox {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
            class_id: self.class_id,
        }
    }

    pub fn scale(&self, sx: f64, sy: f64) -> CharBox {
        CharBox {
            x_min: self.x_min * sx,
            y_min: self.y_min * sy,
            x_max: self.x_max * sx,
            y_max: self.y_max * sy,
            class_id: self.class_id,
        }
    }

    /// Intersection with `[0, width] x [0, height]`; `None` if nothing of
    /// positive area remains.
    pub fn clamp_to(&self, width: f64, height: f64) -> Option<CharBox> {
        let b = CharBox {
            x_min: self.x_min.clamp(0.0, width),
            y_min: self.y_min.clamp(0.0, height),
            x_max: self.x_max.clamp(0.0, width),
            y_max: self.y_max.clamp(0.0, height),
            class_id: self.class_id,
        };
        (b.x_min < b.x_max && b.y_min < b.y_max).then_some(b)
    }
}

/// Contract a box about its center so that width and height scale by `r`.
pub fn shrink_box(b: &CharBox, r: f64) -> Result<CharBox> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::invalid(format!(
            "shrink ratio must be positive, got {r}"
        )));
    }
    b.validate()?;
    let w = b.x_max - b.x_min;
    let h = b.y_max - b.y_min;
    Ok(CharBox {
        x_min: (b.x_min + b.x_max - w * r) / 2.0,
        y_min: (b.y_min + b.y_max - h * r) / 2.0,
        x_max: (b.x_min + b.x_max + w * r) / 2.0,
        y_max: (b.y_min + b.y_max + h * r) / 2.0,
        class_id: b.class_id,
    })
}

/// Dense per-pixel class map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl LabelMap {
    pub fn zeros(height: usize, width: usize) -> Self {
        LabelMap {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&v| v != BACKGROUND).count()
    }

    /// Paint `value` into every pixel whose center lies in `b` (half-open on
    /// the max side). Boxes too small to cover a pixel center still mark the
    /// pixel containing their center.
    fn paint(&mut self, b: &CharBox, value: u8) {
        if self.height == 0 || self.width == 0 {
            return;
        }
        let x0 = (b.x_min - 0.5).ceil().max(0.0) as usize;
        let y0 = (b.y_min - 0.5).ceil().max(0.0) as usize;
        let x1 = ((b.x_max - 0.5).ceil().max(0.0) as usize).min(self.width);
        let y1 = ((b.y_max - 0.5).ceil().max(0.0) as usize).min(self.height);
        if x0 >= x1 || y0 >= y1 {
            let (cx, cy) = b.center();
            let x = (cx.floor().max(0.0) as usize).min(self.width - 1);
            let y = (cy.floor().max(0.0) as usize).min(self.height - 1);
            self.data[y * self.width + x] = value;
            return;
        }
        for y in y0..y1 {
            self.data[y * self.width + x0..y * self.width + x1].fill(value);
        }
    }
}

/// Ground truth for one image: the prediction target at half resolution and
/// a binary attention target for each attention stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelBundle {
    pub pred_gt: LabelMap,
    pub attn_gt: Vec<LabelMap>,
}

/// Rasterize character boxes into prediction and attention targets.
///
/// `image_dims` and every entry of `stage_dims` are `(height, width)`. The
/// prediction map is `(H/2, W/2)`. Boxes are clamped to the image, shrunk,
/// scaled to each map and painted in list order.
pub fn rasterize_labels(
    boxes: &[CharBox],
    image_dims: (usize, usize),
    stage_dims: &[(usize, usize)],
) -> Result<LabelBundle> {
    let (h, w) = image_dims;
    if h == 0 || w == 0 {
        return Err(Error::invalid("image dimensions must be positive"));
    }
    let mut pred_gt = LabelMap::zeros(h / 2, w / 2);
    let mut attn_gt: Vec<LabelMap> = stage_dims
        .iter()
        .map(|&(sh, sw)| LabelMap::zeros(sh, sw))
        .collect();
    for b in boxes {
        b.validate()?;
        let Some(clamped) = b.clamp_to(w as f64, h as f64) else {
            continue;
        };
        let pred_box = shrink_box(&clamped, PREDICTION_SHRINK)?;
        pred_gt.paint(
            &pred_box.scale(
                pred_gt.width as f64 / w as f64,
                pred_gt.height as f64 / h as f64,
            ),
            b.class_id,
        );
        let attn_box = shrink_box(&clamped, ATTENTION_SHRINK)?;
        for map in &mut attn_gt {
            let scaled = attn_box.scale(map.width as f64 / w as f64, map.height as f64 / h as f64);
            map.paint(&scaled, 1);
        }
    }
    Ok(LabelBundle { pred_gt, attn_gt })
}
