//! Test-time resizing, recognition, lexicons, accuracy reports and
//! prediction-map visualization.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Model;
use crate::synth::{read_dataset, write_dataset, Perturbation, Record, RgbImage};
use crate::word::{ProbMap, WordFormer, WordResult};

/// Height of every test-time input.
pub const TEST_HEIGHT: usize = 64;
/// Width used for images that are not much wider than tall.
pub const TEST_MIN_WIDTH: usize = 256;

/// Test width before rounding: `W * 64 / H` for images more than four times
/// wider than tall, 256 otherwise. The flag tells which branch was taken.
pub fn test_width_exact(height: usize, width: usize) -> (f64, bool) {
    if width > 4 * height {
        (width as f64 * TEST_HEIGHT as f64 / height as f64, true)
    } else {
        (TEST_MIN_WIDTH as f64, false)
    }
}

/// `(height, width)` the network sees: the exact test width rounded to the
/// nearest multiple of 8 (at least 8).
pub fn test_size(height: usize, width: usize) -> (usize, usize) {
    let (w, _) = test_width_exact(height.max(1), width.max(1));
    let w8 = ((w / 8.0).round() as usize).max(1) * 8;
    (TEST_HEIGHT, w8)
}

pub fn resize_for_test(img: &RgbImage) -> RgbImage {
    let (h, w) = test_size(img.height, img.width);
    img.resize(w, h)
}

/// Lowercase and drop everything that is not an ASCII letter or digit.
pub fn normalize_for_eval(word: &str) -> String {
    word.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

/// Edit distance with unit insert, delete and substitute costs.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// A closed vocabulary of normalized, unique words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    words: Vec<String>,
}

impl Lexicon {
    pub fn new<S: AsRef<str>>(words: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut words: Vec<String> = words
            .into_iter()
            .map(|w| normalize_for_eval(w.as_ref()))
            .filter(|w| !w.is_empty())
            .collect();
        words.sort();
        words.dedup();
        if words.is_empty() {
            return Err(Error::invalid("lexicon is empty"));
        }
        Ok(Lexicon { words })
    }

    /// One word per line.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Lexicon::new(text.lines())
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// The closest word to `pred` by edit distance; ties go to the
    /// lexicographically smallest word.
    pub fn best_match(&self, pred: &str) -> &str {
        let pred = normalize_for_eval(pred);
        // words are sorted, so the first minimum is the smallest
        self.words
            .iter()
            .min_by_key(|w| levenshtein(&pred, w))
            .expect("lexicon is non-empty")
    }
}

/// One recognized character in input-image coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharOut {
    #[serde(rename = "char")]
    pub ch: char,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub conf: f64,
}

/// Serializable recognition result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub word: String,
    pub chars: Vec<CharOut>,
}

/// Everything produced for one image.
#[derive(Debug, Clone)]
pub struct Recognition {
    pub result: WordResult,
    pub map: ProbMap,
    /// The resized network input.
    pub input: RgbImage,
    pub prediction: Prediction,
}

/// Resize, run the network and form the word. Character boxes are mapped
/// from the half-resolution map back to `img` coordinates.
pub fn recognize(model: &Model<f32>, img: &RgbImage, former: &WordFormer) -> Result<Recognition> {
    let input = resize_for_test(img);
    let map = model.predict(&input.to_tensor())?;
    let result = former.form(&map);
    let sx = img.width as f64 / map.width as f64;
    let sy = img.height as f64 / map.height as f64;
    let chars = result
        .regions
        .iter()
        .map(|r| CharOut {
            ch: r.character(),
            bbox: [
                r.bbox[0] as f64 * sx,
                r.bbox[1] as f64 * sy,
                r.bbox[2] as f64 * sx,
                r.bbox[3] as f64 * sy,
            ],
            conf: r.confidence,
        })
        .collect();
    let prediction = Prediction {
        word: result.word.clone(),
        chars,
    };
    Ok(Recognition {
        result,
        map,
        input,
        prediction,
    })
}

/// Whether the prediction matches `truth` after normalization (and after
/// snapping to the lexicon when one is given).
pub fn is_correct(pred: &str, truth: &str, lexicon: Option<&Lexicon>) -> bool {
    let pred = match lexicon {
        Some(lex) => lex.best_match(pred).to_string(),
        None => normalize_for_eval(pred),
    };
    pred == normalize_for_eval(truth)
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start {jobs} workers: {e}")))
}

/// Word accuracy over `(image, truth)` pairs.
pub fn accuracy(
    model: &Model<f32>,
    items: &[(RgbImage, String)],
    former: &WordFormer,
    lexicon: Option<&Lexicon>,
    jobs: usize,
) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty dataset"));
    }
    let hits: Vec<bool> = pool(jobs)?.install(|| {
        items
            .par_iter()
            .map(|(img, truth)| {
                Ok(is_correct(
                    &recognize(model, img, former)?.result.word,
                    truth,
                    lexicon,
                ))
            })
            .collect::<Result<Vec<bool>>>()
    })?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / items.len() as f64)
}

/// Accuracy under one perturbation relative to the clean accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRow {
    pub ac: f64,
    /// `ac - ac_orig`.
    pub gap: f64,
    /// `-gap / ac_orig`; absent when the clean accuracy is zero.
    pub ratio: Option<f64>,
}

impl PerturbationRow {
    pub fn new(ac_orig: f64, ac: f64) -> Self {
        let gap = ac - ac_orig;
        let ratio = (ac_orig > 0.0).then(|| -gap / ac_orig);
        PerturbationRow { ac, gap, ratio }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub accuracy: f64,
    pub perturbations: BTreeMap<String, PerturbationRow>,
}

impl EvalReport {
    /// Plain-text table in the column order of the perturbation list.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "dataset: {}", self.dataset);
        let _ = writeln!(s, "{:<8} {:>8} {:>8} {:>8}", "set", "ac", "gap", "ratio");
        let _ = writeln!(
            s,
            "{:<8} {:>8.4} {:>8} {:>8}",
            "clean", self.accuracy, "-", "-"
        );
        for p in Perturbation::ALL {
            if let Some(r) = self.perturbations.get(p.name()) {
                let ratio = r
                    .ratio
                    .map_or("-".to_string(), |v| format!("{:.2}%", 100.0 * v));
                let _ = writeln!(
                    s,
                    "{:<8} {:>8.4} {:>+8.4} {:>8}",
                    p.name(),
                    r.ac,
                    r.gap,
                    ratio
                );
            }
        }
        s
    }
}

/// Seed for a record's random perturbation, derived from its pixels so
/// results do not depend on dataset order.
pub fn record_seed(seed: u64, record: &Record) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for v in &record.sample.image.data {
        h ^= v.to_bits() as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    for b in record.sample.word.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Apply a perturbation to every record.
pub fn perturb_records(records: &[Record], p: Perturbation, seed: u64) -> Result<Vec<Record>> {
    records
        .par_iter()
        .map(|r| {
            let scene = r.scene();
            let sample = p.apply(&r.sample, scene.as_ref(), record_seed(seed, r))?;
            Ok(Record {
                sample,
                context: None,
                curvature: r.curvature,
            })
        })
        .collect()
}

/// Write a perturbed copy of the dataset in `input` to `output`.
pub fn perturb_dataset(input: &Path, output: &Path, p: Perturbation, seed: u64) -> Result<()> {
    let records = read_dataset(input)?;
    if p.needs_context() && records.iter().any(|r| r.context.is_none()) {
        return Err(Error::invalid(format!(
            "perturbation {p} needs context images, which {} lacks",
            input.display()
        )));
    }
    write_dataset(output, &perturb_records(&records, p, seed)?)
}

/// Clean accuracy plus one row per requested perturbation.
pub fn evaluate(
    model: &Model<f32>,
    name: &str,
    records: &[Record],
    perturbations: &[Perturbation],
    lexicon: Option<&Lexicon>,
    former: &WordFormer,
    seed: u64,
    jobs: usize,
) -> Result<EvalReport> {
    let items = |rs: &[Record]| -> Vec<(RgbImage, String)> {
        rs.iter()
            .map(|r| (r.sample.image.clone(), r.sample.word.clone()))
            .collect()
    };
    let ac_orig = accuracy(model, &items(records), former, lexicon, jobs)?;
    let mut rows = BTreeMap::new();
    for &p in perturbations {
        if p.needs_context() && records.iter().any(|r| r.context.is_none()) {
            return Err(Error::invalid(format!(
                "perturbation {p} needs context images, which this dataset lacks"
            )));
        }
        let perturbed = pool(jobs)?.install(|| perturb_records(records, p, seed))?;
        let ac = accuracy(model, &items(&perturbed), former, lexicon, jobs)?;
        rows.insert(p.name().to_string(), PerturbationRow::new(ac_orig, ac));
    }
    Ok(EvalReport {
        dataset: name.to_string(),
        accuracy: ac_orig,
        perturbations: rows,
    })
}

/// Fixed color for each class: black background, well-spread hues for the
/// rest.
pub fn palette(class: usize) -> [u8; 3] {
    if class == 0 {
        return [0, 0, 0];
    }
    let hue = (class as f64 * 0.618_033_988_75).fract() * 6.0;
    let sector = hue.floor() as usize;
    let f = hue - sector as f64;
    let (v, s) = (1.0, if class % 2 == 0 { 0.65 } else { 0.95 });
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    let rgb = match sector {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [rgb.0, rgb.1, rgb.2].map(|c| (c * 255.0).round() as u8)
}

/// The network input beside its argmax class map (upsampled to input size).
pub fn visualization(rec: &Recognition) -> RgbImage {
    let (w, h) = (rec.input.width, rec.input.height);
    let mut out = RgbImage::new(2 * w, h);
    for y in 0..h {
        for x in 0..w {
            out.set(x, y, rec.input.get(x, y));
            let my = (y * rec.map.height / h).min(rec.map.height - 1);
            let mx = (x * rec.map.width / w).min(rec.map.width - 1);
            let c = palette(rec.map.argmax(my, mx));
            out.set(w + x, y, c.map(|v| v as f32 / 255.0));
        }
    }
    out
}
