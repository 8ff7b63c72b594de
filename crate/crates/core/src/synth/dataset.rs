use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CharBox;

use super::{RgbImage, Sample, Scene};

/// Manifest file name inside a dataset directory.
pub const MANIFEST: &str = "labels.jsonl";

/// One character annotation in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryChar {
    pub class: u8,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
}

/// One manifest line. `context` and `crop` are present when the word was
/// cut from a larger canvas that is stored alongside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub image: String,
    pub word: String,
    pub chars: Vec<EntryChar>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop: Option<[usize; 4]>,
    /// Baseline curvature the word was rendered with, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curvature: Option<f64>,
}

/// A labelled word crop, optionally with the canvas it was cut from.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub sample: Sample,
    pub context: Option<ContextRef>,
    pub curvature: Option<f64>,
}

/// The canvas around a word and the crop rectangle `[x0, y0, x1, y1)` of the
/// word inside it.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextRef {
    pub image: RgbImage,
    pub crop: [usize; 4],
}

impl Record {
    pub fn from_scene(scene: &Scene) -> Self {
        Record {
            sample: scene.tight(),
            context: Some(ContextRef {
                image: scene.canvas.image.clone(),
                crop: scene.crop,
            }),
            curvature: Some(scene.curvature),
        }
    }

    /// The surrounding scene, with the crop's boxes placed on the canvas.
    pub fn scene(&self) -> Option<Scene> {
        let ctx = self.context.as_ref()?;
        let (dx, dy) = (ctx.crop[0] as f64, ctx.crop[1] as f64);
        Some(Scene {
            canvas: Sample {
                image: ctx.image.clone(),
                word: self.sample.word.clone(),
                boxes: self
                    .sample
                    .boxes
                    .iter()
                    .map(|b| b.translate(dx, dy))
                    .collect(),
            },
            crop: ctx.crop,
            curvature: self.curvature.unwrap_or(0.0),
        })
    }
}

/// Write records as `images/NNNNNN.png`, `context/NNNNNN.png` and the
/// manifest. Existing files with the same names are replaced.
pub fn write_dataset(dir: &Path, records: &[Record]) -> Result<()> {
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    if records.iter().any(|r| r.context.is_some()) {
        let ctx = dir.join("context");
        fs::create_dir_all(&ctx).map_err(|e| Error::io(&ctx, e))?;
    }
    let entries = records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            r.sample.validate()?;
            let name = format!("{:06}.png", i + 1);
            let image = format!("images/{name}");
            r.sample.image.save_png(&dir.join(&image))?;
            let (context, crop) = match &r.context {
                Some(c) => {
                    let rel = format!("context/{name}");
                    c.image.save_png(&dir.join(&rel))?;
                    (Some(rel), Some(c.crop))
                }
                None => (None, None),
            };
            Ok(Entry {
                image,
                word: r.sample.word.clone(),
                chars: r
                    .sample
                    .boxes
                    .iter()
                    .map(|b| EntryChar {
                        class: b.class_id,
                        bbox: [b.x_min, b.y_min, b.x_max, b.y_max],
                    })
                    .collect(),
                context,
                crop,
                curvature: r.curvature,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_entries(&dir.join(MANIFEST), &entries)
}

pub fn write_entries(path: &Path, entries: &[Entry]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for e in entries {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parse a manifest. Blank lines are skipped; a missing manifest is an
/// empty dataset.
pub fn read_entries(path: &Path) -> Result<Vec<Entry>> {
    let file = match fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let manifest_err = |message: String| Error::Manifest {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let entry: Entry = serde_json::from_str(&line).map_err(|e| manifest_err(e.to_string()))?;
        let chars = entry.word.chars().filter(|c| !c.is_whitespace()).count();
        if chars != entry.chars.len() {
            return Err(manifest_err(format!(
                "word {:?} has {chars} characters but {} boxes",
                entry.word,
                entry.chars.len()
            )));
        }
        if entry.context.is_some() != entry.crop.is_some() {
            return Err(manifest_err("context and crop must appear together".into()));
        }
        for c in &entry.chars {
            let [x0, y0, x1, y1] = c.bbox;
            CharBox::new(x0, y0, x1, y1, c.class).map_err(|e| manifest_err(e.to_string()))?;
        }
        out.push(entry);
    }
    Ok(out)
}

fn load_entry(dir: &Path, e: &Entry) -> Result<Record> {
    let image = RgbImage::load_png(&dir.join(&e.image))?;
    let boxes = e
        .chars
        .iter()
        .map(|c| CharBox {
            x_min: c.bbox[0],
            y_min: c.bbox[1],
            x_max: c.bbox[2],
            y_max: c.bbox[3],
            class_id: c.class,
        })
        .collect();
    let context = match (&e.context, e.crop) {
        (Some(rel), Some(crop)) => {
            let image = RgbImage::load_png(&dir.join(rel))?;
            let [x0, y0, x1, y1] = crop;
            if x0 >= x1 || y0 >= y1 || x1 > image.width || y1 > image.height {
                return Err(Error::invalid(format!(
                    "crop {crop:?} outside context image {rel}"
                )));
            }
            Some(ContextRef { image, crop })
        }
        _ => None,
    };
    Ok(Record {
        sample: Sample {
            image,
            word: e.word.clone(),
            boxes,
        },
        context,
        curvature: e.curvature,
    })
}

/// Load every record of a dataset directory in manifest order.
pub fn read_dataset(dir: &Path) -> Result<Vec<Record>> {
    let entries = read_entries(&dir.join(MANIFEST))?;
    entries.par_iter().map(|e| load_entry(dir, e)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{render_scene, RenderStyle};

    #[test]
    fn round_trip_with_context() {
        let dir = tempfile::tempdir().unwrap();
        let style = RenderStyle::default();
        let records: Vec<Record> = (0..5)
            .map(|i| Record::from_scene(&render_scene("note", &style, i).unwrap()))
            .collect();
        write_dataset(dir.path(), &records).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), records.len());
        for (b, r) in back.iter().zip(&records) {
            assert_eq!(b.sample.word, r.sample.word);
            assert_eq!(b.sample.boxes, r.sample.boxes);
            assert_eq!(
                b.context.as_ref().map(|c| c.crop),
                r.context.as_ref().map(|c| c.crop)
            );
            assert_eq!(b.sample.image, r.sample.image);
            assert_eq!(b.context, r.context);
        }
        assert!(dir.path().join("images/000005.png").exists());
        let scene = back[0].scene().unwrap();
        assert_eq!(scene.tight(), back[0].sample);
    }

    #[test]
    fn empty_and_bad_manifests() {
        let dir = tempfile::tempdir().unwrap();
        assert!(read_dataset(dir.path()).unwrap().is_empty());
        let path = dir.path().join(MANIFEST);
        fs::write(
            &path,
            "{\"image\":\"images/000001.png\",\"word\":\"a\",\"chars\":[{\"class\":11,\"box\":[0,0,1,1]}]}\nnot json\n",
        )
        .unwrap();
        match read_entries(&path) {
            Err(Error::Manifest { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let err = read_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Manifest { line: 2, .. }));
        fs::write(
            &path,
            "{\"image\":\"images/000001.png\",\"word\":\"a\",\"chars\":[{\"class\":11,\"box\":[0,0,1,1]}]}\n",
        )
        .unwrap();
        let err = read_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("000001.png"), "{err}");
    }
}
