//! Helpers shared by the integration tests: finite-difference gradient
//! checks, an independent word-formation oracle and random map generators.
#![allow(dead_code)]

pub mod grad;

use cafcn::geometry::{class_to_char, CharBox, SPECIAL_CHAR};
use cafcn::nn::ops::ConvGeom;
use cafcn::nn::{ParamSet, Tape, Tensor, Var};
use cafcn::word::ProbMap;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(
        shape,
        (0..n).map(|_| rng.gen_range(-scale..scale)).collect(),
    )
    .unwrap()
}

/// Relative error `|a - n| / max(|a|, |n|)` over two gradient vectors.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Compare tape gradients with central differences for a graph built by
/// `build` from `inputs`. The scalar checked is `sum(r * out)` for a fixed
/// random `r`. At most `max_coords` coordinates per input are probed.
/// Returns the worst relative error over the inputs.
pub fn check_graph(
    rng: &mut ChaCha8Rng,
    inputs: &[Tensor<f64>],
    max_coords: usize,
    build: impl Fn(&mut Tape<'_, f64>, &[Var]) -> Var,
) -> f64 {
    let params = ParamSet::<f64>::new();
    let eval = |ins: &[Tensor<f64>]| -> (Tensor<f64>, Option<Vec<Tensor<f64>>>) {
        let mut tape = Tape::new(&params);
        let vars: Vec<Var> = ins.iter().map(|t| tape.input(t.clone())).collect();
        let out = build(&mut tape, &vars);
        (tape.value(out).clone(), None)
    };
    let (out0, _) = eval(inputs);
    let r = random_tensor(rng, out0.shape(), 1.0);
    let objective = |ins: &[Tensor<f64>]| -> f64 {
        let (o, _) = eval(ins);
        o.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    };

    let mut tape = Tape::new(&params);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let grads = tape.backward(vec![(out, r.clone())]).unwrap();

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let analytic_full = grads
            .of(vars[i])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(input.shape()));
        let mut coords: Vec<usize> = (0..input.len()).collect();
        if coords.len() > max_coords {
            for k in 0..max_coords {
                let j = rng.gen_range(k..coords.len());
                coords.swap(k, j);
            }
            coords.truncate(max_coords);
        }
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for &c in &coords {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[c] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[c] -= h;
            numeric.push((objective(&plus) - objective(&minus)) / (2.0 * h));
            analytic.push(analytic_full.data()[c]);
        }
        worst = worst.max(rel_error(&analytic, &numeric));
    }
    worst
}

/// Central-difference gradient of a scalar function of a tensor.
pub fn numeric_grad(x: &Tensor<f64>, f: impl Fn(&Tensor<f64>) -> f64) -> Vec<f64> {
    let h = 1e-6;
    (0..x.len())
        .map(|i| {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let mut m = x.clone();
            m.data_mut()[i] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}

pub fn conv_geoms() -> Vec<ConvGeom> {
    vec![
        ConvGeom::same(3, 3),
        ConvGeom::same(1, 1),
        ConvGeom::same(1, 3),
        ConvGeom::same(3, 1),
        ConvGeom {
            kh: 3,
            kw: 3,
            stride: 2,
            pad_h: 1,
            pad_w: 1,
        },
        ConvGeom {
            kh: 2,
            kw: 3,
            stride: 1,
            pad_h: 0,
            pad_w: 0,
        },
    ]
}

/// Independent word formation: per-pixel threshold on the best character
/// class, recursive 8-connected flood fill, direct means, stable sort by
/// centroid.
pub fn oracle_word(
    m: &ProbMap,
    threshold: f64,
    min_pixels: usize,
) -> (String, Vec<(u8, Vec<(usize, usize)>)>) {
    let fg = |y: usize, x: usize| -> bool {
        let px = m.pixel(y, x);
        let best = px[1..].iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        best as f64 >= threshold
    };
    let mut label = vec![vec![usize::MAX; m.width]; m.height];
    fn fill(
        y: usize,
        x: usize,
        id: usize,
        label: &mut Vec<Vec<usize>>,
        fg: &dyn Fn(usize, usize) -> bool,
        out: &mut Vec<(usize, usize)>,
    ) {
        if label[y][x] != usize::MAX || !fg(y, x) {
            return;
        }
        label[y][x] = id;
        out.push((y, x));
        let (h, w) = (label.len() as isize, label[0].len() as isize);
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if (dy, dx) != (0, 0) && ny >= 0 && nx >= 0 && ny < h && nx < w {
                    fill(ny as usize, nx as usize, id, label, fg, out);
                }
            }
        }
    }
    let mut regions = Vec::new();
    for y in 0..m.height {
        for x in 0..m.width {
            if label[y][x] == usize::MAX && fg(y, x) {
                let mut pixels = Vec::new();
                fill(y, x, regions.len(), &mut label, &fg, &mut pixels);
                pixels.sort();
                regions.push(pixels);
            }
        }
    }
    let mut scored: Vec<(f64, u8, Vec<(usize, usize)>)> = regions
        .into_iter()
        .filter(|p| p.len() >= min_pixels)
        .map(|pixels| {
            let mut best = (f64::NEG_INFINITY, 0u8);
            for c in 1..m.classes {
                let mean = pixels
                    .iter()
                    .map(|&(y, x)| m.pixel(y, x)[c] as f64)
                    .sum::<f64>()
                    / pixels.len() as f64;
                if mean > best.0 {
                    best = (mean, c as u8);
                }
            }
            let cx = pixels.iter().map(|&(_, x)| x as f64).sum::<f64>() / pixels.len() as f64;
            (cx, best.1, pixels)
        })
        .collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let word = scored
        .iter()
        .map(|(_, c, _)| class_to_char(*c).unwrap_or(SPECIAL_CHAR))
        .collect();
    (word, scored.into_iter().map(|(_, c, p)| (c, p)).collect())
}

/// A probability map with a few rectangular or ragged blobs of random
/// character classes on a noisy background. When `separated` is set, blobs
/// occupy disjoint column bands with a free column between them.
pub fn random_blob_map(rng: &mut ChaCha8Rng, separated: bool) -> ProbMap {
    let h = rng.gen_range(4..14);
    let w = rng.gen_range(10..48);
    let c = 38;
    let mut m = ProbMap::background(h, w, c);
    // background noise: a little mass on random classes
    for y in 0..h {
        for x in 0..w {
            let px = m.pixel_mut(y, x);
            let k = rng.gen_range(1..c);
            let e = rng.gen_range(0.0..0.3f32);
            px[0] = 1.0 - e;
            px[k] = e;
        }
    }
    let blobs = rng.gen_range(0..6);
    let band = (w / blobs.max(1)).max(1);
    for b in 0..blobs {
        let class = rng.gen_range(1..c);
        let (x0, x1) = if separated {
            let lo = b * band;
            let hi = ((b + 1) * band).saturating_sub(1).max(lo + 1).min(w);
            if hi <= lo + 1 {
                continue;
            }
            let a = rng.gen_range(lo..hi - 1);
            (a, rng.gen_range(a + 1..hi))
        } else {
            let a = rng.gen_range(0..w - 1);
            (a, (a + rng.gen_range(1..6)).min(w))
        };
        let y0 = rng.gen_range(0..h - 1);
        let y1 = (y0 + rng.gen_range(1..5)).min(h);
        let ragged = rng.gen_bool(0.5);
        for y in y0..y1 {
            for x in x0..x1 {
                if ragged && rng.gen_bool(0.25) {
                    continue;
                }
                let px = m.pixel_mut(y, x);
                px.fill(0.0);
                let p = rng.gen_range(0.88..1.0f32);
                px[class] = p;
                let other = rng.gen_range(1..c);
                px[other] += (1.0 - p) / 2.0;
                px[0] += (1.0 - p) / 2.0;
            }
        }
    }
    m
}

/// True when `v` is the double nearest to `p / q`.
pub fn is_nearest(v: f64, p: u128, q: u128) -> bool {
    let bits = v.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i32 - 1075;
    let mant = ((bits & ((1 << 52) - 1)) | (1 << 52)) as u128;
    assert!(exp < 0);
    let k = (-exp) as u32;
    // compare m * 2^-k against p / q on the common scale q * 2^k
    let target = p << k;
    let dist = |m: u128| (m * q).abs_diff(target);
    dist(mant) <= dist(mant + 1) && dist(mant) <= dist(mant - 1)
}

/// Random box whose coordinates are multiples of 1/16, so every shrink
/// result is exactly representable.
pub fn dyadic_box(rng: &mut ChaCha8Rng) -> CharBox {
    let x0 = rng.gen_range(0..16_000) as f64 / 16.0;
    let y0 = rng.gen_range(0..16_000) as f64 / 16.0;
    let w = rng.gen_range(1..4_000) as f64 / 16.0;
    let h = rng.gen_range(1..4_000) as f64 / 16.0;
    CharBox::new(x0, y0, x0 + w, y0 + h, rng.gen_range(1..38)).unwrap()
}

/// Copy of `m` with `dx` background columns inserted on the left.
pub fn shift_right(m: &ProbMap, dx: usize) -> ProbMap {
    let mut out = ProbMap::background(m.height, m.width + dx, m.classes);
    for y in 0..m.height {
        for x in 0..m.width {
            out.pixel_mut(y, x + dx).copy_from_slice(m.pixel(y, x));
        }
    }
    out
}
