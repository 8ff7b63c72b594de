//! Random gradient-check instances for every differentiable operation.

use cafcn::geometry::{CharBox, LabelMap};
use cafcn::nn::ops::ConvGeom;
use cafcn::nn::{Model, NetConfig};
use cafcn::train::{attention_loss, image_loss, pixel_weights, prediction_loss};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_graph, conv_geoms, numeric_grad, random_tensor, rel_error};

pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradOp {
    Conv,
    Deform,
    MaxPool,
    Resize,
    AddRelu,
    Gate,
    AttentionBlock,
    PredictionLoss,
    AttentionLoss,
    Network,
}

impl GradOp {
    pub const ALL: [GradOp; 10] = [
        GradOp::Conv,
        GradOp::Deform,
        GradOp::MaxPool,
        GradOp::Resize,
        GradOp::AddRelu,
        GradOp::Gate,
        GradOp::AttentionBlock,
        GradOp::PredictionLoss,
        GradOp::AttentionLoss,
        GradOp::Network,
    ];

    /// Worst relative error of random instance `i`.
    pub fn instance_error(self, i: u64) -> f64 {
        let mut r = ChaCha8Rng::seed_from_u64(1000 * self as u64 + i);
        match self {
            GradOp::Conv => conv(&mut r, i),
            GradOp::Deform => deform(&mut r, i),
            GradOp::MaxPool => {
                let shape = [r.gen_range(1..4), r.gen_range(2..9), r.gen_range(2..9)];
                let inputs = vec![random_tensor(&mut r, &shape, 1.0)];
                check_graph(&mut r, &inputs, 60, |t, v| t.max_pool2(v[0]).unwrap())
            }
            GradOp::Resize => {
                let (h, w) = (r.gen_range(1..6), r.gen_range(1..8));
                let (oh, ow) = (r.gen_range(1..12), r.gen_range(1..14));
                let inputs = vec![random_tensor(&mut r, &[2, h, w], 1.0)];
                check_graph(&mut r, &inputs, 60, |t, v| t.resize(v[0], oh, ow).unwrap())
            }
            GradOp::AddRelu => {
                let shape = [r.gen_range(1..4), r.gen_range(1..6), r.gen_range(1..6)];
                let inputs = vec![
                    random_tensor(&mut r, &shape, 1.0),
                    random_tensor(&mut r, &shape, 1.0),
                ];
                check_graph(&mut r, &inputs, 60, |t, v| {
                    let s = t.add(v[0], v[1]).unwrap();
                    t.relu(s)
                })
            }
            GradOp::Gate => {
                let (c, h, w) = (r.gen_range(1..5), r.gen_range(1..6), r.gen_range(1..6));
                let inputs = vec![
                    random_tensor(&mut r, &[c, h, w], 1.0),
                    random_tensor(&mut r, &[2, h, w], 3.0),
                ];
                check_graph(&mut r, &inputs, 60, |t, v| {
                    t.attention_gate(v[0], v[1]).unwrap()
                })
            }
            GradOp::AttentionBlock => attention_block(&mut r),
            GradOp::PredictionLoss => {
                let (c, h, w) = (r.gen_range(2..8), r.gen_range(1..6), r.gen_range(1..6));
                let labels = random_labels(&mut r, h, w, c as u8);
                let weights = pixel_weights(&labels);
                let x = random_tensor(&mut r, &[c, h, w], 3.0);
                let analytic = prediction_loss(&x, &labels, &weights).unwrap().grad;
                let numeric =
                    numeric_grad(&x, |t| prediction_loss(t, &labels, &weights).unwrap().loss);
                rel_error(analytic.data(), &numeric)
            }
            GradOp::AttentionLoss => {
                let (h, w) = (r.gen_range(1..7), r.gen_range(1..7));
                let labels = random_labels(&mut r, h, w, 2);
                let x = random_tensor(&mut r, &[2, h, w], 3.0);
                let analytic = attention_loss(&x, &labels).unwrap().grad;
                let numeric = numeric_grad(&x, |t| attention_loss(t, &labels).unwrap().loss);
                rel_error(analytic.data(), &numeric)
            }
            GradOp::Network => network(&mut r, i),
        }
    }
}

fn conv(r: &mut ChaCha8Rng, i: u64) -> f64 {
    let geoms = conv_geoms();
    let g = geoms[i as usize % geoms.len()];
    let (ci, co) = (r.gen_range(1..4), r.gen_range(1..4));
    let (h, w) = (r.gen_range(3..8), r.gen_range(3..9));
    let relu = i % 2 == 1;
    let inputs = vec![
        random_tensor(r, &[ci, h, w], 1.0),
        random_tensor(r, &[co, ci, g.kh, g.kw], 1.0),
        random_tensor(r, &[co], 0.5),
    ];
    check_graph(r, &inputs, 40, |t, v| {
        t.conv2d(v[0], v[1], Some(v[2]), g, relu).unwrap()
    })
}

fn deform(r: &mut ChaCha8Rng, i: u64) -> f64 {
    let (ci, co) = (r.gen_range(1..3), r.gen_range(1..3));
    let (h, w) = (r.gen_range(3..6), r.gen_range(3..7));
    let g = ConvGeom::same(3, 3);
    let inputs = vec![
        random_tensor(r, &[ci, h, w], 1.0),
        random_tensor(r, &[18, h, w], 1.5),
        random_tensor(r, &[co, ci, 3, 3], 1.0),
        random_tensor(r, &[co], 0.5),
    ];
    let relu = i % 2 == 0;
    check_graph(r, &inputs, 40, |t, v| {
        t.deform_conv2d(v[0], v[1], v[2], Some(v[3]), g, relu)
            .unwrap()
    })
}

/// Feature, 3x3 conv, ReLU, 1x1 conv to two logits, then the gate.
fn attention_block(r: &mut ChaCha8Rng) -> f64 {
    let (c, hid, h, w) = (
        r.gen_range(1..4),
        r.gen_range(1..4),
        r.gen_range(2..6),
        r.gen_range(2..6),
    );
    let inputs = vec![
        random_tensor(r, &[c, h, w], 1.0),
        random_tensor(r, &[hid, c, 3, 3], 1.0),
        random_tensor(r, &[hid], 0.3),
        random_tensor(r, &[2, hid, 1, 1], 1.0),
        random_tensor(r, &[2], 0.3),
    ];
    check_graph(r, &inputs, 30, |t, v| {
        let hidden = t
            .conv2d(v[0], v[1], Some(v[2]), ConvGeom::same(3, 3), true)
            .unwrap();
        let logits = t
            .conv2d(hidden, v[3], Some(v[4]), ConvGeom::same(1, 1), false)
            .unwrap();
        t.attention_gate(v[0], logits).unwrap()
    })
}

fn random_labels(r: &mut ChaCha8Rng, h: usize, w: usize, classes: u8) -> LabelMap {
    let mut m = LabelMap::zeros(h, w);
    for v in &mut m.data {
        if r.gen_bool(0.3) {
            *v = r.gen_range(1..classes);
        }
    }
    m
}

fn network(r: &mut ChaCha8Rng, i: u64) -> f64 {
    let mut cfg = NetConfig {
        widths: [3, 4, 4, 5, 5],
        stage_convs: [1, 1, 1],
        pyramid_width: 4,
        attention_width: 3,
        ..NetConfig::default()
    };
    if i % 4 == 3 {
        cfg.attention_stages.clear();
        cfg.deformable_stages.clear();
    }
    let mut model = Model::<f64>::init(cfg, i).unwrap();
    // zero-initialized heads would put deformable sampling on grid kinks
    for p in model.params.iter_mut() {
        for v in p.tensor.data_mut() {
            *v += r.gen_range(-0.3..0.3);
        }
    }
    let (h, w) = (16, [16, 24, 32][i as usize % 3]);
    let image = random_tensor(r, &[3, h, w], 1.0).map(|v| v.abs());
    let boxes: Vec<CharBox> = (0..r.gen_range(1..4))
        .map(|k| {
            let x0 = r.gen_range(0.0..w as f64 - 6.0);
            let y0 = r.gen_range(0.0..4.0);
            CharBox::new(
                x0,
                y0,
                x0 + r.gen_range(4.0..6.0),
                y0 + r.gen_range(8.0..12.0),
                11 + k as u8,
            )
            .unwrap()
        })
        .collect();
    let (_, grads) = image_loss(&model, &image, &boxes).unwrap();

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let eps = 1e-6;
    for _ in 0..30 {
        let p = r.gen_range(0..model.params.len());
        let k = r.gen_range(0..model.params.get(p).tensor.len());
        let orig = model.params.get(p).tensor.data()[k];
        model.params.get_mut(p).tensor.data_mut()[k] = orig + eps;
        let plus = image_loss(&model, &image, &boxes).unwrap().0.total;
        model.params.get_mut(p).tensor.data_mut()[k] = orig - eps;
        let minus = image_loss(&model, &image, &boxes).unwrap().0.total;
        model.params.get_mut(p).tensor.data_mut()[k] = orig;
        numeric.push((plus - minus) / (2.0 * eps));
        analytic.push(grads[p].data()[k]);
    }
    rel_error(&analytic, &numeric)
}
