use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::NUM_CLASSES;
use crate::word::ProbMap;

use super::ops::{self, ConvGeom};
use super::tape::{Grads, Tape, Var};
use super::{Float, ParamSet, Tensor};

/// Downsampling factor of each backbone stage's output. Stages 4 and 5 keep
/// the stage-3 pooling but add none of their own.
pub const STAGE_STRIDES: [usize; 5] = [1, 2, 4, 8, 8];

/// Kernel of the deformable convolution in stages 4 and 5.
const DEFORM_KERNEL: (usize, usize) = (3, 3);
/// Kernel of the convolution that follows it: one row tall, three columns wide.
const POST_DEFORM_KERNEL: (usize, usize) = (1, 3);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    /// Output channels of backbone stages 1–5.
    pub widths: [usize; 5],
    /// Number of plain 3x3 convolutions in stages 1–3.
    pub stage_convs: [usize; 3],
    /// Channel width of the top-down pyramid.
    pub pyramid_width: usize,
    pub num_classes: usize,
    /// Hidden width of each attention head.
    pub attention_width: usize,
    /// Stages (2..=5) whose output passes through a character-attention gate.
    pub attention_stages: Vec<usize>,
    /// Stages (4..=5) built from a deformable 3x3 and a 1x3 convolution
    /// instead of two plain 3x3 convolutions.
    pub deformable_stages: Vec<usize>,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            widths: [32, 64, 128, 128, 128],
            stage_convs: [1, 2, 2],
            pyramid_width: 64,
            num_classes: NUM_CLASSES,
            attention_width: 16,
            attention_stages: vec![2, 3, 4, 5],
            deformable_stages: vec![4, 5],
        }
    }
}

impl NetConfig {
    /// The ablation without attention gates and without deformable stages.
    pub fn baseline() -> Self {
        NetConfig {
            attention_stages: vec![],
            deformable_stages: vec![],
            ..NetConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.contains(&0) || self.pyramid_width == 0 || self.attention_width == 0 {
            return Err(Error::invalid("network widths must be positive"));
        }
        if self.stage_convs.contains(&0) {
            return Err(Error::invalid("stages 1-3 need at least one convolution"));
        }
        if self.num_classes < 2 {
            return Err(Error::invalid("at least two classes are required"));
        }
        if self.attention_stages.iter().any(|s| !(2..=5).contains(s)) {
            return Err(Error::invalid("attention stages must lie in 2..=5"));
        }
        if self.deformable_stages.iter().any(|s| !(4..=5).contains(s)) {
            return Err(Error::invalid("deformable stages must lie in 4..=5"));
        }
        Ok(())
    }

    pub fn has_attention(&self, stage: usize) -> bool {
        self.attention_stages.contains(&stage)
    }

    pub fn is_deformable(&self, stage: usize) -> bool {
        self.deformable_stages.contains(&stage)
    }

    /// `(height, width)` of the stage-`s` feature map (s in 1..=5).
    pub fn stage_dims(&self, stage: usize, h: usize, w: usize) -> (usize, usize) {
        let f = STAGE_STRIDES[stage - 1];
        (h / f, w / f)
    }

    /// Map sizes of the attention-supervised stages, in stage order.
    pub fn attention_dims(&self, h: usize, w: usize) -> Vec<(usize, usize)> {
        let mut stages = self.attention_stages.clone();
        stages.sort_unstable();
        stages.dedup();
        stages.iter().map(|&s| self.stage_dims(s, h, w)).collect()
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        if h % 8 != 0 || w % 8 != 0 || h < 16 || w < 16 {
            return Err(Error::invalid(format!(
                "input {h}x{w} must be at least 16x16 with both sides divisible by 8"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    /// Uniform in `±sqrt(6 / fan_in)`.
    FanIn,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct LayerSpec {
    pub name: String,
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: (usize, usize),
    init: Init,
}

impl LayerSpec {
    fn new(name: String, co: usize, ci: usize, kernel: (usize, usize), init: Init) -> Self {
        LayerSpec {
            name,
            out_channels: co,
            in_channels: ci,
            kernel,
            init,
        }
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        vec![
            self.out_channels,
            self.in_channels,
            self.kernel.0,
            self.kernel.1,
        ]
    }
}

/// Every convolution of the network, in the order the forward pass uses them.
pub(crate) fn layer_specs(cfg: &NetConfig) -> Vec<LayerSpec> {
    use Init::*;
    let mut specs = Vec::new();
    let mut ch = 3;
    for stage in 1..=5 {
        let width = cfg.widths[stage - 1];
        if stage <= 3 {
            for i in 0..cfg.stage_convs[stage - 1] {
                specs.push(LayerSpec::new(
                    format!("stage{stage}.conv{i}"),
                    width,
                    ch,
                    (3, 3),
                    FanIn,
                ));
                ch = width;
            }
        } else if cfg.is_deformable(stage) {
            let taps = DEFORM_KERNEL.0 * DEFORM_KERNEL.1;
            specs.push(LayerSpec::new(
                format!("stage{stage}.offset"),
                2 * taps,
                ch,
                (3, 3),
                Zero,
            ));
            specs.push(LayerSpec::new(
                format!("stage{stage}.deform"),
                width,
                ch,
                DEFORM_KERNEL,
                FanIn,
            ));
            specs.push(LayerSpec::new(
                format!("stage{stage}.post"),
                width,
                width,
                POST_DEFORM_KERNEL,
                FanIn,
            ));
            ch = width;
        } else {
            specs.push(LayerSpec::new(
                format!("stage{stage}.conv0"),
                width,
                ch,
                (3, 3),
                FanIn,
            ));
            specs.push(LayerSpec::new(
                format!("stage{stage}.conv1"),
                width,
                width,
                (3, 3),
                FanIn,
            ));
            ch = width;
        }
        if cfg.has_attention(stage) {
            specs.push(LayerSpec::new(
                format!("stage{stage}.attn.conv0"),
                cfg.attention_width,
                ch,
                (3, 3),
                FanIn,
            ));
            specs.push(LayerSpec::new(
                format!("stage{stage}.attn.conv1"),
                2,
                cfg.attention_width,
                (1, 1),
                Zero,
            ));
        }
    }
    let p = cfg.pyramid_width;
    for stage in (2..=5).rev() {
        specs.push(LayerSpec::new(
            format!("fpn.lateral{stage}"),
            p,
            cfg.widths[stage - 1],
            (1, 1),
            FanIn,
        ));
        if stage < 5 {
            specs.push(LayerSpec::new(
                format!("fpn.smooth{stage}"),
                p,
                p,
                (3, 3),
                FanIn,
            ));
        }
    }
    specs.push(LayerSpec::new(
        "classifier".into(),
        cfg.num_classes,
        p,
        (1, 1),
        FanIn,
    ));
    specs
}

/// Network configuration plus its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: NetConfig,
    pub params: ParamSet<T>,
}

/// Result of a forward pass: the recorded tape, the output logits and the
/// attention logits of every gated stage.
pub struct ForwardTrace<'a, T> {
    pub tape: Tape<'a, T>,
    pub logits: Var,
    /// `(stage, two-channel pre-softmax logits)` in stage order.
    pub attention: Vec<(usize, Var)>,
    /// Output of each backbone stage (after its attention gate).
    pub stages: Vec<Var>,
}

impl<T: Float> ForwardTrace<'_, T> {
    pub fn logits(&self) -> &Tensor<T> {
        self.tape.value(self.logits)
    }

    pub fn attention_logits(&self) -> Vec<(usize, &Tensor<T>)> {
        self.attention
            .iter()
            .map(|&(s, v)| (s, self.tape.value(v)))
            .collect()
    }

    pub fn prob_map(&self) -> Result<ProbMap> {
        ProbMap::from_logits(self.logits())
    }

    pub fn backward(&self, seeds: Vec<(Var, Tensor<T>)>) -> Result<Grads<T>> {
        self.tape.backward(seeds)
    }
}

impl<T: Float> Model<T> {
    /// Fresh parameters: fan-in scaled uniform weights, zero biases, zero
    /// offset heads (so sampling starts on the regular grid) and zero final
    /// attention convolutions (so every attention map starts at 0.5).
    pub fn init(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        for spec in layer_specs(&config) {
            let shape = spec.weight_shape();
            let fan_in = spec.in_channels * spec.kernel.0 * spec.kernel.1;
            let bound = (6.0 / fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            let data: Vec<T> = match spec.init {
                Init::FanIn => (0..n)
                    .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
                    .collect(),
                Init::Zero => vec![T::ZERO; n],
            };
            params.push(
                format!("{}.weight", spec.name),
                Tensor::from_vec(&shape, data)?,
            );
            params.push(
                format!("{}.bias", spec.name),
                Tensor::zeros(&[spec.out_channels]),
            );
        }
        Ok(Model { config, params })
    }

    pub fn cast<U: Float>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    /// Run the network on a `[3, H, W]` image.
    pub fn forward(&self, image: &Tensor<T>) -> Result<ForwardTrace<'_, T>> {
        let (c, h, w) = image.chw()?;
        if c != 3 {
            return Err(Error::invalid(format!(
                "expected a 3-channel image, got {c}"
            )));
        }
        self.config.check_input(h, w)?;
        let cfg = &self.config;
        let mut tape = Tape::new(&self.params);
        let mut x = tape.constant(image.clone());
        let mut attention = Vec::new();
        let mut stages = Vec::with_capacity(5);

        fn conv<T: Float>(
            tape: &mut Tape<'_, T>,
            name: &str,
            x: Var,
            kernel: (usize, usize),
            relu: bool,
        ) -> Result<Var> {
            let w = tape.param_named(&format!("{name}.weight"))?;
            let b = tape.param_named(&format!("{name}.bias"))?;
            tape.conv2d(x, w, Some(b), ConvGeom::same(kernel.0, kernel.1), relu)
        }

        for stage in 1..=5 {
            if (2..=4).contains(&stage) {
                x = tape.max_pool2(x)?;
            }
            if stage <= 3 {
                for i in 0..cfg.stage_convs[stage - 1] {
                    x = conv(&mut tape, &format!("stage{stage}.conv{i}"), x, (3, 3), true)?;
                }
            } else if cfg.is_deformable(stage) {
                let offsets = conv(&mut tape, &format!("stage{stage}.offset"), x, (3, 3), false)?;
                let w = tape.param_named(&format!("stage{stage}.deform.weight"))?;
                let b = tape.param_named(&format!("stage{stage}.deform.bias"))?;
                let geom = ConvGeom::same(DEFORM_KERNEL.0, DEFORM_KERNEL.1);
                x = tape.deform_conv2d(x, offsets, w, Some(b), geom, true)?;
                x = conv(
                    &mut tape,
                    &format!("stage{stage}.post"),
                    x,
                    POST_DEFORM_KERNEL,
                    true,
                )?;
            } else {
                x = conv(&mut tape, &format!("stage{stage}.conv0"), x, (3, 3), true)?;
                x = conv(&mut tape, &format!("stage{stage}.conv1"), x, (3, 3), true)?;
            }
            if cfg.has_attention(stage) {
                let hidden = conv(
                    &mut tape,
                    &format!("stage{stage}.attn.conv0"),
                    x,
                    (3, 3),
                    true,
                )?;
                let logits = conv(
                    &mut tape,
                    &format!("stage{stage}.attn.conv1"),
                    hidden,
                    (1, 1),
                    false,
                )?;
                x = tape.attention_gate(x, logits)?;
                attention.push((stage, logits));
            }
            stages.push(x);
        }

        let mut top = conv(&mut tape, "fpn.lateral5", stages[4], (1, 1), false)?;
        for stage in (2..=4).rev() {
            let lateral = conv(
                &mut tape,
                &format!("fpn.lateral{stage}"),
                stages[stage - 1],
                (1, 1),
                false,
            )?;
            let (lh, lw) = {
                let (_, lh, lw) = tape.value(lateral).chw()?;
                (lh, lw)
            };
            let (_, th, tw) = tape.value(top).chw()?;
            if (th, tw) != (lh, lw) {
                top = tape.resize(top, lh, lw)?;
            }
            let merged = tape.add(lateral, top)?;
            top = conv(
                &mut tape,
                &format!("fpn.smooth{stage}"),
                merged,
                (3, 3),
                true,
            )?;
        }
        let logits = conv(&mut tape, "classifier", top, (1, 1), false)?;
        Ok(ForwardTrace {
            tape,
            logits,
            attention,
            stages,
        })
    }

    /// Character probability map for a `[3, H, W]` image.
    pub fn predict(&self, image: &Tensor<T>) -> Result<ProbMap> {
        self.forward(image)?.prob_map()
    }
}

/// Softmax logits `[C, h, w]` into an attention probability map.
pub fn attention_probs<T: Float>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    ops::attention_map(logits)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> NetConfig {
        NetConfig {
            widths: [4, 4, 6, 6, 6],
            stage_convs: [1, 1, 1],
            pyramid_width: 4,
            attention_width: 3,
            ..NetConfig::default()
        }
    }

    fn image(h: usize, w: usize, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..3 * h * w).map(|_| rng.gen_range(-0.5..0.5)).collect();
        Tensor::from_vec(&[3, h, w], data).unwrap()
    }

    #[test]
    fn output_shapes() {
        let model = Model::<f32>::init(tiny(), 1).unwrap();
        let trace = model.forward(&image(32, 128, 2)).unwrap();
        assert_eq!(trace.logits().shape(), &[38, 16, 64]);
        let trace = model.forward(&image(64, 256, 2)).unwrap();
        let dims: Vec<_> = trace
            .attention_logits()
            .iter()
            .map(|(s, t)| (*s, t.shape().to_vec()))
            .collect();
        assert_eq!(
            dims,
            vec![
                (2, vec![2, 32, 128]),
                (3, vec![2, 16, 64]),
                (4, vec![2, 8, 32]),
                (5, vec![2, 8, 32]),
            ]
        );
        let probs = trace.prob_map().unwrap();
        assert_eq!((probs.height, probs.width, probs.classes), (32, 128, 38));
    }

    #[test]
    fn rejects_bad_dims() {
        let model = Model::<f32>::init(tiny(), 1).unwrap();
        assert!(model.forward(&image(30, 128, 0)).is_err());
        assert!(model.forward(&image(8, 64, 0)).is_err());
        assert!(model.forward(&Tensor::zeros(&[1, 32, 32])).is_err());
    }

    #[test]
    fn init_is_deterministic_and_heads_are_neutral() {
        let a = Model::<f32>::init(NetConfig::default(), 9).unwrap();
        let b = Model::<f32>::init(NetConfig::default(), 9).unwrap();
        assert_eq!(a, b);
        let c = Model::<f32>::init(NetConfig::default(), 10).unwrap();
        assert_ne!(a, c);
        let trace = a.forward(&image(32, 64, 3)).unwrap();
        assert!(trace.logits().all_finite());
        // offsets start at exactly zero and attention at exactly one half
        for stage in [4, 5] {
            let w = a
                .params
                .by_name(&format!("stage{stage}.offset.weight"))
                .unwrap();
            assert!(w.data().iter().all(|&v| v == 0.0));
        }
        for (_, logits) in trace.attention_logits() {
            let att = attention_probs(logits).unwrap();
            assert!(att.data().iter().all(|&v| v == 0.5));
        }
    }

    #[test]
    fn baseline_has_no_attention_or_offsets() {
        let model = Model::<f32>::init(tiny_baseline(), 1).unwrap();
        assert!(model
            .params
            .iter()
            .all(|p| !p.name.contains("attn") && !p.name.contains("offset")));
        let trace = model.forward(&image(16, 32, 0)).unwrap();
        assert!(trace.attention.is_empty());
    }

    fn tiny_baseline() -> NetConfig {
        NetConfig {
            attention_stages: vec![],
            deformable_stages: vec![],
            ..tiny()
        }
    }

    #[test]
    fn forward_is_pure() {
        let model = Model::<f32>::init(tiny(), 4).unwrap();
        let img = image(16, 48, 5);
        let a = model.forward(&img).unwrap().logits().clone();
        let b = model.forward(&img).unwrap().logits().clone();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn config_validation() {
        let mut cfg = NetConfig::default();
        cfg.deformable_stages = vec![3];
        assert!(cfg.validate().is_err());
        let mut cfg = NetConfig::default();
        cfg.attention_stages = vec![1];
        assert!(cfg.validate().is_err());
        let mut cfg = NetConfig::default();
        cfg.num_classes = 1;
        assert!(cfg.validate().is_err());
    }
}
