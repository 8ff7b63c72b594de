//! Reverse-mode differentiation over a linear tape of feature-map ops.

use crate::error::{Error, Result};

use super::ops::{self, ConvGeom};
use super::{Float, ParamSet, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Input {
        requires_grad: bool,
    },
    Param(usize),
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        relu: bool,
    },
    Deform {
        x: Var,
        offsets: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        relu: bool,
    },
    MaxPool {
        x: Var,
        argmax: Vec<u32>,
    },
    Resize {
        x: Var,
    },
    Add(Var, Var),
    Relu(Var),
    Gate {
        feat: Var,
        logits: Var,
    },
}

struct Node<T> {
    /// `None` for parameters, whose values live in the borrowed [`ParamSet`].
    value: Option<Tensor<T>>,
    op: Op,
}

/// Records a forward computation so it can be differentiated afterwards.
/// Parameters are borrowed, never copied.
pub struct Tape<'p, T> {
    params: &'p ParamSet<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Grads<T> {
    nodes: Vec<Option<Tensor<T>>>,
    param_vars: Vec<Option<Var>>,
}

impl<T: Float> Grads<T> {
    pub fn of(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].as_ref()
    }

    /// Gradient for each parameter in [`ParamSet`] order; unused parameters
    /// get zeros.
    pub fn into_param_grads(mut self, params: &ParamSet<T>) -> Vec<Tensor<T>> {
        params
            .iter()
            .enumerate()
            .map(|(i, p)| {
                self.param_vars[i]
                    .and_then(|v| self.nodes[v.0].take())
                    .unwrap_or_else(|| Tensor::zeros(p.tensor.shape()))
            })
            .collect()
    }
}

fn relu_in_place<T: Float>(t: &mut Tensor<T>) {
    for v in t.data_mut() {
        if *v < T::ZERO {
            *v = T::ZERO;
        }
    }
}

/// `dy` masked by the positive part of the (post-ReLU) output.
fn relu_mask<T: Float>(dy: &Tensor<T>, out: &Tensor<T>) -> Tensor<T> {
    let mut g = dy.clone();
    for (gv, &o) in g.data_mut().iter_mut().zip(out.data()) {
        if o <= T::ZERO {
            *gv = T::ZERO;
        }
    }
    g
}

impl<'p, T: Float> Tape<'p, T> {
    pub fn new(params: &'p ParamSet<T>) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    fn push(&mut self, value: Option<Tensor<T>>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(
            Some(t),
            Op::Input {
                requires_grad: true,
            },
        )
    }

    /// An input whose gradient is never needed (e.g. the image).
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(
            Some(t),
            Op::Input {
                requires_grad: false,
            },
        )
    }

    pub fn param(&mut self, index: usize) -> Var {
        if let Some(v) = self.param_vars[index] {
            return v;
        }
        let v = self.push(None, Op::Param(index));
        self.param_vars[index] = Some(v);
        v
    }

    pub fn param_named(&mut self, name: &str) -> Result<Var> {
        let index = self
            .params
            .index_of(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter `{name}`")))?;
        Ok(self.param(index))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(i)) => &self.params.get(*i).tensor,
            _ => unreachable!("node without value"),
        }
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        relu: bool,
    ) -> Result<Var> {
        let mut out = ops::conv2d(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            &geom,
        )?;
        if relu {
            relu_in_place(&mut out);
        }
        Ok(self.push(
            Some(out),
            Op::Conv {
                x,
                w,
                b,
                geom,
                relu,
            },
        ))
    }

    pub fn deform_conv2d(
        &mut self,
        x: Var,
        offsets: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        relu: bool,
    ) -> Result<Var> {
        let mut out = ops::deform_conv2d(
            self.value(x),
            self.value(offsets),
            self.value(w),
            b.map(|b| self.value(b)),
            &geom,
        )?;
        if relu {
            relu_in_place(&mut out);
        }
        Ok(self.push(
            Some(out),
            Op::Deform {
                x,
                offsets,
                w,
                b,
                geom,
                relu,
            },
        ))
    }

    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let (out, argmax) = ops::max_pool2(self.value(x))?;
        Ok(self.push(Some(out), Op::MaxPool { x, argmax }))
    }

    pub fn resize(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let out = ops::resize_bilinear(self.value(x), h, w)?;
        Ok(self.push(Some(out), Op::Resize { x }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::invalid(format!(
                "add of shapes {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let mut out = ta.clone();
        out.add_assign(tb);
        Ok(self.push(Some(out), Op::Add(a, b)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        relu_in_place(&mut out);
        self.push(Some(out), Op::Relu(x))
    }

    /// Character-attention gate `feat * (1 + A)`.
    pub fn attention_gate(&mut self, feat: Var, logits: Var) -> Result<Var> {
        let out = ops::attention_gate(self.value(feat), self.value(logits))?;
        Ok(self.push(Some(out), Op::Gate { feat, logits }))
    }

    /// Propagate the seed gradients back to every recorded value.
    pub fn backward(&self, seeds: Vec<(Var, Tensor<T>)>) -> Result<Grads<T>> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            if g.shape() != self.value(v).shape() {
                return Err(Error::invalid(format!(
                    "seed gradient shape {:?} does not match value {:?}",
                    g.shape(),
                    self.value(v).shape()
                )));
            }
            accumulate(&mut grads, v, g);
        }
        let needs: Vec<bool> = self.requires_grad();
        for i in (0..self.nodes.len()).rev() {
            let Some(dy) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input { .. } | Op::Param(_) => {
                    grads[i] = Some(dy);
                    continue;
                }
                Op::Conv {
                    x,
                    w,
                    b,
                    geom,
                    relu,
                } => {
                    let out = node.value.as_ref().expect("conv output");
                    let dy = if *relu { relu_mask(&dy, out) } else { dy };
                    let g = ops::conv2d_backward(
                        self.value(*x),
                        self.value(*w),
                        &dy,
                        geom,
                        needs[x.0],
                    )?;
                    if let Some(dx) = g.dx {
                        accumulate(&mut grads, *x, dx);
                    }
                    accumulate(&mut grads, *w, g.dw);
                    if let Some(b) = b {
                        accumulate(&mut grads, *b, g.db);
                    }
                }
                Op::Deform {
                    x,
                    offsets,
                    w,
                    b,
                    geom,
                    relu,
                } => {
                    let out = node.value.as_ref().expect("deform output");
                    let dy = if *relu { relu_mask(&dy, out) } else { dy };
                    let g = ops::deform_conv2d_backward(
                        self.value(*x),
                        self.value(*offsets),
                        self.value(*w),
                        &dy,
                        geom,
                    )?;
                    accumulate(&mut grads, *x, g.dx);
                    accumulate(&mut grads, *offsets, g.doffsets);
                    accumulate(&mut grads, *w, g.dw);
                    if let Some(b) = b {
                        accumulate(&mut grads, *b, g.db);
                    }
                }
                Op::MaxPool { x, argmax } => {
                    let dx = ops::max_pool2_backward(&dy, argmax, self.value(*x).shape());
                    accumulate(&mut grads, *x, dx);
                }
                Op::Resize { x } => {
                    let (_, h, w) = self.value(*x).chw()?;
                    accumulate(&mut grads, *x, ops::resize_bilinear_backward(&dy, h, w)?);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, dy.clone());
                    accumulate(&mut grads, *a, dy);
                }
                Op::Relu(x) => {
                    let out = node.value.as_ref().expect("relu output");
                    accumulate(&mut grads, *x, relu_mask(&dy, out));
                }
                Op::Gate { feat, logits } => {
                    let (df, dl) =
                        ops::attention_gate_backward(self.value(*feat), self.value(*logits), &dy)?;
                    accumulate(&mut grads, *feat, df);
                    accumulate(&mut grads, *logits, dl);
                }
            }
        }
        Ok(Grads {
            nodes: grads,
            param_vars: self.param_vars.clone(),
        })
    }

    /// Whether each node depends on a parameter or a differentiable input.
    fn requires_grad(&self) -> Vec<bool> {
        let mut acc = vec![false; self.nodes.len()];
        for i in 0..self.nodes.len() {
            acc[i] = match &self.nodes[i].op {
                Op::Conv { x, w, b, .. } => acc[x.0] || acc[w.0] || b.is_some_and(|b| acc[b.0]),
                Op::Deform {
                    x, offsets, w, b, ..
                } => acc[x.0] || acc[offsets.0] || acc[w.0] || b.is_some_and(|b| acc[b.0]),
                Op::MaxPool { x, .. } | Op::Resize { x } | Op::Relu(x) => acc[x.0],
                Op::Add(a, b) => acc[a.0] || acc[b.0],
                Op::Gate { feat, logits } => acc[feat.0] || acc[logits.0],
                Op::Input { requires_grad } => *requires_grad,
                Op::Param(_) => true,
            };
        }
        acc
    }
}

fn accumulate<T: Float>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
