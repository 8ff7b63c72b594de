//! Forward and backward kernels on `[C, H, W]` feature maps.
//!
//! Every kernel is a pure function; the tape in [`super::tape`] strings
//! them together and owns the cached activations.

use crate::error::{Error, Result};

use super::float::gemm;
use super::{Float, Tensor};

/// Kernel size, stride and zero padding of a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl ConvGeom {
    /// Stride-1 convolution that preserves spatial size (odd kernels).
    pub const fn same(kh: usize, kw: usize) -> Self {
        ConvGeom {
            kh,
            kw,
            stride: 1,
            pad_h: kh / 2,
            pad_w: kw / 2,
        }
    }

    pub fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.stride == 0 || self.kh == 0 || self.kw == 0 {
            return Err(Error::invalid(format!("bad convolution geometry {self:?}")));
        }
        let ph = h + 2 * self.pad_h;
        let pw = w + 2 * self.pad_w;
        if ph < self.kh || pw < self.kw {
            return Err(Error::invalid(format!(
                "kernel {}x{} does not fit padded input {ph}x{pw}",
                self.kh, self.kw
            )));
        }
        Ok((
            (ph - self.kh) / self.stride + 1,
            (pw - self.kw) / self.stride + 1,
        ))
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad_h == 0 && self.pad_w == 0
    }
}

fn check_weight<T: Float>(x: &Tensor<T>, w: &Tensor<T>, geom: &ConvGeom) -> Result<(usize, usize)> {
    let (ci, _, _) = x.chw()?;
    match w.shape()[..] {
        [co, wci, kh, kw] if wci == ci && kh == geom.kh && kw == geom.kw => Ok((co, ci)),
        _ => Err(Error::invalid(format!(
            "weight shape {:?} incompatible with {ci} input channels and {}x{} kernel",
            w.shape(),
            geom.kh,
            geom.kw
        ))),
    }
}

fn check_bias<T: Float>(b: Option<&Tensor<T>>, co: usize) -> Result<()> {
    match b {
        Some(b) if b.shape() != [co] => Err(Error::invalid(format!(
            "bias shape {:?}, expected [{co}]",
            b.shape()
        ))),
        _ => Ok(()),
    }
}

/// Unfold `x` into a `[C*kh*kw, Ho*Wo]` matrix of receptive-field columns.
pub fn im2col<T: Float>(x: &Tensor<T>, geom: &ConvGeom) -> Result<Tensor<T>> {
    let (c, h, w) = x.chw()?;
    let (ho, wo) = geom.output_dims(h, w)?;
    let rows = c * geom.kh * geom.kw;
    let mut col = vec![T::ZERO; rows * ho * wo];
    let src = x.data();
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for ki in 0..geom.kh {
            for kj in 0..geom.kw {
                let row = (ch * geom.kh + ki) * geom.kw + kj;
                let dst = &mut col[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * geom.stride + ki) as isize - geom.pad_h as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst_row = &mut dst[oy * wo..(oy + 1) * wo];
                    if geom.stride == 1 {
                        // valid ox satisfy 0 <= ox + kj - pad_w < w
                        let shift = kj as isize - geom.pad_w as isize;
                        let lo = (-shift).max(0) as usize;
                        let hi = ((w as isize - shift).min(wo as isize)).max(0) as usize;
                        if lo < hi {
                            let s0 = (lo as isize + shift) as usize;
                            dst_row[lo..hi].copy_from_slice(&src_row[s0..s0 + (hi - lo)]);
                        }
                    } else {
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            let ix = (ox * geom.stride + kj) as isize - geom.pad_w as isize;
                            if ix >= 0 && ix < w as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[rows, ho * wo], col)
}

/// Adjoint of [`im2col`]: accumulate columns back into a `[C, H, W]` map.
pub fn col2im<T: Float>(
    col: &[T],
    dims: (usize, usize, usize),
    geom: &ConvGeom,
) -> Result<Tensor<T>> {
    let (c, h, w) = dims;
    let (ho, wo) = geom.output_dims(h, w)?;
    let mut out = vec![T::ZERO; c * h * w];
    for ch in 0..c {
        let plane = &mut out[ch * h * w..(ch + 1) * h * w];
        for ki in 0..geom.kh {
            for kj in 0..geom.kw {
                let row = (ch * geom.kh + ki) * geom.kw + kj;
                let src = &col[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * geom.stride + ki) as isize - geom.pad_h as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let src_row = &src[oy * wo..(oy + 1) * wo];
                    if geom.stride == 1 {
                        let shift = kj as isize - geom.pad_w as isize;
                        let lo = (-shift).max(0) as usize;
                        let hi = ((w as isize - shift).min(wo as isize)).max(0) as usize;
                        if lo < hi {
                            let d0 = (lo as isize + shift) as usize;
                            for (d, &v) in
                                dst_row[d0..d0 + (hi - lo)].iter_mut().zip(&src_row[lo..hi])
                            {
                                *d += v;
                            }
                        }
                        continue;
                    }
                    for (ox, &v) in src_row.iter().enumerate() {
                        let ix = (ox * geom.stride + kj) as isize - geom.pad_w as isize;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[c, h, w], out)
}

fn add_bias<T: Float>(out: &mut [T], b: Option<&Tensor<T>>, plane: usize) {
    if let Some(b) = b {
        for (o, &bv) in out.chunks_mut(plane).zip(b.data()) {
            for v in o {
                *v += bv;
            }
        }
    }
}

/// Weight gradient `dy * col^T` as a `co x k` buffer. Computed as
/// `(col * dy^T)^T`, which packs far better when `n` is large.
fn weight_grad<T: Float>(dy: &[T], col: &[T], co: usize, k: usize, n: usize) -> Vec<T> {
    let mut dwt = vec![T::ZERO; k * co];
    gemm(k, co, n, col, false, dy, true, &mut dwt, false);
    let mut dw = vec![T::ZERO; co * k];
    for (r, row) in dwt.chunks(co).enumerate() {
        for (c, &v) in row.iter().enumerate() {
            dw[c * k + r] = v;
        }
    }
    dw
}

fn bias_grad<T: Float>(dy: &Tensor<T>) -> Tensor<T> {
    let (co, h, w) = (dy.shape()[0], dy.shape()[1], dy.shape()[2]);
    let data = dy
        .data()
        .chunks(h * w)
        .map(|c| c.iter().copied().sum())
        .collect();
    Tensor::from_vec(&[co], data).expect("bias gradient shape")
}

/// Cross-correlation of `x: [Ci, H, W]` with `w: [Co, Ci, kh, kw]`.
pub fn conv2d<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    geom: &ConvGeom,
) -> Result<Tensor<T>> {
    let (co, ci) = check_weight(x, w, geom)?;
    check_bias(b, co)?;
    let (_, h, wd) = x.chw()?;
    let (ho, wo) = geom.output_dims(h, wd)?;
    let k = ci * geom.kh * geom.kw;
    let mut out = vec![T::ZERO; co * ho * wo];
    if geom.is_pointwise() {
        gemm(
            co,
            ho * wo,
            k,
            w.data(),
            false,
            x.data(),
            false,
            &mut out,
            false,
        );
    } else {
        let col = im2col(x, geom)?;
        gemm(
            co,
            ho * wo,
            k,
            w.data(),
            false,
            col.data(),
            false,
            &mut out,
            false,
        );
    }
    add_bias(&mut out, b, ho * wo);
    Tensor::from_vec(&[co, ho, wo], out)
}

/// Gradients of [`conv2d`] given the output gradient `dy`.
pub struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
}

pub fn conv2d_backward<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    geom: &ConvGeom,
    need_dx: bool,
) -> Result<ConvGrads<T>> {
    let (co, ci) = check_weight(x, w, geom)?;
    let (_, h, wd) = x.chw()?;
    let (ho, wo) = geom.output_dims(h, wd)?;
    if dy.shape() != [co, ho, wo] {
        return Err(Error::invalid(format!(
            "output gradient shape {:?}, expected {:?}",
            dy.shape(),
            [co, ho, wo]
        )));
    }
    let k = ci * geom.kh * geom.kw;
    let n = ho * wo;
    let dw;
    let dx = if geom.is_pointwise() {
        dw = weight_grad(dy.data(), x.data(), co, k, n);
        need_dx
            .then(|| {
                let mut dx = vec![T::ZERO; k * n];
                gemm(k, n, co, w.data(), true, dy.data(), false, &mut dx, false);
                Tensor::from_vec(&[ci, h, wd], dx)
            })
            .transpose()?
    } else {
        let col = im2col(x, geom)?;
        dw = weight_grad(dy.data(), col.data(), co, k, n);
        drop(col);
        need_dx
            .then(|| {
                let mut dcol = vec![T::ZERO; k * n];
                gemm(k, n, co, w.data(), true, dy.data(), false, &mut dcol, false);
                col2im(&dcol, (ci, h, wd), geom)
            })
            .transpose()?
    };
    Ok(ConvGrads {
        dx,
        dw: Tensor::from_vec(w.shape(), dw)?,
        db: bias_grad(dy),
    })
}

#[derive(Clone, Copy)]
struct Tap<T> {
    /// Flat indices of the (y0,x0), (y0,x1), (y1,x0), (y1,x1) corners, or -1
    /// when the corner lies outside the map.
    idx: [i64; 4],
    ly: T,
    lx: T,
}

impl<T: Float> Tap<T> {
    fn weights(&self) -> [T; 4] {
        let (ly, lx) = (self.ly, self.lx);
        let hy = T::ONE - ly;
        let hx = T::ONE - lx;
        [hy * hx, hy * lx, ly * hx, ly * lx]
    }
}

/// Bilinear sampling plan for every (tap, output pixel) pair. Shared by
/// all input channels since offsets are per tap and pixel.
fn deform_plan<T: Float>(
    h: usize,
    w: usize,
    offsets: &Tensor<T>,
    geom: &ConvGeom,
) -> Result<Vec<Tap<T>>> {
    let taps = geom.kh * geom.kw;
    if offsets.shape() != [2 * taps, h, w] {
        return Err(Error::invalid(format!(
            "offset shape {:?}, expected {:?}",
            offsets.shape(),
            [2 * taps, h, w]
        )));
    }
    let n = h * w;
    let off = offsets.data();
    let mut plan = Vec::with_capacity(taps * n);
    for ki in 0..geom.kh {
        for kj in 0..geom.kw {
            let t = ki * geom.kw + kj;
            let dys = &off[2 * t * n..(2 * t + 1) * n];
            let dxs = &off[(2 * t + 1) * n..(2 * t + 2) * n];
            for oy in 0..h {
                for ox in 0..w {
                    let p = oy * w + ox;
                    let y = T::from_usize(oy + ki) - T::from_usize(geom.pad_h) + dys[p];
                    let x = T::from_usize(ox + kj) - T::from_usize(geom.pad_w) + dxs[p];
                    let y0f = y.floor();
                    let x0f = x.floor();
                    let y0 = y0f.to_f64() as i64;
                    let x0 = x0f.to_f64() as i64;
                    let at = |yy: i64, xx: i64| {
                        if yy >= 0 && yy < h as i64 && xx >= 0 && xx < w as i64 {
                            yy * w as i64 + xx
                        } else {
                            -1
                        }
                    };
                    plan.push(Tap {
                        idx: [
                            at(y0, x0),
                            at(y0, x0 + 1),
                            at(y0 + 1, x0),
                            at(y0 + 1, x0 + 1),
                        ],
                        ly: y - y0f,
                        lx: x - x0f,
                    });
                }
            }
        }
    }
    Ok(plan)
}

fn deform_columns<T: Float>(x: &Tensor<T>, plan: &[Tap<T>], taps: usize) -> Vec<T> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let n = h * w;
    let mut col = vec![T::ZERO; c * taps * n];
    let weights: Vec<[T; 4]> = plan.iter().map(Tap::weights).collect();
    for ch in 0..c {
        let plane = &x.data()[ch * n..(ch + 1) * n];
        for t in 0..taps {
            let row = &mut col[(ch * taps + t) * n..(ch * taps + t + 1) * n];
            let tp = &plan[t * n..(t + 1) * n];
            let tw = &weights[t * n..(t + 1) * n];
            for ((dst, tap), wt) in row.iter_mut().zip(tp).zip(tw) {
                let mut acc = T::ZERO;
                for q in 0..4 {
                    if tap.idx[q] >= 0 {
                        acc += wt[q] * plane[tap.idx[q] as usize];
                    }
                }
                *dst = acc;
            }
        }
    }
    col
}

/// Deformable convolution: every kernel tap samples `x` bilinearly at its
/// grid position displaced by a learned `(dy, dx)`. `offsets` is
/// `[2*kh*kw, H, W]` with channel `2t` holding `dy` and `2t+1` holding `dx`
/// for tap `t = ki*kw + kj`. Samples outside the map read as zero. Stride 1,
/// same padding.
pub fn deform_conv2d<T: Float>(
    x: &Tensor<T>,
    offsets: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    geom: &ConvGeom,
) -> Result<Tensor<T>> {
    let (co, ci) = check_weight(x, w, geom)?;
    check_bias(b, co)?;
    check_deform_geom(geom)?;
    let (_, h, wd) = x.chw()?;
    let taps = geom.kh * geom.kw;
    let plan = deform_plan(h, wd, offsets, geom)?;
    let col = deform_columns(x, &plan, taps);
    let mut out = vec![T::ZERO; co * h * wd];
    gemm(
        co,
        h * wd,
        ci * taps,
        w.data(),
        false,
        &col,
        false,
        &mut out,
        false,
    );
    add_bias(&mut out, b, h * wd);
    Tensor::from_vec(&[co, h, wd], out)
}

fn check_deform_geom(geom: &ConvGeom) -> Result<()> {
    if *geom != ConvGeom::same(geom.kh, geom.kw) || geom.kh % 2 == 0 || geom.kw % 2 == 0 {
        return Err(Error::invalid(format!(
            "deformable convolution needs an odd stride-1 same-padded kernel, got {geom:?}"
        )));
    }
    Ok(())
}

pub struct DeformGrads<T> {
    pub dx: Tensor<T>,
    pub doffsets: Tensor<T>,
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
}

pub fn deform_conv2d_backward<T: Float>(
    x: &Tensor<T>,
    offsets: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    geom: &ConvGeom,
) -> Result<DeformGrads<T>> {
    let (co, ci) = check_weight(x, w, geom)?;
    check_deform_geom(geom)?;
    let (_, h, wd) = x.chw()?;
    if dy.shape() != [co, h, wd] {
        return Err(Error::invalid(format!(
            "output gradient shape {:?}, expected {:?}",
            dy.shape(),
            [co, h, wd]
        )));
    }
    let taps = geom.kh * geom.kw;
    let n = h * wd;
    let k = ci * taps;
    let plan = deform_plan(h, wd, offsets, geom)?;
    let col = deform_columns(x, &plan, taps);
    let dw = weight_grad(dy.data(), &col, co, k, n);
    drop(col);
    let mut dcol = vec![T::ZERO; k * n];
    gemm(k, n, co, w.data(), true, dy.data(), false, &mut dcol, false);

    let mut dx = vec![T::ZERO; ci * n];
    let mut doff = vec![T::ZERO; 2 * taps * n];
    let weights: Vec<[T; 4]> = plan.iter().map(Tap::weights).collect();
    for ch in 0..ci {
        let plane = &x.data()[ch * n..(ch + 1) * n];
        let dplane = &mut dx[ch * n..(ch + 1) * n];
        for t in 0..taps {
            let g_row = &dcol[(ch * taps + t) * n..(ch * taps + t + 1) * n];
            let (dys, rest) = doff[2 * t * n..(2 * t + 2) * n].split_at_mut(n);
            let dxs = rest;
            for p in 0..n {
                let g = g_row[p];
                if g == T::ZERO {
                    continue;
                }
                let tap = &plan[t * n + p];
                let wt = &weights[t * n + p];
                let mut v = [T::ZERO; 4];
                for q in 0..4 {
                    if tap.idx[q] >= 0 {
                        let i = tap.idx[q] as usize;
                        v[q] = plane[i];
                        dplane[i] += g * wt[q];
                    }
                }
                let hy = T::ONE - tap.ly;
                let hx = T::ONE - tap.lx;
                dys[p] += g * (hx * (v[2] - v[0]) + tap.lx * (v[3] - v[1]));
                dxs[p] += g * (hy * (v[1] - v[0]) + tap.ly * (v[3] - v[2]));
            }
        }
    }
    Ok(DeformGrads {
        dx: Tensor::from_vec(&[ci, h, wd], dx)?,
        doffsets: Tensor::from_vec(offsets.shape(), doff)?,
        dw: Tensor::from_vec(w.shape(), dw)?,
        db: bias_grad(dy),
    })
}

/// 2x2 max pooling with stride 2; returns the flat argmax per output.
pub fn max_pool2<T: Float>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    let (c, h, w) = x.chw()?;
    let (ho, wo) = (h / 2, w / 2);
    if ho == 0 || wo == 0 {
        return Err(Error::invalid(format!("cannot pool a {h}x{w} map")));
    }
    let mut out = Vec::with_capacity(c * ho * wo);
    let mut arg = Vec::with_capacity(c * ho * wo);
    let src = x.data();
    for ch in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = (ch * h + 2 * oy) * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = (ch * h + 2 * oy + dy) * w + 2 * ox + dx;
                    if src[i] > src[best] {
                        best = i;
                    }
                }
                out.push(src[best]);
                arg.push(best as u32);
            }
        }
    }
    Ok((Tensor::from_vec(&[c, ho, wo], out)?, arg))
}

pub fn max_pool2_backward<T: Float>(
    dy: &Tensor<T>,
    argmax: &[u32],
    in_shape: &[usize],
) -> Tensor<T> {
    let mut dx = Tensor::zeros(in_shape);
    let d = dx.data_mut();
    for (&g, &i) in dy.data().iter().zip(argmax) {
        d[i as usize] += g;
    }
    dx
}

/// Per-axis linear interpolation taps with half-pixel centers.
fn axis_plan(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear resize of a `[C, H, W]` map (half-pixel centers, edge clamp).
pub fn resize_bilinear<T: Float>(x: &Tensor<T>, oh: usize, ow: usize) -> Result<Tensor<T>> {
    let (c, h, w) = x.chw()?;
    if h == 0 || w == 0 || oh == 0 || ow == 0 {
        return Err(Error::invalid("resize of an empty map"));
    }
    let py = axis_plan(h, oh);
    let px = axis_plan(w, ow);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let plane = &x.data()[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &py {
            let fy = T::from_f64(fy);
            for &(x0, x1, fx) in &px {
                let fx = T::from_f64(fx);
                let top = plane[y0 * w + x0] * (T::ONE - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (T::ONE - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (T::ONE - fy) + bot * fy);
            }
        }
    }
    Tensor::from_vec(&[c, oh, ow], out)
}

pub fn resize_bilinear_backward<T: Float>(dy: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let (c, oh, ow) = dy.chw()?;
    let py = axis_plan(h, oh);
    let px = axis_plan(w, ow);
    let mut dx = vec![T::ZERO; c * h * w];
    for ch in 0..c {
        let plane = &mut dx[ch * h * w..(ch + 1) * h * w];
        let g = &dy.data()[ch * oh * ow..(ch + 1) * oh * ow];
        for (oy, &(y0, y1, fy)) in py.iter().enumerate() {
            let fy = T::from_f64(fy);
            for (ox, &(x0, x1, fx)) in px.iter().enumerate() {
                let fx = T::from_f64(fx);
                let v = g[oy * ow + ox];
                let top = v * (T::ONE - fy);
                let bot = v * fy;
                plane[y0 * w + x0] += top * (T::ONE - fx);
                plane[y0 * w + x1] += top * fx;
                plane[y1 * w + x0] += bot * (T::ONE - fx);
                plane[y1 * w + x1] += bot * fx;
            }
        }
    }
    Tensor::from_vec(&[c, h, w], dx)
}

#[inline]
fn sigmoid<T: Float>(z: T) -> T {
    if z >= T::ZERO {
        T::ONE / (T::ONE + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::ONE + e)
    }
}

/// Character-attention map from two-channel logits: the softmax
/// probability of channel 1 (characters).
pub fn attention_map<T: Float>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = logits.chw()?;
    if c != 2 {
        return Err(Error::invalid(format!(
            "attention logits need 2 channels, got {c}"
        )));
    }
    let n = h * w;
    let (bg, fg) = logits.data().split_at(n);
    let data = bg.iter().zip(fg).map(|(&b, &f)| sigmoid(f - b)).collect();
    Tensor::from_vec(&[1, h, w], data)
}

/// `out = feat * (1 + A)` with `A` broadcast over channels.
pub fn attention_gate<T: Float>(feat: &Tensor<T>, logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = feat.chw()?;
    let a = attention_map(logits)?;
    if a.shape()[1..] != [h, w] {
        return Err(Error::invalid(format!(
            "attention map {:?} does not match features {:?}",
            a.shape(),
            feat.shape()
        )));
    }
    let n = h * w;
    let mut out = feat.data().to_vec();
    for ch in 0..c {
        for (o, &av) in out[ch * n..(ch + 1) * n].iter_mut().zip(a.data()) {
            *o *= T::ONE + av;
        }
    }
    Tensor::from_vec(&[c, h, w], out)
}

pub fn attention_gate_backward<T: Float>(
    feat: &Tensor<T>,
    logits: &Tensor<T>,
    dout: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (c, h, w) = feat.chw()?;
    let a = attention_map(logits)?;
    let n = h * w;
    let mut dfeat = vec![T::ZERO; c * n];
    let mut da = vec![T::ZERO; n];
    for ch in 0..c {
        let f = &feat.data()[ch * n..(ch + 1) * n];
        let g = &dout.data()[ch * n..(ch + 1) * n];
        let df = &mut dfeat[ch * n..(ch + 1) * n];
        for p in 0..n {
            df[p] = g[p] * (T::ONE + a.data()[p]);
            da[p] += g[p] * f[p];
        }
    }
    let mut dl = vec![T::ZERO; 2 * n];
    for p in 0..n {
        let av = a.data()[p];
        let d = da[p] * av * (T::ONE - av);
        dl[p] = -d;
        dl[n + p] = d;
    }
    Ok((
        Tensor::from_vec(&[c, h, w], dfeat)?,
        Tensor::from_vec(&[2, h, w], dl)?,
    ))
}

/// Softmax over the channel axis of a `[C, H, W]` map.
pub fn channel_softmax<T: Float>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = x.chw()?;
    let n = h * w;
    let src = x.data();
    let mut out = vec![T::ZERO; c * n];
    for p in 0..n {
        let mut m = src[p];
        for ch in 1..c {
            m = m.max(src[ch * n + p]);
        }
        let mut s = T::ZERO;
        for ch in 0..c {
            let e = (src[ch * n + p] - m).exp();
            out[ch * n + p] = e;
            s += e;
        }
        for ch in 0..c {
            out[ch * n + p] = out[ch * n + p] / s;
        }
    }
    Tensor::from_vec(&[c, h, w], out)
}
