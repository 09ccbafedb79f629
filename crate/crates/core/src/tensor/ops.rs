//! Differentiable primitives. Each forward has a `*_backward` that takes
//! whatever the forward needs to be replayed and returns input gradients.

use super::gemm::gemm;
use super::Tensor;
use crate::error::{Error, Result};

pub fn conv_out_extent(size: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::param("convolution stride must be at least 1"));
    }
    if kernel > size + 2 * pad {
        return Err(Error::dim(format!(
            "kernel extent {kernel} exceeds padded input extent {}",
            size + 2 * pad
        )));
    }
    Ok((size + 2 * pad - kernel) / stride + 1)
}

struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let plane = self.oh * self.ow;
        for c in 0..self.c {
            let src = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (c * self.kh + i) * self.kw + j;
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + i) as isize - self.pad as isize;
                        let out_row = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        if iy < 0 || iy >= self.h as isize {
                            out_row.iter_mut().for_each(|v| *v = 0.0);
                            continue;
                        }
                        let src_row = &src[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, v) in out_row.iter_mut().enumerate() {
                            let ix = (ox * self.stride + j) as isize - self.pad as isize;
                            *v = if ix < 0 || ix >= self.w as isize { 0.0 } else { src_row[ix as usize] };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let plane = self.oh * self.ow;
        for c in 0..self.c {
            let dst = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (c * self.kh + i) * self.kw + j;
                    let src = &cols[row * plane..(row + 1) * plane];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + i) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst_row = &mut dst[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..self.ow {
                            let ix = (ox * self.stride + j) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst_row[ix as usize] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv_geom(input: &Tensor, weight: &Tensor, stride: usize, pad: usize) -> Result<(usize, usize, ConvGeom)> {
    let (n, c, h, w) = input.dims4()?;
    let (o, wc, kh, kw) = weight.dims4()?;
    if wc != c {
        return Err(Error::dim(format!("conv weight expects {wc} input channels, input has {c}")));
    }
    let oh = conv_out_extent(h, kh, stride, pad)?;
    let ow = conv_out_extent(w, kw, stride, pad)?;
    Ok((n, o, ConvGeom { c, h, w, kh, kw, oh, ow, stride, pad }))
}

/// 2-D cross-correlation with zero padding.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let (n, o, g) = conv_geom(input, weight, stride, pad)?;
    if bias.numel() != o {
        return Err(Error::dim(format!("conv bias has {} elements, expected {o}", bias.numel())));
    }
    let ckk = g.c * g.kh * g.kw;
    let plane = g.oh * g.ow;
    let mut cols = vec![0.0; ckk * plane];
    let mut out = vec![0.0; n * o * plane];
    let in_stride = g.c * g.h * g.w;
    for s in 0..n {
        g.im2col(&input.data()[s * in_stride..(s + 1) * in_stride], &mut cols);
        let dst = &mut out[s * o * plane..(s + 1) * o * plane];
        for (oc, chunk) in dst.chunks_mut(plane).enumerate() {
            chunk.iter_mut().for_each(|v| *v = bias.data()[oc]);
        }
        gemm(o, ckk, plane, weight.data(), false, &cols, false, dst, 1.0);
    }
    Tensor::new(vec![n, o, g.oh, g.ow], out)
}

/// Gradients `(d_input, d_weight, d_bias)` of [`conv2d`].
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, o, g) = conv_geom(input, weight, stride, pad)?;
    if grad_out.shape() != [n, o, g.oh, g.ow] {
        return Err(Error::dim(format!("conv grad has shape {:?}", grad_out.shape())));
    }
    let ckk = g.c * g.kh * g.kw;
    let plane = g.oh * g.ow;
    let in_stride = g.c * g.h * g.w;
    let mut cols = vec![0.0; ckk * plane];
    let mut dcols = vec![0.0; ckk * plane];
    let mut dx = vec![0.0; input.numel()];
    let mut dw = vec![0.0; weight.numel()];
    let mut db = vec![0.0; o];
    for s in 0..n {
        let gout = &grad_out.data()[s * o * plane..(s + 1) * o * plane];
        for (oc, chunk) in gout.chunks(plane).enumerate() {
            db[oc] += chunk.iter().sum::<f64>();
        }
        g.im2col(&input.data()[s * in_stride..(s + 1) * in_stride], &mut cols);
        gemm(o, plane, ckk, gout, false, &cols, true, &mut dw, 1.0);
        gemm(ckk, o, plane, weight.data(), true, gout, false, &mut dcols, 0.0);
        g.col2im(&dcols, &mut dx[s * in_stride..(s + 1) * in_stride]);
    }
    Ok((
        Tensor::new(input.shape().to_vec(), dx)?,
        Tensor::new(weight.shape().to_vec(), dw)?,
        Tensor::new(vec![o], db)?,
    ))
}

/// `out[n, o] = Σ_i w[o, i]·x[n, i] + b[o]`.
pub fn linear(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, f_in) = input.dims2()?;
    let (f_out, w_in) = weight.dims2()?;
    if w_in != f_in {
        return Err(Error::dim(format!("linear expects {w_in} input features, got {f_in}")));
    }
    if bias.numel() != f_out {
        return Err(Error::dim(format!("linear bias has {} elements, expected {f_out}", bias.numel())));
    }
    let mut out = Vec::with_capacity(n * f_out);
    for _ in 0..n {
        out.extend_from_slice(bias.data());
    }
    gemm(n, f_in, f_out, input.data(), false, weight.data(), true, &mut out, 1.0);
    Tensor::new(vec![n, f_out], out)
}

pub fn linear_backward(input: &Tensor, weight: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, f_in) = input.dims2()?;
    let (f_out, _) = weight.dims2()?;
    if grad_out.shape() != [n, f_out] {
        return Err(Error::dim(format!("linear grad has shape {:?}", grad_out.shape())));
    }
    let mut dx = vec![0.0; n * f_in];
    gemm(n, f_out, f_in, grad_out.data(), false, weight.data(), false, &mut dx, 0.0);
    let mut dw = vec![0.0; f_out * f_in];
    gemm(f_out, n, f_in, grad_out.data(), true, input.data(), false, &mut dw, 0.0);
    let mut db = vec![0.0; f_out];
    for row in grad_out.data().chunks(f_out) {
        for (b, g) in db.iter_mut().zip(row) {
            *b += g;
        }
    }
    Ok((
        Tensor::new(vec![n, f_in], dx)?,
        Tensor::new(vec![f_out, f_in], dw)?,
        Tensor::new(vec![f_out], db)?,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Sigmoid,
}

impl Activation {
    fn validate(self) -> Result<()> {
        match self {
            Activation::LeakyRelu(s) if !(s > 0.0 && s < 1.0) => {
                Err(Error::param(format!("leaky_relu slope must lie in (0, 1), got {s}")))
            }
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu(s) => {
                if x >= 0.0 {
                    x
                } else {
                    s * x
                }
            }
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Pointwise derivative given input `x` and output `y`. Leaky ReLU uses
    /// slope 1 at exactly zero.
    #[inline]
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::LeakyRelu(s) => {
                if x >= 0.0 {
                    1.0
                } else {
                    s
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

pub fn activation(kind: Activation, input: &Tensor) -> Result<Tensor> {
    kind.validate()?;
    if !input.is_finite() {
        return Err(Error::Divergence("non-finite activation input".into()));
    }
    let data = input.data().iter().map(|&x| kind.apply(x)).collect();
    Tensor::new(input.shape().to_vec(), data)
}

pub fn activation_backward(kind: Activation, input: &Tensor, output: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if grad_out.shape() != input.shape() {
        return Err(Error::dim("activation grad shape mismatch"));
    }
    let data = input
        .data()
        .iter()
        .zip(output.data())
        .zip(grad_out.data())
        .map(|((&x, &y), &g)| g * kind.derivative(x, y))
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

/// Output of a max-pooling forward: the pooled tensor plus, for each output
/// element, the flat input index it was taken from.
#[derive(Clone, Debug)]
pub struct Pooled {
    pub output: Tensor,
    pub argmax: Vec<usize>,
}

fn pool_windows<F>(input: &Tensor, oh: usize, ow: usize, window: F) -> Result<Pooled>
where
    F: Fn(usize, usize) -> (usize, usize, usize, usize),
{
    let (n, c, h, w) = input.dims4()?;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let (y0, y1, x0, x1) = window(oy, ox);
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = base + y0 * w + x0;
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        let idx = base + iy * w + ix;
                        // strict comparison keeps the first maximum in row-major order
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok(Pooled { output: Tensor::new(vec![n, c, oh, ow], out)?, argmax })
}

pub fn max_pool2d(input: &Tensor, k: usize, stride: usize) -> Result<Pooled> {
    let (_, _, h, w) = input.dims4()?;
    if k == 0 || stride == 0 {
        return Err(Error::param("pool kernel and stride must be at least 1"));
    }
    if k > h || k > w {
        return Err(Error::dim(format!("pool kernel {k} exceeds input {h}x{w}")));
    }
    let oh = (h - k) / stride + 1;
    let ow = (w - k) / stride + 1;
    pool_windows(input, oh, ow, |oy, ox| (oy * stride, oy * stride + k, ox * stride, ox * stride + k))
}

/// Window `[floor(i·n/t), ceil((i+1)·n/t))` of an adaptive pool.
pub fn adaptive_window(i: usize, n: usize, t: usize) -> (usize, usize) {
    (i * n / t, ((i + 1) * n).div_ceil(t))
}

pub fn adaptive_max_pool2d(input: &Tensor, t: usize) -> Result<Pooled> {
    let (_, _, h, w) = input.dims4()?;
    if t < 1 {
        return Err(Error::param("adaptive pool size must be at least 1"));
    }
    if t > h || t > w {
        return Err(Error::dim(format!("adaptive pool size {t} exceeds input {h}x{w}")));
    }
    pool_windows(input, t, t, |oy, ox| {
        let (y0, y1) = adaptive_window(oy, h, t);
        let (x0, x1) = adaptive_window(ox, w, t);
        (y0, y1, x0, x1)
    })
}

/// Routes each output gradient to the input position recorded in `argmax`.
pub fn max_pool_backward(grad_out: &Tensor, argmax: &[usize], input_shape: &[usize]) -> Result<Tensor> {
    if grad_out.numel() != argmax.len() {
        return Err(Error::dim("pool grad does not match the recorded argmax"));
    }
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        d[idx] += g;
    }
    Ok(dx)
}

pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4()?;
    let area = (h * w) as f64;
    let data = input.data().chunks(h * w).map(|p| p.iter().sum::<f64>() / area).collect();
    Tensor::new(vec![n, c, 1, 1], data)
}

pub fn global_avg_pool_backward(grad_out: &Tensor, input_shape: &[usize]) -> Result<Tensor> {
    let [n, c, h, w] = input_shape[..] else {
        return Err(Error::dim("global pool expects a rank-4 input shape"));
    };
    if grad_out.numel() != n * c {
        return Err(Error::dim("global pool grad shape mismatch"));
    }
    let area = (h * w) as f64;
    let mut data = Vec::with_capacity(n * c * h * w);
    for &g in grad_out.data() {
        data.extend(std::iter::repeat_n(g / area, h * w));
    }
    Tensor::new(input_shape.to_vec(), data)
}

/// Softmax of `logits / tau` along the last axis, with max subtraction.
pub fn temp_softmax(logits: &Tensor, tau: f64) -> Result<Tensor> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::param(format!("softmax temperature must be positive, got {tau}")));
    }
    let k = *logits.shape().last().expect("tensor has rank >= 1");
    let mut out = Vec::with_capacity(logits.numel());
    for row in logits.data().chunks(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        let mut sum = 0.0;
        for &z in row {
            let e = ((z - max) / tau).exp();
            sum += e;
            out.push(e);
        }
        out[start..].iter_mut().for_each(|v| *v /= sum);
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// `dz = (p ⊙ (g − ⟨p, g⟩)) / tau` per slice.
pub fn temp_softmax_backward(output: &Tensor, grad_out: &Tensor, tau: f64) -> Result<Tensor> {
    if output.shape() != grad_out.shape() {
        return Err(Error::dim("softmax grad shape mismatch"));
    }
    let k = *output.shape().last().expect("tensor has rank >= 1");
    let mut dz = Vec::with_capacity(output.numel());
    for (p, g) in output.data().chunks(k).zip(grad_out.data().chunks(k)) {
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        dz.extend(p.iter().zip(g).map(|(pi, gi)| pi * (gi - dot) / tau));
    }
    Tensor::new(output.shape().to_vec(), dz)
}

/// Mean absolute error and its gradient, `sign(pred − target)/numel` with
/// `sign(0) = 0`.
pub fn l1_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(Error::dim(format!(
            "l1 loss shapes differ: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let m = pred.numel() as f64;
    let mut loss = 0.0;
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| {
            let d = p - t;
            loss += d.abs();
            if d > 0.0 {
                1.0 / m
            } else if d < 0.0 {
                -1.0 / m
            } else {
                0.0
            }
        })
        .collect();
    Ok((loss / m, Tensor::new(pred.shape().to_vec(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut r = rng::stream(seed, &[]);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn naive_conv(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Vec<f64> {
        let (n, c, h, wd) = x.dims4().unwrap();
        let (o, _, kh, kw) = w.dims4().unwrap();
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let mut out = vec![0.0; n * o * oh * ow];
        for s in 0..n {
            for oc in 0..o {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b.data()[oc];
                        for ic in 0..c {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let iy = (oy * stride + i) as isize - pad as isize;
                                    let ix = (ox * stride + j) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        acc += w.data()[((oc * c + ic) * kh + i) * kw + j]
                                            * x.data()[((s * c + ic) * h + iy as usize) * wd + ix as usize];
                                    }
                                }
                            }
                        }
                        out[((s * o + oc) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_full_size_shape() {
        let x = Tensor::zeros(&[8, 3, 128, 128]);
        let w = Tensor::zeros(&[64, 3, 3, 3]);
        let b = Tensor::zeros(&[64]);
        assert_eq!(conv2d(&x, &w, &b, 1, 1).unwrap().shape(), &[8, 64, 128, 128]);
    }

    #[test]
    fn conv_scalar_case() {
        let x = Tensor::filled(&[1, 1, 1, 1], 2.0);
        let w = Tensor::filled(&[1, 1, 1, 1], 3.0);
        let b = Tensor::zeros(&[1]);
        assert_eq!(conv2d(&x, &w, &b, 1, 0).unwrap().data(), &[6.0]);
    }

    #[test]
    fn conv_matches_nested_loops() {
        for (stride, pad) in [(1, 1), (1, 0), (2, 1), (3, 2)] {
            let x = random(&[2, 2, 7, 6], 11);
            let w = random(&[3, 2, 3, 3], 12);
            let b = random(&[3], 13);
            let got = conv2d(&x, &w, &b, stride, pad).unwrap();
            let want = naive_conv(&x, &w, &b, stride, pad);
            for (g, e) in got.data().iter().zip(&want) {
                assert!((g - e).abs() < 1e-10, "stride {stride} pad {pad}");
            }
        }
    }

    #[test]
    fn conv_channel_mismatch() {
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        let w = Tensor::zeros(&[1, 3, 3, 3]);
        assert!(matches!(conv2d(&x, &w, &Tensor::zeros(&[1]), 1, 1), Err(Error::Dimension(_))));
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let x = random(&[1, 2, 5, 4], 21);
        let w = random(&[2, 2, 3, 3], 22);
        let b = random(&[2], 23);
        let gout = random(&[1, 2, 3, 2], 24);
        let loss = |x: &Tensor, w: &Tensor, b: &Tensor| -> f64 {
            conv2d(x, w, b, 2, 1).unwrap().data().iter().zip(gout.data()).map(|(a, g)| a * g).sum()
        };
        let (dx, dw, db) = conv2d_backward(&x, &w, &gout, 2, 1).unwrap();
        let h = 1e-5;
        for (which, analytic) in [(0, &dx), (1, &dw), (2, &db)] {
            for idx in 0..analytic.numel() {
                let (mut xp, mut wp, mut bp) = (x.clone(), w.clone(), b.clone());
                let (mut xm, mut wm, mut bm) = (x.clone(), w.clone(), b.clone());
                match which {
                    0 => {
                        xp.data_mut()[idx] += h;
                        xm.data_mut()[idx] -= h;
                    }
                    1 => {
                        wp.data_mut()[idx] += h;
                        wm.data_mut()[idx] -= h;
                    }
                    _ => {
                        bp.data_mut()[idx] += h;
                        bm.data_mut()[idx] -= h;
                    }
                }
                let num = (loss(&xp, &wp, &bp) - loss(&xm, &wm, &bm)) / (2.0 * h);
                let a = analytic.data()[idx];
                assert!((a - num).abs() <= 1e-6 * a.abs().max(num.abs()).max(1e-3));
            }
        }
    }

    #[test]
    fn linear_shapes_and_identity() {
        let x = Tensor::zeros(&[1, 8192]);
        let w = Tensor::zeros(&[1024, 8192]);
        assert_eq!(linear(&x, &w, &Tensor::zeros(&[1024])).unwrap().shape(), &[1, 1024]);

        let x = random(&[2, 4], 1);
        let mut eye = Tensor::zeros(&[4, 4]);
        for i in 0..4 {
            eye.data_mut()[i * 4 + i] = 1.0;
        }
        assert_eq!(linear(&x, &eye, &Tensor::zeros(&[4])).unwrap().data(), x.data());
        assert!(linear(&x, &Tensor::zeros(&[3, 5]), &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn linear_matches_double_loop() {
        let x = random(&[3, 5], 3);
        let w = random(&[4, 5], 4);
        let b = random(&[4], 5);
        let y = linear(&x, &w, &b).unwrap();
        for n in 0..3 {
            for o in 0..4 {
                let mut acc = b.data()[o];
                for i in 0..5 {
                    acc += w.data()[o * 5 + i] * x.data()[n * 5 + i];
                }
                assert!((y.data()[n * 4 + o] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn activation_values() {
        let act = Activation::LeakyRelu(1e-2);
        let x = Tensor::new(vec![3], vec![-2.0, 5.0, 0.0]).unwrap();
        let y = activation(act, &x).unwrap();
        assert!((y.data()[0] + 0.02).abs() < 1e-15);
        assert_eq!(y.data()[1], 5.0);
        assert_eq!(act.derivative(0.0, 0.0), 1.0);
        assert_eq!(activation(Activation::Sigmoid, &Tensor::zeros(&[1])).unwrap().data(), &[0.5]);
        assert!(activation(Activation::LeakyRelu(1.5), &x).is_err());
        assert!(activation(act, &Tensor::new(vec![1], vec![f64::NAN]).unwrap()).is_err());
    }

    #[test]
    fn sigmoid_derivative_matches_central_difference() {
        let x = random(&[50], 9);
        let y = activation(Activation::Sigmoid, &x).unwrap();
        let ones = Tensor::filled(&[50], 1.0);
        let d = activation_backward(Activation::Sigmoid, &x, &y, &ones).unwrap();
        let h = 1e-5;
        for (i, &xi) in x.data().iter().enumerate() {
            let num = (Activation::Sigmoid.apply(xi + h) - Activation::Sigmoid.apply(xi - h)) / (2.0 * h);
            assert!((num - d.data()[i]).abs() <= 1e-6 * num.abs());
        }
    }

    #[test]
    fn max_pool_value_and_routing() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        let p = max_pool2d(&x, 2, 2).unwrap();
        assert_eq!(p.output.data(), &[4.0]);
        let dx = max_pool_backward(&Tensor::filled(&[1, 1, 1, 1], 1.5), &p.argmax, x.shape()).unwrap();
        assert_eq!(dx.data(), &[0., 0., 0., 1.5]);
        assert!(matches!(max_pool2d(&x, 3, 3), Err(Error::Dimension(_))));
    }

    #[test]
    fn max_pool_ties_take_first() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![7., 7., 7., 7.]).unwrap();
        assert_eq!(max_pool2d(&x, 2, 2).unwrap().argmax, vec![0]);
    }

    #[test]
    fn max_pool_paper_shape() {
        let x = Tensor::zeros(&[8, 64, 128, 128]);
        assert_eq!(max_pool2d(&x, 2, 2).unwrap().output.shape(), &[8, 64, 64, 64]);
    }

    #[test]
    fn adaptive_pool_identity_and_even_split() {
        let x = random(&[1, 2, 3, 3], 5);
        assert_eq!(adaptive_max_pool2d(&x, 3).unwrap().output.data(), x.data());
        let x = Tensor::new(vec![1, 1, 4, 4], (0..16).map(f64::from).collect()).unwrap();
        assert_eq!(adaptive_max_pool2d(&x, 2).unwrap().output.data(), &[5., 7., 13., 15.]);
        assert!(matches!(adaptive_max_pool2d(&x, 0), Err(Error::Parameter(_))));
        assert!(matches!(adaptive_max_pool2d(&x, 5), Err(Error::Dimension(_))));
    }

    #[test]
    fn adaptive_pool_matches_window_enumeration() {
        let x = random(&[2, 3, 7, 7], 6);
        let got = adaptive_max_pool2d(&x, 3).unwrap().output;
        // windows of 7 into 3: [0,3), [2,5), [4,7)
        let bounds = [(0usize, 3usize), (2, 5), (4, 7)];
        for plane in 0..6 {
            for (oy, &(y0, y1)) in bounds.iter().enumerate() {
                for (ox, &(x0, x1)) in bounds.iter().enumerate() {
                    let mut m = f64::NEG_INFINITY;
                    for iy in y0..y1 {
                        for ix in x0..x1 {
                            m = m.max(x.data()[plane * 49 + iy * 7 + ix]);
                        }
                    }
                    assert_eq!(got.data()[plane * 9 + oy * 3 + ox], m);
                }
            }
        }
    }

    #[test]
    fn global_avg_pool_cases() {
        let x = Tensor::filled(&[2, 3, 4, 4], 2.5);
        let y = global_avg_pool(&x).unwrap();
        assert_eq!(y.shape(), &[2, 3, 1, 1]);
        assert!(y.data().iter().all(|&v| v == 2.5));
        let x = random(&[1, 1, 4, 4], 8);
        let want: f64 = x.data().iter().sum::<f64>() / 16.0;
        assert!((global_avg_pool(&x).unwrap().data()[0] - want).abs() < 1e-15);
        let dx = global_avg_pool_backward(&Tensor::filled(&[1, 1, 1, 1], 16.0), &[1, 1, 4, 4]).unwrap();
        assert!(dx.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn softmax_analytic_cases() {
        let u = temp_softmax(&Tensor::zeros(&[3]), 7.0).unwrap();
        assert!(u.data().iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
        let z = Tensor::new(vec![2], vec![4f64.ln(), 0.0]).unwrap();
        let p1 = temp_softmax(&z, 1.0).unwrap();
        assert!((p1.data()[0] - 0.8).abs() < 1e-15 && (p1.data()[1] - 0.2).abs() < 1e-15);
        let p2 = temp_softmax(&z, 2.0).unwrap();
        assert!((p2.data()[0] - 2.0 / 3.0).abs() < 1e-15 && (p2.data()[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(temp_softmax(&z, 0.0), Err(Error::Parameter(_))));
        assert!(temp_softmax(&z, -1.0).is_err());
    }

    #[test]
    fn softmax_backward_matches_central_difference() {
        let z = random(&[2, 4], 31);
        let g = random(&[2, 4], 32);
        let tau = 1.7;
        let p = temp_softmax(&z, tau).unwrap();
        let dz = temp_softmax_backward(&p, &g, tau).unwrap();
        let f = |z: &Tensor| -> f64 {
            temp_softmax(z, tau).unwrap().data().iter().zip(g.data()).map(|(a, b)| a * b).sum()
        };
        let h = 1e-5;
        for i in 0..8 {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp.data_mut()[i] += h;
            zm.data_mut()[i] -= h;
            let num = (f(&zp) - f(&zm)) / (2.0 * h);
            assert!((num - dz.data()[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn l1_cases() {
        let p = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        assert_eq!(l1_loss(&p, &p).unwrap().0, 0.0);
        assert_eq!(l1_loss(&p, &p).unwrap().1.data(), &[0.0, 0.0]);
        let t = Tensor::new(vec![1, 2], vec![0.0, 3.0]).unwrap();
        let (loss, grad) = l1_loss(&p, &t).unwrap();
        assert_eq!(loss, 1.0);
        assert_eq!(grad.data(), &[0.5, -0.5]);
        assert!(l1_loss(&p, &Tensor::zeros(&[2, 1])).is_err());

        let a = random(&[3, 4], 40);
        let b = random(&[3, 4], 41);
        let want: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / 12.0;
        assert!((l1_loss(&a, &b).unwrap().0 - want).abs() < 1e-15);
    }
}
