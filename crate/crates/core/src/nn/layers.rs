//! Forward and backward kernels over `[N, C, H, W]` activations.

use crate::tensor::{Element, Tensor};

/// Geometry of one convolution over a fixed input size.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(input: [usize; 3], out_c: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        let [in_c, in_h, in_w] = input;
        ConvGeom {
            in_c,
            in_h,
            in_w,
            out_c,
            kernel,
            stride,
            pad,
            out_h: (in_h + 2 * pad - kernel) / stride + 1,
            out_w: (in_w + 2 * pad - kernel) / stride + 1,
        }
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }

    fn col_rows(&self) -> usize {
        self.in_c * self.kernel * self.kernel
    }

    fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }

    fn in_len(&self) -> usize {
        self.in_c * self.in_h * self.in_w
    }

    fn im2col<T: Element>(&self, x: &[T], col: &mut [T]) {
        let k = self.kernel;
        let (oh, ow) = (self.out_h, self.out_w);
        for c in 0..self.in_c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = ((c * k + ki) * k + kj) * oh * ow;
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        let dst = &mut col[row + oy * ow..row + (oy + 1) * ow];
                        if iy < 0 || iy >= self.in_h as isize {
                            dst.fill(T::zero());
                            continue;
                        }
                        let src = &x[(c * self.in_h + iy as usize) * self.in_w..][..self.in_w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            *d = if ix < 0 || ix >= self.in_w as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im_add<T: Element>(&self, col: &[T], dx: &mut [T]) {
        let k = self.kernel;
        let (oh, ow) = (self.out_h, self.out_w);
        for c in 0..self.in_c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = ((c * k + ki) * k + kj) * oh * ow;
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.in_h as isize {
                            continue;
                        }
                        let base = (c * self.in_h + iy as usize) * self.in_w;
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.in_w as isize {
                                let d = &mut dx[base + ix as usize];
                                *d = *d + col[row + oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Cross-correlation plus bias for a whole batch.
    pub fn forward<T: Element>(&self, x: &[T], n: usize, weight: &[T], bias: &[T]) -> Vec<T> {
        let (rows, hw) = (self.col_rows(), self.out_len());
        let mut out = vec![T::zero(); n * self.out_c * hw];
        let mut col = if self.is_pointwise() { Vec::new() } else { vec![T::zero(); rows * hw] };
        for s in 0..n {
            let xs = &x[s * self.in_len()..(s + 1) * self.in_len()];
            let b: &[T] = if self.is_pointwise() {
                xs
            } else {
                self.im2col(xs, &mut col);
                &col
            };
            let ys = &mut out[s * self.out_c * hw..(s + 1) * self.out_c * hw];
            for (o, chunk) in ys.chunks_exact_mut(hw).enumerate() {
                chunk.fill(bias[o]);
            }
            T::gemm(self.out_c, rows, hw, T::one(), weight, false, b, false, T::one(), ys);
        }
        out
    }

    /// Accumulates weight/bias gradients and, if requested, returns the input gradient.
    #[allow(clippy::too_many_arguments)]
    pub fn backward<T: Element>(
        &self,
        x: &[T],
        n: usize,
        weight: &[T],
        dy: &[T],
        grads: Option<(&mut [T], &mut [T])>,
        need_dx: bool,
    ) -> Option<Vec<T>> {
        let (rows, hw) = (self.col_rows(), self.out_len());
        let mut dx = need_dx.then(|| vec![T::zero(); n * self.in_len()]);
        let mut col = if self.is_pointwise() { Vec::new() } else { vec![T::zero(); rows * hw] };
        let mut dcol = vec![T::zero(); rows * hw];
        let mut grads = grads;
        for s in 0..n {
            let dys = &dy[s * self.out_c * hw..(s + 1) * self.out_c * hw];
            if let Some((dw, db)) = grads.as_mut() {
                let xs = &x[s * self.in_len()..(s + 1) * self.in_len()];
                let b: &[T] = if self.is_pointwise() {
                    xs
                } else {
                    self.im2col(xs, &mut col);
                    &col
                };
                T::gemm(self.out_c, hw, rows, T::one(), dys, false, b, true, T::one(), dw);
                for (o, chunk) in dys.chunks_exact(hw).enumerate() {
                    db[o] = db[o] + chunk.iter().copied().sum();
                }
            }
            if let Some(dx) = dx.as_mut() {
                let dxs = &mut dx[s * self.in_len()..(s + 1) * self.in_len()];
                if self.is_pointwise() {
                    T::gemm(rows, self.out_c, hw, T::one(), weight, true, dys, false, T::zero(), dxs);
                } else {
                    T::gemm(rows, self.out_c, hw, T::one(), weight, true, dys, false, T::zero(), &mut dcol);
                    self.col2im_add(&dcol, dxs);
                }
            }
        }
        dx
    }
}

pub(crate) fn relu_inplace<T: Element>(v: &mut [T]) {
    for x in v {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

/// Zeroes gradient entries whose (post-activation) output was not positive.
pub(crate) fn relu_mask<T: Element>(grad: &mut [T], out: &[T]) {
    for (g, &o) in grad.iter_mut().zip(out) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

pub(crate) struct PoolOut<T> {
    pub out: Vec<T>,
    /// Flat input index of each output's maximum.
    pub argmax: Vec<usize>,
}

pub(crate) fn maxpool_forward<T: Element>(
    x: &[T],
    n: usize,
    [c, h, w]: [usize; 3],
    kernel: usize,
    stride: usize,
    [oh, ow]: [usize; 2],
) -> PoolOut<T> {
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * stride * w + ox * stride;
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let i = base + (oy * stride + ky) * w + ox * stride + kx;
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    PoolOut { out, argmax }
}

pub(crate) fn maxpool_backward<T: Element>(dy: &[T], argmax: &[usize], in_len: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); in_len];
    for (&g, &i) in dy.iter().zip(argmax) {
        dx[i] = dx[i] + g;
    }
    dx
}

pub(crate) fn avgpool_forward<T: Element>(x: &[T], planes: usize, hw: usize) -> Vec<T> {
    let inv = T::one() / T::from_f64(hw as f64);
    x.chunks_exact(hw)
        .take(planes)
        .map(|p| p.iter().copied().sum::<T>() * inv)
        .collect()
}

pub(crate) fn avgpool_backward<T: Element>(dy: &[T], hw: usize) -> Vec<T> {
    let inv = T::one() / T::from_f64(hw as f64);
    dy.iter().flat_map(|&g| std::iter::repeat_n(g * inv, hw)).collect()
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LrnParams {
    pub size: usize,
    pub alpha: f64,
    pub beta: f64,
    pub k: f64,
}

/// `b_c = a_c / (k + alpha/size * sum_{|c'-c| <= size/2} a_c'^2)^beta`.
/// Returns the output and the per-element denominator base.
pub(crate) fn lrn_forward<T: Element>(x: &[T], n: usize, [c, h, w]: [usize; 3], p: LrnParams) -> (Vec<T>, Vec<T>) {
    let hw = h * w;
    let half = p.size / 2;
    let coef = T::from_f64(p.alpha / p.size as f64);
    let (k, beta) = (T::from_f64(p.k), T::from_f64(p.beta));
    let mut scale = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    for s in 0..n {
        let base = s * c * hw;
        for ch in 0..c {
            let lo = ch.saturating_sub(half);
            let hi = (ch + half).min(c - 1);
            for i in 0..hw {
                let mut acc = T::zero();
                for cc in lo..=hi {
                    let v = x[base + cc * hw + i];
                    acc = acc + v * v;
                }
                let idx = base + ch * hw + i;
                scale[idx] = k + coef * acc;
                out[idx] = x[idx] * scale[idx].powf(-beta);
            }
        }
    }
    (out, scale)
}

pub(crate) fn lrn_backward<T: Element>(
    x: &[T],
    scale: &[T],
    dy: &[T],
    n: usize,
    [c, h, w]: [usize; 3],
    p: LrnParams,
) -> Vec<T> {
    let hw = h * w;
    let half = p.size / 2;
    let beta = T::from_f64(p.beta);
    let factor = T::from_f64(2.0 * p.alpha * p.beta / p.size as f64);
    // t_i = dy_i * a_i * scale_i^(-beta-1), shared by every window containing i.
    let t: Vec<T> = (0..x.len())
        .map(|i| dy[i] * x[i] * scale[i].powf(-beta - T::one()))
        .collect();
    let mut dx = vec![T::zero(); x.len()];
    for s in 0..n {
        let base = s * c * hw;
        for ch in 0..c {
            let lo = ch.saturating_sub(half);
            let hi = (ch + half).min(c - 1);
            for i in 0..hw {
                let idx = base + ch * hw + i;
                let mut acc = T::zero();
                for cc in lo..=hi {
                    acc = acc + t[base + cc * hw + i];
                }
                dx[idx] = dy[idx] * scale[idx].powf(-beta) - factor * x[idx] * acc;
            }
        }
    }
    dx
}

/// Row-wise softmax probabilities and mean cross-entropy at `labels`.
pub(crate) fn softmax_xent<T: Element>(logits: &Tensor<T>, labels: Option<&[usize]>) -> (Tensor<T>, Option<T>) {
    let k = logits.shape()[1];
    let mut probs = logits.clone();
    let mut loss = T::zero();
    for (row_i, row) in probs.data_mut().chunks_exact_mut(k).enumerate() {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = row.iter().map(|&z| (z - max).exp()).sum();
        let lse = max + sum.ln();
        if let Some(labels) = labels {
            loss = loss + (lse - row[labels[row_i]]);
        }
        for z in row.iter_mut() {
            *z = (*z - lse).exp();
        }
    }
    let n = T::from_f64(logits.shape()[0] as f64);
    (probs, labels.map(|_| loss / n))
}
