//! Layer kernels with hand-written reverse passes.
//!
//! All convolutions use "same" padding with the extra padding row/column
//! placed after the input (bottom/right), so output side = ceil(input /
//! stride). Kernels are laid out `[kh][kw][cin][cout]`; depthwise kernels
//! `[kh][kw][c]`.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor4;

pub const BN_EPSILON: f64 = 1e-3;
pub const BN_MOMENTUM: f64 = 0.99;
pub const PROB_FLOOR: f64 = 1e-12;

const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;

/// Runs `f` for every batch item, in parallel when the `parallel` feature is
/// on. Results come back in item order.
pub(crate) fn map_items<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

fn accumulate(acc: &mut [f64], part: &[f64]) {
    for (a, p) in acc.iter_mut().zip(part) {
        *a += p;
    }
}

/// Output length and leading padding for "same" padding.
pub fn same_padding(input: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(input);
    (out, total / 2)
}

#[inline]
fn tap(o: usize, k: usize, stride: usize, pad: usize, len: usize) -> Option<usize> {
    let i = (o * stride + k) as isize - pad as isize;
    (i >= 0 && (i as usize) < len).then_some(i as usize)
}

// ---------------------------------------------------------------------------
// Full convolution (entry block, strided 1×1 skip projection, pointwise)

pub fn conv2d_forward(
    x: &Tensor4,
    kernel: &[f64],
    bias: &[f64],
    k: usize,
    stride: usize,
    cout: usize,
) -> Tensor4 {
    let (h, w, cin) = (x.h, x.w, x.c);
    debug_assert_eq!(kernel.len(), k * k * cin * cout);
    let (oh, pt) = same_padding(h, k, stride);
    let (ow, pl) = same_padding(w, k, stride);
    let items = map_items(x.n, |b| {
        let xi = x.item(b);
        let mut out = vec![0.0; oh * ow * cout];
        for oy in 0..oh {
            for ox in 0..ow {
                let o = &mut out[(oy * ow + ox) * cout..][..cout];
                if !bias.is_empty() {
                    o.copy_from_slice(bias);
                }
                for ky in 0..k {
                    let Some(iy) = tap(oy, ky, stride, pt, h) else { continue };
                    for kx in 0..k {
                        let Some(ix) = tap(ox, kx, stride, pl, w) else { continue };
                        let xs = &xi[(iy * w + ix) * cin..][..cin];
                        let wb = (ky * k + kx) * cin * cout;
                        for (ci, &xv) in xs.iter().enumerate() {
                            if xv == 0.0 {
                                continue;
                            }
                            let ws = &kernel[wb + ci * cout..][..cout];
                            for (ov, wv) in o.iter_mut().zip(ws) {
                                *ov += xv * wv;
                            }
                        }
                    }
                }
            }
        }
        out
    });
    Tensor4::from_items(oh, ow, cout, items)
}

/// Returns (dx, dkernel, dbias).
pub fn conv2d_backward(
    x: &Tensor4,
    kernel: &[f64],
    k: usize,
    stride: usize,
    dy: &Tensor4,
) -> (Tensor4, Vec<f64>, Vec<f64>) {
    let (h, w, cin) = (x.h, x.w, x.c);
    let cout = dy.c;
    let (oh, pt) = same_padding(h, k, stride);
    let (ow, pl) = same_padding(w, k, stride);
    debug_assert_eq!((oh, ow), (dy.h, dy.w));
    let parts = map_items(x.n, |b| {
        let xi = x.item(b);
        let gi = dy.item(b);
        let mut dx = vec![0.0; h * w * cin];
        let mut dk = vec![0.0; kernel.len()];
        let mut db = vec![0.0; cout];
        for oy in 0..oh {
            for ox in 0..ow {
                let g = &gi[(oy * ow + ox) * cout..][..cout];
                accumulate(&mut db, g);
                for ky in 0..k {
                    let Some(iy) = tap(oy, ky, stride, pt, h) else { continue };
                    for kx in 0..k {
                        let Some(ix) = tap(ox, kx, stride, pl, w) else { continue };
                        let at = (iy * w + ix) * cin;
                        let wb = (ky * k + kx) * cin * cout;
                        for ci in 0..cin {
                            let ws = &kernel[wb + ci * cout..][..cout];
                            dx[at + ci] += ws.iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
                            let xv = xi[at + ci];
                            if xv != 0.0 {
                                let dks = &mut dk[wb + ci * cout..][..cout];
                                for (d, gv) in dks.iter_mut().zip(g) {
                                    *d += xv * gv;
                                }
                            }
                        }
                    }
                }
            }
        }
        (dx, dk, db)
    });
    let mut dk = vec![0.0; kernel.len()];
    let mut db = vec![0.0; cout];
    let mut dxs = Vec::with_capacity(parts.len());
    for (dx, pk, pb) in parts {
        accumulate(&mut dk, &pk);
        accumulate(&mut db, &pb);
        dxs.push(dx);
    }
    (Tensor4::from_items(h, w, cin, dxs), dk, db)
}

// ---------------------------------------------------------------------------
// Depthwise convolution, stride 1, no bias

pub fn depthwise_forward(x: &Tensor4, kernel: &[f64], k: usize) -> Tensor4 {
    let (h, w, c) = (x.h, x.w, x.c);
    debug_assert_eq!(kernel.len(), k * k * c);
    let (_, pt) = same_padding(h, k, 1);
    let (_, pl) = same_padding(w, k, 1);
    let items = map_items(x.n, |b| {
        let xi = x.item(b);
        let mut out = vec![0.0; h * w * c];
        for oy in 0..h {
            for ox in 0..w {
                let o = &mut out[(oy * w + ox) * c..][..c];
                for ky in 0..k {
                    let Some(iy) = tap(oy, ky, 1, pt, h) else { continue };
                    for kx in 0..k {
                        let Some(ix) = tap(ox, kx, 1, pl, w) else { continue };
                        let xs = &xi[(iy * w + ix) * c..][..c];
                        let ws = &kernel[(ky * k + kx) * c..][..c];
                        for ((ov, xv), wv) in o.iter_mut().zip(xs).zip(ws) {
                            *ov += xv * wv;
                        }
                    }
                }
            }
        }
        out
    });
    Tensor4::from_items(h, w, c, items)
}

/// Returns (dx, dkernel).
pub fn depthwise_backward(x: &Tensor4, kernel: &[f64], k: usize, dy: &Tensor4) -> (Tensor4, Vec<f64>) {
    let (h, w, c) = (x.h, x.w, x.c);
    let (_, pt) = same_padding(h, k, 1);
    let (_, pl) = same_padding(w, k, 1);
    let parts = map_items(x.n, |b| {
        let xi = x.item(b);
        let gi = dy.item(b);
        let mut dx = vec![0.0; h * w * c];
        let mut dk = vec![0.0; kernel.len()];
        for oy in 0..h {
            for ox in 0..w {
                let g = &gi[(oy * w + ox) * c..][..c];
                for ky in 0..k {
                    let Some(iy) = tap(oy, ky, 1, pt, h) else { continue };
                    for kx in 0..k {
                        let Some(ix) = tap(ox, kx, 1, pl, w) else { continue };
                        let at = (iy * w + ix) * c;
                        let wb = (ky * k + kx) * c;
                        for ch in 0..c {
                            dx[at + ch] += kernel[wb + ch] * g[ch];
                            dk[wb + ch] += xi[at + ch] * g[ch];
                        }
                    }
                }
            }
        }
        (dx, dk)
    });
    let mut dk = vec![0.0; kernel.len()];
    let mut dxs = Vec::with_capacity(parts.len());
    for (dx, pk) in parts {
        accumulate(&mut dk, &pk);
        dxs.push(dx);
    }
    (Tensor4::from_items(h, w, c, dxs), dk)
}

// ---------------------------------------------------------------------------
// Batch normalisation

#[derive(Clone, Debug)]
pub struct BnCache {
    pub xhat: Tensor4,
    pub inv_std: Vec<f64>,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
    pub train: bool,
}

/// Per-channel normalisation. In training mode batch statistics are used
/// (biased variance); otherwise the supplied running statistics.
pub fn batchnorm_forward(
    x: &Tensor4,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    train: bool,
) -> (Tensor4, BnCache) {
    let c = x.c;
    let count = (x.n * x.h * x.w) as f64;
    let (mean, var) = if train {
        let mut mean = vec![0.0; c];
        for px in x.data.chunks_exact(c) {
            accumulate(&mut mean, px);
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; c];
        for px in x.data.chunks_exact(c) {
            for ch in 0..c {
                let d = px[ch] - mean[ch];
                var[ch] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= count);
        (mean, var)
    } else {
        (running_mean.to_vec(), running_var.to_vec())
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
    let mut xhat = x.clone();
    let mut y = x.clone();
    for (xh, yy) in xhat.data.chunks_exact_mut(c).zip(y.data.chunks_exact_mut(c)) {
        for ch in 0..c {
            xh[ch] = (xh[ch] - mean[ch]) * inv_std[ch];
            yy[ch] = gamma[ch] * xh[ch] + beta[ch];
        }
    }
    (
        y,
        BnCache {
            xhat,
            inv_std,
            batch_mean: mean,
            batch_var: var,
            train,
        },
    )
}

/// Returns (dx, dgamma, dbeta).
pub fn batchnorm_backward(cache: &BnCache, gamma: &[f64], dy: &Tensor4) -> (Tensor4, Vec<f64>, Vec<f64>) {
    let c = dy.c;
    let count = (dy.n * dy.h * dy.w) as f64;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for (g, xh) in dy.data.chunks_exact(c).zip(cache.xhat.data.chunks_exact(c)) {
        for ch in 0..c {
            dbeta[ch] += g[ch];
            dgamma[ch] += g[ch] * xh[ch];
        }
    }
    let mut dx = dy.clone();
    if cache.train {
        for (d, xh) in dx.data.chunks_exact_mut(c).zip(cache.xhat.data.chunks_exact(c)) {
            for ch in 0..c {
                d[ch] = gamma[ch] * cache.inv_std[ch]
                    * (d[ch] - dbeta[ch] / count - xh[ch] * dgamma[ch] / count);
            }
        }
    } else {
        for d in dx.data.chunks_exact_mut(c) {
            for ch in 0..c {
                d[ch] *= gamma[ch] * cache.inv_std[ch];
            }
        }
    }
    (dx, dgamma, dbeta)
}

// ---------------------------------------------------------------------------
// Activations

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Selu,
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Selu => {
                if v > 0.0 {
                    SELU_LAMBDA * v
                } else {
                    SELU_LAMBDA * SELU_ALPHA * (v.exp() - 1.0)
                }
            }
        }
    }

    /// Derivative at pre-activation `v`.
    pub fn derivative(self, v: f64) -> f64 {
        match self {
            Activation::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Selu => {
                if v > 0.0 {
                    SELU_LAMBDA
                } else {
                    SELU_LAMBDA * SELU_ALPHA * v.exp()
                }
            }
        }
    }

    pub fn forward(self, x: &Tensor4) -> Tensor4 {
        x.map(|v| self.apply(v))
    }

    pub fn backward(self, x: &Tensor4, dy: &Tensor4) -> Tensor4 {
        let mut dx = dy.clone();
        for (d, &v) in dx.data.iter_mut().zip(&x.data) {
            *d *= self.derivative(v);
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// Max pooling, 3×3 window, stride 2

pub const POOL_SIZE: usize = 3;
pub const POOL_STRIDE: usize = 2;

/// Returns the pooled tensor and, per output element, the flat index of the
/// selected input element within its batch item. Ties go to the first
/// maximum in row-major window order.
pub fn maxpool_forward(x: &Tensor4) -> (Tensor4, Vec<usize>) {
    let (h, w, c) = (x.h, x.w, x.c);
    let (oh, pt) = same_padding(h, POOL_SIZE, POOL_STRIDE);
    let (ow, pl) = same_padding(w, POOL_SIZE, POOL_STRIDE);
    let items = map_items(x.n, |b| {
        let xi = x.item(b);
        let mut out = vec![f64::NEG_INFINITY; oh * ow * c];
        let mut arg = vec![usize::MAX; oh * ow * c];
        for oy in 0..oh {
            for ox in 0..ow {
                let ob = (oy * ow + ox) * c;
                for ky in 0..POOL_SIZE {
                    let Some(iy) = tap(oy, ky, POOL_STRIDE, pt, h) else { continue };
                    for kx in 0..POOL_SIZE {
                        let Some(ix) = tap(ox, kx, POOL_STRIDE, pl, w) else { continue };
                        let ib = (iy * w + ix) * c;
                        for ch in 0..c {
                            if xi[ib + ch] > out[ob + ch] || arg[ob + ch] == usize::MAX {
                                out[ob + ch] = xi[ib + ch];
                                arg[ob + ch] = ib + ch;
                            }
                        }
                    }
                }
            }
        }
        (out, arg)
    });
    let mut outs = Vec::with_capacity(items.len());
    let mut args = Vec::with_capacity(items.len() * oh * ow * c);
    for (o, a) in items {
        outs.push(o);
        args.extend(a);
    }
    (Tensor4::from_items(oh, ow, c, outs), args)
}

pub fn maxpool_backward(input_shape: (usize, usize, usize, usize), argmax: &[usize], dy: &Tensor4) -> Tensor4 {
    let (n, h, w, c) = input_shape;
    let mut dx = Tensor4::zeros(n, h, w, c);
    let in_len = h * w * c;
    let out_len = dy.item_len();
    for b in 0..n {
        for k in 0..out_len {
            dx.data[b * in_len + argmax[b * out_len + k]] += dy.data[b * out_len + k];
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// Global pooling

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GlobalPool {
    Avg,
    Max,
    Flat,
}

/// Reduces `n×h×w×c` to `n×1×1×d` (d = c, or h·w·c for `Flat`). The second
/// value holds argmax indices for `Max`.
pub fn global_pool_forward(kind: GlobalPool, x: &Tensor4) -> (Tensor4, Vec<usize>) {
    let (n, c) = (x.n, x.c);
    match kind {
        GlobalPool::Flat => (
            Tensor4 {
                n,
                h: 1,
                w: 1,
                c: x.item_len(),
                data: x.data.clone(),
            },
            Vec::new(),
        ),
        GlobalPool::Avg => {
            let area = (x.h * x.w) as f64;
            let mut out = Tensor4::zeros(n, 1, 1, c);
            for b in 0..n {
                let o = &mut out.data[b * c..(b + 1) * c];
                for px in x.item(b).chunks_exact(c) {
                    accumulate(o, px);
                }
                o.iter_mut().for_each(|v| *v /= area);
            }
            (out, Vec::new())
        }
        GlobalPool::Max => {
            let mut out = Tensor4::zeros(n, 1, 1, c);
            let mut arg = vec![0usize; n * c];
            for b in 0..n {
                let xi = x.item(b);
                for ch in 0..c {
                    let mut best = ch;
                    for k in (ch..xi.len()).step_by(c) {
                        if xi[k] > xi[best] {
                            best = k;
                        }
                    }
                    out.data[b * c + ch] = xi[best];
                    arg[b * c + ch] = best;
                }
            }
            (out, arg)
        }
    }
}

pub fn global_pool_backward(
    kind: GlobalPool,
    input_shape: (usize, usize, usize, usize),
    argmax: &[usize],
    dy: &Tensor4,
) -> Tensor4 {
    let (n, h, w, c) = input_shape;
    match kind {
        GlobalPool::Flat => Tensor4 {
            n,
            h,
            w,
            c,
            data: dy.data.clone(),
        },
        GlobalPool::Avg => {
            let area = (h * w) as f64;
            let mut dx = Tensor4::zeros(n, h, w, c);
            for b in 0..n {
                let g = &dy.data[b * c..(b + 1) * c];
                for px in dx.data[b * h * w * c..(b + 1) * h * w * c].chunks_exact_mut(c) {
                    for ch in 0..c {
                        px[ch] = g[ch] / area;
                    }
                }
            }
            dx
        }
        GlobalPool::Max => {
            let mut dx = Tensor4::zeros(n, h, w, c);
            for b in 0..n {
                for ch in 0..c {
                    dx.data[b * h * w * c + argmax[b * c + ch]] += dy.data[b * c + ch];
                }
            }
            dx
        }
    }
}

// ---------------------------------------------------------------------------
// Dense

/// `x` is `n×1×1×d`, kernel `[d][units]`.
pub fn dense_forward(x: &Tensor4, kernel: &[f64], bias: &[f64], units: usize) -> Tensor4 {
    let d = x.c;
    let mut out = Tensor4::zeros(x.n, 1, 1, units);
    for b in 0..x.n {
        let o = &mut out.data[b * units..(b + 1) * units];
        o.copy_from_slice(bias);
        for (i, &xv) in x.data[b * d..(b + 1) * d].iter().enumerate() {
            for (ov, wv) in o.iter_mut().zip(&kernel[i * units..(i + 1) * units]) {
                *ov += xv * wv;
            }
        }
    }
    out
}

/// Returns (dx, dkernel, dbias).
pub fn dense_backward(x: &Tensor4, kernel: &[f64], dy: &Tensor4) -> (Tensor4, Vec<f64>, Vec<f64>) {
    let (d, units) = (x.c, dy.c);
    let mut dx = x.zeros_like();
    let mut dk = vec![0.0; kernel.len()];
    let mut db = vec![0.0; units];
    for b in 0..x.n {
        let g = &dy.data[b * units..(b + 1) * units];
        accumulate(&mut db, g);
        for i in 0..d {
            let xv = x.data[b * d + i];
            let ws = &kernel[i * units..(i + 1) * units];
            dx.data[b * d + i] = ws.iter().zip(g).map(|(a, b)| a * b).sum();
            for (dkv, gv) in dk[i * units..(i + 1) * units].iter_mut().zip(g) {
                *dkv += xv * gv;
            }
        }
    }
    (dx, dk, db)
}

// ---------------------------------------------------------------------------
// Dropout

/// Inverted dropout: kept units are scaled by 1/(1 − rate). The mask is a
/// deterministic function of `seed`.
pub fn dropout_mask(len: usize, rate: f64, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    if rate <= 0.0 {
        return vec![1.0; len];
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

// ---------------------------------------------------------------------------
// Softmax and weighted cross-entropy

pub fn softmax_rows(logits: &Tensor4) -> Tensor4 {
    let k = logits.c;
    let mut out = logits.clone();
    for row in out.data.chunks_exact_mut(k) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Mean over the batch of −w_y · ln p_y, with p floored at 1e-12.
pub fn weighted_cross_entropy(probs: &Tensor4, labels: &[usize], weights: (f64, f64)) -> f64 {
    let k = probs.c;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(b, &y)| {
            let w = if y == 0 { weights.0 } else { weights.1 };
            // NaN must survive the floor so divergence stays visible.
            let p = probs.data[b * k + y];
            -w * (if p < PROB_FLOOR { PROB_FLOOR } else { p }).ln()
        })
        .sum();
    total / labels.len() as f64
}

/// Gradient of [`weighted_cross_entropy`] with respect to the logits.
/// Items whose probability sits below the floor contribute nothing.
pub fn weighted_cross_entropy_grad(probs: &Tensor4, labels: &[usize], weights: (f64, f64)) -> Tensor4 {
    let k = probs.c;
    let n = labels.len() as f64;
    let mut g = probs.clone();
    for (b, &y) in labels.iter().enumerate() {
        let w = if y == 0 { weights.0 } else { weights.1 };
        let row = &mut g.data[b * k..(b + 1) * k];
        if row[y] < PROB_FLOOR {
            row.iter_mut().for_each(|v| *v = 0.0);
            continue;
        }
        row[y] -= 1.0;
        row.iter_mut().for_each(|v| *v *= w / n);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_padding_geometry() {
        assert_eq!(same_padding(4, 3, 1), (4, 1));
        assert_eq!(same_padding(4, 3, 2), (2, 0));
        assert_eq!(same_padding(5, 3, 2), (3, 1));
        assert_eq!(same_padding(4, 1, 2), (2, 0));
        assert_eq!(same_padding(512, 3, 2), (256, 0));
        assert_eq!(same_padding(1, 3, 2), (1, 1));
    }

    #[test]
    fn depthwise_delta_is_identity() {
        let x = Tensor4::from_vec(1, 3, 3, 2, (0..18).map(|v| v as f64).collect()).unwrap();
        let mut k = vec![0.0; 9 * 2];
        k[4 * 2] = 1.0;
        k[4 * 2 + 1] = 1.0;
        assert_eq!(depthwise_forward(&x, &k, 3), x);
    }

    #[test]
    fn batchnorm_constant_channel_gives_beta() {
        let x = Tensor4::from_vec(2, 2, 2, 1, vec![3.0; 8]).unwrap();
        let (y, _) = batchnorm_forward(&x, &[2.0], &[0.7], &[0.0], &[1.0], true);
        assert!(y.data.iter().all(|&v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn batchnorm_infer_formula() {
        let x = Tensor4::from_vec(1, 1, 1, 1, vec![2.5]).unwrap();
        let (y, _) = batchnorm_forward(&x, &[1.5], &[0.25], &[1.0], &[4.0], false);
        let expect = 1.5 * (2.5 - 1.0) / (4.0f64 + 1e-3).sqrt() + 0.25;
        assert!((y.data[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn batchnorm_standardised_input_passes_through() {
        let v = [-1.5, -0.5, 0.5, 1.5];
        let mean = 0.0;
        let var: f64 = v.iter().map(|x: &f64| (x - mean).powi(2)).sum::<f64>() / 4.0;
        let data: Vec<f64> = v.iter().map(|x| x / var.sqrt()).collect();
        let x = Tensor4::from_vec(4, 1, 1, 1, data.clone()).unwrap();
        let (y, _) = batchnorm_forward(&x, &[1.0], &[0.0], &[0.0], &[1.0], true);
        for (a, b) in y.data.iter().zip(&data) {
            assert!(((a - b) / b).abs() <= 1e-3);
        }
    }

    #[test]
    fn maxpool_ties_pick_first() {
        let x = Tensor4::from_vec(1, 2, 2, 1, vec![1.0; 4]).unwrap();
        let (y, arg) = maxpool_forward(&x);
        assert_eq!(y.data, vec![1.0]);
        assert_eq!(arg, vec![0]);
    }

    #[test]
    fn softmax_and_loss() {
        let logits = Tensor4::from_vec(2, 1, 1, 2, vec![0.3, 0.3, -1.0, 4.0]).unwrap();
        let p = softmax_rows(&logits);
        for row in p.data.chunks(2) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let uniform = Tensor4::from_vec(1, 1, 1, 2, vec![0.5, 0.5]).unwrap();
        let l = weighted_cross_entropy(&uniform, &[1], (1.0, 1.0));
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        let perfect = Tensor4::from_vec(1, 1, 1, 2, vec![0.0, 1.0]).unwrap();
        assert_eq!(weighted_cross_entropy(&perfect, &[1], (1.0, 1.0)), 0.0);
        let zero = Tensor4::from_vec(1, 1, 1, 2, vec![1.0, 0.0]).unwrap();
        assert!((weighted_cross_entropy(&zero, &[1], (1.0, 1.0)) + PROB_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn dropout_scales_kept_units() {
        let m = dropout_mask(10_000, 0.5, 3);
        assert!(m.iter().all(|&v| v == 0.0 || v == 2.0));
        let kept = m.iter().filter(|&&v| v > 0.0).count();
        assert!((4_500..5_500).contains(&kept));
        assert_eq!(m, dropout_mask(10_000, 0.5, 3));
    }
}
