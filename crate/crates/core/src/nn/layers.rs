use super::tensor::gemm;
use super::{Mode, NnError, Tensor};

/// Batch-norm variance floor.
pub const BN_EPSILON: f64 = 1e-5;
/// Weight of the previous running statistic in each update.
pub const BN_MOMENTUM: f64 = 0.9;

/// Upper bound on im2col buffer size, in values.
const COL_BUDGET: usize = 1 << 22;

/// Zero padding before the first row / column for a `k`-wide "same" kernel.
/// Even kernels put the extra row and column after the data.
pub fn same_padding(k: usize) -> usize {
    (k - 1) / 2
}

fn im2col(x: &[f64], h: usize, w: usize, c: usize, k: usize, dst: &mut [f64]) {
    let pad = same_padding(k) as isize;
    let kkc = k * k * c;
    for y in 0..h {
        for xx in 0..w {
            let row = &mut dst[(y * w + xx) * kkc..(y * w + xx + 1) * kkc];
            for ky in 0..k {
                let iy = y as isize + ky as isize - pad;
                for kx in 0..k {
                    let ix = xx as isize + kx as isize - pad;
                    let slot = &mut row[(ky * k + kx) * c..(ky * k + kx + 1) * c];
                    if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                        slot.fill(0.0);
                    } else {
                        let src = (iy as usize * w + ix as usize) * c;
                        slot.copy_from_slice(&x[src..src + c]);
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f64], h: usize, w: usize, c: usize, k: usize, dx: &mut [f64]) {
    let pad = same_padding(k) as isize;
    let kkc = k * k * c;
    for y in 0..h {
        for xx in 0..w {
            let row = &col[(y * w + xx) * kkc..(y * w + xx + 1) * kkc];
            for ky in 0..k {
                let iy = y as isize + ky as isize - pad;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = xx as isize + kx as isize - pad;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let dst = (iy as usize * w + ix as usize) * c;
                    let src = &row[(ky * k + kx) * c..(ky * k + kx + 1) * c];
                    for (d, s) in dx[dst..dst + c].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
}

fn conv_shapes(input: &Tensor, weights: &Tensor) -> Result<(usize, usize, usize, usize, usize, usize), NnError> {
    let (b, h, w, c) = input.dims4()?;
    let (k, k2, c_in, c_out) = weights.dims4()?;
    if k != k2 || k == 0 || c_in != c {
        return Err(NnError::Shape {
            what: "conv2d input depth / square kernel".into(),
            expected: vec![k, k, c, c_out],
            got: weights.shape().to_vec(),
        });
    }
    Ok((b, h, w, c, k, c_out))
}

fn samples_per_chunk(h: usize, w: usize, kkc: usize) -> usize {
    (COL_BUDGET / (h * w * kkc).max(1)).max(1)
}

/// Stride-1 convolution with zero "same" padding. `weights` is `[k, k, c_in, c_out]`.
pub fn conv2d(input: &Tensor, weights: &Tensor, bias: &[f64]) -> Result<Tensor, NnError> {
    let (b, h, w, c, k, c_out) = conv_shapes(input, weights)?;
    if bias.len() != c_out {
        return Err(NnError::Shape { what: "conv2d bias".into(), expected: vec![c_out], got: vec![bias.len()] });
    }
    let kkc = k * k * c;
    let hw = h * w;
    let mut out = vec![0.0; b * hw * c_out];
    let chunk = samples_per_chunk(h, w, kkc);
    let mut col = vec![0.0; chunk.min(b) * hw * kkc];
    let x = input.data();
    let mut start = 0;
    while start < b {
        let n = chunk.min(b - start);
        let col = &mut col[..n * hw * kkc];
        for s in 0..n {
            im2col(&x[(start + s) * hw * c..(start + s + 1) * hw * c], h, w, c, k, &mut col[s * hw * kkc..(s + 1) * hw * kkc]);
        }
        let dst = &mut out[start * hw * c_out..(start + n) * hw * c_out];
        gemm(n * hw, kkc, c_out, col, false, weights.data(), false, 0.0, dst);
        start += n;
    }
    for row in out.chunks_exact_mut(c_out) {
        for (v, bb) in row.iter_mut().zip(bias) {
            *v += bb;
        }
    }
    Tensor::new(vec![b, h, w, c_out], out)
}

/// Gradients of a convolution: `(d_input, d_weights, d_bias)`. The input
/// gradient is skipped (returned empty) when `need_input` is false.
pub fn conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
    need_input: bool,
) -> Result<(Option<Tensor>, Vec<f64>, Vec<f64>), NnError> {
    let (b, h, w, c, k, c_out) = conv_shapes(input, weights)?;
    if grad_out.shape() != [b, h, w, c_out] {
        return Err(NnError::Shape { what: "conv2d output gradient".into(), expected: vec![b, h, w, c_out], got: grad_out.shape().to_vec() });
    }
    let kkc = k * k * c;
    let hw = h * w;
    let dy = grad_out.data();
    let mut db = vec![0.0; c_out];
    for row in dy.chunks_exact(c_out) {
        for (d, g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
    let mut dw = vec![0.0; kkc * c_out];
    let mut dx = if need_input { vec![0.0; b * hw * c] } else { Vec::new() };
    let chunk = samples_per_chunk(h, w, kkc);
    let mut col = vec![0.0; chunk.min(b) * hw * kkc];
    let x = input.data();
    let mut start = 0;
    while start < b {
        let n = chunk.min(b - start);
        let col = &mut col[..n * hw * kkc];
        for s in 0..n {
            im2col(&x[(start + s) * hw * c..(start + s + 1) * hw * c], h, w, c, k, &mut col[s * hw * kkc..(s + 1) * hw * kkc]);
        }
        let dy_chunk = &dy[start * hw * c_out..(start + n) * hw * c_out];
        gemm(kkc, n * hw, c_out, col, true, dy_chunk, false, 1.0, &mut dw);
        if need_input {
            gemm(n * hw, c_out, kkc, dy_chunk, false, weights.data(), true, 0.0, col);
            for s in 0..n {
                col2im(&col[s * hw * kkc..(s + 1) * hw * kkc], h, w, c, k, &mut dx[(start + s) * hw * c..(start + s + 1) * hw * c]);
            }
        }
        start += n;
    }
    let dx = if need_input { Some(Tensor::new(vec![b, h, w, c], dx)?) } else { None };
    Ok((dx, dw, db))
}

/// 2 x 2 max pooling, stride 2, ceiling output size. Also returns, for each
/// output value, the flat input index it came from.
pub fn maxpool2x2(input: &Tensor) -> Result<(Tensor, Vec<usize>), NnError> {
    let (b, h, w, c) = input.dims4()?;
    if h == 0 || w == 0 {
        return Err(NnError::Shape { what: "maxpool spatial size".into(), expected: vec![1, 1], got: vec![h, w] });
    }
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let x = input.data();
    let mut out = Vec::with_capacity(b * oh * ow * c);
    let mut arg = Vec::with_capacity(b * oh * ow * c);
    for s in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best = usize::MAX;
                    for y in 2 * oy..(2 * oy + 2).min(h) {
                        for xx in 2 * ox..(2 * ox + 2).min(w) {
                            let idx = ((s * h + y) * w + xx) * c + ch;
                            if best == usize::MAX || x[idx] > x[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(x[best]);
                    arg.push(best);
                }
            }
        }
    }
    Ok((Tensor::new(vec![b, oh, ow, c], out)?, arg))
}

pub fn maxpool2x2_backward(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Result<Tensor, NnError> {
    if argmax.len() != grad_out.len() {
        return Err(NnError::Shape { what: "maxpool gradient".into(), expected: vec![argmax.len()], got: grad_out.shape().to_vec() });
    }
    let mut dx = Tensor::zeros(input_shape.to_vec());
    let d = dx.data_mut();
    for (&i, g) in argmax.iter().zip(grad_out.data()) {
        d[i] += g;
    }
    Ok(dx)
}

/// Values kept from a training-mode batch-norm pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BnCache {
    pub normalized: Tensor,
    pub inv_std: Vec<f64>,
    /// Batch mean and (biased) variance per channel.
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Running mean / variance of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats { mean: vec![0.0; channels], var: vec![1.0; channels] }
    }

    pub fn update(&mut self, cache: &BnCache) {
        for (r, m) in self.mean.iter_mut().zip(&cache.mean) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m;
        }
        for (r, v) in self.var.iter_mut().zip(&cache.var) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v;
        }
    }
}

/// Per-channel batch normalisation over batch and spatial positions.
/// Training mode normalises with batch statistics and returns them in the
/// cache; inference mode uses `running`.
pub fn batchnorm(
    input: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    running: &RunningStats,
    mode: Mode,
) -> Result<(Tensor, Option<BnCache>), NnError> {
    let c = *input.shape().last().expect("tensors have rank >= 1");
    if gamma.len() != c || beta.len() != c || running.mean.len() != c {
        return Err(NnError::Shape { what: "batchnorm parameters".into(), expected: vec![c], got: vec![gamma.len()] });
    }
    let x = input.data();
    let count = x.len() / c.max(1);
    match mode {
        Mode::Infer => {
            let scale: Vec<f64> = (0..c).map(|j| gamma[j] / (running.var[j] + BN_EPSILON).sqrt()).collect();
            let mut out = x.to_vec();
            for row in out.chunks_exact_mut(c) {
                for j in 0..c {
                    row[j] = (row[j] - running.mean[j]) * scale[j] + beta[j];
                }
            }
            Ok((Tensor::new(input.shape().to_vec(), out)?, None))
        }
        Mode::Train => {
            let batch = input.shape()[0];
            if batch < 2 {
                return Err(NnError::BatchTooSmall(batch));
            }
            let mut mean = vec![0.0; c];
            for row in x.chunks_exact(c) {
                for j in 0..c {
                    mean[j] += row[j];
                }
            }
            mean.iter_mut().for_each(|m| *m /= count as f64);
            let mut var = vec![0.0; c];
            for row in x.chunks_exact(c) {
                for j in 0..c {
                    let d = row[j] - mean[j];
                    var[j] += d * d;
                }
            }
            var.iter_mut().for_each(|v| *v /= count as f64);
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
            let mut normalized = x.to_vec();
            let mut out = x.to_vec();
            for (nrow, orow) in normalized.chunks_exact_mut(c).zip(out.chunks_exact_mut(c)) {
                for j in 0..c {
                    let xh = (nrow[j] - mean[j]) * inv_std[j];
                    nrow[j] = xh;
                    orow[j] = gamma[j] * xh + beta[j];
                }
            }
            let shape = input.shape().to_vec();
            let normalized = Tensor::new(shape.clone(), normalized)?;
            Ok((Tensor::new(shape, out)?, Some(BnCache { normalized, inv_std, mean, var })))
        }
    }
}

/// Gradients of a training-mode batch norm: `(d_input, d_gamma, d_beta)`.
pub fn batchnorm_backward(cache: &BnCache, gamma: &[f64], grad_out: &Tensor) -> Result<(Tensor, Vec<f64>, Vec<f64>), NnError> {
    let c = gamma.len();
    if grad_out.shape() != cache.normalized.shape() {
        return Err(NnError::Shape {
            what: "batchnorm output gradient".into(),
            expected: cache.normalized.shape().to_vec(),
            got: grad_out.shape().to_vec(),
        });
    }
    let dy = grad_out.data();
    let xh = cache.normalized.data();
    let count = (dy.len() / c) as f64;
    let mut dbeta = vec![0.0; c];
    let mut dgamma = vec![0.0; c];
    for (grow, hrow) in dy.chunks_exact(c).zip(xh.chunks_exact(c)) {
        for j in 0..c {
            dbeta[j] += grow[j];
            dgamma[j] += grow[j] * hrow[j];
        }
    }
    let mut dx = vec![0.0; dy.len()];
    for ((drow, grow), hrow) in dx.chunks_exact_mut(c).zip(dy.chunks_exact(c)).zip(xh.chunks_exact(c)) {
        for j in 0..c {
            drow[j] = gamma[j] * cache.inv_std[j] / count * (count * grow[j] - dbeta[j] - hrow[j] * dgamma[j]);
        }
    }
    Ok((Tensor::new(grad_out.shape().to_vec(), dx)?, dgamma, dbeta))
}

pub fn relu_in_place(t: &mut Tensor) {
    t.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Masks `grad` by the positive entries of a ReLU output.
pub fn relu_backward(output: &Tensor, grad: &mut Tensor) {
    for (g, o) in grad.data_mut().iter_mut().zip(output.data()) {
        if *o <= 0.0 {
            *g = 0.0;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    None,
}

/// Affine map `x W + b` on a `[batch, in]` input, `weights` stored `[in, out]`.
pub fn dense(input: &Tensor, weights: &[f64], bias: &[f64], activation: Activation) -> Result<Tensor, NnError> {
    let (b, n_in) = input.dims2()?;
    let n_out = bias.len();
    if weights.len() != n_in * n_out {
        return Err(NnError::Shape { what: "dense weights".into(), expected: vec![n_in, n_out], got: vec![weights.len()] });
    }
    let mut out = vec![0.0; b * n_out];
    for row in out.chunks_exact_mut(n_out) {
        row.copy_from_slice(bias);
    }
    gemm(b, n_in, n_out, input.data(), false, weights, false, 1.0, &mut out);
    let mut out = Tensor::new(vec![b, n_out], out)?;
    if activation == Activation::Relu {
        relu_in_place(&mut out);
    }
    Ok(out)
}

/// Gradients of an affine map with respect to its pre-activation output:
/// `(d_input, d_weights, d_bias)`.
pub fn dense_backward(input: &Tensor, weights: &[f64], grad_pre: &Tensor) -> Result<(Tensor, Vec<f64>, Vec<f64>), NnError> {
    let (b, n_in) = input.dims2()?;
    let (b2, n_out) = grad_pre.dims2()?;
    if b != b2 || weights.len() != n_in * n_out {
        return Err(NnError::Shape { what: "dense gradient".into(), expected: vec![b, n_out], got: grad_pre.shape().to_vec() });
    }
    let dy = grad_pre.data();
    let mut dw = vec![0.0; n_in * n_out];
    gemm(n_in, b, n_out, input.data(), true, dy, false, 0.0, &mut dw);
    let mut db = vec![0.0; n_out];
    for row in dy.chunks_exact(n_out) {
        for (d, g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
    let mut dx = vec![0.0; b * n_in];
    gemm(b, n_out, n_in, dy, false, weights, true, 0.0, &mut dx);
    Ok((Tensor::new(vec![b, n_in], dx)?, dw, db))
}

/// Two-class softmax with max subtraction.
pub fn softmax2(logits: [f64; 2]) -> Result<[f64; 2], NnError> {
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(NnError::NonFinite(format!("softmax logits {logits:?}")));
    }
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let s = e0 + e1;
    Ok([e0 / s, e1 / s])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(b: usize, h: usize, w: usize, c: usize, f: impl Fn(usize) -> f64) -> Tensor {
        Tensor::new(vec![b, h, w, c], (0..b * h * w * c).map(f).collect()).unwrap()
    }

    fn naive_conv(x: &Tensor, wt: &Tensor) -> Vec<f64> {
        let (b, h, w, c) = x.dims4().unwrap();
        let (k, _, _, co) = wt.dims4().unwrap();
        let pad = same_padding(k) as isize;
        let mut out = vec![0.0; b * h * w * co];
        for s in 0..b {
            for y in 0..h as isize {
                for xx in 0..w as isize {
                    for o in 0..co {
                        let mut acc = 0.0;
                        for ky in 0..k as isize {
                            for kx in 0..k as isize {
                                let (iy, ix) = (y + ky - pad, xx + kx - pad);
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                for ci in 0..c {
                                    let xv = x.data()[((s * h + iy as usize) * w + ix as usize) * c + ci];
                                    let wv = wt.data()[((ky as usize * k + kx as usize) * c + ci) * co + o];
                                    acc += xv * wv;
                                }
                            }
                        }
                        out[((s * h + y as usize) * w + xx as usize) * co + o] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn delta_kernel_is_identity() {
        let x = grid(2, 6, 7, 3, |i| (i as f64 * 0.7).sin());
        let mut wt = Tensor::zeros(vec![5, 5, 3, 3]);
        for c in 0..3 {
            wt.data_mut()[((2 * 5 + 2) * 3 + c) * 3 + c] = 1.0;
        }
        let y = conv2d(&x, &wt, &[0.0; 3]).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn ones_kernel_counts_support() {
        let x = grid(1, 6, 7, 1, |_| 1.0);
        let wt = Tensor::new(vec![5, 5, 1, 1], vec![1.0; 25]).unwrap();
        let y = conv2d(&x, &wt, &[0.0]).unwrap();
        assert_eq!(y.data()[0], 9.0);
        assert_eq!(y.data()[2 * 7 + 3], 25.0);
        assert_eq!(y.data()[6 * 7 - 1], 9.0);
    }

    #[test]
    fn zero_input_gives_bias() {
        let x = Tensor::zeros(vec![2, 6, 7, 2]);
        let wt = grid(5, 5, 2, 3, |i| i as f64);
        let y = conv2d(&x, &wt, &[1.0, -2.0, 0.5]).unwrap();
        for row in y.data().chunks_exact(3) {
            assert_eq!(row, [1.0, -2.0, 0.5]);
        }
    }

    #[test]
    fn conv_matches_naive_for_odd_and_even_kernels() {
        for k in [1, 2, 3, 4, 5] {
            let x = grid(3, 6, 7, 4, |i| ((i * 37) % 11) as f64 - 5.0);
            let wt = grid(k, k, 4, 5, |i| ((i * 13) % 7) as f64 * 0.25 - 0.7);
            let y = conv2d(&x, &wt, &[0.0; 5]).unwrap();
            for (a, b) in y.data().iter().zip(naive_conv(&x, &wt)) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "k={k}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn conv_rejects_depth_mismatch() {
        let x = Tensor::zeros(vec![1, 6, 7, 3]);
        let wt = Tensor::zeros(vec![5, 5, 2, 4]);
        assert!(matches!(conv2d(&x, &wt, &[0.0; 4]), Err(NnError::Shape { .. })));
    }

    #[test]
    fn pool_shapes_and_values() {
        let x = Tensor::new(vec![1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(maxpool2x2(&x).unwrap().0.data(), [4.0]);
        let x = grid(2, 6, 7, 3, |i| ((i * 29) % 17) as f64);
        let (y, _) = maxpool2x2(&x).unwrap();
        assert_eq!(y.shape(), [2, 3, 4, 3]);
        // brute force over every (possibly truncated) window
        for s in 0..2 {
            for oy in 0..3 {
                for ox in 0..4 {
                    for c in 0..3 {
                        let mut m = f64::NEG_INFINITY;
                        for y0 in 2 * oy..(2 * oy + 2).min(6) {
                            for x0 in 2 * ox..(2 * ox + 2).min(7) {
                                m = m.max(x.data()[((s * 6 + y0) * 7 + x0) * 3 + c]);
                            }
                        }
                        assert_eq!(y.data()[((s * 3 + oy) * 4 + ox) * 3 + c], m);
                    }
                }
            }
        }
        let c = grid(1, 3, 4, 2, |_| 2.5);
        assert!(maxpool2x2(&c).unwrap().0.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn batchnorm_train_normalises() {
        let x = grid(4, 3, 4, 3, |i| (i as f64 * 1.3).sin() * 5.0 + i as f64 * 0.1);
        let (y, cache) = batchnorm(&x, &[1.0; 3], &[0.0; 3], &RunningStats::new(3), Mode::Train).unwrap();
        assert!(cache.is_some());
        for j in 0..3 {
            let vals: Vec<f64> = y.data().iter().skip(j).step_by(3).copied().collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn batchnorm_infer_identity_config() {
        let x = grid(2, 2, 2, 2, |i| i as f64 - 3.0);
        let (y, cache) = batchnorm(&x, &[1.0; 2], &[0.0; 2], &RunningStats::new(2), Mode::Infer).unwrap();
        assert!(cache.is_none());
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-4 * b.abs().max(1.0));
        }
    }

    #[test]
    fn batchnorm_constant_channel_gives_shift() {
        let x = grid(3, 2, 2, 1, |_| 7.0);
        let (y, _) = batchnorm(&x, &[2.0], &[0.25], &RunningStats::new(1), Mode::Train).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn batchnorm_rejects_single_sample_in_training() {
        let x = grid(1, 6, 7, 2, |i| i as f64);
        assert_eq!(
            batchnorm(&x, &[1.0; 2], &[0.0; 2], &RunningStats::new(2), Mode::Train).unwrap_err(),
            NnError::BatchTooSmall(1)
        );
    }

    #[test]
    fn running_stats_momentum() {
        let mut r = RunningStats::new(1);
        let cache = BnCache { normalized: Tensor::zeros(vec![1]), inv_std: vec![1.0], mean: vec![2.0], var: vec![3.0] };
        r.update(&cache);
        assert!((r.mean[0] - 0.2).abs() < 1e-15);
        assert!((r.var[0] - 1.2).abs() < 1e-15);
    }

    #[test]
    fn dense_cases() {
        let x = Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, -1.0]).unwrap();
        let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        assert_eq!(dense(&x, &eye, &[0.0; 3], Activation::None).unwrap().data(), x.data());
        let y = dense(&x, &eye, &[0.0; 3], Activation::Relu).unwrap();
        assert!(y.data().iter().all(|&v| v >= 0.0));
        let y = dense(&x, &[0.0; 6], &[1.5, -1.0], Activation::Relu).unwrap();
        assert_eq!(y.data(), [1.5, 0.0, 1.5, 0.0]);
        assert!(matches!(dense(&x, &[0.0; 5], &[0.0; 2], Activation::None), Err(NnError::Shape { .. })));
    }

    #[test]
    fn softmax_cases() {
        assert_eq!(softmax2([0.0, 0.0]).unwrap(), [0.5, 0.5]);
        let p = softmax2([1000.0, 0.0]).unwrap();
        assert!(p[0] > 1.0 - 1e-12 && (0.0..1e-12).contains(&p[1]));
        assert_eq!(softmax2([0.3, -1.2]).unwrap(), softmax2([10.3, 8.8]).unwrap());
        assert!(softmax2([f64::NAN, 0.0]).is_err());
    }

    fn finite_diff_check(analytic: &[f64], numeric: &[f64]) {
        for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
            let err = (a - n).abs();
            assert!(err <= 1e-7 || err <= 1e-4 * a.abs().max(n.abs()), "index {i}: analytic {a}, numeric {n}");
        }
    }

    // Scalar objective sum(out * probe), so the output gradient is `probe`.
    fn probe(len: usize) -> Vec<f64> {
        (0..len).map(|i| ((i * 7919) % 23) as f64 / 23.0 - 0.4).collect()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        for k in [3, 4] {
            let x = grid(2, 3, 4, 2, |i| (i as f64 * 0.91).sin());
            let wt = grid(k, k, 2, 3, |i| (i as f64 * 0.37).cos() * 0.5);
            let bias = [0.1, -0.2, 0.3];
            let p = probe(2 * 3 * 4 * 3);
            let f = |x: &Tensor, wt: &Tensor, b: &[f64]| dot(conv2d(x, wt, b).unwrap().data(), &p);
            let (dx, dw, db) =
                conv2d_backward(&x, &wt, &Tensor::new(vec![2, 3, 4, 3], p.clone()).unwrap(), true).unwrap();
            let h = 1e-5;
            let num_x: Vec<f64> = (0..x.len())
                .map(|i| {
                    let (mut a, mut b) = (x.clone(), x.clone());
                    a.data_mut()[i] += h;
                    b.data_mut()[i] -= h;
                    (f(&a, &wt, &bias) - f(&b, &wt, &bias)) / (2.0 * h)
                })
                .collect();
            let num_w: Vec<f64> = (0..wt.len())
                .map(|i| {
                    let (mut a, mut b) = (wt.clone(), wt.clone());
                    a.data_mut()[i] += h;
                    b.data_mut()[i] -= h;
                    (f(&x, &a, &bias) - f(&x, &b, &bias)) / (2.0 * h)
                })
                .collect();
            let num_b: Vec<f64> = (0..3)
                .map(|i| {
                    let (mut a, mut b) = (bias, bias);
                    a[i] += h;
                    b[i] -= h;
                    (f(&x, &wt, &a) - f(&x, &wt, &b)) / (2.0 * h)
                })
                .collect();
            finite_diff_check(dx.unwrap().data(), &num_x);
            finite_diff_check(&dw, &num_w);
            finite_diff_check(&db, &num_b);
        }
    }

    #[test]
    fn batchnorm_gradients_match_finite_differences() {
        let x = grid(3, 2, 2, 2, |i| (i as f64 * 1.7).sin() * 2.0);
        let gamma = [1.3, 0.7];
        let beta = [0.2, -0.1];
        let p = probe(x.len());
        let run = RunningStats::new(2);
        let f = |x: &Tensor, g: &[f64], b: &[f64]| dot(batchnorm(x, g, b, &run, Mode::Train).unwrap().0.data(), &p);
        let (_, cache) = batchnorm(&x, &gamma, &beta, &run, Mode::Train).unwrap();
        let (dx, dg, db) =
            batchnorm_backward(&cache.unwrap(), &gamma, &Tensor::new(x.shape().to_vec(), p.clone()).unwrap()).unwrap();
        let h = 1e-5;
        let num_x: Vec<f64> = (0..x.len())
            .map(|i| {
                let (mut a, mut b) = (x.clone(), x.clone());
                a.data_mut()[i] += h;
                b.data_mut()[i] -= h;
                (f(&a, &gamma, &beta) - f(&b, &gamma, &beta)) / (2.0 * h)
            })
            .collect();
        let num_g: Vec<f64> = (0..2)
            .map(|i| {
                let (mut a, mut b) = (gamma, gamma);
                a[i] += h;
                b[i] -= h;
                (f(&x, &a, &beta) - f(&x, &b, &beta)) / (2.0 * h)
            })
            .collect();
        let num_b: Vec<f64> = (0..2)
            .map(|i| {
                let (mut a, mut b) = (beta, beta);
                a[i] += h;
                b[i] -= h;
                (f(&x, &gamma, &a) - f(&x, &gamma, &b)) / (2.0 * h)
            })
            .collect();
        finite_diff_check(dx.data(), &num_x);
        finite_diff_check(&dg, &num_g);
        finite_diff_check(&db, &num_b);
    }

    #[test]
    fn dense_and_pool_gradients_match_finite_differences() {
        let x = Tensor::new(vec![3, 4], (0..12).map(|i| (i as f64 * 0.53).sin()).collect()).unwrap();
        let w: Vec<f64> = (0..8).map(|i| (i as f64 * 0.29).cos()).collect();
        let b = [0.05, -0.3];
        let p = probe(6);
        let f = |x: &Tensor, w: &[f64], b: &[f64]| dot(dense(x, w, b, Activation::None).unwrap().data(), &p);
        let (dx, dw, db) = dense_backward(&x, &w, &Tensor::new(vec![3, 2], p.clone()).unwrap()).unwrap();
        let h = 1e-5;
        for i in 0..x.len() {
            let (mut a, mut c) = (x.clone(), x.clone());
            a.data_mut()[i] += h;
            c.data_mut()[i] -= h;
            finite_diff_check(&[dx.data()[i]], &[(f(&a, &w, &b) - f(&c, &w, &b)) / (2.0 * h)]);
        }
        for i in 0..w.len() {
            let (mut a, mut c) = (w.clone(), w.clone());
            a[i] += h;
            c[i] -= h;
            finite_diff_check(&[dw[i]], &[(f(&x, &a, &b) - f(&x, &c, &b)) / (2.0 * h)]);
        }
        for i in 0..2 {
            let (mut a, mut c) = (b, b);
            a[i] += h;
            c[i] -= h;
            finite_diff_check(&[db[i]], &[(f(&x, &w, &a) - f(&x, &w, &c)) / (2.0 * h)]);
        }

        let xp = grid(2, 3, 3, 2, |i| ((i * 7) % 36) as f64 * 0.1 + (i as f64 * 0.01));
        let (y, arg) = maxpool2x2(&xp).unwrap();
        let p = probe(y.len());
        let dxp = maxpool2x2_backward(xp.shape(), &arg, &Tensor::new(y.shape().to_vec(), p.clone()).unwrap()).unwrap();
        for i in 0..xp.len() {
            let (mut a, mut c) = (xp.clone(), xp.clone());
            a.data_mut()[i] += h;
            c.data_mut()[i] -= h;
            let num = (dot(maxpool2x2(&a).unwrap().0.data(), &p) - dot(maxpool2x2(&c).unwrap().0.data(), &p)) / (2.0 * h);
            finite_diff_check(&[dxp.data()[i]], &[num]);
        }
    }

    proptest! {
        #[test]
        fn softmax_on_simplex(a in -800.0f64..800.0, b in -800.0f64..800.0) {
            let p = softmax2([a, b]).unwrap();
            prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!((p[0] + p[1] - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn conv_is_linear(
            s in -3.0f64..3.0,
            t in -3.0f64..3.0,
            seed in 0usize..1000,
        ) {
            let x = grid(2, 6, 7, 3, |i| ((i + seed) as f64 * 0.77).sin());
            let y = grid(2, 6, 7, 3, |i| ((i * 3 + seed) as f64 * 0.31).cos());
            let wt = grid(5, 5, 3, 4, |i| ((i + 2 * seed) as f64 * 0.13).sin());
            let z = Tensor::new(x.shape().to_vec(), x.data().iter().zip(y.data()).map(|(a, b)| s * a + t * b).collect()).unwrap();
            let cz = conv2d(&z, &wt, &[0.0; 4]).unwrap();
            let cx = conv2d(&x, &wt, &[0.0; 4]).unwrap();
            let cy = conv2d(&y, &wt, &[0.0; 4]).unwrap();
            for ((vz, vx), vy) in cz.data().iter().zip(cx.data()).zip(cy.data()) {
                prop_assert!((vz - (s * vx + t * vy)).abs() <= 1e-10);
            }
        }
    }
}
