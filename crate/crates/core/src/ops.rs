//! Differentiable operators with hand-written backward passes.
//!
//! Each forward function is pure. Backward functions take whatever the
//! forward pass needs to be replayed (input, output or recorded indices) and
//! return gradients with respect to the forward inputs.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Lower clamp applied to predictions inside [`bce_loss`].
pub const BCE_EPS: f64 = 1e-6;

struct ConvGeometry {
    c: usize,
    h: usize,
    w: usize,
    out_c: usize,
    k: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

fn conv_geometry(input: &[usize], weight: &[usize], bias: &[usize], pad: usize) -> Result<ConvGeometry> {
    if input.len() != 3 || weight.len() != 4 || weight[2] != weight[3] {
        return Err(Error::shape("conv2d", input, weight));
    }
    let (c, h, w) = (input[0], input[1], input[2]);
    let (out_c, in_c, k) = (weight[0], weight[1], weight[2]);
    if in_c != c {
        return Err(Error::shape("conv2d", input, weight));
    }
    if bias != [out_c] {
        return Err(Error::shape("conv2d bias", weight, bias));
    }
    if h + 2 * pad < k || w + 2 * pad < k {
        return Err(Error::shape("conv2d", input, weight));
    }
    Ok(ConvGeometry {
        c,
        h,
        w,
        out_c,
        k,
        pad,
        out_h: h + 2 * pad - k + 1,
        out_w: w + 2 * pad - k + 1,
    })
}

fn im2col<T: Scalar>(input: &[T], g: &ConvGeometry) -> Vec<T> {
    let n = g.out_h * g.out_w;
    let mut cols = vec![T::zero(); g.c * g.k * g.k * n];
    for c in 0..g.c {
        let plane = &input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = &mut cols[((c * g.k + ky) * g.k + kx) * n..][..n];
                for oy in 0..g.out_h {
                    let iy = oy as isize + ky as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..][..g.w];
                    let dst = &mut row[oy * g.out_w..][..g.out_w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = ox as isize + kx as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], g: &ConvGeometry) -> Vec<T> {
    let n = g.out_h * g.out_w;
    let mut out = vec![T::zero(); g.c * g.h * g.w];
    for c in 0..g.c {
        let plane = &mut out[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = &cols[((c * g.k + ky) * g.k + kx) * n..][..n];
                for oy in 0..g.out_h {
                    let iy = oy as isize + ky as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..][..g.w];
                    let src = &row[oy * g.out_w..][..g.out_w];
                    for (ox, &s) in src.iter().enumerate() {
                        let ix = ox as isize + kx as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] = dst[ix as usize] + s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// 2-D cross-correlation of a `C × H × W` input with an `O × C × k × k`
/// kernel, zero padding `padding` on every side, stride 1.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = conv_geometry(input.shape(), weight.shape(), bias.shape(), padding)?;
    let n = g.out_h * g.out_w;
    let ckk = g.c * g.k * g.k;
    let mut out = vec![T::zero(); g.out_c * n];
    for (o, row) in out.chunks_mut(n.max(1)).enumerate().take(g.out_c) {
        row.iter_mut().for_each(|v| *v = bias.data()[o]);
    }
    let cols;
    let rhs: &[T] = if g.k == 1 && g.pad == 0 {
        input.data()
    } else {
        cols = im2col(input.data(), &g);
        &cols
    };
    T::gemm(
        g.out_c,
        ckk,
        n,
        T::one(),
        weight.data(),
        ckk as isize,
        1,
        rhs,
        n as isize,
        1,
        T::one(),
        &mut out,
        n as isize,
        1,
    );
    Tensor::from_vec(&[g.out_c, g.out_h, g.out_w], out)
}

/// Gradients of [`conv2d`]: `(d input, d weight, d bias)`.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    padding: usize,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let bias_shape = [weight.shape()[0]];
    let g = conv_geometry(input.shape(), weight.shape(), &bias_shape, padding)?;
    if grad_out.shape() != [g.out_c, g.out_h, g.out_w] {
        return Err(Error::shape(
            "conv2d_backward",
            grad_out.shape(),
            &[g.out_c, g.out_h, g.out_w],
        ));
    }
    let n = g.out_h * g.out_w;
    let ckk = g.c * g.k * g.k;
    let direct = g.k == 1 && g.pad == 0;
    let cols_owned;
    let cols: &[T] = if direct {
        input.data()
    } else {
        cols_owned = im2col(input.data(), &g);
        &cols_owned
    };

    let mut gw = vec![T::zero(); g.out_c * ckk];
    T::gemm(
        g.out_c,
        n,
        ckk,
        T::one(),
        grad_out.data(),
        n as isize,
        1,
        cols,
        1,
        n as isize,
        T::zero(),
        &mut gw,
        ckk as isize,
        1,
    );
    let gb: Vec<T> = grad_out
        .data()
        .chunks(n.max(1))
        .take(g.out_c)
        .map(|row| row.iter().copied().sum())
        .collect();

    let mut gcols = vec![T::zero(); ckk * n];
    T::gemm(
        ckk,
        g.out_c,
        n,
        T::one(),
        weight.data(),
        1,
        ckk as isize,
        grad_out.data(),
        n as isize,
        1,
        T::zero(),
        &mut gcols,
        n as isize,
        1,
    );
    let gin = if direct { gcols } else { col2im(&gcols, &g) };
    Ok((
        Tensor::from_vec(input.shape(), gin)?,
        Tensor::from_vec(weight.shape(), gw)?,
        Tensor::from_vec(&bias_shape, gb)?,
    ))
}

/// 2×2 max pooling with stride 2. Returns the pooled tensor and, per output
/// element, the flat input index that won. Ties go to the first element in
/// row-major order within the window.
pub fn maxpool2<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    if input.shape().len() != 3 {
        return Err(Error::shape("maxpool2", input.shape(), &[0, 0, 0]));
    }
    let (c, h, w) = input.chw();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "maxpool2 needs even spatial extents, got {h}×{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let src = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let candidates = [
                    base + (2 * oy) * w + 2 * ox,
                    base + (2 * oy) * w + 2 * ox + 1,
                    base + (2 * oy + 1) * w + 2 * ox,
                    base + (2 * oy + 1) * w + 2 * ox + 1,
                ];
                let mut best = candidates[0];
                for &cand in &candidates[1..] {
                    if src[cand] > src[best] {
                        best = cand;
                    }
                }
                out.push(src[best]);
                idx.push(best);
            }
        }
    }
    Ok((Tensor::from_vec(&[c, oh, ow], out)?, idx))
}

pub fn maxpool2_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    argmax: &[usize],
    input_shape: &[usize],
) -> Tensor<T> {
    let mut g = Tensor::zeros(input_shape);
    let gd = g.data_mut();
    for (&i, &v) in argmax.iter().zip(grad_out.data()) {
        gd[i] = gd[i] + v;
    }
    g
}

/// Interpolation taps for one axis of a 2× half-pixel-center upsample.
fn upsample_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear 2× upsampling; output pixel `o` samples input coordinate
/// `(o + 0.5) / 2 − 0.5`, clamped to the border.
pub fn bilinear_upsample2<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = input.chw();
    let ty = upsample_taps(h);
    let tx = upsample_taps(w);
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Tensor::zeros(&[c, oh, ow]);
    for ch in 0..c {
        let src = input.channel(ch);
        let dst = out.channel_mut(ch);
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::from_f64(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::from_f64(fx);
                let top = src[y0 * w + x0] * (T::one() - fx) + src[y0 * w + x1] * fx;
                let bot = src[y1 * w + x0] * (T::one() - fx) + src[y1 * w + x1] * fx;
                dst[oy * ow + ox] = top * (T::one() - fy) + bot * fy;
            }
        }
    }
    out
}

pub fn bilinear_upsample2_backward<T: Scalar>(grad_out: &Tensor<T>) -> Tensor<T> {
    let (c, oh, ow) = grad_out.chw();
    let (h, w) = (oh / 2, ow / 2);
    let ty = upsample_taps(h);
    let tx = upsample_taps(w);
    let mut g = Tensor::zeros(&[c, h, w]);
    for ch in 0..c {
        let src = grad_out.channel(ch);
        let dst = g.channel_mut(ch);
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::from_f64(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::from_f64(fx);
                let v = src[oy * ow + ox];
                let top = v * (T::one() - fy);
                let bot = v * fy;
                dst[y0 * w + x0] = dst[y0 * w + x0] + top * (T::one() - fx);
                dst[y0 * w + x1] = dst[y0 * w + x1] + top * fx;
                dst[y1 * w + x0] = dst[y1 * w + x0] + bot * (T::one() - fx);
                dst[y1 * w + x1] = dst[y1 * w + x1] + bot * fx;
            }
        }
    }
    g
}

/// Channel-wise concatenation. A zero-channel operand is allowed and acts as
/// the identity.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape().len() != 3 || b.shape().len() != 3 || a.shape()[1..] != b.shape()[1..] {
        return Err(Error::shape("concat_channels", a.shape(), b.shape()));
    }
    let (ca, h, w) = a.chw();
    let cb = b.channels();
    let mut data = Vec::with_capacity((ca + cb) * h * w);
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::from_vec(&[ca + cb, h, w], data)
}

/// Splits a concatenated gradient back into the two operands' gradients.
pub fn concat_channels_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    channels_a: usize,
) -> (Tensor<T>, Tensor<T>) {
    let c = grad_out.channels();
    (
        grad_out.slice_channels(0, channels_a),
        grad_out.slice_channels(channels_a, c),
    )
}

pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(sigmoid_scalar)
}

/// Backward of [`sigmoid`] given its output `y`.
pub fn sigmoid_backward<T: Scalar>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| g * y * (T::one() - y))
        .collect();
    Tensor::from_vec(output.shape(), data).expect("same shape")
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Backward of [`relu`] given its output.
pub fn relu_backward<T: Scalar>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| if y > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(output.shape(), data).expect("same shape")
}

/// Mean binary cross-entropy and its gradient with respect to `predicted`.
///
/// Predictions are clamped to `[BCE_EPS, 1 − BCE_EPS]` before the log; the
/// gradient is zero where the clamp is active.
pub fn bce_loss<T: Scalar>(predicted: &[T], target: &[T]) -> Result<(f64, Vec<T>)> {
    if predicted.len() != target.len() {
        return Err(Error::shape("bce_loss", &[predicted.len()], &[target.len()]));
    }
    let n = predicted.len().max(1) as f64;
    let mut loss = 0.0f64;
    let mut grad = Vec::with_capacity(predicted.len());
    for (&p, &t) in predicted.iter().zip(target) {
        let praw = p.as_f64();
        let pc = praw.clamp(BCE_EPS, 1.0 - BCE_EPS);
        let t = t.as_f64();
        loss -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
        let g = if praw < BCE_EPS || praw > 1.0 - BCE_EPS {
            0.0
        } else {
            (pc - t) / (pc * (1.0 - pc)) / n
        };
        grad.push(T::from_f64(g));
    }
    Ok((loss / n, grad))
}

/// Tensor form of [`bce_loss`].
pub fn bce_loss_tensor<T: Scalar>(
    predicted: &Tensor<T>,
    target: &Tensor<T>,
) -> Result<(f64, Tensor<T>)> {
    if predicted.shape() != target.shape() {
        return Err(Error::shape("bce_loss", predicted.shape(), target.shape()));
    }
    let (loss, grad) = bce_loss(predicted.data(), target.data())?;
    Ok((loss, Tensor::from_vec(predicted.shape(), grad)?))
}

/// 2×2 average pooling (no gradient; used for conditioning pyramids).
pub fn avgpool2<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = input.chw();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "avgpool2 needs even spatial extents, got {h}×{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::from_f64(0.25);
    let mut out = Tensor::zeros(&[c, oh, ow]);
    for ch in 0..c {
        let src = input.channel(ch);
        let dst = out.channel_mut(ch);
        for y in 0..oh {
            for x in 0..ow {
                let s = src[2 * y * w + 2 * x]
                    + src[2 * y * w + 2 * x + 1]
                    + src[(2 * y + 1) * w + 2 * x]
                    + src[(2 * y + 1) * w + 2 * x + 1];
                dst[y * ow + x] = s * quarter;
            }
        }
    }
    Ok(out)
}
