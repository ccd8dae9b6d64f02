//! Forward kernels on plain tensors. The tape in `autograd` reuses these and
//! adds the matching backward rules.

use super::gemm::{gemm, Transpose};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Output extent of a convolution along one axis.
pub fn conv_out_size(size: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (size + 2 * pad - kernel) / stride + 1
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn new<F: Scalar>(
        input: &Tensor<F>,
        kernel: &Tensor<F>,
        bias: Option<&Tensor<F>>,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        input.expect_rank(3, "conv2d input")?;
        kernel.expect_rank(4, "conv2d kernel")?;
        let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let ks = kernel.shape();
        let (c_out, k) = (ks[0], ks[2]);
        if ks[1] != c_in {
            return Err(Error::invalid(format!(
                "conv2d: kernel input channels {} != input channels {c_in}",
                ks[1]
            )));
        }
        if ks[3] != k {
            return Err(Error::invalid(format!(
                "conv2d: kernel height {k} != kernel width {}",
                ks[3]
            )));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d: stride must be >= 1"));
        }
        if h + 2 * pad < k {
            return Err(Error::invalid(format!(
                "conv2d: padded height {} smaller than kernel {k}",
                h + 2 * pad
            )));
        }
        if w + 2 * pad < k {
            return Err(Error::invalid(format!(
                "conv2d: padded width {} smaller than kernel {k}",
                w + 2 * pad
            )));
        }
        if let Some(b) = bias {
            if b.numel() != c_out {
                return Err(Error::invalid(format!(
                    "conv2d: bias length {} != output channels {c_out}",
                    b.numel()
                )));
            }
        }
        Ok(ConvGeom {
            c_in,
            h,
            w,
            c_out,
            k,
            stride,
            pad,
            h_out: conv_out_size(h, k, stride, pad),
            w_out: conv_out_size(w, k, stride, pad),
        })
    }

    pub fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    pub fn out_pixels(&self) -> usize {
        self.h_out * self.w_out
    }

    /// 1x1, stride 1, no padding: the input already is its own column matrix.
    pub fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

pub(crate) fn im2col<F: Scalar>(g: &ConvGeom, input: &[F]) -> Vec<F> {
    let p = g.out_pixels();
    let mut cols = vec![F::zero(); g.patch_len() * p];
    for c in 0..g.c_in {
        let plane = &input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oh in 0..g.h_out {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let src = &plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    let out_row = &mut dst[oh * g.w_out..(oh + 1) * g.w_out];
                    for (ow, o) in out_row.iter_mut().enumerate() {
                        let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                        if iw >= 0 && iw < g.w as isize {
                            *o = src[iw as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

pub(crate) fn col2im<F: Scalar>(g: &ConvGeom, cols: &[F]) -> Vec<F> {
    let p = g.out_pixels();
    let mut out = vec![F::zero(); g.c_in * g.h * g.w];
    for c in 0..g.c_in {
        let plane = &mut out[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oh in 0..g.h_out {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for ow in 0..g.w_out {
                        let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                        if iw >= 0 && iw < g.w as isize {
                            dst[iw as usize] = dst[iw as usize] + src[oh * g.w_out + ow];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Forward convolution given precomputed columns (or the raw input for
/// pointwise kernels).
pub(crate) fn conv_from_cols<F: Scalar>(
    g: &ConvGeom,
    cols: &[F],
    kernel: &[F],
    bias: Option<&[F]>,
) -> Vec<F> {
    let p = g.out_pixels();
    let mut out = vec![F::zero(); g.c_out * p];
    gemm(
        Transpose::No,
        Transpose::No,
        g.c_out,
        p,
        g.patch_len(),
        F::one(),
        kernel,
        cols,
        F::zero(),
        &mut out,
    );
    if let Some(b) = bias {
        for (co, chunk) in out.chunks_mut(p).enumerate() {
            let bv = b[co];
            chunk.iter_mut().for_each(|v| *v = *v + bv);
        }
    }
    out
}

/// 2-D cross-correlation of a `C_in x H x W` input with a
/// `C_out x C_in x k x k` kernel, zero padding on all sides.
pub fn conv2d<F: Scalar>(
    input: &Tensor<F>,
    kernel: &Tensor<F>,
    bias: Option<&Tensor<F>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<F>> {
    let g = ConvGeom::new(input, kernel, bias, stride, pad)?;
    let out = if g.is_pointwise() {
        conv_from_cols(&g, input.data(), kernel.data(), bias.map(|b| b.data()))
    } else {
        let cols = im2col(&g, input.data());
        conv_from_cols(&g, &cols, kernel.data(), bias.map(|b| b.data()))
    };
    Tensor::new(&[g.c_out, g.h_out, g.w_out], out)
}

pub fn matmul<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    a.expect_rank(2, "matmul lhs")?;
    b.expect_rank(2, "matmul rhs")?;
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(Error::invalid(format!(
            "matmul: inner dimensions differ ({k} vs {k2})"
        )));
    }
    let mut out = vec![F::zero(); m * n];
    gemm(Transpose::No, Transpose::No, m, n, k, F::one(), a.data(), b.data(), F::zero(), &mut out);
    Tensor::new(&[m, n], out)
}

pub fn transpose<F: Scalar>(a: &Tensor<F>) -> Result<Tensor<F>> {
    a.expect_rank(2, "transpose")?;
    let (m, n) = (a.shape()[0], a.shape()[1]);
    let src = a.data();
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = src[i * n + j];
        }
    }
    Tensor::new(&[n, m], out)
}

pub fn relu<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    x.map(|v| if v > F::zero() { v } else { F::zero() })
}

pub fn add<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    if a.shape() != b.shape() {
        return Err(Error::invalid(format!(
            "add: shapes differ ({:?} vs {:?})",
            a.shape(),
            b.shape()
        )));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| *x + *y).collect();
    Tensor::new(a.shape(), data)
}

/// Concatenates along the leading axis; all trailing extents must agree.
pub fn concat_leading<F: Scalar>(parts: &[&Tensor<F>]) -> Result<Tensor<F>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("concat: no inputs"))?;
    let tail = &first.shape()[1..];
    let mut lead = 0;
    let mut data = Vec::with_capacity(parts.iter().map(|p| p.numel()).sum());
    for p in parts {
        if p.rank() != first.rank() || &p.shape()[1..] != tail {
            return Err(Error::invalid(format!(
                "concat: trailing extents differ ({:?} vs {:?})",
                p.shape(),
                first.shape()
            )));
        }
        lead += p.shape()[0];
        data.extend_from_slice(p.data());
    }
    let mut shape = first.shape().to_vec();
    shape[0] = lead;
    Tensor::new(&shape, data)
}

/// Channel concatenation of `C1 x H x W` and `C2 x H x W` maps.
pub fn concat_channels<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    a.expect_rank(3, "concat_channels lhs")?;
    b.expect_rank(3, "concat_channels rhs")?;
    if a.shape()[1..] != b.shape()[1..] {
        return Err(Error::invalid(format!(
            "concat_channels: spatial extents differ ({:?} vs {:?})",
            &a.shape()[1..],
            &b.shape()[1..]
        )));
    }
    concat_leading(&[a, b])
}

/// In-place column softmax of an `m x k` buffer with temperature `scale`.
pub(crate) fn softmax_columns_inplace<F: Scalar>(data: &mut [F], m: usize, k: usize, scale: F) {
    let inv = F::one() / scale;
    let mut col_max = vec![F::neg_infinity(); k];
    for row in data.chunks(k) {
        for (mx, &v) in col_max.iter_mut().zip(row) {
            *mx = mx.max(v * inv);
        }
    }
    let mut col_sum = vec![F::zero(); k];
    for row in data.chunks_mut(k) {
        for ((v, mx), s) in row.iter_mut().zip(&col_max).zip(col_sum.iter_mut()) {
            let e = (*v * inv - *mx).exp();
            *v = e;
            *s = *s + e;
        }
    }
    for s in col_sum.iter_mut() {
        *s = F::one() / *s;
    }
    for row in data.chunks_mut(k) {
        for (v, s) in row.iter_mut().zip(&col_sum) {
            *v = *v * *s;
        }
    }
    debug_assert_eq!(data.len(), m * k);
}

/// Column-wise softmax of `logits / scale`, with per-column max subtraction.
pub fn softmax_columns<F: Scalar>(logits: &Tensor<F>, scale: F) -> Result<Tensor<F>> {
    logits.expect_rank(2, "softmax_columns")?;
    if !(scale > F::zero()) {
        return Err(Error::invalid("softmax_columns: scale must be > 0"));
    }
    let (m, k) = (logits.shape()[0], logits.shape()[1]);
    let mut out = logits.clone();
    softmax_columns_inplace(out.data_mut(), m, k, scale);
    Ok(out)
}

#[inline]
pub fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// `ln(sigmoid(x))` without cancellation for large |x|.
#[inline]
pub fn log_sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Six nested loops, no im2col.
    fn naive_conv(
        input: &Tensor<f64>,
        kernel: &Tensor<f64>,
        bias: &Tensor<f64>,
        stride: usize,
        pad: usize,
    ) -> Tensor<f64> {
        let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (c_out, k) = (kernel.shape()[0], kernel.shape()[2]);
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        let mut out = Tensor::zeros(&[c_out, ho, wo]);
        for co in 0..c_out {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias.data()[co];
                    for ci in 0..c_in {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += input.data()[(ci * h + iy as usize) * w + ix as usize]
                                    * kernel.data()[((co * c_in + ci) * k + ky) * k + kx];
                            }
                        }
                    }
                    out.data_mut()[(co * ho + oy) * wo + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_identity_kernel() {
        let x = Tensor::<f32>::ones(&[1, 3, 3]);
        let k = Tensor::ones(&[1, 1, 1, 1]);
        let b = Tensor::zeros(&[1]);
        let y = conv2d(&x, &k, Some(&b), 1, 0).unwrap();
        assert_eq!(y, Tensor::ones(&[1, 3, 3]));
    }

    #[test]
    fn conv_hand_sum() {
        let x = Tensor::<f32>::new(&[1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        let k = Tensor::ones(&[1, 1, 2, 2]);
        let y = conv2d(&x, &k, None, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[10.0]);
    }

    #[test]
    fn conv_strided_shape() {
        let x = Tensor::<f32>::ones(&[1, 4, 4]);
        let k = Tensor::ones(&[1, 1, 3, 3]);
        let y = conv2d(&x, &k, None, 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = Tensor::<f32>::ones(&[2, 4, 4]);
        let k = Tensor::ones(&[1, 3, 3, 3]);
        let err = conv2d(&x, &k, None, 1, 1).unwrap_err().to_string();
        assert!(err.contains("input channels"), "{err}");
        let k = Tensor::ones(&[1, 2, 5, 5]);
        let err = conv2d(&Tensor::<f32>::ones(&[2, 2, 2]), &k, None, 1, 1)
            .unwrap_err()
            .to_string();
        assert!(err.contains("height"), "{err}");
    }

    #[test]
    fn conv_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..12 {
            let c_in = rng.gen_range(1..=8);
            let c_out = rng.gen_range(1..=6);
            let h = rng.gen_range(3..=16);
            let w = rng.gen_range(3..=16);
            let k = rng.gen_range(1..=3);
            let stride = rng.gen_range(1..=2);
            let pad = rng.gen_range(0..=1);
            // Integer-valued data keeps every partial sum exact, so any
            // accumulation order must reproduce the loop result bit for bit.
            let x = Tensor::from_fn(&[c_in, h, w], |_| rng.gen_range(-4..=4) as f64);
            let kk = Tensor::from_fn(&[c_out, c_in, k, k], |_| rng.gen_range(-3..=3) as f64);
            let b = Tensor::from_fn(&[c_out], |_| rng.gen_range(-2..=2) as f64);
            let fast = conv2d(&x, &kk, Some(&b), stride, pad).unwrap();
            assert_eq!(fast, naive_conv(&x, &kk, &b, stride, pad));

            let x = Tensor::from_fn(&[c_in, h, w], |_| rng.gen_range(-1.0..1.0));
            let kk = Tensor::from_fn(&[c_out, c_in, k, k], |_| rng.gen_range(-1.0..1.0));
            let fast = conv2d(&x, &kk, Some(&b), stride, pad).unwrap();
            assert!(fast.max_abs_diff(&naive_conv(&x, &kk, &b, stride, pad)) < 1e-12);
        }
    }

    #[test]
    fn matmul_identity() {
        let a = Tensor::<f32>::new(&[2, 2], vec![1., 0., 0., 1.]).unwrap();
        let b = Tensor::new(&[2, 1], vec![5., 7.]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[5., 7.]);
        assert!(matmul(&b, &a).is_err());
    }

    #[test]
    fn matmul_is_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (m, k, n, p) = (
                rng.gen_range(1..6),
                rng.gen_range(1..6),
                rng.gen_range(1..6),
                rng.gen_range(1..6),
            );
            let a = Tensor::<f32>::from_fn(&[m, k], |_| rng.gen_range(-1.0..1.0));
            let b = Tensor::from_fn(&[k, n], |_| rng.gen_range(-1.0..1.0));
            let c = Tensor::from_fn(&[n, p], |_| rng.gen_range(-1.0..1.0));
            let lhs = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            let rhs = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            for (x, y) in lhs.data().iter().zip(rhs.data()) {
                assert!((x - y).abs() <= 1e-5 * x.abs().max(y.abs()).max(1.0));
            }
        }
    }

    #[test]
    fn relu_and_concat() {
        let x = Tensor::<f32>::new(&[3], vec![-1., 0., 2.]).unwrap();
        assert_eq!(relu(&x).data(), &[0., 0., 2.]);
        let a = Tensor::<f32>::zeros(&[1, 2, 2]);
        let b = Tensor::<f32>::ones(&[3, 2, 2]);
        assert_eq!(concat_channels(&a, &b).unwrap().shape(), &[4, 2, 2]);
        assert!(concat_channels(&a, &Tensor::zeros(&[1, 3, 2])).is_err());
    }

    #[test]
    fn softmax_examples() {
        let x = Tensor::<f64>::full(&[4, 1], 3.0);
        assert!(softmax_columns(&x, 1.0).unwrap().data().iter().all(|&v| (v - 0.25).abs() < 1e-15));

        let x = Tensor::<f64>::new(&[2, 1], vec![2f64.ln(), 0.0]).unwrap();
        let y = softmax_columns(&x, 1.0).unwrap();
        assert!((y.data()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((y.data()[1] - 1.0 / 3.0).abs() < 1e-15);

        let x = Tensor::<f64>::new(&[2, 1], vec![1000.0, 0.0]).unwrap();
        let y = softmax_columns(&x, 1.0).unwrap();
        assert!(y.all_finite());
        assert!((y.data()[0] - 1.0).abs() < 1e-12 && y.data()[1].abs() < 1e-12);

        assert!(softmax_columns(&x, 0.0).is_err());
    }

    #[test]
    fn log_sigmoid_is_stable() {
        assert!((log_sigmoid(-1000.0f64) + 1000.0).abs() < 1e-9);
        assert!(log_sigmoid(1000.0f64).abs() < 1e-12);
        assert!((sigmoid(0.0f32) - 0.5).abs() < 1e-7);
    }
}
