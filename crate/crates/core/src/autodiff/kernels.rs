//! Raw numeric kernels behind the recorded operations.
//!
//! These are plain tensor-in/tensor-out functions with no knowledge of the
//! graph. Loops are written directly; everything here runs at desk scale.

use crate::scalar::Scalar;
use crate::tensor::TensorBase;

pub(super) fn matmul<F: Scalar>(a: &TensorBase<F>, b: &TensorBase<F>) -> TensorBase<F> {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    debug_assert_eq!(k, b.shape()[0]);
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a.at2(i, p);
            for j in 0..n {
                out[i * n + j] += aip * b.at2(p, j);
            }
        }
    }
    TensorBase::from_raw(vec![m, n], out)
}

pub(super) fn transpose<F: Scalar>(a: &TensorBase<F>) -> TensorBase<F> {
    let (m, n) = (a.shape()[0], a.shape()[1]);
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.at2(i, j);
        }
    }
    TensorBase::from_raw(vec![n, m], out)
}

/// Spatial extent of a convolution output along one axis.
pub fn conv_out_extent(input: usize, kernel: usize, pad: usize, stride: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Cross-correlation: x [B,Cin,H,W] * k [Cout,Cin,kH,kW] -> [B,Cout,Ho,Wo].
pub(super) fn conv2d<F: Scalar>(
    x: &TensorBase<F>,
    k: &TensorBase<F>,
    pad: usize,
    stride: usize,
) -> TensorBase<F> {
    let (batch, c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (c_out, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    debug_assert_eq!(c_in, k.shape()[1]);
    let ho = conv_out_extent(h, kh, pad, stride).expect("validated by caller");
    let wo = conv_out_extent(w, kw, pad, stride).expect("validated by caller");

    let mut out = vec![F::zero(); batch * c_out * ho * wo];
    for b in 0..batch {
        for o in 0..c_out {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = F::zero();
                    for c in 0..c_in {
                        for p in 0..kh {
                            let u = (i * stride + p) as isize - pad as isize;
                            if u < 0 || u as usize >= h {
                                continue;
                            }
                            for q in 0..kw {
                                let v = (j * stride + q) as isize - pad as isize;
                                if v < 0 || v as usize >= w {
                                    continue;
                                }
                                acc += x.at4(b, c, u as usize, v as usize) * k.at4(o, c, p, q);
                            }
                        }
                    }
                    out[((b * c_out + o) * ho + i) * wo + j] = acc;
                }
            }
        }
    }
    TensorBase::from_raw(vec![batch, c_out, ho, wo], out)
}

/// Adjoint of `conv2d` with respect to its input: scatters the output
/// gradient back through the kernel. `x_shape` is the input shape of the
/// forward call.
pub(super) fn conv2d_grad_input<F: Scalar>(
    g: &TensorBase<F>,
    k: &TensorBase<F>,
    pad: usize,
    stride: usize,
    x_shape: &[usize],
) -> TensorBase<F> {
    let (batch, c_in, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let (c_out, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let (ho, wo) = (g.shape()[2], g.shape()[3]);

    let mut out = vec![F::zero(); batch * c_in * h * w];
    for b in 0..batch {
        for o in 0..c_out {
            for i in 0..ho {
                for j in 0..wo {
                    let gval = g.at4(b, o, i, j);
                    for c in 0..c_in {
                        for p in 0..kh {
                            let u = (i * stride + p) as isize - pad as isize;
                            if u < 0 || u as usize >= h {
                                continue;
                            }
                            for q in 0..kw {
                                let v = (j * stride + q) as isize - pad as isize;
                                if v < 0 || v as usize >= w {
                                    continue;
                                }
                                out[((b * c_in + c) * h + u as usize) * w + v as usize] +=
                                    gval * k.at4(o, c, p, q);
                            }
                        }
                    }
                }
            }
        }
    }
    TensorBase::from_raw(vec![batch, c_in, h, w], out)
}

/// Adjoint of `conv2d` with respect to its kernel.
pub(super) fn conv2d_grad_kernel<F: Scalar>(
    x: &TensorBase<F>,
    g: &TensorBase<F>,
    pad: usize,
    stride: usize,
    k_shape: &[usize],
) -> TensorBase<F> {
    let (batch, c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (c_out, kh, kw) = (k_shape[0], k_shape[2], k_shape[3]);
    let (ho, wo) = (g.shape()[2], g.shape()[3]);

    let mut out = vec![F::zero(); c_out * c_in * kh * kw];
    for b in 0..batch {
        for o in 0..c_out {
            for i in 0..ho {
                for j in 0..wo {
                    let gval = g.at4(b, o, i, j);
                    for c in 0..c_in {
                        for p in 0..kh {
                            let u = (i * stride + p) as isize - pad as isize;
                            if u < 0 || u as usize >= h {
                                continue;
                            }
                            for q in 0..kw {
                                let v = (j * stride + q) as isize - pad as isize;
                                if v < 0 || v as usize >= w {
                                    continue;
                                }
                                out[((o * c_in + c) * kh + p) * kw + q] +=
                                    gval * x.at4(b, c, u as usize, v as usize);
                            }
                        }
                    }
                }
            }
        }
    }
    TensorBase::from_raw(vec![c_out, c_in, kh, kw], out)
}

/// Forward differences along the row (height) axis: [B,C,H,W] -> [B,C,H-1,W].
pub(super) fn diff_rows<F: Scalar>(a: &TensorBase<F>) -> TensorBase<F> {
    let (b, c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2], a.shape()[3]);
    let mut out = vec![F::zero(); b * c * (h - 1) * w];
    let mut idx = 0;
    for bi in 0..b {
        for ci in 0..c {
            for i in 0..h - 1 {
                for j in 0..w {
                    out[idx] = a.at4(bi, ci, i + 1, j) - a.at4(bi, ci, i, j);
                    idx += 1;
                }
            }
        }
    }
    TensorBase::from_raw(vec![b, c, h - 1, w], out)
}

/// Adjoint of `diff_rows`: [B,C,H-1,W] -> [B,C,H,W].
pub(super) fn diff_rows_adjoint<F: Scalar>(r: &TensorBase<F>) -> TensorBase<F> {
    let (b, c, hm1, w) = (r.shape()[0], r.shape()[1], r.shape()[2], r.shape()[3]);
    let h = hm1 + 1;
    let mut out = vec![F::zero(); b * c * h * w];
    for bi in 0..b {
        for ci in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let mut acc = F::zero();
                    if i >= 1 {
                        acc += r.at4(bi, ci, i - 1, j);
                    }
                    if i < hm1 {
                        acc -= r.at4(bi, ci, i, j);
                    }
                    out[((bi * c + ci) * h + i) * w + j] = acc;
                }
            }
        }
    }
    TensorBase::from_raw(vec![b, c, h, w], out)
}

/// Forward differences along the column (width) axis: [B,C,H,W] -> [B,C,H,W-1].
pub(super) fn diff_cols<F: Scalar>(a: &TensorBase<F>) -> TensorBase<F> {
    let (b, c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2], a.shape()[3]);
    let mut out = vec![F::zero(); b * c * h * (w - 1)];
    let mut idx = 0;
    for bi in 0..b {
        for ci in 0..c {
            for i in 0..h {
                for j in 0..w - 1 {
                    out[idx] = a.at4(bi, ci, i, j + 1) - a.at4(bi, ci, i, j);
                    idx += 1;
                }
            }
        }
    }
    TensorBase::from_raw(vec![b, c, h, w - 1], out)
}

/// Adjoint of `diff_cols`: [B,C,H,W-1] -> [B,C,H,W].
pub(super) fn diff_cols_adjoint<F: Scalar>(r: &TensorBase<F>) -> TensorBase<F> {
    let (b, c, h, wm1) = (r.shape()[0], r.shape()[1], r.shape()[2], r.shape()[3]);
    let w = wm1 + 1;
    let mut out = vec![F::zero(); b * c * h * w];
    for bi in 0..b {
        for ci in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let mut acc = F::zero();
                    if j >= 1 {
                        acc += r.at4(bi, ci, i, j - 1);
                    }
                    if j < wm1 {
                        acc -= r.at4(bi, ci, i, j);
                    }
                    out[((bi * c + ci) * h + i) * w + j] = acc;
                }
            }
        }
    }
    TensorBase::from_raw(vec![b, c, h, w], out)
}
