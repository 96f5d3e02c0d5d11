//! Raw dense kernels used by the autodiff ops. All matrices row-major.

use crate::math::Scalar;

/// out += a[m,k] * b[k,n]
pub fn matmul_nn<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize, out: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] = orow[j] + av * brow[j];
            }
        }
    }
}

/// out += a[m,k] * b[n,k]^T  (i.e. out[i,j] += sum_p a[i,p] b[j,p])
pub fn matmul_nt<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize, out: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = S::zero();
            for p in 0..k {
                acc = acc + arow[p] * brow[p];
            }
            orow[j] = orow[j] + acc;
        }
    }
}

/// out += a[k,m]^T * b[k,n]  (i.e. out[i,j] += sum_p a[p,i] b[p,j])
pub fn matmul_tn<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize, out: &mut [S]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] = orow[j] + av * brow[j];
            }
        }
    }
}

/// Unfold `x` [C,H,W] into columns [C*kh*kw, oh*ow] for convolution with
/// the given stride and zero padding.
#[allow(clippy::too_many_arguments)]
pub fn im2col<S: Scalar>(
    x: &[S],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    cols: &mut [S],
) {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    debug_assert_eq!(cols.len(), c * kh * kw * oh * ow);
    let l = oh * ow;
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((ci * kh + ki) * kw + kj) * l;
                for oi in 0..oh {
                    let ii = oi * stride + ki;
                    let in_row = ii.wrapping_sub(pad);
                    for oj in 0..ow {
                        let jj = oj * stride + kj;
                        let in_col = jj.wrapping_sub(pad);
                        cols[row + oi * ow + oj] = if in_row < h && in_col < w {
                            x[(ci * h + in_row) * w + in_col]
                        } else {
                            S::zero()
                        };
                    }
                }
            }
        }
    }
}

/// Transpose of [`im2col`]: scatter-add columns back into the image grad.
#[allow(clippy::too_many_arguments)]
pub fn col2im_add<S: Scalar>(
    cols: &[S],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    gx: &mut [S],
) {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let l = oh * ow;
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((ci * kh + ki) * kw + kj) * l;
                for oi in 0..oh {
                    let in_row = (oi * stride + ki).wrapping_sub(pad);
                    if in_row >= h {
                        continue;
                    }
                    for oj in 0..ow {
                        let in_col = (oj * stride + kj).wrapping_sub(pad);
                        if in_col >= w {
                            continue;
                        }
                        let idx = (ci * h + in_row) * w + in_col;
                        gx[idx] = gx[idx] + cols[row + oi * ow + oj];
                    }
                }
            }
        }
    }
}
