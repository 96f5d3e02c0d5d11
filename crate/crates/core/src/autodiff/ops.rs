//! Forward definitions and backward rules for every primitive.
//!
//! Backward closures never hold a RefCell borrow across an
//! `accumulate_grad` call, so ops with repeated arguments (x * x) stay
//! sound.

use alloc::vec;
use alloc::vec::Vec;

use super::{shape_err, ShapeError, Tensor};
use crate::math::{gelu, gelu_grad, Scalar};
use crate::raster::center_align;

use super::kernels::{col2im_add, im2col, matmul_nn, matmul_nt, matmul_tn};

impl<S: Scalar> Tensor<S> {
    fn same_shape(&self, other: &Tensor<S>, op: &'static str) -> Result<(), ShapeError> {
        if self.shape() != other.shape() {
            return Err(shape_err!(
                op,
                "shape mismatch {:?} vs {:?}",
                self.shape(),
                other.shape()
            ));
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor<S>) -> Result<Tensor<S>, ShapeError> {
        self.same_shape(other, "add")?;
        let data: Vec<S> = {
            let a = self.inner.borrow();
            let b = other.inner.borrow();
            a.data.iter().zip(&b.data).map(|(&x, &y)| x + y).collect()
        };
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            self.shape(),
            data,
            vec![self.clone(), other.clone()],
            move |g| {
                a.accumulate_grad(|ga| {
                    for i in 0..g.len() {
                        ga[i] = ga[i] + g[i];
                    }
                });
                b.accumulate_grad(|gb| {
                    for i in 0..g.len() {
                        gb[i] = gb[i] + g[i];
                    }
                });
            },
        ))
    }

    pub fn sub(&self, other: &Tensor<S>) -> Result<Tensor<S>, ShapeError> {
        self.same_shape(other, "sub")?;
        let data: Vec<S> = {
            let a = self.inner.borrow();
            let b = other.inner.borrow();
            a.data.iter().zip(&b.data).map(|(&x, &y)| x - y).collect()
        };
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            self.shape(),
            data,
            vec![self.clone(), other.clone()],
            move |g| {
                a.accumulate_grad(|ga| {
                    for i in 0..g.len() {
                        ga[i] = ga[i] + g[i];
                    }
                });
                b.accumulate_grad(|gb| {
                    for i in 0..g.len() {
                        gb[i] = gb[i] - g[i];
                    }
                });
            },
        ))
    }

    pub fn mul(&self, other: &Tensor<S>) -> Result<Tensor<S>, ShapeError> {
        self.same_shape(other, "mul")?;
        let data: Vec<S> = {
            let a = self.inner.borrow();
            let b = other.inner.borrow();
            a.data.iter().zip(&b.data).map(|(&x, &y)| x * y).collect()
        };
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            self.shape(),
            data,
            vec![self.clone(), other.clone()],
            move |g| {
                let av = a.value();
                let bv = b.value();
                a.accumulate_grad(|ga| {
                    for i in 0..g.len() {
                        ga[i] = ga[i] + g[i] * bv[i];
                    }
                });
                b.accumulate_grad(|gb| {
                    for i in 0..g.len() {
                        gb[i] = gb[i] + g[i] * av[i];
                    }
                });
            },
        ))
    }

    pub fn scale(&self, c: S) -> Tensor<S> {
        let data: Vec<S> = self.inner.borrow().data.iter().map(|&x| x * c).collect();
        let a = self.clone();
        Tensor::from_op(self.shape(), data, vec![self.clone()], move |g| {
            a.accumulate_grad(|ga| {
                for i in 0..g.len() {
                    ga[i] = ga[i] + g[i] * c;
                }
            });
        })
    }

    pub fn add_scalar(&self, c: S) -> Tensor<S> {
        let data: Vec<S> = self.inner.borrow().data.iter().map(|&x| x + c).collect();
        let a = self.clone();
        Tensor::from_op(self.shape(), data, vec![self.clone()], move |g| {
            a.accumulate_grad(|ga| {
                for i in 0..g.len() {
                    ga[i] = ga[i] + g[i];
                }
            });
        })
    }

    pub fn abs(&self) -> Tensor<S> {
        let data: Vec<S> = self.inner.borrow().data.iter().map(|&x| x.abs()).collect();
        let a = self.clone();
        Tensor::from_op(self.shape(), data, vec![self.clone()], move |g| {
            let av = a.value();
            a.accumulate_grad(|ga| {
                for i in 0..g.len() {
                    let s = if av[i] > S::zero() {
                        S::one()
                    } else if av[i] < S::zero() {
                        -S::one()
                    } else {
                        S::zero()
                    };
                    ga[i] = ga[i] + g[i] * s;
                }
            });
        })
    }

    pub fn relu(&self) -> Tensor<S> {
        let data: Vec<S> = self
            .inner
            .borrow()
            .data
            .iter()
            .map(|&x| if x > S::zero() { x } else { S::zero() })
            .collect();
        let a = self.clone();
        Tensor::from_op(self.shape(), data, vec![self.clone()], move |g| {
            let av = a.value();
            a.accumulate_grad(|ga| {
                for i in 0..g.len() {
                    if av[i] > S::zero() {
                        ga[i] = ga[i] + g[i];
                    }
                }
            });
        })
    }

    pub fn gelu(&self) -> Tensor<S> {
        let data: Vec<S> = self.inner.borrow().data.iter().map(|&x| gelu(x)).collect();
        let a = self.clone();
        Tensor::from_op(self.shape(), data, vec![self.clone()], move |g| {
            let av = a.value();
            a.accumulate_grad(|ga| {
                for i in 0..g.len() {
                    ga[i] = ga[i] + g[i] * gelu_grad(av[i]);
                }
            });
        })
    }

    pub fn sum(&self) -> Tensor<S> {
        let total = self
            .inner
            .borrow()
            .data
            .iter()
            .fold(S::zero(), |acc, &x| acc + x);
        let a = self.clone();
        Tensor::from_op(vec![1], vec![total], vec![self.clone()], move |g| {
            let go = g[0];
            a.accumulate_grad(|ga| {
                for v in ga.iter_mut() {
                    *v = *v + go;
                }
            });
        })
    }

    pub fn mean(&self) -> Tensor<S> {
        let n = self.len();
        let inv = S::one() / S::from_f64(n as f64);
        let total = self
            .inner
            .borrow()
            .data
            .iter()
            .fold(S::zero(), |acc, &x| acc + x);
        let a = self.clone();
        Tensor::from_op(vec![1], vec![total * inv], vec![self.clone()], move |g| {
            let go = g[0] * inv;
            a.accumulate_grad(|ga| {
                for v in ga.iter_mut() {
                    *v = *v + go;
                }
            });
        })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<S>, ShapeError> {
        let n: usize = shape.iter().product();
        if n != self.len() {
            return Err(shape_err!(
                "reshape",
                "cannot reshape {:?} to {:?}",
                self.shape(),
                shape
            ));
        }
        let data = self.value();
        let a = self.clone();
        Ok(Tensor::from_op(
            shape.to_vec(),
            data,
            vec![self.clone()],
            move |g| {
                a.accumulate_grad(|ga| {
                    for i in 0..g.len() {
                        ga[i] = ga[i] + g[i];
                    }
                });
            },
        ))
    }

    /// 2-D transpose.
    pub fn transpose(&self) -> Result<Tensor<S>, ShapeError> {
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(shape_err!("transpose", "expected 2-D, got {shape:?}"));
        }
        let (m, n) = (shape[0], shape[1]);
        let src = self.inner.borrow();
        let mut data = vec![S::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src.data[i * n + j];
            }
        }
        drop(src);
        let a = self.clone();
        Ok(Tensor::from_op(
            vec![n, m],
            data,
            vec![self.clone()],
            move |g| {
                a.accumulate_grad(|ga| {
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] = ga[i * n + j] + g[j * m + i];
                        }
                    }
                });
            },
        ))
    }

    /// Matrix product of two 2-D tensors.
    pub fn matmul(&self, other: &Tensor<S>) -> Result<Tensor<S>, ShapeError> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err!("matmul", "incompatible shapes {sa:?} x {sb:?}"));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut data = vec![S::zero(); m * n];
        {
            let a = self.inner.borrow();
            let b = other.inner.borrow();
            matmul_nn(&a.data, &b.data, m, k, n, &mut data);
        }
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            vec![m, n],
            data,
            vec![self.clone(), other.clone()],
            move |g| {
                let av = a.value();
                let bv = b.value();
                a.accumulate_grad(|ga| matmul_nt(g, &bv, m, n, k, ga));
                b.accumulate_grad(|gb| matmul_tn(&av, g, k, m, n, gb));
            },
        ))
    }

    /// Extract a sub-block: `starts[d] .. starts[d] + sizes[d]` per dim.
    pub fn crop(&self, starts: &[usize], sizes: &[usize]) -> Result<Tensor<S>, ShapeError> {
        let shape = self.shape();
        if starts.len() != shape.len() || sizes.len() != shape.len() {
            return Err(shape_err!("crop", "rank mismatch with {shape:?}"));
        }
        for d in 0..shape.len() {
            if sizes[d] == 0 || starts[d] + sizes[d] > shape[d] {
                return Err(shape_err!(
                    "crop",
                    "range {}..{} out of bounds for dim {d} ({})",
                    starts[d],
                    starts[d] + sizes[d],
                    shape[d]
                ));
            }
        }
        let out_len: usize = sizes.iter().product();
        let mut data = vec![S::zero(); out_len];
        let in_strides = strides(&shape);
        let out_strides = strides(sizes);
        {
            let src = self.inner.borrow();
            for flat in 0..out_len {
                let mut src_idx = 0usize;
                for d in 0..shape.len() {
                    let coord = (flat / out_strides[d]) % sizes[d];
                    src_idx += (starts[d] + coord) * in_strides[d];
                }
                data[flat] = src.data[src_idx];
            }
        }
        let a = self.clone();
        let starts = starts.to_vec();
        let sizes_v = sizes.to_vec();
        Ok(Tensor::from_op(
            sizes.to_vec(),
            data,
            vec![self.clone()],
            move |g| {
                let in_strides = strides(&a.shape());
                let out_strides = strides(&sizes_v);
                a.accumulate_grad(|ga| {
                    for flat in 0..g.len() {
                        let mut src_idx = 0usize;
                        for d in 0..sizes_v.len() {
                            let coord = (flat / out_strides[d]) % sizes_v[d];
                            src_idx += (starts[d] + coord) * in_strides[d];
                        }
                        ga[src_idx] = ga[src_idx] + g[flat];
                    }
                });
            },
        ))
    }

    /// Concatenate along `axis`. All other dims must agree.
    pub fn concat(tensors: &[Tensor<S>], axis: usize) -> Result<Tensor<S>, ShapeError> {
        if tensors.is_empty() {
            return Err(shape_err!("concat", "empty tensor list"));
        }
        let base = tensors[0].shape();
        if axis >= base.len() {
            return Err(shape_err!("concat", "axis {axis} out of rank {}", base.len()));
        }
        let mut axis_total = 0usize;
        for t in tensors {
            let s = t.shape();
            if s.len() != base.len() {
                return Err(shape_err!("concat", "rank mismatch"));
            }
            for d in 0..base.len() {
                if d != axis && s[d] != base[d] {
                    return Err(shape_err!(
                        "concat",
                        "dim {d} mismatch: {:?} vs {:?}",
                        s,
                        base
                    ));
                }
            }
            axis_total += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = axis_total;
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = vec![S::zero(); outer * axis_total * inner];
        let mut offsets = Vec::with_capacity(tensors.len());
        let mut off = 0usize;
        for t in tensors {
            let s_axis = t.shape()[axis];
            offsets.push(off);
            let src = t.inner.borrow();
            for o in 0..outer {
                for ai in 0..s_axis {
                    let dst = (o * axis_total + off + ai) * inner;
                    let srcb = (o * s_axis + ai) * inner;
                    data[dst..dst + inner].copy_from_slice(&src.data[srcb..srcb + inner]);
                }
            }
            off += s_axis;
        }
        let handles: Vec<Tensor<S>> = tensors.to_vec();
        let parents = handles.clone();
        Ok(Tensor::from_op(out_shape, data, parents, move |g| {
            for (idx, t) in handles.iter().enumerate() {
                let s_axis = t.shape()[axis];
                let off = offsets[idx];
                t.accumulate_grad(|gt| {
                    for o in 0..outer {
                        for ai in 0..s_axis {
                            let src = (o * axis_total + off + ai) * inner;
                            let dst = (o * s_axis + ai) * inner;
                            for i in 0..inner {
                                gt[dst + i] = gt[dst + i] + g[src + i];
                            }
                        }
                    }
                });
            }
        }))
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Tensor<S> {
        let shape = self.shape();
        let n = *shape.last().expect("softmax on 0-rank tensor");
        let rows = self.len() / n;
        let mut data = self.value();
        for r in 0..rows {
            let row = &mut data[r * n..(r + 1) * n];
            let mut mx = row[0];
            for &v in row.iter() {
                if v > mx {
                    mx = v;
                }
            }
            let mut total = S::zero();
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                total = total + *v;
            }
            for v in row.iter_mut() {
                *v = *v / total;
            }
        }
        let y = data.clone();
        let a = self.clone();
        Tensor::from_op(shape, data, vec![self.clone()], move |g| {
            a.accumulate_grad(|ga| {
                for r in 0..rows {
                    let yr = &y[r * n..(r + 1) * n];
                    let gr = &g[r * n..(r + 1) * n];
                    let mut dot = S::zero();
                    for i in 0..n {
                        dot = dot + yr[i] * gr[i];
                    }
                    for i in 0..n {
                        ga[r * n + i] = ga[r * n + i] + yr[i] * (gr[i] - dot);
                    }
                }
            });
        })
    }

    /// Normalize over the last axis to zero mean / unit variance.
    /// Affine scale and shift are applied by the caller via mul_row/add_row.
    pub fn layer_norm(&self, eps: f64) -> Tensor<S> {
        let shape = self.shape();
        let n = *shape.last().expect("layer_norm on 0-rank tensor");
        let rows = self.len() / n;
        let eps = S::from_f64(eps);
        let inv_n = S::one() / S::from_f64(n as f64);
        let src = self.value();
        let mut data = vec![S::zero(); src.len()];
        let mut istds = vec![S::zero(); rows];
        for r in 0..rows {
            let xr = &src[r * n..(r + 1) * n];
            let mut mu = S::zero();
            for &v in xr {
                mu = mu + v;
            }
            mu = mu * inv_n;
            let mut var = S::zero();
            for &v in xr {
                var = var + (v - mu) * (v - mu);
            }
            var = var * inv_n;
            let istd = S::one() / (var + eps).sqrt();
            istds[r] = istd;
            for i in 0..n {
                data[r * n + i] = (xr[i] - mu) * istd;
            }
        }
        let y = data.clone();
        let a = self.clone();
        Tensor::from_op(shape, data, vec![self.clone()], move |g| {
            a.accumulate_grad(|ga| {
                for r in 0..rows {
                    let yr = &y[r * n..(r + 1) * n];
                    let gr = &g[r * n..(r + 1) * n];
                    let istd = istds[r];
                    let mut gsum = S::zero();
                    let mut gysum = S::zero();
                    for i in 0..n {
                        gsum = gsum + gr[i];
                        gysum = gysum + gr[i] * yr[i];
                    }
                    for i in 0..n {
                        let t = gr[i] - inv_n * gsum - yr[i] * inv_n * gysum;
                        ga[r * n + i] = ga[r * n + i] + istd * t;
                    }
                }
            });
        })
    }

    /// Row-broadcast multiply: self [rows, n] * w [n].
    pub fn mul_row(&self, w: &Tensor<S>) -> Result<Tensor<S>, ShapeError> {
        let shape = self.shape();
        let n = *shape.last().unwrap();
        if w.shape() != vec![n] {
            return Err(shape_err!(
                "mul_row",
                "weight shape {:?} does not match last dim {n}",
                w.shape()
            ));
        }
        let rows = self.len() / n;
        let wv = w.value();
        let data: Vec<S> = self
            .value()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * wv[i % n])
            .collect();
        let (a, b) = (self.clone(), w.clone());
        Ok(Tensor::from_op(
            shape,
            data,
            vec![self.clone(), w.clone()],
            move |g| {
                let av = a.value();
                let bv = b.value();
                a.accumulate_grad(|ga| {
                    for i in 0..g.len() {
                        ga[i] = ga[i] + g[i] * bv[i % n];
                    }
                });
                b.accumulate_grad(|gb| {
                    for r in 0..rows {
                        for i in 0..n {
                            gb[i] = gb[i] + g[r * n + i] * av[r * n + i];
                        }
                    }
                });
            },
        ))
    }

    /// Row-broadcast add: self [rows, n] + b [n].
    pub fn add_row(&self, bias: &Tensor<S>) -> Result<Tensor<S>, ShapeError> {
        let shape = self.shape();
        let n = *shape.last().unwrap();
        if bias.shape() != vec![n] {
            return Err(shape_err!(
                "add_row",
                "bias shape {:?} does not match last dim {n}",
                bias.shape()
            ));
        }
        let rows = self.len() / n;
        let bv = bias.value();
        let data: Vec<S> = self
            .value()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bv[i % n])
            .collect();
        let (a, b) = (self.clone(), bias.clone());
        Ok(Tensor::from_op(
            shape,
            data,
            vec![self.clone(), bias.clone()],
            move |g| {
                a.accumulate_grad(|ga| {
                    for i in 0..g.len() {
                        ga[i] = ga[i] + g[i];
                    }
                });
                b.accumulate_grad(|gb| {
                    for r in 0..rows {
                        for i in 0..n {
                            gb[i] = gb[i] + g[r * n + i];
                        }
                    }
                });
            },
        ))
    }

    /// 2-D convolution: self [Cin,H,W], weight [Cout,Cin,kh,kw],
    /// optional bias [Cout].
    pub fn conv2d(
        &self,
        weight: &Tensor<S>,
        bias: Option<&Tensor<S>>,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor<S>, ShapeError> {
        let xs = self.shape();
        let ws = weight.shape();
        if xs.len() != 3 || ws.len() != 4 || ws[1] != xs[0] {
            return Err(shape_err!(
                "conv2d",
                "input {xs:?} incompatible with weight {ws:?}"
            ));
        }
        let (cin, h, w) = (xs[0], xs[1], xs[2]);
        let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
        if h + 2 * pad < kh || w + 2 * pad < kw || stride == 0 {
            return Err(shape_err!(
                "conv2d",
                "kernel {kh}x{kw} stride {stride} pad {pad} too large for {h}x{w}"
            ));
        }
        if let Some(b) = bias {
            if b.shape() != vec![cout] {
                return Err(shape_err!(
                    "conv2d",
                    "bias shape {:?}, expected [{cout}]",
                    b.shape()
                ));
            }
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        let l = oh * ow;
        let kdim = cin * kh * kw;
        let mut cols = vec![S::zero(); kdim * l];
        {
            let x = self.inner.borrow();
            im2col(&x.data, cin, h, w, kh, kw, stride, pad, &mut cols);
        }
        let mut data = vec![S::zero(); cout * l];
        {
            let wv = weight.inner.borrow();
            matmul_nn(&wv.data, &cols, cout, kdim, l, &mut data);
        }
        if let Some(b) = bias {
            let bv = b.value();
            for c in 0..cout {
                for i in 0..l {
                    data[c * l + i] = data[c * l + i] + bv[c];
                }
            }
        }
        let x_h = self.clone();
        let w_h = weight.clone();
        let b_h = bias.cloned();
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Ok(Tensor::from_op(
            vec![cout, oh, ow],
            data,
            parents,
            move |g| {
                // rebuild columns from the saved input
                let xv = x_h.value();
                let mut cols = vec![S::zero(); kdim * l];
                im2col(&xv, cin, h, w, kh, kw, stride, pad, &mut cols);
                let wv = w_h.value();
                w_h.accumulate_grad(|gw| matmul_nt(g, &cols, cout, l, kdim, gw));
                let mut gcols = vec![S::zero(); kdim * l];
                matmul_tn(&wv, g, kdim, cout, l, &mut gcols);
                x_h.accumulate_grad(|gx| {
                    col2im_add(&gcols, cin, h, w, kh, kw, stride, pad, gx)
                });
                if let Some(b) = &b_h {
                    b.accumulate_grad(|gb| {
                        for c in 0..cout {
                            for i in 0..l {
                                gb[c] = gb[c] + g[c * l + i];
                            }
                        }
                    });
                }
            },
        ))
    }

    /// Bilinear resize of [C,H,W] with the same pixel-center convention as
    /// `raster::bilinear_resample`.
    pub fn bilinear_resize(&self, out_h: usize, out_w: usize) -> Result<Tensor<S>, ShapeError> {
        let xs = self.shape();
        if xs.len() != 3 {
            return Err(shape_err!("bilinear_resize", "expected 3-D, got {xs:?}"));
        }
        if out_h < 1 || out_w < 1 {
            return Err(shape_err!(
                "bilinear_resize",
                "output dims {out_h}x{out_w} invalid"
            ));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let src = self.value();
        let mut data = vec![S::zero(); c * out_h * out_w];
        for r in 0..out_h {
            let (r0, r1, fr) = center_align(r, h, out_h);
            let (fr, fr1) = (S::from_f64(fr), S::from_f64(1.0 - fr));
            for cc in 0..out_w {
                let (c0, c1, fc) = center_align(cc, w, out_w);
                let (fc, fc1) = (S::from_f64(fc), S::from_f64(1.0 - fc));
                for ch in 0..c {
                    let base = ch * h * w;
                    let top = src[base + r0 * w + c0] * fc1 + src[base + r0 * w + c1] * fc;
                    let bot = src[base + r1 * w + c0] * fc1 + src[base + r1 * w + c1] * fc;
                    data[(ch * out_h + r) * out_w + cc] = top * fr1 + bot * fr;
                }
            }
        }
        let a = self.clone();
        Ok(Tensor::from_op(
            vec![c, out_h, out_w],
            data,
            vec![self.clone()],
            move |g| {
                a.accumulate_grad(|ga| {
                    for r in 0..out_h {
                        let (r0, r1, fr) = center_align(r, h, out_h);
                        let (fr, fr1) = (S::from_f64(fr), S::from_f64(1.0 - fr));
                        for cc in 0..out_w {
                            let (c0, c1, fc) = center_align(cc, w, out_w);
                            let (fc, fc1) = (S::from_f64(fc), S::from_f64(1.0 - fc));
                            for ch in 0..c {
                                let base = ch * h * w;
                                let go = g[(ch * out_h + r) * out_w + cc];
                                ga[base + r0 * w + c0] = ga[base + r0 * w + c0] + go * fr1 * fc1;
                                ga[base + r0 * w + c1] = ga[base + r0 * w + c1] + go * fr1 * fc;
                                ga[base + r1 * w + c0] = ga[base + r1 * w + c0] + go * fr * fc1;
                                ga[base + r1 * w + c1] = ga[base + r1 * w + c1] + go * fr * fc;
                            }
                        }
                    }
                });
            },
        ))
    }

    /// Average pooling with a k x k window and stride k over [C,H,W].
    pub fn avg_pool(&self, k: usize) -> Result<Tensor<S>, ShapeError> {
        let xs = self.shape();
        if xs.len() != 3 {
            return Err(shape_err!("avg_pool", "expected 3-D, got {xs:?}"));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        if k == 0 || h % k != 0 || w % k != 0 {
            return Err(shape_err!("avg_pool", "dims {h}x{w} not divisible by {k}"));
        }
        let (oh, ow) = (h / k, w / k);
        let inv = S::one() / S::from_f64((k * k) as f64);
        let src = self.value();
        let mut data = vec![S::zero(); c * oh * ow];
        for ch in 0..c {
            for r in 0..oh {
                for cc in 0..ow {
                    let mut acc = S::zero();
                    for dr in 0..k {
                        for dc in 0..k {
                            acc = acc + src[(ch * h + r * k + dr) * w + cc * k + dc];
                        }
                    }
                    data[(ch * oh + r) * ow + cc] = acc * inv;
                }
            }
        }
        let a = self.clone();
        Ok(Tensor::from_op(
            vec![c, oh, ow],
            data,
            vec![self.clone()],
            move |g| {
                a.accumulate_grad(|ga| {
                    for ch in 0..c {
                        for r in 0..oh {
                            for cc in 0..ow {
                                let go = g[(ch * oh + r) * ow + cc] * inv;
                                for dr in 0..k {
                                    for dc in 0..k {
                                        let idx = (ch * h + r * k + dr) * w + cc * k + dc;
                                        ga[idx] = ga[idx] + go;
                                    }
                                }
                            }
                        }
                    }
                });
            },
        ))
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        s[d] = s[d + 1] * shape[d + 1];
    }
    s
}
