use super::{numel, BackCtx, TResult, Tensor, TensorError};

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

/// `b` must equal `a` in shape or match a trailing block of it.
fn broadcast_len(op: &'static str, a: &Tensor, b: &Tensor) -> Result<usize, TensorError> {
    let (sa, sb) = (a.shape(), b.shape());
    if sb.len() <= sa.len() && sa[sa.len() - sb.len()..] == *sb {
        Ok(numel(sb))
    } else {
        Err(shape_err(op, a, b))
    }
}

fn fold_broadcast(g: &[f64], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for chunk in g.chunks(len.max(1)) {
        out.iter_mut().zip(chunk).for_each(|(o, x)| *o += x);
    }
    out
}

fn last_dim(t: &Tensor) -> usize {
    t.shape().last().copied().unwrap_or(1)
}

fn unary(x: &Tensor, f: impl Fn(f64) -> f64, df: impl Fn(f64, f64) -> f64 + 'static) -> Tensor {
    let data: Vec<f64> = x.data().iter().map(|&v| f(v)).collect();
    Tensor::from_op(x.shape().to_vec(), data, vec![x.clone()], move |c: &BackCtx| {
        let gx = c.g.iter().zip(c.inputs[0]).zip(c.out).map(|((&g, &x), &y)| g * df(x, y)).collect();
        vec![Some(gx)]
    })
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

/// Row-wise log-softmax of a flat buffer with rows of length `d`.
pub(crate) fn log_softmax_rows(x: &[f64], d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(d) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            out.extend(row.iter().map(|_| f64::NEG_INFINITY));
            continue;
        }
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|v| v - lse));
    }
    out
}

impl Tensor {
    pub fn matmul(&self, other: &Tensor) -> TResult {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", self, other));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        {
            let (a, b) = (self.data(), other.data());
            for i in 0..m {
                let row = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let av = a[i * k + p];
                    if av == 0.0 {
                        continue;
                    }
                    row.iter_mut().zip(&b[p * n..(p + 1) * n]).for_each(|(o, &bv)| *o += av * bv);
                }
            }
        }
        Ok(Tensor::from_op(
            vec![m, n],
            out,
            vec![self.clone(), other.clone()],
            move |c: &BackCtx| {
                let (a, b, g) = (c.inputs[0], c.inputs[1], c.g);
                let ga = c.needs[0].then(|| {
                    let mut ga = vec![0.0; m * k];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            ga[i * k + p] = grow.iter().zip(&b[p * n..(p + 1) * n]).map(|(x, y)| x * y).sum();
                        }
                    }
                    ga
                });
                let gb = c.needs[1].then(|| {
                    let mut gb = vec![0.0; k * n];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let av = a[i * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            gb[p * n..(p + 1) * n].iter_mut().zip(grow).for_each(|(o, &gv)| *o += av * gv);
                        }
                    }
                    gb
                });
                vec![ga, gb]
            },
        ))
    }

    /// Elementwise sum; `other` may match a trailing block of `self`.
    pub fn add(&self, other: &Tensor) -> TResult {
        let lb = broadcast_len("add", self, other)?;
        let data: Vec<f64> = {
            let (a, b) = (self.data(), other.data());
            a.iter().enumerate().map(|(i, &x)| x + b[i % lb]).collect()
        };
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            move |c: &BackCtx| vec![c.needs[0].then(|| c.g.to_vec()), c.needs[1].then(|| fold_broadcast(c.g, lb))],
        ))
    }

    pub fn sub(&self, other: &Tensor) -> TResult {
        let lb = broadcast_len("sub", self, other)?;
        let data: Vec<f64> = {
            let (a, b) = (self.data(), other.data());
            a.iter().enumerate().map(|(i, &x)| x - b[i % lb]).collect()
        };
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            move |c: &BackCtx| {
                vec![
                    c.needs[0].then(|| c.g.to_vec()),
                    c.needs[1].then(|| fold_broadcast(c.g, lb).into_iter().map(|v| -v).collect()),
                ]
            },
        ))
    }

    /// Elementwise product; `other` may match a trailing block of `self`.
    pub fn mul(&self, other: &Tensor) -> TResult {
        let lb = broadcast_len("mul", self, other)?;
        let data: Vec<f64> = {
            let (a, b) = (self.data(), other.data());
            a.iter().enumerate().map(|(i, &x)| x * b[i % lb]).collect()
        };
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            move |c: &BackCtx| {
                let (a, b, g) = (c.inputs[0], c.inputs[1], c.g);
                let ga = c.needs[0].then(|| g.iter().enumerate().map(|(i, &gv)| gv * b[i % lb]).collect());
                let gb = c.needs[1].then(|| {
                    let prod: Vec<f64> = g.iter().zip(a).map(|(x, y)| x * y).collect();
                    fold_broadcast(&prod, lb)
                });
                vec![ga, gb]
            },
        ))
    }

    pub fn scale(&self, k: f64) -> Tensor {
        unary(self, |v| v * k, move |_, _| k)
    }

    pub fn add_scalar(&self, k: f64) -> Tensor {
        unary(self, |v| v + k, |_, _| 1.0)
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn tanh(&self) -> Tensor {
        unary(self, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(&self) -> Tensor {
        unary(self, sigmoid, |_, y| y * (1.0 - y))
    }

    /// `ln σ(x)`, stable for large `|x|`.
    pub fn log_sigmoid(&self) -> Tensor {
        unary(self, log_sigmoid, |x, _| 1.0 - sigmoid(x))
    }

    pub fn relu(&self) -> Tensor {
        unary(self, |v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn exp(&self) -> Tensor {
        unary(self, f64::exp, |_, y| y)
    }

    pub fn ln(&self) -> Tensor {
        unary(self, f64::ln, |x, _| 1.0 / x)
    }

    /// `max(x, floor)`; gradient passes only where `x > floor`.
    pub fn clamp_min(&self, floor: f64) -> Tensor {
        unary(self, move |v| v.max(floor), move |x, _| if x > floor { 1.0 } else { 0.0 })
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Tensor {
        let d = last_dim(self);
        let data: Vec<f64> = log_softmax_rows(&self.data(), d).into_iter().map(f64::exp).collect();
        Tensor::from_op(self.shape().to_vec(), data, vec![self.clone()], move |c: &BackCtx| {
            let mut gx = Vec::with_capacity(c.g.len());
            for (grow, yrow) in c.g.chunks(d).zip(c.out.chunks(d)) {
                let dot: f64 = grow.iter().zip(yrow).map(|(g, y)| g * y).sum();
                gx.extend(grow.iter().zip(yrow).map(|(g, y)| y * (g - dot)));
            }
            vec![Some(gx)]
        })
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&self) -> Tensor {
        let d = last_dim(self);
        let data = log_softmax_rows(&self.data(), d);
        Tensor::from_op(self.shape().to_vec(), data, vec![self.clone()], move |c: &BackCtx| {
            let mut gx = Vec::with_capacity(c.g.len());
            for (grow, yrow) in c.g.chunks(d).zip(c.out.chunks(d)) {
                let total: f64 = grow.iter().sum();
                gx.extend(grow.iter().zip(yrow).map(|(g, y)| {
                    let p = y.exp();
                    if p == 0.0 {
                        *g
                    } else {
                        g - p * total
                    }
                }));
            }
            vec![Some(gx)]
        })
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&self) -> Tensor {
        let total = self.data().iter().sum();
        let n = self.len();
        Tensor::from_op(Vec::new(), vec![total], vec![self.clone()], move |c: &BackCtx| {
            vec![Some(vec![c.g[0]; n])]
        })
    }

    /// Sum over the last axis.
    pub fn sum_last(&self) -> Tensor {
        let d = last_dim(self);
        let data: Vec<f64> = self.data().chunks(d).map(|r| r.iter().sum()).collect();
        let mut shape = self.shape().to_vec();
        shape.pop();
        Tensor::from_op(shape, data, vec![self.clone()], move |c: &BackCtx| {
            vec![Some(c.g.iter().flat_map(|&g| std::iter::repeat_n(g, d)).collect())]
        })
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Tensor], axis: usize) -> TResult {
        let first = parts.first().expect("concat of nothing");
        let rank = first.ndim();
        assert!(axis < rank, "concat axis {axis} for rank {rank}");
        for p in parts {
            let ok = p.ndim() == rank && (0..rank).all(|ax| ax == axis || p.shape()[ax] == first.shape()[ax]);
            if !ok {
                return Err(shape_err("concat", first, p));
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let widths: Vec<usize> = parts.iter().map(|p| p.shape()[axis] * inner).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(outer * total);
        {
            let bufs: Vec<_> = parts.iter().map(|p| p.data()).collect();
            for o in 0..outer {
                for (b, &w) in bufs.iter().zip(&widths) {
                    data.extend_from_slice(&b[o * w..(o + 1) * w]);
                }
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
        let parents = parts.iter().map(|&p| p.clone()).collect();
        Ok(Tensor::from_op(shape, data, parents, move |c: &BackCtx| {
            let mut grads: Vec<Option<Vec<f64>>> = widths
                .iter()
                .zip(c.needs)
                .map(|(&w, &need)| need.then(|| Vec::with_capacity(outer * w)))
                .collect();
            for o in 0..outer {
                let mut off = o * total;
                for (slot, &w) in grads.iter_mut().zip(&widths) {
                    if let Some(gv) = slot {
                        gv.extend_from_slice(&c.g[off..off + w]);
                    }
                    off += w;
                }
            }
            grads
        }))
    }

    /// `out[i] = self.flat[indices[i]]`, reshaped to `shape`. Gradients
    /// scatter-add back.
    pub fn gather(&self, indices: Vec<usize>, shape: &[usize]) -> TResult {
        let n = self.len();
        if numel(shape) != indices.len() {
            return Err(TensorError::Data {
                shape: shape.to_vec(),
                expected: numel(shape),
                found: indices.len(),
            });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(TensorError::Index {
                op: "gather",
                index: bad,
                extent: n,
            });
        }
        let data: Vec<f64> = {
            let src = self.data();
            indices.iter().map(|&i| src[i]).collect()
        };
        Ok(Tensor::from_op(shape.to_vec(), data, vec![self.clone()], move |c: &BackCtx| {
            let mut gx = vec![0.0; n];
            for (&i, &g) in indices.iter().zip(c.g) {
                gx[i] += g;
            }
            vec![Some(gx)]
        }))
    }

    pub fn reshape(&self, shape: &[usize]) -> TResult {
        if numel(shape) != self.len() {
            return Err(TensorError::Shape {
                op: "reshape",
                left: self.shape().to_vec(),
                right: shape.to_vec(),
            });
        }
        Ok(Tensor::from_op(shape.to_vec(), self.to_vec(), vec![self.clone()], |c: &BackCtx| {
            vec![Some(c.g.to_vec())]
        }))
    }

    /// Reorder axes: output axis `k` is input axis `perm[k]`.
    pub fn permute(&self, perm: &[usize]) -> TResult {
        let shape = self.shape();
        let rank = shape.len();
        let mut check = perm.to_vec();
        check.sort_unstable();
        if check != (0..rank).collect::<Vec<_>>() {
            return Err(TensorError::Shape {
                op: "permute",
                left: shape.to_vec(),
                right: perm.to_vec(),
            });
        }
        let mut strides = vec![1; rank];
        for ax in (0..rank.saturating_sub(1)).rev() {
            strides[ax] = strides[ax + 1] * shape[ax + 1];
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let out_strides: Vec<usize> = perm.iter().map(|&p| strides[p]).collect();
        let mut indices = Vec::with_capacity(self.len());
        let mut counter = vec![0; rank];
        for _ in 0..self.len() {
            indices.push(counter.iter().zip(&out_strides).map(|(c, s)| c * s).sum());
            for ax in (0..rank).rev() {
                counter[ax] += 1;
                if counter[ax] < out_shape[ax] {
                    break;
                }
                counter[ax] = 0;
            }
        }
        self.gather(indices, &out_shape)
    }

    pub fn transpose(&self) -> TResult {
        self.permute(&[1, 0])
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> TResult {
        let shape = self.shape();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(TensorError::Index {
                op: "narrow",
                index: start + len,
                extent: shape.get(axis).copied().unwrap_or(0),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut indices = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * shape[axis] * inner + start * inner;
            indices.extend(base..base + len * inner);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        self.gather(indices, &out_shape)
    }

    /// Rows of a 2-D table, e.g. an embedding lookup.
    pub fn index_rows(&self, rows: &[usize]) -> TResult {
        if self.ndim() != 2 {
            return Err(TensorError::Shape {
                op: "index_rows",
                left: self.shape().to_vec(),
                right: vec![rows.len()],
            });
        }
        let d = self.shape()[1];
        let extent = self.shape()[0];
        let mut indices = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            if r >= extent {
                return Err(TensorError::Index {
                    op: "index_rows",
                    index: r,
                    extent,
                });
            }
            indices.extend(r * d..(r + 1) * d);
        }
        self.gather(indices, &[rows.len(), d])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        assert_eq!(t(&[2], &[0.0, 0.0]).softmax().to_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_large_logits_do_not_overflow() {
        let p = t(&[2], &[1000.0, 0.0]).softmax().to_vec();
        assert_eq!(p[0], 1.0);
        assert!(p[1] >= 0.0 && p[1] < 1e-300);
        let lp = t(&[2], &[1000.0, 0.0]).log_softmax().to_vec();
        assert_eq!(lp[0], 0.0);
        assert!((lp[1] + 1000.0).abs() < 1e-12);
    }

    #[test]
    fn identity_matmul() {
        let i = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let a = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(i.matmul(&a).unwrap().to_vec(), a.to_vec());
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = t(&[2, 3], &[0.0; 6]);
        let err = a.matmul(&a).unwrap_err();
        assert_eq!(err.to_string(), "matmul: incompatible shapes [2, 3] and [2, 3]");
    }

    #[test]
    fn leading_axis_broadcast() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2], &[10.0, 20.0]);
        assert_eq!(a.add(&b).unwrap().to_vec(), vec![11.0, 22.0, 13.0, 24.0]);
        assert!(b.add(&a).is_err());
    }

    #[test]
    fn permute_and_narrow() {
        let a = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(a.transpose().unwrap().to_vec(), vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(a.narrow(1, 1, 2).unwrap().to_vec(), vec![2.0, 3.0, 5.0, 6.0]);
        let b = t(&[2, 1, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let p = b.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[3, 2, 1]);
        assert_eq!(p.to_vec(), vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn concat_axes() {
        let a = t(&[2, 1], &[1.0, 2.0]);
        let b = t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]);
        let c = Tensor::concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[2, 3]);
        assert_eq!(c.to_vec(), vec![1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let r = Tensor::concat(&[&b, &b], 0).unwrap();
        assert_eq!(r.shape(), &[4, 2]);
    }

    #[test]
    fn log_sigmoid_is_stable() {
        let x = t(&[3], &[-800.0, 0.0, 800.0]).log_sigmoid().to_vec();
        assert_eq!(x[0], -800.0);
        assert!((x[1] - 0.5f64.ln()).abs() < 1e-15);
        assert_eq!(x[2], 0.0);
    }
}
