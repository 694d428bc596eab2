//! Shape and elementwise operations.

use std::ops::Range;

use super::{numel, strides, Node, Result, Tensor, TensorError};

/// Walks the output index space in row-major order, yielding the source offset
/// for each output element given per-output-axis source strides.
fn for_each_offset(out_shape: &[usize], src_strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let rank = out_shape.len();
    let n = numel(out_shape);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for i in 0..n {
        f(i, off);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
}

fn gather(data: &[f64], out_shape: &[usize], src_strides: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; numel(out_shape)];
    for_each_offset(out_shape, src_strides, |i, off| out[i] = data[off]);
    out
}

fn scatter_add(grad: &[f64], out_shape: &[usize], src_strides: &[usize], src_len: usize) -> Vec<f64> {
    let mut acc = vec![0.0; src_len];
    for_each_offset(out_shape, src_strides, |i, off| acc[off] += grad[i]);
    acc
}

fn check_axis(op: &'static str, axis: usize, rank: usize) -> Result<()> {
    if axis >= rank {
        return Err(TensorError::AxisOutOfRange { op, axis, rank });
    }
    Ok(())
}

/// Sizes of the blocks before, along, and after `axis`.
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]))
}

enum Broadcast {
    Same,
    /// rhs shape is a proper suffix of lhs shape; rhs repeats with this period.
    Suffix(usize),
}

fn broadcast_kind(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<Broadcast> {
    if lhs == rhs {
        return Ok(Broadcast::Same);
    }
    if rhs.len() < lhs.len() && lhs[lhs.len() - rhs.len()..] == *rhs {
        return Ok(Broadcast::Suffix(numel(rhs)));
    }
    Err(TensorError::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    })
}

impl Tensor {
    /// Reinterprets the row-major buffer under a new shape with the same element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() || shape.contains(&0) {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let node = (super::grad_enabled() && self.requires_grad()).then(|| Node {
            op: "reshape",
            parents: vec![self.clone()],
            backward: Box::new(|g: &[f64]| vec![Some(g.to_vec())]),
        });
        Ok(self.view(shape.to_vec(), node))
    }

    /// Physically reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn transpose(&self, perm: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        let valid = perm.len() == rank && perm.iter().all(|&p| p < rank && !std::mem::replace(&mut seen[p], true));
        if !valid {
            return Err(TensorError::InvalidPermutation {
                perm: perm.to_vec(),
                rank,
            });
        }
        let in_strides = strides(self.shape());
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape()[p]).collect();
        let src: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let data = gather(self.data(), &out_shape, &src);
        let mut inverse = vec![0; rank];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let out_strides = strides(&out_shape);
        let back_src: Vec<usize> = inverse.iter().map(|&i| out_strides[i]).collect();
        let in_shape = self.shape().to_vec();
        Ok(Tensor::from_op(
            "transpose",
            out_shape,
            data,
            vec![self.clone()],
            move |g| vec![Some(gather(g, &in_shape, &back_src))],
        ))
    }

    /// Swaps two axes.
    pub fn swap_axes(&self, a: usize, b: usize) -> Result<Tensor> {
        check_axis("swap_axes", a.max(b), self.rank())?;
        let mut perm: Vec<usize> = (0..self.rank()).collect();
        perm.swap(a, b);
        self.transpose(&perm)
    }

    /// Repeats size-1 axes up to `shape` (same rank).
    pub fn expand(&self, shape: &[usize]) -> Result<Tensor> {
        let ok = shape.len() == self.rank()
            && self
                .shape()
                .iter()
                .zip(shape)
                .all(|(&s, &t)| s == t || (s == 1 && t > 0));
        if !ok {
            return Err(TensorError::ShapeMismatch {
                op: "expand",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let in_strides = strides(self.shape());
        let src: Vec<usize> = self
            .shape()
            .iter()
            .zip(&in_strides)
            .zip(shape)
            .map(|((&s, &st), &t)| if s == 1 && t != 1 { 0 } else { st })
            .collect();
        let out_shape = shape.to_vec();
        let data = gather(self.data(), &out_shape, &src);
        let len = self.numel();
        let back_shape = out_shape.clone();
        Ok(Tensor::from_op(
            "expand",
            out_shape,
            data,
            vec![self.clone()],
            move |g| vec![Some(scatter_add(g, &back_shape, &src, len))],
        ))
    }

    fn binary(
        &self,
        other: &Tensor,
        op: &'static str,
        f: fn(f64, f64) -> f64,
        // (grad, a, b) -> (d/da, d/db)
        df: fn(f64, f64, f64) -> (f64, f64),
    ) -> Result<Tensor> {
        let kind = broadcast_kind(op, self.shape(), other.shape())?;
        let period = match kind {
            Broadcast::Same => self.numel(),
            Broadcast::Suffix(p) => p,
        };
        let a = self.data();
        let b = other.data();
        let data: Vec<f64> = a.iter().enumerate().map(|(i, &x)| f(x, b[i % period])).collect();
        let (ta, tb) = (self.clone(), other.clone());
        let (need_a, need_b) = (self.requires_grad(), other.requires_grad());
        Ok(Tensor::from_op(
            op,
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            move |g| {
                let a = ta.data();
                let b = tb.data();
                let mut ga = need_a.then(|| vec![0.0; a.len()]);
                let mut gb = need_b.then(|| vec![0.0; b.len()]);
                for (i, &gi) in g.iter().enumerate() {
                    let j = i % period;
                    let (da, db) = df(gi, a[i], b[j]);
                    if let Some(ga) = ga.as_mut() {
                        ga[i] = da;
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[j] += db;
                    }
                }
                vec![ga, gb]
            },
        ))
    }

    /// Elementwise sum; `other` may broadcast over leading axes.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "add", |a, b| a + b, |g, _, _| (g, g))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "sub", |a, b| a - b, |g, _, _| (g, -g))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "mul", |a, b| a * b, |g, a, b| (g * b, g * a))
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "div", |a, b| a / b, |g, a, b| (g / b, -g * a / (b * b)))
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let data = self.data().iter().map(|x| x * c).collect();
        Tensor::from_op("scale", self.shape().to_vec(), data, vec![self.clone()], move |g| {
            vec![Some(g.iter().map(|x| x * c).collect())]
        })
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let data = self.data().iter().map(|x| x + c).collect();
        Tensor::from_op("add_scalar", self.shape().to_vec(), data, vec![self.clone()], |g| {
            vec![Some(g.to_vec())]
        })
    }

    fn unary(&self, op: &'static str, f: fn(f64) -> f64, df: fn(f64) -> f64) -> Tensor {
        let data = self.data().iter().map(|&x| f(x)).collect();
        let t = self.clone();
        Tensor::from_op(op, self.shape().to_vec(), data, vec![self.clone()], move |g| {
            vec![Some(g.iter().zip(t.data()).map(|(g, &x)| g * df(x)).collect())]
        })
    }

    /// Tanh approximation of the Gaussian error linear unit.
    pub fn gelu(&self) -> Tensor {
        const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
        fn f(x: f64) -> f64 {
            0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
        }
        fn df(x: f64) -> f64 {
            let u = C * (x + 0.044715 * x * x * x);
            let th = u.tanh();
            let du = C * (1.0 + 3.0 * 0.044715 * x * x);
            0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
        }
        self.unary("gelu", f, df)
    }

    pub fn square(&self) -> Tensor {
        self.unary("square", |x| x * x, |x| 2.0 * x)
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&self) -> Tensor {
        let s = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op("sum", Vec::new(), vec![s], vec![self.clone()], move |g| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sums out `axis`, removing it from the shape.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        check_axis("sum_axis", axis, self.rank())?;
        let (outer, len, inner) = split_at_axis(self.shape(), axis);
        let x = self.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..len {
                let src = &x[(o * len + i) * inner..(o * len + i + 1) * inner];
                out[o * inner..(o + 1) * inner]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(a, b)| *a += b);
            }
        }
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        Ok(Tensor::from_op("sum_axis", shape, out, vec![self.clone()], move |g| {
            let mut gx = vec![0.0; outer * len * inner];
            for o in 0..outer {
                for i in 0..len {
                    gx[(o * len + i) * inner..(o * len + i + 1) * inner]
                        .copy_from_slice(&g[o * inner..(o + 1) * inner]);
                }
            }
            vec![Some(gx)]
        }))
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        check_axis("mean_axis", axis, self.rank())?;
        let n = self.shape()[axis] as f64;
        Ok(self.sum_axis(axis)?.scale(1.0 / n))
    }

    /// Euclidean norm over the last axis. The gradient at a zero vector is taken as zero.
    pub fn norm_last(&self) -> Result<Tensor> {
        if self.rank() == 0 {
            return Err(TensorError::AxisOutOfRange {
                op: "norm_last",
                axis: 0,
                rank: 0,
            });
        }
        let len = *self.shape().last().unwrap();
        let norms: Vec<f64> = self
            .data()
            .chunks_exact(len)
            .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let shape = self.shape()[..self.rank() - 1].to_vec();
        let x = self.clone();
        let saved = norms.clone();
        Ok(Tensor::from_op(
            "norm_last",
            shape,
            norms,
            vec![self.clone()],
            move |g| {
                let mut gx = vec![0.0; x.numel()];
                for (r, (chunk, out)) in x.data().chunks_exact(len).zip(gx.chunks_exact_mut(len)).enumerate() {
                    let n = saved[r];
                    if n > 0.0 {
                        let s = g[r] / n;
                        chunk.iter().zip(out).for_each(|(v, o)| *o = v * s);
                    }
                }
                vec![Some(gx)]
            },
        ))
    }

    /// Normalizes the last axis to zero mean and unit variance (no affine part).
    pub fn layer_norm(&self, eps: f64) -> Result<Tensor> {
        if self.rank() == 0 {
            return Err(TensorError::AxisOutOfRange {
                op: "layer_norm",
                axis: 0,
                rank: 0,
            });
        }
        let d = *self.shape().last().unwrap();
        let rows = self.numel() / d;
        let mut out = vec![0.0; self.numel()];
        let mut inv_std = vec![0.0; rows];
        for (r, (x, y)) in self.data().chunks_exact(d).zip(out.chunks_exact_mut(d)).enumerate() {
            let mu = x.iter().sum::<f64>() / d as f64;
            let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            x.iter().zip(y.iter_mut()).for_each(|(v, o)| *o = (v - mu) * is);
        }
        let xhat = out.clone();
        Ok(Tensor::from_op(
            "layer_norm",
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            move |g| {
                let mut gx = vec![0.0; g.len()];
                for r in 0..rows {
                    let gr = &g[r * d..(r + 1) * d];
                    let xr = &xhat[r * d..(r + 1) * d];
                    let mg = gr.iter().sum::<f64>() / d as f64;
                    let mgx = gr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for i in 0..d {
                        gx[r * d + i] = inv_std[r] * (gr[i] - mg - xr[i] * mgx);
                    }
                }
                vec![Some(gx)]
            },
        ))
    }

    /// Softmax along `axis`, stabilized by subtracting the row maximum.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        check_axis("softmax", axis, self.rank())?;
        let (outer, len, inner) = split_at_axis(self.shape(), axis);
        let x = self.data();
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for j in 0..inner {
                let at = |i: usize| (o * len + i) * inner + j;
                let m = (0..len).map(|i| x[at(i)]).fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for i in 0..len {
                    let e = (x[at(i)] - m).exp();
                    y[at(i)] = e;
                    s += e;
                }
                for i in 0..len {
                    y[at(i)] /= s;
                }
            }
        }
        let saved = y.clone();
        Ok(Tensor::from_op(
            "softmax",
            self.shape().to_vec(),
            y,
            vec![self.clone()],
            move |g| {
                let mut gx = vec![0.0; g.len()];
                for o in 0..outer {
                    for j in 0..inner {
                        let at = |i: usize| (o * len + i) * inner + j;
                        let dot: f64 = (0..len).map(|i| g[at(i)] * saved[at(i)]).sum();
                        for i in 0..len {
                            gx[at(i)] = saved[at(i)] * (g[at(i)] - dot);
                        }
                    }
                }
                vec![Some(gx)]
            },
        ))
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Invalid("concat of zero tensors".into()))?;
        check_axis("concat", axis, first.rank())?;
        for p in &parts[1..] {
            let compatible = p.rank() == first.rank()
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        let outer = numel(&first.shape()[..axis]);
        let inner = numel(&first.shape()[axis + 1..]);
        let widths: Vec<usize> = parts.iter().map(|p| p.shape()[axis] * inner).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
        let needs: Vec<bool> = parts.iter().map(Tensor::requires_grad).collect();
        Ok(Tensor::from_op("concat", shape, data, parts.to_vec(), move |g| {
            let mut offset = 0;
            let mut out = Vec::with_capacity(widths.len());
            for (&w, &need) in widths.iter().zip(&needs) {
                if need {
                    let mut gp = Vec::with_capacity(outer * w);
                    for o in 0..outer {
                        let start = o * total + offset;
                        gp.extend_from_slice(&g[start..start + w]);
                    }
                    out.push(Some(gp));
                } else {
                    out.push(None);
                }
                offset += w;
            }
            out
        }))
    }

    /// Contiguous sub-range along `axis`.
    pub fn slice(&self, axis: usize, range: Range<usize>) -> Result<Tensor> {
        check_axis("slice", axis, self.rank())?;
        let extent = self.shape()[axis];
        if range.start >= range.end || range.end > extent {
            return Err(TensorError::BadSlice {
                axis,
                start: range.start,
                end: range.end,
                extent,
            });
        }
        let (outer, len, inner) = split_at_axis(self.shape(), axis);
        let w = (range.end - range.start) * inner;
        let mut data = Vec::with_capacity(outer * w);
        for o in 0..outer {
            let start = (o * len + range.start) * inner;
            data.extend_from_slice(&self.data()[start..start + w]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = range.end - range.start;
        let n = self.numel();
        let begin = range.start;
        Ok(Tensor::from_op("slice", shape, data, vec![self.clone()], move |g| {
            let mut gx = vec![0.0; n];
            for o in 0..outer {
                let start = (o * len + begin) * inner;
                gx[start..start + w].copy_from_slice(&g[o * w..(o + 1) * w]);
            }
            vec![Some(gx)]
        }))
    }

    /// Picks one index along `axis` and drops the axis.
    pub fn select(&self, axis: usize, index: usize) -> Result<Tensor> {
        let s = self.slice(axis, index..index + 1)?;
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        s.reshape(&shape)
    }

    /// Stacks equally shaped tensors along a new axis.
    pub fn stack(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let expanded: Vec<Tensor> = parts
            .iter()
            .map(|p| {
                let mut shape = p.shape().to_vec();
                if axis > shape.len() {
                    return Err(TensorError::AxisOutOfRange {
                        op: "stack",
                        axis,
                        rank: shape.len(),
                    });
                }
                shape.insert(axis, 1);
                p.reshape(&shape)
            })
            .collect::<Result<_>>()?;
        Tensor::concat(&expanded, axis)
    }
}
