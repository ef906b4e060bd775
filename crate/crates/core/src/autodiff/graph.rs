//! Tape-based reverse-mode differentiation over the operations the
//! classifiers need.
//!
//! Sequences are `[batch, time, features]` tensors accompanied by a
//! `[batch, time]` boolean mask. Masked positions never contribute to any
//! reduction and receive exactly zero gradient.

use std::collections::BTreeMap;
use std::rc::Rc;

use rand::Rng;

use super::params::{Gradients, ParamGrad, ParamId, ParamSet};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Boolean `[batch, time]` mask, shared between nodes.
pub type Mask = Rc<[bool]>;

/// Norm below which a cosine score is defined as zero.
pub const COSINE_NORM_GUARD: f64 = 1e-12;

enum Op<T> {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    SelectRows {
        on: Var,
        off: Var,
        mask: Vec<bool>,
    },
    Reshape(Var),
    TimeStep {
        x: Var,
        t: usize,
    },
    StackTime(Vec<Var>),
    MaskedSumTime {
        x: Var,
        mask: Mask,
    },
    MaskedMeanTime {
        x: Var,
        mask: Mask,
        counts: Vec<usize>,
    },
    MaskedMaxTime {
        x: Var,
        argmax: Vec<usize>,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        width: usize,
        mask: Mask,
        cols: Vec<T>,
    },
    MaxPool1d {
        x: Var,
        argmax: Vec<Option<usize>>,
    },
    Dropout {
        x: Var,
        scale: Vec<T>,
    },
    SoftmaxRows(Var),
    CrossEntropy {
        probs: Var,
        labels: Vec<usize>,
    },
    CosineRows {
        x: Var,
        u: Var,
    },
    MaskedSoftmaxTime {
        x: Var,
        mask: Mask,
    },
    WeightedSumTime {
        x: Var,
        w: Var,
    },
    GatherRows {
        table: ParamId,
        idx: Vec<Option<usize>>,
    },
}

struct Node<T> {
    value: Option<Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// One forward pass worth of recorded operations.
pub struct Graph<'p, T: Scalar> {
    params: &'p ParamSet<T>,
    nodes: Vec<Node<T>>,
}

fn seq_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [b, t, d] => Ok((b, t, d)),
        _ => Err(Error::shape(op, shape, &[0, 0, 0])),
    }
}

fn check_mask(op: &'static str, mask: &[bool], b: usize, t: usize) -> Result<()> {
    if mask.len() != b * t {
        return Err(Error::shape(op, &[b, t], &[mask.len()]));
    }
    Ok(())
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamSet<T>) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamSet<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.get(*id),
            (None, _) => unreachable!("only parameter nodes borrow their value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Some(t),
            op: Op::Input,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a), self.value(b));
        let (m, k) = (sa.rows(), sa.cols());
        let (k2, n) = (sb.rows(), sb.cols());
        if k != k2 {
            return Err(Error::shape("matmul", sa.shape(), sb.shape()));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, sa.data(), false, sb.data(), false, &mut out, false);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b), &[a, b]))
    }

    /// Adds a bias vector along the last dimension.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.value(x), self.value(b));
        let n = *sx.shape().last().unwrap_or(&0);
        if sb.len() != n || n == 0 {
            return Err(Error::shape("add_bias", sx.shape(), sb.shape()));
        }
        let mut out = sx.data().to_vec();
        for row in out.chunks_mut(n) {
            for (v, bias) in row.iter_mut().zip(sb.data()) {
                *v += *bias;
            }
        }
        let shape = sx.shape().to_vec();
        Ok(self.push(Tensor::new(&shape, out)?, Op::AddBias(x, b), &[x, b]))
    }

    /// `x · w + b`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let h = self.matmul(x, w)?;
        self.add_bias(h, b)
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (sa, sb) = (self.value(a), self.value(b));
        if sa.shape() != sb.shape() {
            return Err(Error::shape(op, sa.shape(), sb.shape()));
        }
        let data = sa.data().iter().zip(sb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(sa.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    fn map(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let sx = self.value(x);
        let t = Tensor::new(sx.shape(), sx.data().iter().map(|&v| f(v)).collect()).expect("same length");
        self.push(t, op, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, Op::Relu(x), |v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, Op::Tanh(x), T::tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let sx = self.value(x);
        let (r, c) = (sx.rows(), sx.cols());
        if start + len > c {
            return Err(Error::shape("slice_cols", sx.shape(), &[start, len]));
        }
        let mut out = Vec::with_capacity(r * len);
        for row in sx.data().chunks(c) {
            out.extend_from_slice(&row[start..start + len]);
        }
        Ok(self.push(Tensor::new(&[r, len], out)?, Op::SliceCols { x, start }, &[x]))
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        let r = self.value(*first).rows();
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.value(x);
            if s.rows() != r {
                return Err(Error::shape("concat", self.value(*first).shape(), s.shape()));
            }
            widths.push(s.cols());
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&x, &w) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(x).data()[i * w..(i + 1) * w]);
            }
        }
        Ok(self.push(Tensor::new(&[r, total], out)?, Op::ConcatCols(xs.to_vec()), xs))
    }

    /// Row `i` of the result is row `i` of `on` where `mask[i]`, else of `off`.
    /// Values are copied, so unselected rows pass through bit-exact.
    pub fn select_rows(&mut self, mask: &[bool], on: Var, off: Var) -> Result<Var> {
        let (so, sf) = (self.value(on), self.value(off));
        if so.shape() != sf.shape() || so.rows() != mask.len() {
            return Err(Error::shape("select_rows", so.shape(), sf.shape()));
        }
        let c = so.cols();
        let mut out = Vec::with_capacity(so.len());
        for (i, &m) in mask.iter().enumerate() {
            let src = if m { so } else { sf };
            out.extend_from_slice(&src.data()[i * c..(i + 1) * c]);
        }
        let shape = so.shape().to_vec();
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::SelectRows {
                on,
                off,
                mask: mask.to_vec(),
            },
            &[on, off],
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(t, Op::Reshape(x), &[x]))
    }

    pub fn time_step(&mut self, x: Var, t: usize) -> Result<Var> {
        let sx = self.value(x);
        let (b, tt, d) = seq_dims("time_step", sx.shape())?;
        if t >= tt {
            return Err(Error::shape("time_step", sx.shape(), &[t]));
        }
        let mut out = Vec::with_capacity(b * d);
        for i in 0..b {
            let off = (i * tt + t) * d;
            out.extend_from_slice(&sx.data()[off..off + d]);
        }
        Ok(self.push(Tensor::new(&[b, d], out)?, Op::TimeStep { x, t }, &[x]))
    }

    /// Stacks `[batch, d]` steps into `[batch, time, d]`.
    pub fn stack_time(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::invalid("stack_time", "no steps"))?;
        let s0 = self.value(*first).shape().to_vec();
        let (b, d) = (s0[0], s0.iter().skip(1).product::<usize>());
        for &x in xs {
            if self.value(x).shape() != s0.as_slice() {
                return Err(Error::shape("stack_time", &s0, self.value(x).shape()));
            }
        }
        let tt = xs.len();
        let mut out = vec![T::zero(); b * tt * d];
        for (t, &x) in xs.iter().enumerate() {
            let v = self.value(x).data();
            for i in 0..b {
                let dst = (i * tt + t) * d;
                out[dst..dst + d].copy_from_slice(&v[i * d..(i + 1) * d]);
            }
        }
        Ok(self.push(Tensor::new(&[b, tt, d], out)?, Op::StackTime(xs.to_vec()), xs))
    }

    pub fn masked_sum_time(&mut self, x: Var, mask: &Mask) -> Result<Var> {
        let (out, _) = self.masked_reduce("sum_over_time", x, mask)?;
        Ok(self.push(out, Op::MaskedSumTime { x, mask: mask.clone() }, &[x]))
    }

    pub fn masked_mean_time(&mut self, x: Var, mask: &Mask) -> Result<Var> {
        let (mut out, counts) = self.masked_reduce("mean_over_time", x, mask)?;
        let d = out.cols();
        for (row, &n) in out.data_mut().chunks_mut(d).zip(&counts) {
            if n == 0 {
                return Err(Error::invalid("mean_over_time", "row has no unmasked step"));
            }
            let n = T::from_usize(n).expect("count");
            row.iter_mut().for_each(|v| *v /= n);
        }
        Ok(self.push(
            out,
            Op::MaskedMeanTime {
                x,
                mask: mask.clone(),
                counts,
            },
            &[x],
        ))
    }

    fn masked_reduce(&self, op: &'static str, x: Var, mask: &[bool]) -> Result<(Tensor<T>, Vec<usize>)> {
        let sx = self.value(x);
        let (b, tt, d) = seq_dims(op, sx.shape())?;
        check_mask(op, mask, b, tt)?;
        let mut out = vec![T::zero(); b * d];
        let mut counts = vec![0; b];
        for i in 0..b {
            let acc = &mut out[i * d..(i + 1) * d];
            for t in 0..tt {
                if !mask[i * tt + t] {
                    continue;
                }
                counts[i] += 1;
                let off = (i * tt + t) * d;
                for (a, v) in acc.iter_mut().zip(&sx.data()[off..off + d]) {
                    *a += *v;
                }
            }
        }
        Ok((Tensor::new(&[b, d], out)?, counts))
    }

    /// Per-feature maximum over unmasked steps.
    pub fn masked_max_time(&mut self, x: Var, mask: &Mask) -> Result<Var> {
        let sx = self.value(x);
        let (b, tt, d) = seq_dims("global_maxpool", sx.shape())?;
        check_mask("global_maxpool", mask, b, tt)?;
        let mut out = vec![T::neg_infinity(); b * d];
        let mut argmax = vec![usize::MAX; b * d];
        for i in 0..b {
            for t in 0..tt {
                if !mask[i * tt + t] {
                    continue;
                }
                let off = (i * tt + t) * d;
                for j in 0..d {
                    let v = sx.data()[off + j];
                    if argmax[i * d + j] == usize::MAX || v > out[i * d + j] {
                        out[i * d + j] = v;
                        argmax[i * d + j] = off + j;
                    }
                }
            }
            if d > 0 && argmax[i * d] == usize::MAX {
                return Err(Error::invalid("global_maxpool", "row has no unmasked step"));
            }
        }
        Ok(self.push(Tensor::new(&[b, d], out)?, Op::MaskedMaxTime { x, argmax }, &[x]))
    }

    /// One-dimensional convolution over time.
    ///
    /// Output position `t` sees inputs `t..t + width`; masked or out-of-range
    /// inputs read as zero, masked outputs are zero. The output keeps the input
    /// mask, so trailing padding never changes unmasked outputs.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, width: usize, mask: &Mask) -> Result<Var> {
        let (sx, sw, sb) = (self.value(x), self.value(w), self.value(b));
        let (bs, tt, din) = seq_dims("conv1d", sx.shape())?;
        check_mask("conv1d", mask, bs, tt)?;
        let k = width * din;
        if width == 0 || sw.rows() != k || sb.len() != sw.cols() {
            return Err(Error::shape("conv1d", sx.shape(), sw.shape()));
        }
        let f = sw.cols();
        let mut cols = vec![T::zero(); bs * tt * k];
        for i in 0..bs {
            for t in 0..tt {
                if !mask[i * tt + t] {
                    continue;
                }
                let row = &mut cols[(i * tt + t) * k..(i * tt + t + 1) * k];
                for s in 0..width {
                    let src = t + s;
                    if src >= tt || !mask[i * tt + src] {
                        continue;
                    }
                    let off = (i * tt + src) * din;
                    row[s * din..(s + 1) * din].copy_from_slice(&sx.data()[off..off + din]);
                }
            }
        }
        let mut out = vec![T::zero(); bs * tt * f];
        T::gemm(bs * tt, k, f, &cols, false, sw.data(), false, &mut out, false);
        for (r, row) in out.chunks_mut(f).enumerate() {
            if mask[r] {
                row.iter_mut().zip(sb.data()).for_each(|(v, bias)| *v += *bias);
            } else {
                row.iter_mut().for_each(|v| *v = T::zero());
            }
        }
        Ok(self.push(
            Tensor::new(&[bs, tt, f], out)?,
            Op::Conv1d {
                x,
                w,
                b,
                width,
                mask: mask.clone(),
                cols,
            },
            &[x, w, b],
        ))
    }

    /// Non-overlapping max pooling over time; returns the pooled sequence and
    /// its mask (a window is live iff its first step is).
    pub fn maxpool1d(&mut self, x: Var, mask: &Mask, window: usize) -> Result<(Var, Mask)> {
        let sx = self.value(x);
        let (b, tt, d) = seq_dims("maxpool1d", sx.shape())?;
        check_mask("maxpool1d", mask, b, tt)?;
        if window == 0 {
            return Err(Error::invalid("maxpool1d", "window must be positive"));
        }
        let to = tt.div_ceil(window);
        let mut out = vec![T::zero(); b * to * d];
        let mut argmax = vec![None; b * to * d];
        let mut out_mask = vec![false; b * to];
        for i in 0..b {
            for j in 0..to {
                let start = j * window;
                if !mask[i * tt + start] {
                    continue;
                }
                out_mask[i * to + j] = true;
                for t in start..(start + window).min(tt) {
                    if !mask[i * tt + t] {
                        continue;
                    }
                    let src = (i * tt + t) * d;
                    let dst = (i * to + j) * d;
                    for c in 0..d {
                        let v = sx.data()[src + c];
                        if argmax[dst + c].is_none() || v > out[dst + c] {
                            out[dst + c] = v;
                            argmax[dst + c] = Some(src + c);
                        }
                    }
                }
            }
        }
        let var = self.push(Tensor::new(&[b, to, d], out)?, Op::MaxPool1d { x, argmax }, &[x]);
        Ok((var, out_mask.into()))
    }

    /// Inverted dropout: kept units are scaled by `1 / (1 - rate)`.
    /// Identity when `!train` or `rate == 0`.
    pub fn dropout<R: Rng>(&mut self, x: Var, rate: f64, rng: &mut R, train: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid("dropout", format!("rate {rate} outside [0, 1)")));
        }
        if !train || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::c(1.0 / (1.0 - rate));
        let sx = self.value(x);
        let scale: Vec<T> = (0..sx.len())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let data = sx.data().iter().zip(&scale).map(|(&v, &s)| v * s).collect();
        let t = Tensor::new(sx.shape(), data)?;
        Ok(self.push(t, Op::Dropout { x, scale }, &[x]))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let sx = self.value(x);
        let c = sx.cols();
        let mut out = sx.data().to_vec();
        for row in out.chunks_mut(c) {
            softmax_in_place(row);
        }
        let t = Tensor::new(sx.shape(), out).expect("same length");
        self.push(t, Op::SoftmaxRows(x), &[x])
    }

    /// Mean negative log-likelihood of `labels` under row-wise `probs`.
    /// Probabilities are clipped below at machine epsilon.
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let sp = self.value(probs);
        let (n, c) = (sp.rows(), sp.cols());
        if n != labels.len() || n == 0 {
            return Err(Error::shape("cross_entropy", sp.shape(), &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::invalid("cross_entropy", format!("label {bad} out of range")));
        }
        let mut total = T::zero();
        for (i, &l) in labels.iter().enumerate() {
            let p = sp.data()[i * c + l].max(T::epsilon());
            total -= p.ln();
        }
        let loss = total / T::from_usize(n).expect("n");
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                probs,
                labels: labels.to_vec(),
            },
            &[probs],
        ))
    }

    /// Cosine similarity of each row of `x` with the vector `u`.
    pub fn cosine_rows(&mut self, x: Var, u: Var) -> Result<Var> {
        let (sx, su) = (self.value(x), self.value(u));
        let (n, a) = (sx.rows(), sx.cols());
        if su.len() != a {
            return Err(Error::shape("cosine", sx.shape(), su.shape()));
        }
        let un = norm(su.data());
        let guard = T::c(COSINE_NORM_GUARD);
        let out = sx
            .data()
            .chunks(a)
            .map(|row| {
                let rn = norm(row);
                if rn < guard || un < guard {
                    T::zero()
                } else {
                    dot(row, su.data()) / (rn * un)
                }
            })
            .collect();
        Ok(self.push(Tensor::new(&[n], out)?, Op::CosineRows { x, u }, &[x, u]))
    }

    /// Softmax over unmasked steps of a `[batch, time]` score matrix; masked
    /// weights are exactly zero.
    pub fn masked_softmax_time(&mut self, x: Var, mask: &Mask) -> Result<Var> {
        let sx = self.value(x);
        let (b, tt) = (sx.rows(), sx.cols());
        check_mask("attention", mask, b, tt)?;
        let mut out = vec![T::zero(); b * tt];
        for i in 0..b {
            let row = &sx.data()[i * tt..(i + 1) * tt];
            let m = &mask[i * tt..(i + 1) * tt];
            let max = row
                .iter()
                .zip(m)
                .filter(|(_, &k)| k)
                .map(|(&v, _)| v)
                .fold(None, |acc: Option<T>, v| Some(acc.map_or(v, |a| a.max(v))))
                .ok_or_else(|| Error::invalid("attention", "all positions masked"))?;
            let dst = &mut out[i * tt..(i + 1) * tt];
            let mut z = T::zero();
            for t in 0..tt {
                if m[t] {
                    dst[t] = (row[t] - max).exp();
                    z += dst[t];
                }
            }
            dst.iter_mut().for_each(|v| *v /= z);
        }
        let shape = sx.shape().to_vec();
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::MaskedSoftmaxTime { x, mask: mask.clone() },
            &[x],
        ))
    }

    /// `out[b] = Σ_t w[b, t] · x[b, t]`.
    pub fn weighted_sum_time(&mut self, x: Var, w: Var) -> Result<Var> {
        let (sx, sw) = (self.value(x), self.value(w));
        let (b, tt, d) = seq_dims("weighted_sum", sx.shape())?;
        if sw.len() != b * tt {
            return Err(Error::shape("weighted_sum", sx.shape(), sw.shape()));
        }
        let mut out = vec![T::zero(); b * d];
        for i in 0..b {
            for t in 0..tt {
                let wt = sw.data()[i * tt + t];
                if wt == T::zero() {
                    continue;
                }
                let off = (i * tt + t) * d;
                for j in 0..d {
                    out[i * d + j] += wt * sx.data()[off + j];
                }
            }
        }
        Ok(self.push(Tensor::new(&[b, d], out)?, Op::WeightedSumTime { x, w }, &[x, w]))
    }

    /// Rows of a trainable table; the gradient is row-sparse.
    pub fn gather_rows(&mut self, table: ParamId, idx: &[usize]) -> Result<Var> {
        let idx: Vec<Option<usize>> = idx.iter().map(|&i| Some(i)).collect();
        self.gather(table, idx)
    }

    /// Like [`Graph::gather_rows`], but positions with `live[k] == false` give a
    /// zero row and never appear in the gradient.
    pub fn gather_rows_masked(&mut self, table: ParamId, idx: &[usize], live: &[bool]) -> Result<Var> {
        if idx.len() != live.len() {
            return Err(Error::shape("gather", &[idx.len()], &[live.len()]));
        }
        let idx = idx.iter().zip(live).map(|(&i, &l)| l.then_some(i)).collect();
        self.gather(table, idx)
    }

    fn gather(&mut self, table: ParamId, idx: Vec<Option<usize>>) -> Result<Var> {
        let st = self.params.get(table);
        let (r, d) = (st.rows(), st.cols());
        let mut out = vec![T::zero(); idx.len() * d];
        for (k, &i) in idx.iter().enumerate() {
            let Some(i) = i else { continue };
            if i >= r {
                return Err(Error::shape("gather", st.shape(), &[i]));
            }
            out[k * d..(k + 1) * d].copy_from_slice(&st.data()[i * d..(i + 1) * d]);
        }
        self.nodes.push(Node {
            value: Some(Tensor::new(&[idx.len(), d], out)?),
            op: Op::GatherRows { table, idx },
            needs_grad: true,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse sweep from a single-element `loss` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward", self.value(loss).shape(), &[1]));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut out = Gradients::empty(self.params.len());
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.backprop_node(node, &g, &mut grads, &mut out)?;
        }
        Ok(out)
    }

    fn slot<'g>(&self, v: Var, grads: &'g mut [Option<Vec<T>>]) -> &'g mut Vec<T> {
        let len = self.value(v).len();
        grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backprop_node(
        &self,
        node: &Node<T>,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
        out: &mut Gradients<T>,
    ) -> Result<()> {
        let value = node.value.as_ref();
        match &node.op {
            Op::Input => {}
            Op::Param(id) => add_dense(out, *id, g),
            Op::GatherRows { table, idx } => {
                let d = self.params.get(*table).cols();
                let entry = out.grads[table.0].get_or_insert_with(|| ParamGrad::Rows {
                    width: d,
                    rows: BTreeMap::new(),
                });
                let ParamGrad::Rows { rows, .. } = entry else {
                    return Err(Error::invalid("gather", "table also used densely"));
                };
                for (k, r) in idx.iter().enumerate() {
                    let Some(r) = *r else { continue };
                    let dst = rows.entry(r).or_insert_with(|| vec![T::zero(); d]);
                    for (a, b) in dst.iter_mut().zip(&g[k * d..(k + 1) * d]) {
                        *a += *b;
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (sa.rows(), sa.cols(), sb.cols());
                if self.wants(*a) {
                    let da = self.slot(*a, grads);
                    T::gemm(m, n, k, g, false, sb.data(), true, da, true);
                }
                if self.wants(*b) {
                    let db = self.slot(*b, grads);
                    T::gemm(k, m, n, sa.data(), true, g, false, db, true);
                }
            }
            Op::AddBias(x, b) => {
                if self.wants(*x) {
                    add_into(self.slot(*x, grads), g);
                }
                if self.wants(*b) {
                    let n = self.value(*b).len();
                    let db = self.slot(*b, grads);
                    for row in g.chunks(n) {
                        add_into(db, row);
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.wants(*v) {
                        add_into(self.slot(*v, grads), g);
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let other = self.value(*b).data();
                    let da = self.slot(*a, grads);
                    for ((d, &gi), &o) in da.iter_mut().zip(g).zip(other) {
                        *d += gi * o;
                    }
                }
                if self.wants(*b) {
                    let other = self.value(*a).data();
                    let db = self.slot(*b, grads);
                    for ((d, &gi), &o) in db.iter_mut().zip(g).zip(other) {
                        *d += gi * o;
                    }
                }
            }
            Op::Relu(x) => {
                let y = value.expect("value").data();
                let dx = self.slot(*x, grads);
                for ((d, &gi), &yi) in dx.iter_mut().zip(g).zip(y) {
                    if yi > T::zero() {
                        *d += gi;
                    }
                }
            }
            Op::Tanh(x) => {
                let y = value.expect("value").data();
                let dx = self.slot(*x, grads);
                for ((d, &gi), &yi) in dx.iter_mut().zip(g).zip(y) {
                    *d += gi * (T::one() - yi * yi);
                }
            }
            Op::Sigmoid(x) => {
                let y = value.expect("value").data();
                let dx = self.slot(*x, grads);
                for ((d, &gi), &yi) in dx.iter_mut().zip(g).zip(y) {
                    *d += gi * yi * (T::one() - yi);
                }
            }
            Op::SliceCols { x, start } => {
                let c = self.value(*x).cols();
                let len = value.expect("value").cols();
                let dx = self.slot(*x, grads);
                for (drow, grow) in dx.chunks_mut(c).zip(g.chunks(len)) {
                    add_into(&mut drow[*start..*start + len], grow);
                }
            }
            Op::ConcatCols(xs) => {
                let total = value.expect("value").cols();
                let mut offset = 0;
                for &x in xs {
                    let w = self.value(x).cols();
                    if self.wants(x) {
                        let dx = self.slot(x, grads);
                        for (drow, grow) in dx.chunks_mut(w).zip(g.chunks(total)) {
                            add_into(drow, &grow[offset..offset + w]);
                        }
                    }
                    offset += w;
                }
            }
            Op::SelectRows { on, off, mask } => {
                let c = self.value(*on).cols();
                for (v, want) in [(*on, true), (*off, false)] {
                    if !self.wants(v) {
                        continue;
                    }
                    let dv = self.slot(v, grads);
                    for (i, &m) in mask.iter().enumerate() {
                        if m == want {
                            add_into(&mut dv[i * c..(i + 1) * c], &g[i * c..(i + 1) * c]);
                        }
                    }
                }
            }
            Op::Reshape(x) => add_into(self.slot(*x, grads), g),
            Op::TimeStep { x, t } => {
                let (b, tt, d) = seq_dims("time_step", self.value(*x).shape())?;
                let dx = self.slot(*x, grads);
                for i in 0..b {
                    let off = (i * tt + t) * d;
                    add_into(&mut dx[off..off + d], &g[i * d..(i + 1) * d]);
                }
            }
            Op::StackTime(xs) => {
                let (b, tt, d) = seq_dims("stack_time", value.expect("value").shape())?;
                for (t, &x) in xs.iter().enumerate() {
                    if !self.wants(x) {
                        continue;
                    }
                    let dx = self.slot(x, grads);
                    for i in 0..b {
                        let off = (i * tt + t) * d;
                        add_into(&mut dx[i * d..(i + 1) * d], &g[off..off + d]);
                    }
                }
            }
            Op::MaskedSumTime { x, mask } => {
                self.spread_over_time(*x, mask, g, None, self.slot(*x, grads))?;
            }
            Op::MaskedMeanTime { x, mask, counts } => {
                self.spread_over_time(*x, mask, g, Some(counts), self.slot(*x, grads))?;
            }
            Op::MaskedMaxTime { x, argmax } => {
                let dx = self.slot(*x, grads);
                for (&src, &gi) in argmax.iter().zip(g) {
                    dx[src] += gi;
                }
            }
            Op::MaxPool1d { x, argmax } => {
                let dx = self.slot(*x, grads);
                for (src, &gi) in argmax.iter().zip(g) {
                    if let Some(src) = src {
                        dx[*src] += gi;
                    }
                }
            }
            Op::Conv1d {
                x,
                w,
                b,
                width,
                mask,
                cols,
            } => {
                let (bs, tt, din) = seq_dims("conv1d", self.value(*x).shape())?;
                let sw = self.value(*w);
                let (k, f) = (sw.rows(), sw.cols());
                // masked outputs are constant zero
                let mut gm = g.to_vec();
                for (r, row) in gm.chunks_mut(f).enumerate() {
                    if !mask[r] {
                        row.iter_mut().for_each(|v| *v = T::zero());
                    }
                }
                if self.wants(*w) {
                    let dw = self.slot(*w, grads);
                    T::gemm(k, bs * tt, f, cols, true, &gm, false, dw, true);
                }
                if self.wants(*b) {
                    let db = self.slot(*b, grads);
                    for row in gm.chunks(f) {
                        add_into(db, row);
                    }
                }
                if self.wants(*x) {
                    let mut dcols = vec![T::zero(); bs * tt * k];
                    T::gemm(bs * tt, f, k, &gm, false, sw.data(), true, &mut dcols, false);
                    let dx = self.slot(*x, grads);
                    for i in 0..bs {
                        for t in 0..tt {
                            if !mask[i * tt + t] {
                                continue;
                            }
                            let row = &dcols[(i * tt + t) * k..(i * tt + t + 1) * k];
                            for s in 0..*width {
                                let src = t + s;
                                if src >= tt || !mask[i * tt + src] {
                                    continue;
                                }
                                let off = (i * tt + src) * din;
                                add_into(&mut dx[off..off + din], &row[s * din..(s + 1) * din]);
                            }
                        }
                    }
                }
            }
            Op::Dropout { x, scale } => {
                let dx = self.slot(*x, grads);
                for ((d, &gi), &s) in dx.iter_mut().zip(g).zip(scale) {
                    *d += gi * s;
                }
            }
            Op::SoftmaxRows(x) => {
                let y = value.expect("value");
                let c = y.cols();
                let dx = self.slot(*x, grads);
                for ((drow, yrow), grow) in dx.chunks_mut(c).zip(y.data().chunks(c)).zip(g.chunks(c)) {
                    let inner = dot(grow, yrow);
                    for ((d, &yi), &gi) in drow.iter_mut().zip(yrow).zip(grow) {
                        *d += yi * (gi - inner);
                    }
                }
            }
            Op::CrossEntropy { probs, labels } => {
                let sp = self.value(*probs);
                let c = sp.cols();
                let n = T::from_usize(labels.len()).expect("n");
                let dp = self.slot(*probs, grads);
                for (i, &l) in labels.iter().enumerate() {
                    let p = sp.data()[i * c + l];
                    if p >= T::epsilon() {
                        dp[i * c + l] -= g[0] / (n * p);
                    }
                }
            }
            Op::CosineRows { x, u } => {
                let (sx, su) = (self.value(*x), self.value(*u));
                let a = sx.cols();
                let s = value.expect("value").data();
                let un = norm(su.data());
                let guard = T::c(COSINE_NORM_GUARD);
                let mut dx = vec![T::zero(); sx.len()];
                let mut du = vec![T::zero(); su.len()];
                for (i, row) in sx.data().chunks(a).enumerate() {
                    let rn = norm(row);
                    if rn < guard || un < guard {
                        continue;
                    }
                    let gi = g[i];
                    let inv = T::one() / (rn * un);
                    for j in 0..a {
                        dx[i * a + j] += gi * (su.data()[j] * inv - s[i] * row[j] / (rn * rn));
                        du[j] += gi * (row[j] * inv - s[i] * su.data()[j] / (un * un));
                    }
                }
                if self.wants(*x) {
                    add_into(self.slot(*x, grads), &dx);
                }
                if self.wants(*u) {
                    add_into(self.slot(*u, grads), &du);
                }
            }
            Op::MaskedSoftmaxTime { x, mask } => {
                let y = value.expect("value");
                let tt = y.cols();
                let dx = self.slot(*x, grads);
                for i in 0..y.rows() {
                    let yrow = &y.data()[i * tt..(i + 1) * tt];
                    let grow = &g[i * tt..(i + 1) * tt];
                    let inner = dot(grow, yrow);
                    for t in 0..tt {
                        if mask[i * tt + t] {
                            dx[i * tt + t] += yrow[t] * (grow[t] - inner);
                        }
                    }
                }
            }
            Op::WeightedSumTime { x, w } => {
                let (sx, sw) = (self.value(*x), self.value(*w));
                let (b, tt, d) = seq_dims("weighted_sum", sx.shape())?;
                if self.wants(*x) {
                    let dx = self.slot(*x, grads);
                    for i in 0..b {
                        for t in 0..tt {
                            let wt = sw.data()[i * tt + t];
                            if wt == T::zero() {
                                continue;
                            }
                            let off = (i * tt + t) * d;
                            for j in 0..d {
                                dx[off + j] += wt * g[i * d + j];
                            }
                        }
                    }
                }
                if self.wants(*w) {
                    let dw = self.slot(*w, grads);
                    for i in 0..b {
                        for t in 0..tt {
                            let off = (i * tt + t) * d;
                            dw[i * tt + t] += dot(&sx.data()[off..off + d], &g[i * d..(i + 1) * d]);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn spread_over_time(
        &self,
        x: Var,
        mask: &[bool],
        g: &[T],
        counts: Option<&Vec<usize>>,
        dx: &mut [T],
    ) -> Result<()> {
        let (b, tt, d) = seq_dims("sum_over_time", self.value(x).shape())?;
        for i in 0..b {
            let scale = match counts {
                Some(c) => T::one() / T::from_usize(c[i]).expect("count"),
                None => T::one(),
            };
            for t in 0..tt {
                if !mask[i * tt + t] {
                    continue;
                }
                let off = (i * tt + t) * d;
                for j in 0..d {
                    dx[off + j] += g[i * d + j] * scale;
                }
            }
        }
        Ok(())
    }
}

fn add_dense<T: Scalar>(out: &mut Gradients<T>, id: ParamId, g: &[T]) {
    match &mut out.grads[id.0] {
        Some(ParamGrad::Dense(d)) => add_into(d, g),
        slot @ None => *slot = Some(ParamGrad::Dense(g.to_vec())),
        Some(ParamGrad::Rows { width, rows }) => {
            let mut dense = vec![T::zero(); g.len()];
            for (&r, v) in rows.iter() {
                dense[r * *width..(r + 1) * *width].copy_from_slice(v);
            }
            add_into(&mut dense, g);
            out.grads[id.0] = Some(ParamGrad::Dense(dense));
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub(crate) fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut z = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        z += *v;
    }
    row.iter_mut().for_each(|v| *v /= z);
}
