//! Reverse-mode differentiation over a linear recording of tensor ops.
//!
//! Nodes are appended in evaluation order, so every node's inputs precede
//! it and a single reverse sweep is a valid topological traversal: each
//! node is visited exactly once.

use super::{Result, Tensor, TensorError};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<S> {
    Leaf,
    Param {
        slot: usize,
    },
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    BatchMatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias {
        x: Var,
        bias: Var,
    },
    Scale {
        x: Var,
        factor: S,
    },
    Gelu(Var),
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<S>,
        rstd: Vec<S>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    CausalMask(Var),
    SplitHeads {
        x: Var,
        heads: usize,
    },
    MergeHeads {
        x: Var,
        heads: usize,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        denom: S,
    },
    Sum(Var),
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
}

/// Gradients of a scalar loss with respect to every parameter registered
/// on the tape, in registration order.
#[derive(Debug, Clone)]
pub struct ParamGrads<S> {
    pub names: Vec<String>,
    pub grads: Vec<Tensor<S>>,
}

impl<S: Scalar> ParamGrads<S> {
    /// Concatenates all parameter gradients row-major in registration order.
    pub fn flatten(&self) -> Vec<S> {
        let n = self.grads.iter().map(Tensor::len).sum();
        let mut out = Vec::with_capacity(n);
        for g in &self.grads {
            out.extend_from_slice(g.data());
        }
        out
    }
}

/// Masked attention scores; large enough that `exp` underflows to zero
/// while staying finite.
const MASKED: f64 = -1.0e30;

pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    params: Vec<(String, Var)>,
    tracing: bool,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn mm<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], sa: (isize, isize), b: &[S], sb: (isize, isize)) -> Vec<S> {
    let mut c = vec![S::zero(); m * n];
    S::gemm(m, k, n, a, sa, b, sb, &mut c, false);
    c
}

impl<S: Scalar> Tape<S> {
    /// A tape that records ops for a later [`Tape::backward`].
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
            tracing: true,
        }
    }

    /// A tape that only evaluates; `backward` on it is an error.
    pub fn untraced() -> Self {
        Self {
            tracing: false,
            ..Self::new()
        }
    }

    pub fn is_tracing(&self) -> bool {
        self.tracing
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>) -> Var {
        let op = if self.tracing { op } else { Op::Leaf };
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records a value that receives no gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records a trainable parameter. Registration order defines the
    /// order of [`ParamGrads`].
    pub fn param(&mut self, name: impl Into<String>, value: Tensor<S>) -> Var {
        let slot = self.params.len();
        let v = self.push(value, Op::Param { slot });
        self.params.push((name.into(), v));
        v
    }

    /// `a @ b` where `a` is `[.., k]` and `b` is `[k, n]` (or `[n, k]` when
    /// `trans_b`). Leading axes of `a` are preserved.
    pub fn matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() < 2 || sb.len() != 2 {
            return Err(mismatch());
        }
        let k = *sa.last().unwrap();
        let (kb, n) = if trans_b { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if k != kb {
            return Err(mismatch());
        }
        let m = self.value(a).len() / k;
        let strides_b = if trans_b { (1, k as isize) } else { (n as isize, 1) };
        let data = mm(m, k, n, self.value(a).data(), (k as isize, 1), self.value(b).data(), strides_b);
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        Ok(self.push(Tensor { shape, data }, Op::MatMul { a, b, trans_b }))
    }

    /// Batched product of `[B, m, k]` with `[B, k, n]` (or `[B, n, k]`).
    pub fn batch_matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let mismatch = || TensorError::ShapeMismatch {
            op: "batch_matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(mismatch());
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if k != kb {
            return Err(mismatch());
        }
        let strides_b = if trans_b { (1, k as isize) } else { (n as isize, 1) };
        let mut data = vec![S::zero(); batch * m * n];
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        for i in 0..batch {
            S::gemm(
                m,
                k,
                n,
                &av[i * m * k..(i + 1) * m * k],
                (k as isize, 1),
                &bv[i * k * n..(i + 1) * k * n],
                strides_b,
                &mut data[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        Ok(self.push(Tensor { shape: vec![batch, m, n], data }, Op::BatchMatMul { a, b, trans_b }))
    }

    fn elementwise(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(S, S) -> S) -> Result<Tensor<S>> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Ok(Tensor {
            shape: x.shape().to_vec(),
            data,
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.elementwise("add", a, b, |p, q| p + q)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.elementwise("sub", a, b, |p, q| p - q)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.elementwise("mul", a, b, |p, q| p * q)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    /// Adds a `[n]` bias to every row of a `[.., n]` tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = self.value(x).cols();
        if self.shape(bias) != [n] {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        let mut t = self.value(x).clone();
        let b = self.value(bias).data();
        for row in t.data_mut().chunks_mut(n) {
            for (v, &bb) in row.iter_mut().zip(b) {
                *v += bb;
            }
        }
        Ok(self.push(t, Op::AddBias { x, bias }))
    }

    pub fn scale(&mut self, x: Var, factor: S) -> Var {
        let mut t = self.value(x).clone();
        t.data_mut().iter_mut().for_each(|v| *v *= factor);
        self.push(t, Op::Scale { x, factor })
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let mut t = self.value(x).clone();
        t.data_mut().iter_mut().for_each(|v| *v = gelu(*v));
        self.push(t, Op::Gelu(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut t = self.value(x).clone();
        t.data_mut().iter_mut().for_each(|v| *v = v.max(S::zero()));
        self.push(t, Op::Relu(x))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let mut t = self.value(x).clone();
        let n = t.cols();
        for row in t.data_mut().chunks_mut(n) {
            softmax_in_place(row);
        }
        self.push(t, Op::Softmax(x))
    }

    /// Layer normalization over the last axis with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: S) -> Result<Var> {
        let n = self.value(x).cols();
        if self.shape(gain) != [n] || self.shape(bias) != [n] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(gain).to_vec(),
            });
        }
        let xv = self.value(x);
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let rows = xv.rows();
        let nf = S::of(n as f64);
        let mut out = Vec::with_capacity(xv.len());
        let mut xhat = Vec::with_capacity(xv.len());
        let mut rstd = Vec::with_capacity(rows);
        for row in xv.data().chunks(n) {
            let mean = row.iter().copied().sum::<S>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / nf;
            let r = S::one() / (var + eps).sqrt();
            rstd.push(r);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * r;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let t = Tensor {
            shape: xv.shape().to_vec(),
            data: out,
        };
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        ))
    }

    /// Gathers rows of a `[V, d]` table; the result has shape
    /// `out_shape ++ [d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize], out_shape: &[usize]) -> Result<Var> {
        let ts = self.shape(table).to_vec();
        if ts.len() != 2 || out_shape.iter().product::<usize>() != ids.len() {
            return Err(TensorError::ShapeMismatch {
                op: "embedding",
                lhs: ts,
                rhs: out_shape.to_vec(),
            });
        }
        let (vocab, d) = (ts[0], ts[1]);
        let tv = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= vocab {
                return Err(TensorError::IndexOutOfRange {
                    op: "embedding",
                    index: id,
                    bound: vocab,
                });
            }
            data.extend_from_slice(&tv[id * d..(id + 1) * d]);
        }
        let mut shape = out_shape.to_vec();
        shape.push(d);
        Ok(self.push(Tensor { shape, data }, Op::Embedding { table, ids: ids.to_vec() }))
    }

    /// Masks `[B, T, T]` attention scores so query `i` sees keys `j <= i`.
    pub fn causal_mask(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || s[1] != s[2] {
            return Err(TensorError::InvalidShape {
                op: "causal_mask",
                shape: s,
                reason: "expected [batch, T, T]".into(),
            });
        }
        let t = s[1];
        let mut out = self.value(x).clone();
        let masked = S::of(MASKED);
        for block in out.data_mut().chunks_mut(t * t) {
            for i in 0..t {
                for v in &mut block[i * t + i + 1..(i + 1) * t] {
                    *v = masked;
                }
            }
        }
        Ok(self.push(out, Op::CausalMask(x)))
    }

    /// `[B, T, H*dh]` to `[B*H, T, dh]`.
    pub fn split_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || heads == 0 || s[2] % heads != 0 {
            return Err(TensorError::InvalidShape {
                op: "split_heads",
                shape: s,
                reason: format!("last axis not divisible into {heads} heads"),
            });
        }
        let (b, t, d) = (s[0], s[1], s[2]);
        let dh = d / heads;
        let src = self.value(x).data();
        let mut data = vec![S::zero(); src.len()];
        for bi in 0..b {
            for ti in 0..t {
                let row = &src[(bi * t + ti) * d..(bi * t + ti + 1) * d];
                for h in 0..heads {
                    let dst = ((bi * heads + h) * t + ti) * dh;
                    data[dst..dst + dh].copy_from_slice(&row[h * dh..(h + 1) * dh]);
                }
            }
        }
        Ok(self.push(
            Tensor {
                shape: vec![b * heads, t, dh],
                data,
            },
            Op::SplitHeads { x, heads },
        ))
    }

    /// `[B*H, T, dh]` back to `[B, T, H*dh]`.
    pub fn merge_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || heads == 0 || s[0] % heads != 0 {
            return Err(TensorError::InvalidShape {
                op: "merge_heads",
                shape: s,
                reason: format!("leading axis not divisible into {heads} heads"),
            });
        }
        let (bh, t, dh) = (s[0], s[1], s[2]);
        let b = bh / heads;
        let d = dh * heads;
        let src = self.value(x).data();
        let mut data = vec![S::zero(); src.len()];
        for bi in 0..b {
            for h in 0..heads {
                for ti in 0..t {
                    let from = ((bi * heads + h) * t + ti) * dh;
                    let to = (bi * t + ti) * d + h * dh;
                    data[to..to + dh].copy_from_slice(&src[from..from + dh]);
                }
            }
        }
        Ok(self.push(
            Tensor {
                shape: vec![b, t, d],
                data,
            },
            Op::MergeHeads { x, heads },
        ))
    }

    /// Sum of token negative log-likelihoods divided by `denom`.
    ///
    /// `logits` is `[.., V]` with one row per position; rows whose target
    /// is `None` are ignored. Passing the global token count as `denom`
    /// lets callers split a batch into chunks whose losses add up to the
    /// batch mean.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>], denom: S) -> Result<Var> {
        let lv = self.value(logits);
        let v = lv.cols();
        if lv.rows() != targets.len() {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                lhs: lv.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let mut total = S::zero();
        for (row, tgt) in lv.data().chunks(v).zip(targets) {
            if let Some(y) = *tgt {
                if y >= v {
                    return Err(TensorError::IndexOutOfRange {
                        op: "cross_entropy",
                        index: y,
                        bound: v,
                    });
                }
                total += log_sum_exp(row) - row[y];
            }
        }
        let loss = total / denom;
        if !loss.is_finite() {
            return Err(TensorError::NonFinite("cross_entropy"));
        }
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                denom,
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<S>();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Propagates d(loss)/d(node) backwards and returns the gradient of
    /// every registered parameter. Unused parameters get zeros.
    pub fn backward(&self, loss: Var) -> Result<ParamGrads<S>> {
        if !self.tracing {
            return Err(TensorError::NotTraced);
        }
        let ls = self.value(loss);
        if !ls.is_scalar() {
            return Err(TensorError::NonScalarLoss(ls.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor {
            shape: ls.shape().to_vec(),
            data: vec![S::one()],
        });
        let mut param_grads: Vec<Option<Tensor<S>>> = vec![None; self.params.len()];

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param { slot } => param_grads[*slot] = Some(g),
                Op::MatMul { a, b, trans_b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let k = av.cols();
                    let m = av.len() / k;
                    let n = g.cols();
                    let da = if *trans_b {
                        mm(m, n, k, g.data(), (n as isize, 1), bv.data(), (k as isize, 1))
                    } else {
                        mm(m, n, k, g.data(), (n as isize, 1), bv.data(), (1, n as isize))
                    };
                    let db = if *trans_b {
                        mm(n, m, k, g.data(), (1, n as isize), av.data(), (k as isize, 1))
                    } else {
                        mm(k, m, n, av.data(), (1, k as isize), g.data(), (n as isize, 1))
                    };
                    accumulate(&mut grads, *a, av.shape(), da);
                    accumulate(&mut grads, *b, bv.shape(), db);
                }
                Op::BatchMatMul { a, b, trans_b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (batch, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                    let n = g.cols();
                    let mut da = vec![S::zero(); av.len()];
                    let mut db = vec![S::zero(); bv.len()];
                    for bi in 0..batch {
                        let gs = &g.data()[bi * m * n..(bi + 1) * m * n];
                        let as_ = &av.data()[bi * m * k..(bi + 1) * m * k];
                        let bs = &bv.data()[bi * k * n..(bi + 1) * k * n];
                        let da_s = &mut da[bi * m * k..(bi + 1) * m * k];
                        let db_s = &mut db[bi * k * n..(bi + 1) * k * n];
                        if *trans_b {
                            S::gemm(m, n, k, gs, (n as isize, 1), bs, (k as isize, 1), da_s, false);
                            S::gemm(n, m, k, gs, (1, n as isize), as_, (k as isize, 1), db_s, false);
                        } else {
                            S::gemm(m, n, k, gs, (n as isize, 1), bs, (1, n as isize), da_s, false);
                            S::gemm(k, m, n, as_, (1, k as isize), gs, (n as isize, 1), db_s, false);
                        }
                    }
                    accumulate(&mut grads, *a, av.shape(), da);
                    accumulate(&mut grads, *b, bv.shape(), db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.shape(), g.data().to_vec());
                    accumulate_tensor(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    let neg = g.data().iter().map(|&v| -v).collect();
                    accumulate(&mut grads, *a, g.shape(), g.data().to_vec());
                    accumulate(&mut grads, *b, g.shape(), neg);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let da = g.data().iter().zip(bv.data()).map(|(&gg, &y)| gg * y).collect();
                    let db = g.data().iter().zip(av.data()).map(|(&gg, &x)| gg * x).collect();
                    accumulate(&mut grads, *a, g.shape(), da);
                    accumulate(&mut grads, *b, g.shape(), db);
                }
                Op::AddBias { x, bias } => {
                    let n = g.cols();
                    let mut db = vec![S::zero(); n];
                    for row in g.data().chunks(n) {
                        for (acc, &v) in db.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    accumulate(&mut grads, *bias, &[n], db);
                    accumulate_tensor(&mut grads, *x, g);
                }
                Op::Scale { x, factor } => {
                    let d = g.data().iter().map(|&v| v * *factor).collect();
                    accumulate(&mut grads, *x, g.shape(), d);
                }
                Op::Gelu(x) => {
                    let xv = self.value(*x);
                    let d = g.data().iter().zip(xv.data()).map(|(&gg, &v)| gg * gelu_grad(v)).collect();
                    accumulate(&mut grads, *x, g.shape(), d);
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let d = g
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(&gg, &v)| if v > S::zero() { gg } else { S::zero() })
                        .collect();
                    accumulate(&mut grads, *x, g.shape(), d);
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let n = y.cols();
                    let mut d = Vec::with_capacity(y.len());
                    for (yr, gr) in y.data().chunks(n).zip(g.data().chunks(n)) {
                        let dot = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum::<S>();
                        d.extend(yr.iter().zip(gr).map(|(&p, &q)| p * (q - dot)));
                    }
                    accumulate(&mut grads, *x, g.shape(), d);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    let gv = self.value(*gain).data();
                    let n = gv.len();
                    let nf = S::of(n as f64);
                    let mut dgain = vec![S::zero(); n];
                    let mut dbias = vec![S::zero(); n];
                    let mut dx = Vec::with_capacity(g.len());
                    let mut dxhat = vec![S::zero(); n];
                    for ((gr, hr), &r) in g.data().chunks(n).zip(xhat.chunks(n)).zip(rstd) {
                        let mut mean_d = S::zero();
                        let mut mean_dh = S::zero();
                        for j in 0..n {
                            dgain[j] += gr[j] * hr[j];
                            dbias[j] += gr[j];
                            dxhat[j] = gr[j] * gv[j];
                            mean_d += dxhat[j];
                            mean_dh += dxhat[j] * hr[j];
                        }
                        mean_d /= nf;
                        mean_dh /= nf;
                        dx.extend((0..n).map(|j| r * (dxhat[j] - mean_d - hr[j] * mean_dh)));
                    }
                    accumulate(&mut grads, *gain, &[n], dgain);
                    accumulate(&mut grads, *bias, &[n], dbias);
                    accumulate(&mut grads, *x, g.shape(), dx);
                }
                Op::Embedding { table, ids } => {
                    let tv = self.value(*table);
                    let d = tv.cols();
                    let mut dt = vec![S::zero(); tv.len()];
                    for (row, &id) in g.data().chunks(d).zip(ids) {
                        for (acc, &v) in dt[id * d..(id + 1) * d].iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    accumulate(&mut grads, *table, tv.shape(), dt);
                }
                Op::CausalMask(x) => {
                    let t = g.shape()[1];
                    let mut d = g.into_data();
                    for block in d.chunks_mut(t * t) {
                        for i in 0..t {
                            for v in &mut block[i * t + i + 1..(i + 1) * t] {
                                *v = S::zero();
                            }
                        }
                    }
                    let shape = self.shape(*x).to_vec();
                    accumulate(&mut grads, *x, &shape, d);
                }
                Op::SplitHeads { x, heads } => {
                    let xs = self.shape(*x).to_vec();
                    let (b, t, d) = (xs[0], xs[1], xs[2]);
                    let dh = d / heads;
                    let mut dx = vec![S::zero(); g.len()];
                    for bi in 0..b {
                        for h in 0..*heads {
                            for ti in 0..t {
                                let from = ((bi * heads + h) * t + ti) * dh;
                                let to = (bi * t + ti) * d + h * dh;
                                dx[to..to + dh].copy_from_slice(&g.data()[from..from + dh]);
                            }
                        }
                    }
                    accumulate(&mut grads, *x, &xs, dx);
                }
                Op::MergeHeads { x, heads } => {
                    let xs = self.shape(*x).to_vec();
                    let (bh, t, dh) = (xs[0], xs[1], xs[2]);
                    let b = bh / heads;
                    let d = dh * heads;
                    let mut dx = vec![S::zero(); g.len()];
                    for bi in 0..b {
                        for ti in 0..t {
                            for h in 0..*heads {
                                let from = (bi * t + ti) * d + h * dh;
                                let to = ((bi * heads + h) * t + ti) * dh;
                                dx[to..to + dh].copy_from_slice(&g.data()[from..from + dh]);
                            }
                        }
                    }
                    accumulate(&mut grads, *x, &xs, dx);
                }
                Op::CrossEntropy { logits, targets, denom } => {
                    let lv = self.value(*logits);
                    let v = lv.cols();
                    let scale = g.data()[0] / *denom;
                    let mut d = vec![S::zero(); lv.len()];
                    for ((row, drow), tgt) in lv.data().chunks(v).zip(d.chunks_mut(v)).zip(targets) {
                        if let Some(y) = *tgt {
                            drow.copy_from_slice(row);
                            softmax_in_place(drow);
                            drow[y] -= S::one();
                            drow.iter_mut().for_each(|p| *p *= scale);
                        }
                    }
                    accumulate(&mut grads, *logits, lv.shape(), d);
                }
                Op::Sum(x) => {
                    let xs = self.shape(*x).to_vec();
                    let n = self.value(*x).len();
                    accumulate(&mut grads, *x, &xs, vec![g.data()[0]; n]);
                }
            }
        }

        let mut names = Vec::with_capacity(self.params.len());
        let mut out = Vec::with_capacity(self.params.len());
        for ((name, var), g) in self.params.iter().zip(param_grads) {
            let g = g.unwrap_or_else(|| Tensor::zeros(self.shape(*var)));
            if !g.all_finite() {
                return Err(TensorError::NonFiniteGradient(name.clone()));
            }
            names.push(name.clone());
            out.push(g);
        }
        Ok(ParamGrads { names, grads: out })
    }
}

fn accumulate<S: Scalar>(grads: &mut [Option<Tensor<S>>], v: Var, shape: &[usize], data: Vec<S>) {
    let t = Tensor {
        shape: shape.to_vec(),
        data,
    };
    accumulate_tensor(grads, v, t);
}

fn accumulate_tensor<S: Scalar>(grads: &mut [Option<Tensor<S>>], v: Var, t: Tensor<S>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&t),
        slot @ None => *slot = Some(t),
    }
}

pub(crate) fn log_sum_exp<S: Scalar>(row: &[S]) -> S {
    let max = row.iter().copied().fold(S::neg_infinity(), S::max);
    let s = row.iter().map(|&v| (v - max).exp()).sum::<S>();
    max + s.ln()
}

pub(crate) fn softmax_in_place<S: Scalar>(row: &mut [S]) {
    let max = row.iter().copied().fold(S::neg_infinity(), S::max);
    let mut total = S::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

fn gelu<S: Scalar>(x: S) -> S {
    let c = S::of((2.0 / std::f64::consts::PI).sqrt());
    let k = S::of(0.044715);
    let half = S::of(0.5);
    half * x * (S::one() + (c * (x + k * x * x * x)).tanh())
}

fn gelu_grad<S: Scalar>(x: S) -> S {
    let c = S::of((2.0 / std::f64::consts::PI).sqrt());
    let k = S::of(0.044715);
    let half = S::of(0.5);
    let t = (c * (x + k * x * x * x)).tanh();
    half * (S::one() + t) + half * x * (S::one() - t * t) * c * (S::one() + S::of(3.0) * k * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(t(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let i = tape.constant(t(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let c = tape.matmul(a, i, false).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_shape_error_names_op() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b, false).unwrap_err();
        assert_eq!(
            err,
            TensorError::ShapeMismatch {
                op: "matmul",
                lhs: vec![2, 3],
                rhs: vec![2, 3]
            }
        );
        assert!(err.to_string().contains("matmul"));
    }

    #[test]
    fn softmax_symmetric() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(t(&[&[0.0, 0.0]]));
        let s = tape.softmax(a);
        assert_eq!(tape.value(s).data(), &[0.5, 0.5]);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.constant(Tensor::zeros(&[1, 4]));
        let l = tape.cross_entropy(logits, &[Some(2)], 1.0).unwrap();
        assert!((tape.value(l).data()[0] - 4f64.ln()).abs() < 1e-15);
        assert!((4f64.ln() - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param("theta", Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.grads[0].data(), &[6.0]);
    }

    #[test]
    fn constant_loss_zero_gradient() {
        let mut tape = Tape::<f64>::new();
        let p = tape.param("p", Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let c = tape.constant(Tensor::scalar(5.0));
        let loss = tape.sum(c);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.grads[0].data(), &[0.0, 0.0, 0.0]);
        let _ = p;
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::<f64>::new();
        let p = tape.param("p", Tensor::new(vec![2, 2], vec![1.0, -2.0, 3.0, 0.5]).unwrap());
        let loss = tape.sum(p);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.flatten(), vec![1.0; 4]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::<f64>::new();
        let p = tape.param("p", Tensor::zeros(&[2]));
        assert_eq!(tape.backward(p).unwrap_err(), TensorError::NonScalarLoss(vec![2]));
    }

    #[test]
    fn untraced_tape_rejects_backward() {
        let mut tape = Tape::<f64>::untraced();
        let p = tape.param("p", Tensor::scalar(1.0));
        let l = tape.sum(p);
        assert_eq!(tape.backward(l).unwrap_err(), TensorError::NotTraced);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut tape = Tape::<f64>::new();
        let p = tape.param("blocks.0.w", Tensor::scalar(1.0));
        let nan = tape.constant(Tensor::scalar(f64::NAN));
        let y = tape.mul(p, nan).unwrap();
        assert_eq!(
            tape.backward(y).unwrap_err(),
            TensorError::NonFiniteGradient("blocks.0.w".into())
        );
    }

    #[test]
    fn causal_mask_hides_future() {
        let mut tape = Tape::<f64>::new();
        let s = tape.constant(Tensor::zeros(&[1, 3, 3]));
        let m = tape.causal_mask(s).unwrap();
        let p = tape.softmax(m);
        let v = tape.value(p).data();
        assert_eq!(&v[0..3], &[1.0, 0.0, 0.0]);
        assert_eq!(&v[3..6], &[0.5, 0.5, 0.0]);
        assert!(v.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn heads_round_trip() {
        let mut tape = Tape::<f64>::new();
        let data: Vec<f64> = (0..24).map(f64::from).collect();
        let x = tape.constant(Tensor::new(vec![2, 3, 4], data.clone()).unwrap());
        let s = tape.split_heads(x, 2).unwrap();
        assert_eq!(tape.value(s).shape(), &[4, 3, 2]);
        let m = tape.merge_heads(s, 2).unwrap();
        assert_eq!(tape.value(m).data(), &data[..]);
    }

    #[test]
    fn embedding_out_of_range() {
        let mut tape = Tape::<f64>::new();
        let table = tape.param("emb", Tensor::zeros(&[4, 2]));
        assert!(matches!(
            tape.embedding(table, &[1, 4], &[2]),
            Err(TensorError::IndexOutOfRange { index: 4, bound: 4, .. })
        ));
    }
}
