//! Reverse-mode differentiation over a recorded operation list.
//!
//! A [`Graph`] is built fresh for every forward pass. Parameter leaves are
//! registered with [`Graph::param`]; [`Graph::backward`] returns gradients for
//! those leaves only. Values produced by [`Graph::stop_grad`] and
//! [`Graph::constant`] never receive gradient.

use super::tensor::{gemm_into, gemm_strided, MatView};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, T),
    LayerNorm { x: Var, inv_std: Vec<T> },
    Softmax(Var),
    Gelu(Var),
    Silu(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<T>,
    },
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    Sum(Var),
    Mean(Var),
    MeanSquare(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients of a scalar with respect to registered parameters, indexed by
/// parameter id. Unregistered or unreached ids are `None`.
#[derive(Debug, Clone)]
pub struct Grads<T> {
    pub by_param: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, id: usize) -> Option<&Tensor<T>> {
        self.by_param.get(id).and_then(|g| g.as_ref())
    }
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    param_slots: usize,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            param_slots: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Register parameter `id`. Its gradient appears at `Grads::by_param[id]`.
    pub fn param(&mut self, id: usize, value: Tensor<T>) -> Var {
        self.param_slots = self.param_slots.max(id + 1);
        self.push(value, Op::Param(id), true)
    }

    /// Copy of `v` that contributes zero gradient upstream.
    pub fn stop_grad(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = super::matmul(self.value(a), self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    fn row_check(&self, x: Var, row: Var, what: &str) -> Result<usize> {
        let c = self.value(x).cols();
        if self.value(row).len() != c {
            return Err(Error::shape(format!(
                "{what}: row of {} values against {c} columns",
                self.value(row).len()
            )));
        }
        Ok(c)
    }

    /// `x + row`, broadcasting `row` over the rows of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let c = self.row_check(x, row, "add_row")?;
        let r = self.value(row).data().to_vec();
        let mut value = self.value(x).clone();
        for chunk in value.data_mut().chunks_mut(c) {
            for (v, &b) in chunk.iter_mut().zip(&r) {
                *v = *v + b;
            }
        }
        let rg = self.any_grad(&[x, row]);
        Ok(self.push(value, Op::AddRow(x, row), rg))
    }

    /// `x * row`, broadcasting `row` over the rows of `x`.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let c = self.row_check(x, row, "mul_row")?;
        let r = self.value(row).data().to_vec();
        let mut value = self.value(x).clone();
        for chunk in value.data_mut().chunks_mut(c) {
            for (v, &b) in chunk.iter_mut().zip(&r) {
                *v = *v * b;
            }
        }
        let rg = self.any_grad(&[x, row]);
        Ok(self.push(value, Op::MulRow(x, row), rg))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let value = self.value(x).scale(s);
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Scale(x, s), rg)
    }

    /// Layer normalization over the last axis, without affine parameters.
    pub fn layernorm(&mut self, x: Var, eps: T) -> Result<Var> {
        let c = self.value(x).cols();
        if c < 2 {
            return Err(Error::contract("layernorm needs a normalized axis of length >= 2"));
        }
        let mut value = self.value(x).clone();
        let inv_std = value
            .data_mut()
            .chunks_mut(c)
            .map(|row| super::tensor::normalize_row(row, eps).1)
            .collect();
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::LayerNorm { x, inv_std }, rg))
    }

    /// Layer normalization followed by a learned per-column gain and bias.
    pub fn layernorm_affine(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let n = self.layernorm(x, eps)?;
        let g = self.mul_row(n, gain)?;
        self.add_row(g, bias)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let rank = self.value(x).shape().len();
        let value = super::softmax(self.value(x), rank - 1)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Softmax(x), rg))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let c = T::c(GELU_C);
        let k = T::c(0.044715);
        let half = T::c(0.5);
        let value = self
            .value(x)
            .map(|v| half * v * (T::one() + (c * (v + k * v * v * v)).tanh()));
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Gelu(x), rg)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v / (T::one() + (-v).exp()));
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Silu(x), rg)
    }

    /// Multi-head scaled dot-product attention. `q` is `[n×d]`, `k` and `v`
    /// are `[m×d]`; heads split the `d` columns evenly.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (n, d) = self.value(q).as_matrix("attention q")?;
        let (m, dk) = self.value(k).as_matrix("attention k")?;
        let (m2, dv) = self.value(v).as_matrix("attention v")?;
        if dk != d || dv != d || m2 != m {
            return Err(Error::shape(format!(
                "attention q [{n}x{d}] k [{m}x{dk}] v [{m2}x{dv}]"
            )));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::contract(format!("{d} columns do not split into {heads} heads")));
        }
        let dh = d / heads;
        let scale = T::one() / T::c(dh as f64).sqrt();
        let qd = self.value(q).data();
        let kd = self.value(k).data();
        let vd = self.value(v).data();
        let mut probs = vec![T::zero(); heads * n * m];
        let mut out = vec![T::zero(); n * d];
        for h in 0..heads {
            let p = &mut probs[h * n * m..(h + 1) * n * m];
            gemm_into(
                p,
                n,
                dh,
                m,
                MatView::new(&qd[h * dh..], d, false),
                MatView::new(&kd[h * dh..], d, true),
                scale,
                T::zero(),
            );
            for row in p.chunks_mut(m) {
                let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for e in row.iter_mut() {
                    *e = (*e - mx).exp();
                    total = total + *e;
                }
                let inv = T::one() / total;
                for e in row.iter_mut() {
                    *e = *e * inv;
                }
            }
            gemm_strided(
                &mut out[h * dh..],
                d,
                n,
                m,
                dh,
                MatView::new(p, m, false),
                MatView::new(&vd[h * dh..], d, false),
                T::one(),
                T::zero(),
            );
        }
        let value = Tensor::new(&[n, d], out)?;
        value.check_finite("attention output")?;
        let rg = self.any_grad(&[q, k, v]);
        Ok(self.push(
            value,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            rg,
        ))
    }

    /// Concatenate matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::contract("concat_cols of nothing"));
        }
        let rows = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(Error::shape("concat_cols row counts differ"));
            }
            total += self.value(p).cols();
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let t = self.value(p);
                let c = t.cols();
                out.extend_from_slice(&t.data()[r * c..(r + 1) * c]);
            }
        }
        let value = Tensor::new(&[rows, total], out)?;
        let rg = self.any_grad(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Columns `start..start+len` of `x`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let (rows, c) = (t.rows(), t.cols());
        if len == 0 || start + len > c {
            return Err(Error::shape(format!(
                "slice_cols {start}..{} of {c} columns",
                start + len
            )));
        }
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&t.data()[r * c + start..r * c + start + len]);
        }
        let value = Tensor::new(&[rows, len], out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::SliceCols { x, start }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).mean());
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Mean(x), rg)
    }

    /// Mean of squared elements, the reduction used by every loss here.
    pub fn mean_square(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let value = Tensor::scalar(t.sq_norm() / T::c(t.len() as f64));
        let rg = self.any_grad(&[x]);
        self.push(value, Op::MeanSquare(x), rg)
    }

    /// Gradients of the scalar `loss` with respect to every registered
    /// parameter.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar, got shape {:?}",
                lv.shape()
            )));
        }
        lv.check_finite("loss")?;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut out = Grads {
            by_param: (0..self.param_slots).map(|_| None).collect(),
        };
        if !self.nodes[loss.0].requires_grad {
            return Ok(out);
        }
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => match &mut out.by_param[*id] {
                    Some(acc) => acc.axpy(T::one(), &g)?,
                    slot @ None => *slot = Some(g),
                },
                Op::MatMul(a, b) => self.back_matmul(&mut grads, &g, *a, *b),
                Op::Add(a, b) => {
                    self.accum(&mut grads, *a, |acc| add_into(acc, g.data()));
                    self.accum(&mut grads, *b, |acc| add_into(acc, g.data()));
                }
                Op::Sub(a, b) => {
                    self.accum(&mut grads, *a, |acc| add_into(acc, g.data()));
                    self.accum(&mut grads, *b, |acc| {
                        for (x, &y) in acc.iter_mut().zip(g.data()) {
                            *x = *x - y;
                        }
                    });
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    self.accum(&mut grads, *a, |acc| {
                        for ((x, &gy), &o) in acc.iter_mut().zip(g.data()).zip(bv) {
                            *x = *x + gy * o;
                        }
                    });
                    self.accum(&mut grads, *b, |acc| {
                        for ((x, &gy), &o) in acc.iter_mut().zip(g.data()).zip(av) {
                            *x = *x + gy * o;
                        }
                    });
                }
                Op::AddRow(x, row) => {
                    let c = g.cols();
                    self.accum(&mut grads, *x, |acc| add_into(acc, g.data()));
                    self.accum(&mut grads, *row, |acc| {
                        for chunk in g.data().chunks(c) {
                            add_into(acc, chunk);
                        }
                    });
                }
                Op::MulRow(x, row) => {
                    let c = g.cols();
                    let rv = self.value(*row).data();
                    let xv = self.value(*x).data();
                    self.accum(&mut grads, *x, |acc| {
                        for (a, gr) in acc.chunks_mut(c).zip(g.data().chunks(c)) {
                            for ((x, &gy), &r) in a.iter_mut().zip(gr).zip(rv) {
                                *x = *x + gy * r;
                            }
                        }
                    });
                    self.accum(&mut grads, *row, |acc| {
                        for (gr, xr) in g.data().chunks(c).zip(xv.chunks(c)) {
                            for ((a, &gy), &xx) in acc.iter_mut().zip(gr).zip(xr) {
                                *a = *a + gy * xx;
                            }
                        }
                    });
                }
                Op::Scale(x, s) => {
                    self.accum(&mut grads, *x, |acc| {
                        for (a, &gy) in acc.iter_mut().zip(g.data()) {
                            *a = *a + gy * *s;
                        }
                    });
                }
                Op::LayerNorm { x, inv_std } => {
                    let c = g.cols();
                    let xhat = node.value.data();
                    let n = T::c(c as f64);
                    self.accum(&mut grads, *x, |acc| {
                        for (((a, gr), xr), &inv) in acc
                            .chunks_mut(c)
                            .zip(g.data().chunks(c))
                            .zip(xhat.chunks(c))
                            .zip(inv_std)
                        {
                            let mg = gr.iter().copied().sum::<T>() / n;
                            let mgx = gr.iter().zip(xr).map(|(&a, &b)| a * b).sum::<T>() / n;
                            for ((a, &gy), &xh) in a.iter_mut().zip(gr).zip(xr) {
                                *a = *a + inv * (gy - mg - xh * mgx);
                            }
                        }
                    });
                }
                Op::Softmax(x) => {
                    let c = g.cols();
                    let p = node.value.data();
                    self.accum(&mut grads, *x, |acc| {
                        for ((a, gr), pr) in acc.chunks_mut(c).zip(g.data().chunks(c)).zip(p.chunks(c)) {
                            let dot = gr.iter().zip(pr).map(|(&a, &b)| a * b).sum::<T>();
                            for ((a, &gy), &pp) in a.iter_mut().zip(gr).zip(pr) {
                                *a = *a + pp * (gy - dot);
                            }
                        }
                    });
                }
                Op::Gelu(x) => {
                    let c = T::c(GELU_C);
                    let k = T::c(0.044715);
                    let half = T::c(0.5);
                    let three = T::c(3.0);
                    let xv = self.value(*x).data();
                    self.accum(&mut grads, *x, |acc| {
                        for ((a, &gy), &v) in acc.iter_mut().zip(g.data()).zip(xv) {
                            let th = (c * (v + k * v * v * v)).tanh();
                            let dinner = c * (T::one() + three * k * v * v);
                            let d = half * (T::one() + th) + half * v * (T::one() - th * th) * dinner;
                            *a = *a + gy * d;
                        }
                    });
                }
                Op::Silu(x) => {
                    let xv = self.value(*x).data();
                    self.accum(&mut grads, *x, |acc| {
                        for ((a, &gy), &v) in acc.iter_mut().zip(g.data()).zip(xv) {
                            let s = T::one() / (T::one() + (-v).exp());
                            *a = *a + gy * s * (T::one() + v * (T::one() - s));
                        }
                    });
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    probs,
                } => self.back_attention(&mut grads, &g, *q, *k, *v, *heads, probs),
                Op::ConcatCols(parts) => {
                    let rows = g.rows();
                    let total = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.value(p).cols();
                        self.accum(&mut grads, p, |acc| {
                            for r in 0..rows {
                                add_into(
                                    &mut acc[r * c..(r + 1) * c],
                                    &g.data()[r * total + offset..r * total + offset + c],
                                );
                            }
                        });
                        offset += c;
                    }
                }
                Op::SliceCols { x, start } => {
                    let rows = g.rows();
                    let len = g.cols();
                    let c = self.value(*x).cols();
                    self.accum(&mut grads, *x, |acc| {
                        for r in 0..rows {
                            add_into(
                                &mut acc[r * c + start..r * c + start + len],
                                &g.data()[r * len..(r + 1) * len],
                            );
                        }
                    });
                }
                Op::Sum(x) => {
                    let gy = g.data()[0];
                    self.accum(&mut grads, *x, |acc| acc.iter_mut().for_each(|a| *a = *a + gy));
                }
                Op::Mean(x) => {
                    let gy = g.data()[0] / T::c(self.value(*x).len() as f64);
                    self.accum(&mut grads, *x, |acc| acc.iter_mut().for_each(|a| *a = *a + gy));
                }
                Op::MeanSquare(x) => {
                    let xv = self.value(*x).data();
                    let gy = g.data()[0] * T::c(2.0) / T::c(xv.len() as f64);
                    self.accum(&mut grads, *x, |acc| {
                        for (a, &v) in acc.iter_mut().zip(xv) {
                            *a = *a + gy * v;
                        }
                    });
                }
            }
        }
        Ok(out)
    }

    /// Run `f` on the gradient buffer of `target`, allocating it on first
    /// use. Targets that do not require gradient are skipped.
    fn accum(&self, grads: &mut [Option<Tensor<T>>], target: Var, f: impl FnOnce(&mut [T])) {
        let node = &self.nodes[target.0];
        if !node.requires_grad {
            return;
        }
        let slot = grads[target.0].get_or_insert_with(|| Tensor::zeros(node.value.shape()));
        f(slot.data_mut());
    }

    fn back_matmul(&self, grads: &mut [Option<Tensor<T>>], g: &Tensor<T>, a: Var, b: Var) {
        let av = self.value(a);
        let bv = self.value(b);
        let (m, k) = (av.shape()[0], av.shape()[1]);
        let n = bv.shape()[1];
        // dA = dC · Bᵀ
        self.accum(grads, a, |acc| {
            gemm_into(
                acc,
                m,
                n,
                k,
                MatView::new(g.data(), n, false),
                MatView::new(bv.data(), n, true),
                T::one(),
                T::one(),
            )
        });
        // dB = Aᵀ · dC
        self.accum(grads, b, |acc| {
            gemm_into(
                acc,
                k,
                m,
                n,
                MatView::new(av.data(), k, true),
                MatView::new(g.data(), n, false),
                T::one(),
                T::one(),
            )
        });
    }

    #[allow(clippy::too_many_arguments)]
    fn back_attention(
        &self,
        grads: &mut [Option<Tensor<T>>],
        g: &Tensor<T>,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: &[T],
    ) {
        let (n, d) = (g.shape()[0], g.shape()[1]);
        let m = self.value(k).shape()[0];
        let dh = d / heads;
        let scale = T::one() / T::c(dh as f64).sqrt();
        let (qd, kd, vd) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
        );
        let mut gq = vec![T::zero(); n * d];
        let mut gk = vec![T::zero(); m * d];
        let mut gv = vec![T::zero(); m * d];
        let mut ds = vec![T::zero(); n * m];
        for h in 0..heads {
            let p = &probs[h * n * m..(h + 1) * n * m];
            let go = MatView::new(&g.data()[h * dh..], d, false);
            // dV_h = Pᵀ · dO_h
            gemm_strided(
                &mut gv[h * dh..],
                d,
                m,
                n,
                dh,
                MatView::new(p, m, true),
                go,
                T::one(),
                T::zero(),
            );
            // dP = dO_h · V_hᵀ
            gemm_into(
                &mut ds,
                n,
                dh,
                m,
                go,
                MatView::new(&vd[h * dh..], d, true),
                T::one(),
                T::zero(),
            );
            for (dr, pr) in ds.chunks_mut(m).zip(p.chunks(m)) {
                let dot = dr.iter().zip(pr).map(|(&a, &b)| a * b).sum::<T>();
                for (x, &pp) in dr.iter_mut().zip(pr) {
                    *x = pp * (*x - dot) * scale;
                }
            }
            // dQ_h = dS · K_h ; dK_h = dSᵀ · Q_h
            gemm_strided(
                &mut gq[h * dh..],
                d,
                n,
                m,
                dh,
                MatView::new(&ds, m, false),
                MatView::new(&kd[h * dh..], d, false),
                T::one(),
                T::zero(),
            );
            gemm_strided(
                &mut gk[h * dh..],
                d,
                m,
                n,
                dh,
                MatView::new(&ds, m, true),
                MatView::new(&qd[h * dh..], d, false),
                T::one(),
                T::zero(),
            );
        }
        self.accum(grads, q, |acc| add_into(acc, &gq));
        self.accum(grads, k, |acc| add_into(acc, &gk));
        self.accum(grads, v, |acc| add_into(acc, &gv));
    }
}

fn add_into<T: Real>(acc: &mut [T], src: &[T]) {
    for (a, &s) in acc.iter_mut().zip(src) {
        *a = *a + s;
    }
}
