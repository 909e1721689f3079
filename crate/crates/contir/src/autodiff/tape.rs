//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every primitive operation of one forward pass; calling
//! [`Tape::backward`] replays the record once in reverse and returns the
//! gradient of a scalar root with respect to every named parameter. One tape
//! serves exactly one forward/backward cycle and is dropped afterwards.
//!
//! Structural misuse (shape mismatches, log of a non-positive value,
//! division by zero, out-of-range lookup indices) panics: such calls are
//! programming errors, not data conditions. Non-finite values arising from
//! arithmetic (overflowing `exp`, near-zero divisors) propagate through the
//! forward values and surface as [`Error::NonFinite`] when a scalar is
//! extracted with [`Var::scalar_value`] or when `backward` runs.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ops::{Add, Mul, Sub};
use std::rc::Rc;

use super::params::{GradientMap, ParameterSet};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Recording tape for one forward/backward cycle.
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

/// Handle to a value recorded on a tape.
#[derive(Clone)]
pub struct Var {
    tape: Tape,
    id: usize,
    shape: Vec<usize>,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
    params: BTreeMap<String, usize>,
    consumed: bool,
}

struct Node {
    value: Tensor,
    rule: Rule,
    needs_grad: bool,
}

enum Rule {
    Leaf,
    Param,
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Div { a: usize, b: usize },
    MatMul { a: usize, b: usize },
    Transpose { a: usize },
    Concat { parts: Vec<usize>, axis: usize },
    Reshape { a: usize },
    SumAxis { a: usize, axis: usize },
    MaxAxis { a: usize, argmax: Vec<usize> },
    Tanh { a: usize },
    Sigmoid { a: usize },
    Exp { a: usize },
    Ln { a: usize },
    Lookup { table: usize, indices: Vec<usize> },
    MaskedFill { a: usize, keep: Vec<bool> },
    Conv1d { x: usize, w: usize, bias: usize },
    L2NormalizeRows { a: usize },
    CosineMatrix { a: usize, b: usize },
    StopGradient,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Record a constant leaf. No gradient flows into it.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, Rule::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    /// Record a named trainable leaf. Names must be unique per tape.
    pub fn param(&self, name: &str, value: &Tensor) -> Var {
        let var = self.push(value.clone(), Rule::Param, true);
        let mut inner = self.inner.borrow_mut();
        let prev = inner.params.insert(name.to_string(), var.id);
        assert!(prev.is_none(), "parameter {name:?} registered twice");
        var
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(&self, parts: &[&Var], axis: usize) -> Var {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let first = parts[0].shape.clone();
        assert!(axis < first.len(), "concat axis {axis} out of range");
        let mut total = 0usize;
        for p in parts {
            assert_eq!(p.shape.len(), first.len(), "concat rank mismatch");
            for (d, (&got, &want)) in p.shape.iter().zip(&first).enumerate() {
                if d != axis {
                    assert_eq!(got, want, "concat extent mismatch on axis {d}");
                }
            }
            total += p.shape[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = total;
        let outer: usize = first[..axis].iter().product();
        let inner_n: usize = first[axis + 1..].iter().product();
        let mut data = vec![0.0; out_shape.iter().product()];
        let out_block = total * inner_n;
        let mut offset = 0usize;
        for p in parts {
            let e = p.shape[axis];
            let src = self.value_of(p.id);
            for o in 0..outer {
                let dst_start = o * out_block + offset * inner_n;
                let src_start = o * e * inner_n;
                data[dst_start..dst_start + e * inner_n]
                    .copy_from_slice(&src.data()[src_start..src_start + e * inner_n]);
            }
            offset += e;
        }
        let needs = parts.iter().any(|p| self.needs_grad(p.id));
        let ids = parts.iter().map(|p| p.id).collect();
        self.push(
            Tensor::new(out_shape, data),
            Rule::Concat { parts: ids, axis },
            needs,
        )
    }

    /// Gradient of a scalar root with respect to every parameter in `params`.
    ///
    /// Parameters that do not touch the root map to zero tensors. The record
    /// is consumed: a second call on the same tape is an error.
    pub fn backward(&self, root: &Var, params: &ParameterSet) -> Result<GradientMap> {
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(Error::Train("computation record already consumed".into()));
        }
        inner.consumed = true;
        let root_value = &inner.nodes[root.id].value;
        if root_value.len() != 1 {
            return Err(Error::Train(format!(
                "backward root must be scalar, got shape {:?}",
                root_value.shape()
            )));
        }
        if !root_value.all_finite() {
            return Err(Error::NonFinite("backward root".into()));
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; root.id + 1];
        grads[root.id] = Some(Tensor::new(root_value.shape().to_vec(), vec![1.0]));
        for id in (0..=root.id).rev() {
            let node = &inner.nodes[id];
            if !node.needs_grad || matches!(node.rule, Rule::Leaf | Rule::Param) {
                continue;
            }
            let grad = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            propagate(&inner.nodes, id, &grad, &mut grads);
        }

        let mut map = BTreeMap::new();
        for (name, value) in params.iter() {
            let grad = match inner.params.get(name) {
                Some(&id) => grads[id].take().unwrap_or_else(|| {
                    Tensor::zeros(inner.nodes[id].value.shape())
                }),
                None => Tensor::zeros(value.shape()),
            };
            if !grad.all_finite() {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
            map.insert(name.clone(), grad);
        }
        Ok(GradientMap::from_map(map))
    }

    fn push(&self, value: Tensor, rule: Rule, needs_grad: bool) -> Var {
        let shape = value.shape().to_vec();
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            value,
            rule,
            needs_grad,
        });
        Var {
            tape: self.clone(),
            id,
            shape,
        }
    }

    fn value_of(&self, id: usize) -> Tensor {
        self.inner.borrow().nodes[id].value.clone()
    }

    fn needs_grad(&self, id: usize) -> bool {
        self.inner.borrow().nodes[id].needs_grad
    }

    fn with_value<T>(&self, id: usize, f: impl FnOnce(&Tensor) -> T) -> T {
        f(&self.inner.borrow().nodes[id].value)
    }
}

impl Var {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// The tape this variable is recorded on.
    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.value_of(self.id)
    }

    /// Extract a single-element value, rejecting non-finite results.
    pub fn scalar_value(&self) -> Result<f64> {
        let v = self.tape.with_value(self.id, |t| {
            assert_eq!(t.len(), 1, "scalar_value on tensor of len {}", t.len());
            t.data()[0]
        });
        if !v.is_finite() {
            return Err(Error::NonFinite("forward scalar".into()));
        }
        Ok(v)
    }

    pub fn add(&self, other: &Var) -> Var {
        self.binary_elementwise(other, |x, y| x + y, "add", |a, b| Rule::Add { a, b })
    }

    pub fn sub(&self, other: &Var) -> Var {
        self.binary_elementwise(other, |x, y| x - y, "sub", |a, b| Rule::Sub { a, b })
    }

    pub fn mul(&self, other: &Var) -> Var {
        self.binary_elementwise(other, |x, y| x * y, "mul", |a, b| Rule::Mul { a, b })
    }

    pub fn div(&self, other: &Var) -> Var {
        self.tape.with_value(other.id, |t| {
            assert!(
                t.data().iter().all(|&v| v != 0.0),
                "division by zero"
            );
        });
        self.binary_elementwise(other, |x, y| x / y, "div", |a, b| Rule::Div { a, b })
    }

    /// Matrix product of two 2-D tensors.
    pub fn matmul(&self, other: &Var) -> Var {
        assert_eq!(self.shape.len(), 2, "matmul lhs must be 2-D");
        assert_eq!(other.shape.len(), 2, "matmul rhs must be 2-D");
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        assert_eq!(k, k2, "matmul inner extents differ: {k} vs {k2}");
        let out = self.tape.with_value(self.id, |a| {
            self.tape
                .with_value(other.id, |b| mat_mul(a.data(), b.data(), m, k, n))
        });
        self.tape.push(
            Tensor::matrix(m, n, out),
            Rule::MatMul {
                a: self.id,
                b: other.id,
            },
            self.needs_grad_or(other),
        )
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&self) -> Var {
        assert_eq!(self.shape.len(), 2, "transpose expects a 2-D tensor");
        let (r, c) = (self.shape[0], self.shape[1]);
        let out = self.tape.with_value(self.id, |t| {
            let mut data = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    data[j * r + i] = t.data()[i * c + j];
                }
            }
            data
        });
        self.tape.push(
            Tensor::matrix(c, r, out),
            Rule::Transpose { a: self.id },
            self.tape.needs_grad(self.id),
        )
    }

    pub fn reshape(&self, new_shape: &[usize]) -> Var {
        let n: usize = new_shape.iter().product();
        assert_eq!(
            n,
            self.shape.iter().product::<usize>(),
            "reshape from {:?} to {new_shape:?}",
            self.shape
        );
        let value = self.tape.with_value(self.id, |t| {
            Tensor::new(new_shape.to_vec(), t.data().to_vec())
        });
        self.tape.push(
            value,
            Rule::Reshape { a: self.id },
            self.tape.needs_grad(self.id),
        )
    }

    pub fn sum_axis(&self, axis: usize) -> Var {
        let (outer, mid, inner_n, out_shape) = reduce_dims(&self.shape, axis);
        let out = self.tape.with_value(self.id, |t| {
            let mut data = vec![0.0; outer * inner_n];
            for o in 0..outer {
                for m in 0..mid {
                    for i in 0..inner_n {
                        data[o * inner_n + i] += t.data()[(o * mid + m) * inner_n + i];
                    }
                }
            }
            data
        });
        self.tape.push(
            Tensor::new(out_shape, out),
            Rule::SumAxis { a: self.id, axis },
            self.tape.needs_grad(self.id),
        )
    }

    /// Maximum over one axis. The subgradient flows to the first maximal
    /// element along the axis.
    pub fn max_axis(&self, axis: usize) -> Var {
        let (outer, mid, inner_n, out_shape) = reduce_dims(&self.shape, axis);
        assert!(mid > 0, "max over empty axis");
        let (out, argmax) = self.tape.with_value(self.id, |t| {
            let mut data = vec![f64::NEG_INFINITY; outer * inner_n];
            let mut argmax = vec![0usize; outer * inner_n];
            for o in 0..outer {
                for m in 0..mid {
                    for i in 0..inner_n {
                        let src = (o * mid + m) * inner_n + i;
                        let dst = o * inner_n + i;
                        if t.data()[src] > data[dst] {
                            data[dst] = t.data()[src];
                            argmax[dst] = src;
                        }
                    }
                }
            }
            (data, argmax)
        });
        self.tape.push(
            Tensor::new(out_shape, out),
            Rule::MaxAxis {
                a: self.id,
                argmax,
            },
            self.tape.needs_grad(self.id),
        )
    }

    pub fn tanh(&self) -> Var {
        self.unary(|x| x.tanh(), |a| Rule::Tanh { a })
    }

    pub fn sigmoid(&self) -> Var {
        self.unary(stable_sigmoid, |a| Rule::Sigmoid { a })
    }

    pub fn exp(&self) -> Var {
        self.unary(f64::exp, |a| Rule::Exp { a })
    }

    /// Natural log; panics when any input is outside the domain `x > 0`.
    pub fn ln(&self) -> Var {
        self.tape.with_value(self.id, |t| {
            assert!(
                t.data().iter().all(|&v| v > 0.0),
                "ln domain violation: input must be > 0"
            );
        });
        self.unary(f64::ln, |a| Rule::Ln { a })
    }

    /// Gather rows of a 2-D table by index. Not differentiable with respect
    /// to the indices.
    pub fn lookup(&self, indices: &[usize]) -> Var {
        assert_eq!(self.shape.len(), 2, "lookup table must be 2-D");
        let (rows, cols) = (self.shape[0], self.shape[1]);
        let out = self.tape.with_value(self.id, |t| {
            let mut data = Vec::with_capacity(indices.len() * cols);
            for &idx in indices {
                assert!(idx < rows, "lookup index {idx} out of range ({rows} rows)");
                data.extend_from_slice(&t.data()[idx * cols..(idx + 1) * cols]);
            }
            data
        });
        self.tape.push(
            Tensor::matrix(indices.len(), cols, out),
            Rule::Lookup {
                table: self.id,
                indices: indices.to_vec(),
            },
            self.tape.needs_grad(self.id),
        )
    }

    /// Keep entries where `mask` is nonzero, replace the rest with `fill`.
    /// Gradient flows only through kept entries.
    pub fn masked_fill(&self, mask: &Tensor, fill: f64) -> Var {
        assert_eq!(mask.shape(), self.shape.as_slice(), "masked_fill shape");
        let keep: Vec<bool> = mask.data().iter().map(|&m| m != 0.0).collect();
        let out = self.tape.with_value(self.id, |t| {
            t.data()
                .iter()
                .zip(&keep)
                .map(|(&v, &k)| if k { v } else { fill })
                .collect::<Vec<f64>>()
        });
        self.tape.push(
            Tensor::new(self.shape.clone(), out),
            Rule::MaskedFill { a: self.id, keep },
            self.tape.needs_grad(self.id),
        )
    }

    /// Valid 1-D convolution over the leading axis.
    ///
    /// `self` is `[len, in_channels]`, `weight` is
    /// `[out_channels, window, in_channels]`, `bias` is `[out_channels]`;
    /// the result is `[len - window + 1, out_channels]`.
    pub fn conv1d(&self, weight: &Var, bias: &Var) -> Var {
        assert_eq!(self.shape.len(), 2, "conv1d input must be 2-D");
        assert_eq!(weight.shape.len(), 3, "conv1d weight must be 3-D");
        let (len, cin) = (self.shape[0], self.shape[1]);
        let (cout, win, cin2) = (weight.shape[0], weight.shape[1], weight.shape[2]);
        assert_eq!(cin, cin2, "conv1d channel mismatch");
        assert_eq!(bias.shape.as_slice(), &[cout], "conv1d bias shape");
        assert!(len >= win, "conv1d input shorter than window");
        let lout = len - win + 1;
        let out = self.tape.with_value(self.id, |x| {
            self.tape.with_value(weight.id, |w| {
                self.tape.with_value(bias.id, |b| {
                    let mut data = vec![0.0; lout * cout];
                    for t in 0..lout {
                        for o in 0..cout {
                            let mut acc = b.data()[o];
                            for j in 0..win {
                                let xrow = (t + j) * cin;
                                let wrow = (o * win + j) * cin;
                                for i in 0..cin {
                                    acc += x.data()[xrow + i] * w.data()[wrow + i];
                                }
                            }
                            data[t * cout + o] = acc;
                        }
                    }
                    data
                })
            })
        });
        let needs = self.tape.needs_grad(self.id)
            || self.tape.needs_grad(weight.id)
            || self.tape.needs_grad(bias.id);
        self.tape.push(
            Tensor::matrix(lout, cout, out),
            Rule::Conv1d {
                x: self.id,
                w: weight.id,
                bias: bias.id,
            },
            needs,
        )
    }

    /// Normalize each row (last axis) to unit Euclidean length. Rows of
    /// exactly zero norm stay zero and receive zero gradient.
    pub fn l2_normalize(&self) -> Var {
        let (rows, cols) = rows_cols(&self.shape);
        let out = self.tape.with_value(self.id, |t| {
            let mut data = t.data().to_vec();
            for r in 0..rows {
                let row = &mut data[r * cols..(r + 1) * cols];
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm != 0.0 {
                    row.iter_mut().for_each(|v| *v /= norm);
                }
            }
            data
        });
        self.tape.push(
            Tensor::new(self.shape.clone(), out),
            Rule::L2NormalizeRows { a: self.id },
            self.tape.needs_grad(self.id),
        )
    }

    /// Row-wise cosine similarity of two matrices sharing the last axis:
    /// `[m, n] x [p, n] -> [m, p]`. Pairs involving a zero-norm row score 0
    /// and receive zero gradient.
    pub fn cosine_matrix(&self, other: &Var) -> Var {
        assert_eq!(self.shape.len(), 2, "cosine_matrix lhs must be 2-D");
        assert_eq!(other.shape.len(), 2, "cosine_matrix rhs must be 2-D");
        assert_eq!(self.shape[1], other.shape[1], "cosine_matrix width");
        let (m, n) = (self.shape[0], self.shape[1]);
        let p = other.shape[0];
        let out = self.tape.with_value(self.id, |a| {
            self.tape.with_value(other.id, |b| {
                let na = row_norms(a.data(), m, n);
                let nb = row_norms(b.data(), p, n);
                let mut data = vec![0.0; m * p];
                for i in 0..m {
                    if na[i] == 0.0 {
                        continue;
                    }
                    for j in 0..p {
                        if nb[j] == 0.0 {
                            continue;
                        }
                        let dot: f64 = (0..n)
                            .map(|t| a.data()[i * n + t] * b.data()[j * n + t])
                            .sum();
                        data[i * p + j] = dot / (na[i] * nb[j]);
                    }
                }
                data
            })
        });
        self.tape.push(
            Tensor::matrix(m, p, out),
            Rule::CosineMatrix {
                a: self.id,
                b: other.id,
            },
            self.needs_grad_or(other),
        )
    }

    /// Identity forward, zero backward.
    pub fn stop_gradient(&self) -> Var {
        let value = self.value();
        self.tape.push(value, Rule::StopGradient, false)
    }

    pub fn add_scalar(&self, c: f64) -> Var {
        self.add(&self.tape.scalar(c))
    }

    pub fn mul_scalar(&self, c: f64) -> Var {
        self.mul(&self.tape.scalar(c))
    }

    /// `ln(1 + x)` composed from the primitives.
    pub fn log1p(&self) -> Var {
        self.add_scalar(1.0).ln()
    }

    /// Sum of all elements as a scalar.
    pub fn sum_all(&self) -> Var {
        let mut v = self.clone();
        while !v.shape.is_empty() {
            let last = v.shape.len() - 1;
            v = v.sum_axis(last);
        }
        v
    }

    fn unary(&self, f: impl Fn(f64) -> f64, rule: impl FnOnce(usize) -> Rule) -> Var {
        let out = self.tape.with_value(self.id, |t| t.map(&f));
        self.tape
            .push(out, rule(self.id), self.tape.needs_grad(self.id))
    }

    fn needs_grad_or(&self, other: &Var) -> bool {
        self.tape.needs_grad(self.id) || self.tape.needs_grad(other.id)
    }

    fn binary_elementwise(
        &self,
        other: &Var,
        f: impl Fn(f64, f64) -> f64,
        op: &str,
        rule: impl FnOnce(usize, usize) -> Rule,
    ) -> Var {
        let value = self.tape.with_value(self.id, |a| {
            self.tape
                .with_value(other.id, |b| broadcast_zip(a, b, &f, op))
        });
        self.tape
            .push(value, rule(self.id, other.id), self.needs_grad_or(other))
    }
}

impl Add for &Var {
    type Output = Var;
    fn add(self, rhs: &Var) -> Var {
        Var::add(self, rhs)
    }
}

impl Sub for &Var {
    type Output = Var;
    fn sub(self, rhs: &Var) -> Var {
        Var::sub(self, rhs)
    }
}

impl Mul for &Var {
    type Output = Var;
    fn mul(self, rhs: &Var) -> Var {
        Var::mul(self, rhs)
    }
}

/// Elementwise combine with broadcasting over leading axes: shapes must be
/// equal, or the shorter shape must be a suffix of the longer one.
fn broadcast_zip(a: &Tensor, b: &Tensor, f: &impl Fn(f64, f64) -> f64, op: &str) -> Tensor {
    if a.shape() == b.shape() {
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        return Tensor::new(a.shape().to_vec(), data);
    }
    if a.shape().ends_with(b.shape()) {
        let bl = b.len().max(1);
        let data = a
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, b.data()[i % bl]))
            .collect();
        return Tensor::new(a.shape().to_vec(), data);
    }
    if b.shape().ends_with(a.shape()) {
        let al = a.len().max(1);
        let data = b
            .data()
            .iter()
            .enumerate()
            .map(|(i, &y)| f(a.data()[i % al], y))
            .collect();
        return Tensor::new(b.shape().to_vec(), data);
    }
    panic!(
        "{op}: shapes {:?} and {:?} are not broadcast-compatible",
        a.shape(),
        b.shape()
    );
}

/// Reduce a full-shape gradient onto a broadcast operand by summing the
/// leading repetitions.
fn reduce_to_shape(grad: &Tensor, target_shape: &[usize]) -> Tensor {
    if grad.shape() == target_shape {
        return grad.clone();
    }
    let tl: usize = target_shape.iter().product::<usize>().max(1);
    let mut data = vec![0.0; tl];
    for (i, &g) in grad.data().iter().enumerate() {
        data[i % tl] += g;
    }
    Tensor::new(target_shape.to_vec(), data)
}

fn reduce_dims(shape: &[usize], axis: usize) -> (usize, usize, usize, Vec<usize>) {
    assert!(axis < shape.len(), "axis {axis} out of range for {shape:?}");
    let outer: usize = shape[..axis].iter().product();
    let mid = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out_shape = shape.to_vec();
    out_shape.remove(axis);
    (outer, mid, inner, out_shape)
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        1 => (1, shape[0]),
        2 => (shape[0], shape[1]),
        _ => panic!("expected 1-D or 2-D tensor, got {shape:?}"),
    }
}

fn row_norms(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    (0..rows)
        .map(|r| {
            data[r * cols..(r + 1) * cols]
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

fn mat_mul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for t in 0..k {
            let av = a[i * k + t];
            if av == 0.0 {
                continue;
            }
            let brow = &b[t * n..(t + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: usize, contribution: Tensor) {
    match &mut grads[id] {
        Some(existing) => {
            for (e, c) in existing.data_mut().iter_mut().zip(contribution.data()) {
                *e += c;
            }
        }
        slot => *slot = Some(contribution),
    }
}

fn propagate(nodes: &[Node], id: usize, grad: &Tensor, grads: &mut [Option<Tensor>]) {
    let needs = |pid: usize| nodes[pid].needs_grad;
    match &nodes[id].rule {
        Rule::Leaf | Rule::Param | Rule::StopGradient => {}
        Rule::Add { a, b } => {
            if needs(*a) {
                accumulate(grads, *a, reduce_to_shape(grad, nodes[*a].value.shape()));
            }
            if needs(*b) {
                accumulate(grads, *b, reduce_to_shape(grad, nodes[*b].value.shape()));
            }
        }
        Rule::Sub { a, b } => {
            if needs(*a) {
                accumulate(grads, *a, reduce_to_shape(grad, nodes[*a].value.shape()));
            }
            if needs(*b) {
                let neg = grad.map(|g| -g);
                accumulate(grads, *b, reduce_to_shape(&neg, nodes[*b].value.shape()));
            }
        }
        Rule::Mul { a, b } => {
            let av = &nodes[*a].value;
            let bv = &nodes[*b].value;
            if needs(*a) {
                let da = broadcast_zip(grad, bv, &|g, y| g * y, "mul-backward");
                accumulate(grads, *a, reduce_to_shape(&da, av.shape()));
            }
            if needs(*b) {
                let db = broadcast_zip(grad, av, &|g, x| g * x, "mul-backward");
                accumulate(grads, *b, reduce_to_shape(&db, bv.shape()));
            }
        }
        Rule::Div { a, b } => {
            let av = &nodes[*a].value;
            let bv = &nodes[*b].value;
            if needs(*a) {
                let da = broadcast_zip(grad, bv, &|g, y| g / y, "div-backward");
                accumulate(grads, *a, reduce_to_shape(&da, av.shape()));
            }
            if needs(*b) {
                let gx = broadcast_zip(grad, av, &|g, x| g * x, "div-backward");
                let db = broadcast_zip(&gx, bv, &|gx, y| -gx / (y * y), "div-backward");
                accumulate(grads, *b, reduce_to_shape(&db, bv.shape()));
            }
        }
        Rule::MatMul { a, b } => {
            let av = &nodes[*a].value;
            let bv = &nodes[*b].value;
            let (m, k) = (av.shape()[0], av.shape()[1]);
            let n = bv.shape()[1];
            if needs(*a) {
                // dA = G * B^T
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for t in 0..k {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += grad.data()[i * n + j] * bv.data()[t * n + j];
                        }
                        da[i * k + t] = acc;
                    }
                }
                accumulate(grads, *a, Tensor::matrix(m, k, da));
            }
            if needs(*b) {
                // dB = A^T * G
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    for t in 0..k {
                        let av_it = av.data()[i * k + t];
                        if av_it == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            db[t * n + j] += av_it * grad.data()[i * n + j];
                        }
                    }
                }
                accumulate(grads, *b, Tensor::matrix(k, n, db));
            }
        }
        Rule::Transpose { a } => {
            let (r, c) = (nodes[*a].value.shape()[0], nodes[*a].value.shape()[1]);
            let mut da = vec![0.0; r * c];
            for i in 0..c {
                for j in 0..r {
                    da[j * c + i] = grad.data()[i * r + j];
                }
            }
            accumulate(grads, *a, Tensor::matrix(r, c, da));
        }
        Rule::Concat { parts, axis } => {
            let out_shape = nodes[id].value.shape();
            let outer: usize = out_shape[..*axis].iter().product();
            let inner_n: usize = out_shape[*axis + 1..].iter().product();
            let out_block = out_shape[*axis] * inner_n;
            let mut offset = 0usize;
            for &pid in parts {
                let pshape = nodes[pid].value.shape();
                let e = pshape[*axis];
                if needs(pid) {
                    let mut dp = vec![0.0; nodes[pid].value.len()];
                    for o in 0..outer {
                        let src = o * out_block + offset * inner_n;
                        let dst = o * e * inner_n;
                        dp[dst..dst + e * inner_n]
                            .copy_from_slice(&grad.data()[src..src + e * inner_n]);
                    }
                    accumulate(grads, pid, Tensor::new(pshape.to_vec(), dp));
                }
                offset += e;
            }
        }
        Rule::Reshape { a } => {
            let da = Tensor::new(nodes[*a].value.shape().to_vec(), grad.data().to_vec());
            accumulate(grads, *a, da);
        }
        Rule::SumAxis { a, axis } => {
            let in_shape = nodes[*a].value.shape();
            let (outer, mid, inner_n, _) = reduce_dims(in_shape, *axis);
            let mut da = vec![0.0; nodes[*a].value.len()];
            for o in 0..outer {
                for m in 0..mid {
                    for i in 0..inner_n {
                        da[(o * mid + m) * inner_n + i] = grad.data()[o * inner_n + i];
                    }
                }
            }
            accumulate(grads, *a, Tensor::new(in_shape.to_vec(), da));
        }
        Rule::MaxAxis { a, argmax, .. } => {
            let mut da = vec![0.0; nodes[*a].value.len()];
            for (out_pos, &src) in argmax.iter().enumerate() {
                da[src] += grad.data()[out_pos];
            }
            accumulate(grads, *a, Tensor::new(nodes[*a].value.shape().to_vec(), da));
        }
        Rule::Tanh { a } => {
            let y = &nodes[id].value;
            let da = zip_grad(grad, y, |g, y| g * (1.0 - y * y));
            accumulate(grads, *a, da);
        }
        Rule::Sigmoid { a } => {
            let y = &nodes[id].value;
            let da = zip_grad(grad, y, |g, y| g * y * (1.0 - y));
            accumulate(grads, *a, da);
        }
        Rule::Exp { a } => {
            let y = &nodes[id].value;
            let da = zip_grad(grad, y, |g, y| g * y);
            accumulate(grads, *a, da);
        }
        Rule::Ln { a } => {
            let x = &nodes[*a].value;
            let da = zip_grad(grad, x, |g, x| g / x);
            accumulate(grads, *a, da);
        }
        Rule::Lookup { table, indices } => {
            let tshape = nodes[*table].value.shape();
            let cols = tshape[1];
            let mut dt = vec![0.0; nodes[*table].value.len()];
            for (r, &idx) in indices.iter().enumerate() {
                for c in 0..cols {
                    dt[idx * cols + c] += grad.data()[r * cols + c];
                }
            }
            accumulate(grads, *table, Tensor::new(tshape.to_vec(), dt));
        }
        Rule::MaskedFill { a, keep } => {
            let da: Vec<f64> = grad
                .data()
                .iter()
                .zip(keep)
                .map(|(&g, &k)| if k { g } else { 0.0 })
                .collect();
            accumulate(grads, *a, Tensor::new(nodes[*a].value.shape().to_vec(), da));
        }
        Rule::Conv1d { x, w, bias } => {
            let xv = &nodes[*x].value;
            let wv = &nodes[*w].value;
            let (len, cin) = (xv.shape()[0], xv.shape()[1]);
            let (cout, win) = (wv.shape()[0], wv.shape()[1]);
            let lout = len - win + 1;
            if needs(*x) {
                let mut dx = vec![0.0; xv.len()];
                for t in 0..lout {
                    for o in 0..cout {
                        let g = grad.data()[t * cout + o];
                        if g == 0.0 {
                            continue;
                        }
                        for j in 0..win {
                            let xrow = (t + j) * cin;
                            let wrow = (o * win + j) * cin;
                            for i in 0..cin {
                                dx[xrow + i] += g * wv.data()[wrow + i];
                            }
                        }
                    }
                }
                accumulate(grads, *x, Tensor::matrix(len, cin, dx));
            }
            if needs(*w) {
                let mut dw = vec![0.0; wv.len()];
                for t in 0..lout {
                    for o in 0..cout {
                        let g = grad.data()[t * cout + o];
                        if g == 0.0 {
                            continue;
                        }
                        for j in 0..win {
                            let xrow = (t + j) * cin;
                            let wrow = (o * win + j) * cin;
                            for i in 0..cin {
                                dw[wrow + i] += g * xv.data()[xrow + i];
                            }
                        }
                    }
                }
                accumulate(grads, *w, Tensor::new(wv.shape().to_vec(), dw));
            }
            if needs(*bias) {
                let mut db = vec![0.0; cout];
                for t in 0..lout {
                    for o in 0..cout {
                        db[o] += grad.data()[t * cout + o];
                    }
                }
                accumulate(grads, *bias, Tensor::from_vec(db));
            }
        }
        Rule::L2NormalizeRows { a } => {
            let xv = &nodes[*a].value;
            let yv = &nodes[id].value;
            let (rows, cols) = rows_cols(xv.shape());
            let mut da = vec![0.0; xv.len()];
            for r in 0..rows {
                let x = &xv.data()[r * cols..(r + 1) * cols];
                let y = &yv.data()[r * cols..(r + 1) * cols];
                let g = &grad.data()[r * cols..(r + 1) * cols];
                let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 {
                    continue;
                }
                let gy: f64 = g.iter().zip(y).map(|(&gi, &yi)| gi * yi).sum();
                for i in 0..cols {
                    da[r * cols + i] = (g[i] - gy * y[i]) / norm;
                }
            }
            accumulate(grads, *a, Tensor::new(xv.shape().to_vec(), da));
        }
        Rule::CosineMatrix { a, b } => {
            let av = &nodes[*a].value;
            let bv = &nodes[*b].value;
            let cv = &nodes[id].value;
            let (m, n) = (av.shape()[0], av.shape()[1]);
            let p = bv.shape()[0];
            let na = row_norms(av.data(), m, n);
            let nb = row_norms(bv.data(), p, n);
            let mut da = vec![0.0; av.len()];
            let mut db = vec![0.0; bv.len()];
            for i in 0..m {
                if na[i] == 0.0 {
                    continue;
                }
                for j in 0..p {
                    if nb[j] == 0.0 {
                        continue;
                    }
                    let g = grad.data()[i * p + j];
                    if g == 0.0 {
                        continue;
                    }
                    let c = cv.data()[i * p + j];
                    let denom = na[i] * nb[j];
                    for t in 0..n {
                        let ai = av.data()[i * n + t];
                        let bj = bv.data()[j * n + t];
                        da[i * n + t] += g * (bj / denom - c * ai / (na[i] * na[i]));
                        db[j * n + t] += g * (ai / denom - c * bj / (nb[j] * nb[j]));
                    }
                }
            }
            if needs(*a) {
                accumulate(grads, *a, Tensor::matrix(m, n, da));
            }
            if needs(*b) {
                accumulate(grads, *b, Tensor::matrix(p, n, db));
            }
        }
    }
}

fn zip_grad(grad: &Tensor, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = grad
        .data()
        .iter()
        .zip(other.data())
        .map(|(&g, &o)| f(g, o))
        .collect();
    Tensor::new(grad.shape().to_vec(), data)
}
