//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! The engine is deliberately small: a [`Tensor`] is a reference-counted node
//! in a dynamically built computation graph. Every operation records its
//! parents and a backward closure; [`Tensor::backward`] walks the graph in
//! reverse topological order and accumulates gradients into the leaves.
//!
//! Gradient recording can be switched off per thread with [`no_grad`], which
//! turns every operation into a plain numeric kernel (used for inference and
//! probing). The engine is single-threaded; concurrent evaluation is done
//! over independent model snapshots.

use std::cell::{Ref, RefCell, RefMut};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

type BackwardFn = Box<dyn Fn(&[f64], &[Tensor])>;

thread_local! {
    static GRAD_ENABLED: RefCell<bool> = const { RefCell::new(true) };
    static NEXT_ID: RefCell<u64> = const { RefCell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|n| {
        let mut n = n.borrow_mut();
        *n += 1;
        *n
    })
}

/// Runs `f` with gradient recording disabled on the current thread.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    let prev = GRAD_ENABLED.with(|g| std::mem::replace(&mut *g.borrow_mut(), false));
    let out = f();
    GRAD_ENABLED.with(|g| *g.borrow_mut() = prev);
    out
}

fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| *g.borrow())
}

/// Whether operations on the current thread record the autodiff graph.
pub(crate) fn grad_tracking_enabled() -> bool {
    grad_enabled()
}

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

/// Dense row-major `f64` tensor participating in the autodiff graph.
///
/// Cloning is shallow: clones share storage and gradient slots.
#[derive(Clone)]
pub struct Tensor {
    node: Rc<Node>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .finish()
    }
}

impl Tensor {
    /// Constant tensor that never receives gradients.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Tensor {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor {
            node: Rc::new(Node {
                id: next_id(),
                shape: shape.to_vec(),
                data: RefCell::new(data),
                grad: RefCell::new(None),
                parents: Vec::new(),
                backward: None,
                requires_grad: false,
            }),
        }
    }

    /// Trainable leaf tensor.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Tensor {
        assert_eq!(data.len(), shape.iter().product::<usize>());
        Tensor {
            node: Rc::new(Node {
                id: next_id(),
                shape: shape.to_vec(),
                data: RefCell::new(data),
                grad: RefCell::new(None),
                parents: Vec::new(),
                backward: None,
                requires_grad: true,
            }),
        }
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::new(vec![0.0; shape.iter().product()], shape)
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::new(vec![v], &[1])
    }

    /// Internal constructor for operations. Parents and the backward closure
    /// are dropped when recording is off or no parent needs gradients.
    pub(crate) fn from_op(
        data: Vec<f64>,
        shape: &[usize],
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Tensor {
        assert_eq!(data.len(), shape.iter().product::<usize>());
        let track = grad_enabled() && parents.iter().any(|p| p.node.requires_grad);
        Tensor {
            node: Rc::new(Node {
                id: next_id(),
                shape: shape.to_vec(),
                data: RefCell::new(data),
                grad: RefCell::new(None),
                parents: if track { parents } else { Vec::new() },
                backward: if track { Some(backward) } else { None },
                requires_grad: track,
            }),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn len(&self) -> usize {
        self.node.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.node.data.borrow()
    }

    /// Mutable access to the raw storage (optimizer updates, checkpoint load).
    pub fn data_mut(&self) -> RefMut<'_, Vec<f64>> {
        self.node.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.node.data.borrow().clone()
    }

    /// Scalar value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.len(), 1, "item() on tensor of shape {:?}", self.shape());
        self.node.data.borrow()[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.node.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[f64]) {
        if !self.node.requires_grad {
            return;
        }
        let mut slot = self.node.grad.borrow_mut();
        match slot.as_mut() {
            Some(existing) => {
                for (e, v) in existing.iter_mut().zip(g) {
                    *e += v;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Backpropagates from a scalar tensor, accumulating gradients into every
    /// reachable tensor with `requires_grad`.
    pub fn backward(&self) {
        assert_eq!(self.len(), 1, "backward() requires a scalar loss");
        // Iterative post-order DFS; recursion would overflow on long chains.
        let mut order: Vec<Tensor> = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Tensor, usize)> = vec![(self.clone(), 0)];
        while let Some((t, idx)) = stack.pop() {
            if idx == 0 {
                if !visited.insert(t.node.id) {
                    continue;
                }
            }
            if idx < t.node.parents.len() {
                let parent = t.node.parents[idx].clone();
                stack.push((t.clone(), idx + 1));
                if parent.node.requires_grad && !visited.contains(&parent.node.id) {
                    stack.push((parent, 0));
                }
            } else {
                order.push(t);
            }
        }
        self.accumulate_grad(&[1.0]);
        for t in order.iter().rev() {
            if let Some(backward) = &t.node.backward {
                let grad = t.node.grad.borrow().clone();
                if let Some(g) = grad {
                    backward(&g, &t.node.parents);
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Elementwise and shape operations
// ---------------------------------------------------------------------------

fn assert_same_shape(a: &Tensor, b: &Tensor, op: &str) {
    assert_eq!(
        a.shape(),
        b.shape(),
        "{op}: shape mismatch {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
}

pub fn add(a: &Tensor, b: &Tensor) -> Tensor {
    assert_same_shape(a, b, "add");
    let data: Vec<f64> = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| x + y)
        .collect();
    Tensor::from_op(
        data,
        a.shape(),
        vec![a.clone(), b.clone()],
        Box::new(|g, parents| {
            parents[0].accumulate_grad(g);
            parents[1].accumulate_grad(g);
        }),
    )
}

pub fn sub(a: &Tensor, b: &Tensor) -> Tensor {
    assert_same_shape(a, b, "sub");
    let data: Vec<f64> = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| x - y)
        .collect();
    Tensor::from_op(
        data,
        a.shape(),
        vec![a.clone(), b.clone()],
        Box::new(|g, parents| {
            parents[0].accumulate_grad(g);
            let neg: Vec<f64> = g.iter().map(|v| -v).collect();
            parents[1].accumulate_grad(&neg);
        }),
    )
}

pub fn mul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_same_shape(a, b, "mul");
    let data: Vec<f64> = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| x * y)
        .collect();
    Tensor::from_op(
        data,
        a.shape(),
        vec![a.clone(), b.clone()],
        Box::new(|g, parents| {
            let (a, b) = (&parents[0], &parents[1]);
            let bd = b.data();
            let ga: Vec<f64> = g.iter().zip(bd.iter()).map(|(g, y)| g * y).collect();
            drop(bd);
            let ad = a.data();
            let gb: Vec<f64> = g.iter().zip(ad.iter()).map(|(g, x)| g * x).collect();
            drop(ad);
            a.accumulate_grad(&ga);
            b.accumulate_grad(&gb);
        }),
    )
}

pub fn scale(a: &Tensor, c: f64) -> Tensor {
    let data: Vec<f64> = a.data().iter().map(|x| x * c).collect();
    Tensor::from_op(
        data,
        a.shape(),
        vec![a.clone()],
        Box::new(move |g, parents| {
            let ga: Vec<f64> = g.iter().map(|v| v * c).collect();
            parents[0].accumulate_grad(&ga);
        }),
    )
}

fn unary(a: &Tensor, f: impl Fn(f64) -> f64, df: impl Fn(f64, f64) -> f64 + 'static) -> Tensor {
    let data: Vec<f64> = a.data().iter().map(|&x| f(x)).collect();
    let saved_in = a.to_vec();
    let saved_out = data.clone();
    Tensor::from_op(
        data,
        a.shape(),
        vec![a.clone()],
        Box::new(move |g, parents| {
            let ga: Vec<f64> = g
                .iter()
                .enumerate()
                .map(|(i, gv)| gv * df(saved_in[i], saved_out[i]))
                .collect();
            parents[0].accumulate_grad(&ga);
        }),
    )
}

pub fn sigmoid(a: &Tensor) -> Tensor {
    unary(a, |x| 1.0 / (1.0 + (-x).exp()), |_, y| y * (1.0 - y))
}

pub fn tanh(a: &Tensor) -> Tensor {
    unary(a, f64::tanh, |_, y| 1.0 - y * y)
}

pub fn silu(a: &Tensor) -> Tensor {
    unary(
        a,
        |x| x / (1.0 + (-x).exp()),
        |x, _| {
            let s = 1.0 / (1.0 + (-x).exp());
            s * (1.0 + x * (1.0 - s))
        },
    )
}

/// Numerically stable softplus; output is strictly positive.
pub fn softplus(a: &Tensor) -> Tensor {
    unary(
        a,
        |x| {
            if x > 30.0 {
                x
            } else {
                (1.0 + x.exp()).ln()
            }
        },
        |x, _| 1.0 / (1.0 + (-x).exp()),
    )
}

pub fn exp(a: &Tensor) -> Tensor {
    unary(a, f64::exp, |_, y| y)
}

pub fn neg(a: &Tensor) -> Tensor {
    scale(a, -1.0)
}

pub fn square(a: &Tensor) -> Tensor {
    unary(a, |x| x * x, |x, _| 2.0 * x)
}

/// Elementwise `sqrt(r^2 + i^2)`. The gradient at the origin is defined as 0.
pub fn magnitude(re: &Tensor, im: &Tensor) -> Tensor {
    assert_same_shape(re, im, "magnitude");
    let data: Vec<f64> = re
        .data()
        .iter()
        .zip(im.data().iter())
        .map(|(r, i)| r.hypot(*i))
        .collect();
    let saved = data.clone();
    Tensor::from_op(
        data,
        re.shape(),
        vec![re.clone(), im.clone()],
        Box::new(move |g, parents| {
            let rd = parents[0].to_vec();
            let id = parents[1].to_vec();
            let mut gr = vec![0.0; g.len()];
            let mut gi = vec![0.0; g.len()];
            for k in 0..g.len() {
                if saved[k] > 0.0 {
                    gr[k] = g[k] * rd[k] / saved[k];
                    gi[k] = g[k] * id[k] / saved[k];
                }
            }
            parents[0].accumulate_grad(&gr);
            parents[1].accumulate_grad(&gi);
        }),
    )
}

/// PReLU with one learnable slope per channel (last dimension).
pub fn prelu(x: &Tensor, alpha: &Tensor) -> Tensor {
    let c = *x.shape().last().expect("prelu: rank >= 1");
    assert_eq!(alpha.shape(), &[c], "prelu: alpha must have shape [C]");
    let al = alpha.to_vec();
    let data: Vec<f64> = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| if v >= 0.0 { v } else { al[i % c] * v })
        .collect();
    Tensor::from_op(
        data,
        x.shape(),
        vec![x.clone(), alpha.clone()],
        Box::new(move |g, parents| {
            let xd = parents[0].to_vec();
            let al = parents[1].to_vec();
            let mut gx = vec![0.0; xd.len()];
            let mut ga = vec![0.0; c];
            for (i, &v) in xd.iter().enumerate() {
                if v >= 0.0 {
                    gx[i] = g[i];
                } else {
                    gx[i] = g[i] * al[i % c];
                    ga[i % c] += g[i] * v;
                }
            }
            parents[0].accumulate_grad(&gx);
            parents[1].accumulate_grad(&ga);
        }),
    )
}

pub fn sum_all(a: &Tensor) -> Tensor {
    let s: f64 = a.data().iter().sum();
    let n = a.len();
    Tensor::from_op(
        vec![s],
        &[1],
        vec![a.clone()],
        Box::new(move |g, parents| {
            parents[0].accumulate_grad(&vec![g[0]; n]);
        }),
    )
}

/// Concatenates along the last dimension; all inputs share leading dims.
pub fn concat_last(parts: &[Tensor]) -> Tensor {
    assert!(!parts.is_empty());
    let lead = &parts[0].shape()[..parts[0].shape().len() - 1];
    let rows: usize = lead.iter().product();
    let widths: Vec<usize> = parts
        .iter()
        .map(|p| {
            assert_eq!(&p.shape()[..p.shape().len() - 1], lead, "concat_last: leading dims differ");
            *p.shape().last().unwrap()
        })
        .collect();
    let total: usize = widths.iter().sum();
    let mut data = vec![0.0; rows * total];
    for r in 0..rows {
        let mut off = 0;
        for (p, &w) in parts.iter().zip(&widths) {
            let pd = p.data();
            data[r * total + off..r * total + off + w].copy_from_slice(&pd[r * w..(r + 1) * w]);
            off += w;
        }
    }
    let mut shape = lead.to_vec();
    shape.push(total);
    let widths_b = widths.clone();
    Tensor::from_op(
        data,
        &shape,
        parts.to_vec(),
        Box::new(move |g, parents| {
            let mut off = 0;
            for (p, &w) in parents.iter().zip(&widths_b) {
                if p.requires_grad() {
                    let mut gp = vec![0.0; rows * w];
                    for r in 0..rows {
                        gp[r * w..(r + 1) * w]
                            .copy_from_slice(&g[r * total + off..r * total + off + w]);
                    }
                    p.accumulate_grad(&gp);
                }
                off += w;
            }
        }),
    )
}

/// Slice `[start, end)` of the last dimension.
pub fn slice_last(a: &Tensor, start: usize, end: usize) -> Tensor {
    let shape = a.shape().to_vec();
    let w = *shape.last().unwrap();
    assert!(start < end && end <= w, "slice_last: bad range {start}..{end} of {w}");
    let rows: usize = shape[..shape.len() - 1].iter().product();
    let out_w = end - start;
    let ad = a.data();
    let mut data = vec![0.0; rows * out_w];
    for r in 0..rows {
        data[r * out_w..(r + 1) * out_w].copy_from_slice(&ad[r * w + start..r * w + end]);
    }
    drop(ad);
    let mut out_shape = shape[..shape.len() - 1].to_vec();
    out_shape.push(out_w);
    Tensor::from_op(
        data,
        &out_shape,
        vec![a.clone()],
        Box::new(move |g, parents| {
            let mut gp = vec![0.0; rows * w];
            for r in 0..rows {
                gp[r * w + start..r * w + end].copy_from_slice(&g[r * out_w..(r + 1) * out_w]);
            }
            parents[0].accumulate_grad(&gp);
        }),
    )
}

/// Strided slice of the last dimension: keeps columns `offset, offset+stride, ...`.
pub fn stride_slice_last(a: &Tensor, offset: usize, stride: usize) -> Tensor {
    let shape = a.shape().to_vec();
    let w = *shape.last().unwrap();
    assert!(stride >= 1 && offset < stride && w % stride == 0, "stride_slice_last: bad layout");
    let rows: usize = shape[..shape.len() - 1].iter().product();
    let out_w = w / stride;
    let ad = a.data();
    let mut data = vec![0.0; rows * out_w];
    for r in 0..rows {
        for c in 0..out_w {
            data[r * out_w + c] = ad[r * w + offset + c * stride];
        }
    }
    drop(ad);
    let mut out_shape = shape[..shape.len() - 1].to_vec();
    out_shape.push(out_w);
    Tensor::from_op(
        data,
        &out_shape,
        vec![a.clone()],
        Box::new(move |g, parents| {
            let mut gp = vec![0.0; rows * w];
            for r in 0..rows {
                for c in 0..out_w {
                    gp[r * w + offset + c * stride] = g[r * out_w + c];
                }
            }
            parents[0].accumulate_grad(&gp);
        }),
    )
}

/// Stacks rank-R tensors into a rank-(R+1) tensor along a new axis 0.
pub fn stack0(parts: &[Tensor]) -> Tensor {
    assert!(!parts.is_empty());
    let inner = parts[0].shape().to_vec();
    let n: usize = inner.iter().product();
    let mut data = Vec::with_capacity(parts.len() * n);
    for p in parts {
        assert_eq!(p.shape(), &inner[..], "stack0: inner shapes differ");
        data.extend_from_slice(&p.data());
    }
    let mut shape = vec![parts.len()];
    shape.extend_from_slice(&inner);
    Tensor::from_op(
        data,
        &shape,
        parts.to_vec(),
        Box::new(move |g, parents| {
            for (k, p) in parents.iter().enumerate() {
                p.accumulate_grad(&g[k * n..(k + 1) * n]);
            }
        }),
    )
}

/// Extracts slice `k` along axis 0 of a rank-3 tensor, yielding rank 2.
pub fn index_axis0(a: &Tensor, k: usize) -> Tensor {
    let s = a.shape();
    assert_eq!(s.len(), 3, "index_axis0: rank-3 input required");
    assert!(k < s[0]);
    let n = s[1] * s[2];
    let data = a.data()[k * n..(k + 1) * n].to_vec();
    let total = s[0] * n;
    Tensor::from_op(
        data,
        &[s[1], s[2]],
        vec![a.clone()],
        Box::new(move |g, parents| {
            let mut gp = vec![0.0; total];
            gp[k * n..(k + 1) * n].copy_from_slice(g);
            parents[0].accumulate_grad(&gp);
        }),
    )
}

/// Swaps the first two axes of a rank-3 tensor.
pub fn transpose01(a: &Tensor) -> Tensor {
    let s = a.shape();
    assert_eq!(s.len(), 3, "transpose01: rank-3 input required");
    let (d0, d1, d2) = (s[0], s[1], s[2]);
    let ad = a.data();
    let mut data = vec![0.0; ad.len()];
    for i in 0..d0 {
        for j in 0..d1 {
            let src = (i * d1 + j) * d2;
            let dst = (j * d0 + i) * d2;
            data[dst..dst + d2].copy_from_slice(&ad[src..src + d2]);
        }
    }
    drop(ad);
    Tensor::from_op(
        data,
        &[d1, d0, d2],
        vec![a.clone()],
        Box::new(move |g, parents| {
            let mut gp = vec![0.0; g.len()];
            for j in 0..d1 {
                for i in 0..d0 {
                    let src = (j * d0 + i) * d2;
                    let dst = (i * d1 + j) * d2;
                    gp[dst..dst + d2].copy_from_slice(&g[src..src + d2]);
                }
            }
            parents[0].accumulate_grad(&gp);
        }),
    )
}

/// Reverses a rank-3 tensor along axis 1 (the sequence axis).
pub fn reverse1(a: &Tensor) -> Tensor {
    let s = a.shape();
    assert_eq!(s.len(), 3, "reverse1: rank-3 input required");
    let (d0, d1, d2) = (s[0], s[1], s[2]);
    let rev = |src: &[f64]| {
        let mut out = vec![0.0; src.len()];
        for b in 0..d0 {
            for l in 0..d1 {
                let from = (b * d1 + l) * d2;
                let to = (b * d1 + (d1 - 1 - l)) * d2;
                out[to..to + d2].copy_from_slice(&src[from..from + d2]);
            }
        }
        out
    };
    let data = rev(&a.data());
    Tensor::from_op(
        data,
        s,
        vec![a.clone()],
        Box::new(move |g, parents| {
            let mut gp = vec![0.0; g.len()];
            for b in 0..d0 {
                for l in 0..d1 {
                    let from = (b * d1 + l) * d2;
                    let to = (b * d1 + (d1 - 1 - l)) * d2;
                    gp[to..to + d2].copy_from_slice(&g[from..from + d2]);
                }
            }
            parents[0].accumulate_grad(&gp);
        }),
    )
}

// ---------------------------------------------------------------------------
// Linear algebra and convolutions
// ---------------------------------------------------------------------------

/// Affine map over the last dimension: `y[.., o] = sum_i x[.., i] w[o, i] + b[o]`.
pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Tensor {
    let xs = x.shape();
    let ws = w.shape();
    assert_eq!(ws.len(), 2, "linear: weight must be [out, in]");
    let (out_dim, in_dim) = (ws[0], ws[1]);
    assert_eq!(
        *xs.last().unwrap(),
        in_dim,
        "linear: input width {} != weight in-dim {}",
        xs.last().unwrap(),
        in_dim
    );
    let rows: usize = xs[..xs.len() - 1].iter().product();
    let xd = x.data();
    let wd = w.data();
    let mut data = match b {
        Some(bias) => {
            let bd = bias.data();
            assert_eq!(bd.len(), out_dim, "linear: bias length mismatch");
            let mut v = Vec::with_capacity(rows * out_dim);
            for _ in 0..rows {
                v.extend_from_slice(&bd);
            }
            v
        }
        None => vec![0.0; rows * out_dim],
    };
    for r in 0..rows {
        let xr = &xd[r * in_dim..(r + 1) * in_dim];
        let yr = &mut data[r * out_dim..(r + 1) * out_dim];
        for (o, y) in yr.iter_mut().enumerate() {
            let wr = &wd[o * in_dim..(o + 1) * in_dim];
            let mut acc = 0.0;
            for i in 0..in_dim {
                acc += xr[i] * wr[i];
            }
            *y += acc;
        }
    }
    drop(xd);
    drop(wd);
    let mut out_shape = xs[..xs.len() - 1].to_vec();
    out_shape.push(out_dim);
    let mut parents = vec![x.clone(), w.clone()];
    if let Some(bias) = b {
        parents.push(bias.clone());
    }
    Tensor::from_op(
        data,
        &out_shape,
        parents,
        Box::new(move |g, parents| {
            let x = &parents[0];
            let w = &parents[1];
            let xd = x.to_vec();
            let wd = w.to_vec();
            if x.requires_grad() {
                let mut gx = vec![0.0; rows * in_dim];
                for r in 0..rows {
                    let gr = &g[r * out_dim..(r + 1) * out_dim];
                    let gxr = &mut gx[r * in_dim..(r + 1) * in_dim];
                    for (o, gv) in gr.iter().enumerate() {
                        let wr = &wd[o * in_dim..(o + 1) * in_dim];
                        for i in 0..in_dim {
                            gxr[i] += gv * wr[i];
                        }
                    }
                }
                x.accumulate_grad(&gx);
            }
            if w.requires_grad() {
                let mut gw = vec![0.0; out_dim * in_dim];
                for r in 0..rows {
                    let gr = &g[r * out_dim..(r + 1) * out_dim];
                    let xr = &xd[r * in_dim..(r + 1) * in_dim];
                    for (o, gv) in gr.iter().enumerate() {
                        let gwr = &mut gw[o * in_dim..(o + 1) * in_dim];
                        for i in 0..in_dim {
                            gwr[i] += gv * xr[i];
                        }
                    }
                }
                w.accumulate_grad(&gw);
            }
            if parents.len() == 3 && parents[2].requires_grad() {
                let mut gb = vec![0.0; out_dim];
                for r in 0..rows {
                    for o in 0..out_dim {
                        gb[o] += g[r * out_dim + o];
                    }
                }
                parents[2].accumulate_grad(&gb);
            }
        }),
    )
}

/// Layer normalization over the last dimension with learnable gain and bias.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Tensor {
    let c = *x.shape().last().expect("layer_norm: rank >= 1");
    assert_eq!(gamma.shape(), &[c]);
    assert_eq!(beta.shape(), &[c]);
    let rows = x.len() / c;
    let xd = x.data();
    let gd = gamma.data();
    let bd = beta.data();
    let mut data = vec![0.0; x.len()];
    let mut means = vec![0.0; rows];
    let mut rstds = vec![0.0; rows];
    for r in 0..rows {
        let xr = &xd[r * c..(r + 1) * c];
        let mean = xr.iter().sum::<f64>() / c as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let rstd = 1.0 / (var + eps).sqrt();
        means[r] = mean;
        rstds[r] = rstd;
        for i in 0..c {
            data[r * c + i] = (xr[i] - mean) * rstd * gd[i] + bd[i];
        }
    }
    drop(xd);
    drop(gd);
    drop(bd);
    Tensor::from_op(
        data,
        x.shape(),
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |g, parents| {
            let x = &parents[0];
            let gamma = &parents[1];
            let beta = &parents[2];
            let xd = x.to_vec();
            let gd = gamma.to_vec();
            let mut gx = vec![0.0; xd.len()];
            let mut gg = vec![0.0; c];
            let mut gb = vec![0.0; c];
            for r in 0..rows {
                let xr = &xd[r * c..(r + 1) * c];
                let gr = &g[r * c..(r + 1) * c];
                let mean = means[r];
                let rstd = rstds[r];
                let mut sum_gy = 0.0;
                let mut sum_gy_xhat = 0.0;
                for i in 0..c {
                    let xhat = (xr[i] - mean) * rstd;
                    let gy = gr[i] * gd[i];
                    sum_gy += gy;
                    sum_gy_xhat += gy * xhat;
                    gg[i] += gr[i] * xhat;
                    gb[i] += gr[i];
                }
                for i in 0..c {
                    let xhat = (xr[i] - mean) * rstd;
                    gx[r * c + i] =
                        rstd * (gr[i] * gd[i] - sum_gy / c as f64 - xhat * sum_gy_xhat / c as f64);
                }
            }
            x.accumulate_grad(&gx);
            if gamma.requires_grad() {
                gamma.accumulate_grad(&gg);
            }
            if beta.requires_grad() {
                beta.accumulate_grad(&gb);
            }
        }),
    )
}

/// Temporal padding behaviour for convolutions over the time axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimePad {
    /// Left padding only: output at frame `t` sees inputs `<= t`.
    Causal,
    /// Symmetric padding; leaks future frames. Exists solely so the causality
    /// probe has a defective variant to flag.
    Centered,
}

/// 2-D convolution over (band, time) for rank-3 input `[K, T, C_in]`.
///
/// The band axis is zero-padded symmetrically (`kb` must be odd); the time
/// axis follows `pad`.
pub fn conv2d_bt(x: &Tensor, w: &Tensor, b: &Tensor, pad: TimePad) -> Tensor {
    let s = x.shape();
    assert_eq!(s.len(), 3, "conv2d_bt: input must be [K, T, C]");
    let (kdim, t, cin) = (s[0], s[1], s[2]);
    let ws = w.shape();
    assert_eq!(ws.len(), 4, "conv2d_bt: weight must be [Co, Ci, kb, kt]");
    let (cout, wcin, kb, kt) = (ws[0], ws[1], ws[2], ws[3]);
    assert_eq!(wcin, cin, "conv2d_bt: channel mismatch");
    assert_eq!(kb % 2, 1, "conv2d_bt: band kernel must be odd");
    assert_eq!(b.shape(), &[cout]);
    let pb = kb / 2;
    // Time offset of the kernel tap `dt` relative to the output frame.
    // Centered mode anchors the kernel so at least one tap reads a future
    // frame whenever kt > 1.
    let t_off = move |dt: usize| -> isize {
        match pad {
            TimePad::Causal => -(dt as isize),
            TimePad::Centered => dt as isize - ((kt - 1) / 2) as isize,
        }
    };
    let xd = x.data();
    let wd = w.data();
    let bd = b.data();
    let mut data = vec![0.0; kdim * t * cout];
    for k in 0..kdim {
        for tt in 0..t {
            let out = &mut data[(k * t + tt) * cout..(k * t + tt + 1) * cout];
            out.copy_from_slice(&bd);
            for db in 0..kb {
                let kk = k as isize + db as isize - pb as isize;
                if kk < 0 || kk >= kdim as isize {
                    continue;
                }
                for dt in 0..kt {
                    let t_in = tt as isize + t_off(dt);
                    if t_in < 0 || t_in >= t as isize {
                        continue;
                    }
                    let xrow = &xd[((kk as usize) * t + t_in as usize) * cin..][..cin];
                    for o in 0..cout {
                        let mut acc = 0.0;
                        for i in 0..cin {
                            acc += xrow[i] * wd[((o * cin + i) * kb + db) * kt + dt];
                        }
                        out[o] += acc;
                    }
                }
            }
        }
    }
    drop(xd);
    drop(wd);
    drop(bd);
    Tensor::from_op(
        data,
        &[kdim, t, cout],
        vec![x.clone(), w.clone(), b.clone()],
        Box::new(move |g, parents| {
            let x = &parents[0];
            let w = &parents[1];
            let bias = &parents[2];
            let xd = x.to_vec();
            let wd = w.to_vec();
            let mut gx = vec![0.0; xd.len()];
            let mut gw = vec![0.0; wd.len()];
            let mut gb = vec![0.0; cout];
            for k in 0..kdim {
                for tt in 0..t {
                    let gout = &g[(k * t + tt) * cout..(k * t + tt + 1) * cout];
                    for o in 0..cout {
                        gb[o] += gout[o];
                    }
                    for db in 0..kb {
                        let kk = k as isize + db as isize - pb as isize;
                        if kk < 0 || kk >= kdim as isize {
                            continue;
                        }
                        for dt in 0..kt {
                            let t_in = tt as isize + t_off(dt);
                            if t_in < 0 || t_in >= t as isize {
                                continue;
                            }
                            let base = ((kk as usize) * t + t_in as usize) * cin;
                            for o in 0..cout {
                                let gv = gout[o];
                                for i in 0..cin {
                                    let widx = ((o * cin + i) * kb + db) * kt + dt;
                                    gx[base + i] += gv * wd[widx];
                                    gw[widx] += gv * xd[base + i];
                                }
                            }
                        }
                    }
                }
            }
            x.accumulate_grad(&gx);
            w.accumulate_grad(&gw);
            bias.accumulate_grad(&gb);
        }),
    )
}

/// Dilated 1-D convolution along the time axis of `[K, T, C_in]` input.
pub fn conv1d_time(x: &Tensor, w: &Tensor, b: &Tensor, dilation: usize, pad: TimePad) -> Tensor {
    let s = x.shape();
    assert_eq!(s.len(), 3, "conv1d_time: input must be [K, T, C]");
    let (kdim, t, cin) = (s[0], s[1], s[2]);
    let ws = w.shape();
    assert_eq!(ws.len(), 3, "conv1d_time: weight must be [Co, Ci, kt]");
    let (cout, wcin, kt) = (ws[0], ws[1], ws[2]);
    assert_eq!(wcin, cin);
    assert_eq!(b.shape(), &[cout]);
    let t_off = move |dt: usize| -> isize {
        match pad {
            TimePad::Causal => -((dt * dilation) as isize),
            TimePad::Centered => (dt * dilation) as isize - (((kt - 1) / 2) * dilation) as isize,
        }
    };
    let xd = x.data();
    let wd = w.data();
    let bd = b.data();
    let mut data = vec![0.0; kdim * t * cout];
    for k in 0..kdim {
        for tt in 0..t {
            let out = &mut data[(k * t + tt) * cout..(k * t + tt + 1) * cout];
            out.copy_from_slice(&bd);
            for dt in 0..kt {
                let t_in = tt as isize + t_off(dt);
                if t_in < 0 || t_in >= t as isize {
                    continue;
                }
                let xrow = &xd[(k * t + t_in as usize) * cin..][..cin];
                for o in 0..cout {
                    let mut acc = 0.0;
                    for i in 0..cin {
                        acc += xrow[i] * wd[(o * cin + i) * kt + dt];
                    }
                    out[o] += acc;
                }
            }
        }
    }
    drop(xd);
    drop(wd);
    drop(bd);
    Tensor::from_op(
        data,
        &[kdim, t, cout],
        vec![x.clone(), w.clone(), b.clone()],
        Box::new(move |g, parents| {
            let xd = parents[0].to_vec();
            let wd = parents[1].to_vec();
            let mut gx = vec![0.0; xd.len()];
            let mut gw = vec![0.0; wd.len()];
            let mut gb = vec![0.0; cout];
            for k in 0..kdim {
                for tt in 0..t {
                    let gout = &g[(k * t + tt) * cout..(k * t + tt + 1) * cout];
                    for o in 0..cout {
                        gb[o] += gout[o];
                    }
                    for dt in 0..kt {
                        let t_in = tt as isize + t_off(dt);
                        if t_in < 0 || t_in >= t as isize {
                            continue;
                        }
                        let base = (k * t + t_in as usize) * cin;
                        for o in 0..cout {
                            let gv = gout[o];
                            for i in 0..cin {
                                gx[base + i] += gv * wd[(o * cin + i) * kt + dt];
                                gw[(o * cin + i) * kt + dt] += gv * xd[base + i];
                            }
                        }
                    }
                }
            }
            parents[0].accumulate_grad(&gx);
            parents[1].accumulate_grad(&gw);
            parents[2].accumulate_grad(&gb);
        }),
    )
}

/// Depthwise causal 1-D convolution along axis 1 of `[B, L, D]` input.
pub fn dwconv1d_causal(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let s = x.shape();
    assert_eq!(s.len(), 3, "dwconv1d_causal: input must be [B, L, D]");
    let (bdim, l, d) = (s[0], s[1], s[2]);
    let ws = w.shape();
    assert_eq!(ws.len(), 2, "dwconv1d_causal: weight must be [D, k]");
    assert_eq!(ws[0], d);
    let k = ws[1];
    assert_eq!(b.shape(), &[d]);
    let xd = x.data();
    let wd = w.data();
    let bd = b.data();
    let mut data = vec![0.0; bdim * l * d];
    for bb in 0..bdim {
        for t in 0..l {
            let out = &mut data[(bb * l + t) * d..(bb * l + t + 1) * d];
            out.copy_from_slice(&bd);
            for dt in 0..k.min(t + 1) {
                let xrow = &xd[(bb * l + t - dt) * d..][..d];
                for c in 0..d {
                    out[c] += xrow[c] * wd[c * k + dt];
                }
            }
        }
    }
    drop(xd);
    drop(wd);
    drop(bd);
    Tensor::from_op(
        data,
        s,
        vec![x.clone(), w.clone(), b.clone()],
        Box::new(move |g, parents| {
            let xd = parents[0].to_vec();
            let wd = parents[1].to_vec();
            let mut gx = vec![0.0; xd.len()];
            let mut gw = vec![0.0; wd.len()];
            let mut gb = vec![0.0; d];
            for bb in 0..bdim {
                for t in 0..l {
                    let gout = &g[(bb * l + t) * d..(bb * l + t + 1) * d];
                    for c in 0..d {
                        gb[c] += gout[c];
                    }
                    for dt in 0..k.min(t + 1) {
                        let base = (bb * l + t - dt) * d;
                        for c in 0..d {
                            gx[base + c] += gout[c] * wd[c * k + dt];
                            gw[c * k + dt] += gout[c] * xd[base + c];
                        }
                    }
                }
            }
            parents[0].accumulate_grad(&gx);
            parents[1].accumulate_grad(&gw);
            parents[2].accumulate_grad(&gb);
        }),
    )
}
