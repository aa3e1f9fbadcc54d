//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to [`Var`]s in creation
//! order, which is already a topological order, so the backward pass is a
//! single reverse sweep. Nodes whose inputs never require gradients are
//! recorded as constants and carry no backward closure.

use std::cell::RefCell;
use std::rc::Rc;

use crate::tensor::{gemm, Tensor};

type BackwardFn = Box<dyn Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>>>;

struct Node {
    value: Rc<Tensor>,
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
}

#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

/// Gradients of a scalar root with respect to every node that requires them.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of its shape if it did not influence the root.
    pub fn get_or_zeros(&self, v: Var<'_>) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(v.value().shape()))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        let id = self.push(Node {
            value: Rc::new(value),
            requires_grad: false,
            parents: Vec::new(),
            backward: None,
        });
        Var { graph: self, id }
    }

    /// A leaf whose gradient is collected by [`Graph::backward`].
    pub fn param(&self, value: Tensor) -> Var<'_> {
        let id = self.push(Node {
            value: Rc::new(value),
            requires_grad: true,
            parents: Vec::new(),
            backward: None,
        });
        Var { graph: self, id }
    }

    /// Records a custom operation. `backward` receives the output gradient and
    /// a mask of which parents need gradients, and returns one entry per parent.
    pub fn op<'g, F>(&'g self, parents: &[Var<'g>], value: Tensor, backward: F) -> Var<'g>
    where
        F: Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>> + 'static,
    {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let id = self.push(Node {
            value: Rc::new(value),
            requires_grad,
            parents: parents.iter().map(|p| p.id).collect(),
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
        });
        Var { graph: self, id }
    }

    /// Reverse sweep from a one-element `root`.
    pub fn backward(&self, root: Var<'_>) -> Gradients {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        let root_value = &nodes[root.id].value;
        assert_eq!(root_value.len(), 1, "backward root must be a scalar");
        grads[root.id] = Some(Tensor::full(root_value.shape(), 1.0));
        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let wants: Vec<bool> = node
                .parents
                .iter()
                .map(|&p| nodes[p].requires_grad)
                .collect();
            let parent_grads = backward(&g, &wants);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !nodes[p].requires_grad {
                    continue;
                }
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Gradients { grads }
    }
}

fn col_sums(g: &Tensor) -> Tensor {
    let c = g.cols();
    let mut out = vec![0.0; c];
    for row in g.data().chunks(c) {
        for (o, x) in out.iter_mut().zip(row) {
            *o += x;
        }
    }
    Tensor::new(&[c], out)
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.graph.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    /// Applies `f`, which returns `(value, derivative)` per element.
    pub fn elementwise(self, f: impl Fn(f64) -> (f64, f64)) -> Var<'g> {
        let x = self.value();
        let (mut y, mut d) = (Vec::with_capacity(x.len()), Vec::with_capacity(x.len()));
        for &v in x.data() {
            let (a, b) = f(v);
            y.push(a);
            d.push(b);
        }
        let deriv = Tensor::new(x.shape(), d);
        self.graph
            .op(&[self], Tensor::new(x.shape(), y), move |g, _| {
                vec![Some(g.zip_map(&deriv, |a, b| a * b))]
            })
    }

    pub fn add(self, other: Var<'g>) -> Var<'g> {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.len(), b.len(), "add: {:?} vs {:?}", a.shape(), b.shape());
        let out = Tensor::new(a.shape(), a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect());
        let shape_b = b.shape().to_vec();
        self.graph.op(&[self, other], out, move |g, _| {
            vec![Some(g.clone()), Some(g.clone().reshape(&shape_b))]
        })
    }

    pub fn sub(self, other: Var<'g>) -> Var<'g> {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.len(), b.len(), "sub: {:?} vs {:?}", a.shape(), b.shape());
        let out = Tensor::new(a.shape(), a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect());
        let shape_b = b.shape().to_vec();
        self.graph.op(&[self, other], out, move |g, _| {
            vec![Some(g.clone()), Some(g.map(|x| -x).reshape(&shape_b))]
        })
    }

    pub fn mul(self, other: Var<'g>) -> Var<'g> {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.shape(), b.shape(), "mul shape mismatch");
        let out = a.zip_map(&b, |x, y| x * y);
        self.graph.op(&[self, other], out, move |g, w| {
            vec![
                w[0].then(|| g.zip_map(&b, |x, y| x * y)),
                w[1].then(|| g.zip_map(&a, |x, y| x * y)),
            ]
        })
    }

    pub fn scale(self, c: f64) -> Var<'g> {
        let out = self.value().map(|x| x * c);
        self.graph
            .op(&[self], out, move |g, _| vec![Some(g.map(|x| x * c))])
    }

    pub fn add_scalar(self, c: f64) -> Var<'g> {
        let out = self.value().map(|x| x + c);
        self.graph.op(&[self], out, |g, _| vec![Some(g.clone())])
    }

    /// Adds a length-`cols` vector to every row.
    pub fn add_row(self, v: Var<'g>) -> Var<'g> {
        let (x, b) = (self.value(), v.value());
        let c = x.cols();
        assert_eq!(b.len(), c, "add_row width mismatch");
        let mut out = (*x).clone();
        for row in out.data_mut().chunks_mut(c) {
            for (o, bb) in row.iter_mut().zip(b.data()) {
                *o += bb;
            }
        }
        let vshape = b.shape().to_vec();
        self.graph.op(&[self, v], out, move |g, w| {
            vec![
                w[0].then(|| g.clone()),
                w[1].then(|| col_sums(g).reshape(&vshape)),
            ]
        })
    }

    /// Multiplies every row elementwise by a length-`cols` vector.
    pub fn mul_row(self, v: Var<'g>) -> Var<'g> {
        let (x, s) = (self.value(), v.value());
        let c = x.cols();
        assert_eq!(s.len(), c, "mul_row width mismatch");
        let mut out = (*x).clone();
        for row in out.data_mut().chunks_mut(c) {
            for (o, ss) in row.iter_mut().zip(s.data()) {
                *o *= ss;
            }
        }
        let vshape = s.shape().to_vec();
        self.graph.op(&[self, v], out, move |g, w| {
            let gx = w[0].then(|| {
                let mut gx = g.clone();
                for row in gx.data_mut().chunks_mut(c) {
                    for (o, ss) in row.iter_mut().zip(s.data()) {
                        *o *= ss;
                    }
                }
                gx
            });
            let gv = w[1].then(|| {
                let mut acc = vec![0.0; c];
                for (grow, xrow) in g.data().chunks(c).zip(x.data().chunks(c)) {
                    for j in 0..c {
                        acc[j] += grow[j] * xrow[j];
                    }
                }
                Tensor::new(&vshape, acc)
            });
            vec![gx, gv]
        })
    }

    pub fn square(self) -> Var<'g> {
        self.elementwise(|x| (x * x, 2.0 * x))
    }

    pub fn abs(self) -> Var<'g> {
        self.elementwise(|x| (x.abs(), if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 }))
    }

    pub fn exp(self) -> Var<'g> {
        self.elementwise(|x| {
            let e = x.exp();
            (e, e)
        })
    }

    pub fn sqrt(self) -> Var<'g> {
        self.elementwise(|x| {
            let s = x.sqrt();
            (s, 0.5 / s)
        })
    }

    pub fn silu(self) -> Var<'g> {
        self.elementwise(|x| {
            let sig = 1.0 / (1.0 + (-x).exp());
            (x * sig, sig * (1.0 + x * (1.0 - sig)))
        })
    }

    /// Tanh-approximated GELU.
    pub fn gelu(self) -> Var<'g> {
        const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
        self.elementwise(|x| {
            let u = C * (x + 0.044715 * x * x * x);
            let t = u.tanh();
            let du = C * (1.0 + 3.0 * 0.044715 * x * x);
            (
                0.5 * x * (1.0 + t),
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du,
            )
        })
    }

    /// Hard clamp; gradient passes through strictly inside `(lo, hi)`.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'g> {
        self.elementwise(move |x| {
            if x <= lo {
                (lo, 0.0)
            } else if x >= hi {
                (hi, 0.0)
            } else {
                (x, 1.0)
            }
        })
    }

    pub fn sum(self) -> Var<'g> {
        let x = self.value();
        let shape = x.shape().to_vec();
        self.graph.op(&[self], Tensor::scalar(x.sum()), move |g, _| {
            vec![Some(Tensor::full(&shape, g.item()))]
        })
    }

    pub fn mean(self) -> Var<'g> {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'g> {
        let x = self.value();
        let old = x.shape().to_vec();
        let out = (*x).clone().reshape(shape);
        self.graph
            .op(&[self], out, move |g, _| vec![Some(g.clone().reshape(&old))])
    }

    /// `self · other` with `self` flattened to 2-D over its leading axes.
    pub fn matmul(self, other: Var<'g>) -> Var<'g> {
        let (a, b) = (self.value(), other.value());
        let out = a.matmul(&b);
        let (m, k, n) = (a.rows(), a.cols(), b.cols());
        self.graph.op(&[self, other], out, move |g, w| {
            let ga = w[0].then(|| {
                let mut ga = vec![0.0; m * k];
                gemm(m, n, k, 1.0, g.data(), n, 1, b.data(), 1, n, 0.0, &mut ga, k, 1);
                Tensor::new(a.shape(), ga)
            });
            let gb = w[1].then(|| {
                let mut gb = vec![0.0; k * n];
                gemm(k, m, n, 1.0, a.data(), 1, k, g.data(), n, 1, 0.0, &mut gb, n, 1);
                Tensor::new(b.shape(), gb)
            });
            vec![ga, gb]
        })
    }

    /// Affine map `x·W + b` over the trailing axis.
    pub fn linear(self, weight: Var<'g>, bias: Option<Var<'g>>) -> Var<'g> {
        let y = self.matmul(weight);
        match bias {
            Some(b) => y.add_row(b),
            None => y,
        }
    }

    /// Swaps the first two axes of a 3-D tensor.
    pub fn transpose01(self) -> Var<'g> {
        let x = self.value();
        let s = x.shape().to_vec();
        assert_eq!(s.len(), 3, "transpose01 needs a 3-D tensor");
        let (a, b, c) = (s[0], s[1], s[2]);
        let out = transpose01_raw(x.data(), a, b, c);
        self.graph
            .op(&[self], Tensor::new(&[b, a, c], out), move |g, _| {
                vec![Some(Tensor::new(&[a, b, c], transpose01_raw(g.data(), b, a, c)))]
            })
    }

    /// Concatenates 2-D views along the row axis.
    pub fn concat_rows(parts: &[Var<'g>]) -> Var<'g> {
        assert!(!parts.is_empty());
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let c = values[0].cols();
        let mut data = Vec::new();
        let mut counts = Vec::new();
        for v in &values {
            assert_eq!(v.cols(), c, "concat_rows width mismatch");
            data.extend_from_slice(v.data());
            counts.push(v.len());
        }
        let shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
        let rows = data.len() / c;
        parts[0].graph.op(parts, Tensor::new(&[rows, c], data), move |g, w| {
            let mut off = 0;
            let mut out = Vec::with_capacity(counts.len());
            for (i, &n) in counts.iter().enumerate() {
                out.push(w[i].then(|| Tensor::new(&shapes[i], g.data()[off..off + n].to_vec())));
                off += n;
            }
            out
        })
    }

    /// Concatenates along the trailing axis; all parts share the row count.
    pub fn concat_cols(parts: &[Var<'g>]) -> Var<'g> {
        assert!(!parts.is_empty());
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let r = values[0].rows();
        let widths: Vec<usize> = values.iter().map(|v| v.cols()).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for v in &values {
                assert_eq!(v.rows(), r, "concat_cols row mismatch");
                data.extend_from_slice(v.row(i));
            }
        }
        let shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
        parts[0].graph.op(parts, Tensor::new(&[r, total], data), move |g, w| {
            let mut out = Vec::with_capacity(widths.len());
            let mut off = 0;
            for (k, &wd) in widths.iter().enumerate() {
                out.push(w[k].then(|| {
                    let mut d = Vec::with_capacity(r * wd);
                    for i in 0..r {
                        d.extend_from_slice(&g.row(i)[off..off + wd]);
                    }
                    Tensor::new(&shapes[k], d)
                }));
                off += wd;
            }
            out
        })
    }

    /// Columns `lo..hi` of the trailing axis, as a 2-D tensor.
    pub fn slice_cols(self, lo: usize, hi: usize) -> Var<'g> {
        let x = self.value();
        let (r, c) = (x.rows(), x.cols());
        assert!(lo < hi && hi <= c);
        let w = hi - lo;
        let mut data = Vec::with_capacity(r * w);
        for i in 0..r {
            data.extend_from_slice(&x.row(i)[lo..hi]);
        }
        let shape = x.shape().to_vec();
        self.graph.op(&[self], Tensor::new(&[r, w], data), move |g, _| {
            let mut gx = Tensor::zeros(&shape);
            for i in 0..r {
                gx.row_mut(i)[lo..hi].copy_from_slice(g.row(i));
            }
            vec![Some(gx)]
        })
    }

    pub fn gather_rows(self, idx: &[usize]) -> Var<'g> {
        let x = self.value();
        let out = x.gather_rows(idx);
        let idx = idx.to_vec();
        let shape = x.shape().to_vec();
        self.graph.op(&[self], out, move |g, _| {
            let mut gx = Tensor::zeros(&shape);
            for (k, &i) in idx.iter().enumerate() {
                for (a, b) in gx.row_mut(i).iter_mut().zip(g.row(k)) {
                    *a += b;
                }
            }
            vec![Some(gx)]
        })
    }

    /// Tiles the whole tensor `times` times along a new leading axis.
    pub fn repeat(self, times: usize) -> Var<'g> {
        let x = self.value();
        let n = x.len();
        let mut data = Vec::with_capacity(n * times);
        for _ in 0..times {
            data.extend_from_slice(x.data());
        }
        let mut shape = vec![times];
        shape.extend_from_slice(x.shape());
        let old = x.shape().to_vec();
        self.graph.op(&[self], Tensor::new(&shape, data), move |g, _| {
            let mut acc = vec![0.0; n];
            for chunk in g.data().chunks(n) {
                for (a, b) in acc.iter_mut().zip(chunk) {
                    *a += b;
                }
            }
            vec![Some(Tensor::new(&old, acc))]
        })
    }

    /// Concatenates two `[G, *, C]` tensors along the middle axis.
    pub fn concat_groups(self, other: Var<'g>, groups: usize) -> Var<'g> {
        let (a, b) = (self.value(), other.value());
        let c = a.cols();
        assert_eq!(b.cols(), c);
        let pa = a.rows() / groups;
        let pb = b.rows() / groups;
        assert_eq!(pa * groups, a.rows());
        assert_eq!(pb * groups, b.rows());
        let mut data = Vec::with_capacity(a.len() + b.len());
        for gi in 0..groups {
            data.extend_from_slice(&a.data()[gi * pa * c..(gi + 1) * pa * c]);
            data.extend_from_slice(&b.data()[gi * pb * c..(gi + 1) * pb * c]);
        }
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        self.graph.op(
            &[self, other],
            Tensor::new(&[groups, pa + pb, c], data),
            move |g, w| {
                let mut ga = Vec::with_capacity(groups * pa * c);
                let mut gb = Vec::with_capacity(groups * pb * c);
                for chunk in g.data().chunks((pa + pb) * c) {
                    ga.extend_from_slice(&chunk[..pa * c]);
                    gb.extend_from_slice(&chunk[pa * c..]);
                }
                vec![
                    w[0].then(|| Tensor::new(&sa, ga)),
                    w[1].then(|| Tensor::new(&sb, gb)),
                ]
            },
        )
    }

    /// Per-row standardization (no affine), `eps` added to the variance.
    pub fn layer_norm(self, eps: f64) -> Var<'g> {
        let x = self.value();
        let c = x.cols();
        let mut y = vec![0.0; x.len()];
        let mut inv_std = Vec::with_capacity(x.rows());
        for (xr, yr) in x.data().chunks(c).zip(y.chunks_mut(c)) {
            let mean = xr.iter().sum::<f64>() / c as f64;
            let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            for (o, v) in yr.iter_mut().zip(xr) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let y = Tensor::new(x.shape(), y);
        let yc = y.clone();
        self.graph.op(&[self], y, move |g, _| {
            let mut gx = vec![0.0; g.len()];
            for (i, ((gr, yr), out)) in g
                .data()
                .chunks(c)
                .zip(yc.data().chunks(c))
                .zip(gx.chunks_mut(c))
                .enumerate()
            {
                let mg = gr.iter().sum::<f64>() / c as f64;
                let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                for j in 0..c {
                    out[j] = inv_std[i] * (gr[j] - mg - yr[j] * mgy);
                }
            }
            vec![Some(Tensor::new(yc.shape(), gx))]
        })
    }

    /// `x / rms(x)` over consecutive chunks of `width` along each row.
    pub fn rms_norm(self, width: usize, eps: f64) -> Var<'g> {
        let x = self.value();
        assert_eq!(x.cols() % width, 0, "rms_norm chunk width must divide cols");
        let (y, inv) = rms_norm_raw(x.data(), width, eps);
        let y = Tensor::new(x.shape(), y);
        let yc = y.clone();
        self.graph.op(&[self], y, move |g, _| {
            vec![Some(Tensor::new(
                yc.shape(),
                rms_norm_backward_raw(g.data(), yc.data(), &inv, width),
            ))]
        })
    }
}

pub(crate) fn transpose01_raw(x: &[f64], a: usize, b: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for i in 0..a {
        for j in 0..b {
            let src = (i * b + j) * c;
            let dst = (j * a + i) * c;
            out[dst..dst + c].copy_from_slice(&x[src..src + c]);
        }
    }
    out
}

pub(crate) fn rms_norm_raw(x: &[f64], width: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let mut y = vec![0.0; x.len()];
    let mut inv = Vec::with_capacity(x.len() / width);
    for (xr, yr) in x.chunks(width).zip(y.chunks_mut(width)) {
        let ms = xr.iter().map(|v| v * v).sum::<f64>() / width as f64;
        let r = 1.0 / (ms + eps).sqrt();
        for (o, v) in yr.iter_mut().zip(xr) {
            *o = v * r;
        }
        inv.push(r);
    }
    (y, inv)
}

pub(crate) fn rms_norm_backward_raw(g: &[f64], y: &[f64], inv: &[f64], width: usize) -> Vec<f64> {
    let mut gx = vec![0.0; g.len()];
    for (k, ((gr, yr), out)) in g
        .chunks(width)
        .zip(y.chunks(width))
        .zip(gx.chunks_mut(width))
        .enumerate()
    {
        let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / width as f64;
        for j in 0..width {
            out[j] = inv[k] * (gr[j] - yr[j] * mgy);
        }
    }
    gx
}

/// Central-difference gradient checking.
pub mod gradcheck {
    use super::*;

    /// Max relative error between analytic and central-difference gradients of
    /// `f` (which must return a scalar) with respect to every input entry.
    /// Entries whose gradients are both tiny are compared absolutely.
    pub fn check<F>(inputs: &[Tensor], h: f64, f: F) -> f64
    where
        F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Var<'g>,
    {
        let g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let root = f(&g, &vars);
        let grads = g.backward(root);
        let analytic: Vec<Tensor> = vars.iter().map(|v| grads.get_or_zeros(*v)).collect();
        let eval = |ins: &[Tensor]| -> f64 {
            let g = Graph::new();
            let vars: Vec<Var> = ins.iter().map(|t| g.constant(t.clone())).collect();
            f(&g, &vars).value().item()
        };
        let mut worst: f64 = 0.0;
        let mut ins = inputs.to_vec();
        for k in 0..ins.len() {
            for j in 0..ins[k].len() {
                let orig = ins[k].data()[j];
                ins[k].data_mut()[j] = orig + h;
                let fp = eval(&ins);
                ins[k].data_mut()[j] = orig - h;
                let fm = eval(&ins);
                ins[k].data_mut()[j] = orig;
                let num = (fp - fm) / (2.0 * h);
                let ana = analytic[k].data()[j];
                let err = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-6);
                worst = worst.max(err);
            }
        }
        worst
    }
}
