//! Scaled dot-product attention over row groups, as one fused graph op.

use crate::autodiff::Var;
use crate::tensor::{gemm, Tensor};

fn softmax_rows(s: &mut [f64], width: usize) {
    for row in s.chunks_mut(width) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
}

struct Dims {
    groups: usize,
    heads: usize,
    a: usize,
    b: usize,
    width: usize,
    head_dim: usize,
}

impl Dims {
    fn new(q: &Tensor, k: &Tensor, v: &Tensor, groups: usize, heads: usize) -> Self {
        let width = q.cols();
        assert_eq!(k.cols(), width, "key width must match query width");
        assert_eq!(v.cols(), width, "value width must match query width");
        assert_eq!(k.rows(), v.rows(), "keys and values must pair up");
        assert!(heads > 0 && width % heads == 0, "width {width} not divisible by {heads} heads");
        assert!(groups > 0 && q.rows() % groups == 0 && k.rows() % groups == 0);
        Self {
            groups,
            heads,
            a: q.rows() / groups,
            b: k.rows() / groups,
            width,
            head_dim: width / heads,
        }
    }

    /// Offset of head `h` in group `g` of a matrix with `rows` rows per group.
    fn off(&self, g: usize, h: usize, rows: usize) -> usize {
        g * rows * self.width + h * self.head_dim
    }

    fn block(&self, g: usize, h: usize) -> usize {
        (g * self.heads + h) * self.a * self.b
    }
}

/// Softmax attention probabilities, `[groups·heads, A, B]` row-major.
pub fn attention_probs(q: &Tensor, k: &Tensor, groups: usize, heads: usize) -> Tensor {
    let d = Dims::new(q, k, k, groups, heads);
    Tensor::new(&[groups * heads, d.a, d.b], probs(&d, q.data(), k.data()))
}

fn probs(d: &Dims, q: &[f64], k: &[f64]) -> Vec<f64> {
    let scale = 1.0 / (d.head_dim as f64).sqrt();
    let mut p = vec![0.0; d.groups * d.heads * d.a * d.b];
    for g in 0..d.groups {
        for h in 0..d.heads {
            let blk = &mut p[d.block(g, h)..d.block(g, h) + d.a * d.b];
            gemm(
                d.a,
                d.head_dim,
                d.b,
                scale,
                &q[d.off(g, h, d.a)..],
                d.width,
                1,
                &k[d.off(g, h, d.b)..],
                1,
                d.width,
                0.0,
                blk,
                d.b,
                1,
            );
            softmax_rows(blk, d.b);
        }
    }
    p
}

/// Multihead attention on already projected `q` (`[G·A, D]`), `k` and `v`
/// (`[G·B, D]`); queries in group `g` attend only to keys of group `g`.
pub fn attention<'g>(q: Var<'g>, k: Var<'g>, v: Var<'g>, groups: usize, heads: usize) -> Var<'g> {
    let (qv, kv, vv) = (q.value(), k.value(), v.value());
    let d = Dims::new(&qv, &kv, &vv, groups, heads);
    let p = probs(&d, qv.data(), kv.data());
    let mut out = vec![0.0; qv.len()];
    for g in 0..d.groups {
        for h in 0..d.heads {
            gemm(
                d.a,
                d.b,
                d.head_dim,
                1.0,
                &p[d.block(g, h)..],
                d.b,
                1,
                &vv.data()[d.off(g, h, d.b)..],
                d.width,
                1,
                0.0,
                &mut out[d.off(g, h, d.a)..],
                d.width,
                1,
            );
        }
    }
    let out = Tensor::new(qv.shape(), out);
    let (qs, ks) = (qv.shape().to_vec(), kv.shape().to_vec());
    q.graph().op(&[q, k, v], out, move |go, want| {
        let scale = 1.0 / (d.head_dim as f64).sqrt();
        let go = go.data();
        let mut dq = vec![0.0; qv.len()];
        let mut dk = vec![0.0; kv.len()];
        let mut dv = vec![0.0; vv.len()];
        let mut dp = vec![0.0; d.a * d.b];
        for g in 0..d.groups {
            for h in 0..d.heads {
                let pb = &p[d.block(g, h)..d.block(g, h) + d.a * d.b];
                let (oa, ob) = (d.off(g, h, d.a), d.off(g, h, d.b));
                if want[2] {
                    gemm(
                        d.b, d.a, d.head_dim, 1.0, pb, 1, d.b, &go[oa..], d.width, 1, 0.0,
                        &mut dv[ob..], d.width, 1,
                    );
                }
                if !(want[0] || want[1]) {
                    continue;
                }
                gemm(
                    d.a, d.head_dim, d.b, 1.0, &go[oa..], d.width, 1, &vv.data()[ob..], 1,
                    d.width, 0.0, &mut dp, d.b, 1,
                );
                for (prow, drow) in pb.chunks(d.b).zip(dp.chunks_mut(d.b)) {
                    let dot: f64 = prow.iter().zip(drow.iter()).map(|(a, b)| a * b).sum();
                    for (pv, dv) in prow.iter().zip(drow.iter_mut()) {
                        *dv = pv * (*dv - dot);
                    }
                }
                if want[0] {
                    gemm(
                        d.a, d.b, d.head_dim, scale, &dp, d.b, 1, &kv.data()[ob..], d.width, 1,
                        0.0, &mut dq[oa..], d.width, 1,
                    );
                }
                if want[1] {
                    gemm(
                        d.b, d.a, d.head_dim, scale, &dp, 1, d.b, &qv.data()[oa..], d.width, 1,
                        0.0, &mut dk[ob..], d.width, 1,
                    );
                }
            }
        }
        vec![
            want[0].then(|| Tensor::new(&qs, dq)),
            want[1].then(|| Tensor::new(&ks, dk)),
            want[2].then(|| Tensor::new(&ks, dv)),
        ]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{gradcheck, Graph};
    use crate::rng::SeededRng;

    fn naive(q: &Tensor, k: &Tensor, v: &Tensor, groups: usize, heads: usize) -> Tensor {
        let (w, dh) = (q.cols(), q.cols() / heads);
        let (a, b) = (q.rows() / groups, k.rows() / groups);
        let mut out = Tensor::zeros(q.shape());
        for g in 0..groups {
            for h in 0..heads {
                for i in 0..a {
                    let qi = &q.row(g * a + i)[h * dh..(h + 1) * dh];
                    let s: Vec<f64> = (0..b)
                        .map(|j| {
                            let kj = &k.row(g * b + j)[h * dh..(h + 1) * dh];
                            qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>() / (dh as f64).sqrt()
                        })
                        .collect();
                    let m = s.iter().copied().fold(f64::MIN, f64::max);
                    let e: Vec<f64> = s.iter().map(|x| (x - m).exp()).collect();
                    let z: f64 = e.iter().sum();
                    for j in 0..b {
                        for c in 0..dh {
                            out.data_mut()[(g * a + i) * w + h * dh + c] +=
                                e[j] / z * v.row(g * b + j)[h * dh + c];
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_evaluation() {
        let mut rng = SeededRng::new(1);
        let q = Tensor::new(&[6, 8], rng.normals(48));
        let k = Tensor::new(&[10, 8], rng.normals(80));
        let v = Tensor::new(&[10, 8], rng.normals(80));
        let g = Graph::new();
        let out = attention(g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()), 2, 2);
        assert!(out.value().max_abs_diff(&naive(&q, &k, &v, 2, 2)) < 1e-12);
    }

    #[test]
    fn probabilities_are_normalized() {
        let mut rng = SeededRng::new(2);
        let q = Tensor::new(&[5, 6], rng.normals(30));
        let k = Tensor::new(&[7, 6], rng.normals(42));
        let p = attention_probs(&q, &k, 1, 3);
        for row in p.data().chunks(7) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = SeededRng::new(3);
        let q = Tensor::new(&[4, 6], rng.normals(24));
        let k = Tensor::new(&[6, 6], rng.normals(36));
        let v = Tensor::new(&[6, 6], rng.normals(36));
        let w = Tensor::new(&[4, 6], rng.normals(24));
        let err = gradcheck::check(&[q, k, v], 1e-5, move |g, x| {
            attention(x[0], x[1], x[2], 2, 3).mul(g.constant(w.clone())).sum()
        });
        assert!(err < 1e-6, "{err}");
    }
}
