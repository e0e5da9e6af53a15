//! Reverse-mode automatic differentiation over `Vec<f64>` nodes.
//!
//! A `Tape` records the forward computation as a flat list of ops; node ids
//! are indices, so construction order is already a topological order and the
//! backward pass is a single reverse sweep. Parameter gradients accumulate
//! into a flat buffer parallel to the `ParamVec` arena. Weight matrices are
//! addressed by slot rather than materialized as nodes, so a matvec against
//! a sparse feature vector touches only the nonzero columns on both passes.

use crate::features::FeatureVector;
use crate::params::{ParamVec, Slot};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Const,
    /// Leaf over a contiguous param range starting at `offset`.
    Param { offset: usize },
    /// W (slot, rows x cols) times a dense node (len cols) -> len rows.
    MatVec { w: Slot, x: NodeId },
    /// W times a constant sparse vector -> len rows.
    MatVecSparse { w: Slot, x: FeatureVector },
    Add { a: NodeId, b: NodeId },
    Tanh { a: NodeId },
    /// Elementwise y = mul * x + add; only the slope matters on backward.
    Affine { a: NodeId, mul: f64 },
    /// Inner product of two equal-length nodes -> scalar.
    Dot { a: NodeId, b: NodeId },
    /// Cosine similarity of two nodes -> scalar. Norms checked by caller.
    Cosine { a: NodeId, b: NodeId },
    /// Softmax cross-entropy of logits against a class index -> scalar.
    SoftmaxCe { logits: NodeId, target: usize },
}

struct Node {
    value: Vec<f64>,
    op: Op,
}

pub struct Tape<'a> {
    params: &'a ParamVec,
    nodes: Vec<Node>,
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl<'a> Tape<'a> {
    pub fn new(params: &'a ParamVec) -> Self {
        Self { params, nodes: Vec::new() }
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].value.len(), 1);
        self.nodes[id.0].value[0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Vec<f64>) -> NodeId {
        self.push(value, Op::Const)
    }

    /// Leaf over the whole named tensor (row-major flattened).
    pub fn param(&mut self, name: &str) -> NodeId {
        let s = self.params.layout.slot(name);
        let value = self.params.values[s.offset..s.offset + s.len()].to_vec();
        self.push(value, Op::Param { offset: s.offset })
    }

    /// Leaf over row `r` of the named tensor.
    pub fn param_row(&mut self, name: &str, r: usize) -> NodeId {
        let s = self.params.layout.slot(name);
        assert!(r < s.rows, "row {r} out of range for {name}");
        let offset = s.offset + r * s.cols;
        let value = self.params.values[offset..offset + s.cols].to_vec();
        self.push(value, Op::Param { offset })
    }

    pub fn matvec(&mut self, w_name: &str, x: NodeId) -> NodeId {
        let s = self.params.layout.slot(w_name);
        let xv = &self.nodes[x.0].value;
        assert_eq!(xv.len(), s.cols, "matvec shape mismatch for {w_name}");
        let w = &self.params.values[s.offset..s.offset + s.len()];
        let mut y = vec![0.0; s.rows];
        for (i, yi) in y.iter_mut().enumerate() {
            let row = &w[i * s.cols..(i + 1) * s.cols];
            *yi = row.iter().zip(xv).map(|(a, b)| a * b).sum();
        }
        self.push(y, Op::MatVec { w: s, x })
    }

    pub fn matvec_sparse(&mut self, w_name: &str, x: &FeatureVector) -> NodeId {
        let s = self.params.layout.slot(w_name);
        assert_eq!(x.dim(), s.cols, "matvec shape mismatch for {w_name}");
        let w = &self.params.values[s.offset..s.offset + s.len()];
        let mut y = vec![0.0; s.rows];
        for &(j, xj) in x.entries() {
            let j = j as usize;
            for (i, yi) in y.iter_mut().enumerate() {
                *yi += w[i * s.cols + j] * xj;
            }
        }
        self.push(y, Op::MatVecSparse { w: s, x: x.clone() })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.len(), bv.len(), "add shape mismatch");
        let y = av.iter().zip(bv).map(|(x, z)| x + z).collect();
        self.push(y, Op::Add { a, b })
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let y = self.nodes[a.0].value.iter().map(|x| x.tanh()).collect();
        self.push(y, Op::Tanh { a })
    }

    pub fn affine(&mut self, a: NodeId, mul: f64, add: f64) -> NodeId {
        let y = self.nodes[a.0].value.iter().map(|x| mul * x + add).collect();
        self.push(y, Op::Affine { a, mul })
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.len(), bv.len(), "dot shape mismatch");
        let y = av.iter().zip(bv).map(|(x, z)| x * z).sum();
        self.push(vec![y], Op::Dot { a, b })
    }

    /// Cosine similarity; the caller must reject near-zero norms first.
    pub fn cosine(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.len(), bv.len(), "cosine shape mismatch");
        let na = av.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = bv.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(
            na > 0.0 && nb > 0.0,
            "cosine over zero-norm vector; caller must check norms"
        );
        let d: f64 = av.iter().zip(bv).map(|(x, z)| x * z).sum();
        self.push(vec![d / (na * nb)], Op::Cosine { a, b })
    }

    pub fn softmax_ce(&mut self, logits: NodeId, target: usize) -> NodeId {
        let z = &self.nodes[logits.0].value;
        assert!(target < z.len(), "target class out of range");
        let p = softmax(z);
        let loss = -p[target].max(f64::MIN_POSITIVE).ln();
        self.push(vec![loss], Op::SoftmaxCe { logits, target })
    }

    /// Backward pass from a scalar loss node; parameter gradients accumulate
    /// into `grad`, which must have the arena's length.
    pub fn backward(&self, loss: NodeId, grad: &mut [f64]) {
        assert_eq!(grad.len(), self.params.len(), "grad buffer length mismatch");
        assert_eq!(self.nodes[loss.0].value.len(), 1, "loss must be scalar");
        let mut node_grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        node_grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let g = match node_grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[i].op {
                Op::Const => {}
                Op::Param { offset } => {
                    for (k, gk) in g.iter().enumerate() {
                        grad[offset + k] += gk;
                    }
                }
                Op::MatVec { w, x } => {
                    let xv = &self.nodes[x.0].value;
                    let wv = &self.params.values[w.offset..w.offset + w.len()];
                    for (r, gr) in g.iter().enumerate() {
                        let row = &mut grad[w.offset + r * w.cols..w.offset + (r + 1) * w.cols];
                        for (j, xj) in xv.iter().enumerate() {
                            row[j] += gr * xj;
                        }
                    }
                    let gx = node_grads[x.0].get_or_insert_with(|| vec![0.0; xv.len()]);
                    for (r, gr) in g.iter().enumerate() {
                        let row = &wv[r * w.cols..(r + 1) * w.cols];
                        for (j, wj) in row.iter().enumerate() {
                            gx[j] += gr * wj;
                        }
                    }
                }
                Op::MatVecSparse { w, x } => {
                    for &(j, xj) in x.entries() {
                        let j = j as usize;
                        for (r, gr) in g.iter().enumerate() {
                            grad[w.offset + r * w.cols + j] += gr * xj;
                        }
                    }
                }
                Op::Add { a, b } => {
                    for &t in &[*a, *b] {
                        let gt = node_grads[t.0]
                            .get_or_insert_with(|| vec![0.0; self.nodes[t.0].value.len()]);
                        for (k, gk) in g.iter().enumerate() {
                            gt[k] += gk;
                        }
                    }
                }
                Op::Tanh { a } => {
                    let y = &self.nodes[i].value;
                    let ga = node_grads[a.0].get_or_insert_with(|| vec![0.0; y.len()]);
                    for (k, gk) in g.iter().enumerate() {
                        ga[k] += gk * (1.0 - y[k] * y[k]);
                    }
                }
                Op::Affine { a, mul } => {
                    let ga = node_grads[a.0]
                        .get_or_insert_with(|| vec![0.0; self.nodes[a.0].value.len()]);
                    for (k, gk) in g.iter().enumerate() {
                        ga[k] += gk * mul;
                    }
                }
                Op::Dot { a, b } => {
                    let g0 = g[0];
                    let av = self.nodes[a.0].value.clone();
                    let bv = self.nodes[b.0].value.clone();
                    let ga = node_grads[a.0].get_or_insert_with(|| vec![0.0; av.len()]);
                    for (k, bk) in bv.iter().enumerate() {
                        ga[k] += g0 * bk;
                    }
                    let gb = node_grads[b.0].get_or_insert_with(|| vec![0.0; bv.len()]);
                    for (k, ak) in av.iter().enumerate() {
                        gb[k] += g0 * ak;
                    }
                }
                Op::Cosine { a, b } => {
                    let g0 = g[0];
                    let av = self.nodes[a.0].value.clone();
                    let bv = self.nodes[b.0].value.clone();
                    let na = av.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let nb = bv.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let c = self.nodes[i].value[0];
                    let ga = node_grads[a.0].get_or_insert_with(|| vec![0.0; av.len()]);
                    for k in 0..av.len() {
                        ga[k] += g0 * (bv[k] / (na * nb) - c * av[k] / (na * na));
                    }
                    let gb = node_grads[b.0].get_or_insert_with(|| vec![0.0; bv.len()]);
                    for k in 0..bv.len() {
                        gb[k] += g0 * (av[k] / (na * nb) - c * bv[k] / (nb * nb));
                    }
                }
                Op::SoftmaxCe { logits, target } => {
                    let g0 = g[0];
                    let z = &self.nodes[logits.0].value;
                    let p = softmax(z);
                    let gl = node_grads[logits.0].get_or_insert_with(|| vec![0.0; z.len()]);
                    for (k, pk) in p.iter().enumerate() {
                        gl[k] += g0 * (pk - if k == *target { 1.0 } else { 0.0 });
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Layout;
    use approx::assert_relative_eq;

    /// Central finite differences of `f` over every parameter.
    fn fd_grad(params: &mut ParamVec, f: &dyn Fn(&ParamVec) -> f64, eps: f64) -> Vec<f64> {
        let mut g = vec![0.0; params.len()];
        for i in 0..params.len() {
            let orig = params.values[i];
            params.values[i] = orig + eps;
            let hi = f(params);
            params.values[i] = orig - eps;
            let lo = f(params);
            params.values[i] = orig;
            g[i] = (hi - lo) / (2.0 * eps);
        }
        g
    }

    fn assert_grads_close(analytic: &[f64], numeric: &[f64]) {
        for (k, (a, n)) in analytic.iter().zip(numeric).enumerate() {
            let denom = a.abs().max(n.abs()).max(1e-6);
            assert!(
                (a - n).abs() / denom < 1e-3,
                "grad mismatch at {k}: analytic {a}, numeric {n}"
            );
        }
    }

    fn small_params() -> ParamVec {
        let mut layout = Layout::new();
        layout.register("w", 3, 4);
        layout.register("b", 1, 3);
        layout.register("v", 1, 3);
        layout.register("c", 1, 1);
        let mut p = ParamVec::zeros(layout);
        // Deterministic non-symmetric fill.
        for (i, x) in p.values.iter_mut().enumerate() {
            *x = 0.05 * (i as f64 + 1.0) * if i % 2 == 0 { 1.0 } else { -1.0 };
        }
        p
    }

    /// s = v . tanh(W x + b) + c, a miniature of the scorer head.
    fn mlp_scalar(p: &ParamVec) -> f64 {
        let mut t = Tape::new(p);
        let x = t.constant(vec![0.3, -0.2, 0.5, 0.1]);
        let wx = t.matvec("w", x);
        let b = t.param("b");
        let pre = t.add(wx, b);
        let h = t.tanh(pre);
        let v = t.param("v");
        let dot = t.dot(v, h);
        let c = t.param("c");
        let s = t.add(dot, c);
        t.scalar(s)
    }

    #[test]
    fn gradient_check_mlp() {
        let mut p = small_params();
        let analytic = {
            let mut t = Tape::new(&p);
            let x = t.constant(vec![0.3, -0.2, 0.5, 0.1]);
            let wx = t.matvec("w", x);
            let b = t.param("b");
            let pre = t.add(wx, b);
            let h = t.tanh(pre);
            let v = t.param("v");
            let dot = t.dot(v, h);
            let c = t.param("c");
            let s = t.add(dot, c);
            let mut g = vec![0.0; p.len()];
            t.backward(s, &mut g);
            g
        };
        let numeric = fd_grad(&mut p, &mlp_scalar, 1e-4);
        assert_grads_close(&analytic, &numeric);
    }

    #[test]
    fn gradient_check_cosine_loss() {
        // 1 - cos(tanh(W x + b), tanh(W y + b)): shared weights, two states.
        let f = |p: &ParamVec| -> f64 {
            let mut t = Tape::new(p);
            let x = t.constant(vec![0.3, -0.2, 0.5, 0.1]);
            let y = t.constant(vec![-0.1, 0.4, 0.2, -0.3]);
            let b = t.param("b");
            let hx = {
                let wx = t.matvec("w", x);
                let pre = t.add(wx, b);
                t.tanh(pre)
            };
            let hy = {
                let wy = t.matvec("w", y);
                let pre = t.add(wy, b);
                t.tanh(pre)
            };
            let cos = t.cosine(hx, hy);
            let loss = t.affine(cos, -1.0, 1.0);
            t.scalar(loss)
        };
        let mut p = small_params();
        let analytic = {
            let mut t = Tape::new(&p);
            let x = t.constant(vec![0.3, -0.2, 0.5, 0.1]);
            let y = t.constant(vec![-0.1, 0.4, 0.2, -0.3]);
            let b = t.param("b");
            let hx = {
                let wx = t.matvec("w", x);
                let pre = t.add(wx, b);
                t.tanh(pre)
            };
            let hy = {
                let wy = t.matvec("w", y);
                let pre = t.add(wy, b);
                t.tanh(pre)
            };
            let cos = t.cosine(hx, hy);
            let loss = t.affine(cos, -1.0, 1.0);
            let mut g = vec![0.0; p.len()];
            t.backward(loss, &mut g);
            g
        };
        let numeric = fd_grad(&mut p, &f, 1e-4);
        assert_grads_close(&analytic, &numeric);
    }

    #[test]
    fn gradient_check_softmax_ce() {
        let f = |p: &ParamVec| -> f64 {
            let mut t = Tape::new(p);
            let x = t.constant(vec![0.3, -0.2, 0.5, 0.1]);
            let logits = t.matvec("w", x);
            let loss = t.softmax_ce(logits, 1);
            t.scalar(loss)
        };
        let mut p = small_params();
        let analytic = {
            let mut t = Tape::new(&p);
            let x = t.constant(vec![0.3, -0.2, 0.5, 0.1]);
            let logits = t.matvec("w", x);
            let loss = t.softmax_ce(logits, 1);
            let mut g = vec![0.0; p.len()];
            t.backward(loss, &mut g);
            g
        };
        let numeric = fd_grad(&mut p, &f, 1e-4);
        assert_grads_close(&analytic, &numeric);
    }

    #[test]
    fn sparse_and_dense_matvec_agree() {
        let p = small_params();
        let fv = FeatureVector::from_entries(4, vec![(1, 0.8), (3, -0.6)]);
        let mut t = Tape::new(&p);
        let dense = t.constant(fv.to_dense());
        let y_dense = t.matvec("w", dense);
        let y_sparse = t.matvec_sparse("w", &fv);
        assert_eq!(t.value(y_dense), t.value(y_sparse));

        let mut g_dense = vec![0.0; p.len()];
        let mut g_sparse = vec![0.0; p.len()];
        let mut t2 = Tape::new(&p);
        let d = t2.constant(fv.to_dense());
        let yd = t2.matvec("w", d);
        let v = t2.param("b");
        let sd = t2.dot(v, yd);
        t2.backward(sd, &mut g_dense);
        let mut t3 = Tape::new(&p);
        let ys = t3.matvec_sparse("w", &fv);
        let v3 = t3.param("b");
        let ss = t3.dot(v3, ys);
        t3.backward(ss, &mut g_sparse);
        for (a, b) in g_dense.iter().zip(&g_sparse) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
    }

    #[test]
    fn softmax_ce_uniform_logits_is_ln_k() {
        let p = small_params();
        let mut t = Tape::new(&p);
        let z = t.constant(vec![0.0; 3]);
        let loss = t.softmax_ce(z, 0);
        assert_relative_eq!(t.scalar(loss), 3f64.ln(), max_relative = 1e-12);
    }

    #[test]
    fn softmax_ce_peaked_logits() {
        // Logits (10, 0, 0) with true class 0: loss = ln(1 + 2 e^-10).
        let p = small_params();
        let mut t = Tape::new(&p);
        let z = t.constant(vec![10.0, 0.0, 0.0]);
        let loss = t.softmax_ce(z, 0);
        let expected = (1.0 + 2.0 * (-10f64).exp()).ln();
        assert_relative_eq!(t.scalar(loss), expected, max_relative = 1e-12);
        assert_relative_eq!(t.scalar(loss), 9.079_573_746_724_444_6e-5, max_relative = 1e-9);
    }

    #[test]
    fn cosine_of_parallel_vectors_is_one() {
        let p = small_params();
        let mut t = Tape::new(&p);
        let a = t.constant(vec![1.0, 2.0]);
        let b = t.constant(vec![2.0, 4.0]);
        let c = t.cosine(a, b);
        assert_relative_eq!(t.scalar(c), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn cosine_golden() {
        // (1,2) vs (2,1): cos = 4/5, so 1 - cos = 0.2.
        let p = small_params();
        let mut t = Tape::new(&p);
        let a = t.constant(vec![1.0, 2.0]);
        let b = t.constant(vec![2.0, 1.0]);
        let c = t.cosine(a, b);
        let loss = t.affine(c, -1.0, 1.0);
        assert_relative_eq!(t.scalar(loss), 0.2, max_relative = 1e-12);
    }
}
