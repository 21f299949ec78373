//! A small reverse-mode tape.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards is a
//! valid topological order. Shape errors are programming errors and panic.

mod attention;
mod conv;
mod norm;
mod sample;


use alloc::vec;
use alloc::vec::Vec;

use crate::metrics::{ncc_with_grad, NccWindow};
use crate::real::{gemm, Real};
use crate::tensor::Tensor;
use crate::Point3;

pub use conv::ConvGeom;
pub use sample::SampleRegion;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    AddRow { x: Var, b: Var },
    AddEmbedding { x: Var, table: Var, ids: Vec<usize> },
    Scale { x: Var, s: T },
    Relu(Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    LayerNorm { x: Var, gamma: Var, beta: Var, saved: norm::Saved<T> },
    InstanceNorm { x: Var, gamma: Var, beta: Var, saved: norm::Saved<T> },
    Conv3d { x: Var, w: Var, geom: ConvGeom, cols: Vec<T> },
    ConcatLast { a: Var, b: Var },
    Transpose(Var),
    Sample { x: Var, taps: Vec<sample::Taps<T>> },
    Attention { q: Var, k: Var, v: Var, bias: Option<Var>, heads: usize, probs: Vec<T> },
    NormalizeRows(Var),
    ScaleCols { x: Var, s: Vec<T> },
    MeanRows(Var),
    Warp { src: Var, t: Var, dims: [usize; 3] },
    Ncc { a: Var, b: Var, dims: [usize; 3], window: NccWindow },
    PairLoss { pred: Var, target: Vec<T> },
    WeightedSum(Vec<(Var, T)>),
    Dot { x: Var, w: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Evaluation tape. Values are computed eagerly as nodes are added.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar root with respect to every node that requires them.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn zero_like<T: Real>(n: usize) -> Vec<T> {
    vec![T::zero(); n]
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grad_enabled: true }
    }

    /// A tape whose parameters never require gradients; ops skip saving
    /// intermediate buffers.
    pub fn inference() -> Self {
        Self { nodes: Vec::new(), grad_enabled: false }
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A trainable leaf. Requires gradients unless the tape is in inference mode.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        let rg = self.grad_enabled;
        self.push(value, Op::Leaf, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(self.shape(a), data).expect("shape checked");
        let rg = self.any_grad(&[a, b]);
        self.push(value, Op::Add(a, b), rg)
    }

    /// `x [rows, c] + b [c]` broadcast over rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let c = *self.shape(x).last().expect("add_row: scalar input");
        assert_eq!(self.shape(b), [c], "add_row: bias shape");
        let bias = self.data(b);
        let data = self.data(x).chunks(c).flat_map(|r| r.iter().zip(bias).map(|(&u, &v)| u + v)).collect();
        let value = Tensor::new(self.shape(x), data).expect("shape checked");
        let rg = self.any_grad(&[x, b]);
        self.push(value, Op::AddRow { x, b }, rg)
    }

    /// Adds row `ids[r]` of `table [s, c]` to row `r` of `x [rows, c]`.
    pub fn add_embedding(&mut self, x: Var, table: Var, ids: Vec<usize>) -> Var {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 2, "add_embedding: x must be 2-D");
        let ts = self.shape(table);
        assert!(ts.len() == 2 && ts[1] == xs[1], "add_embedding: table shape");
        assert_eq!(ids.len(), xs[0], "add_embedding: one id per row");
        let (s, c) = (ts[0], ts[1]);
        assert!(ids.iter().all(|&i| i < s), "add_embedding: id out of range");
        let tab = self.data(table);
        let mut data = self.data(x).to_vec();
        for (r, &id) in ids.iter().enumerate() {
            for j in 0..c {
                data[r * c + j] += tab[id * c + j];
            }
        }
        let value = Tensor::new(&xs, data).expect("shape checked");
        let rg = self.any_grad(&[x, table]);
        self.push(value, Op::AddEmbedding { x, table, ids }, rg)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let value = self.value(x).map(|v| v * s);
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Scale { x, s }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Relu(x), rg)
    }

    /// `x [rows, in] @ w [in, out] (+ b [out])`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xs = self.shape(x);
        let ws = self.shape(w);
        assert!(xs.len() == 2 && ws.len() == 2 && xs[1] == ws[0], "linear: {xs:?} x {ws:?}");
        let (r, i, o) = (xs[0], xs[1], ws[1]);
        let mut out = zero_like(r * o);
        gemm(false, false, r, i, o, self.data(x), self.data(w), T::zero(), &mut out);
        if let Some(b) = b {
            assert_eq!(self.shape(b), [o], "linear: bias shape");
            let bias = self.data(b);
            for row in out.chunks_mut(o) {
                for (v, &bb) in row.iter_mut().zip(bias) {
                    *v += bb;
                }
            }
        }
        let value = Tensor::new(&[r, o], out).expect("shape checked");
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.any_grad(&deps);
        self.push(value, Op::Linear { x, w, b }, rg)
    }

    /// Normalizes each row of `x [rows, c]`, then applies `gamma`, `beta` of shape `[c]`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 2, "layer_norm: x must be 2-D");
        let c = xs[1];
        assert!(self.shape(gamma) == [c] && self.shape(beta) == [c], "layer_norm: affine shape");
        let rg = self.any_grad(&[x, gamma, beta]);
        let (out, saved) = norm::forward(self.data(x), xs[0], c, self.data(gamma), self.data(beta), false, rg);
        let value = Tensor::new(&xs, out).expect("shape checked");
        self.push(value, Op::LayerNorm { x, gamma, beta, saved }, rg)
    }

    /// Per-channel normalization over the spatial extent of `x [c, ...]`.
    pub fn instance_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xs = self.shape(x).to_vec();
        assert!(xs.len() >= 2, "instance_norm: x needs a channel axis");
        let c = xs[0];
        let s = self.value(x).len() / c;
        assert!(self.shape(gamma) == [c] && self.shape(beta) == [c], "instance_norm: affine shape");
        let rg = self.any_grad(&[x, gamma, beta]);
        let (out, saved) = norm::forward(self.data(x), c, s, self.data(gamma), self.data(beta), true, rg);
        let value = Tensor::new(&xs, out).expect("shape checked");
        self.push(value, Op::InstanceNorm { x, gamma, beta, saved }, rg)
    }

    /// Bias-free 3-D convolution: `x [cin, d, h, w]`, `w [cout, cin, k, k, k]`.
    pub fn conv3d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Var {
        let xs = self.shape(x);
        let ws = self.shape(w);
        assert!(xs.len() == 4 && ws.len() == 5, "conv3d: shapes {xs:?}, {ws:?}");
        assert!(ws[1] == xs[0] && ws[2] == ws[3] && ws[3] == ws[4], "conv3d: weight {ws:?} for input {xs:?}");
        let geom = ConvGeom::new(xs[0], ws[0], ws[2], stride, pad, [xs[1], xs[2], xs[3]]);
        let rg = self.any_grad(&[x, w]);
        let (out, cols) = conv::forward(self.data(x), self.data(w), &geom, rg && self.requires_grad(w));
        let [od, oh, ow] = geom.out_dims;
        let value = Tensor::new(&[geom.cout, od, oh, ow], out).expect("shape checked");
        self.push(value, Op::Conv3d { x, w, geom, cols }, rg)
    }

    /// Concatenates along the last axis; all leading axes must agree.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Var {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b);
        let n = sa.len();
        assert!(n >= 1 && sb.len() == n && sa[..n - 1] == sb[..n - 1], "concat_last: {sa:?} vs {sb:?}");
        let (wa, wb) = (sa[n - 1], sb[n - 1]);
        let mut data = Vec::with_capacity(self.value(a).len() + self.value(b).len());
        for (ra, rb) in self.data(a).chunks(wa).zip(self.data(b).chunks(wb)) {
            data.extend_from_slice(ra);
            data.extend_from_slice(rb);
        }
        let mut shape = sa;
        shape[n - 1] = wa + wb;
        let value = Tensor::new(&shape, data).expect("shape checked");
        let rg = self.any_grad(&[a, b]);
        self.push(value, Op::ConcatLast { a, b }, rg)
    }

    /// Swaps the first axis with the flattened remaining axes: `[a, ...] -> [prod(...), a]`.
    pub fn transpose(&mut self, x: Var) -> Var {
        let xs = self.shape(x);
        assert!(xs.len() >= 2, "transpose: needs at least 2 axes");
        let a = xs[0];
        let b: usize = xs[1..].iter().product();
        let src = self.data(x);
        let mut data = zero_like(a * b);
        for i in 0..a {
            for j in 0..b {
                data[j * a + i] = src[i * b + j];
            }
        }
        let value = Tensor::new(&[b, a], data).expect("shape checked");
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Transpose(x), rg)
    }

    /// Trilinear samples of `x [c, d, h, w]` restricted to `region`, at points
    /// given in region-local `(x, y, z)` cell coordinates. Output `[points, c]`.
    pub fn sample_features(&mut self, x: Var, region: SampleRegion, points: &[Point3]) -> Var {
        let xs = self.shape(x);
        assert_eq!(xs.len(), 4, "sample_features: x must be [c, d, h, w]");
        let c = xs[0];
        let dims = [xs[1], xs[2], xs[3]];
        let taps: Vec<_> = points.iter().map(|&p| sample::taps::<T>(dims, region, p)).collect();
        let out = sample::forward(self.data(x), c, &taps);
        let value = Tensor::new(&[points.len(), c], out).expect("shape checked");
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Sample { x, taps }, rg)
    }

    /// Multi-head scaled dot-product attention of `q [n, d]` over `k, v [l, d]`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Var {
        self.attention_biased(q, k, v, None, heads)
    }

    /// As [`Graph::attention`], adding `bias [n, l]` to the scaled logits of every head.
    pub fn attention_biased(&mut self, q: Var, k: Var, v: Var, bias: Option<Var>, heads: usize) -> Var {
        let qs = self.shape(q);
        let ks = self.shape(k);
        let vs = self.shape(v);
        assert!(qs.len() == 2 && ks.len() == 2 && ks == vs && qs[1] == ks[1], "attention: {qs:?} {ks:?} {vs:?}");
        let (n, d, l) = (qs[0], qs[1], ks[0]);
        assert!(heads > 0 && d % heads == 0, "attention: {d} not divisible by {heads} heads");
        if let Some(b) = bias {
            assert_eq!(self.shape(b), [n, l], "attention: bias shape");
        }
        let mut deps = vec![q, k, v];
        deps.extend(bias);
        let rg = self.any_grad(&deps);
        let bias_data = bias.map(|b| self.data(b));
        let (out, probs) = attention::forward(self.data(q), self.data(k), self.data(v), bias_data, n, l, d, heads);
        let value = Tensor::new(&[n, d], out).expect("shape checked");
        let probs = if rg { probs } else { Vec::new() };
        self.push(value, Op::Attention { q, k, v, bias, heads, probs }, rg)
    }

    /// Scales each row of `x [rows, c]` to unit Euclidean norm.
    pub fn normalize_rows(&mut self, x: Var) -> Var {
        let xs = self.shape(x);
        assert_eq!(xs.len(), 2, "normalize_rows: x must be 2-D");
        let c = xs[1];
        let mut data = self.data(x).to_vec();
        for row in data.chunks_mut(c.max(1)) {
            let inv = T::one() / row_norm(row);
            for v in row.iter_mut() {
                *v *= inv;
            }
        }
        let value = Tensor::new(self.shape(x), data).expect("shape checked");
        let rg = self.any_grad(&[x]);
        self.push(value, Op::NormalizeRows(x), rg)
    }

    /// Multiplies column `j` of `x [rows, c]` by the constant `s[j]`.
    pub fn scale_cols(&mut self, x: Var, s: Vec<T>) -> Var {
        let xs = self.shape(x);
        assert!(xs.len() == 2 && xs[1] == s.len(), "scale_cols: {xs:?} with {} scales", s.len());
        let data = self.data(x).chunks(s.len()).flat_map(|r| r.iter().zip(&s).map(|(&a, &b)| a * b)).collect();
        let value = Tensor::new(self.shape(x), data).expect("shape checked");
        let rg = self.any_grad(&[x]);
        self.push(value, Op::ScaleCols { x, s }, rg)
    }

    /// Mean over the rows of `x [rows, c]`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let xs = self.shape(x);
        assert!(xs.len() == 2 && xs[0] > 0, "mean_rows: {xs:?}");
        let (r, c) = (xs[0], xs[1]);
        let mut out = zero_like(c);
        for row in self.data(x).chunks(c) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let inv = T::one() / T::of(r as f64);
        for o in out.iter_mut() {
            *o *= inv;
        }
        let value = Tensor::new(&[c], out).expect("shape checked");
        let rg = self.any_grad(&[x]);
        self.push(value, Op::MeanRows(x), rg)
    }

    /// Translates a constant `src [d, h, w]` by `t [3]` (voxel units, `(x, y, z)`).
    pub fn warp(&mut self, src: Var, t: Var) -> Var {
        assert!(!self.requires_grad(src), "warp: source must be constant");
        let ss = self.shape(src);
        assert_eq!(ss.len(), 3, "warp: source must be [d, h, w]");
        assert_eq!(self.shape(t), [3], "warp: translation must be [3]");
        let dims = [ss[0], ss[1], ss[2]];
        let tv = self.data(t);
        let tp = [tv[0].to_f64_lossy(), tv[1].to_f64_lossy(), tv[2].to_f64_lossy()];
        let out = crate::geometry::warp_translate_slice(self.data(src), dims, tp);
        let value = Tensor::new(&[dims[0], dims[1], dims[2]], out).expect("shape checked");
        let rg = self.any_grad(&[t]);
        self.push(value, Op::Warp { src, t, dims }, rg)
    }

    /// Normalized cross-correlation of two `[d, h, w]` volumes, as a scalar.
    pub fn ncc(&mut self, a: Var, b: Var, window: NccWindow) -> crate::Result<Var> {
        let sa = self.shape(a);
        if sa.len() != 3 || sa != self.shape(b) {
            return Err(crate::Error::ShapeMismatch(alloc::format!(
                "NCC of {:?} and {:?}",
                sa,
                self.shape(b)
            )));
        }
        let dims = [sa[0], sa[1], sa[2]];
        let (value, _, _) = ncc_with_grad(self.data(a), self.data(b), dims, window, false, false)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::scalar(T::of(value)), Op::Ncc { a, b, dims, window }, rg))
    }

    /// Mean squared Euclidean distance between rows of `pred [n, 3]` and `target`.
    pub fn pair_loss(&mut self, pred: Var, target: &[Point3]) -> Var {
        let ps = self.shape(pred);
        assert!(ps.len() == 2 && ps[1] == 3 && ps[0] == target.len() && ps[0] > 0, "pair_loss: {ps:?}");
        let target: Vec<T> = target.iter().flat_map(|p| p.iter().map(|&v| T::of(v))).collect();
        let n = T::of(ps[0] as f64);
        let s: T = self.data(pred).iter().zip(&target).map(|(&p, &t)| (p - t) * (p - t)).sum();
        let rg = self.any_grad(&[pred]);
        self.push(Tensor::scalar(s / n), Op::PairLoss { pred, target }, rg)
    }

    /// `sum_i w_i * x_i` over scalars.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Var {
        let mut s = T::zero();
        for &(v, w) in terms {
            assert!(self.value(v).len() == 1, "weighted_sum: terms must be scalars");
            s += w * self.data(v)[0];
        }
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let rg = self.any_grad(&vars);
        self.push(Tensor::scalar(s), Op::WeightedSum(terms.to_vec()), rg)
    }

    /// `sum_i x_i * w_i` against constant weights.
    pub fn dot_const(&mut self, x: Var, w: &[T]) -> Var {
        assert_eq!(self.value(x).len(), w.len(), "dot_const: length mismatch");
        let s: T = self.data(x).iter().zip(w).map(|(&a, &b)| a * b).sum();
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), Op::Dot { x, w: w.to_vec() }, rg)
    }

    /// Reverse pass from a scalar `root`.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        assert_eq!(self.value(root).len(), 1, "backward: root must be a scalar");
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[root.0].requires_grad {
            grads[root.0] = Some(vec![T::one()]);
        }
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(i, &g, &mut grads);
        }
        Gradients { grads }
    }

    fn backprop(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(ga) = self.slot(grads, v) {
                        add_into(ga, g);
                    }
                }
            }
            Op::AddRow { x, b } => {
                if let Some(gx) = self.slot(grads, *x) {
                    add_into(gx, g);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    let c = gb.len();
                    for row in g.chunks(c) {
                        add_into(gb, row);
                    }
                }
            }
            Op::AddEmbedding { x, table, ids } => {
                if let Some(gx) = self.slot(grads, *x) {
                    add_into(gx, g);
                }
                let c = self.shape(*table)[1];
                if let Some(gt) = self.slot(grads, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut gt[id * c..(id + 1) * c], &g[r * c..(r + 1) * c]);
                    }
                }
            }
            Op::Scale { x, s } => {
                if let Some(gx) = self.slot(grads, *x) {
                    for (o, &v) in gx.iter_mut().zip(g) {
                        *o += v * *s;
                    }
                }
            }
            Op::Relu(x) => {
                let out = node.value.data();
                if let Some(gx) = self.slot(grads, *x) {
                    for ((o, &v), &y) in gx.iter_mut().zip(g).zip(out) {
                        if y > T::zero() {
                            *o += v;
                        }
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let (r, i_dim) = (self.shape(*x)[0], self.shape(*x)[1]);
                let o = self.shape(*w)[1];
                if let Some(gx) = self.slot(grads, *x) {
                    gemm(false, true, r, o, i_dim, g, self.data(*w), T::one(), gx);
                }
                if let Some(gw) = self.slot(grads, *w) {
                    gemm(true, false, i_dim, r, o, self.data(*x), g, T::one(), gw);
                }
                if let Some(b) = b {
                    if let Some(gb) = self.slot(grads, *b) {
                        for row in g.chunks(o) {
                            add_into(gb, row);
                        }
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, saved } | Op::InstanceNorm { x, gamma, beta, saved } => {
                let gam = self.data(*gamma).to_vec();
                let (dx, dg, db) = norm::backward(g, &gam, saved);
                if let Some(gx) = self.slot(grads, *x) {
                    add_into(gx, &dx);
                }
                if let Some(gg) = self.slot(grads, *gamma) {
                    add_into(gg, &dg);
                }
                if let Some(gb) = self.slot(grads, *beta) {
                    add_into(gb, &db);
                }
            }
            Op::Conv3d { x, w, geom, cols } => {
                if let Some(gw) = self.slot(grads, *w) {
                    conv::backward_weight(g, cols, geom, gw);
                }
                if self.requires_grad(*x) {
                    let dx = conv::backward_input(g, self.data(*w), geom);
                    if let Some(gx) = self.slot(grads, *x) {
                        add_into(gx, &dx);
                    }
                }
            }
            Op::ConcatLast { a, b } => {
                let wa = *self.shape(*a).last().expect("checked");
                let wb = *self.shape(*b).last().expect("checked");
                if let Some(ga) = self.slot(grads, *a) {
                    for (dst, src) in ga.chunks_mut(wa).zip(g.chunks(wa + wb)) {
                        add_into(dst, &src[..wa]);
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for (dst, src) in gb.chunks_mut(wb).zip(g.chunks(wa + wb)) {
                        add_into(dst, &src[wa..]);
                    }
                }
            }
            Op::Transpose(x) => {
                let a = self.shape(*x)[0];
                let b = self.value(*x).len() / a;
                if let Some(gx) = self.slot(grads, *x) {
                    for i in 0..a {
                        for j in 0..b {
                            gx[i * b + j] += g[j * a + i];
                        }
                    }
                }
            }
            Op::Sample { x, taps } => {
                let c = self.shape(*x)[0];
                if let Some(gx) = self.slot(grads, *x) {
                    sample::backward(g, c, taps, gx);
                }
            }
            Op::Attention { q, k, v, bias, heads, probs } => {
                let (n, d) = (self.shape(*q)[0], self.shape(*q)[1]);
                let l = self.shape(*k)[0];
                let want_bias = bias.is_some_and(|b| self.requires_grad(b));
                let (dq, dk, dv, db) = attention::backward(
                    g,
                    self.data(*q),
                    self.data(*k),
                    self.data(*v),
                    probs,
                    n,
                    l,
                    d,
                    *heads,
                    want_bias,
                );
                for (var, grad) in [(*q, dq), (*k, dk), (*v, dv)] {
                    if let Some(dst) = self.slot(grads, var) {
                        add_into(dst, &grad);
                    }
                }
                if let (Some(b), Some(db)) = (bias, db) {
                    if let Some(dst) = self.slot(grads, *b) {
                        add_into(dst, &db);
                    }
                }
            }
            Op::NormalizeRows(x) => {
                let c = self.shape(*x)[1].max(1);
                let y = node.value.data();
                if let Some(gx) = self.slot(grads, *x) {
                    for ((xr, yr), (gr, dst)) in
                        self.data(*x).chunks(c).zip(y.chunks(c)).zip(g.chunks(c).zip(gx.chunks_mut(c)))
                    {
                        let inv = T::one() / row_norm(xr);
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for ((o, &yv), &gv) in dst.iter_mut().zip(yr).zip(gr) {
                            *o += (gv - yv * dot) * inv;
                        }
                    }
                }
            }
            Op::ScaleCols { x, s } => {
                if let Some(gx) = self.slot(grads, *x) {
                    for (dst, src) in gx.chunks_mut(s.len()).zip(g.chunks(s.len())) {
                        for ((o, &v), &k) in dst.iter_mut().zip(src).zip(s) {
                            *o += v * k;
                        }
                    }
                }
            }
            Op::MeanRows(x) => {
                let r = self.shape(*x)[0];
                let inv = T::one() / T::of(r as f64);
                if let Some(gx) = self.slot(grads, *x) {
                    for row in gx.chunks_mut(g.len()) {
                        for (o, &v) in row.iter_mut().zip(g) {
                            *o += v * inv;
                        }
                    }
                }
            }
            Op::Warp { src, t, dims } => {
                let tv = self.data(*t);
                let tp = [tv[0].to_f64_lossy(), tv[1].to_f64_lossy(), tv[2].to_f64_lossy()];
                let dt = crate::geometry::warp_translate_grad(self.data(*src), *dims, tp, g);
                if let Some(gt) = self.slot(grads, *t) {
                    for (o, v) in gt.iter_mut().zip(dt) {
                        *o += T::of(v);
                    }
                }
            }
            Op::Ncc { a, b, dims, window } => {
                let (wa, wb) = (self.requires_grad(*a), self.requires_grad(*b));
                let (_, da, db) = ncc_with_grad(self.data(*a), self.data(*b), *dims, *window, wa, wb)
                    .expect("validated on the forward pass");
                for (var, grad) in [(*a, da), (*b, db)] {
                    if let (Some(grad), Some(dst)) = (grad, self.slot(grads, var)) {
                        for (o, v) in dst.iter_mut().zip(grad) {
                            *o += g[0] * T::of(v);
                        }
                    }
                }
            }
            Op::PairLoss { pred, target } => {
                let n = T::of(self.shape(*pred)[0] as f64);
                let k = T::of(2.0) * g[0] / n;
                let p = self.data(*pred);
                if let Some(gp) = self.slot(grads, *pred) {
                    for ((o, &pv), &tv) in gp.iter_mut().zip(p).zip(target) {
                        *o += k * (pv - tv);
                    }
                }
            }
            Op::Dot { x, w } => {
                if let Some(gx) = self.slot(grads, *x) {
                    for (o, &wv) in gx.iter_mut().zip(w) {
                        *o += wv * g[0];
                    }
                }
            }
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    if let Some(gv) = self.slot(grads, v) {
                        gv[0] += w * g[0];
                    }
                }
            }
        }
    }

    /// Mutable gradient buffer for `v`, allocated on first use; `None` when
    /// `v` does not require a gradient.
    fn slot<'a>(&self, grads: &'a mut [Option<Vec<T>>], v: Var) -> Option<&'a mut [T]> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| zero_like(n)).as_mut_slice())
    }
}

/// Euclidean norm, floored so that zero rows stay finite.
fn row_norm<T: Real>(row: &[T]) -> T {
    let ss: T = row.iter().map(|&v| v * v).sum();
    (ss + T::of(1e-12)).sqrt()
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
