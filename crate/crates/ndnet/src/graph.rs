//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] records every operation applied to its [`Var`] handles.
//! Values are computed eagerly; [`Graph::backward`] then walks the tape in
//! reverse creation order. All values are 2-D; scalars are `1 × 1`.

use std::cell::RefCell;
use std::ops;
use std::sync::Arc;

use sbi_core::Tensor;
use statrs::function::erf::erf;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    AddCol(usize, usize),
    MulCol(usize, usize),
    MatMul(usize, usize),
    MulConst(usize, Arc<Tensor>),
    Scale(usize, f64),
    AddScalar(usize),
    Exp(usize),
    Log(usize),
    Tanh(usize),
    Relu(usize),
    Gelu(usize),
    Softplus(usize),
    Square(usize),
    Clamp(usize, f64, f64),
    SumAll(usize),
    SumRows(usize),
    SumCols(usize),
    LogSumExpRows(usize),
    ConcatCols(Vec<usize>),
    SliceCols(usize, usize),
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
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

/// Gradients of a scalar root with respect to every recorded node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads[v.id].as_ref()
    }

    /// Gradient of `v`, zeros when the root does not depend on it.
    pub fn take(&mut self, v: Var<'_>) -> Tensor {
        self.grads[v.id].take().unwrap_or_else(|| {
            let (r, c) = self.shapes[v.id];
            Tensor::zeros(&[r, c])
        })
    }
}

fn dims(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

/// `c = alpha · a·b + beta · c` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    // SAFETY: the slices hold m·k, k·n and m·n elements laid out with the
    // given strides; callers derive all dimensions from the operands.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Dense matrix product of plain tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = dims(a);
    let (k2, n) = dims(b);
    assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, a.data(), (k, 1), b.data(), (n, 1), 0.0, &mut out);
    Tensor::matrix(m, n, out)
}

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + erf(x / SQRT_2))
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / SQRT_2)) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    assert_eq!(dims(a), dims(b), "elementwise shape mismatch");
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::matrix(a.rows(), a.cols(), data)
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

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        debug_assert!(value.shape().len() == 2, "graph values must be matrices");
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    /// A leaf that gradients are not tracked through.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient [`backward`](Self::backward) will report.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.constant(Tensor::matrix(1, 1, vec![v]))
    }

    fn value_of(&self, id: usize) -> Arc<Tensor> {
        self.nodes.borrow()[id].value.clone()
    }

    fn requires(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn unary(&self, a: usize, value: Tensor, op: Op) -> Var<'_> {
        let rg = self.requires(a);
        self.push(value, op, rg)
    }

    fn binary(&self, a: usize, b: usize, value: Tensor, op: Op) -> Var<'_> {
        let rg = self.requires(a) || self.requires(b);
        self.push(value, op, rg)
    }

    /// Reverse sweep from a `1 × 1` root.
    pub fn backward(&self, root: Var<'_>) -> Gradients {
        let nodes = self.nodes.borrow();
        let shapes: Vec<(usize, usize)> = nodes.iter().map(|n| dims(&n.value)).collect();
        assert_eq!(shapes[root.id], (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[root.id] = Some(Tensor::matrix(1, 1, vec![1.0]));

        fn slot<'a>(
            grads: &'a mut [Option<Tensor>],
            shapes: &[(usize, usize)],
            id: usize,
        ) -> &'a mut Tensor {
            grads[id].get_or_insert_with(|| {
                let (r, c) = shapes[id];
                Tensor::zeros(&[r, c])
            })
        }

        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let out = &node.value;
            let need = |i: usize| nodes[i].requires_grad;
            let val = |i: usize| &nodes[i].value;
            let (rows, cols) = shapes[id];
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    if need(*a) {
                        add_into(slot(&mut grads, &shapes, *a), g.data(), 1.0);
                    }
                    if need(*b) {
                        add_into(slot(&mut grads, &shapes, *b), g.data(), sign);
                    }
                }
                Op::Mul(a, b) => {
                    if need(*a) {
                        let t = zip_map(&g, val(*b), |x, y| x * y);
                        add_into(slot(&mut grads, &shapes, *a), t.data(), 1.0);
                    }
                    if need(*b) {
                        let t = zip_map(&g, val(*a), |x, y| x * y);
                        add_into(slot(&mut grads, &shapes, *b), t.data(), 1.0);
                    }
                }
                Op::AddRow(a, b) => {
                    if need(*a) {
                        add_into(slot(&mut grads, &shapes, *a), g.data(), 1.0);
                    }
                    if need(*b) {
                        let s = slot(&mut grads, &shapes, *b).data_mut();
                        for i in 0..rows {
                            for (acc, v) in s.iter_mut().zip(g.row(i)) {
                                *acc += v;
                            }
                        }
                    }
                }
                Op::MulRow(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    if need(*a) {
                        let s = slot(&mut grads, &shapes, *a);
                        for i in 0..rows {
                            for ((acc, gv), bv) in s.row_mut(i).iter_mut().zip(g.row(i)).zip(vb.data()) {
                                *acc += gv * bv;
                            }
                        }
                    }
                    if need(*b) {
                        let s = slot(&mut grads, &shapes, *b).data_mut();
                        for i in 0..rows {
                            for ((acc, gv), av) in s.iter_mut().zip(g.row(i)).zip(va.row(i)) {
                                *acc += gv * av;
                            }
                        }
                    }
                }
                Op::AddCol(a, c) => {
                    if need(*a) {
                        add_into(slot(&mut grads, &shapes, *a), g.data(), 1.0);
                    }
                    if need(*c) {
                        let s = slot(&mut grads, &shapes, *c).data_mut();
                        for (i, acc) in s.iter_mut().enumerate() {
                            *acc += g.row(i).iter().sum::<f64>();
                        }
                    }
                }
                Op::MulCol(a, c) => {
                    let (va, vc) = (val(*a), val(*c));
                    if need(*a) {
                        let s = slot(&mut grads, &shapes, *a);
                        for i in 0..rows {
                            let f = vc.data()[i];
                            for (acc, gv) in s.row_mut(i).iter_mut().zip(g.row(i)) {
                                *acc += gv * f;
                            }
                        }
                    }
                    if need(*c) {
                        let s = slot(&mut grads, &shapes, *c).data_mut();
                        for (i, acc) in s.iter_mut().enumerate() {
                            *acc += g.row(i).iter().zip(va.row(i)).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    let (m, k) = shapes[*a];
                    let n = cols;
                    if need(*a) {
                        // dA = G · Bᵀ
                        let s = slot(&mut grads, &shapes, *a);
                        gemm(m, n, k, g.data(), (n, 1), vb.data(), (1, n), 1.0, s.data_mut());
                    }
                    if need(*b) {
                        // dB = Aᵀ · G
                        let s = slot(&mut grads, &shapes, *b);
                        gemm(k, m, n, va.data(), (1, k), g.data(), (n, 1), 1.0, s.data_mut());
                    }
                }
                Op::MulConst(a, c) => {
                    let t = zip_map(&g, c, |x, y| x * y);
                    add_into(slot(&mut grads, &shapes, *a), t.data(), 1.0);
                }
                Op::Scale(a, s) => add_into(slot(&mut grads, &shapes, *a), g.data(), *s),
                Op::AddScalar(a) => add_into(slot(&mut grads, &shapes, *a), g.data(), 1.0),
                Op::Exp(a) => {
                    let t = zip_map(&g, out, |x, y| x * y);
                    add_into(slot(&mut grads, &shapes, *a), t.data(), 1.0);
                }
                Op::Log(a) => {
                    let t = zip_map(&g, val(*a), |x, y| x / y);
                    add_into(slot(&mut grads, &shapes, *a), t.data(), 1.0);
                }
                Op::Tanh(a) => {
                    let t = zip_map(&g, out, |x, y| x * (1.0 - y * y));
                    add_into(slot(&mut grads, &shapes, *a), t.data(), 1.0);
                }
                Op::Relu(a) => {
                    let t = zip_map(&g, val(*a), |x, y| if y > 0.0 { x } else { 0.0 });
                    add_into(slot(&mut grads, &shapes, *a), t.data(), 1.0);
                }
                Op::Gelu(a) => {
                    let t = zip_map(&g, val(*a), |x, y| x * gelu_grad(y));
                    add_into(slot(&mut grads, &shapes, *a), t.data(), 1.0);
                }
                Op::Softplus(a) => {
                    let t = zip_map(&g, val(*a), |x, y| x * sigmoid(y));
                    add_into(slot(&mut grads, &shapes, *a), t.data(), 1.0);
                }
                Op::Square(a) => {
                    let t = zip_map(&g, val(*a), |x, y| 2.0 * x * y);
                    add_into(slot(&mut grads, &shapes, *a), t.data(), 1.0);
                }
                Op::Clamp(a, lo, hi) => {
                    let t = zip_map(&g, val(*a), |x, y| if y > *lo && y < *hi { x } else { 0.0 });
                    add_into(slot(&mut grads, &shapes, *a), t.data(), 1.0);
                }
                Op::SumAll(a) => {
                    let gv = g.data()[0];
                    slot(&mut grads, &shapes, *a)
                        .data_mut()
                        .iter_mut()
                        .for_each(|v| *v += gv);
                }
                Op::SumRows(a) => {
                    let s = slot(&mut grads, &shapes, *a);
                    for i in 0..rows {
                        let gv = g.data()[i];
                        s.row_mut(i).iter_mut().for_each(|v| *v += gv);
                    }
                }
                Op::SumCols(a) => {
                    let s = slot(&mut grads, &shapes, *a);
                    for i in 0..s.rows() {
                        for (acc, gv) in s.row_mut(i).iter_mut().zip(g.data()) {
                            *acc += gv;
                        }
                    }
                }
                Op::LogSumExpRows(a) => {
                    let va = val(*a);
                    let s = slot(&mut grads, &shapes, *a);
                    for i in 0..rows {
                        let lse = out.data()[i];
                        let gv = g.data()[i];
                        if !lse.is_finite() {
                            continue;
                        }
                        for (acc, x) in s.row_mut(i).iter_mut().zip(va.row(i)) {
                            *acc += gv * (x - lse).exp();
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = shapes[p].1;
                        if need(p) {
                            let s = slot(&mut grads, &shapes, p);
                            for i in 0..rows {
                                for (acc, gv) in s.row_mut(i).iter_mut().zip(&g.row(i)[start..start + w]) {
                                    *acc += gv;
                                }
                            }
                        }
                        start += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let s = slot(&mut grads, &shapes, *a);
                    for i in 0..rows {
                        for (acc, gv) in s.row_mut(i)[*start..*start + cols].iter_mut().zip(g.row(i)) {
                            *acc += gv;
                        }
                    }
                }
            }
        }
        Gradients { grads, shapes }
    }
}

fn add_into(t: &mut Tensor, g: &[f64], scale: f64) {
    for (acc, v) in t.data_mut().iter_mut().zip(g) {
        *acc += scale * v;
    }
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Arc<Tensor> {
        self.graph.value_of(self.id)
    }

    /// Value of a `1 × 1` node.
    pub fn item(&self) -> f64 {
        let v = self.value();
        assert_eq!(v.len(), 1, "item() on a non-scalar");
        v.data()[0]
    }

    pub fn rows(&self) -> usize {
        self.value().rows()
    }

    pub fn cols(&self) -> usize {
        self.value().cols()
    }

    fn map(self, f: impl Fn(f64) -> f64, op: Op) -> Var<'g> {
        let v = self.value().map(f);
        self.graph.unary(self.id, v, op)
    }

    fn zip(self, other: Var<'g>, f: impl Fn(f64, f64) -> f64, op: Op) -> Var<'g> {
        let v = zip_map(&self.value(), &other.value(), f);
        self.graph.binary(self.id, other.id, v, op)
    }

    /// `self (n × m) + row (1 × m)`, broadcast over rows.
    pub fn add_row(self, row: Var<'g>) -> Var<'g> {
        let (a, b) = (self.value(), row.value());
        assert_eq!((1, a.cols()), dims(&b), "add_row shape mismatch");
        let mut out = (*a).clone();
        for i in 0..out.rows() {
            for (o, v) in out.row_mut(i).iter_mut().zip(b.data()) {
                *o += v;
            }
        }
        self.graph.binary(self.id, row.id, out, Op::AddRow(self.id, row.id))
    }

    /// `self (n × m) ⊙ row (1 × m)`, broadcast over rows.
    pub fn mul_row(self, row: Var<'g>) -> Var<'g> {
        let (a, b) = (self.value(), row.value());
        assert_eq!((1, a.cols()), dims(&b), "mul_row shape mismatch");
        let mut out = (*a).clone();
        for i in 0..out.rows() {
            for (o, v) in out.row_mut(i).iter_mut().zip(b.data()) {
                *o *= v;
            }
        }
        self.graph.binary(self.id, row.id, out, Op::MulRow(self.id, row.id))
    }

    /// `self (n × m) + col (n × 1)`, broadcast over columns.
    pub fn add_col(self, col: Var<'g>) -> Var<'g> {
        let (a, c) = (self.value(), col.value());
        assert_eq!((a.rows(), 1), dims(&c), "add_col shape mismatch");
        let mut out = (*a).clone();
        for i in 0..out.rows() {
            let f = c.data()[i];
            out.row_mut(i).iter_mut().for_each(|o| *o += f);
        }
        self.graph.binary(self.id, col.id, out, Op::AddCol(self.id, col.id))
    }

    /// `self (n × m) ⊙ col (n × 1)`, broadcast over columns.
    pub fn mul_col(self, col: Var<'g>) -> Var<'g> {
        let (a, c) = (self.value(), col.value());
        assert_eq!((a.rows(), 1), dims(&c), "mul_col shape mismatch");
        let mut out = (*a).clone();
        for i in 0..out.rows() {
            let f = c.data()[i];
            out.row_mut(i).iter_mut().for_each(|o| *o *= f);
        }
        self.graph.binary(self.id, col.id, out, Op::MulCol(self.id, col.id))
    }

    pub fn matmul(self, other: Var<'g>) -> Var<'g> {
        let v = matmul(&self.value(), &other.value());
        self.graph.binary(self.id, other.id, v, Op::MatMul(self.id, other.id))
    }

    /// Elementwise product with a fixed tensor (e.g. a mask).
    pub fn mul_const(self, c: Arc<Tensor>) -> Var<'g> {
        let v = zip_map(&self.value(), &c, |x, y| x * y);
        self.graph.unary(self.id, v, Op::MulConst(self.id, c))
    }

    pub fn scale(self, s: f64) -> Var<'g> {
        self.map(|x| s * x, Op::Scale(self.id, s))
    }

    pub fn add_scalar(self, s: f64) -> Var<'g> {
        self.map(|x| x + s, Op::AddScalar(self.id))
    }

    pub fn exp(self) -> Var<'g> {
        self.map(f64::exp, Op::Exp(self.id))
    }

    pub fn ln(self) -> Var<'g> {
        self.map(f64::ln, Op::Log(self.id))
    }

    pub fn tanh(self) -> Var<'g> {
        self.map(f64::tanh, Op::Tanh(self.id))
    }

    pub fn relu(self) -> Var<'g> {
        self.map(|x| x.max(0.0), Op::Relu(self.id))
    }

    pub fn gelu(self) -> Var<'g> {
        self.map(gelu, Op::Gelu(self.id))
    }

    pub fn softplus(self) -> Var<'g> {
        self.map(softplus, Op::Softplus(self.id))
    }

    pub fn square(self) -> Var<'g> {
        self.map(|x| x * x, Op::Square(self.id))
    }

    /// Clamp to `[lo, hi]`; the gradient is zero where the bound is active.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'g> {
        self.map(|x| x.clamp(lo, hi), Op::Clamp(self.id, lo, hi))
    }

    pub fn sum(self) -> Var<'g> {
        let s = self.value().data().iter().sum::<f64>();
        self.graph
            .unary(self.id, Tensor::matrix(1, 1, vec![s]), Op::SumAll(self.id))
    }

    pub fn mean(self) -> Var<'g> {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Per-row sum, `n × m → n × 1`.
    pub fn sum_rows(self) -> Var<'g> {
        let a = self.value();
        let v = (0..a.rows()).map(|i| a.row(i).iter().sum()).collect();
        self.graph
            .unary(self.id, Tensor::matrix(a.rows(), 1, v), Op::SumRows(self.id))
    }

    /// Per-column sum, `n × m → 1 × m`.
    pub fn sum_cols(self) -> Var<'g> {
        let a = self.value();
        let mut v = vec![0.0; a.cols()];
        for i in 0..a.rows() {
            for (acc, x) in v.iter_mut().zip(a.row(i)) {
                *acc += x;
            }
        }
        self.graph
            .unary(self.id, Tensor::matrix(1, a.cols(), v), Op::SumCols(self.id))
    }

    /// Numerically stable per-row log-sum-exp, `n × m → n × 1`.
    pub fn logsumexp_rows(self) -> Var<'g> {
        let a = self.value();
        let v = (0..a.rows())
            .map(|i| sbi_core::distributions::log_sum_exp(a.row(i)))
            .collect();
        self.graph.unary(
            self.id,
            Tensor::matrix(a.rows(), 1, v),
            Op::LogSumExpRows(self.id),
        )
    }

    pub fn concat_cols(parts: &[Var<'g>]) -> Var<'g> {
        let g = parts[0].graph;
        let values: Vec<Arc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor> = values.iter().map(|v| v.as_ref()).collect();
        let v = Tensor::concat_cols(&refs).expect("concat_cols row mismatch");
        let rg = parts.iter().any(|p| g.requires(p.id));
        g.push(v, Op::ConcatCols(parts.iter().map(|p| p.id).collect()), rg)
    }

    /// Columns `start..end`.
    pub fn slice_cols(self, start: usize, end: usize) -> Var<'g> {
        let v = self.value().slice_cols(start, end);
        self.graph.unary(self.id, v, Op::SliceCols(self.id, start))
    }
}

impl<'g> ops::Add for Var<'g> {
    type Output = Var<'g>;
    fn add(self, o: Var<'g>) -> Var<'g> {
        self.zip(o, |x, y| x + y, Op::Add(self.id, o.id))
    }
}

impl<'g> ops::Sub for Var<'g> {
    type Output = Var<'g>;
    fn sub(self, o: Var<'g>) -> Var<'g> {
        self.zip(o, |x, y| x - y, Op::Sub(self.id, o.id))
    }
}

impl<'g> ops::Mul for Var<'g> {
    type Output = Var<'g>;
    fn mul(self, o: Var<'g>) -> Var<'g> {
        self.zip(o, |x, y| x * y, Op::Mul(self.id, o.id))
    }
}

impl<'g> ops::Neg for Var<'g> {
    type Output = Var<'g>;
    fn neg(self) -> Var<'g> {
        self.scale(-1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use sbi_core::RngKey;

    fn rand_matrix(key: u64, r: usize, c: usize) -> Tensor {
        let mut rng = RngKey::new(key).rng();
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Central finite differences (h = 1e-5) of `f` at every entry of `x`.
    fn numeric_grad(x: &Tensor, f: &dyn Fn(&Tensor) -> f64) -> Tensor {
        let h = 1e-5;
        let mut out = Tensor::zeros(x.shape());
        for k in 0..x.len() {
            let mut p = x.clone();
            p.data_mut()[k] += h;
            let mut m = x.clone();
            m.data_mut()[k] -= h;
            out.data_mut()[k] = (f(&p) - f(&m)) / (2.0 * h);
        }
        out
    }

    fn check(name: &str, inputs: &[Tensor], f: impl for<'g> Fn(&'g Graph, &[Var<'g>]) -> Var<'g>) {
        let g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let root = f(&g, &vars);
        let mut grads = g.backward(root);
        for (i, x) in inputs.iter().enumerate() {
            let analytic = grads.take(vars[i]);
            let numeric = numeric_grad(x, &|p| {
                let g2 = Graph::new();
                let vs: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, t)| g2.constant(if j == i { p.clone() } else { t.clone() }))
                    .collect();
                f(&g2, &vs).item()
            });
            for (a, n) in analytic.data().iter().zip(numeric.data()) {
                let rel = (a - n).abs() / (1e-8 + a.abs().max(n.abs()));
                assert!(
                    rel < 1e-5 || (a - n).abs() < 1e-9,
                    "{name}: input {i} analytic {a} numeric {n}"
                );
            }
        }
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        let a = rand_matrix(1, 3, 4);
        let b = rand_matrix(2, 3, 4);
        let w = rand_matrix(3, 4, 2);
        let row = rand_matrix(4, 1, 4);
        let col = rand_matrix(5, 3, 1);
        let pos = a.map(|v| v.abs() + 0.5);
        check("add", &[a.clone(), b.clone()], |_, v| (v[0] + v[1]).square().sum());
        check("sub", &[a.clone(), b.clone()], |_, v| (v[0] - v[1]).square().sum());
        check("mul", &[a.clone(), b.clone()], |_, v| (v[0] * v[1]).sum());
        check("add_row", &[a.clone(), row.clone()], |_, v| v[0].add_row(v[1]).square().sum());
        check("mul_row", &[a.clone(), row.clone()], |_, v| v[0].mul_row(v[1]).square().sum());
        check("add_col", &[a.clone(), col.clone()], |_, v| v[0].add_col(v[1]).square().sum());
        check("mul_col", &[a.clone(), col.clone()], |_, v| v[0].mul_col(v[1]).square().sum());
        check("matmul", &[a.clone(), w.clone()], |_, v| v[0].matmul(v[1]).square().sum());
        let mask = Arc::new(rand_matrix(6, 3, 4).map(|v| if v > 0.0 { 1.0 } else { 0.0 }));
        check("mul_const", &[a.clone()], move |_, v| v[0].mul_const(mask.clone()).square().sum());
        check("scale", &[a.clone()], |_, v| v[0].scale(-2.5).add_scalar(0.3).square().mean());
        check("exp", &[a.clone()], |_, v| v[0].exp().sum());
        check("log", &[pos.clone()], |_, v| v[0].ln().sum());
        check("tanh", &[a.clone()], |_, v| v[0].tanh().sum());
        check("relu", &[a.clone()], |_, v| v[0].relu().square().sum());
        check("gelu", &[a.clone()], |_, v| v[0].gelu().sum());
        check("softplus", &[a.clone()], |_, v| v[0].softplus().sum());
        check("clamp", &[a.clone()], |_, v| v[0].clamp(-0.5, 0.5).square().sum());
        check("sum_rows", &[a.clone()], |_, v| v[0].sum_rows().square().sum());
        check("sum_cols", &[a.clone()], |_, v| v[0].sum_cols().square().sum());
        check("logsumexp", &[a.clone()], |_, v| v[0].logsumexp_rows().square().sum());
        check("concat", &[a.clone(), col.clone()], |_, v| {
            Var::concat_cols(&[v[0], v[1]]).square().sum()
        });
        check("slice", &[a.clone()], |_, v| v[0].slice_cols(1, 3).square().sum());
        check("neg", &[a.clone()], |_, v| (-v[0]).exp().sum());
    }

    #[test]
    fn half_square_norm_gradient_is_identity() {
        let w = rand_matrix(7, 5, 3);
        let g = Graph::new();
        let v = g.param(w.clone());
        let loss = v.square().sum().scale(0.5);
        let mut grads = g.backward(loss);
        assert_eq!(grads.take(v), w);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let g = Graph::new();
        let v = g.param(rand_matrix(8, 2, 2));
        let c = g.scalar(3.0);
        let mut grads = g.backward(c);
        assert_eq!(grads.take(v), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn matmul_matches_naive_loop() {
        let a = rand_matrix(9, 7, 5);
        let b = rand_matrix(10, 5, 3);
        let c = matmul(&a, &b);
        for i in 0..7 {
            for j in 0..3 {
                let s: f64 = (0..5).map(|k| a.get(i, k) * b.get(k, j)).sum();
                assert!((c.get(i, j) - s).abs() < 1e-12);
            }
        }
    }
}
