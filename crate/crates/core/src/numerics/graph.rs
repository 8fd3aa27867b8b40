use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

use super::kernels::{self, Padding};
use super::{Gradients, ParamId, ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Operation kinds, used by [`Graph::op_count`] for instrumentation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Param,
    Constant,
    Gather,
    Add,
    Mul,
    Conv,
    Glu,
    Linear,
    MatMul,
    MatMulT,
    Softmax,
    Concat,
    Tanh,
    Sigmoid,
    GateMix,
    CrossEntropy,
    SumAll,
}

#[derive(Clone, Debug)]
enum Op {
    Param(ParamId),
    Constant,
    Gather { table: ParamId, ids: Vec<usize> },
    Add(Var, Var),
    Mul(Var, Var),
    Conv { x: Var, w: Var, b: Var, k: usize, pad: Padding },
    Glu(Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Softmax(Var),
    Concat(Vec<Var>),
    Tanh(Var),
    Sigmoid(Var),
    GateMix { h: Var, c: Var, o: Var, g: Var },
    CrossEntropy { logits: Var, targets: Vec<usize> },
    SumAll(Var),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Param(_) => OpKind::Param,
            Op::Constant => OpKind::Constant,
            Op::Gather { .. } => OpKind::Gather,
            Op::Add(..) => OpKind::Add,
            Op::Mul(..) => OpKind::Mul,
            Op::Conv { .. } => OpKind::Conv,
            Op::Glu(_) => OpKind::Glu,
            Op::Linear { .. } => OpKind::Linear,
            Op::MatMul(..) => OpKind::MatMul,
            Op::MatMulT(..) => OpKind::MatMulT,
            Op::Softmax(_) => OpKind::Softmax,
            Op::Concat(_) => OpKind::Concat,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::GateMix { .. } => OpKind::GateMix,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
            Op::SumAll(_) => OpKind::SumAll,
        }
    }
}

struct Node<T> {
    op: Op,
    // `None` only for parameter leaves, whose value lives in the store.
    value: Option<Tensor<T>>,
    needs_grad: bool,
}

/// Rows below this count are evaluated sequentially inside an op.
const PARALLEL_ROWS: usize = 64;

/// Records a computation over parameters of one [`ParamStore`] for reverse-mode
/// differentiation.
///
/// Every op evaluates all rows (sequence positions) of its input in a single
/// sweep; rows never depend on each other inside an op. The number of sweeps
/// is reported by [`Graph::sweeps`].
pub struct Graph<'p, T> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    sweeps: AtomicUsize,
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            sweeps: AtomicUsize::new(0),
        }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (_, Some(t)) => t,
            (Op::Param(id), None) => self.params.tensor(*id),
            _ => unreachable!("non-parameter node without value"),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn op_count(&self, kind: OpKind) -> usize {
        self.nodes.iter().filter(|n| n.op.kind() == kind).count()
    }

    /// Number of row-parallel evaluation sweeps performed so far. Each sweep
    /// is one join point after which every row of an op's output is ready.
    pub fn sweeps(&self) -> usize {
        self.sweeps.load(Ordering::Relaxed)
    }

    fn push(&mut self, op: Op, value: Option<Tensor<T>>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Evaluates `f(row, out_row)` for every output row in one sweep.
    fn rowwise<F>(&self, rows: usize, cols: usize, f: F) -> Tensor<T>
    where
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        self.sweeps.fetch_add(1, Ordering::Relaxed);
        let mut out = Tensor::zeros(&[rows, cols]);
        if rows >= PARALLEL_ROWS {
            out.data_mut()
                .par_chunks_mut(cols)
                .enumerate()
                .for_each(|(r, row)| f(r, row));
        } else {
            for (r, row) in out.data_mut().chunks_mut(cols).enumerate() {
                f(r, row);
            }
        }
        out
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let trainable = self.params.get(id).trainable;
        self.push(Op::Param(id), None, trainable)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Constant, Some(t), false)
    }

    /// Rows of an embedding table parameter.
    pub fn gather(&mut self, table: ParamId, ids: &[usize]) -> Result<Var> {
        let p = self.params.get(table);
        let t = &p.tensor;
        if let Some(&bad) = ids.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::shape(format!(
                "row {bad} out of range for `{}` with {} rows",
                p.name,
                t.rows()
            )));
        }
        if ids.is_empty() {
            return Err(Error::shape("gather of zero rows"));
        }
        let out = self.rowwise(ids.len(), t.cols(), |r, row| row.copy_from_slice(t.row(ids[r])));
        Ok(self.push(
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            Some(out),
            p.trainable,
        ))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let (ta, tb) = (self.value(a), self.value(b));
        let out = self.rowwise(ta.rows(), ta.cols(), |r, row| kernels::add_row(ta.row(r), tb.row(r), row));
        let out = Tensor::new(ta.shape().to_vec(), out.into_data())?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add(a, b), Some(out), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Mul(a, b), Some(out), ng))
    }

    /// Windowed convolution; `w` is `[d_out, k * d_in]`, `b` is `[d_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, k: usize, pad: Padding) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let d_in = tx.cols();
        let d_out = tb.len();
        if k == 0 || tw.shape() != [d_out, k * d_in] {
            return Err(Error::shape(format!(
                "conv kernel {:?} incompatible with k={k}, d_in={d_in}, d_out={d_out}",
                tw.shape()
            )));
        }
        let len = pad
            .output_len(tx.rows(), k)
            .ok_or_else(|| Error::shape(format!("window {k} longer than padded input")))?;
        let out = self.rowwise(len, d_out, |pos, row| {
            let mut window = vec![T::zero(); k * d_in];
            kernels::fill_window(tx, pos, k, pad.left, &mut window);
            kernels::affine_row(tw.data(), Some(tb.data()), &window, row);
        });
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(Op::Conv { x, w, b, k, pad }, Some(out), ng))
    }

    pub fn glu(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if !tx.cols().is_multiple_of(2) {
            return Err(Error::shape(format!("glu needs an even width, got {}", tx.cols())));
        }
        let out = self.rowwise(tx.rows(), tx.cols() / 2, |r, row| kernels::glu_row(tx.row(r), row));
        let ng = self.needs(x);
        Ok(self.push(Op::Glu(x), Some(out), ng))
    }

    /// `x W^T + b` row by row; `w` is `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        let n_out = tw.rows();
        if tw.shape().len() != 2 || tw.cols() != tx.cols() {
            return Err(Error::shape(format!("linear: weight {:?} for input {:?}", tw.shape(), tx.shape())));
        }
        let tb = b.map(|b| self.value(b));
        if let Some(tb) = tb {
            if tb.len() != n_out {
                return Err(Error::shape("linear: bias length"));
            }
        }
        let out = self.rowwise(tx.rows(), n_out, |r, row| {
            kernels::affine_row(tw.data(), tb.map(Tensor::data), tx.row(r), row)
        });
        let ng = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(Op::Linear { x, w, b }, Some(out), ng))
    }

    /// `a b` with `a: [n, m]`, `b: [m, p]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(Error::shape(format!("matmul {:?} x {:?}", ta.shape(), tb.shape())));
        }
        let out = self.rowwise(ta.rows(), tb.cols(), |r, row| kernels::weighted_sum_row(ta.row(r), tb, row));
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::MatMul(a, b), Some(out), ng))
    }

    /// `a b^T` with `a: [n, k]`, `b: [m, k]`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.cols() {
            return Err(Error::shape(format!("matmul_t {:?} x {:?}^T", ta.shape(), tb.shape())));
        }
        let out = self.rowwise(ta.rows(), tb.rows(), |r, row| kernels::dot_rows(ta.row(r), tb, row));
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::MatMulT(a, b), Some(out), ng))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if !tx.all_finite() {
            return Err(Error::NumericInput("softmax over non-finite scores".into()));
        }
        let out = self.rowwise(tx.rows(), tx.cols(), |r, row| kernels::softmax_row(tx.row(r), row));
        let ng = self.needs(x);
        Ok(self.push(Op::Softmax(x), Some(out), ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::shape("concat: row counts differ"));
        }
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let cols = tensors.iter().map(|t| t.cols()).sum();
        let out = self.rowwise(rows, cols, |r, row| {
            let mut off = 0;
            for t in &tensors {
                row[off..off + t.cols()].copy_from_slice(t.row(r));
                off += t.cols();
            }
        });
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Op::Concat(parts.to_vec()), Some(out), ng))
    }

    fn map_unary(&mut self, x: Var, op: Op, f: fn(T) -> T) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        let ng = self.needs(x);
        self.push(op, Some(out), ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map_unary(x, Op::Tanh(x), T::tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map_unary(x, Op::Sigmoid(x), kernels::sigmoid)
    }

    /// `h + g c + (1 - g) o` with a per-row scalar gate `g: [n, 1]`.
    pub fn gate_mix(&mut self, h: Var, c: Var, o: Var, g: Var) -> Result<Var> {
        self.same_shape(h, c, "gate_mix")?;
        self.same_shape(h, o, "gate_mix")?;
        let (th, tc, to, tg) = (self.value(h), self.value(c), self.value(o), self.value(g));
        if tg.rows() != th.rows() || tg.cols() != 1 {
            return Err(Error::shape(format!("gate shape {:?}", tg.shape())));
        }
        let out = self.rowwise(th.rows(), th.cols(), |r, row| {
            kernels::gate_mix_row(th.row(r), tc.row(r), to.row(r), tg.row(r)[0], row)
        });
        let ng = [h, c, o, g].iter().any(|&v| self.needs(v));
        Ok(self.push(Op::GateMix { h, c, o, g }, Some(out), ng))
    }

    /// Sum over rows of `-log softmax(logits[r])[targets[r]]`.
    pub fn cross_entropy_sum(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let tl = self.value(logits);
        if tl.rows() != targets.len() || targets.iter().any(|&t| t >= tl.cols()) {
            return Err(Error::shape("cross entropy targets do not match logits"));
        }
        let lp = self.rowwise(tl.rows(), tl.cols(), |r, row| kernels::log_softmax_row(tl.row(r), row));
        let mut total = T::zero();
        for (r, &t) in targets.iter().enumerate() {
            total = total - lp.row(r)[t];
        }
        let ng = self.needs(logits);
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
            Some(Tensor::scalar(total)),
            ng,
        ))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().copied().sum();
        let ng = self.needs(x);
        self.push(Op::SumAll(x), Some(Tensor::scalar(total)), ng)
    }

    /// Reverse sweep from a scalar `loss`, returning gradients for every
    /// trainable parameter the loss depends on.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut out = Gradients::empty(self.params.len());
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::new(lt.shape().to_vec(), vec![T::one()])?);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(gout) = grads[i].take() else { continue };
            self.backprop_node(node, Var(i), &gout, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn buf<'g>(&self, grads: &'g mut [Option<Tensor<T>>], v: Var) -> Option<&'g mut Tensor<T>> {
        if !self.needs(v) {
            return None;
        }
        let shape = self.value(v).shape().to_vec();
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(&shape)))
    }

    fn backprop_node(
        &self,
        node: &Node<T>,
        me: Var,
        gout: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
        out: &mut Gradients<T>,
    ) {
        let g = gout.data();
        match &node.op {
            Op::Constant => {}
            Op::Param(id) => {
                let shape = self.params.tensor(*id).shape().to_vec();
                out.slot(*id, &shape).add_assign(gout);
            }
            Op::Gather { table, ids } => {
                let shape = self.params.tensor(*table).shape().to_vec();
                let slot = out.slot(*table, &shape);
                for (r, &id) in ids.iter().enumerate() {
                    for (d, &s) in slot.row_mut(id).iter_mut().zip(gout.row(r)) {
                        *d = *d + s;
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(buf) = self.buf(grads, v) {
                        buf.add_assign(gout);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if let Some(buf) = self.buf(grads, *a) {
                    for ((d, &s), &y) in buf.data_mut().iter_mut().zip(g).zip(tb.data()) {
                        *d = *d + s * y;
                    }
                }
                if let Some(buf) = self.buf(grads, *b) {
                    for ((d, &s), &x) in buf.data_mut().iter_mut().zip(g).zip(ta.data()) {
                        *d = *d + s * x;
                    }
                }
            }
            Op::Conv { x, w, b, k, pad } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (d_in, d_out) = (tx.cols(), tw.rows());
                let width = k * d_in;
                let mut window = vec![T::zero(); width];
                let mut gw = self.needs(*w).then(|| Tensor::zeros(tw.shape()));
                let mut gb = self.needs(*b).then(|| Tensor::zeros(&[d_out]));
                let mut gx = self.needs(*x).then(|| Tensor::zeros(tx.shape()));
                for pos in 0..gout.rows() {
                    let go = gout.row(pos);
                    if let Some(gb) = gb.as_mut() {
                        for (d, &s) in gb.data_mut().iter_mut().zip(go) {
                            *d = *d + s;
                        }
                    }
                    if let Some(gw) = gw.as_mut() {
                        kernels::fill_window(tx, pos, *k, pad.left, &mut window);
                        let gwd = gw.data_mut();
                        for (o, &s) in go.iter().enumerate() {
                            let dst = &mut gwd[o * width..(o + 1) * width];
                            for (d, &wv) in dst.iter_mut().zip(&window) {
                                *d = *d + s * wv;
                            }
                        }
                    }
                    if let Some(gx) = gx.as_mut() {
                        // d(window) = W^T go, scattered back onto input rows.
                        for step in 0..*k {
                            let Some(src) = (pos + step).checked_sub(pad.left).filter(|&r| r < tx.rows()) else {
                                continue;
                            };
                            let dst = gx.row_mut(src);
                            for (o, &s) in go.iter().enumerate() {
                                let wrow = &tw.data()[o * width + step * d_in..o * width + (step + 1) * d_in];
                                for (d, &wv) in dst.iter_mut().zip(wrow) {
                                    *d = *d + s * wv;
                                }
                            }
                        }
                    }
                }
                for (v, t) in [(*w, gw), (*b, gb), (*x, gx)] {
                    if let (Some(t), Some(buf)) = (t, self.buf(grads, v)) {
                        buf.add_assign(&t);
                    }
                }
            }
            Op::Glu(x) => {
                let tx = self.value(*x);
                if let Some(buf) = self.buf(grads, *x) {
                    let d = gout.cols();
                    for r in 0..gout.rows() {
                        let (a, bb) = tx.row(r).split_at(d);
                        let go = gout.row(r);
                        let dst = buf.row_mut(r);
                        for i in 0..d {
                            let s = kernels::sigmoid(bb[i]);
                            dst[i] = dst[i] + go[i] * s;
                            dst[d + i] = dst[d + i] + go[i] * a[i] * s * (T::one() - s);
                        }
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let n_in = tx.cols();
                if let Some(b) = b {
                    if self.needs(*b) {
                        let mut gb = Tensor::zeros(self.value(*b).shape());
                        for r in 0..gout.rows() {
                            for (d, &s) in gb.data_mut().iter_mut().zip(gout.row(r)) {
                                *d = *d + s;
                            }
                        }
                        self.buf(grads, *b).expect("needs grad").add_assign(&gb);
                    }
                }
                if self.needs(*w) {
                    let mut gw = Tensor::zeros(tw.shape());
                    for r in 0..gout.rows() {
                        let xr = tx.row(r);
                        for (o, &s) in gout.row(r).iter().enumerate() {
                            if s == T::zero() {
                                continue;
                            }
                            let dst = &mut gw.data_mut()[o * n_in..(o + 1) * n_in];
                            for (d, &xv) in dst.iter_mut().zip(xr) {
                                *d = *d + s * xv;
                            }
                        }
                    }
                    self.buf(grads, *w).expect("needs grad").add_assign(&gw);
                }
                if self.needs(*x) {
                    let mut gx = Tensor::zeros(tx.shape());
                    for r in 0..gout.rows() {
                        let dst = gx.row_mut(r);
                        for (o, &s) in gout.row(r).iter().enumerate() {
                            for (d, &wv) in dst.iter_mut().zip(&tw.data()[o * n_in..(o + 1) * n_in]) {
                                *d = *d + s * wv;
                            }
                        }
                    }
                    self.buf(grads, *x).expect("needs grad").add_assign(&gx);
                }
            }
            Op::MatMul(a, b) => {
                // C = A B: dA = dC B^T, dB = A^T dC
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let mut ga = Tensor::zeros(ta.shape());
                    for r in 0..gout.rows() {
                        kernels::dot_rows(gout.row(r), tb, ga.row_mut(r));
                    }
                    self.buf(grads, *a).expect("needs grad").add_assign(&ga);
                }
                if self.needs(*b) {
                    let mut gb = Tensor::zeros(tb.shape());
                    for r in 0..gout.rows() {
                        for (i, &av) in ta.row(r).iter().enumerate() {
                            for (d, &s) in gb.row_mut(i).iter_mut().zip(gout.row(r)) {
                                *d = *d + av * s;
                            }
                        }
                    }
                    self.buf(grads, *b).expect("needs grad").add_assign(&gb);
                }
            }
            Op::MatMulT(a, b) => {
                // C = A B^T: dA = dC B, dB = dC^T A
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let mut ga = Tensor::zeros(ta.shape());
                    for r in 0..gout.rows() {
                        kernels::weighted_sum_row(gout.row(r), tb, ga.row_mut(r));
                    }
                    self.buf(grads, *a).expect("needs grad").add_assign(&ga);
                }
                if self.needs(*b) {
                    let mut gb = Tensor::zeros(tb.shape());
                    for r in 0..gout.rows() {
                        for (i, &s) in gout.row(r).iter().enumerate() {
                            for (d, &av) in gb.row_mut(i).iter_mut().zip(ta.row(r)) {
                                *d = *d + s * av;
                            }
                        }
                    }
                    self.buf(grads, *b).expect("needs grad").add_assign(&gb);
                }
            }
            Op::Softmax(x) => {
                let y = self.value(me);
                if let Some(buf) = self.buf(grads, *x) {
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), gout.row(r));
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for ((d, &yv), &gv) in buf.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *d = *d + yv * (gv - dot);
                        }
                    }
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let cols = self.value(p).cols();
                    if let Some(buf) = self.buf(grads, p) {
                        for r in 0..gout.rows() {
                            for (d, &s) in buf.row_mut(r).iter_mut().zip(&gout.row(r)[off..off + cols]) {
                                *d = *d + s;
                            }
                        }
                    }
                    off += cols;
                }
            }
            Op::Tanh(x) | Op::Sigmoid(x) => {
                let is_tanh = matches!(node.op, Op::Tanh(_));
                let y = self.value(me);
                if let Some(buf) = self.buf(grads, *x) {
                    for ((d, &s), &yv) in buf.data_mut().iter_mut().zip(g).zip(y.data()) {
                        let local = if is_tanh { T::one() - yv * yv } else { yv * (T::one() - yv) };
                        *d = *d + s * local;
                    }
                }
            }
            Op::GateMix { h, c, o, g: gate } => {
                let (tc, to, tg) = (self.value(*c), self.value(*o), self.value(*gate));
                if let Some(buf) = self.buf(grads, *h) {
                    buf.add_assign(gout);
                }
                if let Some(buf) = self.buf(grads, *c) {
                    for r in 0..gout.rows() {
                        let gv = tg.row(r)[0];
                        for (d, &s) in buf.row_mut(r).iter_mut().zip(gout.row(r)) {
                            *d = *d + gv * s;
                        }
                    }
                }
                if let Some(buf) = self.buf(grads, *o) {
                    for r in 0..gout.rows() {
                        let rest = T::one() - tg.row(r)[0];
                        for (d, &s) in buf.row_mut(r).iter_mut().zip(gout.row(r)) {
                            *d = *d + rest * s;
                        }
                    }
                }
                if let Some(buf) = self.buf(grads, *gate) {
                    for r in 0..gout.rows() {
                        let mut acc = T::zero();
                        for ((&s, &cv), &ov) in gout.row(r).iter().zip(tc.row(r)).zip(to.row(r)) {
                            acc = acc + s * (cv - ov);
                        }
                        buf.row_mut(r)[0] = buf.row_mut(r)[0] + acc;
                    }
                }
            }
            Op::CrossEntropy { logits, targets } => {
                let tl = self.value(*logits);
                let scale = g[0];
                if let Some(buf) = self.buf(grads, *logits) {
                    let mut p = vec![T::zero(); tl.cols()];
                    for (r, &t) in targets.iter().enumerate() {
                        kernels::softmax_row(tl.row(r), &mut p);
                        p[t] = p[t] - T::one();
                        for (d, &pv) in buf.row_mut(r).iter_mut().zip(&p) {
                            *d = *d + scale * pv;
                        }
                    }
                }
            }
            Op::SumAll(x) => {
                let s = g[0];
                if let Some(buf) = self.buf(grads, *x) {
                    for d in buf.data_mut() {
                        *d = *d + s;
                    }
                }
            }
        }
    }
}
