use crate::error::{Error, Result};
use crate::numcore::tensor::{softmax_in_place, Tensor2};
use crate::numcore::{gelu, gelu_grad};

pub type NodeId = usize;

pub const LN_EPS: f64 = 1e-5;

/// Operation set of the toy model. Gradients exist for exactly these ops;
/// there is no generic fallback.
#[derive(Clone, Debug)]
enum Op {
    Leaf { trainable: bool },
    MatmulNN { a: NodeId, b: NodeId },
    MatmulNT { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Scale { a: NodeId, factor: f64 },
    CausalSoftmax { a: NodeId },
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId },
    Gelu { a: NodeId },
    GatherRows { table: NodeId, ids: Vec<usize> },
    ConcatRows { parts: Vec<NodeId> },
    SliceCols { a: NodeId, start: usize, len: usize },
    ConcatCols { parts: Vec<NodeId> },
    RowMask { a: NodeId, keep: Vec<bool> },
    CrossEntropy { logits: NodeId, targets: Vec<(usize, usize)> },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor2,
    requires_grad: bool,
}

/// Wengert list: eager evaluation, reverse sweep on demand.
///
/// Frozen inputs never receive gradient buffers; the reverse sweep skips any
/// node whose `requires_grad` is false, so a forward pass over the frozen
/// backbone costs nothing extra at backward time beyond the trainable path.
#[derive(Debug)]
pub struct GradTape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor2>>,
    swept: bool,
}

impl Default for GradTape {
    fn default() -> Self {
        Self::new()
    }
}

impl GradTape {
    pub fn new() -> Self {
        GradTape { nodes: Vec::new(), grads: Vec::new(), swept: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable input; `grad` may be called for it after `backward`.
    pub fn leaf(&mut self, value: Tensor2) -> NodeId {
        self.push(Op::Leaf { trainable: true }, value, true)
    }

    /// Frozen input: participates in the forward pass, excluded from the
    /// reverse sweep. Backbone weights enter the tape through here.
    pub fn frozen(&mut self, value: Tensor2) -> NodeId {
        self.push(Op::Leaf { trainable: false }, value, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor2 {
        &self.nodes[id].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id].requires_grad
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.nodes[a].value.matmul(&self.nodes[b].value)?;
        Ok(self.push_op(Op::MatmulNN { a, b }, v, &[a, b]))
    }

    /// `a * b^T` with `b` stored row-major as (n x k).
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.nodes[a].value.matmul_nt(&self.nodes[b].value)?;
        Ok(self.push_op(Op::MatmulNT { a, b }, v, &[a, b]))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.nodes[a].value.add(&self.nodes[b].value)?;
        Ok(self.push_op(Op::Add { a, b }, v, &[a, b]))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        if !factor.is_finite() {
            return Err(Error::Tape(format!("scale by non-finite factor {factor}")));
        }
        let v = self.nodes[a].value.scale(factor);
        Ok(self.push_op(Op::Scale { a, factor }, v, &[a]))
    }

    /// Row-wise softmax over positions `0..=i` for row `i`; strictly upper
    /// entries are exactly zero. Input must be square.
    pub fn causal_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let x = &self.nodes[a].value;
        if x.rows() != x.cols() {
            return Err(Error::Shape(format!(
                "causal softmax needs square input, got {}x{}",
                x.rows(),
                x.cols()
            )));
        }
        let v = causal_softmax_value(x);
        Ok(self.push_op(Op::CausalSoftmax { a }, v, &[a]))
    }

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        let (xs, gs, bs) = (
            self.nodes[x].value.shape(),
            self.nodes[gamma].value.shape(),
            self.nodes[beta].value.shape(),
        );
        if gs != (1, xs.1) || bs != (1, xs.1) {
            return Err(Error::Shape(format!(
                "layer norm over {}x{} with gamma {:?}, beta {:?}",
                xs.0, xs.1, gs, bs
            )));
        }
        let v = layer_norm_value(
            &self.nodes[x].value,
            &self.nodes[gamma].value,
            &self.nodes[beta].value,
        );
        Ok(self.push_op(Op::LayerNorm { x, gamma, beta }, v, &[x, gamma, beta]))
    }

    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.nodes[a].value.map(gelu);
        Ok(self.push_op(Op::Gelu { a }, v, &[a]))
    }

    pub fn gather_rows(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let t = &self.nodes[table].value;
        let mut rows = Vec::with_capacity(ids.len());
        for &id in ids {
            if id >= t.rows() {
                return Err(Error::Tape(format!(
                    "gather row {id} out of table with {} rows",
                    t.rows()
                )));
            }
            rows.push(t.row(id).to_vec());
        }
        let mut v = Tensor2::zeros(ids.len(), t.cols());
        for (i, r) in rows.iter().enumerate() {
            v.row_mut(i).copy_from_slice(r);
        }
        Ok(self.push_op(Op::GatherRows { table, ids: ids.to_vec() }, v, &[table]))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Tape("concat_rows of zero parts".into()));
        }
        let cols = self.nodes[parts[0]].value.cols();
        let mut rows = 0;
        for &p in parts {
            let v = &self.nodes[p].value;
            if v.cols() != cols {
                return Err(Error::Shape(format!(
                    "concat_rows column mismatch: {} vs {cols}",
                    v.cols()
                )));
            }
            rows += v.rows();
        }
        let mut out = Tensor2::zeros(rows, cols);
        let mut at = 0;
        for &p in parts {
            let v = &self.nodes[p].value;
            for r in 0..v.rows() {
                out.row_mut(at + r).copy_from_slice(v.row(r));
            }
            at += v.rows();
        }
        Ok(self.push_op(Op::ConcatRows { parts: parts.to_vec() }, out, parts))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let x = &self.nodes[a].value;
        if start + len > x.cols() {
            return Err(Error::Shape(format!(
                "slice_cols {start}..{} out of {} cols",
                start + len,
                x.cols()
            )));
        }
        let mut out = Tensor2::zeros(x.rows(), len);
        for r in 0..x.rows() {
            out.row_mut(r).copy_from_slice(&x.row(r)[start..start + len]);
        }
        Ok(self.push_op(Op::SliceCols { a, start, len }, out, &[a]))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Tape("concat_cols of zero parts".into()));
        }
        let rows = self.nodes[parts[0]].value.rows();
        let mut cols = 0;
        for &p in parts {
            let v = &self.nodes[p].value;
            if v.rows() != rows {
                return Err(Error::Shape(format!(
                    "concat_cols row mismatch: {} vs {rows}",
                    v.rows()
                )));
            }
            cols += v.cols();
        }
        let mut out = Tensor2::zeros(rows, cols);
        for r in 0..rows {
            let mut at = 0;
            for &p in parts {
                let v = &self.nodes[p].value;
                out.row_mut(r)[at..at + v.cols()].copy_from_slice(v.row(r));
                at += v.cols();
            }
        }
        Ok(self.push_op(Op::ConcatCols { parts: parts.to_vec() }, out, parts))
    }

    /// Keeps rows where `keep` is true, zeroes the rest.
    pub fn row_mask(&mut self, a: NodeId, keep: &[bool]) -> Result<NodeId> {
        let x = &self.nodes[a].value;
        if keep.len() != x.rows() {
            return Err(Error::Shape(format!(
                "row_mask over {} rows with {} flags",
                x.rows(),
                keep.len()
            )));
        }
        let mut out = x.clone();
        for (r, &k) in keep.iter().enumerate() {
            if !k {
                out.row_mut(r).fill(0.0);
            }
        }
        Ok(self.push_op(Op::RowMask { a, keep: keep.to_vec() }, out, &[a]))
    }

    /// Mean negative log-likelihood over `(row, target)` pairs against
    /// row-wise softmax of `logits`. Produces a 1x1 node.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[(usize, usize)]) -> Result<NodeId> {
        if targets.is_empty() {
            return Err(Error::Tape("cross entropy with no targets".into()));
        }
        let x = &self.nodes[logits].value;
        for &(r, t) in targets {
            if r >= x.rows() || t >= x.cols() {
                return Err(Error::Tape(format!(
                    "cross entropy target ({r},{t}) out of {}x{} logits",
                    x.rows(),
                    x.cols()
                )));
            }
        }
        let v = cross_entropy_value(x, targets);
        Ok(self.push_op(
            Op::CrossEntropy { logits, targets: targets.to_vec() },
            v,
            &[logits],
        ))
    }

    /// Reverse sweep from a 1x1 loss node. Only nodes on a path from a
    /// trainable leaf to the loss are visited.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if loss >= self.nodes.len() {
            return Err(Error::Tape(format!("loss node {loss} not on tape")));
        }
        if self.nodes[loss].value.shape() != (1, 1) {
            return Err(Error::Tape(format!(
                "loss must be 1x1, got {}x{}",
                self.nodes[loss].value.rows(),
                self.nodes[loss].value.cols()
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.swept = true;
        if !self.nodes[loss].requires_grad {
            // Loss does not depend on any trainable leaf; all grads are zero.
            return Ok(());
        }
        self.grads[loss] = Some(Tensor2::from_vec(1, 1, vec![1.0]).unwrap());
        for id in (0..=loss).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let g = match &self.grads[id] {
                Some(g) => g.clone(),
                None => continue,
            };
            self.propagate(id, &g)?;
        }
        Ok(())
    }

    /// Gradient for a trainable leaf after `backward`. Disconnected leaves
    /// yield zeros; frozen or non-leaf ids are contract errors.
    pub fn grad(&self, leaf: NodeId) -> Result<Tensor2> {
        if leaf >= self.nodes.len() {
            return Err(Error::Tape(format!("leaf {leaf} not on tape")));
        }
        match self.nodes[leaf].op {
            Op::Leaf { trainable: true } => {}
            Op::Leaf { trainable: false } => {
                return Err(Error::Tape(format!("node {leaf} is frozen, it has no gradient")))
            }
            _ => return Err(Error::Tape(format!("node {leaf} is not a leaf"))),
        }
        if !self.swept {
            return Err(Error::Tape("backward has not run".into()));
        }
        Ok(match &self.grads[leaf] {
            Some(g) => g.clone(),
            None => {
                let v = &self.nodes[leaf].value;
                Tensor2::zeros(v.rows(), v.cols())
            }
        })
    }

    /// Re-executes every non-leaf node and bit-compares with stored values.
    pub fn replay_matches(&self) -> Result<bool> {
        for (id, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf { .. }) {
                continue;
            }
            let again = self.eval(&node.op)?;
            if !again.bit_eq(&node.value) {
                return Err(Error::Tape(format!("replay diverged at node {id}")));
            }
        }
        Ok(true)
    }

    fn push(&mut self, op: Op, value: Tensor2, requires: bool) -> NodeId {
        debug_assert!(value.is_finite(), "non-finite tensor entering tape");
        self.nodes.push(Node { op, value, requires_grad: requires });
        self.nodes.len() - 1
    }

    fn push_op(&mut self, op: Op, value: Tensor2, inputs: &[NodeId]) -> NodeId {
        let requires = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.push(op, value, requires)
    }

    fn eval(&self, op: &Op) -> Result<Tensor2> {
        Ok(match op {
            Op::Leaf { .. } => unreachable!("leaves are never re-evaluated"),
            Op::MatmulNN { a, b } => self.nodes[*a].value.matmul(&self.nodes[*b].value)?,
            Op::MatmulNT { a, b } => self.nodes[*a].value.matmul_nt(&self.nodes[*b].value)?,
            Op::Add { a, b } => self.nodes[*a].value.add(&self.nodes[*b].value)?,
            Op::Scale { a, factor } => self.nodes[*a].value.scale(*factor),
            Op::CausalSoftmax { a } => causal_softmax_value(&self.nodes[*a].value),
            Op::LayerNorm { x, gamma, beta } => layer_norm_value(
                &self.nodes[*x].value,
                &self.nodes[*gamma].value,
                &self.nodes[*beta].value,
            ),
            Op::Gelu { a } => self.nodes[*a].value.map(gelu),
            Op::GatherRows { table, ids } => {
                let t = &self.nodes[*table].value;
                let mut v = Tensor2::zeros(ids.len(), t.cols());
                for (i, &id) in ids.iter().enumerate() {
                    v.row_mut(i).copy_from_slice(t.row(id));
                }
                v
            }
            Op::ConcatRows { parts } => {
                let cols = self.nodes[parts[0]].value.cols();
                let rows = parts.iter().map(|&p| self.nodes[p].value.rows()).sum();
                let mut out = Tensor2::zeros(rows, cols);
                let mut at = 0;
                for &p in parts {
                    let v = &self.nodes[p].value;
                    for r in 0..v.rows() {
                        out.row_mut(at + r).copy_from_slice(v.row(r));
                    }
                    at += v.rows();
                }
                out
            }
            Op::SliceCols { a, start, len } => {
                let x = &self.nodes[*a].value;
                let mut out = Tensor2::zeros(x.rows(), *len);
                for r in 0..x.rows() {
                    out.row_mut(r).copy_from_slice(&x.row(r)[*start..*start + *len]);
                }
                out
            }
            Op::ConcatCols { parts } => {
                let rows = self.nodes[parts[0]].value.rows();
                let cols = parts.iter().map(|&p| self.nodes[p].value.cols()).sum();
                let mut out = Tensor2::zeros(rows, cols);
                for r in 0..rows {
                    let mut at = 0;
                    for &p in parts {
                        let v = &self.nodes[p].value;
                        out.row_mut(r)[at..at + v.cols()].copy_from_slice(v.row(r));
                        at += v.cols();
                    }
                }
                out
            }
            Op::RowMask { a, keep } => {
                let mut out = self.nodes[*a].value.clone();
                for (r, &k) in keep.iter().enumerate() {
                    if !k {
                        out.row_mut(r).fill(0.0);
                    }
                }
                out
            }
            Op::CrossEntropy { logits, targets } => {
                cross_entropy_value(&self.nodes[*logits].value, targets)
            }
        })
    }

    fn propagate(&mut self, id: NodeId, g: &Tensor2) -> Result<()> {
        // Values are read before mutating the grad buffers; ops only refer to
        // earlier nodes so the borrows below never alias.
        match self.nodes[id].op.clone() {
            Op::Leaf { .. } => {}
            Op::MatmulNN { a, b } => {
                if self.nodes[a].requires_grad {
                    let bt = self.nodes[b].value.transposed();
                    let da = g.matmul(&bt)?;
                    self.accumulate(a, da)?;
                }
                if self.nodes[b].requires_grad {
                    let at = self.nodes[a].value.transposed();
                    let db = at.matmul(g)?;
                    self.accumulate(b, db)?;
                }
            }
            Op::MatmulNT { a, b } => {
                if self.nodes[a].requires_grad {
                    let da = g.matmul(&self.nodes[b].value)?;
                    self.accumulate(a, da)?;
                }
                if self.nodes[b].requires_grad {
                    let db = g.transposed().matmul(&self.nodes[a].value)?;
                    self.accumulate(b, db)?;
                }
            }
            Op::Add { a, b } => {
                if self.nodes[a].requires_grad {
                    self.accumulate(a, g.clone())?;
                }
                if self.nodes[b].requires_grad {
                    self.accumulate(b, g.clone())?;
                }
            }
            Op::Scale { a, factor } => {
                if self.nodes[a].requires_grad {
                    self.accumulate(a, g.scale(factor))?;
                }
            }
            Op::CausalSoftmax { a } => {
                if self.nodes[a].requires_grad {
                    let y = &self.nodes[id].value;
                    let mut dx = Tensor2::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let yr = y.row(i);
                        let gr = g.row(i);
                        let mut s = 0.0;
                        for j in 0..=i {
                            s += gr[j] * yr[j];
                        }
                        let dr = dx.row_mut(i);
                        for j in 0..=i {
                            dr[j] = yr[j] * (gr[j] - s);
                        }
                    }
                    self.accumulate(a, dx)?;
                }
            }
            Op::LayerNorm { x, gamma, beta } => {
                let xv = self.nodes[x].value.clone();
                let gv = self.nodes[gamma].value.clone();
                let d = xv.cols() as f64;
                if self.nodes[x].requires_grad {
                    let mut dx = Tensor2::zeros(xv.rows(), xv.cols());
                    for r in 0..xv.rows() {
                        let row = xv.row(r);
                        let (mu, rstd) = row_moments(row);
                        let gr = g.row(r);
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        let mut h = vec![0.0; row.len()];
                        let mut xh = vec![0.0; row.len()];
                        for j in 0..row.len() {
                            xh[j] = (row[j] - mu) * rstd;
                            h[j] = gr[j] * gv.get(0, j);
                            m1 += h[j];
                            m2 += h[j] * xh[j];
                        }
                        m1 /= d;
                        m2 /= d;
                        let dr = dx.row_mut(r);
                        for j in 0..row.len() {
                            dr[j] = (h[j] - m1 - xh[j] * m2) * rstd;
                        }
                    }
                    self.accumulate(x, dx)?;
                }
                if self.nodes[gamma].requires_grad {
                    let mut dg = Tensor2::zeros(1, xv.cols());
                    for r in 0..xv.rows() {
                        let row = xv.row(r);
                        let (mu, rstd) = row_moments(row);
                        for j in 0..row.len() {
                            let xh = (row[j] - mu) * rstd;
                            dg.row_mut(0)[j] += g.get(r, j) * xh;
                        }
                    }
                    self.accumulate(gamma, dg)?;
                }
                if self.nodes[beta].requires_grad {
                    let mut db = Tensor2::zeros(1, xv.cols());
                    for r in 0..xv.rows() {
                        for j in 0..xv.cols() {
                            db.row_mut(0)[j] += g.get(r, j);
                        }
                    }
                    self.accumulate(beta, db)?;
                }
            }
            Op::Gelu { a } => {
                if self.nodes[a].requires_grad {
                    let x = &self.nodes[a].value;
                    let mut dx = x.map(gelu_grad);
                    for (d, gg) in dx.data_mut().iter_mut().zip(g.data()) {
                        *d *= gg;
                    }
                    self.accumulate(a, dx)?;
                }
            }
            Op::GatherRows { table, ids } => {
                if self.nodes[table].requires_grad {
                    let t = &self.nodes[table].value;
                    let mut dt = Tensor2::zeros(t.rows(), t.cols());
                    for (i, &rid) in ids.iter().enumerate() {
                        let dst = dt.row_mut(rid);
                        let src = g.row(i);
                        for j in 0..src.len() {
                            dst[j] += src[j];
                        }
                    }
                    self.accumulate(table, dt)?;
                }
            }
            Op::ConcatRows { parts } => {
                let mut at = 0;
                for &p in &parts {
                    let rows = self.nodes[p].value.rows();
                    if self.nodes[p].requires_grad && rows > 0 {
                        let dp = g.slice_rows(at, rows)?;
                        self.accumulate(p, dp)?;
                    }
                    at += rows;
                }
            }
            Op::SliceCols { a, start, len } => {
                if self.nodes[a].requires_grad {
                    let x = &self.nodes[a].value;
                    let mut dx = Tensor2::zeros(x.rows(), x.cols());
                    for r in 0..x.rows() {
                        dx.row_mut(r)[start..start + len].copy_from_slice(g.row(r));
                    }
                    self.accumulate(a, dx)?;
                }
            }
            Op::ConcatCols { parts } => {
                let mut at = 0;
                for &p in &parts {
                    let cols = self.nodes[p].value.cols();
                    if self.nodes[p].requires_grad {
                        let rows = self.nodes[p].value.rows();
                        let mut dp = Tensor2::zeros(rows, cols);
                        for r in 0..rows {
                            dp.row_mut(r).copy_from_slice(&g.row(r)[at..at + cols]);
                        }
                        self.accumulate(p, dp)?;
                    }
                    at += cols;
                }
            }
            Op::RowMask { a, keep } => {
                if self.nodes[a].requires_grad {
                    let mut dx = g.clone();
                    for (r, &k) in keep.iter().enumerate() {
                        if !k {
                            dx.row_mut(r).fill(0.0);
                        }
                    }
                    self.accumulate(a, dx)?;
                }
            }
            Op::CrossEntropy { logits, targets } => {
                if self.nodes[logits].requires_grad {
                    let s = g.get(0, 0) / targets.len() as f64;
                    let x = &self.nodes[logits].value;
                    let mut dx = Tensor2::zeros(x.rows(), x.cols());
                    for &(r, t) in &targets {
                        let mut p = x.row(r).to_vec();
                        softmax_in_place(&mut p);
                        let dr = dx.row_mut(r);
                        for j in 0..p.len() {
                            dr[j] += s * (p[j] - if j == t { 1.0 } else { 0.0 });
                        }
                    }
                    self.accumulate(logits, dx)?;
                }
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, delta: Tensor2) -> Result<()> {
        match &mut self.grads[id] {
            Some(g) => g.add_assign(&delta)?,
            slot @ None => *slot = Some(delta),
        }
        Ok(())
    }
}

fn causal_softmax_value(x: &Tensor2) -> Tensor2 {
    let n = x.rows();
    let mut out = Tensor2::zeros(n, n);
    for i in 0..n {
        let src = x.row(i);
        let mut active: Vec<f64> = src[..=i].to_vec();
        softmax_in_place(&mut active);
        out.row_mut(i)[..=i].copy_from_slice(&active);
    }
    out
}

fn row_moments(row: &[f64]) -> (f64, f64) {
    let d = row.len() as f64;
    let mut mu = 0.0;
    for v in row {
        mu += v;
    }
    mu /= d;
    let mut var = 0.0;
    for v in row {
        var += (v - mu) * (v - mu);
    }
    var /= d;
    (mu, 1.0 / (var + LN_EPS).sqrt())
}

fn layer_norm_value(x: &Tensor2, gamma: &Tensor2, beta: &Tensor2) -> Tensor2 {
    let mut out = Tensor2::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let row = x.row(r);
        let (mu, rstd) = row_moments(row);
        let o = out.row_mut(r);
        for j in 0..row.len() {
            o[j] = gamma.get(0, j) * (row[j] - mu) * rstd + beta.get(0, j);
        }
    }
    out
}

fn cross_entropy_value(logits: &Tensor2, targets: &[(usize, usize)]) -> Tensor2 {
    let mut loss = 0.0;
    for &(r, t) in targets {
        let row = logits.row(r);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[t];
    }
    Tensor2::from_vec(1, 1, vec![loss / targets.len() as f64]).unwrap()
}
