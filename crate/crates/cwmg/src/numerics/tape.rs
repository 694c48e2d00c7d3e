//! Tape-based reverse-mode differentiation.
//!
//! Every primitive records its operands and result on the tape in execution
//! order; the backward pass walks the records in exact reverse order and
//! accumulates vector-Jacobian products. Arrays are immutable once recorded.

use super::array::{
    elu_plus_one, elu_plus_one_grad, gelu, gelu_grad, log_sum_exp, matmul, matmul_nt, matmul_tn,
    softmax_slice, Array, Real,
};
use crate::error::{Error, Result};

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ValueId(usize);

impl ValueId {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<F: Real> {
    Leaf,
    MatMul { a: ValueId, b: ValueId },
    Add { a: ValueId, b: ValueId },
    AddRowVec { a: ValueId, bias: ValueId },
    WeightedSum { terms: Vec<(ValueId, F)> },
    Scale { a: ValueId, c: F },
    Dot { a: ValueId, b: ValueId },
    SumAll { a: ValueId },
    EluPlusOne { a: ValueId },
    Gelu { a: ValueId },
    Softmax { a: ValueId },
    LayerNorm { x: ValueId, gain: ValueId, bias: ValueId, eps: F },
    CausalLinearAttention { q: ValueId, k: ValueId, v: ValueId, eps: F },
    ConcatCols { parts: Vec<ValueId> },
    SliceCols { a: ValueId, start: usize, len: usize },
    SliceRows { a: ValueId, start: usize, len: usize },
    GatherRows { table: ValueId, indices: Vec<usize> },
    CrossEntropySum { logits: ValueId, targets: Vec<Option<usize>> },
}

/// Gradients produced by [`Tape::backward`]. Arrays never touched by the
/// loss get a zero gradient of their own shape.
pub struct Gradients<F: Real> {
    grads: Vec<Option<Array<F>>>,
    shapes: Vec<Vec<usize>>,
}

impl<F: Real> Gradients<F> {
    /// Gradient of the loss with respect to `id` (zeros if untouched).
    pub fn grad(&self, id: ValueId) -> Array<F> {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Array::zeros(self.shapes[id.0].clone()),
        }
    }

    pub fn grad_ref(&self, id: ValueId) -> Option<&Array<F>> {
        self.grads[id.0].as_ref()
    }
}

/// Records primitive operations and replays them in reverse for gradients.
pub struct Tape<F: Real> {
    values: Vec<Array<F>>,
    ops: Vec<Op<F>>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape { values: Vec::new(), ops: Vec::new() }
    }

    fn push(&mut self, value: Array<F>, op: Op<F>) -> ValueId {
        let id = ValueId(self.values.len());
        self.values.push(value);
        self.ops.push(op);
        id
    }

    /// Register an input array (parameter or data) on the tape.
    pub fn leaf(&mut self, value: Array<F>) -> ValueId {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, id: ValueId) -> &Array<F> {
        &self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let out = matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul { a, b }))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::dim(format!(
                "add: shapes differ, {:?} vs {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let out = Array::new(va.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Add { a, b }))
    }

    /// `a[m×n] + bias[n]` broadcast over rows.
    pub fn add_row_vec(&mut self, a: ValueId, bias: ValueId) -> Result<ValueId> {
        let (va, vb) = (self.value(a), self.value(bias));
        if va.cols() != vb.numel() {
            return Err(Error::dim(format!(
                "add_row_vec: {:?} rows cannot take bias of {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let n = va.cols();
        let mut data = va.data().to_vec();
        for (i, v) in data.iter_mut().enumerate() {
            *v += vb.data()[i % n];
        }
        let out = Array::new(va.shape().to_vec(), data)?;
        Ok(self.push(out, Op::AddRowVec { a, bias }))
    }

    /// `Σ cᵢ·xᵢ` over same-shaped arrays.
    pub fn weighted_sum(&mut self, terms: Vec<(ValueId, F)>) -> Result<ValueId> {
        if terms.is_empty() {
            return Err(Error::param("weighted_sum: no terms".to_string()));
        }
        let shape = self.value(terms[0].0).shape().to_vec();
        let mut data = vec![F::ZERO; self.value(terms[0].0).numel()];
        for &(id, c) in &terms {
            let v = self.value(id);
            if v.shape() != shape.as_slice() {
                return Err(Error::dim(format!(
                    "weighted_sum: shapes differ, {:?} vs {:?}",
                    shape,
                    v.shape()
                )));
            }
            for (d, &x) in data.iter_mut().zip(v.data()) {
                *d += c * x;
            }
        }
        let out = Array::new(shape, data)?;
        Ok(self.push(out, Op::WeightedSum { terms }))
    }

    pub fn scale(&mut self, a: ValueId, c: F) -> ValueId {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale { a, c })
    }

    /// Dot product of equal-length vectors, producing a scalar.
    pub fn dot(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.numel() != vb.numel() {
            return Err(Error::dim(format!(
                "dot: lengths differ, {:?} vs {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let mut acc = F::ZERO;
        for (&x, &y) in va.data().iter().zip(vb.data()) {
            acc += x * y;
        }
        Ok(self.push(Array::scalar(acc), Op::Dot { a, b }))
    }

    pub fn sum_all(&mut self, a: ValueId) -> ValueId {
        let mut acc = F::ZERO;
        for &x in self.value(a).data() {
            acc += x;
        }
        self.push(Array::scalar(acc), Op::SumAll { a })
    }

    pub fn elu_plus_one(&mut self, a: ValueId) -> ValueId {
        let out = self.value(a).map(elu_plus_one);
        self.push(out, Op::EluPlusOne { a })
    }

    pub fn gelu(&mut self, a: ValueId) -> ValueId {
        let out = self.value(a).map(gelu);
        self.push(out, Op::Gelu { a })
    }

    /// Row-wise stable softmax.
    pub fn softmax(&mut self, a: ValueId) -> Result<ValueId> {
        let va = self.value(a);
        if va.numel() == 0 {
            return Err(Error::dim("softmax: empty input".to_string()));
        }
        let mut out = va.clone();
        let cols = out.cols();
        let rows = out.rows();
        for r in 0..rows {
            softmax_slice(&mut out.data_mut()[r * cols..(r + 1) * cols]);
        }
        Ok(self.push(out, Op::Softmax { a }))
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: ValueId, gain: ValueId, bias: ValueId, eps: F) -> Result<ValueId> {
        let (vx, vg, vb) = (self.value(x), self.value(gain), self.value(bias));
        let n = vx.cols();
        if vg.numel() != n || vb.numel() != n {
            return Err(Error::dim(format!(
                "layer_norm: feature dim {} vs gain {:?} / bias {:?}",
                n,
                vg.shape(),
                vb.shape()
            )));
        }
        let rows = vx.rows();
        let mut data = vec![F::ZERO; vx.numel()];
        for r in 0..rows {
            let row = vx.row(r);
            let (mean, inv_std) = row_moments(row, eps);
            for j in 0..n {
                let xhat = (row[j] - mean) * inv_std;
                data[r * n + j] = vg.data()[j] * xhat + vb.data()[j];
            }
        }
        let out = Array::new(vx.shape().to_vec(), data)?;
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, eps }))
    }

    /// Causal linear attention over one head.
    ///
    /// `q` and `k` are the already feature-mapped queries/keys (T×dk), `v` is
    /// T×dv. Row t of the output is `qₜᵀSₜ / (qₜᵀzₜ + eps)` where `Sₜ` and
    /// `zₜ` are prefix sums of `kᵢvᵢᵀ` and `kᵢ` over i ≤ t.
    pub fn causal_linear_attention(
        &mut self,
        q: ValueId,
        k: ValueId,
        v: ValueId,
        eps: F,
    ) -> Result<ValueId> {
        let (vq, vk, vv) = (self.value(q), self.value(k), self.value(v));
        let t_len = vq.rows();
        if vk.rows() != t_len || vv.rows() != t_len {
            return Err(Error::dim(format!(
                "causal_linear_attention: sequence lengths differ, q {:?}, k {:?}, v {:?}",
                vq.shape(),
                vk.shape(),
                vv.shape()
            )));
        }
        if vq.cols() != vk.cols() {
            return Err(Error::dim(format!(
                "causal_linear_attention: feature dims differ, q {:?} vs k {:?}",
                vq.shape(),
                vk.shape()
            )));
        }
        let dk = vq.cols();
        let dv = vv.cols();
        let mut state = vec![F::ZERO; dk * dv];
        let mut zsum = vec![F::ZERO; dk];
        let mut data = vec![F::ZERO; t_len * dv];
        for t in 0..t_len {
            let kt = vk.row(t);
            let vt = vv.row(t);
            let qt = vq.row(t);
            for i in 0..dk {
                let srow = &mut state[i * dv..(i + 1) * dv];
                let ki = kt[i];
                for j in 0..dv {
                    srow[j] += ki * vt[j];
                }
                zsum[i] += ki;
            }
            let mut den = eps;
            for i in 0..dk {
                den += qt[i] * zsum[i];
            }
            let orow = &mut data[t * dv..(t + 1) * dv];
            for i in 0..dk {
                let qi = qt[i];
                let srow = &state[i * dv..(i + 1) * dv];
                for j in 0..dv {
                    orow[j] += qi * srow[j];
                }
            }
            for o in orow.iter_mut() {
                *o = *o / den;
            }
        }
        let out = Array::new(vec![t_len, dv], data)?;
        Ok(self.push(out, Op::CausalLinearAttention { q, k, v, eps }))
    }

    /// Concatenate along the feature (column) axis.
    pub fn concat_cols(&mut self, parts: &[ValueId]) -> Result<ValueId> {
        if parts.is_empty() {
            return Err(Error::param("concat_cols: no parts".to_string()));
        }
        let rows = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(Error::dim(format!(
                    "concat_cols: row counts differ, {} vs {:?}",
                    rows,
                    v.shape()
                )));
            }
            total += v.cols();
        }
        let mut data = vec![F::ZERO; rows * total];
        let mut offset = 0;
        for &p in parts {
            let v = self.value(p);
            let c = v.cols();
            for r in 0..rows {
                data[r * total + offset..r * total + offset + c].copy_from_slice(v.row(r));
            }
            offset += c;
        }
        let out = Array::new(vec![rows, total], data)?;
        Ok(self.push(out, Op::ConcatCols { parts: parts.to_vec() }))
    }

    pub fn slice_cols(&mut self, a: ValueId, start: usize, len: usize) -> Result<ValueId> {
        let va = self.value(a);
        if start + len > va.cols() {
            return Err(Error::Index(format!(
                "slice_cols: columns {}..{} of {:?}",
                start,
                start + len,
                va.shape()
            )));
        }
        let rows = va.rows();
        let mut data = vec![F::ZERO; rows * len];
        for r in 0..rows {
            data[r * len..(r + 1) * len].copy_from_slice(&va.row(r)[start..start + len]);
        }
        let out = Array::new(vec![rows, len], data)?;
        Ok(self.push(out, Op::SliceCols { a, start, len }))
    }

    pub fn slice_rows(&mut self, a: ValueId, start: usize, len: usize) -> Result<ValueId> {
        let va = self.value(a);
        if start + len > va.rows() {
            return Err(Error::Index(format!(
                "slice_rows: rows {}..{} of {:?}",
                start,
                start + len,
                va.shape()
            )));
        }
        let cols = va.cols();
        let data = va.data()[start * cols..(start + len) * cols].to_vec();
        let out = Array::new(vec![len, cols], data)?;
        Ok(self.push(out, Op::SliceRows { a, start, len }))
    }

    /// Select rows of an embedding table; gradient scatters back by index.
    pub fn gather_rows(&mut self, table: ValueId, indices: &[usize]) -> Result<ValueId> {
        let vt = self.value(table);
        let rows = vt.rows();
        let cols = vt.cols();
        for (pos, &idx) in indices.iter().enumerate() {
            if idx >= rows {
                return Err(Error::Index(format!(
                    "gather_rows: index {idx} at position {pos} exceeds table rows {rows}"
                )));
            }
        }
        let mut data = vec![F::ZERO; indices.len() * cols];
        for (t, &idx) in indices.iter().enumerate() {
            data[t * cols..(t + 1) * cols].copy_from_slice(vt.row(idx));
        }
        let out = Array::new(vec![indices.len(), cols], data)?;
        Ok(self.push(out, Op::GatherRows { table, indices: indices.to_vec() }))
    }

    /// Sum of `−log softmax(row)[target]` over rows with a `Some` target.
    /// Targets equal to `None` contribute nothing (masked padding).
    pub fn cross_entropy_sum(
        &mut self,
        logits: ValueId,
        targets: Vec<Option<usize>>,
    ) -> Result<ValueId> {
        let vl = self.value(logits);
        let rows = vl.rows();
        let cols = vl.cols();
        if targets.len() != rows {
            return Err(Error::dim(format!(
                "cross_entropy_sum: {} targets for {} rows",
                targets.len(),
                rows
            )));
        }
        let mut acc = F::ZERO;
        for (r, tgt) in targets.iter().enumerate() {
            if let Some(t) = tgt {
                if *t >= cols {
                    return Err(Error::Index(format!(
                        "cross_entropy_sum: target {t} at row {r} exceeds {cols} classes"
                    )));
                }
                let row = vl.row(r);
                acc += log_sum_exp(row) - row[*t];
            }
        }
        Ok(self.push(Array::scalar(acc), Op::CrossEntropySum { logits, targets }))
    }

    /// Reverse pass from a scalar root; returns per-value gradients.
    pub fn backward(&self, root: ValueId) -> Result<Gradients<F>> {
        if !self.value(root).is_scalar() {
            return Err(Error::contract(format!(
                "backward: root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Array<F>>> = vec![None; self.values.len()];
        grads[root.0] = Some(Array::scalar(F::ONE));

        for idx in (0..=root.0).rev() {
            let Some(gout) = grads[idx].take() else { continue };
            self.propagate(idx, &gout, &mut grads)?;
            grads[idx] = Some(gout);
        }

        let shapes = self.values.iter().map(|v| v.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, idx: usize, gout: &Array<F>, grads: &mut [Option<Array<F>>]) -> Result<()> {
        let accumulate = |grads: &mut [Option<Array<F>>], id: ValueId, delta: Array<F>| {
            match &mut grads[id.0] {
                Some(g) => {
                    for (gd, dd) in g.data_mut().iter_mut().zip(delta.data()) {
                        *gd += *dd;
                    }
                }
                slot @ None => *slot = Some(delta),
            }
        };

        match &self.ops[idx] {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let da = matmul_nt(gout, self.value(*b))?;
                let db = matmul_tn(self.value(*a), gout)?;
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::Add { a, b } => {
                accumulate(grads, *a, gout.clone());
                accumulate(grads, *b, gout.clone());
            }
            Op::AddRowVec { a, bias } => {
                accumulate(grads, *a, gout.clone());
                let n = self.value(*bias).numel();
                let mut db = vec![F::ZERO; n];
                for (i, &g) in gout.data().iter().enumerate() {
                    db[i % n] += g;
                }
                accumulate(grads, *bias, Array::vector(db));
            }
            Op::WeightedSum { terms } => {
                for &(id, c) in terms {
                    accumulate(grads, id, gout.map(|g| g * c));
                }
            }
            Op::Scale { a, c } => {
                accumulate(grads, *a, gout.map(|g| g * *c));
            }
            Op::Dot { a, b } => {
                let g = gout.data()[0];
                accumulate(grads, *a, self.value(*b).map(|x| x * g));
                accumulate(grads, *b, self.value(*a).map(|x| x * g));
            }
            Op::SumAll { a } => {
                let g = gout.data()[0];
                let va = self.value(*a);
                accumulate(grads, *a, Array::new(va.shape().to_vec(), vec![g; va.numel()])?);
            }
            Op::EluPlusOne { a } => {
                let va = self.value(*a);
                let data = va
                    .data()
                    .iter()
                    .zip(gout.data())
                    .map(|(&x, &g)| g * elu_plus_one_grad(x))
                    .collect();
                accumulate(grads, *a, Array::new(va.shape().to_vec(), data)?);
            }
            Op::Gelu { a } => {
                let va = self.value(*a);
                let data = va
                    .data()
                    .iter()
                    .zip(gout.data())
                    .map(|(&x, &g)| g * gelu_grad(x))
                    .collect();
                accumulate(grads, *a, Array::new(va.shape().to_vec(), data)?);
            }
            Op::Softmax { a } => {
                let p = &self.values[idx];
                let rows = p.rows();
                let cols = p.cols();
                let mut dx = vec![F::ZERO; p.numel()];
                for r in 0..rows {
                    let prow = p.row(r);
                    let grow = &gout.data()[r * cols..(r + 1) * cols];
                    let mut gp = F::ZERO;
                    for j in 0..cols {
                        gp += grow[j] * prow[j];
                    }
                    for j in 0..cols {
                        dx[r * cols + j] = prow[j] * (grow[j] - gp);
                    }
                }
                accumulate(grads, *a, Array::new(p.shape().to_vec(), dx)?);
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let vx = self.value(*x);
                let vg = self.value(*gain);
                let n = vx.cols();
                let rows = vx.rows();
                let inv_n = F::ONE / F::from_f64(n as f64);
                let mut dx = vec![F::ZERO; vx.numel()];
                let mut dgain = vec![F::ZERO; n];
                let mut dbias = vec![F::ZERO; n];
                for r in 0..rows {
                    let row = vx.row(r);
                    let grow = &gout.data()[r * n..(r + 1) * n];
                    let (mean, inv_std) = row_moments(row, *eps);
                    let mut m1 = F::ZERO; // mean of gain⊙dy
                    let mut m2 = F::ZERO; // mean of gain⊙dy⊙x̂
                    for j in 0..n {
                        let xhat = (row[j] - mean) * inv_std;
                        let gd = vg.data()[j] * grow[j];
                        m1 += gd;
                        m2 += gd * xhat;
                        dgain[j] += grow[j] * xhat;
                        dbias[j] += grow[j];
                    }
                    m1 *= inv_n;
                    m2 *= inv_n;
                    for j in 0..n {
                        let xhat = (row[j] - mean) * inv_std;
                        let gd = vg.data()[j] * grow[j];
                        dx[r * n + j] = (gd - m1 - xhat * m2) * inv_std;
                    }
                }
                accumulate(grads, *x, Array::new(vx.shape().to_vec(), dx)?);
                accumulate(grads, *gain, Array::vector(dgain));
                accumulate(grads, *bias, Array::vector(dbias));
            }
            Op::CausalLinearAttention { q, k, v, eps } => {
                let (dq, dkk, dvv) =
                    causal_linear_attention_backward(self.value(*q), self.value(*k), self.value(*v), gout, *eps)?;
                accumulate(grads, *q, dq);
                accumulate(grads, *k, dkk);
                accumulate(grads, *v, dvv);
            }
            Op::ConcatCols { parts } => {
                let rows = gout.rows();
                let total = gout.cols();
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    let mut data = vec![F::ZERO; rows * c];
                    for r in 0..rows {
                        data[r * c..(r + 1) * c]
                            .copy_from_slice(&gout.data()[r * total + offset..r * total + offset + c]);
                    }
                    accumulate(grads, p, Array::new(vec![rows, c], data)?);
                    offset += c;
                }
            }
            Op::SliceCols { a, start, len } => {
                let va = self.value(*a);
                let rows = va.rows();
                let cols = va.cols();
                let mut data = vec![F::ZERO; va.numel()];
                for r in 0..rows {
                    data[r * cols + start..r * cols + start + len]
                        .copy_from_slice(&gout.data()[r * len..(r + 1) * len]);
                }
                accumulate(grads, *a, Array::new(va.shape().to_vec(), data)?);
            }
            Op::SliceRows { a, start, len } => {
                let va = self.value(*a);
                let cols = va.cols();
                let mut data = vec![F::ZERO; va.numel()];
                data[start * cols..(start + len) * cols].copy_from_slice(gout.data());
                accumulate(grads, *a, Array::new(va.shape().to_vec(), data)?);
            }
            Op::GatherRows { table, indices } => {
                let vt = self.value(*table);
                let cols = vt.cols();
                let mut data = vec![F::ZERO; vt.numel()];
                for (t, &idx) in indices.iter().enumerate() {
                    let grow = &gout.data()[t * cols..(t + 1) * cols];
                    let drow = &mut data[idx * cols..(idx + 1) * cols];
                    for j in 0..cols {
                        drow[j] += grow[j];
                    }
                }
                accumulate(grads, *table, Array::new(vt.shape().to_vec(), data)?);
            }
            Op::CrossEntropySum { logits, targets } => {
                let g = gout.data()[0];
                let vl = self.value(*logits);
                let cols = vl.cols();
                let mut data = vec![F::ZERO; vl.numel()];
                for (r, tgt) in targets.iter().enumerate() {
                    if let Some(t) = tgt {
                        let mut p = vl.row(r).to_vec();
                        softmax_slice(&mut p);
                        p[*t] -= F::ONE;
                        for j in 0..cols {
                            data[r * cols + j] = g * p[j];
                        }
                    }
                }
                accumulate(grads, *logits, Array::new(vl.shape().to_vec(), data)?);
            }
        }
        Ok(())
    }
}

fn row_moments<F: Real>(row: &[F], eps: F) -> (F, F) {
    let n = F::from_f64(row.len() as f64);
    let mut mean = F::ZERO;
    for &v in row {
        mean += v;
    }
    mean = mean / n;
    let mut var = F::ZERO;
    for &v in row {
        let d = v - mean;
        var += d * d;
    }
    var = var / n;
    (mean, F::ONE / (var + eps).sqrt())
}

/// Backward pass for causal linear attention. Recomputes the forward prefix
/// state in a second sweep instead of storing per-step matrices.
fn causal_linear_attention_backward<F: Real>(
    q: &Array<F>,
    k: &Array<F>,
    v: &Array<F>,
    gout: &Array<F>,
    eps: F,
) -> Result<(Array<F>, Array<F>, Array<F>)> {
    let t_len = q.rows();
    let dk = q.cols();
    let dv = v.cols();

    let mut dq = vec![F::ZERO; t_len * dk];
    let mut dk_grad = vec![F::ZERO; t_len * dk];
    let mut dv_grad = vec![F::ZERO; t_len * dv];

    // a_t = g_t / den_t, b_t = −(g_t·n_t)/den_t². Stored for the reverse sweep.
    let mut a_coef = vec![F::ZERO; t_len * dv];
    let mut b_coef = vec![F::ZERO; t_len];

    // Forward sweep: rebuild S_t, z_t; produce dq_t and the coefficients.
    let mut state = vec![F::ZERO; dk * dv];
    let mut zsum = vec![F::ZERO; dk];
    for t in 0..t_len {
        let kt = k.row(t);
        let vt = v.row(t);
        let qt = q.row(t);
        for i in 0..dk {
            let srow = &mut state[i * dv..(i + 1) * dv];
            let ki = kt[i];
            for j in 0..dv {
                srow[j] += ki * vt[j];
            }
            zsum[i] += ki;
        }
        let mut den = eps;
        for i in 0..dk {
            den += qt[i] * zsum[i];
        }
        let gt = gout.row(t);
        let arow = &mut a_coef[t * dv..(t + 1) * dv];
        for j in 0..dv {
            arow[j] = gt[j] / den;
        }
        // numerator n_t = S_tᵀ q_t
        let mut gn = F::ZERO; // g_t · n_t
        for i in 0..dk {
            let srow = &state[i * dv..(i + 1) * dv];
            let qi = qt[i];
            let mut sa = F::ZERO; // (S_t a_t)_i
            for j in 0..dv {
                sa += srow[j] * arow[j];
                gn += qi * srow[j] * gt[j];
            }
            dq[t * dk + i] = sa;
        }
        let bt = -(gn / den) / den;
        b_coef[t] = bt;
        for i in 0..dk {
            dq[t * dk + i] += bt * zsum[i];
        }
    }

    // Reverse sweep: R_t = Σ_{s≥t} q_s a_sᵀ and u_t = Σ_{s≥t} b_s q_s give
    // dk_t = R_t v_t + u_t and dv_t = R_tᵀ k_t.
    let mut rmat = vec![F::ZERO; dk * dv];
    let mut uvec = vec![F::ZERO; dk];
    for t in (0..t_len).rev() {
        let qt = q.row(t);
        let arow = &a_coef[t * dv..(t + 1) * dv];
        for i in 0..dk {
            let rrow = &mut rmat[i * dv..(i + 1) * dv];
            let qi = qt[i];
            for j in 0..dv {
                rrow[j] += qi * arow[j];
            }
            uvec[i] += b_coef[t] * qi;
        }
        let kt = k.row(t);
        let vt = v.row(t);
        for i in 0..dk {
            let rrow = &rmat[i * dv..(i + 1) * dv];
            let mut rv = F::ZERO;
            for j in 0..dv {
                rv += rrow[j] * vt[j];
                dv_grad[t * dv + j] += rrow[j] * kt[i];
            }
            dk_grad[t * dk + i] = rv + uvec[i];
        }
    }

    Ok((
        Array::new(vec![t_len, dk], dq)?,
        Array::new(vec![t_len, dk], dk_grad)?,
        Array::new(vec![t_len, dv], dv_grad)?,
    ))
}

/// Standalone cross-entropy of a single logit row against a class index.
pub fn cross_entropy<F: Real>(logits: &Array<F>, target: usize) -> Result<F> {
    if target >= logits.numel() {
        return Err(Error::Index(format!(
            "cross_entropy: target {target} exceeds {} classes",
            logits.numel()
        )));
    }
    let row = logits.data();
    Ok(log_sum_exp(row) - row[target])
}
