//! Computation record for reverse-mode differentiation.
//!
//! Every value in a [`Graph`] is a 2-D matrix. Operations append a node that
//! remembers its inputs (and whatever forward intermediates its gradient
//! needs); [`Graph::backward`] replays the record in reverse order.

use ndarray::{s, Array2, Axis, Zip};

use super::NnError;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    AddConst(Var),
    Scale(Var, f64),
    MulConst(Var, Array2<f64>),
    Relu(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    StackRows(Vec<Var>),
    Softmax(Var),
    Conv1d { x: Var, kernel: Var, bias: Var, k: usize, columns: Array2<f64> },
    LayerNorm { x: Var, gamma: Var, beta: Var, normed: Array2<f64>, inv_std: Vec<f64> },
    MaskedMean { x: Var, mask: Vec<bool> },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Array2<f64> },
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node of the graph it came from.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// `None` when the node does not influence the differentiated scalar.
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn check(op: &'static str, ok: bool, detail: impl FnOnce() -> String) -> Result<(), NnError> {
    if ok {
        Ok(())
    } else {
        Err(NnError::ShapeMismatch { op, detail: detail() })
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Input or parameter.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        check("matmul", sa.1 == sb.0, || format!("{sa:?} x {sb:?}"))?;
        let y = self.value(a).dot(self.value(b));
        Ok(self.push(y, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        check("matmul_nt", sa.1 == sb.1, || format!("{sa:?} x {sb:?}ᵀ"))?;
        let y = self.value(a).dot(&self.value(b).t());
        Ok(self.push(y, Op::MatMulNt(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        check("add", sa == sb, || format!("{sa:?} + {sb:?}"))?;
        let y = self.value(a) + self.value(b);
        Ok(self.push(y, Op::Add(a, b)))
    }

    /// Adds a `[1, d]` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var, NnError> {
        let (sx, sr) = (self.shape(x), self.shape(row));
        check("add_row", sr.0 == 1 && sr.1 == sx.1, || format!("{sx:?} + {sr:?}"))?;
        let y = self.value(x) + self.value(row);
        Ok(self.push(y, Op::AddRow(x, row)))
    }

    /// Adds a constant (non-differentiated) matrix.
    pub fn add_const(&mut self, x: Var, c: &Array2<f64>) -> Result<Var, NnError> {
        let sx = self.shape(x);
        check("add_const", sx == c.dim(), || format!("{sx:?} + {:?}", c.dim()))?;
        let y = self.value(x) + c;
        Ok(self.push(y, Op::AddConst(x)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let y = self.value(x) * factor;
        self.push(y, Op::Scale(x, factor))
    }

    /// Elementwise product with a constant matrix (dropout and padding masks).
    pub fn mul_const(&mut self, x: Var, c: Array2<f64>) -> Result<Var, NnError> {
        let sx = self.shape(x);
        check("mul_const", sx == c.dim(), || format!("{sx:?} * {:?}", c.dim()))?;
        let y = self.value(x) * &c;
        Ok(self.push(y, Op::MulConst(x, c)))
    }

    /// Zeroes the rows whose mask entry is false.
    pub fn mask_rows(&mut self, x: Var, mask: &[bool]) -> Result<Var, NnError> {
        let (rows, cols) = self.shape(x);
        check("mask_rows", rows == mask.len(), || format!("{rows} rows, mask {}", mask.len()))?;
        let m = Array2::from_shape_fn((rows, cols), |(r, _)| if mask[r] { 1.0 } else { 0.0 });
        self.mul_const(x, m)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).mapv(|v| v.max(0.0));
        self.push(y, Op::Relu(x))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NnError> {
        let sx = self.shape(x);
        check("slice_cols", start + len <= sx.1, || format!("{start}+{len} of {sx:?}"))?;
        let y = self.value(x).slice(s![.., start..start + len]).to_owned();
        Ok(self.push(y, Op::SliceCols(x, start)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        check("concat_cols", !parts.is_empty(), || "no inputs".into())?;
        let rows = self.shape(parts[0]).0;
        check("concat_cols", parts.iter().all(|&p| self.shape(p).0 == rows), || {
            "row counts differ".into()
        })?;
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let y = ndarray::concatenate(Axis(1), &views).expect("row counts checked");
        Ok(self.push(y, Op::ConcatCols(parts.to_vec())))
    }

    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        check("stack_rows", !parts.is_empty(), || "no inputs".into())?;
        let cols = self.shape(parts[0]).1;
        check("stack_rows", parts.iter().all(|&p| self.shape(p).1 == cols), || {
            "column counts differ".into()
        })?;
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let y = ndarray::concatenate(Axis(0), &views).expect("column counts checked");
        Ok(self.push(y, Op::StackRows(parts.to_vec())))
    }

    /// Row-wise softmax. Columns with `key_mask[j] == false` get probability 0.
    pub fn softmax_rows(&mut self, x: Var, key_mask: Option<&[bool]>) -> Result<Var, NnError> {
        let (rows, cols) = self.shape(x);
        if let Some(m) = key_mask {
            check("softmax_rows", m.len() == cols, || format!("{cols} columns, mask {}", m.len()))?;
            if !m.iter().any(|&b| b) {
                return Err(NnError::EmptyMask);
            }
        }
        let mut y = self.value(x).clone();
        for r in 0..rows {
            let mut row = y.row_mut(r);
            let keep = |j: usize| key_mask.map_or(true, |m| m[j]);
            let max = (0..cols).filter(|&j| keep(j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..cols {
                row[j] = if keep(j) { (row[j] - max).exp() } else { 0.0 };
                sum += row[j];
            }
            row.mapv_inplace(|v| v / sum);
        }
        Ok(self.push(y, Op::Softmax(x)))
    }

    /// Same-length temporal convolution of `x: [T, C_in]` with a kernel stored
    /// as `[k * C_in, C_out]` (tap-major), zero padding `(k - 1) / 2` each side.
    pub fn conv1d(&mut self, x: Var, kernel: Var, bias: Var, k: usize) -> Result<Var, NnError> {
        if k % 2 == 0 {
            return Err(NnError::EvenKernel(k));
        }
        let (t_len, c_in) = self.shape(x);
        let (kr, c_out) = self.shape(kernel);
        check("conv1d_temporal", kr == k * c_in, || {
            format!("kernel rows {kr} != {k} taps x {c_in} channels")
        })?;
        check("conv1d_temporal", self.shape(bias) == (1, c_out), || {
            format!("bias {:?} for {c_out} outputs", self.shape(bias))
        })?;
        let pad = (k - 1) / 2;
        let xv = self.value(x);
        let mut columns = Array2::zeros((t_len, k * c_in));
        for t in 0..t_len {
            for j in 0..k {
                let src = t as isize + j as isize - pad as isize;
                if src >= 0 && (src as usize) < t_len {
                    columns
                        .slice_mut(s![t, j * c_in..(j + 1) * c_in])
                        .assign(&xv.row(src as usize));
                }
            }
        }
        let y = columns.dot(self.value(kernel)) + self.value(bias);
        Ok(self.push(y, Op::Conv1d { x, kernel, bias, k, columns }))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, NnError> {
        let (rows, cols) = self.shape(x);
        check("layer_norm", self.shape(gamma) == (1, cols) && self.shape(beta) == (1, cols), || {
            format!("gain/bias for width {cols}")
        })?;
        let xv = self.value(x);
        let mut normed = Array2::zeros((rows, cols));
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.sum() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            normed.row_mut(r).assign(&row.mapv(|v| (v - mean) * is));
            inv_std.push(is);
        }
        let y = &normed * self.value(gamma) + self.value(beta);
        Ok(self.push(y, Op::LayerNorm { x, gamma, beta, normed, inv_std }))
    }

    /// Mean over the rows selected by `mask`, as a `[1, d]` row.
    pub fn masked_mean_rows(&mut self, x: Var, mask: &[bool]) -> Result<Var, NnError> {
        let (rows, cols) = self.shape(x);
        check("masked_mean", rows == mask.len(), || format!("{rows} rows, mask {}", mask.len()))?;
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(NnError::EmptyMask);
        }
        let xv = self.value(x);
        let mut y = Array2::zeros((1, cols));
        for (r, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
            y.row_mut(0).scaled_add(1.0, &xv.row(r));
        }
        y /= count as f64;
        Ok(self.push(y, Op::MaskedMean { x, mask: mask.to_vec() }))
    }

    /// Mean cross-entropy of `logits: [N, C]` against class indices, as `[1, 1]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, NnError> {
        let (n, c) = self.shape(logits);
        check("cross_entropy", n == labels.len() && n > 0, || {
            format!("{n} rows, {} labels", labels.len())
        })?;
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(NnError::LabelOutOfRange { label: bad, classes: c });
        }
        let lv = self.value(logits);
        let mut probs = Array2::zeros((n, c));
        let mut loss = 0.0;
        for r in 0..n {
            let row = lv.row(r);
            let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            loss += lse - row[labels[r]];
            probs.row_mut(r).assign(&row.mapv(|v| (v - lse).exp()));
        }
        let y = Array2::from_elem((1, 1), loss / n as f64);
        Ok(self.push(y, Op::CrossEntropy { logits, labels: labels.to_vec(), probs }))
    }

    /// Reverse pass from a `[1, 1]` output.
    pub fn backward(&self, output: Var) -> Result<Gradients, NnError> {
        let so = self.shape(output);
        check("backward", so == (1, 1), || format!("output shape {so:?} is not scalar"))?;
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Array2::ones((1, 1)));

        fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for id in (0..=output.0).rev() {
            let Some(gy) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    accumulate(&mut grads, *a, gy.dot(&self.value(*b).t()));
                    accumulate(&mut grads, *b, self.value(*a).t().dot(&gy));
                }
                Op::MatMulNt(a, b) => {
                    accumulate(&mut grads, *a, gy.dot(self.value(*b)));
                    accumulate(&mut grads, *b, gy.t().dot(self.value(*a)));
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, gy.clone());
                    accumulate(&mut grads, *b, gy.clone());
                }
                Op::AddRow(x, row) => {
                    accumulate(&mut grads, *row, gy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    accumulate(&mut grads, *x, gy.clone());
                }
                Op::AddConst(x) => accumulate(&mut grads, *x, gy.clone()),
                Op::Scale(x, f) => accumulate(&mut grads, *x, &gy * *f),
                Op::MulConst(x, c) => accumulate(&mut grads, *x, &gy * c),
                Op::Relu(x) => {
                    let mut gx = gy.clone();
                    Zip::from(&mut gx).and(self.value(*x)).for_each(|g, &v| {
                        if v <= 0.0 {
                            *g = 0.0;
                        }
                    });
                    accumulate(&mut grads, *x, gx);
                }
                Op::SliceCols(x, start) => {
                    let mut gx = Array2::zeros(self.shape(*x));
                    gx.slice_mut(s![.., *start..*start + gy.ncols()]).assign(&gy);
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.shape(p).1;
                        accumulate(&mut grads, p, gy.slice(s![.., offset..offset + w]).to_owned());
                        offset += w;
                    }
                }
                Op::StackRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let h = self.shape(p).0;
                        accumulate(&mut grads, p, gy.slice(s![offset..offset + h, ..]).to_owned());
                        offset += h;
                    }
                }
                Op::Softmax(x) => {
                    let p = &node.value;
                    let mut gx = p * &gy;
                    for (mut row, prow) in gx.rows_mut().into_iter().zip(p.rows()) {
                        let dot = row.sum();
                        Zip::from(&mut row).and(&prow).for_each(|g, &pv| *g -= pv * dot);
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Conv1d { x, kernel, bias, k, columns } => {
                    accumulate(&mut grads, *kernel, columns.t().dot(&gy));
                    accumulate(&mut grads, *bias, gy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    let dcols = gy.dot(&self.value(*kernel).t());
                    let (t_len, c_in) = self.shape(*x);
                    let pad = (k - 1) / 2;
                    let mut gx = Array2::zeros((t_len, c_in));
                    for t in 0..t_len {
                        for j in 0..*k {
                            let src = t as isize + j as isize - pad as isize;
                            if src >= 0 && (src as usize) < t_len {
                                gx.row_mut(src as usize)
                                    .scaled_add(1.0, &dcols.slice(s![t, j * c_in..(j + 1) * c_in]));
                            }
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::LayerNorm { x, gamma, beta, normed, inv_std } => {
                    accumulate(&mut grads, *beta, gy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    accumulate(&mut grads, *gamma, (&gy * normed).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    let dnormed = &gy * self.value(*gamma);
                    let cols = normed.ncols() as f64;
                    let mut gx = Array2::zeros(normed.dim());
                    for r in 0..normed.nrows() {
                        let dn = dnormed.row(r);
                        let nr = normed.row(r);
                        let mean_dn = dn.sum() / cols;
                        let mean_dn_n = dn.dot(&nr) / cols;
                        let is = inv_std[r];
                        Zip::from(gx.row_mut(r)).and(&dn).and(&nr).for_each(|g, &d, &n| {
                            *g = is * (d - mean_dn - n * mean_dn_n);
                        });
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::MaskedMean { x, mask } => {
                    let count = mask.iter().filter(|&&m| m).count() as f64;
                    let mut gx = Array2::zeros(self.shape(*x));
                    for (r, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
                        gx.row_mut(r).assign(&(&gy.row(0) / count));
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::CrossEntropy { logits, labels, probs } => {
                    let n = labels.len() as f64;
                    let mut gx = probs.clone();
                    for (r, &l) in labels.iter().enumerate() {
                        gx[[r, l]] -= 1.0;
                    }
                    gx *= gy[[0, 0]] / n;
                    accumulate(&mut grads, *logits, gx);
                }
            }
            grads[id] = Some(gy);
        }
        Ok(Gradients { grads })
    }
}
