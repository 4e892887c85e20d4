use crate::error::{Result, TensorError};
use crate::tensor::Tensor;
use crate::Float;

/// Recorded operation together with the parents it reads.
pub(crate) enum Op<F: Float> {
    MatMul(Tensor<F>, Tensor<F>),
    Add(Tensor<F>, Tensor<F>),
    Sub(Tensor<F>, Tensor<F>),
    Mul(Tensor<F>, Tensor<F>),
    /// `m[r×c] + v[c]` added to every row.
    AddRow(Tensor<F>, Tensor<F>),
    /// `scale * x + shift`
    Affine(Tensor<F>, F),
    Sigmoid(Tensor<F>),
    Tanh(Tensor<F>),
    Exp(Tensor<F>),
    Log(Tensor<F>),
    /// 1-D softmax; masked entries are exactly zero in the output.
    Softmax(Tensor<F>),
    LogSumExp(Tensor<F>),
    LogSumExpRows(Tensor<F>),
    Concat(Vec<Tensor<F>>, usize),
    Narrow(Tensor<F>, usize, usize),
    Reshape(Tensor<F>),
    Transpose(Tensor<F>),
    GatherRows(Tensor<F>, Vec<Option<usize>>),
    Gather(Tensor<F>, Vec<usize>),
    SelectRows(Vec<bool>, Tensor<F>, Tensor<F>),
    Sum(Tensor<F>),
    Mean(Tensor<F>),
    /// Column-wise max within row segments; stores the winning input row for
    /// every output element (`None` for empty segments).
    SegmentMax(Tensor<F>, Vec<Option<usize>>),
}

impl<F: Float> Op<F> {
    pub(crate) fn parents(&self) -> Vec<&Tensor<F>> {
        use Op::*;
        match self {
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | AddRow(a, b) => vec![a, b],
            SelectRows(_, a, b) => vec![a, b],
            Affine(x, _) | Sigmoid(x) | Tanh(x) | Exp(x) | Log(x) | Softmax(x) | LogSumExp(x)
            | LogSumExpRows(x) | Narrow(x, _, _) | Reshape(x) | Transpose(x)
            | GatherRows(x, _) | Gather(x, _) | Sum(x) | Mean(x) | SegmentMax(x, _) => vec![x],
            Concat(xs, _) => xs.iter().collect(),
        }
    }

    pub(crate) fn into_parents(self) -> Vec<Tensor<F>> {
        use Op::*;
        match self {
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | AddRow(a, b) => vec![a, b],
            SelectRows(_, a, b) => vec![a, b],
            Affine(x, _) | Sigmoid(x) | Tanh(x) | Exp(x) | Log(x) | Softmax(x) | LogSumExp(x)
            | LogSumExpRows(x) | Narrow(x, _, _) | Reshape(x) | Transpose(x)
            | GatherRows(x, _) | Gather(x, _) | Sum(x) | Mean(x) | SegmentMax(x, _) => vec![x],
            Concat(xs, _) => xs,
        }
    }

    /// Pushes `g = d loss / d out` into the parents' gradient accumulators.
    pub(crate) fn propagate(&self, out: &[F], out_shape: &[usize], g: &[F]) {
        use Op::*;
        match self {
            MatMul(a, b) => {
                let (m, k) = (a.shape()[0], a.shape()[1]);
                let n = b.shape()[1];
                if a.requires_grad() {
                    // dA = G · Bᵀ
                    let bd = b.data();
                    let mut ga = a.grad_mut();
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            let mut acc = F::zero();
                            for j in 0..n {
                                acc = acc + grow[j] * brow[j];
                            }
                            ga[i * k + p] = ga[i * k + p] + acc;
                        }
                    }
                }
                if b.requires_grad() {
                    // dB = Aᵀ · G
                    let ad = a.data();
                    let mut gb = b.grad_mut();
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = ad[i * k + p];
                            if aip == F::zero() {
                                continue;
                            }
                            let gbrow = &mut gb[p * n..(p + 1) * n];
                            for j in 0..n {
                                gbrow[j] = gbrow[j] + aip * grow[j];
                            }
                        }
                    }
                }
            }
            Add(a, b) => {
                accumulate(a, g.iter().copied());
                accumulate(b, g.iter().copied());
            }
            Sub(a, b) => {
                accumulate(a, g.iter().copied());
                accumulate(b, g.iter().map(|&x| -x));
            }
            Mul(a, b) => {
                if a.requires_grad() {
                    let bd = b.data();
                    accumulate(a, g.iter().zip(bd.iter()).map(|(&g, &y)| g * y));
                }
                if b.requires_grad() {
                    let ad = a.data();
                    accumulate(b, g.iter().zip(ad.iter()).map(|(&g, &x)| g * x));
                }
            }
            AddRow(m, v) => {
                accumulate(m, g.iter().copied());
                if v.requires_grad() {
                    let c = v.numel();
                    let mut gv = v.grad_mut();
                    for row in g.chunks(c) {
                        for (acc, &x) in gv.iter_mut().zip(row) {
                            *acc = *acc + x;
                        }
                    }
                }
            }
            Affine(x, scale) => accumulate(x, g.iter().map(|&g| g * *scale)),
            Sigmoid(x) => accumulate(
                x,
                g.iter()
                    .zip(out)
                    .map(|(&g, &y)| g * y * (F::one() - y)),
            ),
            Tanh(x) => accumulate(x, g.iter().zip(out).map(|(&g, &y)| g * (F::one() - y * y))),
            Exp(x) => accumulate(x, g.iter().zip(out).map(|(&g, &y)| g * y)),
            Log(x) => {
                let xd = x.data();
                accumulate(x, g.iter().zip(xd.iter()).map(|(&g, &x)| g / x));
            }
            Softmax(x) => {
                let dot: F = g.iter().zip(out).map(|(&g, &y)| g * y).sum();
                accumulate(x, g.iter().zip(out).map(|(&g, &y)| y * (g - dot)));
            }
            LogSumExp(x) => {
                let xd = x.data();
                let lse = out[0];
                accumulate(x, xd.iter().map(|&v| g[0] * (v - lse).exp()));
            }
            LogSumExpRows(x) => {
                let c = x.shape()[1];
                let xd = x.data();
                accumulate(
                    x,
                    xd.iter()
                        .enumerate()
                        .map(|(idx, &v)| g[idx / c] * (v - out[idx / c]).exp()),
                );
            }
            Concat(xs, axis) => {
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[axis + 1..].iter().product();
                let out_len = out_shape[*axis] * inner;
                let mut offset = 0;
                for x in xs {
                    let len = x.shape()[*axis] * inner;
                    if x.requires_grad() {
                        let mut gx = x.grad_mut();
                        for o in 0..outer {
                            let src = &g[o * out_len + offset..o * out_len + offset + len];
                            for (acc, &v) in gx[o * len..(o + 1) * len].iter_mut().zip(src) {
                                *acc = *acc + v;
                            }
                        }
                    }
                    offset += len;
                }
            }
            Narrow(x, axis, start) => {
                let shape = x.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let in_len = shape[*axis] * inner;
                let len = out_shape[*axis] * inner;
                let mut gx = x.grad_mut();
                for o in 0..outer {
                    let dst = &mut gx[o * in_len + start * inner..o * in_len + start * inner + len];
                    for (acc, &v) in dst.iter_mut().zip(&g[o * len..(o + 1) * len]) {
                        *acc = *acc + v;
                    }
                }
            }
            Reshape(x) => accumulate(x, g.iter().copied()),
            Transpose(x) => {
                let (r, c) = (x.shape()[0], x.shape()[1]);
                let mut gx = x.grad_mut();
                for i in 0..r {
                    for j in 0..c {
                        gx[i * c + j] = gx[i * c + j] + g[j * r + i];
                    }
                }
            }
            GatherRows(table, rows) => {
                let d = table.shape()[1];
                let mut gt = table.grad_mut();
                for (k, row) in rows.iter().enumerate() {
                    if let Some(r) = row {
                        for j in 0..d {
                            gt[r * d + j] = gt[r * d + j] + g[k * d + j];
                        }
                    }
                }
            }
            Gather(x, idx) => {
                let mut gx = x.grad_mut();
                for (k, &i) in idx.iter().enumerate() {
                    gx[i] = gx[i] + g[k];
                }
            }
            SelectRows(mask, a, b) => {
                let c = if out_shape.len() == 2 { out_shape[1] } else { 1 };
                for (t, take) in [(a, true), (b, false)] {
                    if !t.requires_grad() {
                        continue;
                    }
                    let mut gt = t.grad_mut();
                    for (r, &m) in mask.iter().enumerate() {
                        if m == take {
                            for j in r * c..(r + 1) * c {
                                gt[j] = gt[j] + g[j];
                            }
                        }
                    }
                }
            }
            Sum(x) => accumulate(x, std::iter::repeat_n(g[0], x.numel())),
            Mean(x) => {
                let n = F::of(x.numel() as f64);
                accumulate(x, std::iter::repeat_n(g[0] / n, x.numel()));
            }
            SegmentMax(x, argmax) => {
                let f = x.shape()[1];
                let mut gx = x.grad_mut();
                for (k, src) in argmax.iter().enumerate() {
                    if let Some(row) = src {
                        let j = k % f;
                        gx[row * f + j] = gx[row * f + j] + g[k];
                    }
                }
            }
        }
    }
}

fn accumulate<F: Float>(t: &Tensor<F>, values: impl Iterator<Item = F>) {
    if !t.requires_grad() {
        return;
    }
    let mut gt = t.grad_mut();
    for (acc, v) in gt.iter_mut().zip(values) {
        *acc = *acc + v;
    }
}

fn map_unary<F: Float>(x: &Tensor<F>, f: impl Fn(F) -> F) -> Vec<F> {
    x.data().iter().map(|&v| f(v)).collect()
}

fn same_shape<F: Float>(op: &'static str, a: &Tensor<F>, b: &Tensor<F>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn require_2d<F: Float>(op: &'static str, x: &Tensor<F>) -> Result<(usize, usize)> {
    match *x.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(TensorError::arg(
            op,
            format!("expected a matrix, got shape {:?}", x.shape()),
        )),
    }
}

/// Numerically stable `log Σ exp(x)`.
pub(crate) fn log_sum_exp<F: Float>(xs: &[F]) -> F {
    let max = xs.iter().copied().fold(F::neg_infinity(), F::max);
    if max == F::neg_infinity() {
        return max;
    }
    let s: F = xs.iter().map(|&x| (x - max).exp()).sum();
    max + s.ln()
}

impl<F: Float> Tensor<F> {
    /// Matrix product `[m×k] · [k×n]`.
    pub fn matmul(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        let (m, k) = require_2d("matmul", self)?;
        let (k2, n) = require_2d("matmul", other)?;
        if k != k2 {
            return Err(TensorError::shape("matmul", self.shape(), other.shape()));
        }
        let out = {
            let a = self.data();
            let b = other.data();
            let mut out = vec![F::zero(); m * n];
            for i in 0..m {
                let orow = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let aip = a[i * k + p];
                    if aip == F::zero() {
                        continue;
                    }
                    let brow = &b[p * n..(p + 1) * n];
                    for j in 0..n {
                        orow[j] = orow[j] + aip * brow[j];
                    }
                }
            }
            out
        };
        Ok(Tensor::from_op(
            out,
            vec![m, n],
            Op::MatMul(self.clone(), other.clone()),
        ))
    }

    fn zip_with(
        &self,
        other: &Tensor<F>,
        name: &'static str,
        f: impl Fn(F, F) -> F,
    ) -> Result<Vec<F>> {
        same_shape(name, self, other)?;
        let a = self.data();
        let b = other.data();
        Ok(a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect())
    }

    pub fn add(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        let out = self.zip_with(other, "add", |x, y| x + y)?;
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            Op::Add(self.clone(), other.clone()),
        ))
    }

    pub fn sub(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        let out = self.zip_with(other, "sub", |x, y| x - y)?;
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            Op::Sub(self.clone(), other.clone()),
        ))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        let out = self.zip_with(other, "mul", |x, y| x * y)?;
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            Op::Mul(self.clone(), other.clone()),
        ))
    }

    /// Adds vector `v` of length `c` to every row of a `[r×c]` matrix.
    pub fn add_row(&self, v: &Tensor<F>) -> Result<Tensor<F>> {
        let (_, c) = require_2d("add_row", self)?;
        if v.shape() != [c] {
            return Err(TensorError::shape("add_row", self.shape(), v.shape()));
        }
        let out = {
            let m = self.data();
            let vd = v.data();
            m.iter()
                .enumerate()
                .map(|(i, &x)| x + vd[i % c])
                .collect()
        };
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            Op::AddRow(self.clone(), v.clone()),
        ))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&self, scale: F, shift: F) -> Tensor<F> {
        let out = map_unary(self, |x| scale * x + shift);
        Tensor::from_op(out, self.shape().to_vec(), Op::Affine(self.clone(), scale))
    }

    pub fn scale(&self, s: F) -> Tensor<F> {
        self.affine(s, F::zero())
    }

    /// `1 - x`
    pub fn one_minus(&self) -> Tensor<F> {
        self.affine(-F::one(), F::one())
    }

    pub fn sigmoid(&self) -> Tensor<F> {
        let out = map_unary(self, |x| {
            if x >= F::zero() {
                F::one() / (F::one() + (-x).exp())
            } else {
                let e = x.exp();
                e / (F::one() + e)
            }
        });
        Tensor::from_op(out, self.shape().to_vec(), Op::Sigmoid(self.clone()))
    }

    pub fn tanh(&self) -> Tensor<F> {
        let out = map_unary(self, |x| x.tanh());
        Tensor::from_op(out, self.shape().to_vec(), Op::Tanh(self.clone()))
    }

    pub fn exp(&self) -> Tensor<F> {
        let out = map_unary(self, |x| x.exp());
        Tensor::from_op(out, self.shape().to_vec(), Op::Exp(self.clone()))
    }

    pub fn ln(&self) -> Tensor<F> {
        let out = map_unary(self, |x| x.ln());
        Tensor::from_op(out, self.shape().to_vec(), Op::Log(self.clone()))
    }

    /// Softmax of a non-empty vector, computed with max subtraction.
    pub fn softmax(&self) -> Result<Tensor<F>> {
        let mask = vec![true; self.numel()];
        self.masked_softmax(&mask)
    }

    /// Softmax over the positions where `mask` is true; the others receive
    /// exactly zero probability.
    pub fn masked_softmax(&self, mask: &[bool]) -> Result<Tensor<F>> {
        if self.ndim() != 1 {
            return Err(TensorError::arg(
                "softmax",
                format!("expected a vector, got shape {:?}", self.shape()),
            ));
        }
        if self.numel() == 0 {
            return Err(TensorError::arg("softmax", "empty input"));
        }
        if mask.len() != self.numel() {
            return Err(TensorError::shape("softmax", self.shape(), &[mask.len()]));
        }
        if !mask.iter().any(|&m| m) {
            return Err(TensorError::arg("softmax", "every position is masked"));
        }
        let out = {
            let x = self.data();
            let max = x
                .iter()
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|(&v, _)| v)
                .fold(F::neg_infinity(), F::max);
            let mut out: Vec<F> = x
                .iter()
                .zip(mask)
                .map(|(&v, &m)| if m { (v - max).exp() } else { F::zero() })
                .collect();
            // Summing in sorted order makes the normaliser, and hence every
            // output, independent of the order of the inputs.
            let mut sorted = out.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite softmax terms"));
            let total: F = sorted.into_iter().sum();
            out.iter_mut().for_each(|v| *v = *v / total);
            out
        };
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            Op::Softmax(self.clone()),
        ))
    }

    /// `log Σ exp(x)` over every element, returned as a scalar.
    pub fn log_sum_exp(&self) -> Result<Tensor<F>> {
        if self.numel() == 0 {
            return Err(TensorError::arg("log_sum_exp", "empty input"));
        }
        let out = log_sum_exp(&self.data());
        Ok(Tensor::from_op(
            vec![out],
            vec![],
            Op::LogSumExp(self.clone()),
        ))
    }

    /// Row-wise `log Σ exp` of a `[r×c]` matrix, giving `[r]`.
    pub fn log_sum_exp_rows(&self) -> Result<Tensor<F>> {
        let (r, c) = require_2d("log_sum_exp_rows", self)?;
        if c == 0 {
            return Err(TensorError::arg("log_sum_exp_rows", "empty rows"));
        }
        let out = self.data().chunks(c).map(log_sum_exp).collect();
        Ok(Tensor::from_op(
            out,
            vec![r],
            Op::LogSumExpRows(self.clone()),
        ))
    }

    /// Concatenates along `axis`. Every other dimension must agree; operands
    /// with zero extent along `axis` contribute nothing.
    pub fn concat(xs: &[Tensor<F>], axis: usize) -> Result<Tensor<F>> {
        let first = xs
            .first()
            .ok_or_else(|| TensorError::arg("concat", "no operands"))?;
        let rank = first.ndim();
        if axis >= rank {
            return Err(TensorError::arg(
                "concat",
                format!("axis {axis} out of range for rank {rank}"),
            ));
        }
        for x in &xs[1..] {
            let compatible = x.ndim() == rank
                && x
                    .shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(TensorError::shape("concat", first.shape(), x.shape()));
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = xs.iter().map(|x| x.shape()[axis]).sum();
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for x in xs {
                let len = x.shape()[axis] * inner;
                out.extend_from_slice(&x.data()[o * len..(o + 1) * len]);
            }
        }
        Ok(Tensor::from_op(out, shape, Op::Concat(xs.to_vec(), axis)))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<F>> {
        let shape = self.shape();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(TensorError::arg(
                "narrow",
                format!("range {start}..{} on axis {axis} of shape {shape:?}", start + len),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let in_len = shape[axis] * inner;
        let data = self.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * in_len + start * inner;
            out.extend_from_slice(&data[base..base + len * inner]);
        }
        let mut new_shape = shape.to_vec();
        new_shape[axis] = len;
        drop(data);
        Ok(Tensor::from_op(
            out,
            new_shape,
            Op::Narrow(self.clone(), axis, start),
        ))
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&self, i: usize) -> Result<Tensor<F>> {
        let (_, c) = require_2d("row", self)?;
        self.narrow(0, i, 1)?.reshape(&[c])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<F>> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(TensorError::shape("reshape", self.shape(), shape));
        }
        Ok(Tensor::from_op(
            self.to_vec(),
            shape.to_vec(),
            Op::Reshape(self.clone()),
        ))
    }

    pub fn transpose(&self) -> Result<Tensor<F>> {
        let (r, c) = require_2d("transpose", self)?;
        let data = self.data();
        let mut out = vec![F::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = data[i * c + j];
            }
        }
        drop(data);
        Ok(Tensor::from_op(
            out,
            vec![c, r],
            Op::Transpose(self.clone()),
        ))
    }

    /// Embedding lookup: row `rows[k]` of a `[n×d]` table, or a zero row with
    /// no gradient for `None`.
    pub fn gather_rows(&self, rows: &[Option<usize>]) -> Result<Tensor<F>> {
        let (n, d) = require_2d("gather_rows", self)?;
        if let Some(bad) = rows.iter().flatten().find(|&&r| r >= n) {
            return Err(TensorError::arg(
                "gather_rows",
                format!("row {bad} out of range for table of {n} rows"),
            ));
        }
        let data = self.data();
        let mut out = Vec::with_capacity(rows.len() * d);
        for r in rows {
            match r {
                Some(r) => out.extend_from_slice(&data[r * d..(r + 1) * d]),
                None => out.extend(std::iter::repeat_n(F::zero(), d)),
            }
        }
        drop(data);
        Ok(Tensor::from_op(
            out,
            vec![rows.len(), d],
            Op::GatherRows(self.clone(), rows.to_vec()),
        ))
    }

    /// Picks elements by flat (row-major) index into a vector.
    pub fn gather(&self, idx: &[usize]) -> Result<Tensor<F>> {
        let n = self.numel();
        if let Some(bad) = idx.iter().find(|&&i| i >= n) {
            return Err(TensorError::arg(
                "gather",
                format!("index {bad} out of range for {n} elements"),
            ));
        }
        let out = {
            let data = self.data();
            idx.iter().map(|&i| data[i]).collect()
        };
        Ok(Tensor::from_op(
            out,
            vec![idx.len()],
            Op::Gather(self.clone(), idx.to_vec()),
        ))
    }

    /// Row `r` of the result comes from `a` where `mask[r]`, otherwise from
    /// `b`. Values are copied, never blended.
    pub fn select_rows(mask: &[bool], a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
        same_shape("select_rows", a, b)?;
        let rows = a.shape().first().copied().unwrap_or(1);
        if mask.len() != rows {
            return Err(TensorError::shape("select_rows", a.shape(), &[mask.len()]));
        }
        let c = if rows == 0 { 0 } else { a.numel() / rows };
        let out = {
            let ad = a.data();
            let bd = b.data();
            let mut out = Vec::with_capacity(a.numel());
            for (r, &m) in mask.iter().enumerate() {
                let src = if m { &ad } else { &bd };
                out.extend_from_slice(&src[r * c..(r + 1) * c]);
            }
            out
        };
        Ok(Tensor::from_op(
            out,
            a.shape().to_vec(),
            Op::SelectRows(mask.to_vec(), a.clone(), b.clone()),
        ))
    }

    pub fn sum(&self) -> Tensor<F> {
        let s = self.data().iter().copied().sum();
        Tensor::from_op(vec![s], vec![], Op::Sum(self.clone()))
    }

    pub fn mean(&self) -> Result<Tensor<F>> {
        if self.numel() == 0 {
            return Err(TensorError::arg("mean", "empty input"));
        }
        let n = F::of(self.numel() as f64);
        let s: F = self.data().iter().copied().sum();
        Ok(Tensor::from_op(vec![s / n], vec![], Op::Mean(self.clone())))
    }

    /// Column-wise maximum over each `(start, len)` row segment of a
    /// `[r×f]` matrix, giving `[segments×f]`. Empty segments produce zeros.
    pub fn segment_max(&self, segments: &[(usize, usize)]) -> Result<Tensor<F>> {
        let (r, f) = require_2d("segment_max", self)?;
        if let Some(&(s, l)) = segments.iter().find(|&&(s, l)| s + l > r) {
            return Err(TensorError::arg(
                "segment_max",
                format!("segment {s}..{} exceeds {r} rows", s + l),
            ));
        }
        let data = self.data();
        let mut out = vec![F::zero(); segments.len() * f];
        let mut argmax = vec![None; segments.len() * f];
        for (k, &(start, len)) in segments.iter().enumerate() {
            for j in 0..f {
                let mut best: Option<(usize, F)> = None;
                for row in start..start + len {
                    let v = data[row * f + j];
                    if best.is_none_or(|(_, b)| v > b) {
                        best = Some((row, v));
                    }
                }
                if let Some((row, v)) = best {
                    out[k * f + j] = v;
                    argmax[k * f + j] = Some(row);
                }
            }
        }
        drop(data);
        Ok(Tensor::from_op(
            out,
            vec![segments.len(), f],
            Op::SegmentMax(self.clone(), argmax),
        ))
    }

    /// Inner product of two same-shape tensors.
    pub fn dot(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        Ok(self.mul(other)?.sum())
    }
}
