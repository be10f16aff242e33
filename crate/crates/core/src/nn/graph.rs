//! A small reverse-mode tape over row-major matrices.
//!
//! Every value on the tape is a 2-D array: time runs along rows and channels
//! along columns. Vectors are `1 × n` rows, density maps are `n × 1` columns
//! and scalars are `1 × 1`. The tape is rebuilt for every forward pass, so it
//! is cheap to throw away and there is no retained state between samples.

use std::collections::HashMap;

use ndarray::{s, Array2, Axis, Zip};

use super::params::ParamStore;
use super::Real;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Input,
    Param,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    MaskRows(Var, Vec<bool>),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Array2<T>,
        inv_std: Vec<T>,
    },
    Unfold(Var, usize),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    RepeatRows(Var),
    MaxPoolTime(Var, Vec<usize>),
    Sum(Var),
    MaskedMse {
        pred: Var,
        target: Array2<T>,
        mask: Vec<bool>,
    },
}

struct Node<T> {
    value: Array2<T>,
    op: Op<T>,
}

/// Recorded computation with parameter bindings.
///
/// Parameters are pulled lazily from the borrowed [`ParamStore`]; the same
/// name always maps to the same node within one graph, so gradients for a
/// shared parameter accumulate naturally.
pub struct Graph<'s, T: Real> {
    store: &'s ParamStore<T>,
    nodes: Vec<Node<T>>,
    params: HashMap<String, Var>,
    grads: Vec<Option<Array2<T>>>,
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

impl<'s, T: Real> Graph<'s, T> {
    pub fn new(store: &'s ParamStore<T>) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
            params: HashMap::new(),
            grads: Vec::new(),
        }
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    fn push(&mut self, value: Array2<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; receives a gradient buffer but is never written back.
    pub fn input(&mut self, value: Array2<T>) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = self
            .store
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))?
            .clone();
        let v = self.push(value, Op::Param);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.ncols() != bv.nrows() {
            return Err(shape_err("matmul", av.shape(), bv.shape()));
        }
        let out = av.dot(bv);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.ncols() != bv.ncols() {
            return Err(shape_err("matmul_nt", av.shape(), bv.shape()));
        }
        let out = av.dot(&bv.t());
        Ok(self.push(out, Op::MatMulNT(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.dim() != bv.dim() {
            return Err(shape_err("add", av.shape(), bv.shape()));
        }
        let out = av + bv;
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.nrows() != 1 || rv.ncols() != av.ncols() {
            return Err(shape_err("add_row", av.shape(), rv.shape()));
        }
        let out = av + rv;
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.dim() != bv.dim() {
            return Err(shape_err("mul", av.shape(), bv.shape()));
        }
        let out = av * bv;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        let out = self.value(a) * k;
        self.push(out, Op::Scale(a, k))
    }

    /// Zeroes every row whose mask entry is `false`.
    pub fn mask_rows(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let av = self.value(a);
        if av.nrows() != mask.len() {
            return Err(shape_err("mask_rows", av.shape(), &[mask.len()]));
        }
        let mut out = av.clone();
        for (mut row, &keep) in out.axis_iter_mut(Axis(0)).zip(mask) {
            if !keep {
                row.fill(T::zero());
            }
        }
        Ok(self.push(out, Op::MaskRows(a, mask.to_vec())))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| if x > T::zero() { x } else { T::zero() });
        self.push(out, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| T::one() / (T::one() + (-x).exp()));
        self.push(out, Op::Sigmoid(a))
    }

    /// Row-wise softmax where columns with `key_mask[j] == false` get exactly
    /// zero weight (additive −∞ before normalization).
    pub fn softmax_rows(&mut self, a: Var, key_mask: &[bool]) -> Result<Var> {
        let av = self.value(a);
        if av.ncols() != key_mask.len() {
            return Err(shape_err("softmax_rows", av.shape(), &[key_mask.len()]));
        }
        let mut out = Array2::zeros(av.dim());
        for (src, mut dst) in av.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
            let max = src
                .iter()
                .zip(key_mask)
                .filter(|(_, &m)| m)
                .map(|(&x, _)| x)
                .fold(T::neg_infinity(), T::max);
            if max == T::neg_infinity() {
                continue;
            }
            let mut total = T::zero();
            for ((d, &x), &m) in dst.iter_mut().zip(src.iter()).zip(key_mask) {
                if m {
                    *d = (x - max).exp();
                    total += *d;
                }
            }
            dst.mapv_inplace(|x| x / total);
        }
        Ok(self.push(out, Op::SoftmaxRows(a)))
    }

    /// Per-row layer normalization with learned `1 × n` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let n = xv.ncols();
        for p in [gain, bias] {
            let pv = self.value(p);
            if pv.dim() != (1, n) {
                return Err(shape_err("layer_norm", xv.shape(), pv.shape()));
            }
        }
        let eps = T::from_f64(1e-5).unwrap();
        let nf = T::from_usize(n).unwrap();
        let mut normed = Array2::zeros(xv.dim());
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for (src, mut dst) in xv.axis_iter(Axis(0)).zip(normed.axis_iter_mut(Axis(0))) {
            let mean = src.sum() / nf;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let is = T::one() / (var + eps).sqrt();
            Zip::from(&mut dst)
                .and(&src)
                .for_each(|d, &v| *d = (v - mean) * is);
            inv_std.push(is);
        }
        let out = &normed * self.value(gain) + self.value(bias);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            },
        ))
    }

    /// Stacks `k` time-shifted copies side by side (`T × k·d`), zero beyond
    /// the sequence ends. Multiplying by a `k·d × d_out` kernel gives a
    /// same-length temporal convolution.
    pub fn unfold(&mut self, a: Var, k: usize) -> Result<Var> {
        if k == 0 || k.is_multiple_of(2) {
            return Err(Error::Config(format!("conv kernel must be odd, got {k}")));
        }
        let av = self.value(a);
        let (t, d) = av.dim();
        let half = (k / 2) as isize;
        let mut out = Array2::zeros((t, k * d));
        for j in 0..k {
            let shift = j as isize - half;
            for row in 0..t {
                let src = row as isize + shift;
                if src >= 0 && (src as usize) < t {
                    out.slice_mut(s![row, j * d..(j + 1) * d])
                        .assign(&av.row(src as usize));
                }
            }
        }
        Ok(self.push(out, Op::Unfold(a, k)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).nrows();
        for &p in parts {
            if self.value(p).nrows() != rows {
                return Err(shape_err(
                    "concat_cols",
                    self.value(parts[0]).shape(),
                    self.value(p).shape(),
                ));
            }
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("rows checked");
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let av = self.value(a);
        if start > end || end > av.ncols() {
            return Err(shape_err("slice_cols", av.shape(), &[start, end]));
        }
        let out = av.slice(s![.., start..end]).to_owned();
        Ok(self.push(out, Op::SliceCols(a, start, end)))
    }

    /// Expands a `1 × d` row to `n × d`.
    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let av = self.value(a);
        if av.nrows() != 1 {
            return Err(shape_err("repeat_rows", av.shape(), &[1, av.ncols()]));
        }
        let out = av
            .broadcast((n, av.ncols()))
            .expect("single row broadcasts")
            .to_owned();
        Ok(self.push(out, Op::RepeatRows(a)))
    }

    /// Element-wise max over the non-masked rows, giving a `1 × d` row.
    pub fn max_pool_time(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let av = self.value(a);
        if av.nrows() != mask.len() {
            return Err(shape_err("max_pool_time", av.shape(), &[mask.len()]));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::EmptyView);
        }
        let d = av.ncols();
        let mut out = Array2::from_elem((1, d), T::neg_infinity());
        let mut arg = vec![0usize; d];
        for (t, row) in av.axis_iter(Axis(0)).enumerate() {
            if !mask[t] {
                continue;
            }
            for (c, &x) in row.iter().enumerate() {
                if x > out[[0, c]] {
                    out[[0, c]] = x;
                    arg[c] = t;
                }
            }
        }
        Ok(self.push(out, Op::MaxPoolTime(a, arg)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).sum();
        self.push(Array2::from_elem((1, 1), total), Op::Sum(a))
    }

    /// Mean squared error over the positions where `mask` is set. Returns a
    /// `1 × 1` node; zero when nothing is unmasked.
    pub fn masked_mse(&mut self, pred: Var, target: &Array2<T>, mask: &[bool]) -> Result<Var> {
        let pv = self.value(pred);
        if pv.dim() != target.dim() {
            return Err(shape_err("masked_mse", pv.shape(), target.shape()));
        }
        if pv.len() != mask.len() {
            return Err(Error::MaskMismatch {
                expected: pv.len(),
                got: mask.len(),
            });
        }
        let n = mask.iter().filter(|&&m| m).count();
        let mut total = T::zero();
        for ((&p, &t), &m) in pv.iter().zip(target.iter()).zip(mask) {
            if m {
                total += (p - t) * (p - t);
            }
        }
        let loss = if n == 0 {
            T::zero()
        } else {
            total / T::from_usize(n).unwrap()
        };
        Ok(self.push(
            Array2::from_elem((1, 1), loss),
            Op::MaskedMse {
                pred,
                target: target.clone(),
                mask: mask.to_vec(),
            },
        ))
    }

    /// Runs reverse accumulation from a `1 × 1` output.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        let shape = self.value(output).dim();
        if shape != (1, 1) {
            return Err(shape_err("backward", &[shape.0, shape.1], &[1, 1]));
        }
        let mut grads: Vec<Option<Array2<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Array2::from_elem((1, 1), T::one()));
        for i in (0..=output.0).rev() {
            let Some(grad) = grads[i].take() else {
                continue;
            };
            self.propagate(i, &grad, &mut grads);
            grads[i] = Some(grad);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Array2<T>, grads: &mut [Option<Array2<T>>]) {
        fn acc<T: Real>(grads: &mut [Option<Array2<T>>], v: Var, delta: Array2<T>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &delta,
                slot => *slot = Some(delta),
            }
        }
        let val = |v: Var| &self.nodes[v.0].value;
        match &self.nodes[i].op {
            Op::Input | Op::Param => {}
            Op::MatMul(a, b) => {
                acc(grads, *a, g.dot(&val(*b).t()));
                acc(grads, *b, val(*a).t().dot(g));
            }
            Op::MatMulNT(a, b) => {
                acc(grads, *a, g.dot(val(*b)));
                acc(grads, *b, g.t().dot(val(*a)));
            }
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::AddRow(a, r) => {
                acc(grads, *a, g.clone());
                acc(grads, *r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Mul(a, b) => {
                acc(grads, *a, g * val(*b));
                acc(grads, *b, g * val(*a));
            }
            Op::Scale(a, k) => acc(grads, *a, g * *k),
            Op::MaskRows(a, mask) => {
                let mut d = g.clone();
                for (mut row, &keep) in d.axis_iter_mut(Axis(0)).zip(mask) {
                    if !keep {
                        row.fill(T::zero());
                    }
                }
                acc(grads, *a, d);
            }
            Op::Relu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(val(*a)).for_each(|d, &x| {
                    if x <= T::zero() {
                        *d = T::zero();
                    }
                });
                acc(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[i].value;
                let d = g * &y.mapv(|y| y * (T::one() - y));
                acc(grads, *a, d);
            }
            Op::SoftmaxRows(a) => {
                let y = &self.nodes[i].value;
                let mut d = Array2::zeros(y.dim());
                for ((yr, gr), mut dr) in y
                    .axis_iter(Axis(0))
                    .zip(g.axis_iter(Axis(0)))
                    .zip(d.axis_iter_mut(Axis(0)))
                {
                    let dot = yr.dot(&gr);
                    Zip::from(&mut dr)
                        .and(&yr)
                        .and(&gr)
                        .for_each(|d, &y, &g| *d = y * (g - dot));
                }
                acc(grads, *a, d);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            } => {
                acc(grads, *bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                acc(grads, *gain, (g * normed).sum_axis(Axis(0)).insert_axis(Axis(0)));
                let dn = g * val(*gain);
                let n = T::from_usize(normed.ncols()).unwrap();
                let mut dx = Array2::zeros(normed.dim());
                for (r, mut out) in dx.axis_iter_mut(Axis(0)).enumerate() {
                    let dn_r = dn.row(r);
                    let n_r = normed.row(r);
                    let mean_dn = dn_r.sum() / n;
                    let mean_dn_n = dn_r.dot(&n_r) / n;
                    Zip::from(&mut out)
                        .and(&dn_r)
                        .and(&n_r)
                        .for_each(|o, &dn, &nv| *o = inv_std[r] * (dn - mean_dn - nv * mean_dn_n));
                }
                acc(grads, *x, dx);
            }
            Op::Unfold(a, k) => {
                let (t, d) = val(*a).dim();
                let half = (*k / 2) as isize;
                let mut dx = Array2::zeros((t, d));
                for j in 0..*k {
                    let shift = j as isize - half;
                    for row in 0..t {
                        let src = row as isize + shift;
                        if src >= 0 && (src as usize) < t {
                            let mut target = dx.row_mut(src as usize);
                            target += &g.slice(s![row, j * d..(j + 1) * d]);
                        }
                    }
                }
                acc(grads, *a, dx);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = val(p).ncols();
                    acc(grads, p, g.slice(s![.., start..start + w]).to_owned());
                    start += w;
                }
            }
            Op::SliceCols(a, start, end) => {
                let mut d = Array2::zeros(val(*a).dim());
                d.slice_mut(s![.., *start..*end]).assign(g);
                acc(grads, *a, d);
            }
            Op::RepeatRows(a) => acc(grads, *a, g.sum_axis(Axis(0)).insert_axis(Axis(0))),
            Op::MaxPoolTime(a, arg) => {
                let mut d = Array2::zeros(val(*a).dim());
                for (c, &t) in arg.iter().enumerate() {
                    d[[t, c]] = g[[0, c]];
                }
                acc(grads, *a, d);
            }
            Op::Sum(a) => {
                let d = Array2::from_elem(val(*a).dim(), g[[0, 0]]);
                acc(grads, *a, d);
            }
            Op::MaskedMse { pred, target, mask } => {
                let n = mask.iter().filter(|&&m| m).count();
                let mut d = Array2::zeros(target.dim());
                if n > 0 {
                    let k = g[[0, 0]] * T::from_f64(2.0).unwrap() / T::from_usize(n).unwrap();
                    Zip::from(&mut d)
                        .and(val(*pred))
                        .and(target)
                        .and(&ndarray::ArrayView2::from_shape(target.dim(), mask).unwrap())
                        .for_each(|d, &p, &t, &m| {
                            if m {
                                *d = k * (p - t);
                            }
                        });
                }
                acc(grads, *pred, d);
            }
        }
    }

    /// Gradient of the last `backward` output with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Array2<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Adds every parameter gradient into `sink`, keyed by parameter name.
    pub fn accumulate_param_grads(&self, sink: &mut HashMap<String, Array2<T>>) {
        for (name, &v) in &self.params {
            if let Some(g) = self.grad(v) {
                match sink.get_mut(name) {
                    Some(existing) => *existing += g,
                    None => {
                        sink.insert(name.clone(), g.clone());
                    }
                }
            }
        }
    }

    /// Parameter names bound in this graph.
    pub fn bound_params(&self) -> impl Iterator<Item = (&str, Var)> {
        self.params.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn is_param(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].op, Op::Param)
    }
}
