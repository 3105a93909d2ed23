//! Dense f32 tensors with define-by-run reverse-mode differentiation.
//!
//! Every operation on tensors that require gradients records its inputs in the
//! output node. [`Tensor::backward`] walks that graph in reverse topological
//! order. Operations whose inputs are all constant produce plain leaves, so
//! inference never retains a graph.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock, RwLockReadGuard};

use crate::error::{Error, Result};

/// Index value that makes [`Tensor::gather`] emit a zero.
pub const GATHER_ZERO: u32 = u32::MAX;

/// Shared handle to a node of the computation graph.
///
/// Cloning is cheap and aliases the same storage.
#[derive(Clone)]
pub struct Tensor(Arc<Node>);

struct Node {
    shape: Vec<usize>,
    data: RwLock<Vec<f32>>,
    grad: RwLock<Option<Vec<f32>>>,
    requires_grad: AtomicBool,
    op: Op,
}

enum Op {
    Leaf,
    MatMul(Tensor, Tensor),
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    AddBias(Tensor, Tensor),
    Scale(Tensor, f32),
    Relu(Tensor),
    Sigmoid(Tensor),
    Softmax {
        x: Tensor,
        len: usize,
        inner: usize,
    },
    LayerNorm {
        x: Tensor,
        gamma: Tensor,
        beta: Tensor,
        xhat: Vec<f32>,
        rstd: Vec<f32>,
    },
    Gather {
        x: Tensor,
        index: Arc<[u32]>,
    },
    Concat {
        parts: Vec<Tensor>,
        axis: usize,
    },
    Sum(Tensor),
    MeanRows(Tensor),
    SumCols(Tensor),
    L2Normalize {
        x: Tensor,
        norms: Vec<f32>,
        floor: f32,
    },
    CrossEntropy {
        logits: Tensor,
        targets: Vec<usize>,
        probs: Vec<f32>,
    },
    Reshape(Tensor),
    StraightThrough(Tensor),
}

impl Op {
    fn parents(&self) -> Vec<&Tensor> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddBias(a, b) => {
                vec![a, b]
            }
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Sum(a)
            | Op::MeanRows(a)
            | Op::SumCols(a)
            | Op::Reshape(a)
            | Op::StraightThrough(a) => vec![a],
            Op::Softmax { x, .. } | Op::Gather { x, .. } | Op::L2Normalize { x, .. } => vec![x],
            Op::LayerNorm { x, gamma, beta, .. } => vec![x, gamma, beta],
            Op::Concat { parts, .. } => parts.iter().collect(),
            Op::CrossEntropy { logits, .. } => vec![logits],
        }
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn from_op(data: Vec<f32>, shape: Vec<usize>, op: Op) -> Tensor {
        debug_assert_eq!(numel(&shape), data.len());
        let requires_grad = op.parents().iter().any(|p| p.requires_grad());
        let op = if requires_grad { op } else { Op::Leaf };
        Tensor(Arc::new(Node {
            shape,
            data: RwLock::new(data),
            grad: RwLock::new(None),
            requires_grad: AtomicBool::new(requires_grad),
            op,
        }))
    }

    /// Constant tensor. Fails when `data` does not fill `shape`.
    pub fn new(data: Vec<f32>, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::dim(format!("extents must be positive, got {shape:?}")));
        }
        if numel(shape) != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} needs {} values, got {}",
                numel(shape),
                data.len()
            )));
        }
        Ok(Tensor::from_op(data, shape.to_vec(), Op::Leaf))
    }

    /// Trainable leaf.
    pub fn param(data: Vec<f32>, shape: &[usize]) -> Result<Tensor> {
        let t = Tensor::new(data, shape)?;
        t.set_requires_grad(true);
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::from_op(vec![0.0; numel(shape)], shape.to_vec(), Op::Leaf)
    }

    pub fn full(shape: &[usize], value: f32) -> Tensor {
        Tensor::from_op(vec![value; numel(shape)], shape.to_vec(), Op::Leaf)
    }

    pub fn scalar(value: f32) -> Tensor {
        Tensor::from_op(vec![value], vec![1], Op::Leaf)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    /// Rows and columns of a 2-D tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::dim(format!("expected a 2-D tensor, got shape {s:?}"))),
        }
    }

    pub fn data(&self) -> RwLockReadGuard<'_, Vec<f32>> {
        self.0.data.read().expect("tensor data lock poisoned")
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.data().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f32 {
        self.data()[0]
    }

    /// Mutates the stored values in place. Intended for leaves (optimizer
    /// updates, checkpoint loading); graph nodes built earlier keep the values
    /// they saw at construction only where they copied them.
    pub fn update<F: FnOnce(&mut [f32])>(&self, f: F) {
        let mut guard = self.0.data.write().expect("tensor data lock poisoned");
        f(&mut guard);
    }

    pub fn grad(&self) -> Option<Vec<f32>> {
        self.0.grad.read().expect("tensor grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.write().expect("tensor grad lock poisoned") = None;
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad.load(Ordering::Relaxed)
    }

    /// Only meaningful on leaves; derived tensors fix the flag at creation.
    pub fn set_requires_grad(&self, flag: bool) {
        self.0.requires_grad.store(flag, Ordering::Relaxed);
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.0.op, Op::Leaf)
    }

    /// Constant copy of the current values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Tensor::from_op(self.to_vec(), self.shape().to_vec(), Op::Leaf)
    }

    /// Same storage identity check.
    pub fn ptr_eq(&self, other: &Tensor) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    fn same_shape(&self, other: &Tensor, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dim(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    // ---------------------------------------------------------------- ops

    /// `[m×k] × [k×n] → [m×n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2()?;
        let (k2, n) = other.dims2()?;
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul: inner dimensions differ for {:?} × {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut out = vec![0.0f32; m * n];
        gemm(m, k, n, &self.data(), false, &other.data(), false, &mut out);
        Ok(Tensor::from_op(out, vec![m, n], Op::MatMul(self.clone(), other.clone())))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "add")?;
        let out = zip_map(&self.data(), &other.data(), |a, b| a + b);
        Ok(Tensor::from_op(out, self.shape().to_vec(), Op::Add(self.clone(), other.clone())))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "sub")?;
        let out = zip_map(&self.data(), &other.data(), |a, b| a - b);
        Ok(Tensor::from_op(out, self.shape().to_vec(), Op::Sub(self.clone(), other.clone())))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "mul")?;
        let out = zip_map(&self.data(), &other.data(), |a, b| a * b);
        Ok(Tensor::from_op(out, self.shape().to_vec(), Op::Mul(self.clone(), other.clone())))
    }

    /// Adds a length-`c` vector to every row of an `[n×c]` tensor.
    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let (_, c) = self.dims2()?;
        if bias.numel() != c {
            return Err(Error::dim(format!(
                "add_bias: bias {:?} does not match row width of {:?}",
                bias.shape(),
                self.shape()
            )));
        }
        let b = bias.data();
        let mut out = self.to_vec();
        for row in out.chunks_mut(c) {
            for (o, &bv) in row.iter_mut().zip(b.iter()) {
                *o += bv;
            }
        }
        drop(b);
        Ok(Tensor::from_op(out, self.shape().to_vec(), Op::AddBias(self.clone(), bias.clone())))
    }

    pub fn scale(&self, factor: f32) -> Tensor {
        let out = self.data().iter().map(|v| v * factor).collect();
        Tensor::from_op(out, self.shape().to_vec(), Op::Scale(self.clone(), factor))
    }

    pub fn relu(&self) -> Tensor {
        let out = self.data().iter().map(|v| v.max(0.0)).collect();
        Tensor::from_op(out, self.shape().to_vec(), Op::Relu(self.clone()))
    }

    pub fn sigmoid(&self) -> Tensor {
        let out = self.data().iter().map(|&v| sigmoid(v)).collect();
        Tensor::from_op(out, self.shape().to_vec(), Op::Sigmoid(self.clone()))
    }

    /// Softmax along `axis`, with max subtraction.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::dim(format!("softmax: axis {axis} out of range for {shape:?}")));
        }
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let x = self.data();
        let mut out = vec![0.0f32; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut max = f32::NEG_INFINITY;
                for j in 0..len {
                    max = max.max(x[base + j * inner]);
                }
                let mut sum = 0.0f32;
                for j in 0..len {
                    let e = (x[base + j * inner] - max).exp();
                    out[base + j * inner] = e;
                    sum += e;
                }
                for j in 0..len {
                    out[base + j * inner] /= sum;
                }
            }
        }
        drop(x);
        Ok(Tensor::from_op(out, shape.to_vec(), Op::Softmax { x: self.clone(), len, inner }))
    }

    /// Picks elements by flat index. [`GATHER_ZERO`] yields zero. Backward
    /// scatter-adds, so repeated indices accumulate.
    pub fn gather(&self, index: Arc<[u32]>, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != index.len() {
            return Err(Error::dim(format!(
                "gather: {} indices cannot fill shape {shape:?}",
                index.len()
            )));
        }
        let x = self.data();
        let mut out = Vec::with_capacity(index.len());
        for &i in index.iter() {
            if i == GATHER_ZERO {
                out.push(0.0);
            } else {
                let v = x.get(i as usize).ok_or_else(|| {
                    Error::dim(format!("gather: index {i} out of range for {:?}", self.shape()))
                })?;
                out.push(*v);
            }
        }
        drop(x);
        Ok(Tensor::from_op(out, shape.to_vec(), Op::Gather { x: self.clone(), index }))
    }

    /// Selects rows `rows` of a 2-D tensor.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Tensor> {
        let (n, c) = self.dims2()?;
        let mut idx = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            if r >= n {
                return Err(Error::dim(format!("select_rows: row {r} out of range for {n} rows")));
            }
            idx.extend((0..c).map(|j| (r * c + j) as u32));
        }
        self.gather(idx.into(), &[rows.len(), c])
    }

    /// Columns `start..start+len` of a 2-D tensor.
    pub fn narrow_cols(&self, start: usize, len: usize) -> Result<Tensor> {
        let (n, c) = self.dims2()?;
        if start + len > c || len == 0 {
            return Err(Error::dim(format!(
                "narrow_cols: columns {start}..{} out of range for width {c}",
                start + len
            )));
        }
        let idx: Vec<u32> =
            (0..n).flat_map(|r| (start..start + len).map(move |j| (r * c + j) as u32)).collect();
        self.gather(idx.into(), &[n, len])
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (n, c) = self.dims2()?;
        let idx: Vec<u32> = (0..c).flat_map(|j| (0..n).map(move |i| (i * c + j) as u32)).collect();
        self.gather(idx.into(), &[c, n])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() || shape.iter().any(|&e| e == 0) {
            return Err(Error::dim(format!(
                "reshape: cannot view {:?} as {shape:?}",
                self.shape()
            )));
        }
        Ok(Tensor::from_op(self.to_vec(), shape.to_vec(), Op::Reshape(self.clone())))
    }

    /// Takes the values `forward` but routes the gradient to `self` unchanged.
    pub fn straight_through(&self, forward: Vec<f32>) -> Result<Tensor> {
        if forward.len() != self.numel() {
            return Err(Error::dim(format!(
                "straight_through: {} values for shape {:?}",
                forward.len(),
                self.shape()
            )));
        }
        Ok(Tensor::from_op(forward, self.shape().to_vec(), Op::StraightThrough(self.clone())))
    }

    /// Joins 2-D tensors along `axis` (0 = rows, 1 = columns).
    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::dim("concat: no inputs"))?;
        let (_, c0) = first.dims2()?;
        let (n0, _) = first.dims2()?;
        match axis {
            0 => {
                let mut rows = 0;
                let mut out = Vec::new();
                for p in parts {
                    let (n, c) = p.dims2()?;
                    if c != c0 {
                        return Err(Error::dim(format!(
                            "concat rows: widths {c0} and {c} differ"
                        )));
                    }
                    rows += n;
                    out.extend_from_slice(&p.data());
                }
                Ok(Tensor::from_op(out, vec![rows, c0], Op::Concat { parts: parts.to_vec(), axis }))
            }
            1 => {
                let mut widths = Vec::with_capacity(parts.len());
                for p in parts {
                    let (n, c) = p.dims2()?;
                    if n != n0 {
                        return Err(Error::dim(format!(
                            "concat cols: row counts {n0} and {n} differ"
                        )));
                    }
                    widths.push(c);
                }
                let total: usize = widths.iter().sum();
                let mut out = vec![0.0f32; n0 * total];
                let mut offset = 0;
                for (p, &w) in parts.iter().zip(&widths) {
                    let d = p.data();
                    for r in 0..n0 {
                        out[r * total + offset..r * total + offset + w]
                            .copy_from_slice(&d[r * w..(r + 1) * w]);
                    }
                    offset += w;
                }
                Ok(Tensor::from_op(out, vec![n0, total], Op::Concat { parts: parts.to_vec(), axis }))
            }
            _ => Err(Error::dim(format!("concat: axis {axis} unsupported"))),
        }
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&self) -> Tensor {
        let s: f32 = self.data().iter().sum();
        Tensor::from_op(vec![s], vec![1], Op::Sum(self.clone()))
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel() as f32;
        self.sum().scale(1.0 / n)
    }

    /// `[n×c] → [1×c]` column means.
    pub fn mean_rows(&self) -> Result<Tensor> {
        let (n, c) = self.dims2()?;
        let x = self.data();
        // f64 accumulation keeps the mean of identical rows exact.
        let mut acc = vec![0.0f64; c];
        for row in x.chunks(c) {
            for (o, v) in acc.iter_mut().zip(row) {
                *o += *v as f64;
            }
        }
        let out = acc.into_iter().map(|o| (o / n as f64) as f32).collect();
        drop(x);
        Ok(Tensor::from_op(out, vec![1, c], Op::MeanRows(self.clone())))
    }

    /// `[n×c] → [n×1]` row sums.
    pub fn sum_cols(&self) -> Result<Tensor> {
        let (n, c) = self.dims2()?;
        let out = self.data().chunks(c).map(|r| r.iter().sum()).collect();
        Ok(Tensor::from_op(out, vec![n, 1], Op::SumCols(self.clone())))
    }

    /// Rescales each row of a 2-D tensor to unit L2 norm. Norms below `floor`
    /// are replaced by `floor`.
    pub fn l2_normalize_rows(&self, floor: f32) -> Result<Tensor> {
        let (_, c) = self.dims2()?;
        let x = self.data();
        let mut out = Vec::with_capacity(x.len());
        let mut norms = Vec::new();
        for row in x.chunks(c) {
            let norm = row.iter().map(|v| v * v).sum::<f32>().sqrt().max(floor);
            norms.push(norm);
            out.extend(row.iter().map(|v| v / norm));
        }
        drop(x);
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            Op::L2Normalize { x: self.clone(), norms, floor },
        ))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `[n×c]` logits.
    pub fn cross_entropy(&self, targets: &[usize]) -> Result<Tensor> {
        let (n, c) = self.dims2()?;
        if targets.len() != n {
            return Err(Error::dim(format!(
                "cross_entropy: {} targets for {n} rows",
                targets.len()
            )));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::dim(format!("cross_entropy: target {t} out of range for {c} classes")));
        }
        let x = self.data();
        let mut probs = vec![0.0f32; n * c];
        let mut loss = 0.0f64;
        for (r, row) in x.chunks(c).enumerate() {
            let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v));
            let mut sum = 0.0f64;
            for (j, &v) in row.iter().enumerate() {
                let e = ((v - max) as f64).exp();
                probs[r * c + j] = e as f32;
                sum += e;
            }
            for p in &mut probs[r * c..(r + 1) * c] {
                *p = (*p as f64 / sum) as f32;
            }
            let t = targets[r];
            // ln(sum) via ln_1p: the max term contributes exactly 1.
            loss += (sum - 1.0).ln_1p() - (row[t] - max) as f64;
        }
        drop(x);
        let loss = (loss / n as f64) as f32;
        Ok(Tensor::from_op(
            vec![loss],
            vec![1],
            Op::CrossEntropy { logits: self.clone(), targets: targets.to_vec(), probs },
        ))
    }

    // ----------------------------------------------------------- backward

    /// Reverse-mode sweep from this scalar. Gradients add onto whatever the
    /// reached tensors already hold; call [`Tensor::zero_grad`] between steps.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        let mut pending: HashMap<*const Node, Vec<f32>> = HashMap::new();
        pending.insert(Arc::as_ptr(&self.0), vec![1.0]);
        for t in order.iter().rev() {
            let Some(g) = pending.remove(&Arc::as_ptr(&t.0)) else { continue };
            t.backprop(&g, &mut pending);
            let mut slot = t.0.grad.write().expect("tensor grad lock poisoned");
            match slot.as_mut() {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, v)| *a += v),
                None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut seen: HashSet<*const Node> = HashSet::new();
        // (node, children pushed?)
        let mut stack = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(Arc::as_ptr(&t.0)) {
                continue;
            }
            stack.push((t.clone(), true));
            for p in t.0.op.parents() {
                if p.requires_grad() && !seen.contains(&Arc::as_ptr(&p.0)) {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }

    fn backprop(&self, g: &[f32], pending: &mut HashMap<*const Node, Vec<f32>>) {
        let mut send = |t: &Tensor, contrib: Vec<f32>| {
            if !t.requires_grad() {
                return;
            }
            match pending.get_mut(&Arc::as_ptr(&t.0)) {
                Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, v)| *a += v),
                None => {
                    pending.insert(Arc::as_ptr(&t.0), contrib);
                }
            }
        };
        match &self.0.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (a.shape()[0], a.shape()[1]);
                let n = b.shape()[1];
                if a.requires_grad() {
                    let mut da = vec![0.0f32; m * k];
                    gemm(m, n, k, g, false, &b.data(), true, &mut da);
                    send(a, da);
                }
                if b.requires_grad() {
                    let mut db = vec![0.0f32; k * n];
                    gemm(k, m, n, &a.data(), true, g, false, &mut db);
                    send(b, db);
                }
            }
            Op::Add(a, b) => {
                send(a, g.to_vec());
                send(b, g.to_vec());
            }
            Op::Sub(a, b) => {
                send(a, g.to_vec());
                send(b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                if a.requires_grad() {
                    send(a, zip_map(g, &b.data(), |g, b| g * b));
                }
                if b.requires_grad() {
                    send(b, zip_map(g, &a.data(), |g, a| g * a));
                }
            }
            Op::AddBias(a, b) => {
                send(a, g.to_vec());
                if b.requires_grad() {
                    let c = b.numel();
                    let mut db = vec![0.0f32; c];
                    for row in g.chunks(c) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    send(b, db);
                }
            }
            Op::Scale(a, f) => send(a, g.iter().map(|v| v * f).collect()),
            Op::Relu(a) => {
                let x = a.data();
                let d = g.iter().zip(x.iter()).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect();
                drop(x);
                send(a, d);
            }
            Op::Sigmoid(a) => {
                let y = self.data();
                let d = g.iter().zip(y.iter()).map(|(g, y)| g * y * (1.0 - y)).collect();
                drop(y);
                send(a, d);
            }
            Op::Softmax { x, len, inner } => {
                let y = self.data();
                let (len, inner) = (*len, *inner);
                let outer = y.len() / (len * inner);
                let mut dx = vec![0.0f32; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let dot: f32 = (0..len).map(|j| g[base + j * inner] * y[base + j * inner]).sum();
                        for j in 0..len {
                            let at = base + j * inner;
                            dx[at] = y[at] * (g[at] - dot);
                        }
                    }
                }
                drop(y);
                send(x, dx);
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let c = gamma.numel();
                let gm = gamma.data();
                if x.requires_grad() {
                    let mut dx = vec![0.0f32; g.len()];
                    let cf = c as f32;
                    for (r, (grow, hrow)) in g.chunks(c).zip(xhat.chunks(c)).enumerate() {
                        let mut sum_d = 0.0f32;
                        let mut sum_dh = 0.0f32;
                        for j in 0..c {
                            let d = grow[j] * gm[j];
                            sum_d += d;
                            sum_dh += d * hrow[j];
                        }
                        for j in 0..c {
                            let d = grow[j] * gm[j];
                            dx[r * c + j] = rstd[r] / cf * (cf * d - sum_d - hrow[j] * sum_dh);
                        }
                    }
                    send(x, dx);
                }
                drop(gm);
                if gamma.requires_grad() {
                    let mut dg = vec![0.0f32; c];
                    for (grow, hrow) in g.chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            dg[j] += grow[j] * hrow[j];
                        }
                    }
                    send(gamma, dg);
                }
                if beta.requires_grad() {
                    let mut db = vec![0.0f32; c];
                    for grow in g.chunks(c) {
                        db.iter_mut().zip(grow).for_each(|(d, v)| *d += v);
                    }
                    send(beta, db);
                }
            }
            Op::Gather { x, index } => {
                let mut dx = vec![0.0f32; x.numel()];
                for (&i, &gv) in index.iter().zip(g) {
                    if i != GATHER_ZERO {
                        dx[i as usize] += gv;
                    }
                }
                send(x, dx);
            }
            Op::Concat { parts, axis } => match axis {
                0 => {
                    let mut offset = 0;
                    for p in parts {
                        let n = p.numel();
                        send(p, g[offset..offset + n].to_vec());
                        offset += n;
                    }
                }
                _ => {
                    let total = self.shape()[1];
                    let rows = self.shape()[0];
                    let mut offset = 0;
                    for p in parts {
                        let w = p.shape()[1];
                        if p.requires_grad() {
                            let mut d = Vec::with_capacity(rows * w);
                            for r in 0..rows {
                                d.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                            }
                            send(p, d);
                        }
                        offset += w;
                    }
                }
            },
            Op::Sum(a) => send(a, vec![g[0]; a.numel()]),
            Op::MeanRows(a) => {
                let (n, c) = (a.shape()[0], a.shape()[1]);
                let inv = 1.0 / n as f32;
                let mut d = Vec::with_capacity(n * c);
                for _ in 0..n {
                    d.extend(g.iter().map(|v| v * inv));
                }
                send(a, d);
            }
            Op::SumCols(a) => {
                let c = a.shape()[1];
                let d = g.iter().flat_map(|&v| std::iter::repeat(v).take(c)).collect();
                send(a, d);
            }
            Op::L2Normalize { x, norms, floor } => {
                let y = self.data();
                let c = x.shape()[1];
                let mut dx = vec![0.0f32; y.len()];
                for (r, &norm) in norms.iter().enumerate() {
                    let row = r * c..(r + 1) * c;
                    if norm > *floor {
                        let dot: f32 = g[row.clone()].iter().zip(&y[row.clone()]).map(|(a, b)| a * b).sum();
                        for j in row {
                            dx[j] = (g[j] - y[j] * dot) / norm;
                        }
                    } else {
                        for j in row {
                            dx[j] = g[j] / norm;
                        }
                    }
                }
                drop(y);
                send(x, dx);
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let n = targets.len();
                let c = probs.len() / n;
                let scale = g[0] / n as f32;
                let mut d: Vec<f32> = probs.iter().map(|p| p * scale).collect();
                for (r, &t) in targets.iter().enumerate() {
                    d[r * c + t] -= scale;
                }
                send(logits, d);
            }
            Op::Reshape(a) | Op::StraightThrough(a) => send(a, g.to_vec()),
        }
    }
}

/// Row-wise layer normalization of `[n×c]` with affine `gamma`, `beta`.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<Tensor> {
    let (n, c) = x.dims2()?;
    if gamma.numel() != c || beta.numel() != c {
        return Err(Error::dim(format!(
            "layer_norm: gamma {:?} / beta {:?} do not match width {c}",
            gamma.shape(),
            beta.shape()
        )));
    }
    let xd = x.data();
    let gd = gamma.data();
    let bd = beta.data();
    let mut out = vec![0.0f32; n * c];
    let mut xhat = vec![0.0f32; n * c];
    let mut rstd = vec![0.0f32; n];
    for r in 0..n {
        let row = &xd[r * c..(r + 1) * c];
        let mean = row.iter().sum::<f32>() / c as f32;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / c as f32;
        let rs = 1.0 / (var + eps).sqrt();
        rstd[r] = rs;
        for j in 0..c {
            let h = (row[j] - mean) * rs;
            xhat[r * c + j] = h;
            out[r * c + j] = h * gd[j] + bd[j];
        }
    }
    drop((xd, gd, bd));
    Ok(Tensor::from_op(
        out,
        vec![n, c],
        Op::LayerNorm { x: x.clone(), gamma: gamma.clone(), beta: beta.clone(), xhat, rstd },
    ))
}

pub(crate) fn sigmoid(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn zip_map(a: &[f32], b: &[f32], f: impl Fn(f32, f32) -> f32) -> Vec<f32> {
    a.iter().zip(b).map(|(&a, &b)| f(a, b)).collect()
}

/// `out = op(a) · op(b)` where `a` is stored `[m×k]` (or `[k×m]` when
/// transposed) and `b` is `[k×n]` (or `[n×k]`).
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f32], ta: bool, b: &[f32], tb: bool, out: &mut [f32]) {
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths cover every element addressed by the strides above.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.data();
        let preview: Vec<f32> = data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("data", &preview)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul() {
        let eye = Tensor::new(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]).unwrap();
        let m = Tensor::new(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        assert_eq!(eye.matmul(&m).unwrap().to_vec(), m.to_vec());
    }

    #[test]
    fn small_matmul() {
        let a = Tensor::new(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        let b = Tensor::new(vec![1.0, 1.0], &[2, 1]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.to_vec(), vec![3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3] × [2, 3]"), "{msg}");
    }

    #[test]
    fn uniform_softmax() {
        let x = Tensor::zeros(&[3]);
        for v in x.softmax(0).unwrap().to_vec() {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
    }

    #[test]
    fn softmax_matches_direct_evaluation() {
        let x = Tensor::new(vec![1.0, 2.0, 3.0], &[3]).unwrap();
        let y = x.softmax(0).unwrap().to_vec();
        let denom: f64 = (1..=3).map(|v| (v as f64).exp()).sum();
        for (i, v) in y.iter().enumerate() {
            let expect = ((i + 1) as f64).exp() / denom;
            assert!((*v as f64 - expect).abs() < 1e-7);
        }
    }

    #[test]
    fn softmax_along_first_axis() {
        let x = Tensor::new(vec![0.0, 5.0, 0.0, -5.0], &[2, 2]).unwrap();
        let y = x.softmax(0).unwrap().to_vec();
        assert!((y[0] - 0.5).abs() < 1e-7 && (y[2] - 0.5).abs() < 1e-7);
        assert!((y[1] + y[3] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn sum_backward_gives_ones() {
        let x = Tensor::param(vec![0.5, -1.0, 3.0], &[3]).unwrap();
        x.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 3]);
    }

    #[test]
    fn square_backward() {
        let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        x.mul(&x).unwrap().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn non_scalar_backward_is_rejected() {
        let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        assert!(matches!(x.relu().backward(), Err(Error::Contract(_))));
    }

    #[test]
    fn constant_graph_keeps_no_history() {
        let a = Tensor::new(vec![1.0; 4], &[2, 2]).unwrap();
        let b = a.matmul(&a).unwrap().relu();
        assert!(b.is_leaf());
        assert!(!b.requires_grad());
    }

    #[test]
    fn layer_norm_of_constant_row_is_zero() {
        let x = Tensor::full(&[1, 4], 3.0);
        let g = Tensor::full(&[4], 1.0);
        let b = Tensor::zeros(&[4]);
        let y = layer_norm(&x, &g, &b, 1e-5).unwrap();
        assert!(y.to_vec().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gather_zero_sentinel() {
        let x = Tensor::new(vec![1.0, 2.0], &[2]).unwrap();
        let y = x.gather(vec![1, GATHER_ZERO, 0].into(), &[3]).unwrap();
        assert_eq!(y.to_vec(), vec![2.0, 0.0, 1.0]);
    }

    #[test]
    fn cross_entropy_uniform() {
        let x = Tensor::zeros(&[2, 4]);
        let l = x.cross_entropy(&[0, 3]).unwrap().item();
        assert!((l - 4f32.ln()).abs() < 1e-6);
    }
}
