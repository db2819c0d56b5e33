//! Matrix-level reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a tape of 2-D nodes built in evaluation order. Parameter
//! leaves remember which store entry they were read from, so
//! [`Graph::backward`] can scatter their gradients straight into a flat
//! [`GradientRecord`]. Vectors are `1 x n` rows.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::store::{GradientRecord, Granularity, ParameterStore};

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param {
        entry: usize,
    },
    MatMul(usize, usize),
    /// `a · bᵀ`
    MatMulT(usize, usize),
    Add(usize, usize),
    /// `[n, m] + [1, m]` broadcast over rows.
    AddRow(usize, usize),
    Scale(usize, f64),
    /// Elementwise product with a constant mask (dropout).
    MaskMul(usize, Vec<f64>),
    Tanh(usize),
    Gelu(usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gather {
        table: usize,
        ids: Vec<usize>,
    },
    SliceCols {
        x: usize,
        start: usize,
    },
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    CausalSoftmax(usize),
    /// Weighted negative log-likelihood; caches the row softmax.
    CrossEntropy {
        logits: usize,
        targets: Vec<Target>,
        probs: Vec<f64>,
    },
    /// `-Σ_r w_r Σ_c q_rc log softmax(z_r / T)_c` against fixed soft targets.
    SoftCrossEntropy {
        logits: usize,
        rows: Vec<(usize, f64)>,
        targets: Vec<f64>,
        temperature: f64,
        probs: Vec<f64>,
    },
}

/// One hard label: `weight * -log softmax(logits[row])[class]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub row: usize,
    pub class: usize,
    pub weight: f64,
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    rows: usize,
    cols: usize,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * core::f64::consts::FRAC_1_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * core::f64::consts::FRAC_1_SQRT_2));
    let pdf = libm::exp(-0.5 * x * x) / libm::sqrt(2.0 * core::f64::consts::PI);
    cdf + x * pdf
}

/// Row-wise softmax of `z / t` into `out`.
pub fn softmax_row(z: &[f64], t: f64, out: &mut [f64]) {
    let max = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v / t));
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = libm::exp(v / t - max);
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// `log softmax(z / t)[c]`.
pub fn log_softmax_at(z: &[f64], t: f64, c: usize) -> f64 {
    let max = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v / t));
    let lse = libm::log(z.iter().map(|&v| libm::exp(v / t - max)).sum::<f64>()) + max;
    z[c] / t - lse
}

fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn matmul_t(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..m {
            let brow = &b[j * k..(j + 1) * k];
            out[i * m + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Vec<f64>, rows: usize, cols: usize, op: Op) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node { value, rows, cols, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        (self.nodes[v.0].rows, self.nodes[v.0].cols)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn input(&mut self, value: Vec<f64>, rows: usize, cols: usize) -> Result<Var> {
        if value.len() != rows * cols {
            bail!(Shape, "input of {} values is not {}x{}", value.len(), rows, cols);
        }
        Ok(self.push(value, rows, cols, Op::Input))
    }

    /// Reads store entry `entry` as a matrix leaf (1-D entries become rows).
    pub fn param(&mut self, store: &ParameterStore, entry: usize) -> Var {
        let info = &store.entries()[entry];
        let cols = *info.shape.last().unwrap_or(&1);
        let rows = info.len() / cols;
        self.push(store.entry_values(entry).to_vec(), rows, cols, Op::Param { entry })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.dims(a);
        let (k2, m) = self.dims(b);
        if k != k2 {
            bail!(Shape, "matmul {}x{} by {}x{}", n, k, k2, m);
        }
        let v = matmul(self.value(a), self.value(b), n, k, m);
        Ok(self.push(v, n, m, Op::MatMul(a.0, b.0)))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.dims(a);
        let (m, k2) = self.dims(b);
        if k != k2 {
            bail!(Shape, "matmul_t {}x{} by ({}x{})ᵀ", n, k, m, k2);
        }
        let v = matmul_t(self.value(a), self.value(b), n, k, m);
        Ok(self.push(v, n, m, Op::MatMulT(a.0, b.0)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.dims(a) != self.dims(b) {
            bail!(Shape, "add {:?} and {:?}", self.dims(a), self.dims(b));
        }
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let (r, c) = self.dims(a);
        Ok(self.push(v, r, c, Op::Add(a.0, b.0)))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (n, m) = self.dims(a);
        if self.dims(row) != (1, m) {
            bail!(Shape, "row broadcast of {:?} onto {}x{}", self.dims(row), n, m);
        }
        let bias = self.value(row);
        let v = self.value(a).chunks(m).flat_map(|r| r.iter().zip(bias).map(|(x, b)| x + b)).collect();
        Ok(self.push(v, n, m, Op::AddRow(a.0, row.0)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).iter().map(|x| x * s).collect();
        let (r, c) = self.dims(a);
        self.push(v, r, c, Op::Scale(a.0, s))
    }

    pub fn mask_mul(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.value(a).len() {
            bail!(Shape, "mask length {} for {:?}", mask.len(), self.dims(a));
        }
        let v = self.value(a).iter().zip(&mask).map(|(x, m)| x * m).collect();
        let (r, c) = self.dims(a);
        Ok(self.push(v, r, c, Op::MaskMul(a.0, mask)))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|&x| libm::tanh(x)).collect();
        let (r, c) = self.dims(a);
        self.push(v, r, c, Op::Tanh(a.0))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|&x| gelu(x)).collect();
        let (r, c) = self.dims(a);
        self.push(v, r, c, Op::Gelu(a.0))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (n, m) = self.dims(x);
        if self.dims(gamma) != (1, m) || self.dims(beta) != (1, m) {
            bail!(Shape, "layer norm affine parameters must be 1x{}", m);
        }
        let xs = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        let mut xhat = vec![0.0; n * m];
        let mut rstd = vec![0.0; n];
        let mut out = vec![0.0; n * m];
        for r in 0..n {
            let row = &xs[r * m..(r + 1) * m];
            let mean = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let rs = 1.0 / libm::sqrt(var + LAYER_NORM_EPS);
            rstd[r] = rs;
            for c in 0..m {
                let h = (row[c] - mean) * rs;
                xhat[r * m + c] = h;
                out[r * m + c] = g[c] * h + b[c];
            }
        }
        Ok(self.push(out, n, m, Op::LayerNorm { x: x.0, gamma: gamma.0, beta: beta.0, xhat, rstd }))
    }

    /// Selects rows `ids` of `table`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (n, m) = self.dims(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= n) {
            bail!(Sample, "row id {} out of range for a table of {} rows", bad, n);
        }
        let t = self.value(table);
        let v = ids.iter().flat_map(|&i| t[i * m..(i + 1) * m].iter().copied()).collect();
        Ok(self.push(v, ids.len(), m, Op::Gather { table: table.0, ids: ids.to_vec() }))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, m) = self.dims(x);
        if start + len > m || len == 0 {
            bail!(Shape, "column slice {}..{} of {} columns", start, start + len, m);
        }
        let xs = self.value(x);
        let v = (0..n).flat_map(|r| xs[r * m + start..r * m + start + len].iter().copied()).collect();
        Ok(self.push(v, n, len, Op::SliceCols { x: x.0, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let n = self.dims(parts[0]).0;
        if parts.iter().any(|&p| self.dims(p).0 != n) {
            bail!(Shape, "column concat with differing row counts");
        }
        let m: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut v = Vec::with_capacity(n * m);
        for r in 0..n {
            for &p in parts {
                let c = self.dims(p).1;
                v.extend_from_slice(&self.value(p)[r * c..(r + 1) * c]);
            }
        }
        Ok(self.push(v, n, m, Op::ConcatCols(parts.iter().map(|p| p.0).collect())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let m = self.dims(parts[0]).1;
        if parts.iter().any(|&p| self.dims(p).1 != m) {
            bail!(Shape, "row concat with differing column counts");
        }
        let mut v = Vec::new();
        for &p in parts {
            v.extend_from_slice(self.value(p));
        }
        let n = v.len() / m;
        Ok(self.push(v, n, m, Op::ConcatRows(parts.iter().map(|p| p.0).collect())))
    }

    /// Row-wise softmax where row `r` only sees columns `0..=r`.
    pub fn causal_softmax(&mut self, x: Var) -> Result<Var> {
        let (n, m) = self.dims(x);
        if n != m {
            bail!(Shape, "causal softmax needs a square matrix, got {}x{}", n, m);
        }
        let xs = self.value(x);
        let mut v = vec![0.0; n * m];
        for r in 0..n {
            softmax_row(&xs[r * m..r * m + r + 1], 1.0, &mut v[r * m..r * m + r + 1]);
        }
        Ok(self.push(v, n, m, Op::CausalSoftmax(x.0)))
    }

    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<Target>) -> Result<Var> {
        let (n, m) = self.dims(logits);
        let zs = self.value(logits);
        let mut probs = vec![0.0; n * m];
        for r in 0..n {
            softmax_row(&zs[r * m..(r + 1) * m], 1.0, &mut probs[r * m..(r + 1) * m]);
        }
        let mut loss = 0.0;
        for t in &targets {
            if t.row >= n || t.class >= m {
                bail!(Sample, "target ({}, {}) outside {}x{} logits", t.row, t.class, n, m);
            }
            loss -= t.weight * log_softmax_at(&zs[t.row * m..(t.row + 1) * m], 1.0, t.class);
        }
        Ok(self.push(vec![loss], 1, 1, Op::CrossEntropy { logits: logits.0, targets, probs }))
    }

    /// Distillation term against fixed soft targets (`targets` is one
    /// probability row per entry of `rows`).
    pub fn soft_cross_entropy(&mut self, logits: Var, rows: Vec<(usize, f64)>, targets: Vec<f64>, temperature: f64) -> Result<Var> {
        let (n, m) = self.dims(logits);
        if targets.len() != rows.len() * m {
            bail!(Shape, "soft targets have {} values for {} rows of {}", targets.len(), rows.len(), m);
        }
        let zs = self.value(logits);
        let mut probs = vec![0.0; rows.len() * m];
        let mut loss = 0.0;
        for (k, &(r, w)) in rows.iter().enumerate() {
            if r >= n {
                bail!(Shape, "soft target row {} outside {} rows", r, n);
            }
            let z = &zs[r * m..(r + 1) * m];
            softmax_row(z, temperature, &mut probs[k * m..(k + 1) * m]);
            for c in 0..m {
                let q = targets[k * m + c];
                if q != 0.0 {
                    loss -= w * q * log_softmax_at(z, temperature, c);
                }
            }
        }
        Ok(self.push(vec![loss], 1, 1, Op::SoftCrossEntropy { logits: logits.0, rows, targets, temperature, probs }))
    }

    /// Backpropagates from scalar `loss` and scatters parameter gradients
    /// into a record of `store.len()` values.
    pub fn backward(&self, loss: Var, store: &ParameterStore, granularity: Granularity) -> Result<GradientRecord> {
        if self.dims(loss) != (1, 1) {
            bail!(Shape, "backward needs a scalar loss, got {:?}", self.dims(loss));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut out = GradientRecord::zeros(store.len(), granularity);

        fn acc(grads: &mut [Option<Vec<f64>>], idx: usize, len: usize) -> &mut Vec<f64> {
            grads[idx].get_or_insert_with(|| vec![0.0; len])
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let (n, m) = (node.rows, node.cols);
            match &node.op {
                Op::Input => {}
                Op::Param { entry } => {
                    let r = store.entries()[*entry].range();
                    for (o, v) in out.values[r].iter_mut().zip(&g) {
                        *o += v;
                    }
                }
                Op::MatMul(a, b) => {
                    let k = self.nodes[*a].cols;
                    // dA = G Bᵀ, dB = Aᵀ G
                    let da = matmul_t(&g, &self.nodes[*b].value, n, m, k);
                    let av = &self.nodes[*a].value;
                    let mut db = vec![0.0; k * m];
                    for r in 0..n {
                        for p in 0..k {
                            let x = av[r * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for c in 0..m {
                                db[p * m + c] += x * g[r * m + c];
                            }
                        }
                    }
                    add_into(acc(&mut grads, *a, n * k), &da);
                    add_into(acc(&mut grads, *b, k * m), &db);
                }
                Op::MatMulT(a, b) => {
                    let k = self.nodes[*a].cols;
                    // out = A Bᵀ with B: [m, k]; dA = G B, dB = Gᵀ A
                    let da = matmul(&g, &self.nodes[*b].value, n, m, k);
                    let av = &self.nodes[*a].value;
                    let mut db = vec![0.0; m * k];
                    for r in 0..n {
                        for c in 0..m {
                            let gv = g[r * m + c];
                            if gv == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                db[c * k + p] += gv * av[r * k + p];
                            }
                        }
                    }
                    add_into(acc(&mut grads, *a, n * k), &da);
                    add_into(acc(&mut grads, *b, m * k), &db);
                }
                Op::Add(a, b) => {
                    add_into(acc(&mut grads, *a, n * m), &g);
                    add_into(acc(&mut grads, *b, n * m), &g);
                }
                Op::AddRow(a, b) => {
                    add_into(acc(&mut grads, *a, n * m), &g);
                    let gb = acc(&mut grads, *b, m);
                    for r in 0..n {
                        for c in 0..m {
                            gb[c] += g[r * m + c];
                        }
                    }
                }
                Op::Scale(a, s) => {
                    let ga = acc(&mut grads, *a, n * m);
                    for (o, v) in ga.iter_mut().zip(&g) {
                        *o += s * v;
                    }
                }
                Op::MaskMul(a, mask) => {
                    let ga = acc(&mut grads, *a, n * m);
                    for ((o, v), k) in ga.iter_mut().zip(&g).zip(mask) {
                        *o += k * v;
                    }
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let ga = acc(&mut grads, *a, n * m);
                    for ((o, v), t) in ga.iter_mut().zip(&g).zip(y) {
                        *o += v * (1.0 - t * t);
                    }
                }
                Op::Gelu(a) => {
                    let x = &self.nodes[*a].value;
                    let dx: Vec<f64> = g.iter().zip(x).map(|(v, &xv)| v * gelu_grad(xv)).collect();
                    add_into(acc(&mut grads, *a, n * m), &dx);
                }
                Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                    let gv = &self.nodes[*gamma].value;
                    let mut dx = vec![0.0; n * m];
                    let mut dgamma = vec![0.0; m];
                    let mut dbeta = vec![0.0; m];
                    for r in 0..n {
                        let mut sum_d = 0.0;
                        let mut sum_dx = 0.0;
                        for c in 0..m {
                            let dy = g[r * m + c];
                            let h = xhat[r * m + c];
                            dgamma[c] += dy * h;
                            dbeta[c] += dy;
                            let dh = dy * gv[c];
                            sum_d += dh;
                            sum_dx += dh * h;
                        }
                        let inv_m = 1.0 / m as f64;
                        for c in 0..m {
                            let dh = g[r * m + c] * gv[c];
                            let h = xhat[r * m + c];
                            dx[r * m + c] = rstd[r] * (dh - inv_m * sum_d - h * inv_m * sum_dx);
                        }
                    }
                    add_into(acc(&mut grads, *x, n * m), &dx);
                    add_into(acc(&mut grads, *gamma, m), &dgamma);
                    add_into(acc(&mut grads, *beta, m), &dbeta);
                }
                Op::Gather { table, ids } => {
                    let len = self.nodes[*table].value.len();
                    let gt = acc(&mut grads, *table, len);
                    for (r, &id) in ids.iter().enumerate() {
                        for c in 0..m {
                            gt[id * m + c] += g[r * m + c];
                        }
                    }
                }
                Op::SliceCols { x, start } => {
                    let xm = self.nodes[*x].cols;
                    let gx = acc(&mut grads, *x, n * xm);
                    for r in 0..n {
                        for c in 0..m {
                            gx[r * xm + start + c] += g[r * m + c];
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let pc = self.nodes[p].cols;
                        let gp = acc(&mut grads, p, n * pc);
                        for r in 0..n {
                            for c in 0..pc {
                                gp[r * pc + c] += g[r * m + off + c];
                            }
                        }
                        off += pc;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let len = self.nodes[p].value.len();
                        add_into(acc(&mut grads, p, len), &g[off..off + len]);
                        off += len;
                    }
                }
                Op::CausalSoftmax(a) => {
                    let p = &node.value;
                    let ga = acc(&mut grads, *a, n * m);
                    for r in 0..n {
                        let dot: f64 = (0..=r).map(|c| p[r * m + c] * g[r * m + c]).sum();
                        for c in 0..=r {
                            ga[r * m + c] += p[r * m + c] * (g[r * m + c] - dot);
                        }
                    }
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let (ln, lm) = (self.nodes[*logits].rows, self.nodes[*logits].cols);
                    let gl = acc(&mut grads, *logits, ln * lm);
                    let up = g[0];
                    for t in targets {
                        let row = t.row * lm;
                        for c in 0..lm {
                            gl[row + c] += up * t.weight * probs[row + c];
                        }
                        gl[row + t.class] -= up * t.weight;
                    }
                }
                Op::SoftCrossEntropy { logits, rows, targets, temperature, probs } => {
                    let (ln, lm) = (self.nodes[*logits].rows, self.nodes[*logits].cols);
                    let gl = acc(&mut grads, *logits, ln * lm);
                    let up = g[0];
                    for (k, &(r, w)) in rows.iter().enumerate() {
                        let qsum: f64 = targets[k * lm..(k + 1) * lm].iter().sum();
                        for c in 0..lm {
                            let d = (qsum * probs[k * lm + c] - targets[k * lm + c]) / temperature;
                            gl[r * lm + c] += up * w * d;
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
