//! Independent reference computations for tests.
//!
//! Nothing here shares code with the production paths it checks: the MLP
//! gradients are hand-written backprop, statistics are column-wise loops
//! over materialized gradients, and the quadratic program is solved by
//! enumerating active sets.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::importance::{EstimatorTag, ImportanceMap};
use crate::model::{Model, ModelFamily, Sample};
use crate::store::{Granularity, ParameterStore};

fn plain_mlp(model: &Model, store: &ParameterStore) -> bool {
    model.family() == ModelFamily::Mlp && !model.config().layer_norm && store.adapters().is_empty()
}

struct Layer {
    w: usize,
    b: usize,
    out: usize,
    inp: usize,
}

fn mlp_layers(model: &Model, store: &ParameterStore) -> Result<Vec<Layer>> {
    let sizes = &model.config().sizes;
    let mut layers = Vec::new();
    for l in 0..sizes.len() - 1 {
        let prefix = if l == sizes.len() - 2 { "head".into() } else { format!("layers.{}.linear", l) };
        layers.push(Layer {
            w: store.entry(&format!("{}.weight", prefix))?.offset,
            b: store.entry(&format!("{}.bias", prefix))?.offset,
            out: sizes[l + 1],
            inp: sizes[l],
        });
    }
    Ok(layers)
}

/// Inputs of every linear layer for one sample, then the logits.
fn mlp_forward(layers: &[Layer], theta: &[f64], x: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut inputs = vec![x.to_vec()];
    let mut logits = Vec::new();
    for (li, layer) in layers.iter().enumerate() {
        let a = &inputs[li];
        let mut z = vec![0.0; layer.out];
        for (i, zi) in z.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in 0..layer.inp {
                acc += theta[layer.w + i * layer.inp + j] * a[j];
            }
            *zi = acc + theta[layer.b + i];
        }
        if li + 1 == layers.len() {
            logits = z;
        } else {
            inputs.push(z.iter().map(|v| libm::tanh(*v)).collect());
        }
    }
    (inputs, logits)
}

fn mlp_sample_grad(layers: &[Layer], theta: &[f64], x: &[f64], label: usize) -> Vec<f64> {
    let (inputs, logits) = mlp_forward(layers, theta, x);
    let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| libm::exp(z - top)).collect();
    let total: f64 = exps.iter().sum();
    let mut delta: Vec<f64> = exps.iter().map(|e| e / total).collect();
    delta[label] -= 1.0;
    let mut grad = vec![0.0; theta.len()];
    for li in (0..layers.len()).rev() {
        let layer = &layers[li];
        let a = &inputs[li];
        for i in 0..layer.out {
            grad[layer.b + i] = delta[i];
            for j in 0..layer.inp {
                grad[layer.w + i * layer.inp + j] = delta[i] * a[j];
            }
        }
        if li > 0 {
            let mut prev = vec![0.0; layer.inp];
            for (j, p) in prev.iter_mut().enumerate() {
                let mut acc = 0.0;
                for i in 0..layer.out {
                    acc += theta[layer.w + i * layer.inp + j] * delta[i];
                }
                *p = acc * (1.0 - a[j] * a[j]);
            }
            delta = prev;
        }
    }
    grad
}

/// One gradient vector per sample. Plain MLPs use hand-written backprop;
/// other models fall back to single-sample autodiff passes.
pub fn per_sample_gradients(model: &Model, store: &ParameterStore, data: &[Sample]) -> Result<Vec<Vec<f64>>> {
    if plain_mlp(model, store) {
        let layers = mlp_layers(model, store)?;
        return data
            .iter()
            .map(|s| match s {
                Sample::Labeled { features, label } => Ok(mlp_sample_grad(&layers, store.values(), features, *label)),
                Sample::Sequence { .. } => bail!(Sample, "sequence sample for an mlp"),
            })
            .collect();
    }
    let mut out = Vec::with_capacity(data.len());
    for s in data {
        let (_, recs) = model.loss_and_grad(store, core::slice::from_ref(s), Granularity::PerSample)?;
        out.push(recs.into_iter().next().unwrap().values);
    }
    Ok(out)
}

/// Brute-force importance: materialize every per-sample gradient, then
/// reduce each parameter's column on its own.
pub fn importance_oracle(model: &Model, store: &ParameterStore, data: &[Sample], tag: EstimatorTag, xi: f64) -> Result<ImportanceMap> {
    if data.is_empty() {
        bail!(EmptyDataset, "oracle over an empty dataset");
    }
    if tag == EstimatorTag::MiguMagnitude {
        return migu_oracle(model, store, data);
    }
    let grads = per_sample_gradients(model, store, data)?;
    let n = data.len() as f64;
    let mut scores = vec![0.0; store.len()];
    for (i, score) in scores.iter_mut().enumerate() {
        let column: Vec<f64> = grads.iter().map(|g| g[i]).collect();
        let mean_sq = column.iter().map(|g| g * g).sum::<f64>() / n;
        *score = match tag {
            EstimatorTag::Fisher => mean_sq,
            _ => {
                let mean = column.iter().sum::<f64>() / n;
                libm::fabs(mean) / libm::sqrt(mean_sq + xi)
            }
        };
    }
    let xi = if tag == EstimatorTag::SecondOrder { xi } else { 0.0 };
    Ok(ImportanceMap { scores, estimator: tag, sample_count: data.len(), xi })
}

fn migu_oracle(model: &Model, store: &ParameterStore, data: &[Sample]) -> Result<ImportanceMap> {
    if !plain_mlp(model, store) {
        bail!(Config, "the magnitude oracle covers plain mlps only");
    }
    let layers = mlp_layers(model, store)?;
    let theta = store.values();
    let mut scores = vec![0.0; store.len()];
    for layer in &layers {
        for i in 0..layer.out {
            let mut total = 0.0;
            for s in data {
                let Sample::Labeled { features, .. } = s else { bail!(Sample, "sequence sample for an mlp") };
                let (inputs, _) = mlp_forward(&layers, theta, features);
                let a = &inputs[layers.iter().position(|l| l.w == layer.w).unwrap()];
                let h: f64 = (0..layer.inp).map(|j| theta[layer.w + i * layer.inp + j] * a[j]).sum();
                total += libm::fabs(h);
            }
            let score = total / data.len() as f64;
            for j in 0..layer.inp {
                scores[layer.w + i * layer.inp + j] = score;
            }
            scores[layer.b + i] = score;
        }
    }
    Ok(ImportanceMap { scores, estimator: EstimatorTag::MiguMagnitude, sample_count: data.len(), xi: 0.0 })
}

/// Largest relative difference `|a − b| / max(|a|, |b|)`, zero where both are
/// zero.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = libm::fabs(x - y);
            if d == 0.0 {
                0.0
            } else {
                d / libm::fmax(libm::fabs(*x), libm::fabs(*y))
            }
        })
        .fold(0.0, f64::max)
}

fn decompose(x: f64) -> (i128, i32) {
    let bits = x.to_bits();
    let sign = if bits >> 63 == 1 { -1 } else { 1 };
    let exp = ((bits >> 52) & 0x7ff) as i32;
    let frac = (bits & ((1u64 << 52) - 1)) as i128;
    if exp == 0 {
        (sign * frac, -1074)
    } else {
        (sign * (frac | (1i128 << 52)), exp - 1075)
    }
}

/// Correctly rounded `(Σ plus − Σ minus) / divisor`, computed in exact
/// integer arithmetic over the binary values of the inputs.
pub fn exact_affine(plus: &[f64], minus: &[f64], divisor: u64) -> f64 {
    let terms: Vec<(i128, i32)> = plus
        .iter()
        .map(|&x| decompose(x))
        .chain(minus.iter().map(|&x| {
            let (m, e) = decompose(x);
            (-m, e)
        }))
        .collect();
    let emin = terms.iter().map(|t| t.1).min().unwrap_or(0);
    let mut num: i128 = 0;
    for (m, e) in &terms {
        let shift = (e - emin) as u32;
        assert!(shift < 64, "exponent spread too wide for the exact oracle");
        num += m << shift;
    }
    if num == 0 {
        return 0.0;
    }
    let negative = num < 0;
    let mag = num.unsigned_abs();
    // scale so the quotient carries at least 55 significant bits
    let lead = 128 - mag.leading_zeros() as i32;
    let pre = (60 - lead + 64 - (divisor.leading_zeros() as i32)).max(0) as u32;
    assert!(lead + pre as i32 <= 127);
    let scaled = mag << pre;
    let (q, r) = (scaled / divisor as u128, scaled % divisor as u128);
    let qbits = 128 - q.leading_zeros() as i32;
    let drop = (qbits - 53).max(0) as u32;
    let mut kept = q >> drop;
    if drop > 0 {
        let rest = q & ((1u128 << drop) - 1);
        let half = 1u128 << (drop - 1);
        if rest > half || (rest == half && (r > 0 || kept & 1 == 1)) {
            kept += 1;
        }
    }
    let value = libm::ldexp(kept as f64, drop as i32 + emin - pre as i32);
    if negative {
        -value
    } else {
        value
    }
}

/// Minimizer of `‖x − g‖²` subject to `⟨x, c_k⟩ ≥ 0`, by trying every
/// active set and keeping the closest feasible KKT point. Each active set
/// is orthonormalized by modified Gram–Schmidt with reorthogonalization;
/// sets with dependent members are covered by their independent subsets.
pub fn qp_projection_oracle(g: &[f64], constraints: &[Vec<f64>]) -> Vec<f64> {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let m = constraints.len();
    assert!(m <= 16);
    // the zero vector is always feasible
    let mut best = (dot(g, g), vec![0.0; g.len()]);
    'subsets: for subset in 0u32..(1 << m) {
        let active: Vec<usize> = (0..m).filter(|k| subset & (1 << k) != 0).collect();
        let s = active.len();
        // c_i = Σ_j r[j][i] q_j
        let mut q: Vec<Vec<f64>> = Vec::with_capacity(s);
        let mut r = vec![vec![0.0; s]; s];
        for (i, &ci) in active.iter().enumerate() {
            let mut u = constraints[ci].clone();
            let norm0 = libm::sqrt(dot(&u, &u));
            for _ in 0..2 {
                for (j, qj) in q.iter().enumerate() {
                    let h = dot(qj, &u);
                    r[j][i] += h;
                    u.iter_mut().zip(qj).for_each(|(x, y)| *x -= h * y);
                }
            }
            let norm = libm::sqrt(dot(&u, &u));
            if !(norm > 1e-10 * norm0) {
                continue 'subsets;
            }
            r[i][i] = norm;
            q.push(u.iter().map(|x| x / norm).collect());
        }
        // x = g − QQᵀg, and Cλ = x − g gives Rλ = −Qᵀg
        let mut x = g.to_vec();
        let mut qg = vec![0.0; s];
        for _ in 0..2 {
            for (j, qj) in q.iter().enumerate() {
                let h = dot(qj, &x);
                qg[j] += h;
                x.iter_mut().zip(qj).for_each(|(a, b)| *a -= h * b);
            }
        }
        let mut lambda = vec![0.0; s];
        for i in (0..s).rev() {
            let t: f64 = (i + 1..s).map(|c| r[i][c] * lambda[c]).sum();
            lambda[i] = (-qg[i] - t) / r[i][i];
        }
        if lambda.iter().any(|&l| l < -1e-12) {
            continue;
        }
        if constraints.iter().any(|c| dot(&x, c) < -1e-10) {
            continue;
        }
        let dist: f64 = x.iter().zip(g).map(|(p, q)| (p - q) * (p - q)).sum();
        if dist < best.0 {
            best = (dist, x);
        }
    }
    best.1
}

/// Pearson r from raw sums, `(nΣxy − ΣxΣy) / sqrt((nΣx² − (Σx)²)(nΣy² − (Σy)²))`.
pub fn pearson_raw_sums(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (sx, sy) = (xs.iter().sum::<f64>(), ys.iter().sum::<f64>());
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let syy: f64 = ys.iter().map(|y| y * y).sum();
    (n * sxy - sx * sy) / libm::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy))
}

/// Spearman ρ for tie-free data, `1 − 6Σd² / (n(n² − 1))`.
pub fn spearman_no_ties(xs: &[f64], ys: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> { v.iter().map(|x| 1.0 + v.iter().filter(|y| *y < x).count() as f64).collect() };
    let (rx, ry) = (rank(xs), rank(ys));
    let n = xs.len() as f64;
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b) * (a - b)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

/// Two-sided Student-t p-value for even degrees of freedom, from the
/// finite series `P(|T| ≤ t) = sinθ Σ_{j<ν/2} c_j cos^{2j}θ`,
/// `θ = atan(t / sqrt ν)`, `c_0 = 1`, `c_j = c_{j−1}(2j − 1)/(2j)`.
pub fn t_two_sided_p_even_df(t: f64, df: u32) -> f64 {
    assert!(df >= 2 && df % 2 == 0);
    let theta = libm::atan(libm::fabs(t) / libm::sqrt(df as f64));
    let (s, c2) = (libm::sin(theta), libm::cos(theta) * libm::cos(theta));
    let (mut term, mut total) = (1.0, 1.0);
    for j in 1..df / 2 {
        term *= c2 * (2 * j - 1) as f64 / (2 * j) as f64;
        total += term;
    }
    1.0 - s * total
}
