//! Gradient episodic memory: project the task gradient so that it does not
//! increase the loss on any earlier task's memory.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::continual::{Capabilities, Strategy, TaskContext, DEFAULT_REPLAY_FRACTION};
use crate::error::{bail, Result};
use crate::model::{ForwardOptions, Sample};
use crate::store::{GradientRecord, ParameterStore};

/// Diagonal shift for a degenerate Gram matrix of memory gradients.
pub const GRAM_RIDGE: f64 = 1e-10;

/// Relative size below which a column counts as dependent on earlier ones.
const DEPENDENT: f64 = 1e-12;

/// Closest `g̃` to `g` with `⟨g̃, g_k⟩ ≥ 0` for every memory gradient.
///
/// Returns `g` itself when no constraint is violated. Otherwise solves the
/// dual `min_{v ≥ 0} ½ vᵀ(G Gᵀ)v + (G g)ᵀ v`, written as the equivalent
/// `min_{v ≥ 0} ‖Gᵀv + g‖²` so the Gram matrix is never formed, and
/// returns `g + Gᵀ v`. If that fails the problem is retried with
/// [`GRAM_RIDGE`] on the Gram diagonal.
pub fn gem_project(g: &GradientRecord, memory: &[GradientRecord]) -> Result<GradientRecord> {
    for m in memory {
        if m.len() != g.len() {
            bail!(Shape, "memory gradient of {} values against {}", m.len(), g.len());
        }
    }
    if memory.iter().all(|m| m.dot(g) >= 0.0) {
        return Ok(g.clone());
    }
    let target: Vec<f64> = g.values.iter().map(|x| -x).collect();
    let cols: Vec<&[f64]> = memory.iter().map(|m| m.values.as_slice()).collect();
    let v = match nnls(&cols, &target) {
        Ok(v) => v,
        Err(_) => {
            // ‖Gᵀv + g‖² + ridge‖v‖² as one stacked least-squares problem
            let k = memory.len();
            let shift = libm::sqrt(GRAM_RIDGE);
            let stacked: Vec<Vec<f64>> = cols
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let mut col = c.to_vec();
                    col.extend((0..k).map(|j| if i == j { shift } else { 0.0 }));
                    col
                })
                .collect();
            let mut b = target.clone();
            b.resize(target.len() + k, 0.0);
            nnls(&stacked.iter().map(Vec::as_slice).collect::<Vec<_>>(), &b)?
        }
    };
    let mut out = g.clone();
    for (m, &vk) in memory.iter().zip(&v) {
        if vk != 0.0 {
            out.add_scaled(m, vk);
        }
    }
    Ok(out)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Lawson–Hanson nonnegative least squares, `min_{v ≥ 0} ‖A v − b‖` for
/// the columns of `A`. Subproblems are solved by Householder QR on the
/// columns themselves. A candidate whose column depends on the passive
/// set, or that would enter with a nonpositive coefficient, is passed over
/// until the passive set changes.
pub fn nnls(cols: &[&[f64]], b: &[f64]) -> Result<Vec<f64>> {
    let k = cols.len();
    let cmax = cols.iter().map(|c| libm::sqrt(dot(c, c))).fold(0.0, f64::max);
    let tol = 1e-13 * cmax * libm::sqrt(dot(b, b));
    let mut v = vec![0.0; k];
    let mut passive = vec![false; k];
    let mut skipped = vec![false; k];
    let neg_grad = |v: &[f64]| -> Vec<f64> {
        let mut r = b.to_vec();
        for (c, &vi) in cols.iter().zip(v) {
            if vi != 0.0 {
                r.iter_mut().zip(c.iter()).for_each(|(ri, ci)| *ri -= vi * ci);
            }
        }
        cols.iter().map(|c| dot(c, &r)).collect()
    };
    for _ in 0..(4 * k + 10) {
        let w = neg_grad(&v);
        let Some(j) = (0..k).filter(|&i| !passive[i] && !skipped[i] && w[i] > tol).max_by(|&a, &c| w[a].total_cmp(&w[c])) else {
            return Ok(v);
        };
        passive[j] = true;
        let mut settled = false;
        for inner in 0..(3 * k + 10) {
            let idx: Vec<usize> = (0..k).filter(|&i| passive[i]).collect();
            let solved = lstsq(&idx.iter().map(|&i| cols[i]).collect::<Vec<_>>(), b);
            let mut z = vec![0.0; k];
            if let Ok(z_sub) = &solved {
                for (&i, &zi) in idx.iter().zip(z_sub) {
                    z[i] = zi;
                }
            }
            if inner == 0 && (solved.is_err() || z[j] <= 0.0) {
                if idx.len() == 1 {
                    if let Err(e) = solved {
                        return Err(e);
                    }
                }
                passive[j] = false;
                skipped[j] = true;
                settled = true;
                break;
            }
            solved?;
            if idx.iter().all(|&i| z[i] > 0.0) {
                v = z;
                skipped.iter_mut().for_each(|s| *s = false);
                settled = true;
                break;
            }
            let mut alpha = 1.0f64;
            let mut block = idx[0];
            for &i in &idx {
                if z[i] <= 0.0 {
                    let a = v[i] / (v[i] - z[i]);
                    if a <= alpha {
                        alpha = a;
                        block = i;
                    }
                }
            }
            for i in 0..k {
                v[i] += alpha * (z[i] - v[i]);
            }
            v[block] = 0.0;
            for &i in &idx {
                if v[i] <= 0.0 {
                    v[i] = 0.0;
                    passive[i] = false;
                }
            }
        }
        if !settled {
            break;
        }
    }
    bail!(Metric, "projection QP did not converge")
}

/// `min ‖A z − b‖` by Householder QR. Fails when a column is numerically
/// dependent on the ones before it.
fn lstsq(cols: &[&[f64]], b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    let m = cols.len();
    let mut a: Vec<Vec<f64>> = cols.iter().map(|c| c.to_vec()).collect();
    let mut rhs = b.to_vec();
    for j in 0..m {
        let norm0 = libm::sqrt(dot(cols[j], cols[j]));
        let alpha = if j < n { libm::sqrt(dot(&a[j][j..], &a[j][j..])) } else { 0.0 };
        if !(alpha > DEPENDENT * norm0) {
            bail!(Metric, "memory gradients are linearly dependent");
        }
        let s = if a[j][j] > 0.0 { -alpha } else { alpha };
        let mut h = a[j][j..].to_vec();
        h[0] -= s;
        let hh = dot(&h, &h);
        for col in a.iter_mut().skip(j) {
            let f = 2.0 * dot(&h, &col[j..]) / hh;
            col[j..].iter_mut().zip(&h).for_each(|(x, y)| *x -= f * y);
        }
        let f = 2.0 * dot(&h, &rhs[j..]) / hh;
        rhs[j..].iter_mut().zip(&h).for_each(|(x, y)| *x -= f * y);
    }
    let mut z = vec![0.0; m];
    for i in (0..m).rev() {
        let s: f64 = (i + 1..m).map(|c| a[c][i] * z[c]).sum();
        z[i] = (rhs[i] - s) / a[i][i];
    }
    Ok(z)
}

/// Memory is the shared replay reservoir; one gradient per earlier task is
/// recomputed from its samples at every step.
#[derive(Debug, Clone)]
pub struct Gem {
    pub fraction: f64,
}

impl Default for Gem {
    fn default() -> Self {
        Self { fraction: DEFAULT_REPLAY_FRACTION }
    }
}

impl Strategy for Gem {
    fn name(&self) -> &str {
        "gem"
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { needs_replay_buffer: true, needs_gradient_memory: true, needs_previous_model: false }
    }

    fn hyperparameters(&self) -> Vec<(String, f64)> {
        vec![("memory_fraction".into(), self.fraction)]
    }

    fn replay_fraction(&self) -> f64 {
        self.fraction
    }

    fn loss_and_grad(&mut self, ctx: &TaskContext<'_>, store: &ParameterStore, batch: &[Sample]) -> Result<(f64, GradientRecord)> {
        let (loss, grad) = ctx.model.batch_loss_and_grad(store, batch, ForwardOptions::default())?;
        let replay = ctx.replay()?;
        if replay.is_empty() {
            return Ok((loss, grad));
        }
        let mut memory = Vec::new();
        for t in replay.task_ids() {
            let samples = replay.task_samples(t)?;
            memory.push(ctx.model.batch_loss_and_grad(store, samples, ForwardOptions::default())?.1);
        }
        Ok((loss, gem_project(&grad, &memory)?))
    }
}
