//! Continual-learning summaries over the score matrix, text overlap scores
//! and rank/linear correlation.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

/// Lower-triangular `R[t][i]`: score on task `i` after training task `t`.
/// Indices are 1-based in every accessor.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreMatrix {
    rows: Vec<Vec<f64>>,
}

/// Normalization of backward transfer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BwtNorm {
    /// `1 / t`.
    #[default]
    OverT,
    /// `1 / (t - 1)`.
    OverTMinusOne,
}

impl ScoreMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = Self::new();
        for r in rows {
            m.push_row(r)?;
        }
        Ok(m)
    }

    /// Appends row `t = tasks() + 1`, which must hold exactly `t` scores.
    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        let t = self.rows.len() + 1;
        if row.len() != t {
            bail!(Metric, "row {} needs {} scores, got {}", t, t, row.len());
        }
        if let Some(i) = row.iter().position(|v| !v.is_finite()) {
            bail!(Metric, "score R[{}][{}] is not finite", t, i + 1);
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn tasks(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn get(&self, t: usize, i: usize) -> Result<f64> {
        if t == 0 || i == 0 || i > t || t > self.rows.len() {
            bail!(Metric, "no score R[{}][{}] in a {}-task matrix", t, i, self.rows.len());
        }
        Ok(self.rows[t - 1][i - 1])
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.rows.len() {
            bail!(Metric, "row {} is not complete (matrix has {} rows)", t, self.rows.len());
        }
        Ok(())
    }

    /// Overall performance `OP_t = (1/t) Σ_{i≤t} R[t][i]`.
    pub fn op(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.rows[t - 1].iter().sum::<f64>() / t as f64)
    }

    /// Backward transfer `(1/t) Σ_{i<t} (R[t][i] − R[i][i])`; zero for `t = 1`.
    pub fn bwt(&self, t: usize, norm: BwtNorm) -> Result<f64> {
        self.check_t(t)?;
        if t < 2 {
            return Ok(0.0);
        }
        let sum: f64 = (1..t).map(|i| self.rows[t - 1][i - 1] - self.rows[i - 1][i - 1]).sum();
        let denom = match norm {
            BwtNorm::OverT => t,
            BwtNorm::OverTMinusOne => t - 1,
        };
        Ok(sum / denom as f64)
    }

    /// Average performance, the mean of `R[i][i]` for `i ≤ t`.
    pub fn ap(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok((1..=t).map(|i| self.rows[i - 1][i - 1]).sum::<f64>() / t as f64)
    }

    /// `R[i][i] − R[t][i]`; positive means task `i` was forgotten.
    pub fn forgetting(&self, i: usize, t: usize) -> Result<f64> {
        if t <= i {
            bail!(Metric, "forgetting of task {} needs a later task, got t = {}", i, t);
        }
        Ok(self.get(i, i)? - self.get(t, i)?)
    }

    /// Mean forgetting of tasks `1..T` at the final row.
    pub fn mean_final_forgetting(&self) -> Result<f64> {
        let t = self.tasks();
        if t < 2 {
            return Ok(0.0);
        }
        let mut sum = 0.0;
        for i in 1..t {
            sum += self.forgetting(i, t)?;
        }
        Ok(sum / (t - 1) as f64)
    }

    pub fn op_series(&self) -> Vec<f64> {
        (1..=self.tasks()).map(|t| self.op(t).unwrap()).collect()
    }

    pub fn bwt_series(&self, norm: BwtNorm) -> Vec<f64> {
        (1..=self.tasks()).map(|t| self.bwt(t, norm).unwrap()).collect()
    }

    pub fn ap_series(&self) -> Vec<f64> {
        (1..=self.tasks()).map(|t| self.ap(t).unwrap()).collect()
    }
}

/// Default n-gram order for [`bleu`].
pub const DEFAULT_BLEU_N: usize = 4;

fn ngram_counts<T: Ord>(tokens: &[T], n: usize) -> BTreeMap<&[T], usize> {
    let mut m = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Sentence BLEU with clipped n-gram precision, no smoothing (any zero
/// precision gives 0) and brevity penalty `1` if `c > r`, else `e^{1−r/c}`.
pub fn bleu<T: Ord>(candidate: &[T], reference: &[T], n: usize) -> Result<f64> {
    if n == 0 {
        bail!(Metric, "bleu order must be at least 1");
    }
    if candidate.is_empty() {
        log::warn!("bleu of an empty candidate is 0");
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for order in 1..=n {
        let cand = ngram_counts(candidate, order);
        let refs = ngram_counts(reference, order);
        let total: usize = cand.values().sum();
        let clipped: usize = cand.iter().map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0))).sum();
        if clipped == 0 || total == 0 {
            return Ok(0.0);
        }
        log_sum += libm::log(clipped as f64 / total as f64);
    }
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let bp = if c > r { 1.0 } else { libm::exp(1.0 - r / c) };
    Ok(bp * libm::exp(log_sum / n as f64))
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = alloc::vec![0usize; b.len() + 1];
    let mut cur = alloc::vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F-measure with β = 1. Zero if either side is empty.
pub fn rouge_l<T: PartialEq>(candidate: &[T], reference: &[T]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(candidate, reference) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / candidate.len() as f64;
    let r = lcs / reference.len() as f64;
    2.0 * p * r / (p + r)
}

/// `100 · (ROUGE-L + BLEU) / 2`, with the BLEU order capped at the
/// reference length so that short references can still score 100.
pub fn text_metric<T: Ord>(candidate: &[T], reference: &[T]) -> f64 {
    let n = DEFAULT_BLEU_N.min(reference.len()).max(1);
    let b = bleu(candidate, reference, n).unwrap_or(0.0);
    100.0 * (rouge_l(candidate, reference) + b) / 2.0
}

/// A correlation coefficient, or a note that it is undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum Coefficient {
    Ok {
        value: f64,
        p_value: f64,
    },
    /// One series has zero variance.
    Degenerate,
}

impl Coefficient {
    pub fn value(&self) -> Option<f64> {
        match self {
            Self::Ok { value, .. } => Some(*value),
            Self::Degenerate => None,
        }
    }

    pub fn p_value(&self) -> Option<f64> {
        match self {
            Self::Ok { p_value, .. } => Some(*p_value),
            Self::Degenerate => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub n: usize,
    pub pearson: Coefficient,
    pub spearman: Coefficient,
}

pub fn correlate(xs: &[f64], ys: &[f64]) -> Result<CorrelationReport> {
    if xs.len() != ys.len() {
        bail!(Metric, "correlation of series with {} and {} points", xs.len(), ys.len());
    }
    if xs.len() < 3 {
        bail!(Metric, "correlation needs at least 3 points, got {}", xs.len());
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        bail!(Metric, "correlation input is not finite");
    }
    let n = xs.len();
    Ok(CorrelationReport { n, pearson: coefficient(pearson(xs, ys), n), spearman: coefficient(pearson(&average_ranks(xs), &average_ranks(ys)), n) })
}

fn coefficient(r: Option<f64>, n: usize) -> Coefficient {
    match r {
        None => Coefficient::Degenerate,
        Some(r) => {
            let r = r.clamp(-1.0, 1.0);
            Coefficient::Ok { value: r, p_value: t_test_p(r, n) }
        }
    }
}

/// Pearson r, or `None` when either series is constant.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / libm::sqrt(sxx * syy))
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = alloc::vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided p of `t = r·sqrt((n−2)/(1−r²))` under Student's t with `n − 2`
/// degrees of freedom.
pub fn t_test_p(r: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    let one_minus = 1.0 - r * r;
    if one_minus <= 0.0 {
        return 0.0;
    }
    let t2 = r * r * df / one_minus;
    regularized_beta(df / (df + t2), df / 2.0, 0.5).clamp(0.0, 1.0)
}

/// Regularized incomplete beta `I_x(a, b)` by Lentz's continued fraction.
pub fn regularized_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b) + a * libm::log(x) + b * libm::log(1.0 - x);
    let front = libm::exp(ln_front);
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(x, a, b) / a
    } else {
        1.0 - front * beta_cf(1.0 - x, b, a) / b
    }
}

fn beta_cf(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=400 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}
