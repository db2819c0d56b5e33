//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits nonzero if a criterion fails for a reason other than the known
//! float64 literal gap in criterion 7.
//!
//! Run with `cargo test -p sparsecl --test acceptance`.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use sparsecl::{manifest, runner};
use sparsecl_core::baselines::{ewc_penalty, gem_project, EwcState, Gem, Replay};
use sparsecl_core::continual::{audit_no_history, run_sequence, DataSource, ImportanceMasking, OptimizerConfig, Strategy};
use sparsecl_core::importance::{estimate_fisher, estimate_second_order, Estimator, EstimatorTag, DEFAULT_XI};
use sparsecl_core::masking::{mask_overlap, GradientMask, MaskSource};
use sparsecl_core::metrics::{bleu, correlate, rouge_l, BwtNorm, ScoreMatrix};
use sparsecl_core::model::{build_model, finite_difference_check, ModelConfig, Objective, Sample};
use sparsecl_core::oracle::{
    exact_affine, importance_oracle, max_relative_error, pearson_raw_sums, qp_projection_oracle, spearman_no_ties, t_two_sided_p_even_df,
};
use sparsecl_core::rng::rng_for;
use sparsecl_core::tasks::{generate_sequence, generate_task, SyntheticTaskConfig, TaskSpec};
use sparsecl_core::{GradientRecord, Granularity, ParameterStore, Tensor};

type Outcome = Result<String, String>;

enum Verdict {
    Pass(String),
    Fail(String),
    /// Fails as stated; the recorded analysis applies and its fallback checks hold.
    KnownFail(String),
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn small_stream(n: usize, dim: usize, train: usize) -> Vec<TaskSpec> {
    let cfgs: Vec<_> = (0..n).map(|i| SyntheticTaskConfig::gaussian(dim, 3, train, 40, 20 + i as u64, i as f64 * 0.7)).collect();
    generate_sequence(&cfgs).unwrap()
}

// 1
fn fisher_oracle() -> Outcome {
    let start = Instant::now();
    let (model, store) = build_model(ModelConfig::mlp(&[4, 8, 3], 7)).map_err(e)?;
    let task = generate_task(&SyntheticTaskConfig::gaussian(4, 3, 64, 8, 11, 0.0), 1).map_err(e)?;
    let fast = estimate_fisher(&model, &store, &task.train).map_err(e)?;
    let slow = importance_oracle(&model, &store, &task.train, EstimatorTag::Fisher, DEFAULT_XI).map_err(e)?;
    let err = max_relative_error(&fast.scores, &slow.scores);
    let secs = start.elapsed().as_secs_f64();
    ensure(fast.sample_count == 64, || format!("sample count {}", fast.sample_count))?;
    ensure(err <= 1e-12, || format!("max relative error {:.3e}", err))?;
    ensure(secs < 10.0, || format!("took {:.2}s", secs))?;
    Ok(format!("max relative error {:.3e} over {} params, {:.3}s", err, fast.scores.len(), secs))
}

// 2
fn second_order_oracle() -> Outcome {
    let shapes: [&[usize]; 3] = [&[4, 8, 3], &[3, 5, 2], &[6, 4, 4, 3]];
    let mut worst = 0.0f64;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for trial in 0..100u64 {
        let sizes = shapes[trial as usize % 3];
        let (model, store) = build_model(ModelConfig::mlp(sizes, 1000 + trial)).map_err(e)?;
        let n = 1 + (trial as usize * 7) % 48;
        let cfg = SyntheticTaskConfig::gaussian(sizes[0], *sizes.last().unwrap(), n, 4, 5000 + trial, 0.0);
        let data = generate_task(&cfg, 1).map_err(e)?.train;
        let fast = estimate_second_order(&model, &store, &data, DEFAULT_XI).map_err(e)?;
        let slow = importance_oracle(&model, &store, &data, EstimatorTag::SecondOrder, DEFAULT_XI).map_err(e)?;
        worst = worst.max(max_relative_error(&fast.scores, &slow.scores));
        for &s in &fast.scores {
            lo = lo.min(s);
            hi = hi.max(s);
            ensure((0.0..1.0).contains(&s), || format!("trial {}: score {} outside [0, 1)", trial, s))?;
        }
    }
    ensure(worst <= 1e-12, || format!("max relative error {:.3e}", worst))?;
    Ok(format!("100 trials, max relative error {:.3e}, scores in [{:.3e}, {:.17}]", worst, lo, hi))
}

/// `½ θᵀAθ + bᵀθ` with symmetric `A`.
struct Quadratic {
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl Objective for Quadratic {
    fn loss(&self, store: &ParameterStore, _batch: &[Sample]) -> sparsecl_core::Result<f64> {
        let t = store.values();
        let mut total = 0.0;
        for i in 0..t.len() {
            for j in 0..t.len() {
                total += 0.5 * t[i] * self.a[i][j] * t[j];
            }
            total += self.b[i] * t[i];
        }
        Ok(total)
    }

    fn loss_and_grad(&self, store: &ParameterStore, batch: &[Sample]) -> sparsecl_core::Result<(f64, GradientRecord)> {
        let t = store.values();
        let g = (0..t.len()).map(|i| (0..t.len()).map(|j| self.a[i][j] * t[j]).sum::<f64>() + self.b[i]).collect();
        Ok((self.loss(store, batch)?, GradientRecord { values: g, granularity: Granularity::PerBatch }))
    }
}

// 3
fn gradient_validity() -> Outcome {
    let mut r = rng_for(3, &[]);
    let mut out = Vec::new();
    let labeled: Vec<Sample> = (0..8).map(|i| Sample::labeled((0..4).map(|_| r.random_range(-1.5..1.5)).collect(), i % 3)).collect();
    for (name, cfg) in [("mlp", ModelConfig::mlp(&[4, 8, 3], 42)), ("mlp+ln", ModelConfig::mlp(&[4, 8, 8, 3], 43).with_layer_norm(true))] {
        let (m, s) = build_model(cfg).map_err(e)?;
        let rep = finite_difference_check(&m, &s, &labeled, 1e-6).map_err(e)?;
        ensure(rep.max_deviation <= 1e-4, || format!("{}: {:?}", name, rep))?;
        out.push(format!("{} {:.1e}", name, rep.max_deviation));
    }
    let seqs = vec![Sample::sequence(vec![1, 2, 9], vec![3, 4]), Sample::sequence(vec![5, 9], vec![6]), Sample::sequence(vec![7, 7, 8, 9], vec![2, 1, 0])];
    for (name, cfg) in [("transformer", ModelConfig::transformer(10, 8, 1, 2, 5)), ("transformer-2l", ModelConfig::transformer(10, 8, 2, 2, 6))] {
        let (m, s) = build_model(cfg).map_err(e)?;
        let rep = finite_difference_check(&m, &s, &seqs, 1e-6).map_err(e)?;
        ensure(rep.max_deviation <= 1e-4, || format!("{}: {:?}", name, rep))?;
        out.push(format!("{} {:.1e}", name, rep.max_deviation));
    }
    let n = 12;
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let v = r.random_range(-2.0..2.0);
            a[i][j] = v;
            a[j][i] = v;
        }
    }
    let b = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    let mut store = ParameterStore::new();
    store.push("probe.weight", Tensor::new(vec![n], (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).map_err(e)?).map_err(e)?;
    let rep = finite_difference_check(&Quadratic { a, b }, &store, &labeled[..1], 1e-6).map_err(e)?;
    ensure(rep.max_deviation <= 1e-9, || format!("quadratic probe: {:?}", rep))?;
    out.push(format!("quadratic {:.1e}", rep.max_deviation));
    Ok(out.join(", "))
}

// 4
fn freeze_guarantee() -> Outcome {
    let (m, init) = build_model(ModelConfig::mlp(&[6, 32, 3], 3)).map_err(e)?;
    let tasks = small_stream(3, 6, 120);
    let mut summary = Vec::new();
    for (oname, opt) in [("sgd", OptimizerConfig::sgd(0.05, 2, 16, 5)), ("adam", OptimizerConfig::adam(0.01, 2, 16, 5))] {
        for est in [Estimator::Fisher, Estimator::SecondOrder { xi: DEFAULT_XI }] {
            let run = run_sequence(&m, &init, &tasks, &mut ImportanceMasking::new(est, 0.05), &opt).map_err(e)?;
            let label = format!("{}/{}", oname, est.tag().name());
            ensure(run.masks.len() == 3, || format!("{}: {} masks", label, run.masks.len()))?;
            let (before, after) = (init.values(), run.store.values());
            let mut moved = 0;
            for i in 0..init.len() {
                if run.masks.iter().any(|mk| mk.contains(i)) {
                    moved += (before[i] != after[i]) as usize;
                } else {
                    ensure(before[i].to_bits() == after[i].to_bits(), || format!("{}: param {} outside every mask changed", label, i))?;
                }
            }
            ensure(moved > 0, || format!("{}: nothing trained", label))?;
            let ends: Vec<&ParameterStore> = run.checkpoints[1..].iter().chain([&run.store]).collect();
            for (t, mask) in run.masks.iter().enumerate() {
                let (a, b) = (run.checkpoints[t].values(), ends[t].values());
                for i in 0..a.len() {
                    if !mask.contains(i) {
                        ensure(a[i].to_bits() == b[i].to_bits(), || format!("{}: task {} changed unmasked param {}", label, t + 1, i))?;
                    }
                }
            }
            if oname == "adam" {
                ensure(run.adam_states.len() == 3, || format!("{}: {} adam states", label, run.adam_states.len()))?;
                for (t, (st, mask)) in run.adam_states.iter().zip(&run.masks).enumerate() {
                    for i in 0..st.m.len() {
                        if !mask.contains(i) {
                            ensure(st.m[i] == 0.0 && st.v[i] == 0.0 && st.steps[i] == 0, || {
                                format!("{}: task {} adam state live at unmasked {}", label, t + 1, i)
                            })?;
                        }
                    }
                }
            }
            summary.push(format!("{} ({} of {} moved)", label, moved, init.len()));
        }
    }
    Ok(summary.join(", "))
}

const DEFAULT_MANIFEST: &str = r#"output_dir = "unused"
seeds = [41, 42, 43]
RATIOS

[model]
family = "mlp"
sizes = [20, 256, 160, 5]

[tasks]
preset = "default"

[strategy]
name = "STRATEGY"

[optimizer]
kind = "adam"
lr = 0.001
epochs = 5
batch_size = 64
"#;

#[derive(Debug, Clone, Copy)]
struct Summary {
    op: f64,
    bwt: f64,
    forgetting: f64,
}

/// Seed means of final OP, BWT and forgetting.
fn default_stream_means(strategy: &str, ratio: Option<f64>) -> Result<Summary, String> {
    let ratios = ratio.map_or(String::new(), |r| format!("ratios = [{}]", r));
    let text = DEFAULT_MANIFEST.replace("RATIOS", &ratios).replace("STRATEGY", strategy);
    let v = manifest::validate(manifest::parse(&text).map_err(e)?, text.clone().into_bytes(), Path::new(".")).map_err(e)?;
    let mut acc = Summary { op: 0.0, bwt: 0.0, forgetting: 0.0 };
    let jobs = v.jobs();
    for &(seed, r) in &jobs {
        let (_, state) = runner::train(&v, seed, r).map_err(e)?;
        let s = &state.scores;
        acc.op += s.op(3).map_err(e)?;
        acc.bwt += s.bwt(3, BwtNorm::OverT).map_err(e)?;
        acc.forgetting += s.mean_final_forgetting().map_err(e)?;
    }
    let n = jobs.len() as f64;
    Ok(Summary { op: acc.op / n, bwt: acc.bwt / n, forgetting: acc.forgetting / n })
}

type Sweep = BTreeMap<(String, String), Summary>;

fn sweep_entry(cache: &mut Sweep, strategy: &str, ratio: Option<f64>) -> Result<Summary, String> {
    let key = (strategy.to_string(), ratio.map_or("-".into(), |r| r.to_string()));
    if let Some(s) = cache.get(&key) {
        return Ok(*s);
    }
    let s = default_stream_means(strategy, ratio)?;
    cache.insert(key, s);
    Ok(s)
}

// 5
fn directional(cache: &mut Sweep) -> Outcome {
    let start = Instant::now();
    let seq = sweep_entry(cache, "seq-ft", None)?;
    let f = sweep_entry(cache, "importance-fisher", Some(0.01))?;
    let s = sweep_entry(cache, "importance-second-order", Some(0.01))?;
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "OP seq {:.4} / fisher {:.4} / second-order {:.4}; BWT seq {:.4} / fisher {:.4} / second-order {:.4}; {:.1}s",
        seq.op, f.op, s.op, seq.bwt, f.bwt, s.bwt, secs
    );
    ensure(f.bwt - seq.bwt >= 0.05 && s.bwt - seq.bwt >= 0.05, || format!("BWT gap too small: {}", detail))?;
    ensure(f.op >= seq.op && s.op >= seq.op, || format!("OP below SeqFT: {}", detail))?;
    ensure(secs < 300.0, || format!("too slow: {}", detail))?;
    Ok(detail)
}

// 6
fn sparsity_sweep(cache: &mut Sweep) -> Outcome {
    let ratios = [0.001, 0.01, 0.05];
    let mut out = Vec::new();
    for strategy in ["importance-fisher", "importance-second-order"] {
        let fs = ratios.iter().map(|&r| sweep_entry(cache, strategy, Some(r)).map(|s| s.forgetting)).collect::<Result<Vec<_>, _>>()?;
        let text = format!("{} forgetting {:.4} / {:.4} / {:.4}", strategy, fs[0], fs[1], fs[2]);
        ensure(fs.windows(2).all(|w| w[1] >= w[0] - 0.02), || format!("not non-decreasing: {}", text))?;
        out.push(text);
    }
    Ok(format!("ratios 0.001/0.01/0.05: {}", out.join("; ")))
}

fn ulps(a: f64, b: f64) -> u64 {
    (a.to_bits() as i64 - b.to_bits() as i64).unsigned_abs()
}

// 7
fn metric_exactness() -> Result<Verdict, String> {
    let r = ScoreMatrix::from_rows(vec![vec![0.7], vec![0.4, 0.6]]).map_err(e)?;
    let (op, bwt, ap) = (r.op(2).map_err(e)?, r.bwt(2, BwtNorm::OverT).map_err(e)?, r.ap(2).map_err(e)?);
    ensure(op == exact_affine(&[0.4, 0.6], &[], 2), || format!("OP {} differs from the exact oracle", op))?;
    ensure(bwt == exact_affine(&[0.4], &[0.7], 2), || format!("BWT {} differs from the exact oracle", bwt))?;
    ensure(ap == exact_affine(&[0.7, 0.6], &[], 2), || format!("AP {} differs from the exact oracle", ap))?;

    let t = |s: &'static str| s.split_whitespace().collect::<Vec<_>>();
    let x = t("the cat sat on the mat");
    let checks = [
        ("bleu identity", bleu(&x, &x, 4).map_err(e)?, 1.0),
        ("rouge identity", rouge_l(&x, &x), 1.0),
        ("rouge 6/7", rouge_l(&t("the cat sat"), &t("the cat sat down")), 6.0 / 7.0),
        ("bleu brevity", bleu(&t("a b"), &t("a b c d"), 2).map_err(e)?, (-1.0f64).exp()),
        ("bleu clipped", bleu(&t("the the the"), &t("the cat"), 1).map_err(e)?, 1.0 / 3.0),
    ];
    for (name, got, want) in checks {
        ensure((got - want).abs() <= 1e-9, || format!("{}: {} vs {}", name, got, want))?;
    }
    let text = format!(
        "OP {:?} ({} ulp from 0.5), BWT {:?} ({} ulp from -0.15), AP {:?} ({} ulp from 0.65); all equal the exact-rational oracle; text fixtures within 1e-9",
        op,
        ulps(op, 0.5),
        bwt,
        ulps(bwt, -0.15),
        ap,
        ulps(ap, 0.65)
    );
    if op == 0.5 && bwt == -0.15 && ap == 0.65 {
        Ok(Verdict::Pass(text))
    } else {
        ensure(op == 0.5 && ulps(bwt, -0.15) == 1 && ulps(ap, 0.65) == 1, || format!("unexpected deviation: {}", text))?;
        Ok(Verdict::KnownFail(format!("literal equality unattainable in float64: {}", text)))
    }
}

// 8
fn gem_feasibility() -> Outcome {
    let mut r = rng_for(8, &[]);
    let rec = |v: Vec<f64>| GradientRecord { values: v, granularity: Granularity::PerBatch };
    let (mut worst_dot, mut worst_gap, mut projected) = (f64::INFINITY, 0.0f64, 0);
    for i in 0..1000 {
        let g: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
        let k = r.random_range(1..=4);
        let mem: Vec<Vec<f64>> = (0..k).map(|_| (0..3).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let out = gem_project(&rec(g.clone()), &mem.iter().cloned().map(rec).collect::<Vec<_>>()).map_err(e)?;
        let want = qp_projection_oracle(&g, &mem);
        let gap = out.values.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let min_dot = mem.iter().map(|m| m.iter().zip(&out.values).map(|(a, b)| a * b).sum::<f64>()).fold(f64::INFINITY, f64::min);
        let violated = mem.iter().any(|m| m.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() < 0.0);
        if violated {
            projected += 1;
        } else {
            ensure(out.values.iter().zip(&g).all(|(a, b)| a.to_bits() == b.to_bits()), || format!("instance {}: feasible g changed", i))?;
        }
        ensure(min_dot >= -1e-9, || format!("instance {}: min constraint {:.3e}", i, min_dot))?;
        ensure(gap <= 1e-8, || format!("instance {}: oracle gap {:.3e}", i, gap))?;
        worst_dot = worst_dot.min(min_dot);
        worst_gap = worst_gap.max(gap);
    }
    Ok(format!("1000 instances ({} projected), min constraint {:.3e}, max oracle gap {:.3e}", projected, worst_dot, worst_gap))
}

// 9
fn ewc_check() -> Outcome {
    let st = EwcState { lambda: 0.5, fisher: vec![2.0], anchor: vec![0.0] };
    let (pen, grad) = ewc_penalty(&[0.5], &st).map_err(e)?;
    ensure(pen == 0.25 && grad.values == [1.0], || format!("fixture gave {} / {:?}", pen, grad.values))?;

    let mut r = rng_for(9, &[]);
    let n = 16;
    let st = EwcState { lambda: 3.0, fisher: (0..n).map(|_| r.random_range(0.0..2.0)).collect(), anchor: (0..n).map(|_| r.random_range(-1.0..1.0)).collect() };
    let theta: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    let (_, grad) = ewc_penalty(&theta, &st).map_err(e)?;
    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..n {
        let mut p = theta.clone();
        p[i] += h;
        let up = ewc_penalty(&p, &st).map_err(e)?.0;
        p[i] -= 2.0 * h;
        let down = ewc_penalty(&p, &st).map_err(e)?.0;
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((fd - grad.values[i]).abs() / 1.0f64.max(fd.abs()));
    }
    ensure(worst <= 1e-8, || format!("finite-difference deviation {:.3e}", worst))?;
    Ok(format!("fixture 0.25 / [1.0] exact; finite-difference deviation {:.3e}", worst))
}

const SMALL_MANIFEST: &str = r#"output_dir = "out"
seeds = [42]
ratios = [0.05]

[model]
family = "mlp"
sizes = [6, 24, 3]

[[tasks.synthetic]]
kind = "gaussian-clusters"
dim = 6
classes = 3
train_size = 120
eval_size = 40
seed = 1

[[tasks.synthetic]]
kind = "gaussian-clusters"
dim = 6
classes = 3
train_size = 120
eval_size = 40
seed = 2
drift = 1.0

[[tasks.synthetic]]
kind = "gaussian-clusters"
dim = 6
classes = 3
train_size = 120
eval_size = 40
seed = 3
drift = 2.0

[strategy]
name = "importance-second-order"

[optimizer]
lr = 0.01
epochs = 2
batch_size = 16
"#;

// 10
fn determinism_and_overlap() -> Outcome {
    let mut files = Vec::new();
    let dirs = [tempfile::tempdir().map_err(e)?, tempfile::tempdir().map_err(e)?];
    for d in &dirs {
        let p = d.path().join("m.toml");
        std::fs::write(&p, SMALL_MANIFEST).map_err(e)?;
        let out = runner::execute(&manifest::load(&p).map_err(e)?, 1).map_err(e)?;
        let run = &out[0];
        let masks: Vec<Vec<u8>> = (1..=3).map(|t| std::fs::read(runner::mask_path(run, t))).collect::<Result<_, _>>().map_err(e)?;
        files.push(masks);
    }
    ensure(files[0] == files[1], || "mask files differ between identical runs".into())?;
    let bytes: usize = files[0].iter().map(Vec::len).sum();

    let mk = |idx: &[usize]| GradientMask::new(idx.to_vec(), 10, MaskSource::Fisher, 1).unwrap();
    let base = mk(&[0, 1, 2, 3]);
    let fixtures = [(mk(&[0, 1, 2, 3]), 1.0), (mk(&[4, 5, 6, 7]), 0.0), (mk(&[0, 1, 8, 9]), 0.5)];
    for (other, want) in &fixtures {
        let got = mask_overlap(&base, other).map_err(e)?;
        ensure(got == *want, || format!("overlap {} vs {}", got, want))?;
    }

    let xs = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
    let ys = [3.1, 1.2, 4.8, 3.9, 6.5, 5.2, 8.9, 7.4];
    let rep = correlate(&xs, &ys).map_err(e)?;
    let mut worst = 0.0f64;
    for (name, coef, r) in [("pearson", rep.pearson, pearson_raw_sums(&xs, &ys)), ("spearman", rep.spearman, spearman_no_ties(&xs, &ys))] {
        let (v, p) = (coef.value().ok_or("degenerate")?, coef.p_value().ok_or("degenerate")?);
        let t = r * (6.0 / (1.0 - r * r)).sqrt();
        let want_p = t_two_sided_p_even_df(t, 6);
        let d = (v - r).abs().max((p - want_p).abs());
        ensure(d <= 1e-12, || format!("{}: r {} vs {}, p {} vs {}", name, v, r, p, want_p))?;
        worst = worst.max(d);
    }
    Ok(format!("3 mask files ({} bytes) identical across reruns; overlap 1/0/0.5 exact; correlation within {:.1e}", bytes, worst))
}

// 11
fn no_history() -> Outcome {
    let (m, init) = build_model(ModelConfig::mlp(&[6, 16, 3], 4)).map_err(e)?;
    let tasks = small_stream(4, 6, 100);
    let opt = OptimizerConfig::adam(0.01, 2, 16, 11);
    let strategies: Vec<(Box<dyn Strategy>, bool)> = vec![
        (Box::new(ImportanceMasking::new(Estimator::Fisher, 0.05)), false),
        (Box::new(ImportanceMasking::new(Estimator::SecondOrder { xi: DEFAULT_XI }, 0.05)), false),
        (Box::new(Replay::offline(0.05)), true),
        (Box::new(Replay::online(0.05)), true),
        (Box::new(Gem { fraction: 0.05 }), true),
    ];
    let mut out = Vec::new();
    for (mut s, replays) in strategies {
        let run = run_sequence(&m, &init, &tasks, &mut s, &opt).map_err(e)?;
        let name = run.strategy.clone();
        let bad = audit_no_history(&run.access_log);
        ensure(bad.is_empty(), || format!("{}: {} forbidden reads, first {:?}", name, bad.len(), bad[0]))?;
        let replay_reads: usize = run.access_log.iter().filter(|a| matches!(a.source, DataSource::Replay { .. })).map(|a| a.samples).sum();
        if replays {
            ensure(replay_reads > 0, || format!("{}: never read its buffer", name))?;
        } else {
            ensure(replay_reads == 0, || format!("{}: read a replay buffer", name))?;
        }
        out.push(format!("{} ({} events, {} buffer samples)", name, run.access_log.len(), replay_reads));
    }
    Ok(out.join(", "))
}

fn run_one(f: impl FnOnce() -> Result<Verdict, String>) -> Verdict {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(v)) => v,
        Ok(Err(msg)) => Verdict::Fail(msg),
        Err(p) => Verdict::Fail(format!(
            "panicked: {}",
            p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()
        )),
    }
}

fn plain(o: Outcome) -> Result<Verdict, String> {
    o.map(Verdict::Pass)
}

fn main() {
    let mut cache = Sweep::new();
    let results = vec![
        ("Fisher oracle equivalence", run_one(|| plain(fisher_oracle()))),
        ("second-order correctness and bound", run_one(|| plain(second_order_oracle()))),
        ("gradient validity", run_one(|| plain(gradient_validity()))),
        ("freeze guarantee", run_one(|| plain(freeze_guarantee()))),
        ("directional continual-learning result", run_one(|| plain(directional(&mut cache)))),
        ("sparsity-sweep shape", run_one(|| plain(sparsity_sweep(&mut cache)))),
        ("metric formula exactness", run_one(metric_exactness)),
        ("GEM feasibility", run_one(|| plain(gem_feasibility()))),
        ("EWC analytic check", run_one(|| plain(ewc_check()))),
        ("mask determinism and overlap", run_one(|| plain(determinism_and_overlap()))),
        ("no-history audit", run_one(|| plain(no_history()))),
    ];
    let mut unexpected = Vec::new();
    for (i, (name, v)) in results.iter().enumerate() {
        let (tag, detail) = match v {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => {
                unexpected.push(i + 1);
                ("FAIL", d)
            }
            Verdict::KnownFail(d) => ("FAIL", d),
        };
        println!("{} {:>2} {}: {}", tag, i + 1, name, detail);
    }
    if !unexpected.is_empty() {
        eprintln!("criteria failed: {:?}", unexpected);
        std::process::exit(1);
    }
}
