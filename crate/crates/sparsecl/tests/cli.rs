use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sparsecl::analyze::CorrelationOutput;
use sparsecl::formats::{self, RunMetrics};
use sparsecl::runner::{checkpoint_path, importance_path, mask_path};
use sparsecl_core::masking::mask_overlap;
use sparsecl_core::metrics::correlate;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparsecl")).args(args).output().expect("binary runs")
}

fn manifest(dir: &Path, strategy: &str, extra: &str) -> PathBuf {
    let text = format!(
        r#"output_dir = "out-{strategy}"
{extra}

[model]
family = "mlp"
sizes = [6, 16, 3]

[[tasks.synthetic]]
kind = "gaussian-clusters"
dim = 6
classes = 3
train_size = 90
eval_size = 30
seed = 1

[[tasks.synthetic]]
kind = "gaussian-clusters"
dim = 6
classes = 3
train_size = 90
eval_size = 30
seed = 2
drift = 1.0

[[tasks.synthetic]]
kind = "gaussian-clusters"
dim = 6
classes = 3
train_size = 90
eval_size = 30
seed = 3
drift = 2.0

[strategy]
name = "{strategy}"

[optimizer]
lr = 0.01
epochs = 2
batch_size = 16
"#
    );
    let p = dir.join(format!("{}.toml", strategy));
    std::fs::write(&p, text).unwrap();
    p
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "exit {:?}\n{}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn seq_ft_run_writes_metrics_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let m = manifest(tmp.path(), "seq-ft", "");
    ok(&bin(&["run", s(&m)]));
    let run = tmp.path().join("out-seq-ft/seed-42");
    let metrics = formats::read_metrics(&run.join("metrics.json")).unwrap();
    assert_eq!((metrics.op.len(), metrics.bwt.len(), metrics.ap.len()), (3, 3, 3));
    assert_eq!(metrics.provenance.manifest_sha256.as_deref(), Some(sparsecl::provenance::sha256_hex(&std::fs::read(&m).unwrap()).as_str()));
    let first = std::fs::read(run.join("metrics.json")).unwrap();
    let ckpt = std::fs::read(checkpoint_path(&run, 3)).unwrap();
    ok(&bin(&["run", s(&m)]));
    assert_eq!(std::fs::read(run.join("metrics.json")).unwrap(), first);
    assert_eq!(std::fs::read(checkpoint_path(&run, 3)).unwrap(), ckpt);
    for k in 0..=3 {
        let (c, p) = formats::read_checkpoint(&checkpoint_path(&run, k)).unwrap();
        assert_eq!(p, metrics.provenance);
        assert_eq!(c.config.seed, 42);
    }
    let (events, _) = formats::decode_events(&std::fs::read_to_string(run.join("events.jsonl")).unwrap()).unwrap();
    assert!(!events.is_empty());
    let (access, _) = formats::decode_access(&std::fs::read_to_string(run.join("access.jsonl")).unwrap()).unwrap();
    assert!(sparsecl_core::continual::audit_no_history(&access).is_empty());
}

#[test]
fn masking_run_artifacts_analyze_and_importance_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let m = manifest(tmp.path(), "importance-fisher", "ratios = [0.05]\nseeds = [42, 43]");
    let out = ok(&bin(&["run", s(&m), "--workers", "2"]));
    assert_eq!(out.lines().count(), 2);
    let run = tmp.path().join("out-importance-fisher/seed-42-ratio-0.05");

    // Standalone importance on the pre-task-2 checkpoint reproduces the run.
    let data = tmp.path().join("task2.jsonl");
    ok(&bin(&["export-task", "--manifest", s(&m), "--task", "2", "--split", "train", "--out", s(&data)]));
    let imp = tmp.path().join("t2.imp");
    ok(&bin(&["importance", "--checkpoint", s(&checkpoint_path(&run, 1)), "--data", s(&data), "--estimator", "fisher", "--out", s(&imp)]));
    let (mine, prov) = formats::read_importance(&imp).unwrap();
    let (theirs, _) = formats::read_importance(&importance_path(&run, 2)).unwrap();
    assert_eq!(mine.scores, theirs.scores);
    assert_eq!(prov.inputs_sha256.len(), 2);

    // Analysis.
    ok(&bin(&["analyze", s(&run)]));
    let a = run.join("analysis");
    let overlap = std::fs::read_to_string(a.join("overlap.csv")).unwrap();
    let rows: Vec<Vec<String>> = overlap.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 3);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r[i + 1], "1");
    }
    let masks: Vec<_> = (1..=3).map(|t| formats::read_mask(&mask_path(&run, t)).unwrap().0).collect();
    for t in 1..=3u32 {
        let csv = std::fs::read_to_string(a.join(format!("layout-task-{}.csv", t))).unwrap();
        let total: usize = csv.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse::<usize>().unwrap()).sum();
        assert_eq!(total, masks[t as usize - 1].k());
    }
    let corr: CorrelationOutput = serde_json::from_str(&std::fs::read_to_string(a.join("correlation.json")).unwrap()).unwrap();
    let metrics: RunMetrics = formats::read_metrics(&run.join("metrics.json")).unwrap();
    let sm = metrics.score_matrix().unwrap();
    let (mut xs, mut ys) = (vec![], vec![]);
    for i in 1..=3usize {
        for t in i + 1..=3 {
            xs.push(mask_overlap(&masks[i - 1], &masks[t - 1]).unwrap());
            ys.push(sm.forgetting(i, t).unwrap());
        }
    }
    assert_eq!(corr.pairs.iter().map(|p| p.overlap).collect::<Vec<_>>(), xs);
    assert_eq!(corr.pairs.iter().map(|p| p.forgetting).collect::<Vec<_>>(), ys);
    assert_eq!(corr.report, correlate(&xs, &ys).unwrap());

    // Comparison against a second strategy on the same tasks.
    let m2 = manifest(tmp.path(), "seq-ft", "");
    ok(&bin(&["run", s(&m2)]));
    let rep = tmp.path().join("report");
    let text = ok(&bin(&["report", s(&tmp.path().join("out-importance-fisher")), s(&tmp.path().join("out-seq-ft")), "--out", s(&rep)]));
    assert_eq!(text.lines().count(), 3);
    let csv = std::fs::read_to_string(rep.join("report.csv")).unwrap();
    let ops: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(6).unwrap().parse().unwrap()).collect();
    assert!(ops[0] >= ops[1]);
}

#[test]
fn second_order_default_xi_and_bad_estimator() {
    let tmp = tempfile::tempdir().unwrap();
    let m = manifest(tmp.path(), "seq-ft", "");
    ok(&bin(&["run", s(&m)]));
    let run = tmp.path().join("out-seq-ft/seed-42");
    let data = tmp.path().join("t1.jsonl");
    ok(&bin(&["export-task", "--manifest", s(&m), "--task", "1", "--out", s(&data)]));
    let imp = tmp.path().join("so.imp");
    let ck = checkpoint_path(&run, 0);
    ok(&bin(&["importance", "--checkpoint", s(&ck), "--data", s(&data), "--estimator", "second-order", "--out", s(&imp)]));
    let (map, _) = formats::read_importance(&imp).unwrap();
    assert_eq!(map.xi, 1e-8);
    assert!(map.scores.iter().all(|&x| (0.0..1.0).contains(&x)));

    let bad = bin(&["importance", "--checkpoint", s(&ck), "--data", s(&data), "--estimator", "hessian", "--out", s(&imp)]);
    assert_eq!(bad.status.code(), Some(2));
    let err = String::from_utf8_lossy(&bad.stderr);
    assert!(err.contains("fisher") && err.contains("second-order") && err.contains("migu-magnitude"), "{}", err);

    let other = tmp.path().join("wide.jsonl");
    std::fs::write(&other, "{\"split\":\"train\",\"features\":[1.0,2.0],\"label\":0}\n").unwrap();
    let mismatch = bin(&["importance", "--checkpoint", s(&ck), "--data", s(&other), "--estimator", "fisher", "--out", s(&imp)]);
    assert_eq!(mismatch.status.code(), Some(2));
}

#[test]
fn exit_codes_for_invalid_and_failing_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let m = manifest(tmp.path(), "seq-ft", "");
    let typo = std::fs::read_to_string(&m).unwrap().replace("epochs = 2", "epoch = 2");
    std::fs::write(&m, typo).unwrap();
    let out = bin(&["run", s(&m)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch"));
    assert!(!tmp.path().join("out-seq-ft").exists());

    let m = manifest(tmp.path(), "seq-ft", "");
    let blowup = std::fs::read_to_string(&m).unwrap().replace("lr = 0.01", "kind = \"sgd\"\nlr = 1e308");
    std::fs::write(&m, blowup).unwrap();
    let out = bin(&["run", s(&m)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("seed 42") && err.contains("task 1"), "{}", err);

    assert_eq!(bin(&["run"]).status.code(), Some(2));
    assert_eq!(bin(&["analyze", "--masks", s(&tmp.path().join("none.mask")), "--out", "x"]).status.code(), Some(1));
}

#[test]
fn jsonl_tasks_feed_a_run() {
    let tmp = tempfile::tempdir().unwrap();
    let m = manifest(tmp.path(), "seq-ft", "");
    for t in 1..=2 {
        let p = tmp.path().join(format!("t{}.jsonl", t));
        ok(&bin(&["export-task", "--manifest", s(&m), "--task", &t.to_string(), "--out", s(&p)]));
    }
    let text = std::fs::read_to_string(&m).unwrap();
    let head = text.split("[[tasks.synthetic]]").next().unwrap().replace("out-seq-ft", "out-jsonl");
    let tail = text.split("[strategy]").nth(1).unwrap();
    let jm = tmp.path().join("jsonl.toml");
    std::fs::write(&jm, format!("{}[tasks]\njsonl = [{{ path = \"t1.jsonl\" }}, {{ path = \"t2.jsonl\", name = \"second\" }}]\n\n[strategy]{}", head, tail))
        .unwrap();
    ok(&bin(&["run", s(&jm)]));
    let metrics = formats::read_metrics(&tmp.path().join("out-jsonl/seed-42/metrics.json")).unwrap();
    assert_eq!(metrics.tasks.len(), 2);
    assert_eq!(metrics.tasks[1].name, "second");

    let bad = tmp.path().join("t1.jsonl");
    let mut lines = std::fs::read_to_string(&bad).unwrap();
    lines.push_str("{\"split\":\"train\",\"features\":[1.0],\"lable\":1}\n");
    std::fs::write(&bad, &lines).unwrap();
    let out = bin(&["run", s(&jm)]);
    assert_eq!(out.status.code(), Some(2));
    let n = lines.lines().count();
    assert!(String::from_utf8_lossy(&out.stderr).contains(&format!("line {}", n)));
}
