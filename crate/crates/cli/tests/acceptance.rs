//! Acceptance checks, one PASS/FAIL line per criterion. Runs with its own
//! `main` so the lines print even when every check passes.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use gsa_core::golden::{self, fold_chair, row_outcomes, APPENDIX_CORPUS, TABLE1};
use gsa_core::harness::config::PipelineConfig;
use gsa_core::harness::{compute_metrics, pipeline};
use gsa_core::rollout::{label_rewards, random_executed_tree, run_arlet_mcts};
use gsa_core::scripted_env::Executor;
use gsa_core::synth::{candidate, synthetic_task};
use gsa_core::task_pool::{EmbeddingVector, ExemplarPool};
use gsa_core::trace::ApiCatalog;
use gsa_core::verifier::{
    aggregate, focal_bce_loss, loss_and_gradient, select_best, AggregationStrategy, Strategy,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, start: Instant) -> Result<(), String> {
    let t = start.elapsed();
    ensure(t < limit, || format!("took {t:.2?}, limit {limit:?}"))
}

// 1 -------------------------------------------------------------------------

fn tree_labels() -> Check {
    let start = Instant::now();
    let mut checked = 0usize;
    let mut mismatches = 0usize;
    for seed in 0..1000u64 {
        let tree = random_executed_tree(seed);
        let rewards = label_rewards(&tree).map_err(|e| e.to_string())?;
        for node in tree.nodes() {
            for m in 1..=node.solution.len() {
                let owner = match node.parent {
                    Some(p) if m <= node.origin.j => tree.node(p),
                    _ => node,
                };
                let o = owner.outcome.as_ref().ok_or("unexecuted node")?;
                let expected = u8::from(owner.failed.is_none() && o.subtask_success[m - 1] && o.overall_success);
                checked += 1;
                mismatches += usize::from(rewards.get(node.index, m) != Some(expected));
            }
        }
    }
    ensure(mismatches == 0, || format!("{mismatches} mismatches"))?;
    within(Duration::from_secs(10), start)?;
    Ok(format!("1000 trees, {checked} labels, 0 mismatches in {:.2?}", start.elapsed()))
}

// 2 -------------------------------------------------------------------------

fn fold_chair_fixture() -> Check {
    let start = Instant::now();
    let mock = fold_chair::mock();
    let exec = Executor::new(fold_chair::world(), ApiCatalog::default());
    let (tree, rewards) =
        run_arlet_mcts(&mock, &mock, &exec, &fold_chair::task(), &fold_chair::prompt(), &fold_chair::rollout_config())
            .map_err(|e| e.to_string())?;
    let labels: Vec<Vec<u8>> = tree.nodes().iter().map(|n| rewards.node_rewards(n.index).to_vec()).collect();
    ensure(labels == vec![vec![0, 0], vec![1, 1], vec![1, 0]], || format!("labels {labels:?}"))?;
    ensure(tree.dedups().len() == 1, || format!("{} dedups", tree.dedups().len()))?;
    // without the dedup the duplicate completion would be a fourth solution run
    let runs = (exec.solution_runs(), exec.subtask_runs());
    ensure(runs == (3, 5), || format!("runs {runs:?}"))?;
    within(Duration::from_secs(5), start)?;
    Ok(format!("labels {labels:?}, 1 dedup, {} solution runs", runs.0))
}

// 3 -------------------------------------------------------------------------

fn corpus_metrics() -> Check {
    let outcomes: Vec<_> = APPENDIX_CORPUS.iter().flat_map(row_outcomes).collect();
    let m = compute_metrics(&outcomes).map_err(|e| e.to_string())?;
    let c = m.counts;
    ensure((c.successes, c.solutions, c.subtask_successes, c.subtasks) == (83, 150, 144, 287), || format!("{c:?}"))?;
    ensure((m.atsr - 0.5533).abs() < 1e-4 && (m.assr - 0.5017).abs() < 1e-4, || format!("{m:?}"))?;
    Ok(format!("ATSR {:.4} (83/150), ASSR {:.4} (144/287)", m.atsr, m.assr))
}

// 4 -------------------------------------------------------------------------

fn aggregation() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..10_000 {
        let n = rng.gen_range(1..=12);
        let s: Vec<f64> = (0..n)
            .map(|_| match rng.gen_range(0..20) {
                0 => 0.0,
                1 => 1.0,
                _ => rng.gen::<f64>(),
            })
            .collect();
        let sorted = {
            let mut v = s.clone();
            v.sort_by(f64::total_cmp);
            v
        };
        let oracle = [
            (Strategy::Mean, s.iter().sum::<f64>() / n as f64),
            (Strategy::GeoMean, s.iter().product::<f64>().powf(1.0 / n as f64)),
            (Strategy::Min, sorted[0]),
            (Strategy::Max, sorted[n - 1]),
            (Strategy::Last, s[n - 1]),
        ];
        let mut got = [0.0; 5];
        for (i, (st, want)) in oracle.iter().enumerate() {
            got[i] = aggregate(&s, *st).map_err(|e| e.to_string())?;
            ensure((got[i] - want).abs() <= 1e-12, || format!("case {case}: {st} {} vs {want}", got[i]))?;
        }
        // min <= geomean <= mean <= max
        ensure(got[2] <= got[1] && got[1] <= got[0] && got[0] <= got[3], || format!("case {case}: AM-GM order broken {got:?}"))?;
    }
    Ok("10000 vectors, all five strategies within 1e-12, Min <= GeoMean <= Mean <= Max".into())
}

// 5 -------------------------------------------------------------------------

fn loss_and_gradients() -> Check {
    let l = focal_bce_loss(0.5, 1, 0.0, 0.5).map_err(|e| e.to_string())?;
    ensure((l - 0.5 * std::f64::consts::LN_2).abs() < 1e-12, || format!("loss {l}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for batch in 0..100 {
        let dim = rng.gen_range(1..=8);
        let n = rng.gen_range(1..=64);
        let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let ys: Vec<u8> = (0..n).map(|_| rng.gen_range(0..=1)).collect();
        let w: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = rng.gen_range(-1.0..1.0);
        let gamma = rng.gen_range(0.0..3.0);
        let alpha = rng.gen_range(0.05..0.95);
        let (_, gw, gb) = loss_and_gradient(&w, b, &xs, &ys, None, gamma, alpha);
        let loss = |w: &[f64], b: f64| loss_and_gradient(w, b, &xs, &ys, None, gamma, alpha).0;
        let h = 1e-6;
        let mut pairs = Vec::new();
        for i in 0..dim {
            let (mut up, mut down) = (w.clone(), w.clone());
            up[i] += h;
            down[i] -= h;
            pairs.push((gw[i], (loss(&up, b) - loss(&down, b)) / (2.0 * h)));
        }
        pairs.push((gb, (loss(&w, b + h) - loss(&w, b - h)) / (2.0 * h)));
        for (a, num) in pairs {
            let scale = a.abs().max(num.abs());
            if scale > 1e-7 {
                let rel = (a - num).abs() / scale;
                worst = worst.max(rel);
                ensure(rel < 1e-4, || format!("batch {batch}: analytic {a} vs numeric {num}"))?;
            }
        }
    }
    Ok(format!("loss(0.5, 1) = 0.5 ln 2; 100 batches, worst relative gradient error {worst:.2e}"))
}

// 6 -------------------------------------------------------------------------

fn retrieval() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..1000 {
        let dim = rng.gen_range(2..=16);
        let n = rng.gen_range(1..=30);
        let k = rng.gen_range(1..=n + 2);
        let mut pool = ExemplarPool::new(dim, "random");
        let mut vectors = Vec::new();
        for i in 0..n {
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let task = synthetic_task(case, i);
            let mut sol = candidate(&task, 2, None);
            sol.overall_success = Some(true);
            pool.insert_with_embedding(task, sol, EmbeddingVector::new(v.clone()).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
            vectors.push(v);
        }
        let q: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut exhaustive: Vec<(usize, f64)> = vectors
            .iter()
            .enumerate()
            .map(|(i, v)| (i, v.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>() / (norm(v) * norm(&q))))
            .collect();
        exhaustive.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        exhaustive.truncate(k);
        let got = pool.retrieve_top_k(&EmbeddingVector::new(q).map_err(|e| e.to_string())?, k).map_err(|e| e.to_string())?;
        let got_idx: Vec<usize> = got.iter().map(|(e, _)| e.inserted_at as usize).collect();
        let want_idx: Vec<usize> = exhaustive.iter().map(|(i, _)| *i).collect();
        ensure(got_idx == want_idx, || format!("pool {case}: {got_idx:?} vs {want_idx:?}"))?;
    }
    let pool = golden::table1_pool();
    let mut published = Vec::new();
    for (c, case) in TABLE1.iter().enumerate() {
        let got = pool.retrieve_top_k(&golden::table1_query(c), 2).map_err(|e| e.to_string())?;
        for ((entry, w), (name, expected)) in got.iter().zip(case.expected.iter()) {
            ensure(entry.task.name == *name, || format!("{}: got {} where {name} expected", case.query, entry.task.name))?;
            ensure((w - expected).abs() < 1e-3, || format!("{name}: {w} vs {expected}"))?;
            published.push(format!("{w:.3}"));
        }
    }
    Ok(format!("1000 pools match the exhaustive sort; similarity table {}", published.join(" ")))
}

// 7 -------------------------------------------------------------------------

fn selection_lift() -> Check {
    let start = Instant::now();
    let report =
        pipeline::synthetic_benchmark(&PipelineConfig::default(), 0, &[Strategy::Last]).map_err(|e| e.to_string())?;
    let rows = &report.sections[0].rows;
    let (base, last) = (rows[0].metrics.atsr, rows[1].metrics.atsr);
    ensure(last >= 0.9, || format!("Last ATSR {last}"))?;
    ensure((0.25..=0.42).contains(&base), || format!("baseline ATSR {base}"))?;
    within(Duration::from_secs(60), start)?;
    Ok(format!("50 tasks x 3 candidates: BaseModel ATSR {base:.4} -> Last ATSR {last:.4} in {:.2?}", start.elapsed()))
}

// 8 -------------------------------------------------------------------------

fn argmax_invariance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..1000 {
        let n = rng.gen_range(1..=8);
        let cands: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..rng.gen_range(1..=6)).map(|_| rng.gen_range(0.01..=1.0)).collect())
            .collect();
        let a = rng.gen_range(0.3..3.0);
        let transform = |x: f64| x.powf(a);
        let mapped: Vec<Vec<f64>> = cands.iter().map(|c| c.iter().map(|x| transform(*x)).collect()).collect();
        // power maps commute with min, max, last and the geometric mean
        for st in [Strategy::Min, Strategy::Max, Strategy::Last, Strategy::GeoMean] {
            let s = AggregationStrategy::new(st);
            let before = select_best(&cands, s).map_err(|e| e.to_string())?.index;
            let after = select_best(&mapped, s).map_err(|e| e.to_string())?.index;
            ensure(before == after, || format!("case {case} {st}: {before} vs {after}"))?;
        }
        // any strictly increasing map of the aggregated scores keeps the winner
        let b = rng.gen_range(0.5..5.0);
        for st in Strategy::ALL {
            let agg: Vec<f64> = cands.iter().map(|c| aggregate(c, st)).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
            let squashed: Vec<f64> = agg.iter().map(|x| (b * x).tanh()).collect();
            let pick = |v: &[f64]| gsa_core::verifier::select_by_score(v, 0.5).map(|s| s.index);
            let (before, after) = (pick(&agg).map_err(|e| e.to_string())?, pick(&squashed).map_err(|e| e.to_string())?);
            ensure(before == after, || format!("case {case} {st}: {before} vs {after}"))?;
        }
    }
    Ok("1000 candidate sets, chosen index unchanged under every transform".into())
}

// 9 -------------------------------------------------------------------------

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/e2e")
}

fn end_to_end() -> Check {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg_dir = dir.path().join("cfg");
    std::fs::create_dir_all(&cfg_dir).map_err(|e| e.to_string())?;
    for e in std::fs::read_dir(fixture_dir()).map_err(|e| e.to_string())? {
        let e = e.map_err(|e| e.to_string())?;
        std::fs::copy(e.path(), cfg_dir.join(e.file_name())).map_err(|e| e.to_string())?;
    }
    let config = cfg_dir.join("config.toml");
    let out = dir.path().join("out");
    let seed_file = cfg_dir.join("pool_seed.jsonl");
    let steps: [&[&str]; 7] = [
        &["pool", "add", "--from", seed_file.to_str().ok_or("path")?],
        &["generate"],
        &["rollout"],
        &["dataset"],
        &["train"],
        &["evaluate"],
        &["pool", "list"],
    ];
    for args in steps {
        let output = Command::new(env!("CARGO_BIN_EXE_gsa"))
            .arg("--config")
            .arg(&config)
            .arg("--out-dir")
            .arg(&out)
            .args(args)
            .env("HTTP_PROXY", "http://127.0.0.1:9")
            .env("HTTPS_PROXY", "http://127.0.0.1:9")
            .output()
            .map_err(|e| e.to_string())?;
        ensure(output.status.success(), || {
            format!("`gsa {}` failed: {}", args.join(" "), String::from_utf8_lossy(&output.stderr))
        })?;
    }
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let text = std::fs::read_to_string(out.join("report.txt")).map_err(|e| e.to_string())?;
    let sections = json["sections"].as_array().ok_or("no sections")?;
    let splits: Vec<&str> = sections.iter().filter_map(|s| s["split"].as_str()).collect();
    ensure(splits == ["task", "solution"], || format!("splits {splits:?}"))?;
    for s in sections {
        let methods: Vec<&str> = s["rows"].as_array().ok_or("no rows")?.iter().filter_map(|r| r["method"].as_str()).collect();
        ensure(methods == ["BaseModel", "mean", "geomean", "min", "max", "last"], || format!("methods {methods:?}"))?;
    }
    ensure(text.contains("ATSR") && text.contains("Avg. Num. of Sub."), || "text table missing columns".into())?;

    let missing = Command::new(env!("CARGO_BIN_EXE_gsa"))
        .args(["--config", "/nonexistent/config.toml", "generate"])
        .output()
        .map_err(|e| e.to_string())?;
    ensure(!missing.status.success(), || "missing config did not fail".into())?;
    within(Duration::from_secs(120), start)?;
    Ok(format!("pool -> generate -> rollout -> dataset -> train -> evaluate in {:.2?}, 5 strategies x 2 splits", start.elapsed()))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("tree reward labels match the brute-force rule", tree_labels),
        ("Fold Chair golden rollout", fold_chair_fixture),
        ("corpus metric arithmetic", corpus_metrics),
        ("aggregation strategies", aggregation),
        ("focal loss and gradients", loss_and_gradients),
        ("retrieval", retrieval),
        ("selection lift on the synthetic suite", selection_lift),
        ("argmax invariance", argmax_invariance),
        ("end-to-end offline run", end_to_end),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {why}", i + 1);
            }
        }
    }
    println!("\n{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
