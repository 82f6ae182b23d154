//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL
//! line each, and exits non-zero if any failed.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use binsca::corpus::{function_id, ingest_source_corpus, ScaDatabase, SourceRecord};
use binsca::detect::{detect_components, filter_by_dependency, TplDependency};
use binsca::embed::{clip_symmetric_loss, Embedding, LossBatch, Projection};
use binsca::eval::{run_simulation, SimulationRun};
use binsca::locality::{max_file_interval, select_intervals, FileInterval, Match, MatchResult, PairMap, Provenance};
use binsca::retrieval::{compute_mrr, compute_recall_at_k, VectorCorpus};
use binsca::scan::{embed_database, run_scan, ScanOptions, ScanPaths, COMPONENTS_FILE, MATCHES_FILE};
use binsca::simulate::{compile_binary, generate_corpus, SimConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DIM: usize = 256;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let held: bool = $cond;
        if !held {
            return Err(format!($($msg)+));
        }
    };
}

fn within(elapsed: Duration, budget: Duration) -> Outcome {
    ensure!(elapsed <= budget, "took {elapsed:.2?}, budget {budget:?}");
    Ok(format!("{elapsed:.2?}"))
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Embedding {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let e = Embedding::from_vec(v);
        if e.is_retrievable() {
            return e;
        }
    }
}

fn brute_force_topk(rows: &[(String, Embedding)], query: &Embedding, k: usize) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = rows
        .iter()
        .map(|(id, e)| {
            let mut s = 0.0;
            for (a, b) in e.as_slice().iter().zip(query.as_slice()) {
                s += a * b;
            }
            (id.clone(), s.clamp(-1.0, 1.0) + 0.0)
        })
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

fn retrieval_oracle() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut queries_checked = 0;
    for _ in 0..200 {
        let n = rng.gen_range(1..=1000);
        let mut rows: Vec<(String, Embedding)> = (0..n).map(|i| (format!("f{i:05}"), random_unit(&mut rng, 64))).collect();
        // force exact ties
        for i in 0..n / 20 {
            let src = rows[rng.gen_range(0..n)].1.clone();
            rows[i].1 = src;
        }
        let corpus = VectorCorpus::build(rows.clone()).map_err(|e| e.to_string())?;
        for q in 0..3 {
            let query = if q == 0 { rows[rng.gen_range(0..n)].1.clone() } else { random_unit(&mut rng, 64) };
            for k in [1, 10, 100] {
                let got: Vec<(String, f64)> = corpus
                    .query_topk(&query, k)
                    .map_err(|e| e.to_string())?
                    .into_iter()
                    .map(|h| (h.func_id, h.similarity))
                    .collect();
                let want = brute_force_topk(&rows, &query, k);
                ensure!(got == want, "mismatch for n={n} k={k}");
                queries_checked += 1;
            }
        }
    }
    within(t.elapsed(), Duration::from_secs(30)).map(|d| format!("{queries_checked} queries, {d}"))
}

/// O(n^2) enumeration of address windows: most pairs under the distinct
/// function limit, earliest start on ties.
fn window_oracle(pairs: &PairMap, limit: usize) -> Option<(u64, u64, usize, usize)> {
    let addrs: Vec<u64> = pairs.keys().copied().collect();
    let mut best: Option<(u64, u64, usize, usize)> = None;
    for i in 0..addrs.len() {
        for j in i..addrs.len() {
            let funcs: BTreeSet<&String> = addrs[i..=j].iter().flat_map(|a| &pairs[a]).collect();
            if funcs.len() > limit {
                break;
            }
            let hits: usize = addrs[i..=j].iter().map(|a| pairs[a].len()).sum();
            if best.is_none_or(|b| hits > b.2) {
                best = Some((addrs[i], addrs[j], hits, funcs.len()));
            }
        }
    }
    best.filter(|b| b.2 >= 2)
}

fn interval_oracle() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut found = 0;
    for _ in 0..500 {
        let n_pairs = rng.gen_range(0..=50);
        let n_funcs = rng.gen_range(1..=12);
        let mut pairs = PairMap::new();
        for _ in 0..n_pairs {
            let addr = rng.gen_range(0..40u64) * 4;
            pairs.entry(addr).or_default().insert(format!("s{}", rng.gen_range(0..n_funcs)));
        }
        let limit = rng.gen_range(1..=n_funcs + 1);
        let got = max_file_interval("f", &pairs, limit).map(|iv| (iv.start, iv.end, iv.max_hit, iv.distinct_funcs));
        let want = window_oracle(&pairs, limit);
        ensure!(got == want, "pairs {pairs:?} limit {limit}: got {got:?}, oracle {want:?}");
        found += usize::from(got.is_some());
    }
    within(t.elapsed(), Duration::from_secs(10)).map(|d| format!("500 sets ({found} with an interval), {d}"))
}

fn clip_loss() -> Outcome {
    let unit = |v: &[f64]| Embedding::from_vec(v.to_vec());
    let ortho = [unit(&[1.0, 0.0]), unit(&[0.0, 1.0])];
    let l = clip_symmetric_loss(&LossBatch::new(&ortho, &ortho, 1.0).map_err(|e| e.to_string())?).loss;
    let expected = (1.0 + (-1.0f64).exp()).ln();
    ensure!((l - expected).abs() <= 1e-9, "orthonormal loss {l}, expected {expected}");

    let flat = vec![unit(&[0.6, 0.8]); 4];
    let l4 = clip_symmetric_loss(&LossBatch::new(&flat, &flat, 0.5).map_err(|e| e.to_string())?).loss;
    ensure!((l4 - 4f64.ln()).abs() <= 1e-9, "uniform loss {l4}, expected ln 4");

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut proj = Projection::random(12, 5, 0.6, 3);
    let bin: Vec<Vec<f64>> = (0..4).map(|_| (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let src: Vec<Vec<f64>> = (0..4).map(|_| (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let (_, grad, _) = proj.loss_gradient(&bin, &src).map_err(|e| e.to_string())?;
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for r in 0..proj.out_dim() {
        for c in 0..proj.in_dim() {
            let w = proj.weight(r, c);
            proj.set_weight(r, c, w + h);
            let up = proj.batch_loss(&bin, &src).map_err(|e| e.to_string())?.loss;
            proj.set_weight(r, c, w - h);
            let down = proj.batch_loss(&bin, &src).map_err(|e| e.to_string())?.loss;
            proj.set_weight(r, c, w);
            let numeric = (up - down) / (2.0 * h);
            let analytic = grad[r * proj.in_dim() + c];
            worst = worst.max((numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-3));
        }
    }
    ensure!(worst <= 1e-4, "gradient relative error {worst:e}");

    let b: Vec<Embedding> = (0..5).map(|_| random_unit(&mut rng, 8)).collect();
    let s: Vec<Embedding> = (0..5).map(|_| random_unit(&mut rng, 8)).collect();
    let ab = clip_symmetric_loss(&LossBatch::new(&b, &s, 0.2).map_err(|e| e.to_string())?);
    let ba = clip_symmetric_loss(&LossBatch::new(&s, &b, 0.2).map_err(|e| e.to_string())?);
    ensure!(ab.loss == ba.loss && ab.l_bin == ba.l_src && ab.l_src == ba.l_bin, "swap symmetry broken");
    Ok(format!("ln(1+1/e) and ln 4 within 1e-9, gradient error {worst:.1e}, swap exact"))
}

fn rank_metrics() -> Outcome {
    let ranked = vec![
        vec!["a", "x", "y", "z"],
        vec!["x", "b", "y", "z"],
        vec!["x", "y", "z", "c"],
    ];
    let truth = ["a", "b", "c"];
    let mrr = compute_mrr(&ranked, &truth).map_err(|e| e.to_string())?;
    ensure!((mrr - 7.0 / 12.0).abs() <= 1e-12, "MRR {mrr}");
    let r2 = compute_recall_at_k(&ranked, &truth, 2).map_err(|e| e.to_string())?;
    ensure!(r2.count == 2 && r2.recall == 2.0 / 3.0, "recall@2 {r2:?}");
    Ok(format!("MRR {mrr:.12}, recall@2 {}/3", r2.count))
}

/// Scans run by any criterion, checked for the retrieval bound later.
#[derive(Default)]
struct ScanLog {
    runs: Vec<(String, f64, f64, bool)>,
}

impl ScanLog {
    fn record(&mut self, label: String, run: &SimulationRun) {
        let m = &run.matching;
        let members = run
            .scan
            .matches
            .matches
            .values()
            .all(|e| e.candidates.contains(&e.func_id));
        self.runs.push((label, m.recall_exact, m.retrieval.recall_at_k, members && m.retrieval.closure_holds));
    }
}

fn simulate(config: &SimConfig, options: &ScanOptions) -> Result<SimulationRun, String> {
    run_simulation(config, DIM, options).map_err(|e| e.to_string())
}

fn identity_closure(log: &mut ScanLog) -> Outcome {
    let t = Instant::now();
    let mut scans = 0;
    for seed in 0..5 {
        for linked in [1, 2, 3] {
            let config = SimConfig { seed, linked_tpls: Some(linked), ..Default::default() };
            let run = simulate(&config, &ScanOptions::default())?;
            log.record(format!("identity seed {seed} linked {linked}"), &run);
            let m = &run.matching;
            ensure!(
                m.exact_tp == m.total_labels && m.total_matches == m.total_labels,
                "seed {seed}: {}/{} exact, {} emitted",
                m.exact_tp,
                m.total_labels,
                m.total_matches
            );
            let got = run.scan.components.tpl_ids();
            ensure!(got == run.truth.component_list, "seed {seed}: tpls {got:?}, linked {:?}", run.truth.component_list);
            ensure!(run.truth.component_list.len() == linked, "link plan did not honour linked_tpls");
            scans += 1;
        }
    }
    within(t.elapsed(), Duration::from_secs(60)).map(|d| format!("{scans} scans of 3x4x6, all matches and tpl sets exact, {d}"))
}

fn locality_lift(log: &mut ScanLog) -> Outcome {
    let t = Instant::now();
    let seeds = 5;
    let (mut final_recall, mut r1, mut r10) = (0.0, 0.0, 0.0);
    for seed in 0..seeds {
        let config = SimConfig {
            seed,
            clone_fanout: 5,
            mutation_rate: 0.05,
            variant_rate: 0.5,
            ..Default::default()
        };
        let run = simulate(&config, &ScanOptions { k: 10, ..Default::default() })?;
        ensure!(
            run.db.func_to_files.values().filter(|f| f.len() >= 5).count() == 72,
            "every body should sit in at least five files"
        );
        log.record(format!("fanout seed {seed}"), &run);
        final_recall += run.matching.recall_exact / seeds as f64;
        r1 += run.matching.retrieval.recall_at_1 / seeds as f64;
        r10 += run.matching.retrieval.recall_at_k / seeds as f64;
    }
    ensure!(final_recall >= 0.95 * r10, "final {final_recall:.4} < 0.95 x recall@10 {r10:.4}");
    ensure!(final_recall > r1, "final {final_recall:.4} not above recall@1 {r1:.4}");
    let d = within(t.elapsed(), Duration::from_secs(300))?;
    Ok(format!("mean recall@1 {r1:.4}, recall@10 {r10:.4}, final {final_recall:.4}, {d}"))
}

fn retrieval_bound(log: &mut ScanLog) -> Outcome {
    // noisier builds, a range of k, and k = 1 where nothing can move
    for seed in 0..4 {
        for k in [1, 3, 10] {
            let config = SimConfig {
                seed,
                n_tpls: 4,
                mutation_rate: 0.1,
                clone_fanout: 2,
                variant_rate: 0.3,
                duplication_rate: 0.2,
                inline_rate: 0.1,
                junk_functions: 4,
                vendoring_tpls: 1,
                ..Default::default()
            };
            let run = simulate(&config, &ScanOptions { k, ..Default::default() })?;
            if k == 1 {
                let m = &run.matching;
                ensure!(
                    m.recall_exact == m.retrieval.recall_at_1,
                    "k=1 seed {seed}: final {} vs recall@1 {}",
                    m.recall_exact,
                    m.retrieval.recall_at_1
                );
            }
            log.record(format!("noisy seed {seed} k {k}"), &run);
        }
    }
    for (label, final_recall, recall_k, holds) in &log.runs {
        ensure!(*holds && final_recall <= recall_k, "{label}: final {final_recall} vs recall@k {recall_k}");
    }
    Ok(format!("{} scans, every match within its top-k", log.runs.len()))
}

fn dependency_filtering() -> Outcome {
    let set = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<BTreeSet<String>>();
    let mut dep = TplDependency::new();
    dep.add("llvm", "zlib").map_err(|e| e.to_string())?;
    let kept = filter_by_dependency(&set(&["zlib", "llvm"]), &dep);
    ensure!(kept == set(&["zlib"]), "zlib/llvm kept {kept:?}");

    // mutual reuse through the full detector
    let body = vec!["shared".to_string(), "(".into(), ")".into()];
    let records = ["A", "B"].map(|tpl| SourceRecord {
        tpl: tpl.into(),
        file: "x.c".into(),
        name: "shared".into(),
        tokens: body.clone(),
        callees: vec![],
    });
    let (db, _) = ingest_source_corpus(records);
    let mut cycle = TplDependency::new();
    cycle.add("A", "B").map_err(|e| e.to_string())?;
    cycle.add("B", "A").map_err(|e| e.to_string())?;
    let mut result = MatchResult::default();
    result.matches.insert(
        0x10,
        Match {
            func_id: function_id(&body),
            file_id: None,
            provenance: Provenance::Top1,
            similarity: 1.0,
        },
    );
    let report = detect_components("bin", &result, &db, &cycle, 0.01).map_err(|e| e.to_string())?;
    ensure!(report.components.is_empty(), "cycle reported {:?}", report.tpl_ids());
    ensure!(!report.warnings.is_empty(), "cycle produced no warning");

    // theta monotonicity: 200-function TPLs credited with 0..8 matches so
    // ratios fall on both sides of each threshold
    let mut sizes = Vec::new();
    for seed in 0..2 {
        let config = SimConfig {
            seed,
            n_tpls: 6,
            files_per_tpl: 20,
            funcs_per_file: 10,
            mutation_rate: 0.05,
            ..Default::default()
        };
        let run = simulate(&config, &ScanOptions::default())?;
        let mut quotas = vec![0usize, 1, 2, 3, 5, 8];
        quotas.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let partial = partial_match_result(&run, &quotas);
        let mut previous: Option<BTreeSet<String>> = None;
        for theta in [0.005, 0.01, 0.02] {
            let r = detect_components("bin", &partial, &run.db, &run.corpus.dependency, theta).map_err(|e| e.to_string())?;
            let ids = r.tpl_ids();
            if let Some(prev) = &previous {
                ensure!(ids.is_subset(prev), "theta {theta} reported {ids:?}, outside {prev:?}");
            }
            let expected = quotas.iter().filter(|&&q| q as f64 / 200.0 > theta).count();
            ensure!(ids.len() == expected, "theta {theta}: {} tpls, expected {expected}", ids.len());
            sizes.push(ids.len());
            previous = Some(ids);
        }
    }
    Ok(format!("{{zlib}}, cycle -> none with warning, theta nesting holds (tpls reported {sizes:?})"))
}

/// Keeps the first `quotas[t]` correct matches of TPL number t.
fn partial_match_result(run: &SimulationRun, quotas: &[usize]) -> MatchResult {
    let mut used = vec![0usize; quotas.len()];
    let mut result = MatchResult::default();
    for (rva, entry) in run.scan.matches.decoded().expect("scan output decodes") {
        if run.truth.mapping.get(&rva) != Some(&entry.func_id) {
            continue;
        }
        let tpl = run.db.tpls_of(&entry.func_id).iter().next().expect("matched function has a tpl");
        let t: usize = tpl.trim_start_matches("lib").parse().expect("simulated tpl name");
        if used[t] == quotas[t] {
            continue;
        }
        used[t] += 1;
        result.matches.insert(
            rva,
            Match {
                func_id: entry.func_id.clone(),
                file_id: entry.file_id.clone(),
                provenance: entry.provenance,
                similarity: entry.similarity,
            },
        );
    }
    result
}

fn random_intervals(rng: &mut ChaCha8Rng) -> Vec<FileInterval> {
    let n = rng.gen_range(0..30);
    (0..n)
        .map(|i| {
            let start = rng.gen_range(0..200u64);
            let end = start + rng.gen_range(0..40u64);
            let hit = rng.gen_range(2..10);
            FileInterval {
                file_id: format!("file{}", i % 7),
                start,
                end,
                max_hit: hit,
                distinct_funcs: hit,
                func_pairs: PairMap::new(),
                similarity_sum: rng.gen_range(0.0..hit as f64),
            }
        })
        .collect()
}

fn greedy_intervals() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut kept = 0;
    for _ in 0..1000 {
        let mut list = random_intervals(&mut rng);
        list.shuffle(&mut rng);
        let picked = select_intervals(list);
        for pair in picked.windows(2) {
            ensure!(pair[0].end < pair[1].start, "overlap between {:?} and {:?}", pair[0], pair[1]);
        }
        kept += picked.len();
    }
    let hand = |id: &str, s, e, h| FileInterval {
        file_id: id.into(),
        start: s,
        end: e,
        max_hit: h,
        distinct_funcs: h,
        func_pairs: PairMap::new(),
        similarity_sum: 0.0,
    };
    let picked: Vec<String> = select_intervals(vec![hand("C", 0x50, 0x70, 3), hand("B", 0x20, 0x60, 5), hand("A", 0x10, 0x40, 4)])
        .into_iter()
        .map(|i| i.file_id)
        .collect();
    ensure!(picked == ["A", "C"], "hand trace gave {picked:?}");
    Ok(format!("1000 lists ({kept} intervals kept) pairwise disjoint, hand trace [A, C]"))
}

fn pipeline_files(dir: &Path, config: &SimConfig) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let err = |e: binsca::Error| e.to_string();
    let corpus = generate_corpus(config).map_err(err)?;
    let (db, _) = ingest_source_corpus(corpus.records.iter().cloned());
    let (_, files) = corpus.link_plan(config);
    let (binary, truth) = compile_binary(&db, &files, config, &corpus.vendored_from).map_err(err)?;
    db.persist(&dir.join("db.jsonl")).map_err(err)?;
    embed_database(&ScaDatabase::load(&dir.join("db.jsonl")).map_err(err)?, DIM)
        .map_err(err)?
        .write(&dir.join("vectors.jsonl"))
        .map_err(err)?;
    binary.write(&dir.join("binary.jsonl")).map_err(err)?;
    truth.write(&dir.join("truth.json")).map_err(err)?;
    corpus.dependency.write(&dir.join("deps.jsonl")).map_err(err)?;
    let paths = ScanPaths {
        binary: dir.join("binary.jsonl"),
        db: dir.join("db.jsonl"),
        corpus: dir.join("vectors.jsonl"),
        binary_vectors: None,
        deps: Some(dir.join("deps.jsonl")),
        out_dir: dir.join("out"),
    };
    run_scan(&paths, &ScanOptions::default()).map_err(|e| e.to_string())?;
    let mut out = BTreeMap::new();
    for name in ["db.jsonl", "vectors.jsonl", "binary.jsonl", "truth.json", "deps.jsonl"] {
        out.insert(name.to_string(), std::fs::read(dir.join(name)).map_err(|e| e.to_string())?);
    }
    for name in [MATCHES_FILE, COMPONENTS_FILE] {
        out.insert(name.to_string(), std::fs::read(dir.join("out").join(name)).map_err(|e| e.to_string())?);
    }
    Ok(out)
}

fn determinism() -> Outcome {
    let config = SimConfig {
        seed: 77,
        n_tpls: 4,
        mutation_rate: 0.08,
        clone_fanout: 2,
        variant_rate: 0.3,
        duplication_rate: 0.2,
        inline_rate: 0.1,
        junk_functions: 3,
        vendoring_tpls: 1,
        linked_tpls: Some(3),
        ..Default::default()
    };
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = pipeline_files(a.path(), &config)?;
    let second = pipeline_files(b.path(), &config)?;
    for (name, bytes) in &first {
        ensure!(second.get(name) == Some(bytes), "{name} differs between runs");
    }
    let distinct: HashSet<&Vec<u8>> = first.values().collect();
    Ok(format!("{} artifacts byte-identical ({} distinct)", first.len(), distinct.len()))
}

fn main() {
    let mut log = ScanLog::default();
    let mut failed = 0;
    let mut run = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS criterion {n:>2} {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {n:>2} {name}: {detail}");
            }
        }
    };
    run(1, "retrieval oracle equivalence", &mut retrieval_oracle);
    run(2, "max_file_interval oracle equivalence", &mut interval_oracle);
    run(3, "contrastive loss correctness", &mut clip_loss);
    run(4, "MRR and recall@k arithmetic", &mut rank_metrics);
    run(5, "identity compilation closure", &mut || identity_closure(&mut log));
    run(6, "locality lift over raw retrieval", &mut || locality_lift(&mut log));
    run(7, "final recall bounded by recall@k", &mut || retrieval_bound(&mut log));
    run(8, "dependency filtering and theta", &mut dependency_filtering);
    run(9, "greedy interval properties", &mut greedy_intervals);
    run(10, "pipeline determinism", &mut determinism);
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all 10 criteria passed");
}
