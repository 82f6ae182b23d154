use std::collections::BTreeSet;

use binsca::corpus::{function_id, ingest_source_corpus, ScaDatabase, SourceRecord};
use binsca::detect::{detect_components, TplDependency};
use binsca::embed::{clip_symmetric_loss, cosine, embed_tokens, Embedding, LossBatch};
use binsca::eval::run_simulation;
use binsca::locality::{max_file_interval, select_intervals, FileInterval, Match, MatchResult, PairMap, Provenance};
use binsca::retrieval::{compute_mrr, compute_recall_at_k, VectorCorpus};
use binsca::scan::ScanOptions;
use binsca::simulate::{compile_binary, generate_corpus, SimConfig};
use proptest::prelude::*;

fn unit_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, dim).prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

fn pair_map() -> impl Strategy<Value = PairMap> {
    prop::collection::vec((0u64..30, 0usize..8), 0..30).prop_map(|raw| {
        let mut m = PairMap::new();
        for (addr, f) in raw {
            m.entry(addr * 8).or_default().insert(format!("s{f}"));
        }
        m
    })
}

fn window_oracle(pairs: &PairMap, limit: usize) -> Option<(u64, u64, usize)> {
    let addrs: Vec<u64> = pairs.keys().copied().collect();
    let mut best: Option<(u64, u64, usize)> = None;
    for i in 0..addrs.len() {
        for j in i..addrs.len() {
            let funcs: BTreeSet<&String> = addrs[i..=j].iter().flat_map(|a| &pairs[a]).collect();
            if funcs.len() > limit {
                break;
            }
            let hits = addrs[i..=j].iter().map(|a| pairs[a].len()).sum();
            if best.is_none_or(|b| hits > b.2) {
                best = Some((addrs[i], addrs[j], hits));
            }
        }
    }
    best.filter(|b| b.2 >= 2)
}

fn interval_list() -> impl Strategy<Value = Vec<FileInterval>> {
    prop::collection::vec((0u64..100, 0u64..30, 2usize..9, 0usize..5), 0..20).prop_map(|raw| {
        raw.into_iter()
            .map(|(start, len, hit, file)| FileInterval {
                file_id: format!("file{file}"),
                start,
                end: start + len,
                max_hit: hit,
                distinct_funcs: hit,
                func_pairs: PairMap::new(),
                similarity_sum: 0.0,
            })
            .collect()
    })
}

fn record(tpl: usize, file: usize, body: usize) -> SourceRecord {
    SourceRecord {
        tpl: format!("t{tpl}"),
        file: format!("f{file}.c"),
        name: format!("fn{body}"),
        tokens: vec!["int".into(), format!("fn{body}"), "(".into(), ")".into()],
        callees: vec![],
    }
}

fn records() -> impl Strategy<Value = Vec<SourceRecord>> {
    prop::collection::vec((0usize..3, 0usize..3, 0usize..10), 0..40)
        .prop_map(|raw| raw.into_iter().map(|(t, f, b)| record(t, f, b)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn topk_matches_full_sort(rows in prop::collection::vec(unit_vec(8), 1..60), q in unit_vec(8), k in 1usize..70) {
        let rows: Vec<(String, Embedding)> = rows.into_iter().enumerate()
            .map(|(i, v)| (format!("id{i:03}"), Embedding::from_vec(v)))
            .collect();
        let corpus = VectorCorpus::build(rows.clone()).unwrap();
        let query = Embedding::from_vec(q);
        let got = corpus.query_topk(&query, k).unwrap();
        prop_assert_eq!(got.len(), k.min(rows.len()));
        let mut all: Vec<(f64, &String)> = rows.iter()
            .map(|(id, e)| (e.as_slice().iter().zip(query.as_slice()).map(|(a, b)| a * b).sum::<f64>().clamp(-1.0, 1.0) + 0.0, id))
            .collect();
        all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
        for (hit, (sim, id)) in got.iter().zip(&all) {
            prop_assert_eq!(&hit.func_id, *id);
            prop_assert_eq!(hit.similarity, *sim);
        }
    }

    #[test]
    fn interval_matches_window_enumeration(pairs in pair_map(), limit in 1usize..9) {
        let got = max_file_interval("f", &pairs, limit);
        let want = window_oracle(&pairs, limit);
        prop_assert_eq!(got.as_ref().map(|iv| (iv.start, iv.end, iv.max_hit)), want);
        if let Some(iv) = got {
            prop_assert!(iv.distinct_funcs <= limit);
            prop_assert!(iv.func_pairs.keys().all(|a| (iv.start..=iv.end).contains(a)));
        }
    }

    #[test]
    fn greedy_selection_is_disjoint_and_maximal(list in interval_list()) {
        let picked = select_intervals(list.clone());
        for w in picked.windows(2) {
            prop_assert!(w[0].end < w[1].start);
        }
        for iv in &list {
            let overlaps = picked.iter().any(|p| p.start <= iv.end && iv.start <= p.end);
            prop_assert!(overlaps, "{:?} could have been added", iv);
        }
    }

    #[test]
    fn ingestion_ignores_order_and_repeats(recs in records(), seed in any::<u64>()) {
        let (db, _) = ingest_source_corpus(recs.clone());
        let mut shuffled = recs.clone();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
        let (db2, _) = ingest_source_corpus(shuffled);
        prop_assert_eq!(&db.func_to_files, &db2.func_to_files);
        prop_assert_eq!(&db.func_to_tpls, &db2.func_to_tpls);

        let doubled: Vec<SourceRecord> = recs.iter().chain(&recs).cloned().collect();
        let (db3, _) = ingest_source_corpus(doubled);
        prop_assert_eq!(&db, &db3);

        let unique: BTreeSet<String> = recs.iter().map(|r| function_id(&r.tokens)).collect();
        prop_assert_eq!(db.functions.len(), unique.len());
        for (tpl, t) in &db.tpls {
            let oracle: BTreeSet<String> = recs.iter().filter(|r| &r.tpl == tpl).map(|r| function_id(&r.tokens)).collect();
            prop_assert_eq!(t.total_func_count, oracle.len());
        }
    }

    #[test]
    fn persisted_database_round_trips(recs in records()) {
        let (db, _) = ingest_source_corpus(recs);
        let tmp = tempfile::NamedTempFile::new().unwrap();
        db.persist(tmp.path()).unwrap();
        prop_assert_eq!(ScaDatabase::load(tmp.path()).unwrap(), db);
    }

    #[test]
    fn raising_theta_never_adds_components(recs in records(), picks in prop::collection::vec(0usize..10, 0..12), t1 in 0.001f64..0.99, t2 in 0.001f64..0.99) {
        let (db, _) = ingest_source_corpus(recs);
        let ids: Vec<&String> = db.functions.keys().collect();
        prop_assume!(!ids.is_empty());
        let mut result = MatchResult::default();
        for (i, p) in picks.iter().enumerate() {
            result.matches.insert(i as u64, Match {
                func_id: ids[p % ids.len()].clone(),
                file_id: None,
                provenance: Provenance::Top1,
                similarity: 1.0,
            });
        }
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let dep = TplDependency::new();
        let low = detect_components("b", &result, &db, &dep, lo).unwrap().tpl_ids();
        let high = detect_components("b", &result, &db, &dep, hi).unwrap().tpl_ids();
        prop_assert!(high.is_subset(&low));
    }

    #[test]
    fn rank_metrics_are_consistent(lists in prop::collection::vec((prop::collection::vec(0u8..12, 1..8), 0u8..12), 1..20)) {
        let ranked: Vec<Vec<u8>> = lists.iter().map(|(l, _)| l.clone()).collect();
        let truth: Vec<u8> = lists.iter().map(|(_, t)| *t).collect();
        let mrr = compute_mrr(&ranked, &truth).unwrap();
        let mut previous = 0.0;
        for k in 1..=8 {
            let r = compute_recall_at_k(&ranked, &truth, k).unwrap().recall;
            prop_assert!(r >= previous);
            previous = r;
        }
        let r1 = compute_recall_at_k(&ranked, &truth, 1).unwrap().recall;
        prop_assert!(mrr >= r1 && mrr <= previous);
    }

    #[test]
    fn contrastive_loss_is_symmetric_and_positive(b in prop::collection::vec(unit_vec(4), 2..6), s_seed in prop::collection::vec(unit_vec(4), 6), tau in 0.05f64..2.0) {
        let n = b.len();
        let bin: Vec<Embedding> = b.into_iter().map(Embedding::from_vec).collect();
        let src: Vec<Embedding> = s_seed.into_iter().take(n).map(Embedding::from_vec).collect();
        let ab = clip_symmetric_loss(&LossBatch::new(&bin, &src, tau).unwrap());
        let ba = clip_symmetric_loss(&LossBatch::new(&src, &bin, tau).unwrap());
        prop_assert_eq!(ab.loss, ba.loss);
        prop_assert!(ab.loss > 0.0 && ab.loss.is_finite());
        prop_assert!((ab.loss - (ab.l_bin + ab.l_src) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn embeddings_are_deterministic_unit_vectors(tokens in prop::collection::vec("[a-z(){};+*=0-9]{1,6}", 1..40), dim in 8usize..128) {
        let a = embed_tokens(&tokens, dim).unwrap();
        let b = embed_tokens(&tokens, dim).unwrap();
        prop_assert_eq!(&a, &b);
        if a.is_retrievable() {
            let norm: f64 = a.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn scans_respect_the_retrieval_bound(seed in 0u64..1000, mutation in 0.0f64..0.15, k in 1usize..12, fanout in 1usize..4) {
        let config = SimConfig {
            seed,
            mutation_rate: mutation,
            clone_fanout: fanout,
            variant_rate: 0.3,
            duplication_rate: 0.2,
            inline_rate: 0.1,
            junk_functions: 3,
            ..Default::default()
        };
        let run = run_simulation(&config, 128, &ScanOptions { k, ..Default::default() }).unwrap();
        let m = &run.matching;
        prop_assert!(m.retrieval.closure_holds);
        prop_assert!(m.fuzzy_tp >= m.exact_tp);
        prop_assert!(m.recall_exact <= m.retrieval.recall_at_k);
    }
}

#[test]
fn compiled_functions_stay_closest_to_their_source() {
    let config = SimConfig {
        seed: 5,
        n_tpls: 5,
        files_per_tpl: 4,
        funcs_per_file: 5,
        mutation_rate: 0.1,
        ..Default::default()
    };
    let corpus = generate_corpus(&config).unwrap();
    let (db, _) = ingest_source_corpus(corpus.records.iter().cloned());
    let (_, files) = corpus.link_plan(&config);
    let (binary, truth) = compile_binary(&db, &files, &config, &corpus.vendored_from).unwrap();
    let ids: Vec<&String> = db.functions.keys().collect();

    let mut wins = 0;
    let mut trials = 0;
    for (i, (rva, src)) in truth.mapping.iter().enumerate().take(100) {
        let other = ids.iter().cycle().skip(i * 7 + 1).find(|id| **id != src).unwrap();
        let b = embed_tokens(&binary.functions[rva].tokens, 256).unwrap();
        let own = embed_tokens(&db.functions[src].tokens, 256).unwrap();
        let unrelated = embed_tokens(&db.functions[*other].tokens, 256).unwrap();
        if cosine(b.as_slice(), own.as_slice()) > cosine(b.as_slice(), unrelated.as_slice()) {
            wins += 1;
        }
        trials += 1;
    }
    assert_eq!(trials, 100);
    assert!(wins >= 95, "{wins}/100");
}
