//! Simulated build, file-based scan through the same paths the CLI uses,
//! and scoring against the ground truth.

use binsca::corpus::ingest_source_corpus;
use binsca::eval::{evaluate_matching, evaluate_sca};
use binsca::scan::{embed_database, run_scan, ScanOptions, ScanPaths};
use binsca::simulate::{compile_binary, generate_corpus, SimConfig};

fn main() -> anyhow::Result<()> {
    let config = SimConfig {
        seed: 42,
        n_tpls: 4,
        mutation_rate: 0.05,
        inline_rate: 0.05,
        duplication_rate: 0.1,
        junk_functions: 5,
        vendoring_tpls: 1,
        linked_tpls: Some(3),
        ..Default::default()
    };
    let corpus = generate_corpus(&config)?;
    let (db, _) = ingest_source_corpus(corpus.records.iter().cloned());
    let (tpls, files) = corpus.link_plan(&config);
    let (binary, truth) = compile_binary(&db, &files, &config, &corpus.vendored_from)?;
    println!("linked {tpls:?}: {} binary functions", binary.functions.len());

    let dir = tempfile::tempdir()?;
    let p = |name: &str| dir.path().join(name);
    db.persist(&p("db.jsonl"))?;
    embed_database(&db, 256)?.write(&p("vectors.jsonl"))?;
    binary.write(&p("binary.jsonl"))?;
    corpus.dependency.write(&p("deps.jsonl"))?;

    let paths = ScanPaths {
        binary: p("binary.jsonl"),
        db: p("db.jsonl"),
        corpus: p("vectors.jsonl"),
        binary_vectors: None,
        deps: Some(p("deps.jsonl")),
        out_dir: p("report"),
    };
    let out = run_scan(&paths, &ScanOptions::default())?;

    let m = evaluate_matching(&out.matches, &truth, &db)?;
    println!(
        "matching: exact P {:.3} R {:.3}, fuzzy P {:.3} R {:.3}",
        m.precision_exact, m.recall_exact, m.precision_fuzzy, m.recall_fuzzy
    );
    println!(
        "retrieval bound: recall@1 {:.3}, recall@{} {:.3}, closure {}",
        m.retrieval.recall_at_1, m.retrieval.k, m.retrieval.recall_at_k, m.retrieval.closure_holds
    );
    // junk functions still receive their top-1 candidate, which may credit
    // a library that was never linked
    let s = evaluate_sca(&out.components, &truth.component_list);
    println!("components {:?} vs truth {:?}", out.components.tpl_ids(), truth.component_list);
    println!("sca: tp {} fp {} fn {} P {:.3} R {:.3}", s.tp, s.fp, s.fn_, s.precision, s.recall);
    Ok(())
}
