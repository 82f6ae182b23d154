//! Component detection with dependency filtering: llvm vendors zlib, so a
//! zlib function found in both is credited to zlib alone.

use binsca::corpus::{function_id, ingest_source_corpus, SourceRecord};
use binsca::detect::{detect_components, TplDependency};
use binsca::locality::{Match, MatchResult, Provenance};

fn body(i: usize) -> Vec<String> {
    vec![format!("zfn{i}"), "(".into(), ")".into()]
}

fn main() -> anyhow::Result<()> {
    let mut records = Vec::new();
    for i in 0..40 {
        records.push(SourceRecord {
            tpl: "zlib".into(),
            file: "deflate.c".into(),
            name: format!("zfn{i}"),
            tokens: body(i),
            callees: vec![],
        });
    }
    // llvm carries a copy of the first ten zlib functions
    for i in 0..10 {
        records.push(SourceRecord {
            tpl: "llvm".into(),
            file: "third_party/zlib/deflate.c".into(),
            name: format!("zfn{i}"),
            tokens: body(i),
            callees: vec![],
        });
    }
    let (db, _) = ingest_source_corpus(records);

    let mut result = MatchResult::default();
    for i in 0..6 {
        result.matches.insert(
            0x4000 + 0x20 * i as u64,
            Match {
                func_id: function_id(&body(i)),
                file_id: None,
                provenance: Provenance::Top1,
                similarity: 0.97,
            },
        );
    }

    let without = detect_components("app", &result, &db, &TplDependency::new(), 0.01)?;
    println!("without dependency info: {:?}", without.tpl_ids());

    let mut dep = TplDependency::new();
    dep.add("llvm", "zlib")?;
    let with = detect_components("app", &result, &db, &dep, 0.01)?;
    for c in &with.components {
        println!(
            "{}: {}/{} = {:.3}",
            c.tpl_id, c.matched_func_count, c.total_func_count, c.ratio
        );
    }
    for theta in [0.05, 0.2] {
        let r = detect_components("app", &result, &db, &dep, theta)?;
        println!("theta {theta}: {:?}", r.tpl_ids());
    }
    Ok(())
}
