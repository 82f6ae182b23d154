//! Ingests a few source functions from two libraries (one shared by
//! both), persists the database and reloads it.

use binsca::corpus::{ingest_source_corpus, ScaDatabase, SourceRecord};
use binsca::embed::tokenize;

fn record(tpl: &str, file: &str, name: &str, body: &str, callees: &[&str]) -> SourceRecord {
    SourceRecord {
        tpl: tpl.into(),
        file: file.into(),
        name: name.into(),
        tokens: tokenize(body),
        callees: callees.iter().map(|c| c.to_string()).collect(),
    }
}

fn main() -> anyhow::Result<()> {
    let adler = "unsigned long adler32(unsigned long a, const char *buf, int len) { return a + len; }";
    let records = vec![
        record("zlib", "adler32.c", "adler32", adler, &[]),
        record("zlib", "inflate.c", "inflate", "int inflate(void *s) { return adler32(0, s, 1); }", &["adler32"]),
        record("llvm", "third_party/zlib/adler32.c", "adler32", adler, &[]),
        record("llvm", "lib/Support/CRC.cpp", "crc32", "unsigned crc32(unsigned c) { return c ^ 0xff; }", &[]),
        // empty body: rejected with a diagnostic
        record("llvm", "lib/empty.c", "nothing", "", &[]),
    ];
    let (db, diagnostics) = ingest_source_corpus(records);
    for d in &diagnostics {
        println!("rejected record {}: {}", d.index, d.message);
    }

    println!("{} unique functions in {} files", db.functions.len(), db.files.len());
    for (id, f) in &db.functions {
        println!("  {} {:<8} files={:?} tpls={:?}", &id[..8], f.name, db.files_of(id), db.tpls_of(id));
    }
    for (tpl, rec) in &db.tpls {
        println!("tpl {tpl}: {} functions", rec.total_func_count);
    }

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("db.jsonl");
    db.persist(&path)?;
    let reloaded = ScaDatabase::load(&path)?;
    println!("round trip identical: {}", reloaded == db);
    Ok(())
}
