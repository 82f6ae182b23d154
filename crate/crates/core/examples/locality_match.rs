//! Locality matching on a hand-built scenario: the same function body
//! exists in two files, and only the neighbours in the binary reveal
//! which file was linked.

use std::collections::BTreeMap;

use binsca::corpus::{ingest_source_corpus, SourceRecord};
use binsca::embed::{embed_tokens, tokenize};
use binsca::locality::{match_func_pairs, MatchParams};
use binsca::retrieval::{retrieve_candidates, VectorCorpus};

fn main() -> anyhow::Result<()> {
    let bodies = [
        ("parse", "int parse(char *s) { return scan(s, 0) + 1; }"),
        ("scan", "int scan(char *s, int i) { while (s[i]) i++; return i; }"),
        ("emit", "void emit(struct out *o, int v) { o->buf[o->n++] = v; }"),
    ];
    let mut records = Vec::new();
    for (name, body) in bodies {
        // the current file and an older copy share parse and scan verbatim
        records.push(SourceRecord {
            tpl: "json".into(),
            file: "src/json.c".into(),
            name: name.into(),
            tokens: tokenize(body),
            callees: if name == "parse" { vec!["scan".into()] } else { vec![] },
        });
        if name != "emit" {
            records.push(SourceRecord {
                tpl: "json".into(),
                file: "old/json.c".into(),
                name: name.into(),
                tokens: tokenize(body),
                callees: vec![],
            });
        }
    }
    let (db, _) = ingest_source_corpus(records);

    let table: Vec<_> = db
        .functions
        .iter()
        .map(|(id, f)| Ok((id.clone(), embed_tokens(&f.tokens, 256)?)))
        .collect::<binsca::Result<_>>()?;
    let corpus = VectorCorpus::build(table)?;

    // the binary keeps the file's functions together
    let queries: Vec<(u64, _)> = bodies
        .iter()
        .enumerate()
        .map(|(i, (_, b))| Ok((0x1000 + 0x40 * i as u64, embed_tokens(&tokenize(b), 256)?)))
        .collect::<binsca::Result<_>>()?;
    let topk = retrieve_candidates(&corpus, &db, &queries, 3)?;
    let bin_cg = BTreeMap::from([(0x1000, [0x1040].into())]);

    let result = match_func_pairs(&topk, &db, &bin_cg, &MatchParams::default());
    for iv in &result.selected {
        println!("interval {} {:#x}..{:#x} hits={}", iv.file_id, iv.start, iv.end, iv.max_hit);
    }
    for (rva, m) in &result.matches {
        let name = &db.functions[&m.func_id].name;
        println!("{rva:#x} -> {name:<6} file={:?} via {:?}", m.file_id, m.provenance);
    }
    Ok(())
}
