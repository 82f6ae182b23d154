//! Synthetic TPL corpora and a toy "compiler" that links chosen source
//! files into a labeled binary.
//!
//! The compiler keeps the properties the matcher relies on: every source
//! file becomes one contiguous block of addresses, blocks follow link
//! order, and a source function may turn into several binary functions
//! (or none, when inlined). Token mutation stands in for the drift between
//! source text and decompiled pseudo-code.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binary::{BinaryArtifact, BinaryFunction};
use crate::corpus::{qualified_file_id, ScaDatabase, SourceRecord};
use crate::detect::TplDependency;
use crate::error::{Error, Result};
use crate::io;

pub const TRUTH_SCHEMA_VERSION: u32 = 1;
const BASE_ADDRESS: u64 = 0x1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub n_tpls: usize,
    pub files_per_tpl: usize,
    pub funcs_per_file: usize,
    /// Probability that a source function compiles to several binary copies.
    pub duplication_rate: f64,
    pub duplication_copies: usize,
    /// Per-token probability of a replace/insert/delete edit at compile time.
    pub mutation_rate: f64,
    /// Number of files (version directories of the same TPL) holding each
    /// function body verbatim.
    pub clone_fanout: usize,
    /// Fraction of functions that also exist as a slightly edited variant
    /// in a separate legacy copy of their file.
    pub variant_rate: f64,
    pub variant_edits: usize,
    /// Probability that a source function leaves no binary function.
    pub inline_rate: f64,
    /// Unlabeled binary functions appended after the last file.
    pub junk_functions: usize,
    /// The last `vendoring_tpls` TPLs each carry a copy of the first file of
    /// the first TPL, recorded in the dependency relation.
    pub vendoring_tpls: usize,
    /// How many TPLs to link into the binary; all when unset.
    pub linked_tpls: Option<usize>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            n_tpls: 3,
            files_per_tpl: 4,
            funcs_per_file: 6,
            duplication_rate: 0.0,
            duplication_copies: 2,
            mutation_rate: 0.0,
            clone_fanout: 1,
            variant_rate: 0.0,
            variant_edits: 1,
            inline_rate: 0.0,
            junk_functions: 0,
            vendoring_tpls: 0,
            linked_tpls: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, rate) in [
            ("duplication_rate", self.duplication_rate),
            ("mutation_rate", self.mutation_rate),
            ("variant_rate", self.variant_rate),
            ("inline_rate", self.inline_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1], got {rate}")));
            }
        }
        for (name, count) in [
            ("n_tpls", self.n_tpls),
            ("files_per_tpl", self.files_per_tpl),
            ("funcs_per_file", self.funcs_per_file),
            ("duplication_copies", self.duplication_copies),
            ("clone_fanout", self.clone_fanout),
            ("variant_edits", self.variant_edits),
        ] {
            if count == 0 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        if self.vendoring_tpls >= self.n_tpls {
            return Err(Error::invalid("vendoring_tpls must be smaller than n_tpls"));
        }
        if self.linked_tpls.is_some_and(|n| n == 0 || n > self.n_tpls) {
            return Err(Error::invalid("linked_tpls must lie in 1..=n_tpls"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let config: SimConfig = io::read_json(path)?;
        config.validate()?;
        Ok(config)
    }
}

pub fn tpl_name(index: usize) -> String {
    format!("lib{index:02}")
}

/// Output of [`generate_corpus`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimCorpus {
    pub records: Vec<SourceRecord>,
    pub dependency: TplDependency,
    /// Files making up each TPL's current build, in link order.
    pub build_files: BTreeMap<String, Vec<String>>,
    /// Vendored file -> TPL it was copied from.
    pub vendored_from: BTreeMap<String, String>,
}

impl SimCorpus {
    /// Picks `linked_tpls` TPLs (seeded) and returns them with their build
    /// files in link order.
    pub fn link_plan(&self, config: &SimConfig) -> (Vec<String>, Vec<String>) {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x11_4b);
        let mut tpls: Vec<String> = self.build_files.keys().cloned().collect();
        tpls.shuffle(&mut rng);
        tpls.truncate(config.linked_tpls.unwrap_or(tpls.len()));
        tpls.sort();
        let files = tpls.iter().flat_map(|t| self.build_files[t].iter().cloned()).collect();
        (tpls, files)
    }
}

const SYLLABLES: [&str; 16] = [
    "ka", "zu", "mi", "tor", "lex", "bra", "quo", "ven", "dis", "rum", "pel", "gon", "sif", "wax", "yel", "nib",
];
const TYPES: [&str; 5] = ["int", "long", "char", "size_t", "unsigned"];
const BINOPS: [&str; 6] = ["+", "-", "*", "^", "&", "|"];
const CMPOPS: [&str; 4] = ["<", ">", "==", "!="];
const NOISE: [&str; 10] = ["uVar1", "iVar2", "local_10", "(", ")", ";", "0x10", "+", "*", "param_1"];

fn ident(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(2..=3);
    (0..n).map(|_| *SYLLABLES.choose(rng).unwrap()).collect()
}

fn push_all(out: &mut Vec<String>, toks: &[&str]) {
    out.extend(toks.iter().map(|t| t.to_string()));
}

/// A small C function body calling each of `callees` once.
fn function_body(rng: &mut ChaCha8Rng, name: &str, callees: &[String]) -> Vec<String> {
    let mut t = Vec::new();
    let ret = *TYPES.choose(rng).unwrap();
    let params: Vec<String> = (0..rng.gen_range(1..=3)).map(|_| ident(rng)).collect();
    push_all(&mut t, &[ret, name, "("]);
    for (i, p) in params.iter().enumerate() {
        if i > 0 {
            t.push(",".into());
        }
        push_all(&mut t, &[TYPES.choose(rng).unwrap(), p]);
    }
    push_all(&mut t, &[")", "{"]);
    let mut locals: Vec<String> = params.clone();
    let mut pending: Vec<&String> = callees.iter().collect();
    let statements = rng.gen_range(4..=8).max(callees.len() + 1);
    for _ in 0..statements {
        let var = ident(rng);
        let a = locals.choose(rng).unwrap().clone();
        let k = rng.gen_range(0..4096u32).to_string();
        if let Some(callee) = pending.pop() {
            push_all(&mut t, &[TYPES.choose(rng).unwrap(), &var, "=", callee, "(", &a, ",", &k, ")", ";"]);
        } else {
            match rng.gen_range(0..3) {
                0 => push_all(&mut t, &[TYPES.choose(rng).unwrap(), &var, "=", &a, BINOPS.choose(rng).unwrap(), &k, ";"]),
                1 => push_all(&mut t, &[
                    "if", "(", &a, CMPOPS.choose(rng).unwrap(), &k, ")", "{", &a, "=", &a, BINOPS.choose(rng).unwrap(), &k, ";", "}",
                ]),
                _ => push_all(&mut t, &[
                    "for", "(", "int", &var, "=", "0", ";", &var, "<", &k, ";", &var, "++", ")", "{", &a, "+=", &var, ";", "}",
                ]),
            }
        }
        locals.push(var);
    }
    push_all(&mut t, &["return", locals.last().unwrap(), ";", "}"]);
    t
}

/// Applies single-token replace/insert/delete edits, each token hit with
/// probability `rate`. Never returns an empty stream.
fn mutate(rng: &mut ChaCha8Rng, tokens: &[String], rate: f64) -> Vec<String> {
    let mut out = Vec::with_capacity(tokens.len() + 4);
    for tok in tokens {
        if rate > 0.0 && rng.gen_bool(rate) {
            match rng.gen_range(0..3) {
                0 => out.push(NOISE.choose(rng).unwrap().to_string()),
                1 => {
                    out.push(tok.clone());
                    out.push(NOISE.choose(rng).unwrap().to_string());
                }
                _ => {}
            }
        } else {
            out.push(tok.clone());
        }
    }
    if out.is_empty() {
        out.push(tokens.first().cloned().unwrap_or_else(|| "nop".into()));
    }
    out
}

/// Exactly `edits` token replacements at distinct positions.
fn edit_variant(rng: &mut ChaCha8Rng, tokens: &[String], edits: usize) -> Vec<String> {
    let mut out = tokens.to_vec();
    let mut positions: Vec<usize> = (0..out.len()).collect();
    positions.shuffle(rng);
    for &p in positions.iter().take(edits) {
        out[p] = format!("{}{}", out[p], rng.gen_range(1..10u8));
    }
    out
}

struct SimFunction {
    name: String,
    tokens: Vec<String>,
    callees: Vec<String>,
}

/// Deterministic corpus generation. Functions within a file form a binary
/// call tree (function i calls 2i+1 and 2i+2).
pub fn generate_corpus(config: &SimConfig) -> Result<SimCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut records = Vec::new();
    let mut build_files: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut originals: Vec<Vec<SimFunction>> = Vec::new();

    let emit = |records: &mut Vec<SourceRecord>, tpl: &str, path: &str, funcs: &[SimFunction]| {
        for f in funcs {
            records.push(SourceRecord {
                tpl: tpl.to_string(),
                file: path.to_string(),
                name: f.name.clone(),
                tokens: f.tokens.clone(),
                callees: f.callees.clone(),
            });
        }
    };

    for t in 0..config.n_tpls {
        let tpl = tpl_name(t);
        for fi in 0..config.files_per_tpl {
            let names: Vec<String> = (0..config.funcs_per_file)
                .map(|i| format!("{tpl}_f{fi}_{}{i}", ident(&mut rng)))
                .collect();
            let funcs: Vec<SimFunction> = (0..config.funcs_per_file)
                .map(|i| {
                    let callees: Vec<String> = [2 * i + 1, 2 * i + 2]
                        .into_iter()
                        .filter(|&c| c < config.funcs_per_file)
                        .map(|c| names[c].clone())
                        .collect();
                    SimFunction {
                        tokens: function_body(&mut rng, &names[i], &callees),
                        name: names[i].clone(),
                        callees,
                    }
                })
                .collect();

            for v in 1..=config.clone_fanout {
                let path = format!("v{v}/src/f{fi}.c");
                emit(&mut records, &tpl, &path, &funcs);
                if v == 1 {
                    build_files.entry(tpl.clone()).or_default().push(qualified_file_id(&tpl, &path));
                }
            }

            if config.variant_rate > 0.0 {
                let mut variants = Vec::new();
                for f in &funcs {
                    if rng.gen_bool(config.variant_rate) {
                        variants.push(SimFunction {
                            name: f.name.clone(),
                            tokens: edit_variant(&mut rng, &f.tokens, config.variant_edits),
                            callees: f.callees.clone(),
                        });
                    }
                }
                if !variants.is_empty() {
                    emit(&mut records, &tpl, &format!("legacy/src/f{fi}.c"), &variants);
                }
            }
            originals.push(funcs);
        }
    }

    let mut dependency = TplDependency::new();
    let mut vendored_from = BTreeMap::new();
    if config.vendoring_tpls > 0 {
        let origin = tpl_name(0);
        for t in config.n_tpls - config.vendoring_tpls..config.n_tpls {
            let tpl = tpl_name(t);
            let path = format!("third_party/{origin}/src/f0.c");
            emit(&mut records, &tpl, &path, &originals[0]);
            let file_id = qualified_file_id(&tpl, &path);
            build_files.get_mut(&tpl).expect("tpl generated above").push(file_id.clone());
            vendored_from.insert(file_id, origin.clone());
            dependency.add(tpl, origin.clone())?;
        }
    }

    Ok(SimCorpus {
        records,
        dependency,
        build_files,
        vendored_from,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRange {
    pub file_id: String,
    pub start: u64,
    pub end: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GroundTruth {
    pub binary: String,
    pub mapping: BTreeMap<u64, String>,
    pub file_layout: Vec<FileRange>,
    pub component_list: BTreeSet<String>,
}

#[derive(Serialize, Deserialize)]
struct TruthDoc {
    schema_version: u32,
    binary: String,
    mapping: BTreeMap<String, String>,
    file_layout: Vec<RangeDoc>,
    component_list: BTreeSet<String>,
}

#[derive(Serialize, Deserialize)]
struct RangeDoc {
    file_id: String,
    start: String,
    end: String,
}

impl GroundTruth {
    pub fn write(&self, path: &Path) -> Result<()> {
        let doc = TruthDoc {
            schema_version: TRUTH_SCHEMA_VERSION,
            binary: self.binary.clone(),
            mapping: self.mapping.iter().map(|(k, v)| (io::format_rva(*k), v.clone())).collect(),
            file_layout: self
                .file_layout
                .iter()
                .map(|r| RangeDoc {
                    file_id: r.file_id.clone(),
                    start: io::format_rva(r.start),
                    end: io::format_rva(r.end),
                })
                .collect(),
            component_list: self.component_list.clone(),
        };
        io::write_json(path, &doc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let doc: TruthDoc = io::read_json(path)?;
        let shown = path.display();
        if doc.schema_version != TRUTH_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                path: shown.to_string(),
                found: doc.schema_version,
                expected: TRUTH_SCHEMA_VERSION,
            });
        }
        let rva = |s: &str| io::parse_rva(s).ok_or_else(|| Error::format(&shown, 1, format!("bad address `{s}`")));
        let mapping = doc
            .mapping
            .iter()
            .map(|(k, v)| Ok((rva(k)?, v.clone())))
            .collect::<Result<_>>()?;
        let file_layout = doc
            .file_layout
            .iter()
            .map(|r| {
                Ok(FileRange {
                    file_id: r.file_id.clone(),
                    start: rva(&r.start)?,
                    end: rva(&r.end)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(GroundTruth {
            binary: doc.binary,
            mapping,
            file_layout,
            component_list: doc.component_list,
        })
    }
}

/// Links `linked_files` in order into a binary and records the truth.
pub fn compile_binary(
    db: &ScaDatabase,
    linked_files: &[String],
    config: &SimConfig,
    vendored_from: &BTreeMap<String, String>,
) -> Result<(BinaryArtifact, GroundTruth)> {
    config.validate()?;
    if linked_files.is_empty() {
        return Err(Error::invalid("no files to link"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xb1_4a_52_79);
    let mut truth = GroundTruth {
        binary: format!("sim-{}", config.seed),
        ..Default::default()
    };
    let mut functions = Vec::new();
    let mut next = BASE_ADDRESS;

    for file_id in linked_files {
        let file = db.files.get(file_id).ok_or_else(|| Error::UnknownFile(file_id.clone()))?;
        truth
            .component_list
            .insert(vendored_from.get(file_id).unwrap_or(&file.tpl_id).clone());

        // object file order need not follow source order
        let mut order = file.func_ids.clone();
        order.shuffle(&mut rng);
        let mut emitted: BTreeMap<&str, Vec<u64>> = BTreeMap::new();
        for func_id in &order {
            if config.inline_rate > 0.0 && rng.gen_bool(config.inline_rate) {
                continue;
            }
            let copies = if config.duplication_rate > 0.0 && rng.gen_bool(config.duplication_rate) {
                config.duplication_copies
            } else {
                1
            };
            for _ in 0..copies {
                emitted.entry(func_id).or_default().push(next);
                let tokens = mutate(&mut rng, &db.functions[func_id].tokens, config.mutation_rate);
                functions.push(BinaryFunction {
                    bin_rva: next,
                    tokens,
                    callees: BTreeSet::new(),
                });
                truth.mapping.insert(next, func_id.clone());
                next += rng.gen_range(1..=16);
            }
        }
        if emitted.is_empty() {
            continue;
        }
        let addrs = emitted.values().flatten();
        truth.file_layout.push(FileRange {
            file_id: file_id.clone(),
            start: *addrs.clone().min().unwrap(),
            end: *addrs.max().unwrap(),
        });

        let by_rva: BTreeMap<u64, &str> = emitted
            .iter()
            .flat_map(|(f, rvas)| rvas.iter().map(move |r| (*r, *f)))
            .collect();
        for bf in functions.iter_mut().filter(|bf| by_rva.contains_key(&bf.bin_rva)) {
            let src = by_rva[&bf.bin_rva];
            bf.callees = db
                .callees_of(src)
                .iter()
                .filter_map(|c| emitted.get(c.as_str()).map(|rvas| rvas[0]))
                .collect();
        }
    }

    for _ in 0..config.junk_functions {
        let len = rng.gen_range(8..24);
        let tokens = (0..len).map(|_| NOISE.choose(&mut rng).unwrap().to_string()).collect();
        functions.push(BinaryFunction {
            bin_rva: next,
            tokens,
            callees: BTreeSet::new(),
        });
        next += rng.gen_range(1..=16);
    }

    let artifact = BinaryArtifact::new(truth.binary.clone(), functions)?;
    Ok((artifact, truth))
}

/// Labeled (binary tokens, source tokens) pairs drawn from compiling every
/// build file of every TPL.
pub fn generate_training_pairs(
    db: &ScaDatabase,
    corpus: &SimCorpus,
    config: &SimConfig,
    count: usize,
) -> Result<Vec<(Vec<String>, Vec<String>)>> {
    let files: Vec<String> = corpus.build_files.values().flatten().cloned().collect();
    let (binary, truth) = compile_binary(db, &files, config, &corpus.vendored_from)?;
    let mut pairs: Vec<(Vec<String>, Vec<String>)> = truth
        .mapping
        .iter()
        .map(|(rva, func)| {
            (
                binary.functions[rva].tokens.clone(),
                db.functions[func].tokens.clone(),
            )
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7a_11);
    pairs.shuffle(&mut rng);
    if pairs.len() < count {
        return Err(Error::invalid(format!(
            "corpus yields only {} pairs, {count} requested",
            pairs.len()
        )));
    }
    pairs.truncate(count);
    Ok(pairs)
}

#[derive(Serialize, Deserialize)]
pub struct PairRecord {
    pub bin: Vec<String>,
    pub src: Vec<String>,
}

pub fn write_pairs(path: &Path, pairs: &[(Vec<String>, Vec<String>)]) -> Result<()> {
    let records: Vec<PairRecord> = pairs
        .iter()
        .map(|(b, s)| PairRecord {
            bin: b.clone(),
            src: s.clone(),
        })
        .collect();
    io::write_jsonl(path, &records)
}

pub fn read_pairs(path: &Path) -> Result<Vec<(Vec<String>, Vec<String>)>> {
    Ok(io::read_jsonl::<PairRecord>(path)?
        .into_iter()
        .map(|p| (p.bin, p.src))
        .collect())
}
