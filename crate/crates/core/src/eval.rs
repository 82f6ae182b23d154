//! Scoring of function matches and component reports against labels.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::binary::BinaryArtifact;
use crate::corpus::{ingest_source_corpus, ScaDatabase};
use crate::detect::ComponentReport;
use crate::error::{Error, Result};
use crate::retrieval::VectorCorpus;
use crate::scan::{embed_binary, embed_database, scan_binary, MatchReport, ScanOptions, ScanOutput};
use crate::simulate::{compile_binary, generate_corpus, GroundTruth, SimConfig, SimCorpus};

const KEYWORDS: &[&str] = &[
    "auto", "break", "case", "char", "const", "continue", "default", "do", "double", "else", "enum", "extern",
    "float", "for", "goto", "if", "inline", "int", "long", "register", "restrict", "return", "short", "signed",
    "sizeof", "static", "struct", "switch", "typedef", "union", "unsigned", "void", "volatile", "while", "bool",
    "true", "false", "null", "size_t",
];

fn is_identifier(token: &str) -> bool {
    token
        .chars()
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && !KEYWORDS.contains(&token)
}

/// Lowercases, abstracts identifiers to positional placeholders in order of
/// first appearance, and concatenates without separators. Keywords,
/// operators and literals are kept.
pub fn normalize_function(tokens: &[String]) -> String {
    let mut slots: BTreeMap<String, usize> = BTreeMap::new();
    let mut out = String::new();
    for token in tokens {
        let lower = token.to_lowercase();
        if is_identifier(&lower) {
            let next = slots.len();
            let slot = *slots.entry(lower).or_insert(next);
            out.push('$');
            out.push_str(&slot.to_string());
        } else {
            out.push_str(&lower);
        }
    }
    out
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Where the final matches sit relative to the raw retrieval lists.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalBound {
    pub k: usize,
    pub recall_at_1: f64,
    pub recall_at_k: f64,
    /// Every match is one of its address's candidates, and the final exact
    /// recall does not exceed recall@k.
    pub closure_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub exact_tp: usize,
    pub fuzzy_tp: usize,
    pub total_matches: usize,
    pub total_labels: usize,
    pub precision_exact: f64,
    pub recall_exact: f64,
    pub precision_fuzzy: f64,
    pub recall_fuzzy: f64,
    pub f1_exact: f64,
    pub f1_fuzzy: f64,
    /// No matches were emitted, so precision is reported as 0.
    pub precision_undefined: bool,
    pub retrieval: RetrievalBound,
}

/// Exact TP: same func_id as the label. Fuzzy TP: same normalized body.
pub fn evaluate_matching(report: &MatchReport, truth: &GroundTruth, db: &ScaDatabase) -> Result<EvalOutcome> {
    if report.binary != truth.binary {
        return Err(Error::BinaryMismatch {
            expected: truth.binary.clone(),
            found: report.binary.clone(),
        });
    }
    let matches = report.decoded()?;
    let norm = |id: &str| db.functions.get(id).map(|f| normalize_function(&f.tokens));

    let (mut exact_tp, mut fuzzy_tp) = (0, 0);
    let (mut hit1, mut hitk) = (0, 0);
    let mut closure_holds = true;
    for (rva, entry) in &matches {
        if !entry.candidates.contains(&entry.func_id) {
            closure_holds = false;
        }
        let Some(label) = truth.mapping.get(rva) else { continue };
        if &entry.func_id == label {
            exact_tp += 1;
            fuzzy_tp += 1;
        } else if let (Some(a), Some(b)) = (norm(&entry.func_id), norm(label)) {
            if a == b {
                fuzzy_tp += 1;
            }
        }
    }
    for (rva, label) in &truth.mapping {
        if let Some(entry) = matches.get(rva) {
            if entry.candidates.first() == Some(label) {
                hit1 += 1;
            }
            if entry.candidates.iter().take(report.k).any(|c| c == label) {
                hitk += 1;
            }
        }
    }

    let total_matches = matches.len();
    let total_labels = truth.mapping.len();
    let precision_exact = ratio(exact_tp, total_matches);
    let recall_exact = ratio(exact_tp, total_labels);
    let precision_fuzzy = ratio(fuzzy_tp, total_matches);
    let recall_fuzzy = ratio(fuzzy_tp, total_labels);
    let recall_at_k = ratio(hitk, total_labels);
    Ok(EvalOutcome {
        exact_tp,
        fuzzy_tp,
        total_matches,
        total_labels,
        precision_exact,
        recall_exact,
        precision_fuzzy,
        recall_fuzzy,
        f1_exact: f1(precision_exact, recall_exact),
        f1_fuzzy: f1(precision_fuzzy, recall_fuzzy),
        precision_undefined: total_matches == 0,
        retrieval: RetrievalBound {
            k: report.k,
            recall_at_1: ratio(hit1, total_labels),
            recall_at_k,
            closure_holds: closure_holds && recall_exact <= recall_at_k,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaOutcome {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_undefined: bool,
}

pub fn evaluate_sca(report: &ComponentReport, labeled: &BTreeSet<String>) -> ScaOutcome {
    let reported = report.tpl_ids();
    let tp = reported.intersection(labeled).count();
    let fp = reported.difference(labeled).count();
    let fn_ = labeled.difference(&reported).count();
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    ScaOutcome {
        tp,
        fp,
        fn_,
        precision,
        recall,
        f1: f1(precision, recall),
        precision_undefined: tp + fp == 0,
    }
}

/// Everything produced by one simulated build and scan.
#[derive(Debug, Clone)]
pub struct SimulationRun {
    pub corpus: SimCorpus,
    pub db: ScaDatabase,
    pub binary: BinaryArtifact,
    pub truth: GroundTruth,
    pub scan: ScanOutput,
    pub matching: EvalOutcome,
    pub sca: ScaOutcome,
}

/// Generates a corpus, links the planned TPLs, scans the binary with
/// feature-hashing embeddings of width `dim`, and scores both reports.
pub fn run_simulation(config: &SimConfig, dim: usize, options: &ScanOptions) -> Result<SimulationRun> {
    let corpus = generate_corpus(config)?;
    let (db, diagnostics) = ingest_source_corpus(corpus.records.iter().cloned());
    if let Some(d) = diagnostics.first() {
        return Err(Error::invalid(format!("simulated record {} rejected: {}", d.index, d.message)));
    }
    let (_, files) = corpus.link_plan(config);
    let (binary, truth) = compile_binary(&db, &files, config, &corpus.vendored_from)?;

    let table = embed_database(&db, dim)?;
    let index = VectorCorpus::from_table(&table)?;
    let queries = embed_binary(&binary, dim, None)?;
    let scan = scan_binary(&binary, &db, &index, &queries, Some(&corpus.dependency), options)?;
    let matching = evaluate_matching(&scan.matches, &truth, &db)?;
    let sca = evaluate_sca(&scan.components, &truth.component_list);
    Ok(SimulationRun {
        corpus,
        db,
        binary,
        truth,
        scan,
        matching,
        sca,
    })
}
