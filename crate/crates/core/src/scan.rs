//! End-to-end scan: embed binary functions, retrieve top-k source
//! candidates, match by locality, detect components, write reports.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::binary::BinaryArtifact;
use crate::corpus::ScaDatabase;
use crate::detect::{detect_components, ComponentReport, TplDependency, DEFAULT_THETA};
use crate::embed::{embed_tokens, import_external_embeddings, Embedding, EmbeddingTable};
use crate::error::{Error, Result};
use crate::io;
use crate::locality::{match_func_pairs, MatchParams, Provenance, DEFAULT_MIN_SIMILARITY};
use crate::retrieval::{retrieve_candidates, CandidateSet, VectorCorpus};

pub const MATCH_SCHEMA_VERSION: u32 = 1;
pub const MATCHES_FILE: &str = "matches.json";
pub const COMPONENTS_FILE: &str = "components.json";

/// Feature-hashing embeddings for every function in the database.
pub fn embed_database(db: &ScaDatabase, dim: usize) -> Result<EmbeddingTable> {
    let mut table = EmbeddingTable {
        dim,
        ..Default::default()
    };
    for (id, f) in &db.functions {
        table.vectors.insert(id.clone(), embed_tokens(&f.tokens, dim)?);
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchEntry {
    pub func_id: String,
    pub file_id: Option<String>,
    pub provenance: Provenance,
    pub similarity: f64,
    /// Retrieved top-k ids, best first.
    pub candidates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSummary {
    pub file_id: String,
    pub start: String,
    pub end: String,
    pub max_hit: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub schema_version: u32,
    pub binary: String,
    pub k: usize,
    pub min_similarity: Option<f64>,
    /// Keyed by hex bin_rva.
    pub matches: BTreeMap<String, MatchEntry>,
    pub intervals: Vec<IntervalSummary>,
}

impl MatchReport {
    pub fn decoded(&self) -> Result<BTreeMap<u64, &MatchEntry>> {
        self.matches
            .iter()
            .map(|(k, v)| {
                io::parse_rva(k)
                    .map(|r| (r, v))
                    .ok_or_else(|| Error::invalid(format!("bad address key `{k}`")))
            })
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let report: MatchReport = io::read_json(path)?;
        if report.schema_version != MATCH_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                path: path.display().to_string(),
                found: report.schema_version,
                expected: MATCH_SCHEMA_VERSION,
            });
        }
        Ok(report)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanOptions {
    pub k: usize,
    pub theta: f64,
    pub min_similarity: f64,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions {
            k: 10,
            theta: DEFAULT_THETA,
            min_similarity: DEFAULT_MIN_SIMILARITY,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScanOutput {
    pub candidates: Vec<CandidateSet>,
    pub matches: MatchReport,
    pub components: ComponentReport,
}

/// Embeddings for every binary function: imported vectors keyed by hex
/// address when given, feature hashing at the corpus dimension otherwise.
pub fn embed_binary(
    binary: &BinaryArtifact,
    dim: usize,
    imported: Option<&EmbeddingTable>,
) -> Result<Vec<(u64, Embedding)>> {
    binary
        .functions
        .values()
        .map(|f| {
            let emb = match imported {
                Some(table) => table
                    .vectors
                    .get(&io::format_rva(f.bin_rva))
                    .cloned()
                    .unwrap_or_else(|| Embedding::sentinel(dim)),
                None => embed_tokens(&f.tokens, dim)?,
            };
            Ok((f.bin_rva, emb))
        })
        .collect()
}

/// In-memory scan. Without a dependency relation, clone filtering is
/// skipped and a warning is added to the component report.
pub fn scan_binary(
    binary: &BinaryArtifact,
    db: &ScaDatabase,
    corpus: &VectorCorpus,
    queries: &[(u64, Embedding)],
    dep: Option<&TplDependency>,
    options: &ScanOptions,
) -> Result<ScanOutput> {
    let candidates = retrieve_candidates(corpus, db, queries, options.k)?;
    let params = MatchParams {
        min_similarity: options.min_similarity,
    };
    let result = match_func_pairs(&candidates, db, &binary.call_graph(), &params);

    let by_rva: BTreeMap<u64, &CandidateSet> = candidates.iter().map(|c| (c.bin_rva, c)).collect();
    let matches = result
        .matches
        .iter()
        .map(|(rva, m)| {
            let ranked = by_rva[rva].ranked_ids();
            debug_assert!(ranked.contains(&m.func_id));
            (
                io::format_rva(*rva),
                MatchEntry {
                    func_id: m.func_id.clone(),
                    file_id: m.file_id.clone(),
                    provenance: m.provenance,
                    similarity: m.similarity,
                    candidates: ranked,
                },
            )
        })
        .collect();
    let intervals = result
        .selected
        .iter()
        .map(|iv| IntervalSummary {
            file_id: iv.file_id.clone(),
            start: io::format_rva(iv.start),
            end: io::format_rva(iv.end),
            max_hit: iv.max_hit,
        })
        .collect();
    let match_report = MatchReport {
        schema_version: MATCH_SCHEMA_VERSION,
        binary: binary.name.clone(),
        k: options.k,
        min_similarity: options.min_similarity.is_finite().then_some(options.min_similarity),
        matches,
        intervals,
    };

    let empty = TplDependency::new();
    let mut components = detect_components(&binary.name, &result, db, dep.unwrap_or(&empty), options.theta)?;
    if dep.is_none() {
        components
            .warnings
            .insert(0, "no dependency file; internal clones were not filtered".into());
    }
    Ok(ScanOutput {
        candidates,
        matches: match_report,
        components,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Load,
    Embed,
    Retrieve,
    Write,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Load => "load",
            Phase::Embed => "embed",
            Phase::Retrieve => "match",
            Phase::Write => "write",
        })
    }
}

#[derive(Debug, thiserror::Error)]
#[error("[{phase}] {source}")]
pub struct ScanError {
    pub phase: Phase,
    #[source]
    pub source: Error,
}

trait PhaseExt<T> {
    fn phase(self, phase: Phase) -> std::result::Result<T, ScanError>;
}

impl<T> PhaseExt<T> for Result<T> {
    fn phase(self, phase: Phase) -> std::result::Result<T, ScanError> {
        self.map_err(|source| ScanError { phase, source })
    }
}

#[derive(Debug, Clone)]
pub struct ScanPaths {
    pub binary: PathBuf,
    pub db: PathBuf,
    pub corpus: PathBuf,
    pub binary_vectors: Option<PathBuf>,
    pub deps: Option<PathBuf>,
    pub out_dir: PathBuf,
}

/// File-based scan writing `matches.json` and `components.json` into the
/// output directory. On failure neither report is left behind.
pub fn run_scan(paths: &ScanPaths, options: &ScanOptions) -> std::result::Result<ScanOutput, ScanError> {
    let binary = BinaryArtifact::load(&paths.binary).phase(Phase::Load)?;
    let db = ScaDatabase::load(&paths.db).phase(Phase::Load)?;
    let table = import_external_embeddings(&paths.corpus).phase(Phase::Load)?;
    let corpus = VectorCorpus::from_table(&table).phase(Phase::Load)?;

    let mut dep_warning = None;
    let dep = match &paths.deps {
        Some(p) if p.exists() => Some(TplDependency::load(p).phase(Phase::Load)?),
        Some(p) => {
            dep_warning = Some(format!(
                "dependency file {} not found; internal clones were not filtered",
                p.display()
            ));
            None
        }
        None => None,
    };

    let imported = match &paths.binary_vectors {
        Some(p) => Some(import_external_embeddings(p).phase(Phase::Load)?),
        None => None,
    };
    let queries = embed_binary(&binary, corpus.dim().max(table.dim), imported.as_ref()).phase(Phase::Embed)?;
    let mut output = scan_binary(&binary, &db, &corpus, &queries, dep.as_ref(), options).phase(Phase::Retrieve)?;
    if let Some(w) = dep_warning {
        output.components.warnings[0] = w;
    }

    let write = || -> Result<()> {
        fs::create_dir_all(&paths.out_dir).map_err(|e| Error::io(&paths.out_dir, e))?;
        output.matches.write(&paths.out_dir.join(MATCHES_FILE))?;
        output.components.write(&paths.out_dir.join(COMPONENTS_FILE))
    };
    if let Err(e) = write() {
        for name in [MATCHES_FILE, COMPONENTS_FILE] {
            let _ = fs::remove_file(paths.out_dir.join(name));
        }
        return Err(ScanError {
            phase: Phase::Write,
            source: e,
        });
    }
    Ok(output)
}
