//! Component (TPL) detection from matched source functions.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::ScaDatabase;
use crate::error::{Error, Result};
use crate::io;
use crate::locality::MatchResult;

pub const DEFAULT_THETA: f64 = 0.01;
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Which TPLs each TPL vendors (reuses).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TplDependency {
    reuse: BTreeMap<String, BTreeSet<String>>,
}

impl TplDependency {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, tpl: impl Into<String>, reused: impl Into<String>) -> Result<()> {
        let (tpl, reused) = (tpl.into(), reused.into());
        if tpl == reused {
            return Err(Error::invalid(format!("tpl `{tpl}` cannot reuse itself")));
        }
        self.reuse.entry(tpl).or_default().insert(reused);
        Ok(())
    }

    pub fn reused_by(&self, tpl: &str) -> Option<&BTreeSet<String>> {
        self.reuse.get(tpl)
    }

    pub fn is_empty(&self) -> bool {
        self.reuse.is_empty()
    }

    /// One JSON object per line, `{"tpl": ["reused", ...]}`.
    pub fn load(path: &Path) -> Result<Self> {
        let mut dep = TplDependency::new();
        for (n, line) in io::read_records(path)? {
            let entry: BTreeMap<String, Vec<String>> = io::parse_record(path, n, &line)?;
            for (tpl, reused) in entry {
                for r in reused {
                    dep.add(tpl.clone(), r)
                        .map_err(|e| Error::format(path.display(), n, e.to_string()))?;
                }
            }
        }
        Ok(dep)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let lines: Vec<BTreeMap<&String, &BTreeSet<String>>> =
            self.reuse.iter().map(|(k, v)| BTreeMap::from([(k, v)])).collect();
        io::write_jsonl(path, &lines)
    }
}

/// Drops every TPL whose reused TPLs also contain the function; what is
/// left are the origins of an internal clone.
pub fn filter_by_dependency(src_tpls: &BTreeSet<String>, dep: &TplDependency) -> BTreeSet<String> {
    src_tpls
        .iter()
        .filter(|tpl| {
            dep.reused_by(tpl)
                .is_none_or(|reused| reused.is_disjoint(src_tpls))
        })
        .cloned()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub tpl_id: String,
    pub matched_func_count: usize,
    pub total_func_count: usize,
    pub ratio: f64,
    /// Matched binary addresses (hex) crediting this TPL.
    pub evidence: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentReport {
    pub schema_version: u32,
    pub binary: String,
    pub theta: f64,
    pub components: Vec<Component>,
    /// Matches whose func_id is missing from the database.
    pub skipped_unknown: usize,
    pub warnings: Vec<String>,
    /// Reserved for vulnerability advisories; always empty here.
    #[serde(default)]
    pub advisories: Option<serde_json::Value>,
}

impl ComponentReport {
    pub fn tpl_ids(&self) -> BTreeSet<String> {
        self.components.iter().map(|c| c.tpl_id.clone()).collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let report: ComponentReport = io::read_json(path)?;
        if report.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                path: path.display().to_string(),
                found: report.schema_version,
                expected: REPORT_SCHEMA_VERSION,
            });
        }
        Ok(report)
    }
}

/// Credits each surviving TPL with the distinct binary addresses matched
/// to its functions and reports those whose matched ratio exceeds `theta`.
pub fn detect_components(
    binary: &str,
    matches: &MatchResult,
    db: &ScaDatabase,
    dep: &TplDependency,
    theta: f64,
) -> Result<ComponentReport> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::invalid(format!("theta must lie in (0, 1), got {theta}")));
    }
    let mut credited: BTreeMap<String, BTreeSet<u64>> = BTreeMap::new();
    let mut skipped_unknown = 0;
    let mut warnings = Vec::new();

    for (&rva, m) in &matches.matches {
        if !db.functions.contains_key(&m.func_id) {
            skipped_unknown += 1;
            continue;
        }
        let src_tpls = db.tpls_of(&m.func_id);
        let kept = filter_by_dependency(src_tpls, dep);
        if kept.is_empty() && !src_tpls.is_empty() {
            warnings.push(format!(
                "dependency cycle among {:?} removed every tpl for {}",
                src_tpls,
                io::format_rva(rva)
            ));
        }
        for tpl in kept {
            credited.entry(tpl).or_default().insert(rva);
        }
    }
    if skipped_unknown > 0 {
        warnings.push(format!("{skipped_unknown} matches refer to functions missing from the database"));
    }

    let mut components: Vec<Component> = credited
        .into_iter()
        .filter_map(|(tpl_id, rvas)| {
            let total = db.tpls.get(&tpl_id)?.total_func_count;
            let ratio = rvas.len() as f64 / total as f64;
            (ratio > theta).then(|| Component {
                tpl_id,
                matched_func_count: rvas.len(),
                total_func_count: total,
                ratio,
                evidence: rvas.into_iter().map(io::format_rva).collect(),
            })
        })
        .collect();
    components.sort_by(|a, b| b.ratio.total_cmp(&a.ratio).then_with(|| a.tpl_id.cmp(&b.tpl_id)));

    Ok(ComponentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        binary: binary.to_string(),
        theta,
        components,
        skipped_unknown,
        warnings,
        advisories: None,
    })
}
