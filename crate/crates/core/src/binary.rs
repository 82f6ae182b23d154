//! Decompiled binary artifacts: functions keyed by relative virtual address.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

pub const BINARY_FORMAT: &str = "binsca-binary";
pub const BINARY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryFunction {
    pub bin_rva: u64,
    pub tokens: Vec<String>,
    #[serde(default)]
    pub callees: BTreeSet<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct BinaryHeader {
    format: String,
    schema_version: u32,
    name: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BinaryArtifact {
    pub name: String,
    pub functions: BTreeMap<u64, BinaryFunction>,
}

impl BinaryArtifact {
    /// Collects functions, rejecting duplicate addresses and dropping
    /// callees that point outside the binary.
    pub fn new(name: impl Into<String>, functions: impl IntoIterator<Item = BinaryFunction>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for f in functions {
            let rva = f.bin_rva;
            if map.insert(rva, f).is_some() {
                return Err(Error::DuplicateId(io::format_rva(rva)));
            }
        }
        let present: BTreeSet<u64> = map.keys().copied().collect();
        for f in map.values_mut() {
            f.callees.retain(|c| present.contains(c));
        }
        Ok(BinaryArtifact {
            name: name.into(),
            functions: map,
        })
    }

    pub fn call_graph(&self) -> BTreeMap<u64, BTreeSet<u64>> {
        self.functions
            .values()
            .filter(|f| !f.callees.is_empty())
            .map(|f| (f.bin_rva, f.callees.clone()))
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let header = serde_json::to_value(BinaryHeader {
            format: BINARY_FORMAT.into(),
            schema_version: BINARY_SCHEMA_VERSION,
            name: self.name.clone(),
        })
        .expect("header serializes");
        let mut lines = vec![header];
        lines.extend(
            self.functions
                .values()
                .map(|f| serde_json::to_value(f).expect("function serializes")),
        );
        io::write_jsonl(path, &lines)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let shown = path.display();
        let mut records = io::read_records(path)?.into_iter();
        let Some((n, first)) = records.next() else {
            return Err(Error::format(&shown, 1, "empty file, missing header"));
        };
        let header: BinaryHeader = io::parse_record(path, n, &first)?;
        if header.format != BINARY_FORMAT {
            return Err(Error::format(&shown, n, format!("unknown format `{}`", header.format)));
        }
        if header.schema_version != BINARY_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                path: shown.to_string(),
                found: header.schema_version,
                expected: BINARY_SCHEMA_VERSION,
            });
        }
        let functions = records
            .map(|(n, l)| io::parse_record::<BinaryFunction>(path, n, &l))
            .collect::<Result<Vec<_>>>()?;
        BinaryArtifact::new(header.name, functions)
    }
}
