//! The SCA database: deduplicated source functions and the two inverted
//! indexes (function -> files, function -> TPLs) built from them.
//!
//! Function identity is the SHA-256 of the raw token stream, so the same
//! body appearing in several files or libraries is stored once and linked
//! to every place it occurs.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io;

pub const DB_FORMAT: &str = "binsca-db";
pub const DB_SCHEMA_VERSION: u32 = 1;

static NO_IDS: BTreeSet<String> = BTreeSet::new();

/// One extracted source function, as it appears in the corpus input stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub tpl: String,
    pub file: String,
    pub name: String,
    pub tokens: Vec<String>,
    #[serde(default)]
    pub callees: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceFunction {
    pub func_id: String,
    pub name: String,
    pub tokens: Vec<String>,
    pub callee_names: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceFile {
    pub file_id: String,
    pub tpl_id: String,
    pub func_ids: Vec<String>,
}

impl SourceFile {
    pub fn func_count(&self) -> usize {
        self.func_ids.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TplRecord {
    pub tpl_id: String,
    pub file_ids: BTreeSet<String>,
    pub total_func_count: usize,
}

/// Content hash of a token stream. Tokens are length-prefixed so that
/// `["ab","c"]` and `["a","bc"]` hash differently.
pub fn function_id(tokens: &[String]) -> String {
    let mut hasher = Sha256::new();
    for token in tokens {
        hasher.update((token.len() as u64).to_le_bytes());
        hasher.update(token.as_bytes());
    }
    hex::encode(&hasher.finalize()[..16])
}

/// `tpl/path`, the database key of a source file.
pub fn qualified_file_id(tpl: &str, file: &str) -> String {
    format!("{tpl}/{file}")
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScaDatabase {
    pub functions: BTreeMap<String, SourceFunction>,
    pub func_to_files: BTreeMap<String, BTreeSet<String>>,
    pub func_to_tpls: BTreeMap<String, BTreeSet<String>>,
    pub files: BTreeMap<String, SourceFile>,
    pub tpls: BTreeMap<String, TplRecord>,
    /// Intra-file source call graph, resolved by callee name.
    pub calls: BTreeMap<String, BTreeSet<String>>,
}

/// A record the builder refused; ingestion carries on past it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordDiagnostic {
    /// 0-based position in the input stream.
    pub index: usize,
    pub message: String,
}

#[derive(Debug, Default)]
pub struct CorpusBuilder {
    db: ScaDatabase,
    // file_id -> callee name -> func_ids defined under that name
    names: BTreeMap<String, BTreeMap<String, BTreeSet<String>>>,
    seen: BTreeSet<(String, String, String)>,
    diagnostics: Vec<RecordDiagnostic>,
    next_index: usize,
}

impl CorpusBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one record. Returns `false` when the record was rejected or was
    /// an exact duplicate of one already seen.
    pub fn add(&mut self, record: SourceRecord) -> bool {
        let index = self.next_index;
        self.next_index += 1;

        if record.tokens.is_empty() {
            self.diagnostics.push(RecordDiagnostic {
                index,
                message: format!(
                    "function `{}` in {}/{} has no tokens",
                    record.name, record.tpl, record.file
                ),
            });
            return false;
        }

        let func_id = function_id(&record.tokens);
        let file_id = qualified_file_id(&record.tpl, &record.file);
        if !self
            .seen
            .insert((file_id.clone(), record.name.clone(), func_id.clone()))
        {
            return false;
        }

        let db = &mut self.db;
        let function = db
            .functions
            .entry(func_id.clone())
            .or_insert_with(|| SourceFunction {
                func_id: func_id.clone(),
                name: record.name.clone(),
                tokens: record.tokens.clone(),
                callee_names: BTreeSet::new(),
            });
        function.callee_names.extend(record.callees);

        let file = db.files.entry(file_id.clone()).or_insert_with(|| SourceFile {
            file_id: file_id.clone(),
            tpl_id: record.tpl.clone(),
            func_ids: Vec::new(),
        });
        if !file.func_ids.contains(&func_id) {
            file.func_ids.push(func_id.clone());
        }

        db.tpls
            .entry(record.tpl.clone())
            .or_insert_with(|| TplRecord {
                tpl_id: record.tpl.clone(),
                file_ids: BTreeSet::new(),
                total_func_count: 0,
            })
            .file_ids
            .insert(file_id.clone());

        db.func_to_files
            .entry(func_id.clone())
            .or_default()
            .insert(file_id.clone());
        db.func_to_tpls
            .entry(func_id.clone())
            .or_default()
            .insert(record.tpl);

        self.names
            .entry(file_id)
            .or_default()
            .entry(record.name)
            .or_default()
            .insert(func_id);
        true
    }

    pub fn finish(mut self) -> (ScaDatabase, Vec<RecordDiagnostic>) {
        let db = &mut self.db;
        for (file_id, names) in &self.names {
            let file = &db.files[file_id];
            for func_id in &file.func_ids {
                let callees = &db.functions[func_id].callee_names;
                let resolved: BTreeSet<String> = callees
                    .iter()
                    .filter_map(|c| names.get(c))
                    .flatten()
                    .cloned()
                    .collect();
                if !resolved.is_empty() {
                    db.calls.entry(func_id.clone()).or_default().extend(resolved);
                }
            }
        }
        db.recount_tpls();
        (self.db, self.diagnostics)
    }
}

/// Builds a database from a record stream. Records with empty token lists
/// are reported in the returned diagnostics and skipped.
pub fn ingest_source_corpus<I>(records: I) -> (ScaDatabase, Vec<RecordDiagnostic>)
where
    I: IntoIterator<Item = SourceRecord>,
{
    let mut builder = CorpusBuilder::new();
    for record in records {
        builder.add(record);
    }
    builder.finish()
}

pub fn read_source_records(path: &Path) -> Result<Vec<SourceRecord>> {
    io::read_jsonl(path)
}

pub fn write_source_records(path: &Path, records: &[SourceRecord]) -> Result<()> {
    io::write_jsonl(path, records)
}

impl ScaDatabase {
    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    /// Files containing `func_id`; empty when the id is unknown.
    pub fn files_of(&self, func_id: &str) -> &BTreeSet<String> {
        self.func_to_files.get(func_id).unwrap_or(&NO_IDS)
    }

    /// TPLs containing `func_id`; empty when the id is unknown.
    pub fn tpls_of(&self, func_id: &str) -> &BTreeSet<String> {
        self.func_to_tpls.get(func_id).unwrap_or(&NO_IDS)
    }

    pub fn callees_of(&self, func_id: &str) -> &BTreeSet<String> {
        self.calls.get(func_id).unwrap_or(&NO_IDS)
    }

    fn recount_tpls(&mut self) {
        for tpl in self.tpls.values_mut() {
            let unique: BTreeSet<&String> = tpl
                .file_ids
                .iter()
                .flat_map(|f| self.files[f].func_ids.iter())
                .collect();
            tpl.total_func_count = unique.len();
        }
    }

    fn rebuild_indexes(&mut self) {
        self.func_to_files.clear();
        self.func_to_tpls.clear();
        for file in self.files.values() {
            for func_id in &file.func_ids {
                self.func_to_files
                    .entry(func_id.clone())
                    .or_default()
                    .insert(file.file_id.clone());
                self.func_to_tpls
                    .entry(func_id.clone())
                    .or_default()
                    .insert(file.tpl_id.clone());
            }
        }
    }

    /// Writes the database as JSON Lines: a header, one line per function,
    /// file and TPL (each group sorted by id), then an end record carrying
    /// the counts so truncation is detectable.
    pub fn persist(&self, path: &Path) -> Result<()> {
        let mut lines = Vec::with_capacity(self.functions.len() + self.files.len() + self.tpls.len() + 2);
        lines.push(DbLine::Header {
            format: DB_FORMAT.to_string(),
            schema_version: DB_SCHEMA_VERSION,
        });
        for f in self.functions.values() {
            lines.push(DbLine::Function {
                id: f.func_id.clone(),
                name: f.name.clone(),
                tokens: f.tokens.clone(),
                callee_names: f.callee_names.clone(),
                calls: self.callees_of(&f.func_id).clone(),
            });
        }
        for file in self.files.values() {
            lines.push(DbLine::File {
                id: file.file_id.clone(),
                tpl: file.tpl_id.clone(),
                functions: file.func_ids.clone(),
            });
        }
        for tpl in self.tpls.values() {
            lines.push(DbLine::Tpl {
                id: tpl.tpl_id.clone(),
                files: tpl.file_ids.clone(),
                total_func_count: tpl.total_func_count,
            });
        }
        lines.push(DbLine::End {
            functions: self.functions.len(),
            files: self.files.len(),
            tpls: self.tpls.len(),
        });
        io::write_jsonl(path, &lines)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let shown = path.display();
        let records = io::read_records(path)?;
        let mut iter = records.into_iter();

        match iter.next() {
            None => return Err(Error::format(&shown, 1, "empty file, missing header")),
            Some((n, line)) => match io::parse_record::<DbLine>(path, n, &line)? {
                DbLine::Header { format, schema_version } => {
                    if format != DB_FORMAT {
                        return Err(Error::format(&shown, n, format!("unknown format `{format}`")));
                    }
                    if schema_version != DB_SCHEMA_VERSION {
                        return Err(Error::SchemaVersion {
                            path: shown.to_string(),
                            found: schema_version,
                            expected: DB_SCHEMA_VERSION,
                        });
                    }
                }
                _ => return Err(Error::format(&shown, n, "first record must be the header")),
            },
        }

        let mut db = ScaDatabase::default();
        let mut last = 1;
        let mut ended = None;
        for (n, line) in iter {
            last = n;
            if ended.is_some() {
                return Err(Error::format(&shown, n, "record after end marker"));
            }
            match io::parse_record::<DbLine>(path, n, &line)? {
                DbLine::Header { .. } => return Err(Error::format(&shown, n, "duplicate header")),
                DbLine::Function { id, name, tokens, callee_names, calls } => {
                    if tokens.is_empty() {
                        return Err(Error::format(&shown, n, format!("function `{id}` has no tokens")));
                    }
                    if function_id(&tokens) != id {
                        return Err(Error::format(&shown, n, format!("function `{id}` does not match its token hash")));
                    }
                    if !calls.is_empty() {
                        db.calls.insert(id.clone(), calls);
                    }
                    let func = SourceFunction { func_id: id.clone(), name, tokens, callee_names };
                    if db.functions.insert(id.clone(), func).is_some() {
                        return Err(Error::format(&shown, n, format!("duplicate function `{id}`")));
                    }
                }
                DbLine::File { id, tpl, functions } => {
                    let mut unique = BTreeSet::new();
                    for f in &functions {
                        if !db.functions.contains_key(f) {
                            return Err(Error::format(&shown, n, format!("file `{id}` references unknown function `{f}`")));
                        }
                        if !unique.insert(f) {
                            return Err(Error::format(&shown, n, format!("file `{id}` lists `{f}` twice")));
                        }
                    }
                    if functions.is_empty() {
                        return Err(Error::format(&shown, n, format!("file `{id}` has no functions")));
                    }
                    let file = SourceFile { file_id: id.clone(), tpl_id: tpl, func_ids: functions };
                    if db.files.insert(id.clone(), file).is_some() {
                        return Err(Error::format(&shown, n, format!("duplicate file `{id}`")));
                    }
                }
                DbLine::Tpl { id, files, total_func_count } => {
                    for f in &files {
                        match db.files.get(f) {
                            Some(file) if file.tpl_id == id => {}
                            Some(_) => {
                                return Err(Error::format(&shown, n, format!("tpl `{id}` claims file `{f}` of another tpl")))
                            }
                            None => return Err(Error::format(&shown, n, format!("tpl `{id}` references unknown file `{f}`"))),
                        }
                    }
                    let tpl = TplRecord { tpl_id: id.clone(), file_ids: files, total_func_count };
                    if db.tpls.insert(id.clone(), tpl).is_some() {
                        return Err(Error::format(&shown, n, format!("duplicate tpl `{id}`")));
                    }
                }
                DbLine::End { functions, files, tpls } => ended = Some((n, functions, files, tpls)),
            }
        }

        let Some((n, functions, files, tpls)) = ended else {
            return Err(Error::format(&shown, last, "truncated: missing end record"));
        };
        if (functions, files, tpls) != (db.functions.len(), db.files.len(), db.tpls.len()) {
            return Err(Error::format(&shown, n, "end record counts do not match the records read"));
        }
        for file in db.files.values() {
            if !db.tpls.get(&file.tpl_id).is_some_and(|t| t.file_ids.contains(&file.file_id)) {
                return Err(Error::format(&shown, n, format!("file `{}` is not listed by its tpl", file.file_id)));
            }
        }
        db.rebuild_indexes();
        let declared: BTreeMap<String, usize> =
            db.tpls.iter().map(|(k, t)| (k.clone(), t.total_func_count)).collect();
        db.recount_tpls();
        for (id, count) in declared {
            if db.tpls[&id].total_func_count != count {
                return Err(Error::format(&shown, n, format!("tpl `{id}` total_func_count is inconsistent")));
            }
        }
        Ok(db)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum DbLine {
    Header {
        format: String,
        schema_version: u32,
    },
    Function {
        id: String,
        name: String,
        tokens: Vec<String>,
        callee_names: BTreeSet<String>,
        #[serde(default)]
        calls: BTreeSet<String>,
    },
    File {
        id: String,
        tpl: String,
        functions: Vec<String>,
    },
    Tpl {
        id: String,
        files: BTreeSet<String>,
        total_func_count: usize,
    },
    End {
        functions: usize,
        files: usize,
        tpls: usize,
    },
}
