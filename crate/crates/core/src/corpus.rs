//! Documents, categories, and their on-disk formats.
//!
//! A corpus is JSON-lines: one object per line with a string `id` and `title`,
//! and optional `abstract`, `year` and `source`. Other fields are kept on the
//! record untouched so a corpus can be re-serialized without losing metadata.
//! Categories are a JSON array of `{key, name, description}` objects; the
//! declaration order is the index order used for tie-breaking downstream.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// The built-in four-category taxonomy, selected with `--categories default`.
pub const DEFAULT_CATEGORIES_JSON: &str = include_str!("default_categories.json");

pub const DEFAULT_SEPARATOR: &str = "\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperRecord {
    pub id: String,
    pub title: String,
    #[serde(rename = "abstract", default, skip_serializing_if = "Option::is_none")]
    pub abstract_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub year: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    /// Fields not part of the record schema, preserved verbatim.
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl PaperRecord {
    pub fn new(id: impl Into<String>, title: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            title: title.into(),
            abstract_text: None,
            year: None,
            source: None,
            extra: Map::new(),
        }
    }

    pub fn with_abstract(mut self, text: impl Into<String>) -> Self {
        self.abstract_text = Some(text.into());
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    records: Vec<PaperRecord>,
}

impl Corpus {
    /// Builds a corpus from already-constructed records, enforcing id uniqueness
    /// and non-empty titles.
    pub fn from_records(records: Vec<PaperRecord>) -> Result<Self, CorpusError> {
        let mut diagnostics = Vec::new();
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for (i, r) in records.iter().enumerate() {
            let line = i + 1;
            if r.title.trim().is_empty() {
                diagnostics.push(Diagnostic::new(line, DiagnosticKind::EmptyTitle));
            }
            if let Some(&first) = seen.get(r.id.as_str()) {
                diagnostics.push(Diagnostic::new(
                    line,
                    DiagnosticKind::DuplicateId {
                        id: r.id.clone(),
                        first_line: first,
                    },
                ));
            } else {
                seen.insert(&r.id, line);
            }
        }
        if diagnostics.is_empty() {
            Ok(Self { records })
        } else {
            Err(CorpusError::Invalid(diagnostics))
        }
    }

    pub fn records(&self) -> &[PaperRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, PaperRecord> {
        self.records.iter()
    }

    /// Serializes back to JSON-lines, one record per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serialization is infallible"));
            out.push('\n');
        }
        out
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a PaperRecord;
    type IntoIter = std::slice::Iter<'a, PaperRecord>;

    fn into_iter(self) -> Self::IntoIter {
        self.records.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DiagnosticKind {
    Malformed(String),
    NotAnObject,
    MissingField(&'static str),
    WrongType {
        field: &'static str,
        expected: &'static str,
    },
    EmptyTitle,
    DuplicateId {
        id: String,
        first_line: usize,
    },
}

/// One defect found while reading a corpus, tagged with its 1-based line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub kind: DiagnosticKind,
}

impl Diagnostic {
    fn new(line: usize, kind: DiagnosticKind) -> Self {
        Self { line, kind }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: ", self.line)?;
        match &self.kind {
            DiagnosticKind::Malformed(msg) => write!(f, "malformed JSON: {msg}"),
            DiagnosticKind::NotAnObject => write!(f, "expected a JSON object"),
            DiagnosticKind::MissingField(field) => write!(f, "missing required field `{field}`"),
            DiagnosticKind::WrongType { field, expected } => {
                write!(f, "field `{field}` must be {expected}")
            }
            DiagnosticKind::EmptyTitle => write!(f, "field `title` is empty"),
            DiagnosticKind::DuplicateId { id, first_line } => {
                write!(f, "duplicate id `{id}` (first seen on line {first_line})")
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{}", format_diagnostics(.0))]
    Invalid(Vec<Diagnostic>),
    #[error("invalid category config: {0}")]
    Categories(String),
}

impl CorpusError {
    pub fn diagnostics(&self) -> &[Diagnostic] {
        match self {
            CorpusError::Invalid(d) => d,
            CorpusError::Categories(_) => &[],
        }
    }
}

fn format_diagnostics(diags: &[Diagnostic]) -> String {
    diags
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

/// Parses a JSON-lines corpus. Every defect is collected; any defect at all
/// yields an error and no corpus.
pub fn parse_corpus(input: &str) -> Result<Corpus, CorpusError> {
    let mut records = Vec::new();
    let mut diagnostics = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();

    for (idx, raw) in input.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        match parse_record(raw) {
            Ok(record) => {
                if let Some(&first_line) = seen.get(&record.id) {
                    diagnostics.push(Diagnostic::new(
                        line,
                        DiagnosticKind::DuplicateId {
                            id: record.id.clone(),
                            first_line,
                        },
                    ));
                } else {
                    seen.insert(record.id.clone(), line);
                    records.push(record);
                }
            }
            Err(kinds) => diagnostics.extend(kinds.into_iter().map(|k| Diagnostic::new(line, k))),
        }
    }

    if diagnostics.is_empty() {
        Ok(Corpus { records })
    } else {
        Err(CorpusError::Invalid(diagnostics))
    }
}

fn parse_record(raw: &str) -> Result<PaperRecord, Vec<DiagnosticKind>> {
    let value: Value =
        serde_json::from_str(raw).map_err(|e| vec![DiagnosticKind::Malformed(e.to_string())])?;
    let Value::Object(mut obj) = value else {
        return Err(vec![DiagnosticKind::NotAnObject]);
    };

    let mut problems = Vec::new();
    let id = take_required_string(&mut obj, "id", &mut problems);
    let title = take_required_string(&mut obj, "title", &mut problems);
    if let Some(t) = &title {
        if t.trim().is_empty() {
            problems.push(DiagnosticKind::EmptyTitle);
        }
    }
    let abstract_text = take_optional(
        &mut obj,
        "abstract",
        &mut problems,
        |v| v.as_str().map(str::to_owned),
        "a string",
    );
    let year = take_optional(&mut obj, "year", &mut problems, Value::as_i64, "an integer");
    let source = take_optional(
        &mut obj,
        "source",
        &mut problems,
        |v| v.as_str().map(str::to_owned),
        "a string",
    );

    match (id, title) {
        (Some(id), Some(title)) if problems.is_empty() => Ok(PaperRecord {
            id,
            title,
            abstract_text,
            year,
            source,
            extra: obj,
        }),
        _ => Err(problems),
    }
}

fn take_required_string(
    obj: &mut Map<String, Value>,
    field: &'static str,
    problems: &mut Vec<DiagnosticKind>,
) -> Option<String> {
    match obj.remove(field) {
        None | Some(Value::Null) => {
            problems.push(DiagnosticKind::MissingField(field));
            None
        }
        Some(Value::String(s)) => Some(s),
        Some(_) => {
            problems.push(DiagnosticKind::WrongType {
                field,
                expected: "a string",
            });
            None
        }
    }
}

fn take_optional<T>(
    obj: &mut Map<String, Value>,
    field: &'static str,
    problems: &mut Vec<DiagnosticKind>,
    convert: impl Fn(&Value) -> Option<T>,
    expected: &'static str,
) -> Option<T> {
    match obj.remove(field) {
        None | Some(Value::Null) => None,
        Some(v) => {
            let out = convert(&v);
            if out.is_none() {
                problems.push(DiagnosticKind::WrongType { field, expected });
            }
            out
        }
    }
}

/// The text that gets classified: the title, followed by `separator` and the
/// abstract when one is present and not blank.
pub fn document_text(record: &PaperRecord, separator: &str) -> String {
    match record.abstract_text.as_deref() {
        Some(a) if !a.trim().is_empty() => format!("{}{}{}", record.title, separator, a),
        _ => record.title.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySpec {
    pub key: String,
    pub name: String,
    pub description: String,
}

impl CategorySpec {
    /// Text embedded to represent the category: `"name: description"`.
    pub fn embedding_text(&self) -> String {
        format!("{}: {}", self.name, self.description)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct CategorySet {
    categories: Vec<CategorySpec>,
}

impl CategorySet {
    pub fn new(categories: Vec<CategorySpec>) -> Result<Self, CorpusError> {
        if categories.len() < 2 {
            return Err(CorpusError::Categories(
                "at least 2 categories required".into(),
            ));
        }
        let mut keys = HashSet::new();
        for (i, c) in categories.iter().enumerate() {
            if c.key.trim().is_empty() {
                return Err(CorpusError::Categories(format!("category {i}: empty key")));
            }
            if !keys.insert(c.key.as_str()) {
                return Err(CorpusError::Categories(format!(
                    "duplicate category key `{}`",
                    c.key
                )));
            }
            if c.name.trim().is_empty() {
                return Err(CorpusError::Categories(format!(
                    "category `{}`: empty name",
                    c.key
                )));
            }
            if c.description.trim().is_empty() {
                return Err(CorpusError::Categories(format!(
                    "category `{}`: empty description",
                    c.key
                )));
            }
        }
        Ok(Self { categories })
    }

    pub fn builtin() -> Self {
        parse_categories(DEFAULT_CATEGORIES_JSON).expect("built-in category config is valid")
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&CategorySpec> {
        self.categories.get(index)
    }

    pub fn index_of(&self, key: &str) -> Option<usize> {
        self.categories.iter().position(|c| c.key == key)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, CategorySpec> {
        self.categories.iter()
    }
}

impl<'de> Deserialize<'de> for CategorySet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let categories = Vec::<CategorySpec>::deserialize(d)?;
        CategorySet::new(categories).map_err(serde::de::Error::custom)
    }
}

pub fn parse_categories(config: &str) -> Result<CategorySet, CorpusError> {
    let categories: Vec<CategorySpec> =
        serde_json::from_str(config).map_err(|e| CorpusError::Categories(e.to_string()))?;
    CategorySet::new(categories)
}
