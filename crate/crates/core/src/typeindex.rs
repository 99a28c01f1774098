//! Type-name index backing the TypeLookup tool.
//!
//! Entries come from an explicit manifest (`name -> {aliases, section_ids}`),
//! from a heading heuristic over API-reference sections, or both; manifest
//! entries win on name conflicts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::docstore::DocStore;

const MAX_SUGGESTIONS: usize = 5;
const MEMBER_DESCRIPTION_CHARS: usize = 120;

#[derive(Debug, Error)]
pub enum TypeIndexError {
    #[error("type manifest entry `{name}` references unknown section `{section}`")]
    UnknownSection { name: String, section: String },
    #[error("type manifest entry `{0}` lists no sections")]
    NoSections(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed type index file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntrySource {
    Manifest,
    Heuristic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemberSummary {
    pub signature: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeEntry {
    pub name: String,
    pub aliases: Vec<String>,
    pub section_ids: Vec<String>,
    pub member_summaries: Vec<MemberSummary>,
    pub source: EntrySource,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    #[serde(default)]
    pub aliases: Vec<String>,
    pub section_ids: Vec<String>,
}

/// Explicit `name -> entry` mapping, as stored in a JSON manifest file.
pub type TypeManifest = BTreeMap<String, ManifestEntry>;

pub fn load_manifest(path: &Path) -> Result<TypeManifest, TypeIndexError> {
    let text =
        fs::read_to_string(path).map_err(|source| TypeIndexError::Io { path: path.display().to_string(), source })?;
    Ok(serde_json::from_str(&text)?)
}

/// Heading keywords that mark a documented entity, e.g. `## class ArrayList`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeuristicConfig {
    pub keywords: Vec<String>,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        Self { keywords: ["class", "struct", "interface", "enum", "extend"].map(String::from).to_vec() }
    }
}

impl HeuristicConfig {
    /// Entity name declared by a heading, if the heading starts with one of
    /// the keywords: the identifier token following the keyword.
    pub fn entity_name(&self, title: &str) -> Option<String> {
        let mut words = title.split_whitespace();
        let first = words.next()?;
        if !self.keywords.iter().any(|k| k == first) {
            return None;
        }
        let token = words.next()?;
        let ident: String = token.chars().take_while(|c| c.is_alphanumeric() || *c == '_').collect();
        (!ident.is_empty()).then_some(ident)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TypeIndex {
    entries: Vec<TypeEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LookupResult {
    Hit { name: String, text: String },
    Miss { query: String, suggestions: Vec<String> },
}

impl LookupResult {
    pub fn render(&self) -> String {
        match self {
            LookupResult::Hit { text, .. } => text.clone(),
            LookupResult::Miss { query, suggestions } => {
                if suggestions.is_empty() {
                    format!("type not found: {query}")
                } else {
                    format!("type not found: {query}; did you mean: {}", suggestions.join(", "))
                }
            }
        }
    }
}

fn member_summaries(store: &DocStore, section_ids: &[String]) -> Vec<MemberSummary> {
    let mut out = Vec::new();
    for id in section_ids {
        let Some(node) = store.node(id) else { continue };
        for child_id in &node.children {
            let child = store.node(child_id).expect("validated tree");
            let description = store
                .section_text(child_id)
                .and_then(|t| t.lines().map(str::trim).find(|l| !l.is_empty() && !l.starts_with("```")))
                .map(|l| l.chars().take(MEMBER_DESCRIPTION_CHARS).collect())
                .unwrap_or_default();
            out.push(MemberSummary { signature: child.title.clone(), description });
        }
    }
    out
}

impl TypeIndex {
    /// Builds the index. With neither input the index is empty.
    pub fn build(
        store: &DocStore,
        manifest: Option<&TypeManifest>,
        heuristic: Option<&HeuristicConfig>,
    ) -> Result<Self, TypeIndexError> {
        let mut by_name: BTreeMap<String, TypeEntry> = BTreeMap::new();
        if let Some(config) = heuristic {
            for node in store.nodes().iter().skip(1) {
                let Some(name) = config.entity_name(&node.title) else { continue };
                let entry = by_name.entry(name.clone()).or_insert_with(|| TypeEntry {
                    name,
                    aliases: Vec::new(),
                    section_ids: Vec::new(),
                    member_summaries: Vec::new(),
                    source: EntrySource::Heuristic,
                });
                entry.section_ids.push(node.id.clone());
            }
        }
        if let Some(manifest) = manifest {
            for (name, m) in manifest {
                if m.section_ids.is_empty() {
                    return Err(TypeIndexError::NoSections(name.clone()));
                }
                if let Some(bad) = m.section_ids.iter().find(|s| store.node(s).is_none()) {
                    return Err(TypeIndexError::UnknownSection { name: name.clone(), section: bad.clone() });
                }
                by_name.insert(
                    name.clone(),
                    TypeEntry {
                        name: name.clone(),
                        aliases: m.aliases.clone(),
                        section_ids: m.section_ids.clone(),
                        member_summaries: Vec::new(),
                        source: EntrySource::Manifest,
                    },
                );
            }
        }
        let mut entries: Vec<TypeEntry> = by_name.into_values().collect();
        for entry in &mut entries {
            entry.member_summaries = member_summaries(store, &entry.section_ids);
        }
        let index = Self { entries };
        Ok(index)
    }

    pub fn entries(&self) -> &[TypeEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&TypeEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    fn resolve(&self, name: &str) -> Option<&TypeEntry> {
        self.get(name).or_else(|| self.entries.iter().find(|e| e.aliases.iter().any(|a| a == name))).or_else(|| {
            let lower = name.to_lowercase();
            self.entries
                .iter()
                .find(|e| e.name.to_lowercase() == lower || e.aliases.iter().any(|a| a.to_lowercase() == lower))
        })
    }

    /// Exact name, then alias, then case-insensitive match. A miss carries
    /// up to five names sharing the longest prefix with the query.
    pub fn lookup(&self, store: &DocStore, name: &str) -> LookupResult {
        let Some(entry) = self.resolve(name.trim()) else {
            return LookupResult::Miss { query: name.to_string(), suggestions: self.suggestions(name.trim()) };
        };
        let mut text = format!("# {}", entry.name);
        if !entry.aliases.is_empty() {
            let _ = write!(text, " (aliases: {})", entry.aliases.join(", "));
        }
        text.push('\n');
        for id in &entry.section_ids {
            let _ = write!(text, "\n[{id}]\n");
            match store.section_text(id) {
                Some(body) => text.push_str(body),
                None => text.push_str("(no body text)"),
            }
            text.push('\n');
        }
        if !entry.member_summaries.is_empty() {
            text.push_str("\nMembers:\n");
            for m in &entry.member_summaries {
                if m.description.is_empty() {
                    let _ = writeln!(text, "- {}", m.signature);
                } else {
                    let _ = writeln!(text, "- {}: {}", m.signature, m.description);
                }
            }
        }
        LookupResult::Hit { name: entry.name.clone(), text: text.trim_end().to_string() }
    }

    fn suggestions(&self, query: &str) -> Vec<String> {
        let q: Vec<char> = query.to_lowercase().chars().collect();
        let mut scored: Vec<(usize, &str)> = self
            .entries
            .iter()
            .map(|e| (common_prefix_len(&q, &e.name), e.name.as_str()))
            .filter(|(len, _)| *len > 0)
            .collect();
        scored.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        scored.into_iter().take(MAX_SUGGESTIONS).map(|(_, n)| n.to_string()).collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), TypeIndexError> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json).map_err(|source| TypeIndexError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self, TypeIndexError> {
        let text = fs::read_to_string(path)
            .map_err(|source| TypeIndexError::Io { path: path.display().to_string(), source })?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn common_prefix_len(query_lower: &[char], name: &str) -> usize {
    name.to_lowercase().chars().zip(query_lower).take_while(|(a, b)| a == *b).count()
}
