//! Hierarchical documentation store.
//!
//! A documentation root holds markdown files plus a `manifest.txt` that lists
//! them in table-of-contents order. Each ATX heading (`#`, `##`, `###`)
//! becomes a [`DocNode`]; the text between a heading and the next heading
//! becomes that node's [`DocChunk`]. Node ids are slugified heading paths
//! (`types/integers`), disambiguated with `-2`, `-3`, ... in document order.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MANIFEST_FILE: &str = "manifest.txt";
const MAX_HEADING_LEVEL: usize = 3;
const STORE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DocError {
    #[error("manifest not found: {0}")]
    MissingManifest(PathBuf),
    #[error("manifest {0} lists no documentation files")]
    EmptyManifest(PathBuf),
    #[error("cannot ingest {path}: {reason}")]
    Ingest { path: PathBuf, reason: String },
    #[error("duplicate section id `{0}`")]
    DuplicateId(String),
    #[error("invalid store: {0}")]
    Invalid(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed store file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocNode {
    pub id: String,
    pub title: String,
    pub level: usize,
    pub children: Vec<String>,
    pub chunk_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocChunk {
    pub chunk_id: String,
    pub section_id: String,
    pub text: String,
    pub token_estimate: usize,
}

/// The requested section does not exist. Rendered as agent feedback rather
/// than treated as a failure.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("section not found: {0}")]
pub struct SectionNotFound(pub String);

#[derive(Serialize, Deserialize)]
struct StoreFile {
    version: u32,
    nodes: Vec<DocNode>,
    chunks: Vec<DocChunk>,
}

/// Immutable documentation tree. The synthetic root has the empty id.
#[derive(Debug, Clone)]
pub struct DocStore {
    nodes: Vec<DocNode>,
    chunks: Vec<DocChunk>,
    node_index: HashMap<String, usize>,
    chunk_index: HashMap<String, usize>,
}

pub const ROOT_ID: &str = "";

/// Approximate token count: characters / 4, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

/// Lowercase slug: alphanumerics kept, everything else collapsed to `-`.
pub fn slugify(title: &str) -> String {
    let mut slug = String::new();
    let mut pending_dash = false;
    for c in title.chars().flat_map(char::to_lowercase) {
        if c.is_alphanumeric() {
            if pending_dash && !slug.is_empty() {
                slug.push('-');
            }
            pending_dash = false;
            slug.push(c);
        } else {
            pending_dash = true;
        }
    }
    if slug.is_empty() {
        slug.push_str("section");
    }
    slug
}

/// Parses an ATX heading line of level 1..=3, returning `(level, title)`.
fn heading(line: &str) -> Option<(usize, &str)> {
    let indent = line.len() - line.trim_start_matches(' ').len();
    if indent > 3 {
        return None;
    }
    let rest = &line[indent..];
    let hashes = rest.len() - rest.trim_start_matches('#').len();
    if hashes == 0 || hashes > MAX_HEADING_LEVEL {
        return None;
    }
    let after = &rest[hashes..];
    if !after.starts_with([' ', '\t']) {
        return None;
    }
    let title = after.trim().trim_end_matches('#').trim_end();
    (!title.is_empty()).then_some((hashes, title))
}

fn fence_marker(line: &str) -> Option<char> {
    let trimmed = line.trim_start_matches(' ');
    if line.len() - trimmed.len() > 3 {
        return None;
    }
    if trimmed.starts_with("```") {
        Some('`')
    } else if trimmed.starts_with("~~~") {
        Some('~')
    } else {
        None
    }
}

fn trim_blank_lines(lines: &[&str]) -> String {
    let start = lines.iter().position(|l| !l.trim().is_empty());
    let end = lines.iter().rposition(|l| !l.trim().is_empty());
    match (start, end) {
        (Some(s), Some(e)) => lines[s..=e].iter().map(|l| l.trim_end()).collect::<Vec<_>>().join("\n"),
        _ => String::new(),
    }
}

struct Builder {
    nodes: Vec<DocNode>,
    chunks: Vec<DocChunk>,
    used_ids: HashMap<String, usize>,
}

impl Builder {
    fn new() -> Self {
        let root = DocNode { id: ROOT_ID.into(), title: String::new(), level: 0, children: Vec::new(), chunk_id: None };
        Self { nodes: vec![root], chunks: Vec::new(), used_ids: HashMap::new() }
    }

    fn unique_id(&mut self, base: String) -> String {
        let mut candidate = base.clone();
        let mut n = 1;
        while self.used_ids.contains_key(&candidate) {
            n += 1;
            candidate = format!("{base}-{n}");
        }
        self.used_ids.insert(candidate.clone(), self.nodes.len());
        candidate
    }

    fn add_node(&mut self, parent: usize, title: &str, slug: &str) -> usize {
        let parent_id = &self.nodes[parent].id;
        let base = if parent_id.is_empty() { slug.to_string() } else { format!("{parent_id}/{slug}") };
        let id = self.unique_id(base);
        let level = self.nodes[parent].level + 1;
        self.nodes[parent].children.push(id.clone());
        self.nodes.push(DocNode { id, title: title.to_string(), level, children: Vec::new(), chunk_id: None });
        self.nodes.len() - 1
    }

    fn attach_body(&mut self, node: usize, lines: &[&str]) {
        let text = trim_blank_lines(lines);
        if text.is_empty() {
            return;
        }
        let chunk_id = format!("c{:05}", self.chunks.len());
        self.nodes[node].chunk_id = Some(chunk_id.clone());
        self.chunks.push(DocChunk {
            chunk_id,
            section_id: self.nodes[node].id.clone(),
            token_estimate: estimate_tokens(&text),
            text,
        });
    }

    fn add_file(&mut self, file_stem: &str, content: &str) {
        // (markdown heading level, node index)
        let mut stack: Vec<(usize, usize)> = Vec::new();
        let mut current: Option<usize> = None;
        let mut body: Vec<&str> = Vec::new();
        let mut fence: Option<char> = None;
        let mut preamble: Vec<&str> = Vec::new();

        for line in content.lines() {
            if let Some(open) = fence {
                if fence_marker(line) == Some(open) {
                    fence = None;
                }
                body.push(line);
                continue;
            }
            if let Some(marker) = fence_marker(line) {
                fence = Some(marker);
                body.push(line);
                continue;
            }
            let Some((level, title)) = heading(line) else {
                body.push(line);
                continue;
            };
            match current {
                Some(node) => self.attach_body(node, &body),
                None => preamble = std::mem::take(&mut body),
            }
            body.clear();
            if current.is_none() && !trim_blank_lines(&preamble).is_empty() {
                let node = self.add_node(0, file_stem, &slugify(file_stem));
                self.attach_body(node, &preamble);
            }
            while stack.last().is_some_and(|&(l, _)| l >= level) {
                stack.pop();
            }
            let parent = stack.last().map_or(0, |&(_, n)| n);
            let node = self.add_node(parent, title, &slugify(title));
            stack.push((level, node));
            current = Some(node);
        }
        match current {
            Some(node) => self.attach_body(node, &body),
            None => {
                if !trim_blank_lines(&body).is_empty() {
                    let node = self.add_node(0, file_stem, &slugify(file_stem));
                    self.attach_body(node, &body);
                }
            }
        }
    }
}

/// Reads `manifest.txt`: one relative markdown path per line, blank lines and
/// lines starting with `//` ignored.
pub fn read_manifest(docs_root: &Path) -> Result<Vec<PathBuf>, DocError> {
    let manifest = docs_root.join(MANIFEST_FILE);
    if !manifest.is_file() {
        return Err(DocError::MissingManifest(manifest));
    }
    let text = fs::read_to_string(&manifest)
        .map_err(|e| DocError::Ingest { path: manifest.clone(), reason: e.to_string() })?;
    let files: Vec<PathBuf> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with("//"))
        .map(|l| docs_root.join(l))
        .collect();
    if files.is_empty() {
        return Err(DocError::EmptyManifest(manifest));
    }
    Ok(files)
}

impl DocStore {
    /// Ingests a documentation directory described by its manifest.
    pub fn ingest(docs_root: &Path) -> Result<Self, DocError> {
        let mut sources = Vec::new();
        for path in read_manifest(docs_root)? {
            let bytes = fs::read(&path).map_err(|e| DocError::Ingest { path: path.clone(), reason: e.to_string() })?;
            let text = String::from_utf8(bytes)
                .map_err(|_| DocError::Ingest { path: path.clone(), reason: "file is not valid UTF-8".into() })?;
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("document").to_string();
            sources.push((stem, text));
        }
        Ok(Self::from_sources(&sources))
    }

    /// Builds a store from `(file stem, markdown)` pairs in manifest order.
    pub fn from_sources(sources: &[(String, String)]) -> Self {
        let mut builder = Builder::new();
        for (stem, content) in sources {
            builder.add_file(stem, content);
        }
        Self::assemble(builder.nodes, builder.chunks).expect("builder produces a consistent tree")
    }

    fn assemble(nodes: Vec<DocNode>, chunks: Vec<DocChunk>) -> Result<Self, DocError> {
        let mut node_index = HashMap::with_capacity(nodes.len());
        for (i, node) in nodes.iter().enumerate() {
            if node_index.insert(node.id.clone(), i).is_some() {
                return Err(DocError::DuplicateId(node.id.clone()));
            }
        }
        let mut chunk_index = HashMap::with_capacity(chunks.len());
        for (i, chunk) in chunks.iter().enumerate() {
            if chunk_index.insert(chunk.chunk_id.clone(), i).is_some() {
                return Err(DocError::Invalid(format!("duplicate chunk id `{}`", chunk.chunk_id)));
            }
        }
        let store = Self { nodes, chunks, node_index, chunk_index };
        store.validate()?;
        Ok(store)
    }

    fn validate(&self) -> Result<(), DocError> {
        let root = self.nodes.first().ok_or_else(|| DocError::Invalid("store has no root".into()))?;
        if root.id != ROOT_ID {
            return Err(DocError::Invalid("first node must be the root".into()));
        }
        let mut seen_as_child = vec![false; self.nodes.len()];
        for node in &self.nodes {
            for child in &node.children {
                let &ci = self
                    .node_index
                    .get(child)
                    .ok_or_else(|| DocError::Invalid(format!("child `{child}` of `{}` does not exist", node.id)))?;
                if ci == 0 || seen_as_child[ci] {
                    return Err(DocError::Invalid(format!("node `{child}` has more than one parent")));
                }
                seen_as_child[ci] = true;
                if self.nodes[ci].level != node.level + 1 {
                    return Err(DocError::Invalid(format!("node `{child}` has an inconsistent level")));
                }
            }
            if let Some(cid) = &node.chunk_id {
                let chunk = self
                    .chunk(cid)
                    .ok_or_else(|| DocError::Invalid(format!("node `{}` references missing chunk `{cid}`", node.id)))?;
                if chunk.section_id != node.id {
                    return Err(DocError::Invalid(format!("chunk `{cid}` does not point back to `{}`", node.id)));
                }
            }
        }
        if let Some(orphan) = seen_as_child.iter().skip(1).position(|s| !s) {
            return Err(DocError::Invalid(format!(
                "node `{}` is unreachable from the root",
                self.nodes[orphan + 1].id
            )));
        }
        for chunk in &self.chunks {
            if chunk.text.is_empty() {
                return Err(DocError::Invalid(format!("chunk `{}` is empty", chunk.chunk_id)));
            }
            let owner = self
                .node(&chunk.section_id)
                .ok_or_else(|| DocError::Invalid(format!("chunk `{}` has no section", chunk.chunk_id)))?;
            if owner.chunk_id.as_deref() != Some(chunk.chunk_id.as_str()) {
                return Err(DocError::Invalid(format!(
                    "section `{}` does not own chunk `{}`",
                    owner.id, chunk.chunk_id
                )));
            }
        }
        Ok(())
    }

    pub fn root(&self) -> &DocNode {
        &self.nodes[0]
    }

    /// All nodes in document order, root first.
    pub fn nodes(&self) -> &[DocNode] {
        &self.nodes
    }

    pub fn chunks(&self) -> &[DocChunk] {
        &self.chunks
    }

    pub fn node(&self, id: &str) -> Option<&DocNode> {
        self.node_index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn chunk(&self, chunk_id: &str) -> Option<&DocChunk> {
        self.chunk_index.get(chunk_id).map(|&i| &self.chunks[i])
    }

    /// Body text of a section, if it has one.
    pub fn section_text(&self, id: &str) -> Option<&str> {
        self.node(id)?.chunk_id.as_deref().and_then(|c| self.chunk(c)).map(|c| c.text.as_str())
    }

    /// Number of sections below the root.
    pub fn section_count(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Indented outline of the subtree at `section_id` (the root when `None`),
    /// `depth` levels deep. Nodes whose children were cut off carry `(+N)`.
    pub fn view_struct(&self, section_id: Option<&str>, depth: usize) -> Result<String, SectionNotFound> {
        let depth = depth.max(1);
        let start = match section_id {
            None => self.root(),
            Some(id) => self.node(id).ok_or_else(|| SectionNotFound(id.to_string()))?,
        };
        let mut out = String::new();
        if start.id.is_empty() {
            for child in &start.children {
                self.outline(child, 0, depth - 1, &mut out);
            }
        } else {
            self.outline(&start.id, 0, depth, &mut out);
        }
        if out.is_empty() {
            out.push_str("(no subsections)\n");
        }
        Ok(out)
    }

    fn outline(&self, id: &str, indent: usize, remaining: usize, out: &mut String) {
        let node = self.node(id).expect("validated tree");
        let _ = write!(out, "{}- {} [{}]", "  ".repeat(indent), node.title, node.id);
        if remaining == 0 && !node.children.is_empty() {
            let _ = write!(out, " (+{})", node.children.len());
        }
        out.push('\n');
        if remaining > 0 {
            for child in &node.children {
                self.outline(child, indent + 1, remaining - 1, out);
            }
        }
    }

    /// Full body of a section followed by a one-line child listing.
    pub fn view_detail(&self, section_id: &str) -> Result<String, SectionNotFound> {
        let node = self.node(section_id).ok_or_else(|| SectionNotFound(section_id.to_string()))?;
        let mut out = match node.chunk_id.as_deref().and_then(|c| self.chunk(c)) {
            Some(chunk) => chunk.text.clone(),
            None => format!("(section `{}` has no body text of its own)", node.id),
        };
        out.push_str("\n\nSubsections: ");
        if node.children.is_empty() {
            out.push_str("(none)");
        } else {
            out.push_str(&node.children.join(", "));
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        let file = StoreFile { version: STORE_FORMAT_VERSION, nodes: self.nodes.clone(), chunks: self.chunks.clone() };
        serde_json::to_string_pretty(&file).expect("store serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, DocError> {
        let file: StoreFile = serde_json::from_str(json)?;
        if file.version != STORE_FORMAT_VERSION {
            return Err(DocError::Invalid(format!("unsupported store version {}", file.version)));
        }
        Self::assemble(file.nodes, file.chunks)
    }

    pub fn save(&self, path: &Path) -> Result<(), DocError> {
        fs::write(path, self.to_json()).map_err(|source| DocError::Io { path: path.to_path_buf(), source })
    }

    pub fn load(path: &Path) -> Result<Self, DocError> {
        let json = fs::read_to_string(path).map_err(|source| DocError::Io { path: path.to_path_buf(), source })?;
        Self::from_json(&json)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(md: &str) -> DocStore {
        DocStore::from_sources(&[("doc".to_string(), md.to_string())])
    }

    #[test]
    fn minimal_document() {
        let s = store("# Intro\nhello\n");
        assert_eq!(s.root().children, vec!["intro"]);
        assert_eq!(s.chunks().len(), 1);
        assert_eq!(s.chunks()[0].text, "hello");
        assert_eq!(s.view_detail("intro").unwrap(), "hello\n\nSubsections: (none)");
    }

    #[test]
    fn heading_levels_nest() {
        let s = store("# A\nbody a\n## B\nbody b\n# C\nbody c\n");
        assert_eq!(s.section_count(), 3);
        assert_eq!(s.root().children, vec!["a", "c"]);
        assert_eq!(s.node("a").unwrap().children, vec!["a/b"]);
        assert_eq!(s.node("a/b").unwrap().level, 2);
    }

    #[test]
    fn view_struct_depth_cutoff() {
        let s = store("# A\nbody a\n## B\nbody b\n# C\nbody c\n");
        let top = s.view_struct(None, 1).unwrap();
        assert_eq!(top, "- A [a] (+1)\n- C [c]\n");
        let sub = s.view_struct(Some("a"), 2).unwrap();
        assert_eq!(sub, "- A [a]\n  - B [a/b]\n");
        assert_eq!(s.view_struct(Some("missing"), 1).unwrap_err().to_string(), "section not found: missing");
    }

    #[test]
    fn view_detail_lists_children() {
        let s = store("# A\nbody a\n## B\nbody b\n");
        assert_eq!(s.view_detail("a").unwrap(), "body a\n\nSubsections: a/b");
        assert!(s.view_detail("nope").is_err());
    }

    #[test]
    fn container_sections_get_no_chunk() {
        let s = store("# Outer\n## Inner\ntext\n");
        assert!(s.node("outer").unwrap().chunk_id.is_none());
        assert_eq!(s.chunks().len(), 1);
        assert!(s.view_detail("outer").unwrap().contains("no body text"));
    }

    #[test]
    fn colliding_ids_get_suffixes() {
        let s = store("# Intro\none\n# Intro\ntwo\n# Intro\nthree\n");
        assert_eq!(s.root().children, vec!["intro", "intro-2", "intro-3"]);
    }

    #[test]
    fn headings_inside_fences_are_body() {
        let s = store("# Code\n```\n# not a heading\nlet x = 1\n```\n");
        assert_eq!(s.section_count(), 1);
        assert!(s.chunks()[0].text.contains("# not a heading"));
    }

    #[test]
    fn preamble_attaches_to_file_node() {
        let s = DocStore::from_sources(&[("Getting Started".into(), "welcome text\n# First\nbody\n".into())]);
        assert_eq!(s.root().children, vec!["getting-started", "first"]);
        assert_eq!(s.section_text("getting-started"), Some("welcome text"));
    }

    #[test]
    fn deep_headings_stay_in_body() {
        let s = store("# A\n#### detail\ntext\n");
        assert_eq!(s.section_count(), 1);
        assert_eq!(s.chunks()[0].text, "#### detail\ntext");
    }

    #[test]
    fn json_round_trip_and_validation() {
        let s = store("# A\nbody a\n## B\nbody b\n");
        let back = DocStore::from_json(&s.to_json()).unwrap();
        assert_eq!(back.nodes(), s.nodes());
        assert_eq!(back.chunks(), s.chunks());

        let mut broken: serde_json::Value = serde_json::from_str(&s.to_json()).unwrap();
        broken["nodes"][1]["children"] = serde_json::json!(["ghost"]);
        assert!(DocStore::from_json(&broken.to_string()).is_err());
    }

    #[test]
    fn token_estimate_rounds_up() {
        assert_eq!(estimate_tokens("abcde"), 2);
        assert_eq!(estimate_tokens("abcd"), 1);
        assert_eq!(slugify("Integer Types (i64)"), "integer-types-i64");
        assert_eq!(slugify("***"), "section");
    }
}
