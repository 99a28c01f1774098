mod common;

use std::collections::HashSet;

use ila_core::docstore::{self, DocStore};
use proptest::prelude::*;

/// One expected section: title, depth below the root, parent position in
/// the section list (None for top level) and trimmed body text.
#[derive(Debug, Clone, PartialEq)]
struct Expected {
    title: String,
    depth: usize,
    parent: Option<usize>,
    body: String,
}

/// Brute-force scan: headings are `#`, `##` or `###` plus a space at column
/// 0 outside ``` fences. Text before the first heading becomes a section
/// named after the file.
fn scan(stem: &str, text: &str) -> Vec<Expected> {
    let mut out: Vec<Expected> = Vec::new();
    let mut open: Vec<(usize, usize)> = Vec::new();
    let mut body: Vec<String> = Vec::new();
    let mut in_fence = false;
    let mut owner: Option<usize> = None;
    let flush = |out: &mut Vec<Expected>, owner: Option<usize>, body: &mut Vec<String>, stem: &str| {
        let joined: Vec<&str> = body.iter().map(|l| l.trim_end()).collect();
        let text = joined.join("\n").trim_matches('\n').to_string();
        let text = if text.trim().is_empty() { String::new() } else { strip_blank_edges(&text) };
        match owner {
            Some(i) => out[i].body = text,
            None if !text.is_empty() => {
                out.push(Expected { title: stem.to_string(), depth: 1, parent: None, body: text })
            }
            None => {}
        }
        body.clear();
    };
    for line in text.lines() {
        if line.starts_with("```") {
            in_fence = !in_fence;
            body.push(line.to_string());
            continue;
        }
        let hashes = line.chars().take_while(|&c| c == '#').count();
        let is_heading = !in_fence
            && (1..=3).contains(&hashes)
            && line[hashes..].starts_with(' ')
            && !line[hashes..].trim().is_empty();
        if !is_heading {
            body.push(line.to_string());
            continue;
        }
        flush(&mut out, owner, &mut body, stem);
        while open.last().is_some_and(|&(lvl, _)| lvl >= hashes) {
            open.pop();
        }
        let parent = open.last().map(|&(_, i)| i);
        let depth = parent.map_or(1, |p| out[p].depth + 1);
        out.push(Expected { title: line[hashes..].trim().to_string(), depth, parent, body: String::new() });
        owner = Some(out.len() - 1);
        open.push((hashes, out.len() - 1));
    }
    flush(&mut out, owner, &mut body, stem);
    out
}

fn strip_blank_edges(text: &str) -> String {
    let lines: Vec<&str> = text.lines().collect();
    let first = lines.iter().position(|l| !l.trim().is_empty()).unwrap();
    let last = lines.iter().rposition(|l| !l.trim().is_empty()).unwrap();
    lines[first..=last].join("\n")
}

fn check_against_store(files: &[(String, String)], store: &DocStore) {
    let mut expected = Vec::new();
    for (stem, text) in files {
        let base = expected.len();
        for mut e in scan(stem, text) {
            e.parent = e.parent.map(|p| p + base);
            expected.push(e);
        }
    }
    let nodes = &store.nodes()[1..];
    assert_eq!(nodes.len(), expected.len(), "section count");
    assert_eq!(store.section_count(), expected.len());
    let chunk_count = expected.iter().filter(|e| !e.body.is_empty()).count();
    assert_eq!(store.chunks().len(), chunk_count, "chunk count");
    for (node, exp) in nodes.iter().zip(&expected) {
        assert_eq!(node.title, exp.title);
        assert_eq!(node.level, exp.depth, "depth of {}", node.id);
        let parent_id = exp.parent.map_or("", |p| nodes[p].id.as_str());
        assert!(store.node(parent_id).unwrap().children.contains(&node.id));
        assert_eq!(store.section_text(&node.id).unwrap_or(""), exp.body, "body of {}", node.id);
    }
    let ids: HashSet<&str> = nodes.iter().map(|n| n.id.as_str()).collect();
    assert_eq!(ids.len(), nodes.len());
}

#[test]
fn fixture_docs_match_heading_scan() {
    let root = common::docs_dir();
    let files: Vec<(String, String)> = docstore::read_manifest(&root)
        .unwrap()
        .into_iter()
        .map(|p| {
            let stem = p.file_stem().unwrap().to_str().unwrap().to_string();
            (stem, std::fs::read_to_string(&p).unwrap())
        })
        .collect();
    let store = DocStore::ingest(&root).unwrap();
    check_against_store(&files, &store);
    assert_eq!(store.section_count(), 105);
    assert_eq!(store.chunks().len(), 86);
}

#[test]
fn store_survives_json_round_trip() {
    let store = DocStore::ingest(&common::docs_dir()).unwrap();
    let again = DocStore::from_json(&store.to_json()).unwrap();
    assert_eq!(store.to_json(), again.to_json());
    assert_eq!(again.nodes(), store.nodes());
}

#[test]
fn view_detail_and_struct_on_fixture() {
    let store = DocStore::ingest(&common::docs_dir()).unwrap();
    let detail = store.view_detail("lists/class-list/push-list-value").unwrap();
    assert!(detail.starts_with("Appends `value`"));
    assert!(store.view_detail("lists/class-vector").is_err());
    let outline = store.view_struct(None, 1).unwrap();
    assert_eq!(outline.lines().count(), 21);
    let deep = store.view_struct(Some("lists"), 3).unwrap();
    assert!(deep.contains("[lists/class-list/aliasing]"));
}

fn line_strategy() -> impl Strategy<Value = String> {
    prop_oneof![
        3 => "[a-z]{1,8}( [a-z]{1,8}){0,4}",
        1 => Just(String::new()),
        1 => Just("```".to_string()),
        1 => (1usize..=4, "[A-Za-z]{1,6}( [a-z]{1,5}){0,2}").prop_map(|(n, t)| format!("{} {t}", "#".repeat(n))),
        1 => Just("#nospace".to_string()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn random_markdown_matches_scan(
        files in prop::collection::vec(prop::collection::vec(line_strategy(), 0..25), 1..4)
    ) {
        let sources: Vec<(String, String)> = files
            .iter()
            .enumerate()
            .map(|(i, lines)| (format!("file{i}"), lines.join("\n")))
            .collect();
        let store = DocStore::from_sources(&sources);
        check_against_store(&sources, &store);
        for chunk in store.chunks() {
            prop_assert_eq!(chunk.token_estimate, chunk.text.chars().count().div_ceil(4));
        }
    }
}
