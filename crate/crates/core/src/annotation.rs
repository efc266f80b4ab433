//! Annotated documents: tokens, dependency trees and coreference chains as
//! produced by upstream NLP tooling, plus the JSON interchange format.
//!
//! Two index spaces are in play. Tokens and dependency edges use positions
//! *within their document*. Coreference mentions use a *global* sentence
//! number (sentences counted across every document of the set, in file
//! order) with token offsets inside that sentence, which is what lets one
//! chain cite mentions in several documents.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// POS tags that mark a token as punctuation when the input does not say.
pub const PUNCT_TAGS: &[&str] = &["PUNCT"];

/// The universal POS tagset. Other tags are accepted but typed as "other".
pub const UNIVERSAL_POS_TAGS: &[&str] = &[
    "ADJ", "ADP", "ADV", "AUX", "CCONJ", "DET", "INTJ", "NOUN", "NUM", "PART", "PRON", "PROPN",
    "PUNCT", "SCONJ", "SYM", "VERB", "X",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    /// Position within the document.
    pub index: usize,
    pub text: String,
    pub pos_tag: String,
    /// Sentence number within the document.
    pub sentence_id: usize,
    pub is_punct: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencyEdge {
    /// Head token (document position); `None` is the ROOT.
    pub head: Option<usize>,
    pub dependent: usize,
    pub relation: String,
}

/// A mention: global sentence number plus inclusive token offsets within
/// that sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Mention {
    pub sentence: usize,
    pub start: usize,
    pub end: usize,
}

impl Mention {
    pub fn new(sentence: usize, start: usize, end: usize) -> Self {
        Mention {
            sentence,
            start,
            end,
        }
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoreferenceChain {
    pub mentions: Vec<Mention>,
}

impl CoreferenceChain {
    pub fn new(mentions: Vec<Mention>) -> Self {
        CoreferenceChain { mentions }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedDocument {
    pub doc_id: String,
    pub tokens: Vec<Token>,
    pub dependency_edges: Vec<DependencyEdge>,
    pub coref_chains: Vec<CoreferenceChain>,
}

impl AnnotatedDocument {
    pub fn sentence_count(&self) -> usize {
        self.tokens.last().map_or(0, |t| t.sentence_id + 1)
    }

    /// Token ranges of each sentence, in order.
    pub fn sentence_ranges(&self) -> Vec<Range<usize>> {
        let mut ranges: Vec<Range<usize>> = Vec::with_capacity(self.sentence_count());
        for (i, tok) in self.tokens.iter().enumerate() {
            match ranges.get_mut(tok.sentence_id) {
                Some(r) => r.end = i + 1,
                None => ranges.push(i..i + 1),
            }
        }
        ranges
    }
}

/// One sentence of a [`DocumentSet`], located in every index space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SentenceRef {
    pub global_id: usize,
    pub doc: usize,
    pub local_id: usize,
    /// First token, as a document position.
    pub doc_token_start: usize,
    /// First token, as a position in the concatenation of all documents.
    pub global_token_start: usize,
    pub len: usize,
}

/// A validated, ordered collection of documents. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DocumentSet {
    documents: Vec<AnnotatedDocument>,
    sentences: Vec<SentenceRef>,
}

impl DocumentSet {
    /// Validates every invariant and canonicalises edge order (grouped by
    /// sentence, stable within a sentence).
    pub fn new(mut documents: Vec<AnnotatedDocument>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, doc) in documents.iter().enumerate() {
            if !seen.insert(doc.doc_id.clone()) {
                return Err(Error::validation(
                    &doc.doc_id,
                    "duplicate doc_id",
                    i,
                    "doc_ids must be unique within a document set",
                ));
            }
            validate_tokens(doc)?;
            validate_trees(doc)?;
        }
        for doc in &mut documents {
            let sentence_of: Vec<usize> = doc.tokens.iter().map(|t| t.sentence_id).collect();
            doc.dependency_edges
                .sort_by_key(|e| sentence_of[e.dependent]);
        }
        let sentences = index_sentences(&documents);
        for doc in &documents {
            validate_chains(doc, &sentences)?;
        }
        Ok(DocumentSet {
            documents,
            sentences,
        })
    }

    pub fn empty() -> Self {
        DocumentSet::default()
    }

    pub fn documents(&self) -> &[AnnotatedDocument] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn sentences(&self) -> &[SentenceRef] {
        &self.sentences
    }

    pub fn token_count(&self) -> usize {
        self.documents.iter().map(|d| d.tokens.len()).sum()
    }

    /// Tokens of a sentence.
    pub fn sentence_tokens(&self, s: &SentenceRef) -> &[Token] {
        &self.documents[s.doc].tokens[s.doc_token_start..s.doc_token_start + s.len]
    }

    /// Every chain of every document, in document order.
    pub fn all_chains(&self) -> Vec<CoreferenceChain> {
        self.documents
            .iter()
            .flat_map(|d| d.coref_chains.iter().cloned())
            .collect()
    }

    /// Document `i` on its own. Mentions are renumbered so its first
    /// sentence is sentence 0; chains keep only mentions inside the
    /// document and are dropped below two mentions.
    pub fn document_set(&self, i: usize) -> Result<DocumentSet> {
        let doc = self.documents.get(i).ok_or_else(|| {
            Error::InvalidArgument(format!("document {i} out of range 0..{}", self.len()))
        })?;
        let first = self.sentences.iter().position(|s| s.doc == i).unwrap_or(0);
        let count = doc.sentence_count();
        let coref_chains = self
            .all_chains()
            .into_iter()
            .map(|c| CoreferenceChain {
                mentions: c
                    .mentions
                    .into_iter()
                    .filter(|m| (first..first + count).contains(&m.sentence))
                    .map(|m| Mention::new(m.sentence - first, m.start, m.end))
                    .collect(),
            })
            .filter(|c| c.mentions.len() >= 2)
            .collect();
        DocumentSet::new(vec![AnnotatedDocument {
            coref_chains,
            ..doc.clone()
        }])
    }

    /// A set holding only the first `n` sentences of a single-document set
    /// view, with chains restricted to mentions that survive the cut.
    pub fn truncate_sentences(&self, n: usize) -> Result<DocumentSet> {
        let mut docs = Vec::new();
        let mut remaining = n;
        for doc in &self.documents {
            if remaining == 0 {
                break;
            }
            let ranges = doc.sentence_ranges();
            let keep = remaining.min(ranges.len());
            remaining -= keep;
            let cut = ranges.get(keep.wrapping_sub(1)).map_or(0, |r| r.end);
            let tokens = doc.tokens[..cut].to_vec();
            let dependency_edges = doc
                .dependency_edges
                .iter()
                .filter(|e| e.dependent < cut)
                .cloned()
                .collect();
            docs.push(AnnotatedDocument {
                doc_id: doc.doc_id.clone(),
                tokens,
                dependency_edges,
                coref_chains: Vec::new(),
            });
        }
        let kept_sentences = n.min(self.sentences.len());
        for (d, doc) in self.documents.iter().enumerate().take(docs.len()) {
            docs[d].coref_chains = doc
                .coref_chains
                .iter()
                .map(|c| CoreferenceChain {
                    mentions: c
                        .mentions
                        .iter()
                        .copied()
                        .filter(|m| m.sentence < kept_sentences)
                        .collect(),
                })
                .filter(|c| c.mentions.len() >= 2)
                .collect();
        }
        DocumentSet::new(docs)
    }
}

fn index_sentences(documents: &[AnnotatedDocument]) -> Vec<SentenceRef> {
    let mut out = Vec::new();
    let mut global_token = 0;
    for (d, doc) in documents.iter().enumerate() {
        for (local_id, r) in doc.sentence_ranges().into_iter().enumerate() {
            out.push(SentenceRef {
                global_id: out.len(),
                doc: d,
                local_id,
                doc_token_start: r.start,
                global_token_start: global_token + r.start,
                len: r.len(),
            });
        }
        global_token += doc.tokens.len();
    }
    out
}

fn validate_tokens(doc: &AnnotatedDocument) -> Result<()> {
    let mut expected_sentence = 0;
    for (i, tok) in doc.tokens.iter().enumerate() {
        if tok.index != i {
            return Err(Error::validation(
                &doc.doc_id,
                "token index",
                i,
                format!("token at position {i} carries index {}", tok.index),
            ));
        }
        if i == 0 {
            if tok.sentence_id != 0 {
                return Err(Error::validation(
                    &doc.doc_id,
                    "sentence order",
                    i,
                    "first token must belong to sentence 0",
                ));
            }
        } else if tok.sentence_id != expected_sentence && tok.sentence_id != expected_sentence + 1 {
            return Err(Error::validation(
                &doc.doc_id,
                "sentence order",
                i,
                format!(
                    "sentence_id jumps from {expected_sentence} to {}",
                    tok.sentence_id
                ),
            ));
        }
        expected_sentence = tok.sentence_id;
    }
    Ok(())
}

fn validate_trees(doc: &AnnotatedDocument) -> Result<()> {
    let n = doc.tokens.len();
    let mut head: Vec<Option<Option<usize>>> = vec![None; n];
    for (e_idx, e) in doc.dependency_edges.iter().enumerate() {
        if e.dependent >= n {
            return Err(Error::validation(
                &doc.doc_id,
                "index out of range",
                e_idx,
                format!("dependent {} outside {n} tokens", e.dependent),
            ));
        }
        if let Some(h) = e.head {
            if h >= n {
                return Err(Error::validation(
                    &doc.doc_id,
                    "index out of range",
                    e_idx,
                    format!("head {h} outside {n} tokens"),
                ));
            }
            if doc.tokens[h].sentence_id != doc.tokens[e.dependent].sentence_id {
                return Err(Error::validation(
                    &doc.doc_id,
                    "cross-sentence edge",
                    e_idx,
                    format!(
                        "head {h} and dependent {} lie in different sentences",
                        e.dependent
                    ),
                ));
            }
            if h == e.dependent {
                return Err(Error::validation(
                    &doc.doc_id,
                    "tree violation",
                    e_idx,
                    format!("token {h} heads itself"),
                ));
            }
        }
        if head[e.dependent].is_some() {
            return Err(Error::validation(
                &doc.doc_id,
                "head count",
                e.dependent,
                "token has more than one head",
            ));
        }
        head[e.dependent] = Some(e.head);
    }
    if let Some(i) = head.iter().position(Option::is_none) {
        return Err(Error::validation(
            &doc.doc_id,
            "head count",
            i,
            "token is not covered by its sentence tree",
        ));
    }
    let head: Vec<Option<usize>> = head.into_iter().map(Option::unwrap).collect();

    for (s, r) in doc.sentence_ranges().into_iter().enumerate() {
        let roots = r.clone().filter(|&i| head[i].is_none()).count();
        if roots != 1 {
            return Err(Error::validation(
                &doc.doc_id,
                "root count",
                s,
                format!("sentence has {roots} ROOT-headed tokens, expected 1"),
            ));
        }
    }
    // Every token must reach ROOT by following heads; anything else is a cycle.
    let mut reaches_root = vec![false; n];
    for start in 0..n {
        let mut path = Vec::new();
        let mut cur = start;
        loop {
            if reaches_root[cur] {
                break;
            }
            if path.len() > n {
                return Err(Error::validation(
                    &doc.doc_id,
                    "tree violation",
                    start,
                    "dependency edges contain a cycle",
                ));
            }
            path.push(cur);
            match head[cur] {
                None => break,
                Some(h) => cur = h,
            }
        }
        for p in path {
            reaches_root[p] = true;
        }
    }
    Ok(())
}

fn validate_chains(doc: &AnnotatedDocument, sentences: &[SentenceRef]) -> Result<()> {
    for (c_idx, chain) in doc.coref_chains.iter().enumerate() {
        if chain.mentions.len() < 2 {
            return Err(Error::validation(
                &doc.doc_id,
                "chain size",
                c_idx,
                format!(
                    "chain has {} mention(s), expected at least 2",
                    chain.mentions.len()
                ),
            ));
        }
        for m in &chain.mentions {
            if m.is_empty() {
                return Err(Error::validation(
                    &doc.doc_id,
                    "empty span",
                    c_idx,
                    format!("mention {m:?} has end before start"),
                ));
            }
            let Some(s) = sentences.get(m.sentence) else {
                return Err(Error::validation(
                    &doc.doc_id,
                    "mention bounds",
                    c_idx,
                    format!(
                        "mention cites sentence {} of {}",
                        m.sentence,
                        sentences.len()
                    ),
                ));
            };
            if m.end >= s.len {
                return Err(Error::validation(
                    &doc.doc_id,
                    "mention bounds",
                    c_idx,
                    format!("mention {m:?} exceeds sentence length {}", s.len),
                ));
            }
        }
    }
    Ok(())
}

/// Unions every pair of chains that share an identical mention span.
///
/// Output chains are pairwise span-disjoint, each sorted by
/// `(sentence, start, end)` without duplicate spans, and ordered by their
/// first mention.
pub fn merge_coreference_chains(chains: &[CoreferenceChain]) -> Vec<CoreferenceChain> {
    // Chains sharing a span are neighbours; components found by BFS.
    let mut by_span: HashMap<Mention, Vec<usize>> = HashMap::new();
    for (c, chain) in chains.iter().enumerate() {
        for m in &chain.mentions {
            by_span.entry(*m).or_default().push(c);
        }
    }
    let mut visited = vec![false; chains.len()];
    let mut out = Vec::new();
    for start in 0..chains.len() {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        let mut spans = BTreeSet::new();
        while let Some(c) = queue.pop_front() {
            for m in &chains[c].mentions {
                if spans.insert(*m) {
                    for &other in &by_span[m] {
                        if !visited[other] {
                            visited[other] = true;
                            queue.push_back(other);
                        }
                    }
                }
            }
        }
        out.push(CoreferenceChain {
            mentions: spans.into_iter().collect(),
        });
    }
    out.sort_by(|a, b| a.mentions.first().cmp(&b.mentions.first()));
    out
}

// ---------------------------------------------------------------------------
// Interchange format

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileSchema {
    documents: Vec<DocSchema>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocSchema {
    doc_id: String,
    sentences: Vec<SentenceSchema>,
    #[serde(default)]
    coref_chains: Vec<Vec<Mention>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SentenceSchema {
    tokens: Vec<TokenSchema>,
    dependencies: Vec<DepSchema>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TokenSchema {
    text: String,
    pos: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    is_punct: Option<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DepSchema {
    head: i64,
    dep: i64,
    rel: String,
}

/// Parses and validates one annotation file.
pub fn parse_annotation_file(bytes: &[u8]) -> Result<DocumentSet> {
    let file: FileSchema = serde_json::from_slice(bytes).map_err(|e| Error::Parse {
        offset: byte_offset(bytes, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let mut documents = Vec::with_capacity(file.documents.len());
    for doc in file.documents {
        documents.push(doc_from_schema(doc)?);
    }
    DocumentSet::new(documents)
}

/// Serializes a set to the interchange format; `parse_annotation_file`
/// inverts it exactly.
pub fn serialize_annotation_file(ds: &DocumentSet) -> String {
    let file = FileSchema {
        documents: ds.documents.iter().map(doc_to_schema).collect(),
    };
    serde_json::to_string_pretty(&file).expect("schema types always serialize")
}

fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start = bytes
        .split_inclusive(|&b| b == b'\n')
        .take(line - 1)
        .map(<[u8]>::len)
        .sum::<usize>();
    (line_start + column.saturating_sub(1)).min(bytes.len())
}

fn doc_from_schema(doc: DocSchema) -> Result<AnnotatedDocument> {
    let mut tokens = Vec::new();
    let mut dependency_edges = Vec::new();
    for (s, sent) in doc.sentences.into_iter().enumerate() {
        if sent.tokens.is_empty() {
            return Err(Error::validation(
                &doc.doc_id,
                "empty sentence",
                s,
                "sentence has no tokens",
            ));
        }
        let base = tokens.len();
        let len = sent.tokens.len();
        for t in sent.tokens {
            let is_punct = t
                .is_punct
                .unwrap_or_else(|| PUNCT_TAGS.contains(&t.pos.as_str()));
            tokens.push(Token {
                index: tokens.len(),
                text: t.text,
                pos_tag: t.pos,
                sentence_id: s,
                is_punct,
            });
        }
        let local = |i: i64, e_idx: usize| -> Result<usize> {
            usize::try_from(i)
                .ok()
                .filter(|&i| i < len)
                .map(|i| base + i)
                .ok_or_else(|| {
                    Error::validation(
                        &doc.doc_id,
                        "index out of range",
                        e_idx,
                        format!("index {i} outside sentence {s} of length {len}"),
                    )
                })
        };
        for (e_idx, d) in sent.dependencies.into_iter().enumerate() {
            let head = if d.head == -1 {
                None
            } else {
                Some(local(d.head, e_idx)?)
            };
            dependency_edges.push(DependencyEdge {
                head,
                dependent: local(d.dep, e_idx)?,
                relation: d.rel,
            });
        }
    }
    Ok(AnnotatedDocument {
        doc_id: doc.doc_id,
        tokens,
        dependency_edges,
        coref_chains: doc
            .coref_chains
            .into_iter()
            .map(CoreferenceChain::new)
            .collect(),
    })
}

fn doc_to_schema(doc: &AnnotatedDocument) -> DocSchema {
    let ranges = doc.sentence_ranges();
    let mut sentences: Vec<SentenceSchema> = ranges
        .iter()
        .map(|r| SentenceSchema {
            tokens: doc.tokens[r.clone()]
                .iter()
                .map(|t| TokenSchema {
                    text: t.text.clone(),
                    pos: t.pos_tag.clone(),
                    is_punct: Some(t.is_punct),
                })
                .collect(),
            dependencies: Vec::new(),
        })
        .collect();
    for e in &doc.dependency_edges {
        let s = doc.tokens[e.dependent].sentence_id;
        let base = ranges[s].start;
        sentences[s].dependencies.push(DepSchema {
            head: e.head.map_or(-1, |h| (h - base) as i64),
            dep: (e.dependent - base) as i64,
            rel: e.relation.clone(),
        });
    }
    DocSchema {
        doc_id: doc.doc_id.clone(),
        sentences,
        coref_chains: doc
            .coref_chains
            .iter()
            .map(|c| c.mentions.clone())
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EINSTEIN_WON: &str = r#"{"documents":[{"doc_id":"d0","sentences":[{
        "tokens":[{"text":"Einstein","pos":"PROPN","is_punct":false},
                  {"text":"won","pos":"VERB","is_punct":false},
                  {"text":".","pos":"PUNCT","is_punct":true}],
        "dependencies":[{"head":1,"dep":0,"rel":"nsubj"},{"head":-1,"dep":1,"rel":"root"},
                        {"head":1,"dep":2,"rel":"punct"}]}]}]}"#;

    #[test]
    fn minimal_document() {
        let ds = parse_annotation_file(EINSTEIN_WON.as_bytes()).unwrap();
        assert_eq!(ds.len(), 1);
        let doc = &ds.documents()[0];
        assert_eq!(doc.tokens.len(), 3);
        assert_eq!(doc.sentence_count(), 1);
        assert_eq!(
            doc.dependency_edges
                .iter()
                .filter(|e| e.head.is_none())
                .count(),
            1
        );
        assert!(doc.tokens[2].is_punct);
    }

    #[test]
    fn empty_documents_list() {
        let ds = parse_annotation_file(br#"{"documents":[]}"#).unwrap();
        assert!(ds.is_empty());
        assert!(ds.sentences().is_empty());
    }

    #[test]
    fn two_cycle_is_tree_violation() {
        // 0 <-> 2 form a cycle while 1 is the root.
        let json = r#"{"documents":[{"doc_id":"cyc","sentences":[{
            "tokens":[{"text":"a","pos":"NOUN"},{"text":"b","pos":"VERB"},{"text":"c","pos":"NOUN"}],
            "dependencies":[{"head":2,"dep":0,"rel":"x"},{"head":-1,"dep":1,"rel":"root"},
                            {"head":0,"dep":2,"rel":"x"}]}]}]}"#;
        match parse_annotation_file(json.as_bytes()) {
            Err(Error::Validation { doc_id, rule, .. }) => {
                assert_eq!(doc_id, "cyc");
                assert_eq!(rule, "tree violation");
            }
            other => panic!("expected tree violation, got {other:?}"),
        }
    }

    #[test]
    fn malformed_json_reports_offset() {
        let bad = b"{\"documents\": [\n  {\"doc_id\": }\n]}";
        match parse_annotation_file(bad) {
            Err(Error::Parse { offset, .. }) => assert_eq!(bad[offset], b'}'),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn punctuation_defaults_from_pos_tag() {
        let json = r#"{"documents":[{"doc_id":"p","sentences":[{
            "tokens":[{"text":"Hi","pos":"INTJ"},{"text":"!","pos":"PUNCT"},{"text":"--","pos":"SYM","is_punct":true}],
            "dependencies":[{"head":-1,"dep":0,"rel":"root"},{"head":0,"dep":1,"rel":"punct"},{"head":0,"dep":2,"rel":"punct"}]}]}]}"#;
        let ds = parse_annotation_file(json.as_bytes()).unwrap();
        let flags: Vec<bool> = ds.documents()[0]
            .tokens
            .iter()
            .map(|t| t.is_punct)
            .collect();
        assert_eq!(flags, vec![false, true, true]);
    }

    #[test]
    fn rejects_bad_structure() {
        let two_roots = r#"{"documents":[{"doc_id":"r","sentences":[{
            "tokens":[{"text":"a","pos":"NOUN"},{"text":"b","pos":"VERB"}],
            "dependencies":[{"head":-1,"dep":0,"rel":"root"},{"head":-1,"dep":1,"rel":"root"}]}]}]}"#;
        assert!(matches!(
            parse_annotation_file(two_roots.as_bytes()),
            Err(Error::Validation {
                rule: "root count",
                ..
            })
        ));
        let uncovered = r#"{"documents":[{"doc_id":"u","sentences":[{
            "tokens":[{"text":"a","pos":"NOUN"},{"text":"b","pos":"VERB"}],
            "dependencies":[{"head":-1,"dep":1,"rel":"root"}]}]}]}"#;
        assert!(matches!(
            parse_annotation_file(uncovered.as_bytes()),
            Err(Error::Validation {
                rule: "head count",
                index: 0,
                ..
            })
        ));
        let short_chain = r#"{"documents":[{"doc_id":"c","sentences":[{
            "tokens":[{"text":"a","pos":"NOUN"}],
            "dependencies":[{"head":-1,"dep":0,"rel":"root"}]}],
            "coref_chains":[[{"sentence":0,"start":0,"end":0}]]}]}"#;
        assert!(matches!(
            parse_annotation_file(short_chain.as_bytes()),
            Err(Error::Validation {
                rule: "chain size",
                ..
            })
        ));
        let oob = r#"{"documents":[{"doc_id":"c","sentences":[{
            "tokens":[{"text":"a","pos":"NOUN"}],
            "dependencies":[{"head":-1,"dep":0,"rel":"root"}]}],
            "coref_chains":[[{"sentence":0,"start":0,"end":0},{"sentence":3,"start":0,"end":0}]]}]}"#;
        assert!(matches!(
            parse_annotation_file(oob.as_bytes()),
            Err(Error::Validation {
                rule: "mention bounds",
                ..
            })
        ));
        let dup = r#"{"documents":[{"doc_id":"x","sentences":[]},{"doc_id":"x","sentences":[]}]}"#;
        assert!(matches!(
            parse_annotation_file(dup.as_bytes()),
            Err(Error::Validation {
                rule: "duplicate doc_id",
                index: 1,
                ..
            })
        ));
    }

    #[test]
    fn cross_document_chain_uses_global_sentences() {
        let json = r#"{"documents":[
          {"doc_id":"a","sentences":[{"tokens":[{"text":"Ann","pos":"PROPN"}],
            "dependencies":[{"head":-1,"dep":0,"rel":"root"}]}],
           "coref_chains":[[{"sentence":0,"start":0,"end":0},{"sentence":1,"start":1,"end":1}]]},
          {"doc_id":"b","sentences":[{"tokens":[{"text":"Hi","pos":"INTJ"},{"text":"she","pos":"PRON"}],
            "dependencies":[{"head":-1,"dep":0,"rel":"root"},{"head":0,"dep":1,"rel":"vocative"}]}]}]}"#;
        let ds = parse_annotation_file(json.as_bytes()).unwrap();
        assert_eq!(ds.sentences().len(), 2);
        assert_eq!(ds.sentences()[1].global_token_start, 1);
        assert_eq!(ds.sentences()[1].doc, 1);
    }

    #[test]
    fn transitive_chain_union() {
        let s = |i| Mention::new(i, 0, 0);
        let merged = merge_coreference_chains(&[
            CoreferenceChain::new(vec![s(1), s(2)]),
            CoreferenceChain::new(vec![s(2), s(3)]),
        ]);
        assert_eq!(merged, vec![CoreferenceChain::new(vec![s(1), s(2), s(3)])]);
    }

    #[test]
    fn disjoint_chains_unchanged() {
        let s = |i| Mention::new(i, 0, 1);
        let chains = vec![
            CoreferenceChain::new(vec![s(0), s(4)]),
            CoreferenceChain::new(vec![s(1), s(2)]),
        ];
        assert_eq!(merge_coreference_chains(&chains), chains);
    }

    #[test]
    fn truncation_keeps_surviving_mentions() {
        let json = r#"{"documents":[{"doc_id":"t","sentences":[
            {"tokens":[{"text":"Ann","pos":"PROPN"}],"dependencies":[{"head":-1,"dep":0,"rel":"root"}]},
            {"tokens":[{"text":"she","pos":"PRON"}],"dependencies":[{"head":-1,"dep":0,"rel":"root"}]},
            {"tokens":[{"text":"her","pos":"PRON"}],"dependencies":[{"head":-1,"dep":0,"rel":"root"}]}],
            "coref_chains":[[{"sentence":0,"start":0,"end":0},{"sentence":1,"start":0,"end":0},{"sentence":2,"start":0,"end":0}]]}]}"#;
        let ds = parse_annotation_file(json.as_bytes()).unwrap();
        let two = ds.truncate_sentences(2).unwrap();
        assert_eq!(two.token_count(), 2);
        assert_eq!(two.documents()[0].coref_chains[0].mentions.len(), 2);
        let one = ds.truncate_sentences(1).unwrap();
        assert!(one.documents()[0].coref_chains.is_empty());
    }

    #[test]
    fn document_set_renumbers_mentions() {
        let json = r#"{"documents":[
          {"doc_id":"a","sentences":[{"tokens":[{"text":"Ann","pos":"PROPN"}],
            "dependencies":[{"head":-1,"dep":0,"rel":"root"}]}]},
          {"doc_id":"b","sentences":[
            {"tokens":[{"text":"Bo","pos":"PROPN"}],"dependencies":[{"head":-1,"dep":0,"rel":"root"}]},
            {"tokens":[{"text":"he","pos":"PRON"}],"dependencies":[{"head":-1,"dep":0,"rel":"root"}]}],
           "coref_chains":[[{"sentence":1,"start":0,"end":0},{"sentence":2,"start":0,"end":0}],
                           [{"sentence":0,"start":0,"end":0},{"sentence":2,"start":0,"end":0}]]}]}"#;
        let ds = parse_annotation_file(json.as_bytes()).unwrap();
        let b = ds.document_set(1).unwrap();
        assert_eq!(
            b.documents()[0].coref_chains,
            vec![CoreferenceChain::new(vec![
                Mention::new(0, 0, 0),
                Mention::new(1, 0, 0)
            ])]
        );
        assert!(ds.document_set(0).unwrap().documents()[0]
            .coref_chains
            .is_empty());
        assert!(ds.document_set(2).is_err());
    }
}
