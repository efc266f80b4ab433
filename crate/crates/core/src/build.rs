//! Construction of the unified semantic graph from annotated documents.
//!
//! Each sentence goes through the same pipeline: node typing, punctuation
//! pruning, collapsing coreference mentions into units, then depth-first
//! phrase merging. The per-sentence phrases are finally reduced into one
//! graph by merging identical noun phrases and co-referent phrases.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use rayon::prelude::*;

use crate::annotation::{
    merge_coreference_chains, CoreferenceChain, DocumentSet, Mention, SentenceRef,
};
use crate::graph::{EdgeKind, GraphEdge, GraphNode, NodeType, Phrase, SemanticGraph, TokenSpan};

/// Dependency relations whose dependent is folded into its head's phrase.
/// Subtypes match on their base name, so `aux:pass` matches `aux` but
/// `nmod:poss` does not match anything.
pub const MERGEABLE_RELATIONS: &[&str] = &[
    "det",        // determiner
    "amod",       // adjectival modifier
    "compound",   // compound (incl. compound:prt particles)
    "nummod",     // numeric modifier
    "possessive", // possessive marker ('s), pre-UD label
    "flat",       // flat multiword names
    "fixed",      // fixed multiword expressions
    "mwe",
    "case", // case marker
    "prt",  // particle, pre-UD label
    "aux",
    "auxpass",
    "cop",
    "neg",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeRules {
    relations: BTreeSet<String>,
}

impl MergeRules {
    pub fn new<I, S>(relations: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        MergeRules {
            relations: relations.into_iter().map(Into::into).collect(),
        }
    }

    pub fn is_mergeable(&self, relation: &str) -> bool {
        let base = relation.split(':').next().unwrap_or(relation);
        self.relations.contains(relation) || self.relations.contains(base)
    }
}

impl Default for MergeRules {
    fn default() -> Self {
        MergeRules::new(MERGEABLE_RELATIONS.iter().copied())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagnosticKind {
    UnknownPosTag,
    CrossingMention,
    NestedMention,
    PrunedMention,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    /// Global sentence number.
    pub sentence: usize,
    pub message: String,
}

/// Maps a universal POS tag to a node type; `None` for tags outside the
/// universal tagset.
pub fn node_type_for_pos(pos: &str) -> Option<NodeType> {
    match pos {
        "NOUN" | "PROPN" | "PRON" => Some(NodeType::N),
        "VERB" | "AUX" => Some(NodeType::V),
        p if crate::annotation::UNIVERSAL_POS_TAGS.contains(&p) => Some(NodeType::O),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeToken {
    pub text: String,
    pub pos: String,
    pub is_punct: bool,
    pub node_type: NodeType,
    /// Cleared by punctuation pruning.
    pub alive: bool,
}

/// One sentence's dependency tree in local token indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceTree {
    /// Global sentence number.
    pub sentence: usize,
    /// Global position of the first token.
    pub offset: usize,
    pub tokens: Vec<TreeToken>,
    /// Local head of each token; `None` for roots (and, after pruning, for
    /// tokens whose head was removed).
    pub heads: Vec<Option<usize>>,
    pub relations: Vec<String>,
}

impl SentenceTree {
    pub fn from_sentence(ds: &DocumentSet, s: &SentenceRef) -> Self {
        let doc = &ds.documents()[s.doc];
        let range = s.doc_token_start..s.doc_token_start + s.len;
        let mut heads = vec![None; s.len];
        let mut relations = vec![String::new(); s.len];
        for e in &doc.dependency_edges {
            if range.contains(&e.dependent) {
                let d = e.dependent - s.doc_token_start;
                heads[d] = e.head.map(|h| h - s.doc_token_start);
                relations[d] = e.relation.clone();
            }
        }
        let tokens = ds
            .sentence_tokens(s)
            .iter()
            .map(|t| TreeToken {
                text: t.text.clone(),
                pos: t.pos_tag.clone(),
                is_punct: t.is_punct,
                node_type: NodeType::O,
                alive: true,
            })
            .collect();
        SentenceTree {
            sentence: s.global_id,
            offset: s.global_token_start,
            tokens,
            heads,
            relations,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn alive_count(&self) -> usize {
        self.tokens.iter().filter(|t| t.alive).count()
    }

    /// Edges `(head, dependent)` between live tokens.
    pub fn live_edges(&self) -> Vec<(usize, usize)> {
        self.heads
            .iter()
            .enumerate()
            .filter_map(|(d, h)| h.map(|h| (h, d)))
            .filter(|&(h, d)| self.tokens[h].alive && self.tokens[d].alive)
            .collect()
    }

    fn depths(&self) -> Vec<usize> {
        let mut depth = vec![usize::MAX; self.len()];
        for start in 0..self.len() {
            let mut path = vec![start];
            let mut cur = start;
            while depth[cur] == usize::MAX {
                match self.heads[cur] {
                    Some(h) if path.len() <= self.len() => {
                        path.push(h);
                        cur = h;
                    }
                    _ => {
                        depth[cur] = 0;
                        break;
                    }
                }
            }
            let mut d = depth[cur];
            for &t in path.iter().rev().skip(1) {
                d += 1;
                depth[t] = d;
            }
        }
        depth
    }
}

/// Attaches a node type to every token from its POS tag. Unknown tags are
/// typed `O` and reported.
pub fn identify_node_types(tree: &mut SentenceTree) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    for (i, tok) in tree.tokens.iter_mut().enumerate() {
        tok.node_type = node_type_for_pos(&tok.pos).unwrap_or_else(|| {
            diags.push(Diagnostic {
                kind: DiagnosticKind::UnknownPosTag,
                sentence: tree.sentence,
                message: format!("token {i} {:?} has unknown POS tag {:?}", tok.text, tok.pos),
            });
            NodeType::O
        });
    }
    diags
}

/// Removes punctuation tokens and their edges. Children of a removed token
/// become roots, so the result may be a forest.
pub fn prune_punctuation(mut tree: SentenceTree) -> SentenceTree {
    for tok in &mut tree.tokens {
        if tok.is_punct {
            tok.alive = false;
        }
    }
    for d in 0..tree.len() {
        let cut = !tree.tokens[d].alive || tree.heads[d].is_some_and(|h| !tree.tokens[h].alive);
        if cut {
            tree.heads[d] = None;
        }
    }
    tree
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Unit {
    /// Local token indices, ascending; live tokens only.
    pub tokens: Vec<usize>,
    pub head: usize,
    /// The coreference mention this unit was collapsed from.
    pub mention: Option<Mention>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitEdge {
    pub head: usize,
    pub dependent: usize,
    pub relation: String,
}

/// A sentence tree whose coreference mentions have been contracted into
/// single units. Every live token belongs to exactly one unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitTree {
    pub sentence: usize,
    pub offset: usize,
    pub tokens: Vec<TreeToken>,
    pub unit_of: Vec<Option<usize>>,
    /// Ordered by first token.
    pub units: Vec<Unit>,
    /// Deduplicated `(head unit, dependent unit)` edges, first relation
    /// label kept.
    pub edges: Vec<UnitEdge>,
}

/// Collapses each chain mention located in this sentence into one unit.
///
/// Mentions are taken in `(start, longest first)` order; one that overlaps
/// an already collapsed mention is skipped with a diagnostic, whether it
/// crosses the earlier span or nests inside it.
pub fn merge_coref_phrases(
    tree: &SentenceTree,
    chains: &[CoreferenceChain],
) -> (UnitTree, Vec<Diagnostic>) {
    let mut diags = Vec::new();
    let mut mentions: Vec<Mention> = chains
        .iter()
        .flat_map(|c| c.mentions.iter().copied())
        .filter(|m| m.sentence == tree.sentence && m.end < tree.len())
        .collect();
    mentions.sort_by_key(|m| (m.start, std::cmp::Reverse(m.end)));
    mentions.dedup();

    let mut accepted: Vec<(Mention, Vec<usize>)> = Vec::new();
    for m in mentions {
        if let Some((prev, _)) = accepted
            .iter()
            .find(|(a, _)| m.start <= a.end && a.start <= m.end)
        {
            let nested = prev.start <= m.start && m.end <= prev.end;
            diags.push(Diagnostic {
                kind: if nested {
                    DiagnosticKind::NestedMention
                } else {
                    DiagnosticKind::CrossingMention
                },
                sentence: tree.sentence,
                message: format!(
                    "mention {}..={} overlaps collapsed mention {}..={}; skipped",
                    m.start, m.end, prev.start, prev.end
                ),
            });
            continue;
        }
        let live: Vec<usize> = (m.start..=m.end)
            .filter(|&t| tree.tokens[t].alive)
            .collect();
        if live.is_empty() {
            diags.push(Diagnostic {
                kind: DiagnosticKind::PrunedMention,
                sentence: tree.sentence,
                message: format!(
                    "mention {}..={} holds only punctuation; skipped",
                    m.start, m.end
                ),
            });
            continue;
        }
        accepted.push((m, live));
    }

    let depth = tree.depths();
    let mut unit_of = vec![None; tree.len()];
    let mut units: Vec<Unit> = Vec::new();
    for (m, live) in accepted {
        let head = *live
            .iter()
            .filter(|&&t| tree.heads[t].is_none_or(|h| !live.contains(&h)))
            .min_by_key(|&&t| (depth[t], t))
            .expect("a finite token set always has a topmost member");
        for &t in &live {
            unit_of[t] = Some(units.len());
        }
        units.push(Unit {
            tokens: live,
            head,
            mention: Some(m),
        });
    }
    for (t, slot) in unit_of.iter_mut().enumerate() {
        if tree.tokens[t].alive && slot.is_none() {
            *slot = Some(units.len());
            units.push(Unit {
                tokens: vec![t],
                head: t,
                mention: None,
            });
        }
    }
    // Renumber units by first token.
    let mut order: Vec<usize> = (0..units.len()).collect();
    order.sort_by_key(|&u| units[u].tokens[0]);
    let mut rank = vec![0; units.len()];
    for (new, &old) in order.iter().enumerate() {
        rank[old] = new;
    }
    let unit_of: Vec<Option<usize>> = unit_of.into_iter().map(|u| u.map(|u| rank[u])).collect();
    let mut units: Vec<Option<Unit>> = units.into_iter().map(Some).collect();
    let units: Vec<Unit> = order.iter().map(|&u| units[u].take().unwrap()).collect();

    let mut edges: Vec<UnitEdge> = Vec::new();
    let mut seen = BTreeSet::new();
    for (h, d) in tree.live_edges() {
        let (hu, du) = (unit_of[h].unwrap(), unit_of[d].unwrap());
        if hu != du && seen.insert((hu, du)) {
            edges.push(UnitEdge {
                head: hu,
                dependent: du,
                relation: tree.relations[d].clone(),
            });
        }
    }
    (
        UnitTree {
            sentence: tree.sentence,
            offset: tree.offset,
            tokens: tree.tokens.clone(),
            unit_of,
            units,
            edges,
        },
        diags,
    )
}

/// A phrase together with its member tokens and the coreference mentions
/// that claim it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhraseUnit {
    pub phrase: Phrase,
    /// Global token positions, ascending.
    pub tokens: Vec<usize>,
    pub mentions: Vec<Mention>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePhrases {
    pub sentence: usize,
    /// Ordered by first token.
    pub phrases: Vec<PhraseUnit>,
    /// `(head phrase, dependent phrase, relation)`, deduplicated.
    pub edges: Vec<(usize, usize, String)>,
}

struct Groups {
    parent: Vec<usize>,
    lo: Vec<usize>,
    hi: Vec<usize>,
    count: Vec<usize>,
}

impl Groups {
    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Merges `child` into `head` if the union is one contiguous run.
    fn try_merge(&mut self, head: usize, child: usize) -> bool {
        let (h, c) = (self.find(head), self.find(child));
        if h == c {
            return false;
        }
        let lo = self.lo[h].min(self.lo[c]);
        let hi = self.hi[h].max(self.hi[c]);
        let count = self.count[h] + self.count[c];
        if hi - lo + 1 != count {
            return false;
        }
        self.parent[c] = h;
        self.lo[h] = lo;
        self.hi[h] = hi;
        self.count[h] = count;
        true
    }
}

/// Merges units into phrases by a depth-first walk over each tree: children
/// in surface order, deepest first, and at each head the nearest dependents
/// on each side before farther ones. A dependent joins its head's phrase
/// when its relation is mergeable and the result is contiguous over the
/// live tokens. Walks repeat until nothing changes.
pub fn merge_nodes(units: &UnitTree, rules: &MergeRules) -> SentencePhrases {
    let n = units.units.len();
    // Position of each live token among live tokens.
    let mut live_rank = vec![usize::MAX; units.tokens.len()];
    for (r, t) in (0..units.tokens.len())
        .filter(|&t| units.tokens[t].alive)
        .enumerate()
    {
        live_rank[t] = r;
    }
    let mut groups = Groups {
        parent: (0..n).collect(),
        lo: units.units.iter().map(|u| live_rank[u.tokens[0]]).collect(),
        hi: units
            .units
            .iter()
            .map(|u| live_rank[*u.tokens.last().unwrap()])
            .collect(),
        count: units.units.iter().map(|u| u.tokens.len()).collect(),
    };

    let mut children: Vec<Vec<(usize, &str)>> = vec![Vec::new(); n];
    let mut has_parent = vec![false; n];
    for e in &units.edges {
        children[e.head].push((e.dependent, e.relation.as_str()));
        has_parent[e.dependent] = true;
    }
    for kids in &mut children {
        kids.sort_by_key(|&(c, _)| c);
    }

    let mut changed = true;
    while changed {
        changed = false;
        let mut visited = vec![false; n];
        let roots = (0..n).filter(|&u| !has_parent[u]).chain(0..n);
        for root in roots {
            if visited[root] {
                continue;
            }
            // Iterative post-order.
            let mut stack = vec![(root, false)];
            visited[root] = true;
            while let Some((u, expanded)) = stack.pop() {
                if expanded {
                    let first = units.units[u].tokens[0];
                    let (left, right): (Vec<_>, Vec<_>) = children[u]
                        .iter()
                        .partition(|&&(c, _)| units.units[c].tokens[0] < first);
                    for &(c, rel) in left.iter().rev().chain(right.iter()) {
                        if rules.is_mergeable(rel) && groups.try_merge(u, c) {
                            changed = true;
                        }
                    }
                    continue;
                }
                stack.push((u, true));
                for &(c, _) in children[u].iter().rev() {
                    if !visited[c] {
                        visited[c] = true;
                        stack.push((c, false));
                    }
                }
            }
        }
    }

    // Each group's head is its topmost unit: the member no other member
    // points at, earliest on ties.
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for u in 0..n {
        let g = groups.find(u);
        members.entry(g).or_default().push(u);
    }
    let mut group_list: Vec<Vec<usize>> = members.into_values().collect();
    group_list.sort_by_key(|g| units.units[g[0]].tokens[0]);
    let mut phrase_of_unit = vec![0; n];
    for (p, g) in group_list.iter().enumerate() {
        for &u in g {
            phrase_of_unit[u] = p;
        }
    }

    let phrases = group_list
        .iter()
        .map(|g| {
            let head_unit = *g
                .iter()
                .find(|&&u| {
                    !units
                        .edges
                        .iter()
                        .any(|e| e.dependent == u && g.contains(&e.head))
                })
                .unwrap_or(&g[0]);
            let head_local = units.units[head_unit].head;
            let mut local: Vec<usize> = g
                .iter()
                .flat_map(|&u| units.units[u].tokens.iter().copied())
                .collect();
            local.sort_unstable();
            let head_tok = &units.tokens[head_local];
            let text = local
                .iter()
                .map(|&t| units.tokens[t].text.as_str())
                .collect::<Vec<_>>()
                .join(" ");
            let mentions = g
                .iter()
                .filter_map(|&u| units.units[u].mention)
                .filter(|m| (m.start..=m.end).contains(&head_local))
                .collect();
            PhraseUnit {
                phrase: Phrase {
                    span: TokenSpan {
                        sentence: units.sentence,
                        start: units.offset + local[0],
                        end: units.offset + local[local.len() - 1],
                    },
                    head_token: units.offset + head_local,
                    phrase_type: head_tok.node_type,
                    text,
                    pronominal: head_tok.pos == "PRON",
                },
                tokens: local.iter().map(|&t| units.offset + t).collect(),
                mentions,
            }
        })
        .collect();

    let mut edges = Vec::new();
    let mut seen = BTreeSet::new();
    for e in &units.edges {
        let (h, d) = (phrase_of_unit[e.head], phrase_of_unit[e.dependent]);
        if h != d && seen.insert((h, d)) {
            edges.push((h, d, e.relation.clone()));
        }
    }
    SentencePhrases {
        sentence: units.sentence,
        phrases,
        edges,
    }
}

/// Identity key for cross-position merging: case-folded,
/// whitespace-normalised text of noun phrases. Pronouns only merge
/// through coreference.
fn identity_key(p: &Phrase) -> Option<String> {
    (p.phrase_type == NodeType::N && !p.pronominal).then(|| {
        p.text
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ")
            .to_lowercase()
    })
}

/// Reduces per-sentence phrases into one graph. Phrases share a node when
/// they are identical noun phrases or when they are claimed by mentions of
/// one (merged) chain.
pub fn merge_phrases_across(
    sentences: &[SentencePhrases],
    chains: &[CoreferenceChain],
) -> SemanticGraph {
    let flat: Vec<&PhraseUnit> = sentences.iter().flat_map(|s| s.phrases.iter()).collect();
    let chain_of: HashMap<Mention, usize> = chains
        .iter()
        .enumerate()
        .flat_map(|(c, chain)| chain.mentions.iter().map(move |m| (*m, c)))
        .collect();

    // Bipartite phrase/key graph; keys are identity texts and chain ids.
    #[derive(Hash, PartialEq, Eq)]
    enum Key {
        Text(String),
        Chain(usize),
    }
    let mut keys_of: Vec<Vec<usize>> = vec![Vec::new(); flat.len()];
    let mut key_ids: HashMap<Key, usize> = HashMap::new();
    let mut phrases_of: Vec<Vec<usize>> = Vec::new();
    for (p, unit) in flat.iter().enumerate() {
        let keys = identity_key(&unit.phrase).map(Key::Text).into_iter().chain(
            unit.mentions
                .iter()
                .filter_map(|m| chain_of.get(m))
                .map(|&c| Key::Chain(c)),
        );
        for key in keys {
            let next = key_ids.len();
            let k = *key_ids.entry(key).or_insert(next);
            if k == phrases_of.len() {
                phrases_of.push(Vec::new());
            }
            phrases_of[k].push(p);
            keys_of[p].push(k);
        }
    }
    let mut node_of = vec![usize::MAX; flat.len()];
    let mut members: Vec<Vec<usize>> = Vec::new();
    for start in 0..flat.len() {
        if node_of[start] != usize::MAX {
            continue;
        }
        let id = members.len();
        node_of[start] = id;
        let mut component = vec![start];
        let mut queue = VecDeque::from([start]);
        while let Some(p) = queue.pop_front() {
            for &k in &keys_of[p] {
                for &q in &phrases_of[k] {
                    if node_of[q] == usize::MAX {
                        node_of[q] = id;
                        component.push(q);
                        queue.push_back(q);
                    }
                }
            }
        }
        component.sort_unstable();
        members.push(component);
    }

    let nodes: Vec<GraphNode> = members
        .iter()
        .enumerate()
        .map(|(id, ps)| {
            let phrases: Vec<Phrase> = ps.iter().map(|&p| flat[p].phrase.clone()).collect();
            GraphNode {
                id,
                node_type: majority_type(&phrases),
                canonical_text: canonical_text(&phrases),
                phrases,
            }
        })
        .collect();

    let mut edges = Vec::new();
    let mut seen = BTreeSet::new();
    let mut base = 0;
    for s in sentences {
        for (h, d, rel) in &s.edges {
            let (src, dst) = (node_of[base + h], node_of[base + d]);
            if src != dst && seen.insert((src, dst)) {
                edges.push(GraphEdge {
                    src,
                    dst,
                    kind: EdgeKind::Original,
                    relation_label: Some(rel.clone()),
                });
            }
        }
        base += s.phrases.len();
    }

    let alignment = flat
        .iter()
        .enumerate()
        .flat_map(|(p, unit)| unit.tokens.iter().map(move |&t| (t, p)))
        .map(|(t, p)| (t, node_of[p]))
        .collect();
    SemanticGraph::from_parts(nodes, edges, alignment).expect("builder output is well formed")
}

fn majority_type(phrases: &[Phrase]) -> NodeType {
    let count = |t| phrases.iter().filter(|p| p.phrase_type == t).count();
    // Ties resolve toward the earlier entry: N, then V, then O.
    [NodeType::N, NodeType::V, NodeType::O]
        .into_iter()
        .rev()
        .max_by_key(|&t| count(t))
        .unwrap()
}

fn canonical_text(phrases: &[Phrase]) -> String {
    let pick = |pool: Vec<&Phrase>| {
        pool.into_iter()
            .rev()
            .max_by_key(|p| (p.span.end - p.span.start, p.text.len()))
            .map(|p| p.text.clone())
    };
    pick(phrases.iter().filter(|p| !p.pronominal).collect())
        .or_else(|| pick(phrases.iter().collect()))
        .unwrap_or_default()
}

#[derive(Debug, Clone)]
pub struct BuildOutput {
    pub graph: SemanticGraph,
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Clone, Default)]
pub struct GraphBuilder {
    pub rules: MergeRules,
}

impl GraphBuilder {
    pub fn new(rules: MergeRules) -> Self {
        GraphBuilder { rules }
    }

    /// Per-sentence phrases plus the merged chains, before the cross-sentence
    /// reduction.
    pub fn sentence_phrases(
        &self,
        ds: &DocumentSet,
    ) -> (Vec<SentencePhrases>, Vec<CoreferenceChain>, Vec<Diagnostic>) {
        let chains = merge_coreference_chains(&ds.all_chains());
        let per_sentence: Vec<(SentencePhrases, Vec<Diagnostic>)> = ds
            .sentences()
            .par_iter()
            .map(|s| {
                let mut tree = SentenceTree::from_sentence(ds, s);
                let mut diags = identify_node_types(&mut tree);
                let tree = prune_punctuation(tree);
                let (units, coref_diags) = merge_coref_phrases(&tree, &chains);
                diags.extend(coref_diags);
                (merge_nodes(&units, &self.rules), diags)
            })
            .collect();
        let mut diagnostics = Vec::new();
        let mut sentences = Vec::with_capacity(per_sentence.len());
        for (s, d) in per_sentence {
            sentences.push(s);
            diagnostics.extend(d);
        }
        (sentences, chains, diagnostics)
    }

    pub fn build(&self, ds: &DocumentSet) -> BuildOutput {
        let (sentences, chains, diagnostics) = self.sentence_phrases(ds);
        BuildOutput {
            graph: merge_phrases_across(&sentences, &chains),
            diagnostics,
        }
    }
}

/// Builds the graph with the default merge rules, logging diagnostics.
pub fn build_graph(ds: &DocumentSet) -> SemanticGraph {
    let out = GraphBuilder::default().build(ds);
    for d in &out.diagnostics {
        log::warn!("sentence {}: {}", d.sentence, d.message);
    }
    out.graph
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::{AnnotatedDocument, DependencyEdge, Token};

    /// One-sentence document from `(text, pos, head, rel)` rows; head -1 is ROOT.
    fn sentence_doc(
        rows: &[(&str, &str, i64, &str)],
        chains: Vec<CoreferenceChain>,
    ) -> DocumentSet {
        let tokens = rows
            .iter()
            .enumerate()
            .map(|(i, (text, pos, _, _))| Token {
                index: i,
                text: text.to_string(),
                pos_tag: pos.to_string(),
                sentence_id: 0,
                is_punct: *pos == "PUNCT",
            })
            .collect();
        let dependency_edges = rows
            .iter()
            .enumerate()
            .map(|(i, (_, _, head, rel))| DependencyEdge {
                head: (*head >= 0).then_some(*head as usize),
                dependent: i,
                relation: rel.to_string(),
            })
            .collect();
        DocumentSet::new(vec![AnnotatedDocument {
            doc_id: "s".into(),
            tokens,
            dependency_edges,
            coref_chains: chains,
        }])
        .unwrap()
    }

    fn tree_of(ds: &DocumentSet) -> SentenceTree {
        let mut t = SentenceTree::from_sentence(ds, &ds.sentences()[0]);
        identify_node_types(&mut t);
        t
    }

    #[test]
    fn node_types_from_pos() {
        let ds = sentence_doc(
            &[
                ("Einstein", "PROPN", 1, "nsubj"),
                ("won", "VERB", -1, "root"),
                ("quickly", "ADV", 1, "advmod"),
                ("blorp", "XYZ", 1, "dep"),
            ],
            vec![],
        );
        let mut t = SentenceTree::from_sentence(&ds, &ds.sentences()[0]);
        let diags = identify_node_types(&mut t);
        let types: Vec<NodeType> = t.tokens.iter().map(|t| t.node_type).collect();
        assert_eq!(
            types,
            vec![NodeType::N, NodeType::V, NodeType::O, NodeType::O]
        );
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].kind, DiagnosticKind::UnknownPosTag);
    }

    #[test]
    fn pruning_single_punct() {
        let ds = sentence_doc(
            &[
                ("Einstein", "PROPN", 1, "nsubj"),
                ("won", "VERB", -1, "root"),
                (".", "PUNCT", 1, "punct"),
            ],
            vec![],
        );
        let t = prune_punctuation(tree_of(&ds));
        assert_eq!(t.alive_count(), 2);
        assert_eq!(t.live_edges(), vec![(1, 0)]);
    }

    #[test]
    fn pruning_all_punct_leaves_empty_tree() {
        let ds = sentence_doc(
            &[("!", "PUNCT", -1, "root"), ("?", "PUNCT", 0, "punct")],
            vec![],
        );
        let t = prune_punctuation(tree_of(&ds));
        assert_eq!(t.alive_count(), 0);
        assert!(t.live_edges().is_empty());
        let (units, _) = merge_coref_phrases(&t, &[]);
        let phrases = merge_nodes(&units, &MergeRules::default());
        assert!(phrases.phrases.is_empty());
    }

    #[test]
    fn two_token_mention_collapses() {
        let chain = CoreferenceChain::new(vec![Mention::new(0, 0, 1), Mention::new(0, 3, 3)]);
        let ds = sentence_doc(
            &[
                ("Albert", "PROPN", 1, "compound"),
                ("Einstein", "PROPN", 2, "nsubj"),
                ("won", "VERB", -1, "root"),
                ("himself", "PRON", 2, "obj"),
            ],
            vec![chain.clone()],
        );
        let t = prune_punctuation(tree_of(&ds));
        let (units, diags) = merge_coref_phrases(&t, &[chain]);
        assert!(diags.is_empty());
        assert_eq!(units.units.len(), 3);
        assert_eq!(units.units[0].tokens, vec![0, 1]);
        assert_eq!(units.units[0].head, 1);
        // compound edge Albert<-Einstein is internal and gone
        assert_eq!(units.edges.len(), 2);
        assert!(units.edges.iter().all(|e| e.head == 1));
    }

    #[test]
    fn single_token_mention_is_its_token() {
        let chain = CoreferenceChain::new(vec![Mention::new(0, 0, 0), Mention::new(0, 2, 2)]);
        let ds = sentence_doc(
            &[
                ("his", "PRON", 1, "nmod:poss"),
                ("cat", "NOUN", -1, "root"),
                ("him", "PRON", 1, "dep"),
            ],
            vec![chain.clone()],
        );
        let t = prune_punctuation(tree_of(&ds));
        let (units, _) = merge_coref_phrases(&t, &[chain]);
        assert_eq!(units.units[0].tokens, vec![0]);
        assert_eq!(units.units[0].mention, Some(Mention::new(0, 0, 0)));
    }

    #[test]
    fn crossing_and_nested_mentions_are_skipped() {
        let chains = vec![
            CoreferenceChain::new(vec![Mention::new(0, 0, 2), Mention::new(0, 4, 4)]),
            CoreferenceChain::new(vec![Mention::new(0, 1, 3), Mention::new(0, 1, 1)]),
        ];
        let ds = sentence_doc(
            &[
                ("a", "DET", 2, "det"),
                ("b", "ADJ", 2, "amod"),
                ("c", "NOUN", -1, "root"),
                ("d", "VERB", 2, "acl"),
                ("e", "PRON", 3, "obj"),
            ],
            chains.clone(),
        );
        let t = prune_punctuation(tree_of(&ds));
        let (units, diags) = merge_coref_phrases(&t, &chains);
        let kinds: Vec<DiagnosticKind> = diags.iter().map(|d| d.kind).collect();
        assert_eq!(
            kinds,
            vec![
                DiagnosticKind::CrossingMention,
                DiagnosticKind::NestedMention
            ]
        );
        assert_eq!(units.units[0].tokens, vec![0, 1, 2]);
    }

    #[test]
    fn determiner_and_adjective_fold_into_head() {
        let ds = sentence_doc(
            &[
                ("the", "DET", 2, "det"),
                ("great", "ADJ", 2, "amod"),
                ("prize", "NOUN", -1, "root"),
            ],
            vec![],
        );
        let t = prune_punctuation(tree_of(&ds));
        let (units, _) = merge_coref_phrases(&t, &[]);
        let out = merge_nodes(&units, &MergeRules::default());
        assert_eq!(out.phrases.len(), 1);
        assert_eq!(out.phrases[0].phrase.text, "the great prize");
        assert_eq!(out.phrases[0].phrase.phrase_type, NodeType::N);
        assert_eq!(out.phrases[0].phrase.head_token, 2);
    }

    #[test]
    fn single_token_sentence() {
        let ds = sentence_doc(&[("Go", "VERB", -1, "root")], vec![]);
        let t = prune_punctuation(tree_of(&ds));
        let (units, _) = merge_coref_phrases(&t, &[]);
        let out = merge_nodes(&units, &MergeRules::default());
        assert_eq!(out.phrases.len(), 1);
        assert!(out.edges.is_empty());
    }

    #[test]
    fn non_contiguous_merge_is_refused() {
        // "for his explanation": `his` is not mergeable and sits between
        // `for` and its head.
        let ds = sentence_doc(
            &[
                ("for", "ADP", 2, "case"),
                ("his", "PRON", 2, "nmod:poss"),
                ("explanation", "NOUN", -1, "root"),
            ],
            vec![],
        );
        let t = prune_punctuation(tree_of(&ds));
        let (units, _) = merge_coref_phrases(&t, &[]);
        let out = merge_nodes(&units, &MergeRules::default());
        let texts: Vec<&str> = out.phrases.iter().map(|p| p.phrase.text.as_str()).collect();
        assert_eq!(texts, vec!["for", "his", "explanation"]);
    }

    #[test]
    fn relation_table_matches_subtypes() {
        let rules = MergeRules::default();
        assert!(rules.is_mergeable("aux:pass"));
        assert!(rules.is_mergeable("compound:prt"));
        assert!(!rules.is_mergeable("nmod:poss"));
        assert!(!rules.is_mergeable("nsubj"));
        assert!(!MergeRules::new(["det"]).is_mergeable("amod"));
    }

    #[test]
    fn identity_without_chains() {
        let ds = sentence_doc(
            &[
                ("cats", "NOUN", 1, "nsubj"),
                ("chase", "VERB", -1, "root"),
                ("dogs", "NOUN", 1, "obj"),
            ],
            vec![],
        );
        let g = build_graph(&ds);
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.edge_count(), 2);
    }

    #[test]
    fn identical_nouns_merge_but_verbs_do_not() {
        let ds = sentence_doc(
            &[
                ("Cats", "NOUN", 1, "nsubj"),
                ("see", "VERB", -1, "root"),
                ("cats", "NOUN", 1, "obj"),
                ("and", "CCONJ", 4, "cc"),
                ("see", "VERB", 1, "conj"),
            ],
            vec![],
        );
        let g = build_graph(&ds);
        let texts: Vec<&str> = g
            .nodes()
            .iter()
            .map(|n| n.canonical_text.as_str())
            .collect();
        assert_eq!(texts, vec!["Cats", "see", "and", "see"]);
        assert_eq!(g.alignment()[&2], 0);
    }

    #[test]
    fn pronouns_do_not_merge_by_text() {
        let ds = sentence_doc(
            &[
                ("it", "PRON", 1, "nsubj"),
                ("saw", "VERB", -1, "root"),
                ("it", "PRON", 1, "obj"),
            ],
            vec![],
        );
        let g = build_graph(&ds);
        assert_eq!(g.node_count(), 3);
    }

    #[test]
    fn majority_type_tie_prefers_noun() {
        let p = |t| Phrase {
            span: TokenSpan {
                sentence: 0,
                start: 0,
                end: 0,
            },
            head_token: 0,
            phrase_type: t,
            text: String::new(),
            pronominal: false,
        };
        assert_eq!(
            majority_type(&[p(NodeType::V), p(NodeType::N)]),
            NodeType::N
        );
        assert_eq!(
            majority_type(&[p(NodeType::O), p(NodeType::V)]),
            NodeType::V
        );
        assert_eq!(
            majority_type(&[p(NodeType::O), p(NodeType::O), p(NodeType::N)]),
            NodeType::O
        );
    }

    #[test]
    fn canonical_text_skips_pronouns() {
        let p = |text: &str, len: usize, pron: bool| Phrase {
            span: TokenSpan {
                sentence: 0,
                start: 0,
                end: len - 1,
            },
            head_token: 0,
            phrase_type: NodeType::N,
            text: text.into(),
            pronominal: pron,
        };
        assert_eq!(
            canonical_text(&[
                p("his own self", 3, true),
                p("Albert Einstein", 2, false),
                p("he", 1, true)
            ]),
            "Albert Einstein"
        );
        assert_eq!(canonical_text(&[p("he", 1, true), p("it", 1, true)]), "he");
    }

    #[test]
    fn empty_set_builds_empty_graph() {
        let g = build_graph(&DocumentSet::empty());
        assert_eq!(g.node_count(), 0);
        assert_eq!(g.edge_count(), 0);
    }
}
