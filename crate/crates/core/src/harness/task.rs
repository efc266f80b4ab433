//! A synthetic summarisation task with planted coreference.
//!
//! Each input introduces a person and a city, optionally says something
//! unrelated, then refers back to the person with a pronoun. The summary
//! needs facts from both ends: "Alice bought a red hat in Paris".

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::annotation::{
    AnnotatedDocument, CoreferenceChain, DependencyEdge, DocumentSet, Mention, Token,
};
use crate::augment::Augmentation;
use crate::build::build_graph;
use crate::graph::SemanticGraph;
use crate::model::{GraphInputs, ModelConfig, Vocab, EOS};
use crate::{Error, Result};

const PEOPLE: [(&str, &str); 8] = [
    ("Alice", "She"),
    ("Bob", "He"),
    ("Carol", "She"),
    ("David", "He"),
    ("Erin", "She"),
    ("Frank", "He"),
    ("Grace", "She"),
    ("Henry", "He"),
];
const CITIES: [&str; 8] = [
    "Paris", "Rome", "Oslo", "Lima", "Cairo", "Delhi", "Tokyo", "Quito",
];
const VERBS: [&str; 6] = ["bought", "sold", "painted", "found", "fixed", "lost"];
const ADJS: [&str; 6] = ["red", "old", "small", "shiny", "green", "heavy"];
const OBJECTS: [&str; 8] = [
    "hat", "lamp", "bike", "clock", "chair", "kite", "vase", "boat",
];
const FILLER: [&str; 9] = [
    "visited", "a", "in", ".", "The", "weather", "was", "nice", "It",
];

/// `(text, pos, head within sentence or -1, relation)`.
type Row = (String, &'static str, i64, &'static str);

#[derive(Debug, Clone)]
pub struct ToyExample {
    pub id: String,
    pub document: AnnotatedDocument,
    /// Augmented graph of the document.
    pub graph: SemanticGraph,
    pub input: Vec<usize>,
    /// Summary ids, EOS last.
    pub target: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ToyTask {
    pub vocab: Vocab,
    pub examples: Vec<ToyExample>,
}

/// Model-ready inputs for one example.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub id: String,
    pub input: Vec<usize>,
    pub target: Vec<usize>,
    pub graph: GraphInputs,
}

pub fn toy_vocab() -> Vocab {
    let mut words: Vec<&str> = Vec::new();
    for (n, p) in PEOPLE {
        words.push(n);
        words.push(p);
    }
    words.extend(CITIES);
    words.extend(VERBS);
    words.extend(ADJS);
    words.extend(OBJECTS);
    words.extend(FILLER);
    Vocab::new(words)
}

fn document(id: &str, sentences: &[Vec<Row>], chain: Vec<Mention>) -> AnnotatedDocument {
    let mut tokens = Vec::new();
    let mut edges = Vec::new();
    for (sid, rows) in sentences.iter().enumerate() {
        let base = tokens.len();
        for (i, (text, pos, head, rel)) in rows.iter().enumerate() {
            tokens.push(Token {
                index: base + i,
                text: text.clone(),
                pos_tag: pos.to_string(),
                sentence_id: sid,
                is_punct: *pos == "PUNCT",
            });
            edges.push(DependencyEdge {
                head: (*head >= 0).then(|| base + *head as usize),
                dependent: base + i,
                relation: rel.to_string(),
            });
        }
    }
    AnnotatedDocument {
        doc_id: id.to_string(),
        tokens,
        dependency_edges: edges,
        coref_chains: vec![CoreferenceChain::new(chain)],
    }
}

fn row(text: &str, pos: &'static str, head: i64, rel: &'static str) -> Row {
    (text.to_string(), pos, head, rel)
}

impl ToyTask {
    /// `n` distinct examples drawn with `seed`. Sentence numbers in the
    /// chain are global, so each document starts at sentence 0.
    pub fn planted(n: usize, seed: u64) -> Result<Self> {
        let max = PEOPLE.len() * CITIES.len() * VERBS.len() * ADJS.len() * OBJECTS.len() * 2;
        if n > max {
            return Err(Error::InvalidArgument(format!(
                "at most {max} distinct examples"
            )));
        }
        let vocab = toy_vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seen = std::collections::HashSet::new();
        let mut examples = Vec::with_capacity(n);
        while examples.len() < n {
            let (name, pron) = *PEOPLE.choose(&mut rng).expect("non-empty");
            let city = *CITIES.choose(&mut rng).expect("non-empty");
            let verb = *VERBS.choose(&mut rng).expect("non-empty");
            let adj = *ADJS.choose(&mut rng).expect("non-empty");
            let obj = *OBJECTS.choose(&mut rng).expect("non-empty");
            let filler = rng.gen_bool(0.5);
            if !seen.insert((name, city, verb, adj, obj, filler)) {
                continue;
            }
            let mut sentences = vec![vec![
                row(name, "PROPN", 1, "nsubj"),
                row("visited", "VERB", -1, "root"),
                row(city, "PROPN", 1, "obj"),
                row(".", "PUNCT", 1, "punct"),
            ]];
            if filler {
                sentences.push(vec![
                    row("The", "DET", 1, "det"),
                    row("weather", "NOUN", 3, "nsubj"),
                    row("was", "AUX", 3, "cop"),
                    row("nice", "ADJ", -1, "root"),
                    row(".", "PUNCT", 3, "punct"),
                ]);
            }
            let last = sentences.len();
            sentences.push(vec![
                row(pron, "PRON", 1, "nsubj"),
                row(verb, "VERB", -1, "root"),
                row("a", "DET", 4, "det"),
                row(adj, "ADJ", 4, "amod"),
                row(obj, "NOUN", 1, "obj"),
                row(".", "PUNCT", 1, "punct"),
            ]);
            let id = format!("toy-{:03}", examples.len());
            let doc = document(
                &id,
                &sentences,
                vec![Mention::new(0, 0, 0), Mention::new(last, 0, 0)],
            );
            let ds = DocumentSet::new(vec![doc.clone()])?;
            let graph = Augmentation::ALL.apply(&build_graph(&ds));
            let input = vocab.encode(doc.tokens.iter().map(|t| t.text.as_str()));
            let mut target = vocab.encode([name, verb, "a", adj, obj, "in", city]);
            target.push(EOS);
            examples.push(ToyExample {
                id,
                document: doc,
                graph,
                input,
                target,
            });
        }
        Ok(ToyTask { vocab, examples })
    }

    pub fn prepare(&self, cfg: &ModelConfig) -> Result<Vec<Prepared>> {
        self.examples
            .iter()
            .map(|ex| {
                Ok(Prepared {
                    id: ex.id.clone(),
                    input: ex.input.clone(),
                    target: ex.target.clone(),
                    graph: GraphInputs::new(&ex.graph, ex.input.len(), cfg)?,
                })
            })
            .collect()
    }
}

/// One [`Prepared`] per document of `ds`, with no target.
pub fn prepare_documents(
    ds: &DocumentSet,
    vocab: &Vocab,
    cfg: &ModelConfig,
) -> Result<Vec<Prepared>> {
    ds.documents()
        .iter()
        .enumerate()
        .map(|(i, doc)| {
            let single = ds.document_set(i)?;
            let graph = Augmentation::ALL.apply(&build_graph(&single));
            let input = vocab.encode(doc.tokens.iter().map(|t| t.text.as_str()));
            Ok(Prepared {
                id: doc.doc_id.clone(),
                graph: GraphInputs::new(&graph, input.len(), cfg)?,
                input,
                target: Vec::new(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NodeType;

    #[test]
    fn planted_examples_are_valid_and_distinct() {
        let task = ToyTask::planted(50, 7).unwrap();
        assert_eq!(task.examples.len(), 50);
        let mut targets = std::collections::HashSet::new();
        for ex in &task.examples {
            assert!(!ex.input.contains(&crate::model::UNK));
            assert_eq!(*ex.target.last().unwrap(), EOS);
            targets.insert((ex.input.clone(), ex.target.clone()));
            // the pronoun merges into the name's node
            let name = &ex.document.tokens[0].text;
            let node = ex.graph.find_node(name).unwrap();
            assert_eq!(node.node_type, NodeType::N);
            assert_eq!(node.phrases.len(), 2);
        }
        assert_eq!(targets.len(), 50);
        let again = ToyTask::planted(50, 7).unwrap();
        assert_eq!(again.examples[17].input, task.examples[17].input);
    }
}
