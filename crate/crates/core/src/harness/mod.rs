//! Toy task, training loop, beam search and generation.

mod beam;
mod task;
mod train;

use rayon::prelude::*;
use serde::Serialize;

use crate::model::{EncodedValues, GraphInputs, Model, Vocab, EOS};
use crate::Result;

pub use beam::{
    beam_search, exhaustive_search, greedy_decode, trigram_blocked, BeamConfig, Hypothesis,
    StepScorer,
};
pub use task::{prepare_documents, toy_vocab, Prepared, ToyExample, ToyTask};
pub use train::{
    batch_gradients, clip_global_norm, evaluate_loss, global_norm, train, StepRecord, TrainConfig,
    TrainReport,
};

/// Scores next tokens with a trained model for one fixed input.
pub struct ModelScorer<'a> {
    model: &'a Model,
    graph: &'a GraphInputs,
    encoded: EncodedValues,
}

impl<'a> ModelScorer<'a> {
    pub fn new(model: &'a Model, input: &[usize], graph: &'a GraphInputs) -> Result<Self> {
        Ok(ModelScorer {
            encoded: model.encode_values(input, graph)?,
            model,
            graph,
        })
    }
}

impl StepScorer for ModelScorer<'_> {
    fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        self.model.next_log_probs(&self.encoded, self.graph, prefix)
    }
}

/// One line of generation output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationRecord {
    pub input_id: String,
    pub tokens: Vec<String>,
    pub score: f64,
}

/// Best hypothesis for every example, EOS stripped: beam search, or greedy
/// decoding under the same limits when `greedy` is set.
pub fn generate(
    model: &Model,
    vocab: &Vocab,
    data: &[Prepared],
    cfg: &BeamConfig,
    greedy: bool,
) -> Result<Vec<GenerationRecord>> {
    let max_len = cfg.max_len.min(model.config.max_len.saturating_sub(1));
    let cfg = BeamConfig { max_len, ..*cfg };
    data.par_iter()
        .map(|ex| {
            let scorer = ModelScorer::new(model, &ex.input, &ex.graph)?;
            let best = if greedy {
                Some(greedy_decode(&scorer, &cfg)?)
            } else {
                beam_search(&scorer, &cfg)?.into_iter().next()
            };
            let (mut ids, score) =
                best.map_or((Vec::new(), f64::NEG_INFINITY), |h| (h.tokens, h.score));
            if ids.last() == Some(&EOS) {
                ids.pop();
            }
            Ok(GenerationRecord {
                input_id: ex.id.clone(),
                tokens: vocab.decode(&ids),
                score,
            })
        })
        .collect()
}
