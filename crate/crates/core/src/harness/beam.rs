//! Beam search with length penalty and trigram blocking.

use std::cmp::Ordering;

use serde::Serialize;

use crate::{Error, Result};

/// Next-token log-probabilities after a prefix.
pub trait StepScorer {
    fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>>;
}

impl<F: Fn(&[usize]) -> Vec<f64>> StepScorer for F {
    fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        Ok(self(prefix))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamConfig {
    pub beam_size: usize,
    /// Final scores are `log p / len^length_penalty`.
    pub length_penalty: f64,
    pub max_len: usize,
    pub eos: Option<usize>,
    pub trigram_blocking: bool,
    /// EOS is not allowed before this many tokens.
    pub min_len: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam_size: 5,
            length_penalty: 0.9,
            max_len: 32,
            eos: Some(crate::model::EOS),
            trigram_blocking: true,
            min_len: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub score: f64,
    /// Ended with EOS rather than at `max_len`.
    pub finished: bool,
}

/// True when appending `next` would repeat a trigram already in `prefix`.
pub fn trigram_blocked(prefix: &[usize], next: usize) -> bool {
    let n = prefix.len();
    if n < 2 {
        return false;
    }
    let tri = [prefix[n - 2], prefix[n - 1], next];
    prefix.windows(3).any(|w| w == tri)
}

fn length_normalized(log_prob: f64, len: usize, alpha: f64) -> f64 {
    if alpha == 0.0 {
        log_prob
    } else {
        log_prob / (len.max(1) as f64).powf(alpha)
    }
}

/// Higher first; ties go to the lexicographically smaller token sequence.
fn rank(a: (f64, &[usize]), b: (f64, &[usize])) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.1.cmp(b.1))
}

fn allowed(cfg: &BeamConfig, prefix: &[usize], tok: usize, lp: f64) -> bool {
    if lp == f64::NEG_INFINITY || lp.is_nan() {
        return false;
    }
    if cfg.eos == Some(tok) && prefix.len() < cfg.min_len {
        return false;
    }
    !(cfg.trigram_blocking && trigram_blocked(prefix, tok))
}

/// Hypotheses best first. Each step expands every live hypothesis by every
/// allowed token and keeps the `beam_size` best by summed log-probability;
/// candidates ending in EOS among those are set aside as finished. Search
/// stops once `beam_size` hypotheses have finished, `max_len` is hit or no
/// live hypothesis has an allowed continuation, at which point unfinished
/// ones are scored as they stand.
pub fn beam_search(scorer: &dyn StepScorer, cfg: &BeamConfig) -> Result<Vec<Hypothesis>> {
    if cfg.beam_size < 1 {
        return Err(Error::InvalidArgument(
            "beam_size must be at least 1".into(),
        ));
    }
    let mut live: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 0.0)];
    let mut done: Vec<(Vec<usize>, f64)> = Vec::new();
    for _ in 0..cfg.max_len {
        let mut cands: Vec<(Vec<usize>, f64)> = Vec::new();
        for (prefix, lp) in &live {
            let next = scorer.log_probs(prefix)?;
            for (tok, &l) in next.iter().enumerate() {
                if allowed(cfg, prefix, tok, l) {
                    let mut seq = prefix.clone();
                    seq.push(tok);
                    cands.push((seq, lp + l));
                }
            }
        }
        if cands.is_empty() {
            // Every continuation is blocked; keep what we have.
            break;
        }
        cands.sort_by(|a, b| rank((a.1, &a.0), (b.1, &b.0)));
        live.clear();
        for (i, (seq, lp)) in cands.into_iter().enumerate() {
            if cfg.eos.is_some() && seq.last().copied() == cfg.eos {
                if i < cfg.beam_size {
                    done.push((seq, lp));
                }
            } else if live.len() < cfg.beam_size {
                live.push((seq, lp));
            }
            if live.len() == cfg.beam_size && i + 1 >= cfg.beam_size {
                break;
            }
        }
        if live.is_empty() || done.len() >= cfg.beam_size {
            break;
        }
    }
    let mut out: Vec<Hypothesis> = done
        .into_iter()
        .map(|(t, lp)| (t, lp, true))
        .chain(live.into_iter().map(|(t, lp)| (t, lp, false)))
        .map(|(tokens, log_prob, finished)| Hypothesis {
            score: length_normalized(log_prob, tokens.len(), cfg.length_penalty),
            tokens,
            log_prob,
            finished,
        })
        .collect();
    out.sort_by(|a, b| rank((a.score, &a.tokens), (b.score, &b.tokens)));
    Ok(out)
}

/// Highest-probability token at every step (lowest id on ties).
pub fn greedy_decode(scorer: &dyn StepScorer, cfg: &BeamConfig) -> Result<Hypothesis> {
    let mut tokens = Vec::new();
    let mut lp = 0.0;
    let mut finished = false;
    for _ in 0..cfg.max_len {
        let next = scorer.log_probs(&tokens)?;
        let best = next
            .iter()
            .enumerate()
            .filter(|&(t, &l)| allowed(cfg, &tokens, t, l))
            .max_by(|a, b| {
                a.1.partial_cmp(b.1)
                    .unwrap_or(Ordering::Equal)
                    .then(b.0.cmp(&a.0))
            });
        let Some((tok, &l)) = best else { break };
        tokens.push(tok);
        lp += l;
        if cfg.eos == Some(tok) {
            finished = true;
            break;
        }
    }
    Ok(Hypothesis {
        score: length_normalized(lp, tokens.len(), cfg.length_penalty),
        tokens,
        log_prob: lp,
        finished,
    })
}

/// Every sequence of exactly `horizon` tokens over `vocab` ids, best
/// first by summed log-probability. Exponential; for tests.
pub fn exhaustive_search(
    scorer: &dyn StepScorer,
    vocab: usize,
    horizon: usize,
) -> Result<Vec<Hypothesis>> {
    let mut all = vec![(Vec::new(), 0.0)];
    for _ in 0..horizon {
        let mut next = Vec::with_capacity(all.len() * vocab);
        for (prefix, lp) in &all {
            let l = scorer.log_probs(prefix)?;
            for (tok, v) in l.iter().enumerate().take(vocab) {
                let mut seq: Vec<usize> = prefix.clone();
                seq.push(tok);
                next.push((seq, lp + v));
            }
        }
        all = next;
    }
    let mut out: Vec<Hypothesis> = all
        .into_iter()
        .map(|(tokens, log_prob)| Hypothesis {
            tokens,
            log_prob,
            score: log_prob,
            finished: false,
        })
        .collect();
    out.sort_by(|a, b| rank((a.score, &a.tokens), (b.score, &b.tokens)));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exhausted_trigrams_keep_live_hypotheses() {
        // Two tokens allow at most 8 distinct trigrams, so 12 steps dead-end.
        let scorer = |_: &[usize]| vec![-0.1, -2.0];
        let cfg = BeamConfig {
            beam_size: 2,
            max_len: 12,
            eos: None,
            ..BeamConfig::default()
        };
        let hyps = beam_search(&scorer, &cfg).unwrap();
        assert!(!hyps.is_empty());
        for h in &hyps {
            assert!(h.tokens.len() < 12);
            let tris: Vec<&[usize]> = h.tokens.windows(3).collect();
            let uniq: std::collections::BTreeSet<&[usize]> = tris.iter().copied().collect();
            assert_eq!(tris.len(), uniq.len());
        }
    }

    fn table(prefix: &[usize]) -> Vec<f64> {
        // a fixed, prefix-dependent distribution over 4 tokens
        let h = prefix.iter().fold(7usize, |a, &t| a * 31 + t + 1);
        let raw: Vec<f64> = (0..4).map(|t| ((h * (t + 3)) % 11) as f64 * 0.3).collect();
        let lse = raw.iter().map(|x| x.exp()).sum::<f64>().ln();
        raw.iter().map(|x| x - lse).collect()
    }

    fn fixed(len: usize) -> BeamConfig {
        BeamConfig {
            beam_size: 5,
            length_penalty: 0.0,
            max_len: len,
            eos: None,
            trigram_blocking: false,
            min_len: 0,
        }
    }

    #[test]
    fn zero_beam_is_an_error() {
        let cfg = BeamConfig {
            beam_size: 0,
            ..fixed(3)
        };
        assert!(beam_search(&table, &cfg).is_err());
    }

    #[test]
    fn wide_beam_is_exhaustive() {
        let ex = exhaustive_search(&table, 4, 3).unwrap();
        let cfg = BeamConfig {
            beam_size: 16,
            ..fixed(3)
        };
        let b = beam_search(&table, &cfg).unwrap();
        assert_eq!(b[0].tokens, ex[0].tokens);
        assert!((b[0].log_prob - ex[0].log_prob).abs() < 1e-12);
    }

    #[test]
    fn beam_one_is_greedy() {
        for eos in [None, Some(2)] {
            let cfg = BeamConfig {
                beam_size: 1,
                eos,
                trigram_blocking: true,
                length_penalty: 0.9,
                ..fixed(6)
            };
            let b = beam_search(&table, &cfg).unwrap();
            let g = greedy_decode(&table, &cfg).unwrap();
            assert_eq!(b[0].tokens, g.tokens);
        }
    }

    #[test]
    fn trigram_blocking() {
        assert!(trigram_blocked(&[1, 2, 3, 1, 2], 3));
        assert!(!trigram_blocked(&[1, 2, 3, 1, 2], 4));
        assert!(!trigram_blocked(&[1], 1));
        // always prefers token 0: blocked after "0 0 0"
        let zero = |_: &[usize]| vec![-0.1, -2.5, -3.0];
        let cfg = BeamConfig {
            trigram_blocking: true,
            ..fixed(5)
        };
        let g = greedy_decode(&zero, &cfg).unwrap();
        assert_eq!(g.tokens, vec![0, 0, 0, 1, 0]);
    }

    #[test]
    fn length_penalty_rescales_finished_hypotheses() {
        // EOS now (p=0.5) versus three tokens with p=0.5, 0.9, 0.9
        let scorer = |p: &[usize]| match p.len() {
            0 => vec![(0.5f64).ln(), f64::NEG_INFINITY, (0.5f64).ln()],
            _ => vec![(0.1f64).ln(), (0.9f64).ln(), -1e9],
        };
        let base = BeamConfig {
            beam_size: 2,
            eos: Some(2),
            ..fixed(3)
        };
        let raw = beam_search(&scorer, &base).unwrap();
        assert_eq!(raw[0].tokens, vec![2]);
        let long = beam_search(
            &scorer,
            &BeamConfig {
                length_penalty: 1.0,
                ..base
            },
        )
        .unwrap();
        assert_eq!(long[0].tokens.len(), 3);
    }
}
