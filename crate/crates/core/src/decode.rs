//! Beam-search translation with EOS-probability discounting and
//! attention-driven unknown-word replacement.

use ndarray::Array1;

use crate::corpus::{Vocabulary, BOS_ID, EOS_ID, UNK_ID};
use crate::error::{Error, Result};
use crate::inference::DecoderState;
use crate::lexicon::{Lexicon, LexiconMatrix};
use crate::model::ModelParams;

/// A partial or finished translation in beam search.
#[derive(Debug, Clone)]
pub struct Hypothesis {
    /// Emitted target ids; EOS is never included.
    pub tokens: Vec<u32>,
    /// Sum of per-step log probabilities, including the EOS step and its
    /// discount when finished.
    pub score: f64,
    pub state: DecoderState,
    /// One attention vector per emitted token.
    pub attention: Vec<Array1<f64>>,
    pub finished: bool,
}

#[derive(Debug, Clone)]
pub struct BeamConfig {
    pub beam: usize,
    /// Multiplicative EOS probability discount, applied in log space to the
    /// hypothesis score without renormalizing the distribution.
    pub eos_discount: f64,
    /// Maximum emitted length; defaults to 2|F| + 5.
    pub max_len: Option<usize>,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam: 5,
            eos_discount: 0.9,
            max_len: None,
        }
    }
}

fn validate_beam(src: &[u32], cfg: &BeamConfig) -> Result<usize> {
    if src.is_empty() {
        return Err(Error::EmptySource);
    }
    if cfg.beam < 1 {
        return Err(Error::InvalidConfig("beam size must be >= 1".into()));
    }
    if !(cfg.eos_discount > 0.0 && cfg.eos_discount <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "eos discount {} out of (0, 1]",
            cfg.eos_discount
        )));
    }
    Ok(cfg.max_len.unwrap_or(2 * src.len() + 5))
}

/// Standard beam search over the mode-appropriate output distribution.
///
/// Finished hypotheses leave the active beam; the search stops when the beam
/// empties or `max_len` is reached, and any still-active hypotheses are
/// returned unfinished. Candidate ties break on lower token id, then earlier
/// creation order, so decoding is reproducible bit for bit.
pub fn beam_search(
    params: &ModelParams,
    lex: Option<&LexiconMatrix>,
    src: &[u32],
    cfg: &BeamConfig,
) -> Result<Vec<Hypothesis>> {
    let max_len = validate_beam(src, cfg)?;
    let enc = params.encode(src)?;
    let log_discount = cfg.eos_discount.ln();
    let vocab = params.cfg.trg_vocab as u32;

    let initial = Hypothesis {
        tokens: Vec::new(),
        score: 0.0,
        state: params.step_decoder(&params.initial_decoder_state(), BOS_ID)?,
        attention: Vec::new(),
        finished: false,
    };
    let mut active = vec![initial];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for _ in 0..max_len {
        if active.is_empty() {
            break;
        }
        let mut outputs = Vec::with_capacity(active.len());
        let mut candidates: Vec<(f64, u32, usize)> =
            Vec::with_capacity(active.len() * vocab as usize);
        for (parent, hyp) in active.iter().enumerate() {
            let out = params.predict(&hyp.state, &enc, lex)?;
            for e in 0..vocab {
                let mut score = hyp.score + out.distribution[e as usize].ln();
                if e == EOS_ID {
                    score += log_discount;
                }
                candidates.push((score, e, parent));
            }
            outputs.push(out);
        }
        candidates.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then_with(|| a.1.cmp(&b.1))
                .then_with(|| a.2.cmp(&b.2))
        });
        candidates.truncate(cfg.beam);

        let mut next_active = Vec::with_capacity(cfg.beam);
        for (score, token, parent) in candidates {
            let base = &active[parent];
            if token == EOS_ID {
                finished.push(Hypothesis {
                    tokens: base.tokens.clone(),
                    score,
                    state: base.state.clone(),
                    attention: base.attention.clone(),
                    finished: true,
                });
            } else {
                let mut tokens = base.tokens.clone();
                tokens.push(token);
                let mut attention = base.attention.clone();
                attention.push(outputs[parent].attention.clone());
                next_active.push(Hypothesis {
                    tokens,
                    score,
                    state: params.step_decoder(&base.state, token)?,
                    attention,
                    finished: false,
                });
            }
        }
        active = next_active;
    }
    finished.extend(active);
    finished.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.tokens.cmp(&b.tokens))
    });
    Ok(finished)
}

/// Greedy decoding: at every step emit the candidate with the best adjusted
/// log probability (EOS carries the discount). Written independently of the
/// beam so the two can check each other.
pub fn greedy_decode(
    params: &ModelParams,
    lex: Option<&LexiconMatrix>,
    src: &[u32],
    eos_discount: f64,
    max_len: Option<usize>,
) -> Result<Hypothesis> {
    let cfg = BeamConfig {
        beam: 1,
        eos_discount,
        max_len,
    };
    let max_len = validate_beam(src, &cfg)?;
    let enc = params.encode(src)?;
    let log_discount = eos_discount.ln();

    let mut state = params.step_decoder(&params.initial_decoder_state(), BOS_ID)?;
    let mut tokens = Vec::new();
    let mut attention = Vec::new();
    let mut score = 0.0;
    let mut finished = false;
    for _ in 0..max_len {
        let out = params.predict(&state, &enc, lex)?;
        let mut best: Option<(f64, u32)> = None;
        for e in 0..params.cfg.trg_vocab as u32 {
            let mut s = out.distribution[e as usize].ln();
            if e == EOS_ID {
                s += log_discount;
            }
            if best.is_none_or(|(bs, _)| s > bs) {
                best = Some((s, e));
            }
        }
        let (step_score, token) = best.unwrap();
        score += step_score;
        if token == EOS_ID {
            finished = true;
            break;
        }
        tokens.push(token);
        attention.push(out.attention.clone());
        state = params.step_decoder(&state, token)?;
    }
    Ok(Hypothesis {
        tokens,
        score,
        state,
        attention,
        finished,
    })
}

/// Recomputes a hypothesis score by a fresh forward pass over its token
/// sequence: the per-step log probabilities of each token, plus the EOS step
/// and discount when `finished`.
pub fn rescore(
    params: &ModelParams,
    lex: Option<&LexiconMatrix>,
    src: &[u32],
    tokens: &[u32],
    finished: bool,
    eos_discount: f64,
) -> Result<f64> {
    let enc = params.encode(src)?;
    let mut state = params.step_decoder(&params.initial_decoder_state(), BOS_ID)?;
    let mut score = 0.0;
    for &token in tokens {
        let out = params.predict(&state, &enc, lex)?;
        score += out.distribution[token as usize].ln();
        state = params.step_decoder(&state, token)?;
    }
    if finished {
        let out = params.predict(&state, &enc, lex)?;
        score += out.distribution[EOS_ID as usize].ln() + eos_discount.ln();
    }
    Ok(score)
}

/// A record of one unknown-word replacement.
#[derive(Debug, Clone)]
pub struct Replacement {
    /// Position in the output sentence.
    pub position: usize,
    /// Most-attended source position at that step.
    pub source_position: usize,
    pub source_token: String,
    pub replacement: String,
    /// True when the source token was copied through because the lexicon
    /// does not cover it.
    pub copied_source: bool,
}

/// A finished surface translation.
#[derive(Debug, Clone)]
pub struct Translation {
    pub tokens: Vec<String>,
    pub score: f64,
    pub attention: Vec<Array1<f64>>,
    pub replacements: Vec<Replacement>,
}

/// Maps a hypothesis to surface tokens, replacing each emitted unk with the
/// lexicon's best translation of the most-attended source word, or copying
/// that source word through when the lexicon does not cover it.
pub fn replace_unknowns(
    hyp: &Hypothesis,
    src_tokens: &[String],
    src_ids: &[u32],
    lexicon: Option<&Lexicon>,
    vocab_trg: &Vocabulary,
) -> Translation {
    let mut tokens = Vec::with_capacity(hyp.tokens.len());
    let mut replacements = Vec::new();
    for (position, &id) in hyp.tokens.iter().enumerate() {
        if id != UNK_ID {
            tokens.push(vocab_trg.token(id).to_string());
            continue;
        }
        let Some(lexicon) = lexicon else {
            tokens.push(vocab_trg.token(id).to_string());
            continue;
        };
        let attention = &hyp.attention[position];
        let mut source_position = 0usize;
        for (j, &a) in attention.iter().enumerate() {
            if a > attention[source_position] {
                source_position = j;
            }
        }
        let source_token = src_tokens[source_position].clone();
        let (replacement, copied_source) = match lexicon.best_translation(src_ids[source_position])
        {
            Some(best) => (vocab_trg.token(best).to_string(), false),
            None => (source_token.clone(), true),
        };
        tokens.push(replacement.clone());
        replacements.push(Replacement {
            position,
            source_position,
            source_token,
            replacement,
            copied_source,
        });
    }
    Translation {
        tokens,
        score: hyp.score,
        attention: hyp.attention.clone(),
        replacements,
    }
}
