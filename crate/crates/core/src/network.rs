//! The training forward pass on the gradient tape: bidirectional encoding,
//! attention, the mode-appropriate output distribution, and the teacher-forced
//! negative log-likelihood of one sentence pair.
//!
//! This mirrors the inference path in [`crate::inference`] exactly; a test
//! cross-checks the two step by step.

use std::rc::Rc;

use ndarray::Array2;
use rand::Rng;

use crate::corpus::BOS_ID;
use crate::error::{Error, Result};
use crate::graph::{GradStore, Graph, Var};
use crate::inference::dropout_mask;
use crate::lexicon::LexiconMatrix;
use crate::model::{ModelParams, OutputMode};

/// Floor for log arguments in linear mode, where a mixture component can be
/// exactly zero.
pub const LINEAR_LOG_FLOOR: f64 = 1e-12;

/// Parameter leaves registered on a graph, in the same slot order as
/// [`ModelParams::tensors`].
pub struct GraphParams {
    pub src_embed: Var,
    pub trg_embed: Var,
    pub enc_fwd: Vec<(Var, Var)>,
    pub enc_bwd: Vec<(Var, Var)>,
    pub merge: (Var, Var),
    pub dec: Vec<(Var, Var)>,
    pub eta: (Var, Var),
    pub out: (Var, Var),
    pub interp: Var,
}

/// Registers every model tensor as a parameter leaf. Slot numbering follows
/// the tensor order, so gradients land in the right [`GradStore`] slots.
pub fn register_params(g: &mut Graph, params: &ModelParams) -> GraphParams {
    let mut slot = 0usize;
    let mut next = |g: &mut Graph, t: &Array2<f64>| {
        let v = g.param(slot, t);
        slot += 1;
        v
    };
    let src_embed = next(g, &params.src_embed);
    let trg_embed = next(g, &params.trg_embed);
    let mut stacks = Vec::new();
    for stack in [&params.enc_fwd, &params.enc_bwd] {
        let vars: Vec<(Var, Var)> = stack
            .iter()
            .map(|layer| {
                let w = next(g, &layer.w);
                let b = next(g, &layer.b);
                (w, b)
            })
            .collect();
        stacks.push(vars);
    }
    let enc_bwd = stacks.pop().unwrap();
    let enc_fwd = stacks.pop().unwrap();
    let merge = (next(g, &params.merge.w), next(g, &params.merge.b));
    let dec: Vec<(Var, Var)> = params
        .dec
        .iter()
        .map(|layer| {
            let w = next(g, &layer.w);
            let b = next(g, &layer.b);
            (w, b)
        })
        .collect();
    let eta = (next(g, &params.eta.w), next(g, &params.eta.b));
    let out = (next(g, &params.out.w), next(g, &params.out.b));
    let interp = next(g, &params.interp);
    debug_assert_eq!(slot, params.tensor_count());
    GraphParams {
        src_embed,
        trg_embed,
        enc_fwd,
        enc_bwd,
        merge,
        dec,
        eta,
        out,
        interp,
    }
}

/// Pre-drawn inverted-dropout masks for one sentence, applied to the top
/// LSTM layer outputs of both encoder stacks and the decoder stack.
pub struct DropoutPlan {
    pub enc_fwd: Vec<Array2<f64>>,
    pub enc_bwd: Vec<Array2<f64>>,
    pub dec: Vec<Array2<f64>>,
}

impl DropoutPlan {
    /// Draws masks in a fixed order (forward positions, backward positions,
    /// decoder steps) so a seeded generator reproduces them exactly.
    pub fn generate<R: Rng>(
        hidden: usize,
        src_len: usize,
        trg_len: usize,
        rate: f64,
        rng: &mut R,
    ) -> Self {
        let draw = |n: usize, rng: &mut R| -> Vec<Array2<f64>> {
            (0..n).map(|_| dropout_mask(hidden, rate, rng)).collect()
        };
        DropoutPlan {
            enc_fwd: draw(src_len, rng),
            enc_bwd: draw(src_len, rng),
            dec: draw(trg_len, rng),
        }
    }
}

/// Handles to the per-step outputs of a sentence graph.
pub struct SentenceGraph {
    /// Total negative log-likelihood (1x1).
    pub loss: Var,
    /// Output distribution at each target step.
    pub distributions: Vec<Var>,
    /// Attention vector at each target step.
    pub attentions: Vec<Var>,
    pub n_tokens: usize,
}

fn lstm_step_graph(
    g: &mut Graph,
    layer: (Var, Var),
    x: Var,
    state: (Var, Var),
    hidden: usize,
) -> (Var, Var) {
    let cat = g.concat_rows(x, state.0);
    let wx = g.matmul(layer.0, cat);
    let z = g.add(wx, layer.1);
    let zi = g.slice_rows(z, 0, hidden);
    let zf = g.slice_rows(z, hidden, hidden);
    let zg = g.slice_rows(z, 2 * hidden, hidden);
    let zo = g.slice_rows(z, 3 * hidden, hidden);
    let i = g.sigmoid(zi);
    let f = g.sigmoid(zf);
    let cand = g.tanh(zg);
    let o = g.sigmoid(zo);
    let keep = g.mul(f, state.1);
    let write = g.mul(i, cand);
    let c = g.add(keep, write);
    let tc = g.tanh(c);
    let h = g.mul(o, tc);
    (h, c)
}

fn stack_step_graph(
    g: &mut Graph,
    stack: &[(Var, Var)],
    input: Var,
    states: &mut [(Var, Var)],
    hidden: usize,
) -> Var {
    let mut x = input;
    for (layer, state) in stack.iter().zip(states.iter_mut()) {
        let next = lstm_step_graph(g, *layer, x, *state, hidden);
        x = next.0;
        *state = next;
    }
    x
}

/// Builds the full teacher-forced loss graph for one sentence pair. The
/// target sequence must be EOS-terminated; BOS is fed as the first decoder
/// input and is never scored.
pub fn build_sentence_graph(
    g: &mut Graph,
    params: &ModelParams,
    leaves: &GraphParams,
    src: &[u32],
    trg: &[u32],
    lex: Option<&Rc<LexiconMatrix>>,
    dropout: Option<&DropoutPlan>,
) -> Result<SentenceGraph> {
    if src.is_empty() {
        return Err(Error::EmptySource);
    }
    if trg.is_empty() {
        return Err(Error::EmptySentence {
            index: 0,
            side: "target",
        });
    }
    let mode = params.cfg.mode;
    if mode.needs_lexicon() && lex.is_none() {
        return Err(Error::InvalidConfig(format!(
            "{} mode requires a lexicon matrix",
            mode.as_str()
        )));
    }
    if let Some(matrix) = lex {
        if matrix.num_cols() != src.len() {
            return Err(Error::DimensionMismatch(format!(
                "lexicon matrix has {} columns for {} source words",
                matrix.num_cols(),
                src.len()
            )));
        }
    }
    for &id in src {
        if id as usize >= params.cfg.src_vocab {
            return Err(Error::DimensionMismatch(format!(
                "source id {id} out of embedding range"
            )));
        }
    }
    for &id in trg {
        if id as usize >= params.cfg.trg_vocab {
            return Err(Error::DimensionMismatch(format!(
                "target id {id} out of embedding range"
            )));
        }
    }

    let hidden = params.cfg.hidden;
    let zero_state = || {
        let z = Array2::<f64>::zeros((hidden, 1));
        (z.clone(), z)
    };

    // Encoder sweeps.
    let mut fwd_states: Vec<(Var, Var)> = (0..params.cfg.layers)
        .map(|_| {
            let (h, c) = zero_state();
            (g.constant(h), g.constant(c))
        })
        .collect();
    let mut bwd_states = fwd_states.clone();

    let masked = |g: &mut Graph, v: Var, mask: Option<&Array2<f64>>| match mask {
        Some(m) => {
            let mv = g.constant(m.clone());
            g.mul(v, mv)
        }
        None => v,
    };

    let mut fwd_tops: Vec<Var> = Vec::with_capacity(src.len());
    for (j, &id) in src.iter().enumerate() {
        let x = g.column(leaves.src_embed, id as usize);
        let top = stack_step_graph(g, &leaves.enc_fwd, x, &mut fwd_states, hidden);
        fwd_tops.push(masked(g, top, dropout.map(|d| &d.enc_fwd[j])));
    }
    let mut bwd_tops: Vec<Option<Var>> = vec![None; src.len()];
    for (j, &id) in src.iter().enumerate().rev() {
        let x = g.column(leaves.src_embed, id as usize);
        let top = stack_step_graph(g, &leaves.enc_bwd, x, &mut bwd_states, hidden);
        bwd_tops[j] = Some(masked(g, top, dropout.map(|d| &d.enc_bwd[j])));
    }

    let mut rep_cols: Vec<Var> = Vec::with_capacity(src.len());
    for j in 0..src.len() {
        let cat = g.concat_rows(bwd_tops[j].unwrap(), fwd_tops[j]);
        let proj = g.matmul(leaves.merge.0, cat);
        rep_cols.push(g.add(proj, leaves.merge.1));
    }
    let reps = g.hstack(&rep_cols);
    let reps_t = g.transpose(reps);

    // Decoder: feed BOS, then score each target token before feeding it.
    let mut dec_states: Vec<(Var, Var)> = (0..params.cfg.layers)
        .map(|_| {
            let (h, c) = zero_state();
            (g.constant(h), g.constant(c))
        })
        .collect();
    let bos = g.column(leaves.trg_embed, BOS_ID as usize);
    stack_step_graph(g, &leaves.dec, bos, &mut dec_states, hidden);

    let mut loss: Option<Var> = None;
    let mut distributions = Vec::with_capacity(trg.len());
    let mut attentions = Vec::with_capacity(trg.len());
    for (i, &token) in trg.iter().enumerate() {
        let h_top = dec_states.last().unwrap().0;
        let h_used = masked(g, h_top, dropout.map(|d| &d.dec[i]));

        let scores = g.matmul(reps_t, h_used);
        let attention = g.softmax(scores);
        let context = g.matmul(reps, attention);
        let cat = g.concat_rows(h_used, context);
        let eta_lin = g.matmul(leaves.eta.0, cat);
        let eta = g.add(eta_lin, leaves.eta.1);
        let logits_lin = g.matmul(leaves.out.0, eta);
        let logits = g.add(logits_lin, leaves.out.1);

        let (distribution, step_loss) = match mode {
            OutputMode::Base => {
                let p = g.softmax(logits);
                let picked = g.pick(p, token as usize);
                let lp = g.ln(picked);
                (p, g.scale(lp, -1.0))
            }
            OutputMode::Bias => {
                let p_lex = g.lex_predictive(Rc::clone(lex.unwrap()), attention);
                let guarded = g.add_const(p_lex, params.cfg.epsilon);
                let bias = g.ln(guarded);
                let biased = g.add(logits, bias);
                let p = g.softmax(biased);
                let picked = g.pick(p, token as usize);
                let lp = g.ln(picked);
                (p, g.scale(lp, -1.0))
            }
            OutputMode::Linear => {
                let p_model = g.softmax(logits);
                let p_lex = g.lex_predictive(Rc::clone(lex.unwrap()), attention);
                let lambda = g.sigmoid(leaves.interp);
                let lex_side = g.scalar_mul(lambda, p_lex);
                let neg = g.scale(lambda, -1.0);
                let one_minus = g.add_const(neg, 1.0);
                let model_side = g.scalar_mul(one_minus, p_model);
                let p = g.add(lex_side, model_side);
                let picked = g.pick(p, token as usize);
                let lp = g.ln_clamped(picked, LINEAR_LOG_FLOOR);
                (p, g.scale(lp, -1.0))
            }
        };
        distributions.push(distribution);
        attentions.push(attention);
        loss = Some(match loss {
            Some(acc) => g.add(acc, step_loss),
            None => step_loss,
        });

        if i + 1 < trg.len() {
            let x = g.column(leaves.trg_embed, token as usize);
            stack_step_graph(g, &leaves.dec, x, &mut dec_states, hidden);
        }
    }

    Ok(SentenceGraph {
        loss: loss.unwrap(),
        distributions,
        attentions,
        n_tokens: trg.len(),
    })
}

fn graph_capacity(params: &ModelParams, src: &[u32], trg: &[u32]) -> usize {
    let per_lstm_step = 15 * params.cfg.layers;
    params.tensor_count()
        + (2 * src.len() + trg.len() + 1) * per_lstm_step
        + 4 * src.len()
        + 24 * trg.len()
        + 8
}

/// Teacher-forced sentence loss and parameter gradients.
///
/// Returns the summed negative log-likelihood over the target tokens and
/// adds the gradients of all trainable tensors into `grads`. In bias and
/// linear modes the gradient flows through the attention vector into the
/// lexicon predictive term; the lexicon matrix entries themselves are
/// constants.
pub fn sentence_loss(
    params: &ModelParams,
    src: &[u32],
    trg: &[u32],
    lex: Option<&Rc<LexiconMatrix>>,
    dropout: Option<&DropoutPlan>,
    grads: &mut GradStore,
) -> Result<f64> {
    let mut g = Graph::with_capacity(graph_capacity(params, src, trg));
    let leaves = register_params(&mut g, params);
    let run = build_sentence_graph(&mut g, params, &leaves, src, trg, lex, dropout)?;
    let loss = g.value(run.loss)[[0, 0]];
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss(format!(
            "loss {loss} on a {}-word source / {}-token target sentence",
            src.len(),
            trg.len()
        )));
    }
    g.backward(run.loss, grads);
    Ok(loss)
}

/// The sentence loss value alone, through the same graph construction as
/// [`sentence_loss`] but without the backward pass. Finite-difference
/// checks perturb parameters and evaluate this.
pub fn sentence_loss_value(
    params: &ModelParams,
    src: &[u32],
    trg: &[u32],
    lex: Option<&Rc<LexiconMatrix>>,
    dropout: Option<&DropoutPlan>,
) -> Result<f64> {
    let mut g = Graph::with_capacity(graph_capacity(params, src, trg));
    let leaves = register_params(&mut g, params);
    let run = build_sentence_graph(&mut g, params, &leaves, src, trg, lex, dropout)?;
    Ok(g.value(run.loss)[[0, 0]])
}

/// Forward-only sentence negative log-likelihood via the inference path.
pub fn sentence_nll(
    params: &ModelParams,
    src: &[u32],
    trg: &[u32],
    lex: Option<&LexiconMatrix>,
) -> Result<f64> {
    if trg.is_empty() {
        return Err(Error::EmptySentence {
            index: 0,
            side: "target",
        });
    }
    let enc = params.encode(src)?;
    let mut state = params.step_decoder(&params.initial_decoder_state(), BOS_ID)?;
    let mut nll = 0.0;
    for (i, &token) in trg.iter().enumerate() {
        let out = params.predict(&state, &enc, lex)?;
        let p = out.distribution[token as usize];
        nll -= if params.cfg.mode == OutputMode::Linear {
            p.max(LINEAR_LOG_FLOOR).ln()
        } else {
            p.ln()
        };
        if i + 1 < trg.len() {
            state = params.step_decoder(&state, token)?;
        }
    }
    if !nll.is_finite() {
        return Err(Error::NonFiniteLoss(format!("forward NLL {nll}")));
    }
    Ok(nll)
}
