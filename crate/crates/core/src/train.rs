//! Adam optimization and the epoch loop with its training-curve log.

use std::rc::Rc;
use std::time::Instant;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{make_batches, ParallelCorpus, Vocabulary, EOS_ID};
use crate::decode::greedy_decode;
use crate::error::{Error, Result};
use crate::eval::bleu4_with;
use crate::graph::GradStore;
use crate::lexicon::Lexicon;
use crate::model::ModelParams;
use crate::network::{sentence_loss, sentence_nll, DropoutPlan};

/// Adam with bias correction. Moment buffers persist across calls and are
/// aligned with the model's tensor slots.
#[derive(Debug, Clone)]
pub struct Adam {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: u64,
}

impl Adam {
    /// Default settings: alpha=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8.
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Array2<f64>> = params
            .tensors()
            .iter()
            .map(|(_, t)| Array2::zeros(t.dim()))
            .collect();
        Adam {
            alpha: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update, applied in place.
    pub fn step(&mut self, params: &mut ModelParams, grads: &GradStore) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFiniteGradient("Adam update".into()));
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let mut tensors = params.tensors_mut();
        for (slot, tensor) in tensors.iter_mut().enumerate() {
            let g = &grads.slots[slot];
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            ndarray::Zip::from(&mut **tensor)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= self.alpha * m_hat / (v_hat.sqrt() + self.epsilon);
                });
        }
        drop(tensors);
        params.check_finite()
    }
}

/// Training-loop settings.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Training pairs longer than this on either side are excluded.
    pub max_len: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 14,
            batch_size: 32,
            max_len: 50,
            dropout: 0.2,
            learning_rate: 1e-3,
            seed: 1,
        }
    }
}

/// One row of the training curve.
#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    /// Summed NLL over the epoch divided by the number of target tokens.
    pub train_loss: f64,
    pub dev_loss: Option<f64>,
    /// Greedy-decoding BLEU on the dev set.
    pub dev_bleu: Option<f64>,
    pub wallclock_seconds: f64,
}

/// Epoch callback; return `false` to stop early.
pub type EpochCallback<'a> = dyn FnMut(&EpochStats, &ModelParams) -> bool + 'a;

/// Runs the training loop: per epoch, shuffle batches under the seed,
/// accumulate per-sentence gradients in a fixed order, take one Adam step
/// per batch on the mean gradient, and log per-epoch train/dev metrics.
///
/// In bias/linear modes the per-sentence lexicon matrix is built from
/// `lexicon`, which must then be present.
#[allow(clippy::too_many_arguments)]
pub fn train(
    params: &mut ModelParams,
    corpus: &ParallelCorpus,
    vocab_src: &Vocabulary,
    vocab_trg: &Vocabulary,
    lexicon: Option<&Lexicon>,
    dev: Option<&ParallelCorpus>,
    cfg: &TrainConfig,
    mut on_epoch: Option<&mut EpochCallback<'_>>,
) -> Result<Vec<EpochStats>> {
    if params.cfg.mode.needs_lexicon() && lexicon.is_none() {
        return Err(Error::InvalidConfig(format!(
            "{} mode requires a lexicon",
            params.cfg.mode.as_str()
        )));
    }
    let mut adam = Adam::new(params).with_alpha(cfg.learning_rate);
    let mut grads = params.grad_store();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let start = Instant::now();

    for epoch in 1..=cfg.epochs {
        let batches = make_batches(
            corpus,
            vocab_src,
            vocab_trg,
            cfg.batch_size,
            cfg.max_len,
            cfg.seed.wrapping_add(epoch as u64),
        )?;
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(
            cfg.seed
                .wrapping_mul(0x9e37_79b9)
                .wrapping_add(epoch as u64),
        );
        let mut epoch_loss = 0.0;
        let mut epoch_tokens = 0usize;

        for batch in &batches {
            grads.zero();
            for i in 0..batch.len() {
                let (src, trg) = batch.sentence(i);
                let lex = lexicon.map(|l| Rc::new(l.build_matrix(src)));
                let plan = (cfg.dropout > 0.0).then(|| {
                    DropoutPlan::generate(
                        params.cfg.hidden,
                        src.len(),
                        trg.len(),
                        cfg.dropout,
                        &mut dropout_rng,
                    )
                });
                epoch_loss +=
                    sentence_loss(params, src, trg, lex.as_ref(), plan.as_ref(), &mut grads)?;
                epoch_tokens += trg.len();
            }
            grads.scale(1.0 / batch.len() as f64);
            adam.step(params, &grads)?;
        }

        let (dev_loss, dev_bleu) = match dev {
            Some(dev_corpus) => {
                let (loss, bleu) = evaluate_dev(params, dev_corpus, vocab_src, vocab_trg, lexicon)?;
                (Some(loss), Some(bleu))
            }
            None => (None, None),
        };
        let stats = EpochStats {
            epoch,
            train_loss: epoch_loss / epoch_tokens as f64,
            dev_loss,
            dev_bleu,
            wallclock_seconds: start.elapsed().as_secs_f64(),
        };
        let keep_going = match on_epoch.as_deref_mut() {
            Some(callback) => callback(&stats, params),
            None => true,
        };
        curve.push(stats);
        if !keep_going {
            break;
        }
    }
    Ok(curve)
}

/// Dev-set per-token NLL and greedy-decoding BLEU (undiscounted, no unknown
/// replacement; hypotheses are compared against the raw reference tokens).
pub fn evaluate_dev(
    params: &ModelParams,
    dev: &ParallelCorpus,
    vocab_src: &Vocabulary,
    vocab_trg: &Vocabulary,
    lexicon: Option<&Lexicon>,
) -> Result<(f64, f64)> {
    let mut nll = 0.0;
    let mut tokens = 0usize;
    let mut hyps: Vec<Vec<String>> = Vec::with_capacity(dev.len());
    let mut refs: Vec<Vec<String>> = Vec::with_capacity(dev.len());
    for (src_toks, trg_toks) in dev.pairs() {
        let src = vocab_src.encode_source(src_toks);
        let trg = vocab_trg.encode_target(trg_toks);
        let lex = lexicon.map(|l| l.build_matrix(&src));
        nll += sentence_nll(params, &src, &trg, lex.as_ref())?;
        tokens += trg.len();

        let hyp = greedy_decode(params, lex.as_ref(), &src, 1.0, None)?;
        let surface: Vec<String> = hyp
            .tokens
            .iter()
            .filter(|&&id| id != EOS_ID)
            .map(|&id| vocab_trg.token(id).to_string())
            .collect();
        hyps.push(surface);
        refs.push(trg_toks.clone());
    }
    // Smoothed BLEU: tiny dev sets routinely have zero higher-order matches
    // early in training, and a hard 0 hides all progress from the curve.
    let bleu = bleu4_with(&hyps, &refs, true)?;
    Ok((nll / tokens as f64, bleu))
}
