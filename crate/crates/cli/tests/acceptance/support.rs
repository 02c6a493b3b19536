//! Shared apparatus for the acceptance suite: the synthetic
//! word-replacement task, independent oracles (alignment-enumeration EM,
//! exhaustive decoding), and the convergence experiment used by several
//! criteria.

use std::collections::BTreeMap;

use lexnmt::corpus::{ParallelCorpus, Vocabulary, EOS_ID};
use lexnmt::decode::greedy_decode;
use lexnmt::eval::attention_entropy;
use lexnmt::lexicon::{train_ibm1, Ibm1Table, Lexicon};
use lexnmt::model::{ModelConfig, ModelParams, OutputMode};
use lexnmt::train::{train, EpochStats, TrainConfig};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Samples indices 0..n with probability proportional to 1/(k+1).
pub struct ZipfSampler {
    cumulative: Vec<f64>,
}

impl ZipfSampler {
    pub fn new(n: usize) -> Self {
        let mut cumulative = Vec::with_capacity(n);
        let mut total = 0.0;
        for k in 0..n {
            total += 1.0 / (k + 1) as f64;
            cumulative.push(total);
        }
        for c in &mut cumulative {
            *c /= total;
        }
        ZipfSampler { cumulative }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random_range(0.0..1.0);
        self.cumulative.partition_point(|&c| c < u)
    }
}

/// A deterministic word-replacement translation task: every source word maps
/// to a fixed target word through a seeded permutation, so the reference is
/// a token-for-token function of the input.
pub struct ToyTask {
    pub train: ParallelCorpus,
    pub heldout: ParallelCorpus,
}

/// Generates the task. `unk_noise` is the fraction of *training* target
/// tokens replaced by occurrence-unique rare variants (which the vocabulary
/// threshold then maps to unk); held-out pairs stay clean.
pub fn word_replacement_task(
    seed: u64,
    n_train: usize,
    n_heldout: usize,
    vocab_size: usize,
    unk_noise: f64,
) -> ToyTask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zipf = ZipfSampler::new(vocab_size);

    let mut mapping: Vec<usize> = (0..vocab_size).collect();
    for i in (1..mapping.len()).rev() {
        mapping.swap(i, rng.random_range(0..=i));
    }

    let mut variant_counter = 0usize;
    let mut draw_pair = |rng: &mut ChaCha8Rng, noise: f64| {
        let len = rng.random_range(3..=8usize);
        let mut src = Vec::with_capacity(len);
        let mut trg = Vec::with_capacity(len);
        for _ in 0..len {
            let w = zipf.sample(rng);
            src.push(format!("s{w:03}"));
            let surface = if noise > 0.0 && rng.random_range(0.0..1.0) < noise {
                variant_counter += 1;
                format!("t{:03}~v{variant_counter}", mapping[w])
            } else {
                format!("t{:03}", mapping[w])
            };
            trg.push(surface);
        }
        (src, trg)
    };

    let train_pairs: Vec<_> = (0..n_train)
        .map(|_| draw_pair(&mut rng, unk_noise))
        .collect();
    let heldout_pairs: Vec<_> = (0..n_heldout).map(|_| draw_pair(&mut rng, 0.0)).collect();
    ToyTask {
        train: ParallelCorpus::from_pairs(train_pairs).unwrap(),
        heldout: ParallelCorpus::from_pairs(heldout_pairs).unwrap(),
    }
}

pub fn build_vocabs(task: &ToyTask, threshold: u32) -> (Vocabulary, Vocabulary) {
    let src_side: Vec<Vec<String>> = task.train.source_side().cloned().collect();
    let trg_side: Vec<Vec<String>> = task.train.target_side().cloned().collect();
    (
        Vocabulary::build(&src_side, threshold, "src").unwrap(),
        Vocabulary::build(&trg_side, threshold, "trg").unwrap(),
    )
}

pub fn auto_lexicon(
    task: &ToyTask,
    vocab_src: &Vocabulary,
    vocab_trg: &Vocabulary,
    iterations: usize,
) -> Lexicon {
    let encoded = task.train.encode_for_alignment(vocab_src, vocab_trg);
    train_ibm1(&encoded, iterations, false, vocab_src, vocab_trg).unwrap()
}

/// Position-by-position greedy token accuracy over the held-out pairs,
/// measured against the reference tokens (EOS excluded). Length mistakes
/// count as misses.
pub fn greedy_token_accuracy(
    params: &ModelParams,
    heldout: &ParallelCorpus,
    vocab_src: &Vocabulary,
    vocab_trg: &Vocabulary,
    lexicon: Option<&Lexicon>,
) -> f64 {
    let mut matches = 0usize;
    let mut total = 0usize;
    for (src_toks, trg_toks) in heldout.pairs() {
        let src = vocab_src.encode_source(src_toks);
        let reference = vocab_trg.encode_tokens(trg_toks);
        let matrix = lexicon.map(|l| l.build_matrix(&src));
        let hyp = greedy_decode(params, matrix.as_ref(), &src, 1.0, None).unwrap();
        total += reference.len();
        for (h, r) in hyp.tokens.iter().zip(reference.iter()) {
            if h == r {
                matches += 1;
            }
        }
    }
    matches as f64 / total as f64
}

/// Mean attention entropy (bits) of greedy decodes over the held-out set.
pub fn heldout_attention_entropy(
    params: &ModelParams,
    heldout: &ParallelCorpus,
    vocab_src: &Vocabulary,
    lexicon: Option<&Lexicon>,
) -> f64 {
    let mut traces: Vec<Vec<f64>> = Vec::new();
    for (src_toks, _) in heldout.pairs() {
        let src = vocab_src.encode_source(src_toks);
        let matrix = lexicon.map(|l| l.build_matrix(&src));
        let hyp = greedy_decode(params, matrix.as_ref(), &src, 1.0, None).unwrap();
        for vector in &hyp.attention {
            traces.push(vector.to_vec());
        }
    }
    attention_entropy(&traces).unwrap()
}

/// Result of one convergence run.
pub struct ConvergenceRun {
    pub epochs_to_90: Option<usize>,
    pub epochs_to_95: Option<usize>,
    pub final_accuracy: f64,
    pub attention_entropy_bits: f64,
}

/// Model/training shape shared by the convergence criteria. Dropout is off:
/// the claims under test are about convergence speed, not regularization.
pub fn convergence_model_config(mode: OutputMode, vf: usize, ve: usize) -> ModelConfig {
    ModelConfig {
        mode,
        layers: 1,
        hidden: 32,
        embed: 32,
        src_vocab: vf,
        trg_vocab: ve,
        epsilon: 1e-3,
    }
}

/// Trains `mode` on the task, tracking when 90% and 95% held-out greedy
/// token accuracy are first reached. The run continues to at least
/// `min_epochs` (so models compared afterwards saw equal budgets) and stops
/// once both that floor and the 95% mark are behind it, or at `max_epochs`.
#[allow(clippy::too_many_arguments)]
pub fn run_convergence(
    task: &ToyTask,
    vocab_src: &Vocabulary,
    vocab_trg: &Vocabulary,
    lexicon: Option<&Lexicon>,
    mode: OutputMode,
    seed: u64,
    min_epochs: usize,
    max_epochs: usize,
    learning_rate: f64,
) -> ConvergenceRun {
    let cfg = convergence_model_config(mode, vocab_src.len(), vocab_trg.len());
    let mut params = ModelParams::init(cfg, seed).unwrap();
    let train_cfg = TrainConfig {
        epochs: max_epochs,
        batch_size: 16,
        max_len: 50,
        dropout: 0.0,
        learning_rate,
        seed,
    };
    let mut epochs_to_90 = None;
    let mut epochs_to_95 = None;
    let mut final_accuracy = 0.0;
    {
        let mut callback = |stats: &EpochStats, params: &ModelParams| -> bool {
            let acc = greedy_token_accuracy(params, &task.heldout, vocab_src, vocab_trg, lexicon);
            final_accuracy = acc;
            if acc >= 0.90 && epochs_to_90.is_none() {
                epochs_to_90 = Some(stats.epoch);
            }
            if acc >= 0.95 && epochs_to_95.is_none() {
                epochs_to_95 = Some(stats.epoch);
            }
            epochs_to_95.is_none() || stats.epoch < min_epochs
        };
        train(
            &mut params,
            &task.train,
            vocab_src,
            vocab_trg,
            lexicon,
            None,
            &train_cfg,
            Some(&mut callback),
        )
        .unwrap();
    }
    let attention_entropy_bits =
        heldout_attention_entropy(&params, &task.heldout, vocab_src, lexicon);
    ConvergenceRun {
        epochs_to_90,
        epochs_to_95,
        final_accuracy,
        attention_entropy_bits,
    }
}

/// IBM Model 1 EM by explicit enumeration of all alignments, the oracle the
/// fast implementation is checked against. Initialization mirrors the
/// implementation: uniform over co-occurring targets.
pub fn enumeration_em(
    pairs: &[(Vec<u32>, Vec<u32>)],
    iterations: usize,
) -> BTreeMap<(u32, u32), f64> {
    let mut support: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for (src, trg) in pairs {
        for &f in src {
            let entry = support.entry(f).or_default();
            for &e in trg {
                if !entry.contains(&e) {
                    entry.push(e);
                }
            }
        }
    }
    for targets in support.values_mut() {
        targets.sort_unstable();
    }
    let mut table: BTreeMap<(u32, u32), f64> = BTreeMap::new();
    for (&f, targets) in &support {
        for &e in targets {
            table.insert((f, e), 1.0 / targets.len() as f64);
        }
    }

    for _ in 0..iterations {
        let mut counts: BTreeMap<(u32, u32), f64> = BTreeMap::new();
        for (src, trg) in pairs {
            let m = trg.len();
            let n_alignments = src.len().pow(m as u32);
            // Joint probability of each complete alignment.
            let mut weights = Vec::with_capacity(n_alignments);
            let mut total = 0.0;
            for code in 0..n_alignments {
                let mut c = code;
                let mut p = 1.0;
                for &e in trg.iter() {
                    let j = c % src.len();
                    c /= src.len();
                    p *= table[&(src[j], e)] / src.len() as f64;
                }
                weights.push(p);
                total += p;
            }
            // Posterior-weighted counts.
            for (code, &w) in weights.iter().enumerate() {
                let posterior = w / total;
                let mut c = code;
                for &e in trg.iter() {
                    let j = c % src.len();
                    c /= src.len();
                    *counts.entry((src[j], e)).or_insert(0.0) += posterior;
                }
            }
        }
        for (&f, targets) in &support {
            let norm: f64 = targets.iter().map(|&e| counts[&(f, e)]).sum();
            for &e in targets {
                table.insert((f, e), counts[&(f, e)] / norm);
            }
        }
    }
    table
}

/// Flattens an EM table for comparison with the oracle.
pub fn table_entries(table: &Ibm1Table) -> BTreeMap<(u32, u32), f64> {
    let mut out = BTreeMap::new();
    for (&f, dist) in &table.probs {
        for &(e, p) in dist {
            out.insert((f, e), p);
        }
    }
    out
}

/// The best hypothesis over *every* token sequence reachable in `max_len`
/// decoding steps: sequences terminated by EOS within the cap (finished) and
/// sequences cut off at the cap (unfinished), scored exactly as the beam
/// scores them. Depth-first enumeration with incremental decoder states;
/// the search space is bounded by |V_e|^max_len.
pub fn exhaustive_best(
    params: &ModelParams,
    src: &[u32],
    eos_discount: f64,
    max_len: usize,
) -> (Vec<u32>, f64, bool) {
    use lexnmt::corpus::BOS_ID;
    use lexnmt::inference::DecoderState;

    struct Search<'a> {
        params: &'a ModelParams,
        enc: lexnmt::inference::EncoderOutput,
        log_discount: f64,
        max_len: usize,
        best: Option<(Vec<u32>, f64, bool)>,
    }

    impl Search<'_> {
        fn consider(&mut self, tokens: Vec<u32>, score: f64, finished: bool) {
            let better = match &self.best {
                Some((_, s, _)) => score > *s,
                None => true,
            };
            if better {
                self.best = Some((tokens, score, finished));
            }
        }

        fn dfs(&mut self, state: &DecoderState, prefix: &mut Vec<u32>, score: f64) {
            if prefix.len() == self.max_len {
                self.consider(prefix.clone(), score, false);
                return;
            }
            let out = self.params.predict(state, &self.enc, None).unwrap();
            self.consider(
                prefix.clone(),
                score + out.distribution[EOS_ID as usize].ln() + self.log_discount,
                true,
            );
            for e in 0..self.params.cfg.trg_vocab as u32 {
                if e == EOS_ID {
                    continue;
                }
                let next_score = score + out.distribution[e as usize].ln();
                let next_state = self.params.step_decoder(state, e).unwrap();
                prefix.push(e);
                self.dfs(&next_state, prefix, next_score);
                prefix.pop();
            }
        }
    }

    let mut search = Search {
        enc: params.encode(src).unwrap(),
        params,
        log_discount: eos_discount.ln(),
        max_len,
        best: None,
    };
    let start = params
        .step_decoder(&params.initial_decoder_state(), BOS_ID)
        .unwrap();
    search.dfs(&start, &mut Vec::new(), 0.0);
    search.best.unwrap()
}
