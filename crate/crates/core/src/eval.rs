//! Scoring and analysis: corpus BLEU-4, NIST, rare-word recall, paired
//! bootstrap significance, and attention entropy.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

const BLEU_ORDER: usize = 4;
const NIST_ORDER: usize = 5;

/// A metric result with the configuration that produced it.
#[derive(Debug, Clone, Serialize)]
pub struct EvaluationReport {
    pub metric: String,
    pub score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_sentence: Option<Vec<f64>>,
    pub config: BTreeMap<String, String>,
}

impl EvaluationReport {
    pub fn new(metric: &str, score: f64) -> Self {
        EvaluationReport {
            metric: metric.to_string(),
            score,
            per_sentence: None,
            config: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.config.insert(key.to_string(), value.to_string());
        self
    }
}

fn check_aligned(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<()> {
    if hyps.is_empty() {
        return Err(Error::EmptyCorpus("no hypotheses to score".into()));
    }
    if hyps.len() != refs.len() {
        return Err(Error::MisalignedCorpus {
            src: hyps.len(),
            trg: refs.len(),
        });
    }
    Ok(())
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts: HashMap<&[String], u64> = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Per-sentence BLEU sufficient statistics: clipped n-gram matches and
/// totals for n = 1..4 plus both lengths. Corpus BLEU is a function of
/// their sums, which is what makes bootstrap resampling cheap.
#[derive(Debug, Clone, Copy, Default)]
struct BleuStats {
    matches: [u64; BLEU_ORDER],
    totals: [u64; BLEU_ORDER],
    hyp_len: u64,
    ref_len: u64,
}

impl BleuStats {
    fn add(&mut self, other: &BleuStats) {
        for n in 0..BLEU_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }
}

fn bleu_sentence_stats(hyp: &[String], reference: &[String]) -> BleuStats {
    let mut stats = BleuStats {
        hyp_len: hyp.len() as u64,
        ref_len: reference.len() as u64,
        ..Default::default()
    };
    for n in 1..=BLEU_ORDER {
        let hyp_grams = ngram_counts(hyp, n);
        let ref_grams = ngram_counts(reference, n);
        let mut matched = 0u64;
        for (gram, &count) in &hyp_grams {
            matched += count.min(ref_grams.get(gram).copied().unwrap_or(0));
        }
        stats.matches[n - 1] = matched;
        stats.totals[n - 1] = hyp.len().saturating_sub(n - 1) as u64;
    }
    stats
}

/// Corpus BLEU from summed statistics, scaled to [0, 100].
///
/// Orders with no hypothesis n-grams at all (corpus shorter than n) are
/// excluded from the geometric mean, so a corpus scored against itself is
/// always 100. With `smooth`, orders above 1 use add-one smoothing, which
/// keeps toy-corpus training curves informative.
fn bleu_from_stats(stats: &BleuStats, smooth: bool) -> f64 {
    if stats.hyp_len == 0 {
        return 0.0;
    }
    let mut log_precision_sum = 0.0;
    let mut orders = 0usize;
    for n in 0..BLEU_ORDER {
        if stats.totals[n] == 0 {
            continue;
        }
        orders += 1;
        let p = if smooth && n > 0 {
            (stats.matches[n] as f64 + 1.0) / (stats.totals[n] as f64 + 1.0)
        } else {
            stats.matches[n] as f64 / stats.totals[n] as f64
        };
        if p == 0.0 {
            return 0.0;
        }
        log_precision_sum += p.ln();
    }
    if orders == 0 {
        return 0.0;
    }
    let brevity = (1.0 - stats.ref_len as f64 / stats.hyp_len as f64).min(0.0);
    100.0 * (log_precision_sum / orders as f64 + brevity).exp()
}

/// Corpus-level single-reference BLEU-4 with the strict zero-precision rule.
pub fn bleu4(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<f64> {
    bleu4_with(hyps, refs, false)
}

/// BLEU-4 with optional add-one smoothing of the higher-order precisions.
pub fn bleu4_with(hyps: &[Vec<String>], refs: &[Vec<String>], smooth: bool) -> Result<f64> {
    check_aligned(hyps, refs)?;
    let mut total = BleuStats::default();
    for (hyp, reference) in hyps.iter().zip(refs) {
        total.add(&bleu_sentence_stats(hyp, reference));
    }
    Ok(bleu_from_stats(&total, smooth))
}

/// Reference-corpus n-gram information weights:
/// info(w1..wn) = log2(count(w1..w_{n-1}) / count(w1..wn)), with the unigram
/// denominator being the total reference word count.
struct NistInfo {
    counts: Vec<HashMap<Vec<String>, u64>>,
    total_words: u64,
}

impl NistInfo {
    fn build(refs: &[Vec<String>]) -> Self {
        let mut counts: Vec<HashMap<Vec<String>, u64>> = vec![HashMap::new(); NIST_ORDER];
        let mut total_words = 0u64;
        for reference in refs {
            total_words += reference.len() as u64;
            for n in 1..=NIST_ORDER {
                if reference.len() < n {
                    break;
                }
                for gram in reference.windows(n) {
                    *counts[n - 1].entry(gram.to_vec()).or_insert(0) += 1;
                }
            }
        }
        NistInfo {
            counts,
            total_words,
        }
    }

    fn info(&self, gram: &[String]) -> Option<f64> {
        let n = gram.len();
        let count = *self.counts[n - 1].get(gram)?;
        let context = if n == 1 {
            self.total_words
        } else {
            *self.counts[n - 2].get(&gram[..n - 1])?
        };
        Some((context as f64 / count as f64).log2())
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct NistStats {
    weighted_matches: [f64; NIST_ORDER],
    totals: [u64; NIST_ORDER],
    hyp_len: u64,
    ref_len: u64,
}

impl NistStats {
    fn add(&mut self, other: &NistStats) {
        for n in 0..NIST_ORDER {
            self.weighted_matches[n] += other.weighted_matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }
}

fn nist_sentence_stats(hyp: &[String], reference: &[String], info: &NistInfo) -> NistStats {
    let mut stats = NistStats {
        hyp_len: hyp.len() as u64,
        ref_len: reference.len() as u64,
        ..Default::default()
    };
    for n in 1..=NIST_ORDER {
        stats.totals[n - 1] = hyp.len().saturating_sub(n - 1) as u64;
        if hyp.len() < n {
            continue;
        }
        let ref_grams = ngram_counts(reference, n);
        let mut hyp_grams: HashMap<&[String], u64> = HashMap::new();
        for gram in hyp.windows(n) {
            *hyp_grams.entry(gram).or_insert(0) += 1;
        }
        for (gram, &count) in &hyp_grams {
            let clipped = count.min(ref_grams.get(gram).copied().unwrap_or(0));
            if clipped > 0 {
                if let Some(weight) = info.info(gram) {
                    stats.weighted_matches[n - 1] += clipped as f64 * weight;
                }
            }
        }
    }
    stats
}

/// NIST brevity beta, chosen so the factor is 0.5 at a 2/3 length ratio.
fn nist_beta() -> f64 {
    0.5f64.ln() / (2.0f64 / 3.0).ln().powi(2)
}

fn nist_from_stats(stats: &NistStats) -> f64 {
    if stats.hyp_len == 0 {
        return 0.0;
    }
    let mut score = 0.0;
    for n in 0..NIST_ORDER {
        if stats.totals[n] > 0 {
            score += stats.weighted_matches[n] / stats.totals[n] as f64;
        }
    }
    let ratio = (stats.hyp_len as f64 / stats.ref_len as f64).min(1.0);
    score * (nist_beta() * ratio.ln().powi(2)).exp()
}

/// Corpus NIST over n-gram orders 1..5, with information weights computed
/// from the reference corpus.
pub fn nist(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<f64> {
    check_aligned(hyps, refs)?;
    let info = NistInfo::build(refs);
    let mut total = NistStats::default();
    for (hyp, reference) in hyps.iter().zip(refs) {
        total.add(&nist_sentence_stats(hyp, reference, &info));
    }
    Ok(nist_from_stats(&total))
}

/// Which corpora define a token as rare.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RareSource {
    /// Rare in the training corpus OR rare in the references.
    TrainingOrReferences,
    /// Rare in the training corpus only.
    TrainingOnly,
}

/// Occurrence-level recall of rare reference tokens, in percent.
///
/// A reference token type is rare when its count in the target training
/// corpus (or, under [`RareSource::TrainingOrReferences`], in the references)
/// is below `threshold`. Recovery is counted per sentence with clipping:
/// min(hypothesis count, reference count) occurrences count as recovered.
pub fn rare_word_recall(
    hyps: &[Vec<String>],
    refs: &[Vec<String>],
    train_target: &[Vec<String>],
    threshold: u64,
    source: RareSource,
) -> Result<f64> {
    if threshold < 1 {
        return Err(Error::InvalidConfig(
            "rare-word threshold must be >= 1".into(),
        ));
    }
    check_aligned(hyps, refs)?;
    let mut train_counts: HashMap<&str, u64> = HashMap::new();
    for sentence in train_target {
        for token in sentence {
            *train_counts.entry(token).or_insert(0) += 1;
        }
    }
    let mut ref_counts: HashMap<&str, u64> = HashMap::new();
    for sentence in refs {
        for token in sentence {
            *ref_counts.entry(token).or_insert(0) += 1;
        }
    }
    let is_rare = |token: &str| -> bool {
        let in_train = train_counts.get(token).copied().unwrap_or(0) < threshold;
        match source {
            RareSource::TrainingOnly => in_train,
            RareSource::TrainingOrReferences => {
                in_train || ref_counts.get(token).copied().unwrap_or(0) < threshold
            }
        }
    };

    let mut recovered = 0u64;
    let mut total = 0u64;
    for (hyp, reference) in hyps.iter().zip(refs) {
        let mut ref_occ: HashMap<&str, u64> = HashMap::new();
        for token in reference {
            if is_rare(token) {
                *ref_occ.entry(token).or_insert(0) += 1;
            }
        }
        if ref_occ.is_empty() {
            continue;
        }
        let mut hyp_occ: HashMap<&str, u64> = HashMap::new();
        for token in hyp {
            *hyp_occ.entry(token).or_insert(0) += 1;
        }
        for (token, &count) in &ref_occ {
            total += count;
            recovered += count.min(hyp_occ.get(token).copied().unwrap_or(0));
        }
    }
    if total == 0 {
        // No rare tokens to recover.
        return Ok(100.0);
    }
    Ok(100.0 * recovered as f64 / total as f64)
}

/// Metric resampled by the paired bootstrap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BootstrapMetric {
    Bleu,
    Nist,
}

/// Paired bootstrap outcome over two systems' outputs.
#[derive(Debug, Clone, Serialize)]
pub struct BootstrapOutcome {
    pub iterations: usize,
    /// Full-corpus scores of the two systems.
    pub score_a: f64,
    pub score_b: f64,
    /// Fractions of resamples each system strictly won.
    pub wins_a: f64,
    pub wins_b: f64,
    pub ties: f64,
    /// One-sided p-values: the probability that the named system is *not*
    /// strictly better on a resample.
    pub p_a: f64,
    pub p_b: f64,
}

impl BootstrapOutcome {
    /// The system significantly better at `level`, if any.
    pub fn significant_at(&self, level: f64) -> Option<&'static str> {
        if self.p_a < level {
            Some("a")
        } else if self.p_b < level {
            Some("b")
        } else {
            None
        }
    }
}

/// Paired bootstrap resampling: draw sentence indices with replacement,
/// recompute the corpus metric for both systems on each resample, and report
/// win rates and one-sided significance. NIST information weights are fixed
/// from the full reference corpus.
pub fn paired_bootstrap(
    hyps_a: &[Vec<String>],
    hyps_b: &[Vec<String>],
    refs: &[Vec<String>],
    metric: BootstrapMetric,
    iterations: usize,
    seed: u64,
) -> Result<BootstrapOutcome> {
    check_aligned(hyps_a, refs)?;
    check_aligned(hyps_b, refs)?;
    if iterations < 1 {
        return Err(Error::InvalidConfig(
            "bootstrap needs at least one iteration".into(),
        ));
    }
    let n = refs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    type ScoreFn = Box<dyn Fn(&[usize]) -> (f64, f64)>;

    // Score a resample from per-sentence sufficient statistics.
    let (full_a, full_b, score_fn): (f64, f64, ScoreFn) = match metric {
        BootstrapMetric::Bleu => {
            let stats_a: Vec<BleuStats> = hyps_a
                .iter()
                .zip(refs)
                .map(|(h, r)| bleu_sentence_stats(h, r))
                .collect();
            let stats_b: Vec<BleuStats> = hyps_b
                .iter()
                .zip(refs)
                .map(|(h, r)| bleu_sentence_stats(h, r))
                .collect();
            let score = move |indices: &[usize]| {
                let mut sum_a = BleuStats::default();
                let mut sum_b = BleuStats::default();
                for &i in indices {
                    sum_a.add(&stats_a[i]);
                    sum_b.add(&stats_b[i]);
                }
                (
                    bleu_from_stats(&sum_a, false),
                    bleu_from_stats(&sum_b, false),
                )
            };
            let all: Vec<usize> = (0..n).collect();
            let (fa, fb) = score(&all);
            (fa, fb, Box::new(score))
        }
        BootstrapMetric::Nist => {
            let info = NistInfo::build(refs);
            let stats_a: Vec<NistStats> = hyps_a
                .iter()
                .zip(refs)
                .map(|(h, r)| nist_sentence_stats(h, r, &info))
                .collect();
            let stats_b: Vec<NistStats> = hyps_b
                .iter()
                .zip(refs)
                .map(|(h, r)| nist_sentence_stats(h, r, &info))
                .collect();
            let score = move |indices: &[usize]| {
                let mut sum_a = NistStats::default();
                let mut sum_b = NistStats::default();
                for &i in indices {
                    sum_a.add(&stats_a[i]);
                    sum_b.add(&stats_b[i]);
                }
                (nist_from_stats(&sum_a), nist_from_stats(&sum_b))
            };
            let all: Vec<usize> = (0..n).collect();
            let (fa, fb) = score(&all);
            (fa, fb, Box::new(score))
        }
    };

    let mut wins_a = 0usize;
    let mut wins_b = 0usize;
    let mut indices = vec![0usize; n];
    for _ in 0..iterations {
        for slot in indices.iter_mut() {
            *slot = rng.random_range(0..n);
        }
        let (a, b) = score_fn(&indices);
        if a > b {
            wins_a += 1;
        } else if b > a {
            wins_b += 1;
        }
    }
    let iters = iterations as f64;
    Ok(BootstrapOutcome {
        iterations,
        score_a: full_a,
        score_b: full_b,
        wins_a: wins_a as f64 / iters,
        wins_b: wins_b as f64 / iters,
        ties: (iterations - wins_a - wins_b) as f64 / iters,
        p_a: 1.0 - wins_a as f64 / iters,
        p_b: 1.0 - wins_b as f64 / iters,
    })
}

/// Mean Shannon entropy, in bits, of attention vectors (0 log 0 = 0).
pub fn attention_entropy(traces: &[Vec<f64>]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, vector) in traces.iter().enumerate() {
        let sum: f64 = vector.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || vector.iter().any(|&a| a < 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "attention vector {i} sums to {sum}"
            )));
        }
        let mut h = 0.0;
        for &a in vector {
            if a > 0.0 {
                h -= a * a.log2();
            }
        }
        total += h;
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyCorpus("no attention vectors".into()));
    }
    Ok(total / count as f64)
}
