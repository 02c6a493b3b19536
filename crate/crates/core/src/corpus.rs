//! Parallel corpus ingestion, frequency-thresholded vocabularies, id encoding,
//! and length-filtered mini-batches.
//!
//! Corpus files are whitespace-tokenized UTF-8 plain text, one sentence per
//! line, with the two sides of the corpus in separate aligned files.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::files::write_atomic;

pub const UNK_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const NUM_RESERVED: usize = 3;

pub const UNK_TOKEN: &str = "<unk>";
pub const BOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";

const RESERVED_TOKENS: [&str; NUM_RESERVED] = [UNK_TOKEN, BOS_TOKEN, EOS_TOKEN];

/// Bijection between surface tokens and integer ids with reserved
/// unk/BOS/EOS ids and a frequency threshold.
///
/// Ids 0..3 are fixed: unk=0, BOS=1, EOS=2. Every stored token occurred at
/// least `threshold` times in the corpus the vocabulary was built from.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
    threshold: u32,
    language: String,
}

impl Vocabulary {
    /// Builds a vocabulary from one side of a corpus, keeping exactly the
    /// tokens that occur at least `threshold` times.
    ///
    /// Tokens are assigned ids in order of descending frequency (ties broken
    /// lexicographically), starting after the reserved ids. Corpus tokens
    /// that collide with a reserved surface form are skipped.
    pub fn build<S: AsRef<str>>(
        sentences: &[Vec<S>],
        threshold: u32,
        language: &str,
    ) -> Result<Self> {
        if threshold < 1 {
            return Err(Error::InvalidConfig(
                "vocabulary threshold must be >= 1".into(),
            ));
        }
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for sentence in sentences {
            for token in sentence {
                let token = token.as_ref();
                if RESERVED_TOKENS.contains(&token) {
                    continue;
                }
                *counts.entry(token).or_insert(0) += 1;
            }
        }
        if counts.is_empty() {
            return Err(Error::EmptyCorpus(format!(
                "no tokens found while building the {language} vocabulary"
            )));
        }

        let mut kept: Vec<(&str, u64)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= u64::from(threshold))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut id_to_token: Vec<String> = RESERVED_TOKENS.iter().map(|t| t.to_string()).collect();
        id_to_token.extend(kept.iter().map(|&(t, _)| t.to_string()));

        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();

        Ok(Vocabulary {
            token_to_id,
            id_to_token,
            threshold,
            language: language.to_string(),
        })
    }

    /// Total number of ids, reserved symbols included.
    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false // reserved symbols are always present
    }

    pub fn threshold(&self) -> u32 {
        self.threshold
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    /// Id of an in-vocabulary token, `None` otherwise.
    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    /// Id of a token, falling back to unk for out-of-vocabulary tokens.
    pub fn encode_token(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(UNK_ID)
    }

    /// Surface form of an id. Panics on ids outside the vocabulary, which
    /// model output can never produce.
    pub fn token(&self, id: u32) -> &str {
        &self.id_to_token[id as usize]
    }

    /// Encodes a token sequence as-is. Out-of-vocabulary tokens map to unk.
    pub fn encode_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens
            .iter()
            .map(|t| self.encode_token(t.as_ref()))
            .collect()
    }

    /// Encodes a source-side sentence.
    pub fn encode_source<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        self.encode_tokens(tokens)
    }

    /// Encodes a target-side sentence and terminates it with EOS.
    pub fn encode_target<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        let mut ids = self.encode_tokens(tokens);
        ids.push(EOS_ID);
        ids
    }

    /// Maps ids back to surface tokens.
    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&id| self.token(id).to_string()).collect()
    }

    /// Writes the vocabulary file: a `#u=<threshold>` header, then one token
    /// per line in id order (reserved symbols are implicit).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        writeln!(out, "#u={}", self.threshold).unwrap();
        for token in &self.id_to_token[NUM_RESERVED..] {
            writeln!(out, "{token}").unwrap();
        }
        write_atomic(path, out.as_bytes())
    }

    /// Reads a vocabulary file written by [`Vocabulary::save`].
    pub fn load(path: &Path, language: &str) -> Result<Self> {
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: path.display().to_string(),
            line,
            msg,
        };
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing #u= header".into()))??;
        let threshold: u32 = header
            .strip_prefix("#u=")
            .ok_or_else(|| parse_err(1, format!("expected #u=<threshold>, got {header:?}")))?
            .parse()
            .map_err(|e| parse_err(1, format!("bad threshold: {e}")))?;

        let mut id_to_token: Vec<String> = RESERVED_TOKENS.iter().map(|t| t.to_string()).collect();
        for (i, line) in lines.enumerate() {
            let token = line?;
            if token.is_empty() {
                return Err(parse_err(i + 2, "empty token line".into()));
            }
            id_to_token.push(token);
        }
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(Vocabulary {
            token_to_id,
            id_to_token,
            threshold,
            language: language.to_string(),
        })
    }
}

/// A sequence of aligned (source, target) token-sequence pairs.
#[derive(Debug, Clone, Default)]
pub struct ParallelCorpus {
    pairs: Vec<(Vec<String>, Vec<String>)>,
    /// Pairs dropped at ingestion because one side was an empty line.
    pub dropped_empty: usize,
}

impl ParallelCorpus {
    /// Loads a parallel corpus from two aligned files. Pairs with an empty
    /// line on either side are dropped and counted in `dropped_empty`.
    pub fn from_files(src_path: &Path, trg_path: &Path) -> Result<Self> {
        let src_lines = read_token_lines(src_path)?;
        let trg_lines = read_token_lines(trg_path)?;
        if src_lines.len() != trg_lines.len() {
            return Err(Error::MisalignedCorpus {
                src: src_lines.len(),
                trg: trg_lines.len(),
            });
        }
        let mut pairs = Vec::with_capacity(src_lines.len());
        let mut dropped = 0usize;
        for (src, trg) in src_lines.into_iter().zip(trg_lines) {
            if src.is_empty() || trg.is_empty() {
                dropped += 1;
                continue;
            }
            pairs.push((src, trg));
        }
        if pairs.is_empty() {
            return Err(Error::EmptyCorpus(format!(
                "{} / {}",
                src_path.display(),
                trg_path.display()
            )));
        }
        Ok(ParallelCorpus {
            pairs,
            dropped_empty: dropped,
        })
    }

    /// Builds a corpus from in-memory pairs, rejecting empty sentences.
    pub fn from_pairs(pairs: Vec<(Vec<String>, Vec<String>)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyCorpus("no sentence pairs".into()));
        }
        for (i, (src, trg)) in pairs.iter().enumerate() {
            if src.is_empty() {
                return Err(Error::EmptySentence {
                    index: i,
                    side: "source",
                });
            }
            if trg.is_empty() {
                return Err(Error::EmptySentence {
                    index: i,
                    side: "target",
                });
            }
        }
        Ok(ParallelCorpus {
            pairs,
            dropped_empty: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(Vec<String>, Vec<String>)] {
        &self.pairs
    }

    pub fn source_side(&self) -> impl Iterator<Item = &Vec<String>> {
        self.pairs.iter().map(|(s, _)| s)
    }

    pub fn target_side(&self) -> impl Iterator<Item = &Vec<String>> {
        self.pairs.iter().map(|(_, t)| t)
    }

    /// Encodes every pair; target sentences are EOS-terminated.
    pub fn encode(&self, vocab_src: &Vocabulary, vocab_trg: &Vocabulary) -> EncodedCorpus {
        EncodedCorpus {
            pairs: self
                .pairs
                .iter()
                .map(|(s, t)| (vocab_src.encode_source(s), vocab_trg.encode_target(t)))
                .collect(),
        }
    }

    /// Encodes every pair without the target EOS terminator. Word alignment
    /// runs on this form; an EOS pseudo-token would soak up lexical
    /// probability mass from every source word.
    pub fn encode_for_alignment(
        &self,
        vocab_src: &Vocabulary,
        vocab_trg: &Vocabulary,
    ) -> EncodedCorpus {
        EncodedCorpus {
            pairs: self
                .pairs
                .iter()
                .map(|(s, t)| (vocab_src.encode_source(s), vocab_trg.encode_tokens(t)))
                .collect(),
        }
    }
}

fn read_token_lines(path: &Path) -> Result<Vec<Vec<String>>> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = Vec::new();
    for line in reader.lines() {
        let line = line?;
        lines.push(line.split_whitespace().map(str::to_string).collect());
    }
    Ok(lines)
}

/// A corpus encoded to id sequences. Target sequences include the final EOS.
#[derive(Debug, Clone)]
pub struct EncodedCorpus {
    pub pairs: Vec<(Vec<u32>, Vec<u32>)>,
}

/// A mini-batch of id sequences padded to the batch maximum, with masks that
/// are zero exactly at padding positions.
#[derive(Debug, Clone)]
pub struct Batch {
    pub src: Vec<Vec<u32>>,
    pub trg: Vec<Vec<u32>>,
    pub src_lens: Vec<usize>,
    pub trg_lens: Vec<usize>,
    pub src_mask: Vec<Vec<f64>>,
    pub trg_mask: Vec<Vec<f64>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    /// The unpadded ids of sentence `i`.
    pub fn sentence(&self, i: usize) -> (&[u32], &[u32]) {
        (
            &self.src[i][..self.src_lens[i]],
            &self.trg[i][..self.trg_lens[i]],
        )
    }

    fn from_pairs(pairs: &[(Vec<u32>, Vec<u32>)]) -> Batch {
        let src_max = pairs.iter().map(|(s, _)| s.len()).max().unwrap_or(0);
        let trg_max = pairs.iter().map(|(_, t)| t.len()).max().unwrap_or(0);
        let mut batch = Batch {
            src: Vec::with_capacity(pairs.len()),
            trg: Vec::with_capacity(pairs.len()),
            src_lens: Vec::with_capacity(pairs.len()),
            trg_lens: Vec::with_capacity(pairs.len()),
            src_mask: Vec::with_capacity(pairs.len()),
            trg_mask: Vec::with_capacity(pairs.len()),
        };
        for (src, trg) in pairs {
            batch.src_lens.push(src.len());
            batch.trg_lens.push(trg.len());
            batch.src.push(pad(src, src_max));
            batch.trg.push(pad(trg, trg_max));
            batch.src_mask.push(mask(src.len(), src_max));
            batch.trg_mask.push(mask(trg.len(), trg_max));
        }
        batch
    }
}

fn pad(ids: &[u32], width: usize) -> Vec<u32> {
    let mut padded = ids.to_vec();
    padded.resize(width, UNK_ID);
    padded
}

fn mask(len: usize, width: usize) -> Vec<f64> {
    let mut m = vec![1.0; len];
    m.resize(width, 0.0);
    m
}

/// Encodes a corpus and splits it into shuffled mini-batches.
///
/// Pairs where either side exceeds `max_len` raw tokens are excluded.
/// Surviving pairs are bucketed by source length to limit padding, chunked
/// into batches of at most `batch_size`, and the batch order is shuffled
/// under the seeded generator. The same seed reproduces the same batches.
pub fn make_batches(
    corpus: &ParallelCorpus,
    vocab_src: &Vocabulary,
    vocab_trg: &Vocabulary,
    batch_size: usize,
    max_len: usize,
    seed: u64,
) -> Result<Vec<Batch>> {
    if batch_size < 1 {
        return Err(Error::InvalidConfig("batch size must be >= 1".into()));
    }
    let mut kept: Vec<(Vec<u32>, Vec<u32>)> = Vec::new();
    for (src, trg) in corpus.pairs() {
        if src.len() > max_len || trg.len() > max_len {
            continue;
        }
        kept.push((vocab_src.encode_source(src), vocab_trg.encode_target(trg)));
    }
    if kept.is_empty() {
        return Err(Error::AllPairsFiltered);
    }
    // Stable sort by source length keeps the original order inside a bucket.
    kept.sort_by_key(|(src, _)| src.len());

    let mut batches: Vec<Batch> = kept.chunks(batch_size).map(Batch::from_pairs).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    batches.shuffle(&mut rng);
    Ok(batches)
}
