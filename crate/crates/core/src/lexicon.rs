//! Discrete probabilistic lexicons p(e|f): EM-learned, dictionary-uniform,
//! and fill-up hybrid, plus the per-sentence probability matrix consumed by
//! the translation model.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::corpus::{EncodedCorpus, Vocabulary, UNK_ID, UNK_TOKEN};
use crate::error::{Error, Result};
use crate::files::write_atomic;

/// Tolerance on per-source probability mass.
pub const SUM_TOLERANCE: f64 = 1e-6;

/// Probabilities below this floor are pruned after EM and their mass folded
/// into the unk entry, keeping the lexicon sparse.
pub const PRUNE_FLOOR: f64 = 1e-7;

/// Internal source key for the optional NULL word in EM. Never appears in a
/// finished lexicon.
const NULL_SOURCE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LexiconKind {
    Auto,
    Manual,
    Hybrid,
}

impl LexiconKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LexiconKind::Auto => "auto",
            LexiconKind::Manual => "manual",
            LexiconKind::Hybrid => "hybrid",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "auto" => Some(LexiconKind::Auto),
            "manual" => Some(LexiconKind::Manual),
            "hybrid" => Some(LexiconKind::Hybrid),
            _ => None,
        }
    }
}

/// Sparse map from source word id to a distribution over target word ids.
///
/// Every stored source distribution sums to 1 within [`SUM_TOLERANCE`],
/// including its unk entry. A source word is *covered* when it has at least
/// one non-unk entry; sources with nothing but unk mass are not stored.
#[derive(Debug, Clone)]
pub struct Lexicon {
    kind: LexiconKind,
    /// source id -> (target id, probability), sorted by target id.
    entries: BTreeMap<u32, Vec<(u32, f64)>>,
    src_vocab_size: usize,
    trg_vocab_size: usize,
}

impl Lexicon {
    pub fn kind(&self) -> LexiconKind {
        self.kind
    }

    pub fn src_vocab_size(&self) -> usize {
        self.src_vocab_size
    }

    pub fn trg_vocab_size(&self) -> usize {
        self.trg_vocab_size
    }

    /// Number of covered source words.
    pub fn num_covered(&self) -> usize {
        self.entries.len()
    }

    /// Whether `source` has at least one non-unk entry.
    pub fn covers(&self, source: u32) -> bool {
        self.entries.contains_key(&source)
    }

    /// The stored distribution for `source`, if covered.
    pub fn distribution(&self, source: u32) -> Option<&[(u32, f64)]> {
        self.entries.get(&source).map(Vec::as_slice)
    }

    /// Iterates covered sources in id order.
    pub fn iter(&self) -> impl Iterator<Item = (u32, &[(u32, f64)])> {
        self.entries.iter().map(|(&f, d)| (f, d.as_slice()))
    }

    /// Highest-probability non-unk translation of `source`, ties broken by
    /// lower target id. `None` when uncovered.
    pub fn best_translation(&self, source: u32) -> Option<u32> {
        let dist = self.entries.get(&source)?;
        dist.iter()
            .filter(|&&(e, _)| e != UNK_ID)
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(b.0.cmp(&a.0)))
            .map(|&(e, _)| e)
    }

    /// Checks the distribution invariants on every covered source.
    pub fn validate(&self) -> Result<()> {
        for (&f, dist) in &self.entries {
            let mut sum = 0.0;
            let mut has_real = false;
            for &(e, p) in dist {
                if (e as usize) >= self.trg_vocab_size {
                    return Err(Error::CorruptLexicon(format!(
                        "target id {e} out of range for source {f}"
                    )));
                }
                if !(0.0..=1.0 + SUM_TOLERANCE).contains(&p) {
                    return Err(Error::CorruptLexicon(format!(
                        "probability {p} out of [0,1] for source {f}"
                    )));
                }
                if e != UNK_ID {
                    has_real = true;
                }
                sum += p;
            }
            if (sum - 1.0).abs() > SUM_TOLERANCE {
                return Err(Error::CorruptLexicon(format!(
                    "distribution for source {f} sums to {sum}"
                )));
            }
            if !has_real {
                return Err(Error::CorruptLexicon(format!(
                    "source {f} stored without any non-unk entry"
                )));
            }
        }
        Ok(())
    }

    /// Completes each source distribution by assigning the probability mass
    /// not covered by real vocabulary entries to the unk symbol, then
    /// normalizing exactly.
    ///
    /// Sources left without any non-unk entry are dropped (they behave
    /// identically to uncovered sources).
    pub fn allocate_unk(mut self) -> Result<Self> {
        let mut completed = BTreeMap::new();
        for (f, dist) in std::mem::take(&mut self.entries) {
            let mut real: Vec<(u32, f64)> =
                dist.into_iter().filter(|&(e, _)| e != UNK_ID).collect();
            if real.is_empty() {
                continue;
            }
            real.sort_by_key(|&(e, _)| e);
            let mass: f64 = real.iter().map(|&(_, p)| p).sum();
            if mass > 1.0 + SUM_TOLERANCE {
                return Err(Error::CorruptLexicon(format!(
                    "source {f} has in-vocabulary mass {mass} > 1"
                )));
            }
            let unk_mass = (1.0 - mass).max(0.0);
            let mut dist = Vec::with_capacity(real.len() + 1);
            if unk_mass > 0.0 {
                dist.push((UNK_ID, unk_mass));
            }
            dist.extend(real);
            let total: f64 = dist.iter().map(|&(_, p)| p).sum();
            for (_, p) in &mut dist {
                *p /= total;
            }
            completed.insert(f, dist);
        }
        self.entries = completed;
        Ok(self)
    }

    /// Fill-up merge: sources covered by `auto` keep the automatic
    /// distribution unchanged; sources covered only by `manual` fall back to
    /// the manual distribution.
    pub fn hybrid(auto: &Lexicon, manual: &Lexicon) -> Result<Lexicon> {
        if auto.src_vocab_size != manual.src_vocab_size
            || auto.trg_vocab_size != manual.trg_vocab_size
        {
            return Err(Error::VocabularyMismatch(format!(
                "auto lexicon is {}x{}, manual lexicon is {}x{}",
                auto.src_vocab_size,
                auto.trg_vocab_size,
                manual.src_vocab_size,
                manual.trg_vocab_size
            )));
        }
        let mut entries = auto.entries.clone();
        for (&f, dist) in &manual.entries {
            entries.entry(f).or_insert_with(|| dist.clone());
        }
        Ok(Lexicon {
            kind: LexiconKind::Hybrid,
            entries,
            src_vocab_size: auto.src_vocab_size,
            trg_vocab_size: auto.trg_vocab_size,
        })
    }

    /// Materializes the per-sentence probability matrix: column `j` is the
    /// distribution of source word `F[j]`; uncovered source words get the
    /// unk indicator column.
    pub fn build_matrix(&self, source_ids: &[u32]) -> LexiconMatrix {
        let cols = source_ids
            .iter()
            .map(|&f| match self.entries.get(&f) {
                Some(dist) => dist.clone(),
                None => vec![(UNK_ID, 1.0)],
            })
            .collect();
        LexiconMatrix {
            cols,
            num_rows: self.trg_vocab_size,
        }
    }

    /// Writes the lexicon as TSV: a `#kind=` header, then
    /// `source \t target \t probability` sorted by source token and
    /// descending probability.
    pub fn save(&self, path: &Path, vocab_src: &Vocabulary, vocab_trg: &Vocabulary) -> Result<()> {
        let mut rows: Vec<(&str, &str, f64)> = Vec::new();
        for (&f, dist) in &self.entries {
            let src_tok = vocab_src.token(f);
            for &(e, p) in dist {
                rows.push((src_tok, vocab_trg.token(e), p));
            }
        }
        rows.sort_by(|a, b| {
            a.0.cmp(b.0)
                .then_with(|| b.2.partial_cmp(&a.2).unwrap())
                .then_with(|| a.1.cmp(b.1))
        });
        let mut out = String::new();
        writeln!(out, "#kind={}", self.kind.as_str()).unwrap();
        for (f, e, p) in rows {
            writeln!(out, "{f}\t{e}\t{p}").unwrap();
        }
        write_atomic(path, out.as_bytes())
    }

    /// Reads a lexicon written by [`Lexicon::save`]. All tokens must be
    /// resolvable in the given vocabularies.
    pub fn load(path: &Path, vocab_src: &Vocabulary, vocab_trg: &Vocabulary) -> Result<Lexicon> {
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: path.display().to_string(),
            line,
            msg,
        };
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing #kind= header".into()))??;
        let kind = header
            .strip_prefix("#kind=")
            .and_then(LexiconKind::parse)
            .ok_or_else(|| {
                parse_err(
                    1,
                    format!("expected #kind=auto|manual|hybrid, got {header:?}"),
                )
            })?;

        let mut entries: BTreeMap<u32, Vec<(u32, f64)>> = BTreeMap::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let (src, trg, prob) = match (fields.next(), fields.next(), fields.next()) {
                (Some(s), Some(t), Some(p)) => (s, t, p),
                _ => return Err(parse_err(i + 2, "expected 3 tab-separated fields".into())),
            };
            let f = vocab_src.id(src).ok_or_else(|| {
                parse_err(i + 2, format!("source token {src:?} not in vocabulary"))
            })?;
            let e = if trg == UNK_TOKEN {
                UNK_ID
            } else {
                vocab_trg.id(trg).ok_or_else(|| {
                    parse_err(i + 2, format!("target token {trg:?} not in vocabulary"))
                })?
            };
            let p: f64 = prob
                .parse()
                .map_err(|err| parse_err(i + 2, format!("bad probability: {err}")))?;
            entries.entry(f).or_default().push((e, p));
        }
        for dist in entries.values_mut() {
            dist.sort_by_key(|&(e, _)| e);
        }
        let lexicon = Lexicon {
            kind,
            entries,
            src_vocab_size: vocab_src.len(),
            trg_vocab_size: vocab_trg.len(),
        };
        lexicon.validate()?;
        Ok(lexicon)
    }
}

/// Raw IBM Model 1 output: the translation table and the per-iteration
/// corpus log-likelihood (evaluated at the parameters entering each E-step).
#[derive(Debug, Clone)]
pub struct Ibm1Table {
    /// source id -> (target id, p(e|f)), sorted by target id.
    pub probs: BTreeMap<u32, Vec<(u32, f64)>>,
    pub log_likelihoods: Vec<f64>,
}

/// Runs IBM Model 1 expectation maximization on an id-encoded corpus.
///
/// Translation probabilities are initialized uniformly over the target words
/// co-occurring with each source word. With `null_word` set, a NULL source
/// position participates in every sentence; its row is dropped from the
/// returned table.
pub fn ibm1_em(corpus: &EncodedCorpus, iterations: usize, null_word: bool) -> Result<Ibm1Table> {
    if corpus.pairs.is_empty() {
        return Err(Error::EmptyCorpus("IBM Model 1 training".into()));
    }
    if iterations < 1 {
        return Err(Error::InvalidConfig(
            "EM needs at least one iteration".into(),
        ));
    }
    for (i, (src, trg)) in corpus.pairs.iter().enumerate() {
        if trg.is_empty() {
            return Err(Error::EmptySentence {
                index: i,
                side: "target",
            });
        }
        if src.is_empty() && !null_word {
            return Err(Error::EmptySentence {
                index: i,
                side: "source",
            });
        }
    }

    let extend_with_null = |src: &[u32], buf: &mut Vec<u32>| {
        buf.clear();
        buf.extend_from_slice(src);
        if null_word {
            buf.push(NULL_SOURCE);
        }
    };

    // Co-occurrence support; EM on this support has the same fixed point as
    // initializing uniformly over the whole target vocabulary.
    let mut support: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    let mut buf: Vec<u32> = Vec::new();
    for (src, trg) in &corpus.pairs {
        extend_with_null(src, &mut buf);
        for &f in &buf {
            let set = support.entry(f).or_default();
            set.extend(trg.iter().copied());
        }
    }

    let mut table: HashMap<(u32, u32), f64> = HashMap::new();
    for (&f, targets) in &support {
        let p = 1.0 / targets.len() as f64;
        for &e in targets {
            table.insert((f, e), p);
        }
    }

    let mut log_likelihoods = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let mut counts: HashMap<(u32, u32), f64> = HashMap::with_capacity(table.len());
        let mut ll = 0.0;
        for (src, trg) in &corpus.pairs {
            extend_with_null(src, &mut buf);
            let norm = (buf.len() as f64).ln();
            for &e in trg {
                let denom: f64 = buf.iter().map(|&f| table[&(f, e)]).sum();
                ll += denom.ln() - norm;
                for &f in &buf {
                    *counts.entry((f, e)).or_insert(0.0) += table[&(f, e)] / denom;
                }
            }
        }
        log_likelihoods.push(ll);

        // M-step: normalize per source word in sorted target order so the
        // summation order (and hence the result bits) never varies.
        for (&f, targets) in &support {
            let total: f64 = targets.iter().map(|&e| counts[&(f, e)]).sum();
            for &e in targets {
                table.insert((f, e), counts[&(f, e)] / total);
            }
        }
    }

    let mut probs: BTreeMap<u32, Vec<(u32, f64)>> = BTreeMap::new();
    for (&f, targets) in &support {
        if f == NULL_SOURCE {
            continue;
        }
        let dist: Vec<(u32, f64)> = targets.iter().map(|&e| (e, table[&(f, e)])).collect();
        probs.insert(f, dist);
    }
    Ok(Ibm1Table {
        probs,
        log_likelihoods,
    })
}

/// Trains the automatic lexicon: EM, pruning of probabilities below
/// [`PRUNE_FLOOR`], and allocation of the leftover mass to unk.
pub fn train_ibm1(
    corpus: &EncodedCorpus,
    iterations: usize,
    null_word: bool,
    vocab_src: &Vocabulary,
    vocab_trg: &Vocabulary,
) -> Result<Lexicon> {
    let table = ibm1_em(corpus, iterations, null_word)?;
    let mut entries: BTreeMap<u32, Vec<(u32, f64)>> = BTreeMap::new();
    for (f, dist) in table.probs {
        let kept: Vec<(u32, f64)> = dist
            .into_iter()
            .filter(|&(e, p)| e != UNK_ID && p >= PRUNE_FLOOR)
            .collect();
        if !kept.is_empty() {
            entries.insert(f, kept);
        }
    }
    let lexicon = Lexicon {
        kind: LexiconKind::Auto,
        entries,
        src_vocab_size: vocab_src.len(),
        trg_vocab_size: vocab_trg.len(),
    };
    let lexicon = lexicon.allocate_unk()?;
    lexicon.validate()?;
    Ok(lexicon)
}

/// Builds the dictionary lexicon: a uniform distribution over the dictionary
/// translations of each source word, with out-of-vocabulary targets
/// contributing their share to unk.
///
/// Entries whose source token is out of the source vocabulary cannot be
/// indexed and are skipped; the skip count is returned alongside.
pub fn load_manual(
    entries: &[(String, String)],
    vocab_src: &Vocabulary,
    vocab_trg: &Vocabulary,
) -> Result<(Lexicon, usize)> {
    if entries.is_empty() {
        return Err(Error::EmptyCorpus(
            "manual dictionary has no entries".into(),
        ));
    }
    let mut skipped = 0usize;
    let mut translations: BTreeMap<u32, BTreeSet<String>> = BTreeMap::new();
    for (src, trg) in entries {
        match vocab_src.id(src) {
            Some(f) => {
                translations.entry(f).or_default().insert(trg.clone());
            }
            None => skipped += 1,
        }
    }
    let mut lex_entries: BTreeMap<u32, Vec<(u32, f64)>> = BTreeMap::new();
    for (f, targets) in translations {
        let share = 1.0 / targets.len() as f64;
        let mut dist: BTreeMap<u32, f64> = BTreeMap::new();
        for trg in &targets {
            let e = vocab_trg.id(trg).unwrap_or(UNK_ID);
            *dist.entry(e).or_insert(0.0) += share;
        }
        let has_real = dist.keys().any(|&e| e != UNK_ID);
        if has_real {
            lex_entries.insert(f, dist.into_iter().collect());
        }
    }
    let lexicon = Lexicon {
        kind: LexiconKind::Manual,
        entries: lex_entries,
        src_vocab_size: vocab_src.len(),
        trg_vocab_size: vocab_trg.len(),
    };
    let lexicon = lexicon.allocate_unk()?;
    lexicon.validate()?;
    Ok((lexicon, skipped))
}

/// Reads a manual dictionary file: `source \t target`, one pair per line,
/// multiple lines per source allowed.
pub fn read_dictionary(path: &Path) -> Result<Vec<(String, String)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut entries = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        match (fields.next(), fields.next()) {
            (Some(src), Some(trg)) if !src.is_empty() && !trg.is_empty() => {
                entries.push((src.to_string(), trg.to_string()));
            }
            _ => {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    msg: "expected `source\\ttarget`".into(),
                })
            }
        }
    }
    Ok(entries)
}

/// Per-sentence sparse |V_e| x |F| matrix of lexical probabilities; column
/// `j` is the lexicon distribution of source word `F[j]` and sums to 1.
#[derive(Debug, Clone)]
pub struct LexiconMatrix {
    /// One sparse column per source position, sorted by target id.
    cols: Vec<Vec<(u32, f64)>>,
    num_rows: usize,
}

impl LexiconMatrix {
    /// Builds a matrix directly from sparse columns. Each column must be a
    /// distribution over target ids below `num_rows`.
    pub fn from_columns(cols: Vec<Vec<(u32, f64)>>, num_rows: usize) -> Result<Self> {
        let matrix = LexiconMatrix { cols, num_rows };
        matrix.validate()?;
        Ok(matrix)
    }

    pub fn num_cols(&self) -> usize {
        self.cols.len()
    }

    pub fn num_rows(&self) -> usize {
        self.num_rows
    }

    pub fn column(&self, j: usize) -> &[(u32, f64)] {
        &self.cols[j]
    }

    /// Weights the columns by an attention vector: returns the dense
    /// predictive distribution `L_F · a` over the target vocabulary.
    pub fn predictive(&self, attention: &[f64]) -> Result<Vec<f64>> {
        if attention.len() != self.cols.len() {
            return Err(Error::DimensionMismatch(format!(
                "attention has {} entries for {} source words",
                attention.len(),
                self.cols.len()
            )));
        }
        let sum: f64 = attention.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE || attention.iter().any(|&a| a < 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "attention vector sums to {sum}"
            )));
        }
        Ok(self.weighted_columns(attention))
    }

    /// The raw column mix without distribution checks; used inside the
    /// model's forward pass where the attention vector is a softmax output.
    pub fn weighted_columns(&self, weights: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_rows];
        for (col, &w) in self.cols.iter().zip(weights) {
            for &(e, p) in col {
                out[e as usize] += w * p;
            }
        }
        out
    }

    /// Checks that every column is a distribution.
    pub fn validate(&self) -> Result<()> {
        for (j, col) in self.cols.iter().enumerate() {
            let sum: f64 = col.iter().map(|&(_, p)| p).sum();
            if (sum - 1.0).abs() > SUM_TOLERANCE {
                return Err(Error::InvalidDistribution(format!(
                    "lexicon matrix column {j} sums to {sum}"
                )));
            }
            if col.iter().any(|&(_, p)| p < 0.0) {
                return Err(Error::InvalidDistribution(format!(
                    "lexicon matrix column {j} has a negative entry"
                )));
            }
        }
        Ok(())
    }
}
