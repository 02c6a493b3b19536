//! Implementations of the six subcommands. Each command resolves its
//! configuration (flags > config file > profile), writes its artifacts
//! atomically, and leaves a manifest beside the primary output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use lexnmt::corpus::{ParallelCorpus, Vocabulary};
use lexnmt::decode::{beam_search, replace_unknowns, BeamConfig, Translation};
use lexnmt::eval::{
    attention_entropy, bleu4_with, nist, paired_bootstrap, rare_word_recall, BootstrapMetric,
    EvaluationReport, RareSource,
};
use lexnmt::lexicon::{load_manual, read_dictionary, train_ibm1, Lexicon};
use lexnmt::model::{ModelConfig, ModelParams, OutputMode};
use lexnmt::train::{train, TrainConfig};
use lexnmt::write_file_atomic;

use crate::args::*;
use crate::config::{resolve, ConfigFile, Profile};
use crate::manifest::Manifest;

fn load_config(path: &Option<PathBuf>) -> Result<ConfigFile> {
    match path {
        Some(p) => ConfigFile::load(p),
        None => Ok(ConfigFile::default()),
    }
}

fn profile_of(common: &CommonOpts, config: &ConfigFile) -> Result<Profile> {
    if let Some(name) = &common.profile {
        return Profile::parse(name);
    }
    if let Some(name) = config.get::<String>("profile")? {
        return Profile::parse(&name);
    }
    Ok(Profile::Desk)
}

fn lang_of(path: &Path) -> String {
    path.extension()
        .map(|e| e.to_string_lossy().to_string())
        .unwrap_or_else(|| "xx".to_string())
}

fn read_token_lines(path: &Path) -> Result<Vec<Vec<String>>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(text
        .lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect())
}

pub fn cmd_vocab(opts: VocabOpts) -> Result<()> {
    let config = load_config(&opts.common.config)?;
    let profile = profile_of(&opts.common, &config)?.values();
    let threshold = resolve(opts.threshold, &config, "threshold", profile.threshold)?;

    let mut manifest = Manifest::new("vocab");
    manifest.set("corpus", opts.corpus.display());
    manifest.set("threshold", threshold);

    let sentences = read_token_lines(&opts.corpus)?;
    let vocab = Vocabulary::build(&sentences, threshold, &lang_of(&opts.corpus))?;
    vocab.save(&opts.output)?;
    eprintln!(
        "vocab: {} tokens (u={threshold}) -> {}",
        vocab.len(),
        opts.output.display()
    );
    manifest.output(&opts.output);
    manifest.write(&opts.output)
}

pub fn cmd_lexicon_train(opts: LexiconTrainOpts) -> Result<()> {
    let config = load_config(&opts.common.config)?;
    let profile = profile_of(&opts.common, &config)?.values();
    let iterations = resolve(
        opts.iterations,
        &config,
        "em_iterations",
        profile.em_iterations,
    )?;

    let mut manifest = Manifest::new("lexicon-train");
    manifest.set("src", opts.src.display());
    manifest.set("trg", opts.trg.display());
    manifest.set("iterations", iterations);
    manifest.set("null_word", opts.null_word);

    let vocab_src = Vocabulary::load(&opts.src_vocab, &lang_of(&opts.src))?;
    let vocab_trg = Vocabulary::load(&opts.trg_vocab, &lang_of(&opts.trg))?;
    let corpus = ParallelCorpus::from_files(&opts.src, &opts.trg)?;
    if corpus.dropped_empty > 0 {
        eprintln!("warning: dropped {} empty-line pairs", corpus.dropped_empty);
    }
    let encoded = corpus.encode_for_alignment(&vocab_src, &vocab_trg);
    let lexicon = train_ibm1(&encoded, iterations, opts.null_word, &vocab_src, &vocab_trg)?;
    lexicon.save(&opts.output, &vocab_src, &vocab_trg)?;
    eprintln!(
        "lexicon-train: {} covered source words -> {}",
        lexicon.num_covered(),
        opts.output.display()
    );
    manifest.output(&opts.output);
    manifest.write(&opts.output)
}

pub fn cmd_lexicon_merge(opts: LexiconMergeOpts) -> Result<()> {
    let mut manifest = Manifest::new("lexicon-merge");
    manifest.set("manual", opts.manual.display());

    let vocab_src = Vocabulary::load(&opts.src_vocab, "src")?;
    let vocab_trg = Vocabulary::load(&opts.trg_vocab, "trg")?;
    let entries = read_dictionary(&opts.manual)?;
    let (manual, skipped) = load_manual(&entries, &vocab_src, &vocab_trg)?;
    if skipped > 0 {
        eprintln!("warning: skipped {skipped} dictionary entries with unknown source tokens");
    }
    let merged = match &opts.auto {
        Some(auto_path) => {
            manifest.set("auto", auto_path.display());
            let auto = Lexicon::load(auto_path, &vocab_src, &vocab_trg)?;
            Lexicon::hybrid(&auto, &manual)?
        }
        None => manual,
    };
    merged.save(&opts.output, &vocab_src, &vocab_trg)?;
    eprintln!(
        "lexicon-merge: kind={} covering {} source words -> {}",
        merged.kind().as_str(),
        merged.num_covered(),
        opts.output.display()
    );
    manifest.output(&opts.output);
    manifest.write(&opts.output)
}

fn format_opt(v: Option<f64>, precision: usize) -> String {
    match v {
        Some(v) => format!("{v:.precision$}"),
        None => "NA".to_string(),
    }
}

pub fn cmd_train(opts: TrainOpts) -> Result<()> {
    let config = load_config(&opts.common.config)?;
    let profile = profile_of(&opts.common, &config)?.values();

    let mode_name: String = match &opts.mode {
        Some(m) => m.clone(),
        None => config
            .get::<String>("mode")?
            .unwrap_or_else(|| "base".to_string()),
    };
    let Some(mode) = OutputMode::parse(&mode_name) else {
        bail!("unknown mode {mode_name:?} (expected base, bias or linear)");
    };
    let seed = resolve(opts.common.seed, &config, "seed", profile.seed)?;
    let layers = resolve(opts.layers, &config, "layers", profile.layers)?;
    let hidden = resolve(opts.hidden, &config, "hidden", profile.hidden)?;
    let embed = resolve(opts.embed, &config, "embed", profile.embed)?;
    let epsilon = resolve(opts.epsilon, &config, "epsilon", profile.epsilon)?;
    let epochs = resolve(opts.epochs, &config, "epochs", profile.epochs)?;
    let batch = resolve(opts.batch, &config, "batch", profile.batch)?;
    let max_len = resolve(opts.max_len, &config, "max_len", profile.max_len)?;
    let dropout = resolve(opts.dropout, &config, "dropout", profile.dropout)?;
    let learning_rate = resolve(
        opts.learning_rate,
        &config,
        "learning_rate",
        profile.learning_rate,
    )?;

    let vocab_src = Vocabulary::load(&opts.src_vocab, &lang_of(&opts.src))?;
    let vocab_trg = Vocabulary::load(&opts.trg_vocab, &lang_of(&opts.trg))?;
    let corpus = ParallelCorpus::from_files(&opts.src, &opts.trg)?;
    if corpus.dropped_empty > 0 {
        eprintln!("warning: dropped {} empty-line pairs", corpus.dropped_empty);
    }
    let dev = match (&opts.dev_src, &opts.dev_trg) {
        (Some(s), Some(t)) => Some(ParallelCorpus::from_files(s, t)?),
        (None, None) => None,
        _ => bail!("--dev-src and --dev-trg must be given together"),
    };
    let lexicon = match &opts.lexicon {
        Some(path) => Some(Lexicon::load(path, &vocab_src, &vocab_trg)?),
        None => None,
    };
    if mode.needs_lexicon() && lexicon.is_none() {
        bail!("{mode_name} mode requires --lexicon");
    }

    let mut manifest = Manifest::new("train");
    manifest.seed(seed);
    for (key, value) in [
        ("mode", mode_name.clone()),
        ("layers", layers.to_string()),
        ("hidden", hidden.to_string()),
        ("embed", embed.to_string()),
        ("epsilon", epsilon.to_string()),
        ("epochs", epochs.to_string()),
        ("batch", batch.to_string()),
        ("max_len", max_len.to_string()),
        ("dropout", dropout.to_string()),
        ("learning_rate", learning_rate.to_string()),
    ] {
        manifest.set(key, value);
    }

    let model_cfg = ModelConfig {
        mode,
        layers,
        hidden,
        embed,
        src_vocab: vocab_src.len(),
        trg_vocab: vocab_trg.len(),
        epsilon,
    };
    let mut params = ModelParams::init(model_cfg, seed)?;
    let train_cfg = TrainConfig {
        epochs,
        batch_size: batch,
        max_len,
        dropout,
        learning_rate,
        seed,
    };
    let curve = train(
        &mut params,
        &corpus,
        &vocab_src,
        &vocab_trg,
        lexicon.as_ref(),
        dev.as_ref(),
        &train_cfg,
        None,
    )?;

    params.save(&opts.model_out)?;
    manifest.output(&opts.model_out);

    if let Some(curve_path) = &opts.curve {
        let mut tsv = String::from("epoch\ttrain_loss\tdev_loss\tdev_bleu\twallclock_seconds\n");
        for row in &curve {
            writeln!(
                tsv,
                "{}\t{:.6}\t{}\t{}\t{:.3}",
                row.epoch,
                row.train_loss,
                format_opt(row.dev_loss, 6),
                format_opt(row.dev_bleu, 2),
                row.wallclock_seconds
            )
            .unwrap();
        }
        write_file_atomic(curve_path, tsv.as_bytes())?;
        manifest.output(curve_path);
    }
    for row in &curve {
        eprintln!(
            "epoch {}: train_loss={:.4} dev_loss={} dev_bleu={}",
            row.epoch,
            row.train_loss,
            format_opt(row.dev_loss, 4),
            format_opt(row.dev_bleu, 2),
        );
    }
    manifest.write(&opts.model_out)
}

pub fn cmd_translate(opts: TranslateOpts) -> Result<()> {
    let config = load_config(&opts.common.config)?;
    let profile = profile_of(&opts.common, &config)?.values();
    let beam = resolve(opts.beam, &config, "beam", profile.beam)?;
    let eos_discount = resolve(
        opts.eos_discount,
        &config,
        "eos_discount",
        profile.eos_discount,
    )?;

    let params = ModelParams::load(&opts.model)?;
    let vocab_src = Vocabulary::load(&opts.src_vocab, "src")?;
    let vocab_trg = Vocabulary::load(&opts.trg_vocab, "trg")?;
    if vocab_src.len() != params.cfg.src_vocab || vocab_trg.len() != params.cfg.trg_vocab {
        bail!(
            "vocabulary sizes {}x{} do not match the model ({}x{})",
            vocab_src.len(),
            vocab_trg.len(),
            params.cfg.src_vocab,
            params.cfg.trg_vocab
        );
    }
    let mode_lexicon = match &opts.lexicon {
        Some(path) => Some(Lexicon::load(path, &vocab_src, &vocab_trg)?),
        None => None,
    };
    if params.cfg.mode.needs_lexicon() && mode_lexicon.is_none() {
        bail!("{} mode requires --lexicon", params.cfg.mode.as_str());
    }
    let replacement_lexicon = match &opts.replace_unk {
        Some(path) => Some(Lexicon::load(path, &vocab_src, &vocab_trg)?),
        None => None,
    };

    let mut manifest = Manifest::new("translate");
    manifest.set("model", opts.model.display());
    manifest.set("beam", beam);
    manifest.set("eos_discount", eos_discount);
    manifest.set("mode", params.cfg.mode.as_str());

    let inputs = read_token_lines(&opts.input)?;
    let beam_cfg = BeamConfig {
        beam,
        eos_discount,
        max_len: opts.max_len,
    };
    // Sentences decode independently; the indexed collect keeps output order.
    let results: Result<Vec<Option<Translation>>> = inputs
        .par_iter()
        .map(|tokens| -> Result<Option<Translation>> {
            if tokens.is_empty() {
                return Ok(None);
            }
            let src = vocab_src.encode_source(tokens);
            let matrix = mode_lexicon.as_ref().map(|l| l.build_matrix(&src));
            let hyps = beam_search(&params, matrix.as_ref(), &src, &beam_cfg)?;
            let top = hyps
                .into_iter()
                .next()
                .expect("beam returned no hypotheses");
            Ok(Some(replace_unknowns(
                &top,
                tokens,
                &src,
                replacement_lexicon.as_ref(),
                &vocab_trg,
            )))
        })
        .collect();
    let results = results?;

    let mut text = String::new();
    for translation in &results {
        match translation {
            Some(t) => writeln!(text, "{}", t.tokens.join(" ")).unwrap(),
            None => text.push('\n'),
        }
    }
    write_file_atomic(&opts.output, text.as_bytes())?;
    manifest.output(&opts.output);

    if let Some(attention_path) = &opts.attention {
        let mut tsv = String::new();
        for (i, translation) in results.iter().enumerate() {
            let Some(t) = translation else { continue };
            for (step, vector) in t.attention.iter().enumerate() {
                let joined: Vec<String> = vector.iter().map(|a| a.to_string()).collect();
                writeln!(tsv, "{i}\t{step}\t{}", joined.join(" ")).unwrap();
            }
        }
        write_file_atomic(attention_path, tsv.as_bytes())?;
        manifest.output(attention_path);
    }

    if let Some(replacements_path) = &opts.replacements {
        let mut jsonl = String::new();
        for (i, translation) in results.iter().enumerate() {
            let Some(t) = translation else { continue };
            for r in &t.replacements {
                let record = serde_json::json!({
                    "sentence": i,
                    "position": r.position,
                    "source_position": r.source_position,
                    "source_token": r.source_token,
                    "replacement": r.replacement,
                    "copied_source": r.copied_source,
                });
                writeln!(jsonl, "{record}").unwrap();
            }
        }
        write_file_atomic(replacements_path, jsonl.as_bytes())?;
        manifest.output(replacements_path);
    }
    eprintln!(
        "translate: {} sentences -> {}",
        inputs.len(),
        opts.output.display()
    );
    manifest.write(&opts.output)
}

fn read_attention_tsv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut traces = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            bail!(
                "{}:{}: expected 3 tab-separated fields",
                path.display(),
                i + 1
            );
        }
        let vector: std::result::Result<Vec<f64>, _> =
            fields[2].split(' ').map(str::parse).collect();
        traces.push(vector.map_err(|e| anyhow::anyhow!("{}:{}: {e}", path.display(), i + 1))?);
    }
    Ok(traces)
}

pub fn cmd_evaluate(opts: EvaluateOpts) -> Result<()> {
    let config = load_config(&opts.common.config)?;
    let profile = profile_of(&opts.common, &config)?.values();
    let seed = resolve(opts.common.seed, &config, "seed", profile.seed)?;
    let rare_threshold = resolve(
        opts.rare_threshold,
        &config,
        "rare_threshold",
        profile.rare_threshold,
    )?;
    let iterations = resolve(
        opts.iterations,
        &config,
        "bootstrap_iterations",
        profile.bootstrap_iterations,
    )?;

    let hyps = read_token_lines(&opts.hyp)?;
    let refs = read_token_lines(&opts.reference)?;

    let bleu = bleu4_with(&hyps, &refs, opts.smooth)?;
    let nist_score = nist(&hyps, &refs)?;
    let recall = match &opts.train_trg {
        Some(path) => {
            let train_side = read_token_lines(path)?;
            let source = if opts.rare_in_training_only {
                RareSource::TrainingOnly
            } else {
                RareSource::TrainingOrReferences
            };
            Some(rare_word_recall(
                &hyps,
                &refs,
                &train_side,
                rare_threshold,
                source,
            )?)
        }
        None => None,
    };
    let entropy = match &opts.attention {
        Some(path) => Some(attention_entropy(&read_attention_tsv(path)?)?),
        None => None,
    };

    let mut reports = vec![
        EvaluationReport::new("bleu", bleu).with("smooth", opts.smooth),
        EvaluationReport::new("nist", nist_score),
    ];
    if let Some(recall) = recall {
        reports.push(
            EvaluationReport::new("rare_word_recall", recall)
                .with("threshold", rare_threshold)
                .with(
                    "rare_source",
                    if opts.rare_in_training_only {
                        "training_only"
                    } else {
                        "training_or_references"
                    },
                ),
        );
    }
    if let Some(entropy) = entropy {
        reports.push(EvaluationReport::new("attention_entropy_bits", entropy));
    }

    let mut bootstrap_json = None;
    if let Some(baseline_path) = &opts.baseline {
        let baseline = read_token_lines(baseline_path)?;
        let metric = match opts.metric.as_deref() {
            None | Some("bleu") => BootstrapMetric::Bleu,
            Some("nist") => BootstrapMetric::Nist,
            Some(other) => bail!("unknown bootstrap metric {other:?}"),
        };
        let outcome = paired_bootstrap(&hyps, &baseline, &refs, metric, iterations, seed)?;
        println!(
            "bootstrap: system={:.2} baseline={:.2} wins={:.3} p={:.4} significant_05={}",
            outcome.score_a,
            outcome.score_b,
            outcome.wins_a,
            outcome.p_a,
            outcome.significant_at(0.05) == Some("a"),
        );
        bootstrap_json = Some(serde_json::to_value(&outcome)?);
    }

    println!("bleu={bleu:.1}");
    println!("nist={nist_score:.3}");
    if let Some(recall) = recall {
        println!("recall={recall:.2}");
    }
    if let Some(entropy) = entropy {
        println!("attn_entropy={entropy:.2}");
    }

    let mut manifest = Manifest::new("evaluate");
    manifest.seed(seed);
    manifest.set("hyp", opts.hyp.display());
    manifest.set("ref", opts.reference.display());

    let mut report_value = serde_json::json!({
        "system": opts.system,
        "metrics": reports,
    });
    if let Some(b) = bootstrap_json {
        report_value["bootstrap"] = b;
    }
    let json_text = serde_json::to_string_pretty(&report_value)?;
    write_file_atomic(&opts.output, json_text.as_bytes())?;
    manifest.output(&opts.output);

    if let Some(summary_path) = &opts.summary {
        let row = format!(
            "{}\t{:.2}\t{:.3}\t{}\t{}\n",
            opts.system,
            bleu,
            nist_score,
            recall.map_or("NA".to_string(), |r| format!("{r:.2}")),
            entropy.map_or("NA".to_string(), |h| format!("{h:.2}")),
        );
        write_file_atomic(summary_path, row.as_bytes())?;
        manifest.output(summary_path);
    }
    manifest.write(&opts.output)
}
