//! The `cwmg` command-line tool: tokenize, stats, train, generate, render.
//!
//! Settings come from an optional `key = value` config file with flag
//! overrides; every run writes its fully-resolved configuration to a
//! manifest in the output directory so results are reproducible. Exit
//! codes: 0 success, 1 internal error, 2 usage/input error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{
    load_checkpoint, save_checkpoint, TransformerConfig, TransformerParams,
};
use crate::sampling::{generate, GenerationPolicy};
use crate::tokenizer::{
    corpus_stats, from_compound_words, parse_corpus_line, parse_smf, read_corpus,
    render_piano_roll, to_compound_words, write_smf, TokenSequence,
};
use crate::training::{train, TrainConfig};
use crate::vocab::{TokenType, Vocabulary, VOCAB_VERSION};

#[derive(Parser)]
#[command(name = "cwmg", version, about = "Compound-word music transformer pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// `key = value` config file; flags override file values
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed for initialization, shuffling and sampling
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (created if missing)
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    /// Print per-file warnings and progress
    #[arg(long, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Tokenize a directory of .mid files into a corpus
    Tokenize {
        /// Directory containing Standard MIDI Files
        #[arg(long)]
        in_dir: PathBuf,
        /// Genre label stamped on every tokenized song
        #[arg(long, default_value = "unknown")]
        genre: String,
    },
    /// Token histograms and per-song counts for a corpus
    Stats {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Train on a corpus, writing checkpoints and loss curves
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// Continue from an existing checkpoint (its architecture wins)
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Use the small desk-scale architecture preset
        #[arg(long)]
        toy: bool,
    },
    /// Sample new songs from a checkpoint
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        genre: String,
        #[arg(long, default_value_t = 1)]
        n_songs: usize,
        /// Nucleus threshold applied to every token type
        #[arg(long)]
        top_p: Option<f64>,
        /// Temperature applied to every token type
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        max_words: Option<usize>,
        #[arg(long)]
        max_bars: Option<usize>,
        /// Record per-step wall times (written to separate timing files)
        #[arg(long)]
        timing: bool,
        /// Corpus file whose first song primes the generation
        #[arg(long)]
        prompt: Option<PathBuf>,
    },
    /// Render a .mid file or corpus song as an SVG piano roll
    Render {
        #[arg(long)]
        input: PathBuf,
        /// Output file (defaults to <out-dir>/<input stem>.svg)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Which corpus line to render when the input is a corpus
        #[arg(long, default_value_t = 0)]
        song_index: usize,
    },
}

/// Fully-resolved settings for one run.
struct RunConfig {
    model: TransformerConfig,
    train: TrainConfig,
    policy: GenerationPolicy,
    seed: u64,
}

impl RunConfig {
    fn defaults() -> Self {
        RunConfig {
            model: TransformerConfig::default(),
            train: TrainConfig::default(),
            policy: GenerationPolicy::default(),
            seed: 0,
        }
    }

    /// Every setting as sorted `key = value` lines (the manifest body).
    fn resolved_lines(&self) -> Vec<(String, String)> {
        let mut kv: Vec<(String, String)> = Vec::new();
        let dims: Vec<String> = self.model.type_dims.iter().map(|d| d.to_string()).collect();
        kv.push(("d_model".into(), self.model.d_model.to_string()));
        kv.push(("n_layers".into(), self.model.n_layers.to_string()));
        kv.push(("n_heads".into(), self.model.n_heads.to_string()));
        kv.push(("type_dims".into(), dims.join(",")));
        kv.push(("ff_hidden".into(), self.model.ff_hidden.to_string()));
        kv.push(("head_hidden".into(), self.model.head_hidden.to_string()));
        kv.push(("max_seq_len".into(), self.model.max_seq_len.to_string()));
        kv.push(("batch_size".into(), self.train.batch_size.to_string()));
        kv.push(("epochs".into(), self.train.epochs.to_string()));
        kv.push(("learning_rate".into(), self.train.learning_rate.to_string()));
        kv.push(("clip_norm".into(), self.train.clip_norm.to_string()));
        kv.push(("checkpoint_every".into(), self.train.checkpoint_every.to_string()));
        kv.push(("max_words".into(), self.policy.max_words.to_string()));
        kv.push(("max_bars".into(), self.policy.max_bars.to_string()));
        for t in TokenType::ALL {
            kv.push((format!("top_p_{}", t.name()), self.policy.top_p[t.index()].to_string()));
            kv.push((
                format!("temperature_{}", t.name()),
                self.policy.temperature[t.index()].to_string(),
            ));
        }
        kv.push(("seed".into(), self.seed.to_string()));
        kv.sort();
        kv
    }
}

/// Parse and resolve config text against the defaults, reporting any
/// unknown key or unparsable value. This is the full untrusted-input path
/// behind `--config`.
pub fn check_config_text(text: &str) -> Result<()> {
    let mut cfg = RunConfig::defaults();
    apply_config(&mut cfg, &parse_config_text(text)?)
}

/// Parse `key = value` config text; `#` starts a comment.
fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected `key = value`, got {raw:?}", i + 1))
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn apply_config(cfg: &mut RunConfig, map: &BTreeMap<String, String>) -> Result<()> {
    fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
        v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
    }

    // architecture preset first so explicit keys can refine it
    if let Some(v) = map.get("arch") {
        cfg.model = match v.as_str() {
            "default" => TransformerConfig::default(),
            "toy" => TransformerConfig::toy(),
            other => return Err(Error::Config(format!("arch: unknown preset {other:?}"))),
        };
    }

    for (k, v) in map {
        match k.as_str() {
            "arch" => {}
            "d_model" => cfg.model.d_model = num(k, v)?,
            "n_layers" => cfg.model.n_layers = num(k, v)?,
            "n_heads" => cfg.model.n_heads = num(k, v)?,
            "type_dims" => {
                let dims: Vec<usize> = v
                    .split(',')
                    .map(|s| num::<usize>(k, s.trim()))
                    .collect::<Result<_>>()?;
                if dims.len() != TokenType::COUNT {
                    return Err(Error::Config(format!("type_dims: expected 8 entries, got {}", dims.len())));
                }
                cfg.model.type_dims.copy_from_slice(&dims);
            }
            "ff_hidden" => cfg.model.ff_hidden = num(k, v)?,
            "head_hidden" => cfg.model.head_hidden = num(k, v)?,
            "max_seq_len" => {
                cfg.model.max_seq_len = num(k, v)?;
                cfg.train.max_seq_len = cfg.model.max_seq_len;
            }
            "batch_size" => cfg.train.batch_size = num(k, v)?,
            "epochs" => cfg.train.epochs = num(k, v)?,
            "learning_rate" => cfg.train.learning_rate = num(k, v)?,
            "clip_norm" => cfg.train.clip_norm = num(k, v)?,
            "checkpoint_every" => cfg.train.checkpoint_every = num(k, v)?,
            "max_words" => cfg.policy.max_words = num(k, v)?,
            "max_bars" => cfg.policy.max_bars = num(k, v)?,
            "top_p" => cfg.policy.top_p = [num(k, v)?; TokenType::COUNT],
            "temperature" => cfg.policy.temperature = [num(k, v)?; TokenType::COUNT],
            "seed" => cfg.seed = num(k, v)?,
            other => {
                let mut matched = false;
                for t in TokenType::ALL {
                    if other == format!("top_p_{}", t.name()) {
                        cfg.policy.top_p[t.index()] = num(k, v)?;
                        matched = true;
                    } else if other == format!("temperature_{}", t.name()) {
                        cfg.policy.temperature[t.index()] = num(k, v)?;
                        matched = true;
                    }
                }
                if !matched {
                    return Err(Error::Config(format!("unknown key {other:?}")));
                }
            }
        }
    }
    Ok(())
}

fn exit_code(err: &Error) -> i32 {
    match err {
        // internal invariants — these indicate a bug, not bad input
        Error::Dim(_) | Error::Index(_) | Error::Contract(_) => 1,
        _ => 2,
    }
}

/// Entry point for `main`; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    std::fs::create_dir_all(&cli.out_dir)?;

    let mut run_cfg = RunConfig::defaults();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path)?;
        apply_config(&mut run_cfg, &parse_config_text(&text)?)?;
    }
    if let Some(seed) = cli.seed {
        run_cfg.seed = seed;
    }
    run_cfg.train.seed = run_cfg.seed;
    run_cfg.policy.seed = run_cfg.seed;

    let vocab = Vocabulary::build();
    match cli.command {
        Command::Tokenize { in_dir, genre } => {
            cmd_tokenize(&cli.out_dir, &run_cfg, &vocab, &in_dir, &genre, cli.verbose)
        }
        Command::Stats { corpus } => cmd_stats(&cli.out_dir, &run_cfg, &vocab, &corpus),
        Command::Train { corpus, resume, epochs, batch_size, learning_rate, toy } => {
            if toy {
                run_cfg.model = TransformerConfig::toy();
                run_cfg.train.max_seq_len = run_cfg.model.max_seq_len;
            }
            if let Some(e) = epochs {
                run_cfg.train.epochs = e;
            }
            if let Some(b) = batch_size {
                run_cfg.train.batch_size = b;
            }
            if let Some(lr) = learning_rate {
                run_cfg.train.learning_rate = lr;
            }
            cmd_train(&cli.out_dir, run_cfg, &vocab, &corpus, resume.as_deref(), cli.verbose)
        }
        Command::Generate {
            checkpoint,
            genre,
            n_songs,
            top_p,
            temperature,
            max_words,
            max_bars,
            timing,
            prompt,
        } => {
            if let Some(p) = top_p {
                run_cfg.policy.top_p = [p; TokenType::COUNT];
            }
            if let Some(t) = temperature {
                run_cfg.policy.temperature = [t; TokenType::COUNT];
            }
            if let Some(w) = max_words {
                run_cfg.policy.max_words = w;
            }
            if let Some(b) = max_bars {
                run_cfg.policy.max_bars = b;
            }
            run_cfg.policy.record_timing = timing;
            cmd_generate(
                &cli.out_dir,
                run_cfg,
                &vocab,
                &checkpoint,
                &genre,
                n_songs,
                prompt.as_deref(),
                cli.verbose,
            )
        }
        Command::Render { input, out, song_index } => {
            cmd_render(&cli.out_dir, &run_cfg, &vocab, &input, out.as_deref(), song_index)
        }
    }
}

fn write_manifest(
    out_dir: &Path,
    command: &str,
    run_cfg: &RunConfig,
    extra: &[(String, String)],
) -> Result<()> {
    let mut text = String::new();
    let _ = writeln!(text, "command = {command}");
    let _ = writeln!(text, "tool_version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(text, "vocab_version = {VOCAB_VERSION}");
    for (k, v) in run_cfg.resolved_lines() {
        let _ = writeln!(text, "{k} = {v}");
    }
    for (k, v) in extra {
        let _ = writeln!(text, "{k} = {v}");
    }
    std::fs::write(out_dir.join("manifest.txt"), text)?;
    Ok(())
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

fn cmd_tokenize(
    out_dir: &Path,
    run_cfg: &RunConfig,
    vocab: &Vocabulary,
    in_dir: &Path,
    genre: &str,
    verbose: bool,
) -> Result<()> {
    vocab.genre_id_of(genre).map_err(|_| {
        Error::param(format!(
            "unknown genre {genre:?}; valid genres: {}",
            vocab.genre_labels().join(", ")
        ))
    })?;

    let mut inputs: Vec<PathBuf> = std::fs::read_dir(in_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("mid"))
        .collect();
    inputs.sort();
    if inputs.is_empty() {
        return Err(Error::param(format!("no .mid files in {}", in_dir.display())));
    }

    let mut corpus_text = String::new();
    let mut report = String::new();
    let mut successes = 0usize;
    for path in &inputs {
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("song").to_string();
        let outcome = std::fs::read(path)
            .map_err(Error::from)
            .and_then(|bytes| parse_smf(&bytes))
            .and_then(|(mut track, warnings)| {
                track.genre = genre.to_string();
                let (seq, more) = to_compound_words(&track, vocab, &name)?;
                Ok((seq, warnings.into_iter().chain(more).collect::<Vec<_>>()))
            });
        match outcome {
            Ok((seq, warnings)) => {
                corpus_text.push_str(&crate::tokenizer::write_corpus(
                    std::slice::from_ref(&seq),
                    vocab,
                ));
                let _ = writeln!(report, "{name}: ok, {} words", seq.len());
                if verbose {
                    for w in &warnings {
                        eprintln!("{name}: warning: {w}");
                    }
                }
                successes += 1;
            }
            Err(e) => {
                let _ = writeln!(report, "{name}: error: {e}");
                eprintln!("{}: error: {e}", path.display());
            }
        }
    }
    std::fs::write(out_dir.join("corpus.jsonl"), &corpus_text)?;
    std::fs::write(out_dir.join("tokenize_report.txt"), &report)?;
    std::fs::write(out_dir.join("vocab.json"), vocab.to_json())?;
    write_manifest(
        out_dir,
        "tokenize",
        run_cfg,
        &[
            ("genre".into(), genre.to_string()),
            ("in_dir".into(), in_dir.display().to_string()),
            ("files_ok".into(), successes.to_string()),
            ("files_total".into(), inputs.len().to_string()),
        ],
    )?;
    if successes == 0 {
        return Err(Error::param("every input file failed to tokenize"));
    }
    println!("tokenized {successes}/{} files into {}", inputs.len(), out_dir.join("corpus.jsonl").display());
    Ok(())
}

fn cmd_stats(out_dir: &Path, run_cfg: &RunConfig, vocab: &Vocabulary, corpus: &Path) -> Result<()> {
    let text = std::fs::read_to_string(corpus)?;
    let songs = read_corpus(&text, vocab)?;
    let stats = corpus_stats(&songs, vocab)?;
    std::fs::write(out_dir.join("stats.csv"), stats.to_csv(vocab))?;
    std::fs::write(out_dir.join("distribution.svg"), stats.to_svg(vocab))?;
    let mut songs_csv = String::from("song,words\n");
    for (id, n) in &stats.per_song {
        let _ = writeln!(songs_csv, "{id},{n}");
    }
    std::fs::write(out_dir.join("songs.csv"), songs_csv)?;
    write_manifest(
        out_dir,
        "stats",
        run_cfg,
        &[("corpus".into(), corpus.display().to_string())],
    )?;
    println!(
        "{} songs, {} words total, {:.2} mean words/song",
        stats.per_song.len(),
        stats.total_words(),
        stats.mean_words_per_song()
    );
    Ok(())
}

fn cmd_train(
    out_dir: &Path,
    mut run_cfg: RunConfig,
    vocab: &Vocabulary,
    corpus: &Path,
    resume: Option<&Path>,
    verbose: bool,
) -> Result<()> {
    let text = std::fs::read_to_string(corpus)?;
    // pre-flight: read_corpus range-checks every id against the vocabulary
    let songs = read_corpus(&text, vocab)?;

    let (mut params, start_epoch) = match resume {
        Some(path) => {
            let ckpt = load_checkpoint(path, vocab)?;
            run_cfg.model = ckpt.config;
            run_cfg.train.max_seq_len = run_cfg.train.max_seq_len.min(run_cfg.model.max_seq_len);
            (ckpt.params, ckpt.epochs_trained)
        }
        None => {
            run_cfg.model.validate()?;
            (TransformerParams::init(&run_cfg.model, vocab, run_cfg.seed), 0)
        }
    };

    let model_cfg = run_cfg.model.clone();
    let train_cfg = run_cfg.train.clone();
    let every = train_cfg.checkpoint_every;
    let report = train(
        &songs,
        &mut params,
        &model_cfg,
        &train_cfg,
        vocab,
        start_epoch,
        |epoch, params, entry| {
            if verbose {
                eprintln!("epoch {epoch}: mean loss {:.4}", entry.mean);
            }
            if every > 0 && epoch % every as u64 == 0 {
                save_checkpoint(
                    params,
                    &model_cfg,
                    epoch,
                    &out_dir.join(format!("model_epoch_{epoch:04}.cwmg")),
                )?;
            }
            Ok(())
        },
    )?;

    let final_path = out_dir.join("model.cwmg");
    save_checkpoint(&params, &model_cfg, start_epoch + train_cfg.epochs as u64, &final_path)?;
    std::fs::write(out_dir.join("loss.csv"), report.to_csv())?;
    std::fs::write(out_dir.join("vocab.json"), vocab.to_json())?;
    let ckpt_hash = sha256_hex(&std::fs::read(&final_path)?);
    write_manifest(
        out_dir,
        "train",
        &run_cfg,
        &[
            ("corpus".into(), corpus.display().to_string()),
            ("start_epoch".into(), start_epoch.to_string()),
            ("checkpoint_sha256".into(), ckpt_hash),
        ],
    )?;
    if let Some(last) = report.epochs.last() {
        println!(
            "trained {} epochs (ending at {}), final mean loss {:.4}; checkpoint {}",
            train_cfg.epochs,
            last.epoch,
            last.mean,
            final_path.display()
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_generate(
    out_dir: &Path,
    run_cfg: RunConfig,
    vocab: &Vocabulary,
    checkpoint: &Path,
    genre: &str,
    n_songs: usize,
    prompt: Option<&Path>,
    verbose: bool,
) -> Result<()> {
    if vocab.genre_id_of(genre).is_err() {
        return Err(Error::param(format!(
            "unknown genre {genre:?}; valid genres: {}",
            vocab.genre_labels().join(", ")
        )));
    }
    let ckpt_bytes = std::fs::read(checkpoint)?;
    let ckpt = crate::model::parse_checkpoint(&ckpt_bytes, vocab)?;

    let prompt_seq: Option<TokenSequence> = match prompt {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let line = text.lines().find(|l| !l.trim().is_empty()).ok_or_else(|| {
                Error::param(format!("prompt file {} is empty", path.display()))
            })?;
            Some(parse_corpus_line(line, 1, vocab)?)
        }
        None => None,
    };

    let mut corpus_text = String::new();
    for i in 0..n_songs {
        let mut policy = run_cfg.policy.clone();
        policy.seed = run_cfg.seed + i as u64;
        let result = generate(&ckpt.params, &ckpt.config, vocab, &policy, genre, prompt_seq.as_ref())?;

        let mut seq = result.sequence.clone();
        seq.source_id = format!("song_{i:03}");
        corpus_text.push_str(&crate::tokenizer::write_corpus(std::slice::from_ref(&seq), vocab));

        let track = from_compound_words(&seq, vocab)?;
        std::fs::write(out_dir.join(format!("song_{i:03}.mid")), write_smf(&track))?;
        std::fs::write(out_dir.join(format!("audit_{i:03}.csv")), result.audit_csv())?;
        if policy.record_timing {
            std::fs::write(out_dir.join(format!("timing_{i:03}.csv")), result.timing_csv())?;
        }
        if verbose {
            eprintln!(
                "song_{i:03}: {} words, {} notes",
                seq.len(),
                track.notes.len()
            );
        }
    }
    if n_songs > 0 {
        std::fs::write(out_dir.join("songs.jsonl"), &corpus_text)?;
    }
    write_manifest(
        out_dir,
        "generate",
        &run_cfg,
        &[
            ("checkpoint".into(), checkpoint.display().to_string()),
            ("checkpoint_sha256".into(), sha256_hex(&ckpt_bytes)),
            ("genre".into(), genre.to_string()),
            ("n_songs".into(), n_songs.to_string()),
        ],
    )?;
    println!("generated {n_songs} songs in {}", out_dir.display());
    Ok(())
}

fn cmd_render(
    out_dir: &Path,
    run_cfg: &RunConfig,
    vocab: &Vocabulary,
    input: &Path,
    out: Option<&Path>,
    song_index: usize,
) -> Result<()> {
    let bytes = std::fs::read(input)?;
    let track = if bytes.starts_with(b"MThd") {
        parse_smf(&bytes)?.0
    } else {
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::param("input is neither SMF nor UTF-8 corpus text"))?;
        let line = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .nth(song_index)
            .ok_or_else(|| Error::param(format!("corpus has no song at index {song_index}")))?;
        let seq = parse_corpus_line(line, song_index + 1, vocab)?;
        from_compound_words(&seq, vocab)?
    };
    let svg = render_piano_roll(&track);
    let out_path = match out {
        Some(p) => p.to_path_buf(),
        None => {
            let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("render");
            out_dir.join(format!("{stem}.svg"))
        }
    };
    std::fs::write(&out_path, svg)?;
    write_manifest(
        out_dir,
        "render",
        run_cfg,
        &[
            ("input".into(), input.display().to_string()),
            ("output".into(), out_path.display().to_string()),
        ],
    )?;
    println!("rendered {}", out_path.display());
    Ok(())
}
