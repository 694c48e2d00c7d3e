//! End-to-end tests of the `cwmg` binary: exit codes, partial-failure
//! behaviour, and byte-stable outputs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cwmg::tokenizer::{write_smf, Note, NoteEventTrack};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cwmg"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn demo_track(seed: u8) -> NoteEventTrack {
    let mut track = NoteEventTrack::new("edm");
    for i in 0..6u32 {
        track.notes.push(Note {
            onset: i * 4 + (seed as u32 % 3),
            pitch: 52 + ((seed as u32 * 5 + i * 7) % 40) as u8,
            duration: 2 + (i % 4),
            velocity: 40 + ((i * 13 + seed as u32) % 80) as u8,
        });
    }
    track.normalize();
    track.tempo_changes = vec![(0, 125.0)];
    track
}

fn write_midis(dir: &Path, count: usize) {
    for i in 0..count {
        let bytes = write_smf(&demo_track(i as u8));
        std::fs::write(dir.join(format!("piece_{i}.mid")), bytes).unwrap();
    }
}

fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.cfg");
    std::fs::write(
        &path,
        "d_model = 16\nn_layers = 1\nn_heads = 2\ntype_dims = 1,2,3,2,4,2,1,1\n\
         ff_hidden = 16\nhead_hidden = 8\nmax_seq_len = 48\n\
         epochs = 2\nbatch_size = 2\nlearning_rate = 0.001\ncheckpoint_every = 2\n",
    )
    .unwrap();
    path
}

#[test]
fn tokenize_writes_one_line_per_valid_file() {
    let tmp = tempfile::tempdir().unwrap();
    let in_dir = tmp.path().join("midi");
    let out_dir = tmp.path().join("out");
    std::fs::create_dir_all(&in_dir).unwrap();
    write_midis(&in_dir, 3);

    let out = run(&[
        "tokenize",
        "--in-dir",
        in_dir.to_str().unwrap(),
        "--genre",
        "edm",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let corpus = std::fs::read_to_string(out_dir.join("corpus.jsonl")).unwrap();
    assert_eq!(corpus.lines().count(), 3);
    assert!(out_dir.join("vocab.json").exists());
    assert!(out_dir.join("manifest.txt").exists());
}

#[test]
fn tokenize_continues_past_corrupt_files() {
    let tmp = tempfile::tempdir().unwrap();
    let in_dir = tmp.path().join("midi");
    let out_dir = tmp.path().join("out");
    std::fs::create_dir_all(&in_dir).unwrap();
    write_midis(&in_dir, 2);
    std::fs::write(in_dir.join("bad.mid"), b"this is not midi").unwrap();

    let out = run(&[
        "tokenize",
        "--in-dir",
        in_dir.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "partial failure still succeeds");
    let corpus = std::fs::read_to_string(out_dir.join("corpus.jsonl")).unwrap();
    assert_eq!(corpus.lines().count(), 2);
    let report = std::fs::read_to_string(out_dir.join("tokenize_report.txt")).unwrap();
    assert!(report.contains("bad: error"));
}

#[test]
fn tokenize_empty_dir_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let in_dir = tmp.path().join("midi");
    std::fs::create_dir_all(&in_dir).unwrap();
    let out = run(&[
        "tokenize",
        "--in-dir",
        in_dir.to_str().unwrap(),
        "--out-dir",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn stats_reports_counts_and_names_bad_lines() {
    let tmp = tempfile::tempdir().unwrap();
    let in_dir = tmp.path().join("midi");
    let out_dir = tmp.path().join("out");
    std::fs::create_dir_all(&in_dir).unwrap();
    write_midis(&in_dir, 1);
    run(&[
        "tokenize",
        "--in-dir",
        in_dir.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);

    let stats_dir = tmp.path().join("stats");
    let out = run(&[
        "stats",
        "--corpus",
        out_dir.join("corpus.jsonl").to_str().unwrap(),
        "--out-dir",
        stats_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    // single-song corpus: mean words == that song's length
    let corpus = std::fs::read_to_string(out_dir.join("corpus.jsonl")).unwrap();
    let words = corpus.matches('[').count() - 1; // outer array bracket per line
    assert!(stdout.contains(&format!("{words} words total")), "{stdout}");
    assert!(stats_dir.join("stats.csv").exists());
    assert!(stats_dir.join("distribution.svg").exists());

    // corrupt line 7 is named
    let mut lines: Vec<String> = corpus.lines().map(String::from).collect();
    while lines.len() < 6 {
        lines.push(lines[0].clone());
    }
    lines.push("garbage".to_string());
    let bad_path = tmp.path().join("bad.jsonl");
    std::fs::write(&bad_path, lines.join("\n")).unwrap();
    let out = run(&[
        "stats",
        "--corpus",
        bad_path.to_str().unwrap(),
        "--out-dir",
        stats_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("line 7"),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn train_generate_render_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let in_dir = tmp.path().join("midi");
    let tok_dir = tmp.path().join("tok");
    std::fs::create_dir_all(&in_dir).unwrap();
    write_midis(&in_dir, 2);
    run(&[
        "tokenize",
        "--in-dir",
        in_dir.to_str().unwrap(),
        "--genre",
        "pop",
        "--out-dir",
        tok_dir.to_str().unwrap(),
    ]);
    let corpus = tok_dir.join("corpus.jsonl");
    let cfg = tiny_config(tmp.path());

    // train
    let train_dir = tmp.path().join("train");
    let out = run(&[
        "train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "5",
        "--out-dir",
        train_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let loss = std::fs::read_to_string(train_dir.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 1 + 2 * 9, "2 epochs × 9 series + header");
    assert!(loss.lines().nth(1).unwrap().starts_with("1,family,"));
    assert!(train_dir.join("model_epoch_0002.cwmg").exists(), "periodic checkpoint");

    // resume continues epoch numbering
    let resume_dir = tmp.path().join("resume");
    let out = run(&[
        "train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "5",
        "--resume",
        train_dir.join("model.cwmg").to_str().unwrap(),
        "--out-dir",
        resume_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let loss2 = std::fs::read_to_string(resume_dir.join("loss.csv")).unwrap();
    assert!(loss2.lines().nth(1).unwrap().starts_with("3,family,"), "{loss2}");

    // generate
    let gen_dir = tmp.path().join("gen");
    let out = run(&[
        "generate",
        "--checkpoint",
        train_dir.join("model.cwmg").to_str().unwrap(),
        "--genre",
        "pop",
        "--n-songs",
        "2",
        "--max-words",
        "40",
        "--max-bars",
        "8",
        "--seed",
        "11",
        "--out-dir",
        gen_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(gen_dir.join("songs.jsonl").exists());
    assert!(gen_dir.join("song_000.mid").exists());
    assert!(gen_dir.join("song_001.mid").exists());
    assert!(gen_dir.join("audit_000.csv").exists());

    // render the generated song twice: byte-identical SVG
    let r1 = tmp.path().join("r1.svg");
    let out = run(&[
        "render",
        "--input",
        gen_dir.join("song_000.mid").to_str().unwrap(),
        "--out",
        r1.to_str().unwrap(),
        "--out-dir",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let r2 = tmp.path().join("r2.svg");
    run(&[
        "render",
        "--input",
        gen_dir.join("song_000.mid").to_str().unwrap(),
        "--out",
        r2.to_str().unwrap(),
        "--out-dir",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(std::fs::read(&r1).unwrap(), std::fs::read(&r2).unwrap());
    // corpus line input renders too
    let out = run(&[
        "render",
        "--input",
        gen_dir.join("songs.jsonl").to_str().unwrap(),
        "--out-dir",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
}

#[test]
fn generate_zero_songs_and_bad_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let gen_dir = tmp.path().join("gen");

    // corrupt checkpoint: exit 2 and a corrupt-checkpoint message
    let fake = tmp.path().join("fake.cwmg");
    std::fs::write(&fake, b"WRONGMAGICxxxxxxxxxxxxx").unwrap();
    let out = run(&[
        "generate",
        "--checkpoint",
        fake.to_str().unwrap(),
        "--genre",
        "edm",
        "--out-dir",
        gen_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("corrupt checkpoint"),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    // a real checkpoint for the remaining cases
    let vocab = cwmg::vocab::Vocabulary::build();
    let cfg = cwmg::model::TransformerConfig {
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        type_dims: [1, 2, 3, 2, 4, 2, 1, 1],
        ff_hidden: 16,
        head_hidden: 8,
        max_seq_len: 48,
    };
    let params = cwmg::model::TransformerParams::<f32>::init(&cfg, &vocab, 0);
    let ckpt = tmp.path().join("model.cwmg");
    cwmg::model::save_checkpoint(&params, &cfg, 0, &ckpt).unwrap();

    // unknown genre: exit 2 listing the valid genres
    let out = run(&[
        "generate",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--genre",
        "salsa",
        "--out-dir",
        gen_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("edm") && stderr.contains("hiphop"), "{stderr}");

    // n = 0: exit 0, no song files
    let empty_dir = tmp.path().join("empty");
    let out = run(&[
        "generate",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--genre",
        "edm",
        "--n-songs",
        "0",
        "--out-dir",
        empty_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!empty_dir.join("songs.jsonl").exists());
    assert!(!empty_dir.join("song_000.mid").exists());

    // n = 20: twenty decoded songs, and a rerun reproduces them byte for byte
    let batch = |dir: &std::path::Path| {
        let out = run(&[
            "generate",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--genre",
            "edm",
            "--n-songs",
            "20",
            "--max-words",
            "32",
            "--max-bars",
            "4",
            "--seed",
            "23",
            "--out-dir",
            dir.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    };
    let d1 = tmp.path().join("twenty_a");
    let d2 = tmp.path().join("twenty_b");
    batch(&d1);
    batch(&d2);
    for i in 0..20 {
        let name = format!("song_{i:03}.mid");
        let a = std::fs::read(d1.join(&name)).unwrap();
        let b = std::fs::read(d2.join(&name)).unwrap();
        assert_eq!(a, b, "{name} differs across identical reruns");
    }
    let lines = std::fs::read_to_string(d1.join("songs.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 20);
}

#[test]
fn train_rejects_corpus_with_out_of_range_ids() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("bad.jsonl");
    std::fs::write(
        &corpus,
        "{\"id\": \"x\", \"genre\": \"edm\", \"words\": [[1,1,1,2,9999,2,2,1],[3,1,1,1,1,1,1,1]]}\n",
    )
    .unwrap();
    let cfg = tiny_config(tmp.path());
    let out = run(&[
        "train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2, "pre-flight validation fails before training");
    assert!(String::from_utf8_lossy(&out.stderr).contains("9999"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    std::fs::write(&cfg, "definitely_not_a_key = 1\n").unwrap();
    let in_dir = tmp.path().join("midi");
    std::fs::create_dir_all(&in_dir).unwrap();
    write_midis(&in_dir, 1);
    let out = run(&[
        "tokenize",
        "--in-dir",
        in_dir.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("definitely_not_a_key"));
}
