//! End-to-end runs of the `voicegan` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use voicegan::dsp::{load_wav, save_wav, Waveform};
use voicegan::train::{SynthSpec, TrainConfig};

fn voicegan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_voicegan"))
        .args(args)
        .env("VOICEGAN_THREADS", "1")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = voicegan(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn repo_file(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(name)
}

const SMALL_SPEC: &str = "count = 4\nduration_min_s = 0.6\nduration_max_s = 0.9\n";

/// A four-per-style corpus in `dir/corpus`.
fn small_corpus(dir: &Path, seed: u64) -> PathBuf {
    let spec = dir.join("small.conf");
    fs::write(&spec, SMALL_SPEC).unwrap();
    let out = dir.join(format!("corpus-{seed}"));
    ok(&[
        "synth-data",
        "--out",
        s(&out),
        "--spec",
        s(&spec),
        "--seed",
        &seed.to_string(),
    ]);
    out
}

/// Ten-step model trained on `corpus`; returns the run directory.
fn smoke_run(dir: &Path, corpus: &Path) -> PathBuf {
    let run = dir.join("run");
    ok(&[
        "train",
        "--data",
        s(corpus),
        "--config",
        s(&repo_file("configs/smoke.conf")),
        "--out",
        s(&run),
    ]);
    run
}

#[test]
fn shipped_configs_match_the_defaults() {
    assert_eq!(
        TrainConfig::load(repo_file("configs/desk.conf")).unwrap(),
        TrainConfig::default()
    );
    assert_eq!(
        SynthSpec::load(repo_file("configs/synth.conf")).unwrap(),
        SynthSpec::default()
    );
    let smoke = TrainConfig::load(repo_file("configs/smoke.conf")).unwrap();
    assert_eq!(smoke.steps, 10);
}

#[test]
fn synth_data_default_spec_writes_400_files() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth-data", "--out", s(dir.path())]);
    for style in ["A", "B"] {
        let n = fs::read_dir(dir.path().join(style)).unwrap().count();
        assert_eq!(n, 200);
    }
    let manifest = fs::read_to_string(dir.path().join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 401);
}

#[test]
fn synth_data_is_deterministic_and_checks_its_spec() {
    let dir = tempfile::tempdir().unwrap();
    let one = small_corpus(dir.path(), 7);
    let again = dir.path().join("again");
    fs::write(dir.path().join("small2.conf"), SMALL_SPEC).unwrap();
    ok(&[
        "synth-data",
        "--out",
        s(&again),
        "--spec",
        s(&dir.path().join("small2.conf")),
        "--seed",
        "7",
    ]);
    let read = |d: &Path| fs::read(d.join("manifest.csv")).unwrap();
    assert_eq!(read(&one), read(&again));
    assert_eq!(
        fs::read(one.join("A/utt-0002.wav")).unwrap(),
        fs::read(again.join("A/utt-0002.wav")).unwrap()
    );
    let other = small_corpus(dir.path(), 8);
    assert_ne!(read(&one), read(&other));

    let out = voicegan(&[
        "synth-data",
        "--out",
        s(dir.path()),
        "--spec",
        s(&dir.path().join("absent.conf")),
    ]);
    assert!(!out.status.success());
    let out = voicegan(&["synth-data"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_smoke_run_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path(), 1);
    let run = smoke_run(dir.path(), &corpus);
    for f in ["config.txt", "losses.csv", "ckpt-5.vgck", "ckpt-10.vgck"] {
        assert!(run.join(f).exists(), "missing {f}");
    }

    // 10 steps, then resumed to 20, equals 20 steps straight.
    let longer = dir.path().join("twenty.conf");
    fs::write(
        &longer,
        fs::read_to_string(repo_file("configs/smoke.conf")).unwrap() + "steps = 20\n",
    )
    .unwrap();
    let straight = dir.path().join("straight");
    ok(&[
        "train",
        "--data",
        s(&corpus),
        "--config",
        s(&longer),
        "--out",
        s(&straight),
    ]);
    ok(&[
        "train",
        "--data",
        s(&corpus),
        "--config",
        s(&longer),
        "--out",
        s(&run),
        "--resume",
    ]);
    assert_eq!(
        fs::read(run.join("ckpt-20.vgck")).unwrap(),
        fs::read(straight.join("ckpt-20.vgck")).unwrap()
    );
    assert_eq!(
        fs::read(run.join("losses.csv")).unwrap(),
        fs::read(straight.join("losses.csv")).unwrap()
    );

    let dirs = format!("{},{}", s(&corpus.join("A")), s(&corpus.join("B")));
    ok(&[
        "train",
        "--dirs",
        &dirs,
        "--config",
        s(&repo_file("configs/smoke.conf")),
        "--out",
        s(&dir.path().join("dirs")),
    ]);
}

#[test]
fn train_rejects_unknown_config_keys() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path(), 2);
    let bad = dir.path().join("bad.conf");
    fs::write(&bad, "steps = 3\nlearning_rate = 0.1\n").unwrap();
    let out = voicegan(&[
        "train",
        "--data",
        s(&corpus),
        "--config",
        s(&bad),
        "--out",
        s(&dir.path().join("r")),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("learning_rate") && err.contains("line 2"), "{err}");
    let out = voicegan(&[
        "train",
        "--data",
        s(&dir.path().join("nowhere")),
        "--out",
        s(&dir.path().join("r")),
    ]);
    assert!(!out.status.success());
}

#[test]
fn convert_keeps_duration_in_both_phase_modes() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path(), 3);
    let run = smoke_run(dir.path(), &corpus);
    let ckpt = run.join("ckpt-10.vgck");
    let input = corpus.join("A/utt-0000.wav");
    let source = load_wav(&input).unwrap();
    for (phase, dir_flag) in [("griffinlim", "AB"), ("source", "BA")] {
        let out = dir.path().join(format!("{phase}.wav"));
        ok(&[
            "convert",
            "--ckpt",
            s(&ckpt),
            "--input",
            s(&input),
            "--direction",
            dir_flag,
            "--out",
            s(&out),
            "--phase",
            phase,
            "--gl-iters",
            "8",
        ]);
        let w = load_wav(&out).unwrap();
        assert!((w.duration_secs() - source.duration_secs()).abs() <= 64.0 / 8000.0);
    }

    // A 16 kHz input comes back at the model rate with the same duration.
    let hi = Waveform::new((0..16000).map(|i| 0.3 * (i as f64 * 0.2).sin()).collect(), 16000);
    let hi_path = dir.path().join("hi.wav");
    save_wav(&hi_path, &hi).unwrap();
    let out = dir.path().join("hi-out.wav");
    ok(&[
        "convert",
        "--ckpt",
        s(&ckpt),
        "--input",
        s(&hi_path),
        "--direction",
        "AB",
        "--out",
        s(&out),
    ]);
    let w = load_wav(&out).unwrap();
    assert_eq!(w.sample_rate_hz, 8000);
    assert!((w.duration_secs() - 1.0).abs() <= 64.0 / 8000.0);

    let missing = voicegan(&["convert", "--ckpt", s(&ckpt), "--input", s(&input), "--out", s(&out)]);
    assert_eq!(missing.status.code(), Some(2));
    let junk = dir.path().join("junk.bin");
    fs::write(&junk, b"not a checkpoint").unwrap();
    let bad = voicegan(&[
        "convert",
        "--ckpt",
        s(&junk),
        "--input",
        s(&input),
        "--direction",
        "AB",
        "--out",
        s(&out),
    ]);
    assert!(!bad.status.success());
}

#[test]
fn evaluate_writes_reports_and_images() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path(), 4);
    let run = smoke_run(dir.path(), &corpus);
    let out = dir.path().join("eval");
    ok(&[
        "evaluate",
        "--ckpt",
        s(&run.join("ckpt-10.vgck")),
        "--data",
        s(&corpus),
        "--out",
        s(&out),
        "--gl-iters",
        "4",
        "--classifier-steps",
        "5",
    ]);
    let rates = fs::read_to_string(out.join("style_rate.csv")).unwrap();
    let rows: Vec<&str> = rates.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    for row in rows {
        let rate: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&rate));
    }
    let snr = fs::read_to_string(out.join("snr.csv")).unwrap();
    assert_eq!(snr.lines().count(), 1 + 8 * 2);
    for style in ["A", "B"] {
        for tag in ["original", "converted", "round_trip"] {
            assert!(out.join(format!("{style}_{tag}.png")).exists());
        }
    }

    let empty = dir.path().join("empty");
    fs::create_dir_all(empty.join("A")).unwrap();
    fs::create_dir_all(empty.join("B")).unwrap();
    let failed = voicegan(&[
        "evaluate",
        "--ckpt",
        s(&run.join("ckpt-10.vgck")),
        "--data",
        s(&empty),
        "--out",
        s(&dir.path().join("e2")),
    ]);
    assert!(!failed.status.success());
}

fn read_png(path: &Path) -> (u32, u32, Vec<u8>) {
    let decoder = png::Decoder::new(fs::File::open(path).unwrap());
    let mut reader = decoder.read_info().unwrap();
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).unwrap();
    buf.truncate(info.buffer_size());
    (info.width, info.height, buf)
}

#[test]
fn spectrogram_images() {
    let dir = tempfile::tempdir().unwrap();
    let tone = Waveform::new(
        (0..8000)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / 8000.0).sin())
            .collect(),
        8000,
    );
    let wav = dir.path().join("tone.wav");
    save_wav(&wav, &tone).unwrap();
    let png_path = dir.path().join("tone.png");
    ok(&["spectrogram", "--input", s(&wav), "--out", s(&png_path)]);
    let (w, h, px) = read_png(&png_path);
    assert_eq!(h, 128);
    assert_eq!(w as usize, 1 + (8000 - 256) / 64);
    let row_mean = |r: usize| {
        px[r * w as usize..(r + 1) * w as usize]
            .iter()
            .map(|&p| p as f64)
            .sum::<f64>()
            / w as f64
    };
    // 1 kHz is bin 32; the image puts bin 0 at the bottom.
    let bright = 127 - 32;
    let brightest = (0..128).max_by(|&a, &b| row_mean(a).total_cmp(&row_mean(b))).unwrap();
    assert_eq!(brightest, bright);

    let silent = dir.path().join("silence.wav");
    save_wav(&silent, &Waveform::new(vec![0.0; 4000], 8000)).unwrap();
    let dark = dir.path().join("silence.png");
    ok(&["spectrogram", "--input", s(&silent), "--out", s(&dark)]);
    let (_, h, px) = read_png(&dark);
    assert_eq!(h, 128);
    assert!(px.iter().all(|&p| p == 0));

    let out = voicegan(&[
        "spectrogram",
        "--input",
        s(&wav),
        "--out",
        s(&dir.path().join("no/such/dir.png")),
    ]);
    assert!(!out.status.success());
}
