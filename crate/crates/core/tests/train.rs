//! Corpus synthesis and ingestion, batching, the alternating step, runs,
//! checkpoints and resumption.

use std::fs;

use voicegan::dsp::{save_wav, StftConfig, Waveform};
use voicegan::tensor::Checkpoint;
use voicegan::train::*;

fn tiny_spec(count: usize, seed: u64) -> SynthSpec {
    SynthSpec {
        count,
        seed,
        ..Default::default()
    }
}

fn tiny_config(steps: u64) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: 2,
        crop_frames: 16,
        checkpoint_every: 0,
        eval_every: 0,
        gl_iters: 4,
        seed: 3,
        ..Default::default()
    }
}

fn tiny_corpus() -> StyleCorpus {
    synth_corpus(&tiny_spec(6, 1), StftConfig::default(), 16).unwrap()
}

/// Pitch by autocorrelation peak between 60 and 400 Hz over voiced samples.
fn autocorr_f0(w: &Waveform) -> f64 {
    let x: Vec<f64> = w.samples.clone();
    let sr = w.sample_rate_hz as f64;
    let (lo, hi) = ((sr / 400.0) as usize, (sr / 60.0) as usize);
    let mut best = (0.0, lo);
    for lag in lo..=hi {
        let r: f64 = x.iter().zip(&x[lag..]).map(|(a, b)| a * b).sum();
        if r > best.0 {
            best = (r, lag);
        }
    }
    sr / best.1 as f64
}

#[test]
fn default_synth_spec_counts_and_pitch() {
    let spec = SynthSpec::default();
    let (a, b) = synth_utterances(&spec).unwrap();
    assert_eq!((a.len(), b.len()), (200, 200));
    for (pool, (lo, hi)) in [(&a, spec.style_a.f0_hz), (&b, spec.style_b.f0_hz)] {
        for u in pool.iter().step_by(10) {
            let d = u.wave.duration_secs();
            assert!((0.5 - 1e-3..=1.5 + 1e-3).contains(&d));
            let f0 = autocorr_f0(&u.wave);
            assert!(
                f0 > lo * (1.0 - CONTOUR_SPAN) * 0.95 && f0 < hi * (1.0 + CONTOUR_SPAN) * 1.05,
                "f0 {f0:.1} outside {lo}-{hi}"
            );
            assert!(u.wave.samples.iter().all(|v| v.abs() <= 1.0));
        }
    }
}

#[test]
fn synthesis_is_deterministic_down_to_the_bytes() {
    let spec = tiny_spec(3, 7);
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&d1, &d2] {
        let (a, b) = synth_utterances(&spec).unwrap();
        write_corpus(d.path(), &a, &b).unwrap();
    }
    for sub in ["A", "B"] {
        for i in 0..3 {
            let name = format!("{sub}/utt-{i:04}.wav");
            assert_eq!(
                fs::read(d1.path().join(&name)).unwrap(),
                fs::read(d2.path().join(&name)).unwrap()
            );
        }
    }
    let (a, b) = synth_utterances(&spec).unwrap();
    for ua in &a {
        assert!(b.iter().all(|ub| ub.wave != ua.wave));
    }
    let other = synth_utterances(&tiny_spec(3, 8)).unwrap();
    assert_ne!(other.0[0].wave, a[0].wave);
}

#[test]
fn overlapping_pitch_ranges_are_rejected() {
    let mut spec = SynthSpec::default();
    spec.style_b.f0_hz = (140.0, 200.0);
    assert!(synth_utterances(&spec).is_err());
}

#[test]
fn ingest_directories() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = synth_utterances(&tiny_spec(5, 2)).unwrap();
    write_corpus(dir.path(), &a, &b).unwrap();
    let cfg = StftConfig::default();
    let c1 = ingest_dir(dir.path().join("A"), dir.path().join("B"), cfg, 64).unwrap();
    assert_eq!((c1.pool_a.len(), c1.pool_b.len()), (5, 5));
    let c2 = ingest_dir(dir.path().join("A"), dir.path().join("B"), cfg, 64).unwrap();
    assert_eq!(c1.stats, c2.stats);
    assert!(c1.pool_a.iter().all(|s| s.frames() >= 64 && s.magnitude.rows() == 128));

    // 16 kHz input is brought to 8 kHz first: 1 s gives 8000 samples.
    let d16 = tempfile::tempdir().unwrap();
    let tone = |f: f64| {
        Waveform::new(
            (0..16000)
                .map(|n| 0.3 * (f * n as f64 / 16000.0 * std::f64::consts::TAU).sin())
                .collect(),
            16000,
        )
    };
    save_wav(d16.path().join("a.wav"), &tone(120.0)).unwrap();
    fs::create_dir(d16.path().join("b")).unwrap();
    save_wav(d16.path().join("b/b.wav"), &tone(240.0)).unwrap();
    fs::write(d16.path().join("broken.wav"), b"RIFF").unwrap();
    let c = ingest_dir(d16.path(), d16.path().join("b"), cfg, 8).unwrap();
    assert_eq!(c.pool_a.len(), 1);
    assert_eq!(c.pool_a[0].source_len, 8000);
    assert_eq!(c.pool_a[0].frames(), 1 + (8000 - 256) / 64);

    let empty = tempfile::tempdir().unwrap();
    assert!(ingest_dir(empty.path(), d16.path(), cfg, 8).is_err());
    let junk = tempfile::tempdir().unwrap();
    fs::write(junk.path().join("x.wav"), b"not audio").unwrap();
    assert!(ingest_dir(junk.path(), d16.path(), cfg, 8).is_err());
}

#[test]
fn batches_have_fixed_shape_and_reproducible_crops() {
    let corpus = tiny_corpus();
    let (a, b) = corpus.next_batch::<f32>(&mut step_rng(0, 0), 4, 16).unwrap();
    assert_eq!(a.shape(), &[4, 1, 128, 16]);
    assert_eq!(b.shape(), &[4, 1, 128, 16]);
    let (a2, _) = corpus.next_batch::<f32>(&mut step_rng(0, 0), 4, 16).unwrap();
    assert_eq!(a, a2);
    let (a3, _) = corpus.next_batch::<f32>(&mut step_rng(0, 1), 4, 16).unwrap();
    assert_ne!(a, a3);
    let long = synth_corpus(&tiny_spec(2, 1), StftConfig::default(), 16).unwrap();
    let mut rng = step_rng(5, 0);
    let draws: Vec<_> = (0..4)
        .map(|_| long.next_batch::<f32>(&mut rng, 2, 64).unwrap().0)
        .collect();
    assert!(draws.windows(2).any(|w| w[0] != w[1]));
}

#[test]
fn each_phase_updates_only_its_own_networks() {
    let corpus = tiny_corpus();
    let mut t = Trainer::new(tiny_config(1), corpus.stats).unwrap();
    let (a, b) = corpus.next_batch(&mut step_rng(0, 0), 2, 16).unwrap();
    // Running batch statistics legitimately move in both phases; only
    // trainable weights belong to a single phase.
    let sums = |t: &Trainer| {
        t.model.stores().map(|s| {
            s.ids()
                .filter(|&id| s.is_trainable(id))
                .flat_map(|id| s.value(id).data().iter().map(|v| *v as f64))
                .enumerate()
                .map(|(i, v)| v * (1.0 + (i % 7) as f64))
                .sum::<f64>()
        })
    };
    let before = sums(&t);
    let mut st = t.begin_step(a, b).unwrap();
    t.discriminator_phase(&mut st).unwrap();
    let mid = sums(&t);
    assert_eq!(&before[..2], &mid[..2], "generators moved in the discriminator phase");
    assert!(before[2..].iter().zip(&mid[2..]).all(|(x, y)| x != y));
    t.generator_phase(&mut st).unwrap();
    let after = sums(&t);
    assert_eq!(&mid[2..], &after[2..], "discriminators moved in the generator phase");
    assert!(mid[..2].iter().zip(&after[..2]).all(|(x, y)| x != y));
}

#[test]
fn step_runs_on_a_two_sample_batch() {
    let corpus = tiny_corpus();
    let mut t = Trainer::new(tiny_config(1), corpus.stats).unwrap();
    let r = t.train_step(&corpus).unwrap();
    assert!(r.is_finite());
    assert!(r.values().iter().all(|&v| v >= 0.0));
    assert_eq!(t.step(), 1);
}

#[test]
fn discriminators_learn_against_a_frozen_generator() {
    let corpus = tiny_corpus();
    let mut t = Trainer::new(tiny_config(1), corpus.stats).unwrap();
    let mut losses = Vec::new();
    for step in 0..200 {
        let (a, b) = corpus.next_batch(&mut step_rng(9, step), 2, 16).unwrap();
        let mut st = t.begin_step(a, b).unwrap();
        let d = t.discriminator_phase(&mut st).unwrap();
        let g = &st.graph;
        losses.push(
            [d.l_da, d.l_db, d.style_a, d.style_b]
                .iter()
                .map(|&v| g.value(v).item() as f64)
                .sum::<f64>(),
        );
    }
    let first: f64 = losses[..10].iter().sum::<f64>() / 10.0;
    let last: f64 = losses[190..].iter().sum::<f64>() / 10.0;
    assert!(last <= 0.5 * first, "L_D {first:.4} -> {last:.4}");
}

#[test]
fn ten_step_run_layout() {
    let corpus = tiny_corpus();
    let dir = tempfile::tempdir().unwrap();
    let run = RunDir::new(dir.path().join("run"));
    let cfg = TrainConfig {
        checkpoint_every: 5,
        eval_every: 10,
        ..tiny_config(10)
    };
    let summary = train(&cfg, &corpus, &run, None).unwrap();
    assert_eq!(summary.reports.len(), 10);
    let rows = read_losses(run.losses(), None).unwrap();
    assert_eq!(
        rows.iter().map(|r| r.0).collect::<Vec<_>>(),
        (1..=10).collect::<Vec<_>>()
    );
    assert!(run.checkpoint(5).exists() && run.checkpoint(10).exists());
    assert_eq!(summary.final_checkpoint, run.checkpoint(10));
    assert!(run.sample(10, "AB").exists() && run.sample(10, "BA").exists());
    assert_eq!(TrainConfig::load(run.config()).unwrap(), cfg);
    assert_eq!(run.latest_checkpoint().unwrap().unwrap().0, 10);
    let (model, stats) = Trainer::load_model(&Checkpoint::load(run.checkpoint(10)).unwrap()).unwrap();
    let averaged = summary.trainer.inference_model();
    assert_eq!(model.gab.store.checksum(), averaged.gab.store.checksum());
    assert_eq!(model.gba.store.checksum(), averaged.gba.store.checksum());
    assert_eq!(model.da.store.checksum(), summary.trainer.model.da.store.checksum());
    assert!((stats.lo - corpus.stats.lo).abs() < 1e-5 * stats.lo.abs().max(1.0));
}

#[test]
fn generator_average_follows_its_recurrence() {
    let corpus = tiny_corpus();
    let mut t = Trainer::new(
        TrainConfig {
            ema_decay: 0.15,
            ..tiny_config(3)
        },
        corpus.stats,
    )
    .unwrap();
    assert_eq!(t.ema[0].checksum(), t.model.gab.store.checksum());
    // The warm-up cap (1 + t) / (10 + t) binds first, then the configured decay.
    for (step, want) in [(0, 0.1), (1, 0.15), (2, 0.15)] {
        assert!((t.ema_decay_at(step) - want).abs() < 1e-12);
        let before = parameter_snapshot(&[&t.ema[1]]);
        t.train_step(&corpus).unwrap();
        let live = parameter_snapshot(&[&t.model.gba.store]);
        let d = want as f32;
        for (((name, old), (_, w)), (_, avg)) in before.iter().zip(&live).zip(parameter_snapshot(&[&t.ema[1]])) {
            for ((o, w), a) in old.iter().zip(w).zip(&avg) {
                let expect = d * o + (1.0 - d) * w;
                assert!(
                    (a - expect).abs() <= 1e-6 * (1.0 + expect.abs()),
                    "{name}: {a} vs {expect}"
                );
            }
        }
    }
    let mut zero = Trainer::new(
        TrainConfig {
            ema_decay: 0.0,
            ..tiny_config(1)
        },
        corpus.stats,
    )
    .unwrap();
    zero.train_step(&corpus).unwrap();
    assert_eq!(zero.ema[0].checksum(), zero.model.gab.store.checksum());
}

#[test]
fn resumed_run_matches_straight_run() {
    let corpus = tiny_corpus();
    let dir = tempfile::tempdir().unwrap();
    let straight = RunDir::new(dir.path().join("straight"));
    let split = RunDir::new(dir.path().join("split"));
    train(&tiny_config(20), &corpus, &straight, None).unwrap();
    let half = train(&tiny_config(10), &corpus, &split, None).unwrap();
    let resumed = train(&tiny_config(20), &corpus, &split, Some(&half.final_checkpoint)).unwrap();
    assert_eq!(resumed.trainer.step(), 20);
    assert_eq!(resumed.reports.len(), 10);
    assert_eq!(
        fs::read(straight.checkpoint(20)).unwrap(),
        fs::read(split.checkpoint(20)).unwrap()
    );
    assert_eq!(fs::read(straight.losses()).unwrap(), fs::read(split.losses()).unwrap());
}

#[test]
fn checkpoint_rejects_foreign_content() {
    let corpus = tiny_corpus();
    let t = Trainer::new(tiny_config(1), corpus.stats).unwrap();
    let mut ck = t.checkpoint();
    ck.params.retain(|p| p.name != "gab.enc1.w");
    assert!(Trainer::from_checkpoint(&ck, tiny_config(1)).is_err());
    let ck = t.checkpoint();
    let back = Trainer::from_checkpoint(&Checkpoint::from_bytes(&ck.to_bytes()).unwrap(), tiny_config(1)).unwrap();
    assert_eq!(back.checkpoint().to_bytes(), ck.to_bytes());
}

#[test]
fn synth_spec_text_round_trip() {
    let mut spec = tiny_spec(9, 11);
    spec.style_b.formant_scale = 1.125;
    spec.noise_db = f64::NEG_INFINITY;
    assert_eq!(SynthSpec::parse(&spec.to_text()).unwrap(), spec);
    assert_eq!(SynthSpec::parse("# only a comment\n").unwrap(), SynthSpec::default());
    assert!(SynthSpec::parse("c.f0_min_hz = 3\n").is_err());
    assert!(SynthSpec::parse("count = many\n").is_err());
    assert!(SynthSpec::parse("a.f0_min_hz = 300\n").is_err());
}

#[test]
fn corpus_manifest_lists_every_file() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = synth_utterances(&tiny_spec(3, 4)).unwrap();
    write_corpus(dir.path(), &a, &b).unwrap();
    let text = fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(MANIFEST_HEADER));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6);
    for (row, u) in rows.iter().zip(a.iter().chain(&b)) {
        assert_eq!(row.len(), 5);
        assert!(dir.path().join(row[1]).exists());
        assert_eq!(row[2].parse::<usize>().unwrap(), u.wave.len());
        assert!((row[3].parse::<f64>().unwrap() - u.base_f0_hz).abs() < 1e-3);
    }
    assert_eq!(rows[0][0], "A");
    assert_eq!(rows[5][0], "B");
}
