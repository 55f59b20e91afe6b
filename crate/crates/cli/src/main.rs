//! `voicegan`: synthesize corpora, train, convert, evaluate and draw
//! spectrograms.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use voicegan::dsp::{load_wav, resample, save_wav, stft, StftConfig, Waveform, MODEL_RATE_HZ};
use voicegan::eval::{
    battery_pools, convert_pool, emit_spectrogram_png, snr_battery, style_transfer_rate, train_classifier,
    ClassifierConfig, Pool,
};
use voicegan::model::{Reconstruction, StyleLabel, FREQ_BINS, MIN_FRAMES};
use voicegan::tensor::Checkpoint;
use voicegan::train::{
    domain_sample, ingest_dir, load_wav_dir, synth_utterances, train, write_corpus, RunDir, StyleCorpus, SynthSpec,
    TrainConfig, Trainer,
};

#[derive(Parser, Debug)]
#[command(name = "voicegan", version, about = "Spectrogram GAN voice style transfer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic two-style WAV corpus and its manifest.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        /// Corpus recipe (`key = value` lines); defaults when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Overrides the recipe's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model.
    Train {
        /// Directory with `A/` and `B/` subdirectories of WAV files.
        #[arg(long, conflicts_with = "dirs", required_unless_present = "dirs")]
        data: Option<PathBuf>,
        /// The two style directories, `A,B`.
        #[arg(long, value_delimiter = ',')]
        dirs: Option<Vec<PathBuf>>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from the newest checkpoint in the run directory.
        #[arg(long)]
        resume: bool,
    },
    /// Convert one utterance to the other style.
    Convert {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        direction: Direction,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Phase::Griffinlim)]
        phase: Phase,
        #[arg(long, default_value_t = 100)]
        gl_iters: usize,
    },
    /// Style-transfer rate, SNR battery and spectrogram images.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        /// Directory with `A/` and `B/` subdirectories of WAV files.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        gl_iters: usize,
        #[arg(long, default_value_t = 300)]
        classifier_steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Draw the spectrogram of a WAV file.
    Spectrogram {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Direction {
    #[value(name = "AB")]
    Ab,
    #[value(name = "BA")]
    Ba,
}

impl Direction {
    fn source(self) -> StyleLabel {
        match self {
            Direction::Ab => StyleLabel::A,
            Direction::Ba => StyleLabel::B,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Phase {
    Griffinlim,
    Source,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Ok(n) = std::env::var("VOICEGAN_THREADS") {
        let n: usize = n.parse().context("VOICEGAN_THREADS must be a positive integer")?;
        ensure!(n > 0, "VOICEGAN_THREADS must be a positive integer");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match Cli::parse().command {
        Command::SynthData { out, spec, seed } => synth_data(&out, spec.as_deref(), seed),
        Command::Train {
            data,
            dirs,
            config,
            out,
            resume,
        } => run_training(data, dirs, config.as_deref(), &out, resume),
        Command::Convert {
            ckpt,
            input,
            direction,
            out,
            phase,
            gl_iters,
        } => convert(&ckpt, &input, direction, &out, phase, gl_iters),
        Command::Evaluate {
            ckpt,
            data,
            out,
            gl_iters,
            classifier_steps,
            seed,
        } => evaluate(&ckpt, &data, &out, gl_iters, classifier_steps, seed),
        Command::Spectrogram { input, out } => spectrogram(&input, &out),
    }
}

fn synth_data(out: &Path, spec: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let mut spec = match spec {
        Some(p) => SynthSpec::load(p).with_context(|| format!("reading spec {}", p.display()))?,
        None => SynthSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let (a, b) = synth_utterances(&spec)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_corpus(out, &a, &b).with_context(|| format!("writing corpus to {}", out.display()))?;
    fs::write(out.join("spec.txt"), spec.to_text())?;
    info!("wrote {} + {} utterances to {}", a.len(), b.len(), out.display());
    Ok(())
}

fn style_dirs(data: Option<PathBuf>, dirs: Option<Vec<PathBuf>>) -> Result<(PathBuf, PathBuf)> {
    match (data, dirs) {
        (Some(d), None) => Ok((d.join("A"), d.join("B"))),
        (None, Some(v)) if v.len() == 2 => Ok((v[0].clone(), v[1].clone())),
        _ => bail!("--dirs takes exactly two directories, A,B"),
    }
}

fn run_training(
    data: Option<PathBuf>,
    dirs: Option<Vec<PathBuf>>,
    config: Option<&Path>,
    out: &Path,
    resume: bool,
) -> Result<()> {
    let config = match config {
        Some(p) => TrainConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => TrainConfig::default(),
    };
    let (a, b) = style_dirs(data, dirs)?;
    let corpus = ingest_dir(&a, &b, StftConfig::default(), config.crop_frames)?;
    info!(
        "corpus: {} A, {} B utterances; normalization {:?}",
        corpus.pool_a.len(),
        corpus.pool_b.len(),
        corpus.stats
    );
    let run = RunDir::new(out);
    let from = if resume {
        let (step, path) = run
            .latest_checkpoint()?
            .with_context(|| format!("no checkpoint to resume in {}", out.display()))?;
        info!("resuming from step {step}");
        Some(path)
    } else {
        None
    };
    let summary = train(&config, &corpus, &run, from.as_deref())?;
    if summary.corridor_violations > 0 {
        log::warn!(
            "{} steps left the discriminator loss corridor after warm-up",
            summary.corridor_violations
        );
    }
    info!("final checkpoint {}", summary.final_checkpoint.display());
    Ok(())
}

fn convert(ckpt: &Path, input: &Path, direction: Direction, out: &Path, phase: Phase, gl_iters: usize) -> Result<()> {
    let ck = Checkpoint::load(ckpt).with_context(|| format!("reading checkpoint {}", ckpt.display()))?;
    let (mut model, stats) = Trainer::load_model(&ck).context("checkpoint does not match the architecture")?;
    let wave = load_wav(input).with_context(|| format!("reading {}", input.display()))?;
    let sample = domain_sample(&wave, stats, StftConfig::default(), MIN_FRAMES)?;
    let converted = model.generator(direction.source()).convert(&sample)?;
    let how = match phase {
        Phase::Griffinlim => Reconstruction::GriffinLim { iters: gl_iters },
        Phase::Source => Reconstruction::SourcePhase,
    };
    let result = sample.reconstruct(&converted, how)?;
    save_wav(out, &result).with_context(|| format!("writing {}", out.display()))?;
    info!(
        "{} -> {} ({:.3} s)",
        input.display(),
        out.display(),
        result.duration_secs()
    );
    Ok(())
}

fn evaluate(ckpt: &Path, data: &Path, out: &Path, gl_iters: usize, classifier_steps: usize, seed: u64) -> Result<()> {
    let ck = Checkpoint::load(ckpt).with_context(|| format!("reading checkpoint {}", ckpt.display()))?;
    let (mut model, stats) = Trainer::load_model(&ck).context("checkpoint does not match the architecture")?;
    let wa = load_wav_dir(data.join("A"))?;
    let wb = load_wav_dir(data.join("B"))?;
    let corpus = StyleCorpus::with_stats(&wa, &wb, stats, StftConfig::default(), MIN_FRAMES)?;
    fs::create_dir_all(out)?;

    let cfg = ClassifierConfig {
        steps: classifier_steps,
        seed,
        ..Default::default()
    };
    let (mut clf, report) = train_classifier(&corpus.pool_a, &corpus.pool_b, &cfg)?;
    info!(
        "classifier held-out accuracy {:.3} on {} samples",
        report.heldout_accuracy, report.heldout
    );

    let mut rates = String::from("direction,target,samples,rate\n");
    let mut pools: Vec<Pool> = Vec::new();
    for (source, samples, originals) in [
        (StyleLabel::A, &corpus.pool_a, &wa),
        (StyleLabel::B, &corpus.pool_b, &wb),
    ] {
        let conv = convert_pool(&mut model, samples, source)?;
        let target = source.other();
        let rate = style_transfer_rate(&mut clf, &conv.converted, target)?;
        rates.push_str(&format!(
            "{source:?}{target:?},{target:?},{},{rate:.4}\n",
            samples.len()
        ));
        info!(
            "{source:?} -> {target:?}: {:.1}% classified as {target:?}",
            100.0 * rate
        );

        let first = &samples[0];
        for (tag, grid) in [
            ("original", &first.magnitude),
            ("converted", &conv.converted[0]),
            ("round_trip", &conv.round_trip[0]),
        ] {
            let linear = first.to_spectrogram(grid)?.magnitude;
            emit_spectrogram_png(&linear, out.join(format!("{source:?}_{tag}.png")))?;
        }
        let resampled: Vec<Waveform> = originals.iter().map(at_model_rate).collect::<Result<_>>()?;
        pools.extend(battery_pools(&resampled, samples, &conv, gl_iters)?);
    }
    fs::write(out.join("style_rate.csv"), rates)?;
    fs::write(
        out.join("classifier.csv"),
        format!(
            "heldout_samples,heldout_accuracy\n{},{:.4}\n",
            report.heldout, report.heldout_accuracy
        ),
    )?;
    let table = snr_battery(&pools)?;
    fs::write(out.join("snr.csv"), table.to_csv())?;
    fs::write(out.join("snr.txt"), table.pretty())?;
    println!("{}", table.pretty());
    Ok(())
}

fn at_model_rate(w: &Waveform) -> Result<Waveform> {
    Ok(if w.sample_rate_hz == MODEL_RATE_HZ {
        w.clone()
    } else {
        resample(w, MODEL_RATE_HZ)?
    })
}

fn spectrogram(input: &Path, out: &Path) -> Result<()> {
    let wave = load_wav(input).with_context(|| format!("reading {}", input.display()))?;
    let mut wave = at_model_rate(&wave)?;
    let cfg = StftConfig::default();
    if wave.len() < cfg.n_fft {
        wave.samples.resize(cfg.n_fft, 0.0);
    }
    let spec = stft(&wave, cfg)?;
    emit_spectrogram_png(&spec.magnitude.top_rows(FREQ_BINS), out)
        .with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}
