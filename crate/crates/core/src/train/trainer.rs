use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{StyleCorpus, TrainConfig};
use crate::dsp::{save_wav, NormStats};
use crate::error::{Error, Result};
use crate::losses::{
    const_loss, discriminator_adversarial, feature_loss, generated_style_loss, generator_adversarial, smoothness,
    style_loss, DiscriminatorTerms, GeneratorTerms, LossReport,
};
use crate::model::{Reconstruction, StyleLabel, VoiceGan};
use crate::tensor::{Adam, Checkpoint, Graph, Mode, NamedTensor, ParamStore, Tensor, Var};

const META_STEP: &str = "meta.step";
const META_NORM: &str = "meta.norm";
const ADAM_STEP: &str = "adam.step";
const EMA_PREFIX: &str = "ema.";

/// Network parameters, optimizer state and the step counter of one run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: VoiceGan<f32>,
    /// Optimizers in the order `G_AB, G_BA, D_A, D_B, D_S`.
    pub optimizers: [Adam<f32>; 5],
    pub config: TrainConfig,
    pub stats: NormStats,
    /// Moving averages of the `G_AB` and `G_BA` stores, used for inference.
    pub ema: [ParamStore<f32>; 2],
    step: u64,
}

/// Graph and generator outputs shared by the two phases of one step.
pub struct StepState {
    pub graph: Graph<f32>,
    pub xa: Var,
    pub xb: Var,
    /// `G_AB(x_A)`.
    pub ab: Var,
    /// `G_BA(G_AB(x_A))`.
    pub aba: Var,
    /// `G_BA(x_B)`.
    pub ba: Var,
    /// `G_AB(G_BA(x_B))`.
    pub bab: Var,
}

/// Random stream for the batch of `step`; resuming needs only the counter.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((1 << 48) | step);
    rng
}

impl Trainer {
    pub fn new(config: TrainConfig, stats: NormStats) -> Result<Self> {
        config.validate()?;
        let model = VoiceGan::new(config.seed)?;
        let optimizers = model.stores().map(|s| Adam::new(s, config.adam));
        let ema = [model.gab.store.clone(), model.gba.store.clone()];
        Ok(Self {
            model,
            optimizers,
            config,
            stats,
            ema,
            step: 0,
        })
    }

    /// Steps completed so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Draws this step's batches from `corpus` and runs [`Trainer::step_on`].
    pub fn train_step(&mut self, corpus: &StyleCorpus) -> Result<LossReport> {
        let mut rng = step_rng(self.config.seed, self.step);
        let (a, b) = corpus.next_batch(&mut rng, self.config.batch_size, self.config.crop_frames)?;
        self.step_on(a, b)
    }

    /// One alternating update: discriminators first on detached generator
    /// outputs, then generators against the updated, frozen discriminators.
    pub fn step_on(&mut self, xa: Tensor<f32>, xb: Tensor<f32>) -> Result<LossReport> {
        let mut state = self.begin_step(xa, xb)?;
        let disc = self.discriminator_phase(&mut state)?;
        let gen = self.generator_phase(&mut state)?;
        self.update_ema();
        self.step += 1;
        let report = LossReport::from_graph(&state.graph, &gen, &disc);
        if !report.is_finite() {
            return Err(Error::Diverged {
                step: self.step,
                reason: format!("non-finite loss report {report:?}"),
            });
        }
        Ok(report)
    }

    /// Builds the generator forward pass once; both phases share it.
    pub fn begin_step(&mut self, xa: Tensor<f32>, xb: Tensor<f32>) -> Result<StepState> {
        let m = &mut self.model;
        let mut g = Graph::new();
        let xa = g.constant(xa);
        let xb = g.constant(xb);
        let ab = m.gab.forward(&mut g, xa, Mode::Train)?;
        let aba = m.gba.forward(&mut g, ab, Mode::Train)?;
        let ba = m.gba.forward(&mut g, xb, Mode::Train)?;
        let bab = m.gab.forward(&mut g, ba, Mode::Train)?;
        Ok(StepState {
            graph: g,
            xa,
            xb,
            ab,
            aba,
            ba,
            bab,
        })
    }

    /// Updates `D_A`, `D_B` and `D_S` on the discriminator objective with the
    /// generated batches detached.
    pub fn discriminator_phase(&mut self, st: &mut StepState) -> Result<DiscriminatorTerms> {
        let m = &mut self.model;
        let g = &mut st.graph;
        let [dab, daba, dba, dbab] = [st.ab, st.aba, st.ba, st.bab].map(|v| g.detach(v));
        let da_real = m.da.forward(g, st.xa, Mode::Train)?;
        let da_fake = m.da.forward(g, dba, Mode::Train)?;
        let db_real = m.db.forward(g, st.xb, Mode::Train)?;
        let db_fake = m.db.forward(g, dab, Mode::Train)?;
        let l_da = discriminator_adversarial(g, da_real.out, da_fake.out)?;
        let l_db = discriminator_adversarial(g, db_real.out, db_fake.out)?;
        let mut style = |g: &mut Graph<f32>, src, tr, rt, label| -> Result<_> {
            let p = [src, tr, rt]
                .into_iter()
                .map(|x| m.ds.forward(g, x, Mode::Train).map(|o| o.out))
                .collect::<Result<Vec<_>>>()?;
            style_loss(g, p[0], p[1], p[2], label)
        };
        let style_a = style(g, st.xa, dab, daba, StyleLabel::A)?;
        let style_b = style(g, st.xb, dba, dbab, StyleLabel::B)?;
        let disc = DiscriminatorTerms {
            l_da,
            l_db,
            style_a,
            style_b,
        };
        let l_d = disc.objective(g)?;
        check_finite(g, l_d, self.step, "discriminator objective")?;
        g.backward(l_d)?;
        for (store, opt) in [&mut m.da.store, &mut m.db.store, &mut m.ds.store]
            .into_iter()
            .zip(self.optimizers[2..].iter_mut())
        {
            store.accumulate_grads(g);
            opt.step(store);
            store.zero_grad();
        }
        Ok(disc)
    }

    /// Updates `G_AB` and `G_BA` on the generator objective, differentiating
    /// through the shared forward pass with every discriminator frozen.
    pub fn generator_phase(&mut self, st: &mut StepState) -> Result<GeneratorTerms> {
        let w = self.config.weights;
        let m = &mut self.model;
        let g = &mut st.graph;
        let (xa, xb, ab, aba, ba, bab) = (st.xa, st.xb, st.ab, st.aba, st.ba, st.bab);
        g.reset_grads();
        g.freeze(&m.da.store);
        g.freeze(&m.db.store);
        g.freeze(&m.ds.store);
        let db_gen = m.db.forward(g, ab, Mode::Train)?;
        let da_gen = m.da.forward(g, ba, Mode::Train)?;
        let l_gb = generator_adversarial(g, db_gen.out)?;
        let l_ga = generator_adversarial(g, da_gen.out)?;
        let db_ref = m.db.forward(g, xb, Mode::Train)?;
        let da_ref = m.da.forward(g, xa, Mode::Train)?;
        let feat_b = feature_loss(g, &db_ref.features, &db_gen.features)?;
        let feat_a = feature_loss(g, &da_ref.features, &da_gen.features)?;
        let feature = g.add(feat_a, feat_b)?;
        let const_a = const_loss(g, xa, ab, aba, &w)?;
        let const_b = const_loss(g, xb, ba, bab, &w)?;
        let smooth_ab = smoothness(g, ab)?;
        let smooth_ba = smoothness(g, ba)?;
        let mut probs = |g: &mut Graph<f32>, x| m.ds.forward(g, x, Mode::Train).map(|o| o.out);
        let (p_ab, p_aba) = (probs(g, ab)?, probs(g, aba)?);
        let (p_ba, p_bab) = (probs(g, ba)?, probs(g, bab)?);
        let gs_a = generated_style_loss(g, p_ab, p_aba, StyleLabel::A)?;
        let gs_b = generated_style_loss(g, p_ba, p_bab, StyleLabel::B)?;
        let gen = GeneratorTerms {
            l_gb,
            l_ga,
            const_a,
            const_b,
            feature,
            smooth_ab,
            smooth_ba,
            style: g.add(gs_a, gs_b)?,
        };
        let objective = gen.objective(g, &w)?;
        check_finite(g, objective, self.step, "generator objective")?;
        g.backward(objective)?;
        for (store, opt) in [&mut m.gab.store, &mut m.gba.store]
            .into_iter()
            .zip(self.optimizers[..2].iter_mut())
        {
            store.accumulate_grads(g);
            opt.step(store);
            store.zero_grad();
        }
        Ok(gen)
    }

    /// Decay applied after update `t` (counting from 0): the configured decay,
    /// capped by `(1 + t) / (10 + t)` so early weights fade quickly.
    pub fn ema_decay_at(&self, t: u64) -> f64 {
        self.config.ema_decay.min((1 + t) as f64 / (10 + t) as f64)
    }

    fn update_ema(&mut self) {
        let d = self.ema_decay_at(self.step) as f32;
        for (avg, live) in self.ema.iter_mut().zip([&self.model.gab.store, &self.model.gba.store]) {
            let ids: Vec<_> = live.ids().zip(avg.ids()).collect();
            for (lid, aid) in ids {
                for (a, &w) in avg.value_mut(aid).data_mut().iter_mut().zip(live.value(lid).data()) {
                    *a = d * *a + (1.0 - d) * w;
                }
            }
        }
    }

    /// A copy of the model with the averaged generator weights.
    pub fn inference_model(&self) -> VoiceGan<f32> {
        let mut model = self.model.clone();
        for (live, avg) in [&mut model.gab.store, &mut model.gba.store].into_iter().zip(&self.ema) {
            let ids: Vec<_> = live.ids().zip(avg.ids()).collect();
            for (lid, aid) in ids {
                *live.value_mut(lid) = avg.value(aid).clone();
            }
        }
        model
    }

    /// Parameters (with the step counter, normalization and generator
    /// averages) and optimizer moments.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut params = vec![
            NamedTensor::new(META_STEP, Tensor::scalar(self.step as f32)),
            NamedTensor::new(
                META_NORM,
                Tensor::new([2], vec![self.stats.lo as f32, self.stats.hi as f32]).expect("two values"),
            ),
        ];
        let mut optimizer = vec![NamedTensor::new(
            ADAM_STEP,
            Tensor::scalar(self.optimizers[0].step_count() as f32),
        )];
        for (store, opt) in self.model.stores().into_iter().zip(&self.optimizers) {
            for ((name, value), (m, v)) in store.named().zip(opt.moments()) {
                params.push(NamedTensor::new(name, value.clone()));
                optimizer.push(NamedTensor::new(format!("{name}.m"), m.clone()));
                optimizer.push(NamedTensor::new(format!("{name}.v"), v.clone()));
            }
        }
        for avg in &self.ema {
            for (name, value) in avg.named() {
                params.push(NamedTensor::new(format!("{EMA_PREFIX}{name}"), value.clone()));
            }
        }
        Checkpoint { params, optimizer }
    }

    /// Rebuilds a trainer from a checkpoint written with the same architecture.
    pub fn from_checkpoint(ck: &Checkpoint, config: TrainConfig) -> Result<Self> {
        let scalar = |t: Option<&Tensor<f32>>, what: &str| {
            t.map(|t| t.item() as u64)
                .ok_or_else(|| Error::Checkpoint(format!("missing {what}")))
        };
        let step = scalar(ck.param(META_STEP), META_STEP)?;
        let adam_step = scalar(ck.optimizer_entry(ADAM_STEP), ADAM_STEP)?;
        let norm = ck
            .param(META_NORM)
            .filter(|t| t.len() == 2)
            .ok_or_else(|| Error::Checkpoint(format!("missing {META_NORM}")))?;
        let stats = NormStats::new(norm.data()[0] as f64, norm.data()[1] as f64)?;
        let mut trainer = Self::new(config, stats)?;
        let stores = trainer.model.stores_mut();
        for (store, opt) in stores.into_iter().zip(trainer.optimizers.iter_mut()) {
            let (mut ms, mut vs) = (Vec::new(), Vec::new());
            let ids: Vec<_> = store.ids().collect();
            for id in ids {
                let name = store.name(id).to_string();
                let value = ck
                    .param(&name)
                    .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
                if value.shape() != store.value(id).shape() {
                    return Err(Error::Checkpoint(format!("shape mismatch for {name}")));
                }
                *store.value_mut(id) = value.clone();
                let moment = |suffix: &str| {
                    ck.optimizer_entry(&format!("{name}.{suffix}"))
                        .cloned()
                        .ok_or_else(|| Error::Checkpoint(format!("missing optimizer state for {name}")))
                };
                ms.push(moment("m")?);
                vs.push(moment("v")?);
            }
            opt.restore(store, adam_step, ms, vs)?;
        }
        for avg in &mut trainer.ema {
            let ids: Vec<_> = avg.ids().collect();
            for id in ids {
                let name = format!("{EMA_PREFIX}{}", avg.name(id));
                let value = ck
                    .param(&name)
                    .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
                if value.shape() != avg.value(id).shape() {
                    return Err(Error::Checkpoint(format!("shape mismatch for {name}")));
                }
                *avg.value_mut(id) = value.clone();
            }
        }
        trainer.step = step;
        Ok(trainer)
    }

    /// Restores the networks from a checkpoint for inference, with the
    /// averaged generators.
    pub fn load_model(ck: &Checkpoint) -> Result<(VoiceGan<f32>, NormStats)> {
        let t = Self::from_checkpoint(ck, TrainConfig::default())?;
        Ok((t.inference_model(), t.stats))
    }
}

fn check_finite(g: &Graph<f32>, v: Var, step: u64, what: &str) -> Result<()> {
    let x = g.value(v).item();
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            step: step + 1,
            reason: format!("{what} is {x}"),
        })
    }
}

/// Files of a run directory.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.txt")
    }

    pub fn losses(&self) -> PathBuf {
        self.root.join("losses.csv")
    }

    pub fn checkpoint(&self, step: u64) -> PathBuf {
        self.root.join(format!("ckpt-{step}.vgck"))
    }

    pub fn sample(&self, step: u64, direction: &str) -> PathBuf {
        self.root.join("samples").join(format!("step-{step}-{direction}.wav"))
    }

    /// The checkpoint with the highest step number, if any.
    pub fn latest_checkpoint(&self) -> Result<Option<(u64, PathBuf)>> {
        let mut best = None;
        for entry in fs::read_dir(&self.root)? {
            let path = entry?.path();
            let step = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_prefix("ckpt-")?.strip_suffix(".vgck")?.parse::<u64>().ok());
            if let Some(step) = step {
                if best.as_ref().is_none_or(|(s, _)| step > *s) {
                    best = Some((step, path));
                }
            }
        }
        Ok(best)
    }
}

/// Outcome of [`train`].
#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub trainer: Trainer,
    pub final_checkpoint: PathBuf,
    /// Reports of the steps run by this call.
    pub reports: Vec<LossReport>,
    /// Steps after warm-up whose domain-discriminator losses left (0.01, 4.0).
    pub corridor_violations: u64,
}

/// Steps after which the discriminator-loss corridor is monitored.
pub const WARMUP_STEPS: u64 = 200;

fn csv_header() -> String {
    format!("step,{}", LossReport::csv_header())
}

/// Reads `losses.csv`, keeping rows with `step <= upto`.
pub fn read_losses(path: impl AsRef<Path>, upto: Option<u64>) -> Result<Vec<(u64, LossReport)>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let (step, rest) = line
            .split_once(',')
            .ok_or_else(|| Error::InvalidArgument(format!("bad loss row {line:?}")))?;
        let step: u64 = step
            .parse()
            .map_err(|e| Error::InvalidArgument(format!("bad step in loss row: {e}")))?;
        if upto.is_some_and(|u| step > u) {
            continue;
        }
        rows.push((step, LossReport::parse_csv_row(rest)?));
    }
    Ok(rows)
}

/// Runs `config.steps` steps (counting any resumed ones) writing the run
/// directory layout: `config.txt`, `losses.csv`, `ckpt-{step}.vgck` and
/// `samples/step-{n}-{AB|BA}.wav`.
///
/// With `resume`, training continues from that checkpoint and the loss log is
/// truncated to the checkpoint's step first.
pub fn train(config: &TrainConfig, corpus: &StyleCorpus, run: &RunDir, resume: Option<&Path>) -> Result<TrainSummary> {
    config.validate()?;
    fs::create_dir_all(&run.root)?;
    fs::write(run.config(), config.to_text())?;
    let mut trainer = match resume {
        Some(path) => {
            let mut t = Trainer::from_checkpoint(&Checkpoint::load(path)?, config.clone())?;
            t.stats = corpus.stats;
            t
        }
        None => Trainer::new(config.clone(), corpus.stats)?,
    };
    let mut log = String::new();
    log.push_str(&csv_header());
    log.push('\n');
    if resume.is_some() && run.losses().exists() {
        for (step, r) in read_losses(run.losses(), Some(trainer.step()))? {
            log.push_str(&format!("{step},{}\n", r.csv_row()));
        }
    }
    fs::write(run.losses(), &log)?;
    let mut csv = fs::OpenOptions::new().append(true).open(run.losses())?;

    let mut reports = Vec::new();
    let mut corridor_violations = 0;
    while trainer.step() < config.steps {
        let report = match trainer.train_step(corpus) {
            Ok(r) => r,
            Err(e) => {
                let dump = run.root.join("diverged.txt");
                let _ = fs::write(
                    &dump,
                    format!(
                        "{e}\nlast reports:\n{:#?}\n",
                        reports.iter().rev().take(5).collect::<Vec<_>>()
                    ),
                );
                return Err(e);
            }
        };
        let step = trainer.step();
        writeln!(csv, "{step},{}", report.csv_row())?;
        if step > WARMUP_STEPS {
            for (name, v) in [("L_D_A", report.l_d_a), ("L_D_B", report.l_d_b)] {
                if !(v > 0.01 && v < 4.0) {
                    corridor_violations += 1;
                    log::warn!("step {step}: {name} = {v:.4} outside (0.01, 4.0)");
                }
            }
        }
        if step % 50 == 0 {
            log::info!(
                "step {step}: L_D {:.4} L_G {:.4} style {:.4} const {:.4}",
                report.l_d,
                report.l_g,
                report.l_d_style,
                report.l_const_a + report.l_const_b
            );
        }
        reports.push(report);
        if config.checkpoint_every > 0 && step % config.checkpoint_every == 0 && step < config.steps {
            trainer.checkpoint().save(run.checkpoint(step))?;
        }
        if config.eval_every > 0 && step % config.eval_every == 0 {
            write_samples(&trainer, corpus, run, step)?;
        }
    }
    csv.flush()?;
    let final_checkpoint = run.checkpoint(trainer.step());
    trainer.checkpoint().save(&final_checkpoint)?;
    Ok(TrainSummary {
        trainer,
        final_checkpoint,
        reports,
        corridor_violations,
    })
}

/// Converts the first utterance of each pool and writes both directions.
pub fn write_samples(trainer: &Trainer, corpus: &StyleCorpus, run: &RunDir, step: u64) -> Result<()> {
    fs::create_dir_all(run.root.join("samples"))?;
    let how = Reconstruction::GriffinLim {
        iters: trainer.config.gl_iters.max(1),
    };
    let mut model = trainer.inference_model();
    for (label, dir) in [(StyleLabel::A, "AB"), (StyleLabel::B, "BA")] {
        let sample = &corpus.pool(label)[0];
        let grid = model.generator(label).convert(sample)?;
        save_wav(run.sample(step, dir), &sample.reconstruct(&grid, how)?)?;
    }
    Ok(())
}

/// All parameter stores of a model, flattened to `(name, values)` for comparisons.
pub fn parameter_snapshot(stores: &[&ParamStore<f32>]) -> Vec<(String, Vec<f32>)> {
    stores
        .iter()
        .flat_map(|s| s.named().map(|(n, t)| (n.to_string(), t.data().to_vec())))
        .collect()
}
