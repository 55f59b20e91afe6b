//! Adversarial, reconstruction, style, feature and smoothness terms, and their
//! assembly into the generator and discriminator objectives.
//!
//! Every function builds onto a [`Graph`], so the same code yields values for
//! logging and gradients for training.

use crate::error::{Error, Result};
use crate::model::StyleLabel;
use crate::tensor::{Graph, Real, Tensor, Var};

/// Weights of the composite objectives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// Weight of `d(x_ABA, x_A)`.
    pub alpha: f64,
    /// Weight of `d(x_AB, x_A)`.
    pub beta: f64,
    pub feat_w: f64,
    pub smooth_w: f64,
    /// Weight of the generated-data style terms in the generator objective.
    pub style_gen_w: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.5,
            feat_w: 0.1,
            smooth_w: 0.01,
            style_gen_w: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.feat_w, self.smooth_w, self.style_gen_w];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) || self.alpha <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "loss weights must be finite and nonnegative with alpha > 0: {self:?}"
            )));
        }
        Ok(())
    }

    /// Only the adversarial and reconstruction terms.
    pub fn without_extras(self) -> Self {
        Self {
            feat_w: 0.0,
            smooth_w: 0.0,
            style_gen_w: 0.0,
            ..self
        }
    }
}

fn full_like<T: Real>(g: &mut Graph<T>, like: Var, value: f64) -> Var {
    let shape = g.value(like).shape().to_vec();
    g.constant(Tensor::full(shape, T::c(value)))
}

/// Non-saturating generator term `−E[log D(fake)]`.
pub fn generator_adversarial<T: Real>(g: &mut Graph<T>, d_fake: Var) -> Result<Var> {
    let ones = full_like(g, d_fake, 1.0);
    g.bce(d_fake, ones)
}

/// `−E[log D(real)] − E[log(1 − D(fake))]`.
pub fn discriminator_adversarial<T: Real>(g: &mut Graph<T>, d_real: Var, d_fake: Var) -> Result<Var> {
    let ones = full_like(g, d_real, 1.0);
    let zeros = full_like(g, d_fake, 0.0);
    let real = g.bce(d_real, ones)?;
    let fake = g.bce(d_fake, zeros)?;
    g.add(real, fake)
}

/// `α·l1(x_ABA, x_A) + β·l1(x_AB, x_A)`.
pub fn const_loss<T: Real>(g: &mut Graph<T>, x: Var, translated: Var, round_trip: Var, w: &LossWeights) -> Result<Var> {
    let rec = g.l1(round_trip, x)?;
    let rec = g.mul_scalar(rec, T::c(w.alpha));
    if w.beta == 0.0 {
        if g.value(translated).shape() != g.value(x).shape() {
            return Err(Error::Shape("translated batch does not match its source".into()));
        }
        return Ok(rec);
    }
    let keep = g.l1(translated, x)?;
    let keep = g.mul_scalar(keep, T::c(w.beta));
    g.add(rec, keep)
}

fn labelled_ce<T: Real>(g: &mut Graph<T>, p: Var, label: StyleLabel) -> Result<Var> {
    let [n, _] = g.value(p).dims2()?;
    let t = g.constant(label.batch(n));
    g.cross_entropy(p, t)
}

/// Style terms a source-domain batch contributes:
/// `d(D_S(x), label) + d(D_S(x_translated), other) + d(D_S(x_round_trip), label)`.
pub fn style_loss<T: Real>(
    g: &mut Graph<T>,
    p_source: Var,
    p_translated: Var,
    p_round_trip: Var,
    label: StyleLabel,
) -> Result<Var> {
    let real = labelled_ce(g, p_source, label)?;
    let generated = generated_style_loss(g, p_translated, p_round_trip, label)?;
    g.add(real, generated)
}

/// The two generated-data terms of [`style_loss`].
pub fn generated_style_loss<T: Real>(
    g: &mut Graph<T>,
    p_translated: Var,
    p_round_trip: Var,
    label: StyleLabel,
) -> Result<Var> {
    let tr = labelled_ce(g, p_translated, label.other())?;
    let rt = labelled_ce(g, p_round_trip, label)?;
    g.add(tr, rt)
}

/// Mean over taps of the mean squared difference between batch-mean pooled
/// features of real and generated inputs.
pub fn feature_loss<T: Real>(g: &mut Graph<T>, real: &[Var], fake: &[Var]) -> Result<Var> {
    if real.len() != fake.len() || real.is_empty() {
        return Err(Error::Shape(format!(
            "feature taps: {} real vs {} generated",
            real.len(),
            fake.len()
        )));
    }
    let mut total = None;
    for (&r, &f) in real.iter().zip(fake) {
        let rm = g.mean_rows(r)?;
        let fm = g.mean_rows(f)?;
        let d = g.l2(rm, fm)?;
        total = Some(match total {
            None => d,
            Some(acc) => g.add(acc, d)?,
        });
    }
    let total = total.expect("at least one tap");
    Ok(g.mul_scalar(total, T::c(1.0 / real.len() as f64)))
}

/// Sum over adjacent frame pairs of the mean absolute column difference,
/// averaged over the batch.
pub fn smoothness<T: Real>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let t = *g.value(x).shape().last().expect("non-empty shape");
    if t < 2 {
        return Err(Error::Shape(format!("smoothness needs at least 2 frames, got {t}")));
    }
    let d = g.time_diff(x)?;
    let a = g.abs(d);
    let m = g.mean(a)?;
    Ok(g.mul_scalar(m, T::c((t - 1) as f64)))
}

/// Graph nodes of every generator-side term.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorTerms {
    /// Adversarial term of `G_AB` against `D_B`.
    pub l_gb: Var,
    /// Adversarial term of `G_BA` against `D_A`.
    pub l_ga: Var,
    pub const_a: Var,
    pub const_b: Var,
    pub feature: Var,
    pub smooth_ab: Var,
    pub smooth_ba: Var,
    /// Generated-data style terms of both directions.
    pub style: Var,
}

impl GeneratorTerms {
    /// `L_G + feat_w·feature + smooth_w·(smooth_AB + smooth_BA) + style_gen_w·style`
    /// with `L_G = (L_CONST_A + L_GB) + (L_CONST_B + L_GA)`.
    pub fn objective<T: Real>(&self, g: &mut Graph<T>, w: &LossWeights) -> Result<Var> {
        let gan_ab = g.add(self.const_a, self.l_gb)?;
        let gan_ba = g.add(self.const_b, self.l_ga)?;
        let mut total = g.add(gan_ab, gan_ba)?;
        let smooth = g.add(self.smooth_ab, self.smooth_ba)?;
        for (term, weight) in [
            (self.feature, w.feat_w),
            (smooth, w.smooth_w),
            (self.style, w.style_gen_w),
        ] {
            if weight != 0.0 {
                let t = g.mul_scalar(term, T::c(weight));
                total = g.add(total, t)?;
            }
        }
        Ok(total)
    }
}

/// Graph nodes of every discriminator-side term.
#[derive(Clone, Copy, Debug)]
pub struct DiscriminatorTerms {
    pub l_da: Var,
    pub l_db: Var,
    pub style_a: Var,
    pub style_b: Var,
}

impl DiscriminatorTerms {
    /// `L_D = L_D_A + L_D_B + (L_D_STYLE_A + L_D_STYLE_B)`.
    pub fn objective<T: Real>(&self, g: &mut Graph<T>) -> Result<Var> {
        let adv = g.add(self.l_da, self.l_db)?;
        let style = g.add(self.style_a, self.style_b)?;
        g.add(adv, style)
    }
}

/// Every named loss value of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub l_gb: f64,
    pub l_ga: f64,
    pub l_const_a: f64,
    pub l_const_b: f64,
    pub l_gan_ab: f64,
    pub l_gan_ba: f64,
    pub l_g: f64,
    pub l_d_a: f64,
    pub l_d_b: f64,
    pub l_d_style_a: f64,
    pub l_d_style_b: f64,
    pub l_d_style: f64,
    pub l_d: f64,
    pub feature: f64,
    pub smoothness: f64,
}

/// Column names of [`LossReport::csv_row`].
pub const CSV_COLUMNS: [&str; 15] = [
    "L_GB",
    "L_GA",
    "L_CONST_A",
    "L_CONST_B",
    "L_GAN_AB",
    "L_GAN_BA",
    "L_G",
    "L_D_A",
    "L_D_B",
    "L_D_STYLE_A",
    "L_D_STYLE_B",
    "L_D_STYLE",
    "L_D",
    "feature",
    "smoothness",
];

impl LossReport {
    /// Assembles the report from individually evaluated terms.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        l_gb: f64,
        l_ga: f64,
        l_const_a: f64,
        l_const_b: f64,
        l_d_a: f64,
        l_d_b: f64,
        l_d_style_a: f64,
        l_d_style_b: f64,
        feature: f64,
        smoothness: f64,
    ) -> Self {
        let l_gan_ab = l_const_a + l_gb;
        let l_gan_ba = l_const_b + l_ga;
        let l_d_style = l_d_style_a + l_d_style_b;
        Self {
            l_gb,
            l_ga,
            l_const_a,
            l_const_b,
            l_gan_ab,
            l_gan_ba,
            l_g: l_gan_ab + l_gan_ba,
            l_d_a,
            l_d_b,
            l_d_style_a,
            l_d_style_b,
            l_d_style,
            l_d: l_d_a + l_d_b + l_d_style,
            feature,
            smoothness,
        }
    }

    /// Reads the scalar nodes of both term sets from `g`.
    pub fn from_graph<T: Real>(g: &Graph<T>, gen: &GeneratorTerms, disc: &DiscriminatorTerms) -> Self {
        let v = |x: Var| g.value(x).item().f64();
        Self::from_parts(
            v(gen.l_gb),
            v(gen.l_ga),
            v(gen.const_a),
            v(gen.const_b),
            v(disc.l_da),
            v(disc.l_db),
            v(disc.style_a),
            v(disc.style_b),
            v(gen.feature),
            v(gen.smooth_ab) + v(gen.smooth_ba),
        )
    }

    pub fn values(&self) -> [f64; 15] {
        [
            self.l_gb,
            self.l_ga,
            self.l_const_a,
            self.l_const_b,
            self.l_gan_ab,
            self.l_gan_ba,
            self.l_g,
            self.l_d_a,
            self.l_d_b,
            self.l_d_style_a,
            self.l_d_style_b,
            self.l_d_style,
            self.l_d,
            self.feature,
            self.smoothness,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }

    pub fn csv_header() -> String {
        CSV_COLUMNS.join(",")
    }

    /// Values in [`CSV_COLUMNS`] order, shortest round-trip formatting.
    pub fn csv_row(&self) -> String {
        self.values()
            .iter()
            .map(|v| format!("{v:?}"))
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn parse_csv_row(row: &str) -> Result<Self> {
        let vals: Vec<f64> = row
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidArgument(format!("loss row: {e}")))?;
        if vals.len() != CSV_COLUMNS.len() {
            return Err(Error::InvalidArgument(format!(
                "loss row has {} fields, expected {}",
                vals.len(),
                CSV_COLUMNS.len()
            )));
        }
        Ok(Self {
            l_gb: vals[0],
            l_ga: vals[1],
            l_const_a: vals[2],
            l_const_b: vals[3],
            l_gan_ab: vals[4],
            l_gan_ba: vals[5],
            l_g: vals[6],
            l_d_a: vals[7],
            l_d_b: vals[8],
            l_d_style_a: vals[9],
            l_d_style_b: vals[10],
            l_d_style: vals[11],
            l_d: vals[12],
            feature: vals[13],
            smoothness: vals[14],
        })
    }
}
