//! Adversarial losses and parameter gradients for every model family.
//!
//! FAIR families minimize `mean(w · (α log Pψ(s|x) − log Pφ(y|x)))` over the
//! weighting net θ and predictor φ while the adversary ψ maximizes it. FAD
//! families play the same game on a learned representation `z = f_θ(x)`.
//! Reweighing-NN trains φ alone on fixed group/label weights.
//!
//! Gradients returned in [`BatchGrads`] are always descent directions: the
//! adversary's entry is the negated gradient of the objective.

pub mod arch;
pub mod toy;

use crate::dist::{bernoulli_log_prob, clamp_prob, BernoulliParam, BetaParam, BetaSample, RngStream, BETA_PARAM_MAX, BETA_PARAM_MIN};
use crate::error::{Error, Result};
use crate::nncore::{ForwardPass, Gradients, Mode, NetSpec, Network};
use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

pub use arch::{default_architecture, nominal_input_width, Architecture, DatasetKind};

/// FAD-prob clamps `log σ` to this range before exponentiating.
pub const LOG_SIGMA_RANGE: (f64, f64) = (-20.0, 5.0);
/// Monte Carlo samples used when scoring a FAD-prob model.
pub const FAD_PROB_EVAL_SAMPLES: usize = 32;
const FAD_PROB_EVAL_STREAM: u64 = 0xfad9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    FairScalar,
    FairBernoulli,
    FairBetaSf,
    FairBetaRep,
    Fad,
    FadProb,
    ReweighingNn,
}

impl Family {
    pub const ALL: [Family; 7] = [
        Family::FairScalar,
        Family::FairBernoulli,
        Family::FairBetaSf,
        Family::FairBetaRep,
        Family::Fad,
        Family::FadProb,
        Family::ReweighingNn,
    ];

    pub fn is_fair(self) -> bool {
        matches!(
            self,
            Family::FairScalar | Family::FairBernoulli | Family::FairBetaSf | Family::FairBetaRep
        )
    }

    pub fn is_fad(self) -> bool {
        matches!(self, Family::Fad | Family::FadProb)
    }

    /// Families whose θ gradient is a score-function estimate.
    pub fn is_score_function(self) -> bool {
        matches!(self, Family::FairBernoulli | Family::FairBetaSf)
    }

    pub fn is_beta(self) -> bool {
        matches!(self, Family::FairBetaSf | Family::FairBetaRep)
    }

    /// Default grid of the trade-off knob.
    pub fn default_grid(self) -> Vec<f64> {
        if self == Family::ReweighingNn {
            vec![0.0, 1e-3, 1e-2, 1e-1, 1.0]
        } else {
            vec![0.0, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 1e2, 1e3]
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::FairScalar => "FAIR-scalar",
            Family::FairBernoulli => "FAIR-Bernoulli",
            Family::FairBetaSf => "FAIR-betaSF",
            Family::FairBetaRep => "FAIR-betaREP",
            Family::Fad => "FAD",
            Family::FadProb => "FAD-prob",
            Family::ReweighingNn => "Reweighing-NN",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            Family::FairScalar => "fair-scalar",
            Family::FairBernoulli => "fair-bernoulli",
            Family::FairBetaSf => "fair-beta-sf",
            Family::FairBetaRep => "fair-beta-rep",
            Family::Fad => "fad",
            Family::FadProb => "fad-prob",
            Family::ReweighingNn => "reweighing-nn",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Family::ALL
            .into_iter()
            .find(|f| f.slug().replace('-', "") == key)
            .ok_or_else(|| Error::Config(format!("unknown family '{s}'")))
    }
}

/// Rows of a mini-batch.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub x: &'a Array2<f64>,
    pub y: &'a [u8],
    pub s: &'a [u8],
}

impl<'a> Batch<'a> {
    pub fn new(x: &'a Array2<f64>, y: &'a [u8], s: &'a [u8]) -> Result<Self> {
        if x.nrows() != y.len() || y.len() != s.len() {
            return Err(Error::Config(format!(
                "batch rows disagree: x {}, y {}, s {}",
                x.nrows(),
                y.len(),
                s.len()
            )));
        }
        if y.iter().chain(s).any(|&v| v > 1) {
            return Err(Error::Config("labels and sensitive values must be 0 or 1".into()));
        }
        Ok(Self { x, y, s })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// A trained or training model of any family. `alpha` doubles as the
/// Reweighing-NN interpolation knob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairModel {
    pub family: Family,
    pub alpha: f64,
    pub theta: Option<Network>,
    pub phi: Network,
    pub psi: Option<Network>,
    pub mu: Option<Network>,
    pub lambda_l2: f64,
    /// Monte Carlo samples per instance and step (probabilistic families).
    pub samples: usize,
}

impl FairModel {
    /// Builds the networks of `arch` for `input_width` features.
    pub fn new(
        family: Family,
        alpha: f64,
        arch: &Architecture,
        input_width: usize,
        with_baseline: bool,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be a finite non-negative number, got {alpha}")));
        }
        if family == Family::ReweighingNn && alpha > 1.0 {
            return Err(Error::Config(format!("the reweighing knob must lie in [0, 1], got {alpha}")));
        }
        let theta = match (&arch.theta, family) {
            (None, Family::ReweighingNn) => None,
            (Some(spec), f) if f != Family::ReweighingNn => Some(build_theta(spec, family, input_width, rng)?),
            _ => return Err(Error::Config(format!("{family}: weighting/encoder net mismatch"))),
        };
        let head_input = match family {
            Family::Fad => theta.as_ref().expect("checked").output_width(),
            Family::FadProb => theta.as_ref().expect("checked").output_width() / 2,
            _ => input_width,
        };
        let phi = Network::from_spec(&check_classifier(&arch.phi, "predictor")?, head_input, rng)?;
        let psi = match (&arch.psi, family) {
            (None, Family::ReweighingNn) => None,
            (Some(spec), f) if f != Family::ReweighingNn => {
                Some(Network::from_spec(&check_classifier(spec, "adversary")?, head_input, rng)?)
            }
            _ => return Err(Error::Config(format!("{family}: adversary net mismatch"))),
        };
        let mu = if with_baseline {
            if !family.is_score_function() {
                return Err(Error::Config(format!("{family} has no score-function gradient to baseline")));
            }
            let spec = arch
                .mu
                .clone()
                .unwrap_or_else(|| arch::baseline_spec(arch.theta.as_ref().expect("FAIR family")));
            if spec.output_width() != 1 {
                return Err(Error::Config("baseline net must have one output".into()));
            }
            Some(Network::from_spec(&spec, input_width, rng)?)
        } else {
            None
        };
        Ok(Self {
            family,
            alpha,
            theta,
            phi,
            psi,
            mu,
            lambda_l2: 0.0,
            samples: 1,
        })
    }

    fn theta(&self) -> Result<&Network> {
        self.theta
            .as_ref()
            .ok_or_else(|| Error::State(format!("{} model has no θ network", self.family)))
    }

    fn psi(&self) -> Result<&Network> {
        self.psi
            .as_ref()
            .ok_or_else(|| Error::State(format!("{} model has no adversary", self.family)))
    }

    /// Eval-mode scores.
    pub fn scores(&self, x: &Array2<f64>) -> Result<Scores> {
        match self.family {
            Family::ReweighingNn => Ok(Scores {
                y: column0(&self.phi.predict(x)?),
                s: None,
                weight: None,
            }),
            f if f.is_fair() => {
                let theta_out = self.theta()?.predict(x)?;
                Ok(Scores {
                    y: column0(&self.phi.predict(x)?),
                    s: Some(column0(&self.psi()?.predict(x)?)),
                    weight: Some(weight_summary(f, &theta_out)),
                })
            }
            Family::Fad => {
                let z = self.theta()?.predict(x)?;
                Ok(Scores {
                    y: column0(&self.phi.predict(&z)?),
                    s: Some(column0(&self.psi()?.predict(&z)?)),
                    weight: None,
                })
            }
            Family::FadProb => {
                let out = self.theta()?.predict(x)?;
                let k = out.ncols() / 2;
                let mut rng = RngStream::new(FAD_PROB_EVAL_STREAM);
                let mut py = vec![0.0; x.nrows()];
                let mut ps = vec![0.0; x.nrows()];
                for _ in 0..FAD_PROB_EVAL_SAMPLES {
                    let eps = Array2::from_shape_fn((x.nrows(), k), |_| rng.standard_normal());
                    let (z, _, _) = fad_prob_latent(&out, &eps);
                    for (acc, v) in py.iter_mut().zip(column0(&self.phi.predict(&z)?)) {
                        *acc += v / FAD_PROB_EVAL_SAMPLES as f64;
                    }
                    for (acc, v) in ps.iter_mut().zip(column0(&self.psi()?.predict(&z)?)) {
                        *acc += v / FAD_PROB_EVAL_SAMPLES as f64;
                    }
                }
                Ok(Scores {
                    y: py,
                    s: Some(ps),
                    weight: None,
                })
            }
            _ => unreachable!("all families covered"),
        }
    }

    /// All trainable networks with their roles.
    pub fn networks(&self) -> Vec<(&'static str, &Network)> {
        let mut out = Vec::new();
        if let Some(t) = &self.theta {
            out.push(("theta", t));
        }
        out.push(("phi", &self.phi));
        if let Some(p) = &self.psi {
            out.push(("psi", p));
        }
        if let Some(m) = &self.mu {
            out.push(("mu", m));
        }
        out
    }

    /// Applies one optimizer step per network with a positive rate and folds
    /// the batch statistics of its pass into its running statistics. A zero
    /// rate freezes that network entirely.
    pub fn apply(&mut self, grads: &BatchGrads, rates: &LearningRates) -> Result<()> {
        let lambda = self.lambda_l2;
        fn step(net: &mut Network, g: &Gradients, pass: Option<&ForwardPass>, lr: f64, lambda: f64) -> Result<()> {
            if lr == 0.0 {
                return Ok(());
            }
            let mut g = g.clone();
            net.add_l2_gradient(&mut g, lambda)?;
            net.adam_step(&g, lr)?;
            if let Some(p) = pass {
                net.update_running_stats(p)?;
            }
            Ok(())
        }
        if let (Some(net), Some(g)) = (&mut self.theta, &grads.theta) {
            step(net, g, grads.passes.theta.as_ref(), rates.theta, lambda)?;
        }
        step(&mut self.phi, &grads.phi, grads.passes.phi.as_ref(), rates.phi, lambda)?;
        if let (Some(net), Some(g)) = (&mut self.psi, &grads.psi) {
            step(net, g, grads.passes.psi.as_ref(), rates.psi, lambda)?;
        }
        if let (Some(net), Some(g)) = (&mut self.mu, &grads.mu) {
            step(net, g, grads.passes.mu.as_ref(), rates.mu, 0.0)?;
        }
        Ok(())
    }
}

fn build_theta(spec: &NetSpec, family: Family, input_width: usize, rng: &mut RngStream) -> Result<Network> {
    use crate::nncore::Activation::*;
    let ok = match family {
        Family::FairScalar | Family::FairBernoulli => spec.head == Sigmoid && spec.output_width() == 1,
        Family::FairBetaSf | Family::FairBetaRep => spec.head == Exp && spec.output_width() == 2,
        Family::Fad => true,
        Family::FadProb => spec.head == Identity && spec.output_width().is_multiple_of(2),
        Family::ReweighingNn => false,
    };
    if !ok {
        return Err(Error::Config(format!(
            "{family}: θ head {} with width {} does not match the family",
            spec.head,
            spec.output_width()
        )));
    }
    Network::from_spec(spec, input_width, rng)
}

fn check_classifier(spec: &NetSpec, role: &str) -> Result<NetSpec> {
    if spec.head != crate::nncore::Activation::Sigmoid || spec.output_width() != 1 {
        return Err(Error::Config(format!("{role} net must end in one sigmoid unit")));
    }
    Ok(spec.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub theta: f64,
    pub phi: f64,
    pub psi: f64,
    pub mu: f64,
}

impl LearningRates {
    pub fn uniform(lr: f64) -> Self {
        Self {
            theta: lr,
            phi: lr,
            psi: lr,
            mu: lr,
        }
    }
}

/// Eval-mode outputs: predictor scores, adversary scores and the weight
/// summary (FAIR families).
#[derive(Debug, Clone, PartialEq)]
pub struct Scores {
    pub y: Vec<f64>,
    pub s: Option<Vec<f64>>,
    pub weight: Option<Vec<f64>>,
}

fn column0(a: &Array2<f64>) -> Vec<f64> {
    a.column(0).to_vec()
}

fn beta_params(a: f64, b: f64) -> (f64, f64) {
    (a.clamp(BETA_PARAM_MIN, BETA_PARAM_MAX), b.clamp(BETA_PARAM_MIN, BETA_PARAM_MAX))
}

/// Per-instance weight summary from the θ output: `w`, `p` or the Beta mean.
pub fn weight_summary(family: Family, theta_out: &Array2<f64>) -> Vec<f64> {
    if family.is_beta() {
        theta_out
            .rows()
            .into_iter()
            .map(|r| {
                let (a, b) = beta_params(r[0], r[1]);
                a / (a + b)
            })
            .collect()
    } else {
        column0(theta_out)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Passes {
    pub theta: Option<ForwardPass>,
    pub phi: Option<ForwardPass>,
    pub psi: Option<ForwardPass>,
    pub mu: Option<ForwardPass>,
}

/// Descent gradients for one batch plus diagnostics.
#[derive(Debug, Clone)]
pub struct BatchGrads {
    pub theta: Option<Gradients>,
    pub phi: Gradients,
    pub psi: Option<Gradients>,
    pub mu: Option<Gradients>,
    /// Batch mean of the adversarial objective (weighted BCE for
    /// Reweighing-NN).
    pub objective: f64,
    /// Batch mean of `−w · log Pφ(y|x)`.
    pub predictor_loss: f64,
    /// Batch mean of `w · log Pψ(s|x)`.
    pub adversary_loss: f64,
    pub mean_weight: f64,
    /// Samples skipped because the Beta density saturated.
    pub skipped: usize,
    pub passes: Passes,
}

/// Train-mode pass of a one-unit sigmoid head with Bernoulli
/// log-likelihoods of `labels`.
struct Head {
    pass: ForwardPass,
    lp: Vec<f64>,
    dlp: Vec<f64>,
}

fn head(net: &Network, x: &Array2<f64>, labels: &[u8]) -> Result<Head> {
    let pass = net.forward(x, Mode::Train)?;
    let (lp, dlp) = labels
        .iter()
        .zip(pass.output().column(0))
        .map(|(&l, &p)| bernoulli_log_prob(l, p))
        .unzip();
    Ok(Head { pass, lp, dlp })
}

/// Backpropagates `coef_i · d lp_i` through a head.
fn head_backward(net: &Network, h: &Head, coef: &[f64]) -> Result<(Gradients, Array2<f64>)> {
    let up = Array2::from_shape_fn((coef.len(), 1), |(i, _)| coef[i] * h.dlp[i]);
    net.backward(&h.pass, &up)
}

fn check_finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::numeric(what, format!("non-finite value {value}")))
    }
}

/// Eval-mode `(log Pφ(y|x), log Pψ(s|x))` per instance, both strictly
/// negative.
pub fn log_likelihoods(model: &FairModel, x: &Array2<f64>, y: &[u8], s: &[u8]) -> Result<(Vec<f64>, Vec<f64>)> {
    let scores = model.scores(x)?;
    let ps = scores
        .s
        .ok_or_else(|| Error::Unsupported(format!("{} has no adversary", model.family)))?;
    Ok(log_likelihoods_from_scores(&scores.y, &ps, y, s))
}

pub fn log_likelihoods_from_scores(py: &[f64], ps: &[f64], y: &[u8], s: &[u8]) -> (Vec<f64>, Vec<f64>) {
    let lpy = y.iter().zip(py).map(|(&l, &p)| bernoulli_log_prob(l, p).0).collect();
    let lps = s.iter().zip(ps).map(|(&l, &p)| bernoulli_log_prob(l, p).0).collect();
    (lpy, lps)
}

/// Dispatches to the family's gradient assembly.
pub fn batch_grads(model: &FairModel, batch: &Batch, weights: Option<&[f64]>, rng: &mut RngStream) -> Result<BatchGrads> {
    match model.family {
        Family::FairScalar => fair_scalar_grads(model, batch),
        Family::FairBernoulli => fair_bernoulli_grads(model, batch, rng),
        Family::FairBetaSf => fair_beta_sf_grads(model, batch, rng),
        Family::FairBetaRep => fair_beta_rep_grads(model, batch, rng),
        Family::Fad => fad_grads(model, batch),
        Family::FadProb => fad_prob_grads(model, batch, rng),
        Family::ReweighingNn => {
            let w = weights.ok_or_else(|| Error::Config("Reweighing-NN needs instance weights".into()))?;
            reweighing_grads(model, batch, w)
        }
    }
}

/// Shared φ/ψ part of every FAIR family, given per-instance effective
/// weights (the sampled weight averaged over samples, or `w` itself).
struct Adversarial {
    phi: Head,
    psi: Head,
    bracket: Vec<f64>,
}

fn adversarial_heads(model: &FairModel, batch: &Batch) -> Result<Adversarial> {
    let phi = head(&model.phi, batch.x, batch.y)?;
    let psi = head(model.psi()?, batch.x, batch.s)?;
    let bracket = phi
        .lp
        .iter()
        .zip(&psi.lp)
        .map(|(&ly, &ls)| model.alpha * ls - ly)
        .collect();
    Ok(Adversarial { phi, psi, bracket })
}

/// Assembles φ/ψ gradients and diagnostics from effective weights.
fn finish_fair(
    model: &FairModel,
    adv: Adversarial,
    eff_w: &[f64],
    objective: f64,
    theta: (Gradients, ForwardPass),
    mu: Option<(Gradients, ForwardPass)>,
    skipped: usize,
) -> Result<BatchGrads> {
    let n = eff_w.len() as f64;
    // d/dpφ of mean(w·(α lps − lpy)) = −w/n · dlpy
    let coef_phi: Vec<f64> = eff_w.iter().map(|w| -w / n).collect();
    let (phi_g, _) = head_backward(&model.phi, &adv.phi, &coef_phi)?;
    // ψ ascends: descent direction is −α w/n · dlps
    let coef_psi: Vec<f64> = eff_w.iter().map(|w| -model.alpha * w / n).collect();
    let (psi_g, _) = head_backward(model.psi()?, &adv.psi, &coef_psi)?;
    let predictor_loss = eff_w.iter().zip(&adv.phi.lp).map(|(w, l)| -w * l).sum::<f64>() / n;
    let adversary_loss = eff_w.iter().zip(&adv.psi.lp).map(|(w, l)| w * l).sum::<f64>() / n;
    let (theta_g, theta_pass) = theta;
    let (mu_g, mu_pass) = match mu {
        Some((g, p)) => (Some(g), Some(p)),
        None => (None, None),
    };
    Ok(BatchGrads {
        theta: Some(theta_g),
        phi: phi_g,
        psi: Some(psi_g),
        mu: mu_g,
        objective: check_finite(objective, "batch objective")?,
        predictor_loss,
        adversary_loss,
        mean_weight: eff_w.iter().sum::<f64>() / n,
        skipped,
        passes: Passes {
            theta: Some(theta_pass),
            phi: Some(adv.phi.pass),
            psi: Some(adv.psi.pass),
            mu: mu_pass,
        },
    })
}

/// `w = f_θ(x)` enters the loss directly; every gradient is exact.
pub fn fair_scalar_grads(model: &FairModel, batch: &Batch) -> Result<BatchGrads> {
    expect_family(model, Family::FairScalar)?;
    let theta = model.theta()?;
    let adv = adversarial_heads(model, batch)?;
    let tpass = theta.forward(batch.x, Mode::Train)?;
    let w = column0(tpass.output());
    let n = w.len() as f64;
    let objective = w.iter().zip(&adv.bracket).map(|(w, b)| w * b).sum::<f64>() / n;
    let up = Array2::from_shape_fn((w.len(), 1), |(i, _)| adv.bracket[i] / n);
    let (tg, _) = theta.backward(&tpass, &up)?;
    finish_fair(model, adv, &w, objective, (tg, tpass), None, 0)
}

fn expect_family(model: &FairModel, family: Family) -> Result<()> {
    if model.family != family {
        return Err(Error::Config(format!("expected a {family} model, got {}", model.family)));
    }
    Ok(())
}

/// Optional baseline pass: `b_μ(x)` per row.
fn baseline(model: &FairModel, x: &Array2<f64>) -> Result<Option<(ForwardPass, Vec<f64>)>> {
    match &model.mu {
        None => Ok(None),
        Some(mu) => {
            let pass = mu.forward(x, Mode::Train)?;
            let b = column0(pass.output());
            Ok(Some((pass, b)))
        }
    }
}

/// Squared-error gradient of the baseline towards the sampled `w · bracket`.
fn baseline_grads(model: &FairModel, pass: ForwardPass, targets: &[f64], b: &[f64]) -> Result<(Gradients, ForwardPass)> {
    let n = b.len() as f64;
    let up = Array2::from_shape_fn((b.len(), 1), |(i, _)| -2.0 * (targets[i] - b[i]) / n);
    let (g, _) = model.mu.as_ref().expect("baseline present").backward(&pass, &up)?;
    Ok((g, pass))
}

/// Score-function estimate with Bernoulli weights: the θ upstream on `p` is
/// `(w·B − b) · d log P(w|p)/dp / n`, averaged over samples.
pub fn fair_bernoulli_grads(model: &FairModel, batch: &Batch, rng: &mut RngStream) -> Result<BatchGrads> {
    fair_bernoulli_grads_with(model, batch, |_, _, param| param.sample(rng))
}

/// [`fair_bernoulli_grads`] with draws supplied by `draw(sample, row, param)`.
pub fn fair_bernoulli_grads_with<D>(model: &FairModel, batch: &Batch, mut draw: D) -> Result<BatchGrads>
where
    D: FnMut(usize, usize, &BernoulliParam) -> u8,
{
    expect_family(model, Family::FairBernoulli)?;
    let theta = model.theta()?;
    let adv = adversarial_heads(model, batch)?;
    let tpass = theta.forward(batch.x, Mode::Train)?;
    let p = column0(tpass.output());
    let base = baseline(model, batch.x)?;
    let n = p.len() as f64;
    let k = model.samples.max(1);
    let mut eff_w = vec![0.0; p.len()];
    let mut up = Array2::zeros((p.len(), 1));
    let mut mu_target = vec![0.0; p.len()];
    let mut objective = 0.0;
    for j in 0..k {
        for i in 0..p.len() {
            let param = BernoulliParam::new(p[i])?;
            let w = draw(j, i, &param);
            let wf = f64::from(w);
            let (_, dlogp) = param.log_prob(w);
            let reward = wf * adv.bracket[i];
            let b = base.as_ref().map_or(0.0, |(_, b)| b[i]);
            up[[i, 0]] += (reward - b) * dlogp / (n * k as f64);
            eff_w[i] += wf / k as f64;
            mu_target[i] += reward / k as f64;
            objective += reward / (n * k as f64);
        }
    }
    let (tg, _) = theta.backward(&tpass, &up)?;
    let mu = match base {
        Some((pass, b)) => Some(baseline_grads(model, pass, &mu_target, &b)?),
        None => None,
    };
    finish_fair(model, adv, &eff_w, objective, (tg, tpass), mu, 0)
}

/// Score-function estimate with Beta weights, chained through the exp head.
pub fn fair_beta_sf_grads(model: &FairModel, batch: &Batch, rng: &mut RngStream) -> Result<BatchGrads> {
    fair_beta_sf_grads_with(model, batch, |_, _, param| param.sample(rng))
}

/// [`fair_beta_sf_grads`] with draws supplied by `draw(sample, row, param)`.
pub fn fair_beta_sf_grads_with<D>(model: &FairModel, batch: &Batch, mut draw: D) -> Result<BatchGrads>
where
    D: FnMut(usize, usize, &BetaParam) -> BetaSample,
{
    expect_family(model, Family::FairBetaSf)?;
    let theta = model.theta()?;
    let adv = adversarial_heads(model, batch)?;
    let tpass = theta.forward(batch.x, Mode::Train)?;
    let out = tpass.output().clone();
    let base = baseline(model, batch.x)?;
    let rows = out.nrows();
    let n = rows as f64;
    let k = model.samples.max(1);
    let mut eff_w = vec![0.0; rows];
    let mut up = Array2::zeros((rows, 2));
    let mut mu_target = vec![0.0; rows];
    let mut objective = 0.0;
    for j in 0..k {
        for i in 0..rows {
            let (a, b) = beta_params(out[[i, 0]], out[[i, 1]]);
            let param = BetaParam::new(a, b)?;
            let sample = draw(j, i, &param);
            let (da, db) = param.score_grads(sample.w)?;
            let reward = sample.w * adv.bracket[i];
            let bl = base.as_ref().map_or(0.0, |(_, b)| b[i]);
            let scale = (reward - bl) / (n * k as f64);
            up[[i, 0]] += scale * da;
            up[[i, 1]] += scale * db;
            eff_w[i] += sample.w / k as f64;
            mu_target[i] += reward / k as f64;
            objective += reward / (n * k as f64);
        }
    }
    let (tg, _) = theta.backward(&tpass, &up)?;
    let mu = match base {
        Some((pass, b)) => Some(baseline_grads(model, pass, &mu_target, &b)?),
        None => None,
    };
    finish_fair(model, adv, &eff_w, objective, (tg, tpass), mu, 0)
}

/// Pathwise estimate: `dL/dw = B/n` chained through the implicit
/// `dw/da, dw/db`. Saturated samples contribute no θ gradient and are
/// counted in `skipped`.
pub fn fair_beta_rep_grads(model: &FairModel, batch: &Batch, rng: &mut RngStream) -> Result<BatchGrads> {
    fair_beta_rep_grads_with(model, batch, |_, _, param| param.sample(rng))
}

/// [`fair_beta_rep_grads`] with draws supplied by `draw(sample, row, param)`.
pub fn fair_beta_rep_grads_with<D>(model: &FairModel, batch: &Batch, mut draw: D) -> Result<BatchGrads>
where
    D: FnMut(usize, usize, &BetaParam) -> BetaSample,
{
    expect_family(model, Family::FairBetaRep)?;
    let theta = model.theta()?;
    let adv = adversarial_heads(model, batch)?;
    let tpass = theta.forward(batch.x, Mode::Train)?;
    let out = tpass.output().clone();
    let rows = out.nrows();
    let n = rows as f64;
    let k = model.samples.max(1);
    let mut eff_w = vec![0.0; rows];
    let mut up = Array2::zeros((rows, 2));
    let mut objective = 0.0;
    let mut skipped = 0;
    for j in 0..k {
        for i in 0..rows {
            let (a, b) = beta_params(out[[i, 0]], out[[i, 1]]);
            let param = BetaParam::new(a, b)?;
            let sample = draw(j, i, &param);
            match param.reparam_grads(&sample) {
                Ok((dwa, dwb)) => {
                    let dl_dw = adv.bracket[i] / (n * k as f64);
                    up[[i, 0]] += dl_dw * dwa;
                    up[[i, 1]] += dl_dw * dwb;
                }
                Err(Error::Numeric { .. }) => skipped += 1,
                Err(e) => return Err(e),
            }
            eff_w[i] += sample.w / k as f64;
            objective += sample.w * adv.bracket[i] / (n * k as f64);
        }
    }
    let (tg, _) = theta.backward(&tpass, &up)?;
    finish_fair(model, adv, &eff_w, objective, (tg, tpass), None, skipped)
}

/// Representation adversarial game on `z = f_θ(x)`: θ and φ descend
/// `mean(α log Pψ(s|z) − log Pφ(y|z))`, ψ ascends it.
pub fn fad_grads(model: &FairModel, batch: &Batch) -> Result<BatchGrads> {
    expect_family(model, Family::Fad)?;
    let theta = model.theta()?;
    let tpass = theta.forward(batch.x, Mode::Train)?;
    let z = tpass.output().clone();
    let (dz, mut grads) = fad_heads(model, batch, &z)?;
    let (tg, _) = theta.backward(&tpass, &dz)?;
    grads.theta = Some(tg);
    grads.passes.theta = Some(tpass);
    Ok(grads)
}

/// φ/ψ gradients on a fixed representation plus `dL/dz` for the encoder.
fn fad_heads(model: &FairModel, batch: &Batch, z: &Array2<f64>) -> Result<(Array2<f64>, BatchGrads)> {
    let phi = head(&model.phi, z, batch.y)?;
    let psi = head(model.psi()?, z, batch.s)?;
    let rows = z.nrows();
    let n = rows as f64;
    let coef_phi = vec![-1.0 / n; rows];
    let (phi_g, dz_phi) = head_backward(&model.phi, &phi, &coef_phi)?;
    let coef_psi_obj = vec![model.alpha / n; rows];
    // encoder sees the objective's own gradient through ψ
    let (psi_obj_g, dz_psi) = head_backward(model.psi()?, &psi, &coef_psi_obj)?;
    let mut psi_g = psi_obj_g;
    psi_g.scale(-1.0);
    let objective = phi
        .lp
        .iter()
        .zip(&psi.lp)
        .map(|(&ly, &ls)| model.alpha * ls - ly)
        .sum::<f64>()
        / n;
    let predictor_loss = -phi.lp.iter().sum::<f64>() / n;
    let adversary_loss = psi.lp.iter().sum::<f64>() / n;
    let dz = dz_phi + dz_psi;
    Ok((
        dz,
        BatchGrads {
            theta: None,
            phi: phi_g,
            psi: Some(psi_g),
            mu: None,
            objective: check_finite(objective, "batch objective")?,
            predictor_loss,
            adversary_loss,
            mean_weight: 1.0,
            skipped: 0,
            passes: Passes {
                theta: None,
                phi: Some(phi.pass),
                psi: Some(psi.pass),
                mu: None,
            },
        },
    ))
}

/// `z = tanh(μ + σ ⊙ ε)` from the encoder output `[μ | log σ]`; also returns
/// `σ` and `z`-derivative factors for the backward pass.
pub fn fad_prob_latent(out: &Array2<f64>, eps: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let k = out.ncols() / 2;
    let mu = out.slice(s![.., ..k]);
    let log_sigma = out.slice(s![.., k..]);
    let sigma = log_sigma.mapv(|l| l.clamp(LOG_SIGMA_RANGE.0, LOG_SIGMA_RANGE.1).exp());
    let pre = &mu + &(&sigma * eps);
    let z = pre.mapv(f64::tanh);
    let dz_dpre = z.mapv(|t| 1.0 - t * t);
    (z, sigma, dz_dpre)
}

pub fn fad_prob_grads(model: &FairModel, batch: &Batch, rng: &mut RngStream) -> Result<BatchGrads> {
    let k = model.theta()?.output_width() / 2;
    let eps = Array2::from_shape_fn((batch.len(), k), |_| rng.standard_normal());
    fad_prob_grads_with_noise(model, batch, &eps)
}

/// FAD-prob gradients for a given noise draw; pathwise through `z`.
pub fn fad_prob_grads_with_noise(model: &FairModel, batch: &Batch, eps: &Array2<f64>) -> Result<BatchGrads> {
    expect_family(model, Family::FadProb)?;
    let theta = model.theta()?;
    let tpass = theta.forward(batch.x, Mode::Train)?;
    let out = tpass.output().clone();
    let k = out.ncols() / 2;
    if eps.dim() != (batch.len(), k) {
        return Err(Error::Config(format!("noise shape {:?} does not match latent ({}, {k})", eps.dim(), batch.len())));
    }
    let (z, sigma, dz_dpre) = fad_prob_latent(&out, eps);
    let (dz, mut grads) = fad_heads(model, batch, &z)?;
    let dpre = &dz * &dz_dpre;
    let mut up = Array2::zeros(out.raw_dim());
    for i in 0..out.nrows() {
        for j in 0..k {
            up[[i, j]] = dpre[[i, j]];
            let l = out[[i, k + j]];
            // straight-through outside the clamp band
            let inside = (LOG_SIGMA_RANGE.0..=LOG_SIGMA_RANGE.1).contains(&l);
            up[[i, k + j]] = if inside { dpre[[i, j]] * eps[[i, j]] * sigma[[i, j]] } else { 0.0 };
        }
    }
    let (tg, _) = theta.backward(&tpass, &up)?;
    grads.theta = Some(tg);
    grads.passes.theta = Some(tpass);
    Ok(grads)
}

/// Weighted BCE on φ alone.
pub fn reweighing_grads(model: &FairModel, batch: &Batch, weights: &[f64]) -> Result<BatchGrads> {
    expect_family(model, Family::ReweighingNn)?;
    if weights.len() != batch.len() {
        return Err(Error::Config("one weight per batch row required".into()));
    }
    let phi = head(&model.phi, batch.x, batch.y)?;
    let (g, pass, loss) = weighted_bce_from_head(&model.phi, phi, weights)?;
    let n = weights.len() as f64;
    Ok(BatchGrads {
        theta: None,
        phi: g,
        psi: None,
        mu: None,
        objective: check_finite(loss, "batch objective")?,
        predictor_loss: loss,
        adversary_loss: 0.0,
        mean_weight: weights.iter().sum::<f64>() / n,
        skipped: 0,
        passes: Passes {
            phi: Some(pass),
            ..Passes::default()
        },
    })
}

fn weighted_bce_from_head(net: &Network, h: Head, weights: &[f64]) -> Result<(Gradients, ForwardPass, f64)> {
    let n = weights.len() as f64;
    let coef: Vec<f64> = weights.iter().map(|w| -w / n).collect();
    let (g, _) = head_backward(net, &h, &coef)?;
    let loss = weights.iter().zip(&h.lp).map(|(w, l)| -w * l).sum::<f64>() / n;
    Ok((g, h.pass, loss))
}

/// Gradient of `mean(−w_i log Pφ(y_i|x_i))`.
pub fn weighted_bce_grads(net: &Network, x: &Array2<f64>, y: &[u8], weights: &[f64]) -> Result<(Gradients, f64)> {
    let h = head(net, x, y)?;
    let (g, _, loss) = weighted_bce_from_head(net, h, weights)?;
    Ok((g, loss))
}

/// Group/label reweighing: `w(s, y) = n_s · n_y / (n · n_{s,y})`.
pub fn kamiran_weights(y: &[u8], s: &[u8]) -> Result<Vec<f64>> {
    if y.len() != s.len() || y.is_empty() {
        return Err(Error::Config("labels and groups must be non-empty and aligned".into()));
    }
    let n = y.len() as f64;
    let mut n_s = [0usize; 2];
    let mut n_y = [0usize; 2];
    let mut n_sy = [[0usize; 2]; 2];
    for (&yi, &si) in y.iter().zip(s) {
        n_s[usize::from(si)] += 1;
        n_y[usize::from(yi)] += 1;
        n_sy[usize::from(si)][usize::from(yi)] += 1;
    }
    for sv in 0..2 {
        for yv in 0..2 {
            if n_sy[sv][yv] == 0 {
                return Err(Error::DegenerateData(format!("empty (s={sv}, y={yv}) cell")));
            }
        }
    }
    Ok(y.iter()
        .zip(s)
        .map(|(&yi, &si)| {
            let (sv, yv) = (usize::from(si), usize::from(yi));
            (n_s[sv] * n_y[yv]) as f64 / (n * n_sy[sv][yv] as f64)
        })
        .collect())
}

/// Reweighing-NN weights with knob `kappa ∈ [0, 1]`: `1 + κ (w_k − 1)`.
pub fn interpolated_kamiran_weights(y: &[u8], s: &[u8], kappa: f64) -> Result<Vec<f64>> {
    Ok(kamiran_weights(y, s)?.into_iter().map(|w| 1.0 + kappa * (w - 1.0)).collect())
}

/// One exported row of the weight report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceWeightRecord {
    pub index: usize,
    pub family: Family,
    pub alpha: f64,
    pub weight: f64,
    pub log_p_y: f64,
    pub log_p_s: f64,
    /// `log Pφ / log Pψ`; an instance with ratio below α is "fair enough".
    pub ratio: f64,
}

/// Per-instance weights of a FAIR model on `x`; `index` comes from
/// `row_ids`.
pub fn instance_weights(
    model: &FairModel,
    x: &Array2<f64>,
    y: &[u8],
    s: &[u8],
    row_ids: &[usize],
) -> Result<Vec<InstanceWeightRecord>> {
    if !model.family.is_fair() {
        return Err(Error::Unsupported(format!("{} does not learn instance weights", model.family)));
    }
    let scores = model.scores(x)?;
    let ps = scores.s.as_ref().expect("FAIR models have an adversary");
    let (lpy, lps) = log_likelihoods_from_scores(&scores.y, ps, y, s);
    let w = scores.weight.expect("FAIR models have weights");
    Ok((0..y.len())
        .map(|i| InstanceWeightRecord {
            index: row_ids[i],
            family: model.family,
            alpha: model.alpha,
            weight: w[i].clamp(0.0, 1.0),
            log_p_y: lpy[i],
            log_p_s: lps[i],
            ratio: lpy[i] / lps[i],
        })
        .collect())
}

/// `ln clamp(p)` helper exposed for diagnostics.
pub fn clamped_ln(p: f64) -> f64 {
    clamp_prob(p).ln()
}
