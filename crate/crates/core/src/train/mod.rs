//! Mini-batch adversarial training with validation early stopping.

use crate::data::{SplitSet, TabularDataset};
use crate::dist::RngStream;
use crate::error::{Error, Result};
use crate::fairmodels::{
    batch_grads, default_architecture, interpolated_kamiran_weights, log_likelihoods_from_scores, Architecture,
    Batch, BatchGrads, DatasetKind, FairModel, Family, LearningRates,
};
use crate::nncore::NetSpec;
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::time::Instant;

const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const SAMPLE_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub family: Family,
    /// Fairness trade-off; the interpolation knob for Reweighing-NN.
    pub alpha: f64,
    pub lr_theta: f64,
    pub lr_phi: f64,
    pub lr_psi: f64,
    pub lr_mu: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub theta: Option<NetSpec>,
    pub phi: NetSpec,
    pub psi: Option<NetSpec>,
    pub mu: Option<NetSpec>,
    /// Train a baseline net for the score-function families.
    pub baseline: bool,
    pub lambda_l2: f64,
    /// Adversary-only steps per predictor step.
    pub adversary_steps: usize,
    /// Monte Carlo samples per instance and step.
    pub samples: usize,
    /// Minimum change that counts as an early-stopping improvement.
    pub min_delta: f64,
}

pub const DEFAULT_BATCH_SIZE: usize = 128;
pub const DEFAULT_MAX_EPOCHS: usize = 1000;
pub const DEFAULT_MIN_DELTA: f64 = 1e-4;

impl TrainConfig {
    /// Architecture-table defaults for one dataset and family.
    pub fn new(dataset: DatasetKind, family: Family, alpha: f64, seed: u64) -> Self {
        let arch = default_architecture(dataset, family);
        Self::from_architecture(&arch, family, alpha, seed)
    }

    pub fn from_architecture(arch: &Architecture, family: Family, alpha: f64, seed: u64) -> Self {
        let lr = arch.learning_rate;
        Self {
            family,
            alpha,
            lr_theta: lr,
            lr_phi: lr,
            lr_psi: lr,
            lr_mu: lr,
            batch_size: DEFAULT_BATCH_SIZE,
            max_epochs: DEFAULT_MAX_EPOCHS.max(arch.patience),
            patience: arch.patience,
            seed,
            theta: arch.theta.clone(),
            phi: arch.phi.clone(),
            psi: arch.psi.clone(),
            mu: arch.mu.clone(),
            baseline: arch.mu.is_some(),
            lambda_l2: 0.0,
            adversary_steps: 1,
            samples: 1,
            min_delta: DEFAULT_MIN_DELTA,
        }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            theta: self.theta.clone(),
            phi: self.phi.clone(),
            psi: self.psi.clone(),
            mu: self.mu.clone(),
            patience: self.patience,
            learning_rate: self.lr_phi,
        }
    }

    pub fn rates(&self) -> LearningRates {
        LearningRates {
            theta: self.lr_theta,
            phi: self.lr_phi,
            psi: self.lr_psi,
            mu: self.lr_mu,
        }
    }

    /// Rates of zero freeze a network; negative or non-finite rates are
    /// rejected.
    pub fn validate(&self) -> Result<()> {
        for (name, lr) in [
            ("lr_theta", self.lr_theta),
            ("lr_phi", self.lr_phi),
            ("lr_psi", self.lr_psi),
            ("lr_mu", self.lr_mu),
        ] {
            if !(lr >= 0.0) || !lr.is_finite() {
                return Err(Error::Config(format!("{name} must be a finite non-negative number, got {lr}")));
            }
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 || self.samples == 0 {
            return Err(Error::Config(
                "batch_size, max_epochs, patience and samples must be positive".into(),
            ));
        }
        if self.adversary_steps == 0 {
            return Err(Error::Config("adversary_steps must be at least 1".into()));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Config(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if !(self.lambda_l2 >= 0.0) || !self.min_delta.is_finite() || self.min_delta < 0.0 {
            return Err(Error::Config("lambda_l2 and min_delta must be non-negative".into()));
        }
        if self.baseline && !self.family.is_score_function() {
            return Err(Error::Config(format!("{} has no score-function gradient to baseline", self.family)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Predictor log-loss, minimized.
    pub val_predictor: f64,
    /// Adversary log-likelihood, maximized; absent without an adversary.
    pub val_adversary: Option<f64>,
    pub mean_weight: f64,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub stop_reason: StopReason,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
    /// Seconds per epoch; kept out of [`TrainLog::to_csv`] so the CSV is
    /// reproducible.
    #[serde(skip)]
    pub wall_seconds: Vec<f64>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_predictor,val_adversary,mean_weight,skipped\n");
        for e in &self.epochs {
            let adv = e.val_adversary.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                e.epoch, e.train_loss, e.val_predictor, adv, e.mean_weight, e.skipped
            );
        }
        let _ = writeln!(out, "# stop_reason={:?} best_epoch={}", self.stop_reason, self.best_epoch);
        out
    }

    pub fn timing_csv(&self) -> String {
        let mut out = String::from("epoch,wall_seconds\n");
        for (e, t) in self.epochs.iter().zip(&self.wall_seconds) {
            let _ = writeln!(out, "{},{t:.6}", e.epoch);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best validation-predictor epoch.
    pub model: FairModel,
    /// Parameters when training stopped.
    pub final_model: FairModel,
    pub log: TrainLog,
}

/// Validation objectives `(predictor, adversary)` of a model in eval mode:
/// the predictor's log-loss, normalized by total weight under the learned
/// (FAIR) or fixed (Reweighing-NN) weights, and the adversary's mean
/// log-likelihood of `s`.
pub fn validation_objectives(model: &FairModel, data: &TabularDataset, weights: Option<&[f64]>) -> Result<(f64, Option<f64>)> {
    let scores = model.scores(&data.features)?;
    let n = data.len() as f64;
    let ps = scores.s.as_deref().unwrap_or(&scores.y);
    let (lpy, lps) = log_likelihoods_from_scores(&scores.y, ps, &data.y, &data.s);
    let weighted = |w: &[f64]| {
        let total: f64 = w.iter().sum();
        w.iter().zip(&lpy).map(|(w, l)| -w * l).sum::<f64>() / total.max(f64::MIN_POSITIVE)
    };
    let pred = match (model.family, weights, &scores.weight) {
        (Family::ReweighingNn, Some(w), _) => weighted(w),
        (Family::ReweighingNn, None, _) => return Err(Error::Config("Reweighing-NN needs validation weights".into())),
        (_, _, Some(w)) => weighted(w),
        _ => -lpy.iter().sum::<f64>() / n,
    };
    let adv = scores.s.is_some().then(|| lps.iter().sum::<f64>() / n);
    Ok((pred, adv))
}

/// Batch index lists for one epoch. A trailing batch of one row is merged
/// into its predecessor when batch norm needs batch statistics.
fn epoch_batches(order: &[usize], batch_size: usize, merge_singleton: bool) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(batch_size).collect();
    if merge_singleton && out.len() > 1 && out.last().map(|b| b.len()) == Some(1) {
        out.pop();
        let start = (out.len() - 1) * batch_size;
        *out.last_mut().expect("non-empty") = &order[start..];
    }
    out
}

fn gather(data: &TabularDataset, idx: &[usize]) -> (Array2<f64>, Vec<u8>, Vec<u8>) {
    (
        data.features.select(Axis(0), idx),
        idx.iter().map(|&i| data.y[i]).collect(),
        idx.iter().map(|&i| data.s[i]).collect(),
    )
}

fn uses_batch_norm(config: &TrainConfig) -> bool {
    [&config.theta, &Some(config.phi.clone()), &config.psi, &config.mu]
        .into_iter()
        .flatten()
        .any(|s| s.batch_norm || s.head_batch_norm)
}

/// Trains one model. Numeric failures abort with the epoch and batch.
pub fn train(config: &TrainConfig, splits: &SplitSet) -> Result<TrainOutcome> {
    config.validate()?;
    splits.train.check_nondegenerate()?;
    let mut init = RngStream::derive(config.seed, INIT_STREAM);
    let mut shuffle = RngStream::derive(config.seed, SHUFFLE_STREAM);
    let mut sampler = RngStream::derive(config.seed, SAMPLE_STREAM);
    let mut model = FairModel::new(
        config.family,
        config.alpha,
        &config.architecture(),
        splits.train.width(),
        config.baseline,
        &mut init,
    )?;
    model.lambda_l2 = config.lambda_l2;
    model.samples = config.samples;
    let (train_w, val_w) = if config.family == Family::ReweighingNn {
        (
            Some(interpolated_kamiran_weights(&splits.train.y, &splits.train.s, config.alpha)?),
            Some(interpolated_kamiran_weights(&splits.val.y, &splits.val.s, config.alpha)?),
        )
    } else {
        (None, None)
    };
    let rates = config.rates();
    let adversary_only = LearningRates {
        theta: 0.0,
        phi: 0.0,
        mu: 0.0,
        ..rates
    };
    let merge = uses_batch_norm(config);
    let mut order: Vec<usize> = (0..splits.train.len()).collect();

    let mut epochs = Vec::new();
    let mut wall = Vec::new();
    let mut best_pred = f64::INFINITY;
    let mut best_adv = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut best_model = model.clone();
    let mut stale = 0;
    let mut stop_reason = StopReason::MaxIterations;

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        shuffle.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut weight_sum = 0.0;
        let mut skipped = 0;
        for (b, idx) in epoch_batches(&order, config.batch_size, merge).into_iter().enumerate() {
            let (x, y, s) = gather(&splits.train, idx);
            let w: Option<Vec<f64>> = train_w.as_ref().map(|w| idx.iter().map(|&i| w[i]).collect());
            let batch = Batch::new(&x, &y, &s)?;
            let locate = |e: Error| match e {
                Error::Numeric { location, message } => Error::Numeric {
                    location: format!("epoch {epoch}, batch {b}: {location}"),
                    message,
                },
                other => other,
            };
            for _ in 1..config.adversary_steps {
                if model.psi.is_some() {
                    let g = batch_grads(&model, &batch, w.as_deref(), &mut sampler).map_err(locate)?;
                    model.apply(&g, &adversary_only).map_err(locate)?;
                }
            }
            let g: BatchGrads = batch_grads(&model, &batch, w.as_deref(), &mut sampler).map_err(locate)?;
            model.apply(&g, &rates).map_err(locate)?;
            loss_sum += g.objective * idx.len() as f64;
            weight_sum += g.mean_weight * idx.len() as f64;
            skipped += g.skipped;
        }
        let n = splits.train.len() as f64;
        let (val_pred, val_adv) = validation_objectives(&model, &splits.val, val_w.as_deref())?;
        if !val_pred.is_finite() || val_adv.is_some_and(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("epoch {epoch}, validation"), "non-finite objective"));
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            val_predictor: val_pred,
            val_adversary: val_adv,
            mean_weight: weight_sum / n,
            skipped,
        });
        let mut improved = false;
        if val_pred < best_pred - config.min_delta {
            best_pred = val_pred;
            best_epoch = epoch;
            best_model = model.clone();
            improved = true;
        }
        if let Some(adv) = val_adv {
            if adv > best_adv + config.min_delta {
                best_adv = adv;
                improved = true;
            }
        }
        wall.push(started.elapsed().as_secs_f64());
        stale = if improved { 0 } else { stale + 1 };
        if stale >= config.patience {
            stop_reason = StopReason::Patience;
            break;
        }
    }
    log::debug!(
        "{} alpha={} seed={}: {} epochs, best {best_epoch}, {stop_reason:?}",
        config.family,
        config.alpha,
        config.seed,
        epochs.len()
    );
    Ok(TrainOutcome {
        model: best_model,
        final_model: model,
        log: TrainLog {
            epochs,
            stop_reason,
            best_epoch,
            wall_seconds: wall,
        },
    })
}

/// Reweighing-NN: a plain classifier on fixed group/label weights.
pub fn train_baselines(config: &TrainConfig, splits: &SplitSet) -> Result<TrainOutcome> {
    if config.family != Family::ReweighingNn {
        return Err(Error::Config(format!("train_baselines expects Reweighing-NN, got {}", config.family)));
    }
    train(config, splits)
}
