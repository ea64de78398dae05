//! One-parameter toy objectives with closed-form derivatives, used to
//! validate the weight-gradient estimators in isolation.
//!
//! Bernoulli: `d/dp E_{w∼B(p)}[w·c] = c`.
//! Beta: `d/da E_{w∼Beta(a,1)}[w·c] = c / (a+1)²`.

use crate::dist::{BernoulliParam, BetaParam, RngStream};
use crate::error::Result;

/// Running mean and variance of i.i.d. draws (Welford).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Estimate {
    pub samples: usize,
    pub mean: f64,
    m2: f64,
}

impl Estimate {
    pub fn push(&mut self, x: f64) {
        self.samples += 1;
        let d = x - self.mean;
        self.mean += d / self.samples as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn variance(&self) -> f64 {
        if self.samples < 2 {
            0.0
        } else {
            self.m2 / (self.samples - 1) as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        (self.variance() / self.samples.max(1) as f64).sqrt()
    }

    /// `|mean − target|` in standard errors.
    pub fn z_score(&self, target: f64) -> f64 {
        let se = self.std_error();
        if se == 0.0 {
            if self.mean == target {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.mean - target).abs() / se
        }
    }
}

impl FromIterator<f64> for Estimate {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut e = Estimate::default();
        iter.into_iter().for_each(|x| e.push(x));
        e
    }
}

pub fn bernoulli_derivative(c: f64) -> f64 {
    c
}

pub fn beta_derivative(a: f64, c: f64) -> f64 {
    c / ((a + 1.0) * (a + 1.0))
}

/// Bracket mean `E[w·c]` under `B(p)`, the ideal baseline.
pub fn bernoulli_reward_mean(p: f64, c: f64) -> f64 {
    p * c
}

pub fn beta_reward_mean(a: f64, c: f64) -> f64 {
    c * a / (a + 1.0)
}

/// Score-function draws `(w·c − b) · d/dp ln P(w)`.
pub fn bernoulli_sf(p: f64, c: f64, baseline: f64, draws: usize, rng: &mut RngStream) -> Result<Estimate> {
    let param = BernoulliParam::new(p)?;
    Ok((0..draws)
        .map(|_| {
            let w = param.sample(rng);
            let (_, score) = param.log_prob(w);
            (f64::from(w) * c - baseline) * score
        })
        .collect())
}

/// Score-function draws `(w·c − b) · ∂/∂a ln p(w; a, 1)`.
pub fn beta_sf(a: f64, c: f64, baseline: f64, draws: usize, rng: &mut RngStream) -> Result<Estimate> {
    let param = BetaParam::new(a, 1.0)?;
    let mut est = Estimate::default();
    for _ in 0..draws {
        let s = param.sample(rng);
        let (da, _) = param.score_grads(s.w)?;
        est.push((s.w * c - baseline) * da);
    }
    Ok(est)
}

/// Pathwise draws `c · dw/da`; saturated draws are skipped.
pub fn beta_rep(a: f64, c: f64, draws: usize, rng: &mut RngStream) -> Result<Estimate> {
    let param = BetaParam::new(a, 1.0)?;
    let mut est = Estimate::default();
    for _ in 0..draws {
        let s = param.sample(rng);
        match param.reparam_grads(&s) {
            Ok((dwa, _)) => est.push(c * dwa),
            Err(crate::Error::Numeric { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(est)
}
