//! Diagnostic suite behind `fair check`: gradient exactness, estimator
//! agreement with closed forms, baseline variance and the weight behaviour
//! of FAIR-scalar across α.

use super::Inputs;
use crate::dist::RngStream;
use crate::error::Result;
use crate::fairmodels::toy::{self, Estimate};
use crate::fairmodels::{default_architecture, nominal_input_width, DatasetKind, FairModel, Family};
use crate::nncore::{grad_check, GradCheckOptions};
use crate::par::{self, ExecMode};
use crate::train::{train, TrainConfig};
use ndarray::Array2;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientSummary {
    pub networks: usize,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
    /// `dataset/family/network` of the worst case.
    pub worst: String,
}

/// Datasets of the published architecture table.
pub const TABLE_DATASETS: [DatasetKind; 5] = [
    DatasetKind::Adult,
    DatasetKind::Readmission,
    DatasetKind::Meps,
    DatasetKind::GermanSex,
    DatasetKind::GermanAge,
];

/// Central-difference check of every network of every table architecture,
/// `instances` random initializations each, on `rows` random inputs and a
/// random linear loss averaged over the output entries. At most `coords`
/// coordinates per tensor are probed.
pub fn gradient_exactness(instances: usize, rows: usize, coords: usize, seed: u64) -> Result<GradientSummary> {
    let mut jobs = Vec::new();
    for dataset in TABLE_DATASETS {
        for family in Family::ALL {
            for i in 0..instances {
                jobs.push((dataset, family, i));
            }
        }
    }
    let results = par::map(ExecMode::Parallel, &jobs, |&(dataset, family, i)| -> Result<Vec<(String, crate::nncore::GradCheckReport)>> {
        let arch = default_architecture(dataset, family);
        let tag = (dataset as u64) << 32 | (family as u64) << 16 | i as u64;
        let mut rng = RngStream::derive(seed, tag);
        let model = FairModel::new(family, 1.0, &arch, nominal_input_width(dataset), arch.mu.is_some(), &mut rng)?;
        let mut out = Vec::new();
        for (name, net) in model.networks() {
            let x = Array2::from_shape_fn((rows, net.input_width()), |_| rng.standard_normal());
            // mean-scaled like the training losses, so |loss| stays O(1)
            let scale = (rows * net.output_width()) as f64;
            let r = Array2::from_shape_fn((rows, net.output_width()), |_| rng.standard_normal() / scale);
            let loss = |o: &Array2<f64>| ((o * &r).sum(), r.clone());
            let opts = GradCheckOptions {
                max_coords_per_tensor: Some(coords),
                seed: tag ^ seed,
                ..GradCheckOptions::default()
            };
            out.push((format!("{dataset}/{family}/{name}"), grad_check(net, &x, loss, opts)?));
        }
        Ok(out)
    });
    let mut summary = GradientSummary {
        networks: 0,
        checked: 0,
        skipped_kinks: 0,
        max_rel_error: 0.0,
        worst: String::new(),
    };
    for r in results {
        for (name, report) in r? {
            summary.networks += 1;
            summary.checked += report.checked;
            summary.skipped_kinks += report.skipped_kinks;
            if report.max_rel_error >= summary.max_rel_error {
                summary.max_rel_error = report.max_rel_error;
                summary.worst = name;
            }
        }
    }
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorCheck {
    pub name: String,
    pub mean: f64,
    pub std_error: f64,
    pub target: f64,
    pub z: f64,
}

/// The three weight-gradient estimators on their toy objectives.
pub fn estimator_checks(draws: usize, seed: u64) -> Result<Vec<EstimatorCheck>> {
    let (p, a, c) = (0.3, 2.0, 2.0);
    let mut rng = RngStream::derive(seed, 0xe5);
    let cases: [(&str, Estimate, f64); 3] = [
        ("Bernoulli-SF", toy::bernoulli_sf(p, c, 0.0, draws, &mut rng)?, toy::bernoulli_derivative(c)),
        ("Beta-SF", toy::beta_sf(a, c, 0.0, draws, &mut rng)?, toy::beta_derivative(a, c)),
        ("Beta-REP", toy::beta_rep(a, c, draws, &mut rng)?, toy::beta_derivative(a, c)),
    ];
    Ok(cases
        .into_iter()
        .map(|(name, e, target)| EstimatorCheck {
            name: name.into(),
            mean: e.mean,
            std_error: e.std_error(),
            target,
            z: e.z_score(target),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceCheck {
    pub name: String,
    pub plain_variance: f64,
    pub baseline_variance: f64,
    /// `1 − baseline/plain`.
    pub reduction: f64,
    /// Mean difference in combined standard errors.
    pub shift_z: f64,
}

/// Score-function variance with and without the exact bracket-mean
/// baseline, on Bernoulli(0.4) and Beta(5, 1) toys with `c = 3`.
pub fn baseline_variance(draws: usize, seed: u64) -> Result<Vec<VarianceCheck>> {
    let c = 3.0;
    let mut rng = RngStream::derive(seed, 0xba5e);
    let (p, a) = (0.4, 5.0);
    let pairs = [
        (
            "Bernoulli(0.4)",
            toy::bernoulli_sf(p, c, 0.0, draws, &mut rng)?,
            toy::bernoulli_sf(p, c, toy::bernoulli_reward_mean(p, c), draws, &mut rng)?,
        ),
        (
            "Beta(5,1)",
            toy::beta_sf(a, c, 0.0, draws, &mut rng)?,
            toy::beta_sf(a, c, toy::beta_reward_mean(a, c), draws, &mut rng)?,
        ),
    ];
    Ok(pairs
        .into_iter()
        .map(|(name, plain, base)| VarianceCheck {
            name: name.into(),
            plain_variance: plain.variance(),
            baseline_variance: base.variance(),
            reduction: 1.0 - base.variance() / plain.variance(),
            shift_z: (base.mean - plain.mean).abs() / (plain.std_error().powi(2) + base.std_error().powi(2)).sqrt(),
        })
        .collect())
}

/// Mean training weight of FAIR-scalar final models over an α grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightLimitReport {
    pub grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    /// `[alpha][seed]` mean final training weight.
    pub mean_weights: Vec<Vec<f64>>,
    /// `[alpha][seed]` share of weights in `[0, 0.1] ∪ [0.9, 1]`.
    pub endpoint_share: Vec<Vec<f64>>,
}

impl WeightLimitReport {
    fn row(&self, alpha: f64) -> Option<usize> {
        self.grid.iter().position(|&a| a == alpha)
    }

    pub fn median_weight(&self, alpha: f64) -> Option<f64> {
        self.row(alpha).and_then(|i| super::median(self.mean_weights[i].iter().map(|&v| Some(v))))
    }

    /// Largest mean weight over seeds at `alpha`.
    pub fn max_weight(&self, alpha: f64) -> Option<f64> {
        self.row(alpha).map(|i| self.mean_weights[i].iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }

    pub fn min_weight(&self, alpha: f64) -> Option<f64> {
        self.row(alpha).map(|i| self.mean_weights[i].iter().copied().fold(f64::INFINITY, f64::min))
    }

    pub fn min_endpoint_share(&self, alpha: f64) -> Option<f64> {
        self.row(alpha).map(|i| self.endpoint_share[i].iter().copied().fold(f64::INFINITY, f64::min))
    }

    /// Seed medians along the grid, in grid order.
    pub fn median_curve(&self) -> Vec<f64> {
        self.grid.iter().filter_map(|&a| self.median_weight(a)).collect()
    }
}

/// Trains FAIR-scalar for a fixed `epochs` budget (no early stop) at every
/// grid value and seed, and records the final models' training weights.
pub fn weight_limit_suite(inputs: &Inputs, grid: &[f64], seeds: &[u64], epochs: usize, jobs: usize) -> Result<WeightLimitReport> {
    let jobs_list: Vec<(f64, u64)> = grid.iter().flat_map(|&a| seeds.iter().map(move |&s| (a, s))).collect();
    let splits = &inputs.prepared.splits;
    let results = par::with_jobs(jobs, || {
        par::map(ExecMode::from_jobs(jobs), &jobs_list, |&(alpha, seed)| -> Result<(f64, f64)> {
            let mut c = TrainConfig::new(inputs.kind, Family::FairScalar, alpha, seed);
            c.max_epochs = epochs;
            c.patience = epochs;
            let out = train(&c, splits)?;
            let w = out.final_model.scores(&splits.train.features)?.weight.expect("FAIR weights");
            let n = w.len() as f64;
            let ends = w.iter().filter(|&&v| v <= 0.1 || v >= 0.9).count() as f64;
            Ok((w.iter().sum::<f64>() / n, ends / n))
        })
    });
    let mut mean_weights = vec![Vec::new(); grid.len()];
    let mut endpoint_share = vec![Vec::new(); grid.len()];
    for (k, r) in results.into_iter().enumerate() {
        let (w, e) = r?;
        mean_weights[k / seeds.len()].push(w);
        endpoint_share[k / seeds.len()].push(e);
    }
    Ok(WeightLimitReport {
        grid: grid.to_vec(),
        seeds: seeds.to_vec(),
        epochs,
        mean_weights,
        endpoint_share,
    })
}

/// Pass/fail lines for a weight-limit report: α=0 below 0.05, the largest α
/// above 0.95, a non-decreasing median curve and ≥90% endpoint weights at
/// α=1.
pub fn weight_limit_results(r: &WeightLimitReport) -> Vec<CheckResult> {
    let mut out = Vec::new();
    if let Some(w) = r.max_weight(0.0) {
        out.push(CheckResult {
            name: "alpha=0 weights vanish".into(),
            passed: w < 0.05,
            detail: format!("largest per-seed mean weight {w:.4} (< 0.05)"),
        });
    }
    if let Some(&top) = r.grid.iter().max_by(|a, b| a.total_cmp(b)) {
        if top > 0.0 {
            let w = r.min_weight(top).expect("grid value");
            out.push(CheckResult {
                name: format!("alpha={top} weights saturate"),
                passed: w > 0.95,
                detail: format!("smallest per-seed mean weight {w:.4} (> 0.95)"),
            });
        }
    }
    let curve = r.median_curve();
    let breaks: Vec<String> = curve
        .windows(2)
        .zip(r.grid.windows(2))
        .filter(|(w, _)| w[1] < w[0])
        .map(|(w, a)| format!("{}→{}: {:.4}→{:.4}", a[0], a[1], w[0], w[1]))
        .collect();
    out.push(CheckResult {
        name: "median weight non-decreasing in alpha".into(),
        passed: breaks.is_empty(),
        detail: if breaks.is_empty() {
            format!("curve {}", curve.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(" "))
        } else {
            format!("decreases at {}", breaks.join(", "))
        },
    });
    if let Some(e) = r.min_endpoint_share(1.0) {
        out.push(CheckResult {
            name: "alpha=1 weights at the endpoints".into(),
            passed: e >= 0.9,
            detail: format!("smallest per-seed share in [0,0.1]∪[0.9,1] {e:.3} (≥ 0.9)"),
        });
    }
    out
}

#[derive(Debug, Clone)]
pub struct CheckOptions {
    pub seed: u64,
    /// Toy-estimator draws.
    pub draws: usize,
    /// Random initializations per architecture.
    pub instances: usize,
    pub coords: usize,
    /// Dataset for the FAIR-scalar weight suite; skipped when absent.
    pub weight_limits: Option<WeightLimitOptions>,
    pub jobs: usize,
}

#[derive(Debug, Clone)]
pub struct WeightLimitOptions {
    pub inputs: Inputs,
    pub seeds: Vec<u64>,
    pub epochs: usize,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            draws: 100_000,
            instances: 20,
            coords: 4,
            weight_limits: None,
            jobs: 1,
        }
    }
}

pub fn run_checks(opts: &CheckOptions) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let g = gradient_exactness(opts.instances, 4, opts.coords, opts.seed)?;
    out.push(CheckResult {
        name: "gradient exactness".into(),
        passed: g.max_rel_error < 1e-5,
        detail: format!(
            "{} networks, {} coordinates, max relative error {:.2e} at {} (< 1e-5)",
            g.networks, g.checked, g.max_rel_error, g.worst
        ),
    });
    for e in estimator_checks(opts.draws, opts.seed)? {
        out.push(CheckResult {
            name: format!("{} estimator", e.name),
            passed: e.z < 3.0,
            detail: format!("{:.4} ± {:.4} vs {:.4}, {:.2} SE (< 3)", e.mean, e.std_error, e.target, e.z),
        });
    }
    for v in baseline_variance(opts.draws, opts.seed)? {
        out.push(CheckResult {
            name: format!("{} baseline", v.name),
            passed: v.reduction >= 0.3 && v.shift_z < 3.0,
            detail: format!(
                "variance {:.4} → {:.4} ({:.0}% lower, ≥ 30%), mean shift {:.2} SE (< 3)",
                v.plain_variance,
                v.baseline_variance,
                100.0 * v.reduction,
                v.shift_z
            ),
        });
    }
    if let Some(t) = &opts.weight_limits {
        let grid = Family::FairScalar.default_grid();
        let report = weight_limit_suite(&t.inputs, &grid, &t.seeds, t.epochs, opts.jobs)?;
        out.extend(weight_limit_results(&report));
    }
    Ok(out)
}
