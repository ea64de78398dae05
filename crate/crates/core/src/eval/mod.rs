//! AUC, group fairness metrics, evaluation reports and Pareto fronts.
//!
//! Rates compare the unprivileged group `s = 0` with the privileged group
//! `s = 1`; the metrics are absolute differences so the order only matters
//! for readability.

use crate::data::TabularDataset;
use crate::error::{Error, Result};
use crate::fairmodels::{FairModel, Family};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Mann–Whitney estimate of `P(score⁺ > score⁻)` with ties credited ½.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Config("scores and labels differ in length".into()));
    }
    if scores.iter().any(|v| v.is_nan()) {
        return Err(Error::Domain("AUC scores contain NaN".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum of midranks of the positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += midrank * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Positive-prediction, true-positive and false-positive rates of one group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupRates {
    pub positive_rate: Option<f64>,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn group_rates(pred: &[u8], y: &[u8], s: &[u8], group: u8) -> GroupRates {
    let (mut n, mut pos_pred, mut p, mut tp, mut neg, mut fp) = (0, 0, 0, 0, 0, 0);
    for i in 0..pred.len() {
        if s[i] != group {
            continue;
        }
        n += 1;
        pos_pred += usize::from(pred[i]);
        if y[i] == 1 {
            p += 1;
            tp += usize::from(pred[i]);
        } else {
            neg += 1;
            fp += usize::from(pred[i]);
        }
    }
    GroupRates {
        positive_rate: ratio(pos_pred, n),
        tpr: ratio(tp, p),
        fpr: ratio(fp, neg),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FairnessMetrics {
    pub asd: f64,
    pub aeod: f64,
    pub aod: f64,
}

fn difference(a: Option<f64>, b: Option<f64>, rate: &str) -> Result<f64> {
    match (a, b) {
        (Some(a), Some(b)) => Ok((a - b).abs()),
        (None, _) => Err(Error::UndefinedMetric(format!("{rate} of group s=0 has an empty denominator"))),
        (_, None) => Err(Error::UndefinedMetric(format!("{rate} of group s=1 has an empty denominator"))),
    }
}

fn check_binary(pred: &[u8], y: &[u8], s: &[u8]) -> Result<()> {
    if pred.len() != y.len() || y.len() != s.len() {
        return Err(Error::Config("predictions, labels and groups differ in length".into()));
    }
    if pred.iter().chain(y).chain(s).any(|&v| v > 1) {
        return Err(Error::Domain("predictions, labels and groups must be 0 or 1".into()));
    }
    Ok(())
}

pub fn asd(pred: &[u8], y: &[u8], s: &[u8]) -> Result<f64> {
    check_binary(pred, y, s)?;
    let (g0, g1) = (group_rates(pred, y, s, 0), group_rates(pred, y, s, 1));
    difference(g0.positive_rate, g1.positive_rate, "positive rate")
}

pub fn aeod(pred: &[u8], y: &[u8], s: &[u8]) -> Result<f64> {
    check_binary(pred, y, s)?;
    let (g0, g1) = (group_rates(pred, y, s, 0), group_rates(pred, y, s, 1));
    difference(g0.tpr, g1.tpr, "TPR")
}

pub fn aod(pred: &[u8], y: &[u8], s: &[u8]) -> Result<f64> {
    check_binary(pred, y, s)?;
    let (g0, g1) = (group_rates(pred, y, s, 0), group_rates(pred, y, s, 1));
    Ok(0.5 * (difference(g0.fpr, g1.fpr, "FPR")? + difference(g0.tpr, g1.tpr, "TPR")?))
}

pub fn fairness_metrics(pred: &[u8], y: &[u8], s: &[u8]) -> Result<FairnessMetrics> {
    Ok(FairnessMetrics {
        asd: asd(pred, y, s)?,
        aeod: aeod(pred, y, s)?,
        aod: aod(pred, y, s)?,
    })
}

pub fn threshold(scores: &[f64], t: f64) -> Vec<u8> {
    scores.iter().map(|&p| u8::from(p >= t)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Validation,
    Test,
}

/// Metrics of one model on one split. Undefined metrics are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub split: SplitTag,
    pub threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auc_y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auc_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aeod: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aod: Option<f64>,
}

fn defined(r: Result<f64>, what: &str) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric(msg)) => {
            log::warn!("{what} undefined: {msg}");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

impl FairnessReport {
    pub fn from_scores(
        py: &[f64],
        ps: Option<&[f64]>,
        y: &[u8],
        s: &[u8],
        split: SplitTag,
        threshold_at: f64,
    ) -> Result<Self> {
        let pred = threshold(py, threshold_at);
        Ok(Self {
            split,
            threshold: threshold_at,
            auc_y: defined(auc(py, y), "AUC_y")?,
            auc_s: match ps {
                Some(ps) => defined(auc(ps, s), "AUC_s")?,
                None => None,
            },
            asd: defined(asd(&pred, y, s), "ASD")?,
            aeod: defined(aeod(&pred, y, s), "AEOD")?,
            aod: defined(aod(&pred, y, s), "AOD")?,
        })
    }

    pub fn metric(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::Asd => self.asd,
            Metric::Aeod => self.aeod,
            Metric::Aod => self.aod,
        }
    }
}

/// AUC_y and AUC_s from the model's scores, fairness metrics from its
/// thresholded predictor.
pub fn evaluate(model: &FairModel, data: &TabularDataset, split: SplitTag, threshold_at: f64) -> Result<FairnessReport> {
    let scores = model.scores(&data.features)?;
    FairnessReport::from_scores(&scores.y, scores.s.as_deref(), &data.y, &data.s, split, threshold_at)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Aod,
    Asd,
    Aeod,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Aod, Metric::Asd, Metric::Aeod];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Aod => "aod",
            Metric::Asd => "asd",
            Metric::Aeod => "aeod",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown metric '{s}'")))
    }
}

/// One trained model as a candidate for the front.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub family: Family,
    pub alpha: f64,
    pub seed: u64,
    /// Hash of the run that produced the point.
    pub run: String,
    pub validation: FairnessReport,
    pub test: FairnessReport,
}

impl ParetoPoint {
    /// `(auc_y, metric)` on the validation split.
    fn selection_key(&self, m: Metric) -> Option<(f64, f64)> {
        Some((self.validation.auc_y?, self.validation.metric(m)?))
    }
}

/// Points not dominated on validation AUC_y (higher is better) and the
/// chosen metric (lower is better). Points with equal coordinates collapse to
/// the one with the lowest seed; points lacking either value are skipped.
pub fn pareto_front(points: &[ParetoPoint], m: Metric) -> Vec<ParetoPoint> {
    let mut keyed: Vec<(f64, f64, &ParetoPoint)> = points
        .iter()
        .filter_map(|p| p.selection_key(m).map(|(a, v)| (a, v, p)))
        .collect();
    let skipped = points.len() - keyed.len();
    if skipped > 0 {
        log::warn!("{skipped} points lack validation auc_y or {m}; left out of the front");
    }
    keyed.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(a.1.total_cmp(&b.1))
            .then(a.2.seed.cmp(&b.2.seed))
            .then_with(|| a.2.run.cmp(&b.2.run))
    });
    let mut front = Vec::new();
    let mut best_metric = f64::INFINITY;
    let mut i = 0;
    while i < keyed.len() {
        // first of each equal-AUC group has the group's lowest metric
        let (auc_i, metric_i, p) = keyed[i];
        if metric_i < best_metric {
            front.push(p.clone());
            best_metric = metric_i;
        }
        while i < keyed.len() && keyed[i].0.total_cmp(&auc_i) == Ordering::Equal {
            i += 1;
        }
    }
    front
}

pub fn report_json(report: &FairnessReport) -> String {
    serde_json::to_string_pretty(report).expect("reports serialize")
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

pub const FRONT_CSV_HEADER: &str =
    "model,alpha,seed,run,auc,aod,asd,aeod,auc_s,val_auc,val_aod,val_asd,val_aeod,val_auc_s";

/// Front listing: test numbers first, validation numbers after.
pub fn front_csv(points: &[ParetoPoint]) -> String {
    let mut out = String::from(FRONT_CSV_HEADER);
    out.push('\n');
    for p in points {
        let (t, v) = (&p.test, &p.validation);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            p.family.name(),
            p.alpha,
            p.seed,
            p.run,
            cell(t.auc_y),
            cell(t.aod),
            cell(t.asd),
            cell(t.aeod),
            cell(t.auc_s),
            cell(v.auc_y),
            cell(v.aod),
            cell(v.asd),
            cell(v.aeod),
            cell(v.auc_s),
        );
    }
    out
}

#[cfg(test)]
mod tests;
