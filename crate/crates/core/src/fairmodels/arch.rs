//! Default architectures, patience and learning rates per dataset and
//! family, transcribed from the published architecture table.
//!
//! Reading of the table: every FAIR weighting net ends in a sigmoid unit (or
//! an exp pair for Beta families), predictor and adversary nets always end in
//! one sigmoid unit (rows written without a terminal `1` get one), FAD
//! encoders end in an identity layer whose width is the representation size,
//! and FAD-prob encoders list the latent size last and emit `(μ, log σ)` for
//! it.

use super::Family;
use crate::error::{Error, Result};
use crate::nncore::{Activation, NetSpec};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Adult,
    Readmission,
    Meps,
    GermanSex,
    GermanAge,
    /// The bundled injected-bias fixture; not part of the published table.
    #[serde(rename = "synthetic-biased", alias = "synthetic")]
    Synthetic,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 6] = [
        DatasetKind::Adult,
        DatasetKind::Readmission,
        DatasetKind::Meps,
        DatasetKind::GermanSex,
        DatasetKind::GermanAge,
        DatasetKind::Synthetic,
    ];

    /// Guess from a schema name; anything unrecognized gets the German-sex
    /// table, the smallest one.
    pub fn from_schema_name(name: &str) -> Self {
        name.parse().unwrap_or(DatasetKind::GermanSex)
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::Adult => "adult",
            DatasetKind::Readmission => "readmission",
            DatasetKind::Meps => "meps",
            DatasetKind::GermanSex => "german-sex",
            DatasetKind::GermanAge => "german-age",
            DatasetKind::Synthetic => "synthetic-biased",
        })
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        match key.as_str() {
            "adult" | "adult-sex" => Ok(DatasetKind::Adult),
            "readmission" => Ok(DatasetKind::Readmission),
            "meps" | "expenditures" => Ok(DatasetKind::Meps),
            "german-sex" | "german" => Ok(DatasetKind::GermanSex),
            "german-age" => Ok(DatasetKind::GermanAge),
            "synthetic" | "synthetic-biased" => Ok(DatasetKind::Synthetic),
            _ => Err(Error::Config(format!("unknown dataset '{s}'"))),
        }
    }
}

/// Networks and optimizer settings of one family on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    /// Weighting net (FAIR) or encoder (FAD); absent for Reweighing-NN.
    pub theta: Option<NetSpec>,
    pub phi: NetSpec,
    pub psi: Option<NetSpec>,
    /// Baseline net for the score-function families.
    pub mu: Option<NetSpec>,
    pub patience: usize,
    pub learning_rate: f64,
}

struct Row {
    theta: &'static str,
    phi: &'static str,
    psi: &'static str,
    patience: usize,
    lr: f64,
}

const fn row(theta: &'static str, phi: &'static str, psi: &'static str, patience: usize, lr: f64) -> Row {
    Row {
        theta,
        phi,
        psi,
        patience,
        lr,
    }
}

fn table(dataset: DatasetKind, family: Family) -> Row {
    use DatasetKind::*;
    use Family::*;
    match (dataset, family) {
        // German-sex networks, with a faster rate and longer patience
        (Synthetic, f) => {
            let r = table(GermanSex, f);
            let lr = if f == ReweighingNn { r.lr } else { 1e-3 };
            row(r.theta, r.phi, r.psi, r.patience.max(100), lr)
        }

        (Adult, ReweighingNn) => row("", "62/41/27/1", "", 10, 1e-3),
        (Adult, Fad) => row("62/41/27", "18/12/1", "18/12/1", 50, 1e-4),
        (Adult, FadProb) => row("46/23/23/23", "11/1", "11/1", 50, 1e-4),
        (Adult, FairScalar) => row("62/41/27/1", "62/41/1", "62/1", 50, 1e-4),
        (Adult, FairBetaSf) => row("62/41/27/2", "62/41/1", "62/1", 50, 1e-4),
        (Adult, FairBetaRep) => row("62/41/27/2", "62/41", "62/1", 50, 1e-5),
        (Adult, FairBernoulli) => row("62/41/1", "62/41/27/1", "62/1", 500, 1e-4),

        (Readmission, ReweighingNn) => row("", "464/232/116/1", "", 10, 1e-3),
        (Readmission, Fad) => row("464/232/116", "58/1", "58/1", 40, 1e-4),
        (Readmission, FadProb) => row("464/232/232/232", "116/58/1", "116/58/1", 40, 1e-4),
        (Readmission, FairScalar) => row("464/232/1", "464/1", "464/1", 40, 1e-4),
        (Readmission, FairBetaSf) => row("464/232/2", "464/1", "464/1", 40, 1e-5),
        (Readmission, FairBetaRep) => row("464/232/2", "464/1", "464/1", 40, 1e-5),
        (Readmission, FairBernoulli) => row("464/1", "464/232/1", "464/1", 40, 1e-4),

        (Meps, ReweighingNn) => row("", "91/60/1", "", 10, 1e-3),
        (Meps, Fad) => row("68/34/17", "8/1", "8/1", 50, 1e-4),
        (Meps, FadProb) => row("68/34/34/34", "17/1", "17/1", 50, 1e-4),
        (Meps, FairScalar) => row("68/34/1", "68/1", "68/1", 50, 1e-4),
        (Meps, FairBetaSf) => row("68/34/2", "68/1", "68/1", 50, 1e-5),
        (Meps, FairBetaRep) => row("68/34/2", "68/1", "68/1", 50, 1e-5),
        (Meps, FairBernoulli) => row("68/1", "68/34/1", "68/1", 50, 1e-4),

        (GermanSex, ReweighingNn) => row("", "37/24/1", "", 10, 1e-3),
        (GermanSex, Fad) => row("37/24/1", "16/1", "16/1", 60, 1e-4),
        (GermanSex, FadProb) => row("28/14/14/14", "7/1", "7/1", 50, 1e-5),
        (GermanSex, FairScalar) => row("37/1", "1", "1", 50, 1e-4),
        (GermanSex, FairBetaSf) => row("37/2", "1", "1", 60, 1e-5),
        (GermanSex, FairBetaRep) => row("37/2", "1", "1", 60, 1e-5),
        (GermanSex, FairBernoulli) => row("37/1", "1", "1", 60, 1e-4),

        (GermanAge, ReweighingNn) => row("", "37/24/1", "", 10, 1e-3),
        (GermanAge, Fad) => row("37/24/1", "16/1", "16/1", 50, 1e-4),
        (GermanAge, FadProb) => row("28/14/14/14", "7/1", "7/1", 50, 1e-5),
        (GermanAge, FairScalar) => row("37/1", "37/1", "1", 50, 1e-4),
        (GermanAge, FairBetaSf) => row("37/2", "37/1", "1", 50, 1e-5),
        (GermanAge, FairBetaRep) => row("37/2", "37/1", "1", 50, 1e-5),
        (GermanAge, FairBernoulli) => row("37/1", "37/1", "1", 50, 1e-4),
    }
}

fn units(text: &str) -> Vec<usize> {
    NetSpec::parse_units(text).expect("architecture table entries are well formed")
}

/// Predictor/adversary heads always end in one sigmoid unit.
fn classifier(text: &str, batch_norm: bool) -> NetSpec {
    let mut u = units(text);
    if u.last() != Some(&1) {
        u.push(1);
    }
    NetSpec::new(&u, batch_norm, Activation::Sigmoid)
}

pub fn default_architecture(dataset: DatasetKind, family: Family) -> Architecture {
    let r = table(dataset, family);
    // FAD-prob rows are "ReLU + sigmoid"; every other row uses batch norm.
    let bn = family != Family::FadProb;
    let theta = match family {
        Family::ReweighingNn => None,
        Family::FairScalar | Family::FairBernoulli => Some(NetSpec::new(&units(r.theta), bn, Activation::Sigmoid)),
        Family::FairBetaSf | Family::FairBetaRep => Some(NetSpec::new(&units(r.theta), bn, Activation::Exp)),
        Family::Fad => Some(NetSpec {
            head_batch_norm: true,
            ..NetSpec::new(&units(r.theta), bn, Activation::Identity)
        }),
        Family::FadProb => {
            let mut u = units(r.theta);
            let latent = *u.last().expect("non-empty");
            *u.last_mut().expect("non-empty") = 2 * latent;
            Some(NetSpec::new(&u, bn, Activation::Identity))
        }
    };
    let psi = (family != Family::ReweighingNn).then(|| classifier(r.psi, bn));
    let mu = family.is_score_function().then(|| baseline_spec(theta.as_ref().expect("FAIR family")));
    Architecture {
        theta,
        phi: classifier(r.phi, bn),
        psi,
        mu,
        patience: r.patience,
        learning_rate: r.lr,
    }
}

/// Baseline net: the weighting net's hidden layers with one identity output.
pub fn baseline_spec(theta: &NetSpec) -> NetSpec {
    let mut u = theta.units.clone();
    *u.last_mut().expect("non-empty") = 1;
    NetSpec {
        units: u,
        activation: theta.activation,
        batch_norm: theta.batch_norm,
        head: Activation::Identity,
        head_batch_norm: false,
    }
}

/// Input widths used when the raw dataset is not at hand.
pub fn nominal_input_width(dataset: DatasetKind) -> usize {
    match dataset {
        DatasetKind::Adult => 93,
        DatasetKind::Readmission => 931,
        DatasetKind::Meps => 138,
        DatasetKind::GermanSex | DatasetKind::GermanAge => 58,
        DatasetKind::Synthetic => 5,
    }
}
