//! Instance-weight export: which rows a FAIR model trusts, and when.

use super::{load_inputs, stored_runs, Inputs};
use crate::data::Prepared;
use crate::error::{Error, Result};
use crate::fairmodels::{instance_weights, DatasetKind, FairModel, Family, InstanceWeightRecord};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

pub const FAIR_ABOVE: f64 = 0.99;
pub const SUSPECT_BELOW: f64 = 0.01;

/// Inputs of a sweep, saved next to its runs so exports can reload them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputsRecord {
    pub dataset: PathBuf,
    pub schema: PathBuf,
    pub kind: DatasetKind,
    pub split_seed: u64,
}

pub const INPUTS_FILE: &str = "inputs.json";

impl InputsRecord {
    pub fn load(out: &Path) -> Result<Self> {
        let path = out.join(INPUTS_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn inputs(&self) -> Result<Inputs> {
        load_inputs(&self.dataset, &self.schema, Some(self.kind), self.split_seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSummary {
    pub alpha: f64,
    pub run: String,
    pub mean_weight: f64,
    pub above: usize,
    pub below: usize,
}

/// A weight record with its source row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowRecord {
    #[serde(flatten)]
    pub record: InstanceWeightRecord,
    /// Raw values in `WeightReport::columns` order.
    pub raw: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstFair {
    pub alpha: f64,
    pub instances: Vec<RowRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightReport {
    pub family: Family,
    pub seed: u64,
    pub columns: Vec<String>,
    pub alphas: Vec<AlphaSummary>,
    /// Smallest α at which some training instance exceeds [`FAIR_ABOVE`].
    pub first_fair: Option<FirstFair>,
    /// Instances below [`SUSPECT_BELOW`] at the largest α.
    pub suspects: Vec<RowRecord>,
    pub notes: Vec<String>,
    /// Every record, grouped by ascending α, heaviest first.
    #[serde(skip)]
    pub records: Vec<InstanceWeightRecord>,
}

impl WeightReport {
    pub fn records_csv(&self) -> String {
        let mut out = String::from("alpha,index,weight,log_p_y,log_p_s,ratio\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{},{},{},{},{}", r.alpha, r.index, r.weight, r.log_p_y, r.log_p_s, r.ratio);
        }
        out
    }
}

fn with_raw(prepared: &Prepared, records: Vec<InstanceWeightRecord>) -> Vec<RowRecord> {
    records
        .into_iter()
        .map(|record| RowRecord {
            raw: prepared.raw.rows[record.index].clone(),
            record,
        })
        .collect()
}

/// Weight report over training-split instances of models of one family,
/// each given as `(run id, model)`. At most `top_k` instances are listed
/// for the first-fair α.
pub fn weight_report(models: &[(String, FairModel)], prepared: &Prepared, seed: u64, top_k: usize) -> Result<WeightReport> {
    let Some((_, first)) = models.first() else {
        return Err(Error::Config("no runs to export".into()));
    };
    let family = first.family;
    if !family.is_fair() {
        return Err(Error::Unsupported(format!("{family} does not learn instance weights")));
    }
    if models.iter().any(|(_, m)| m.family != family) {
        return Err(Error::Config("weight export mixes model families".into()));
    }
    let mut ordered: Vec<&(String, FairModel)> = models.iter().collect();
    ordered.sort_by(|a, b| a.1.alpha.total_cmp(&b.1.alpha));
    let t = &prepared.splits.train;
    let mut alphas = Vec::new();
    let mut records = Vec::new();
    let mut first_fair = None;
    let mut last = Vec::new();
    for (run, model) in ordered {
        let mut r = instance_weights(model, &t.features, &t.y, &t.s, &t.row_ids)?;
        r.sort_by(|a, b| b.weight.total_cmp(&a.weight).then(a.index.cmp(&b.index)));
        let above: Vec<InstanceWeightRecord> = r.iter().filter(|x| x.weight > FAIR_ABOVE).cloned().collect();
        alphas.push(AlphaSummary {
            alpha: model.alpha,
            run: run.clone(),
            mean_weight: r.iter().map(|x| x.weight).sum::<f64>() / r.len() as f64,
            above: above.len(),
            below: r.iter().filter(|x| x.weight < SUSPECT_BELOW).count(),
        });
        if first_fair.is_none() && !above.is_empty() {
            first_fair = Some(FirstFair {
                alpha: model.alpha,
                instances: with_raw(prepared, above.into_iter().take(top_k).collect()),
            });
        }
        last = r.clone();
        records.extend(r);
    }
    let suspects: Vec<InstanceWeightRecord> = last.iter().filter(|x| x.weight < SUSPECT_BELOW).cloned().collect();
    let mut notes = Vec::new();
    if first_fair.is_none() {
        notes.push(format!("no instance exceeds {FAIR_ABOVE} at any alpha"));
    }
    let largest = alphas.last().expect("non-empty");
    if suspects.is_empty() {
        notes.push(format!("no instance is below {SUSPECT_BELOW} at alpha={}", largest.alpha));
    } else {
        notes.push(format!(
            "{} instances stay below {SUSPECT_BELOW} at alpha={}; possible overfitting suspects",
            suspects.len(),
            largest.alpha
        ));
    }
    Ok(WeightReport {
        family,
        seed,
        columns: prepared.raw.columns.clone(),
        alphas,
        first_fair,
        suspects: with_raw(prepared, suspects),
        notes,
        records,
    })
}

/// Exports the report of `family` and `seed` from a sweep directory into
/// `out/weights/`. Returns the report and the JSON path.
pub fn export_weights(out: &Path, family: Family, seed: u64, top_k: usize) -> Result<(WeightReport, PathBuf)> {
    if !family.is_fair() {
        return Err(Error::Unsupported(format!("{family} does not learn instance weights")));
    }
    let inputs = InputsRecord::load(out)?.inputs()?;
    let mut models = Vec::new();
    for run in stored_runs(out)? {
        let c = &run.manifest.config;
        if c.family != family || c.seed != seed {
            continue;
        }
        if run.manifest.dataset.content_hash != inputs.info.content_hash {
            return Err(Error::Format(format!(
                "run {} was trained on different data than {}",
                run.manifest.run_hash,
                inputs.info.source
            )));
        }
        models.push((run.manifest.run_hash.clone(), run.model()?));
    }
    if models.is_empty() {
        return Err(Error::Config(format!("no completed {family} runs with seed {seed} in {}", out.display())));
    }
    let report = weight_report(&models, &inputs.prepared, seed, top_k)?;
    let dir = out.join("weights");
    fs::create_dir_all(&dir)?;
    let stem = format!("{}_s{seed}", family.slug());
    let json = dir.join(format!("{stem}.json"));
    fs::write(&json, serde_json::to_string_pretty(&report)? + "\n")?;
    fs::write(dir.join(format!("{stem}.csv")), report.records_csv())?;
    Ok((report, json))
}
