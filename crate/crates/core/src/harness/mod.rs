//! Experiment runs on disk: sweeps over families, α grids and seeds,
//! resumable by run hash, with per-family and overall fronts.
//!
//! Layout of an output directory:
//!
//! ```text
//! summary.json            sweep outcome, failures included
//! runs/<name>/            one directory per run (see write_artifact)
//! runs.csv                every run, test and validation metrics
//! medians.csv             per (family, α) medians over seeds
//! fronts/<metric>_<family|overall>.csv
//! ```

pub mod check;
pub mod plot;
pub mod weights;

use crate::data::{prepare, sha256_hex, split_sizes, Prepared, Schema};
use crate::error::{Error, Result};
use crate::eval::{evaluate, front_csv, pareto_front, FairnessReport, Metric, ParetoPoint, SplitTag, DEFAULT_THRESHOLD};
use crate::fairmodels::{instance_weights, DatasetKind, FairModel, Family};
use crate::nncore::NetSpec;
use crate::par::{self, ExecMode};
use crate::train::{train, TrainConfig, TrainLog};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const MANIFEST_VERSION: u32 = 1;

/// Training knobs that override the architecture-table defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    /// Sets all four learning rates; the per-network fields win over it.
    pub lr: Option<f64>,
    pub lr_theta: Option<f64>,
    pub lr_phi: Option<f64>,
    pub lr_psi: Option<f64>,
    pub lr_mu: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub lambda_l2: Option<f64>,
    pub adversary_steps: Option<usize>,
    pub samples: Option<usize>,
    pub baseline: Option<bool>,
    pub min_delta: Option<f64>,
    /// Network shapes; each applies only to families that have the network.
    pub theta: Option<NetSpec>,
    pub phi: Option<NetSpec>,
    pub psi: Option<NetSpec>,
    pub mu: Option<NetSpec>,
}

impl TrainOverrides {
    pub fn apply(&self, c: &mut TrainConfig) {
        if let Some(lr) = self.lr {
            c.lr_theta = lr;
            c.lr_phi = lr;
            c.lr_psi = lr;
            c.lr_mu = lr;
        }
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut c.lr_theta, self.lr_theta);
        set(&mut c.lr_phi, self.lr_phi);
        set(&mut c.lr_psi, self.lr_psi);
        set(&mut c.lr_mu, self.lr_mu);
        set(&mut c.lambda_l2, self.lambda_l2);
        set(&mut c.min_delta, self.min_delta);
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.patience {
            c.patience = v;
            c.max_epochs = c.max_epochs.max(v);
        }
        if let Some(v) = self.max_epochs {
            c.max_epochs = v;
        }
        if let Some(v) = self.adversary_steps {
            c.adversary_steps = v;
        }
        if let Some(v) = self.samples {
            c.samples = v;
        }
        if let Some(v) = self.baseline {
            c.baseline = v && c.family.is_score_function();
        }
        if let Some(n) = &self.phi {
            c.phi = n.clone();
        }
        for (dst, src) in [(&mut c.theta, &self.theta), (&mut c.psi, &self.psi), (&mut c.mu, &self.mu)] {
            if let (Some(d), Some(n)) = (dst.as_mut(), src) {
                *d = n.clone();
            }
        }
    }
}

/// What to run and where to put it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub dataset: PathBuf,
    pub schema: PathBuf,
    /// Architecture table row; guessed from the schema name when absent.
    pub kind: Option<DatasetKind>,
    pub families: Vec<Family>,
    /// Per-family grids; families not listed use their default grid.
    pub grids: BTreeMap<Family, Vec<f64>>,
    pub seeds: Vec<u64>,
    /// Seed of the train/validation/test partition, shared by all runs.
    pub split_seed: u64,
    pub threshold: f64,
    pub overrides: TrainOverrides,
    pub out: PathBuf,
    pub jobs: usize,
}

impl SweepSpec {
    pub fn new(dataset: impl Into<PathBuf>, schema: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        Self {
            dataset: dataset.into(),
            schema: schema.into(),
            kind: None,
            families: Family::ALL.to_vec(),
            grids: BTreeMap::new(),
            seeds: DEFAULT_SEEDS.to_vec(),
            split_seed: 0,
            threshold: DEFAULT_THRESHOLD,
            overrides: TrainOverrides::default(),
            out: out.into(),
            jobs: 1,
        }
    }

    pub fn grid(&self, family: Family) -> Vec<f64> {
        self.grids.get(&family).cloned().unwrap_or_else(|| family.default_grid())
    }

    pub fn validate(&self) -> Result<()> {
        if self.families.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("a sweep needs at least one family and one seed".into()));
        }
        for &f in &self.families {
            let grid = self.grid(f);
            if grid.is_empty() {
                return Err(Error::Config(format!("empty alpha grid for {f}")));
            }
            if let Some(a) = grid.iter().find(|a| !(**a >= 0.0) || !a.is_finite()) {
                return Err(Error::Config(format!("alpha {a} for {f} is not a finite non-negative number")));
            }
            if f == Family::ReweighingNn && grid.iter().any(|&a| a > 1.0) {
                return Err(Error::Config("the Reweighing-NN knob lies in [0, 1]".into()));
            }
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        Ok(())
    }
}

/// Where the data of a run came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub source: String,
    pub schema_name: String,
    pub content_hash: String,
    pub schema_hash: String,
    pub rows: usize,
    pub width: usize,
    pub split_seed: u64,
    /// `(train, validation, test)` rows.
    pub split_sizes: (usize, usize, usize),
}

impl DatasetInfo {
    pub fn new(prepared: &Prepared, schema: &Schema) -> Self {
        Self {
            source: prepared.raw.source.clone(),
            schema_name: schema.name.clone(),
            content_hash: prepared.raw.content_hash.clone(),
            schema_hash: schema.hash(),
            rows: prepared.raw.len(),
            width: prepared.splits.width(),
            split_seed: prepared.splits.seed,
            split_sizes: split_sizes(prepared.raw.len()),
        }
    }
}

/// Loaded inputs of a sweep.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub schema: Schema,
    pub prepared: Prepared,
    pub kind: DatasetKind,
    pub info: DatasetInfo,
}

pub fn load_inputs(dataset: &Path, schema: &Path, kind: Option<DatasetKind>, split_seed: u64) -> Result<Inputs> {
    let schema = Schema::load(schema)?;
    let prepared = prepare(dataset, &schema, split_seed)?;
    let kind = kind.unwrap_or_else(|| DatasetKind::from_schema_name(&schema.name));
    let info = DatasetInfo::new(&prepared, &schema);
    Ok(Inputs {
        schema,
        prepared,
        kind,
        info,
    })
}

/// One planned run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunPlan {
    pub config: TrainConfig,
    pub hash: String,
    pub threshold: f64,
}

impl RunPlan {
    pub fn new(config: TrainConfig, info: &DatasetInfo, threshold: f64) -> Self {
        let hash = run_hash(&config, info, threshold);
        Self {
            config,
            hash,
            threshold,
        }
    }

    /// Directory name under `runs/`.
    pub fn dir_name(&self) -> String {
        format!(
            "{}_a{}_s{}_{}",
            self.config.family.slug(),
            self.config.alpha,
            self.config.seed,
            &self.hash[..12]
        )
    }

    pub fn label(&self) -> String {
        format!("{} alpha={} seed={}", self.config.family, self.config.alpha, self.config.seed)
    }
}

/// Content hash of everything that determines a run's numbers.
pub fn run_hash(config: &TrainConfig, info: &DatasetInfo, threshold: f64) -> String {
    let key = serde_json::json!({
        "version": MANIFEST_VERSION,
        "config": config,
        "content_hash": info.content_hash,
        "schema_hash": info.schema_hash,
        "split_seed": info.split_seed,
        "threshold": threshold,
    });
    sha256_hex(key.to_string().as_bytes())
}

pub fn plan(spec: &SweepSpec, inputs: &Inputs) -> Result<Vec<RunPlan>> {
    spec.validate()?;
    let mut plans = Vec::new();
    for &family in &spec.families {
        for alpha in spec.grid(family) {
            for &seed in &spec.seeds {
                let mut config = TrainConfig::new(inputs.kind, family, alpha, seed);
                spec.overrides.apply(&mut config);
                config.validate()?;
                plans.push(RunPlan::new(config, &inputs.info, spec.threshold));
            }
        }
    }
    Ok(plans)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub run_hash: String,
    pub config: TrainConfig,
    pub dataset: DatasetInfo,
    pub threshold: f64,
    /// `git describe` of the source tree; not part of the hash.
    pub git_describe: String,
}

/// Everything one run produces.
#[derive(Debug, Clone)]
pub struct RunArtifact {
    pub manifest: Manifest,
    pub log: TrainLog,
    pub validation: FairnessReport,
    pub test: FairnessReport,
    pub model: FairModel,
    /// Training-split weights of FAIR models, in split order.
    pub train_weights: Option<Vec<f64>>,
}

pub fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

/// Trains and evaluates one planned run.
pub fn execute(plan: &RunPlan, inputs: &Inputs, git: &str) -> Result<RunArtifact> {
    let splits = &inputs.prepared.splits;
    let outcome = train(&plan.config, splits)?;
    let validation = evaluate(&outcome.model, &splits.val, SplitTag::Validation, plan.threshold)?;
    let test = evaluate(&outcome.model, &splits.test, SplitTag::Test, plan.threshold)?;
    let train_weights = outcome.model.scores(&splits.train.features)?.weight;
    Ok(RunArtifact {
        manifest: Manifest {
            version: MANIFEST_VERSION,
            run_hash: plan.hash.clone(),
            config: plan.config.clone(),
            dataset: inputs.info.clone(),
            threshold: plan.threshold,
            git_describe: git.to_string(),
        },
        log: outcome.log,
        validation,
        test,
        model: outcome.model,
        train_weights,
    })
}

const MANIFEST_FILE: &str = "manifest.json";

/// Writes a run directory. The manifest goes last, so a directory with a
/// manifest is complete.
pub fn write_artifact(dir: &Path, a: &RunArtifact, inputs: &Inputs) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("train_log.csv"), a.log.to_csv())?;
    fs::write(dir.join("timing.csv"), a.log.timing_csv())?;
    fs::write(dir.join("report_validation.json"), pretty(&a.validation)?)?;
    fs::write(dir.join("report_test.json"), pretty(&a.test)?)?;
    fs::write(dir.join("model.json"), serde_json::to_string(&a.model)?)?;
    if a.model.family.is_fair() {
        let t = &inputs.prepared.splits.train;
        let mut records = instance_weights(&a.model, &t.features, &t.y, &t.s, &t.row_ids)?;
        records.sort_by(|x, y| y.weight.total_cmp(&x.weight).then(x.index.cmp(&y.index)));
        let mut csv = String::from("index,weight,log_p_y,log_p_s,ratio\n");
        for r in &records {
            let _ = writeln!(csv, "{},{},{},{},{}", r.index, r.weight, r.log_p_y, r.log_p_s, r.ratio);
        }
        fs::write(dir.join("weights.csv"), csv)?;
    }
    fs::write(dir.join(MANIFEST_FILE), pretty(&a.manifest)?)?;
    Ok(())
}

fn pretty<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// A completed run read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredRun {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub validation: FairnessReport,
    pub test: FairnessReport,
    pub final_mean_weight: Option<f64>,
    pub epochs: usize,
}

impl StoredRun {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = read_json(&dir.join(MANIFEST_FILE))?;
        let log = fs::read_to_string(dir.join("train_log.csv"))?;
        let rows: Vec<&str> = log.lines().skip(1).filter(|l| !l.starts_with('#')).collect();
        let final_mean_weight = rows
            .last()
            .and_then(|l| l.split(',').nth(4))
            .and_then(|v| v.parse().ok())
            .filter(|_| manifest.config.family.is_fair());
        Ok(Self {
            dir: dir.to_path_buf(),
            validation: read_json(&dir.join("report_validation.json"))?,
            test: read_json(&dir.join("report_test.json"))?,
            manifest,
            final_mean_weight,
            epochs: rows.len(),
        })
    }

    pub fn model(&self) -> Result<FairModel> {
        read_json(&self.dir.join("model.json"))
    }

    pub fn point(&self) -> ParetoPoint {
        ParetoPoint {
            family: self.manifest.config.family,
            alpha: self.manifest.config.alpha,
            seed: self.manifest.config.seed,
            run: self.manifest.run_hash.clone(),
            validation: self.validation.clone(),
            test: self.test.clone(),
        }
    }
}

/// Completed runs under `out/runs`, sorted by family, α, seed and hash.
pub fn stored_runs(out: &Path) -> Result<Vec<StoredRun>> {
    let root = out.join("runs");
    if !root.is_dir() {
        return Ok(Vec::new());
    }
    let mut runs = Vec::new();
    for entry in fs::read_dir(&root)? {
        let dir = entry?.path();
        if dir.join(MANIFEST_FILE).is_file() {
            runs.push(StoredRun::load(&dir)?);
        }
    }
    runs.sort_by(|a, b| {
        let (x, y) = (&a.manifest.config, &b.manifest.config);
        x.family
            .cmp(&y.family)
            .then(x.alpha.total_cmp(&y.alpha))
            .then(x.seed.cmp(&y.seed))
            .then_with(|| a.manifest.run_hash.cmp(&b.manifest.run_hash))
    });
    Ok(runs)
}

fn is_complete(dir: &Path, hash: &str) -> bool {
    read_json::<Manifest>(&dir.join(MANIFEST_FILE)).is_ok_and(|m| m.run_hash == hash)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub run: String,
    pub hash: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub planned: usize,
    pub trained: usize,
    /// Runs found complete on disk and skipped.
    pub cached: usize,
    pub failures: Vec<RunFailure>,
}

/// Runs every planned run not already on disk, then rebuilds the tables
/// and fronts from all completed runs.
pub fn sweep(spec: &SweepSpec) -> Result<SweepSummary> {
    let inputs = load_inputs(&spec.dataset, &spec.schema, spec.kind, spec.split_seed)?;
    sweep_with(spec, &inputs)
}

pub fn sweep_with(spec: &SweepSpec, inputs: &Inputs) -> Result<SweepSummary> {
    let plans = plan(spec, inputs)?;
    let runs_dir = spec.out.join("runs");
    fs::create_dir_all(&runs_dir)?;
    let record = weights::InputsRecord {
        dataset: fs::canonicalize(&spec.dataset).unwrap_or_else(|_| spec.dataset.clone()),
        schema: fs::canonicalize(&spec.schema).unwrap_or_else(|_| spec.schema.clone()),
        kind: inputs.kind,
        split_seed: inputs.info.split_seed,
    };
    fs::write(spec.out.join(weights::INPUTS_FILE), pretty(&record)?)?;
    let todo: Vec<&RunPlan> = plans.iter().filter(|p| !is_complete(&runs_dir.join(p.dir_name()), &p.hash)).collect();
    let cached = plans.len() - todo.len();
    log::info!("{} runs planned, {cached} already complete", plans.len());
    let git = git_describe();
    let results = par::with_jobs(spec.jobs, || {
        par::map(ExecMode::from_jobs(spec.jobs), &todo, |p| {
            log::info!("training {}", p.label());
            let dir = runs_dir.join(p.dir_name());
            execute(p, inputs, &git).and_then(|a| write_artifact(&dir, &a, inputs))
        })
    });
    let failures: Vec<RunFailure> = todo
        .iter()
        .zip(results)
        .filter_map(|(p, r)| {
            r.err().map(|e| {
                log::error!("{} failed: {e}", p.label());
                RunFailure {
                    run: p.label(),
                    hash: p.hash.clone(),
                    error: e.to_string(),
                }
            })
        })
        .collect();
    let summary = SweepSummary {
        planned: plans.len(),
        trained: todo.len() - failures.len(),
        cached,
        failures,
    };
    fs::write(spec.out.join("summary.json"), pretty(&summary)?)?;
    assemble(&spec.out)?;
    Ok(summary)
}

/// Fronts of one metric: per family and overall.
#[derive(Debug, Clone, PartialEq)]
pub struct Fronts {
    pub metric: Metric,
    pub per_family: BTreeMap<Family, Vec<ParetoPoint>>,
    pub overall: Vec<ParetoPoint>,
}

pub fn fronts(points: &[ParetoPoint]) -> Vec<Fronts> {
    Metric::ALL
        .iter()
        .map(|&metric| {
            let mut per_family = BTreeMap::new();
            for family in Family::ALL {
                let mine: Vec<ParetoPoint> = points.iter().filter(|p| p.family == family).cloned().collect();
                if !mine.is_empty() {
                    per_family.insert(family, pareto_front(&mine, metric));
                }
            }
            Fronts {
                metric,
                per_family,
                overall: pareto_front(points, metric),
            }
        })
        .collect()
}

pub const RUNS_CSV_HEADER: &str = "model,alpha,seed,run,epochs,mean_weight,auc,aod,asd,aeod,auc_s,val_auc,val_aod,val_asd,val_aeod,val_auc_s";

fn cell(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

pub fn runs_csv(runs: &[StoredRun]) -> String {
    let mut out = format!("{RUNS_CSV_HEADER}\n");
    for r in runs {
        let c = &r.manifest.config;
        let (t, v) = (&r.test, &r.validation);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            c.family.name(),
            c.alpha,
            c.seed,
            r.manifest.run_hash,
            r.epochs,
            cell(r.final_mean_weight),
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

/// Median of the present values; `None` when there are none.
pub fn median(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let mut v: Vec<f64> = values.into_iter().flatten().collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

pub const MEDIANS_CSV_HEADER: &str = "model,alpha,runs,mean_weight,auc,auc_s,aod,asd,aeod,val_auc,val_asd";

/// Test-split medians over seeds for every (family, α).
pub fn medians_csv(runs: &[StoredRun]) -> String {
    let mut groups: BTreeMap<(Family, u64), Vec<&StoredRun>> = BTreeMap::new();
    for r in runs {
        let c = &r.manifest.config;
        groups.entry((c.family, c.alpha.to_bits())).or_default().push(r);
    }
    let mut keys: Vec<(Family, u64)> = groups.keys().copied().collect();
    keys.sort_by(|a, b| a.0.cmp(&b.0).then(f64::from_bits(a.1).total_cmp(&f64::from_bits(b.1))));
    let mut out = format!("{MEDIANS_CSV_HEADER}\n");
    for key in keys {
        let g = &groups[&key];
        let m = |f: &dyn Fn(&StoredRun) -> Option<f64>| cell(median(g.iter().map(|r| f(r))));
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            key.0.name(),
            f64::from_bits(key.1),
            g.len(),
            m(&|r| r.final_mean_weight),
            m(&|r| r.test.auc_y),
            m(&|r| r.test.auc_s),
            m(&|r| r.test.aod),
            m(&|r| r.test.asd),
            m(&|r| r.test.aeod),
            m(&|r| r.validation.auc_y),
            m(&|r| r.validation.asd),
        );
    }
    out
}

/// Rebuilds `runs.csv`, `medians.csv` and `fronts/` from the completed runs
/// in `out`. Returns the fronts.
pub fn assemble(out: &Path) -> Result<Vec<Fronts>> {
    let runs = stored_runs(out)?;
    fs::write(out.join("runs.csv"), runs_csv(&runs))?;
    fs::write(out.join("medians.csv"), medians_csv(&runs))?;
    let points: Vec<ParetoPoint> = runs.iter().map(StoredRun::point).collect();
    let all = fronts(&points);
    let dir = out.join("fronts");
    fs::create_dir_all(&dir)?;
    for f in &all {
        fs::write(dir.join(format!("{}_overall.csv", f.metric.name())), front_csv(&f.overall))?;
        for (family, front) in &f.per_family {
            fs::write(dir.join(format!("{}_{}.csv", f.metric.name(), family.slug())), front_csv(front))?;
        }
    }
    Ok(all)
}

#[cfg(test)]
mod tests;
