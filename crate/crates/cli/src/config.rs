//! Experiment config files.
//!
//! ```json
//! {
//!   "dataset": "fixtures/german_credit.csv",
//!   "schema": "fixtures/german_sex.schema.json",
//!   "families": ["fair-scalar", "fad"],
//!   "grids": {"fad": [0, 1, 10]},
//!   "seeds": [0, 1, 2],
//!   "train": {"max_epochs": 500, "phi": {"units": [32, 1]}},
//!   "out": "runs/german-sex"
//! }
//! ```
//!
//! Relative paths resolve against the config file's directory.

use crate::Common;
use anyhow::{bail, Context, Result};
use fair_core::fairmodels::{DatasetKind, Family};
use fair_core::harness::{SweepSpec, TrainOverrides};
use serde::Deserialize;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub dataset: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    /// Architecture table row, e.g. "german-sex"; guessed from the schema name otherwise.
    pub kind: Option<DatasetKind>,
    pub families: Option<Vec<Family>>,
    /// Per-family grids.
    #[serde(default)]
    pub grids: BTreeMap<Family, Vec<f64>>,
    /// Grid for every family without its own entry in `grids`.
    pub alphas: Option<Vec<f64>>,
    pub seeds: Option<Vec<u64>>,
    pub split_seed: Option<u64>,
    pub threshold: Option<f64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub train: TrainOverrides,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut config: Config =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.dataset, &mut config.schema, &mut config.out].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    /// Merges command-line flags over the file; flags win.
    pub fn into_spec(self, flags: &Common) -> Result<SweepSpec> {
        let dataset = flags.dataset.clone().or(self.dataset).context("no dataset: pass --dataset or set it in --config")?;
        let schema = flags.schema.clone().or(self.schema).context("no schema: pass --schema or set it in --config")?;
        let out = flags.out.clone().or(self.out).unwrap_or_else(|| PathBuf::from("runs"));
        let mut spec = SweepSpec::new(dataset, schema, out);
        spec.kind = self.kind;
        if !flags.family.is_empty() {
            spec.families = flags.family.clone();
        } else if let Some(f) = self.families {
            spec.families = f;
        }
        spec.grids = self.grids;
        let shared = if flags.alpha.is_empty() { self.alphas } else { Some(flags.alpha.clone()) };
        if let Some(grid) = shared {
            for &f in &spec.families {
                if !flags.alpha.is_empty() || !spec.grids.contains_key(&f) {
                    spec.grids.insert(f, grid.clone());
                }
            }
        }
        if !flags.seed.is_empty() {
            spec.seeds = flags.seed.clone();
        } else if let Some(s) = self.seeds {
            spec.seeds = s;
        }
        if let Some(s) = self.split_seed {
            spec.split_seed = s;
        }
        if let Some(t) = self.threshold {
            spec.threshold = t;
        }
        spec.jobs = flags.jobs.or(self.jobs).unwrap_or(1);
        if spec.jobs == 0 {
            bail!("--jobs must be at least 1");
        }
        spec.overrides = self.train;
        spec.validate()?;
        Ok(spec)
    }
}
