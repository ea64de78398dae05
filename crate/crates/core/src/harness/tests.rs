use super::plot::{alpha_curve_svg, front_svg, Frame};
use super::weights::{export_weights, weight_report};
use super::*;
use crate::data::fixture_path;
use crate::data::synth::{biased_csv, biased_schema, BiasedConfig};
use std::path::Path;

fn small_inputs(dir: &Path, rows: usize) -> SweepSpec {
    let csv = dir.join("data.csv");
    let schema = dir.join("schema.json");
    fs::write(&csv, biased_csv(&BiasedConfig { rows, ..BiasedConfig::default() })).unwrap();
    fs::write(&schema, biased_schema().to_json()).unwrap();
    let mut spec = SweepSpec::new(csv, schema, dir.join("out"));
    spec.families = vec![Family::FairScalar, Family::Fad];
    spec.grids.insert(Family::FairScalar, vec![0.0, 1.0]);
    spec.grids.insert(Family::Fad, vec![1.0]);
    spec.seeds = vec![0, 1];
    spec.overrides.max_epochs = Some(3);
    spec.overrides.patience = Some(3);
    spec
}

#[test]
fn default_sweep_has_one_run_per_grid_value_and_seed() {
    let spec = SweepSpec::new(fixture_path("german_credit.csv"), fixture_path("german_sex.schema.json"), "unused");
    let inputs = load_inputs(&spec.dataset, &spec.schema, None, 0).unwrap();
    assert_eq!(inputs.kind, DatasetKind::GermanSex);
    let plans = plan(&spec, &inputs).unwrap();
    assert_eq!(plans.len(), (6 * 8 + 5) * 5);
    let fair: Vec<&RunPlan> = plans.iter().filter(|p| p.config.family == Family::FairScalar).collect();
    assert_eq!(fair.len(), 8 * 5);
    let mut hashes: Vec<&str> = plans.iter().map(|p| p.hash.as_str()).collect();
    hashes.sort_unstable();
    hashes.dedup();
    assert_eq!(hashes.len(), plans.len());
}

#[test]
fn run_hash_tracks_config_and_data_only() {
    let spec = SweepSpec::new(fixture_path("german_credit.csv"), fixture_path("german_sex.schema.json"), "unused");
    let inputs = load_inputs(&spec.dataset, &spec.schema, None, 0).unwrap();
    let c = TrainConfig::new(inputs.kind, Family::FairScalar, 1.0, 0);
    let h = run_hash(&c, &inputs.info, 0.5);
    assert_eq!(h, run_hash(&c.clone(), &inputs.info, 0.5));
    assert_ne!(h, run_hash(&TrainConfig { seed: 1, ..c.clone() }, &inputs.info, 0.5));
    assert_ne!(h, run_hash(&c, &inputs.info, 0.4));
    let mut other = inputs.info.clone();
    other.content_hash.push('0');
    assert_ne!(h, run_hash(&c, &other, 0.5));
    other = inputs.info.clone();
    other.source = "moved.csv".into();
    assert_eq!(h, run_hash(&c, &other, 0.5));
}

#[test]
fn overrides_reject_unknown_keys_and_apply() {
    let o: TrainOverrides = serde_json::from_str(r#"{"lr": 0.01, "lr_psi": 0.5, "patience": 7}"#).unwrap();
    let mut c = TrainConfig::new(DatasetKind::GermanSex, Family::FairBernoulli, 1.0, 0);
    o.apply(&mut c);
    assert_eq!((c.lr_theta, c.lr_phi, c.lr_psi, c.lr_mu), (0.01, 0.01, 0.5, 0.01));
    assert_eq!(c.patience, 7);
    assert!(serde_json::from_str::<TrainOverrides>(r#"{"learning_rate": 0.01}"#).is_err());
    let mut c = TrainConfig::new(DatasetKind::GermanSex, Family::Fad, 1.0, 0);
    TrainOverrides { baseline: Some(true), ..Default::default() }.apply(&mut c);
    assert!(!c.baseline);
}

#[test]
fn spec_validation() {
    let mut spec = SweepSpec::new("a", "b", "c");
    spec.validate().unwrap();
    spec.grids.insert(Family::ReweighingNn, vec![2.0]);
    assert!(spec.validate().is_err());
    spec.grids.insert(Family::ReweighingNn, vec![]);
    assert!(spec.validate().is_err());
    spec.grids.clear();
    spec.seeds.clear();
    assert!(spec.validate().is_err());
}

#[test]
fn sweep_resumes_and_writes_fronts() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = small_inputs(tmp.path(), 300);
    let first = sweep(&spec).unwrap();
    assert_eq!((first.planned, first.trained, first.cached), (6, 6, 0));
    assert!(first.failures.is_empty());
    let runs_csv = fs::read_to_string(spec.out.join("runs.csv")).unwrap();
    assert_eq!(runs_csv.lines().count(), 7);
    for m in Metric::ALL {
        for name in ["overall", "fair-scalar", "fad"] {
            let path = spec.out.join("fronts").join(format!("{}_{name}.csv", m.name()));
            let text = fs::read_to_string(&path).unwrap();
            // every front row names a run present in runs.csv
            for row in text.lines().skip(1) {
                let hash = row.split(',').nth(3).unwrap();
                assert!(runs_csv.contains(hash));
            }
        }
    }
    let snapshot = fs::read_to_string(spec.out.join("fronts/asd_overall.csv")).unwrap();
    let again = sweep(&spec).unwrap();
    assert_eq!((again.trained, again.cached), (0, 6));
    assert_eq!(fs::read_to_string(spec.out.join("fronts/asd_overall.csv")).unwrap(), snapshot);

    let runs = stored_runs(&spec.out).unwrap();
    assert_eq!(runs.len(), 6);
    let m = &runs[0].manifest;
    assert_eq!(m.config.family, Family::FairScalar);
    assert_eq!(m.dataset.rows, 300);
    assert!(!m.git_describe.is_empty());
    assert!(runs[0].dir.join("weights.csv").is_file());
    assert!(!runs.iter().find(|r| r.manifest.config.family == Family::Fad).unwrap().dir.join("weights.csv").exists());
    let model = runs[0].model().unwrap();
    assert_eq!(model.family, Family::FairScalar);
}

#[test]
fn failed_runs_are_isolated() {
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = small_inputs(tmp.path(), 200);
    spec.families = vec![Family::FairScalar, Family::ReweighingNn];
    spec.grids.insert(Family::FairScalar, vec![1.0]);
    spec.grids.insert(Family::ReweighingNn, vec![1.0]);
    spec.seeds = vec![0];
    // only the weighting net diverges
    spec.overrides.lr_theta = Some(f64::MAX);
    let summary = sweep(&spec).unwrap();
    assert_eq!(summary.failures.len(), 1, "{summary:?}");
    assert!(summary.failures[0].run.contains("FAIR-scalar"));
    assert_eq!(summary.trained, 1);
    assert_eq!(stored_runs(&spec.out).unwrap().len(), 1);
    let text = fs::read_to_string(spec.out.join("summary.json")).unwrap();
    assert!(text.contains("numeric error"));
}

#[test]
fn weight_export_reports_thresholds() {
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = small_inputs(tmp.path(), 300);
    spec.families = vec![Family::FairScalar];
    spec.seeds = vec![0];
    sweep(&spec).unwrap();
    let (report, path) = export_weights(&spec.out, Family::FairScalar, 0, 5).unwrap();
    assert!(path.is_file());
    assert_eq!(report.alphas.len(), 2);
    assert_eq!(report.alphas[0].alpha, 0.0);
    assert_eq!(report.columns, vec!["x1", "x2", "x3", "proxy", "segment", "s", "y"]);
    assert!(report.records.windows(2).all(|w| w[0].alpha < w[1].alpha || w[0].weight >= w[1].weight));
    assert!(matches!(
        export_weights(&spec.out, Family::Fad, 0, 5),
        Err(Error::Unsupported(_))
    ));
    assert!(export_weights(&spec.out, Family::FairScalar, 9, 5).is_err());
}

#[test]
fn weight_report_without_heavy_instances_says_so() {
    let inputs = load_inputs(&fixture_path("german_credit.csv"), &fixture_path("german_sex.schema.json"), None, 0).unwrap();
    let arch = crate::fairmodels::default_architecture(DatasetKind::GermanSex, Family::FairScalar);
    let mut rng = crate::dist::RngStream::new(0);
    let mut model = FairModel::new(Family::FairScalar, 0.0, &arch, inputs.prepared.splits.width(), false, &mut rng).unwrap();
    // push the weight head far negative: every weight ≈ 0
    let theta = model.theta.as_mut().unwrap();
    let mut p = theta.parameters();
    let last = p.layers.last_mut().unwrap();
    last.weight.fill(0.0);
    for b in [last.bias.as_mut(), last.beta.as_mut()].into_iter().flatten() {
        b.fill(-20.0);
    }
    theta.set_parameters(&p).unwrap();
    let r = weight_report(&[("r0".into(), model.clone())], &inputs.prepared, 0, 5).unwrap();
    assert!(r.first_fair.is_none());
    assert!(r.notes[0].contains("no instance exceeds 0.99"));
    assert_eq!(r.suspects.len(), inputs.prepared.splits.train.len());
    assert_eq!(r.suspects[0].raw.len(), r.columns.len());

    let fad = FairModel::new(Family::Fad, 0.0, &crate::fairmodels::default_architecture(DatasetKind::GermanSex, Family::Fad), inputs.prepared.splits.width(), false, &mut rng).unwrap();
    assert!(matches!(
        weight_report(&[("r1".into(), fad)], &inputs.prepared, 0, 5),
        Err(Error::Unsupported(_))
    ));
}

const FRONT: &str = "model,alpha,seed,run,auc,aod,asd,aeod,auc_s,val_auc,val_aod,val_asd,val_aeod,val_auc_s\n";

#[test]
fn empty_front_plot_has_caption() {
    let svg = front_svg(FRONT, Metric::Asd, "t").unwrap();
    assert!(svg.starts_with("<svg"));
    assert!(svg.contains("no points"));
    assert!(svg.trim_end().ends_with("</svg>"));
}

#[test]
fn single_point_lands_on_its_coordinates() {
    let csv = format!("{FRONT}FAIR-scalar,1,0,abc,0.780000,0.1,0.120000,0.2,0.6,,,,,\n");
    let svg = front_svg(&csv, Metric::Asd, "t").unwrap();
    let (x, y) = Frame::fit([(0.12, 0.78)]).px(0.12, 0.78);
    assert!(svg.contains(&format!(r#"<circle cx="{x:.2}" cy="{y:.2}""#)), "{svg}");
    assert!(!svg.contains("no points"));
    assert_eq!(svg, front_svg(&csv, Metric::Asd, "t").unwrap());
}

#[test]
fn plot_input_errors() {
    assert!(matches!(front_svg("model,alpha\nX,1\n", Metric::Aod, "t"), Err(Error::Format(_))));
    let bad = format!("{FRONT}FAIR-scalar,1,0,abc,high,0.1,0.1,0.2,0.6,,,,,\n");
    assert!(matches!(front_svg(&bad, Metric::Asd, "t"), Err(Error::Format(_))));
}

#[test]
fn alpha_curve_places_zero_left_of_smallest_alpha() {
    let csv = format!(
        "{MEDIANS_CSV_HEADER}\nFAIR-scalar,0,5,0.01,0.55,0.50,,,,,\nFAIR-scalar,0.01,5,0.2,0.70,0.60,,,,,\nFAIR-scalar,100,5,1,0.80,0.70,,,,,\n"
    );
    let svg = alpha_curve_svg(&csv, "FAIR-scalar").unwrap();
    assert!(svg.contains(">α=0<") && svg.contains(">-2<") && svg.contains(">2<"));
    assert_eq!(svg.matches("<polyline").count(), 2);
    assert_eq!(plot::alpha_position(0.0, 0.01), -3.0);
    assert!(alpha_curve_svg(&csv, "FAD").unwrap().contains("no points"));
}

#[test]
fn medians_over_seeds() {
    assert_eq!(median([Some(3.0), None, Some(1.0), Some(2.0)]), Some(2.0));
    assert_eq!(median([Some(1.0), Some(2.0)]), Some(1.5));
    assert_eq!(median([None]), None);
}
