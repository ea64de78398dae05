//! Generators for the bundled fixtures.
//!
//! `german_credit_csv` writes a synthetic stand-in for the UCI German credit
//! table (AIF360 column layout, exact category marginals, labels from a
//! logistic model with a sex/age effect). `biased_csv` writes a small
//! numeric problem whose labels depend on the sensitive attribute in one
//! segment of the rows, optionally with planted rows whose label is a pure
//! function of `s`.

use super::{ColumnSchema, Schema, SensitiveEncoding};
use crate::dist::RngStream;
use crate::nncore::sigmoid;
use rand_distr::{Distribution, Gamma};

/// Seed of the bundled `fixtures/german_credit.csv`.
pub const GERMAN_FIXTURE_SEED: u64 = 20_190_611;
pub const GERMAN_ROWS: usize = 1000;
pub const GERMAN_GOOD: usize = 700;

type Levels = &'static [(&'static str, usize)];

const STATUS: Levels = &[("A11", 274), ("A12", 269), ("A13", 63), ("A14", 394)];
const CREDIT_HISTORY: Levels = &[("A30", 40), ("A31", 49), ("A32", 530), ("A33", 88), ("A34", 293)];
const PURPOSE: Levels = &[
    ("A40", 234),
    ("A41", 103),
    ("A410", 12),
    ("A42", 181),
    ("A43", 280),
    ("A44", 12),
    ("A45", 22),
    ("A46", 50),
    ("A48", 9),
    ("A49", 97),
];
const SAVINGS: Levels = &[("A61", 603), ("A62", 103), ("A63", 63), ("A64", 48), ("A65", 183)];
const EMPLOYMENT: Levels = &[("A71", 62), ("A72", 172), ("A73", 339), ("A74", 174), ("A75", 253)];
const OTHER_DEBTORS: Levels = &[("A101", 907), ("A102", 41), ("A103", 52)];
const PROPERTY: Levels = &[("A121", 282), ("A122", 232), ("A123", 332), ("A124", 154)];
const INSTALLMENT_PLANS: Levels = &[("A141", 139), ("A142", 47), ("A143", 814)];
const HOUSING: Levels = &[("A151", 179), ("A152", 713), ("A153", 108)];
const SKILL_LEVEL: Levels = &[("A171", 22), ("A172", 200), ("A173", 630), ("A174", 148)];
const TELEPHONE: Levels = &[("A191", 596), ("A192", 404)];
const FOREIGN_WORKER: Levels = &[("A201", 963), ("A202", 37)];
const SEX: Levels = &[("0", 310), ("1", 690)];
const INVESTMENT: Levels = &[("1", 136), ("2", 231), ("3", 157), ("4", 476)];
const RESIDENCE: Levels = &[("1", 130), ("2", 308), ("3", 149), ("4", 413)];
const CREDITS: Levels = &[("1", 633), ("2", 333), ("3", 28), ("4", 6)];
const LIABLE: Levels = &[("1", 845), ("2", 155)];
const MONTHS: &[(f64, f64)] = &[
    (6.0, 75.0),
    (9.0, 49.0),
    (12.0, 179.0),
    (15.0, 64.0),
    (18.0, 113.0),
    (21.0, 30.0),
    (24.0, 184.0),
    (30.0, 40.0),
    (36.0, 83.0),
    (42.0, 11.0),
    (48.0, 48.0),
    (60.0, 13.0),
    (72.0, 1.0),
];

const CATEGORICAL: [(&str, Levels); 12] = [
    ("status", STATUS),
    ("credit_history", CREDIT_HISTORY),
    ("purpose", PURPOSE),
    ("savings", SAVINGS),
    ("employment", EMPLOYMENT),
    ("other_debtors", OTHER_DEBTORS),
    ("property", PROPERTY),
    ("installment_plans", INSTALLMENT_PLANS),
    ("housing", HOUSING),
    ("skill_level", SKILL_LEVEL),
    ("telephone", TELEPHONE),
    ("foreign_worker", FOREIGN_WORKER),
];

/// Column order of the German CSV.
pub const GERMAN_COLUMNS: [&str; 21] = [
    "status",
    "month",
    "credit_history",
    "purpose",
    "credit_amount",
    "savings",
    "employment",
    "investment_as_income_percentage",
    "sex",
    "other_debtors",
    "residence_since",
    "property",
    "age",
    "installment_plans",
    "housing",
    "number_of_credits",
    "skill_level",
    "people_liable_for",
    "telephone",
    "foreign_worker",
    "credit",
];

fn levels(l: Levels) -> Vec<&'static str> {
    l.iter().map(|(c, _)| *c).collect()
}

fn german_columns(sensitive: ColumnSchema, other: ColumnSchema) -> Vec<ColumnSchema> {
    let mut cols = Vec::new();
    for name in GERMAN_COLUMNS {
        let col = if let Some((_, l)) = CATEGORICAL.iter().find(|(n, _)| *n == name) {
            ColumnSchema::categorical(name, &levels(l))
        } else if name == sensitive.name {
            sensitive.clone()
        } else if name == other.name {
            other.clone()
        } else if name == "credit" {
            ColumnSchema {
                categories: vec!["1".into(), "2".into()],
                ..ColumnSchema::label("credit", "1")
            }
        } else {
            ColumnSchema::numeric(name)
        };
        cols.push(col);
    }
    cols
}

/// German credit with `sex` (1 = male) as the sensitive attribute.
pub fn german_sex_schema() -> Schema {
    let sex = ColumnSchema {
        categories: vec!["0".into(), "1".into()],
        ..ColumnSchema::sensitive("sex", "1", SensitiveEncoding::Indicator)
    };
    Schema {
        name: "german-sex".into(),
        columns: german_columns(sex, ColumnSchema::numeric("age")),
        expected_width: Some(58),
    }
}

/// German credit with age >= 25 as the privileged group.
pub fn german_age_schema() -> Schema {
    let age = ColumnSchema {
        privileged_min: Some(25.0),
        encode: Some(SensitiveEncoding::Numeric),
        ..ColumnSchema::bare("age", super::ColumnKind::Sensitive)
    };
    Schema {
        name: "german-age".into(),
        columns: german_columns(age, ColumnSchema::numeric("sex")),
        expected_width: Some(58),
    }
}

/// UCI Adult with `sex` as the sensitive attribute, full one-hot coding.
pub fn adult_schema() -> Schema {
    let cat = ColumnSchema::categorical;
    let columns = vec![
        ColumnSchema::numeric("age"),
        cat(
            "workclass",
            &["Private", "Self-emp-not-inc", "Self-emp-inc", "Federal-gov", "Local-gov", "State-gov", "Without-pay"],
        ),
        ColumnSchema::numeric("fnlwgt"),
        cat(
            "education",
            &[
                "Bachelors",
                "Some-college",
                "11th",
                "HS-grad",
                "Prof-school",
                "Assoc-acdm",
                "Assoc-voc",
                "9th",
                "7th-8th",
                "12th",
                "Masters",
                "1st-4th",
                "10th",
                "Doctorate",
                "5th-6th",
                "Preschool",
            ],
        ),
        ColumnSchema::numeric("education-num"),
        cat(
            "marital-status",
            &[
                "Married-civ-spouse",
                "Divorced",
                "Never-married",
                "Separated",
                "Widowed",
                "Married-spouse-absent",
                "Married-AF-spouse",
            ],
        ),
        cat(
            "occupation",
            &[
                "Tech-support",
                "Craft-repair",
                "Other-service",
                "Sales",
                "Exec-managerial",
                "Prof-specialty",
                "Handlers-cleaners",
                "Machine-op-inspct",
                "Adm-clerical",
                "Farming-fishing",
                "Transport-moving",
                "Priv-house-serv",
                "Protective-serv",
                "Armed-Forces",
            ],
        ),
        cat("relationship", &["Wife", "Own-child", "Husband", "Not-in-family", "Other-relative", "Unmarried"]),
        cat("race", &["White", "Asian-Pac-Islander", "Amer-Indian-Eskimo", "Other", "Black"]),
        ColumnSchema {
            categories: vec!["Female".into(), "Male".into()],
            ..ColumnSchema::sensitive("sex", "Male", SensitiveEncoding::Indicator)
        },
        ColumnSchema::numeric("capital-gain"),
        ColumnSchema::numeric("capital-loss"),
        ColumnSchema::numeric("hours-per-week"),
        cat(
            "native-country",
            &[
                "United-States",
                "Cambodia",
                "England",
                "Puerto-Rico",
                "Canada",
                "Germany",
                "Outlying-US(Guam-USVI-etc)",
                "India",
                "Japan",
                "Greece",
                "South",
                "China",
                "Cuba",
                "Iran",
                "Honduras",
                "Philippines",
                "Italy",
                "Poland",
                "Jamaica",
                "Vietnam",
                "Mexico",
                "Portugal",
                "Ireland",
                "France",
                "Dominican-Republic",
                "Laos",
                "Ecuador",
                "Taiwan",
                "Haiti",
                "Columbia",
                "Hungary",
                "Guatemala",
                "Nicaragua",
                "Scotland",
                "Thailand",
                "Yugoslavia",
                "El-Salvador",
                "Trinadad&Tobago",
                "Peru",
                "Hong",
                "Holand-Netherlands",
            ],
        ),
        ColumnSchema {
            categories: vec!["<=50K".into(), ">50K".into()],
            ..ColumnSchema::label("income", ">50K")
        },
    ];
    Schema {
        name: "adult-sex".into(),
        columns,
        expected_width: Some(93),
    }
}

/// A column holding each level exactly `count` times, in random order.
fn exact_column(levels: Levels, rng: &mut RngStream) -> Vec<&'static str> {
    let mut out: Vec<&str> = levels
        .iter()
        .flat_map(|&(v, k)| std::iter::repeat_n(v, k))
        .collect();
    rng.shuffle(&mut out);
    out
}

fn weighted_choice(table: &[(f64, f64)], rng: &mut RngStream) -> f64 {
    let total: f64 = table.iter().map(|(_, w)| w).sum();
    let mut u = rng.uniform() * total;
    for &(v, w) in table {
        if u < w {
            return v;
        }
        u -= w;
    }
    table.last().expect("non-empty").0
}

fn effect(value: &str, table: &[(&str, f64)]) -> f64 {
    table.iter().find(|(v, _)| *v == value).map_or(0.0, |(_, e)| *e)
}

/// Deterministic synthetic German credit table as CSV text.
pub fn german_credit_csv(seed: u64) -> String {
    let mut rng = RngStream::derive(seed, 0x6e72);
    let n = GERMAN_ROWS;
    let cats: Vec<Vec<&str>> = CATEGORICAL.iter().map(|(_, l)| exact_column(l, &mut rng)).collect();
    let sex = exact_column(SEX, &mut rng);
    let discrete: Vec<Vec<&str>> = [INVESTMENT, RESIDENCE, CREDITS, LIABLE]
        .iter()
        .map(|l| exact_column(l, &mut rng))
        .collect();
    let cat = |name: &str, i: usize| -> &str {
        let k = CATEGORICAL.iter().position(|(n, _)| *n == name).expect("known column");
        cats[k][i]
    };

    let mut month = Vec::with_capacity(n);
    let mut amount = Vec::with_capacity(n);
    let mut age = Vec::with_capacity(n);
    for &sx in sex.iter() {
        let m = weighted_choice(MONTHS, &mut rng);
        let a = (6.35 + 0.045 * m + 0.55 * rng.standard_normal()).exp().round().clamp(250.0, 18_424.0);
        let shape = if sx == "1" { 2.6 } else { 2.0 };
        let g = Gamma::new(shape, 6.5).expect("valid gamma");
        let years: f64 = g.sample(rng.inner());
        month.push(m);
        amount.push(a);
        age.push((19.0 + years).round().min(75.0));
    }

    let mut latent = Vec::with_capacity(n);
    for i in 0..n {
        let mut z = 0.0;
        z += effect(cat("status", i), &[("A11", -0.9), ("A12", -0.55), ("A13", 0.1), ("A14", 1.0)]);
        z += effect(
            cat("credit_history", i),
            &[("A30", -1.0), ("A31", -0.9), ("A32", 0.0), ("A33", 0.1), ("A34", 0.6)],
        );
        z += effect(
            cat("savings", i),
            &[("A61", -0.3), ("A62", -0.1), ("A63", 0.2), ("A64", 0.6), ("A65", 0.35)],
        );
        z += effect(cat("employment", i), &[("A71", -0.3), ("A72", -0.3), ("A74", 0.3), ("A75", 0.15)]);
        z += effect(cat("purpose", i), &[("A40", -0.35), ("A41", 0.6), ("A43", 0.2), ("A46", -0.3), ("A48", 0.5)]);
        z += effect(cat("other_debtors", i), &[("A102", -0.3), ("A103", 0.5)]);
        z += effect(cat("property", i), &[("A121", 0.2), ("A124", -0.4)]);
        z += effect(cat("installment_plans", i), &[("A141", -0.3), ("A143", 0.2)]);
        z += effect(cat("housing", i), &[("A151", -0.2), ("A152", 0.2)]);
        z += effect(cat("foreign_worker", i), &[("A202", 0.8)]);
        z += -0.028 * (month[i] - 20.0);
        z += -0.000_05 * (amount[i] - 3000.0);
        z += -0.15 * (discrete[0][i].parse::<f64>().expect("digit") - 3.0);
        z += 0.012 * (age[i] - 35.0);
        if age[i] < 25.0 {
            z -= 0.35;
        }
        if sex[i] == "1" {
            z += 0.3;
        }
        // logistic noise
        let u = rng.uniform().clamp(1e-12, 1.0 - 1e-12);
        z += 0.9 * (u / (1.0 - u)).ln();
        latent.push((z, i));
    }
    latent.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut good = vec![false; n];
    for &(_, i) in latent.iter().take(GERMAN_GOOD) {
        good[i] = true;
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(GERMAN_COLUMNS).expect("in-memory write");
    for i in 0..n {
        let mut rec: Vec<String> = Vec::with_capacity(GERMAN_COLUMNS.len());
        for name in GERMAN_COLUMNS {
            let v = match name {
                "month" => format!("{}", month[i]),
                "credit_amount" => format!("{}", amount[i]),
                "age" => format!("{}", age[i]),
                "sex" => sex[i].to_string(),
                "investment_as_income_percentage" => discrete[0][i].to_string(),
                "residence_since" => discrete[1][i].to_string(),
                "number_of_credits" => discrete[2][i].to_string(),
                "people_liable_for" => discrete[3][i].to_string(),
                "credit" => if good[i] { "1" } else { "2" }.to_string(),
                other => cat(other, i).to_string(),
            };
            rec.push(v);
        }
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("ascii")
}

/// Shape of the injected-bias fixture.
///
/// Rows fall into two segments, flagged by the `segment` feature. In the
/// biased segment `proxy` reveals `s` and labels are shifted by `s`; in the
/// other segment `proxy` is noise and labels depend on `x1..x3` only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasedConfig {
    pub rows: usize,
    /// Logit shift `bias · (2s − 1)` added to labels in the biased segment.
    pub bias: f64,
    /// How strongly `proxy` reveals `s` in the biased segment.
    pub proxy_strength: f64,
    /// Probability that a row lands in the biased segment.
    pub biased_share: f64,
    /// Fair-segment rows whose label equals `s` while `x1..x3` point the
    /// opposite way; they are written first.
    pub planted: usize,
    pub seed: u64,
}

impl Default for BiasedConfig {
    fn default() -> Self {
        Self {
            rows: 2000,
            bias: 3.0,
            proxy_strength: 3.0,
            biased_share: 0.5,
            planted: 10,
            seed: 7,
        }
    }
}

pub const BIASED_FEATURES: [&str; 5] = ["x1", "x2", "x3", "proxy", "segment"];
const BIASED_WEIGHTS: [f64; 3] = [1.4, -1.0, 0.6];

/// Schema of [`biased_csv`]. The sensitive column itself is not a feature;
/// `proxy` carries a noisy copy of it in the biased segment.
pub fn biased_schema() -> Schema {
    let mut columns: Vec<ColumnSchema> = BIASED_FEATURES.iter().map(|n| ColumnSchema::numeric(n)).collect();
    columns.push(ColumnSchema {
        categories: vec!["0".into(), "1".into()],
        ..ColumnSchema::sensitive("s", "1", SensitiveEncoding::None)
    });
    columns.push(ColumnSchema {
        categories: vec!["0".into(), "1".into()],
        ..ColumnSchema::label("y", "1")
    });
    Schema {
        name: "synthetic-biased".into(),
        columns,
        expected_width: Some(BIASED_FEATURES.len()),
    }
}

pub fn biased_csv(cfg: &BiasedConfig) -> String {
    let mut rng = RngStream::derive(cfg.seed, 0xb1a5);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = BIASED_FEATURES.to_vec();
    header.extend(["s", "y"]);
    w.write_record(&header).expect("in-memory write");
    for i in 0..cfg.rows {
        let s = u8::from(rng.uniform() < 0.5);
        let sign = 2.0 * f64::from(s) - 1.0;
        let planted = i < cfg.planted;
        let segment = !planted && rng.uniform() < cfg.biased_share;
        let mut x = [rng.standard_normal(), rng.standard_normal(), rng.standard_normal()];
        let noise = rng.standard_normal();
        let proxy = if segment { cfg.proxy_strength * sign + noise } else { noise };
        let y = if planted {
            // features argue for 1 − s, the label follows s
            let target = -sign;
            for (xj, wj) in x.iter_mut().zip(BIASED_WEIGHTS) {
                *xj = target * wj.signum() * (1.0 + xj.abs());
            }
            s
        } else {
            let shift = if segment { cfg.bias * sign } else { 0.0 };
            let logit: f64 = x.iter().zip(BIASED_WEIGHTS).map(|(a, b)| a * b).sum::<f64>() + shift;
            u8::from(rng.uniform() < sigmoid(logit))
        };
        let rec = [
            format!("{:.6}", x[0]),
            format!("{:.6}", x[1]),
            format!("{:.6}", x[2]),
            format!("{proxy:.6}"),
            u8::from(segment).to_string(),
            s.to_string(),
            y.to_string(),
        ];
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("ascii")
}

/// Writes every bundled fixture file into `dir`.
pub fn write_fixtures(dir: &std::path::Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("german_credit.csv"), german_credit_csv(GERMAN_FIXTURE_SEED))?;
    std::fs::write(dir.join("synthetic_biased.csv"), biased_csv(&BiasedConfig::default()))?;
    for (file, schema) in [
        ("german_sex.schema.json", german_sex_schema()),
        ("german_age.schema.json", german_age_schema()),
        ("adult.schema.json", adult_schema()),
        ("synthetic_biased.schema.json", biased_schema()),
    ] {
        std::fs::write(dir.join(file), schema.to_json() + "\n")?;
    }
    Ok(())
}
