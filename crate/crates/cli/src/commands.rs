use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use csdiv::closed_forms::{random_bound_audit, simplex_mc_relation};
use csdiv::conditional_test::{
    power_matrix, power_trial, Bandwidth, PowerStudy, Statistic, StatisticConfig, TestOutcome, ZhengTag,
};
use csdiv::sweeps::{prop1_sweep, prop2_sweep, prop34_sweep};
use csdiv::uda::{synth_domain_pair, train, Shift, SynthKind, TrainConfig, TrainMode, TrainResult};
use csdiv::{
    ccs_estimate, ckl_chain_estimate, class_cmmd_estimate, cmmd_estimate, cs_estimate, kl_knn_estimate, mmd_sq_estimate,
    DivergenceReport, Estimate, EstimatorKind, KernelSpec,
};

use crate::io::{read_data, write_json, write_rows, write_text};
use crate::manifest::{RunManifest, MANIFEST_SCHEMA_VERSION};
use crate::{CliError, EXIT_VIOLATION};

fn prepare_out(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))
}

fn finish<T: Serialize>(
    out: &Path,
    subcommand: &str,
    args: &T,
    seed: Option<u64>,
    outputs: Vec<String>,
    code: u8,
    start: Instant,
) -> Result<u8, CliError> {
    let config = serde_json::to_value(args).map_err(|e| CliError::input(e.to_string()))?;
    RunManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        subcommand: subcommand.to_string(),
        config,
        master_seed: seed,
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        outputs,
        exit_code: code,
        duration_secs: start.elapsed().as_secs_f64(),
    }
    .write(out)?;
    Ok(code)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatArg {
    Cs,
    Mmd2,
    Ccs,
    Cmmd,
    ClassCmmd,
    KlKnn,
    CklChain,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EstimateArgs {
    /// Source-domain CSV (f0… features, optional y0… labels).
    #[arg(long)]
    pub source: PathBuf,
    /// Target-domain CSV.
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long, value_enum)]
    pub stat: StatArg,
    /// Feature kernel bandwidth.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Label kernel bandwidth for conditional statistics (defaults to --sigma).
    #[arg(long)]
    pub sigma_y: Option<f64>,
    /// Neighbour count for the k-NN estimators.
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Ridge for conditional MMD.
    #[arg(long, default_value_t = 1e-3)]
    pub lambda: f64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

fn absolute(p: &Path) -> PathBuf {
    std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}

pub fn estimate(mut a: EstimateArgs) -> Result<u8, CliError> {
    let start = Instant::now();
    a.source = absolute(&a.source);
    a.target = absolute(&a.target);
    let s = read_data(&a.source)?;
    let t = read_data(&a.target)?;
    let spec = KernelSpec::new(a.sigma)?;
    let spec_y = KernelSpec::new(a.sigma_y.unwrap_or(a.sigma))?;
    let (ns, nt) = (s.features.n(), t.features.n());
    let clean = |value: f64| Estimate { value, flags: Vec::new() };
    let (kind, est) = match a.stat {
        StatArg::Cs => (EstimatorKind::Cs, cs_estimate(&s.features, &t.features, spec)?),
        StatArg::Mmd2 => (EstimatorKind::Mmd2, clean(mmd_sq_estimate(&s.features, &t.features, spec)?)),
        StatArg::KlKnn => (EstimatorKind::KlKnn, kl_knn_estimate(&s.features, &t.features, a.k)?),
        StatArg::Ccs => (EstimatorKind::Ccs, ccs_estimate(&s.labeled(&a.source)?, &t.labeled(&a.target)?, spec, spec_y)?),
        StatArg::Cmmd => (
            EstimatorKind::Cmmd,
            clean(cmmd_estimate(&s.labeled(&a.source)?, &t.labeled(&a.target)?, spec, a.lambda)?),
        ),
        StatArg::ClassCmmd => {
            (EstimatorKind::ClassCmmd, class_cmmd_estimate(&s.labeled(&a.source)?, &t.labeled(&a.target)?, spec)?)
        }
        StatArg::CklChain => {
            (EstimatorKind::CklChain, ckl_chain_estimate(&s.labeled(&a.source)?, &t.labeled(&a.target)?, a.k)?)
        }
    };
    let mut report = DivergenceReport::new(kind, est, ns, nt, a.sigma)?;
    match a.stat {
        StatArg::Ccs => report = report.with_aux("sigma_y", spec_y.bandwidth()),
        StatArg::Cmmd => report = report.with_aux("lambda", a.lambda),
        StatArg::KlKnn | StatArg::CklChain => report = report.with_aux("k", a.k as f64),
        _ => {}
    }
    prepare_out(&a.out)?;
    write_json(&a.out.join("report.json"), &report)?;
    println!("{} = {}", kind.name(), report.value);
    finish(&a.out, "estimate", &a, None, vec!["report.json".into()], 0, start)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestStat {
    Ccs,
    ClassCmmd,
    Cmmd,
    CklChain,
}

impl TestStat {
    fn statistic(self) -> Statistic {
        match self {
            TestStat::Ccs => Statistic::Ccs,
            TestStat::ClassCmmd => Statistic::ClassCmmd,
            TestStat::Cmmd => Statistic::Cmmd,
            TestStat::CklChain => Statistic::CklChain,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TestArgs {
    /// Comma-separated (row, column) variant pairs such as AB,AC.
    #[arg(long, value_delimiter = ',', default_value = "AA,AB,AC,BA,BB,BC,CA,CB,CC")]
    pub variant_pairs: Vec<String>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "ccs,class-cmmd,cmmd,ckl-chain")]
    pub stat: Vec<TestStat>,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 100)]
    pub perms: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Samples per domain.
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    /// Feature dimension.
    #[arg(long, default_value_t = 10)]
    pub d: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Feature bandwidth: a positive number or "median".
    #[arg(long, default_value = "median")]
    pub sigma_x: String,
    #[arg(long, default_value_t = 0.5)]
    pub sigma_y: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub lambda: f64,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

fn parse_pair(s: &str) -> Result<(ZhengTag, ZhengTag), CliError> {
    let tag = |c: char| ZhengTag::ALL.into_iter().find(|t| t.name().eq_ignore_ascii_case(&c.to_string()));
    let chars: Vec<char> = s.trim().chars().collect();
    match chars.as_slice() {
        [r, c] => match (tag(*r), tag(*c)) {
            (Some(r), Some(c)) => Ok((r, c)),
            _ => Err(CliError::input(format!("unknown variant in pair {s:?}; use A, B or C"))),
        },
        _ => Err(CliError::input(format!("variant pair {s:?} must be two letters such as AC"))),
    }
}

const SMOKE_HEADER: [&str; 9] = ["statistic", "row", "col", "trial", "observed", "p_value", "reject", "degenerate", "bandwidth"];

pub fn test(a: TestArgs) -> Result<u8, CliError> {
    let start = Instant::now();
    let pairs = a.variant_pairs.iter().map(|s| parse_pair(s)).collect::<Result<Vec<_>, _>>()?;
    let sigma_x = if a.sigma_x.eq_ignore_ascii_case("median") {
        Bandwidth::Median
    } else {
        Bandwidth::Fixed(
            a.sigma_x.parse().map_err(|_| CliError::input(format!("--sigma-x must be a number or median, got {:?}", a.sigma_x)))?,
        )
    };
    if a.trials == 0 {
        return Err(CliError::input("--trials must be at least 1"));
    }
    let study = PowerStudy {
        statistics: a.stat.iter().map(|s| s.statistic()).collect(),
        n: a.n,
        d: a.d,
        trials: a.trials,
        permutations: a.perms,
        alpha: a.alpha,
        seed: a.seed,
        config: StatisticConfig { sigma_x, sigma_y: a.sigma_y, lambda: a.lambda, k: a.k },
        pairs: pairs.clone(),
    };
    prepare_out(&a.out)?;
    let outputs = if a.trials >= 20 {
        let matrix = power_matrix(&study)?;
        write_text(&a.out.join("power.csv"), &matrix.to_csv())?;
        write_json(&a.out.join("power.json"), &matrix)?;
        for &stat in &study.statistics {
            println!("{}", stat.name());
            for &(r, c) in &pairs {
                let cell = matrix.cell(stat, r, c).expect("cell computed");
                println!("  {}{}  {:.2}  (degenerate trials: {})", r.name(), c.name(), cell.rejection_rate, cell.degenerate_trials);
            }
        }
        vec!["power.csv".into(), "power.json".into()]
    } else {
        // Too few trials for a rate table: report each test outcome.
        let jobs: Vec<(ZhengTag, ZhengTag, usize)> =
            pairs.iter().flat_map(|&(r, c)| (0..a.trials).map(move |t| (r, c, t))).collect();
        let results: Vec<Vec<TestOutcome>> =
            jobs.par_iter().map(|&(r, c, t)| power_trial(&study, r, c, t)).collect::<csdiv::Result<_>>()?;
        let mut rows = Vec::new();
        let mut records = Vec::new();
        for ((r, c, t), outcomes) in jobs.iter().zip(&results) {
            for o in outcomes {
                rows.push(vec![
                    o.statistic.name().to_string(),
                    r.name().to_string(),
                    c.name().to_string(),
                    t.to_string(),
                    o.statistic_observed.to_string(),
                    o.p_value.to_string(),
                    o.reject.to_string(),
                    o.degenerate.to_string(),
                    o.bandwidth.to_string(),
                ]);
                println!("{} {}{} trial {t}: p = {:.3}{}", o.statistic.name(), r.name(), c.name(), o.p_value, if o.reject { " (reject)" } else { "" });
                records.push(serde_json::json!({ "row": r, "col": c, "trial": t, "outcome": o }));
            }
        }
        write_rows(&a.out.join("trials.csv"), &SMOKE_HEADER, &rows)?;
        write_json(&a.out.join("trials.json"), &serde_json::json!({ "schema_version": 1, "study": study, "trials": records }))?;
        vec!["trials.csv".into(), "trials.json".into()]
    };
    finish(&a.out, "test", &a, Some(a.seed), outputs, 0, start)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum PropArg {
    #[value(name = "1")]
    #[serde(rename = "1")]
    One,
    #[value(name = "2")]
    #[serde(rename = "2")]
    Two,
    #[value(name = "3")]
    #[serde(rename = "3")]
    Three,
    #[value(name = "4")]
    #[serde(rename = "4")]
    Four,
    #[value(name = "fig8")]
    #[serde(rename = "fig8")]
    Fig8,
    #[value(name = "bound")]
    #[serde(rename = "bound")]
    Bound,
}

impl PropArg {
    fn default_replicates(self) -> usize {
        match self {
            PropArg::One => 10_000,
            PropArg::Two => 2_000,
            PropArg::Three | PropArg::Four => 200,
            PropArg::Fig8 => 1_000,
            PropArg::Bound => 500,
        }
    }

    fn file(self) -> &'static str {
        match self {
            PropArg::One => "prop1.csv",
            PropArg::Two => "prop2.csv",
            PropArg::Three => "prop3.csv",
            PropArg::Four => "prop4.csv",
            PropArg::Fig8 => "fig8.csv",
            PropArg::Bound => "bound.csv",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ValidateArgs {
    #[arg(long, value_enum)]
    pub prop: PropArg,
    /// Random cases; per family for --prop 2, per K for fig8.
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Simplex sizes for fig8.
    #[arg(long = "K", value_delimiter = ',', default_value = "2,3,10")]
    pub k_values: Vec<usize>,
    /// Number of bound audits (same as --replicates for --prop bound).
    #[arg(long)]
    pub audits: Option<usize>,
    /// Loss clamp M for bound audits.
    #[arg(long = "M", default_value_t = 4.0)]
    pub m: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct ValidationSummary {
    schema_version: u32,
    prop: PropArg,
    replicates: usize,
    records: usize,
    mandatory_violations: usize,
    details: BTreeMap<String, f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn validate(a: ValidateArgs) -> Result<u8, CliError> {
    let start = Instant::now();
    let replicates = match a.prop {
        PropArg::Bound => a.audits.or(a.replicates),
        _ => a.replicates,
    }
    .unwrap_or_else(|| a.prop.default_replicates());
    let mut details = BTreeMap::new();
    let header: Vec<&str>;
    let mut rows: Vec<Vec<String>> = Vec::new();
    let violations: usize;
    match a.prop {
        PropArg::One => {
            let recs = prop1_sweep(replicates, a.seed)?;
            header = vec!["replicate", "d", "cs", "kl_pq", "kl_qp", "slack", "violation"];
            for r in &recs {
                rows.push(vec![
                    r.replicate.to_string(),
                    r.d.to_string(),
                    r.cs.to_string(),
                    r.kl_pq.to_string(),
                    r.kl_qp.to_string(),
                    r.slack.to_string(),
                    r.violated().to_string(),
                ]);
            }
            violations = recs.iter().filter(|r| r.violated()).count();
            details.insert("min_slack".into(), recs.iter().map(|r| r.slack).fold(f64::INFINITY, f64::min));
        }
        PropArg::Two => {
            let recs = prop2_sweep(replicates, a.seed)?;
            header = vec!["family", "replicate", "d", "tv", "sqrt_cs", "cond2_lhs", "rejected_draws", "violation"];
            for r in &recs {
                let fam = serde_json::to_value(r.family).expect("enum").as_str().unwrap_or_default().to_string();
                rows.push(vec![
                    fam,
                    r.replicate.to_string(),
                    r.d.to_string(),
                    opt(r.tv),
                    r.sqrt_cs.to_string(),
                    r.cond2_lhs.to_string(),
                    r.rejected_draws.to_string(),
                    r.violated().to_string(),
                ]);
            }
            violations = recs.iter().filter(|r| r.violated()).count();
        }
        PropArg::Three | PropArg::Four => {
            let recs = prop34_sweep(replicates, a.seed)?;
            let violated = |r: &csdiv::sweeps::Prop34Record| {
                if a.prop == PropArg::Three {
                    r.prop3_violated()
                } else {
                    r.prop4_violated()
                }
            };
            header = vec!["replicate", "prop3_lhs", "prop3_rhs", "prop3_slack", "c1", "tv", "sqrt_cs", "prop4_epsilon", "violation"];
            for r in &recs {
                rows.push(vec![
                    r.replicate.to_string(),
                    r.prop3_lhs.to_string(),
                    r.prop3_rhs.to_string(),
                    r.prop3_slack.to_string(),
                    r.c1.to_string(),
                    r.tv.to_string(),
                    r.sqrt_cs.to_string(),
                    opt(r.prop4_epsilon),
                    violated(r).to_string(),
                ]);
            }
            violations = recs.iter().filter(|r| violated(r)).count();
            let met = recs.iter().filter(|r| r.prop4_epsilon.is_some()).count();
            details.insert("prop4_condition_met".into(), met as f64);
        }
        PropArg::Fig8 => {
            header = vec!["tv", "cs", "kl", "K", "replicate"];
            let mut tv_cs = 0;
            for &k in &a.k_values {
                let rel = simplex_mc_relation(k, replicates, a.seed)?;
                tv_cs += rel.tv_cs_violations;
                details.insert(format!("K{k}_tv_cs_violations"), rel.tv_cs_violations as f64);
                details.insert(format!("K{k}_cs_kl_violation_fraction"), rel.cs_kl_violation_fraction());
                for s in &rel.samples {
                    rows.push(vec![s.tv.to_string(), s.cs.to_string(), s.kl.to_string(), k.to_string(), s.replicate.to_string()]);
                }
            }
            violations = tv_cs;
        }
        PropArg::Bound => {
            let recs = (0..replicates as u64)
                .into_par_iter()
                .map(|i| random_bound_audit(a.seed, i, a.m))
                .collect::<csdiv::Result<Vec<_>>>()?;
            header = vec![
                "audit",
                "l_train",
                "l_test",
                "kl_bound_value",
                "cs_bound_value",
                "cs_condition_met",
                "epsilon",
                "kl_bound_holds",
                "cs_bound_holds",
            ];
            for (i, r) in recs.iter().enumerate() {
                rows.push(vec![
                    i.to_string(),
                    r.l_train.to_string(),
                    r.l_test.to_string(),
                    r.kl_bound_value.to_string(),
                    r.cs_bound_value.to_string(),
                    r.cs_condition_met.to_string(),
                    opt(r.epsilon),
                    r.kl_bound_holds().to_string(),
                    r.cs_bound_holds().to_string(),
                ]);
            }
            let kl = recs.iter().filter(|r| !r.kl_bound_holds()).count();
            let cs = recs.iter().filter(|r| r.cs_condition_met && !r.cs_bound_holds()).count();
            details.insert("kl_bound_violations".into(), kl as f64);
            details.insert("cs_bound_violations_condition_met".into(), cs as f64);
            details.insert("cs_condition_met".into(), recs.iter().filter(|r| r.cs_condition_met).count() as f64);
            violations = kl + cs;
        }
    }
    prepare_out(&a.out)?;
    write_rows(&a.out.join(a.prop.file()), &header, &rows)?;
    let summary = ValidationSummary {
        schema_version: 1,
        prop: a.prop,
        replicates,
        records: rows.len(),
        mandatory_violations: violations,
        details,
    };
    write_json(&a.out.join("summary.json"), &summary)?;
    println!("{} records, {} mandatory violations", rows.len(), violations);
    let code = if violations > 0 { EXIT_VIOLATION } else { 0 };
    finish(&a.out, "validate", &a, Some(a.seed), vec![a.prop.file().into(), "summary.json".into()], code, start)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskArg {
    Moons,
    Blobs,
}

impl TaskArg {
    fn kind(self) -> SynthKind {
        match self {
            TaskArg::Moons => SynthKind::RotatedMoons,
            TaskArg::Blobs => SynthKind::MeanShiftBlobs,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct UdaArgs {
    #[arg(long, value_enum)]
    pub task: TaskArg,
    /// SOURCE_ONLY, CS_ONLY, CCS_ONLY, CS_PLUS_CCS, ADVERSARIAL or all.
    #[arg(long, default_value = "CS_PLUS_CCS")]
    pub mode: String,
    /// Overrides the configured epoch count; 0 evaluates the initial model.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Training seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dataset seed (defaults to --seed).
    #[arg(long)]
    pub data_seed: Option<u64>,
    /// JSON document with trainer settings; unspecified fields take defaults.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 300)]
    pub n_source: usize,
    #[arg(long, default_value_t = 300)]
    pub n_target: usize,
    /// Target rotation in degrees (task default when omitted).
    #[arg(long)]
    pub rotation: Option<f64>,
    /// Target translation along x.
    #[arg(long)]
    pub shift_x: Option<f64>,
    /// Target translation along y.
    #[arg(long)]
    pub shift_y: Option<f64>,
    /// Resolved trainer settings, recorded for replay.
    #[arg(skip)]
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

fn load_config(path: &Path) -> Result<TrainConfig, CliError> {
    let body = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let cfg: TrainConfig = serde_json::from_str(&body).map_err(|e| CliError::io(path, e))?;
    cfg.validate()?;
    Ok(cfg)
}

const METRICS_HEADER: [&str; 6] = ["mode", "source_accuracy", "target_accuracy", "target_entropy", "epochs", "final_loss"];

pub fn uda(mut a: UdaArgs) -> Result<u8, CliError> {
    let start = Instant::now();
    let mut cfg = match (&a.train, &a.config) {
        (Some(c), _) => c.clone(),
        (None, Some(p)) => load_config(p)?,
        (None, None) => TrainConfig::default(),
    };
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    cfg.seed = a.seed;
    cfg.validate()?;
    a.train = Some(cfg.clone());
    a.config = None;

    let modes: Vec<TrainMode> = if a.mode.eq_ignore_ascii_case("all") {
        TrainMode::ALL.to_vec()
    } else {
        vec![TrainMode::parse(&a.mode).ok_or_else(|| CliError::input(format!("unknown mode {:?}", a.mode)))?]
    };
    let kind = a.task.kind();
    let base = kind.default_shift();
    let shift = Shift {
        rotation_deg: a.rotation.unwrap_or(base.rotation_deg),
        translation: [a.shift_x.unwrap_or(base.translation[0]), a.shift_y.unwrap_or(base.translation[1])],
    };
    let dataset = synth_domain_pair(kind, a.n_source, a.n_target, shift, a.data_seed.unwrap_or(a.seed))?;
    let results: Vec<(TrainMode, TrainResult)> = modes
        .par_iter()
        .map(|&mode| train(&dataset, &TrainConfig { mode, ..cfg.clone() }).map(|r| (mode, r)))
        .collect::<csdiv::Result<_>>()?;

    prepare_out(&a.out)?;
    let mut outputs = Vec::new();
    let mut rows = Vec::new();
    println!("{:<12} {:>8} {:>8} {:>8}", "mode", "source", "target", "entropy");
    for (mode, r) in &results {
        let file = format!("curve_{}.csv", mode.name());
        write_text(&a.out.join(&file), &r.curve_csv())?;
        outputs.push(file);
        let e = r.final_eval;
        rows.push(vec![
            mode.name().to_string(),
            e.source_accuracy.to_string(),
            e.target_accuracy.to_string(),
            e.target_entropy.to_string(),
            cfg.epochs.to_string(),
            r.curve.last().map_or_else(String::new, |c| c.loss.to_string()),
        ]);
        println!("{:<12} {:>8.3} {:>8.3} {:>8.3}", mode.name(), e.source_accuracy, e.target_accuracy, e.target_entropy);
    }
    write_rows(&a.out.join("metrics.csv"), &METRICS_HEADER, &rows)?;
    outputs.push("metrics.csv".into());
    finish(&a.out, "uda", &a, Some(a.seed), outputs, 0, start)
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// A manifest.json written by an earlier run.
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn decode<T: serde::de::DeserializeOwned>(m: &RunManifest, path: &Path) -> Result<T, CliError> {
    serde_json::from_value(m.config.clone()).map_err(|e| CliError::input(format!("{}: bad config: {e}", path.display())))
}

pub fn replay(a: ReplayArgs) -> Result<u8, CliError> {
    let m = RunManifest::read(&a.manifest)?;
    match m.subcommand.as_str() {
        "estimate" => estimate(EstimateArgs { out: a.out, ..decode(&m, &a.manifest)? }),
        "test" => test(TestArgs { out: a.out, ..decode(&m, &a.manifest)? }),
        "validate" => validate(ValidateArgs { out: a.out, ..decode(&m, &a.manifest)? }),
        "uda" => uda(UdaArgs { out: a.out, ..decode(&m, &a.manifest)? }),
        other => Err(CliError::input(format!("{}: unknown subcommand {other:?}", a.manifest.display()))),
    }
}
