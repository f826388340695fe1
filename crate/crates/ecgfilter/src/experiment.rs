//! The two multi-scenario experiments: a detector comparison with
//! architecture search, and the filter-plus-classifier system under
//! injected noise.

use ecgfilter_core::metrics::{accuracy_at, auc, rejection_sweep, ParetoPoint, RejectionCurve};
use ecgfilter_core::nas::{best_by_method, trial_front, TrialRecord};
use ecgfilter_core::nn::TrainConfig;
use ecgfilter_core::noise::InjectionPlan;
use ecgfilter_core::rng::derive_seed;
use ecgfilter_core::signal::{EcgWindow, Superclass};
use ecgfilter_core::stats::{mean, std_dev};
use ecgfilter_core::system::{classify, train_classifier_on_split};
use ecgfilter_core::uad::{self, DetectorConfig, Method};
use serde::{Deserialize, Serialize};

use crate::config::{stream, Loaded, ScenarioKind};
use crate::dataset::{self, inject, prepare, InjectionDescriptor, Prepared};
use crate::error::Result;
use crate::ledger::{self, write_json, Ledger};
use crate::plot::{num, write_csv, Chart, Series, PALETTE};
use crate::stages::{clean_val, curve_rows, curve_series, read_nas_ledger, reject_flags, run_nas, target_snr, train_detector_on, Provenance, Stage, CURVE_COLUMNS};

pub const EXPERIMENT1_DIR: &str = "experiment1";
pub const EXPERIMENT2_DIR: &str = "experiment2";

pub fn nas_ledger_name(scenario: &str, method: Method) -> String {
    format!("nas_{}_{}.jsonl", scenario, method.name())
}

fn method_index(m: Method) -> u64 {
    Method::ALL.iter().position(|&x| x == m).unwrap_or(0) as u64
}

fn data_of(w: &[EcgWindow]) -> Vec<&[f64]> {
    w.iter().map(|w| w.data.as_slice()).collect()
}

fn finite(v: &[Option<f64>]) -> Vec<f64> {
    v.iter().flatten().copied().filter(|x| x.is_finite()).collect()
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        (mean(v), std_dev(v))
    }
}

/// One repetition of the winning configuration, retrained and scored on test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRun {
    pub scenario: String,
    pub method: Method,
    pub repetition: usize,
    pub seed: u64,
    pub trial_id: usize,
    pub param_count: usize,
    pub test_auc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exp1Row {
    pub scenario: String,
    pub method: Method,
    pub valid_trials: usize,
    pub trial_id: Option<usize>,
    pub param_count: Option<usize>,
    #[serde(with = "ecgfilter_core::serde_float")]
    pub val_auc_mean: f64,
    #[serde(with = "ecgfilter_core::serde_float")]
    pub val_auc_std: f64,
    #[serde(with = "ecgfilter_core::serde_float")]
    pub test_auc_mean: f64,
    #[serde(with = "ecgfilter_core::serde_float")]
    pub test_auc_std: f64,
    pub test_repetitions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Front {
    pub scenario: String,
    pub method: Method,
    pub points: Vec<ParetoPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exp1Report {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub trials_per_method: usize,
    pub repetitions: usize,
    pub rows: Vec<Exp1Row>,
    pub fronts: Vec<Front>,
    pub warnings: Vec<String>,
}

pub const TABLE1_COLUMNS: [&str; 11] = [
    "scenario",
    "method",
    "valid_trials",
    "trial_id",
    "param_count",
    "val_auc_mean",
    "val_auc_std",
    "test_auc_mean",
    "test_auc_std",
    "test_repetitions",
    "cell",
];

pub const PARETO_COLUMNS: [&str; 8] = ["scenario", "method", "trial_id", "param_count", "auc_mean", "auc_std", "valid", "on_front"];

fn cell(m: f64, s: f64) -> String {
    if m.is_finite() {
        format!("{m:.3} ± {s:.3}")
    } else {
        "n/a".into()
    }
}

fn test_runs(loaded: &Loaded, p: &Prepared, scenario: &str, s_idx: u64, best: &TrialRecord, ledger: &mut Ledger) -> Result<Vec<TestRun>> {
    let c = &loaded.config;
    let train = data_of(&p.split.train);
    let val = clean_val(&p.split);
    let test = data_of(&p.split.test);
    let base = derive_seed(c.seed(stream::REPEAT), s_idx);
    let mut runs = Vec::new();
    for r in 0..c.report.repetitions {
        let seed = derive_seed(base, method_index(best.config.method()) * 1000 + r as u64);
        let tc = TrainConfig {
            seed,
            ..c.nas.train.clone()
        };
        let (test_auc, failure) = match uad::train_detector(&best.config, &train, &val, &tc) {
            Ok((ckpt, _)) => {
                let scores = uad::score(&ckpt, &test, derive_seed(seed, stream::SCORE))?;
                match auc(&scores, &reject_flags(&p.split.test, &p.split.test_ood)) {
                    Ok(a) => (Some(a), None),
                    Err(e) => (None, Some(e.to_string())),
                }
            }
            Err(e @ ecgfilter_core::Error::Diverged { .. }) => (None, Some(e.to_string())),
            Err(e) => return Err(e.into()),
        };
        let run = TestRun {
            scenario: scenario.into(),
            method: best.config.method(),
            repetition: r,
            seed,
            trial_id: best.trial_id,
            param_count: best.param_count,
            test_auc,
            failure,
        };
        ledger.append(&run)?;
        runs.push(run);
    }
    Ok(runs)
}

/// NAS per scenario and method, then the winner retrained `repetitions`
/// times and scored on test.
pub fn experiment1(loaded: &Loaded, trials: Option<usize>) -> Result<Exp1Report> {
    let c = &loaded.config;
    let dir = loaded.out().join(EXPERIMENT1_DIR);
    let trials = trials.unwrap_or(c.nas.trials);
    let mut rows = Vec::new();
    let mut fronts = Vec::new();
    let mut warnings = Vec::new();
    let mut pareto = Vec::new();
    let mut runs_ledger = Ledger::create(&dir.join("test_runs.jsonl"))?;
    for (s_idx, &kind) in c.experiment1.scenarios.iter().enumerate() {
        let name = kind.name();
        let p = prepare(loaded, kind)?;
        let mut chart = Chart {
            title: format!("Validation AUC against size, {name}"),
            x_label: "parameters".into(),
            y_label: "validation AUC".into(),
            log_x: true,
            series: Vec::new(),
            mark: None,
        };
        for (m_idx, &method) in c.experiment1.methods.iter().enumerate() {
            let space = c.nas.space(method, p.channels);
            let nas = run_nas(loaded, &p.split, &space, trials, &dir.join(nas_ledger_name(&name, method)))?;
            warnings.extend(nas.warnings.iter().map(|w| format!("{name}/{}: {w}", method.name())));
            let records = nas.records;
            let front = trial_front(&records);
            let on_front = |t: &TrialRecord| front.iter().any(|f| f.config_id == t.pareto_point().config_id);
            for t in &records {
                pareto.push(vec![
                    name.clone(),
                    method.name().into(),
                    t.trial_id.to_string(),
                    t.param_count.to_string(),
                    num(t.auc_mean),
                    num(t.auc_std),
                    t.is_valid().to_string(),
                    on_front(t).to_string(),
                ]);
            }
            let color = PALETTE[m_idx % PALETTE.len()];
            chart.series.push(Series {
                name: method.name().into(),
                points: records.iter().filter(|t| t.is_valid()).map(|t| (t.param_count as f64, t.auc_mean)).collect(),
                line: false,
                color: color.into(),
            });
            chart.series.push(Series {
                name: format!("{} front", method.name()),
                points: front.iter().map(|f| (f.param_count as f64, f.auc_mean)).collect(),
                line: true,
                color: color.into(),
            });
            fronts.push(Front {
                scenario: name.clone(),
                method,
                points: front,
            });
            let valid = records.iter().filter(|t| t.is_valid()).count();
            let row = match best_by_method(&records) {
                Ok(best) => {
                    let runs = test_runs(loaded, &p, &name, s_idx as u64, best, &mut runs_ledger)?;
                    let aucs = finite(&runs.iter().map(|r| r.test_auc).collect::<Vec<_>>());
                    let (tm, ts) = mean_std(&aucs);
                    Exp1Row {
                        scenario: name.clone(),
                        method,
                        valid_trials: valid,
                        trial_id: Some(best.trial_id),
                        param_count: Some(best.param_count),
                        val_auc_mean: best.auc_mean,
                        val_auc_std: best.auc_std,
                        test_auc_mean: tm,
                        test_auc_std: ts,
                        test_repetitions: aucs.len(),
                    }
                }
                Err(e) => {
                    warnings.push(format!("{name}/{}: {e}", method.name()));
                    Exp1Row {
                        scenario: name.clone(),
                        method,
                        valid_trials: valid,
                        trial_id: None,
                        param_count: None,
                        val_auc_mean: f64::NAN,
                        val_auc_std: f64::NAN,
                        test_auc_mean: f64::NAN,
                        test_auc_std: f64::NAN,
                        test_repetitions: 0,
                    }
                }
            };
            rows.push(row);
        }
        chart.save(&dir.join(format!("pareto_{name}.svg")))?;
    }
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.scenario.clone(),
                r.method.name().into(),
                r.valid_trials.to_string(),
                r.trial_id.map_or_else(String::new, |v| v.to_string()),
                r.param_count.map_or_else(String::new, |v| v.to_string()),
                num(r.val_auc_mean),
                num(r.val_auc_std),
                num(r.test_auc_mean),
                num(r.test_auc_std),
                r.test_repetitions.to_string(),
                cell(r.test_auc_mean, r.test_auc_std),
            ]
        })
        .collect();
    write_csv(&dir.join("table1.csv"), &TABLE1_COLUMNS, &table)?;
    write_csv(&dir.join("pareto.csv"), &PARETO_COLUMNS, &pareto)?;
    let report = Exp1Report {
        provenance: Provenance::new(loaded, "experiment1"),
        trials_per_method: trials,
        repetitions: c.report.repetitions,
        rows,
        fronts,
        warnings,
    };
    write_json(&dir.join("report.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exp2Run {
    pub scenario: String,
    pub repetition: usize,
    pub filter_seed: u64,
    pub classifier_seed: u64,
    pub classifier_val_macro_auc: Option<f64>,
    pub test_auc: Option<f64>,
    #[serde(with = "ecgfilter_core::serde_float")]
    pub threshold: f64,
    pub val_accuracy: f64,
    pub test_classifier_only: f64,
    pub test_system: f64,
    pub test_rejection_rate: f64,
    pub test_optimum_accuracy: f64,
    pub test_optimum_rejection_rate: f64,
    pub test_windows: usize,
    pub test_should_reject: usize,
    pub test_classifier_correct: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exp2Row {
    pub scenario: String,
    pub repetitions: usize,
    pub classifier_only_mean: f64,
    pub classifier_only_std: f64,
    pub system_mean: f64,
    pub system_std: f64,
    /// Percentage points, system minus classifier only.
    pub improvement_pp: f64,
    pub rejection_rate_mean: f64,
    pub test_optimum_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exp2Report {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub target_snr_db: f64,
    pub target_source: String,
    pub fraction: f64,
    pub correctness: ecgfilter_core::metrics::Correctness,
    pub filter: DetectorConfig,
    pub rows: Vec<Exp2Row>,
    pub runs: Vec<Exp2Run>,
}

/// Test curves kept in memory for inspection; the report only stores
/// summaries.
#[derive(Debug, Clone)]
pub struct Exp2Outcome {
    pub report: Exp2Report,
    pub curves: Vec<(String, usize, RejectionCurve, RejectionCurve)>,
    /// Per scenario and repetition: test (should_reject, classifier correct).
    pub test_truth: Vec<(Vec<bool>, Vec<bool>)>,
}

pub const TABLE2_COLUMNS: [&str; 9] = [
    "scenario",
    "repetitions",
    "classifier_only_mean",
    "classifier_only_std",
    "system_mean",
    "system_std",
    "improvement_pp",
    "rejection_rate_mean",
    "test_optimum_mean",
];

fn exp2_filter(loaded: &Loaded, scenario: &str) -> Result<DetectorConfig> {
    let c = &loaded.config;
    if !c.filter.from_nas {
        return Ok(c.filter.detector.clone());
    }
    let path = loaded.out().join(EXPERIMENT1_DIR).join(nas_ledger_name(scenario, Method::DeepSvdd));
    if !path.exists() {
        return Err(ledger::missing(&path, "experiment1"));
    }
    let (_, recs) = read_nas_ledger(&path)?;
    Ok(best_by_method(&recs)?.config.clone())
}

fn correct_flags(loaded: &Loaded, preds: &[std::collections::BTreeSet<Superclass>], windows: &[EcgWindow]) -> Vec<bool> {
    let judge = loaded.config.report.correctness;
    preds
        .iter()
        .zip(windows)
        .map(|(p, w)| {
            let a: Vec<Superclass> = p.iter().copied().collect();
            let b: Vec<Superclass> = w.labels().iter().copied().collect();
            judge.judge(&a, &b)
        })
        .collect()
}

/// Per held-out class: inject noise, train classifier and filter, pick the
/// threshold on validation, report test accuracy with and without the filter.
pub fn experiment2(loaded: &Loaded) -> Result<Exp2Outcome> {
    let c = &loaded.config;
    let dir = loaded.out().join(EXPERIMENT2_DIR);
    let (target, source) = target_snr(&Stage::new(loaded))?;
    let noise = dataset::load_noise(loaded)?;
    let base_plan = dataset::injection_plan(loaded, target);
    let mut runs = Vec::new();
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    let mut truth = Vec::new();
    let mut curve_csv = Vec::new();
    let mut filter = c.filter.detector.clone();
    let mut runs_ledger = Ledger::create(&dir.join("runs.jsonl"))?;
    for (s_idx, &ood_class) in c.experiment2.ood_classes.iter().enumerate() {
        let kind = ScenarioKind::Ood { ood_class };
        let name = kind.name();
        let p = prepare(loaded, kind)?;
        let plan = InjectionPlan {
            seed: derive_seed(base_plan.seed, s_idx as u64),
            ..base_plan.clone()
        };
        let (split, log) = inject(&p, &noise, &plan)?;
        write_json(
            &dir.join(format!("injection_{name}.json")),
            &InjectionDescriptor::new(plan, source, log, &p.split, &split),
        )?;
        filter = exp2_filter(loaded, &name)?;
        let cc = c.classifier.config(p.channels, p.classes.clone());
        let base = derive_seed(c.seed(stream::REPEAT), 0x4558_5032 + s_idx as u64);
        let val_reject = reject_flags(&split.val, &split.val_ood);
        let test_reject = reject_flags(&split.test, &split.test_ood);
        let val_refs: Vec<&EcgWindow> = split.val.iter().collect();
        let test_refs: Vec<&EcgWindow> = split.test.iter().collect();
        let mut scenario_runs = Vec::new();
        for r in 0..c.report.repetitions {
            let rs = derive_seed(base, r as u64);
            let filter_seed = derive_seed(rs, stream::FILTER);
            let classifier_seed = derive_seed(rs, stream::CLASSIFIER);
            let fckpt = train_detector_on(
                &split,
                &filter,
                &TrainConfig {
                    seed: filter_seed,
                    ..c.filter.train.clone()
                },
            )?;
            let (cckpt, crep) = train_classifier_on_split(
                &cc,
                &split,
                &TrainConfig {
                    seed: classifier_seed,
                    ..c.classifier.train.clone()
                },
            )?;
            let score_seed = derive_seed(rs, stream::SCORE);
            let vs = uad::score(&fckpt, &data_of(&split.val), score_seed)?;
            let ts = uad::score(&fckpt, &data_of(&split.test), derive_seed(score_seed, 1))?;
            let vok = correct_flags(loaded, &classify(&cckpt, &val_refs)?, &split.val);
            let tok = correct_flags(loaded, &classify(&cckpt, &test_refs)?, &split.test);
            let vcurve = rejection_sweep(&vs, &val_reject, &vok)?;
            let tcurve = rejection_sweep(&ts, &test_reject, &tok)?;
            let threshold = vcurve.optimum.threshold;
            let run = Exp2Run {
                scenario: name.clone(),
                repetition: r,
                filter_seed,
                classifier_seed,
                classifier_val_macro_auc: crep.val_macro_auc,
                test_auc: auc(&ts, &test_reject).ok(),
                threshold,
                val_accuracy: vcurve.optimum.custom_accuracy,
                test_classifier_only: accuracy_at(&ts, &test_reject, &tok, f64::INFINITY),
                test_system: accuracy_at(&ts, &test_reject, &tok, threshold),
                test_rejection_rate: ts.iter().filter(|&&v| v > threshold).count() as f64 / ts.len().max(1) as f64,
                test_optimum_accuracy: tcurve.optimum.custom_accuracy,
                test_optimum_rejection_rate: tcurve.optimum.rejection_rate,
                test_windows: ts.len(),
                test_should_reject: test_reject.iter().filter(|&&b| b).count(),
                test_classifier_correct: tok.iter().filter(|&&b| b).count(),
            };
            runs_ledger.append(&run)?;
            for row in curve_rows("val", &vcurve).into_iter().chain(curve_rows("test", &tcurve)) {
                let mut full = vec![name.clone(), r.to_string()];
                full.extend(row);
                curve_csv.push(full);
            }
            if r == 0 {
                Chart {
                    title: format!("Rejection curve, held-out {name}"),
                    x_label: "rejection rate".into(),
                    y_label: "custom accuracy".into(),
                    log_x: false,
                    series: vec![curve_series("validation", &vcurve, PALETTE[0]), curve_series("test", &tcurve, PALETTE[1])],
                    mark: Some((run.test_rejection_rate, run.test_system, "chosen on validation".into())),
                }
                .save(&dir.join(format!("rejection_{name}.svg")))?;
            }
            truth.push((test_reject.clone(), tok));
            curves.push((name.clone(), r, vcurve, tcurve));
            scenario_runs.push(run);
        }
        let co: Vec<f64> = scenario_runs.iter().map(|r| r.test_classifier_only).collect();
        let sy: Vec<f64> = scenario_runs.iter().map(|r| r.test_system).collect();
        let (com, cos) = mean_std(&co);
        let (sym, sys) = mean_std(&sy);
        rows.push(Exp2Row {
            scenario: name,
            repetitions: scenario_runs.len(),
            classifier_only_mean: com,
            classifier_only_std: cos,
            system_mean: sym,
            system_std: sys,
            improvement_pp: 100.0 * (sym - com),
            rejection_rate_mean: mean_std(&scenario_runs.iter().map(|r| r.test_rejection_rate).collect::<Vec<_>>()).0,
            test_optimum_mean: mean_std(&scenario_runs.iter().map(|r| r.test_optimum_accuracy).collect::<Vec<_>>()).0,
        });
        runs.extend(scenario_runs);
    }
    let mut header = vec!["scenario", "repetition"];
    header.extend(CURVE_COLUMNS);
    write_csv(&dir.join("curves.csv"), &header, &curve_csv)?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.scenario.clone(),
                r.repetitions.to_string(),
                num(r.classifier_only_mean),
                num(r.classifier_only_std),
                num(r.system_mean),
                num(r.system_std),
                num(r.improvement_pp),
                num(r.rejection_rate_mean),
                num(r.test_optimum_mean),
            ]
        })
        .collect();
    write_csv(&dir.join("table2.csv"), &TABLE2_COLUMNS, &table)?;
    let report = Exp2Report {
        provenance: Provenance::new(loaded, "experiment2"),
        target_snr_db: target,
        target_source: source.into(),
        fraction: base_plan.fraction,
        correctness: c.report.correctness,
        filter,
        rows,
        runs,
    };
    write_json(&dir.join("report.json"), &report)?;
    Ok(Exp2Outcome {
        report,
        curves,
        test_truth: truth,
    })
}
