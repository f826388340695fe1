//! The pipeline stages behind the subcommands. Each stage reads the
//! artifacts of its predecessors from the output directory and fails with a
//! dependency error naming the stage to run when one is missing.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ecgfilter_core::data::DatasetSplit;
use ecgfilter_core::metrics::{accuracy_at, auc, rejection_sweep, RejectionCurve};
use ecgfilter_core::nas::{self, best_by_method, run_search, SearchSpace, TrialRecord};
use ecgfilter_core::nn::{Checkpoint, TrainConfig};
use ecgfilter_core::noise::{estimate_snr, NoiseCalibration};
use ecgfilter_core::rng::derive_seed;
use ecgfilter_core::signal::{EcgWindow, Superclass};
use ecgfilter_core::stats::median;
use ecgfilter_core::system::{classify, train_classifier_on_split};
use ecgfilter_core::uad::{self, DetectorConfig, Method};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::{checkpoint_id, load_checkpoint, save_checkpoint};
use crate::config::{stream, Loaded, ScenarioKind, CODE_VERSION};
use crate::corpus::{corpus_dirs, synthesize, SynthSummary};
use crate::dataset::{self, inject, injection_plan, open_corpus, replay, window_corpus, InjectionDescriptor, Prepared, SplitDescriptor};
use crate::error::{AppError, Result};
use crate::ledger::{self, read_json, read_lines, read_records, require, write_json, Ledger};
use crate::plot::{num, write_csv, Chart, Series, PALETTE};

/// File names inside the output directory.
pub mod artifact {
    pub const WINDOWS: &str = "windows.jsonl";
    pub const SPLIT: &str = "split.json";
    pub const CALIBRATION: &str = "calibration.jsonl";
    pub const CALIBRATION_SUMMARY: &str = "calibration_summary.json";
    pub const INJECTION: &str = "injection.json";
    pub const FILTER: &str = "filter.ckpt";
    pub const FILTER_REPORT: &str = "filter_train.json";
    pub const CLASSIFIER: &str = "classifier.ckpt";
    pub const CLASSIFIER_REPORT: &str = "classifier_train.json";
    pub const NAS: &str = "nas_ledger.jsonl";
    pub const SCORES: &str = "scores.jsonl";
    pub const EVALUATION: &str = "evaluation.jsonl";
    pub const EVALUATION_SUMMARY: &str = "evaluation.json";
    pub const CURVE_CSV: &str = "rejection_curve.csv";
    pub const CURVE_SVG: &str = "rejection_curve.svg";
    pub const REPORT: &str = "report.json";
    pub const REPORT_CSV: &str = "report.csv";
}

pub struct Stage<'a> {
    pub loaded: &'a Loaded,
    pub out: PathBuf,
}

impl<'a> Stage<'a> {
    pub fn new(loaded: &'a Loaded) -> Self {
        Self {
            loaded,
            out: loaded.out(),
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn need(&self, name: &str, stage: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(ledger::missing(&p, stage))
        }
    }
}

fn digest(data: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in data {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

pub fn synth(s: &Stage) -> Result<SynthSummary> {
    let c = &s.loaded.config;
    synthesize(
        &s.loaded.data_root(),
        &c.synth.labeled,
        &c.synth.quality,
        &c.synth.noise,
        c.seed(stream::SYNTH),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowIndexRow {
    pub corpus: String,
    pub window_id: String,
    pub channels: usize,
    pub labels: BTreeSet<Superclass>,
    pub digest: String,
}

/// Windows both corpora and lists every window with a content digest.
pub fn ingest(s: &Stage) -> Result<usize> {
    let [ldir, qdir, _] = corpus_dirs(&s.loaded.data_root());
    dataset::load_noise(s.loaded)?;
    let mut l = Ledger::create(&s.path(artifact::WINDOWS))?;
    let mut n = 0;
    for (name, dir) in [("labeled", ldir), ("quality", qdir)] {
        let w = window_corpus(&open_corpus(&dir)?)?;
        for win in &w.windows {
            l.append(&WindowIndexRow {
                corpus: name.into(),
                window_id: win.id(),
                channels: win.channels,
                labels: win.labels().clone(),
                digest: digest(&win.data),
            })?;
            n += 1;
        }
    }
    Ok(n)
}

pub fn scenario(s: &Stage) -> Result<SplitDescriptor> {
    s.need(artifact::WINDOWS, "ingest")?;
    let p = dataset::prepare(s.loaded, s.loaded.config.scenario)?;
    let d = SplitDescriptor::of(&p);
    write_json(&s.path(artifact::SPLIT), &d)?;
    Ok(d)
}

/// The configured scenario, checked against `split.json`.
pub fn load_prepared(s: &Stage) -> Result<Prepared> {
    let path = s.path(artifact::SPLIT);
    let desc: SplitDescriptor = require(&path, "scenario")?;
    let p = dataset::prepare(s.loaded, s.loaded.config.scenario)?;
    desc.check(&p, &path)?;
    Ok(p)
}

/// The evaluation split: injected when `injection.json` exists.
pub fn eval_split(s: &Stage, p: &Prepared) -> Result<DatasetSplit> {
    let path = s.path(artifact::INJECTION);
    if !path.exists() {
        return Ok(p.split.clone());
    }
    let desc: InjectionDescriptor = read_json(&path)?;
    if desc.version != dataset::DESCRIPTOR_VERSION {
        return Err(AppError::UnsupportedVersion {
            path,
            found: desc.version,
            supported: dataset::DESCRIPTOR_VERSION,
        });
    }
    replay(p, &dataset::load_noise(s.loaded)?, &desc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub window_id: String,
    pub class3_seconds: f64,
    pub calibration: NoiseCalibration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub windows: usize,
    pub with_qrs: usize,
    /// Median over windows with a detected QRS.
    pub median_snr_db: Option<f64>,
}

/// Estimates the SNR of every unanalyzable window of the quality corpus.
pub fn calibrate(s: &Stage) -> Result<CalibrationSummary> {
    let [_, qdir, _] = corpus_dirs(&s.loaded.data_root());
    let corpus = open_corpus(&qdir)?;
    let meta = corpus.quality_meta();
    let w = window_corpus(&corpus)?;
    let mut l = Ledger::create(&s.path(artifact::CALIBRATION))?;
    let mut snrs = Vec::new();
    let mut windows = 0;
    for (win, seg) in w.windows.iter().zip(&w.segments) {
        let Some(m) = meta.iter().find(|m| m.record_id == win.source_record) else {
            continue;
        };
        let t0 = win.window_index as f64 * ecgfilter_core::signal::WINDOW_SECONDS;
        let overlap = m.class3_overlap(t0, t0 + ecgfilter_core::signal::WINDOW_SECONDS);
        if overlap < ecgfilter_core::data::UNANALYZABLE_SECONDS - 1e-9 {
            continue;
        }
        let cal = estimate_snr(&seg.signal[0], seg.fs)?;
        if cal.estimated_snr_db.is_finite() {
            snrs.push(cal.estimated_snr_db);
        }
        l.append(&CalibrationRow {
            window_id: win.id(),
            class3_seconds: overlap,
            calibration: cal,
        })?;
        windows += 1;
    }
    let summary = CalibrationSummary {
        windows,
        with_qrs: snrs.len(),
        median_snr_db: if snrs.is_empty() { None } else { Some(median(&snrs)) },
    };
    write_json(&s.path(artifact::CALIBRATION_SUMMARY), &summary)?;
    Ok(summary)
}

/// Target SNR from the config, else from `calibrate`.
pub fn target_snr(s: &Stage) -> Result<(f64, &'static str)> {
    if let Some(t) = s.loaded.config.injection.target_snr_db {
        return Ok((t, "config"));
    }
    let sum: CalibrationSummary = require(&s.path(artifact::CALIBRATION_SUMMARY), "calibrate")?;
    let t = sum
        .median_snr_db
        .ok_or_else(|| AppError::Data("calibration found no window with a detectable QRS; set injection.target_snr_db".into()))?;
    Ok((t, "calibration"))
}

pub fn inject_stage(s: &Stage) -> Result<InjectionDescriptor> {
    let p = load_prepared(s)?;
    let (target, source) = target_snr(s)?;
    let plan = injection_plan(s.loaded, target);
    let (split, log) = inject(&p, &dataset::load_noise(s.loaded)?, &plan)?;
    let d = InjectionDescriptor::new(plan, source, log, &p.split, &split);
    write_json(&s.path(artifact::INJECTION), &d)?;
    Ok(d)
}

fn data_of(w: &[EcgWindow]) -> Vec<&[f64]> {
    w.iter().map(|w| w.data.as_slice()).collect()
}

/// Per window: OOD or unanalyzable.
pub fn reject_flags(w: &[EcgWindow], ood: &[bool]) -> Vec<bool> {
    w.iter().zip(ood).map(|(w, &o)| DatasetSplit::should_reject(w, o)).collect()
}

/// Validation windows a perfect filter would keep.
pub fn clean_val(split: &DatasetSplit) -> Vec<&[f64]> {
    split
        .val
        .iter()
        .zip(&split.val_ood)
        .filter(|(w, &o)| !DatasetSplit::should_reject(w, o))
        .map(|(w, _)| w.data.as_slice())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub method: String,
    pub param_count: usize,
    pub checkpoint_id: String,
    pub epochs_run: usize,
    pub final_train_loss: f64,
    pub best_val_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_macro_auc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector: Option<DetectorConfig>,
}

pub fn train_detector_on(split: &DatasetSplit, cfg: &DetectorConfig, tc: &TrainConfig) -> Result<Checkpoint> {
    Ok(uad::train_detector(cfg, &data_of(&split.train), &clean_val(split), tc)?.0)
}

/// The filter configuration: the config's detector, or the NAS winner.
pub fn filter_config(s: &Stage) -> Result<DetectorConfig> {
    let c = &s.loaded.config;
    if !c.filter.from_nas {
        return Ok(c.filter.detector.clone());
    }
    let path = s.need(artifact::NAS, "nas")?;
    let (_, records) = read_nas_ledger(&path)?;
    Ok(best_by_method(&records)?.config.clone())
}

pub fn train_filter(s: &Stage) -> Result<TrainSummary> {
    let p = load_prepared(s)?;
    let c = &s.loaded.config;
    let det = filter_config(s)?;
    let tc = TrainConfig {
        seed: c.seed(stream::FILTER),
        ..c.filter.train.clone()
    };
    let ckpt = train_detector_on(&p.split, &det, &tc)?;
    save_checkpoint(&ckpt, &s.path(artifact::FILTER))?;
    let sum = TrainSummary {
        method: det.method().name().into(),
        param_count: ckpt.param_count(),
        checkpoint_id: checkpoint_id(&ckpt),
        epochs_run: ckpt.training_meta.epochs,
        final_train_loss: ckpt.training_meta.final_train_loss,
        best_val_loss: ckpt.training_meta.best_val_loss,
        val_macro_auc: None,
        detector: Some(det),
    };
    write_json(&s.path(artifact::FILTER_REPORT), &sum)?;
    Ok(sum)
}

pub fn train_classifier(s: &Stage) -> Result<TrainSummary> {
    let p = load_prepared(s)?;
    if p.classes.is_empty() {
        return Err(AppError::Core(ecgfilter_core::Error::Config(
            "train-classifier needs an OOD scenario with labeled classes".into(),
        )));
    }
    let c = &s.loaded.config;
    let cc = c.classifier.config(p.channels, p.classes.clone());
    let tc = TrainConfig {
        seed: c.seed(stream::CLASSIFIER),
        ..c.classifier.train.clone()
    };
    let (ckpt, rep) = train_classifier_on_split(&cc, &p.split, &tc)?;
    save_checkpoint(&ckpt, &s.path(artifact::CLASSIFIER))?;
    let sum = TrainSummary {
        method: "CLASSIFIER".into(),
        param_count: ckpt.param_count(),
        checkpoint_id: checkpoint_id(&ckpt),
        epochs_run: rep.train.epochs_run,
        final_train_loss: rep.train.final_train_loss(),
        best_val_loss: rep.train.best_val_loss(),
        val_macro_auc: rep.val_macro_auc,
        detector: None,
    };
    write_json(&s.path(artifact::CLASSIFIER_REPORT), &sum)?;
    Ok(sum)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NasHeader {
    pub master_seed: u64,
    pub space_hash: String,
    pub seeds_per_trial: usize,
    pub space: SearchSpace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NasLine {
    Header(NasHeader),
    Trial(TrialRecord),
}

pub fn space_hash(space: &SearchSpace) -> String {
    let bytes = serde_json::to_vec(space).expect("space serializes");
    Sha256::digest(bytes).iter().take(16).map(|b| format!("{b:02x}")).collect()
}

pub fn read_nas_ledger(path: &Path) -> Result<(NasHeader, Vec<TrialRecord>)> {
    let lines: Vec<NasLine> = read_records(path)?;
    let mut it = lines.into_iter();
    let Some(NasLine::Header(h)) = it.next() else {
        return Err(AppError::Parse {
            path: path.to_path_buf(),
            offset: 0,
            message: "NAS ledger must start with a header line".into(),
        });
    };
    let mut records = Vec::new();
    for l in it {
        match l {
            NasLine::Trial(t) => records.push(t),
            NasLine::Header(_) => {
                return Err(AppError::Parse {
                    path: path.to_path_buf(),
                    offset: 0,
                    message: "second header line in NAS ledger".into(),
                })
            }
        }
    }
    Ok((h, records))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NasRun {
    pub records: Vec<TrialRecord>,
    pub resumed: usize,
    pub warnings: Vec<String>,
}

/// Random search on `split` (validation AUC against the should-reject
/// flags), appending to the ledger at `path` and resuming from it.
pub fn run_nas(loaded: &Loaded, split: &DatasetSplit, space: &SearchSpace, trials: usize, path: &Path) -> Result<NasRun> {
    let c = &loaded.config;
    let settings = c.search_settings(Some(trials));
    let header = NasHeader {
        master_seed: settings.master_seed,
        space_hash: space_hash(space),
        seeds_per_trial: settings.seeds_per_trial,
        space: space.clone(),
    };
    let (completed, mut ledger) = if path.exists() && !read_lines(path)?.is_empty() {
        let (h, recs) = read_nas_ledger(path)?;
        if h != header {
            return Err(AppError::Data(format!(
                "{} belongs to another search (master seed {}, space {}); move it away to start over",
                path.display(),
                h.master_seed,
                h.space_hash
            )));
        }
        (recs, Ledger::append_to(path)?)
    } else {
        let mut l = Ledger::create(path)?;
        l.append(&NasLine::Header(header))?;
        (Vec::new(), l)
    };
    let train = data_of(&split.train);
    let val = data_of(&split.val);
    let anomalous = reject_flags(&split.val, &split.val_ood);
    if anomalous.iter().all(|&a| a) || !anomalous.iter().any(|&a| a) {
        return Err(AppError::Data(format!(
            "validation split needs both kept and rejected windows for {}; enlarge the corpus",
            path.display()
        )));
    }
    let tc = c.nas.train.clone();
    let started = Instant::now();
    let clock = move || started.elapsed().as_secs_f64();
    let clock_ref: Option<&dyn Fn() -> f64> = if c.nas.record_wall_time { Some(&clock) } else { None };
    let out = run_search(
        space,
        &settings,
        &completed,
        |cfg, seed| nas::train_and_validate(cfg, &train, &val, &anomalous, &tc, seed),
        |rec| {
            ledger
                .append(&NasLine::Trial(rec.clone()))
                .map_err(|e| ecgfilter_core::Error::InvalidInput(e.to_string()))
        },
        clock_ref,
    )?;
    Ok(NasRun {
        records: out.records,
        resumed: out.resumed,
        warnings: out.warnings,
    })
}

pub fn nas_stage(s: &Stage, trials: Option<usize>) -> Result<NasRun> {
    let p = load_prepared(s)?;
    let c = &s.loaded.config;
    let space = c.nas.space(c.nas.method, p.channels);
    run_nas(s.loaded, &p.split, &space, trials.unwrap_or(c.nas.trials), &s.path(artifact::NAS))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub set: String,
    pub window_id: String,
    pub score: f64,
    pub ood: bool,
    pub injected: bool,
    pub should_reject: bool,
}

pub fn score_rows(ckpt: &Checkpoint, split: &DatasetSplit, seed: u64) -> Result<Vec<ScoreRow>> {
    let mut rows = Vec::new();
    for (set, windows, ood) in [("val", &split.val, &split.val_ood), ("test", &split.test, &split.test_ood)] {
        let scores = uad::score(ckpt, &data_of(windows), derive_seed(seed, rows.len() as u64))?;
        for ((w, &o), sc) in windows.iter().zip(ood.iter()).zip(scores) {
            rows.push(ScoreRow {
                set: set.into(),
                window_id: w.id(),
                score: sc,
                ood: o,
                injected: w.injected_noise.is_some(),
                should_reject: DatasetSplit::should_reject(w, o),
            });
        }
    }
    Ok(rows)
}

pub fn score(s: &Stage) -> Result<usize> {
    let p = load_prepared(s)?;
    let split = eval_split(s, &p)?;
    let ckpt = load_checkpoint(&s.need(artifact::FILTER, "train-filter")?)?;
    let rows = score_rows(&ckpt, &split, s.loaded.config.seed(stream::SCORE))?;
    let mut l = Ledger::create(&s.path(artifact::SCORES))?;
    for r in &rows {
        l.append(r)?;
    }
    Ok(rows.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub set: String,
    pub window_id: String,
    pub filter_score: f64,
    pub should_reject: bool,
    pub rejected: bool,
    pub true_labels: BTreeSet<Superclass>,
    /// Empty when rejected; absent without a classifier.
    pub predicted_labels: Option<BTreeSet<Superclass>>,
    pub classifier_correct: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Operating {
    #[serde(with = "ecgfilter_core::serde_float")]
    pub threshold: f64,
    pub rejection_rate: f64,
    pub custom_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub val_auc: Option<f64>,
    pub test_auc: Option<f64>,
    pub with_classifier: bool,
    /// Chosen on validation, applied to test.
    pub chosen: Operating,
    pub test_classifier_only: f64,
    pub test_system: f64,
    pub test_optimum: Operating,
    pub test_windows: usize,
    pub test_should_reject: usize,
}

fn set_rows<'r>(rows: &'r [ScoreRow], set: &str) -> Vec<&'r ScoreRow> {
    rows.iter().filter(|r| r.set == set).collect()
}

fn auc_of(rows: &[&ScoreRow]) -> Option<f64> {
    let s: Vec<f64> = rows.iter().map(|r| r.score).collect();
    let a: Vec<bool> = rows.iter().map(|r| r.should_reject).collect();
    auc(&s, &a).ok()
}

fn curve_of(rows: &[&EvalRow]) -> Result<RejectionCurve> {
    let s: Vec<f64> = rows.iter().map(|r| r.filter_score).collect();
    let sr: Vec<bool> = rows.iter().map(|r| r.should_reject).collect();
    let ok: Vec<bool> = rows.iter().map(|r| r.classifier_correct.unwrap_or(true)).collect();
    Ok(rejection_sweep(&s, &sr, &ok)?)
}

/// Classifier correctness per window; `None` without a classifier.
fn predictions(s: &Stage, split: &DatasetSplit) -> Result<Option<Vec<(String, BTreeSet<Superclass>)>>> {
    let path = s.path(artifact::CLASSIFIER);
    if !path.exists() {
        return Ok(None);
    }
    let ckpt = load_checkpoint(&path)?;
    let windows: Vec<&EcgWindow> = split.val.iter().chain(&split.test).collect();
    let preds = classify(&ckpt, &windows)?;
    Ok(Some(windows.iter().map(|w| w.id()).zip(preds).collect()))
}

pub fn evaluate(s: &Stage) -> Result<EvaluationSummary> {
    let rows: Vec<ScoreRow> = {
        let p = s.need(artifact::SCORES, "score")?;
        read_records(&p)?
    };
    let p = load_prepared(s)?;
    let split = eval_split(s, &p)?;
    let preds = predictions(s, &split)?;
    let labels: std::collections::BTreeMap<String, BTreeSet<Superclass>> =
        split.val.iter().chain(&split.test).map(|w| (w.id(), w.labels().clone())).collect();
    let pred_map: Option<std::collections::BTreeMap<String, BTreeSet<Superclass>>> = preds.map(|v| v.into_iter().collect());
    let correctness = s.loaded.config.report.correctness;
    let mut eval: Vec<EvalRow> = rows
        .iter()
        .map(|r| {
            let truth = labels.get(&r.window_id).cloned().unwrap_or_default();
            let pred = pred_map.as_ref().and_then(|m| m.get(&r.window_id).cloned());
            let correct = pred.as_ref().map(|pp| {
                let a: Vec<Superclass> = pp.iter().copied().collect();
                let b: Vec<Superclass> = truth.iter().copied().collect();
                correctness.judge(&a, &b)
            });
            EvalRow {
                set: r.set.clone(),
                window_id: r.window_id.clone(),
                filter_score: r.score,
                should_reject: r.should_reject,
                rejected: false,
                true_labels: truth,
                predicted_labels: pred,
                classifier_correct: correct,
            }
        })
        .collect();
    let val: Vec<&EvalRow> = eval.iter().filter(|r| r.set == "val").collect();
    let vcurve = curve_of(&val)?;
    let chosen = &vcurve.optimum;
    let threshold = chosen.threshold;
    for r in &mut eval {
        r.rejected = r.filter_score > threshold;
        if r.rejected {
            if let Some(p) = &mut r.predicted_labels {
                p.clear();
            }
        }
    }
    let test: Vec<&EvalRow> = eval.iter().filter(|r| r.set == "test").collect();
    let tcurve = curve_of(&test)?;
    let ts: Vec<f64> = test.iter().map(|r| r.filter_score).collect();
    let tsr: Vec<bool> = test.iter().map(|r| r.should_reject).collect();
    let tok: Vec<bool> = test.iter().map(|r| r.classifier_correct.unwrap_or(true)).collect();
    let system = accuracy_at(&ts, &tsr, &tok, threshold);
    let opt = &tcurve.optimum;
    let summary = EvaluationSummary {
        val_auc: auc_of(&set_rows(&rows, "val")),
        test_auc: auc_of(&set_rows(&rows, "test")),
        with_classifier: pred_map.is_some(),
        chosen: Operating {
            threshold,
            rejection_rate: test.iter().filter(|r| r.rejected).count() as f64 / test.len().max(1) as f64,
            custom_accuracy: system,
        },
        test_classifier_only: accuracy_at(&ts, &tsr, &tok, f64::INFINITY),
        test_system: system,
        test_optimum: Operating {
            threshold: opt.threshold,
            rejection_rate: opt.rejection_rate,
            custom_accuracy: opt.custom_accuracy,
        },
        test_windows: test.len(),
        test_should_reject: tsr.iter().filter(|&&b| b).count(),
    };
    let mut l = Ledger::create(&s.path(artifact::EVALUATION))?;
    for r in &eval {
        l.append(r)?;
    }
    write_json(&s.path(artifact::EVALUATION_SUMMARY), &summary)?;
    Ok(summary)
}

pub const CURVE_COLUMNS: [&str; 4] = ["set", "threshold", "rejection_rate", "custom_accuracy"];

pub fn curve_rows(set: &str, c: &RejectionCurve) -> Vec<Vec<String>> {
    c.points
        .iter()
        .map(|p| vec![set.to_string(), num(p.threshold), num(p.rejection_rate), num(p.custom_accuracy)])
        .collect()
}

pub fn curve_series(name: &str, c: &RejectionCurve, color: &str) -> Series {
    Series {
        name: name.into(),
        points: c.points.iter().map(|p| (p.rejection_rate, p.custom_accuracy)).collect(),
        line: true,
        color: color.into(),
    }
}

/// Rejection curves of validation and test, as CSV and SVG.
pub fn sweep(s: &Stage) -> Result<(RejectionCurve, RejectionCurve)> {
    let (curves, summary) = load_curves(s)?;
    let (v, t) = curves;
    let mut rows = curve_rows("val", &v);
    rows.extend(curve_rows("test", &t));
    write_csv(&s.path(artifact::CURVE_CSV), &CURVE_COLUMNS, &rows)?;
    Chart {
        title: format!("Rejection curve, {}", s.loaded.config.scenario.name()),
        x_label: "rejection rate".into(),
        y_label: "custom accuracy".into(),
        log_x: false,
        series: vec![curve_series("validation", &v, PALETTE[0]), curve_series("test", &t, PALETTE[1])],
        mark: Some((summary.chosen.rejection_rate, summary.chosen.custom_accuracy, "chosen on validation".into())),
    }
    .save(&s.path(artifact::CURVE_SVG))?;
    Ok((v, t))
}

fn load_curves(s: &Stage) -> Result<((RejectionCurve, RejectionCurve), EvaluationSummary)> {
    let path = s.need(artifact::EVALUATION, "evaluate")?;
    let rows: Vec<EvalRow> = read_records(&path)?;
    let summary: EvaluationSummary = require(&s.path(artifact::EVALUATION_SUMMARY), "evaluate")?;
    let of = |set: &str| -> Result<RejectionCurve> { curve_of(&rows.iter().filter(|r| r.set == set).collect::<Vec<_>>()) };
    Ok(((of("val")?, of("test")?), summary))
}

pub const REPORT_SCHEMA: &str = "ecgfilter-report";
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Fields every report starts with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub schema: String,
    pub schema_version: u32,
    pub kind: String,
    pub name: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub code_version: String,
}

impl Provenance {
    pub fn new(loaded: &Loaded, kind: &str) -> Self {
        let c = &loaded.config;
        Self {
            schema: REPORT_SCHEMA.into(),
            schema_version: REPORT_SCHEMA_VERSION,
            kind: kind.into(),
            name: c.name.clone(),
            config_hash: c.hash(),
            master_seed: c.master_seed,
            code_version: CODE_VERSION.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveEnds {
    pub first: Operating,
    pub last: Operating,
}

fn ends(c: &RejectionCurve) -> CurveEnds {
    let op = |p: &ecgfilter_core::metrics::RejectionPoint| Operating {
        threshold: p.threshold,
        rejection_rate: p.rejection_rate,
        custom_accuracy: p.custom_accuracy,
    };
    CurveEnds {
        first: op(&c.points[0]),
        last: op(&c.points[c.points.len() - 1]),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub scenario: ScenarioKind,
    pub correctness: ecgfilter_core::metrics::Correctness,
    pub class_threshold: f64,
    pub filter: Option<TrainSummary>,
    pub classifier: Option<TrainSummary>,
    pub calibration: Option<CalibrationSummary>,
    pub injection: Option<InjectionSummary>,
    pub nas_best: Option<NasBest>,
    pub evaluation: EvaluationSummary,
    pub test_curve: CurveEnds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionSummary {
    pub target_snr_db: f64,
    pub target_source: String,
    pub fraction: f64,
    pub injected_val: usize,
    pub injected_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NasBest {
    pub method: Method,
    pub trials: usize,
    pub trial_id: usize,
    pub param_count: usize,
    pub auc_mean: f64,
    pub auc_std: f64,
}

fn optional<T: serde::de::DeserializeOwned>(p: &Path) -> Result<Option<T>> {
    if p.exists() {
        read_json(p).map(Some)
    } else {
        Ok(None)
    }
}

pub fn report(s: &Stage) -> Result<RunReport> {
    let ((_, t), summary) = load_curves(s)?;
    let c = &s.loaded.config;
    let injection = optional::<InjectionDescriptor>(&s.path(artifact::INJECTION))?.map(|d| InjectionSummary {
        target_snr_db: d.plan.target_snr_db,
        target_source: d.target_source.clone(),
        fraction: d.plan.fraction,
        injected_val: d.injections.iter().filter(|e| e.set == "val").count(),
        injected_test: d.injections.iter().filter(|e| e.set == "test").count(),
    });
    let nas_path = s.path(artifact::NAS);
    let nas_best = if nas_path.exists() {
        let (h, recs) = read_nas_ledger(&nas_path)?;
        best_by_method(&recs).ok().map(|b| NasBest {
            method: h.space.method,
            trials: recs.len(),
            trial_id: b.trial_id,
            param_count: b.param_count,
            auc_mean: b.auc_mean,
            auc_std: b.auc_std,
        })
    } else {
        None
    };
    let rep = RunReport {
        provenance: Provenance::new(s.loaded, "run"),
        scenario: c.scenario,
        correctness: c.report.correctness,
        class_threshold: c.classifier.threshold,
        filter: optional(&s.path(artifact::FILTER_REPORT))?,
        classifier: optional(&s.path(artifact::CLASSIFIER_REPORT))?,
        calibration: optional(&s.path(artifact::CALIBRATION_SUMMARY))?,
        injection,
        nas_best,
        evaluation: summary.clone(),
        test_curve: ends(&t),
    };
    write_json(&s.path(artifact::REPORT), &rep)?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, num);
    let rows = vec![
        vec!["val_auc".into(), opt(summary.val_auc)],
        vec!["test_auc".into(), opt(summary.test_auc)],
        vec!["threshold".into(), num(summary.chosen.threshold)],
        vec!["test_rejection_rate".into(), num(summary.chosen.rejection_rate)],
        vec!["test_classifier_only".into(), num(summary.test_classifier_only)],
        vec!["test_system".into(), num(summary.test_system)],
        vec!["test_optimum_accuracy".into(), num(summary.test_optimum.custom_accuracy)],
        vec!["test_optimum_rejection_rate".into(), num(summary.test_optimum.rejection_rate)],
    ];
    write_csv(&s.path(artifact::REPORT_CSV), &["metric", "value"], &rows)?;
    Ok(rep)
}
