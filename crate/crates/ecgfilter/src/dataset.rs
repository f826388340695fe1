//! From corpora to experiment splits: windowing, scenario construction,
//! noise injection and the replayable split descriptors.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ecgfilter_core::data::{build_ood_scenario, build_quality_split, hold_out_quality_validation, DatasetSplit, ScenarioSpec};
use ecgfilter_core::noise::{inject_noise, noise_at_rate, InjectionPlan, InjectionRecord};
use ecgfilter_core::signal::{
    normalize_instance, resample, segment, EcgWindow, InjectedNoise, Normalization, QualityFlag, RawRecord, Superclass,
    ZscoreStats, WINDOW_LEN, WINDOW_SECONDS,
};
use serde::{Deserialize, Serialize};

use crate::config::{Loaded, ScenarioKind};
use crate::corpus::{corpus_dirs, NOISE_TAG};
use crate::error::{AppError, Result};
use crate::interchange::{load_noise_record, Corpus, MANIFEST};

/// Windows of one corpus in physical units (resampled to 512), next to the
/// native-rate segments they came from.
#[derive(Debug, Clone)]
pub struct Windowed {
    pub windows: Vec<EcgWindow>,
    pub segments: Vec<RawRecord>,
}

pub fn open_corpus(dir: &Path) -> Result<Corpus> {
    if !dir.join(MANIFEST).exists() {
        return Err(crate::ledger::missing(&dir.join(MANIFEST), "synth"));
    }
    Corpus::open(dir)
}

/// Segments every record into 10 s windows and resamples each to 512 points.
pub fn window_corpus(corpus: &Corpus) -> Result<Windowed> {
    let mut out = Windowed {
        windows: Vec::new(),
        segments: Vec::new(),
    };
    for entry in &corpus.manifest.records {
        let rec = corpus.load(entry)?;
        let labels: BTreeSet<Superclass> = entry.superclasses.clone().unwrap_or_default();
        let flag = if entry.quality.is_some() {
            QualityFlag::Unknown
        } else {
            QualityFlag::Clean
        };
        for (k, seg) in segment(&rec, WINDOW_SECONDS).into_iter().enumerate() {
            let data = resample(&seg.signal, WINDOW_LEN)?;
            out.windows.push(EcgWindow::new(data, seg.channels(), &entry.record_id, k, labels.clone(), flag)?);
            out.segments.push(seg);
        }
    }
    Ok(out)
}

/// A built scenario: normalized split plus the raw segment of each
/// validation and test window, keyed by window id.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub kind: ScenarioKind,
    pub split: DatasetSplit,
    pub raw: BTreeMap<String, RawRecord>,
    pub channels: usize,
    /// In-distribution classes in classifier output order.
    pub classes: Vec<Superclass>,
}

fn normalize_split(split: &mut DatasetSplit, normalization: Normalization) -> Result<()> {
    split.normalization = Some(normalization);
    if normalization == Normalization::Zscore {
        let channels = split.train.first().map_or(1, |w| w.channels);
        let refs: Vec<&[f64]> = split.train.iter().map(|w| w.data.as_slice()).collect();
        let stats = ZscoreStats::fit(&refs, channels)?;
        for &c in &stats.zero_std_channels {
            split.warnings.push(format!("channel {c} has zero training std; centered only"));
        }
        split.zscore = Some(stats);
    }
    let s = split.clone();
    for w in split.train.iter_mut().chain(split.val.iter_mut()).chain(split.test.iter_mut()) {
        w.data = match normalization {
            Normalization::Instance => normalize_instance(&w.data, w.channels),
            Normalization::Zscore => s.normalize_like_split(&w.data, w.channels),
        };
    }
    Ok(())
}

/// Builds the scenario from the corpora under the data root.
pub fn prepare(loaded: &Loaded, kind: ScenarioKind) -> Result<Prepared> {
    let cfg = &loaded.config;
    let [ldir, qdir, _] = corpus_dirs(&loaded.data_root());
    let seed = cfg.seed(crate::config::stream::SCENARIO);
    let (corpus, split) = match kind {
        ScenarioKind::Ood { ood_class } => {
            let corpus = open_corpus(&ldir)?;
            let w = window_corpus(&corpus)?;
            let spec = ScenarioSpec::new(ood_class, cfg.normalization, seed);
            let split = build_ood_scenario(&corpus.labeled_meta(), &w.windows, &spec)?;
            (w, split)
        }
        ScenarioKind::Quality { val_fraction } => {
            let corpus = open_corpus(&qdir)?;
            let w = window_corpus(&corpus)?;
            let meta = corpus.quality_meta();
            let split = build_quality_split(&meta, &w.windows, WINDOW_SECONDS)?;
            let mut split = hold_out_quality_validation(&meta, &split, val_fraction, seed)?;
            normalize_split(&mut split, cfg.normalization)?;
            (w, split)
        }
    };
    let keep: BTreeSet<String> = split.val.iter().chain(&split.test).map(EcgWindow::id).collect();
    let raw: BTreeMap<String, RawRecord> = corpus
        .windows
        .iter()
        .zip(corpus.segments)
        .filter(|(w, _)| keep.contains(&w.id()))
        .map(|(w, s)| (w.id(), s))
        .collect();
    let channels = split.train.first().map_or(1, |w| w.channels);
    let classes = match kind {
        ScenarioKind::Ood { ood_class } => cfg
            .synth
            .labeled
            .classes
            .iter()
            .copied()
            .filter(|&c| c != ood_class)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
        ScenarioKind::Quality { .. } => Vec::new(),
    };
    Ok(Prepared {
        kind,
        split,
        raw,
        channels,
        classes,
    })
}

pub fn load_noise(loaded: &Loaded) -> Result<RawRecord> {
    let [_, _, ndir] = corpus_dirs(&loaded.data_root());
    if !ndir.join(MANIFEST).exists() {
        return Err(crate::ledger::missing(&ndir.join(MANIFEST), "synth"));
    }
    load_noise_record(&ndir)
}

/// One injected window with everything needed to rebuild it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionEntry {
    pub set: String,
    pub index: usize,
    pub window_id: String,
    pub seed: u64,
    pub record: InjectionRecord,
}

fn to_window(prepared: &Prepared, like: &EcgWindow, noisy: &RawRecord, tag: &InjectedNoise) -> Result<EcgWindow> {
    let data = resample(&noisy.signal, WINDOW_LEN)?;
    let mut w = like.clone();
    w.data = prepared.split.normalize_like_split(&data, like.channels);
    w.injected_noise = Some(tag.clone());
    Ok(w)
}

/// Applies `plan` to the validation and test sets of `prepared`.
pub fn inject(prepared: &Prepared, noise: &RawRecord, plan: &InjectionPlan) -> Result<(DatasetSplit, Vec<InjectionEntry>)> {
    let mut records: BTreeMap<String, InjectionRecord> = BTreeMap::new();
    let tag = InjectedNoise {
        snr_db: plan.target_snr_db,
        noise_source: plan.noise_source.clone(),
    };
    let (split, log) = ecgfilter_core::noise::apply_plan(&prepared.split, plan, |w, seed| {
        let raw = prepared
            .raw
            .get(&w.id())
            .ok_or_else(|| ecgfilter_core::Error::InvalidInput(format!("no raw segment for {}", w.id())))?;
        let (noisy, rec) = inject_noise(raw, noise, plan.target_snr_db, seed)?;
        records.insert(w.id(), rec);
        to_window(prepared, w, &noisy, &tag).map_err(|e| match e {
            AppError::Core(c) => c,
            other => ecgfilter_core::Error::InvalidInput(other.to_string()),
        })
    })?;
    let entries = log
        .into_iter()
        .map(|p| InjectionEntry {
            record: records[&p.window_id].clone(),
            set: p.set,
            index: p.index,
            window_id: p.window_id,
            seed: p.seed,
        })
        .collect();
    Ok((split, entries))
}

/// Rebuilds an injected split from its descriptor without re-estimating gains.
pub fn replay(prepared: &Prepared, noise: &RawRecord, desc: &InjectionDescriptor) -> Result<DatasetSplit> {
    let (plan, entries) = (&desc.plan, &desc.injections);
    let mut split = prepared.split.clone();
    split.warnings.extend(desc.warnings.iter().cloned());
    let tag = InjectedNoise {
        snr_db: plan.target_snr_db,
        noise_source: plan.noise_source.clone(),
    };
    for e in entries {
        let raw = prepared
            .raw
            .get(&e.window_id)
            .ok_or_else(|| AppError::Data(format!("injection log names unknown window {}", e.window_id)))?;
        let ns = noise_at_rate(noise, raw.fs)?;
        let n = raw.len();
        let mut noisy = raw.clone();
        for (c, x) in noisy.signal.iter_mut().enumerate() {
            let src = &ns[c % ns.len()];
            let g = *e
                .record
                .gains
                .get(c)
                .ok_or_else(|| AppError::Data(format!("{}: missing gain for channel {c}", e.window_id)))?;
            let seg = src
                .get(e.record.offset..e.record.offset + n)
                .ok_or_else(|| AppError::Data(format!("{}: noise offset out of range", e.window_id)))?;
            for (v, s) in x.iter_mut().zip(seg) {
                *v += g * s;
            }
        }
        let set = match e.set.as_str() {
            "val" => &mut split.val,
            "test" => &mut split.test,
            other => return Err(AppError::Data(format!("injection log names unknown set {other}"))),
        };
        let like = set
            .get(e.index)
            .filter(|w| w.id() == e.window_id)
            .ok_or_else(|| AppError::Data(format!("{} is not at {}[{}]", e.window_id, e.set, e.index)))?
            .clone();
        set[e.index] = to_window(prepared, &like, &noisy, &tag)?;
    }
    Ok(split)
}

pub fn injection_plan(loaded: &Loaded, target_snr_db: f64) -> InjectionPlan {
    let c = &loaded.config;
    InjectionPlan {
        target_snr_db,
        fraction: c.injection.fraction,
        stratified: c.injection.stratified,
        noise_source: NOISE_TAG.to_string(),
        seed: c.seed(crate::config::stream::INJECT),
    }
}

pub const SPLIT_FORMAT: &str = "ecgfilter-split";
pub const INJECTION_FORMAT: &str = "ecgfilter-injection";
pub const DESCRIPTOR_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRow {
    pub window_id: String,
    pub labels: BTreeSet<Superclass>,
    pub quality: QualityFlag,
    pub ood: bool,
}

/// Window ids per set with masks; enough to check that a rebuilt split is
/// the one a later stage expects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDescriptor {
    pub format: String,
    pub version: u32,
    pub scenario: ScenarioKind,
    pub normalization: Option<Normalization>,
    pub classes: Vec<Superclass>,
    pub train: Vec<String>,
    pub val: Vec<WindowRow>,
    pub test: Vec<WindowRow>,
    pub zscore: Option<ZscoreStats>,
    pub warnings: Vec<String>,
}

fn rows(windows: &[EcgWindow], ood: &[bool]) -> Vec<WindowRow> {
    windows
        .iter()
        .zip(ood)
        .map(|(w, &o)| WindowRow {
            window_id: w.id(),
            labels: w.labels().clone(),
            quality: w.quality_flag(),
            ood: o,
        })
        .collect()
}

impl SplitDescriptor {
    pub fn of(p: &Prepared) -> Self {
        let s = &p.split;
        Self {
            format: SPLIT_FORMAT.into(),
            version: DESCRIPTOR_VERSION,
            scenario: p.kind,
            normalization: s.normalization,
            classes: p.classes.clone(),
            train: s.train.iter().map(EcgWindow::id).collect(),
            val: rows(&s.val, &s.val_ood),
            test: rows(&s.test, &s.test_ood),
            zscore: s.zscore.clone(),
            warnings: s.warnings.clone(),
        }
    }

    /// Fails unless `p` rebuilds to exactly this descriptor.
    pub fn check(&self, p: &Prepared, path: &Path) -> Result<()> {
        if self.version != DESCRIPTOR_VERSION {
            return Err(AppError::UnsupportedVersion {
                path: path.to_path_buf(),
                found: self.version,
                supported: DESCRIPTOR_VERSION,
            });
        }
        if *self != Self::of(p) {
            return Err(AppError::Data(format!(
                "{} no longer matches the corpus and config; rerun `scenario`",
                path.display()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionDescriptor {
    pub format: String,
    pub version: u32,
    pub plan: InjectionPlan,
    /// Where the target SNR came from: `config` or `calibration`.
    pub target_source: String,
    pub injections: Vec<InjectionEntry>,
    pub warnings: Vec<String>,
}

impl InjectionDescriptor {
    /// `before`/`after` are the split without and with injection; warnings
    /// added by the injection are kept for replay.
    pub fn new(plan: InjectionPlan, target_source: &str, injections: Vec<InjectionEntry>, before: &DatasetSplit, after: &DatasetSplit) -> Self {
        Self {
            format: INJECTION_FORMAT.into(),
            version: DESCRIPTOR_VERSION,
            plan,
            target_source: target_source.into(),
            injections,
            warnings: after.warnings[before.warnings.len().min(after.warnings.len())..].to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{LabeledCorpusConfig, NoiseCorpusConfig, QualityCorpusConfig, RunConfig};

    fn setup(dir: &Path) -> Loaded {
        let mut c = RunConfig::default();
        c.synth.labeled = LabeledCorpusConfig {
            patients: 120,
            ..LabeledCorpusConfig::default()
        };
        c.synth.quality = QualityCorpusConfig {
            patients: 6,
            duration_s: 120.0,
            ..QualityCorpusConfig::default()
        };
        c.synth.noise = NoiseCorpusConfig {
            duration_s: 60.0,
            ..NoiseCorpusConfig::default()
        };
        let l = Loaded::new(c, dir).unwrap();
        let s = &l.config.synth;
        crate::corpus::synthesize(&l.data_root(), &s.labeled, &s.quality, &s.noise, 1).unwrap();
        l
    }

    #[test]
    fn scenarios_hold_their_invariants_and_injection_replays() {
        let d = tempfile::tempdir().unwrap();
        let l = setup(d.path());
        let p = prepare(&l, ScenarioKind::Ood { ood_class: Superclass::Hyp }).unwrap();
        assert!(p.split.train.iter().all(|w| !w.labels().contains(&Superclass::Hyp)));
        assert!(p.split.test_ood.iter().any(|&o| o));
        assert_eq!(p.classes.len(), 4);
        assert_eq!(p.raw.len(), p.split.val.len() + p.split.test.len());
        let desc = SplitDescriptor::of(&p);
        desc.check(&prepare(&l, p.kind).unwrap(), Path::new("split.json")).unwrap();

        let noise = load_noise(&l).unwrap();
        let plan = injection_plan(&l, 0.0);
        let (inj, log) = inject(&p, &noise, &plan).unwrap();
        let n_id = p.split.test_ood.iter().filter(|&&o| !o).count();
        let n_ood = p.split.test_ood.len() - n_id;
        let injected = inj.test.iter().filter(|w| w.injected_noise.is_some()).count();
        assert_eq!(injected, plan.count(n_id) + plan.count(n_ood));
        let desc = InjectionDescriptor::new(plan.clone(), "config", log, &p.split, &inj);
        let again = replay(&p, &noise, &desc).unwrap();
        assert_eq!(again.warnings, inj.warnings);
        for (a, b) in again.test.iter().zip(&inj.test) {
            assert_eq!(a.data, b.data, "{}", a.id());
        }
        assert_eq!(again, inj);

        let q = prepare(&l, ScenarioKind::Quality { val_fraction: 0.3 }).unwrap();
        assert!(!q.split.val.is_empty() && !q.split.test.is_empty());
        assert!(q.split.test_ood.iter().any(|&b| b));
        let patient = |w: &EcgWindow| w.source_record.clone();
        let train: BTreeSet<String> = q.split.train.iter().map(patient).collect();
        assert!(q.split.val.iter().chain(&q.split.test).all(|w| !train.contains(&patient(w))));
    }

    #[test]
    fn missing_corpus_names_synth() {
        let d = tempfile::tempdir().unwrap();
        let l = Loaded::new(RunConfig::default(), d.path()).unwrap();
        let e = prepare(&l, ScenarioKind::default()).unwrap_err();
        assert!(e.to_string().contains("synth"), "{e}");
    }
}
