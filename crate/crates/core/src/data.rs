//! Experiment datasets: OOD-superclass hold-out scenarios and patient-wise
//! signal-quality splits.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{normalize_instance, EcgWindow, Normalization, QualityFlag, Superclass, ZscoreStats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRecordMeta {
    pub record_id: String,
    pub patient_id: String,
    pub fold: u8,
    pub superclasses: BTreeSet<Superclass>,
}

impl LabeledRecordMeta {
    pub fn validate(&self) -> Result<()> {
        if !(1..=10).contains(&self.fold) {
            return Err(Error::InvalidInput(format!("{}: fold {} outside 1..=10", self.record_id, self.fold)));
        }
        if self.superclasses.is_empty() {
            return Err(Error::InvalidInput(format!("{}: no superclass labels", self.record_id)));
        }
        Ok(())
    }
}

/// Annotated stretch `[start_s, end_s)` of quality class 1, 2 or 3.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityInterval {
    pub start_s: f64,
    pub end_s: f64,
    pub class: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityMeta {
    pub record_id: String,
    pub patient_id: String,
    pub annotations: Vec<QualityInterval>,
}

impl QualityMeta {
    /// Sorted, non-overlapping, contiguous intervals starting at 0 with classes 1-3.
    pub fn validate(&self) -> Result<()> {
        let mut t = 0.0;
        for a in &self.annotations {
            if !(1..=3).contains(&a.class) || !(a.end_s > a.start_s) || (a.start_s - t).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "{}: annotations must be contiguous, sorted, classes 1-3 (at {} s)",
                    self.record_id, a.start_s
                )));
            }
            t = a.end_s;
        }
        Ok(())
    }

    pub fn class3_seconds(&self) -> f64 {
        self.annotations
            .iter()
            .filter(|a| a.class == 3)
            .map(|a| a.end_s - a.start_s)
            .sum()
    }

    /// Total Class-3 time inside `[start, end)`.
    pub fn class3_overlap(&self, start: f64, end: f64) -> f64 {
        self.annotations
            .iter()
            .filter(|a| a.class == 3)
            .map(|a| (a.end_s.min(end) - a.start_s.max(start)).max(0.0))
            .sum()
    }
}

/// Class-3 overlap at or above this marks a window unanalyzable.
pub const UNANALYZABLE_SECONDS: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub ood_class: Superclass,
    pub train_folds: BTreeSet<u8>,
    pub val_fold: u8,
    pub test_fold: u8,
    pub normalization: Normalization,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(ood_class: Superclass, normalization: Normalization, seed: u64) -> Self {
        Self {
            ood_class,
            train_folds: (1..=8).collect(),
            val_fold: 9,
            test_fold: 10,
            normalization,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<EcgWindow>,
    pub val: Vec<EcgWindow>,
    pub test: Vec<EcgWindow>,
    pub val_ood: Vec<bool>,
    pub test_ood: Vec<bool>,
    pub ood_class: Option<Superclass>,
    pub normalization: Option<Normalization>,
    /// Training-split statistics when z-scoring.
    pub zscore: Option<ZscoreStats>,
    pub warnings: Vec<String>,
}

impl DatasetSplit {
    /// Should a window of val/test be rejected by a perfect filter?
    pub fn should_reject(window: &EcgWindow, ood: bool) -> bool {
        ood || window.injected_noise.is_some() || window.quality_flag() == QualityFlag::Unanalyzable
    }

    /// Normalizes a window that was not part of the split when it was built
    /// (e.g. a noise-injected replacement) exactly like the split's windows.
    pub fn normalize_like_split(&self, data: &[f64], channels: usize) -> Vec<f64> {
        match (&self.normalization, &self.zscore) {
            (Some(Normalization::Zscore), Some(stats)) => stats.apply(data),
            (Some(Normalization::Instance), _) => normalize_instance(data, channels),
            _ => data.to_vec(),
        }
    }
}

fn renormalize(w: &EcgWindow, data: Vec<f64>) -> EcgWindow {
    let mut out = w.clone();
    out.data = data;
    out
}

/// Folds 1-8 minus every window carrying the OOD class go to train, fold 9
/// to val and fold 10 to test. Windows arrive in physical units and leave
/// normalized per `spec.normalization` (z-score statistics from train only).
pub fn build_ood_scenario(meta: &[LabeledRecordMeta], windows: &[EcgWindow], spec: &ScenarioSpec) -> Result<DatasetSplit> {
    let by_id: BTreeMap<&str, &LabeledRecordMeta> = meta.iter().map(|m| (m.record_id.as_str(), m)).collect();
    for m in meta {
        m.validate()?;
    }
    let mut split = DatasetSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        val_ood: Vec::new(),
        test_ood: Vec::new(),
        ood_class: Some(spec.ood_class),
        normalization: Some(spec.normalization),
        zscore: None,
        warnings: Vec::new(),
    };
    for w in windows {
        let m = by_id
            .get(w.source_record.as_str())
            .ok_or_else(|| Error::InvalidInput(format!("window {} has no record metadata", w.id())))?;
        let ood = m.superclasses.contains(&spec.ood_class);
        if spec.train_folds.contains(&m.fold) {
            if !ood {
                split.train.push(w.clone());
            }
        } else if m.fold == spec.val_fold {
            split.val.push(w.clone());
            split.val_ood.push(ood);
        } else if m.fold == spec.test_fold {
            split.test.push(w.clone());
            split.test_ood.push(ood);
        }
    }
    if split.train.is_empty() {
        return Err(Error::Config(format!(
            "no training windows left after removing {}",
            spec.ood_class.name()
        )));
    }
    for (name, mask) in [("validation", &split.val_ood), ("test", &split.test_ood)] {
        if !mask.iter().any(|&b| b) {
            split.warnings.push(format!("OOD class {} absent from {name} set", spec.ood_class.name()));
        }
    }
    let channels = split.train[0].channels;
    if spec.normalization == Normalization::Zscore {
        let refs: Vec<&[f64]> = split.train.iter().map(|w| w.data.as_slice()).collect();
        let stats = ZscoreStats::fit(&refs, channels)?;
        for &c in &stats.zero_std_channels {
            split.warnings.push(format!("channel {c} has zero training std; centered only"));
        }
        split.zscore = Some(stats);
    }
    let norm = |s: &DatasetSplit, v: &[EcgWindow]| -> Vec<EcgWindow> {
        v.iter()
            .map(|w| renormalize(w, s.normalize_like_split(&w.data, w.channels)))
            .collect()
    };
    split.train = norm(&split, &split.train);
    split.val = norm(&split, &split.val);
    split.test = norm(&split, &split.test);
    Ok(split)
}

/// Patients without any Class-3 time train; patients with some are tested.
/// A test window is UNANALYZABLE when at least one second of it overlaps
/// Class-3 annotations (summed over fragments), else CLEAN. Windows keep
/// their data as given; `window_s` maps `window_index` to time.
pub fn build_quality_split(meta: &[QualityMeta], windows: &[EcgWindow], window_s: f64) -> Result<DatasetSplit> {
    let mut by_id: BTreeMap<&str, &QualityMeta> = BTreeMap::new();
    let mut class3_by_patient: BTreeMap<&str, f64> = BTreeMap::new();
    for m in meta {
        m.validate()?;
        by_id.insert(m.record_id.as_str(), m);
        *class3_by_patient.entry(m.patient_id.as_str()).or_default() += m.class3_seconds();
    }
    let mut split = DatasetSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        val_ood: Vec::new(),
        test_ood: Vec::new(),
        ood_class: None,
        normalization: None,
        zscore: None,
        warnings: Vec::new(),
    };
    let mut train_patients = BTreeSet::new();
    let mut test_patients = BTreeSet::new();
    for w in windows {
        let m = by_id
            .get(w.source_record.as_str())
            .ok_or_else(|| Error::InvalidInput(format!("window {} has no quality metadata", w.id())))?;
        let start = w.window_index as f64 * window_s;
        if class3_by_patient[m.patient_id.as_str()] > 0.0 {
            let bad = m.class3_overlap(start, start + window_s) >= UNANALYZABLE_SECONDS - 1e-9;
            let flag = if bad { QualityFlag::Unanalyzable } else { QualityFlag::Clean };
            split.test.push(w.with_quality(flag));
            split.test_ood.push(bad);
            test_patients.insert(m.patient_id.as_str());
        } else {
            split.train.push(w.with_quality(QualityFlag::Clean));
            train_patients.insert(m.patient_id.as_str());
        }
    }
    if let Some(p) = train_patients.intersection(&test_patients).next() {
        return Err(Error::InvalidInput(format!("patient {p} appears in both train and test")));
    }
    Ok(split)
}

/// Moves a seeded, patient-wise share of the quality split's test patients
/// into validation, so model selection never sees test patients.
pub fn hold_out_quality_validation(meta: &[QualityMeta], split: &DatasetSplit, fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Config(format!("validation fraction {fraction} outside [0, 1)")));
    }
    let patient: BTreeMap<&str, &str> = meta
        .iter()
        .map(|m| (m.record_id.as_str(), m.patient_id.as_str()))
        .collect();
    let of = |w: &EcgWindow| -> Result<&str> {
        patient
            .get(w.source_record.as_str())
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("window {} has no quality metadata", w.id())))
    };
    let mut patients = BTreeSet::new();
    for w in &split.test {
        patients.insert(of(w)?);
    }
    let patients: Vec<&str> = patients.into_iter().collect();
    let mut k = libm::round(fraction * patients.len() as f64) as usize;
    if fraction > 0.0 && patients.len() >= 2 {
        k = k.clamp(1, patients.len() - 1);
    }
    let mut r = crate::rng::seeded(crate::rng::derive_seed(seed, 0x5155_414c));
    let order = crate::rng::permutation(&mut r, patients.len());
    let val_patients: BTreeSet<&str> = order[..k].iter().map(|&i| patients[i]).collect();
    let mut out = split.clone();
    out.test.clear();
    out.test_ood.clear();
    out.val.clear();
    out.val_ood.clear();
    for (w, &bad) in split.test.iter().zip(&split.test_ood) {
        if val_patients.contains(of(w)?) {
            out.val.push(w.clone());
            out.val_ood.push(bad);
        } else {
            out.test.push(w.clone());
            out.test_ood.push(bad);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn meta(id: &str, fold: u8, classes: &[Superclass]) -> LabeledRecordMeta {
        LabeledRecordMeta {
            record_id: id.to_string(),
            patient_id: id.to_string(),
            fold,
            superclasses: classes.iter().copied().collect(),
        }
    }

    fn window(id: &str, idx: usize, labels: &[Superclass]) -> EcgWindow {
        let data = (0..512).map(|i| (i % 7) as f64 + idx as f64).collect();
        EcgWindow::new(data, 1, id, idx, labels.iter().copied().collect(), QualityFlag::Unknown).unwrap()
    }

    #[test]
    fn hyp_scenario_enumeration() {
        use Superclass::*;
        let metas = vec![
            meta("a", 1, &[Hyp]),
            meta("b", 2, &[Norm]),
            meta("c", 9, &[Hyp]),
            meta("d", 10, &[Mi, Hyp]),
            meta("e", 10, &[Norm]),
        ];
        let ws: Vec<EcgWindow> = metas.iter().map(|m| window(&m.record_id, 0, &[])).collect();
        let s = build_ood_scenario(&metas, &ws, &ScenarioSpec::new(Hyp, Normalization::Instance, 0)).unwrap();
        assert_eq!(s.train.len(), 1);
        assert_eq!(s.train[0].source_record, "b");
        assert_eq!(s.val_ood, vec![true]);
        assert_eq!(s.test_ood, vec![true, false]);
        assert!(s.warnings.is_empty());
    }

    #[test]
    fn co_occurrence_is_excluded_and_missing_class_warns() {
        use Superclass::*;
        let metas = vec![meta("x", 3, &[Norm, Sttc]), meta("y", 4, &[Norm]), meta("z", 9, &[Norm])];
        let ws: Vec<EcgWindow> = metas.iter().map(|m| window(&m.record_id, 0, &[])).collect();
        let s = build_ood_scenario(&metas, &ws, &ScenarioSpec::new(Sttc, Normalization::Zscore, 0)).unwrap();
        assert!(s.train.iter().all(|w| w.source_record != "x"));
        let s = build_ood_scenario(&metas, &ws, &ScenarioSpec::new(Mi, Normalization::Zscore, 0)).unwrap();
        assert_eq!(s.val_ood, vec![false]);
        assert_eq!(s.warnings.len(), 2);
        let only_ood = vec![meta("x", 3, &[Mi])];
        let ws = vec![window("x", 0, &[])];
        assert!(matches!(
            build_ood_scenario(&only_ood, &ws, &ScenarioSpec::new(Mi, Normalization::Zscore, 0)),
            Err(Error::Config(_))
        ));
    }

    fn qmeta(id: &str, patient: &str, ann: &[(f64, f64, u8)]) -> QualityMeta {
        QualityMeta {
            record_id: id.to_string(),
            patient_id: patient.to_string(),
            annotations: ann
                .iter()
                .map(|&(s, e, c)| QualityInterval {
                    start_s: s,
                    end_s: e,
                    class: c,
                })
                .collect(),
        }
    }

    #[test]
    fn quality_rule_boundaries() {
        let metas = vec![
            qmeta("r1", "p1", &[(0.0, 4.2, 1), (4.2, 5.1, 3), (5.1, 30.0, 2)]),
            qmeta("r2", "p2", &[(0.0, 4.0, 1), (4.0, 5.0, 3), (5.0, 20.0, 1)]),
            qmeta("r3", "p3", &[(0.0, 12.0, 1), (12.0, 20.0, 2)]),
        ];
        let ws = vec![window("r1", 0, &[]), window("r1", 1, &[]), window("r2", 0, &[]), window("r3", 0, &[]), window("r3", 1, &[])];
        let s = build_quality_split(&metas, &ws, 10.0).unwrap();
        assert_eq!(s.train.len(), 2);
        assert!(s.train.iter().all(|w| w.source_record == "r3"));
        let flags: Vec<QualityFlag> = s.test.iter().map(|w| w.quality_flag()).collect();
        assert_eq!(flags, vec![QualityFlag::Clean, QualityFlag::Clean, QualityFlag::Unanalyzable]);
        assert_eq!(s.test_ood, vec![false, false, true]);
    }

    #[test]
    fn validation_hold_out_is_patient_wise() {
        let metas: Vec<QualityMeta> = (0..6)
            .map(|i| qmeta(&format!("r{i}"), &format!("p{}", i / 2), &[(0.0, 4.0, 1), (4.0, 5.5, 3), (5.5, 20.0, 1)]))
            .collect();
        let ws: Vec<EcgWindow> = (0..6).flat_map(|i| [window(&format!("r{i}"), 0, &[]), window(&format!("r{i}"), 1, &[])]).collect();
        let s = build_quality_split(&metas, &ws, 10.0).unwrap();
        let h = hold_out_quality_validation(&metas, &s, 0.3, 1).unwrap();
        let pat = |w: &EcgWindow| metas.iter().find(|m| m.record_id == w.source_record).unwrap().patient_id.clone();
        let vp: BTreeSet<String> = h.val.iter().map(pat).collect();
        let tp: BTreeSet<String> = h.test.iter().map(pat).collect();
        assert_eq!(vp.len(), 1);
        assert_eq!(tp.len(), 2);
        assert!(vp.is_disjoint(&tp));
        assert_eq!(h.val.len() + h.test.len(), s.test.len());
        assert_eq!(h.val_ood.iter().filter(|&&b| b).count(), 2);
        assert_eq!(h, hold_out_quality_validation(&metas, &s, 0.3, 1).unwrap());
    }

    #[test]
    fn fragmented_overlap_counts_in_total() {
        let m = qmeta("r", "p", &[(0.0, 2.0, 1), (2.0, 2.5, 3), (2.5, 3.0, 1), (3.0, 3.5, 3), (3.5, 10.0, 1)]);
        assert!((m.class3_overlap(0.0, 10.0) - 1.0).abs() < 1e-12);
        assert!(qmeta("r", "p", &[(0.0, 2.0, 1), (3.0, 4.0, 1)]).validate().is_err());
        assert!(qmeta("r", "p", &[(0.0, 2.0, 4)]).validate().is_err());
    }
}
