//! The diagnostic classifier and the filter-then-classify system.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::data::DatasetSplit;
use crate::error::{Error, Result};
use crate::metrics::{self, Correctness, Outcome};
use crate::nn::graph::sigmoid;
use crate::nn::models::Network;
use crate::nn::{
    train as fit, Architecture, Batch, Checkpoint, Dataset, Graph, NetworkSpec, Objective, TrainConfig, TrainReport, Var,
};
use crate::rng::SeededRng;
use crate::signal::{EcgWindow, Superclass};
use crate::uad::{self, instantiate, map_batches, meta, restore, MethodState};

/// Per-class decision threshold on the sigmoid output.
pub const DEFAULT_CLASS_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub spec: NetworkSpec,
    /// In-distribution classes, in output order.
    pub classes: Vec<Superclass>,
    pub threshold: f64,
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        let Architecture::Resnet1dClassifier { classes, .. } = &self.spec.arch else {
            return Err(Error::Config("classifier needs a RESNET1D_CLASSIFIER spec".into()));
        };
        if *classes != self.classes.len() {
            return Err(Error::Config(format!(
                "classifier head has {classes} outputs for {} classes",
                self.classes.len()
            )));
        }
        let distinct: BTreeSet<_> = self.classes.iter().collect();
        if distinct.len() != self.classes.len() || self.classes.is_empty() {
            return Err(Error::Config("classifier classes must be distinct and non-empty".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config("class threshold must lie in (0, 1)".into()));
        }
        self.spec.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub train: TrainReport,
    /// Mean one-vs-rest AUC over classes present both ways in validation.
    pub val_macro_auc: Option<f64>,
}

pub fn multi_hot(labels: &BTreeSet<Superclass>, classes: &[Superclass]) -> Vec<f64> {
    classes.iter().map(|c| if labels.contains(c) { 1.0 } else { 0.0 }).collect()
}

struct BceObjective<'a> {
    net: &'a Network,
}

impl Objective for BceObjective<'_> {
    fn loss(&self, g: &mut Graph, params: &[Var], batch: &Batch, _rng: &mut SeededRng) -> Var {
        let Network::ResNet(net) = self.net else {
            unreachable!("checked by the config")
        };
        let x = g.input(batch.x.clone());
        let z = net.forward(g, params, x);
        let y = g.input(batch.y.clone().expect("classifier batches carry targets"));
        // log(1 + e^z) - y z, the stable form of binary cross-entropy on logits
        let sp = g.softplus(z);
        let yz = g.mul(y, z);
        let l = g.sub(sp, yz);
        g.mean(l)
    }
}

fn check_in_distribution(windows: &[&EcgWindow], classes: &[Superclass], set: &str) -> Result<()> {
    for w in windows {
        if let Some(c) = w.labels().iter().find(|c| !classes.contains(c)) {
            return Err(Error::InvalidInput(format!(
                "{set} window {} carries out-of-distribution class {}",
                w.id(),
                c.name()
            )));
        }
    }
    Ok(())
}

/// Multilabel training with binary cross-entropy. Every training and
/// validation window must only carry labels from `cfg.classes`.
pub fn train_classifier(
    cfg: &ClassifierConfig,
    train: &[&EcgWindow],
    val: &[&EcgWindow],
    tc: &TrainConfig,
) -> Result<(Checkpoint, ClassifierReport)> {
    cfg.validate()?;
    check_in_distribution(train, &cfg.classes, "training")?;
    check_in_distribution(val, &cfg.classes, "validation")?;
    let spec = &cfg.spec;
    let inputs = |v: &[&EcgWindow]| -> Vec<Vec<f64>> { v.iter().map(|w| w.data.clone()).collect() };
    let (tx, vx) = (inputs(train), inputs(val));
    let tr: Vec<&[f64]> = tx.iter().map(Vec::as_slice).collect();
    let vr: Vec<&[f64]> = vx.iter().map(Vec::as_slice).collect();
    uad::check_windows(&tr, spec)?;
    uad::check_windows(&vr, spec)?;
    let ty: Vec<Vec<f64>> = train.iter().map(|w| multi_hot(w.labels(), &cfg.classes)).collect();
    let vy: Vec<Vec<f64>> = val.iter().map(|w| multi_hot(w.labels(), &cfg.classes)).collect();
    let mut td = Dataset::new(tr, spec.in_channels, spec.length);
    td.targets = Some(ty.iter().map(Vec::as_slice).collect());
    let mut vd = Dataset::new(vr, spec.in_channels, spec.length);
    vd.targets = Some(vy.iter().map(Vec::as_slice).collect());

    let (net, mut store) = instantiate(spec, tc.seed)?;
    let obj = BceObjective { net: &net };
    let report = fit(&mut store, &obj, &td, Some(&vd), tc)?;
    let state = MethodState::Classifier {
        classes: cfg.classes.clone(),
        threshold: cfg.threshold,
    };
    let ckpt = Checkpoint::from_store(spec.clone(), &store, meta(tc, &report), state);
    let val_macro_auc = if val.is_empty() {
        None
    } else {
        macro_auc(&predict_proba(&ckpt, val)?, &vy)
    };
    Ok((ckpt, ClassifierReport {
        train: report,
        val_macro_auc,
    }))
}

/// Trains on the split's training windows, validating on its clean
/// in-distribution validation windows.
pub fn train_classifier_on_split(
    cfg: &ClassifierConfig,
    split: &DatasetSplit,
    tc: &TrainConfig,
) -> Result<(Checkpoint, ClassifierReport)> {
    let train: Vec<&EcgWindow> = split.train.iter().collect();
    let val: Vec<&EcgWindow> = split
        .val
        .iter()
        .zip(&split.val_ood)
        .filter(|(w, &ood)| !DatasetSplit::should_reject(w, ood))
        .map(|(w, _)| w)
        .collect();
    train_classifier(cfg, &train, &val, tc)
}

/// Mean over classes of the one-vs-rest AUC, skipping classes that are
/// all-positive or all-negative. `None` when no class qualifies.
pub fn macro_auc(probs: &[Vec<f64>], targets: &[Vec<f64>]) -> Option<f64> {
    let k = targets.first()?.len();
    let mut aucs = Vec::new();
    for c in 0..k {
        let s: Vec<f64> = probs.iter().map(|p| p[c]).collect();
        let y: Vec<bool> = targets.iter().map(|t| t[c] > 0.5).collect();
        if let Ok(a) = metrics::auc(&s, &y) {
            aucs.push(a);
        }
    }
    (!aucs.is_empty()).then(|| crate::stats::mean(&aucs))
}

fn classifier_state(ckpt: &Checkpoint) -> Result<(&[Superclass], f64)> {
    match &ckpt.method {
        MethodState::Classifier { classes, threshold } => Ok((classes, *threshold)),
        _ => Err(Error::Config("not a classifier checkpoint".into())),
    }
}

/// Per-class sigmoid probabilities.
pub fn predict_proba(ckpt: &Checkpoint, windows: &[&EcgWindow]) -> Result<Vec<Vec<f64>>> {
    classifier_state(ckpt)?;
    let (net, store) = restore(ckpt)?;
    let Network::ResNet(net) = net else {
        return Err(Error::Config("classifier checkpoint without a residual network".into()));
    };
    let spec = &ckpt.spec;
    let data: Vec<&[f64]> = windows.iter().map(|w| w.data.as_slice()).collect();
    uad::check_windows(&data, spec)?;
    Ok(map_batches(&data, spec.in_channels, spec.length, &store, |g, p, x, _| {
        let z = net.forward(g, p, x);
        let k = g.shape(z)[1];
        g.value(z).chunks(k).map(|row| row.iter().map(|&v| sigmoid(v)).collect()).collect()
    }))
}

/// Classes whose probability reaches the checkpoint's threshold.
pub fn classify(ckpt: &Checkpoint, windows: &[&EcgWindow]) -> Result<Vec<BTreeSet<Superclass>>> {
    let (classes, threshold) = classifier_state(ckpt)?;
    Ok(predict_proba(ckpt, windows)?
        .iter()
        .map(|p| {
            classes
                .iter()
                .zip(p)
                .filter(|(_, &v)| v >= threshold)
                .map(|(c, _)| *c)
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemVerdict {
    pub window_id: String,
    pub filter_score: f64,
    pub rejected: bool,
    /// Empty when rejected.
    pub predicted_labels: BTreeSet<Superclass>,
    pub true_labels: BTreeSet<Superclass>,
    pub should_reject: bool,
    /// What the classifier alone would have achieved on this window.
    pub classifier_correct: bool,
}

impl SystemVerdict {
    pub fn outcome(&self) -> Outcome {
        Outcome {
            should_reject: self.should_reject,
            rejected: self.rejected,
            classified_correctly: self.classifier_correct,
        }
    }
}

/// Combines filter scores and classifier predictions: a window is rejected
/// iff its score exceeds `threshold`.
pub fn assemble_verdicts(
    windows: &[&EcgWindow],
    should_reject: &[bool],
    scores: &[f64],
    predictions: &[BTreeSet<Superclass>],
    threshold: f64,
    correctness: Correctness,
) -> Result<Vec<SystemVerdict>> {
    let n = windows.len();
    if should_reject.len() != n || scores.len() != n || predictions.len() != n {
        return Err(Error::InvalidInput("windows, flags, scores and predictions must align".into()));
    }
    Ok((0..n)
        .map(|i| {
            let w = windows[i];
            let rejected = scores[i] > threshold;
            let pred: Vec<Superclass> = predictions[i].iter().copied().collect();
            let truth: Vec<Superclass> = w.labels().iter().copied().collect();
            SystemVerdict {
                window_id: w.id(),
                filter_score: scores[i],
                rejected,
                predicted_labels: if rejected { BTreeSet::new() } else { predictions[i].clone() },
                true_labels: w.labels().clone(),
                should_reject: should_reject[i],
                classifier_correct: correctness.judge(&pred, &truth),
            }
        })
        .collect())
}

/// Scores `windows` with the filter, classifies them, and applies the threshold.
pub fn run_system(
    filter: &Checkpoint,
    classifier: &Checkpoint,
    windows: &[&EcgWindow],
    should_reject: &[bool],
    threshold: f64,
    score_seed: u64,
    correctness: Correctness,
) -> Result<Vec<SystemVerdict>> {
    let data: Vec<&[f64]> = windows.iter().map(|w| w.data.as_slice()).collect();
    let scores = uad::score(filter, &data, score_seed)?;
    let predictions = classify(classifier, windows)?;
    assemble_verdicts(windows, should_reject, &scores, &predictions, threshold, correctness)
}

pub fn system_accuracy(verdicts: &[SystemVerdict]) -> f64 {
    let o: Vec<Outcome> = verdicts.iter().map(SystemVerdict::outcome).collect();
    metrics::custom_accuracy(&o)
}
