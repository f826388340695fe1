//! Run configuration: one JSON document per reproducible experiment.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ecgfilter_core::metrics::Correctness;
use ecgfilter_core::nas::{Dimension, SearchSettings, SearchSpace, DEFAULT_SEEDS, DEFAULT_TRIALS};
use ecgfilter_core::nn::{Activation, Architecture, ConvStage, NetworkSpec, TrainConfig};
use ecgfilter_core::noise::InjectionPlan;
use ecgfilter_core::rng::derive_seed;
use ecgfilter_core::signal::{Normalization, Superclass, WINDOW_LEN};
use ecgfilter_core::system::{ClassifierConfig, DEFAULT_CLASS_THRESHOLD};
use ecgfilter_core::uad::{DetectorConfig, Method};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AppError, Result};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const DATA_ROOT_ENV: &str = "ECGFILTER_DATA_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Corpus directory; falls back to `$ECGFILTER_DATA_ROOT`, then `data`.
    pub data_root: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data_root: None,
            out: PathBuf::from("out"),
        }
    }
}

/// PTB-XL-like labeled corpus of 10 s records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabeledCorpusConfig {
    pub patients: usize,
    pub records_per_patient: usize,
    pub fs: f64,
    pub channels: usize,
    pub duration_s: f64,
    pub classes: Vec<Superclass>,
    /// Probability that a record carries a second, co-occurring class.
    pub co_occurrence: f64,
    pub noise_mv: f64,
}

impl Default for LabeledCorpusConfig {
    fn default() -> Self {
        Self {
            patients: 400,
            records_per_patient: 1,
            fs: 250.0,
            channels: 1,
            duration_s: 10.0,
            classes: Superclass::ALL.to_vec(),
            co_occurrence: 0.1,
            noise_mv: 0.01,
        }
    }
}

/// BUT-QDB-like long single-lead records with quality annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QualityCorpusConfig {
    pub patients: usize,
    /// Share of patients that have Class-3 stretches.
    pub noisy_fraction: f64,
    pub fs: f64,
    pub duration_s: f64,
    /// Class-3 episodes per noisy patient.
    pub episodes: usize,
    pub episode_s: (f64, f64),
    /// SNR of the noise laid over Class-3 stretches.
    pub class3_snr_db: f64,
    pub class2_snr_db: f64,
}

impl Default for QualityCorpusConfig {
    fn default() -> Self {
        Self {
            patients: 10,
            noisy_fraction: 0.5,
            fs: 250.0,
            duration_s: 300.0,
            episodes: 4,
            episode_s: (15.0, 40.0),
            class3_snr_db: -6.0,
            class2_snr_db: 12.0,
        }
    }
}

/// Electrode-motion-like noise record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseCorpusConfig {
    pub fs: f64,
    pub channels: usize,
    pub duration_s: f64,
}

impl Default for NoiseCorpusConfig {
    fn default() -> Self {
        Self {
            fs: 360.0,
            channels: 2,
            duration_s: 300.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub labeled: LabeledCorpusConfig,
    pub quality: QualityCorpusConfig,
    pub noise: NoiseCorpusConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum ScenarioKind {
    /// One superclass held out of training (folds 1-8 / 9 / 10).
    Ood { ood_class: Superclass },
    /// Patient-wise signal-quality split; `val_fraction` of the Class-3
    /// patients go to validation.
    Quality { val_fraction: f64 },
}

impl ScenarioKind {
    pub fn name(&self) -> String {
        match self {
            ScenarioKind::Ood { ood_class } => ood_class.name().to_string(),
            ScenarioKind::Quality { .. } => "NOISE".to_string(),
        }
    }
}

impl Default for ScenarioKind {
    fn default() -> Self {
        ScenarioKind::Ood {
            ood_class: Superclass::Hyp,
        }
    }
}

pub fn default_detector(channels: usize) -> DetectorConfig {
    DetectorConfig::DeepSvdd {
        spec: NetworkSpec {
            in_channels: channels,
            length: WINDOW_LEN,
            use_bias: false,
            activation: Activation::LeakyRelu,
            arch: Architecture::Resnet1dEncoder {
                stem: ConvStage::new(16, 7, 2),
                blocks: vec![ConvStage::new(16, 5, 2), ConvStage::new(32, 5, 2)],
                latent_dim: 32,
            },
        },
        epsilon: ecgfilter_core::uad::svdd::DEFAULT_EPSILON,
    }
}

fn default_train() -> TrainConfig {
    TrainConfig {
        epochs: 10,
        patience: Some(3),
        ..TrainConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSettings {
    pub detector: DetectorConfig,
    pub train: TrainConfig,
    /// Train the best configuration of the NAS ledger instead of `detector`.
    pub from_nas: bool,
}

impl Default for FilterSettings {
    fn default() -> Self {
        Self {
            detector: default_detector(1),
            train: default_train(),
            from_nas: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSettings {
    pub stem: ConvStage,
    pub blocks: Vec<ConvStage>,
    pub activation: Activation,
    /// Per-class decision threshold on the sigmoid output.
    pub threshold: f64,
    pub train: TrainConfig,
}

impl Default for ClassifierSettings {
    fn default() -> Self {
        Self {
            stem: ConvStage::new(16, 7, 2),
            blocks: vec![ConvStage::new(16, 5, 2), ConvStage::new(32, 5, 2)],
            activation: Activation::Relu,
            threshold: DEFAULT_CLASS_THRESHOLD,
            train: TrainConfig {
                epochs: 15,
                patience: Some(4),
                ..TrainConfig::default()
            },
        }
    }
}

impl ClassifierSettings {
    pub fn config(&self, channels: usize, classes: Vec<Superclass>) -> ClassifierConfig {
        ClassifierConfig {
            spec: NetworkSpec {
                in_channels: channels,
                length: WINDOW_LEN,
                use_bias: true,
                activation: self.activation,
                arch: Architecture::Resnet1dClassifier {
                    stem: self.stem,
                    blocks: self.blocks.clone(),
                    classes: classes.len(),
                },
            },
            classes,
            threshold: self.threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NasConfig {
    /// Method searched by the `nas` subcommand.
    pub method: Method,
    pub trials: usize,
    pub seeds_per_trial: usize,
    /// Record wall times in the ledger (makes ledgers differ across reruns).
    pub record_wall_time: bool,
    /// Replaces the parameter budget of every space.
    pub budget: Option<usize>,
    /// Per-method dimension overrides, merged over the shipped defaults.
    pub dimensions: BTreeMap<Method, BTreeMap<String, Dimension>>,
    pub train: TrainConfig,
}

impl Default for NasConfig {
    fn default() -> Self {
        Self {
            method: Method::DeepSvdd,
            trials: DEFAULT_TRIALS,
            seeds_per_trial: DEFAULT_SEEDS,
            record_wall_time: false,
            budget: None,
            dimensions: BTreeMap::new(),
            train: default_train(),
        }
    }
}

impl NasConfig {
    pub fn space(&self, method: Method, channels: usize) -> SearchSpace {
        let mut s = SearchSpace::default_for(method, channels, WINDOW_LEN);
        if let Some(b) = self.budget {
            s.budget = b;
        }
        if let Some(over) = self.dimensions.get(&method) {
            for (k, d) in over {
                s.dimensions.insert(k.clone(), d.clone());
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InjectionConfig {
    /// `None` takes the median SNR measured by `calibrate`.
    pub target_snr_db: Option<f64>,
    pub fraction: f64,
    pub stratified: bool,
}

impl Default for InjectionConfig {
    fn default() -> Self {
        Self {
            target_snr_db: None,
            fraction: InjectionPlan::DEFAULT_FRACTION,
            stratified: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportOptions {
    /// Test evaluations per reported number.
    pub repetitions: usize,
    pub correctness: Correctness,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            repetitions: 5,
            correctness: Correctness::ExactMatch,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Experiment1Config {
    pub methods: Vec<Method>,
    pub scenarios: Vec<ScenarioKind>,
}

impl Default for Experiment1Config {
    fn default() -> Self {
        let mut scenarios: Vec<ScenarioKind> = [Superclass::Mi, Superclass::Cd, Superclass::Sttc, Superclass::Hyp]
            .into_iter()
            .map(|ood_class| ScenarioKind::Ood { ood_class })
            .collect();
        scenarios.push(ScenarioKind::Quality { val_fraction: 0.3 });
        Self {
            methods: Method::ALL.to_vec(),
            scenarios,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Experiment2Config {
    pub ood_classes: Vec<Superclass>,
}

impl Default for Experiment2Config {
    fn default() -> Self {
        Self {
            ood_classes: vec![Superclass::Mi, Superclass::Cd, Superclass::Sttc, Superclass::Hyp],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub master_seed: u64,
    pub paths: Paths,
    pub synth: SynthConfig,
    pub scenario: ScenarioKind,
    pub normalization: Normalization,
    pub filter: FilterSettings,
    pub classifier: ClassifierSettings,
    pub nas: NasConfig,
    pub injection: InjectionConfig,
    pub report: ReportOptions,
    pub experiment1: Experiment1Config,
    pub experiment2: Experiment2Config,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "run".into(),
            master_seed: 0,
            paths: Paths::default(),
            synth: SynthConfig::default(),
            scenario: ScenarioKind::default(),
            normalization: Normalization::Instance,
            filter: FilterSettings::default(),
            classifier: ClassifierSettings::default(),
            nas: NasConfig::default(),
            injection: InjectionConfig::default(),
            report: ReportOptions::default(),
            experiment1: Experiment1Config::default(),
            experiment2: Experiment2Config::default(),
        }
    }
}

/// Seed streams derived from the master seed.
pub mod stream {
    pub const SYNTH: u64 = 0x5359_4e54;
    pub const SCENARIO: u64 = 0x5343_454e;
    pub const INJECT: u64 = 0x494e_4a45;
    pub const FILTER: u64 = 0x4649_4c54;
    pub const CLASSIFIER: u64 = 0x434c_4153;
    pub const SCORE: u64 = 0x5343_4f52;
    pub const REPEAT: u64 = 0x5245_5045;
}

impl RunConfig {
    pub fn seed(&self, stream: u64) -> u64 {
        derive_seed(self.master_seed, stream)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AppError::Core(ecgfilter_core::Error::Config(m)));
        let l = &self.synth.labeled;
        if l.patients == 0 || l.records_per_patient == 0 || l.channels == 0 || !(l.fs >= 50.0) {
            return bad("labeled corpus needs patients, records, channels and fs >= 50 Hz".into());
        }
        if l.classes.is_empty() || !(0.0..=1.0).contains(&l.co_occurrence) {
            return bad("labeled corpus needs classes and a co-occurrence probability in [0, 1]".into());
        }
        let q = &self.synth.quality;
        if q.patients < 2 || !(q.fs >= 50.0) || !(0.0..=1.0).contains(&q.noisy_fraction) || !(q.episode_s.0 > 0.0 && q.episode_s.1 >= q.episode_s.0) {
            return bad("quality corpus needs >= 2 patients, fs >= 50 Hz and a valid episode range".into());
        }
        if let ScenarioKind::Quality { val_fraction } = self.scenario {
            if !(0.0..1.0).contains(&val_fraction) {
                return bad(format!("validation fraction {val_fraction} outside [0, 1)"));
            }
        }
        if !(0.0..=1.0).contains(&self.injection.fraction) {
            return bad(format!("injection fraction {} outside [0, 1]", self.injection.fraction));
        }
        if self.report.repetitions == 0 {
            return bad("at least one repetition".into());
        }
        for tc in [&self.filter.train, &self.classifier.train, &self.nas.train] {
            tc.validate()?;
        }
        Ok(())
    }

    /// Canonical JSON of the effective configuration.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON, hex.
    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical_json().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn search_settings(&self, trials: Option<usize>) -> SearchSettings {
        SearchSettings {
            trials: trials.unwrap_or(self.nas.trials),
            seeds_per_trial: self.nas.seeds_per_trial,
            master_seed: self.master_seed,
        }
    }
}

/// A configuration together with the directory its relative paths refer to.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub base: PathBuf,
}

impl Loaded {
    /// Reads `path`; `seed` overrides the master seed.
    pub fn from_file(path: &Path, seed: Option<u64>) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(AppError::io(path))?;
        let mut config: RunConfig = serde_json::from_str(&text).map_err(|e| AppError::json(path, &text, &e))?;
        if let Some(s) = seed {
            config.master_seed = s;
        }
        config.validate()?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { config, base })
    }

    pub fn new(config: RunConfig, base: &Path) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            base: base.to_path_buf(),
        })
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn data_root(&self) -> PathBuf {
        match (&self.config.paths.data_root, std::env::var_os(DATA_ROOT_ENV)) {
            (Some(p), _) => self.resolve(p),
            (None, Some(env)) if !env.is_empty() => PathBuf::from(env),
            _ => self.resolve(Path::new("data")),
        }
    }

    pub fn out(&self) -> PathBuf {
        self.resolve(&self.config.paths.out)
    }
}
