//! Budget-constrained random architecture search.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{self, ParetoPoint};
use crate::nn::{count_params, Activation, Architecture, ConvStage, NetworkSpec, TrainConfig};
use crate::rng::{self, SeededRng};
use crate::stats;
use crate::uad::{self, DdpmConfig, DdpmObjective, DetectorConfig, MadConfig, Method};

pub const PARAM_BUDGET: usize = 512_000;
/// Consecutive over-budget draws tolerated before a space is declared infeasible.
pub const MAX_REJECTIONS: usize = 1000;
pub const DEFAULT_TRIALS: usize = 100;
pub const DEFAULT_SEEDS: usize = 3;
/// Trials with fewer converged seeds stay in the ledger but not in fronts.
pub const MIN_VALID_SEEDS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Real(f64),
    Text(String),
}

impl Value {
    fn as_i64(&self) -> Option<i64> {
        match self {
            Value::Int(v) => Some(*v),
            _ => None,
        }
    }

    fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(v) => Some(*v as f64),
            Value::Real(v) => Some(*v),
            Value::Text(_) => None,
        }
    }
}

/// One searchable hyperparameter, sampled uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Dimension {
    /// Integers in `[min, max]`.
    Int { min: i64, max: i64 },
    Real { min: f64, max: f64 },
    /// Uniform in `[ln min, ln max]`.
    LogReal { min: f64, max: f64 },
    Choice { values: Vec<Value> },
}

impl Dimension {
    fn validate(&self, name: &str) -> Result<()> {
        let ok = match self {
            Dimension::Int { min, max } => min <= max,
            Dimension::Real { min, max } => min <= max && min.is_finite() && max.is_finite(),
            Dimension::LogReal { min, max } => *min > 0.0 && min <= max && max.is_finite(),
            Dimension::Choice { values } => !values.is_empty(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("dimension {name} has an empty or invalid range")))
        }
    }

    fn sample(&self, r: &mut SeededRng) -> Value {
        match self {
            Dimension::Int { min, max } => Value::Int(r.random_range(*min..=*max)),
            Dimension::Real { min, max } => Value::Real(if min == max { *min } else { r.random_range(*min..*max) }),
            Dimension::LogReal { min, max } => {
                let (a, b) = (libm::log(*min), libm::log(*max));
                Value::Real(if a == b { *min } else { libm::exp(r.random_range(a..b)) })
            }
            Dimension::Choice { values } => values[r.random_range(0..values.len())].clone(),
        }
    }
}

pub type Point = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub method: Method,
    pub in_channels: usize,
    pub length: usize,
    pub budget: usize,
    pub dimensions: BTreeMap<String, Dimension>,
}

fn ints(v: &[i64]) -> Dimension {
    Dimension::Choice {
        values: v.iter().map(|&x| Value::Int(x)).collect(),
    }
}

fn texts(v: &[&str]) -> Dimension {
    Dimension::Choice {
        values: v.iter().map(|s| Value::Text(s.to_string())).collect(),
    }
}

impl SearchSpace {
    /// The shipped default ranges for `method`.
    pub fn default_for(method: Method, in_channels: usize, length: usize) -> Self {
        let mut d: BTreeMap<String, Dimension> = BTreeMap::new();
        let mut put = |k: &str, v: Dimension| {
            d.insert(k.to_string(), v);
        };
        match method {
            Method::DeepSvdd => {
                put("activation", texts(&["relu", "leaky_relu"]));
                put("stem_filters", ints(&[8, 16, 32]));
                put("stem_kernel", ints(&[7, 9, 15]));
                put("stem_stride", ints(&[1, 2, 4]));
                put("blocks", Dimension::Int { min: 1, max: 4 });
                put("block_filters", ints(&[8, 16, 32, 64]));
                put("kernel", ints(&[3, 5, 7]));
                put("latent_dim", ints(&[8, 16, 32, 64]));
            }
            Method::Ae | Method::Vae => {
                put("activation", texts(&["relu", "leaky_relu", "tanh"]));
                put("layers", Dimension::Int { min: 1, max: 4 });
                put("filters", ints(&[8, 16, 32]));
                put("kernel", ints(&[3, 5, 7, 9]));
                put("stride", ints(&[2, 4]));
                put("latent_dim", ints(&[8, 16, 32, 64]));
                if method == Method::Vae {
                    put("kl_weight", Dimension::LogReal { min: 0.1, max: 10.0 });
                }
            }
            Method::Mad => {
                put("activation", texts(&["relu", "leaky_relu"]));
                put("blocks", Dimension::Int { min: 1, max: 4 });
                put("hidden_dim", ints(&[16, 32, 64, 128]));
                put("heads", ints(&[1, 2, 4]));
                put("ff_dim", ints(&[32, 64, 128, 256]));
                put("patch_size", ints(&[8, 16, 32, 64]));
                put("patch_overlap_pct", ints(&[0, 50]));
            }
            Method::Ddpm => {
                put("activation", texts(&["relu", "leaky_relu"]));
                put("levels", Dimension::Int { min: 2, max: 4 });
                put("base_filters", ints(&[8, 16, 32]));
                put("kernel", ints(&[3, 5]));
                put("attention_heads", ints(&[0, 1, 2, 4]));
                put("time_dim", ints(&[16, 32, 64]));
                put("diffusion_steps", ints(&[50, 100, 200]));
                put("objective", texts(&["EPSILON", "X0", "V"]));
            }
            Method::Nf => {
                put("activation", texts(&["relu", "leaky_relu"]));
                put("levels", Dimension::Int { min: 1, max: 3 });
                put("steps_per_level", Dimension::Int { min: 1, max: 4 });
                put("hidden_filters", ints(&[16, 32, 64]));
                put("hidden_layers", Dimension::Int { min: 1, max: 2 });
                put("kernel", ints(&[3, 5]));
                put("squeeze_factor", ints(&[2, 4]));
                put("split_fraction", Dimension::Choice {
                    values: vec![Value::Real(0.5)],
                });
            }
        }
        Self {
            method,
            in_channels,
            length,
            budget: PARAM_BUDGET,
            dimensions: d,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.length == 0 {
            return Err(Error::Config("search space needs channels and length".into()));
        }
        for (k, d) in &self.dimensions {
            d.validate(k)?;
        }
        Ok(())
    }

    /// One uniform draw per dimension, in name order.
    pub fn draw(&self, r: &mut SeededRng) -> Point {
        self.dimensions.iter().map(|(k, d)| (k.clone(), d.sample(r))).collect()
    }

    /// Maps a point to a detector configuration.
    pub fn build(&self, p: &Point) -> Result<DetectorConfig> {
        let get = |k: &str| -> Result<&Value> {
            p.get(k)
                .ok_or_else(|| Error::Config(format!("{} space lacks dimension {k}", self.method.name())))
        };
        let int = |k: &str| -> Result<usize> {
            get(k)?
                .as_i64()
                .filter(|v| *v >= 0)
                .map(|v| v as usize)
                .ok_or_else(|| Error::Config(format!("dimension {k} must be a non-negative integer")))
        };
        let real = |k: &str| -> Result<f64> {
            get(k)?
                .as_f64()
                .ok_or_else(|| Error::Config(format!("dimension {k} must be numeric")))
        };
        let text = |k: &str| -> Result<&str> {
            match get(k)? {
                Value::Text(s) => Ok(s.as_str()),
                _ => Err(Error::Config(format!("dimension {k} must be text"))),
            }
        };
        let activation = match text("activation")? {
            "relu" => Activation::Relu,
            "leaky_relu" => Activation::LeakyRelu,
            "tanh" => Activation::Tanh,
            other => return Err(Error::Config(format!("unknown activation {other}"))),
        };
        let spec = |arch: Architecture, use_bias: bool| NetworkSpec {
            in_channels: self.in_channels,
            length: self.length,
            use_bias,
            activation,
            arch,
        };
        let cfg = match self.method {
            Method::DeepSvdd => {
                let k = int("kernel")?;
                let base = int("block_filters")?;
                let blocks = (0..int("blocks")?)
                    .map(|i| ConvStage::new(base << (i / 2), k, if i % 2 == 1 { 2 } else { 1 }))
                    .collect();
                let arch = Architecture::Resnet1dEncoder {
                    stem: ConvStage::new(int("stem_filters")?, int("stem_kernel")?, int("stem_stride")?),
                    blocks,
                    latent_dim: int("latent_dim")?,
                };
                DetectorConfig::DeepSvdd {
                    spec: spec(arch, false),
                    epsilon: uad::svdd::DEFAULT_EPSILON,
                }
            }
            Method::Ae | Method::Vae => {
                let (f, k, s) = (int("filters")?, int("kernel")?, int("stride")?);
                let layers = (0..int("layers")?).map(|i| ConvStage::new(f << i, k, s)).collect();
                let latent_dim = int("latent_dim")?;
                if self.method == Method::Ae {
                    DetectorConfig::Ae {
                        spec: spec(Architecture::ConvAe { layers, latent_dim }, true),
                    }
                } else {
                    DetectorConfig::Vae {
                        spec: spec(Architecture::ConvVae { layers, latent_dim }, true),
                        beta: real("kl_weight")?,
                    }
                }
            }
            Method::Mad => {
                let patch_size = int("patch_size")?;
                let arch = Architecture::TransformerMad {
                    patch_size,
                    patch_overlap: patch_size * int("patch_overlap_pct")? / 100,
                    hidden_dim: int("hidden_dim")?,
                    heads: int("heads")?,
                    ff_dim: int("ff_dim")?,
                    blocks: int("blocks")?,
                };
                DetectorConfig::Mad {
                    spec: spec(arch, true),
                    mask: MadConfig::default(),
                }
            }
            Method::Ddpm => {
                let base = int("base_filters")?;
                let arch = Architecture::Unet1d {
                    filters: (0..int("levels")?).map(|i| base << i).collect(),
                    kernel: int("kernel")?,
                    attention_heads: int("attention_heads")?,
                    time_dim: int("time_dim")?,
                };
                let objective = match text("objective")? {
                    "EPSILON" => DdpmObjective::Epsilon,
                    "X0" => DdpmObjective::X0,
                    "V" => DdpmObjective::V,
                    other => return Err(Error::Config(format!("unknown diffusion objective {other}"))),
                };
                DetectorConfig::Ddpm {
                    spec: spec(arch, true),
                    schedule: DdpmConfig {
                        steps: int("diffusion_steps")?,
                        objective,
                        ..DdpmConfig::default()
                    },
                }
            }
            Method::Nf => {
                let arch = Architecture::Glow1d {
                    levels: int("levels")?,
                    steps_per_level: int("steps_per_level")?,
                    hidden_filters: int("hidden_filters")?,
                    hidden_layers: int("hidden_layers")?,
                    kernel: int("kernel")?,
                    squeeze_factor: int("squeeze_factor")?,
                    split_fraction: real("split_fraction")?,
                };
                DetectorConfig::Nf { spec: spec(arch, true) }
            }
        };
        cfg.spec().validate()?;
        Ok(cfg)
    }

    /// Draws until a configuration fits the parameter budget.
    pub fn sample(&self, r: &mut SeededRng) -> Result<(Point, DetectorConfig, usize)> {
        self.validate()?;
        for _ in 0..MAX_REJECTIONS {
            let p = self.draw(r);
            let cfg = self.build(&p)?;
            let n = count_params(cfg.spec())?;
            if n <= self.budget {
                return Ok((p, cfg, n));
            }
        }
        Err(Error::SpaceInfeasible {
            attempts: MAX_REJECTIONS,
            budget: self.budget,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: usize,
    pub point: Point,
    pub config: DetectorConfig,
    pub param_count: usize,
    pub seeds: Vec<u64>,
    /// `None` for a seed whose training diverged.
    pub val_auc: Vec<Option<f64>>,
    #[serde(with = "crate::serde_float")]
    pub auc_mean: f64,
    #[serde(with = "crate::serde_float")]
    pub auc_std: f64,
    /// Only recorded on request, since it breaks byte-identical reruns.
    pub wall_time_s: Option<f64>,
    pub failures: Vec<String>,
}

impl TrialRecord {
    pub fn valid_aucs(&self) -> Vec<f64> {
        self.val_auc.iter().flatten().copied().collect()
    }

    pub fn is_valid(&self) -> bool {
        self.valid_aucs().len() >= MIN_VALID_SEEDS
    }

    pub fn pareto_point(&self) -> ParetoPoint {
        ParetoPoint {
            config_id: format!("trial{:03}", self.trial_id),
            param_count: self.param_count,
            auc_mean: self.auc_mean,
            auc_std: self.auc_std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSettings {
    pub trials: usize,
    pub seeds_per_trial: usize,
    pub master_seed: u64,
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self {
            trials: DEFAULT_TRIALS,
            seeds_per_trial: DEFAULT_SEEDS,
            master_seed: 0,
        }
    }
}

/// Sampling seed of a trial; independent of every other trial so that
/// resumed searches draw the same points.
pub fn trial_seed(master_seed: u64, trial_id: usize) -> u64 {
    rng::derive_seed(rng::derive_seed(master_seed, 0x4e41_53), trial_id as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub records: Vec<TrialRecord>,
    /// Trials resumed from `completed` rather than retrained.
    pub resumed: usize,
    pub warnings: Vec<String>,
}

/// Runs `settings.trials` trials. Trials already present in `completed`
/// are checked against the space and reused; every new record is passed to
/// `commit` before the next trial starts. `evaluate(config, seed)` trains
/// and returns the validation AUC; a [`Error::Diverged`] marks that seed as
/// skipped, any other error aborts. `clock` (seconds) enables wall times.
pub fn run_search<E, C>(
    space: &SearchSpace,
    settings: &SearchSettings,
    completed: &[TrialRecord],
    mut evaluate: E,
    mut commit: C,
    clock: Option<&dyn Fn() -> f64>,
) -> Result<SearchOutcome>
where
    E: FnMut(&DetectorConfig, u64) -> Result<f64>,
    C: FnMut(&TrialRecord) -> Result<()>,
{
    if settings.seeds_per_trial == 0 {
        return Err(Error::Config("at least one training seed per trial".into()));
    }
    let done: BTreeMap<usize, &TrialRecord> = completed.iter().map(|r| (r.trial_id, r)).collect();
    let mut out = SearchOutcome {
        records: Vec::with_capacity(settings.trials),
        resumed: 0,
        warnings: Vec::new(),
    };
    for trial_id in 0..settings.trials {
        let ts = trial_seed(settings.master_seed, trial_id);
        let (point, config, param_count) = space.sample(&mut rng::seeded(ts))?;
        if let Some(prev) = done.get(&trial_id) {
            if prev.point != point || prev.config != config {
                return Err(Error::Config(format!(
                    "ledger trial {trial_id} was drawn from a different space or master seed"
                )));
            }
            out.records.push((*prev).clone());
            out.resumed += 1;
            continue;
        }
        let started = clock.map(|c| c());
        let seeds: Vec<u64> = (0..settings.seeds_per_trial)
            .map(|k| rng::derive_seed(ts, 0x5345_4544 + k as u64))
            .collect();
        let mut val_auc = Vec::with_capacity(seeds.len());
        let mut failures = Vec::new();
        for &s in &seeds {
            match evaluate(&config, s) {
                Ok(a) => val_auc.push(Some(a)),
                Err(e @ Error::Diverged { .. }) => {
                    failures.push(format!("seed {s}: {e}"));
                    val_auc.push(None);
                }
                Err(e) => return Err(e),
            }
        }
        let valid: Vec<f64> = val_auc.iter().flatten().copied().collect();
        let (auc_mean, auc_std) = if valid.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            (stats::mean(&valid), stats::std_dev(&valid))
        };
        let rec = TrialRecord {
            trial_id,
            point,
            config,
            param_count,
            seeds,
            val_auc,
            auc_mean,
            auc_std,
            wall_time_s: match (clock, started) {
                (Some(c), Some(t0)) => Some(c() - t0),
                _ => None,
            },
            failures,
        };
        if !rec.is_valid() {
            out.warnings.push(format!(
                "trial {trial_id} has fewer than {MIN_VALID_SEEDS} converged seeds; excluded from fronts"
            ));
        }
        commit(&rec)?;
        out.records.push(rec);
    }
    Ok(out)
}

/// Trains `cfg` with `seed` and returns the AUC on the validation windows.
pub fn train_and_validate(
    cfg: &DetectorConfig,
    train: &[&[f64]],
    val: &[&[f64]],
    val_anomalous: &[bool],
    tc: &TrainConfig,
    seed: u64,
) -> Result<f64> {
    let clean_val: Vec<&[f64]> = val
        .iter()
        .zip(val_anomalous)
        .filter(|(_, &a)| !a)
        .map(|(w, _)| *w)
        .collect();
    let tc = TrainConfig { seed, ..tc.clone() };
    let (ckpt, _) = uad::train_detector(cfg, train, &clean_val, &tc)?;
    let scores = uad::score(&ckpt, val, rng::derive_seed(seed, 0x5343_4f52))?;
    metrics::auc(&scores, val_anomalous)
}

/// Highest mean validation AUC among trials with enough converged seeds;
/// ties go to fewer parameters, then the lower trial id.
pub fn best_by_method(records: &[TrialRecord]) -> Result<&TrialRecord> {
    if records.is_empty() {
        return Err(Error::InvalidInput("no trial records".into()));
    }
    records
        .iter()
        .filter(|r| r.is_valid() && r.auc_mean.is_finite())
        .max_by(|a, b| {
            a.auc_mean
                .total_cmp(&b.auc_mean)
                .then(b.param_count.cmp(&a.param_count))
                .then(b.trial_id.cmp(&a.trial_id))
        })
        .ok_or_else(|| Error::UndefinedMetric("no trial converged on enough seeds".into()))
}

/// Pareto front over the valid trials.
pub fn trial_front(records: &[TrialRecord]) -> Vec<ParetoPoint> {
    let pts: Vec<ParetoPoint> = records.iter().filter(|r| r.is_valid()).map(TrialRecord::pareto_point).collect();
    metrics::pareto_front(&pts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::WINDOW_LEN;
    use core::cell::Cell;

    #[test]
    fn every_default_space_samples_within_budget() {
        for m in Method::ALL {
            let space = SearchSpace::default_for(m, 1, WINDOW_LEN);
            let mut r = rng::seeded(42);
            for i in 0..100 {
                let (p, cfg, n) = space.sample(&mut r).unwrap_or_else(|e| panic!("{m:?} draw {i}: {e}"));
                assert!(n <= PARAM_BUDGET);
                assert_eq!(n, count_params(cfg.spec()).unwrap());
                assert_eq!(space.build(&p).unwrap(), cfg);
                assert_eq!(cfg.method(), m);
            }
        }
    }

    #[test]
    fn single_point_space_and_zero_budget() {
        let mut s = SearchSpace::default_for(Method::Ae, 1, WINDOW_LEN);
        for d in s.dimensions.values_mut() {
            if let Dimension::Choice { values } = d {
                values.truncate(1);
            }
            if let Dimension::Int { min, max } = d {
                *max = *min;
            }
        }
        s.dimensions.insert("kl_weight".into(), Dimension::Real { min: 1.0, max: 1.0 });
        let mut r = rng::seeded(1);
        let first = s.sample(&mut r).unwrap();
        for _ in 0..5 {
            assert_eq!(s.sample(&mut r).unwrap(), first);
        }
        s.budget = 0;
        assert!(matches!(
            s.sample(&mut r),
            Err(Error::SpaceInfeasible { attempts: MAX_REJECTIONS, budget: 0 })
        ));
    }

    #[test]
    fn missing_dimension_is_a_config_error() {
        let mut s = SearchSpace::default_for(Method::Mad, 1, WINDOW_LEN);
        s.dimensions.remove("heads");
        assert!(matches!(s.sample(&mut rng::seeded(0)), Err(Error::Config(m)) if m.contains("heads")));
    }

    fn fake_eval(cfg: &DetectorConfig, seed: u64) -> Result<f64> {
        let n = count_params(cfg.spec())? as f64;
        Ok(0.5 + 0.4 * libm::sin(n) * libm::sin(n) + (seed % 7) as f64 * 1e-3)
    }

    #[test]
    fn search_is_deterministic_and_resumable() {
        let space = SearchSpace::default_for(Method::DeepSvdd, 1, WINDOW_LEN);
        let settings = SearchSettings {
            trials: 4,
            seeds_per_trial: 3,
            master_seed: 9,
        };
        let a = run_search(&space, &settings, &[], fake_eval, |_| Ok(()), None).unwrap();
        let b = run_search(&space, &settings, &[], fake_eval, |_| Ok(()), None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.records.len(), 4);
        assert!(a.records.iter().all(|r| r.val_auc.len() == 3 && r.param_count <= PARAM_BUDGET));

        let calls = Cell::new(0);
        let eval = |c: &DetectorConfig, s: u64| {
            calls.set(calls.get() + 1);
            fake_eval(c, s)
        };
        let resumed = run_search(&space, &settings, &a.records[..2], eval, |_| Ok(()), None).unwrap();
        assert_eq!(resumed.records, a.records);
        assert_eq!((resumed.resumed, calls.get()), (2, 6));

        let other = SearchSettings {
            master_seed: 10,
            ..settings.clone()
        };
        assert!(run_search(&space, &other, &a.records[..1], fake_eval, |_| Ok(()), None).is_err());
    }

    #[test]
    fn diverged_seeds_are_recorded_and_excluded() {
        let space = SearchSpace::default_for(Method::Ae, 1, WINDOW_LEN);
        let settings = SearchSettings {
            trials: 2,
            seeds_per_trial: 3,
            master_seed: 1,
        };
        let k = Cell::new(0);
        let eval = |_: &DetectorConfig, _: u64| {
            k.set(k.get() + 1);
            if k.get() <= 2 {
                Err(Error::Diverged { epoch: 0, loss: f64::NAN })
            } else {
                Ok(0.7)
            }
        };
        let mut committed = Vec::new();
        let out = run_search(
            &space,
            &settings,
            &[],
            eval,
            |r| {
                committed.push(r.trial_id);
                Ok(())
            },
            None,
        )
        .unwrap();
        assert_eq!(committed, vec![0, 1]);
        assert_eq!(out.records[0].val_auc.iter().filter(|v| v.is_none()).count(), 2);
        assert_eq!(out.records[0].failures.len(), 2);
        assert!(!out.records[0].is_valid());
        assert_eq!(out.warnings.len(), 1);
        assert_eq!(trial_front(&out.records).len(), 1);
        assert_eq!(best_by_method(&out.records).unwrap().trial_id, 1);
    }

    fn rec(id: usize, auc: f64, params: usize) -> TrialRecord {
        let space = SearchSpace::default_for(Method::Nf, 1, 64);
        TrialRecord {
            trial_id: id,
            point: Point::new(),
            config: space.sample(&mut rng::seeded(0)).unwrap().1,
            param_count: params,
            seeds: vec![1, 2, 3],
            val_auc: vec![Some(auc); 3],
            auc_mean: auc,
            auc_std: 0.0,
            wall_time_s: None,
            failures: Vec::new(),
        }
    }

    #[test]
    fn best_by_method_rules() {
        assert_eq!(best_by_method(&[rec(0, 0.7, 10), rec(1, 0.8, 10)]).unwrap().trial_id, 1);
        assert_eq!(best_by_method(&[rec(0, 0.8, 100_000), rec(1, 0.8, 50_000)]).unwrap().trial_id, 1);
        assert_eq!(best_by_method(&[rec(3, 0.8, 5), rec(2, 0.8, 5)]).unwrap().trial_id, 2);
        assert!(best_by_method(&[]).is_err());
    }

    #[test]
    fn non_finite_auc_survives_serde_helper() {
        let mut r = rec(0, 0.5, 1);
        r.auc_mean = f64::NAN;
        assert!(best_by_method(&[r.clone()]).is_err());
        assert_eq!(crate::serde_float::format(r.auc_mean), "nan");
    }
}
