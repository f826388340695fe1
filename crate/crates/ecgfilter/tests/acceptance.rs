//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the report reads top to bottom.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use ecgfilter::config::{default_detector, LabeledCorpusConfig, Loaded, NoiseCorpusConfig, RunConfig, ScenarioKind};
use ecgfilter::corpus::{labeled_corpus, noise_record};
use ecgfilter::dataset::prepare;
use ecgfilter::experiment::experiment2;
use ecgfilter::ledger::Ledger;
use ecgfilter::stages::{read_nas_ledger, NasHeader, NasLine, Stage};
use ecgfilter_core::metrics::{auc, custom_accuracy, pareto_front, Outcome, ParetoPoint};
use ecgfilter_core::nas::{run_search, SearchSettings, SearchSpace, PARAM_BUDGET};
use ecgfilter_core::nn::{count_params, Activation, Architecture, ConvStage, NetworkSpec, TrainConfig};
use ecgfilter_core::noise::{estimate_snr, inject_noise};
use ecgfilter_core::rng::{self, derive_seed};
use ecgfilter_core::signal::{synth_ecg, SynthParams};
use ecgfilter_core::signal::{normalize_instance, resample, RawRecord, Superclass, WINDOW_LEN};
use ecgfilter_core::stats::{mean, std_dev};
use ecgfilter_core::uad::check::{flow_check, objective_grad_check, random_checkpoint, svdd_initial_center};
use ecgfilter_core::uad::mad::score_sequential;
use ecgfilter_core::uad::{self, DdpmConfig, DdpmObjective, DetectorConfig, MadConfig, Method, MethodState};
use ecgfilter_core::wavelet::{dwt, idwt, max_level};
use rand::Rng;

const AE_F1: usize = 8;
const AE_F2: usize = 16;
const AE_LAT: usize = 32;
const AE_EP: usize = 40;
const AE_LR: f64 = 3e-3;

type Verdict = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- oracles

fn brute_auc(scores: &[f64], anomalous: &[bool]) -> f64 {
    let mut twice = 0u64;
    let (mut p, mut n) = (0u64, 0u64);
    for (i, &ai) in anomalous.iter().enumerate() {
        if ai {
            p += 1;
        } else {
            n += 1;
        }
        if !ai {
            continue;
        }
        for (j, &aj) in anomalous.iter().enumerate() {
            if aj {
                continue;
            }
            twice += match scores[i].partial_cmp(&scores[j]).unwrap() {
                std::cmp::Ordering::Greater => 2,
                std::cmp::Ordering::Equal => 1,
                std::cmp::Ordering::Less => 0,
            };
        }
    }
    twice as f64 / (2 * p * n) as f64
}

fn brute_front(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    let finite: Vec<&ParetoPoint> = points.iter().filter(|p| p.auc_mean.is_finite()).collect();
    let mut out: Vec<ParetoPoint> = finite
        .iter()
        .filter(|p| {
            !finite.iter().any(|q| {
                q.param_count <= p.param_count
                    && q.auc_mean >= p.auc_mean
                    && (q.param_count < p.param_count || q.auc_mean > p.auc_mean)
            })
        })
        .map(|p| (*p).clone())
        .collect();
    out.sort_by(|a, b| {
        a.param_count
            .cmp(&b.param_count)
            .then(b.auc_mean.total_cmp(&a.auc_mean))
            .then(a.config_id.cmp(&b.config_id))
    });
    out
}

fn truth_table(should_reject: bool, rejected: bool, classified: bool) -> bool {
    match (should_reject, rejected, classified) {
        (true, true, _) => true,
        (true, false, _) => false,
        (false, true, _) => false,
        (false, false, c) => c,
    }
}

fn mad_spec(r: &mut impl Rng, length: usize) -> DetectorConfig {
    let patch = [4usize, 8, 16][r.random_range(0..3)];
    let overlap = if r.random_bool(0.5) { 0 } else { patch / 2 };
    let hidden = [8usize, 16][r.random_range(0..2)];
    let heads = [1usize, 2][r.random_range(0..2)];
    DetectorConfig::Mad {
        spec: NetworkSpec {
            in_channels: 1 + r.random_range(0..2),
            length,
            use_bias: true,
            activation: [Activation::Tanh, Activation::Relu][r.random_range(0..2)],
            arch: Architecture::TransformerMad {
                patch_size: patch,
                patch_overlap: overlap,
                hidden_dim: hidden,
                heads,
                ff_dim: 2 * hidden,
                blocks: 1 + r.random_range(0..2),
            },
        },
        mask: MadConfig {
            mask_ratio: [0.05, 0.1, 0.25][r.random_range(0..3)],
        },
    }
}

fn oracles() -> Verdict {
    let mut r = rng::seeded(20_241);
    for inst in 0..200 {
        let n = r.random_range(2..80);
        let tied = inst % 2 == 0;
        let scores: Vec<f64> = (0..n)
            .map(|_| if tied { r.random_range(0..6) as f64 * 0.5 } else { rng::normal(&mut r) })
            .collect();
        let mut labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        let got = auc(&scores, &labels).map_err(e2s)?;
        let want = brute_auc(&scores, &labels);
        ensure(got == want, format!("AUC instance {inst}: {got} vs brute force {want}"))?;
    }

    for seed in 0..20u64 {
        let mut r = rng::seeded(derive_seed(77, seed));
        let pts: Vec<ParetoPoint> = (0..50)
            .map(|k| ParetoPoint {
                config_id: format!("c{k:02}"),
                param_count: r.random_range(1..40) * 1000,
                auc_mean: if r.random_bool(0.05) { f64::NAN } else { (r.random_range(50..100) as f64) / 100.0 },
                auc_std: 0.0,
            })
            .collect();
        ensure(pareto_front(&pts) == brute_front(&pts), format!("Pareto front differs for cloud {seed}"))?;
    }

    let mut r = rng::seeded(5);
    for k in 0..10 {
        let cfg = mad_spec(&mut r, 64);
        let ckpt = random_checkpoint(&cfg, 100 + k).map_err(e2s)?;
        let width = cfg.spec().in_channels * 64;
        let windows: Vec<Vec<f64>> = (0..3).map(|_| (0..width).map(|_| rng::normal(&mut r)).collect()).collect();
        let refs: Vec<&[f64]> = windows.iter().map(Vec::as_slice).collect();
        let batched = uad::score(&ckpt, &refs, 9 + k).map_err(e2s)?;
        let seq = score_sequential(&ckpt, &refs, 9 + k).map_err(e2s)?;
        for (a, b) in batched.iter().zip(&seq) {
            ensure((a - b).abs() <= 1e-6, format!("MAD model {k}: batched {a} vs sequential {b}"))?;
        }
    }

    let combos: Vec<Outcome> = (0..8)
        .map(|m| Outcome {
            should_reject: m & 1 != 0,
            rejected: m & 2 != 0,
            classified_correctly: m & 4 != 0,
        })
        .collect();
    let mut lists = 0;
    for len in 0..=4u32 {
        for code in 0..8usize.pow(len) {
            let outs: Vec<Outcome> = (0..len).map(|i| combos[(code / 8usize.pow(i)) % 8]).collect();
            let right = outs
                .iter()
                .filter(|o| truth_table(o.should_reject, o.rejected, o.classified_correctly))
                .count();
            let want = if outs.is_empty() { 0.0 } else { right as f64 / outs.len() as f64 };
            ensure(custom_accuracy(&outs) == want, format!("custom accuracy differs on {outs:?}"))?;
            lists += 1;
        }
    }
    Ok(format!("200 AUC instances, 20 Pareto clouds, 10 MAD models, {lists} truth-table lists"))
}

// ---------------------------------------------------------------- numerics

fn tiny(arch: Architecture, activation: Activation, use_bias: bool) -> NetworkSpec {
    NetworkSpec {
        in_channels: 1,
        length: 32,
        use_bias,
        activation,
        arch,
    }
}

fn tiny_detectors() -> Vec<DetectorConfig> {
    let conv = vec![ConvStage::new(4, 5, 2), ConvStage::new(4, 3, 2)];
    let mut v = vec![
        DetectorConfig::DeepSvdd {
            spec: tiny(
                Architecture::Resnet1dEncoder {
                    stem: ConvStage::new(4, 5, 2),
                    blocks: vec![ConvStage::new(4, 3, 1), ConvStage::new(6, 3, 2)],
                    latent_dim: 3,
                },
                Activation::LeakyRelu,
                false,
            ),
            epsilon: 0.1,
        },
        DetectorConfig::Ae {
            spec: tiny(
                Architecture::ConvAe {
                    layers: conv.clone(),
                    latent_dim: 4,
                },
                Activation::Tanh,
                true,
            ),
        },
        DetectorConfig::Vae {
            spec: tiny(Architecture::ConvVae { layers: conv, latent_dim: 4 }, Activation::Tanh, true),
            beta: 0.7,
        },
        DetectorConfig::Mad {
            spec: tiny(
                Architecture::TransformerMad {
                    patch_size: 8,
                    patch_overlap: 4,
                    hidden_dim: 8,
                    heads: 2,
                    ff_dim: 16,
                    blocks: 1,
                },
                Activation::Tanh,
                true,
            ),
            mask: MadConfig { mask_ratio: 0.2 },
        },
        DetectorConfig::Nf {
            spec: tiny(
                Architecture::Glow1d {
                    levels: 2,
                    steps_per_level: 2,
                    hidden_filters: 8,
                    hidden_layers: 1,
                    kernel: 3,
                    squeeze_factor: 2,
                    split_fraction: 0.5,
                },
                Activation::Tanh,
                true,
            ),
        },
    ];
    for objective in [DdpmObjective::Epsilon, DdpmObjective::X0, DdpmObjective::V] {
        v.push(DetectorConfig::Ddpm {
            spec: tiny(
                Architecture::Unet1d {
                    filters: vec![4, 8],
                    kernel: 3,
                    attention_heads: 2,
                    time_dim: 8,
                },
                Activation::Tanh,
                true,
            ),
            schedule: DdpmConfig {
                objective,
                ..DdpmConfig::default()
            },
        });
    }
    v
}

fn glow(levels: usize, channels: usize, length: usize) -> DetectorConfig {
    DetectorConfig::Nf {
        spec: NetworkSpec {
            in_channels: channels,
            length,
            use_bias: true,
            activation: Activation::Tanh,
            arch: Architecture::Glow1d {
                levels,
                steps_per_level: 2,
                hidden_filters: 4,
                hidden_layers: 1,
                kernel: 3,
                squeeze_factor: 2,
                split_fraction: 0.5,
            },
        },
    }
}

fn numerics() -> Verdict {
    let sample: Vec<Vec<f64>> = (0..3)
        .map(|k| (0..32).map(|t| (0.4 * t as f64 + k as f64).sin() + 0.1 * ((7 * t + k) % 5) as f64).collect())
        .collect();
    let refs: Vec<&[f64]> = sample.iter().map(Vec::as_slice).collect();
    let mut worst: BTreeMap<Method, f64> = BTreeMap::new();
    for cfg in tiny_detectors() {
        let err = objective_grad_check(&cfg, &refs, 5, 64).map_err(e2s)?;
        let w = worst.entry(cfg.method()).or_insert(0.0);
        *w = w.max(err);
        ensure(err < 1e-3, format!("{:?} grad_check max relative error {err:.2e}", cfg.method()))?;
    }
    ensure(worst.len() == 6, "not every objective was checked")?;

    let mut flow_inv: f64 = 0.0;
    let mut flow_lp: f64 = 0.0;
    for seed in 0..5u64 {
        for (levels, c, l) in [(1, 2, 4), (1, 1, 8), (2, 2, 8)] {
            let ckpt = random_checkpoint(&glow(levels, c, l), 40 + seed).map_err(e2s)?;
            let x: Vec<f64> = (0..c * l).map(|i| ((i as f64 + seed as f64) * 0.9).cos() * 0.8).collect();
            let fc = flow_check(&ckpt, &x).map_err(e2s)?;
            flow_inv = flow_inv.max(fc.inverse_error);
            ensure(fc.inverse_error <= 1e-4, format!("NF inverse error {:.2e}", fc.inverse_error))?;
            if let Some(b) = fc.brute_log_prob {
                flow_lp = flow_lp.max((b - fc.log_prob).abs());
                ensure((b - fc.log_prob).abs() <= 1e-4, format!("NF log p {} vs Jacobian {}", fc.log_prob, b))?;
            }
        }
    }

    let s = DdpmConfig::default().schedule().map_err(e2s)?;
    let mut r = rng::seeded(12);
    let mut moment_err: f64 = 0.0;
    for t in [5, 40, 90] {
        for x0 in [1.3, -0.7] {
            let draws: Vec<f64> = (0..10_000)
                .map(|_| s.q_sample(&[x0], t, &[rng::normal(&mut r)]).unwrap()[0])
                .collect();
            let ab = s.alpha_bar(t);
            let (m, sd) = (mean(&draws), std_dev(&draws));
            let em = (m - ab.sqrt() * x0).abs() / (ab.sqrt() * x0).abs();
            let es = (sd - (1.0 - ab).sqrt()).abs() / (1.0 - ab).sqrt();
            moment_err = moment_err.max(em).max(es);
            ensure(em < 0.02 && es < 0.02, format!("q-sample t={t} x0={x0}: mean {m}, std {sd}"))?;
        }
    }

    let mut dwt_err: f64 = 0.0;
    for len in [64usize, 512, 1000, 2500, 3600, 5000] {
        let x: Vec<f64> = (0..len).map(|_| rng::normal(&mut r)).collect();
        let c = dwt(&x, max_level(len).min(11)).map_err(e2s)?;
        let back = idwt(&c);
        ensure(back.len() == len, "DWT changed the length")?;
        let e = back.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        dwt_err = dwt_err.max(e);
        ensure(e <= 1e-8, format!("DWT reconstruction error {e:.2e} at length {len}"))?;
    }
    let g: Vec<String> = worst.iter().map(|(m, e)| format!("{}={e:.1e}", m.name())).collect();
    Ok(format!(
        "grad_check {}; NF inverse {flow_inv:.1e}, log p {flow_lp:.1e}; q-sample {:.2}%; DWT {dwt_err:.1e}",
        g.join(" "),
        100.0 * moment_err
    ))
}

// ---------------------------------------------------------------- data helpers

fn window_of(raw: &RawRecord) -> Vec<f64> {
    normalize_instance(&resample(&raw.signal, WINDOW_LEN).unwrap(), raw.channels())
}

fn desk_config(dir: &Path) -> RunConfig {
    let mut c = RunConfig::default();
    c.name = "acceptance".into();
    c.master_seed = 11;
    c.paths.data_root = Some(dir.join("data"));
    c.paths.out = dir.join("out");
    c
}

// ---------------------------------------------------------------- structure

fn structure() -> Verdict {
    let tmp = tempfile::tempdir().map_err(e2s)?;
    let mut c = desk_config(tmp.path());
    c.synth.labeled.patients = 200;
    c.synth.quality.patients = 8;
    c.synth.quality.duration_s = 120.0;
    c.synth.quality.episodes = 1;
    c.synth.quality.episode_s = (10.0, 20.0);
    let loaded = Loaded::new(c, tmp.path()).map_err(e2s)?;
    ecgfilter::stages::synth(&Stage::new(&loaded)).map_err(e2s)?;

    // Deep SVDD: no bias tensors, center fixed before training
    let det = default_detector(1);
    let DetectorConfig::DeepSvdd { spec, epsilon } = &det else { unreachable!() };
    let p = prepare(&loaded, ScenarioKind::Ood { ood_class: Superclass::Hyp }).map_err(e2s)?;
    let train: Vec<&[f64]> = p.split.train.iter().take(64).map(|w| w.data.as_slice()).collect();
    let tc = TrainConfig {
        epochs: 2,
        patience: None,
        seed: 3,
        ..TrainConfig::default()
    };
    let (ckpt, _) = uad::train_detector(&det, &train, &train[..16], &tc).map_err(e2s)?;
    let biases: Vec<&str> = ckpt.tensors.iter().map(|t| t.name.as_str()).filter(|n| n.contains("bias")).collect();
    ensure(biases.is_empty(), format!("Deep SVDD encoder has bias tensors {biases:?}"))?;
    let MethodState::DeepSvdd { center, .. } = &ckpt.method else { unreachable!() };
    let initial = svdd_initial_center(spec, *epsilon, &train, tc.seed).map_err(e2s)?;
    ensure(center == &initial, "Deep SVDD center moved during training")?;
    let with_bias = DetectorConfig::DeepSvdd {
        spec: NetworkSpec {
            use_bias: true,
            ..spec.clone()
        },
        epsilon: *epsilon,
    };
    ensure(uad::train_detector(&with_bias, &train, &train[..16], &tc).is_err(), "biased Deep SVDD was accepted")?;

    // NAS ledgers: every persisted entry within budget, recounted from its config
    let mut entries = 0;
    for method in Method::ALL {
        let space = SearchSpace::default_for(method, 1, WINDOW_LEN);
        let path = tmp.path().join(format!("nas_{}.jsonl", method.name()));
        let mut ledger = Ledger::create(&path).map_err(e2s)?;
        ledger
            .append(&NasLine::Header(NasHeader {
                master_seed: 11,
                space_hash: ecgfilter::stages::space_hash(&space),
                seeds_per_trial: 1,
                space: space.clone(),
            }))
            .map_err(e2s)?;
        let settings = SearchSettings {
            trials: 100,
            seeds_per_trial: 1,
            master_seed: 11,
        };
        run_search(
            &space,
            &settings,
            &[],
            |_, s| Ok((s % 1000) as f64 / 1000.0),
            |rec| ledger.append(&NasLine::Trial(rec.clone())).map_err(|e| ecgfilter_core::Error::InvalidInput(e.to_string())),
            None,
        )
        .map_err(e2s)?;
        let (_, recs) = read_nas_ledger(&path).map_err(e2s)?;
        for rec in &recs {
            let n = count_params(rec.config.spec()).map_err(e2s)?;
            ensure(n == rec.param_count && n <= 512_000, format!("{} trial {}: {n} parameters", method.name(), rec.trial_id))?;
        }
        entries += recs.len();
    }
    ensure(PARAM_BUDGET == 512_000, "budget constant changed")?;

    // OOD hold-out: no OOD-labelled window in train
    let mut ood_train = 0;
    for class in [Superclass::Mi, Superclass::Cd, Superclass::Sttc, Superclass::Hyp] {
        let p = prepare(&loaded, ScenarioKind::Ood { ood_class: class }).map_err(e2s)?;
        ood_train += p.split.train.iter().filter(|w| w.labels().contains(&class)).count();
        ensure(p.split.test_ood.iter().any(|&o| o), format!("no {class:?} window in test"))?;
    }
    ensure(ood_train == 0, format!("{ood_train} OOD windows in train"))?;

    // quality split: patient-disjoint
    let q = prepare(&loaded, ScenarioKind::Quality { val_fraction: 0.3 }).map_err(e2s)?;
    let corpus = ecgfilter::dataset::open_corpus(&ecgfilter::corpus::corpus_dirs(&loaded.data_root())[1]).map_err(e2s)?;
    let patient: BTreeMap<String, String> = corpus.quality_meta().into_iter().map(|m| (m.record_id, m.patient_id)).collect();
    let set = |w: &[ecgfilter_core::signal::EcgWindow]| -> BTreeSet<String> { w.iter().map(|w| patient[&w.source_record].clone()).collect() };
    let (a, b, t) = (set(&q.split.train), set(&q.split.val), set(&q.split.test));
    ensure(a.is_disjoint(&b) && a.is_disjoint(&t) && b.is_disjoint(&t), "quality split shares patients")?;
    ensure(!a.is_empty() && !b.is_empty() && !t.is_empty(), "quality split has an empty set")?;
    Ok(format!(
        "SVDD bias-free, center frozen; {entries} NAS ledger entries <= 512,000; 0 OOD windows in 4 train splits; quality patients {}/{}/{} disjoint",
        a.len(),
        b.len(),
        t.len()
    ))
}

// ---------------------------------------------------------------- calibration

fn calibration() -> Verdict {
    let noise = noise_record(&NoiseCorpusConfig::default(), 4).map_err(e2s)?;
    let mut lines = Vec::new();
    let mut all_ok = true;
    for (ti, target) in [-6.0, 0.0, 6.0, 12.0].into_iter().enumerate() {
        let mut errs = Vec::new();
        for k in 0..20u64 {
            let seed = derive_seed(900 + ti as u64, k);
            let mut sp = SynthParams::normal(60.0 + (k % 7) as f64 * 5.0, 360.0, 10.0, seed);
            sp.rr_jitter = 0.05;
            let clean = synth_ecg(&sp).map_err(e2s)?;
            let (noisy, _) = inject_noise(&clean, &noise, target, derive_seed(seed, 1)).map_err(e2s)?;
            let est = estimate_snr(&noisy.signal[0], noisy.fs).map_err(e2s)?;
            errs.push(est.estimated_snr_db - target);
        }
        let worst = errs.iter().fold(0.0f64, |m, e| if e.is_finite() { m.max(e.abs()) } else { f64::INFINITY });
        all_ok &= worst <= 1.5;
        let finite: Vec<f64> = errs.iter().copied().filter(|e| e.is_finite()).collect();
        lines.push(format!("{target:+} dB: mean error {:+.1} dB, worst {worst:.1} dB", mean(&finite)));
    }
    let msg = format!("20 windows per target; {}", lines.join("; "));
    if all_ok {
        Ok(msg)
    } else {
        Err(format!("tolerance 1.5 dB exceeded; {msg}"))
    }
}

// ---------------------------------------------------------------- experiment 1 analogue

fn experiment1_analogue() -> Verdict {
    let lc = LabeledCorpusConfig {
        patients: 1000,
        classes: vec![Superclass::Norm],
        co_occurrence: 0.0,
        ..LabeledCorpusConfig::default()
    };
    let records = labeled_corpus(&lc, 21).map_err(e2s)?;
    let noise = noise_record(&NoiseCorpusConfig::default(), 22).map_err(e2s)?;
    let raws: Vec<&RawRecord> = records.iter().map(|(_, r)| r).collect();
    let train: Vec<Vec<f64>> = raws[..500].iter().map(|r| window_of(r)).collect();
    let val: Vec<Vec<f64>> = raws[500..560].iter().map(|r| window_of(r)).collect();
    let mut test: Vec<Vec<f64>> = raws[600..800].iter().map(|r| window_of(r)).collect();
    for (k, r) in raws[800..1000].iter().enumerate() {
        let (noisy, _) = inject_noise(r, &noise, 0.0, derive_seed(23, k as u64)).map_err(e2s)?;
        test.push(window_of(&noisy));
    }
    let anomalous: Vec<bool> = (0..400).map(|i| i >= 200).collect();
    let tr: Vec<&[f64]> = train.iter().map(Vec::as_slice).collect();
    let va: Vec<&[f64]> = val.iter().map(Vec::as_slice).collect();
    let te: Vec<&[f64]> = test.iter().map(Vec::as_slice).collect();
    let ae = DetectorConfig::Ae {
        spec: NetworkSpec {
            in_channels: 1,
            length: WINDOW_LEN,
            use_bias: true,
            activation: Activation::LeakyRelu,
            arch: Architecture::ConvAe {
                layers: vec![ConvStage::new(AE_F1, 7, 4), ConvStage::new(AE_F2, 5, 4)],
                latent_dim: AE_LAT,
            },
        },
    };
    let tc = TrainConfig {
        epochs: AE_EP,
        patience: Some(5),
        learning_rate: AE_LR,
        seed: 24,
        ..TrainConfig::default()
    };
    let mut parts = Vec::new();
    let mut ok = true;
    for det in [default_detector(1), ae] {
        let n = det.param_count().map_err(e2s)?;
        ensure(n <= 50_000, format!("{} has {n} parameters", det.method().name()))?;
        let (ckpt, rep) = uad::train_detector(&det, &tr, &va, &tc).map_err(e2s)?;
        let scores = uad::score(&ckpt, &te, 25).map_err(e2s)?;
        let a = auc(&scores, &anomalous).map_err(e2s)?;
        ok &= a >= 0.95;
        parts.push(format!("{} ({n} params, {} epochs) AUC {a:.3}", det.method().name(), rep.epochs_run));
    }
    let msg = format!("500 clean train, 200 clean + 200 at 0 dB; {}", parts.join(", "));
    if ok {
        Ok(msg)
    } else {
        Err(format!("AUC below 0.95; {msg}"))
    }
}

// ---------------------------------------------------------------- experiment 2 analogue

fn experiment2_analogue() -> Verdict {
    let tmp = tempfile::tempdir().map_err(e2s)?;
    let mut c = desk_config(tmp.path());
    c.synth.labeled.patients = 600;
    c.synth.labeled.classes = vec![Superclass::Norm, Superclass::Mi, Superclass::Cd, Superclass::Hyp];
    c.synth.quality.patients = 2;
    c.synth.quality.duration_s = 60.0;
    c.injection.target_snr_db = Some(0.0);
    c.experiment2.ood_classes = vec![Superclass::Cd];
    let loaded = Loaded::new(c, tmp.path()).map_err(e2s)?;
    ecgfilter::stages::synth(&Stage::new(&loaded)).map_err(e2s)?;
    let out = experiment2(&loaded).map_err(e2s)?;
    let row = &out.report.rows[0];
    for ((name, rep, _, test), (should, correct)) in out.curves.iter().zip(&out.test_truth) {
        let n = should.len() as f64;
        let first = test.points.first().unwrap();
        let last = test.points.last().unwrap();
        let co = should.iter().zip(correct).filter(|(s, c)| !**s && **c).count() as f64 / n;
        let sr = should.iter().filter(|s| **s).count() as f64 / n;
        ensure(
            first.rejection_rate == 0.0 && first.custom_accuracy == co && first.threshold == f64::INFINITY,
            format!("{name} rep {rep}: +inf endpoint {first:?}, expected accuracy {co}"),
        )?;
        ensure(
            last.rejection_rate == 1.0 && last.custom_accuracy == sr && last.threshold == f64::NEG_INFINITY,
            format!("{name} rep {rep}: -inf endpoint {last:?}, expected accuracy {sr}"),
        )?;
        let run = out.report.runs.iter().find(|r| &r.scenario == name && r.repetition == *rep).unwrap();
        ensure(run.test_classifier_only == co, "classifier-only accuracy differs from the +inf endpoint")?;
    }
    let sys: Vec<f64> = out.report.runs.iter().map(|r| r.test_system).collect();
    let msg = format!(
        "held-out CD, {} reps, {} test windows ({} to reject): classifier only {:.3} ± {:.3}, system {:.3} ± {:.3}, +{:.1} pp (min system {:.3}); endpoints exact",
        row.repetitions,
        out.report.runs[0].test_windows,
        out.report.runs[0].test_should_reject,
        row.classifier_only_mean,
        row.classifier_only_std,
        row.system_mean,
        row.system_std,
        row.improvement_pp,
        sys.iter().copied().fold(f64::INFINITY, f64::min)
    );
    if row.improvement_pp >= 10.0 {
        Ok(msg)
    } else {
        Err(format!("improvement below 10 pp; {msg}"))
    }
}

// ---------------------------------------------------------------- determinism

const STAGES: [&str; 14] = [
    "synth",
    "ingest",
    "scenario",
    "calibrate",
    "inject",
    "train-filter",
    "train-classifier",
    "nas",
    "score",
    "evaluate",
    "sweep",
    "report",
    "experiment1",
    "experiment2",
];

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Verdict {
    let cfg_src = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.json");
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(cfg_src).map_err(e2s)?).map_err(e2s)?;
    v["paths"] = serde_json::json!({ "data_root": "data", "out": "out" });
    let text = serde_json::to_string_pretty(&v).map_err(e2s)?;
    let runs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for dir in &runs {
        let cfg = dir.path().join("run.json");
        fs::write(&cfg, &text).map_err(e2s)?;
        for s in STAGES {
            let o = Command::new(env!("CARGO_BIN_EXE_ecgfilter"))
                .args([s, "--config"])
                .arg(&cfg)
                .env_remove("ECGFILTER_DATA_ROOT")
                .output()
                .map_err(e2s)?;
            ensure(o.status.success(), format!("{s} failed: {}", String::from_utf8_lossy(&o.stderr)))?;
        }
    }
    let a = tree(&runs[0].path().join("out"));
    let b = tree(&runs[1].path().join("out"));
    ensure(a.keys().eq(b.keys()), "reruns produced different file sets")?;
    let mut ledgers = 0;
    let mut csvs = 0;
    for (k, bytes) in &a {
        ensure(bytes == &b[k], format!("{} differs between reruns", k.display()))?;
        match k.extension().and_then(|e| e.to_str()) {
            Some("jsonl") => ledgers += 1,
            Some("csv") => csvs += 1,
            _ => {}
        }
    }
    ensure(ledgers > 0 && csvs > 0, "nothing to compare")?;
    Ok(format!("{} stages run twice; {} files identical ({ledgers} ledgers, {csvs} CSVs)", STAGES.len(), a.len()))
}

// ---------------------------------------------------------------- driver

fn main() -> ExitCode {
    let only: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let criteria: [(&str, &str, fn() -> Verdict); 7] = [
        ("oracles", "oracle equivalences (< 1 min)", oracles),
        ("numerics", "numerical suites (< 5 min)", numerics),
        ("structure", "structural assertions", structure),
        ("calibration", "noise calibration loop, +-1.5 dB (< 2 min)", calibration),
        ("experiment1", "scaled-down detector comparison, AUC >= 0.95 (< 10 min)", experiment1_analogue),
        ("experiment2", "scaled-down filtered system, +10 pp and exact endpoints (< 15 min)", experiment2_analogue),
        ("determinism", "byte-identical reruns", determinism),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (key, title, f) in criteria {
        if only.as_deref().is_some_and(|o| !key.contains(o)) {
            continue;
        }
        let t0 = Instant::now();
        let verdict = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = t0.elapsed().as_secs_f64();
        match verdict {
            Ok(d) => println!("PASS  {key:<12} {title} [{secs:.1} s]: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL  {key:<12} {title} [{secs:.1} s]: {d}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
