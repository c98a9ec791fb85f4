//! Acceptance gate. Each test prints one `criterion N ... PASS|FAIL` line
//! and fails when its check or its time budget is missed.

mod common;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{desk_scene, desk_split, prepared, tiny_config};
use fusionbench::dataset::{fit_stats, rebalance_indices, RebalancePlan, BAND_NAMES};
use fusionbench::evaluation::auc_macro;
use fusionbench::ingest::{build_samples, Label, Modality, TileSample};
use fusionbench::models::{adapt_weight_tensor, BackboneSpec, FusionInput, FusionModel, FusionModelSpec, Strategy};
use fusionbench::nn::{Conv2d, ConvInit, Mode, Module};
use fusionbench::pipeline::evaluate;
use fusionbench::synthgen::generate_scene;
use fusionbench::tensor::Tensor;
use fusionbench::training::{loss, run_experiment, run_schedule};

fn verdict(n: usize, name: &str, ok: bool, elapsed: Duration, budget: Duration, detail: &str) {
    let within = elapsed <= budget;
    let status = if ok && within { "PASS" } else { "FAIL" };
    // straight to the stream so the line shows even when output is captured
    let line = format!("criterion {n:>2} {name:<28} {status}  ({elapsed:.2?} of {budget:.0?}) {detail}\n");
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(ok, "criterion {n} ({name}) failed: {detail}");
    assert!(within, "criterion {n} ({name}) took {elapsed:.2?}, budget {budget:.0?}");
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

#[test]
fn criterion_01_weight_adaptation() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst_sum = 0.0f64;
    let mut worst_response = 0.0f64;
    for _ in 0..100 {
        let mut source = Conv2d::<f32>::new(3, 16, 7, 2, 3, false, ConvInit::KaimingFanOut, &mut rng);
        let scale = rng.random_range(0.1..10.0);
        source.weight.value = source.weight.value.map(|w| w * scale);
        let level: f32 = rng.random_range(-3.0..3.0);
        let reference = source.forward(&Tensor::full(&[1, 3, 12, 12], level), Mode::Eval);
        for target in [1usize, 5] {
            let adapted = adapt_weight_tensor(&source.weight.value, target).unwrap();
            let (filters, k) = (16, 7 * 7);
            for f in 0..filters {
                let before: f64 = source.weight.value.data()[f * 3 * k..(f + 1) * 3 * k].iter().map(|&w| w as f64).sum();
                let after: f64 = adapted.data()[f * target * k..(f + 1) * target * k].iter().map(|&w| w as f64).sum();
                worst_sum = worst_sum.max((before - after).abs());
            }
            let mut conv = source.clone();
            conv.replace_weight(adapted).unwrap();
            let response = conv.forward(&Tensor::full(&[1, target, 12, 12], level), Mode::Eval);
            for (a, b) in reference.data().iter().zip(response.data()) {
                worst_response = worst_response.max((a - b).abs() as f64);
            }
        }
    }
    verdict(
        1,
        "weight adaptation",
        worst_sum < 1e-5 && worst_response < 1e-4,
        start.elapsed(),
        secs(10),
        &format!("max sum error {worst_sum:.2e}, max response error {worst_response:.2e}"),
    );
}

fn tiny_moe_spec() -> FusionModelSpec {
    let mut spec = FusionModelSpec::new(Strategy::Moe, BackboneSpec::tiny_cnn(16));
    spec.per_modality_feature_dim = 16;
    spec.gate_hidden_dim = 16;
    spec
}

#[test]
fn criterion_02_gating_simplex() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut model = FusionModel::<f32>::build(&tiny_moe_spec(), None, &mut rng).unwrap();
    let (mut worst_gate, mut worst_mix, mut negative, mut seen) = (0.0f64, 0.0f64, 0usize, 0usize);
    for _ in 0..20 {
        let batch = 50;
        // vary input scale so gate logits range from near-uniform to saturated
        let std = 10f64.powf(rng.random_range(-2.0..2.0));
        let x = FusionInput::Modalities {
            thermal: Tensor::randn(&[batch, 1, 4, 4], std, &mut rng),
            rgb: Tensor::randn(&[batch, 3, 16, 16], std, &mut rng),
            lidar: Tensor::randn(&[batch, 1, 8, 8], std, &mut rng),
        };
        let out = model.forward(&x, Mode::Eval).unwrap();
        let gates = out.gates.as_ref().unwrap();
        let mix = out.probabilities();
        for b in 0..batch {
            let g = gates.row(b);
            negative += g.iter().filter(|&&w| w < 0.0).count();
            worst_gate = worst_gate.max((g.iter().map(|&w| w as f64).sum::<f64>() - 1.0).abs());
            worst_mix = worst_mix.max((mix.row(b).iter().map(|&p| p as f64).sum::<f64>() - 1.0).abs());
            seen += 1;
        }
    }
    verdict(
        2,
        "gating simplex",
        seen == 1000 && negative == 0 && worst_gate < 1e-6 && worst_mix < 1e-6,
        start.elapsed(),
        secs(30),
        &format!("{seen} inputs, {negative} negative weights, max gate |sum-1| {worst_gate:.2e}, max mixture |sum-1| {worst_mix:.2e}"),
    );
}

#[test]
fn criterion_03_parameter_ratio() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let count = |strategy: Strategy, rng: &mut ChaCha8Rng| {
        let spec = FusionModelSpec::new(strategy, BackboneSpec::paper_resnet50(false));
        FusionModel::<f32>::build(&spec, None, rng).unwrap().num_params()
    };
    let early = count(Strategy::Early, &mut rng);
    let late = count(Strategy::Late, &mut rng);
    let ratio = late as f64 / early as f64;
    verdict(
        3,
        "parameter ratio",
        (2.5..=3.5).contains(&ratio),
        start.elapsed(),
        secs(60),
        &format!("late {late} / early {early} = {ratio:.3}"),
    );
}

/// Mean over scorable classes of the fraction of (positive, negative) pairs
/// ranked correctly, ties counting one half.
fn brute_force_auc(scores: &[f64], k: usize, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    let mut classes = 0;
    for c in 0..k {
        let pos: Vec<f64> = (0..labels.len()).filter(|&i| labels[i] == c).map(|i| scores[i * k + c]).collect();
        let neg: Vec<f64> = (0..labels.len()).filter(|&i| labels[i] != c).map(|i| scores[i * k + c]).collect();
        if pos.is_empty() || neg.is_empty() {
            continue;
        }
        let mut wins = 0.0;
        for &p in &pos {
            for &n in &neg {
                wins += if p > n {
                    1.0
                } else if p == n {
                    0.5
                } else {
                    0.0
                };
            }
        }
        total += wins / (pos.len() * neg.len()) as f64;
        classes += 1;
    }
    total / classes as f64
}

#[test]
fn criterion_04_auc_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut worst = 0.0f64;
    let mut checked = 0;
    while checked < 500 {
        let k = rng.random_range(2..=4);
        let n = rng.random_range(2..=12);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let distinct: HashSet<usize> = labels.iter().copied().collect();
        if distinct.len() < 2 {
            continue;
        }
        // coarse scores force ties
        let levels = rng.random_range(2..20);
        let scores: Vec<f64> = (0..n * k).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let got = auc_macro(&scores, k, &labels).unwrap();
        worst = worst.max((got - brute_force_auc(&scores, k, &labels)).abs());
        checked += 1;
    }
    verdict(
        4,
        "auc oracle",
        worst <= 1e-12,
        start.elapsed(),
        secs(30),
        &format!("{checked} instances, max deviation {worst:.2e}"),
    );
}

/// Step-by-step reading of the stopping rule: track the running best and the
/// strictly-lower epochs since it was set; an equal epoch changes nothing.
/// Returns (epochs run, best epoch), both 1-based.
fn simulate_stopping(aucs: &[f64], patience: usize) -> (usize, usize) {
    let mut best = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut lower_since_best = 0;
    for (i, &a) in aucs.iter().enumerate() {
        let epoch = i + 1;
        if a > best {
            best = a;
            best_epoch = epoch;
            lower_since_best = 0;
        } else if a < best {
            lower_since_best += 1;
            if lower_since_best > patience {
                return (epoch, best_epoch);
            }
        }
    }
    (aucs.len(), best_epoch)
}

#[test]
fn criterion_05_stopping_rule() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let patience = 10;
    let mut mismatches = 0;
    let mut early = 0;
    for _ in 0..1000 {
        let len = rng.random_range(1..=120);
        let levels = rng.random_range(3..200);
        // a noisy upward drift, quantized so ties with the best occur
        let drift = rng.random_range(0.0..0.02);
        let aucs: Vec<f64> = (0..len)
            .map(|i| {
                let v: f64 = 0.5 + drift * i as f64 + rng.random_range(-0.1..0.1);
                (v.clamp(0.0, 1.0) * levels as f64).round() / levels as f64
            })
            .collect();
        let schedule = run_schedule(patience, aucs.len(), |e| Ok(aucs[e - 1]), |_| Ok(())).unwrap();
        let expected = simulate_stopping(&aucs, patience);
        if (schedule.stopped_epoch, schedule.best_epoch) != expected {
            mismatches += 1;
        }
        early += schedule.stopped_early as usize;
    }
    verdict(
        5,
        "stopping rule",
        mismatches == 0 && early > 0,
        start.elapsed(),
        secs(10),
        &format!("1000 sequences, {early} stopped early, {mismatches} mismatches"),
    );
}

#[test]
fn criterion_06_rebalance() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let plan = RebalancePlan::default();
    let mut failures = Vec::new();
    for case in 0..300 {
        let counts: Vec<usize> = (0..4).map(|_| rng.random_range(1..300)).collect();
        let labels: Vec<Label> = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(Label::from_index(c).unwrap(), n))
            .collect();
        let picked = rebalance_indices(&labels, &plan, &mut rng).unwrap();
        for (c, &n) in counts.iter().enumerate() {
            let members: Vec<usize> = picked.iter().copied().filter(|&i| labels[i].index() == c).collect();
            let unique: HashSet<usize> = members.iter().copied().collect();
            let originals = labels.iter().filter(|l| l.index() == c).count();
            let ok = members.len() == 88
                && if n >= 88 { unique.len() == 88 } else { unique.len() == originals };
            if !ok {
                failures.push(format!("case {case} class {c}: {n} in, {} out, {} unique", members.len(), unique.len()));
            }
        }
    }
    verdict(
        6,
        "rebalance exactness",
        failures.is_empty(),
        start.elapsed(),
        secs(10),
        &format!("300 random count vectors, {} bad classes {:?}", failures.len(), failures.first()),
    );
}

#[test]
fn criterion_07_normalization() {
    let start = Instant::now();
    let spec = desk_scene(0.0, 107);
    let scene = generate_scene(&spec).unwrap();
    let samples = build_samples(&scene.mosaics, &spec.grid(), &scene.points).unwrap();
    let train: Vec<TileSample> = samples.into_iter().filter(|s| s.cell.col < 18).collect();
    let stats = fit_stats(&train).unwrap();
    let normalized: Vec<TileSample> = train.iter().map(|s| stats.normalize(s.clone()).unwrap()).collect();
    let mut worst_mean = 0.0f64;
    let mut worst_std = 0.0f64;
    let mut band = 0;
    for m in Modality::ALL {
        for b in 0..m.bands() {
            let values: Vec<f64> = normalized.iter().flat_map(|s| s.tile(m).band(b).iter().map(|&v| v as f64)).collect();
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let std = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
            worst_mean = worst_mean.max(mean.abs());
            worst_std = worst_std.max((std - 1.0).abs());
            band += 1;
        }
    }
    assert_eq!(band, BAND_NAMES.len());
    verdict(
        7,
        "normalization",
        worst_mean < 1e-6 && worst_std < 1e-4,
        start.elapsed(),
        secs(10),
        &format!("max |mean| {worst_mean:.2e}, max |std-1| {worst_std:.2e}"),
    );
}

#[test]
fn criterion_08_gradient_check() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    let mut spec = FusionModelSpec::new(Strategy::Moe, BackboneSpec::tiny_cnn(8));
    spec.per_modality_feature_dim = 6;
    spec.gate_hidden_dim = 5;
    let mut model = FusionModel::<f64>::build(&spec, None, &mut rng).unwrap();
    let x = FusionInput::Modalities {
        thermal: Tensor::randn(&[2, 1, 4, 4], 1.0, &mut rng),
        rgb: Tensor::randn(&[2, 3, 16, 16], 1.0, &mut rng),
        lidar: Tensor::randn(&[2, 1, 8, 8], 1.0, &mut rng),
    };
    let labels = [2usize, 0];
    let objective = |m: &mut FusionModel<f64>| {
        let out = m.forward(&x, Mode::Eval).unwrap();
        loss(Strategy::Moe, &out, &labels).unwrap().value
    };
    let out = model.forward(&x, Mode::Train).unwrap();
    let l = loss(Strategy::Moe, &out, &labels).unwrap();
    model.zero_grad();
    model.backward(&l.grad).unwrap();
    let mut analytic = BTreeMap::new();
    model.visit_params(&mut |name, p| {
        if name.starts_with("gate.") || name.starts_with("experts.") {
            analytic.insert(name.to_string(), p.grad().to_vec());
        }
    });
    let eps = 1e-6;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (name, grads) in &analytic {
        for (i, &a) in grads.iter().enumerate() {
            let nudge = |m: &mut FusionModel<f64>, d: f64| {
                m.visit_params_mut(&mut |k, p| {
                    if k == name {
                        p.value.data_mut()[i] += d;
                    }
                })
            };
            nudge(&mut model, eps);
            let up = objective(&mut model);
            nudge(&mut model, -2.0 * eps);
            let down = objective(&mut model);
            nudge(&mut model, eps);
            let numeric = (up - down) / (2.0 * eps);
            let scale = a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((a - numeric).abs() / scale);
            checked += 1;
        }
    }
    verdict(
        8,
        "moe gradient check",
        worst < 1e-3,
        start.elapsed(),
        secs(60),
        &format!("{checked} gate and expert-head entries, max relative error {worst:.2e}"),
    );
}

#[test]
fn criterion_09_synthetic_end_to_end() {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut ok = true;
    for (level, lo, hi) in [(0.0, 0.90, 1.0), (1.0, 0.35, 0.65)] {
        let dir = tempfile::tempdir().unwrap();
        let data = prepared(&desk_scene(level, 109), &desk_split(), dir.path());
        let per_class = |l: Label| data.train.iter().chain(&data.val).chain(&data.test).filter(|s| s.label == l).count();
        assert!(Label::FEATURES.iter().all(|&l| per_class(l) >= 40));
        for strategy in Strategy::ALL {
            run_experiment::<f32>(&data, &tiny_config(strategy, dir.path(), 3, 40)).unwrap();
        }
        let eval = evaluate::<f32>(dir.path(), &data.test, 64).unwrap();
        for strategy in Strategy::ALL {
            let aucs: Vec<f64> = eval.metrics.iter().filter(|t| t.strategy == strategy).map(|t| t.auc).collect();
            let pass = aucs.len() == 3 && aucs.iter().all(|a| (lo..=hi).contains(a));
            ok &= pass;
            lines.push(format!("level {level} {strategy} {aucs:.3?}"));
        }
    }
    verdict(
        9,
        "synthetic end-to-end",
        ok,
        start.elapsed(),
        secs(20 * 60),
        &lines.join("; "),
    );
}

#[test]
fn criterion_10_report_shape() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let data = prepared(&desk_scene(0.0, 110), &desk_split(), dir.path());
    for strategy in Strategy::ALL {
        run_experiment::<f32>(&data, &tiny_config(strategy, dir.path(), 3, 2)).unwrap();
    }
    let eval = evaluate::<f32>(dir.path(), &data.test, 64).unwrap();
    let report = dir.path().join("report");
    let mut pngs: Vec<String> = fs::read_dir(&report)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".png"))
        .collect();
    pngs.sort();
    let table = fs::read_to_string(report.join("gating_table.txt")).unwrap();
    let entries_per_row: Vec<usize> = ["Thermal", "RGB", "LiDAR"]
        .iter()
        .map(|m| table.lines().find(|l| l.starts_with(m)).map_or(0, |l| l.matches('±').count()))
        .collect();
    let gating = eval.gating.unwrap();
    let cells_complete = gating.cells.len() == 3
        && gating.cells.iter().all(|row| row.len() == 3 && row.iter().all(|c| c.is_some_and(|c| c.n >= 2)));
    let ok = pngs == ["empty.png", "midden.png", "mound.png", "overall.png", "water.png"]
        && eval.metrics.len() == 9
        && entries_per_row == [3, 3, 3]
        && cells_complete;
    verdict(
        10,
        "report shape",
        ok,
        start.elapsed(),
        secs(60),
        &format!("plots {pngs:?}, gating entries per row {entries_per_row:?}"),
    );
}

#[test]
fn criterion_11_determinism() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let data = prepared(&desk_scene(0.0, 111), &desk_split(), dir.path());
    let mut histories = Vec::new();
    let mut checkpoints = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let mut cfg = tiny_config(Strategy::Moe, &out, 1, 6);
        cfg.trials = Some(0..1);
        let result = run_experiment::<f32>(&data, &cfg).unwrap().results.remove(0);
        checkpoints.push(fs::read(result.checkpoint.as_ref().unwrap()).unwrap());
        histories.push(result.history);
    }
    let ok = histories[0] == histories[1] && checkpoints[0] == checkpoints[1];
    verdict(
        11,
        "determinism",
        ok,
        start.elapsed(),
        secs(20 * 60),
        &format!("{} epochs, identical histories and checkpoints: {ok}", histories[0].len()),
    );
}
