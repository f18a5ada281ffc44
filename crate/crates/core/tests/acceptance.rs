//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use reseg::autodiff::{gradient_check, random_batch};
use reseg::data::{synth_in_memory, Sample, Split, SynthConfig};
use reseg::layers::{directional_sweep, renet_layer, split_patches, Direction, FrontendStage, ReNetParams, SweepMode, SweepParams, GruParams};
use reseg::metrics::ConfusionMatrix;
use reseg::model::{Model, ModelConfig, ReNetLayerConfig, UpsampleLayerConfig};
use reseg::tensor::{conv2d, conv2d_adjoint, transposed_conv2d, ConvSpec, Padding, Tensor};
use reseg::training::{
    adadelta_update, evaluate, median_frequency_weights, record_objective, train, AdadeltaState, LossConfig,
    TrainConfig, TrainState,
};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

fn within(elapsed: Duration, budget: Duration) -> String {
    format!("{:.2}s of {:.0}s budget", elapsed.as_secs_f64(), budget.as_secs_f64())
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig::tiny();
    let model: Model<f64> = Model::build(&cfg, 0).expect("tiny profile builds");
    let (x, y) = random_batch(&cfg, 2, 1);
    let report = match gradient_check(&model, &x, &y, &LossConfig::default(), 1e-4) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let elapsed = start.elapsed();
    let budget = Duration::from_secs(60);
    outcome(
        report.passed && report.max_rel() < 1e-4 && elapsed < budget,
        format!("max relative error {:.2e} < 1e-4; {}", report.max_rel(), within(elapsed, budget)),
    )
}

fn adjoint_identity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let (kh, kw) = (rng.random_range(1..5), rng.random_range(1..5));
        let (c, f) = (rng.random_range(1..6), rng.random_range(1..6));
        let (lhs, rhs) = if i % 2 == 0 {
            // general direct convolution against its adjoint
            let spec = ConvSpec::new(kh, kw, c, f)
                .with_stride(rng.random_range(1..4), rng.random_range(1..4))
                .with_padding(Padding {
                    top: rng.random_range(0..3),
                    bottom: rng.random_range(0..3),
                    left: rng.random_range(0..3),
                    right: rng.random_range(0..3),
                });
            let (h, w) = (rng.random_range(kh..kh + 9), rng.random_range(kw..kw + 9));
            let x = random(&[h, w, c], &mut rng);
            let k = random(&[kh, kw, c, f], &mut rng);
            let (oh, ow) = spec.output_extents(h, w).expect("kernel fits");
            let y = random(&[oh, ow, f], &mut rng);
            let ax = conv2d(&x, &spec, &k, &Tensor::zeros(vec![f])).expect("conv");
            let aty = conv2d_adjoint(&y, &spec, &k, h, w).expect("adjoint");
            (ax.dot(&y).expect("same shape"), x.dot(&aty).expect("same shape"))
        } else {
            // tied transposed convolution against the direct convolution it undoes
            let up = ConvSpec::tied(kh, kw, c, f);
            let (h, w) = (rng.random_range(1..7), rng.random_range(1..7));
            let x = random(&[h, w, c], &mut rng);
            let k = random(&[kh, kw, f, c], &mut rng);
            let y = random(&[h * kh, w * kw, f], &mut rng);
            let tx = transposed_conv2d(&x, &up, &k, &Tensor::zeros(vec![f])).expect("transposed");
            let cy = conv2d(&y, &up.adjoint(), &k, &Tensor::zeros(vec![c])).expect("conv");
            (tx.dot(&y).expect("same shape"), x.dot(&cy).expect("same shape"))
        };
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE));
    }
    let elapsed = start.elapsed();
    let budget = Duration::from_secs(10);
    outcome(
        worst <= 1e-10 && elapsed < budget,
        format!("worst relative gap {worst:.2e} <= 1e-10 over 100 pairs; {}", within(elapsed, budget)),
    )
}

fn random_config(rng: &mut ChaCha8Rng) -> ModelConfig {
    let mut frontend = Vec::new();
    let mut stem = 1;
    for _ in 0..rng.random_range(0..3) {
        if rng.random_bool(0.5) {
            let kernel = [1, 3, 5][rng.random_range(0..3)];
            frontend.push(FrontendStage::Conv {
                kernel,
                out_channels: rng.random_range(1..5),
                padding: kernel / 2,
            });
        } else {
            frontend.push(FrontendStage::Pool);
            stem *= 2;
        }
    }
    let renet: Vec<ReNetLayerConfig> = (0..rng.random_range(1..3))
        .map(|_| ReNetLayerConfig {
            patch: [rng.random_range(1..3), rng.random_range(1..3)],
            units: rng.random_range(1..5),
        })
        .collect();
    let down_h = stem * renet.iter().map(|l| l.patch[0]).product::<usize>();
    let down_w = stem * renet.iter().map(|l| l.patch[1]).product::<usize>();
    // split the total factor over one or two upsampling layers
    let mut upsample = vec![UpsampleLayerConfig {
        filter: [down_h, down_w],
        channels: rng.random_range(1..5),
    }];
    if down_h % 2 == 0 && down_w % 2 == 0 && rng.random_bool(0.5) {
        upsample[0].filter = [down_h / 2, down_w / 2];
        upsample.push(UpsampleLayerConfig {
            filter: [2, 2],
            channels: rng.random_range(1..5),
        });
    }
    let height = down_h * rng.random_range(1..4);
    let width = down_w * rng.random_range(1..4);
    ModelConfig {
        input: reseg::model::InputShape {
            height,
            width,
            channels: rng.random_range(1..4),
        },
        frontend,
        frozen_frontend: false,
        renet,
        upsample,
        classes: rng.random_range(2..6),
        seed: rng.random(),
    }
}

fn shape_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst_sum = 0.0f64;
    for i in 0..50 {
        let cfg = random_config(&mut rng);
        let model: Model<f64> = match Model::build(&cfg, cfg.seed) {
            Ok(m) => m,
            Err(e) => return outcome(false, format!("config {i} rejected: {e}")),
        };
        let (h, w, c) = (cfg.input.height, cfg.input.width, cfg.input.channels);
        let image = Tensor::from_fn(vec![h, w, c], |_| rng.random_range(0.0..1.0));
        let probs = match model.forward(&image) {
            Ok(p) => p,
            Err(e) => return outcome(false, format!("config {i}: {e}")),
        };
        if probs.shape() != [h, w, cfg.classes] {
            return outcome(false, format!("config {i}: output {:?} for input {h}×{w}", probs.shape()));
        }
        for px in probs.data().chunks(cfg.classes) {
            worst_sum = worst_sum.max((px.iter().sum::<f64>() - 1.0).abs());
        }
    }
    outcome(
        worst_sum <= 1e-6,
        format!("50 configs keep input extents; worst |Σp − 1| = {worst_sum:.1e}"),
    )
}

fn receptive_field() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let params: ReNetParams<f64> = ReNetParams::init(3, 2, 2, 4, &mut rng);
    // 8×8 input with 2×2 patches is a 4×4 patch grid
    let x = Tensor::from_fn(vec![8, 8, 3], |_| rng.random_range(0.0..1.0));
    let base = renet_layer(&params, &x, SweepMode::Sequential).expect("layer");
    let mut min_change = f64::INFINITY;
    for pi in 0..4 {
        for pj in 0..4 {
            let mut xp = x.clone();
            for r in 2 * pi..2 * pi + 2 {
                for c in 2 * pj..2 * pj + 2 {
                    for ch in 0..3 {
                        xp.data_mut()[(r * 8 + c) * 3 + ch] += 0.5;
                    }
                }
            }
            let out = renet_layer(&params, &xp, SweepMode::Sequential).expect("layer");
            for (a, b) in base.data().chunks(8).zip(out.data().chunks(8)) {
                let change = a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
                min_change = min_change.min(change);
            }
        }
    }
    outcome(
        min_change > 1e-6,
        format!("smallest output change over 16 patches × 16 positions: {min_change:.2e} > 1e-6"),
    )
}

fn sweep_determinism() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for i in 0..20 {
        let (h, w, c) = (2 * rng.random_range(1..12), 2 * rng.random_range(1..12), rng.random_range(1..5));
        let units = rng.random_range(1..9);
        let x: Tensor<f32> = Tensor::from_fn(vec![h, w, c], |_| rng.random_range(-1.0..1.0));
        let layer: ReNetParams<f32> = ReNetParams::init(c, 2, 2, units, &mut rng);
        let seq = renet_layer(&layer, &x, SweepMode::Sequential).expect("sequential");
        let par = renet_layer(&layer, &x, SweepMode::Parallel).expect("parallel");
        let grid = split_patches(&x, 2, 2).expect("tiles").into_vectors();
        let sweep = SweepParams::new(Direction::Left, GruParams::init(4 * c, units, &mut rng));
        let s1 = directional_sweep(&sweep, &grid, SweepMode::Sequential).expect("sweep");
        let s2 = directional_sweep(&sweep, &grid, SweepMode::Parallel).expect("sweep");
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        if bits(&seq) != bits(&par) || bits(&s1) != bits(&s2) {
            return outcome(false, format!("input {i} ({h}×{w}×{c}) differs between modes"));
        }
    }
    outcome(true, "20 random inputs bitwise identical across sequential and parallel sweeps")
}

fn train_samples(ds: &reseg::data::Dataset, splits: &[Split]) -> Vec<Sample> {
    splits.iter().flat_map(|&s| ds.split(s).into_iter().cloned()).collect()
}

fn overfit_run(samples: &[&Sample], seed: u64) -> (Option<usize>, f64, f64) {
    let cfg = ModelConfig::tiny().with_input(32, 32);
    let model = Model::build(&cfg, seed).expect("tiny profile builds");
    let mut state = TrainState::new(model);
    let tc = TrainConfig {
        max_epochs: 200,
        seed,
        ..TrainConfig::default()
    };
    let log = train(&mut state, samples, samples, &tc, &LossConfig::default()).expect("training runs");
    let first = log.records.iter().find(|r| r.global_acc >= 0.99).map(|r| r.epoch);
    let best = log.records.iter().map(|r| r.global_acc).fold(0.0, f64::max);
    let last = log.records.last().map_or(0.0, |r| r.global_acc);
    (first, best, last)
}

fn overfit() -> Outcome {
    let start = Instant::now();
    let ds = synth_in_memory(&SynthConfig::new(8, 32, 32, 2, 7)).expect("synthetic set");
    let all = train_samples(&ds, &[Split::Train, Split::Valid, Split::Test]);
    let refs: Vec<&Sample> = all.iter().collect();
    let (first, best, last) = overfit_run(&refs, 1);
    let elapsed = start.elapsed();
    let (_, _, again) = overfit_run(&refs, 1);
    let budget = Duration::from_secs(300);
    let reached = first.map_or("never".to_string(), |e| format!("epoch {e}"));
    outcome(
        first.is_some() && elapsed < budget && (last - again).abs() <= 0.005,
        format!(
            "≥99% train pixel accuracy at {reached} (best {:.2}%, final {:.2}%, rerun {:.2}%); {}",
            100.0 * best,
            100.0 * last,
            100.0 * again,
            within(elapsed, budget)
        ),
    )
}

fn rare_class_accuracy(ds: &reseg::data::Dataset, weights: Option<Vec<f64>>, epochs: usize) -> f64 {
    let train_set: Vec<&Sample> = ds.split(Split::Train);
    let held_out: Vec<&Sample> = ds.split(Split::Valid).into_iter().chain(ds.split(Split::Test)).collect();
    let cfg = ModelConfig::tiny().with_input(32, 32);
    let mut state = TrainState::new(Model::build(&cfg, 5).expect("builds"));
    let tc = TrainConfig {
        max_epochs: epochs,
        seed: 5,
        eval_every: epochs,
        ..TrainConfig::default()
    };
    let loss = LossConfig {
        class_weights: weights,
        ..LossConfig::default()
    };
    train(&mut state, &train_set, &held_out, &tc, &loss).expect("training runs");
    let cm = evaluate(&state.model, &held_out, None).expect("evaluates");
    cm.per_class_accuracy().expect("classes present").0[1].unwrap_or(0.0)
}

fn class_balancing() -> Outcome {
    let mut synth = SynthConfig::new(40, 32, 32, 2, 11);
    synth.min_size = 7;
    synth.max_size = 8;
    let ds = synth_in_memory(&synth).expect("synthetic set");
    let freqs = ds.class_frequencies(Split::Train).expect("train split");
    let ratio = freqs[0] / freqs[1];
    let weights = median_frequency_weights(&freqs).expect("weights");
    let epochs = 15;
    let plain = rare_class_accuracy(&ds, None, epochs);
    let balanced = rare_class_accuracy(&ds, Some(weights), epochs);
    outcome(
        balanced > plain && (15.0..=25.0).contains(&ratio),
        format!(
            "imbalance 1:{ratio:.1}; rare-class accuracy after {epochs} epochs: balanced {:.1}% vs unbalanced {:.1}%",
            100.0 * balanced,
            100.0 * plain
        ),
    )
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let k = 4usize;
    let void = 9u32;
    let mut pairs = Vec::with_capacity(1000);
    for i in 0..1000 {
        let pred: Vec<u32> = (0..256).map(|_| rng.random_range(0..k as u32)).collect();
        let target: Vec<u32> = (0..256)
            .map(|_| if rng.random_bool(0.1) { void } else { rng.random_range(0..k as u32) })
            .collect();
        let mut cm = ConfusionMatrix::new(k);
        cm.accumulate(&pred, &target, Some(void)).expect("valid labels");
        // brute force straight from the pixels
        let mut tp = vec![0u64; k];
        let mut in_truth = vec![0u64; k];
        let mut in_pred = vec![0u64; k];
        let mut total = 0u64;
        for (&p, &t) in pred.iter().zip(&target) {
            if t == void {
                continue;
            }
            total += 1;
            in_truth[t as usize] += 1;
            in_pred[p as usize] += 1;
            if p == t {
                tp[t as usize] += 1;
            }
        }
        let global = tp.iter().sum::<u64>() as f64 / total as f64;
        let acc: Vec<Option<f64>> =
            (0..k).map(|c| (in_truth[c] > 0).then(|| tp[c] as f64 / in_truth[c] as f64)).collect();
        let iou: Vec<Option<f64>> = (0..k)
            .map(|c| {
                let union = in_truth[c] + in_pred[c] - tp[c];
                (union > 0).then(|| tp[c] as f64 / union as f64)
            })
            .collect();
        let mean = |v: &[Option<f64>]| {
            let d: Vec<f64> = v.iter().flatten().copied().collect();
            d.iter().sum::<f64>() / d.len() as f64
        };
        let ok = cm.total() == total
            && cm.global_accuracy().ok() == Some(global)
            && cm.per_class_accuracy().ok() == Some((acc.clone(), mean(&acc)))
            && cm.iou().ok() == Some((iou.clone(), mean(&iou)));
        if !ok {
            return outcome(false, format!("pair {i} disagrees with the pixel oracle"));
        }
        pairs.push((pred, target));
    }
    let mut sequential = ConfusionMatrix::new(k);
    for (p, t) in &pairs {
        sequential.accumulate(p, t, Some(void)).expect("valid");
    }
    let parallel = pairs
        .par_iter()
        .map(|(p, t)| {
            let mut cm = ConfusionMatrix::new(k);
            cm.accumulate(p, t, Some(void)).expect("valid");
            cm
        })
        .reduce(
            || ConfusionMatrix::new(k),
            |mut a, b| {
                a.merge(&b).expect("same k");
                a
            },
        );
    outcome(
        parallel == sequential,
        "1000 random 16×16 pairs with void match the pixel oracle exactly; parallel merge equals sequential",
    )
}

fn orthonormal_init() -> Outcome {
    let mut worst = 0.0f64;
    let mut count = 0;
    for (cfg, seed) in [(ModelConfig::tiny(), 0), (ModelConfig::camvid_row(64, 64, 11), 1)] {
        let model: Model<f64> = Model::build(&cfg, seed).expect("builds");
        for (info, t) in model.params() {
            if !info.id.contains(".r_") {
                continue;
            }
            count += 1;
            let u = t.shape()[0];
            for a in 0..u {
                for b in 0..u {
                    let dot: f64 = (0..u).map(|r| t.data()[r * u + a] * t.data()[r * u + b]).sum();
                    let eye = if a == b { 1.0 } else { 0.0 };
                    worst = worst.max((dot - eye).abs());
                }
            }
        }
    }
    outcome(
        worst <= 1e-6,
        format!("{count} recurrent matrices; max |QᵀQ − I| = {worst:.1e} <= 1e-6"),
    )
}

fn camvid_row_buildability() -> Outcome {
    let cfg = ModelConfig::camvid_row(64, 64, 11);
    if let Err(e) = cfg.validate() {
        return outcome(false, e.to_string());
    }
    let mut model: Model<f32> = match Model::build(&cfg, 0) {
        Ok(m) => m,
        Err(e) => return outcome(false, e.to_string()),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let image: Tensor<f32> = Tensor::from_fn(vec![64, 64, 3], |_| rng.random_range(0.0..1.0));
    let target: Vec<u32> = (0..64 * 64).map(|_| rng.random_range(0..11)).collect();
    let mut step = || -> reseg::Result<(Vec<usize>, f32)> {
        let rec = record_objective(&model, std::slice::from_ref(&image), &[&target], &LossConfig::default(), false)?;
        let shape = rec.tape.value(rec.probs[0]).shape().to_vec();
        let loss = rec.tape.value(rec.loss).data()[0];
        let grads = rec.tape.backward()?;
        let mut opt = AdadeltaState::new(&model);
        adadelta_update(&mut model, &grads, &mut opt, 0.001)?;
        Ok((shape, loss))
    };
    match step() {
        Ok((shape, loss)) => outcome(
            shape == [64, 64, 11] && loss.is_finite(),
            format!("patches 2×2,1×1; 100 units; upsample 2×2,1×1 with 50 channels: output {shape:?}, loss {loss:.4}"),
        ),
        Err(e) => outcome(false, e.to_string()),
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient fidelity", gradient_fidelity),
        ("adjoint correctness", adjoint_identity),
        ("shape contract", shape_contract),
        ("receptive field", receptive_field),
        ("sweep parallel determinism", sweep_determinism),
        ("overfit smoke test", overfit),
        ("class balancing", class_balancing),
        ("metric oracles", metric_oracles),
        ("orthonormal initialization", orthonormal_init),
        ("camvid row buildability", camvid_row_buildability),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = run();
        let verdict = if result.passed { "PASS" } else { "FAIL" };
        println!("[{verdict}] {name}: {} ({:.1}s)", result.detail, start.elapsed().as_secs_f64());
        if !result.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
