//! Acceptance suite. Each criterion prints one `PASS`/`FAIL` line; the test
//! fails if any criterion does. Run with
//! `cargo test -p rlpm-cli --test acceptance -- --nocapture`.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rlpm_core::model_io::{self, decode, encode};
use rlpm_core::prototype::{activation_maximize, PrototypeConfig, PrototypeInit};
use rlpm_core::relprop::conservation_report;
use rlpm_core::saliency::{compare_methods, FlipMethod, FlipPolicy, DEFAULT_BATCH_FRACTION};
use rlpm_core::synth::{
    blob_classifier, blob_images, random_patch_net, random_relu_net, toy_resnet, uniform_tensor, RandomNetConfig,
};
use rlpm_core::wholeimage::{dense_to_conv, effective_stride, heatmap, PatchClassifier};
use rlpm_core::{
    accuracy, check_gradient, class_probabilities, explain, gradient_times_input, softmax, train_toy, BlockSpec,
    DeepTaylorPreset, Error, GraphBuilder, InputBounds, LayerKind, RuleConfig, Tensor,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn conservation() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let mut worst = 0.0f64;
    for n in 0..100 {
        let cfg = RandomNetConfig {
            max_depth: 5,
            max_width: 32,
            with_bias: false,
            convolutional: n % 2 == 1,
            classes: 3,
        };
        let net = random_relu_net(&mut rng, &cfg);
        let x = uniform_tensor(&mut rng, net.input_shape(), -1.0, 1.0);
        let map = explain(&net, &x, n % 3, RuleConfig::lrp0()).expect("explain");
        worst = worst.max(conservation_report(&map).leak.abs());
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-6 && elapsed < Duration::from_secs(60),
        format!("max relative deviation {worst:.2e}, {:.2}s", elapsed.as_secs_f64()),
    )
}

fn collapse() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1002);
    let mut worst = 0.0f64;
    for n in 0..50 {
        let cfg = RandomNetConfig {
            max_depth: 5,
            max_width: 32,
            with_bias: false,
            convolutional: n % 2 == 0,
            classes: 3,
        };
        let net = random_relu_net(&mut rng, &cfg);
        for k in 0..10 {
            let x = uniform_tensor(&mut rng, net.input_shape(), -1.0, 1.0);
            let a = explain(&net, &x, k % 3, RuleConfig::lrp0()).expect("explain");
            let b = gradient_times_input(&net, &x, k % 3).expect("gradient");
            for (p, q) in a.values.data().iter().zip(b.values.data()) {
                worst = worst.max(rel_err(*p, *q));
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-8 && elapsed < Duration::from_secs(60),
        format!("max relative error {worst:.2e}, {:.2}s", elapsed.as_secs_f64()),
    )
}

fn gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1003);
    let mut worst = 0.0f64;
    let (mut checked, mut kinks) = (0, 0);
    for n in 0..50 {
        let cfg = RandomNetConfig {
            convolutional: n % 2 == 1,
            with_bias: true,
            ..Default::default()
        };
        let net = random_relu_net(&mut rng, &cfg);
        let x = uniform_tensor(&mut rng, net.input_shape(), -1.0, 1.0);
        let report = check_gradient(&net, &x, n % 3, 1e-5).expect("gradient check");
        worst = worst.max(report.max_rel_error);
        checked += report.checked;
        kinks += report.kinks.len();
    }
    outcome(
        worst <= 1e-4,
        format!("max relative error {worst:.2e} over {checked} coordinates, {kinks} kinks skipped"),
    )
}

fn crop(img: &Tensor, top: usize, left: usize, p: usize, q: usize) -> Tensor {
    let (_, cols, c) = img.hwc().expect("rank 3");
    let mut data = Vec::with_capacity(p * q * c);
    for r in top..top + p {
        data.extend_from_slice(&img.data()[(r * cols + left) * c..(r * cols + left + q) * c]);
    }
    Tensor::new(vec![p, q, c], data).expect("crop")
}

fn patch_whole_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1004);
    let mut worst = 0.0f64;
    let mut cells = 0;
    for _ in 0..20 {
        let patch = PatchClassifier::new(random_patch_net(&mut rng)).expect("patch net");
        let fconv = dense_to_conv(&patch).expect("conversion");
        let (p, q) = patch.patch_size();
        let c = patch.net().input_shape()[2];
        let (r, s) = (rng.random_range(p..=64), rng.random_range(q..=64));
        let img = uniform_tensor(&mut rng, &[r, s, c], -1.0, 1.0);
        let h = heatmap(&fconv, &img).expect("heatmap");
        let t = effective_stride(&fconv);
        let (u, v) = (h.values.shape()[0], h.values.shape()[1]);
        for i in 0..u {
            for j in 0..v {
                let f = class_probabilities(patch.net(), &crop(&img, i * t[0], j * t[1], p, q)).expect("patch");
                for (a, b) in h.cell(i, j).iter().zip(f.data()) {
                    worst = worst.max(rel_err(*a, *b));
                }
                cells += 1;
            }
        }
    }
    outcome(worst <= 1e-6, format!("max relative error {worst:.2e} over {cells} cells"))
}

fn pixel_flipping() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let net = blob_classifier(&mut rng, 16);
    let train = blob_images(&mut rng, 200, 16);
    let (net, _) = train_toy(&net, &train, 5, 0.01).expect("training");
    let test = blob_images(&mut rng, 100, 16);
    let acc = accuracy(&net, &test).expect("accuracy");
    let images: Vec<Tensor> = test.into_iter().map(|(x, _)| x).collect();
    // blob images are amplitude +-1 plus noise in (-0.1, 0.1)
    let bounds = InputBounds::uniform(-1.1, 1.1).expect("bounds");
    let methods = [
        FlipMethod::Random,
        FlipMethod::Explain(DeepTaylorPreset::bounded(bounds).into()),
    ];
    let table = compare_methods(&net, &images, &methods, FlipPolicy::Zero, DEFAULT_BATCH_FRACTION, 7, 0)
        .expect("compare");
    let (random, taylor) = (table[0].mean_auc, table[1].mean_auc);
    let elapsed = start.elapsed();
    outcome(
        acc >= 0.9 && taylor <= 0.8 * random && elapsed < Duration::from_secs(300),
        format!(
            "accuracy {acc:.2}, AUC deep-taylor {taylor:.4} vs random {random:.4} (ratio {:.3}), {:.2}s",
            taylor / random,
            elapsed.as_secs_f64()
        ),
    )
}

/// Stationary point of the 2-class objective along `d = w_0 - w_1`:
/// `x = t d` with `1 - sigmoid(t |d|^2 + e) = 2 lambda t`.
fn two_class_optimum(d: &[f64], e: f64, lambda: f64) -> Vec<f64> {
    let dd: f64 = d.iter().map(|v| v * v).sum();
    let f = |t: f64| 1.0 - 1.0 / (1.0 + (-(t * dd + e)).exp()) - 2.0 * lambda * t;
    let (mut lo, mut hi) = (0.0, 1.0 / (2.0 * lambda));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    d.iter().map(|v| v * 0.5 * (lo + hi)).collect()
}

fn objectives() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1006);

    let mut shift_err = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(2..10);
        let z: Vec<f64> = (0..n).map(|_| rng.random_range(-20.0..20.0)).collect();
        let c = rng.random_range(-100.0..100.0);
        let a = softmax(&Tensor::from_vec(z.clone())).expect("softmax");
        let b = softmax(&Tensor::from_vec(z.iter().map(|v| v + c).collect())).expect("softmax");
        for (p, q) in a.data().iter().zip(b.data()) {
            shift_err = shift_err.max((p - q).abs());
        }
    }

    let mut monotone = 0;
    for seed in 0..20u64 {
        let net = random_relu_net(
            &mut rng,
            &RandomNetConfig {
                convolutional: seed % 2 == 0,
                with_bias: true,
                ..Default::default()
            },
        );
        let cfg = PrototypeConfig {
            lambda: 0.01,
            steps: 50,
            step_size: 0.5,
            init: PrototypeInit::SeededGaussian { sigma: 0.1, seed },
            target_class: (seed % 3) as usize,
        };
        let (_, trace) = activation_maximize(&net, &cfg).expect("prototype");
        if trace.windows(2).all(|w| w[1] >= w[0]) {
            monotone += 1;
        }
    }

    let w = vec![0.8, -0.3, -0.5, 0.4, 1.2, 0.1];
    let bias = vec![0.2, -0.1];
    let d: Vec<f64> = (0..3).map(|i| w[2 * i] - w[2 * i + 1]).collect();
    let mut g = GraphBuilder::new("linear", &[3]);
    g.push(
        LayerKind::Dense { units: 2 },
        Some(Tensor::new(vec![3, 2], w).expect("weights")),
        Some(Tensor::from_vec(bias.clone())),
    );
    g.push(LayerKind::Softmax, None, None);
    let net = g.build(2).expect("linear net");
    let mut closed_err = 0.0f64;
    for lambda in [0.05, 0.2, 1.0] {
        let cfg = PrototypeConfig {
            lambda,
            steps: 3000,
            step_size: 0.5,
            init: PrototypeInit::Zeros,
            target_class: 0,
        };
        let (x, _) = activation_maximize(&net, &cfg).expect("prototype");
        for (a, o) in x.data().iter().zip(two_class_optimum(&d, bias[0] - bias[1], lambda)) {
            closed_err = closed_err.max((a - o).abs());
        }
    }

    outcome(
        shift_err <= 1e-12 && monotone == 20 && closed_err <= 1e-4,
        format!("softmax shift error {shift_err:.1e}, {monotone}/20 monotone traces, closed-form error {closed_err:.1e}"),
    )
}

fn rlpm(args: &[&str]) -> (Vec<u8>, i32) {
    let out = Command::new(env!("CARGO_BIN_EXE_rlpm")).args(args).output().expect("spawn rlpm");
    (out.stdout, out.status.code().unwrap_or(-1))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let s = |p: &Path| p.to_str().expect("utf-8 path").to_owned();
    let mut rng = ChaCha8Rng::seed_from_u64(1007);
    let net = blob_classifier(&mut rng, 16);
    let model = dir.path().join("model");
    model_io::save(&net, &model).expect("save");
    let (x, _) = blob_images(&mut rng, 1, 16).remove(0);
    let image = dir.path().join("x.raw32");
    let mut raw = Vec::new();
    for d in [16u32, 16, 1] {
        raw.extend_from_slice(&d.to_le_bytes());
    }
    for v in x.data() {
        raw.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    std::fs::write(&image, raw).expect("write image");

    let mut runs = Vec::new();
    let mut codes = Vec::new();
    for k in 0..2 {
        let (map, proto) = (dir.path().join(format!("m{k}.csv")), dir.path().join(format!("p{k}.pgm")));
        let (m, i) = (s(&model), s(&image));
        let (e, c1) = rlpm(&[
            "explain", "--model", &m, "--image", &i, "--class", "0", "--rule", "deep-taylor", "--out", &s(&map),
        ]);
        let (f, c2) = rlpm(&["flip", "--model", &m, "--image", &i, "--map", &s(&map)]);
        let (p, c3) = rlpm(&[
            "prototype", "--model", &m, "--class", "1", "--lambda", "0.01", "--steps", "25", "--step-size", "0.5",
            "--seed", "11", "--out", &s(&proto),
        ]);
        codes.extend([c1, c2, c3]);
        runs.push((
            e,
            f,
            p,
            std::fs::read(&map).unwrap_or_default(),
            std::fs::read(&proto).unwrap_or_default(),
        ));
    }
    let ok = codes.iter().all(|&c| c == 0);
    let (a, b) = (&runs[0], &runs[1]);
    let same = [a.0 == b.0, a.3 == b.3, a.1 == b.1, a.2 == b.2, a.4 == b.4];
    outcome(
        ok && same.iter().all(|&v| v),
        format!(
            "exit codes {codes:?}; explain {} map {} flip {} prototype {} image {}",
            same[0], same[1], same[2], same[3], same[4]
        ),
    )
}

fn performance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1008);
    // no entry reduction: every layer runs at the full 256x256 resolution
    let block = BlockSpec::new((16, 16, 32), 2, false).expect("block");
    let net = toy_resnet(&mut rng, (256, 256), block, 4, 3).expect("resnet");
    let x = uniform_tensor(&mut rng, &[256, 256, 1], 0.0, 1.0);
    let bounds = InputBounds::uniform(0.0, 1.0).expect("bounds");
    let start = Instant::now();
    let map = explain(&net, &x, 0, DeepTaylorPreset::bounded(bounds)).expect("explain");
    let elapsed = start.elapsed();
    outcome(
        map.values.is_finite() && elapsed < Duration::from_secs(5),
        format!("{:.3}s for {} layers", elapsed.as_secs_f64(), net.layers().len()),
    )
}

fn format_checks() -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let mut rng = ChaCha8Rng::seed_from_u64(1009);
    let mut nets: Vec<_> = (0..10)
        .map(|i| {
            random_relu_net(
                &mut rng,
                &RandomNetConfig {
                    convolutional: i % 2 == 0,
                    with_bias: true,
                    ..Default::default()
                },
            )
        })
        .collect();
    nets.push(toy_resnet(&mut rng, (16, 16), BlockSpec::new((4, 4, 8), 2, true).expect("block"), 2, 3).expect("resnet"));

    let mut identical = 0;
    for (i, net) in nets.iter().enumerate() {
        let (a, b) = (dir.path().join(format!("a{i}")), dir.path().join(format!("b{i}")));
        model_io::save(net, &a).expect("save");
        model_io::save(&model_io::load(&a).expect("load"), &b).expect("re-save");
        let (ja, ba) = model_io::model_paths(&a);
        let (jb, bb) = model_io::model_paths(&b);
        let read = |p: &Path| std::fs::read(p).expect("read");
        if read(&ja) == read(&jb) && read(&ba) == read(&bb) {
            identical += 1;
        }
    }

    let mut detected = 0;
    let mut crashes = 0;
    for trial in 0..100 {
        let (manifest, mut blob) = encode(&nets[trial % nets.len()]);
        match trial % 3 {
            0 => {
                let i = rng.random_range(0..blob.len());
                blob[i] ^= rng.random_range(1..=255u8);
            }
            1 => blob.truncate(rng.random_range(0..blob.len())),
            _ => blob.extend_from_slice(&[0, 0, 0, 0]),
        }
        let path = dir.path().join(format!("fuzz{trial}"));
        let (json, bin) = model_io::model_paths(&path);
        std::fs::write(&json, manifest).expect("write manifest");
        std::fs::write(&bin, &blob).expect("write blob");
        match std::panic::catch_unwind(|| model_io::load(&path)) {
            Ok(Err(Error::Corruption(_))) => detected += 1,
            Ok(_) => {}
            Err(_) => crashes += 1,
        }
    }
    let (manifest, blob) = encode(&nets[0]);
    let clean = decode(&manifest, &blob).is_ok();
    outcome(
        identical == nets.len() && detected == 100 && crashes == 0 && clean,
        format!("{identical}/{} byte-identical re-saves, {detected}/100 corrupt blobs detected, {crashes} crashes", nets.len()),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

#[test]
fn acceptance() {
    let criteria: [Criterion; 9] = [
        ("conservation", conservation),
        ("collapse to gradient x input", collapse),
        ("gradient correctness", gradients),
        ("patch/whole equivalence", patch_whole_equivalence),
        ("pixel-flipping discrimination", pixel_flipping),
        ("softmax and activation maximisation", objectives),
        ("determinism", determinism),
        ("performance floor", performance),
        ("model format", format_checks),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let result = check();
        println!("{} {name}: {}", if result.pass { "PASS" } else { "FAIL" }, result.detail);
        if !result.pass {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
