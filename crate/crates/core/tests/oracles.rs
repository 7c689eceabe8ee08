//! Independent oracles for the numerical core: naive loops, finite
//! differences, closed forms and synthetic tasks with known answers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rlpm_core::relprop::step_linear;
use rlpm_core::saliency::{pixel_flip_curve, FlipPolicy};
use rlpm_core::synth::{
    blob_classifier, blob_images, he_normal, lesion_patch_classifier, lesion_patches, random_patch_net,
    random_relu_net, separable_2d, uniform_tensor, whole_images, RandomNetConfig,
};
use rlpm_core::train::accuracy;
use rlpm_core::wholeimage::{
    dense_to_conv, effective_stride, heatmap, HeadConfig, PatchClassifier, WholeImageClassifier,
};
use rlpm_core::{
    check_gradient, class_probabilities, forward, forward_with_trace, gradient, gradient_times_input, softmax,
    train_toy, BlockSpec, GraphBuilder, LayerKind, Padding, RelevanceMap, RuleConfig, Tensor,
};

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Direct convolution with TF-style same padding.
fn naive_conv(
    x: &Tensor,
    w: &Tensor,
    b: &[f64],
    stride: usize,
    padding: Padding,
) -> (Vec<f64>, usize, usize) {
    let (h, wd, c) = x.hwc().unwrap();
    let (kh, kw, f) = (w.shape()[0], w.shape()[1], w.shape()[3]);
    let (oh, ow, pt, pl) = match padding {
        Padding::Valid => ((h - kh) / stride + 1, (wd - kw) / stride + 1, 0, 0),
        Padding::Same => {
            let (oh, ow) = (h.div_ceil(stride), wd.div_ceil(stride));
            let th = ((oh - 1) * stride + kh).saturating_sub(h);
            let tw = ((ow - 1) * stride + kw).saturating_sub(wd);
            (oh, ow, th / 2, tw / 2)
        }
    };
    let mut out = vec![0.0; oh * ow * f];
    for i in 0..oh {
        for j in 0..ow {
            for o in 0..f {
                let mut acc = b[o];
                for di in 0..kh {
                    for dj in 0..kw {
                        let r = (i * stride + di) as isize - pt as isize;
                        let s = (j * stride + dj) as isize - pl as isize;
                        if r < 0 || s < 0 || r >= h as isize || s >= wd as isize {
                            continue;
                        }
                        for ch in 0..c {
                            acc += x[(r as usize * wd + s as usize) * c + ch] * w[((di * kw + dj) * c + ch) * f + o];
                        }
                    }
                }
                out[(i * ow + j) * f + o] = acc;
            }
        }
    }
    (out, oh, ow)
}

#[test]
fn conv_matches_nested_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    // the documented case first: 5x5 input, 3x3 kernel, stride 2
    let mut cases = vec![(5, 5, 1, 3, 2, Padding::Valid, 1)];
    for _ in 0..200 {
        let h = rng.random_range(1..=8);
        let w = rng.random_range(1..=8);
        let k = rng.random_range(1..=h.min(w).min(4));
        let padding = if rng.random_bool(0.5) { Padding::Valid } else { Padding::Same };
        cases.push((h, w, rng.random_range(1..=4), k, rng.random_range(1..=3), padding, rng.random_range(1..=4)));
    }
    for (h, w, c, k, stride, padding, f) in cases {
        let x = uniform_tensor(&mut rng, &[h, w, c], -1.0, 1.0);
        let wt = uniform_tensor(&mut rng, &[k, k, c, f], -1.0, 1.0);
        let bias = uniform_tensor(&mut rng, &[f], -1.0, 1.0);
        let mut g = GraphBuilder::new("conv", &[h, w, c]);
        g.push(LayerKind::conv(f, k, stride, padding), Some(wt.clone()), Some(bias.clone()));
        let net = g.build(f).unwrap();
        let y = forward(&net, &x).unwrap();
        let (expect, oh, ow) = naive_conv(&x, &wt, bias.data(), stride, padding);
        assert_eq!(y.shape(), &[oh, ow, f]);
        for (a, b) in y.data().iter().zip(&expect) {
            assert!((a - b).abs() <= 1e-12, "{h}x{w}x{c} k{k} s{stride} {padding:?}");
        }
    }
}

#[test]
fn trace_replay_matches_forward() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for conv in [false, true] {
        for _ in 0..20 {
            let cfg = RandomNetConfig {
                convolutional: conv,
                with_bias: true,
                ..Default::default()
            };
            let net = random_relu_net(&mut rng, &cfg);
            let x = uniform_tensor(&mut rng, net.input_shape(), -1.0, 1.0);
            let trace = forward_with_trace(&net, &x).unwrap();
            assert_eq!(trace.records.last().unwrap().output.as_ref(), &forward(&net, &x).unwrap());
        }
    }
}

#[test]
fn softmax_high_precision_values() {
    // exp(2), exp(1), exp(0.1) normalised, evaluated to 10 digits by hand
    let p = softmax(&Tensor::from_vec(vec![2.0, 1.0, 0.1])).unwrap();
    let expect = [0.6590011388, 0.2424329707, 0.0985658905];
    for (a, b) in p.data().iter().zip(expect) {
        assert!((a - b).abs() <= 1e-5);
    }
}

#[test]
fn three_layer_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut g = GraphBuilder::new("mlp3", &[5]);
    g.push(LayerKind::Dense { units: 7 }, Some(he_normal(&mut rng, &[5, 7], 5)), Some(uniform_tensor(&mut rng, &[7], -0.1, 0.1)));
    g.push(LayerKind::ReLU, None, None);
    g.push(LayerKind::Dense { units: 6 }, Some(he_normal(&mut rng, &[7, 6], 7)), Some(uniform_tensor(&mut rng, &[6], -0.1, 0.1)));
    g.push(LayerKind::ReLU, None, None);
    g.push(LayerKind::Dense { units: 3 }, Some(he_normal(&mut rng, &[6, 3], 6)), None);
    let net = g.build(3).unwrap();
    let x = uniform_tensor(&mut rng, &[5], -1.0, 1.0);
    let h = 1e-5;
    for class in 0..3 {
        let grad = gradient(&net, &x, class).unwrap();
        for i in 0..5 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (forward(&net, &xp).unwrap()[class] - forward(&net, &xm).unwrap()[class]) / (2.0 * h);
            assert!(rel_err(grad[i], fd) <= 1e-4 || (grad[i] - fd).abs() <= 1e-9);
        }
    }
}

#[test]
fn gradient_check_on_fifty_random_nets() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    for n in 0..50 {
        let cfg = RandomNetConfig {
            convolutional: n % 2 == 1,
            with_bias: true,
            ..Default::default()
        };
        let net = random_relu_net(&mut rng, &cfg);
        let x = uniform_tensor(&mut rng, net.input_shape(), -1.0, 1.0);
        let report = check_gradient(&net, &x, n % 3, 1e-5).unwrap();
        assert!(report.max_rel_error <= 1e-4, "net {n}: {report:?}");
    }
}

#[test]
fn reducing_resnet_block_halves_once() {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let spec = BlockSpec::new((16, 16, 32), 2, true).unwrap();
    let net = rlpm_core::synth::toy_resnet(&mut rng, (32, 32), spec, 2, 3).unwrap();
    let last_add = net
        .layers()
        .iter()
        .rposition(|l| l.kind == LayerKind::Add)
        .unwrap();
    assert_eq!(net.shapes()[last_add], vec![16, 16, 32]);
    let strided = net
        .layers()
        .iter()
        .filter(|l| matches!(l.kind, LayerKind::Conv2D { stride: 2, .. }))
        .count();
    // conv1 and the projection of the first unit
    assert_eq!(strided, 2);
}

#[test]
fn logistic_model_separates_linear_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let data = separable_2d(&mut rng, 200);
    let mut g = GraphBuilder::new("logistic", &[2]);
    g.push(LayerKind::Dense { units: 2 }, Some(Tensor::zeros(&[2, 2])), Some(Tensor::zeros(&[2])));
    g.push(LayerKind::Softmax, None, None);
    let (net, report) = train_toy(&g.build(2).unwrap(), &data, 200, 0.05).unwrap();
    assert!(report.train_accuracy >= 0.95, "{report:?}");
    assert_eq!(accuracy(&net, &data).unwrap(), report.train_accuracy);
}

#[test]
fn blob_classifier_trains() {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let net = blob_classifier(&mut rng, 16);
    let data = blob_images(&mut rng, 200, 16);
    let (net, report) = train_toy(&net, &data, 5, 0.01).unwrap();
    assert!(report.train_accuracy >= 0.9, "{report:?}");
    let held_out = blob_images(&mut rng, 100, 16);
    assert!(accuracy(&net, &held_out).unwrap() >= 0.9);
}

#[test]
fn linear_lrp0_conserves_by_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    for _ in 0..100 {
        let x = uniform_tensor(&mut rng, &[6], -1.0, 1.0);
        let w = uniform_tensor(&mut rng, &[6, 4], -1.0, 1.0);
        let r_out = uniform_tensor(&mut rng, &[4], -1.0, 1.0);
        let r_in = step_linear(&x, &w, &r_out, &RuleConfig::lrp0()).unwrap();
        let mut expect = 0.0;
        for k in 0..4 {
            let z: f64 = (0..6).map(|j| x[j] * w[j * 4 + k]).sum();
            for j in 0..6 {
                expect += x[j] * w[j * 4 + k] / z * r_out[k];
            }
        }
        assert!((r_in.sum() - expect).abs() <= 1e-10);
        assert!((r_in.sum() - r_out.sum()).abs() <= 1e-10);
    }
}

#[test]
fn relevance_ordering_beats_reversed_ordering_on_linear_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    for _ in 0..100 {
        let (h, w) = (rng.random_range(3..=6), rng.random_range(3..=6));
        let n = h * w;
        let mut weights = Tensor::zeros(&[n, 2]);
        for j in 0..n {
            weights[2 * j] = rng.random_range(0.01..1.0);
        }
        let mut g = GraphBuilder::new("linear", &[h, w, 1]);
        g.push(LayerKind::Flatten, None, None);
        g.push(LayerKind::Dense { units: 2 }, Some(weights), None);
        g.push(LayerKind::Softmax, None, None);
        let net = g.build(2).unwrap();
        let x = uniform_tensor(&mut rng, &[h, w, 1], 0.0, 1.0);
        let map = gradient_times_input(&net, &x, 0).unwrap();
        let reversed = RelevanceMap {
            values: map.values.map(|v| -v),
            ..map.clone()
        };
        let fwd = pixel_flip_curve(&net, &x, &map, FlipPolicy::Zero, 0.1).unwrap();
        let rev = pixel_flip_curve(&net, &x, &reversed, FlipPolicy::Zero, 0.1).unwrap();
        assert!(fwd.auc <= rev.auc + 1e-12, "{} > {}", fwd.auc, rev.auc);
    }
}

fn crop(img: &Tensor, top: usize, left: usize, p: usize, q: usize) -> Tensor {
    let (_, cols, c) = img.hwc().unwrap();
    let mut data = Vec::with_capacity(p * q * c);
    for r in top..top + p {
        data.extend_from_slice(&img.data()[(r * cols + left) * c..(r * cols + left + q) * c]);
    }
    Tensor::new(vec![p, q, c], data).unwrap()
}

#[test]
fn heatmap_cells_match_extracted_patches() {
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    for _ in 0..20 {
        let patch = PatchClassifier::new(random_patch_net(&mut rng)).unwrap();
        let fconv = dense_to_conv(&patch).unwrap();
        let (p, q) = patch.patch_size();
        let c = patch.net().input_shape()[2];
        let (r, s) = (rng.random_range(p..=40), rng.random_range(q..=40));
        let img = uniform_tensor(&mut rng, &[r, s, c], -1.0, 1.0);
        let h = heatmap(&fconv, &img).unwrap();
        let t = effective_stride(&fconv);
        assert_eq!(h.stride, t);
        let (u, v) = (h.values.shape()[0], h.values.shape()[1]);
        assert_eq!((u, v), ((r - p) / t[0] + 1, (s - q) / t[1] + 1));
        for i in 0..u {
            for j in 0..v {
                let f = class_probabilities(patch.net(), &crop(&img, i * t[0], j * t[1], p, q)).unwrap();
                for (a, b) in h.cell(i, j).iter().zip(f.data()) {
                    assert!(rel_err(*a, *b) <= 1e-6);
                }
                assert!((h.cell(i, j).iter().sum::<f64>() - 1.0).abs() <= 1e-6);
            }
        }
    }
}

#[test]
fn shifting_the_image_by_one_stride_shifts_the_heatmap() {
    let mut rng = ChaCha8Rng::seed_from_u64(110);
    let patch = PatchClassifier::new(lesion_patch_classifier(&mut rng, 8)).unwrap();
    let fconv = dense_to_conv(&patch).unwrap();
    let t = effective_stride(&fconv)[0];
    let big = uniform_tensor(&mut rng, &[24 + t, 24, 1], 0.0, 1.0);
    let a = heatmap(&fconv, &crop(&big, 0, 0, 24, 24)).unwrap();
    let b = heatmap(&fconv, &crop(&big, t, 0, 24, 24)).unwrap();
    let (u, v) = (a.values.shape()[0], a.values.shape()[1]);
    for i in 0..u - 1 {
        for j in 0..v {
            for (x, y) in a.cell(i + 1, j).iter().zip(b.cell(i, j)) {
                assert!(rel_err(*x, *y) <= 1e-6);
            }
        }
    }
}

#[test]
fn whole_image_classifier_learns_the_toy_task() {
    let mut rng = ChaCha8Rng::seed_from_u64(111);
    let patches = lesion_patches(&mut rng, 500, 8);
    let (patch_net, _) = train_toy(&lesion_patch_classifier(&mut rng, 8), &patches, 10, 0.02).unwrap();
    let patch = PatchClassifier::new(patch_net).unwrap();
    let mut whole = WholeImageClassifier::build(&mut rng, &patch, &[32, 32, 1], &HeadConfig::default()).unwrap();
    let train: Vec<(Tensor, usize)> = whole_images(&mut rng, 200, 32)
        .into_iter()
        .map(|(x, y)| (whole.heatmap(&x).unwrap().values, y))
        .collect();
    let (head, report) = train_toy(&whole.head, &train, 30, 0.01).unwrap();
    assert!(report.train_accuracy >= 0.85, "{report:?}");
    whole.head = head;
    let test = whole_images(&mut rng, 200, 32);
    let correct = test
        .iter()
        .filter(|(x, y)| whole.classify(x).unwrap().argmax() == *y)
        .count();
    assert!(correct as f64 / 200.0 >= 0.85, "{correct}/200");
}

#[test]
fn identical_heatmaps_give_identical_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(112);
    let patch = PatchClassifier::new(lesion_patch_classifier(&mut rng, 8)).unwrap();
    let whole = WholeImageClassifier::build(&mut rng, &patch, &[17, 16, 1], &HeadConfig::default()).unwrap();
    // with stride 2 the last row of a 17-row image lies outside every kept patch
    let a = uniform_tensor(&mut rng, &[17, 16, 1], 0.0, 1.0);
    let mut b = a.clone();
    for c in 0..16 {
        b[16 * 16 + c] = 5.0;
    }
    assert_eq!(whole.heatmap(&a).unwrap(), whole.heatmap(&b).unwrap());
    assert_eq!(whole.classify(&a).unwrap(), whole.classify(&b).unwrap());
}
