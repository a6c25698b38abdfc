use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use medprompt::data::augment::{mixup_with, AugmentPlan};
use medprompt::data::io::{decode_mptf, encode_mptf};
use medprompt::data::{Direction, PairedSample};
use medprompt::graph::{ConvParams, Graph, ShuffleDirection};
use medprompt::loss::LossConfig;
use medprompt::metrics::{psnr, ssim_metric, METRIC_RANGE};
use medprompt::nn::{Ctx, Init, Peb};
use medprompt::train::TrainConfig;
use medprompt::{ParamStore, Tensor};

fn tensor(shape: &[usize], values: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), values[..shape.iter().product::<usize>()].to_vec()).unwrap()
}

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, n)
}

fn unit_values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, n)
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    n: usize,
    groups: usize,
    cg: usize,
    og: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

fn geometry() -> impl Strategy<Value = Geometry> {
    (1usize..3, 1usize..4, 1usize..3, 1usize..3, 1usize..4, 1usize..3, 0usize..3, 0usize..4, 0usize..4).prop_map(
        |(n, groups, cg, og, k, stride, pad, dh, dw)| {
            let k = 2 * k - 1;
            Geometry { n, groups, cg, og, h: k + dh, w: k + dw, k, stride, pad }
        },
    )
}

fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, g: Geometry) -> Vec<f64> {
    let (c, o) = (g.groups * g.cg, g.groups * g.og);
    let ho = (g.h + 2 * g.pad - g.k) / g.stride + 1;
    let wo = (g.w + 2 * g.pad - g.k) / g.stride + 1;
    let mut out = vec![0.0; g.n * o * ho * wo];
    for b in 0..g.n {
        for oc in 0..o {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..g.cg {
                        let ic = (oc / g.og) * g.cg + ci;
                        for ky in 0..g.k {
                            for kx in 0..g.k {
                                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if (0..g.h as isize).contains(&iy) && (0..g.w as isize).contains(&ix) {
                                    acc += x.data()[((b * c + ic) * g.h + iy as usize) * g.w + ix as usize]
                                        * w.data()[((oc * g.cg + ci) * g.k + ky) * g.k + kx];
                                }
                            }
                        }
                    }
                    out[((b * o + oc) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv2d_matches_direct_sum(g in geometry(), xs in values(2 * 3 * 2 * 8 * 8), ws in values(3 * 2 * 2 * 25)) {
        let x = tensor(&[g.n, g.groups * g.cg, g.h, g.w], &xs);
        let w = tensor(&[g.groups * g.og, g.cg, g.k, g.k], &ws);
        let graph = Graph::inference();
        let y = graph
            .conv2d(graph.constant(x.clone()), graph.constant(w.clone()), None, ConvParams::new(g.stride, g.pad, g.groups))
            .unwrap();
        let expect = naive_conv(&x, &w, g);
        let got = graph.value(y);
        prop_assert_eq!(got.numel(), expect.len());
        for (a, e) in got.data().iter().zip(&expect) {
            prop_assert!((a - e).abs() <= 1e-12, "{a} vs {e}");
        }
    }

    #[test]
    fn softmax_rows_are_distributions(xs in prop::collection::vec(-30.0f64..30.0, 12)) {
        let g = Graph::inference();
        let s = g.value(g.softmax(g.constant(tensor(&[3, 4], &xs)), 1).unwrap());
        for row in s.data().chunks(4) {
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pixel_shuffle_round_trip(xs in values(2 * 4 * 4 * 6)) {
        let x = tensor(&[2, 2, 4, 6], &xs);
        let g = Graph::inference();
        let down = g.pixel_shuffle(g.constant(x.clone()), 2, ShuffleDirection::Down).unwrap();
        prop_assert_eq!(g.shape(down), vec![2, 8, 2, 3]);
        let up = g.pixel_shuffle(down, 2, ShuffleDirection::Up).unwrap();
        prop_assert_eq!(g.value(up), x);
    }

    #[test]
    fn concat_then_slice_recovers_parts(xs in values(2 * 5 * 9), split in 1usize..5) {
        let x = tensor(&[2, 5, 3, 3], &xs);
        let g = Graph::inference();
        let a = g.slice_channels(g.constant(x.clone()), 0, split).unwrap();
        let b = g.slice_channels(g.constant(x.clone()), split, 5 - split).unwrap();
        prop_assert_eq!(g.value(g.concat_channels(&[a, b]).unwrap()), x);
    }

    #[test]
    fn prompt_weights_depend_only_on_channel_means(
        seed in any::<u64>(),
        xs in values(2 * 4 * 16),
        shift in values(16),
    ) {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let peb = Peb::new(&mut Init::new(&mut store, &mut rng), "peb", 4, 3, 4, true).unwrap();
        // Zero-mean perturbation per (batch, channel) plane keeps every channel mean.
        let mut moved = xs.clone();
        for plane in 0..8 {
            let d = &shift[(plane % 4) * 4..(plane % 4) * 4 + 4];
            let mean = d.iter().sum::<f64>() / 4.0;
            for i in 0..16 {
                moved[plane * 16 + i] += d[i % 4] - mean;
            }
        }
        let weights = |v: &[f64]| {
            let g = Graph::inference();
            let w = peb.weights(Ctx::new(&g, &store), g.constant(tensor(&[2, 4, 4, 4], v))).unwrap();
            g.value(w)
        };
        let (a, b) = (weights(&xs), weights(&moved));
        for row in a.data().chunks(3) {
            prop_assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        for (p, q) in a.data().iter().zip(b.data()) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn ssim_is_symmetric_and_bounded(xs in unit_values(2 * 144)) {
        let (x, y) = (tensor(&[1, 1, 12, 12], &xs), tensor(&[1, 1, 12, 12], &xs[144..]));
        let cfg = LossConfig::default();
        let s = ssim_metric(&x, &y, &cfg).unwrap();
        prop_assert!((s - ssim_metric(&y, &x, &cfg).unwrap()).abs() < 1e-12);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&s));
        prop_assert!((ssim_metric(&x, &x, &cfg).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_falls_as_noise_grows(xs in unit_values(256), noise in values(256)) {
        let x = tensor(&[1, 1, 16, 16], &xs);
        let noisy = |amp: f64| {
            let t: Vec<f64> = xs.iter().zip(&noise).map(|(v, e)| v + amp * e).collect();
            tensor(&[1, 1, 16, 16], &t)
        };
        prop_assume!(noise.iter().any(|e| e.abs() > 1e-3));
        // Small amplitudes keep clamping from masking the noise.
        let p: Vec<f64> = [0.001, 0.002, 0.004].iter().map(|&a| psnr(&noisy(a), &x, METRIC_RANGE).unwrap()).collect();
        prop_assert!(p[0] > p[1] && p[1] > p[2], "{p:?}");
    }

    #[test]
    fn mixup_stays_between_inputs(a in unit_values(64), b in unit_values(64), m in 0.0f64..1.0) {
        let sample = |v: &[f64], id| PairedSample {
            id,
            phantom: id,
            direction: Direction::AtoB,
            input: tensor(&[1, 1, 8, 8], v),
            target: tensor(&[1, 1, 8, 8], v),
        };
        let mixed = mixup_with(&sample(&a, 0), &sample(&b, 1), m).unwrap();
        for ((v, x), y) in mixed.input.data().iter().zip(&a).zip(&b) {
            prop_assert!(*v >= x.min(*y) - 1e-12 && *v <= x.max(*y) + 1e-12);
        }
    }

    #[test]
    fn four_quarter_turns_are_identity(xs in unit_values(49), hflip: bool, vflip: bool) {
        let img = tensor(&[1, 1, 7, 7], &xs);
        let turn = AugmentPlan { quarter_turns: 1, ..Default::default() };
        let mut out = img.clone();
        for _ in 0..4 {
            out = turn.apply(&out).unwrap();
        }
        prop_assert_eq!(&out, &img);
        let flip = AugmentPlan { hflip, vflip, ..Default::default() };
        prop_assert_eq!(flip.apply(&flip.apply(&img).unwrap()).unwrap(), img);
    }

    #[test]
    fn mptf_round_trip_is_bit_exact(xs in prop::collection::vec(any::<f64>(), 24)) {
        let t = tensor(&[2, 3, 4], &xs);
        let back = decode_mptf(&encode_mptf(&t).unwrap()).unwrap().into_exact::<f64>().unwrap();
        let bits = |t: &Tensor<f64>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&t));
        prop_assert_eq!(back.shape(), t.shape());
    }

    #[test]
    fn config_text_round_trip(epochs in 1usize..100, seed: u64, lr in 1e-6f64..1e-1, lambda in 0.0f64..2.0) {
        let mut cfg = TrainConfig { epochs, seed, ..Default::default() };
        cfg.adam.lr = lr;
        cfg.loss.lambda = lambda;
        prop_assert_eq!(TrainConfig::from_kv_text(&cfg.to_kv_text()).unwrap(), cfg);
    }
}
