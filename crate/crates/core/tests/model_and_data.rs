use medprompt::data::{make_dataset, Direction, PhantomSpec};
use medprompt::loss::LossConfig;
use medprompt::nn::{build_model, AblationFlags, ModelConfig};
use medprompt::train::evaluate;

fn conv(cin: usize, cout: usize, k: usize, groups: usize, bias: bool) -> usize {
    cout * (cin / groups) * k * k + if bias { cout } else { 0 }
}

fn block(c: usize, heads: usize, expansion: f64, transformer: bool) -> usize {
    if !transformer {
        return 2 * conv(c, c, 3, 1, true);
    }
    let hidden = (expansion * c as f64).round() as usize;
    let attn = heads + conv(c, 3 * c, 1, 1, false) + conv(3 * c, 3 * c, 3, 3 * c, false) + conv(c, c, 1, 1, false);
    let ffn = conv(c, 2 * hidden, 1, 1, false) + conv(2 * hidden, 2 * hidden, 3, 2 * hidden, false) + conv(hidden, c, 1, 1, false);
    2 * c + attn + ffn
}

/// Parameter count from the layer list alone, without building tensors.
fn shape_walk(cfg: &ModelConfig) -> usize {
    let f = cfg.ablation;
    let ch = |l: usize| cfg.base_channels << l;
    let level_blocks = |l: usize| cfg.blocks_per_level[l] * block(ch(l), cfg.heads_per_level[l], cfg.gdfn_expansion, f.use_transformer);
    let mut total = conv(cfg.in_channels, cfg.base_channels, 3, 1, true) + conv(cfg.base_channels, cfg.out_channels, 3, 1, true);
    for l in 0..4 {
        total += level_blocks(l);
        if l < 3 {
            total += conv(ch(l), ch(l) / 2, 3, 1, false);
            total += conv(ch(l + 1), 2 * ch(l + 1), 3, 1, false) + conv(2 * ch(l), ch(l), 1, 1, false) + level_blocks(l);
        }
    }
    for site in 0..cfg.spb_sites {
        let l = 3 - site;
        let c = ch(l);
        total += cfg.num_prompts * c * cfg.prompt_base_size * cfg.prompt_base_size + conv(c, c, 3, 1, true);
        if f.use_peb {
            total += conv(c, cfg.num_prompts, 1, 1, true);
        }
        total += if f.use_pfb {
            block(2 * c, cfg.heads_per_level[l], cfg.gdfn_expansion, f.use_transformer) + conv(2 * c, c, 3, 1, true)
        } else {
            conv(c, c, 3, 1, true)
        };
    }
    total
}

#[test]
fn parameter_counts_match_shape_walk() {
    for flags in AblationFlags::all() {
        for base in [ModelConfig::default(), ModelConfig::minimal()] {
            let cfg = base.with_ablation(flags);
            let built = build_model::<f32>(&cfg, 0).unwrap().param_count();
            assert_eq!(built, shape_walk(&cfg), "{flags}");
        }
    }
    assert_eq!(build_model::<f64>(&ModelConfig::minimal(), 0).unwrap().param_count(), 164_905);
}

#[test]
fn evaluation_leaves_model_untouched() {
    let data = make_dataset(2, 4, &PhantomSpec { size: 32, ..Default::default() }, 5).unwrap();
    let model = build_model::<f64>(&ModelConfig::minimal(), 3).unwrap();
    let before = model.params.fingerprint();
    let a = evaluate(&model, &data.test, &LossConfig::default()).unwrap();
    let b = evaluate(&model, &data.test, &LossConfig::default()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.count(), 4);
    assert_eq!(model.params.fingerprint(), before);
}

#[test]
fn direction_is_inferable_from_intensity() {
    let spec = PhantomSpec::default();
    let data = make_dataset(200, 200, &spec, 17).unwrap();
    let feature = |s: &medprompt::data::PairedSample| s.input.mean() - s.target.mean();
    let mean_of = |d: Direction| {
        let v: Vec<f64> = data.train.iter().filter(|s| s.direction == d).map(feature).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (ab, ba) = (mean_of(Direction::AtoB), mean_of(Direction::BtoA));
    let threshold = (ab + ba) / 2.0;
    let predict = |x: f64| if (x > threshold) == (ab > threshold) { Direction::AtoB } else { Direction::BtoA };
    let correct = data.test.iter().filter(|s| predict(feature(s)) == s.direction).count();
    let accuracy = correct as f64 / data.test.len() as f64;
    assert!(accuracy > 0.95, "accuracy {accuracy}");
}
