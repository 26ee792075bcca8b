use cfsr::complexity::{lr_size_for_hr, mixer_cost, model_cost, model_cost_with, CountMode, MixerKind};
use cfsr::nn::Parameters;
use cfsr::{Cfsr, ModelConfig, StoreMode};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// (scale, params, MACs) reference budgets on a 1280x720 HR target.
const REFERENCE: [(usize, f64, f64); 3] = [(2, 291e3, 62.6e9), (3, 298e3, 28.5e9), (4, 307e3, 17.5e9)];

fn standard_cost(scale: usize) -> cfsr::complexity::CostReport {
    let (h, w) = lr_size_for_hr(720, 1280, scale as u64);
    model_cost(&ModelConfig::standard(scale), h, w)
}

#[test]
fn budgets_within_tolerance_of_reference() {
    for (scale, params, flops) in REFERENCE {
        let r = standard_cost(scale);
        let dp = (r.params as f64 - params).abs() / params;
        let df = (r.flops as f64 - flops).abs() / flops;
        assert!(dp <= 0.05, "x{scale}: {} params is {:.2}% off", r.params, dp * 100.0);
        assert!(df <= 0.10, "x{scale}: {} MACs is {:.2}% off", r.flops, df * 100.0);
    }
}

#[test]
fn exact_budget_values() {
    // hand-expanded per-layer sums; MACs per LR pixel times LR pixel count
    let cases = [
        (2, 303_852u128, 298_512u128 * 640 * 360),
        (3, 310_347, 304_992 * 426 * 240),
        (4, 319_440, 314_064 * 320 * 180),
    ];
    for (scale, params, flops) in cases {
        let r = standard_cost(scale);
        assert_eq!((r.params, r.flops), (params, flops), "x{scale}");
    }
}

#[test]
fn analytic_counts_equal_stored_counts() {
    for cfg in [
        ModelConfig::standard(2),
        ModelConfig::standard(4),
        ModelConfig::tiny(7, 3, 2, 11, 3),
    ] {
        let model = Cfsr::init(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let branched = model.to_store();
        let fused = model.fused().to_store();
        assert_eq!(fused.mode(), StoreMode::Fused);
        assert_eq!(model_cost(&cfg, 4, 4).params, fused.num_scalars() as u128);
        assert_eq!(
            model_cost_with(&cfg, 4, 4, CountMode::Branched).params,
            branched.num_scalars() as u128
        );
        assert_eq!(branched.num_scalars(), model.num_scalars());
    }
}

#[test]
fn per_layer_ledger_of_minimal_network() {
    // C = 1, one block of one layer, k1 = 3, r = 1, hidden 2, one pixel
    let cfg = ModelConfig {
        channels: 1,
        n_blocks: 1,
        n_layers: 1,
        mixer_kernel: 3,
        edc_kernel: 3,
        scale: 1,
        efn_expansion: 2.0,
    };
    let r = model_cost(&cfg, 1, 1);
    let rows: Vec<(&str, u128, u128)> = r.breakdown.iter().map(|e| (e.name.as_str(), e.params, e.flops)).collect();
    assert_eq!(
        rows,
        vec![
            ("shallow", 28, 27),
            ("body.0.layers.0.mixer.value", 2, 1),
            ("body.0.layers.0.mixer.gate", 2, 1),
            ("body.0.layers.0.mixer.gate_dw", 10, 9),
            ("body.0.layers.0.mixer.proj", 2, 1),
            ("body.0.layers.0.efn.expand", 4, 2),
            ("body.0.layers.0.efn.edc", 20, 18),
            ("body.0.layers.0.efn.project", 3, 2),
            ("body.0.tail", 10, 9),
            ("head", 30, 27),
        ]
    );
    assert_eq!((r.params, r.flops), (111, 97));
    let b = model_cost_with(&cfg, 1, 1, CountMode::Branched);
    assert_eq!((b.params, b.flops), (122, 169));
}

#[test]
fn mixer_ordering_and_scaling() {
    let (c, k) = (48, 9);
    let flops = |kind, s| mixer_cost(kind, s, s, c, k).unwrap().flops;
    assert!(flops(MixerKind::LargeKernel, 64) < flops(MixerKind::WindowAttention, 64));
    assert!(flops(MixerKind::WindowAttention, 64) < flops(MixerKind::SelfAttention, 64));

    let quad = |s| mixer_cost(MixerKind::SelfAttention, s, s, c, k).unwrap().entry("attention").unwrap().flops;
    assert_eq!(quad(128), 16 * quad(64));
    assert_eq!(flops(MixerKind::LargeKernel, 128), 4 * flops(MixerKind::LargeKernel, 64));
}

#[test]
fn larger_mixer_kernels_cost_more() {
    let costs: Vec<_> = [3usize, 5, 7, 9, 11]
        .iter()
        .map(|&k| {
            let mut cfg = ModelConfig::standard(4);
            cfg.mixer_kernel = k;
            model_cost(&cfg, 180, 320)
        })
        .collect();
    for pair in costs.windows(2) {
        assert!(pair[0].params < pair[1].params && pair[0].flops < pair[1].flops);
    }
}

proptest! {
    #[test]
    fn totals_equal_breakdown_and_scale_with_area(
        c in 1usize..64, blocks in 1usize..4, layers in 1usize..4,
        k in prop::sample::select(vec![3usize, 5, 7, 9, 11]), scale in 2usize..5,
        h in 1u64..50, w in 1u64..50,
    ) {
        let cfg = ModelConfig::tiny(c, blocks, layers, k, scale);
        let r = model_cost(&cfg, h, w);
        prop_assert_eq!(r.params, r.breakdown.iter().map(|e| e.params).sum::<u128>());
        prop_assert_eq!(r.flops, r.breakdown.iter().map(|e| e.flops).sum::<u128>());
        let unit = model_cost(&cfg, 1, 1);
        prop_assert_eq!(r.flops, unit.flops * (h * w) as u128);
        prop_assert_eq!(r.params, unit.params);
    }

    #[test]
    fn mixer_ordering_holds_beyond_the_window(c in 1u64..128, k in 1u64..8, s in 16u64..128) {
        let k = 2 * k + 1;
        let lk = mixer_cost(MixerKind::LargeKernel, s, s, c, k).unwrap().flops;
        let wa = mixer_cost(MixerKind::WindowAttention, s, s, c, k).unwrap().flops;
        let sa = mixer_cost(MixerKind::SelfAttention, s, s, c, k).unwrap().flops;
        prop_assert!(lk < wa && wa <= sa);
    }
}
