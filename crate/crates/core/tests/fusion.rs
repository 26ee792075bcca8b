use cfsr::data::{degrade, test_card, ImageBuffer};
use cfsr::model::{edc_forward_branched, fuse_store, Edc, EdcWeights, ModelError};
use cfsr::nn::{dwconv, DwConvWeights, Parameters};
use cfsr::{Cfsr, ModelConfig, Shape, StoreMode, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_edc(c: usize, rng: &mut impl Rng) -> EdcWeights {
    let mut w = EdcWeights::init(c, rng);
    w.visit_mut("", &mut |_, t| t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0)));
    w.logits.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-3.0..3.0));
    w
}

/// Gives every bias and logit of a freshly initialised model a random value.
fn perturb(model: &mut Cfsr, rng: &mut impl Rng) {
    model.visit_mut("", &mut |name, t| {
        if name.ends_with("bias") || name.ends_with("logits") {
            t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
        }
    });
}

#[test]
fn fused_layer_matches_branches_over_random_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f32;
    for _ in 0..128 {
        let c = rng.gen_range(1..7);
        let (h, w) = (rng.gen_range(1..9), rng.gen_range(1..9));
        let edc = Edc::Branched(random_edc(c, &mut rng));
        let x = Tensor::from_fn(Shape::new(rng.gen_range(1..3), c, h, w), |_| rng.gen_range(-2.0..2.0));
        let branched = edc_forward_branched(&x, &edc).unwrap();
        let Edc::Fused(fused) = edc.fused() else { unreachable!() };
        let merged = dwconv(&x, &fused).unwrap();
        worst = worst.max(branched.max_abs_diff(&merged).unwrap());
    }
    assert!(worst <= 1e-5, "max |branched - fused| = {worst}");
}

#[test]
fn dropping_second_laplacian_bias_breaks_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = random_edc(4, &mut rng);
    let correct = w.fuse();
    let [_, _, a3] = w.alphas();
    let mut wrong = correct.clone();
    for (b, l8) in wrong.bias.data_mut().iter_mut().zip(w.lap8_bias.data()) {
        *b -= (a3 * *l8 as f64) as f32;
    }
    let x = Tensor::from_fn(Shape::new(1, 4, 5, 5), |_| rng.gen_range(-1.0..1.0));
    let reference = edc_forward_branched(&x, &Edc::Branched(w.clone())).unwrap();
    assert!(reference.max_abs_diff(&dwconv(&x, &correct).unwrap()).unwrap() <= 1e-5);
    let off = reference.max_abs_diff(&dwconv(&x, &wrong).unwrap()).unwrap();
    assert!(off > 1e-3, "omitting the second Laplacian bias went unnoticed ({off})");
}

#[test]
fn fused_kernel_with_uniform_logits_averages_branches() {
    let w = EdcWeights::zeros(1);
    let f = w.fuse();
    let third = 1.0f32 / 3.0;
    // K3 = 0, so kernel = (Sobel_x + Sobel_y + Lap4 + Lap8) / 3
    let expected = [3.0, 4.0, 1.0, 4.0, -12.0, 0.0, 1.0, 0.0, -1.0].map(|v: f32| v * third);
    for (a, b) in f.kernel.data().iter().zip(expected) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn whole_model_fusion_survives_quantisation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = ModelConfig::tiny(8, 2, 2, 7, 3);
    let mut model = Cfsr::init(cfg, &mut rng).unwrap();
    perturb(&mut model, &mut rng);
    let (_, lr) = degrade(&test_card(48, 48), 3).unwrap();
    let x = lr.to_tensor();
    let y_branched = model.infer(&x).unwrap();
    let fused = model.fused();
    assert_eq!(fused.mode(), StoreMode::Fused);
    let y_fused = fused.infer(&x).unwrap();
    assert!(y_branched.max_abs_diff(&y_fused).unwrap() <= 1e-4);
    let a = ImageBuffer::from_tensor(&y_branched, 0).unwrap().to_u8();
    let b = ImageBuffer::from_tensor(&y_fused, 0).unwrap().to_u8();
    let levels = a
        .as_u8()
        .unwrap()
        .iter()
        .zip(b.as_u8().unwrap())
        .map(|(p, q)| p.abs_diff(*q))
        .max()
        .unwrap();
    assert!(levels <= 1);
}

#[test]
fn fused_store_is_smaller_and_refuses_refusion() {
    let model = Cfsr::init(ModelConfig::tiny(8, 1, 2, 5, 2), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let branched = model.to_store();
    let fused = fuse_store(&branched).unwrap();
    assert_eq!(fused.mode(), StoreMode::Fused);
    assert!(fused.num_scalars() < branched.num_scalars());
    assert!(fused.to_bytes().unwrap().len() < branched.to_bytes().unwrap().len());
    let err = fuse_store(&fused).unwrap_err();
    assert!(err.to_string().contains("already fused"));
    let reloaded = Cfsr::from_store_inferred(&fused).unwrap();
    assert_eq!(reloaded, model.fused());
}

#[test]
fn fused_model_cannot_record_gradients() {
    let model = Cfsr::init(ModelConfig::tiny(4, 1, 1, 3, 2), &mut ChaCha8Rng::seed_from_u64(0))
        .unwrap()
        .fused();
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::zeros(Shape::new(1, 3, 4, 4)));
    assert!(matches!(model.forward(&mut tape, x), Err(ModelError::State(_))));
    let fused_layer = Edc::Fused(DwConvWeights::zeros(2, 3));
    assert!(fused_layer.branched().is_err());
}
