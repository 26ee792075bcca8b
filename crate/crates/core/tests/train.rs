use std::collections::HashMap;

use cfsr::data::{test_card, Dataset, ImageBuffer};
use cfsr::metrics::psnr_y;
use cfsr::model::{Edc, WeightStore};
use cfsr::nn::Parameters;
use cfsr::train::{
    adam_step, checkpoint_name, clip_grad_norm, grad_norm, train_loop, AdamConfig, LrSchedule, OptimizerState,
    TrainConfig, TrainError, LOG_FILE, LOG_HEADER,
};
use cfsr::{Cfsr, ModelConfig, ModelError, Shape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Single {
    w: Tensor,
}

impl Parameters for Single {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(format!("{prefix}w"), &self.w);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(format!("{prefix}w"), &mut self.w);
    }
}

fn grads(g: f32) -> HashMap<String, Tensor> {
    HashMap::from([("w".to_string(), Tensor::scalar(g))])
}

#[test]
fn first_adam_step_moves_by_the_learning_rate() {
    let mut p = Single { w: Tensor::scalar(0.5) };
    let mut state = OptimizerState::new();
    adam_step(&mut p, &grads(1.0), &mut state, 1e-3, AdamConfig::default()).unwrap();
    // m_hat = 1 and v_hat = 1 after bias correction
    let expected = 0.5f64 - 1e-3 / (1.0 + 1e-8);
    assert!((p.w.data()[0] as f64 - expected).abs() < 1e-7);
    assert_eq!(state.t, 1);
}

#[test]
fn zero_gradient_leaves_parameters_and_decays_moments() {
    let mut p = Single { w: Tensor::scalar(0.25) };
    let mut state = OptimizerState::new();
    adam_step(&mut p, &grads(0.0), &mut state, 1e-2, AdamConfig::default()).unwrap();
    assert_eq!(p.w.data()[0], 0.25);
    adam_step(&mut p, &grads(2.0), &mut state, 1e-2, AdamConfig::default()).unwrap();
    let (m, v) = (state.m["w"][0], state.v["w"][0]);
    assert!((m - 0.2).abs() < 1e-7 && (v - 0.04).abs() < 1e-7);
    let before = p.w.data()[0];
    adam_step(&mut p, &grads(0.0), &mut state, 1e-2, AdamConfig::default()).unwrap();
    assert!((state.m["w"][0] - 0.9 * m).abs() < 1e-7);
    assert!((state.v["w"][0] - 0.99 * v).abs() < 1e-8);
    assert_eq!(state.t, 3);
    assert_ne!(p.w.data()[0], before, "momentum keeps moving the parameter");
}

#[test]
fn missing_gradient_names_the_parameter() {
    let mut p = Single { w: Tensor::scalar(1.0) };
    let mut state = OptimizerState::new();
    let err = adam_step(&mut p, &HashMap::new(), &mut state, 1e-3, AdamConfig::default()).unwrap_err();
    assert!(matches!(&err, TrainError::MissingGradient(n) if n == "w"));
    assert_eq!(state.t, 0);
    assert_eq!(p.w.data()[0], 1.0);
}

#[test]
fn clipping_bounds_the_global_norm() {
    let mut g = HashMap::from([
        ("a".to_string(), Tensor::from_vec(Shape::vector(2), vec![3.0, 0.0]).unwrap()),
        ("b".to_string(), Tensor::scalar(4.0)),
    ]);
    assert_eq!(grad_norm(&g), 5.0);
    assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
    assert!((grad_norm(&g) - 1.0).abs() < 1e-6);
    assert_eq!(clip_grad_norm(&mut g, 10.0), grad_norm(&g));
}

fn small_setup() -> (Cfsr, Dataset, TrainConfig) {
    let model = Cfsr::init(ModelConfig::tiny(4, 1, 1, 3, 2), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let ds = Dataset::from_hr_images(
        vec![("a".into(), test_card(32, 32)), ("b".into(), test_card(24, 40))],
        2,
    )
    .unwrap();
    let mut cfg = TrainConfig::new(12);
    cfg.batch_size = 2;
    cfg.patch_size = 8;
    cfg.lr_init = 1e-3;
    cfg.seed = 9;
    cfg.checkpoint_every = 5;
    (model, ds, cfg)
}

#[test]
fn identical_seeds_give_identical_runs() {
    let (m0, ds, cfg) = small_setup();
    let run = |workers| {
        let mut m = m0.clone();
        let mut cfg = cfg.clone();
        cfg.workers = workers;
        let rep = train_loop(&mut m, &ds, &cfg, None).unwrap();
        (m.to_store().to_bytes().unwrap(), rep.losses)
    };
    let a = run(1);
    assert_eq!(a, run(1));
    assert_eq!(a, run(3), "batches must not depend on the worker count");
}

#[test]
fn checkpoints_and_log_are_written() {
    let (mut m, ds, cfg) = small_setup();
    let dir = tempfile::tempdir().unwrap();
    let rep = train_loop(&mut m, &ds, &cfg, Some(dir.path())).unwrap();
    let names: Vec<String> = rep
        .checkpoints
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names, [checkpoint_name(5), checkpoint_name(10), checkpoint_name(12)]);
    assert_eq!(names[0], "ckpt_5.cfsrwt");
    let last = WeightStore::load(rep.checkpoints.last().unwrap()).unwrap();
    assert_eq!(Cfsr::from_store_inferred(&last).unwrap(), m);

    let log = std::fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], LOG_HEADER);
    assert_eq!(lines.len(), 13);
    let first: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(first[0], "1");
    assert!((first[1].parse::<f64>().unwrap() - rep.losses[0]).abs() < 1e-7);
    assert_eq!(first[2].parse::<f64>().unwrap(), 1e-3);
    let lr_last = lines[12].split(',').nth(2).unwrap().parse::<f64>().unwrap();
    assert_eq!(lr_last, 1.25e-4);
}

#[test]
fn zero_iterations_checkpoint_the_initialisation() {
    let (mut m, ds, mut cfg) = small_setup();
    cfg.total_iters = 0;
    let init = m.clone();
    let dir = tempfile::tempdir().unwrap();
    let rep = train_loop(&mut m, &ds, &cfg, Some(dir.path())).unwrap();
    assert!(rep.losses.is_empty());
    assert_eq!(rep.checkpoints, [dir.path().join("ckpt_0.cfsrwt")]);
    let saved = WeightStore::load(&rep.checkpoints[0]).unwrap();
    assert_eq!(saved.to_bytes().unwrap(), init.to_store().to_bytes().unwrap());
}

#[test]
fn training_moves_learnable_edge_terms_but_not_fixed_kernels() {
    let (mut m, ds, cfg) = small_setup();
    let before = m.clone();
    train_loop(&mut m, &ds, &cfg, None).unwrap();
    for (old, new) in before.layers().zip(m.layers()) {
        let (Edc::Branched(o), Edc::Branched(n)) = (&old.efn.edc, &new.efn.edc) else {
            panic!("training must stay branched");
        };
        assert!(n.fixed().is_pristine());
        assert_eq!(o.fixed(), n.fixed());
        assert_ne!(o.logits, n.logits);
        assert_ne!(o.sobel_x_bias, n.sobel_x_bias);
        assert_ne!(o.lap8_bias, n.lap8_bias);
        let a: f64 = n.alphas().iter().sum();
        assert!((a - 1.0).abs() < 1e-6);
    }
}

#[test]
fn fusing_after_training_preserves_psnr() {
    let (mut m, ds, cfg) = small_setup();
    train_loop(&mut m, &ds, &cfg, None).unwrap();
    let pair = ds.get(0).unwrap();
    let x = pair.lr.to_tensor();
    let sr = |model: &Cfsr| ImageBuffer::from_tensor(&model.infer(&x).unwrap(), 0).unwrap();
    let branched = psnr_y(&sr(&m), &pair.hr, 2).unwrap();
    let fused = psnr_y(&sr(&m.fused()), &pair.hr, 2).unwrap();
    assert!((branched - fused).abs() <= 0.01, "{branched} vs {fused}");
}

#[test]
fn non_finite_loss_reports_the_iteration() {
    let (mut m, ds, cfg) = small_setup();
    m.visit_mut("", &mut |name, t| {
        if name == "head.bias" {
            t.data_mut()[0] = f32::NAN;
        }
    });
    let err = train_loop(&mut m, &ds, &cfg, None).unwrap_err();
    assert!(matches!(err, TrainError::NonFiniteLoss { iter: 1, .. }), "{err}");
}

#[test]
fn invalid_setups_are_rejected() {
    let (m, ds, cfg) = small_setup();

    let mut fused = m.fused();
    assert!(matches!(
        train_loop(&mut fused, &ds, &cfg, None),
        Err(TrainError::Model(ModelError::State(_)))
    ));

    let mut big = cfg.clone();
    big.patch_size = 13;
    assert!(matches!(
        train_loop(&mut m.clone(), &ds, &big, None),
        Err(TrainError::Data(cfsr::data::DataError::PatchTooLarge { .. }))
    ));

    let mut bad = cfg.clone();
    bad.schedule = LrSchedule::Constant;
    bad.adam.beta1 = 0.0;
    assert!(matches!(
        train_loop(&mut m.clone(), &ds, &bad, None),
        Err(TrainError::InvalidConfig(_))
    ));

    let x3 = Dataset::from_hr_images(vec![("a".into(), test_card(30, 30))], 3).unwrap();
    assert!(matches!(
        train_loop(&mut m.clone(), &x3, &cfg, None),
        Err(TrainError::InvalidConfig(_))
    ));
}
