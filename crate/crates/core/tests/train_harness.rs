use mrae_core::backbone::Level;
use mrae_core::data::{generate_synthetic, SyntheticConfig, SyntheticSample, Target};
use mrae_core::fusion::FusionMode;
use mrae_core::tensor::{Graph, Tensor};
use mrae_core::train::{
    evaluate, heatmap_loss, localization_hits, predict, render_targets, train, LrSchedule, Model, ModelConfig,
    TemplateSwitch, TrainConfig, Trainer, HEATMAP_STRIDE,
};
use mrae_core::Error;

fn samples(n: usize, seed: u64) -> Vec<SyntheticSample> {
    generate_synthetic(&SyntheticConfig { n_images: n, seed, ..SyntheticConfig::default() }).unwrap()
}

fn mrae(t: Level) -> FusionMode {
    FusionMode::Mrae { template: t }
}

fn assert_stores_equal(a: &mrae_core::tensor::ParamStore<f64>, b: &mrae_core::tensor::ParamStore<f64>) {
    assert_eq!(a.len(), b.len());
    for (pa, pb) in a.iter().zip(b.iter()) {
        assert_eq!(pa.name, pb.name);
        assert_eq!(pa.tensor, pb.tensor, "{}", pa.name);
    }
}

#[test]
fn heatmap_has_grid_shape() {
    let model = Model::<f64>::new(&ModelConfig::default(), 0).unwrap();
    let data = samples(1, 0);
    for mode in [FusionMode::Soft, mrae(Level::Two), FusionMode::Hard { level: Level::Three }] {
        let (heat, _) = predict(&model, &data[0], mode).unwrap();
        assert_eq!(heat.shape(), [3, 16, 16]);
    }
}

#[test]
fn zero_head_gives_zero_heatmap() {
    let mut model = Model::<f64>::new(&ModelConfig::default(), 3).unwrap();
    for name in ["head.weight", "head.bias"] {
        let id = model.params.id(name).unwrap();
        let shape = model.params.get(id).tensor.shape().to_vec();
        model.params.set(id, Tensor::zeros(&shape)).unwrap();
    }
    let (heat, _) = predict(&model, &samples(1, 1)[0], FusionMode::Soft).unwrap();
    assert!(heat.data().iter().all(|&v| v == 0.0));
}

#[test]
fn loss_of_zero_prediction_is_mean_squared_bump() {
    let target = Target { cx: 30.0, cy: 18.0, size: 6, class: 2 };
    let mut g = Graph::<f64>::new();
    let pred = g.input(Tensor::zeros(&[1, 3, 16, 16]));
    let loss = heatmap_loss(&mut g, pred, &[target], HEATMAP_STRIDE, 1.5).unwrap();

    // Direct sum over the grid of the squared bump, centre (7.5, 4.5) cells.
    let mut total = 0.0;
    for i in 0..16 {
        for j in 0..16 {
            let d2 = (j as f64 + 0.5 - 7.5).powi(2) + (i as f64 + 0.5 - 4.5).powi(2);
            total += (-d2 / 4.5).exp().powi(2);
        }
    }
    let expected = total / (3.0 * 256.0);
    assert!((g.value(loss).item() - expected).abs() < 1e-15, "{} vs {expected}", g.value(loss).item());

    let field = render_targets(&[target], 3, [16, 16], HEATMAP_STRIDE, 1.5).unwrap();
    let mut g = Graph::<f64>::new();
    let exact = g.input(field.reshape(&[1, 3, 16, 16]).unwrap());
    let zero = heatmap_loss(&mut g, exact, &[target], HEATMAP_STRIDE, 1.5).unwrap();
    assert_eq!(g.value(zero).item(), 0.0);

    let mut g = Graph::<f64>::new();
    let pred = g.input(Tensor::zeros(&[1, 3, 16, 16]));
    let outside = Target { cx: 70.0, ..target };
    assert!(heatmap_loss(&mut g, pred, &[outside], HEATMAP_STRIDE, 1.5).is_err());
}

#[test]
fn zero_steps_leave_parameters_untouched() {
    let data = samples(2, 4);
    let cfg = TrainConfig::new(FusionMode::Soft, 0, 11);
    let out = train::<f64>(&cfg, &data, None).unwrap();
    assert!(out.report.is_empty());
    assert_eq!(out.report.final_loss, None);
    let fresh = Model::<f64>::new(&cfg.model, 11).unwrap();
    assert_stores_equal(&out.model.params, &fresh.params);
}

#[test]
fn zero_learning_rate_keeps_loss_constant() {
    let data = samples(1, 5);
    let mut cfg = TrainConfig::new(mrae(Level::Two), 6, 2);
    cfg.lr_schedule = LrSchedule::constant(0.0);
    let out = train::<f64>(&cfg, &data, None).unwrap();
    let first = out.report.losses[0];
    for l in &out.report.losses {
        assert!((l - first).abs() <= 1e-12 * first.abs(), "{:?}", out.report.losses);
    }
}

#[test]
fn identical_runs_give_identical_reports() {
    let data = samples(4, 6);
    let val = samples(3, 60);
    for mode in [FusionMode::Soft, mrae(Level::One), FusionMode::Hard { level: Level::Two }] {
        let cfg = TrainConfig::new(mode, 5, 9);
        let a = train::<f64>(&cfg, &data, Some(&val)).unwrap();
        let b = train::<f64>(&cfg, &data, Some(&val)).unwrap();
        assert_eq!(a.report, b.report);
        assert_stores_equal(&a.model.params, &b.model.params);
        assert_eq!(a.report.len(), 5);
        assert!(a.report.losses.iter().all(|l| l.is_finite() && *l >= 0.0));
    }
}

#[test]
fn first_logged_loss_matches_independent_forward() {
    let data = samples(3, 7);
    let cfg = TrainConfig::new(mrae(Level::Three), 2, 21);
    let out = train::<f64>(&cfg, &data, None).unwrap();

    let model = Model::<f64>::new(&cfg.model, 21).unwrap();
    let mut g = Graph::new();
    let p = model.params.bind(&mut g);
    let image = g.input(data[0].image.clone().reshape(&[1, 3, 64, 64]).unwrap());
    let fwd = model.forward(&mut g, &p, image, cfg.fusion).unwrap();
    let loss = heatmap_loss(&mut g, fwd.heatmap, &data[0].targets, HEATMAP_STRIDE, cfg.sigma).unwrap();
    assert_eq!(out.report.losses[0], g.value(loss).item());
}

#[test]
fn logged_weights_are_valid_distributions() {
    let data = samples(4, 8);
    let out = train::<f64>(&TrainConfig::new(mrae(Level::Two), 8, 1), &data, None).unwrap();
    for w in &out.report.weights {
        assert!(w.0.iter().all(|&a| a > 0.0));
        assert!((w.0.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.0[1] >= w.0[0] && w.0[1] >= w.0[2]);
    }
    let hard = train::<f64>(&TrainConfig::new(FusionMode::Hard { level: Level::One }, 3, 1), &data, None).unwrap();
    assert!(hard.report.weights.iter().all(|w| w.0 == [1.0, 0.0, 0.0]));
}

#[test]
fn template_switch_keeps_parameters_and_optimizer_state() {
    let data = samples(5, 9);
    let mut cfg = TrainConfig::new(mrae(Level::One), 8, 4);
    cfg.switch_template_at = Some(TemplateSwitch { step: 4, template: Level::Two });

    let mut trainer = Trainer::<f64>::new(cfg.clone(), &data).unwrap();
    for _ in 0..4 {
        assert_eq!(trainer.current_mode(), mrae(Level::One));
        trainer.step().unwrap();
    }
    // The boundary changes only which level is the template.
    assert_eq!(trainer.current_mode(), mrae(Level::Two));
    let before = trainer.params().clone();
    let velocity = trainer.optimizer().velocity().to_vec();
    assert_stores_equal(trainer.params(), &before);
    trainer.run().unwrap();
    let mixed = trainer.finish(None).unwrap();

    // Same result as training template 1 for four steps then continuing
    // from those parameters and velocities with template 2.
    let mut pure = TrainConfig::new(mrae(Level::One), 4, 4);
    pure.lr_schedule = cfg.lr_schedule.clone();
    let mut first_half = Trainer::<f64>::new(pure, &data).unwrap();
    first_half.run().unwrap();
    assert_stores_equal(first_half.params(), &before);
    assert_eq!(first_half.optimizer().velocity(), &velocity[..]);
    assert_eq!(&mixed.report.losses[..4], &first_half.report().losses[..]);

    for w in &mixed.report.weights[4..] {
        assert!(w.0[1] >= w.0[0] && w.0[1] >= w.0[2]);
    }
    for w in &mixed.report.weights[..4] {
        assert!(w.0[0] >= w.0[1] && w.0[0] >= w.0[2]);
    }
}

#[test]
fn divergence_is_reported_with_step_and_norms() {
    let data = samples(3, 10);
    let mut cfg = TrainConfig::new(FusionMode::Soft, 50, 0);
    cfg.lr_schedule = LrSchedule::constant(1e12);
    match train::<f64>(&cfg, &data, None) {
        Err(Error::NonFiniteLoss { step, norms }) => {
            assert!(step > 0 && step < 50);
            assert!(norms.contains("backbone.stem.weight"), "{norms}");
        }
        Err(other) => panic!("unexpected error {other}"),
        Ok(_) => panic!("training at lr 1e12 did not diverge"),
    }
}

#[test]
fn evaluation_scores_and_errors() {
    let model = Model::<f64>::new(&ModelConfig::default(), 0).unwrap();
    assert!(evaluate(&model, &[], FusionMode::Soft).is_err());
    let val = samples(20, 11);
    let ev = evaluate(&model, &val, mrae(Level::Two)).unwrap();
    assert_eq!(ev.targets, 20);
    assert!((0.0..=1.0).contains(&ev.localization_score));
    assert!((ev.mean_weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);

    // Serial recount agrees with the parallel merge.
    let mut hits = 0;
    for s in &val {
        let (heat, _) = predict(&model, s, mrae(Level::Two)).unwrap();
        hits += localization_hits(&heat, &s.targets, HEATMAP_STRIDE).unwrap();
    }
    assert_eq!(hits, ev.hits);

    let no_targets =
        generate_synthetic(&SyntheticConfig { n_images: 2, objects_per_image: 0, ..SyntheticConfig::default() }).unwrap();
    assert!(evaluate(&model, &no_targets, FusionMode::Soft).is_err());
}

#[test]
fn single_precision_runs() {
    let data = samples(3, 12);
    let out = train::<f32>(&TrainConfig::new(mrae(Level::Two), 4, 3), &data, Some(&data)).unwrap();
    assert_eq!(out.report.len(), 4);
    assert!(out.report.losses.iter().all(|l| l.is_finite()));
    let f64_run = train::<f64>(&TrainConfig::new(mrae(Level::Two), 4, 3), &data, None).unwrap();
    assert!((out.report.losses[0] - f64_run.report.losses[0]).abs() < 1e-4 * f64_run.report.losses[0]);
}

#[test]
fn empty_training_set_is_rejected() {
    assert!(train::<f64>(&TrainConfig::new(FusionMode::Soft, 1, 0), &[], None).is_err());
}
