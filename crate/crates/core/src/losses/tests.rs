use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{central_difference, max_relative_error, ParamStore};
use crate::geometry::GraspRect;
use crate::model::ModelConfig;

const LN2: f64 = std::f64::consts::LN_2;

fn probs(tape: &mut Tape, v: &[f64]) -> Var {
    tape.leaf(Tensor::from_vec(v.to_vec()))
}

fn sample(pos: &[usize], neg: &[usize]) -> SampleSet {
    SampleSet {
        positives: pos.to_vec(),
        negatives: neg.to_vec(),
    }
}

#[test]
fn intermediate_uniform_is_ln2() {
    let mut t = Tape::new();
    let p = probs(&mut t, &[0.5; 8]);
    let l = intermediate_loss(&mut t, p, &sample(&[2], &[0, 5, 7]), 1e-7)
        .unwrap()
        .unwrap();
    assert!((t.value(l).data()[0] - LN2).abs() < 1e-12);
}

#[test]
fn intermediate_perfect_is_near_zero() {
    let eps = 1e-7;
    let mut t = Tape::new();
    let p = probs(&mut t, &[1.0 - eps, eps, eps, eps, 1.0]);
    let l = intermediate_loss(&mut t, p, &sample(&[0, 4], &[1, 2, 3]), eps)
        .unwrap()
        .unwrap();
    let v = t.value(l).data()[0];
    assert!((0.0..1e-6).contains(&v), "{v}");
}

#[test]
fn intermediate_empty_sample_is_flagged() {
    let mut t = Tape::new();
    let p = probs(&mut t, &[0.5; 4]);
    assert!(intermediate_loss(&mut t, p, &SampleSet::default(), 1e-7)
        .unwrap()
        .is_none());
}

#[test]
fn scorer_loss_fixtures() {
    let eps = 1e-7;
    let mut t = Tape::new();
    let p = probs(&mut t, &[0.5; 4]);
    let l = scorer_loss(&mut t, p, &[1, 0, 0, 1], eps).unwrap();
    assert!((t.value(l).data()[0] - LN2).abs() < 1e-12);
    let p = probs(&mut t, &[1.0 - eps; 4]);
    let l = scorer_loss(&mut t, p, &[1; 4], eps).unwrap();
    assert!(t.value(l).data()[0] < 1e-6);
}

fn reg_value(pred: &[f64], target: [f64; 5], sp: &[f64], alpha: f64) -> f64 {
    let mut t = Tape::new();
    let d = t.leaf(Tensor::from_vec(pred.to_vec()));
    let s = probs(&mut t, sp);
    let l = regression_loss(&mut t, d, |_, m| m, &[(0, target)], s, alpha, 1e-7).unwrap();
    t.value(l).data()[0]
}

#[test]
fn regression_fixtures() {
    let eps = 1e-7;
    let tail = -(1.0f64 - eps).ln();
    // Perfect fit, confident scorer.
    let v = reg_value(
        &[0.1, 0.2, 0.3, 0.4, 0.5],
        [0.1, 0.2, 0.3, 0.4, 0.5],
        &[1.0 - eps; 3],
        2.0,
    );
    assert!((v - tail).abs() < 1e-15);
    // One coordinate off by 0.5 with alpha = 2.
    let v = reg_value(&[0.0, 0.0, 0.5, 0.0, 0.0], [0.0; 5], &[1.0 - eps; 3], 2.0);
    assert!((v - tail - 0.25).abs() < 1e-12);
    // Uniform scorer contributes ln 2.
    let v = reg_value(&[0.0; 5], [0.0; 5], &[0.5; 3], 2.0);
    assert!((v - LN2).abs() < 1e-12);
}

#[test]
fn regression_without_positives_keeps_feedback() {
    let mut t = Tape::new();
    let d = t.leaf(Tensor::from_vec(vec![0.0; 5]));
    let s = probs(&mut t, &[0.5, 0.5]);
    let l = regression_loss(&mut t, d, |_, m| m, &[], s, 2.0, 1e-7).unwrap();
    assert!((t.value(l).data()[0] - LN2).abs() < 1e-12);
    let empty = probs(&mut t, &[]);
    assert!(regression_loss(&mut t, d, |_, m| m, &[], empty, 2.0, 1e-7).is_err());
}

#[test]
fn lower_scorer_probability_raises_regression_loss() {
    let mut prev = f64::NEG_INFINITY;
    for p in [0.99, 0.8, 0.5, 0.2, 0.01] {
        let v = reg_value(&[0.3; 5], [0.0; 5], &[0.9, p], 2.0);
        assert!(v > prev);
        prev = v;
    }
}

pub(crate) fn tiny_scene(seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let image = Tensor::new(&[3, 8, 8], (0..192).map(|_| rng.random()).collect()).unwrap();
    let mut grasps = Vec::new();
    for _ in 0..3 {
        grasps.push(
            GraspRect::new(
                rng.random_range(0.5..7.5),
                rng.random_range(0.5..7.5),
                rng.random_range(3.0..5.0),
                rng.random_range(1.5..2.5),
                rng.random_range(-90.0..90.0),
            )
            .unwrap(),
        );
    }
    Scene {
        image,
        grasps,
        object_id: format!("tiny{seed}"),
    }
}

pub(crate) fn tiny_loss_config() -> LossConfig {
    LossConfig {
        t: 4,
        p_max: 2,
        // Wider than the default so the small scenes produce positives.
        angle_match_thr: 60.0,
        jaccard_angle_thr: 45.0,
        jaccard_iou_thr: 0.1,
        ..LossConfig::default()
    }
}

fn tiny_plan(model: &Model, scene: &Scene, cfg: &LossConfig, seed: u64) -> StepPlan {
    let (f, map) = model.infer(&scene.image).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    plan_step(model, &f, &map, scene, cfg, SelectionMode::Primary, &mut rng).unwrap()
}

fn tiny_model(seed: u64) -> Model {
    Model::new(ModelConfig {
        init_seed: seed,
        ..ModelConfig::tiny()
    })
    .unwrap()
}

fn randomize(model: &mut Model, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in model.params.iter_mut() {
        p.value
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-0.8..0.8));
    }
}

fn flat_params(s: &ParamStore) -> Vec<f64> {
    s.iter().flat_map(|(_, p)| p.value.data().to_vec()).collect()
}

fn set_flat(model: &mut Model, x: &[f64]) {
    let mut off = 0;
    for p in model.params.iter_mut() {
        let n = p.value.numel();
        p.value.data_mut().copy_from_slice(&x[off..off + n]);
        off += n;
    }
}

fn flat_grads(s: &ParamStore) -> Vec<f64> {
    s.iter().flat_map(|(_, p)| p.grad.data().to_vec()).collect()
}

#[test]
fn total_objective_gradient_matches_finite_differences() {
    let cfg = tiny_loss_config();
    let scene = tiny_scene(1);
    let mut model = tiny_model(3);
    // Zero biases leave border patches exactly on the leaky-ReLU kink.
    randomize(&mut model, 3);
    let plan = tiny_plan(&model, &scene, &cfg, 0);
    assert!(!plan.sample.positives.is_empty());
    model.params.zero_grad();
    accumulate_gradients(&mut model, &scene.image, &plan, &cfg, LossKind::Total, GroupSet::ALL).unwrap();
    let analytic = flat_grads(&model.params);
    let x0 = flat_params(&model.params);
    let mut probe = model.clone();
    let numeric = central_difference(&x0, 1e-5, |x| {
        set_flat(&mut probe, x);
        Ok(evaluate_plan(&probe, &scene.image, &plan, &cfg)?.total())
    })
    .unwrap();
    let err = max_relative_error(&analytic, &numeric);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn scorer_loss_never_reaches_pgp() {
    let cfg = tiny_loss_config();
    let scene = tiny_scene(2);
    let mut model = tiny_model(5);
    let plan = tiny_plan(&model, &scene, &cfg, 1);
    model.params.zero_grad();
    accumulate_gradients(&mut model, &scene.image, &plan, &cfg, LossKind::Scorer, SCORER_GATE).unwrap();
    assert!(model
        .params
        .grads_in(ParamGroup::Pgp)
        .all(|g| g.data().iter().all(|&v| v == 0.0)));
    assert!(model.params.grads_in(ParamGroup::Scorer).any(|g| g.max_abs() > 0.0));

    // Yet the scorer loss does depend on PGP weights through the deltas.
    let id = model.params.find("pgp.reg.weight").unwrap();
    let base = evaluate_plan(&model, &scene.image, &plan, &cfg).unwrap().scorer;
    let mut bumped = model.clone();
    bumped
        .params
        .get_mut(id)
        .value
        .data_mut()
        .iter_mut()
        .for_each(|v| *v += 1e-3);
    let moved = evaluate_plan(&bumped, &scene.image, &plan, &cfg).unwrap().scorer;
    assert_ne!(base, moved);
}

#[test]
fn regression_loss_reaches_pgp_through_frozen_scorer() {
    let cfg = tiny_loss_config();
    let scene = tiny_scene(3);
    let mut model = tiny_model(7);
    let mut plan = tiny_plan(&model, &scene, &cfg, 2);
    // Isolate the feedback term: no positives means no smooth-L1 part.
    plan.sample.positives.clear();
    model.params.zero_grad();
    accumulate_gradients(
        &mut model,
        &scene.image,
        &plan,
        &cfg,
        LossKind::Regression,
        REGRESSION_GATE,
    )
    .unwrap();
    assert!(model
        .params
        .grads_in(ParamGroup::Scorer)
        .all(|g| g.data().iter().all(|&v| v == 0.0)));
    let id = model.params.find("pgp.reg.weight").unwrap();
    assert!(model.params.get(id).grad.max_abs() > 0.0);
}

#[test]
fn gate_audit_over_a_full_step() {
    let cfg = tiny_loss_config();
    let scene = tiny_scene(4);
    let model = tiny_model(9);
    let plan = tiny_plan(&model, &scene, &cfg, 3);
    let grads_for = |kind, gate| {
        let mut m = model.clone();
        m.params.zero_grad();
        accumulate_gradients(&mut m, &scene.image, &plan, &cfg, kind, gate).unwrap();
        m
    };
    let inter = grads_for(LossKind::Intermediate, INTERMEDIATE_GATE);
    let scorer = grads_for(LossKind::Scorer, SCORER_GATE);
    let reg = grads_for(LossKind::Regression, REGRESSION_GATE);
    assert!(untouched_groups(&inter).contains(&ParamGroup::Scorer));
    assert!(untouched_groups(&scorer).contains(&ParamGroup::Pgp));
    assert!(untouched_groups(&reg).contains(&ParamGroup::Scorer));

    // The combined step equals the sum of the three gated passes.
    let mut combined = model.clone();
    combined.params.zero_grad();
    for (kind, gate) in [
        (LossKind::Intermediate, INTERMEDIATE_GATE),
        (LossKind::Scorer, SCORER_GATE),
        (LossKind::Regression, REGRESSION_GATE),
    ] {
        accumulate_gradients(&mut combined, &scene.image, &plan, &cfg, kind, gate).unwrap();
    }
    for (i, (_, p)) in combined.params.iter().enumerate() {
        let id = crate::autodiff::ParamId(i);
        for (j, &g) in p.grad.data().iter().enumerate() {
            let parts = inter.params.get(id).grad.data()[j]
                + scorer.params.get(id).grad.data()[j]
                + reg.params.get(id).grad.data()[j];
            assert!((g - parts).abs() <= 1e-12 * g.abs().max(1.0));
        }
    }
}

#[test]
fn training_step_is_deterministic() {
    let cfg = tiny_loss_config();
    let batch = [tiny_scene(5), tiny_scene(6)];
    let run = || {
        let mut m = tiny_model(11);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let sgd = SgdConfig::default();
        let mut losses = Vec::new();
        for _ in 0..3 {
            losses.push(training_step(&mut m, &batch, &cfg, &sgd, SelectionMode::Primary, &mut rng).unwrap());
        }
        (losses, m.params)
    };
    let (a, pa) = run();
    let (b, pb) = run();
    assert_eq!(a, b);
    assert_eq!(pa, pb);
}

#[test]
fn final_score_selection_runs() {
    let cfg = tiny_loss_config();
    let batch = [tiny_scene(7)];
    let mut m = tiny_model(1);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let v = training_step(
        &mut m,
        &batch,
        &cfg,
        &SgdConfig::default(),
        SelectionMode::FinalScore,
        &mut rng,
    )
    .unwrap();
    assert!(v.is_finite());
    assert!(v.intermediate >= 0.0 && v.scorer >= 0.0 && v.reg >= 0.0);
}

#[test]
fn loss_config_validation() {
    assert!(LossConfig::default().validate().is_ok());
    assert!(LossConfig {
        eps: 0.5,
        ..LossConfig::default()
    }
    .validate()
    .is_err());
    assert!(LossConfig {
        t: 0,
        ..LossConfig::default()
    }
    .validate()
    .is_err());
    assert!(LossConfig {
        alpha: 0.0,
        ..LossConfig::default()
    }
    .validate()
    .is_err());
    assert_eq!(
        "final-score".parse::<SelectionMode>().unwrap(),
        SelectionMode::FinalScore
    );
}
