//! Training loop, evaluation, cross-validation and ablations.

mod checkpoint;
mod config;
mod experiments;

use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, SavedParam, FORMAT_VERSION};
pub use config::{parse_flat, AnchorSource, RunConfig, TrainConfig};
pub use experiments::{cross_validate, format_ablation, run_ablation, AblationKind, AblationRow, CvReport, FoldResult};

use crate::anchors::{decode, mean_anchor};
use crate::data::{augment, AugmentConfig, Scene, Transform};
use crate::error::{GraspError, Result};
use crate::geometry::{is_success, GraspRect};
use crate::losses::{training_step, LossValues};
use crate::matching::select_top_t;
use crate::model::{Model, ModelConfig, ScoreMode};

pub const EVAL_ANGLE_THR: f64 = 30.0;
pub const EVAL_IOU_THR: f64 = 0.25;

/// One metrics line: mean losses since the previous line plus accuracies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub iteration: usize,
    pub intermediate: f64,
    pub scorer: f64,
    pub reg: f64,
    pub accuracy_primary: Option<f64>,
    pub accuracy_scorer: Option<f64>,
}

#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Held-out scenes evaluated every `eval_period` iterations.
    pub eval: &'a [Scene],
    /// JSON-lines sink for [`Metrics`].
    pub metrics: Option<&'a mut dyn Write>,
    /// Where to dump the model if a loss becomes non-finite.
    pub diagnostic: Option<PathBuf>,
}

pub struct TrainOutcome {
    pub model: Model,
    pub checkpoint: Checkpoint,
    pub history: Vec<Metrics>,
}

/// Model config with the anchor size resolved from the training scenes.
pub fn resolve_model_config(run: &RunConfig, scenes: &[Scene]) -> Result<ModelConfig> {
    let mut cfg = run.model.clone();
    if run.train.anchor == AnchorSource::MeanBox {
        let gts: Vec<GraspRect> = scenes.iter().flat_map(|s| s.grasps.iter().copied()).collect();
        let (w, h) = mean_anchor(&gts)?;
        cfg.anchor_w = w;
        cfg.anchor_h = h;
    }
    Ok(cfg)
}

/// Rescales a scene to the model's square input if needed.
pub fn fit_to_size(scene: &Scene, size: usize) -> Scene {
    if scene.width() == size && scene.height() == size {
        return scene.clone();
    }
    let t = Transform {
        scale: size as f64 / scene.width().min(scene.height()) as f64,
        src_size: (scene.width(), scene.height()),
        ..Transform::identity(size)
    };
    t.apply(scene)
}

/// Top-1 grasp under each scoring mode, sharing one forward pass.
pub fn top1_both(model: &Model, image: &crate::autodiff::Tensor) -> Result<(GraspRect, GraspRect)> {
    let (features, map) = model.infer(image)?;
    let pick = |scores: &[f64]| {
        let li = select_top_t(scores, 1)[0];
        decode(&map.delta(li), &model.grid.anchors()[li], model.config.k)
    };
    let primary = pick(&map.primary_scores());
    let scorer = pick(&model.scorer_scores(&features, &map)?);
    Ok((primary, scorer))
}

/// Fraction of scenes whose top-1 grasp matches a ground truth.
pub fn evaluate(model: &Model, scenes: &[Scene], mode: ScoreMode, angle_thr: f64, iou_thr: f64) -> Result<f64> {
    if scenes.is_empty() {
        return Err(GraspError::Empty("evaluation scenes"));
    }
    let mut hits = 0usize;
    for s in scenes {
        let s = fit_to_size(s, model.config.image_size);
        let (g, _) = model.predict_top1(&s.image, mode)?;
        hits += is_success(&g, &s.grasps, angle_thr, iou_thr) as usize;
    }
    Ok(hits as f64 / scenes.len() as f64)
}

/// `(primary, scorer)` accuracies under the standard criterion.
pub fn evaluate_both(model: &Model, scenes: &[Scene]) -> Result<(f64, f64)> {
    if scenes.is_empty() {
        return Err(GraspError::Empty("evaluation scenes"));
    }
    let (mut p, mut s) = (0usize, 0usize);
    for sc in scenes {
        let sc = fit_to_size(sc, model.config.image_size);
        let (gp, gs) = top1_both(model, &sc.image)?;
        p += is_success(&gp, &sc.grasps, EVAL_ANGLE_THR, EVAL_IOU_THR) as usize;
        s += is_success(&gs, &sc.grasps, EVAL_ANGLE_THR, EVAL_IOU_THR) as usize;
    }
    let n = scenes.len() as f64;
    Ok((p as f64 / n, s as f64 / n))
}

/// Trains from scratch. Batches are drawn from reshuffled epochs and, when
/// enabled, every image is freshly augmented.
pub fn train(scenes: &[Scene], run: &RunConfig, opts: TrainOptions<'_>) -> Result<TrainOutcome> {
    run.validate()?;
    let scenes: Vec<&Scene> = scenes.iter().filter(|s| !s.grasps.is_empty()).collect();
    if scenes.is_empty() {
        return Err(GraspError::Empty("training scenes with grasps"));
    }
    let owned: Vec<Scene> = scenes.iter().map(|s| (*s).clone()).collect();
    let model_cfg = resolve_model_config(run, &owned)?;
    let mut model = Model::new(model_cfg)?;
    let size = model.config.image_size;
    let tc = &run.train;
    let aug = AugmentConfig::for_size(size);
    let prepared: Vec<Scene> = if tc.augment {
        owned
    } else {
        owned.iter().map(|s| fit_to_size(s, size)).collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut history = Vec::new();
    let mut metrics = opts.metrics;
    let mut acc = LossValues::default();
    let mut acc_n = 0usize;
    log::info!(
        "training {} iterations on {} scenes, anchor {:.2}x{:.2}",
        tc.iterations,
        prepared.len(),
        model.config.anchor_w,
        model.config.anchor_h
    );
    for it in 1..=tc.iterations {
        let mut batch = Vec::with_capacity(tc.batch_size);
        for _ in 0..tc.batch_size {
            if cursor == order.len() {
                order = (0..prepared.len()).collect();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let s = &prepared[order[cursor]];
            cursor += 1;
            batch.push(if tc.augment {
                augment(s, &aug, &mut rng)
            } else {
                s.clone()
            });
        }
        let l = training_step(&mut model, &batch, &run.loss, &tc.sgd_at(it), tc.selection, &mut rng)?;
        if !l.is_finite() {
            let path = opts.diagnostic.clone();
            if let Some(p) = &path {
                Checkpoint::from_model(&model, run, it - 1).save(p)?;
            }
            log::error!("non-finite loss at iteration {it}: {l:?}");
            return Err(GraspError::NonFiniteLoss { iteration: it, path });
        }
        acc.intermediate += l.intermediate;
        acc.scorer += l.scorer;
        acc.reg += l.reg;
        acc_n += 1;
        let at_period = tc.eval_period > 0 && it % tc.eval_period == 0;
        if at_period || it == tc.iterations {
            let n = acc_n as f64;
            let (ap, asc) = if opts.eval.is_empty() {
                (None, None)
            } else {
                let (p, s) = evaluate_both(&model, opts.eval)?;
                (Some(p), Some(s))
            };
            let m = Metrics {
                iteration: it,
                intermediate: acc.intermediate / n,
                scorer: acc.scorer / n,
                reg: acc.reg / n,
                accuracy_primary: ap,
                accuracy_scorer: asc,
            };
            log::info!(
                "it {it}: L_int {:.4} L_sc {:.4} L_reg {:.4} acc primary {:?} scorer {:?}",
                m.intermediate,
                m.scorer,
                m.reg,
                ap,
                asc
            );
            if let Some(w) = metrics.as_mut() {
                serde_json::to_writer(&mut **w, &m)?;
                w.write_all(b"\n")?;
            }
            history.push(m);
            acc = LossValues::default();
            acc_n = 0;
        }
    }
    let checkpoint = Checkpoint::from_model(&model, run, tc.iterations);
    Ok(TrainOutcome {
        model,
        checkpoint,
        history,
    })
}
