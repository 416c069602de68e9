//! Training objectives and the composite, gradient-gated training step.
//!
//! * intermediate loss: cross-entropy of the primary score over `P`
//!   positives and `3P` negatives from Angle Matching;
//! * scorer loss: cross-entropy of the scorer over the top-T candidates,
//!   labelled by Jaccard Matching of their decoded grasps;
//! * regression loss: `alpha/P * sum smooth_l1(target - pred)` over the
//!   positives, minus the mean log scorer probability of the top-T.
//!
//! Routing: the scorer loss updates SCORER and FE only, the regression loss
//! updates PGP and FE only. Both still differentiate through the frozen
//! groups, which is how the scorer's opinion reaches PGP's deltas.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::anchors::decode;
use crate::autodiff::{sgd_momentum_step, GroupSet, ParamGroup, Tape, Tensor, Var};
use crate::data::Scene;
use crate::error::{GraspError, Result};
use crate::matching::{angle_match, jaccard_label, sample_pgp, select_top_t, AnchorLabel, LabelMap, SampleSet};
use crate::model::{Bound, Forward, Model, PredictionMap};

pub const INTERMEDIATE_GATE: GroupSet = GroupSet::ALL_BUT_SCORER;
pub const SCORER_GATE: GroupSet = GroupSet::ALL_BUT_PGP;
pub const REGRESSION_GATE: GroupSet = GroupSet::ALL_BUT_SCORER;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha: f64,
    pub p_max: usize,
    pub t: usize,
    /// Probabilities are clamped to `[eps, 1 - eps]` before logs.
    pub eps: f64,
    pub angle_match_thr: f64,
    pub jaccard_angle_thr: f64,
    pub jaccard_iou_thr: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            p_max: 64,
            t: 64,
            eps: 1e-7,
            angle_match_thr: 15.0,
            jaccard_angle_thr: 15.0,
            jaccard_iou_thr: 0.25,
        }
    }
}

impl LossConfig {
    /// Default settings with T scaled to the desk grid: 64 of 2400 candidates
    /// becomes 10 of 384.
    pub fn desk() -> Self {
        Self {
            t: 10,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || self.t == 0 || self.p_max == 0 {
            return Err(GraspError::Config("alpha, t and p_max must be positive".into()));
        }
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return Err(GraspError::Config(format!("eps {} outside (0, 0.5)", self.eps)));
        }
        if !(self.angle_match_thr > 0.0 && self.jaccard_angle_thr > 0.0 && self.jaccard_iou_thr > 0.0) {
            return Err(GraspError::Config("matching thresholds must be positive".into()));
        }
        Ok(())
    }
}

/// How the top-T candidates for the scorer are chosen during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMode {
    /// By PGP's primary score.
    #[default]
    Primary,
    /// By the scorer's final score over all candidates.
    FinalScore,
}

impl std::str::FromStr for SelectionMode {
    type Err = GraspError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "primary" => Ok(SelectionMode::Primary),
            "final-score" | "final_score" => Ok(SelectionMode::FinalScore),
            _ => Err(GraspError::Config(format!("unknown selection mode {s:?}"))),
        }
    }
}

/// Discrete choices made for one image before the losses are built.
#[derive(Debug, Clone)]
pub struct StepPlan {
    pub labels: LabelMap,
    pub sample: SampleSet,
    pub top_t: Vec<usize>,
    pub jaccard: Vec<u8>,
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    /// `None` when the sample set is empty.
    pub intermediate: Option<Var>,
    pub scorer: Var,
    pub reg: Var,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub intermediate: f64,
    pub scorer: f64,
    pub reg: f64,
}

impl LossValues {
    pub fn total(&self) -> f64 {
        self.intermediate + self.scorer + self.reg
    }

    pub fn is_finite(&self) -> bool {
        self.total().is_finite()
    }
}

/// Mean binary cross-entropy of `probs` against 0/1 `targets`.
pub fn binary_cross_entropy(tape: &mut Tape, probs: Var, targets: &[f64], eps: f64) -> Result<Var> {
    let shape = tape.shape(probs).to_vec();
    let p = tape.clamp(probs, eps, 1.0 - eps);
    let log_p = tape.log(p);
    let neg = tape.scale(p, -1.0);
    let one_minus = tape.add_scalar(neg, 1.0);
    let log_q = tape.log(one_minus);
    let t = tape.constant(Tensor::new(&shape, targets.to_vec())?);
    let one_minus_t = tape.constant(Tensor::new(&shape, targets.iter().map(|v| 1.0 - v).collect())?);
    let a = tape.mul(t, log_p)?;
    let b = tape.mul(one_minus_t, log_q)?;
    let s = tape.add(a, b)?;
    let m = tape.mean(s);
    Ok(tape.scale(m, -1.0))
}

/// Primary-score cross-entropy over the sampled positives and negatives.
/// Returns `None` for an empty sample.
pub fn intermediate_loss(tape: &mut Tape, primary_probs: Var, sample: &SampleSet, eps: f64) -> Result<Option<Var>> {
    if sample.is_empty() {
        return Ok(None);
    }
    let idx: Vec<Option<usize>> = sample
        .positives
        .iter()
        .chain(&sample.negatives)
        .map(|&i| Some(i))
        .collect();
    let n = idx.len();
    let probs = tape.gather(primary_probs, idx, &[n])?;
    let targets: Vec<f64> = (0..n)
        .map(|i| if i < sample.positives.len() { 1.0 } else { 0.0 })
        .collect();
    binary_cross_entropy(tape, probs, &targets, eps).map(Some)
}

/// Scorer cross-entropy over the top-T candidates.
pub fn scorer_loss(tape: &mut Tape, scorer_probs: Var, jaccard: &[u8], eps: f64) -> Result<Var> {
    let targets: Vec<f64> = jaccard.iter().map(|&l| f64::from(l)).collect();
    binary_cross_entropy(tape, scorer_probs, &targets, eps)
}

/// Smooth-L1 regression on the positives plus the scorer feedback term.
///
/// `pred_at(li, m)` locates component `m` of anchor `li` inside `deltas`.
pub fn regression_loss(
    tape: &mut Tape,
    deltas: Var,
    pred_at: impl Fn(usize, usize) -> usize,
    positives: &[(usize, [f64; 5])],
    scorer_probs: Var,
    alpha: f64,
    eps: f64,
) -> Result<Var> {
    let t = tape.value(scorer_probs).numel();
    if t == 0 {
        return Err(GraspError::Empty("regression loss needs at least one scorer output"));
    }
    let p = tape.clamp(scorer_probs, eps, 1.0 - eps);
    let logs = tape.log(p);
    let mean_log = tape.mean(logs);
    let feedback = tape.scale(mean_log, -1.0);
    if positives.is_empty() {
        return Ok(feedback);
    }
    let n = positives.len();
    let idx = positives
        .iter()
        .flat_map(|&(li, _)| (0..5).map(move |m| (li, m)))
        .map(|(li, m)| Some(pred_at(li, m)))
        .collect();
    let pred = tape.gather(deltas, idx, &[n * 5])?;
    let target = tape.constant(Tensor::new(
        &[n * 5],
        positives.iter().flat_map(|(_, d)| d.iter().copied()).collect(),
    )?);
    let diff = tape.sub(target, pred)?;
    let sl1 = tape.smooth_l1(diff);
    let sum = tape.sum(sl1);
    let fit = tape.scale(sum, alpha / n as f64);
    tape.add(fit, feedback)
}

/// Chooses labels, samples and the scorer's top-T for one image.
pub fn plan_step<R: Rng + ?Sized>(
    model: &Model,
    features: &Tensor,
    map: &PredictionMap,
    scene: &Scene,
    cfg: &LossConfig,
    selection: SelectionMode,
    rng: &mut R,
) -> Result<StepPlan> {
    let labels = angle_match(&model.grid, &scene.grasps, cfg.angle_match_thr);
    let sample = sample_pgp(&labels, cfg.p_max, rng);
    let scores = match selection {
        SelectionMode::Primary => map.primary_scores(),
        SelectionMode::FinalScore => model.scorer_scores(features, map)?,
    };
    let top_t = select_top_t(&scores, cfg.t);
    let jaccard = top_t
        .iter()
        .map(|&li| {
            let g = decode(&map.delta(li), &model.grid.anchors()[li], model.config.k);
            jaccard_label(&g, &scene.grasps, cfg.jaccard_angle_thr, cfg.jaccard_iou_thr)
        })
        .collect();
    Ok(StepPlan {
        labels,
        sample,
        top_t,
        jaccard,
    })
}

fn positive_targets(labels: &LabelMap, sample: &SampleSet) -> Vec<(usize, [f64; 5])> {
    sample
        .positives
        .iter()
        .map(|&li| match labels.labels[li] {
            AnchorLabel::Positive { target, .. } => (li, target.to_array()),
            AnchorLabel::Negative => unreachable!("sampled positive without target"),
        })
        .collect()
}

/// Builds the three losses on a tape that already holds `fwd`.
pub fn build_losses(
    model: &Model,
    tape: &mut Tape,
    bound: &Bound,
    fwd: &Forward,
    plan: &StepPlan,
    cfg: &LossConfig,
) -> Result<LossVars> {
    let intermediate = intermediate_loss(tape, fwd.primary_probs, &plan.sample, cfg.eps)?;
    let scorer_probs = model.scorer_on_forward(tape, bound, fwd, &plan.top_t)?;
    let scorer = scorer_loss(tape, scorer_probs, &plan.jaccard, cfg.eps)?;
    let positives = positive_targets(&plan.labels, &plan.sample);
    let gh = model.grid.grid_h;
    let gw = model.grid.grid_w;
    let reg = regression_loss(
        tape,
        fwd.deltas,
        |li, m| {
            let ix = model.grid.unravel(li);
            ((ix.a * 5 + m) * gh + ix.row) * gw + ix.col
        },
        &positives,
        scorer_probs,
        cfg.alpha,
        cfg.eps,
    )?;
    Ok(LossVars {
        intermediate,
        scorer,
        reg,
    })
}

/// Loss values for a fixed plan at the model's current parameters.
pub fn evaluate_plan(model: &Model, image: &Tensor, plan: &StepPlan, cfg: &LossConfig) -> Result<LossValues> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let fwd = model.forward(&mut tape, &bound, image)?;
    let l = build_losses(model, &mut tape, &bound, &fwd, plan, cfg)?;
    Ok(values(&tape, &l))
}

fn values(tape: &Tape, l: &LossVars) -> LossValues {
    LossValues {
        intermediate: l.intermediate.map_or(0.0, |v| tape.value(v).data()[0]),
        scorer: tape.value(l.scorer).data()[0],
        reg: tape.value(l.reg).data()[0],
    }
}

/// Which objective a backward pass starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Intermediate,
    Scorer,
    Regression,
    Total,
}

/// Accumulates `scale * d(loss)/d(param)` into the model's gradient
/// buffers for a fixed plan, restricted to `gate`.
pub fn accumulate_gradients(
    model: &mut Model,
    image: &Tensor,
    plan: &StepPlan,
    cfg: &LossConfig,
    kind: LossKind,
    gate: GroupSet,
) -> Result<LossValues> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let fwd = model.forward(&mut tape, &bound, image)?;
    let l = build_losses(model, &mut tape, &bound, &fwd, plan, cfg)?;
    let loss = match kind {
        LossKind::Intermediate => l.intermediate,
        LossKind::Scorer => Some(l.scorer),
        LossKind::Regression => Some(l.reg),
        LossKind::Total => {
            let s = tape.add(l.scorer, l.reg)?;
            Some(match l.intermediate {
                Some(i) => tape.add(s, i)?,
                None => s,
            })
        }
    };
    if let Some(loss) = loss {
        tape.backward(loss, gate, &mut model.params)?;
    }
    Ok(values(&tape, &l))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            momentum: 0.9,
            weight_decay: 0.0001,
        }
    }
}

/// One optimizer step over a batch of scenes.
///
/// Per scene: FE → PGP forward, Angle Matching, P/3P sampling, top-T
/// selection, Jaccard labels on the decoded top-T, scorer forward, then the
/// three gated backwards. Losses are averaged over the batch and a single
/// momentum step is applied to all accumulated gradients.
pub fn training_step<R: Rng + ?Sized>(
    model: &mut Model,
    batch: &[Scene],
    cfg: &LossConfig,
    sgd: &SgdConfig,
    selection: SelectionMode,
    rng: &mut R,
) -> Result<LossValues> {
    if batch.is_empty() {
        return Err(GraspError::Empty("training batch"));
    }
    model.params.zero_grad();
    let scale = 1.0 / batch.len() as f64;
    let mut total = LossValues::default();
    for scene in batch {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let fwd = model.forward(&mut tape, &bound, &scene.image)?;
        let map = model.prediction_map(&tape, &fwd);
        let features = tape.value(fwd.features).clone();
        let plan = plan_step(model, &features, &map, scene, cfg, selection, rng)?;
        let l = build_losses(model, &mut tape, &bound, &fwd, &plan, cfg)?;
        if let Some(i) = l.intermediate {
            tape.backward_scaled(i, scale, INTERMEDIATE_GATE, &mut model.params)?;
        }
        tape.backward_scaled(l.scorer, scale, SCORER_GATE, &mut model.params)?;
        tape.backward_scaled(l.reg, scale, REGRESSION_GATE, &mut model.params)?;
        let v = values(&tape, &l);
        total.intermediate += scale * v.intermediate;
        total.scorer += scale * v.scorer;
        total.reg += scale * v.reg;
    }
    if total.is_finite() {
        sgd_momentum_step(&mut model.params, sgd.lr, sgd.momentum, sgd.weight_decay);
    }
    Ok(total)
}

/// Groups whose gradient buffers are all exactly zero.
pub fn untouched_groups(model: &Model) -> Vec<ParamGroup> {
    ParamGroup::ALL
        .into_iter()
        .filter(|&g| model.params.grads_in(g).all(|t| t.data().iter().all(|&v| v == 0.0)))
        .collect()
}

#[cfg(test)]
mod tests;
