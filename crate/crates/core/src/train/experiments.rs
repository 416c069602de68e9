use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{evaluate_both, resolve_model_config, train, AnchorSource, RunConfig, TrainOptions};
use crate::data::{fold_indices, object_wise_split, Scene};
use crate::error::{GraspError, Result};
use crate::losses::SelectionMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub anchor: (f64, f64),
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub primary: f64,
    pub scorer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldResult>,
    pub mean_primary: f64,
    pub mean_scorer: f64,
}

impl CvReport {
    pub fn to_table(&self) -> String {
        let mut s = String::from("fold  anchor          train  test  primary  scorer\n");
        for f in &self.folds {
            let _ = writeln!(
                s,
                "{:>4}  {:>6.2}x{:<6.2}  {:>5}  {:>4}  {:>7.4}  {:>6.4}",
                f.fold, f.anchor.0, f.anchor.1, f.train_scenes, f.test_scenes, f.primary, f.scorer
            );
        }
        let _ = writeln!(s, "mean{:>30}{:>7.4}  {:>6.4}", "", self.mean_primary, self.mean_scorer);
        s
    }
}

/// Object-wise k-fold cross-validation; the mean-box anchor (when enabled)
/// is recomputed from each training split.
pub fn cross_validate(scenes: &[Scene], folds: usize, run: &RunConfig, split_seed: u64) -> Result<CvReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed);
    let assignment = object_wise_split(scenes, folds, &mut rng)?;
    let mut out = Vec::with_capacity(folds);
    for fold in 0..folds {
        let (tr, te) = fold_indices(&assignment, fold);
        let train_set: Vec<Scene> = tr.iter().map(|&i| scenes[i].clone()).collect();
        let test_set: Vec<Scene> = te.iter().map(|&i| scenes[i].clone()).collect();
        let cfg = resolve_model_config(run, &train_set)?;
        log::info!(
            "fold {fold}: {} train / {} test scenes",
            train_set.len(),
            test_set.len()
        );
        let outcome = train(&train_set, run, TrainOptions::default())?;
        let (primary, scorer) = evaluate_both(&outcome.model, &test_set)?;
        out.push(FoldResult {
            fold,
            anchor: (cfg.anchor_w, cfg.anchor_h),
            train_scenes: train_set.len(),
            test_scenes: test_set.len(),
            primary,
            scorer,
        });
    }
    let n = folds as f64;
    Ok(CvReport {
        mean_primary: out.iter().map(|f| f.primary).sum::<f64>() / n,
        mean_scorer: out.iter().map(|f| f.scorer).sum::<f64>() / n,
        folds: out,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationKind {
    AnchorSize,
    SelectionMode,
}

impl std::str::FromStr for AblationKind {
    type Err = GraspError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "anchor-size" => Ok(AblationKind::AnchorSize),
            "selection-mode" => Ok(AblationKind::SelectionMode),
            _ => Err(GraspError::Config(format!("unknown ablation {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub anchor: (f64, f64),
    pub primary: f64,
    pub scorer: f64,
}

pub fn format_ablation(rows: &[AblationRow]) -> String {
    let mut s = String::from("variant              anchor          primary  scorer\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<20} {:>6.2}x{:<6.2}  {:>7.4}  {:>6.4}",
            r.label, r.anchor.0, r.anchor.1, r.primary, r.scorer
        );
    }
    s
}

/// Trains one model per variant and evaluates each on `eval`.
///
/// The anchor-size sweep covers every size in `anchor_sizes` plus the mean
/// box; the selection-mode ablation compares top-T by primary score with
/// top-T by final score.
pub fn run_ablation(
    kind: AblationKind,
    train_set: &[Scene],
    eval: &[Scene],
    run: &RunConfig,
    anchor_sizes: &[(f64, f64)],
) -> Result<Vec<AblationRow>> {
    let mut variants: Vec<(String, RunConfig)> = Vec::new();
    match kind {
        AblationKind::AnchorSize => {
            for &(w, h) in anchor_sizes {
                let mut r = run.clone();
                r.train.anchor = AnchorSource::Explicit;
                r.model.anchor_w = w;
                r.model.anchor_h = h;
                variants.push((format!("{w}x{h}"), r));
            }
            let mut r = run.clone();
            r.train.anchor = AnchorSource::MeanBox;
            variants.push(("mean box".into(), r));
        }
        AblationKind::SelectionMode => {
            for (label, mode) in [
                ("primary", SelectionMode::Primary),
                ("final-score", SelectionMode::FinalScore),
            ] {
                let mut r = run.clone();
                r.train.selection = mode;
                variants.push((label.into(), r));
            }
        }
    }
    variants
        .into_iter()
        .map(|(label, r)| {
            let out = train(train_set, &r, TrainOptions::default())?;
            let (primary, scorer) = evaluate_both(&out.model, eval)?;
            log::info!("{label}: primary {primary:.4} scorer {scorer:.4}");
            Ok(AblationRow {
                label,
                anchor: (out.model.config.anchor_w, out.model.config.anchor_h),
                primary,
                scorer,
            })
        })
        .collect()
}
