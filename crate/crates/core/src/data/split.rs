use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use super::Scene;
use crate::error::{GraspError, Result};

/// Fold index per scene. Objects are shuffled and dealt round-robin, so fold
/// object counts differ by at most one and an object never spans folds.
pub fn object_wise_split<R: Rng + ?Sized>(scenes: &[Scene], folds: usize, rng: &mut R) -> Result<Vec<usize>> {
    if folds == 0 {
        return Err(GraspError::InvalidArgument("folds must be positive".into()));
    }
    let mut objects: Vec<&str> = scenes.iter().map(|s| s.object_id.as_str()).collect();
    objects.sort_unstable();
    objects.dedup();
    if objects.len() < folds {
        return Err(GraspError::InvalidArgument(format!(
            "{} object(s) cannot fill {folds} folds",
            objects.len()
        )));
    }
    objects.shuffle(rng);
    let fold_of: BTreeMap<&str, usize> = objects.iter().enumerate().map(|(i, &o)| (o, i % folds)).collect();
    Ok(scenes.iter().map(|s| fold_of[s.object_id.as_str()]).collect())
}

/// `(train, test)` scene indices for one held-out fold.
pub fn fold_indices(assignment: &[usize], fold: usize) -> (Vec<usize>, Vec<usize>) {
    (0..assignment.len()).partition(|&i| assignment[i] != fold)
}
