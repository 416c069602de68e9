//! Ground-truth assignment for the two score heads and example sampling.
//!
//! The primary score uses Angle Matching: an anchor in the cell holding a
//! ground-truth center is positive when its orientation is close enough.
//! The scorer uses Jaccard Matching on the decoded grasp (orientation plus
//! rotated IoU), evaluated only on the top-T anchors by primary score.

use rand::seq::index;
use rand::Rng;

use crate::anchors::{encode, AnchorGrid, Delta};
use crate::geometry::{angle_diff, is_success, GraspRect};

/// Angle Matching target for one anchor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnchorLabel {
    Negative,
    Positive { gt: usize, target: Delta },
}

impl AnchorLabel {
    pub fn is_positive(&self) -> bool {
        matches!(self, AnchorLabel::Positive { .. })
    }
}

/// Per-anchor labels in the grid's linear `[row][col][a]` order.
#[derive(Debug, Clone)]
pub struct LabelMap {
    pub labels: Vec<AnchorLabel>,
}

impl LabelMap {
    pub fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.is_positive().then_some(i))
    }

    pub fn negatives(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| (!l.is_positive()).then_some(i))
    }

    pub fn num_positive(&self) -> usize {
        self.positives().count()
    }
}

/// Indices sampled for the intermediate loss.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SampleSet {
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Angle Matching over the anchors of each ground-truth center's cell.
///
/// When several ground truths claim one anchor the closest in orientation
/// wins, then the closest center, then the lowest index.
pub fn angle_match(grid: &AnchorGrid, gts: &[GraspRect], angle_thr: f64) -> LabelMap {
    let mut labels = vec![AnchorLabel::Negative; grid.len()];
    let mut best: Vec<Option<(f64, f64)>> = vec![None; grid.len()];
    for (gi, gt) in gts.iter().enumerate() {
        let Some((row, col)) = grid.cell_of(gt.x, gt.y) else {
            continue;
        };
        for a in 0..grid.k {
            let li = (row * grid.grid_w + col) * grid.k + a;
            let anchor = &grid.anchors()[li];
            let da = angle_diff(anchor.atheta, gt.theta);
            if da >= angle_thr {
                continue;
            }
            let dist = (gt.x - anchor.ax).hypot(gt.y - anchor.ay);
            let better = match best[li] {
                None => true,
                Some((bda, bdist)) => da < bda || (da == bda && dist < bdist),
            };
            if better {
                best[li] = Some((da, dist));
                labels[li] = AnchorLabel::Positive {
                    gt: gi,
                    target: encode(gt, anchor, grid.k),
                };
            }
        }
    }
    LabelMap { labels }
}

/// Scorer ground truth for a decoded grasp.
pub fn jaccard_label(pred: &GraspRect, gts: &[GraspRect], angle_thr: f64, iou_thr: f64) -> u8 {
    u8::from(is_success(pred, gts, angle_thr, iou_thr))
}

/// Draws `P = min(p_max, #positives)` positives and `3P` negatives.
///
/// With no positives, `4 * p_max` negatives are drawn instead. Sampled
/// indices are returned in ascending order.
pub fn sample_pgp<R: Rng + ?Sized>(labels: &LabelMap, p_max: usize, rng: &mut R) -> SampleSet {
    let pos: Vec<usize> = labels.positives().collect();
    let neg: Vec<usize> = labels.negatives().collect();
    let p = p_max.min(pos.len());
    let n_neg = if p == 0 { 4 * p_max } else { 3 * p }.min(neg.len());
    let mut positives: Vec<usize> = index::sample(rng, pos.len(), p).into_iter().map(|i| pos[i]).collect();
    let mut negatives: Vec<usize> = index::sample(rng, neg.len(), n_neg)
        .into_iter()
        .map(|i| neg[i])
        .collect();
    positives.sort_unstable();
    negatives.sort_unstable();
    SampleSet { positives, negatives }
}

/// Indices of the `t` largest scores, descending; ties go to the lower index.
pub fn select_top_t(scores: &[f64], t: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(t);
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchors::{build_anchor_grid, decode, AnchorIndex};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid() -> AnchorGrid {
        build_anchor_grid(64, 8, 12.0, 6.0, 6).unwrap()
    }

    #[test]
    fn no_gts_all_negative() {
        let l = angle_match(&grid(), &[], 15.0);
        assert_eq!(l.num_positive(), 0);
        assert_eq!(l.labels.len(), 384);
    }

    #[test]
    fn single_orientation_matches() {
        let g = grid();
        let gt = GraspRect::new(28.0, 20.0, 12.0, 6.0, 0.0).unwrap();
        let l = angle_match(&g, &[gt], 15.0);
        let pos: Vec<usize> = l.positives().collect();
        assert_eq!(pos, vec![g.linear(AnchorIndex { row: 2, col: 3, a: 3 })]);
        match l.labels[pos[0]] {
            AnchorLabel::Positive { gt: 0, target } => assert_eq!(target.to_array(), [0.0; 5]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tie_at_threshold_is_negative() {
        let gt = GraspRect::new(28.0, 20.0, 12.0, 6.0, 15.0).unwrap();
        assert_eq!(angle_match(&grid(), &[gt], 15.0).num_positive(), 0);
    }

    #[test]
    fn outside_centers_are_skipped() {
        let gt = GraspRect::new(70.0, 20.0, 12.0, 6.0, 0.0).unwrap();
        assert_eq!(angle_match(&grid(), &[gt], 15.0).num_positive(), 0);
    }

    #[test]
    fn positives_decode_to_their_gt() {
        let g = grid();
        let gts = [
            GraspRect::new(13.3, 40.1, 15.0, 7.0, 47.0).unwrap(),
            GraspRect::new(50.2, 3.9, 9.0, 4.0, -80.0).unwrap(),
        ];
        let l = angle_match(&g, &gts, 15.0);
        assert_eq!(l.num_positive(), 2);
        for i in l.positives() {
            let AnchorLabel::Positive { gt, target } = l.labels[i] else {
                unreachable!()
            };
            let d = decode(&target, &g.anchors()[i], g.k);
            let want = gts[gt];
            assert!((d.x - want.x).abs() < 1e-9 && (d.y - want.y).abs() < 1e-9);
            assert!((d.w - want.w).abs() < 1e-9 && (d.h - want.h).abs() < 1e-9);
            assert!(angle_diff(d.theta, want.theta) < 1e-9);
        }
    }

    fn labels_with(n_pos: usize, total: usize) -> LabelMap {
        let mut labels = vec![AnchorLabel::Negative; total];
        for l in labels.iter_mut().take(n_pos) {
            *l = AnchorLabel::Positive {
                gt: 0,
                target: Delta::default(),
            };
        }
        LabelMap { labels }
    }

    #[test]
    fn sampling_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = sample_pgp(&labels_with(10, 2400), 64, &mut rng);
        assert_eq!((s.positives.len(), s.negatives.len()), (10, 30));
        let s = sample_pgp(&labels_with(0, 2400), 64, &mut rng);
        assert_eq!((s.positives.len(), s.negatives.len()), (0, 256));
        let s = sample_pgp(&labels_with(100, 2400), 64, &mut rng);
        assert_eq!((s.positives.len(), s.negatives.len()), (64, 192));
        assert!(s.positives.iter().all(|&i| i < 100));
        assert!(s.negatives.iter().all(|&i| i >= 100));
    }

    #[test]
    fn sampling_is_reproducible() {
        let l = labels_with(40, 500);
        let a = sample_pgp(&l, 16, &mut ChaCha8Rng::seed_from_u64(7));
        let b = sample_pgp(&l, 16, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a, b);
    }

    #[test]
    fn top_t_selection() {
        assert_eq!(select_top_t(&[0.5; 10], 4), vec![0, 1, 2, 3]);
        let mut s = vec![0.1; 10];
        s[7] = 0.9;
        assert_eq!(select_top_t(&s, 1), vec![7]);
        assert_eq!(select_top_t(&[0.2, 0.3], 64), vec![1, 0]);
    }

    #[test]
    fn jaccard_examples() {
        let gt = GraspRect::new(30.0, 30.0, 14.0, 7.0, 20.0).unwrap();
        assert_eq!(jaccard_label(&gt, &[gt], 15.0, 0.25), 1);
        let far = GraspRect::new(530.0, 30.0, 14.0, 7.0, 20.0).unwrap();
        assert_eq!(jaccard_label(&far, &[gt], 15.0, 0.25), 0);
        assert_eq!(jaccard_label(&gt, &[], 15.0, 0.25), 0);
    }
}
