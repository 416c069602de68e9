//! Oriented anchor grid and the grasp <-> deformation codec.
//!
//! A grasp is expressed relative to an anchor as
//! `x = dx*aw + ax`, `y = dy*ah + ay`, `w = exp(dw)*aw`, `h = exp(dh)*ah`,
//! `theta = dtheta*(180/k) + atheta`.

use serde::{Deserialize, Serialize};

use crate::error::{GraspError, Result};
use crate::geometry::{canonical_angle, GraspRect};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub ax: f64,
    pub ay: f64,
    pub aw: f64,
    pub ah: f64,
    pub atheta: f64,
}

impl Anchor {
    pub fn as_grasp(&self) -> GraspRect {
        GraspRect {
            x: self.ax,
            y: self.ay,
            w: self.aw,
            h: self.ah,
            theta: self.atheta,
        }
    }
}

/// Deformation of an anchor. `dw` and `dh` are in log space.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Delta {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
    pub dtheta: f64,
}

impl Delta {
    pub fn to_array(self) -> [f64; 5] {
        [self.dx, self.dy, self.dw, self.dh, self.dtheta]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            dx: v[0],
            dy: v[1],
            dw: v[2],
            dh: v[3],
            dtheta: v[4],
        }
    }
}

/// Index of one anchor inside the grid: row, column and orientation slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AnchorIndex {
    pub row: usize,
    pub col: usize,
    pub a: usize,
}

/// Dense `[grid_h][grid_w][k]` array of anchors sharing one size.
#[derive(Debug, Clone)]
pub struct AnchorGrid {
    pub grid_h: usize,
    pub grid_w: usize,
    pub stride: usize,
    pub k: usize,
    pub anchor_w: f64,
    pub anchor_h: f64,
    anchors: Vec<Anchor>,
}

/// Orientation of anchor slot `a` out of `k`.
pub fn anchor_angle(a: usize, k: usize) -> f64 {
    -90.0 + a as f64 * (180.0 / k as f64)
}

pub fn build_anchor_grid(
    image_size: usize,
    stride: usize,
    anchor_w: f64,
    anchor_h: f64,
    k: usize,
) -> Result<AnchorGrid> {
    if stride == 0 || image_size == 0 || !image_size.is_multiple_of(stride) {
        return Err(GraspError::Config(format!(
            "image size {image_size} is not divisible by stride {stride}"
        )));
    }
    if k == 0 {
        return Err(GraspError::Config("k must be at least 1".into()));
    }
    if !(anchor_w > 0.0 && anchor_h > 0.0) {
        return Err(GraspError::Config(format!(
            "anchor size must be positive, got {anchor_w}x{anchor_h}"
        )));
    }
    let n = image_size / stride;
    let mut anchors = Vec::with_capacity(n * n * k);
    for i in 0..n {
        for j in 0..n {
            for a in 0..k {
                anchors.push(Anchor {
                    ax: (j as f64 + 0.5) * stride as f64,
                    ay: (i as f64 + 0.5) * stride as f64,
                    aw: anchor_w,
                    ah: anchor_h,
                    atheta: anchor_angle(a, k),
                });
            }
        }
    }
    Ok(AnchorGrid {
        grid_h: n,
        grid_w: n,
        stride,
        k,
        anchor_w,
        anchor_h,
        anchors,
    })
}

impl AnchorGrid {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    pub fn get(&self, idx: AnchorIndex) -> &Anchor {
        &self.anchors[self.linear(idx)]
    }

    /// Linear index in `[row][col][a]` order.
    pub fn linear(&self, idx: AnchorIndex) -> usize {
        (idx.row * self.grid_w + idx.col) * self.k + idx.a
    }

    pub fn unravel(&self, linear: usize) -> AnchorIndex {
        let a = linear % self.k;
        let cell = linear / self.k;
        AnchorIndex {
            row: cell / self.grid_w,
            col: cell % self.grid_w,
            a,
        }
    }

    /// Cell containing a pixel position, if it lies inside the image.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let s = self.stride as f64;
        if !(x >= 0.0 && y >= 0.0) {
            return None;
        }
        let (col, row) = ((x / s).floor() as usize, (y / s).floor() as usize);
        (row < self.grid_h && col < self.grid_w).then_some((row, col))
    }
}

pub fn decode(d: &Delta, a: &Anchor, k: usize) -> GraspRect {
    GraspRect {
        x: d.dx * a.aw + a.ax,
        y: d.dy * a.ah + a.ay,
        w: d.dw.exp() * a.aw,
        h: d.dh.exp() * a.ah,
        theta: canonical_angle(d.dtheta * (180.0 / k as f64) + a.atheta),
    }
}

pub fn encode(g: &GraspRect, a: &Anchor, k: usize) -> Delta {
    Delta {
        dx: (g.x - a.ax) / a.aw,
        dy: (g.y - a.ay) / a.ah,
        dw: (g.w / a.aw).ln(),
        dh: (g.h / a.ah).ln(),
        dtheta: canonical_angle(g.theta - a.atheta) * k as f64 / 180.0,
    }
}

/// Mean width and height over a set of grasps, used as the anchor size.
pub fn mean_anchor(gts: &[GraspRect]) -> Result<(f64, f64)> {
    if gts.is_empty() {
        return Err(GraspError::Empty("mean anchor needs at least one grasp"));
    }
    let n = gts.len() as f64;
    let w = gts.iter().map(|g| g.w).sum::<f64>() / n;
    let h = gts.iter().map(|g| g.h).sum::<f64>() / n;
    Ok((w, h))
}
