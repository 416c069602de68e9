//! Online augmentation: rotation about the image center, horizontal mirror,
//! shift and rescale, applied identically to pixels and grasps.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Scene;
use crate::autodiff::Tensor;
use crate::geometry::{canonical_angle, GraspRect};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Output side length.
    pub target_size: usize,
    /// Maximum shift per axis in output pixels at a 320px reference; scaled
    /// linearly with `target_size`.
    pub max_shift_at_320: f64,
    pub mirror_prob: f64,
    pub max_retries: usize,
}

impl AugmentConfig {
    pub fn for_size(target_size: usize) -> Self {
        Self {
            target_size,
            max_shift_at_320: 50.0,
            mirror_prob: 0.5,
            max_retries: 10,
        }
    }

    pub fn max_shift(&self) -> i64 {
        (self.max_shift_at_320 * self.target_size as f64 / 320.0).round() as i64
    }
}

/// Similarity transform from a `src_w x src_h` image to a square `dst` image:
/// `p' = scale * (R(rotation) * M * (p - c_src) + shift) + c_dst`, where `M`
/// negates x when `mirror` is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub rotation_deg: f64,
    pub mirror: bool,
    /// Shift in source pixels.
    pub shift: (f64, f64),
    pub scale: f64,
    pub src_size: (usize, usize),
    pub dst_size: usize,
}

impl Transform {
    pub fn identity(size: usize) -> Self {
        Self {
            rotation_deg: 0.0,
            mirror: false,
            shift: (0.0, 0.0),
            scale: 1.0,
            src_size: (size, size),
            dst_size: size,
        }
    }

    /// Random transform; the scale maps the shorter source side onto `dst`.
    pub fn random<R: Rng + ?Sized>(cfg: &AugmentConfig, src_w: usize, src_h: usize, rng: &mut R) -> Self {
        let rotation_deg = rng.random_range(0.0..360.0);
        let mirror = rng.random_bool(cfg.mirror_prob);
        let m = cfg.max_shift();
        let scale = cfg.target_size as f64 / src_w.min(src_h) as f64;
        // Shifts are integers in output pixels, expressed in source pixels.
        let sx = rng.random_range(-m..=m) as f64 / scale;
        let sy = rng.random_range(-m..=m) as f64 / scale;
        Self {
            rotation_deg,
            mirror,
            shift: (sx, sy),
            scale,
            src_size: (src_w, src_h),
            dst_size: cfg.target_size,
        }
    }

    fn centers(&self) -> ((f64, f64), f64) {
        (
            (self.src_size.0 as f64 / 2.0, self.src_size.1 as f64 / 2.0),
            self.dst_size as f64 / 2.0,
        )
    }

    pub fn map_point(&self, x: f64, y: f64) -> (f64, f64) {
        let ((cx, cy), cd) = self.centers();
        let (mut dx, dy) = (x - cx, y - cy);
        if self.mirror {
            dx = -dx;
        }
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let (rx, ry) = (c * dx - s * dy, s * dx + c * dy);
        (
            self.scale * (rx + self.shift.0) + cd,
            self.scale * (ry + self.shift.1) + cd,
        )
    }

    pub fn inverse_point(&self, x: f64, y: f64) -> (f64, f64) {
        let ((cx, cy), cd) = self.centers();
        let (rx, ry) = (
            (x - cd) / self.scale - self.shift.0,
            (y - cd) / self.scale - self.shift.1,
        );
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let (mut dx, dy) = (c * rx + s * ry, -s * rx + c * ry);
        if self.mirror {
            dx = -dx;
        }
        (dx + cx, dy + cy)
    }

    pub fn apply_grasp(&self, g: &GraspRect) -> GraspRect {
        let (x, y) = self.map_point(g.x, g.y);
        let theta = if self.mirror { -g.theta } else { g.theta };
        GraspRect {
            x,
            y,
            w: g.w * self.scale,
            h: g.h * self.scale,
            theta: canonical_angle(theta + self.rotation_deg),
        }
    }

    /// Bilinear resampling of a `[C][H][W]` image; samples outside the source
    /// take the per-channel mean.
    pub fn apply_image(&self, img: &Tensor) -> Tensor {
        let shape = img.shape();
        let (ch, h, w) = (shape[0], shape[1], shape[2]);
        let d = self.dst_size;
        let src = img.data();
        let means: Vec<f64> = (0..ch)
            .map(|c| src[c * h * w..(c + 1) * h * w].iter().sum::<f64>() / (h * w) as f64)
            .collect();
        let mut out = vec![0.0; ch * d * d];
        for i in 0..d {
            for j in 0..d {
                let (px, py) = self.inverse_point(j as f64 + 0.5, i as f64 + 0.5);
                let (u, v) = (px - 0.5, py - 0.5);
                let (u0, v0) = (u.floor(), v.floor());
                let (fu, fv) = (u - u0, v - v0);
                let (u0, v0) = (u0 as i64, v0 as i64);
                for c in 0..ch {
                    let plane = &src[c * h * w..(c + 1) * h * w];
                    let at = |r: i64, q: i64| -> f64 {
                        if r < 0 || q < 0 || r >= h as i64 || q >= w as i64 {
                            means[c]
                        } else {
                            plane[r as usize * w + q as usize]
                        }
                    };
                    let mut val = (1.0 - fu) * (1.0 - fv) * at(v0, u0);
                    if fu != 0.0 {
                        val += fu * (1.0 - fv) * at(v0, u0 + 1);
                    }
                    if fv != 0.0 {
                        val += (1.0 - fu) * fv * at(v0 + 1, u0);
                        if fu != 0.0 {
                            val += fu * fv * at(v0 + 1, u0 + 1);
                        }
                    }
                    out[(c * d + i) * d + j] = val;
                }
            }
        }
        Tensor::new(&[ch, d, d], out).expect("augmented image shape")
    }

    /// Transformed scene with grasps outside the output image dropped.
    pub fn apply(&self, scene: &Scene) -> Scene {
        let mut out = Scene {
            image: self.apply_image(&scene.image),
            grasps: scene.grasps.iter().map(|g| self.apply_grasp(g)).collect(),
            object_id: scene.object_id.clone(),
        };
        out.retain_inside();
        out
    }
}

/// Random augmentation. When every grasp leaves the image the transform is
/// redrawn up to `max_retries` times, after which the scene is only rescaled.
pub fn augment<R: Rng + ?Sized>(scene: &Scene, cfg: &AugmentConfig, rng: &mut R) -> Scene {
    for _ in 0..=cfg.max_retries {
        let t = Transform::random(cfg, scene.width(), scene.height(), rng);
        let out = t.apply(scene);
        if !out.grasps.is_empty() {
            return out;
        }
    }
    let fallback = Transform {
        scale: cfg.target_size as f64 / scene.width().min(scene.height()) as f64,
        src_size: (scene.width(), scene.height()),
        ..Transform::identity(cfg.target_size)
    };
    fallback.apply(scene)
}
