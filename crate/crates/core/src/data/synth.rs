//! Procedural scenes with analytically known grasps.
//!
//! Each scene holds one object (a bar, an L-shape or a disk with two flats)
//! and optional round distractors. Candidate grasps are derived from the
//! object's geometry; any candidate whose gripper footprint touches a
//! distractor or another part of the same object is discarded.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Scene;
use crate::autodiff::Tensor;
use crate::error::{GraspError, Result};
use crate::geometry::{canonical_angle, intersection_area, GraspRect};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeKind {
    Bar,
    LShape,
    DiskWithFlats,
}

impl std::str::FromStr for ShapeKind {
    type Err = GraspError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bar" => Ok(ShapeKind::Bar),
            "l-shape" => Ok(ShapeKind::LShape),
            "disk-with-flats" => Ok(ShapeKind::DiskWithFlats),
            _ => Err(GraspError::Config(format!("unknown shape kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub image_size: usize,
    pub kinds: Vec<ShapeKind>,
    /// Bar (and L arm) length range.
    pub length: (f64, f64),
    /// Bar thickness range.
    pub thickness: (f64, f64),
    /// Disk radius range for disks with flats.
    pub radius: (f64, f64),
    /// Gripper opening beyond the grasped thickness.
    pub opening_margin: f64,
    /// Inclusive distractor count range.
    pub distractors: (usize, usize),
    pub distractor_radius: (f64, f64),
    pub noise: f64,
    pub background: (f64, f64),
    pub foreground: (f64, f64),
    /// Size of the object pool; scenes of one object share its shape.
    pub num_objects: usize,
    pub object_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            kinds: vec![ShapeKind::Bar],
            length: (22.0, 36.0),
            thickness: (5.0, 8.0),
            radius: (9.0, 14.0),
            opening_margin: 6.0,
            distractors: (0, 2),
            distractor_radius: (2.5, 4.5),
            noise: 0.03,
            background: (0.0, 0.25),
            foreground: (0.6, 1.0),
            num_objects: 50,
            object_seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let ranges = [self.length, self.thickness, self.radius, self.distractor_radius];
        if ranges.iter().any(|&(lo, hi)| !(lo > 0.0 && lo <= hi)) {
            return Err(GraspError::Config(
                "synthetic size ranges must be positive and ordered".into(),
            ));
        }
        let s = self.image_size as f64;
        if self.length.1 + self.thickness.1 >= s || 2.0 * self.radius.1 >= s {
            return Err(GraspError::Config(format!("shapes do not fit a {s}px image")));
        }
        if self.kinds.is_empty() || self.num_objects == 0 {
            return Err(GraspError::Config("need at least one shape kind and object".into()));
        }
        if self.distractors.0 > self.distractors.1 {
            return Err(GraspError::Config("distractor range reversed".into()));
        }
        let unit = |(lo, hi): (f64, f64)| (0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi) && lo <= hi;
        if !unit(self.background) || !unit(self.foreground) || self.noise < 0.0 {
            return Err(GraspError::Config("intensities must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Shape parameters that identify one object of the pool.
#[derive(Debug, Clone, Copy, PartialEq)]
struct ObjectSpec {
    kind: ShapeKind,
    length: f64,
    thickness: f64,
    radius: f64,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn object_spec(cfg: &SynthConfig, idx: usize) -> ObjectSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.object_seed.wrapping_mul(0x9E37_79B9).wrapping_add(idx as u64));
    ObjectSpec {
        kind: cfg.kinds[idx % cfg.kinds.len()],
        length: uniform(&mut rng, cfg.length),
        thickness: uniform(&mut rng, cfg.thickness),
        radius: uniform(&mut rng, cfg.radius),
    }
}

/// Solid primitive in image coordinates.
#[derive(Debug, Clone, Copy)]
enum Part {
    Rect(GraspRect),
    Disk {
        x: f64,
        y: f64,
        r: f64,
    },
    /// Disk clipped to the slab `|<p - c, n>| <= half` with `n` at `angle`.
    FlatDisk {
        x: f64,
        y: f64,
        r: f64,
        half: f64,
        angle: f64,
    },
}

impl Part {
    fn contains(&self, px: f64, py: f64) -> bool {
        match *self {
            Part::Rect(g) => {
                let (s, c) = g.theta.to_radians().sin_cos();
                let (dx, dy) = (px - g.x, py - g.y);
                let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
                u.abs() <= g.w / 2.0 && v.abs() <= g.h / 2.0
            }
            Part::Disk { x, y, r } => (px - x).hypot(py - y) <= r,
            Part::FlatDisk { x, y, r, half, angle } => {
                let (s, c) = angle.to_radians().sin_cos();
                let (dx, dy) = (px - x, py - y);
                dx.hypot(dy) <= r && (c * dx + s * dy).abs() <= half
            }
        }
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        match *self {
            Part::Rect(g) => {
                let p = g.polygon();
                let xs = p.0.iter().map(|q| q.x);
                let ys = p.0.iter().map(|q| q.y);
                (
                    xs.clone().fold(f64::INFINITY, f64::min),
                    ys.clone().fold(f64::INFINITY, f64::min),
                    xs.fold(f64::NEG_INFINITY, f64::max),
                    ys.fold(f64::NEG_INFINITY, f64::max),
                )
            }
            Part::Disk { x, y, r } | Part::FlatDisk { x, y, r, .. } => (x - r, y - r, x + r, y + r),
        }
    }
}

/// True when the grasp footprint overlaps the disk.
pub fn rect_hits_disk(g: &GraspRect, x: f64, y: f64, r: f64) -> bool {
    let (s, c) = g.theta.to_radians().sin_cos();
    let (dx, dy) = (x - g.x, y - g.y);
    let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
    let cu = u.clamp(-g.w / 2.0, g.w / 2.0);
    let cv = v.clamp(-g.h / 2.0, g.h / 2.0);
    (u - cu).hypot(v - cv) < r
}

fn rect_hits_part(g: &GraspRect, part: &Part) -> bool {
    match *part {
        Part::Rect(other) => intersection_area(g, &other) > 0.0,
        Part::Disk { x, y, r } | Part::FlatDisk { x, y, r, .. } => rect_hits_disk(g, x, y, r),
    }
}

/// Grasps across a bar of the given thickness along its axis.
fn bar_grasps(bar: &GraspRect, thickness: f64, margin: f64) -> Vec<GraspRect> {
    let h = thickness;
    let w = thickness + margin;
    let usable = bar.w - h;
    if usable < 0.0 {
        return Vec::new();
    }
    let n = (usable / h).floor() as usize + 1;
    let step = if n > 1 { usable / (n - 1) as f64 } else { 0.0 };
    let (s, c) = bar.theta.to_radians().sin_cos();
    (0..n)
        .map(|i| {
            let t = -usable / 2.0 + i as f64 * step;
            GraspRect {
                x: bar.x + c * t,
                y: bar.y + s * t,
                w,
                h,
                theta: canonical_angle(bar.theta + 90.0),
            }
        })
        .collect()
}

/// The object's solid parts and candidate grasps, each tagged with the part it holds.
fn build_object(spec: &ObjectSpec, cx: f64, cy: f64, phi: f64, margin: f64) -> (Vec<Part>, Vec<(usize, GraspRect)>) {
    let (s, c) = phi.to_radians().sin_cos();
    match spec.kind {
        ShapeKind::Bar => {
            let bar = GraspRect {
                x: cx,
                y: cy,
                w: spec.length,
                h: spec.thickness,
                theta: canonical_angle(phi),
            };
            let g = bar_grasps(&bar, spec.thickness, margin)
                .into_iter()
                .map(|g| (0, g))
                .collect();
            (vec![Part::Rect(bar)], g)
        }
        ShapeKind::LShape => {
            // Arms meet at (cx, cy) and run along phi and phi + 90.
            let half = spec.length / 2.0 - spec.thickness / 2.0;
            let arm1 = GraspRect {
                x: cx + c * half,
                y: cy + s * half,
                w: spec.length,
                h: spec.thickness,
                theta: canonical_angle(phi),
            };
            let arm2 = GraspRect {
                x: cx - s * half,
                y: cy + c * half,
                w: spec.length,
                h: spec.thickness,
                theta: canonical_angle(phi + 90.0),
            };
            let mut grasps: Vec<(usize, GraspRect)> = bar_grasps(&arm1, spec.thickness, margin)
                .into_iter()
                .map(|g| (0, g))
                .collect();
            grasps.extend(bar_grasps(&arm2, spec.thickness, margin).into_iter().map(|g| (1, g)));
            (vec![Part::Rect(arm1), Part::Rect(arm2)], grasps)
        }
        ShapeKind::DiskWithFlats => {
            let r = spec.radius;
            let half = 0.6 * r;
            let flat = (r * r - half * half).sqrt();
            let h = spec.thickness.min(flat);
            let w = 2.0 * half + margin;
            let reach = (flat - h / 2.0).max(0.0);
            // Normal of the flats at phi; jaws slide along phi + 90.
            let grasps = [-reach, 0.0, reach]
                .into_iter()
                .map(|t| {
                    (
                        0,
                        GraspRect {
                            x: cx - s * t,
                            y: cy + c * t,
                            w,
                            h,
                            theta: canonical_angle(phi),
                        },
                    )
                })
                .collect();
            (
                vec![Part::FlatDisk {
                    x: cx,
                    y: cy,
                    r,
                    half,
                    angle: phi,
                }],
                grasps,
            )
        }
    }
}

fn render(size: usize, parts: &[Part], bg: [f64; 3], fg: [f64; 3]) -> Vec<f64> {
    const SUB: [f64; 2] = [0.25, 0.75];
    let mut img = vec![0.0; 3 * size * size];
    for i in 0..size {
        for j in 0..size {
            let mut cover = 0.0;
            for sy in SUB {
                for sx in SUB {
                    let (px, py) = (j as f64 + sx, i as f64 + sy);
                    if parts.iter().any(|p| p.contains(px, py)) {
                        cover += 0.25;
                    }
                }
            }
            for ch in 0..3 {
                img[(ch * size + i) * size + j] = bg[ch] + cover * (fg[ch] - bg[ch]);
            }
        }
    }
    img
}

/// Synthesizes one scene. The object is drawn from a fixed pool so that
/// repeated scenes of the same `object_id` share a shape.
pub fn generate_scene<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> Result<Scene> {
    cfg.validate()?;
    let obj_idx = rng.random_range(0..cfg.num_objects);
    let spec = object_spec(cfg, obj_idx);
    generate_with(cfg, &spec, obj_idx, rng)
}

fn generate_with<R: Rng + ?Sized>(cfg: &SynthConfig, spec: &ObjectSpec, obj_idx: usize, rng: &mut R) -> Result<Scene> {
    let size = cfg.image_size as f64;
    let border = 2.0;
    for _attempt in 0..100 {
        let phi = rng.random_range(-180.0..180.0);
        // Place the object in a centered frame, then shift it inside the image.
        let (parts, _) = build_object(spec, 0.0, 0.0, phi, cfg.opening_margin);
        let (x0, y0, x1, y1) = parts.iter().map(Part::bounds).fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |a, b| (a.0.min(b.0), a.1.min(b.1), a.2.max(b.2), a.3.max(b.3)),
        );
        let (lo_x, hi_x) = (border - x0, size - border - x1);
        let (lo_y, hi_y) = (border - y0, size - border - y1);
        if lo_x >= hi_x || lo_y >= hi_y {
            continue;
        }
        let (cx, cy) = (rng.random_range(lo_x..hi_x), rng.random_range(lo_y..hi_y));
        let (parts, candidates) = build_object(spec, cx, cy, phi, cfg.opening_margin);

        let n_distractors = rng.random_range(cfg.distractors.0..=cfg.distractors.1);
        let mut distractors = Vec::with_capacity(n_distractors);
        for _ in 0..n_distractors {
            let r = uniform(rng, cfg.distractor_radius);
            // Half the distractors hug a grasp location to force collisions.
            let (x, y) = if rng.random_bool(0.5) && !candidates.is_empty() {
                let (_, g) = candidates[rng.random_range(0..candidates.len())];
                let (s, c) = g.theta.to_radians().sin_cos();
                let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let off = g.w / 2.0 + r * rng.random_range(0.2..1.0);
                (g.x + side * c * off, g.y + side * s * off)
            } else {
                (rng.random_range(r..size - r), rng.random_range(r..size - r))
            };
            distractors.push(Part::Disk { x, y, r });
        }

        let grasps: Vec<GraspRect> = candidates
            .iter()
            .filter(|(owner, g)| {
                let inside = g.x >= 0.0 && g.x < size && g.y >= 0.0 && g.y < size;
                let self_hit = parts
                    .iter()
                    .enumerate()
                    .any(|(pi, p)| pi != *owner && rect_hits_part(g, p));
                let distractor_hit = distractors.iter().any(|d| rect_hits_part(g, d));
                inside && !self_hit && !distractor_hit
            })
            .map(|&(_, g)| g)
            .collect();
        if grasps.is_empty() {
            continue;
        }

        let bg_level = uniform(rng, cfg.background);
        let fg_level = uniform(rng, cfg.foreground);
        let mut bg = [0.0; 3];
        let mut fg = [0.0; 3];
        for ch in 0..3 {
            bg[ch] = (bg_level + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0);
            fg[ch] = (fg_level + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0);
        }
        let mut all_parts = parts.clone();
        all_parts.extend(distractors.iter().copied());
        let mut img = render(cfg.image_size, &all_parts, bg, fg);
        if cfg.noise > 0.0 {
            let normal = Normal::new(0.0, cfg.noise).expect("noise std");
            for v in img.iter_mut() {
                *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
            }
        }
        let kind = match spec.kind {
            ShapeKind::Bar => "bar",
            ShapeKind::LShape => "l-shape",
            ShapeKind::DiskWithFlats => "disk",
        };
        return Ok(Scene {
            image: Tensor::new(&[3, cfg.image_size, cfg.image_size], img)?,
            grasps,
            object_id: format!("{kind}-{obj_idx:04}"),
        });
    }
    Err(GraspError::Config(
        "could not place a graspable object after 100 attempts".into(),
    ))
}

/// `count` scenes from one seeded generator.
pub fn generate_dataset(cfg: &SynthConfig, count: usize, seed: u64) -> Result<Vec<Scene>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| generate_scene(cfg, &mut rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::angle_diff;

    fn bar_only() -> SynthConfig {
        SynthConfig {
            distractors: (0, 0),
            noise: 0.0,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn horizontal_bar_grasps_are_vertical() {
        let bar = GraspRect {
            x: 32.0,
            y: 32.0,
            w: 30.0,
            h: 6.0,
            theta: 0.0,
        };
        let gs = bar_grasps(&bar, 6.0, 6.0);
        assert_eq!(gs.len(), 5);
        for g in &gs {
            assert_eq!(g.theta, -90.0);
            assert_eq!((g.w, g.h), (12.0, 6.0));
            assert!((g.y - 32.0).abs() < 1e-12);
        }
        assert!((gs[0].x - 20.0).abs() < 1e-12 && (gs[4].x - 44.0).abs() < 1e-12);
    }

    #[test]
    fn scenes_are_reproducible() {
        let cfg = SynthConfig::default();
        let a = generate_dataset(&cfg, 5, 3).unwrap();
        let b = generate_dataset(&cfg, 5, 3).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&cfg, 5, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn grasps_lie_on_the_object() {
        let cfg = bar_only();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let s = generate_scene(&cfg, &mut rng).unwrap();
            assert!(!s.grasps.is_empty());
            let sz = cfg.image_size;
            for g in &s.grasps {
                assert!(g.x >= 0.0 && g.x < sz as f64 && g.y >= 0.0 && g.y < sz as f64);
                let (i, j) = (g.y as usize, g.x as usize);
                // Grasp centers are on the bar, which is brighter than any background.
                assert!(s.image.data()[i * sz + j] > 0.3, "{g:?}");
            }
            // All grasps share the bar-perpendicular orientation.
            assert!(s.grasps.iter().all(|g| angle_diff(g.theta, s.grasps[0].theta) < 1e-9));
            assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn distractor_collisions_remove_grasps() {
        let spec = ObjectSpec {
            kind: ShapeKind::Bar,
            length: 30.0,
            thickness: 6.0,
            radius: 10.0,
        };
        let (_, cands) = build_object(&spec, 32.0, 32.0, 0.0, 6.0);
        assert_eq!(cands.len(), 5);
        // A disk just above the leftmost grasp's jaw.
        let g = cands[0].1;
        assert!(rect_hits_disk(&g, g.x, g.y - g.w / 2.0 - 1.0, 2.0));
        assert!(!rect_hits_disk(&cands[4].1, g.x, g.y - g.w / 2.0 - 1.0, 2.0));
        assert!(!rect_hits_disk(&g, g.x, g.y - g.w / 2.0 - 2.5, 2.0));
    }

    #[test]
    fn generated_grasps_avoid_distractors() {
        let cfg = SynthConfig {
            distractors: (3, 3),
            ..SynthConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut removed_any = false;
        for _ in 0..30 {
            let s = generate_scene(&cfg, &mut rng).unwrap();
            removed_any |= s.grasps.len() < 3;
            assert!(!s.grasps.is_empty());
        }
        assert!(removed_any);
    }

    #[test]
    fn l_shape_excludes_grasps_at_the_joint() {
        let spec = ObjectSpec {
            kind: ShapeKind::LShape,
            length: 30.0,
            thickness: 6.0,
            radius: 10.0,
        };
        let (parts, cands) = build_object(&spec, 20.0, 20.0, 0.0, 6.0);
        let kept = cands
            .iter()
            .filter(|(o, g)| !parts.iter().enumerate().any(|(pi, p)| pi != *o && rect_hits_part(g, p)))
            .count();
        assert!(kept < cands.len() && kept > 0);
    }

    #[test]
    fn all_shape_kinds_generate() {
        let cfg = SynthConfig {
            kinds: vec![ShapeKind::Bar, ShapeKind::LShape, ShapeKind::DiskWithFlats],
            ..SynthConfig::default()
        };
        let scenes = generate_dataset(&cfg, 30, 1).unwrap();
        for prefix in ["bar", "l-shape", "disk"] {
            assert!(scenes.iter().any(|s| s.object_id.starts_with(prefix)), "{prefix}");
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = SynthConfig {
            length: (60.0, 70.0),
            ..SynthConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SynthConfig {
            distractors: (3, 1),
            ..SynthConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
