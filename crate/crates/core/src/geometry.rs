//! Oriented grasp rectangles and the geometry used to compare them.
//!
//! Coordinates follow the image convention: `x` grows to the right and `y`
//! grows downward. An orientation `theta` (degrees) rotates the rectangle's
//! width axis by the matrix `[[cos, -sin], [sin, cos]]` applied to `(x, y)`.
//! Rectangles are symmetric under a half turn, so orientations live in
//! `[-90, 90)`.

use serde::{Deserialize, Serialize};

use crate::error::{GraspError, Result};

/// Intersection areas below this are treated as empty.
const AREA_EPS: f64 = 1e-12;

/// Reduces an angle in degrees into `[-90, 90)`.
pub fn canonical_angle(theta: f64) -> f64 {
    let t = (theta + 90.0).rem_euclid(180.0) - 90.0;
    // rem_euclid can round up to exactly 180 for tiny negative inputs.
    if t >= 90.0 {
        t - 180.0
    } else {
        t
    }
}

/// A 5D grasp: center, gripper opening `w`, jaw height `h` and orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspRect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
}

impl GraspRect {
    /// Builds a rectangle, canonicalizing the orientation.
    pub fn new(x: f64, y: f64, w: f64, h: f64, theta: f64) -> Result<Self> {
        let all_finite = [x, y, w, h, theta].iter().all(|v| v.is_finite());
        if !all_finite || w <= 0.0 || h <= 0.0 {
            return Err(GraspError::InvalidArgument(format!(
                "invalid grasp rectangle ({x}, {y}, {w}, {h}, {theta})"
            )));
        }
        Ok(Self {
            x,
            y,
            w,
            h,
            theta: canonical_angle(theta),
        })
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn polygon(&self) -> Polygon4 {
        rect_to_polygon(self)
    }

    /// Parses `"x,y,w,h,theta"`.
    pub fn parse_csv(s: &str) -> Result<Self> {
        let vals: Vec<f64> = s
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| GraspError::InvalidArgument(format!("bad rectangle {s:?}: {e}")))?;
        if vals.len() != 5 {
            return Err(GraspError::InvalidArgument(format!(
                "expected 5 comma-separated values, got {}",
                vals.len()
            )));
        }
        Self::new(vals[0], vals[1], vals[2], vals[3], vals[4])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Four corners of a grasp rectangle, counterclockwise (positive shoelace area).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Polygon4(pub [Point; 4]);

impl Polygon4 {
    pub fn area(&self) -> f64 {
        signed_area(&self.0)
    }

    pub fn vertices(&self) -> &[Point; 4] {
        &self.0
    }
}

pub fn rect_to_polygon(g: &GraspRect) -> Polygon4 {
    let (s, c) = g.theta.to_radians().sin_cos();
    let (hw, hh) = (g.w / 2.0, g.h / 2.0);
    let local = [(-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)];
    Polygon4(local.map(|(lx, ly)| Point::new(g.x + c * lx - s * ly, g.y + s * lx + c * ly)))
}

/// Shoelace area; positive for counterclockwise vertices.
pub fn signed_area(pts: &[Point]) -> f64 {
    if pts.len() < 3 {
        return 0.0;
    }
    let n = pts.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (pts[i], pts[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum();
    0.5 * twice
}

/// Smallest angle between two grasp orientations, in `[0, 90]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(180.0);
    d.min(180.0 - d)
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn line_intersection(s: Point, e: Point, a: Point, b: Point) -> Point {
    let (ds, de) = (cross(a, b, s), cross(a, b, e));
    let t = ds / (ds - de);
    Point::new(s.x + t * (e.x - s.x), s.y + t * (e.y - s.y))
}

/// Clips `subject` against the convex counterclockwise polygon `clip`.
pub fn clip_convex(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut output);
        let mut prev = *input.last().unwrap();
        let mut prev_in = cross(a, b, prev) >= 0.0;
        for &cur in &input {
            let cur_in = cross(a, b, cur) >= 0.0;
            if cur_in {
                if !prev_in {
                    output.push(line_intersection(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(line_intersection(prev, cur, a, b));
            }
            prev = cur;
            prev_in = cur_in;
        }
    }
    output
}

pub fn intersection_area(g1: &GraspRect, g2: &GraspRect) -> f64 {
    // Cheap rejection on circumscribed circles.
    let r1 = 0.5 * g1.w.hypot(g1.h);
    let r2 = 0.5 * g2.w.hypot(g2.h);
    if (g1.x - g2.x).hypot(g1.y - g2.y) > r1 + r2 {
        return 0.0;
    }
    let inter = clip_convex(&g1.polygon().0, &g2.polygon().0);
    let area = signed_area(&inter);
    if area < AREA_EPS {
        0.0
    } else {
        area
    }
}

pub fn oriented_iou(g1: &GraspRect, g2: &GraspRect) -> f64 {
    // Clip in a canonical argument order so the result is exactly symmetric.
    let (a, b) = if key(g1) <= key(g2) { (g1, g2) } else { (g2, g1) };
    let inter = intersection_area(a, b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

fn key(g: &GraspRect) -> [u64; 5] {
    [g.x, g.y, g.w, g.h, g.theta].map(|v| v.to_bits())
}

/// Grasp success under the rectangle metric: some ground truth is within
/// `angle_thr` degrees and overlaps with IoU of at least `iou_thr`.
pub fn is_success(pred: &GraspRect, gts: &[GraspRect], angle_thr: f64, iou_thr: f64) -> bool {
    gts.iter()
        .any(|gt| angle_diff(pred.theta, gt.theta) <= angle_thr && oriented_iou(pred, gt) >= iou_thr)
}
