//! Cornell and Jacquard grasp annotation parsers.

use std::path::Path;

use super::{load_image, Scene};
use crate::error::{GraspError, Result};
use crate::geometry::{canonical_angle, GraspRect};

/// Parsed grasps plus the number of rectangles skipped as malformed.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed {
    pub grasps: Vec<GraspRect>,
    pub skipped: usize,
}

/// Rectangle from four ordered vertices. Edge 1-2 is a gripper plate, so
/// `w` and `theta` follow it and `h` is the length of edge 2-3.
pub fn rect_from_vertices(v: &[(f64, f64); 4]) -> Option<GraspRect> {
    let x = v.iter().map(|p| p.0).sum::<f64>() / 4.0;
    let y = v.iter().map(|p| p.1).sum::<f64>() / 4.0;
    let (ex, ey) = (v[1].0 - v[0].0, v[1].1 - v[0].1);
    let w = ex.hypot(ey);
    let h = (v[2].0 - v[1].0).hypot(v[2].1 - v[1].1);
    let theta = canonical_angle(ey.atan2(ex).to_degrees());
    GraspRect::new(x, y, w, h, theta).ok()
}

fn parse_pair(line: &str) -> Option<(f64, f64)> {
    let mut it = line.split_whitespace();
    let x: f64 = it.next()?.parse().ok()?;
    let y: f64 = it.next()?.parse().ok()?;
    if it.next().is_some() || !x.is_finite() || !y.is_finite() {
        return None;
    }
    Some((x, y))
}

/// Cornell `*cpos.txt` content: four "x y" lines per rectangle.
pub fn parse_cornell_str(text: &str) -> Parsed {
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let mut grasps = Vec::new();
    let mut skipped = 0;
    for group in lines.chunks(4) {
        let pts: Option<Vec<(f64, f64)>> = group.iter().map(|l| parse_pair(l)).collect();
        match pts {
            Some(p) if p.len() == 4 => match rect_from_vertices(&[p[0], p[1], p[2], p[3]]) {
                Some(g) => grasps.push(g),
                None => skipped += 1,
            },
            _ => skipped += 1,
        }
    }
    Parsed { grasps, skipped }
}

/// Jacquard annotation content: one `x;y;theta;opening;jaw` line per grasp.
pub fn parse_jacquard_str(text: &str) -> Parsed {
    let mut grasps = Vec::new();
    let mut skipped = 0;
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let fields: std::result::Result<Vec<f64>, _> = line.split(';').map(|f| f.trim().parse::<f64>()).collect();
        match fields {
            Ok(f) if f.len() == 5 => match GraspRect::new(f[0], f[1], f[3], f[4], f[2]) {
                Ok(g) => grasps.push(g),
                Err(_) => skipped += 1,
            },
            _ => skipped += 1,
        }
    }
    Parsed { grasps, skipped }
}

fn finish(path: &Path, image: &Path, parsed: Parsed, object_id: String) -> Result<Scene> {
    if parsed.skipped > 0 {
        log::warn!("{}: skipped {} malformed grasp(s)", path.display(), parsed.skipped);
    }
    if parsed.grasps.is_empty() {
        return Err(GraspError::Parse {
            path: path.display().to_string(),
            msg: "no valid grasps".into(),
        });
    }
    let mut scene = Scene {
        image: load_image(image)?,
        grasps: parsed.grasps,
        object_id,
    };
    scene.retain_inside();
    Ok(scene)
}

/// Cornell files are named `pcdNNNNcpos.txt`; the object id is not encoded
/// in the name, so callers pass it explicitly.
pub fn parse_cornell(pos_file: &Path, image: &Path, object_id: &str) -> Result<Scene> {
    let text = std::fs::read_to_string(pos_file)?;
    finish(pos_file, image, parse_cornell_str(&text), object_id.to_string())
}

/// Jacquard files are named `<view>_<object>_grasps.txt`; the object id is
/// taken from the text after the first underscore when present.
pub fn parse_jacquard(annotation: &Path, image: &Path) -> Result<Scene> {
    let text = std::fs::read_to_string(annotation)?;
    let stem = annotation.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    let stem = stem.strip_suffix("_grasps").unwrap_or(stem);
    let object_id = stem.split_once('_').map(|(_, o)| o).unwrap_or(stem).to_string();
    finish(annotation, image, parse_jacquard_str(&text), object_id)
}
