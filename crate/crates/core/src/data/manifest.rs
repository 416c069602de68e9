//! JSON-lines dataset manifests with PNG images.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Scene;
use crate::autodiff::Tensor;
use crate::error::{GraspError, Result};
use crate::geometry::GraspRect;

/// One manifest line. `image` is relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub image: PathBuf,
    pub grasps: Vec<[f64; 5]>,
    pub object_id: String,
}

/// Loads an RGB (or gray, converted) image as `[3][H][W]` in `[0, 1]`.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = px[c] as f64 / 255.0;
        }
    }
    Tensor::new(&[3, h, w], data)
}

/// Writes a `[3][H][W]` image quantized to 8 bits.
pub fn save_image(img: &Tensor, path: &Path) -> Result<()> {
    let s = img.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(GraspError::Shape {
            op: "save_image",
            lhs: s.to_vec(),
            rhs: vec![3, 0, 0],
        });
    }
    let (h, w) = (s[1], s[2]);
    let d = img.data();
    let out = image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let q = |c: usize| (d[(c * h + y as usize) * w + x as usize].clamp(0.0, 1.0) * 255.0).round() as u8;
        image::Rgb([q(0), q(1), q(2)])
    });
    out.save(path)?;
    Ok(())
}

/// Writes `images/<name>-NNNNN.png` plus `<name>.jsonl` under `dir` and
/// returns the manifest path.
pub fn write_dataset(dir: &Path, name: &str, scenes: &[Scene]) -> Result<PathBuf> {
    let img_dir = dir.join("images");
    std::fs::create_dir_all(&img_dir)?;
    let manifest = dir.join(format!("{name}.jsonl"));
    let mut out = BufWriter::new(File::create(&manifest)?);
    for (i, s) in scenes.iter().enumerate() {
        let rel = PathBuf::from("images").join(format!("{name}-{i:05}.png"));
        save_image(&s.image, &dir.join(&rel))?;
        let rec = Record {
            image: rel,
            grasps: s.grasps.iter().map(|g| [g.x, g.y, g.w, g.h, g.theta]).collect(),
            object_id: s.object_id.clone(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<Vec<Scene>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let reader = BufReader::new(File::open(path)?);
    let mut scenes = Vec::new();
    for (ln, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| GraspError::Parse {
            path: path.display().to_string(),
            msg: format!("line {}: {e}", ln + 1),
        })?;
        let grasps = rec
            .grasps
            .iter()
            .map(|g| GraspRect::new(g[0], g[1], g[2], g[3], g[4]))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| GraspError::Parse {
                path: path.display().to_string(),
                msg: format!("line {}: {e}", ln + 1),
            })?;
        let mut scene = Scene {
            image: load_image(&base.join(&rec.image))?,
            grasps,
            object_id: rec.object_id,
        };
        scene.retain_inside();
        scenes.push(scene);
    }
    Ok(scenes)
}
