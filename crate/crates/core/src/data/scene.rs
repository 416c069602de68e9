use crate::autodiff::Tensor;
use crate::geometry::GraspRect;

/// An RGB image in `[0, 1]` (`[3][H][W]`) with its annotated grasps.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image: Tensor,
    pub grasps: Vec<GraspRect>,
    pub object_id: String,
}

impl Scene {
    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }

    /// Drops grasps whose centers fall outside the image.
    pub fn retain_inside(&mut self) {
        let (w, h) = (self.width() as f64, self.height() as f64);
        self.grasps.retain(|g| g.x >= 0.0 && g.x < w && g.y >= 0.0 && g.y < h);
    }
}
