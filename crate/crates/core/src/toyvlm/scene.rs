use crate::error::{Error, Result};
use crate::numcore::Tensor2;
use serde::{Deserialize, Serialize};

/// Axis-aligned box in normalized coordinates, `[x1, y1, x2, y2]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub category: usize,
    pub bbox: [f64; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: u64,
    pub objects: Vec<SceneObject>,
}

impl Scene {
    pub fn validate(&self, categories: usize, max_objects: usize) -> Result<()> {
        if self.objects.is_empty() {
            return Err(Error::Scene(format!("scene {} has no objects", self.id)));
        }
        if self.objects.len() > max_objects {
            return Err(Error::Scene(format!(
                "scene {} has {} objects, max {max_objects}",
                self.id,
                self.objects.len()
            )));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.category >= categories {
                return Err(Error::Scene(format!(
                    "scene {} object {i}: category {} out of {categories}",
                    self.id, o.category
                )));
            }
            let [x1, y1, x2, y2] = o.bbox;
            let ok = x1.is_finite()
                && y1.is_finite()
                && x2.is_finite()
                && y2.is_finite()
                && (0.0..1.0).contains(&x1)
                && (0.0..1.0).contains(&y1)
                && x1 < x2
                && y1 < y2
                && x2 <= 1.0
                && y2 <= 1.0;
            if !ok {
                return Err(Error::Scene(format!(
                    "scene {} object {i}: degenerate bbox {:?}",
                    self.id, o.bbox
                )));
            }
        }
        Ok(())
    }

    /// Distinct categories present, ascending.
    pub fn present_categories(&self) -> Vec<usize> {
        let mut cats: Vec<usize> = self.objects.iter().map(|o| o.category).collect();
        cats.sort_unstable();
        cats.dedup();
        cats
    }

    pub fn count_category(&self, category: usize) -> usize {
        self.objects.iter().filter(|o| o.category == category).count()
    }
}

/// Per-cell category histogram over a `grid x grid` partition of the unit
/// square. A cell counts an object when their intersection has positive
/// area; cells an object only touches at the border stay zero. Row index is
/// `row * grid + col`, scanning top-left to bottom-right.
pub fn rasterize(scene: &Scene, grid: usize, categories: usize) -> Tensor2 {
    let g = grid as f64;
    let mut hist = Tensor2::zeros(grid * grid, categories);
    for o in &scene.objects {
        let [x1, y1, x2, y2] = o.bbox;
        for r in 0..grid {
            let cy1 = r as f64 / g;
            let cy2 = (r + 1) as f64 / g;
            let oy = (y2.min(cy2) - y1.max(cy1)).max(0.0);
            if oy <= 0.0 {
                continue;
            }
            for c in 0..grid {
                let cx1 = c as f64 / g;
                let cx2 = (c + 1) as f64 / g;
                let ox = (x2.min(cx2) - x1.max(cx1)).max(0.0);
                if ox > 0.0 {
                    let cell = r * grid + c;
                    hist.set(cell, o.category, hist.get(cell, o.category) + 1.0);
                }
            }
        }
    }
    hist
}
