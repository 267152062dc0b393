//! Semantic scenes and their side-car manifests.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Homography, Point};

/// Spatial extents are padded up to a multiple of this.
pub const PAD_MULTIPLE: usize = 32;

/// Coordinate frame the raw track file is expressed in.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordinateSpace {
    #[default]
    Pixel,
    World,
}

/// JSON side-car describing a semantic map PNG.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub scene: String,
    /// Class names in index order; fixes the one-hot channel assignment.
    pub classes: Vec<String>,
    pub n_classes: usize,
    #[serde(default = "one")]
    pub downsample_factor: f64,
    /// Row-major world → original-pixel homography.
    #[serde(default)]
    pub homography: Option<Vec<f64>>,
    /// Path of the class-index PNG, relative to the manifest.
    pub semantic_map: PathBuf,
    #[serde(default)]
    pub coordinates: CoordinateSpace,
}

fn one() -> f64 {
    1.0
}

impl SceneManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: SceneManifest = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.classes.len() != self.n_classes {
            return Err(Error::Config(format!(
                "manifest for {} declares n_classes = {} with {} class names",
                self.scene,
                self.n_classes,
                self.classes.len()
            )));
        }
        if !(self.downsample_factor > 0.0) {
            return Err(Error::Config(format!(
                "downsample_factor must be positive, got {}",
                self.downsample_factor
            )));
        }
        if let Some(h) = &self.homography {
            Homography::from_row_major(h)?;
        }
        Ok(())
    }

    pub fn homography(&self) -> Result<Option<Homography>> {
        self.homography
            .as_deref()
            .map(Homography::from_row_major)
            .transpose()
    }
}

/// A semantic class grid at model resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub id: String,
    pub width: usize,
    pub height: usize,
    /// Row-major class indices, `height × width`.
    pub semantic: Vec<u8>,
    pub n_classes: usize,
    pub class_names: Vec<String>,
    pub downsample_factor: f64,
    pub homography: Option<Homography>,
    pub coordinates: CoordinateSpace,
    /// Extents of the semantic map before downsampling and padding.
    pub original_width: usize,
    pub original_height: usize,
}

impl Scene {
    pub fn new(
        id: impl Into<String>,
        width: usize,
        height: usize,
        semantic: Vec<u8>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let n_classes = class_names.len();
        let scene = Scene {
            id: id.into(),
            width,
            height,
            semantic,
            n_classes,
            class_names,
            downsample_factor: 1.0,
            homography: None,
            coordinates: CoordinateSpace::Pixel,
            original_width: width,
            original_height: height,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        if self.semantic.len() != self.width * self.height {
            return Err(Error::shape(
                "scene",
                &[self.height, self.width],
                &[self.semantic.len()],
            ));
        }
        if let Some((i, &c)) = self
            .semantic
            .iter()
            .enumerate()
            .find(|(_, &c)| c as usize >= self.n_classes)
        {
            return Err(Error::Data(format!(
                "scene {}: class index {c} at pixel ({}, {}) exceeds n_classes = {}",
                self.id,
                i / self.width.max(1),
                i % self.width.max(1),
                self.n_classes
            )));
        }
        Ok(())
    }

    pub fn class_at(&self, row: usize, col: usize) -> u8 {
        self.semantic[row * self.width + col]
    }

    /// True if `p` lies inside the grid (pixel centers at integer coordinates).
    pub fn contains(&self, p: Point) -> bool {
        p.is_finite()
            && p.x >= -0.5
            && p.y >= -0.5
            && p.x < self.width as f64 - 0.5
            && p.y < self.height as f64 - 0.5
    }

    /// Pads bottom/right with class 0 up to the next multiple of `multiple`.
    pub fn pad_to(&self, multiple: usize) -> Scene {
        let w = self.width.div_ceil(multiple) * multiple;
        let h = self.height.div_ceil(multiple) * multiple;
        if w == self.width && h == self.height {
            return self.clone();
        }
        let mut semantic = vec![0u8; w * h];
        for r in 0..self.height {
            semantic[r * w..r * w + self.width]
                .copy_from_slice(&self.semantic[r * self.width..(r + 1) * self.width]);
        }
        Scene {
            width: w,
            height: h,
            semantic,
            ..self.clone()
        }
    }

    /// Loads the PNG named by `manifest`, downsamples it by the manifest's
    /// factor (nearest neighbour) and pads to [`PAD_MULTIPLE`].
    pub fn from_manifest(manifest: &SceneManifest, manifest_dir: &Path) -> Result<Scene> {
        manifest.validate()?;
        let png_path = manifest_dir.join(&manifest.semantic_map);
        let img = image::open(&png_path)
            .map_err(|e| Error::Data(format!("cannot read {}: {e}", png_path.display())))?
            .into_luma8();
        let (ow, oh) = (img.width() as usize, img.height() as usize);
        let f = manifest.downsample_factor;
        let w = ((ow as f64 / f).round() as usize).max(1);
        let h = ((oh as f64 / f).round() as usize).max(1);
        let mut semantic = Vec::with_capacity(w * h);
        for r in 0..h {
            let sr = (((r as f64 + 0.5) * f) as usize).min(oh - 1);
            for c in 0..w {
                let sc = (((c as f64 + 0.5) * f) as usize).min(ow - 1);
                semantic.push(img.get_pixel(sc as u32, sr as u32).0[0]);
            }
        }
        let scene = Scene {
            id: manifest.scene.clone(),
            width: w,
            height: h,
            semantic,
            n_classes: manifest.n_classes,
            class_names: manifest.classes.clone(),
            downsample_factor: f,
            homography: manifest.homography()?,
            coordinates: manifest.coordinates,
            original_width: ow,
            original_height: oh,
        };
        scene.validate()?;
        Ok(scene.pad_to(PAD_MULTIPLE))
    }

    /// Loads a manifest file and its PNG.
    pub fn load(manifest_path: &Path) -> Result<Scene> {
        let manifest = SceneManifest::load(manifest_path)?;
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        Scene::from_manifest(&manifest, dir)
    }

    /// Writes the class grid (unpadded region) as an 8-bit PNG plus a
    /// manifest next to it. Returns the manifest path.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let png_name = format!("{stem}.png");
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.semantic.clone())
            .ok_or_else(|| Error::Data("semantic buffer size mismatch".into()))?;
        img.save(dir.join(&png_name))?;
        let manifest = SceneManifest {
            scene: self.id.clone(),
            classes: self.class_names.clone(),
            n_classes: self.n_classes,
            downsample_factor: self.downsample_factor,
            homography: self.homography.map(|h| h.row_major().to_vec()),
            semantic_map: PathBuf::from(png_name),
            coordinates: self.coordinates,
        };
        let path = dir.join(format!("{stem}.json"));
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn rejects_out_of_range_class() {
        assert!(Scene::new("s", 2, 1, vec![0, 5], names(5)).is_err());
        assert!(Scene::new("s", 2, 1, vec![0, 4], names(5)).is_ok());
    }

    #[test]
    fn pads_bottom_right() {
        let s = Scene::new("s", 40, 33, vec![1; 40 * 33], names(2)).unwrap();
        let p = s.pad_to(32);
        assert_eq!((p.width, p.height), (64, 64));
        assert_eq!(p.class_at(0, 39), 1);
        assert_eq!(p.class_at(0, 40), 0);
        assert_eq!(p.class_at(33, 0), 0);
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let sem: Vec<u8> = (0..64 * 32).map(|i| (i % 3) as u8).collect();
        let s = Scene::new("grid", 64, 32, sem, names(3)).unwrap();
        let path = s.save(dir.path(), "grid").unwrap();
        let back = Scene::load(&path).unwrap();
        assert_eq!(back.semantic, s.semantic);
        assert_eq!(back.n_classes, 3);
    }

    #[test]
    fn manifest_validation() {
        let m = SceneManifest {
            scene: "x".into(),
            classes: names(2),
            n_classes: 3,
            downsample_factor: 1.0,
            homography: None,
            semantic_map: "x.png".into(),
            coordinates: CoordinateSpace::Pixel,
        };
        assert!(m.validate().is_err());
    }
}
