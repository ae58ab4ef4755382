//! On-disk layout of a training set:
//!
//! ```text
//! <dir>/cameras.json        camera list
//! <dir>/images/view_000.png ground truth, one per camera, in camera order
//! <dir>/init.ply            optional starting point cloud
//! <dir>/teacher.ply         optional reference scene (synthetic sets only)
//! ```

use std::fs;
use std::path::Path;

use super::{
    load_cameras, load_scene, save_cameras, save_scene, Camera, ImageBuffer, Scene, SyntheticScene,
};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct Dataset {
    pub cameras: Vec<Camera>,
    pub images: Vec<ImageBuffer>,
    pub init: Option<Scene>,
}

fn image_name(i: usize) -> String {
    format!("view_{i:03}.png")
}

pub fn save_dataset(dir: &Path, scene: &SyntheticScene) -> Result<()> {
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    save_cameras(&scene.cameras, dir.join("cameras.json"))?;
    for (i, img) in scene.ground_truth.iter().enumerate() {
        img.save_png(images.join(image_name(i)))?;
    }
    save_scene(&scene.init, dir.join("init.ply"))?;
    save_scene(&scene.teacher, dir.join("teacher.ply"))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let cameras = load_cameras(dir.join("cameras.json"))?;
    let images = (0..cameras.len())
        .map(|i| ImageBuffer::load(dir.join("images").join(image_name(i))))
        .collect::<Result<Vec<_>>>()?;
    for (c, img) in cameras.iter().zip(&images) {
        if (c.width, c.height) != (img.width, img.height) {
            return Err(Error::DimensionMismatch(format!(
                "camera {} is {}x{} but its image is {}x{}",
                c.id, c.width, c.height, img.width, img.height
            )));
        }
    }
    let init_path = dir.join("init.ply");
    let init = if init_path.exists() {
        Some(load_scene(&init_path)?)
    } else {
        None
    };
    Ok(Dataset {
        cameras,
        images,
        init,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_synthetic_scene, SceneKind, SyntheticSpec};

    #[test]
    fn round_trip_quantizes_images_only() {
        let mut spec = SyntheticSpec::new(SceneKind::RandomBlobs, 2, 40);
        spec.width = 12;
        spec.height = 10;
        spec.views = 4;
        let s = generate_synthetic_scene(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &s).unwrap();
        let d = load_dataset(dir.path()).unwrap();
        assert_eq!(d.cameras, s.cameras);
        assert_eq!(d.init.unwrap().points, s.init.points);
        for (a, b) in d.images.iter().zip(&s.ground_truth) {
            assert!(a
                .data
                .iter()
                .zip(&b.data)
                .all(|(x, y)| (x - y).abs() <= 0.5 / 255.0 + 1e-12));
        }
    }

    #[test]
    fn missing_image_is_an_error() {
        let mut spec = SyntheticSpec::new(SceneKind::RandomBlobs, 2, 20);
        spec.width = 8;
        spec.height = 8;
        spec.views = 4;
        let s = generate_synthetic_scene(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &s).unwrap();
        fs::remove_file(dir.path().join("images").join("view_002.png")).unwrap();
        assert!(load_dataset(dir.path()).is_err());
    }
}
