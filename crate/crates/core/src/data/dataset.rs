//! In-memory scene collections, synthetic generation and the
//! directory-of-PNG layout:
//!
//! ```text
//! root/source/images/*.png   RGB, full resolution
//! root/source/labels/*.png   6-class color labels
//! root/source/masks/*.png    0 / 255 footprints (written, not required)
//! root/target/images/*.png   RGB, native low resolution
//! root/target/masks/*.png    0 / 255 footprints
//! root/target/hr/*.png       optional full-resolution truth (synthetic only)
//! ```
//!
//! Files pair up by stem.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, RgbImage};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::labels::{binarize_semantic_mask, ColorClass};
use super::synth::{synth_scene_render, SceneSpec};
use crate::error::{Error, Result};
use crate::fsutil::{create_dir_all, save_png};

#[derive(Debug, Clone)]
pub struct SourceScene {
    pub name: String,
    pub image: RgbImage,
    pub labels: RgbImage,
}

#[derive(Debug, Clone)]
pub struct TargetScene {
    pub name: String,
    pub image: RgbImage,
    /// 0/1 footprint at the image's resolution.
    pub footprint: GrayImage,
    pub hr: Option<RgbImage>,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub source: Vec<SourceScene>,
    pub target: Vec<TargetScene>,
}

/// Recipe for a synthetic two-domain dataset. Source and target scenes get
/// different layouts, derived from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub source_scenes: usize,
    pub target_scenes: usize,
    /// Template; its own `seed` is replaced per scene.
    pub scene: SceneSpec,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            source_scenes: 4,
            target_scenes: 4,
            scene: SceneSpec::default(),
        }
    }
}

impl SynthSpec {
    pub fn for_tile(tile_size: usize) -> Self {
        Self {
            scene: SceneSpec::for_tile(tile_size),
            ..Default::default()
        }
    }

    fn scene_seeds(&self, stream: u64, n: usize) -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        (0..n).map(|_| rng.next_u64()).collect()
    }
}

fn scene_name(i: usize) -> String {
    format!("scene-{i:03}")
}

impl Dataset {
    pub fn synthesize(spec: &SynthSpec, colormap: &[ColorClass]) -> Result<Self> {
        let mut out = Dataset::default();
        for (i, seed) in spec.scene_seeds(0, spec.source_scenes).into_iter().enumerate() {
            let r = synth_scene_render(&SceneSpec { seed, ..spec.scene.clone() }, colormap)?;
            out.source.push(SourceScene {
                name: scene_name(i),
                image: r.source_hr,
                labels: r.labels_hr,
            });
        }
        for (i, seed) in spec.scene_seeds(1, spec.target_scenes).into_iter().enumerate() {
            let r = synth_scene_render(&SceneSpec { seed, ..spec.scene.clone() }, colormap)?;
            out.target.push(TargetScene {
                name: scene_name(i),
                image: r.target_native,
                footprint: r.footprint_native,
                hr: Some(r.target_hr),
            });
        }
        Ok(out)
    }

    /// True when every target scene carries full-resolution truth.
    pub fn target_has_hr(&self) -> bool {
        !self.target.is_empty() && self.target.iter().all(|t| t.hr.is_some())
    }

    pub fn write(&self, root: &Path, colormap: &[ColorClass]) -> Result<()> {
        let dirs = |d: &str, subs: &[&str]| -> Result<PathBuf> {
            let base = root.join(d);
            for s in subs {
                create_dir_all(&base.join(s))?;
            }
            Ok(base)
        };
        if !self.source.is_empty() {
            let base = dirs("source", &["images", "labels", "masks"])?;
            for s in &self.source {
                let file = format!("{}.png", s.name);
                save_png(&s.image, &base.join("images").join(&file))?;
                save_png(&s.labels, &base.join("labels").join(&file))?;
                let mask = binarize_semantic_mask(&s.labels, colormap)?;
                save_png(&mask_to_255(&mask), &base.join("masks").join(&file))?;
            }
        }
        if !self.target.is_empty() {
            let mut subs = vec!["images", "masks"];
            if self.target.iter().any(|t| t.hr.is_some()) {
                subs.push("hr");
            }
            let base = dirs("target", &subs)?;
            for t in &self.target {
                let file = format!("{}.png", t.name);
                save_png(&t.image, &base.join("images").join(&file))?;
                save_png(&mask_to_255(&t.footprint), &base.join("masks").join(&file))?;
                if let Some(hr) = &t.hr {
                    save_png(hr, &base.join("hr").join(&file))?;
                }
            }
        }
        Ok(())
    }

    /// Loads whichever of `root/source` and `root/target` exist.
    pub fn load(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            return Err(Error::Dataset(format!("{} is not a directory", root.display())));
        }
        let mut out = Dataset::default();
        let src = root.join("source");
        if src.is_dir() {
            let images = list_pngs(&src.join("images"))?;
            let labels = list_pngs(&src.join("labels"))?;
            for (stem, path) in &images {
                let lpath = labels.get(stem).ok_or_else(|| {
                    Error::Dataset(format!("{}: no matching label tile", path.display()))
                })?;
                out.source.push(SourceScene {
                    name: stem.clone(),
                    image: read_rgb(path)?,
                    labels: read_rgb(lpath)?,
                });
            }
        }
        let tgt = root.join("target");
        if tgt.is_dir() {
            let images = list_pngs(&tgt.join("images"))?;
            let masks = list_pngs(&tgt.join("masks"))?;
            let hr_dir = tgt.join("hr");
            let hrs = if hr_dir.is_dir() { Some(list_pngs(&hr_dir)?) } else { None };
            for (stem, path) in &images {
                let mpath = masks.get(stem).ok_or_else(|| {
                    Error::Dataset(format!("{}: no matching mask tile", path.display()))
                })?;
                let hr = match &hrs {
                    Some(h) => Some(read_rgb(h.get(stem).ok_or_else(|| {
                        Error::Dataset(format!("{}: no matching hr tile", path.display()))
                    })?)?),
                    None => None,
                };
                out.target.push(TargetScene {
                    name: stem.clone(),
                    image: read_rgb(path)?,
                    footprint: read_mask(mpath)?,
                    hr,
                });
            }
        }
        if out.source.is_empty() && out.target.is_empty() {
            return Err(Error::Dataset(format!(
                "{}: no source/ or target/ tiles found",
                root.display()
            )));
        }
        Ok(out)
    }
}

fn mask_to_255(mask: &GrayImage) -> GrayImage {
    GrayImage::from_fn(mask.width(), mask.height(), |x, y| {
        Luma([if mask.get_pixel(x, y)[0] != 0 { 255 } else { 0 }])
    })
}

/// PNG files of a directory keyed by stem, sorted.
pub fn list_pngs(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png {
            if let Some(stem) = path.file_stem() {
                out.insert(stem.to_string_lossy().into_owned(), path);
            }
        }
    }
    Ok(out)
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(img.to_rgb8())
}

/// Single-channel mask, 0 = background and 255 = building, as 0/1.
pub fn read_mask(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let g = img.to_luma8();
    Ok(GrayImage::from_fn(g.width(), g.height(), |x, y| {
        Luma([u8::from(g.get_pixel(x, y)[0] >= 128)])
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::labels::default_colormap;

    #[test]
    fn write_then_load_is_lossless() {
        let spec = SynthSpec {
            source_scenes: 2,
            target_scenes: 1,
            scene: SceneSpec {
                size: 128,
                n_buildings: 3,
                building_size: [16, 40],
                ..Default::default()
            },
            ..Default::default()
        };
        let cm = default_colormap();
        let ds = Dataset::synthesize(&spec, &cm).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.write(dir.path(), &cm).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back.source.len(), 2);
        assert_eq!(back.source[1].image, ds.source[1].image);
        assert_eq!(back.source[1].labels, ds.source[1].labels);
        assert_eq!(back.target[0].footprint, ds.target[0].footprint);
        assert_eq!(back.target[0].hr, ds.target[0].hr);
        assert!(back.target_has_hr());
    }

    #[test]
    fn missing_pair_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("target");
        fs::create_dir_all(t.join("images")).unwrap();
        fs::create_dir_all(t.join("masks")).unwrap();
        save_png(&RgbImage::new(4, 4), &t.join("images/a.png")).unwrap();
        let err = Dataset::load(dir.path()).unwrap_err().to_string();
        assert!(err.contains("no matching mask"), "{err}");
    }
}
