use std::collections::HashMap;
use std::fmt;

use image::{GrayImage, Luma, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The six semantic classes of color-coded source labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticClass {
    Impervious,
    Building,
    LowVegetation,
    Tree,
    Car,
    Clutter,
}

impl SemanticClass {
    pub const ALL: [SemanticClass; 6] = [
        SemanticClass::Impervious,
        SemanticClass::Building,
        SemanticClass::LowVegetation,
        SemanticClass::Tree,
        SemanticClass::Car,
        SemanticClass::Clutter,
    ];
}

impl fmt::Display for SemanticClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SemanticClass::Impervious => "impervious",
            SemanticClass::Building => "building",
            SemanticClass::LowVegetation => "low_vegetation",
            SemanticClass::Tree => "tree",
            SemanticClass::Car => "car",
            SemanticClass::Clutter => "clutter",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColorClass {
    pub rgb: [u8; 3],
    pub class: SemanticClass,
}

/// The usual color coding of 6-class urban semantic labels.
pub fn default_colormap() -> Vec<ColorClass> {
    use SemanticClass::*;
    [
        ([255, 255, 255], Impervious),
        ([0, 0, 255], Building),
        ([0, 255, 255], LowVegetation),
        ([0, 255, 0], Tree),
        ([255, 255, 0], Car),
        ([255, 0, 0], Clutter),
    ]
    .into_iter()
    .map(|(rgb, class)| ColorClass { rgb, class })
    .collect()
}

pub fn class_color(colormap: &[ColorClass], class: SemanticClass) -> Result<[u8; 3]> {
    colormap
        .iter()
        .find(|c| c.class == class)
        .map(|c| c.rgb)
        .ok_or_else(|| Error::Dataset(format!("colormap has no entry for class {class}")))
}

/// Building pixels become 1, every other class 0. Colors must match a
/// colormap entry exactly.
pub fn binarize_semantic_mask(labels: &RgbImage, colormap: &[ColorClass]) -> Result<GrayImage> {
    let lookup: HashMap<[u8; 3], SemanticClass> =
        colormap.iter().map(|c| (c.rgb, c.class)).collect();
    let mut out = GrayImage::new(labels.width(), labels.height());
    for (x, y, px) in labels.enumerate_pixels() {
        let class = lookup.get(&px.0).ok_or_else(|| {
            Error::Dataset(format!(
                "unknown label color ({}, {}, {}) at pixel ({x}, {y})",
                px[0], px[1], px[2]
            ))
        })?;
        out.put_pixel(x, y, Luma([u8::from(*class == SemanticClass::Building)]));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use image::Rgb;

    use super::*;

    #[test]
    fn all_building_and_no_building() {
        let cm = default_colormap();
        let b = RgbImage::from_pixel(4, 3, Rgb([0, 0, 255]));
        assert!(binarize_semantic_mask(&b, &cm).unwrap().pixels().all(|p| p[0] == 1));
        let r = RgbImage::from_pixel(4, 3, Rgb([255, 255, 255]));
        assert!(binarize_semantic_mask(&r, &cm).unwrap().pixels().all(|p| p[0] == 0));
    }

    #[test]
    fn unknown_color_names_pixel() {
        let mut img = RgbImage::from_pixel(3, 3, Rgb([0, 255, 0]));
        img.put_pixel(2, 1, Rgb([1, 2, 3]));
        let err = binarize_semantic_mask(&img, &default_colormap()).unwrap_err().to_string();
        assert!(err.contains("(1, 2, 3)") && err.contains("(2, 1)"), "{err}");
    }
}
