//! Seeded two-domain scene generator.
//!
//! One rectangle layout is rendered twice: with the source palette at full
//! resolution, and with a brightened, hue-rotated palette that is then
//! area-averaged down to the target's native resolution. Every rectangle is
//! aligned to the downscale grid, so footprints agree exactly at both
//! resolutions.

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::labels::{class_color, ColorClass, SemanticClass};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Palette {
    pub impervious: [u8; 3],
    pub building: [u8; 3],
    pub low_vegetation: [u8; 3],
    pub tree: [u8; 3],
    pub car: [u8; 3],
    pub clutter: [u8; 3],
}

impl Default for Palette {
    fn default() -> Self {
        Self {
            impervious: [150, 150, 145],
            building: [190, 80, 60],
            low_vegetation: [120, 165, 85],
            tree: [45, 95, 50],
            car: [40, 70, 170],
            clutter: [90, 60, 40],
        }
    }
}

impl Palette {
    pub fn color(&self, class: SemanticClass) -> [u8; 3] {
        match class {
            SemanticClass::Impervious => self.impervious,
            SemanticClass::Building => self.building,
            SemanticClass::LowVegetation => self.low_vegetation,
            SemanticClass::Tree => self.tree,
            SemanticClass::Car => self.car,
            SemanticClass::Clutter => self.clutter,
        }
    }

    pub fn shifted(&self, shift: &PaletteShift) -> Palette {
        let f = |c: [u8; 3]| shift.apply(c);
        Palette {
            impervious: f(self.impervious),
            building: f(self.building),
            low_vegetation: f(self.low_vegetation),
            tree: f(self.tree),
            car: f(self.car),
            clutter: f(self.clutter),
        }
    }
}

/// Appearance change between the domains: hue rotation about the grey axis,
/// then a brightness gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaletteShift {
    pub brightness: f64,
    pub hue_degrees: f64,
}

impl Default for PaletteShift {
    fn default() -> Self {
        Self {
            brightness: 1.1,
            hue_degrees: 20.0,
        }
    }
}

impl PaletteShift {
    pub fn apply(&self, rgb: [u8; 3]) -> [u8; 3] {
        let (s, c) = self.hue_degrees.to_radians().sin_cos();
        let a = (1.0 - c) / 3.0;
        let b = (1.0f64 / 3.0).sqrt() * s;
        let m = [[c + a, a - b, a + b], [a + b, c + a, a - b], [a - b, a + b, c + a]];
        let v = rgb.map(f64::from);
        let mut out = [0u8; 3];
        for (o, row) in out.iter_mut().zip(m) {
            let x = (row[0] * v[0] + row[1] * v[1] + row[2] * v[2]) * self.brightness;
            *o = x.round().clamp(0.0, 255.0) as u8;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub seed: u64,
    /// Side of the high-resolution scene in pixels.
    pub size: usize,
    /// High-res to target-native ratio; all geometry snaps to this grid.
    pub downscale: usize,
    pub n_buildings: usize,
    /// Inclusive building side range in high-res pixels.
    pub building_size: [usize; 2],
    pub n_roads: usize,
    pub n_trees: usize,
    pub n_cars: usize,
    pub source_palette: Palette,
    pub target_shift: PaletteShift,
    /// Per-pixel uniform noise half-width, in 8-bit levels.
    pub noise_amplitude: u8,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            size: 384,
            downscale: 8,
            n_buildings: 10,
            building_size: [24, 72],
            n_roads: 3,
            n_trees: 12,
            n_cars: 6,
            source_palette: Palette::default(),
            target_shift: PaletteShift::default(),
            noise_amplitude: 10,
        }
    }
}

impl SceneSpec {
    /// Geometry scaled so a tile of `tile_size` sees roughly the same
    /// content as a 128-pixel tile of the default scene.
    pub fn for_tile(tile_size: usize) -> Self {
        let k = (tile_size / 128).max(1);
        let d = Self::default();
        Self {
            size: d.size * k,
            building_size: d.building_size.map(|s| s * k),
            ..d
        }
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.downscale;
        if g == 0 || self.size == 0 || self.size % g != 0 {
            return Err(Error::Config(format!(
                "scene size {} must be a positive multiple of downscale {g}",
                self.size
            )));
        }
        let [lo, hi] = self.building_size;
        if lo < g || lo > hi || hi > self.size {
            return Err(Error::Config(format!(
                "building_size {:?} must satisfy {g} <= min <= max <= {}",
                self.building_size, self.size
            )));
        }
        Ok(())
    }
}

/// All rasters of one synthetic scene. Masks hold 0/1.
#[derive(Debug, Clone)]
pub struct SceneRender {
    pub source_hr: RgbImage,
    /// Target-style rendering at full resolution (ground truth for PSNR).
    pub target_hr: RgbImage,
    pub target_native: RgbImage,
    pub footprint_hr: GrayImage,
    pub footprint_native: GrayImage,
    /// Color-coded 6-class labels at full resolution.
    pub labels_hr: RgbImage,
}

struct Layout {
    size: usize,
    class: Vec<SemanticClass>,
    /// Additive brightness per pixel (roof shading).
    shade: Vec<i16>,
}

impl Layout {
    fn fill(&mut self, x0: usize, y0: usize, w: usize, h: usize, class: SemanticClass) {
        for y in y0..(y0 + h).min(self.size) {
            let row = &mut self.class[y * self.size..(y + 1) * self.size];
            for c in &mut row[x0..(x0 + w).min(self.size)] {
                *c = class;
            }
        }
    }
}

/// Random grid-aligned value in `[lo, hi]`.
fn snapped(rng: &mut ChaCha8Rng, lo: usize, hi: usize, grid: usize) -> usize {
    let (a, b) = (lo.div_ceil(grid), hi / grid);
    rng.random_range(a..=b.max(a)) * grid
}

fn layout(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Layout {
    use SemanticClass::*;
    let (n, g) = (spec.size, spec.downscale);
    let mut l = Layout {
        size: n,
        class: vec![LowVegetation; n * n],
        shade: vec![0; n * n],
    };
    for i in 0..spec.n_roads {
        let width = 3 * g;
        let at = snapped(rng, 0, n - width, g);
        if i % 2 == 0 {
            l.fill(0, at, n, width, Impervious);
        } else {
            l.fill(at, 0, width, n, Impervious);
        }
    }
    for _ in 0..spec.n_trees {
        let (w, h) = (snapped(rng, g, 4 * g, g), snapped(rng, g, 4 * g, g));
        let (x, y) = (snapped(rng, 0, n - w, g), snapped(rng, 0, n - h, g));
        l.fill(x, y, w, h, Tree);
    }
    let [lo, hi] = spec.building_size;
    for _ in 0..spec.n_buildings {
        let (w, h) = (snapped(rng, lo, hi, g), snapped(rng, lo, hi, g));
        let (x, y) = (snapped(rng, 0, n - w, g), snapped(rng, 0, n - h, g));
        l.fill(x, y, w, h, Building);
        // Gable roof: the half away from the light is darker, with a ridge line.
        let horizontal = w >= h;
        for yy in y..y + h {
            for xx in x..x + w {
                let (pos, len) = if horizontal { (yy - y, h) } else { (xx - x, w) };
                let s = if 2 * pos + 1 == len || 2 * pos == len {
                    -40
                } else if 2 * pos > len {
                    -25
                } else {
                    0
                };
                l.shade[yy * n + xx] = s;
            }
        }
    }
    for _ in 0..spec.n_cars {
        let (w, h) = if rng.random_bool(0.5) { (2 * g, g) } else { (g, 2 * g) };
        let (x, y) = (snapped(rng, 0, n - w, g), snapped(rng, 0, n - h, g));
        if l.class[y * n + x] == Impervious {
            l.fill(x, y, w, h, Car);
        }
    }
    l
}

fn paint(l: &Layout, palette: &Palette, noise: u8, rng: &mut ChaCha8Rng) -> RgbImage {
    let n = l.size as u32;
    let a = i16::from(noise);
    RgbImage::from_fn(n, n, |x, y| {
        let i = (y * n + x) as usize;
        let base = palette.color(l.class[i]);
        let d = l.shade[i] + if a > 0 { rng.random_range(-a..=a) } else { 0 };
        Rgb(base.map(|c| (i16::from(c) + d).clamp(0, 255) as u8))
    })
}

/// Mean over `f x f` blocks with round-half-up integer arithmetic.
pub fn area_average_rgb(img: &RgbImage, f: u32) -> RgbImage {
    let (w, h) = (img.width() / f, img.height() / f);
    let n = f * f;
    RgbImage::from_fn(w, h, |bx, by| {
        let mut acc = [0u32; 3];
        for y in by * f..(by + 1) * f {
            for x in bx * f..(bx + 1) * f {
                let p = img.get_pixel(x, y);
                for c in 0..3 {
                    acc[c] += u32::from(p[c]);
                }
            }
        }
        Rgb(acc.map(|s| ((2 * s + n) / (2 * n)) as u8))
    })
}

/// A block is foreground when at least half of its pixels are.
pub fn area_average_mask(mask: &GrayImage, f: u32) -> GrayImage {
    let (w, h) = (mask.width() / f, mask.height() / f);
    GrayImage::from_fn(w, h, |bx, by| {
        let mut on = 0u32;
        for y in by * f..(by + 1) * f {
            for x in bx * f..(bx + 1) * f {
                on += u32::from(mask.get_pixel(x, y)[0] != 0);
            }
        }
        Luma([u8::from(2 * on >= f * f)])
    })
}

pub fn synth_scene_render(spec: &SceneSpec, colormap: &[ColorClass]) -> Result<SceneRender> {
    spec.validate()?;
    let mut geometry = ChaCha8Rng::seed_from_u64(spec.seed);
    let l = layout(spec, &mut geometry);
    let mut source_noise = ChaCha8Rng::seed_from_u64(spec.seed);
    source_noise.set_stream(1);
    let mut target_noise = ChaCha8Rng::seed_from_u64(spec.seed);
    target_noise.set_stream(2);

    let source_hr = paint(&l, &spec.source_palette, spec.noise_amplitude, &mut source_noise);
    let target_palette = spec.source_palette.shifted(&spec.target_shift);
    let target_hr = paint(&l, &target_palette, spec.noise_amplitude, &mut target_noise);
    let f = spec.downscale as u32;
    let target_native = area_average_rgb(&target_hr, f);

    let n = spec.size as u32;
    let footprint_hr = GrayImage::from_fn(n, n, |x, y| {
        Luma([u8::from(l.class[(y * n + x) as usize] == SemanticClass::Building)])
    });
    let footprint_native = area_average_mask(&footprint_hr, f);
    let mut colors = [[0u8; 3]; 6];
    for (slot, class) in colors.iter_mut().zip(SemanticClass::ALL) {
        *slot = class_color(colormap, class)?;
    }
    let labels_hr = RgbImage::from_fn(n, n, |x, y| {
        let class = l.class[(y * n + x) as usize];
        let idx = SemanticClass::ALL.iter().position(|c| *c == class).unwrap_or(0);
        Rgb(colors[idx])
    });
    Ok(SceneRender {
        source_hr,
        target_hr,
        target_native,
        footprint_hr,
        footprint_native,
        labels_hr,
    })
}
