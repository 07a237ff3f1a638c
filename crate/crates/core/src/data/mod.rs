//! Tiles, degradation, labels, mixed batches and the synthetic two-domain
//! generator.

mod batch;
mod dataset;
mod labels;
mod sample;
mod synth;

pub use batch::{
    mixed_minibatch, select_rows, single_domain_batch, source_count, Batch, FixedTiles,
    SampleStream, SourceTiles, TargetTiles,
};
pub use dataset::{list_pngs, read_mask, read_rgb, Dataset, SourceScene, SynthSpec, TargetScene};
pub use labels::{binarize_semantic_mask, class_color, default_colormap, ColorClass, SemanticClass};
pub use sample::{
    make_source_sample, make_target_sample, mask_to_tensor, rgb_to_tensor, tensor_to_rgb,
    DatasetSpec, DomainTag, TileSample, DEFAULT_BLUR_SIGMA,
};
pub use synth::{
    area_average_mask, area_average_rgb, synth_scene_render, Palette, PaletteShift, SceneRender,
    SceneSpec,
};
