//! Dataset ingestion, synthetic data, patch sampling and full-image inference.

mod dataset;
mod image_io;
mod patches;
mod synth;
mod tile;

pub use dataset::{find_partner, list_images, load_dataset, save_dataset, FundusSample};
pub use image_io::{
    read_gray, read_mask, read_probability_map, write_gray8, write_mask, write_probability_map,
    write_rgb8, ColorMode,
};
pub use patches::{
    block_split, extract_all, extract_patches, patch_at, Patch, PatchSet, PatchSource, Split,
    FULL_SCALE_PATCHES_PER_IMAGE, PATCH_HALF, PATCH_SIZE,
};
pub use synth::{synth_generate, synth_sample};
pub use tile::{core_origins, overlap_tile_predict, reflect, CONTEXT, CORE, WINDOW};
