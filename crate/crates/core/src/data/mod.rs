//! Synthetic texture bank, mosaic composition and dataset files.

mod dataset;
mod ingest;
mod mosaic;
mod texture;

pub use dataset::{
    build_dataset, generate, listed_files, mosaic_spec, regenerate, verify_dataset, write_dataset,
    Dataset, DatasetConfig, DatasetFiles, TestMosaic, TrainImage, MANIFEST_NAME,
};
pub use ingest::{ingest_real_dataset, IngestOptions, IngestReport};
pub use mosaic::{compose_mosaic, partition, Layout, MosaicSpec, REGION_RANGE};
pub use texture::{
    chi2, gen_texture, mean_gradient, orientation_histogram, standard_bank, Family, TextureSpec,
    FAMILIES, MIN_EXTENT,
};
