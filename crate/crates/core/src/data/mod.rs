//! Image decoding, preprocessing, dataset manifests and ingestion.

use thiserror::Error;

pub mod flickr;
mod image;
mod manifest;
mod preprocess;

pub use flickr::{
    api_key_from_env, flickr_fetch, flickr_fetch_with, DownloadReport, FetchOptions, FlickrError,
    HttpResponse, HttpTransport,
};
pub use image::{decode_image, encode_image, encode_png, encode_ppm, ImageRgb};
pub use manifest::{
    build_manifest, scan_dataset, split, DatasetManifest, Label, ManifestEntry, ManifestScan,
    SplitRule, SplitSpec, IMAGE_EXTENSIONS,
};
pub use preprocess::{
    bilinear_resample, resize_max_dim, sharpen, to_tensor, Normalization, DEFAULT_MAX_DIM,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("decode error at byte {offset}: {reason}")]
    Decode { offset: usize, reason: String },
    #[error("dataset layout error: {0}")]
    Layout(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

/// Reads and decodes an image file, attaching the path to any error.
pub fn load_image(path: impl AsRef<std::path::Path>) -> Result<ImageRgb> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    decode_image(&bytes).map_err(|e| match e {
        DataError::Decode { offset, reason } => DataError::Decode {
            offset,
            reason: format!("{}: {reason}", path.display()),
        },
        other => other,
    })
}
