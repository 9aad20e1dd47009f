mod compare;
mod fetch;
mod prepare;
mod run;

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use reefgrad_core::data::{build_manifest, DatasetManifest};

pub use compare::{compare, CompareRow, ComparisonTable, COMPARISON_ROWS};
pub use fetch::fetch;
pub use prepare::{prepare, MANIFEST_FILE};
pub use run::{evaluate, explain, train};

/// `manifest.csv` under `root` when present, else a fresh scan.
pub fn load_manifest(root: &Path) -> Result<DatasetManifest> {
    let csv = root.join(MANIFEST_FILE);
    if csv.is_file() {
        DatasetManifest::load(&csv).with_context(|| format!("reading {}", csv.display()))
    } else {
        build_manifest(root).with_context(|| format!("scanning {}", root.display()))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}
