use std::collections::HashSet;
use std::path::Path;

use anyhow::{bail, Context, Result};
use reefgrad_core::data::{
    encode_png, load_image, resize_max_dim, scan_dataset, sharpen, DatasetManifest, ManifestEntry,
};

use super::{create_dir, write_text};
use crate::PrepareArgs;

pub const MANIFEST_FILE: &str = "manifest.csv";

/// Output name: the source stem with a `.png` extension.
fn output_name(path: &str) -> Result<String> {
    let stem = Path::new(path)
        .file_stem()
        .and_then(|s| s.to_str())
        .with_context(|| format!("unusable file name {path}"))?;
    Ok(format!("{stem}.png"))
}

pub fn prepare(args: &PrepareArgs) -> Result<()> {
    let scan = scan_dataset(&args.data).with_context(|| format!("scanning {}", args.data.display()))?;
    if args.out.canonicalize().ok() == args.data.canonicalize().ok() && args.out.exists() {
        bail!("--out must differ from --data");
    }
    let mut entries = Vec::with_capacity(scan.manifest.len());
    let mut seen = HashSet::new();
    let mut unreadable = 0;
    for entry in scan.manifest.entries() {
        let img = match load_image(args.data.join(&entry.path)) {
            Ok(img) => img,
            Err(e) => {
                log::warn!("skipping {}: {e}", entry.path);
                unreadable += 1;
                continue;
            }
        };
        let mut img = resize_max_dim(&img, args.max_dim);
        if args.sharpen {
            img = sharpen(&img);
        }
        let rel = format!("{}/{}", entry.label.as_str(), output_name(&entry.path)?);
        if !seen.insert(rel.clone()) {
            bail!("two source images map to {rel}; rename one of them");
        }
        let dest = args.out.join(&rel);
        create_dir(dest.parent().expect("relative path has a parent"))?;
        std::fs::write(&dest, encode_png(&img)?).with_context(|| format!("writing {}", dest.display()))?;
        entries.push(ManifestEntry::new(rel, entry.label));
    }
    let manifest = DatasetManifest::new(entries)?;
    let mut csv = Vec::new();
    manifest.write_csv(&mut csv)?;
    write_text(&args.out.join(MANIFEST_FILE), std::str::from_utf8(&csv)?)?;
    let (bleached, healthy) = manifest.counts();
    println!(
        "prepared {} images ({bleached} bleached, {healthy} healthy) into {}; {} non-image files ignored, {unreadable} unreadable",
        manifest.len(),
        args.out.display(),
        scan.skipped
    );
    Ok(())
}
