//! Datasets on disk: `images/` + `masks/` directory pairs and the plain-text
//! manifest indexing a generated corpus.
//!
//! Manifest lines are tab separated: `id`, `domain`, image path, mask path.
//! Paths are relative to the manifest's directory; `#` starts a comment line.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::pnm::{read_image, read_mask, write_image, write_mask};
use super::{DomainId, Sample};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MANIFEST_FILE: &str = "manifest.tsv";
/// Domain id assigned to samples loaded from an external directory.
pub const EXTERNAL_DOMAIN: DomainId = DomainId::MAX;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub domain: DomainId,
    pub image: PathBuf,
    pub mask: PathBuf,
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes every sample as `domain_<d>/images/<id>.ppm` and
/// `domain_<d>/masks/<id>.pgm` under `root`, then the manifest. The manifest
/// only appears once every image is on disk.
pub fn write_dataset<T: Scalar>(root: &Path, samples: &[Sample<T>]) -> Result<PathBuf> {
    create_dir(root)?;
    let mut lines = String::from("# id\tdomain\timage\tmask\n");
    for s in samples {
        let domain_dir = PathBuf::from(format!("domain_{}", s.domain));
        let image_rel = domain_dir.join("images").join(format!("{}.ppm", s.id));
        let mask_rel = domain_dir.join("masks").join(format!("{}.pgm", s.id));
        for rel in [&image_rel, &mask_rel] {
            create_dir(&root.join(rel.parent().expect("nested path")))?;
        }
        write_image(&root.join(&image_rel), &s.image)?;
        write_mask(&root.join(&mask_rel), &s.mask)?;
        lines.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            s.id,
            s.domain,
            image_rel.display(),
            mask_rel.display()
        ));
    }
    let manifest = root.join(MANIFEST_FILE);
    let staging = root.join(format!(".{MANIFEST_FILE}.partial"));
    let mut file = std::fs::File::create(&staging).map_err(|e| Error::io(&staging, e))?;
    file.write_all(lines.as_bytes())
        .and_then(|_| file.sync_all())
        .map_err(|e| Error::io(&staging, e))?;
    std::fs::rename(&staging, &manifest).map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let malformed = |line: usize, reason: &str| Error::Malformed {
        format: "manifest",
        reason: format!("line {}: {reason}", line + 1),
    };
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [id, domain, image, mask] = fields[..] else {
            return Err(malformed(n, "expected 4 tab-separated fields"));
        };
        entries.push(ManifestEntry {
            id: id.to_string(),
            domain: domain
                .parse()
                .map_err(|_| malformed(n, "domain is not a u16"))?,
            image: base.join(image),
            mask: base.join(mask),
        });
    }
    Ok(entries)
}

fn check_pair<T: Scalar>(id: &str, image: &crate::spectral::Image<T>, mask: &crate::binary::BinaryMask) -> Result<()> {
    if image.height() != mask.height() || image.width() != mask.width() {
        return Err(Error::ShapeMismatch(format!(
            "`{id}`: image {} vs mask {}x{}",
            image.shape(),
            mask.height(),
            mask.width()
        )));
    }
    Ok(())
}

impl ManifestEntry {
    pub fn load<T: Scalar>(&self) -> Result<Sample<T>> {
        let image = read_image(&self.image)?;
        let mask = read_mask(&self.mask)?;
        check_pair(&self.id, &image, &mask)?;
        Ok(Sample {
            id: self.id.clone(),
            domain: self.domain,
            image,
            mask,
            blobs: Vec::new(),
        })
    }
}

fn stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let supported = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "ppm" | "pgm" | "pnm"));
        if !path.is_file() || !supported {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.insert(stem.to_string(), path);
        }
    }
    Ok(out)
}

/// Loads matching `images/<stem>` and `masks/<stem>` pairs from `dir`, sorted
/// by stem. Masks without an image are logged and skipped.
pub fn load_external_dataset<T: Scalar>(dir: &Path) -> Result<Vec<Sample<T>>> {
    let images = stems(&dir.join("images"))?;
    let masks = stems(&dir.join("masks"))?;
    for stem in masks.keys().filter(|s| !images.contains_key(*s)) {
        log::warn!("mask `{stem}` in {} has no matching image", dir.display());
    }
    images
        .iter()
        .map(|(stem, image_path)| {
            let mask_path = masks
                .get(stem)
                .ok_or_else(|| Error::MissingMask(stem.clone()))?;
            let image = read_image(image_path)?;
            let mask = read_mask(mask_path)?;
            check_pair(stem, &image, &mask)?;
            Ok(Sample {
                id: stem.clone(),
                domain: EXTERNAL_DOMAIN,
                image,
                mask,
                blobs: Vec::new(),
            })
        })
        .collect()
}
