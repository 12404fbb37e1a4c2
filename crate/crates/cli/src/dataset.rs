//! Dataset directory layout: `codes.csv`, `images/<id>.pgm`,
//! `masks/<id>.pgm` and `registry.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use topocf::codec::synthetic::RegistryEntry;
use topocf::codec::{SyntheticData, SyntheticRegistry};
use topocf::io::{read_image, read_json, read_mask, unhex, write_codes, write_image, write_json, write_mask};
use topocf::model::{CsCode, Dataset, IsCode, Mask};
use topocf::{Error, Result};

pub const CODES: &str = "codes.csv";
pub const IMAGES: &str = "images";
pub const MASKS: &str = "masks";
pub const REGISTRY: &str = "registry.json";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegistryFile {
    entries: Vec<RegistryRow>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegistryRow {
    id: String,
    /// SHA-256 of the 8-bit image content.
    digest: String,
    cs: CsCode,
    is: IsCode,
}

pub fn write_registry(path: &Path, registry: &SyntheticRegistry) -> Result<()> {
    let entries = registry
        .entries()
        .into_iter()
        .map(|(d, e)| RegistryRow {
            id: e.id.clone(),
            digest: topocf::io::hex(d),
            cs: e.cs,
            is: e.is.clone(),
        })
        .collect();
    write_json(path, &RegistryFile { entries })
}

pub fn read_registry(path: &Path) -> Result<SyntheticRegistry> {
    let file: RegistryFile = read_json(path)?;
    let mut registry = SyntheticRegistry::default();
    for row in file.entries {
        let digest: [u8; 32] = unhex(&row.digest)
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| Error::parse(path, 1, 1, format!("entry `{}` has a malformed digest", row.id)))?;
        registry.insert_digest(
            digest,
            RegistryEntry {
                id: row.id,
                cs: row.cs,
                is: row.is,
            },
        );
    }
    Ok(registry)
}

fn pgm_name(id: &str) -> Result<String> {
    if id.is_empty() || id.contains(['/', '\\']) || id == "." || id == ".." {
        return Err(Error::InvalidDataset(format!("record id `{id}` cannot name a file")));
    }
    Ok(format!("{id}.pgm"))
}

pub fn pgm_path(dir: &Path, id: &str) -> Result<PathBuf> {
    Ok(dir.join(pgm_name(id)?))
}

/// Write a synthetic dataset; returns the files written.
pub fn write_dataset(dir: &Path, data: &SyntheticData) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (r, m) in data.dataset.records.iter().zip(&data.masks) {
        let img = r
            .image
            .as_ref()
            .ok_or_else(|| Error::InvalidDataset(format!("record {} has no image", r.id)))?;
        let p = pgm_path(&dir.join(IMAGES), &r.id)?;
        write_image(&p, img)?;
        written.push(p);
        let p = pgm_path(&dir.join(MASKS), &r.id)?;
        write_mask(&p, m)?;
        written.push(p);
    }
    let codes = dir.join(CODES);
    write_codes(&codes, &data.dataset)?;
    written.push(codes);
    let registry = dir.join(REGISTRY);
    write_registry(&registry, &data.registry)?;
    written.push(registry);
    std::fs::create_dir_all(dir.join(IMAGES))?;
    std::fs::create_dir_all(dir.join(MASKS))?;
    Ok(written)
}

/// Attach `images/<id>.pgm` to every record.
pub fn attach_images(ds: &mut Dataset, dir: &Path) -> Result<()> {
    for r in &mut ds.records {
        r.image = Some(read_image(&pgm_path(dir, &r.id)?)?);
    }
    Ok(())
}

/// Every `*.pgm` mask in a directory, keyed by file stem.
pub fn read_mask_dir(dir: &Path) -> Result<BTreeMap<String, Mask>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let p = entry?.path();
        if p.extension().is_some_and(|e| e == "pgm") {
            if let Some(stem) = p.file_stem() {
                out.insert(stem.to_string_lossy().into_owned(), read_mask(&p)?);
            }
        }
    }
    Ok(out)
}
