//! Dataset layout scanning and the per-image descriptor cache.
//!
//! Datasets live under `<root>/cam_a/<person_id>_<shot>.png` and
//! `<root>/cam_b/...`; identities present only in `cam_b` act as gallery
//! distractors. The descriptor cache stores one JSON record per image
//! with a dimensions header that is validated on load, and embeds the
//! source image hash plus the descriptor config hash so stale records
//! are detected instead of silently reused.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::descriptor::{
    ChannelDescriptor, ChannelId, CameraId, ComponentKind, Family,
};
use crate::error::{Error, Result};
use crate::eval::ImageInfo;
use crate::fusion::PersonDescriptors;

/// One image found in a dataset directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CatalogEntry {
    /// `cam_a/0001_00` style identifier (relative path without extension).
    pub image_id: String,
    pub path: PathBuf,
    pub camera: CameraId,
    pub person_id: String,
    pub shot: u32,
}

impl CatalogEntry {
    pub fn info(&self) -> ImageInfo {
        ImageInfo {
            camera: self.camera,
            person_id: self.person_id.clone(),
            shot: self.shot,
        }
    }
}

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

fn parse_stem(stem: &str) -> Option<(String, u32)> {
    let (person, shot) = stem.rsplit_once('_')?;
    if person.is_empty() {
        return None;
    }
    let shot: u32 = shot.parse().ok()?;
    Some((person.to_string(), shot))
}

/// Scans a dataset root into a catalog sorted by (camera, person, shot).
/// Missing camera directories and malformed file names are layout errors;
/// an empty dataset yields an empty catalog.
pub fn scan_dataset(root: &Path) -> Result<Vec<CatalogEntry>> {
    let mut entries = Vec::new();
    for camera in [CameraId::A, CameraId::B] {
        let dir = root.join(camera.dir_name());
        if !dir.is_dir() {
            return Err(Error::Layout {
                path: dir,
                reason: "camera directory missing".into(),
            });
        }
        for item in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let item = item.map_err(|e| Error::io(&dir, e))?;
            let path = item.path();
            if !path.is_file() {
                continue;
            }
            let ext = path
                .extension()
                .and_then(|e| e.to_str())
                .map(|e| e.to_ascii_lowercase())
                .unwrap_or_default();
            if !IMAGE_EXTENSIONS.contains(&ext.as_str()) {
                continue;
            }
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default();
            let (person_id, shot) = parse_stem(stem).ok_or_else(|| Error::Layout {
                path: path.clone(),
                reason: "file name must look like <person_id>_<shot>.<ext>".into(),
            })?;
            entries.push(CatalogEntry {
                image_id: format!("{}/{}", camera.dir_name(), stem),
                path,
                camera,
                person_id,
                shot,
            });
        }
    }
    entries.sort_by(|a, b| {
        (a.camera, &a.person_id, a.shot).cmp(&(b.camera, &b.person_id, b.shot))
    });
    Ok(entries)
}

/// SHA-256 of a file's bytes, hex-encoded.
pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hex_digest(hasher))
}

pub(crate) fn hex_digest(hasher: Sha256) -> String {
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Deterministic hash of descriptor sets (image ids and values), used to
/// tie models to the exact training data.
pub fn descriptor_set_hash(sets: &[&[PersonDescriptors]]) -> String {
    let mut hasher = Sha256::new();
    for set in sets {
        for person in *set {
            hasher.update(person.image_id.as_bytes());
            for channel in &person.channels {
                for v in &channel.values {
                    hasher.update(v.to_le_bytes());
                }
            }
        }
    }
    hex_digest(hasher)
}

pub const CACHE_SCHEMA: u32 = 1;

/// Serialized descriptor record for one image.
#[derive(Debug, Serialize, Deserialize)]
pub struct CacheRecord {
    pub schema: u32,
    pub image_id: String,
    pub camera_id: CameraId,
    pub person_id: String,
    pub sample_index: u32,
    /// SHA-256 of the source image file.
    pub source_hash: String,
    /// Hash of the descriptor configuration that produced the values.
    pub config_hash: String,
    /// Dimensions header, one entry per channel in canonical order.
    pub dims: Vec<ChannelDim>,
    pub channels: Vec<ChannelValues>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelDim {
    pub family: Family,
    pub component: ComponentKind,
    pub len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ChannelValues {
    pub family: Family,
    pub component: ComponentKind,
    pub values: Vec<f64>,
}

impl CacheRecord {
    pub fn new(
        entry: &CatalogEntry,
        channels: &[ChannelDescriptor],
        source_hash: String,
        config_hash: String,
    ) -> CacheRecord {
        CacheRecord {
            schema: CACHE_SCHEMA,
            image_id: entry.image_id.clone(),
            camera_id: entry.camera,
            person_id: entry.person_id.clone(),
            sample_index: entry.shot,
            source_hash,
            config_hash,
            dims: channels
                .iter()
                .map(|c| ChannelDim {
                    family: c.channel.family,
                    component: c.channel.component,
                    len: c.values.len(),
                })
                .collect(),
            channels: channels
                .iter()
                .map(|c| ChannelValues {
                    family: c.channel.family,
                    component: c.channel.component,
                    values: c.values.clone(),
                })
                .collect(),
        }
    }

    /// Validates the header against the payload and the canonical channel
    /// ordering, then converts into runtime descriptors.
    pub fn into_descriptors(self, path: &Path) -> Result<PersonDescriptors> {
        let expected = ChannelId::all();
        if self.channels.len() != expected.len() || self.dims.len() != expected.len() {
            return Err(Error::Decode {
                path: path.to_path_buf(),
                reason: format!(
                    "expected {} channels, found {} (dims {})",
                    expected.len(),
                    self.channels.len(),
                    self.dims.len()
                ),
            });
        }
        let mut channels = Vec::with_capacity(expected.len());
        for ((chan, dim), id) in self.channels.into_iter().zip(&self.dims).zip(expected) {
            if chan.family != id.family || chan.component != id.component {
                return Err(Error::Decode {
                    path: path.to_path_buf(),
                    reason: format!("channel order broken at {}", id),
                });
            }
            if dim.family != id.family || dim.component != id.component || dim.len != chan.values.len()
            {
                return Err(Error::Decode {
                    path: path.to_path_buf(),
                    reason: format!(
                        "dimension header mismatch at {}: header {} vs {} values",
                        id,
                        dim.len,
                        chan.values.len()
                    ),
                });
            }
            channels.push(ChannelDescriptor {
                channel: id,
                values: chan.values,
            });
        }
        let descriptors = PersonDescriptors {
            image_id: self.image_id,
            person_id: self.person_id,
            channels,
        };
        descriptors.validate()?;
        Ok(descriptors)
    }
}

/// Cache file path for an image: `<cache_dir>/<camera>/<stem>.json`.
pub fn cache_path(cache_dir: &Path, entry: &CatalogEntry) -> PathBuf {
    let stem = entry
        .path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("record");
    cache_dir
        .join(entry.camera.dir_name())
        .join(format!("{stem}.json"))
}

pub fn write_cache_record(path: &Path, record: &CacheRecord) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let json = serde_json::to_string(record)
        .map_err(|e| Error::Config(format!("cache serialization failed: {e}")))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn read_cache_record(path: &Path) -> Result<CacheRecord> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Loads a cached record if it is up to date for the given source and
/// config hashes.
pub fn load_fresh_record(
    path: &Path,
    source_hash: &str,
    config_hash: &str,
) -> Option<CacheRecord> {
    if !path.is_file() {
        return None;
    }
    let record = read_cache_record(path).ok()?;
    (record.schema == CACHE_SCHEMA
        && record.source_hash == source_hash
        && record.config_hash == config_hash)
        .then_some(record)
}
