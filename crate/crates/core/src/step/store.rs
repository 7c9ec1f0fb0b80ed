use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::Path;

use image::RgbImage;
use sha2::{Digest, Sha256};

/// Content hash of a patch: SHA-256 over width, height (little-endian u32)
/// and the raw RGB bytes, as lowercase hex.
pub fn patch_hash(image: &RgbImage) -> String {
    let mut h = Sha256::new();
    h.update(image.width().to_le_bytes());
    h.update(image.height().to_le_bytes());
    h.update(image.as_raw());
    hex::encode(h.finalize())
}

/// Content-addressed patch images.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PatchStore {
    patches: BTreeMap<String, RgbImage>,
}

impl PatchStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores the patch and returns its hash; identical patches share a slot.
    pub fn insert(&mut self, image: RgbImage) -> String {
        let key = patch_hash(&image);
        self.patches.entry(key.clone()).or_insert(image);
        key
    }

    pub fn get(&self, key: &str) -> Option<&RgbImage> {
        self.patches.get(key)
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.patches.keys()
    }

    /// Moves every patch of `other` into this store.
    pub fn absorb(&mut self, other: PatchStore) {
        for (k, img) in other.patches {
            self.patches.entry(k).or_insert(img);
        }
    }

    /// Keeps only the given keys.
    pub fn retain(&mut self, keep: &std::collections::BTreeSet<String>) {
        self.patches.retain(|k, _| keep.contains(k));
    }

    pub fn png_bytes(&self, key: &str) -> Option<Vec<u8>> {
        self.get(key).map(encode_png)
    }

    /// Decodes a PNG, stores it and returns its hash.
    pub fn insert_png(&mut self, bytes: &[u8]) -> Result<String, String> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
            .map_err(|e| e.to_string())?
            .to_rgb8();
        Ok(self.insert(img))
    }

    /// Writes every patch as `<dir>/<hash>.png`; existing files are kept.
    pub fn write_dir(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for (k, img) in &self.patches {
            let path = dir.join(format!("{k}.png"));
            if !path.exists() {
                std::fs::write(&path, encode_png(img))?;
            }
        }
        Ok(())
    }

    /// Loads the named patches from `<dir>/<hash>.png`, checking each hash.
    pub fn load_keys<'a>(
        &mut self,
        dir: &Path,
        keys: impl IntoIterator<Item = &'a String>,
    ) -> Result<(), String> {
        for k in keys {
            if self.patches.contains_key(k) {
                continue;
            }
            let path = dir.join(format!("{k}.png"));
            let bytes = std::fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            let got = self.insert_png(&bytes)?;
            if &got != k {
                return Err(format!("{} has content hash {got}", path.display()));
            }
        }
        Ok(())
    }
}

fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut buf = Vec::new();
    img.write_to(&mut Cursor::new(&mut buf), image::ImageFormat::Png)
        .expect("PNG encoding into memory cannot fail");
    buf
}
