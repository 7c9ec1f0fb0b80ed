use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::spec::ShapeKind;
use super::SynthError;
use crate::mask::{BinaryMask, Rle};
use crate::seg::{MaskSet, ObjectMask};

/// Instance id of points and pixels that belong to no object (ground, sky).
pub const NO_INSTANCE: u16 = 0;
pub use crate::lidarseg::UNLABELED;

pub const GT_DIR: &str = "gt";
const OBJECTS_FILE: &str = "objects.json";
const LABEL_MAP_FILE: &str = "label_map.json";
const FRAME_FILE: &str = "frame.json";
const INSTANCES_FILE: &str = "instances.bin";
const CLASSES_FILE: &str = "classes.bin";
const SILHOUETTES_FILE: &str = "silhouettes.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectTruth {
    pub instance_id: u16,
    pub name: String,
    pub class_name: String,
    pub class_id: u16,
    pub shape: ShapeKind,
    pub size: [f64; 3],
}

/// One object at one frame, world frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectFrameTruth {
    pub instance_id: u16,
    /// Centre of the generating shape.
    pub center: [f64; 3],
    /// Mean of the sampled points.
    pub sampled_centroid: [f64; 3],
    pub sampled_min: [f64; 3],
    pub sampled_max: [f64; 3],
    pub point_count: usize,
}

/// Per-camera rendering truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewTruth {
    pub width: u32,
    pub height: u32,
    /// Front-most instance at each pixel centre, row-major.
    pub ids: Vec<u16>,
    /// Visible pixels of each instance, sorted linear indices.
    pub silhouettes: BTreeMap<u16, Vec<u32>>,
}

impl ViewTruth {
    pub fn id_at(&self, x: u32, y: u32) -> u16 {
        self.ids[(y * self.width + x) as usize]
    }

    pub fn silhouette(&self, instance_id: u16) -> BinaryMask {
        match self.silhouettes.get(&instance_id) {
            Some(px) => BinaryMask::from_pixels(self.width, self.height, px.iter().copied()),
            None => BinaryMask::empty(self.width, self.height),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameTruth {
    pub key: String,
    pub timestamp: f64,
    /// Per point, aligned with the frame's cloud.
    pub instance_ids: Vec<u16>,
    pub class_ids: Vec<u16>,
    pub objects: Vec<ObjectFrameTruth>,
    pub views: BTreeMap<String, ViewTruth>,
}

impl FrameTruth {
    pub fn object(&self, instance_id: u16) -> Option<&ObjectFrameTruth> {
        self.objects.iter().find(|o| o.instance_id == instance_id)
    }

    /// Point indices of one instance.
    pub fn points_of(&self, instance_id: u16) -> Vec<usize> {
        self.instance_ids
            .iter()
            .enumerate()
            .filter(|(_, &id)| id == instance_id)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Time-ordered ground-truth trajectory of one object.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthTrack {
    pub instance_id: u16,
    pub class_name: String,
    /// `(frame index, timestamp, world centre)`.
    pub samples: Vec<(usize, f64, [f64; 3])>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    pub objects: Vec<ObjectTruth>,
    pub label_map: BTreeMap<u16, String>,
    pub frames: Vec<FrameTruth>,
}

impl GroundTruth {
    pub fn frame(&self, key: &str) -> Option<&FrameTruth> {
        self.frames.iter().find(|f| f.key == key)
    }

    /// Ground-truth silhouettes of every instance visible in one camera, as a
    /// mask set whose `mask_id`s are instance ids.
    pub fn oracle_masks(&self, frame_index: usize, camera_id: &str) -> Option<MaskSet> {
        let f = self.frames.get(frame_index)?;
        let v = f.views.get(camera_id)?;
        let masks = v
            .silhouettes
            .keys()
            .map(|&id| ObjectMask {
                mask_id: id as u32,
                mask: v.silhouette(id),
                prompt_points: vec![],
                score: 1.0,
            })
            .collect();
        Some(MaskSet {
            camera_id: camera_id.to_string(),
            frame_key: f.key.clone(),
            timestamp: f.timestamp,
            width: v.width,
            height: v.height,
            masks,
        })
    }

    /// Trajectories of every object over the frames where it has points.
    pub fn oracle_tracks(&self) -> Vec<TruthTrack> {
        self.objects
            .iter()
            .map(|o| TruthTrack {
                instance_id: o.instance_id,
                class_name: o.class_name.clone(),
                samples: self
                    .frames
                    .iter()
                    .enumerate()
                    .filter_map(|(i, f)| {
                        f.object(o.instance_id)
                            .filter(|t| t.point_count > 0)
                            .map(|t| (i, f.timestamp, t.center))
                    })
                    .collect(),
            })
            .collect()
    }

    pub fn write(&self, dir: &Path) -> Result<(), SynthError> {
        let root = dir.join(GT_DIR);
        write_json(&root.join(OBJECTS_FILE), &self.objects)?;
        write_json(&root.join(LABEL_MAP_FILE), &self.label_map)?;
        for f in &self.frames {
            let fd = root.join(&f.key);
            write_json(
                &fd.join(FRAME_FILE),
                &FrameFile {
                    timestamp: f.timestamp,
                    objects: f.objects.clone(),
                },
            )?;
            write_bytes(&fd.join(INSTANCES_FILE), &encode_u16(&f.instance_ids))?;
            write_bytes(&fd.join(CLASSES_FILE), &encode_u16(&f.class_ids))?;
            let mut sil = BTreeMap::new();
            for (cam, v) in &f.views {
                write_bytes(&fd.join(ids_file(cam)), &encode_u16(&v.ids))?;
                let per: BTreeMap<String, Rle> = v
                    .silhouettes
                    .keys()
                    .map(|&id| (id.to_string(), v.silhouette(id).to_rle()))
                    .collect();
                sil.insert(
                    cam.clone(),
                    SilhouetteFile {
                        width: v.width,
                        height: v.height,
                        masks: per,
                    },
                );
            }
            write_json(&fd.join(SILHOUETTES_FILE), &sil)?;
        }
        Ok(())
    }

    /// Reads the `gt/` subtree written by [`GroundTruth::write`] for the
    /// given frame keys.
    pub fn read(dir: &Path, frame_keys: &[String]) -> Result<Self, SynthError> {
        let root = dir.join(GT_DIR);
        let objects: Vec<ObjectTruth> = read_json(&root.join(OBJECTS_FILE))?;
        let label_map: BTreeMap<u16, String> = read_json(&root.join(LABEL_MAP_FILE))?;
        let mut frames = Vec::with_capacity(frame_keys.len());
        for key in frame_keys {
            let fd = root.join(key);
            let meta: FrameFile = read_json(&fd.join(FRAME_FILE))?;
            let sil: BTreeMap<String, SilhouetteFile> = read_json(&fd.join(SILHOUETTES_FILE))?;
            let mut views = BTreeMap::new();
            for (cam, s) in sil {
                let ids = decode_u16(&read_bytes(&fd.join(ids_file(&cam)))?)
                    .map_err(|e| SynthError::Io(format!("{cam} ids: {e}")))?;
                if ids.len() != (s.width * s.height) as usize {
                    return Err(SynthError::Io(format!(
                        "{cam} id buffer has {} pixels",
                        ids.len()
                    )));
                }
                let mut silhouettes = BTreeMap::new();
                for (id, rle) in s.masks {
                    let id: u16 = id
                        .parse()
                        .map_err(|_| SynthError::Io(format!("bad instance id {id:?}")))?;
                    let m = rle.decode().map_err(|e| SynthError::Io(e.to_string()))?;
                    silhouettes.insert(id, m.pixels());
                }
                views.insert(
                    cam,
                    ViewTruth {
                        width: s.width,
                        height: s.height,
                        ids,
                        silhouettes,
                    },
                );
            }
            let load = |name: &str| -> Result<Vec<u16>, SynthError> {
                decode_u16(&read_bytes(&fd.join(name))?).map_err(SynthError::Io)
            };
            frames.push(FrameTruth {
                key: key.clone(),
                timestamp: meta.timestamp,
                instance_ids: load(INSTANCES_FILE)?,
                class_ids: load(CLASSES_FILE)?,
                objects: meta.objects,
                views,
            });
        }
        Ok(Self {
            objects,
            label_map,
            frames,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct FrameFile {
    timestamp: f64,
    objects: Vec<ObjectFrameTruth>,
}

#[derive(Serialize, Deserialize)]
struct SilhouetteFile {
    width: u32,
    height: u32,
    masks: BTreeMap<String, Rle>,
}

fn ids_file(camera_id: &str) -> String {
    format!("ids_{camera_id}.bin")
}

pub fn encode_u16(values: &[u16]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_u16(bytes: &[u8]) -> Result<Vec<u16>, String> {
    if !bytes.len().is_multiple_of(2) {
        return Err(format!(
            "{} bytes is not a whole number of u16 values",
            bytes.len()
        ));
    }
    Ok(bytes
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect())
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), SynthError> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p).map_err(|e| SynthError::Io(format!("{}: {e}", p.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| SynthError::Io(format!("{}: {e}", path.display())))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, SynthError> {
    std::fs::read(path).map_err(|e| SynthError::Io(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), SynthError> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| SynthError::Io(e.to_string()))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, SynthError> {
    serde_json::from_slice(&read_bytes(path)?)
        .map_err(|e| SynthError::Io(format!("{}: {e}", path.display())))
}
