//! JSON helpers and the keypoint-sequence file format.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keypoints::{KeypointSet, Vec2, Vec3};

/// Serde adapter storing a `Vector3<f64>` as `[x, y, z]`.
pub mod vec3_array {
    use super::Vec3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vec3, s: S) -> Result<S::Ok, S::Error> {
        [v.x, v.y, v.z].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec3, D::Error> {
        Ok(Vec3::from(<[f64; 3]>::deserialize(d)?))
    }
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Pretty-printed JSON with a trailing newline. Output is byte-stable for
/// equal values.
pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Per-frame keypoint observations. With `orthographic = true` every point is
/// `[x, y]` (depth dropped); otherwise `[x, y, z]`.
#[derive(Clone, Debug, PartialEq)]
pub enum KeypointSequence {
    Full(Vec<KeypointSet>),
    Projected(Vec<Vec<Vec2>>),
}

#[derive(Serialize, Deserialize)]
struct SequenceDocument {
    orthographic: bool,
    frames: Vec<Vec<Vec<f64>>>,
}

impl KeypointSequence {
    pub fn len(&self) -> usize {
        match self {
            KeypointSequence::Full(f) => f.len(),
            KeypointSequence::Projected(f) => f.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn keypoint_count(&self, frame: usize) -> usize {
        match self {
            KeypointSequence::Full(f) => f[frame].len(),
            KeypointSequence::Projected(f) => f[frame].len(),
        }
    }

    pub fn full_frames(&self) -> Option<&[KeypointSet]> {
        match self {
            KeypointSequence::Full(f) => Some(f),
            KeypointSequence::Projected(_) => None,
        }
    }
}

impl Serialize for KeypointSequence {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let doc = match self {
            KeypointSequence::Full(frames) => SequenceDocument {
                orthographic: false,
                frames: frames
                    .iter()
                    .map(|f| f.points.iter().map(|p| vec![p.x, p.y, p.z]).collect())
                    .collect(),
            },
            KeypointSequence::Projected(frames) => SequenceDocument {
                orthographic: true,
                frames: frames
                    .iter()
                    .map(|f| f.iter().map(|p| vec![p.x, p.y]).collect())
                    .collect(),
            },
        };
        doc.serialize(s)
    }
}

impl<'de> Deserialize<'de> for KeypointSequence {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let doc = SequenceDocument::deserialize(d)?;
        let dim = if doc.orthographic { 2 } else { 3 };
        for (i, frame) in doc.frames.iter().enumerate() {
            if let Some(bad) = frame.iter().find(|p| p.len() != dim) {
                return Err(D::Error::custom(format!(
                    "frame {i}: expected {dim} coordinates per point, got {}",
                    bad.len()
                )));
            }
        }
        Ok(if doc.orthographic {
            KeypointSequence::Projected(
                doc.frames
                    .into_iter()
                    .map(|f| f.into_iter().map(|p| Vec2::new(p[0], p[1])).collect())
                    .collect(),
            )
        } else {
            KeypointSequence::Full(
                doc.frames
                    .into_iter()
                    .map(|f| KeypointSet::new(f.into_iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect()))
                    .collect(),
            )
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequence_format() {
        let seq = KeypointSequence::Full(vec![KeypointSet::new(vec![Vec3::new(1.0, 2.0, 3.0)])]);
        let s = serde_json::to_string(&seq).unwrap();
        assert_eq!(s, r#"{"orthographic":false,"frames":[[[1.0,2.0,3.0]]]}"#);
        assert_eq!(serde_json::from_str::<KeypointSequence>(&s).unwrap(), seq);

        let ortho: KeypointSequence = serde_json::from_str(r#"{"orthographic":true,"frames":[[[1,2],[3,4]]]}"#).unwrap();
        assert_eq!(ortho.keypoint_count(0), 2);
        assert!(serde_json::from_str::<KeypointSequence>(r#"{"orthographic":true,"frames":[[[1,2,3]]]}"#).is_err());
    }
}
