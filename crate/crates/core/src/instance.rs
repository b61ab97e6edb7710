use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::camera::{OrthoCamera, Vec2};
use crate::geometry::chamfer::{chamfer_field, ChamferField};
use crate::geometry::mask::SilhouetteMask;

/// One annotated keypoint as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Keypoint {
    pub name: String,
    pub u: f64,
    pub v: f64,
    pub visible: bool,
}

/// Named keypoints of one instance, in a fixed category-wide order, plus the
/// left/right name pairing used for mirroring.
#[derive(Clone, Debug, PartialEq)]
pub struct KeypointSet {
    pub names: Vec<String>,
    pub points: Vec<Vec2>,
    pub visible: Vec<bool>,
    pub mirror_pairs: Vec<(String, String)>,
}

impl KeypointSet {
    pub fn new(keypoints: &[Keypoint], mirror_pairs: Vec<(String, String)>) -> Result<Self> {
        let names: Vec<String> = keypoints.iter().map(|k| k.name.clone()).collect();
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::invalid(format!("duplicate keypoint name {n:?}")));
            }
        }
        for (a, b) in &mirror_pairs {
            if !names.contains(a) || !names.contains(b) {
                return Err(Error::invalid(format!("mirror pair ({a}, {b}) names an unknown keypoint")));
            }
        }
        if keypoints.iter().any(|k| k.visible && !(k.u.is_finite() && k.v.is_finite())) {
            return Err(Error::invalid("visible keypoint with non-finite coordinates"));
        }
        Ok(Self {
            names,
            points: keypoints.iter().map(|k| Vec2::new(k.u, k.v)).collect(),
            visible: keypoints.iter().map(|k| k.visible).collect(),
            mirror_pairs,
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn visible_count(&self) -> usize {
        self.visible.iter().filter(|&&v| v).count()
    }

    pub fn to_records(&self) -> Vec<Keypoint> {
        self.names
            .iter()
            .zip(&self.points)
            .zip(&self.visible)
            .map(|((name, p), &visible)| Keypoint { name: name.clone(), u: p.x, v: p.y, visible })
            .collect()
    }

    /// Index of the mirror partner of each keypoint (itself when unpaired).
    pub fn partner_indices(&self) -> Vec<usize> {
        let pos = |n: &str| self.names.iter().position(|m| m == n).expect("validated pair");
        let mut out: Vec<usize> = (0..self.len()).collect();
        for (a, b) in &self.mirror_pairs {
            let (i, j) = (pos(a), pos(b));
            out[i] = j;
            out[j] = i;
        }
        out
    }

    /// Horizontal flip `u' = width - 1 - u` with left/right labels swapped.
    pub fn mirrored(&self, width: usize) -> Result<Self> {
        if self.mirror_pairs.is_empty() {
            return Err(Error::invalid("mirroring needs a left/right keypoint pairing"));
        }
        let partner = self.partner_indices();
        let w = (width - 1) as f64;
        Ok(Self {
            names: self.names.clone(),
            points: partner.iter().map(|&j| Vec2::new(w - self.points[j].x, self.points[j].y)).collect(),
            visible: partner.iter().map(|&j| self.visible[j]).collect(),
            mirror_pairs: self.mirror_pairs.clone(),
        })
    }
}

/// On-disk keypoint annotation file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeypointFile {
    pub keypoints: Vec<Keypoint>,
    pub mask: String,
    #[serde(default)]
    pub mirror_pairs: Vec<[String; 2]>,
}

impl KeypointFile {
    pub fn to_set(&self) -> Result<KeypointSet> {
        KeypointSet::new(&self.keypoints, self.mirror_pairs.iter().map(|[a, b]| (a.clone(), b.clone())).collect())
    }
}

/// A training or test instance: silhouette, its distance field, a camera and
/// optional keypoints.
#[derive(Clone, Debug)]
pub struct Instance {
    pub id: String,
    pub mask: SilhouetteMask,
    pub camera: OrthoCamera,
    pub keypoints: Option<KeypointSet>,
    pub mirrored: bool,
    chamfer: ChamferField,
}

impl Instance {
    pub fn new(id: impl Into<String>, mask: SilhouetteMask, camera: OrthoCamera, keypoints: Option<KeypointSet>) -> Self {
        let chamfer = chamfer_field(&mask);
        Self { id: id.into(), mask, camera, keypoints, mirrored: false, chamfer }
    }

    pub fn chamfer(&self) -> &ChamferField {
        &self.chamfer
    }

    pub fn width(&self) -> usize {
        self.mask.width()
    }

    pub fn height(&self) -> usize {
        self.mask.height()
    }

    pub fn diagonal(&self) -> f64 {
        (self.width() as f64).hypot(self.height() as f64)
    }

    pub fn with_camera(&self, camera: OrthoCamera) -> Self {
        Self { camera, ..self.clone() }
    }

    /// The horizontally flipped copy: mask, keypoints and camera all mirrored.
    pub fn mirrored(&self) -> Result<Self> {
        let kp = match &self.keypoints {
            Some(k) => Some(k.mirrored(self.width())?),
            None => return Err(Error::invalid(format!("instance {} has no keypoint pairing to mirror", self.id))),
        };
        let mut out = Instance::new(format!("{}_mirror", self.id), self.mask.mirrored(), self.camera.mirrored(self.width()), kp);
        out.mirrored = !self.mirrored;
        Ok(out)
    }
}
