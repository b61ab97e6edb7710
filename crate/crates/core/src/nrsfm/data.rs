use crate::error::{Error, Result};
use crate::geometry::camera::Vec2;
use crate::geometry::chamfer::ChamferField;
use crate::instance::Instance;

/// Fewest visible keypoints an instance needs to take part.
pub const MIN_VISIBLE: usize = 4;

/// Originals followed by their horizontally mirrored copies.
pub fn mirror_augment(instances: &[Instance]) -> Result<Vec<Instance>> {
    let mirrored = instances.iter().map(Instance::mirrored).collect::<Result<Vec<_>>>()?;
    Ok(instances.iter().cloned().chain(mirrored).collect())
}

/// Keypoint tracks in the layout the EM iteration works on.
#[derive(Clone, Debug)]
pub struct NrsfmData {
    pub ids: Vec<String>,
    pub mirrored: Vec<bool>,
    pub names: Vec<String>,
    pub points: Vec<Vec<Vec2>>,
    pub visible: Vec<Vec<bool>>,
    pub chamfer: Vec<ChamferField>,
    /// Instances sharing one camera and one coefficient vector: an original
    /// and, when present, its mirrored copy (second).
    pub groups: Vec<Vec<usize>>,
    /// Lower bound on the noise variance.
    pub variance_floor: f64,
}

impl NrsfmData {
    /// Instances with fewer than [`MIN_VISIBLE`] visible keypoints are left
    /// out; their ids come back in the second slot.
    pub fn from_instances(instances: &[Instance]) -> Result<(Self, Vec<String>)> {
        let mut kept: Vec<&Instance> = Vec::new();
        let mut dropped = Vec::new();
        let mut names: Option<&Vec<String>> = None;
        for inst in instances {
            let kp = inst.keypoints.as_ref().ok_or_else(|| Error::invalid(format!("instance {} has no keypoints", inst.id)))?;
            match names {
                None => names = Some(&kp.names),
                Some(n) if *n != kp.names => {
                    return Err(Error::invalid(format!("instance {} lists keypoints in a different order or set", inst.id)))
                }
                _ => {}
            }
            if kp.visible_count() < MIN_VISIBLE {
                log::warn!("instance {} has {} visible keypoints, excluded", inst.id, kp.visible_count());
                dropped.push(inst.id.clone());
            } else {
                kept.push(inst);
            }
        }
        if kept.is_empty() {
            return Err(Error::invalid("no instance has enough visible keypoints"));
        }
        let points: Vec<Vec<Vec2>> = kept.iter().map(|i| i.keypoints.as_ref().unwrap().points.clone()).collect();
        let visible: Vec<Vec<bool>> = kept.iter().map(|i| i.keypoints.as_ref().unwrap().visible.clone()).collect();
        let ids: Vec<String> = kept.iter().map(|i| i.id.clone()).collect();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut paired = vec![false; kept.len()];
        for (i, inst) in kept.iter().enumerate() {
            if inst.mirrored {
                continue;
            }
            let twin = format!("{}_mirror", inst.id);
            let mut g = vec![i];
            if let Some(j) = kept.iter().position(|o| o.mirrored && o.id == twin) {
                g.push(j);
                paired[j] = true;
            }
            groups.push(g);
        }
        for (i, inst) in kept.iter().enumerate() {
            if inst.mirrored && !paired[i] {
                groups.push(vec![i]);
            }
        }
        let data = Self {
            groups,
            ids,
            mirrored: kept.iter().map(|i| i.mirrored).collect(),
            names: names.cloned().unwrap_or_default(),
            variance_floor: 1e-12 * spread(&points, &visible).max(1.0),
            points,
            visible,
            chamfer: kept.iter().map(|i| i.chamfer().clone()).collect(),
        };
        Ok((data, dropped))
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn keypoints(&self) -> usize {
        self.names.len()
    }

    /// Group index of every instance.
    pub fn group_of(&self) -> Vec<usize> {
        let mut out = vec![0; self.len()];
        for (g, members) in self.groups.iter().enumerate() {
            for &i in members {
                out[i] = g;
            }
        }
        out
    }

    pub fn visible_total(&self) -> usize {
        self.visible.iter().flatten().filter(|&&v| v).count()
    }
}

fn spread(points: &[Vec<Vec2>], visible: &[Vec<bool>]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (p, v) in points.iter().zip(visible) {
        let vis: Vec<&Vec2> = p.iter().zip(v).filter(|(_, &v)| v).map(|(p, _)| p).collect();
        let c = vis.iter().copied().sum::<Vec2>() / vis.len().max(1) as f64;
        total += vis.iter().map(|q| (*q - c).norm_squared()).sum::<f64>();
        count += vis.len();
    }
    total / count.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::camera::OrthoCamera;
    use crate::geometry::mask::SilhouetteMask;
    use crate::instance::{Keypoint, KeypointSet};

    fn instance(id: &str, pts: &[(f64, f64)]) -> Instance {
        let names = ["l", "r", "a", "b"];
        let kps: Vec<Keypoint> =
            pts.iter().zip(names).map(|(&(u, v), n)| Keypoint { name: n.into(), u, v, visible: true }).collect();
        let set = KeypointSet::new(&kps, vec![("l".into(), "r".into())]).unwrap();
        let mask = SilhouetteMask::from_fn(20, 10, |x, y| (x as i64 - 9).abs() + (y as i64 - 5).abs() < 4).unwrap();
        Instance::new(id, mask, OrthoCamera::identity(), Some(set))
    }

    #[test]
    fn mirror_doubles_and_fixes_symmetric_instances() {
        let sym = instance("s", &[(5.0, 2.0), (14.0, 2.0), (9.5, 7.0), (9.5, 1.0)]);
        let out = mirror_augment(&[sym.clone(), instance("t", &[(1.0, 1.0), (2.0, 2.0), (3.0, 3.0), (4.0, 4.0)])]).unwrap();
        assert_eq!(out.len(), 4);
        assert_eq!(out[2].id, "s_mirror");
        assert_eq!(out[2].keypoints, sym.keypoints);
        assert!(out[2].mirrored);
        let (data, _) = NrsfmData::from_instances(&out).unwrap();
        assert_eq!(data.groups, vec![vec![0, 2], vec![1, 3]]);
    }

    #[test]
    fn missing_pairing_is_an_error() {
        let mut i = instance("x", &[(1.0, 1.0), (2.0, 2.0), (3.0, 3.0), (4.0, 4.0)]);
        i.keypoints.as_mut().unwrap().mirror_pairs.clear();
        assert!(mirror_augment(&[i]).is_err());
    }

    #[test]
    fn sparse_instances_are_dropped() {
        let mut i = instance("x", &[(1.0, 1.0), (2.0, 2.0), (3.0, 3.0), (4.0, 4.0)]);
        let ok = instance("y", &[(1.0, 1.0), (2.0, 2.0), (3.0, 3.0), (4.0, 5.0)]);
        i.keypoints.as_mut().unwrap().visible[0] = false;
        let (data, dropped) = NrsfmData::from_instances(&[i, ok]).unwrap();
        assert_eq!(dropped, vec!["x".to_string()]);
        assert_eq!(data.ids, vec!["y".to_string()]);
    }
}
