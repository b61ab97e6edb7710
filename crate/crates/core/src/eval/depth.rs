use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::camera::{OrthoCamera, Vec2, Vec3};
use crate::geometry::chamfer::squared_edt;
use crate::geometry::knn::KdTree;
use crate::geometry::mesh::TriMesh;
use crate::geometry::volume::{read_raw, write_raw, VolumeHeader};

/// Camera-frame depth per pixel; background pixels hold `f64::INFINITY`.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
}

impl DepthMap {
    pub fn empty(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("zero-area depth map {width}x{height}")));
        }
        Ok(Self { width, height, depth: vec![f64::INFINITY; width * height] })
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.depth[y * self.width + x]
    }

    pub fn valid(&self) -> Vec<bool> {
        self.depth.iter().map(|d| d.is_finite()).collect()
    }

    pub fn covered(&self) -> usize {
        self.depth.iter().filter(|d| d.is_finite()).count()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let depth = self.depth.iter().map(|&d| if d.is_finite() { f(d) } else { d }).collect();
        Self { width: self.width, height: self.height, depth }
    }

    pub fn write(&self, bin_path: &Path) -> Result<()> {
        let (lo, hi) = self
            .depth
            .iter()
            .filter(|d| d.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &d| (lo.min(d), hi.max(d)));
        let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 0.0) };
        let header = VolumeHeader {
            dims: [self.width, self.height, 1],
            origin: [0.0; 3],
            voxel_size: 1.0,
            min_trunc: lo,
            max_trunc: hi,
        };
        write_raw(bin_path, &header, &self.depth)
    }

    pub fn read(bin_path: &Path) -> Result<Self> {
        let (header, depth) = read_raw(bin_path)?;
        if header.dims[2] != 1 {
            return Err(Error::Format {
                format: "depth map",
                path: bin_path.to_owned(),
                message: format!("expected dims [w, h, 1], got {:?}", header.dims),
            });
        }
        Ok(Self { width: header.dims[0], height: header.dims[1], depth })
    }
}

/// Orthographic z-buffer of a triangle mesh: each pixel whose center is
/// covered by a projected triangle keeps the smallest interpolated depth.
pub fn render_depth(mesh: &TriMesh, cam: &OrthoCamera, width: usize, height: usize) -> Result<DepthMap> {
    let mut out = DepthMap::empty(width, height)?;
    let uv = cam.project(&mesh.vertices);
    let z: Vec<f64> = mesh.vertices.iter().map(|v| cam.depth(v)).collect();
    for f in &mesh.faces {
        let (a, b, c) = (uv[f[0]], uv[f[1]], uv[f[2]]);
        let area = cross(&(b - a), &(c - a));
        if area.abs() < 1e-14 {
            continue;
        }
        let x0 = a.x.min(b.x).min(c.x).ceil().max(0.0);
        let x1 = a.x.max(b.x).max(c.x).floor().min((width - 1) as f64);
        let y0 = a.y.min(b.y).min(c.y).ceil().max(0.0);
        let y1 = a.y.max(b.y).max(c.y).floor().min((height - 1) as f64);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        for y in y0 as usize..=y1 as usize {
            for x in x0 as usize..=x1 as usize {
                let p = Vec2::new(x as f64, y as f64);
                let w0 = cross(&(c - b), &(p - b)) / area;
                let w1 = cross(&(a - c), &(p - c)) / area;
                let w2 = 1.0 - w0 - w1;
                if w0 < -1e-12 || w1 < -1e-12 || w2 < -1e-12 {
                    continue;
                }
                let d = z[f[0]] + w1 * (z[f[1]] - z[f[0]]) + w2 * (z[f[2]] - z[f[0]]);
                let slot = &mut out.depth[y * width + x];
                if d < *slot {
                    *slot = d;
                }
            }
        }
    }
    Ok(out)
}

/// Z-buffer of points splatted as flat disks of `radius` pixels.
pub fn render_point_depth(points: &[Vec3], cam: &OrthoCamera, width: usize, height: usize, radius: f64) -> Result<DepthMap> {
    let mut out = DepthMap::empty(width, height)?;
    for p in points {
        let c = cam.project_point(p);
        let d = cam.depth(p);
        let x0 = (c.x - radius).ceil().max(0.0);
        let x1 = (c.x + radius).floor().min((width - 1) as f64);
        let y0 = (c.y - radius).ceil().max(0.0);
        let y1 = (c.y + radius).floor().min((height - 1) as f64);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        for y in y0 as usize..=y1 as usize {
            for x in x0 as usize..=x1 as usize {
                if (Vec2::new(x as f64, y as f64) - c).norm_squared() <= radius * radius {
                    let slot = &mut out.depth[y * width + x];
                    if d < *slot {
                        *slot = d;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Silhouette of a point cloud: pixels within `radius` of a projected point,
/// then a morphological closing with the same radius to fill the gaps
/// between splats. `radius` defaults to twice the median 3D nearest-neighbour
/// spacing of the points, in pixels.
pub fn point_silhouette(points: &[Vec3], cam: &OrthoCamera, width: usize, height: usize, radius: Option<f64>) -> Vec<bool> {
    let uv = cam.project(points);
    if uv.is_empty() {
        return vec![false; width * height];
    }
    let tree = KdTree::new(uv.iter().map(|p| [p.x, p.y]).collect());
    let r = radius.unwrap_or_else(|| 2.0 * cam.scale() * median_spacing(points)).max(0.5);
    let dilated: Vec<bool> = (0..width * height)
        .map(|i| {
            let q = [(i % width) as f64, (i / width) as f64];
            tree.nearest_one(&q).is_some_and(|n| n.dist2 <= r * r)
        })
        .collect();
    let outside: Vec<bool> = dilated.iter().map(|&d| !d).collect();
    if !outside.iter().any(|&o| o) {
        return dilated;
    }
    let to_bg = squared_edt(width, height, &outside);
    to_bg.iter().zip(&dilated).map(|(&d2, &d)| d && d2 > r * r).collect()
}

/// Median distance from each point to its nearest neighbour.
pub fn median_spacing(points: &[Vec3]) -> f64 {
    if points.len() < 2 {
        return 1.0;
    }
    let tree = crate::geometry::cloud::kdtree3(points);
    let mut d: Vec<f64> = points
        .iter()
        .map(|p| tree.nearest(&[p.x, p.y, p.z], 2).map(|h| h[1].dist2.sqrt()).unwrap_or(0.0))
        .collect();
    d.sort_by(f64::total_cmp);
    d[(d.len() - 1) / 2]
}

fn cross(a: &Vec2, b: &Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;

    fn tri(z: f64, pts: [[f64; 2]; 3]) -> TriMesh {
        TriMesh::new(pts.iter().map(|p| Vec3::new(p[0], p[1], z)).collect(), vec![[0, 1, 2]]).unwrap()
    }

    #[test]
    fn parallel_triangle_reads_its_depth() {
        let cam = OrthoCamera::identity();
        let d = render_depth(&tri(3.0, [[0.0, 0.0], [9.0, 0.0], [0.0, 9.0]]), &cam, 10, 10).unwrap();
        assert_eq!(d.get(2, 2), 3.0);
        assert!(d.depth.iter().all(|&v| v == 3.0 || v.is_infinite()));
        assert_eq!(d.covered(), 55);
    }

    #[test]
    fn z_buffer_keeps_the_nearest() {
        let cam = OrthoCamera::identity();
        let mut m = tri(2.0, [[0.0, 0.0], [9.0, 0.0], [0.0, 9.0]]);
        let near = tri(1.0, [[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]]);
        let off = m.vertices.len();
        m.vertices.extend(near.vertices);
        m.faces.push([off, off + 1, off + 2]);
        let d = render_depth(&m, &cam, 10, 10).unwrap();
        assert_eq!(d.get(1, 1), 1.0);
        assert_eq!(d.get(6, 1), 2.0);
    }

    #[test]
    fn zero_area_output_is_an_error() {
        assert!(render_depth(&TriMesh::default(), &OrthoCamera::identity(), 0, 4).is_err());
    }

    #[test]
    fn depth_map_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.bin");
        let cam = OrthoCamera::new(1.0, Matrix3::identity(), Vec2::new(0.0, 0.0)).unwrap();
        let d = render_depth(&tri(0.5, [[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]]), &cam, 6, 6).unwrap();
        d.write(&p).unwrap();
        assert_eq!(DepthMap::read(&p).unwrap(), d);
    }

    #[test]
    fn dense_points_close_into_a_disk() {
        let cam = OrthoCamera::new(10.0, Matrix3::identity(), Vec2::new(20.0, 20.0)).unwrap();
        let mut pts = Vec::new();
        for i in 0..40 {
            for j in 0..40 {
                let p = Vec3::new(-1.0 + i as f64 / 19.5, -1.0 + j as f64 / 19.5, 0.0);
                if p.norm() <= 1.0 {
                    pts.push(p);
                }
            }
        }
        let sil = point_silhouette(&pts, &cam, 41, 41, None);
        let disk: Vec<bool> = (0..41 * 41)
            .map(|i| ((i % 41) as f64 - 20.0).hypot((i / 41) as f64 - 20.0) <= 10.0)
            .collect();
        assert!(crate::geometry::mask::occupancy_iou(&sil, &disk) > 0.9);
    }
}
