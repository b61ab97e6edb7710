//! Marching-cubes isosurface extraction.

use super::camera::Vec3;
use super::mc_table::TRIANGLES;
use super::mesh::TriMesh;
use super::volume::TsdfVolume;

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

// Each cube edge as (lower corner, axis).
const EDGES: [(usize, usize); 12] = [
    (0, 0),
    (1, 1),
    (3, 0),
    (0, 1),
    (4, 0),
    (5, 1),
    (7, 0),
    (4, 1),
    (0, 2),
    (1, 2),
    (2, 2),
    (3, 2),
];

/// Triangulates the `level` set of the volume. Vertices shared by adjacent
/// cells are emitted once; faces wind so their normals point toward
/// increasing values. A level outside the value range yields an empty mesh.
pub fn extract_isosurface(volume: &TsdfVolume, level: f64) -> TriMesh {
    let (lo, hi) = volume.value_range();
    if !(level >= lo && level <= hi) || lo == hi {
        return TriMesh::default();
    }
    let grid = volume.grid();
    let [nx, ny, nz] = grid.dims;
    let values = volume.values();
    let mut edge_vertex = vec![u32::MAX; 3 * grid.len()];
    let mut vertices = Vec::new();
    let mut faces = Vec::new();

    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let mut corner = [0.0; 8];
                let mut case = 0usize;
                for (c, off) in CORNERS.iter().enumerate() {
                    corner[c] = values[grid.index(i + off[0], j + off[1], k + off[2])];
                    if corner[c] < level {
                        case |= 1 << c;
                    }
                }
                let row = &TRIANGLES[case];
                let mut t = 0;
                while t < 16 && row[t] >= 0 {
                    let mut tri = [0usize; 3];
                    for (slot, &e) in tri.iter_mut().zip(&row[t..t + 3]) {
                        let (c, axis) = EDGES[e as usize];
                        let base = [i + CORNERS[c][0], j + CORNERS[c][1], k + CORNERS[c][2]];
                        let key = 3 * grid.index(base[0], base[1], base[2]) + axis;
                        if edge_vertex[key] == u32::MAX {
                            let mut other = base;
                            other[axis] += 1;
                            let va = values[grid.index(base[0], base[1], base[2])];
                            let vb = values[grid.index(other[0], other[1], other[2])];
                            let s = if va == vb { 0.5 } else { ((level - va) / (vb - va)).clamp(0.0, 1.0) };
                            let mut f = [base[0] as f64, base[1] as f64, base[2] as f64];
                            f[axis] += s;
                            edge_vertex[key] = vertices.len() as u32;
                            vertices.push(grid.point(f[0], f[1], f[2]));
                        }
                        *slot = edge_vertex[key] as usize;
                    }
                    faces.push([tri[0], tri[2], tri[1]]);
                    t += 3;
                }
            }
        }
    }
    TriMesh { vertices, faces }
}

/// Outward-facing (unnormalized) normal of face `f`.
pub fn face_normal(mesh: &TriMesh, f: usize) -> Vec3 {
    let [a, b, c] = mesh.triangle(f);
    (b - a).cross(&(c - a))
}
