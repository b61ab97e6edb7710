use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::camera::Vec3;
use crate::geometry::mesh::TriMesh;

/// Parametric solids centered on the origin. Ellipsoid and superquadric take
/// semi-axes; box takes full side lengths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Shape {
    Sphere { radius: f64 },
    Ellipsoid { a: f64, b: f64, c: f64 },
    Box { a: f64, b: f64, c: f64 },
    Superquadric { a: f64, b: f64, c: f64, e1: f64, e2: f64 },
}

pub const MAX_TESSELLATION: u32 = 7;

impl Shape {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        let good = match *self {
            Shape::Sphere { radius } => ok(radius),
            Shape::Ellipsoid { a, b, c } | Shape::Box { a, b, c } => ok(a) && ok(b) && ok(c),
            Shape::Superquadric { a, b, c, e1, e2 } => [a, b, c, e1, e2].into_iter().all(ok),
        };
        if good {
            Ok(())
        } else {
            Err(Error::invalid(format!("shape parameters must be positive and finite: {self:?}")))
        }
    }

    pub fn axes(&self) -> [f64; 3] {
        match *self {
            Shape::Sphere { radius } => [radius; 3],
            Shape::Ellipsoid { a, b, c } | Shape::Box { a, b, c } | Shape::Superquadric { a, b, c, .. } => [a, b, c],
        }
    }

    /// Same family with new size parameters; a sphere becomes an ellipsoid
    /// once its axes differ.
    pub fn with_axes(&self, [a, b, c]: [f64; 3]) -> Shape {
        match *self {
            Shape::Sphere { .. } if a == b && b == c => Shape::Sphere { radius: a },
            Shape::Sphere { .. } | Shape::Ellipsoid { .. } => Shape::Ellipsoid { a, b, c },
            Shape::Box { .. } => Shape::Box { a, b, c },
            Shape::Superquadric { e1, e2, .. } => Shape::Superquadric { a, b, c, e1, e2 },
        }
    }

    /// Largest distance from the center to the surface.
    pub fn radius_bound(&self) -> f64 {
        let [a, b, c] = self.axes();
        match self {
            Shape::Box { .. } => 0.5 * (a * a + b * b + c * c).sqrt(),
            Shape::Superquadric { e1, e2, .. } if *e1 < 1.0 || *e2 < 1.0 => (a * a + b * b + c * c).sqrt(),
            _ => a.max(b).max(c),
        }
    }

    /// The surface point reached from the unit direction `d` by the family's
    /// sphere-to-surface map.
    pub fn surface_point(&self, d: &Vec3) -> Vec3 {
        let d = d.normalize();
        match *self {
            Shape::Sphere { radius } => d * radius,
            Shape::Ellipsoid { a, b, c } => Vec3::new(a * d.x, b * d.y, c * d.z),
            Shape::Box { a, b, c } => {
                let m = d.x.abs().max(d.y.abs()).max(d.z.abs());
                Vec3::new(0.5 * a * d.x / m, 0.5 * b * d.y / m, 0.5 * c * d.z / m)
            }
            Shape::Superquadric { a, b, c, e1, e2 } => {
                let eta = d.z.clamp(-1.0, 1.0).asin();
                let omega = d.y.atan2(d.x);
                let ce = spow(eta.cos(), e1);
                Vec3::new(a * ce * spow(omega.cos(), e2), b * ce * spow(omega.sin(), e2), c * spow(eta.sin(), e1))
            }
        }
    }
}

fn spow(x: f64, e: f64) -> f64 {
    x.signum() * x.abs().powf(e)
}

/// Closed, outward-wound triangulation of the shape. Round families map a
/// subdivided icosahedron (`10 * 4^level + 2` vertices); boxes use a cube
/// grid with `2^level` segments per edge.
pub fn make_shape(shape: &Shape, level: u32) -> Result<TriMesh> {
    shape.validate()?;
    if level > MAX_TESSELLATION {
        return Err(Error::invalid(format!("tessellation level {level} exceeds {MAX_TESSELLATION}")));
    }
    let mesh = match *shape {
        Shape::Box { a, b, c } => cube_grid(1 << level, [a, b, c]),
        _ => {
            let mut m = icosphere(level);
            for v in &mut m.vertices {
                *v = shape.surface_point(v);
            }
            m
        }
    };
    Ok(mesh)
}

pub fn icosphere(level: u32) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|p| Vec3::new(p[0], p[1], p[2]).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<Vec3>| {
            *cache.entry((a.min(b), a.max(b))).or_insert_with(|| {
                vertices.push(((vertices[a] + vertices[b]) * 0.5).normalize());
                vertices.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    TriMesh { vertices, faces }
}

fn cube_grid(n: usize, sides: [f64; 3]) -> TriMesh {
    let mut index: HashMap<[usize; 3], usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut vid = |p: [usize; 3], vertices: &mut Vec<Vec3>| {
        *index.entry(p).or_insert_with(|| {
            let w = |i: usize, ax: usize| (p[i] as f64 / n as f64 - 0.5) * sides[ax];
            vertices.push(Vec3::new(w(0, 0), w(1, 1), w(2, 2)));
            vertices.len() - 1
        })
    };
    for ax in 0..3 {
        let (u, v) = ((ax + 1) % 3, (ax + 2) % 3);
        for side in [0, n] {
            for i in 0..n {
                for j in 0..n {
                    let corner = |di: usize, dj: usize| {
                        let mut p = [0; 3];
                        p[ax] = side;
                        p[u] = i + di;
                        p[v] = j + dj;
                        p
                    };
                    let q = [corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)].map(|p| vid(p, &mut vertices));
                    if side == n {
                        faces.extend([[q[0], q[1], q[2]], [q[0], q[2], q[3]]]);
                    } else {
                        faces.extend([[q[0], q[2], q[1]], [q[0], q[3], q[2]]]);
                    }
                }
            }
        }
    }
    TriMesh { vertices, faces }
}
