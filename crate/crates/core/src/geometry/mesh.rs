use std::fmt::Write as _;
use std::path::Path;

use rand::RngExt;

use super::camera::Vec3;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
}

impl TriMesh {
    /// Builds a mesh, rejecting out-of-range or repeated face indices.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let mesh = Self { vertices, faces };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&v| v >= self.vertices.len()) {
                return Err(Error::invalid(format!("face {i} references a missing vertex")));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::invalid(format!("face {i} is degenerate")));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn triangle(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn area(&self) -> f64 {
        (0..self.faces.len()).map(|f| triangle_area(&self.triangle(f))).sum()
    }

    pub fn bbox_diagonal(&self) -> f64 {
        super::cloud::bbox_diagonal(&self.vertices)
    }

    /// `n` points drawn uniformly by area over the surface.
    pub fn sample_surface<R: rand::Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Vec3>> {
        if self.faces.is_empty() {
            return Err(Error::invalid("cannot sample an empty mesh"));
        }
        let mut cdf = Vec::with_capacity(self.faces.len());
        let mut total = 0.0;
        for f in 0..self.faces.len() {
            total += triangle_area(&self.triangle(f));
            cdf.push(total);
        }
        if !(total > 0.0) {
            return Err(Error::invalid("mesh has zero area"));
        }
        Ok((0..n)
            .map(|_| {
                let r = rng.random::<f64>() * total;
                let f = cdf.partition_point(|&c| c < r).min(cdf.len() - 1);
                let [a, b, c] = self.triangle(f);
                let (mut u, mut v) = (rng.random::<f64>(), rng.random::<f64>());
                if u + v > 1.0 {
                    u = 1.0 - u;
                    v = 1.0 - v;
                }
                a + (b - a) * u + (c - a) * v
            })
            .collect())
    }

    /// Vertices and triangular faces only; indices are written 1-based.
    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
        }
        for f in &self.faces {
            let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
        s
    }

    pub fn write_obj(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_obj()).map_err(|e| Error::io(path, e))
    }

    pub fn read_obj(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_obj(&text).map_err(|message| Error::Format { format: "OBJ", path: path.to_owned(), message })
    }

    /// Parses `v` and `f` records; polygons are fan-triangulated and
    /// `v/vt/vn` index forms are accepted. Other records are ignored.
    pub fn parse_obj(text: &str) -> std::result::Result<Self, String> {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            match it.next() {
                Some("v") => {
                    let c: Vec<f64> = it
                        .take(3)
                        .map(|t| t.parse::<f64>().map_err(|_| format!("line {}: bad vertex", ln + 1)))
                        .collect::<std::result::Result<_, _>>()?;
                    if c.len() != 3 {
                        return Err(format!("line {}: vertex needs 3 coordinates", ln + 1));
                    }
                    vertices.push(Vec3::new(c[0], c[1], c[2]));
                }
                Some("f") => {
                    let idx: Vec<usize> = it
                        .map(|t| {
                            let first = t.split('/').next().unwrap_or("");
                            let i: i64 = first.parse().map_err(|_| format!("line {}: bad face index", ln + 1))?;
                            let resolved = if i < 0 { vertices.len() as i64 + i } else { i - 1 };
                            usize::try_from(resolved).map_err(|_| format!("line {}: face index out of range", ln + 1))
                        })
                        .collect::<std::result::Result<_, _>>()?;
                    if idx.len() < 3 {
                        return Err(format!("line {}: face needs 3 vertices", ln + 1));
                    }
                    for k in 1..idx.len() - 1 {
                        faces.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
        let mesh = TriMesh { vertices, faces };
        mesh.validate().map_err(|e| e.to_string())?;
        Ok(mesh)
    }
}

pub fn triangle_area(t: &[Vec3; 3]) -> f64 {
    0.5 * (t[1] - t[0]).cross(&(t[2] - t[0])).norm()
}
