//! Exact Euclidean distance transforms over silhouettes.
//!
//! Both passes use the lower-envelope-of-parabolas scan, so every value is
//! the exact distance to the nearest seed pixel center, in O(width * height).

use super::camera::Vec2;
use super::mask::SilhouetteMask;

/// A real-valued image sampled at pixel centers.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl Raster {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), width * height);
        Self { width, height, values }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn sample(&self, p: &Vec2) -> f64 {
        self.sample_with_gradient(p).0
    }

    /// Bilinear interpolation and its analytic gradient. Outside the image the
    /// field is continued by adding the distance to the nearest in-image point.
    pub fn sample_with_gradient(&self, p: &Vec2) -> (f64, Vec2) {
        let (xmax, ymax) = ((self.width - 1) as f64, (self.height - 1) as f64);
        let q = Vec2::new(p.x.clamp(0.0, xmax), p.y.clamp(0.0, ymax));
        let (v, mut g) = self.bilinear(&q);
        let off = p - q;
        let dist = off.norm();
        if dist == 0.0 {
            return (v, g);
        }
        if off.x != 0.0 {
            g.x = off.x / dist;
        }
        if off.y != 0.0 {
            g.y = off.y / dist;
        }
        (v + dist, g)
    }

    fn bilinear(&self, q: &Vec2) -> (f64, Vec2) {
        let x0 = (q.x.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (q.y.floor() as usize).min(self.height.saturating_sub(2));
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = q.x - x0 as f64;
        let fy = q.y - y0 as f64;
        let (v00, v10, v01, v11) = (self.get(x0, y0), self.get(x1, y0), self.get(x0, y1), self.get(x1, y1));
        let top = v00 + fx * (v10 - v00);
        let bottom = v01 + fx * (v11 - v01);
        let value = top + fy * (bottom - top);
        let gx = (1.0 - fy) * (v10 - v00) + fy * (v11 - v01);
        let gy = bottom - top;
        (value, Vec2::new(gx, gy))
    }
}

/// Distance from every pixel to the nearest foreground pixel (zero on the
/// foreground).
#[derive(Clone, Debug, PartialEq)]
pub struct ChamferField(Raster);

impl ChamferField {
    pub fn raster(&self) -> &Raster {
        &self.0
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.0.get(x, y)
    }

    pub fn values(&self) -> &[f64] {
        &self.0.values
    }

    pub fn sample(&self, p: &Vec2) -> f64 {
        self.0.sample(p)
    }

    pub fn sample_with_gradient(&self, p: &Vec2) -> (f64, Vec2) {
        self.0.sample_with_gradient(p)
    }
}

/// Exact Euclidean distance transform of the background of `mask`.
///
/// A valid [`SilhouetteMask`] always has foreground, so this never fails.
pub fn chamfer_field(mask: &SilhouetteMask) -> ChamferField {
    let sq = squared_edt(mask.width(), mask.height(), mask.occupancy());
    ChamferField(Raster::new(mask.width(), mask.height(), sq.into_iter().map(f64::sqrt).collect()))
}

/// Signed distance to the silhouette boundary, in pixels, sampled at pixel
/// centers: positive outside (distance to the nearest foreground pixel),
/// non-positive inside (one less than the distance to the nearest background
/// pixel, so boundary pixels read exactly zero).
///
/// Pixels with no background anywhere in the image read `-(width + height)`.
pub fn signed_boundary_distance(mask: &SilhouetteMask) -> Raster {
    let (w, h) = (mask.width(), mask.height());
    let outside = squared_edt(w, h, mask.occupancy());
    let background: Vec<bool> = mask.occupancy().iter().map(|&o| !o).collect();
    let far = (w + h) as f64;
    let inside = if background.iter().any(|&b| b) { Some(squared_edt(w, h, &background)) } else { None };
    let values = (0..w * h)
        .map(|i| {
            if mask.occupancy()[i] {
                match &inside {
                    Some(d) => -(d[i].sqrt() - 1.0),
                    None => -far,
                }
            } else {
                outside[i].sqrt()
            }
        })
        .collect();
    Raster::new(w, h, values)
}

/// Squared distance from each pixel to the nearest `seed` pixel; `f64::INFINITY`
/// when there are no seeds.
pub fn squared_edt(width: usize, height: usize, seeds: &[bool]) -> Vec<f64> {
    let mut grid: Vec<f64> = seeds.iter().map(|&s| if s { 0.0 } else { f64::INFINITY }).collect();
    let n = width.max(height);
    let mut f = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    for x in 0..width {
        for y in 0..height {
            f[y] = grid[y * width + x];
        }
        envelope_1d(&f[..height], &mut d[..height], &mut v, &mut z);
        for y in 0..height {
            grid[y * width + x] = d[y];
        }
    }
    for y in 0..height {
        let row = &mut grid[y * width..(y + 1) * width];
        f[..width].copy_from_slice(row);
        envelope_1d(&f[..width], &mut d[..width], &mut v, &mut z);
        row.copy_from_slice(&d[..width]);
    }
    grid
}

/// `d[q] = min_p (q - p)^2 + f[p]` over the sites with finite `f`.
fn envelope_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k: isize = -1;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            if k < 0 {
                k = 0;
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                z[1] = f64::INFINITY;
                break;
            }
            let p = v[k as usize];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k as usize] {
                k -= 1;
                continue;
            }
            k += 1;
            v[k as usize] = q;
            z[k as usize] = s;
            z[k as usize + 1] = f64::INFINITY;
            break;
        }
    }
    if k < 0 {
        d.iter_mut().for_each(|x| *x = f64::INFINITY);
        return;
    }
    let mut j = 0usize;
    for (q, out) in d.iter_mut().enumerate() {
        while z[j + 1] < q as f64 {
            j += 1;
        }
        let p = v[j];
        let dq = q as f64 - p as f64;
        *out = dq * dq + f[p];
    }
}
