use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::camera::Vec2;
use crate::error::{Error, Result};

/// Binary silhouette with its precomputed boundary.
///
/// Boundary pixels are the foreground pixels with at least one 4-neighbour in
/// the background; pixels outside the image count as background.
#[derive(Clone, Debug, PartialEq)]
pub struct SilhouetteMask {
    width: usize,
    height: usize,
    occupancy: Vec<bool>,
    boundary: Vec<Vec2>,
}

impl SilhouetteMask {
    pub fn new(width: usize, height: usize, occupancy: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("mask dimensions must be positive"));
        }
        if occupancy.len() != width * height {
            return Err(Error::invalid(format!(
                "mask has {} pixels, expected {}x{}",
                occupancy.len(),
                width,
                height
            )));
        }
        if !occupancy.iter().any(|&o| o) {
            return Err(Error::EmptySilhouette);
        }
        let boundary = boundary_of(width, height, &occupancy);
        Ok(Self { width, height, occupancy, boundary })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Result<Self> {
        let occupancy = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Self::new(width, height, occupancy)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn occupancy(&self) -> &[bool] {
        &self.occupancy
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.occupancy[y * self.width + x]
    }

    /// Boundary pixel centers in row-major order.
    pub fn boundary(&self) -> &[Vec2] {
        &self.boundary
    }

    pub fn area(&self) -> usize {
        self.occupancy.iter().filter(|&&o| o).count()
    }

    /// Horizontal flip, `u' = width - 1 - u`.
    pub fn mirrored(&self) -> Self {
        let (w, h) = (self.width, self.height);
        let occupancy = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| self.get(w - 1 - x, y)).collect();
        Self::new(w, h, occupancy).expect("mirror of a valid mask is valid")
    }

    /// Reads a binary (P5) PGM; any nonzero sample is foreground.
    pub fn read_pgm(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(file);
        let bad = |m: &str| Error::Format { format: "PGM", path: path.to_owned(), message: m.to_owned() };
        let mut fields = Vec::new();
        while fields.len() < 4 {
            let mut line = String::new();
            if reader.read_line(&mut line).map_err(|e| Error::io(path, e))? == 0 {
                return Err(bad("truncated header"));
            }
            let content = line.split('#').next().unwrap_or("");
            fields.extend(content.split_whitespace().map(str::to_owned));
        }
        if fields[0] != "P5" {
            return Err(bad("only binary P5 graymaps are supported"));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
        let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
        if maxval == 0 || maxval > 255 {
            return Err(bad("maxval must be in 1..=255"));
        }
        let mut data = vec![0u8; w * h];
        reader.read_exact(&mut data).map_err(|_| bad("truncated pixel data"))?;
        Self::new(w, h, data.iter().map(|&b| b != 0).collect())
    }

    /// Writes a P5 PGM with 255 for foreground and 0 for background.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut bytes = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        bytes.extend(self.occupancy.iter().map(|&o| if o { 255u8 } else { 0 }));
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }
}

fn boundary_of(w: usize, h: usize, occ: &[bool]) -> Vec<Vec2> {
    let at = |x: isize, y: isize| -> bool {
        x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && occ[y as usize * w + x as usize]
    };
    let mut out = Vec::new();
    for y in 0..h as isize {
        for x in 0..w as isize {
            if at(x, y) && (!at(x - 1, y) || !at(x + 1, y) || !at(x, y - 1) || !at(x, y + 1)) {
                out.push(Vec2::new(x as f64, y as f64));
            }
        }
    }
    out
}

/// Intersection over union of two same-sized masks given as raw occupancy.
/// Two empty masks have IoU 1.
pub fn occupancy_iou(a: &[bool], b: &[bool]) -> f64 {
    assert_eq!(a.len(), b.len(), "iou of differently sized rasters");
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_is_fg_next_to_bg() {
        let m = SilhouetteMask::from_fn(5, 5, |x, y| (1..4).contains(&x) && (1..4).contains(&y)).unwrap();
        assert_eq!(m.boundary().len(), 8);
        assert!(!m.boundary().contains(&Vec2::new(2.0, 2.0)));
    }

    #[test]
    fn image_edge_counts_as_background() {
        let m = SilhouetteMask::from_fn(3, 3, |_, _| true).unwrap();
        assert_eq!(m.boundary().len(), 8);
    }

    #[test]
    fn empty_mask_is_rejected() {
        assert!(matches!(SilhouetteMask::from_fn(4, 4, |_, _| false), Err(Error::EmptySilhouette)));
    }

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        let m = SilhouetteMask::from_fn(7, 4, |x, y| x > y).unwrap();
        m.write_pgm(&p).unwrap();
        assert_eq!(SilhouetteMask::read_pgm(&p).unwrap(), m);
    }

    #[test]
    fn mirror_is_an_involution() {
        let m = SilhouetteMask::from_fn(9, 5, |x, y| x < 3 + y).unwrap();
        assert!(!m.mirrored().get(0, 0));
        assert_eq!(m.mirrored().mirrored(), m);
    }

    #[test]
    fn iou_cases() {
        let a = [true, true, false, false];
        let b = [false, true, true, false];
        assert!((occupancy_iou(&a, &b) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(occupancy_iou(&a, &a), 1.0);
        assert_eq!(occupancy_iou(&[true, false], &[false, true]), 0.0);
        assert_eq!(occupancy_iou(&[false; 3], &[false; 3]), 1.0);
    }
}
