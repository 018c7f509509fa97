//! Binary rasterization of segment sets (no antialiasing).
//!
//! World coordinates map affinely onto the square `[-extent, extent]^2`:
//! column 0 is the left edge, row 0 the top edge (largest `y`). Cells are
//! stored row-major, top row first.

use serde::{Deserialize, Serialize};

use crate::geometry::{Point, Segment};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub width_px: usize,
    pub height_px: usize,
    /// Half-width of the covered square, meters.
    pub extent: f64,
}

impl GridSpec {
    /// 128x128 conditioning images over the quantizer box.
    pub const CONDITIONING: GridSpec = GridSpec { width_px: 128, height_px: 128, extent: 10.0 };

    pub fn new(width_px: usize, height_px: usize, extent: f64) -> Result<Self> {
        let s = Self { width_px, height_px, extent };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width_px == 0 || self.height_px == 0 || !(self.extent > 0.0) {
            return Err(Error::InvalidArgument(format!("invalid grid spec {self:?}")));
        }
        Ok(())
    }

    pub fn cell_width(&self) -> f64 {
        2.0 * self.extent / self.width_px as f64
    }

    pub fn cell_height(&self) -> f64 {
        2.0 * self.extent / self.height_px as f64
    }

    /// Unclamped `(row, col)` of the cell containing `p`.
    pub fn cell_of(&self, p: Point) -> (i64, i64) {
        let col = ((p.x + self.extent) / self.cell_width()).floor() as i64;
        let row = ((self.extent - p.y) / self.cell_height()).floor() as i64;
        (row, col)
    }

    /// World coordinates of the center of cell `(row, col)`.
    pub fn cell_center(&self, row: usize, col: usize) -> Point {
        Point::new(
            -self.extent + (col as f64 + 0.5) * self.cell_width(),
            self.extent - (row as f64 + 0.5) * self.cell_height(),
        )
    }

    pub fn contains_cell(&self, row: i64, col: i64) -> bool {
        row >= 0 && col >= 0 && (row as usize) < self.height_px && (col as usize) < self.width_px
    }

    pub fn len(&self) -> usize {
        self.width_px * self.height_px
    }
}

/// A black-and-white bitmap; `true` marks an occupied cell.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryGrid {
    spec: GridSpec,
    pub cells: Vec<bool>,
}

impl BinaryGrid {
    pub fn new(spec: GridSpec) -> Self {
        Self { spec, cells: vec![false; spec.len()] }
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn width(&self) -> usize {
        self.spec.width_px
    }

    pub fn height(&self) -> usize {
        self.spec.height_px
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.spec.width_px + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: bool) {
        self.cells[row * self.spec.width_px + col] = v;
    }

    pub fn count_ones(&self) -> usize {
        self.cells.iter().filter(|c| **c).count()
    }

    /// True if every set cell of `self` is set in `other`.
    pub fn is_subset_of(&self, other: &BinaryGrid) -> bool {
        self.cells.len() == other.cells.len() && self.cells.iter().zip(&other.cells).all(|(a, b)| !*a || *b)
    }

    /// Cellwise OR.
    pub fn union(&self, other: &BinaryGrid) -> Result<BinaryGrid> {
        if self.spec() != other.spec() {
            return Err(Error::Shape("grid specs differ".into()));
        }
        let mut out = self.clone();
        for (a, b) in out.cells.iter_mut().zip(&other.cells) {
            *a |= *b;
        }
        Ok(out)
    }

    /// Plain-text PBM (`P1`), one image row per line.
    pub fn to_pbm(&self) -> String {
        let mut s = format!("P1\n{} {}\n", self.spec.width_px, self.spec.height_px);
        for row in self.cells.chunks(self.spec.width_px) {
            let line: Vec<&str> = row.iter().map(|c| if *c { "1" } else { "0" }).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }

    /// Parses a plain PBM into a grid with the given extent.
    pub fn from_pbm(text: &str, extent: f64) -> Result<BinaryGrid> {
        let mut it = text.lines().filter(|l| !l.starts_with('#')).flat_map(str::split_whitespace);
        if it.next() != Some("P1") {
            return Err(Error::InvalidArgument("not a P1 bitmap".into()));
        }
        let mut dim = || -> Result<usize> {
            it.next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::InvalidArgument("bad PBM header".into()))
        };
        let (w, h) = (dim()?, dim()?);
        let mut g = BinaryGrid::new(GridSpec::new(w, h, extent)?);
        let bits: Vec<bool> = it.flat_map(|t| t.chars()).map(|c| c == '1').collect();
        if bits.len() != w * h {
            return Err(Error::InvalidArgument(format!("PBM has {} cells, expected {}", bits.len(), w * h)));
        }
        g.cells = bits;
        Ok(g)
    }

    /// Bits packed row-major, top row first, most significant bit first
    /// within each byte; each row is padded to a whole byte.
    pub fn to_packed_bits(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.spec.height_px * self.spec.width_px.div_ceil(8));
        for row in self.cells.chunks(self.spec.width_px) {
            for byte in row.chunks(8) {
                out.push(byte.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | (u8::from(b) << (7 - i))));
            }
        }
        out
    }
}

/// Integer line stepping between two cells (8-connected, endpoints included).
pub fn line_cells(r0: i64, c0: i64, r1: i64, c1: i64) -> Vec<(i64, i64)> {
    let dc = (c1 - c0).abs();
    let dr = -(r1 - r0).abs();
    let sc = if c0 < c1 { 1 } else { -1 };
    let sr = if r0 < r1 { 1 } else { -1 };
    let mut err = dc + dr;
    let (mut r, mut c) = (r0, c0);
    let mut out = Vec::with_capacity((dc - dr + 1) as usize);
    loop {
        out.push((r, c));
        if r == r1 && c == c1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dr {
            err += dr;
            c += sc;
        }
        if e2 <= dc {
            err += dc;
            r += sr;
        }
    }
    out
}

/// Draws segments onto an existing grid; cells outside the grid are skipped.
pub fn draw_segments(grid: &mut BinaryGrid, segs: &[Segment]) {
    let spec = grid.spec();
    for s in segs {
        let (r0, c0) = spec.cell_of(s.a);
        let (r1, c1) = spec.cell_of(s.b);
        for (r, c) in line_cells(r0, c0, r1, c1) {
            if spec.contains_cell(r, c) {
                grid.set(r as usize, c as usize, true);
            }
        }
    }
}

/// Rasterizes the first `n_raster` segments.
pub fn rasterize(segs: &[Segment], spec: GridSpec, n_raster: usize) -> BinaryGrid {
    let mut g = BinaryGrid::new(spec);
    draw_segments(&mut g, &segs[..n_raster.min(segs.len())]);
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec8() -> GridSpec {
        GridSpec::new(8, 8, 4.0).unwrap()
    }

    #[test]
    fn empty_input_is_blank() {
        assert_eq!(rasterize(&[], spec8(), 25).count_ones(), 0);
    }

    #[test]
    fn horizontal_line_fills_one_row() {
        let g = rasterize(&[Segment::from_coords(-4.0, 0.0, 4.0, 0.0)], spec8(), 25);
        assert_eq!(g.count_ones(), 8);
        assert!((0..8).all(|c| g.get(4, c)));
    }

    #[test]
    fn only_first_n_drawn() {
        let segs: Vec<Segment> =
            (0..100).map(|i| Segment::from_coords(-10.0 + 0.2 * i as f64, -10.0, -10.0 + 0.2 * i as f64, 10.0)).collect();
        let spec = GridSpec::CONDITIONING;
        let partial = rasterize(&segs, spec, 25);
        let first: Vec<Segment> = segs[..25].to_vec();
        assert_eq!(partial, rasterize(&first, spec, usize::MAX));
        assert!(partial.is_subset_of(&rasterize(&segs, spec, 100)));
        assert_ne!(partial, rasterize(&segs, spec, 100));
    }

    #[test]
    fn sub_pixel_segment_sets_its_cell() {
        let g = rasterize(&[Segment::from_coords(0.1, 0.1, 0.2, 0.2)], spec8(), 1);
        assert_eq!(g.count_ones(), 1);
        assert!(g.get(3, 4));
    }

    #[test]
    fn pbm_and_packing_fixture() {
        let g = rasterize(&[Segment::from_coords(-4.0, 3.5, 3.9, -3.9)], spec8(), 1);
        // Main diagonal from the top-left to the bottom-right cell.
        assert!((0..8).all(|i| g.get(i, i)));
        assert_eq!(g.count_ones(), 8);
        assert_eq!(g.to_packed_bits(), vec![0x80, 0x40, 0x20, 0x10, 0x08, 0x04, 0x02, 0x01]);
        let pbm = g.to_pbm();
        assert!(pbm.starts_with("P1\n8 8\n1 0 0 0 0 0 0 0\n0 1 0"));
        assert_eq!(BinaryGrid::from_pbm(&pbm, 4.0).unwrap(), g);
    }
}
