//! Hierarchical latitude/longitude grid.
//!
//! Resolution `r` tiles the globe into `2^r` latitude rows by `2^(r+1)`
//! longitude columns, so every cell is square in degrees and each cell splits
//! into exactly four children at `r + 1`. Cells are half-open
//! (`[lo, hi)`); a point on an interior boundary belongs to the cell whose
//! lower edge it lies on. The north pole folds into the last row and
//! longitude 180 wraps onto column 0.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{BoundingBox, GeoPoint};

pub const MAX_RESOLUTION: u8 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellId {
    pub resolution: u8,
    /// Latitude row, 0 at the south pole.
    pub row: u32,
    /// Longitude column, 0 at the antimeridian.
    pub col: u32,
}

impl CellId {
    pub fn rows(resolution: u8) -> u32 {
        1u32 << resolution
    }

    pub fn cols(resolution: u8) -> u32 {
        1u32 << (resolution + 1)
    }

    /// Cell edge length in degrees.
    pub fn size_deg(resolution: u8) -> f64 {
        180.0 / Self::rows(resolution) as f64
    }

    pub fn new(resolution: u8, row: u32, col: u32) -> Option<CellId> {
        (resolution <= MAX_RESOLUTION && row < Self::rows(resolution) && col < Self::cols(resolution))
            .then_some(CellId { resolution, row, col })
    }

    pub fn parent(&self) -> Option<CellId> {
        (self.resolution > 0).then(|| CellId { resolution: self.resolution - 1, row: self.row / 2, col: self.col / 2 })
    }

    pub fn children(&self) -> Option<[CellId; 4]> {
        if self.resolution >= MAX_RESOLUTION {
            return None;
        }
        let r = self.resolution + 1;
        let (row, col) = (self.row * 2, self.col * 2);
        Some([
            CellId { resolution: r, row, col },
            CellId { resolution: r, row, col: col + 1 },
            CellId { resolution: r, row: row + 1, col },
            CellId { resolution: r, row: row + 1, col: col + 1 },
        ])
    }

    /// (min_lat, min_lon, max_lat, max_lon) of the cell.
    pub fn bounds(&self) -> BoundingBox {
        let size = Self::size_deg(self.resolution);
        let min_lat = -90.0 + self.row as f64 * size;
        let min_lon = -180.0 + self.col as f64 * size;
        BoundingBox { min_lat, min_lon, max_lat: min_lat + size, max_lon: min_lon + size }
    }

    pub fn center(&self) -> GeoPoint {
        let b = self.bounds();
        GeoPoint::new((b.min_lat + b.max_lat) / 2.0, (b.min_lon + b.max_lon) / 2.0).expect("cell centers are valid points")
    }

    /// Moore neighbourhood: longitude wraps, latitude is clipped at the poles.
    pub fn neighbors(&self) -> Vec<CellId> {
        let rows = Self::rows(self.resolution) as i64;
        let cols = Self::cols(self.resolution) as i64;
        let mut out = Vec::with_capacity(8);
        for dr in -1i64..=1 {
            let row = self.row as i64 + dr;
            if row < 0 || row >= rows {
                continue;
            }
            for dc in -1i64..=1 {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let col = (self.col as i64 + dc).rem_euclid(cols);
                let cell = CellId { resolution: self.resolution, row: row as u32, col: col as u32 };
                if cell != *self && !out.contains(&cell) {
                    out.push(cell);
                }
            }
        }
        out
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.resolution, self.row, self.col)
    }
}

/// Cell containing `point` at `resolution` (clamped to [`MAX_RESOLUTION`]).
pub fn cell_of(point: GeoPoint, resolution: u8) -> CellId {
    let resolution = resolution.min(MAX_RESOLUTION);
    let rows = CellId::rows(resolution);
    let cols = CellId::cols(resolution);
    let row = (((point.lat() + 90.0) / 180.0) * rows as f64).floor() as i64;
    let col = (((point.lon() + 180.0) / 360.0) * cols as f64).floor() as i64;
    CellId {
        resolution,
        row: row.clamp(0, rows as i64 - 1) as u32,
        col: col.rem_euclid(cols as i64) as u32,
    }
}

/// All cells at `resolution` intersecting the box.
pub fn cells_covering(bbox: &BoundingBox, resolution: u8) -> Vec<CellId> {
    let lo = cell_of(GeoPoint::new(bbox.min_lat, bbox.min_lon).expect("valid bbox corner"), resolution);
    let hi = cell_of(GeoPoint::new(bbox.max_lat, bbox.max_lon).expect("valid bbox corner"), resolution);
    // max_lon == 180 wraps to column 0; treat it as the last column here
    let hi_col = if bbox.max_lon >= 180.0 { CellId::cols(resolution) - 1 } else { hi.col };
    let mut out = Vec::new();
    for row in lo.row..=hi.row {
        for col in lo.col..=hi_col.max(lo.col) {
            out.push(CellId { resolution, row, col });
        }
    }
    out
}
