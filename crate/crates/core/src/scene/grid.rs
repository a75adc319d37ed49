//! Probabilistic free-space grid on the ground plane.
//!
//! Ground and object points are projected orthogonally onto the plane and
//! counted per cell. A cell's free-space probability is the fraction of
//! ground hits among all hits; cells without any hit are *unknown* and keep
//! no probability at all.

use nalgebra::{Point3, Vector2};

use crate::error::{Error, Result};
use crate::scene::PlaneFrame;

/// Default grid cell edge length in metres.
pub const DEFAULT_CELL_SIZE_M: f64 = 0.25;

/// Margin added around the projected points when the extent is automatic.
const AUTO_MARGIN_M: f64 = 2.0;

#[derive(Debug, Clone, Copy)]
pub enum GridExtent {
    /// Cover all projected points plus a fixed margin.
    Auto,
    /// Explicit plane-coordinate bounds (min, max).
    Explicit(Vector2<f64>, Vector2<f64>),
}

#[derive(Debug, Clone)]
pub struct FreeSpaceGrid {
    pub cell_size: f64,
    pub min: Vector2<f64>,
    pub nx: usize,
    pub ny: usize,
    pub ground_counts: Vec<u32>,
    pub object_counts: Vec<u32>,
}

impl FreeSpaceGrid {
    pub fn build(
        frame: &PlaneFrame,
        ground: &[Point3<f64>],
        object: &[Point3<f64>],
        cell_size: f64,
        extent: GridExtent,
    ) -> Result<FreeSpaceGrid> {
        if cell_size <= 0.0 {
            return Err(Error::InvalidConfig("cell size must be positive".to_string()));
        }
        let g2: Vec<Vector2<f64>> = ground.iter().map(|p| frame.to_plane(p).xy()).collect();
        let o2: Vec<Vector2<f64>> = object.iter().map(|p| frame.to_plane(p).xy()).collect();
        let (min, max) = match extent {
            GridExtent::Explicit(min, max) => {
                if max.x <= min.x || max.y <= min.y {
                    return Err(Error::InvalidConfig("grid extent is empty".to_string()));
                }
                (min, max)
            }
            GridExtent::Auto => {
                let mut min = Vector2::repeat(f64::INFINITY);
                let mut max = Vector2::repeat(f64::NEG_INFINITY);
                for p in g2.iter().chain(&o2) {
                    min = min.inf(p);
                    max = max.sup(p);
                }
                if !min.x.is_finite() {
                    return Err(Error::EmptyPointSet);
                }
                (
                    min - Vector2::repeat(AUTO_MARGIN_M),
                    max + Vector2::repeat(AUTO_MARGIN_M),
                )
            }
        };
        let nx = ((max.x - min.x) / cell_size).ceil().max(1.0) as usize;
        let ny = ((max.y - min.y) / cell_size).ceil().max(1.0) as usize;
        let mut grid = FreeSpaceGrid {
            cell_size,
            min,
            nx,
            ny,
            ground_counts: vec![0; nx * ny],
            object_counts: vec![0; nx * ny],
        };
        for p in &g2 {
            if let Some(c) = grid.cell_of(p.x, p.y) {
                grid.ground_counts[c] += 1;
            }
        }
        for p in &o2 {
            if let Some(c) = grid.cell_of(p.x, p.y) {
                grid.object_counts[c] += 1;
            }
        }
        Ok(grid)
    }

    pub fn cell_count(&self) -> usize {
        self.nx * self.ny
    }

    /// Linear cell index for plane coordinates; `None` outside the extent.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<usize> {
        let ix = ((x - self.min.x) / self.cell_size).floor();
        let iy = ((y - self.min.y) / self.cell_size).floor();
        if ix < 0.0 || iy < 0.0 || ix >= self.nx as f64 || iy >= self.ny as f64 {
            return None;
        }
        Some(iy as usize * self.nx + ix as usize)
    }

    /// Free-space probability of a cell; `None` when the cell is unknown
    /// (no projected point of either kind).
    pub fn occupancy(&self, cell: usize) -> Option<f64> {
        let g = self.ground_counts[cell] as f64;
        let o = self.object_counts[cell] as f64;
        if g + o == 0.0 {
            None
        } else {
            Some(g / (g + o))
        }
    }

    /// Plane-coordinate bounds `(min, max)` of a cell.
    pub fn cell_bounds(&self, ix: usize, iy: usize) -> (Vector2<f64>, Vector2<f64>) {
        let min = Vector2::new(
            self.min.x + ix as f64 * self.cell_size,
            self.min.y + iy as f64 * self.cell_size,
        );
        (min, min + Vector2::repeat(self.cell_size))
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> Vector2<f64> {
        let (min, max) = self.cell_bounds(ix, iy);
        (min + max) / 2.0
    }

    /// CSV export: one row per cell with centre coordinates and free-space
    /// probability. Unknown cells leave the probability column empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,rho\n");
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                let c = self.cell_center(ix, iy);
                match self.occupancy(iy * self.nx + ix) {
                    Some(rho) => out.push_str(&format!("{:.4},{:.4},{:.6}\n", c.x, c.y, rho)),
                    None => out.push_str(&format!("{:.4},{:.4},\n", c.x, c.y)),
                }
            }
        }
        out
    }
}
