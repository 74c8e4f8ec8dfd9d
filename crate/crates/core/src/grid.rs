//! Plaintext grid geometry computed on the client: coordinate offsets,
//! per-level grid IDs, and border replication.
//!
//! Coordinates are integer centimeters in a local planar frame. Level 1 is
//! the finest level; level `H` is the coarsest and forms the tree root.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridConfig {
    pub origin_x_cm: i64,
    pub origin_y_cm: i64,
    /// Side of the minimum bounding square.
    pub side_cm: u64,
    pub levels: usize,
    /// Cell width per level, finest first.
    pub cell_widths_cm: Vec<u64>,
}

impl GridConfig {
    pub fn new(origin_x_cm: i64, origin_y_cm: i64, side_cm: u64, cell_widths_cm: Vec<u64>) -> Result<Self> {
        let config = GridConfig {
            origin_x_cm,
            origin_y_cm,
            side_cm,
            levels: cell_widths_cm.len(),
            cell_widths_cm,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidGridConfig(m));
        if self.levels < 2 {
            return bad(format!("need at least 2 levels, got {}", self.levels));
        }
        if self.cell_widths_cm.len() != self.levels {
            return bad(format!(
                "{} cell widths for {} levels",
                self.cell_widths_cm.len(),
                self.levels
            ));
        }
        if self.cell_widths_cm.contains(&0) {
            return bad("cell widths must be positive".into());
        }
        for pair in self.cell_widths_cm.windows(2) {
            if pair[1] % pair[0] != 0 {
                return bad(format!("width {} does not divide {}", pair[0], pair[1]));
            }
        }
        let top = self.cell_widths_cm[self.levels - 1];
        if self.side_cm == 0 || !self.side_cm.is_multiple_of(top) {
            return bad(format!("top width {top} does not divide side {}", self.side_cm));
        }
        // Squared distances and coordinates must stay far below Q/4.
        if self.side_cm > 1 << 28 {
            return bad(format!("side {} cm exceeds the 2^28 cm limit", self.side_cm));
        }
        Ok(())
    }

    /// Checks the finest cells are at least twice the infectious distance.
    pub fn check_distance(&self, distance_cm: u64) -> Result<()> {
        if self.cell_widths_cm[0] < 2 * distance_cm {
            return Err(Error::InvalidGridConfig(format!(
                "finest cell {} cm is narrower than 2 x {} cm",
                self.cell_widths_cm[0], distance_cm
            )));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let config: GridConfig = toml::from_str(s)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("grid config serializes")
    }

    /// Width of cells at `level` (1-based).
    pub fn width(&self, level: usize) -> u64 {
        self.cell_widths_cm[level - 1]
    }

    pub fn cells_per_side(&self, level: usize) -> u64 {
        self.side_cm / self.width(level)
    }

    pub fn cell_count(&self, level: usize) -> u64 {
        self.cells_per_side(level).pow(2)
    }

    /// A square two-level-or-deeper layout for roughly `regions` top-level
    /// cells each split into roughly `cells_per_region` finest cells, with
    /// finest cells at least `min_cell_cm` wide and the side covering
    /// `min_side_cm`.
    pub fn for_partition(regions: u64, cells_per_region: u64, min_side_cm: u64, min_cell_cm: u64) -> Result<Self> {
        let regions_side = ((regions as f64).sqrt().round() as u64).max(1);
        let cells_side = ((cells_per_region as f64).sqrt().round() as u64).max(1);
        let per_side = regions_side * cells_side;
        let cell = min_cell_cm.max(min_side_cm.div_ceil(per_side)).max(1);
        let region = cell * cells_side;
        GridConfig::new(0, 0, region * regions_side, vec![cell, region])
    }
}

/// A translated, non-negative point inside the service square.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PlanarPoint {
    pub x: u64,
    pub y: u64,
}

impl PlanarPoint {
    pub fn new(x: u64, y: u64) -> Self {
        PlanarPoint { x, y }
    }

    pub fn dist2(&self, other: &PlanarPoint) -> u64 {
        let dx = self.x.abs_diff(other.x);
        let dy = self.y.abs_diff(other.y);
        dx * dx + dy * dy
    }
}

pub fn offset_coords(raw_x: i64, raw_y: i64, config: &GridConfig) -> Result<PlanarPoint> {
    let x = raw_x - config.origin_x_cm;
    let y = raw_y - config.origin_y_cm;
    let side = config.side_cm as i64;
    if !(0..=side).contains(&x) || !(0..=side).contains(&y) {
        return Err(Error::PointOutsideServiceArea { x: raw_x, y: raw_y });
    }
    Ok(PlanarPoint {
        x: x as u64,
        y: y as u64,
    })
}

/// Inverse of [`offset_coords`].
pub fn raw_coords(p: PlanarPoint, config: &GridConfig) -> (i64, i64) {
    (p.x as i64 + config.origin_x_cm, p.y as i64 + config.origin_y_cm)
}

/// Column and row of a cell at one level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub level: usize,
    pub col: u64,
    pub row: u64,
}

impl Cell {
    pub fn of(p: PlanarPoint, level: usize, config: &GridConfig) -> Cell {
        let w = config.width(level);
        let last = config.cells_per_side(level) - 1;
        // The far edge x = W belongs to the last cell.
        Cell {
            level,
            col: (p.x / w).min(last),
            row: (p.y / w).min(last),
        }
    }

    pub fn gid(&self, config: &GridConfig) -> u64 {
        self.col + self.row * config.cells_per_side(self.level)
    }

    /// Closed rectangle `[x0, x1] x [y0, y1]`.
    pub fn rect(&self, config: &GridConfig) -> (u64, u64, u64, u64) {
        let w = config.width(self.level);
        (self.col * w, (self.col + 1) * w, self.row * w, (self.row + 1) * w)
    }

    /// The containing cell one level up.
    pub fn parent(&self, config: &GridConfig) -> Cell {
        let k = config.width(self.level + 1) / config.width(self.level);
        Cell {
            level: self.level + 1,
            col: self.col / k,
            row: self.row / k,
        }
    }

    pub fn dist2_to(&self, p: PlanarPoint, config: &GridConfig) -> u64 {
        let (x0, x1, y0, y1) = self.rect(config);
        let dx = if p.x < x0 { x0 - p.x } else { p.x.saturating_sub(x1) };
        let dy = if p.y < y0 { y0 - p.y } else { p.y.saturating_sub(y1) };
        dx * dx + dy * dy
    }
}

/// Grid ID of the cell containing `p` at `level`, in row-major order:
/// `floor(x / w) + floor(y / w) * (W / w)`.
///
/// Rows count from zero at the bottom edge, so every ID is non-negative.
pub fn gid(p: PlanarPoint, level: usize, config: &GridConfig) -> u64 {
    Cell::of(p, level, config).gid(config)
}

/// One grid ID per level, finest first.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellPath {
    pub gids: Vec<u64>,
}

impl CellPath {
    pub fn levels(&self) -> usize {
        self.gids.len()
    }

    pub fn gid(&self, level: usize) -> u64 {
        self.gids[level - 1]
    }

    /// The full path of a finest-level cell.
    pub fn of_cell(cell: Cell, config: &GridConfig) -> CellPath {
        debug_assert_eq!(cell.level, 1);
        let mut gids = Vec::with_capacity(config.levels);
        let mut c = cell;
        gids.push(c.gid(config));
        for _ in 1..config.levels {
            c = c.parent(config);
            gids.push(c.gid(config));
        }
        CellPath { gids }
    }
}

pub fn cell_path(p: PlanarPoint, config: &GridConfig) -> CellPath {
    CellPath::of_cell(Cell::of(p, 1, config), config)
}

/// Finest-level neighbor cells within `distance_cm / 2` of `p` (closed
/// rectangles), excluding the point's own cell and cells off the grid.
pub fn border_cells(p: PlanarPoint, config: &GridConfig, distance_cm: u64) -> Vec<Cell> {
    let own = Cell::of(p, 1, config);
    let per_side = config.cells_per_side(1) as i64;
    let limit = distance_cm * distance_cm;
    let mut out = Vec::new();
    for dy in -1i64..=1 {
        for dx in -1i64..=1 {
            if dx == 0 && dy == 0 {
                continue;
            }
            let (col, row) = (own.col as i64 + dx, own.row as i64 + dy);
            if !(0..per_side).contains(&col) || !(0..per_side).contains(&row) {
                continue;
            }
            let cell = Cell {
                level: 1,
                col: col as u64,
                row: row as u64,
            };
            // dist <= D/2  <=>  4 dist^2 <= D^2
            if 4 * cell.dist2_to(p, config) <= limit {
                out.push(cell);
            }
        }
    }
    out
}

/// Extra top-down paths for a point near a finest-level border: one for an
/// edge, three at a corner.
pub fn border_replicas(p: PlanarPoint, config: &GridConfig, distance_cm: u64) -> Vec<CellPath> {
    border_cells(p, config, distance_cm)
        .into_iter()
        .map(|c| CellPath::of_cell(c, config))
        .collect()
}
