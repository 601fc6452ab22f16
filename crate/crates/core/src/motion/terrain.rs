use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid of terrain heights. `grid[row][col]` covers the cell
/// `[origin.x + col·cell_size, +cell_size) × [origin.y + row·cell_size, +cell_size)`;
/// heights are constant within a cell so steps and boxes keep sharp edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heightmap {
    pub cell_size: f64,
    pub origin: [f64; 2],
    pub default_height: f64,
    pub grid: Vec<Vec<f64>>,
}

impl Heightmap {
    pub fn flat(height: f64) -> Self {
        Self {
            cell_size: 1.0,
            origin: [0.0, 0.0],
            default_height: height,
            grid: Vec::new(),
        }
    }

    /// Flat ground at `ground` with an axis-aligned box of `box_height` over
    /// `[x_min, x_max] × [y_min, y_max]`, rasterized at `cell_size`.
    pub fn with_box(ground: f64, box_height: f64, x: (f64, f64), y: (f64, f64), cell_size: f64) -> Self {
        let cols = ((x.1 - x.0) / cell_size).round().max(1.0) as usize;
        let rows = ((y.1 - y.0) / cell_size).round().max(1.0) as usize;
        Self {
            cell_size,
            origin: [x.0, y.0],
            default_height: ground,
            grid: vec![vec![box_height; cols]; rows],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(Error::invalid("cell_size", None, "must be positive"));
        }
        if let Some(first) = self.grid.first() {
            if self.grid.iter().any(|row| row.len() != first.len()) {
                return Err(Error::invalid("grid", None, "rows have different lengths"));
            }
        }
        Ok(())
    }

    pub fn height(&self, x: f64, y: f64) -> f64 {
        let col = ((x - self.origin[0]) / self.cell_size).floor();
        let row = ((y - self.origin[1]) / self.cell_size).floor();
        if col < 0.0 || row < 0.0 {
            return self.default_height;
        }
        self.grid
            .get(row as usize)
            .and_then(|r| r.get(col as usize))
            .copied()
            .unwrap_or(self.default_height)
    }
}

pub fn load_heightmap(path: impl AsRef<Path>) -> Result<Heightmap> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let map: Heightmap = serde_json::from_str(&text).map_err(Error::from_json)?;
    map.validate()?;
    Ok(map)
}
