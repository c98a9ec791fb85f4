use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::points::FeaturePoint;
use super::raster::{Extent, RasterMosaic};
use super::Label;
use crate::error::{Error, Result};

const MULTIPLE_TOLERANCE: f64 = 1e-9;
const ALIGN_TOLERANCE_PX: f64 = 1e-6;

/// Grid cell address; rows count south from the grid origin, columns east.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

/// Square, axis-aligned cells anchored at the north-west `origin`.
///
/// Cell `(r, c)` covers grid coordinates `[c, c+1) × [r, r+1)`, where
/// `x = (easting − west) / size` and `y = (north − northing) / size`, so each
/// point belongs to exactly one cell and shared edges go to the east/south cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub cell_size_m: f64,
    pub n_rows: usize,
    pub n_cols: usize,
    pub origin: (f64, f64),
}

impl GridSpec {
    /// Largest grid of whole cells inside `extent`; trailing partial cells are dropped.
    pub fn covering(extent: &Extent, cell_size_m: f64) -> Result<Self> {
        if !(cell_size_m > 0.0) {
            return Err(Error::Grid(format!("cell size must be positive, got {cell_size_m}")));
        }
        let whole = |span: f64| ((span / cell_size_m) + MULTIPLE_TOLERANCE).floor() as usize;
        let grid = Self {
            cell_size_m,
            n_rows: whole(extent.north - extent.south),
            n_cols: whole(extent.east - extent.west),
            origin: (extent.west, extent.north),
        };
        if grid.n_rows == 0 || grid.n_cols == 0 {
            return Err(Error::Grid(format!(
                "extent {extent:?} smaller than one {cell_size_m} m cell"
            )));
        }
        Ok(grid)
    }

    pub fn n_cells(&self) -> usize {
        self.n_rows * self.n_cols
    }

    pub fn extent(&self) -> Extent {
        Extent {
            west: self.origin.0,
            north: self.origin.1,
            east: self.origin.0 + self.n_cols as f64 * self.cell_size_m,
            south: self.origin.1 - self.n_rows as f64 * self.cell_size_m,
        }
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.n_rows).flat_map(move |r| (0..self.n_cols).map(move |c| Cell::new(r, c)))
    }

    /// Cell containing the point under half-open bounds, if any.
    pub fn cell_of(&self, easting: f64, northing: f64) -> Option<Cell> {
        let x = (easting - self.origin.0) / self.cell_size_m;
        let y = (self.origin.1 - northing) / self.cell_size_m;
        if !(x >= 0.0 && y >= 0.0) {
            return None;
        }
        let (col, row) = (x.floor() as usize, y.floor() as usize);
        (row < self.n_rows && col < self.n_cols).then_some(Cell::new(row, col))
    }

    pub fn contains(&self, easting: f64, northing: f64) -> bool {
        self.cell_of(easting, northing).is_some()
    }

    /// Tile side in pixels; the cell must be a whole number of pixels.
    pub fn tile_side(&self, resolution_m: f64) -> Result<usize> {
        let ratio = self.cell_size_m / resolution_m;
        let side = ratio.round();
        if side < 1.0 || (ratio - side).abs() > MULTIPLE_TOLERANCE * ratio {
            return Err(Error::Grid(format!(
                "cell size {} m is not an integer multiple of resolution {resolution_m} m",
                self.cell_size_m
            )));
        }
        Ok(side as usize)
    }
}

/// A `(bands, height, width)` block of pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tile {
    pub bands: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Tile {
    pub fn new(bands: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != bands * height * width {
            return Err(Error::Shape(format!(
                "{} values for a {bands}x{height}x{width} tile",
                data.len()
            )));
        }
        Ok(Self {
            bands,
            height,
            width,
            data,
        })
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.bands, self.height, self.width]
    }

    pub fn band(&self, b: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.data[b * plane..(b + 1) * plane]
    }

    pub fn band_mut(&mut self, b: usize) -> &mut [f32] {
        let plane = self.height * self.width;
        &mut self.data[b * plane..(b + 1) * plane]
    }
}

/// Cuts a mosaic into one tile per grid cell, in row-major cell order.
///
/// Invalid (no-data) pixels are replaced by their band's valid mean.
pub fn gridify(mosaic: &RasterMosaic, grid: &GridSpec) -> Result<Vec<(Cell, Tile)>> {
    let side = grid.tile_side(mosaic.resolution_m)?;
    let res = mosaic.resolution_m;
    let off_x = (grid.origin.0 - mosaic.origin.0) / res;
    let off_y = (mosaic.origin.1 - grid.origin.1) / res;
    if (off_x - off_x.round()).abs() > ALIGN_TOLERANCE_PX || (off_y - off_y.round()).abs() > ALIGN_TOLERANCE_PX {
        return Err(Error::Grid(format!(
            "grid origin {:?} is not on the {} pixel lattice",
            grid.origin, mosaic.modality
        )));
    }
    let (off_x, off_y) = (off_x.round(), off_y.round());
    if off_x < 0.0
        || off_y < 0.0
        || off_x as usize + grid.n_cols * side > mosaic.width()
        || off_y as usize + grid.n_rows * side > mosaic.height()
    {
        return Err(Error::Grid(format!(
            "{}x{} grid of {} m cells exceeds the {} mosaic",
            grid.n_rows, grid.n_cols, grid.cell_size_m, mosaic.modality
        )));
    }
    let (off_x, off_y) = (off_x as usize, off_y as usize);
    let mut filled;
    let source = if mosaic.validity_mask().is_some() {
        filled = mosaic.clone();
        filled.fill_nodata()?;
        &filled
    } else {
        mosaic
    };
    let w = source.width();
    let mut tiles = Vec::with_capacity(grid.n_cells());
    for cell in grid.cells() {
        let mut data = Vec::with_capacity(source.bands() * side * side);
        for b in 0..source.bands() {
            let band = source.band(b);
            for y in 0..side {
                let row = off_y + cell.row * side + y;
                let start = row * w + off_x + cell.col * side;
                data.extend_from_slice(&band[start..start + side]);
            }
        }
        tiles.push((cell, Tile::new(source.bands(), side, side, data)?));
    }
    Ok(tiles)
}

/// Labels every cell: the class of the feature points it contains, else empty.
///
/// A cell holding points of two different classes is an error.
pub fn assign_labels(grid: &GridSpec, points: &[FeaturePoint]) -> Result<BTreeMap<Cell, Label>> {
    let mut found: BTreeMap<Cell, BTreeSet<Label>> = BTreeMap::new();
    for point in points {
        let cell = grid.cell_of(point.easting, point.northing).ok_or_else(|| {
            Error::Grid(format!(
                "{} point at ({}, {}) lies outside the grid",
                point.class, point.easting, point.northing
            ))
        })?;
        found.entry(cell).or_default().insert(point.class);
    }
    let mut labels: BTreeMap<Cell, Label> = grid.cells().map(|c| (c, Label::Empty)).collect();
    for (cell, classes) in found {
        if classes.len() > 1 {
            let names: Vec<&str> = classes.iter().map(|c| c.name()).collect();
            return Err(Error::LabelConflict {
                row: cell.row,
                col: cell.col,
                classes: names.join(", "),
            });
        }
        labels.insert(cell, *classes.first().expect("non-empty class set"));
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Modality;
    use proptest::prelude::*;

    fn grid(rows: usize, cols: usize) -> GridSpec {
        GridSpec {
            cell_size_m: 20.0,
            n_rows: rows,
            n_cols: cols,
            origin: (1000.0, 5000.0),
        }
    }

    fn point(class: Label, e: f64, n: f64) -> FeaturePoint {
        FeaturePoint {
            class,
            easting: e,
            northing: n,
        }
    }

    fn mosaic(modality: Modality, res: f64, rows: usize, cols: usize) -> RasterMosaic {
        let side_m = 20.0;
        let h = (rows as f64 * side_m / res).round() as usize;
        let w = (cols as f64 * side_m / res).round() as usize;
        let bands = modality.bands();
        let pixels = (0..bands * h * w).map(|i| i as f32).collect();
        RasterMosaic::new(modality, res, (1000.0, 5000.0), bands, h, w, pixels).unwrap()
    }

    #[test]
    fn tile_sides_follow_resolution() {
        let g = grid(1, 1);
        assert_eq!(g.tile_side(0.5).unwrap(), 40);
        assert_eq!(g.tile_side(0.05).unwrap(), 400);
        assert_eq!(g.tile_side(0.1).unwrap(), 200);
        assert!(g.tile_side(0.3).is_err());
    }

    #[test]
    fn gridify_thermal_and_lidar_shapes() {
        let thermal = mosaic(Modality::Thermal, 0.5, 2, 3);
        let tiles = gridify(&thermal, &grid(2, 3)).unwrap();
        assert_eq!(tiles.len(), 6);
        assert!(tiles.iter().all(|(_, t)| t.shape() == [1, 40, 40]));
        let lidar = mosaic(Modality::Lidar, 0.1, 1, 1);
        let tiles = gridify(&lidar, &grid(1, 1)).unwrap();
        assert_eq!(tiles[0].1.shape(), [1, 200, 200]);
    }

    #[test]
    fn single_cell_grid_returns_whole_mosaic() {
        let m = mosaic(Modality::Rgb, 2.0, 1, 1);
        let tiles = gridify(&m, &grid(1, 1)).unwrap();
        assert_eq!(tiles[0].1.data, m.pixels());
    }

    #[test]
    fn covering_drops_partial_cells() {
        let extent = Extent {
            west: 0.0,
            north: 100.0,
            east: 75.0,
            south: 41.0,
        };
        let g = GridSpec::covering(&extent, 20.0).unwrap();
        assert_eq!((g.n_rows, g.n_cols), (2, 3));
    }

    #[test]
    fn misaligned_cell_size_is_rejected() {
        let m = mosaic(Modality::Thermal, 0.5, 1, 1);
        let mut g = grid(1, 1);
        g.cell_size_m = 19.75;
        g.n_rows = 1;
        assert!(gridify(&m, &g).is_err());
    }

    #[test]
    fn no_points_means_all_empty() {
        let labels = assign_labels(&grid(4, 5), &[]).unwrap();
        assert_eq!(labels.len(), 20);
        assert!(labels.values().all(|&l| l == Label::Empty));
    }

    #[test]
    fn point_at_cell_center_labels_only_that_cell() {
        let g = grid(5, 10);
        let p = point(Label::Midden, 1000.0 + 7.5 * 20.0, 5000.0 - 3.5 * 20.0);
        let labels = assign_labels(&g, &[p]).unwrap();
        assert_eq!(labels[&Cell::new(3, 7)], Label::Midden);
        assert_eq!(labels.values().filter(|&&l| l != Label::Empty).count(), 1);
    }

    /// Brute-force containment: scan every cell rectangle with half-open bounds.
    fn brute_force_cell(g: &GridSpec, e: f64, n: f64) -> Option<Cell> {
        let mut hits = g.cells().filter(|c| {
            let west = g.origin.0 + c.col as f64 * g.cell_size_m;
            let north = g.origin.1 - c.row as f64 * g.cell_size_m;
            e >= west && e < west + g.cell_size_m && n <= north && n > north - g.cell_size_m
        });
        let first = hits.next();
        assert!(hits.next().is_none(), "point in two cells");
        first
    }

    #[test]
    fn point_on_shared_edge_goes_to_eastern_cell() {
        let g = grid(2, 2);
        let (e, n) = (1020.0, 4990.0);
        assert_eq!(brute_force_cell(&g, e, n), Some(Cell::new(0, 1)));
        let labels = assign_labels(&g, &[point(Label::Midden, e, n)]).unwrap();
        assert_eq!(labels[&Cell::new(0, 1)], Label::Midden);
        assert_eq!(labels[&Cell::new(0, 0)], Label::Empty);
    }

    #[test]
    fn mixed_classes_in_one_cell_is_an_error() {
        let g = grid(2, 2);
        let pts = [point(Label::Midden, 1005.0, 4995.0), point(Label::Water, 1006.0, 4994.0)];
        match assign_labels(&g, &pts) {
            Err(Error::LabelConflict { row: 0, col: 0, .. }) => {}
            other => panic!("expected conflict, got {other:?}"),
        }
    }

    #[test]
    fn same_class_twice_in_a_cell_is_fine() {
        let g = grid(1, 1);
        let pts = [point(Label::Mound, 1005.0, 4995.0), point(Label::Mound, 1015.0, 4985.0)];
        assert_eq!(assign_labels(&g, &pts).unwrap()[&Cell::new(0, 0)], Label::Mound);
    }

    proptest! {
        #[test]
        fn cell_lookup_matches_brute_force(x in -0.2f64..1.2, y in -0.2f64..1.2) {
            let g = grid(3, 4);
            let e = g.origin.0 + x * 4.0 * g.cell_size_m;
            let n = g.origin.1 - y * 3.0 * g.cell_size_m;
            prop_assert_eq!(g.cell_of(e, n), brute_force_cell(&g, e, n));
        }

        #[test]
        fn tiles_partition_the_mosaic(rows in 1usize..4, cols in 1usize..4) {
            let m = mosaic(Modality::Rgb, 4.0, rows, cols);
            let g = grid(rows, cols);
            let tiles = gridify(&m, &g).unwrap();
            prop_assert_eq!(tiles.len(), g.n_cells());
            // reassemble in grid order and compare with the mosaic pixel by pixel
            let side = 5;
            let (h, w) = (rows * side, cols * side);
            let mut rebuilt = vec![f32::NAN; 3 * h * w];
            for (cell, tile) in &tiles {
                for b in 0..3 {
                    for y in 0..side {
                        for x in 0..side {
                            let dst = b * h * w + (cell.row * side + y) * w + cell.col * side + x;
                            prop_assert!(rebuilt[dst].is_nan(), "overlap");
                            rebuilt[dst] = tile.band(b)[y * side + x];
                        }
                    }
                }
            }
            prop_assert_eq!(&rebuilt[..], m.pixels());
        }
    }
}
