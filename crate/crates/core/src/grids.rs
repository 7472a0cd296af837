//! Lattice grids over the input vertices: cell enumeration around balls,
//! point location, and the three cell sets used by the index and the
//! segment-query structure.
//!
//! A cell is identified by its integer lattice tuple; the geometric box is
//! `[lattice * width, (lattice + 1) * width]` per axis. Point location is
//! lower-closed (a point on a shared face belongs to the higher cell), while
//! all distance and intersection predicates treat cells as closed boxes.

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use crate::geometry::{dist_point_box, Aabb, Point, PolyCurve};

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("eps must lie in (0, 0.5), got {0}")]
    BadEpsilon(f64),
    #[error("delta must be positive and finite, got {0}")]
    BadDelta(f64),
}

#[derive(Debug, Clone)]
pub struct GridCell {
    pub lattice: Vec<i64>,
    pub width: f64,
}

impl PartialEq for GridCell {
    // Identity is the lattice tuple; widths agree within one instance.
    fn eq(&self, other: &Self) -> bool {
        self.lattice == other.lattice
    }
}
impl Eq for GridCell {}

impl std::hash::Hash for GridCell {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.lattice.hash(state);
    }
}

impl PartialOrd for GridCell {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for GridCell {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.lattice.cmp(&other.lattice)
    }
}

impl GridCell {
    pub fn dim(&self) -> usize {
        self.lattice.len()
    }

    pub fn to_box(&self) -> Aabb {
        let lo: Vec<f64> = self.lattice.iter().map(|&k| k as f64 * self.width).collect();
        let hi: Vec<f64> = self
            .lattice
            .iter()
            .map(|&k| (k + 1) as f64 * self.width)
            .collect();
        Aabb { lo, hi }
    }

    pub fn center(&self) -> Point {
        Point {
            coords: self
                .lattice
                .iter()
                .map(|&k| (k as f64 + 0.5) * self.width)
                .collect(),
        }
    }

    /// Lexicographically smallest corner, which is `lattice * width`.
    pub fn min_vertex(&self) -> Point {
        Point {
            coords: self.lattice.iter().map(|&k| k as f64 * self.width).collect(),
        }
    }
}

pub fn grid_width(eps: f64, delta: f64, d: usize) -> f64 {
    eps * delta / (d as f64).sqrt()
}

/// The cell whose half-open box `[k*w, (k+1)*w)` contains `p`.
pub fn cell_of_point(p: &[f64], width: f64) -> GridCell {
    GridCell {
        lattice: p.iter().map(|&x| (x / width).floor() as i64).collect(),
        width,
    }
}

/// Every cell whose closed box meets the closed ball, in ascending lattice
/// order. The bounding scan is widened by one cell per side so boxes that
/// only touch the ball on a face survive to the exact distance filter.
pub fn cells_of_ball(center: &[f64], radius: f64, width: f64) -> Vec<GridCell> {
    let d = center.len();
    let lo: Vec<i64> = center
        .iter()
        .map(|&x| ((x - radius) / width).floor() as i64 - 1)
        .collect();
    let hi: Vec<i64> = center
        .iter()
        .map(|&x| ((x + radius) / width).floor() as i64 + 1)
        .collect();
    let mut out = Vec::new();
    let mut cur = lo.clone();
    loop {
        let cell = GridCell { lattice: cur.clone(), width };
        if dist_point_box(center, &cell.to_box()) <= radius {
            out.push(cell);
        }
        let mut axis = d;
        while axis > 0 {
            let i = axis - 1;
            cur[i] += 1;
            if cur[i] <= hi[i] {
                break;
            }
            cur[i] = lo[i];
            axis -= 1;
        }
        if axis == 0 {
            break;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridRole {
    G1,
    G2,
    G3,
}

#[derive(Debug, Clone)]
pub struct GridSet {
    /// Sorted ascending by lattice tuple; no duplicates.
    pub cells: Vec<GridCell>,
    pub width: f64,
    pub role: GridRole,
    index: HashMap<Vec<i64>, usize>,
}

impl GridSet {
    pub fn from_cells(mut cells: Vec<GridCell>, width: f64, role: GridRole) -> GridSet {
        cells.sort();
        cells.dedup();
        let index = cells
            .iter()
            .enumerate()
            .map(|(i, c)| (c.lattice.clone(), i))
            .collect();
        GridSet { cells, width, role, index }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn contains(&self, lattice: &[i64]) -> bool {
        self.index.contains_key(lattice)
    }

    pub fn get(&self, lattice: &[i64]) -> Option<&GridCell> {
        self.index.get(lattice).map(|&i| &self.cells[i])
    }

    /// Position of a stored cell in the sorted cell list.
    pub fn position(&self, lattice: &[i64]) -> Option<usize> {
        self.index.get(lattice).copied()
    }
}

/// The stored cell containing `p` under the lower-closed convention.
pub fn locate<'a>(g: &'a GridSet, p: &[f64]) -> Option<&'a GridCell> {
    g.get(&cell_of_point(p, g.width).lattice)
}

/// All distinct cell corners, ascending by corner lattice tuple.
pub fn grid_vertices(g: &GridSet) -> Vec<Point> {
    let d = g.cells.first().map_or(0, |c| c.dim());
    let mut corners: HashSet<Vec<i64>> = HashSet::new();
    for cell in &g.cells {
        for mask in 0..(1u32 << d) {
            let corner: Vec<i64> = cell
                .lattice
                .iter()
                .enumerate()
                .map(|(i, &k)| k + ((mask >> i) & 1) as i64)
                .collect();
            corners.insert(corner);
        }
    }
    let mut sorted: Vec<Vec<i64>> = corners.into_iter().collect();
    sorted.sort();
    sorted
        .into_iter()
        .map(|c| Point {
            coords: c.iter().map(|&k| k as f64 * g.width).collect(),
        })
        .collect()
}

/// The three vertex-neighborhood grids at radii `delta`, `(2+12e)delta`,
/// and `(1+6e)delta`, all at cell width `eps*delta/sqrt(d)`.
pub fn build_grids(
    curves: &[PolyCurve],
    eps: f64,
    delta: f64,
) -> Result<(GridSet, GridSet, GridSet), GridError> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(GridError::BadEpsilon(eps));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(GridError::BadDelta(delta));
    }
    let d = curves.first().map_or(2, |c| c.dim());
    let width = grid_width(eps, delta, d);
    let radii = [delta, (2.0 + 12.0 * eps) * delta, (1.0 + 6.0 * eps) * delta];
    let roles = [GridRole::G1, GridRole::G2, GridRole::G3];
    let mut sets = Vec::with_capacity(3);
    for (radius, role) in radii.into_iter().zip(roles) {
        let mut cells = Vec::new();
        for c in curves {
            for v in &c.vertices {
                cells.extend(cells_of_ball(&v.coords, radius, width));
            }
        }
        sets.push(GridSet::from_cells(cells, width, role));
    }
    let g3 = sets.pop().unwrap();
    let g2 = sets.pop().unwrap();
    let g1 = sets.pop().unwrap();
    for c in &g1.cells {
        assert!(g2.contains(&c.lattice), "vertex-ball nesting broken for G2");
        assert!(g3.contains(&c.lattice), "vertex-ball nesting broken for G3");
    }
    Ok((g1, g2, g3))
}
