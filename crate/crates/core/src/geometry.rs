//! Axis-aligned boxes, uniform grids over them, and the state/control
//! partition shared by every other stage of the pipeline.
//!
//! Cells are closed. A point on a shared face belongs to every adjacent cell
//! geometrically, but [`Grid::locate`] always resolves it to the cell with the
//! lowest index, so lookups are deterministic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used when deciding whether a cell width divides a region.
const DIVISIBILITY_TOL: f64 = 1e-9;

/// A closed axis-aligned box `[lower, upper]` in `R^d`, `d >= 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperrect {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Hyperrect {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::invalid("box must have at least one dimension"));
        }
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for (d, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::invalid(format!("box bound in dimension {d} is not finite")));
            }
            if lo > hi {
                return Err(Error::invalid(format!(
                    "box lower bound {lo} exceeds upper bound {hi} in dimension {d}"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The degenerate box containing only `point`.
    pub fn point(point: &[f64]) -> Result<Self> {
        Self::new(point.to_vec(), point.to_vec())
    }

    /// `[lo, hi]^dim`.
    pub fn cube(lo: f64, hi: f64, dim: usize) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, d: usize) -> f64 {
        self.upper[d] - self.lower[d]
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| 0.5 * (lo + hi))
            .collect()
    }

    /// Half of the side length in each dimension.
    pub fn radius(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| 0.5 * (hi - lo))
            .collect()
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|d| self.width(d)).product()
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.dim()
            && point
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (lo, hi))| *lo <= *x && *x <= *hi)
    }

    pub fn contains_box(&self, other: &Hyperrect) -> bool {
        other.dim() == self.dim()
            && (0..self.dim()).all(|d| self.lower[d] <= other.lower[d] && other.upper[d] <= self.upper[d])
    }

    /// Closed-set intersection test (touching faces count).
    pub fn intersects(&self, other: &Hyperrect) -> bool {
        other.dim() == self.dim()
            && (0..self.dim()).all(|d| self.lower[d] <= other.upper[d] && other.lower[d] <= self.upper[d])
    }

    /// Shrinks every face inward by `margin[d]`; `None` once any side collapses
    /// below zero length.
    pub fn erode(&self, margin: &[f64]) -> Result<Option<Hyperrect>> {
        self.check_margin(margin)?;
        let lower: Vec<f64> = self.lower.iter().zip(margin).map(|(lo, m)| lo + m).collect();
        let upper: Vec<f64> = self.upper.iter().zip(margin).map(|(hi, m)| hi - m).collect();
        if lower.iter().zip(&upper).any(|(lo, hi)| lo > hi) {
            return Ok(None);
        }
        Ok(Some(Hyperrect { lower, upper }))
    }

    /// Expands every face outward by `margin[d]`.
    pub fn dilate(&self, margin: &[f64]) -> Result<Hyperrect> {
        self.check_margin(margin)?;
        Ok(Hyperrect {
            lower: self.lower.iter().zip(margin).map(|(lo, m)| lo - m).collect(),
            upper: self.upper.iter().zip(margin).map(|(hi, m)| hi + m).collect(),
        })
    }

    fn check_margin(&self, margin: &[f64]) -> Result<()> {
        if margin.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: margin.len(),
            });
        }
        if margin.iter().any(|m| !(*m >= 0.0)) {
            return Err(Error::invalid("margin must be non-negative"));
        }
        Ok(())
    }

    /// Cartesian product `self x other`.
    pub fn product(&self, other: &Hyperrect) -> Hyperrect {
        let mut lower = self.lower.clone();
        let mut upper = self.upper.clone();
        lower.extend_from_slice(&other.lower);
        upper.extend_from_slice(&other.upper);
        Hyperrect { lower, upper }
    }

    /// Minkowski sum with `[lo, hi]` per dimension.
    pub fn minkowski_sum(&self, other: &Hyperrect) -> Result<Hyperrect> {
        if other.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(Hyperrect {
            lower: self.lower.iter().zip(&other.lower).map(|(a, b)| a + b).collect(),
            upper: self.upper.iter().zip(&other.upper).map(|(a, b)| a + b).collect(),
        })
    }

    /// Splits the box into `parts^dim` equal sub-boxes.
    pub fn subdivide(&self, parts: usize) -> Vec<Hyperrect> {
        let parts = parts.max(1);
        if parts == 1 {
            return vec![self.clone()];
        }
        let counts = vec![parts; self.dim()];
        Grid::with_counts(self.clone(), &counts)
            .map(|g| g.cells())
            .unwrap_or_else(|_| vec![self.clone()])
    }

    /// Signed distance from `point` to the nearest face: positive inside,
    /// negative outside (for points outside along a single axis).
    pub fn boundary_distance(&self, point: &[f64]) -> f64 {
        point
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(x, (lo, hi))| (x - lo).min(hi - x))
            .fold(f64::INFINITY, f64::min)
    }
}

/// A uniform (up to a narrower trailing cell) tensor grid over a box.
///
/// Cells are ordered row-major: the first dimension varies slowest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    region: Hyperrect,
    breaks: Vec<Vec<f64>>,
}

impl Grid {
    /// Grid with the given cell width per dimension. When a width does not
    /// divide the region, the final cell in that dimension is narrower.
    pub fn with_width(region: Hyperrect, cell_width: &[f64]) -> Result<Self> {
        if cell_width.len() != region.dim() {
            return Err(Error::DimensionMismatch {
                expected: region.dim(),
                got: cell_width.len(),
            });
        }
        let mut breaks = Vec::with_capacity(region.dim());
        for (d, &w) in cell_width.iter().enumerate() {
            if !(w > 0.0) || !w.is_finite() {
                return Err(Error::invalid(format!("cell width must be positive, got {w}")));
            }
            let (lo, hi) = (region.lower[d], region.upper[d]);
            let span = hi - lo;
            let ratio = span / w;
            let nearest = ratio.round();
            let count = if (ratio - nearest).abs() <= DIVISIBILITY_TOL * ratio.max(1.0) {
                nearest.max(1.0) as usize
            } else {
                ratio.floor() as usize + 1
            };
            let mut b: Vec<f64> = (0..count).map(|k| lo + k as f64 * w).collect();
            b.push(hi);
            breaks.push(b);
        }
        Ok(Self { region, breaks })
    }

    /// Grid with `counts[d]` equal cells in dimension `d`.
    pub fn with_counts(region: Hyperrect, counts: &[usize]) -> Result<Self> {
        if counts.len() != region.dim() {
            return Err(Error::DimensionMismatch {
                expected: region.dim(),
                got: counts.len(),
            });
        }
        let mut breaks = Vec::with_capacity(region.dim());
        for (d, &n) in counts.iter().enumerate() {
            if n == 0 {
                return Err(Error::invalid("cell count must be at least one"));
            }
            let (lo, hi) = (region.lower[d], region.upper[d]);
            let mut b: Vec<f64> = (0..n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect();
            b.push(hi);
            breaks.push(b);
        }
        Ok(Self { region, breaks })
    }

    pub fn region(&self) -> &Hyperrect {
        &self.region
    }

    pub fn dim(&self) -> usize {
        self.region.dim()
    }

    /// Number of cells along each dimension.
    pub fn shape(&self) -> Vec<usize> {
        self.breaks.iter().map(|b| b.len() - 1).collect()
    }

    pub fn len(&self) -> usize {
        self.shape().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell(&self, index: usize) -> Hyperrect {
        let multi = self.unflatten(index);
        let lower = multi.iter().enumerate().map(|(d, &k)| self.breaks[d][k]).collect();
        let upper = multi.iter().enumerate().map(|(d, &k)| self.breaks[d][k + 1]).collect();
        Hyperrect { lower, upper }
    }

    pub fn cells(&self) -> Vec<Hyperrect> {
        (0..self.len()).map(|i| self.cell(i)).collect()
    }

    fn unflatten(&self, mut index: usize) -> Vec<usize> {
        let shape = self.shape();
        let mut multi = vec![0; shape.len()];
        for d in (0..shape.len()).rev() {
            multi[d] = index % shape[d];
            index /= shape[d];
        }
        multi
    }

    /// Lowest-index closed cell containing `point`, or `None` outside the region.
    pub fn locate(&self, point: &[f64]) -> Result<Option<usize>> {
        if point.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: point.len(),
            });
        }
        if !self.region.contains(point) {
            return Ok(None);
        }
        let shape = self.shape();
        let mut flat = 0;
        for (d, &x) in point.iter().enumerate() {
            let b = &self.breaks[d];
            // first k with x <= b[k + 1]; closed cells, so ties go to the lower cell
            let k = b[1..].partition_point(|&edge| edge < x).min(shape[d] - 1);
            flat = flat * shape[d] + k;
        }
        Ok(Some(flat))
    }
}

/// Splits `region` into cells of the given width, row-major ordered.
pub fn grid_partition(region: &Hyperrect, cell_width: &[f64]) -> Result<Vec<Hyperrect>> {
    Ok(Grid::with_width(region.clone(), cell_width)?.cells())
}

/// Partition of the safe set into state cells `X_i` and of the control box
/// into control cells `U_l`, together with the cells touching the initial set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateControlPartition {
    state_grid: Grid,
    control_grid: Grid,
    initial_set: Hyperrect,
    initial_cells: Vec<usize>,
}

impl StateControlPartition {
    pub fn new(state_grid: Grid, control_grid: Grid, initial_set: Hyperrect) -> Result<Self> {
        if initial_set.dim() != state_grid.dim() {
            return Err(Error::DimensionMismatch {
                expected: state_grid.dim(),
                got: initial_set.dim(),
            });
        }
        if !state_grid.region().contains_box(&initial_set) {
            return Err(Error::invalid("initial set must lie inside the safe set"));
        }
        let initial_cells = (0..state_grid.len())
            .filter(|&i| state_grid.cell(i).intersects(&initial_set))
            .collect();
        Ok(Self {
            state_grid,
            control_grid,
            initial_set,
            initial_cells,
        })
    }

    /// Uniform grid of side `state_width` over the safe set and `control_counts`
    /// equal intervals per control dimension.
    pub fn uniform(
        safe_set: Hyperrect,
        state_width: &[f64],
        control_box: Hyperrect,
        control_counts: &[usize],
        initial_set: Hyperrect,
    ) -> Result<Self> {
        let state_grid = Grid::with_width(safe_set, state_width)?;
        let control_grid = Grid::with_counts(control_box, control_counts)?;
        Self::new(state_grid, control_grid, initial_set)
    }

    pub fn safe_set(&self) -> &Hyperrect {
        self.state_grid.region()
    }

    pub fn control_box(&self) -> &Hyperrect {
        self.control_grid.region()
    }

    pub fn initial_set(&self) -> &Hyperrect {
        &self.initial_set
    }

    pub fn state_grid(&self) -> &Grid {
        &self.state_grid
    }

    pub fn control_grid(&self) -> &Grid {
        &self.control_grid
    }

    pub fn num_states(&self) -> usize {
        self.state_grid.len()
    }

    pub fn num_controls(&self) -> usize {
        self.control_grid.len()
    }

    pub fn state_cell(&self, i: usize) -> Hyperrect {
        self.state_grid.cell(i)
    }

    pub fn control_cell(&self, l: usize) -> Hyperrect {
        self.control_grid.cell(l)
    }

    /// `Z_il = X_i x U_l`.
    pub fn joint_cell(&self, i: usize, l: usize) -> Hyperrect {
        self.state_cell(i).product(&self.control_cell(l))
    }

    /// Indices `i` with `X_i ∩ X_0 ≠ ∅` (closed intersection), ascending.
    pub fn initial_cells(&self) -> &[usize] {
        &self.initial_cells
    }

    /// Replace the initial cells, e.g. when probing a single cell for control
    /// invariance.
    pub fn with_initial_cells(&self, cells: Vec<usize>) -> Self {
        let mut out = self.clone();
        out.initial_cells = cells;
        out
    }
}

/// Lowest-index state cell containing `point`.
pub fn locate_cell(partition: &StateControlPartition, point: &[f64]) -> Result<Option<usize>> {
    partition.state_grid.locate(point)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn unit_square() -> Hyperrect {
        Hyperrect::cube(0.0, 1.0, 2).unwrap()
    }

    #[test]
    fn tenth_grid_of_unit_square() {
        let cells = grid_partition(&unit_square(), &[0.1, 0.1]).unwrap();
        assert_eq!(cells.len(), 100);
        for c in &cells {
            assert_abs_diff_eq!(c.width(0), 0.1, epsilon = 1e-12);
            assert_abs_diff_eq!(c.width(1), 0.1, epsilon = 1e-12);
        }
        assert_eq!(cells[0], Hyperrect::new(vec![0.0, 0.0], vec![0.1, 0.1]).unwrap());
        // row-major: second cell advances the last dimension
        assert_abs_diff_eq!(cells[1].lower()[1], 0.1, epsilon = 1e-12);
    }

    #[test]
    fn single_cell_identity() {
        let region = Hyperrect::new(vec![0.0], vec![1.0]).unwrap();
        let cells = grid_partition(&region, &[1.0]).unwrap();
        assert_eq!(cells, vec![region]);
    }

    #[test]
    fn five_equal_control_intervals() {
        let region = Hyperrect::new(vec![0.0], vec![0.5]).unwrap();
        let grid = Grid::with_counts(region, &[5]).unwrap();
        assert_eq!(grid.len(), 5);
        let first = grid.cell(0);
        assert_abs_diff_eq!(first.lower()[0], 0.0);
        assert_abs_diff_eq!(first.upper()[0], 0.1, epsilon = 1e-15);
        for c in grid.cells() {
            assert_abs_diff_eq!(c.width(0), 0.1, epsilon = 1e-12);
        }
    }

    #[test]
    fn remainder_cell_is_narrower() {
        let region = Hyperrect::new(vec![0.0], vec![1.0]).unwrap();
        let cells = grid_partition(&region, &[0.3]).unwrap();
        assert_eq!(cells.len(), 4);
        assert_abs_diff_eq!(cells[3].width(0), 0.1, epsilon = 1e-12);
        assert_eq!(cells[3].upper()[0], 1.0);
    }

    #[test]
    fn nonpositive_width_rejected() {
        assert!(matches!(
            grid_partition(&unit_square(), &[0.0, 0.1]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(grid_partition(&unit_square(), &[-0.1, 0.1]).is_err());
    }

    #[test]
    fn locate_interior_exterior_and_boundary() {
        let grid = Grid::with_width(unit_square(), &[0.1, 0.1]).unwrap();
        let i = grid.locate(&[0.45, 0.45]).unwrap().unwrap();
        let cell = grid.cell(i);
        assert_abs_diff_eq!(cell.lower()[0], 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(cell.upper()[1], 0.5, epsilon = 1e-12);

        assert_eq!(grid.locate(&[1.5, 0.5]).unwrap(), None);

        let b = grid.locate(&[0.1, 0.1]).unwrap().unwrap();
        assert_eq!(b, 0, "boundary point resolves to the lowest-index cell");
        assert_eq!(grid.locate(&[0.1, 0.1]).unwrap(), Some(b));

        assert!(matches!(grid.locate(&[0.1]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn erode_and_dilate_examples() {
        let eroded = unit_square().erode(&[0.1, 0.1]).unwrap().unwrap();
        assert_abs_diff_eq!(eroded.lower()[0], 0.1);
        assert_abs_diff_eq!(eroded.upper()[1], 0.9);

        let thin = Hyperrect::new(vec![0.0], vec![0.1]).unwrap();
        assert_eq!(thin.erode(&[0.2]).unwrap(), None);

        let grown = Hyperrect::new(vec![0.0], vec![1.0]).unwrap().dilate(&[0.05]).unwrap();
        assert_abs_diff_eq!(grown.lower()[0], -0.05);
        assert_abs_diff_eq!(grown.upper()[0], 1.05);

        assert!(unit_square().dilate(&[-0.1, 0.0]).is_err());
    }

    #[test]
    fn initial_cells_use_closed_intersection() {
        let p = StateControlPartition::uniform(
            unit_square(),
            &[0.1, 0.1],
            Hyperrect::new(vec![0.0], vec![0.5]).unwrap(),
            &[5],
            Hyperrect::cube(0.4, 0.5, 2).unwrap(),
        )
        .unwrap();
        // [0.4, 0.5]^2 touches the 3x3 block of cells around it
        assert_eq!(p.initial_cells().len(), 9);
        assert_eq!(p.num_states(), 100);
        assert_eq!(p.num_controls(), 5);
    }

    fn arb_box() -> impl Strategy<Value = Hyperrect> {
        prop::collection::vec((-5.0f64..5.0, 0.0f64..3.0), 1..4).prop_map(|v| {
            let lower = v.iter().map(|(a, _)| *a).collect();
            let upper = v.iter().map(|(a, w)| a + w).collect();
            Hyperrect::new(lower, upper).unwrap()
        })
    }

    proptest! {
        #[test]
        fn every_point_maps_to_exactly_one_owner(
            w0 in 0.05f64..0.6, w1 in 0.05f64..0.6,
            pts in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..50),
        ) {
            let grid = Grid::with_width(unit_square(), &[w0, w1]).unwrap();
            for (x, y) in pts {
                let i = grid.locate(&[x, y]).unwrap();
                prop_assert!(i.is_some());
                let i = i.unwrap();
                prop_assert!(grid.cell(i).contains(&[x, y]));
                for j in 0..i {
                    prop_assert!(!grid.cell(j).contains(&[x, y]));
                }
            }
        }

        #[test]
        fn cell_volumes_sum_to_region(w0 in 0.03f64..0.7, w1 in 0.03f64..0.7) {
            let region = Hyperrect::new(vec![-0.2, 0.3], vec![0.9, 1.4]).unwrap();
            let cells = grid_partition(&region, &[w0, w1]).unwrap();
            let total: f64 = cells.iter().map(Hyperrect::volume).sum();
            prop_assert!((total - region.volume()).abs() <= 1e-9 * region.volume());
        }

        #[test]
        fn erode_dilate_containment(b in arb_box(), m in 0.0f64..1.0) {
            let margin = vec![m; b.dim()];
            let dilated = b.dilate(&margin).unwrap();
            let de = dilated.erode(&margin).unwrap().unwrap();
            if let Some(eroded) = b.erode(&margin).unwrap() {
                let ed = eroded.dilate(&margin).unwrap();
                prop_assert!(expand(&de, 1e-9).contains_box(&ed));
            }
        }
    }

    fn expand(b: &Hyperrect, tol: f64) -> Hyperrect {
        b.dilate(&vec![tol; b.dim()]).unwrap()
    }
}
