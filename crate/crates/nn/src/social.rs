//! Binning of neighbors into the cells of the social tensor.

use serde::{Deserialize, Serialize};
use waydcm_core::{InteractionSpace, Point2};

/// Cell layout of the social tensor over the interaction space: `longitudinal`
/// cells from behind to ahead, `lateral` cells from right to left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SocialGrid {
    pub longitudinal: usize,
    pub lateral: usize,
}

impl Default for SocialGrid {
    fn default() -> Self {
        Self {
            longitudinal: 13,
            lateral: 3,
        }
    }
}

/// One occupied cell and the neighbor holding it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OccupiedCell {
    /// `ix · lateral + iy`.
    pub cell: usize,
    pub neighbor: usize,
    pub center: Point2,
}

impl SocialGrid {
    pub fn num_cells(&self) -> usize {
        self.longitudinal * self.lateral
    }

    fn cell_size(&self, space: &InteractionSpace) -> (f64, f64) {
        (
            (space.ahead + space.behind) / self.longitudinal as f64,
            2.0 * space.side / self.lateral as f64,
        )
    }

    /// Cell containing `p`; points on the far edges go to the last cell.
    pub fn cell_of(&self, space: &InteractionSpace, p: Point2) -> (usize, usize) {
        let (lx, ly) = self.cell_size(space);
        let ix = (((p.x + space.behind) / lx).floor().max(0.0) as usize).min(self.longitudinal - 1);
        let iy = (((p.y + space.side) / ly).floor().max(0.0) as usize).min(self.lateral - 1);
        (ix, iy)
    }

    pub fn cell_center(&self, space: &InteractionSpace, ix: usize, iy: usize) -> Point2 {
        let (lx, ly) = self.cell_size(space);
        Point2::new(
            -space.behind + (ix as f64 + 0.5) * lx,
            -space.side + (iy as f64 + 0.5) * ly,
        )
    }

    /// Assigns neighbors (given by their positions) to cells. When several fall
    /// in one cell the one nearest the cell center keeps it, ties to the lower
    /// index. The result is ordered by cell index.
    pub fn occupy(&self, space: &InteractionSpace, positions: &[Point2]) -> Vec<OccupiedCell> {
        let mut cells: Vec<Option<(OccupiedCell, f64)>> = vec![None; self.num_cells()];
        for (j, &p) in positions.iter().enumerate() {
            let (ix, iy) = self.cell_of(space, p);
            let center = self.cell_center(space, ix, iy);
            let d = p.distance(center);
            let slot = &mut cells[ix * self.lateral + iy];
            if slot.is_none_or(|(_, best)| d < best) {
                *slot = Some((
                    OccupiedCell {
                        cell: ix * self.lateral + iy,
                        neighbor: j,
                        center,
                    },
                    d,
                ));
            }
        }
        cells.into_iter().flatten().map(|(c, _)| c).collect()
    }
}
