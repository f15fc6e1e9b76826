//! Decision-boundary grids over the square `[-1, 1]²` of raw inputs.

use anyhow::{ensure, Result};
use cpt_core::{Execution, Node, Prediction, Standardizer, TreeModel};

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub x1: f64,
    pub x2: f64,
    pub leaf: usize,
    pub prediction: Prediction,
    /// Committee probability `f(x)` for each branch, in node order.
    pub split: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub size: usize,
    pub branch_ids: Vec<usize>,
    /// Row-major: cell `(i, j)` sits at `x1 = t_i`, `x2 = t_j`.
    pub cells: Vec<GridCell>,
}

impl Grid {
    pub fn cell(&self, i: usize, j: usize) -> &GridCell {
        &self.cells[i * self.size + j]
    }
}

/// Grid coordinate `i` of `size`, with both endpoints included exactly.
pub fn coordinate(i: usize, size: usize) -> f64 {
    if i + 1 == size {
        1.0
    } else {
        -1.0 + 2.0 * i as f64 / (size - 1) as f64
    }
}

pub fn boundary_grid(tree: &TreeModel, standardizer: &Standardizer, size: usize) -> Result<Grid> {
    ensure!(
        tree.feature_dim() == 2,
        "boundary grids need a 2-feature model, this one has {}",
        tree.feature_dim()
    );
    ensure!(size >= 2, "grid size must be at least 2, got {size}");
    let branch_ids = tree.branch_ids().to_vec();
    let cells = Execution::default().map_indexed(size * size, |k| {
        let (x1, x2) = (coordinate(k / size, size), coordinate(k % size, size));
        let mut x = [x1, x2, 1.0];
        standardizer.transform_row(&mut x[..2]);
        let split = branch_ids
            .iter()
            .map(|&id| match tree.node(id) {
                Node::Branch(b) => b.split_probability(&x),
                Node::Leaf(_) => unreachable!("branch_ids lists branches"),
            })
            .collect::<cpt_core::Result<Vec<f64>>>()?;
        Ok(GridCell {
            x1,
            x2,
            leaf: tree.route_deterministic(&x)?,
            prediction: tree.predict(&x)?,
            split,
        })
    });
    let cells = cells.into_iter().collect::<cpt_core::Result<Vec<_>>>()?;
    Ok(Grid {
        size,
        branch_ids,
        cells,
    })
}
