//! Lipschitz fields sampled on uniform grids.

pub mod estimates;
pub mod grid;
pub mod io;

pub use estimates::*;
pub use grid::{for_each_index, CellField, Grid, GridField};
