//! Desk-scale supervised tasks with known ground-truth rules.

pub mod coord;
pub mod grid;
pub mod router;
pub mod train;
