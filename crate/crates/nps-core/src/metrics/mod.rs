//! Evaluation metrics and report generation.

pub mod ranking;
pub mod report;
pub mod segregation;

pub use ranking::{hits_at_1, mrr, RankingBatch};
pub use segregation::{segregation, SegregationMatrix};
