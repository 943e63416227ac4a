//! Weighted-blocks environment and world models.
