//! Spatial-affordance toolkit: reasoning-chain parsing, mask scoring,
//! synthetic benchmarks, dataset generation, evaluation, statistics and
//! attention visualization.

pub mod attention;
pub mod cor;
pub mod dataset;
pub mod endpoint;
pub mod eval;
pub mod mask;
pub mod pool;
pub mod raster;
pub mod scene;
pub mod seed;
pub mod stats;
