//! Plant models, operating regions, the cutoff `χ` and the saturated system.

pub mod benchmarks;
pub mod domain;
pub mod saturated;
pub mod system;

pub use benchmarks::{benchmark, BenchmarkSpec, BENCHMARK_NAMES};
pub use domain::{DomainSpec, Margins, Region};
pub use saturated::{cutoff, SaturatedSystem};
pub use system::{sample_collar, sample_region, LipschitzReport, SystemModel};
