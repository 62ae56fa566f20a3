//! Mesocyclone recognition in SAR imagery: ERA5 candidate detection, SAR
//! preprocessing, augmentation, a compact residual classifier with its own
//! training engine, imbalance-aware sampling and attribution maps.

pub mod augment;
pub mod cyclone;
pub mod error;
pub mod grid;
pub mod interpret;
pub mod nn;
pub mod sampler;
pub mod sar;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use grid::RasterGrid;

/// Sizes the global worker pool used for per-item parallelism. Only the
/// first call has an effect; later calls and builds without the `parallel`
/// feature are no-ops.
pub fn set_worker_threads(n: usize) {
    #[cfg(feature = "parallel")]
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = n;
}
